"""Caption synthesis: column selection by distinctness, template rendering.

The selection objective is the number of distinct per-class concatenations
of the chosen columns. Greedy forward selection with a deterministic
lower-index tie-break makes captions reproducible; concatenation always
follows table column order so the result does not depend on the order in
which greedy happened to pick columns.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import DataError
from .hashing import stable_json_dumps
from .metadata import ClassRecord, MetadataTable

_WS_RUN = re.compile(r"\s+")


@dataclass(frozen=True)
class CaptionTemplate:
    prefix: str = "A photo of the "
    separator: str = " "
    suffix: str = ""

    def render(self, values: Sequence[Optional[str]]) -> str:
        text = self.prefix + self.separator.join(v or "" for v in values) + self.suffix
        return _WS_RUN.sub(" ", text).strip()


@dataclass(frozen=True)
class ColumnSelection:
    columns: tuple[str, ...]  # in table column order
    distinctness: int
    table_digest: str


@dataclass(frozen=True)
class CaptionSet:
    captions: dict[int, str]
    selection: ColumnSelection
    template: CaptionTemplate

    def to_json(self) -> str:
        doc = {
            "template": {
                "prefix": self.template.prefix,
                "separator": self.template.separator,
                "suffix": self.template.suffix,
            },
            "columns": list(self.selection.columns),
            "captions": {str(cid): text for cid, text in self.captions.items()},
            "table_digest": self.selection.table_digest,
        }
        return stable_json_dumps(doc)

    @staticmethod
    def from_json(text: str) -> "CaptionSet":
        doc = json.loads(text)
        template = CaptionTemplate(**doc["template"])
        captions = {int(cid): caption for cid, caption in doc["captions"].items()}
        selection = ColumnSelection(
            columns=tuple(doc["columns"]),
            distinctness=len(set(captions.values())),
            table_digest=doc["table_digest"],
        )
        return CaptionSet(captions=captions, selection=selection, template=template)


def _ordered_subset(table: MetadataTable, subset: Sequence[str]) -> list[str]:
    for column in subset:
        if column not in table.column_names:
            raise DataError(f"unknown column {column!r}; table has {list(table.column_names)}")
    wanted = set(subset)
    if len(wanted) != len(subset):
        raise DataError(f"duplicate column in subset {list(subset)}")
    return [c for c in table.column_names if c in wanted]


def _concat(record: ClassRecord, columns: Sequence[str], separator: str) -> str:
    text = separator.join(record.value(c) or "" for c in columns)
    return _WS_RUN.sub(" ", text).strip()


def distinctness_score(
    table: MetadataTable, subset: Sequence[str], separator: str = " "
) -> int:
    """Count distinct per-class concatenations of the subset's values.

    The empty subset scores 1 on any non-empty table (all captions identical).
    """
    columns = _ordered_subset(table, subset)
    return len({_concat(record, columns, separator) for record in table.records})


def _caption_token_count(record: ClassRecord, columns: Sequence[str], template: CaptionTemplate) -> int:
    return len(template.render([record.value(c) for c in columns]).split())


def select_columns(
    table: MetadataTable,
    max_columns: int,
    template: CaptionTemplate = CaptionTemplate(),
    token_budget: int = 64,
) -> ColumnSelection:
    """Greedy forward selection maximizing distinctness.

    Each round adds the column with the largest gain, ties broken by the
    smaller index in table column order. Stops when distinctness reaches
    the class count, no column gains, or max_columns is hit. Columns whose
    inclusion would push any caption past token_budget are skipped.
    """
    if max_columns < 1:
        raise DataError(f"max_columns must be >= 1, got {max_columns}")
    chosen: list[str] = []
    best_score = 1
    while len(chosen) < max_columns and best_score < table.num_classes:
        best_gain = 0
        best_column: Optional[str] = None
        for column in table.column_names:  # table order gives the index tie-break
            if column in chosen:
                continue
            candidate = _ordered_subset(table, [*chosen, column])
            over_budget = any(
                _caption_token_count(r, candidate, template) > token_budget
                for r in table.records
            )
            if over_budget:
                continue
            gain = distinctness_score(table, candidate, template.separator) - best_score
            if gain > best_gain:
                best_gain = gain
                best_column = column
        if best_column is None:
            break
        chosen.append(best_column)
        best_score += best_gain
    columns = tuple(_ordered_subset(table, chosen))
    return ColumnSelection(
        columns=columns, distinctness=best_score, table_digest=table.source_digest
    )


def exhaustive_best_distinctness(
    table: MetadataTable, max_columns: int, separator: str = " "
) -> int:
    """Brute-force maximum distinctness over all subsets of size <= max_columns.

    Test oracle only; exponential in column count.
    """
    best = 1
    for size in range(1, max_columns + 1):
        for subset in itertools.combinations(table.column_names, size):
            best = max(best, distinctness_score(table, subset, separator))
    return best


def render_caption(
    record: ClassRecord, selection: ColumnSelection, template: CaptionTemplate = CaptionTemplate()
) -> str:
    """Render one class's caption from the selected columns."""
    if record.table_digest != selection.table_digest:
        raise DataError(
            f"selection is bound to table {selection.table_digest[:12]}... "
            f"but record {record.class_id} came from {record.table_digest[:12]}..."
        )
    caption = template.render([record.value(c) for c in selection.columns])
    if not caption:
        raise DataError(f"class {record.class_id} renders to an empty caption")
    return caption


def generate_caption_set(
    table: MetadataTable,
    template: CaptionTemplate = CaptionTemplate(),
    max_columns: Optional[int] = None,
    token_budget: int = 64,
    columns: Optional[Sequence[str]] = None,
) -> CaptionSet:
    """Select columns (or take an explicit list), then render one caption per class.

    An explicit `columns` list bypasses greedy selection; greedy stops as soon
    as one column is fully distinct, which cannot reproduce reference caption
    sets that concatenate several individually-distinct columns.
    """
    if columns is not None:
        ordered = _ordered_subset(table, columns)
        selection = ColumnSelection(
            columns=tuple(ordered),
            distinctness=distinctness_score(table, ordered, template.separator),
            table_digest=table.source_digest,
        )
    else:
        if max_columns is None:
            max_columns = len(table.column_names)
        selection = select_columns(table, max_columns, template, token_budget)
    captions = {
        record.class_id: render_caption(record, selection, template)
        for record in table.records
    }
    return CaptionSet(captions=captions, selection=selection, template=template)


def save_caption_set(captions: CaptionSet, path: str | Path) -> None:
    Path(path).write_text(captions.to_json(), encoding="utf-8")


def load_caption_set(path: str | Path) -> CaptionSet:
    return CaptionSet.from_json(Path(path).read_text(encoding="utf-8"))

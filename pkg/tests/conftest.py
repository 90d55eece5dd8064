import pytest

from litforge.captions import generate_caption_set
from litforge.metadata import load_metadata
from litforge.synth import SynthSpec, generate_images, generate_taxonomy
from litforge.trainer import TrainConfig, train

REFERENCE_COLUMNS = ["common_name", "supercategory", "binomial"]

# six-class reference table: (class_id, common name, supercategory, binomial)
REFERENCE_ROWS = [
    (0, "Buff-tailed Coronet", "Birds", "Boissonneaua flavescens"),
    (1, "Common Blue Crab", "Animalia", "Callinectes sapidus"),
    (2, "Imperial Moth", "Insects", "Eacles imperialis"),
    (3, "Oakmoss", "Fungi", "Evernia prunastri"),
    (4, "Pacific Purple Sea Urchin", "Animalia", "Strongylocentrotus purpuratus"),
    (5, "Pine White", "Insects", "Neophasia menapia"),
]

REFERENCE_CAPTIONS = [
    "A photo of the Buff-tailed Coronet Birds Boissonneaua flavescens",
    "A photo of the Common Blue Crab Animalia Callinectes sapidus",
    "A photo of the Imperial Moth Insects Eacles imperialis",
    "A photo of the Oakmoss Fungi Evernia prunastri",
    "A photo of the Pacific Purple Sea Urchin Animalia Strongylocentrotus purpuratus",
    "A photo of the Pine White Insects Neophasia menapia",
]


def reference_csv_text() -> str:
    lines = ["class_id," + ",".join(REFERENCE_COLUMNS)]
    for cid, name, cat, binom in REFERENCE_ROWS:
        lines.append(f"{cid},{name},{cat},{binom}")
    return "\n".join(lines) + "\n"


@pytest.fixture(scope="session")
def reference_table(tmp_path_factory):
    path = tmp_path_factory.mktemp("reference") / "reference.csv"
    path.write_text(reference_csv_text(), encoding="utf-8")
    return load_metadata(path, format="csv")


@pytest.fixture(scope="session")
def reference_csv_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("reference_csv") / "reference.csv"
    path.write_text(reference_csv_text(), encoding="utf-8")
    return path


@pytest.fixture(scope="session")
def synth_corpus():
    """Default desk-scale corpus: table, captions, train and holdout samples."""
    spec = SynthSpec()
    table = generate_taxonomy(spec)
    captions = generate_caption_set(table)
    train_samples, holdout_samples = generate_images(spec, table, captions)
    return spec, table, captions, train_samples, holdout_samples


@pytest.fixture(scope="session")
def trained_state(synth_corpus):
    """One full default training run, shared by the tests that inspect it."""
    _, _, _, train_samples, _ = synth_corpus
    return train(TrainConfig(), train_samples)

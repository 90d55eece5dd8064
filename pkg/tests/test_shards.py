import io
import json
import tarfile

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from litforge.errors import DataError, ShardFormatError
from litforge.shards import (
    Sample,
    ShardSpec,
    load_manifest,
    read_shards,
    save_manifest,
    stream_batches,
    verify_manifest,
    write_shards,
)
from litforge.ustar import BLOCK, decode_archive, encode_archive


def make_samples(n, payload=b"P5\n2 2\n255\n\x00\x01\x02\x03"):
    return [
        Sample(
            key=f"{i:09d}",
            image_bytes=payload,
            caption=f"A photo of the class {i % 7}",
            meta={"class_id": i % 7, "split": "train"},
        )
        for i in range(n)
    ]


# --- ustar layer ------------------------------------------------------------


def test_archive_readable_by_stdlib_tar(tmp_path):
    blob = encode_archive([("000000001.txt", b"hello"), ("000000001.json", b"{}")])
    path = tmp_path / "t.tar"
    path.write_bytes(blob)
    with tarfile.open(path) as tf:
        names = tf.getnames()
        assert names == ["000000001.txt", "000000001.json"]
        assert tf.extractfile("000000001.txt").read() == b"hello"


@settings(max_examples=30, deadline=None)
@given(payloads=st.lists(st.binary(min_size=1, max_size=100_000), min_size=1, max_size=5))
def test_ustar_round_trip_arbitrary_bytes(payloads):
    members = [(f"{i:09d}.bin", p) for i, p in enumerate(payloads)]
    blob = encode_archive(members)
    assert list(decode_archive(blob)) == members
    assert len(blob) % BLOCK == 0


def test_checksum_corruption_detected_with_offset():
    blob = bytearray(encode_archive([("000000000.txt", b"x" * 600)]))
    # flip a byte inside the second member's header (offset 0 header + 2 data blocks)
    second_header = BLOCK * 3
    blob2 = bytearray(encode_archive([("000000000.txt", b"x" * 600), ("000000001.txt", b"y")]))
    blob2[second_header] ^= 0xFF
    with pytest.raises(ShardFormatError, match=f"offset {second_header}"):
        list(decode_archive(bytes(blob2)))


def test_truncated_archive_detected():
    blob = encode_archive([("000000000.txt", b"data")])
    with pytest.raises(ShardFormatError, match="truncated|missing second"):
        list(decode_archive(blob[: len(blob) - BLOCK - 1]))


# --- shard writing ----------------------------------------------------------


def test_single_shard_member_layout(tmp_path):
    samples = make_samples(6)
    spec = ShardSpec(samples_per_shard=6)
    manifest = write_shards(samples, spec, tmp_path)
    assert len(manifest.shards) == 1
    with tarfile.open(manifest.shard_path(manifest.shards[0])) as tf:
        names = tf.getnames()
    assert len(names) == 18
    # three members per key in fixed extension order
    for i in range(6):
        assert names[3 * i : 3 * i + 3] == [
            f"{i:09d}.pgm",
            f"{i:09d}.txt",
            f"{i:09d}.json",
        ]


def test_empty_dataset_is_error(tmp_path):
    with pytest.raises(DataError, match="empty"):
        write_shards([], ShardSpec(), tmp_path)


def test_shard_partition_counts(tmp_path):
    manifest = write_shards(make_samples(100), ShardSpec(samples_per_shard=32), tmp_path)
    assert [s.count for s in manifest.shards] == [32, 32, 32, 4]
    assert manifest.total_samples == 100


def test_duplicate_key_rejected(tmp_path):
    samples = make_samples(2)
    samples[1] = Sample(key=samples[0].key, image_bytes=b"x", caption="c", meta={})
    with pytest.raises(DataError, match="duplicate"):
        write_shards(samples, ShardSpec(), tmp_path)


def test_write_deterministic(tmp_path):
    m1 = write_shards(make_samples(40), ShardSpec(samples_per_shard=16), tmp_path / "a")
    m2 = write_shards(make_samples(40), ShardSpec(samples_per_shard=16), tmp_path / "b")
    assert [s.digest for s in m1.shards] == [s.digest for s in m2.shards]


def test_shuffle_seed_changes_order_deterministically(tmp_path):
    base = [s.digest for s in write_shards(make_samples(40), ShardSpec(samples_per_shard=16), tmp_path / "p").shards]
    s1 = [s.digest for s in write_shards(make_samples(40), ShardSpec(samples_per_shard=16, shuffle_seed=7), tmp_path / "q").shards]
    s2 = [s.digest for s in write_shards(make_samples(40), ShardSpec(samples_per_shard=16, shuffle_seed=7), tmp_path / "r").shards]
    assert s1 == s2
    assert s1 != base


# --- reading ----------------------------------------------------------------


def test_round_trip(tmp_path):
    samples = make_samples(25)
    manifest = write_shards(samples, ShardSpec(samples_per_shard=8), tmp_path)
    assert read_shards(tmp_path) == samples


def test_round_trip_via_manifest(tmp_path):
    samples = make_samples(10)
    manifest = write_shards(
        samples, ShardSpec(samples_per_shard=4), tmp_path / "shards", manifest_base=tmp_path
    )
    assert all(e.path.startswith("shards") for e in manifest.shards)
    save_manifest(manifest, tmp_path / "manifest.json")
    assert read_shards(tmp_path / "manifest.json") == samples


def test_orphan_member_detected(tmp_path):
    # build a shard missing the .txt member by hand
    blob = encode_archive(
        [("000000000.pgm", b"img"), ("000000000.json", b"{\"class_id\": 0}")]
    )
    (tmp_path / "shard-000000.tar").write_bytes(blob)
    with pytest.raises(ShardFormatError, match="000000000"):
        read_shards(tmp_path)


# --- manifest verification --------------------------------------------------


def test_verify_untouched_output(tmp_path):
    manifest = write_shards(make_samples(20), ShardSpec(samples_per_shard=8), tmp_path)
    assert verify_manifest(manifest) == []


def test_verify_truncation_flagged(tmp_path):
    manifest = write_shards(make_samples(20), ShardSpec(samples_per_shard=8), tmp_path)
    path = manifest.shard_path(manifest.shards[0])
    blob = open(path, "rb").read()
    open(path, "wb").write(blob[:-512])
    kinds = {f.kind for f in verify_manifest(manifest)}
    assert kinds == {"size_mismatch", "digest_mismatch"}


def test_verify_missing_file(tmp_path):
    manifest = write_shards(make_samples(20), ShardSpec(samples_per_shard=8), tmp_path)
    import os

    os.unlink(manifest.shard_path(manifest.shards[1]))
    findings = verify_manifest(manifest)
    assert [f.kind for f in findings] == ["missing_file"]
    assert findings[0].path == manifest.shards[1].path


def test_manifest_json_round_trip(tmp_path):
    manifest = write_shards(make_samples(10), ShardSpec(samples_per_shard=4), tmp_path)
    save_manifest(manifest, tmp_path / "m.json")
    assert load_manifest(tmp_path / "m.json") == manifest


# --- batch streaming --------------------------------------------------------


def test_stream_batches_drops_short_batch():
    samples = make_samples(100)
    batches = list(stream_batches(samples, batch_size=32, epoch_seed=0))
    assert len(batches) == 3
    assert all(len(b) == 32 for b in batches)


def test_stream_batches_deterministic():
    samples = make_samples(50)
    a = [[s.key for s in b] for b in stream_batches(samples, 16, epoch_seed=3)]
    b = [[s.key for s in b] for b in stream_batches(samples, 16, epoch_seed=3)]
    assert a == b


def test_stream_batches_singletons():
    samples = make_samples(100)
    batches = list(stream_batches(samples, 1, epoch_seed=0))
    assert len(batches) == 100


def test_stream_batch_union_covers_sample_set():
    samples = make_samples(64)
    keys = set()
    for batch in stream_batches(samples, 16, epoch_seed=9):
        keys.update(s.key for s in batch)
    assert keys == {s.key for s in samples}

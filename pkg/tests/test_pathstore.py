import math
import struct

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from twinpath import load_fixture
from twinpath.pathstore import (
    DATA_MAGIC,
    DATA_NAME,
    HEADER_SIZE,
    INDEX_MAGIC,
    INDEX_NAME,
    CorruptRecord,
    PathStore,
    PathStoreError,
    PathStoreReader,
    counting_opener,
    read_path,
)
from twinpath.traversal import canonical_bytes, run_traversal

M1 = load_fixture("model1")


def model1_paths():
    out = []
    run_traversal(M1, M1.scenario(), out.append)
    return out


def write(directory, items, buffer_size=1 << 20):
    ops = {}
    with PathStore(directory, buffer_size=buffer_size, opener=counting_opener(ops)) as store:
        store.append_paths(items)
    return store.close(), ops


def test_offsets_are_cumulative(tmp_path):
    summary, _ = write(tmp_path, [b"a" * 100, b"b" * 250])
    with PathStoreReader(tmp_path) as r:
        assert r.offsets == [HEADER_SIZE, HEADER_SIZE + 104]
        assert r.record(1) == b"b" * 250
    assert summary.count == 2
    assert summary.bytes == HEADER_SIZE + 104 + 254


def test_headers_are_magic_plus_version(tmp_path):
    write(tmp_path, [])
    data = (tmp_path / DATA_NAME).read_bytes()
    idx = (tmp_path / INDEX_NAME).read_bytes()
    assert data == DATA_MAGIC + struct.pack(">I", 1)
    assert idx == INDEX_MAGIC + struct.pack(">I", 1)


def test_record_larger_than_buffer(tmp_path):
    big = bytes(range(256)) * 40  # 10,240 bytes against a 1 KiB buffer
    summary, ops = write(tmp_path, [b"x", big, b"y"], buffer_size=1024)
    with PathStoreReader(tmp_path) as r:
        assert list(r) == [b"x", big, b"y"]
    assert ops[DATA_NAME].write_ops <= math.ceil(summary.bytes / 1024) + 2


def test_zero_paths_is_a_valid_empty_store(tmp_path):
    summary, _ = write(tmp_path, [])
    assert summary.count == 0
    with PathStoreReader(tmp_path) as r:
        assert len(r) == 0 and list(r) == []


def test_close_twice_is_a_no_op(tmp_path):
    store = PathStore(tmp_path, buffer_size=4096)
    store.append_paths([b"{}"])
    first = store.close()
    assert store.close() is first
    with pytest.raises(PathStoreError):
        store.append_paths([b"{}"])


def test_model1_paths_round_trip(tmp_path):
    paths = model1_paths()
    summary, _ = write(tmp_path, paths, buffer_size=2048)
    assert summary.count == 65
    with PathStoreReader(tmp_path) as r:
        for i, p in enumerate(paths):
            assert r.record(i) == canonical_bytes(p)
            assert canonical_bytes(r.path(i, M1)) == canonical_bytes(p)
    assert canonical_bytes(read_path(tmp_path, 64, M1)) == canonical_bytes(paths[64])


def test_out_of_range(tmp_path):
    write(tmp_path, [b"{}", b"[]"])
    with PathStoreReader(tmp_path) as r:
        with pytest.raises(IndexError):
            r.record(2)
        with pytest.raises(IndexError):
            r.record(-1)


def test_truncated_data_file(tmp_path):
    write(tmp_path, [b"a" * 50, b"b" * 50])
    data = tmp_path / DATA_NAME
    data.write_bytes(data.read_bytes()[:-10])
    with PathStoreReader(tmp_path) as r:
        assert r.record(0) == b"a" * 50
        with pytest.raises(CorruptRecord):
            r.record(1)


def test_length_disagreeing_with_index(tmp_path):
    write(tmp_path, [b"a" * 50, b"b" * 50])
    data = tmp_path / DATA_NAME
    raw = bytearray(data.read_bytes())
    raw[HEADER_SIZE : HEADER_SIZE + 4] = struct.pack(">I", 40)
    data.write_bytes(bytes(raw))
    with PathStoreReader(tmp_path) as r:
        with pytest.raises(CorruptRecord):
            r.record(0)


def test_bad_headers_and_json(tmp_path):
    write(tmp_path, [b"not json"])
    with PathStoreReader(tmp_path) as r:
        with pytest.raises(CorruptRecord):
            r.doc(0)
    (tmp_path / INDEX_NAME).write_bytes(b"garbage!garbage!")
    with pytest.raises(CorruptRecord):
        PathStoreReader(tmp_path)


def test_buffer_must_hold_a_header(tmp_path):
    with pytest.raises(ValueError):
        PathStore(tmp_path, buffer_size=4)


class FailingFile:
    def __init__(self):
        self.closed = False

    def write(self, data):
        raise OSError(28, "No space left on device")

    def flush(self):
        pass

    def fileno(self):
        raise OSError("no descriptor")

    def close(self):
        self.closed = True


def test_disk_full_is_propagated(tmp_path):
    store = PathStore(tmp_path, buffer_size=64, opener=lambda p, m: FailingFile())
    store.append_paths([b"x" * 100])
    with pytest.raises(PathStoreError, match="No space"):
        store.close()


@settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(st.lists(st.binary(max_size=300), max_size=60), st.integers(HEADER_SIZE, 2000))
def test_round_trip_and_chunking_property(tmp_path_factory, records, buffer_size):
    d = tmp_path_factory.mktemp("store")
    summary, ops = write(d, records, buffer_size=buffer_size)
    with PathStoreReader(d) as r:
        assert list(r) == records
        assert all(a < b for a, b in zip(r.offsets, r.offsets[1:]))
        assert len(r.offsets) == len(records)
    assert summary.bytes == HEADER_SIZE + sum(4 + len(x) for x in records)
    assert ops[DATA_NAME].write_ops <= math.ceil(summary.bytes / buffer_size) + 2
    assert ops[DATA_NAME].bytes_written == summary.bytes

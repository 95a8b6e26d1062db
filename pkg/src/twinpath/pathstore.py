"""Chunk-buffered storage of final paths plus an offset index.

``paths.dat``: 8-byte magic, 4-byte big-endian version, then records. Each
record is a 4-byte big-endian length followed by the canonical JSON of one path.

``paths.idx``: 8-byte magic, 4-byte big-endian version, then one 8-byte
big-endian offset per record, pointing at the record's length field.

Writing is a two-stage pipeline. A copying thread serializes incoming paths
into a large buffer; whenever the buffer fills, it hands a snapshot to a
bounded queue drained by a single writing thread, which is the only code that
touches the files.
"""

from __future__ import annotations

import json
import os
import queue
import struct
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Any, Callable, Iterable, Iterator

from .model import Network
from .traversal import PathFormatError, RealityPath, canonical_bytes, path_from_doc

DATA_MAGIC = b"TWPDATA\x00"
INDEX_MAGIC = b"TWPIDX\x00\x00"
FORMAT_VERSION = 1
HEADER_SIZE = 12
DEFAULT_BUFFER_SIZE = 64 * 1024 * 1024
DATA_NAME = "paths.dat"
INDEX_NAME = "paths.idx"

_U32 = struct.Struct(">I")
_U64 = struct.Struct(">Q")
_CLOSE = object()

Opener = Callable[[Path, str], IO[bytes]]


class PathStoreError(Exception):
    pass


class CorruptRecord(PathStoreError):
    pass


class CountingFile:
    """File wrapper that counts ``write`` calls; used to check chunking."""

    def __init__(self, raw: IO[bytes]) -> None:
        self.raw = raw
        self.write_ops = 0
        self.bytes_written = 0

    def write(self, data: bytes) -> int:
        self.write_ops += 1
        self.bytes_written += len(data)
        return self.raw.write(data)

    def flush(self) -> None:
        self.raw.flush()

    def fileno(self) -> int:
        return self.raw.fileno()

    def close(self) -> None:
        self.raw.close()


def counting_opener(registry: dict[str, CountingFile]) -> Opener:
    def opener(path: Path, mode: str) -> IO[bytes]:
        f = CountingFile(open(path, mode))
        registry[path.name] = f
        return f  # type: ignore[return-value]

    return opener


def _header(magic: bytes) -> bytes:
    return magic + _U32.pack(FORMAT_VERSION)


@dataclass
class StoreSummary:
    count: int
    bytes: int
    data_file: str
    index_file: str

    def to_dict(self) -> dict[str, Any]:
        return {"count": self.count, "bytes": self.bytes, "data_file": self.data_file, "index_file": self.index_file}


class PathStore:
    """Writer side. ``append_paths`` may be called from any thread until ``close``."""

    def __init__(
        self,
        directory: str | os.PathLike,
        *,
        buffer_size: int = DEFAULT_BUFFER_SIZE,
        opener: Opener | None = None,
        queue_depth: int = 2,
    ) -> None:
        if buffer_size < HEADER_SIZE:
            raise ValueError(f"buffer_size must be at least {HEADER_SIZE}")
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.data_path = self.directory / DATA_NAME
        self.index_path = self.directory / INDEX_NAME
        self.buffer_size = buffer_size
        open_ = opener or (lambda p, m: open(p, m))
        self._data = open_(self.data_path, "wb")
        self._index = open_(self.index_path, "wb")
        self._incoming: queue.Queue = queue.Queue()
        self._chunks: queue.Queue = queue.Queue(maxsize=queue_depth)
        self._error: BaseException | None = None
        self._summary: StoreSummary | None = None
        self._lock = threading.Lock()
        self.count = 0
        self._copier = threading.Thread(target=self._copy_loop, name="pathstore-copy", daemon=True)
        self._writer = threading.Thread(target=self._write_loop, name="pathstore-write", daemon=True)
        self._copier.start()
        self._writer.start()

    # stage 1: copying element
    def _copy_loop(self) -> None:
        buf = bytearray(_header(DATA_MAGIC))
        idx = bytearray(_header(INDEX_MAGIC))
        offset = HEADER_SIZE
        size = self.buffer_size
        try:
            while True:
                item = self._incoming.get()
                if item is _CLOSE:
                    break
                payload = item if isinstance(item, (bytes, bytearray)) else canonical_bytes(item)
                record = _U32.pack(len(payload)) + payload
                idx += _U64.pack(offset)
                offset += len(record)
                self.count += 1
                # Chunks are always exactly buffer_size bytes except the last,
                # so a record that does not fit is split across the boundary.
                view = memoryview(record)
                while len(buf) + len(view) >= size:
                    take = size - len(buf)
                    buf += view[:take]
                    view = view[take:]
                    self._chunks.put((bytes(buf), bytes(idx)))
                    buf.clear()
                    idx.clear()
                buf += view
        except BaseException as exc:  # surfaced from close()
            self._error = exc
        finally:
            if buf or idx:
                self._chunks.put((bytes(buf), bytes(idx)))
            self._chunks.put(_CLOSE)

    # stage 2: writing element
    def _write_loop(self) -> None:
        while True:
            item = self._chunks.get()
            if item is _CLOSE:
                return
            if self._error is not None:
                continue
            data, idx = item
            try:
                if data:
                    self._data.write(data)
                if idx:
                    self._index.write(idx)
            except BaseException as exc:
                self._error = exc

    def append_paths(self, paths: Iterable[RealityPath | bytes]) -> None:
        """Queue paths (or their canonical bytes) for writing, in order."""
        if self._summary is not None:
            raise PathStoreError("store is closed")
        if self._error is not None:
            raise PathStoreError(f"writer failed: {self._error}") from self._error
        for p in paths:
            self._incoming.put(p)

    def close(self) -> StoreSummary:
        with self._lock:
            if self._summary is not None:
                return self._summary
            self._incoming.put(_CLOSE)
            self._copier.join()
            self._writer.join()
            try:
                if self._error is None:
                    for f in (self._data, self._index):
                        f.flush()
                        os.fsync(f.fileno())
            finally:
                self._data.close()
                self._index.close()
            if self._error is not None:
                raise PathStoreError(f"writing paths failed: {self._error}") from self._error
            self._summary = StoreSummary(
                self.count, self.data_path.stat().st_size, str(self.data_path), str(self.index_path)
            )
            return self._summary

    def __enter__(self) -> PathStore:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


class PathStoreReader:
    """Random access to a closed store."""

    def __init__(self, directory: str | os.PathLike) -> None:
        self.directory = Path(directory)
        data_path = self.directory / DATA_NAME
        index_path = self.directory / INDEX_NAME
        raw_idx = index_path.read_bytes()
        if raw_idx[:HEADER_SIZE] != _header(INDEX_MAGIC):
            raise CorruptRecord(f"{index_path}: bad header")
        body = raw_idx[HEADER_SIZE:]
        if len(body) % 8:
            raise CorruptRecord(f"{index_path}: truncated index entry")
        self.offsets = [o for (o,) in _U64.iter_unpack(body)]
        self._data = open(data_path, "rb")
        if self._data.read(HEADER_SIZE) != _header(DATA_MAGIC):
            self._data.close()
            raise CorruptRecord(f"{data_path}: bad header")
        self._data_size = os.fstat(self._data.fileno()).st_size

    def __len__(self) -> int:
        return len(self.offsets)

    def record(self, i: int) -> bytes:
        if not 0 <= i < len(self.offsets):
            raise IndexError(f"path index {i} out of range 0..{len(self.offsets) - 1}")
        off = self.offsets[i]
        self._data.seek(off)
        head = self._data.read(4)
        if len(head) != 4:
            raise CorruptRecord(f"record {i}: length field past end of file")
        (n,) = _U32.unpack(head)
        if off + 4 + n > self._data_size:
            raise CorruptRecord(f"record {i}: length {n} runs past end of file")
        payload = self._data.read(n)
        nxt = self.offsets[i + 1] if i + 1 < len(self.offsets) else None
        if nxt is not None and nxt != off + 4 + n:
            raise CorruptRecord(f"record {i}: length {n} disagrees with index")
        return payload

    def doc(self, i: int) -> dict:
        try:
            return json.loads(self.record(i))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptRecord(f"record {i}: {exc}") from None

    def path(self, i: int, net: Network | None = None) -> RealityPath:
        try:
            return path_from_doc(self.doc(i), net)
        except PathFormatError as exc:
            raise CorruptRecord(f"record {i}: {exc}") from None

    def __iter__(self) -> Iterator[bytes]:
        for i in range(len(self)):
            yield self.record(i)

    def close(self) -> None:
        self._data.close()

    def __enter__(self) -> PathStoreReader:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def read_path(directory: str | os.PathLike, i: int, net: Network | None = None) -> RealityPath:
    with PathStoreReader(directory) as r:
        return r.path(i, net)

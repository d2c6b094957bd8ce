"""Instrumented file I/O with byte and operation counters.

Every on-disk structure in this package (tiled sparse matrices, TAS dense
matrices) performs its reads and writes through a :class:`CountedFile`, so
tests and the CLI can account for exactly how many bytes crossed the storage
boundary.  Counters are monotonically nondecreasing; deltas are taken with
:meth:`IoCounters.snapshot`.
"""

from __future__ import annotations

import os
import threading
from dataclasses import dataclass


@dataclass
class IoSnapshot:
    bytes_read: int = 0
    bytes_written: int = 0
    read_ops: int = 0
    write_ops: int = 0


class IoCounters:
    """Thread-safe monotone counters for one file (or an aggregate)."""

    __slots__ = ("_lock", "bytes_read", "bytes_written", "read_ops", "write_ops")

    def __init__(self):
        self._lock = threading.Lock()
        self.bytes_read = 0
        self.bytes_written = 0
        self.read_ops = 0
        self.write_ops = 0

    def add_read(self, nbytes: int) -> None:
        with self._lock:
            self.bytes_read += nbytes
            self.read_ops += 1

    def add_write(self, nbytes: int) -> None:
        with self._lock:
            self.bytes_written += nbytes
            self.write_ops += 1

    def snapshot(self) -> IoSnapshot:
        with self._lock:
            return IoSnapshot(
                self.bytes_read, self.bytes_written, self.read_ops, self.write_ops
            )

    def as_dict(self) -> dict[str, int]:
        s = self.snapshot()
        return {
            "bytes_read": s.bytes_read,
            "bytes_written": s.bytes_written,
            "read_ops": s.read_ops,
            "write_ops": s.write_ops,
        }


# Process-wide aggregate over every CountedFile.
_GLOBAL = IoCounters()


def global_io_counters() -> IoCounters:
    return _GLOBAL


class CountedFile:
    """Positioned read/write wrapper around an OS file descriptor.

    All access is via pread/pwrite so concurrent readers never share a file
    offset.  Each operation is charged to the file's own counters and to the
    process-wide aggregate.
    """

    def __init__(self, path, mode: str = "r"):
        self.path = os.fspath(path)
        if mode == "r":
            flags = os.O_RDONLY
        elif mode == "r+":
            flags = os.O_RDWR
        elif mode == "w+":
            flags = os.O_RDWR | os.O_CREAT | os.O_TRUNC
        else:
            raise ValueError(f"unsupported mode {mode!r}")
        self._fd = os.open(self.path, flags, 0o644)
        self.io = IoCounters()

    def pread(self, offset: int, size: int) -> bytes:
        data = os.pread(self._fd, size, offset)
        self.io.add_read(len(data))
        _GLOBAL.add_read(len(data))
        return data

    def pread_into(self, offset: int, buf) -> int:
        """Read len(buf) bytes at offset into a writable buffer."""
        nread = os.preadv(self._fd, [buf], offset)
        self.io.add_read(nread)
        _GLOBAL.add_read(nread)
        return nread

    def pwrite(self, offset: int, data) -> int:
        nwritten = os.pwrite(self._fd, data, offset)
        self.io.add_write(nwritten)
        _GLOBAL.add_write(nwritten)
        return nwritten

    def truncate(self, size: int) -> None:
        os.ftruncate(self._fd, size)

    def size(self) -> int:
        return os.fstat(self._fd).st_size

    def close(self) -> None:
        if self._fd >= 0:
            os.close(self._fd)
            self._fd = -1

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except OSError:
            pass

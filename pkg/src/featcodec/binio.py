"""Little-endian binary readers and writers for the container formats.

All multi-byte integers and floats in the serialized formats are
little-endian. ByteReader tracks its position so that parse failures can
report the exact byte offset; ByteWriter is a thin append-only builder.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .errors import FormatError


class ByteReader:
    """Sequential reader over an in-memory byte string."""

    def __init__(self, data: bytes, source: str = ""):
        self._data = data
        self._pos = 0
        self.source = source

    @property
    def offset(self) -> int:
        return self._pos

    def remaining(self) -> int:
        return len(self._data) - self._pos

    def fail(self, message: str) -> FormatError:
        return FormatError(message, offset=self._pos, source=self.source)

    def read(self, n: int, what: str = "data") -> bytes:
        if self.remaining() < n:
            raise FormatError(
                f"truncated file: expected {n} bytes of {what}, "
                f"found {self.remaining()}",
                offset=self._pos,
                source=self.source,
            )
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def expect_magic(self, magic: bytes) -> None:
        got = self.read(len(magic), "magic")
        if got != magic:
            raise FormatError(
                f"bad magic {got!r}, expected {magic!r}",
                offset=0,
                source=self.source,
            )

    def expect_end(self) -> None:
        if self.remaining() != 0:
            raise self.fail(f"{self.remaining()} unexpected trailing bytes")

    def _unpack(self, fmt: str, what: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.read(size, what))[0]

    def u8(self, what: str = "u8") -> int:
        return self._unpack("<B", what)

    def u16(self, what: str = "u16") -> int:
        return self._unpack("<H", what)

    def i16(self, what: str = "i16") -> int:
        return self._unpack("<h", what)

    def u32(self, what: str = "u32") -> int:
        return self._unpack("<I", what)

    def u64(self, what: str = "u64") -> int:
        return self._unpack("<Q", what)

    def f64(self, what: str = "f64") -> float:
        return self._unpack("<d", what)

    def short_str(self, what: str = "string") -> str:
        """Read a length-prefixed (u8) UTF-8 string."""
        n = self.u8(f"{what} length")
        raw = self.read(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(
                f"invalid UTF-8 in {what}: {exc}",
                offset=self._pos - n,
                source=self.source,
            ) from None

    def array_f64(self, shape: tuple[int, ...], what: str = "array") -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        raw = self.read(8 * count, what)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)

    def array_f32(self, shape: tuple[int, ...], what: str = "array") -> np.ndarray:
        count = int(np.prod(shape)) if shape else 1
        raw = self.read(4 * count, what)
        return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()

    def array_u32(self, count: int, what: str = "array") -> np.ndarray:
        raw = self.read(4 * count, what)
        return np.frombuffer(raw, dtype="<u4").copy()


class ByteWriter:
    """Append-only builder for the binary containers."""

    def __init__(self):
        self._parts: list[bytes] = []

    def getvalue(self) -> bytes:
        return b"".join(self._parts)

    def raw(self, data: bytes) -> None:
        self._parts.append(bytes(data))

    def u8(self, v: int) -> None:
        self._parts.append(struct.pack("<B", v))

    def u16(self, v: int) -> None:
        self._parts.append(struct.pack("<H", v))

    def i16(self, v: int) -> None:
        self._parts.append(struct.pack("<h", v))

    def u32(self, v: int) -> None:
        self._parts.append(struct.pack("<I", v))

    def u64(self, v: int) -> None:
        self._parts.append(struct.pack("<Q", v))

    def f64(self, v: float) -> None:
        self._parts.append(struct.pack("<d", v))

    def short_str(self, s: str) -> None:
        raw = s.encode("utf-8")
        if len(raw) > 255:
            raise ValueError(f"string too long for u8 length prefix: {len(raw)} bytes")
        self.u8(len(raw))
        self._parts.append(raw)

    def array_f64(self, a: np.ndarray) -> None:
        self._parts.append(np.ascontiguousarray(a, dtype="<f8").tobytes())

    def array_f32(self, a: np.ndarray) -> None:
        self._parts.append(np.ascontiguousarray(a, dtype="<f4").tobytes())

    def array_u32(self, a: np.ndarray) -> None:
        self._parts.append(np.ascontiguousarray(a, dtype="<u4").tobytes())


def atomic_write_bytes(path: str, data: bytes) -> None:
    """Write a file via a temp sibling and rename, so a failed run never
    leaves a partial file at the target path."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))

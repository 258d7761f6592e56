"""Little-endian binary container helpers shared by the key and model files.

Every container is: 4-byte magic, payload, CRC32 (of everything before the
checksum) as the last 4 bytes. Parse failures map to distinct error types so
callers can tell a wrong file from a damaged one.
"""

from __future__ import annotations

import struct
import zlib

from .errors import BadMagicError, BadVersionError, ChecksumError, FormatError, TruncatedFileError


class ByteWriter:
    def __init__(self):
        self._parts: list[bytes] = []

    def raw(self, data: bytes) -> None:
        self._parts.append(bytes(data))

    def u8(self, v: int) -> None:
        self._parts.append(struct.pack("<B", v))

    def u16(self, v: int) -> None:
        self._parts.append(struct.pack("<H", v))

    def u32(self, v: int) -> None:
        self._parts.append(struct.pack("<I", v))

    def u64(self, v: int) -> None:
        self._parts.append(struct.pack("<Q", v))

    def f64(self, v: float) -> None:
        self._parts.append(struct.pack("<d", v))

    def text(self, s: str) -> None:
        """Length-prefixed (u16) UTF-8 string."""
        data = s.encode("utf-8")
        if len(data) > 0xFFFF:
            raise FormatError(f"string field of {len(data)} bytes exceeds the u16 length prefix")
        self.u16(len(data))
        self.raw(data)

    def getvalue(self) -> bytes:
        return b"".join(self._parts)


class ByteReader:
    """Bounds-checked cursor; running past the end raises TruncatedFileError."""

    def __init__(self, data: bytes, label: str = "container"):
        self._data = data
        self._pos = 0
        self._label = label

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise TruncatedFileError(
                f"{self._label}: needed {n} more bytes at offset {self._pos}, "
                f"only {len(self._data) - self._pos} remain")
        out = self._data[self._pos:self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def text(self) -> str:
        n = self.u16()
        return self.take(n).decode("utf-8")

    def exhausted(self) -> bool:
        return self._pos == len(self._data)

    def remaining(self) -> int:
        return len(self._data) - self._pos


def seal(magic: bytes, payload: bytes) -> bytes:
    """magic + payload + CRC32 footer."""
    if len(magic) != 4:
        raise FormatError("magic must be exactly 4 bytes")
    body = magic + payload
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def open_sealed(raw: bytes, magic: bytes, label: str) -> ByteReader:
    """Validate magic and checksum, return a reader over the payload.

    Error precedence: too short for a magic -> TruncatedFileError; wrong
    magic -> BadMagicError; otherwise too short for the footer ->
    TruncatedFileError; checksum mismatch -> ChecksumError.
    """
    if len(raw) < 4:
        raise TruncatedFileError(f"{label}: {len(raw)} bytes is too short to hold a file signature")
    if raw[:4] != magic:
        raise BadMagicError(f"{label}: bad signature {raw[:4]!r}, expected {magic!r}")
    if len(raw) < 8:
        raise TruncatedFileError(f"{label}: no room for the checksum footer")
    stored = struct.unpack("<I", raw[-4:])[0]
    actual = zlib.crc32(raw[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise ChecksumError(f"{label}: checksum mismatch (stored {stored:#010x}, computed {actual:#010x})")
    return ByteReader(raw[4:-4], label)


def check_version(found: int, expected: int, label: str) -> None:
    if found != expected:
        raise BadVersionError(f"{label}: format version {found} is not supported (expected {expected})")


def finish_reader(reader: ByteReader, label: str) -> None:
    if not reader.exhausted():
        raise FormatError(f"{label}: {reader.remaining()} unexpected trailing bytes before the checksum")

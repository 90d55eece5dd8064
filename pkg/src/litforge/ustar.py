"""Minimal POSIX ustar encoder/decoder.

Writes plain ustar (no pax/GNU extensions): 512-byte headers, octal size
fields, checksum computed with the checksum field space-filled, file data
zero-padded to a 512-byte boundary, and two zero blocks terminating the
archive. Member names are short by construction (sample keys), so the
100-byte name field always suffices.

The decoder validates header checksums and archive termination; corruption
is reported with the byte offset of the offending header.
"""

from __future__ import annotations

from typing import Iterator

from .errors import ShardFormatError

BLOCK = 512
MAX_MEMBER_SIZE = 0o77777777777  # 11 octal digits, the ustar size field limit

_ZERO_BLOCK = b"\0" * BLOCK


def _octal(value: int, width: int) -> bytes:
    # width includes the trailing NUL terminator
    return b"%0*o\0" % (width - 1, value)


def encode_member(name: str, data: bytes) -> bytes:
    """One ustar member: header block plus data padded to 512 bytes."""
    name_bytes = name.encode("utf-8")
    if len(name_bytes) > 100:
        raise ShardFormatError(f"member name too long for ustar: {name!r}")
    if len(data) > MAX_MEMBER_SIZE:
        raise ShardFormatError(f"member {name!r} exceeds the ustar size field capacity")
    header = bytearray(BLOCK)
    header[0:len(name_bytes)] = name_bytes
    header[100:108] = _octal(0o644, 8)  # mode
    header[108:116] = _octal(0, 8)  # uid
    header[116:124] = _octal(0, 8)  # gid
    header[124:136] = _octal(len(data), 12)  # size
    header[136:148] = _octal(0, 12)  # mtime, fixed for determinism
    header[148:156] = b" " * 8  # checksum space-filled for the computation
    header[156:157] = b"0"  # typeflag: regular file
    header[257:263] = b"ustar\0"  # magic
    header[263:265] = b"00"  # version
    checksum = sum(header)
    header[148:156] = b"%06o\0 " % checksum
    padding = (-len(data)) % BLOCK
    return bytes(header) + data + b"\0" * padding


def encode_archive(members: list[tuple[str, bytes]]) -> bytes:
    parts = [encode_member(name, data) for name, data in members]
    parts.append(_ZERO_BLOCK * 2)
    return b"".join(parts)


def decode_archive(archive: bytes, source: str = "<archive>") -> Iterator[tuple[str, bytes]]:
    """Yield (name, data) members, validating checksums and termination."""
    offset = 0
    while True:
        header = archive[offset : offset + BLOCK]
        if len(header) < BLOCK:
            raise ShardFormatError(f"{source}: truncated archive at offset {offset}")
        if header == _ZERO_BLOCK:
            # end-of-archive marker: a second zero block must follow
            trailer = archive[offset + BLOCK : offset + 2 * BLOCK]
            if trailer != _ZERO_BLOCK:
                raise ShardFormatError(f"{source}: missing second end-of-archive block at offset {offset}")
            return
        stored = _parse_octal(header[148:156], source, offset, "checksum")
        computed = sum(header[:148]) + 8 * 0x20 + sum(header[156:])
        if stored != computed:
            raise ShardFormatError(
                f"{source}: header checksum mismatch at offset {offset} "
                f"(stored {stored:o}, computed {computed:o})"
            )
        name = header[0:100].split(b"\0", 1)[0].decode("utf-8")
        size = _parse_octal(header[124:136], source, offset, "size")
        data_start = offset + BLOCK
        data = archive[data_start : data_start + size]
        if len(data) < size:
            raise ShardFormatError(f"{source}: truncated member {name!r} at offset {offset}")
        yield name, data
        offset = data_start + size + ((-size) % BLOCK)


def _parse_octal(raw: bytes, source: str, offset: int, what: str) -> int:
    text = raw.rstrip(b"\0 ").lstrip(b" ")
    try:
        return int(text or b"0", 8)
    except ValueError:
        raise ShardFormatError(f"{source}: bad octal {what} field at offset {offset}: {raw!r}") from None

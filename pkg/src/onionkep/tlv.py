"""TLV record grammar shared by key files, directory snapshots and the
directory wire protocol.

Record layout, bit-exact: tag (1 byte) || length (4 bytes big-endian) ||
value. Integer values are minimal big-endian (no leading zero bytes;
zero encodes as the empty string).
"""

from __future__ import annotations

from typing import Iterator

from .errors import MalformedKeyFile

# Key file tags.
TAG_P = 0x01
TAG_Q = 0x02
TAG_R = 0x03
TAG_X = 0x05
TAG_K = 0x06
TAG_PUB_P = 0x07
TAG_PUB_Q = 0x08

# Directory protocol / snapshot tags.
TAG_DIR_REGISTER = 0x10
TAG_DIR_LOOKUP = 0x11
TAG_DIR_LIST = 0x12
TAG_NAME = 0x20
TAG_ADDRESS = 0x21
TAG_PARAMS_DIGEST = 0x22
TAG_STATUS = 0x7F


def int_to_minimal_bytes(v: int) -> bytes:
    if v < 0:
        raise ValueError("negative integers are not representable")
    return v.to_bytes((v.bit_length() + 7) // 8, "big")


def int_from_bytes(b: bytes) -> int:
    return int.from_bytes(b, "big")


def encode_record(tag: int, value: bytes) -> bytes:
    if not 0 <= tag <= 0xFF:
        raise ValueError(f"tag out of range: {tag}")
    return bytes([tag]) + len(value).to_bytes(4, "big") + value


def encode_int_record(tag: int, v: int) -> bytes:
    return encode_record(tag, int_to_minimal_bytes(v))


def iter_records(data: bytes) -> Iterator[tuple[int, bytes]]:
    """Yield (tag, value) pairs; raises MalformedKeyFile on truncation."""
    pos = 0
    while pos < len(data):
        if pos + 5 > len(data):
            raise MalformedKeyFile("truncated record header")
        tag = data[pos]
        length = int.from_bytes(data[pos + 1 : pos + 5], "big")
        pos += 5
        if pos + length > len(data):
            raise MalformedKeyFile(f"truncated value for tag {tag:#04x}")
        yield tag, data[pos : pos + length]
        pos += length

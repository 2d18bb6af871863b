"""Directory service: the sole source of relay long-term public keys.

Clients resolve node names here and never accept a constructor supplied by
a relay, which is what makes the published keys the trust anchor of the
handshake. State is optionally snapshotted to a TLV file on every
mutation so demos can restart without a database.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

from . import tlv
from .errors import DuplicateName, MalformedKeyFile, NotFound, ParamsMismatch
from .nikep import PublicConstructor


@dataclass(frozen=True)
class NodeDescriptor:
    name: str
    address: str
    public: PublicConstructor
    params_digest: bytes


def encode_descriptor(desc: NodeDescriptor) -> bytes:
    if len(desc.name.encode()) > 255:
        raise ValueError("node name longer than 255 bytes")
    return (tlv.encode_record(tlv.TAG_NAME, desc.name.encode())
            + tlv.encode_record(tlv.TAG_ADDRESS, desc.address.encode())
            + tlv.encode_int_record(tlv.TAG_PUB_P, desc.public.P)
            + tlv.encode_int_record(tlv.TAG_PUB_Q, desc.public.Q)
            + tlv.encode_record(tlv.TAG_PARAMS_DIGEST, desc.params_digest))


def decode_descriptors(data: bytes) -> list[NodeDescriptor]:
    """Parse concatenated descriptor records; each starts with a name tag."""
    out: list[NodeDescriptor] = []
    fields: dict[int, bytes] = {}
    for tag, value in tlv.iter_records(data):
        if tag == tlv.TAG_NAME and fields:
            out.append(_descriptor_from_fields(fields))
            fields = {}
        fields[tag] = value
    if fields:
        out.append(_descriptor_from_fields(fields))
    return out


def _descriptor_from_fields(fields: dict[int, bytes]) -> NodeDescriptor:
    required = {tlv.TAG_NAME, tlv.TAG_ADDRESS, tlv.TAG_PUB_P, tlv.TAG_PUB_Q,
                tlv.TAG_PARAMS_DIGEST}
    if required - fields.keys():
        raise MalformedKeyFile("descriptor record is missing fields")
    return NodeDescriptor(
        name=fields[tlv.TAG_NAME].decode(),
        address=fields[tlv.TAG_ADDRESS].decode(),
        public=PublicConstructor(P=tlv.int_from_bytes(fields[tlv.TAG_PUB_P]),
                                 Q=tlv.int_from_bytes(fields[tlv.TAG_PUB_Q])),
        params_digest=fields[tlv.TAG_PARAMS_DIGEST],
    )


class Directory:
    """Name -> descriptor registry bound to one parameter set."""

    def __init__(self, params_digest: bytes, snapshot_path: str | None = None):
        self.params_digest = params_digest
        self.snapshot_path = snapshot_path
        self._descriptors: dict[str, NodeDescriptor] = {}
        if snapshot_path and os.path.exists(snapshot_path):
            with open(snapshot_path, "rb") as fh:
                for desc in decode_descriptors(fh.read()):
                    self._descriptors[desc.name] = desc

    def register(self, desc: NodeDescriptor) -> None:
        if desc.params_digest != self.params_digest:
            raise ParamsMismatch(f"descriptor for {desc.name} uses foreign parameters")
        existing = self._descriptors.get(desc.name)
        if existing is not None and existing.public != desc.public:
            raise DuplicateName(f"{desc.name} already registered with a different key")
        self._descriptors[desc.name] = desc
        self._snapshot()

    def lookup(self, name: str) -> NodeDescriptor:
        try:
            return self._descriptors[name]
        except KeyError:
            raise NotFound(f"no descriptor for {name!r}") from None

    def list(self) -> list[NodeDescriptor]:
        return [self._descriptors[name] for name in sorted(self._descriptors)]

    def _snapshot(self) -> None:
        if not self.snapshot_path:
            return
        blob = b"".join(encode_descriptor(d) for d in self.list())
        tmp = self.snapshot_path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, self.snapshot_path)

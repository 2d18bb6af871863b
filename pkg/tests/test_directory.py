"""Directory registry: registration rules, lookup, snapshot persistence."""

import pytest

from onionkep import keypair_from_secrets, params_digest
from onionkep.directory import (
    Directory,
    NodeDescriptor,
    decode_descriptors,
    encode_descriptor,
)
from onionkep.errors import DuplicateName, MalformedKeyFile, NotFound, ParamsMismatch


@pytest.fixture
def digest(toy_params):
    return params_digest(toy_params)


@pytest.fixture
def desc_b(toy_params, toy_bob, digest):
    return NodeDescriptor(name="B", address="127.0.0.1:9001",
                          public=toy_bob.public, params_digest=digest)


class TestDescriptorCodec:
    def test_round_trip(self, desc_b):
        assert decode_descriptors(encode_descriptor(desc_b)) == [desc_b]

    def test_multiple_concatenated(self, toy_params, toy_alice, desc_b, digest):
        other = NodeDescriptor(name="C", address="127.0.0.1:9002",
                               public=toy_alice.public, params_digest=digest)
        blob = encode_descriptor(desc_b) + encode_descriptor(other)
        assert decode_descriptors(blob) == [desc_b, other]

    def test_missing_field(self, desc_b):
        # Drop the trailing digest record (tag + 4-byte length + 32 bytes).
        blob = encode_descriptor(desc_b)[:-37]
        with pytest.raises(MalformedKeyFile):
            decode_descriptors(blob)

    def test_name_length_cap(self, toy_bob, digest):
        desc = NodeDescriptor(name="x" * 256, address="a", public=toy_bob.public,
                              params_digest=digest)
        with pytest.raises(ValueError):
            encode_descriptor(desc)


class TestDirectory:
    def test_register_and_lookup(self, digest, desc_b):
        directory = Directory(digest)
        directory.register(desc_b)
        assert directory.lookup("B") == desc_b

    def test_lookup_missing(self, digest):
        with pytest.raises(NotFound):
            Directory(digest).lookup("nobody")

    def test_reject_foreign_params(self, digest, desc_b):
        directory = Directory(b"\x00" * 32)
        with pytest.raises(ParamsMismatch):
            directory.register(desc_b)
        assert directory.list() == []

    def test_reject_name_takeover(self, toy_params, toy_alice, digest, desc_b):
        directory = Directory(digest)
        directory.register(desc_b)
        impostor = NodeDescriptor(name="B", address="10.0.0.1:1",
                                  public=toy_alice.public, params_digest=digest)
        with pytest.raises(DuplicateName):
            directory.register(impostor)
        assert directory.lookup("B") == desc_b

    def test_same_key_address_update(self, digest, desc_b):
        directory = Directory(digest)
        directory.register(desc_b)
        moved = NodeDescriptor(name="B", address="127.0.0.1:9100",
                               public=desc_b.public, params_digest=digest)
        directory.register(moved)
        assert directory.lookup("B").address == "127.0.0.1:9100"

    def test_list_sorted(self, toy_alice, toy_bob, digest):
        directory = Directory(digest)
        for name, pair in [("C", toy_alice), ("B", toy_bob)]:
            directory.register(NodeDescriptor(name=name, address="a",
                                              public=pair.public, params_digest=digest))
        assert [d.name for d in directory.list()] == ["B", "C"]


class TestSnapshot:
    def test_survives_restart(self, tmp_path, digest, desc_b):
        path = str(tmp_path / "dir.tlv")
        Directory(digest, snapshot_path=path).register(desc_b)
        reborn = Directory(digest, snapshot_path=path)
        assert reborn.lookup("B") == desc_b

    def test_no_file_until_mutation(self, tmp_path, digest):
        path = tmp_path / "dir.tlv"
        Directory(digest, snapshot_path=str(path))
        assert not path.exists()

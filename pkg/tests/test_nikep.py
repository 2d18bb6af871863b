"""Key exchange layer: handshake algebra, cipher, prefix attack, key files.

Expected values for the toy instance (p=q=2, r=11) were frozen from the
brute-force oracles in this file before the implementation was wired in.
"""

import math
import random

import pytest

from onionkep import (
    decrypt_block,
    derive_session_key,
    encrypt_block,
    gen_keypair,
    gen_params,
    key_sizes,
    keypair_from_secrets,
    make_params,
    mix,
    params_digest,
    prefix_recover,
    reduce_key,
    strip,
)
from onionkep.errors import (
    BlockOutOfRange,
    DegenerateCapture,
    GenerationFailed,
    MalformedCapture,
    MalformedKeyFile,
    MalformedSessionKey,
    NonInvertible,
)
from onionkep.modmath import mod_inv
from onionkep.nikep import (
    SystemParams,
    decode_private_file,
    decode_public_file,
    encode_private_file,
    encode_public_file,
)
from conftest import ScriptedRng


def oracle_shared_key(params, a, b):
    """Direct computation of p**(2 x_a x_b) * q**(y_a y_b) mod n."""
    return (pow(params.p, 2 * a.private.x * b.private.x, params.n)
            * pow(params.q, a.private.y * b.private.y, params.n)) % params.n


class TestGenParams:
    def test_toy_instance(self):
        params = gen_params(4, random.Random(1))
        assert (params.p, params.q, params.r, params.n, params.phi) == (2, 2, 11, 44, 20)

    def test_structure(self, params_64):
        assert params_64.n == params_64.p * params_64.q * params_64.r
        assert params_64.phi == 2 * (params_64.r - 1)

    def test_exhaustion_propagates(self):
        with pytest.raises(GenerationFailed):
            gen_params(3, random.Random(0), max_attempts=50)


class TestGenKeypair:
    def test_worked_example_a(self, toy_params):
        pair = keypair_from_secrets(toy_params, 3, 13)
        assert pair.private.y == 18
        assert (pair.public.P, pair.public.Q) == (40, 28)

    def test_worked_example_b(self, toy_params):
        pair = keypair_from_secrets(toy_params, 5, 15)
        assert pair.private.y == 16
        assert (pair.public.P, pair.public.Q) == (4, 36)

    def test_defining_relation(self, toy_params):
        rng = random.Random(3)
        for _ in range(20):
            pair = gen_keypair(toy_params, rng)
            assert pair.private.x + pair.private.y == toy_params.phi + 1
            assert 2 <= pair.private.x <= toy_params.phi - 2
            assert math.gcd(pair.private.k, toy_params.n) == 1

    def test_prefix_safe_policy(self, toy_params):
        rng = random.Random(4)
        for _ in range(50):
            pair = gen_keypair(toy_params, rng, prefix_safe=True)
            assert pair.private.k > toy_params.r

    def test_small_k_opt_out(self, toy_params):
        rng = random.Random(5)
        seen_small = any(gen_keypair(toy_params, rng, prefix_safe=False).private.k
                         <= toy_params.r for _ in range(50))
        assert seen_small

    def test_exponent_shape(self, toy_params):
        # P must carry exponent 2x: recompute from the private key.
        rng = random.Random(6)
        pair = gen_keypair(toy_params, rng)
        expected = pow(2, 2 * pair.private.x, 44) * pair.private.k % 44
        assert pair.public.P == expected

    def test_scripted_rng_draws(self, toy_params):
        pair = gen_keypair(toy_params, ScriptedRng([3, 13]))
        assert (pair.public.P, pair.public.Q) == (40, 28)


class TestHandshake:
    def test_mix_toy_values(self, toy_params, toy_alice, toy_bob):
        assert mix(toy_params, toy_bob.public, toy_alice.private) == 12
        assert mix(toy_params, toy_alice.public, toy_bob.private) == 28

    def test_mix_preserves_peer_k(self, toy_params, toy_alice, toy_bob):
        k_s = oracle_shared_key(toy_params, toy_alice, toy_bob)
        assert mix(toy_params, toy_bob.public, toy_alice.private) \
            == k_s * toy_bob.private.k % toy_params.n

    def test_strip_toy_values(self, toy_params):
        assert strip(toy_params, 12, 15) == 36
        assert strip(toy_params, 28, 13) == 36

    def test_strip_identity_k(self, toy_params):
        assert strip(toy_params, 28, 1) == 28

    def test_strip_rejects_bad_k(self, toy_params):
        with pytest.raises(NonInvertible):
            strip(toy_params, 12, 4)

    def test_agreement_toy(self, toy_params, toy_alice, toy_bob):
        a_side = strip(toy_params, mix(toy_params, toy_alice.public, toy_bob.private),
                       toy_alice.private.k)
        b_side = strip(toy_params, mix(toy_params, toy_bob.public, toy_alice.private),
                       toy_bob.private.k)
        assert a_side == b_side == 36
        assert oracle_shared_key(toy_params, toy_alice, toy_bob) == 36

    @pytest.mark.parametrize("r_bits", [4, 16, 64])
    def test_agreement_random(self, r_bits):
        rng = random.Random(r_bits)
        params = gen_params(r_bits, rng)
        for _ in range(25):
            a = gen_keypair(params, rng)
            b = gen_keypair(params, rng)
            shared = oracle_shared_key(params, a, b)
            assert strip(params, mix(params, b.public, a.private), b.private.k) == shared
            assert strip(params, mix(params, a.public, b.private), a.private.k) == shared


class TestReduce:
    def test_toy_value(self, toy_params):
        key = reduce_key(toy_params, 36)
        assert (key.raw, key.reduced, key.reduced_inv) == (36, 9, 5)

    def test_unit(self, toy_params):
        key = reduce_key(toy_params, 4)
        assert (key.reduced, key.reduced_inv) == (1, 1)

    def test_rejects_indivisible(self, toy_params):
        with pytest.raises(MalformedSessionKey):
            reduce_key(toy_params, 35)

    def test_raw_always_non_invertible(self, params_64):
        rng = random.Random(9)
        for _ in range(10):
            a = gen_keypair(params_64, rng)
            b = gen_keypair(params_64, rng)
            key = derive_session_key(params_64, mix(params_64, b.public, a.private),
                                     b.private.k)
            with pytest.raises(NonInvertible):
                mod_inv(key.raw, params_64.n)
            assert key.reduced * key.reduced_inv % params_64.r == 1


class TestBlockCipher:
    def test_encrypt_toy(self, toy_params):
        key = reduce_key(toy_params, 36)
        assert encrypt_block(7, key, toy_params) == 8
        assert encrypt_block(0, key, toy_params) == 0

    def test_decrypt_toy(self, toy_params):
        key = reduce_key(toy_params, 36)
        assert decrypt_block(8, key, toy_params) == 7
        assert decrypt_block(0, key, toy_params) == 0

    def test_identity_key(self, toy_params):
        key = reduce_key(toy_params, 4)  # reduced == 1
        for m in range(11):
            assert encrypt_block(m, key, toy_params) == m

    def test_exhaustive_round_trip(self, toy_params):
        key = reduce_key(toy_params, 36)
        for m in range(toy_params.r):
            assert decrypt_block(encrypt_block(m, key, toy_params), key, toy_params) == m

    def test_out_of_range(self, toy_params):
        key = reduce_key(toy_params, 36)
        with pytest.raises(BlockOutOfRange):
            encrypt_block(11, key, toy_params)
        with pytest.raises(BlockOutOfRange):
            decrypt_block(11, key, toy_params)

    def test_homomorphism(self, toy_params):
        # (w*ka*kb)*ka^-1 == w*kb and (w*ka*kb)*kb^-1 == w*ka, mod r.
        rng = random.Random(10)
        r = toy_params.r
        for _ in range(100):
            ka, kb = rng.randrange(1, r), rng.randrange(1, r)
            w = rng.randrange(0, r)
            both = w * ka % r * kb % r
            assert both * mod_inv(ka, r) % r == w * kb % r
            assert both * mod_inv(kb, r) % r == w * ka % r


class TestPrefixAttack:
    def test_full_recovery(self, toy_params):
        assert prefix_recover(toy_params, 16, 24) == 7

    def test_mitigated_leaks_residue_only(self, toy_params):
        recovered = prefix_recover(toy_params, 16, 32)
        assert recovered == 2
        assert recovered != 13
        assert recovered == 13 % toy_params.r

    def test_malformed_capture(self, toy_params):
        with pytest.raises(MalformedCapture):
            prefix_recover(toy_params, 15, 24)

    def test_degenerate_capture(self, toy_params):
        with pytest.raises(DegenerateCapture):
            prefix_recover(toy_params, 0, 24)


class TestKeySizes:
    def test_1024_bit_modulus(self):
        r = (1 << 1021) | 1
        params = SystemParams(p=2, q=2, r=r, n=4 * r, phi=0)
        assert params.n.bit_length() == 1024
        assert key_sizes(params)["public_bytes"] == 256

    def test_2048_bit_modulus(self):
        r = (1 << 2045) | 1
        params = SystemParams(p=2, q=2, r=r, n=4 * r, phi=0)
        assert params.n.bit_length() == 2048
        assert key_sizes(params)["public_bytes"] == 512

    def test_toy_width(self, toy_params):
        assert key_sizes(toy_params)["public_bytes"] == 2


class TestKeyFiles:
    def test_public_round_trip(self, toy_params, toy_alice):
        blob = encode_public_file(toy_params, toy_alice.public)
        params, pub = decode_public_file(blob)
        assert params == toy_params
        assert pub == toy_alice.public

    def test_private_round_trip(self, toy_params, toy_alice):
        blob = encode_private_file(toy_params, toy_alice)
        params, pair = decode_private_file(blob)
        assert params == toy_params
        assert pair == toy_alice

    def test_exact_record_layout(self, toy_params, toy_alice):
        # tag || 4-byte BE length || minimal BE value, fixed tag order.
        blob = encode_public_file(toy_params, toy_alice.public)
        assert blob == bytes.fromhex(
            "01" "00000001" "02"      # p = 2
            "02" "00000001" "02"      # q = 2
            "03" "00000001" "0b"      # r = 11
            "07" "00000001" "28"      # P = 40
            "08" "00000001" "1c")     # Q = 28

    def test_missing_record(self, toy_params, toy_alice):
        blob = encode_public_file(toy_params, toy_alice.public)[:-6]
        with pytest.raises(MalformedKeyFile):
            decode_public_file(blob)

    def test_inconsistent_private_file(self, toy_params, toy_alice, toy_bob):
        # Bob's constructor stapled to Alice's secrets must be rejected.
        blob = (encode_public_file(toy_params, toy_bob.public)
                + encode_private_file(toy_params, toy_alice)[-12:])
        with pytest.raises(MalformedKeyFile):
            decode_private_file(blob)

    def test_params_digest_distinguishes(self, toy_params):
        other = make_params(2, 2, 23)
        assert params_digest(toy_params) != params_digest(other)
        assert len(params_digest(toy_params)) == 32

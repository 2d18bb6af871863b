"""Non-invertible key exchange: parameters, keys, handshake and block cipher.

The modulus is n = p*q*r with p, q small primes (2 by default) and r a
large prime with 2 a primitive root. A user's public constructor is
(P, Q) = (p**(2x) * k, q**y * k) mod n with x + y = phi(n) + 1 and k
invertible mod n. Mixing a peer's constructor with one's own exponents
yields the shared secret still masked by the peer's k; stripping the mask
with k**-1 gives k_s = p**(2 x_a x_b) * q**(y_a y_b) mod n, which shares
factors with n and is therefore non-invertible. Dividing by p*q and
reducing mod r produces the invertible working key k_r used by the
multiplicative cipher c = m * k_r mod r.

The cipher is deterministic and malleable by construction; it offers no
semantic security and is implemented here exactly as the exchange defines
it.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass

from . import tlv
from .errors import (
    BlockOutOfRange,
    DegenerateCapture,
    MalformedCapture,
    MalformedKeyFile,
    MalformedSessionKey,
    NonInvertible,
    UnsupportedShape,
)
from .modmath import gen_prime_with_two_primitive, mod_inv, totient


@dataclass(frozen=True)
class SystemParams:
    """Public modulus structure shared by every party."""

    p: int
    q: int
    r: int
    n: int
    phi: int

    @property
    def residue_width(self) -> int:
        """Bytes needed for one residue mod n; the wire width W."""
        return (self.n.bit_length() + 7) // 8


@dataclass(frozen=True)
class PublicConstructor:
    P: int
    Q: int


@dataclass(frozen=True)
class PrivateKey:
    x: int
    y: int
    k: int


@dataclass(frozen=True)
class KeyPair:
    public: PublicConstructor
    private: PrivateKey


@dataclass(frozen=True)
class SessionKey:
    """Shared secret: raw k_s mod n plus its invertible reduction mod r."""

    raw: int
    reduced: int
    reduced_inv: int


def gen_params(r_bits: int, rng: random.Random, max_attempts: int = 500_000) -> SystemParams:
    """Default-profile parameters: p = q = 2, r safe prime with 2 primitive."""
    p = q = 2
    r = gen_prime_with_two_primitive(r_bits, rng, max_attempts=max_attempts)
    n = p * q * r
    return SystemParams(p=p, q=q, r=r, n=n, phi=totient(p, q, r))


def make_params(p: int, q: int, r: int) -> SystemParams:
    """Build params from explicit primes (toy instances, loaded key files)."""
    return SystemParams(p=p, q=q, r=r, n=p * q * r, phi=totient(p, q, r))


def keypair_from_secrets(params: SystemParams, x: int, k: int) -> KeyPair:
    """Deterministic keypair from chosen secrets; used by tests and loaders."""
    if math.gcd(k, params.n) != 1:
        raise NonInvertible(f"k = {k} shares a factor with n")
    y = params.phi - x + 1
    P = pow(params.p, 2 * x, params.n) * k % params.n
    Q = pow(params.q, y, params.n) * k % params.n
    return KeyPair(public=PublicConstructor(P=P, Q=Q), private=PrivateKey(x=x, y=y, k=k))


def gen_keypair(params: SystemParams, rng: random.Random,
                prefix_safe: bool = True) -> KeyPair:
    """Random keypair: x uniform in [2, phi-2], k uniform invertible.

    Under the default prefix-safe policy k is drawn from (r, n) so that a
    prefix attack on captured products can recover at most k mod r, never
    k itself. Pass prefix_safe=False only for demonstrations.
    """
    x = rng.randrange(2, params.phi - 1)
    low = params.r + 1 if prefix_safe else 1
    while True:
        k = rng.randrange(low, params.n)
        if math.gcd(k, params.n) == 1:
            break
    return keypair_from_secrets(params, x, k)


def mix(params: SystemParams, peer_pub: PublicConstructor, own_priv: PrivateKey) -> int:
    """Raise the peer's constructor to the own exponents: the handshake value.

    Returns P**x * Q**y mod n = p**(2 x_a x_b) * q**(y_a y_b) * k_peer; the
    peer's k survives because k**(phi+1) == k mod n by Euler's theorem.
    """
    return (pow(peer_pub.P, own_priv.x, params.n)
            * pow(peer_pub.Q, own_priv.y, params.n)) % params.n


def strip(params: SystemParams, v: int, own_k: int) -> int:
    """Remove the own-k mask from a received handshake value: v * k**-1 mod n."""
    return v * mod_inv(own_k, params.n) % params.n


def reduce_key(params: SystemParams, raw: int) -> SessionKey:
    """Divide the non-invertible raw key by p*q and reduce mod r.

    Raises MalformedSessionKey when raw is not a positive multiple of p*q,
    which signals a corrupted or adversarial handshake.
    """
    pq = params.p * params.q
    if raw <= 0 or raw % pq != 0:
        raise MalformedSessionKey(f"raw session key {raw} not divisible by {pq}")
    reduced = (raw // pq) % params.r
    if reduced == 0:
        raise MalformedSessionKey("reduced session key is 0 mod r")
    return SessionKey(raw=raw, reduced=reduced, reduced_inv=mod_inv(reduced, params.r))


def derive_session_key(params: SystemParams, v: int, own_k: int) -> SessionKey:
    """strip followed by reduce_key; the receive side of the handshake."""
    return reduce_key(params, strip(params, v, own_k))


def encrypt_block(m: int, key: SessionKey, params: SystemParams) -> int:
    """c = m * k_r mod r."""
    if not 0 <= m < params.r:
        raise BlockOutOfRange(f"plaintext block {m} not in [0, r)")
    return m * key.reduced % params.r


def decrypt_block(c: int, key: SessionKey, params: SystemParams) -> int:
    """m = c * k_r**-1 mod r."""
    if not 0 <= c < params.r:
        raise BlockOutOfRange(f"ciphertext block {c} not in [0, r)")
    return c * key.reduced_inv % params.r


def prefix_recover(params: SystemParams, c1: int, c2: int) -> int:
    """Run the prefix attack on two captured products c1 = w*k_m, c2 = w*k_m*k_n.

    Both captures are non-invertible mod n = 4r, but dividing by p*q = 4
    moves them to the field mod r where the prefix can be inverted:
    (c1/4)**-1 * (c2/4) mod r = k_n mod r. When k_n < r this is the full
    key; with the prefix-safe policy (k_n > r) only the residue leaks.
    """
    if params.p != 2 or params.q != 2:
        raise UnsupportedShape("prefix attack as stated requires p = q = 2")
    if c1 % 4 != 0 or c2 % 4 != 0:
        raise MalformedCapture("captured values must be divisible by 4")
    a = (c1 // 4) % params.r
    if a == 0:
        raise DegenerateCapture("prefix reduces to 0 mod r")
    return mod_inv(a, params.r) * (c2 // 4) % params.r


def key_sizes(params: SystemParams) -> dict[str, int]:
    """Serialized key sizes in bytes for the current modulus width.

    public_bytes counts the two residues P and Q at width W = ceil(|n|/8).
    private_bytes counts the canonical private encoding: x and k at width W
    plus a 32-byte params digest reference (y is derivable and not stored).
    """
    w = params.residue_width
    return {"public_bytes": 2 * w, "private_bytes": 2 * w + 32}


def params_digest(params: SystemParams) -> bytes:
    """SHA-256 of the canonical TLV encoding of (p, q, r)."""
    blob = (tlv.encode_int_record(tlv.TAG_P, params.p)
            + tlv.encode_int_record(tlv.TAG_Q, params.q)
            + tlv.encode_int_record(tlv.TAG_R, params.r))
    return hashlib.sha256(blob).digest()


# -- key files ---------------------------------------------------------------
#
# Public files carry {p, q, r, P, Q}; private files add {x, k}. n and phi
# are recomputed on load, and stored constructors are checked against the
# private key when present.

def encode_public_file(params: SystemParams, pub: PublicConstructor) -> bytes:
    return (tlv.encode_int_record(tlv.TAG_P, params.p)
            + tlv.encode_int_record(tlv.TAG_Q, params.q)
            + tlv.encode_int_record(tlv.TAG_R, params.r)
            + tlv.encode_int_record(tlv.TAG_PUB_P, pub.P)
            + tlv.encode_int_record(tlv.TAG_PUB_Q, pub.Q))


def encode_private_file(params: SystemParams, pair: KeyPair) -> bytes:
    return (encode_public_file(params, pair.public)
            + tlv.encode_int_record(tlv.TAG_X, pair.private.x)
            + tlv.encode_int_record(tlv.TAG_K, pair.private.k))


def decode_public_file(data: bytes) -> tuple[SystemParams, PublicConstructor]:
    fields = _read_fields(data, required={tlv.TAG_P, tlv.TAG_Q, tlv.TAG_R,
                                          tlv.TAG_PUB_P, tlv.TAG_PUB_Q})
    params = make_params(fields[tlv.TAG_P], fields[tlv.TAG_Q], fields[tlv.TAG_R])
    return params, PublicConstructor(P=fields[tlv.TAG_PUB_P], Q=fields[tlv.TAG_PUB_Q])


def decode_private_file(data: bytes) -> tuple[SystemParams, KeyPair]:
    fields = _read_fields(data, required={tlv.TAG_P, tlv.TAG_Q, tlv.TAG_R,
                                          tlv.TAG_PUB_P, tlv.TAG_PUB_Q,
                                          tlv.TAG_X, tlv.TAG_K})
    params = make_params(fields[tlv.TAG_P], fields[tlv.TAG_Q], fields[tlv.TAG_R])
    pair = keypair_from_secrets(params, fields[tlv.TAG_X], fields[tlv.TAG_K])
    stored = PublicConstructor(P=fields[tlv.TAG_PUB_P], Q=fields[tlv.TAG_PUB_Q])
    if stored != pair.public:
        raise MalformedKeyFile("stored constructor does not match private key")
    return params, pair


def _read_fields(data: bytes, required: set[int]) -> dict[int, int]:
    fields = {tag: tlv.int_from_bytes(value) for tag, value in tlv.iter_records(data)}
    missing = required - fields.keys()
    if missing:
        raise MalformedKeyFile(f"missing records: {sorted(hex(t) for t in missing)}")
    return fields

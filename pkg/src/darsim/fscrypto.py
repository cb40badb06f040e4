"""Forward-secure signatures from a hash chain and a Merkle tree.

Each time period ``i`` owns a seed ``seed_i``; ``seed_{i+1} = H("evolve" || seed_i)``.
The seed deterministically yields an Ed25519 keypair for that period.  The
public key is the Merkle root over all per-period leaf public keys, so it is
32 bytes no matter how many periods exist.  Evolving the key overwrites the
current seed; since the chain only runs forward, nothing held by the key can
recover an earlier period's signing key.

Byte layouts (little-endian)::

    public key  : root[32] | periods u32                            (36 bytes)
    signature   : signer u64 | period u32 | leaf_pk[32] | depth u8
                  | depth * sibling[32] | inner_sig[64]
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

MAX_PERIODS = 2**20
HASH_BYTES = 32

TAG_EVOLVE = b"evolve"
TAG_LEAF = b"leaf"
TAG_NODE = b"node"
TAG_SIG = b"sig"
TAG_KEY = b"keygen"


class FSError(Exception):
    """Base class for forward-secure signature errors."""


class ParameterError(FSError, ValueError):
    pass


class PeriodExhausted(FSError):
    pass


class KeyDisposed(FSError):
    pass


def _h(tag: bytes, *parts: bytes) -> bytes:
    h = hashlib.sha256(tag)
    for p in parts:
        h.update(p)
    return h.digest()


def _leaf_private(seed: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(_h(TAG_KEY, seed))


def _leaf_public_bytes(seed: bytes) -> bytes:
    return _leaf_private(seed).public_key().public_bytes_raw()


def _depth(periods: int) -> int:
    return max(0, (periods - 1).bit_length())


_EMPTY_LEAF = _h(TAG_LEAF)


def _build_tree(leaf_pks: list) -> list:
    """All tree levels, leaves first; padded with a fixed empty leaf."""
    level = [_h(TAG_LEAF, pk) for pk in leaf_pks]
    size = 1 << _depth(len(leaf_pks))
    level += [_EMPTY_LEAF] * (size - len(level))
    levels = [level]
    while len(level) > 1:
        level = [_h(TAG_NODE, level[i], level[i + 1]) for i in range(0, len(level), 2)]
        levels.append(level)
    return levels


def _auth_path(levels: list, index: int) -> tuple:
    path = []
    for level in levels[:-1]:
        path.append(level[index ^ 1])
        index >>= 1
    return tuple(path)


def _signed_message(root: bytes, signer: int, period: int, msg: bytes) -> bytes:
    return TAG_SIG + root + struct.pack("<QI", signer, period) + msg


@dataclass(frozen=True)
class FSParams:
    periods: int
    security_bits: int = 256

    def __post_init__(self):
        if not isinstance(self.periods, int) or self.periods < 1:
            raise ParameterError("need at least one period")
        if self.periods > MAX_PERIODS:
            raise ParameterError(f"periods capped at {MAX_PERIODS}")
        if self.security_bits != 256:
            raise ParameterError("only 256-bit hashes are supported")


@dataclass(frozen=True)
class FSPublicKey:
    root: bytes
    periods: int

    def to_bytes(self) -> bytes:
        return self.root + struct.pack("<I", self.periods)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FSPublicKey":
        if len(data) != HASH_BYTES + 4:
            raise ValueError("bad public key length")
        return cls(bytes(data[:HASH_BYTES]), struct.unpack("<I", data[HASH_BYTES:])[0])


@dataclass(frozen=True)
class FSSignature:
    signer: int
    period: int
    leaf_pk: bytes
    path: tuple
    inner: bytes

    def to_bytes(self) -> bytes:
        return (
            struct.pack("<QI", self.signer, self.period)
            + self.leaf_pk
            + struct.pack("<B", len(self.path))
            + b"".join(self.path)
            + self.inner
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "FSSignature":
        try:
            signer, period = struct.unpack_from("<QI", data, 0)
            pos = 12
            leaf_pk = bytes(data[pos : pos + 32])
            pos += 32
            depth = data[pos]
            pos += 1
            path = tuple(bytes(data[pos + 32 * i : pos + 32 * (i + 1)]) for i in range(depth))
            pos += 32 * depth
            inner = bytes(data[pos:])
        except (struct.error, IndexError) as exc:
            raise ValueError("malformed signature") from exc
        if len(leaf_pk) != 32 or len(inner) != 64 or any(len(p) != 32 for p in path):
            raise ValueError("malformed signature")
        return cls(signer, period, leaf_pk, path, inner)


class FSSecretKey:
    """Evolving secret key.  Mutated in place by ``update``/``dispose``."""

    __slots__ = ("signer", "_period", "_seed", "_levels", "_root", "_periods", "_disposed")

    def __init__(self, signer, period, seed, levels, root, periods):
        self.signer = signer
        self._period = period
        self._seed = bytearray(seed)
        self._levels = levels  # public Merkle data, shared between clones
        self._root = root
        self._periods = periods
        self._disposed = False

    @property
    def period(self) -> int:
        return self._period

    @property
    def periods(self) -> int:
        return self._periods

    @property
    def disposed(self) -> bool:
        return self._disposed

    def public_key(self) -> FSPublicKey:
        return FSPublicKey(self._root, self._periods)

    def _check_live(self):
        if self._disposed:
            raise KeyDisposed(f"key of node {self.signer} was disposed")

    def _wipe(self):
        for i in range(len(self._seed)):
            self._seed[i] = 0

    def update(self) -> "FSSecretKey":
        return self.update_to(self._period + 1)

    def update_to(self, target: int) -> "FSSecretKey":
        self._check_live()
        if target <= self._period:
            raise ParameterError(f"target period {target} must exceed current {self._period}")
        if target >= self._periods:
            raise PeriodExhausted(f"period {target} outside [0, {self._periods})")
        seed = bytes(self._seed)
        for _ in range(target - self._period):
            seed = _h(TAG_EVOLVE, seed)
        self._wipe()
        self._seed = bytearray(seed)
        self._period = target
        return self

    def sign(self, msg: bytes) -> FSSignature:
        self._check_live()
        leaf_key = _leaf_private(bytes(self._seed))
        leaf_pk = leaf_key.public_key().public_bytes_raw()
        inner = leaf_key.sign(_signed_message(self._root, self.signer, self._period, msg))
        return FSSignature(
            self.signer, self._period, leaf_pk, _auth_path(self._levels, self._period), inner
        )

    def dispose(self) -> None:
        if self._disposed:
            return
        self._wipe()
        self._seed = bytearray()
        self._levels = None
        self._disposed = True

    def clone(self) -> "FSSecretKey":
        """Independent copy of the full secret state (what a corruption captures)."""
        self._check_live()
        return FSSecretKey(
            self.signer, self._period, bytes(self._seed), self._levels, self._root, self._periods
        )

    def __repr__(self):
        state = "disposed" if self._disposed else f"period={self._period}"
        return f"FSSecretKey(signer={self.signer}, {state})"


def gen(params: FSParams, rng_seed: bytes, signer: int = 0) -> tuple:
    """Key generation; deterministic in ``rng_seed``."""
    if not isinstance(params, FSParams):
        params = FSParams(int(params))
    seed0 = _h(TAG_KEY, b"seed0", bytes(rng_seed))
    leaf_pks = []
    seed = seed0
    for i in range(params.periods):
        leaf_pks.append(_leaf_public_bytes(seed))
        if i + 1 < params.periods:
            seed = _h(TAG_EVOLVE, seed)
    levels = _build_tree(leaf_pks)
    root = levels[-1][0]
    pk = FSPublicKey(root, params.periods)
    return pk, FSSecretKey(signer, 0, seed0, levels, root, params.periods)


def update(sk: FSSecretKey, target: int | None = None) -> FSSecretKey:
    return sk.update() if target is None else sk.update_to(target)


def update_to(sk: FSSecretKey, target: int) -> FSSecretKey:
    return sk.update_to(target)


def sign(sk: FSSecretKey, msg: bytes) -> FSSignature:
    return sk.sign(msg)


def dispose(sk: FSSecretKey) -> None:
    sk.dispose()


def verify(pk: FSPublicKey, msg: bytes, sig: FSSignature) -> bool:
    """Check ``sig`` over ``msg`` at the period it claims.  Never raises."""
    try:
        if not (0 <= sig.period < pk.periods):
            return False
        path = sig.path
        if len(path) != _depth(pk.periods) or len(sig.leaf_pk) != 32:
            return False
        node = _h(TAG_LEAF, sig.leaf_pk)
        index = sig.period
        for sibling in path:
            if len(sibling) != HASH_BYTES:
                return False
            if index & 1:
                node = _h(TAG_NODE, sibling, node)
            else:
                node = _h(TAG_NODE, node, sibling)
            index >>= 1
        if node != pk.root:
            return False
        Ed25519PublicKey.from_public_bytes(sig.leaf_pk).verify(
            sig.inner, _signed_message(pk.root, sig.signer, sig.period, msg)
        )
        return True
    except (InvalidSignature, ValueError, TypeError, AttributeError):
        return False


@lru_cache(maxsize=1 << 18)
def verify_cached(pk: FSPublicKey, msg: bytes, sig: FSSignature) -> bool:
    return verify(pk, msg, sig)

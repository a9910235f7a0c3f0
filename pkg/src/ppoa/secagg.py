"""One-time-pad secure aggregation over the integers modulo 2**64.

A trusted third party (TTP) derives one pseudorandom stream per pair of
roster members and hands each user the signed combination

    xi_i = sum_{o > i} PRG(s_io) - sum_{o < i} PRG(s_oi)   (mod 2**64)

so the masks of the full roster sum to zero.  Users add their mask to a
two's-complement encoded payload; the server adds all uploads and the masks
cancel, leaving the exact signed sum.  The self-mask term used by SecAgg for
dropout recovery is not generated: dropouts are not handled here.

The pair stream ``PRG(s_io)`` is AES-256 in counter mode under a key derived
with BLAKE2b from ``(master_seed, i)``; the stream for partner ``o`` starts at
counter block ``o * B`` where ``B`` blocks cover one stream.  This lets a
complete-graph row be produced in a single cipher call while every pair still
gets its own stream.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

PRG_NAME = "aes256-ctr/blake2b"
MODULUS = 2**64
_INT63 = 2**63

_UPLOAD_HEADER = struct.Struct("<QQQ")


class AggregationError(ValueError):
    """Raised when a set of uploads cannot be aggregated."""


def _seed_bytes(master_seed) -> bytes:
    if isinstance(master_seed, bytes):
        return master_seed
    if isinstance(master_seed, str):
        return master_seed.encode()
    return int(master_seed).to_bytes(16, "little", signed=True)


def _row_key(master_seed, i: int, label: bytes) -> bytes:
    h = hashlib.blake2b(digest_size=32, person=b"ppoa-pair-row")
    h.update(_seed_bytes(master_seed))
    h.update(label)
    h.update(int(i).to_bytes(8, "little"))
    return h.digest()


def _keystream(key: bytes, first_block: int, n_words: int) -> np.ndarray:
    counter = int(first_block).to_bytes(16, "big")
    enc = Cipher(algorithms.AES(key), modes.CTR(counter)).encryptor()
    return np.frombuffer(enc.update(bytes(8 * n_words)), dtype="<u8").astype(np.uint64, copy=False)


def pair_stream(master_seed, i: int, o: int, length: int, label: bytes = b"") -> np.ndarray:
    """The pseudorandom residues ``PRG(s_io)`` shared by users ``i < o``."""
    if not i < o:
        raise ValueError(f"pair streams are indexed with i < o, got ({i}, {o})")
    blocks = -(-8 * length // 16)
    return _keystream(_row_key(master_seed, i, label), o * blocks, length)


@dataclass
class MaskSet:
    """Zero-sum masks for one protocol phase.

    ``neighbors=None`` pairs every two roster members (the full construction).
    An integer ``k`` pairs each position only with the ``k`` positions on each
    side of it on a ring, which keeps per-user cost independent of roster
    size; masks still cancel because every pair term appears once with each
    sign.  Masks are derived on request so large rosters are never
    materialised at once.
    """

    roster: tuple
    length: int
    neighbors: int | None = None
    label: bytes = b""
    _master_seed: object = field(default=0, repr=False)

    def __post_init__(self):
        self._pos = {u: k for k, u in enumerate(self.roster)}

    @property
    def n(self) -> int:
        return len(self.roster)

    def partners(self, pos: int) -> list[int]:
        n = self.n
        if self.neighbors is None or 2 * self.neighbors >= n - 1:
            return [o for o in range(n) if o != pos]
        out = set()
        for step in range(1, self.neighbors + 1):
            out.add((pos + step) % n)
            out.add((pos - step) % n)
        out.discard(pos)
        return sorted(out)

    def mask(self, user) -> np.ndarray:
        """The mask ``xi`` dispatched to ``user``."""
        pos = self._pos[user]
        xi = np.zeros(self.length, dtype=np.uint64)
        for o in self.partners(pos):
            if o > pos:
                xi += pair_stream(self._master_seed, pos, o, self.length, self.label)
            else:
                xi -= pair_stream(self._master_seed, o, pos, self.length, self.label)
        return xi

    def iter_masks(self):
        """Yield ``(user, xi)`` in roster order, generating every pair stream
        once.  A stream is kept only until its second user has consumed it."""
        if self.neighbors is None or 2 * self.neighbors >= self.n - 1:
            yield from self.all_masks().items()
            return
        cache = {}
        xi = np.empty(self.length, dtype=np.uint64)
        for pos, user in enumerate(self.roster):
            xi = np.zeros_like(xi)
            for o in self.partners(pos):
                i, j = min(pos, o), max(pos, o)
                s = cache.pop((i, j), None)
                if s is None:
                    s = cache[(i, j)] = pair_stream(self._master_seed, i, j, self.length, self.label)
                if o > pos:
                    xi += s
                else:
                    xi -= s
            yield user, xi

    def all_masks(self) -> dict:
        """Every user's mask.  For the full construction each pair stream is
        generated exactly once (one cipher call per roster position)."""
        n, length = self.n, self.length
        if self.neighbors is not None and 2 * self.neighbors < n - 1:
            return {u: self.mask(u) for u in self.roster}
        xis = np.zeros((n, length), dtype=np.uint64)
        blocks = -(-8 * length // 16)
        for i in range(n - 1):
            key = _row_key(self._master_seed, i, self.label)
            if 16 * blocks == 8 * length:
                row = _keystream(key, (i + 1) * blocks, (n - 1 - i) * length)
                row = row.reshape(n - 1 - i, length)
            else:
                row = np.stack([
                    _keystream(key, o * blocks, length) for o in range(i + 1, n)
                ])
            xis[i] += row.sum(axis=0, dtype=np.uint64)
            xis[i + 1:] -= row
        return {u: xis[k] for k, u in enumerate(self.roster)}


def ttp_generate_masks(roster: Sequence, length: int, master_seed, *,
                       neighbors: int | None = None, label: bytes = b"") -> MaskSet:
    """Issue zero-sum masks of ``length`` residues for every roster member.

    The TTP only ever sees the roster and the vector length.
    """
    roster = tuple(roster)
    if len(roster) < 2:
        raise ValueError("secure aggregation needs at least 2 participants")
    if len(set(roster)) != len(roster):
        raise ValueError("roster contains duplicate user ids")
    if length < 1:
        raise ValueError("mask length must be positive")
    if neighbors is not None and neighbors < 1:
        raise ValueError("neighbors must be >= 1 or None")
    return MaskSet(roster, int(length), neighbors, label, master_seed)


def encode_signed(values) -> np.ndarray:
    """Embed signed integers into Z_{2**64} by two's complement."""
    arr = np.asarray(values)
    if arr.dtype.kind in "fc":
        raise TypeError("encode_signed expects integers, not floats")
    if arr.dtype == object or not np.issubdtype(arr.dtype, np.integer):
        ints = [int(v) for v in np.ravel(arr)]
        if any(not -_INT63 < v < _INT63 for v in ints):
            raise OverflowError("values must satisfy |v| < 2**63")
        return np.array([v % MODULUS for v in ints], dtype=np.uint64).reshape(arr.shape)
    if arr.dtype == np.uint64:
        raise TypeError("encode_signed expects signed integers")
    arr = arr.astype(np.int64, copy=False)
    if np.any(arr == np.iinfo(np.int64).min):
        raise OverflowError("values must satisfy |v| < 2**63")
    return arr.view(np.uint64)


def decode_signed(residues) -> np.ndarray:
    """Inverse of :func:`encode_signed`."""
    return np.asarray(residues, dtype=np.uint64).view(np.int64)


def mask_vector(plain, xi) -> np.ndarray:
    plain = np.asarray(plain, dtype=np.uint64)
    xi = np.asarray(xi, dtype=np.uint64)
    if plain.shape != xi.shape:
        raise ValueError(f"length mismatch: payload {plain.shape} vs mask {xi.shape}")
    return plain + xi


def modular_sum(vectors: Iterable) -> np.ndarray:
    total = None
    for v in vectors:
        v = np.asarray(v, dtype=np.uint64)
        if total is None:
            total = v.copy()
        elif v.shape != total.shape:
            raise AggregationError("uploads have unequal lengths")
        else:
            total += v
    if total is None:
        raise AggregationError("no uploads")
    return total


def check_roster(senders: Sequence, roster: Sequence) -> None:
    seen = set()
    for s in senders:
        if s in seen:
            raise AggregationError(f"duplicate upload from participant {s!r}")
        seen.add(s)
    missing = set(roster) - seen
    if missing:
        raise AggregationError(f"missing uploads from {sorted(missing)!r} (dropouts unsupported)")
    extra = seen - set(roster)
    if extra:
        raise AggregationError(f"uploads from non-members {sorted(extra)!r}")


def unmask_aggregate(uploads: Sequence[tuple], roster: Sequence) -> np.ndarray:
    """Sum ``(user, masked_vector)`` uploads from the whole roster.

    Masks cancel in the modular sum; the result is decoded to signed
    integers and equals the plain sum whenever every entry of it is below
    2**63 in magnitude.
    """
    uploads = list(uploads)
    check_roster([u for u, _ in uploads], roster)
    return decode_signed(modular_sum(v for _, v in uploads))


def encode_upload(round_id: int, user: int, residues) -> bytes:
    """Wire form: round id, user index, payload length (uint64 LE each),
    then the residues as little-endian uint64."""
    residues = np.asarray(residues, dtype=np.uint64)
    return (_UPLOAD_HEADER.pack(round_id, user, residues.size)
            + residues.astype("<u8", copy=False).tobytes())


def decode_upload(blob: bytes) -> tuple[int, int, np.ndarray]:
    if len(blob) < _UPLOAD_HEADER.size:
        raise ValueError("upload shorter than its header")
    round_id, user, n = _UPLOAD_HEADER.unpack_from(blob)
    body = blob[_UPLOAD_HEADER.size:]
    if len(body) != 8 * n:
        raise ValueError(f"upload declares {n} residues but carries {len(body)} bytes")
    return round_id, user, np.frombuffer(body, dtype="<u8").astype(np.uint64, copy=False)

"""Orthogonal aggregation: per-group sums hidden inside one global sum.

Each group ``g`` owns an integer attribute vector ``nu_g``; the vectors are
pairwise orthogonal and share the squared norm ``mu``.  A user in group ``g``
maps its quantized update ``theta`` (length d) to the length ``v*d`` vector
whose block ``l`` is ``theta_l * nu_g`` (:func:`map_up`).  After the server
adds every mapped vector, dotting each block with ``nu_g``
(:func:`map_down`) annihilates all other groups and leaves
``mu * sum(theta over group g)``.  Aggregating the attribute vectors
themselves yields the group sizes the same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quantizer import QuantSpec, dequantize

MAX_GENERATOR = 16
_I63 = 2**63


class IntegrityError(RuntimeError):
    """The broadcast aggregate is inconsistent with the group scheme."""


@dataclass(frozen=True)
class GroupScheme:
    """Public attribute vectors, one row per group."""

    vectors: np.ndarray
    mu: int

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.int64)
        object.__setattr__(self, "vectors", vec)
        if vec.ndim != 2 or vec.shape[0] != vec.shape[1] or vec.shape[0] < 2:
            raise ValueError("a scheme needs v >= 2 attribute vectors of length v")
        gram = vec @ vec.T
        expected = self.mu * np.eye(len(vec), dtype=np.int64)
        if self.mu <= 0 or not np.array_equal(gram, expected):
            raise ValueError("attribute vectors must be pairwise orthogonal with common squared norm mu > 0")

    @property
    def v(self) -> int:
        return len(self.vectors)

    def vector(self, group: int) -> np.ndarray:
        return self.vectors[group]

    def to_dict(self) -> dict:
        return {"v": self.v, "mu": int(self.mu), "vectors": self.vectors.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "GroupScheme":
        return cls(np.array(d["vectors"], dtype=np.int64), int(d["mu"]))


def make_two_group_scheme(p: int, q: int) -> GroupScheme:
    """``nu_0 = (p, q)`` and ``nu_1 = (-q, p)`` with ``mu = p**2 + q**2``."""
    p, q = int(p), int(q)
    if (p, q) == (0, 0):
        raise ValueError("generators (p, q) must not both be zero")
    if max(abs(p), abs(q)) > MAX_GENERATOR:
        raise ValueError(f"generators must satisfy |p|, |q| <= {MAX_GENERATOR}")
    return GroupScheme(np.array([[p, q], [-q, p]]), p * p + q * q)


def make_v_group_scheme(v: int, c: int = 1, p: int | None = None, q: int | None = None) -> GroupScheme:
    """Scaled standard basis ``c * e_g`` for ``v`` groups.

    For ``v == 2`` with explicit generators the rotation pair of
    :func:`make_two_group_scheme` is returned instead.
    """
    if v < 2:
        raise ValueError("need at least two groups")
    if v == 2 and p is not None:
        return make_two_group_scheme(p, 0 if q is None else q)
    if not 1 <= c <= MAX_GENERATOR:
        raise ValueError(f"scale c must lie in [1, {MAX_GENERATOR}]")
    return GroupScheme(c * np.eye(v, dtype=np.int64), c * c)


def _as_int_array(x, name: str) -> np.ndarray:
    arr = np.asarray(x)
    if arr.dtype.kind not in "iu" and arr.dtype != object:
        raise TypeError(f"{name} must hold integers")
    return arr


def _max_abs(arr: np.ndarray) -> int:
    if arr.size == 0:
        return 0
    return max(int(arr.max()), -int(arr.min()))


def map_up(nu, theta) -> np.ndarray:
    """Block ``l`` of the result is ``theta[l] * nu``."""
    nu = _as_int_array(nu, "nu").astype(np.int64)
    theta = _as_int_array(theta, "theta").ravel()
    if _max_abs(theta) * _max_abs(nu) >= _I63:
        raise OverflowError("mapped entries would exceed 2**63")
    return np.outer(theta.astype(np.int64), nu).ravel()


def map_down(nu, w) -> np.ndarray:
    """Dot every length-``v`` block of ``w`` with ``nu``."""
    nu = _as_int_array(nu, "nu").astype(np.int64)
    w = _as_int_array(w, "w").ravel()
    v = nu.size
    if w.size % v:
        raise ValueError(f"length {w.size} is not a multiple of v={v}")
    if _max_abs(w) * int(np.sum(np.abs(nu))) >= _I63:
        return (w.astype(object).reshape(-1, v) @ nu.astype(object))
    return w.astype(np.int64).reshape(-1, v) @ nu


def recover_count(nu, w_num, mu: int) -> int:
    """Group size from the aggregated attribute vectors."""
    num = int(np.dot(np.asarray(w_num, dtype=object), np.asarray(nu, dtype=object)))
    if num % mu:
        raise IntegrityError("aggregation integrity failure: count not divisible by mu")
    count = num // mu
    if count <= 0:
        raise IntegrityError(f"empty or corrupted group (recovered count {count})")
    return count


def recover_group_stats(nu, w_num, w_vec, mu: int, spec: QuantSpec | None) -> tuple[int, np.ndarray]:
    """``(count, average)`` of the group owning ``nu``.

    The projected sum is de-quantized first and divided by ``mu * count``
    afterwards; ``spec=None`` treats ``w_vec`` as already real-valued.
    """
    count = recover_count(nu, w_num, mu)
    projected = map_down(nu, w_vec)
    if spec is None:
        total = np.asarray(projected, dtype=np.float64)
    else:
        total = dequantize(np.asarray(projected, dtype=np.int64), spec)
    return count, total / (mu * count)


def fuse_groups(avg_own, avg_other, gamma: float) -> np.ndarray:
    """Convex blend ``(1 - gamma) * own + gamma * other``."""
    if not 0 <= gamma < 1:
        raise ValueError("gamma must lie in [0, 1)")
    own = np.asarray(avg_own, dtype=np.float64)
    if gamma == 0:
        return own.copy()
    return (1 - gamma) * own + gamma * np.asarray(avg_other, dtype=np.float64)

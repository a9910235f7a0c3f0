"""F2MF baseline: fairness penalty, learning-scale factor and noisy group
statistics.

Every client uploads four noisy scalars per round from which the server
estimates the group-0 mean performance ``A`` and the group-1 mean ``B``.
Clients then scale their recommendation gradients by
``D = 1 - lam * C * |A - B|**(rho - 1)`` so the weaker group learns faster.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

KINK_TOL = 1e-12


class DegenerateEstimate(ArithmeticError):
    pass


@dataclass
class FairnessState:
    A: float = 0.0
    B: float = 0.0
    lam: float = 0.5
    rho: int = 1
    sigma: float = 0.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.rho not in (1, 2):
            raise ValueError("rho must be 1 or 2")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.lam >= 1 and self.rho == 1:
            warnings.warn("lambda >= 1 with rho = 1 can make D non-positive and invert learning",
                          RuntimeWarning, stacklevel=2)


@dataclass
class NoisyStats:
    """One round of uploads; fields are scalars or per-user arrays."""

    dA_sum: np.ndarray
    dB_sum: np.ndarray
    dA_count: np.ndarray
    dB_count: np.ndarray


def fairness_loss(A: float, B: float, rho: int) -> float:
    if rho not in (1, 2):
        raise ValueError("rho must be 1 or 2")
    return abs(A - B) ** rho


def learning_scale(A: float, B: float, lam: float, rho: int, in_g0: bool, tol: float = KINK_TOL) -> float:
    """Multiplier applied to a client's recommendation gradients.

    At ``A == B`` (within ``tol``) the zero subgradient of ``|A - B|`` is
    used, giving ``D = 1``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    gap = abs(A - B)
    if gap < tol:
        return 1.0
    sign = (-1) ** (A < B) * (-1) ** (not in_g0)
    return 1.0 - lam * rho * sign * gap ** (rho - 1)


def noisy_stats_upload(E_u, in_g0, sigma: float, round_noises: tuple[float, float],
                       rng: np.random.Generator) -> NoisyStats:
    """Noisy per-user contributions to the group sums and counts.

    ``E_u`` and ``in_g0`` may be arrays (one entry per user); the round
    noises ``(eps_A, eps_B)`` are shared by every user of the round.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    E_u = np.asarray(E_u, dtype=np.float64)
    g0 = np.asarray(in_g0, dtype=bool)
    shape = np.broadcast(E_u, g0).shape
    eps = rng.normal(0.0, sigma, size=(4,) + shape) if sigma > 0 else np.zeros((4,) + shape)
    eps_a, eps_b = round_noises
    ind0 = g0.astype(np.float64)
    ind1 = 1.0 - ind0
    return NoisyStats(
        dA_sum=ind0 * E_u + eps[0] + eps_a,
        dB_sum=ind1 * E_u + eps[1] + eps_b,
        dA_count=ind0 + eps[2],
        dB_count=ind1 + eps[3],
    )


def draw_round_noises(sigma: float, rng: np.random.Generator) -> tuple[float, float]:
    if sigma == 0:
        return 0.0, 0.0
    a, b = rng.normal(0.0, sigma, size=2)
    return float(a), float(b)


def server_estimate_AB(stats: NoisyStats, min_count: float = 1e-6) -> tuple[float, float]:
    """Ratio estimates ``A = sum dA_sum / sum dA_count`` (and likewise B)."""
    a_cnt = float(np.sum(stats.dA_count))
    b_cnt = float(np.sum(stats.dB_count))
    if np.size(stats.dA_count) == 0:
        raise ValueError("no uploads")
    if abs(a_cnt) < min_count or abs(b_cnt) < min_count:
        raise DegenerateEstimate("degenerate count estimate")
    return float(np.sum(stats.dA_sum)) / a_cnt, float(np.sum(stats.dB_sum)) / b_cnt


def sigma_bounds(F_u: float, delta1: float, H: float, X_bar: float, n: int, delta2: float) -> tuple[float, float]:
    """Admissible noise range ``(sigma_min, sigma_max)`` used by F2MF."""
    if not 0 < delta1 < 0.5:
        raise ValueError("delta1 must lie in (0, 0.5)")
    sigma_min = F_u / (math.sqrt(2) * float(ndtri(0.5 + delta1)))
    sigma_max = H * abs(X_bar) * math.sqrt(n * delta2)
    return sigma_min, sigma_max

"""Sensitive-attribute inference against F2MF's noisy count uploads.

A group-0 user uploads ``(1 + e3, e4)`` and a group-1 user ``(e3, 1 + e4)``
with ``e ~ N(0, sigma)``.  Values beyond the 3-sigma band of the "absent"
hypothesis reveal the group at the one-sided 99.865% level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .fairness import noisy_stats_upload

CONFIDENCE = 1 - (1 - 0.9973) / 2

# Abramowitz & Stegun 26.2.17, |error| < 7.5e-8
_P = 0.2316419
_B = (0.319381530, -0.356563782, 1.781477937, -1.821255978, 1.330274429)
_INV_SQRT_2PI = 1 / math.sqrt(2 * math.pi)


def std_normal_cdf(z):
    """Standard normal CDF by a rational approximation (abs. error < 1e-7)."""
    z = np.asarray(z, dtype=np.float64)
    x = np.abs(z)
    t = 1.0 / (1.0 + _P * x)
    poly = t * (_B[0] + t * (_B[1] + t * (_B[2] + t * (_B[3] + t * _B[4]))))
    upper = _INV_SQRT_2PI * np.exp(-0.5 * x * x) * poly
    out = np.where(z >= 0, 1.0 - upper, upper)
    return float(out) if out.ndim == 0 else out


def normal_cdf(x, mean: float = 0.0, sd: float = 1.0):
    return std_normal_cdf((np.asarray(x, dtype=np.float64) - mean) / sd)


class Decision(str, Enum):
    EXPOSED_G0 = "exposed_G0"
    EXPOSED_G1 = "exposed_G1"
    UNKNOWN = "unknown"


@dataclass(frozen=True)
class AttackVerdict:
    decision: Decision
    confidence: float


@dataclass
class AttackReport:
    n: int
    sigma: float
    exposed: float
    correct: float
    trials: int = 1

    @property
    def exposed_pct(self) -> float:
        return self.exposed / self.n

    @property
    def accuracy(self) -> float | None:
        return self.correct / self.exposed if self.exposed > 0 else None


def _decide(dA, dB, sigma):
    """Vectorised decision: +1 group 0, -1 group 1, 0 unknown."""
    dA = np.asarray(dA, dtype=np.float64)
    dB = np.asarray(dB, dtype=np.float64)
    if sigma == 0:
        g0 = dA == 1
        g1 = dB == 1
        return np.where(g0 & ~g1, 1, np.where(g1 & ~g0, -1, 0))
    hi, lo = 3 * sigma, 1 - 3 * sigma
    # margin of each fired condition, -inf where it did not fire
    m0 = np.maximum(np.where(dA > hi, dA - hi, -np.inf), np.where(dB < lo, lo - dB, -np.inf))
    m1 = np.maximum(np.where(dB > hi, dB - hi, -np.inf), np.where(dA < lo, lo - dA, -np.inf))
    return np.where(m0 > m1, 1, np.where(m1 > m0, -1, 0))


def infer_gender(dA_count: float, dB_count: float, sigma: float) -> AttackVerdict:
    """Classify one user from its uploaded count pair.

    If both hypotheses fire, the one whose threshold is exceeded by the
    larger margin wins; an exact tie is reported as unknown.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    d = int(_decide(dA_count, dB_count, sigma))
    if d == 1:
        return AttackVerdict(Decision.EXPOSED_G0, CONFIDENCE)
    if d == -1:
        return AttackVerdict(Decision.EXPOSED_G1, CONFIDENCE)
    return AttackVerdict(Decision.UNKNOWN, 0.0)


def theoretical_exposure(sigma: float) -> float:
    """Closed-form share of exposed users at noise level ``sigma``."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return 1.0
    p1 = 1.0 - normal_cdf(3 * sigma, 1.0, sigma)
    p2 = normal_cdf(1 - 3 * sigma, 0.0, sigma)
    return 1.0 - (1.0 - p1) * (1.0 - p2)


def run_attack_experiment(n: int, sigma: float, trials: int = 1, g0_ratio: float = 0.717,
                          rng: np.random.Generator | None = None) -> AttackReport:
    """Simulate ``trials`` rounds of uploads from ``n`` users and attack them.

    Exposed and correct counts are averaged over trials.
    """
    if n < 1 or trials < 1:
        raise ValueError("need n >= 1 and trials >= 1")
    if not 0 <= g0_ratio <= 1:
        raise ValueError("g0_ratio must lie in [0, 1]")
    rng = np.random.default_rng() if rng is None else rng
    n_g0 = int(round(n * g0_ratio))
    exposed = correct = 0
    for _ in range(trials):
        truth = np.zeros(n, dtype=bool)
        truth[rng.choice(n, size=n_g0, replace=False)] = True
        stats = noisy_stats_upload(np.zeros(n), truth, sigma, (0.0, 0.0), rng)
        d = _decide(stats.dA_count, stats.dB_count, sigma)
        hit = d != 0
        exposed += int(hit.sum())
        correct += int(((d == 1) & truth).sum() + ((d == -1) & ~truth).sum())
    return AttackReport(n=n, sigma=float(sigma), exposed=exposed / trials,
                        correct=correct / trials, trials=trials)

"""Run configuration: one JSON document, validated on load.

Example::

    {
      "mode": "ppoa",
      "dataset": {"format": "ml-100k", "path": "data/ml-100k"},
      "train": {"lr": 0.001, "local_epochs": 3},
      "quant": {"h": 16, "kappa": 1.0},
      "scheme": {"p": 1, "q": 2},
      "rounds": 100,
      "seed": 0,
      "output": {"dir": "runs/ppoa-s0"}
    }

Every omitted field takes the default below; the fully resolved config is
echoed into the run summary.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .mf import TrainConfig
from .orthoagg import MAX_GENERATOR, GroupScheme, make_two_group_scheme, make_v_group_scheme
from .quantizer import QuantSpec

MODES = ("fedmf", "f2mf", "ppoa")
DATASET_FORMATS = ("ml-100k", "ml-1m", "csv", "synthetic")
_I63 = 2**63


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetSpec:
    format: str = "ml-100k"
    path: str = "data/ml-100k"
    min_interactions: int = 10
    split: str = "leave_one_out"
    # csv only
    ratings_file: str = "ratings.csv"
    users_file: str = "users.csv"
    columns: dict = field(default_factory=dict)
    # synthetic only
    users: int = 20
    items: int = 50
    per_user: int = 12
    g0_ratio: float = 0.7

    def __post_init__(self):
        if self.format not in DATASET_FORMATS:
            raise ConfigError(f"dataset.format must be one of {DATASET_FORMATS}")
        if self.min_interactions < 2:
            raise ConfigError("dataset.min_interactions must be >= 2")
        if self.split not in ("leave_one_out", "temporal_80_10_10"):
            raise ConfigError("dataset.split must be leave_one_out or temporal_80_10_10")


@dataclass(frozen=True)
class SchemeSpec:
    """Either generators ``p, q`` (two groups) or ``v, c`` (scaled basis).

    Missing generators are drawn by the TTP from ``[1, 16]``.
    """

    p: int | None = None
    q: int | None = None
    v: int = 2
    c: int = 1

    def __post_init__(self):
        if self.v < 2:
            raise ConfigError("scheme.v must be >= 2")
        if self.v > 2 and (self.p is not None or self.q is not None):
            raise ConfigError("generators p, q only apply to two groups")
        for name in ("p", "q"):
            x = getattr(self, name)
            if x is not None and abs(x) > MAX_GENERATOR:
                raise ConfigError(f"scheme.{name} must satisfy |{name}| <= {MAX_GENERATOR}")
        if (self.p, self.q) == (0, 0):
            raise ConfigError("scheme generators must not both be zero")
        if not 1 <= self.c <= MAX_GENERATOR:
            raise ConfigError(f"scheme.c must lie in [1, {MAX_GENERATOR}]")

    def build(self, rng=None) -> GroupScheme:
        if self.v > 2:
            return make_v_group_scheme(self.v, self.c)
        p, q = self.p, self.q
        if p is None or q is None:
            if rng is None:
                raise ConfigError("generators are missing and no TTP generator was supplied")
            drawn = rng.integers(1, MAX_GENERATOR + 1, size=2)
            p = int(drawn[0]) if p is None else p
            q = int(drawn[1]) if q is None else q
        return make_two_group_scheme(p, q)


@dataclass(frozen=True)
class FairSpec:
    lam: float = 0.5
    rho: int = 1
    sigma: float = 0.07

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("f2mf.lam must be non-negative")
        if self.rho not in (1, 2):
            raise ConfigError("f2mf.rho must be 1 or 2")
        if self.sigma < 0:
            raise ConfigError("f2mf.sigma must be non-negative")


@dataclass(frozen=True)
class RunConfig:
    mode: str = "ppoa"
    dataset: DatasetSpec = DatasetSpec()
    train: TrainConfig = TrainConfig()
    quant: QuantSpec = QuantSpec()
    quantize: bool = True          # False: aggregate the raw float deltas (ablation)
    scheme: SchemeSpec = SchemeSpec()
    f2mf: FairSpec = FairSpec()
    gamma: float = 0.0
    rounds: int = 100
    eval_every: int = 1
    seed: int = 0
    seeds: dict = field(default_factory=dict)  # optional per-purpose overrides
    mask_neighbors: int | None = 1  # ring masks; None pairs every two users
    debug_verify: bool = False
    chunk_size: int = 64
    max_users: int = 10**6
    output_dir: str | None = None
    export_embeddings: bool = True

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.chunk_size < 1:
            raise ConfigError("chunk_size must be >= 1")
        if not 0 <= self.gamma < 1:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.gamma > 0 and self.scheme.v != 2:
            raise ConfigError("group fusion needs exactly two groups")
        if self.mask_neighbors is not None and self.mask_neighbors < 1:
            raise ConfigError("mask_neighbors must be >= 1 or null")
        unknown = set(self.seeds) - set(SEED_PURPOSES)
        if unknown:
            raise ConfigError(f"unknown seed purposes {sorted(unknown)}; expected {SEED_PURPOSES}")
        check_capacity(self.max_users, self.quant, MAX_GENERATOR if self.scheme.v == 2 else self.scheme.c)

    def seed_for(self, purpose: str) -> int:
        if purpose in self.seeds:
            return int(self.seeds[purpose])
        return int(self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)


SEED_PURPOSES = ("init", "train", "eval", "masks", "noise")


def check_capacity(n: int, spec: QuantSpec, max_entry: int) -> None:
    """Every aggregated entry must stay below 2**63 in magnitude.

    A mapped entry is at most ``L * max|nu|``; ``n`` of them are summed.
    """
    bound = n * spec.levels * max_entry
    if bound >= _I63:
        raise ConfigError(f"capacity exceeded: {n} users x {spec.levels} levels x {max_entry} "
                          f"= {bound} >= 2**63")


def _sub(cls, raw, name):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{name} must be an object")
    known = set(cls.__dataclass_fields__)
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown {name} field(s): {sorted(extra)}")
    try:
        return cls(**raw)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    raw = dict(raw)
    out = raw.pop("output", None) or {}
    subs = {
        "dataset": _sub(DatasetSpec, raw.pop("dataset", None), "dataset"),
        "train": _sub(TrainConfig, raw.pop("train", None), "train"),
        "quant": _sub(QuantSpec, raw.pop("quant", None), "quant"),
        "scheme": _sub(SchemeSpec, raw.pop("scheme", None), "scheme"),
        "f2mf": _sub(FairSpec, raw.pop("f2mf", None), "f2mf"),
    }
    if "dir" in out:
        raw["output_dir"] = out["dir"]
    if "export_embeddings" in out:
        raw["export_embeddings"] = bool(out["export_embeddings"])
    extra = set(raw) - set(RunConfig.__dataclass_fields__)
    if extra:
        raise ConfigError(f"unknown config field(s): {sorted(extra)}")
    try:
        return RunConfig(**raw, **subs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(raw)

"""Round-based federated training: FedMF, F2MF and PPOA.

* ``fedmf``: clients train on the shared item matrix and the server applies
  the plain average of their quantized item deltas.
* ``f2mf``: as fedmf, with every client's step scaled by the fairness factor
  ``D`` and four noisy performance statistics uploaded per round.
* ``ppoa``: every group keeps its own item matrix.  Clients quantize their
  delta, map it into their group's subspace, add a zero-sum mask issued by
  the TTP and send the result through :class:`~ppoa.server.AggregationServer`.
  The broadcast sum is projected back per group to obtain each group's
  member count and average delta.

All randomness is drawn from generators keyed by (purpose seed, purpose,
round, user), so results do not depend on how clients are batched.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import dataset as ds_mod
from .config import RunConfig, check_capacity
from .fairness import (DegenerateEstimate, draw_round_noises, learning_scale,
                       noisy_stats_upload, server_estimate_AB)
from .mf import EvalResult, evaluate_users, group_report, train_cohort
from .orthoagg import IntegrityError, fuse_groups, map_up, recover_group_stats
from .quantizer import dequantize, quantize
from .secagg import PRG_NAME, decode_signed, encode_signed, encode_upload, mask_vector, ttp_generate_masks
from .server import AggregationServer

# generator purposes
_ITEMS, _USER, _TRAIN, _EVAL, _NOISE, _ROUND_NOISE, _TTP = range(7)


def user_key(raw_id: str) -> int:
    """Stable non-negative integer for a raw user id (used to key RNGs)."""
    return int(raw_id) if raw_id.isdigit() else zlib.crc32(raw_id.encode()) + 2**40


def oracle_group_average(deltas, labels, v: int | None = None, exact: bool = False) -> list:
    """Per-group arithmetic means of plain (unquantized) deltas.

    ``exact=True`` sums in rational arithmetic and rounds once at the end.
    """
    labels = np.asarray(labels)
    v = int(labels.max()) + 1 if v is None else v
    deltas = [np.asarray(x, dtype=np.float64) for x in deltas]
    out = []
    for g in range(v):
        members = [x for x, lab in zip(deltas, labels) if lab == g]
        if not members:
            raise ValueError(f"group {g} has no members")
        if exact:
            flat = [x.ravel() for x in members]
            tot = [sum(Fraction(float(x[k])) for x in flat) for k in range(flat[0].size)]
            avg = np.array([float(t / len(members)) for t in tot]).reshape(members[0].shape)
        else:
            acc = np.zeros_like(members[0])
            for x in members:
                acc += x
            avg = acc / len(members)
        out.append(avg)
    return out


def ppoa_payload(nu, q_rows, touched, m: int, d: int) -> np.ndarray:
    """Client upload before masking: the mapped quantized delta followed by
    the attribute vector.  ``q_rows`` holds the quantized rows ``touched``;
    every other row is zero and maps to zero blocks."""
    nu = np.asarray(nu, dtype=np.int64)
    v = nu.size
    payload = np.zeros(v * m * d + v, dtype=np.int64)
    payload[:-v].reshape(m, d * v)[touched] = map_up(nu, q_rows).reshape(-1, d * v)
    payload[-v:] = nu
    return payload


def ppoa_recover(W, scheme, spec, shape, expected_sizes=None) -> tuple[list, list]:
    """Per-group ``(counts, average deltas)`` from the broadcast sum ``W``.

    With ``expected_sizes`` a recovered count that disagrees with the roster
    bookkeeping aborts the round.
    """
    v = scheme.v
    W_vec, W_num = W[:-v], W[-v:]
    counts, avgs = [], []
    for g in range(v):
        cnt, avg = recover_group_stats(scheme.vector(g), W_num, W_vec, scheme.mu, spec)
        if expected_sizes is not None and cnt != expected_sizes[g]:
            raise IntegrityError(f"group {g}: recovered count {cnt} but roster holds {expected_sizes[g]}")
        counts.append(cnt)
        avgs.append(avg.reshape(shape))
    return counts, avgs


@dataclass
class RoundReport:
    round: int
    eval: EvalResult | None
    loss: float
    clipped: int
    counts: list
    timings: dict = field(default_factory=dict)
    A: float | None = None
    B: float | None = None
    D_hist: tuple | None = None      # clients with D < 1, D == 1, D > 1
    oracle_err: float | None = None  # debug only: max |recovered - plain group mean|


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.6g}"


class Federation:
    """Mutable state of one run; call :meth:`run` or drive :meth:`run_round`."""

    def __init__(self, cfg: RunConfig, dataset: ds_mod.InteractionDataset | None = None):
        self.cfg = cfg
        self.ds = load_dataset(cfg) if dataset is None else dataset
        ds = self.ds
        self.n, self.m, self.d = ds.n, ds.m, cfg.train.d
        self.labels = np.asarray(ds.group_label, dtype=np.int64)
        self.keys = [user_key(u) for u in ds.user_ids]

        self.scheme = None
        if cfg.mode == "ppoa":
            self.scheme = cfg.scheme.build(np.random.default_rng([cfg.seed_for("masks"), _TTP]))
            self.v = self.scheme.v
            check_capacity(self.n, cfg.quant, int(np.abs(self.scheme.vectors).max()))
        else:
            self.v = int(self.labels.max()) + 1
        if self.labels.min() < 0 or self.labels.max() >= self.v:
            raise ValueError(f"group labels must lie in [0, {self.v})")
        self.sizes = np.bincount(self.labels, minlength=self.v)
        if cfg.mode == "ppoa" and np.any(self.sizes == 0):
            raise ValueError(f"empty group(s): {np.flatnonzero(self.sizes == 0).tolist()}")

        init = cfg.seed_for("init")
        std = cfg.train.init_std
        M0 = np.random.default_rng([init, _ITEMS]).normal(0.0, std, size=(self.m, self.d))
        self.U = np.stack([np.random.default_rng([init, _USER, k]).normal(0.0, std, size=self.d)
                           for k in self.keys])
        if cfg.mode == "ppoa":
            self.matrices = [M0.copy() for _ in range(self.v)]
            self.matrix_of_user = self.labels.copy()
        else:
            self.matrices = [M0]
            self.matrix_of_user = np.zeros(self.n, dtype=np.int64)

        ev = cfg.seed_for("eval")
        self.eval_negatives = np.stack([
            ds_mod.sample_negatives(ds, u, cfg.train.eval_negatives,
                                    np.random.default_rng([ev, _EVAL, self.keys[u]]))
            for u in range(self.n)
        ])
        self.A = self.B = None
        self.server = AggregationServer()
        self.round = 0
        self.reports: list[RoundReport] = []

    # -- client side ---------------------------------------------------------

    def _train_all(self, r: int, scales):
        """Train every client (roster order, in chunks); yields per client
        ``(user, touched rows, row delta)`` and stores user vectors/losses."""
        cfg = self.cfg
        seed = cfg.seed_for("train")
        self.last_loss = np.zeros(self.n)
        for s in range(0, self.n, cfg.chunk_size):
            users = np.arange(s, min(self.n, s + cfg.chunk_size))
            rngs = [np.random.default_rng([seed, _TRAIN, r, self.keys[u]]) for u in users]
            which = self.matrix_of_user[users]
            res = train_cohort(self.matrices, self.U[users], [self.ds.train_positives[u] for u in users],
                               cfg.train, rngs, scales[users], which=which)
            self.U[users] = res.user_vecs
            self.last_loss[users] = res.loss
            for c, u in enumerate(users):
                yield int(u), res.touched[c], res.row_delta(c)

    # -- rounds --------------------------------------------------------------

    def run_round(self) -> RoundReport:
        self.round += 1
        r = self.round
        cfg = self.cfg
        t0 = time.perf_counter()
        scales = np.ones(self.n)
        if cfg.mode == "f2mf" and self.A is not None:
            f = cfg.f2mf
            scales = np.array([learning_scale(self.A, self.B, f.lam, f.rho, g == 0) for g in self.labels])

        if cfg.mode == "ppoa" and cfg.quantize:
            report = self._round_ppoa(r, scales)
        else:
            report = self._round_plain(r, scales)
        report.loss = float(np.mean(self.last_loss))

        if cfg.mode == "f2mf":
            self._fairness_stats(r, scales, report)
        t = time.perf_counter()
        if r % cfg.eval_every == 0 or r == cfg.rounds:
            report.eval = self.evaluate()
        report.timings["eval"] = time.perf_counter() - t
        report.timings["total"] = time.perf_counter() - t0
        self.reports.append(report)
        return report

    def _round_plain(self, r: int, scales) -> RoundReport:
        """Cleartext aggregation: global average (fedmf/f2mf) or per-group
        average (ppoa ablation without quantization)."""
        cfg, spec = self.cfg, self.cfg.quant
        groups = len(self.matrices)
        qsum = [np.zeros((self.m, self.d), dtype=np.int64) for _ in range(groups)]
        fsum = [np.zeros((self.m, self.d)) for _ in range(groups)]
        clipped = 0
        t = time.perf_counter()
        for u, touched, rd in self._train_all(r, scales):
            k = self.matrix_of_user[u]
            if cfg.quantize:
                q, c = quantize(rd, spec, return_clipped=True)
                qsum[k][touched] += q
                clipped += c
            else:
                fsum[k][touched] += rd
        t_train = time.perf_counter() - t
        t = time.perf_counter()
        for k in range(groups):
            cnt = self.sizes[k] if groups > 1 else self.n
            avg = dequantize(qsum[k], spec) / cnt if cfg.quantize else fsum[k] / cnt
            self.matrices[k] = self.matrices[k] + avg
        return RoundReport(r, None, 0.0, clipped, self.sizes.tolist(),
                           {"train+upload": t_train, "aggregate": time.perf_counter() - t})

    def _round_ppoa(self, r: int, scales) -> RoundReport:
        cfg, spec, scheme = self.cfg, self.cfg.quant, self.scheme
        v, m, d = self.v, self.m, self.d
        length = v * m * d + v
        roster = list(range(self.n))
        t = time.perf_counter()
        masks = ttp_generate_masks(roster, length, cfg.seed_for("masks"),
                                   neighbors=cfg.mask_neighbors, label=f"round-{r}".encode())
        mask_iter = masks.iter_masks()
        self.server.open_round(r, roster, length)
        plain = np.zeros(length, dtype=np.int64) if cfg.debug_verify else None
        fsum = [np.zeros((m, d)) for _ in range(v)] if cfg.debug_verify else None
        clipped = 0
        for u, touched, rd in self._train_all(r, scales):
            g = self.labels[u]
            q, c = quantize(rd, spec, return_clipped=True)
            clipped += c
            owner, xi = next(mask_iter)
            if owner != u:
                raise IntegrityError(f"mask for {owner} handed to {u}")
            payload = ppoa_payload(scheme.vector(g), q, touched, m, d)
            self.server.receive(encode_upload(r, u, mask_vector(encode_signed(payload), xi)))
            if plain is not None:
                plain += payload
                fsum[g][touched] += rd
        t_up = time.perf_counter() - t

        t = time.perf_counter()
        W = decode_signed(self.server.close_round())
        t_agg = time.perf_counter() - t

        t = time.perf_counter()
        if plain is not None and not np.array_equal(W, plain):
            raise IntegrityError("masks did not cancel: broadcast sum differs from plain sum")
        counts, avgs = ppoa_recover(W, scheme, spec, (m, d), self.sizes)
        err = None
        if fsum is not None:
            err = max(float(np.max(np.abs(avgs[g] - fsum[g] / self.sizes[g]))) for g in range(v))
        for g in range(v):
            upd = fuse_groups(avgs[g], avgs[1 - g], cfg.gamma) if cfg.gamma > 0 else avgs[g]
            self.matrices[g] = self.matrices[g] + upd
        timings = {"train+upload": t_up, "aggregate": t_agg, "recover": time.perf_counter() - t}
        return RoundReport(r, None, 0.0, clipped, counts, timings, oracle_err=err)

    def _fairness_stats(self, r: int, scales, report: RoundReport) -> None:
        f = self.cfg.f2mf
        seed = self.cfg.seed_for("noise")
        E = 1.0 - self.last_loss
        eps_t = draw_round_noises(f.sigma, np.random.default_rng([seed, _ROUND_NOISE, r]))
        stats = noisy_stats_upload(E, self.labels == 0, f.sigma, eps_t, np.random.default_rng([seed, _NOISE, r]))
        try:
            self.A, self.B = server_estimate_AB(stats)
        except DegenerateEstimate:
            self.A = self.B = None  # keep D = 1 next round
        report.A, report.B = self.A, self.B
        report.D_hist = (int(np.sum(scales < 1)), int(np.sum(scales == 1)), int(np.sum(scales > 1)))

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, matrix_of_user=None) -> EvalResult:
        which = self.matrix_of_user if matrix_of_user is None else matrix_of_user
        hr, ndcg = evaluate_users(self.U, self.matrices, which, self.ds.test_item,
                                  self.eval_negatives, self.cfg.train.top_k)
        return group_report(hr, ndcg, self.labels, self.v, allow_empty=self.cfg.mode != "ppoa")

    def run(self, progress=None) -> list[RoundReport]:
        while self.round < self.cfg.rounds:
            rep = self.run_round()
            if progress is not None:
                progress(rep)
        return self.reports


def swap_evaluate(fed: Federation) -> tuple[EvalResult, EvalResult]:
    """``(matched, swapped)``: every user scored with its own group's item
    matrix, then with the other group's."""
    if fed.cfg.mode != "ppoa":
        raise ValueError("swap evaluation needs a ppoa run")
    if fed.v != 2:
        raise ValueError("swap evaluation needs exactly two groups")
    return fed.evaluate(fed.labels), fed.evaluate(1 - fed.labels)


def load_dataset(cfg: RunConfig) -> ds_mod.InteractionDataset:
    spec = cfg.dataset
    root = Path(spec.path)
    if spec.format == "synthetic":
        recs, labels = ds_mod.synthetic_records(spec.users, spec.items, spec.per_user,
                                                spec.g0_ratio, cfg.seed_for("init"))
    elif spec.format == "ml-100k":
        recs, labels = ds_mod.load_movielens_100k(root)
    elif spec.format == "ml-1m":
        recs, labels = ds_mod.load_movielens_1m(root)
    else:
        recs = ds_mod.parse_ratings((root / spec.ratings_file).read_bytes(), "csv", spec.columns)
        labels = ds_mod.load_group_labels((root / spec.users_file).read_bytes(), "csv", spec.columns)
    return ds_mod.build_dataset(recs, labels, spec.min_interactions, spec.split)


# -- output --------------------------------------------------------------------

def rounds_csv(reports, v: int) -> str:
    cols = ["round"] + EvalResult.csv_fields(v) + ["loss", "clipped"] + [f"count_g{g}" for g in range(v)]
    lines = [",".join(cols)]
    for rep in reports:
        if rep.eval is None:
            continue
        row = rep.eval.row()
        vals = [rep.round] + [row[c] for c in EvalResult.csv_fields(v)] + [rep.loss, rep.clipped]
        vals += list(rep.counts) + [""] * (v - len(rep.counts))
        lines.append(",".join(_fmt(x) if x != "" else "" for x in vals))
    return "\n".join(lines) + "\n"


def fairness_csv(reports) -> str:
    lines = ["round,A,B,D_below_1,D_equal_1,D_above_1"]
    for rep in reports:
        a = "" if rep.A is None else _fmt(rep.A)
        b = "" if rep.B is None else _fmt(rep.B)
        lines.append(",".join([str(rep.round), a, b] + [str(x) for x in rep.D_hist]))
    return "\n".join(lines) + "\n"


def matrix_csv(M) -> str:
    return "\n".join(",".join(_fmt(x) for x in row) for row in M) + "\n"


def summarize(fed: Federation, swap=None) -> dict:
    last = next((r for r in reversed(fed.reports) if r.eval is not None), None)
    out = {
        "config": fed.cfg.to_dict(),
        "dataset": fed.ds.summary(),
        "prg": PRG_NAME,
        "scheme": fed.scheme.to_dict() if fed.scheme is not None else None,
        "rounds_run": fed.round,
        "final": last.eval.row() if last else None,
        "timings": [dict(round=r.round, **{k: round(x, 4) for k, x in r.timings.items()})
                    for r in fed.reports],
        "seconds_total": round(sum(r.timings.get("total", 0.0) for r in fed.reports), 3),
    }
    if swap is not None:
        matched, swapped = swap
        out["swap"] = {"matched": matched.row(), "swapped": swapped.row(),
                       "relative_drop_ndcg": 1 - swapped.overall_ndcg / matched.overall_ndcg
                       if matched.overall_ndcg > 0 else None}
    return out


def write_outputs(fed: Federation, out_dir, swap=None) -> dict:
    import json
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "rounds.csv").write_text(rounds_csv(fed.reports, fed.v))
    if fed.cfg.mode == "f2mf":
        (out / "fairness.csv").write_text(fairness_csv(fed.reports))
    summary = summarize(fed, swap)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=_json_default) + "\n")
    if fed.cfg.export_embeddings:
        if fed.cfg.mode == "ppoa":
            for g, M in enumerate(fed.matrices):
                (out / f"embeddings_g{g}.csv").write_text(matrix_csv(M))
        else:
            (out / "embeddings.csv").write_text(matrix_csv(fed.matrices[0]))
    return summary


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, bytes):
        return x.decode()
    raise TypeError(type(x).__name__)


def run_federation(cfg: RunConfig, dataset=None, progress=None) -> tuple[Federation, dict]:
    """Run every round, write outputs if ``cfg.output_dir`` is set and return
    the federation with its summary."""
    fed = Federation(cfg, dataset)
    fed.run(progress)
    swap = swap_evaluate(fed) if cfg.mode == "ppoa" and fed.v == 2 else None
    if cfg.output_dir:
        summary = write_outputs(fed, cfg.output_dir, swap)
    else:
        summary = summarize(fed, swap)
    return fed, summary

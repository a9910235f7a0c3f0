"""Acceptance criteria 1-11.

Each test records one PASS/FAIL line; the block of lines is printed when
the module finishes.  Criteria 7-11 need MovieLens-100K under data/ml-100k
and 8-10 are marked slow (they train seven 100-round federations).
"""

import math
import time

import numpy as np
import pytest

from ppoa.attack import run_attack_experiment, theoretical_exposure
from ppoa.config import config_from_dict
from ppoa.dataset import build_dataset, load_movielens_100k
from ppoa.fairness import learning_scale
from ppoa.federation import Federation, rounds_csv, run_federation
from ppoa.orthoagg import make_two_group_scheme, make_v_group_scheme, map_down, map_up
from ppoa.quantizer import QuantSpec, dequantize, quantize
from ppoa.secagg import encode_signed, mask_vector, ttp_generate_masks, unmask_aggregate

LINES = {}


def record(n, name, ok, detail, seconds):
    LINES[n] = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail} [{seconds:.1f}s]"
    return ok


@pytest.fixture(scope="module", autouse=True)
def print_criteria(request):
    yield
    tr = request.config.pluginmanager.get_plugin("terminalreporter")
    out = tr.write_line if tr is not None else print
    out("")
    out("=== acceptance criteria ===")
    for n in range(1, 12):
        out(LINES.get(n, f"criterion {n:2d} SKIP  (not run)"))


# -- 1 ------------------------------------------------------------------------------

def test_c01_orthogonal_recovery_exact():
    t = time.perf_counter()
    rng = np.random.default_rng(101)
    bad = 0
    for _ in range(200):
        v = int(rng.choice([2, 3, 5]))
        if v == 2:
            p, q = rng.integers(-16, 17, size=2)
            if p == 0 and q == 0:
                p = 1
            scheme = make_two_group_scheme(p, q)
        else:
            scheme = make_v_group_scheme(v, int(rng.integers(1, 17)))
        d = int(rng.integers(1, 51))
        sizes = rng.integers(0, 21, size=v)
        W = np.zeros(d * v, dtype=np.int64)
        W_num = np.zeros(v, dtype=np.int64)
        truth = np.zeros((v, d), dtype=np.int64)
        for g in range(v):
            for _ in range(sizes[g]):
                theta = rng.integers(-1000, 1001, size=d)
                W += map_up(scheme.vector(g), theta)
                W_num += scheme.vector(g)
                truth[g] += theta
        for g in range(v):
            nu = scheme.vector(g)
            if not np.array_equal(map_down(nu, W), scheme.mu * truth[g]):
                bad += 1
            if int(nu @ W_num) != scheme.mu * sizes[g]:
                bad += 1
    dt = time.perf_counter() - t
    ok = record(1, "orthogonal recovery", bad == 0 and dt < 5, f"{bad} mismatches in 200 instances", dt)
    assert ok


# -- 2 ------------------------------------------------------------------------------

def test_c02_mask_cancellation():
    t = time.perf_counter()
    rng = np.random.default_rng(202)
    bad = 0
    for k in range(100):
        n = int(rng.integers(2, 101))
        length = int(rng.integers(1, 10_001))
        neighbors = [None, 1, 2][k % 3]
        masks = ttp_generate_masks(range(n), length, int(rng.integers(2**62)), neighbors=neighbors,
                                   label=f"roster-{k}".encode())
        plain = rng.integers(-2**40, 2**40, size=(n, length))
        uploads = [(u, mask_vector(encode_signed(plain[u]), xi)) for u, xi in masks.iter_masks()]
        rng.shuffle(uploads)
        if not np.array_equal(unmask_aggregate(uploads, range(n)), plain.sum(axis=0)):
            bad += 1
    dt = time.perf_counter() - t
    ok = record(2, "mask cancellation", bad == 0 and dt < 10, f"{bad} mismatches in 100 rosters", dt)
    assert ok


# -- 3 ------------------------------------------------------------------------------

def _synthetic_cfg(kappa):
    return config_from_dict({
        "mode": "ppoa", "rounds": 5, "seed": 3, "debug_verify": True, "scheme": {"p": 2, "q": 3},
        "quant": {"h": 16, "kappa": kappa},
        "dataset": {"format": "synthetic", "users": 20, "items": 80, "per_user": 20, "min_interactions": 5},
        "train": {"d": 16, "lr": 0.01, "eval_negatives": 30, "top_k": 10},
    })


def test_c03_end_to_end_matches_oracle():
    t = time.perf_counter()
    cfg = _synthetic_cfg(1.0)
    fed, _ = run_federation(cfg)
    bound = cfg.quant.kappa / (2**16 - 2)
    worst = max(rep.oracle_err for rep in fed.reports)
    counts_ok = all(rep.counts == fed.sizes.tolist() for rep in fed.reports)

    # pre-snapped deltas on a dyadic grid: recovery must be exact
    spec = QuantSpec(16, 32767 * 2.0**-24)
    snapped = Federation(_synthetic_cfg(spec.kappa))
    train = snapped._train_all
    snapped._train_all = lambda r, s: ((u, tch, dequantize(quantize(rd, spec), spec)) for u, tch, rd in train(r, s))
    snapped.run()
    exact = [rep.oracle_err for rep in snapped.reports]
    dt = time.perf_counter() - t
    ok = record(3, "PPOA vs cleartext oracle",
                worst <= bound and counts_ok and all(e == 0.0 for e in exact) and dt < 30,
                f"max err {worst:.3g} <= {bound:.3g}, counts ok {counts_ok}, snapped errs {exact}", dt)
    assert ok


# -- 4 ------------------------------------------------------------------------------

def test_c04_quantizer_bound():
    t = time.perf_counter()
    spec = QuantSpec(16, 1.0)
    rng = np.random.default_rng(404)
    p = rng.uniform(-spec.kappa, spec.kappa, size=10**6)
    q = quantize(p, spec)
    err = float(np.max(np.abs(dequantize(q, spec) - p)))
    bound = spec.kappa / (2 * (2**15 - 1))
    odd = bool(np.array_equal(quantize(-p, spec), -q))
    order = np.argsort(p)
    mono = bool(np.all(np.diff(q[order]) >= 0))
    dt = time.perf_counter() - t
    ok = record(4, "quantizer round trip", err <= bound and odd and mono and dt < 5,
                f"max err {err:.4g} <= {bound:.4g}, odd {odd}, monotone {mono}", dt)
    assert ok


# -- 5 ------------------------------------------------------------------------------

def test_c05_attack_table():
    t = time.perf_counter()
    rng = np.random.default_rng(505)
    r0, r1, r2 = (run_attack_experiment(6022, s, 10, 0.717, rng) for s in (0.0, 0.07, 1.0))
    checks = [
        r0.exposed_pct == 1.0 and r0.accuracy == 1.0,
        r1.exposed_pct >= 0.995 and r1.accuracy >= 0.995,
        abs(100 * r2.exposed_pct - 4.5) <= 1.5 and r2.accuracy >= 0.92,
    ]
    dt = time.perf_counter() - t
    detail = "; ".join(f"sigma {r.sigma:g}: exposed {100 * r.exposed_pct:.2f}% acc {100 * r.accuracy:.2f}%"
                       for r in (r0, r1, r2))
    ok = record(5, "attack table", all(checks) and dt < 30, detail, dt)
    assert ok


# -- 6 ------------------------------------------------------------------------------

def test_c06_exposure_formula_vs_simulation():
    t = time.perf_counter()
    rng = np.random.default_rng(606)
    n = 6022
    parts, ok_all = [], True
    for s in (0.1, 0.2, 0.5, 0.8, 1.0):
        emp = run_attack_experiment(n, s, 1, 0.717, rng).exposed_pct
        p = theoretical_exposure(s)
        tol = 4 * math.sqrt(p * (1 - p) / n)
        ok_all &= abs(emp - p) <= tol
        parts.append(f"{s:g}: |{emp:.4f}-{p:.4f}|<={tol:.4f}")
    dt = time.perf_counter() - t
    ok = record(6, "exposure formula", ok_all and dt < 30, ", ".join(parts), dt)
    assert ok


# -- 7 ------------------------------------------------------------------------------

def _ml100k_cfg(path, **kw):
    raw = {"dataset": {"format": "ml-100k", "path": str(path)}, "scheme": {"p": 1, "q": 2}}
    raw.update(kw)
    return config_from_dict(raw)


@pytest.fixture(scope="module")
def ml100k(ml100k_dir):
    recs, labels = load_movielens_100k(ml100k_dir)
    return build_dataset(recs, labels, 10)


def test_c07_f2mf_degenerates_to_fedmf(ml100k_dir, ml100k):
    t = time.perf_counter()
    a = run_federation(_ml100k_cfg(ml100k_dir, mode="fedmf", rounds=8, eval_every=4), ml100k)[0]
    b = run_federation(_ml100k_cfg(ml100k_dir, mode="f2mf", rounds=8, eval_every=4,
                                   f2mf={"lam": 0.0, "sigma": 0.0}), ml100k)[0]
    same = rounds_csv(a.reports, a.v) == rounds_csv(b.reports, b.v)
    table = {(A, B, g): learning_scale(A, B, 0.5, 1, g)
             for A, B in ((0.3, 0.2), (0.2, 0.3), (0.25, 0.25)) for g in (True, False)}
    want = {(0.3, 0.2, True): 0.5, (0.3, 0.2, False): 1.5, (0.2, 0.3, True): 1.5,
            (0.2, 0.3, False): 0.5, (0.25, 0.25, True): 1.0, (0.25, 0.25, False): 1.0}
    scales_ok = table == want
    dt = time.perf_counter() - t
    ok = record(7, "F2MF degeneracy", same and scales_ok and dt < 120,
                f"CSV identical {same}, scale table {sorted(set(table.values()))}", dt)
    assert ok


# -- 8, 9, 10 -------------------------------------------------------------------------

SEEDS = (0, 1, 2)


@pytest.fixture(scope="module")
def end_to_end(ml100k_dir, ml100k):
    t = time.perf_counter()
    runs = {}
    for seed in SEEDS:
        for mode in ("fedmf", "ppoa"):
            cfg = _ml100k_cfg(ml100k_dir, mode=mode, seed=seed, rounds=100, eval_every=100)
            runs[mode, seed] = run_federation(cfg, ml100k)[1]
    cfg = _ml100k_cfg(ml100k_dir, mode="ppoa", seed=0, rounds=100, eval_every=100, quantize=False)
    runs["plain", 0] = run_federation(cfg, ml100k)[1]
    return runs, time.perf_counter() - t


@pytest.mark.slow
def test_c08_ppoa_not_worse_than_fedmf(end_to_end):
    runs, dt = end_to_end
    ok_all, parts = True, []
    for seed in SEEDS:
        f, p = runs["fedmf", seed]["final"], runs["ppoa", seed]["final"]
        for g in (0, 1):
            ok_all &= p[f"group{g}_ndcg"] >= f[f"group{g}_ndcg"] - 0.005
        ok_all &= p["overall_ndcg"] >= f["overall_ndcg"]
        parts.append(f"s{seed} ppoa g0/g1/all {p['group0_ndcg']:.4f}/{p['group1_ndcg']:.4f}/{p['overall_ndcg']:.4f}"
                     f" fedmf {f['group0_ndcg']:.4f}/{f['group1_ndcg']:.4f}/{f['overall_ndcg']:.4f}")
    note = "" if dt <= 900 else f"; runtime over the 15 min desktop budget"
    record(8, "ML-100K PPOA vs FedMF", ok_all, "; ".join(parts) + note, dt)
    assert ok_all


@pytest.mark.slow
def test_c09_swap_hurts(end_to_end):
    runs, _ = end_to_end
    drops = [runs["ppoa", s]["swap"]["relative_drop_ndcg"] for s in SEEDS]
    ok = record(9, "swap ablation", all(x >= 0.10 for x in drops),
                "relative NDCG drops " + ", ".join(f"{100 * x:.2f}%" for x in drops), 0.0)
    assert ok


@pytest.mark.slow
def test_c10_quantization_ablation(end_to_end):
    runs, _ = end_to_end
    q = runs["ppoa", 0]["final"]["overall_ndcg"]
    u = runs["plain", 0]["final"]["overall_ndcg"]
    ok = record(10, "quantization ablation", abs(q - u) <= 0.005,
                f"quantized {q:.4f}, unquantized {u:.4f}, diff {abs(q - u):.4f}", 0.0)
    assert ok


# -- 11 -----------------------------------------------------------------------------

def test_c11_dataset_statistics(ml100k_dir):
    t = time.perf_counter()
    recs, labels = load_movielens_100k(ml100k_dir)
    ds = build_dataset(recs, labels, 10)
    sparsity = f"{100 * ds.sparsity:.2f}%"
    print(f"ratings {ds.n_ratings} users {ds.n} items {ds.m} sparsity {sparsity}")
    dt = time.perf_counter() - t
    ok = record(11, "dataset statistics",
                (ds.n_ratings, ds.n, ds.m) == (100_000, 943, 1682) and sparsity == "93.70%" and dt < 5,
                f"{ds.n_ratings} ratings, {ds.n} users, {ds.m} items, sparsity {sparsity}", dt)
    assert ok

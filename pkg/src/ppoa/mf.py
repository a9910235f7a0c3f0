"""Matrix factorization with implicit feedback, local training and ranking
evaluation.

Clients keep their user vector private and train a local copy of the
shared item matrix on binary cross-entropy with sampled negatives.  The
cohort trainer below runs many clients in lockstep over vectorised
arrays; every client still sees only its own samples, its own copy of the
item rows and its own optimizer state, so results do not depend on how
clients are grouped.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

EPS = 1e-7
_BETA1, _BETA2, _ADAM_EPS = 0.9, 0.999, 1e-8
_DT = np.float32  # local training runs in single precision


@dataclass(frozen=True)
class TrainConfig:
    d: int = 32
    lr: float = 0.001
    batch_size: int = 256
    local_epochs: int = 3
    train_negatives: int = 4
    eval_negatives: int = 99
    top_k: int = 10
    optimizer: str = "adam"
    init_std: float = 0.01

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.train_negatives < 1:
            raise ValueError("train_negatives must be >= 1")
        if not 1 <= self.top_k <= self.eval_negatives + 1:
            raise ValueError("top_k must lie in [1, eval_negatives + 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MfModel:
    user_vec: np.ndarray
    item_matrix: np.ndarray

    def copy(self) -> "MfModel":
        return MfModel(self.user_vec.copy(), self.item_matrix.copy())


def init_model(m: int, d: int, seed: int, std: float = 0.01) -> MfModel:
    if m < 1 or d < 1:
        raise ValueError("m and d must be positive")
    rng = np.random.default_rng(seed)
    item_matrix = rng.normal(0.0, std, size=(m, d))
    user_vec = rng.normal(0.0, std, size=d)
    return MfModel(user_vec, item_matrix)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def predict(user_vec, item_vec):
    """Interaction probability ``sigmoid(u . i)``, clamped to [EPS, 1-EPS]."""
    logit = np.asarray(item_vec, dtype=np.float64) @ np.asarray(user_vec, dtype=np.float64)
    out = np.clip(_sigmoid(logit), EPS, 1 - EPS)
    return float(out) if np.ndim(out) == 0 else out


def bce_loss(r, r_hat) -> float:
    """Summed binary cross-entropy of labels ``r`` against predictions."""
    r = np.asarray(r, dtype=np.float64)
    r_hat = np.clip(np.asarray(r_hat, dtype=np.float64), EPS, 1 - EPS)
    return float(-np.sum(r * np.log(r_hat) + (1 - r) * np.log(1 - r_hat)))


def bce_gradients(user_vec, item_rows, labels):
    """Analytic gradients of the summed loss w.r.t. the user vector and each
    item row (one row per sample)."""
    g = _sigmoid(item_rows @ user_vec) - labels
    return g @ item_rows, g[:, None] * user_vec[None, :]


def _sample_train_negatives(rng, excluded: np.ndarray, count: int) -> np.ndarray:
    m = excluded.size
    out = np.empty(0, dtype=np.int64)
    while out.size < count:
        draw = rng.integers(0, m, size=2 * (count - out.size) + 8)
        out = np.concatenate([out, draw[~excluded[draw]]])
    return out[:count]


def _client_plan(positives: np.ndarray, m: int, cfg: TrainConfig, rng) -> list:
    positives = np.asarray(positives, dtype=np.int64)
    if positives.size == 0:
        raise ValueError("cannot train a client without positives")
    excluded = np.zeros(m, dtype=bool)
    excluded[positives] = True
    if excluded.all():
        raise ValueError("client has interacted with every item; no negatives to sample")
    batches = []
    n_neg = cfg.train_negatives * positives.size
    labels = np.concatenate([np.ones(positives.size), np.zeros(n_neg)])
    for epoch in range(cfg.local_epochs):
        neg = _sample_train_negatives(rng, excluded, n_neg)
        items = np.concatenate([positives, neg])
        order = rng.permutation(items.size)
        items, lab = items[order], labels[order]
        last = epoch == cfg.local_epochs - 1
        for s in range(0, items.size, cfg.batch_size):
            batches.append((items[s:s + cfg.batch_size], lab[s:s + cfg.batch_size], last))
    return batches


@dataclass
class CohortResult:
    user_vecs: np.ndarray          # (C, d) after training
    touched: list                  # per client: sorted item ids with non-zero support
    deltas: list                   # per client: change of the ``touched`` rows
    loss: np.ndarray               # mean BCE over each client's final epoch

    def row_delta(self, c: int) -> np.ndarray:
        return self.deltas[c]

    def delta(self, c: int, base: np.ndarray) -> np.ndarray:
        out = np.zeros_like(base)
        out[self.touched[c]] = self.deltas[c]
        return out


def _adam_step(m, v, idx, grad, t, lr):
    """Update moments of rows ``idx`` in place and return the step.

    Bias corrections are folded into a per-row step size and epsilon.
    """
    bc2 = np.sqrt(1 - _BETA2 ** t)
    a = (lr * bc2 / (1 - _BETA1 ** t)).astype(_DT)[:, None]
    e = (_ADAM_EPS * bc2).astype(_DT)[:, None]
    mi = m[idx]
    mi *= _BETA1
    mi += (1 - _BETA1) * grad
    vi = v[idx]
    vi *= _BETA2
    vi += (1 - _BETA2) * np.square(grad)
    m[idx] = mi
    v[idx] = vi
    den = np.sqrt(vi)
    den += e
    mi /= den
    mi *= a
    return mi


def train_cohort(item_matrix, user_vecs: np.ndarray, positives: Sequence[np.ndarray],
                 cfg: TrainConfig, rngs: Sequence[np.random.Generator], scales=None,
                 which=None) -> CohortResult:
    """Local training of several clients.

    All clients start from ``item_matrix``, or, when ``which`` is given, client
    ``c`` starts from ``item_matrix[which[c]]`` (a sequence of matrices).

    Each step multiplies a client's update by its scale ``D``.  Item rows use
    row-wise lazy Adam (rows absent from a batch keep their state), the user
    vector plain Adam; with ``optimizer='sgd'`` both take plain gradient
    steps on the summed loss.
    """
    mats = [item_matrix] if which is None else list(item_matrix)
    which = np.zeros(len(positives), dtype=np.int64) if which is None else np.asarray(which)
    m, d = mats[0].shape
    C = len(positives)
    scales = np.ones(C) if scales is None else np.asarray(scales, dtype=np.float64)
    plans = [_client_plan(p, m, cfg, r) for p, r in zip(positives, rngs)]

    # every client trains on private copies ("slots") of the rows it touches
    touched, offsets = [], [0]
    for plan in plans:
        t = np.unique(np.concatenate([b[0] for b in plan]))
        touched.append(t)
        offsets.append(offsets[-1] + t.size)
    slot_emb = np.concatenate([mats[w][t] for w, t in zip(which, touched)]).astype(_DT)
    slot_owner = np.repeat(np.arange(C), [t.size for t in touched])

    T = max(len(p) for p in plans)
    steps = []
    for t in range(T):
        act = [c for c in range(C) if len(plans[c]) > t]
        sl = [offsets[c] + np.searchsorted(touched[c], plans[c][t][0]) for c in act]
        steps.append((
            np.array(act),
            np.concatenate(sl),
            np.concatenate([plans[c][t][1] for c in act]),
            np.repeat(act, [x.size for x in sl]),
            np.array([plans[c][t][2] for c in act]),
        ))

    U = np.array(user_vecs, dtype=_DT, copy=True).reshape(C, d)
    adam = cfg.optimizer == "adam"
    if adam:
        mU, vU, tU = np.zeros_like(U), np.zeros_like(U), np.zeros(C)
        mS, vS, tS = np.zeros_like(slot_emb), np.zeros_like(slot_emb), np.zeros(len(slot_emb))
    # applied steps, summed in double precision: the exported delta is
    # exactly the sum of the updates, independent of the rounding of slot_emb
    moved = np.zeros(slot_emb.shape)
    loss_sum = np.zeros(C)
    loss_cnt = np.zeros(C)
    lr = cfg.lr

    for act, flat, y, owner, fin in steps:
        logit = np.einsum("nd,nd->n", slot_emb[flat], U[owner]).astype(np.float64)
        p = _sigmoid(logit)
        g = p - y
        if fin.any():
            in_fin = np.isin(owner, act[fin])
            pc = np.clip(p[in_fin], EPS, 1 - EPS)
            yf = y[in_fin]
            ll = -(yf * np.log(pc) + (1 - yf) * np.log(1 - pc))
            loss_sum += np.bincount(owner[in_fin], weights=ll, minlength=C)
            loss_cnt += np.bincount(owner[in_fin], minlength=C)
        slots, inv = np.unique(flat, return_inverse=True)
        gs = np.bincount(inv, weights=g).astype(_DT)
        own = slot_owner[slots]
        # slots are grouped by owner in ascending owner order, as is ``act``
        starts = np.flatnonzero(np.r_[True, own[1:] != own[:-1]])
        grad_u = np.add.reduceat(gs[:, None] * slot_emb[slots], starts, axis=0)
        G = gs[:, None] * U[own]
        if adam:
            tU[act] += 1
            U[act] -= _adam_step(mU, vU, act, grad_u, tU[act], lr * scales[act])
            tS[slots] += 1
            step = _adam_step(mS, vS, slots, G, tS[slots], lr * scales[own])
            slot_emb[slots] -= step
            moved[slots] -= step
        else:
            U[act] -= (lr * scales[act]).astype(_DT)[:, None] * grad_u
            step = (lr * scales[own]).astype(_DT)[:, None] * G
            slot_emb[slots] -= step
            moved[slots] -= step

    deltas = [moved[offsets[c]:offsets[c + 1]] for c in range(C)]
    return CohortResult(U.astype(np.float64), touched, deltas, loss_sum / np.maximum(loss_cnt, 1))


def local_train(model: MfModel, positives, cfg: TrainConfig, rng: np.random.Generator,
                scale_D: float = 1.0) -> tuple[MfModel, np.ndarray]:
    """Train one client; returns the updated model and the item delta."""
    if not np.isfinite(scale_D):
        raise ValueError("scale_D must be finite")
    res = train_cohort(model.item_matrix, model.user_vec[None, :], [positives], cfg, [rng], [scale_D])
    delta = res.delta(0, model.item_matrix)
    return MfModel(res.user_vecs[0], model.item_matrix + delta), delta


def rank_of_test(user_vec, item_matrix, test_item: int, negatives) -> int:
    """1-based rank of ``test_item`` among itself and ``negatives``; ties go
    to the smaller item id."""
    negatives = np.asarray(negatives, dtype=np.int64)
    s_t = item_matrix[test_item] @ user_vec
    s_n = item_matrix[negatives] @ user_vec
    return 1 + int(np.sum((s_n > s_t) | ((s_n == s_t) & (negatives < test_item))))


def evaluate_user(user_vec, item_matrix, test_item: int, negatives, K: int) -> tuple[int, float]:
    if test_item in set(np.asarray(negatives).tolist()):
        raise ValueError("test item must not appear among the negatives")
    rank = rank_of_test(user_vec, item_matrix, test_item, negatives)
    if rank <= K:
        return 1, 1.0 / np.log2(rank + 1)
    return 0, 0.0


def evaluate_users(user_vecs, item_matrices, matrix_of_user, test_items, negatives, K: int):
    """Vectorised :func:`evaluate_user` over all users.

    ``item_matrices`` is a list; user ``u`` is scored with
    ``item_matrices[matrix_of_user[u]]``.
    """
    U = np.asarray(user_vecs)
    test_items = np.asarray(test_items)
    negatives = np.asarray(negatives)
    which = np.asarray(matrix_of_user)
    s_t = np.empty(len(U))
    s_n = np.empty(negatives.shape)
    for k, M in enumerate(item_matrices):
        sel = np.flatnonzero(which == k)
        if sel.size == 0:
            continue
        s_t[sel] = (M[test_items[sel]] * U[sel]).sum(-1)
        s_n[sel] = (M[negatives[sel]] * U[sel][:, None, :]).sum(-1)
    before = (s_n > s_t[:, None]) | ((s_n == s_t[:, None]) & (negatives < test_items[:, None]))
    rank = 1 + before.sum(axis=1)
    hr = (rank <= K).astype(np.int64)
    ndcg = np.where(hr == 1, 1.0 / np.log2(rank + 1), 0.0)
    return hr, ndcg


@dataclass
class EvalResult:
    hr: np.ndarray
    ndcg: np.ndarray
    group_hr: np.ndarray
    group_ndcg: np.ndarray
    overall_hr: float
    overall_ndcg: float
    gap_hr: float
    gap_ndcg: float

    @staticmethod
    def csv_fields(v: int = 2) -> list:
        return ([f"group{g}_hr" for g in range(v)] + [f"group{g}_ndcg" for g in range(v)]
                + ["overall_hr", "overall_ndcg", "gap_hr", "gap_ndcg"])

    def row(self) -> dict:
        out = {f"group{g}_hr": float(x) for g, x in enumerate(self.group_hr)}
        out.update({f"group{g}_ndcg": float(x) for g, x in enumerate(self.group_ndcg)})
        out.update(overall_hr=self.overall_hr, overall_ndcg=self.overall_ndcg,
                   gap_hr=self.gap_hr, gap_ndcg=self.gap_ndcg)
        return out


def group_report(hr, ndcg, group_label, v: int = 2, allow_empty: bool = False) -> EvalResult:
    """Per-group means and their unweighted mean; the gap is max - min over
    groups, i.e. ``|g0 - g1|`` for two groups.

    With ``allow_empty`` a group without members reports NaN and is left
    out of the mean and the gap.
    """
    hr = np.asarray(hr, dtype=np.float64)
    ndcg = np.asarray(ndcg, dtype=np.float64)
    labels = np.asarray(group_label)
    sizes = np.bincount(labels, minlength=v)
    if np.any(sizes[:v] == 0) and not allow_empty:
        raise ValueError(f"group(s) {np.flatnonzero(sizes[:v] == 0).tolist()} have no members")
    g_hr = np.array([hr[labels == g].mean() if sizes[g] else np.nan for g in range(v)])
    g_nd = np.array([ndcg[labels == g].mean() if sizes[g] else np.nan for g in range(v)])
    h, n = g_hr[sizes[:v] > 0], g_nd[sizes[:v] > 0]
    return EvalResult(
        hr=hr, ndcg=ndcg, group_hr=g_hr, group_ndcg=g_nd,
        overall_hr=float(h.mean()), overall_ndcg=float(n.mean()),
        gap_hr=float(h.max() - h.min()), gap_ndcg=float(n.max() - n.min()),
    )

"""MovieLens-style ingestion and implicit-feedback splits."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

RATING_FORMATS = ("tab_separated", "double_colon", "csv")
LABEL_FORMATS = ("ml100k_user", "ml1m_users", "csv")
GENDER_GROUPS = {"M": 0, "F": 1}


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class RatingRecord:
    user: str
    item: str
    rating: float
    timestamp: int = 0

    def __post_init__(self):
        if self.rating < 0:
            raise DatasetError(f"negative rating {self.rating}")
        if self.timestamp < 0:
            raise DatasetError(f"negative timestamp {self.timestamp}")


@dataclass
class InteractionDataset:
    n: int
    m: int
    train_positives: list  # per user, int arrays in chronological order
    test_item: np.ndarray
    group_label: np.ndarray
    user_ids: list  # dense -> raw
    item_ids: list
    n_ratings: int = 0
    valid_items: list | None = None  # temporal split only
    test_items: list | None = None
    user_index: dict = field(default_factory=dict, repr=False)
    item_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.user_index:
            self.user_index = {u: k for k, u in enumerate(self.user_ids)}
        if not self.item_index:
            self.item_index = {i: k for k, i in enumerate(self.item_ids)}

    @property
    def sparsity(self) -> float:
        return 1.0 - self.n_ratings / (self.n * self.m)

    def group_sizes(self, v: int = 2) -> np.ndarray:
        return np.bincount(self.group_label, minlength=v)

    def subset(self, users) -> "InteractionDataset":
        """The listed users only; the item space is kept as is."""
        users = [int(u) for u in users]
        pick = lambda seq: None if seq is None else [seq[u] for u in users]
        return InteractionDataset(
            n=len(users), m=self.m,
            train_positives=[self.train_positives[u] for u in users],
            test_item=self.test_item[users], group_label=self.group_label[users],
            user_ids=[self.user_ids[u] for u in users], item_ids=list(self.item_ids),
            n_ratings=sum(self.train_positives[u].size + 1 for u in users),
            valid_items=pick(self.valid_items), test_items=pick(self.test_items),
            item_index=dict(self.item_index),
        )

    def summary(self) -> dict:
        sizes = self.group_sizes()
        return {
            "ratings": self.n_ratings,
            "users": self.n,
            "items": self.m,
            "sparsity": self.sparsity,
            "group_sizes": sizes.tolist(),
            "group0_ratio": float(sizes[0] / self.n),
        }


def _text(raw) -> str:
    if isinstance(raw, (bytes, bytearray)):
        return raw.decode("utf-8")
    if isinstance(raw, Path):
        return raw.read_text(encoding="utf-8")
    if hasattr(raw, "read"):
        data = raw.read()
        return data.decode("utf-8") if isinstance(data, bytes) else data
    return raw


def parse_ratings(raw, fmt: str = "tab_separated", columns: Mapping[str, str] | None = None) -> list[RatingRecord]:
    """Parse rating lines into records, preserving file order.

    ``columns`` maps ``user``/``item``/``rating``/``timestamp`` to header
    names for the ``csv`` format (defaults to those names).  Lines with only
    three fields get timestamp 0.
    """
    if fmt not in RATING_FORMATS:
        raise DatasetError(f"unknown rating format {fmt!r}; expected one of {RATING_FORMATS}")
    text = _text(raw)
    if fmt == "csv":
        return _parse_ratings_csv(text, columns or {})
    sep = "\t" if fmt == "tab_separated" else "::"
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.strip().split(sep)
        if len(parts) < 3:
            raise DatasetError(f"line {lineno}: expected at least 3 fields, got {len(parts)}")
        try:
            rating = float(parts[2])
            ts = int(parts[3]) if len(parts) > 3 else 0
            out.append(RatingRecord(parts[0], parts[1], rating, ts))
        except ValueError as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None
    return out


def _parse_ratings_csv(text: str, columns: Mapping[str, str]) -> list[RatingRecord]:
    names = {k: columns.get(k, k) for k in ("user", "item", "rating", "timestamp")}
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        return []
    for key in ("user", "item"):
        if names[key] not in reader.fieldnames:
            raise DatasetError(f"csv header lacks column {names[key]!r}")
    out = []
    for lineno, row in enumerate(reader, 2):
        try:
            rating = float(row.get(names["rating"]) or 1.0)
            ts_raw = row.get(names["timestamp"])
            ts = int(float(ts_raw)) if ts_raw not in (None, "") else 0
            out.append(RatingRecord(row[names["user"]], row[names["item"]], rating, ts))
        except (ValueError, TypeError) as exc:
            raise DatasetError(f"line {lineno}: {exc}") from None
    return out


def load_group_labels(raw, fmt: str = "ml100k_user", columns: Mapping[str, str] | None = None) -> dict[str, int]:
    """Map raw user id to group index; gender M -> 0, F -> 1."""
    if fmt not in LABEL_FORMATS:
        raise DatasetError(f"unknown user-file format {fmt!r}; expected one of {LABEL_FORMATS}")
    text = _text(raw)
    labels: dict[str, int] = {}

    def put(lineno, user, token):
        token = token.strip()
        if token in GENDER_GROUPS:
            group = GENDER_GROUPS[token]
        elif fmt == "csv" and token.isdigit():
            group = int(token)
        else:
            raise DatasetError(f"line {lineno}: unknown group token {token!r}")
        if user in labels:
            raise DatasetError(f"line {lineno}: duplicate user id {user!r}")
        labels[user] = group

    if fmt == "csv":
        cols = {"user": "user", "group": "group", **(columns or {})}
        for lineno, row in enumerate(csv.DictReader(io.StringIO(text)), 2):
            put(lineno, row[cols["user"]], row[cols["group"]])
        return labels
    sep, col = ("|", 2) if fmt == "ml100k_user" else ("::", 1)
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.strip().split(sep)
        if len(parts) <= col:
            raise DatasetError(f"line {lineno}: missing gender field")
        put(lineno, parts[0], parts[col])
    return labels


def build_dataset(records: Sequence[RatingRecord], labels: Mapping[str, int], min_interactions: int = 10,
                  split: str = "leave_one_out") -> InteractionDataset:
    """Binarize, filter sparse users, compact ids and split.

    Leave-one-out holds out each user's latest interaction; among equal
    timestamps the record appearing last in the input wins.  The temporal
    split keeps the first 80% of a user's records (by time) for training and
    divides the rest evenly into validation and test.
    """
    if min_interactions < 2:
        raise DatasetError("min_interactions must be >= 2")
    if split not in ("leave_one_out", "temporal_80_10_10"):
        raise DatasetError(f"unknown split {split!r}")

    per_user: dict[str, list] = {}
    for k, r in enumerate(records):
        if r.rating > 0:
            per_user.setdefault(r.user, []).append((r.timestamp, k, r.item))
    kept = {u: recs for u, recs in per_user.items() if len(recs) >= min_interactions}
    missing = [u for u in kept if u not in labels]
    if missing:
        raise DatasetError(f"users without a group label: {missing[:10]}")

    items_alive = {it for recs in kept.values() for _, _, it in recs}
    user_ids = sorted(kept, key=_natural_key)
    item_ids = sorted(items_alive, key=_natural_key)
    item_index = {it: j for j, it in enumerate(item_ids)}

    train, test, valid_l, test_l = [], [], [], []
    n_ratings = 0
    for u in user_ids:
        recs = sorted(kept[u])  # (timestamp, file order): last element is the latest
        n_ratings += len(recs)
        seq = [item_index[it] for _, _, it in recs]
        if split == "leave_one_out":
            held = seq[-1]
            train.append(_dedupe([j for j in seq[:-1] if j != held]))
            test.append(held)
        else:
            n_tr = max(1, int(round(0.8 * len(seq))))
            n_va = (len(seq) - n_tr) // 2
            tr = _dedupe(seq[:n_tr])
            rest = [j for j in seq[n_tr:] if j not in set(tr.tolist())]
            valid_l.append(np.array(rest[:n_va], dtype=np.int64))
            test_l.append(np.array(rest[n_va:], dtype=np.int64))
            train.append(tr)
            test.append(seq[-1])
    return InteractionDataset(
        n=len(user_ids), m=len(item_ids), train_positives=train,
        test_item=np.array(test, dtype=np.int64),
        group_label=np.array([labels[u] for u in user_ids], dtype=np.int64),
        user_ids=user_ids, item_ids=item_ids, n_ratings=n_ratings,
        valid_items=valid_l or None, test_items=test_l or None,
        item_index=item_index,
    )


def _dedupe(seq) -> np.ndarray:
    return np.array(list(dict.fromkeys(seq)), dtype=np.int64)


def _natural_key(raw_id: str):
    return (0, int(raw_id), "") if raw_id.isdigit() else (1, 0, raw_id)


def sample_negatives(dataset: InteractionDataset, user: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Distinct items the user never interacted with (test item excluded)."""
    excluded = np.zeros(dataset.m, dtype=bool)
    excluded[dataset.train_positives[user]] = True
    excluded[dataset.test_item[user]] = True
    pool = np.flatnonzero(~excluded)
    if count > pool.size or count < 0:
        raise DatasetError(f"cannot draw {count} negatives for user {user}: only {pool.size} available")
    return rng.choice(pool, size=count, replace=False)


def load_movielens_100k(root) -> tuple[list[RatingRecord], dict[str, int]]:
    root = Path(root)
    return (parse_ratings((root / "u.data").read_bytes(), "tab_separated"),
            load_group_labels((root / "u.user").read_bytes(), "ml100k_user"))


def load_movielens_1m(root) -> tuple[list[RatingRecord], dict[str, int]]:
    root = Path(root)
    return (parse_ratings((root / "ratings.dat").read_bytes(), "double_colon"),
            load_group_labels((root / "users.dat").read_bytes(), "ml1m_users"))


def synthetic_records(n_users: int, n_items: int, per_user: int, g0_ratio: float = 0.7,
                      seed: int = 0, taste: float = 3.0) -> tuple[list[RatingRecord], dict[str, int]]:
    """Small random interaction log with group-dependent item popularity.

    Each group prefers a different half of the catalogue (``taste`` is the
    preference strength), so per-group models have something to learn.
    """
    if per_user >= n_items:
        raise DatasetError("per_user must be smaller than n_items")
    rng = np.random.default_rng(seed)
    labels, records = {}, []
    half = np.arange(n_items) < n_items // 2
    for u in range(n_users):
        g = int(rng.random() >= g0_ratio)
        labels[str(u + 1)] = g
        w = np.where(half ^ bool(g), taste, 1.0)
        items = rng.choice(n_items, size=per_user, replace=False, p=w / w.sum())
        for t, it in enumerate(items):
            records.append(RatingRecord(str(u + 1), str(it + 1), 1.0, t))
    return records, labels

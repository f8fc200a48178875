"""Leave-one-out splits and sampled top-K ranking metrics."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from shgcn.graph import Dataset, DataError

TOP_K = (1, 3, 5, 10)
NUM_CANDIDATES = 100


@dataclass
class EvalSplit:
    train: Dataset                 # train interactions plus every triplet
    val_item: np.ndarray           # (M,) held-out validation item or -1
    test_item: np.ndarray          # (M,) held-out test item or -1
    val_candidates: np.ndarray     # (M, 1 + n_neg): target first, then negatives; -1 rows unused
    test_candidates: np.ndarray
    user_items: list[np.ndarray]   # full sorted interaction set per user

    @property
    def num_users(self):
        return self.train.num_users

    def evaluated_users(self, which: str = "test") -> np.ndarray:
        held = self.test_item if which == "test" else self.val_item
        return np.flatnonzero(held >= 0)

    def targets(self, which: str = "test"):
        if which == "test":
            return self.test_item, self.test_candidates
        if which in ("val", "validation"):
            return self.val_item, self.val_candidates
        raise ValueError(f"unknown split part {which!r}")

    def train_counts(self) -> np.ndarray:
        return np.bincount(self.train.interactions[:, 0], minlength=self.num_users)


def group_by_user(interactions: np.ndarray, num_users: int) -> list[np.ndarray]:
    order = np.lexsort((interactions[:, 1], interactions[:, 0]))
    users, items = interactions[order, 0], interactions[order, 1]
    cuts = np.searchsorted(users, np.arange(num_users + 1))
    return [items[cuts[u]:cuts[u + 1]] for u in range(num_users)]


def leave_one_out_split(dataset: Dataset, rng: np.random.Generator,
                        num_candidates: int = NUM_CANDIDATES) -> EvalSplit:
    """Hold out one test item (and one validation item with >= 3 interactions) per user.

    Users are visited in id order; each draws its held-out items, then its
    validation negatives, then its test negatives, all from ``rng``. Negatives
    are distinct and never among the user's interactions.
    """
    M, N = dataset.num_users, dataset.num_items
    per_user = group_by_user(dataset.interactions, M)
    val_item = np.full(M, -1, dtype=np.int64)
    test_item = np.full(M, -1, dtype=np.int64)
    width = 1 + num_candidates
    val_cands = np.full((M, width), -1, dtype=np.int64)
    test_cands = np.full((M, width), -1, dtype=np.int64)
    train_rows = []
    all_items = np.arange(N)

    for u, items in enumerate(per_user):
        n = len(items)
        if n == 0:
            continue
        shuffled = items[rng.permutation(n)]
        if n >= 3:
            test_item[u], val_item[u], rest = shuffled[0], shuffled[1], shuffled[2:]
        elif n == 2:
            test_item[u], rest = shuffled[0], shuffled[1:]
        else:
            rest = shuffled
        train_rows.append(np.column_stack([np.full(len(rest), u), np.sort(rest)]))
        if n < 2:
            continue
        pool = np.setdiff1d(all_items, items, assume_unique=True)
        if len(pool) < num_candidates:
            raise DataError(f"user {u} has only {len(pool)} non-interacted items; "
                            f"need {num_candidates} candidates")
        if val_item[u] >= 0:
            val_cands[u, 0] = val_item[u]
            val_cands[u, 1:] = rng.choice(pool, num_candidates, replace=False)
        test_cands[u, 0] = test_item[u]
        test_cands[u, 1:] = rng.choice(pool, num_candidates, replace=False)

    train_inter = np.concatenate(train_rows) if train_rows else np.zeros((0, 2), dtype=np.int64)
    train = Dataset(M, N, train_inter, dataset.triplets.copy())
    return EvalSplit(train, val_item, test_item, val_cands, test_cands, per_user)


def rank_candidates(scorer, user: int, candidates, target: int | None = None) -> int:
    """1-based rank of ``target`` (default: first candidate); ties go to the lower item id."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if target is None:
        target = int(candidates[0])
    hits = np.flatnonzero(candidates == target)
    if len(hits) != 1:
        raise ValueError(f"target item {target} must appear exactly once among the candidates")
    scores = np.asarray(scorer.score_items(user, candidates), dtype=np.float64)
    return rank_from_scores(scores, candidates, hits[0])


def rank_from_scores(scores, candidates, pos: int) -> int:
    s = scores[pos]
    ahead = (scores > s) | ((scores == s) & (candidates < candidates[pos]))
    return 1 + int(np.count_nonzero(ahead))


def recall_at_k(rank: int, k: int) -> float:
    return 1.0 if rank <= k else 0.0


def ndcg_at_k(rank: int, k: int) -> float:
    return 1.0 / np.log2(rank + 1) if rank <= k else 0.0


def user_ranks(scorer, split: EvalSplit, which: str = "test", users=None) -> tuple[np.ndarray, np.ndarray]:
    held, cands = split.targets(which)
    if users is None:
        users = np.flatnonzero(held >= 0)
    ranks = np.array([rank_from_scores(np.asarray(scorer.score_items(int(u), cands[u]), dtype=np.float64),
                                       cands[u], 0) for u in users], dtype=np.int64)
    return np.asarray(users, dtype=np.int64), ranks


def metrics_from_ranks(ranks: np.ndarray, ks=TOP_K) -> dict:
    out: dict = {"users": int(len(ranks))}
    for k in ks:
        hit = ranks <= k
        out[f"recall@{k}"] = float(hit.mean()) if len(ranks) else None
        out[f"ndcg@{k}"] = float(np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0).mean()) if len(ranks) else None
    return out


def evaluate(scorer, split: EvalSplit, ks=TOP_K, which: str = "test") -> dict:
    """Mean Recall@K and NDCG@K over users holding out a ``which`` item."""
    _, ranks = user_ranks(scorer, split, which)
    if len(ranks) == 0:
        raise ValueError(f"no users with a {which} item to evaluate")
    return metrics_from_ranks(ranks, ks)


def sparsity_buckets(split: EvalSplit, scorer, bucket_edges, ks=TOP_K, which: str = "test") -> list[dict]:
    """Metrics per bucket ``[edges[b], edges[b+1])`` of training-interaction count.

    Empty buckets are reported with ``None`` metrics.
    """
    edges = np.asarray(bucket_edges, dtype=np.float64)
    if len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bucket edges must be strictly increasing with at least two entries")
    users, ranks = user_ranks(scorer, split, which)
    counts = split.train_counts()[users]
    report = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mask = (counts >= lo) & (counts < hi)
        entry = metrics_from_ranks(ranks[mask], ks)
        entry["range"] = (float(lo), float(hi))
        report.append(entry)
    return report

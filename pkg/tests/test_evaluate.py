import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shgcn.evaluate import (evaluate, leave_one_out_split, metrics_from_ranks, ndcg_at_k,
                            rank_candidates, recall_at_k, sparsity_buckets)
from shgcn.graph import DataError, Dataset


class TableScorer:
    def __init__(self, table):
        self.table = np.asarray(table, dtype=np.float64)

    def score_items(self, i, items):
        return self.table[i, np.asarray(items)]


class RandomScorer:
    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def score_items(self, i, items):
        return self.rng.random(len(items))


def _dataset(seed=0, M=40, N=150):
    rng = np.random.default_rng(seed)
    rows = []
    for u in range(M):
        n = int(rng.integers(1, 8))
        rows += [(u, int(j)) for j in rng.choice(N, n, replace=False)]
    return Dataset(M, N, rows, [(0, 1, 0), (2, 3, 5)])


def test_split_conserves_interactions():
    ds = _dataset()
    split = leave_one_out_split(ds, np.random.default_rng(0))
    held = [(u, int(split.test_item[u])) for u in range(ds.num_users) if split.test_item[u] >= 0]
    held += [(u, int(split.val_item[u])) for u in range(ds.num_users) if split.val_item[u] >= 0]
    train = {tuple(map(int, r)) for r in split.train.interactions}
    assert not train & set(held)
    assert train | set(held) == {tuple(map(int, r)) for r in ds.interactions}
    assert len(train) + len(held) == len(ds.interactions)
    assert np.array_equal(split.train.triplets, ds.triplets)


def test_split_rules_by_interaction_count():
    ds = _dataset()
    split = leave_one_out_split(ds, np.random.default_rng(0))
    counts = np.bincount(ds.interactions[:, 0], minlength=ds.num_users)
    for u, c in enumerate(counts):
        assert (split.test_item[u] >= 0) == (c >= 2)
        assert (split.val_item[u] >= 0) == (c >= 3)


def test_candidates_are_distinct_negatives():
    ds = _dataset()
    split = leave_one_out_split(ds, np.random.default_rng(0))
    for which in ("test", "val"):
        held, cands = split.targets(which)
        for u in np.flatnonzero(held >= 0):
            row = cands[u]
            assert row[0] == held[u]
            assert len(set(row.tolist())) == 101
            assert not set(row[1:].tolist()) & set(split.user_items[u].tolist())


def test_split_is_seeded():
    ds = _dataset()
    a = leave_one_out_split(ds, np.random.default_rng(4))
    b = leave_one_out_split(ds, np.random.default_rng(4))
    assert np.array_equal(a.test_candidates, b.test_candidates)
    assert np.array_equal(a.train.interactions, b.train.interactions)


def test_too_few_items_for_candidates():
    ds = Dataset(1, 50, [(0, 1), (0, 2)], [])
    with pytest.raises(DataError, match="non-interacted"):
        leave_one_out_split(ds, np.random.default_rng(0))


def test_rank_ties_go_to_lower_id():
    s = TableScorer([[0.5, 0.5, 0.5, 0.9]])
    assert rank_candidates(s, 0, [2, 0, 1, 3]) == 4
    assert rank_candidates(s, 0, [0, 2, 1, 3]) == 2
    assert rank_candidates(s, 0, [3, 0, 1, 2]) == 1


def test_rank_needs_target_once():
    s = TableScorer([[0.1, 0.2]])
    with pytest.raises(ValueError):
        rank_candidates(s, 0, [0, 1], target=5)
    with pytest.raises(ValueError):
        rank_candidates(s, 0, [0, 0, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=2, max_size=30), st.data())
def test_rank_matches_sort(scores, data):
    n = len(scores)
    table = [list(map(float, scores))]
    pos = data.draw(st.integers(0, n - 1))
    cands = list(range(n))
    order = sorted(cands, key=lambda j: (-scores[j], j))
    assert rank_candidates(TableScorer(table), 0, cands, target=pos) == order.index(pos) + 1


def test_metric_values():
    assert ndcg_at_k(1, 10) == 1.0
    assert ndcg_at_k(3, 10) == pytest.approx(0.5)
    assert ndcg_at_k(11, 10) == 0.0
    assert recall_at_k(10, 10) == 1.0 and recall_at_k(11, 10) == 0.0
    m = metrics_from_ranks(np.array([1, 3, 20]))
    assert m["recall@3"] == pytest.approx(2 / 3)
    assert m["ndcg@3"] == pytest.approx(0.5)
    assert m["ndcg@1"] == m["recall@1"] == pytest.approx(1 / 3)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 101), min_size=1, max_size=50))
def test_metrics_monotone_in_k(ranks):
    m = metrics_from_ranks(np.array(ranks), ks=(1, 3, 5, 10))
    for a, b in [(1, 3), (3, 5), (5, 10)]:
        assert m[f"recall@{a}"] <= m[f"recall@{b}"]
        assert m[f"ndcg@{a}"] <= m[f"ndcg@{b}"] <= m[f"recall@{b}"]


def test_perfect_and_random_scorers():
    ds = _dataset(M=300, N=200)
    split = leave_one_out_split(ds, np.random.default_rng(0))
    table = np.zeros((300, 200))
    for u in range(300):
        if split.test_item[u] >= 0:
            table[u, split.test_item[u]] = 1.0
    assert evaluate(TableScorer(table), split)["ndcg@1"] == 1.0
    m = evaluate(RandomScorer(0), split)
    assert abs(m["recall@10"] - 10 / 101) < 0.06


def test_no_evaluable_users():
    split = leave_one_out_split(Dataset(2, 200, [(0, 1), (1, 2)], []), np.random.default_rng(0))
    with pytest.raises(ValueError, match="no users"):
        evaluate(RandomScorer(0), split)


def test_sparsity_buckets():
    ds = _dataset(M=100)
    split = leave_one_out_split(ds, np.random.default_rng(1))
    report = sparsity_buckets(split, RandomScorer(1), [0, 2, 4, 100, 1000])
    assert [r["range"] for r in report] == [(0, 2), (2, 4), (4, 100), (100, 1000)]
    assert sum(r["users"] for r in report) == len(split.evaluated_users())
    assert report[-1]["users"] == 0 and report[-1]["ndcg@10"] is None
    counts = split.train_counts()
    assert report[0]["users"] == int(np.sum((counts[split.evaluated_users()] < 2)))
    with pytest.raises(ValueError):
        sparsity_buckets(split, RandomScorer(1), [3, 3])


def test_single_bucket_equals_evaluate():
    split = leave_one_out_split(_dataset(M=80), np.random.default_rng(2))
    table = np.random.default_rng(3).random((80, 150))
    (only,) = sparsity_buckets(split, TableScorer(table), [0, 10_000])
    full = evaluate(TableScorer(table), split)
    assert {k: only[k] for k in full} == full


def test_hand_bucketed_toy():
    # ten users with 2..11 interactions; user 0 holds out only a test item, the rest also a validation item
    rows = [(u, j) for u in range(10) for j in range(u + 2)]
    split = leave_one_out_split(Dataset(10, 200, rows, []), np.random.default_rng(0))
    counts = split.train_counts()
    assert counts.tolist() == [1, 1, 2, 3, 4, 5, 6, 7, 8, 9]
    table = np.zeros((10, 200))
    for u in range(10):
        table[u, split.test_item[u]] = 1.0 if u in (0, 3, 6, 9) else -1.0
    report = sparsity_buckets(split, TableScorer(table), [0, 2, 5, 20])
    # buckets: users {0, 1}, {2, 3, 4}, {5..9}; users 0, 3, 6 and 9 rank their target first, the rest last
    assert [r["users"] for r in report] == [2, 3, 5]
    assert [r["recall@1"] for r in report] == [0.5, 1 / 3, 0.4]

"""Hypergraph over users and items built from user-user-item triplets.

Node ids are global: users occupy ``[0, M)`` and item ``j`` is node ``M + j``.
Every adjacency list is stored in compressed form (an ``indptr`` offsets array
plus a flat, sorted ``indices`` array) so aggregations walk memory in order.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np


class DataError(ValueError):
    """Raised when input records violate the dataset contract."""


def _as_records(values, width: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64)
    if arr.size == 0:
        return np.zeros((0, width), dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise DataError(f"{name} must have {width} columns, got shape {arr.shape}")
    return arr


@dataclass
class Dataset:
    num_users: int
    num_items: int
    interactions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    triplets: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), dtype=np.int64))
    raw_user_ids: np.ndarray | None = field(default=None, repr=False)
    raw_item_ids: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.num_users = int(self.num_users)
        self.num_items = int(self.num_items)
        self.interactions = _as_records(self.interactions, 2, "interactions")
        self.triplets = _as_records(self.triplets, 3, "triplets")

    def validate(self) -> None:
        M, N = self.num_users, self.num_items
        if M <= 0 or N <= 0:
            raise DataError(f"need positive user/item counts, got M={M}, N={N}")
        for row, (u, j) in enumerate(self.interactions.tolist()):
            if not (0 <= u < M and 0 <= j < N):
                raise DataError(f"interaction #{row} ({u}, {j}) out of range for M={M}, N={N}")
        for row, (u1, u2, j) in enumerate(self.triplets.tolist()):
            if not (0 <= u1 < M and 0 <= u2 < M and 0 <= j < N):
                raise DataError(f"triplet #{row} ({u1}, {u2}, {j}) out of range for M={M}, N={N}")
            if u1 == u2:
                raise DataError(f"triplet #{row} ({u1}, {u2}, {j}) pairs a user with itself")

        dups = _duplicates(map(tuple, self.interactions.tolist()))
        if dups:
            raise DataError(f"duplicate interactions: {dups[:10]}" + (" ..." if len(dups) > 10 else ""))
        canon = ((min(a, b), max(a, b), j) for a, b, j in self.triplets.tolist())
        dups = _duplicates(canon)
        if dups:
            raise DataError(f"duplicate triplets (user pair canonicalized): {dups[:10]}"
                            + (" ..." if len(dups) > 10 else ""))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.num_users == other.num_users and self.num_items == other.num_items
                and np.array_equal(self.interactions, other.interactions)
                and np.array_equal(self.triplets, other.triplets))


def _duplicates(records) -> list:
    seen, dups = set(), []
    for rec in records:
        if rec in seen:
            dups.append(rec)
        seen.add(rec)
    return dups


def _compress(rows: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(r) for r in rows])
    flat = np.fromiter(itertools.chain.from_iterable(rows), dtype=np.int64, count=int(indptr[-1]))
    return indptr, flat


@dataclass(frozen=True, eq=False)
class Hypergraph:
    num_users: int
    num_items: int
    edge_indptr: np.ndarray       # K(e)
    edge_nodes: np.ndarray
    node_indptr: np.ndarray       # Z(w)
    node_edges: np.ndarray
    social_indptr: np.ndarray     # N(i), with the relation id of each entry alongside
    social_nbrs: np.ndarray
    social_rel: np.ndarray
    relation_pairs: np.ndarray    # (T, 2) canonical (min, max) user pairs
    rel_indptr: np.ndarray        # N(i1, i2)
    rel_edges: np.ndarray
    pair_edges: np.ndarray        # plain user-item interactions, not hyperedges
    relation_index: dict = field(repr=False)

    @property
    def node_count(self) -> int:
        return self.num_users + self.num_items

    @property
    def num_hyperedges(self) -> int:
        return len(self.edge_indptr) - 1

    @property
    def num_relations(self) -> int:
        return len(self.relation_pairs)

    def item_node(self, j: int) -> int:
        return self.num_users + int(j)

    def nodes_of(self, e: int) -> np.ndarray:
        return self.edge_nodes[self.edge_indptr[e]:self.edge_indptr[e + 1]]

    def edges_of(self, w: int) -> np.ndarray:
        return self.node_edges[self.node_indptr[w]:self.node_indptr[w + 1]]

    def neighbors(self, i: int) -> np.ndarray:
        self._check_user(i)
        return self.social_nbrs[self.social_indptr[i]:self.social_indptr[i + 1]]

    def relation_of(self, i1: int, i2: int) -> int:
        key = (min(int(i1), int(i2)), max(int(i1), int(i2)))
        try:
            return self.relation_index[key]
        except KeyError:
            raise KeyError(f"users {i1} and {i2} share no hyperedge") from None

    def shared_edges(self, i1: int, i2: int) -> np.ndarray:
        key = (min(int(i1), int(i2)), max(int(i1), int(i2)))
        t = self.relation_index.get(key)
        if t is None:
            return np.zeros(0, dtype=np.int64)
        return self.rel_edges[self.rel_indptr[t]:self.rel_indptr[t + 1]]

    def edge_degrees(self) -> np.ndarray:
        return np.diff(self.edge_indptr)

    def node_degrees(self) -> np.ndarray:
        return np.diff(self.node_indptr)

    def _check_user(self, i):
        if not 0 <= i < self.num_users:
            raise IndexError(f"user {i} out of range [0, {self.num_users})")


def build_hypergraph(dataset: Dataset) -> Hypergraph:
    """One hyperedge per triplet ``(i1, i2, j)``; ids follow input order."""
    dataset.validate()
    groups = [((u1, u2), (j,)) for u1, u2, j in dataset.triplets.tolist()]
    return hypergraph_from_groups(dataset.num_users, dataset.num_items, groups,
                                  pair_edges=dataset.interactions)


def hypergraph_from_groups(num_users: int, num_items: int, groups, pair_edges=None) -> Hypergraph:
    """Build from arbitrary ``(users, items)`` groups, each with >= 2 users and >= 1 item.

    A group with more than two users relates every distinct pair of its users.
    """
    M, N = int(num_users), int(num_items)
    edge_rows: list[list[int]] = []
    node_rows: list[list[int]] = [[] for _ in range(M + N)]
    relation_index: dict[tuple[int, int], int] = {}
    rel_rows: list[list[int]] = []

    for e, (users, items) in enumerate(groups):
        users = sorted(set(int(u) for u in users))
        items = sorted(set(int(j) for j in items))
        if len(users) < 2 or len(items) < 1:
            raise DataError(f"hyperedge #{e} needs >= 2 users and >= 1 item, got {users}, {items}")
        nodes = users + [M + j for j in items]
        if any(not 0 <= u < M for u in users) or any(not 0 <= j < N for j in items):
            raise DataError(f"hyperedge #{e} has ids out of range: users {users}, items {items}")
        edge_rows.append(nodes)
        for w in nodes:
            node_rows[w].append(e)
        for pair in itertools.combinations(users, 2):
            t = relation_index.setdefault(pair, len(relation_index))
            if t == len(rel_rows):
                rel_rows.append([])
            rel_rows[t].append(e)

    social_rows: list[list[tuple[int, int]]] = [[] for _ in range(M)]
    for (a, b), t in relation_index.items():
        social_rows[a].append((b, t))
        social_rows[b].append((a, t))
    for row in social_rows:
        row.sort()

    edge_indptr, edge_nodes = _compress(edge_rows)
    node_indptr, node_edges = _compress(node_rows)
    rel_indptr, rel_edges = _compress(rel_rows)
    social_indptr, social_nbrs = _compress([[w for w, _ in row] for row in social_rows])
    _, social_rel = _compress([[t for _, t in row] for row in social_rows])
    relation_pairs = np.array(list(relation_index), dtype=np.int64).reshape(-1, 2)
    if pair_edges is None:
        pair_edges = np.zeros((0, 2), dtype=np.int64)

    arrays = [edge_indptr, edge_nodes, node_indptr, node_edges, social_indptr, social_nbrs,
              social_rel, relation_pairs, rel_indptr, rel_edges]
    pair_edges = np.array(pair_edges, dtype=np.int64).reshape(-1, 2)
    for a in arrays + [pair_edges]:
        a.setflags(write=False)
    return Hypergraph(M, N, *arrays, pair_edges, relation_index)

"""SHGCN forward pass: hyperedge, relation, user and item updates per layer.

Layer ``k`` runs, in order:

1. hyperedges ``C = act(mean_{w in K(e)} E_w W1 + b1)``
2. relations ``R = act(mean_{e in N(i1,i2)} C_e W2 + b2)``
3. attention ``alpha_wi = softmax_{w in N(i)} MLP(R_{eta(w,i)})``
4. users ``P_i = norm(P_i + act(mean_{e in Z(i)} C_e W3 + b3) + act(sum_w alpha_wi P_w))``
5. items ``Q_j = norm(Q_j + act(mean_{e in Z(j)} C_e W4 + b4))``

where ``act`` is LeakyReLU and every right-hand side uses layer ``k-1`` values.
The final representation concatenates the outputs of layers ``0..L``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from shgcn import autodiff as ad
from shgcn.graph import Hypergraph

INIT_STD = 0.1


@dataclass
class ModelState:
    num_users: int
    num_items: int
    dim: int = 32
    layers: int = 3
    params: dict[str, np.ndarray] = field(default_factory=dict)
    normalize: bool = True
    kind = "shgcn"

    @classmethod
    def init(cls, num_users, num_items, dim=32, layers=3, seed=0, normalize=True):
        rng = np.random.default_rng(seed)
        d = dim
        params = {"E0": rng.normal(0.0, INIT_STD, size=(num_users + num_items, d))}
        for k in range(1, layers + 1):
            for t in range(1, 5):
                params[f"W{t}_{k}"] = rng.normal(0.0, INIT_STD, size=(d, d))
                params[f"b{t}_{k}"] = np.zeros(d)
        params["mlp_W1"] = rng.normal(0.0, INIT_STD, size=(d, d))
        params["mlp_b1"] = np.zeros(d)
        params["mlp_W2"] = rng.normal(0.0, INIT_STD, size=(d, 1))
        params["mlp_b2"] = np.zeros(1)
        return cls(num_users, num_items, dim, layers, params, normalize)

    def param_names(self) -> list[str]:
        """Canonical order: E0, then W1..W4/b1..b4 per layer, then the attention MLP."""
        names = ["E0"]
        for k in range(1, self.layers + 1):
            for t in range(1, 5):
                names += [f"W{t}_{k}", f"b{t}_{k}"]
        return names + ["mlp_W1", "mlp_b1", "mlp_W2", "mlp_b2"]

    def num_parameters(self) -> int:
        return sum(a.size for a in self.params.values())

    def representations(self, tape: ad.Tape, nodes: dict, graph: Hypergraph) -> ad.Node:
        estar, _ = propagate(tape, nodes, graph, self.layers, self.normalize)
        return estar

    def scorer(self, graph: Hypergraph) -> "Scorer":
        return Scorer(forward(self, graph), self.num_users)

    def layer0_rows(self, nodes: dict, users, items) -> ad.Node:
        rows = np.concatenate([np.unique(users), self.num_users + np.unique(items)])
        return ad.gather_rows(nodes["E0"], rows)


@dataclass
class LayerOutput:
    C: np.ndarray
    R: np.ndarray
    alpha: np.ndarray   # aligned with graph.social_nbrs: alpha[p] weights neighbor social_nbrs[p]
    P: np.ndarray
    Q: np.ndarray


class _Plan:
    """Index arrays and mean weights derived once per hypergraph."""

    def __init__(self, g: Hypergraph):
        M = g.num_users
        self.M = M
        self.edge_idx, self.edge_ptr = g.edge_nodes, g.edge_indptr
        self.edge_inv = _inverse_counts(g.edge_indptr)
        self.rel_idx, self.rel_ptr = g.rel_edges, g.rel_indptr
        self.rel_inv = _inverse_counts(g.rel_indptr)
        split = g.node_indptr[M]
        self.user_idx, self.user_ptr = g.node_edges[:split], g.node_indptr[:M + 1]
        self.item_idx, self.item_ptr = g.node_edges[split:], g.node_indptr[M:] - split
        self.user_inv = _inverse_counts(self.user_ptr)
        self.item_inv = _inverse_counts(self.item_ptr)
        self.user_has_edges = (np.diff(self.user_ptr) > 0).astype(np.float64)
        self.item_has_edges = (np.diff(self.item_ptr) > 0).astype(np.float64)
        self.social_ptr, self.social_nbrs, self.social_rel = g.social_indptr, g.social_nbrs, g.social_rel
        self.users = np.arange(M)
        self.items = np.arange(M, g.node_count)


def _inverse_counts(indptr):
    counts = np.diff(indptr).astype(np.float64)
    return np.divide(1.0, counts, out=np.zeros_like(counts), where=counts > 0)


@lru_cache(maxsize=8)
def plan_for(graph: Hypergraph) -> _Plan:
    return _Plan(graph)


def _mean(tape, x, idx, ptr, inv):
    return ad.scale_rows(ad.segment_sum(ad.gather_rows(x, idx), ptr), tape.const(inv))


def _dense(x, W, b):
    return ad.add_bias(ad.matmul(x, W), b)


def hyperedge_embed(tape: ad.Tape, graph: Hypergraph, E: ad.Node, W: ad.Node, b: ad.Node) -> ad.Node:
    plan = plan_for(graph)
    return ad.leaky_relu(_dense(_mean(tape, E, plan.edge_idx, plan.edge_ptr, plan.edge_inv), W, b))


def relation_embed(tape: ad.Tape, graph: Hypergraph, C: ad.Node, W: ad.Node, b: ad.Node) -> ad.Node:
    plan = plan_for(graph)
    return ad.leaky_relu(_dense(_mean(tape, C, plan.rel_idx, plan.rel_ptr, plan.rel_inv), W, b))


def attention_weights(tape: ad.Tape, graph: Hypergraph, R: ad.Node, mlp: dict) -> ad.Node:
    """Softmax-normalized MLP scores, aligned with ``graph.social_nbrs``."""
    plan = plan_for(graph)
    hidden = ad.leaky_relu(_dense(R, mlp["mlp_W1"], mlp["mlp_b1"]))
    raw = ad.reshape(_dense(hidden, mlp["mlp_W2"], mlp["mlp_b2"]), (-1,))
    return ad.segment_softmax(ad.gather_rows(raw, plan.social_rel), plan.social_ptr)


def user_update(tape: ad.Tape, graph: Hypergraph, P: ad.Node, C: ad.Node, alpha: ad.Node,
                W: ad.Node, b: ad.Node, normalize: bool = True) -> ad.Node:
    plan = plan_for(graph)
    act = ad.leaky_relu
    from_edges = _dense(_mean(tape, C, plan.user_idx, plan.user_ptr, plan.user_inv), W, b)
    # users without hyperedges get no hyperedge message (not act(b))
    from_edges = ad.scale_rows(act(from_edges), tape.const(plan.user_has_edges))
    from_friends = ad.segment_sum(ad.scale_rows(ad.gather_rows(P, plan.social_nbrs), alpha),
                                  plan.social_ptr)
    out = P + from_edges + act(from_friends)
    return ad.l2_normalize_rows(out) if normalize else out


def item_update(tape: ad.Tape, graph: Hypergraph, Q: ad.Node, C: ad.Node, W: ad.Node, b: ad.Node,
                normalize: bool = True) -> ad.Node:
    plan = plan_for(graph)
    from_edges = _dense(_mean(tape, C, plan.item_idx, plan.item_ptr, plan.item_inv), W, b)
    from_edges = ad.scale_rows(ad.leaky_relu(from_edges), tape.const(plan.item_has_edges))
    out = Q + from_edges
    return ad.l2_normalize_rows(out) if normalize else out


def propagate(tape: ad.Tape, p: dict, graph: Hypergraph, layers: int, normalize: bool = True,
              outputs: list | None = None) -> tuple[ad.Node, list]:
    """Run ``layers`` convolution layers on tape nodes ``p``; return (E*, layer blocks)."""
    plan = plan_for(graph)
    E = p["E0"]
    blocks = [E]
    for k in range(1, layers + 1):
        C = hyperedge_embed(tape, graph, E, p[f"W1_{k}"], p[f"b1_{k}"])
        R = relation_embed(tape, graph, C, p[f"W2_{k}"], p[f"b2_{k}"])
        alpha = attention_weights(tape, graph, R, p)
        P = user_update(tape, graph, ad.gather_rows(E, plan.users), C, alpha,
                        p[f"W3_{k}"], p[f"b3_{k}"], normalize)
        Q = item_update(tape, graph, ad.gather_rows(E, plan.items), C,
                        p[f"W4_{k}"], p[f"b4_{k}"], normalize)
        E = ad.concat_rows([P, Q])
        blocks.append(E)
        if outputs is not None:
            outputs.append(LayerOutput(C.value, R.value, alpha.value, P.value, Q.value))
    estar = blocks[0] if len(blocks) == 1 else ad.concat_cols(blocks)
    return estar, blocks


def put_on_tape(tape: ad.Tape, params: dict[str, np.ndarray]) -> dict[str, ad.Node]:
    return {name: tape.leaf(value, name) for name, value in params.items()}


def forward(model: ModelState, graph: Hypergraph, outputs: list | None = None) -> np.ndarray:
    """Final ``(M+N) x d(L+1)`` representation matrix."""
    _check_consistent(model, graph)
    tape = ad.Tape()
    nodes = put_on_tape(tape, model.params)
    estar, _ = propagate(tape, nodes, graph, model.layers, model.normalize, outputs)
    return estar.value


def layer_outputs(model: ModelState, graph: Hypergraph) -> list[LayerOutput]:
    outs: list[LayerOutput] = []
    forward(model, graph, outs)
    return outs


def _check_consistent(model, graph):
    if (model.num_users, model.num_items) != (graph.num_users, graph.num_items):
        raise ad.ContractError(
            f"model sized for M={model.num_users}, N={model.num_items} but graph has "
            f"M={graph.num_users}, N={graph.num_items}")


class Scorer:
    """Inner-product scorer over fixed user and item representations."""

    def __init__(self, estar: np.ndarray, num_users: int):
        self.users = estar[:num_users]
        self.items = estar[num_users:]

    @property
    def num_users(self):
        return len(self.users)

    @property
    def num_items(self):
        return len(self.items)

    def score(self, i: int, j: int) -> float:
        if not (0 <= i < self.num_users and 0 <= j < self.num_items):
            raise ad.ContractError(f"score({i}, {j}) out of range")
        return float(self.users[i] @ self.items[j])

    def score_items(self, i: int, items) -> np.ndarray:
        items = np.asarray(items, dtype=np.int64)
        if not 0 <= i < self.num_users or (items.size and (items.min() < 0 or items.max() >= self.num_items)):
            raise ad.ContractError(f"score_items for user {i} out of range")
        return self.items[items] @ self.users[i]


def score(estar: np.ndarray, num_users: int, i: int, j: int) -> float:
    return Scorer(estar, num_users).score(i, j)


def param_count(M: int, N: int, d: int, L: int) -> dict[str, int]:
    """Parameter breakdown; ``extra_approx`` is the ``2Ld^2 + 4Ld(d+1)`` accounting."""
    for v in (M, N, d):
        if v <= 0:
            raise ValueError("M, N and d must be positive")
    if L < 0:
        raise ValueError("L must be non-negative")
    embeddings = (M + N) * d
    transforms = 4 * L * d * (d + 1)
    mlp = d * (d + 1) + (d + 1)
    return {
        "embeddings": embeddings,
        "transforms": transforms,
        "mlp": mlp,
        "total": embeddings + transforms + mlp,
        "mlp_approx": 2 * L * d * d,
        "extra_approx": 2 * L * d * d + transforms,
    }

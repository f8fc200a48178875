"""End-to-end finite-difference checks of the BPR loss on small random graphs."""
from __future__ import annotations

import numpy as np

from shgcn import autodiff as ad
from shgcn.graph import Dataset, build_hypergraph
from shgcn.model import ModelState, put_on_tape
from shgcn.train import batch_loss


def random_toy(rng: np.random.Generator, max_users=5, max_items=4, max_edges=4, max_dim=4, max_layers=2,
               param_std=1.0):
    """A random (model, graph, batch) with at least one hyperedge and one positive.

    Parameters are drawn at unit scale rather than the small training init so
    that gradient entries sit well above finite-difference roundoff.
    """
    M = int(rng.integers(2, max_users + 1))
    N = int(rng.integers(2, max_items + 1))
    seen, triplets = set(), []
    for _ in range(int(rng.integers(1, max_edges + 1))):
        u1, u2 = (int(x) for x in rng.choice(M, 2, replace=False))
        j = int(rng.integers(N))
        key = (min(u1, u2), max(u1, u2), j)
        if key not in seen:
            seen.add(key)
            triplets.append((u1, u2, j))
    pairs = {(int(rng.integers(M)), int(rng.integers(N))) for _ in range(int(rng.integers(1, 2 * M)))}
    ds = Dataset(M, N, sorted(pairs), triplets)
    graph = build_hypergraph(ds)
    d = int(rng.integers(1, max_dim + 1))
    L = int(rng.integers(1, max_layers + 1))
    model = ModelState.init(M, N, d, L, seed=int(rng.integers(2**31)))
    for value in model.params.values():
        value[...] = rng.normal(0.0, param_std, size=value.shape)
    users = np.array([u for u, _ in sorted(pairs)])
    pos = np.array([j for _, j in sorted(pairs)])
    neg = rng.integers(N, size=len(users))
    return model, graph, (users, pos, neg)


def check_instance(model, graph, batch, lam=1e-2, h=1e-5, tol=1e-4) -> ad.GradCheckReport:
    users, pos, neg = batch

    # reference evaluations in extended precision keep loss rounding (~ulp/2h)
    # far below the 1e-8 absolute floor of the comparison
    def loss_value(params):
        tape = ad.Tape(dtype=np.longdouble)
        return batch_loss(model, tape, put_on_tape(tape, params), graph, users, pos, neg, lam).value[()]

    tape = ad.Tape()
    loss = batch_loss(model, tape, put_on_tape(tape, model.params), graph, users, pos, neg, lam)
    grads = ad.backward(tape, loss)
    return ad.finite_difference_check(loss_value, model.params, grads, h=h, tol=tol)


def run_suite(instances: int = 20, seed: int = 0, tol: float = 1e-4) -> list[ad.GradCheckReport]:
    rng = np.random.default_rng(seed)
    return [check_instance(*random_toy(rng), tol=tol) for _ in range(instances)]

"""BPR training with uniform negative sampling and Adam."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from shgcn import autodiff as ad
from shgcn.evaluate import EvalSplit, evaluate
from shgcn.graph import DataError, Dataset, Hypergraph
from shgcn.model import put_on_tape

log = logging.getLogger(__name__)

LR_GRID = (3e-4, 1e-3, 3e-3)
L2_GRID = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3)
BATCH_GRID = (256, 512, 1024, 2048, 4096)
SELECTION_METRIC = "ndcg@10"


class NumericError(RuntimeError):
    """Training produced non-finite gradients or parameters."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    l2_lambda: float = 1e-5
    batch_size: int = 4096
    negatives: int = 8
    epochs: int = 100
    patience: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate < 0 or self.l2_lambda < 0:
            raise ValueError("learning_rate and l2_lambda must be non-negative")
        if self.batch_size <= 0 or self.negatives <= 0 or self.epochs <= 0 or self.patience < 0:
            raise ValueError("batch_size, negatives and epochs must be positive; patience >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


class InteractionIndex:
    """Per-user training positives with O(log n) membership tests."""

    def __init__(self, interactions: np.ndarray, num_users: int, num_items: int):
        self.num_users, self.num_items = num_users, num_items
        self.pairs = np.asarray(interactions, dtype=np.int64).reshape(-1, 2)
        self.keys = np.unique(self.pairs[:, 0] * num_items + self.pairs[:, 1])
        self.counts = np.bincount(self.pairs[:, 0], minlength=num_users)

    @classmethod
    def from_dataset(cls, dataset: Dataset):
        return cls(dataset.interactions, dataset.num_users, dataset.num_items)

    def contains(self, users, items) -> np.ndarray:
        keys = np.asarray(users) * self.num_items + np.asarray(items)
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, len(self.keys) - 1)
        return (self.keys[pos] == keys) if len(self.keys) else np.zeros(keys.shape, dtype=bool)


def sample_negative_batch(rng: np.random.Generator, users, k: int, index: InteractionIndex) -> np.ndarray:
    """``(len(users), k)`` uniform non-interacted items; collisions are redrawn."""
    users = np.asarray(users, dtype=np.int64)
    full = index.counts[users] >= index.num_items
    if np.any(full):
        raise DataError(f"user {int(users[full][0])} interacted with every item; no negatives exist")
    rows = np.repeat(users[:, None], k, axis=1)
    out = rng.integers(index.num_items, size=rows.shape)
    bad = index.contains(rows, out)
    while np.any(bad):
        out[bad] = rng.integers(index.num_items, size=int(bad.sum()))
        bad[bad] = index.contains(rows[bad], out[bad])
    return out


def sample_negatives(rng: np.random.Generator, user: int, k: int, index: InteractionIndex) -> np.ndarray:
    return sample_negative_batch(rng, [user], k, index)[0]


def bpr_loss(r_pos: ad.Node, r_neg: ad.Node, reg: ad.Node | None = None, lam: float = 0.0) -> ad.Node:
    """``sum(-ln sigmoid(r_pos - r_neg)) + lam * ||reg||^2`` on the tape."""
    loss = ad.total(ad.softplus(r_neg - r_pos))
    if reg is not None and lam > 0:
        loss = loss + ad.scale(ad.total(ad.mul(reg, reg)), lam)
    return loss


def bpr_loss_value(r_pos, r_neg, reg=None, lam: float = 0.0) -> float:
    tape = ad.Tape()
    reg_node = None if reg is None else tape.const(np.asarray(reg, dtype=np.float64))
    pos = tape.const(np.atleast_1d(np.asarray(r_pos, dtype=np.float64)))
    neg = tape.const(np.atleast_1d(np.asarray(r_neg, dtype=np.float64)))
    return float(bpr_loss(pos, neg, reg_node, lam).value)


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float | None = None):
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for {name!r} at step {self.t + 1}")
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params, grads, opt_state: Adam, lr: float | None = None):
    opt_state.step(params, grads, lr)
    return params


def batch_loss(model, tape: ad.Tape, nodes: dict, graph: Hypergraph, users, pos, neg, lam: float) -> ad.Node:
    M = model.num_users
    estar = model.representations(tape, nodes, graph)
    u = ad.gather_rows(estar, users)
    r_pos = ad.row_sum(ad.mul(u, ad.gather_rows(estar, M + np.asarray(pos))))
    r_neg = ad.row_sum(ad.mul(u, ad.gather_rows(estar, M + np.asarray(neg))))
    reg = model.layer0_rows(nodes, users, np.concatenate([pos, neg])) if lam > 0 else None
    return bpr_loss(r_pos, r_neg, reg, lam)


def loss_and_grads(model, graph, users, pos, neg, lam):
    tape = ad.Tape()
    nodes = put_on_tape(tape, model.params)
    loss = batch_loss(model, tape, nodes, graph, users, pos, neg, lam)
    return float(loss.value), ad.backward(tape, loss)


def train_epoch(model, graph: Hypergraph, index: InteractionIndex, config: TrainConfig,
                rng: np.random.Generator, optimizer: Adam) -> dict:
    """One pass over shuffled training positives; each gets ``config.negatives`` BPR pairs."""
    start = time.perf_counter()
    positives = index.pairs[rng.permutation(len(index.pairs))]
    k = config.negatives
    total_loss, total_pairs = 0.0, 0
    for lo in range(0, len(positives), config.batch_size):
        batch = positives[lo:lo + config.batch_size]
        neg = sample_negative_batch(rng, batch[:, 0], k, index).reshape(-1)
        users = np.repeat(batch[:, 0], k)
        pos = np.repeat(batch[:, 1], k)
        loss, grads = loss_and_grads(model, graph, users, pos, neg, config.l2_lambda)
        optimizer.step(model.params, grads, config.learning_rate)
        total_loss += loss
        total_pairs += len(users)
    return {"loss": total_loss / max(total_pairs, 1), "seconds": time.perf_counter() - start}


@dataclass
class FitResult:
    best_params: dict
    best_epoch: int
    best_metric: float
    history: list[dict]


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for splitting and training."""
    split, train = np.random.SeedSequence(seed).spawn(2)
    return {"split": np.random.default_rng(split), "train": np.random.default_rng(train)}


def fit(model, graph: Hypergraph, split: EvalSplit, config: TrainConfig, on_epoch=None) -> FitResult:
    """Train with early stopping on validation NDCG@10; ``model.params`` ends at the best epoch."""
    rng = seed_streams(config.seed)["train"]
    index = InteractionIndex.from_dataset(split.train)
    optimizer = Adam(config.learning_rate, config.beta1, config.beta2, config.adam_eps)
    has_val = len(split.evaluated_users("val")) > 0
    history: list[dict] = []
    best = FitResult({k: v.copy() for k, v in model.params.items()}, 0, -np.inf, history)
    stale = 0
    for epoch in range(1, config.epochs + 1):
        stats = train_epoch(model, graph, index, config, rng, optimizer)
        record = {"epoch": epoch, "loss": stats["loss"], "seconds": stats["seconds"]}
        if has_val:
            record["val"] = evaluate(model.scorer(graph), split, which="val")
            metric = record["val"][SELECTION_METRIC]
        else:
            metric = -stats["loss"]
        history.append(record)
        if on_epoch is not None:
            on_epoch(record)
        log.info("epoch %d loss %.5f %s", epoch, stats["loss"],
                 f"val {SELECTION_METRIC} {metric:.4f}" if has_val else "")
        if metric > best.best_metric:
            best.best_params = {k: v.copy() for k, v in model.params.items()}
            best.best_epoch, best.best_metric = epoch, metric
            stale = 0
        else:
            stale += 1
            if stale >= max(config.patience, 1):
                break
    for name, value in best.best_params.items():
        model.params[name][...] = value
    return best

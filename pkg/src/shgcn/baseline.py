"""Matrix factorization baseline: ``r_ij = <P_i, Q_j>`` on free embeddings."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from shgcn import autodiff as ad
from shgcn.model import INIT_STD, Scorer


@dataclass
class MfState:
    num_users: int
    num_items: int
    dim: int = 32
    params: dict[str, np.ndarray] = field(default_factory=dict)
    kind = "mf"
    layers = 0

    @classmethod
    def init(cls, num_users, num_items, dim=32, seed=0):
        rng = np.random.default_rng(seed)
        params = {"P": rng.normal(0.0, INIT_STD, size=(num_users, dim)),
                  "Q": rng.normal(0.0, INIT_STD, size=(num_items, dim))}
        return cls(num_users, num_items, dim, params)

    @property
    def P(self):
        return self.params["P"]

    @property
    def Q(self):
        return self.params["Q"]

    def param_names(self) -> list[str]:
        return ["P", "Q"]

    def num_parameters(self) -> int:
        return (self.num_users + self.num_items) * self.dim

    def representations(self, tape, nodes, graph=None) -> ad.Node:
        return ad.concat_rows([nodes["P"], nodes["Q"]])

    def layer0_rows(self, nodes: dict, users, items) -> ad.Node:
        return ad.concat_rows([ad.gather_rows(nodes["P"], np.unique(users)),
                               ad.gather_rows(nodes["Q"], np.unique(items))])

    def scorer(self, graph=None) -> Scorer:
        return Scorer(np.concatenate([self.P, self.Q]), self.num_users)


def mf_score(state: MfState, i: int, j: int) -> float:
    if not (0 <= i < state.num_users and 0 <= j < state.num_items):
        raise ad.ContractError(f"mf_score({i}, {j}) out of range")
    return float(state.P[i] @ state.Q[j])

"""Synthetic datasets with planted, topic-specific friendships.

Items are split into topics and every user likes a few topics. Friends are
paired through one topic they both like, and their shared triplets draw items
from that topic. Interactions come from each user's own topics, so triplets
carry evidence about a user's tastes that the interaction log alone lacks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from shgcn.graph import Dataset


@dataclass
class SynthConfig:
    num_users: int = 500
    num_items: int = 200
    num_topics: int = 8
    topics_per_user: int = 2
    friends_per_user: float = 4.0
    interactions_per_user: int = 6
    triplets_per_pair: int = 3
    noise: float = 0.1
    seed: int = 0

    def validate(self):
        counts = (self.num_users, self.num_items, self.num_topics, self.topics_per_user,
                  self.interactions_per_user, self.triplets_per_pair)
        if any(c <= 0 for c in counts) or self.friends_per_user <= 0:
            raise ValueError("synthetic counts must be positive")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError(f"noise must lie in [0, 1], got {self.noise}")
        if self.num_topics > self.num_items:
            raise ValueError(f"{self.num_topics} topics cannot partition {self.num_items} items")
        if self.topics_per_user > self.num_topics:
            raise ValueError("topics_per_user exceeds num_topics")
        if self.num_users < 2:
            raise ValueError("need at least two users to form friendships")
        smallest_pool = self.topics_per_user * (self.num_items // self.num_topics)
        if self.interactions_per_user > smallest_pool:
            raise ValueError(f"interactions_per_user={self.interactions_per_user} exceeds the "
                             f"{smallest_pool} items a user's topics can supply")


@dataclass
class SynthData:
    dataset: Dataset
    item_topic: np.ndarray      # (N,)
    user_topics: np.ndarray     # (M, T) boolean affinity mask
    pair_topic: dict            # canonical (u1, u2) -> shared topic

    def topic_scorer(self):
        return TopicScorer(self.user_topics, self.item_topic)


class TopicScorer:
    """Scores 1 for items in the user's planted topics, else 0."""

    def __init__(self, user_topics, item_topic):
        self.user_topics = np.asarray(user_topics, dtype=np.float64)
        self.item_topic = np.asarray(item_topic)

    def score_items(self, i, items):
        return self.user_topics[i, self.item_topic[np.asarray(items)]]


def generate(config: SynthConfig) -> SynthData:
    config.validate()
    rng = np.random.default_rng(config.seed)
    M, N, T = config.num_users, config.num_items, config.num_topics

    item_topic = rng.permutation(np.arange(N) % T)
    topic_items = [np.flatnonzero(item_topic == t) for t in range(T)]
    user_topics = np.zeros((M, T), dtype=bool)
    for u in range(M):
        user_topics[u, rng.choice(T, config.topics_per_user, replace=False)] = True
    topic_users = [np.flatnonzero(user_topics[:, t]) for t in range(T)]

    pair_topic: dict[tuple[int, int], int] = {}
    attempts = int(round(M * config.friends_per_user / 2))
    for _ in range(attempts):
        u = int(rng.integers(M))
        t = int(rng.choice(np.flatnonzero(user_topics[u])))
        others = topic_users[t][topic_users[t] != u]
        if len(others) == 0:
            continue
        w = int(rng.choice(others))
        pair_topic.setdefault((min(u, w), max(u, w)), t)

    triplets = []
    for (u, w), t in pair_topic.items():
        seen = set()
        for _ in range(config.triplets_per_pair):
            j = int(rng.integers(N)) if rng.random() < config.noise else int(rng.choice(topic_items[t]))
            if j not in seen:
                seen.add(j)
                first, second = (u, w) if rng.random() < 0.5 else (w, u)
                triplets.append((first, second, j))

    interactions = []
    for u in range(M):
        own = np.concatenate([topic_items[t] for t in np.flatnonzero(user_topics[u])])
        chosen: set[int] = set()
        while len(chosen) < config.interactions_per_user:
            j = int(rng.integers(N)) if rng.random() < config.noise else int(rng.choice(own))
            chosen.add(j)
        interactions.extend((u, j) for j in sorted(chosen))

    dataset = Dataset(M, N, np.array(interactions, dtype=np.int64).reshape(-1, 2),
                      np.array(triplets, dtype=np.int64).reshape(-1, 3))
    dataset.validate()
    return SynthData(dataset, item_topic, user_topics, pair_topic)

import numpy as np
import pytest

from shgcn.evaluate import evaluate, leave_one_out_split
from shgcn.synth import SynthConfig, generate


def test_generate_is_seeded_and_valid():
    a, b = generate(SynthConfig(seed=3)), generate(SynthConfig(seed=3))
    assert a.dataset == b.dataset
    assert generate(SynthConfig(seed=4)).dataset != a.dataset
    a.dataset.validate()
    assert a.dataset.num_users == 500 and a.dataset.num_items == 200


def test_interactions_per_user():
    data = generate(SynthConfig(num_users=50, interactions_per_user=7))
    assert np.all(np.bincount(data.dataset.interactions[:, 0], minlength=50) == 7)


def test_friend_pairs_share_their_topic():
    data = generate(SynthConfig(noise=0.0))
    for (u, w), t in data.pair_topic.items():
        assert data.user_topics[u, t] and data.user_topics[w, t]
    for u1, u2, j in data.dataset.triplets:
        assert data.item_topic[j] == data.pair_topic[(min(u1, u2), max(u1, u2))]


def test_noise_free_interactions_stay_in_topic():
    data = generate(SynthConfig(noise=0.0))
    for u, j in data.dataset.interactions:
        assert data.user_topics[u, data.item_topic[j]]


def test_topic_scorer_beats_chance():
    data = generate(SynthConfig())
    split = leave_one_out_split(data.dataset, np.random.default_rng(0))
    assert evaluate(data.topic_scorer(), split)["recall@10"] > 0.3


@pytest.mark.parametrize("kwargs", [
    {"num_users": 1}, {"noise": 1.5}, {"num_topics": 300}, {"topics_per_user": 9},
    {"interactions_per_user": 200}, {"friends_per_user": 0.0},
])
def test_invalid_configs(kwargs):
    with pytest.raises(ValueError):
        generate(SynthConfig(**kwargs))

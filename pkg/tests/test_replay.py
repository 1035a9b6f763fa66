"""Experience buffer: ring eviction and sampling statistics."""

import numpy as np

from driftcorner.replay import ReplayBuffer


def _fill(buf, n, obs_dim=3, act_dim=2):
    for i in range(n):
        buf.add(np.full(obs_dim, i), np.full(act_dim, i), float(i),
                np.full(obs_dim, i + 1), i % 2)


def test_grows_then_saturates():
    buf = ReplayBuffer(10, 3, 2)
    assert len(buf) == 0
    _fill(buf, 7)
    assert len(buf) == 7
    _fill(buf, 10)
    assert len(buf) == 10


def test_ring_evicts_oldest():
    buf = ReplayBuffer(5, 1, 1)
    for i in range(8):
        buf.add([i], [i], i, [i], False)
    # survivors are the last five inserts
    assert sorted(buf.rew.tolist()) == [3.0, 4.0, 5.0, 6.0, 7.0]


def test_sample_contents_are_stored_transitions():
    buf = ReplayBuffer(100, 3, 2)
    _fill(buf, 50)
    obs, act, rew, obs_next, done = buf.sample(20, np.random.default_rng(0))
    assert obs.shape == (20, 3) and act.shape == (20, 2)
    np.testing.assert_array_equal(obs[:, 0], rew)
    np.testing.assert_array_equal(obs_next[:, 0], rew + 1)
    np.testing.assert_array_equal(done, rew.astype(int) % 2)


def test_sample_without_replacement():
    buf = ReplayBuffer(100, 1, 1)
    _fill(buf, 30, 1, 1)
    _, _, rew, _, _ = buf.sample(30, np.random.default_rng(1))
    assert len(set(rew.tolist())) == 30


def test_sample_clamps_to_size():
    buf = ReplayBuffer(100, 1, 1)
    _fill(buf, 4, 1, 1)
    obs, *_ = buf.sample(64, np.random.default_rng(2))
    assert obs.shape[0] == 4


def test_sampling_is_roughly_uniform():
    buf = ReplayBuffer(20, 1, 1)
    _fill(buf, 20, 1, 1)
    rng = np.random.default_rng(3)
    counts = np.zeros(20)
    for _ in range(2000):
        _, _, rew, _, _ = buf.sample(5, rng)
        for r in rew:
            counts[int(r)] += 1
    # each item expected 500 draws; allow generous statistical slack
    assert counts.min() > 350 and counts.max() < 650

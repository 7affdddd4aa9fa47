"""Shared fixtures and independent reference implementations for the tests."""

import itertools
import math

import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def naive_nade_log_prob(W, V, b_v, b_h, v):
    """Quadratic-time NADE likelihood: recomputes every hidden layer from scratch."""
    total = 0.0
    for j in range(len(v)):
        pre = b_h.copy()
        for k in range(j):
            pre = pre + W[:, k] * v[k]
        hid = 1.0 / (1.0 + np.exp(-pre))
        p = 1.0 / (1.0 + math.exp(-(b_v[j] + V[j] @ hid)))
        total += math.log(p if v[j] else 1.0 - p)
    return total


def binary_patterns(n):
    return [np.array(bits, dtype=np.float64) for bits in itertools.product((0, 1), repeat=n)]


def joint_table(W, b_v, b_h):
    """Unnormalised ``exp(-E(v, h))`` for every (v, h) by brute force."""
    vs, hs = binary_patterns(W.shape[1]), binary_patterns(W.shape[0])
    table = np.array([[math.exp(b_v @ v + b_h @ h + h @ W @ v) for h in hs] for v in vs])
    return vs, hs, table


class ReplayOracle:
    """Symbolic model that knows the true sequence and predicts it with confidence."""

    def __init__(self, truth, confidence=0.999):
        self.truth = np.asarray(truth, dtype=np.float64)
        self.confidence = confidence
        self.n_visible = self.truth.shape[1]

    def initial_state(self):
        return 0

    def next_state(self, state, frame):
        return state + 1

    def frame_log_prob(self, state, frames, **_):
        target = self.truth[min(state, len(self.truth) - 1)]
        hit = np.all(np.atleast_2d(frames) == target, axis=1)
        return np.where(hit, math.log(self.confidence), math.log(1 - self.confidence))

    def predictive(self, state, rng, n_samples=1, **_):
        target = self.truth[min(state, len(self.truth) - 1)]
        return target.copy(), np.tile(target, (n_samples, 1))

    def sequence_log_likelihood(self, v_seq, eval_config=None):
        per = np.array([self.frame_log_prob(t, f[None])[0] for t, f in enumerate(v_seq)])
        return float(per.sum()), per

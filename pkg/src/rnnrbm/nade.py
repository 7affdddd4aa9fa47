"""Neural autoregressive distribution estimator over binary vectors.

Units are visited in ascending index order.  The hidden pre-activation for
unit ``j`` is ``b_h + sum_{k<j} W[:, k] v_k`` and

    P(v_j = 1 | v_<j) = sigmoid(b_v[j] + V[j] . sigmoid(pre_j)).

Both bias vectors can be replaced per call (``bias_override``) and may carry
leading batch dimensions, so a sequence model can hand in different biases
for every time step while ``W`` and ``V`` stay shared.
"""

from dataclasses import dataclass

import numpy as np

from .numerics import (
    check_finite,
    make_rng,
    momentum_step,
    sample_bernoulli,
    sigmoid,
    softplus,
)


@dataclass(frozen=True)
class NADE:
    W: np.ndarray  # (n_hidden, n_visible)
    V: np.ndarray  # (n_visible, n_hidden)
    b_v: np.ndarray
    b_h: np.ndarray

    def __post_init__(self):
        for name in ("W", "V", "b_v", "b_h"):
            object.__setattr__(self, name, check_finite(getattr(self, name), name))
        n_h, n_v = self.W.shape
        if self.V.shape != (n_v, n_h) or self.b_v.shape[-1] != n_v or self.b_h.shape[-1] != n_h:
            raise ValueError("inconsistent NADE parameter shapes")

    @property
    def n_visible(self):
        return self.W.shape[1]

    @property
    def n_hidden(self):
        return self.W.shape[0]

    @classmethod
    def zeros(cls, n_visible, n_hidden):
        return cls(np.zeros((n_hidden, n_visible)), np.zeros((n_visible, n_hidden)),
                   np.zeros(n_visible), np.zeros(n_hidden))

    @classmethod
    def random(cls, n_visible, n_hidden, rng, std=0.1):
        return cls(rng.normal(0, std, (n_hidden, n_visible)),
                   rng.normal(0, std, (n_visible, n_hidden)),
                   rng.normal(0, std, n_visible),
                   rng.normal(0, std, n_hidden))


@dataclass
class NADEGradient:
    dW: np.ndarray
    dV: np.ndarray
    db_v: np.ndarray
    db_h: np.ndarray


def _biases(nade, bias_override):
    if bias_override is None:
        return nade.b_v, nade.b_h
    b_v, b_h = (np.asarray(b, dtype=np.float64) for b in bias_override)
    if b_v.shape[-1] != nade.n_visible or b_h.shape[-1] != nade.n_hidden:
        raise ValueError("bias override has the wrong dimension")
    return b_v, b_h


def _check_v(nade, v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != nade.n_visible:
        raise ValueError(f"expected {nade.n_visible} visible units, got {v.shape[-1]}")
    if np.any((v != 0.0) & (v != 1.0)):
        raise ValueError("NADE inputs must be binary")
    return v


def _forward(nade, v, b_v, b_h):
    """Hidden activations (B, n_v, n_h) and output logits (B, n_v)."""
    contrib = v[..., :, None] * nade.W.T  # (B, n_v, n_h)
    pre = b_h[..., None, :] + np.cumsum(contrib, axis=-2) - contrib
    hid = sigmoid(pre)
    logits = b_v + np.einsum("...jh,jh->...j", hid, nade.V)
    return hid, logits


def nade_log_prob(nade, v, bias_override=None):
    """Exact ``log P(v)`` in nats; vectorised over leading dimensions of ``v``."""
    v = _check_v(nade, v)
    b_v, b_h = _biases(nade, bias_override)
    _, logits = _forward(nade, v, b_v, b_h)
    return -(v * softplus(-logits) + (1.0 - v) * softplus(logits)).sum(-1)


def nade_gradient(nade, v, bias_override=None):
    """Exact gradient of ``-log P(v)``.

    For a batch of vectors ``dW`` and ``dV`` are summed over the batch.  The
    bias gradients are reduced to the shape of the biases in use: per-row
    biases get per-row gradients, which is what flows back into a recurrent
    conditioner.
    """
    v = _check_v(nade, v)
    b_v, b_h = _biases(nade, bias_override)
    hid, logits = _forward(nade, v, b_v, b_h)
    d_logits = sigmoid(logits) - v
    n_v, n_h = nade.n_visible, nade.n_hidden
    dV = np.einsum("bj,bjh->jh", d_logits.reshape(-1, n_v), hid.reshape(-1, n_v, n_h))
    d_pre = d_logits[..., None] * nade.V * hid * (1.0 - hid)
    db_h = d_pre.sum(-2)
    # each pre-activation j feeds on inputs k < j
    later = np.cumsum(d_pre[..., ::-1, :], axis=-2)[..., ::-1, :] - d_pre
    dW = np.einsum("bk,bkh->hk", np.broadcast_to(v, later.shape[:-1]).reshape(-1, n_v),
                   later.reshape(-1, n_v, n_h))
    return NADEGradient(dW, dV, _reduce_to(d_logits, np.shape(b_v)),
                        _reduce_to(db_h, np.shape(b_h)))


def _reduce_to(grad, shape):
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(tuple(range(extra)))
    return grad


def nade_conditionals(nade, v, bias_override=None):
    """``P(v_j = 1 | v_<j)`` for every ``j``, evaluated at ``v``."""
    v = _check_v(nade, v)
    b_v, b_h = _biases(nade, bias_override)
    return sigmoid(_forward(nade, v, b_v, b_h)[1])


def _ancestral(nade, bias_override, n, rng, mean_only):
    b_v, b_h = _biases(nade, bias_override)
    pre = np.broadcast_to(b_h, (n, nade.n_hidden)).copy()
    out = np.zeros((n, nade.n_visible))
    for j in range(nade.n_visible):
        p = sigmoid(b_v[j] + sigmoid(pre) @ nade.V[j])
        out[:, j] = p if mean_only else sample_bernoulli(p, rng)
        pre += out[:, j:j + 1] * nade.W[:, j]
    return out


def nade_sample(nade, rng, bias_override=None, n=None):
    """Ancestral sample(s), drawing ``v_1, v_2, ...`` in order."""
    b_v, _ = _biases(nade, bias_override)
    if np.ndim(b_v) > 1:
        raise ValueError("sampling needs a single bias vector")
    out = _ancestral(nade, bias_override, 1 if n is None else n, rng, False)
    return out[0] if n is None else out


def nade_mean_propagation(nade, bias_override=None):
    """Approximate marginals ``P(v_j = 1)``, feeding each mean forward as input.

    Exact for the first unit and whenever ``W = 0``; otherwise a
    deterministic approximation.
    """
    return _ancestral(nade, bias_override, 1, None, True)[0]


def train_nade(frames, n_hidden, learning_rate=0.05, epochs=20, batch_size=10,
               momentum=0.9, seed=0, init_std=0.01):
    """Fit a NADE to independent frames by minibatch SGD with momentum."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or len(frames) == 0:
        raise ValueError("train_nade needs a non-empty 2-D array of frames")
    rng = make_rng(seed)
    n_v = frames.shape[1]
    params = {
        "W": rng.normal(0, init_std, (n_hidden, n_v)),
        "V": rng.normal(0, init_std, (n_v, n_hidden)),
        "b_v": np.zeros(n_v),
        "b_h": np.zeros(n_hidden),
    }
    velocity = {}
    for _ in range(epochs):
        order = rng.permutation(len(frames))
        for s in range(0, len(order), batch_size):
            batch = frames[order[s:s + batch_size]]
            g = nade_gradient(NADE(**params), batch)
            grads = {"W": g.dW, "V": g.dV, "b_v": g.db_v, "b_h": g.db_h}
            grads = {k: v / len(batch) for k, v in grads.items()}
            params, velocity = momentum_step(params, grads, velocity, learning_rate, momentum)
    return NADE(**params)

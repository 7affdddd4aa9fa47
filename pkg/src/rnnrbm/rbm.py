"""Restricted Boltzmann machines with binary hidden units.

The energy of a configuration is ``E(v, h) = -b_v.v - b_h.h - h.W.v`` with
``W`` of shape ``(n_hidden, n_visible)``.  Visible units are either binary
(values in [0, 1] are accepted, so mean-field or grey-level inputs work) or
unit-variance Gaussians, in which case ``0.5 * |v|**2`` is added to the
energy.

Most functions accept a single vector or a batch of row vectors.  The bias
vectors may also carry leading batch dimensions (one conditional RBM per
row), which is how the sequence models evaluate all time steps at once.
"""

import logging
from dataclasses import dataclass

import numpy as np

from .numerics import (
    all_binary_vectors,
    check_finite,
    logsumexp,
    make_rng,
    sample_bernoulli,
    sigmoid,
    softplus,
)

log = logging.getLogger(__name__)

BINARY = "binary"
GAUSSIAN = "gaussian"
MAX_ENUMERATION = 20


@dataclass(frozen=True)
class RBM:
    W: np.ndarray
    b_v: np.ndarray
    b_h: np.ndarray
    visible_kind: str = BINARY

    def __post_init__(self):
        W = check_finite(self.W, "W")
        b_v = check_finite(self.b_v, "b_v")
        b_h = check_finite(self.b_h, "b_h")
        if W.ndim != 2:
            raise ValueError("W must be a matrix")
        if b_v.shape[-1] != W.shape[1] or b_h.shape[-1] != W.shape[0]:
            raise ValueError(
                f"inconsistent shapes W{W.shape} b_v{b_v.shape} b_h{b_h.shape}"
            )
        if self.visible_kind not in (BINARY, GAUSSIAN):
            raise ValueError(f"unknown visible kind {self.visible_kind!r}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b_v", b_v)
        object.__setattr__(self, "b_h", b_h)

    @property
    def n_visible(self):
        return self.W.shape[1]

    @property
    def n_hidden(self):
        return self.W.shape[0]

    @classmethod
    def zeros(cls, n_visible, n_hidden, visible_kind=BINARY):
        return cls(
            np.zeros((n_hidden, n_visible)),
            np.zeros(n_visible),
            np.zeros(n_hidden),
            visible_kind,
        )

    @classmethod
    def random(cls, n_visible, n_hidden, rng, weight_std=0.1, bias_std=0.0,
               visible_kind=BINARY):
        return cls(
            rng.normal(0.0, weight_std, (n_hidden, n_visible)),
            rng.normal(0.0, bias_std, n_visible) if bias_std else np.zeros(n_visible),
            rng.normal(0.0, bias_std, n_hidden) if bias_std else np.zeros(n_hidden),
            visible_kind,
        )

    def with_weights(self, W):
        return RBM(W, self.b_v, self.b_h, self.visible_kind)


@dataclass
class RBMGradient:
    dW: np.ndarray
    db_v: np.ndarray
    db_h: np.ndarray


def _visible(rbm, v):
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != rbm.n_visible:
        raise ValueError(f"expected {rbm.n_visible} visible units, got {v.shape[-1]}")
    if rbm.visible_kind == BINARY:
        if np.any(v < 0.0) or np.any(v > 1.0):
            raise ValueError("binary visible units must lie in [0, 1]")
    else:
        check_finite(v, "visible vector")
    return v


def _hidden(rbm, h):
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != rbm.n_hidden:
        raise ValueError(f"expected {rbm.n_hidden} hidden units, got {h.shape[-1]}")
    return h


def hidden_preactivation(rbm, v):
    return rbm.b_h + v @ rbm.W.T


def hidden_conditional(rbm, v):
    """``P(h_i = 1 | v) = sigmoid(b_h + W v)``."""
    v = _visible(rbm, v)
    return sigmoid(hidden_preactivation(rbm, v))


def visible_conditional(rbm, h):
    """Bernoulli means (binary kind) or Gaussian means (gaussian kind) of ``v | h``."""
    h = _hidden(rbm, h)
    pre = rbm.b_v + h @ rbm.W
    if rbm.visible_kind == GAUSSIAN:
        return pre
    return sigmoid(pre)


def energy(rbm, v, h):
    v = _visible(rbm, v)
    h = _hidden(rbm, h)
    e = -(v * rbm.b_v).sum(-1) - (h * rbm.b_h).sum(-1) - ((h @ rbm.W) * v).sum(-1)
    if rbm.visible_kind == GAUSSIAN:
        e = e + 0.5 * (v * v).sum(-1)
    return e


def free_energy(rbm, v):
    """Free energy ``F(v) = -log sum_h exp(-E(v, h))`` in nats."""
    v = _visible(rbm, v)
    lin = (v * rbm.b_v).sum(-1)
    f = -lin - softplus(hidden_preactivation(rbm, v)).sum(-1)
    if rbm.visible_kind == GAUSSIAN:
        f = f + 0.5 * (v * v).sum(-1)
    return f


def sample_visible(rbm, h, rng):
    mean = visible_conditional(rbm, h)
    if rbm.visible_kind == GAUSSIAN:
        return mean + rng.standard_normal(mean.shape)
    return sample_bernoulli(mean, rng)


def gibbs_step(rbm, v, rng, return_mean=False):
    """One block Gibbs sweep ``v -> h -> v'``.

    With ``return_mean=True`` the visible conditional mean used for the last
    draw is returned alongside the sample.
    """
    ph = hidden_conditional(rbm, v)
    h = sample_bernoulli(ph, rng)
    mean = visible_conditional(rbm, h)
    if rbm.visible_kind == GAUSSIAN:
        v_new = mean + rng.standard_normal(mean.shape)
    else:
        v_new = sample_bernoulli(mean, rng)
    if return_mean:
        return v_new, mean
    return v_new


def gibbs_chain(rbm, v, k, rng):
    """Run ``k`` Gibbs sweeps from ``v``; return ``(v_k, mean_k)``."""
    if k < 1:
        raise ValueError("k must be at least 1")
    mean = None
    for _ in range(k):
        v, mean = gibbs_step(rbm, v, rng, return_mean=True)
    return v, mean


def free_energy_gradient(rbm, v):
    """Gradient of ``sum F(v)`` over the batch, per-row for the biases."""
    v = _visible(rbm, v)
    ph = sigmoid(hidden_preactivation(rbm, v))
    v_b = np.broadcast_to(v, ph.shape[:-1] + v.shape[-1:])
    dW = -ph.reshape(-1, rbm.n_hidden).T @ v_b.reshape(-1, rbm.n_visible)
    return RBMGradient(dW, -v, -ph)


def cd_gradient(rbm, v, k, rng):
    """CD-k estimate of the gradient of ``-log P(v)``.

    The negative particle ``v*`` is obtained from ``k`` block Gibbs sweeps
    starting at the data.  Hidden activations in both phases are the
    mean-field sigmoids.  For a batch, ``dW`` is summed over rows while the
    bias gradients stay per row.

    Returns
    -------
    (RBMGradient, v_star)
    """
    v = _visible(rbm, v)
    v_star, _ = gibbs_chain(rbm, v, k, rng)
    return cd_gradient_from_particle(rbm, v, v_star), v_star


def cd_gradient_from_particle(rbm, v, v_star):
    pos = free_energy_gradient(rbm, v)
    neg = free_energy_gradient(rbm, v_star)
    return RBMGradient(pos.dW - neg.dW, pos.db_v - neg.db_v, pos.db_h - neg.db_h)


def _log_z_over_hidden(rbm, batch=1 << 14):
    H = all_binary_vectors(rbm.n_hidden)
    parts = []
    for start in range(0, len(H), batch):
        h = H[start:start + batch]
        pre = rbm.b_v + h @ rbm.W
        if rbm.visible_kind == GAUSSIAN:
            inner = 0.5 * (pre * pre).sum(-1) + 0.5 * rbm.n_visible * np.log(2 * np.pi)
        else:
            inner = softplus(pre).sum(-1)
        parts.append(logsumexp(h @ rbm.b_h + inner))
    return float(logsumexp(parts))


def _log_z_over_visible(rbm, batch=1 << 14):
    V = all_binary_vectors(rbm.n_visible)
    parts = [
        logsumexp(-free_energy(rbm, V[s:s + batch]))
        for s in range(0, len(V), batch)
    ]
    return float(logsumexp(parts))


def exact_log_partition(rbm, over=None):
    """``log Z`` by exhaustive enumeration over the smaller layer.

    ``over`` forces the enumeration to ``"visible"`` or ``"hidden"``.  Gaussian
    RBMs are always summed over the hidden layer, with the visible integral
    done in closed form.
    """
    if rbm.b_v.ndim > 1 or rbm.b_h.ndim > 1:
        raise ValueError("exact_log_partition needs unbatched biases")
    if over is None:
        if rbm.visible_kind == GAUSSIAN or rbm.n_hidden <= rbm.n_visible:
            over = "hidden"
        else:
            over = "visible"
    if over == "hidden":
        if rbm.n_hidden > MAX_ENUMERATION:
            raise ValueError(f"cannot enumerate {rbm.n_hidden} hidden units")
        return _log_z_over_hidden(rbm)
    if rbm.visible_kind == GAUSSIAN:
        raise ValueError("cannot enumerate Gaussian visible units")
    if rbm.n_visible > MAX_ENUMERATION:
        raise ValueError(f"cannot enumerate {rbm.n_visible} visible units")
    return _log_z_over_visible(rbm)


def exact_log_probs(rbm):
    """Normalised ``log P(v)`` for every binary visible vector, in counting order."""
    V = all_binary_vectors(rbm.n_visible)
    return -free_energy(rbm, V) - exact_log_partition(rbm)


def ais_log_partition(rbm, n_runs, n_betas, rng, return_weights=False):
    """Annealed importance sampling estimate of ``log Z``.

    The base distribution is the RBM with ``W = 0`` and the same biases,
    whose partition function is known in closed form.  The weights are
    annealed linearly over ``n_betas`` inverse temperatures in [0, 1].

    Returns
    -------
    (log_z, stderr)
        ``stderr`` is the delta-method standard error of ``log_z``.
    """
    if rbm.visible_kind != BINARY:
        raise NotImplementedError("AIS is only implemented for binary visible units")
    if n_runs < 2 or n_betas < 2:
        raise ValueError("need at least 2 runs and 2 inverse temperatures")
    if rbm.b_v.ndim > 1 or rbm.b_h.ndim > 1:
        raise ValueError("ais_log_partition needs unbatched biases")
    betas = np.linspace(0.0, 1.0, n_betas)
    log_z0 = float(softplus(rbm.b_v).sum() + softplus(rbm.b_h).sum())

    def neg_free(v, beta):
        return v @ rbm.b_v + softplus(rbm.b_h + beta * (v @ rbm.W.T)).sum(-1)

    v = sample_bernoulli(np.broadcast_to(sigmoid(rbm.b_v), (n_runs, rbm.n_visible)), rng)
    log_w = np.zeros(n_runs)
    for b_prev, b_next in zip(betas[:-1], betas[1:]):
        log_w += neg_free(v, b_next) - neg_free(v, b_prev)
        h = sample_bernoulli(sigmoid(rbm.b_h + b_next * (v @ rbm.W.T)), rng)
        v = sample_bernoulli(sigmoid(rbm.b_v + b_next * (h @ rbm.W)), rng)

    log_mean = float(logsumexp(log_w) - np.log(n_runs))
    w = np.exp(log_w - log_w.max())
    rel = w / w.mean()
    stderr = float(np.std(rel, ddof=1) / np.sqrt(n_runs))
    estimate = log_z0 + log_mean
    if return_weights:
        return estimate, stderr, log_w
    return estimate, stderr


def log_partition(rbm, method="auto", n_runs=100, n_betas=1000, rng=None):
    """``log Z`` by enumeration when feasible (``method="auto"``), else by AIS."""
    small = min(rbm.n_visible, rbm.n_hidden) <= MAX_ENUMERATION
    if rbm.visible_kind == GAUSSIAN:
        small = rbm.n_hidden <= MAX_ENUMERATION
    if method == "exact" or (method == "auto" and small):
        return exact_log_partition(rbm)
    if method not in ("auto", "ais"):
        raise ValueError(f"unknown partition method {method!r}")
    if rng is None:
        raise ValueError("AIS needs a random generator")
    return ais_log_partition(rbm, n_runs, n_betas, rng)[0]


@dataclass
class RBMTrainConfig:
    n_hidden: int = 100
    k: int = 1
    learning_rate: float = 0.01
    epochs: int = 10
    seed: int = 0
    batch_size: int = 10
    lr_decay: float = 1.0
    weight_std: float = 0.01
    visible_kind: str = BINARY


def train_rbm(frames, config, history=None):
    """Fit an RBM to a set of frames by minibatch CD-k.

    Weights start Gaussian with ``config.weight_std``, biases at zero.  The
    learning rate is constant within an epoch and multiplied by
    ``config.lr_decay`` after each one.  The mean free-energy gap between
    data and negative particles is logged every epoch and, when ``history``
    is a list, appended to it.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or len(frames) == 0:
        raise ValueError("train_rbm needs a non-empty 2-D array of frames")
    rng = make_rng(config.seed)
    n_v = frames.shape[1]
    W = rng.normal(0.0, config.weight_std, (config.n_hidden, n_v))
    b_v = np.zeros(n_v)
    b_h = np.zeros(config.n_hidden)
    lr = config.learning_rate
    for epoch in range(config.epochs):
        order = rng.permutation(len(frames))
        gaps = []
        for s in range(0, len(order), config.batch_size):
            batch = frames[order[s:s + config.batch_size]]
            rbm = RBM(W, b_v, b_h, config.visible_kind)
            grad, v_star = cd_gradient(rbm, batch, config.k, rng)
            n = len(batch)
            W = W - lr * grad.dW / n
            b_v = b_v - lr * grad.db_v.sum(0) / n
            b_h = b_h - lr * grad.db_h.sum(0) / n
            gaps.append(float(np.mean(free_energy(rbm, batch) - free_energy(rbm, v_star))))
        gap = float(np.mean(gaps))
        if history is not None:
            history.append({"epoch": epoch, "free_energy_gap": gap})
        log.debug("rbm epoch %d free-energy gap %.4f", epoch, gap)
        lr *= config.lr_decay
    return RBM(W, b_v, b_h, config.visible_kind)

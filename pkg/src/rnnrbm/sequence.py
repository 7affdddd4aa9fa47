"""Recurrent sequence models with a per-step conditional estimator.

Three kinds share one parameterisation:

``rbm``
    RNN-RBM.  A single-layer RNN with its own hidden units ``h_hat`` drives
    the biases of a conditional RBM at every step.
``nade``
    RNN-NADE.  Same conditioner, NADE estimator, exact gradients.
``rtrbm``
    Recurrent temporal RBM.  The RNN shares its weights with the RBM:
    input weights are ``W``, recurrent weights are ``W_bh`` and the RNN bias
    is ``b_h``.  These are stored once and exposed twice.

At step ``t`` the estimator biases are ``b_h + W_bh h_hat[t-1]`` and
``b_v + W_bv h_hat[t-1]``, and the recurrence is
``h_hat[t] = sigmoid(W_in v[t] + W_rec h_hat[t-1] + b_rnn)``.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import nade as nade_mod
from . import rbm as rbm_mod
from .numerics import (
    NumericalError,
    bernoulli_log_prob,
    clip_by_global_norm,
    make_rng,
    momentum_step,
    sample_bernoulli,
    sigmoid,
)

log = logging.getLogger(__name__)

RBM_KIND = "rbm"
NADE_KIND = "nade"
RTRBM_KIND = "rtrbm"
KINDS = (RBM_KIND, NADE_KIND, RTRBM_KIND)

_BASE_PARAMS = ("W", "b_v", "b_h", "W_bh", "W_bv", "h0")
_RNN_PARAMS = ("W_in", "W_rec", "b_rnn")


@dataclass(frozen=True)
class SequenceModel:
    kind: str
    W: np.ndarray        # (n_hidden, n_visible)
    b_v: np.ndarray      # (n_visible,)
    b_h: np.ndarray      # (n_hidden,)
    W_bh: np.ndarray     # (n_hidden, n_recurrent): h_hat -> hidden bias
    W_bv: np.ndarray     # (n_visible, n_recurrent): h_hat -> visible bias
    h0: np.ndarray       # (n_recurrent,)
    W_in: np.ndarray = None    # (n_recurrent, n_visible)
    W_rec: np.ndarray = None   # (n_recurrent, n_recurrent)
    b_rnn: np.ndarray = None   # (n_recurrent,)
    V: np.ndarray = None       # (n_visible, n_hidden), nade kind only
    visible_kind: str = rbm_mod.BINARY

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        for name in self.param_names:
            value = getattr(self, name)
            if value is None:
                raise ValueError(f"{self.kind} model needs parameter {name}")
            object.__setattr__(self, name, np.asarray(value, dtype=np.float64))
        for name in set(_RNN_PARAMS + ("V",)) - set(self.param_names):
            if getattr(self, name) is not None:
                raise ValueError(f"{self.kind} model does not take parameter {name}")
        n_h, n_v = self.W.shape
        n_r = self.h0.shape[0]
        expected = {
            "b_v": (n_v,), "b_h": (n_h,), "W_bh": (n_h, n_r), "W_bv": (n_v, n_r),
            "W_in": (n_r, n_v), "W_rec": (n_r, n_r), "b_rnn": (n_r,), "V": (n_v, n_h),
        }
        for name in self.param_names:
            if name in expected and getattr(self, name).shape != expected[name]:
                raise ValueError(
                    f"{name} has shape {getattr(self, name).shape}, expected {expected[name]}"
                )
        if self.kind == RTRBM_KIND and n_r != n_h:
            raise ValueError("tied model needs as many recurrent as hidden units")
        if self.kind == NADE_KIND and self.visible_kind != rbm_mod.BINARY:
            raise ValueError("NADE estimator needs binary visible units")

    # -- structure ---------------------------------------------------------

    @property
    def param_names(self):
        names = _BASE_PARAMS
        if self.kind != RTRBM_KIND:
            names = names + _RNN_PARAMS
        if self.kind == NADE_KIND:
            names = names + ("V",)
        return names

    @property
    def tied(self):
        return self.kind == RTRBM_KIND

    @property
    def input_weights(self):
        return self.W if self.tied else self.W_in

    @property
    def recurrent_weights(self):
        return self.W_bh if self.tied else self.W_rec

    @property
    def rnn_bias(self):
        return self.b_h if self.tied else self.b_rnn

    @property
    def n_visible(self):
        return self.W.shape[1]

    @property
    def n_hidden(self):
        return self.W.shape[0]

    @property
    def n_recurrent(self):
        return self.h0.shape[0]

    def params(self):
        return {name: getattr(self, name) for name in self.param_names}

    def with_params(self, **updates):
        return replace(self, **updates)

    @classmethod
    def create(cls, kind, n_visible, n_hidden, n_recurrent=None, rng=None,
               init_std=0.01, visible_kind=rbm_mod.BINARY):
        """Random model: Gaussian weights, zero biases, ``h0`` at 0.5."""
        if kind == RTRBM_KIND:
            if n_recurrent not in (None, n_hidden):
                raise ValueError("tied model: n_recurrent must equal n_hidden")
            n_recurrent = n_hidden
        n_recurrent = n_hidden if n_recurrent is None else n_recurrent
        rng = make_rng(0) if rng is None else rng

        def w(*shape):
            return rng.normal(0.0, init_std, shape) if init_std else np.zeros(shape)

        p = dict(
            W=w(n_hidden, n_visible), b_v=np.zeros(n_visible), b_h=np.zeros(n_hidden),
            W_bh=w(n_hidden, n_recurrent), W_bv=w(n_visible, n_recurrent),
            h0=np.full(n_recurrent, 0.5),
        )
        if kind != RTRBM_KIND:
            p.update(W_in=w(n_recurrent, n_visible), W_rec=w(n_recurrent, n_recurrent),
                     b_rnn=np.zeros(n_recurrent))
        if kind == NADE_KIND:
            p["V"] = w(n_visible, n_hidden)
        return cls(kind=kind, visible_kind=visible_kind, **p)

    def untied(self):
        """The equivalent RNN-RBM of a tied model (``W_in = W`` etc.)."""
        if not self.tied:
            return self
        return SequenceModel(RBM_KIND, **self.params(), W_in=self.W.copy(),
                             W_rec=self.W_bh.copy(), b_rnn=self.b_h.copy(),
                             visible_kind=self.visible_kind)

    # -- step-wise predictor interface -------------------------------------

    def initial_state(self):
        return _State(self.h0, None)

    def next_state(self, state, frame):
        frame = np.asarray(frame, dtype=np.float64)
        h = sigmoid(self.input_weights @ frame + self.recurrent_weights @ state.h_hat
                    + self.rnn_bias)
        return _State(h, frame)

    def step_biases(self, state):
        return self.b_v + self.W_bv @ state.h_hat, self.b_h + self.W_bh @ state.h_hat

    def estimator(self, b_v, b_h):
        """The conditional RBM or NADE for the given (possibly batched) biases."""
        if self.kind == NADE_KIND:
            return nade_mod.NADE(self.W, self.V, b_v, b_h)
        return rbm_mod.RBM(self.W, b_v, b_h, self.visible_kind)

    def frame_log_prob(self, state, frames, normalized=True, eval_config=None):
        """``log P(frame | history)`` for each row of ``frames``.

        For the RBM kinds ``normalized=False`` skips the partition function,
        leaving a per-state constant offset.
        """
        est = self.estimator(*self.step_biases(state))
        frames = np.asarray(frames, dtype=np.float64)
        if self.kind == NADE_KIND:
            return nade_mod.nade_log_prob(est, frames)
        out = -rbm_mod.free_energy(est, frames)
        if normalized:
            cfg = eval_config or EvalConfig()
            out = out - rbm_mod.log_partition(
                est, cfg.partition, cfg.ais_runs, cfg.ais_betas, make_rng(cfg.seed))
        return out

    def predictive(self, state, rng, n_samples=1, n_gibbs=50):
        """Mean-field prediction and ``n_samples`` sampled frames for the next step.

        RBM kinds run ``n_gibbs`` block Gibbs sweeps from the previous frame
        (zeros at the first step); the mean is averaged over chains.  The
        NADE kind returns mean-propagated marginals and ancestral samples.
        """
        b_v, b_h = self.step_biases(state)
        est = self.estimator(b_v, b_h)
        if self.kind == NADE_KIND:
            mean = nade_mod.nade_mean_propagation(est)
            return mean, nade_mod.nade_sample(est, rng, n=n_samples)
        start = np.zeros(self.n_visible) if state.last is None else state.last
        v = np.broadcast_to(start, (n_samples, self.n_visible)).copy()
        v, mean = rbm_mod.gibbs_chain(est, v, n_gibbs, rng)
        return mean.mean(0), v

    def sequence_log_likelihood(self, v_seq, eval_config=None):
        return sequence_log_likelihood(self, v_seq, eval_config)


@dataclass(frozen=True)
class _State:
    h_hat: np.ndarray
    last: np.ndarray


@dataclass
class ForwardTrace:
    v: np.ndarray       # (T, n_visible)
    h_hat: np.ndarray   # (T + 1, n_recurrent); row 0 is h0
    b_v: np.ndarray     # (T, n_visible) per-step visible biases
    b_h: np.ndarray     # (T, n_hidden) per-step hidden biases

    @property
    def length(self):
        return self.v.shape[0]


@dataclass
class EvalConfig:
    partition: str = "auto"   # auto | exact | ais
    ais_runs: int = 100
    ais_betas: int = 1000
    seed: int = 0


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    epochs: int = 10
    k: int = 1
    gradient_clip_norm: float = 10.0
    seed: int = 0
    batch_size: int = 1
    lr_decay: float = 1.0
    rbm_init: bool = False
    rnn_init: bool = False
    pretrain_rbm_epochs: int = 10
    pretrain_rbm_learning_rate: float = 0.01
    pretrain_rnn_epochs: int = 10
    pretrain_rnn_learning_rate: float = 0.01

    def __post_init__(self):
        if self.learning_rate < 0 or not 0 <= self.momentum < 1:
            raise ValueError("learning rate must be >= 0 and momentum in [0, 1)")
        if self.k < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("k and batch_size must be >= 1, epochs >= 0")


def _as_sequence(v_seq, n_visible):
    v = np.asarray(v_seq, dtype=np.float64)
    if v.ndim != 2 or v.shape[0] < 1:
        raise ValueError("a sequence must be a non-empty (T, n_visible) array")
    if v.shape[1] != n_visible:
        raise ValueError(f"expected frames of dimension {n_visible}, got {v.shape[1]}")
    return v


def _rnn_hidden(v, W_in, W_rec, b_rnn, h0):
    T = v.shape[0]
    h = np.empty((T + 1, h0.shape[0]))
    h[0] = h0
    drive = v @ W_in.T + b_rnn
    for t in range(T):
        h[t + 1] = sigmoid(drive[t] + W_rec @ h[t])
    return h


def rnn_forward(model, v_seq):
    """Propagate the recurrent units through ``v_seq`` and collect per-step biases."""
    v = _as_sequence(v_seq, model.n_visible)
    h = _rnn_hidden(v, model.input_weights, model.recurrent_weights, model.rnn_bias,
                    model.h0)
    prev = h[:-1]
    return ForwardTrace(v, h, model.b_v + prev @ model.W_bv.T, model.b_h + prev @ model.W_bh.T)


def _bptt(trace, db_v, db_h, W_rec, W_bh, W_bv):
    T = trace.length
    h = trace.h_hat
    n_r = h.shape[1]
    if db_v.shape[0] != T or (db_h is not None and db_h.shape[0] != T):
        raise ValueError("per-step gradients and trace differ in length")
    # back-signal reaching each h_hat[t] through the biases of step t + 1
    via_bias = db_v @ W_bv
    if db_h is not None:
        via_bias = via_bias + db_h @ W_bh
    d_h = np.zeros((T + 1, n_r))
    d_pre = np.zeros((T + 1, n_r))  # d_pre[t] = dC/dh_hat[t] * h_hat[t] (1 - h_hat[t])
    for t in range(T - 1, -1, -1):
        d_h[t] = W_rec.T @ d_pre[t + 1] + via_bias[t]
        if t > 0:
            d_pre[t] = d_h[t] * h[t] * (1.0 - h[t])
    dp = d_pre[1:]
    grads = {
        "W_bv": db_v.T @ h[:-1],
        "b_v": db_v.sum(0),
        "W_in": dp.T @ trace.v,
        "W_rec": dp.T @ h[:-1],
        "b_rnn": dp.sum(0),
        "h0": d_h[0],
    }
    if db_h is not None:
        grads["W_bh"] = db_h.T @ h[:-1]
        grads["b_h"] = db_h.sum(0)
    return grads


def bptt_gradients(trace, per_step_bias_grads, model):
    """Back-propagate per-step bias gradients through time.

    Parameters
    ----------
    trace : ForwardTrace
    per_step_bias_grads : tuple of arrays
        ``(db_v, db_h)`` with shapes ``(T, n_visible)`` and ``(T, n_hidden)``:
        the gradient of the cost with respect to each step's biases.
    model : SequenceModel

    Returns
    -------
    dict
        Gradients for ``W_bh, W_bv, b_h, b_v, W_in, W_rec, b_rnn, h0``, always
        under the untied names.  The gradient reaching the last hidden state
        is zero, and the one reaching ``h0`` is returned for it.
    """
    db_v, db_h = (np.asarray(g, dtype=np.float64) for g in per_step_bias_grads)
    return _bptt(trace, db_v, db_h, model.recurrent_weights, model.W_bh, model.W_bv)


@dataclass
class StepDiagnostics:
    cost: float               # free-energy gap (rbm kinds) or exact NLL (nade)
    per_step: np.ndarray
    grad_norm: float = 0.0
    v_star: np.ndarray = field(default=None, repr=False)
    v_star_mean: np.ndarray = field(default=None, repr=False)


def sequence_gradients(model, v_seq, k, rng):
    """Estimated (rbm kinds) or exact (nade) gradient of ``-log P(v_seq)``.

    Runs the forward pass, draws the negative particles with a ``k``-step
    Gibbs chain started at each data frame, forms the per-step estimator
    gradients and back-propagates the bias gradients through time.  Keys of
    the returned dict match ``model.param_names``; for the tied kind the
    shared parameters receive the sum of both of their uses.
    """
    trace = rnn_forward(model, v_seq)
    v = trace.v
    est = model.estimator(trace.b_v, trace.b_h)
    diag = {}
    if model.kind == NADE_KIND:
        g = nade_mod.nade_gradient(est, v)
        per_step = -nade_mod.nade_log_prob(est, v)
        grads = {"W": g.dW, "V": g.dV}
        db_v, db_h = g.db_v, g.db_h
    else:
        v_star, v_star_mean = rbm_mod.gibbs_chain(est, v, k, rng)
        g = rbm_mod.cd_gradient_from_particle(est, v, v_star)
        per_step = rbm_mod.free_energy(est, v) - rbm_mod.free_energy(est, v_star)
        grads = {"W": g.dW}
        db_v, db_h = g.db_v, g.db_h
        diag.update(v_star=v_star, v_star_mean=v_star_mean)
    bad = ~(np.isfinite(db_v).all(1) & np.isfinite(db_h).all(1))
    if bad.any():
        raise NumericalError(f"non-finite gradient at time step {int(np.argmax(bad))}")
    rnn = bptt_gradients(trace, (db_v, db_h), model)
    if model.tied:
        grads["W"] = grads["W"] + rnn.pop("W_in")
        rnn["W_bh"] = rnn["W_bh"] + rnn.pop("W_rec")
        rnn["b_h"] = rnn["b_h"] + rnn.pop("b_rnn")
    grads.update(rnn)
    diagnostics = StepDiagnostics(float(per_step.sum()), per_step, **diag)
    return {name: grads[name] for name in model.param_names}, diagnostics


def train_step(model, v_seq, config, rng, velocity=None):
    """One SGD-with-momentum update on a single sequence.

    Returns ``(new_model, diagnostics, velocity)``; pass the velocity back in
    on the next call.
    """
    grads, diag = sequence_gradients(model, v_seq, config.k, rng)
    return _apply(model, grads, diag, config, config.learning_rate, velocity)


def _apply(model, grads, diag, config, lr, velocity):
    grads, norm = clip_by_global_norm(grads, config.gradient_clip_norm)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name} after clipping")
    diag.grad_norm = norm
    params, velocity = momentum_step(model.params(), grads, velocity or {}, lr,
                                     config.momentum)
    return model.with_params(**params), diag, velocity


def fit(model, sequences, config, rng=None, history=None, callback=None):
    """Train for ``config.epochs`` passes over ``sequences`` in shuffled order.

    ``history`` (a list) receives one dict per epoch with the mean training
    diagnostic cost per frame.  ``callback(epoch, model)`` is called after
    each epoch.
    """
    rng = make_rng(config.seed) if rng is None else rng
    seqs = [_as_sequence(s, model.n_visible) for s in sequences]
    if not seqs:
        raise ValueError("no training sequences")
    velocity = None
    lr = config.learning_rate
    for epoch in range(config.epochs):
        order = rng.permutation(len(seqs))
        total, frames = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [seqs[i] for i in order[start:start + config.batch_size]]
            acc, diag = None, None
            for s in batch:
                try:
                    g, d = sequence_gradients(model, s, config.k, rng)
                except NumericalError as exc:
                    raise NumericalError(f"epoch {epoch}, update {start}: {exc}") from exc
                acc = g if acc is None else {n: acc[n] + g[n] for n in acc}
                total += d.cost
                frames += len(s)
                diag = d
            grads = {n: a / len(batch) for n, a in acc.items()}
            model, _, velocity = _apply(model, grads, diag, config, lr, velocity)
        record = {"epoch": epoch, "cost_per_frame": total / frames}
        log.debug("epoch %d cost/frame %.5f", epoch, record["cost_per_frame"])
        if history is not None:
            history.append(record)
        if callback is not None:
            callback(epoch, model)
        lr *= config.lr_decay
    return model


# -- pretraining -----------------------------------------------------------


def pretrain_rbm_init(model, frames, config, history=None):
    """Initialise ``W, b_v, b_h`` from an RBM trained on the individual frames.

    The hidden-to-bias weights are redrawn with standard deviation 0.01 so
    the sequence model starts out close to a set of independent RBMs.
    """
    if model.kind == NADE_KIND:
        raise ValueError("RBM initialisation applies to the rbm and rtrbm kinds")
    frames = np.asarray(frames, dtype=np.float64)
    rbm_cfg = rbm_mod.RBMTrainConfig(
        n_hidden=model.n_hidden, k=config.k,
        learning_rate=config.pretrain_rbm_learning_rate,
        epochs=config.pretrain_rbm_epochs, seed=config.seed,
        visible_kind=model.visible_kind,
    )
    rbm = rbm_mod.train_rbm(frames, rbm_cfg, history=history)
    rng = make_rng(config.seed + 1)
    return model.with_params(
        W=rbm.W, b_v=rbm.b_v, b_h=rbm.b_h,
        W_bh=rng.normal(0.0, 0.01, model.W_bh.shape),
        W_bv=rng.normal(0.0, 0.01, model.W_bv.shape),
    )


def pretrain_rnn_init(model, sequences, config, history=None):
    """Initialise the recurrent part from an RNN trained on the cross-entropy cost.

    Copies ``W_in, W_rec, b_rnn, W_bv, b_v, h0``.  For the tied kind the RNN
    weights land in the shared ``W, W_bh, b_h``.
    """
    rnn_cfg = TrainConfig(
        learning_rate=config.pretrain_rnn_learning_rate, momentum=config.momentum,
        epochs=config.pretrain_rnn_epochs, gradient_clip_norm=config.gradient_clip_norm,
        seed=config.seed + 2,
    )
    init = RNNPredictor.create(model.n_visible, model.n_recurrent,
                               make_rng(config.seed + 3))
    rnn = train_rnn(init, sequences, rnn_cfg, history=history)
    if model.tied:
        return model.with_params(W=rnn.W_in, W_bh=rnn.W_rec, b_h=rnn.b_rnn,
                                 W_bv=rnn.W_bv, b_v=rnn.b_v, h0=rnn.h0)
    return model.with_params(W_in=rnn.W_in, W_rec=rnn.W_rec, b_rnn=rnn.b_rnn,
                             W_bv=rnn.W_bv, b_v=rnn.b_v, h0=rnn.h0)


# -- generation, prediction, likelihood ------------------------------------


def generate(model, T, rng, prime=None, gibbs_steps=25):
    """Sample a ``(T, n_visible)`` sequence.

    Frames of ``prime`` are clamped in place of samples for the first
    ``len(prime)`` steps.  RBM kinds draw each frame with a ``gibbs_steps``
    chain started at the previous frame; NADE draws ancestrally.
    """
    if T < 1:
        raise ValueError("T must be at least 1")
    prime = np.zeros((0, model.n_visible)) if prime is None else _as_sequence(
        prime, model.n_visible)
    out = np.zeros((T, model.n_visible))
    state = model.initial_state()
    for t in range(T):
        if t < len(prime):
            frame = prime[t]
        else:
            b_v, b_h = model.step_biases(state)
            est = model.estimator(b_v, b_h)
            if model.kind == NADE_KIND:
                frame = nade_mod.nade_sample(est, rng)
            else:
                start = np.zeros(model.n_visible) if state.last is None else state.last
                frame, _ = rbm_mod.gibbs_chain(est, start, gibbs_steps, rng)
        out[t] = frame
        state = model.next_state(state, frame)
    return out


def predict_next(model, history, n_gibbs=50, rng=None):
    """Predict the frame following ``history``.

    Returns ``(mean_field, sample)``.  For the RBM kinds a Gibbs chain of
    ``n_gibbs`` sweeps starts at the last history frame under the next
    conditional RBM and the final visible activations are returned.
    """
    history = _as_sequence(history, model.n_visible)
    rng = make_rng(0) if rng is None else rng
    state = model.initial_state()
    for frame in history:
        state = model.next_state(state, frame)
    mean, samples = model.predictive(state, rng, 1, n_gibbs)
    return mean, samples[0]


def predict_sequence(model, v_seq, n_gibbs=50, rng=None):
    """Mean-field predictions of frames ``2..T`` from their histories, batched."""
    trace = rnn_forward(model, v_seq)
    rng = make_rng(0) if rng is None else rng
    est = model.estimator(trace.b_v[1:], trace.b_h[1:])
    if model.kind == NADE_KIND:
        return np.array([nade_mod.nade_mean_propagation(est, (bv, bh))
                         for bv, bh in zip(trace.b_v[1:], trace.b_h[1:])])
    _, mean = rbm_mod.gibbs_chain(est, trace.v[:-1], n_gibbs, rng)
    return mean


def sequence_log_likelihood(model, v_seq, eval_config=None):
    """``(total, per_frame)`` log-likelihood in nats.

    Exact for NADE; for the RBM kinds each step's partition function comes
    from enumeration when one layer is small enough, otherwise from AIS
    (``eval_config.partition`` can force either).
    """
    cfg = eval_config or EvalConfig()
    trace = rnn_forward(model, v_seq)
    est = model.estimator(trace.b_v, trace.b_h)
    if model.kind == NADE_KIND:
        per = nade_mod.nade_log_prob(est, trace.v)
    else:
        rng = make_rng(cfg.seed)
        log_z = np.array([
            rbm_mod.log_partition(
                rbm_mod.RBM(model.W, bv, bh, model.visible_kind),
                cfg.partition, cfg.ais_runs, cfg.ais_betas, rng)
            for bv, bh in zip(trace.b_v, trace.b_h)
        ])
        per = -rbm_mod.free_energy(est, trace.v) - log_z
    return float(per.sum()), per


# -- the cross-entropy RNN -------------------------------------------------


@dataclass(frozen=True)
class RNNPredictor:
    """RNN whose output ``sigmoid(b_v + W_bv h_hat[t-1])`` predicts frame ``t``.

    This is the recurrent half of the RNN-RBM on its own, trained with the
    mean-over-time binary cross-entropy; it doubles as the plain RNN
    baseline.
    """

    W_in: np.ndarray
    W_rec: np.ndarray
    b_rnn: np.ndarray
    h0: np.ndarray
    W_bv: np.ndarray
    b_v: np.ndarray

    param_names = ("W_in", "W_rec", "b_rnn", "h0", "W_bv", "b_v")

    @property
    def n_visible(self):
        return self.W_in.shape[1]

    @classmethod
    def create(cls, n_visible, n_recurrent, rng=None, init_std=0.01):
        rng = make_rng(0) if rng is None else rng
        return cls(rng.normal(0, init_std, (n_recurrent, n_visible)),
                   rng.normal(0, init_std, (n_recurrent, n_recurrent)),
                   np.zeros(n_recurrent), np.full(n_recurrent, 0.5),
                   rng.normal(0, init_std, (n_visible, n_recurrent)),
                   np.zeros(n_visible))

    def params(self):
        return {n: getattr(self, n) for n in self.param_names}

    def with_params(self, **updates):
        return replace(self, **updates)

    def _trace(self, v_seq):
        v = _as_sequence(v_seq, self.n_visible)
        h = _rnn_hidden(v, self.W_in, self.W_rec, self.b_rnn, self.h0)
        logits = self.b_v + h[:-1] @ self.W_bv.T
        return ForwardTrace(v, h, logits, None), logits

    def cost(self, v_seq):
        """Cross-entropy averaged over time steps, summed over units."""
        trace, logits = self._trace(v_seq)
        return float(-bernoulli_log_prob(trace.v, logits).mean())

    def gradients(self, v_seq):
        trace, logits = self._trace(v_seq)
        d_logits = (sigmoid(logits) - trace.v) / trace.length
        grads = _bptt(trace, d_logits, None, self.W_rec, None, self.W_bv)
        return {n: grads[n] for n in self.param_names}

    def sequence_log_likelihood(self, v_seq, eval_config=None):
        trace, logits = self._trace(v_seq)
        per = bernoulli_log_prob(trace.v, logits)
        return float(per.sum()), per

    def initial_state(self):
        return self.h0

    def next_state(self, state, frame):
        return sigmoid(self.W_in @ np.asarray(frame, dtype=np.float64)
                       + self.W_rec @ state + self.b_rnn)

    def _probs(self, state):
        return sigmoid(self.b_v + self.W_bv @ state)

    def frame_log_prob(self, state, frames, normalized=True, eval_config=None):
        logits = self.b_v + self.W_bv @ state
        return bernoulli_log_prob(np.asarray(frames, dtype=np.float64), logits)

    def predictive(self, state, rng, n_samples=1, **_):
        p = self._probs(state)
        return p, sample_bernoulli(np.broadcast_to(p, (n_samples, p.size)), rng)


def train_rnn(model, sequences, config, rng=None, history=None):
    """SGD with momentum and clipping on the cross-entropy cost."""
    rng = make_rng(config.seed) if rng is None else rng
    seqs = [_as_sequence(s, model.n_visible) for s in sequences]
    if not seqs:
        raise ValueError("no training sequences")
    velocity = {}
    for epoch in range(config.epochs):
        total = 0.0
        for i in rng.permutation(len(seqs)):
            grads, _ = clip_by_global_norm(model.gradients(seqs[i]),
                                           config.gradient_clip_norm)
            params, velocity = momentum_step(model.params(), grads, velocity,
                                             config.learning_rate, config.momentum)
            model = model.with_params(**params)
            total += model.cost(seqs[i]) if history is not None else 0.0
        if history is not None:
            history.append({"epoch": epoch, "cost": total / len(seqs)})
    return model

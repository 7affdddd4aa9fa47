"""Comparison models for symbolic sequence prediction.

Every model here follows the same step-wise predictor interface as
:class:`rnnrbm.sequence.SequenceModel`:

``initial_state()``, ``next_state(state, frame)``
    Fold the history into an opaque state.
``frame_log_prob(state, frames)``
    ``log P(frame | history)`` for each row of ``frames``.
``predictive(state, rng, n_samples)``
    Expected next frame and sampled next frames.

:func:`stepwise_log_likelihood` turns that interface into a sequence
log-likelihood.
"""

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import nade as nade_mod
from . import rbm as rbm_mod
from .numerics import (
    bernoulli_log_prob,
    clip_by_global_norm,
    make_rng,
    momentum_step,
    sample_bernoulli,
    sigmoid,
)
from .sequence import RNNPredictor, TrainConfig, train_rnn


def stepwise_log_likelihood(model, v_seq, **kwargs):
    """``(total, per_frame)`` log-likelihood by walking the predictor state."""
    v_seq = np.asarray(v_seq, dtype=np.float64)
    state = model.initial_state()
    per = np.empty(len(v_seq))
    for t, frame in enumerate(v_seq):
        per[t] = model.frame_log_prob(state, frame[None], **kwargs)[0]
        state = model.next_state(state, frame)
    return float(per.sum()), per


class _Stepwise:
    def sequence_log_likelihood(self, v_seq, eval_config=None):
        return stepwise_log_likelihood(self, v_seq)


@dataclass(frozen=True)
class UniformModel(_Stepwise):
    """Every frame equally likely: ``-n_visible * log 2`` nats per frame."""

    n_visible: int = 88

    def initial_state(self):
        return None

    def next_state(self, state, frame):
        return None

    def frame_log_prob(self, state, frames, **_):
        frames = np.atleast_2d(frames)
        return np.full(len(frames), -self.n_visible * math.log(2.0))

    def predictive(self, state, rng, n_samples=1, **_):
        p = np.full(self.n_visible, 0.5)
        return p, sample_bernoulli(np.broadcast_to(p, (n_samples, self.n_visible)), rng)


@dataclass(frozen=True)
class FrameModel(_Stepwise):
    """A static RBM or NADE applied independently to every frame."""

    estimator: object
    log_z: float = None  # required for an RBM estimator
    n_gibbs: int = 50

    def __post_init__(self):
        if isinstance(self.estimator, rbm_mod.RBM) and self.log_z is None:
            object.__setattr__(self, "log_z", rbm_mod.log_partition(self.estimator))

    @property
    def n_visible(self):
        return self.estimator.n_visible

    def initial_state(self):
        return None

    def next_state(self, state, frame):
        return None

    def frame_log_prob(self, state, frames, normalized=True, **_):
        frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        if isinstance(self.estimator, nade_mod.NADE):
            return nade_mod.nade_log_prob(self.estimator, frames)
        out = -rbm_mod.free_energy(self.estimator, frames)
        return out - self.log_z if normalized else out

    def predictive(self, state, rng, n_samples=1, **_):
        if isinstance(self.estimator, nade_mod.NADE):
            return (nade_mod.nade_mean_propagation(self.estimator),
                    nade_mod.nade_sample(self.estimator, rng, n=n_samples))
        v = np.zeros((n_samples, self.n_visible))
        v, mean = rbm_mod.gibbs_chain(self.estimator, v, self.n_gibbs, rng)
        return mean.mean(0), v


# -- simultaneity N-grams ----------------------------------------------------


def _symbol(frame):
    return np.asarray(frame).astype(np.uint8).tobytes()


def _unsymbol(sym):
    return np.frombuffer(sym, dtype=np.uint8).astype(np.float64)


@dataclass
class NGramModel(_Stepwise):
    """(N-1)th-order Markov chain over whole frames (simultaneities).

    ``smoothing`` is ``"add"`` (add-``p``) or ``"gaussian"``.  Gaussian
    smoothing pools counts from every observed context of the same length,
    weighted by ``exp(-d**2 / (2 sigma**2))`` with ``d`` the Hamming distance
    between the concatenated contexts, then adds ``p``.  Each context
    distribution covers the training vocabulary plus, when ``oov`` is set,
    one bucket shared by all unseen frames.
    """

    order: int
    n_visible: int
    smoothing: str = "add"
    p: float = 0.01
    sigma: float = 1.0
    oov: bool = True
    vocab: dict = field(default_factory=dict)
    counts: list = field(default_factory=list)   # per context length: ctx -> Counter
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def n_events(self):
        return len(self.vocab) + (1 if self.oov else 0)

    def initial_state(self):
        return ()

    def next_state(self, state, frame):
        if self.order == 1:
            return ()
        return (state + (_symbol(frame),))[-(self.order - 1):]

    def _raw_counts(self, ctx):
        c = np.zeros(self.n_events)
        for sym, n in self.counts[len(ctx)].get(ctx, {}).items():
            c[self.vocab[sym]] = n
        return c

    def _smoothed_counts(self, ctx):
        if self.smoothing == "add" or not ctx:
            return self._raw_counts(ctx)
        table = self.counts[len(ctx)]
        if not table:
            return np.zeros(self.n_events)
        keys = list(table)
        query = np.concatenate([_unsymbol(s) for s in ctx])
        others = np.array([np.concatenate([_unsymbol(s) for s in k]) for k in keys])
        d = np.abs(others - query).sum(1)
        weights = np.exp(-d ** 2 / (2.0 * self.sigma ** 2))
        c = np.zeros(self.n_events)
        for w, k in zip(weights, keys):
            if w > 0:
                for sym, n in table[k].items():
                    c[self.vocab[sym]] += w * n
        return c

    def distribution(self, state):
        """``(probabilities over vocab [+ OOV bucket], context length used)``."""
        ctx = tuple(state)[-(self.order - 1):] if self.order > 1 else ()
        if ctx in self._cache:
            return self._cache[ctx]
        length = len(ctx)
        while True:
            sub = ctx[len(ctx) - length:] if length else ()
            c = self._smoothed_counts(sub)
            if c.sum() > 0 or length == 0:
                break
            length -= 1
        total = c.sum() + self.p * self.n_events
        probs = (c + self.p) / total if total > 0 else np.full(self.n_events, 1.0 / self.n_events)
        self._cache[ctx] = (probs, length)
        return probs, length

    def frame_log_prob(self, state, frames, **_):
        probs, _ = self.distribution(state)
        out = []
        for f in np.atleast_2d(frames):
            idx = self.vocab.get(_symbol(f))
            if idx is None:
                pr = probs[-1] if self.oov else 0.0
            else:
                pr = probs[idx]
            out.append(math.log(pr) if pr > 0 else -math.inf)
        return np.array(out)

    def predictive(self, state, rng, n_samples=1, **_):
        probs, _ = self.distribution(state)
        frames = np.zeros((self.n_events, self.n_visible))
        for sym, i in self.vocab.items():
            frames[i] = _unsymbol(sym)
        mean = probs @ frames
        picks = rng.choice(self.n_events, size=n_samples, p=probs / probs.sum())
        return mean, frames[picks]


def ngram_train(sequences, N, smoothing="add", p=0.01, sigma=1.0, oov=True):
    """Count frame N-grams (and all shorter contexts) over ``sequences``."""
    if N < 1:
        raise ValueError("N-gram order must be at least 1")
    sequences = [np.asarray(s) for s in sequences]
    if smoothing not in ("add", "gaussian"):
        raise ValueError(f"unknown smoothing {smoothing!r}")
    n_v = sequences[0].shape[1]
    vocab = {}
    counts = [defaultdict(Counter) for _ in range(N)]
    for seq in sequences:
        syms = [_symbol(f) for f in seq]
        for t, s in enumerate(syms):
            vocab.setdefault(s, len(vocab))
            for length in range(min(t, N - 1) + 1):
                counts[length][tuple(syms[t - length:t])][s] += 1
    return NGramModel(N, n_v, smoothing, p, sigma, oov, vocab,
                      [dict(c) for c in counts])


def ngram_log_prob(model, v_seq):
    """Per-frame log-probabilities (nats) of ``v_seq`` under an N-gram."""
    return stepwise_log_likelihood(model, v_seq)[1]


# -- per-note binary N-grams -------------------------------------------------


@dataclass
class NoteNGramModel(_Stepwise):
    """Each note channel is an independent binary Markov chain of order N-1.

    ``counts[L]`` has shape ``(channels, 2**L, 2)``: counts of the next value
    after every length-``L`` history of that channel (most recent value in
    the lowest bit).  With ``shared`` (IID) there is a single pooled channel.
    """

    order: int
    n_visible: int
    counts: list
    p: float = 0.01
    shared: bool = False

    def initial_state(self):
        return np.zeros((0, self.n_visible), dtype=np.int64)

    def next_state(self, state, frame):
        frame = np.asarray(frame, dtype=np.int64)[None]
        if self.order == 1:
            return state
        return np.concatenate([state, frame])[-(self.order - 1):]

    def on_probabilities(self, state):
        """``P(v_j = 1 | history of channel j)`` for every channel."""
        hist = np.asarray(state, dtype=np.int64)
        out = np.empty(self.n_visible)
        for j in range(self.n_visible):
            ch = 0 if self.shared else j
            length = min(len(hist), self.order - 1)
            while True:
                code = _history_code(hist[len(hist) - length:, j]) if length else 0
                c = self.counts[length][ch, code]
                if c.sum() > 0 or length == 0:
                    break
                length -= 1
            total = c.sum() + 2 * self.p
            out[j] = (c[1] + self.p) / total if total > 0 else 0.5
        return out

    def channel_log_probs(self, state, frame):
        p1 = self.on_probabilities(state)
        frame = np.asarray(frame, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return np.where(frame > 0, np.log(p1), np.log1p(-p1))

    def frame_log_prob(self, state, frames, **_):
        p1 = self.on_probabilities(state)
        frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
        with np.errstate(divide="ignore"):
            lp1, lp0 = np.log(p1), np.log1p(-p1)
        return np.where(frames > 0, lp1, lp0).sum(1)

    def predictive(self, state, rng, n_samples=1, **_):
        p1 = self.on_probabilities(state)
        return p1, sample_bernoulli(np.broadcast_to(p1, (n_samples, self.n_visible)), rng)


def _history_code(bits):
    # most recent value in bit 0
    code = 0
    for b in bits:
        code = (code << 1) | int(b)
    return code


def note_ngram_train(sequences, N, p=0.01, shared=False):
    if N < 1:
        raise ValueError("N-gram order must be at least 1")
    sequences = [np.asarray(s, dtype=np.int64) for s in sequences]
    n_v = sequences[0].shape[1]
    channels = 1 if shared else n_v
    counts = [np.zeros((channels, 2 ** L, 2)) for L in range(N)]
    for seq in sequences:
        for t in range(len(seq)):
            for L in range(min(t, N - 1) + 1):
                codes = np.zeros(n_v, dtype=np.int64)
                for row in seq[t - L:t]:
                    codes = (codes << 1) | row
                if shared:
                    np.add.at(counts[L][0], (codes, seq[t]), 1)
                else:
                    counts[L][np.arange(n_v), codes, seq[t]] += 1
    return NoteNGramModel(N, n_v, counts, p, shared)


def note_ngram_log_prob(model, v_seq):
    return stepwise_log_likelihood(model, v_seq)[1]


def note_ngram_predict(model, history):
    """On-probabilities for the frame following ``history``."""
    state = model.initial_state()
    for frame in np.atleast_2d(history) if len(history) else []:
        state = model.next_state(state, frame)
    return model.on_probabilities(state)


# -- Gaussian centred on the previous frame ----------------------------------


@dataclass
class PreviousGaussianModel(_Stepwise):
    """Gaussian density with mean ``v[t-1]`` (zeros at the first step)."""

    covariance: np.ndarray
    ridge: float = 1e-3

    def __post_init__(self):
        n = self.covariance.shape[0]
        try:
            self._chol = cho_factor(self.covariance + self.ridge * np.eye(n), lower=True)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance is not positive definite after the ridge") from exc
        self._log_det = 2.0 * np.log(np.diag(self._chol[0])).sum()

    @property
    def n_visible(self):
        return self.covariance.shape[0]

    def initial_state(self):
        return np.zeros(self.n_visible)

    def next_state(self, state, frame):
        return np.asarray(frame, dtype=np.float64)

    def frame_log_prob(self, state, frames, **_):
        r = np.atleast_2d(np.asarray(frames, dtype=np.float64)) - state
        maha = (r * cho_solve(self._chol, r.T).T).sum(1)
        return -0.5 * (self.n_visible * math.log(2 * math.pi) + self._log_det + maha)

    def predictive(self, state, rng, n_samples=1, **_):
        L = np.tril(self._chol[0])
        draws = state + rng.standard_normal((n_samples, self.n_visible)) @ L.T
        return state.copy(), (draws > 0.5).astype(np.float64)


def previous_gaussian_fit(sequences, ridge=1e-3):
    """Covariance of the frame-to-frame differences (about zero) plus a ridge."""
    diffs = [np.diff(np.asarray(s, dtype=np.float64), axis=0) for s in sequences]
    if not diffs or any(len(s) < 2 for s in sequences):
        raise ValueError("every sequence needs at least two frames")
    r = np.concatenate(diffs)
    return PreviousGaussianModel(r.T @ r / len(r), ridge)


def previous_gaussian_log_prob(model, v_seq):
    return stepwise_log_likelihood(model, v_seq)[1]


# -- window MLP ----------------------------------------------------------------


@dataclass(frozen=True)
class WindowMLP(_Stepwise):
    """One hidden logistic layer fed with the last ``window`` frames."""

    W1: np.ndarray   # (n_hidden, window * n_visible)
    b1: np.ndarray
    W2: np.ndarray   # (n_visible, n_hidden)
    b2: np.ndarray
    window: int

    param_names = ("W1", "b1", "W2", "b2")

    @property
    def n_visible(self):
        return self.W2.shape[0]

    @classmethod
    def create(cls, n_visible, window, n_hidden=300, rng=None, init_std=0.01):
        rng = make_rng(0) if rng is None else rng
        return cls(rng.normal(0, init_std, (n_hidden, window * n_visible)), np.zeros(n_hidden),
                   rng.normal(0, init_std, (n_visible, n_hidden)), np.zeros(n_visible), window)

    def params(self):
        return {n: getattr(self, n) for n in self.param_names}

    def with_params(self, **updates):
        return replace(self, **updates)

    def _inputs(self, v):
        """Row t holds frames t-1, t-2, ..., t-window (zeros before the start)."""
        T, n = v.shape
        padded = np.vstack([np.zeros((self.window, n)), v])
        return np.hstack([padded[self.window - k:self.window - k + T] for k in range(1, self.window + 1)])

    def _forward(self, v):
        x = self._inputs(v)
        hid = sigmoid(x @ self.W1.T + self.b1)
        return x, hid, hid @ self.W2.T + self.b2

    def cost(self, v_seq):
        v = np.asarray(v_seq, dtype=np.float64)
        return float(-bernoulli_log_prob(v, self._forward(v)[2]).mean())

    def gradients(self, v_seq):
        v = np.asarray(v_seq, dtype=np.float64)
        x, hid, logits = self._forward(v)
        d_out = (sigmoid(logits) - v) / len(v)
        d_hid = (d_out @ self.W2) * hid * (1 - hid)
        return {"W1": d_hid.T @ x, "b1": d_hid.sum(0), "W2": d_out.T @ hid, "b2": d_out.sum(0)}

    def sequence_log_likelihood(self, v_seq, eval_config=None):
        v = np.asarray(v_seq, dtype=np.float64)
        per = bernoulli_log_prob(v, self._forward(v)[2])
        return float(per.sum()), per

    def initial_state(self):
        return np.zeros((self.window, self.n_visible))

    def next_state(self, state, frame):
        return np.vstack([np.asarray(frame, dtype=np.float64)[None], state[:-1]])

    def _logits(self, state):
        return self.W2 @ sigmoid(self.W1 @ state.reshape(-1) + self.b1) + self.b2

    def frame_log_prob(self, state, frames, **_):
        return bernoulli_log_prob(np.atleast_2d(frames), self._logits(state))

    def predictive(self, state, rng, n_samples=1, **_):
        p = sigmoid(self._logits(state))
        return p, sample_bernoulli(np.broadcast_to(p, (n_samples, p.size)), rng)


def mlp_train(sequences, window, n_hidden=300, config=None, history=None):
    """SGD with momentum on the mean-over-time cross-entropy."""
    config = config or TrainConfig(learning_rate=0.1, epochs=50)
    rng = make_rng(config.seed)
    seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
    model = WindowMLP.create(seqs[0].shape[1], window, n_hidden, rng)
    velocity = {}
    for epoch in range(config.epochs):
        for i in rng.permutation(len(seqs)):
            grads, _ = clip_by_global_norm(model.gradients(seqs[i]), config.gradient_clip_norm)
            params, velocity = momentum_step(model.params(), grads, velocity,
                                             config.learning_rate, config.momentum)
            model = model.with_params(**params)
        if history is not None:
            history.append({"epoch": epoch, "cost": float(np.mean([model.cost(s) for s in seqs]))})
    return model


def mlp_log_prob(model, v_seq):
    return model.sequence_log_likelihood(v_seq)[1]


# -- plain RNN -------------------------------------------------------------------


def rnn_baseline_train(sequences, n_recurrent, config=None, history=None):
    """The cross-entropy RNN used for pretraining, trained on its own."""
    config = config or TrainConfig(learning_rate=0.1, epochs=50)
    seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
    init = RNNPredictor.create(seqs[0].shape[1], n_recurrent, make_rng(config.seed + 3))
    return train_rnn(init, seqs, config, history=history)


def rnn_baseline_log_prob(model, v_seq):
    return model.sequence_log_likelihood(v_seq)[1]

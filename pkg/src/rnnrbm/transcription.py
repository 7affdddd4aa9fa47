"""Polyphonic transcription: acoustic posteriors combined with a symbolic prior.

The acoustic front end is outside this package; its output is a matrix of
independent note probabilities, one row per audio frame, with a fixed number
of audio frames per beat-quantised symbolic step.

:func:`fuse_decode` walks the audio frames in order.  For each frame it
enumerates every subset of the ``k`` most probable notes and picks the one
minimising

    cost(v) = -log P_acoustic(v) - alpha * log P_symbolic(v | history)

where the symbolic history holds the already decoded symbolic steps, each
obtained by majority vote (:func:`aggregate_history`) over its audio frames.
All frames of one symbolic step therefore share the same symbolic
conditional.  Symbolic scores may be unnormalised: the normaliser is the
same for every subset of a frame and cannot change the choice.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .data import FORMAT_VERSION, DataError, _read_json, write_json
from .metrics import frame_accuracy
from .numerics import all_binary_vectors

CLAMP = 1e-6


@dataclass
class AcousticPosteriorSequence:
    posteriors: np.ndarray           # (n_frames, n_v)
    frames_per_step: int = 1

    def __post_init__(self):
        p = np.asarray(self.posteriors, dtype=np.float64)
        if p.ndim != 2 or len(p) == 0:
            raise DataError("posteriors must be a non-empty 2-D array")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            bad = np.argwhere(~((p >= 0) & (p <= 1)))[0]
            raise DataError(f"posterior at frame {bad[0]}, note {bad[1]} is not in [0, 1]")
        if not isinstance(self.frames_per_step, (int, np.integer)) or self.frames_per_step < 1:
            raise DataError("frames_per_symbolic_step must be a positive integer")
        self.posteriors = p

    @property
    def n_visible(self):
        return self.posteriors.shape[1]

    @property
    def n_frames(self):
        return self.posteriors.shape[0]

    @property
    def n_steps(self):
        """Number of symbolic steps; a final partial step counts."""
        return -(-self.n_frames // self.frames_per_step)

    def step_of(self, frame):
        return frame // self.frames_per_step

    def step_slices(self):
        m = self.frames_per_step
        return [slice(s * m, min((s + 1) * m, self.n_frames)) for s in range(self.n_steps)]


def save_posteriors(seq, path):
    write_json({"version": FORMAT_VERSION, "n_v": seq.n_visible,
                "frames_per_symbolic_step": int(seq.frames_per_step),
                "posteriors": seq.posteriors.tolist()}, path)


def load_posteriors(path):
    doc = _read_json(path)
    where = str(path)
    if not isinstance(doc, dict) or doc.get("version") != FORMAT_VERSION:
        raise DataError(f"{where}: unsupported or missing version")
    for key in ("n_v", "frames_per_symbolic_step", "posteriors"):
        if key not in doc:
            raise DataError(f"{where}: missing '{key}'")
    rows = doc["posteriors"]
    if not isinstance(rows, list) or any(not isinstance(r, list) or len(r) != doc["n_v"]
                                         for r in rows):
        raise DataError(f"{where}: every posterior row must have n_v = {doc['n_v']} values")
    try:
        return AcousticPosteriorSequence(np.array(rows, dtype=np.float64),
                                         doc["frames_per_symbolic_step"])
    except DataError as exc:
        raise DataError(f"{where}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: non-numeric posterior value") from exc


def _posteriors(acoustic):
    if isinstance(acoustic, AcousticPosteriorSequence):
        return acoustic
    return AcousticPosteriorSequence(acoustic)


def threshold_decode(acoustic):
    """Audio-rate binary roll: a note is on iff its probability is at least 0.5."""
    return (_posteriors(acoustic).posteriors >= 0.5).astype(np.uint8)


def aggregate_history(frames):
    """Symbolic frame from the decoded audio frames of one step.

    A note is on iff it is on in at least half (``ceil(m / 2)``) of the
    ``m`` frames.
    """
    frames = np.atleast_2d(np.asarray(frames))
    if len(frames) == 0:
        raise ValueError("a symbolic step needs at least one audio frame")
    need = -(-len(frames) // 2)
    return ((frames > 0).sum(0) >= need).astype(np.uint8)


def aggregate_roll(audio_roll, frames_per_step):
    audio_roll = np.asarray(audio_roll)
    return np.array([aggregate_history(audio_roll[s:s + frames_per_step])
                     for s in range(0, len(audio_roll), frames_per_step)])


def threshold_aggregate(acoustic):
    """Threshold decoding followed by per-step majority aggregation."""
    acoustic = _posteriors(acoustic)
    return aggregate_roll(threshold_decode(acoustic), acoustic.frames_per_step)


@dataclass(frozen=True)
class FusionConfig:
    alpha: float = 1.0
    k: int = 7
    keep_costs: bool = False   # store every subset cost in the diagnostics

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ValueError("alpha must be non-negative")
        if self.k < 0:
            raise ValueError("k must be non-negative")


@dataclass
class FusionResult:
    roll: np.ndarray          # (n_steps, n_v) symbolic-rate decision
    audio_roll: np.ndarray    # (n_frames, n_v) per audio frame
    diagnostics: list = field(default_factory=list)


def acoustic_costs(p, subsets):
    """``-log P_acoustic(v)`` for each row of ``subsets`` (full frames)."""
    p = np.clip(p, CLAMP, 1.0 - CLAMP)
    log_on, log_off = np.log(p), np.log1p(-p)
    return -(log_off.sum() + subsets @ (log_on - log_off))


def _candidate_frames(p, k):
    cands = np.sort(np.argsort(-p, kind="stable")[:k])
    subsets = np.zeros((2 ** len(cands), len(p)))
    subsets[:, cands] = all_binary_vectors(len(cands))
    return cands, subsets


def _choose(costs, subsets):
    best = costs.min()
    tied = np.flatnonzero(costs <= best + 1e-12 * max(1.0, abs(best)))
    return tied[np.argmax(subsets[tied].sum(1))]


def fuse_decode(acoustic, model, config=None):
    """Greedy chronological decoding with a symbolic prior.

    Parameters
    ----------
    acoustic : AcousticPosteriorSequence or array_like
        Note posteriors per audio frame.
    model
        Any sequence predictor (``initial_state``, ``next_state``,
        ``frame_log_prob``) over the same number of notes.
    config : FusionConfig

    Returns
    -------
    FusionResult
        The symbolic-rate roll, the audio-rate decisions and one diagnostics
        record per audio frame.
    """
    acoustic = _posteriors(acoustic)
    config = config or FusionConfig()
    n_v = acoustic.n_visible
    if config.k > n_v:
        raise ValueError(f"k = {config.k} exceeds the {n_v} notes")
    if getattr(model, "n_visible", n_v) != n_v:
        raise ValueError(f"symbolic model has {model.n_visible} notes, posteriors have {n_v}")
    state = model.initial_state()
    audio = np.zeros((acoustic.n_frames, n_v), dtype=np.uint8)
    steps, diags = [], []
    for s, sl in enumerate(acoustic.step_slices()):
        for i in range(sl.start, sl.stop):
            p = acoustic.posteriors[i]
            cands, subsets = _candidate_frames(p, config.k)
            a_cost = acoustic_costs(p, subsets)
            if config.alpha > 0:
                s_cost = -config.alpha * np.asarray(
                    model.frame_log_prob(state, subsets, normalized=False), dtype=np.float64)
            else:
                s_cost = np.zeros(len(subsets))
            costs = a_cost + s_cost
            pick = _choose(costs, subsets)
            audio[i] = subsets[pick]
            rec = {"frame": i, "step": s, "candidates": cands.tolist(),
                   "chosen": np.flatnonzero(subsets[pick]).tolist(),
                   "acoustic_cost": float(a_cost[pick]), "symbolic_cost": float(s_cost[pick]),
                   "cost": float(costs[pick])}
            if config.keep_costs:
                rec["subset_costs"] = costs.tolist()
            diags.append(rec)
        step = aggregate_history(audio[sl])
        steps.append(step)
        state = model.next_state(state, step.astype(np.float64))
    return FusionResult(np.array(steps), audio, diags)


def note_hmm_smooth(acoustic, self_prob=0.9):
    """Per-note two-state Viterbi smoothing of the posteriors (audio rate).

    Each note is an on/off Markov chain that keeps its state with
    probability ``self_prob``, starts uniformly, and emits ``p`` when on and
    ``1 - p`` when off.  Ties prefer "on".
    """
    if not 0 < self_prob <= 1:
        raise ValueError("self_prob must be in (0, 1]")
    p = np.clip(_posteriors(acoustic).posteriors, CLAMP, 1.0 - CLAMP)
    T, n_v = p.shape
    emit = np.stack([np.log1p(-p), np.log(p)], axis=-1)           # (T, n_v, 2) off/on
    with np.errstate(divide="ignore"):
        stay, move = math.log(self_prob), (math.log1p(-self_prob) if self_prob < 1 else -math.inf)
    trans = np.array([[stay, move], [move, stay]])                # [from, to]
    score = emit[0] + math.log(0.5)
    back = np.zeros((T, n_v, 2), dtype=np.int8)
    for t in range(1, T):
        cand = score[:, :, None] + trans                          # (n_v, from, to)
        back[t] = np.where(cand[:, 1, :] >= cand[:, 0, :], 1, 0)
        score = np.maximum(cand[:, 0, :], cand[:, 1, :]) + emit[t]
    out = np.zeros((T, n_v), dtype=np.uint8)
    out[-1] = score[:, 1] >= score[:, 0]
    for t in range(T - 1, 0, -1):
        out[t - 1] = back[t, np.arange(n_v), out[t]]
    return out


def roll_accuracy(pred, truth):
    """Mean frame accuracy over frames that are not empty in both rolls."""
    if len(pred) != len(truth):
        raise ValueError("rolls differ in length")
    accs = [a for a in (frame_accuracy(p, t)[1] for p, t in zip(pred, truth)) if a is not None]
    return float(np.mean(accs)) if accs else float("nan")


def tune_alpha(acoustics, truths, model, grid, k=7):
    """Grid search for the alpha with the best symbolic-rate frame accuracy.

    Returns ``(alpha, scores)``; ties go to the smallest alpha.
    """
    grid = sorted(float(a) for a in grid)
    if not grid:
        raise ValueError("empty alpha grid")
    scores = {}
    for alpha in grid:
        cfg = FusionConfig(alpha, k)
        accs = [roll_accuracy(fuse_decode(a, model, cfg).roll, np.asarray(t))
                for a, t in zip(acoustics, truths)]
        scores[alpha] = float(np.nanmean(accs))
    best = max(grid, key=lambda a: (scores[a], -a))
    return best, scores

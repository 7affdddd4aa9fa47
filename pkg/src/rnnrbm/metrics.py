"""Evaluation metrics for sequence models over binary frames.

Every function accepting a ``model`` uses only the step-wise predictor
interface (``initial_state``, ``next_state``, ``predictive``,
``sequence_log_likelihood``), so all models in the package can be scored
the same way.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .numerics import make_rng

SAMPLE = "sample"
THRESHOLD = "threshold"


@dataclass(frozen=True)
class FrameCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other):
        return FrameCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)


def _pair(pred, truth):
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs truth {truth.shape}")
    return pred, truth


def frame_accuracy(pred, truth):
    """Counts and ``TP / (TP + FP + FN)`` for one frame.

    The accuracy is ``None`` when both frames are empty; such frames are
    left out of every average.
    """
    pred, truth = _pair(pred, truth)
    p, t = pred > 0, truth > 0
    counts = FrameCounts(int(np.sum(p & t)), int(np.sum(p & ~t)), int(np.sum(~p & t)))
    denom = counts.tp + counts.fp + counts.fn
    return counts, (counts.tp / denom if denom else None)


def squared_prediction_error(pred_mean, truth):
    """``sum_j (pred_j - truth_j)**2`` for a frame, or per row of a 2-D array."""
    pred_mean, truth = _pair(np.asarray(pred_mean, dtype=np.float64),
                             np.asarray(truth, dtype=np.float64))
    return ((pred_mean - truth) ** 2).sum(-1)


@dataclass
class AccuracyResult:
    percent: float
    counts: FrameCounts
    n_scored: int      # (frame, sample) pairs that entered the average
    n_excluded: int    # pairs with empty prediction and empty truth
    mode: str


def expected_accuracy(model, sequences, n_samples=10, mode=SAMPLE, rng=None, **predict_kwargs):
    """Frame-level accuracy of next-frame predictions, as a percentage.

    In ``"sample"`` mode ``n_samples`` frames are drawn from the model's
    conditional at every step; in ``"threshold"`` mode the expected frame is
    thresholded (``> 0.5``) once.  Accuracies are averaged over every scored
    (frame, sample) pair.
    """
    if mode not in (SAMPLE, THRESHOLD):
        raise ValueError(f"unknown accuracy mode {mode!r}")
    rng = make_rng(0) if rng is None else rng
    total, scored, excluded = 0.0, 0, 0
    counts = FrameCounts()
    for seq in sequences:
        seq = np.asarray(seq, dtype=np.float64)
        state = model.initial_state()
        for frame in seq:
            mean, samples = model.predictive(state, rng, n_samples if mode == SAMPLE else 1,
                                             **predict_kwargs)
            preds = samples if mode == SAMPLE else [np.asarray(mean) > 0.5]
            for pred in preds:
                c, acc = frame_accuracy(pred, frame)
                counts = counts + c
                if acc is None:
                    excluded += 1
                else:
                    total += acc
                    scored += 1
            state = model.next_state(state, frame)
    percent = 100.0 * total / scored if scored else float("nan")
    return AccuracyResult(percent, counts, scored, excluded, mode)


def mean_squared_prediction_error(model, sequences, rng=None, **predict_kwargs):
    """Mean over frames of the squared error of the expected next frame."""
    rng = make_rng(0) if rng is None else rng
    errors = []
    for seq in sequences:
        seq = np.asarray(seq, dtype=np.float64)
        state = model.initial_state()
        for frame in seq:
            mean, _ = model.predictive(state, rng, 1, **predict_kwargs)
            errors.append(float(squared_prediction_error(mean, frame)))
            state = model.next_state(state, frame)
    return float(np.mean(errors))


def mean_log_likelihood(model, sequences, eval_config=None):
    """Total log-likelihood over all sequences divided by the total frame count."""
    total, frames = 0.0, 0
    for seq in sequences:
        seq = np.asarray(seq, dtype=np.float64)
        ll, _ = model.sequence_log_likelihood(seq, eval_config=eval_config)
        total += ll
        frames += len(seq)
    if frames == 0:
        raise ValueError("no frames to score")
    return total / frames


def report_record(dataset, model_name, log_likelihood=None, accuracy=None, sq_error=None,
                  **extra):
    """One JSON-serialisable result row (dataset x model)."""
    rec = {"dataset": dataset, "model": model_name, "ll_per_frame": log_likelihood,
           "sq_error": sq_error}
    if accuracy is not None:
        rec.update(acc_percent=accuracy.percent, acc_mode=accuracy.mode,
                   acc_scored=accuracy.n_scored, acc_excluded=accuracy.n_excluded,
                   counts=asdict(accuracy.counts))
    rec.update(extra)
    return rec


def write_report(path, records):
    """Write records as JSON lines with sorted keys."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_report(path):
    """Records written by :func:`write_report`."""
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]

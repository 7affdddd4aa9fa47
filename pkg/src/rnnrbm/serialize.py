"""Model files: one JSON envelope for every model in the package.

::

    {"version": 1, "kind": "sequence", "settings": {...},
     "params": {"W": {"shape": [3, 4], "data": [...]}, ...},
     "config": {...}, "provenance": {...}}

Arrays are stored row-major with Python's shortest round-trip float repr,
so loading restores parameters bit for bit and saving the same model twice
produces identical bytes.
"""

from collections import Counter

import numpy as np

from . import baselines as bl
from .data import FORMAT_VERSION, DataError, _read_json, write_json
from .nade import NADE
from .rbm import RBM
from .sequence import RNNPredictor, SequenceModel


def _enc(a):
    a = np.asarray(a, dtype=np.float64)
    return {"shape": list(a.shape), "data": a.reshape(-1).tolist()}


def _dec(doc, name, where):
    try:
        data = np.asarray(doc["data"], dtype=np.float64)
        return data.reshape(doc["shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{where}: malformed array '{name}'") from exc


def _arrays(obj, names):
    return {n: _enc(getattr(obj, n)) for n in names}


def model_to_doc(model, config=None, provenance=None):
    """The JSON envelope for ``model``."""
    settings = {}
    if isinstance(model, SequenceModel):
        kind, params = "sequence", _arrays(model, model.param_names)
        settings = {"estimator": model.kind, "visible_kind": model.visible_kind}
    elif isinstance(model, RNNPredictor):
        kind, params = "rnn", _arrays(model, model.param_names)
    elif isinstance(model, bl.WindowMLP):
        kind, params = "mlp", _arrays(model, model.param_names)
        settings = {"window": model.window}
    elif isinstance(model, bl.UniformModel):
        kind, params = "uniform", {}
        settings = {"n_visible": model.n_visible}
    elif isinstance(model, bl.FrameModel) and isinstance(model.estimator, NADE):
        kind, params = "frame-nade", _arrays(model.estimator, ("W", "V", "b_v", "b_h"))
    elif isinstance(model, bl.FrameModel):
        est = model.estimator
        kind, params = "frame-rbm", _arrays(est, ("W", "b_v", "b_h"))
        settings = {"visible_kind": est.visible_kind, "log_z": float(model.log_z),
                    "n_gibbs": model.n_gibbs}
    elif isinstance(model, bl.NGramModel):
        kind, params = "ngram", {}
        settings = _ngram_settings(model)
    elif isinstance(model, bl.NoteNGramModel):
        kind = "note-ngram"
        params = {f"counts{L}": _enc(c) for L, c in enumerate(model.counts)}
        settings = {"order": model.order, "n_visible": model.n_visible, "p": model.p,
                    "shared": model.shared}
    elif isinstance(model, bl.PreviousGaussianModel):
        kind, params = "previous-gaussian", {"covariance": _enc(model.covariance)}
        settings = {"ridge": model.ridge}
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    doc = {"version": FORMAT_VERSION, "kind": kind, "settings": settings, "params": params}
    if config is not None:
        doc["config"] = config
    if provenance is not None:
        doc["provenance"] = provenance
    return doc


def _ngram_settings(model):
    symbols = sorted(model.vocab, key=model.vocab.get)
    vocab = [np.frombuffer(s, dtype=np.uint8).astype(int).tolist() for s in symbols]
    tables = []
    for table in model.counts:
        rows = []
        for ctx, counter in table.items():
            ctx_ids = [model.vocab[s] for s in ctx]
            rows.append([ctx_ids, sorted([model.vocab[s], n] for s, n in counter.items())])
        tables.append(sorted(rows))
    return {"order": model.order, "n_visible": model.n_visible, "smoothing": model.smoothing,
            "p": model.p, "sigma": model.sigma, "oov": model.oov, "vocab": vocab,
            "counts": tables}


def _ngram_from(s):
    symbols = [np.asarray(f, dtype=np.uint8).tobytes() for f in s["vocab"]]
    vocab = {sym: i for i, sym in enumerate(symbols)}
    counts = []
    for rows in s["counts"]:
        table = {}
        for ctx_ids, pairs in rows:
            table[tuple(symbols[i] for i in ctx_ids)] = Counter(
                {symbols[i]: n for i, n in pairs})
        counts.append(table)
    return bl.NGramModel(s["order"], s["n_visible"], s["smoothing"], s["p"], s["sigma"],
                         s["oov"], vocab, counts)


def model_from_doc(doc, where="model file"):
    if not isinstance(doc, dict) or doc.get("version") != FORMAT_VERSION:
        raise DataError(f"{where}: not a version-{FORMAT_VERSION} model file")
    kind = doc.get("kind")
    s = doc.get("settings", {})
    p = {n: _dec(a, n, where) for n, a in doc.get("params", {}).items()}
    try:
        if kind == "sequence":
            return SequenceModel(kind=s["estimator"], visible_kind=s["visible_kind"], **p)
        if kind == "rnn":
            return RNNPredictor(**p)
        if kind == "mlp":
            return bl.WindowMLP(window=s["window"], **p)
        if kind == "uniform":
            return bl.UniformModel(s["n_visible"])
        if kind == "frame-nade":
            return bl.FrameModel(NADE(**p))
        if kind == "frame-rbm":
            return bl.FrameModel(RBM(visible_kind=s["visible_kind"], **p), s["log_z"],
                                 s["n_gibbs"])
        if kind == "ngram":
            return _ngram_from(s)
        if kind == "note-ngram":
            counts = [p[f"counts{L}"] for L in range(s["order"])]
            return bl.NoteNGramModel(s["order"], s["n_visible"], counts, s["p"], s["shared"])
        if kind == "previous-gaussian":
            return bl.PreviousGaussianModel(p["covariance"], s["ridge"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{where}: inconsistent {kind} model ({exc})") from exc
    raise DataError(f"{where}: unknown model kind {kind!r}")


def save_model(model, path, config=None, provenance=None):
    write_json(model_to_doc(model, config, provenance), path)


def load_model(path):
    doc = _read_json(path)
    return model_from_doc(doc, str(path)), doc

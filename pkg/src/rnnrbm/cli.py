"""Command-line entry point.

Every command reads an experiment configuration (JSON), applies flag
overrides to individual fields, and embeds the resolved configuration in
each file it writes.  Any output file can be handed back via ``--config`` to
replay the command; the same configuration and seed reproduce the same
bytes.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""

import argparse
import copy
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import data as data_mod
from . import metrics
from . import nade as nade_mod
from . import rbm as rbm_mod
from . import sequence as seq_mod
from . import transcription as tr
from .numerics import NumericalError, make_rng
from .serialize import load_model, save_model

log = logging.getLogger("rnnrbm")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4

SEQUENCE_KINDS = {"rnn-rbm": "rbm", "rnn-nade": "nade", "rtrbm": "rtrbm"}
MODEL_KINDS = tuple(SEQUENCE_KINDS) + (
    "rnn", "mlp", "ngram", "note-ngram", "previous-gaussian", "uniform", "frame-nade",
    "frame-rbm")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


DEFAULTS = {
    "seed": 0,
    "model": {
        "kind": "rnn-nade", "n_hidden": 20, "n_recurrent": 20, "init_std": 0.1,
        "visible_kind": "binary", "window": 1, "mlp_hidden": 300, "order": 2,
        "smoothing": "add", "p": 0.01, "sigma": 1.0, "oov": True, "shared": False,
        "ridge": 1e-3,
    },
    "train": {f.name: f.default for f in fields(seq_mod.TrainConfig) if f.name != "seed"},
    "inputs": {
        "train": None, "data": None, "split": "test", "real": False, "model": None,
        "prime": None, "posteriors": None, "tune_posteriors": [], "tune_truth": [],
    },
    "eval": {
        "partition": "auto", "ais_runs": 100, "ais_betas": 1000, "acc_samples": 10,
        "acc_mode": "sample", "n_gibbs": 50,
    },
    "sample": {"T": 100, "gibbs_steps": 25},
    "transcribe": {"method": "fuse", "alpha": 1.0, "k": 7, "alpha_grid": [],
                   "hmm_self_prob": 0.9},
    "balls": dict({f.name: f.default for f in fields(data_mod.BallsConfig) if f.name != "seed"},
                  count=20),
    "cycle": {"n_v": 8, "period": 4, "T": 40, "count": 50, "n_valid": 10, "n_test": 10},
}


def _merge(base, update, where="config"):
    out = copy.deepcopy(base)
    if not isinstance(update, dict):
        raise ConfigError(f"{where} must be a JSON object")
    for key, value in update.items():
        if key not in base:
            raise ConfigError(f"unknown key {where}.{key}; allowed: {', '.join(sorted(base))}")
        if isinstance(base[key], dict):
            out[key] = _merge(base[key], value, f"{where}.{key}")
        else:
            out[key] = value
    return out


def load_config(path):
    """Config document from a config file or from any artifact that embeds one."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if isinstance(doc, dict) and "version" in doc:
        doc = _embedded_config(doc, path)
    return _merge(DEFAULTS, doc)


def _embedded_config(doc, path):
    for holder in (doc, doc.get("provenance") or {}, doc.get("metadata") or {}):
        if isinstance(holder, dict) and isinstance(holder.get("config"), dict):
            return {k: v for k, v in holder["config"].items() if k != "command"}
    raise ConfigError(f"{path}: file has no embedded config")


def validate(cfg):
    m = cfg["model"]
    if m["kind"] not in MODEL_KINDS:
        raise ConfigError(f"model.kind must be one of {', '.join(MODEL_KINDS)}")
    for key in ("n_hidden", "n_recurrent", "window", "mlp_hidden", "order"):
        if not isinstance(m[key], int) or m[key] < 1:
            raise ConfigError(f"model.{key} must be a positive integer")
    if m["visible_kind"] not in (rbm_mod.BINARY, rbm_mod.GAUSSIAN):
        raise ConfigError("model.visible_kind must be 'binary' or 'gaussian'")
    if m["smoothing"] not in ("add", "gaussian"):
        raise ConfigError("model.smoothing must be 'add' or 'gaussian'")
    if cfg["eval"]["acc_mode"] not in (metrics.SAMPLE, metrics.THRESHOLD):
        raise ConfigError("eval.acc_mode must be 'sample' or 'threshold'")
    if cfg["transcribe"]["method"] not in ("fuse", "threshold", "hmm"):
        raise ConfigError("transcribe.method must be 'fuse', 'threshold' or 'hmm'")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    try:
        train_config(cfg)
        data_mod.BallsConfig(**_balls_kwargs(cfg))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def train_config(cfg):
    return seq_mod.TrainConfig(seed=cfg["seed"], **cfg["train"])


def _balls_kwargs(cfg):
    kw = {k: v for k, v in cfg["balls"].items() if k != "count"}
    return dict(kw, seed=cfg["seed"])


# -- data --------------------------------------------------------------------


def _need(cfg, key):
    path = cfg["inputs"][key]
    if not path:
        raise ConfigError(f"inputs.{key} is required for this command")
    return path


def load_sequences(path, split, real=False):
    """Float arrays from a corpus (given split), a roll file, or a directory."""
    path = Path(path)
    if real:
        files = sorted(path.glob("*.json")) if path.is_dir() else [path]
        if not files:
            raise data_mod.DataError(f"{path}: no sequence files")
        return [data_mod.load_real_sequence(f) for f in files]
    rolls = data_mod.load_rolls(path)
    if isinstance(rolls, data_mod.Corpus):
        rolls = rolls.split(split)
    if not rolls:
        raise data_mod.DataError(f"{path}: no sequences in split '{split}'")
    return [r.as_float() for r in rolls]


# -- training ----------------------------------------------------------------


def build_and_train(cfg, sequences):
    """Train the configured model; returns ``(model, phases)``."""
    m = cfg["model"]
    tc = train_config(cfg)
    kind = m["kind"]
    n_v = sequences[0].shape[1]
    phases = []
    if kind in SEQUENCE_KINDS:
        model = seq_mod.SequenceModel.create(
            SEQUENCE_KINDS[kind], n_v, m["n_hidden"],
            m["n_hidden"] if kind == "rtrbm" else m["n_recurrent"],
            make_rng(cfg["seed"]), m["init_std"], m["visible_kind"])
        if tc.rbm_init:
            hist = []
            model = seq_mod.pretrain_rbm_init(model, np.concatenate(sequences), tc, hist)
            phases.append({"phase": "pretrain-rbm", "epochs": hist})
        if tc.rnn_init:
            hist = []
            model = seq_mod.pretrain_rnn_init(model, sequences, tc, hist)
            phases.append({"phase": "pretrain-rnn", "epochs": hist})
        hist = []
        model = seq_mod.fit(model, sequences, tc, history=hist)
        phases.append({"phase": "train", "epochs": hist})
        return model, phases
    hist = []
    if kind == "rnn":
        model = bl.rnn_baseline_train(sequences, m["n_recurrent"], tc, history=hist)
    elif kind == "mlp":
        model = bl.mlp_train(sequences, m["window"], m["mlp_hidden"], tc, history=hist)
    elif kind == "ngram":
        model = bl.ngram_train(sequences, m["order"], m["smoothing"], m["p"], m["sigma"], m["oov"])
    elif kind == "note-ngram":
        model = bl.note_ngram_train(sequences, m["order"], m["p"], m["shared"])
    elif kind == "previous-gaussian":
        model = bl.previous_gaussian_fit(sequences, m["ridge"])
    elif kind == "uniform":
        model = bl.UniformModel(n_v)
    elif kind == "frame-nade":
        model = bl.FrameModel(nade_mod.train_nade(
            np.concatenate(sequences), m["n_hidden"], tc.learning_rate, tc.epochs,
            momentum=tc.momentum, seed=cfg["seed"], init_std=m["init_std"]))
    else:
        rbm_cfg = rbm_mod.RBMTrainConfig(
            n_hidden=m["n_hidden"], k=tc.k, learning_rate=tc.learning_rate, epochs=tc.epochs,
            seed=cfg["seed"], visible_kind=m["visible_kind"])
        model = bl.FrameModel(rbm_mod.train_rbm(np.concatenate(sequences), rbm_cfg, hist))
    phases.append({"phase": "train", "epochs": hist})
    return model, phases


def _stored(cfg, command):
    return dict(cfg, command=command)


def cmd_train(cfg, out):
    seqs = load_sequences(_need(cfg, "train"), "train", cfg["inputs"]["real"])
    model, phases = build_and_train(cfg, seqs)
    save_model(model, out, config=_stored(cfg, "train"))
    data_mod.write_json({"version": data_mod.FORMAT_VERSION, "kind": "training-log",
                         "config": _stored(cfg, "train"), "phases": phases},
                        _sibling(out, ".log.json"))


def _sibling(out, suffix):
    out = Path(out)
    return out.with_name(out.stem + suffix)


def _eval_config(cfg):
    e = cfg["eval"]
    return seq_mod.EvalConfig(e["partition"], e["ais_runs"], e["ais_betas"], cfg["seed"])


def _predict_kwargs(model, cfg):
    if isinstance(model, seq_mod.SequenceModel):
        return {"n_gibbs": cfg["eval"]["n_gibbs"]}
    return {}


def cmd_eval(cfg, out):
    model, _ = load_model(_need(cfg, "model"))
    real = cfg["inputs"]["real"]
    seqs = load_sequences(_need(cfg, "data"), cfg["inputs"]["split"], real)
    if seqs[0].shape[1] != model.n_visible:
        raise data_mod.DataError(
            f"model expects {model.n_visible} notes, data has {seqs[0].shape[1]}")
    kw = _predict_kwargs(model, cfg)
    try:
        ll = metrics.mean_log_likelihood(model, seqs, _eval_config(cfg))
    except NotImplementedError as exc:
        log.warning("log-likelihood unavailable: %s", exc)
        ll = None
    acc = None
    if not real:
        acc = metrics.expected_accuracy(model, seqs, cfg["eval"]["acc_samples"],
                                        cfg["eval"]["acc_mode"], make_rng(cfg["seed"]), **kw)
    sq = metrics.mean_squared_prediction_error(model, seqs, make_rng(cfg["seed"] + 1), **kw)
    rec = metrics.report_record(str(cfg["inputs"]["data"]), cfg["inputs"]["model"], ll, acc, sq,
                                version=data_mod.FORMAT_VERSION, split=cfg["inputs"]["split"],
                                n_sequences=len(seqs),
                                n_frames=int(sum(len(s) for s in seqs)),
                                config=_stored(cfg, "eval"))
    metrics.write_report(out, [rec])
    return rec


def cmd_sample(cfg, out):
    model, _ = load_model(_need(cfg, "model"))
    rng = make_rng(cfg["seed"])
    T = cfg["sample"]["T"]
    prime = None
    if cfg["inputs"]["prime"]:
        prime = load_sequences(cfg["inputs"]["prime"], "train", cfg["inputs"]["real"])[0]
    if isinstance(model, seq_mod.SequenceModel):
        frames = seq_mod.generate(model, T, rng, prime, cfg["sample"]["gibbs_steps"])
    else:
        frames = _generate_stepwise(model, T, rng, prime)
    prov = {"config": _stored(cfg, "sample")}
    if cfg["inputs"]["real"] or not np.isin(frames, (0, 1)).all():
        data_mod.save_real_sequence(frames, out, prov)
    else:
        data_mod.save_piano_roll(data_mod.PianoRoll(frames.astype(np.uint8), provenance=prov), out)


def _generate_stepwise(model, T, rng, prime):
    state = model.initial_state()
    out = np.zeros((T, model.n_visible))
    for t in range(T):
        if prime is not None and t < len(prime):
            out[t] = prime[t]
        else:
            out[t] = model.predictive(state, rng, 1)[1][0]
        state = model.next_state(state, out[t])
    return out


def cmd_predict(cfg, out):
    """Expected next frame for every position of every sequence."""
    model, _ = load_model(_need(cfg, "model"))
    seqs = load_sequences(_need(cfg, "data"), cfg["inputs"]["split"], cfg["inputs"]["real"])
    rng = make_rng(cfg["seed"])
    kw = _predict_kwargs(model, cfg)
    preds = []
    for seq in seqs:
        state, rows = model.initial_state(), []
        for frame in seq:
            rows.append(np.asarray(model.predictive(state, rng, 1, **kw)[0]).tolist())
            state = model.next_state(state, frame)
        preds.append(rows)
    data_mod.write_json({"version": data_mod.FORMAT_VERSION, "kind": "predictions",
                         "config": _stored(cfg, "predict"), "predictions": preds}, out)


def cmd_transcribe(cfg, out):
    t = cfg["transcribe"]
    acoustic = tr.load_posteriors(_need(cfg, "posteriors"))
    diag = {"version": data_mod.FORMAT_VERSION, "kind": "transcription-diagnostics",
            "config": _stored(cfg, "transcribe"), "method": t["method"]}
    if t["method"] == "threshold":
        roll = tr.threshold_aggregate(acoustic)
    elif t["method"] == "hmm":
        roll = tr.aggregate_roll(tr.note_hmm_smooth(acoustic, t["hmm_self_prob"]),
                                 acoustic.frames_per_step)
    else:
        model, _ = load_model(_need(cfg, "model"))
        alpha = t["alpha"]
        if t["alpha_grid"]:
            tune_p = [tr.load_posteriors(p) for p in cfg["inputs"]["tune_posteriors"]]
            tune_t = [data_mod.load_piano_roll(p).frames for p in cfg["inputs"]["tune_truth"]]
            if not tune_p or len(tune_p) != len(tune_t):
                raise ConfigError("alpha tuning needs matching inputs.tune_posteriors "
                                  "and inputs.tune_truth")
            alpha, scores = tr.tune_alpha(tune_p, tune_t, model, t["alpha_grid"], t["k"])
            diag["alpha_grid"] = [[a, s] for a, s in scores.items()]
        result = tr.fuse_decode(acoustic, model, tr.FusionConfig(alpha, t["k"]))
        roll = result.roll
        diag.update(alpha=alpha, k=t["k"], frames=result.diagnostics)
    data_mod.save_piano_roll(data_mod.PianoRoll(
        roll, provenance={"config": _stored(cfg, "transcribe")}), out)
    data_mod.write_json(diag, _sibling(out, ".diag.json"))


def cmd_gen_balls(cfg, out):
    bcfg = data_mod.BallsConfig(**_balls_kwargs(cfg))
    videos = data_mod.balls_dataset(bcfg, cfg["balls"]["count"])
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for i, frames in enumerate(videos):
        data_mod.save_real_sequence(frames, out / f"balls_{i:04d}.json",
                                    {"config": _stored(cfg, "gen-balls"), "index": i})


def cmd_gen_cycle(cfg, out):
    c = cfg["cycle"]
    corpus = data_mod.make_cycle_dataset(c["n_v"], c["period"], c["T"], c["count"],
                                         cfg["seed"], c["n_valid"], c["n_test"])
    corpus.metadata["config"] = _stored(cfg, "gen-cycle")
    data_mod.save_corpus(corpus, out)


def cmd_transpose(cfg, out):
    rolls = data_mod.load_rolls(_need(cfg, "data"))
    if isinstance(rolls, data_mod.Corpus):
        out_corpus = data_mod.Corpus([], [], [], dict(rolls.metadata))
        for split in ("train", "valid", "test"):
            for r in rolls.split(split):
                out_corpus.split(split).append(_transposed(r, cfg))
        out_corpus.metadata["config"] = _stored(cfg, "transpose")
        data_mod.save_corpus(out_corpus, out)
    else:
        corpus = data_mod.Corpus([_transposed(r, cfg) for r in rolls],
                                 metadata={"config": _stored(cfg, "transpose")})
        data_mod.save_corpus(corpus, out)


def _transposed(roll, cfg):
    new, shift = data_mod.transpose_to_common_key(roll)
    new.provenance = dict(roll.provenance or {}, transpose_shift=shift)
    return new


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "sample": cmd_sample, "predict": cmd_predict,
    "transcribe": cmd_transcribe, "gen-balls": cmd_gen_balls, "gen-cycle": cmd_gen_cycle,
    "transpose": cmd_transpose,
}

# flag -> (section, key, type)
OVERRIDES = {
    "kind": ("model", "kind", str), "n_hidden": ("model", "n_hidden", int),
    "n_recurrent": ("model", "n_recurrent", int), "epochs": ("train", "epochs", int),
    "learning_rate": ("train", "learning_rate", float), "train_data": ("inputs", "train", str),
    "data": ("inputs", "data", str), "split": ("inputs", "split", str),
    "model": ("inputs", "model", str), "posteriors": ("inputs", "posteriors", str),
    "prime": ("inputs", "prime", str), "T": ("sample", "T", int),
    "alpha": ("transcribe", "alpha", float), "k": ("transcribe", "k", int),
    "method": ("transcribe", "method", str),
}


def build_parser():
    parser = argparse.ArgumentParser(prog="rnnrbm", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config, or any output file to replay")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", required=True)
        p.add_argument("--real", action="store_true", default=None,
                       help="real-valued sequences instead of piano rolls")
        for flag, (_, _, typ) in OVERRIDES.items():
            p.add_argument("--" + flag.replace("_", "-"), dest=flag, type=typ)
    return parser


def resolve_config(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.real is not None:
        cfg["inputs"]["real"] = True
    for flag, (section, key, _) in OVERRIDES.items():
        value = getattr(args, flag)
        if value is not None:
            cfg[section][key] = value
    return validate(cfg)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        result = COMMANDS[args.command](cfg, args.out)
        if args.command == "eval":
            print(json.dumps({k: v for k, v in result.items() if k != "config"}, sort_keys=True))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except data_mod.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return 0


if __name__ == "__main__":
    sys.exit(main())

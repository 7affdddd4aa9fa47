"""Piano-roll data, file formats and synthetic datasets.

Piano-roll files are JSON documents::

    {"version": 1, "n_v": 88, "resolution": 4, "frames": [[0, 1, ...], ...]}

``frames_sparse`` (a list of active pitch indices per frame) may replace
``frames``.  Real-valued sequences such as the bouncing-balls videos use the
same envelope with ``"kind": "real"``.  Index 0 is A0 (MIDI 21) and index 87
is C8.
"""

import json
import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import make_rng

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
N_KEYS = 88
LOWEST_MIDI = 21

# Krumhansl-Kessler key profiles, tonic first
MAJOR_PROFILE = np.array([6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88])
MINOR_PROFILE = np.array([6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17])


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class PianoRoll:
    frames: np.ndarray
    resolution: int = 4
    name: str = None
    provenance: dict = field(default=None, repr=False)

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 2 or frames.shape[0] < 1:
            raise DataError("a piano roll needs at least one frame")
        if not np.isin(frames, (0, 1)).all():
            raise DataError("piano-roll entries must be 0 or 1")
        self.frames = frames.astype(np.uint8)

    @property
    def n_visible(self):
        return self.frames.shape[1]

    def __len__(self):
        return self.frames.shape[0]

    def as_float(self):
        return self.frames.astype(np.float64)


@dataclass
class Corpus:
    train: list
    valid: list = field(default_factory=list)
    test: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def split(self, name):
        if name not in ("train", "valid", "test"):
            raise KeyError(name)
        return getattr(self, name)


# -- file formats ----------------------------------------------------------


def _frames_from_doc(doc, n_v, where):
    if "frames" in doc:
        rows = doc["frames"]
        if not isinstance(rows, list):
            raise DataError(f"{where}: 'frames' must be a list")
        frames = np.zeros((len(rows), n_v), dtype=np.uint8)
        for t, row in enumerate(rows):
            if not isinstance(row, list) or len(row) != n_v:
                raise DataError(f"{where}: frames[{t}] must be a list of {n_v} values")
            for j, x in enumerate(row):
                if x not in (0, 1) or isinstance(x, bool):
                    raise DataError(f"{where}: frames[{t}][{j}] = {x!r} is not 0 or 1")
            frames[t] = row
    elif "frames_sparse" in doc:
        rows = doc["frames_sparse"]
        frames = np.zeros((len(rows), n_v), dtype=np.uint8)
        for t, row in enumerate(rows):
            for j in row:
                if not isinstance(j, int) or not 0 <= j < n_v:
                    raise DataError(f"{where}: frames_sparse[{t}] has bad pitch index {j!r}")
                frames[t, j] = 1
    else:
        raise DataError(f"{where}: missing 'frames' or 'frames_sparse'")
    if len(frames) == 0:
        raise DataError(f"{where}: empty frame list")
    return frames


def _check_header(doc, where):
    if not isinstance(doc, dict):
        raise DataError(f"{where}: expected a JSON object")
    if doc.get("version") != FORMAT_VERSION:
        raise DataError(f"{where}: unsupported version {doc.get('version')!r}")
    n_v = doc.get("n_v")
    if not isinstance(n_v, int) or n_v < 1:
        raise DataError(f"{where}: 'n_v' must be a positive integer")
    return n_v


def roll_to_doc(roll):
    doc = {
        "version": FORMAT_VERSION,
        "n_v": int(roll.n_visible),
        "resolution": int(roll.resolution),
        "frames": roll.frames.astype(int).tolist(),
    }
    if roll.name is not None:
        doc["name"] = roll.name
    if roll.provenance is not None:
        doc["provenance"] = roll.provenance
    return doc


def roll_from_doc(doc, where="piano roll"):
    n_v = _check_header(doc, where)
    frames = _frames_from_doc(doc, n_v, where)
    resolution = doc.get("resolution", 4)
    if not isinstance(resolution, int) or resolution < 1:
        raise DataError(f"{where}: 'resolution' must be a positive integer")
    return PianoRoll(frames, resolution, doc.get("name"), doc.get("provenance"))


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror}") from exc


def write_json(doc, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def save_piano_roll(roll, path):
    write_json(roll_to_doc(roll), path)


def load_piano_roll(path):
    return roll_from_doc(_read_json(path), str(path))


def save_real_sequence(frames, path, provenance=None):
    frames = np.asarray(frames, dtype=np.float64)
    doc = {"version": FORMAT_VERSION, "kind": "real", "n_v": int(frames.shape[1]),
           "frames": frames.tolist()}
    if provenance is not None:
        doc["provenance"] = provenance
    write_json(doc, path)


def load_real_sequence(path):
    doc = _read_json(path)
    n_v = _check_header(doc, str(path))
    frames = np.asarray(doc.get("frames"), dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != n_v or len(frames) == 0:
        raise DataError(f"{path}: frames must be a non-empty list of {n_v}-value lists")
    return frames


def save_corpus(corpus, path):
    doc = {"version": FORMAT_VERSION, "kind": "corpus", "metadata": corpus.metadata}
    for name in ("train", "valid", "test"):
        doc[name] = [roll_to_doc(r) for r in corpus.split(name)]
    write_json(doc, path)


def load_corpus(path):
    doc = _read_json(path)
    if not isinstance(doc, dict) or doc.get("kind") != "corpus":
        raise DataError(f"{path}: not a corpus file")
    splits = {}
    for name in ("train", "valid", "test"):
        splits[name] = [roll_from_doc(d, f"{path}:{name}[{i}]")
                        for i, d in enumerate(doc.get(name, []))]
    return Corpus(metadata=doc.get("metadata", {}), **splits)


def load_rolls(path):
    """A corpus file, a single roll file, or a directory of roll files."""
    path = Path(path)
    if path.is_dir():
        return [load_piano_roll(p) for p in sorted(path.glob("*.json"))]
    doc = _read_json(path)
    if isinstance(doc, dict) and doc.get("kind") == "corpus":
        return load_corpus(path)
    return [roll_from_doc(doc, str(path))]


# -- tonality --------------------------------------------------------------


def pitch_class_histogram(roll):
    frames = roll.frames if isinstance(roll, PianoRoll) else np.asarray(roll)
    counts = frames.sum(0)
    hist = np.zeros(12)
    pcs = (np.arange(frames.shape[1]) + LOWEST_MIDI) % 12
    np.add.at(hist, pcs, counts)
    return hist


def estimate_key(roll):
    """``(tonic pitch class, mode)`` by correlation with the key profiles; C is 0."""
    hist = pitch_class_histogram(roll)
    if hist.sum() == 0 or np.all(hist == hist[0]):
        return None
    best, best_r = None, -np.inf
    for mode, profile in (("major", MAJOR_PROFILE), ("minor", MINOR_PROFILE)):
        for tonic in range(12):
            r = np.corrcoef(hist, np.roll(profile, tonic))[0, 1]
            if r > best_r:
                best, best_r = (tonic, mode), r
    return best


def transpose_roll(roll, shift):
    """Shift every note by ``shift`` semitones; returns ``(roll, n_clipped)``."""
    frames = roll.frames
    out = np.zeros_like(frames)
    n = frames.shape[1]
    if shift >= 0:
        out[:, shift:] = frames[:, :n - shift]
        clipped = int(frames[:, n - shift:].sum()) if shift else 0
    else:
        out[:, :shift] = frames[:, -shift:]
        clipped = int(frames[:, :-shift].sum())
    return PianoRoll(out, roll.resolution, roll.name, roll.provenance), clipped


def transpose_to_common_key(roll):
    """Transpose toward C major / C minor.

    Returns ``(roll, shift)`` with ``shift`` in [-6, 5] semitones.  Notes
    pushed off the keyboard are dropped with a warning.
    """
    if roll.n_visible != N_KEYS:
        raise DataError(f"transposition needs an {N_KEYS}-key roll")
    key = estimate_key(roll)
    if key is None:
        return roll, 0
    tonic = key[0]
    shift = -tonic if tonic <= 6 else 12 - tonic
    if shift == 0:
        return roll, 0
    out, clipped = transpose_roll(roll, shift)
    if clipped:
        warnings.warn(f"{clipped} notes fell off the keyboard while transposing by {shift}")
        log.info("transposition by %d clipped %d notes", shift, clipped)
    return out, shift


# -- bouncing balls ----------------------------------------------------------


@dataclass
class BallsConfig:
    side: int = 15
    T: int = 128
    n_balls: int = 2
    radius: float = 2.0
    speed: float = 0.5
    seed: int = 0
    substeps: int = 10
    supersample: int = 8
    max_placement_tries: int = 1000

    def __post_init__(self):
        if 2 * self.radius >= self.side:
            raise ValueError("balls do not fit in the box")
        if self.T < 1 or self.n_balls < 1 or self.speed < 0:
            raise ValueError("invalid bouncing-balls configuration")


def _place_balls(cfg, rng):
    r = cfg.radius
    for _ in range(cfg.max_placement_tries):
        pos = rng.uniform(r, cfg.side - r, (cfg.n_balls, 2))
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1)
        if np.all(d[np.triu_indices(cfg.n_balls, 1)] > 2 * r):
            return pos
    raise ValueError(f"could not place {cfg.n_balls} balls without overlap")


def simulate_balls(cfg):
    """Ball centres and velocities, both shaped ``(T, n_balls, 2)``."""
    rng = make_rng(cfg.seed)
    r, side = cfg.radius, cfg.side
    pos = _place_balls(cfg, rng)
    angle = rng.uniform(0, 2 * np.pi, cfg.n_balls)
    vel = cfg.speed * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    positions = np.empty((cfg.T, cfg.n_balls, 2))
    velocities = np.empty_like(positions)
    dt = 1.0 / cfg.substeps
    for t in range(cfg.T):
        positions[t], velocities[t] = pos, vel
        for _ in range(cfg.substeps):
            pos = pos + dt * vel
            low, high = pos < r, pos > side - r
            pos = np.where(low, 2 * r - pos, pos)
            pos = np.where(high, 2 * (side - r) - pos, pos)
            vel = np.where(low | high, -vel, vel)
            for i in range(cfg.n_balls):
                for j in range(i + 1, cfg.n_balls):
                    delta = pos[j] - pos[i]
                    dist = np.hypot(*delta)
                    if 0 < dist < 2 * r:
                        n = delta / dist
                        approach = np.dot(vel[i] - vel[j], n)
                        if approach > 0:
                            vel[i] = vel[i] - approach * n
                            vel[j] = vel[j] + approach * n
    return positions, velocities


def render_balls(positions, cfg):
    """Anti-aliased discs by supersampled pixel coverage, clipped to [0, 1]."""
    s = cfg.supersample
    offs = (np.arange(s) + 0.5) / s
    grid = np.arange(cfg.side)
    # sample coordinates for every pixel: (side, s)
    coords = (grid[:, None] + offs[None, :]).reshape(-1)
    frames = np.zeros((len(positions), cfg.side, cfg.side))
    r2 = cfg.radius ** 2
    for t, centres in enumerate(positions):
        img = np.zeros((cfg.side * s, cfg.side * s))
        for cx, cy in centres:
            dy = (coords - cy)[:, None] ** 2
            dx = (coords - cx)[None, :] ** 2
            img += (dx + dy) <= r2
        frames[t] = img.reshape(cfg.side, s, cfg.side, s).mean(axis=(1, 3))
    return np.clip(frames, 0.0, 1.0).reshape(len(positions), -1)


def generate_bouncing_balls(cfg):
    """A ``(T, side * side)`` video of balls bouncing in a box, pixels in [0, 1]."""
    positions, _ = simulate_balls(cfg)
    return render_balls(positions, cfg)


def balls_dataset(cfg, count):
    """``count`` videos with consecutive seeds starting at ``cfg.seed``."""
    base = cfg.seed
    return [generate_bouncing_balls(BallsConfig(**{**cfg.__dict__, "seed": base + i}))
            for i in range(count)]


# -- cycle corpus ------------------------------------------------------------


def make_cycle_dataset(n_v, period, T, count, seed=0, n_valid=None, n_test=None,
                       frames=None):
    """Sequences cycling deterministically through ``period`` fixed frames.

    The frames are distinct random binary vectors unless ``frames`` gives
    them explicitly (repeats allowed, in which case ``period`` is ignored).
    Every sequence starts at a random phase of the cycle.
    """
    rng = make_rng(seed)
    if frames is None:
        if period > 2 ** n_v:
            raise ValueError(f"only {2 ** n_v} distinct frames of dimension {n_v}")
        codes = rng.choice(2 ** n_v, size=period, replace=False)
        frames = ((codes[:, None] >> np.arange(n_v)) & 1).astype(np.uint8)
    else:
        frames = np.asarray(frames, dtype=np.uint8)
        if frames.ndim != 2 or frames.shape[1] != n_v:
            raise ValueError("explicit cycle frames must have shape (period, n_v)")
        period = len(frames)

    def make(n):
        out = []
        for _ in range(n):
            phase = int(rng.integers(period))
            idx = (phase + np.arange(T)) % period
            out.append(PianoRoll(frames[idx], name=f"cycle-phase{phase}"))
        return out

    n_valid = max(1, count // 5) if n_valid is None else n_valid
    n_test = max(1, count // 5) if n_test is None else n_test
    meta = {"source": "cycle", "n_v": n_v, "period": period, "T": T, "seed": seed,
            "frames": frames.astype(int).tolist()}
    return Corpus(make(count), make(n_valid), make(n_test), meta)


def frame_entropy_rate(corpus_frames, context):
    """Empirical conditional entropy (nats) of a frame given ``context`` previous frames."""
    joint, ctx = Counter(), Counter()
    for seq in corpus_frames:
        rows = [bytes(r) for r in np.asarray(seq, dtype=np.uint8)]
        for t in range(context, len(rows)):
            key = tuple(rows[t - context:t])
            joint[key + (rows[t],)] += 1
            ctx[key] += 1
    total = sum(joint.values())
    if total == 0:
        return math.nan
    return -sum(c / total * math.log(c / ctx[k[:-1]]) for k, c in joint.items())

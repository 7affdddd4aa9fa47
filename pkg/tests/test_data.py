import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnnrbm import baselines as B
from rnnrbm import data as D

C_MAJOR = [60, 62, 64, 65, 67, 69, 71, 72]


def scale_roll(midi_notes, shift=0):
    frames = np.zeros((len(midi_notes), D.N_KEYS), dtype=int)
    for t, m in enumerate(midi_notes):
        frames[t, m + shift - D.LOWEST_MIDI] = 1
    return D.PianoRoll(frames)


def write(tmp_path, doc, name="roll.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


class TestPianoRollFiles:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 20), st.integers(1, 12), st.integers(0, 2 ** 31))
    def test_round_trip(self, T, n_v, seed):
        import tempfile
        from pathlib import Path
        frames = (np.random.default_rng(seed).random((T, n_v)) < 0.3).astype(int)
        roll = D.PianoRoll(frames, resolution=2, name="x")
        with tempfile.TemporaryDirectory() as d:
            D.save_piano_roll(roll, Path(d) / "r.json")
            back = D.load_piano_roll(Path(d) / "r.json")
        np.testing.assert_array_equal(back.frames, roll.frames)
        assert (back.resolution, back.name) == (2, "x")

    def test_value_two_rejected_with_location(self, tmp_path):
        doc = {"version": 1, "n_v": 3, "frames": [[0, 1, 0], [0, 2, 0]]}
        with pytest.raises(D.DataError, match=r"frames\[1\]\[1\]"):
            D.load_piano_roll(write(tmp_path, doc))
        with pytest.raises(D.DataError):
            D.PianoRoll(np.array([[0, 2]]))

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(D.DataError):
            D.load_piano_roll(write(tmp_path, {"version": 1, "n_v": 3, "frames": []}))
        with pytest.raises(D.DataError):
            D.PianoRoll(np.zeros((0, 4)))

    def test_sparse_frames(self, tmp_path):
        doc = {"version": 1, "n_v": 4, "frames_sparse": [[0, 3], [], [2]]}
        roll = D.load_piano_roll(write(tmp_path, doc))
        np.testing.assert_array_equal(roll.frames, [[1, 0, 0, 1], [0, 0, 0, 0], [0, 0, 1, 0]])
        with pytest.raises(D.DataError, match="pitch index"):
            D.load_piano_roll(write(tmp_path, {"version": 1, "n_v": 4, "frames_sparse": [[4]]}))

    @pytest.mark.parametrize("doc, message", [
        ({"version": 2, "n_v": 1, "frames": [[0]]}, "version"),
        ({"version": 1, "n_v": 0, "frames": [[0]]}, "n_v"),
        ({"version": 1, "n_v": 2, "frames": [[0]]}, r"frames\[0\]"),
        ({"version": 1, "n_v": 1}, "missing"),
        ({"version": 1, "n_v": 1, "frames": [[1]], "resolution": 0}, "resolution"),
    ])
    def test_header_errors(self, tmp_path, doc, message):
        with pytest.raises(D.DataError, match=message):
            D.load_piano_roll(write(tmp_path, doc))

    def test_invalid_json_and_missing_file(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(D.DataError, match="line 1"):
            D.load_piano_roll(bad)
        with pytest.raises(D.DataError):
            D.load_piano_roll(tmp_path / "absent.json")

    def test_corpus_round_trip(self, tmp_path):
        corpus = D.make_cycle_dataset(5, 3, 6, 4, seed=1)
        D.save_corpus(corpus, tmp_path / "c.json")
        back = D.load_rolls(tmp_path / "c.json")
        assert back.metadata == corpus.metadata
        for name in ("train", "valid", "test"):
            for a, b in zip(back.split(name), corpus.split(name)):
                np.testing.assert_array_equal(a.frames, b.frames)

    def test_directory_of_rolls(self, tmp_path):
        for i in range(3):
            D.save_piano_roll(D.PianoRoll(np.full((2, 3), i % 2)), tmp_path / f"r{i}.json")
        assert len(D.load_rolls(tmp_path)) == 3

    def test_real_sequence_round_trip(self, tmp_path):
        frames = np.random.default_rng(0).random((4, 3))
        D.save_real_sequence(frames, tmp_path / "s.json")
        np.testing.assert_array_equal(D.load_real_sequence(tmp_path / "s.json"), frames)


class TestTransposition:
    def test_c_major_scale_stays(self):
        roll = scale_roll(C_MAJOR)
        assert D.estimate_key(roll) == (0, "major")
        out, shift = D.transpose_to_common_key(roll)
        assert shift == 0 and out is roll

    def test_d_major_moves_down_two(self):
        out, shift = D.transpose_to_common_key(scale_roll(C_MAJOR, shift=2))
        assert shift == -2
        np.testing.assert_array_equal(out.frames, scale_roll(C_MAJOR).frames)

    @pytest.mark.parametrize("offset", range(12))
    def test_idempotent(self, offset):
        once, _ = D.transpose_to_common_key(scale_roll(C_MAJOR, shift=offset))
        twice, shift = D.transpose_to_common_key(once)
        assert shift == 0
        np.testing.assert_array_equal(twice.frames, once.frames)

    def test_preserves_polyphony_and_length(self):
        rng = np.random.default_rng(3)
        frames = np.zeros((30, 88), dtype=int)
        frames[:, 20:60] = rng.random((30, 40)) < 0.2
        roll = D.PianoRoll(frames)
        out, _ = D.transpose_to_common_key(roll)
        assert len(out) == len(roll)
        np.testing.assert_array_equal(out.frames.sum(1), roll.frames.sum(1))

    def test_clipping_warns_and_counts(self):
        frames = np.zeros((2, 88), dtype=int)
        frames[:, 0] = 1
        out, clipped = D.transpose_roll(D.PianoRoll(frames), -1)
        assert clipped == 2 and out.frames.sum() == 0
        # D major with one A0: shifting down to C pushes A0 off the keyboard
        roll = scale_roll([m + 2 for m in C_MAJOR])
        roll.frames[0, 0] = 1
        with pytest.warns(UserWarning, match="fell off"):
            _, shift = D.transpose_to_common_key(roll)
        assert shift == -2

    def test_needs_88_keys(self):
        with pytest.raises(D.DataError):
            D.transpose_to_common_key(D.PianoRoll(np.ones((2, 8))))

    def test_silent_roll_unchanged(self):
        roll = D.PianoRoll(np.zeros((3, 88)))
        assert D.transpose_to_common_key(roll) == (roll, 0)


class TestBouncingBalls:
    def test_zero_speed_is_static(self):
        video = D.generate_bouncing_balls(D.BallsConfig(side=10, T=20, speed=0.0, seed=1))
        np.testing.assert_array_equal(video, np.tile(video[0], (20, 1)))

    def test_pixels_and_mass(self):
        cfg = D.BallsConfig(side=15, T=1000, n_balls=2, seed=1)
        video = D.generate_bouncing_balls(cfg)
        assert video.min() >= 0.0 and video.max() <= 1.0
        mass = video.sum(1)
        assert mass.max() / mass.min() - 1 <= 0.02
        assert mass.mean() == pytest.approx(2 * math.pi * cfg.radius ** 2, rel=0.02)

    def test_determinism(self):
        cfg = D.BallsConfig(side=8, T=30, n_balls=1, radius=1.5, seed=4)
        np.testing.assert_array_equal(D.generate_bouncing_balls(cfg),
                                      D.generate_bouncing_balls(cfg))

    def test_speed_conserved_through_bounces(self):
        pos, vel = D.simulate_balls(D.BallsConfig(n_balls=1, T=500, speed=0.9, seed=3))
        speed = np.linalg.norm(vel, axis=-1)
        np.testing.assert_allclose(speed, 0.9, rtol=1e-14)
        assert len(np.unique(np.sign(vel[:, 0, 0]))) == 2
        assert np.all((pos >= 2.0) & (pos <= 13.0))

    def test_placement_failure(self):
        with pytest.raises(ValueError, match="could not place"):
            D.simulate_balls(D.BallsConfig(side=5, radius=2.0, n_balls=3, max_placement_tries=10))

    def test_invalid_geometry(self):
        with pytest.raises(ValueError):
            D.BallsConfig(side=4, radius=2.0)

    def test_dataset_uses_consecutive_seeds(self):
        cfg = D.BallsConfig(side=8, T=5, n_balls=1, radius=1.5, seed=10)
        videos = D.balls_dataset(cfg, 2)
        np.testing.assert_array_equal(
            videos[1], D.generate_bouncing_balls(D.BallsConfig(side=8, T=5, n_balls=1,
                                                               radius=1.5, seed=11)))


class TestCycleDataset:
    def test_period_one_is_constant(self):
        corpus = D.make_cycle_dataset(6, 1, 10, 3, seed=2)
        for roll in corpus.train:
            assert np.all(roll.frames == roll.frames[0])

    def test_entropy_rate_zero_with_full_period(self):
        corpus = D.make_cycle_dataset(8, 4, 40, 20, seed=0)
        seqs = [r.frames for r in corpus.train]
        assert D.frame_entropy_rate(seqs, 4) == 0.0
        assert D.frame_entropy_rate(seqs, 0) == pytest.approx(math.log(4), rel=0.01)

    def test_bigram_recovers_chain(self):
        corpus = D.make_cycle_dataset(8, 4, 40, 20, seed=0)
        model = B.ngram_train([r.as_float() for r in corpus.train], 2, p=1e-8)
        lp = B.ngram_log_prob(model, corpus.test[0].as_float())
        assert lp[1:].mean() > -1e-6

    def test_explicit_frames_and_phases(self):
        frames = [[1, 0], [0, 1], [1, 0]]
        corpus = D.make_cycle_dataset(2, 99, 7, 5, seed=1, frames=frames)
        assert corpus.metadata["period"] == 3
        for roll in corpus.train:
            phase = int(roll.name.removeprefix("cycle-phase"))
            expected = np.array(frames)[(phase + np.arange(7)) % 3]
            np.testing.assert_array_equal(roll.frames, expected)

    def test_distinct_frames_and_limits(self):
        corpus = D.make_cycle_dataset(3, 8, 8, 1, seed=5)
        assert len({tuple(r) for r in corpus.train[0].frames}) == 8
        with pytest.raises(ValueError):
            D.make_cycle_dataset(3, 9, 8, 1)

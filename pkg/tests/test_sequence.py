import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rnnrbm import nade as N
from rnnrbm import rbm as R
from rnnrbm import sequence as S
from rnnrbm.data import make_cycle_dataset
from rnnrbm.numerics import (
    NumericalError,
    finite_difference_gradient,
    make_rng,
    max_relative_error,
)


def random_model(kind, n_v=4, n_h=3, n_r=None, seed=0, std=0.5):
    rng = make_rng(seed)
    m = S.SequenceModel.create(kind, n_v, n_h, n_r, rng, init_std=std)
    # non-zero biases and initial state exercise every term
    return m.with_params(b_v=rng.normal(0, std, n_v), b_h=rng.normal(0, std, n_h),
                         h0=rng.uniform(0.2, 0.8, m.n_recurrent))


def binary_seq(T, n_v, seed):
    return (make_rng(seed).random((T, n_v)) < 0.5).astype(float)


def fd_check(model, loss, names=None):
    """Finite-difference gradient of ``loss(model)`` for every parameter block."""
    out = {}
    for name in names or model.param_names:
        base = getattr(model, name)
        out[name] = finite_difference_gradient(
            lambda x, n=name: loss(model.with_params(**{n: x})), base)
    return out


def tied_and_untied(seed=0, n_v=4, n_h=3):
    tied = random_model("rtrbm", n_v, n_h, seed=seed)
    return tied, tied.untied()


@pytest.fixture(scope="module")
def cycle_model():
    corpus = make_cycle_dataset(8, 4, 40, 50, seed=0)
    train = [r.as_float() for r in corpus.train]
    model = S.SequenceModel.create("nade", 8, 20, 20, make_rng(0), init_std=0.1)
    model = S.fit(model, train, S.TrainConfig(learning_rate=0.01, epochs=30))
    return model, corpus


class TestModel:
    def test_create_shapes(self):
        m = S.SequenceModel.create("rbm", 5, 4, 3)
        assert (m.W.shape, m.W_bh.shape, m.W_bv.shape, m.W_in.shape, m.W_rec.shape) == (
            (4, 5), (4, 3), (5, 3), (3, 5), (3, 3))
        np.testing.assert_array_equal(m.h0, 0.5)
        assert m.V is None

    def test_nade_has_decoder(self):
        m = S.SequenceModel.create("nade", 5, 4, 3)
        assert m.V.shape == (5, 4) and "V" in m.param_names

    def test_tied_stores_shared_views_once(self):
        m = S.SequenceModel.create("rtrbm", 5, 4)
        assert m.W_in is None and m.input_weights is m.W
        assert m.recurrent_weights is m.W_bh and m.rnn_bias is m.b_h
        assert len(m.param_names) == 6

    def test_tied_requires_equal_sizes(self):
        with pytest.raises(ValueError):
            S.SequenceModel.create("rtrbm", 5, 4, 3)

    def test_rejects_bad_kind_and_shapes(self):
        with pytest.raises(ValueError):
            S.SequenceModel.create("lstm", 3, 2)
        m = S.SequenceModel.create("rbm", 3, 2, 2)
        with pytest.raises(ValueError):
            m.with_params(W_bv=np.zeros((2, 2)))
        with pytest.raises(ValueError):
            S.SequenceModel(**{**m.params(), "V": np.zeros((3, 2))}, kind="rbm")

    def test_nade_needs_binary_units(self):
        with pytest.raises(ValueError):
            S.SequenceModel.create("nade", 3, 2, visible_kind=R.GAUSSIAN)


class TestForward:
    def test_zero_recurrence_gives_half(self):
        m = random_model("rbm").with_params(W_in=np.zeros((3, 4)), W_rec=np.zeros((3, 3)),
                                            b_rnn=np.zeros(3))
        trace = S.rnn_forward(m, binary_seq(6, 4, 1))
        np.testing.assert_array_equal(trace.h_hat[1:], 0.5)

    def test_decoupled_biases_are_constant(self):
        m = random_model("nade").with_params(W_bh=np.zeros((3, 3)), W_bv=np.zeros((4, 3)))
        trace = S.rnn_forward(m, binary_seq(5, 4, 2))
        np.testing.assert_array_equal(trace.b_v, np.tile(m.b_v, (5, 1)))
        np.testing.assert_array_equal(trace.b_h, np.tile(m.b_h, (5, 1)))

    def test_tied_equals_untied(self):
        tied, untied = tied_and_untied(3)
        v = binary_seq(7, 4, 3)
        a, b = S.rnn_forward(tied, v), S.rnn_forward(untied, v)
        for name in ("h_hat", "b_v", "b_h"):
            np.testing.assert_allclose(getattr(a, name), getattr(b, name), atol=1e-12, rtol=0)

    def test_step_interface_matches_trace(self):
        m = random_model("rbm", seed=4)
        v = binary_seq(5, 4, 4)
        trace = S.rnn_forward(m, v)
        state = m.initial_state()
        for t in range(5):
            b_v, b_h = m.step_biases(state)
            np.testing.assert_allclose(b_v, trace.b_v[t], atol=1e-14)
            np.testing.assert_allclose(b_h, trace.b_h[t], atol=1e-14)
            state = m.next_state(state, v[t])

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            S.rnn_forward(random_model("rbm"), np.zeros((3, 5)))

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.1, 20.0))
    def test_hidden_state_stays_in_unit_interval(self, seed, std):
        m = random_model("rbm", seed=seed, std=std)
        trace = S.rnn_forward(m, binary_seq(6, 4, seed))
        assert np.all((trace.h_hat > 0) & (trace.h_hat < 1)) or std > 5
        assert np.all(np.isfinite(trace.b_v)) and np.all(np.isfinite(trace.b_h))


class TestBPTT:
    def surrogate(self, kind, T=5, seed=0):
        model = random_model(kind, seed=seed)
        rng = make_rng(seed + 100)
        g_v, g_h = rng.normal(size=(T, 4)), rng.normal(size=(T, 3))
        v = binary_seq(T, 4, seed)

        def loss(m):
            tr = S.rnn_forward(m, v)
            return float(np.sum(g_v * tr.b_v) + np.sum(g_h * tr.b_h))

        return model, v, g_v, g_h, loss

    def test_zero_input_gives_zero_output(self):
        m = random_model("rbm")
        trace = S.rnn_forward(m, binary_seq(4, 4, 0))
        grads = S.bptt_gradients(trace, (np.zeros((4, 4)), np.zeros((4, 3))), m)
        for g in grads.values():
            np.testing.assert_array_equal(g, 0.0)

    def test_surrogate_matches_finite_differences(self):
        model, v, g_v, g_h, loss = self.surrogate("rbm")
        grads = S.bptt_gradients(S.rnn_forward(model, v), (g_v, g_h), model)
        names = ["W_bh", "W_bv", "b_h", "b_v", "W_in", "W_rec", "b_rnn", "h0"]
        fd = fd_check(model, loss, names)
        for n in names:
            assert max_relative_error(grads[n], fd[n]) <= 1e-6, n

    def test_single_step_by_hand(self):
        m = random_model("rbm", seed=5)
        v = binary_seq(1, 4, 5)
        g_v, g_h = np.ones((1, 4)), np.full((1, 3), 2.0)
        grads = S.bptt_gradients(S.rnn_forward(m, v), (g_v, g_h), m)
        # only the biases of step 1 depend on h0; nothing depends on h_hat[1]
        np.testing.assert_allclose(grads["h0"], m.W_bv.T @ g_v[0] + m.W_bh.T @ g_h[0])
        np.testing.assert_allclose(grads["W_bv"], np.outer(g_v[0], m.h0))
        np.testing.assert_allclose(grads["W_bh"], np.outer(g_h[0], m.h0))
        for n in ("W_in", "W_rec", "b_rnn"):
            np.testing.assert_array_equal(grads[n], 0.0)

    def test_linearity(self):
        model, v, g_v, g_h, _ = self.surrogate("rbm", seed=6)
        trace = S.rnn_forward(model, v)
        one = S.bptt_gradients(trace, (g_v, g_h), model)
        two = S.bptt_gradients(trace, (2 * g_v, 2 * g_h), model)
        for n in one:
            np.testing.assert_array_equal(two[n], 2 * one[n])

    def test_length_mismatch(self):
        m = random_model("rbm")
        trace = S.rnn_forward(m, binary_seq(4, 4, 0))
        with pytest.raises(ValueError):
            S.bptt_gradients(trace, (np.zeros((3, 4)), np.zeros((3, 3))), m)


class TestSequenceGradients:
    def test_rnn_nade_matches_finite_differences(self):
        model = random_model("nade", n_v=4, n_h=5, n_r=3, seed=7)
        v = binary_seq(3, 4, 7)

        def nll(m):
            return -S.sequence_log_likelihood(m, v)[0]

        grads, diag = S.sequence_gradients(model, v, 1, make_rng(0))
        fd = fd_check(model, nll)
        for name in model.param_names:
            assert max_relative_error(grads[name], fd[name]) <= 1e-4, name
        assert diag.cost == pytest.approx(nll(model))

    def test_tied_gradients_sum_shared_views(self):
        tied, untied = tied_and_untied(8)
        v = binary_seq(6, 4, 8)
        gt, dt = S.sequence_gradients(tied, v, 1, make_rng(3))
        gu, du = S.sequence_gradients(untied, v, 1, make_rng(3))
        np.testing.assert_array_equal(dt.v_star, du.v_star)
        np.testing.assert_allclose(gt["W"], gu["W"] + gu["W_in"], atol=1e-10, rtol=0)
        np.testing.assert_allclose(gt["W_bh"], gu["W_bh"] + gu["W_rec"], atol=1e-10, rtol=0)
        np.testing.assert_allclose(gt["b_h"], gu["b_h"] + gu["b_rnn"], atol=1e-10, rtol=0)
        for n in ("b_v", "W_bv", "h0"):
            np.testing.assert_allclose(gt[n], gu[n], atol=1e-12, rtol=0)

    def test_length_one_nade_composition(self):
        m = random_model("nade", seed=9)
        v = binary_seq(1, 4, 9)
        grads, _ = S.sequence_gradients(m, v, 1, make_rng(0))
        b_v, b_h = m.b_v + m.W_bv @ m.h0, m.b_h + m.W_bh @ m.h0
        g = N.nade_gradient(N.NADE(m.W, m.V, b_v, b_h), v[0])
        np.testing.assert_allclose(grads["W"], g.dW, atol=1e-14)
        np.testing.assert_allclose(grads["V"], g.dV, atol=1e-14)
        np.testing.assert_allclose(grads["b_v"], g.db_v, atol=1e-14)
        np.testing.assert_allclose(grads["h0"], m.W_bv.T @ g.db_v + m.W_bh.T @ g.db_h,
                                   atol=1e-14)
        np.testing.assert_array_equal(grads["W_in"], 0.0)

    def test_rbm_per_step_cd_terms(self):
        m = random_model("rbm", seed=10)
        v = binary_seq(4, 4, 10)
        grads, diag = S.sequence_gradients(m, v, 2, make_rng(5))
        trace = S.rnn_forward(m, v)
        total = np.zeros_like(m.W)
        for t in range(4):
            rbm = R.RBM(m.W, trace.b_v[t], trace.b_h[t])
            total += R.cd_gradient_from_particle(rbm, v[t], diag.v_star[t]).dW
        np.testing.assert_allclose(grads["W"], total, atol=1e-12)

    def test_non_finite_gradient_names_step(self, monkeypatch):
        m = random_model("nade", seed=11)
        real = N.nade_gradient

        def broken(*args, **kwargs):
            g = real(*args, **kwargs)
            g.db_v[2, 0] = np.nan
            return g

        monkeypatch.setattr(N, "nade_gradient", broken)
        with pytest.raises(NumericalError, match="time step 2"):
            S.sequence_gradients(m, binary_seq(4, 4, 0), 1, make_rng(0))


class TestTraining:
    def test_zero_learning_rate_is_identity(self):
        m = random_model("rbm", seed=12)
        cfg = S.TrainConfig(learning_rate=0.0)
        new, _, _ = S.train_step(m, binary_seq(5, 4, 0), cfg, make_rng(0))
        for n in m.param_names:
            np.testing.assert_array_equal(getattr(new, n), getattr(m, n))

    def test_seed_determinism(self):
        m = random_model("rtrbm", seed=13)
        v = binary_seq(5, 4, 1)
        cfg = S.TrainConfig(learning_rate=0.1)
        a, _, _ = S.train_step(m, v, cfg, make_rng(4))
        b, _, _ = S.train_step(m, v, cfg, make_rng(4))
        for n in m.param_names:
            np.testing.assert_array_equal(getattr(a, n), getattr(b, n))

    def test_tied_update_agrees_with_shared_gradients(self):
        tied, untied = tied_and_untied(14)
        v = binary_seq(5, 4, 2)
        cfg = S.TrainConfig(learning_rate=0.05, momentum=0.0, gradient_clip_norm=0.0)
        new_t, _, _ = S.train_step(tied, v, cfg, make_rng(1))
        gu, _ = S.sequence_gradients(untied, v, 1, make_rng(1))
        np.testing.assert_allclose(new_t.W, tied.W - 0.05 * (gu["W"] + gu["W_in"]), atol=1e-12)

    def test_clipping_bounds_update(self):
        m = random_model("nade", seed=15)
        cfg = S.TrainConfig(learning_rate=1.0, momentum=0.0, gradient_clip_norm=0.1)
        new, diag, _ = S.train_step(m, binary_seq(6, 4, 3), cfg, make_rng(0))
        step = np.sqrt(sum(np.sum((getattr(new, n) - getattr(m, n)) ** 2)
                           for n in m.param_names))
        assert diag.grad_norm > 0.1
        assert step == pytest.approx(0.1, rel=1e-9)

    def test_fit_history_and_progress(self):
        corpus = make_cycle_dataset(6, 3, 20, 10, seed=1)
        seqs = [r.as_float() for r in corpus.train]
        m = S.SequenceModel.create("nade", 6, 8, 8, make_rng(0), init_std=0.1)
        hist = []
        S.fit(m, seqs, S.TrainConfig(learning_rate=0.02, epochs=8), history=hist)
        assert [h["epoch"] for h in hist] == list(range(8))
        assert hist[-1]["cost_per_frame"] < hist[0]["cost_per_frame"]

    def test_fit_batches_average(self):
        seqs = [binary_seq(4, 4, s) for s in range(4)]
        m = random_model("nade", seed=16)
        cfg = S.TrainConfig(learning_rate=0.1, momentum=0.0, epochs=1, batch_size=4,
                            gradient_clip_norm=0.0)
        new = S.fit(m, seqs, cfg, rng=make_rng(0))
        grads = [S.sequence_gradients(m, s, 1, make_rng(0))[0] for s in seqs]
        mean_w = sum(g["W"] for g in grads) / 4
        np.testing.assert_allclose(new.W, m.W - 0.1 * mean_w, atol=1e-12)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            S.TrainConfig(k=0)
        with pytest.raises(ValueError):
            S.TrainConfig(momentum=1.0)


class TestPretraining:
    def frames(self):
        return (make_rng(0).random((200, 6)) < 0.3).astype(float)

    def test_rbm_init_inert_recurrence_matches_static_rbm(self):
        m = S.SequenceModel.create("rbm", 6, 4, 3, make_rng(1))
        cfg = S.TrainConfig(pretrain_rbm_epochs=3)
        m = S.pretrain_rbm_init(m, self.frames(), cfg)
        m = m.with_params(W_bh=np.zeros_like(m.W_bh), W_bv=np.zeros_like(m.W_bv))
        static = R.train_rbm(self.frames(), R.RBMTrainConfig(n_hidden=4, epochs=3, seed=0))
        v = binary_seq(5, 6, 1)
        trace = S.rnn_forward(m, v)
        for t in range(5):
            est = R.RBM(m.W, trace.b_v[t], trace.b_h[t])
            np.testing.assert_allclose(R.hidden_conditional(est, v[t]),
                                       R.hidden_conditional(static, v[t]), atol=1e-14)

    def test_rbm_init_determinism_and_small_couplings(self):
        m = S.SequenceModel.create("rtrbm", 6, 4, rng=make_rng(1))
        cfg = S.TrainConfig(pretrain_rbm_epochs=2)
        a = S.pretrain_rbm_init(m, self.frames(), cfg)
        b = S.pretrain_rbm_init(m, self.frames(), cfg)
        np.testing.assert_array_equal(a.W, b.W)
        assert np.std(a.W_bv) < 0.03

    def test_rbm_init_refuses_nade(self):
        with pytest.raises(ValueError):
            S.pretrain_rbm_init(S.SequenceModel.create("nade", 3, 2), np.zeros((4, 3)),
                                S.TrainConfig())

    def test_rnn_init_copies_blocks(self):
        seqs = [binary_seq(8, 6, s) for s in range(3)]
        cfg = S.TrainConfig(pretrain_rnn_epochs=2, pretrain_rnn_learning_rate=0.1)
        m = S.SequenceModel.create("rbm", 6, 4, 5, make_rng(2))
        out = S.pretrain_rnn_init(m, seqs, cfg)
        rnn = S.train_rnn(S.RNNPredictor.create(6, 5, make_rng(cfg.seed + 3)), seqs,
                          S.TrainConfig(learning_rate=0.1, epochs=2, seed=cfg.seed + 2))
        for n in ("W_in", "W_rec", "b_rnn", "W_bv", "b_v", "h0"):
            np.testing.assert_array_equal(getattr(out, n), getattr(rnn, n))
        np.testing.assert_array_equal(out.W, m.W)
        tied = S.pretrain_rnn_init(S.SequenceModel.create("rtrbm", 6, 5, rng=make_rng(2)),
                                   seqs, cfg)
        np.testing.assert_array_equal(tied.W, rnn.W_in)
        np.testing.assert_array_equal(tied.W_bh, rnn.W_rec)


class TestRNNPredictor:
    def test_zero_network_cost(self):
        zero = S.RNNPredictor(np.zeros((3, 5)), np.zeros((3, 3)), np.zeros(3), np.full(3, 0.5),
                              np.zeros((5, 3)), np.zeros(5))
        assert zero.cost(binary_seq(7, 5, 0)) == pytest.approx(5 * math.log(2))

    def test_gradient_matches_finite_differences(self):
        rng = make_rng(3)
        m = S.RNNPredictor.create(4, 3, rng, init_std=0.5).with_params(
            b_v=rng.normal(size=4), h0=rng.uniform(0.2, 0.8, 3))
        v = binary_seq(5, 4, 3)
        grads = m.gradients(v)
        for n in m.param_names:
            fd = finite_difference_gradient(
                lambda x, n=n: m.with_params(**{n: x}).cost(v), getattr(m, n))
            assert max_relative_error(grads[n], fd) <= 1e-4, n

    def test_learns_constant_sequence(self):
        seqs = [np.tile([1.0, 0, 1, 0, 0], (20, 1))] * 3
        m = S.train_rnn(S.RNNPredictor.create(5, 4, make_rng(0)), seqs,
                        S.TrainConfig(learning_rate=0.5, epochs=60))
        assert m.cost(seqs[0]) <= 0.05

    def test_step_interface_matches_batch(self):
        m = S.RNNPredictor.create(4, 3, make_rng(4), init_std=0.5)
        v = binary_seq(6, 4, 4)
        _, per = m.sequence_log_likelihood(v)
        state = m.initial_state()
        for t in range(6):
            assert m.frame_log_prob(state, v[t][None])[0] == pytest.approx(per[t], abs=1e-12)
            state = m.next_state(state, v[t])


class TestGenerationAndPrediction:
    def test_zero_nade_generates_fair_coins(self):
        m = S.SequenceModel.create("nade", 10, 4, 4, init_std=0.0)
        out = S.generate(m, 2000, make_rng(0))
        assert abs(out.mean() - 0.5) < 0.01

    def test_priming_reproduces_trace(self):
        m = random_model("rbm", seed=17)
        first = S.generate(m, 12, make_rng(1))
        again = S.generate(m, 12, make_rng(99), prime=first)
        np.testing.assert_array_equal(first, again)
        np.testing.assert_array_equal(S.rnn_forward(m, first).h_hat,
                                      S.rnn_forward(m, again).h_hat)

    def test_generate_validates_length(self):
        with pytest.raises(ValueError):
            S.generate(random_model("rbm"), 0, make_rng(0))

    def test_trained_model_continues_cycle(self, cycle_model):
        model, corpus = cycle_model
        frames = np.array(corpus.metadata["frames"], dtype=float)
        out = S.generate(model, 200, make_rng(3))
        idx = [int(np.argmin(np.abs(frames - f).sum(1))) for f in out]
        ok = [np.array_equal(out[t + 1], frames[(idx[t] + 1) % 4]) for t in range(199)]
        assert np.mean(ok) >= 0.95

    def test_trained_model_predicts_next_frame(self, cycle_model):
        model, corpus = cycle_model
        errors = []
        for roll in corpus.test[:5]:
            seq = roll.as_float()
            for t in range(4, len(seq)):
                mean, _ = S.predict_next(model, seq[:t])
                errors.append(np.sum((mean - seq[t]) ** 2))
        assert np.mean(errors) <= 0.1

    def test_default_gibbs_steps(self):
        import inspect
        assert inspect.signature(S.predict_next).parameters["n_gibbs"].default == 50

    def test_decoupled_rbm_reconstructs_last_frame(self):
        m = random_model("rbm", seed=18).with_params(W_bh=np.zeros((3, 3)), W_bv=np.zeros((4, 3)))
        history = binary_seq(3, 4, 5)
        mean, _ = S.predict_next(m, history, n_gibbs=7, rng=make_rng(2))
        static = R.RBM(m.W, m.b_v, m.b_h)
        _, ref = R.gibbs_chain(static, history[-1][None], 7, make_rng(2))
        np.testing.assert_allclose(mean, ref[0])

    def test_predict_sequence_shape(self):
        m = random_model("nade", seed=19)
        assert S.predict_sequence(m, binary_seq(6, 4, 0)).shape == (5, 4)


class TestLikelihood:
    def test_zero_nade_is_uniform(self):
        m = S.SequenceModel.create("nade", 88, 5, 5, init_std=0.0)
        total, per = S.sequence_log_likelihood(m, binary_seq(4, 88, 0))
        assert total == pytest.approx(-88 * 4 * math.log(2), abs=1e-9)
        assert per.shape == (4,)

    def test_ais_close_to_exact(self):
        m = random_model("rbm", n_v=8, n_h=6, n_r=4, seed=20, std=0.3)
        v = binary_seq(5, 8, 20)
        _, exact = S.sequence_log_likelihood(m, v, S.EvalConfig(partition="exact"))
        _, ais = S.sequence_log_likelihood(m, v, S.EvalConfig(partition="ais", ais_runs=100,
                                                               ais_betas=500))
        assert abs(exact.mean() - ais.mean()) <= 0.15

    def test_frame_log_prob_matches_sequence(self):
        m = random_model("rbm", seed=21)
        v = binary_seq(4, 4, 21)
        _, per = S.sequence_log_likelihood(m, v)
        state = m.initial_state()
        for t in range(4):
            assert m.frame_log_prob(state, v[t][None])[0] == pytest.approx(per[t], abs=1e-10)
            state = m.next_state(state, v[t])

    def test_exact_normalisation_of_rbm_step(self):
        from rnnrbm.numerics import all_binary_vectors
        m = random_model("rbm", seed=22)
        state = m.next_state(m.initial_state(), np.ones(4))
        p = np.exp(m.frame_log_prob(state, all_binary_vectors(4)))
        assert p.sum() == pytest.approx(1.0, abs=1e-12)

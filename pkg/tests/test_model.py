"""Forward determinism, weight sharing, exact gradients, checkpoints."""

import numpy as np
import pytest

from trackdistill.errors import CheckpointError, ConfigError, NumericError, ParseError
from trackdistill.geometry import Box
from trackdistill.mdp import State
from trackdistill.model import (
    GradCheckReport,
    HiddenSchedule,
    StudentConfig,
    StudentModel,
    grad_check,
    load_params,
    save_params,
)

SMALL = StudentConfig(patch_size=16, conv_channels=(4, 8), fc_dim=16, hidden_dim=12)
POOL = StudentConfig(patch_size=16, encoder="pool", pool_factor=4, pool_dim=12, fc_dim=16, hidden_dim=12)


def random_state(rng, patch_size=16):
    shape = (patch_size, patch_size, 3)
    return State(
        patch_prev=rng.uniform(0, 255, shape),
        patch_cur=rng.uniform(0, 255, shape),
        anchor=Box(0, 0, 10, 10),
    )


class TestForward:
    def test_deterministic(self):
        rng = np.random.default_rng(101)
        model = StudentModel(SMALL)
        params = model.init_params(seed=1)
        s = random_state(rng)
        h = model.zero_hidden()
        out1, h1 = model.forward(params, s, h)
        out2, h2 = model.forward(params, s, h)
        np.testing.assert_array_equal(out1.action, out2.action)
        assert out1.value == out2.value
        np.testing.assert_array_equal(h1.h, h2.h)

    def test_action_bounded(self):
        rng = np.random.default_rng(102)
        model = StudentModel(SMALL)
        for seed in range(5):
            params = model.init_params(seed) * 10.0  # exaggerate pre-activations
            out, _ = model.forward(params, random_state(rng), model.zero_hidden())
            assert np.all(np.abs(out.action) < 1.0)

    def test_zero_params_zero_outputs(self):
        rng = np.random.default_rng(103)
        model = StudentModel(SMALL)
        params = np.zeros(model.n_params)
        out, hidden = model.forward(params, random_state(rng), model.zero_hidden())
        np.testing.assert_array_equal(out.action, np.zeros(4))
        assert out.value == 0.0
        np.testing.assert_array_equal(hidden.h, np.zeros(12))

    def test_hidden_state_matters(self):
        rng = np.random.default_rng(104)
        model = StudentModel(SMALL)
        params = model.init_params(seed=2)
        s = random_state(rng)
        out_cold, h1 = model.forward(params, s, model.zero_hidden())
        out_warm, _ = model.forward(params, s, h1)
        assert not np.array_equal(out_cold.action, out_warm.action)

    def test_weight_sharing_across_branches(self):
        """Both patch branches apply the identical encoder function."""
        rng = np.random.default_rng(105)
        model = StudentModel(SMALL)
        params = model.init_params(seed=3)
        a = rng.uniform(0, 255, (16, 16, 3))
        b = rng.uniform(0, 255, (16, 16, 3))
        fa = model.encode_feature(params, a)
        fb = model.encode_feature(params, b)
        sab = State(a, b, Box(0, 0, 5, 5))
        sba = State(b, a, Box(0, 0, 5, 5))
        mus = {}
        for tag, st in (("ab", sab), ("ba", sba)):
            out, _ = model.forward(params, st, model.zero_hidden())
            mus[tag] = out.action
        # swapping inputs changes the output only via concat order, never via
        # per-branch weights: rebuild both orders from the same two features
        v = model.views(params)
        for tag, first, second in (("ab", fa, fb), ("ba", fb, fa)):
            z = np.concatenate([first, second])
            a1 = np.maximum(v["fuse1.W"] @ z + v["fuse1.b"], 0.0)
            a2 = np.maximum(v["fuse2.W"] @ a1 + v["fuse2.b"], 0.0)
            assert a2.shape == (16,)
        assert not np.array_equal(mus["ab"], mus["ba"])

    def test_shape_mismatch_rejected(self):
        rng = np.random.default_rng(106)
        model = StudentModel(SMALL)
        params = model.init_params(seed=1)
        bad = random_state(rng, patch_size=8)
        with pytest.raises(ConfigError):
            model.forward(params, bad, model.zero_hidden())

    def test_pool_encoder_runs(self):
        rng = np.random.default_rng(107)
        model = StudentModel(POOL)
        params = model.init_params(seed=4)
        out, _ = model.forward(params, random_state(rng), model.zero_hidden())
        assert out.action.shape == (4,)

    def test_nonfinite_params_detected(self):
        rng = np.random.default_rng(108)
        model = StudentModel(SMALL)
        params = model.init_params(seed=5)
        params[10] = np.inf
        with pytest.raises(NumericError, match="step 0"):
            model.forward_window(params, [random_state(rng)], model.zero_hidden())

    def test_bad_configs_rejected(self):
        with pytest.raises(ConfigError):
            StudentModel(StudentConfig(patch_size=30))  # not divisible by 2^3
        with pytest.raises(ConfigError):
            StudentModel(StudentConfig(encoder="mlp"))
        with pytest.raises(ConfigError):
            StudentModel(StudentConfig(encoder="pool", patch_size=30, pool_factor=4))


def window_sum_loss(model, states, h0, cmu, cv):
    """Scalar loss linear in every output: sum(cmu * mu) + sum(cv * v)."""

    def fn(params):
        mus, values, _, caches = model.forward_window(params, states, h0)
        loss = float(np.sum(cmu * mus) + np.sum(cv * values))
        grad = model.backward_window(params, caches, cmu, cv)
        return loss, grad

    return fn


class TestGradients:
    def test_linear_closed_form(self):
        """Plain linear map with squared loss: grad must equal 2(w.x - y) x."""
        rng = np.random.default_rng(111)
        x = rng.normal(size=8)
        y = 1.7

        def loss_fn(w):
            r = float(w @ x - y)
            return r * r, 2.0 * r * x

        w0 = rng.normal(size=8)
        report = grad_check(w0, loss_fn, eps=1e-4, samples=8)
        assert report.max_rel_error < 1e-7

    def test_constant_loss_zero_grad(self):
        def loss_fn(w):
            return 3.5, np.zeros_like(w)

        report = grad_check(np.ones(10), loss_fn, samples=10)
        assert report.max_rel_error == 0.0

    @pytest.mark.parametrize("config", [SMALL, POOL], ids=["conv", "pool"])
    def test_full_model_window_fd(self, config):
        rng = np.random.default_rng(112)
        model = StudentModel(config)
        params = model.init_params(seed=7)
        states = [random_state(rng, config.patch_size) for _ in range(3)]
        cmu = rng.normal(size=(3, 4))
        cv = rng.normal(size=3)
        fn = window_sum_loss(model, states, model.zero_hidden(), cmu, cv)
        report = grad_check(params, fn, eps=1e-4, samples=60, rng=rng, name_of=model.param_name)
        assert report.max_rel_error < 1e-4, str(report)

    def test_bptt_couples_steps(self):
        # Gradient at step-0 parameters must reflect step-2 outputs: zeroing
        # the later steps' output weights changes the recurrent weight grads.
        rng = np.random.default_rng(113)
        model = StudentModel(SMALL)
        params = model.init_params(seed=9)
        states = [random_state(rng) for _ in range(3)]
        cv = np.zeros(3)
        cmu_all = np.ones((3, 4))
        cmu_last = np.zeros((3, 4))
        cmu_last[2] = 1.0
        _, g_all = window_sum_loss(model, states, model.zero_hidden(), cmu_all, cv)(params)
        _, g_last = window_sum_loss(model, states, model.zero_hidden(), cmu_last, cv)(params)
        wh = slice(*model._slices["rnn.Wh"][0].indices(model.n_params))
        assert np.any(g_last[wh] != 0.0)  # earlier steps reached through time
        assert not np.allclose(g_all[wh], g_last[wh])

    def test_report_names_worst_coordinate(self):
        rng = np.random.default_rng(114)
        model = StudentModel(SMALL)
        params = model.init_params(seed=1)
        states = [random_state(rng)]
        fn = window_sum_loss(model, states, model.zero_hidden(), np.ones((1, 4)), np.ones(1))
        report = grad_check(params, fn, samples=5, rng=rng, name_of=model.param_name)
        assert isinstance(report, GradCheckReport)
        assert "[" in report.worst_name and "]" in report.worst_name


class TestParamNames:
    def test_partition_covers_vector(self):
        model = StudentModel(SMALL)
        assert model.param_name(0).startswith("enc.conv0.W")
        assert model.param_name(model.n_params - 1).startswith("value.b")
        with pytest.raises(IndexError):
            model.param_name(model.n_params)

    def test_views_are_views(self):
        model = StudentModel(SMALL)
        params = model.init_params(seed=1)
        model.view(params, "policy.b")[:] = 7.0
        assert np.all(params[model._slices["policy.b"][0]] == 7.0)


class TestHiddenSchedule:
    def test_cold_start_is_zero(self):
        model = StudentModel(SMALL)
        sched = HiddenSchedule(model, period=32)
        h = sched.before(1)
        assert np.all(h.h == 0.0) and np.all(h.c == 0.0)

    def test_reset_at_period_boundary(self):
        rng = np.random.default_rng(121)
        model = StudentModel(SMALL)
        params = model.init_params(seed=11)
        sched = HiddenSchedule(model, period=32)
        snapshot = None
        seen = {}
        state = random_state(rng)
        for t in range(1, 35):
            h = sched.before(t)
            out, h_next = model.forward(params, state, h)
            sched.after(t, h_next)
            seen[t] = h
            if t == 1:
                snapshot = h_next
        # frames 2..32 evolve freely; frame 33 restarts from the t=1 snapshot
        assert not np.array_equal(seen[32].h, snapshot.h)
        np.testing.assert_array_equal(seen[33].h, snapshot.h)
        np.testing.assert_array_equal(seen[33].c, snapshot.c)
        assert not np.array_equal(seen[34].h, snapshot.h)

    def test_snapshot_replayed_every_period(self):
        rng = np.random.default_rng(122)
        model = StudentModel(SMALL)
        params = model.init_params(seed=12)
        sched = HiddenSchedule(model, period=4)
        state = random_state(rng)
        fetched = {}
        for t in range(1, 14):
            h = sched.before(t)
            fetched[t] = h
            _, h_next = model.forward(params, state, h)
            sched.after(t, h_next)
        snap = fetched[2]  # state entering step 2 is the post-step-1 snapshot
        for t in (5, 9, 13):
            np.testing.assert_array_equal(fetched[t].h, snap.h)


class TestCheckpoints:
    def test_round_trip_bitwise(self, tmp_path):
        model = StudentModel(SMALL)
        params = model.init_params(seed=13)
        p = str(tmp_path / "m.ckpt")
        save_params(p, SMALL, params)
        back = load_params(p, SMALL)
        assert back.tobytes() == params.tobytes()

    def test_fingerprint_mismatch(self, tmp_path):
        model = StudentModel(SMALL)
        p = str(tmp_path / "m.ckpt")
        save_params(p, SMALL, model.init_params(seed=1))
        other = StudentConfig(patch_size=16, conv_channels=(4, 8), fc_dim=16, hidden_dim=16)
        with pytest.raises(CheckpointError, match="different architecture"):
            load_params(p, other)

    def test_empty_file_rejected(self, tmp_path):
        p = tmp_path / "empty.ckpt"
        p.write_bytes(b"")
        with pytest.raises(ParseError):
            load_params(str(p), SMALL)

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.ckpt"
        p.write_bytes(b"NOTACKPT" + b"\x00" * 64)
        with pytest.raises(ParseError, match="magic"):
            load_params(str(p), SMALL)

    def test_truncated_payload_rejected(self, tmp_path):
        model = StudentModel(SMALL)
        p = str(tmp_path / "m.ckpt")
        save_params(p, SMALL, model.init_params(seed=1))
        blob = open(p, "rb").read()
        with open(p, "wb") as fh:
            fh.write(blob[:-16])
        with pytest.raises(ParseError):
            load_params(p, SMALL)

    def test_nonfinite_params_refused(self, tmp_path):
        model = StudentModel(SMALL)
        params = model.init_params(seed=1)
        params[0] = np.nan
        with pytest.raises(NumericError):
            save_params(str(tmp_path / "x.ckpt"), SMALL, params)

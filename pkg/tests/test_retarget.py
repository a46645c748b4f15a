import numpy as np
import pytest

from fabricore.errors import ConfigurationError, OptimizationError
from fabricore.retarget import (
    AdamParams,
    HumanGraspTrace,
    PcaBasis,
    Q_REG_POWER,
    Q_REG_PRECISION,
    RetargetConfig,
    adam_minimize,
    fit_pca,
    load_dataset,
    load_trace,
    retarget_loss,
    retarget_trace,
    saturate,
    saturate_derivative,
    save_dataset,
    save_trace,
    synthetic_traces,
)


class TestSaturate:
    lower = np.array([-1.0, 0.0, -2.0])
    upper = np.array([1.0, 2.0, 0.5])

    def test_midpoint_at_zero(self):
        np.testing.assert_allclose(
            saturate(np.zeros(3), self.lower, self.upper), 0.5 * (self.lower + self.upper), atol=1e-15
        )

    def test_limits_at_infinity(self):
        np.testing.assert_allclose(saturate(np.full(3, 50.0), self.lower, self.upper), self.upper, atol=1e-12)
        np.testing.assert_allclose(saturate(np.full(3, -50.0), self.lower, self.upper), self.lower, atol=1e-12)

    def test_derivative_at_zero(self):
        np.testing.assert_allclose(
            saturate_derivative(np.zeros(3), self.lower, self.upper), 0.5 * (self.upper - self.lower), atol=1e-15
        )

    def test_strictly_interior_and_monotone(self, rng):
        # tanh saturates to exactly ±1 in float64 past |q| ~ 19; strict
        # interiority holds on the domain the optimizer actually visits
        q = rng.uniform(-15, 15, (200, 3))
        out = saturate(q, self.lower, self.upper)
        assert np.all(out > self.lower) and np.all(out < self.upper)
        for j in range(3):
            grid = np.linspace(-5, 5, 100)
            vals = saturate(np.stack([grid] * 3, axis=1), self.lower, self.upper)[:, j]
            assert np.all(np.diff(vals) > 0)


class TestRetargetLoss:
    def test_perfect_tracking_zero(self, hand_model):
        # gamma=1, lambda=0: loss is exactly the tracking error; evaluate
        # at a configuration and feed its own fingertips (scaled back) as x_h
        from fabricore.kinematics import forward_points

        cfg = RetargetConfig(reg_weight=0.0)
        q_free = np.full(16, 0.3)
        q_r = saturate(q_free, hand_model.lower_limits, hand_model.upper_limits)
        tips = forward_points(hand_model, q_r, cfg.fingertip_points).reshape(-1)
        loss = retarget_loss(q_free, tips / cfg.scale, 1.0, cfg, hand_model)
        assert loss == pytest.approx(0.0, abs=1e-15)

    def test_gamma_zero_is_closure_error(self, hand_model):
        from fabricore.kinematics import forward_points

        cfg = RetargetConfig(reg_weight=0.0)
        q_free = np.zeros(16)
        q_r = saturate(q_free, hand_model.lower_limits, hand_model.upper_limits)
        tips = forward_points(hand_model, q_r, cfg.fingertip_points).reshape(-1)
        x_c = np.tile(cfg.focal("power"), 4)
        expected = float(np.sum((tips - x_c) ** 2))
        loss = retarget_loss(q_free, np.zeros(12), 0.0, cfg, hand_model, grip_type="power")
        assert loss == pytest.approx(expected, rel=1e-12)

    def test_regularizer_vanishes_at_q_reg(self, hand_model):
        cfg = RetargetConfig(reg_weight=5.0)
        # invert the saturation at q_reg to get the free variable
        lo, hi = hand_model.lower_limits, hand_model.upper_limits
        frac = np.clip((Q_REG_PRECISION - lo) / (hi - lo), 1e-9, 1 - 1e-9)
        q_free = np.arctanh(2 * frac - 1)
        l_with = retarget_loss(q_free, np.zeros(12), 1.0, cfg, hand_model)
        cfg0 = RetargetConfig(reg_weight=0.0)
        l_without = retarget_loss(q_free, np.zeros(12), 1.0, cfg0, hand_model)
        assert l_with == pytest.approx(l_without, abs=1e-10)

    def test_gamma_validated(self, hand_model):
        with pytest.raises(ConfigurationError):
            retarget_loss(np.zeros(16), np.zeros(12), 1.5, RetargetConfig(), hand_model)


class TestAdam:
    def test_quadratic_scalar(self):
        res = adam_minimize(lambda x: float((x[0] - 3.0) ** 2), np.zeros(1), AdamParams(lr=0.1, iterations=500))
        assert abs(res.x[0] - 3.0) < 1e-3

    def test_quadratic_vector_converges(self):
        res = adam_minimize(lambda x: float(x @ x), np.full(4, 2.0), AdamParams(lr=0.1, iterations=300))
        assert np.linalg.norm(res.x) < 0.02
        assert res.loss < 5e-4

    def test_stays_at_minimum(self):
        res = adam_minimize(lambda x: float(x @ x), np.zeros(3), AdamParams(lr=0.1, iterations=50))
        np.testing.assert_allclose(res.x, np.zeros(3), atol=1e-12)

    def test_nonfinite_loss_aborts(self):
        with pytest.raises(OptimizationError):
            adam_minimize(lambda x: float("nan"), np.zeros(2), AdamParams(iterations=5))

    def test_returns_best_iterate(self):
        # explicit gradient so loss_fn only sees the iterates; the returned
        # loss must match the best of them even with an overshooting lr
        calls = []

        def loss(x):
            v = float((x[0] - 1.0) ** 2)
            calls.append(v)
            return v

        res = adam_minimize(
            loss, np.zeros(1), AdamParams(lr=0.8, iterations=60), grad_fn=lambda x: 2.0 * (x - 1.0)
        )
        assert res.loss == pytest.approx(min(calls), abs=1e-15)


class TestRetargetTrace:
    def test_blend_schedule(self):
        # n=2: gamma_0 = 1 - 1/2 = 0.5, gamma_1 = 0
        n = 2
        gammas = [1.0 - (i + 1) / n for i in range(n)]
        assert gammas == [0.5, 0.0]

    def test_constant_trace_warm_start_stability(self, hand_model):
        pts = np.tile(synthetic_traces(3, 1, 8)[0].points[4], (40, 1))
        trace = HumanGraspTrace(pts, "power")
        cfg = RetargetConfig(adam=AdamParams(iterations=120))
        qs = retarget_trace(trace, hand_model, cfg)
        deltas = np.abs(np.diff(qs, axis=0)).max()
        assert deltas < 0.05

    def test_output_within_limits(self, hand_model):
        trace = synthetic_traces(5, 2, 10)[1]
        qs = retarget_trace(trace, hand_model, RetargetConfig(adam=AdamParams(iterations=60)))
        assert qs.shape == (10, 16)
        assert np.all(qs > hand_model.lower_limits) and np.all(qs < hand_model.upper_limits)

    def test_final_frame_closes_grip(self, hand_model):
        # at gamma=0 the objective is pure closure: fingertips end nearer
        # the focal point than they started
        from fabricore.kinematics import forward_points

        cfg = RetargetConfig(adam=AdamParams(iterations=150))
        trace = synthetic_traces(11, 2, 12)[0]
        assert trace.grip_type == "power"
        qs = retarget_trace(trace, hand_model, cfg)
        x_c = np.tile(cfg.focal("power"), 4)
        tips_first = forward_points(hand_model, qs[0], cfg.fingertip_points).reshape(-1)
        tips_last = forward_points(hand_model, qs[-1], cfg.fingertip_points).reshape(-1)
        assert np.linalg.norm(tips_last - x_c) < np.linalg.norm(tips_first - x_c)


class TestFitPca:
    def test_rank_one_line(self, rng):
        direction = rng.standard_normal(16)
        direction /= np.linalg.norm(direction)
        data = np.outer(rng.standard_normal(200), direction) + rng.uniform(-1, 1, 16)
        basis = fit_pca(data, k=5)
        assert basis.explained_variance_ratio == pytest.approx(1.0, abs=1e-12)
        overlap = abs(basis.components[0] @ direction)
        assert overlap == pytest.approx(1.0, abs=1e-10)

    def test_isotropic_gaussian_ratio(self):
        rng = np.random.default_rng(7)
        data = rng.standard_normal((100_000, 16))
        basis = fit_pca(data, k=5)
        assert basis.explained_variance_ratio == pytest.approx(5.0 / 16.0, abs=0.01)

    def test_orthonormal_rows(self, rng):
        data = rng.standard_normal((300, 16)) @ rng.standard_normal((16, 16))
        basis = fit_pca(data, k=5)
        np.testing.assert_allclose(basis.components @ basis.components.T, np.eye(5), atol=1e-10)
        assert np.all(np.diff(basis.eigenvalues) <= 1e-12)
        assert basis.eigenvalues.min() >= -1e-10

    def test_reconstruction_error_identity(self, rng):
        data = rng.standard_normal((500, 16)) @ rng.standard_normal((16, 16))
        k = 5
        basis = fit_pca(data, k=k)
        centered = data - basis.mean
        recon = centered @ basis.components.T @ basis.components
        mse = float(np.mean(np.sum((centered - recon) ** 2, axis=1)))
        # eigendecomposition identity: mean residual power = sum of the
        # discarded eigenvalues of the (1/N)-normalized covariance
        evals = np.linalg.eigvalsh(centered.T @ centered / data.shape[0])[::-1]
        assert mse == pytest.approx(float(evals[k:].sum()), rel=1e-8)

    def test_projection_never_increases_variance(self, rng):
        data = rng.standard_normal((400, 16)) @ rng.standard_normal((16, 16))
        basis = fit_pca(data, k=5)
        centered = data - basis.mean
        projected = centered @ basis.components.T
        assert projected.var(axis=0).sum() <= centered.var(axis=0).sum() + 1e-9

    def test_needs_enough_samples(self, rng):
        with pytest.raises(ConfigurationError):
            fit_pca(rng.standard_normal((3, 16)), k=5)

    def test_save_load_roundtrip(self, tmp_path, rng):
        basis = fit_pca(rng.standard_normal((100, 16)), k=5)
        basis.save(tmp_path / "b.json")
        loaded = PcaBasis.load(tmp_path / "b.json")
        np.testing.assert_array_equal(loaded.components, basis.components)
        np.testing.assert_array_equal(loaded.mean, basis.mean)


class TestBundledPipeline:
    def test_q_reg_vectors(self):
        np.testing.assert_array_equal(
            Q_REG_PRECISION, [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1.0, 0.75, 0, 0]
        )
        np.testing.assert_array_equal(
            Q_REG_POWER, [0, 1, 1, 1, 0, 1, 1, 1, 0, 1, 1, 1, 1.0, 0.75, 0, 0]
        )

    def test_bundled_traces_and_basis(self):
        from fabricore.scenario import data_path

        basis = PcaBasis.load(data_path("hand/basis.json"))
        assert basis.components.shape == (5, 16)
        np.testing.assert_allclose(basis.components @ basis.components.T, np.eye(5), atol=1e-10)
        assert basis.explained_variance_ratio >= 0.90
        trace = load_trace(data_path("traces/trace_000.json"))
        assert trace.points.shape[1] == 12

    def test_trace_roundtrip(self, tmp_path):
        trace = synthetic_traces(1, 1, 6)[0]
        save_trace(trace, tmp_path / "t.json")
        loaded = load_trace(tmp_path / "t.json")
        np.testing.assert_array_equal(loaded.points, trace.points)
        assert loaded.grip_type == trace.grip_type

    def test_dataset_roundtrip(self, tmp_path, rng):
        data = rng.standard_normal((20, 16))
        save_dataset(data, tmp_path / "d.csv")
        np.testing.assert_array_equal(load_dataset(tmp_path / "d.csv"), data)

    def test_trace_validation(self):
        with pytest.raises(ConfigurationError):
            HumanGraspTrace(np.zeros((1, 12)), "power")
        with pytest.raises(ConfigurationError):
            HumanGraspTrace(np.zeros((5, 12)), "pinch")

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapeforge.flow import (
    ConstantField,
    FlowError,
    IntegrationError,
    StepSchedule,
    forward_noise,
    integrate,
    make_schedule,
)
from shapeforge.oracle import MixturePrior, OracleField


class TestForwardNoise:
    def test_t_zero_returns_data(self):
        z0 = np.arange(6.0)
        eps = np.ones(6)
        assert np.array_equal(forward_noise(z0, eps, 0.0), z0)

    def test_t_one_returns_noise(self):
        z0 = np.arange(6.0)
        eps = -np.ones(6)
        assert np.array_equal(forward_noise(z0, eps, 1.0), eps)

    def test_midpoint(self):
        assert forward_noise(np.zeros(1), np.full(1, 2.0), 0.5)[0] == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(FlowError):
            forward_noise(np.zeros(3), np.zeros(4), 0.5)

    @given(st.floats(0.0, 1.0))
    @settings(max_examples=30, deadline=None)
    def test_interpolation_bound(self, t):
        z0 = np.array([1.0, -2.0, 0.5])
        eps = np.array([0.3, 0.3, -4.0])
        zt = forward_noise(z0, eps, t)
        hi = np.maximum(z0, eps)
        lo = np.minimum(z0, eps)
        assert np.all(zt <= hi + 1e-12) and np.all(zt >= lo - 1e-12)


class TestSchedule:
    def test_identity_rescale(self):
        sched = make_schedule(10, 1.0)
        np.testing.assert_allclose(sched.times, 1.0 - np.arange(11) / 10, atol=1e-15)

    def test_lambda3_midpoint(self):
        assert make_schedule(2, 3.0).times[1] == pytest.approx(0.75, abs=1e-15)

    @given(st.integers(1, 300), st.floats(0.1, 20.0))
    @settings(max_examples=50, deadline=None)
    def test_fixed_points(self, steps, lam):
        sched = make_schedule(steps, lam)
        assert sched.times[0] == 1.0
        assert sched.times[-1] == 0.0
        assert np.all(np.diff(sched.times) < 0)

    def test_step_sum_is_one(self):
        sched = make_schedule(25, 3.0)
        assert abs(np.sum(-np.diff(sched.times)) - 1.0) <= 1e-12

    def test_invalid_arguments(self):
        with pytest.raises(FlowError):
            make_schedule(0, 3.0)
        with pytest.raises(FlowError):
            make_schedule(10, 0.0)

    def test_endpoints_enforced(self):
        with pytest.raises(FlowError):
            StepSchedule(steps=2, rescale=1.0, times=np.array([0.9, 0.5, 0.0]))


class _BadField:
    def evaluate(self, z, t, condition=None):
        return np.full_like(np.asarray(z, dtype=float), np.nan) if t < 0.5 else np.zeros_like(z)


class TestIntegrate:
    def test_constant_field_telescopes(self):
        sched = make_schedule(17, 2.5)
        z = np.array([3.0, -1.0, 0.25])
        out = integrate(z, ConstantField(np.array([1.0, 2.0, -0.5])), sched)
        np.testing.assert_allclose(out, z - [1.0, 2.0, -0.5], atol=1e-12)

    @pytest.mark.parametrize("steps", [5, 25, 200])
    def test_point_mass_oracle_exact(self, steps):
        prior = MixturePrior([1.0], [[1.5, -2.0, 0.5]], [0.0])
        sched = make_schedule(steps, 3.0)
        rng = np.random.default_rng(0)
        for _ in range(10):
            z1 = rng.standard_normal(3)
            out = integrate(z1, OracleField(prior), sched)
            np.testing.assert_allclose(out, prior.means[0], atol=1e-9)

    def test_zero_steps_returns_start(self):
        sched = make_schedule(25, 3.0)
        z = np.array([1.0, 2.0])
        out = integrate(z, ConstantField(np.array([9.0, 9.0])), sched, start_index=25)
        assert np.array_equal(out, z)
        out[0] = 99.0
        assert z[0] == 1.0  # no aliasing

    def test_non_finite_field_aborts_with_step(self):
        sched = make_schedule(10, 1.0)
        with pytest.raises(IntegrationError) as err:
            integrate(np.zeros(2), _BadField(), sched)
        assert err.value.step >= 5

    def test_start_index_bounds(self):
        sched = make_schedule(10, 1.0)
        with pytest.raises(FlowError):
            integrate(np.zeros(2), ConstantField(np.zeros(2)), sched, start_index=11)

    def test_refinement_convergence(self):
        prior = MixturePrior([0.5, 0.5], [[2.0, 0.0], [-2.0, 0.0]], [0.6, 0.6])
        field = OracleField(prior)
        rng = np.random.default_rng(7)
        coarse_gap, fine_gap = [], []
        starts = rng.standard_normal((64, 2))
        for z1 in starts:
            ends = {
                steps: integrate(z1, field, make_schedule(steps, 3.0))
                for steps in (50, 100, 200, 400)
            }
            coarse_gap.append(np.linalg.norm(ends[50] - ends[100]))
            fine_gap.append(np.linalg.norm(ends[200] - ends[400]))
        assert np.mean(fine_gap) <= np.mean(coarse_gap)

    def test_shift_equivariance(self):
        # shifting every mixture mean by delta shifts the endpoint by delta;
        # the start state is unchanged since the interpolation weights noise
        # fully at t=1 (Euler preserves z'(t_i) = z(t_i) + (1 - t_i) delta)
        base = MixturePrior([0.4, 0.6], [[1.0, -1.0], [-1.0, 2.0]], [0.5, 0.8])
        delta = np.array([3.0, -4.0])
        shifted = MixturePrior([0.4, 0.6], base.means + delta, [0.5, 0.8])
        sched = make_schedule(40, 3.0)
        rng = np.random.default_rng(9)
        for _ in range(10):
            z1 = rng.standard_normal(2)
            a = integrate(z1, OracleField(base), sched)
            b = integrate(z1, OracleField(shifted), sched)
            np.testing.assert_allclose(b, a + delta, atol=1e-6)

    def test_batched_rows_match_single(self):
        prior = MixturePrior([1.0], [[0.5, 0.5]], [1.0])
        sched = make_schedule(20, 3.0)
        rng = np.random.default_rng(3)
        batch = rng.standard_normal((4, 2))
        joint = integrate(batch, OracleField(prior), sched)
        for i in range(4):
            np.testing.assert_allclose(joint[i], integrate(batch[i], OracleField(prior), sched), atol=1e-12)

    def test_progress_callback(self):
        sched = make_schedule(8, 1.0)
        seen = []
        integrate(np.zeros(2), ConstantField(np.zeros(2)), sched, start_index=3, on_step=lambda d, t: seen.append((d, t)))
        assert seen == [(i, 5) for i in range(1, 6)]

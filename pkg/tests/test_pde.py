import math

import numpy as np
import pytest

from bpinn.net import Jet2
from bpinn.pde import (
    NOISE_PRESETS,
    CollocationSet,
    DataSet,
    PdeSpec,
    UnsupportedProblemError,
    generate_data,
    heat_spec,
    sample_collocation,
)


@pytest.fixture(scope="module")
def spec():
    return heat_spec()


class TestHeatSpec:
    def test_geometry(self, spec):
        assert spec.d == 1
        assert spec.volume == pytest.approx(math.pi)
        np.testing.assert_allclose(spec.center, [0.5, math.pi / 2])

    def test_exact_solution_has_zero_residual(self, spec):
        pts = sample_collocation(spec, N=200, seed=1).interior
        jet = spec.analytic_solution(spec.true_theta).jet(pts)
        np.testing.assert_allclose(spec.residual(jet, 0.5, pts), 0.0, atol=1e-14)
        assert np.abs(spec.residual(jet, 0.7, pts)).max() > 0.01

    def test_boundary_targets_hold_for_exact_solution(self, spec):
        col = sample_collocation(spec, N=10, B=50, seed=2)
        u = spec.analytic_solution(spec.true_theta)
        for seg in spec.boundary_segments:
            pts = col.boundary[seg.name]
            np.testing.assert_allclose(u.value(pts), seg.target(pts), atol=1e-15)

    def test_operators(self, spec):
        jet = Jet2(np.array([1.0]), np.array([2.0]), np.array([3.0]), np.array([4.0]))
        np.testing.assert_allclose(spec.apply_h0(jet), [2.0])
        np.testing.assert_allclose(spec.apply_h1(jet), [[-4.0]])

    def test_other_length_drops_analytic_solution(self):
        assert heat_spec(length=2.0).analytic_solution is None
        with pytest.raises(UnsupportedProblemError):
            generate_data(heat_spec(length=2.0), 10, 0.1, 0)

    def test_operator_order_checked(self):
        with pytest.raises(ValueError, match="order"):
            PdeSpec("bad", ((0, 1), (0, 1)), [0, 0, 0, 1], [[0, 1, 0, 0]], lambda p: 0, (), [0.0], order=1)


class TestData:
    def test_grid_and_noise(self, spec):
        d = generate_data(spec, 50, 0.025, seed=3)
        assert d.n == 50
        assert np.all(spec.contains(d.sensors))
        clean = spec.analytic_solution(spec.true_theta).value(d.sensors)
        resid = d.observations - clean
        assert 0.01 < resid.std() < 0.04

    def test_single_sensor_at_center(self, spec):
        d = generate_data(spec, 1, 0.0, seed=0)
        np.testing.assert_allclose(d.sensors[0], spec.center)

    def test_zero_noise_is_exact(self, spec):
        d = generate_data(spec, 20, 0.0, seed=0)
        np.testing.assert_allclose(d.observations, spec.analytic_solution(spec.true_theta).value(d.sensors))

    def test_same_seed_same_data(self, spec):
        a = generate_data(spec, 30, 0.1, seed=9)
        b = generate_data(spec, 30, 0.1, seed=9)
        np.testing.assert_array_equal(a.observations, b.observations)

    @pytest.mark.parametrize("n, sigma", [(0, 0.1), (5, -1.0)])
    def test_rejects_bad_inputs(self, spec, n, sigma):
        with pytest.raises(ValueError):
            generate_data(spec, n, sigma, 0)

    def test_presets(self):
        assert NOISE_PRESETS[10] == 0.025
        assert NOISE_PRESETS[25] == pytest.approx(2.5 * NOISE_PRESETS[10])

    def test_csv_round_trip(self, spec, tmp_path):
        d = generate_data(spec, 12, 0.05, seed=1)
        d.to_csv(tmp_path / "d.csv")
        back = DataSet.from_csv(tmp_path / "d.csv", 0.05)
        np.testing.assert_array_equal(back.sensors, d.sensors)
        np.testing.assert_array_equal(back.observations, d.observations)

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            DataSet(np.zeros((3, 2)), np.zeros(2), 0.1)


class TestCollocation:
    def test_counts_and_support(self, spec):
        col = sample_collocation(spec, N=500, B=64, seed=4)
        assert col.N == 500 and col.B == 64
        assert np.all(spec.contains(col.interior))
        np.testing.assert_array_equal(col.boundary["x=0"][:, 1], 0.0)
        np.testing.assert_array_equal(col.boundary["x=L"][:, 1], math.pi)
        np.testing.assert_array_equal(col.boundary["t=0"][:, 0], 0.0)

    def test_space_faces_share_times(self, spec):
        col = sample_collocation(spec, N=5, B=16, seed=5)
        np.testing.assert_array_equal(col.boundary["x=0"][:, 0], col.boundary["x=L"][:, 0])

    def test_uniform_mean(self, spec):
        col = sample_collocation(spec, N=40_000, seed=6)
        np.testing.assert_allclose(col.interior.mean(axis=0), spec.center, atol=0.02)

    def test_csv_round_trip(self, spec, tmp_path):
        col = sample_collocation(spec, N=20, B=4, seed=7)
        col.to_csv(tmp_path / "c.csv")
        back = CollocationSet.from_csv(tmp_path / "c.csv")
        np.testing.assert_array_equal(back.interior, col.interior)
        for k in col.boundary:
            np.testing.assert_array_equal(back.boundary[k], col.boundary[k])

    def test_rejects_empty(self, spec):
        with pytest.raises(ValueError):
            sample_collocation(spec, N=0)

"""Rigid-body field, implicit midpoint, dataset generation, windowing."""

import math

import numpy as np
import pytest

from voltra import dynamics
from voltra.dynamics import (
    PAPER_COEFFS,
    RigidBodyParams,
    Trajectory,
    generate_dataset,
    ic_grid,
    implicit_midpoint_step,
    initial_state,
    integrate,
    make_windows,
    moments_to_coeffs,
    rigid_body_field,
    rigid_body_jacobian,
)
from voltra.errors import NewtonDivergedError, TrajectoryTooShortError, ZeroMomentError
from voltra.rng import SplitMix64


class TestField:
    def test_equilibrium(self):
        np.testing.assert_array_equal(
            rigid_body_field(PAPER_COEFFS, np.array([1.0, 0.0, 0.0])), np.zeros(3)
        )

    def test_unit_point_with_table_coefficients(self):
        out = rigid_body_field(PAPER_COEFFS, np.array([1.0, 1.0, 1.0]))
        np.testing.assert_allclose(out, [1.0, -0.5, -0.5])

    def test_divergence_is_exactly_zero_analytically(self):
        # each component is independent of its own variable, so the diagonal
        # of the Jacobian is identically zero
        stream = SplitMix64(1)
        for _ in range(20):
            z = stream.uniforms(3, -2, 2)
            jac = rigid_body_jacobian(PAPER_COEFFS, z)
            assert jac[0, 0] == 0.0 and jac[1, 1] == 0.0 and jac[2, 2] == 0.0

    def test_divergence_central_difference(self):
        stream = SplitMix64(2)
        h = 1e-5
        coeffs = RigidBodyParams(0.7, -1.3, 0.6)
        for _ in range(100):
            z = stream.uniforms(3, -2, 2)
            div = 0.0
            for i in range(3):
                e = np.zeros(3)
                e[i] = h
                div += (
                    rigid_body_field(coeffs, z + e)[i] - rigid_body_field(coeffs, z - e)[i]
                ) / (2 * h)
            assert abs(div) < 1e-8

    def test_jacobian_matches_central_differences(self):
        z = np.array([0.3, -0.8, 0.5])
        h = 1e-6
        jac = rigid_body_jacobian(PAPER_COEFFS, z)
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            col = (rigid_body_field(PAPER_COEFFS, z + e) - rigid_body_field(PAPER_COEFFS, z - e)) / (2 * h)
            np.testing.assert_allclose(jac[:, j], col, atol=1e-9)


class TestMoments:
    def test_table_moments(self):
        p = moments_to_coeffs(1.0, 2.0, 2.0 / 3.0)
        np.testing.assert_allclose([p.a, p.b, p.c], [1.0, -0.5, -0.5])

    def test_spherical_top(self):
        p = moments_to_coeffs(1.0, 1.0, 1.0)
        assert (p.a, p.b, p.c) == (0.0, 0.0, 0.0)

    def test_symmetric_body(self):
        p = moments_to_coeffs(2.0, 2.0, 1.0)
        np.testing.assert_allclose([p.a, p.b, p.c], [0.5, -0.5, 0.0])

    def test_zero_moment_rejected(self):
        with pytest.raises(ZeroMomentError):
            moments_to_coeffs(0.0, 1.0, 1.0)


class TestImplicitMidpoint:
    def test_equilibrium_is_fixed_point(self):
        z = np.array([1.0, 0.0, 0.0])
        for h in (0.1, 0.5, 2.0):
            np.testing.assert_allclose(implicit_midpoint_step(PAPER_COEFFS, z, h), z, atol=1e-12)

    def test_small_step_consistency(self):
        z = np.array([0.5, 0.6, -0.7])
        moved = implicit_midpoint_step(PAPER_COEFFS, z, 1e-8)
        assert np.abs(moved - z).max() < 1e-7

    def test_norm_conservation_500_steps(self):
        z0 = initial_state("x", 1.1)
        traj = integrate(PAPER_COEFFS, z0, 0.2, 500)
        norms = np.sqrt((traj.states**2).sum(axis=1))
        assert np.abs(norms - 1.0).max() < 1e-10

    def test_norm_conservation_many_seeds(self):
        stream = SplitMix64(5)
        for _ in range(20):
            v = stream.uniform(0.1, 2 * math.pi)
            z0 = initial_state("x" if stream.uniform() < 0.5 else "y", v)
            traj = integrate(PAPER_COEFFS, z0, 0.2, 60)
            norms = np.sqrt((traj.states**2).sum(axis=1))
            assert np.abs(norms - 1.0).max() < 1e-10

    def test_time_reversibility(self):
        z = initial_state("y", 0.8)
        forward = implicit_midpoint_step(PAPER_COEFFS, z, 0.2)
        back = implicit_midpoint_step(PAPER_COEFFS, forward, -0.2)
        assert np.abs(back - z).max() < 1e-9

    def test_newton_divergence_reported(self):
        with pytest.raises(NewtonDivergedError):
            implicit_midpoint_step(PAPER_COEFFS, np.array([5.0, 4.0, 3.0]), 1e6, max_iter=4)

    def test_zero_steps(self):
        traj = integrate(PAPER_COEFFS, initial_state("x", 1.0), 0.2, 0)
        assert len(traj) == 1


class TestGrid:
    def test_default_grid_has_619_values(self):
        grid = ic_grid()
        assert grid.shape == (619,)
        assert grid[0] == pytest.approx(0.1)
        assert grid[-1] == pytest.approx(6.28)

    def test_desk_grid_has_63_values(self):
        assert ic_grid(step=0.1).shape == (63,)

    def test_grid_spacing_uniform(self):
        grid = ic_grid(step=0.01)
        np.testing.assert_allclose(np.diff(grid), 0.01, rtol=1e-12)

    def test_initial_states_on_unit_sphere(self):
        for v in ic_grid(step=0.1):
            for family in ("x", "y"):
                assert np.linalg.norm(initial_state(family, v)) == pytest.approx(1.0)


class TestDataset:
    def test_desk_scale_shape(self):
        records = generate_dataset(grid_step=0.1)
        assert len(records) == 126
        assert all(len(r.trajectory) == 61 for r in records)

    def test_order_is_grid_major_with_family_pairs(self):
        records = generate_dataset(grid_step=1.5, t_final=0.4)
        families = [r.family for r in records]
        assert families[:4] == ["x", "y", "x", "y"]
        assert records[0].v == records[1].v

    def test_t_final_zero_gives_single_point(self):
        records = generate_dataset(grid_step=1.5, t_final=0.0)
        assert all(len(r.trajectory) == 1 for r in records)

    def test_determinism_bitwise(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        dynamics.write_dataset(a, generate_dataset(grid_step=1.0, t_final=2.0))
        dynamics.write_dataset(b, generate_dataset(grid_step=1.0, t_final=2.0))
        for name in sorted(p.name for p in a.iterdir()):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_csv_roundtrip_exact(self, tmp_path):
        traj = integrate(PAPER_COEFFS, initial_state("x", 1.1), 0.2, 10)
        path = tmp_path / "t.csv"
        dynamics.write_trajectory_csv(path, traj)
        loaded = dynamics.read_trajectory_csv(path)
        np.testing.assert_array_equal(loaded.states, traj.states)
        np.testing.assert_array_equal(loaded.times, traj.times)

    def test_write_and_load_dataset(self, tmp_path):
        records = generate_dataset(grid_step=2.0, t_final=1.0)
        dynamics.write_dataset(tmp_path, records)
        loaded = dynamics.load_dataset(tmp_path)
        assert len(loaded) == len(records)
        for got, want in zip(loaded, records):
            assert got.family == want.family
            assert got.v == want.v
            np.testing.assert_array_equal(got.trajectory.states, want.trajectory.states)


class TestWindows:
    def make_trajectory(self, n):
        states = SplitMix64(9).uniforms(3 * n, -1, 1).reshape(n, 3)
        return Trajectory(0.2 * np.arange(n), states)

    def test_61_points_gives_56_transformer_windows(self):
        batch = make_windows([self.make_trajectory(61)], seq_len=3, shift=3)
        assert len(batch) == 56
        assert batch.inputs.shape == (56, 3, 3)

    def test_61_points_gives_60_feedforward_pairs(self):
        batch = make_windows([self.make_trajectory(61)], mode="feedforward")
        assert len(batch) == 60

    def test_window_contents_match_slices(self):
        traj = self.make_trajectory(10)
        batch = make_windows([traj], seq_len=3, shift=3)
        np.testing.assert_array_equal(batch.inputs[0], traj.states[0:3].T)
        np.testing.assert_array_equal(batch.outputs[0], traj.states[3:6].T)
        np.testing.assert_array_equal(batch.inputs[2], traj.states[2:5].T)

    def test_too_short_raises(self):
        with pytest.raises(TrajectoryTooShortError):
            make_windows([self.make_trajectory(61)], seq_len=61, shift=3)

    def test_stride_subsamples(self):
        dense = make_windows([self.make_trajectory(61)], seq_len=3, shift=3, stride=1)
        sparse = make_windows([self.make_trajectory(61)], seq_len=3, shift=3, stride=3)
        assert len(sparse) == 19
        np.testing.assert_array_equal(sparse.inputs[1], dense.inputs[3])

    def test_custom_shift(self):
        traj = self.make_trajectory(10)
        batch = make_windows([traj], seq_len=3, shift=1)
        np.testing.assert_array_equal(batch.outputs[0], traj.states[1:4].T)

"""Rollout, invariant series, volume verification, and report files."""

import numpy as np
import pytest

from voltra import evaluation
from voltra.dynamics import PAPER_COEFFS, initial_state, integrate
from voltra.errors import NonFiniteStateError
from voltra.evaluation import (
    invariant_series,
    jacobian_ad,
    jacobian_fd,
    output_rank_report,
    read_rollout_csv,
    rollout,
    rollout_error,
    verify_volume_preservation,
    write_rollout_csv,
    write_volume_report,
)
from voltra.layers import default_spec, init_params
from voltra.rng import SplitMix64


def zeroed_store(kind, precision="f64"):
    store = init_params(default_spec(kind), seed=0, precision=precision)
    for g in store:
        g.data[...] = 0.0
    return store


class TestInvariantSeries:
    def test_unit_sphere_states(self):
        traj = integrate(PAPER_COEFFS, initial_state("x", 1.1), 0.2, 20)
        np.testing.assert_allclose(invariant_series(traj.states), np.ones(21), atol=1e-12)

    def test_345_triangle(self):
        assert invariant_series(np.array([[3.0, 4.0, 0.0]]))[0] == pytest.approx(5.0)

    def test_reference_conservation_over_long_horizon(self):
        traj = integrate(PAPER_COEFFS, initial_state("x", 1.1), 0.2, 500)
        assert np.abs(invariant_series(traj.states) - 1.0).max() < 1e-9


class TestRollout:
    def test_identity_transformer_repeats_window(self):
        spec = default_spec("vpt")
        store = zeroed_store("vpt")
        result = rollout(spec, store, PAPER_COEFFS, initial_state("x", 1.1), n_steps=30)
        assert len(result) == 31
        # seed window repeats forever, so predictions cycle with period 3
        np.testing.assert_array_equal(result.predicted[3:6], result.predicted[0:3])
        np.testing.assert_array_equal(result.predicted[27:30], result.predicted[0:3])
        # the invariant of the repeated window is exactly constant per phase
        inv = result.invariants
        np.testing.assert_array_equal(inv[::3], np.full(11, inv[0]))

    def test_zero_steps_returns_seed_only(self):
        spec = default_spec("vpt")
        store = zeroed_store("vpt")
        result = rollout(spec, store, PAPER_COEFFS, initial_state("x", 1.1), n_steps=0)
        assert len(result) == 3  # transformer seed window
        assert result.seed_len == 3

    def test_vpff_zero_steps(self):
        spec = default_spec("vpff")
        store = zeroed_store("vpff")
        result = rollout(spec, store, PAPER_COEFFS, initial_state("x", 1.1), n_steps=0)
        assert len(result) == 1

    def test_identity_feedforward_invariant_exactly_constant(self):
        spec = default_spec("vpff")
        store = zeroed_store("vpff")
        result = rollout(spec, store, PAPER_COEFFS, initial_state("y", 0.4), n_steps=40)
        np.testing.assert_array_equal(result.invariants, np.full(41, result.invariants[0]))

    def test_seed_states_come_from_reference(self):
        spec = default_spec("vpt")
        store = zeroed_store("vpt")
        result = rollout(spec, store, PAPER_COEFFS, initial_state("y", 0.9), n_steps=9)
        np.testing.assert_array_equal(result.predicted[:3], result.reference[:3])
        assert result.errors[:3].max() == 0.0

    def test_network_seeding_mode(self):
        spec = default_spec("vpt")
        store = zeroed_store("vpt")
        ff_spec = default_spec("vpff")
        ff_store = zeroed_store("vpff")
        z0 = initial_state("x", 1.1)
        result = rollout(
            spec, store, PAPER_COEFFS, z0, n_steps=6, seed_with=(ff_spec, ff_store)
        )
        # identity feedforward seeder repeats z0
        np.testing.assert_array_equal(result.predicted[1], z0)
        np.testing.assert_array_equal(result.predicted[2], z0)

    def test_rollout_deterministic(self):
        spec = default_spec("vpt")
        store = init_params(spec, seed=4, precision="f32")
        a = rollout(spec, store, PAPER_COEFFS, initial_state("x", 1.1), n_steps=50)
        b = rollout(spec, store, PAPER_COEFFS, initial_state("x", 1.1), n_steps=50)
        np.testing.assert_array_equal(a.predicted, b.predicted)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_state_detected(self):
        spec = default_spec("vpff")
        store = init_params(spec, seed=0, precision="f32")
        huge = 1e30 * np.ones(3)
        with pytest.raises(NonFiniteStateError):
            rollout(spec, store, PAPER_COEFFS, huge, n_steps=2000)


class TestRolloutError:
    def test_perfect_prediction_gives_zeros(self):
        spec = default_spec("vpff")
        store = zeroed_store("vpff")
        # the identity model run for zero steps matches the reference trivially
        result = rollout(spec, store, PAPER_COEFFS, initial_state("x", 1.1), n_steps=0)
        summary = rollout_error(result)
        assert summary.max_error == 0.0
        assert summary.mean_error == 0.0
        assert summary.first_exceed_index is None

    def test_constant_offset(self):
        times = 0.2 * np.arange(5)
        ref = np.zeros((5, 3))
        ref[:, 0] = 1.0
        eps = 0.01
        pred = ref.copy()
        pred[:, 0] += eps
        result = evaluation.RolloutResult(
            times=times,
            predicted=pred,
            reference=ref,
            invariants=invariant_series(pred),
            errors=np.sqrt(((pred - ref) ** 2).sum(axis=1)),
            seed_len=1,
        )
        summary = rollout_error(result, threshold=0.005)
        assert summary.max_error == pytest.approx(eps)
        assert summary.first_exceed_index == 0
        assert summary.max_invariant_deviation == pytest.approx(eps)


class TestVolumeVerifier:
    def test_fresh_vpt_within_tolerance(self):
        spec = default_spec("vpt")
        store = init_params(spec, seed=5, precision="f64")
        report = verify_volume_preservation(spec, store, n_samples=10, seed=1)
        assert report.structural
        assert report.max_unit_deviation < 1e-6
        assert report.max_route_gap < 1e-8

    def test_fresh_vpff_within_tolerance(self):
        spec = default_spec("vpff")
        store = init_params(spec, seed=5, precision="f64")
        report = verify_volume_preservation(spec, store, n_samples=10, seed=1)
        assert report.max_unit_deviation < 1e-6

    def test_f32_checkpoint_verified_in_f64(self):
        spec = default_spec("vpt")
        store = init_params(spec, seed=6, precision="f32")
        report = verify_volume_preservation(spec, store, n_samples=5, seed=2)
        assert report.max_unit_deviation < 1e-6

    def test_st_reports_o1_deviation_without_claim(self):
        spec = default_spec("st")
        store = init_params(spec, seed=5, precision="f64")
        report = verify_volume_preservation(spec, store, n_samples=5, seed=1)
        assert not report.structural
        assert report.max_unit_deviation > 1e-6  # no structural guarantee

    def test_ad_and_fd_jacobians_agree(self):
        spec = default_spec("vpt")
        store = init_params(spec, seed=7, precision="f64")
        z = SplitMix64(70).uniforms(9, -1, 1).reshape(3, 3)
        ja = jacobian_ad(spec, store, z)
        jf = jacobian_fd(spec, store, z)
        assert np.abs(ja - jf).max() < 1e-8
        assert abs(np.linalg.det(ja) - np.linalg.det(jf)) < 1e-8

    def test_matrix_and_vectorized_paths_coincide(self):
        # evaluating on the window matrix or on its row-major vectorization
        # is the same computation; determinants follow suit exactly
        spec = default_spec("vpt")
        store = init_params(spec, seed=7, precision="f64")
        z = SplitMix64(71).uniforms(9, -1, 1).reshape(3, 3)
        direct = evaluation.forward_numpy(spec, store, z).reshape(-1)
        via_vec = evaluation.forward_numpy(spec, store, z.reshape(-1).reshape(3, 3)).reshape(-1)
        np.testing.assert_array_equal(direct, via_vec)
        det_a = np.linalg.det(jacobian_ad(spec, store, z))
        det_b = np.linalg.det(jacobian_ad(spec, store, z.reshape(-1).reshape(3, 3)))
        assert abs(det_a - det_b) < 1e-10


class TestRankDiagnostic:
    def test_reports_rank_and_condition(self):
        spec = default_spec("st")
        store = init_params(spec, seed=8, precision="f64")
        rows = output_rank_report(spec, store, n_samples=3, seed=3)
        assert len(rows) == 3
        for row in rows:
            assert 0 < row["rank"] <= 3
            assert row["cond"] >= 1.0
            assert len(row["singular_values"]) == 3


class TestReportFiles:
    def test_rollout_csv_roundtrip(self, tmp_path):
        spec = default_spec("vpt")
        store = init_params(spec, seed=9, precision="f32")
        result = rollout(spec, store, PAPER_COEFFS, initial_state("x", 1.1), n_steps=12)
        path = tmp_path / "roll.csv"
        write_rollout_csv(path, result)
        loaded = read_rollout_csv(path)
        np.testing.assert_array_equal(loaded.predicted, result.predicted)
        np.testing.assert_array_equal(loaded.reference, result.reference)
        np.testing.assert_array_equal(loaded.errors, result.errors)

    def test_volume_report_json(self, tmp_path):
        import json

        spec = default_spec("vpff")
        store = init_params(spec, seed=10, precision="f64")
        report = verify_volume_preservation(spec, store, n_samples=3, seed=4)
        path = tmp_path / "volume.json"
        write_volume_report(path, report)
        doc = json.loads(path.read_text())
        assert doc["kind"] == "vpff"
        assert len(doc["samples"]) == 3
        assert doc["max_unit_deviation"] == report.max_unit_deviation

"""Architecture tests: parameter accounting, identities, attention
properties, and the volume-preservation determinant oracles."""

import numpy as np
import pytest

from voltra import layers, linalg
from voltra.errors import DimMismatchError
from voltra.evaluation import jacobian_ad, jacobian_fd
from voltra.layers import ModelSpec, count_params, default_spec, forward_numpy, init_params
from voltra.rng import SplitMix64


def zeroed(store):
    for g in store:
        g.data[...] = 0.0
    return store


def seeded_window(seed, d=3, t=3, scale=1.0):
    return SplitMix64(seed).uniforms(d * t, -scale, scale).reshape(d, t)


class TestCountParams:
    def test_vpff_table_value(self):
        assert count_params(ModelSpec("vpff", d=3, n_blocks=6, n_linear=1)) == 135

    def test_vpt_table_value(self):
        assert count_params(ModelSpec("vpt", d=3, n_blocks=2, n_linear=1, n_units=3, seq_len=3)) == 162

    def test_degenerate_vpff_only_trailing_unit(self):
        assert count_params(ModelSpec("vpff", d=3, n_blocks=0, n_linear=1)) == 9

    def test_st_follows_described_composition(self):
        # single dense attention weight (9) + n_blocks ResNet layers (12 each),
        # per unit; this does not reproduce the unexplained published total
        assert count_params(ModelSpec("st", d=3, n_blocks=2, n_units=3, seq_len=3)) == 99

    def test_count_matches_allocation(self):
        for kind in ("vpff", "vpt", "st"):
            spec = default_spec(kind)
            store = init_params(spec, seed=1)
            assert store.n_params == count_params(spec)

    def test_seq_len_does_not_change_count(self):
        base = ModelSpec("vpt", d=3, n_blocks=2, n_linear=1, n_units=3, seq_len=3)
        wider = layers.with_seq_len(base, 8)
        assert count_params(base) == count_params(wider)


class TestIdentityMaps:
    def test_vpff_zero_params_is_identity(self):
        spec = default_spec("vpff")
        store = zeroed(init_params(spec, seed=0, precision="f64"))
        x = np.array([0.3, -1.2, 2.5])
        np.testing.assert_array_equal(forward_numpy(spec, store, x), x)

    def test_vpt_zero_params_is_identity(self):
        spec = default_spec("vpt")
        store = zeroed(init_params(spec, seed=0, precision="f64"))
        z = seeded_window(2)
        np.testing.assert_allclose(forward_numpy(spec, store, z), z, atol=1e-15)


class TestVPAttention:
    def test_zero_weight_returns_input(self):
        a = linalg.SkewSymParam(3, np.zeros(3))
        z = seeded_window(3)
        np.testing.assert_array_equal(layers.vp_attention(a, z), z)

    @pytest.mark.parametrize("t", [1, 2, 4, 5, 8])
    def test_t_independence_same_weight(self, t):
        # one d x d weight serves any window width
        a = linalg.SkewSymParam(3, SplitMix64(5).uniforms(3, -1, 1))
        z = seeded_window(100 + t, t=t)
        out = layers.vp_attention(a, z)
        assert out.shape == (3, t)

    @pytest.mark.parametrize("seed", range(5))
    def test_reweighting_matrix_orthogonal(self, seed):
        stream = SplitMix64(seed)
        a = linalg.materialize_skew(stream.uniforms(3, -1, 1), 3)
        z = stream.uniforms(9, -1, 1).reshape(3, 3)
        corr = z.T @ a @ z
        lam = linalg.cayley(corr)
        assert np.abs(lam.T @ lam - np.eye(3)).max() < 1e-10

    def test_correlation_is_skew_for_any_input(self):
        stream = SplitMix64(77)
        a = linalg.materialize_skew(stream.uniforms(3, -2, 2), 3)
        for t in (2, 3, 5):
            z = stream.uniforms(3 * t, -2, 2).reshape(3, t)
            corr = z.T @ a @ z
            assert np.abs(corr + corr.T).max() < 1e-12

    def test_attention_jacobian_det_is_one(self):
        stream = SplitMix64(13)
        a = linalg.SkewSymParam(3, stream.uniforms(3, -0.8, 0.8))
        z = stream.uniforms(9, -1, 1).reshape(3, 3)

        h = 1e-6
        flat = z.reshape(-1)
        jac = np.zeros((9, 9))
        for k in range(9):
            bump = np.zeros(9)
            bump[k] = h
            up = layers.vp_attention(a, (flat + bump).reshape(3, 3)).reshape(-1)
            down = layers.vp_attention(a, (flat - bump).reshape(3, 3)).reshape(-1)
            jac[:, k] = (up - down) / (2 * h)
        assert abs(np.linalg.det(jac) - 1.0) < 1e-6

    def test_dim_mismatch(self):
        a = linalg.SkewSymParam(3, np.zeros(3))
        with pytest.raises(DimMismatchError):
            layers.vp_attention(a, np.ones((4, 3)))


class TestStandardAttention:
    def test_columns_sum_to_one(self):
        stream = SplitMix64(21)
        a = stream.uniforms(9, -1, 1).reshape(3, 3)
        z = stream.uniforms(9, -1, 1).reshape(3, 3)
        lam = np.exp(z.T @ a @ z)
        lam = lam / lam.sum(axis=0, keepdims=True)
        np.testing.assert_allclose(lam.sum(axis=0), np.ones(3), atol=1e-6)
        np.testing.assert_allclose(layers.standard_attention(a, z), z @ lam, rtol=1e-12)

    def test_zero_weight_gives_column_means(self):
        z = seeded_window(22, t=4)
        out = layers.standard_attention(np.zeros((3, 3)), z)
        mean = z.mean(axis=1, keepdims=True)
        np.testing.assert_allclose(out, np.repeat(mean, 4, axis=1), rtol=1e-12)

    def test_identical_columns_are_fixed_point(self):
        col = np.array([[0.4], [-1.0], [0.7]])
        z = np.repeat(col, 3, axis=1)
        a = SplitMix64(23).uniforms(9, -1, 1).reshape(3, 3)
        np.testing.assert_allclose(layers.standard_attention(a, z), z, rtol=1e-12)


class TestVolumePreservation:
    @pytest.mark.parametrize("seed", range(4))
    def test_vpff_unit_jacobian_det(self, seed):
        spec = default_spec("vpff")
        store = init_params(spec, seed=seed, precision="f64")
        x = SplitMix64(300 + seed).uniforms(3, -1, 1).reshape(3, 1)
        det = np.linalg.det(jacobian_ad(spec, store, x))
        assert abs(det - 1.0) < 1e-10

    @pytest.mark.parametrize("seed", range(4))
    def test_vpt_unit_jacobian_det_ad_and_fd(self, seed):
        spec = default_spec("vpt")
        store = init_params(spec, seed=seed, precision="f64")
        z = seeded_window(400 + seed)
        det_ad = np.linalg.det(jacobian_ad(spec, store, z))
        det_fd = np.linalg.det(jacobian_fd(spec, store, z))
        assert abs(det_ad - 1.0) < 1e-6
        assert abs(det_ad - det_fd) < 1e-8

    def test_st_has_no_unit_determinant(self):
        spec = default_spec("st")
        store = init_params(spec, seed=3, precision="f64")
        z = seeded_window(11)
        det = np.linalg.det(jacobian_ad(spec, store, z))
        assert abs(det - 1.0) > 1e-6

    def test_frozen_reweighting_is_block_diagonal(self):
        # the linear map Z -> Z L0 under row-major vectorization equals
        # kron(I_d, L0^T), verified entry by entry
        stream = SplitMix64(31)
        a = linalg.materialize_skew(stream.uniforms(3, -1, 1), 3)
        z0 = stream.uniforms(9, -1, 1).reshape(3, 3)
        lam0 = linalg.cayley(z0.T @ a @ z0)
        jac = np.zeros((9, 9))
        for k in range(9):
            basis = np.zeros(9)
            basis[k] = 1.0
            jac[:, k] = (basis.reshape(3, 3) @ lam0).reshape(-1)
        expected = np.kron(np.eye(3), lam0.T)
        assert np.abs(jac - expected).max() < 1e-12


class TestInitialization:
    def test_deterministic(self):
        spec = default_spec("vpt")
        a = init_params(spec, seed=4)
        b = init_params(spec, seed=4)
        np.testing.assert_array_equal(a.flatten(), b.flatten())
        c = init_params(spec, seed=5)
        assert not np.array_equal(a.flatten(), c.flatten())

    def test_ranges_and_zero_biases(self):
        spec = default_spec("vpt")
        store = init_params(spec, seed=6, precision="f64")
        bound = 1.0 / np.sqrt(3.0)
        for g in store:
            if g.kind == "bias":
                assert np.all(g.data == 0.0)
            elif g.kind == "skew":
                assert np.abs(g.data).max() <= 0.01
            else:
                assert np.abs(g.data).max() <= bound

    def test_precision_dtypes(self):
        spec = default_spec("vpff")
        assert init_params(spec, 0, "f32").dtype == np.float32
        assert init_params(spec, 0, "f64").dtype == np.float64


class TestForwardPaths:
    def test_numpy_and_tape_agree(self):
        from voltra import autodiff
        from voltra.layers import forward_tape

        for kind in ("vpff", "vpt", "st"):
            spec = default_spec(kind)
            store = init_params(spec, seed=8, precision="f64")
            z = (
                SplitMix64(80).uniforms(6, -1, 1).reshape(2, 3, 1)
                if kind == "vpff"
                else SplitMix64(80).uniforms(18, -1, 1).reshape(2, 3, 3)
            )
            tape = autodiff.Tape()
            out_node, _, _ = forward_tape(tape, spec, store, z)
            np.testing.assert_array_equal(out_node.value, forward_numpy(spec, store, z))

    def test_batch_matches_individual(self):
        spec = default_spec("vpt")
        store = init_params(spec, seed=9, precision="f64")
        batch = SplitMix64(90).uniforms(5 * 9, -1, 1).reshape(5, 3, 3)
        together = forward_numpy(spec, store, batch)
        for k in range(5):
            np.testing.assert_allclose(together[k], forward_numpy(spec, store, batch[k]), atol=1e-14)

    def test_vpff_vector_and_rows_layouts(self):
        spec = default_spec("vpff")
        store = init_params(spec, seed=10, precision="f64")
        x = np.array([0.1, -0.2, 0.3])
        single = forward_numpy(spec, store, x)
        rows = forward_numpy(spec, store, x[None, :])
        np.testing.assert_array_equal(rows[0], single)

    def test_input_dim_checked(self):
        spec = default_spec("vpt")
        store = init_params(spec, seed=0)
        with pytest.raises(DimMismatchError):
            forward_numpy(spec, store, np.ones((4, 3)))

    def test_transformer_accepts_any_seq_len_after_init(self):
        spec = default_spec("vpt")
        store = init_params(spec, seed=1, precision="f64")
        for t in (1, 2, 4, 5, 8):
            out = forward_numpy(spec, store, seeded_window(200 + t, t=t))
            assert out.shape == (3, t)

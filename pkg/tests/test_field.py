"""Voxel field queries, activation, the color MLP, and asset serialization."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from voxaug.assets import (AssetChecksumError, AssetFormatError, content_hash,
                           load_asset, save_asset)
from voxaug.field import (DENSITY_BIAS, DIRECT, FEATURE_DIM, FEATURE_MLP,
                          MLP, ObjectAsset, PE_FREQS_D, PE_FREQS_X, RAW_INIT,
                          SIGMA_INIT, VoxelField, pe_dim, positional_encoding,
                          sigmoid, softplus, softplus_grad, softplus_inv)
from voxaug.geometry import Box3D


def random_field(mode=DIRECT, seed=0, dtype=np.float64, res=5):
    rng = np.random.default_rng(seed)
    size = (res - 1) * 0.5
    f = VoxelField.create([0.0, 0.0, 0.0], [size] * 3, 0.5, color_mode=mode,
                          rng=rng, dtype=dtype)
    f.density_grid[:] = rng.normal(0, 2, f.density_grid.shape)
    f.color_grid[:] = rng.normal(0, 1, f.color_grid.shape)
    return f


# -- activations ---------------------------------------------------------------


class TestActivations:
    def test_initial_sigma(self):
        assert softplus(RAW_INIT + DENSITY_BIAS) == pytest.approx(SIGMA_INIT,
                                                                  rel=1e-12)

    def test_softplus_inverse(self):
        y = np.array([1e-4, 0.1, 1.0, 30.0])
        np.testing.assert_allclose(softplus(softplus_inv(y)), y, rtol=1e-10)

    def test_softplus_grad_is_sigmoid(self):
        x = np.linspace(-5, 5, 11)
        eps = 1e-6
        fd = (softplus(x + eps) - softplus(x - eps)) / (2 * eps)
        np.testing.assert_allclose(softplus_grad(x), fd, atol=1e-8)

    def test_sigmoid_extremes(self):
        assert sigmoid(np.array([800.0]))[0] == 1.0
        assert sigmoid(np.array([-800.0]))[0] == 0.0
        assert sigmoid(np.array([0.0]))[0] == 0.5


# -- grid construction and interpolation ----------------------------------------


class TestVoxelField:
    def test_create_expands_bounds_to_whole_grid(self):
        f = VoxelField.create([0, 0, 0], [1.1, 1.0, 0.6], 0.5)
        np.testing.assert_allclose(f.bounds_max, [1.5, 1.0, 1.0])
        assert f.resolution == (4, 3, 3)

    def test_rejects_resolution_below_two(self):
        with pytest.raises(ValueError):
            VoxelField([0, 0, 0], [1, 1, 1], (1, 3, 3), 1.0,
                       np.zeros((1, 3, 3)), DIRECT, np.zeros((1, 3, 3, 3)))

    def test_rejects_inconsistent_voxel_size(self):
        with pytest.raises(ValueError):
            VoxelField([0, 0, 0], [1, 1, 1], (3, 3, 3), 0.7,
                       np.zeros((3, 3, 3)), DIRECT, np.zeros((3, 3, 3, 3)))

    def test_density_at_node_is_one_hot(self):
        f = random_field()
        pts = f.grid_points()
        sigma = f.query_density(pts)
        np.testing.assert_allclose(
            sigma, softplus(f.density_grid.ravel() + f.density_bias),
            rtol=1e-12)

    def test_density_edge_midpoint_is_average(self):
        f = random_field(seed=1)
        a = f.density_grid[0, 0, 0]
        b = f.density_grid[1, 0, 0]
        mid = np.array([0.25, 0.0, 0.0])
        assert f.query_density(mid)[0] == pytest.approx(
            softplus((a + b) / 2 + f.density_bias), rel=1e-9)

    def test_outside_is_empty(self):
        f = random_field(seed=2)
        pts = np.array([[-0.1, 0.5, 0.5], [9.0, 0.0, 0.0]])
        np.testing.assert_array_equal(f.query_density(pts), [0.0, 0.0])
        np.testing.assert_array_equal(
            f.query_color(pts, np.array([[0, 0, 1.0]])), np.zeros((2, 3)))

    @given(st.integers(0, 10_000))
    @settings(max_examples=40, deadline=None)
    def test_interpolation_linear_along_axes(self, seed):
        f = random_field(seed=seed)
        rng = np.random.default_rng(seed + 1)
        axis = rng.integers(0, 3)
        idx = [int(rng.integers(0, 4))] * 3
        n0 = np.array(idx, dtype=float) * 0.5
        n1 = n0.copy()
        n1[axis] += 0.5
        lam = float(rng.uniform(0, 1))
        p = (1 - lam) * n0 + lam * n1
        raw = f.interp_raw(f.density_grid, p[None])[0]
        r0 = f.interp_raw(f.density_grid, n0[None])[0]
        r1 = f.interp_raw(f.density_grid, n1[None])[0]
        assert raw == pytest.approx((1 - lam) * r0 + lam * r1, abs=1e-9)

    def test_direct_color_view_independent(self):
        f = random_field(seed=3)
        pts = np.random.default_rng(4).uniform(0.1, 1.9, (10, 3))
        c1 = f.query_color(pts, np.array([0.0, 0.0, 1.0]))
        c2 = f.query_color(pts, np.array([1.0, 0.0, 0.0]))
        np.testing.assert_array_equal(c1, c2)

    def test_direct_color_at_node(self):
        f = random_field(seed=5)
        node = np.array([0.5, 1.0, 1.5])
        got = f.query_color(node, np.array([0.0, 0.0, 1.0]))[0]
        np.testing.assert_allclose(got, sigmoid(f.color_grid[1, 2, 3]),
                                   rtol=1e-12)

    def test_initial_density_is_sigma_init(self):
        f = VoxelField.create([0, 0, 0], [1, 1, 1], 0.5)
        assert f.query_density(np.array([0.3, 0.7, 0.2]))[0] == pytest.approx(
            SIGMA_INIT, rel=1e-6)


# -- MLP color head --------------------------------------------------------------


class TestFeatureMLP:
    def test_zero_weights_constant_color(self):
        f = random_field(FEATURE_MLP, seed=6)
        for W in f.mlp.weights:
            W[:] = 0.0
        f.mlp.biases[-1][:] = np.array([0.2, -0.3, 1.0])
        pts = np.random.default_rng(7).uniform(0.1, 1.9, (5, 3))
        dirs = np.tile(np.array([0.0, 0.0, 1.0]), (5, 1))
        got = f.query_color(pts, dirs)
        np.testing.assert_allclose(got, np.tile(sigmoid(f.mlp.biases[-1]),
                                                (5, 1)), rtol=1e-6)

    def test_matches_reference_forward(self):
        """Straight-line reference implementation of the full color head."""
        f = random_field(FEATURE_MLP, seed=8)
        rng = np.random.default_rng(9)
        pts = rng.uniform(0.05, 1.95, (10, 3))
        dirs = rng.normal(size=(10, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        got = f.query_color(pts, dirs)

        for k in range(10):
            # reference trilinear feature interpolation
            g = (pts[k] - f.bounds_min) / f.voxel_size
            i0 = np.minimum(g.astype(int), np.array(f.resolution) - 2)
            fr = g - i0
            feat = np.zeros(FEATURE_DIM)
            for dx in (0, 1):
                for dy in (0, 1):
                    for dz in (0, 1):
                        w = ((fr[0] if dx else 1 - fr[0])
                             * (fr[1] if dy else 1 - fr[1])
                             * (fr[2] if dz else 1 - fr[2]))
                        feat += w * f.color_grid[i0[0] + dx, i0[1] + dy,
                                                 i0[2] + dz]

            def pe(v, n):
                out = list(v)
                for j in range(n):
                    out.extend(np.sin(2.0 ** j * v))
                    out.extend(np.cos(2.0 ** j * v))
                return np.array(out)

            x = np.concatenate([feat, pe(pts[k], PE_FREQS_X),
                                pe(dirs[k], PE_FREQS_D)])
            h = np.maximum(f.mlp.weights[0] @ x + f.mlp.biases[0], 0.0)
            logits = f.mlp.weights[1] @ h + f.mlp.biases[1]
            ref = 1.0 / (1.0 + np.exp(-logits))
            np.testing.assert_allclose(got[k], ref, atol=1e-6)

    def test_pe_dim(self):
        assert pe_dim(3, 4) == 27
        assert positional_encoding(np.zeros((2, 3)), 4).shape == (2, 27)

    def test_requires_mlp(self):
        f = random_field(seed=10)
        with pytest.raises(ValueError):
            VoxelField(f.bounds_min, f.bounds_max, f.resolution, f.voxel_size,
                       f.density_grid, FEATURE_MLP,
                       np.zeros((*f.resolution, FEATURE_DIM)), mlp=None)


# -- object assets ----------------------------------------------------------------


class TestObjectAsset:
    def test_bounds_must_enclose_box(self):
        f = VoxelField.create([-1, -1, -1], [1, 1, 1], 0.5)
        box = Box3D(np.zeros(3), np.array([4.0, 1.0, 1.0]), 0.0, frame="local")
        with pytest.raises(ValueError):
            ObjectAsset(f, box)

    def test_symmetric_flag_recorded(self):
        f = VoxelField.create([-1, -1, -1], [1, 1, 1], 0.5)
        box = Box3D(np.zeros(3), np.array([1.0, 1.0, 1.0]), 0.0, frame="local")
        assert ObjectAsset(f, box, symmetric=True).symmetric


# -- serialization ----------------------------------------------------------------


class TestAssets:
    @pytest.mark.parametrize("mode", [DIRECT, FEATURE_MLP])
    def test_field_round_trip_bit_exact(self, tmp_path, mode):
        f = random_field(mode, seed=11, dtype=np.float32)
        p = tmp_path / "f.vxsa"
        save_asset(f, p)
        g = load_asset(p)
        assert isinstance(g, VoxelField)
        np.testing.assert_array_equal(g.density_grid, f.density_grid)
        np.testing.assert_array_equal(g.color_grid, f.color_grid)
        np.testing.assert_array_equal(g.bounds_min, f.bounds_min)
        assert g.resolution == f.resolution
        assert g.color_mode == f.color_mode
        assert g.density_bias == f.density_bias
        if mode == FEATURE_MLP:
            for Wa, Wb in zip(g.mlp.weights, f.mlp.weights):
                np.testing.assert_array_equal(Wa, Wb)
            for ba, bb in zip(g.mlp.biases, f.mlp.biases):
                np.testing.assert_array_equal(ba, bb)

    def test_object_round_trip(self, tmp_path):
        f = random_field(seed=12, dtype=np.float32, res=5)
        f = VoxelField(f.bounds_min - 2.0, f.bounds_max + 2.0, f.resolution,
                       (f.bounds_max[0] + 4.0) / 4, f.density_grid,
                       f.color_mode, f.color_grid)
        box = Box3D(f.bounds_min + 2.5, np.array([1.0, 1.0, 1.0]), 0.4,
                    frame="local")
        asset = ObjectAsset(f, box, symmetric=True)
        p = tmp_path / "o.vxsa"
        save_asset(asset, p)
        g = load_asset(p)
        assert isinstance(g, ObjectAsset)
        assert g.symmetric
        np.testing.assert_allclose(g.canonical_box.center, box.center)
        np.testing.assert_allclose(g.canonical_box.size, box.size)
        assert g.canonical_box.yaw == pytest.approx(box.yaw)
        np.testing.assert_array_equal(g.field.density_grid, f.density_grid)

    def test_truncated_file_checksum_error(self, tmp_path):
        f = random_field(seed=13, dtype=np.float32)
        p = tmp_path / "f.vxsa"
        save_asset(f, p)
        data = p.read_bytes()
        p.write_bytes(data[:-7])
        with pytest.raises((AssetChecksumError, AssetFormatError)):
            load_asset(p)

    def test_corrupted_payload_checksum_error(self, tmp_path):
        f = random_field(seed=14, dtype=np.float32)
        p = tmp_path / "f.vxsa"
        save_asset(f, p)
        data = bytearray(p.read_bytes())
        data[len(data) // 2] ^= 0xFF
        p.write_bytes(bytes(data))
        with pytest.raises(AssetChecksumError):
            load_asset(p)

    def test_wrong_magic_format_error(self, tmp_path):
        f = random_field(seed=15, dtype=np.float32)
        p = tmp_path / "f.vxsa"
        save_asset(f, p)
        data = bytearray(p.read_bytes())
        data[:4] = b"NOPE"
        p.write_bytes(bytes(data))
        with pytest.raises(AssetFormatError):
            load_asset(p)

    def test_content_hash_stable_and_sensitive(self, tmp_path):
        f = random_field(seed=16, dtype=np.float32)
        p1, p2 = tmp_path / "a.vxsa", tmp_path / "b.vxsa"
        save_asset(f, p1)
        save_asset(f, p2)
        assert content_hash(p1) == content_hash(p2)
        f.density_grid[0, 0, 0] += 1.0
        save_asset(f, p2)
        assert content_hash(p1) != content_hash(p2)


class TestMLPBackward:
    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(17)
        mlp = MLP.create(7, hidden=9, out_dim=3, rng=rng, dtype=np.float64)
        x = rng.normal(size=(5, 7))
        d_out = rng.normal(size=(5, 3))

        cache = []
        out = mlp.forward(x, cache=cache)
        dWs, dbs, dx = mlp.backward(cache, d_out)
        loss = lambda: float((mlp.forward(x) * d_out).sum())
        eps = 1e-6
        for arr, g in [(mlp.weights[0], dWs[0]), (mlp.weights[1], dWs[1]),
                       (mlp.biases[0], dbs[0]), (mlp.biases[1], dbs[1])]:
            flat, gflat = arr.reshape(-1), np.asarray(g).reshape(-1)
            for i in rng.choice(flat.size, size=min(10, flat.size),
                                replace=False):
                old = flat[i]
                flat[i] = old + eps
                lp = loss()
                flat[i] = old - eps
                lm = loss()
                flat[i] = old
                assert gflat[i] == pytest.approx((lp - lm) / (2 * eps),
                                                 abs=1e-4, rel=1e-4)
        # input gradient
        for i in range(7):
            xp = x.copy()
            xp[:, i] += eps
            xm = x.copy()
            xm[:, i] -= eps
            fd = ((mlp.forward(xp) * d_out).sum()
                  - (mlp.forward(xm) * d_out).sum()) / (2 * eps)
            assert dx[:, i].sum() == pytest.approx(fd, abs=1e-4, rel=1e-4)

"""Inference kernels against independent straight-loop oracles."""

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from edms.tensor import kernels as K

f32 = np.float32


def reflect(i, n):
    """Scalar mirror-without-edge reflection, bounced until in range."""
    if n == 1:
        return 0
    while i < 0 or i >= n:
        i = -i if i < 0 else 2 * (n - 1) - i
    return i


def naive_conv(x, w, b, stride):
    n, c, h, wd = x.shape
    oc, _, s, _ = w.shape
    pad = (s - 1) // 2
    oh = (h + 2 * pad - s) // stride + 1
    ow = (wd + 2 * pad - s) // stride + 1
    out = np.zeros((n, oc, oh, ow), dtype=f32)
    for bi in range(n):
        for o in range(oc):
            for y in range(oh):
                for xx in range(ow):
                    acc = f32(0)
                    for ci in range(c):
                        for ky in range(s):
                            for kx in range(s):
                                sy = reflect(y * stride + ky - pad, h)
                                sx = reflect(xx * stride + kx - pad, wd)
                                acc = f32(acc + f32(w[o, ci, ky, kx] * x[bi, ci, sy, sx]))
                    out[bi, o, y, xx] = f32(acc + b[o])
    return out


def zero_insert_transpose(x, w, b):
    """Insert zeros between samples, then correlate with the flipped kernel."""
    n, c, h, wd = x.shape
    oc = w.shape[0]
    z = np.zeros((n, c, 2 * h + 3, 2 * wd + 3), dtype=f32)
    z[:, :, 2:2 * h + 1:2, 2:2 * wd + 1:2] = x
    full = np.zeros((n, oc, 2 * h + 1, 2 * wd + 1), dtype=f32)
    for bi in range(n):
        for o in range(oc):
            for p in range(2 * h + 1):
                for q in range(2 * wd + 1):
                    acc = f32(0)
                    for ci in range(c):
                        for a in range(3):
                            for bb in range(3):
                                v = z[bi, ci, p + a, q + bb]
                                if v != 0:
                                    acc = f32(acc + f32(w[o, ci, 2 - a, 2 - bb] * v))
                    full[bi, o, p, q] = acc
    return full[:, :, 1:, 1:] + b[None, :, None, None]


def rand(rng, *shape):
    return rng.normal(size=shape).astype(f32)


class TestConv2d:
    def test_constant_input_all_ones(self):
        y = K.conv2d(np.ones((1, 1, 3, 3)), np.ones((1, 1, 3, 3)), np.zeros(1))
        assert np.array_equal(y, np.full((1, 1, 3, 3), 9.0, dtype=f32))

    def test_identity_kernel_is_exact(self):
        x = rand(np.random.default_rng(0), 2, 3, 7, 5)
        w = np.zeros((3, 3, 1, 1), dtype=f32)
        w[np.arange(3), np.arange(3)] = 1
        assert np.array_equal(K.conv2d(x, w, np.zeros(3)), x)

    def test_stride2_matches_naive_oracle(self):
        rng = np.random.default_rng(1)
        x, w, b = rand(rng, 1, 2, 5, 5), rand(rng, 4, 2, 3, 3), rand(rng, 4)
        y = K.conv2d(x, w, b, stride=2)
        assert y.shape == (1, 4, 3, 3)
        assert np.array_equal(y.view(np.uint32), naive_conv(x, w, b, 2).view(np.uint32))

    @given(st.data())
    def test_zero_ulp_against_oracle(self, data):
        h = data.draw(st.integers(1, 8))
        w_ = data.draw(st.integers(1, 8))
        c = data.draw(st.integers(1, 3))
        oc = data.draw(st.integers(1, 3))
        s = data.draw(st.sampled_from([1, 3, 5, 7]))
        stride = data.draw(st.sampled_from([1, 2]))
        n = data.draw(st.integers(1, 2))
        rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
        x, w, b = rand(rng, n, c, h, w_), rand(rng, oc, c, s, s), rand(rng, oc)
        got = K.conv2d(x, w, b, stride)
        assert np.array_equal(got.view(np.uint32), naive_conv(x, w, b, stride).view(np.uint32))

    def test_small_and_large_paths_agree_bitwise(self):
        rng = np.random.default_rng(2)
        x, w, b = rand(rng, 1, 4, 4, 4), rand(rng, 5, 4, 3, 3), rand(rng, 5)
        xp = K.reflect_pad(x, 1)
        fast = K._conv_accumulate(xp, w, 1, 4, 4)
        slow = K._conv_taps(xp, w, 1, 4, 4)
        assert np.array_equal(fast.view(np.uint32), slow.view(np.uint32))

    def test_wide_reflection_on_tiny_input(self):
        # 7x7 kernel on a 2x2 plane bounces the reflection several times
        rng = np.random.default_rng(3)
        x, w, b = rand(rng, 1, 1, 2, 2), rand(rng, 1, 1, 7, 7), rand(rng, 1)
        assert np.array_equal(K.conv2d(x, w, b), naive_conv(x, w, b, 1))

    def test_reflect_index_single_sample_replicates(self):
        assert K.reflect_index(1, 3).tolist() == [0] * 7
        assert K.reflect_index(3, 2).tolist() == [2, 1, 0, 1, 2, 1, 0]

    @pytest.mark.parametrize("bad", [
        dict(w=(2, 3, 3, 3)),          # channel mismatch
        dict(w=(2, 1, 2, 2)),          # even kernel
        dict(b=(3,)),                  # bias length
        dict(stride=3),
    ])
    def test_precondition_errors(self, bad):
        x = np.zeros((1, 1, 4, 4), dtype=f32)
        w = np.zeros(bad.get("w", (2, 1, 3, 3)), dtype=f32)
        b = np.zeros(bad.get("b", (2,)), dtype=f32)
        with pytest.raises(ValueError):
            K.conv2d(x, w, b, bad.get("stride", 1))

    def test_rank_check(self):
        with pytest.raises(ValueError, match="rank-4"):
            K.conv2d(np.zeros((1, 4, 4)), np.zeros((1, 1, 1, 1)), np.zeros(1))

    def test_non_finite_output_raises(self):
        x = np.full((1, 1, 2, 2), 3e38, dtype=f32)
        with pytest.raises(K.NonFiniteError):
            K.conv2d(x, np.ones((1, 1, 3, 3)), np.zeros(1))

    def test_deterministic_across_threads(self):
        rng = np.random.default_rng(4)
        x, w, b = rand(rng, 1, 3, 16, 16), rand(rng, 4, 3, 3, 3), rand(rng, 4)
        ref = K.conv2d(x, w, b).tobytes()
        with ThreadPoolExecutor(4) as pool:
            outs = list(pool.map(lambda _: K.conv2d(x, w, b).tobytes(), range(8)))
        assert all(o == ref for o in outs)


class TestConvTranspose:
    def test_single_input_scatters_single_products(self):
        v = f32(1.5)
        k = np.arange(1, 10, dtype=f32).reshape(1, 1, 3, 3)
        y = K.conv2d_transpose(np.full((1, 1, 1, 1), v), k, np.zeros(1))
        # full 3x3 scatter is v*k; the leading row and column are cropped
        assert y.shape == (1, 1, 2, 2)
        assert np.array_equal(y[0, 0], v * k[0, 0, 1:, 1:])

    def test_zero_input_gives_bias(self):
        y = K.conv2d_transpose(np.zeros((1, 2, 3, 4)), np.ones((5, 2, 3, 3)), np.arange(5.0))
        assert y.shape == (1, 5, 6, 8)
        assert np.array_equal(y, np.broadcast_to(np.arange(5, dtype=f32)[None, :, None, None], y.shape))

    def test_matches_zero_insertion_oracle(self):
        rng = np.random.default_rng(5)
        x, w, b = rand(rng, 1, 2, 4, 4), rand(rng, 3, 2, 3, 3), rand(rng, 3)
        y = K.conv2d_transpose(x, w, b)
        assert y.shape == (1, 3, 8, 8)
        assert np.array_equal(y, zero_insert_transpose(x, w, b))

    @given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 1000))
    def test_oracle_property(self, h, w_, seed):
        rng = np.random.default_rng(seed)
        x, w, b = rand(rng, 1, 2, h, w_), rand(rng, 2, 2, 3, 3), rand(rng, 2)
        assert np.array_equal(K.conv2d_transpose(x, w, b), zero_insert_transpose(x, w, b))

    def test_rejects_non_3x3(self):
        with pytest.raises(ValueError):
            K.conv2d_transpose(np.zeros((1, 1, 2, 2)), np.zeros((1, 1, 5, 5)), np.zeros(1))


class TestInstanceNorm:
    def test_constant_plane_gives_beta(self):
        x = np.full((1, 2, 4, 4), 7.0)
        y = K.instance_norm(x, np.array([3.0, -2.0]), np.array([0.5, -1.5]))
        assert np.array_equal(y[0, 0], np.full((4, 4), 0.5, dtype=f32))
        assert np.array_equal(y[0, 1], np.full((4, 4), -1.5, dtype=f32))

    def test_two_pixel_closed_form(self):
        y = K.instance_norm(np.array([[[[-1.0, 1.0]]]]), np.ones(1), np.zeros(1))
        expected = 1 / np.sqrt(1 + 1e-5)
        np.testing.assert_allclose(y.ravel(), [-expected, expected], rtol=1e-6)
        assert abs(expected - 0.999995) < 1e-6

    @given(arrays(np.float32, (1, 2, 5, 5), elements=st.floats(-50, 50, width=32)),
           st.floats(0.1, 10), st.floats(-10, 10))
    def test_affine_invariance(self, x, a, b):
        g, beta = np.ones(2), np.zeros(2)
        # eps only becomes negligible once the plane variance dwarfs it
        if x.reshape(2, -1).var(axis=1).min() * min(a, 1.0) ** 2 < 0.1:
            return
        y1 = K.instance_norm(x, g, beta)
        y2 = K.instance_norm(f32(a) * x + f32(b), g, beta)
        np.testing.assert_allclose(y1, y2, atol=2e-3)

    @given(arrays(np.float32, (2, 3, 4, 6), elements=st.floats(-100, 100, width=32)))
    def test_standardises_planes(self, x):
        # eps = 1e-5 alone shrinks the variance by var / (var + eps), so the
        # 1e-3 tolerance is only reachable for planes with variance >= ~1e-2
        keep = x.reshape(6, -1).var(axis=1) >= 2e-2
        y = K.instance_norm(x, np.ones(3), np.zeros(3)).reshape(6, -1)
        assert np.all(np.abs(y.mean(axis=1)[keep]) <= 1e-4)
        assert np.all(np.abs(y.var(axis=1)[keep] - 1) <= 1e-3)

    def test_gamma_length_checked(self):
        with pytest.raises(ValueError):
            K.instance_norm(np.zeros((1, 2, 2, 2)), np.ones(3), np.zeros(3))


class TestPointwise:
    def test_relu(self):
        assert K.relu(np.full((1, 1, 1, 1), -1.5)).item() == 0.0
        assert K.relu(np.full((1, 1, 1, 1), 2.0)).item() == 2.0

    def test_tanh(self):
        assert K.tanh_act(np.zeros((1, 1, 1, 1))).item() == 0.0
        got = K.tanh_act(np.ones((1, 1, 1, 1))).item()
        ref = f32(0.7615942)
        assert abs(np.float32(got).view(np.int32) - ref.view(np.int32)) <= 1


class TestBilinear:
    @given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 12), st.integers(1, 12),
           st.floats(-100, 100, width=32))
    def test_constant_preserved(self, h, w, oh, ow, v):
        y = K.bilinear_resize(np.full((1, 1, h, w), v), oh, ow)
        assert np.all(y == f32(v))

    def test_single_source_replicates(self):
        y = K.bilinear_resize(np.full((1, 2, 1, 1), 4.25), 3, 5)
        assert y.shape == (1, 2, 3, 5) and np.all(y == 4.25)

    def test_two_by_two_to_four_by_four(self):
        # source x = -0.25, 0.25, 0.75, 1.25 clamped to [0, 1]
        y = K.bilinear_resize(np.array([[[[0.0, 255.0], [0.0, 255.0]]]]), 4, 4)
        for row in y[0, 0]:
            assert row.tolist() == [0.0, 63.75, 191.25, 255.0]

    def test_output_dims_checked(self):
        with pytest.raises(ValueError):
            K.bilinear_resize(np.zeros((1, 1, 2, 2)), 0, 3)

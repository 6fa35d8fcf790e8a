import numpy as np
import pytest

from isbe import kernels
from isbe.errors import DomainError, ShapeError
from isbe.tensor import (ConvSpec, Tensor, conv2d, conv2d_direct, conv_padding,
                         elementwise, matmul, reduce)


def triple_loop_matmul(a, b):
    m, k = a.shape
    _, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for kk in range(k):
                out[i, j] += a[i, kk] * b[kk, j]
    return out


class TestMatmul:
    def test_identity(self):
        b = Tensor([[3.0, 4.0], [5.0, 6.0]])
        assert np.array_equal(matmul(Tensor(np.eye(2)), b).data, b.data)
        assert np.array_equal(matmul(b, Tensor(np.eye(2))).data, b.data)

    def test_row_times_column(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert np.allclose(out.data, [[11.0]])

    def test_against_triple_loop(self, rng):
        a = rng.standard_normal((7, 5))
        b = rng.standard_normal((5, 3))
        got = matmul(Tensor(a), Tensor(b)).data
        assert np.abs(got - triple_loop_matmul(a, b)).max() <= 1e-12

    def test_shape_mismatch_names_both(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestConv2d:
    def test_sum_of_ones(self):
        x = Tensor(np.ones((1, 1, 3, 3)))
        w = Tensor(np.ones((1, 1, 3, 3)))
        out = conv2d(x, w, Tensor(np.zeros(1)), ConvSpec(3))
        assert out.shape == (1, 1, 1, 1)
        assert out.data[0, 0, 0, 0] == 9.0

    def test_delta_kernel_is_identity(self, rng):
        x = Tensor(rng.standard_normal((2, 1, 5, 5)))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = conv2d(x, Tensor(w), Tensor(np.zeros(1)), ConvSpec(3, padded=True))
        assert np.allclose(out.data, x.data)

    def test_against_direct_loops(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 8, 8)))
        w = Tensor(rng.standard_normal((4, 3, 3, 3)))
        b = Tensor(rng.standard_normal(4))
        spec = ConvSpec(3, stride=2, out_channels=4)
        got = conv2d(x, w, b, spec).data
        want = conv2d_direct(x, w, b, spec).data
        assert np.abs(got - want).max() <= 1e-10

    @pytest.mark.parametrize("k,stride,padded", [(1, 1, False), (2, 1, True),
                                                 (3, 2, False), (3, 1, True),
                                                 (4, 2, False), (5, 2, True)])
    def test_oracle_sweep_small_dims(self, rng, k, stride, padded):
        for _ in range(3):
            n, c, f = rng.integers(1, 3), rng.integers(1, 3), rng.integers(1, 4)
            h = rng.integers(k, 9)
            x = Tensor(rng.standard_normal((n, c, h, h)))
            w = Tensor(rng.standard_normal((f, c, k, k)))
            b = Tensor(rng.standard_normal(f))
            spec = ConvSpec(k, stride=stride, out_channels=int(f), padded=padded)
            got = conv2d(x, w, b, spec).data
            want = conv2d_direct(x, w, b, spec).data
            assert np.abs(got - want).max() <= 1e-10

    def test_padded_stride1_preserves_shape(self, rng):
        for k in (2, 3, 4, 5):
            x = Tensor(rng.standard_normal((1, 2, 7, 7)))
            w = Tensor(rng.standard_normal((3, 2, k, k)))
            spec = ConvSpec(k, out_channels=3, padded=True)
            assert conv2d(x, w, Tensor(np.zeros(3)), spec).shape == (1, 3, 7, 7)

    def test_kernel_larger_than_input(self):
        x = Tensor(np.ones((1, 1, 2, 2)))
        w = Tensor(np.ones((1, 1, 5, 5)))
        with pytest.raises(ShapeError):
            conv2d(x, w, Tensor(np.zeros(1)), ConvSpec(5))

    def test_even_kernel_padding_split(self):
        assert conv_padding(4, True) == (1, 2)
        assert conv_padding(5, True) == (2, 2)
        assert conv_padding(3, False) == (0, 0)


class TestKernelBackends:
    def test_numpy_and_numba_paths_agree(self, rng):
        if kernels.im2col_numba is None:
            pytest.skip("numba unavailable")
        x = rng.standard_normal((2, 3, 9, 9)).astype(np.float32)
        a = kernels.im2col_numpy(x, 3, 2)
        b = kernels.im2col_numba(x, 3, 2)
        assert np.array_equal(a, b)
        cols = rng.standard_normal(a.shape).astype(np.float32)
        ga = kernels.col2im_numpy(cols, 2, 3, 9, 9, 3, 2)
        gb = kernels.col2im_numba(cols, 2, 3, 9, 9, 3, 2)
        assert np.allclose(ga, gb, atol=1e-6)


class TestReduce:
    def test_sum(self):
        assert reduce(Tensor([1.0, 2.0, 3.0]), "sum").data == 6.0

    def test_argmax_tie_breaks_low(self):
        assert reduce(Tensor([0.1, 0.7, 0.7]), "argmax") == 1

    def test_mean_axis(self):
        out = reduce(Tensor([[1.0, 3.0], [3.0, 5.0]]), "mean", axis=0)
        assert np.array_equal(out.data, [2.0, 4.0])

    def test_axis_out_of_range(self):
        with pytest.raises(ShapeError):
            reduce(Tensor([1.0]), "sum", axis=3)

    def test_sum_matches_sequential(self, rng):
        x = rng.standard_normal(1000)
        seq = 0.0
        for v in x:
            seq += v
        got = reduce(Tensor(x), "sum").item()
        assert abs(got - seq) <= 1e-12 * max(abs(seq), 1.0)


class TestElementwise:
    def test_exp(self):
        assert elementwise(Tensor([0.0]), "exp").data == pytest.approx([1.0])

    def test_clamp(self):
        out = elementwise(Tensor([-2.0, 0.5, 2.0]), "clamp", lo=-1, hi=1)
        assert np.array_equal(out.data, [-1.0, 0.5, 1.0])

    def test_sub(self):
        out = elementwise(Tensor([1.0, 2.0]), "sub", Tensor([1.0, 2.0]))
        assert np.array_equal(out.data, [0.0, 0.0])

    def test_log_domain_error(self):
        with pytest.raises(DomainError):
            elementwise(Tensor([1.0, 0.0]), "log")

    def test_log_non_strict(self):
        out = elementwise(Tensor([1.0, 0.0]), "log", strict=False)
        assert out.data[1] == -np.inf

    def test_scale(self):
        assert np.array_equal(
            elementwise(Tensor([1.0, -2.0]), "scale", factor=3.0).data, [3.0, -6.0])

    def test_broadcast_mismatch(self):
        with pytest.raises(ShapeError):
            elementwise(Tensor(np.ones((2, 3))), "add", Tensor(np.ones((4,))))


class TestTensor:
    def test_reshape_preserves_count(self, rng):
        t = Tensor(rng.standard_normal((2, 6)))
        assert t.reshape(3, 4).shape == (3, 4)

    def test_int_input_promoted_to_float(self):
        assert Tensor([1, 2, 3]).dtype == np.float64

    def test_conv_spec_validation(self):
        with pytest.raises(ValueError):
            ConvSpec(0)
        with pytest.raises(ValueError):
            ConvSpec(3, stride=0)

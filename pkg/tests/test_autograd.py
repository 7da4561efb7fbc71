import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from raft_stereo.autograd import ContractError, ShapeError, Tensor, check_gradients, no_grad, tape
from raft_stereo.autograd import functional as F
from raft_stereo.autograd.counters import count_macs, mac_scope
from raft_stereo.autograd.nn import BatchNorm2d
from raft_stereo.gradsuite import CASES


def t64(rng, *shape, grad=True, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=grad, dtype=np.float64)


def naive_conv(x, w, b, stride, pad):
    C, H, W = x.shape
    Co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((Co, Ho, Wo))
    for o in range(Co):
        for i in range(Ho):
            for j in range(Wo):
                patch = xp[:, i * stride : i * stride + kh, j * stride : j * stride + kw]
                out[o, i, j] = np.sum(patch * w[o]) + (b[o] if b is not None else 0.0)
    return out


class TestMatmul:
    def test_identity(self):
        A = np.array([[1.5, -2.0], [0.25, 4.0]], dtype=np.float32)
        out = F.matmul(Tensor(np.eye(2)), Tensor(A))
        np.testing.assert_array_equal(out.data, A)

    def test_hand_computed(self):
        out = Tensor([[1, 2], [3, 4]]) @ Tensor([[1], [1]])
        np.testing.assert_array_equal(out.data, [[3], [7]])

    def test_grad_is_ones_times_bT(self, rng):
        A, B = t64(rng, 3, 4), t64(rng, 4, 5)
        (A @ B).sum().backward()
        np.testing.assert_allclose(A.grad, np.ones((3, 5)) @ B.data.T, rtol=1e-12)
        res = check_gradients(lambda: (A @ B).sum(), [A, B])
        assert res.rel_error < 1e-3

    def test_shape_error_names_both(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            F.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_batched_broadcast(self, rng):
        a, b = t64(rng, 2, 3, 4), t64(rng, 4, 2)
        out = a @ b
        assert out.shape == (2, 3, 2)
        assert check_gradients(lambda: ((a @ b) ** 2).sum(), [a, b]).rel_error < 1e-3

    @pytest.mark.parametrize("seed", range(5))
    def test_triple_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        M, K, N = rng.integers(1, 33, size=3)
        a = rng.standard_normal((M, K)).astype(np.float32)
        b = rng.standard_normal((K, N)).astype(np.float32)
        ref = np.zeros((M, N), dtype=np.float64)
        for i in range(M):
            for j in range(N):
                for k in range(K):
                    ref[i, j] += float(a[i, k]) * float(b[k, j])
        out = F.matmul(Tensor(a), Tensor(b)).data
        assert out.dtype == np.float32
        assert np.max(np.abs(out - ref)) < 1e-5 * max(1.0, np.sqrt(K))


class TestConv2d:
    def test_1x1_identity(self, rng):
        x = rng.random((1, 5, 7)).astype(np.float32)
        out = F.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), stride=1, padding=0)
        np.testing.assert_array_equal(out.data, x)

    def test_ones_kernel_on_constant(self):
        c = 0.7
        x = np.full((1, 6, 6), c)
        out = F.conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), padding=1).data
        np.testing.assert_allclose(out[0, 1:-1, 1:-1], 9 * c, rtol=1e-6)
        np.testing.assert_allclose(out, naive_conv(x, np.ones((1, 1, 3, 3)), None, 1, 1), rtol=1e-6)

    def test_stride_two_halves(self):
        out = F.conv2d(Tensor(np.zeros((2, 3, 16, 24))), Tensor(np.zeros((4, 3, 3, 3))), stride=2, padding=1)
        assert out.shape == (2, 4, 8, 12)

    def test_kernel_too_large(self):
        with pytest.raises(ShapeError):
            F.conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))

    def test_channel_mismatch(self):
        with pytest.raises(ShapeError):
            F.conv2d(Tensor(np.zeros((3, 4, 4))), Tensor(np.zeros((1, 2, 3, 3))))

    @pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (2, 3, 7), (1, 0, 1), (2, 0, 1)])
    def test_matches_direct_summation(self, rng, stride, pad, k):
        x = rng.standard_normal((3, 9, 10))
        w = rng.standard_normal((4, 3, k, k))
        b = rng.standard_normal(4)
        out = F.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64),
                       stride=stride, padding=pad)
        np.testing.assert_allclose(out.data, naive_conv(x, w, b, stride, pad), rtol=1e-10, atol=1e-10)

    def test_counts_macs(self):
        with count_macs() as c, mac_scope("enc"):
            F.conv2d(Tensor(np.zeros((2, 3, 8, 8))), Tensor(np.zeros((5, 3, 3, 3))), padding=1)
        assert c["enc"] == 5 * 3 * 9 * 2 * 64


class TestSampling:
    def test_integer_point(self):
        v = Tensor(np.arange(6.0) ** 2)
        assert F.bilinear_sample_1d(v, 3.0).item() == 9.0

    def test_midpoint(self):
        assert F.bilinear_sample_1d(Tensor([0.0, 2.0]), 0.5).item() == pytest.approx(1.0)

    @pytest.mark.parametrize("x", [-1.0, 6.0, -3.5, 10.0])
    def test_outside_is_zero(self, x):
        assert F.bilinear_sample_1d(Tensor(np.arange(1.0, 7.0)), x).item() == 0.0

    def test_partial_border_weight(self):
        # each out-of-range neighbour contributes zero
        v = Tensor([4.0, 8.0])
        assert F.bilinear_sample_1d(v, -0.25).item() == pytest.approx(0.75 * 4.0)
        assert F.bilinear_sample_1d(v, 1.5).item() == pytest.approx(0.5 * 8.0)

    def test_gradients_volume_and_position(self, rng):
        vol = t64(rng, 2, 3, 7)
        x = Tensor(rng.uniform(-1.5, 7.5, size=(2, 3, 4)), requires_grad=True, dtype=np.float64)
        res = check_gradients(lambda: (F.sample_lastdim(vol, x) ** 2).sum(), [vol, x])
        assert res.rel_error < 1e-3


class TestPooling:
    def test_pairwise_mean(self):
        out = F.avgpool_lastdim(Tensor([1.0, 3.0, 5.0, 7.0]))
        np.testing.assert_array_equal(out.data, [2.0, 6.0])

    def test_constant(self):
        out = F.avgpool_lastdim(Tensor(np.full((3, 8), 2.5)))
        np.testing.assert_array_equal(out.data, np.full((3, 4), 2.5))

    def test_odd_length_replicates_last(self):
        out = F.avgpool_lastdim(Tensor([1.0, 3.0, 5.0]))
        np.testing.assert_array_equal(out.data, [2.0, 5.0])

    @pytest.mark.parametrize("L", [6, 7])
    def test_grad(self, rng, L):
        x = t64(rng, 2, L)
        assert check_gradients(lambda: (F.avgpool_lastdim(x) ** 2).sum(), [x]).rel_error < 1e-3


class TestInterpolate:
    def test_constant_up(self):
        out = F.interpolate2d(Tensor(np.full((2, 3, 5), 1.25)), 2)
        assert out.shape == (2, 6, 10)
        np.testing.assert_allclose(out.data, 1.25)

    def test_half_of_2x2(self):
        out = F.interpolate2d(Tensor([[[1.0, 3.0], [5.0, 7.0]]]), 0.5)
        np.testing.assert_array_equal(out.data, [[[4.0]]])

    def test_up_then_down_constant_identity(self):
        x = np.full((1, 4, 4), -0.3, dtype=np.float32)
        out = F.interpolate2d(F.interpolate2d(Tensor(x), 2), 0.5)
        np.testing.assert_allclose(out.data, x, rtol=1e-6)

    def test_non_integral(self):
        with pytest.raises(ShapeError):
            F.interpolate2d(Tensor(np.zeros((1, 3, 3))), 0.5)
        with pytest.raises(ShapeError):
            F.interpolate2d(Tensor(np.zeros((1, 4, 4))), 3)

    def test_upsample_matches_separable_oracle(self, rng):
        # half-pixel bilinear: out[2i] = .75 a[i] + .25 a[i-1], out[2i+1] = .75 a[i] + .25 a[i+1], edges clamped
        a = rng.standard_normal(5)
        ref = np.empty(10)
        for i in range(5):
            ref[2 * i] = 0.75 * a[i] + 0.25 * a[max(i - 1, 0)]
            ref[2 * i + 1] = 0.75 * a[i] + 0.25 * a[min(i + 1, 4)]
        out = F.upsample2x(Tensor(np.tile(a, (1, 1, 1)), dtype=np.float64)).data
        np.testing.assert_allclose(out[0, 0], ref, rtol=1e-12)
        np.testing.assert_allclose(out[0, 1], ref, rtol=1e-12)


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = Tensor(rng.random((2, 3, 4)), requires_grad=True)
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((2, 3, 4)))

    def test_square(self):
        x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_non_scalar_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2).backward()

    def test_interior_nodes_get_grads(self):
        x = Tensor([1.0, -2.0], requires_grad=True)
        y = x * 3
        z = F.relu(y)
        z.sum().backward()
        assert y.grad is not None and z.grad is not None
        np.testing.assert_array_equal(y.grad, [1.0, 0.0])

    def test_replay_after_reset_is_identical(self, rng):
        w = t64(rng, 3, 3)
        x = t64(rng, 3, 3, grad=False)
        loss = F.tanh(w @ x).sum() * F.sigmoid(w).sum()
        loss.backward()
        first = w.grad.copy()
        w.grad = None
        loss.backward()
        np.testing.assert_array_equal(w.grad, first)
        assert tape(loss)[-1] is loss

    def test_leaf_accumulates(self):
        x = Tensor([1.0], requires_grad=True)
        loss = (x * 2).sum()
        loss.backward()
        loss.backward()
        np.testing.assert_array_equal(x.grad, [4.0])

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 2
        assert not y.requires_grad

    def test_composite_net_against_fd(self, rng):
        x = t64(rng, 2, 3, 6, 6, grad=False)
        w1, b1 = t64(rng, 4, 3, 3, 3, scale=0.3), t64(rng, 4)
        w2 = t64(rng, 2, 4, 3, 3, scale=0.3)

        def f():
            h = F.relu(F.instance_norm(F.conv2d(x, w1, b1, padding=1)))
            h = F.conv2d(h, w2, stride=2, padding=1)
            return (F.softmax(h, axis=1) * F.tanh(h)).sum()

        assert check_gradients(f, [w1, b1, w2]).rel_error < 1e-3


@pytest.mark.parametrize("case", CASES, ids=lambda c: c.name)
def test_op_gradients_match_finite_differences(case, rng):
    ins = case.build(rng)
    res = check_gradients(lambda: case.fn(*ins).sum(), ins, eps=1e-5)
    assert res.rel_error < 1e-3, res


def test_suite_covers_every_op():
    names = {c.name for c in CASES}
    assert {"conv2d", "matmul", "sample_lastdim", "correlation_lookup", "convex_upsample", "batch_norm"} <= names


class TestNormalisation:
    def test_softmax_sums_to_one(self, rng):
        x = Tensor(rng.standard_normal((3, 9, 4, 5)) * 10)
        s = F.softmax(x, axis=1).data
        assert (s >= 0).all()
        np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-6)

    def test_instance_norm_moments(self, rng):
        x = Tensor(rng.standard_normal((2, 4, 8, 8)) * 3 + 5)
        y = F.instance_norm(x).data
        assert np.abs(y.mean(axis=(2, 3))).max() < 1e-5
        assert np.abs(y.var(axis=(2, 3)) - 1).max() < 1e-4

    def test_batch_norm_running_stats_and_eval(self, rng):
        bn = BatchNorm2d(3)
        x = Tensor(rng.standard_normal((4, 3, 5, 5)) + 2.0)
        y = bn(x).data
        np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0, atol=1e-5)
        assert np.all(bn.running_mean > 0.1)
        bn.eval()
        y_eval = bn(x).data
        assert not np.allclose(y_eval, y)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=2, max_dims=3, max_side=6),
                  elements=st.floats(-50, 50)))
def test_softmax_property(arr):
    s = F.softmax(Tensor(arr, dtype=np.float64), axis=-1).data
    assert (s >= 0).all()
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(hnp.arrays(np.float64, st.tuples(st.integers(1, 3), st.integers(1, 9)), elements=st.floats(-1e3, 1e3)))
def test_avgpool_pairwise_mean_property(arr):
    out = F.avgpool_lastdim(Tensor(arr, dtype=np.float64)).data
    L = arr.shape[-1]
    padded = np.concatenate([arr, arr[:, -1:]], axis=-1) if L % 2 else arr
    for i in range(out.shape[-1]):
        np.testing.assert_allclose(out[:, i], (padded[:, 2 * i] + padded[:, 2 * i + 1]) / 2)

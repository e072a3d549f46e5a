import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardiac_mos.gradcheck import grad_check, projected
from cardiac_mos.layers import (
    ConvKIKernel,
    NLBlockParams,
    conv_ki_forward,
    embed_width,
    interpolate_kernel,
    nl_attention,
    nl_block_forward,
)
from cardiac_mos.tensor import Tensor


def T(x):
    return Tensor(np.asarray(x, dtype=np.float64))


def profile_kernel(values):
    return T(np.asarray(values, dtype=np.float64).reshape(1, 1, -1, 1))


def random_nl(rng, c, scope, theta=True):
    ce = embed_width(c)
    th = rng.standard_normal((ce, c)) if theta else np.zeros((ce, c))
    return NLBlockParams(T(rng.standard_normal((c, ce))), T(rng.standard_normal((c, ce))), T(rng.standard_normal((c, ce))), T(th), scope)


def brute_nl(x, p):
    """Loop-level embedded-Gaussian block on [P, C] positions."""
    phi, psi, g = x @ p.phi_w.data, x @ p.psi_w.data, x @ p.g_w.data
    P = x.shape[0]
    y = np.zeros_like(g)
    for i in range(P):
        h = [math.exp(float(phi[i] @ psi[j])) for j in range(P)]
        norm = sum(h)
        for j in range(P):
            y[i] += h[j] / norm * g[j]
    return y @ p.theta_w.data + x


# interpolate_kernel


def test_interpolation_identity_is_bitwise():
    k0 = T(np.random.default_rng(0).standard_normal((1, 1, 20, 16)))
    out = interpolate_kernel(ConvKIKernel(k0), 20)
    assert out.data.tobytes() == k0.data.tobytes()


def test_interpolation_examples():
    np.testing.assert_array_equal(interpolate_kernel(profile_kernel([0.0, 1.0]), 3).data.ravel(), [0.0, 0.5, 1.0])
    np.testing.assert_array_equal(interpolate_kernel(profile_kernel([1.0, 3.0, 2.0]), 5).data.ravel(), [1.0, 2.0, 3.0, 2.5, 2.0])


def test_interpolation_matches_numpy_interp():
    rng = np.random.default_rng(1)
    k0 = rng.standard_normal(20)
    for n in (25, 13, 2):
        expected = np.interp(np.linspace(0, 19, n), np.arange(20), k0)
        np.testing.assert_allclose(interpolate_kernel(profile_kernel(k0), n).data.ravel(), expected, atol=1e-12)


def test_interpolation_rejects_short_sequences():
    with pytest.raises(ValueError):
        interpolate_kernel(profile_kernel([1.0, 2.0]), 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 30), st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 1000))
def test_interpolation_is_linear(n, a, b, seed):
    rng = np.random.default_rng(seed)
    k, kp = rng.standard_normal((1, 1, 7, 3)), rng.standard_normal((1, 1, 7, 3))
    lhs = interpolate_kernel(T(a * k + b * kp), n).data
    rhs = a * interpolate_kernel(T(k), n).data + b * interpolate_kernel(T(kp), n).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10)


# conv_ki_forward


def test_conv_ki_examples():
    x = np.random.default_rng(2).standard_normal((4, 3, 6))
    ones = T(np.ones((1, 1, 6, 2)))
    np.testing.assert_allclose(conv_ki_forward(T(x), ones).data, np.repeat(x.sum(-1, keepdims=True), 2, -1), atol=1e-12)

    k0 = T(np.random.default_rng(3).standard_normal((1, 1, 5, 2)))
    const = conv_ki_forward(T(np.ones((2, 2, 9))), k0).data
    np.testing.assert_allclose(const, np.broadcast_to(interpolate_kernel(k0, 9).data.sum(axis=2)[0], (2, 2, 2)), atol=1e-12)

    x = np.zeros((2, 2, 3))
    x[1, 0] = [1.0, 0.0, 1.0]
    out = conv_ki_forward(T(x), profile_kernel([1.0, 3.0, 2.0])).data
    assert out[1, 0, 0] == 3.0 and out.sum() == 3.0


def test_conv_ki_accepts_several_lengths():
    k = ConvKIKernel(T(np.random.default_rng(4).standard_normal((1, 1, 20, 4))))
    for n in (20, 25, 2):
        assert conv_ki_forward(T(np.ones((3, 5, 6, n))), k).shape == (3, 5, 6, 4)
    with pytest.raises(ValueError):
        conv_ki_forward(T(np.ones((5, 6, 1))), k)


def test_conv_ki_kernel_validation():
    with pytest.raises(ValueError):
        ConvKIKernel(T(np.ones((1, 1, 1, 4))))


@pytest.mark.parametrize("n", [5, 7, 3])
def test_conv_ki_gradcheck(n):
    rng = np.random.default_rng(n)
    x, k0 = T(rng.standard_normal((2, 3, n))), T(rng.standard_normal((1, 1, 5, 3)))
    assert grad_check(projected(conv_ki_forward, (2, 3, 3)), x, k0) <= 1e-4


# nl_attention


def test_attention_examples():
    rng = np.random.default_rng(5)
    x = T(rng.standard_normal((7, 4)))
    p = random_nl(rng, 4, "segment")
    p.phi_w = T(np.zeros((4, 2)))
    np.testing.assert_allclose(nl_attention(x, p).data, np.full((7, 7), 1 / 7), atol=1e-15)
    assert nl_attention(T(rng.standard_normal((1, 4))), random_nl(rng, 4, "segment")).data.tolist() == [[1.0]]

    ident = NLBlockParams(T([[1.0]]), T([[1.0]]), T([[1.0]]), T([[1.0]]))
    e, e2 = math.e, math.exp(2)
    np.testing.assert_allclose(nl_attention(T([[1.0], [2.0]]), ident).data[0], [e / (e + e2), e2 / (e + e2)], atol=1e-12)
    np.testing.assert_allclose(nl_attention(T([[1.0], [2.0]]), ident).data[0], [0.26894, 0.73106], atol=1e-5)


def test_attention_rows_sum_to_one_1000_cases():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        c = int(rng.integers(1, 9))
        x = T(rng.standard_normal((int(rng.integers(1, 30)), c)) * rng.uniform(0.1, 5))
        w = nl_attention(x, random_nl(rng, c, "segment")).data
        assert np.all(w >= 0)
        worst = max(worst, float(np.abs(w.sum(axis=1) - 1).max()))
    assert worst <= 1e-6


# nl_block_forward


def test_nl_block_hand_example():
    ident = NLBlockParams(T([[1.0]]), T([[1.0]]), T([[1.0]]), T([[1.0]]), "subject")
    z = nl_block_forward(T(np.array([1.0, 2.0]).reshape(1, 2, 1, 1)), ident).data.ravel()
    # row 0 = softmax([1, 2]), row 1 = softmax([2, 4]), applied to g = x = [1, 2]
    y = np.array([(math.e * 1 + math.exp(2) * 2) / (math.e + math.exp(2)), (math.exp(2) * 1 + math.exp(4) * 2) / (math.exp(2) + math.exp(4))])
    np.testing.assert_allclose(z, y + [1.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(z, [2.7310586, 3.8807971], atol=1e-6)


@pytest.mark.parametrize("scope", ["segment", "subject"])
def test_nl_block_matches_brute_force(scope):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((3, 2, 3, 4))
    p = random_nl(rng, 4, scope)
    out = nl_block_forward(T(x), p).data
    if scope == "segment":
        expected = np.stack([brute_nl(x[b].reshape(6, 4), p).reshape(2, 3, 4) for b in range(3)])
    else:
        expected = brute_nl(x.reshape(18, 4), p).reshape(3, 2, 3, 4)
    np.testing.assert_allclose(out, expected, atol=1e-10)


@pytest.mark.parametrize("scope", ["segment", "subject"])
def test_zero_theta_is_bitwise_identity(scope):
    rng = np.random.default_rng(8)
    for dtype in (np.float32, np.float64):
        x = Tensor(rng.standard_normal((16, 5, 4, 8)).astype(dtype))
        p = NLBlockParams.init(8, scope, rng, dtype)
        assert nl_block_forward(x, p).data.tobytes() == x.data.tobytes()


def test_scopes_agree_at_batch_one():
    rng = np.random.default_rng(9)
    x = T(rng.standard_normal((1, 4, 3, 6)))
    p = random_nl(rng, 6, "segment")
    q = NLBlockParams(p.phi_w, p.psi_w, p.g_w, p.theta_w, "subject")
    assert nl_block_forward(x, p).data.tobytes() == nl_block_forward(x, q).data.tobytes()


def test_subject_scope_permutation_equivariance():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((16, 5, 4, 6))
    p = random_nl(rng, 6, "subject")
    perm = rng.permutation(16)
    out = nl_block_forward(T(x), p).data
    np.testing.assert_allclose(nl_block_forward(T(x[perm]), p).data, out[perm], atol=1e-6)


def test_subject_scope_couples_segments_segment_scope_does_not():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((3, 2, 2, 4))
    x2 = x.copy()
    x2[2] += 1.0
    seg = random_nl(rng, 4, "segment")
    sub = NLBlockParams(seg.phi_w, seg.psi_w, seg.g_w, seg.theta_w, "subject")
    assert nl_block_forward(T(x), seg).data[0].tobytes() == nl_block_forward(T(x2), seg).data[0].tobytes()
    assert not np.allclose(nl_block_forward(T(x), sub).data[0], nl_block_forward(T(x2), sub).data[0])


def test_nl_block_errors():
    rng = np.random.default_rng(12)
    with pytest.raises(ValueError):
        nl_block_forward(T(np.zeros((0, 2, 2, 4))), random_nl(rng, 4, "segment"))
    with pytest.raises(ValueError):
        nl_block_forward(T(np.zeros((1, 2, 2, 3))), random_nl(rng, 4, "segment"))
    with pytest.raises(ValueError):
        random_nl(rng, 4, "global")


def test_nl_init_shapes_and_zero_theta():
    p = NLBlockParams.init(64, "subject", np.random.default_rng(0))
    assert p.phi_w.shape == p.psi_w.shape == p.g_w.shape == (64, 32)
    assert p.theta_w.shape == (32, 64) and not p.theta_w.data.any()
    assert embed_width(1) == 1


@pytest.mark.parametrize("scope", ["segment", "subject"])
@pytest.mark.parametrize("B", [1, 3])
def test_nl_block_gradcheck(scope, B):
    rng = np.random.default_rng(B)
    x = T(rng.standard_normal((B, 3, 2, 4)))
    p = random_nl(rng, 4, scope)

    def fn(x, a, b, g, th):
        return nl_block_forward(x, NLBlockParams(a, b, g, th, scope))

    assert grad_check(projected(fn, (B, 3, 2, 4)), x, p.phi_w, p.psi_w, p.g_w, p.theta_w) <= 1e-4

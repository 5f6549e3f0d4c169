import math

import numpy as np
import pytest
import torch

from gradcheck import max_relative_deviation
from lmdsurrogate.fields import ConditioningInput, ParameterError
from lmdsurrogate.nn import (AttentionWeights, ConditioningHead, ConfigurationError, ConvSelfAttention,
                             PhysicsConv2d, ThetaScaling, UsageError, attention_matrix, conditioning_vectors,
                             conv2d, conv_self_attention, film_scale, gradients, physics_pad, relative_l2_loss)

D = torch.float64


# ---------------------------------------------------------------- oracles

def pad_oracle(x, p):
    x = x.numpy()
    *lead, H, W = x.shape
    out = np.zeros((*lead, H + 2 * p, W + 2 * p))
    for r in range(H + 2 * p):
        for c in range(W + 2 * p):
            src_r = r - p
            src_c = (c - p) % W
            if src_r < 0:
                out[..., r, c] = 0.0
            elif src_r >= H:
                out[..., r, c] = x[..., H - 1, src_c]
            else:
                out[..., r, c] = x[..., src_r, src_c]
    return out


def conv_oracle(x, k, b):
    xp = pad_oracle(x, k.shape[-1] // 2)
    B, Ci, H, W = x.shape
    Co, _, K, _ = k.shape
    out = np.zeros((B, Co, H, W))
    k = k.numpy()
    for n in range(B):
        for o in range(Co):
            for r in range(H):
                for c in range(W):
                    acc = float(b[o])
                    for i in range(Ci):
                        for u in range(K):
                            for v in range(K):
                                acc += k[o, i, u, v] * xp[n, i, r + u, c + v]
                    out[n, o, r, c] = acc
    return out


def attention_oracle(x, w: AttentionWeights):
    x = x.numpy()
    Wq, Wk, Wv, Wo = (a.numpy()[:, :, 0, 0] for a in (w.Wq, w.Wk, w.Wv, w.Wo))
    B, C, H, W = x.shape
    N = H * W
    d = Wq.shape[0]
    out = np.zeros_like(x)
    for n in range(B):
        feats = x[n].reshape(C, N)
        q = [[sum(Wq[a, c] * feats[c, i] for c in range(C)) for a in range(d)] for i in range(N)]
        k = [[sum(Wk[a, c] * feats[c, j] for c in range(C)) for a in range(d)] for j in range(N)]
        v = [[sum(Wv[o, c] * feats[c, j] for c in range(C)) for o in range(C)] for j in range(N)]
        for i in range(N):
            scores = [sum(q[i][a] * k[j][a] for a in range(d)) / math.sqrt(d) for j in range(N)]
            m = max(scores)
            e = [math.exp(s - m) for s in scores]
            z = sum(e)
            y = [sum(e[j] / z * v[j][o] for j in range(N)) for o in range(C)]
            for o in range(C):
                out[n, o, i // W, i % W] = feats[o, i] + sum(Wo[o, c] * y[c] for c in range(C))
    return out


def random_weights(C, gen, scale=0.5):
    d = C // 8
    return AttentionWeights(*(scale * torch.randn(s, generator=gen, dtype=D)
                              for s in ((d, C, 1, 1), (d, C, 1, 1), (C, C, 1, 1), (C, C, 1, 1))))


# ---------------------------------------------------------------- padding

def test_pad_single_value():
    out = physics_pad(torch.full((1, 1, 1, 1), 2.5), 1)[0, 0]
    assert out.tolist() == [[0, 0, 0], [2.5, 2.5, 2.5], [2.5, 2.5, 2.5]]


def test_pad_zero_is_identity():
    x = torch.randn(2, 3, 4, 5)
    assert physics_pad(x, 0) is x


def test_pad_random_matches_oracle():
    x = torch.randn(2, 3, 4, 5, dtype=D)
    assert np.array_equal(physics_pad(x, 2).numpy(), pad_oracle(x, 2))


def test_pad_rejects_excess():
    with pytest.raises(ParameterError):
        physics_pad(torch.zeros(1, 1, 2, 6), 3)
    with pytest.raises(ParameterError):
        physics_pad(torch.zeros(1, 1, 4, 4), -1)


def test_pad_adjoint():
    x = torch.zeros(1, 1, 3, 4, dtype=D, requires_grad=True)
    y = physics_pad(x, 1)
    (g,) = gradients(y.sum(), [x])
    # each data cell appears once in the interior; edge columns are copied once more
    # by the wrap, the bottom row twice more by replication (incl. its wrapped corners)
    want = np.ones((3, 4))
    want[:, 0] += 1
    want[:, -1] += 1
    want[-1] *= 2
    assert np.array_equal(g[0, 0].numpy(), want)
    # zero top rows carry no dependence on the data
    gtop = torch.autograd.grad(y[..., 0, :].sum(), x, allow_unused=True)[0]
    assert gtop is None or torch.all(gtop == 0)


# ---------------------------------------------------------------- convolution

def test_conv_identity_kernel(rng):
    x = torch.randn(2, 3, 5, 6, dtype=D)
    k = torch.zeros(3, 3, 3, 3, dtype=D)
    for i in range(3):
        k[i, i, 1, 1] = 1.0
    assert torch.equal(conv2d(x, k, torch.zeros(3, dtype=D)), x)


def test_conv_edge_rules():
    v = 1.7
    x = torch.full((1, 1, 6, 6), v, dtype=D)
    out = conv2d(x, torch.ones(1, 1, 3, 3, dtype=D))[0, 0]
    assert torch.allclose(out[2:4], torch.full((2, 6), 9 * v, dtype=D), rtol=1e-14, atol=0)
    assert torch.allclose(out[0], torch.full((6,), 6 * v, dtype=D), rtol=1e-14, atol=0)
    assert torch.allclose(out[-1], torch.full((6,), 9 * v, dtype=D), rtol=1e-14, atol=0)


def test_conv_loop_oracle():
    g = torch.Generator().manual_seed(3)
    x = torch.randn(2, 2, 5, 4, generator=g, dtype=D)
    k = torch.randn(3, 2, 3, 3, generator=g, dtype=D)
    b = torch.randn(3, generator=g, dtype=D)
    np.testing.assert_allclose(conv2d(x, k, b).numpy(), conv_oracle(x, k, b), rtol=0, atol=1e-13)


def test_conv_rejects_even_kernel():
    with pytest.raises(ParameterError):
        conv2d(torch.zeros(1, 1, 4, 4), torch.zeros(1, 1, 2, 2))


def test_physics_conv_module_shapes():
    m = PhysicsConv2d(3, 8)
    assert m(torch.zeros(2, 3, 16, 8)).shape == (2, 8, 16, 8)


# ---------------------------------------------------------------- attention

def test_attention_constant_input():
    g = torch.Generator().manual_seed(0)
    x = torch.full((1, 8, 3, 4), 0.3, dtype=D)
    w = random_weights(8, g)
    A = attention_matrix(x, w.Wq, w.Wk)
    assert torch.allclose(A, torch.full_like(A, 1 / 12), rtol=0, atol=1e-15)
    y = conv_self_attention(x, w)
    assert torch.allclose(y, y[..., :1, :1].expand_as(y), rtol=0, atol=1e-14)


def test_attention_permutation_equivariance():
    g = torch.Generator().manual_seed(1)
    x = torch.randn(2, 16, 3, 5, generator=g, dtype=D)
    w = random_weights(16, g)
    perm = torch.randperm(15, generator=g)
    xp = x.flatten(2)[..., perm].reshape_as(x)
    y = conv_self_attention(x, w).flatten(2)[..., perm]
    assert torch.allclose(conv_self_attention(xp, w).flatten(2), y, rtol=1e-12, atol=1e-12)


def test_attention_dense_oracle():
    g = torch.Generator().manual_seed(2)
    x = torch.randn(1, 8, 3, 4, generator=g, dtype=D)
    w = random_weights(8, g)
    want = attention_oracle(x, w)
    got = conv_self_attention(x, w).numpy()
    assert np.linalg.norm(got - want) / np.linalg.norm(want) <= 1e-6


def test_attention_module_starts_as_identity():
    m = ConvSelfAttention(16)
    x = torch.randn(2, 16, 4, 4)
    assert torch.equal(m(x), x)


def test_attention_channel_requirement():
    with pytest.raises(ConfigurationError):
        ConvSelfAttention(12)


# ---------------------------------------------------------------- conditioning

def test_full_width_head_sizes():
    head = ConditioningHead((32, 64, 128, 256, 512))
    out = head(torch.zeros(1, 2))
    assert [o.shape[-1] for o in out] == [32, 64, 128, 256, 512]


def test_conditioning_deterministic():
    head = ConditioningHead((8, 16)).double()
    for layer in head.out:
        torch.nn.init.normal_(layer.weight)
    th = ConditioningInput(2.0, 0.3)
    a = conditioning_vectors(th, head)
    b = conditioning_vectors(th, head)
    assert all(torch.equal(u, v) for u, v in zip(a, b))


def test_conditioning_jacobian_finite_differences():
    head = ConditioningHead((8, 16)).double()
    for layer in head.out:
        torch.nn.init.normal_(layer.weight, std=0.3)
    t = torch.tensor([[0.4, 0.7]], dtype=D)
    jac = torch.autograd.functional.jacobian(lambda z: torch.cat(head(z), dim=1), t)[0, :, 0, :]
    h = 1e-6
    for k in range(2):
        e = torch.zeros_like(t)
        e[0, k] = h
        fd = (torch.cat(head(t + e), 1) - torch.cat(head(t - e), 1))[0] / (2 * h)
        assert torch.allclose(jac[:, k], fd, rtol=1e-5, atol=1e-9)


def test_theta_scaling():
    sc = ThetaScaling()
    assert sc.normalize(1.0, 0.2) == (0.0, 0.0)
    assert sc.normalize(4.0, 0.4) == pytest.approx((1.0, 1.0))
    with pytest.raises(ParameterError):
        ThetaScaling(dtau_min=2.0, dtau_max=1.0)


def test_film_identity_and_annihilation():
    x = torch.randn(2, 4, 3, 3, dtype=D)
    assert torch.equal(film_scale(x, torch.zeros(4, dtype=D)), x)
    assert torch.all(film_scale(x, -torch.ones(4, dtype=D)) == 0)


def test_film_loop_oracle():
    x = torch.randn(2, 3, 2, 2, dtype=D)
    s = torch.randn(2, 3, dtype=D)
    got = film_scale(x, s)
    for n in range(2):
        for c in range(3):
            for i in range(2):
                for j in range(2):
                    assert got[n, c, i, j] == x[n, c, i, j] * (1 + s[n, c])


def test_film_length_mismatch():
    with pytest.raises(ParameterError):
        film_scale(torch.zeros(1, 4, 2, 2), torch.zeros(3))


# ---------------------------------------------------------------- gradients

def test_gradients_requires_graph():
    with pytest.raises(UsageError):
        gradients(torch.tensor(1.0), [torch.tensor(2.0)])


def test_relative_l2_loss_gradient():
    g = torch.Generator().manual_seed(5)
    target = torch.rand(2, 3, 4, 4, generator=g, dtype=D)
    pred = target + 0.05 * torch.randn(2, 3, 4, 4, generator=g, dtype=D)
    assert max_relative_deviation(lambda p: relative_l2_loss(p, target), [pred]) <= 1e-4


def test_relative_l2_loss_value():
    t = torch.ones(2, 1, 2, 2, dtype=D)
    assert relative_l2_loss(1.1 * t, t).item() == pytest.approx(0.1)


def test_primitive_gradients():
    g = torch.Generator().manual_seed(6)
    x = torch.randn(1, 8, 4, 4, generator=g, dtype=D)
    k = torch.randn(8, 8, 3, 3, generator=g, dtype=D)
    b = torch.randn(8, generator=g, dtype=D)
    w = random_weights(8, g)
    s = torch.randn(8, generator=g, dtype=D)
    r = torch.randn(1, 8, 4, 4, generator=g, dtype=D)
    checks = {
        "pad": (lambda a: (physics_pad(a, 2) ** 2).sum(), [x]),
        "conv": (lambda a, kk, bb: (conv2d(a, kk, bb) * torch.sin(conv2d(a, kk, bb))).sum(), [x, k, b]),
        "attention": (lambda a, q, kk, v, o: (conv_self_attention(a, AttentionWeights(q, kk, v, o)) * r).sum(),
                      [x, w.Wq, w.Wk, w.Wv, w.Wo]),
        "film": (lambda a, ss: (film_scale(a, ss) ** 2).sum(), [x, s]),
    }
    for name, (f, args) in checks.items():
        assert max_relative_deviation(f, args) <= 1e-4, name

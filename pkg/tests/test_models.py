import numpy as np
import pytest

from hymirec.models import Adam, InterestModel, ModelConfig, cosine_schedule, pad_left
from hymirec.models.layers import attention_mask, gelu_bwd, gelu_fwd, layernorm_bwd, layernorm_fwd


def small_config(**kw):
    base = dict(dim=6, d_model=8, n_heads=2, layers_light=1, layers_refined=1, d_ff=16,
                n_interests=2, n_last=3, l_max=6)
    base.update(kw)
    return ModelConfig(**base)


def random_batch(cfg, B=2, seed=0, hist_lens=(6, 3), last_lens=(3, 1)):
    rng = np.random.default_rng(seed)
    h, hv = pad_left([rng.normal(size=(n, cfg.dim)) for n in hist_lens[:B]], cfg.dim, cfg.l_max)
    l, lv = pad_left([rng.normal(size=(n, cfg.dim)) for n in last_lens[:B]], cfg.dim, cfg.n_last)
    return h, hv, l, lv


def fd_check(model, batch, W, step=1e-4):
    """Max relative error between analytic and central-difference gradients,
    per parameter tensor, for the scalar loss sum(W * R)."""
    model.forward(*batch)
    grads = model.backward(W)
    worst = {}
    for name, P in model.params.items():
        num = np.zeros_like(P)
        flat = P.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + step
            up = (model.forward(*batch, cache=False) * W).sum()
            flat[i] = old - step
            dn = (model.forward(*batch, cache=False) * W).sum()
            flat[i] = old
            num.reshape(-1)[i] = (up - dn) / (2 * step)
        a, n = grads[name], num
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        # key biases only shift every logit of a row equally: their true gradient is 0
        worst[name] = 0.0 if scale < 1e-7 else np.linalg.norm(a - n) / scale
    return worst


@pytest.mark.parametrize("kw", [{}, {"use_light": False}, {"use_indicator": False},
                                {"n_coarse": 3}])
def test_gradients_match_finite_differences(kw):
    cfg = small_config(**kw)
    model = InterestModel(cfg, seed=1)
    batch = random_batch(cfg)
    W = np.random.default_rng(2).normal(size=(2, cfg.n_interests, cfg.dim))
    worst = fd_check(model, batch, W)
    bad = {k: v for k, v in worst.items() if v > 1e-3}
    assert not bad, bad


def test_coarse_queries_receive_gradient_through_refined_path():
    cfg = small_config()
    model = InterestModel(cfg, seed=3)
    batch = random_batch(cfg)
    model.forward(*batch)
    g = model.backward(np.ones((2, 2, cfg.dim)))
    assert np.linalg.norm(g["q_coarse"]) > 0
    assert np.linalg.norm(g["indicator"]) > 0


def test_outputs_are_unit_norm():
    cfg = small_config()
    R = InterestModel(cfg, seed=0).forward(*random_batch(cfg), cache=False)
    np.testing.assert_allclose(np.linalg.norm(R, axis=-1), 1.0, atol=1e-12)
    assert R.shape == (2, 2, cfg.dim)


def test_padding_does_not_change_output():
    cfg = small_config()
    model = InterestModel(cfg, seed=0)
    h, hv, l, lv = random_batch(cfg)
    R = model.forward(h, hv, l, lv, cache=False)
    h2, l2 = h.copy(), l.copy()
    h2[~hv] = 123.0
    l2[~lv] = -55.0
    np.testing.assert_allclose(model.forward(h2, hv, l2, lv, cache=False), R, atol=1e-12)


def test_batch_rows_are_independent():
    cfg = small_config()
    model = InterestModel(cfg, seed=0)
    h, hv, l, lv = random_batch(cfg)
    R = model.forward(h, hv, l, lv, cache=False)
    R0 = model.forward(h[:1], hv[:1], l[:1], lv[:1], cache=False)
    np.testing.assert_allclose(R[:1], R0, atol=1e-12)


def test_refined_queries_ignore_later_query_positions():
    # causal: the first refined query cannot see the second one
    cfg = small_config()
    model = InterestModel(cfg, seed=0)
    batch = random_batch(cfg)
    R = model.forward(*batch, cache=False)
    model.params["q_refined"][1] += np.random.default_rng(1).normal(size=cfg.d_model)
    R2 = model.forward(*batch, cache=False)
    np.testing.assert_allclose(R2[:, 0], R[:, 0], atol=1e-12)
    assert not np.allclose(R2[:, 1], R[:, 1])


def test_history_only_reaches_refined_through_coarse():
    cfg = small_config(use_light=False)
    model = InterestModel(cfg, seed=0)
    h, hv, l, lv = random_batch(cfg)
    R = model.forward(h, hv, l, lv, cache=False)
    np.testing.assert_allclose(model.forward(h * 7, hv, l, lv, cache=False), R)


def test_backward_requires_forward():
    model = InterestModel(small_config(), seed=0)
    with pytest.raises(RuntimeError):
        model.backward(np.zeros((1, 2, 6)))


def test_too_long_history_rejected():
    cfg = small_config()
    model = InterestModel(cfg, seed=0)
    h, hv = pad_left([np.ones((cfg.l_max + 1, cfg.dim))], cfg.dim)
    l, lv = pad_left([np.ones((1, cfg.dim))], cfg.dim, cfg.n_last)
    with pytest.raises(ValueError):
        model.forward(h, hv, l, lv)


def test_copy_is_independent():
    model = InterestModel(small_config(), seed=0)
    other = model.copy()
    other.params["q_refined"] += 1
    assert not np.allclose(other.params["q_refined"], model.params["q_refined"])


class TestMask:
    def test_padded_keys_blocked_and_self_allowed(self):
        valid = np.array([[False, True, True]])
        m = attention_mask(valid, causal=False)[0, 0]
        assert not m[1, 0] and not m[2, 0]
        assert m[0, 0]
        assert m[1, 2] and m[2, 1]

    def test_causal_is_lower_triangular(self):
        m = attention_mask(np.ones((1, 4), dtype=bool), causal=True)[0, 0]
        np.testing.assert_array_equal(m, np.tril(np.ones((4, 4), dtype=bool)))


class TestPrimitives:
    def test_gelu_derivative(self):
        x = np.linspace(-4, 4, 41)
        y, cache = gelu_fwd(x)
        eps = 1e-6
        num = (gelu_fwd(x + eps)[0] - gelu_fwd(x - eps)[0]) / (2 * eps)
        np.testing.assert_allclose(gelu_bwd(np.ones_like(x), cache), num, atol=1e-8)
        assert gelu_fwd(np.array([0.0]))[0][0] == 0.0

    def test_layernorm_backward(self):
        rng = np.random.default_rng(0)
        x, g, b = rng.normal(size=(3, 5)), rng.normal(size=5), rng.normal(size=5)
        dy = rng.normal(size=(3, 5))
        y, cache = layernorm_fwd(x, g, b)
        grads = {"ln.g": np.zeros(5), "ln.b": np.zeros(5)}
        dx = layernorm_bwd(dy, cache, grads, "ln")
        eps = 1e-6
        num = np.zeros_like(x)
        for idx in np.ndindex(*x.shape):
            xp, xm = x.copy(), x.copy()
            xp[idx] += eps
            xm[idx] -= eps
            num[idx] = ((layernorm_fwd(xp, g, b)[0] - layernorm_fwd(xm, g, b)[0]) * dy).sum() / (2 * eps)
        np.testing.assert_allclose(dx, num, atol=1e-7)


def test_pad_left():
    out, valid = pad_left([np.ones((2, 3)), np.ones((1, 3))], 3, width=4)
    assert out.shape == (2, 4, 3)
    np.testing.assert_array_equal(valid, [[0, 0, 1, 1], [0, 0, 0, 1]])
    assert out[1, :3].sum() == 0


class TestOptim:
    def test_schedule_warmup_then_cosine(self):
        lrs = [cosine_schedule(t, 100, 1.0, 0.1) for t in range(100)]
        assert lrs[0] < lrs[5] < lrs[9] <= 1.0
        assert max(lrs) == pytest.approx(1.0, abs=0.02)
        assert all(a >= b for a, b in zip(lrs[10:], lrs[11:]))
        assert lrs[-1] < 0.01

    def test_adam_minimizes_quadratic(self):
        p = {"x": np.array([3.0, -2.0])}
        opt = Adam(p, lr=0.1)
        for _ in range(500):
            opt.step(p, {"x": 2 * p["x"]})
        np.testing.assert_allclose(p["x"], 0.0, atol=1e-2)

    def test_clip_norm_bounds_first_step(self):
        p = {"x": np.zeros(3)}
        opt = Adam(p, lr=1.0, clip_norm=1.0)
        opt.step(p, {"x": np.array([100.0, 0, 0])})
        # Adam's first step has magnitude lr regardless of scale
        assert abs(p["x"][0]) == pytest.approx(1.0, rel=1e-6)

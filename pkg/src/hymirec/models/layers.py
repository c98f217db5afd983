"""Forward/backward primitives for a small pre-LayerNorm transformer.

Every ``*_fwd`` returns ``(out, cache)`` and the matching ``*_bwd`` takes
the upstream gradient plus that cache and returns the input gradient,
accumulating parameter gradients into a ``grads`` dict keyed by name.
"""

import numpy as np

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


def _acc(grads, name, g):
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g


def linear_fwd(x, W, b):
    return x @ W + b, x


def linear_bwd(dy, x, W, grads, prefix):
    d_in = x.shape[-1]
    d_out = dy.shape[-1]
    _acc(grads, prefix + ".W", x.reshape(-1, d_in).T @ dy.reshape(-1, d_out))
    _acc(grads, prefix + ".b", dy.reshape(-1, d_out).sum(0))
    return dy @ W.T


def layernorm_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def layernorm_bwd(dy, cache, grads, prefix):
    xhat, inv, g = cache
    D = xhat.shape[-1]
    _acc(grads, prefix + ".g", (dy * xhat).reshape(-1, D).sum(0))
    _acc(grads, prefix + ".b", dy.reshape(-1, D).sum(0))
    dxhat = dy * g
    return inv * (dxhat - dxhat.mean(-1, keepdims=True)
                  - xhat * (dxhat * xhat).mean(-1, keepdims=True))


def gelu_fwd(x):
    u = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_bwd(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def attention_mask(valid, causal):
    """Boolean (B, 1, T, T) mask of allowed (query, key) pairs.

    Padded keys are blocked. Each position may always attend to itself so
    no softmax row is empty; padded rows then only see themselves and never
    leak into real positions.
    """
    B, T = valid.shape
    allowed = np.broadcast_to(valid[:, None, :], (B, T, T)).copy()
    idx = np.arange(T)
    allowed[:, idx, idx] = True
    if causal:
        allowed &= np.tril(np.ones((T, T), dtype=bool))[None]
    return allowed[:, None]


def mha_fwd(x, p, prefix, n_heads, allowed):
    B, T, D = x.shape
    dh = D // n_heads
    q = x @ p[prefix + ".q.W"] + p[prefix + ".q.b"]
    k = x @ p[prefix + ".k.W"] + p[prefix + ".k.b"]
    v = x @ p[prefix + ".v.W"] + p[prefix + ".v.b"]
    split = lambda a: a.reshape(B, T, n_heads, dh).transpose(0, 2, 1, 3)
    qh, kh, vh = split(q), split(k), split(v)
    scale = 1.0 / np.sqrt(dh)
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    scores = np.where(allowed, scores, -np.inf)
    scores -= scores.max(-1, keepdims=True)
    P = np.exp(scores)
    P /= P.sum(-1, keepdims=True)
    oh = P @ vh
    o = oh.transpose(0, 2, 1, 3).reshape(B, T, D)
    y = o @ p[prefix + ".o.W"] + p[prefix + ".o.b"]
    return y, (x, qh, kh, vh, P, o, scale)


def mha_bwd(dy, cache, p, prefix, grads):
    x, qh, kh, vh, P, o, scale = cache
    B, H, T, dh = qh.shape
    D = H * dh
    do = linear_bwd(dy, o, p[prefix + ".o.W"], grads, prefix + ".o")
    doh = do.reshape(B, T, H, dh).transpose(0, 2, 1, 3)
    dP = doh @ vh.transpose(0, 1, 3, 2)
    dvh = P.transpose(0, 1, 3, 2) @ doh
    dS = P * (dP - (dP * P).sum(-1, keepdims=True))
    dqh = (dS @ kh) * scale
    dkh = (dS.transpose(0, 1, 3, 2) @ qh) * scale
    merge = lambda a: a.transpose(0, 2, 1, 3).reshape(B, T, D)
    dx = linear_bwd(merge(dqh), x, p[prefix + ".q.W"], grads, prefix + ".q")
    dx += linear_bwd(merge(dkh), x, p[prefix + ".k.W"], grads, prefix + ".k")
    dx += linear_bwd(merge(dvh), x, p[prefix + ".v.W"], grads, prefix + ".v")
    return dx


def block_fwd(x, p, prefix, n_heads, allowed):
    h1, c_ln1 = layernorm_fwd(x, p[prefix + ".ln1.g"], p[prefix + ".ln1.b"])
    a, c_att = mha_fwd(h1, p, prefix + ".attn", n_heads, allowed)
    x2 = x + a
    h2, c_ln2 = layernorm_fwd(x2, p[prefix + ".ln2.g"], p[prefix + ".ln2.b"])
    f1, c_f1 = linear_fwd(h2, p[prefix + ".ff1.W"], p[prefix + ".ff1.b"])
    g, c_g = gelu_fwd(f1)
    f2, c_f2 = linear_fwd(g, p[prefix + ".ff2.W"], p[prefix + ".ff2.b"])
    return x2 + f2, (c_ln1, c_att, c_ln2, c_f1, c_g, c_f2)


def block_bwd(dy, cache, p, prefix, grads):
    c_ln1, c_att, c_ln2, c_f1, c_g, c_f2 = cache
    dg = linear_bwd(dy, c_f2, p[prefix + ".ff2.W"], grads, prefix + ".ff2")
    df1 = gelu_bwd(dg, c_g)
    dh2 = linear_bwd(df1, c_f1, p[prefix + ".ff1.W"], grads, prefix + ".ff1")
    dx2 = dy + layernorm_bwd(dh2, c_ln2, grads, prefix + ".ln2")
    dh1 = mha_bwd(dx2, c_att, p, prefix + ".attn", grads)
    return dx2 + layernorm_bwd(dh1, c_ln1, grads, prefix + ".ln1")


def init_block(p, prefix, d_model, d_ff, rng):
    def dense(name, fan_in, fan_out):
        p[name + ".W"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out))
        p[name + ".b"] = np.zeros(fan_out)
    for ln in ("ln1", "ln2"):
        p[f"{prefix}.{ln}.g"] = np.ones(d_model)
        p[f"{prefix}.{ln}.b"] = np.zeros(d_model)
    for part in ("q", "k", "v", "o"):
        dense(f"{prefix}.attn.{part}", d_model, d_model)
    dense(prefix + ".ff1", d_model, d_ff)
    dense(prefix + ".ff2", d_ff, d_model)


class Encoder:
    """A stack of pre-LN blocks followed by a final LayerNorm."""

    def __init__(self, prefix, n_layers, n_heads, causal):
        self.prefix = prefix
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.causal = causal

    def init(self, p, d_model, d_ff, rng):
        for i in range(self.n_layers):
            init_block(p, f"{self.prefix}.blocks.{i}", d_model, d_ff, rng)
        p[self.prefix + ".ln_f.g"] = np.ones(d_model)
        p[self.prefix + ".ln_f.b"] = np.zeros(d_model)

    def forward(self, x, p, valid):
        allowed = attention_mask(valid, self.causal)
        caches = []
        for i in range(self.n_layers):
            x, c = block_fwd(x, p, f"{self.prefix}.blocks.{i}", self.n_heads, allowed)
            caches.append(c)
        y, c_ln = layernorm_fwd(x, p[self.prefix + ".ln_f.g"], p[self.prefix + ".ln_f.b"])
        return y, (caches, c_ln)

    def backward(self, dy, cache, p, grads):
        caches, c_ln = cache
        dx = layernorm_bwd(dy, c_ln, grads, self.prefix + ".ln_f")
        for i in reversed(range(self.n_layers)):
            dx = block_bwd(dx, caches[i], p, f"{self.prefix}.blocks.{i}", grads)
        return dx

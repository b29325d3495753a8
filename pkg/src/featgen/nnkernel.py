"""Minimal differentiable kernel: linear layers, layer norm, multi-head
attention, feed-forward blocks, ReLU MLPs and the Adam update rule.

Everything is float64 and deterministic.  Each module exposes
``forward(x) -> (out, cache)``, ``backward(cache, dout) -> (dx, grads)`` and
``parameters() -> dict``; composite modules merge child parameter dicts under
dotted prefixes.  Reductions that mix token rows inside attention are computed
sort-then-sum so the block is exactly permutation-equivariant.

Checkpoint format (``save_params``/``load_params``): a NumPy ``.npz`` archive,
one array per parameter keyed by its dotted name, plus a ``__version__``
array; shapes and dtypes are stored in the npz headers.
"""

from __future__ import annotations

import numpy as np

Array = np.ndarray

LAYERNORM_EPS = 1e-5
CHECKPOINT_VERSION = 1


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int,
                   shape: tuple[int, ...] | None = None) -> Array:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out))


def _invariant_sum(x: Array, axis: int) -> Array:
    # sorting before summation makes the reduction independent of operand order
    return np.sum(np.sort(x, axis=axis), axis=axis)


def _prefixed(prefix: str, d: dict[str, Array]) -> dict[str, Array]:
    return {prefix + k: v for k, v in d.items()}


class Linear:
    def __init__(self, rng: np.random.Generator, n_in: int, n_out: int,
                 bias: bool = True):
        self.W = glorot_uniform(rng, n_in, n_out)
        self.b = np.zeros(n_out) if bias else None

    def parameters(self) -> dict[str, Array]:
        if self.b is None:
            return {"W": self.W}
        return {"W": self.W, "b": self.b}

    def forward(self, x: Array):
        y = x @ self.W
        if self.b is not None:
            y = y + self.b
        return y, x

    def backward(self, cache: Array, dout: Array):
        x = cache
        grads = {"W": x.T @ dout}
        if self.b is not None:
            grads["b"] = dout.sum(axis=0)
        return dout @ self.W.T, grads


class LayerNorm:
    def __init__(self, dim: int):
        self.gain = np.ones(dim)
        self.bias = np.zeros(dim)

    def parameters(self) -> dict[str, Array]:
        return {"gain": self.gain, "bias": self.bias}

    def forward(self, x: Array):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = np.mean(xc * xc, axis=-1, keepdims=True)
        inv = 1.0 / np.sqrt(var + LAYERNORM_EPS)
        xhat = xc * inv
        return xhat * self.gain + self.bias, (xc, inv, xhat)

    def backward(self, cache, dout: Array):
        xc, inv, xhat = cache
        dim = xhat.shape[-1]
        grads = {"gain": np.sum(dout * xhat, axis=0), "bias": dout.sum(axis=0)}
        dxhat = dout * self.gain
        dvar = np.sum(dxhat * xc, axis=-1, keepdims=True) * (-0.5) * inv ** 3
        dmu = np.sum(-dxhat * inv, axis=-1, keepdims=True) \
            + dvar * np.sum(-2.0 * xc, axis=-1, keepdims=True) / dim
        dx = dxhat * inv + dvar * 2.0 * xc / dim + dmu / dim
        return dx, grads


class MultiHeadAttention:
    """Scaled dot-product self-attention over token rows with Q/K/V/output
    projections.  Projections are bias-free: softmax(QK^T) is invariant to a
    key bias, which would otherwise be an unidentifiable parameter."""

    def __init__(self, rng: np.random.Generator, d_model: int, heads: int):
        if d_model % heads != 0:
            from .errors import ConfigError
            raise ConfigError(f"d_model={d_model} not divisible by heads={heads}")
        self.d_model = d_model
        self.heads = heads
        self.d_k = d_model // heads
        self.wq = Linear(rng, d_model, d_model, bias=False)
        self.wk = Linear(rng, d_model, d_model, bias=False)
        self.wv = Linear(rng, d_model, d_model, bias=False)
        self.wo = Linear(rng, d_model, d_model, bias=False)

    def parameters(self) -> dict[str, Array]:
        out = {}
        for name, lin in (("wq", self.wq), ("wk", self.wk),
                          ("wv", self.wv), ("wo", self.wo)):
            out.update(_prefixed(name + ".", lin.parameters()))
        return out

    def _split(self, x: Array) -> Array:
        t = x.shape[0]
        return x.reshape(t, self.heads, self.d_k).transpose(1, 0, 2)

    def forward(self, x: Array):
        t = x.shape[0]
        q, cq = self.wq.forward(x)
        k, ck = self.wk.forward(x)
        v, cv = self.wv.forward(x)
        qh, kh, vh = self._split(q), self._split(k), self._split(v)
        scores = qh @ kh.transpose(0, 2, 1) / np.sqrt(self.d_k)
        m = scores.max(axis=2, keepdims=True)
        e = np.exp(scores - m)
        attn = e / _invariant_sum(e, axis=2)[:, :, None]
        ctx = _invariant_sum(attn[:, :, :, None] * vh[:, None, :, :], axis=2)
        merged = ctx.transpose(1, 0, 2).reshape(t, self.d_model)
        out, co = self.wo.forward(merged)
        cache = (cq, ck, cv, co, qh, kh, vh, attn)
        return out, cache

    def attention_weights(self, x: Array) -> Array:
        """(heads, tokens, tokens) softmax rows; for inspection and tests."""
        _, cache = self.forward(x)
        return cache[7]

    def backward(self, cache, dout: Array):
        cq, ck, cv, co, qh, kh, vh, attn = cache
        t = dout.shape[0]
        dmerged, go = self.wo.backward(co, dout)
        dctx = dmerged.reshape(t, self.heads, self.d_k).transpose(1, 0, 2)
        dattn = dctx @ vh.transpose(0, 2, 1)
        dvh = attn.transpose(0, 2, 1) @ dctx
        ds = attn * (dattn - np.sum(dattn * attn, axis=2, keepdims=True))
        ds = ds / np.sqrt(self.d_k)
        dqh = ds @ kh
        dkh = ds.transpose(0, 2, 1) @ qh

        def merge(h):
            return h.transpose(1, 0, 2).reshape(t, self.d_model)

        dxq, gq = self.wq.backward(cq, merge(dqh))
        dxk, gk = self.wk.backward(ck, merge(dkh))
        dxv, gv = self.wv.backward(cv, merge(dvh))
        grads = {}
        for name, g in (("wq", gq), ("wk", gk), ("wv", gv), ("wo", go)):
            grads.update(_prefixed(name + ".", g))
        return dxq + dxk + dxv, grads


class FeedForward:
    def __init__(self, rng: np.random.Generator, d_model: int, hidden: int):
        self.l1 = Linear(rng, d_model, hidden)
        self.l2 = Linear(rng, hidden, d_model)

    def parameters(self) -> dict[str, Array]:
        return {**_prefixed("l1.", self.l1.parameters()),
                **_prefixed("l2.", self.l2.parameters())}

    def forward(self, x: Array):
        h, c1 = self.l1.forward(x)
        a = np.maximum(h, 0.0)
        out, c2 = self.l2.forward(a)
        return out, (c1, h, c2)

    def backward(self, cache, dout: Array):
        c1, h, c2 = cache
        da, g2 = self.l2.backward(c2, dout)
        dh = da * (h > 0)
        dx, g1 = self.l1.backward(c1, dh)
        return dx, {**_prefixed("l1.", g1), **_prefixed("l2.", g2)}


class EncoderBlock:
    """attention -> add & norm -> feed-forward -> add & norm."""

    def __init__(self, rng: np.random.Generator, d_model: int, heads: int, hidden: int):
        self.attn = MultiHeadAttention(rng, d_model, heads)
        self.ln1 = LayerNorm(d_model)
        self.ffn = FeedForward(rng, d_model, hidden)
        self.ln2 = LayerNorm(d_model)

    def parameters(self) -> dict[str, Array]:
        return {**_prefixed("attn.", self.attn.parameters()),
                **_prefixed("ln1.", self.ln1.parameters()),
                **_prefixed("ffn.", self.ffn.parameters()),
                **_prefixed("ln2.", self.ln2.parameters())}

    def forward(self, x: Array):
        a, ca = self.attn.forward(x)
        n1, c1 = self.ln1.forward(x + a)
        f, cf = self.ffn.forward(n1)
        out, c2 = self.ln2.forward(n1 + f)
        return out, (ca, c1, cf, c2)

    def backward(self, cache, dout: Array):
        ca, c1, cf, c2 = cache
        dh2, g2 = self.ln2.backward(c2, dout)
        df, gf = self.ffn.backward(cf, dh2)
        dn1 = dh2 + df
        dh1, g1 = self.ln1.backward(c1, dn1)
        da, ga = self.attn.backward(ca, dh1)
        dx = dh1 + da
        return dx, {**_prefixed("attn.", ga), **_prefixed("ln1.", g1),
                    **_prefixed("ffn.", gf), **_prefixed("ln2.", g2)}


class MLP:
    """Affine -> ReLU -> ... -> affine; accepts a vector or a batch matrix."""

    def __init__(self, rng: np.random.Generator, dims: tuple[int, ...]):
        if len(dims) < 2:
            raise ValueError("MLP needs at least input and output dims")
        self.layers = [Linear(rng, dims[i], dims[i + 1]) for i in range(len(dims) - 1)]

    def parameters(self) -> dict[str, Array]:
        out = {}
        for i, layer in enumerate(self.layers):
            out.update(_prefixed(f"l{i}.", layer.parameters()))
        return out

    def forward(self, x: Array):
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        caches = []
        for i, layer in enumerate(self.layers):
            h, c = layer.forward(h)
            pre = h
            if i < len(self.layers) - 1:
                h = np.maximum(h, 0.0)
            caches.append((c, pre))
        return (h[0] if squeeze else h), (caches, squeeze)

    def backward(self, cache, dout: Array):
        caches, squeeze = cache
        d = dout[None, :] if squeeze else dout
        grads: dict[str, Array] = {}
        for i in range(len(self.layers) - 1, -1, -1):
            c, pre = caches[i]
            if i < len(self.layers) - 1:
                d = d * (pre > 0)
            d, g = self.layers[i].backward(c, d)
            grads.update(_prefixed(f"l{i}.", g))
        return (d[0] if squeeze else d), grads


class Adam:
    """Bias-corrected Adam over a named parameter dict, updating in place."""

    def __init__(self, params: dict[str, Array], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, Array]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for key, p in self.params.items():
            g = grads[key]
            m = self.m[key]
            v = self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def zero_grads(params: dict[str, Array]) -> dict[str, Array]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def accumulate(total: dict[str, Array], part: dict[str, Array], prefix: str = "") -> None:
    for k, g in part.items():
        total[prefix + k] += g


def save_params(path, params: dict[str, Array]) -> None:
    """Dump named tensors to a versioned .npz checkpoint."""
    np.savez(path, __version__=np.array([CHECKPOINT_VERSION]), **params)


def load_params(path) -> dict[str, Array]:
    with np.load(path) as data:
        if "__version__" not in data or int(data["__version__"][0]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version in {path}")
        return {k: data[k] for k in data.files if k != "__version__"}

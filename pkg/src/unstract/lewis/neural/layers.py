"""Transformer building blocks with hand-written backward passes.

Every ``Module`` keeps its parameters and their gradients in two parallel
dictionaries. ``forward`` caches what ``backward`` needs; ``backward``
accumulates into ``grads`` and returns the gradient w.r.t. its input. Each
module instance is used at most once per training forward pass.
"""

import math
from typing import Iterator, Optional

import numpy as np

NEG_INF = -1e9
_GELU_K = math.sqrt(2.0 / math.pi)


class Module:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.children: dict[str, "Module"] = {}

    def add_param(self, name: str, value: np.ndarray) -> None:
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)

    def add_child(self, name: str, module: "Module") -> "Module":
        self.children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self.params.items():
            yield prefix + name, value
        for child_name, child in self.children.items():
            yield from child.named_parameters(f"{prefix}{child_name}.")

    def named_grads(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, value in self.grads.items():
            yield prefix + name, value
        for child_name, child in self.children.items():
            yield from child.named_grads(f"{prefix}{child_name}.")

    def _locate(self, full_name: str) -> tuple["Module", str]:
        module = self
        *path, leaf = full_name.split(".")
        for part in path:
            module = module.children[part]
        return module, leaf

    def set_parameter(self, full_name: str, value: np.ndarray) -> None:
        module, leaf = self._locate(full_name)
        if module.params[leaf].shape != value.shape:
            raise ValueError(f"Shape mismatch for {full_name}: {module.params[leaf].shape} vs {value.shape}")
        module.params[leaf] = value
        module.grads[leaf] = np.zeros_like(value)

    def zero_grad(self) -> None:
        for _, grad in self.named_grads():
            grad.fill(0.0)

    def cast(self, dtype) -> None:
        for name, value in list(self.named_parameters()):
            self.set_parameter(name, value.astype(dtype))

    def parameter_count(self) -> int:
        return sum(value.size for _, value in self.named_parameters())


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        scale = math.sqrt(2.0 / (in_features + out_features))
        self.add_param("W", (rng.standard_normal((in_features, out_features)) * scale).astype(np.float32))
        self.use_bias = bias
        if bias:
            self.add_param("b", np.zeros(out_features, dtype=np.float32))
        self._x: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        y = x @ self.params["W"]
        if self.use_bias:
            y = y + self.params["b"]
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._x
        W = self.params["W"]
        x2 = x.reshape(-1, x.shape[-1])
        dy2 = dy.reshape(-1, dy.shape[-1])
        self.grads["W"] += x2.T @ dy2
        if self.use_bias:
            self.grads["b"] += dy2.sum(axis=0)
        return dy @ W.T


class Embedding(Module):
    def __init__(self, num_embeddings: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.add_param("E", (rng.standard_normal((num_embeddings, dim)) * 0.1).astype(np.float32))
        self._ids: Optional[np.ndarray] = None

    def forward(self, ids: np.ndarray) -> np.ndarray:
        self._ids = ids
        return self.params["E"][ids]

    def backward(self, dout: np.ndarray) -> None:
        np.add.at(self.grads["E"], self._ids.reshape(-1), dout.reshape(-1, dout.shape[-1]))


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.add_param("g", np.ones(dim, dtype=np.float32))
        self.add_param("b", np.zeros(dim, dtype=np.float32))
        self.eps = eps
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv_std
        self._cache = (xhat, inv_std)
        return xhat * self.params["g"] + self.params["b"]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv_std = self._cache
        d = xhat.shape[-1]
        self.grads["g"] += (dy * xhat).reshape(-1, d).sum(axis=0)
        self.grads["b"] += dy.reshape(-1, d).sum(axis=0)
        dxhat = dy * self.params["g"]
        return (inv_std / d) * (
            d * dxhat - dxhat.sum(axis=-1, keepdims=True) - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )


class Dropout(Module):
    """Inverted dropout; a ``None`` rng (inference, gradient checks) disables it."""

    def __init__(self, p: float):
        super().__init__()
        self.p = p
        self._mask: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray, rng: Optional[np.random.Generator]) -> np.ndarray:
        if rng is None or self.p <= 0.0:
            self._mask = None
            return x
        self._mask = (rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)
        return x * self._mask

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return dy if self._mask is None else dy * self._mask


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def gelu(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Tanh-approximated GELU; returns the activation and its derivative."""
    inner = _GELU_K * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)
    dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * _GELU_K * (1.0 + 3 * 0.044715 * x**2)
    return y, dy


class FeedForward(Module):
    def __init__(self, dim: int, ff_dim: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = self.add_child("fc1", Linear(dim, ff_dim, rng))
        self.fc2 = self.add_child("fc2", Linear(ff_dim, dim, rng))
        self._dgelu: Optional[np.ndarray] = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        h, self._dgelu = gelu(self.fc1.forward(x))
        return self.fc2.forward(h)

    def backward(self, dy: np.ndarray) -> np.ndarray:
        return self.fc1.backward(self.fc2.backward(dy) * self._dgelu)


class MultiHeadAttention(Module):
    """Scaled dot-product attention over ``heads`` heads.

    ``mask`` is boolean, broadcastable to (B, H, Tq, Tk), True where a query
    may attend to a key. The weights of the last forward pass are kept in
    ``attention`` with shape (B, H, Tq, Tk).
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator):
        super().__init__()
        if dim % heads:
            raise ValueError("model_dim must be divisible by heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.scale = 1.0 / math.sqrt(self.head_dim)
        self.q = self.add_child("q", Linear(dim, dim, rng))
        self.k = self.add_child("k", Linear(dim, dim, rng))
        self.v = self.add_child("v", Linear(dim, dim, rng))
        self.o = self.add_child("o", Linear(dim, dim, rng))
        self.attention: Optional[np.ndarray] = None
        self._cache = None

    def _split(self, x: np.ndarray) -> np.ndarray:
        b, t, _ = x.shape
        return x.reshape(b, t, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    @staticmethod
    def _merge(x: np.ndarray) -> np.ndarray:
        b, h, t, d = x.shape
        return x.transpose(0, 2, 1, 3).reshape(b, t, h * d)

    def forward(self, x_q: np.ndarray, x_kv: np.ndarray, mask: np.ndarray) -> np.ndarray:
        Q = self._split(self.q.forward(x_q))
        K = self._split(self.k.forward(x_kv))
        V = self._split(self.v.forward(x_kv))
        scores = (Q @ K.transpose(0, 1, 3, 2)) * self.scale
        scores = np.where(mask, scores, NEG_INF).astype(Q.dtype)
        A = softmax(scores)
        self.attention = A
        self._cache = (Q, K, V, A)
        return self.o.forward(self._merge(A @ V))

    def backward(self, dout: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        Q, K, V, A = self._cache
        dO = self._split(self.o.backward(dout))
        dA = dO @ V.transpose(0, 1, 3, 2)
        dV = A.transpose(0, 1, 3, 2) @ dO
        dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True)) * self.scale
        dQ = dS @ K
        dK = dS.transpose(0, 1, 3, 2) @ Q
        dx_q = self.q.backward(self._merge(dQ))
        dx_kv = self.k.backward(self._merge(dK)) + self.v.backward(self._merge(dV))
        return dx_q, dx_kv


class EncoderLayer(Module):
    """Pre-norm self-attention block."""

    def __init__(self, dim: int, heads: int, ff_dim: int, dropout: float, rng: np.random.Generator):
        super().__init__()
        self.ln1 = self.add_child("ln1", LayerNorm(dim))
        self.attn = self.add_child("attn", MultiHeadAttention(dim, heads, rng))
        self.drop1 = self.add_child("drop1", Dropout(dropout))
        self.ln2 = self.add_child("ln2", LayerNorm(dim))
        self.ff = self.add_child("ff", FeedForward(dim, ff_dim, rng))
        self.drop2 = self.add_child("drop2", Dropout(dropout))

    def forward(self, x: np.ndarray, mask: np.ndarray, rng: Optional[np.random.Generator]) -> np.ndarray:
        h = self.ln1.forward(x)
        x = x + self.drop1.forward(self.attn.forward(h, h, mask), rng)
        return x + self.drop2.forward(self.ff.forward(self.ln2.forward(x)), rng)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        dx = dout + self.ln2.backward(self.ff.backward(self.drop2.backward(dout)))
        dq, dkv = self.attn.backward(self.drop1.backward(dx))
        return dx + self.ln1.backward(dq + dkv)


class DecoderLayer(Module):
    """Pre-norm causal self-attention, cross-attention and feed-forward."""

    def __init__(self, dim: int, heads: int, ff_dim: int, dropout: float, rng: np.random.Generator):
        super().__init__()
        self.ln1 = self.add_child("ln1", LayerNorm(dim))
        self.self_attn = self.add_child("self_attn", MultiHeadAttention(dim, heads, rng))
        self.drop1 = self.add_child("drop1", Dropout(dropout))
        self.ln2 = self.add_child("ln2", LayerNorm(dim))
        self.cross_attn = self.add_child("cross_attn", MultiHeadAttention(dim, heads, rng))
        self.drop2 = self.add_child("drop2", Dropout(dropout))
        self.ln3 = self.add_child("ln3", LayerNorm(dim))
        self.ff = self.add_child("ff", FeedForward(dim, ff_dim, rng))
        self.drop3 = self.add_child("drop3", Dropout(dropout))

    def forward(
        self,
        x: np.ndarray,
        memory: np.ndarray,
        self_mask: np.ndarray,
        cross_mask: np.ndarray,
        rng: Optional[np.random.Generator],
    ) -> np.ndarray:
        h = self.ln1.forward(x)
        x = x + self.drop1.forward(self.self_attn.forward(h, h, self_mask), rng)
        x = x + self.drop2.forward(self.cross_attn.forward(self.ln2.forward(x), memory, cross_mask), rng)
        return x + self.drop3.forward(self.ff.forward(self.ln3.forward(x)), rng)

    def backward(self, dout: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        dx = dout + self.ln3.backward(self.ff.backward(self.drop3.backward(dout)))
        dq, dmemory = self.cross_attn.backward(self.drop2.backward(dx))
        dx = dx + self.ln2.backward(dq)
        dq, dkv = self.self_attn.backward(self.drop1.backward(dx))
        return dx + self.ln1.backward(dq + dkv), dmemory

"""Small layer library on top of :mod:`dialmat.tensor`."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Attribute-registered parameters and submodules, PyTorch style."""

    def named_parameters(self, prefix: str = "") -> OrderedDict[str, Tensor]:
        out: OrderedDict[str, Tensor] = OrderedDict()
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{key}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> OrderedDict[str, np.ndarray]:
        return OrderedDict((k, v.data.copy()) for k, v in self.named_parameters().items())

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) - set(state)
        extra = set(state) - set(params)
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in params.items():
            if state[k].shape != p.data.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.data.shape}")
            p.data = np.array(state[k], dtype=np.float64)


def _init(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    return T.parameter(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = _init(rng, d_in, (d_in, d_out))
        self.bias = T.parameter(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int):
        self.gain = T.parameter(np.ones(d))
        self.bias = T.parameter(np.zeros(d))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: np.random.Generator, scale: float = 0.1):
        self.table = T.parameter(rng.normal(0.0, scale, size=(n, d)))

    def __call__(self, ids) -> Tensor:
        return T.embed(self.table, ids)


def key_mask_bias(mask: np.ndarray | None) -> np.ndarray | None:
    """[B, T] bool (True = real token) -> additive [B, 1, 1, T] attention bias."""
    if mask is None:
        return None
    return np.where(mask, 0.0, -1e9)[:, None, None, :]


class MultiHeadAttention(Module):
    def __init__(self, d: int, n_heads: int, rng: np.random.Generator):
        if d % n_heads:
            raise ValueError(f"model width {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.qkv = Linear(d, 3 * d, rng)
        self.out = Linear(d, d, rng)

    def __call__(self, x: Tensor, bias: np.ndarray | None = None, last_only: bool = False) -> Tensor:
        """Self-attention over ``x``; ``last_only`` returns just the final position's output."""
        b, t, d = x.shape
        h = self.n_heads
        dh = d // h
        qkv = self.qkv(x).reshape(b, t, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        if last_only:
            q, t = q[:, :, -1:, :], 1
        scores = T.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        if bias is not None:
            scores = scores + bias
        att = T.softmax(scores, axis=-1)
        ctx = T.matmul(att, v).transpose(0, 2, 1, 3).reshape(b, t, d)
        return self.out(ctx)


class TransformerLayer(Module):
    """Pre-norm encoder block."""

    def __init__(self, d: int, n_heads: int, rng: np.random.Generator, ffn_mult: int = 2):
        self.ln1 = LayerNorm(d)
        self.attn = MultiHeadAttention(d, n_heads, rng)
        self.ln2 = LayerNorm(d)
        self.ff1 = Linear(d, ffn_mult * d, rng)
        self.ff2 = Linear(ffn_mult * d, d, rng)

    def __call__(self, x: Tensor, bias: np.ndarray | None = None, last_only: bool = False) -> Tensor:
        """``last_only`` computes the block for the final position only, shape [B, 1, d]."""
        a = self.attn(self.ln1(x), bias, last_only)
        x = (x[:, -1:, :] if last_only else x) + a
        return x + self.ff2(T.gelu(self.ff1(self.ln2(x))))


class Adam:
    """Moment-based descent for model weights."""

    def __init__(self, params: list[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, clip_norm: float | None = 1.0):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.clip_norm = clip_norm
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self) -> None:
        grads = [np.zeros_like(p.data) if p.grad is None else p.grad for p in self.params]
        if self.clip_norm is not None:
            total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
            if total > self.clip_norm:
                grads = [g * (self.clip_norm / total) for g in grads]
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state(self) -> dict[str, np.ndarray]:
        out = {"t": np.array(self.t)}
        for i, (m, v) in enumerate(zip(self.m, self.v)):
            out[f"m.{i}"] = m
            out[f"v.{i}"] = v
        return out

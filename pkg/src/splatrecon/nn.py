"""Small neural-network building blocks on top of the autodiff engine."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeMismatch, Tensor

_ACTIVATIONS = {"tanh": ad.tanh, "relu": ad.relu, "sigmoid": ad.sigmoid, "none": lambda x: x}


class Linear:
    """Affine layer y = x @ W + b with W of shape (in_dim, out_dim)."""

    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator | None = None,
                 zero_init: bool = False, dtype=np.float32):
        if zero_init:
            w = np.zeros((in_dim, out_dim), dtype=dtype)
        else:
            rng = rng if rng is not None else np.random.default_rng(0)
            bound = 1.0 / np.sqrt(in_dim)
            w = rng.uniform(-bound, bound, size=(in_dim, out_dim)).astype(dtype)
        self.w = Tensor(w, requires_grad=True)
        self.b = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.w.shape[0]:
            raise ShapeMismatch(f"linear input {x.shape} vs weight {self.w.shape}")
        return ad.matmul(x, self.w) + self.b

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]


class MLP:
    """Stack of Linear layers with a pointwise activation between them.

    ``activation`` applies after every hidden layer, ``out_activation``
    after the last one.
    """

    def __init__(self, dims: list[int], activation: str = "relu",
                 out_activation: str = "none", rng: np.random.Generator | None = None,
                 dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = [Linear(dims[i], dims[i + 1], rng=rng, dtype=dtype) for i in range(len(dims) - 1)]
        self.act = _ACTIVATIONS[activation]
        self.out_act = _ACTIVATIONS[out_activation]

    def __call__(self, x: Tensor) -> Tensor:
        for layer in self.layers[:-1]:
            x = self.act(layer(x))
        return self.out_act(self.layers[-1](x))

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]


def timestep_embedding(t: int, horizon: int, dim: int = 16) -> np.ndarray:
    """Sinusoidal embedding of an integer step: [sin(t/f_i), cos(t/f_i)].

    Frequencies are geometrically spaced between 1 and ``horizon``; t = 0
    maps to all-zero sines and all-one cosines.
    """
    if dim % 2 != 0:
        raise ValueError("embedding dim must be even")
    half = dim // 2
    periods = np.power(float(max(horizon, 2)), np.arange(half) / max(half - 1, 1))
    args = t / periods
    return np.concatenate([np.sin(args), np.cos(args)])


class Adam:
    """Adam with bias correction over a list of parameter tensors."""

    def __init__(self, params: list[Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            if g.shape != p.data.shape:
                raise ShapeMismatch(f"grad {g.shape} vs param {p.data.shape}")
            self.m[i] = self.beta1 * self.m[i] + (1 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1 - self.beta2) * (g * g)
            mhat = self.m[i] / (1 - self.beta1**self.step_count)
            vhat = self.v[i] / (1 - self.beta2**self.step_count)
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {"adam_step": np.array([self.step_count], dtype=np.float32)}
        for i in range(len(self.params)):
            out[f"adam_m_{i}"] = self.m[i]
            out[f"adam_v_{i}"] = self.v[i]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]):
        self.step_count = int(arrays["adam_step"][0])
        for i in range(len(self.params)):
            self.m[i] = arrays[f"adam_m_{i}"].reshape(self.m[i].shape).astype(self.m[i].dtype)
            self.v[i] = arrays[f"adam_v_{i}"].reshape(self.v[i].shape).astype(self.v[i].dtype)


def adam_step_arrays(param: np.ndarray, grad: np.ndarray, m: np.ndarray, v: np.ndarray,
                     step: int, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                     eps: float = 1e-8) -> np.ndarray:
    """Functional Adam update on raw arrays (used for per-scene descent).

    Mutates ``m`` and ``v`` in place and returns the updated parameter;
    ``step`` is 1-based.
    """
    if grad.shape != param.shape:
        raise ShapeMismatch(f"grad {grad.shape} vs param {param.shape}")
    m[...] = beta1 * m + (1 - beta1) * grad
    v[...] = beta2 * v + (1 - beta2) * (grad * grad)
    mhat = m / (1 - beta1**step)
    vhat = v / (1 - beta2**step)
    return param - lr * mhat / (np.sqrt(vhat) + eps)

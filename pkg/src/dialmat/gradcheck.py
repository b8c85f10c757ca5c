"""Central finite-difference checks for the autodiff core."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def numerical_grad(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f()
        flat[i] = old - h
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2 * h)
    return g


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-8) -> float:
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    ok = err <= atol
    rel = np.where(ok, 0.0, err / np.maximum(scale, 1e-300))
    return float(rel.max()) if rel.size else 0.0


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
                    rtol: float = 1e-4, atol: float = 1e-8) -> list[float]:
    """Compare reverse-mode gradients of scalar ``fn(*tensors)`` with finite differences.

    Returns the max relative error per input; raises AssertionError above ``rtol``.
    """
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    leaves = [T.parameter(a) for a in arrays]
    out = fn(*leaves)
    T.backward(out)
    errors = []
    for k, leaf in enumerate(leaves):
        def value() -> float:
            with T.no_grad():
                return fn(*[T.tensor(a) for a in arrays]).item()
        numeric = numerical_grad(value, arrays[k], h)
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arrays[k])
        err = max_rel_error(analytic, numeric, atol)
        if err > rtol:
            raise AssertionError(f"input {k}: max relative gradient error {err:.3e} > {rtol:.0e}")
        errors.append(err)
    return errors


def check_leaf_gradients(loss_fn: Callable[[], Tensor], leaves: Sequence[Tensor], h: float = 1e-5,
                         rtol: float = 1e-4, atol: float = 1e-8) -> dict[int, float]:
    """Finite-difference check of every element of ``leaves`` (parameters or deltas).

    ``loss_fn`` must rebuild the graph from the leaves' current data.
    """
    for leaf in leaves:
        leaf.grad = None
    T.backward(loss_fn())
    errors = {}
    for k, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)

        def value() -> float:
            with T.no_grad():
                return loss_fn().item()
        numeric = numerical_grad(value, leaf.data, h)
        err = max_rel_error(analytic, numeric, atol)
        if err > rtol:
            raise AssertionError(f"leaf {k} {leaf.name or leaf.shape}: max relative gradient "
                                 f"error {err:.3e} > {rtol:.0e}")
        errors[k] = err
    return errors

"""Finite-difference gradient oracle shared by the unit and acceptance suites.

The analytic engine is only trusted after central differences agree with it.
``relative_error`` guards against the two standard traps: division blowup
when both gradients are near zero, and false comfort when only one is.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from gcalab.tensor import Tensor

DEFAULT_H = 1e-5


def numerical_gradient(f: Callable[[], Tensor], leaf: Tensor, h: float = DEFAULT_H) -> np.ndarray:
    """Central-difference gradient of the scalar ``f()`` w.r.t. ``leaf.data``."""
    grad = np.zeros_like(leaf.data)
    flat = leaf.data.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        plus = f().data.item()
        flat[i] = original - h
        minus = f().data.item()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise |a - n| / max(|a| + |n|, 1e-3)."""
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-3)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def check_gradients(
    f: Callable[[], Tensor],
    leaves: dict[str, Tensor],
    h: float = DEFAULT_H,
    tol: float = 1e-4,
) -> dict[str, float]:
    """Compare backward() output against central differences for every leaf.

    Returns the per-leaf relative errors; raises AssertionError when any leaf
    exceeds ``tol``. ``f`` must rebuild the graph from the leaves' current
    ``data`` on every call.
    """
    for leaf in leaves.values():
        leaf.grad = None
    f().backward()
    errors: dict[str, float] = {}
    for name, leaf in leaves.items():
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        numeric = numerical_gradient(f, leaf, h=h)
        err = relative_error(analytic, numeric)
        errors[name] = err
        assert err < tol, f"gradient mismatch for {name}: rel err {err:.3e} >= {tol}"
    return errors

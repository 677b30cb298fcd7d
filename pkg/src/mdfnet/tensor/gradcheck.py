"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .core import NumericError, Tensor, backward


def finite_diff_check(f: Callable[[Tensor], Tensor], point: Tensor, epsilon: float = 1e-4,
                      n_samples: Optional[int] = None, seed: int = 0) -> float:
    """Max relative error between the tape gradient and central differences.

    ``f`` maps a tensor to a scalar tensor. The error at a coordinate is
    ``|analytic - numeric| / max(1, |analytic|)``. When ``n_samples`` is
    given only that many coordinates (drawn without replacement) are probed.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x = Tensor(point.data, requires_grad=True)
    out = f(x)
    if out.size != 1:
        raise ValueError(f"f must be scalar-valued, got shape {out.shape}")
    backward(out)
    analytic = x.grad if x.grad is not None else np.zeros_like(x.data)

    flat = x.data.reshape(-1)
    coords = np.arange(flat.size)
    if n_samples is not None and n_samples < flat.size:
        coords = np.random.default_rng(seed).choice(flat.size, size=n_samples, replace=False)

    base = point.data.copy().reshape(-1)
    worst = 0.0
    for c in coords:
        plus, minus = base.copy(), base.copy()
        plus[c] += epsilon
        minus[c] -= epsilon
        try:
            fp = f(Tensor(plus.reshape(point.shape))).item()
            fm = f(Tensor(minus.reshape(point.shape))).item()
        except NumericError as exc:
            raise NumericError(f"f is non-finite near coordinate {c}") from exc
        numeric = (fp - fm) / (2 * epsilon)
        a = analytic.reshape(-1)[c]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return float(worst)


def check_parameters(loss_fn: Callable[[], Tensor], params, epsilon: float = 1e-4,
                     n_samples: int = 100, seed: int = 0) -> float:
    """Finite-difference check over coordinates sampled across several parameters.

    ``loss_fn`` rebuilds the forward pass from the current parameter values.
    Parameters are perturbed in place and restored.
    """
    params = list(params)
    for p in params:
        p.grad = None
    backward(loss_fn())
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    sizes = np.array([p.size for p in params])
    rng = np.random.default_rng(seed)
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    offsets = np.cumsum(np.concatenate([[0], sizes]))
    worst = 0.0
    for flat_idx in np.sort(picks):
        k = int(np.searchsorted(offsets, flat_idx, side="right") - 1)
        local = flat_idx - offsets[k]
        view = params[k].data.reshape(-1)
        orig = view[local]
        view[local] = orig + epsilon
        fp = loss_fn().item()
        view[local] = orig - epsilon
        fm = loss_fn().item()
        view[local] = orig
        numeric = (fp - fm) / (2 * epsilon)
        a = analytic[k].reshape(-1)[local]
        worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    for p in params:
        p.grad = None
    return float(worst)

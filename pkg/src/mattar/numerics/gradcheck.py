"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .optim import ParamSet
from .tensor import Tensor, no_grad


@dataclass
class GradReport:
    """Per-parameter maximum relative error between analytic and numeric gradients."""

    tol: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    passed: bool = True

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def _rel_error(a: float, f: float) -> float:
    return abs(a - f) / max(abs(a), abs(f), 1e-8)


def grad_check(
    loss_fn: Callable[[], Tensor],
    params: ParamSet,
    h: float = 1e-4,
    tol: float = 1e-4,
    max_coords_per_param: int = 40,
    seed: int = 0,
) -> GradReport:
    """Compare backprop gradients of `loss_fn` against central differences.

    `loss_fn` must be a deterministic closure over `params` returning a scalar
    Tensor. Parameters are temporarily promoted to float64 so the finite
    differences are not drowned by rounding; the original float32 data is
    restored before returning. For large parameters a random subset of
    coordinates is probed.

    The default step balances truncation against cancellation: coordinates
    whose true gradient is exactly zero (softmax cancellations) must see
    finite-difference noise below the 1e-8 floor of the relative error.
    """
    originals = {name: t.data for name, t in params.items()}
    for _, t in params.items():
        t.data = t.data.astype(np.float64)

    report = GradReport(tol=tol)
    try:
        params.zero_grad()
        loss = loss_fn()
        loss.backward()
        analytic = {name: t.grad.copy() for name, t in params.items()}

        rng = np.random.default_rng(seed)
        for name, t in params.items():
            flat = t.data.reshape(-1)
            n = flat.size
            if n <= max_coords_per_param:
                coords = np.arange(n)
            else:
                coords = rng.choice(n, size=max_coords_per_param, replace=False)
            worst = 0.0
            for c in coords:
                saved = flat[c]
                with no_grad():
                    flat[c] = saved + h
                    f_plus = float(loss_fn().data)
                    flat[c] = saved - h
                    f_minus = float(loss_fn().data)
                flat[c] = saved
                fd = (f_plus - f_minus) / (2.0 * h)
                worst = max(worst, _rel_error(float(analytic[name].reshape(-1)[c]), fd))
            report.max_rel_error[name] = worst
            if worst > tol:
                report.passed = False
    finally:
        for name, t in params.items():
            t.data = originals[name]
        params.zero_grad()
    return report

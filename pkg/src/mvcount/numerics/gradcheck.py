"""Central finite differences as an independent gradient oracle."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from mvcount.errors import NonFiniteError
from mvcount.numerics.nn import Parameter
from mvcount.numerics.tensor import Tensor, no_grad


def _scalar(value) -> float:
    return float(value.data) if isinstance(value, Tensor) else float(value)


def finite_diff_gradient(loss_fn: Callable[[], object], params: Sequence[Parameter], eps: float = 1e-5,
                         indices: Optional[dict] = None) -> list:
    """Estimate d loss / d param entry-wise with ``(f(t+eps) - f(t-eps)) / (2 eps)``.

    ``indices`` optionally maps a parameter position to the flat entries to probe;
    unprobed entries are NaN in the result. ``loss_fn`` is evaluated without graph
    recording and must be deterministic.
    """
    estimates = []
    with no_grad():
        for k, p in enumerate(params):
            flat = p.data.reshape(-1)
            est = np.full(flat.shape, np.nan)
            entries = range(flat.size) if indices is None or k not in indices else indices[k]
            for i in entries:
                orig = flat[i]
                flat[i] = orig + eps
                up = _scalar(loss_fn())
                flat[i] = orig - eps
                down = _scalar(loss_fn())
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NonFiniteError(f"non-finite loss while probing {p.name!r}[{i}]")
                est[i] = (up - down) / (2.0 * eps)
            estimates.append(est.reshape(p.shape))
    return estimates


@dataclass
class GradCheckReport:
    max_rel_error: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)
    nonzero: dict = field(default_factory=dict)

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    def passed(self, tol: float) -> bool:
        return self.worst <= tol


def gradient_check(loss_fn: Callable[[], object], params: Sequence[Parameter], eps: float = 1e-5,
                   floor: float = 1e-6, indices: Optional[dict] = None) -> GradCheckReport:
    """Compare backprop against finite differences on entries with ``|FD| > floor``."""
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.copy() for p in params]
    numeric = finite_diff_gradient(loss_fn, params, eps=eps, indices=indices)
    report = GradCheckReport()
    for p, a, n in zip(params, analytic, numeric):
        probed = ~np.isnan(n)
        big = probed & (np.abs(n) > floor)
        denom = np.maximum(np.abs(a), np.abs(n))
        rel = np.abs(a - n)[big] / denom[big]
        report.max_rel_error[p.name] = float(rel.max()) if rel.size else 0.0
        report.checked[p.name] = int(big.sum())
        report.nonzero[p.name] = bool(np.any(np.abs(a[probed]) > 0))
    for p in params:
        p.zero_grad()
    return report

"""Central finite-difference oracle for taped gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    max_rel_error: float = 0.0
    checked: int = 0
    nonsmooth: int = 0  # entries that needed a smaller step (kink within +-step)
    failures: List[tuple] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def _rel(a: float, n: float, atol: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), atol)


def gradcheck(
    fn: Callable[[], Tensor],
    tensors: Dict[str, Tensor],
    step: float = 1e-3,
    rtol: float = 1e-3,
    atol: float = 1e-5,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> GradCheckReport:
    """Compare ``backward`` gradients of ``fn()`` against central differences.

    ``fn`` must rebuild the graph from ``tensors`` on every call. Pass 64-bit
    tensors for a tight oracle. When ``max_entries`` is set, that many entries
    per tensor are sampled with ``rng``. An entry that fails at ``step`` is
    retried at ``step/10`` and ``step/100``; passing there means the step
    straddled a non-differentiable point (leaky_relu kink) and it is counted
    in ``nonsmooth`` instead of ``failures``.
    """
    rng = rng or np.random.default_rng(0)
    for t in tensors.values():
        t.grad = None
    loss = fn()
    loss.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}

    def loss_at(t: Tensor, idx, h: float) -> float:
        old = t.data[idx]
        t.data[idx] = old + h
        with no_grad():
            up = float(fn().data)
        t.data[idx] = old - h
        with no_grad():
            down = float(fn().data)
        t.data[idx] = old
        return (up - down) / (2 * h)

    report = GradCheckReport()
    for name, t in tensors.items():
        flat = np.arange(t.size)
        if max_entries is not None and t.size > max_entries:
            flat = rng.choice(t.size, size=max_entries, replace=False)
        for f in flat:
            idx = np.unravel_index(int(f), t.shape)
            a = float(analytic[name][idx])
            num = loss_at(t, idx, step)
            err = _rel(a, num, atol)
            if err >= rtol:
                retry = min(_rel(a, loss_at(t, idx, step * s), atol) for s in (0.1, 0.01))
                if retry < rtol:
                    report.nonsmooth += 1
                    err = retry
                else:
                    report.failures.append((name, idx, a, num, err))
            report.max_rel_error = max(report.max_rel_error, err)
            report.checked += 1
    return report

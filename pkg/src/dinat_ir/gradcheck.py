"""Central-difference verification of reverse-mode gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import functional as F
from .tensor import Tape, Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    tol_rel: float
    errors: dict[str, float] = field(default_factory=dict)
    checked: dict[str, int] = field(default_factory=dict)

    @property
    def max_rel_err(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_err)) and self.max_rel_err < self.tol_rel

    def __str__(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'} max_rel_err={self.max_rel_err:.3e} tol={self.tol_rel:g}"]
        for name, err in self.errors.items():
            lines.append(f"  {name:<40s} {err:.3e}  ({self.checked[name]} scalars)")
        return "\n".join(lines)


def _scalarize(out: Tensor, proj: np.ndarray) -> Tensor:
    return F.sum(F.mul(out, proj))


def grad_check(f: Callable[..., Tensor], inputs: Sequence[Tensor], tol_rel: float = 1e-5,
               seed: int = 0, max_checks: int | None = None,
               names: Sequence[str] | None = None) -> GradCheckReport:
    """Compare analytic gradients of ``f(*inputs)`` with central differences.

    The output is reduced to a scalar with a fixed random projection. Step size
    is ``1e-4 * max(1, |v|)``. Per-scalar error is ``|num - ana| / max(|num|,
    |ana|, 1e-2 * max|ana|)`` where the floor is taken per input tensor, so
    entries whose true gradient is negligible are judged against the tensor's
    gradient scale rather than against zero.

    With ``max_checks`` set, that many coordinates per input are sampled
    (seeded) instead of checking every scalar.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("grad_check requires float64 inputs")
    saved = [(t.requires_grad, t.grad) for t in inputs]
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)  # perturbations go through a flat view
        t.requires_grad = True
        t.grad = None

    with Tape() as tape:
        out = f(*inputs)
        proj = rng.standard_normal(out.shape)
        loss = _scalarize(out, proj)
    backward(loss, tape)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    def value() -> float:
        with no_grad():
            return float(np.sum(f(*inputs).data * proj))

    report = GradCheckReport(tol_rel=tol_rel)
    names = list(names) if names is not None else [getattr(t, "name", "") or f"input{i}" for i, t in enumerate(inputs)]
    for t, ana, name in zip(inputs, analytic, names):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            idx = rng.choice(flat.size, size=max_checks, replace=False)
        ana_flat = ana.reshape(-1)
        floor = max(1e-2 * float(np.max(np.abs(ana_flat))), 1e-12)
        worst = 0.0
        for i in idx:
            v = flat[i]
            h = 1e-4 * max(1.0, abs(v))
            flat[i] = v + h
            fp = value()
            flat[i] = v - h
            fm = value()
            flat[i] = v
            num = (fp - fm) / (2 * h)
            a = ana_flat[i]
            err = abs(num - a) / max(abs(num), abs(a), floor)
            worst = max(worst, err)
        report.errors[name] = worst
        report.checked[name] = len(idx)

    for t, (rg, g) in zip(inputs, saved):
        t.requires_grad = rg
        t.grad = g
    return report

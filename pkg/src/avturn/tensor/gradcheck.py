from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    passed: bool
    analytic: Optional[np.ndarray] = None
    numeric: Optional[np.ndarray] = None
    error: Optional[str] = None


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5, tol: float = 1e-4,
               floor: float = 1e-6) -> GradCheckReport:
    """Compare the analytic gradient of scalar ``f`` at ``x`` with central differences.

    The relative error of element i is ``|a_i - n_i| / max(|a_i|, |n_i|, floor)``;
    the check passes iff the maximum over elements is at most ``tol``.
    """
    if eps <= 0:
        raise ValueError("grad_check: eps must be positive")
    x0 = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    out = f(leaf)
    if out.data.size != 1:
        return GradCheckReport(np.inf, False, error=f"f returned shape {out.shape}, expected scalar")
    if not np.isfinite(out.data).all():
        return GradCheckReport(np.inf, False, error="f(x) is not finite")
    backward(out)
    analytic = np.zeros_like(x0) if leaf.grad is None else leaf.grad
    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(Tensor(x0)).item()
        flat[i] = orig - eps
        fm = f(Tensor(x0)).item()
        flat[i] = orig
        num_flat[i] = (fp - fm) / (2 * eps)
    if not (np.isfinite(analytic).all() and np.isfinite(numeric).all()):
        return GradCheckReport(np.inf, False, analytic, numeric, error="non-finite gradient")
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    rel = np.abs(analytic - numeric) / denom
    max_rel = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(max_rel, max_rel <= tol, analytic, numeric)

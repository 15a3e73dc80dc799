"""Central-difference verification of tape gradients.

The check treats the tape as a black box: run the analytic backward once,
then re-evaluate the loss at x +/- h coordinate by coordinate. Agreement
is judged by relative error |ga - gn| / max(|ga|, |gn|, 1e-8), reported
for the worst coordinate seen.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .errors import ContractError
from .tensor import Tensor, no_grad


@dataclass
class GradReport:
    max_rel_err: float
    worst_param: str
    worst_index: tuple
    analytic: float
    numeric: float
    coords_checked: int

    def __str__(self):
        return (f"worst rel err {self.max_rel_err:.3e} at {self.worst_param}{self.worst_index} "
                f"(analytic {self.analytic:.6e}, numeric {self.numeric:.6e}, "
                f"{self.coords_checked} coords)")


def grad_check(fn: Callable[[], Tensor], params: Mapping[str, Tensor],
               h: float = 1e-5, max_coords: int | None = None,
               rng: np.random.Generator | None = None) -> GradReport:
    """Compare tape gradients of ``fn()`` against central differences.

    ``fn`` must rebuild its graph on every call and return a scalar loss
    that depends deterministically on the params. ``max_coords`` caps how
    many coordinates of each tensor are probed (random without
    replacement when set).
    """
    if not (1e-7 <= h <= 1e-3):
        raise ContractError(f"step h={h} outside [1e-7, 1e-3]")
    for name, p in params.items():
        if not isinstance(p, Tensor) or not p.requires_grad:
            raise ContractError(f"param {name!r} is not a leaf with requires_grad")
        p.zero_grad()

    loss = fn()
    loss.backward()
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    report = GradReport(0.0, "", (), 0.0, 0.0, 0)
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            n = flat.size
            if max_coords is not None and n > max_coords:
                if rng is None:
                    rng = np.random.default_rng(0)
                coords = rng.choice(n, size=max_coords, replace=False)
            else:
                coords = range(n)
            for c in coords:
                orig = flat[c]
                flat[c] = orig + h
                f_plus = fn().item()
                flat[c] = orig - h
                f_minus = fn().item()
                flat[c] = orig
                gn = (f_plus - f_minus) / (2.0 * h)
                ga = analytic[name].reshape(-1)[c]
                rel = abs(ga - gn) / max(abs(ga), abs(gn), 1e-8)
                report.coords_checked += 1
                if rel > report.max_rel_err:
                    report.max_rel_err = rel
                    report.worst_param = name
                    report.worst_index = np.unravel_index(c, p.data.shape)
                    report.analytic = float(ga)
                    report.numeric = gn
    return report


def assert_grads_match(fn, params, tol: float, **kw) -> GradReport:
    rep = grad_check(fn, params, **kw)
    if rep.max_rel_err > tol:
        raise AssertionError(f"gradient check failed: {rep} > tol {tol}")
    return rep

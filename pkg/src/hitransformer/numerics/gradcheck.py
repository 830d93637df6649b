"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from ..errors import NumericError
from .tensor import Tensor, frozen_relu_patterns, no_grad


@dataclass
class GradcheckReport:
    per_param: dict[str, float]
    tol: float
    coords_checked: int

    @property
    def worst(self) -> tuple[str, float]:
        if not self.per_param:
            return "", 0.0
        name = max(self.per_param, key=lambda k: self.per_param[k])
        return name, self.per_param[name]

    @property
    def max_error(self) -> float:
        return self.worst[1]

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tol

    def summary(self) -> str:
        name, err = self.worst
        verdict = "PASS" if self.passed else "FAIL"
        return (
            f"{verdict}: max rel err {err:.3e} (tol {self.tol:.0e}) over {len(self.per_param)} parameters, "
            f"{self.coords_checked} coordinates; worst parameter {name}"
        )


def _scalar(loss: Tensor) -> float:
    value = float(np.asarray(loss.data).reshape(()))
    if not np.isfinite(value):
        raise NumericError(f"gradcheck loss is not finite: {value}")
    return value


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def central_difference(g: Callable[[float], float], h: float) -> float:
    return (g(h) - g(-h)) / (2 * h)


def ridders_difference(g: Callable[[float], float], h: float, shrink: float = 2.0, levels: int = 10) -> float:
    """Richardson-extrapolated central differences (Ridders' method).

    Central differences at steps ``h, h/shrink, h/shrink**2, ...`` are
    extrapolated to zero step; the estimate with the smallest internal error
    is returned. Robust to kinks farther than the smallest step from the
    evaluation point.
    """
    c2 = shrink * shrink
    table = np.zeros((levels, levels))
    step = h
    table[0, 0] = central_difference(g, step)
    best, err = table[0, 0], np.inf
    for i in range(1, levels):
        step /= shrink
        table[0, i] = central_difference(g, step)
        fac = c2
        for j in range(1, i + 1):
            table[j, i] = (table[j - 1, i] * fac - table[j - 1, i - 1]) / (fac - 1)
            fac *= c2
            errt = max(abs(table[j, i] - table[j - 1, i]), abs(table[j, i] - table[j - 1, i - 1]))
            if errt <= err:
                err, best = errt, table[j, i]
        if abs(table[i, i] - table[i - 1, i - 1]) >= 2 * err:
            break
    return float(best)


def finite_diff_gradcheck(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-3,
    tol: float = 1e-4,
    max_coords: int | None = None,
    seed: int = 0,
    method: str = "central",
    freeze_relu: bool = False,
) -> GradcheckReport:
    """Compare backprop gradients of ``f()`` with numerical derivatives.

    ``f`` must be deterministic (no dropout). ``method`` is ``"central"``
    (two-point, step ``h``) or ``"ridders"`` (extrapolated central
    differences starting at ``h``). When ``max_coords`` is set, at most that
    many coordinates per parameter are sampled; otherwise all are checked.
    ``freeze_relu`` replays the ReLU activation pattern of the unperturbed
    pass during every numerical evaluation, so kinks within the stencil do
    not corrupt the estimate.
    """
    if method not in ("central", "ridders"):
        raise ValueError(f"unknown method {method!r}")
    for p in params.values():
        p.zero_grad()
    patterns: list[np.ndarray] = []
    with frozen_relu_patterns(patterns, record=True):
        loss = f()
    _scalar(loss)
    loss.backward()

    def evaluate() -> float:
        if not freeze_relu:
            return _scalar(f())
        with frozen_relu_patterns(patterns, record=False):
            return _scalar(f())

    analytic = {name: p.grad.copy() for name, p in params.items()}

    rng = np.random.default_rng(seed)
    per_param: dict[str, float] = {}
    total = 0
    with no_grad():
        for name in sorted(params):
            flat = params[name].data.reshape(-1)
            if max_coords is not None and flat.size > max_coords:
                coords = np.sort(rng.choice(flat.size, size=max_coords, replace=False))
            else:
                coords = np.arange(flat.size)
            grad = analytic[name].reshape(-1)
            worst = 0.0
            for i in coords:
                orig = flat[i]

                def shifted(offset: float) -> float:
                    flat[i] = orig + offset
                    return evaluate()

                try:
                    if method == "central":
                        numeric = central_difference(shifted, h)
                    else:
                        numeric = ridders_difference(shifted, h)
                finally:
                    flat[i] = orig
                worst = max(worst, relative_error(float(grad[i]), numeric))
            per_param[name] = worst
            total += len(coords)
    return GradcheckReport(per_param=per_param, tol=tol, coords_checked=total)

"""Adam and a central finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

from .layers import Param


class Adam:
    """Bias-corrected Adam. Gradients are zeroed after every step."""

    def __init__(self, params: Iterable[Param], lr: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        for p in self.params:
            if not np.all(np.isfinite(p.grad)):
                bad = int(np.sum(~np.isfinite(p.grad)))
                raise FloatingPointError(f"non-finite gradient in {p.name} ({bad} entries)")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.value
            m, v = self.m[p.name], self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        self.zero_grad()


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float] = field(default_factory=dict)
    n_coords: int = 0
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def summary(self) -> str:
        lines = [f"{name:>24s}  max rel err {err:.3e}" for name, err in self.per_param.items()]
        status = "PASS" if self.passed else "FAIL"
        lines.append(f"{status}: max rel err {self.max_rel_error:.3e} "
                     f"over {self.n_coords} coords (tol {self.tolerance:.0e})")
        return "\n".join(lines)


def finite_diff_check(
    loss_and_grad: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
    params: Iterable[Param],
    step: float = 1e-5,
    tolerance: float = 1e-4,
    coords_per_param: int = 50,
    seed: int = 0,
    abs_floor: float = 1e-3,
) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``loss_and_grad()`` must evaluate the loss at the current parameter values
    and return it with a mapping from parameter name to gradient. Up to
    ``coords_per_param`` coordinates are sampled per parameter (all of them if
    fewer). The error of a coordinate is ``|analytic - numeric| /
    max(|numeric|, abs_floor)``.
    """
    params = list(params)
    rng = np.random.default_rng(seed)
    _, analytic = loss_and_grad()
    analytic = {k: np.array(v, dtype=np.float64, copy=True) for k, v in analytic.items()}
    per_param: dict[str, float] = {}
    total = 0
    for p in params:
        flat = p.value.reshape(-1)
        size = flat.size
        coords = np.arange(size) if size <= coords_per_param else rng.choice(
            size, coords_per_param, replace=False)
        g = analytic[p.name].reshape(-1)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            up, _ = loss_and_grad()
            flat[c] = orig - step
            down, _ = loss_and_grad()
            flat[c] = orig
            numeric = (up - down) / (2.0 * step)
            err = abs(g[c] - numeric) / max(abs(numeric), abs_floor)
            worst = max(worst, err)
        per_param[p.name] = worst
        total += len(coords)
    return GradCheckReport(max(per_param.values(), default=0.0), per_param, total, tolerance)

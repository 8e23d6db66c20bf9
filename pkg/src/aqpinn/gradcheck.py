"""Automatic derivatives against central finite differences.

Input derivatives: each carried derivative of order k is compared with the
central difference of the order k-1 derivative along one coordinate, so the
first-order check goes through plain values.  Parameter partials: every entry
of dL/dgamma is compared with a central difference of the loss.  Perturbing a
weight of the dense head cannot change the attention features, so those are
computed once and reused for the dense-head partials.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import jet as J
from .errors import UsageError
from .model import (ModelConfig, ParamVector, attention_features, init_params, loss_value, network,
                    total_loss)

#: magnitude below which errors are measured absolutely rather than relatively
REL_FLOOR = 1e-4
INPUT_STEP = 1e-5
PARAM_STEP = 1e-5
SHIFT_DIRECT_TOL = 1e-10


def rel_error(a, b, floor=REL_FLOOR) -> np.ndarray:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@dataclass
class GradcheckReport:
    input_errors: dict = field(default_factory=dict)  # derivative order -> max relative error
    param_error: float = 0.0
    worst_param: str = ""
    shift_vs_direct: float = 0.0
    n_params: int = 0
    n_points: int = 0

    @property
    def max_error(self) -> float:
        return max([self.param_error, *self.input_errors.values()])

    def passed(self, tolerance: float) -> bool:
        return self.max_error < tolerance and self.shift_vs_direct < SHIFT_DIRECT_TOL

    def lines(self, tolerance: float) -> list[str]:
        out = [f"points: {self.n_points}  parameters: {self.n_params}"]
        for order, err in sorted(self.input_errors.items()):
            out.append(f"input derivatives, order {order}: max rel error {err:.3e}")
        out.append(f"parameter partials: max rel error {self.param_error:.3e} (worst: {self.worst_param})")
        out.append(f"parameter shift vs direct: max abs difference {self.shift_vs_direct:.3e}")
        out.append(f"{'PASS' if self.passed(tolerance) else 'FAIL'} at tolerance {tolerance:g}")
        return out


def input_derivative_errors(points, gamma, config: ModelConfig, h=INPUT_STEP) -> dict:
    space = config.space
    P = points.shape[0]
    shifted = [points]
    for v in range(3):
        for sign in (1.0, -1.0):
            q = points.copy()
            q[:, v] += sign * h
            shifted.append(q)
    out = network(J.lift_points(np.concatenate(shifted), space), gamma, config)

    def block(alpha, k):
        return out.deriv(alpha)[k * P:(k + 1) * P]

    errors: dict = {}
    for alpha in space.indices:
        if sum(alpha) == 0:
            continue
        v = max(i for i in range(3) if alpha[i])
        beta = tuple(a - (i == v) for i, a in enumerate(alpha))
        fd = (block(beta, 1 + 2 * v) - block(beta, 2 + 2 * v)) / (2 * h)
        err = float(np.max(rel_error(block(alpha, 0), fd)))
        errors[sum(alpha)] = max(errors.get(sum(alpha), 0.0), err)
    return errors


def param_partial_errors(points, targets, params: ParamVector, config: ModelConfig, h=PARAM_STEP):
    """(max relative error, slot name of the worst entry) over every entry of gamma."""
    _, grad = total_loss((points, targets), params, config)
    gamma = params.gamma
    lifted = J.lift_points(points, config.space)
    features = attention_features(lifted, gamma, config)
    worst, worst_name = 0.0, ""
    for name, (sl, _) in params.slots.items():
        reuse = name.startswith(("dense", "out."))
        for k in range(sl.start, sl.stop):
            vals = []
            for sign in (1.0, -1.0):
                g = gamma.copy()
                g[k] += sign * h
                vals.append(loss_value(g, points, targets, config, features if reuse else None).total)
            fd = (vals[0] - vals[1]) / (2 * h)
            err = float(rel_error(grad[k], fd))
            if err > worst:
                worst, worst_name = err, f"{name}[{k - sl.start}]"
    return worst, worst_name


def shift_vs_direct(points, targets, params: ParamVector, config: ModelConfig) -> float:
    if not config.is_quantum:
        return 0.0
    _, g_shift = total_loss((points, targets), params, config, gradient="shift")
    _, g_direct = total_loss((points, targets), params, config, gradient="direct")
    return float(np.max(np.abs(g_shift - g_direct)))


def gradcheck(config: ModelConfig, n_points: int = 4, seed: int = 0, params: ParamVector | None = None,
              include_params: bool = True) -> GradcheckReport:
    """Check input and parameter derivatives at ``n_points`` seeded random points."""
    if n_points < 1:
        raise UsageError(f"need at least one point, got {n_points}")
    rng = np.random.default_rng(seed)
    points = rng.uniform(-1.0, 1.0, size=(n_points, 3))
    targets = rng.normal(size=(n_points, 3))
    params = params or init_params(config)
    report = GradcheckReport(n_params=len(params), n_points=n_points)
    report.input_errors = input_derivative_errors(points, params.gamma, config)
    if include_params:
        report.param_error, report.worst_param = param_partial_errors(points, targets, params, config)
        report.shift_vs_direct = shift_vs_direct(points, targets, params, config)
    return report

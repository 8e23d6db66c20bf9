"""L-BFGS with a strong-Wolfe line search, the LR range test, and the training loop.

The "learning rate" of L-BFGS is the initial trial step of each line search.
On the first iteration that trial is scaled by ``min(1, 1/||g||_1)`` because no
curvature information exists yet.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import data as D
from .errors import NumericError, UsageError
from .model import LossBreakdown, ModelConfig, ParamVector, init_params, loss_value, total_loss

log = logging.getLogger(__name__)

CURVATURE_EPS = 1e-12


@dataclass
class LbfgsState:
    history_size: int = 10
    lr: float = 1.0
    c1: float = 1e-4
    c2: float = 0.9
    max_ls: int = 25
    s_hist: deque = field(default_factory=deque)
    y_hist: deque = field(default_factory=deque)
    iteration: int = 0

    def __post_init__(self):
        if self.history_size < 0:
            raise UsageError("history_size must be >= 0")
        if not (0 < self.c1 < self.c2 < 1):
            raise UsageError(f"need 0 < c1 < c2 < 1, got c1={self.c1}, c2={self.c2}")
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise UsageError(f"learning rate must be positive and finite, got {self.lr}")

    def push(self, s: np.ndarray, y: np.ndarray) -> bool:
        """Store a curvature pair if s.y > eps; oldest pair drops out beyond ``history_size``."""
        if self.history_size == 0 or float(s @ y) <= CURVATURE_EPS:
            return False
        self.s_hist.append(s)
        self.y_hist.append(y)
        while len(self.s_hist) > self.history_size:
            self.s_hist.popleft()
            self.y_hist.popleft()
        return True

    def reset(self):
        self.s_hist.clear()
        self.y_hist.clear()


def two_loop_direction(grad, s_hist, y_hist) -> np.ndarray:
    """-H g with H the L-BFGS inverse-Hessian estimate, H0 = (s.y / y.y) I from the newest pair."""
    q = np.array(grad, dtype=float)
    if not s_hist:
        return -q
    rhos = [1.0 / float(s @ y) for s, y in zip(s_hist, y_hist)]
    alphas = []
    for s, y, rho in reversed(list(zip(s_hist, y_hist, rhos))):
        a = rho * float(s @ q)
        alphas.append(a)
        q -= a * y
    s, y = s_hist[-1], y_hist[-1]
    r = q * (float(s @ y) / float(y @ y))
    for (s, y, rho), a in zip(zip(s_hist, y_hist, rhos), reversed(alphas)):
        b = rho * float(y @ r)
        r += s * (a - b)
    return -r


def _cubic_min(x1, f1, g1, x2, f2, g2, lo, hi):
    """Minimiser of the cubic through two (value, slope) points, clipped to [lo, hi]."""
    d1 = g1 + g2 - 3.0 * (f1 - f2) / (x1 - x2)
    disc = d1 * d1 - g1 * g2
    if disc >= 0:
        d2 = math.sqrt(disc)
        if x1 > x2:
            d2 = -d2
        denom = g2 - g1 + 2.0 * d2
        if denom != 0:
            x = x2 - (x2 - x1) * (g2 + d2 - d1) / denom
            if math.isfinite(x):
                return min(max(x, lo), hi)
    return 0.5 * (lo + hi)


@dataclass
class LineSearchResult:
    step: float
    f: float
    g: np.ndarray
    n_evals: int
    ok: bool


def _check(f, g):
    if not (math.isfinite(f) and np.all(np.isfinite(g))):
        raise NumericError("objective returned a non-finite value")
    return f, g


def strong_wolfe(fun, x, f0, g0, d, step, c1=1e-4, c2=0.9, max_ls=25) -> LineSearchResult:
    """Bracketing + zoom search for a step meeting the strong Wolfe conditions.

    ``max_ls`` caps the number of objective evaluations.  On failure the best
    Armijo-satisfying point seen (if any) is returned with ``ok=False``.
    """
    gd0 = float(g0 @ d)
    if gd0 >= 0:
        return LineSearchResult(0.0, f0, g0, 0, False)
    evals = 0
    best = None

    def evaluate(a):
        nonlocal evals, best
        evals += 1
        f, g = _check(*fun(x + a * d))
        if f <= f0 + c1 * a * gd0 and (best is None or f < best[1]):
            best = (a, f, g)
        return f, g, float(g @ d)

    a_prev, f_prev, gd_prev, g_prev = 0.0, f0, gd0, g0
    a = step
    lo = hi = None
    while evals < max_ls:
        f, g, gd = evaluate(a)
        if f > f0 + c1 * a * gd0 or (evals > 1 and f >= f_prev):
            lo, hi = (a_prev, f_prev, gd_prev, g_prev), (a, f, gd, g)
            break
        if abs(gd) <= -c2 * gd0:
            return LineSearchResult(a, f, g, evals, True)
        if gd >= 0:
            lo, hi = (a, f, gd, g), (a_prev, f_prev, gd_prev, g_prev)
            break
        nxt = _cubic_min(a_prev, f_prev, gd_prev, a, f, gd, a + 0.01 * (a - a_prev), 10.0 * a)
        a_prev, f_prev, gd_prev, g_prev = a, f, gd, g
        a = nxt
    else:
        return _fallback(best, f0, g0, evals)

    # zoom: lo holds the lower value and satisfies Armijo
    while evals < max_ls:
        (a_lo, f_lo, gd_lo, _), (a_hi, f_hi, gd_hi, _) = lo, hi
        left, right = min(a_lo, a_hi), max(a_lo, a_hi)
        if right - left < 1e-14 * max(1.0, right):
            break
        margin = 0.1 * (right - left)
        a = _cubic_min(a_lo, f_lo, gd_lo, a_hi, f_hi, gd_hi, left + margin, right - margin)
        f, g, gd = evaluate(a)
        if f > f0 + c1 * a * gd0 or f >= f_lo:
            hi = (a, f, gd, g)
        else:
            if abs(gd) <= -c2 * gd0:
                return LineSearchResult(a, f, g, evals, True)
            if gd * (a_hi - a_lo) >= 0:
                hi = lo
            lo = (a, f, gd, g)
    return _fallback(best, f0, g0, evals)


def _fallback(best, f0, g0, evals):
    if best is None:
        return LineSearchResult(0.0, f0, g0, evals, False)
    return LineSearchResult(best[0], best[1], best[2], evals, False)


@dataclass
class LbfgsResult:
    x: np.ndarray
    trace: list  # objective value at x0 and after every iteration
    grad_norms: list  # ||g||_inf matching ``trace``
    n_evals: int
    line_search_ok: list  # per iteration
    converged: bool


Objective = Callable[[np.ndarray], tuple]


def lbfgs_minimize(objective: Objective, x0, state: LbfgsState | None = None, max_iters: int = 100,
                   tol: float = 1e-9, callback: Callable | None = None) -> LbfgsResult:
    """Minimise ``objective(x) -> (value, gradient)`` from ``x0``.

    ``callback(iteration, x, f, g)`` runs for iteration 0 (the start point) and
    after every accepted step.
    """
    state = state or LbfgsState()
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericError("x0 is not finite")
    f, g = _check(*objective(x))
    f = float(f)
    n_evals = 1
    trace, gnorms, oks = [f], [float(np.max(np.abs(g), initial=0.0))], []
    if callback:
        callback(0, x, f, g)
    converged = gnorms[-1] < tol or gnorms[-1] == 0.0
    while not converged and state.iteration < max_iters:
        first = not state.s_hist
        d = two_loop_direction(g, state.s_hist, state.y_hist)
        if float(g @ d) >= 0:
            state.reset()
            d, first = -g, True
        g1 = float(np.sum(np.abs(g)))
        step = min(1.0, 1.0 / g1) * state.lr if first else state.lr
        ls = strong_wolfe(objective, x, f, g, d, step, state.c1, state.c2, state.max_ls)
        n_evals += ls.n_evals
        if not ls.ok and not first:
            log.warning("line search failed at iteration %d; retrying along steepest descent", state.iteration + 1)
            state.reset()
            d = -g
            ls2 = strong_wolfe(objective, x, f, g, d, min(1.0, 1.0 / g1) * state.lr,
                               state.c1, state.c2, state.max_ls)
            n_evals += ls2.n_evals
            if ls2.step > 0 and (ls.step == 0 or ls2.f <= ls.f or ls2.ok):
                ls = ls2
        if ls.step == 0:
            log.warning("no decrease found at iteration %d; stopping", state.iteration + 1)
            break
        x_new = x + ls.step * d
        state.push(x_new - x, ls.g - g)
        x, f, g = x_new, float(ls.f), ls.g
        state.iteration += 1
        trace.append(f)
        gnorms.append(float(np.max(np.abs(g))))
        oks.append(ls.ok)
        if callback:
            callback(state.iteration, x, f, g)
        converged = gnorms[-1] < tol or gnorms[-1] == 0.0
    return LbfgsResult(x, trace, gnorms, n_evals, oks, converged)


# -- learning-rate range test ---------------------------------------------------

def default_rate_grid(lo=1e-4, hi=10.0, points=40) -> np.ndarray:
    return np.logspace(math.log10(lo), math.log10(hi), points)


@dataclass
class LrRangeResult:
    tested_rates: np.ndarray
    losses: np.ndarray  # final loss per rate (inf when the run blew up)
    iterations: np.ndarray  # iterations actually taken per rate
    initial_loss: float
    chosen_rate: float

    def decrease_per_iteration(self) -> np.ndarray:
        """(f0 - f_final) / iterations; -inf where the loss did not go down."""
        out = np.full(len(self.tested_rates), -np.inf)
        for i, (f, k) in enumerate(zip(self.losses, self.iterations)):
            if np.isfinite(f) and f < self.initial_loss and k > 0:
                out[i] = (self.initial_loss - f) / k
        return out


def select_rate(rates, decreases) -> float:
    """Largest rate among those with the steepest per-iteration decrease."""
    decreases = np.asarray(decreases, dtype=float)
    if not np.any(np.isfinite(decreases)):
        raise NumericError("no-decrease: no tested rate lowered the loss; try a smaller rate grid")
    best = np.max(decreases)
    return float(np.asarray(rates)[np.flatnonzero(decreases == best)[-1]])


def lr_range_test(objective: Objective, x0, rates=None, k: int = 5, history_size: int = 10) -> LrRangeResult:
    """Run ``k`` L-BFGS iterations from a fresh copy of ``x0`` for every rate."""
    rates = default_rate_grid() if rates is None else np.asarray(rates, dtype=float)
    if rates.ndim != 1 or len(rates) == 0 or np.any(np.diff(rates) <= 0) or np.any(rates <= 0):
        raise UsageError("rates must be positive and strictly increasing")
    f0 = float(_check(*objective(np.array(x0, dtype=float)))[0])
    losses, iters = np.full(len(rates), np.inf), np.zeros(len(rates), dtype=int)
    for i, r in enumerate(rates):
        try:
            res = lbfgs_minimize(objective, np.array(x0, dtype=float), LbfgsState(history_size, lr=float(r)),
                                 max_iters=k, tol=0.0)
        except NumericError:
            continue
        losses[i], iters[i] = res.trace[-1], len(res.trace) - 1
    result = LrRangeResult(rates, losses, iters, f0, float("nan"))
    result.chosen_rate = select_rate(rates, result.decrease_per_iteration())
    return result


# -- training loop --------------------------------------------------------------

@dataclass(frozen=True)
class TrainOptions:
    n_train: int = 2000
    max_iters: int = 200
    tol: float = 1e-9
    seed: int = 0
    lr: float | str = "auto"
    history_size: int = 10
    lr_points: int = 40
    lr_probe_iters: int = 5
    lr_probe_points: int = 256  # 0 = probe on the full training batch

    def to_text(self) -> str:
        rows = [("n_train", self.n_train), ("max_iters", self.max_iters), ("tol", repr(self.tol)),
                ("sample_seed", self.seed), ("lr", self.lr), ("history_size", self.history_size),
                ("lr_points", self.lr_points), ("lr_probe_iters", self.lr_probe_iters),
                ("lr_probe_points", self.lr_probe_points)]
        return "".join(f"{k} = {v}\n" for k, v in rows)


@dataclass
class MetricRow:
    iteration: int
    data_loss: float
    phys_loss: float
    total: float
    grad_inf_norm: float

    def format(self) -> str:
        return "\t".join([str(self.iteration)] + ["%.17g" % v for v in
                                                   (self.data_loss, self.phys_loss, self.total, self.grad_inf_norm)])


@dataclass
class TrainResult:
    params: ParamVector
    rows: list
    header: list
    lr: float
    lr_result: LrRangeResult | None
    lbfgs: LbfgsResult

    def log_text(self) -> str:
        lines = [f"# {h}" for h in self.header]
        lines.append("# iter\tdata_loss\tphys_loss\ttotal\tgrad_inf_norm")
        lines += [r.format() for r in self.rows]
        return "\n".join(lines) + "\n"


class LossObjective:
    """(value, gradient) of the model loss on a fixed batch, remembering each evaluation's breakdown."""

    def __init__(self, config: ModelConfig, points, targets):
        self.config, self.points, self.targets = config, points, targets
        self.memo: dict[bytes, LossBreakdown] = {}
        self.n_evals = 0

    def __call__(self, gamma):
        lb, grad = total_loss((self.points, self.targets), gamma, self.config)
        self.n_evals += 1
        if len(self.memo) > 64:
            self.memo.clear()
        self.memo[np.asarray(gamma).tobytes()] = lb
        return lb.total, grad

    def breakdown(self, gamma) -> LossBreakdown:
        key = np.asarray(gamma).tobytes()
        if key not in self.memo:
            self.memo[key] = loss_value(gamma, self.points, self.targets, self.config)
        return self.memo[key]


def train(config: ModelConfig, dataset: D.FlowDataset, opts: TrainOptions = TrainOptions(),
          params: ParamVector | None = None) -> TrainResult:
    """Sample -> (optional) LR range test -> L-BFGS on the total loss."""
    flat = D.flatten(dataset)
    batch = D.sample_train(flat, opts.n_train, opts.seed)
    if len(batch) == 0:
        raise UsageError("n_train must be >= 1")
    points, targets = batch.points(), batch.targets()
    params = params or init_params(config)
    objective = LossObjective(config, points, targets)
    header = config.to_text().splitlines() + opts.to_text().splitlines()

    lr_result = None
    if opts.lr == "auto":
        probe = objective
        if 0 < opts.lr_probe_points < len(batch):
            probe = LossObjective(config, points[:opts.lr_probe_points], targets[:opts.lr_probe_points])
        lr_result = lr_range_test(probe, params.gamma, default_rate_grid(points=opts.lr_points),
                                  opts.lr_probe_iters, opts.history_size)
        lr = lr_result.chosen_rate
    else:
        try:
            lr = float(opts.lr)
        except ValueError:
            raise UsageError(f"lr must be 'auto' or a number, got {opts.lr!r}") from None
    header.append(f"chosen_lr = {lr!r}")

    rows = []

    def record(it, x, f, g):
        lb = objective.breakdown(x)
        rows.append(MetricRow(it, lb.data_loss, lb.phys_loss, lb.total, float(np.max(np.abs(g), initial=0.0))))

    res = lbfgs_minimize(objective, params.gamma, LbfgsState(opts.history_size, lr=lr),
                         opts.max_iters, opts.tol, record)
    return TrainResult(ParamVector.from_array(res.x, config), rows, header, lr, lr_result, res)


def input_normalisation(dataset: D.FlowDataset) -> tuple[tuple, tuple]:
    """Shift and scale mapping the dataset's (x, y, t) box onto [-1, 1]^3."""
    lo, hi = dataset.bounds()
    span = np.where(hi > lo, hi - lo, 1.0)
    return tuple(float(v) for v in 0.5 * (lo + hi)), tuple(float(v) for v in 2.0 / span)


__all__ = [
    "LbfgsState", "LbfgsResult", "LineSearchResult", "LossObjective", "LrRangeResult",
    "MetricRow", "TrainOptions", "TrainResult", "default_rate_grid", "input_normalisation",
    "lbfgs_minimize", "lr_range_test", "select_rate", "strong_wolfe", "train", "two_loop_direction",
]

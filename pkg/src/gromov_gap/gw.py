"""Entropic Gromov-Wasserstein between uniform empirical measures, plus a brute-force oracle."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, DomainError, TooLarge
from .geometry import CostMatrix, cost_factors, rescale_by_stat
from .sinkhorn import Coupling, SinkhornConfig, entropy, marginal_error, sinkhorn_solve

ENTROPY_MODES = ("shannon", "offset_2logn")
BRUTE_FORCE_CAP = 8
WARM_START_BUDGET = 1000


@dataclass
class GwConfig:
    epsilon0: float = 0.1
    stat_kind: str = "mean"
    max_outer: int = 50
    outer_tolerance: float = 1e-5
    inner: SinkhornConfig = field(default_factory=lambda: SinkhornConfig(epsilon=1.0))
    use_factored_path: bool | None = None
    entropy_mode: str = "offset_2logn"

    def __post_init__(self):
        if not self.epsilon0 > 0:
            raise DomainError(f"epsilon0 must be positive, got {self.epsilon0}")
        if self.max_outer < 1:
            raise DomainError("max_outer must be >= 1")
        if self.entropy_mode not in ENTROPY_MODES:
            raise DomainError(f"entropy_mode must be one of {ENTROPY_MODES}")
        if self.stat_kind not in ("mean", "max", "std", "none"):
            raise DomainError(f"unknown statistic {self.stat_kind!r}")


@dataclass
class GwResult:
    plan: Coupling
    quadratic_value: float
    entropic_value: float
    outer_iterations: int
    converged: bool
    scale_x: float
    scale_y: float
    epsilon: float
    trace: list = field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "quadratic_value": self.quadratic_value,
            "entropic_value": self.entropic_value,
            "outer_iterations": self.outer_iterations,
            "converged": self.converged,
            "scale_x": self.scale_x,
            "scale_y": self.scale_y,
            "epsilon": self.epsilon,
            "marginal_error": self.plan.marginal_error,
        }


def _check_shapes(cx: CostMatrix, cy: CostMatrix, plan=None):
    if cx.values.shape != cy.values.shape or cx.values.shape[0] != cx.values.shape[1]:
        raise DimensionMismatch(f"cost matrices {cx.values.shape} and {cy.values.shape} must be n x n with equal n")
    if plan is not None and np.shape(plan) != cx.values.shape:
        raise DimensionMismatch(f"plan shape {np.shape(plan)} does not match costs {cx.values.shape}")


def _factors(cm: CostMatrix):
    u, v, sign = cost_factors(cm.kernel, cm.points)
    return u / cm.scale, v, sign / cm.scale


def _factored_cross(cx: CostMatrix, cy: CostMatrix, plan: np.ndarray) -> np.ndarray:
    """C_X P C_Y without forming a cubic product; O(n^2 (d_X + d_Y))."""
    ux, vx, sx = _factors(cx)
    uy, vy, sy = _factors(cy)
    ones = np.ones(plan.shape[0])
    # C_X P = u (1^T P) + 1 (u^T P) + s V (V^T P)
    cxp = np.outer(ux, ones @ plan) + np.outer(ones, ux @ plan) + sx * (vx @ (vx.T @ plan))
    # (C_X P) C_Y = (C_X P) u 1^T + (C_X P) 1 u^T + s (C_X P V) V^T
    return np.outer(cxp @ uy, ones) + np.outer(cxp.sum(axis=1), uy) + sy * ((cxp @ vy) @ vy.T)


def _can_factor(cx: CostMatrix, cy: CostMatrix, use_factored) -> bool:
    available = cx.points is not None and cy.points is not None
    if use_factored is None:
        return available
    if use_factored and not available:
        raise DomainError("factored path needs the points the cost matrices were built from")
    return bool(use_factored)


def gw_linearized_cost(cx: CostMatrix, cy: CostMatrix, plan, use_factored: bool | None = False) -> np.ndarray:
    """L(P)_ij = sum_{i'j'} (C_X[i,i'] - C_Y[j,j'])^2 P_i'j', expanded with uniform marginals.

    <L(P), P> is the quadratic GW objective and 2 L(P) its gradient, so the
    next outer iterate is the Sinkhorn plan for cost 2 L(P) at the same epsilon.
    """
    _check_shapes(cx, cy, plan)
    plan = np.asarray(plan, dtype=np.float64)
    n = plan.shape[0]
    a = np.full(n, 1.0 / n)
    row = (cx.values ** 2) @ a
    col = (cy.values ** 2) @ a
    if _can_factor(cx, cy, use_factored):
        cross = _factored_cross(cx, cy, plan)
    else:
        cross = cx.values @ plan @ cy.values
    return row[:, None] + col[None, :] - 2.0 * cross


def quadratic_objective(cx: CostMatrix, cy: CostMatrix, plan, use_factored: bool | None = False) -> float:
    """sum (C_X[i,i'] - C_Y[j,j'])^2 P_ij P_i'j'.

    The square is expanded with the plan's own marginals rather than 1/n, so a
    tiny marginal residual is not amplified by large cost entries.
    """
    _check_shapes(cx, cy, plan)
    plan = np.asarray(plan, dtype=np.float64)
    r, c = plan.sum(axis=1), plan.sum(axis=0)
    if _can_factor(cx, cy, use_factored):
        cross = _factored_cross(cx, cy, plan)
    else:
        cross = cx.values @ plan @ cy.values
    value = r @ (cx.values ** 2) @ r + c @ (cy.values ** 2) @ c - 2.0 * float(np.sum(cross * plan))
    return max(float(value), 0.0)


def entropic_value(quadratic_value: float, plan: np.ndarray, epsilon: float, mode: str) -> float:
    value = quadratic_value - epsilon * entropy(plan)
    if mode == "offset_2logn":
        value -= 2.0 * epsilon * math.log(plan.shape[0])
    return value


def _prepare(cm: CostMatrix, stat_kind: str) -> CostMatrix:
    if cm.stat_kind == "none" and stat_kind != "none":
        return rescale_by_stat(cm, stat_kind)
    return cm


def gw_solve_entropic(cx: CostMatrix, cy: CostMatrix, config: GwConfig | None = None,
                      init_plan=None, init_potentials=None) -> GwResult:
    """Entropic GW by repeated Sinkhorn on the linearized cost.

    Unscaled inputs are rescaled by ``config.stat_kind`` first; epsilon0 then
    applies to the rescaled costs. ``init_plan``/``init_potentials`` override the
    uniform-product start (used for warm-started epsilon schedules).
    """
    config = config or GwConfig()
    _check_shapes(cx, cy)
    cx, cy = _prepare(cx, config.stat_kind), _prepare(cy, config.stat_kind)
    n = cx.n
    eps = float(config.epsilon0)
    factored = _can_factor(cx, cy, config.use_factored_path)
    plan = np.full((n, n), 1.0 / n**2) if init_plan is None else np.array(init_plan, dtype=np.float64)
    _check_shapes(cx, cy, plan)

    potentials = init_potentials
    trace = []
    coupling = None
    converged = False
    outer = 0
    for outer in range(1, config.max_outer + 1):
        lin = gw_linearized_cost(cx, cy, plan, factored)
        inner = replace(config.inner, epsilon=eps, warm_start_potentials=None)
        if potentials is None:
            coupling = sinkhorn_solve(2.0 * lin, inner)
        else:
            budget = min(inner.max_iterations, max(WARM_START_BUDGET, inner.max_iterations // 10))
            coupling = sinkhorn_solve(2.0 * lin, replace(inner, warm_start_potentials=potentials,
                                                         max_iterations=budget))
            if not coupling.converged:
                # stale potentials can sit far from the new optimum when the cost range
                # dwarfs epsilon; a cold start re-enters through epsilon scaling
                coupling = sinkhorn_solve(2.0 * lin, inner)
        potentials = coupling.log_potentials
        change = float(np.linalg.norm(coupling.plan - plan))
        plan = coupling.plan
        quad = quadratic_objective(cx, cy, plan, factored)
        trace.append({
            "outer": outer,
            "objective": quad - eps * entropy(plan),
            "plan_change": change,
            "inner_iterations": coupling.iterations_used,
            "marginal_error": coupling.marginal_error,
        })
        if change < config.outer_tolerance:
            converged = True
            break

    quad = quadratic_objective(cx, cy, plan, factored)
    coupling = replace(coupling, marginal_error=marginal_error(plan))
    return GwResult(
        plan=coupling,
        quadratic_value=quad,
        entropic_value=entropic_value(quad, plan, eps, config.entropy_mode),
        outer_iterations=outer,
        converged=converged and coupling.converged,
        scale_x=cx.scale,
        scale_y=cy.scale,
        epsilon=eps,
        trace=trace,
    )


def _values(cx: np.ndarray, cy: np.ndarray, perms: np.ndarray) -> np.ndarray:
    permuted = cy[perms[:, :, None], perms[:, None, :]]
    return np.mean((cx[None] - permuted) ** 2, axis=(1, 2))


def gw_brute_force(cx: CostMatrix, cy: CostMatrix, cap: int = BRUTE_FORCE_CAP, chunk: int = 5040):
    """Exact GW between two n-point uniform measures by scanning all permutations.

    Returns (value, sigma) with value = min_sigma mean_ij (C_X[i,j] - C_Y[sigma_i, sigma_j])^2;
    among numerical ties the lexicographically smallest sigma wins.
    """
    _check_shapes(cx, cy)
    n = cx.n
    if n > cap:
        raise TooLarge(f"brute force over {n}! permutations exceeds the cap n <= {cap}")
    x, y = cx.values, cy.values
    perms_iter = itertools.permutations(range(n))
    values, perms = [], []
    while True:
        block = np.array(list(itertools.islice(perms_iter, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        perms.append(block.reshape(-1, n))
        values.append(_values(x, y, perms[-1]))
    values = np.concatenate(values)
    perms = np.concatenate(perms)
    best = values.min()
    idx = int(np.flatnonzero(values <= best + 1e-12 * (1.0 + abs(best)))[0])
    return float(values[idx]), perms[idx].copy()


def epsilon_schedule(start: float = 0.1, stop: float = 0.005, steps: int = 6) -> list:
    """Geometric schedule from ``start`` down to ``stop`` (both included)."""
    if not (start > 0 and stop > 0) or steps < 1:
        raise DomainError("schedule needs positive endpoints and at least one step")
    if steps == 1:
        return [float(stop)]
    return [float(v) for v in np.geomspace(start, stop, steps)]


def jittered_uniform_plan(n: int, rng, scale: float = 0.1) -> np.ndarray:
    """Uniform product plan nudged along a random direction with zero row and column sums.

    The marginals stay exactly uniform. Useful to leave the uniform plan when it
    is a symmetric critical point (every n = 2 instance, for one).
    """
    z = rng.standard_normal((n, n))
    z = z - z.mean(axis=0, keepdims=True) - z.mean(axis=1, keepdims=True) + z.mean()
    peak = np.abs(z).max()
    if peak == 0:
        return np.full((n, n), 1.0 / n**2)
    return (1.0 + scale * z / peak) / n**2


def gw_solve_annealed(cx: CostMatrix, cy: CostMatrix, schedule=None, config: GwConfig | None = None,
                      init_plan=None) -> GwResult:
    """Entropic GW along a decreasing epsilon schedule, each stage warm-started from the last.

    The plan and dual potentials of one stage seed the next. Returns the final
    stage's result; its trace concatenates all stages.
    """
    config = config or GwConfig()
    schedule = epsilon_schedule() if schedule is None else list(schedule)
    if any(b > a for a, b in zip(schedule, schedule[1:])):
        raise DomainError("epsilon schedule must be non-increasing")
    cx, cy = _prepare(cx, config.stat_kind), _prepare(cy, config.stat_kind)
    plan, potentials, trace, result = init_plan, None, [], None
    for eps in schedule:
        result = gw_solve_entropic(cx, cy, replace(config, epsilon0=eps, stat_kind="none"),
                                   init_plan=plan, init_potentials=potentials)
        plan, potentials = result.plan.plan, result.plan.log_potentials
        trace.extend(dict(t, epsilon=eps) for t in result.trace)
    return replace(result, trace=trace)

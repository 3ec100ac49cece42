"""Distortion, the Gromov-Monge gap estimator and its envelope gradient, weak-convexity diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateScale, DimensionMismatch, DomainError, NotConverged
from .geometry import (
    SCALE_FLOOR,
    SCALED_SQEUCLIDEAN,
    CostKernel,
    CostMatrix,
    PointCloud,
    cost_log_alpha_grad,
    cost_stat,
    cost_vjp,
    pairwise_costs,
)
from .gw import BRUTE_FORCE_CAP, GwConfig, GwResult, gw_brute_force, gw_solve_entropic
from .linalg import jacobi_eigvalsh
from .sinkhorn import entropy


def _check_pair(source: PointCloud, mapped: PointCloud):
    if source.n != mapped.n:
        raise DimensionMismatch(f"source has {source.n} points, mapped has {mapped.n}")


def distortion(source: PointCloud, mapped: PointCloud, kx: CostKernel, ky: CostKernel) -> float:
    """mean_ij (c_X(x_i, x_j) - c_Y(t_i, t_j))^2 on raw costs."""
    _check_pair(source, mapped)
    diff = pairwise_costs(kx, source.points) - pairwise_costs(ky, mapped.points)
    return float(np.mean(diff**2))


def distortion_gradient(source: PointCloud, mapped: PointCloud, kx: CostKernel, ky: CostKernel):
    """(value, d/d mapped points, d/d log_alpha of ky)."""
    _check_pair(source, mapped)
    n = source.n
    diff = pairwise_costs(kx, source.points) - pairwise_costs(ky, mapped.points)
    cot = -2.0 * diff / n**2
    return (float(np.mean(diff**2)), cost_vjp(ky, mapped.points, cot),
            cost_log_alpha_grad(ky, mapped.points, cot))


@dataclass
class GmgReport:
    dst: float
    gw_value: float
    gmg: float
    scale_x: float
    scale_y: float
    epsilon_used: float
    entropy_mode: str
    solver: dict
    gw: GwResult = field(repr=False)
    cx: CostMatrix = field(repr=False)
    cy: CostMatrix = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "dst": self.dst,
            "gw_value": self.gw_value,
            "gmg": self.gmg,
            "scale_x": self.scale_x,
            "scale_y": self.scale_y,
            "epsilon_used": self.epsilon_used,
            "entropy_mode": self.entropy_mode,
            "solver": self.solver,
        }


def _scaled(values, kernel, points, stat_kind, fixed):
    if fixed is not None:
        s = float(fixed)
    elif stat_kind == "none":
        s = 1.0
    else:
        s = cost_stat(values, stat_kind)
        if not s > SCALE_FLOOR:
            raise DegenerateScale(f"{stat_kind} of cost matrix is {s:.3e}; cannot rescale")
    return CostMatrix(values / s, kernel, scale=s, stat_kind=stat_kind, points=points)


def gmg_from_samples(source: PointCloud, mapped: PointCloud, kx: CostKernel, ky: CostKernel,
                     config: GwConfig | None = None, scales: tuple | None = None,
                     init_plan=None, pairing_fallback: bool = True) -> GmgReport:
    """Entropic GMG estimate for the map source -> mapped (rowwise).

    Both cost matrices are divided by ``config.stat_kind`` statistics (or by
    fixed ``scales``), GW is solved at epsilon0 on the rescaled costs, and the
    distortion and GW terms are multiplied back by s_X * s_Y.

    The map's own pairing (plan I/n) is feasible with objective dst - eps*log n.
    If the solve ends above that, it has stalled in a poor local minimum, and
    with ``pairing_fallback`` it is rerun from the pairing plan, which the
    outer iteration can only improve on. That keeps the shannon-mode gap
    nonnegative.
    """
    config = config or GwConfig()
    _check_pair(source, mapped)
    if source.n < 2:
        raise DomainError("GMG needs at least two points")
    sx, sy = (None, None) if scales is None else scales
    cx = _scaled(pairwise_costs(kx, source.points), kx, source.points, config.stat_kind, sx)
    cy = _scaled(pairwise_costs(ky, mapped.points), ky, mapped.points, config.stat_kind, sy)
    dst_r = float(np.mean((cx.values - cy.values) ** 2))
    inner_cfg = replace(config, stat_kind="none")
    gw = gw_solve_entropic(cx, cy, inner_cfg, init_plan=init_plan)
    n = source.n
    pairing_objective = dst_r - config.epsilon0 * math.log(n)
    found = gw.quadratic_value - config.epsilon0 * entropy(gw.plan.plan)
    if pairing_fallback and found > pairing_objective:
        alt = gw_solve_entropic(cx, cy, inner_cfg, init_plan=np.eye(n) / n)
        if alt.quadratic_value - config.epsilon0 * entropy(alt.plan.plan) < found:
            gw = alt
    gw = replace(gw, scale_x=cx.scale, scale_y=cy.scale)
    prod = cx.scale * cy.scale
    dst = dst_r * prod
    gw_value = gw.entropic_value * prod
    return GmgReport(
        dst=dst,
        gw_value=gw_value,
        gmg=dst - gw_value,
        scale_x=cx.scale,
        scale_y=cy.scale,
        epsilon_used=config.epsilon0 * prod,
        entropy_mode=config.entropy_mode,
        solver={"outer_iterations": gw.outer_iterations, "converged": gw.converged,
                "quadratic_value": gw.quadratic_value * prod,
                "marginal_error": gw.plan.marginal_error},
        gw=gw,
        cx=cx,
        cy=cy,
    )


def gmg_gradient(source: PointCloud, mapped: PointCloud, kx: CostKernel, ky: CostKernel,
                 config: GwConfig | None = None, report: GmgReport | None = None,
                 require_converged: bool = True):
    """Gradient of the GMG with respect to the mapped points (and ky's log_alpha).

    The GW plan is held fixed (envelope argument) and the scales s_X, s_Y and
    epsilon are constants. Pass ``report`` to reuse the solve it came from.
    Returns (report, grad of shape mapped.points, d/d log_alpha).
    """
    if report is None:
        report = gmg_from_samples(source, mapped, kx, ky, config)
    if require_converged and not report.gw.converged:
        raise NotConverged("GW solve did not converge; envelope gradient would be unreliable")
    n = source.n
    cx, cy = report.cx.values, report.cy.values
    plan = report.gw.plan.plan
    b = plan.sum(axis=0)
    # d gmg_r / d C_Y,r for the distortion and quadratic GW terms
    d_dst = -2.0 * (cx - cy) / n**2
    d_quad = -2.0 * (plan.T @ cx @ plan - cy * np.outer(b, b))
    cot = (d_dst - d_quad) * report.scale_x
    grad = cost_vjp(ky, mapped.points, cot)
    grad_alpha = cost_log_alpha_grad(ky, mapped.points, cot) if ky.family == SCALED_SQEUCLIDEAN else 0.0
    return report, grad, grad_alpha


def gmg_exact(source: PointCloud, mapped: PointCloud, kx: CostKernel, ky: CostKernel) -> float:
    """Unregularized GMG on raw costs: DST minus the brute-force GW value (small n only)."""
    cx = CostMatrix(pairwise_costs(kx, source.points), kx)
    cy = CostMatrix(pairwise_costs(ky, mapped.points), ky)
    value, _ = gw_brute_force(cx, cy)
    return distortion(source, mapped, kx, ky) - value


def gmg_multistart(source: PointCloud, mapped: PointCloud, kx: CostKernel, ky: CostKernel,
                   config: GwConfig | None = None) -> GmgReport:
    """Entropic GMG keeping the lowest GW objective over two starts.

    GW is nonconvex, so a single start can stop at a local minimum and
    understate the gap. The second start is the enumerated optimal
    permutation (n <= BRUTE_FORCE_CAP only).
    """
    config = config or GwConfig()
    best = gmg_from_samples(source, mapped, kx, ky, config)
    if source.n <= BRUTE_FORCE_CAP:
        cx, cy = best.cx, best.cy
        _, sigma = gw_brute_force(CostMatrix(cx.values, kx), CostMatrix(cy.values, ky))
        n = source.n
        start = np.zeros((n, n))
        start[np.arange(n), sigma] = 1.0 / n
        alt = gmg_from_samples(source, mapped, kx, ky, config, scales=(cx.scale, cy.scale), init_plan=start)
        if alt.gw_value < best.gw_value:
            best = alt
    return best


@dataclass
class RestrictionReport:
    full_gmg: float
    restricted_gmg: float
    tolerance: float
    restricted_tolerance: float
    applicable: bool
    holds: bool


def check_restriction_property(source: PointCloud, mapped: PointCloud, subset_indices,
                               kx: CostKernel, ky: CostKernel, config: GwConfig | None = None,
                               tol: float = 1e-3) -> RestrictionReport:
    """Zero GMG on a cloud should persist on any sub-cloud (same map values)."""
    idx = np.asarray(subset_indices, dtype=int)
    if idx.size == 0:
        raise DomainError("subset must be non-empty")
    full = gmg_from_samples(source, mapped, kx, ky, config).gmg
    if idx.size < 2:
        restricted = 0.0
    else:
        restricted = gmg_from_samples(source.subset(idx), mapped.subset(idx), kx, ky, config).gmg
    applicable = full < tol
    holds = (not applicable) or restricted < 10 * tol
    return RestrictionReport(full, restricted, tol, 10 * tol, applicable, holds)


@dataclass
class ConvexityReport:
    gamma_inner_n: float
    gamma_two_n: float
    spectrum_method: str
    lambda_max: float = 0.0
    lambda_min: float = 0.0

    def to_dict(self) -> dict:
        return {
            "gamma_inner_n": self.gamma_inner_n,
            "gamma_two_n": self.gamma_two_n,
            "lambda_max": self.lambda_max,
            "lambda_min": self.lambda_min,
            "spectrum_method": self.spectrum_method,
        }


def weak_convexity_constants(source: PointCloud) -> ConvexityReport:
    """Spectral width of (1/n) X X^T and the squared-Euclidean constant on top of it."""
    x = source.points
    n, d = x.shape
    if n > d:
        # rank(X X^T) <= d < n, so the smallest eigenvalue is exactly zero
        eig = jacobi_eigvalsh(x.T @ x / n, tol=1e-10)
        lmax, lmin = float(eig[-1]), 0.0
        method = f"cyclic Jacobi on the {d}x{d} matrix X^T X / n; lambda_min = 0 by rank"
    else:
        eig = jacobi_eigvalsh(x @ x.T / n, tol=1e-10)
        lmax, lmin = float(eig[-1]), float(eig[0])
        method = f"cyclic Jacobi on the {n}x{n} matrix X X^T / n"
    inner = max(lmax - lmin, 0.0)
    two = inner + float(np.max(np.einsum("ij,ij->i", x, x)))
    return ConvexityReport(inner, two, method, lmax, lmin)


@dataclass
class ChordReport:
    violations: int
    trials: int
    gamma: float
    penalty_weight: float
    worst_excess: float
    passed: bool


def chord_convexity_test(source: PointCloud, kernel_pair, gamma: float, trials: int = 200,
                         seed: int = 0, target_dim: int | None = None, epsilon: float = 1e-2,
                         method: str = "entropic", normalization: str = "proof") -> ChordReport:
    """Random-chord convexity test of F(T) = GMG(T) + w * |T|_F^2 / n.

    GMG here carries no 1/2 factor. With ``normalization="proof"`` the weight
    is w = 2 * gamma, the quadratic that the weak-convexity argument makes
    convex once the 1/2 is dropped; ``"definition"`` uses w = gamma / 2
    literally. GMG is evaluated on raw costs (no rescaling, so the functional
    itself does not move with T), in shannon mode at fixed ``epsilon``, or
    exactly by enumeration with ``method="exact"``.
    """
    if gamma < 0:
        raise DomainError("gamma must be nonnegative")
    if normalization not in ("proof", "definition"):
        raise DomainError(f"unknown normalization {normalization!r}")
    kx, ky = kernel_pair
    n = source.n
    dim = target_dim or source.d
    weight = 2.0 * gamma if normalization == "proof" else 0.5 * gamma
    rng = np.random.default_rng(seed)
    cfg = GwConfig(epsilon0=epsilon, stat_kind="none", entropy_mode="shannon", max_outer=500,
                   outer_tolerance=1e-8)
    cfg.inner.tolerance = 1e-10
    cfg.inner.max_iterations = 5000

    def gmg(t):
        mapped = PointCloud(t)
        if method == "exact":
            return gmg_exact(source, mapped, kx, ky)
        return gmg_multistart(source, mapped, kx, ky, cfg).gmg

    def objective(t):
        return gmg(t) + weight * float(np.sum(t * t)) / n

    violations, worst = 0, -math.inf
    for _ in range(trials):
        a = rng.standard_normal((n, dim))
        b = rng.standard_normal((n, dim))
        lam = rng.uniform(0.05, 0.95)
        fa, fb = objective(a), objective(b)
        fm = objective(lam * a + (1 - lam) * b)
        excess = fm - (lam * fa + (1 - lam) * fb)
        size = 1 + abs(fa) + abs(fb)
        worst = max(worst, excess / size)
        if excess > 1e-6 * size:
            violations += 1
    return ChordReport(violations, trials, gamma, weight, worst, violations == 0)

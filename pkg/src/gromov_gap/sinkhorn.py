"""Stabilized Sinkhorn for uniform marginals and the debiased Sinkhorn divergence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, DomainError, NonFiniteCost
from .geometry import SQEUCLIDEAN, CostKernel, PointCloud, cost_vjp


@dataclass
class SinkhornConfig:
    epsilon: float = 0.05
    max_iterations: int = 2000
    tolerance: float = 1e-6
    warm_start_potentials: tuple | None = None
    # cold starts anneal epsilon down from the cost range (halving per stage)
    epsilon_scaling: bool = True
    # over-relaxation weight; 1.0 is plain Sinkhorn, must lie in [1, 2)
    relaxation: float = 1.0
    # if the alternating phase stalls, finish with Newton steps on the dual (n <= NEWTON_MAX_N)
    newton_polish: bool = True
    stall_check: int = 100
    # True: matrix scaling on a kernel with the potentials folded in (fast);
    # False: log-sum-exp updates of (f, g) at every step
    kernel_scaling: bool = True

    def __post_init__(self):
        if not self.epsilon > 0:
            raise DomainError(f"epsilon must be positive, got {self.epsilon}")
        if not self.tolerance > 0:
            raise DomainError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")
        if not 1.0 <= self.relaxation < 2.0:
            raise DomainError(f"relaxation must lie in [1, 2), got {self.relaxation}")


@dataclass
class Coupling:
    plan: np.ndarray
    log_potentials: tuple
    epsilon: float
    iterations_used: int
    marginal_error: float
    converged: bool

    @property
    def n(self) -> int:
        return self.plan.shape[0]


def _lse_rows(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1)
    return m + np.log(np.exp(z - m[:, None]).sum(axis=1))


def log_plan(f, g, cost, epsilon) -> np.ndarray:
    n = cost.shape[0]
    return (f[:, None] + g[None, :] - cost) / epsilon - 2.0 * np.log(n)


def marginal_error(plan: np.ndarray) -> float:
    n = plan.shape[0]
    return float(max(np.abs(plan.sum(axis=1) - 1.0 / n).max(), np.abs(plan.sum(axis=0) - 1.0 / n).max()))


# scalings are folded back into the potentials once |log u| or |log v| exceeds this
FOLD_BOUND = 30.0


def _iterate(neg_cost, eps, f, g, max_iterations, tolerance, relaxation):
    """Alternating updates at one epsilon; neg_cost is -cost (not divided).

    Runs matrix-scaling updates on the kernel with the potentials folded in,
    exp((f_i + g_j - C_ij) / eps) / n^2, and folds the scalings back into
    (f, g) through exact log-domain updates before they can under- or
    overflow. The stopping test reads the row marginals and is only trusted
    when the column scaling is exact, so relaxed runs re-project every 10 steps.
    """
    n = neg_cost.shape[0]
    a = 1.0 / n
    log_n = np.log(n)
    z = neg_cost / eps
    zt = z.T

    def update_f(g):
        return -eps * (_lse_rows(z + g[None, :] / eps) - log_n)

    def update_g(f):
        return -eps * (_lse_rows(zt + f[None, :] / eps) - log_n)

    def fold(f):
        g = update_g(f)
        kernel = np.exp(z + (f[:, None] + g[None, :]) / eps - 2.0 * log_n)
        if not np.all(kernel.sum(axis=1) > 0):
            f = update_f(g)
            g = update_g(f)
            kernel = np.exp(z + (f[:, None] + g[None, :]) / eps - 2.0 * log_n)
        return f, g, kernel

    f, g, kernel = fold(f)
    kernel_t = kernel.T.copy()
    u, v = np.ones(n), np.ones(n)
    exact = True
    for it in range(1, max_iterations + 1):
        kv = kernel @ v
        row_err = np.abs(u * kv - a).max()
        if exact and row_err < tolerance:
            return f + eps * np.log(u), g + eps * np.log(v), it, True
        # relaxation only inside the local-convergence regime
        w = relaxation if row_err < 1e-3 else 1.0
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            u_new = a / kv
            u = u_new if w == 1.0 else u * (u_new / u) ** w
            v_new = a / (kernel_t @ u)
            v = v_new if w == 1.0 else v * (v_new / v) ** w
            exact = w == 1.0
            if not exact and it % 10 == 0:
                v, exact = a / (kernel_t @ u), True
            lu, lv = np.log(u), np.log(v)
        drift = max(np.abs(lu).max(), np.abs(lv).max())
        # written so that nan/inf also trigger a fold
        if not drift <= FOLD_BOUND:
            f = f + eps * lu if np.isfinite(drift) else update_f(g)
            f, g, kernel = fold(f)
            kernel_t = kernel.T.copy()
            u, v = np.ones(n), np.ones(n)
            exact = True
    f = f + eps * np.log(u)
    return f, update_g(f), max_iterations, False


def _iterate_log(neg_cost, eps, f, g, max_iterations, tolerance, relaxation):
    """Same contract as ``_iterate`` with every update a log-sum-exp."""
    n = neg_cost.shape[0]
    log_n = np.log(n)
    z = neg_cost / eps
    zt = z.T

    def update_g(f):
        return -eps * (_lse_rows(zt + f[None, :] / eps) - log_n)

    g = update_g(f)
    exact = True
    for it in range(1, max_iterations + 1):
        f_new = -eps * (_lse_rows(z + g[None, :] / eps) - log_n)
        row_err = np.abs(np.expm1((f - f_new) / eps)).max() / n
        if exact and row_err < tolerance:
            return f, g, it, True
        w = relaxation if row_err < 1e-3 else 1.0
        f = f + w * (f_new - f)
        g = g + w * (update_g(f) - g)
        exact = w == 1.0
        if not exact and it % 10 == 0:
            g, exact = update_g(f), True
    return f, update_g(f), max_iterations, False


NEWTON_MAX_N = 400


def _dual(neg_cost, eps, f, g):
    n = neg_cost.shape[0]
    # trial points in the line search may overflow; callers reject non-finite plans
    with np.errstate(over="ignore"):
        plan = np.exp((f[:, None] + g[None, :] + neg_cost) / eps - 2.0 * np.log(n))
        return (f.sum() + g.sum()) / n - eps * plan.sum(), plan


def _newton(neg_cost, eps, f, g, tolerance, max_steps=60):
    """Damped Newton ascent on the (f, g) dual; quadratic once close.

    The dual is invariant under (f + c, g - c); that null direction gets a
    unit ridge, which leaves the step orthogonal to it untouched.
    """
    n = neg_cost.shape[0]
    a = np.full(n, 1.0 / n)
    null = np.concatenate([np.ones(n), -np.ones(n)]) / np.sqrt(2 * n)
    value, plan = _dual(neg_cost, eps, f, g)
    steps = 0
    for steps in range(1, max_steps + 1):
        r, c = plan.sum(axis=1), plan.sum(axis=0)
        grad = np.concatenate([a - r, a - c])
        if np.abs(grad).max() < tolerance:
            return f, g, steps - 1, True
        hess = np.block([[np.diag(r), plan], [plan.T, np.diag(c)]]) / eps + np.outer(null, null)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return f, g, steps, False
        slope = float(grad @ step)
        t = 1.0
        while t > 1e-10:
            f_t, g_t = f + t * step[:n], g + t * step[n:]
            v_t, p_t = _dual(neg_cost, eps, f_t, g_t)
            if np.all(np.isfinite(p_t)) and v_t >= value + 1e-4 * t * slope - 1e-15 * abs(value):
                break
            t *= 0.5
        else:
            return f, g, steps, False
        f, g, value, plan = f_t, g_t, v_t, p_t
    r, c = plan.sum(axis=1), plan.sum(axis=0)
    return f, g, steps, max(np.abs(r - a).max(), np.abs(c - a).max()) < tolerance


def sinkhorn_solve(cost, config: SinkhornConfig) -> Coupling:
    """Entropic OT between uniform marginals.

    plan_ij = exp((f_i + g_j - cost_ij) / eps) / n^2. Stops once the row
    marginals of the current (f, g) are within ``tolerance`` of 1/n in
    L-infinity; the column marginals are exact after every g update. Cold
    starts anneal epsilon down from the cost range; a stalled alternating
    phase hands over to Newton steps on the dual when n is moderate.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise DimensionMismatch(f"cost must be square, got shape {cost.shape}")
    if not np.all(np.isfinite(cost)):
        raise NonFiniteCost("cost matrix contains non-finite entries")
    n = cost.shape[0]
    eps = float(config.epsilon)
    neg = -cost
    iterate = _iterate if config.kernel_scaling else _iterate_log
    used = 0
    if config.warm_start_potentials is not None:
        f, g = (np.array(v, dtype=np.float64) for v in config.warm_start_potentials)
        if f.shape != (n,) or g.shape != (n,):
            raise DimensionMismatch("warm-start potentials do not match the cost size")
    else:
        f, g = np.zeros(n), np.zeros(n)
        if config.epsilon_scaling:
            stage_eps = float(np.ptp(cost))
            while stage_eps > 2.0 * eps:
                f, g, k, _ = iterate(neg, stage_eps, f, g, 100, 10 * config.tolerance, 1.0)
                used += k
                stage_eps /= 2.0

    budget = max(config.max_iterations - used, 1)
    polish = config.newton_polish and n <= NEWTON_MAX_N
    first = min(budget, config.stall_check) if polish else budget
    f, g, k, converged = iterate(neg, eps, f, g, first, config.tolerance, config.relaxation)
    used += k
    if not converged and polish:
        f, g, k, _ = _newton(neg, eps, f, g, 0.1 * config.tolerance)
        used += k
        # re-project and read the marginal test the same way as the alternating phase
        f, g, k, converged = iterate(neg, eps, f, g, max(budget - first, 1), config.tolerance,
                                     config.relaxation)
        used += k
    plan = np.exp(log_plan(f, g, cost, eps))
    return Coupling(plan, (f, g), eps, used, marginal_error(plan), converged)


def entropy(plan: np.ndarray) -> float:
    """Shannon entropy with 0 log 0 = 0."""
    p = plan[plan > 0]
    return float(-np.sum(p * np.log(p)))


def entropic_ot_value(coupling: Coupling, cost) -> float:
    cost = np.asarray(cost, dtype=np.float64)
    if cost.shape != coupling.plan.shape:
        raise DimensionMismatch(f"cost {cost.shape} vs plan {coupling.plan.shape}")
    return float(np.sum(cost * coupling.plan)) - coupling.epsilon * entropy(coupling.plan)


def _transport(x, y, config):
    cost = np.sum((x[:, None, :] - y[None, :, :]) ** 2, axis=-1)
    coupling = sinkhorn_solve(cost, config)
    return float(np.sum(cost * coupling.plan)), coupling


def _check_pair(source: PointCloud, target: PointCloud):
    if source.d != target.d:
        raise DimensionMismatch(f"ambient dimensions differ: {source.d} vs {target.d}")
    if source.n != target.n:
        raise DimensionMismatch(f"uniform-marginal solver needs equal sizes: {source.n} vs {target.n}")


def _config(epsilon, max_iterations, tolerance):
    return SinkhornConfig(epsilon=epsilon, max_iterations=max_iterations, tolerance=tolerance)


def sinkhorn_divergence(source: PointCloud, target: PointCloud, epsilon: float,
                        max_iterations: int = 2000, tolerance: float = 1e-6) -> float:
    """OT(p,q) - OT(p,p)/2 - OT(q,q)/2 with squared-Euclidean ground cost.

    Each OT term is the transport cost <C, P> evaluated at the entropic plan.
    """
    return sinkhorn_divergence_and_grad(source, target, epsilon, max_iterations, tolerance,
                                        with_grad=False)[0]


def sinkhorn_divergence_and_grad(source: PointCloud, target: PointCloud, epsilon: float,
                                 max_iterations: int = 2000, tolerance: float = 1e-6,
                                 with_grad: bool = True):
    """Divergence value plus a descent direction with respect to the source points.

    The direction is the envelope gradient of the entropy-regularized
    divergence (plans held fixed), the usual surrogate for the transport-cost
    form, whose exact gradient would require differentiating the plans.
    Returns (value, grad or None, converged).
    """
    _check_pair(source, target)
    cfg = _config(epsilon, max_iterations, tolerance)
    x, y = source.points, target.points
    ot_xy, c_xy = _transport(x, y, cfg)
    ot_xx, c_xx = _transport(x, x, cfg)
    ot_yy, c_yy = _transport(y, y, cfg)
    value = ot_xy - 0.5 * ot_xx - 0.5 * ot_yy
    converged = c_xy.converged and c_xx.converged and c_yy.converged
    if not with_grad:
        return value, None, converged
    p = c_xy.plan
    grad_xy = 2.0 * (p.sum(axis=1)[:, None] * x - p @ y)
    grad_xx = cost_vjp(CostKernel(SQEUCLIDEAN), x, c_xx.plan)
    return value, grad_xy - 0.5 * grad_xx, converged


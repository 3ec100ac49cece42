"""Intra-domain cost kernels, cost matrices and their rescaling."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DegenerateScale, DimensionMismatch, DomainError, ZeroVectorInCosine

SQEUCLIDEAN = "sqeuclidean"
SCALED_SQEUCLIDEAN = "scaled_sqeuclidean"
COSINE = "cosine"
INNER_PRODUCT = "inner_product"

FAMILIES = (SQEUCLIDEAN, SCALED_SQEUCLIDEAN, COSINE, INNER_PRODUCT)
STATS = ("mean", "max", "std")

ZERO_NORM_FLOOR = 1e-12
SCALE_FLOOR = 1e-12

_ALIASES = {
    "l2sq": SQEUCLIDEAN,
    "sqeuclidean": SQEUCLIDEAN,
    "scl2sq": SCALED_SQEUCLIDEAN,
    "scaled_sqeuclidean": SCALED_SQEUCLIDEAN,
    "cos": COSINE,
    "cosine": COSINE,
    "inner": INNER_PRODUCT,
    "inner_product": INNER_PRODUCT,
}


@dataclass(frozen=True)
class PointCloud:
    """n points in d dimensions carrying the uniform empirical measure."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise DomainError(f"point cloud must be a non-empty n x d array, got shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DomainError("point cloud contains non-finite entries")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def subset(self, indices) -> "PointCloud":
        return PointCloud(self.points[np.asarray(indices, dtype=int)])


@dataclass(frozen=True)
class CostKernel:
    family: str = SQEUCLIDEAN
    log_alpha: float = 0.0

    def __post_init__(self):
        fam = _ALIASES.get(str(self.family).lower())
        if fam is None:
            raise DomainError(f"unknown cost family {self.family!r}")
        object.__setattr__(self, "family", fam)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha)) if self.family == SCALED_SQEUCLIDEAN else 1.0

    @property
    def cpd_sign(self) -> int:
        """+1 if the kernel itself is CPD, -1 if its negation is."""
        return -1 if self.family in (SQEUCLIDEAN, SCALED_SQEUCLIDEAN) else 1


@dataclass(frozen=True)
class CostMatrix:
    values: np.ndarray
    kernel: CostKernel
    scale: float = 1.0
    stat_kind: str = "none"
    # points the matrix was built from; enables the factored GW path
    points: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]


def _unit_rows(x: np.ndarray, floor: float = ZERO_NORM_FLOOR):
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms < floor)
    if bad.size:
        raise ZeroVectorInCosine(f"zero vector in cosine cost at row {int(bad[0])}", row=int(bad[0]))
    return x / norms[:, None], norms


def evaluate_kernel(kernel: CostKernel, x, y, floor: float = ZERO_NORM_FLOOR) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise DimensionMismatch(f"vectors of length {x.size} and {y.size}")
    if kernel.family in (SQEUCLIDEAN, SCALED_SQEUCLIDEAN):
        diff = x - y
        return kernel.alpha * float(diff @ diff)
    if kernel.family == INNER_PRODUCT:
        return float(x @ y)
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx < floor or ny < floor:
        raise ZeroVectorInCosine("zero vector in cosine cost", row=0 if nx < floor else 1)
    return float((x / nx) @ (y / ny))


def pairwise_costs(kernel: CostKernel, x: np.ndarray) -> np.ndarray:
    """n x n matrix of kernel values; symmetric to the last bit."""
    x = np.asarray(x, dtype=np.float64)
    if kernel.family in (SQEUCLIDEAN, SCALED_SQEUCLIDEAN):
        diff = x[:, None, :] - x[None, :, :]
        return kernel.alpha * np.einsum("ijk,ijk->ij", diff, diff)
    if kernel.family == COSINE:
        x, _ = _unit_rows(x)
    gram = x @ x.T
    gram = 0.5 * (gram + gram.T)
    if kernel.family == COSINE:
        np.fill_diagonal(gram, 1.0)
    return gram


def build_cost_matrix(cloud: PointCloud, kernel: CostKernel) -> CostMatrix:
    return CostMatrix(pairwise_costs(kernel, cloud.points), kernel, points=cloud.points)


def cost_stat(values: np.ndarray, stat_kind: str) -> float:
    if stat_kind == "mean":
        return float(np.mean(values))
    if stat_kind == "max":
        return float(np.max(values))
    if stat_kind == "std":
        return float(np.std(values))
    raise DomainError(f"unknown statistic {stat_kind!r}")


def rescale_by_stat(matrix: CostMatrix, stat_kind: str, floor: float = SCALE_FLOOR) -> CostMatrix:
    """Divide by a statistic of the entries. The scale is a plain float, never differentiated."""
    if stat_kind == "none":
        return matrix
    s = cost_stat(matrix.values, stat_kind)
    if not s > floor:
        raise DegenerateScale(f"{stat_kind} of cost matrix is {s:.3e}; cannot rescale")
    return replace(matrix, values=matrix.values / s, scale=matrix.scale * s, stat_kind=stat_kind)


def cost_vjp(kernel: CostKernel, x: np.ndarray, cotangent: np.ndarray) -> np.ndarray:
    """Gradient of <cotangent, C(x)> with respect to the points x (n x d)."""
    x = np.asarray(x, dtype=np.float64)
    g = cotangent + cotangent.T
    if kernel.family in (SQEUCLIDEAN, SCALED_SQEUCLIDEAN):
        # C = z 1^T + 1 z^T - 2 x x^T with z_i = |x_i|^2
        return 2.0 * kernel.alpha * (g.sum(axis=1)[:, None] * x - g @ x)
    if kernel.family == INNER_PRODUCT:
        return g @ x
    u, norms = _unit_rows(x)
    gu = g @ u
    radial = np.einsum("ij,ij->i", u, gu)
    return (gu - radial[:, None] * u) / norms[:, None]


def cost_log_alpha_grad(kernel: CostKernel, x: np.ndarray, cotangent: np.ndarray) -> float:
    """d<cotangent, C>/d log_alpha; zero unless the family is scaled."""
    if kernel.family != SCALED_SQEUCLIDEAN:
        return 0.0
    return float(np.sum(cotangent * pairwise_costs(kernel, x)))


def cost_factors(kernel: CostKernel, x: np.ndarray):
    """Low-rank form C = u 1^T + 1 u^T + sign * V V^T, returned as (u, V, sign).

    Exists for every supported family; that is what makes the O(n^2 d)
    linearized GW cost possible.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if kernel.family in (SQEUCLIDEAN, SCALED_SQEUCLIDEAN):
        a = kernel.alpha
        return a * np.einsum("ij,ij->i", x, x), np.sqrt(a) * x, -2.0
    if kernel.family == COSINE:
        x, _ = _unit_rows(x)
    return np.zeros(n), x, 1.0


def cpd_quadratic_form(kernel: CostKernel, cloud: PointCloud, weights) -> float:
    """sum_ij a_i a_j (sign * k)(x_i, x_j) for one zero-sum weight vector."""
    a = np.asarray(weights, dtype=np.float64)
    if a.shape != (cloud.n,):
        raise DimensionMismatch(f"expected {cloud.n} weights, got {a.shape}")
    if abs(a.sum()) > 1e-9 * (1 + np.abs(a).sum()):
        raise DomainError("weights must sum to zero")
    return float(a @ (kernel.cpd_sign * pairwise_costs(kernel, cloud.points)) @ a)


@dataclass
class CpdReport:
    passed: bool
    trials: int
    sign: int
    worst: float
    tolerance: float
    failures: int = 0
    forms: list = field(default_factory=list, repr=False)


def check_cpd(kernel: CostKernel, cloud: PointCloud, trials: int = 100, seed: int = 0,
              tol: float = 1e-10) -> CpdReport:
    """Randomized certificate that sign * kernel is conditionally positive on the cloud."""
    if trials < 1:
        raise DomainError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    k = kernel.cpd_sign * pairwise_costs(kernel, cloud.points)
    scale = 1.0 + np.abs(k).max()
    forms = []
    for _ in range(trials):
        a = rng.standard_normal(cloud.n)
        a -= a.mean()
        forms.append(float(a @ k @ a) / max(float(a @ a), 1e-300))
    forms = np.asarray(forms)
    thresh = -tol * scale
    fails = int(np.sum(forms < thresh))
    return CpdReport(fails == 0, trials, kernel.cpd_sign, float(forms.min()), tol * scale, fails, forms.tolist())

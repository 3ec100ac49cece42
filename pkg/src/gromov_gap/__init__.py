"""Gromov-Monge gap toolkit: costs, Sinkhorn, entropic GW, the GMG estimator and experiments."""

from .errors import (ConfigError, DegenerateGradient, DegenerateScale, DimensionMismatch, DomainError,
                     GmgError, InputNotFound, NonFiniteCost, NotConverged, TooLarge, ZeroVectorInCosine)
from .geometry import (COSINE, INNER_PRODUCT, SCALED_SQEUCLIDEAN, SQEUCLIDEAN, CostKernel, CostMatrix,
                       PointCloud, build_cost_matrix, check_cpd, evaluate_kernel, pairwise_costs,
                       rescale_by_stat)
from .gmg import (GmgReport, check_restriction_property, chord_convexity_test, distortion,
                  distortion_gradient, gmg_exact, gmg_from_samples, gmg_gradient, gmg_multistart,
                  weak_convexity_constants)
from .gw import (GwConfig, GwResult, epsilon_schedule, gw_brute_force, gw_linearized_cost,
                 gw_solve_annealed, gw_solve_entropic, quadratic_objective)
from .sinkhorn import (Coupling, SinkhornConfig, sinkhorn_divergence, sinkhorn_divergence_and_grad,
                       sinkhorn_solve)

__version__ = "0.1.0"

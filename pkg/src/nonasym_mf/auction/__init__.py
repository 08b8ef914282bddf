"""First-price auction equilibria with asymmetric and spiteful bidders."""

from .distributions import Distribution, cubic_bump, from_spec, perturbed, power, tabulated, uniform
from .model import InverseBidSolution, ValuationModel, foc_residual, ode_rhs, symmetric_bid
from .shooting import ray_slopes, solve_shooting, unstable_direction
from .collocation import CollocationConfig, collocation_objective, solve_collocation
from .revenue import (
    PerturbationTable,
    RevenueEstimate,
    cubic_pair,
    fit_loglog_slope,
    revenue_perturbation_experiment,
    revenue_quadrature,
    seller_revenue,
    symmetric_revenue,
)
from .spite import (
    spite_ode_residual,
    spiteful_revenue,
    spiteful_revenue_mc,
    spiteful_solution,
    spiteful_symmetric_bid,
)

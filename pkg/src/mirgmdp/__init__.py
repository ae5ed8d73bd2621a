"""Optimal individually rational exploration: planning oracles, index policies
and mechanism simulators."""

from __future__ import annotations

from mirgmdp.errors import (
    AssumptionViolation,
    ConfigurationError,
    IncompletePolicyError,
    InstanceFormatError,
    InvalidInstanceError,
    InvalidMixError,
    InvalidPriorError,
    InvalidSupportError,
    LatticeTooLargeError,
    MirError,
    UnsupportedExactError,
)
from mirgmdp.priors import (
    FiniteDiscrete,
    Gaussian,
    Instance,
    PointMass,
    TwoPoint,
    discretize,
    dominates,
    generate_instance,
)
from mirgmdp.gmdp import (
    DEFAULT,
    EXACT,
    MonteCarlo,
    PolicyTable,
    Portfolio,
    is_mir_prior,
    is_pvalid,
    mix_portfolio,
    q_value,
    terminal_reward,
    transition,
    w_value,
)
from mirgmdp.policies import conjecture_index, ogp, ogp_playout, ogp_policy, ordered_policy, random_pvalid
from mirgmdp.dp import DpSolution, solve, w_star
from mirgmdp.simulator import SimTrace, estimate_welfare, run_iregb, run_iregb_prime
from mirgmdp.bic import audit_bic, audit_harmless, compute_xi_gamma, run_bic_iregb
from mirgmdp.instance_io import dump_instance, load_instance, parse_instance

__version__ = "0.1.0"

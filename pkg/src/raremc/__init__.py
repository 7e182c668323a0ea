"""Importance sampling for rare events of additive functionals of finite Markov chains.

Estimates ``p_n = P{S_n / n in A}`` where ``S_n`` sums ``g`` along the chain and
``A`` is a finite union of halfspaces, with naive, static (one fixed exponential
tilt) and adaptive (feedback tilt) estimators, plus exact lattice oracles.
"""

from .chain import (
    TANDEM_CONVENTIONS,
    AdditiveFunctional,
    FiniteChain,
    ValidationReport,
    build_tandem,
    build_two_state,
    chain_from_dict,
    chain_from_json,
    chain_to_dict,
    chain_to_json,
    tandem_index,
    validate_chain,
)
from .errors import (
    ChainError,
    DomainError,
    MemoryBound,
    NegativeEntry,
    NoConvergence,
    NotLattice,
    Periodic,
    RareMCError,
    RatesNotNormalized,
    Reducible,
    RowSumViolation,
    UnstableSystem,
)
from .estimators import (
    Adaptive,
    BoundPolicy,
    EstimateResult,
    Naive,
    Static,
    estimate,
    make_policy,
    run_trajectory,
    simulate_replications,
    static_alpha_for,
)
from .largedev import (
    ControlPoint,
    FeedbackController,
    HalfspaceCost,
    HalfspaceDual,
    LegendreResult,
    SpectralData,
    TargetRate,
    TiltFamily,
    feedback_control,
    grad_H_fd,
    halfspace_cost,
    legendre,
    rate_over_target,
    spectral,
    two_state_closed_form,
)
from .oracle import (
    DecayRates,
    ExactResult,
    LatticeBox,
    PolicyMoments,
    decay_rates,
    exact_probability,
    exact_result,
    policy_moments,
    two_state_exact,
)
from .target import Halfspace, TargetSet

__version__ = "0.1.0"


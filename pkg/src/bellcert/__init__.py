"""Randomness certification from unit-coefficient Bell expressions.

The package enumerates two-party Bell expressions with coefficients in
{-1, 0, +1}, bounds their quantum values and spot-setting outcome
probabilities through moment-matrix (NPA-style) semidefinite
relaxations, certifies the Shannon and min-entropy of the spot-setting
outcomes under white noise, evaluates the flex box-self-testing measure,
and sweeps whole protocol families with resumable persistence.
"""
__version__ = "0.1.0"

from .scenario import (  # noqa: F401
    Behavior,
    CoefficientMatrix,
    Protocol,
    Scenario,
    bell_value,
    canonical_key,
    classical_bound,
    correlator_value,
    enumerate_expressions,
    expression_from_ordinal,
    expression_ordinal,
    total_expressions,
)
from .npa import (  # noqa: F401
    LEVELS,
    LinearFunctional,
    MomentStructure,
    MonomialBasis,
    bell_functional,
    build_basis,
    build_moment_structure,
    probability_functional,
)
from .sdp import SDPProblem, SDPSolution, dump_problem, load_problem, solve  # noqa: F401
from .certify import ProbabilityBox, moment_structure, probability_box, tsirelson_bound  # noqa: F401
from .entropy import (  # noqa: F401
    Distribution4,
    EntropyReport,
    analytic_lower_bound,
    ansatz_distribution,
    certified_min_entropy,
    certified_shannon_min,
    certify_entropy,
    min_entropy,
    shannon,
)
from .flex import FlexReport, flex  # noqa: F401
from .search import (  # noqa: F401
    Criterion,
    SearchConfig,
    SearchSummary,
    Selection,
    histogram,
    iter_records,
    run_search,
    select_top,
)

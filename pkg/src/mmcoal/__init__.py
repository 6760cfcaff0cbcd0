"""Likelihood inference for multiple-merger coalescents with finite-sites,
finite-alleles mutation: exact small-sample solver, sequential importance
sampling with trunk-ancestry proposal distributions, and PAC estimators."""

from .csd import absorption_rate, csd_chain, csd_univariate
from .engine import (
    CoalescenceMove,
    Estimate,
    ISConfig,
    MutationMove,
    ProposalContext,
    SurfacePoint,
    WeightedMove,
    default_checkpoints,
    forward_prob,
    propose,
    run_is,
    surface,
)
from .errors import ConfigError, ProposalError, SizeError
from .mutation import (
    Locus,
    MutationModel,
    SampleConfig,
    enumerate_mutation_moves,
    flip_model,
    mrca_distribution,
    rescale_theta,
)
from .oracle import LikelihoodTable, likelihood_of, solve_exact
from .pac import pac_average, pac_single
from .rates import (
    LambdaMeasure,
    RateTable,
    beta_measure,
    build_rate_table,
    eldon_wakeley,
    kingman,
    lambda_rate,
    star,
    total_coal_rate,
)
from .simulate import simulate_genealogy, simulate_sample
from .xi import (
    XiMeasure,
    csd_xi,
    enumerate_merger_moves,
    g_total,
    lambda_embedding,
    run_is_xi,
    xi_rate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

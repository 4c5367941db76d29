"""Approximately symmetric N-player dynamic games, their mean-field limits,
and sample-based learning of approximate equilibria."""

from .core import (
    ActionSpace,
    DynamicGame,
    MeanFieldGame,
    Policy,
    PopulationDistribution,
    PopulationFlow,
    QTable,
    RngStream,
    StateSpace,
    empirical_distribution,
    entropy,
    kl_divergence,
    policy_entropy,
    project_simplex,
)
from .envs import make_arps, make_asis, make_congestion, make_env, make_symmetric_test
from .learn import PmdConfig, TdConfig, ipmd, symm_pmd, td_learn
from .mfg import (
    best_response,
    check_monotonicity,
    exact_pmd,
    induce_flow,
    mf_value,
    mfg_exploitability,
    pmd_policy_update,
    q_backward,
)
from .sim import estimate_nplayer_exploitability, estimate_return, sample_episode
from .symmetry import (
    GridFunction,
    TupleFunction,
    check_kappa_sparsity,
    estimate_alpha_beta,
    estimate_lipschitz_modulus,
    induce_mfg,
    lift_population,
    mcshane_extend,
    symmetrize_bruteforce,
)

__version__ = "0.1.0"

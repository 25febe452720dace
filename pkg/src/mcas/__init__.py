"""Multiagent control via action suggestions on tabular Dec-POMDP benchmarks."""

from .errors import (
    AllCandidatesInvalid,
    DimensionMismatch,
    DisjointSupports,
    EmptyAfterPrune,
    McasError,
    ModelSemanticError,
    ModelSyntaxError,
    NonConvergence,
    StaleCacheError,
    UnsupportedSpec,
    ZeroProbabilityObservation,
)
from .kernels import BACKEND
from .model import (
    DecModel,
    FactoredSpaces,
    TabularModel,
    belief_update,
    build_agent_view,
    build_mmdp,
    build_mpomdp,
    observation_likelihood,
    observation_likelihoods,
    predicted_belief,
    uniform_belief,
)
from .modelfile import emit_model, parse_model
from .problems import BenchmarkSpec, apply_qualifier, build_benchmark
from .solver import (
    AlphaVectorPolicy,
    PolicyStore,
    SolverParams,
    load_policy,
    save_policy,
    solve_mdp,
    solve_pomdp,
)
from .coordination import (
    McasConfig,
    McasCoordinator,
    Suggestion,
    WeightedBeliefSet,
    conflate,
    exact_joint_update,
    expand_and_merge,
    mcas_step,
    prune_beliefs,
    reduce_to_max_limit,
    select_joint_belief,
)
from .harness import (
    ExperimentResult,
    MethodSpec,
    RunRecord,
    emit_results,
    prepare_bundle,
    run_experiment,
    simulate_episode,
)

__version__ = "0.1.0"

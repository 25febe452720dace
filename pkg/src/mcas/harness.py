"""Monte-Carlo evaluation of the coordination methods.

Episodes share environment randomness across methods: episode i always
draws from the stream seeded by base_seed + i, so method comparisons are
paired. Method-internal randomness (tie breaking) uses separate streams
derived from the same episode seed. The mmdp method reports the
converged value of the fully observable relaxation instead of a rollout;
that is the convention the benchmark numbers follow.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import io
import math

import numpy as np

from .coordination import (
    McasConfig,
    McasCoordinator,
    conflate,
    make_suggestion,
)
from .errors import DimensionMismatch, ZeroProbabilityObservation
from .model import (
    belief_update,
    build_agent_view,
    build_mmdp,
    predicted_belief,
)
from .problems import BenchmarkSpec, build_benchmark
from .solver import PolicyStore, SolverParams, solve_mdp, solve_pomdp

METHODS = (
    "mmdp",
    "mpomdp",
    "mpomdp-c",
    "mcas-alpha",
    "mcas",
    "mpomdp-i",
    "independent",
)

# Which solved artifacts a method consumes.
_NEEDS_JOINT = frozenset({"mpomdp", "mpomdp-c", "mcas-alpha", "mcas"})
_NEEDS_ALL_VIEWS = frozenset({"mcas-alpha", "mcas", "independent"})


@dataclasses.dataclass(frozen=True)
class MethodSpec:
    """A method name plus the knobs that method actually uses.

    mcas_config is filled with defaults (and the matching message mode)
    for the mcas variants and must be absent otherwise; leader only
    matters for mpomdp-i.
    """

    method: str
    mcas_config: McasConfig | None = None
    leader: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        wants_cfg = self.method in ("mcas", "mcas-alpha")
        mode = "alpha" if self.method == "mcas-alpha" else "action"
        if wants_cfg:
            cfg = self.mcas_config or McasConfig(message_mode=mode)
            if cfg.message_mode != mode:
                raise ValueError(
                    f"{self.method} requires message_mode={mode!r}, "
                    f"got {cfg.message_mode!r}"
                )
            object.__setattr__(self, "mcas_config", cfg)
        elif self.mcas_config is not None:
            raise ValueError(f"mcas_config is meaningless for {self.method}")
        if self.leader < 0:
            raise ValueError("leader must be a valid agent index")


@dataclasses.dataclass(frozen=True)
class RunRecord:
    seed: int
    discounted_return: float
    steps: int
    max_est_set_sizes: tuple
    anomalies: int


@dataclasses.dataclass(frozen=True)
class ExperimentResult:
    problem: str
    qualifiers: tuple
    agents: int
    method: str
    mean: float
    ci95_halfwidth: float
    n_runs: int
    mean_max_set_size: float
    set_size_ci95_halfwidth: float
    anomalies: int


@dataclasses.dataclass
class PolicyBundle:
    """Everything simulate_episode needs, solved up front and shared
    read-only across workers."""

    dec: object
    mmdp_values: np.ndarray | None = None
    joint_policy: object = None
    view_models: tuple = ()
    view_policies: dict = dataclasses.field(default_factory=dict)


def _spec_label(dec):
    quals = "".join(sorted(dec.qualifiers))
    return f"{dec.name}-n{dec.num_agents}{('-' + quals) if quals else ''}"


def prepare_bundle(dec, method_spec, params=None, store=None):
    """Solve (or load from the store) exactly what the method needs."""
    params = params or SolverParams()
    method = method_spec.method
    label = _spec_label(dec)

    def solved(model, sub):
        if store is not None:
            return store.policy_for(model, params, label=f"{label}-{sub}")
        return solve_pomdp(model, params)

    bundle = PolicyBundle(dec=dec)
    if method == "mmdp":
        values, _ = solve_mdp(build_mmdp(dec))
        bundle.mmdp_values = values
        return bundle
    if method in _NEEDS_JOINT:
        bundle.joint_policy = solved(dec.joint, "joint")
    if method != "mpomdp":
        bundle.view_models = tuple(
            build_agent_view(dec, i) for i in range(dec.num_agents)
        )
    if method in _NEEDS_ALL_VIEWS:
        for i in range(dec.num_agents):
            bundle.view_policies[i] = solved(bundle.view_models[i], f"view{i}")
    elif method == "mpomdp-i":
        lead = method_spec.leader
        bundle.view_policies[lead] = solved(bundle.view_models[lead], f"view{lead}")
    return bundle


def _sample(rng, probs):
    # inverse-CDF keeps the draw count at one uniform per event
    return int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))


def _env_stream(seed):
    return np.random.default_rng((int(seed), 0))


def _tie_stream(seed, agent):
    return np.random.default_rng((int(seed), 1, int(agent)))


def simulate_episode(dec, bundle, method_spec, horizon, seed):
    """One episode; returns the RunRecord for this seed.

    All methods consume the shared environment stream identically: the
    initial state, then one state draw and one joint observation draw
    per step.
    """
    method = method_spec.method
    joint = dec.joint
    b0 = joint.initial_belief
    if method == "mmdp":
        value = float(bundle.mmdp_values @ b0)
        return RunRecord(int(seed), value, int(horizon), (), 0)

    rng = _env_stream(seed)
    state = _sample(rng, b0)
    T, Z, R = joint.transition, joint.observation, joint.reward
    n = dec.num_agents
    gamma = joint.discount
    views = bundle.view_models
    ret = 0.0
    anomalies = 0
    max_sizes = ()

    if method in ("mcas", "mcas-alpha"):
        cfg = method_spec.mcas_config
        coord = McasCoordinator(
            dec,
            views,
            [bundle.view_policies[i] for i in range(n)],
            bundle.joint_policy,
            cfg,
            agent=0,
            tie_rng=_tie_stream(seed, 0),
        )
        teammates = coord.teammates
        true_beliefs = {j: b0.copy() for j in teammates}
        for t in range(horizon):
            sugs = [
                make_suggestion(
                    bundle.view_policies[j], true_beliefs[j], cfg.message_mode, j
                )
                for j in teammates
            ]
            action = coord.select_action(sugs)
            ret += (gamma**t) * R[state, action]
            state = _sample(rng, T[state, action])
            obs = _sample(rng, Z[action, state])
            per_agent = dec.observation_space.decode(obs)
            coord.advance(action, per_agent[0])
            for j in teammates:
                true_beliefs[j] = belief_update(
                    views[j], true_beliefs[j], action, per_agent[j]
                )
        anomalies = coord.anomalies
        max_sizes = tuple(coord.max_set_size[j] for j in teammates)

    elif method == "mpomdp":
        b = b0.copy()
        for t in range(horizon):
            action = bundle.joint_policy.action(b)
            ret += (gamma**t) * R[state, action]
            state = _sample(rng, T[state, action])
            obs = _sample(rng, Z[action, state])
            b = belief_update(joint, b, action, obs)

    elif method == "mpomdp-c":
        beliefs = [b0.copy() for _ in range(n)]
        for t in range(horizon):
            action = bundle.joint_policy.action(conflate(np.array(beliefs)))
            ret += (gamma**t) * R[state, action]
            state = _sample(rng, T[state, action])
            obs = _sample(rng, Z[action, state])
            per_agent = dec.observation_space.decode(obs)
            beliefs = [
                belief_update(views[i], beliefs[i], action, per_agent[i])
                for i in range(n)
            ]

    elif method == "mpomdp-i":
        lead = method_spec.leader
        if not 0 <= lead < n:
            raise DimensionMismatch(f"leader {lead} out of range for {n} agents")
        policy = bundle.view_policies[lead]
        b = b0.copy()
        for t in range(horizon):
            action = policy.action(b)
            ret += (gamma**t) * R[state, action]
            state = _sample(rng, T[state, action])
            obs = _sample(rng, Z[action, state])
            b = belief_update(views[lead], b, action, dec.observation_space.decode(obs)[lead])

    elif method == "independent":
        beliefs = [b0.copy() for _ in range(n)]
        for t in range(horizon):
            wanted = [bundle.view_policies[i].action(beliefs[i]) for i in range(n)]
            action = dec.action_space.encode(
                tuple(
                    dec.action_space.decode(wanted[i])[i] for i in range(n)
                )
            )
            ret += (gamma**t) * R[state, action]
            state = _sample(rng, T[state, action])
            obs = _sample(rng, Z[action, state])
            per_agent = dec.observation_space.decode(obs)
            for i in range(n):
                # each agent believes its own choice was executed
                try:
                    beliefs[i] = belief_update(
                        views[i], beliefs[i], wanted[i], per_agent[i]
                    )
                except ZeroProbabilityObservation:
                    anomalies += 1
                    beliefs[i] = predicted_belief(views[i], beliefs[i], wanted[i])

    else:  # pragma: no cover - MethodSpec already validated
        raise ValueError(method)

    return RunRecord(int(seed), float(ret), int(horizon), max_sizes, anomalies)


# Worker-side experiment state; installed once per process so task
# payloads stay seed lists instead of repeatedly pickled models.
_WORKER = None


def _init_worker(dec, bundle, method_spec, horizon):
    global _WORKER
    _WORKER = (dec, bundle, method_spec, horizon)


def _episode_chunk(seeds):
    dec, bundle, method_spec, horizon = _WORKER
    return [simulate_episode(dec, bundle, method_spec, horizon, s) for s in seeds]


def _ci95(values):
    if len(values) < 2:
        return 0.0
    sd = float(np.std(values, ddof=1))
    return 1.96 * sd / math.sqrt(len(values))


def run_experiment(spec, method_spec, n_runs=2000, horizon=50, base_seed=1,
                   params=None, store=None, jobs=1, dec=None, bundle=None):
    """Paired-seed evaluation of one method on one benchmark."""
    if n_runs < 2:
        raise ValueError("n_runs must be >= 2")
    if dec is None:
        dec = build_benchmark(spec)
    if bundle is None:
        bundle = prepare_bundle(dec, method_spec, params=params, store=store)
    seeds = [base_seed + i for i in range(n_runs)]

    if jobs > 1 and method_spec.method != "mmdp":
        chunk = max(1, math.ceil(n_runs / (4 * jobs)))
        pieces = [seeds[k : k + chunk] for k in range(0, n_runs, chunk)]
        records = []
        with concurrent.futures.ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_init_worker,
            initargs=(dec, bundle, method_spec, horizon),
        ) as pool:
            for part in pool.map(_episode_chunk, pieces):
                records.extend(part)
        records.sort(key=lambda r: r.seed)
    else:
        records = [
            simulate_episode(dec, bundle, method_spec, horizon, s) for s in seeds
        ]

    returns = np.array([r.discounted_return for r in records])
    set_maxima = np.array(
        [max(r.max_est_set_sizes) if r.max_est_set_sizes else 0 for r in records],
        dtype=np.float64,
    )
    tracked = method_spec.method in ("mcas", "mcas-alpha")
    return ExperimentResult(
        problem=spec.name,
        qualifiers=tuple(sorted(spec.qualifiers)),
        agents=spec.num_agents,
        method=method_spec.method,
        mean=float(returns.mean()),
        ci95_halfwidth=_ci95(returns),
        n_runs=n_runs,
        mean_max_set_size=float(set_maxima.mean()) if tracked else 0.0,
        set_size_ci95_halfwidth=_ci95(set_maxima) if tracked else 0.0,
        anomalies=int(sum(r.anomalies for r in records)),
    )


_CSV_HEADER = "problem,qualifiers,agents,method,mean,ci95,n_runs,mean_max_set,anomalies"


def _sort_key(r):
    return (r.problem, r.agents, r.method, "+".join(r.qualifiers))


def emit_results(results):
    """CSV text plus an aligned human-readable table, both bit-stable."""
    if not results:
        raise ValueError("no results to emit")
    rows = sorted(results, key=_sort_key)

    out = io.StringIO()
    out.write(_CSV_HEADER + "\n")
    for r in rows:
        out.write(
            ",".join(
                (
                    r.problem,
                    "+".join(r.qualifiers),
                    str(r.agents),
                    r.method,
                    "%.17g" % r.mean,
                    "%.17g" % r.ci95_halfwidth,
                    str(r.n_runs),
                    "%.17g" % r.mean_max_set_size,
                    str(r.anomalies),
                )
            )
            + "\n"
        )
    csv_text = out.getvalue()

    headers = ("problem", "qualifiers", "n", "method", "mean", "ci95", "max|B|")
    cells = [
        (
            r.problem,
            "+".join(r.qualifiers) or "-",
            str(r.agents),
            r.method,
            f"{r.mean:.2f}",
            f"{r.ci95_halfwidth:.2f}",
            f"{r.mean_max_set_size:.1f}" if r.mean_max_set_size else "-",
        )
        for r in rows
    ]
    widths = [
        max(len(h), *(len(c[i]) for c in cells)) for i, h in enumerate(headers)
    ]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for c in cells:
        lines.append("  ".join(c[i].ljust(widths[i]) for i in range(len(c))).rstrip())
    lines.append("")
    lines.append(
        "mmdp rows are converged values; other rows are Monte Carlo means "
        "with paired per-episode seeds (seed = base + i)."
    )
    return csv_text, "\n".join(lines) + "\n"

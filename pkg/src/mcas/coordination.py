"""Suggestion-driven coordination.

Agents never exchange observations or beliefs, only suggestions: each
teammate applies its own-view policy to its own belief and broadcasts
the resulting joint action (or, in alpha mode, the index of the
dominating alpha vector). The coordinating agent keeps one weighted set
of candidate beliefs per teammate, prunes members inconsistent with the
received suggestion, grows the survivors one observation step per tick,
and conflates a member tuple with its own belief to pick the joint
belief the centralized policy acts on.
"""

from __future__ import annotations

import dataclasses
import itertools

import numpy as np

from . import kernels
from .errors import (
    AllCandidatesInvalid,
    DimensionMismatch,
    DisjointSupports,
    EmptyAfterPrune,
    ZeroProbabilityObservation,
)
from .model import belief_update as _model_belief_update
from .model import predicted_belief as _model_predicted_belief
from .solver import dominant_alpha_index, policy_action

MESSAGE_MODES = ("action", "alpha")
COMBINERS = ("conflation", "weighted-average")


@dataclasses.dataclass(frozen=True)
class McasConfig:
    """Knobs of the coordination loop; defaults follow the benchmark setup."""

    delta_single: float = 1e-5
    delta_joint: float = 1e-5
    max_beliefs: int = 200
    message_mode: str = "action"
    combiner: str = "conflation"
    rng_seed: int = 0

    def __post_init__(self):
        if self.delta_single < 0 or self.delta_joint < 0:
            raise ValueError("merge tolerances must be >= 0")
        if self.max_beliefs < 1:
            raise ValueError("max_beliefs must be >= 1")
        if self.message_mode not in MESSAGE_MODES:
            raise ValueError(f"message_mode must be one of {MESSAGE_MODES}")
        if self.combiner not in COMBINERS:
            raise ValueError(f"combiner must be one of {COMBINERS}")


@dataclasses.dataclass(frozen=True)
class Suggestion:
    """A teammate's broadcast: the sender index and either a joint action
    index (action mode) or an alpha-vector index (alpha mode)."""

    sender: int
    payload: int


class WeightedBeliefSet:
    """Beliefs as rows of a matrix with one positive weight per row.

    After every update round no two members are within delta_single in L1
    and every weight is >= 1; weights are stored as floats but stay
    integer-valued until select_joint_belief normalizes its candidates.
    """

    __slots__ = ("beliefs", "weights")

    def __init__(self, beliefs, weights):
        beliefs = np.ascontiguousarray(beliefs, dtype=np.float64)
        weights = np.ascontiguousarray(weights, dtype=np.float64)
        if beliefs.ndim != 2 or weights.shape != (beliefs.shape[0],):
            raise DimensionMismatch(
                f"beliefs {beliefs.shape} incompatible with weights {weights.shape}"
            )
        self.beliefs = beliefs
        self.weights = weights

    @classmethod
    def single(cls, belief, weight=1.0):
        return cls(np.asarray(belief, dtype=np.float64)[None, :], [weight])

    def __len__(self):
        return self.beliefs.shape[0]

    def total_weight(self):
        return float(self.weights.sum())


def make_suggestion(policy, belief, message_mode, sender):
    """What an agent broadcasts for its current belief under its policy."""
    if message_mode == "alpha":
        return Suggestion(sender, dominant_alpha_index(policy, belief))
    return Suggestion(sender, policy_action(policy, belief))


def suggested_action(policy, suggestion, message_mode):
    """Joint action a suggestion stands for (alpha payloads name a vector)."""
    if message_mode == "alpha":
        return int(policy.vector_actions[suggestion.payload])
    return suggestion.payload


def prune_beliefs(policy, belief_set, suggestion, message_mode="action"):
    """Members of the set the sender's policy maps to the suggestion.

    Alpha mode matches the dominating vector index and therefore keeps a
    subset of what action mode keeps. Raises EmptyAfterPrune when nothing
    is consistent.
    """
    if len(belief_set) == 0:
        raise EmptyAfterPrune("cannot prune an empty belief set")
    if message_mode == "alpha":
        keep = [
            i
            for i in range(len(belief_set))
            if dominant_alpha_index(policy, belief_set.beliefs[i])
            == suggestion.payload
        ]
    else:
        keep = [
            i
            for i in range(len(belief_set))
            if policy_action(policy, belief_set.beliefs[i]) == suggestion.payload
        ]
    if not keep:
        raise EmptyAfterPrune(
            f"no member consistent with suggestion {suggestion.payload} "
            f"from agent {suggestion.sender}"
        )
    return WeightedBeliefSet(belief_set.beliefs[keep], belief_set.weights[keep])


def expand_and_merge(view_model, belief_set, joint_action, delta_single):
    """One observation step of a teammate's candidate set.

    Every member branches over the teammate's feasible observations under
    the executed joint action; each child carries its parent's weight
    plus one. A child within delta_single (L1) of an output member merges
    into the closest one, adding its weight, so exact duplicates collapse
    even at delta_single = 0. Output size is at most |set| * |O|.
    """
    model = view_model
    out_beliefs = []
    out_weights = []
    child = np.empty(model.num_states)
    for b, w in zip(belief_set.beliefs, belief_set.weights):
        for obs in range(model.num_observations):
            norm = kernels.belief_update(
                model.transition, model.observation, b, joint_action, obs, child
            )
            if norm <= 0.0:
                continue  # infeasible branch, not an error here
            if out_beliefs:
                idx, dist = kernels.l1_nearest(np.asarray(out_beliefs), child)
                if dist <= delta_single:
                    out_weights[idx] += w + 1.0
                    continue
            out_beliefs.append(child.copy())
            out_weights.append(w + 1.0)
    return WeightedBeliefSet(np.asarray(out_beliefs), out_weights)


def reduce_to_max_limit(belief_set, max_size):
    """Merge closest pairs until at most max_size members remain.

    Each round removes the lower-weighted member of the closest pair in
    L1 (on equal weights, the higher list index) and adds its weight to
    the survivor; distances are recomputed after every removal. Total
    weight is conserved.
    """
    if max_size < 1:
        raise ValueError("max_size must be >= 1")
    if len(belief_set) <= max_size:
        return belief_set
    beliefs = list(belief_set.beliefs)
    weights = list(belief_set.weights)
    while len(beliefs) > max_size:
        i, j, _ = kernels.l1_closest_pair(np.asarray(beliefs))
        drop, keep = (i, j) if weights[i] < weights[j] else (j, i)
        weights[keep] += weights[drop]
        del beliefs[drop], weights[drop]
    return WeightedBeliefSet(np.asarray(beliefs), weights)


def conflate(beliefs):
    """Normalized pointwise product of the beliefs.

    Conflation treats the inputs as independent witnesses of the same
    state: the uniform belief is its identity, and it is not idempotent.
    Raises DisjointSupports when the product has no mass.
    """
    mat = np.ascontiguousarray(beliefs, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] == 0:
        raise DimensionMismatch("conflate expects a nonempty list of beliefs")
    out = np.empty(mat.shape[1])
    norm = kernels.conflate_rows(mat, out)
    if norm <= 0.0:
        raise DisjointSupports("pointwise product of beliefs is identically zero")
    return out


def _combine(own, members, combiner):
    stack = np.vstack([own[None, :], members])
    if combiner == "conflation":
        return conflate(stack)
    return stack.mean(axis=0)


def exact_joint_update(dec, joint_belief, joint_action, per_agent_obs):
    """Joint Bayes step from the tuple of every agent's observation.

    With all observations in hand this is the omniscient joint filter;
    it exists as the reference the estimated joint beliefs are measured
    against.
    """
    obs = dec.observation_space.encode(per_agent_obs)
    return _model_belief_update(dec.joint, joint_belief, joint_action, obs)


def select_joint_belief(own_belief, teammate_sets, config, rng=None):
    """Pick the joint belief the centralized policy should act on.

    Builds one candidate per member tuple of the teammate sets (combined
    with the coordinator's own belief; the candidate's weight is the sum
    of the member weights, the coordinator's own belief carries none),
    merges candidates within delta_joint in L1, normalizes the weights,
    and returns the heaviest candidate. Exact ties are broken uniformly
    at random from the supplied generator.
    """
    if not teammate_sets or any(len(s) == 0 for s in teammate_sets):
        raise AllCandidatesInvalid("every teammate needs a nonempty belief set")
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)
    own = np.ascontiguousarray(own_belief, dtype=np.float64)

    cand_beliefs = []
    cand_weights = []
    for combo in itertools.product(*(range(len(s)) for s in teammate_sets)):
        members = np.array(
            [s.beliefs[i] for s, i in zip(teammate_sets, combo)]
        )
        try:
            joint = _combine(own, members, config.combiner)
        except DisjointSupports:
            continue
        weight = sum(float(s.weights[i]) for s, i in zip(teammate_sets, combo))
        if cand_beliefs:
            idx, dist = kernels.l1_nearest(np.asarray(cand_beliefs), joint)
            if dist <= config.delta_joint:
                cand_weights[idx] += weight
                continue
        cand_beliefs.append(joint)
        cand_weights.append(weight)

    if not cand_beliefs:
        raise AllCandidatesInvalid("every member tuple had disjoint supports")
    weights = np.asarray(cand_weights)
    weights = weights / weights.sum()
    top = weights.max()
    ties = np.flatnonzero(weights >= top - 1e-12)
    pick = int(ties[rng.integers(len(ties))]) if len(ties) > 1 else int(ties[0])
    return cand_beliefs[pick]


class McasCoordinator:
    """Per-episode state of one coordinating agent.

    Every agent runs its own instance: drive it with
    select_action(suggestions) before each step (one suggestion per
    teammate, payloads produced by the same policy objects given here)
    and advance(joint_action, own_observation) after the environment
    moved, passing the joint action this agent assumed, normally its own
    last selection.
    """

    def __init__(self, dec, view_models, view_policies, joint_policy, config,
                 agent=0, tie_rng=None):
        n = dec.num_agents
        if len(view_models) != n or len(view_policies) != n:
            raise DimensionMismatch("one view model and policy per agent required")
        if not 0 <= agent < n:
            raise DimensionMismatch(f"agent index {agent} out of range")
        self.dec = dec
        self.agent = agent
        self.view_models = view_models
        self.view_policies = view_policies
        self.joint_policy = joint_policy
        self.config = config
        self.rng = tie_rng if tie_rng is not None else np.random.default_rng(
            config.rng_seed
        )
        b0 = dec.joint.initial_belief
        self.own_belief = b0.copy()
        self.teammates = tuple(j for j in range(n) if j != agent)
        self.estimated = {j: WeightedBeliefSet.single(b0) for j in self.teammates}
        self.last_selected = None
        self.last_action = None
        self.anomalies = 0
        self.max_set_size = {j: 1 for j in self.teammates}

    def _recovery_set(self, teammate):
        """Reset: everything one step reachable from the last selected joint
        belief under the last executed action, unit weights."""
        if self.last_selected is None:
            return WeightedBeliefSet.single(self.dec.joint.initial_belief)
        seed = WeightedBeliefSet.single(self.last_selected, weight=0.0)
        return expand_and_merge(
            self.view_models[teammate], seed, self.last_action,
            self.config.delta_single,
        )

    def select_action(self, suggestions):
        """Prune with this step's suggestions and pick the joint action."""
        cfg = self.config
        seen = set()
        for sug in suggestions:
            j = sug.sender
            if j not in self.estimated or j in seen:
                raise DimensionMismatch(f"unexpected suggestion sender {j}")
            seen.add(j)
            try:
                pruned = prune_beliefs(
                    self.view_policies[j], self.estimated[j], sug, cfg.message_mode
                )
            except EmptyAfterPrune:
                self.anomalies += 1
                pruned = self._recovery_set(j)
            self.estimated[j] = reduce_to_max_limit(pruned, cfg.max_beliefs)
        if seen != set(self.teammates):
            raise DimensionMismatch("need exactly one suggestion per teammate")

        for j in self.teammates:
            self.max_set_size[j] = max(self.max_set_size[j], len(self.estimated[j]))

        if not self.teammates:
            selected = self.own_belief
        else:
            sets = [self.estimated[j] for j in self.teammates]
            try:
                selected = select_joint_belief(self.own_belief, sets, cfg, self.rng)
            except AllCandidatesInvalid:
                self.anomalies += 1
                for j in self.teammates:
                    self.estimated[j] = self._recovery_set(j)
                sets = [self.estimated[j] for j in self.teammates]
                try:
                    selected = select_joint_belief(
                        self.own_belief, sets, cfg, self.rng
                    )
                except AllCandidatesInvalid:
                    self.anomalies += 1
                    selected = self.own_belief
        action = self.joint_policy.action(selected)
        self.last_selected = np.asarray(selected, dtype=np.float64).copy()
        self.last_action = action
        return action

    def advance(self, joint_action, own_observation):
        """Fold in the assumed joint action and this agent's observation.

        When teammates deviated from the assumed action the observation
        can be impossible under it; the filter then keeps the predicted
        belief (prediction without correction) and counts an anomaly.
        """
        own_model = self.view_models[self.agent]
        try:
            self.own_belief = _model_belief_update(
                own_model, self.own_belief, joint_action, own_observation
            )
        except ZeroProbabilityObservation:
            self.anomalies += 1
            self.own_belief = _model_predicted_belief(
                own_model, self.own_belief, joint_action
            )
        for j in self.teammates:
            self.estimated[j] = expand_and_merge(
                self.view_models[j], self.estimated[j], joint_action,
                self.config.delta_single,
            )


def mcas_step(coordinator, suggestions):
    """Functional wrapper: returns (joint action, coordinator)."""
    return coordinator.select_action(suggestions), coordinator

"""Tabular decision-process models and exact belief arithmetic.

A multiagent problem is stored as a DecModel: one joint TabularModel over
the flat joint action/observation spaces plus the factored space codecs.
Per-agent views and the fully observable baseline are derived from it.
Tables are dense; every distribution row is validated at construction and
every belief is renormalized after each update.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math

import numpy as np

from . import kernels
from .errors import DimensionMismatch, ZeroProbabilityObservation

# Tolerance for validating that stored distribution rows sum to one.
PROB_TOL = 1e-9


def _as_table(arr, shape, name):
    out = np.ascontiguousarray(arr, dtype=np.float64)
    if out.shape != shape:
        raise DimensionMismatch(f"{name} has shape {out.shape}, expected {shape}")
    if out.min(initial=0.0) < -PROB_TOL or not np.isfinite(out).all():
        raise ValueError(f"{name} contains negative or non-finite probabilities")
    return np.clip(out, 0.0, None)


def _check_rows(table, axis, name):
    sums = table.sum(axis=axis)
    bad = np.abs(sums - 1.0) > PROB_TOL
    if bad.any():
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        raise ValueError(f"{name} row {idx} sums to {sums[bad][0]!r}, expected 1")


@dataclasses.dataclass(frozen=True)
class TabularModel:
    """Dense single-decision-maker model over flat action/observation spaces.

    transition[s, a, s'], observation[a, s', o], reward[s, a]; the
    observation table is conditioned on the action taken and the state
    arrived in. With fully_observable=True the observation machinery is
    ignored and the model is treated as an MDP over the same tables.
    """

    transition: np.ndarray
    observation: np.ndarray
    reward: np.ndarray
    discount: float
    initial_belief: np.ndarray
    fully_observable: bool = False

    def __post_init__(self):
        t = np.ascontiguousarray(self.transition, dtype=np.float64)
        if t.ndim != 3 or t.shape[0] != t.shape[2] or 0 in t.shape:
            raise DimensionMismatch(f"transition has shape {t.shape}")
        num_states, num_actions = t.shape[0], t.shape[1]
        z = self.observation
        num_obs = 1 if z is None else np.shape(z)[-1]

        t = _as_table(t, (num_states, num_actions, num_states), "transition")
        _check_rows(t, 2, "transition")
        z = _as_table(z, (num_actions, num_states, num_obs), "observation")
        _check_rows(z, 2, "observation")
        b0 = _as_table(self.initial_belief, (num_states,), "initial belief")
        if abs(b0.sum() - 1.0) > PROB_TOL:
            raise ValueError(f"initial belief sums to {b0.sum()!r}")
        r = np.ascontiguousarray(self.reward, dtype=np.float64)
        if r.shape != (num_states, num_actions):
            raise DimensionMismatch(f"reward has shape {r.shape}")
        if not np.isfinite(r).all():
            raise ValueError("reward contains non-finite entries")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount {self.discount!r} outside [0, 1)")

        for arr in (t, z, r, b0):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", t)
        object.__setattr__(self, "observation", z)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "initial_belief", b0)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self):
        return self.transition.shape[0]

    @property
    def num_actions(self):
        return self.transition.shape[1]

    @property
    def num_observations(self):
        return self.observation.shape[2]

    def content_hash(self):
        """Stable hex digest of the tables; used as a policy-cache key."""
        h = hashlib.sha256()
        for arr in (self.transition, self.observation, self.reward, self.initial_belief):
            h.update(np.asarray(arr.shape, dtype=np.int64).tobytes())
            h.update(arr.tobytes())
        h.update(repr(self.discount).encode())
        h.update(b"mdp" if self.fully_observable else b"pomdp")
        return h.hexdigest()[:16]


@dataclasses.dataclass(frozen=True)
class FactoredSpaces:
    """Row-major codec between per-agent index tuples and flat joint indices.

    Agent 0 is the most significant digit, so for sizes (3, 3) the joint
    index of (a0, a1) is a0 * 3 + a1.
    """

    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(k) for k in self.sizes)
        if not sizes or any(k < 1 for k in sizes):
            raise ValueError(f"invalid factor sizes {self.sizes!r}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def num_agents(self):
        return len(self.sizes)

    @property
    def size(self):
        return math.prod(self.sizes)

    def encode(self, indices):
        indices = tuple(indices)
        if len(indices) != len(self.sizes):
            raise DimensionMismatch(
                f"expected {len(self.sizes)} component indices, got {len(indices)}"
            )
        flat = 0
        for idx, k in zip(indices, self.sizes):
            if not 0 <= idx < k:
                raise ValueError(f"component index {idx} outside [0, {k})")
            flat = flat * k + idx
        return flat

    def decode(self, flat):
        if not 0 <= flat < self.size:
            raise ValueError(f"joint index {flat} outside [0, {self.size})")
        out = []
        for k in reversed(self.sizes):
            flat, rem = divmod(flat, k)
            out.append(rem)
        return tuple(reversed(out))


@dataclasses.dataclass(frozen=True)
class DecModel:
    """Joint model plus the factored action/observation codecs.

    name and qualifiers carry the benchmark identity when the model came
    from a generator; parsed files leave them empty.
    """

    joint: TabularModel
    action_space: FactoredSpaces
    observation_space: FactoredSpaces
    name: str = ""
    qualifiers: frozenset = frozenset()

    def __post_init__(self):
        if self.action_space.num_agents != self.observation_space.num_agents:
            raise DimensionMismatch("action/observation factor counts differ")
        if self.action_space.size != self.joint.num_actions:
            raise DimensionMismatch(
                f"joint model has {self.joint.num_actions} actions, "
                f"factored product is {self.action_space.size}"
            )
        if self.observation_space.size != self.joint.num_observations:
            raise DimensionMismatch(
                f"joint model has {self.joint.num_observations} observations, "
                f"factored product is {self.observation_space.size}"
            )
        object.__setattr__(self, "qualifiers", frozenset(self.qualifiers))

    @property
    def num_agents(self):
        return self.action_space.num_agents


def check_belief(model, b):
    """Validate and coerce a belief for the given model; returns float64 copy."""
    out = np.ascontiguousarray(b, dtype=np.float64)
    if out.shape != (model.num_states,):
        raise DimensionMismatch(
            f"belief has shape {out.shape}, model has {model.num_states} states"
        )
    return out


def uniform_belief(num_states):
    return np.full(num_states, 1.0 / num_states)


def belief_update(model, b, action, observation):
    """Exact Bayes filter step; raises ZeroProbabilityObservation when P(o)=0."""
    b = check_belief(model, b)
    out = np.empty_like(b)
    norm = kernels.belief_update(
        model.transition, model.observation, b, action, observation, out
    )
    if norm <= 0.0:
        raise ZeroProbabilityObservation(action, observation)
    return out


def predicted_belief(model, b, action):
    """One-step state distribution under the action, before observing."""
    b = check_belief(model, b)
    out = np.empty_like(b)
    kernels.predicted_belief(model.transition, b, action, out)
    return out


def observation_likelihoods(model, b, action):
    """Vector of P(o | b, a) over all observations; sums to one."""
    b = check_belief(model, b)
    out = np.empty(model.num_observations)
    kernels.obs_likelihoods(model.transition, model.observation, b, action, out)
    return out


def observation_likelihood(model, b, action, observation):
    return float(observation_likelihoods(model, b, action)[observation])


def build_mpomdp(dec):
    """Centralized model: the joint tables as-is, observations fully shared."""
    return dec.joint


def build_agent_view(dec, agent):
    """Model as seen by one agent: joint actions, only its own observations.

    The agent still selects joint actions (its policy suggests what the
    whole team should do); the observation table is marginalized onto the
    agent's component, which is exact because the update conditions on
    (a, s').
    """
    n = dec.num_agents
    if not 0 <= agent < n:
        raise DimensionMismatch(f"agent index {agent} outside [0, {n})")
    joint = dec.joint
    z = joint.observation.reshape(
        (joint.num_actions, joint.num_states) + dec.observation_space.sizes
    )
    keep = 2 + agent
    axes = tuple(i for i in range(2, 2 + n) if i != keep)
    z_i = z.sum(axis=axes) if axes else z
    return TabularModel(
        transition=joint.transition,
        observation=z_i,
        reward=joint.reward,
        discount=joint.discount,
        initial_belief=joint.initial_belief,
    )


def build_mmdp(dec):
    """Fully observable baseline over the same states, actions, and rewards."""
    return dataclasses.replace(dec.joint, fully_observable=True)

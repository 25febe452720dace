"""Offline policy computation.

Partially observable models are solved by point-based value iteration
over alpha vectors: a belief set grown by farthest-successor expansion
(Pineau et al., 2003) with randomized improvement stages over the set
(Spaan & Vlassis, 2005). Values start from the blind-policy lower bound,
so each stage is monotone at every stored point. Models whose
observations pin down the next state exactly get a closed-form policy
from the underlying MDP instead. Fully observable models are solved by
exact value iteration.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import DimensionMismatch, NonConvergence, StaleCacheError
from .model import TabularModel

SOLVER_VERSION = "pbvi-1"

# Treat an observation branch as infeasible below this likelihood.
_LIK_EPS = 1e-12


@dataclasses.dataclass(frozen=True)
class SolverParams:
    """Budgets for solve_pomdp; the first limit reached stops the solve."""

    precision_target: float = 1e-3
    max_time: float = 300.0
    max_belief_points: int = 100_000
    rng_seed: int = 0

    def __post_init__(self):
        if self.precision_target <= 0 or self.max_time <= 0:
            raise ValueError("precision_target and max_time must be positive")
        if self.max_belief_points < 1:
            raise ValueError("max_belief_points must be >= 1")

    def content_hash(self):
        text = (
            f"{self.precision_target!r}|{self.max_time!r}"
            f"|{self.max_belief_points}|{self.rng_seed}"
        )
        return hashlib.sha256(text.encode()).hexdigest()[:12]


class AlphaVectorPolicy:
    """Piecewise-linear convex value function with an action per vector.

    Construction removes exact duplicates and vectors pointwise dominated
    by a single other vector, so stored indices are canonical: the same
    construction on every agent yields the same vector order.
    """

    __slots__ = ("vectors", "vector_actions", "model_id", "timed_out")

    def __init__(self, vectors, vector_actions, model_id=None, timed_out=False,
                 prune=True):
        vectors = np.ascontiguousarray(vectors, dtype=np.float64)
        actions = np.ascontiguousarray(vector_actions, dtype=np.int64)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise DimensionMismatch(f"alpha matrix has shape {vectors.shape}")
        if actions.shape != (vectors.shape[0],):
            raise DimensionMismatch("one action per alpha vector required")
        if prune:
            keep = _prune_vectors(vectors)
            vectors, actions = vectors[keep], actions[keep]
        vectors.setflags(write=False)
        actions.setflags(write=False)
        self.vectors = vectors
        self.vector_actions = actions
        self.model_id = model_id
        self.timed_out = timed_out

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def num_states(self):
        return self.vectors.shape[1]

    def best(self, belief):
        """(vector index, value) of the maximizing vector; ties lowest index."""
        belief = np.ascontiguousarray(belief, dtype=np.float64)
        if belief.shape != (self.num_states,):
            raise DimensionMismatch(
                f"belief has {belief.shape[0] if belief.ndim == 1 else '?'} states, "
                f"policy has {self.num_states}"
            )
        return kernels.best_alpha(self.vectors, belief)

    def value(self, belief):
        return self.best(belief)[1]

    def action(self, belief):
        return int(self.vector_actions[self.best(belief)[0]])


def _prune_vectors(vectors):
    """Indices to keep: first occurrence of duplicates, no vector pointwise
    dominated by a single other vector."""
    n = vectors.shape[0]
    keep = []
    for i in range(n):
        vi = vectors[i]
        dominated = False
        for j in keep:
            if np.all(vectors[j] >= vi):
                dominated = True
                break
        if dominated:
            continue
        keep = [j for j in keep if not _strictly_dominates(vi, vectors[j])]
        keep.append(i)
    return np.array(sorted(keep), dtype=np.int64)


def _strictly_dominates(a, b):
    return bool(np.all(a >= b) and np.any(a > b))


def policy_value(policy, belief):
    return policy.value(belief)


def dominant_alpha_index(policy, belief):
    return policy.best(belief)[0]


def policy_action(policy, belief):
    return policy.action(belief)


def belief_in_action_subspace(policy, belief, action, tol=1e-12):
    """True when some vector of the action attains the max at this belief."""
    vals = policy.vectors @ np.ascontiguousarray(belief, dtype=np.float64)
    top = vals.max()
    return bool(np.any(vals[policy.vector_actions == action] >= top - tol))


# ---------------------------------------------------------------------------
# Fully observable solve


def solve_mdp(model, residual=1e-10):
    """Exact value iteration; returns (state values, greedy policy).

    Iterates until the Bellman residual is at or below `residual`; greedy
    ties go to the lowest action index.
    """
    T, R, gamma = model.transition, model.reward, model.discount
    values = np.zeros(model.num_states)
    flat = T.reshape(-1, model.num_states)
    while True:
        q = R + gamma * (flat @ values).reshape(R.shape)
        new = q.max(axis=1)
        delta = np.abs(new - values).max()
        values = new
        if delta <= residual:
            break
    q = R + gamma * (flat @ values).reshape(R.shape)
    policy = q.argmax(axis=1).astype(np.int64)
    return values, policy


def mdp_policy(model, residual=1e-10):
    """Greedy MDP solution packaged as an alpha policy (one vector per action)."""
    values, _ = solve_mdp(model, residual)
    gamma = model.discount
    q = model.reward + gamma * np.tensordot(model.transition, values, axes=([2], [0]))
    return AlphaVectorPolicy(
        vectors=np.ascontiguousarray(q.T),
        vector_actions=np.arange(model.num_actions),
        model_id=model.content_hash(),
    )


# ---------------------------------------------------------------------------
# Point-based solve


def _next_state_revealing(model):
    """True when every feasible (action, observation) pair implies a unique
    next state, which collapses the POMDP to its MDP after one step."""
    T, Z = model.transition, model.observation
    for a in range(model.num_actions):
        reachable = T[:, a, :].max(axis=0) > 0
        za = Z[a]
        if np.any((za > 0) & (za < 1)):
            return False
        for o in range(model.num_observations):
            if np.count_nonzero((za[:, o] > 0) & reachable) > 1:
                return False
    return True


class PointBasedSolver:
    """Incremental point-based solver; solve_pomdp drives it end to end.

    Exposed so tests can run single improvement stages and inspect the
    stored points and vectors.
    """

    def __init__(self, model, params=None):
        if model.fully_observable:
            raise ValueError("point-based solve expects a partially observable model")
        self.model = model
        self.params = params or SolverParams()
        self.rng = np.random.default_rng(self.params.rng_seed)

        T, Z = model.transition, model.observation
        S, A = model.num_states, model.num_actions
        dense = S <= 16 or min(
            np.count_nonzero(T[:, a, :]) / (S * S) for a in range(A)
        ) > 0.25
        self._T = [np.ascontiguousarray(T[:, a, :]) for a in range(A)]
        self._Tmul = self._T if dense else [sp.csr_matrix(t) for t in self._T]
        self._feasible_obs = [
            np.flatnonzero((T[:, a, :].max(axis=0)[:, None] * Z[a]).max(axis=0) > 0)
            for a in range(A)
        ]

        self.points = self._seed_points()
        low = model.reward.min() / (1.0 - model.discount)
        self.alphas = np.full((1, S), low)
        self.vector_actions = np.zeros(1, dtype=np.int64)

    # -- belief set ---------------------------------------------------------

    def _seed_points(self):
        model = self.model
        pts = [model.initial_belief.copy()]
        if model.num_states == 2:
            grid = np.linspace(0.0, 1.0, 101)
            pts.extend(np.column_stack([grid, 1.0 - grid]))
        elif model.num_states <= 256:
            pts.extend(np.eye(model.num_states))
        pts = np.array(pts)
        return pts[_distinct_rows(pts)]

    def _successors(self, b):
        model = self.model
        out = []
        tmp = np.empty(model.num_states)
        lik = np.empty(model.num_observations)
        for a in range(model.num_actions):
            kernels.obs_likelihoods(model.transition, model.observation, b, a, lik)
            for o in self._feasible_obs[a]:
                if lik[o] <= _LIK_EPS:
                    continue
                norm = kernels.belief_update(
                    model.transition, model.observation, b, a, o, tmp
                )
                if norm > 0.0:
                    out.append(tmp.copy())
        return out

    def expand(self, cap=None):
        """Grow the point set with farthest reachable successors plus a few
        random exploratory trajectories; returns the number added."""
        cap = self.params.max_belief_points if cap is None else cap
        pts = self.points
        added = []

        def far_enough(b):
            _, d = kernels.l1_nearest(pts, b)
            if d <= 1e-9:
                return False
            for q in added:
                if np.abs(q - b).sum() <= 1e-9:
                    return False
            return True

        for b in list(pts):
            if len(pts) + len(added) >= cap:
                break
            best, best_d = None, 1e-9
            for cand in self._successors(b):
                _, d = kernels.l1_nearest(pts, cand)
                for q in added:
                    d = min(d, float(np.abs(q - cand).sum()))
                if d > best_d:
                    best, best_d = cand, d
            if best is not None:
                added.append(best)

        model = self.model
        n_walks = min(16, model.num_actions * 2)
        for _ in range(n_walks):
            if len(pts) + len(added) >= cap:
                break
            b = model.initial_belief.copy()
            for _ in range(12):
                a = int(self.rng.integers(model.num_actions))
                lik = np.empty(model.num_observations)
                kernels.obs_likelihoods(
                    model.transition, model.observation, b, a, lik
                )
                total = lik.sum()
                if total <= 0:
                    break
                o = int(self.rng.choice(model.num_observations, p=lik / total))
                tmp = np.empty(model.num_states)
                if kernels.belief_update(
                    model.transition, model.observation, b, a, o, tmp
                ) <= 0.0:
                    break
                b = tmp
                if far_enough(b) and len(pts) + len(added) < cap:
                    added.append(b.copy())

        if added:
            self.points = np.vstack([pts, np.array(added)])
        return len(added)

    # -- value updates ------------------------------------------------------

    def point_values(self):
        return (self.points @ self.alphas.T).max(axis=1)

    def _backup(self, b):
        """Bellman point backup; returns (vector, action, value at b)."""
        model = self.model
        Z, R, gamma = model.observation, model.reward, model.discount
        S = model.num_states
        alphas = self.alphas
        best_vec, best_a, best_val = None, -1, -np.inf
        for a in range(model.num_actions):
            pred = b @ self._T[a]
            gsum = np.zeros(S)
            for o in self._feasible_obs[a]:
                w = pred * Z[a, :, o]
                cols = np.flatnonzero(w > _LIK_EPS)
                if cols.size == 0:
                    continue
                vals = alphas[:, cols] @ w[cols]
                k = int(np.argmax(vals))
                gsum += Z[a, :, o] * alphas[k]
            vec = R[:, a] + gamma * (self._Tmul[a] @ gsum)
            val = float(vec @ b)
            if val > best_val:
                best_vec, best_a, best_val = vec, a, val
        return best_vec, best_a, best_val

    def improve_once(self):
        """One randomized improvement stage over the stored points.

        Backs up points that the stage has not yet improved; keeps the old
        maximizing vector where the backup does not help, so the value at
        every stored point never decreases. Returns the largest pointwise
        improvement."""
        points = self.points
        old_vals = self.point_values()
        new_vecs, new_acts = [], []
        new_vals = np.full(len(points), -np.inf)
        for n in self.rng.permutation(len(points)):
            if new_vals[n] >= old_vals[n] - 1e-12:
                continue
            vec, act, val = self._backup(points[n])
            if val < old_vals[n]:
                k, _ = kernels.best_alpha(self.alphas, points[n])
                vec, act = self.alphas[k], int(self.vector_actions[k])
            new_vecs.append(vec)
            new_acts.append(act)
            np.maximum(new_vals, points @ vec, out=new_vals)
        alphas = np.array(new_vecs)
        actions = np.array(new_acts, dtype=np.int64)
        keep = _distinct_rows(alphas)
        self.alphas = np.ascontiguousarray(alphas[keep])
        self.vector_actions = actions[keep]
        return float(np.max(new_vals - old_vals))

    def solve(self):
        """Alternate improvement stages and expansion until the value at the
        initial belief is stable within precision_target or a budget hits."""
        params = self.params
        deadline = time.monotonic() + params.max_time
        inner_tol = params.precision_target * (1.0 - self.model.discount) / 2.0
        timed_out = False
        stages = 0

        def run_stages():
            nonlocal stages, timed_out
            while True:
                gain = self.improve_once()
                stages += 1
                if gain <= inner_tol:
                    return
                if time.monotonic() > deadline:
                    timed_out = True
                    return

        run_stages()
        v0 = self.alphas @ self.model.initial_belief
        v0 = float(v0.max())
        while not timed_out:
            if len(self.points) >= params.max_belief_points:
                break
            if self.expand() == 0:
                break
            run_stages()
            v1 = float((self.alphas @ self.model.initial_belief).max())
            if abs(v1 - v0) <= params.precision_target:
                v0 = v1
                break
            v0 = v1
        if stages == 0:
            raise NonConvergence("no improvement stage completed within budget")
        return AlphaVectorPolicy(
            vectors=self.alphas,
            vector_actions=self.vector_actions,
            model_id=self.model.content_hash(),
            timed_out=timed_out,
        )


def _distinct_rows(mat):
    keep = []
    for i in range(mat.shape[0]):
        if all(np.abs(mat[i] - mat[j]).max() > 0 for j in keep):
            keep.append(i)
    return np.array(keep, dtype=np.int64)


def solve_pomdp(model, params=None):
    """Solve a partially observable model into an alpha-vector policy.

    Deterministic for fixed (model, params): reruns produce bit-identical
    policies. A model whose observations reveal the next state is solved
    exactly through its MDP.
    """
    params = params or SolverParams()
    if model.fully_observable:
        raise ValueError("model is fully observable; use solve_mdp")
    if _next_state_revealing(model):
        return mdp_policy(model)
    return PointBasedSolver(model, params).solve()


# ---------------------------------------------------------------------------
# Policy files and the cache


def save_policy(policy, path):
    """Write the pinned text format: round-trips vectors exactly."""
    lines = ["alpha-policy v1", f"states: {policy.num_states}", f"vectors: {len(policy)}"]
    for vec, act in zip(policy.vectors, policy.vector_actions):
        lines.append(f"a: {int(act)}")
        lines.append(" ".join(f"{x:.17g}" for x in vec))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_policy(path, model_id=None):
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != "alpha-policy v1":
        raise StaleCacheError(f"{path}: not an alpha-policy v1 file")
    try:
        num_states = int(lines[1].removeprefix("states:").strip())
        num_vectors = int(lines[2].removeprefix("vectors:").strip())
        vectors, actions = [], []
        pos = 3
        for _ in range(num_vectors):
            actions.append(int(lines[pos].removeprefix("a:").strip()))
            row = [float(tok) for tok in lines[pos + 1].split()]
            if len(row) != num_states:
                raise ValueError(f"vector has {len(row)} entries for {num_states} states")
            vectors.append(row)
            pos += 2
    except (ValueError, IndexError) as exc:
        raise StaleCacheError(f"{path}: malformed policy file ({exc})") from exc
    # files are written post-pruning, so skip the quadratic pass on load
    return AlphaVectorPolicy(
        vectors=np.array(vectors),
        vector_actions=np.array(actions, dtype=np.int64),
        model_id=model_id,
        prune=False,
    )


class PolicyStore:
    """Disk cache of solved policies keyed by (model hash, solver params).

    A small JSON index records what each file was solved from; entries
    whose recorded key or solver version disagree are stale and refused
    unless allow_stale is set.
    """

    def __init__(self, root, allow_stale=False):
        self.root = root
        self.allow_stale = allow_stale
        os.makedirs(root, exist_ok=True)
        self._index_path = os.path.join(root, "index.json")

    def _index(self):
        try:
            with open(self._index_path, encoding="utf-8") as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError):
            return {}

    def _write_index(self, index):
        with open(self._index_path, "w", encoding="utf-8") as fh:
            json.dump(index, fh, indent=0, sort_keys=True)

    def policy_for(self, model, params, label="policy"):
        """Load the cached policy or solve and persist it."""
        key = f"{label}-{model.content_hash()}-{params.content_hash()}"
        path = os.path.join(self.root, key + ".alpha")
        if os.path.exists(path):
            entry = self._index().get(key)
            fresh = entry is not None and (
                entry.get("model") == model.content_hash()
                and entry.get("params") == params.content_hash()
                and entry.get("solver") == SOLVER_VERSION
            )
            if not fresh and not self.allow_stale:
                raise StaleCacheError(
                    f"cached policy {path} does not match its key; "
                    "delete it or pass allow_stale"
                )
            policy = load_policy(path, model_id=model.content_hash())
            if entry is not None:
                policy.timed_out = bool(entry.get("timed_out", False))
            return policy
        if model.fully_observable:
            policy = mdp_policy(model)
        else:
            policy = solve_pomdp(model, params)
        save_policy(policy, path)
        index = self._index()
        index[key] = {
            "model": model.content_hash(),
            "params": params.content_hash(),
            "solver": SOLVER_VERSION,
            "timed_out": bool(policy.timed_out),
        }
        self._write_index(index)
        return policy

"""Benchmark problem generators.

Each generator builds a DecModel from the published description of the
problem; parameter provenance for the committed model files lives in
models/PROVENANCE.md. Qualifier flags follow the usual shorthand:

    UI  uniform initial belief
    WP  small penalties for wall collisions / message sending
    SS  meeting problem starts in a shared row or column, not corners
    AG  meeting rewarded anywhere on the grid, not only goal corners
    DP  three-agent broadcast buffer fill probabilities (0.2, 0.4, 0.4)
"""

from __future__ import annotations

import dataclasses
import itertools

import numpy as np

from .errors import UnsupportedSpec
from .model import DecModel, FactoredSpaces, TabularModel

PROBLEMS = ("dec-tiger", "broadcast", "meet-2x2", "meet-3x3", "box-push")

_AGENTS = {
    "dec-tiger": (2, 3, 4),
    "broadcast": (2, 3),
    "meet-2x2": (2,),
    "meet-3x3": (2, 3),
    "box-push": (2,),
}
_QUALIFIERS = {
    "dec-tiger": frozenset(),
    "broadcast": frozenset({"DP", "WP"}),
    "meet-2x2": frozenset({"SS", "UI", "WP"}),
    "meet-3x3": frozenset({"AG", "UI", "WP"}),
    "box-push": frozenset(),
}

DISCOUNT = 0.9

# Wall-collision / message-send penalty used by the WP qualifier. The
# sources leave the magnitude open; keep it well under 10% of the largest
# single-step reward of the problems it applies to.
WP_PENALTY = 0.1


@dataclasses.dataclass(frozen=True)
class BenchmarkSpec:
    """Validated benchmark identity: problem name, team size, qualifiers."""

    name: str
    num_agents: int
    qualifiers: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "qualifiers", frozenset(self.qualifiers))
        if self.name not in PROBLEMS:
            raise UnsupportedSpec(f"unknown problem {self.name!r}")
        if self.num_agents not in _AGENTS[self.name]:
            raise UnsupportedSpec(
                f"{self.name} supports {_AGENTS[self.name]} agents, "
                f"got {self.num_agents}"
            )
        bad = self.qualifiers - _QUALIFIERS[self.name]
        if bad:
            raise UnsupportedSpec(
                f"{self.name} does not take qualifier(s) {sorted(bad)}"
            )
        if "DP" in self.qualifiers and self.num_agents != 3:
            raise UnsupportedSpec("DP redefines the three-agent broadcast only")
        if {"SS", "UI"} <= self.qualifiers:
            raise UnsupportedSpec("SS and UI both redefine the initial belief")


def build_benchmark(spec):
    """Construct the DecModel for a validated benchmark spec."""
    if not isinstance(spec, BenchmarkSpec):
        raise UnsupportedSpec(f"expected BenchmarkSpec, got {type(spec).__name__}")
    build = {
        "dec-tiger": _dec_tiger,
        "broadcast": _broadcast,
        "meet-2x2": _meet_2x2,
        "meet-3x3": _meet_3x3,
        "box-push": _box_push,
    }[spec.name]
    return build(spec)


def apply_qualifier(dec, qualifier):
    """Rebuild the benchmark with one more qualifier. Idempotent.

    UI only rescales the initial belief and works on any model; the other
    qualifiers redefine problem-specific table entries and therefore need
    the benchmark identity the generators record on the DecModel.
    """
    if qualifier == "UI" and not dec.name:
        joint = dataclasses.replace(
            dec.joint,
            initial_belief=np.full(dec.joint.num_states, 1.0 / dec.joint.num_states),
        )
        return dataclasses.replace(dec, joint=joint)
    if not dec.name:
        raise UnsupportedSpec(
            f"cannot apply {qualifier!r} to a model without a benchmark identity"
        )
    spec = BenchmarkSpec(
        name=dec.name,
        num_agents=dec.num_agents,
        qualifiers=dec.qualifiers | {qualifier},
    )
    return build_benchmark(spec)


def _assemble(spec, T, Z, R, start, action_sizes, obs_sizes):
    joint = TabularModel(
        transition=T,
        observation=Z,
        reward=R,
        discount=DISCOUNT,
        initial_belief=start,
    )
    return DecModel(
        joint=joint,
        action_space=FactoredSpaces(action_sizes),
        observation_space=FactoredSpaces(obs_sizes),
        name=spec.name,
        qualifiers=spec.qualifiers,
    )


def _joint_tuples(sizes):
    return list(itertools.product(*(range(k) for k in sizes)))


# ---------------------------------------------------------------------------
# Dec-Tiger


def _dec_tiger(spec):
    """n-agent tiger-behind-a-door.

    States: tiger-left (0) / tiger-right (1). Per-agent actions: open-left
    (0), open-right (1), listen (2); observations hear-left (0) /
    hear-right (1). While everyone listens the state persists and each
    agent independently hears the correct side with probability 0.85; any
    opened door resets the state uniformly and makes every observation
    uninformative. Team reward: -1 per listener; +10 per agent at the
    treasure door when nobody frees the tiger; opening the tiger door
    costs -100 split across the agents doing so together.
    """
    n = spec.num_agents
    actions = _joint_tuples((3,) * n)
    obs = _joint_tuples((2,) * n)
    A, O = len(actions), len(obs)

    T = np.zeros((2, A, 2))
    Z = np.zeros((A, 2, O))
    R = np.zeros((2, A))
    for ai, act in enumerate(actions):
        all_listen = all(a == 2 for a in act)
        T[:, ai, :] = np.eye(2) if all_listen else 0.5
        if all_listen:
            for s2 in (0, 1):
                for oi, ob in enumerate(obs):
                    p = 1.0
                    for o in ob:
                        p *= 0.85 if o == s2 else 0.15
                    Z[ai, s2, oi] = p
        else:
            Z[ai, :, :] = 1.0 / O
        for s in (0, 1):
            wrong = sum(1 for a in act if a == s)
            right = sum(1 for a in act if a == 1 - s)
            listen = sum(1 for a in act if a == 2)
            if wrong:
                R[s, ai] = -100.0 / wrong - listen
            else:
                R[s, ai] = 10.0 * right - listen

    start = np.array([0.5, 0.5])
    return _assemble(spec, T, Z, R, start, (3,) * n, (2,) * n)


# ---------------------------------------------------------------------------
# Broadcast channel


def _broadcast(spec):
    """Agents share a collision channel; exactly one full-buffer sender
    per step gets its message through for +1.

    State is the tuple of buffer flags (agent 0 most significant). A
    successful send empties that buffer; afterwards every empty buffer
    refills independently (fill probability 0.9/0.1 for two agents,
    0.9/0.1/0.1 for three, DP: 0.2/0.4/0.4). Each agent observes its own
    buffer flag exactly. Start: agent 0's buffer empty, the others full.
    WP charges 0.1 per send action.
    """
    n = spec.num_agents
    if "DP" in spec.qualifiers:
        fill = (0.2, 0.4, 0.4)
    else:
        fill = (0.9, 0.1) if n == 2 else (0.9, 0.1, 0.1)
    send_cost = WP_PENALTY if "WP" in spec.qualifiers else 0.0

    S = 2**n
    actions = _joint_tuples((2,) * n)
    A = len(actions)

    def bits(s):
        return tuple((s >> (n - 1 - i)) & 1 for i in range(n))

    def mask(b):
        out = 0
        for i, v in enumerate(b):
            out |= v << (n - 1 - i)
        return out

    T = np.zeros((S, A, S))
    Z = np.zeros((A, S, S))
    R = np.zeros((S, A))
    for s in range(S):
        full = bits(s)
        for ai, act in enumerate(actions):
            senders = [i for i in range(n) if act[i] == 0 and full[i]]
            success = len(senders) == 1
            R[s, ai] = float(success) - send_cost * sum(
                1 for a in act if a == 0
            )
            after = list(full)
            if success:
                after[senders[0]] = 0
            # Independent refills over the empty buffers.
            empty = [i for i in range(n) if after[i] == 0]
            for outcome in itertools.product((0, 1), repeat=len(empty)):
                p = 1.0
                nxt = list(after)
                for i, v in zip(empty, outcome):
                    p *= fill[i] if v else 1.0 - fill[i]
                    nxt[i] = v
                T[s, ai, mask(nxt)] += p
    for s2 in range(S):
        Z[:, s2, s2] = 1.0  # each agent reads its own flag; jointly that is s'

    start = np.zeros(S)
    start[mask((0,) + (1,) * (n - 1))] = 1.0
    return _assemble(spec, T, Z, R, start, (2,) * n, (2,) * n)


# ---------------------------------------------------------------------------
# Meeting on a grid


def _grid_kernel(rows, cols, noise=0.4):
    """Per-agent movement kernels on a rows x cols grid.

    Actions: up (0), down (1), left (2), right (3), stay (4). A move goes
    the intended way with probability 0.6 and otherwise slips uniformly
    to one of the other three directions or in place; motion into a wall
    stays put. stay is deterministic.
    """
    P = rows * cols
    deltas = {0: (-1, 0), 1: (1, 0), 2: (0, -1), 3: (0, 1)}
    slip = noise / 4.0

    def step(p, d):
        r, c = divmod(p, cols)
        dr, dc = deltas[d]
        r2, c2 = r + dr, c + dc
        if 0 <= r2 < rows and 0 <= c2 < cols:
            return r2 * cols + c2, False
        return p, True

    K = np.zeros((5, P, P))
    blocked = np.zeros((5, P), dtype=bool)
    K[4] = np.eye(P)
    for a in range(4):
        for p in range(P):
            K[a, p, p] += slip
            for d in range(4):
                q, hit_wall = step(p, d)
                K[a, p, q] += (1.0 - noise) if d == a else slip
            blocked[a, p] = step(p, a)[1]
    return K, blocked


def _meet_grid(spec, rows, cols, starts, goal_cells):
    n = spec.num_agents
    P = rows * cols
    K, blocked = _grid_kernel(rows, cols)
    wall_cost = WP_PENALTY if "WP" in spec.qualifiers else 0.0

    S = P**n
    pos_space = FactoredSpaces((P,) * n)
    actions = _joint_tuples((5,) * n)
    A = len(actions)

    T = np.zeros((S, A, S))
    for ai, act in enumerate(actions):
        kern = K[act[0]]
        for a in act[1:]:
            kern = np.einsum("ij,kl->ikjl", kern, K[a]).reshape(
                kern.shape[0] * P, kern.shape[1] * P
            )
        T[:, ai, :] = kern

    Z = np.zeros((A, S, S))
    for s2 in range(S):
        Z[:, s2, s2] = 1.0  # every agent reads its own cell exactly

    R = np.zeros((S, A))
    together = np.zeros(S, dtype=bool)
    for s in range(S):
        ps = pos_space.decode(s)
        if all(p == ps[0] for p in ps) and ps[0] in goal_cells:
            together[s] = True
    R[together, :] = 1.0
    if wall_cost:
        for ai, act in enumerate(actions):
            for s in range(S):
                ps = pos_space.decode(s)
                hits = sum(
                    1 for p, a in zip(ps, act) if a != 4 and blocked[a, p]
                )
                R[s, ai] -= wall_cost * hits

    if "UI" in spec.qualifiers:
        start = np.full(S, 1.0 / S)
    elif "SS" in spec.qualifiers:
        start = np.zeros(S)
        pairs = [
            (p, q)
            for p in range(P)
            for q in range(P)
            if p != q
            and (divmod(p, cols)[0] == divmod(q, cols)[0]
                 or divmod(p, cols)[1] == divmod(q, cols)[1])
        ]
        for pair in pairs:
            start[pos_space.encode(pair)] = 1.0 / len(pairs)
    else:
        start = np.zeros(S)
        start[pos_space.encode(starts[:n])] = 1.0

    return _assemble(spec, T, Z, R, start, (5,) * n, (P,) * n)


def _meet_2x2(spec):
    """Two robots on a 2x2 grid earn +1 every step they share a cell.

    Movement noise as in _grid_kernel; each robot senses which side wall
    it is against (its column). Start: opposite diagonal corners.
    """
    dec = _meet_grid(
        spec, 2, 2, starts=(0, 3), goal_cells=set(range(4))
    )
    # Column observation instead of exact cell: marginalize the cell
    # signal down to left/right wall.
    P, n = 4, spec.num_agents
    pos_space = FactoredSpaces((P,) * n)
    obs_space = FactoredSpaces((2,) * n)
    joint = dec.joint
    Z = np.zeros((joint.num_actions, joint.num_states, obs_space.size))
    for s2 in range(joint.num_states):
        walls = tuple(p % 2 for p in pos_space.decode(s2))
        Z[:, s2, obs_space.encode(walls)] = 1.0
    joint = dataclasses.replace(joint, observation=Z)
    return dataclasses.replace(dec, joint=joint, observation_space=obs_space)


def _meet_3x3(spec):
    """Robots on a 3x3 grid earn +1 per step all together on a goal corner.

    Goals are the top-left and bottom-right corners (AG: anywhere). Each
    robot senses its own cell exactly. Start: top-right / bottom-left
    (third agent: top-left), forcing the team to agree on a goal.
    """
    goal = set(range(9)) if "AG" in spec.qualifiers else {0, 8}
    return _meet_grid(spec, 3, 3, starts=(2, 6, 0), goal_cells=goal)


# ---------------------------------------------------------------------------
# Box pushing


def _box_push(spec):
    """Two agents below a row of boxes: small/large/large/small columns.

    Each agent walks the four-cell bottom row (left 0, right 1, push 2,
    stay 3; moves succeed with probability 0.9, otherwise stay) and sees
    only the cell above itself: empty (0), wall (1, never emitted),
    other-agent (2, never emitted), small box (3), large box (4). Pushing
    under a small box (columns 0/3) delivers it for +10. The large box
    over columns 1-2 needs both agents pushing those two columns at once
    and pays +100. A push that moves nothing costs -5, every step -0.1,
    and when all three boxes are home they are restocked. Start: agents
    under the large box, all boxes present.
    """
    n = 2
    cols, boxes = 4, 3  # box bits: small@0, large@1-2, small@3
    pos_space = FactoredSpaces((cols, cols, 2**boxes))
    S = pos_space.size
    actions = _joint_tuples((4,) * n)
    A = len(actions)
    MOVE_OK = 0.9

    def box_at(col, mask):
        if col in (0, 3):
            bit = 0 if col == 0 else 2
            return ("small", bit) if mask >> bit & 1 else (None, bit)
        return ("large", 1) if mask >> 1 & 1 else (None, 1)

    T = np.zeros((S, A, S))
    R = np.zeros((S, A))
    Z = np.zeros((A, S, 25))
    obs_space = FactoredSpaces((5, 5))

    for s in range(S):
        p1, p2, mask = pos_space.decode(s)
        for ai, act in enumerate(actions):
            reward = -0.1
            new_mask = mask
            pushes = [
                (p, a) for p, a in zip((p1, p2), act) if a == 2
            ]
            push_cols = sorted(p for p, _ in pushes)
            delivered = []
            if push_cols.count(0) == 1 and mask >> 0 & 1:
                delivered.append(0)
            if push_cols.count(3) == 1 and mask >> 2 & 1:
                delivered.append(2)
            if 1 in push_cols and 2 in push_cols and mask >> 1 & 1:
                delivered.append(1)
            for bit in delivered:
                new_mask &= ~(1 << bit)
                reward += 100.0 if bit == 1 else 10.0
            # Pushes that moved nothing: bump penalty.
            for p, _ in pushes:
                kind, bit = box_at(p, mask)
                if kind is None or bit not in delivered:
                    reward -= 5.0
            if new_mask == 0:
                new_mask = 2**boxes - 1  # restock
            R[s, ai] = reward

            # Independent movement of the two agents.
            def move_dist(p, a):
                if a == 0:
                    q = max(p - 1, 0)
                elif a == 1:
                    q = min(p + 1, cols - 1)
                else:
                    return {p: 1.0}
                if q == p:
                    return {p: 1.0}
                return {q: MOVE_OK, p: 1.0 - MOVE_OK}

            for q1, pr1 in move_dist(p1, act[0]).items():
                for q2, pr2 in move_dist(p2, act[1]).items():
                    T[s, ai, pos_space.encode((q1, q2, new_mask))] += pr1 * pr2

    for s2 in range(S):
        p1, p2, mask = pos_space.decode(s2)
        front = []
        for p in (p1, p2):
            kind, _ = box_at(p, mask)
            front.append(0 if kind is None else (3 if kind == "small" else 4))
        Z[:, s2, obs_space.encode(front)] = 1.0

    start = np.zeros(S)
    start[pos_space.encode((1, 2, 2**boxes - 1))] = 1.0
    return _assemble(spec, T, Z, R, start, (4,) * n, (5,) * n)

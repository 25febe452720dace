"""Line-oriented text format for multiagent tabular models.

Header directives (any order, all required) followed by sparse table
entries; omitted entries are zero. Indices are 0-based and joint indices
are flat row-major with agent 0 most significant. `#` starts a comment.

    agents: 2
    states: 2
    actions: 3 3
    observations: 2 2
    discount: 0.9
    start: 0.5 0.5
    T: <joint-a> : <s> : <s'> <prob>
    Z: <joint-a> : <s'> : <joint-o> <prob>
    R: <s> : <joint-a> <value>
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ModelSemanticError, ModelSyntaxError
from .model import DecModel, FactoredSpaces, TabularModel

_HEADER_KEYS = ("agents", "states", "actions", "observations", "discount", "start")


def _split_comment(line):
    cut = line.find("#")
    return line if cut < 0 else line[:cut]


class _Line:
    """One logical line with enough position info for error reporting."""

    def __init__(self, number, text):
        self.number = number
        self.text = text

    def column_of(self, token, occurrence=0):
        # Best-effort: report the column of the offending token.
        start, found = 0, -1
        for _ in range(occurrence + 1):
            found = self.text.find(token, start)
            if found < 0:
                return 1
            start = found + 1
        return found + 1

    def fail(self, message, token=None):
        col = 1 if token is None else self.column_of(str(token))
        raise ModelSyntaxError(self.number, col, message)


def _parse_int(line, token, what):
    try:
        value = int(token)
    except ValueError:
        line.fail(f"expected integer {what}, got {token!r}", token)
    return value


def _parse_float(line, token, what):
    try:
        value = float(token)
    except ValueError:
        line.fail(f"expected number {what}, got {token!r}", token)
    return value


def parse_model(text):
    """Parse model text into a DecModel. Total over the grammar above."""
    header = {}
    entries = {"T": [], "Z": [], "R": []}

    lines = []
    for number, raw in enumerate(text.splitlines(), start=1):
        stripped = _split_comment(raw)
        if stripped.strip():
            lines.append(_Line(number, raw.rstrip("\n")))

    if not lines:
        raise ModelSyntaxError(1, 1, "empty model file")

    for line in lines:
        body = _split_comment(line.text)
        key, sep, rest = body.partition(":")
        if not sep:
            line.fail("expected 'key: values'")
        key = key.strip()
        if key in ("T", "Z", "R"):
            _parse_table_line(line, key, rest, entries)
        elif key in _HEADER_KEYS:
            if key in header:
                line.fail(f"duplicate directive {key!r}", key)
            header[key] = (line, rest.split())
        else:
            line.fail(f"unknown directive {key!r}", key)

    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise ModelSemanticError(f"missing directives: {', '.join(missing)}")

    line, toks = header["agents"]
    if len(toks) != 1:
        line.fail("agents takes one integer")
    num_agents = _parse_int(line, toks[0], "agent count")
    if num_agents < 1:
        raise ModelSemanticError(f"agents must be >= 1, got {num_agents}")

    line, toks = header["states"]
    if len(toks) != 1:
        line.fail("states takes one integer")
    num_states = _parse_int(line, toks[0], "state count")
    if num_states < 1:
        raise ModelSemanticError(f"states must be >= 1, got {num_states}")

    def sizes_of(key):
        ln, tk = header[key]
        if len(tk) != num_agents:
            raise ModelSemanticError(
                f"{key} lists {len(tk)} sizes for {num_agents} agents"
            )
        sizes = tuple(_parse_int(ln, t, f"{key} size") for t in tk)
        if any(k < 1 for k in sizes):
            raise ModelSemanticError(f"{key} sizes must be >= 1, got {sizes}")
        return sizes

    action_sizes = sizes_of("actions")
    obs_sizes = sizes_of("observations")
    num_actions = math.prod(action_sizes)
    num_obs = math.prod(obs_sizes)

    line, toks = header["discount"]
    if len(toks) != 1:
        line.fail("discount takes one number")
    discount = _parse_float(line, toks[0], "discount")

    line, toks = header["start"]
    if len(toks) != num_states:
        raise ModelSemanticError(
            f"start lists {len(toks)} probabilities for {num_states} states"
        )
    start = np.array([_parse_float(line, t, "start probability") for t in toks])

    T = np.zeros((num_states, num_actions, num_states))
    Z = np.zeros((num_actions, num_states, num_obs))
    R = np.zeros((num_states, num_actions))
    limits = {
        "T": (num_actions, num_states, num_states),
        "Z": (num_actions, num_states, num_obs),
        "R": (num_states, num_actions),
    }
    seen = set()
    for key, line, idxs, value in (
        (k, *e) for k, rows in entries.items() for e in rows
    ):
        for idx, limit, what in zip(idxs, limits[key], ("first", "second", "third")):
            if not 0 <= idx < limit:
                raise ModelSemanticError(
                    f"line {line.number}: {key} {what} index {idx} outside [0, {limit})"
                )
        if (key, idxs) in seen:
            raise ModelSemanticError(
                f"line {line.number}: duplicate {key} entry for {idxs}"
            )
        seen.add((key, idxs))
        if key == "T":
            a, s, s2 = idxs
            T[s, a, s2] = value
        elif key == "Z":
            a, s2, o = idxs
            Z[a, s2, o] = value
        else:
            s, a = idxs
            R[s, a] = value

    _check_stochastic(T.sum(axis=2), "transition", lambda s, a: f"(s={s}, a={a})")
    _check_stochastic(
        Z.sum(axis=2).T, "observation", lambda s2, a: f"(a={a}, s'={s2})"
    )
    if abs(start.sum() - 1.0) > 1e-9 or start.min() < 0:
        raise ModelSemanticError(f"start distribution sums to {start.sum()!r}")
    if not 0.0 <= discount < 1.0:
        raise ModelSemanticError(f"discount {discount!r} outside [0, 1)")

    joint = TabularModel(
        transition=T, observation=Z, reward=R, discount=discount, initial_belief=start
    )
    return DecModel(
        joint=joint,
        action_space=FactoredSpaces(action_sizes),
        observation_space=FactoredSpaces(obs_sizes),
    )


def _check_stochastic(sums, table, describe):
    bad = np.argwhere(np.abs(sums - 1.0) > 1e-9)
    if len(bad):
        i, j = (int(v) for v in bad[0])
        raise ModelSemanticError(
            f"{table} row {describe(i, j)} sums to {sums[i, j]!r}, expected 1"
        )


def _parse_table_line(line, key, rest, entries):
    parts = [p.strip() for p in rest.split(":")]
    want = 3 if key in ("T", "Z") else 2
    if len(parts) != want:
        line.fail(f"{key} entry takes {want} ':'-separated fields")
    head = [_parse_int(line, p, f"{key} index") for p in parts[:-1]]
    tail = parts[-1].split()
    if len(tail) != 2:
        line.fail(f"{key} entry ends with '<index> <value>'")
    head.append(_parse_int(line, tail[0], f"{key} index"))
    value = _parse_float(line, tail[1], f"{key} value")
    if key in ("T", "Z") and not 0.0 <= value <= 1.0 + 1e-12:
        raise ModelSemanticError(
            f"line {line.number}: probability {value!r} outside [0, 1]"
        )
    entries[key].append((line, tuple(head), value))


def emit_model(dec, header_comments=()):
    """Render a DecModel in the format parse_model reads.

    Zero entries are omitted, probabilities carry 17 significant digits,
    and parse_model(emit_model(m)) reproduces the tables exactly.
    """
    joint = dec.joint
    out = [f"# {c}" for c in header_comments]
    out.append(f"agents: {dec.num_agents}")
    out.append(f"states: {joint.num_states}")
    out.append("actions: " + " ".join(str(k) for k in dec.action_space.sizes))
    out.append("observations: " + " ".join(str(k) for k in dec.observation_space.sizes))
    out.append(f"discount: {joint.discount:.17g}")
    out.append("start: " + " ".join(f"{p:.17g}" for p in joint.initial_belief))

    T, Z, R = joint.transition, joint.observation, joint.reward
    for a in range(joint.num_actions):
        for s in range(joint.num_states):
            for s2 in np.flatnonzero(T[s, a]):
                out.append(f"T: {a} : {s} : {int(s2)} {T[s, a, s2]:.17g}")
    for a in range(joint.num_actions):
        for s2 in range(joint.num_states):
            for o in np.flatnonzero(Z[a, s2]):
                out.append(f"Z: {a} : {s2} : {int(o)} {Z[a, s2, o]:.17g}")
    for s in range(joint.num_states):
        for a in np.flatnonzero(R[s]):
            out.append(f"R: {s} : {int(a)} {R[s, a]:.17g}")
    return "\n".join(out) + "\n"

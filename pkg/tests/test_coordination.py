"""Suggestion pruning, belief-set maintenance, and the coordination loop.

Worked examples are computed by hand in the comments; the tiger fixtures
reuse the two-agent benchmark because its 2-state views make every update
checkable on paper.
"""

import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcas.coordination import (
    McasConfig,
    McasCoordinator,
    Suggestion,
    WeightedBeliefSet,
    conflate,
    exact_joint_update,
    expand_and_merge,
    make_suggestion,
    mcas_step,
    prune_beliefs,
    reduce_to_max_limit,
    select_joint_belief,
    suggested_action,
)
from mcas.errors import (
    AllCandidatesInvalid,
    DimensionMismatch,
    DisjointSupports,
    EmptyAfterPrune,
)
from mcas.model import (
    DecModel,
    FactoredSpaces,
    TabularModel,
    belief_update,
    build_agent_view,
    uniform_belief,
)
from mcas.problems import BenchmarkSpec, build_benchmark
from mcas.solver import AlphaVectorPolicy, SolverParams, policy_action, solve_pomdp


@pytest.fixture(scope="module")
def tiger():
    return build_benchmark(BenchmarkSpec("dec-tiger", 2))


@pytest.fixture(scope="module")
def tiger_views(tiger):
    return tuple(build_agent_view(tiger, i) for i in range(2))


@pytest.fixture(scope="module")
def tiger_policies(tiger, tiger_views):
    params = SolverParams(precision_target=1e-2, max_time=60.0)
    views = tuple(solve_pomdp(v, params) for v in tiger_views)
    return views, solve_pomdp(tiger.joint, params)


def beliefs_strategy(num_states, max_rows=4):
    row = st.lists(
        st.floats(0.01, 1.0, allow_nan=False), min_size=num_states,
        max_size=num_states,
    ).map(lambda xs: np.array(xs) / np.sum(xs))
    return st.lists(row, min_size=1, max_size=max_rows).map(np.array)


# ---------------------------------------------------------------------------
# conflation
# ---------------------------------------------------------------------------

def test_conflation_of_two_equal_soft_beliefs():
    # 0.8*0.8 : 0.2*0.2 normalizes to 16/17 : 1/17
    out = conflate(np.array([[0.8, 0.2], [0.8, 0.2]]))
    np.testing.assert_allclose(out, [16.0 / 17.0, 1.0 / 17.0], rtol=0, atol=1e-12)


def test_conflation_is_not_idempotent():
    b = np.array([0.8, 0.2])
    assert np.abs(conflate(np.array([b, b])) - b).max() > 1e-3


@given(beliefs_strategy(4))
@settings(max_examples=100, deadline=None)
def test_conflation_normalizes_and_ignores_row_order(mat):
    out = conflate(mat)
    assert out.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(out >= 0)
    flipped = conflate(mat[::-1].copy())
    np.testing.assert_allclose(flipped, out, rtol=0, atol=1e-12)


@given(beliefs_strategy(5, max_rows=1))
@settings(max_examples=100, deadline=None)
def test_uniform_rows_are_the_conflation_identity(mat):
    b = mat[0]
    stack = np.vstack([b, uniform_belief(5), uniform_belief(5)])
    np.testing.assert_allclose(conflate(stack), b, rtol=0, atol=1e-12)


def test_disjoint_supports_raise():
    with pytest.raises(DisjointSupports):
        conflate(np.array([[1.0, 0.0], [0.0, 1.0]]))


def test_conflate_rejects_empty_input():
    with pytest.raises(DimensionMismatch):
        conflate(np.empty((0, 3)))


# ---------------------------------------------------------------------------
# weighted sets: expand, merge, reduce
# ---------------------------------------------------------------------------

def test_expand_from_uniform_under_listening(tiger, tiger_views):
    # [.5,.5] under listen branches to [.85,.15] and [.15,.85]; children
    # carry parent weight + 1.
    listen = tiger.action_space.encode((2, 2))
    start = WeightedBeliefSet.single(uniform_belief(2))
    out = expand_and_merge(tiger_views[0], start, listen, delta_single=0.0)
    np.testing.assert_allclose(out.beliefs, [[0.85, 0.15], [0.15, 0.85]], atol=1e-12)
    assert out.weights.tolist() == [2.0, 2.0]


def test_second_expansion_merges_the_shared_child(tiger, tiger_views):
    # Both members reach [.5,.5] via their unlikely observation; the exact
    # duplicate merges even at delta 0 and pools both weights.
    listen = tiger.action_space.encode((2, 2))
    start = WeightedBeliefSet.single(uniform_belief(2))
    once = expand_and_merge(tiger_views[0], start, listen, delta_single=0.0)
    twice = expand_and_merge(tiger_views[0], once, listen, delta_single=0.0)
    assert len(twice) == 3
    posterior = 0.85 * 0.85 / (0.85 * 0.85 + 0.15 * 0.15)
    np.testing.assert_allclose(
        twice.beliefs,
        [[posterior, 1 - posterior], [0.5, 0.5], [1 - posterior, posterior]],
        atol=1e-12,
    )
    assert twice.weights.tolist() == [3.0, 6.0, 3.0]


def test_wide_tolerance_collapses_the_expansion(tiger, tiger_views):
    listen = tiger.action_space.encode((2, 2))
    start = WeightedBeliefSet.single(uniform_belief(2))
    out = expand_and_merge(tiger_views[0], start, listen, delta_single=2.0)
    assert len(out) == 1
    assert out.total_weight() == 4.0


def test_reduce_merges_the_closest_pair_into_the_heavier_member():
    s = WeightedBeliefSet(
        np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]]), [1.0, 5.0, 1.0]
    )
    out = reduce_to_max_limit(s, 2)
    np.testing.assert_allclose(out.beliefs, [[0.9, 0.1], [0.0, 1.0]], atol=1e-12)
    assert out.weights.tolist() == [6.0, 1.0]


def test_reduce_weight_ties_drop_the_higher_index():
    s = WeightedBeliefSet(
        np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 1.0]]), [2.0, 2.0, 1.0]
    )
    out = reduce_to_max_limit(s, 2)
    np.testing.assert_allclose(out.beliefs, [[1.0, 0.0], [0.0, 1.0]], atol=1e-12)
    assert out.weights.tolist() == [4.0, 1.0]


def test_reduce_is_a_no_op_under_the_limit():
    s = WeightedBeliefSet(np.array([[0.5, 0.5]]), [3.0])
    assert reduce_to_max_limit(s, 5) is s
    with pytest.raises(ValueError):
        reduce_to_max_limit(s, 0)


@given(beliefs_strategy(3, max_rows=4), st.integers(1, 3))
@settings(max_examples=100, deadline=None)
def test_reduce_conserves_weight_and_respects_the_cap(mat, cap):
    s = WeightedBeliefSet(mat, np.arange(1.0, len(mat) + 1.0))
    out = reduce_to_max_limit(s, cap)
    assert len(out) <= cap
    assert out.total_weight() == pytest.approx(s.total_weight(), abs=1e-9)


def test_weighted_set_validation():
    with pytest.raises(DimensionMismatch):
        WeightedBeliefSet(np.ones((2, 3)), [1.0])
    single = WeightedBeliefSet.single(np.array([0.5, 0.5]), weight=2.0)
    assert len(single) == 1 and single.total_weight() == 2.0


# ---------------------------------------------------------------------------
# suggestions and pruning
# ---------------------------------------------------------------------------

def fence_policy():
    """Three vectors, two actions: action 3 wins near the corners, action 5
    in the middle."""
    return AlphaVectorPolicy(
        np.array([[1.0, 0.0], [0.0, 1.0], [0.65, 0.65]]),
        np.array([3, 3, 5]),
        prune=False,
    )


def test_prune_keeps_members_matching_the_suggested_action():
    policy = fence_policy()
    s = WeightedBeliefSet(
        np.array([[0.9, 0.1], [0.5, 0.5], [0.1, 0.9]]), [1.0, 2.0, 3.0]
    )
    kept = prune_beliefs(policy, s, Suggestion(1, 3), message_mode="action")
    np.testing.assert_allclose(kept.beliefs, [[0.9, 0.1], [0.1, 0.9]], atol=1e-12)
    assert kept.weights.tolist() == [1.0, 3.0]
    with pytest.raises(EmptyAfterPrune):
        prune_beliefs(policy, s, Suggestion(1, 4), message_mode="action")


def test_alpha_mode_refines_action_mode():
    policy = fence_policy()
    s = WeightedBeliefSet(np.array([[0.9, 0.1], [0.1, 0.9]]), [1.0, 1.0])
    by_action = prune_beliefs(policy, s, Suggestion(1, 3), message_mode="action")
    by_alpha = prune_beliefs(policy, s, Suggestion(1, 0), message_mode="alpha")
    assert len(by_action) == 2
    assert len(by_alpha) == 1
    np.testing.assert_allclose(by_alpha.beliefs, [[0.9, 0.1]], atol=1e-12)


def test_prune_rejects_an_empty_set():
    with pytest.raises(EmptyAfterPrune):
        prune_beliefs(
            fence_policy(),
            WeightedBeliefSet(np.empty((0, 2)), []),
            Suggestion(1, 3),
        )


@given(beliefs_strategy(3, max_rows=5), st.integers(0, 4), st.integers(0, 6))
@settings(max_examples=120, deadline=None)
def test_alpha_pruning_keeps_a_subset_of_action_pruning(mat, sender_row, seed):
    rng = np.random.default_rng(seed)
    vectors = rng.normal(size=(4, 3))
    policy = AlphaVectorPolicy(vectors, rng.integers(0, 3, size=4), prune=False)
    sender_belief = mat[sender_row % len(mat)]
    s = WeightedBeliefSet(mat, np.ones(len(mat)))

    action_sug = make_suggestion(policy, sender_belief, "action", sender=1)
    alpha_sug = make_suggestion(policy, sender_belief, "alpha", sender=1)
    assert suggested_action(policy, alpha_sug, "alpha") == action_sug.payload

    kept_action = prune_beliefs(policy, s, action_sug, "action")
    kept_alpha = prune_beliefs(policy, s, alpha_sug, "alpha")
    rows = {tuple(b) for b in kept_action.beliefs}
    assert {tuple(b) for b in kept_alpha.beliefs} <= rows
    assert tuple(sender_belief) in rows


def test_suggestion_round_trip(tiger_policies):
    (view0, _), _ = tiger_policies
    b = np.array([0.3, 0.7])
    sug = make_suggestion(view0, b, "action", sender=1)
    assert suggested_action(view0, sug, "action") == policy_action(view0, b)
    alpha = make_suggestion(view0, b, "alpha", sender=1)
    assert suggested_action(view0, alpha, "alpha") == policy_action(view0, b)


# ---------------------------------------------------------------------------
# joint-belief selection
# ---------------------------------------------------------------------------

def _product_belief(rows):
    out = np.prod(np.asarray(rows), axis=0)
    return out / out.sum()


def test_heaviest_member_tuple_wins():
    own = uniform_belief(2)
    t1 = WeightedBeliefSet(np.array([[0.9, 0.1], [0.1, 0.9]]), [1.0, 2.0])
    t2 = WeightedBeliefSet(np.array([[0.6, 0.4], [0.4, 0.6]]), [2.0, 1.0])
    cfg = McasConfig(delta_joint=0.0)
    got = select_joint_belief(own, [t1, t2], cfg)
    # combo weights: 3, 2, 4, 3 -> (second of t1, first of t2)
    np.testing.assert_allclose(
        got, _product_belief([own, [0.1, 0.9], [0.6, 0.4]]), atol=1e-12
    )


def test_joint_merge_pools_near_identical_candidates():
    own = uniform_belief(2)
    t1 = WeightedBeliefSet(
        np.array([[0.8, 0.2], [0.8000001, 0.1999999], [0.2, 0.8]]),
        [1.0, 1.0, 1.5],
    )
    merged = select_joint_belief(own, [t1], McasConfig(delta_joint=1e-3))
    np.testing.assert_allclose(merged, [0.8, 0.2], atol=1e-6)
    unmerged = select_joint_belief(own, [t1], McasConfig(delta_joint=0.0))
    np.testing.assert_allclose(unmerged, [0.2, 0.8], atol=1e-12)


def test_exact_weight_ties_break_by_seeded_draw():
    own = uniform_belief(2)
    t1 = WeightedBeliefSet(np.array([[0.9, 0.1], [0.1, 0.9]]), [1.0, 1.0])
    cfg = McasConfig(delta_joint=0.0)
    picks = set()
    for seed in range(16):
        rng = np.random.default_rng(seed)
        picks.add(tuple(select_joint_belief(own, [t1], cfg, rng).round(9)))
    assert len(picks) == 2
    twice = [
        select_joint_belief(own, [t1], cfg, np.random.default_rng(5))
        for _ in range(2)
    ]
    np.testing.assert_array_equal(twice[0], twice[1])


def test_disjoint_member_tuples_are_skipped():
    own = np.array([1.0, 0.0])
    t1 = WeightedBeliefSet(np.array([[0.0, 1.0], [0.5, 0.5]]), [5.0, 1.0])
    got = select_joint_belief(own, [t1], McasConfig(delta_joint=0.0))
    np.testing.assert_allclose(got, [1.0, 0.0], atol=1e-12)


def test_all_disjoint_tuples_raise():
    own = np.array([1.0, 0.0])
    t1 = WeightedBeliefSet(np.array([[0.0, 1.0]]), [1.0])
    with pytest.raises(AllCandidatesInvalid):
        select_joint_belief(own, [t1], McasConfig(delta_joint=0.0))
    with pytest.raises(AllCandidatesInvalid):
        select_joint_belief(own, [WeightedBeliefSet(np.empty((0, 2)), [])],
                            McasConfig())


def test_weighted_average_combiner_tolerates_disjoint_supports():
    own = np.array([1.0, 0.0])
    t1 = WeightedBeliefSet(np.array([[0.0, 1.0]]), [1.0])
    cfg = McasConfig(combiner="weighted-average")
    np.testing.assert_allclose(
        select_joint_belief(own, [t1], cfg), [0.5, 0.5], atol=1e-12
    )


# ---------------------------------------------------------------------------
# the omniscient reference filter
# ---------------------------------------------------------------------------

def test_exact_joint_update_matches_the_closed_form(tiger):
    listen = tiger.action_space.encode((2, 2))
    post = exact_joint_update(tiger, uniform_belief(2), listen, (0, 0))
    hear = 0.85 * 0.85
    miss = 0.15 * 0.15
    np.testing.assert_allclose(
        post, [hear / (hear + miss), miss / (hear + miss)], atol=1e-12
    )
    direct = belief_update(tiger.joint, uniform_belief(2), listen, 0)
    np.testing.assert_allclose(post, direct, atol=0)


# ---------------------------------------------------------------------------
# value-function regularity used by the pruning argument
# ---------------------------------------------------------------------------

@given(st.integers(0, 50))
@settings(max_examples=60, deadline=None)
def test_alpha_values_are_lipschitz_in_l1(seed):
    rng = np.random.default_rng(seed)
    policy = AlphaVectorPolicy(
        rng.normal(size=(5, 4)), rng.integers(0, 3, size=5), prune=False
    )
    b1 = rng.dirichlet(np.ones(4))
    b2 = rng.dirichlet(np.ones(4))
    bound = np.abs(policy.vectors).max() * np.abs(b1 - b2).sum()
    assert abs(policy.value(b1) - policy.value(b2)) <= bound + 1e-9


# ---------------------------------------------------------------------------
# the coordinator
# ---------------------------------------------------------------------------

def _tracking_config():
    return McasConfig(delta_single=0.0, delta_joint=0.0, max_beliefs=10**6)


def _coordinator(tiger, tiger_views, tiger_policies, config):
    view_policies, joint_policy = tiger_policies
    return McasCoordinator(
        tiger, tiger_views, view_policies, joint_policy, config,
        agent=0, tie_rng=np.random.default_rng(7),
    )


@pytest.mark.parametrize("mode", ["action", "alpha"])
def test_tracked_teammate_belief_stays_in_the_estimated_set(
    tiger, tiger_views, tiger_policies, mode
):
    config = McasConfig(delta_single=0.0, delta_joint=0.0, max_beliefs=10**6,
                        message_mode=mode)
    coord = _coordinator(tiger, tiger_views, tiger_policies, config)
    view_policies, _ = tiger_policies
    rng = np.random.default_rng(123)
    joint = tiger.joint
    state = int(rng.choice(joint.num_states, p=joint.initial_belief))
    teammate = joint.initial_belief.copy()

    for _ in range(12):
        sug = make_suggestion(view_policies[1], teammate, mode, sender=1)
        action = coord.select_action([sug])
        state = int(rng.choice(joint.num_states, p=joint.transition[state, action]))
        obs = int(rng.choice(joint.num_observations, p=joint.observation[action, state]))
        own_obs, teammate_obs = tiger.observation_space.decode(obs)
        coord.advance(action, own_obs)
        teammate = belief_update(tiger_views[1], teammate, action, teammate_obs)
        gap = np.abs(coord.estimated[1].beliefs - teammate).sum(axis=1).min()
        assert gap <= 1e-9
    assert coord.anomalies == 0
    assert coord.max_set_size[1] >= 2


def test_contradictory_suggestions_trigger_recovery(
    tiger, tiger_views, tiger_policies
):
    coord = _coordinator(tiger, tiger_views, tiger_policies, _tracking_config())
    view_policies, _ = tiger_policies
    honest = policy_action(view_policies[1], tiger.joint.initial_belief)
    lie = (honest + 1) % tiger.joint.num_actions

    action = coord.select_action([Suggestion(1, lie)])
    assert coord.anomalies == 1
    assert len(coord.estimated[1]) >= 1

    coord.advance(action, own_observation=0)
    attained = {
        policy_action(view_policies[1], b) for b in coord.estimated[1].beliefs
    }
    lie2 = min(set(range(tiger.joint.num_actions)) - attained)
    # a second contradiction reseeds from the last selected belief
    coord.select_action([Suggestion(1, lie2)])
    assert coord.anomalies == 2
    assert len(coord.estimated[1]) >= 1


def test_select_action_validates_the_suggestion_batch(
    tiger, tiger_views, tiger_policies
):
    coord = _coordinator(tiger, tiger_views, tiger_policies, _tracking_config())
    with pytest.raises(DimensionMismatch):
        coord.select_action([Suggestion(0, 0)])  # self-suggestion
    coord = _coordinator(tiger, tiger_views, tiger_policies, _tracking_config())
    with pytest.raises(DimensionMismatch):
        coord.select_action([Suggestion(1, 0), Suggestion(1, 0)])
    coord = _coordinator(tiger, tiger_views, tiger_policies, _tracking_config())
    with pytest.raises(DimensionMismatch):
        coord.select_action([])


def micro_dec():
    """Two states, agent 0 observes the state exactly, agent 1 is blind;
    joint action 0 stays put, action 1 jumps to state 1."""
    T = np.zeros((2, 2, 2))
    T[:, 0, :] = np.eye(2)
    T[:, 1, :] = [0.0, 1.0]
    Z = np.zeros((2, 2, 2))
    Z[:, 0, 0] = 1.0
    Z[:, 1, 1] = 1.0
    R = np.zeros((2, 2))
    joint = TabularModel(T, Z, R, 0.9, np.array([1.0, 0.0]))
    return DecModel(joint, FactoredSpaces((1, 2)), FactoredSpaces((2, 1)))


def test_impossible_own_observation_falls_back_to_prediction():
    dec = micro_dec()
    views = tuple(build_agent_view(dec, i) for i in range(2))
    stay = AlphaVectorPolicy(np.zeros((1, 2)), np.zeros(1, dtype=np.int64))
    coord = McasCoordinator(
        dec, views, (stay, stay), stay, McasConfig(), agent=0
    )
    # stayed in state 0 yet claims to have seen state 1
    coord.advance(0, own_observation=1)
    assert coord.anomalies == 1
    np.testing.assert_allclose(coord.own_belief, [1.0, 0.0], atol=1e-12)
    coord.advance(0, own_observation=0)
    assert coord.anomalies == 1


def test_a_lone_agent_coordinates_with_itself():
    T = np.zeros((2, 2, 2))
    T[:, 0, :] = np.eye(2)
    T[:, 1, :] = [0.0, 1.0]
    Z = np.zeros((2, 2, 2))
    Z[:, 0, 0] = 1.0
    Z[:, 1, 1] = 1.0
    dec = DecModel(
        TabularModel(T, Z, np.zeros((2, 2)), 0.9, np.array([1.0, 0.0])),
        FactoredSpaces((2,)),
        FactoredSpaces((2,)),
    )
    view = build_agent_view(dec, 0)
    policy = AlphaVectorPolicy(np.array([[1.0, 0.0]]), np.array([1]))
    coord = McasCoordinator(dec, (view,), (policy,), policy, McasConfig())
    action, same = mcas_step(coord, [])
    assert action == 1 and same is coord
    np.testing.assert_array_equal(coord.last_selected, [1.0, 0.0])


def test_config_validation():
    with pytest.raises(ValueError):
        McasConfig(delta_single=-1.0)
    with pytest.raises(ValueError):
        McasConfig(max_beliefs=0)
    with pytest.raises(ValueError):
        McasConfig(message_mode="broadcast")
    with pytest.raises(ValueError):
        McasConfig(combiner="product")
    with pytest.raises(dataclasses.FrozenInstanceError):
        cfg = McasConfig()
        cfg.max_beliefs = 3

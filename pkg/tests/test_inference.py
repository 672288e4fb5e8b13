import math

import numpy as np
import pytest

from conftest import line_mdp
from oracles import accrual_fractions
from mlci.gridworld import GridConfig, build_gridworld
from mlci.inference import (Hypothesis, NoCandidates, TooLarge, brute_force_best_combination,
                            eligible_constraints,
                            candidate_hypotheses, cumulative_masses, false_positive_rate,
                            greedy_iterative_inference, iteration_partition,
                            select_max_likelihood_constraint)
from mlci.maxent import (DemoSet, InfeasibleDemo, backward_pass, demo_set_log_prob, kl_empirical_model,
                         sample_trajectories)
from mlci.mdp import (ConstraintKind, ConstraintSet, MinimalConstraint as MC, Trajectory, apply_constraints,
                      augment_features, validate_trajectory)

STRAIGHT = Trajectory((0, 1, 2, 3), (1, 1, 1))


def test_demo_visiting_all_states_rules_out_state_hypotheses():
    mdp = line_mdp(horizon=4)
    hyps = candidate_hypotheses(mdp, augment_features(mdp), DemoSet([Trajectory((0, 1, 2, 3, 3), (1, 1, 1, 0))]))
    assert not any(h.demo_respecting for h in hyps if h.constraint.kind == ConstraintKind.STATE)
    jump = next(h for h in hyps if h.constraint == MC.action(2))
    assert jump.demo_respecting and jump.eliminated_mass > 0


def test_never_accruable_feature_is_respecting_with_zero_mass():
    mdp = line_mdp()
    phi = np.concatenate([mdp.features, np.zeros((4, 3, 1))], axis=2)
    mdp = mdp.replace(features=phi, reward_weights=[-1.0, 0.0], feature_names=None)
    hyps = candidate_hypotheses(mdp, augment_features(mdp), DemoSet([STRAIGHT]))
    h = next(h for h in hyps if h.constraint == MC.feature(1))
    assert h.demo_respecting and h.eliminated_mass == 0.0


def test_select_argmax_and_ties():
    a, b = MC.state(2), MC.action(0)
    assert select_max_likelihood_constraint([Hypothesis(b, 0.7, True), Hypothesis(a, 0.3, True)]).constraint == b
    assert select_max_likelihood_constraint([Hypothesis(b, 0.5, True), Hypothesis(a, 0.5, True)]).constraint == a
    assert select_max_likelihood_constraint([Hypothesis(a, 0.1, True)]).constraint == a
    with pytest.raises(NoCandidates):
        select_max_likelihood_constraint([Hypothesis(a, 0.9, False)])


def test_planted_shortcut_block_is_selected():
    # 3x3 grid, goal two cells to the right; blocking the middle of the bottom row
    cfg = GridConfig(width=3, height=3, start=(0, 0), goal=(2, 0), horizon=3, weights={"distance": -2.0},
                     true_states=[(1, 0)])
    mdp, truth = build_gridworld(cfg)
    aug = augment_features(mdp)
    true_mdp = apply_constraints(mdp, truth, aug)
    demos = sample_trajectories(true_mdp, backward_pass(true_mdp)[0], 50, seed=0)
    hyps = candidate_hypotheses(mdp, aug, demos)
    best = select_max_likelihood_constraint(hyps)
    masses = accrual_fractions(mdp, aug.indicators)
    respecting = [h for h in hyps if h.demo_respecting]
    assert best.eliminated_mass == pytest.approx(max(masses[aug.index_of(h.constraint)] for h in respecting))
    assert best.constraint == MC.state(cfg.state((1, 0)))


def test_infinite_threshold_accepts_nothing():
    mdp = line_mdp()
    res = greedy_iterative_inference(mdp, DemoSet([STRAIGHT]), math.inf)
    assert res.selected == [] and res.stop_reason == "threshold"
    assert res.rejected.iteration == 1


def test_greedy_on_line_picks_jump_first():
    mdp = line_mdp()
    res = greedy_iterative_inference(mdp, DemoSet([STRAIGHT] * 5), 0.0)
    assert res.selected[0] == MC.action(2)
    for rec in res.iterations:
        assert rec.delta_kl > 0
        assert rec.delta_kl == pytest.approx(rec.delta_log_z, abs=1e-9)
    kls = [res.initial_kl] + [r.kl_after for r in res.iterations]
    assert all(b <= a + 1e-12 for a, b in zip(kls, kls[1:]))
    # "stay" cannot be forbidden: the goal would become empty and cut the demonstration
    assert MC.action(0) in res.skipped


def test_greedy_rejects_infeasible_demo():
    with pytest.raises(InfeasibleDemo):
        greedy_iterative_inference(line_mdp(), DemoSet([Trajectory((0, 3, 3, 3), (1, 0, 0))]))
    with pytest.raises(ValueError):
        greedy_iterative_inference(line_mdp(), DemoSet([STRAIGHT]), -1.0)


def test_greedy_kinds_and_max_iters():
    mdp = line_mdp()
    res = greedy_iterative_inference(mdp, DemoSet([STRAIGHT]), 0.0, kinds=[ConstraintKind.ACTION])
    assert all(c.kind == ConstraintKind.ACTION for c in res.selected)
    res = greedy_iterative_inference(mdp, DemoSet([STRAIGHT]), 0.0, max_iters=1)
    assert len(res.selected) == 1 and res.stop_reason == "max_iters"


def test_greedy_preserves_demo_feasibility_and_likelihood():
    cfg = GridConfig(width=4, height=4, start=(0, 0), goal=(3, 0), horizon=5, weights={"distance": -1.5},
                     features={"blue": [(1, 0), (2, 0)]}, true_features=["blue"], true_actions=["up_right"])
    mdp, truth = build_gridworld(cfg)
    true_mdp = apply_constraints(mdp, truth)
    demos = sample_trajectories(true_mdp, backward_pass(true_mdp)[0], 40, seed=3)
    res = greedy_iterative_inference(mdp, demos, 0.01)
    assert res.selected
    parts = iteration_partition(mdp, res.selected)
    lls = []
    for i, z in enumerate(parts):
        m = apply_constraints(mdp, ConstraintSet(tuple(res.selected[:i])))
        assert all(validate_trajectory(m, xi) for xi in demos)
        lls.append(demo_set_log_prob(m, z, demos))
        assert kl_empirical_model(demos, m, z) == pytest.approx(
            res.initial_kl if i == 0 else res.iterations[i - 1].kl_after, abs=1e-9)
    assert all(b >= a - 1e-9 for a, b in zip(lls, lls[1:]))


def test_nominal_demos_rarely_yield_constraints():
    cfg = GridConfig(width=4, height=3, start=(0, 0), goal=(3, 0), horizon=5, weights={"distance": -1.0})
    mdp, _ = build_gridworld(cfg)
    pol, _ = backward_pass(mdp)
    accepted = [len(greedy_iterative_inference(mdp, sample_trajectories(mdp, pol, 100, seed), 0.1).selected)
                for seed in range(10)]
    assert sum(n == 0 for n in accepted) >= 7


def test_brute_force_reductions():
    mdp = line_mdp()
    demos = DemoSet([STRAIGHT])
    aug = augment_features(mdp)
    best1, m1 = brute_force_best_combination(mdp, demos, 1)
    hyps = [h for h in candidate_hypotheses(mdp, aug, demos)
            if h.constraint in set(eligible_constraints(mdp, aug, demos))]
    pick = select_max_likelihood_constraint(hyps)
    assert list(best1) == [pick.constraint] and m1 == pytest.approx(pick.eliminated_mass)
    first = greedy_iterative_inference(mdp, demos, 0.0, max_iters=1).selected
    assert list(best1) == list(first)
    every, m_all = brute_force_best_combination(mdp, demos, 50)
    respecting = {h.constraint for h in candidate_hypotheses(mdp, aug, demos) if h.demo_respecting}
    # forbidding the goal state or "stay" would empty the goal and cut the demo
    assert set(every) == respecting - {MC.state(3), MC.action(0)}
    assert set(every) == set(eligible_constraints(mdp, aug, demos))
    assert every == ConstraintSet((MC.action(2),))
    grid, _ = build_gridworld(GridConfig(width=3, height=3, start=(0, 0), goal=(2, 0), horizon=3,
                                         weights={"distance": -1.0}))
    demo = DemoSet([Trajectory((0, 1, 2, 2), (grid.action_names.index("right"),) * 2
                               + (grid.action_names.index("stay"),))])
    with pytest.raises(TooLarge):
        brute_force_best_combination(grid, demo, 1, limit=0)


def test_greedy_bound_on_small_grid():
    cfg = GridConfig(width=3, height=3, start=(0, 0), goal=(2, 2), horizon=4, weights={"distance": -0.5},
                     features={"mud": [(1, 1)]})
    mdp, _ = build_gridworld(cfg)
    demos = sample_trajectories(mdp, backward_pass(mdp)[0], 3, seed=1)
    res = greedy_iterative_inference(mdp, demos, 0.0, max_iters=3)
    cum = cumulative_masses(mdp, res)
    for i in range(1, len(cum) + 1):
        _, opt = brute_force_best_combination(mdp, demos, i)
        assert cum[i - 1] >= (1 - ((i - 1) / i) ** i) * opt - 1e-12


def test_false_positive_rate_extremes():
    mdp = line_mdp()
    truth = ConstraintSet((MC.action(2),))
    assert false_positive_rate([MC.action(2)], truth, mdp) == 0.0
    assert false_positive_rate([MC.state(1)], truth, mdp) == 1.0
    assert false_positive_rate([], truth, mdp) == 0.0
    # state 3 can only be entered by jumping from 1 or stepping from 2, so it is not implied by the truth
    assert false_positive_rate([MC.action(2), MC.state(3)], truth, mdp) == 0.5


def test_determinism():
    mdp = line_mdp()
    a = greedy_iterative_inference(mdp, DemoSet([STRAIGHT] * 3), 0.0)
    b = greedy_iterative_inference(mdp, DemoSet([STRAIGHT] * 3), 0.0)
    assert a == b

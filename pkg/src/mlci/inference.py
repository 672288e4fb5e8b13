"""Maximum likelihood constraint selection and greedy iterative inference."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Collection, Sequence

import numpy as np

from .accrual import compound_masses, feature_accrual_history
from .maxent import (DemoSet, InfeasibleDemo, PartitionValue, TimeVaryingPolicy, backward_pass,
                     kl_empirical_model, safe_log)
from .mdp import (AugmentedFeatureMap, ConstraintKind, ConstraintSet, FullyConstrained, Mdp,
                  MdpError, MinimalConstraint, accrued_features, apply_constraints,
                  augment_features, constrained_mask, stochastic_observation_model,
                  validate_trajectory)

STOP_REASONS = ("threshold", "exhausted", "max_iters", "no_positive_mass")


class NoCandidates(MdpError):
    pass


class TooLarge(MdpError):
    pass


@dataclass(frozen=True)
class Hypothesis:
    constraint: MinimalConstraint
    eliminated_mass: float
    demo_respecting: bool


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    constraint: MinimalConstraint
    eliminated_mass: float
    kl_before: float
    kl_after: float
    delta_kl: float
    delta_log_z: float  # log Z(old) - log Z(new), the same quantity computed independently


@dataclass
class InferenceResult:
    selected: list[MinimalConstraint]
    iterations: list[IterationRecord]
    stop_reason: str
    initial_kl: float
    final_kl: float
    rejected: IterationRecord | None = None  # the sub-threshold candidate that stopped the loop
    skipped: list[MinimalConstraint] = field(default_factory=list)

    @property
    def constraint_set(self) -> ConstraintSet:
        return ConstraintSet(tuple(self.selected))


def demo_accruals(aug: AugmentedFeatureMap, demos: DemoSet) -> np.ndarray:
    """Union of the accrued-indicator bitsets of all demonstrations."""
    acc = np.zeros(aug.n_phi, dtype=bool)
    for xi in demos.counts:
        acc |= accrued_features(aug, xi)
    return acc


def _kind_mask(aug: AugmentedFeatureMap, kinds: Collection[ConstraintKind] | None) -> np.ndarray:
    mask = np.zeros(aug.n_phi, dtype=bool)
    for kind in (ConstraintKind if kinds is None else kinds):
        off = aug.offset(kind)
        mask[off:off + aug.size(kind)] = True
    return mask


def candidate_hypotheses(mdp: Mdp, aug: AugmentedFeatureMap, demos: DemoSet,
                         pol: TimeVaryingPolicy | None = None) -> list[Hypothesis]:
    """Every minimal constraint, scored on ``mdp`` and checked against the demos.

    Raises:
        InfeasibleDemo: if a demonstration is infeasible on ``mdp``.
    """
    for i, xi in enumerate(demos):
        f = validate_trajectory(mdp, xi)
        if not f:
            raise InfeasibleDemo(i, f.violation)
    if pol is None:
        pol, _ = backward_pass(mdp)
    masses = feature_accrual_history(mdp, aug, pol).final
    violated = demo_accruals(aug, demos)
    return [Hypothesis(aug.constraint_at(i), float(masses[i]), not violated[i])
            for i in range(aug.n_phi)]


def select_max_likelihood_constraint(hyps: Sequence[Hypothesis], mdp: Mdp | None = None,
                                     pol: TimeVaryingPolicy | None = None,
                                     aug: AugmentedFeatureMap | None = None) -> Hypothesis:
    """Demo-respecting hypothesis with the largest eliminated mass.

    When ``mdp`` and ``pol`` are given the masses are recomputed on that MDP.
    Ties go to the earliest constraint in canonical order.

    Raises:
        NoCandidates: if no hypothesis is demo-respecting.
    """
    pool = sorted((h for h in hyps if h.demo_respecting), key=lambda h: h.constraint)
    if not pool:
        raise NoCandidates("no demo-respecting hypothesis")
    if mdp is not None and pol is not None:
        aug = aug if aug is not None else augment_features(mdp)
        masses = feature_accrual_history(mdp, aug, pol).final
        pool = [Hypothesis(h.constraint, float(masses[aug.index_of(h.constraint)]), True)
                for h in pool]
    best = int(np.argmax([h.eliminated_mass for h in pool]))
    return pool[best]


def _scoring_model(mdp: Mdp, current: Mdp, selected: ConstraintSet, pol: TimeVaryingPolicy,
                   aug: AugmentedFeatureMap) -> tuple[Mdp, TimeVaryingPolicy]:
    """MDP and policy under which candidate masses are computed.

    On stochastic MDPs the apparent dynamics of demonstrations are used:
    transitions into empty states are removed and the policy is reweighted.
    """
    if current.is_deterministic or len(selected) == 0 or not current.empty_states().any():
        return current, pol
    obs = stochastic_observation_model(mdp, selected, aug, drop_blocked=True)
    return obs.mdp, TimeVaryingPolicy(safe_log(obs.transform_policy(pol.probs)), pol.start)


def _demos_feasible(mdp: Mdp, demos: DemoSet) -> bool:
    return all(validate_trajectory(mdp, xi) for xi in demos.counts)


def greedy_iterative_inference(mdp: Mdp, demos: DemoSet, d_kl_threshold: float = 0.1,
                               max_iters: int | None = None,
                               kinds: Collection[ConstraintKind] | None = None,
                               aug: AugmentedFeatureMap | None = None) -> InferenceResult:
    """Grow a constraint set greedily until the KL improvement drops to the threshold.

    Each iteration rescores all remaining demo-respecting candidates on the
    currently constrained MDP, picks the one eliminating the most probability
    mass and accepts it only if ``KL(P_D || P_old) - KL(P_D || P_new)`` is
    strictly greater than ``d_kl_threshold``.

    Args:
        mdp: nominal MDP.
        demos: demonstrations, all feasible on ``mdp``.
        d_kl_threshold: minimum KL reduction for accepting a constraint.
        max_iters: iteration cap, defaults to the number of minimal constraints.
        kinds: restrict the hypothesis space to these constraint kinds.
        aug: precomputed augmented feature map of ``mdp``.

    Raises:
        InfeasibleDemo: if a demonstration is infeasible on the nominal MDP.
    """
    if d_kl_threshold < 0:
        raise ValueError("d_kl_threshold must be >= 0")
    aug = aug if aug is not None else augment_features(mdp)
    for i, xi in enumerate(demos):
        f = validate_trajectory(mdp, xi)
        if not f:
            raise InfeasibleDemo(i, f.violation)
    max_iters = aug.n_phi if max_iters is None else max_iters

    eligible = ~demo_accruals(aug, demos) & _kind_mask(aug, kinds)
    selected = ConstraintSet()
    current = mdp
    pol, z = backward_pass(current)
    kl = kl_empirical_model(demos, current, z)
    result = InferenceResult([], [], "max_iters", kl, kl)

    for it in range(1, max_iters + 1):
        score_mdp, score_pol = _scoring_model(mdp, current, selected, pol, aug)
        masses = feature_accrual_history(score_mdp, aug, score_pol).final
        choice = None
        while True:
            live = eligible & (masses > 0)
            if not eligible.any():
                result.stop_reason = "exhausted"
                break
            if not live.any():
                result.stop_reason = "no_positive_mass"
                break
            idx = int(np.argmax(np.where(live, masses, -1.0)))
            cand = aug.constraint_at(idx)
            trial = selected.union([cand])
            try:
                trial_mdp = apply_constraints(mdp, trial, aug)
                ok = _demos_feasible(trial_mdp, demos)
            except FullyConstrained:
                ok = False
            if ok:
                choice = (idx, cand, trial, trial_mdp)
                break
            # the empty-state closure would cut a demonstration: never eligible again
            eligible[idx] = False
            result.skipped.append(cand)
        if choice is None:
            break
        idx, cand, trial, trial_mdp = choice
        new_pol, new_z = backward_pass(trial_mdp)
        new_kl = kl_empirical_model(demos, trial_mdp, new_z)
        rec = IterationRecord(it, cand, float(masses[idx]), kl, new_kl, kl - new_kl,
                              z.log_Z - new_z.log_Z)
        if not rec.delta_kl > d_kl_threshold:
            result.stop_reason = "threshold"
            result.rejected = rec
            break
        result.iterations.append(rec)
        result.selected.append(cand)
        selected, current, pol, z, kl = trial, trial_mdp, new_pol, new_z, new_kl
        eligible[idx] = False
        result.final_kl = kl
    return result


# ---------------------------------------------------------------------------
# Oracles and metrics
# ---------------------------------------------------------------------------


def demo_respecting_constraints(aug: AugmentedFeatureMap, demos: DemoSet,
                                kinds: Collection[ConstraintKind] | None = None) -> list[MinimalConstraint]:
    ok = ~demo_accruals(aug, demos) & _kind_mask(aug, kinds)
    return [aug.constraint_at(i) for i in np.flatnonzero(ok)]


def eligible_constraints(mdp: Mdp, aug: AugmentedFeatureMap, demos: DemoSet,
                         kinds: Collection[ConstraintKind] | None = None) -> list[MinimalConstraint]:
    """Demo-respecting constraints whose own empty-state closure keeps every demo feasible.

    This is the pool greedy inference draws from on its first iteration.
    """
    out = []
    for c in demo_respecting_constraints(aug, demos, kinds):
        try:
            ok = _demos_feasible(apply_constraints(mdp, ConstraintSet((c,)), aug), demos)
        except FullyConstrained:
            ok = False
        if ok:
            out.append(c)
    return out


def brute_force_best_combination(mdp: Mdp, demos: DemoSet, n_c: int,
                                 pol: TimeVaryingPolicy | None = None,
                                 aug: AugmentedFeatureMap | None = None,
                                 kinds: Collection[ConstraintKind] | None = None,
                                 limit: int = 10 ** 6,
                                 batch: int = 512) -> tuple[ConstraintSet, float]:
    """Best union of ``n_c`` eligible minimal constraints by exhaustive search.

    Candidates are those of :func:`eligible_constraints`. Masses are measured
    on ``mdp`` under ``pol`` (its MaxEnt policy by default).
    Ties go to the first combination in canonical order.

    Raises:
        TooLarge: if the number of combinations exceeds ``limit``.
    """
    aug = aug if aug is not None else augment_features(mdp)
    if pol is None:
        pol, _ = backward_pass(mdp)
    cands = eligible_constraints(mdp, aug, demos, kinds)
    if n_c >= len(cands):
        best = ConstraintSet(tuple(cands))
        return best, float(compound_masses(mdp, pol, [best], aug)[0])
    total = math.comb(len(cands), n_c)
    if total > limit:
        raise TooLarge(f"{total} combinations exceed the limit of {limit}")
    best_set, best_mass = None, -1.0
    combos = itertools.combinations(cands, n_c)
    while True:
        chunk = [ConstraintSet(c) for c in itertools.islice(combos, batch)]
        if not chunk:
            break
        masses = compound_masses(mdp, pol, chunk, aug)
        j = int(np.argmax(masses))
        if masses[j] > best_mass:
            best_set, best_mass = chunk[j], float(masses[j])
    return best_set, best_mass


def cumulative_masses(mdp: Mdp, result: InferenceResult,
                      pol: TimeVaryingPolicy | None = None,
                      aug: AugmentedFeatureMap | None = None) -> np.ndarray:
    """Nominal mass eliminated by the first ``i`` selected constraints, ``i = 1..n``."""
    aug = aug if aug is not None else augment_features(mdp)
    if pol is None:
        pol, _ = backward_pass(mdp)
    prefixes = [ConstraintSet(tuple(result.selected[:i])) for i in range(1, len(result.selected) + 1)]
    return compound_masses(mdp, pol, prefixes, aug)


def is_true_constraint(mdp: Mdp, c: MinimalConstraint, truth: ConstraintSet,
                       aug: AugmentedFeatureMap | None = None) -> bool:
    """Whether every nominal pair forbidden by ``c`` is forbidden in the true system."""
    aug = aug if aug is not None else augment_features(mdp)
    true_pairs = constrained_mask(mdp, truth, aug)
    mine = aug.member_mask(c) & mdp.available
    return bool(np.all(true_pairs[mine]))


def false_positive_rate(result: InferenceResult | Sequence[MinimalConstraint], truth: ConstraintSet,
                        mdp: Mdp, aug: AugmentedFeatureMap | None = None) -> float:
    """Fraction of selected constraints that are not constraints of the true system."""
    selected = result.selected if isinstance(result, InferenceResult) else list(result)
    if not selected:
        return 0.0
    aug = aug if aug is not None else augment_features(mdp)
    wrong = sum(not is_true_constraint(mdp, c, truth, aug) for c in selected)
    return wrong / len(selected)


def iteration_partition(mdp: Mdp, selected: Sequence[MinimalConstraint],
                        aug: AugmentedFeatureMap | None = None) -> list[PartitionValue]:
    """Partition values of the nominal MDP and after each prefix of ``selected``."""
    out = [backward_pass(mdp)[1]]
    for i in range(1, len(selected) + 1):
        out.append(backward_pass(apply_constraints(mdp, ConstraintSet(tuple(selected[:i])), aug))[1])
    return out

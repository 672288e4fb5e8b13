"""Per-instance invariant checks shared by the property tests and the acceptance run."""

from __future__ import annotations

import numpy as np

from oracles import random_grid, random_mdp
from mlci.accrual import feature_accrual_history
from mlci.inference import greedy_iterative_inference
from mlci.maxent import NoFeasibleTrajectory, backward_pass, kl_empirical_model, sample_trajectories
from mlci.mdp import (ConstraintSet, FullyConstrained, apply_constraints, augment_features,
                      validate_trajectory)

TOL = 1e-9


def random_instance(seed: int):
    """A random small MDP plus demonstrations drawn from a randomly constrained copy of it."""
    rng = np.random.default_rng(seed)
    if seed % 3 == 0:
        mdp, _ = random_grid(rng, slip=0.15 if seed % 2 else 0.0)
    else:
        mdp = random_mdp(rng)
    aug = augment_features(mdp)
    truth = ConstraintSet()
    for _ in range(10):
        pick = aug.constraint_at(int(rng.integers(aug.n_phi)))
        try:
            true_mdp = apply_constraints(mdp, ConstraintSet((pick,)), aug)
            backward_pass(true_mdp)
        except (FullyConstrained, NoFeasibleTrajectory):
            continue
        truth = ConstraintSet((pick,))
        break
    true_mdp = apply_constraints(mdp, truth, aug)
    pol, _ = backward_pass(true_mdp)
    demos = sample_trajectories(true_mdp, pol, int(rng.integers(1, 21)), seed)
    threshold = float(rng.choice([0.0, 0.03, 0.1]))
    return mdp, aug, demos, threshold


def check_instance(seed: int) -> list[str]:
    """Return a list of violated invariants (empty when everything holds)."""
    bad = []
    mdp, aug, demos, threshold = random_instance(seed)

    pol, z = backward_pass(mdp)
    p = pol.probs
    live = mdp.available.any(axis=1)
    if np.abs(p.sum(axis=2)[:, live] - 1).max(initial=0) > TOL:
        bad.append("policy rows do not sum to 1")
    if np.any(p[:, ~mdp.available] != 0):
        bad.append("policy puts mass off the action sets")

    hist = feature_accrual_history(mdp, aug, pol)
    if hist.phi.min() < -TOL or hist.phi.max() > 1 + TOL:
        bad.append("accrual outside [0, 1]")
    if np.any(np.diff(hist.phi, axis=1) < -TOL):
        bad.append("accrual not monotone in time")
    if np.abs(hist.visitation.sum(axis=0) - 1).max() > TOL:
        bad.append("visitation does not sum to 1")

    res = greedy_iterative_inference(mdp, demos, threshold, aug=aug)
    kl_prev, log_z_prev = kl_empirical_model(demos, mdp, z), z.log_Z
    if abs(kl_prev - res.initial_kl) > TOL:
        bad.append("initial KL mismatch")
    for i, rec in enumerate(res.iterations, start=1):
        m = apply_constraints(mdp, ConstraintSet(tuple(res.selected[:i])), aug)
        if not all(validate_trajectory(m, xi) for xi in demos.counts):
            bad.append(f"demo infeasible after iteration {i}")
            break
        _, zi = backward_pass(m)
        kl = kl_empirical_model(demos, m, zi)
        if kl > kl_prev + TOL:
            bad.append(f"KL increased at iteration {i}")
        if abs((kl_prev - kl) - (log_z_prev - zi.log_Z)) > TOL:
            bad.append(f"delta KL != delta log Z at iteration {i}")
        if abs(rec.delta_kl - (kl_prev - kl)) > TOL or not rec.delta_kl > threshold:
            bad.append(f"iteration record {i} inconsistent")
        kl_prev, log_z_prev = kl, zi.log_Z
    return bad

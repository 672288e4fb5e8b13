"""Finite-horizon maximum entropy trajectory distribution.

All probability arithmetic happens in log-space; probabilities are only
materialized at API boundaries (``TimeVaryingPolicy.probs`` etc.).
"""

from __future__ import annotations

import collections
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .mdp import Mdp, MdpError, Trajectory, Violation, trajectory_reward, validate_trajectory

NEG_INF = -np.inf


class NoFeasibleTrajectory(MdpError):
    pass


class InfeasibleDemo(MdpError):
    def __init__(self, index: int, violation: Violation | None):
        self.index = index
        self.violation = violation
        super().__init__(f"demonstration {index} is infeasible: {violation}")


class Divergence(MdpError):
    def __init__(self, message, weights=None, history=None):
        super().__init__(message)
        self.weights = weights
        self.history = history or []


def logsumexp(x: np.ndarray, axis=None) -> np.ndarray:
    """Log-sum-exp that returns ``-inf`` (without warnings) for all ``-inf`` slices."""
    x = np.asarray(x, dtype=float)
    m = np.max(x, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m_safe), axis=axis, keepdims=True)) + m_safe
    if axis is None:
        return out.reshape(())[()]
    return np.squeeze(out, axis=axis)


def safe_log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


@dataclass(frozen=True, eq=False)
class TimeVaryingPolicy:
    """``log pi(a | s, t)`` with shape ``(T, S, A)``; ``-inf`` off the action sets.

    ``start`` is the distribution of the first state. The backward pass sets
    it to ``D0(s) exp(V_0(s)) / Z``, which is what the trajectory distribution
    implies once several initial states are possible; ``None`` means the MDP's
    own initial distribution.
    """

    log_probs: np.ndarray
    start: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.log_probs.shape[0]

    @cached_property
    def probs(self) -> np.ndarray:
        p = np.exp(self.log_probs)
        p.setflags(write=False)
        return p

    def start_distribution(self, mdp: Mdp) -> np.ndarray:
        return mdp.initial if self.start is None else self.start


@dataclass(frozen=True, eq=False)
class PartitionValue:
    """``log Z`` and the per-time soft state values ``log Z_{s,t}``, shape ``(T+1, S)``."""

    log_Z: float
    log_state_values: np.ndarray


def backward_pass(mdp: Mdp) -> tuple[TimeVaryingPolicy, PartitionValue]:
    """Soft value recursion over the horizon.

    ``Q_t(s, a) = beta gamma^t R(s, a) + log sum_s' P(s'|s, a) exp V_{t+1}(s')``
    and ``V_t(s) = logsumexp_a Q_t(s, a)``, with ``V_T = 0`` on non-empty
    states. The policy is ``exp(Q_t - V_t)``.

    Raises:
        NoFeasibleTrajectory: if no initial state has a feasible continuation.
    """
    T, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    avail = mdp.available
    logP = safe_log(mdp.transitions)
    scaled = mdp.rationality * mdp.reward

    V = np.empty((T + 1, S))
    V[T] = np.where(avail.any(axis=1), 0.0, NEG_INF)
    logpi = np.empty((T, S, A))
    n_avail = np.maximum(avail.sum(axis=1, keepdims=True), 1)
    uniform = np.where(avail, -np.log(n_avail), NEG_INF)
    for t in range(T - 1, -1, -1):
        cont = logsumexp(logP + V[t + 1][None, None, :], axis=2)
        Q = np.where(avail, scaled * mdp.discount ** t + cont, NEG_INF)
        V[t] = logsumexp(Q, axis=1)
        finite = np.isfinite(V[t])
        with np.errstate(invalid="ignore"):
            logpi[t] = np.where(finite[:, None], Q - V[t][:, None], uniform)
    log_Z = float(logsumexp(safe_log(mdp.initial) + V[0]))
    if not np.isfinite(log_Z):
        raise NoFeasibleTrajectory("every initial state is infeasible under the constraints")
    start = np.exp(safe_log(mdp.initial) + V[0] - log_Z)
    for arr in (logpi, V, start):
        arr.setflags(write=False)
    return TimeVaryingPolicy(logpi, start), PartitionValue(log_Z, V)


# ---------------------------------------------------------------------------
# Demonstrations and likelihoods
# ---------------------------------------------------------------------------


class DemoSet(Sequence[Trajectory]):
    """Ordered list of demonstrations plus its empirical distribution."""

    def __init__(self, trajectories: Iterable[Trajectory]):
        self.trajectories = tuple(trajectories)
        if not self.trajectories:
            raise ValueError("a demonstration set needs at least one trajectory")

    def __len__(self):
        return len(self.trajectories)

    def __getitem__(self, i):
        return self.trajectories[i]

    def __eq__(self, other):
        return isinstance(other, DemoSet) and self.trajectories == other.trajectories

    def __repr__(self):
        return f"DemoSet(N={len(self)}, distinct={len(self.counts)})"

    @cached_property
    def counts(self) -> dict[Trajectory, int]:
        """Distinct trajectories in first-seen order with their counts."""
        return dict(collections.Counter(self.trajectories))

    @property
    def empirical(self) -> dict[Trajectory, float]:
        n = len(self)
        return {xi: c / n for xi, c in self.counts.items()}


def _log_prob_unchecked(mdp: Mdp, z: PartitionValue, xi: Trajectory) -> float:
    s = np.asarray(xi.states)
    a = np.asarray(xi.actions)
    log_dyn = safe_log(mdp.initial[s[0]]) + safe_log(mdp.transitions[s[:-1], a, s[1:]]).sum()
    return float(mdp.rationality * trajectory_reward(mdp, xi) + log_dyn - z.log_Z)


def trajectory_log_prob(mdp: Mdp, z: PartitionValue, xi: Trajectory) -> float:
    """``beta R(xi) - log Z`` plus the log initial/transition probabilities.

    The dynamics terms vanish for a deterministic MDP with a single start
    state. Returns ``-inf`` for an infeasible trajectory; use
    :func:`validate_trajectory` for the reason.
    """
    if not validate_trajectory(mdp, xi):
        return NEG_INF
    return _log_prob_unchecked(mdp, z, xi)


def _check_demos(mdp: Mdp, demos: Iterable[Trajectory]):
    for i, xi in enumerate(demos):
        f = validate_trajectory(mdp, xi)
        if not f:
            raise InfeasibleDemo(i, f.violation)


def demo_set_log_prob(mdp: Mdp, z: PartitionValue, demos: DemoSet) -> float:
    """Log-likelihood of independent demonstrations."""
    _check_demos(mdp, demos)
    return float(sum(c * _log_prob_unchecked(mdp, z, xi) for xi, c in demos.counts.items()))


def kl_empirical_model(demos: DemoSet, mdp: Mdp, z: PartitionValue) -> float:
    """``KL(P_D || P_M)`` summed over the demonstrated trajectories."""
    _check_demos(mdp, demos.counts)
    total = 0.0
    for xi, p in demos.empirical.items():
        total += p * (np.log(p) - _log_prob_unchecked(mdp, z, xi))
    return float(total)


def _alive(mdp: Mdp) -> np.ndarray:
    """``(T+1, S)`` mask of states from which a feasible completion exists at time ``t``."""
    reach = mdp.available[:, :, None] & (mdp.transitions > 0)
    alive = np.empty((mdp.horizon + 1, mdp.n_states), dtype=bool)
    alive[-1] = mdp.available.any(axis=1)
    for t in range(mdp.horizon - 1, -1, -1):
        alive[t] = (reach & alive[t + 1][None, None, :]).any(axis=(1, 2))
    return alive


def sample_trajectories(mdp: Mdp, pol: TimeVaryingPolicy, n: int, seed: int = 0) -> DemoSet:
    """Draw ``n`` trajectories; trajectory ``i`` uses its own spawned RNG stream.

    Next states are drawn from ``P(. | s, a)`` restricted to states that still
    admit a feasible completion, so a stochastic step into an empty state is
    never observed. On deterministic MDPs this restriction is inactive.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    T, S = mdp.horizon, mdp.n_states
    if pol.horizon != T:
        raise ValueError("policy horizon does not match the MDP")
    children = np.random.SeedSequence(seed).spawn(n)
    u = np.stack([np.random.default_rng(c).random(2 * T + 1) for c in children])

    def draw(p, uu):
        cum = np.cumsum(p, axis=1)
        idx = (cum <= (uu * cum[:, -1])[:, None]).sum(axis=1)
        # guard against round-off landing on a zero-probability tail entry
        last_pos = p.shape[1] - 1 - np.argmax(p[:, ::-1] > 0, axis=1)
        return np.minimum(idx, last_pos)

    states = np.empty((n, T + 1), dtype=int)
    actions = np.empty((n, T), dtype=int)
    states[:, 0] = draw(np.broadcast_to(pol.start_distribution(mdp), (n, S)), u[:, 0])
    probs = pol.probs
    alive = _alive(mdp)
    for t in range(T):
        s = states[:, t]
        actions[:, t] = draw(probs[t, s], u[:, 2 * t + 1])
        states[:, t + 1] = draw(mdp.transitions[s, actions[:, t]] * alive[t + 1], u[:, 2 * t + 2])
    return DemoSet(Trajectory(tuple(states[i]), tuple(actions[i])) for i in range(n))


# ---------------------------------------------------------------------------
# MaxEnt IRL for the nominal reward
# ---------------------------------------------------------------------------


def expected_feature_counts(mdp: Mdp, pol: TimeVaryingPolicy) -> np.ndarray:
    """Expected discounted feature sums ``E[sum_t gamma^t phi(s_t, a_t)]``."""
    D = np.array(pol.start_distribution(mdp))
    total = np.zeros(mdp.n_features)
    probs = pol.probs
    for t in range(mdp.horizon):
        sa = D[:, None] * probs[t]
        total += mdp.discount ** t * np.einsum("sa,sak->k", sa, mdp.features)
        D = np.einsum("sa,sap->p", sa, mdp.transitions)
    return total


def empirical_feature_counts(mdp: Mdp, demos: DemoSet) -> np.ndarray:
    total = np.zeros(mdp.n_features)
    for xi, c in demos.counts.items():
        s = np.asarray(xi.states[:-1])
        a = np.asarray(xi.actions)
        disc = mdp.discount ** np.arange(len(xi))
        total += c * (disc[:, None] * mdp.features[s, a]).sum(axis=0)
    return total / len(demos)


def learn_reward_weights(mdp: Mdp, demos: DemoSet, step_size: float = 0.1,
                         iterations: int = 100, return_history: bool = False,
                         patience: int = 10):
    """Plain gradient ascent on the demonstration log-likelihood.

    The reward of ``mdp`` is ignored; weights start at zero. The gradient is
    empirical minus expected feature counts.

    Returns:
        The learned weights, or ``(weights, history)`` with one
        ``{"iteration", "log_likelihood", "grad_norm"}`` entry per step when
        ``return_history`` is set.

    Raises:
        Divergence: if the log-likelihood drops for ``patience`` consecutive steps.
    """
    _check_demos(mdp, demos)
    w = np.zeros(mdp.n_features)
    emp = empirical_feature_counts(mdp, demos)
    history = []
    prev = None
    drops = 0
    for it in range(iterations):
        m = mdp.replace(reward_weights=w, reward_table=None)
        pol, z = backward_pass(m)
        ll = demo_set_log_prob(m, z, demos)
        grad = emp - expected_feature_counts(m, pol)
        history.append({"iteration": it, "log_likelihood": ll,
                        "grad_norm": float(np.linalg.norm(grad))})
        if prev is not None and ll < prev:
            drops += 1
            if drops >= patience:
                raise Divergence(f"log-likelihood decreased for {patience} consecutive steps",
                                 w.copy(), history)
        else:
            drops = 0
        prev = ll
        w = w + step_size * grad
    return (w, history) if return_history else w

"""Tabular MDP data model, augmented indicator features and constraint application.

States and actions are integer indices. Transitions are stored as a dense
``(S, A, S)`` array; availability of actions is a boolean ``(S, A)`` mask.
A trajectory with horizon ``T`` visits ``T + 1`` states and takes ``T``
actions; the final state takes no action but must not be an empty state.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

PROB_TOL = 1e-9


class MdpError(Exception):
    """Base class for errors raised by this package."""


class InvalidMdp(MdpError):
    pass


class FullyConstrained(MdpError):
    """No initial state keeps a non-empty action set."""


class TotallyBlocked(MdpError):
    """An available action reaches empty states with probability one."""


class DimensionMismatch(MdpError):
    pass


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite-horizon tabular MDP with a linear (or tabulated) reward.

    Attributes:
        transitions: ``(S, A, S)`` array of ``P(s' | s, a)``. Rows of
            unavailable actions are ignored.
        available: ``(S, A)`` boolean mask, the per-state action sets.
        initial: ``(S,)`` initial state distribution.
        features: ``(S, A, k)`` non-negative feature values.
        reward_weights: ``(k,)`` weights, ``R(s, a) = w . phi(s, a)``.
        horizon: number of decision steps ``T``.
        discount: ``gamma`` in (0, 1].
        rationality: ``beta >= 0``, multiplies the reward everywhere.
        reward_table: optional explicit ``(S, A)`` reward overriding the
            linear form.
        goal_states: absorbing states (informational).
    """

    transitions: np.ndarray
    available: np.ndarray
    initial: np.ndarray
    features: np.ndarray
    reward_weights: np.ndarray
    horizon: int
    discount: float = 1.0
    rationality: float = 1.0
    reward_table: np.ndarray | None = None
    goal_states: frozenset[int] = frozenset()
    state_names: tuple[str, ...] | None = None
    action_names: tuple[str, ...] | None = None
    feature_names: tuple[str, ...] | None = None
    grid_shape: tuple[int, int] | None = None  # (width, height) for rendering

    def __post_init__(self):
        for name in ("transitions", "initial", "features", "reward_weights"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        avail = np.array(self.available, dtype=bool)
        avail.setflags(write=False)
        object.__setattr__(self, "available", avail)
        if self.reward_table is not None:
            rt = np.array(self.reward_table, dtype=float)
            rt.setflags(write=False)
            object.__setattr__(self, "reward_table", rt)
        object.__setattr__(self, "goal_states", frozenset(int(s) for s in self.goal_states))
        object.__setattr__(self, "horizon", int(self.horizon))
        self._check()

    def _check(self):
        S, A = self.available.shape
        if self.transitions.shape != (S, A, S):
            raise InvalidMdp(f"transitions shape {self.transitions.shape} != {(S, A, S)}")
        if self.initial.shape != (S,):
            raise InvalidMdp("initial distribution has wrong length")
        if self.features.ndim != 3 or self.features.shape[:2] != (S, A):
            raise InvalidMdp(f"features must have shape (S, A, k), got {self.features.shape}")
        if self.reward_weights.shape != (self.features.shape[2],):
            raise InvalidMdp("reward_weights length must equal the number of features")
        if self.reward_table is not None and self.reward_table.shape != (S, A):
            raise InvalidMdp("reward_table must have shape (S, A)")
        if np.any(self.features < 0):
            raise InvalidMdp("feature values must be non-negative")
        if np.any(self.transitions < 0) or np.any(self.initial < 0):
            raise InvalidMdp("probabilities must be non-negative")
        if abs(self.initial.sum() - 1.0) > PROB_TOL:
            raise InvalidMdp(f"initial distribution sums to {self.initial.sum()}")
        row_sums = self.transitions.sum(axis=2)
        bad = self.available & (np.abs(row_sums - 1.0) > PROB_TOL)
        if bad.any():
            s, a = map(int, np.argwhere(bad)[0])
            raise InvalidMdp(f"P(.|s={s}, a={a}) sums to {row_sums[s, a]}")
        if self.horizon < 1:
            raise InvalidMdp("horizon must be >= 1")
        if not 0.0 < self.discount <= 1.0:
            raise InvalidMdp("discount must lie in (0, 1]")
        if self.rationality < 0:
            raise InvalidMdp("rationality must be >= 0")
        for names, n in ((self.state_names, S), (self.action_names, A),
                         (self.feature_names, self.n_features)):
            if names is not None and len(names) != n:
                raise InvalidMdp("name list length does not match dimension")

    @property
    def n_states(self) -> int:
        return self.available.shape[0]

    @property
    def n_actions(self) -> int:
        return self.available.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[2]

    @cached_property
    def reward(self) -> np.ndarray:
        """``(S, A)`` reward table (without the rationality scale)."""
        if self.reward_table is not None:
            return self.reward_table
        r = self.features @ self.reward_weights
        r.setflags(write=False)
        return r

    @cached_property
    def is_deterministic(self) -> bool:
        P = self.transitions[self.available]
        return bool(np.all((P == 0) | (P == 1)))

    def replace(self, **changes) -> "Mdp":
        return dataclasses.replace(self, **changes)

    def empty_states(self) -> np.ndarray:
        """Boolean ``(S,)`` mask of states with no available action."""
        return ~self.available.any(axis=1)


# ---------------------------------------------------------------------------
# Augmented indicator features
# ---------------------------------------------------------------------------


class ConstraintKind(enum.IntEnum):
    # Values give the canonical order: features, then states, then actions.
    FEATURE = 0
    STATE = 1
    ACTION = 2


@dataclass(frozen=True, order=True)
class MinimalConstraint:
    """Forbids one feature, state or action."""

    kind: ConstraintKind
    index: int

    def __post_init__(self):
        object.__setattr__(self, "kind", ConstraintKind(self.kind))
        object.__setattr__(self, "index", int(self.index))

    @classmethod
    def state(cls, index: int) -> "MinimalConstraint":
        return cls(ConstraintKind.STATE, index)

    @classmethod
    def action(cls, index: int) -> "MinimalConstraint":
        return cls(ConstraintKind.ACTION, index)

    @classmethod
    def feature(cls, index: int) -> "MinimalConstraint":
        return cls(ConstraintKind.FEATURE, index)

    def __str__(self):
        return f"{self.kind.name.lower()}:{self.index}"


@dataclass(frozen=True, eq=False)
class AugmentedFeatureMap:
    """Binary indicators per (s, a): native features, then states, then actions."""

    indicators: np.ndarray  # (S, A, n_phi) bool
    n_native: int

    @property
    def n_states(self) -> int:
        return self.indicators.shape[0]

    @property
    def n_actions(self) -> int:
        return self.indicators.shape[1]

    @property
    def n_phi(self) -> int:
        return self.indicators.shape[2]

    def offset(self, kind: ConstraintKind) -> int:
        return {ConstraintKind.FEATURE: 0,
                ConstraintKind.STATE: self.n_native,
                ConstraintKind.ACTION: self.n_native + self.n_states}[kind]

    def size(self, kind: ConstraintKind) -> int:
        return {ConstraintKind.FEATURE: self.n_native,
                ConstraintKind.STATE: self.n_states,
                ConstraintKind.ACTION: self.n_actions}[kind]

    def index_of(self, c: MinimalConstraint) -> int:
        if not 0 <= c.index < self.size(c.kind):
            raise IndexError(f"{c} out of range")
        return self.offset(c.kind) + c.index

    def constraint_at(self, i: int) -> MinimalConstraint:
        if not 0 <= i < self.n_phi:
            raise IndexError(f"augmented index {i} out of range [0, {self.n_phi})")
        for kind in ConstraintKind:
            off = self.offset(kind)
            if i < off + self.size(kind):
                return MinimalConstraint(kind, i - off)
        raise AssertionError("unreachable")

    def constraints(self) -> list[MinimalConstraint]:
        """All minimal constraints in canonical order."""
        return [self.constraint_at(i) for i in range(self.n_phi)]

    def member_mask(self, c: MinimalConstraint) -> np.ndarray:
        """``(S, A)`` mask of the pairs forbidden by ``c``."""
        return self.indicators[:, :, self.index_of(c)]


def augment_features(mdp: Mdp) -> AugmentedFeatureMap:
    S, A, k = mdp.n_states, mdp.n_actions, mdp.n_features
    ind = np.zeros((S, A, k + S + A), dtype=bool)
    ind[:, :, :k] = mdp.features > 0
    ind[:, :, k:k + S] = np.eye(S, dtype=bool)[:, None, :]
    ind[:, :, k + S:] = np.eye(A, dtype=bool)[None, :, :]
    ind.setflags(write=False)
    return AugmentedFeatureMap(ind, k)


# ---------------------------------------------------------------------------
# Constraint sets and constrained MDPs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstraintSet:
    """Union of minimal constraints, kept in canonical order without duplicates."""

    constraints: tuple[MinimalConstraint, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "constraints", tuple(sorted(set(self.constraints))))

    def __iter__(self):
        return iter(self.constraints)

    def __len__(self):
        return len(self.constraints)

    def __contains__(self, c):
        return c in self.constraints

    def union(self, *others: Iterable[MinimalConstraint]) -> "ConstraintSet":
        items = list(self.constraints)
        for o in others:
            items.extend([o] if isinstance(o, MinimalConstraint) else o)
        return ConstraintSet(tuple(items))

    def member_mask(self, aug: AugmentedFeatureMap) -> np.ndarray:
        """``(S, A)`` mask of the pairs in the union of member sets."""
        mask = np.zeros((aug.n_states, aug.n_actions), dtype=bool)
        for c in self.constraints:
            mask |= aug.member_mask(c)
        return mask


def empty_state_closure(mdp: Mdp, removed: np.ndarray) -> np.ndarray:
    """Pairs added by recursively forbidding moves into empty states.

    A pair is added when some single successor state is empty and is reached
    with probability one. Iterates to a fixed point.

    Args:
        mdp: the nominal MDP.
        removed: ``(S, A)`` mask of pairs already forbidden.

    Returns:
        ``(S, A)`` mask of the closure pairs (disjoint from ``removed``).
    """
    avail = mdp.available & ~removed
    certain = mdp.transitions >= 1.0 - PROB_TOL
    closure = np.zeros_like(avail)
    while True:
        empty = ~avail.any(axis=1)
        into_empty = avail & (certain & empty[None, None, :]).any(axis=2)
        if not into_empty.any():
            return closure
        closure |= into_empty
        avail &= ~into_empty


def constrained_mask(mdp: Mdp, c: ConstraintSet, aug: AugmentedFeatureMap | None = None) -> np.ndarray:
    """All pairs forbidden by ``c`` including the empty-state closure."""
    aug = aug if aug is not None else augment_features(mdp)
    direct = c.member_mask(aug) & mdp.available
    return direct | empty_state_closure(mdp, direct)


def apply_constraints(mdp: Mdp, c: ConstraintSet, aug: AugmentedFeatureMap | None = None) -> Mdp:
    """Return the constrained MDP; the input is left untouched.

    Raises:
        FullyConstrained: if every initial state ends up with no action.
    """
    if len(c) == 0:
        return mdp
    avail = mdp.available & ~constrained_mask(mdp, c, aug)
    start_ok = avail.any(axis=1) & (mdp.initial > 0)
    if not start_ok.any():
        raise FullyConstrained("no initial state keeps an available action")
    return mdp.replace(available=avail)


@dataclass(frozen=True, eq=False)
class ObservationModel:
    """Apparent dynamics of demonstrations on a stochastic constrained MDP."""

    mdp: Mdp  # constrained, with transitions renormalized away from empty states
    empty: np.ndarray  # (S,) mask of empty states
    empty_mass: np.ndarray  # (S, A) probability of landing in an empty state

    def transform_policy(self, policy: np.ndarray) -> np.ndarray:
        """Observed policy: reweight by the probability of not landing in an empty state.

        Args:
            policy: ``(T, S, A)`` action probabilities of the acting agent.
        """
        avail = self.mdp.available
        w = np.asarray(policy) * np.where(avail, 1.0 - self.empty_mass, 0.0)[None]
        tot = w.sum(axis=2, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(tot > 0, w / tot, 0.0)
        return out


def stochastic_observation_model(mdp: Mdp, c: ConstraintSet,
                                 aug: AugmentedFeatureMap | None = None,
                                 drop_blocked: bool = False) -> ObservationModel:
    """Constrain ``mdp`` and remove transition mass that reaches empty states.

    Args:
        drop_blocked: instead of raising, remove every available action whose
            outcomes are all empty states (repeated until none is left).

    Raises:
        TotallyBlocked: if an available action lands in empty states with
            probability one without being removed by the closure.
        FullyConstrained: if dropping blocked actions empties every initial state.
    """
    constrained = apply_constraints(mdp, c, aug)
    P = constrained.transitions
    avail = constrained.available
    while True:
        empty = ~avail.any(axis=1)
        mass = np.where(avail, (P * empty[None, None, :]).sum(axis=2), 0.0)
        blocked = avail & (mass >= 1.0 - PROB_TOL)
        if not blocked.any():
            break
        if not drop_blocked:
            s, a = map(int, np.argwhere(blocked)[0])
            raise TotallyBlocked(f"(s={s}, a={a}) only reaches empty states; add it to the constraint set")
        avail = avail & ~blocked
    if not (avail.any(axis=1) & (mdp.initial > 0)).any():
        raise FullyConstrained("no initial state keeps an available action")
    keep = np.where(empty[None, None, :], 0.0, P)
    with np.errstate(invalid="ignore", divide="ignore"):
        newP = np.where(avail[:, :, None], keep / (1.0 - mass)[:, :, None], P)
    mass.setflags(write=False)
    return ObservationModel(constrained.replace(transitions=newP, available=avail), empty, mass)


# ---------------------------------------------------------------------------
# Trajectories
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """States ``s_0..s_T`` and actions ``a_0..a_{T-1}``."""

    states: tuple[int, ...]
    actions: tuple[int, ...]

    def __post_init__(self):
        states = tuple(int(s) for s in self.states)
        actions = tuple(int(a) for a in self.actions)
        if len(states) != len(actions) + 1:
            raise DimensionMismatch(
                f"need len(states) == len(actions) + 1, got {len(states)} and {len(actions)}")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)

    def __len__(self):
        return len(self.actions)

    def pairs(self):
        return zip(self.states[:-1], self.actions)


def _check_dims(mdp: Mdp, xi: Trajectory):
    if any(not 0 <= s < mdp.n_states for s in xi.states) or any(
            not 0 <= a < mdp.n_actions for a in xi.actions):
        raise DimensionMismatch("trajectory indices outside the MDP's state/action range")


def trajectory_reward(mdp: Mdp, xi: Trajectory) -> float:
    """Discounted reward ``sum_t gamma^t R(s_t, a_t)`` (no rationality scale)."""
    _check_dims(mdp, xi)
    if len(xi) == 0:
        return 0.0
    s = np.asarray(xi.states[:-1])
    a = np.asarray(xi.actions)
    disc = mdp.discount ** np.arange(len(xi))
    return float(np.dot(disc, mdp.reward[s, a]))


@dataclass(frozen=True)
class Violation:
    """First reason a trajectory is infeasible."""

    step: int
    reason: str  # "length" | "initial" | "action" | "transition" | "empty_final" | "range"
    detail: str

    def __str__(self):
        return f"step {self.step}: {self.reason} ({self.detail})"


@dataclass(frozen=True)
class Feasibility:
    feasible: bool
    violation: Violation | None = None

    def __bool__(self):
        return self.feasible

    def __int__(self):
        return int(self.feasible)


def validate_trajectory(mdp: Mdp, xi: Trajectory) -> Feasibility:
    """Feasibility indicator of ``xi`` on ``mdp`` with the first violation found."""
    def bad(step, reason, detail):
        return Feasibility(False, Violation(step, reason, detail))

    if len(xi) != mdp.horizon:
        return bad(0, "length", f"{len(xi)} actions, horizon is {mdp.horizon}")
    try:
        _check_dims(mdp, xi)
    except DimensionMismatch as e:
        return bad(0, "range", str(e))
    if mdp.initial[xi.states[0]] <= 0:
        return bad(0, "initial", f"state {xi.states[0]} has zero initial probability")
    for t, (s, a) in enumerate(xi.pairs()):
        if not mdp.available[s, a]:
            return bad(t, "action", f"action {a} unavailable in state {s}")
        nxt = xi.states[t + 1]
        if mdp.transitions[s, a, nxt] <= 0:
            return bad(t, "transition", f"P({nxt} | {s}, {a}) = 0")
    if not mdp.available[xi.states[-1]].any():
        return bad(len(xi), "empty_final", f"final state {xi.states[-1]} is empty")
    return Feasibility(True)


def accrued_features(aug: AugmentedFeatureMap, xi: Trajectory) -> np.ndarray:
    """``(n_phi,)`` bitset of indicators accrued anywhere along ``xi``."""
    if len(xi) == 0:
        return np.zeros(aug.n_phi, dtype=bool)
    s = np.asarray(xi.states[:-1])
    a = np.asarray(xi.actions)
    return aug.indicators[s, a].any(axis=0)


def as_constraint_set(items: Sequence[MinimalConstraint] | ConstraintSet) -> ConstraintSet:
    return items if isinstance(items, ConstraintSet) else ConstraintSet(tuple(items))


__all__ = [
    "AugmentedFeatureMap", "ConstraintKind", "ConstraintSet", "DimensionMismatch",
    "Feasibility", "FullyConstrained", "InvalidMdp", "Mdp", "MdpError",
    "MinimalConstraint", "ObservationModel", "TotallyBlocked", "Trajectory",
    "Violation", "accrued_features", "apply_constraints", "augment_features",
    "constrained_mask", "empty_state_closure", "stochastic_observation_model",
    "trajectory_reward", "validate_trajectory",
]

"""Forward propagation of visitation mass and first-accrual feature mass.

Unlike the usual expected-feature-count forward pass, a trajectory that
has already accrued an indicator contributes no further mass for it, so
the final column gives the probability that a trajectory ever accrues
each indicator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .maxent import TimeVaryingPolicy
from .mdp import (AugmentedFeatureMap, ConstraintSet, Mdp, MdpError, MinimalConstraint,
                  augment_features)


class HorizonMismatch(MdpError):
    pass


@dataclass(frozen=True, eq=False)
class AccrualHistory:
    """Accrual table ``(n_phi, T)`` for times ``1..T`` and visitation ``(S, T+1)``.

    ``per_state`` holds the accrued mass per state at the final time only.
    """

    phi: np.ndarray
    visitation: np.ndarray
    per_state: np.ndarray
    feature_map: AugmentedFeatureMap | None = None

    @property
    def final(self) -> np.ndarray:
        return self.phi[:, -1]

    @property
    def horizon(self) -> int:
        return self.phi.shape[1]


def _indicator_array(indicators) -> np.ndarray:
    if isinstance(indicators, AugmentedFeatureMap):
        return indicators.indicators
    ind = np.asarray(indicators, dtype=bool)
    if ind.ndim == 2:
        ind = ind[:, :, None]
    return ind


def feature_accrual_history(mdp: Mdp, indicators, pol: TimeVaryingPolicy,
                            per_state_trace: list | None = None) -> AccrualHistory:
    """Expected accrual history of every indicator under ``pol``.

    Args:
        mdp: the MDP the policy acts in.
        indicators: an :class:`AugmentedFeatureMap` or any ``(S, A, n)`` /
            ``(S, A)`` boolean indicator array.
        pol: time-varying policy with the MDP's horizon.
        per_state_trace: if given, receives a copy of the per-state accrual
            block at every time ``0..T`` (for inspection and tests).

    Raises:
        HorizonMismatch: if the policy horizon differs from ``mdp.horizon``.
    """
    T, S, A = mdp.horizon, mdp.n_states, mdp.n_actions
    if pol.horizon != T:
        raise HorizonMismatch(f"policy horizon {pol.horizon} != MDP horizon {T}")
    ind = _indicator_array(indicators)
    if ind.shape[:2] != (S, A):
        raise ValueError(f"indicator array shape {ind.shape} does not match (S, A) = {(S, A)}")
    n = ind.shape[2]
    ind_f = ind.astype(float)
    probs = pol.probs

    D = np.empty((S, T + 1))
    D[:, 0] = pol.start_distribution(mdp)
    acc = np.zeros((S, n))  # accrued mass per state at the current time
    phi = np.empty((n, T))
    if per_state_trace is not None:
        per_state_trace.append(acc.copy())
    for t in range(T):
        # flow[s, a, s'] = pi(a|s,t) P(s'|s,a)
        flow = (probs[t][:, :, None] * mdp.transitions).reshape(S * A, S)
        fresh = ind_f * (D[:, t][:, None, None] - acc[:, None, :])
        carried = (acc[:, None, :] + fresh).reshape(S * A, n)
        acc = flow.T @ carried
        D[:, t + 1] = D[:, t] @ flow.reshape(S, A, S).sum(axis=1)
        phi[:, t] = acc.sum(axis=0)
        if per_state_trace is not None:
            per_state_trace.append(acc.copy())
    fm = indicators if isinstance(indicators, AugmentedFeatureMap) else None
    return AccrualHistory(phi, D, acc, fm)


def eliminated_mass(hist: AccrualHistory, c: MinimalConstraint | int) -> float:
    """Probability that a trajectory accrues the indicator of ``c``.

    Raises:
        IndexError: if ``c`` lies outside the augmented feature range.
    """
    if isinstance(c, MinimalConstraint):
        if hist.feature_map is None:
            raise ValueError("history has no feature map; pass an integer index")
        i = hist.feature_map.index_of(c)
    else:
        i = int(c)
        if not 0 <= i < hist.phi.shape[0]:
            raise IndexError(f"index {i} out of range")
    return float(hist.final[i])


def eliminated_mass_compound(mdp: Mdp, pol: TimeVaryingPolicy, c: ConstraintSet,
                             aug: AugmentedFeatureMap | None = None) -> float:
    """Probability that a trajectory contains any pair of the union ``c``."""
    aug = aug if aug is not None else augment_features(mdp)
    return float(compound_masses(mdp, pol, [c], aug)[0])


def compound_masses(mdp: Mdp, pol: TimeVaryingPolicy, sets: Sequence[ConstraintSet],
                    aug: AugmentedFeatureMap) -> np.ndarray:
    """Union masses for several constraint sets in one forward pass."""
    if not sets:
        return np.zeros(0)
    ind = np.stack([c.member_mask(aug) for c in sets], axis=2)
    return feature_accrual_history(mdp, ind, pol).final.copy()

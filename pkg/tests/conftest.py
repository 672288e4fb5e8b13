import numpy as np
import pytest

from mlci.gridworld import build_gridworld, load_config
from mlci.mdp import Mdp


def line_mdp(horizon: int = 3, weights=(-1.0,)) -> Mdp:
    """Four states in a row; actions: 0 = stay, 1 = step right, 2 = jump two right.

    State 3 is the goal and only allows "stay". The single feature is the move length.
    """
    S, A = 4, 3
    P = np.zeros((S, A, S))
    avail = np.zeros((S, A), dtype=bool)
    phi = np.zeros((S, A, 1))
    for s in range(S):
        for a, step in enumerate((0, 1, 2)):
            if s == 3 and a > 0:
                continue
            if s + step > 3:
                continue
            avail[s, a] = True
            P[s, a, s + step] = 1.0
            phi[s, a, 0] = step
    init = np.eye(S)[0]
    return Mdp(P, avail, init, phi, np.array(weights), horizon,
               action_names=("stay", "step", "jump"), feature_names=("length",))


@pytest.fixture
def line():
    return line_mdp()


@pytest.fixture(scope="session")
def paper_grid():
    return build_gridworld(load_config("paper_9x9"))


@pytest.fixture(scope="session")
def tiny_grid():
    return build_gridworld(load_config("tiny_3x3_oracle"))

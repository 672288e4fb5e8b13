# %% [markdown]
# # Accrual histories against brute force
#
# On a 3x3 grid small enough to enumerate, the backward pass partition value
# and the accrual recursion are compared with sums over every trajectory.

# %%
import math
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))
from oracles import accrual_fractions, count_trajectories, partition_function  # noqa: E402

from mlci.accrual import feature_accrual_history  # noqa: E402
from mlci.gridworld import build_gridworld, load_config  # noqa: E402
from mlci.maxent import backward_pass  # noqa: E402
from mlci.mdp import augment_features  # noqa: E402

mdp, truth = build_gridworld(load_config("tiny_3x3_oracle"))
aug = augment_features(mdp)
print("trajectories:", count_trajectories(mdp))

# %% Partition function
pol, z = backward_pass(mdp)
print(f"log Z backward pass {z.log_Z:.12f}")
print(f"log Z enumeration   {math.log(partition_function(mdp)):.12f}")

# %% Accrual history, one row per indicator, one column per time step
hist = feature_accrual_history(mdp, aug, pol)
ref = accrual_fractions(mdp, aug.indicators)
names = list(mdp.feature_names) + list(mdp.state_names) + list(mdp.action_names)
for name, row, r in zip(names, hist.phi, ref):
    print(f"{name:>12} " + " ".join(f"{v:.3f}" for v in row) + f"   enumerated {r:.3f}")
print("max abs difference:", float(np.abs(hist.final - ref).max()))

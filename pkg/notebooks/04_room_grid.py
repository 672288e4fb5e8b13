# %% [markdown]
# # Recovering an obstacle from walking paths
#
# The room grid has a block of forbidden cells in the middle. Only state
# constraints are considered, so every selection names a cell.

# %%
from mlci.gridworld import build_gridworld, load_config
from mlci.inference import false_positive_rate, greedy_iterative_inference
from mlci.maxent import backward_pass, sample_trajectories
from mlci.mdp import ConstraintKind, apply_constraints, augment_features
from mlci.render import render_ascii

cfg = load_config("human_room_grid")
nominal, truth = build_gridworld(cfg)
aug = augment_features(nominal)
true_mdp = apply_constraints(nominal, truth, aug)
true_pol = backward_pass(true_mdp)[0]
print("truth:", sorted(nominal.state_names[c.index] for c in truth))

# %% [markdown]
# With 16 paths a few cells beside the obstacle are never crossed and get
# picked up too. With 50 the selection settles on the obstacle itself. The
# cell (5,3) is not reported. Once its neighbours are forbidden it is a dead
# end entered only from the east, so it carries almost no probability and
# forbidding it barely changes the fit.

# %%
for n in (16, 50):
    demos = sample_trajectories(true_mdp, true_pol, n, seed=0)
    result = greedy_iterative_inference(nominal, demos, 0.1, kinds={ConstraintKind.STATE}, aug=aug)
    print(f"{n} demos:", [nominal.state_names[c.index] for c in result.selected],
          "| false positive rate:", false_positive_rate(result, truth, nominal, aug))

# %% Visit frequencies of the last demonstration set, with selected cells marked
visits = [0.0] * nominal.n_states
for xi in demos:
    for s in set(xi.states):
        visits[s] += 1 / len(demos)
layout = {"n_native": 0, "n_states": nominal.n_states, "n_actions": 0}
print(render_ascii(visits, layout, result.selected, grid_shape=nominal.grid_shape))

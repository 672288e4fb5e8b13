# %% [markdown]
# # The 9x9 reference grid
#
# Demonstrations come from the grid with its planted constraints. Inference
# sees only the nominal grid and grows a constraint set until the KL
# improvement falls below the threshold.

# %%
from mlci.accrual import feature_accrual_history
from mlci.gridworld import build_gridworld, load_config, paper_experiment
from mlci.maxent import backward_pass
from mlci.mdp import augment_features
from mlci.render import render_ascii

cfg = load_config("paper_9x9")
nominal, truth = build_gridworld(cfg)
aug = augment_features(nominal)
print(cfg.note)

# %% Nominal accrual: where does probability mass go before any constraint?
pol, _ = backward_pass(nominal)
hist = feature_accrual_history(nominal, aug, pol)
print(render_ascii(hist.final, {"n_native": aug.n_native, "n_states": aug.n_states,
                                "n_actions": aug.n_actions},
                   grid_shape=nominal.grid_shape, action_names=nominal.action_names,
                   feature_names=nominal.feature_names))

# %% One run with 100 demonstrations
rep = paper_experiment(seed=0, n_demos=100, d_kl=0.1)
for rec in rep.result.iterations:
    c = rec.constraint
    name = {0: nominal.feature_names, 1: nominal.state_names, 2: nominal.action_names}[int(c.kind)][c.index]
    print(f"iter {rec.iteration}: {c.kind.name.lower():>7} {name:<10} mass {rec.eliminated_mass:.3f} "
          f"KL {rec.kl_before:.3f} -> {rec.kl_after:.3f}")
print("stopped:", rep.result.stop_reason, "| false positive rate:", rep.false_positive_rate)

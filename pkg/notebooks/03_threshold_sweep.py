# %% [markdown]
# # Demonstration count against threshold
#
# A reduced version of the acceptance sweep. Pass a seed count on the
# command line for a fuller run, e.g. ``python 03_threshold_sweep.py 10``.

# %%
import sys

from mlci.cli import run_sweep, summarize

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 3
rows = run_sweep("paper_9x9", [1, 3, 10, 30, 100], [0.03, 0.1, 0.3], range(n_seeds))

# %% Mean false positive rate and final KL per cell
print(f"{'threshold':>9} {'n':>4} {'FP mean':>8} {'FP se':>6} {'KL mean':>8} {'selected':>8}")
for cell in summarize(rows):
    print(f"{cell['threshold']:>9} {cell['n_demos']:>4} {cell['fp_rate_mean']:>8.3f} "
          f"{cell['fp_rate_se']:>6.3f} {cell['final_KL_mean']:>8.3f} {cell['n_selected_mean']:>8.1f}")

# %% [markdown]
# False positives fall as demonstrations accumulate, and faster with a higher
# threshold. Final KL does not fall monotonically. With one demonstration
# the empirical distribution is a point mass, and greedy selection can
# concentrate the model on it.

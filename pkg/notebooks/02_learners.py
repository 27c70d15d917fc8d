# ---
# jupyter:
#   jupytext:
#     formats: ipynb,py:percent
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # Learners at a glance
#
# Short runs of the centralized, distributional and distributed agents
# through the experiment harness, plus the complexity reports.
# Increase ``episodes`` for meaningful curves.

# %%
import csv
import tempfile
from pathlib import Path

import numpy as np

from cellfree.harness import ExperimentConfig, flops_report, run_experiment, timing_report

out = Path(tempfile.mkdtemp())
cfg = ExperimentConfig(scenario="small", algos=("conjugate", "mmse", "ddpg", "d4pg", "dist"),
                       seeds=(0,), episodes=1, steps_per_episode=300, out_dir=str(out))
summary = run_experiment(cfg)
for algo, agg in summary["aggregate"].items():
    print(f"{algo:<10} final normalized {agg['normalized_mean']:.3f}")

# %% [markdown]
# ## Learning curve
#
# Per-step normalized reward, smoothed over 50 steps.

# %%
for algo in ("ddpg", "d4pg", "dist"):
    with open(out / f"curve_{algo}_seed0.csv", newline="") as fh:
        r = np.array([float(row["normalized_reward"]) for row in csv.DictReader(fh)])
    smooth = np.convolve(r, np.ones(50) / 50, mode="valid")
    print(algo, np.round(smooth[::50], 3))

# %% [markdown]
# ## Complexity

# %%
for M, K in ((15, 5), (70, 20)):
    rep = flops_report(M, K)
    print(f"M={M} K={K} centralized {rep['centralized']:,} distributed {rep['distributed']:,}")

for row in timing_report([15, 45], ga_iters=20, repeats=5):
    print(row)

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
# # Channel model and non-learning baselines
#
# One coherence block of the small scenario: fading, pilot estimates,
# SINR of a beamforming matrix and the three reference beamformers.

# %%
import numpy as np

from cellfree.baselines import baseline_matrix, gradient_ascent
from cellfree.channel import ScenarioConfig
from cellfree.env import UplinkEnv, check_sic_constraints

cfg = ScenarioConfig.preset("small", seed=0)
env = UplinkEnv(cfg, enforce_sic=False)
env.reset()
block = env.block
print(f"M={env.M} K={env.K} pilot length={cfg.pilot_length} noise={cfg.noise_power_mw:.3e} mW")

# %% [markdown]
# ## Pilot estimation
#
# Estimates are a per-link scale of the projected pilot observation.

# %%
est = block.estimation
err = np.mean(np.abs(est.g - est.Ghat) ** 2) / np.mean(np.abs(est.g) ** 2)
print(f"normalized estimation error {err:.3f}")

# %% [markdown]
# ## Baselines on the same block

# %%
rows = {}
for name in ("conjugate", "mmse", "mmse-sic"):
    rows[name] = env.evaluate(baseline_matrix(name, block))
ga = gradient_ascent(block, np.ones((env.M, env.K)), lr=0.1, iters=100, enforce_sic=False)
rows["grad-ascent"] = env.evaluate(ga.W)
ref = rows["mmse"].sum_rate
for name, res in rows.items():
    print(f"{name:<12} sum-rate {res.sum_rate:7.3f}  normalized {res.sum_rate / ref:.3f}")

# %% [markdown]
# Gradient ascent beats MMSE: the sum-rate is a ratio of sums in the
# squared weights, so its maximum sits at a box vertex, not at the
# MMSE direction.

# %%
print("ascent entries at 0 or 1:", np.mean((ga.W < 1e-6) | (ga.W > 1 - 1e-6)).round(3))

# %% [markdown]
# ## SIC feasibility
#
# Count violated ordering conditions for the MMSE matrix.

# %%
W = baseline_matrix("mmse", block)
bad = check_sic_constraints(W, block.fading.G2, block.p_mw, block.sensitivity_mw, block.link.order)
print(f"{len(bad)} of {env.K * (env.K - 1) // 2} conditions violated")

# %% [markdown]
# Width of the first hidden layer versus recovery of the latent vector.
#
# A seeded tanh network 8 -> n1 -> 196 is inverted from a clean output for a
# handful of widths. Below roughly twice the latent size the hidden layer is
# still recovered but the latent vector is not; above it both come back.

# %%
import numpy as np

from geninvert.experiments import ExperimentPlan, quantile, run_plan

plan = ExperimentPlan(kind="phase", dims=[8, 16, 196], sweep_values=[8, 12, 16, 24, 32, 48],
                      trials=16, methods=["gd", "layered-bp", "latent-pursuit"], seed=1)
records = run_plan(plan)

# %%
print(f"{'n1':>4} {'method':>15} {'median z err':>13} {'x1 ok':>6}")
for n1 in plan.sweep_values:
    for method in plan.methods:
        sel = [r for r in records if r.sweep_value == n1 and r.method == method]
        z_err = quantile([r.layers["z"]["rel_err"] for r in sel], 0.5)
        x1_ok = np.mean([r.layers["x1"]["snr_db"] >= 40 for r in sel])
        print(f"{n1:>4} {method:>15} {z_err:>13.3e} {x1_ok:>6.0%}")

# %% [markdown]
# Full grid from the shell, with a per-trial CSV and a quantile summary:
#
#     geninvert phase --grid 16:160:8 --out phase.csv --summary phase_summary.csv

# %% [markdown]
# # Critical time step against cut size
# A small randomized study, 20 translations on a 12x12 mesh: without ghost
# mass the smallest steps follow the smallest cuts, with ghost mass they do not.

# %%
import numpy as np

from cutiga.experiments import lower_envelope_slope, run_timestep_scaling
from cutiga.forms import FormulationSpec

forms = [FormulationSpec(), FormulationSpec(ghost_mass=True)]
rep = run_timestep_scaling(formulations=forms, n_perturbations=20, n_elements=12)
for label in ("s2-neumann-lumped", "s2-neumann-lumped+gm"):
    rows = [r for r in rep.rows if r["formulation"] == label]
    dt = np.array([r["dt_crit"] for r in rows])
    slope, _ = lower_envelope_slope([r["chi_min"] for r in rows], dt)
    print(f"{label:>18}: min dt / uncut = {dt.min() / rows[0]['dt_uncut']:.3f}, "
          f"envelope slope {slope:.3f}")

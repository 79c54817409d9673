# %% [markdown]
# # Standing wave on the cut-out membrane
# Explicit central differences over one period with lumped mass, with and
# without ghost mass. Small meshes keep this quick.

# %%
from cutiga.experiments import convergence_rate, run_membrane_convergence
from cutiga.forms import FormulationSpec

for gm in (False, True):
    rep = run_membrane_convergence(FormulationSpec(ghost_mass=gm), p=1, meshes=(8, 16, 32))
    for r in rep.rows:
        print(f"ghost_mass={gm!s:5} n={r['mesh']:3d} steps={r['steps']:4d} L2={r['l2']:.3e}")
    print("  L2 rate:", round(convergence_rate(rep), 3))

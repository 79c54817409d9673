# %% [markdown]
# # Rayleigh quotients of cut probes
# Unit-coefficient probes on a sliver-cut element and the fitted power of
# chi, compared with the expected exponent per formulation and mass column.

# %%
from cutiga.experiments import run_rayleigh_table

rep = run_rayleigh_table(order=2, probe="sliver1", p=1, d=2)
for r in rep.rows:
    print(f"{r['formulation']:>14} {r['mass']:>14}  expected {r['expected']:+d}  "
          f"fitted {r['fitted']:+.3f}  {r['verdict']}")

# %% [markdown]
# # Cut rod spectrum
# The largest eigenvalue of a free rod whose last element is cut to a
# fraction chi grows like chi^-2 with the consistent mass, and stays bounded
# once the mass is lumped.

# %%
from cutiga.experiments import run_rod_spectrum

rep = run_rod_spectrum(p=2, n_elements=4)
for mass in ("consistent", "lumped"):
    for chi in rep.config["chis"]:
        top = max(r["eigenvalue"] for r in rep.rows if r["mass"] == mass and r["chi"] == chi)
        print(f"{mass:>10} chi={chi:7.0e} lambda_max={top:10.4e}")
for v in rep.verdicts:
    print(v.name, "PASS" if v.passed else "FAIL", round(v.value, 4))

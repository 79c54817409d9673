# %% [markdown]
# # Cut-cell quadrature on the reference cut-out
# Bisection tessellation of cut elements, the area check and the
# smallest cut fraction chi over a few random translations.

# %%
import numpy as np

from cutiga.cutquad import build_cut_quadrature, compute_cut_metrics, min_cut_chi
from cutiga.geometry import (BackgroundMesh, make_reference_cutout_domain,
                             random_translations, reference_cutout_area)
from cutiga.splines import build_open_uniform_basis

basis = build_open_uniform_basis([20, 20], 2, [[0.0, 1.0], [0.0, 1.0]])
mesh = BackgroundMesh.from_basis(basis)
exact = 1.0 - reference_cutout_area()

for rho in (2, 3, 4, 5):
    quad = build_cut_quadrature(make_reference_cutout_domain(h=basis.h), mesh, 2, rho_max=rho)
    print(f"rho_max={rho}: area error {abs(quad.total_volume() - exact):.2e}")

# %%
for shift in random_translations(5, basis.h, seed=7):
    quad = build_cut_quadrature(make_reference_cutout_domain(tuple(shift), h=basis.h), mesh, 2)
    print(f"shift {shift.round(4)}: chi_min = {min_cut_chi(compute_cut_metrics(quad), quad):.3e}")

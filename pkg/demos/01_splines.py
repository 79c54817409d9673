# %% [markdown]
# # Tensor B-spline bases
# Open uniform knot vectors, partition of unity and the slope jump of a hat.

# %%
import numpy as np

from cutiga.splines import build_open_uniform_basis, eval_basis, face_normal_jump

rod = build_open_uniform_basis([4], 2, [[0.0, 1.0]])
print("quadratic rod on 4 elements:", rod.n_dofs, "functions")

# %%
plate = build_open_uniform_basis([3, 3], 2, [[0.0, 1.0], [0.0, 1.0]])
vals = eval_basis(plate, [0.37, 0.81])
print("nonzero functions at a point:", len(vals), "sum:", sum(v for _, v in vals))

# %%
hats = build_open_uniform_basis([4], 1, [[0.0, 1.0]])
print("hat slope jumps across x = 0.5:", dict(face_normal_jump(hats, (0, 2), 1, [0.5])))

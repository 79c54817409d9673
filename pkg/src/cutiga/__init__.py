"""Critical time steps of immersed isogeometric discretizations under explicit dynamics.

Modules
-------
splines      tensor-product B-spline bases
geometry     implicit CSG domains, background mesh, ghost faces, seeded translations
cutquad      octree quadrature on cut elements and cut-size metrics
forms        mass, stiffness, boundary and ghost terms for second- and fourth-order problems
spectral     generalized eigenvalues, critical steps, cut probes and scaling fits
dynamics     central-difference time integration and error norms
experiments  the reproducible studies
cli          command-line front end
"""

__version__ = "0.1.0"

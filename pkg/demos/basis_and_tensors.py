"""
Spline bases and the Kronecker design
=====================================

Builds the cubic B-spline bases used for the smooth background, checks the
tensor/Kronecker identity the model relies on, and prints a few shapes.
"""

import numpy as np

from poisson_hotspots.basis import bspline_basis, default_basis_set
from poisson_hotspots.tensor import kron, tucker_reconstruct, vectorize

# 26 yearly points, 7 knots spread over the stretched grid [1, 50]
b_time = bspline_basis(26, np.linspace(1, 50, 7), order=4)
print("time basis:", b_time.shape)
print("rows sum to one:", np.allclose(b_time.sum(axis=1), 1.0))

# the default set for a 49 x 10 x 26 tensor
bases = default_basis_set((49, 10, 26))
print("mean core:", bases.core_dims_m, " p =", bases.p, " q =", bases.q)
print("design X:", bases.X.shape, "nonzeros:", bases.X.nnz)

# a core tensor pushed through the three bases equals X @ vec(core)
rng = np.random.default_rng(0)
core = rng.normal(size=bases.core_dims_m)
u = tucker_reconstruct(core, *bases.mean_bases)
print("max |vec(U) - X theta|:", np.abs(vectorize(u) - bases.X @ vectorize(core)).max())

# same identity with small dense matrices
a, b, c = rng.normal(size=(3, 2)), rng.normal(size=(4, 3)), rng.normal(size=(2, 2))
g = rng.normal(size=(2, 3, 2))
print("dense check:", np.allclose(vectorize(tucker_reconstruct(g, a, b, c)), kron(kron(a, b), c) @ vectorize(g)))

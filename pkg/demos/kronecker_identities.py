"""
Kronecker algebra behind the fast likelihood
============================================

The full-observation covariance is ``K_x kron K_f + I kron Sigma``. Nothing
here ever needs the NM x NM matrix, because a handful of identities move all
the work onto the N x N and M x M factors.
"""

import numpy as np

from mtgp.linalg import kron, kron_matvec, quad_form_identity_check, vec_t

rng = np.random.default_rng(0)
a = rng.normal(size=(4, 4)) + 4 * np.eye(4)
b = rng.normal(size=(3, 3)) + 3 * np.eye(3)
c = rng.normal(size=(4, 3))

# %%
# Determinant and inverse factorise.
print(np.linalg.det(kron(a, b)), np.linalg.det(a) ** 3 * np.linalg.det(b) ** 4)
print(np.abs(np.linalg.inv(kron(a, b)) - kron(np.linalg.inv(a), np.linalg.inv(b))).max())

# %%
# A matrix-vector product with ``A kron B`` is two small matrix products.
# ``vec_t`` flattens a table row by row, which is vec of its transpose.
print(np.abs(kron(a, b) @ vec_t(c) - kron_matvec(a, b, vec_t(c))).max())

# %%
# The quadratic form collapses to a trace of small products.
lhs, rhs = quad_form_identity_check(a, b, c)
print(lhs, rhs)

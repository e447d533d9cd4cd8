"""The sieve basis, its two evaluation routes, and how many terms a target needs.

Run: python3 demos/01_basis_and_orders.py
"""

import numpy as np

from sievecov import ParametricCovariance, SieveCovariance, basis_eval, basis_eval_beta, lift_weights, select_min_m

# Each basis element is a product of rational factors in h^2.  The direct
# product and the Gamma-ratio route should agree to round-off, even for long
# products where the direct route multiplies two hundred factors.
for k, m, h in [(1, 1, 1.0), (3, 10, 0.5), (1, 200, 4.0), (150, 200, 30.0)]:
    a, b = basis_eval(k, m, h), basis_eval_beta(k, m, h)
    print(f"A_{{{k},{m}}}({h:5.1f}) = {a:.15e}   gamma-ratio route differs by {abs(a - b) / a:.1e}")

# Orders are nested: any order-m mixture is exactly an order-(m+1) mixture.
w = np.array([0.2, 0.5, 0.3])
h = np.linspace(0, 8, 5)
print("\nnested mixture, order 3 vs lifted order 4:")
print(np.c_[h, SieveCovariance(w)(h), SieveCovariance(lift_weights(w))(h)])

# How many terms does a smooth target need?  The answer depends sharply on the
# tail: exponential tails are cheap, the slow polynomial Cauchy tail is not.
print()
for fam, params in [("Matern", (1, 1, 1)), ("Gaussian", (1, 1))]:
    res = select_min_m(ParametricCovariance(fam, params).correlation, threshold=0.05)
    trail = ", ".join(f"{m}: {e:.3f}" for m, e in res.history)
    print(f"{fam:8s} needs m = {res.m}   (relative error by order: {trail})")

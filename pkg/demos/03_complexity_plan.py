"""
Choosing q, h and the iteration count from a tolerance
======================================================

The mean squared error is modelled as a sum of an optimization term, a
quadrature term and a finite element term. Each is brought below tol^2/3.
The constants below are those read off the published complexity table;
`sagaocp study complexity` calibrates them on this machine instead.
"""
from sagaocp.studies import CalibratedModel, complexity_plan

model = CalibratedModel(E1=3.0, E2=10.43, s=3.697, E3=2.96, eps_table={1: 0.004, 2: 0.004,
                                                                      3: 0.004})
print(f"{'tol':>9} {'q':>3} {'1/h':>4} {'k_max':>7} {'predicted MSE':>14}")
for tol in (10**-0.5, 1e-1, 10**-1.5, 1e-2, 10**-2.5, 1e-3):
    p = complexity_plan(model, tol)
    print(f"{tol:9.3e} {p['q']:>3} {p['m']:>4} {p['k_max']:>7} {p['predicted_mse']:14.3e}")

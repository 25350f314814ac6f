"""Qubit feedback: closed forms against a small simulated ensemble.

Prints the analytic steady state, then runs the reduced (good-control) and
full stochastic-master-equation ensembles with shared noise and compares.

    python demos/qubit_feedback.py [n_traj]
"""

import sys

from qfc import qubit

n_traj = int(sys.argv[1]) if len(sys.argv) > 1 else 100
p = qubit.QubitParams(k=1.0, Gamma=0.05, gamma=0.05, u=400.0, dt=1e-4, horizon=3.0, seed=1)
pred = qubit.predict(p)
print(f"predicted lambda1 = {pred.lambda1_ss:.6f}, P = {pred.P_ss:.6f}, "
      f"Var Re z1 = {pred.V_ss:.6f}, regime ok = {pred.regime_ok}")

settings = qubit.SimSettings(noise="two-point")
for mode in ("good-control", "full-sme"):
    s = qubit.simulate(p, mode, n_traj, settings)
    lam, omp = s.steady["lambda1"], s.steady["one_minus_P"]
    print(f"{mode:>12}: lambda1 = {lam.mean:.6f} +- {lam.stderr:.1e}, "
          f"1-P = {omp.mean:.6f} +- {omp.stderr:.1e}, Var Re z1 = {s.steady['re_z1'].variance:.6f}")

# 1 - P exceeds lambda1 by about Var Re z1: the |z1|^2 term is second order
# and absent from the closed form for P.

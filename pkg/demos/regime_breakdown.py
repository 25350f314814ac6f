"""Feedback strength and the good-control regime.

With u comparable to k the spread of z1 reaches z_max and the perturbative
propagator stops; with u >> k it stays in regime.

    python demos/regime_breakdown.py
"""

from qfc import qubit

for u in (1.0, 10.0, 100.0, 400.0):
    p = qubit.QubitParams(k=1.0, Gamma=0.05, gamma=0.05, u=u, dt=1e-4, horizon=10.0, seed=8)
    s = qubit.simulate(p, "good-control", 100, qubit.SimSettings(on_breakdown="record"))
    steps = sorted(f["step"] for f in s.failures)
    first = f", first at t = {steps[0] * p.dt:.3f}" if steps else ""
    print(f"u = {u:>5g}: {len(s.failures):>3}/100 left the regime{first}; "
          f"predicted Var Re z1 = {qubit.ou_stats(1.0, 0.05, u)[1]:.4f}")

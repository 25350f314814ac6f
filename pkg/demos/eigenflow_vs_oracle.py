"""Single-step agreement between the eigenflow and direct diagonalization.

Halving dt should shrink the eigenvalue mismatch by about 2^{3/2}.

    python demos/eigenflow_vs_oracle.py
"""

from qfc.validation import single_step_suite

for study in single_step_suite(dims=(2, 3, 4), n_instances=50, with_channel=True):
    rows = ", ".join(f"dt={dt:.1e}: {e:.2e}" for dt, e in zip(study.dts, study.eig_err))
    print(f"N={study.dim}: {rows}  -> order {study.eig_order:.2f}, "
          f"eigenvectors monotone: {study.vec_monotone}")

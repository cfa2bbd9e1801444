"""Compare the printed closed forms with the quadrature oracle.

Prints the per-mode factor table, then the grid of relative errors of the
corrected forms used by the package.
"""
from spade_brownian.ensemble import (
    CLOSED_FORM_MODES,
    averaged_probs_quadrature,
    closed_form_with_derivative,
    normalization_audit,
)

print(f"{'mode':>5} {'factor':>14} {'spread':>10} constant  corrected_max_rel_err  note")
for r in normalization_audit():
    print(f"{r.mode.label():>5} {r.factor:14.10f} {r.spread:10.2e} {str(r.constant):>8}  "
          f"{r.corrected_max_rel_err:21.2e}  {r.note}")

print()
print(f"{'x':>6} {'tau':>7} " + " ".join(f"{m.label():>9}" for m in CLOSED_FORM_MODES) + "  branches")
for x in (0.02, 0.05, 0.1, 0.2, 0.5):
    for tau in (1e-4, 1e-3, 1e-2, 1e-1, 1.0):
        q = averaged_probs_quadrature(x, tau, M=1)
        errs, branches = [], []
        for m in CLOSED_FORM_MODES:
            p, _, _, b = closed_form_with_derivative(m, x, tau)
            errs.append(abs(p / q.probs[m] - 1))
            branches.append(b)
        print(f"{x:6.2f} {tau:7.0e} " + " ".join(f"{e:9.1e}" for e in errs) + "  " + ",".join(branches))

"""Numerically certify the routing-layer analysis.

Each check turns one provable statement about noisy top-1 routing into a
Monte Carlo or algebraic test with an explicit tolerance:

  * smoothness of routing probabilities in the logits,
  * the pairwise bound |p_m - p_m'| <= M^2 |h_m - h_m'|,
  * a logit gap >= 1 under Unif[0,1) noise means the expert is never picked,
  * router updates preserve the zero column-sum invariant,
  * margins over a mirrored four-point input family cancel exactly.

Takes about a minute. `moelab verify` runs the same suites from the shell.
"""

from moelab import (
    certify_gap,
    certify_general_smoothing,
    certify_gradients,
    certify_pairwise,
    certify_smoothing,
    certify_symmetry,
    format_report_table,
)


def main():
    reports = [
        certify_smoothing(trials=200),
        certify_general_smoothing(trials=200),
        certify_pairwise(trials=200),
        certify_gap(trials=50),
        certify_symmetry(trials=400),
        certify_gradients(triples=8),
    ]
    print(format_report_table(reports))
    bad = [r for r in reports if r.applicable and not r.passed]
    if bad:
        raise SystemExit(f"{len(bad)} check(s) failed")
    print("\nall routing-law checks passed")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Sweep the quartz inhalation rate and track the steady state.

For each alpha the steady cohort chain is solved and the free-quartz level
x* printed together with the truncation-tail estimate, which shows how large
n must be before the cut-off mass is negligible.
"""
import argparse

import numpy as np

from silkin import (
    CoefficientFamily,
    ModelParams,
    TruncatedSystem,
    find_equilibrium,
    realize_coefficients,
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=64)
    ap.add_argument("--r", type=float, default=1.0)
    ap.add_argument("--alphas", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0, 4.0])
    ap.add_argument("--gamma", type=float, default=0.0)
    args = ap.parse_args()

    rates = realize_coefficients(
        CoefficientFamily.power_law(1.0, args.gamma),
        CoefficientFamily.constant(1.0),
        CoefficientFamily.constant(0.0),
        args.n,
    )
    print(f"{'alpha':>8} {'x*':>12} {'M_total*':>12} {'residual':>10} {'tail':>10}")
    for alpha in args.alphas:
        sys_ = TruncatedSystem(ModelParams(r=args.r, alpha=alpha), rates)
        eq = find_equilibrium(sys_, tol=1e-12)
        print(
            f"{alpha:8.3f} {eq.x_star:12.6f} {float(np.sum(eq.M_star)):12.6f} "
            f"{eq.residual:10.1e} {eq.tail_mass:10.1e}"
        )


if __name__ == "__main__":
    main()

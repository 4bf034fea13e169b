#!/usr/bin/env python3
"""Stepper benchmark against the closed-form decoupled solution.

With no ingestion every cohort decays independently, so the exact solution is
known in closed form and the integrator error can be measured directly.  The
script prints worst-case errors over a tolerance ladder; each tightening of
rel_tol should drop the error roughly proportionally.
"""
import argparse

import numpy as np

from silkin import (
    CoefficientFamily,
    IntegratorConfig,
    ModelParams,
    State,
    TruncatedSystem,
    integrate,
    realize_coefficients,
)


def closed_form(x0, M0, p, q, r, alpha, t):
    a = p + q
    with np.errstate(invalid="ignore", divide="ignore"):
        ramp = np.where(a > 0.0, -np.expm1(-a * t) / np.where(a > 0.0, a, 1.0), t)
    M = M0 * np.exp(-a * t)
    M[0] += r * ramp[0]
    i = np.arange(len(M0), dtype=float)
    x = x0 + alpha * t + float(np.sum(i * q * M0 * ramp))
    return x, M


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=8)
    ap.add_argument("--t-end", type=float, default=5.0)
    args = ap.parse_args()

    n = args.n
    rng = np.random.default_rng(1)
    p = rng.uniform(0.0, 1.2, n + 1)
    q = rng.uniform(0.0, 1.2, n + 1)
    rates = realize_coefficients(
        CoefficientFamily.constant(0.0),
        CoefficientFamily.table(p),
        CoefficientFamily.table(q),
        n,
    )
    sys_ = TruncatedSystem(ModelParams(r=0.3, alpha=0.25), rates)
    M0 = rng.uniform(0.1, 1.0, n + 1)
    y0 = State(t=0.0, x=0.5, M=M0)

    print(f"{'rel_tol':>9} {'abs_tol':>9} {'steps':>6} {'max err':>10}")
    for rel in (1e-5, 1e-7, 1e-9, 1e-11):
        cfg = IntegratorConfig(rel_tol=rel, abs_tol=rel * 1e-3)
        traj = integrate(sys_, y0, args.t_end, cfg)
        worst = 0.0
        for t in np.linspace(0.5, args.t_end, 10):
            x_ref, M_ref = closed_form(0.5, M0, rates.p, rates.q, 0.3, 0.25, t)
            got = traj.dense_vector(float(t))[: n + 2]
            worst = max(worst, float(np.max(np.abs(got - np.concatenate(([x_ref], M_ref))))))
        print(f"{rel:9.0e} {cfg.abs_tol:9.0e} {traj.num_samples:6d} {worst:10.2e}")


if __name__ == "__main__":
    main()

"""Physical moments and integrated balance identities as numerical residuals.

The observables are the cohort sums

    M_total = sum_i M_i          (macrophages)
    X_total = x + sum_i i M_i    (quartz, free plus carried)
    U_total = X_total + M_total  (total matter)

together with Q = sum_i i q_i M_i and P = sum_i i p_i M_i.  Along the exact
truncated flow these satisfy integrated balances; evaluating each balance on
a computed trajectory yields a residual that vanishes to stepper precision.
A persistent residual therefore flags a defect in the vector field, the
accumulators or the integrator, never "model error".

Time integrals of g-weighted cohort sums are evaluated by per-step
Gauss-Legendre quadrature on the dense output (the dense segments are
polynomials, so the quadrature is exact up to interpolation error), while the
boundary flux integrals F_m come from their co-integrated accumulators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .integrator import (
    ACC_QUARTZ_REMOVED,
    ACC_TOTAL_LOSS,
    OutOfRange,
    Trajectory,
    dense_eval,
)
from .model import MomentWeights, RateTable, State, norm_mu, validate_weights

__all__ = [
    "MomentSnapshot",
    "GronwallReport",
    "InvalidWeights",
    "compute_moments",
    "mass_balance_residual",
    "quartz_balance_residual",
    "macrophage_balance_residual",
    "moment_identity_residual",
    "gronwall_check",
]


class InvalidWeights(ValueError):
    """Weights do not satisfy the hypotheses the exponential envelope needs."""


@dataclass(frozen=True)
class MomentSnapshot:
    """Moments of one state: totals plus the weighted release/removal sums."""

    t: float
    m_total: float
    x_total: float
    u_total: float
    Q: float
    P: float


def compute_moments(s: State, rates: RateTable) -> MomentSnapshot:
    """Finite moment sums of a state against a rate table."""
    if s.n != rates.n:
        raise ValueError(f"state carries cohorts 0..{s.n} but rates expect 0..{rates.n}")
    i = np.arange(rates.n + 1, dtype=float)
    m_total = float(np.sum(s.M))
    x_total = s.x + float(i @ s.M)
    return MomentSnapshot(
        t=s.t,
        m_total=m_total,
        x_total=x_total,
        u_total=x_total + m_total,
        Q=float((i * rates.q) @ s.M),
        P=float((i * rates.p) @ s.M),
    )


_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(6)


def _panel_quadrature(a: np.ndarray, b: np.ndarray):
    """Gauss-Legendre nodes/weights for a batch of intervals [a_j, b_j]."""
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    ts = (mid[:, None] + half[:, None] * _GAUSS_X[None, :]).ravel()
    ws = (half[:, None] * _GAUSS_W[None, :]).ravel()
    return ts, ws


def _split_at_samples(traj: Trajectory, t1: float, t2: float):
    lo = np.searchsorted(traj.t, t1, side="right")
    hi = np.searchsorted(traj.t, t2, side="left")
    edges = np.concatenate(([t1], traj.t[lo:hi], [t2]))
    return edges[:-1], edges[1:]


def _path_integral(traj: Trajectory, coef: np.ndarray, t1: float, t2: float, times_x: bool) -> float:
    """``int_{t1}^{t2} [x(s)] * sum_i coef_i M_i(s) ds`` from dense output."""
    if t2 == t1:
        return 0.0
    ts, ws = _panel_quadrature(*_split_at_samples(traj, t1, t2))
    Z = traj.dense_matrix(ts)
    vals = coef @ Z[1:traj.sys.dimension]
    if times_x:
        vals = vals * Z[0]
    return float(ws @ vals)


def _cumulative_loss(traj: Trajectory, coef: np.ndarray) -> np.ndarray:
    """``int_{t0}^{t_j} sum_i coef_i M_i`` at every sample time ``t_j``."""
    if traj.num_samples < 2:
        return np.zeros(traj.num_samples)
    ts, ws = _panel_quadrature(traj.t[:-1], traj.t[1:])
    Z = traj.dense_matrix(ts)
    vals = (coef @ Z[1:traj.sys.dimension]) * ws
    per_panel = vals.reshape(traj.num_samples - 1, len(_GAUSS_X)).sum(axis=1)
    return np.concatenate(([0.0], np.cumsum(per_panel)))


def _check_window(traj: Trajectory, t1: float, t2: float) -> None:
    if not (traj.t_start <= t1 < t2 <= traj.t_end):
        raise OutOfRange(
            f"need t_start <= t1 < t2 <= t_end, got [{t1}, {t2}] in "
            f"[{traj.t_start}, {traj.t_end}]"
        )


def mass_balance_residual(traj: Trajectory, t: float) -> float:
    """Total-matter balance defect at time ``t``.

    Returns ``U(t) - U(t0) - (r + alpha)(t - t0) + A1(t) + A2(t)``, which is
    identically zero along the exact truncated flow.
    """
    traj._check_range(t)
    rates = traj.sys.rates
    u_t = compute_moments(dense_eval(traj, t), rates).u_total
    u_0 = compute_moments(traj.initial_state, rates).u_total
    acc = traj.accumulators_at(t)
    supply = (traj.sys.params.r + traj.sys.params.alpha) * (t - traj.t_start)
    return u_t - u_0 - supply + float(acc[ACC_TOTAL_LOSS]) + float(acc[ACC_QUARTZ_REMOVED])


def quartz_balance_residual(traj: Trajectory, t: float) -> float:
    """Quartz balance defect ``X(t) - X(t0) - alpha (t - t0) + A2(t)``."""
    traj._check_range(t)
    rates = traj.sys.rates
    x_t = compute_moments(dense_eval(traj, t), rates).x_total
    x_0 = compute_moments(traj.initial_state, rates).x_total
    acc = traj.accumulators_at(t)
    return x_t - x_0 - traj.sys.params.alpha * (t - traj.t_start) + float(acc[ACC_QUARTZ_REMOVED])


def macrophage_balance_residual(traj: Trajectory, t: float) -> float:
    """Macrophage balance defect ``M(t) - M(t0) - r (t - t0) + A1(t)``."""
    traj._check_range(t)
    rates = traj.sys.rates
    m_t = compute_moments(dense_eval(traj, t), rates).m_total
    m_0 = compute_moments(traj.initial_state, rates).m_total
    acc = traj.accumulators_at(t)
    return m_t - m_0 - traj.sys.params.r * (t - traj.t_start) + float(acc[ACC_TOTAL_LOSS])


WeightsLike = Union[MomentWeights, Sequence[float], np.ndarray]


def _weight_vector(w: WeightsLike, n: int) -> np.ndarray:
    g = np.asarray(w.g if isinstance(w, MomentWeights) else w, dtype=float)
    if g.shape != (n + 1,):
        raise ValueError(f"expected {n + 1} weights, got shape {g.shape}")
    return g


def moment_identity_residual(
    traj: Trajectory, w: WeightsLike, m: int, t1: float, t2: float
) -> float:
    """Defect of the integrated g-weighted tail balance over ``[t1, t2]``.

    For any real weights ``g`` and ``1 <= m <= n`` the exact truncated flow
    satisfies

        sum_{i>=m} g_i M_i(t2) - sum_{i>=m} g_i M_i(t1)
          + int sum_{i>=m} g_i (p_i + q_i) M_i
          = g_m F_m-increment + int x sum_{m<=i<=n-1} (g_{i+1} - g_i) k_i M_i

    where the flux boundary term comes from the co-integrated accumulator
    ``F_m`` (raises :class:`MissingAccumulator` when it was not requested).
    """
    rates = traj.sys.rates
    n = rates.n
    if not 1 <= m <= n:
        raise ValueError(f"m must lie in 1..{n}, got {m}")
    _check_window(traj, t1, t2)
    g = _weight_vector(w, n)

    def tail_sum(t: float) -> float:
        s = dense_eval(traj, t)
        return float(g[m:] @ s.M[m:])

    loss_coef = np.zeros(n + 1)
    loss_coef[m:] = g[m:] * traj.sys.loss[m:]
    gain_coef = np.zeros(n + 1)
    gain_coef[m:n] = (g[m + 1:] - g[m:n]) * rates.k[m:n]

    flux_term = g[m] * (traj.flux_at(m, t2) - traj.flux_at(m, t1))
    return (
        tail_sum(t2)
        - tail_sum(t1)
        + _path_integral(traj, loss_coef, t1, t2, times_x=False)
        - flux_term
        - _path_integral(traj, gain_coef, t1, t2, times_x=True)
    )


@dataclass(frozen=True)
class GronwallReport:
    """Outcome of an exponential-envelope check.

    ``c1_used`` is the rigorous constant actually compared against (the
    initial bound of the left-hand side inflated by the Gronwall construction
    so that the envelope exponent can be ``c2`` itself), ``c1_apriori`` the
    coarse a-priori constant ``k_0 g_1 (c2/C)^2 T + sum g_i M_i(0)`` of the
    classical construction, and ``c1_fitted`` the smallest constant that
    would still dominate the observed run.  None of the three is silently
    trusted; all are reported.
    """

    ok: bool
    margin: float
    max_lhs: float
    c1_used: float
    c1_apriori: float
    c1_fitted: float
    c2: float
    growth_constant: float


def _relative_margins(lhs: np.ndarray, bounds: np.ndarray) -> np.ndarray:
    """(bound - lhs) / bound with the degenerate cases pinned.

    A zero bound is satisfied only by a nonpositive left-hand side; an
    infinite bound (the envelope constant overflowed, which valid weights
    only reach with an astronomically safe margin) counts as fully slack.
    """
    with np.errstate(invalid="ignore", divide="ignore"):
        rel = np.where(bounds > 0.0, (bounds - lhs) / bounds, np.where(lhs <= 0.0, 1.0, -math.inf))
    return np.where(np.isinf(bounds) & np.isfinite(lhs), 1.0, rel)


def _envelope_data(traj: Trajectory, w: MomentWeights):
    """Per-sample left-hand side and envelope constants for weights ``w``.

    The left-hand side is ``sum_{i>=1} g_i M_i(t) + int_{t0}^t sum_{i>=1}
    g_i (p_i + q_i) M_i``; by the weighted balance and Gronwall's lemma it is
    dominated by ``c1 * exp(c2 (t - t0))`` with ``c2 = ||y0||_1 + (r+alpha) T``
    once ``c1`` absorbs the boundary-flux bound and the growth constant of
    the weights.
    """
    rates = traj.sys.rates
    g = _weight_vector(w, rates.n)
    if np.any(g < 0.0):
        raise InvalidWeights("weights must be nonnegative")
    chk = validate_weights(w, rates)
    if not chk.delta_ok:
        raise InvalidWeights(
            f"weight increments must all be >= delta > 0 (delta={w.delta})"
        )
    if not math.isfinite(chk.C_min):
        raise InvalidWeights("growth constant (g_{i+1}-g_i) k_i / g_i is unbounded")
    C = chk.C_min
    params = traj.sys.params
    T = traj.duration
    c2 = norm_mu(traj.initial_state, 1.0) + (params.r + params.alpha) * T

    loss_coef = np.zeros(rates.n + 1)
    loss_coef[1:] = g[1:] * traj.sys.loss[1:]
    lhs = traj.phase[:, 2:] @ g[1:] + _cumulative_loss(traj, loss_coef)

    with np.errstate(over="ignore"):
        c1_init = float(lhs[0]) + rates.k[0] * g[1] * c2 * c2 * T
        c1_used = c1_init * math.exp(min(max(C - 1.0, 0.0) * c2 * T, 700.0))
        bounds = c1_used * np.exp(c2 * (traj.t - traj.t_start))
    return g, C, c2, lhs, c1_init, c1_used, bounds


def gronwall_check(traj: Trajectory, w: MomentWeights) -> GronwallReport:
    """Verify the exponential envelope for the g-weighted loss-augmented moment.

    ``ok`` is a theorem-backed guarantee for valid weights: a failure flags
    an integrator or accumulator bug, not model behaviour.  ``margin`` is the
    worst relative slack ``(bound - lhs) / bound`` over the samples.
    """
    rates = traj.sys.rates
    g, C, c2, lhs, _, c1_used, bounds = _envelope_data(traj, w)
    T = traj.duration

    if rates.k[0] * g[1] == 0.0:
        boundary = 0.0
    elif C == 0.0:
        boundary = math.inf
    else:
        boundary = rates.k[0] * g[1] * (c2 / C) ** 2 * T
    c1_apriori = boundary + float(lhs[0])
    with np.errstate(over="ignore"):
        c1_fitted = float(np.max(lhs * np.exp(-c2 * (traj.t - traj.t_start))))

    ok = bool(np.all(lhs <= bounds))
    return GronwallReport(
        ok=ok,
        margin=float(np.min(_relative_margins(lhs, bounds))),
        max_lhs=float(np.max(lhs)),
        c1_used=c1_used,
        c1_apriori=c1_apriori,
        c1_fitted=c1_fitted,
        c2=c2,
        growth_constant=C,
    )

"""Adaptive integration of the truncated system with co-integrated balance accumulators.

The integration state is augmented with running integrals that the balance
identities need:

    A1(t) = int_0^t sum_i (p_i + q_i) M_i        (total loss)
    A2(t) = int_0^t sum_i i p_i M_i              (quartz removed by the escalator)
    A3(t) = int_0^t sum_i i q_i M_i              (quartz released by cell death)
    A4(t) = int_0^t x sum_{i<=n-1} k_i M_i       (quartz ingested)

plus one flux integral F_m(t) = int_0^t x k_{m-1} M_{m-1} per requested
cohort boundary ``m``.  They ride inside the ODE state, so the same stepper
and the same error control apply to them; residual checks then probe the
model, not a quadrature scheme.

Negativity policy: the exact flow preserves the nonnegative cone, so small
numerical undershoots are clamped to zero when samples are recorded and when
dense output is evaluated, while an undershoot below ``negativity_floor``
(default ``-100 * abs_tol``) aborts the run - that deep a violation signals
tolerances too loose for the problem, not model behaviour.

Integrations are sequential; distinct integrations share no mutable state and
may run concurrently.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import BDF, RK45, OdeSolution

from .model import State
from .truncation import TruncatedSystem

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "integrate",
    "dense_eval",
    "IntegrationError",
    "StepSizeUnderflow",
    "NegativityViolation",
    "OutOfRange",
    "MissingAccumulator",
    "ACC_TOTAL_LOSS",
    "ACC_QUARTZ_REMOVED",
    "ACC_QUARTZ_RELEASED",
    "ACC_QUARTZ_INGESTED",
]

# Accumulator slots appended after the phase components.
ACC_TOTAL_LOSS = 0        # A1
ACC_QUARTZ_REMOVED = 1    # A2
ACC_QUARTZ_RELEASED = 2   # A3
ACC_QUARTZ_INGESTED = 3   # A4
_NUM_BASE_ACC = 4


class IntegrationError(RuntimeError):
    """Base class for numerical failures during integration."""


class StepSizeUnderflow(IntegrationError):
    """The stepper could not meet the tolerances; consider the stiff method."""


class NegativityViolation(IntegrationError):
    """A component fell below the negativity floor; tolerances are too loose."""


class OutOfRange(ValueError):
    """Requested time lies outside the trajectory's range."""


class MissingAccumulator(KeyError):
    """A flux integral was requested that was not co-integrated."""


@dataclass(frozen=True)
class IntegratorConfig:
    """Error control and policy knobs.

    ``method`` is ``"rk45"`` (explicit Dormand-Prince 5(4), the default) or
    ``"bdf"`` (implicit backward differentiation for stiff cases, fed by the
    banded-plus-border Jacobian).  Switching is always explicit, never silent.
    Defaults leave the 1e-6 residual thresholds three orders of headroom.
    """

    rel_tol: float = 1e-9
    abs_tol: float = 1e-12
    max_step: float = math.inf
    negativity_floor: Optional[float] = None
    method: str = "rk45"

    def __post_init__(self) -> None:
        if not (self.rel_tol > 0.0 and self.abs_tol > 0.0):
            raise ValueError("rel_tol and abs_tol must be positive")
        if not self.max_step > 0.0:
            raise ValueError("max_step must be positive")
        if self.negativity_floor is not None and self.negativity_floor > 0.0:
            raise ValueError("negativity_floor must be <= 0")
        if self.method not in ("rk45", "bdf"):
            raise ValueError(f"method must be 'rk45' or 'bdf', got {self.method!r}")

    @property
    def floor(self) -> float:
        return self.negativity_floor if self.negativity_floor is not None else -100.0 * self.abs_tol


def _augmented_rhs(sys: TruncatedSystem, flux_orders: Tuple[int, ...]):
    dim = sys.dimension
    r = sys.params.r
    alpha = sys.params.alpha
    k = sys.k_masked
    loss = sys.loss
    ip = sys.i_times_p
    iq = sys.i_times_q
    flux_idx = np.array([m - 1 for m in flux_orders], dtype=int)

    def fun(t: float, z: np.ndarray) -> np.ndarray:
        x = z[0]
        M = z[1:dim]
        flow = (x * k) * M
        out = np.zeros_like(z)
        out[1] = r - flow[0] - loss[0] * M[0]
        out[2:dim] = flow[:-1] - flow[1:] - loss[1:] * M[1:]
        total_flow = flow.sum()
        out[0] = alpha - total_flow + iq @ M
        out[dim + ACC_TOTAL_LOSS] = loss @ M
        out[dim + ACC_QUARTZ_REMOVED] = ip @ M
        out[dim + ACC_QUARTZ_RELEASED] = iq @ M
        out[dim + ACC_QUARTZ_INGESTED] = total_flow
        if len(flux_idx):
            out[dim + _NUM_BASE_ACC:] = flow[flux_idx]
        return out

    return fun


def _augmented_jac(sys: TruncatedSystem, flux_orders: Tuple[int, ...]):
    dim = sys.dimension
    n_acc = _NUM_BASE_ACC + len(flux_orders)
    k = sys.k_masked
    loss = sys.loss
    ip = sys.i_times_p
    iq = sys.i_times_q

    def jac(t: float, z: np.ndarray):
        J = np.zeros((dim + n_acc, dim + n_acc))
        dxdx, dxdm, dmdx, diag, sub = sys.jacobian_parts(z[:dim])
        J[0, 0] = dxdx
        J[0, 1:dim] = dxdm
        J[1:dim, 0] = dmdx
        idx = np.arange(1, dim)
        J[idx, idx] = diag
        J[idx[1:], idx[1:] - 1] = sub
        x = z[0]
        M = z[1:dim]
        J[dim + ACC_TOTAL_LOSS, 1:dim] = loss
        J[dim + ACC_QUARTZ_REMOVED, 1:dim] = ip
        J[dim + ACC_QUARTZ_RELEASED, 1:dim] = iq
        J[dim + ACC_QUARTZ_INGESTED, 0] = k @ M
        J[dim + ACC_QUARTZ_INGESTED, 1:dim] = x * k
        for pos, m in enumerate(flux_orders):
            J[dim + _NUM_BASE_ACC + pos, 0] = k[m - 1] * M[m - 1]
            J[dim + _NUM_BASE_ACC + pos, m] = x * k[m - 1]
        if dim + n_acc >= 64:
            import scipy.sparse

            return scipy.sparse.csc_matrix(J)
        return J

    return jac


@dataclass(eq=False)
class Trajectory:
    """Accepted-step samples of one integration plus dense output.

    ``samples`` holds the clamped phase rows (strictly increasing in time,
    all in the cone); ``accumulators`` the co-integrated balance integrals at
    the same times.  ``pre_clamp_min`` records the most negative raw phase
    component seen before clamping, for cone-preservation diagnostics.
    """

    sys: TruncatedSystem
    cfg: IntegratorConfig
    t: np.ndarray
    phase: np.ndarray
    accumulators: np.ndarray
    flux_orders: Tuple[int, ...]
    pre_clamp_min: float
    _sol: OdeSolution = field(repr=False)

    @property
    def t_start(self) -> float:
        return float(self.t[0])

    @property
    def t_end(self) -> float:
        return float(self.t[-1])

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start

    @property
    def num_samples(self) -> int:
        return len(self.t)

    def state(self, i: int) -> State:
        row = self.phase[i]
        return State(t=float(self.t[i]), x=float(row[0]), M=row[1:])

    @property
    def samples(self) -> list:
        return [self.state(i) for i in range(self.num_samples)]

    @property
    def initial_state(self) -> State:
        return self.state(0)

    @property
    def final_state(self) -> State:
        return self.state(-1)

    def _check_range(self, t: float) -> None:
        if not (self.t_start <= t <= self.t_end):
            raise OutOfRange(f"t={t} outside trajectory range [{self.t_start}, {self.t_end}]")

    def dense_matrix(self, ts: np.ndarray) -> np.ndarray:
        """Augmented rows evaluated at sorted times, phase part clamped to the cone."""
        Z = self._sol(ts)
        dim = self.sys.dimension
        np.maximum(Z[:dim], 0.0, out=Z[:dim])
        return Z

    def dense_vector(self, t: float) -> np.ndarray:
        self._check_range(t)
        z = self._sol(t)
        dim = self.sys.dimension
        np.maximum(z[:dim], 0.0, out=z[:dim])
        return z

    def accumulators_at(self, t: float) -> np.ndarray:
        """Balance integrals A1..A4 (and any flux integrals) at time ``t``."""
        self._check_range(t)
        i = np.searchsorted(self.t, t)
        if i < self.num_samples and self.t[i] == t:
            return self.accumulators[i].copy()
        return self._sol(t)[self.sys.dimension:]

    def flux_slot(self, m: int) -> int:
        """Index of F_m within the accumulator block."""
        try:
            return _NUM_BASE_ACC + self.flux_orders.index(m)
        except ValueError:
            raise MissingAccumulator(
                f"flux integral F_{m} was not requested at integration time "
                f"(available: {list(self.flux_orders)})"
            ) from None

    def flux_at(self, m: int, t: float) -> float:
        return float(self.accumulators_at(t)[self.flux_slot(m)])


_STEPPERS = {"rk45": RK45, "bdf": BDF}


def integrate(
    sys: TruncatedSystem,
    y0: State,
    t_end: float,
    cfg: Optional[IntegratorConfig] = None,
    flux_orders: Sequence[int] = (),
) -> Trajectory:
    """Integrate from ``y0`` (at time ``y0.t``) up to ``t_end``.

    Raises :class:`StepSizeUnderflow` when the stepper stalls (switch to the
    stiff method) and :class:`NegativityViolation` when any phase component
    undershoots the negativity floor.
    """
    cfg = cfg or IntegratorConfig()
    if y0.n != sys.n:
        raise ValueError(f"initial state carries cohorts 0..{y0.n} but the system expects 0..{sys.n}")
    if not t_end > y0.t:
        raise ValueError(f"t_end must exceed the initial time {y0.t}, got {t_end}")
    flux = tuple(dict.fromkeys(int(m) for m in flux_orders))
    for m in flux:
        if not 1 <= m <= sys.n:
            raise ValueError(f"flux order must lie in 1..{sys.n}, got {m}")

    dim = sys.dimension
    fun = _augmented_rhs(sys, flux)
    z0 = np.concatenate([y0.vector(), np.zeros(_NUM_BASE_ACC + len(flux))])
    kwargs = dict(rtol=cfg.rel_tol, atol=cfg.abs_tol, max_step=cfg.max_step)
    if cfg.method == "bdf":
        kwargs["jac"] = _augmented_jac(sys, flux)
    solver = _STEPPERS[cfg.method](fun, y0.t, z0, t_end, **kwargs)

    floor = cfg.floor
    ts = [y0.t]
    rows = [z0]
    segments = []
    pre_clamp_min = float(np.min(z0[:dim]))
    while solver.status == "running":
        message = solver.step()
        if solver.status == "failed":
            raise StepSizeUnderflow(f"step size underflow near t={solver.t}: {message}")
        segments.append(solver.dense_output())
        ts.append(solver.t)
        rows.append(solver.y.copy())
        worst = float(np.min(solver.y[:dim]))
        pre_clamp_min = min(pre_clamp_min, worst)
        if worst < floor:
            raise NegativityViolation(
                f"component fell to {worst} (< floor {floor}) at t={solver.t}; tighten tolerances"
            )

    Z = np.asarray(rows)
    phase = np.where(Z[:, :dim] < 0.0, 0.0, Z[:, :dim])
    return Trajectory(
        sys=sys,
        cfg=cfg,
        t=np.asarray(ts),
        phase=phase,
        accumulators=Z[:, dim:],
        flux_orders=flux,
        pre_clamp_min=pre_clamp_min,
        _sol=OdeSolution(np.asarray(ts), segments),
    )


def dense_eval(traj: Trajectory, t: float) -> State:
    """Interpolated state at ``t``; a stored sample time returns that sample exactly."""
    traj._check_range(t)
    i = np.searchsorted(traj.t, t)
    if i < traj.num_samples and traj.t[i] == t:
        return traj.state(i)
    z = traj.dense_vector(t)
    return State(t=float(t), x=float(z[0]), M=z[1:traj.sys.dimension])

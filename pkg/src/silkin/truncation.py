"""Truncated vector field and its Jacobian.

At truncation order ``n`` the dynamics on ``(x, M_0 .. M_n)`` are

    dM_0/dt = r - k_0 x M_0 - (p_0 + q_0) M_0
    dM_i/dt = k_{i-1} x M_{i-1} - k_i x M_i - (p_i + q_i) M_i    (1 <= i <= n-1)
    dM_n/dt = k_{n-1} x M_{n-1} - (p_n + q_n) M_n
    dx/dt   = alpha - x * sum_{i<=n-1} k_i M_i + sum_{i<=n} i q_i M_i

i.e. the stored ``k_n`` is masked to zero, the ingestion sum in dx/dt stops at
``n - 1`` while the release sum runs to ``n`` inclusive.  Cohorts above ``n``
would stay identically zero, which is what makes the finite system a
self-consistent approximation of the infinite one.

``eval_rhs`` and ``eval_jacobian`` are pure functions of their arguments and
safe to call concurrently.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse

from .model import ModelParams, RateTable, State

__all__ = ["TruncatedSystem", "BandedBorderJacobian", "eval_rhs", "eval_jacobian"]


@dataclass(frozen=True, eq=False)
class TruncatedSystem:
    """A rate table plus supply rates, fixed at one truncation order."""

    params: ModelParams
    rates: RateTable

    @property
    def n(self) -> int:
        return self.rates.n

    @property
    def dimension(self) -> int:
        """Phase dimension n + 2 with layout ``(x, M_0 .. M_n)``."""
        return self.rates.n + 2

    # Derived coefficient arrays shared by the RHS, the Jacobian and the
    # balance accumulators.  Cached once; read-only.
    @cached_property
    def k_masked(self) -> np.ndarray:
        k = self.rates.k.copy()
        k[-1] = 0.0
        k.setflags(write=False)
        return k

    @cached_property
    def loss(self) -> np.ndarray:
        pq = self.rates.p + self.rates.q
        pq.setflags(write=False)
        return pq

    @cached_property
    def i_times_p(self) -> np.ndarray:
        ip = np.arange(self.n + 1, dtype=float) * self.rates.p
        ip.setflags(write=False)
        return ip

    @cached_property
    def i_times_q(self) -> np.ndarray:
        iq = np.arange(self.n + 1, dtype=float) * self.rates.q
        iq.setflags(write=False)
        return iq

    def rhs(self, v: np.ndarray) -> np.ndarray:
        """Vector field on the flat layout ``[x, M_0, ..., M_n]``."""
        if v.shape != (self.dimension,):
            raise ValueError(f"expected state vector of length {self.dimension}, got {v.shape}")
        x = v[0]
        M = v[1:]
        flow = (x * self.k_masked) * M          # k_i x M_i, zero at i = n
        out = np.empty_like(v)
        out[1] = self.params.r - flow[0] - self.loss[0] * M[0]
        out[2:] = flow[:-1] - flow[1:] - self.loss[1:] * M[1:]
        out[0] = self.params.alpha - flow.sum() + self.i_times_q @ M
        return out

    def jacobian_parts(self, v: np.ndarray):
        """Pieces of d(RHS)/d(x, M): border scalar/row/column and the bidiagonal M block."""
        if v.shape != (self.dimension,):
            raise ValueError(f"expected state vector of length {self.dimension}, got {v.shape}")
        x = v[0]
        M = v[1:]
        k = self.k_masked
        dxdx = -float(k @ M)
        dxdm = -k * x + self.i_times_q
        kM = k * M
        dmdx = np.empty(self.n + 1)
        dmdx[0] = -kM[0]
        dmdx[1:] = kM[:-1] - kM[1:]
        diag = -(k * x + self.loss)
        sub = k[:-1] * x
        return dxdx, dxdm, dmdx, diag, sub


@dataclass(frozen=True, eq=False)
class BandedBorderJacobian:
    """Jacobian in banded-plus-border form.

    The M block is lower bidiagonal (``diag`` and ``sub``); ``dmdx`` is the
    dense column of x-sensitivities, ``dxdm`` the dense row of the x equation
    and ``dxdx`` its corner entry.
    """

    dxdx: float
    dxdm: np.ndarray
    dmdx: np.ndarray
    diag: np.ndarray
    sub: np.ndarray

    @property
    def dimension(self) -> int:
        return len(self.diag) + 1

    def to_dense(self) -> np.ndarray:
        d = self.dimension
        J = np.zeros((d, d))
        J[0, 0] = self.dxdx
        J[0, 1:] = self.dxdm
        J[1:, 0] = self.dmdx
        idx = np.arange(1, d)
        J[idx, idx] = self.diag
        J[idx[1:], idx[1:] - 1] = self.sub
        return J

    def to_sparse(self) -> scipy.sparse.csc_matrix:
        return scipy.sparse.csc_matrix(self.to_dense())


def eval_rhs(sys: TruncatedSystem, s: State) -> np.ndarray:
    """Time derivative ``(dx/dt, dM_0/dt, ..., dM_n/dt)`` at a state."""
    if s.n != sys.n:
        raise ValueError(f"state carries cohorts 0..{s.n} but the system expects 0..{sys.n}")
    return sys.rhs(s.vector())


def eval_jacobian(sys: TruncatedSystem, s: State) -> BandedBorderJacobian:
    """Jacobian of :func:`eval_rhs` with respect to ``(x, M_0 .. M_n)``."""
    if s.n != sys.n:
        raise ValueError(f"state carries cohorts 0..{s.n} but the system expects 0..{sys.n}")
    dxdx, dxdm, dmdx, diag, sub = sys.jacobian_parts(s.vector())
    return BandedBorderJacobian(dxdx=dxdx, dxdm=dxdm, dmdx=dmdx, diag=diag, sub=sub)

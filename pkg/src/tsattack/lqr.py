"""Batch (non-recursive) finite-horizon LQR driven by an external timeseries.

The plant is

    x_{t+1} = A x_t + B u_t + C s_t,      t = 0 .. T-1,

where s_t is an externally forecast input the controller cannot influence.
Stacking the horizon turns every state into an affine function of the
flattened action vector u and series vector s (both time-major), so the
quadratic cost

    J(u; s, x0) = sum_{t=0}^{T} x_t' Q x_t + sum_{t=0}^{T-1} u_t' R u_t

collapses to  u' K u + 2 k(x0, s)' u + const  with K positive definite and
k affine in s.  Every attack in this package works on the resulting
coefficients: the optimal-action map -K^{-1} k, the series-to-action
coupling L, and the forecast-error sensitivity Psi = L' K^{-1} L.

K is never inverted explicitly; a Cholesky factorization is stored on the
batch form and reused for all solves.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ConfigurationError

SYMMETRY_TOL = 1e-12


def _as_matrix(value, name: str) -> np.ndarray:
    mat = np.atleast_2d(np.asarray(value, dtype=float))
    if mat.ndim != 2:
        raise ConfigurationError(f"{name} must be a 2-D matrix, got shape {mat.shape}")
    if not np.all(np.isfinite(mat)):
        raise ConfigurationError(f"{name} contains non-finite entries")
    return mat


def _check_spd(mat: np.ndarray, name: str) -> None:
    if np.max(np.abs(mat - mat.T)) > SYMMETRY_TOL:
        raise ConfigurationError(f"{name} is not symmetric (tolerance {SYMMETRY_TOL})")
    try:
        cho_factor(mat)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError(f"{name} is not positive definite") from exc


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """The controller's world model.

    Attributes:
        A: State transition matrix (n x n).
        B: Action gain matrix (n x m).
        C: Series input gain matrix (n x p).
        Q: State cost weight (n x n), symmetric positive definite.
        R: Action cost weight (m x m), symmetric positive definite.
        T: Horizon length in steps (>= 1).
        x0: Initial state (n,).

    Scalars are accepted for all matrix fields (the n = m = p = 1 shorthand).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    T: int
    x0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _as_matrix(self.A, "A"))
        object.__setattr__(self, "B", _as_matrix(self.B, "B"))
        object.__setattr__(self, "C", _as_matrix(self.C, "C"))
        object.__setattr__(self, "Q", _as_matrix(self.Q, "Q"))
        object.__setattr__(self, "R", _as_matrix(self.R, "R"))
        object.__setattr__(self, "x0", np.atleast_1d(np.asarray(self.x0, dtype=float)))
        if not isinstance(self.T, (int, np.integer)) or self.T < 1:
            raise ConfigurationError(f"T must be a positive integer, got {self.T!r}")
        object.__setattr__(self, "T", int(self.T))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ConfigurationError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n or self.C.shape[0] != n:
            raise ConfigurationError("B and C must have the same row count as A")
        if self.Q.shape != (n, n):
            raise ConfigurationError(f"Q must be {n}x{n}, got {self.Q.shape}")
        m = self.B.shape[1]
        if self.R.shape != (m, m):
            raise ConfigurationError(f"R must be {m}x{m}, got {self.R.shape}")
        if self.x0.shape != (n,):
            raise ConfigurationError(f"x0 must have length {n}, got {self.x0.shape}")
        _check_spd(self.Q, "Q")
        _check_spd(self.R, "R")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def p(self) -> int:
        return self.C.shape[1]


@dataclass(frozen=True, eq=False)
class BatchForm:
    """Stacked-horizon matrices and derived cost coefficients.

    ``M[t]`` and ``N[t]`` map the flat action / series vectors to x_{t+1};
    ``x0_response[t]`` is the free response A^{t+1} x0.  After
    :func:`build_cost_form` the quadratic cost coefficients are populated:

        K       (mT x mT)  quadratic action coefficient, SPD
        L       (mT x pT)  series-to-cost coupling, sum_t M_t' Q N_t
        Psi     (pT x pT)  forecast-error sensitivity L' K^{-1} L, PSD
        k_const (mT,)      x0-dependent part of the linear term

    The linear term of the cost is k(x0, s) = k_const + L s; ``k_lin`` is an
    alias for L.  Instances are immutable; all operations on them are pure.
    """

    spec: SystemSpec
    M: np.ndarray
    N: np.ndarray
    x0_response: np.ndarray
    K: Optional[np.ndarray] = None
    L: Optional[np.ndarray] = None
    Psi: Optional[np.ndarray] = None
    k_const: Optional[np.ndarray] = None
    K_factor: Optional[tuple] = None

    @property
    def k_lin(self) -> Optional[np.ndarray]:
        return self.L

    @property
    def m_total(self) -> int:
        return self.spec.m * self.spec.T

    @property
    def p_total(self) -> int:
        return self.spec.p * self.spec.T


def _require_cost_form(batch: BatchForm) -> None:
    if batch.K is None or batch.L is None or batch.K_factor is None:
        raise ValueError("cost form not built; call build_cost_form first")


def check_series(batch: BatchForm, s, name: str = "s") -> np.ndarray:
    """Validate a flat time-major series vector of length p*T."""
    vec = np.asarray(s, dtype=float).ravel()
    if vec.shape != (batch.p_total,):
        raise ValueError(
            f"{name} must have length p*T = {batch.p_total}, got {vec.shape[0]}"
        )
    if not np.all(np.isfinite(vec)):
        raise ValueError(f"{name} contains non-finite entries")
    return vec


def _check_actions(batch: BatchForm, u) -> np.ndarray:
    vec = np.asarray(u, dtype=float).ravel()
    if vec.shape != (batch.m_total,):
        raise ValueError(
            f"u must have length m*T = {batch.m_total}, got {vec.shape[0]}"
        )
    return vec


def stack_dynamics(spec: SystemSpec) -> BatchForm:
    """Unroll the recursion into x_{t+1} = A^{t+1} x0 + M_t u + N_t s.

    Row t of the returned stacks covers x_{t+1}:
    M_t = [A^t B, A^{t-1} B, ..., B, 0, ..., 0] and N_t likewise with C,
    right-padded with zero blocks to the full mT / pT width.
    """
    n, m, p, T = spec.n, spec.m, spec.p, spec.T
    M = np.zeros((T, n, m * T))
    N = np.zeros((T, n, p * T))
    x0_response = np.zeros((T, n))

    # A^j B and A^j C for j = 0 .. T-1, built incrementally.
    AjB = np.zeros((T, n, m))
    AjC = np.zeros((T, n, p))
    AjB[0], AjC[0] = spec.B, spec.C
    for j in range(1, T):
        AjB[j] = spec.A @ AjB[j - 1]
        AjC[j] = spec.A @ AjC[j - 1]

    free = spec.A @ spec.x0
    for t in range(T):
        x0_response[t] = free
        free = spec.A @ free
        for j in range(t + 1):
            M[t, :, j * m:(j + 1) * m] = AjB[t - j]
            N[t, :, j * p:(j + 1) * p] = AjC[t - j]
    return BatchForm(spec=spec, M=M, N=N, x0_response=x0_response)


def build_cost_form(spec: SystemSpec, batch: BatchForm) -> BatchForm:
    """Populate K, L, Psi, and k_const on a stacked batch form.

    Psi is computed through the Cholesky factorization of K (never an
    explicit inverse) and symmetrized afterwards to remove roundoff skew
    before any eigendecomposition downstream.
    """
    QM = np.einsum("ab,tbj->taj", spec.Q, batch.M)
    QN = np.einsum("ab,tbj->taj", spec.Q, batch.N)
    K = np.kron(np.eye(spec.T), spec.R) + np.einsum("tki,tkj->ij", batch.M, QM)
    K = 0.5 * (K + K.T)
    L = np.einsum("tki,tkj->ij", batch.M, QN)
    k_const = np.einsum("tki,tk->i", batch.M, batch.x0_response @ spec.Q)
    try:
        factor = cho_factor(K)
    except np.linalg.LinAlgError as exc:
        raise ConfigurationError("K is not positive definite; check Q and R") from exc
    Psi = L.T @ cho_solve(factor, L)
    Psi = 0.5 * (Psi + Psi.T)
    return replace(batch, K=K, L=L, Psi=Psi, k_const=k_const, K_factor=factor)


def batch_form(spec: SystemSpec) -> BatchForm:
    """Stack the dynamics and build the cost form in one pass."""
    return build_cost_form(spec, stack_dynamics(spec))


def linear_term(batch: BatchForm, s) -> np.ndarray:
    """Linear cost coefficient k(x0, s) = k_const + L s."""
    _require_cost_form(batch)
    s = check_series(batch, s)
    return batch.k_const + batch.L @ s


def solve_unconstrained(batch: BatchForm, s) -> np.ndarray:
    """Optimal flat action vector u* = -K^{-1} k(x0, s)."""
    _require_cost_form(batch)
    return -cho_solve(batch.K_factor, linear_term(batch, s))


def rollout_cost(spec: SystemSpec, u, s) -> float:
    """Ground-truth cost of actions u simulated against the real series s.

    Simulates x_{t+1} = A x_t + B u_t + C s_t from x0 and accumulates
    sum_{t=0}^{T} x_t' Q x_t + sum_{t=0}^{T-1} u_t' R u_t.  Attacked
    controllers are always costed here against the real series, never the
    perturbed one.
    """
    u = np.asarray(u, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    n, m, p, T = spec.n, spec.m, spec.p, spec.T
    if u.shape != (m * T,):
        raise ValueError(f"u must have length m*T = {m * T}, got {u.shape[0]}")
    if s.shape != (p * T,):
        raise ValueError(f"s must have length p*T = {p * T}, got {s.shape[0]}")
    x = spec.x0
    total = float(x @ spec.Q @ x)
    for t in range(T):
        u_t = u[t * m:(t + 1) * m]
        s_t = s[t * p:(t + 1) * p]
        total += float(u_t @ spec.R @ u_t)
        x = spec.A @ x + spec.B @ u_t + spec.C @ s_t
        total += float(x @ spec.Q @ x)
    return total


def action_gap(batch: BatchForm, s_hat, s) -> np.ndarray:
    """Action error -K^{-1} L (s_hat - s) caused by observing s_hat.

    Equals solve_unconstrained(s_hat) - solve_unconstrained(s); the error in
    control is linear in the forecast error.
    """
    _require_cost_form(batch)
    s_hat = check_series(batch, s_hat, "s_hat")
    s = check_series(batch, s)
    return -cho_solve(batch.K_factor, batch.L @ (s_hat - s))


def cost_delta_quadratic(batch: BatchForm, s_hat, s) -> float:
    """Cost increase (s_hat - s)' Psi (s_hat - s) of acting on s_hat.

    This is the closed-form gap between costing the controller's response to
    s_hat and its response to s, both evaluated against the real series s.
    """
    _require_cost_form(batch)
    s_hat = check_series(batch, s_hat, "s_hat")
    s = check_series(batch, s)
    d = s_hat - s
    return float(d @ batch.Psi @ d)

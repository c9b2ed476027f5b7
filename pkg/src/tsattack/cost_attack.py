"""Closed-form worst-case cost attack and the control-agnostic baseline.

Over the L2 ball ||s_hat - s||_2 <= delta the cost increase
(s_hat - s)' Psi (s_hat - s) is maximized exactly by stepping delta along the
dominant eigenvector of Psi, attaining delta^2 * lambda_1.  Both signed
optima are surfaced; the perturbation direction depends only on the system,
never on the series or the initial state.  The baseline perturbs by delta in
a uniformly random direction instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lqr import BatchForm, check_series, cost_delta_quadratic, _require_cost_form

#: Diagnostic flag values carried by AttackResult.flags.
FLAG_ZERO_GRADIENT = "zero-gradient"
FLAG_INFEASIBLE = "infeasible"
FLAG_WEAK_ACTIVE = "weak-active"


@dataclass(frozen=True, eq=False)
class EigenPair:
    """Dominant eigenvalue/eigenvector of the sensitivity matrix."""

    lambda1: float
    v1: np.ndarray


@dataclass(frozen=True, eq=False)
class AttackResult:
    """Outcome of one attack on one series.

    Attributes:
        s_hat: The perturbed series handed to the controller.
        delta: The L2 perturbation budget.
        attained: Value of the attack's target function at s_hat
            (+inf when the attacked problem became infeasible).
        norm_used: Actual ||s_hat - s||_2 spent.
        flags: Diagnostics such as ``zero-gradient`` / ``infeasible``.
    """

    s_hat: np.ndarray
    delta: float
    attained: float
    norm_used: float
    flags: frozenset = frozenset()

    def __post_init__(self):
        if self.norm_used > self.delta * (1.0 + 1e-9):
            raise ValueError(
                f"perturbation norm {self.norm_used} exceeds budget {self.delta}"
            )


def dominant_eigenpair(psi: np.ndarray) -> EigenPair:
    """Largest eigenvalue and unit eigenvector of a symmetric PSD matrix.

    The eigenvector is canonicalized so its first component of magnitude
    above 1e-12 is positive.  With a degenerate top eigenvalue any
    eigenvector from the solver's deterministic ordering is returned.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.ndim != 2 or psi.shape[0] != psi.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {psi.shape}")
    if np.max(np.abs(psi - psi.T)) > 1e-10:
        raise ValueError("matrix is not symmetric to 1e-10")
    eigvals, eigvecs = np.linalg.eigh(0.5 * (psi + psi.T))
    lambda1 = float(max(eigvals[-1], 0.0))
    v1 = eigvecs[:, -1].copy()
    nonzero = np.nonzero(np.abs(v1) > 1e-12)[0]
    if nonzero.size and v1[nonzero[0]] < 0:
        v1 = -v1
    return EigenPair(lambda1=lambda1, v1=v1)


def cost_attack(batch: BatchForm, s, delta: float):
    """Worst-case cost perturbation s +/- delta*v1 of the series.

    Returns the canonical result (positive eigenvector sign) and its mirror;
    both attain the same cost increase delta^2 * lambda_1.
    """
    _require_cost_form(batch)
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    s = check_series(batch, s)
    eig = dominant_eigenpair(batch.Psi)
    results = []
    for sign in (1.0, -1.0):
        s_hat = s + sign * delta * eig.v1
        results.append(
            AttackResult(
                s_hat=s_hat,
                delta=float(delta),
                attained=cost_delta_quadratic(batch, s_hat, s),
                norm_used=float(np.linalg.norm(s_hat - s)),
            )
        )
    return results[0], results[1]


def random_sphere_attack(s, delta: float, seed: int) -> AttackResult:
    """Perturb by delta in a uniformly random direction (control-agnostic).

    The direction is a normalized standard-normal draw, deterministic for a
    given seed.  ``attained`` is the control-agnostic objective
    ||s_hat - s||^2 = delta^2; callers who know the system measure the cost
    effect with :func:`tsattack.lqr.cost_delta_quadratic`.
    """
    if delta <= 0:
        raise ValueError(f"delta must be positive, got {delta}")
    s = np.asarray(s, dtype=float).ravel()
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(s.size)
    norm = np.linalg.norm(w)
    while norm < 1e-12:  # probability ~0, but keeps the contract exact
        w = rng.standard_normal(s.size)
        norm = np.linalg.norm(w)
    step = delta * w / norm
    return AttackResult(
        s_hat=s + step,
        delta=float(delta),
        attained=float(step @ step),
        norm_used=float(np.linalg.norm(step)),
    )

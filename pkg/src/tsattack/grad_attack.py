"""Gradient attacks through the constrained controller's solution map.

At an optimum with active rows A the KKT conditions

    2 K u + 2 (k_const + L s_hat) + G_A' mu_A = 0
    G_A u = h0_A + H_A s_hat

define u implicitly as a function of the observed series.  Differentiating
both lines gives a linear system for du/ds_hat that accounts for the series
entering the objective (through L) and the constraint right-hand sides
(through H).  With no active rows this collapses to -K^{-1} L, the
unconstrained action/forecast coupling.

An attack then ascends any differentiable target of the actions: perturb the
series by delta along Unit(J g), where J is the solution-map Jacobian and g
the target's gradient in action space.  When that direction vanishes the
attack returns the series unchanged, flagged ``zero-gradient``; the
cost-change target always stalls this way at the unperturbed optimum of an
unconstrained or action-box controller, since the optimum is a local
extremum of the cost under fixed constraint right-hand sides.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .cost_attack import (
    AttackResult,
    FLAG_INFEASIBLE,
    FLAG_WEAK_ACTIVE,
    FLAG_ZERO_GRADIENT,
)
from .errors import NumericalError
from .lqr import BatchForm, check_series, linear_term, rollout_cost, _require_cost_form
from .qp import ConstraintSet, QpSolution, solve_qp

#: Directions with L2 norm at or below this are treated as zero gradients.
ZERO_DIRECTION_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class SolutionJacobian:
    """Derivative of the controller's actions w.r.t. the observed series.

    ``J[i, j] = d u*_j / d s_hat_i`` (shape pT x mT).  ``weak_active_flag``
    marks solutions where some active constraint had a near-zero dual: the
    derivative is taken from the active branch and may disagree with finite
    differences there.
    """

    J: np.ndarray
    weak_active_flag: bool = False


class TargetFunction(enum.Enum):
    """Differentiable attack targets evaluated on the controller's actions."""

    MAX_ACTION = "max-action"
    MIN_ACTION = "min-action"
    L1_ENERGY = "l1"
    COST_CHANGE = "cost"


def target_value(target: TargetFunction, u, batch: BatchForm, s_real) -> float:
    """Value of the attack target at actions u, judged against the real series."""
    u = np.asarray(u, dtype=float).ravel()
    if target is TargetFunction.MAX_ACTION:
        return float(u.max())
    if target is TargetFunction.MIN_ACTION:
        return float((-u).max())
    if target is TargetFunction.L1_ENERGY:
        return float(np.abs(u).sum())
    if target is TargetFunction.COST_CHANGE:
        return rollout_cost(batch.spec, u, s_real)
    raise ValueError(f"unknown target {target!r}")


def target_gradient(target: TargetFunction, u, batch: BatchForm, s_real) -> np.ndarray:
    """Gradient (or subgradient) of the target w.r.t. the action vector.

    Kinks are resolved deterministically: argmax/argmin ties break to the
    lowest index and sign(0) = 0.
    """
    u = np.asarray(u, dtype=float).ravel()
    if target is TargetFunction.MAX_ACTION:
        g = np.zeros_like(u)
        g[int(np.argmax(u))] = 1.0
        return g
    if target is TargetFunction.MIN_ACTION:
        g = np.zeros_like(u)
        g[int(np.argmin(u))] = -1.0
        return g
    if target is TargetFunction.L1_ENERGY:
        return np.sign(u)
    if target is TargetFunction.COST_CHANGE:
        return 2.0 * batch.K @ u + 2.0 * linear_term(batch, s_real)
    raise ValueError(f"unknown target {target!r}")


def solution_jacobian(
    batch: BatchForm, cons: ConstraintSet, sol: QpSolution
) -> SolutionJacobian:
    """Implicit KKT derivative of the QP solution map at an optimum.

    Rows of G are treated as fixed; derivatives of the multipliers are
    computed but not returned.  Weakly active rows stay in the active set
    (the derivative follows the active branch) and raise the warning flag.
    """
    if not sol.optimal:
        raise ValueError("solution_jacobian requires an optimal QpSolution")
    _require_cost_form(batch)
    mT = batch.m_total
    active = list(sol.active)
    if not active:
        du_ds = -cho_solve(batch.K_factor, batch.L)
        return SolutionJacobian(J=du_ds.T, weak_active_flag=False)

    GA = cons.G[active]
    HA = cons.H[active]
    nA = len(active)
    kkt = np.block([[2.0 * batch.K, GA.T], [GA, np.zeros((nA, nA))]])
    rhs = np.vstack([-2.0 * batch.L, HA])
    try:
        sol_blocks = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        sol_blocks = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    du_ds = sol_blocks[:mT]
    return SolutionJacobian(J=du_ds.T, weak_active_flag=bool(sol.weakly_active))


def finite_difference_jacobian(
    batch: BatchForm, cons: ConstraintSet, s_obs, step: float = 1e-6
) -> SolutionJacobian:
    """Central-difference oracle for :func:`solution_jacobian`.

    Re-solves the QP twice per series coordinate.  Raises when any perturbed
    problem is infeasible, naming the offending coordinate.
    """
    if step <= 0:
        raise ValueError(f"step must be positive, got {step}")
    s_obs = check_series(batch, s_obs, "s_obs")
    J = np.zeros((batch.p_total, batch.m_total))
    for i in range(batch.p_total):
        shifted = s_obs.copy()
        pair = []
        for sign in (1.0, -1.0):
            shifted[i] = s_obs[i] + sign * step
            sol = solve_qp(batch, cons, shifted)
            if not sol.optimal:
                raise NumericalError(
                    "perturbed QP infeasible while differencing series "
                    f"coordinate {i}"
                )
            pair.append(sol.u)
        shifted[i] = s_obs[i]
        J[i] = (pair[0] - pair[1]) / (2.0 * step)
    return SolutionJacobian(J=J, weak_active_flag=False)


def unit(v: np.ndarray) -> np.ndarray:
    """Normalize to unit L2 norm; only valid for norms above the zero tolerance."""
    norm = float(np.linalg.norm(v))
    if norm <= ZERO_DIRECTION_TOL:
        raise ValueError("cannot normalize a (near-)zero vector")
    return v / norm


def project_ball(x: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """Project x onto the L2 ball of the given radius around center."""
    offset = x - center
    norm = float(np.linalg.norm(offset))
    if norm <= radius:
        return x
    return center + offset * (radius / norm)


def _attack_direction(batch, cons, sol, target, s_real):
    grad = target_gradient(target, sol.u, batch, s_real)
    jac = solution_jacobian(batch, cons, sol)
    return jac.J @ grad, jac.weak_active_flag


def single_step_attack(
    batch: BatchForm,
    cons: ConstraintSet,
    s,
    delta: float,
    target: TargetFunction,
) -> AttackResult:
    """One saturated step s + delta * Unit(J g) of the linearized attack.

    ``attained`` is the target evaluated at the controller's response to the
    perturbed series (judged against the real one).  An infeasible attacked
    problem is reported with the ``infeasible`` flag and attained = +inf:
    that outcome is a success for the infeasibility attack angle.
    """
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    s = check_series(batch, s)
    sol = solve_qp(batch, cons, s)
    if not sol.optimal:
        raise ValueError("single_step_attack requires a feasible unattacked problem")
    direction, weak = _attack_direction(batch, cons, sol, target, s)
    flags = {FLAG_WEAK_ACTIVE} if weak else set()

    if np.linalg.norm(direction) <= ZERO_DIRECTION_TOL:
        flags.add(FLAG_ZERO_GRADIENT)
        return AttackResult(
            s_hat=s.copy(),
            delta=float(delta),
            attained=target_value(target, sol.u, batch, s),
            norm_used=0.0,
            flags=frozenset(flags),
        )

    s_hat = s + delta * unit(direction)
    attacked = solve_qp(batch, cons, s_hat)
    if not attacked.optimal:
        flags.add(FLAG_INFEASIBLE)
        attained = np.inf
    else:
        attained = target_value(target, attacked.u, batch, s)
    return AttackResult(
        s_hat=s_hat,
        delta=float(delta),
        attained=float(attained),
        norm_used=float(np.linalg.norm(s_hat - s)),
        flags=frozenset(flags),
    )


def iterated_attack(
    batch: BatchForm,
    cons: ConstraintSet,
    s,
    delta: float,
    target: TargetFunction,
    steps: int = 20,
    step_size: float = None,
) -> AttackResult:
    """Projected gradient ascent on the target within the delta ball.

    Each iteration re-solves the QP and the Jacobian at the current iterate,
    ascends along J g with ``step_size`` (default delta / 10), and projects
    back onto the ball around s.  The best iterate by attained value is kept;
    the candidate pool also contains the saturated single step, so the result
    is never worse than :func:`single_step_attack`.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    if step_size is None:
        step_size = delta / 10.0
    s = check_series(batch, s)

    best = single_step_attack(batch, cons, s, delta, target)
    if FLAG_INFEASIBLE in best.flags or FLAG_ZERO_GRADIENT in best.flags:
        return best

    flags = set(best.flags)
    s_cur = s
    sol_cur = solve_qp(batch, cons, s_cur)
    for _ in range(steps):
        direction, weak = _attack_direction(batch, cons, sol_cur, target, s)
        if weak:
            flags.add(FLAG_WEAK_ACTIVE)
        if np.linalg.norm(direction) <= ZERO_DIRECTION_TOL:
            break
        s_next = project_ball(s_cur + step_size * unit(direction), s, delta)
        sol_next = solve_qp(batch, cons, s_next)
        if not sol_next.optimal:
            flags.add(FLAG_INFEASIBLE)
            return AttackResult(
                s_hat=s_next,
                delta=float(delta),
                attained=np.inf,
                norm_used=float(np.linalg.norm(s_next - s)),
                flags=frozenset(flags),
            )
        value = target_value(target, sol_next.u, batch, s)
        if value > best.attained:
            best = AttackResult(
                s_hat=s_next,
                delta=float(delta),
                attained=value,
                norm_used=float(np.linalg.norm(s_next - s)),
                flags=frozenset(flags),
            )
        s_cur, sol_cur = s_next, sol_next

    if flags != set(best.flags):
        best = AttackResult(
            s_hat=best.s_hat,
            delta=best.delta,
            attained=best.attained,
            norm_used=best.norm_used,
            flags=frozenset(flags),
        )
    return best

"""Trust-region dogleg for small nonlinear least-squares problems.

Minimises 1/2 ||r(x)||^2. The Jacobian comes from forward differences and the
Gauss-Newton step is the minimum-norm least-squares solution, so problems
with fewer residuals than unknowns are handled: from a given start the
iteration walks to a nearby root rather than an arbitrary one.

Steps that leave the feasible region (as judged by the caller's `feasible`
callback) are rejected and the trust radius shrinks, which keeps every
accepted iterate valid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import SolverError


@dataclass(frozen=True)
class DoglegResult:
    x: np.ndarray
    residuals: np.ndarray
    iterations: int
    evaluations: int


def forward_jacobian(fun, x, r0, rel_step=1e-7):
    x = np.asarray(x, dtype=float)
    jac = np.empty((r0.size, x.size))
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        xp = x.copy()
        xp[j] += h
        # use the representable step actually taken
        h = xp[j] - x[j]
        jac[:, j] = (fun(xp) - r0) / h
    return jac


def dogleg_step(jac, r, radius):
    """Powell dogleg step and its predicted reduction of 1/2||r||^2."""
    g = jac.T @ r
    p_gn = -np.linalg.pinv(jac) @ r
    if np.linalg.norm(p_gn) <= radius:
        p = p_gn
    else:
        jg = jac @ g
        gg = g @ g
        denom = jg @ jg
        p_sd = -(gg / denom) * g if denom > 0 else -g
        n_sd = np.linalg.norm(p_sd)
        if n_sd >= radius:
            p = -(radius / np.sqrt(gg)) * g
        else:
            # walk from the Cauchy point toward the Gauss-Newton point until |p| = radius
            d = p_gn - p_sd
            a = d @ d
            b = 2.0 * (p_sd @ d)
            c = p_sd @ p_sd - radius ** 2
            tau = (-b + np.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
            p = p_sd + tau * d
    jp = jac @ p
    predicted = -(g @ p) - 0.5 * (jp @ jp)
    return p, predicted


def solve(fun: Callable[[np.ndarray], np.ndarray], x0, *, tol: float = 1e-8,
          max_iter: int = 500, radius: float | None = None, max_radius: float = 10.0,
          feasible: Callable[[np.ndarray], str | None] | None = None,
          rel_step: float = 1e-7, eta: float = 1e-4, bounds=None) -> DoglegResult:
    """Drive max|r(x)| below tol.

    `feasible(x)` returns None for an admissible point or a short description
    of the violated constraint. `bounds` = (lower, upper) arrays box the
    unknowns: a variable resting on a bound that the descent direction pushes
    against is frozen for that step, and steps are clipped into the box.
    Raises SolverError on failure, with the best point seen attached.
    """
    x = np.array(x0, dtype=float)
    if bounds is None:
        lower = np.full(x.size, -np.inf)
        upper = np.full(x.size, np.inf)
    else:
        lower = np.broadcast_to(np.asarray(bounds[0], dtype=float), x.shape)
        upper = np.broadcast_to(np.asarray(bounds[1], dtype=float), x.shape)
    if np.any(x < lower) or np.any(x > upper):
        raise SolverError("initial guess is infeasible: outside bounds", best_x=x, constraint="bounds")
    if feasible is not None:
        why = feasible(x)
        if why is not None:
            raise SolverError(f"initial guess is infeasible: {why}", best_x=x, constraint=why)
    r = np.asarray(fun(x), dtype=float)
    nfev = 1
    if not np.all(np.isfinite(r)):
        raise SolverError("residuals are not finite at the initial guess", best_x=x)
    radius = radius if radius is not None else max(0.1, 0.1 * np.linalg.norm(x))
    cost = 0.5 * (r @ r)
    last_violation = None
    rejected_in_a_row = 0
    for it in range(max_iter):
        if np.max(np.abs(r)) <= tol:
            return DoglegResult(x, r, it, nfev)
        jac = forward_jacobian(fun, x, r, rel_step)
        nfev += x.size
        if not np.all(np.isfinite(jac)):
            raise SolverError(f"Jacobian not finite; best max|r| = {np.max(np.abs(r)):.3e}",
                              best_x=x, best_residuals=r, iterations=it)
        g = jac.T @ r
        pinned = ((x <= lower) & (g > 0)) | ((x >= upper) & (g < 0))
        jac_free = jac.copy()
        jac_free[:, pinned] = 0.0
        while True:
            p, predicted = dogleg_step(jac_free, r, radius)
            x_new = np.clip(x + p, lower, upper)
            if not np.array_equal(x_new, x + p):
                p = x_new - x
                jp = jac @ p
                predicted = -(g @ p) - 0.5 * (jp @ jp)
            why = feasible(x_new) if feasible is not None else None
            if why is None:
                break
            last_violation = why
            radius *= 0.25
            if radius < 1e-14 * max(1.0, np.linalg.norm(x)):
                raise SolverError(
                    f"trapped at a constraint boundary ({why}); best max|r| = {np.max(np.abs(r)):.3e}",
                    best_x=x, best_residuals=r, iterations=it, constraint=why)
        r_new = np.asarray(fun(x_new), dtype=float)
        nfev += 1
        cost_new = 0.5 * (r_new @ r_new)
        actual = cost - cost_new
        finite = np.all(np.isfinite(r_new))
        rho = actual / predicted if predicted > 0 and finite else -1.0
        step = np.linalg.norm(p)
        if rho < 0.25:
            radius = 0.25 * step
        elif rho > 0.75 and step >= 0.99 * radius:
            radius = min(2.0 * radius, max_radius)
        if rho > eta:
            x, r, cost = x_new, r_new, cost_new
            rejected_in_a_row = 0
        else:
            rejected_in_a_row += 1
        if radius < 1e-14 * max(1.0, np.linalg.norm(x)):
            msg = "trust radius collapsed"
            if last_violation is not None and rejected_in_a_row:
                msg += f" near a constraint boundary ({last_violation})"
            raise SolverError(f"{msg}; best max|r| = {np.max(np.abs(r)):.3e}",
                              best_x=x, best_residuals=r, iterations=it,
                              constraint=last_violation)
    if np.max(np.abs(r)) <= tol:
        return DoglegResult(x, r, max_iter, nfev)
    raise SolverError(f"no convergence in {max_iter} iterations; best max|r| = {np.max(np.abs(r)):.3e}",
                      best_x=x, best_residuals=r, iterations=max_iter)

"""Log-barrier interior-point solver for small convex QCQPs.

Minimizes a linear objective c^T x subject to convex quadratic constraints

    f_k(x) = 0.5 x^T H_k x + g_k^T x + r_k <= 0,   H_k symmetric PSD,

via the standard barrier path: damped Newton centering of
tau * c^T x - sum_k log(-f_k(x)) with geometric tau growth until the
m/tau duality-gap bound drops below the requested tolerance.  Starting
points must be strictly feasible; callers in this package construct them
explicitly, so failure to provide one is a caller bug and raises.

Everything is dense and deterministic; problem sizes here are a few tens of
variables, so constraint data is kept as stacked ndarrays and each Newton
step costs a handful of small BLAS calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class SolverError(RuntimeError):
    """Raised when a solve cannot proceed (bad start, numerical breakdown)."""


@dataclass
class QuadConstraint:
    """f(x) = 0.5 x^T H x + g^T x + r <= 0 (H may be None for linear)."""

    h: np.ndarray | None
    g: np.ndarray
    r: float

    def value(self, x: np.ndarray) -> float:
        v = float(self.g @ x) + self.r
        if self.h is not None:
            v += 0.5 * float(x @ self.h @ x)
        return v

    def grad(self, x: np.ndarray) -> np.ndarray:
        if self.h is None:
            return self.g
        return self.h @ x + self.g


@dataclass
class QcqpResult:
    x: np.ndarray
    objective: float
    duality_gap: float
    kkt_stationarity: float
    max_violation: float
    duals: np.ndarray
    newton_iters: int
    accurate: bool
    message: str = ""


class _Stacked:
    """Constraint data as stacked arrays for vectorized evaluation."""

    def __init__(self, constraints: list[QuadConstraint], n: int):
        m = len(constraints)
        self.h = np.zeros((m, n, n))
        self.g = np.zeros((m, n))
        self.r = np.zeros(m)
        self.quadratic = np.zeros(m, dtype=bool)
        for k, cn in enumerate(constraints):
            if cn.h is not None:
                self.h[k] = cn.h
                self.quadratic[k] = True
            self.g[k] = cn.g
            self.r[k] = cn.r

    def values_grads(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        hx = self.h @ x
        vals = 0.5 * (hx @ x) + self.g @ x + self.r
        return vals, hx + self.g

    def values(self, x: np.ndarray) -> np.ndarray:
        return 0.5 * ((self.h @ x) @ x) + self.g @ x + self.r


def solve_qcqp(
    c: np.ndarray,
    constraints: list[QuadConstraint],
    x0: np.ndarray,
    *,
    gap_tol: float = 1e-8,
    feas_tol: float = 1e-9,
    max_newton: int = 2000,
    tau0: float = 1.0,
    tau_factor: float = 50.0,
    newton_tol: float = 1e-9,
) -> QcqpResult:
    """Solve min c^T x s.t. f_k(x) <= 0 from a strictly feasible x0."""
    c = np.asarray(c, dtype=float)
    x = np.asarray(x0, dtype=float).copy()
    n = x.size
    m = len(constraints)
    if m == 0:
        raise SolverError("unconstrained linear program is unbounded")
    stacked = _Stacked(constraints, n)
    fvals = stacked.values(x)
    if np.any(fvals >= 0):
        worst = int(np.argmax(fvals))
        raise SolverError(
            f"starting point is not strictly feasible (constraint {worst}: {fvals[worst]:.3g})"
        )

    total_newton = 0
    tau = tau0
    # the terminal stage runs at exactly the tau meeting the gap target;
    # overshooting it by a full tau_factor only degrades conditioning
    tau_terminal = 1.01 * m / gap_tol
    accurate = True
    message = ""
    eye_n = np.eye(n)
    c_scale = max(float(np.max(np.abs(c))), 1.0)
    while True:
        # centering for the current tau; intermediate stages are centered
        # loosely, the final stage tightly (that is where the certificates
        # are extracted)
        final_stage = tau >= tau_terminal
        while True:
            fvals, grads = stacked.values_grads(x)
            inv_f = -1.0 / fvals
            grad = tau * c + grads.T @ inv_f
            if final_stage and float(np.max(np.abs(grad))) <= newton_tol * tau * c_scale:
                break
            hess = (grads.T * inv_f**2) @ grads
            hess += np.einsum("k,kij->ij", inv_f, stacked.h)
            diag_scale = float(np.max(np.diagonal(hess))) or 1.0
            step = None
            for jitter in (1e-14, 1e-10, 1e-6):
                try:
                    step = np.linalg.solve(hess + jitter * diag_scale * eye_n, -grad)
                    break
                except np.linalg.LinAlgError:
                    continue
            if step is None:
                accurate = False
                message = "Newton system numerically singular"
                break
            decrement = float(-grad @ step)
            phi_scale = 1.0 + abs(tau * float(c @ x)) + abs(float(np.sum(np.log(-fvals))))
            if decrement <= 2.0 * (1e-16 if final_stage else 1e-9) * phi_scale:
                break
            # largest feasible step along the Newton direction: smallest
            # positive root of f_k(x + a*step) = qa*a^2 + qb*a + f_k(x)
            hs = stacked.h @ step
            qa = 0.5 * (hs @ step)
            qb = grads @ step
            qc = fvals
            with np.errstate(divide="ignore", invalid="ignore"):
                lin_root = np.where(qb > 0, -qc / qb, np.inf)
                disc = np.sqrt(np.maximum(qb**2 - 4.0 * qa * qc, 0.0))
                quad_root = np.where(qa > 1e-14, (-qb + disc) / (2.0 * qa), lin_root)
            alpha_max = float(np.min(np.where(qa > 1e-14, quad_root, lin_root)))
            alpha = min(1.0, 0.99 * alpha_max)
            # backtracking line search: Armijo on the barrier
            phi0 = tau * float(c @ x) - float(np.sum(np.log(-fvals)))
            moved = False
            for _ in range(60):
                cand = x + alpha * step
                fc = stacked.values(cand)
                if np.all(fc < 0):
                    phi = tau * float(c @ cand) - float(np.sum(np.log(-fc)))
                    if phi <= phi0 - 0.25 * alpha * decrement:
                        x = cand
                        moved = True
                        break
                alpha *= 0.5
            if not moved:
                break  # no productive step; treat as centered
            total_newton += 1
            if total_newton >= max_newton:
                accurate = False
                message = "Newton iteration budget exhausted"
                break
        if final_stage or not accurate:
            break
        tau = min(tau * tau_factor, tau_terminal)

    fvals, grads = stacked.values_grads(x)
    duals = 1.0 / (tau * (-fvals))
    residual = c + grads.T @ duals
    return QcqpResult(
        x=x,
        objective=float(c @ x),
        duality_gap=m / tau,
        kkt_stationarity=float(np.max(np.abs(residual))),
        max_violation=float(np.max(fvals)),
        duals=duals,
        newton_iters=total_newton,
        accurate=accurate and float(np.max(fvals)) < feas_tol,
        message=message,
    )

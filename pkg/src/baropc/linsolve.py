"""Krylov solvers for the sparse systems of the time stepper.

Plain conjugate gradients for the symmetric positive (semi-)definite
pressure systems, BiCGStab for the nonsymmetric transport/momentum
systems, and a null-space aware variant of CG for the singular
Neumann-type renormalization operator.  Everything reports iteration
counts and final residuals; non-convergence raises with the residual
history attached.
"""

from dataclasses import dataclass, field

import numpy as np


class LinearSolverError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = list(history) if history is not None else []


@dataclass
class SolverConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    max_iter: int | None = None          # default 10 * unknown count
    preconditioner: str = "diagonal"     # "none" | "diagonal"

    def __post_init__(self):
        if self.rel_tol <= 0.0 or self.abs_tol <= 0.0:
            raise ValueError("solver tolerances must be positive")
        if self.preconditioner not in ("none", "diagonal"):
            raise ValueError(f"unknown preconditioner '{self.preconditioner}'")

    def iterations(self, n):
        return self.max_iter if self.max_iter is not None else max(50, 10 * n)


@dataclass
class SolveReport:
    iterations: int
    residual: float
    target: float
    converged: bool
    history: list = field(default_factory=list)


def _diag_inverse(A, config):
    if config.preconditioner == "none":
        return None
    d = A.diagonal().copy()
    small = np.abs(d) < 1e-300
    d[small] = 1.0
    return 1.0 / d


def cg_solve(A, b, config=None, x0=None, _project=None):
    """Conjugate gradients for symmetric positive (semi-)definite A.

    Stops when ||b - A x|| <= max(rel_tol * ||b||, abs_tol).  `_project`
    is an optional per-iteration hook applied to the iterate, used by
    neumann_solve to pin the constant null-space component.
    """
    config = config or SolverConfig()
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise LinearSolverError("right-hand side is not finite")
    n = b.size
    target = max(config.rel_tol * np.linalg.norm(b), config.abs_tol)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if _project is not None:
        x = _project(x)
    minv = _diag_inverse(A, config)

    r = b - A @ x
    z = r if minv is None else minv * r
    p = z.copy()
    rz = r @ z
    history = [np.linalg.norm(r)]
    if history[-1] <= target:
        return x, SolveReport(0, history[-1], target, True, history)

    maxit = config.iterations(n)
    for k in range(1, maxit + 1):
        Ap = A @ p
        pAp = p @ Ap
        if pAp <= 0.0:
            raise LinearSolverError(
                f"CG breakdown at iteration {k}: p.Ap = {pAp:.3e} (matrix not SPD?)",
                history)
        alpha = rz / pAp
        x += alpha * p
        if _project is not None:
            x = _project(x)
        r -= alpha * Ap
        res = np.linalg.norm(r)
        history.append(res)
        if res <= target:
            # guard against drift in the recurrence residual
            true_res = np.linalg.norm(b - A @ x)
            history[-1] = true_res
            if true_res <= target:
                return x, SolveReport(k, true_res, target, True, history)
            r = b - A @ x
            res = true_res
        z = r if minv is None else minv * r
        rz_new = r @ z
        beta = rz_new / rz
        p = z + beta * p
        rz = rz_new
    raise LinearSolverError(
        f"CG did not converge in {maxit} iterations (residual {history[-1]:.3e}, "
        f"target {target:.3e})", history)


def bicgstab_solve(A, b, config=None, x0=None):
    """BiCGStab for general nonsingular A, diagonal preconditioning."""
    config = config or SolverConfig()
    b = np.asarray(b, dtype=float)
    if not np.all(np.isfinite(b)):
        raise LinearSolverError("right-hand side is not finite")
    n = b.size
    target = max(config.rel_tol * np.linalg.norm(b), config.abs_tol)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    minv = _diag_inverse(A, config)

    r = b - A @ x
    history = [np.linalg.norm(r)]
    if history[-1] <= target:
        return x, SolveReport(0, history[-1], target, True, history)
    rhat = r.copy()
    rho = alpha = omega = 1.0
    v = np.zeros(n)
    p = np.zeros(n)

    maxit = config.iterations(n)
    for k in range(1, maxit + 1):
        rho_new = rhat @ r
        if rho_new == 0.0 or (omega == 0.0 and k > 1):
            # stagnated shadow residual: restart from the current iterate
            r = b - A @ x
            rhat = r.copy()
            rho = alpha = omega = 1.0
            v[:] = 0.0
            p[:] = 0.0
            rho_new = rhat @ r
            if rho_new == 0.0:
                break
        beta = (rho_new / rho) * (alpha / omega) if k > 1 else 0.0
        rho = rho_new
        p = r + beta * (p - omega * v)
        phat = p if minv is None else minv * p
        v = A @ phat
        denom = rhat @ v
        if denom == 0.0:
            raise LinearSolverError(f"BiCGStab breakdown at iteration {k}", history)
        alpha = rho / denom
        s = r - alpha * v
        if np.linalg.norm(s) <= target:
            x += alpha * phat
            res = np.linalg.norm(b - A @ x)
            history.append(res)
            if res <= target:
                return x, SolveReport(k, res, target, True, history)
            r = b - A @ x
            continue
        shat = s if minv is None else minv * s
        t = A @ shat
        tt = t @ t
        if tt == 0.0:
            raise LinearSolverError(f"BiCGStab breakdown (t = 0) at iteration {k}", history)
        omega = (t @ s) / tt
        x += alpha * phat + omega * shat
        r = s - omega * t
        res = np.linalg.norm(r)
        history.append(res)
        if res <= target:
            true_res = np.linalg.norm(b - A @ x)
            history[-1] = true_res
            if true_res <= target:
                return x, SolveReport(k, true_res, target, True, history)
            r = b - A @ x
    raise LinearSolverError(
        f"BiCGStab did not converge in {maxit} iterations (residual {history[-1]:.3e}, "
        f"target {target:.3e})", history)


def neumann_solve(A, b, volumes, config=None):
    """Solve a singular symmetric system whose null space is the constants.

    The right-hand side must be (numerically) orthogonal to constants;
    the returned solution has zero volume-weighted mean.  Callers may add
    any constant afterwards.
    """
    config = config or SolverConfig()
    b = np.asarray(b, dtype=float)
    volumes = np.asarray(volumes, dtype=float)
    bnorm = np.linalg.norm(b)
    if bnorm <= config.abs_tol:
        return np.zeros(b.size), SolveReport(0, bnorm, config.abs_tol, True, [bnorm])
    constant_part = abs(b.sum()) / np.sqrt(b.size)
    if constant_part > max(1e3 * config.rel_tol * bnorm, config.abs_tol):
        raise LinearSolverError(
            f"incompatible right-hand side: constant component "
            f"{constant_part / bnorm:.3e} of |b|")
    vtot = volumes.sum()

    def project(x):
        return x - (volumes @ x) / vtot

    x, report = cg_solve(A, b, config, _project=project)
    return project(x), report

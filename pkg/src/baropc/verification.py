"""Smooth exact flow, forcing assembly and convergence studies.

The test flow has closed-form momentum and density chosen so that the
mass balance is satisfied identically; the momentum forcing is computed
analytically (including the viscous part) and split into the exact
pressure gradient plus a remainder.  The gradient part is injected into
the discrete right-hand side through the discrete gradient of the
cellwise projected pressure, so it lies in the range of the discrete
gradient; without that treatment the nonconforming element's gradient
inconsistency would pollute the convergence study.
"""

import time as _time

import numpy as np

from . import operators as ops
from .eos import AffineLaw
from .linsolve import SolverConfig
from .scheme import SchemeConfig, Stepper, initial_state

_PI = np.pi


class SmoothFlowCase:
    """Closed-form (rho, rho*u) pair on (0,1) x (-1/2,1/2).

    rho   = 1 + (1/4) sin(pi t) (cos(pi x) - sin(pi y))
    rho*u = -(1/4) cos(pi t) (sin(pi x), cos(pi y))

    The normal velocity trace vanishes on the whole boundary at all
    times (the tangential trace does not), and d(rho)/dt + div(rho u) = 0
    holds identically.
    """

    domain = (0.0, 1.0, -0.5, 0.5)

    def __init__(self, gamma=1.4, mach=0.5, mu=1e-2):
        self.eos = AffineLaw(gamma, mach)
        self.mu = float(mu)

    # -- primitive fields and their derivatives -----------------------
    @staticmethod
    def _trig(x, t):
        x1, x2 = x[..., 0], x[..., 1]
        return (np.sin(_PI * x1), np.cos(_PI * x1),
                np.sin(_PI * x2), np.cos(_PI * x2),
                np.sin(_PI * t), np.cos(_PI * t))

    def rho(self, x, t):
        s1, c1, s2, c2, st, ct = self._trig(x, t)
        return 1.0 + 0.25 * st * (c1 - s2)

    def drho_dt(self, x, t):
        s1, c1, s2, c2, st, ct = self._trig(x, t)
        return 0.25 * _PI * ct * (c1 - s2)

    def grad_rho(self, x, t):
        s1, c1, s2, c2, st, ct = self._trig(x, t)
        return 0.25 * st * np.stack([-_PI * s1, -_PI * c2], axis=-1)

    def hess_rho(self, x, t):
        """(d_xx, d_yy, d_xy) of rho."""
        s1, c1, s2, c2, st, ct = self._trig(x, t)
        quarter = 0.25 * _PI ** 2 * st
        return -quarter * c1, quarter * s2, np.zeros_like(c1)

    def momentum(self, x, t):
        s1, c1, s2, c2, st, ct = self._trig(x, t)
        return -0.25 * ct * np.stack([s1, c2], axis=-1)

    def dmomentum_dt(self, x, t):
        s1, c1, s2, c2, st, ct = self._trig(x, t)
        return 0.25 * _PI * st * np.stack([s1, c2], axis=-1)

    def jac_momentum(self, x, t):
        """J[..., i, j] = d m_i / d x_j (diagonal for this flow)."""
        s1, c1, s2, c2, st, ct = self._trig(x, t)
        z = np.zeros_like(s1)
        row1 = np.stack([-0.25 * _PI * ct * c1, z], axis=-1)
        row2 = np.stack([z, 0.25 * _PI * ct * s2], axis=-1)
        return np.stack([row1, row2], axis=-2)

    def _second_momentum(self, x, t):
        """(d_xx m, d_yy m, d_xy m), each (..., 2)."""
        s1, c1, s2, c2, st, ct = self._trig(x, t)
        z = np.zeros_like(s1)
        quarter = 0.25 * _PI ** 2 * ct
        mxx = np.stack([quarter * s1, z], axis=-1)
        myy = np.stack([z, quarter * c2], axis=-1)
        mxy = np.stack([z, z], axis=-1)
        return mxx, myy, mxy

    # -- derived fields ------------------------------------------------
    def velocity(self, x, t):
        return self.momentum(x, t) / self.rho(x, t)[..., None]

    def pressure(self, x, t):
        return self.eos.pressure(self.rho(x, t))

    def grad_pressure(self, x, t):
        return self.grad_rho(x, t) / self.eos.coeff

    def _velocity_derivatives(self, x, t):
        """First and second derivatives of u = m / rho."""
        rho = self.rho(x, t)[..., None]
        m = self.momentum(x, t)
        jm = self.jac_momentum(x, t)
        gr = self.grad_rho(x, t)
        rxx, ryy, rxy = self.hess_rho(x, t)
        mxx, myy, mxy = self._second_momentum(x, t)

        # du[..., i, j] = dm_i/dx_j / rho - m_i drho_j / rho^2
        du = jm / rho[..., None] - m[..., :, None] * gr[..., None, :] / rho[..., None] ** 2

        def second(mab, dma, dmb, rab, ra, rb):
            return (mab / rho - (dma * rb[..., None] + dmb * ra[..., None]) / rho ** 2
                    - m * rab[..., None] / rho ** 2
                    + 2.0 * m * (ra * rb)[..., None] / rho ** 3)

        uxx = second(mxx, jm[..., 0], jm[..., 0], rxx, gr[..., 0], gr[..., 0])
        uyy = second(myy, jm[..., 1], jm[..., 1], ryy, gr[..., 1], gr[..., 1])
        uxy = second(mxy, jm[..., 0], jm[..., 1], rxy, gr[..., 0], gr[..., 1])
        return du, uxx, uyy, uxy

    def forcing(self, x, t):
        """Analytic momentum residual of the exact fields."""
        m = self.momentum(x, t)
        u = self.velocity(x, t)
        jm = self.jac_momentum(x, t)
        du, uxx, uyy, uxy = self._velocity_derivatives(x, t)

        conv = np.einsum("...ij,...j->...i", jm, u) + m * np.trace(du, axis1=-2, axis2=-1)[..., None]
        lap = uxx + uyy
        # gradient of div u: d_i (du1/dx + du2/dy)
        grad_div = np.stack([uxx[..., 0] + uxy[..., 1],
                             uxy[..., 0] + uyy[..., 1]], axis=-1)
        return (self.dmomentum_dt(x, t) + conv + self.grad_pressure(x, t)
                - self.mu * lap - (self.mu / 3.0) * grad_div)

    def forcing_rest(self, x, t):
        """Forcing minus its exact pressure-gradient part."""
        return self.forcing(x, t) - self.grad_pressure(x, t)


# ----------------------------------------------------------------------
# discrete data extracted from the case

def exact_fields(case, mesh, t):
    """(rho on cells, p on cells, u edge means) of the exact flow at t."""
    rho = case.rho(mesh.cell_centroids, t)
    p = case.eos.pressure(rho)
    u = ops.edge_mean(mesh, lambda pts: case.velocity(pts, t))
    return rho, p, u


def boundary_provider(case):
    """Dirichlet data callback: exact edge means at the requested time."""
    def bc(mesh, t):
        return ops.edge_mean(mesh, lambda pts: case.velocity(pts, t))
    return bc


def assemble_forcing(case, mesh, t, quad_order=3):
    """Momentum right-hand side with the gradient-preserving treatment.

    The non-gradient part of the forcing is integrated against the basis
    with a tensor Gauss rule; the exact-pressure part enters as the
    discrete gradient of the cellwise mean pressure, so it lies in the
    range of the discrete gradient by construction.
    """
    ref, _ = ops.gauss_points_2d(quad_order)
    pts, w = ops.cell_quadrature_points(mesh, quad_order)
    phi = ops.basis_values(ref)                      # (q, 4)
    fr = case.forcing_rest(pts, t)                   # (ncells, q, 2)
    contrib = np.einsum("q,cqd,qa->cad", w, fr, phi)     # (ncells, 4, 2)
    rhs = np.zeros((mesh.nedges, 2))
    np.add.at(rhs, mesh.cell_edges, contrib)
    p_mean = np.einsum("q,cq->c", w, case.pressure(pts, t)) / mesh.cell_volumes
    rhs += ops.gradient(mesh, p_mean)
    return rhs


def forcing_provider(case, quad_order=3):
    def rhs(mesh, t):
        return assemble_forcing(case, mesh, t, quad_order)
    return rhs


def error_norms(mesh, state, case, quad_order=3):
    """(velocity L2 error, pressure discrete L2 error) at the state time.

    The velocity error integrates the finite element expansion against
    the exact velocity with a tensor Gauss rule per cell; the pressure
    error is the cellwise midpoint (piecewise-constant) distance.
    """
    ref, _ = ops.gauss_points_2d(quad_order)
    pts, w = ops.cell_quadrature_points(mesh, quad_order)
    phi = ops.basis_values(ref)
    coeffs = state.u[mesh.cell_edges]                # (ncells, 4, 2)
    u_h = np.einsum("qa,cad->cqd", phi, coeffs)
    diff = u_h - case.velocity(pts, state.t)
    err_v = np.sqrt(np.einsum("q,cqd->", w, diff ** 2))
    p_ex = case.pressure(mesh.cell_centroids, state.t)
    err_p = np.sqrt(np.sum(mesh.cell_volumes * (state.p - p_ex) ** 2))
    return err_v, err_p


# ----------------------------------------------------------------------
# study drivers

def make_config(case, dt, lin_tol=1e-10, proj_eps=1e-8, convection="centered",
                alpha=1.0, proj_maxit=100):
    return SchemeConfig(
        dt=dt, mu=case.mu, eos=case.eos, convection=convection,
        proj_eps=proj_eps, proj_maxit=proj_maxit, alpha=alpha,
        lin=SolverConfig(rel_tol=lin_tol, abs_tol=1e-14),
        boundary_values=boundary_provider(case),
        forcing_rhs=forcing_provider(case),
    )


def initial_exact_state(case, mesh):
    return initial_state(mesh, case.eos,
                         lambda x: case.rho(x, 0.0),
                         lambda x: case.velocity(x, 0.0))


def run_smooth_flow(mesh, dt, t_end=0.5, case=None, **config_kwargs):
    """Advance the exact-flow problem to t_end; returns (state, info).

    info carries the error norms at t_end and inner-iteration counts.
    """
    case = case or SmoothFlowCase()
    nsteps = int(round(t_end / dt))
    if abs(nsteps * dt - t_end) > 1e-9 * max(t_end, dt):
        raise ValueError(f"t_end {t_end} is not a multiple of dt {dt}")
    config = make_config(case, dt, **config_kwargs)
    state = initial_exact_state(case, mesh)
    stepper = Stepper(mesh, config)
    inner = []
    t0 = _time.perf_counter()
    state = stepper.run(state, nsteps,
                        on_step=lambda n, s, rep: inner.append(rep.inner_iterations))
    wall = _time.perf_counter() - t0
    err_v, err_p = error_norms(mesh, state, case)
    info = {
        "err_v": err_v,
        "err_p": err_p,
        "inner_mean": float(np.mean(inner)) if inner else 0.0,
        "inner_max": int(np.max(inner)) if inner else 0,
        "wall_seconds": wall,
        "nsteps": nsteps,
    }
    return state, info


def fit_order(dts, errors, ratio_floor=1.5):
    """Least-squares log-log slope over the pre-plateau range.

    The pre-plateau range is the leading run of time steps over which
    each halving still reduces the error by more than `ratio_floor`.
    Returns (order, n_points_used); nan if fewer than two points qualify.
    """
    dts = np.asarray(dts, dtype=float)
    errors = np.asarray(errors, dtype=float)
    idx = np.argsort(-dts)
    dts, errors = dts[idx], errors[idx]
    last = 0
    while last + 1 < dts.size and errors[last] / errors[last + 1] > ratio_floor:
        last += 1
    if last < 1:
        return float("nan"), 1
    x = np.log(dts[:last + 1])
    y = np.log(errors[:last + 1])
    slope = np.polyfit(x, y, 1)[0]
    return float(slope), last + 1


def _study_cell(job):
    """One (mesh, dt) run; module level so process pools can pickle it."""
    from .mesh import build_rect_mesh

    nx, ny, dt, domain, t_end, case, config_kwargs = job
    mesh = build_rect_mesh(nx, ny, domain)
    _, info = run_smooth_flow(mesh, dt, t_end, case, **config_kwargs)
    return {
        "nx": nx, "ny": ny, "dt": dt,
        "err_v_L2": info["err_v"], "err_p_L2": info["err_p"],
        "inner_iter_mean": info["inner_mean"],
        "wall_seconds": info["wall_seconds"],
    }


def convergence_study(mesh_sizes, dts, t_end=0.5, case=None, domain=None,
                      progress=None, **config_kwargs):
    """Run the exact-flow problem on every (mesh, dt) pair.

    Returns (rows, orders): one row per run with the errors at t_end,
    and per-mesh fitted temporal orders for velocity and pressure.
    Honors the BAROPC_THREADS environment variable for parallel cells
    (sequential and deterministic by default).
    """
    import os

    case = case or SmoothFlowCase()
    domain = domain or case.domain
    jobs = [(nx, ny, dt, domain, t_end, case, config_kwargs)
            for (nx, ny) in mesh_sizes for dt in dts]

    nthreads = int(os.environ.get("BAROPC_THREADS", "1"))
    if nthreads > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=nthreads) as pool:
            rows = list(pool.map(_study_cell, jobs))
    else:
        rows = []
        for job in jobs:
            rows.append(_study_cell(job))
            if progress is not None:
                progress(rows[-1])

    orders = {}
    for nx, ny in mesh_sizes:
        sub = [r for r in rows if (r["nx"], r["ny"]) == (nx, ny)]
        sub_dts = [r["dt"] for r in sub]
        ov, _ = fit_order(sub_dts, [r["err_v_L2"] for r in sub])
        op_, _ = fit_order(sub_dts, [r["err_p_L2"] for r in sub])
        orders[(nx, ny)] = {"velocity": ov, "pressure": op_}
    return rows, orders


def write_convergence_csv(path, rows):
    cols = ("nx", "ny", "dt", "err_v_L2", "err_p_L2", "inner_iter_mean",
            "wall_seconds")
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            vals = []
            for c in cols:
                v = row[c]
                vals.append(str(v) if isinstance(v, int) else format(float(v), ".17g"))
            fh.write(",".join(vals) + "\n")

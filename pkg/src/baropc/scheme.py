"""Five-step pressure-correction time stepper.

One step advances (u, p, rho) through, in order: an upwind prediction of
the density on the diamond cells, a renormalization of the pressure, a
semi-implicit momentum solve for a tentative velocity, a nonlinear
projection enforcing the cell mass balance, and a square-root velocity
renormalization.  The pieces are deliberately assembled from the exact
same discrete operators the energy identities are written in, so that the
per-step energy bound holds to solver tolerance for any time step.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import operators as ops
from .eos import EosDomainError
from .linsolve import SolverConfig, LinearSolverError, cg_solve, bicgstab_solve, neumann_solve


class SchemeError(RuntimeError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = list(history) if history is not None else []


@dataclass
class SchemeConfig:
    dt: float
    mu: float
    eos: object
    convection: str = "centered"          # or "upwind"
    proj_eps: float = 1e-8
    proj_maxit: int = 100
    alpha: float = 1.0
    lin: SolverConfig = field(default_factory=SolverConfig)
    boundary_values: object = None        # callable(mesh, t) -> (nedges, 2)
    forcing_rhs: object = None            # callable(mesh, t) -> (nedges, 2)

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.mu < 0.0:
            raise ValueError("viscosity must be nonnegative")
        if self.proj_eps <= 0.0:
            raise ValueError("projection tolerance must be positive")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("relaxation must lie in (0, 1]")
        if self.convection not in ("centered", "upwind"):
            raise ValueError(f"unknown convection mode '{self.convection}'")

    def bc(self, mesh, t):
        if self.boundary_values is None:
            return np.zeros((mesh.nedges, 2))
        return np.asarray(self.boundary_values(mesh, t), dtype=float)

    def forcing(self, mesh, t):
        if self.forcing_rhs is None:
            return np.zeros((mesh.nedges, 2))
        return np.asarray(self.forcing_rhs(mesh, t), dtype=float)


@dataclass
class SchemeState:
    """Snapshot advanced in time.

    `rho_edge_pred` is the predicted edge density of the step that
    produced this state (the weight of the pressure semi-norm in the
    energy bound); for a fresh initial state it is the half-diamond
    average of the initial cell density.
    """
    t: float
    u: np.ndarray            # (nedges, 2), boundary rows hold Dirichlet data
    p: np.ndarray            # (ncells,)
    rho: np.ndarray          # (ncells,), > 0
    rho_edge_pred: np.ndarray  # (nedges,), > 0

    def copy(self):
        return SchemeState(self.t, self.u.copy(), self.p.copy(),
                           self.rho.copy(), self.rho_edge_pred.copy())


@dataclass
class ProjectionReport:
    iterations: int
    mass_residual: float
    update_history: list


@dataclass
class StepReport:
    u_tilde: np.ndarray
    rho_edge_n: np.ndarray
    fluxes: np.ndarray
    inner_iterations: int
    mass_residual: float
    solver_iterations: dict


def initial_state(mesh, eos, rho0, u0):
    """State at t = 0 from pointwise initial fields.

    The density is sampled at cell centroids, the velocity through its
    edge-mean functionals, and the pressure is the EOS inverse of the
    density.
    """
    rho = np.asarray(rho0(mesh.cell_centroids), dtype=float)
    if np.any(rho <= 0.0):
        raise SchemeError("initial density must be strictly positive")
    u = ops.edge_mean(mesh, u0)
    if u.ndim == 1:
        raise SchemeError("initial velocity must be vector valued")
    p = eos.pressure(rho)
    return SchemeState(0.0, u, p, rho, ops.edge_density(mesh, rho))


# ----------------------------------------------------------------------
# step 1: density prediction on the diamond cells

def predict_density(mesh, state, config):
    """Upwind mass balance over all diamonds, boundary half-diamonds included.

    Returns the predicted edge density.  The transporting field is the
    finite element interpolation of the current velocity at the sub-edge
    midpoints; the flux across the domain boundary uses the prescribed
    normal velocity times the diamond's own density.
    """
    dt = config.dt
    a = ops.subedge_velocity_coeffs(mesh, state.u)
    rho_edge_n = ops.edge_density(mesh, state.rho)
    diag = mesh.diamond_volumes / dt
    A = ops._upwind_scalar_matrix(mesh, a) + sp.diags(diag)
    bnd = mesh.boundary_edges
    bflux = np.zeros(mesh.nedges)
    bflux[bnd] = mesh.edge_lengths[bnd] * np.einsum(
        "ed,ed->e", state.u[bnd], mesh.edge_normals[bnd])
    A = (A + sp.diags(bflux)).tocsr()
    b = diag * rho_edge_n
    try:
        rho_tilde, report = bicgstab_solve(A, b, config.lin, x0=rho_edge_n)
    except LinearSolverError as err:
        raise SchemeError(f"density prediction solve failed: {err}", err.history) from err
    if np.any(rho_tilde <= 0.0):
        raise SchemeError(
            f"predicted density lost positivity (min {rho_tilde.min():.3e})")
    return rho_tilde, report


def mass_fluxes(mesh, u, rho_tilde):
    """Per-sub-edge upwind mass fluxes, oriented out of sub_pair[:, 0]."""
    a = ops.subedge_velocity_coeffs(mesh, u)
    s1 = mesh.sub_pair[:, 0]
    s2 = mesh.sub_pair[:, 1]
    return np.maximum(a, 0.0) * rho_tilde[s1] - np.maximum(-a, 0.0) * rho_tilde[s2]


# ----------------------------------------------------------------------
# step 2: pressure renormalization

def renormalize_pressure(mesh, state, rho_tilde, config):
    """Rescale the pressure gradient from the old to the new edge density.

    Solves  L_{rho_tilde} p = L_{sqrt(rho_tilde * rho_pred_old)} p_old
    with the singular Neumann-type pressure operator, then shifts the
    result to match the volume-weighted mean of the old pressure.  This
    contracts the weighted pressure semi-norm, which is what makes the
    scheme unconditionally stable.
    """
    w_mixed = np.sqrt(rho_tilde * state.rho_edge_pred)
    A = ops.pressure_laplacian(mesh, rho_tilde)
    b = ops.pressure_laplacian(mesh, w_mixed) @ state.p
    b -= b.sum() / b.size      # strip the rounding noise along constants
    try:
        x, report = neumann_solve(A, b, mesh.cell_volumes, config.lin)
    except LinearSolverError as err:
        raise SchemeError(f"pressure renormalization failed: {err}", err.history) from err
    mean = (mesh.cell_volumes @ state.p) / mesh.cell_volumes.sum()
    return x + mean, report


# ----------------------------------------------------------------------
# step 3: velocity prediction (momentum balance)

def _interior_dofs(mesh):
    e = mesh.interior_edges
    return np.stack([2 * e, 2 * e + 1], axis=1).ravel()


def _boundary_dofs(mesh):
    e = mesh.boundary_edges
    return np.stack([2 * e, 2 * e + 1], axis=1).ravel()


def predict_velocity(mesh, state, rho_tilde, p_tilde, config,
                     fluxes=None, stiffness=None):
    """Semi-implicit momentum solve for the tentative velocity.

    The convection matrix is built from the same mass fluxes as the
    density prediction (that compatibility is the point of step 1), the
    pressure force uses the discrete gradient of the renormalized
    pressure, and Dirichlet rows are eliminated with boundary data at the
    new time level moved to the right-hand side.
    """
    dt = config.dt
    t_next = state.t + dt
    if fluxes is None:
        fluxes = mass_fluxes(mesh, state.u, rho_tilde)
    if stiffness is None:
        stiffness = ops.viscous_stiffness(mesh, config.mu)
    C = ops.convection_matrix(mesh, fluxes, config.convection)
    m_new = np.repeat(mesh.diamond_volumes * rho_tilde, 2) / dt
    A = (sp.diags(m_new) + C + stiffness).tocsr()

    rho_edge_n = ops.edge_density(mesh, state.rho)
    rhs = (mesh.diamond_volumes * rho_edge_n)[:, None] / dt * state.u
    rhs -= ops.gradient(mesh, p_tilde)
    rhs += config.forcing(mesh, t_next)
    rhs = rhs.ravel()

    bc = config.bc(mesh, t_next)
    idof = _interior_dofs(mesh)
    bdof = _boundary_dofs(mesh)
    ub = bc.ravel()[bdof]
    A_ii = A[idof][:, idof]
    rhs_i = rhs[idof] - A[idof][:, bdof] @ ub
    try:
        x, report = bicgstab_solve(A_ii, rhs_i, config.lin, x0=state.u.ravel()[idof])
    except LinearSolverError as err:
        raise SchemeError(f"momentum solve failed: {err}", err.history) from err
    u_tilde = bc.copy()
    flat = u_tilde.ravel()
    flat[idof] = x
    return u_tilde, report


# ----------------------------------------------------------------------
# step 4: nonlinear projection

def _upwind_cell_density(mesh, rho_cells, u):
    """Upwind cell density per edge w.r.t. the normal velocity of u."""
    v = mesh.edge_lengths * np.einsum("ed,ed->e", u, mesh.edge_normals)
    K = mesh.edge_cells[:, 0]
    L = mesh.edge_cells[:, 1].copy()
    L[L < 0] = K[L < 0]                    # boundary: the inner cell
    return np.where(v >= 0.0, rho_cells[K], rho_cells[L]), v


def _mass_balance_residual(mesh, dt, rho_old, rho_new, rho_up, u):
    res = mesh.cell_volumes * (rho_new - rho_old) / dt
    res += ops.divergence(mesh, rho_up[:, None] * u)
    return res


def projection_step(mesh, state, rho_tilde, p_tilde, u_tilde, config):
    """Coupled pressure/velocity correction enforcing the cell mass balance.

    Inner iteration: one Newton linearization of the equation of state
    per pass, with the upwind density lagged at the previous velocity
    iterate, followed by relaxation and the velocity update.  Converged
    when the relative upwind mass-balance residual is below the
    projection tolerance (that residual is what the energy analysis
    needs) with the relative max-norm updates of pressure and velocity
    below a proportional guard.
    """
    dt = config.dt
    eos = config.eos
    vol = mesh.cell_volumes
    r_dt2 = vol / dt ** 2
    internal = mesh.interior_edges
    minv_g = 1.0 / (mesh.diamond_volumes[internal] * rho_tilde[internal])
    res_scale = np.max(vol * state.rho) / dt
    # the achievable mass-balance residual is floored by the linear solves
    res_tol = max(config.proj_eps, 20.0 * config.lin.rel_tol)
    # the update norms trail the residual by the contraction rate; they act
    # as a guard against premature exit, not as the primary criterion
    update_tol = min(1e3 * config.proj_eps, 1e-3)

    p_k = p_tilde.copy()
    u_k = u_tilde.copy()
    history = []
    iterations = 0
    res_rel = np.inf

    def rho_of(p, where):
        try:
            return eos.rho(p)
        except EosDomainError as err:
            raise SchemeError(
                f"projection iterate left the admissible pressure range "
                f"({where}): {err}", history) from err
    for k in range(config.proj_maxit):
        iterations = k + 1
        rho_k = rho_of(p_k, f"inner iteration {k + 1}")
        rho_up, _ = _upwind_cell_density(mesh, rho_k, u_k)
        L = ops.pressure_laplacian(mesh, rho_tilde, rho_up)
        drho = eos.drho_dp(p_k)
        A = (L + sp.diags(r_dt2 * drho)).tocsr()
        b = L @ p_tilde + r_dt2 * (state.rho - rho_k + drho * p_k)
        b -= ops.divergence(mesh, rho_up[:, None] * u_tilde) / dt
        try:
            p_half, _ = cg_solve(A, b, config.lin, x0=p_k)
        except LinearSolverError as err:
            raise SchemeError(f"projection pressure solve failed: {err}",
                              err.history) from err
        p_next = config.alpha * p_half + (1.0 - config.alpha) * p_k

        u_next = u_tilde.copy()
        gdp = ops.gradient(mesh, p_next - p_tilde)[internal]
        u_next[internal] -= dt * minv_g[:, None] * gdp

        dp = np.max(np.abs(p_next - p_k)) / max(np.max(np.abs(p_next)), 1e-300)
        du = np.max(np.abs(u_next - u_k)) / max(np.max(np.abs(u_next)), 1e-300)
        p_k, u_k = p_next, u_next

        rho_new = rho_of(p_k, f"update of inner iteration {k + 1}")
        rho_up_new, _ = _upwind_cell_density(mesh, rho_new, u_k)
        res = _mass_balance_residual(mesh, dt, state.rho, rho_new, rho_up_new, u_k)
        res_rel = np.max(np.abs(res)) / res_scale
        history.append((dp, du, res_rel))
        if max(dp, du) < update_tol and res_rel < res_tol:
            break
        if dp == 0.0 and du == 0.0:
            # exact fixed point of the iteration map: nothing can improve
            if res_rel < 100.0 * res_tol:
                break
            raise SchemeError(
                f"projection stagnated with mass-balance residual {res_rel:.3e} "
                f"(target {res_tol:.3e}); tighten the linear solver", history)
    else:
        raise SchemeError(
            f"projection did not converge in {config.proj_maxit} iterations "
            f"(last updates {history[-1]})", history)

    rho_new = rho_of(p_k, "converged output")
    if np.any(rho_new <= 0.0):
        raise SchemeError(f"projection produced nonpositive density "
                          f"(min {rho_new.min():.3e})")
    return u_k, p_k, rho_new, ProjectionReport(iterations, res_rel, history)


# ----------------------------------------------------------------------
# step 5: velocity renormalization

def renormalize_velocity(mesh, u_bar, rho_new, rho_tilde, bc_next):
    """Scale the corrected velocity so its kinetic weight moves to rho_new.

    Per interior edge sqrt(rho_sigma_new) u = sqrt(rho_tilde) u_bar, with
    rho_sigma_new the half-diamond average of the end-of-step density;
    boundary rows are reset to the prescribed data.
    """
    rho_edge_new = ops.edge_density(mesh, rho_new)
    u_new = np.asarray(bc_next, dtype=float).copy()
    internal = mesh.interior_edges
    factor = np.sqrt(rho_tilde[internal] / rho_edge_new[internal])
    u_new[internal] = factor[:, None] * u_bar[internal]
    return u_new


# ----------------------------------------------------------------------
# one full step

def advance(mesh, state, config, stiffness=None):
    """Run steps 1-5 once; returns the new state and a step report."""
    rho_edge_n = ops.edge_density(mesh, state.rho)
    rho_tilde, rep1 = predict_density(mesh, state, config)
    fluxes = mass_fluxes(mesh, state.u, rho_tilde)
    p_tilde, rep2 = renormalize_pressure(mesh, state, rho_tilde, config)
    u_tilde, rep3 = predict_velocity(mesh, state, rho_tilde, p_tilde, config,
                                     fluxes=fluxes, stiffness=stiffness)
    u_bar, p_new, rho_new, proj = projection_step(
        mesh, state, rho_tilde, p_tilde, u_tilde, config)
    bc_next = config.bc(mesh, state.t + config.dt)
    u_new = renormalize_velocity(mesh, u_bar, rho_new, rho_tilde, bc_next)
    new_state = SchemeState(state.t + config.dt, u_new, p_new, rho_new, rho_tilde)
    report = StepReport(
        u_tilde=u_tilde,
        rho_edge_n=rho_edge_n,
        fluxes=fluxes,
        inner_iterations=proj.iterations,
        mass_residual=proj.mass_residual,
        solver_iterations={
            "density": rep1.iterations,
            "renorm": rep2.iterations,
            "momentum": rep3.iterations,
        },
    )
    return new_state, report


class Stepper:
    """Caches the mesh-dependent immutable operators across steps."""

    def __init__(self, mesh, config):
        self.mesh = mesh
        self.config = config
        self.stiffness = ops.viscous_stiffness(mesh, config.mu)

    def step(self, state):
        return advance(self.mesh, state, self.config, stiffness=self.stiffness)

    def run(self, state, nsteps, on_step=None):
        """Advance nsteps; on_step(step_index, state, report) per step."""
        for n in range(1, nsteps + 1):
            state, report = self.step(state)
            if on_step is not None:
                on_step(n, state, report)
        return state

"""Discrete fields and spatial operators on rectangular meshes.

Velocity fields are (nedges, 2) arrays of edge-mean degrees of freedom for
the rotated-bilinear nonconforming element, cell fields are (ncells,)
arrays (piecewise constants).  The operators below follow one fixed sign
convention:

    divergence   (D u)_K     = sum_{sigma in E(K)} |sigma| u_sigma . n_{K,sigma}
    gradient     (G q)_sigma = |sigma| (q_L - q_K) n_KL        (internal edges)

so that G = -D^T on interior unknowns and <G q, v> + <q, D v> = 0 for any
velocity v vanishing on the boundary.
"""

import numpy as np
import scipy.sparse as sp


class FieldError(ValueError):
    pass


# ----------------------------------------------------------------------
# rotated bilinear basis on the reference square [-1,1]^2
#
# span{1, x, y, x^2 - y^2} with edge-mean nodal functionals; basis ordered
# [left, right, bottom, top] like the per-cell edge lists.

def basis_values(ref_points):
    """Values of the 4 basis functions at reference points (..., 2) -> (..., 4)."""
    ref_points = np.asarray(ref_points, dtype=float)
    x = ref_points[..., 0]
    y = ref_points[..., 1]
    q = 0.375 * (x * x - y * y)
    return np.stack([0.25 - 0.5 * x + q,
                     0.25 + 0.5 * x + q,
                     0.25 - 0.5 * y - q,
                     0.25 + 0.5 * y - q], axis=-1)


def basis_gradients(ref_points):
    """Reference gradients at points (..., 2) -> (..., 4, 2)."""
    ref_points = np.asarray(ref_points, dtype=float)
    x = ref_points[..., 0]
    y = ref_points[..., 1]
    gx = 0.75 * x
    gy = 0.75 * y
    one = np.ones_like(x)
    grads = np.stack([
        np.stack([-0.5 * one + gx, -gy], axis=-1),
        np.stack([0.5 * one + gx, -gy], axis=-1),
        np.stack([-gx, -0.5 * one + gy], axis=-1),
        np.stack([-gx, 0.5 * one + gy], axis=-1),
    ], axis=-2)
    return grads


def shape_value(mesh, cell, edge, point, tol=1e-12):
    """Basis function of `edge` (a member of E(cell)) at a physical point."""
    ref = mesh.reference_coords(cell, point)
    if np.any(np.abs(ref) > 1.0 + tol):
        raise FieldError(f"point {point} lies outside cell {cell}")
    slots = mesh.cell_edges[cell]
    matches = np.nonzero(slots == edge)[0]
    if matches.size == 0:
        raise FieldError(f"edge {edge} does not belong to cell {cell}")
    return basis_values(ref)[..., matches[0]]


def interpolate_velocity(mesh, u, cell, point, tol=1e-12):
    """Finite element expansion of u at physical point(s) inside a cell."""
    ref = mesh.reference_coords(cell, point)
    if np.any(np.abs(ref) > 1.0 + tol):
        raise FieldError(f"point {point} lies outside cell {cell}")
    phi = basis_values(ref)                       # (..., 4)
    coeff = u[mesh.cell_edges[cell]]              # (4, 2)
    return phi @ coeff


# ----------------------------------------------------------------------
# Gauss-Legendre tensor quadrature on the reference square

_GAUSS_1D = {
    2: (np.array([-1.0, 1.0]) / np.sqrt(3.0), np.array([1.0, 1.0])),
    3: (np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)]),
        np.array([5.0, 8.0, 5.0]) / 9.0),
}


def gauss_points_1d(n):
    if n in _GAUSS_1D:
        return _GAUSS_1D[n]
    return np.polynomial.legendre.leggauss(n)


def gauss_points_2d(n):
    """Tensor rule on [-1,1]^2: (points (n*n, 2), weights (n*n,))."""
    x, w = gauss_points_1d(n)
    xx, yy = np.meshgrid(x, x, indexing="ij")
    ww = np.outer(w, w)
    return np.column_stack([xx.ravel(), yy.ravel()]), ww.ravel()


def cell_quadrature_points(mesh, n):
    """Physical quadrature points per cell: (ncells, n*n, 2) and weights.

    Weights already include the Jacobian hx*hy/4, i.e. they sum to |K|.
    """
    ref, w = gauss_points_2d(n)
    pts = mesh.cell_centroids[:, None, :] + 0.5 * ref[None, :, :] * np.array([mesh.hx, mesh.hy])
    return pts, w * (mesh.hx * mesh.hy / 4.0)


def edge_mean(mesh, func, t=None, n=3):
    """Edge-mean functionals of a pointwise field, one row per edge.

    `func(points[, t])` must accept an (m, 2) array of points and return
    (m,) or (m, d) values.  Used to set velocity data and initial states.
    """
    x, w = gauss_points_1d(n)
    w = w / 2.0                                    # means, not integrals
    pts = (mesh.edge_p0[:, None, :] * (1.0 - x[None, :, None]) / 2.0
           + mesh.edge_p1[:, None, :] * (1.0 + x[None, :, None]) / 2.0)
    flat = pts.reshape(-1, 2)
    vals = func(flat) if t is None else func(flat, t)
    vals = np.asarray(vals, dtype=float)
    vals = vals.reshape(mesh.nedges, x.size, -1)
    out = np.einsum("q,eqd->ed", w, vals)
    return out[:, 0] if out.shape[1] == 1 else out


# ----------------------------------------------------------------------
# field averaging and first-order operators

def edge_density(mesh, rho):
    """Half-diamond weighted average of a positive cell density on edges."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0.0):
        raise FieldError("cell density must be strictly positive")
    K = mesh.edge_cells[:, 0]
    L = mesh.edge_cells[:, 1]
    hd = mesh.half_diamond_volumes
    out = hd[:, 0] * rho[K]
    internal = ~mesh.edge_is_boundary
    out[internal] += hd[internal, 1] * rho[L[internal]]
    return out / mesh.diamond_volumes


def divergence(mesh, u):
    """Cell divergence (D u)_K, boundary edges included with their values."""
    ce = mesh.cell_edges
    un = np.einsum("ced,ced->ce", u[ce], mesh.edge_normals[ce])
    return np.einsum("ce,ce->c", mesh.edge_lengths[ce] * mesh.cell_edge_signs, un)


def gradient(mesh, q):
    """(G q)_sigma = |sigma| (q_L - q_K) n_KL on internal edges, 0 on boundary."""
    out = np.zeros((mesh.nedges, 2))
    internal = mesh.interior_edges
    K = mesh.edge_cells[internal, 0]
    L = mesh.edge_cells[internal, 1]
    jump = mesh.edge_lengths[internal] * (q[L] - q[K])
    out[internal] = jump[:, None] * mesh.edge_normals[internal]
    return out


def div_matrix_interior(mesh):
    """Sparse D restricted to interior velocity unknowns: (ncells, 2*n_int).

    Flat velocity index is 2*interior_position + component.  The exact
    negative transpose of this matrix is the gradient on interior edges.
    """
    internal = mesh.interior_edges
    pos = mesh.interior_index[internal]
    K = mesh.edge_cells[internal, 0]
    L = mesh.edge_cells[internal, 1]
    coeff = mesh.edge_lengths[internal][:, None] * mesh.edge_normals[internal]
    rows = np.concatenate([np.repeat(K, 2), np.repeat(L, 2)])
    cols = np.tile(np.stack([2 * pos, 2 * pos + 1], axis=1).ravel(), 2)
    vals = np.concatenate([coeff.ravel(), -coeff.ravel()])
    return sp.csr_matrix((vals, (rows, cols)), shape=(mesh.ncells, 2 * mesh.n_interior))


def lumped_mass(mesh, w):
    """Diagonal velocity mass entries |D_sigma| * w_sigma, one per edge.

    Returned as an (nedges,) array; expand per component as needed.  The
    weight must be strictly positive so the matrix is invertible.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0.0):
        raise FieldError("lumped mass weight must be strictly positive")
    return mesh.diamond_volumes * w


# ----------------------------------------------------------------------
# viscous stiffness

def viscous_stiffness(mesh, mu):
    """Broken stiffness mu*grad:grad + (mu/3)*div*div over all edge dofs.

    Assembled cellwise with 2x2 Gauss (exact for the rotated bilinear
    gradients); returns CSR of size (2*nedges, 2*nedges), flat dof 2*edge
    + component.  Symmetric positive semi-definite.
    """
    if mu < 0.0:
        raise FieldError("viscosity must be nonnegative")
    ref, w = gauss_points_2d(2)
    grads = basis_gradients(ref)                   # (q, 4, 2)
    # reference moments I[a, b, i, j] = int dphi_a/dx_i dphi_b/dx_j
    I = np.einsum("q,qai,qbj->abij", w, grads, grads)
    hx, hy = mesh.hx, mesh.hy
    scale = np.array([[hy / hx, 1.0], [1.0, hx / hy]])
    # local 8x8, dof order (edge slot a, component i) -> 2a + i
    loc = np.zeros((8, 8))
    for a in range(4):
        for b in range(4):
            grad_dot = scale[0, 0] * I[a, b, 0, 0] + scale[1, 1] * I[a, b, 1, 1]
            for i in range(2):
                for j in range(2):
                    val = (mu / 3.0) * scale[i, j] * I[a, b, i, j]
                    if i == j:
                        val += mu * grad_dot
                    loc[2 * a + i, 2 * b + j] = val

    gdof = np.repeat(2 * mesh.cell_edges, 2, axis=1)
    gdof[:, 1::2] += 1                             # (ncells, 8)
    rows = np.repeat(gdof, 8, axis=1).ravel()
    cols = np.tile(gdof, (1, 8)).ravel()
    vals = np.tile(loc.ravel(), mesh.ncells)
    n = 2 * mesh.nedges
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    return A


# ----------------------------------------------------------------------
# diamond-cell convection

def subedge_velocity_coeffs(mesh, u):
    """|eps| * (u(m_eps) . n_eps) per sub-edge, oriented out of sub_pair[:, 0].

    u is interpolated with the finite element expansion at the sub-edge
    midpoints, which for this element is the average of the two edge
    values meeting at the sub-edge's vertex.
    """
    ref = np.stack([
        2.0 * (mesh.sub_midpoints[:, 0] - mesh.cell_centroids[mesh.sub_cell, 0]) / mesh.hx,
        2.0 * (mesh.sub_midpoints[:, 1] - mesh.cell_centroids[mesh.sub_cell, 1]) / mesh.hy,
    ], axis=-1)
    phi = basis_values(ref)                            # (nsub, 4)
    coeff = u[mesh.cell_edges[mesh.sub_cell]]          # (nsub, 4, 2)
    umid = np.einsum("sa,sad->sd", phi, coeff)
    return mesh.sub_lengths * np.einsum("sd,sd->s", umid, mesh.sub_normals)


def _upwind_scalar_matrix(mesh, a):
    """Scalar upwind transport stencil over diamonds from per-sub-edge a."""
    s1 = mesh.sub_pair[:, 0]
    s2 = mesh.sub_pair[:, 1]
    ap = np.maximum(a, 0.0)
    am = np.maximum(-a, 0.0)
    rows = np.concatenate([s1, s1, s2, s2])
    cols = np.concatenate([s1, s2, s2, s1])
    vals = np.concatenate([ap, -am, am, -ap])
    C = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.nedges, mesh.nedges))
    C.sum_duplicates()
    return C


def convection_matrix(mesh, fluxes, mode="centered", tol=1e-10):
    """Momentum convection matrix from per-sub-edge mass fluxes.

    `fluxes` is either (nsub,) oriented out of sub_pair[:, 0], or (nsub, 2)
    carrying both orientations, in which case antisymmetry is checked.
    Both velocity components get the same scalar stencil; the returned CSR
    acts on flat dofs 2*edge + component over all edges.
    """
    fluxes = np.asarray(fluxes, dtype=float)
    if fluxes.ndim == 2:
        scale = np.max(np.abs(fluxes)) or 1.0
        if np.max(np.abs(fluxes[:, 0] + fluxes[:, 1])) > tol * scale:
            raise FieldError("sub-edge fluxes are not antisymmetric")
        fluxes = fluxes[:, 0]
    if mode == "centered":
        s1 = mesh.sub_pair[:, 0]
        s2 = mesh.sub_pair[:, 1]
        half = 0.5 * fluxes
        rows = np.concatenate([s1, s1, s2, s2])
        cols = np.concatenate([s1, s2, s2, s1])
        vals = np.concatenate([half, half, -half, -half])
        C = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.nedges, mesh.nedges))
        C.sum_duplicates()
    elif mode == "upwind":
        C = _upwind_scalar_matrix(mesh, fluxes)
    else:
        raise ValueError(f"unknown convection mode '{mode}'")
    return sp.kron(C, sp.identity(2, format="csr"), format="csr")


# ----------------------------------------------------------------------
# pressure operator

def pressure_laplacian(mesh, w, q_up=None):
    """Finite-volume pressure operator with edge weights q_up / w.

    Entrywise this is the stencil
        (L p)_K = sum_{sigma=K|L} (q_up_sigma / w_sigma)
                                  (|sigma|^2 / |D_sigma|) (p_K - p_L)
    and algebraically it equals the composition of the cell divergence,
    the diagonal upwind-density weight, the inverse lumped mass M_w, and
    the negative transposed divergence.  Symmetric PSD; rows sum to zero.
    """
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0.0):
        raise FieldError("pressure operator weight must be strictly positive")
    internal = mesh.interior_edges
    if q_up is None:
        q = np.ones(internal.size)
    else:
        q_up = np.asarray(q_up, dtype=float)
        if np.any(q_up < 0.0):
            raise FieldError("upwind weight must be nonnegative")
        q = q_up[internal] if q_up.size == mesh.nedges else q_up
    K = mesh.edge_cells[internal, 0]
    L = mesh.edge_cells[internal, 1]
    c = (q / w[internal]) * mesh.edge_lengths[internal] ** 2 / mesh.diamond_volumes[internal]
    rows = np.concatenate([K, L, K, L])
    cols = np.concatenate([K, L, L, K])
    vals = np.concatenate([c, c, -c, -c])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.ncells, mesh.ncells))
    A.sum_duplicates()
    return A


def pressure_laplacian_product(mesh, w, q_up=None):
    """Same operator assembled as a matrix product (independent route)."""
    w = np.asarray(w, dtype=float)
    internal = mesh.interior_edges
    if q_up is None:
        q = np.ones(internal.size)
    else:
        q_up = np.asarray(q_up, dtype=float)
        q = q_up[internal] if q_up.size == mesh.nedges else q_up
    D = div_matrix_interior(mesh)
    minv = 1.0 / (mesh.diamond_volumes[internal] * w[internal])
    diag = sp.diags(np.repeat(q * minv, 2))
    # G = -D^T, so -D (Q M^-1) G = D (Q M^-1) D^T
    return (D @ diag @ D.T).tocsr()

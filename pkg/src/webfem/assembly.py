"""Sparse Galerkin operators and load vectors over the web basis.

Assembly is table-driven: the weighted tensor-product basis (w * b_k) and
its first partials are tabulated once per quadrature rule, after which
every operator (including each Newton/Picard reassembly) reduces to
vectorized products over the point tables. Systems are assembled in the
full relevant basis and reduced to the web basis with the coupling matrix
``Ebar = diag(1/w(x_i)) E``:  A_web = Ebar A Ebar^T.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .splines import nonzero_basis


class AssemblyError(RuntimeError):
    """Inconsistent assembly inputs."""


class CoercivityError(AssemblyError):
    """Coefficient failed the positivity requirement at a quadrature point."""


_CHUNK = 40000  # quadrature points per COO block


# ---------------------------------------------------------------------------
# basis tables
# ---------------------------------------------------------------------------

class BasisTables:
    """Values of the weighted basis w*b_k at the quadrature points.

    Attributes
    ----------
    idx : (N, na) int
        Column (in the relevant-index enumeration) of each active basis.
    wb, wbx, wby : (N, na)
        Weighted basis values and first partials.
    qw : (N,) quadrature weights; points : (N, 2); cell_ids : (N,).
    """

    def __init__(self, basis, quad, nderiv=1):
        grid = basis.grid
        pts = quad.points
        m1, m2 = grid.degrees
        sx, dx = nonzero_basis(grid.kvs[0], pts[:, 0], nderiv)
        sy, dy = nonzero_basis(grid.kvs[1], pts[:, 1], nderiv)
        ax = sx[:, None] - m1 + np.arange(m1 + 1)[None, :]
        ay = sy[:, None] - m2 + np.arange(m2 + 1)[None, :]
        idx = basis.kcol[ax[:, :, None], ay[:, None, :]]
        if np.any(idx < 0):
            raise AssemblyError(
                "quadrature point activates a basis function outside the "
                "relevant set; the domain is not covered by the grid core")
        n = pts.shape[0]
        na = (m1 + 1) * (m2 + 1)
        self.idx = idx.reshape(n, na)
        b = (dx[0][:, :, None] * dy[0][:, None, :]).reshape(n, na)
        w = basis.domain.weight(pts)
        self.wb = w[:, None] * b
        if nderiv >= 1:
            bx = (dx[1][:, :, None] * dy[0][:, None, :]).reshape(n, na)
            by = (dx[0][:, :, None] * dy[1][:, None, :]).reshape(n, na)
            gw = basis.domain.weight_gradient(pts)
            self.wbx = gw[:, 0][:, None] * b + w[:, None] * bx
            self.wby = gw[:, 1][:, None] * b + w[:, None] * by
        self.qw = quad.weights
        self.points = pts
        self.cell_ids = quad.cell_ids
        self.n_cols = basis.n_relevant
        self.basis = basis

    @property
    def num_points(self):
        return self.points.shape[0]

    def field(self, c_full, grad=False):
        """Field values (and gradient) of a full-basis coefficient vector."""
        cw = c_full[self.idx]
        vals = np.einsum("na,na->n", cw, self.wb)
        if not grad:
            return vals
        gx = np.einsum("na,na->n", cw, self.wbx)
        gy = np.einsum("na,na->n", cw, self.wby)
        return vals, np.column_stack([gx, gy])


def bilinear_form(row_idx, col_idx, qw, terms, shape):
    """Sparse matrix  sum_q qw_q * sum_t c_t(q) Fa_t(q,a) Fb_t(q,b).

    ``terms`` is an iterable of (c, Fa, Fb) with c of shape (N,) or a
    scalar, Fa of shape (N, nra) matching ``row_idx`` and Fb matching
    ``col_idx``. Deterministic: fixed chunk boundaries and coo->csr
    duplicate summation.
    """
    n = qw.size
    out = sp.csr_matrix(shape)
    for start in range(0, n, _CHUNK):
        sl = slice(start, min(start + _CHUNK, n))
        data = None
        for c, fa, fb in terms:
            cq = (qw[sl] * c) if np.isscalar(c) else (qw[sl] * c[sl])
            contrib = np.einsum("n,na,nb->nab", cq, fa[sl], fb[sl])
            data = contrib if data is None else data + contrib
        rows = np.broadcast_to(row_idx[sl][:, :, None], data.shape)
        cols = np.broadcast_to(col_idx[sl][:, None, :], data.shape)
        block = sp.coo_matrix((data.ravel(), (rows.ravel(), cols.ravel())),
                              shape=shape).tocsr()
        out = out + block  # fixed chunk order keeps the sum deterministic
    return out


def linear_form(idx, qw, terms, n_cols):
    """Vector  sum_q qw_q * sum_t c_t(q) F_t(q, a) scattered to columns."""
    out = np.zeros(n_cols)
    acc = None
    for c, fa in terms:
        contrib = (qw * c)[:, None] * fa
        acc = contrib if acc is None else acc + contrib
    np.add.at(out, idx.ravel(), acc.ravel())
    return out


def web_reduce(basis, A_full=None, F_full=None):
    """Reduce full-basis operators to the web basis via the coupling matrix."""
    E = basis.coupling_matrix()
    out = []
    if A_full is not None:
        out.append((E @ A_full @ E.T).tocsr())
    if F_full is not None:
        out.append(E @ F_full)
    return out[0] if len(out) == 1 else tuple(out)


# ---------------------------------------------------------------------------
# scalar problems
# ---------------------------------------------------------------------------

@dataclass
class AssembledSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    basis: object
    kind: str
    meta: dict = field(default_factory=dict)


def assemble_vcpe(basis, a, f, tables):
    """Stiffness system for -div(a grad u) = f over the web basis."""
    a_vals = a(tables.points) if callable(a) else np.full(tables.num_points, float(a))
    if np.any(a_vals <= 0.0):
        where = tables.points[np.argmin(a_vals)]
        raise CoercivityError(
            f"diffusion coefficient nonpositive at quadrature point {tuple(where)}")
    f_vals = f(tables.points) if callable(f) else np.full(tables.num_points, float(f))
    A_full = bilinear_form(tables.idx, tables.idx, tables.qw,
                           [(a_vals, tables.wbx, tables.wbx),
                            (a_vals, tables.wby, tables.wby)],
                           (tables.n_cols, tables.n_cols))
    F_full = linear_form(tables.idx, tables.qw, [(f_vals, tables.wb)], tables.n_cols)
    A, F = web_reduce(basis, A_full, F_full)
    return AssembledSystem(matrix=A, rhs=F, basis=basis, kind="vcpe")


def assemble_mass(basis, tables, coefficient=1.0):
    """Web-basis mass matrix (optionally with a variable coefficient)."""
    c = (coefficient(tables.points) if callable(coefficient)
         else float(coefficient))
    M_full = bilinear_form(tables.idx, tables.idx, tables.qw,
                           [(c, tables.wb, tables.wb)],
                           (tables.n_cols, tables.n_cols))
    return web_reduce(basis, M_full)


def raw_weighted_gram(tables):
    """Gram matrix of the raw weighted basis {w b_k, k in K} (no extension)."""
    return bilinear_form(tables.idx, tables.idx, tables.qw,
                         [(1.0, tables.wb, tables.wb)],
                         (tables.n_cols, tables.n_cols))


def gram_condition_estimate(basis, tables):
    """l2-condition number of the web-basis Gram (mass) matrix.

    Exact for small systems; extreme eigenvalues via Lanczos with a fixed
    start vector (deterministic) above that.
    """
    import scipy.sparse.linalg as spla

    M = assemble_mass(basis, tables)
    n = M.shape[0]
    if n <= 1500:
        vals = np.linalg.eigvalsh(M.toarray())
        return float(vals[-1] / vals[0])
    v0 = np.ones(n)
    top = spla.eigsh(M, k=1, which="LA", v0=v0, return_eigenvectors=False)
    bottom = spla.eigsh(M, k=1, sigma=0.0, which="LM", v0=v0,
                        return_eigenvectors=False)
    return float(top[0] / bottom[0])


def assemble_dipole_rhs(basis, d, tables):
    """Load vector for a dipole source f = div d in weak form: -int d.grad B."""
    d_vals = d(tables.points) if callable(d) else np.broadcast_to(
        np.asarray(d, dtype=float), (tables.num_points, 2))
    F_full = linear_form(tables.idx, tables.qw,
                         [(-d_vals[:, 0], tables.wbx),
                          (-d_vals[:, 1], tables.wby)], tables.n_cols)
    return web_reduce(basis, F_full=F_full)


# ---------------------------------------------------------------------------
# p-Laplacian (regularized)
# ---------------------------------------------------------------------------

def _plap_pointwise(tables, basis, coeffs, p, eps):
    c_full = basis.coupling_matrix().T @ coeffs
    u, g = tables.field(c_full, grad=True)
    s2 = np.sum(g * g, axis=1)
    mu = (eps ** 2 + s2) ** (0.5 * (p - 2.0))
    return u, g, s2, mu


def assemble_plap_residual(basis, tables, coeffs, p, eps, f_vals):
    """Residual of the regularized p-Laplacian with mass term.

    R[j] = int mu_eps(|grad u|) grad u . grad B_j + int u B_j - int f B_j.
    """
    u, g, s2, mu = _plap_pointwise(tables, basis, coeffs, p, eps)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(u))):
        raise AssemblyError("non-finite iterate in p-Laplacian residual")
    R_full = linear_form(tables.idx, tables.qw,
                         [(mu * g[:, 0], tables.wbx),
                          (mu * g[:, 1], tables.wby),
                          (u - f_vals, tables.wb)], tables.n_cols)
    return web_reduce(basis, F_full=R_full)


def assemble_plap_jacobian_and_residual(basis, tables, coeffs, p, eps, f_vals):
    """Exact Jacobian of the residual in the coefficients, plus the residual.

    The Jacobian contains the rank-modifying term
    (p-2)(eps^2+s^2)^{(p-4)/2} (grad u (x) grad u).
    """
    if p <= 1.0:
        raise AssemblyError(f"admissible exponents are p in (1, inf), got {p}")
    if eps < 0.0 or (p < 2.0 and eps == 0.0):
        raise AssemblyError("regularization eps must be positive for p < 2")
    u, g, s2, mu = _plap_pointwise(tables, basis, coeffs, p, eps)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(u))):
        raise AssemblyError("non-finite iterate in p-Laplacian assembly")
    # where the base vanishes so does grad u, killing the rank-1 term
    base = eps ** 2 + s2
    kappa = np.zeros_like(base)
    pos = base > 0.0
    kappa[pos] = (p - 2.0) * base[pos] ** (0.5 * (p - 4.0))
    # directional factor t_a = grad u . grad wb_a
    t = g[:, 0][:, None] * tables.wbx + g[:, 1][:, None] * tables.wby
    J_full = bilinear_form(tables.idx, tables.idx, tables.qw,
                           [(mu, tables.wbx, tables.wbx),
                            (mu, tables.wby, tables.wby),
                            (kappa, t, t),
                            (1.0, tables.wb, tables.wb)],
                           (tables.n_cols, tables.n_cols))
    R_full = linear_form(tables.idx, tables.qw,
                         [(mu * g[:, 0], tables.wbx),
                          (mu * g[:, 1], tables.wby),
                          (u - f_vals, tables.wb)], tables.n_cols)
    J, R = web_reduce(basis, J_full, R_full)
    return J, R


def plap_energy(basis, tables, coeffs, p, eps, f_vals):
    """Regularized energy (1/p) int (eps^2+|grad u|^2)^{p/2} + 1/2 int u^2 - int f u."""
    u, g, s2, mu = _plap_pointwise(tables, basis, coeffs, p, eps)
    dens = (eps ** 2 + s2) ** (0.5 * p) / p + 0.5 * u * u - f_vals * u
    return float(np.sum(tables.qw * dens))


# ---------------------------------------------------------------------------
# pressure space and mixed system
# ---------------------------------------------------------------------------

class PressureSpace:
    """Discontinuous tensor polynomials per cell, restricted by cut quadrature.

    Cells that receive no quadrature weight carry no degrees of freedom.
    Sliver cut cells (cut area below ``agglomerate`` times the full cell
    area) are merged into their best-covered neighbor, which removes the
    near-null pressure modes such slivers would otherwise contribute.
    The basis on each patch is the tensor monomials of the host cell,
    ((x-cx)/hx)^a ((y-cy)/hy)^b, extended over the merged cells.
    """

    def __init__(self, grid, quad, degree, agglomerate=0.1, macro=1):
        if degree < 0:
            raise AssemblyError(f"pressure degree must be nonnegative, got {degree}")
        if macro < 1:
            raise AssemblyError(f"macro-cell size must be at least 1, got {macro}")
        self.grid = grid
        self.degree = degree
        self.macro = int(macro)
        nx, ny = grid.num_cells
        ids, inv = np.unique(quad.cell_ids, return_inverse=True)
        cell_area = np.bincount(inv, weights=quad.weights)
        bx = grid.kvs[0].breakpoints
        by = grid.kvs[1].breakpoints
        # group grid cells into macro patches, measuring their cut coverage
        patch_area, patch_full = {}, {}
        for cid, area in zip(ids.tolist(), cell_area):
            jx, jy = divmod(int(cid), ny)
            pc = (jx // self.macro, jy // self.macro)
            patch_area[pc] = patch_area.get(pc, 0.0) + area
            full = (bx[jx + 1] - bx[jx]) * (by[jy + 1] - by[jy])
            patch_full[pc] = patch_full.get(pc, 0.0) + full
        fraction = {c: patch_area[c] / patch_full[c] for c in patch_area}
        # sliver patches join the best-covered patch in their neighborhood;
        # chains resolve by following hosts to a root
        assign = {}
        for c in sorted(patch_area):
            if fraction[c] >= agglomerate:
                assign[c] = c
                continue
            best = c
            for dx_ in (-1, 0, 1):
                for dy_ in (-1, 0, 1):
                    nb = (c[0] + dx_, c[1] + dy_)
                    if nb in fraction and fraction[nb] > fraction[best]:
                        best = nb
            assign[c] = best
        for c in sorted(assign):
            seen = {c}
            root = assign[c]
            while assign[root] != root and root not in seen:
                seen.add(root)
                root = assign[root]
            assign[c] = root
        roots = sorted({assign[c] for c in assign})
        self.cells = roots
        root_pos = {c: r for r, c in enumerate(roots)}
        self.cell_pos = {}
        self._host_patch = {}
        for cid in ids.tolist():
            jx, jy = divmod(int(cid), ny)
            root = assign[(jx // self.macro, jy // self.macro)]
            self.cell_pos[cid] = root_pos[root]
            self._host_patch[cid] = root
        self.ndof_cell = (degree + 1) ** 2
        self.n_dofs = len(self.cells) * self.ndof_cell
        if self.n_dofs == 0:
            raise AssemblyError("pressure space is empty: no active cells")

    def _patch_bounds(self, patch):
        grid = self.grid
        bx = grid.kvs[0].breakpoints
        by = grid.kvs[1].breakpoints
        x0 = bx[patch[0] * self.macro]
        x1 = bx[min((patch[0] + 1) * self.macro, grid.num_cells[0])]
        y0 = by[patch[1] * self.macro]
        y1 = by[min((patch[1] + 1) * self.macro, grid.num_cells[1])]
        return x0, x1, y0, y1

    def _local_coords(self, pts, cell_ids):
        """Host-patch scaled coordinates of points given their grid cell ids."""
        bounds = np.array([self._patch_bounds(self._host_patch[int(c)])
                           for c in cell_ids])
        x0, x1, y0, y1 = bounds[:, 0], bounds[:, 1], bounds[:, 2], bounds[:, 3]
        xi = (pts[:, 0] - 0.5 * (x0 + x1)) / (0.5 * (x1 - x0))
        eta = (pts[:, 1] - 0.5 * (y0 + y1)) / (0.5 * (y1 - y0))
        return xi, eta

    def tables(self, quad):
        """Per-point values and global dof columns, shapes (N, ndof_cell)."""
        d = self.degree
        pts = quad.points
        n = pts.shape[0]
        pos = np.array([self.cell_pos[int(c)] for c in quad.cell_ids])
        xi, eta = self._local_coords(pts, quad.cell_ids)
        px = np.stack([xi ** a for a in range(d + 1)], axis=1)
        py = np.stack([eta ** b for b in range(d + 1)], axis=1)
        vals = (px[:, :, None] * py[:, None, :]).reshape(n, self.ndof_cell)
        base = pos * self.ndof_cell
        cols = base[:, None] + np.arange(self.ndof_cell)[None, :]
        return cols, vals

    def evaluate(self, coeffs, pts):
        """Point values of a pressure field (zero outside active cells)."""
        grid = self.grid
        d = self.degree
        ny = grid.num_cells[1]
        pts = np.asarray(pts, dtype=float)
        cids = np.array([grid.kvs[0].find_cell(x) * ny + grid.kvs[1].find_cell(y)
                         for x, y in pts])
        active = np.array([int(c) in self.cell_pos for c in cids])
        out = np.zeros(pts.shape[0])
        if not np.any(active):
            return out
        sub = pts[active]
        sub_ids = cids[active]
        pos = np.array([self.cell_pos[int(c)] for c in sub_ids])
        xi, eta = self._local_coords(sub, sub_ids)
        px = np.stack([xi ** a for a in range(d + 1)], axis=1)
        py = np.stack([eta ** b for b in range(d + 1)], axis=1)
        vals = (px[:, :, None] * py[:, None, :]).reshape(sub.shape[0], self.ndof_cell)
        loc = coeffs.reshape(-1, self.ndof_cell)[pos]
        out[active] = np.einsum("nd,nd->n", loc, vals)
        return out


def pressure_mass_and_integral(pspace, quad):
    """Block-diagonal pressure mass matrix and the vector of basis integrals."""
    cols, vals = pspace.tables(quad)
    M = bilinear_form(cols, cols, quad.weights, [(1.0, vals, vals)],
                      (pspace.n_dofs, pspace.n_dofs))
    g = linear_form(cols, quad.weights, [(1.0, vals)], pspace.n_dofs)
    return M, g


def project_pressure(pspace, quad, p_exact):
    """Cell-wise L2 projection onto the pressure space."""
    cols, vals = pspace.tables(quad)
    p_vals = p_exact(quad.points) if callable(p_exact) else np.asarray(p_exact)
    M, _ = pressure_mass_and_integral(pspace, quad)
    rhs = linear_form(cols, quad.weights, [(p_vals, vals)], pspace.n_dofs)
    nd = pspace.ndof_cell
    out = np.zeros(pspace.n_dofs)
    Md = M.toarray() if pspace.n_dofs < 20000 else None
    for c in range(len(pspace.cells)):
        sl = slice(c * nd, (c + 1) * nd)
        block = Md[sl, sl] if Md is not None else M[sl, sl].toarray()
        loc = rhs[sl]
        try:
            out[sl] = np.linalg.solve(block, loc)
        except np.linalg.LinAlgError:
            out[sl] = np.linalg.lstsq(block, loc, rcond=None)[0]
    return out


def assemble_mixed(basis, pspace, a_fn, coeffs_prev, phi, tables, quad):
    """Blocks of the quasi-Newtonian mixed system with Picard-frozen viscosity.

    Velocity dofs are the two stacked web-coefficient blocks; the viscosity
    is evaluated at |D(u_prev)|^2 from ``coeffs_prev`` (2*n_inner,).

    Returns (A, B, Fv, Mp, g): velocity block A (2n x 2n), divergence block
    B (np x 2n), velocity load Fv, pressure mass Mp and pressure integrals g.
    """
    n = basis.n_inner
    E = basis.coupling_matrix()
    c1 = E.T @ coeffs_prev[:n]
    c2 = E.T @ coeffs_prev[n:]
    _, g1 = tables.field(c1, grad=True)
    _, g2 = tables.field(c2, grad=True)
    d11 = g1[:, 0]
    d22 = g2[:, 1]
    d12 = 0.5 * (g1[:, 1] + g2[:, 0])
    dnorm2 = d11 ** 2 + d22 ** 2 + 2.0 * d12 ** 2
    a_vals = a_fn(dnorm2)
    if np.any(a_vals <= 0.0) or not np.all(np.isfinite(a_vals)):
        raise CoercivityError("viscosity must be positive and finite")

    shape = (tables.n_cols, tables.n_cols)
    A11 = bilinear_form(tables.idx, tables.idx, tables.qw,
                        [(a_vals, tables.wbx, tables.wbx),
                         (0.5 * a_vals, tables.wby, tables.wby)], shape)
    A22 = bilinear_form(tables.idx, tables.idx, tables.qw,
                        [(a_vals, tables.wby, tables.wby),
                         (0.5 * a_vals, tables.wbx, tables.wbx)], shape)
    A12 = bilinear_form(tables.idx, tables.idx, tables.qw,
                        [(0.5 * a_vals, tables.wby, tables.wbx)], shape)
    A11, A22 = web_reduce(basis, A11), web_reduce(basis, A22)
    A12 = (E @ A12 @ E.T).tocsr()
    A = sp.bmat([[A11, A12], [A12.T, A22]], format="csr")

    phi_vals = phi(tables.points) if callable(phi) else np.broadcast_to(
        np.asarray(phi, dtype=float), (tables.num_points, 2))
    F1 = web_reduce(basis, F_full=linear_form(
        tables.idx, tables.qw, [(phi_vals[:, 0], tables.wb)], tables.n_cols))
    F2 = web_reduce(basis, F_full=linear_form(
        tables.idx, tables.qw, [(phi_vals[:, 1], tables.wb)], tables.n_cols))
    Fv = np.concatenate([F1, F2])

    pcols, pvals = pspace.tables(quad)
    Bx = bilinear_form(pcols, tables.idx, tables.qw,
                       [(-1.0, pvals, tables.wbx)], (pspace.n_dofs, tables.n_cols))
    By = bilinear_form(pcols, tables.idx, tables.qw,
                       [(-1.0, pvals, tables.wby)], (pspace.n_dofs, tables.n_cols))
    B = sp.hstack([(Bx @ E.T).tocsr(), (By @ E.T).tocsr()], format="csr")

    Mp, g = pressure_mass_and_integral(pspace, quad)
    return A, B, Fv, Mp, g


def export_coo(path, matrix, header=None):
    """Write a sparse matrix as coordinate-format text: 'row col value' lines."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        fh.write(f"# shape {coo.shape[0]} {coo.shape[1]} nnz {coo.nnz}\n")
        order = np.lexsort((coo.col, coo.row))
        for r, c, v in zip(coo.row[order], coo.col[order], coo.data[order]):
            fh.write(f"{int(r)} {int(c)} {float(v)!r}\n")

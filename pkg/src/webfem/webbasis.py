"""Extension coefficients, web-splines and the canonical quasi-interpolant.

An outer B-spline ``b_j`` is absorbed into the inner ones by extrapolating
its dual functional: for every inner ``i`` whose support contains the inner
cell ``Q_j`` assigned to ``j``, the extension coefficient is
``e_{i,j} = lambda_j(p_{i,j})`` with ``p_{i,j}`` the polynomial piece of
``b_i`` on ``Q_j``. The web-spline for an inner index ``i`` is then

    B_i = (w / w(x_i)) * (b_i + sum_{j in J(i)} e_{i,j} b_j),

which vanishes on the boundary through the weight and keeps the basis
uniformly stable under refinement.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .geometry import classify_cells, classify_indices
from .splines import (
    deboor_fix, eval_bspline_deriv, interpolate_piece, local_polynomial,
    nonzero_basis,
)


class BasisError(RuntimeError):
    """Inconsistent basis construction or evaluation request."""


ALPHA_WARN_THRESHOLD = 0.1  # extrapolation-cell size ratio below which we warn


@dataclass
class ExtensionTable:
    """Sparse map (i, j) -> e_{i,j} for inner i and outer j in J(i)."""

    entries: dict

    @property
    def max_abs(self):
        return max((abs(v) for v in self.entries.values()), default=0.0)

    def coefficients_for(self, i):
        return {j: e for (ii, j), e in self.entries.items() if ii == i}


def build_extension(grid, idx):
    """Extension coefficients for all (inner, outer) couplings in ``idx``."""
    entries = {}
    kvs = grid.kvs
    for j in idx.outer:
        q = idx.q_cell[j]
        for i in idx.i_of_j[j]:
            piece = local_polynomial(grid, i, q)
            entries[(i, j)] = deboor_fix(kvs, j, piece)
    return ExtensionTable(entries=entries)


class WebBasis:
    """Weighted extended B-spline basis over (grid, domain).

    Attributes
    ----------
    grid, domain : the discretization pair
    idx : IndexSets
    ext : ExtensionTable
    w_center : array of w(x_i) in inner order
    """

    def __init__(self, grid, domain, cls, idx, ext):
        self.grid = grid
        self.domain = domain
        self.cls = cls
        self.idx = idx
        self.ext = ext
        centers = np.array([idx.center[i] for i in idx.inner])
        self.w_center = domain.weight(centers)
        if np.any(self.w_center <= 0.0):
            bad = idx.inner[int(np.argmin(self.w_center))]
            raise BasisError(f"nonpositive weight at inner cell center of {bad}")
        nbx, nby = grid.num_basis
        self.kcol = np.full((nbx, nby), -1, dtype=np.int64)
        for c, k in enumerate(idx.relevant):
            self.kcol[k] = c
        self._coupling = None
        self.alpha_warnings = sorted(
            j for j, a in idx.alpha.items() if a < ALPHA_WARN_THRESHOLD)

    @property
    def n_inner(self):
        return len(self.idx.inner)

    @property
    def n_relevant(self):
        return len(self.idx.relevant)

    def extension_matrix(self):
        """Sparse E (n_inner x n_relevant): identity on inner columns plus
        the extension coefficients on outer columns."""
        kmap = {k: c for c, k in enumerate(self.idx.relevant)}
        imap = {i: r for r, i in enumerate(self.idx.inner)}
        rows, cols, data = [], [], []
        for r, i in enumerate(self.idx.inner):
            rows.append(r)
            cols.append(kmap[i])
            data.append(1.0)
        for (i, j), e in sorted(self.ext.entries.items()):
            rows.append(imap[i])
            cols.append(kmap[j])
            data.append(e)
        return sp.csr_matrix((data, (rows, cols)),
                             shape=(self.n_inner, self.n_relevant))

    def coupling_matrix(self):
        """E scaled by 1/w(x_i): web coefficients -> weighted-basis weights."""
        if self._coupling is None:
            D = sp.diags(1.0 / self.w_center)
            self._coupling = (D @ self.extension_matrix()).tocsr()
        return self._coupling

    def summary(self):
        return {
            "num_relevant": self.n_relevant,
            "num_inner": self.n_inner,
            "num_outer": len(self.idx.outer),
            "max_extension_coefficient": self.ext.max_abs,
            "alpha_warnings": [list(j) for j in self.alpha_warnings],
        }


def build_web_basis(domain, grid, samples_per_axis=5):
    """Classify, extend and weight: the full basis construction pipeline."""
    cls = classify_cells(domain, grid, samples_per_axis)
    idx = classify_indices(grid, cls)
    ext = build_extension(grid, idx)
    return WebBasis(grid, domain, cls, idx, ext)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def eval_web(basis, i, x, deriv=(0, 0)):
    """Value or first partial derivative of web-spline ``B_i`` at a point.

    Reference (scalar) path: sums the eb-spline expansion directly and
    applies the product rule with the weight. Exactly zero outside the
    support union and outside the domain.
    """
    if i not in basis.idx.j_of_i:
        raise BasisError(f"{i} is not an inner index")
    total = deriv[0] + deriv[1]
    if total > 1:
        raise BasisError("only values and first derivatives are supported")
    grid = basis.grid
    x = np.asarray(x, dtype=float)

    def eb(d):
        val = (eval_bspline_deriv(grid.kvs[0], i[0], x[0], d[0])
               * eval_bspline_deriv(grid.kvs[1], i[1], x[1], d[1]))
        for j in basis.idx.j_of_i[i]:
            val += (basis.ext.entries[(i, j)]
                    * eval_bspline_deriv(grid.kvs[0], j[0], x[0], d[0])
                    * eval_bspline_deriv(grid.kvs[1], j[1], x[1], d[1]))
        return val

    wxi = basis.w_center[basis.idx.imap[i]]
    w = float(basis.domain.weight(x[None, :])[0])
    if total == 0:
        return w * eb((0, 0)) / wxi
    gw = basis.domain.weight_gradient(x[None, :])[0]
    ax = 0 if deriv[0] == 1 else 1
    return (gw[ax] * eb((0, 0)) + w * eb(deriv)) / wxi


def eval_field(basis, coeffs, pts, nderiv=0):
    """Values (and gradients) of a web expansion at many points.

    Parameters
    ----------
    coeffs : array (n_inner,)
        Web coefficients.
    pts : array (N, 2)
    nderiv : 0 or 1

    Returns
    -------
    vals : (N,) or (vals, grads) with grads (N, 2) when nderiv == 1.
    """
    grid = basis.grid
    pts = np.asarray(pts, dtype=float)
    m1, m2 = grid.degrees
    c_full = basis.coupling_matrix().T @ np.asarray(coeffs, dtype=float)
    c_pad = np.concatenate([c_full, [0.0]])

    n = pts.shape[0]
    vals = np.empty(n)
    grads = np.empty((n, 2)) if nderiv else None
    chunk = 200000
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        blk = pts[sl]
        sx, dx = nonzero_basis(grid.kvs[0], blk[:, 0], nderiv)
        sy, dy = nonzero_basis(grid.kvs[1], blk[:, 1], nderiv)
        ax = sx[:, None] - m1 + np.arange(m1 + 1)[None, :]
        ay = sy[:, None] - m2 + np.arange(m2 + 1)[None, :]
        cols = basis.kcol[ax[:, :, None], ay[:, None, :]]
        cw = c_pad[np.where(cols >= 0, cols, c_full.size)]
        b = dx[0][:, :, None] * dy[0][:, None, :]
        s = np.einsum("nab,nab->n", cw, b)
        w = basis.domain.weight(blk)
        vals[sl] = w * s
        if nderiv:
            bx = dx[1][:, :, None] * dy[0][:, None, :]
            by = dx[0][:, :, None] * dy[1][:, None, :]
            sx_ = np.einsum("nab,nab->n", cw, bx)
            sy_ = np.einsum("nab,nab->n", cw, by)
            gw = basis.domain.weight_gradient(blk)
            grads[sl] = gw * s[:, None] + w[:, None] * np.column_stack([sx_, sy_])
    if nderiv == 0:
        return vals
    return vals, grads


# ---------------------------------------------------------------------------
# canonical projector
# ---------------------------------------------------------------------------

def project(basis, f):
    """Coefficients of the quasi-interpolant P_h f.

    ``Lambda_i f = w(x_i) * lambda_i(f/w)`` with the dual functional applied
    to the degree-m tensor interpolant of f/w on the designated interior
    cell of ``b_i``.
    """
    grid = basis.grid
    dom = basis.domain
    degrees = grid.degrees

    def f_over_w(pts):
        w = dom.weight(pts)
        vals = np.asarray(f(pts), dtype=float) / w
        return vals

    coeffs = np.empty(basis.n_inner)
    for r, i in enumerate(basis.idx.inner):
        cell = basis.idx.center_cell[i]
        (x0, x1), (y0, y1) = grid.cell_bounds(cell)
        piece = interpolate_piece(f_over_w, (x0, y0), (x1, y1), degrees)
        if not np.all(np.isfinite(piece.coeffs)):
            raise BasisError(
                f"f/w is not interpolable on the inner cell {cell} of index {i}; "
                "the input does not vanish fast enough at the boundary")
        coeffs[r] = basis.w_center[r] * deboor_fix(grid.kvs, i, piece)
    return coeffs


def jackson_error(basis, u, grad_u, quad):
    """H1(Omega) norm of u - P_h u by quadrature.

    ``u`` and ``grad_u`` are callables on (N, 2) point arrays; ``quad`` is a
    :class:`~webfem.quadrature.DomainQuadrature`.
    """
    coeffs = project(basis, u)
    vals, grads = eval_field(basis, coeffs, quad.points, nderiv=1)
    inside = basis.domain.phi(quad.points) > 0.0
    ev = np.where(inside, np.asarray(u(quad.points), dtype=float) - vals, 0.0)
    eg = np.where(inside[:, None],
                  np.asarray(grad_u(quad.points), dtype=float) - grads, 0.0)
    return float(np.sqrt(np.sum(quad.weights * (ev ** 2 + np.sum(eg ** 2, axis=1)))))

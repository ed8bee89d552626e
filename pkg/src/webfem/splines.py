"""Univariate and tensor-product non-uniform B-splines.

Provides the Cox-de Boor evaluation of B-splines and their derivatives on
arbitrary nondecreasing knot sequences, extraction of local polynomial
pieces on grid cells (stored in Bernstein form), and the de Boor-Fix dual
functionals that are bi-orthogonal to the B-spline basis.

Conventions:
    * evaluation at interior knots is right-continuous; at the last knot
      of a knot vector the value is taken as the limit from the left,
    * a "cell" is an interval bounded by two consecutive *distinct* knots
      (tensor products of such intervals in 2D).
"""

from dataclasses import dataclass
from functools import lru_cache
from math import comb, factorial

import numpy as np


class SplineError(ValueError):
    """Invalid knot vector, index or evaluation request."""


# ---------------------------------------------------------------------------
# knot vectors
# ---------------------------------------------------------------------------

class KnotVector:
    """A nondecreasing knot sequence together with a polynomial degree.

    The associated B-spline basis has ``len(knots) - degree - 1`` members;
    basis function ``i`` is supported on ``[knots[i], knots[i+degree+1]]``.
    Knots may repeat up to multiplicity ``degree + 1``.

    Parameters
    ----------
    knots : array_like
        Nondecreasing knot sequence with at least ``degree + 2`` entries.
    degree : int
        Polynomial degree (nonnegative).
    """

    def __init__(self, knots, degree):
        knots = np.asarray(knots, dtype=float)
        if knots.ndim != 1:
            raise SplineError("knots must be a 1D sequence")
        if degree < 0 or int(degree) != degree:
            raise SplineError(f"degree must be a nonnegative integer, got {degree}")
        degree = int(degree)
        if knots.size < degree + 2:
            raise SplineError(
                f"need at least degree+2 = {degree + 2} knots, got {knots.size}")
        if np.any(np.diff(knots) < 0):
            raise SplineError("knots must be nondecreasing")
        _, counts = np.unique(knots, return_counts=True)
        if np.any(counts > degree + 1):
            raise SplineError(
                f"knot multiplicity exceeds degree+1 = {degree + 1}")
        self.knots = knots
        self.degree = degree
        self.knots.setflags(write=False)
        self.breakpoints = np.unique(knots)
        self.breakpoints.setflags(write=False)

    @property
    def num_basis(self):
        """Number of B-splines on this knot vector."""
        return self.knots.size - self.degree - 1

    @property
    def num_cells(self):
        """Number of nonempty knot intervals."""
        return self.breakpoints.size - 1

    def support(self, i):
        """Closure of the support of basis function ``i``."""
        if not 0 <= i < self.num_basis:
            raise SplineError(f"basis index {i} out of range [0, {self.num_basis})")
        return self.knots[i], self.knots[i + self.degree + 1]

    def cell_bounds(self, j):
        """Endpoints of cell ``j`` (interval between distinct knots)."""
        if not 0 <= j < self.num_cells:
            raise SplineError(f"cell index {j} out of range [0, {self.num_cells})")
        return self.breakpoints[j], self.breakpoints[j + 1]

    def support_cells(self, i):
        """Indices of the cells contained in the support of basis ``i``."""
        lo, hi = self.support(i)
        a = int(np.searchsorted(self.breakpoints, lo, side="left"))
        b = int(np.searchsorted(self.breakpoints, hi, side="left"))
        return range(a, b)

    def cells_covered_by(self, lo, hi):
        """Basis indices whose support contains the interval [lo, hi]."""
        m = self.degree
        t = self.knots
        return [i for i in range(self.num_basis)
                if t[i] <= lo and hi <= t[i + m + 1]]

    def find_cell(self, x):
        """Cell index containing ``x`` (right-continuous; last cell closed)."""
        j = int(np.searchsorted(self.breakpoints, x, side="right")) - 1
        return min(max(j, 0), self.num_cells - 1)

    def refined(self):
        """Dyadic refinement: insert the midpoint of every nonempty span."""
        t = self.knots
        mids = [(0.5 * (a + b)) for a, b in zip(t[:-1], t[1:]) if b > a]
        return KnotVector(np.sort(np.concatenate([t, mids])), self.degree)

    def __repr__(self):
        return f"KnotVector(n={self.knots.size}, degree={self.degree})"


def find_span(kv, x):
    """Largest i with knots[i] <= x < knots[i+1] (last nonempty span at x = end)."""
    t = kv.knots
    if x >= t[-1]:
        # limit from the left at the final knot
        s = int(np.searchsorted(t, t[-1], side="left")) - 1
    else:
        s = int(np.searchsorted(t, x, side="right")) - 1
    return s


def find_spans(kv, x):
    """Vectorized :func:`find_span` over an array of points."""
    t = kv.knots
    x = np.asarray(x, dtype=float)
    s = np.searchsorted(t, x, side="right") - 1
    last = int(np.searchsorted(t, t[-1], side="left")) - 1
    return np.where(x >= t[-1], last, s)


# ---------------------------------------------------------------------------
# B-spline evaluation
# ---------------------------------------------------------------------------

def eval_bspline(kv, index, x):
    """Value of the non-uniform B-spline ``b_index`` at ``x``.

    Straightforward Cox-de Boor recursion; serves as the reference path
    against which the vectorized evaluators are checked.
    """
    m = kv.degree
    t = kv.knots
    if not 0 <= index < kv.num_basis:
        raise SplineError(f"basis index {index} out of range [0, {kv.num_basis})")
    if not np.isfinite(x):
        raise SplineError(f"evaluation point must be finite, got {x}")
    return _cox_de_boor(t, index, m, float(x), t[-1])


def _cox_de_boor(t, i, k, x, t_end):
    if k == 0:
        if t[i] <= x < t[i + 1]:
            return 1.0
        # closed on the right at the global last knot
        if x == t_end and t[i] < t[i + 1] == t_end:
            return 1.0
        return 0.0
    val = 0.0
    d1 = t[i + k] - t[i]
    if d1 > 0.0:
        val += (x - t[i]) / d1 * _cox_de_boor(t, i, k - 1, x, t_end)
    d2 = t[i + k + 1] - t[i + 1]
    if d2 > 0.0:
        val += (t[i + k + 1] - x) / d2 * _cox_de_boor(t, i + 1, k - 1, x, t_end)
    return val


def eval_bspline_deriv(kv, index, x, order):
    """Order-th derivative of ``b_index`` at ``x``.

    One-sided limits are taken from the right at interior knots and from
    the left at the last knot. Orders above the degree return 0 (the
    pointwise a.e. derivative of a piecewise polynomial).
    """
    if order < 0:
        raise SplineError(f"derivative order must be nonnegative, got {order}")
    if order == 0:
        return eval_bspline(kv, index, x)
    m = kv.degree
    if order > m:
        return 0.0
    t = kv.knots
    if not 0 <= index < kv.num_basis:
        raise SplineError(f"basis index {index} out of range [0, {kv.num_basis})")
    return _deriv_rec(t, index, m, float(x), order, t[-1])


def _deriv_rec(t, i, k, x, order, t_end):
    if order == 0:
        return _cox_de_boor(t, i, k, x, t_end)
    val = 0.0
    d1 = t[i + k] - t[i]
    if d1 > 0.0:
        val += k / d1 * _deriv_rec(t, i, k - 1, x, order - 1, t_end)
    d2 = t[i + k + 1] - t[i + 1]
    if d2 > 0.0:
        val -= k / d2 * _deriv_rec(t, i + 1, k - 1, x, order - 1, t_end)
    return val


def nonzero_basis(kv, x, nderiv=0):
    """Values (and derivatives) of the nonvanishing B-splines at points ``x``.

    At a point in span ``s`` the nonzero basis functions are
    ``s - degree .. s``. Points must lie in the full-support region of the
    knot vector, i.e. in ``[knots[degree], knots[num_basis]]``.

    Parameters
    ----------
    kv : KnotVector
    x : array_like
        Evaluation points, shape (N,).
    nderiv : int
        Highest derivative order requested (0 or more).

    Returns
    -------
    spans : int array, shape (N,)
    ders : array, shape (nderiv+1, N, degree+1)
        ``ders[k, q, a]`` is the k-th derivative of basis ``spans[q]-degree+a``
        at ``x[q]``.
    """
    m = kv.degree
    t = kv.knots
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = x.size
    if x.size and (x.min() < t[m] - 1e-12 or x.max() > t[kv.num_basis] + 1e-12):
        raise SplineError("evaluation points outside the full-support knot range")
    # points exactly on the edge of the full-support region take the span
    # inside it (left limit at the right edge); values agree for simple knots
    spans = np.clip(find_spans(kv, x), m, kv.num_basis - 1)

    # triangle of all lower-degree values (NURBS-book A2.2 style, vectorized)
    ndu = np.zeros((m + 1, m + 1, n))
    ndu[0, 0] = 1.0
    left = np.empty((m + 1, n))
    right = np.empty((m + 1, n))
    for j in range(1, m + 1):
        left[j] = x - t[spans + 1 - j]
        right[j] = t[spans + j] - x
        saved = np.zeros(n)
        for r in range(j):
            denom = right[r + 1] + left[j - r]
            temp = np.where(denom != 0.0, ndu[j - 1, r] / np.where(denom == 0, 1, denom), 0.0)
            ndu[j, r] = saved + right[r + 1] * temp
            saved = left[j - r] * temp
        ndu[j, j] = saved

    out = np.zeros((nderiv + 1, n, m + 1))
    out[0] = ndu[m].transpose()
    for k in range(1, min(nderiv, m) + 1):
        # k-th derivative from the degree m-k triangle row by repeated differencing
        d = ndu[m - k].copy()  # shape (m+1, n); rows 0..m-k valid
        for stage in range(m - k + 1, m + 1):
            dn = np.zeros_like(d)
            for r in range(stage + 1):
                num = np.zeros(n)
                if r > 0:
                    den = t[spans + r] - t[spans + r - stage]
                    num += np.where(den != 0, d[r - 1] / np.where(den == 0, 1, den), 0.0)
                if r <= stage - 1:
                    den = t[spans + r + 1] - t[spans + r + 1 - stage]
                    num -= np.where(den != 0, d[r] / np.where(den == 0, 1, den), 0.0)
                dn[r] = stage * num
            d = dn
        out[k] = d[:m + 1].transpose()
    return spans, out


# ---------------------------------------------------------------------------
# tensor grid
# ---------------------------------------------------------------------------

class TensorGrid:
    """Tensor product of two knot vectors and the induced cell lattice."""

    def __init__(self, kv_x, kv_y):
        self.kvs = (kv_x, kv_y)
        nx, ny = kv_x.num_cells, kv_y.num_cells
        dx = np.diff(kv_x.breakpoints)
        dy = np.diff(kv_y.breakpoints)
        self.num_cells = (nx, ny)
        self.meshsize = float(np.sqrt(np.max(dx) ** 2 + np.max(dy) ** 2))

    @property
    def degrees(self):
        return (self.kvs[0].degree, self.kvs[1].degree)

    @property
    def num_basis(self):
        return (self.kvs[0].num_basis, self.kvs[1].num_basis)

    def cell_bounds(self, cell):
        """((x0, x1), (y0, y1)) bounds of cell ``(jx, jy)``."""
        jx, jy = cell
        return self.kvs[0].cell_bounds(jx), self.kvs[1].cell_bounds(jy)

    def cell_center(self, cell):
        (x0, x1), (y0, y1) = self.cell_bounds(cell)
        return np.array([0.5 * (x0 + x1), 0.5 * (y0 + y1)])

    def cells(self):
        nx, ny = self.num_cells
        return ((jx, jy) for jx in range(nx) for jy in range(ny))

    def support_cells(self, k):
        """All cells contained in the support of tensor basis ``k = (k1, k2)``."""
        rx = self.kvs[0].support_cells(k[0])
        ry = self.kvs[1].support_cells(k[1])
        return [(jx, jy) for jx in rx for jy in ry]

    def support_box(self, k):
        """Support rectangle of tensor basis ``k`` as (lo, hi) arrays."""
        sx = self.kvs[0].support(k[0])
        sy = self.kvs[1].support(k[1])
        return np.array([sx[0], sy[0]]), np.array([sx[1], sy[1]])

    def covering_indices(self, cell):
        """Tensor-basis indices whose support contains ``cell``."""
        (x0, x1), (y0, y1) = self.cell_bounds(cell)
        ix = self.kvs[0].cells_covered_by(x0, x1)
        iy = self.kvs[1].cells_covered_by(y0, y1)
        return [(a, b) for a in ix for b in iy]

    def refined(self):
        return TensorGrid(self.kvs[0].refined(), self.kvs[1].refined())

    def __repr__(self):
        return (f"TensorGrid(cells={self.num_cells}, degrees={self.degrees}, "
                f"h={self.meshsize:.4g})")


def eval_tensor_bspline(grid, multi_index, point, deriv=(0, 0)):
    """Product of univariate B-spline factors with per-axis derivative orders."""
    vx = eval_bspline_deriv(grid.kvs[0], multi_index[0], point[0], deriv[0])
    vy = eval_bspline_deriv(grid.kvs[1], multi_index[1], point[1], deriv[1])
    return vx * vy


# ---------------------------------------------------------------------------
# local polynomial pieces (Bernstein form)
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _cheb_nodes(n):
    """n Chebyshev-Gauss nodes mapped to (0, 1); never hit the endpoints."""
    k = np.arange(n)
    return 0.5 - 0.5 * np.cos((2 * k + 1) * np.pi / (2 * n))


def _bern_row(n, t):
    """Row of Bernstein basis values B_{a,n}(t), valid for any real t."""
    t = np.asarray(t, dtype=float)
    return np.stack([comb(n, a) * t ** a * (1.0 - t) ** (n - a)
                     for a in range(n + 1)], axis=-1)


def _bern_derive(c, width):
    """Coefficients of d/dx of a Bernstein polynomial on an interval of ``width``."""
    n = c.shape[0] - 1
    if n == 0:
        return np.zeros((1,) + c.shape[1:])
    return n * np.diff(c, axis=0) / width


@lru_cache(maxsize=64)
def _bern_interp_matrix(n):
    """Inverse of the Bernstein collocation matrix at the Chebyshev nodes."""
    ts = _cheb_nodes(n + 1)
    V = _bern_row(n, ts)
    return np.linalg.inv(V)


@dataclass(frozen=True)
class PolynomialPiece:
    """Tensor-product polynomial in Bernstein form anchored at a reference cell.

    Evaluation is defined everywhere (polynomial extension); on the
    reference cell it coincides with the source it was built from. Pieces
    that are products of univariate polynomials carry the Bernstein
    ``factors`` per axis, which the dual functionals exploit for accuracy.
    """

    lo: np.ndarray
    hi: np.ndarray
    coeffs: np.ndarray  # shape (d1+1, d2+1)
    factors: tuple = None  # optional (cx, cy) with coeffs == outer(cx, cy)

    @property
    def degrees(self):
        return (self.coeffs.shape[0] - 1, self.coeffs.shape[1] - 1)

    def __call__(self, x, y, deriv=(0, 0)):
        d = self.derivatives(x, y, deriv[0], deriv[1])
        return d[deriv[0], deriv[1]]

    def derivatives(self, x, y, max_dx, max_dy):
        """All mixed partials up to (max_dx, max_dy) at a single point."""
        wx = self.hi[0] - self.lo[0]
        wy = self.hi[1] - self.lo[1]
        tx = (x - self.lo[0]) / wx
        ty = (y - self.lo[1]) / wy
        out = np.zeros((max_dx + 1, max_dy + 1))
        cx = self.coeffs
        for a in range(max_dx + 1):
            c = cx
            for b in range(max_dy + 1):
                n1, n2 = c.shape[0] - 1, c.shape[1] - 1
                out[a, b] = _bern_row(n1, tx) @ c @ _bern_row(n2, ty)
                c = _bern_derive(c.transpose(), wy).transpose()
            cx = _bern_derive(cx, wx)
        return out

    def eval_many(self, pts):
        """Values at an (N, 2) array of points."""
        pts = np.asarray(pts, dtype=float)
        tx = (pts[:, 0] - self.lo[0]) / (self.hi[0] - self.lo[0])
        ty = (pts[:, 1] - self.lo[1]) / (self.hi[1] - self.lo[1])
        n1, n2 = self.degrees
        return np.einsum("na,ab,nb->n", _bern_row(n1, tx), self.coeffs,
                         _bern_row(n2, ty))


def _mono_to_bern(mono):
    """Monomial coefficients on [0, 1] to Bernstein coefficients (exact)."""
    n = mono.size - 1
    return np.array([sum(mono[k] * comb(a, k) / comb(n, k) for k in range(a + 1))
                     for a in range(n + 1)])


def _poly_piece_1d(kv, index, cell_idx):
    """Bernstein coefficients of ``b_index`` restricted to cell ``cell_idx``.

    The Cox-de Boor recursion is carried out on polynomial coefficients in
    the cell-local coordinate, which keeps every coefficient O(1)-accurate
    even on very small cells (value interpolation would lose the leading
    coefficients there).
    """
    m = kv.degree
    a, b = kv.cell_bounds(cell_idx)
    h = b - a
    t = kv.knots

    def times_linear(c, alpha, beta):
        # polynomial product c(xi) * (alpha + beta * xi), monomial basis
        out = np.zeros(c.size + 1)
        out[:-1] += alpha * c
        out[1:] += beta * c
        return out

    # degree-0 pieces: indicator of the span containing the cell
    level = {i: (np.array([1.0]) if t[i] <= a and b <= t[i + 1] else np.array([0.0]))
             for i in range(index, index + m + 1)}
    for k in range(1, m + 1):
        nxt = {}
        for i in range(index, index + m + 1 - k):
            c = np.zeros(k + 1)
            d1 = t[i + k] - t[i]
            if d1 > 0.0:
                # (x - t_i)/d1 with x = a + h*xi
                lo = times_linear(level[i], (a - t[i]) / d1, h / d1)
                c[:lo.size] += lo
            d2 = t[i + k + 1] - t[i + 1]
            if d2 > 0.0:
                # (t_{i+k+1} - x)/d2
                hi = times_linear(level[i + 1], (t[i + k + 1] - a) / d2, -h / d2)
                c[:hi.size] += hi
            nxt[i] = c
        level = nxt
    return _mono_to_bern(level[index])


def local_polynomial(grid, multi_index, cell):
    """Tensor polynomial agreeing with B-spline ``multi_index`` on ``cell``.

    The piece is valid for evaluation anywhere; outside the cell it is the
    polynomial extension of the restriction.
    """
    (x0, x1), (y0, y1) = grid.cell_bounds(cell)
    if not (x1 > x0 and y1 > y0):
        raise SplineError(f"degenerate cell {cell}")
    cx = _poly_piece_1d(grid.kvs[0], multi_index[0], cell[0])
    cy = _poly_piece_1d(grid.kvs[1], multi_index[1], cell[1])
    return PolynomialPiece(lo=np.array([x0, y0]), hi=np.array([x1, y1]),
                           coeffs=np.outer(cx, cy), factors=(cx, cy))


def interpolate_piece(f, lo, hi, degrees):
    """Degree-``degrees`` tensor interpolant of ``f`` on the cell [lo, hi].

    Interpolation nodes are tensor Chebyshev points strictly inside the
    cell, so ``f`` is only evaluated in the open cell.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n1, n2 = degrees
    xs = lo[0] + (hi[0] - lo[0]) * _cheb_nodes(n1 + 1)
    ys = lo[1] + (hi[1] - lo[1]) * _cheb_nodes(n2 + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    vals = f(np.column_stack([X.ravel(), Y.ravel()])).reshape(n1 + 1, n2 + 1)
    coeffs = _bern_interp_matrix(n1) @ vals @ _bern_interp_matrix(n2).transpose()
    return PolynomialPiece(lo=lo, hi=hi, coeffs=coeffs)


# ---------------------------------------------------------------------------
# de Boor-Fix dual functionals
# ---------------------------------------------------------------------------

def _dual_point(kv, index, target=None):
    """Midpoint of a nonempty knot span inside supp b_index.

    Among the nonempty spans, the one whose midpoint is nearest ``target``
    is chosen (ties: widest, then leftmost); this keeps the polynomial
    argument evaluated close to its reference cell, which is where the
    derivative formula is numerically sharpest.
    """
    m = kv.degree
    t = kv.knots
    widths = t[index + 1:index + m + 2] - t[index:index + m + 1]
    mids = 0.5 * (t[index:index + m + 1] + t[index + 1:index + m + 2])
    ok = widths > 0
    if not np.any(ok):
        raise SplineError(f"basis {index} has empty support")
    if target is None:
        score = -widths
    else:
        score = np.abs(mids - target) - 1e-9 * widths
    score = np.where(ok, score, np.inf)
    return mids[int(np.argmin(score))]


def _psi_derivatives(kv, index, tau):
    """Derivatives psi^(k)(tau), k = 0..m, of psi(t) = prod (t_{i+r} - t)."""
    m = kv.degree
    t = kv.knots
    # psi has roots at the m interior knots of the support, leading coeff (-1)^m
    poly = np.polynomial.Polynomial([1.0])
    for r in range(1, m + 1):
        poly = poly * np.polynomial.Polynomial([t[index + r], -1.0])
    out = np.empty(m + 1)
    for k in range(m + 1):
        out[k] = poly(tau)
        poly = poly.deriv()
    return out


def deboor_fix(kv_pair, multi_index, piece):
    """de Boor-Fix dual functional of tensor basis ``multi_index`` applied to a piece.

    For a polynomial argument the value is independent of the internal
    evaluation point; bi-orthogonality ``lambda_k(p_{k'}) = delta_{kk'}``
    holds when ``piece`` is the local polynomial of B-spline ``k'`` on a
    cell inside both supports.
    """
    m1, m2 = kv_pair[0].degree, kv_pair[1].degree
    d1, d2 = piece.degrees
    if d1 > m1 or d2 > m2:
        raise SplineError(
            f"piece degree {piece.degrees} exceeds basis degrees {(m1, m2)}")
    mid = 0.5 * (piece.lo + piece.hi)
    tau1 = _dual_point(kv_pair[0], multi_index[0], target=mid[0])
    tau2 = _dual_point(kv_pair[1], multi_index[1], target=mid[1])
    psi1 = _psi_derivatives(kv_pair[0], multi_index[0], tau1)
    psi2 = _psi_derivatives(kv_pair[1], multi_index[1], tau2)
    s1 = np.array([(-1.0) ** (m1 - n) * psi1[m1 - n] for n in range(m1 + 1)]) / factorial(m1)
    s2 = np.array([(-1.0) ** (m2 - n) * psi2[m2 - n] for n in range(m2 + 1)]) / factorial(m2)
    if piece.factors is not None:
        # product piece: apply the univariate functional per axis, which
        # avoids forming large cross terms before they cancel
        d1 = _bern_all_ders_1d(piece.factors[0], piece.lo[0], piece.hi[0], tau1, m1)
        d2 = _bern_all_ders_1d(piece.factors[1], piece.lo[1], piece.hi[1], tau2, m2)
        return float((s1 @ d1) * (s2 @ d2))
    pd = piece.derivatives(tau1, tau2, m1, m2)
    return float(s1 @ pd @ s2)


def _bern_all_ders_1d(c, lo, hi, tau, maxorder):
    """Derivatives 0..maxorder of a univariate Bernstein polynomial at tau."""
    width = hi - lo
    t = (tau - lo) / width
    c = np.asarray(c, dtype=float)[:, None]
    out = np.empty(maxorder + 1)
    for k in range(maxorder + 1):
        n = c.shape[0] - 1
        out[k] = float(_bern_row(n, t) @ c[:, 0])
        c = _bern_derive(c, width)
    return out


def dual_functional_1d(kv, index, coeffs, lo, hi):
    """Univariate de Boor-Fix functional applied to a Bernstein polynomial.

    Convenience wrapper used by tests; ``coeffs`` are Bernstein coefficients
    on [lo, hi].
    """
    piece = PolynomialPiece(lo=np.array([lo, 0.0]), hi=np.array([hi, 1.0]),
                            coeffs=np.asarray(coeffs, dtype=float)[:, None])
    unit = KnotVector([0.0, 1.0], 0)
    return deboor_fix((kv, unit), (index, 0), piece)


def uniform_knots(lo, hi, n_cells, degree):
    """Uniform knot vector on [lo, hi] extended by ``degree`` spans per side.

    The extension guarantees that every point of [lo, hi] sees the full set
    of ``degree + 1`` nonzero basis functions per axis.
    """
    h = (hi - lo) / n_cells
    return KnotVector(lo + h * np.arange(-degree, n_cells + degree + 1), degree)


def graded_knots(lo, hi, n_cells, degree, ratio, side="max"):
    """Geometrically graded knots on [lo, hi]: spacing multiplied by ``ratio``
    per step toward the chosen side, extended like :func:`uniform_knots`."""
    if ratio <= 0:
        raise SplineError(f"grading ratio must be positive, got {ratio}")
    w = ratio ** np.arange(n_cells)
    if side == "min":
        w = w[::-1]
    elif side != "max":
        raise SplineError(f"side must be 'min' or 'max', got {side!r}")
    interior = lo + (hi - lo) * np.concatenate([[0.0], np.cumsum(w) / np.sum(w)])
    h0 = interior[1] - interior[0]
    h1 = interior[-1] - interior[-2]
    left = interior[0] - h0 * np.arange(degree, 0, -1)
    right = interior[-1] + h1 * np.arange(1, degree + 1)
    return KnotVector(np.concatenate([left, interior, right]), degree)

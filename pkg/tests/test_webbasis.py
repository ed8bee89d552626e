import numpy as np
import pytest

from webfem.geometry import Disk, ImplicitDomain, box, classify_cells, classify_indices
from webfem.quadrature import build_quadrature
from webfem.splines import KnotVector, TensorGrid, nonzero_basis, uniform_knots
from webfem.webbasis import (
    BasisError, build_extension, build_web_basis, eval_field, eval_web,
    jackson_error, project,
)


def disk_basis(n_cells=14, degree=2, half=1.1):
    kv = uniform_knots(-half, half, n_cells, degree)
    grid = TensorGrid(kv, kv)
    dom = ImplicitDomain(Disk([0.0, 0.0], 1.0))
    return build_web_basis(dom, grid)


def eval_eb_combo(basis, coeffs, pts):
    """Unweighted eb-spline expansion (test helper, independent of eval_field)."""
    grid = basis.grid
    m1, m2 = grid.degrees
    c_full = basis.extension_matrix().T @ coeffs
    c_pad = np.concatenate([c_full, [0.0]])
    sx, dx = nonzero_basis(grid.kvs[0], pts[:, 0], 0)
    sy, dy = nonzero_basis(grid.kvs[1], pts[:, 1], 0)
    ax = sx[:, None] - m1 + np.arange(m1 + 1)[None, :]
    ay = sy[:, None] - m2 + np.arange(m2 + 1)[None, :]
    cols = basis.kcol[ax[:, :, None], ay[:, None, :]]
    cw = c_pad[np.where(cols >= 0, cols, c_full.size)]
    return np.einsum("nab,nab->n", cw, dx[0][:, :, None] * dy[0][:, None, :])


class TestExtension:
    def test_interior_index_has_no_entries(self):
        basis = disk_basis()
        deep = min(basis.idx.inner,
                   key=lambda i: np.linalg.norm(basis.idx.center[i]))
        assert basis.idx.j_of_i[deep] == []

    def test_1d_hat_extrapolation_weights(self):
        # slab domain (1.5, 3.5) on uniform degree-1 knots: the outer hat
        # peaking at x=1 extends with the linear-extrapolation weights of its
        # inner neighbors' limbs: value at the peak gives 2 and -1
        kv = KnotVector(np.arange(-1.0, 7.0), 1)
        grid = TensorGrid(kv, kv)
        dom = ImplicitDomain(box([1.5, -20.0], [3.5, 20.0]))
        cls = classify_cells(dom, grid)
        idx = classify_indices(grid, cls)
        ext = build_extension(grid, idx)
        outer_x = sorted({j for j, _ in idx.outer})
        assert outer_x == [1, 4]
        some_jy = sorted({jy for jx, jy in idx.outer if jx == 1})[3]
        j = (1, some_jy)
        coeffs = {i: ext.entries[(i, j)] for i in idx.i_of_j[j]}
        assert coeffs[(2, some_jy)] == pytest.approx(2.0, abs=1e-12)
        assert coeffs[(3, some_jy)] == pytest.approx(-1.0, abs=1e-12)
        assert coeffs[(2, some_jy - 1)] == pytest.approx(0.0, abs=1e-12)

    def test_eb_polynomial_reproduction(self):
        # the eb expansion with dual-functional coefficients reproduces any
        # polynomial of coordinate degree <= m at points inside the domain
        from webfem.splines import deboor_fix, interpolate_piece
        basis = disk_basis(n_cells=12, degree=2)
        grid = basis.grid
        rng = np.random.default_rng(21)
        q = lambda pts: (1.0 + 0.5 * pts[:, 0] - pts[:, 1]
                         + 0.25 * pts[:, 0] ** 2 * pts[:, 1] ** 2)
        lam = np.empty(basis.n_inner)
        for r, i in enumerate(basis.idx.inner):
            cell = basis.idx.center_cell[i]
            (x0, x1), (y0, y1) = grid.cell_bounds(cell)
            piece = interpolate_piece(q, (x0, y0), (x1, y1), grid.degrees)
            lam[r] = deboor_fix(grid.kvs, i, piece)
        pts = []
        while len(pts) < 100:
            p = rng.uniform(-1, 1, 2)
            if basis.domain.phi(p[None, :])[0] > 1e-6:
                pts.append(p)
        pts = np.array(pts)
        vals = eval_eb_combo(basis, lam, pts)
        assert np.max(np.abs(vals - q(pts))) <= 1e-10

    def test_extension_bounded_under_refinement(self):
        maxima = []
        for n in (10, 20, 40):
            basis = disk_basis(n_cells=n)
            maxima.append(basis.ext.max_abs)
        assert max(maxima) <= 10 * min(maxima) or max(maxima) < 50

    def test_alpha_warning_surfaces_in_summary(self):
        # the Hausdorff cell selection favors well-sized extrapolation cells,
        # so alpha < 0.1 needs pathological grids; inject a small ratio and
        # check the reporting path end to end
        from webfem.webbasis import WebBasis
        basis = disk_basis(n_cells=8)
        assert basis.alpha_warnings == []
        j = basis.idx.outer[0]
        basis.idx.alpha[j] = 0.05
        patched = WebBasis(basis.grid, basis.domain, basis.cls, basis.idx,
                           basis.ext)
        assert patched.alpha_warnings == [j]
        assert patched.summary()["alpha_warnings"] == [list(j)]


class TestEvalWeb:
    def test_weight_normalization_at_center(self):
        basis = disk_basis()
        deep = min(basis.idx.inner,
                   key=lambda i: np.linalg.norm(basis.idx.center[i]))
        x = basis.idx.center[deep]
        from webfem.splines import eval_tensor_bspline
        expect = eval_tensor_bspline(basis.grid, deep, x)
        assert eval_web(basis, deep, x) == pytest.approx(expect, rel=1e-12)

    def test_vanishes_on_boundary(self):
        basis = disk_basis()
        for ang in np.linspace(0.0, 2 * np.pi, 500, endpoint=False):
            p = np.array([np.cos(ang), np.sin(ang)])
            coeffs = np.ones(basis.n_inner)
            assert abs(eval_field(basis, coeffs, p[None, :])[0]) <= 1e-12

    def test_gradient_finite_difference(self):
        basis = disk_basis(n_cells=10)
        rng = np.random.default_rng(22)
        step = 1e-6
        inner = basis.idx.inner
        checked = 0
        while checked < 100:
            i = inner[int(rng.integers(0, len(inner)))]
            p = rng.uniform(-0.9, 0.9, 2)
            if basis.domain.phi(p[None, :])[0] < 0.05:
                continue
            checked += 1
            for ax, d in (((1, 0), np.array([step, 0.0])),
                          ((0, 1), np.array([0.0, step]))):
                fd = (eval_web(basis, i, p + d) - eval_web(basis, i, p - d)) / (2 * step)
                assert eval_web(basis, i, p, ax) == pytest.approx(fd, abs=1e-5)

    def test_locality(self):
        basis = disk_basis(n_cells=10)
        i = basis.idx.inner[0]
        lo, hi = basis.grid.support_box(i)
        for j in basis.idx.j_of_i[i]:
            jlo, jhi = basis.grid.support_box(j)
            lo = np.minimum(lo, jlo)
            hi = np.maximum(hi, jhi)
        # points outside the union box evaluate to exactly 0
        pts = [hi + 0.05, np.array([hi[0] + 0.1, 0.0]), lo - 0.03]
        for p in pts:
            p = np.clip(p, -1.09, 1.09)  # stay inside the grid core
            if np.all(p >= lo) and np.all(p <= hi):
                continue
            assert eval_web(basis, i, p) == 0.0

    def test_second_derivative_unsupported(self):
        basis = disk_basis(n_cells=8)
        with pytest.raises(BasisError):
            eval_web(basis, basis.idx.inner[0], np.zeros(2), (1, 1))

    def test_eval_field_matches_reference(self):
        basis = disk_basis(n_cells=8)
        rng = np.random.default_rng(23)
        coeffs = rng.normal(size=basis.n_inner)
        pts = []
        while len(pts) < 30:
            p = rng.uniform(-1, 1, 2)
            if basis.domain.phi(p[None, :])[0] > 0.01:
                pts.append(p)
        pts = np.array(pts)
        vals, grads = eval_field(basis, coeffs, pts, nderiv=1)
        for q, p in enumerate(pts):
            ref = sum(c * eval_web(basis, i, p)
                      for c, i in zip(coeffs, basis.idx.inner))
            refx = sum(c * eval_web(basis, i, p, (1, 0))
                       for c, i in zip(coeffs, basis.idx.inner))
            assert vals[q] == pytest.approx(ref, rel=1e-11, abs=1e-13)
            assert grads[q, 0] == pytest.approx(refx, rel=1e-10, abs=1e-11)


class TestProjector:
    def test_reproduces_single_web_spline(self):
        basis = disk_basis(n_cells=10)
        i0 = basis.n_inner // 2
        f = lambda pts: eval_field(basis, np.eye(basis.n_inner)[i0], pts)
        coeffs = project(basis, f)
        expect = np.zeros(basis.n_inner)
        expect[i0] = 1.0
        assert np.max(np.abs(coeffs - expect)) <= 1e-9

    def test_zero_function(self):
        basis = disk_basis(n_cells=8)
        coeffs = project(basis, lambda pts: np.zeros(pts.shape[0]))
        assert np.all(coeffs == 0.0)

    def test_weighted_polynomial_reproduction(self):
        basis = disk_basis(n_cells=10)
        rng = np.random.default_rng(24)
        q = lambda pts: 2.0 - pts[:, 0] + 0.3 * pts[:, 0] * pts[:, 1]
        f = lambda pts: basis.domain.weight(pts) * q(pts)
        coeffs = project(basis, f)
        pts = []
        while len(pts) < 100:
            p = rng.uniform(-1, 1, 2)
            if basis.domain.phi(p[None, :])[0] > 1e-3:
                pts.append(p)
        pts = np.array(pts)
        vals = eval_field(basis, coeffs, pts)
        assert np.max(np.abs(vals - f(pts))) <= 1e-8

    def test_idempotence(self):
        basis = disk_basis(n_cells=8)
        f = lambda pts: basis.domain.weight(pts) * np.exp(pts[:, 0])
        c1 = project(basis, f)
        c2 = project(basis, lambda pts: eval_field(basis, c1, pts))
        assert np.max(np.abs(c2 - c1)) <= 1e-10


class TestJackson:
    def u(self, pts):
        r2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
        return (1.0 - r2) ** 2

    def grad_u(self, pts):
        r2 = pts[:, 0] ** 2 + pts[:, 1] ** 2
        return -4.0 * (1.0 - r2)[:, None] * pts

    def test_in_space_reproduced(self):
        # (1-r^2)^2 = w * (2 - 2r^2) lies in the degree-2 web space; feed the
        # web function itself so the comparison is exact also on the few
        # quadrature points that poke slightly outside the zero level set
        basis = disk_basis(n_cells=10, degree=2)
        quad = build_quadrature(basis.domain, basis.grid, basis.cls, 3, 5)
        c0 = project(basis, self.u)
        uh = lambda pts: eval_field(basis, c0, pts)
        guh = lambda pts: eval_field(basis, c0, pts, nderiv=1)[1]
        assert jackson_error(basis, uh, guh, quad) <= 1e-8
        # and the projector indeed reproduced the formula inside the domain
        inside = basis.domain.phi(quad.points) > 0
        vals = eval_field(basis, c0, quad.points[inside])
        assert np.max(np.abs(vals - self.u(quad.points[inside]))) <= 1e-12

    def test_zero(self):
        basis = disk_basis(n_cells=8)
        quad = build_quadrature(basis.domain, basis.grid, basis.cls, 3, 4)
        z = lambda pts: np.zeros(pts.shape[0])
        gz = lambda pts: np.zeros_like(pts)
        assert jackson_error(basis, z, gz, quad) == 0.0

    def test_first_order_decay_degree1(self):
        errs = []
        hs = []
        for n in (8, 16, 32):
            basis = disk_basis(n_cells=n, degree=1)
            quad = build_quadrature(basis.domain, basis.grid, basis.cls, 3, 6)
            errs.append(jackson_error(basis, self.u, self.grad_u, quad))
            hs.append(basis.grid.meshsize)
        for e0, e1 in zip(errs, errs[1:]):
            assert e0 / e1 >= 1.7

import numpy as np
import pytest

from webfem.splines import (
    KnotVector, PolynomialPiece, SplineError, TensorGrid, deboor_fix,
    dual_functional_1d, eval_bspline, eval_bspline_deriv, eval_tensor_bspline,
    graded_knots, interpolate_piece, local_polynomial, nonzero_basis,
    uniform_knots,
)


def random_knot_vector(rng, degree, n_cells=6, lo=0.0, hi=1.0, max_ratio=4.0):
    """Non-uniform simple-knot vector with full-support region [lo, hi].

    Spacings are drawn with a bounded mesh ratio; pass ``max_ratio=None``
    for unconstrained (possibly near-degenerate) spacings.
    """
    if max_ratio is None:
        interior = np.sort(rng.uniform(lo, hi, n_cells - 1))
        core = np.concatenate([[lo], interior, [hi]])
    else:
        s = np.sqrt(max_ratio)
        w = rng.uniform(1.0 / s, s, n_cells)
        core = lo + (hi - lo) * np.concatenate([[0.0], np.cumsum(w)]) / np.sum(w)
    h0 = core[1] - core[0]
    h1 = core[-1] - core[-2]
    left = core[0] - h0 * np.arange(degree, 0, -1)
    right = core[-1] + h1 * np.arange(1, degree + 1)
    return KnotVector(np.concatenate([left, core, right]), degree)


class TestKnotVector:
    def test_validation(self):
        with pytest.raises(SplineError):
            KnotVector([0.0, 1.0, 0.5], 1)  # decreasing
        with pytest.raises(SplineError):
            KnotVector([0.0, 1.0], 1)  # too short
        with pytest.raises(SplineError):
            KnotVector([0.0, 0.0, 0.0, 1.0], 1)  # multiplicity 3 > degree+1
        kv = KnotVector([0.0, 0.0, 1.0, 2.0, 2.0], 1)  # multiplicity degree+1 ok
        assert kv.num_basis == 3

    def test_counts_and_support(self):
        kv = KnotVector([0, 1, 2, 3, 4], 2)
        assert kv.num_basis == 2
        assert kv.support(0) == (0, 3)
        assert list(kv.support_cells(1)) == [1, 2, 3]

    def test_refined_halves_spans(self):
        kv = KnotVector([0.0, 0.5, 2.0, 3.0], 1)
        fine = kv.refined()
        assert fine.num_cells == 2 * kv.num_cells
        assert np.max(np.diff(fine.breakpoints)) == 0.5 * np.max(np.diff(kv.breakpoints))


class TestEvalBspline:
    def test_hat_peak(self):
        kv = KnotVector([0, 1, 2], 1)
        assert eval_bspline(kv, 0, 1.0) == 1.0

    def test_hand_unrolled_quadratic(self):
        # Cox-de Boor by hand: b0 at x=1.5 on knots [0,1,2,3], degree 2:
        #   level 0: only [1,2) indicator is 1
        #   level 1: b_{0,1} = (2-1.5)/1 = 0.5, b_{1,1} = (1.5-1)/1 = 0.5
        #   level 2: b_{0,2} = 1.5/2*0.5 + (3-1.5)/2*0.5 = 0.75
        kv = KnotVector([0, 1, 2, 3], 2)
        assert eval_bspline(kv, 0, 1.5) == pytest.approx(0.75, abs=1e-15)

    def test_outside_support(self):
        kv = KnotVector([0, 1, 2, 3], 2)
        assert eval_bspline(kv, 0, 3.5) == 0.0
        assert eval_bspline(kv, 0, -0.1) == 0.0

    def test_invalid_index(self):
        kv = KnotVector([0, 1, 2, 3], 2)
        with pytest.raises(SplineError):
            eval_bspline(kv, 1, 1.0)

    def test_partition_of_unity(self):
        rng = np.random.default_rng(7)
        for degree in (1, 2, 3):
            kv = random_knot_vector(rng, degree)
            xs = rng.uniform(0.0, 1.0, 1000)
            total = np.zeros_like(xs)
            for i in range(kv.num_basis):
                total += np.array([eval_bspline(kv, i, x) for x in xs])
            assert np.max(np.abs(total - 1.0)) <= 1e-12

    def test_nonnegativity_and_local_support(self):
        rng = np.random.default_rng(8)
        kv = random_knot_vector(rng, 3)
        xs = rng.uniform(kv.knots[0], kv.knots[-1], 300)
        for i in range(kv.num_basis):
            lo, hi = kv.support(i)
            vals = np.array([eval_bspline(kv, i, x) for x in xs])
            assert np.all(vals >= 0.0)
            assert np.all(vals[(xs < lo) | (xs > hi)] == 0.0)


class TestDerivatives:
    def test_hat_slope(self):
        kv = KnotVector([0, 1, 2], 1)
        assert eval_bspline_deriv(kv, 0, 0.5, 1) == pytest.approx(1.0)

    def test_quadratic_max_is_critical(self):
        kv = KnotVector([0, 1, 2, 3], 2)
        assert eval_bspline_deriv(kv, 0, 1.5, 1) == pytest.approx(0.0, abs=1e-14)

    def test_against_finite_differences(self):
        rng = np.random.default_rng(9)
        for degree in (1, 2, 3):
            kv = random_knot_vector(rng, degree)
            step = 1e-6
            for _ in range(100):
                i = rng.integers(0, kv.num_basis)
                x = rng.uniform(0.05, 0.95)
                if np.min(np.abs(kv.knots - x)) < 10 * step:
                    continue
                fd = (eval_bspline(kv, i, x + step) - eval_bspline(kv, i, x - step)) / (2 * step)
                assert eval_bspline_deriv(kv, i, x, 1) == pytest.approx(fd, abs=1e-5)

    def test_order_above_degree_is_zero(self):
        kv = KnotVector([0, 1, 2], 1)
        assert eval_bspline_deriv(kv, 0, 0.5, 2) == 0.0

    def test_negative_order_rejected(self):
        kv = KnotVector([0, 1, 2], 1)
        with pytest.raises(SplineError):
            eval_bspline_deriv(kv, 0, 0.5, -1)


class TestNonzeroBasis:
    def test_matches_reference_path(self):
        rng = np.random.default_rng(10)
        for degree in (1, 2, 3):
            kv = random_knot_vector(rng, degree)
            xs = rng.uniform(0.0, 1.0, 50)
            spans, ders = nonzero_basis(kv, xs, nderiv=1)
            for q, x in enumerate(xs):
                for a in range(degree + 1):
                    i = spans[q] - degree + a
                    assert ders[0, q, a] == pytest.approx(eval_bspline(kv, i, x), abs=1e-13)
                    assert ders[1, q, a] == pytest.approx(
                        eval_bspline_deriv(kv, i, x, 1), abs=1e-10)

    def test_repeated_interior_knot(self):
        kv = KnotVector([-2.0, -1.0, 0.0, 0.5, 0.5, 1.0, 2.0, 3.0], 2)
        xs = np.array([0.25, 0.5, 0.75])
        spans, ders = nonzero_basis(kv, xs, nderiv=1)
        for q, x in enumerate(xs):
            for a in range(3):
                i = spans[q] - 2 + a
                assert ders[0, q, a] == pytest.approx(eval_bspline(kv, i, x), abs=1e-13)

    def test_endpoint_of_range(self):
        kv = uniform_knots(0.0, 1.0, 4, 2)
        spans, ders = nonzero_basis(kv, np.array([0.0, 1.0]), nderiv=0)
        assert abs(np.sum(ders[0, 0]) - 1.0) < 1e-14
        assert abs(np.sum(ders[0, 1]) - 1.0) < 1e-14


class TestTensor:
    def grid(self, degree=1, n=4):
        kv = uniform_knots(0.0, float(n), n, degree)
        return TensorGrid(kv, kv)

    def test_hat_tensor_peak(self):
        g = self.grid()
        # degree-1 basis (i, j) peaks at knot (i - degree + 1 + degree) ... peak
        # of hat i is at interior knot i+1; with extension offset the peak of
        # basis 1 sits at grid point (1, 1)
        val = eval_tensor_bspline(g, (1, 1), (1.0, 1.0), (0, 0))
        assert val == pytest.approx(1.0)

    def test_partition_of_unity_2d(self):
        rng = np.random.default_rng(11)
        g = self.grid(degree=2, n=5)
        for _ in range(20):
            pt = rng.uniform(0.5, 4.5, 2)
            total = sum(eval_tensor_bspline(g, (i, j), pt)
                        for i in range(g.num_basis[0]) for j in range(g.num_basis[1]))
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_tensor_derivative_finite_difference(self):
        rng = np.random.default_rng(12)
        g = self.grid(degree=2, n=5)
        step = 1e-6
        for _ in range(20):
            pt = rng.uniform(0.6, 4.4, 2)
            k = (int(rng.integers(0, g.num_basis[0])), int(rng.integers(0, g.num_basis[1])))
            fd = (eval_tensor_bspline(g, k, (pt[0] + step, pt[1]))
                  - eval_tensor_bspline(g, k, (pt[0] - step, pt[1]))) / (2 * step)
            assert eval_tensor_bspline(g, k, pt, (1, 0)) == pytest.approx(fd, abs=1e-5)


class TestLocalPolynomial:
    def test_hat_left_limb(self):
        kv = KnotVector([0, 1, 2], 1)
        g = TensorGrid(kv, kv)
        piece = local_polynomial(g, (0, 0), (0, 0))
        # on cell [0,1]^2 the basis is x*y; check the x-limb along y where hat=1
        assert piece(0.3, 1.0) == pytest.approx(0.3, abs=1e-13)
        assert piece(0.7, 0.5) == pytest.approx(0.35, abs=1e-13)

    def test_agrees_on_cell(self):
        rng = np.random.default_rng(13)
        kv = random_knot_vector(rng, 2)
        g = TensorGrid(kv, kv)
        cell = (2, 3)
        k = (3, 2)
        piece = local_polynomial(g, k, cell)
        (x0, x1), (y0, y1) = g.cell_bounds(cell)
        for _ in range(20):
            x = rng.uniform(x0, x1)
            y = rng.uniform(y0, y1)
            rel = abs(piece(x, y) - eval_tensor_bspline(g, k, (x, y)))
            assert rel <= 1e-12 * max(1.0, abs(piece(x, y)))

    def test_extrapolation_is_polynomial(self):
        # outside the cell the piece must match the interpolating polynomial
        # through degree+1 interior samples (per axis)
        kv = KnotVector([0, 1, 2, 3, 4, 5], 2)
        g = TensorGrid(kv, kv)
        cell = (1, 1)
        k = (1, 1)
        piece = local_polynomial(g, k, cell)
        xs = np.array([1.2, 1.5, 1.8])
        vals = np.array([[eval_tensor_bspline(g, k, (x, y)) for y in xs] for x in xs])
        # tensor polynomial via 2D Lagrange through the 3x3 samples
        def lagrange2(x, y):
            lx = [np.prod([(x - xs[b]) / (xs[a] - xs[b]) for b in range(3) if b != a])
                  for a in range(3)]
            ly = [np.prod([(y - xs[b]) / (xs[a] - xs[b]) for b in range(3) if b != a])
                  for a in range(3)]
            return float(np.array(lx) @ vals @ np.array(ly))
        for x, y in [(0.5, 0.5), (2.7, 1.1), (3.5, 0.2)]:
            assert piece(x, y) == pytest.approx(lagrange2(x, y), abs=1e-11)

    def test_degenerate_cell_rejected(self):
        kv = KnotVector([0.0, 0.0, 1.0, 2.0, 2.0], 1)
        g = TensorGrid(kv, kv)
        with pytest.raises(SplineError):
            local_polynomial(g, (0, 0), (5, 0))  # out of range cell index


class TestDeBoorFix:
    @pytest.mark.parametrize("degree", [1, 2, 3])
    def test_biorthogonality_univariate(self, degree):
        rng = np.random.default_rng(100 + degree)
        kv = random_knot_vector(rng, degree, n_cells=7)
        g = TensorGrid(kv, kv)
        n = kv.num_basis
        for k in range(n):
            cells = list(kv.support_cells(k))
            for kp in range(max(0, k - degree), min(n, k + degree + 1)):
                common = sorted(set(cells) & set(kv.support_cells(kp)))
                if not common:
                    continue
                cell = common[len(common) // 2]
                piece = local_polynomial(g, (kp, kp), (cell, cell))
                lam = deboor_fix((kv, kv), (k, k), piece)
                expect = 1.0 if k == kp else 0.0
                assert lam == pytest.approx(expect, abs=1e-10)

    def test_constant_reproduction(self):
        # Marsden-type check: sum_k lambda_k(1) b_k reproduces 1 pointwise
        rng = np.random.default_rng(14)
        kv = random_knot_vector(rng, 2)
        g = TensorGrid(kv, kv)
        lam = {}
        ones = lambda pts: np.ones(pts.shape[0])
        for i in range(kv.num_basis):
            for j in range(kv.num_basis):
                cx = list(kv.support_cells(i))
                cy = list(kv.support_cells(j))
                lo = np.array([kv.cell_bounds(cx[0])[0], kv.cell_bounds(cy[0])[0]])
                hi = np.array([kv.cell_bounds(cx[0])[1], kv.cell_bounds(cy[0])[1]])
                piece = interpolate_piece(ones, lo, hi, (2, 2))
                lam[(i, j)] = deboor_fix((kv, kv), (i, j), piece)
        for _ in range(25):
            pt = rng.uniform(0.0, 1.0, 2)
            total = sum(c * eval_tensor_bspline(g, k, pt) for k, c in lam.items())
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_biorthogonality_extreme_mesh_ratio(self):
        # near-degenerate adjacent spans (ratios in the hundreds) lose a few
        # digits to the extrapolation inherent in the dual functional
        rng = np.random.default_rng(200)
        for _ in range(5):
            kv = random_knot_vector(rng, 3, n_cells=7, max_ratio=None)
            g = TensorGrid(kv, kv)
            n = kv.num_basis
            for k in range(n):
                cells = set(kv.support_cells(k))
                for kp in range(max(0, k - 3), min(n, k + 4)):
                    for cell in sorted(cells & set(kv.support_cells(kp))):
                        piece = local_polynomial(g, (kp, kp), (cell, cell))
                        lam = deboor_fix((kv, kv), (k, k), piece)
                        assert lam == pytest.approx(1.0 if k == kp else 0.0, abs=3e-9)

    def test_univariate_helper_hat_values(self):
        # degree-1 dual functional is evaluation at the hat peak
        kv = KnotVector([0, 1, 2, 3, 4, 5], 1)
        # linear x -> Bernstein coefficients on [1,2] are endpoints (1, 2)
        val = dual_functional_1d(kv, 1, [1.0, 2.0], 1.0, 2.0)
        assert val == pytest.approx(2.0)  # peak of hat 1 is at knot 2

    def test_piece_degree_too_high_rejected(self):
        kv = KnotVector([0, 1, 2, 3], 1)
        piece = PolynomialPiece(lo=np.zeros(2), hi=np.ones(2), coeffs=np.ones((3, 3)))
        with pytest.raises(SplineError):
            deboor_fix((kv, kv), (0, 0), piece)


class TestGenerators:
    def test_uniform_full_support_region(self):
        kv = uniform_knots(-1.0, 1.0, 8, 2)
        assert kv.num_basis == 10
        assert kv.knots[kv.degree] == pytest.approx(-1.0)
        assert kv.knots[kv.num_basis] == pytest.approx(1.0)

    def test_graded_ratio(self):
        kv = graded_knots(0.0, 1.0, 5, 1, ratio=2.0)
        core = kv.breakpoints[(kv.breakpoints >= 0) & (kv.breakpoints <= 1)]
        d = np.diff(core)
        assert np.allclose(d[1:] / d[:-1], 2.0)
        kv2 = graded_knots(0.0, 1.0, 5, 1, ratio=2.0, side="min")
        d2 = np.diff(kv2.breakpoints[(kv2.breakpoints >= 0) & (kv2.breakpoints <= 1)])
        assert np.allclose(d2[1:] / d2[:-1], 0.5)

    def test_grid_meshsize(self):
        g = TensorGrid(uniform_knots(0, 1, 4, 1), uniform_knots(0, 2, 4, 1))
        assert g.meshsize == pytest.approx(np.hypot(0.25, 0.5))

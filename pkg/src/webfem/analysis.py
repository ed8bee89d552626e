"""Error norms, convergence studies and reports.

Every error is integrated with one Gauss order above the assembly rule so
that quadrature crimes cannot mask discretization error. Reports carry the
per-level records, estimated orders of convergence between consecutive
levels, and the theoretical targets of the case's regularity class.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .assembly import (
    BasisTables, PressureSpace, gram_condition_estimate, project_pressure,
)
from .geometry import domain_from_config
from .quadrature import build_quadrature
from .solvers import (
    SolveOptions, estimate_infsup, solve_plap, solve_quasi_newtonian,
    solve_vcpe,
)
from .splines import TensorGrid, graded_knots, uniform_knots
from .webbasis import build_web_basis, eval_field, jackson_error


class AnalysisError(ValueError):
    """Invalid norm or study parameters."""


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def _inside_mask(domain, pts):
    return domain.phi(pts) > 0.0


def error_norm(field, case, norm, quad, p=None):
    """Named norm of (exact - discrete) over the domain quadrature.

    ``norm`` is one of L2, H1, W1p, quasinorm for scalar fields, or
    Xnorm / pressure_L2 / combined for mixed solutions (pass the pressure
    through ``field`` as a (velocity, pressure) tuple for the latter two).
    The quasi-norm uses the exact gradient in the weight factor:
    |e|^2 = int (|grad u_s| + |grad e|)^{p-2} |grad e|^2.
    """
    if norm in ("Xnorm", "pressure_L2", "combined"):
        return _mixed_norm(field, case, norm, quad)
    pts = quad.points
    w = quad.weights
    vals, grads = eval_field(field.basis, field.coeffs, pts, nderiv=1)
    inside = _inside_mask(field.basis.domain, pts)
    ev = np.where(inside, case.solution(pts) - vals, 0.0)
    eg = np.where(inside[:, None], case.gradient(pts) - grads, 0.0)
    if norm == "L2":
        return float(np.sqrt(np.sum(w * ev ** 2)))
    if norm == "H1":
        return float(np.sqrt(np.sum(w * (ev ** 2 + np.sum(eg ** 2, axis=1)))))
    p = p if p is not None else case.params.get("p")
    if norm == "W1p":
        if p is None or p <= 1:
            raise AnalysisError(f"W1p norm needs an exponent p > 1, got {p}")
        s = np.sum(eg ** 2, axis=1) ** (0.5 * p)
        return float(np.sum(w * s) ** (1.0 / p))
    if norm == "quasinorm":
        if p is None or p <= 1:
            raise AnalysisError(f"quasi-norm needs an exponent p > 1, got {p}")
        gs = np.linalg.norm(case.gradient(pts), axis=1)
        ge = np.linalg.norm(eg, axis=1)
        base = gs + ge
        weight = np.zeros_like(base)
        pos = base > 0
        weight[pos] = base[pos] ** (p - 2.0)
        return float(np.sqrt(np.sum(w * weight * ge ** 2)))
    raise AnalysisError(f"unknown norm {norm!r}")


def _mixed_norm(field, case, norm, quad):
    velocity, pressure = field
    pts = quad.points
    w = quad.weights
    inside = _inside_mask(velocity.basis.domain, pts)
    if norm in ("Xnorm", "combined"):
        vals, grads = velocity(pts, grad=True)
        ev = np.where(inside[:, None], case.velocity(pts) - vals, 0.0)
        eg = np.where(inside[:, None, None],
                      case.velocity_gradient(pts) - grads, 0.0)
        x2 = np.sum(w * (np.sum(ev ** 2, axis=1)
                         + np.sum(eg ** 2, axis=(1, 2))))
        xnorm = float(np.sqrt(x2))
        if norm == "Xnorm":
            return xnorm
    pv = pressure(pts)
    pe = case.pressure(pts)
    # align the quadrature means: the discrete pressure is mean zero with
    # respect to the cut rule, the exact one with respect to the true domain
    area = float(np.sum(w))
    diff = np.where(inside, pe - pv, 0.0)
    diff = diff - np.sum(w * diff) / area
    pl2 = float(np.sqrt(np.sum(w * diff ** 2)))
    if norm == "pressure_L2":
        return pl2
    return xnorm + pl2


def eoc(errors, hs):
    """Estimated orders of convergence between consecutive levels."""
    out = []
    for (e0, e1), (h0, h1) in zip(zip(errors, errors[1:]), zip(hs, hs[1:])):
        if e0 <= 0 or e1 <= 0:
            out.append(float("nan"))
        else:
            out.append(float(np.log(e0 / e1) / np.log(h0 / h1)))
    return out


# ---------------------------------------------------------------------------
# convergence studies
# ---------------------------------------------------------------------------

@dataclass
class StudyConfig:
    """Discretization parameters of a refinement study."""

    degree: int = 2
    levels: int = 3
    base_cells: int = 8
    bounds: tuple = ((-1.1, 1.1), (-1.1, 1.1))
    grid_kind: str = "uniform"        # uniform | graded | explicit
    grading_ratio: float = 1.15
    grading_side: str = "max"
    explicit_knots: tuple = None
    gauss: int = None                 # default degree + 1
    gauss_leaf: int = None
    depth: object = 6                 # int or per-level list
    pressure_degree: int = 0
    pressure_macro: int = 1           # pressure patch size in grid cells
    samples_per_axis: int = 5

    def depth_at(self, level):
        if isinstance(self.depth, (list, tuple)):
            return int(self.depth[min(level, len(self.depth) - 1)])
        return int(self.depth)

    def base_grid(self):
        kvs = []
        for ax in range(2):
            lo, hi = self.bounds[ax]
            if self.grid_kind == "uniform":
                kv = uniform_knots(lo, hi, self.base_cells, self.degree)
            elif self.grid_kind == "graded":
                kv = graded_knots(lo, hi, self.base_cells, self.degree,
                                  self.grading_ratio, self.grading_side)
            elif self.grid_kind == "explicit":
                from .splines import KnotVector
                kv = KnotVector(np.asarray(self.explicit_knots[ax]), self.degree)
            else:
                raise AnalysisError(f"unknown grid kind {self.grid_kind!r}")
            kvs.append(kv)
        return TensorGrid(*kvs)


@dataclass
class ConvergenceReport:
    case: str
    kind: str
    study: dict
    levels: list
    eoc_table: dict
    targets: dict
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return {"case": self.case, "kind": self.kind, "study": self.study,
                "levels": self.levels, "eoc": self.eoc_table,
                "targets": self.targets, "extras": self.extras}

    def to_json(self, **kwargs):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, **kwargs)

    def errors(self, norm):
        return [lv["errors"][norm] for lv in self.levels]

    def text_table(self):
        norms = sorted(self.levels[0]["errors"]) if self.levels else []
        head = f"{'level':>5} {'h':>10} {'n_inner':>8}"
        for n in norms:
            head += f" {n:>12} {('eoc(' + n + ')'):>10}"
        lines = [head]
        for k, lv in enumerate(self.levels):
            row = f"{k:5d} {lv['h']:10.4g} {lv['n_inner']:8d}"
            for n in norms:
                e = lv["errors"][n]
                r = self.eoc_table[n][k - 1] if k > 0 else None
                row += f" {e:12.4e} {('' if r is None else f'{r:10.2f}'):>10}"
            lines.append(row)
        return "\n".join(lines)


def _resolve_targets(case, study):
    out = {}
    for norm, target in case.rate_targets.items():
        out[norm] = float(study.degree if target == "degree" else target)
    return out


def run_convergence(case, study, solver_opts=None, with_infsup=None):
    """Solve the case on a dyadic grid hierarchy and report errors and EOC.

    ``with_infsup`` controls the (dense) inf-sup estimate for mixed runs;
    default on for mixed problems.
    """
    if study.levels < 1:
        raise AnalysisError("need at least one refinement level")
    opts = solver_opts or SolveOptions()
    domain = domain_from_config(case.domain_config)
    grid = study.base_grid()
    g = study.gauss or study.degree + 1
    records = []
    extras = {}
    for level in range(study.levels):
        t0 = time.perf_counter()
        rec = _run_level(case, domain, grid, g, study, level, opts, with_infsup)
        rec["wall_time"] = time.perf_counter() - t0
        rec["level"] = level
        records.append(rec)
        if level + 1 < study.levels:
            grid = grid.refined()
    norms = sorted(records[0]["errors"])
    hs = [r["h"] for r in records]
    table = {n: eoc([r["errors"][n] for r in records], hs) for n in norms}
    report = ConvergenceReport(
        case=case.name, kind=case.kind,
        study={"degree": study.degree, "levels": study.levels,
               "base_cells": study.base_cells, "grid_kind": study.grid_kind,
               "gauss": g, "depth": study.depth,
               "pressure_degree": study.pressure_degree,
               "pressure_macro": study.pressure_macro},
        levels=records, eoc_table=table,
        targets=_resolve_targets(case, study), extras=extras)
    return report


def _run_level(case, domain, grid, g, study, level, opts, with_infsup):
    basis = build_web_basis(domain, grid, study.samples_per_axis)
    depth = study.depth_at(level)
    quad = build_quadrature(domain, grid, basis.cls, g, depth, study.gauss_leaf)
    # errors use one Gauss order more on full cells; leaves keep the assembly
    # order (their accuracy is capped by the geometric error regardless)
    err_quad = build_quadrature(domain, grid, basis.cls, g + 1, depth,
                                study.gauss_leaf or g)
    rec = {"h": grid.meshsize, "n_inner": basis.n_inner,
           "basis": basis.summary(), "errors": {}}
    tables = None
    if case.kind in ("vcpe", "plap", "quasi_newtonian"):
        tables = BasisTables(basis, quad)
        rec["basis"]["gram_condition"] = gram_condition_estimate(basis, tables)

    if case.kind == "vcpe":
        a = case.diffusion if case.diffusion is not None else 1.0
        sol = solve_vcpe(basis, a, case.source, tables, opts)
        rec["iterations"] = sol.params["iterations"]
        for norm in ("L2", "H1"):
            rec["errors"][norm] = error_norm(sol, case, norm, err_quad)
    elif case.kind == "plap":
        sol = solve_plap(basis, case.params["p"], case.source, tables, opts)
        rec["iterations"] = sol.params["iterations"]
        rec["residual_history"] = [s["residuals"] for s in sol.params["stages"]]
        for norm in ("L2", "H1", "W1p", "quasinorm"):
            rec["errors"][norm] = error_norm(sol, case, norm, err_quad)
    elif case.kind == "quasi_newtonian":
        pspace = PressureSpace(grid, quad, study.pressure_degree,
                               macro=study.pressure_macro)
        vel, pres, info = solve_quasi_newtonian(
            basis, pspace, case.viscosity, case.body_force, tables, quad, opts)
        rec["iterations"] = info["iterations"]
        rec["incompressibility"] = info["incompressibility"]
        for norm in ("Xnorm", "pressure_L2", "combined"):
            rec["errors"][norm] = error_norm((vel, pres), case, norm, err_quad)
        if with_infsup is None or with_infsup:
            rec["infsup"] = estimate_infsup(basis, pspace, case.viscosity,
                                            tables, quad)
    elif case.kind == "projector":
        rec["errors"]["H1"] = jackson_error(basis, case.solution,
                                            case.gradient, err_quad)
    elif case.kind == "pressure_projection":
        pspace = PressureSpace(grid, quad, study.pressure_degree)
        rec["errors"]["pressure_L2"] = pressure_projection_error(
            pspace, err_quad, case.pressure)
    else:
        raise AnalysisError(f"unknown problem kind {case.kind!r}")
    return rec


def pressure_projection_error(pspace, quad, p_exact):
    """L2 error of the cell-wise projection Pi_h applied to ``p_exact``."""
    coeffs = project_pressure(pspace, quad, p_exact)
    resid = pspace.evaluate(coeffs, quad.points) - p_exact(quad.points)
    return float(np.sqrt(np.sum(quad.weights * resid ** 2)))


def level_csv(report):
    """Per-level CSV of (level, h, norm, error) rows for plotting."""
    lines = ["level,h,norm,error"]
    for lv in report.levels:
        for norm in sorted(lv["errors"]):
            lines.append(f"{lv['level']},{lv['h']!r},{norm},{lv['errors'][norm]!r}")
    return "\n".join(lines) + "\n"

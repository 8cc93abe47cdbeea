"""The L2-generator: applying it on a grid and deciding which harmonic
functions belong to its domain.

Interior action is half the measure-derivative of the scale derivative,
read off dual cells; at an included endpoint carrying speed mass the atom
row replaces the Neumann condition.  Membership of the harmonic space in
the generator domain reduces to boundary-derivative conditions whose
solvability is governed by the positive constants c_l and c_r.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .boundary import Role, classify
from .errors import CrossCheckFailed, NotInDomainShape
from .gridfn import GridFunction
from .grids import DEFAULT_GRID_SETTINGS, GridSettings
from .harmonic import (HarmonicBasis, _diverging_outward, harmonic_space,
                       in_form_domain)
from .measures import DiffusionSpec

__all__ = [
    "GeneratorVerdict",
    "generator_apply",
    "in_generator_domain",
    "boundary_constants",
    "harmonic_in_domain",
]


def _dual_cell_masses(f: GridFunction, spec: DiffusionSpec):
    """Speed mass of the dual cells around interior nodes, split at the
    scale midpoints of the neighbouring cells; node atoms included."""
    x = f.x
    mids = 0.5 * (x[1:] + x[:-1])
    masses = np.empty(x.size - 2)
    for k in range(1, x.size - 1):
        masses[k - 1] = spec.speed.mass(mids[k - 1], mids[k])
    return mids, masses


def _v_left(f: GridFunction) -> np.ndarray:
    return f.ds_derivative - f.ds_jumps


def generator_apply(f: GridFunction, spec: DiffusionSpec, *,
                    jump_tol: float = 1e-7) -> GridFunction:
    """Half the measure-derivative of the scale derivative of f.

    Interior values come from dual-cell flux differences; included
    endpoints with an atom get the atom rows (with the convention that a
    vanishing derivative over vanishing mass is zero).  A derivative jump
    at a node carrying no atom cannot be reproduced by any density and
    raises NotInDomainShape.
    """
    x, s = f.x, f.s
    n = x.size
    atom_nodes = {p: w for p, w in spec.speed.atoms}
    sup_v = float(np.max(np.abs(f.ds_derivative))) or 1.0
    for i in range(n):
        if abs(f.ds_jumps[i]) > jump_tol * sup_v and \
                atom_nodes.get(float(x[i]), 0.0) == 0.0:
            raise NotInDomainShape(
                f"derivative jump {f.ds_jumps[i]:.3g} at x={x[i]} where the "
                "speed measure carries no atom")

    mids, masses = _dual_cell_masses(f, spec)
    vR = f.ds_derivative
    vL = _v_left(f)
    # derivative at the scale midpoint of each cell (linear inside a cell)
    v_mid = 0.5 * (vR[:-1] + vL[1:])
    dv = v_mid[1:] - v_mid[:-1]
    g = np.zeros(n)
    with np.errstate(divide="ignore", invalid="ignore"):
        g[1:-1] = np.where(masses > 0, dv / masses, 0.0)
    vals = 0.5 * g
    # nearest-interior extension keeps endpoint cells plottable
    vals[0] = vals[1]
    vals[-1] = vals[-2]

    iv = spec.interval
    for side, idx in (("l", 0), ("r", n - 1)):
        endpoint = iv.endpoint(side)
        if not (math.isfinite(endpoint) and iv.includes(side)
                and abs(x[idx] - endpoint) <= 1e-12 * (1 + abs(endpoint))):
            continue
        w = atom_nodes.get(float(x[idx]), 0.0)
        v_here = vR[idx] if side == "l" else vL[idx]
        if w > 0:
            vals[idx] = 0.5 * v_here / w if side == "l" else -0.5 * v_here / w
        else:
            vals[idx] = 0.0 if v_here == 0 else math.copysign(math.inf, -v_here)

    dcol = np.gradient(vals, s, edge_order=1)
    return GridFunction(x=x, s=s, values=vals, ds_derivative=dcol,
                        scale=f.scale)


def in_generator_domain(f: GridFunction, spec: DiffusionSpec, *,
                        neumann_tol: float = 1e-6):
    """True iff f has a square-integrable generator image and a vanishing
    scale derivative at every reflecting endpoint without an atom; returns
    (flag, diagnostics)."""
    diag: dict = {"violated": []}
    ok, reason = in_form_domain(f, spec)
    diag["in_form_domain"] = ok
    if not ok:
        diag["violated"].append("form-domain")
        diag["form_reason"] = reason

    try:
        lf = generator_apply(f, spec)
        _, masses = _dual_cell_masses(f, spec)
        contrib = lf.values[1:-1] ** 2 * masses
        if (_diverging_outward(contrib, "l") or
                _diverging_outward(contrib, "r")):
            diag["violated"].append("image-not-square-integrable")
            diag["l2_image"] = math.inf
        else:
            diag["l2_image"] = float(np.sum(contrib))
    except NotInDomainShape as exc:
        diag["violated"].append("no-representing-density")
        diag["shape_reason"] = str(exc)

    rep = classify(spec)
    sup_v = float(np.max(np.abs(f.ds_derivative))) or 1.0
    for side, idx in (("l", 0), ("r", f.x.size - 1)):
        if rep.endpoint(side).role is not Role.REFLECTING:
            continue
        endpoint = spec.interval.endpoint(side)
        if spec.speed.atom_at(endpoint) > 0:
            continue
        v_b = f.boundary_derivative(side)
        if v_b is None:
            v_b = float(f.ds_derivative[0]) if side == "l" else \
                float(_v_left(f)[-1])
        diag[f"neumann_{side}"] = v_b
        if abs(v_b) > neumann_tol * sup_v:
            diag["violated"].append(f"neumann-{side}")
    return not diag["violated"], diag


def boundary_constants(spec: DiffusionSpec, alpha: float,
                       basis: Optional[HarmonicBasis] = None,
                       settings: GridSettings = DEFAULT_GRID_SETTINGS,
                       check_tol: float = 1e-6):
    """(C, c_l, c_r) with the closed-form boundary identities cross-checked
    against the grid columns; disagreement signals an integration defect."""
    b = basis if basis is not None else harmonic_space(spec, alpha, settings)
    rep = b.report

    def rel(a_, b_):
        return abs(a_ - b_) / max(1.0, abs(a_), abs(b_))

    checks = []
    if rep.endpoint("l").role is Role.REFLECTING:
        u_l = float(b.u.values[0])
        vu_l = float(b.u.ds_derivative[0])
        checks += [
            ("u_minus(l) = 0", float(b.u_minus.values[0]), 0.0),
            ("u_plus(l) = C u(l)", float(b.u_plus.values[0]), b.C * u_l),
            ("du_minus(l) = 1/u(l)", float(b.u_minus.ds_derivative[0]), 1.0 / u_l),
            ("du_plus(l) = C u'(l) - 1/u(l)", float(b.u_plus.ds_derivative[0]),
             b.C * vu_l - 1.0 / u_l),
        ]
    if rep.endpoint("r").role is Role.REFLECTING:
        u_r = float(b.u.values[-1])
        vu_r = float(_v_left(b.u)[-1])
        checks += [
            ("u_plus(r) = 0", float(b.u_plus.values[-1]), 0.0),
            ("u_minus(r) = C u(r)", float(b.u_minus.values[-1]), b.C * u_r),
            ("du_minus(r) = C u'(r) + 1/u(r)", float(_v_left(b.u_minus)[-1]),
             b.C * vu_r + 1.0 / u_r),
            ("du_plus(r) = -1/u(r)", float(_v_left(b.u_plus)[-1]), -1.0 / u_r),
        ]
    for name, got, want in checks:
        if rel(got, want) > check_tol:
            raise CrossCheckFailed(
                f"{name}: grid {got:.10g} vs closed form {want:.10g}")
    return b.C, b.c_l, b.c_r


def _combine(name: str, grid, parts) -> tuple[str, GridFunction]:
    """Linear combination of basis columns as a fresh grid function."""
    vals = sum(c * fn.values for c, fn in parts)
    vR = sum(c * fn.ds_derivative for c, fn in parts)
    jumps = sum(c * fn.ds_jumps for c, fn in parts)
    bv = {}
    bd = {}
    for side in ("l", "r"):
        pieces = [(c, fn.boundary_value(side)) for c, fn in parts]
        if all(p is not None for _, p in pieces):
            bv[side] = sum(c * p for c, p in pieces)
        pieces_d = [(c, fn.boundary_derivative(side)) for c, fn in parts]
        if all(p is not None for _, p in pieces_d):
            bd[side] = sum(c * p for c, p in pieces_d)
    return name, GridFunction(x=grid.x, s=grid.s, values=vals,
                              ds_derivative=vR, ds_jumps=jumps,
                              scale=grid.spec.scale, boundary_values=bv,
                              boundary_ds=bd)


@dataclass
class GeneratorVerdict:
    """Which alpha-harmonic functions lie in the generator domain."""

    alpha: float
    subspace: str
    members: list = field(default_factory=list)   # (name, GridFunction)
    m_atom_l: float = 0.0
    m_atom_r: float = 0.0
    C: Optional[float] = None
    c_l: Optional[float] = None
    c_r: Optional[float] = None
    determinant: Optional[float] = None
    member_in_domain: dict = field(default_factory=dict)
    boundary_derivatives: dict = field(default_factory=dict)
    atom_values: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "case": self.subspace,
            "m_atom_l": self.m_atom_l,
            "m_atom_r": self.m_atom_r,
            "C": self.C,
            "c_l": self.c_l,
            "c_r": self.c_r,
            "determinant": self.determinant,
            "members": [name for name, _ in self.members],
            "member_in_domain": dict(self.member_in_domain),
        }


def harmonic_in_domain(spec: DiffusionSpec, alpha: float,
                       settings: GridSettings = DEFAULT_GRID_SETTINGS) -> GeneratorVerdict:
    """Intersection of the alpha-harmonic space with the generator domain.

    A reflecting endpoint without speed mass imposes a Neumann condition
    that each member must satisfy; an atom there lifts the condition.  With
    two bare reflecting endpoints the only solution of the two conditions
    is zero, by the positivity of the boundary-derivative determinant.
    """
    basis = harmonic_space(spec, alpha, settings)
    rep = basis.report
    refl_l = rep.endpoint("l").role is Role.REFLECTING
    refl_r = rep.endpoint("r").role is Role.REFLECTING
    iv = spec.interval
    w_l = spec.speed.atom_at(iv.l) if math.isfinite(iv.l) else 0.0
    w_r = spec.speed.atom_at(iv.r) if math.isfinite(iv.r) else 0.0

    verdict = GeneratorVerdict(alpha=alpha, subspace="{0}", m_atom_l=w_l,
                               m_atom_r=w_r, C=basis.C, c_l=basis.c_l,
                               c_r=basis.c_r)
    grid = basis.grid
    if refl_l:
        verdict.boundary_derivatives["du_plus/ds(l)"] = float(
            basis.u_plus.ds_derivative[0])
        verdict.boundary_derivatives["du_minus/ds(l)"] = float(
            basis.u_minus.ds_derivative[0])
    if refl_r:
        verdict.boundary_derivatives["du_plus/ds(r)"] = float(
            _v_left(basis.u_plus)[-1])
        verdict.boundary_derivatives["du_minus/ds(r)"] = float(
            _v_left(basis.u_minus)[-1])

    if basis.dim == 0:
        pass
    elif refl_l and not refl_r:
        if w_l > 0:
            verdict.subspace = "H_alpha"
            verdict.members = [("u_l^alpha", basis.u_l_norm)]
    elif refl_r and not refl_l:
        if w_r > 0:
            verdict.subspace = "H_alpha"
            verdict.members = [("u_r^alpha", basis.u_r_norm)]
    else:
        if w_l > 0 and w_r > 0:
            verdict.subspace = "H_alpha"
            verdict.members = [("u_l^alpha", basis.u_l_norm),
                               ("u_r^alpha", basis.u_r_norm)]
        elif w_l > 0 and w_r == 0:
            verdict.subspace = "span{u_plus + c_r*u_minus}"
            verdict.members = [_combine(
                "u_plus + c_r*u_minus", grid,
                [(1.0, basis.u_plus), (basis.c_r, basis.u_minus)])]
        elif w_r > 0 and w_l == 0:
            verdict.subspace = "span{u_plus + c_l*u_minus}"
            verdict.members = [_combine(
                "u_plus + c_l*u_minus", grid,
                [(1.0, basis.u_plus), (basis.c_l, basis.u_minus)])]
        else:
            dpr = float(_v_left(basis.u_plus)[-1])
            dmr = float(_v_left(basis.u_minus)[-1])
            dpl = float(basis.u_plus.ds_derivative[0])
            dml = float(basis.u_minus.ds_derivative[0])
            verdict.determinant = dpr * dml - dmr * dpl

    for name, fn in verdict.members:
        flag, _ = in_generator_domain(fn, spec)
        verdict.member_in_domain[name] = bool(flag)
    for side, w in (("l", w_l), ("r", w_r)):
        if w > 0 and verdict.members:
            _, fn = verdict.members[0]
            lf = generator_apply(fn, spec)
            idx = 0 if side == "l" else -1
            verdict.atom_values[f"Lf({side})"] = float(lf.values[idx])
    return verdict

"""Solutions of the half-generator eigenvalue equation and the structure
of the L2-harmonic space.

The fundamental solution u is built by iterated double integration (a
power series in twice the eigenvalue whose n-th coefficient is bounded by
sigma^n / n!, which certifies the truncation).  The decreasing/increasing
pair is obtained from u by integrating u^-2 against the scale toward each
endpoint, with discarded tails certified by the growth envelope.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from math import lgamma
from typing import Optional

import numpy as np

from . import measures
from .boundary import BoundaryClass, BoundaryReport, Role, classify
from .errors import (
    CrossCheckFailed,
    DomainError,
    NonFinite,
    SeriesOverflow,
    TailNotCertified,
)
from .gridfn import GridFunction
from .grids import DEFAULT_GRID_SETTINGS, Grid, GridSettings, build_grid
from .measures import DiffusionSpec

__all__ = [
    "HarmonicBasis",
    "BumpTestFunction",
    "picard_series",
    "stieltjes_ivp_march",
    "u_pair",
    "harmonic_space",
    "harmonic_space_zero",
    "residual_weak_identity",
    "energy_norm",
    "in_form_domain",
    "orthogonality_residual",
    "energy_product",
    "basis_to_csv",
    "basis_header",
]


# ---------------------------------------------------------------------------
# the fundamental solution

def _picard_columns(grid: Grid, alpha: float, tol: float = 1e-12,
                    max_terms: int = 20000):
    """Series columns (u, v_right, v_left, sigma_grid, n_terms) on the grid.

    Terms are accumulated until the newest term's sup norm falls below tol
    and the factorial envelope (2 alpha sigma_max)^n / n! certifies that the
    whole discarded remainder is below tol as well.
    """
    two_a = 2.0 * alpha
    n_nodes = grid.n
    i_e = grid.i_e
    ds = grid.ds

    T = np.ones(n_nodes)
    TdR = np.zeros(n_nodes)
    TdL = np.zeros(n_nodes)
    u = T.copy()
    vR = np.zeros(n_nodes)
    vL = np.zeros(n_nodes)
    sigma_grid = None
    env_x = None
    sup_hist: list[float] = []

    n = 0
    while True:
        n += 1
        A = grid.cell_m_integral(T, TdR, TdL)
        B = grid.cell_m_first_moment(T, TdR, TdL)
        Bp = ds * A - B
        IM = grid.cumulative_from_e(A)
        vR_t = two_a * IM
        vL_t = vR_t - two_a * grid.atom_w * T

        Tn = np.zeros(n_nodes)
        inc_r = two_a * (ds * IM[:-1] + B)
        inc_l = two_a * (Bp + ds * (-IM[1:]))
        if i_e < n_nodes - 1:
            Tn[i_e + 1:] = np.cumsum(inc_r[i_e:])
        if i_e > 0:
            Tn[:i_e] = np.cumsum(inc_l[:i_e][::-1])[::-1]

        T, TdR, TdL = Tn, vR_t, vL_t
        u = u + T
        vR = vR + vR_t
        vL = vL + vL_t
        if n == 1:
            sigma_grid = T / two_a if alpha > 0 else None
            if sigma_grid is not None:
                env_x = two_a * float(np.max(sigma_grid))

        sup_T = float(np.max(np.abs(T)))
        scale = float(np.max(np.abs(u)))
        if not math.isfinite(sup_T) or scale > 1e280:
            raise SeriesOverflow("series overflowed the floating-point "
                                 "exponent budget; reduce alpha or truncate "
                                 "the grid")
        sup_hist.append(sup_T)
        if sup_T <= tol * max(1.0, scale):
            # certified stop: either the factorial envelope puts the whole
            # remainder below tolerance, or the observed term decay has been
            # safely geometric (needed when a mass-starved tail makes the
            # sigma-envelope astronomically loose)
            if env_x is not None and env_x < 250.0:
                log_env = (n + 1) * math.log(max(env_x, 1e-300)) - lgamma(n + 2)
                if env_x < 1.0 or log_env <= math.log(tol):
                    break
            if len(sup_hist) >= 4 and all(
                    b <= 0.5 * a for a, b in zip(sup_hist[-4:-1], sup_hist[-3:])
                    if a > 0):
                break
        if n >= max_terms:
            raise SeriesOverflow(f"series did not settle in {max_terms} terms")
    return u, vR, vL, sigma_grid, n


def picard_series(spec: DiffusionSpec, alpha: float, tol: float = 1e-12,
                  grid: Optional[Grid] = None,
                  settings: GridSettings = DEFAULT_GRID_SETTINGS) -> GridFunction:
    """The fundamental solution with value 1 and scale-derivative 0 at e."""
    if not alpha > 0:
        raise DomainError("the series constructor requires alpha > 0; "
                          "use harmonic_space_zero for alpha = 0")
    g = grid if grid is not None else build_grid(spec, alpha, settings)
    u, vR, vL, _, _ = _picard_columns(g, alpha, tol)
    return _as_gridfunction(g, u, vR, vL)


def _as_gridfunction(grid: Grid, vals, vR, vL, boundary_values=None,
                     boundary_ds=None) -> GridFunction:
    return GridFunction(
        x=grid.x, s=grid.s, values=vals, ds_derivative=vR,
        ds_jumps=np.asarray(vR) - np.asarray(vL), scale=grid.spec.scale,
        boundary_values=dict(boundary_values or {}),
        boundary_ds=dict(boundary_ds or {}),
    )


def stieltjes_ivp_march(spec: DiffusionSpec, alpha: float,
                        grid: Optional[Grid] = None,
                        settings: GridSettings = DEFAULT_GRID_SETTINGS):
    """Second-order two-stage march of the coupled system du = v ds,
    dv = 2 alpha u dm; an integrator-independent cross-check of the series.

    Returns (values, v_right) node columns on the grid.
    """
    g = grid if grid is not None else build_grid(spec, alpha, settings)
    two_a = 2.0 * alpha
    mc = np.add.reduceat(g.qm_w, np.arange(0, g.qm_w.size, 3))
    ds = g.ds
    n = g.n
    u = np.empty(n)
    vR = np.empty(n)
    vL = np.empty(n)
    u[g.i_e] = 1.0
    vR[g.i_e] = 0.0
    vL[g.i_e] = 0.0
    for i in range(g.i_e, n - 1):
        u_pred = u[i] + vR[i] * ds[i]
        v_pred = vR[i] + two_a * 0.5 * (u[i] + u_pred) * mc[i]
        u[i + 1] = u[i] + 0.5 * (vR[i] + v_pred) * ds[i]
        vL[i + 1] = vR[i] + two_a * 0.5 * (u[i] + u[i + 1]) * mc[i]
        vR[i + 1] = vL[i + 1] + two_a * g.atom_w[i + 1] * u[i + 1]
    for i in range(g.i_e - 1, -1, -1):
        u_pred = u[i + 1] - vL[i + 1] * ds[i]
        v_pred = vL[i + 1] - two_a * 0.5 * (u[i + 1] + u_pred) * mc[i]
        u[i] = u[i + 1] - 0.5 * (vL[i + 1] + v_pred) * ds[i]
        vR[i] = vL[i + 1] - two_a * 0.5 * (u[i] + u[i + 1]) * mc[i]
        vL[i] = vR[i] - two_a * g.atom_w[i] * u[i]
    return u, vR


# ---------------------------------------------------------------------------
# the decreasing / increasing pair

def _aitken(seq) -> float:
    x0, x1, x2 = seq[-3], seq[-2], seq[-1]
    denom = (x2 - x1) - (x1 - x0)
    if denom == 0:
        return float(x2)
    return float(x2 - (x2 - x1) ** 2 / denom)


def _tail_estimate(grid: Grid, u, vR, prefix: np.ndarray,
                   side: str) -> tuple[float, float]:
    """(estimate, error bar) for the un-gridded part of the u^-2 scale
    integral beyond one side of the grid.

    At approachable sides the whole remaining scale span bounds the tail
    outright.  At truncated sides the partial integrals along the outermost
    geometric nodes converge geometrically (the integrand decay is at least
    a power of the doubling scale distance), so their extrapolated limit
    carries an error bar read off two consecutive extrapolants; it is
    cross-checked against the rigorous telescoping bound 1/(|v| u).
    """
    kind = grid.side_kind(side)
    if kind == "closed":
        return 0.0, 0.0
    if side == "r":
        u_edge, v_edge, s_edge = u[-1], vR[-1], grid.s[-1]
    else:
        u_edge, v_edge, s_edge = u[0], vR[0], grid.s[0]
    ep = grid.report.endpoint(side)
    if ep.approachable:
        b = abs(ep.scale_value - s_edge) / max(u_edge, 1.0) ** 2
        return 0.5 * b, 0.5 * b
    hard = 1.0 / (abs(v_edge) * u_edge) if abs(v_edge) > 0 and u_edge > 0 \
        else math.inf
    if prefix.size >= 5:
        if side == "r":
            seq = prefix[-5:]
        else:
            seq = (prefix[-1] - prefix[:5])[::-1]
        a2 = _aitken(list(seq[-3:]))
        a1 = _aitken(list(seq[-4:-1]))
        tail = min(max(a2 - seq[-1], 0.0), hard)
        err = abs(a2 - a1) + 1e-15 * abs(seq[-1])
        return tail, min(err, hard)
    return 0.5 * hard, 0.5 * hard


def u_pair(spec: DiffusionSpec, alpha: float, u_fn: GridFunction,
           grid: Grid, *, tail_rel: float = 1e-7):
    """The decreasing and increasing solutions and the total u^-2 scale
    integral; tails beyond the grid are certified below tolerance."""
    u = u_fn.values
    vR = u_fn.ds_derivative
    vL = vR - u_fn.ds_jumps
    w = u ** -2.0
    wdR = -2.0 * vR / u ** 3
    wdL = -2.0 * vL / u ** 3
    D = grid.cell_s_integral(w, wdR, wdL)
    prefix = np.concatenate(([0.0], np.cumsum(D)))
    total = prefix[-1]

    tail_l, err_l = _tail_estimate(grid, u, vR, prefix, "l")
    tail_r, err_r = _tail_estimate(grid, u, vR, prefix, "r")
    grand = total + tail_l + tail_r
    for side, err in (("l", err_l), ("r", err_r)):
        if not err <= tail_rel * (grand + 1.0):
            raise TailNotCertified(
                f"u^-2 ds tail toward {side} uncertain by {err:.3g} "
                f"(total {grand:.3g}); extend the truncation budget")

    I_minus = tail_l + prefix            # integral from the left endpoint
    I_plus = (total - prefix) + tail_r   # integral to the right endpoint
    C = float(grand)

    up_vals = u * I_plus
    up_vR = vR * I_plus - 1.0 / u
    up_vL = vL * I_plus - 1.0 / u
    um_vals = u * I_minus
    um_vR = vR * I_minus + 1.0 / u
    um_vL = vL * I_minus + 1.0 / u

    rep = grid.report
    up_bv, up_bd, um_bv, um_bd = {}, {}, {}, {}

    # right endpoint
    k_r = rep.endpoint("r").klass
    if k_r is not BoundaryClass.ENTRANCE:
        up_bv["r"] = 0.0
    elif grid.n >= 3:
        up_bv["r"] = _aitken(up_vals)
    if k_r in (BoundaryClass.ENTRANCE, BoundaryClass.NATURAL):
        up_bd["r"] = 0.0
    elif grid.closed_r:
        up_bd["r"] = float(up_vL[-1])
    if grid.closed_r:
        um_bv["r"] = float(um_vals[-1])
        um_bd["r"] = float(um_vL[-1])
    elif rep.endpoint("r").approachable and grid.n >= 3:
        um_bv["r"] = _aitken(um_vals)

    # left endpoint
    k_l = rep.endpoint("l").klass
    if k_l is not BoundaryClass.ENTRANCE:
        um_bv["l"] = 0.0
    elif grid.n >= 3:
        um_bv["l"] = _aitken(um_vals[::-1])
    if k_l in (BoundaryClass.ENTRANCE, BoundaryClass.NATURAL):
        um_bd["l"] = 0.0
    elif grid.closed_l:
        um_bd["l"] = float(um_vR[0])
    if grid.closed_l:
        up_bv["l"] = float(up_vals[0])
        up_bd["l"] = float(up_vR[0])
    elif rep.endpoint("l").approachable and grid.n >= 3:
        up_bv["l"] = _aitken(up_vals[::-1])

    u_plus = _as_gridfunction(grid, up_vals, up_vR, up_vL, up_bv, up_bd)
    u_minus = _as_gridfunction(grid, um_vals, um_vR, um_vL, um_bv, um_bd)
    return u_plus, u_minus, C


# ---------------------------------------------------------------------------
# the harmonic space

@dataclass
class HarmonicBasis:
    """Everything the structure theorems attach to one transform parameter."""

    alpha: float
    grid: Grid
    report: BoundaryReport
    u: Optional[GridFunction]
    u_plus: Optional[GridFunction]
    u_minus: Optional[GridFunction]
    C: Optional[float]
    u_l_norm: Optional[GridFunction]
    u_r_norm: Optional[GridFunction]
    c_l: Optional[float]
    c_r: Optional[float]
    dim: int
    span_desc: str

    def member(self, side: str) -> Optional[GridFunction]:
        return self.u_l_norm if side == "l" else self.u_r_norm


def _normalized(num: GridFunction, denom: float, grid: Grid,
                boundary_fix: dict) -> GridFunction:
    if not (denom > 0 and math.isfinite(denom)):
        raise CrossCheckFailed(f"normalization denominator {denom} not in (0, inf)")
    bv = {k: (v / denom if v is not None else None)
          for k, v in num.boundary_values.items()}
    bd = {k: (v / denom if v is not None else None)
          for k, v in num.boundary_ds.items()}
    bv.update(boundary_fix)
    return GridFunction(
        x=grid.x, s=grid.s, values=num.values / denom,
        ds_derivative=num.ds_derivative / denom,
        ds_jumps=num.ds_jumps / denom, scale=grid.spec.scale,
        boundary_values=bv, boundary_ds=bd)


def harmonic_space(spec: DiffusionSpec, alpha: float,
                   settings: GridSettings = DEFAULT_GRID_SETTINGS,
                   tol: float = 1e-12) -> HarmonicBasis:
    """Basis of the alpha-harmonic space for alpha > 0.

    Its dimension equals the number of reflecting endpoints; the normalized
    members take the value 1 at their own reflecting endpoint.
    """
    if alpha == 0:
        return harmonic_space_zero(spec, settings)
    # mass-starved truncated sides may need a farther wall before the
    # u^-2 tail extrapolation certifies; escalate the budget a few times
    budgets = [settings.sigma_budget * 16 ** k for k in range(3)]
    last_exc: Optional[TailNotCertified] = None
    for budget in budgets:
        trial = settings if budget == settings.sigma_budget else GridSettings(
            n_core=settings.n_core, sigma_budget=budget,
            refine_levels=settings.refine_levels,
            zero_alpha_span=settings.zero_alpha_span)
        grid = build_grid(spec, alpha, trial)
        rep = grid.report
        u_cols = _picard_columns(grid, alpha, tol)
        u_fn = _as_gridfunction(grid, u_cols[0], u_cols[1], u_cols[2])
        try:
            u_plus, u_minus, C = u_pair(spec, alpha, u_fn, grid)
            last_exc = None
            break
        except TailNotCertified as exc:
            last_exc = exc
    if last_exc is not None:
        raise last_exc

    refl_l = rep.endpoint("l").role is Role.REFLECTING
    refl_r = rep.endpoint("r").role is Role.REFLECTING
    u_l_norm = u_r_norm = None
    c_l = c_r = None
    if refl_r:
        denom = float(u_minus.values[-1])
        u_r_norm = _normalized(u_minus, denom, grid, {"r": 1.0})
        vL_p = u_plus.ds_derivative[-1] - u_plus.ds_jumps[-1]
        vL_m = u_minus.ds_derivative[-1] - u_minus.ds_jumps[-1]
        c_r = float(-vL_p / vL_m)
    if refl_l:
        denom = float(u_plus.values[0])
        u_l_norm = _normalized(u_plus, denom, grid, {"l": 1.0})
        c_l = float(-u_plus.ds_derivative[0] / u_minus.ds_derivative[0])

    dim = int(refl_l) + int(refl_r)
    span = {
        (False, False): "{0}",
        (False, True): "span{u_r^alpha}",
        (True, False): "span{u_l^alpha}",
        (True, True): "span{u_l^alpha, u_r^alpha}",
    }[(refl_l, refl_r)]
    return HarmonicBasis(alpha=alpha, grid=grid, report=rep, u=u_fn,
                         u_plus=u_plus, u_minus=u_minus, C=C,
                         u_l_norm=u_l_norm, u_r_norm=u_r_norm,
                         c_l=c_l, c_r=c_r, dim=dim, span_desc=span)


def harmonic_space_zero(spec: DiffusionSpec,
                        settings: GridSettings = DEFAULT_GRID_SETTINGS) -> HarmonicBasis:
    """The harmonic space at zero: spanned by the scale-linear hitting
    functions when the relevant scale limits are finite, by constants on the
    recurrent branches, trivial in the transient both-open case."""
    grid = build_grid(spec, 0.0, settings)
    rep = grid.report
    refl_l = rep.endpoint("l").role is Role.REFLECTING
    refl_r = rep.endpoint("r").role is Role.REFLECTING
    s_l = rep.endpoint("l").scale_value
    s_r = rep.endpoint("r").scale_value

    ones = np.ones(grid.n)
    zeros = np.zeros(grid.n)

    def const_one() -> GridFunction:
        return _as_gridfunction(grid, ones, zeros, zeros,
                                {"l": 1.0, "r": 1.0}, {"l": 0.0, "r": 0.0})

    def u0_pair():
        span_s = s_r - s_l
        ul = (s_r - grid.s) / span_s
        ur = (grid.s - s_l) / span_s
        dl = np.full(grid.n, -1.0 / span_s)
        dr = np.full(grid.n, 1.0 / span_s)
        fl = _as_gridfunction(grid, ul, dl, dl * 0,
                              {"l": 1.0, "r": 0.0},
                              {"l": -1.0 / span_s, "r": -1.0 / span_s})
        fr = _as_gridfunction(grid, ur, dr, dr * 0,
                              {"l": 0.0, "r": 1.0},
                              {"l": 1.0 / span_s, "r": 1.0 / span_s})
        return fl, fr

    u_l_norm = u_r_norm = None
    u_fn = None
    if not refl_l and not refl_r:
        transient = math.isfinite(s_l) or math.isfinite(s_r)
        if transient:
            dim, span = 0, "{0}"
        else:
            dim, span = 1, "span{1}"
            u_fn = const_one()
    elif refl_l and not refl_r:
        if math.isfinite(s_r):
            u_l_norm, _ = u0_pair()
            dim, span = 1, "span{u0_l}"
        else:
            u_l_norm = const_one()
            dim, span = 1, "span{1}"
    elif refl_r and not refl_l:
        if math.isfinite(s_l):
            _, u_r_norm = u0_pair()
            dim, span = 1, "span{u0_r}"
        else:
            u_r_norm = const_one()
            dim, span = 1, "span{1}"
    else:
        u_l_norm, u_r_norm = u0_pair()
        dim, span = 2, "span{u0_l, u0_r}"

    return HarmonicBasis(alpha=0.0, grid=grid, report=rep, u=u_fn,
                         u_plus=None, u_minus=None, C=None,
                         u_l_norm=u_l_norm, u_r_norm=u_r_norm,
                         c_l=None, c_r=None, dim=dim, span_desc=span)


# ---------------------------------------------------------------------------
# diagnostics: weak identity, energies, orthogonality

def residual_weak_identity(f: GridFunction, spec: DiffusionSpec, alpha: float,
                           x: float, y: float) -> float:
    """|v(y) - v(x) - 2 alpha * integral of f over (x, y] dm| with the
    integral evaluated by independent adaptive quadrature; off-node points
    use the interpolated derivative."""
    if not (spec.interval.l < x < y < spec.interval.r):
        raise DomainError("need interior points x < y")

    def v_at(pt: float) -> tuple[float, float]:
        try:
            i = f.node_index(pt)
            return float(f.ds_derivative[i]), float(f.x[i])
        except DomainError:
            return float(f.derivative(pt)), pt

    vx, x_eff = v_at(x)
    vy, y_eff = v_at(y)
    integral = measures.stieltjes_integral(spec, f, "m", x_eff, y_eff)
    return abs(vy - vx - 2.0 * alpha * integral)


def _cell_contribs(f: GridFunction, spec: DiffusionSpec):
    """Per-cell Dirichlet and mass-integral contributions on f's grid."""
    s = f.s
    ds = np.diff(s)
    v0 = f.ds_derivative[:-1]
    v1 = (f.ds_derivative - f.ds_jumps)[1:]
    dir_cells = ds / 3.0 * (v0 * v0 + v0 * v1 + v1 * v1)

    t3, w3 = np.polynomial.legendre.leggauss(3)
    xm = 0.5 * (f.x[1:] + f.x[:-1])
    xh = 0.5 * (f.x[1:] - f.x[:-1])
    qx = (xm[:, None] + xh[:, None] * t3[None, :]).ravel()
    qw = (xh[:, None] * w3[None, :]).ravel() * np.asarray(
        spec.speed.density(qx), dtype=float)
    fq = f(qx)
    m_cells = np.add.reduceat(qw * fq * fq, np.arange(0, qw.size, 3))
    return dir_cells, m_cells


def _diverging_outward(cells: np.ndarray, side: str, k: int = 8) -> bool:
    if cells.size < k + 2:
        return False
    tail = cells[-k:] if side == "r" else cells[:k][::-1]
    if np.any(tail <= 0):
        return False
    return bool(np.all(np.diff(tail) > 0) and tail[-1] > 100.0 * tail[0]
                and tail[-1] > 1e-9 * float(np.sum(np.abs(cells))))


def energy_norm(f: GridFunction, spec: DiffusionSpec, alpha: float):
    """(half the squared scale-gradient integral, the squared mass integral).

    Raises NonFinite when either part visibly diverges toward an open side,
    which is the signal that f lies outside the form domain.
    """
    dir_cells, m_cells = _cell_contribs(f, spec)
    for side in ("l", "r"):
        if _diverging_outward(dir_cells, side) or _diverging_outward(m_cells, side):
            raise NonFinite(f"energy integrals diverge toward side {side}")
    dirichlet = 0.5 * float(np.sum(dir_cells))
    l2m = float(np.sum(m_cells))
    for p, w in spec.speed.atoms:
        l2m += w * float(f(p)) ** 2
    return dirichlet, l2m


def in_form_domain(f: GridFunction, spec: DiffusionSpec, alpha: float = 0.0,
                   *, tol: float = 1e-6):
    """Membership test for the form domain: finite energy plus vanishing at
    every absorbing endpoint.  Returns (flag, reason)."""
    try:
        energy_norm(f, spec, alpha)
    except NonFinite as ex:
        return False, str(ex)
    rep = classify(spec)
    sup = float(np.max(np.abs(f.values))) or 1.0
    for side in ("l", "r"):
        if rep.endpoint(side).role is Role.ABSORBING:
            bv = f.boundary_value(side)
            if bv is None:
                bv = float(f.values[0] if side == "l" else f.values[-1])
            if abs(bv) > tol * sup:
                return False, f"nonzero value {bv:.3g} at absorbing endpoint {side}"
    return True, "ok"


@dataclass(frozen=True)
class BumpTestFunction:
    """A smooth compactly supported bump in the scale coordinate."""

    s_lo: float
    s_hi: float

    def phi(self, s):
        sa = np.asarray(s, dtype=float)
        z = (2.0 * sa - (self.s_lo + self.s_hi)) / (self.s_hi - self.s_lo)
        out = np.zeros_like(sa)
        inside = np.abs(z) < 1.0
        zi = z[inside]
        out[inside] = np.exp(1.0 - 1.0 / (1.0 - zi * zi))
        return out

    def dphi(self, s):
        sa = np.asarray(s, dtype=float)
        z = (2.0 * sa - (self.s_lo + self.s_hi)) / (self.s_hi - self.s_lo)
        out = np.zeros_like(sa)
        inside = np.abs(z) < 1.0
        zi = z[inside]
        q = 1.0 - zi * zi
        out[inside] = (np.exp(1.0 - 1.0 / q) * (-2.0 * zi / (q * q))
                       * (2.0 / (self.s_hi - self.s_lo)))
        return out

    def as_gridfunction(self, grid: Grid) -> GridFunction:
        vals = self.phi(grid.s)
        dv = self.dphi(grid.s)
        return GridFunction(x=grid.x, s=grid.s, values=vals, ds_derivative=dv,
                            scale=grid.spec.scale,
                            boundary_values={"l": 0.0, "r": 0.0},
                            boundary_ds={"l": 0.0, "r": 0.0})


def energy_product(h: GridFunction, bump: BumpTestFunction,
                   spec: DiffusionSpec, alpha: float) -> float:
    """The alpha-form pairing of h with a scale bump:
    half int h' phi' ds + alpha int h phi dm over the bump support."""
    s = h.s
    i0 = max(int(np.searchsorted(s, bump.s_lo)) - 1, 0)
    i1 = min(int(np.searchsorted(s, bump.s_hi)) + 1, s.size - 1)
    if i1 <= i0:
        return 0.0
    t6, w6 = np.polynomial.legendre.leggauss(6)

    lo = np.maximum(s[i0:i1], bump.s_lo)
    hi = np.minimum(s[i0 + 1:i1 + 1], bump.s_hi)
    good = hi > lo
    lo, hi = lo[good], hi[good]
    cells = np.arange(i0, i1)[good]
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    qs = (mid[:, None] + half[:, None] * t6[None, :]).ravel()
    qw = (half[:, None] * w6[None, :]).ravel()
    ci = np.repeat(cells, 6)
    # the derivative inside a cell interpolates linearly between the
    # right-continuous value at its left node and the left limit at its right
    v0 = h.ds_derivative[ci]
    v1 = (h.ds_derivative - h.ds_jumps)[ci + 1]
    tt = (qs - s[ci]) / (s[ci + 1] - s[ci])
    vq = v0 * (1 - tt) + v1 * tt
    part_ds = 0.5 * float(np.sum(qw * vq * bump.dphi(qs)))

    xg = h.x
    xm = 0.5 * (xg[i0 + 1:i1 + 1] + xg[i0:i1])
    xh = 0.5 * (xg[i0 + 1:i1 + 1] - xg[i0:i1])
    qx = (xm[:, None] + xh[:, None] * t6[None, :]).ravel()
    qwx = (xh[:, None] * w6[None, :]).ravel() * np.asarray(
        spec.speed.density(qx), dtype=float)
    sqx = np.asarray(spec.s(qx), dtype=float)
    part_m = float(np.sum(qwx * h(qx) * bump.phi(sqx)))
    for p, w in spec.speed.atoms:
        sp = float(spec.s(p))
        if bump.s_lo < sp < bump.s_hi:
            part_m += w * float(h(p)) * float(bump.phi(sp))
    return part_ds + alpha * part_m


def orthogonality_residual(h: GridFunction, spec: DiffusionSpec, alpha: float,
                           test_fn: BumpTestFunction) -> float:
    """|E_alpha(h, bump)|; vanishes when h is alpha-harmonic."""
    return abs(energy_product(h, test_fn, spec, alpha))


def bump_norm(bump: BumpTestFunction, grid: Grid, spec: DiffusionSpec,
              alpha: float) -> float:
    """The alpha-form norm of the bump itself."""
    f = bump.as_gridfunction(grid)
    return math.sqrt(max(energy_product(f, bump, spec, alpha), 0.0))


# ---------------------------------------------------------------------------
# serialization

_CSV_COLS = ("x", "s(x)", "u", "du_ds", "u_plus", "u_minus",
             "u_l_norm", "u_r_norm")


def basis_to_csv(basis: HarmonicBasis) -> str:
    """CSV of the basis columns; header only when the space is trivial."""
    lines = [",".join(_CSV_COLS)]
    if basis.dim == 0:
        return "\n".join(lines) + "\n"
    g = basis.grid

    def col(fn: Optional[GridFunction]):
        return None if fn is None else fn.values

    cols = [g.x, g.s, col(basis.u),
            None if basis.u is None else basis.u.ds_derivative,
            col(basis.u_plus), col(basis.u_minus),
            col(basis.u_l_norm), col(basis.u_r_norm)]
    for i in range(g.n):
        cells = []
        for c in cols:
            cells.append("" if c is None else repr(float(c[i])))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def basis_header(basis: HarmonicBasis) -> dict:
    return {
        "alpha": basis.alpha,
        "C": basis.C,
        "c_l": basis.c_l,
        "c_r": basis.c_r,
        "dim": basis.dim,
        "span_desc": basis.span_desc,
    }

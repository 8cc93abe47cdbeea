"""Computation grids: node placement and per-cell quadrature caches.

Nodes are uniform in the natural-scale coordinate over a central window,
refined geometrically toward each endpoint.  Sides whose scale limit is
finite run (almost) to the endpoint; sides with infinite scale limit are
truncated where the solution-growth exponent reaches a budget, so that
discarded tails can be certified against the growth envelope.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import measures
from .boundary import BoundaryClass, BoundaryReport, classify
from .errors import SeriesOverflow, TailNotCertified
from .measures import DiffusionSpec

__all__ = ["Grid", "GridSettings", "build_grid"]

_GL3_T, _GL3_W = np.polynomial.legendre.leggauss(3)
_GL6_T, _GL6_W = np.polynomial.legendre.leggauss(6)


@dataclass(frozen=True)
class GridSettings:
    """Node-placement and truncation budgets."""

    n_core: int = 2048
    sigma_budget: float = 45.0       # truncate where 2*alpha*sigma reaches this
    refine_levels: int = 42          # geometric refinement depth at finite-scale sides
    zero_alpha_span: float = 60.0    # sigma window used when alpha = 0


DEFAULT_GRID_SETTINGS = GridSettings()


@dataclass
class Grid:
    """Grid nodes plus quadrature caches for measure and scale integrals."""

    spec: DiffusionSpec
    alpha: float
    report: BoundaryReport
    x: np.ndarray
    s: np.ndarray
    atom_w: np.ndarray
    i_e: int
    closed_l: bool
    closed_r: bool
    truncated_l: bool
    truncated_r: bool
    # flattened per-cell quadrature nodes: m-integrals carry weight*density
    # in x, scale integrals carry plain weights in s
    qm_cell: np.ndarray = field(repr=False, default=None)
    qm_s: np.ndarray = field(repr=False, default=None)
    qm_w: np.ndarray = field(repr=False, default=None)
    qs_cell: np.ndarray = field(repr=False, default=None)
    qs_pos: np.ndarray = field(repr=False, default=None)
    qs_w: np.ndarray = field(repr=False, default=None)

    @property
    def n(self) -> int:
        return self.x.size

    @property
    def n_cells(self) -> int:
        return self.x.size - 1

    @property
    def ds(self) -> np.ndarray:
        return self.s[1:] - self.s[:-1]

    def hermite_at_qm(self, values, d_right, d_left) -> np.ndarray:
        """Cubic Hermite evaluation of a node column at the m-quadrature
        points (d_left applies at each cell's right node)."""
        return _hermite_flat(self.s, values, d_right, d_left,
                             self.qm_cell, self.qm_s)

    def hermite_at_qs(self, values, d_right, d_left) -> np.ndarray:
        return _hermite_flat(self.s, values, d_right, d_left,
                             self.qs_cell, self.qs_pos)

    def cell_m_integral(self, values, d_right, d_left) -> np.ndarray:
        """Per-cell integral against the speed measure, atom at the right
        node included (half-open cells)."""
        fq = self.hermite_at_qm(values, d_right, d_left)
        out = np.add.reduceat(self.qm_w * fq, np.arange(0, self.qm_w.size, 3))
        return out + self.atom_w[1:] * np.asarray(values)[1:]

    def cell_m_first_moment(self, values, d_right, d_left) -> np.ndarray:
        """Per-cell integral of (s_right - s(eta)) f(eta) dm; atoms at the
        right node contribute nothing by the vanishing weight."""
        fq = self.hermite_at_qm(values, d_right, d_left)
        w = self.qm_w * (self.s[self.qm_cell + 1] - self.qm_s)
        return np.add.reduceat(w * fq, np.arange(0, self.qm_w.size, 3))

    def cell_s_integral(self, values, d_right, d_left) -> np.ndarray:
        """Per-cell integral against the scale coordinate."""
        fq = self.hermite_at_qs(values, d_right, d_left)
        return np.add.reduceat(self.qs_w * fq, np.arange(0, self.qs_w.size, 6))

    def cumulative_from_e(self, cell_values: np.ndarray) -> np.ndarray:
        """Node-indexed signed cumulative of per-cell quantities from e:
        the half-open integral over (e, x_j] right of e, minus the integral
        over (x_j, e] left of e."""
        p = np.concatenate(([0.0], np.cumsum(cell_values)))
        return p - p[self.i_e]

    def side_kind(self, side: str) -> str:
        closed = self.closed_l if side == "l" else self.closed_r
        if closed:
            return "closed"
        klass = self.report.endpoint(side).klass
        approach = self.report.endpoint(side).approachable
        if approach:
            return "near"       # finite scale limit, endpoint not a node
        return "far"            # truncated at the growth budget


def _hermite_flat(s, values, d_right, d_left, cell_idx, pos):
    v = np.asarray(values, dtype=float)
    dr = np.asarray(d_right, dtype=float)
    dl = np.asarray(d_left, dtype=float)
    h = s[cell_idx + 1] - s[cell_idx]
    t = (pos - s[cell_idx]) / h
    t2 = t * t
    t3 = t2 * t
    h00 = 2 * t3 - 3 * t2 + 1
    h10 = t3 - 2 * t2 + t
    h01 = -2 * t3 + 3 * t2
    h11 = t3 - t2
    return (h00 * v[cell_idx] + h10 * h * dr[cell_idx]
            + h01 * v[cell_idx + 1] + h11 * h * dl[cell_idx + 1])


def _geometric_refinement(s_edge: float, s_inner: float, levels: int,
                          include_edge: bool) -> np.ndarray:
    """Scale positions approaching s_edge from s_inner, halving the gap."""
    gap = s_edge - s_inner
    ks = np.arange(1, levels + 1, dtype=float)
    pts = s_edge - gap * 0.5 ** ks
    keep = np.abs(pts - s_edge) > 1e-14 * max(abs(s_edge), abs(s_inner), 1e-12)
    pts = pts[keep]
    if include_edge:
        pts = np.append(pts, s_edge)
    return pts


def _multiplicative_tail(s_knee: float, s_wall: float, min_count: int = 16) -> np.ndarray:
    """Scale positions from knee to wall whose distances from the reference
    point grow by a quarter octave per node; dense enough both for cubic
    interpolation of exponentially decaying integrands and for
    extrapolating tail integrals along them."""
    a, b = abs(s_knee), abs(s_wall)
    if not (b > a > 0):
        return np.asarray([s_wall])
    count = max(min_count, int(math.ceil(8.0 * math.log2(b / a))) + 1)
    mags = a * (b / a) ** (np.arange(1, count + 1) / count)
    return math.copysign(1.0, s_wall) * mags


def _truncation_walk(spec: DiffusionSpec, side: str, alpha: float,
                     settings: GridSettings):
    """Walk from e toward a side with infinite scale limit until the growth
    exponent 2*alpha*sigma reaches the budget; returns the visited x
    positions and the knee point where the exponent passes ~2.

    When one geometric step overshoots a threshold by a wide margin (the
    exponent can grow doubly exponentially along the walk) the crossing is
    bisected so the wall lands near the budget rather than far beyond it.
    """
    scale_gain = 2.0 * alpha if alpha > 0 else 1.0
    target = settings.sigma_budget if alpha > 0 else settings.zero_alpha_span
    knee_level = 2.0
    policy = measures.LimitPolicy(max_steps=70)

    def locate(level: float, lo: float, sig_lo: float, m_lo: float,
               hi: float, rounds: int) -> float:
        """Point between lo and hi where the exponent crosses the level."""
        direction = 1 if side == "r" else -1
        for _ in range(rounds):
            mid = 0.5 * (lo + hi)
            if mid == lo or mid == hi:
                break
            d_sig, _, d_m = measures._segment_sigma_mu(
                spec, lo, mid, direction, m_lo, need_mu=False)
            if scale_gain * (sig_lo + d_sig) >= level:
                hi = mid
                if scale_gain * (sig_lo + d_sig) < 4.0 * level:
                    return mid
            else:
                lo, sig_lo, m_lo = mid, sig_lo + d_sig, m_lo + d_m
        return hi

    xs = []
    knee_x = None
    prev = spec.e
    sig = m_run = 0.0
    direction = 1 if side == "r" else -1
    for x in measures._approach_sequence(spec.interval, side,
                                         measures._sweep_start(spec, side),
                                         policy):
        d_sig, _, d_m = measures._segment_sigma_mu(spec, prev, x, direction,
                                                   m_run, need_mu=False)
        expo_next = scale_gain * (sig + d_sig)
        if knee_x is None and expo_next >= knee_level:
            knee_x = locate(knee_level, prev, sig, m_run, x, 12) \
                if expo_next > 4.0 * knee_level else x
        if expo_next >= target:
            wall = locate(target, prev, sig, m_run, x, 40) \
                if expo_next > 4.0 * target else x
            xs.append(wall)
            break
        sig += d_sig
        m_run += d_m
        xs.append(x)
        prev = x
    if not xs:
        xs.append(measures._sweep_start(spec, side))
    if knee_x is None:
        knee_x = xs[-1]
    return np.asarray(xs), knee_x


def build_grid(spec: DiffusionSpec, alpha: float,
               settings: GridSettings = DEFAULT_GRID_SETTINGS,
               report: Optional[BoundaryReport] = None) -> Grid:
    """Build the computation grid for one spec and one transform parameter."""
    rep = report if report is not None else classify(spec)
    sc = spec.scale
    iv = spec.interval

    side_nodes_s: dict[str, np.ndarray] = {}
    knees: dict[str, float] = {}
    closed: dict[str, bool] = {}
    truncated: dict[str, bool] = {}

    for side in ("l", "r"):
        ep = rep.endpoint(side)
        if ep.approachable:
            include_edge = ep.klass is BoundaryClass.REGULAR
            knees[side] = ep.scale_value
            closed[side] = include_edge
            truncated[side] = not include_edge
        else:
            xs, knee_x = _truncation_walk(spec, side, alpha, settings)
            s_knee = float(sc(knee_x))
            s_wall = float(sc(xs[-1]))
            side_nodes_s[side] = _multiplicative_tail(s_knee, s_wall)
            knees[side] = s_knee
            closed[side] = False
            truncated[side] = True

    s_lo, s_hi = knees["l"], knees["r"]
    if not (s_lo < 0 < s_hi):
        s_lo, s_hi = min(s_lo, -1e-6), max(s_hi, 1e-6)
    core = np.linspace(s_lo, s_hi, settings.n_core)
    # approachable edges get geometric subdivision of the outermost core cell
    # (the solution can have a boundary layer there; the derivative limits
    # are extrapolated along these nodes)
    h_core = (s_hi - s_lo) / (settings.n_core - 1)
    for side in ("l", "r"):
        if side in side_nodes_s:
            continue
        s_edge = knees[side]
        inner = s_edge + (h_core if side == "l" else -h_core)
        side_nodes_s[side] = _geometric_refinement(
            s_edge, inner, settings.refine_levels, closed[side])
    s_all = np.concatenate([core, side_nodes_s["l"], side_nodes_s["r"], [0.0]])
    s_all = np.unique(s_all)

    # map to x, then insert atoms and the reference point as exact x-nodes
    lo_b = iv.l if math.isfinite(iv.l) else -math.inf
    hi_b = iv.r if math.isfinite(iv.r) else math.inf
    x_nodes = np.asarray(sc.inverse(s_all, lo_b, hi_b), dtype=float)
    extra_x = [spec.e] + [p for p, _ in spec.speed.atoms]
    extra_x += [b for b in spec.breakpoints if x_nodes[0] < b < x_nodes[-1]]
    x_nodes = np.concatenate([x_nodes, np.asarray(extra_x, dtype=float)])
    x_nodes = np.unique(x_nodes)
    x_nodes = x_nodes[(x_nodes >= lo_b) & (x_nodes <= hi_b)]
    s_nodes = np.asarray(sc(x_nodes), dtype=float)

    # drop nodes that collide in scale after roundoff (atoms and the
    # reference point are re-snapped below)
    keep = np.concatenate(([True], np.diff(s_nodes) > 1e-13 * (1 + np.abs(s_nodes[1:]))))
    x_nodes, s_nodes = x_nodes[keep].copy(), s_nodes[keep].copy()

    i_e = int(np.argmin(np.abs(x_nodes - spec.e)))
    x_nodes[i_e] = spec.e
    s_nodes[i_e] = 0.0

    atom_w = np.zeros_like(x_nodes)
    claimed = {i_e}
    for p, w in spec.speed.atoms:
        j = int(np.argmin(np.abs(x_nodes - p)))
        if j in claimed:
            j_new = int(np.searchsorted(x_nodes, p))
            x_nodes = np.insert(x_nodes, j_new, p)
            s_nodes = np.insert(s_nodes, j_new, float(sc(p)))
            atom_w = np.insert(atom_w, j_new, w)
            claimed = {k if k < j_new else k + 1 for k in claimed}
            claimed.add(j_new)
            if j_new <= i_e:
                i_e += 1
            continue
        x_nodes[j] = p
        s_nodes[j] = float(sc(p))
        atom_w[j] = w
        claimed.add(j)
    if np.any(np.diff(s_nodes) <= 0):
        order = np.argsort(x_nodes)
        x_nodes, s_nodes, atom_w = x_nodes[order], s_nodes[order], atom_w[order]
        i_e = int(np.argmin(np.abs(x_nodes - spec.e)))

    grid = Grid(spec=spec, alpha=alpha, report=rep, x=x_nodes, s=s_nodes,
                atom_w=atom_w, i_e=i_e, closed_l=closed["l"],
                closed_r=closed["r"], truncated_l=truncated["l"],
                truncated_r=truncated["r"])
    _attach_quadrature(grid)
    return grid


def _attach_quadrature(grid: Grid) -> None:
    x, s = grid.x, grid.s
    n_cells = x.size - 1
    xm = 0.5 * (x[1:] + x[:-1])
    xh = 0.5 * (x[1:] - x[:-1])
    qm_x = (xm[:, None] + xh[:, None] * _GL3_T[None, :]).ravel()
    qm_cell = np.repeat(np.arange(n_cells), 3)
    dens = np.asarray(grid.spec.speed.density(qm_x), dtype=float)
    qm_w = (xh[:, None] * _GL3_W[None, :]).ravel() * dens
    qm_s = np.asarray(grid.spec.s(qm_x), dtype=float)

    sm = 0.5 * (s[1:] + s[:-1])
    sh = 0.5 * (s[1:] - s[:-1])
    qs_pos = (sm[:, None] + sh[:, None] * _GL6_T[None, :]).ravel()
    qs_cell = np.repeat(np.arange(n_cells), 6)
    qs_w = (sh[:, None] * _GL6_W[None, :]).ravel()

    grid.qm_cell, grid.qm_s, grid.qm_w = qm_cell, qm_s, qm_w
    grid.qs_cell, grid.qs_pos, grid.qs_w = qs_cell, qs_pos, qs_w

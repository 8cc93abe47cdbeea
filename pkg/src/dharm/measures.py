"""Intervals, scale functions, speed measures, and Stieltjes integration.

A one-dimensional diffusion is specified by an interval, a strictly
increasing continuous scale function s normalized to s(e) = 0 at a
reference point e, and a positive Radon speed measure m with full
topological support (atoms allowed, including at included endpoints).

All one-sided integral conventions are half-open: an integral from a to b
means the integral over (a, b], and integrals with a > b are negated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import (
    ConvergenceUndecided,
    DomainError,
    InconsistentSpec,
    NonFinite,
)

__all__ = [
    "Interval",
    "ScaleFunction",
    "SpeedMeasure",
    "DiffusionSpec",
    "BoundaryLimit",
    "LimitPolicy",
    "adaptive_quadrature",
    "stieltjes_integral",
    "sigma",
    "mu",
    "sigma_mu_at_boundary",
    "scale_limit",
    "scale_limit_certified",
    "speed_mass_near",
    "limit_at_boundary",
]

POS_INF = float("inf")
NEG_INF = float("-inf")


# ---------------------------------------------------------------------------
# limit certification policy

@dataclass(frozen=True)
class LimitPolicy:
    """Budget for certifying monotone limits at interval endpoints.

    A geometric approach sequence shrinks the endpoint distance by
    ``approach_ratio`` per step (or grows it by ``growth_factor`` toward an
    infinite endpoint).  The limit is Finite once two consecutive relative
    increments fall below ``tol``, Divergent once the value crosses ``d_max``
    or the increments stop decaying (ratio >= ``slow_ratio`` sustained, which
    catches logarithmic divergence that never reaches the cap).
    """

    tol: float = 1e-9
    d_max: float = 1e12
    max_steps: int = 60
    approach_ratio: float = 0.25
    growth_factor: float = 4.0
    slow_ratio: float = 0.97


DEFAULT_LIMIT_POLICY = LimitPolicy()


@dataclass(frozen=True)
class BoundaryLimit:
    """Outcome of a certified monotone limit: Finite(value) or Divergent."""

    finite: bool
    value: float

    @classmethod
    def finite_value(cls, v: float) -> "BoundaryLimit":
        return cls(True, float(v))

    @classmethod
    def divergent(cls, sign: float = 1.0) -> "BoundaryLimit":
        return cls(False, math.copysign(POS_INF, sign))

    @property
    def extended(self) -> float:
        """The limit as an extended real (+-inf when divergent)."""
        return self.value


class _MonotoneCertifier:
    """Consumes a monotone sequence of values and certifies its limit."""

    def __init__(self, policy: LimitPolicy):
        self.policy = policy
        self.values: list[float] = []
        self.result: Optional[BoundaryLimit] = None

    def update(self, v: float) -> Optional[BoundaryLimit]:
        if self.result is not None:
            return self.result
        p = self.policy
        if math.isnan(v):
            raise ConvergenceUndecided(
                "monotone evaluator overflowed before the limit was certified")
        self.values.append(v)
        if abs(v) >= p.d_max or math.isinf(v):
            self.result = BoundaryLimit.divergent(v if v != 0 else 1.0)
            return self.result
        if len(self.values) < 3:
            return None
        incs = [abs(b - a) for a, b in zip(self.values[:-1], self.values[1:])]
        scale = max(1.0, abs(v))
        sign = self.values[-1] - self.values[0]
        if incs[-1] <= p.tol * scale and incs[-2] <= p.tol * scale:
            self.result = BoundaryLimit.finite_value(v)
            return self.result
        # growing increments along a geometric approach cannot sum to a
        # finite limit; this certifies polynomial divergence long before the
        # cap (and before intermediate factors overflow)
        if (
            len(incs) >= 4
            and incs[-1] > p.tol * scale
            and all(b >= 1.5 * a > 0 for a, b in zip(incs[-3:-1], incs[-2:]))
        ):
            self.result = BoundaryLimit.divergent(sign if sign != 0 else 1.0)
            return self.result
        # increments that refuse to decay (logarithmic divergence)
        if len(incs) >= 8:
            tail = incs[-6:]
            ratios = [b / a for a, b in zip(tail[:-1], tail[1:]) if a > 0]
            if (
                len(ratios) >= 4
                and sorted(ratios)[len(ratios) // 2] >= p.slow_ratio
                and incs[-1] > p.tol * scale
            ):
                self.result = BoundaryLimit.divergent(sign if sign != 0 else 1.0)
                return self.result
        return None

    def timeout(self) -> BoundaryLimit:
        if self.result is not None:
            return self.result
        raise ConvergenceUndecided(
            "monotone limit not certified within "
            f"{self.policy.max_steps} truncation steps "
            f"(last values {self.values[-3:]})"
        )


def _approach_sequence(interval: "Interval", side: str, start: Optional[float],
                       policy: LimitPolicy) -> Iterable[float]:
    """Geometric sequence of interior points approaching an endpoint."""
    l, r = interval.l, interval.r
    if side == "l":
        endpoint, other = l, r
    elif side == "r":
        endpoint, other = r, l
    else:
        raise ValueError(f"side must be 'l' or 'r', got {side!r}")
    if start is None:
        if math.isfinite(endpoint) and math.isfinite(other):
            start = 0.5 * (endpoint + other)
        elif math.isfinite(endpoint):
            start = endpoint + math.copysign(max(1.0, 0.5 * abs(endpoint)),
                                             other - endpoint)
            # fall back inside the interval if the heuristic overshoots
            if side == "l" and start >= other:
                start = endpoint + 1.0
            if side == "r" and start <= other:
                start = endpoint - 1.0
        else:
            anchor = other if math.isfinite(other) else 0.0
            start = anchor + (1.0 if side == "r" else -1.0) * max(1.0, abs(anchor))
    x = float(start)
    for _ in range(policy.max_steps + 1):
        yield x
        if math.isfinite(endpoint):
            d = (endpoint - x) * (1.0 - policy.approach_ratio)
            nxt = x + d
            if nxt == x or nxt == endpoint:
                return
            x = nxt
        else:
            x = x * policy.growth_factor if x * endpoint > 0 else x + \
                math.copysign(max(1.0, abs(x)) * (policy.growth_factor - 1.0), endpoint)


def limit_at_boundary(g: Callable[[float], float], side: str,
                      interval: "Interval", *, start: Optional[float] = None,
                      policy: LimitPolicy = DEFAULT_LIMIT_POLICY) -> BoundaryLimit:
    """Certify the limit of a monotone evaluator ``g`` at an endpoint.

    ``g`` is evaluated along a geometric truncation sequence approaching the
    endpoint.  Returns Finite(v) when successive values Cauchy-converge below
    the policy tolerance, Divergent when they exceed the cap while still
    increasing (or stop decaying), and raises ConvergenceUndecided otherwise.
    """
    cert = _MonotoneCertifier(policy)
    for x in _approach_sequence(interval, side, start, policy):
        out = cert.update(float(g(x)))
        if out is not None:
            return out
    return cert.timeout()


# ---------------------------------------------------------------------------
# quadrature

@lru_cache(maxsize=None)
def _gl_nodes(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


def _gl_panel(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
              order: int = 15) -> float:
    t, w = _gl_nodes(order)
    mid, half = 0.5 * (a + b), 0.5 * (b - a)
    return float(half * np.sum(w * np.asarray(f(mid + half * t), dtype=float)))


def adaptive_quadrature(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                        *, rel_tol: float = 1e-12, abs_tol: float = 0.0,
                        breakpoints: Sequence[float] = (), max_panels: int = 2048) -> float:
    """Adaptive Gauss-Legendre integral of a vectorized integrand on [a, b].

    Panels are split at the supplied breakpoints, then refined worst-first
    until the summed error estimate meets tolerance; the panel budget bounds
    the total work even for hostile integrands.
    """
    if a == b:
        return 0.0
    if a > b:
        return -adaptive_quadrature(f, b, a, rel_tol=rel_tol, abs_tol=abs_tol,
                                    breakpoints=breakpoints, max_panels=max_panels)
    import heapq

    # panel = (-err, seq, lo, mid, hi, refined_value); its contribution to the
    # running total is refined_value = GL(lo,mid) + GL(mid,hi), its error the
    # discrepancy against the unsplit estimate
    def make_panel(lo, hi, whole, seq):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            return (0.0, seq, lo, lo, hi, whole)
        left = _gl_panel(f, lo, mid)
        right = _gl_panel(f, mid, hi)
        return (-abs(left + right - whole), seq, lo, mid, hi, left + right)

    cuts = [a] + sorted(p for p in set(breakpoints) if a < p < b) + [b]
    heap: list = []
    seq = 0
    total = 0.0
    err_total = 0.0
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        p = make_panel(lo, hi, _gl_panel(f, lo, hi), seq)
        seq += 1
        total += p[5]
        err_total += -p[0]
        heapq.heappush(heap, p)
    while heap and len(heap) < max_panels:
        tol = max(abs_tol, rel_tol * abs(total), 8e-16 * (abs(total) + 1e-300))
        if err_total <= tol:
            break
        neg_err, _, lo, mid, hi, val = heapq.heappop(heap)
        err = -neg_err
        # stop when the worst panel is below its tolerance share or at the
        # roundoff floor of the running total (summed panel roundoff grows
        # with the panel count, so the total-error test alone cannot see
        # convergence there)
        if err <= max(0.5 * tol / (len(heap) + 1),
                      4e-15 * (abs(total) + 1e-300)):
            break
        err_total -= err
        total -= val
        left = _gl_panel(f, lo, mid)
        for child in (make_panel(lo, mid, left, seq),
                      make_panel(mid, hi, val - left, seq + 1)):
            total += child[5]
            err_total += -child[0]
            heapq.heappush(heap, child)
        seq += 2
    return total


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class Interval:
    """State interval; endpoints may be infinite, inclusion per flag."""

    l: float
    r: float
    includes_l: bool = False
    includes_r: bool = False

    def __post_init__(self):
        if not self.l < self.r:
            raise InconsistentSpec(f"interval needs l < r, got [{self.l}, {self.r}]")
        if self.includes_l and not math.isfinite(self.l):
            raise InconsistentSpec("an infinite endpoint cannot be a state-space point")
        if self.includes_r and not math.isfinite(self.r):
            raise InconsistentSpec("an infinite endpoint cannot be a state-space point")

    def endpoint(self, side: str) -> float:
        return self.l if side == "l" else self.r

    def includes(self, side: str) -> bool:
        return self.includes_l if side == "l" else self.includes_r

    def contains(self, x: float) -> bool:
        if self.l < x < self.r:
            return True
        return (x == self.l and self.includes_l) or (x == self.r and self.includes_r)

    def contains_closure(self, x: float) -> bool:
        return self.l <= x <= self.r

    def __str__(self) -> str:
        lb = "[" if self.includes_l else "("
        rb = "]" if self.includes_r else ")"
        return f"{lb}{self.l}, {self.r}{rb}"


@dataclass(frozen=True, eq=False)
class ScaleFunction:
    """Continuous strictly increasing natural-scale coordinate.

    Two representations: an analytic callable with its derivative, or a
    tabulated piecewise-linear function on sorted breakpoints.  The offset
    making s(e) = 0 is applied when the function enters a DiffusionSpec.
    """

    kind: str
    value_raw: Optional[Callable] = None
    density_raw: Optional[Callable] = None
    inverse_raw: Optional[Callable] = None
    limits_raw: Optional[tuple[float, float]] = None
    x_knots: Optional[np.ndarray] = None
    s_knots: Optional[np.ndarray] = None
    offset: float = 0.0

    @classmethod
    def from_callable(cls, value: Callable, density: Callable, *,
                      inverse: Optional[Callable] = None,
                      limits: Optional[tuple[float, float]] = None) -> "ScaleFunction":
        return cls(kind="analytic", value_raw=value, density_raw=density,
                   inverse_raw=inverse, limits_raw=limits)

    @classmethod
    def from_table(cls, x: Sequence[float], s: Sequence[float]) -> "ScaleFunction":
        xa = np.asarray(x, dtype=float)
        sa = np.asarray(s, dtype=float)
        if xa.ndim != 1 or xa.shape != sa.shape or xa.size < 2:
            raise InconsistentSpec("scale table needs matching 1-d x and s arrays")
        if not (np.all(np.diff(xa) > 0) and np.all(np.diff(sa) > 0)):
            raise InconsistentSpec("scale table must be strictly increasing")
        return cls(kind="tabulated", x_knots=xa, s_knots=sa)

    def shifted(self, e: float) -> "ScaleFunction":
        off = self.offset + float(self._raw_value(e))
        return ScaleFunction(self.kind, self.value_raw, self.density_raw,
                             self.inverse_raw, self.limits_raw,
                             self.x_knots, self.s_knots, off)

    def _raw_value(self, x):
        if self.kind == "analytic":
            return self.value_raw(x) - self.offset
        return np.interp(x, self.x_knots, self.s_knots) - self.offset

    def __call__(self, x):
        return self._raw_value(x)

    def density(self, x):
        if self.kind == "analytic":
            return self.density_raw(x)
        xa = np.asarray(x, dtype=float)
        slopes = np.diff(self.s_knots) / np.diff(self.x_knots)
        idx = np.clip(np.searchsorted(self.x_knots, xa, side="right") - 1,
                      0, slopes.size - 1)
        out = slopes[idx]
        return out if xa.ndim else float(out)

    def delta(self, a: float, b: float) -> float:
        """s(b) - s(a) computed without catastrophic cancellation.

        When the direct difference loses most of its digits (the scale
        saturating toward a finite limit) it is recomputed as the integral
        of the scale density.
        """
        va, vb = float(self._raw_value(a)), float(self._raw_value(b))
        naive = vb - va
        if a == b or not (math.isfinite(va) and math.isfinite(vb)):
            return naive
        if abs(naive) >= 1e-9 * (abs(va) + abs(vb)):
            return naive
        return adaptive_quadrature(self.density, a, b, rel_tol=1e-12,
                                   breakpoints=self.breakpoints)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        if self.kind == "tabulated":
            return tuple(self.x_knots[1:-1])
        return ()

    def inverse(self, s_target, lo: float, hi: float):
        """Map normalized scale values back to x within the bracket [lo, hi]."""
        arr = np.atleast_1d(np.asarray(s_target, dtype=float))
        if self.kind == "tabulated":
            out = np.interp(arr + self.offset, self.s_knots, self.x_knots)
        elif self.inverse_raw is not None:
            out = np.asarray(self.inverse_raw(arr + self.offset), dtype=float)
        elif arr.size > 8:
            out = self._inverse_newton(arr, lo, hi)
        else:
            out = np.array([self._inverse_scalar(v, lo, hi) for v in arr])
        return out if np.ndim(s_target) else float(out[0])

    def _inverse_newton(self, arr: np.ndarray, lo: float, hi: float) -> np.ndarray:
        """Vectorized inverse: interpolation through a dense sample followed
        by safeguarded Newton steps with the known density."""
        a = self._inverse_scalar(float(np.min(arr)), lo, hi)
        b = self._inverse_scalar(float(np.max(arr)), lo, hi)
        if not a < b:
            return np.full(arr.shape, a)
        grid = np.linspace(a, b, 4097)
        sg = np.asarray(self._raw_value(grid), dtype=float)
        x = np.interp(arr, sg, grid)
        for _ in range(4):
            fx = np.asarray(self._raw_value(x), dtype=float) - arr
            dfx = np.asarray(self.density(x), dtype=float)
            step = np.where(dfx > 0, fx / np.where(dfx > 0, dfx, 1.0), 0.0)
            x = np.clip(x - step, a, b)
        return x

    def _inverse_scalar(self, s_val: float, lo: float, hi: float) -> float:
        f = lambda x: float(self._raw_value(x)) - s_val
        a, b = lo, hi
        # expand an infinite-side bracket geometrically until it straddles
        if not math.isfinite(a):
            a = min(b - 1.0 if math.isfinite(b) else -1.0, -1.0)
            while f(a) > 0:
                a = a * 4 if a < -1 else -4.0
        if not math.isfinite(b):
            b = max(a + 1.0, 1.0)
            while f(b) < 0:
                b = b * 4 if b > 1 else 4.0
        fa, fb = f(a), f(b)
        if fa > 0 or fb < 0:
            raise DomainError("scale inverse target outside bracket")
        return brentq(f, a, b, xtol=1e-15 * (1 + abs(a) + abs(b)), rtol=2e-15)


@dataclass(frozen=True, eq=False)
class SpeedMeasure:
    """Positive Radon measure with full support; atoms listed explicitly.

    The continuous part is either an analytic density (optionally with a
    closed-form primitive) or a tabulated piecewise-linear cumulative, whose
    density is piecewise constant.  Atom masses are kept exact and are never
    smeared into the continuous part.
    """

    kind: str
    density_raw: Optional[Callable] = None
    cumulative_raw: Optional[Callable] = None
    x_knots: Optional[np.ndarray] = None
    cdf_knots: Optional[np.ndarray] = None
    atoms: tuple[tuple[float, float], ...] = ()

    @classmethod
    def from_density(cls, density: Callable, *, cumulative: Optional[Callable] = None,
                     atoms: Sequence[tuple[float, float]] = ()) -> "SpeedMeasure":
        return cls(kind="analytic", density_raw=density, cumulative_raw=cumulative,
                   atoms=_norm_atoms(atoms))

    @classmethod
    def from_table(cls, x: Sequence[float], cdf: Sequence[float], *,
                   atoms: Sequence[tuple[float, float]] = ()) -> "SpeedMeasure":
        xa = np.asarray(x, dtype=float)
        ca = np.asarray(cdf, dtype=float)
        if xa.ndim != 1 or xa.shape != ca.shape or xa.size < 2:
            raise InconsistentSpec("speed table needs matching 1-d x and cdf arrays")
        if not np.all(np.diff(xa) > 0):
            raise InconsistentSpec("speed table breakpoints must increase")
        if not np.all(np.diff(ca) > 0):
            raise InconsistentSpec("speed cumulative must be strictly increasing "
                                   "(full topological support)")
        return cls(kind="tabulated", x_knots=xa, cdf_knots=ca,
                   atoms=_norm_atoms(atoms))

    def density(self, x):
        if self.kind == "analytic":
            return self.density_raw(x)
        xa = np.asarray(x, dtype=float)
        slopes = np.diff(self.cdf_knots) / np.diff(self.x_knots)
        idx = np.clip(np.searchsorted(self.x_knots, xa, side="right") - 1,
                      0, slopes.size - 1)
        out = slopes[idx]
        return out if xa.ndim else float(out)

    def continuous_mass(self, a: float, b: float, *, rel_tol: float = 1e-12) -> float:
        """Mass of the continuous part on (a, b), a <= b finite."""
        if a == b:
            return 0.0
        if self.kind == "tabulated":
            return float(self._tab_mass(a, b))
        if self.cumulative_raw is not None:
            try:
                return float(self.cumulative_raw(b) - self.cumulative_raw(a))
            except OverflowError:
                return POS_INF
        return adaptive_quadrature(self.density_raw, a, b, rel_tol=rel_tol)

    def atoms_in(self, a: float, b: float) -> list[tuple[float, float]]:
        """Atoms with location in the half-open cell (a, b]."""
        return [(p, w) for p, w in self.atoms if a < p <= b]

    def atom_at(self, x: float) -> float:
        for p, w in self.atoms:
            if p == x:
                return w
        return 0.0

    def mass(self, a: float, b: float) -> float:
        """m((a, b]) with atoms at b counted, atoms at a excluded."""
        if a > b:
            return -self.mass(b, a)
        return self.continuous_mass(a, b) + sum(w for _, w in self.atoms_in(a, b))

    def _cumulative_vec(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "tabulated":
            return np.interp(x, self.x_knots, self.cdf_knots)
        if self.cumulative_raw is not None:
            with np.errstate(over="ignore"):
                return np.asarray([_safe_cum(self.cumulative_raw, v) for v in x])
        # no primitive available: integrate the density incrementally; the
        # caller's outer quadrature does the refining, a fixed rule per gap
        # suffices
        order = np.argsort(x)
        vals = np.empty_like(np.asarray(x, dtype=float))
        run = 0.0
        prev = x[order[0]]
        vals[order[0]] = 0.0
        for idx in order[1:]:
            run += _gl_panel(self.density_raw, prev, x[idx], order=10)
            prev = x[idx]
            vals[idx] = run
        return vals

    def _tab_mass(self, lo, hi) -> np.ndarray:
        """Piecewise-exact continuous mass between broadcastable bounds,
        free of the cancellation a cumulative difference would suffer."""
        t = self.x_knots
        rho = np.diff(self.cdf_knots) / np.diff(t)
        lo_a = np.asarray(lo, dtype=float)
        hi_a = np.asarray(hi, dtype=float)
        out = np.zeros(np.broadcast(lo_a, hi_a).shape)
        for k in range(rho.size):
            seg = (np.minimum(hi_a, t[k + 1]) - np.maximum(lo_a, t[k]))
            out += rho[k] * np.maximum(seg, 0.0)
        # clamp outside the table to the edge densities
        out += rho[0] * np.maximum(np.minimum(hi_a, t[0]) - lo_a, 0.0)
        out += rho[-1] * np.maximum(hi_a - np.maximum(lo_a, t[-1]), 0.0)
        return out

    def _cont_mass_vec(self, lo, hi) -> np.ndarray:
        """Vectorized continuous mass with a midpoint-density fallback when
        the cumulative difference loses its digits."""
        lo_a = np.atleast_1d(np.asarray(lo, dtype=float))
        hi_a = np.atleast_1d(np.asarray(hi, dtype=float))
        lo_a, hi_a = np.broadcast_arrays(lo_a, hi_a)
        if self.kind == "tabulated":
            return self._tab_mass(lo_a, hi_a)
        f_lo = self._cumulative_vec(lo_a)
        f_hi = self._cumulative_vec(hi_a)
        diff = np.maximum(f_hi - f_lo, 0.0)
        if self.cumulative_raw is not None:
            noise = 1e-9 * (np.abs(f_lo) + np.abs(f_hi))
            tiny = (diff <= noise) & (hi_a > lo_a)
            if np.any(tiny):
                mid = 0.5 * (lo_a[tiny] + hi_a[tiny])
                dens = np.asarray(self.density_raw(mid), dtype=float)
                diff = diff.copy()
                diff[tiny] = dens * (hi_a[tiny] - lo_a[tiny])
        return diff

    def mass_from_vec(self, a: float, x: np.ndarray) -> np.ndarray:
        """m((a, x_i]) for each x_i >= a, atoms at x_i counted."""
        xa = np.asarray(x, dtype=float)
        out = self._cont_mass_vec(a, xa)
        for p, w in self.atoms:
            out = out + w * ((xa >= p) & (p > a))
        return out

    def mass_to_vec(self, x: np.ndarray, b: float) -> np.ndarray:
        """m((x_i, b]) for each x_i <= b, atom at b counted."""
        xa = np.asarray(x, dtype=float)
        out = self._cont_mass_vec(xa, b)
        for p, w in self.atoms:
            out = out + w * ((xa < p) & (p <= b))
        return out

    @property
    def breakpoints(self) -> tuple[float, ...]:
        pts = [p for p, _ in self.atoms]
        if self.kind == "tabulated":
            pts.extend(self.x_knots[1:-1])
        return tuple(sorted(set(pts)))


def _safe_cum(F: Callable, v: float) -> float:
    try:
        return float(F(v))
    except OverflowError:
        return POS_INF


def _norm_atoms(atoms) -> tuple[tuple[float, float], ...]:
    out = []
    for p, w in atoms:
        if not (w > 0):
            raise InconsistentSpec(f"atom at {p} must carry positive mass, got {w}")
        out.append((float(p), float(w)))
    out.sort()
    for (p1, _), (p2, _) in zip(out[:-1], out[1:]):
        if p1 == p2:
            raise InconsistentSpec(f"duplicate atom location {p1}")
    return tuple(out)


@dataclass(frozen=True, eq=False)
class DiffusionSpec:
    """The (interval, scale, speed) triple with reference point e.

    The scale is renormalized at construction so s(e) = 0 exactly.
    """

    interval: Interval
    scale: ScaleFunction
    speed: SpeedMeasure
    e: float
    family_tag: Optional[str] = None
    # optional overflow-safe closed form for |s(x)| * m'(x); families whose
    # scale explodes exponentially (mean-reverting) provide it fused
    scale_speed_product: Optional[Callable] = None

    def __post_init__(self):
        if not (self.interval.l < self.e < self.interval.r):
            raise InconsistentSpec(f"reference point e={self.e} must be interior "
                                   f"to {self.interval}")
        object.__setattr__(self, "scale", self.scale.shifted(self.e))
        for p, w in self.speed.atoms:
            if p == self.e:
                raise InconsistentSpec("speed measure must not charge the "
                                       "reference point e")
            if not self.interval.contains(p):
                raise InconsistentSpec(
                    f"atom at {p} lies outside the state space {self.interval}")

    # thin accessors used throughout
    def s(self, x):
        return self.scale(x)

    def s_density(self, x):
        return self.scale.density(x)

    def m_mass(self, a: float, b: float) -> float:
        return self.speed.mass(a, b)

    @property
    def breakpoints(self) -> tuple[float, ...]:
        return tuple(sorted(set(self.scale.breakpoints) | set(self.speed.breakpoints)))


# ---------------------------------------------------------------------------
# the iterated integrals sigma and mu

def _segment_sigma_mu(spec: DiffusionSpec, a: float, b: float, direction: int,
                      m_before: float, *, rel_tol: float = 1e-12,
                      need_sigma: bool = True, need_mu: bool = True):
    """Increments of (sigma, mu, mass) over one half-open segment.

    For direction +1 the segment is (a, b] with e <= a < b; for -1 it is
    (b, a] with b < a <= e, walking away from e.  Increments are computed as
        sigma(out) - sigma(in) = m_before * |ds| + int m(local cell) ds
        mu(out)    - mu(in)    = int |s(eta)| dm
    so every integrand stays nonnegative; weighting sigma by the local
    cumulative mass avoids the catastrophic cancellation a saturating scale
    produces in the difference form.
    """
    sp, sc = spec.speed, spec.scale
    lo, hi = (a, b) if direction > 0 else (b, a)
    breaks = [p for p in spec.breakpoints if lo < p < hi]

    if direction > 0:
        def w_sigma(x):
            return sp.mass_from_vec(a, np.asarray(x, dtype=float)) * sc.density(x)
    else:
        def w_sigma(x):
            return sp.mass_to_vec(np.asarray(x, dtype=float), a) * sc.density(x)

    if spec.scale_speed_product is not None:
        w_mu = spec.scale_speed_product
    else:
        def w_mu(x):
            return np.abs(np.asarray(sc(x), dtype=float)) * sp.density(x)

    d_mass = sp.continuous_mass(lo, hi, rel_tol=rel_tol)
    d_sig_local = d_mu = 0.0
    if need_sigma:
        d_sig_local = adaptive_quadrature(w_sigma, lo, hi, rel_tol=rel_tol,
                                          breakpoints=breaks)
    if need_mu:
        d_mu = adaptive_quadrature(w_mu, lo, hi, rel_tol=rel_tol, breakpoints=breaks)
    # atoms_in uses the half-open cell (lo, hi]; on the left sweep that
    # excludes the moving endpoint b and re-includes a, matching the
    # previous segment having stopped short of a.  Atom weight inside the
    # sigma integrand is already carried by the cumulative-mass factor.
    for p, w in sp.atoms_in(lo, hi):
        d_mass += w
        if need_mu:
            d_mu += abs(float(sc(p))) * w
    d_sigma = 0.0
    if need_sigma:
        d_sigma = m_before * abs(sc.delta(a, b)) + d_sig_local
    return d_sigma, d_mu, d_mass


def _interior_sigma_mu(spec: DiffusionSpec, x: float, *, rel_tol: float = 1e-12):
    """(sigma(x), mu(x)) for interior x, as a single certified sweep."""
    if x == spec.e:
        return 0.0, 0.0
    direction = 1 if x > spec.e else -1
    d_sigma, d_mu, _ = _segment_sigma_mu(spec, spec.e, x, direction, 0.0,
                                         rel_tol=rel_tol)
    return d_sigma, d_mu


def _sweep_start(spec: DiffusionSpec, side: str) -> float:
    """First truncation point strictly between e and the endpoint."""
    endpoint = spec.interval.endpoint(side)
    if math.isfinite(endpoint):
        return 0.5 * (spec.e + endpoint)
    step = max(1.0, 0.5 * abs(spec.e))
    return spec.e + (step if side == "r" else -step)


def _boundary_sweep(spec: DiffusionSpec, side: str, *,
                    policy: LimitPolicy = DEFAULT_LIMIT_POLICY):
    """Certified limits of (sigma, mu) at an endpoint, sharing one walk."""
    direction = 1 if side == "r" else -1
    sig_cert = _MonotoneCertifier(policy)
    mu_cert = _MonotoneCertifier(policy)
    sig = mu = m_run = 0.0
    prev = spec.e
    sig_res = mu_res = None
    for x in _approach_sequence(spec.interval, side, _sweep_start(spec, side), policy):
        d_sig, d_mu, d_m = _segment_sigma_mu(
            spec, prev, x, direction, m_run,
            need_sigma=sig_res is None, need_mu=mu_res is None)
        sig, mu, m_run = sig + d_sig, mu + d_mu, m_run + d_m
        prev = x
        if sig_res is None:
            sig_res = sig_cert.update(sig)
        if mu_res is None:
            mu_res = mu_cert.update(mu)
        if sig_res is not None and mu_res is not None:
            return sig_res, mu_res
    # raise ConvergenceUndecided for whichever limit stayed open
    if sig_res is None:
        sig_res = sig_cert.timeout()
    mu_res = mu_cert.timeout() if mu_res is None else mu_res
    return sig_res, mu_res


@lru_cache(maxsize=512)
def sigma_mu_at_boundary(spec: DiffusionSpec, side: str) -> tuple[BoundaryLimit, BoundaryLimit]:
    """Certified (sigma, mu) limits at the given endpoint."""
    return _boundary_sweep(spec, side)


def sigma(spec: DiffusionSpec, x: float) -> float:
    """The iterated integral of the speed measure against the scale, from e.

    Nonnegative on both sides of e; +inf exactly when the monotone limit at
    an endpoint is certified divergent.
    """
    if not spec.interval.contains_closure(x) and not (
            x == spec.interval.l or x == spec.interval.r):
        raise DomainError(f"{x} outside the closed interval")
    if x == spec.interval.l:
        return sigma_mu_at_boundary(spec, "l")[0].extended
    if x == spec.interval.r:
        return sigma_mu_at_boundary(spec, "r")[0].extended
    return _interior_sigma_mu(spec, x)[0]


def mu(spec: DiffusionSpec, x: float) -> float:
    """The iterated integral of the scale against the speed measure, from e."""
    if not spec.interval.contains_closure(x) and not (
            x == spec.interval.l or x == spec.interval.r):
        raise DomainError(f"{x} outside the closed interval")
    if x == spec.interval.l:
        return sigma_mu_at_boundary(spec, "l")[1].extended
    if x == spec.interval.r:
        return sigma_mu_at_boundary(spec, "r")[1].extended
    return _interior_sigma_mu(spec, x)[1]


# ---------------------------------------------------------------------------
# scale and speed limits at endpoints

@lru_cache(maxsize=512)
def scale_limit_certified(spec: DiffusionSpec, side: str) -> BoundaryLimit:
    sc = spec.scale
    endpoint = spec.interval.endpoint(side)
    if sc.kind == "tabulated":
        v = float(sc(endpoint))
        return BoundaryLimit.finite_value(v)
    if sc.limits_raw is not None:
        raw = sc.limits_raw[0 if side == "l" else 1]
        if math.isfinite(raw):
            return BoundaryLimit.finite_value(raw - sc.offset)
        return BoundaryLimit(False, raw)
    sign = -1.0 if side == "l" else 1.0
    vals = _MonotoneCertifier(DEFAULT_LIMIT_POLICY)
    for x in _approach_sequence(spec.interval, side, None, DEFAULT_LIMIT_POLICY):
        out = vals.update(sign * float(sc(x)))
        if out is not None:
            return BoundaryLimit(out.finite, sign * out.value)
    out = vals.timeout()
    return BoundaryLimit(out.finite, sign * out.value)


def scale_limit(spec: DiffusionSpec, side: str) -> float:
    """s(l) in [-inf, 0) or s(r) in (0, +inf], certified."""
    return scale_limit_certified(spec, side).extended


@lru_cache(maxsize=512)
def speed_mass_near(spec: DiffusionSpec, side: str) -> BoundaryLimit:
    """Certified finiteness of the speed mass near an endpoint (atoms at the
    endpoint itself excluded, matching the open-neighbourhood convention)."""
    direction = 1 if side == "r" else -1
    total = 0.0
    cert = _MonotoneCertifier(DEFAULT_LIMIT_POLICY)
    prev = spec.e
    for x in _approach_sequence(spec.interval, side, _sweep_start(spec, side),
                                DEFAULT_LIMIT_POLICY):
        lo, hi = (prev, x) if direction > 0 else (x, prev)
        inc = spec.speed.continuous_mass(lo, hi)
        inc += sum(w for p, w in spec.speed.atoms_in(lo, hi)
                   if p != spec.interval.endpoint(side))
        total += inc
        prev = x
        out = cert.update(total)
        if out is not None:
            return out
    return cert.timeout()


# ---------------------------------------------------------------------------
# the public Stieltjes integral

def stieltjes_integral(spec: DiffusionSpec, f, measure: str, a: float, b: float,
                       *, rel_tol: float = 1e-11) -> float:
    """Integral of f over the half-open interval (a, b] against ds or dm.

    Atoms at b are counted, an atom at a is excluded; for a > b the negated
    integral over (b, a] is returned.  When a or b sits at an endpoint the
    value is the certified monotone limit; NonFinite is raised if that limit
    diverges.
    """
    if measure not in ("m", "ds"):
        raise ValueError("measure must be 'm' or 'ds'")
    iv = spec.interval
    if not (iv.contains_closure(a) and iv.contains_closure(b)):
        raise DomainError(f"integration bounds [{a}, {b}] not inside [{iv.l}, {iv.r}]")
    if a == b:
        return 0.0
    if a > b:
        return -stieltjes_integral(spec, f, measure, b, a, rel_tol=rel_tol)

    fn = f if callable(f) else (
        lambda x, _c=float(f): np.full_like(np.asarray(x, dtype=float), _c))

    def eval_f_scalar(p: float) -> float:
        v = fn(np.asarray([p], dtype=float))
        return float(np.asarray(v).reshape(-1)[0])

    at_l = a == iv.l
    at_r = b == iv.r

    def finite_part(lo: float, hi: float) -> float:
        breaks = [p for p in spec.breakpoints if lo < p < hi]
        dens = spec.speed.density if measure == "m" else spec.scale.density

        def integrand(x):
            return np.asarray(fn(x), dtype=float) * np.asarray(dens(x), dtype=float)

        val = adaptive_quadrature(integrand, lo, hi, rel_tol=rel_tol,
                                  breakpoints=breaks)
        if measure == "m":
            val += sum(w * eval_f_scalar(p) for p, w in spec.speed.atoms_in(lo, hi))
        return val

    # interior body plus certified limits toward any boundary bound
    lo_seq = [a]
    hi_seq = [b]
    policy = DEFAULT_LIMIT_POLICY
    if at_l:
        lo_seq = list(_approach_sequence(iv, "l", None, policy))
        lo_seq = [x for x in lo_seq if x < b]
        if not lo_seq:
            lo_seq = [a + 0.25 * (b - a)] if math.isfinite(a) else [b - 1.0]
    if at_r:
        hi_seq = list(_approach_sequence(iv, "r", None, policy))
        hi_seq = [x for x in hi_seq if x > lo_seq[0]]
        if not hi_seq:
            hi_seq = [b - 0.25 * (b - a)] if math.isfinite(b) else [lo_seq[0] + 1.0]

    core = finite_part(lo_seq[0], hi_seq[0])
    total = core
    if at_r:
        cert = _MonotoneCertifier(policy)
        run = core
        out = cert.update(run)
        prev = hi_seq[0]
        for x in hi_seq[1:]:
            run += finite_part(prev, x)
            prev = x
            out = cert.update(run)
            if out is not None:
                break
        if out is None:
            out = cert.timeout()
        if not out.finite:
            raise NonFinite(f"integral diverges toward r={iv.r}")
        total = out.value
        # atom exactly at an included right endpoint is part of (a, r]
        if measure == "m" and math.isfinite(b):
            w = spec.speed.atom_at(b)
            if w:
                total += w * eval_f_scalar(b)
    if at_l:
        cert = _MonotoneCertifier(policy)
        run = total
        out = cert.update(run)
        prev = lo_seq[0]
        for x in lo_seq[1:]:
            run += finite_part(x, prev)
            prev = x
            out = cert.update(run)
            if out is not None:
                break
        if out is None:
            out = cert.timeout()
        if not out.finite:
            raise NonFinite(f"integral diverges toward l={iv.l}")
        total = out.value
    return total

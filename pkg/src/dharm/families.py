"""Built-in diffusion families in the half-generator normalization.

Each family carries its (scale, speed) pair so the generator acts as
(f'' + 2 b f')/2 in natural coordinates: standard Brownian motion has
identity scale and Lebesgue speed, drifted Brownian motion uses
s' = exp(-2 mu x) / m' = exp(2 mu x), the mean-reverting family uses
s' = exp(theta x^2) / m' = exp(-theta x^2), and the radial family of
dimension delta uses s' = x^(1-delta) / m' = x^(delta-1).
"""
from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import dawsn, erf, erfi

from .errors import InconsistentSpec
from .measures import DiffusionSpec, Interval, ScaleFunction, SpeedMeasure

__all__ = ["brownian", "brownian_drift", "ou", "bessel", "make_family",
           "FAMILIES"]


def _interval(bounds, includes) -> Interval:
    l, r = float(bounds[0]), float(bounds[1])
    return Interval(l, r, includes_l=bool(includes[0]), includes_r=bool(includes[1]))


def _default_e(iv: Interval) -> float:
    if math.isfinite(iv.l) and math.isfinite(iv.r):
        return 0.5 * (iv.l + iv.r)
    if math.isfinite(iv.l):
        return iv.l + 1.0
    if math.isfinite(iv.r):
        return iv.r - 1.0
    return 0.0


def brownian(bounds=(0.0, 1.0), includes=(False, False), e: Optional[float] = None,
             atoms: Sequence[tuple[float, float]] = ()) -> DiffusionSpec:
    """Standard Brownian motion: identity scale, Lebesgue speed."""
    iv = _interval(bounds, includes)
    scale = ScaleFunction.from_callable(
        lambda x: np.asarray(x, dtype=float),
        lambda x: np.ones_like(np.asarray(x, dtype=float)),
        inverse=lambda s: np.asarray(s, dtype=float),
        limits=(iv.l, iv.r))
    speed = SpeedMeasure.from_density(
        lambda x: np.ones_like(np.asarray(x, dtype=float)),
        cumulative=lambda x: float(x),
        atoms=atoms)
    return DiffusionSpec(iv, scale, speed, _default_e(iv) if e is None else e,
                         family_tag="brownian")


def brownian_drift(mu: float, bounds=(float("-inf"), float("inf")),
                   includes=(False, False), e: Optional[float] = None,
                   atoms: Sequence[tuple[float, float]] = ()) -> DiffusionSpec:
    """Brownian motion with constant drift mu."""
    if mu == 0:
        return brownian(bounds, includes, e, atoms)
    iv = _interval(bounds, includes)
    c = 2.0 * mu

    def s_val(x):
        return (1.0 - np.exp(-c * np.asarray(x, dtype=float))) / c

    def s_inv(s):
        return -np.log1p(-c * np.asarray(s, dtype=float)) / c

    # for positive drift the scale saturates at 1/c on the right and
    # diverges on the left; mirrored for negative drift
    s_l = s_val(iv.l) if math.isfinite(iv.l) else (float("-inf") if mu > 0 else 1.0 / c)
    s_r = s_val(iv.r) if math.isfinite(iv.r) else (1.0 / c if mu > 0 else float("inf"))
    scale = ScaleFunction.from_callable(
        s_val, lambda x: np.exp(-c * np.asarray(x, dtype=float)),
        inverse=s_inv, limits=(float(s_l), float(s_r)))
    speed = SpeedMeasure.from_density(
        lambda x: np.exp(c * np.asarray(x, dtype=float)),
        cumulative=lambda x: math.exp(c * x) / c,
        atoms=atoms)
    return DiffusionSpec(iv, scale, speed, _default_e(iv) if e is None else e,
                         family_tag=f"brownian_drift({mu})")


def ou(theta: float = 1.0, bounds=(float("-inf"), float("inf")),
       includes=(False, False), e: Optional[float] = None,
       atoms: Sequence[tuple[float, float]] = ()) -> DiffusionSpec:
    """Mean-reverting family with linear drift -theta x."""
    if theta <= 0:
        raise InconsistentSpec("theta must be positive")
    iv = _interval(bounds, includes)
    root = math.sqrt(theta)
    pref = 0.5 * math.sqrt(math.pi) / root

    def s_val(x):
        return pref * erfi(root * np.asarray(x, dtype=float))

    s_l = float(s_val(iv.l)) if math.isfinite(iv.l) else float("-inf")
    s_r = float(s_val(iv.r)) if math.isfinite(iv.r) else float("inf")
    scale = ScaleFunction.from_callable(
        s_val, lambda x: np.exp(theta * np.asarray(x, dtype=float) ** 2),
        limits=(s_l, s_r))
    speed = SpeedMeasure.from_density(
        lambda x: np.exp(-theta * np.asarray(x, dtype=float) ** 2),
        cumulative=lambda x: pref * float(erf(root * x)),
        atoms=atoms)
    ref = _default_e(iv) if e is None else e
    s_ref = float(s_val(ref))

    # |s(x)| m'(x) fused through Dawson's function: erfi * exp(-x^2) alone
    # would overflow long before the product leaves [0, 1)
    def fused(x):
        xa = np.asarray(x, dtype=float)
        return np.abs(dawsn(root * xa) / root
                      - s_ref * np.exp(-theta * xa ** 2))

    return DiffusionSpec(iv, scale, speed, ref,
                         family_tag=f"ou({theta})", scale_speed_product=fused)


def bessel(delta: float, bounds=(0.0, float("inf")), includes=(False, False),
           e: Optional[float] = None,
           atoms: Sequence[tuple[float, float]] = ()) -> DiffusionSpec:
    """Radial family of dimension delta on a subinterval of (0, inf)."""
    iv = _interval(bounds, includes)
    if iv.l < 0:
        raise InconsistentSpec("the radial family lives on (0, inf)")
    p = 1.0 - delta

    if delta == 2.0:
        s_val = lambda x: np.log(np.asarray(x, dtype=float))
        s_inv = lambda s: np.exp(np.asarray(s, dtype=float))
        s_at = lambda x: math.log(x) if x > 0 else float("-inf")
    else:
        s_val = lambda x: (np.asarray(x, dtype=float) ** (p + 1)) / (p + 1)
        s_inv = lambda s: ((p + 1) * np.asarray(s, dtype=float)) ** (1.0 / (p + 1))
        def s_at(x):
            if x == 0:
                return 0.0 if p + 1 > 0 else float("-inf")
            if math.isinf(x):
                return float("inf") if p + 1 > 0 else 0.0
            return x ** (p + 1) / (p + 1)

    s_l = s_at(iv.l) if not math.isinf(iv.l) else float("-inf")
    s_r = s_at(iv.r)
    scale = ScaleFunction.from_callable(
        s_val, lambda x: np.asarray(x, dtype=float) ** p,
        inverse=s_inv, limits=(float(s_l), float(s_r)))

    q = delta - 1.0

    def m_cum(x):
        if q == -1.0:
            return math.log(x)
        return x ** (q + 1) / (q + 1)

    speed = SpeedMeasure.from_density(
        lambda x: np.asarray(x, dtype=float) ** q,
        cumulative=m_cum, atoms=atoms)
    ref = e if e is not None else (1.0 if math.isinf(iv.r) else _default_e(iv))
    return DiffusionSpec(iv, scale, speed, ref, family_tag=f"bessel({delta})")


FAMILIES = {
    "brownian": brownian,
    "brownian_drift": brownian_drift,
    "ou": ou,
    "bessel": bessel,
}


def make_family(name: str, *, bounds, includes, e=None, atoms=(), **params) -> DiffusionSpec:
    """Build a family spec from its name and parameters."""
    if name not in FAMILIES:
        raise InconsistentSpec(f"unknown family {name!r}; choose from {sorted(FAMILIES)}")
    fn = FAMILIES[name]
    if name == "brownian":
        return fn(bounds, includes, e, atoms)
    if name == "brownian_drift":
        return fn(params.get("mu", 1.0), bounds, includes, e, atoms)
    if name == "ou":
        return fn(params.get("theta", 1.0), bounds, includes, e, atoms)
    return fn(params.get("delta", 3.0), bounds, includes, e, atoms)

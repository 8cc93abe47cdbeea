"""Endpoint classification and the effective interval.

An endpoint is regular / exit / entrance / natural according to the
finiteness of the iterated integrals sigma and mu there; a regular endpoint
is absorbing when excluded from the state space and reflecting when
included.  The effective interval is the open interior plus the reflecting
endpoints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import InconsistentSpec
from .measures import (
    DiffusionSpec,
    Interval,
    scale_limit_certified,
    sigma_mu_at_boundary,
    speed_mass_near,
)

__all__ = [
    "BoundaryClass",
    "Role",
    "EndpointReport",
    "BoundaryReport",
    "ValidationReport",
    "classify_endpoint",
    "endpoint_role",
    "is_approachable",
    "effective_interval",
    "classify",
    "validate_spec",
]


class BoundaryClass(str, Enum):
    REGULAR = "regular"
    EXIT = "exit"
    ENTRANCE = "entrance"
    NATURAL = "natural"


class Role(str, Enum):
    ABSORBING = "absorbing"
    REFLECTING = "reflecting"
    NONE = "none"


@dataclass(frozen=True)
class EndpointReport:
    side: str
    sigma_value: float
    mu_value: float
    klass: BoundaryClass
    role: Role
    approachable: bool
    scale_value: float
    speed_finite_near: bool

    def to_dict(self) -> dict:
        return {
            "side": self.side,
            "sigma": _ext(self.sigma_value),
            "mu": _ext(self.mu_value),
            "class": self.klass.value,
            "role": self.role.value,
            "approachable": self.approachable,
            "scale_limit": _ext(self.scale_value),
            "speed_finite_near": self.speed_finite_near,
        }


@dataclass(frozen=True)
class BoundaryReport:
    left: EndpointReport
    right: EndpointReport
    effective_interval: Interval

    def endpoint(self, side: str) -> EndpointReport:
        return self.left if side == "l" else self.right

    def reflecting_count(self) -> int:
        return sum(1 for ep in (self.left, self.right) if ep.role is Role.REFLECTING)

    def to_dict(self) -> dict:
        return {
            "endpoints": [self.left.to_dict(), self.right.to_dict()],
            "effective_interval": {
                "l": _ext(self.effective_interval.l),
                "r": _ext(self.effective_interval.r),
                "includes_l": self.effective_interval.includes_l,
                "includes_r": self.effective_interval.includes_r,
            },
        }


def _ext(v: float):
    """Extended reals in JSON-safe form."""
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


@lru_cache(maxsize=512)
def _endpoint_report(spec: DiffusionSpec, side: str) -> EndpointReport:
    sig, mu_ = sigma_mu_at_boundary(spec, side)
    if sig.finite and mu_.finite:
        klass = BoundaryClass.REGULAR
    elif sig.finite:
        klass = BoundaryClass.EXIT
    elif mu_.finite:
        klass = BoundaryClass.ENTRANCE
    else:
        klass = BoundaryClass.NATURAL
    included = spec.interval.includes(side)
    if klass is BoundaryClass.REGULAR:
        role = Role.REFLECTING if included else Role.ABSORBING
    else:
        role = Role.NONE
    s_lim = scale_limit_certified(spec, side)
    m_near = speed_mass_near(spec, side)
    return EndpointReport(
        side=side,
        sigma_value=sig.extended,
        mu_value=mu_.extended,
        klass=klass,
        role=role,
        approachable=s_lim.finite,
        scale_value=s_lim.extended,
        speed_finite_near=m_near.finite,
    )


def classify_endpoint(spec: DiffusionSpec, side: str) -> BoundaryClass:
    """Feller class of an endpoint from the finiteness of sigma and mu."""
    return _endpoint_report(spec, side).klass


def endpoint_role(spec: DiffusionSpec, side: str) -> Role:
    """Absorbing when regular and excluded, reflecting when regular and
    included, none otherwise."""
    return _endpoint_report(spec, side).role


def is_approachable(spec: DiffusionSpec, side: str) -> bool:
    """True iff the scale limit at the side is finite."""
    return _endpoint_report(spec, side).approachable


def effective_interval(spec: DiffusionSpec) -> Interval:
    """The open interior plus every reflecting endpoint.

    Raises InconsistentSpec when an included non-reflecting endpoint fails
    the consequences it must satisfy (infinite scale limit, no atom) or an
    atom sits at an endpoint where the scale limit diverges.
    """
    left = _endpoint_report(spec, "l")
    right = _endpoint_report(spec, "r")
    for ep in (left, right):
        endpoint = spec.interval.endpoint(ep.side)
        atom = spec.speed.atom_at(endpoint) if math.isfinite(endpoint) else 0.0
        if atom > 0 and not ep.approachable:
            raise InconsistentSpec(
                f"endpoint {ep.side} carries an atom but its scale limit "
                "diverges (inadmissible scale/speed pair)")
        if spec.interval.includes(ep.side) and ep.role is not Role.REFLECTING:
            if ep.approachable:
                raise InconsistentSpec(
                    f"included endpoint {ep.side} is {ep.klass.value} with a "
                    "finite scale limit; it would be a non-polar point "
                    "outside the effective interval")
            if atom > 0:
                raise InconsistentSpec(
                    f"included non-reflecting endpoint {ep.side} must not "
                    "carry speed mass")
    return Interval(
        spec.interval.l,
        spec.interval.r,
        includes_l=left.role is Role.REFLECTING,
        includes_r=right.role is Role.REFLECTING,
    )


def classify(spec: DiffusionSpec) -> BoundaryReport:
    """Full per-endpoint report plus the effective interval."""
    return BoundaryReport(
        left=_endpoint_report(spec, "l"),
        right=_endpoint_report(spec, "r"),
        effective_interval=effective_interval(spec),
    )


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    failures: tuple[str, ...]
    messages: tuple[str, ...]

    @property
    def first_failure(self) -> Optional[str]:
        return self.failures[0] if self.failures else None


def validate_spec(spec: DiffusionSpec, *, n_probe: int = 257) -> ValidationReport:
    """Structural checks: scale monotone, speed fully supported, no mass at
    the reference point, and boundary atoms only where the scale stays
    finite."""
    failures: list[str] = []
    messages: list[str] = []

    def fail(name: str, msg: str) -> None:
        failures.append(name)
        messages.append(msg)

    iv = spec.interval
    lo = iv.l if math.isfinite(iv.l) else spec.e - 50.0
    hi = iv.r if math.isfinite(iv.r) else spec.e + 50.0
    probes = np.linspace(lo, hi, n_probe)
    probes = probes[(probes > iv.l) & (probes < iv.r)]

    s_vals = np.asarray(spec.s(probes), dtype=float)
    if not np.all(np.diff(s_vals) > 0):
        fail("scale-monotone", "scale function is not strictly increasing "
             "on a probe grid")

    dens = np.asarray(spec.speed.density(probes), dtype=float)
    if np.any(dens < 0) or np.any(~np.isfinite(dens) & (dens < 0)):
        fail("speed-nonnegative", "speed density takes negative values")
    if spec.speed.kind == "tabulated":
        if not np.all(np.diff(spec.speed.cdf_knots) > 0):
            fail("speed-support", "tabulated speed cumulative is not strictly "
                 "increasing (support has gaps)")
    elif np.any(dens == 0):
        fail("speed-support", "speed density vanishes on the probe grid "
             "(full topological support required)")

    if spec.speed.atom_at(spec.e) > 0:
        fail("reference-atom", "speed measure charges the reference point e")

    for side in ("l", "r"):
        endpoint = iv.endpoint(side)
        if not math.isfinite(endpoint):
            continue
        atom = spec.speed.atom_at(endpoint)
        if atom > 0:
            if not iv.includes(side):
                fail("atom-outside-state-space",
                     f"atom at excluded endpoint {side}")
            elif not scale_limit_certified(spec, side).finite:
                fail("scale-admissibility",
                     f"included endpoint {side} carries mass {atom} but the "
                     "scale limit there diverges")

    return ValidationReport(ok=not failures, failures=tuple(failures),
                            messages=tuple(messages))

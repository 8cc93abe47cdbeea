"""Shared test utilities: randomized spec generators and closed forms."""
from __future__ import annotations

import math

import numpy as np

from dharm.measures import DiffusionSpec, Interval, ScaleFunction, SpeedMeasure


def rng_from(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=np.uint64(seed)))


def random_tabulated_spec(rng: np.random.Generator, *, includes=None,
                          allow_atoms: bool = True) -> DiffusionSpec:
    """Piecewise-linear scale and speed on [0, 1] with optional atoms."""
    n = int(rng.integers(6, 14))
    x = np.sort(rng.uniform(0.05, 0.95, n - 2))
    x = np.concatenate(([0.0], x, [1.0]))
    x = np.unique(x)
    s = np.cumsum(rng.uniform(0.1, 2.0, x.size))
    cdf = np.cumsum(rng.uniform(0.1, 2.0, x.size))
    if includes is None:
        includes = (bool(rng.integers(0, 2)), bool(rng.integers(0, 2)))
    atoms = []
    if allow_atoms and rng.random() < 0.4:
        # one interior atom strictly between knots
        k = int(rng.integers(1, x.size - 1))
        pos = 0.5 * (x[k] + x[k + 1]) if k + 1 < x.size else 0.5 * (x[k - 1] + x[k])
        atoms.append((float(pos), float(rng.uniform(0.05, 0.6))))
    if allow_atoms and includes[0] and rng.random() < 0.3:
        atoms.append((0.0, float(rng.uniform(0.05, 0.6))))
    if allow_atoms and includes[1] and rng.random() < 0.3:
        atoms.append((1.0, float(rng.uniform(0.05, 0.6))))
    e = float(x[x.size // 2])
    atoms = [(p, w) for p, w in atoms if abs(p - e) > 1e-9]
    scale = ScaleFunction.from_table(x, s)
    speed = SpeedMeasure.from_table(x, cdf, atoms=atoms)
    return DiffusionSpec(Interval(0.0, 1.0, *includes), scale, speed, e)


def random_smooth_spec(rng: np.random.Generator, *, includes=(True, True),
                       atoms=()) -> DiffusionSpec:
    """Analytic scale and speed on [0, 1]: sinusoidally perturbed slopes
    with closed-form values and cumulatives."""
    a = float(rng.uniform(-0.7, 0.7))
    b = float(rng.uniform(2.0, 9.0))
    c = float(rng.uniform(-0.7, 0.7))
    d = float(rng.uniform(2.0, 9.0))
    phi = float(rng.uniform(0, 2 * math.pi))

    def s_val(x):
        xa = np.asarray(x, dtype=float)
        return xa + (a / b) * np.sin(b * xa)

    def s_den(x):
        return 1.0 + a * np.cos(b * np.asarray(x, dtype=float))

    def m_cum(x):
        return x + (c / d) * math.sin(d * x + phi) - (c / d) * math.sin(phi)

    def m_den(x):
        return 1.0 + c * np.cos(d * np.asarray(x, dtype=float) + phi)

    scale = ScaleFunction.from_callable(s_val, s_den)
    speed = SpeedMeasure.from_density(m_den, cumulative=m_cum, atoms=atoms)
    e = float(rng.uniform(0.3, 0.7))
    return DiffusionSpec(Interval(0.0, 1.0, *includes), scale, speed, e)


def power_law_spec(p: float, q: float) -> DiffusionSpec:
    """Scale density x^q and speed density x^p on (0, 1); the endpoint
    classes at zero follow from exponent arithmetic."""

    def s_val(x):
        xa = np.asarray(x, dtype=float)
        if q == -1.0:
            return np.log(xa)
        return xa ** (q + 1.0) / (q + 1.0)

    def m_cum(x):
        if p == -1.0:
            return math.log(x)
        return x ** (p + 1.0) / (p + 1.0)

    scale = ScaleFunction.from_callable(
        s_val, lambda x: np.asarray(x, dtype=float) ** q)
    speed = SpeedMeasure.from_density(
        lambda x: np.asarray(x, dtype=float) ** p, cumulative=m_cum)
    return DiffusionSpec(Interval(0.0, 1.0), scale, speed, 0.5)


def expected_class_at_zero(p: float, q: float) -> str:
    """Feller class of the origin for power-law densities, by exponent
    arithmetic on the two iterated integrals."""
    if p > -1.0:
        sigma_finite = q > -1.0
    elif p == -1.0:
        sigma_finite = q > -1.0
    else:
        sigma_finite = p + q > -2.0
    if q > -1.0:
        mu_finite = p > -1.0
    elif q == -1.0:
        mu_finite = p > -1.0
    else:
        mu_finite = p + q > -2.0
    if sigma_finite and mu_finite:
        return "regular"
    if sigma_finite:
        return "exit"
    if mu_finite:
        return "entrance"
    return "natural"


def brownian_u(alpha: float, e: float):
    """Closed forms for identity scale and Lebesgue speed."""
    k = math.sqrt(2.0 * alpha)

    def u(x):
        return np.cosh(k * (np.asarray(x, dtype=float) - e))

    def v(x):
        return k * np.sinh(k * (np.asarray(x, dtype=float) - e))

    return u, v

"""Independent verification layer: a tridiagonal boundary-value solver and
a Monte Carlo exit simulator on the speed-measure birth-death chain.

The chain lives on a natural-scale grid: jumps are scale-symmetric (a
martingale, so hitting probabilities are exact at any resolution) and
holding times are exponential with rates read off the per-node speed mass,
which makes the expected exit functional solve the same tridiagonal system
as the finite-difference oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded
from scipy.special import ndtri

from . import measures
from .boundary import BoundaryClass, BoundaryReport, Role, classify
from .errors import BiasUnbounded, CaseMismatch, DomainError, SingularMesh
from .grids import (DEFAULT_GRID_SETTINGS, GridSettings, _multiplicative_tail,
                    _truncation_walk)
from .measures import DiffusionSpec

__all__ = [
    "OracleEstimate",
    "ChainApproximation",
    "build_chain",
    "fd_solve_at_mesh",
    "fd_exit_functional",
    "mc_exit_functional",
    "hitting_probability",
]


@dataclass(frozen=True)
class OracleEstimate:
    """A value with quantified uncertainty from one of the two oracles."""

    value: float
    half_width: float
    method: str                      # "FD" or "MC"
    n_paths: Optional[int] = None
    mesh: Optional[int] = None
    confidence: Optional[float] = None
    bias_note: Optional[str] = None

    def brackets(self, target: float) -> bool:
        return abs(target - self.value) <= self.half_width


@dataclass
class ChainApproximation:
    """Birth-death chain on a natural-scale grid.

    Interior nodes jump to each neighbour with scale-martingale weights and
    hold for an exponential time whose rate comes from the dual-cell speed
    mass; endpoint behaviour is absorb (with or without payoff) or reflect.
    """

    x: np.ndarray
    s: np.ndarray
    mass: np.ndarray
    p_up: np.ndarray
    rate: np.ndarray
    target_index: int
    absorb_indices: tuple[int, ...]
    reflect_indices: tuple[int, ...]
    start_index: int

    @property
    def n(self) -> int:
        return self.x.size

    def martingale_defect(self) -> float:
        """Max |expected scale displacement| over interior nodes (zero by
        construction up to roundoff)."""
        h_up = self.s[2:] - self.s[1:-1]
        h_dn = self.s[1:-1] - self.s[:-2]
        p = self.p_up[1:-1]
        return float(np.max(np.abs(p * h_up - (1 - p) * h_dn)))


def _far_mode(report: BoundaryReport, side: str, alpha: float,
              force_reflect: bool = False) -> str:
    if force_reflect:
        return "reflect"
    ep = report.endpoint(side)
    if ep.klass is BoundaryClass.ENTRANCE:
        return "reflect"
    return "absorb"


def _side_wall(spec: DiffusionSpec, report: BoundaryReport, side: str,
               alpha: float, settings: GridSettings,
               push: float = 0.0):
    """(wall, knee) scale coordinates for the far side of a chain.

    A knee different from the wall signals that the span between them must
    be covered by geometrically growing cells rather than uniform ones.
    """
    ep = report.endpoint(side)
    if ep.role in (Role.REFLECTING, Role.ABSORBING):
        return ep.scale_value, ep.scale_value
    if ep.approachable:
        # finite scale limit but unreachable endpoint: stop a sliver short
        gap = abs(ep.scale_value) * (1e-9 * 0.5 ** push) + 1e-300
        wall = ep.scale_value - math.copysign(gap, ep.scale_value)
        return wall, wall
    target = settings.sigma_budget * (1.0 + 0.5 * push) if alpha > 0 else \
        settings.zero_alpha_span * (1.0 + 0.5 * push)
    walked = GridSettings(n_core=settings.n_core, sigma_budget=target,
                          zero_alpha_span=target)
    xs, knee_x = _truncation_walk(spec, side, alpha, walked)
    return float(spec.s(xs[-1])), float(spec.s(knee_x))


def build_chain(spec: DiffusionSpec, alpha: float, target_side: str, x: float,
                n_cells: int = 128, settings: GridSettings = DEFAULT_GRID_SETTINGS,
                report: Optional[BoundaryReport] = None,
                push: float = 0.0, insert_x: bool = True,
                force_far_reflect: bool = False) -> ChainApproximation:
    """Chain whose exit functional approximates the diffusion's.

    With insert_x the start point becomes a grid node exactly; otherwise the
    nodes stay uniform in scale and the caller splits the start between the
    two bracketing nodes with martingale weights.  force_far_reflect models
    certain return from the truncation wall (the undiscounted recurrent
    case, where the far scale limit is infinite).
    """
    rep = report if report is not None else classify(spec)
    if target_side not in ("l", "r"):
        raise DomainError("target side must be 'l' or 'r'")
    far_side = "r" if target_side == "l" else "l"
    if not rep.endpoint(target_side).approachable:
        raise DomainError(f"target side {target_side} has an infinite scale "
                          "limit; no exit functional is attached to it")

    s_target = rep.endpoint(target_side).scale_value
    s_far, s_knee = _side_wall(spec, rep, far_side, alpha, settings, push)
    s_lo, s_hi = (s_far, s_target) if target_side == "r" else (s_target, s_far)
    sx = float(spec.s(x))
    if not (s_lo <= sx <= s_hi):
        raise DomainError("start point outside the chain span")

    if s_knee == s_far:
        s_nodes = np.linspace(s_lo, s_hi, n_cells + 1)
    else:
        # uniform between the target and the knee, geometric out to the wall
        core = np.linspace(s_target, s_knee, n_cells + 1)
        tail = _multiplicative_tail(s_knee, s_far,
                                    min_count=max(8, n_cells // 8))
        s_nodes = np.unique(np.concatenate([core, tail]))
    extra = [sx] if insert_x else []
    for p, _ in spec.speed.atoms:
        sp = float(spec.s(p))
        if s_lo < sp < s_hi:
            extra.append(sp)
    s_nodes = np.unique(np.concatenate([s_nodes, np.asarray(extra)])) \
        if extra else s_nodes
    lo_b = spec.interval.l if math.isfinite(spec.interval.l) else -math.inf
    hi_b = spec.interval.r if math.isfinite(spec.interval.r) else math.inf
    x_nodes = np.asarray(spec.scale.inverse(s_nodes, lo_b, hi_b), dtype=float)
    # snap the start point and atoms exactly
    if insert_x:
        j = int(np.argmin(np.abs(s_nodes - sx)))
        x_nodes[j] = x
    for p, _ in spec.speed.atoms:
        sp = float(spec.s(p))
        if s_lo < sp < s_hi:
            k = int(np.argmin(np.abs(s_nodes - sp)))
            x_nodes[k] = p
    s_nodes = np.asarray(spec.s(x_nodes), dtype=float)
    if insert_x:
        s_nodes[j] = sx

    n = s_nodes.size
    mass = np.zeros(n)
    if alpha > 0:
        mids_s = 0.5 * (s_nodes[1:] + s_nodes[:-1])
        mids_x = np.asarray(spec.scale.inverse(mids_s, lo_b, hi_b), dtype=float)
        edges = np.concatenate(([x_nodes[0]], mids_x, [x_nodes[-1]]))
        for i in range(n):
            mass[i] = spec.speed.mass(edges[i], edges[i + 1])
            if i == 0:
                mass[i] += spec.speed.atom_at(x_nodes[0])
        interior_zero = np.where(mass[1:-1] <= 0)[0]
        if interior_zero.size:
            raise SingularMesh(
                f"zero speed mass in chain cell {interior_zero[0] + 1}")

    h = np.diff(s_nodes)
    p_up = np.zeros(n)
    rate = np.zeros(n)
    p_up[1:-1] = h[:-1] / (h[:-1] + h[1:])
    if alpha > 0:
        lam_up = 1.0 / (2.0 * mass[1:-1] * h[1:])
        lam_dn = 1.0 / (2.0 * mass[1:-1] * h[:-1])
        rate[1:-1] = lam_up + lam_dn

    target_index = 0 if target_side == "l" else n - 1
    far_index = n - 1 - target_index
    far_mode = _far_mode(rep, far_side, alpha, force_far_reflect)
    absorb = [target_index]
    reflect: list[int] = []
    if far_mode == "reflect":
        reflect.append(far_index)
        p_up[far_index] = 1.0 if far_index == 0 else 0.0
        if alpha > 0:
            half = mass[far_index]
            gap = h[0] if far_index == 0 else h[-1]
            rate[far_index] = 1.0 / (2.0 * max(half, 1e-300) * gap)
    else:
        absorb.append(far_index)

    start = int(np.argmin(np.abs(s_nodes - sx)))
    return ChainApproximation(x=x_nodes, s=s_nodes, mass=mass, p_up=p_up,
                              rate=rate, target_index=target_index,
                              absorb_indices=tuple(absorb),
                              reflect_indices=tuple(reflect),
                              start_index=start)


# ---------------------------------------------------------------------------
# the deterministic oracle: tridiagonal solve on the chain

def _chain_solve(chain: ChainApproximation, alpha: float) -> np.ndarray:
    """Exact expected exit functional on the chain: the tridiagonal system
    the half-generator discretization satisfies."""
    n = chain.n
    s = chain.s
    h = np.diff(s)
    lower = np.zeros(n)
    diag = np.zeros(n)
    upper = np.zeros(n)
    rhs = np.zeros(n)

    i = np.arange(1, n - 1)
    a = 0.5 / h[:-1]
    c = 0.5 / h[1:]
    lower[i - 1] = a
    upper[i + 1] = c
    diag[i] = -(a + c) - alpha * chain.mass[1:-1]
    # boundary rows
    for idx in chain.absorb_indices:
        diag[idx] = 1.0
        lower[idx - 1] = 0.0 if idx >= 1 else 0.0
        if idx + 1 < n:
            upper[idx + 1] = 0.0
        rhs[idx] = 1.0 if idx == chain.target_index else 0.0
    for idx in chain.reflect_indices:
        # half-cell balance: flux toward the interior equals the local decay
        if idx == 0:
            diag[0] = -0.5 / h[0] - alpha * chain.mass[0]
            upper[1] = 0.5 / h[0]
            rhs[0] = 0.0
        else:
            diag[n - 1] = -0.5 / h[-1] - alpha * chain.mass[-1]
            lower[n - 2] = 0.5 / h[-1]
            rhs[n - 1] = 0.0
    ab = np.zeros((3, n))
    ab[0, 1:] = upper[1:]
    ab[1, :] = diag
    ab[2, :-1] = lower[:-1]
    # rows adjacent to absorbing nodes keep their couplings; move the known
    # boundary values to the right-hand side instead of zeroing
    for idx in chain.absorb_indices:
        if 0 < idx < n - 1:
            continue
        neighbor = idx + 1 if idx == 0 else idx - 1
        coeff = ab[2, idx] if idx == 0 else ab[0, idx]
        rhs[neighbor] -= coeff * rhs[idx]
        if idx == 0:
            ab[2, 0] = 0.0
        else:
            ab[0, n - 1] = 0.0
    phi = solve_banded((1, 1), ab, rhs)
    return phi


def fd_solve_at_mesh(spec: DiffusionSpec, alpha: float, target_side: str,
                     x: float, n_cells: int,
                     settings: GridSettings = DEFAULT_GRID_SETTINGS,
                     report: Optional[BoundaryReport] = None,
                     push: float = 0.0) -> float:
    """Raw tridiagonal solve at one mesh; used for convergence-order tests."""
    chain = build_chain(spec, alpha, target_side, x, n_cells, settings,
                        report, push)
    phi = _chain_solve(chain, alpha)
    return float(phi[chain.start_index])


def fd_exit_functional(spec: DiffusionSpec, alpha: float, target_side: str,
                       x: float, n_cells: int = 1024,
                       settings: GridSettings = DEFAULT_GRID_SETTINGS,
                       push_tol: float = 1e-8) -> OracleEstimate:
    """Boundary-value solve of the exit functional with mesh-refinement
    error control (two meshes, extrapolated value) and a pushed truncation
    wall whenever the far side is not an exact endpoint."""
    rep = classify(spec)
    v1 = fd_solve_at_mesh(spec, alpha, target_side, x, n_cells, settings, rep)
    v2 = fd_solve_at_mesh(spec, alpha, target_side, x, 2 * n_cells, settings, rep)
    value = (4.0 * v2 - v1) / 3.0
    half = abs(v2 - v1) / 3.0 + 1e-14
    note = None
    far_side = "r" if target_side == "l" else "l"
    if rep.endpoint(far_side).role is Role.NONE:
        v3 = fd_solve_at_mesh(spec, alpha, target_side, x, 2 * n_cells,
                              settings, rep, push=1.0)
        shift = abs(v3 - v2)
        half += shift
        if shift > push_tol * max(1.0, abs(value)):
            v4 = fd_solve_at_mesh(spec, alpha, target_side, x, 2 * n_cells,
                                  settings, rep, push=2.0)
            half += abs(v4 - v3)
            value = (4.0 * v4 - v1) / 3.0
            note = f"truncation wall pushed twice (last shift {abs(v4 - v3):.2e})"
    return OracleEstimate(value=value, half_width=half, method="FD",
                          mesh=2 * n_cells, bias_note=note)


# ---------------------------------------------------------------------------
# the stochastic oracle

_BATCH = 1 << 13
_BLOCK = 256


def _z_value(confidence: float) -> float:
    return float(ndtri(0.5 + 0.5 * confidence))


class _PayoffAccumulator:
    def __init__(self):
        self.total = 0.0
        self.total_sq = 0.0
        self.count = 0

    def add(self, pay: np.ndarray) -> None:
        self.total += float(np.sum(pay))
        self.total_sq += float(np.sum(pay * pay))
        self.count += int(pay.size)

    def add_zeros(self, k: int) -> None:
        self.count += int(k)

    def summary(self, confidence: float):
        mean = self.total / self.count
        var = max(self.total_sq / self.count - mean * mean, 0.0)
        half = _z_value(confidence) * math.sqrt(var / self.count)
        return mean, half


def _block_walk(chain: ChainApproximation, alpha: float, n_paths: int,
                seed: int, start_lo: int, q_lo: float, t_max: float,
                acc: _PayoffAccumulator) -> int:
    """Vectorized simple-walk simulation on a uniform chain.

    All interior jump probabilities are one half, so whole blocks of steps
    reduce to a cumulative sum of signs; reflection at a truncation wall is
    an absolute-value fold of the free walk.  Returns the number of paths
    retired by the step cap.
    """
    n = chain.n
    target = chain.target_index
    reflect = chain.reflect_indices[0] if chain.reflect_indices else None
    absorb = [i for i in chain.absorb_indices]
    inv_rate = np.zeros(n)
    pos_rate = chain.rate > 0
    inv_rate[pos_rate] = 1.0 / chain.rate[pos_rate]
    step_cap = 128 * n * n + 200_000
    capped = 0

    batch_index = 0
    remaining = n_paths
    while remaining > 0:
        size = min(_BATCH, remaining)
        remaining -= size
        rng = np.random.Generator(np.random.Philox(
            key=np.asarray([seed & 0xFFFFFFFFFFFFFFFF, batch_index],
                           dtype=np.uint64)))
        batch_index += 1
        pos = np.full(size, start_lo, dtype=np.int32)
        pos += (rng.random(size) >= q_lo).astype(np.int32)
        tau = np.zeros(size) if alpha > 0 else None
        # start nodes may already sit on an absorbing boundary
        on_boundary = np.isin(pos, absorb)
        if np.any(on_boundary):
            acc.add((pos[on_boundary] == target).astype(float))
            pos = pos[~on_boundary]
            if alpha > 0:
                tau = tau[~on_boundary]
        steps = 0
        while pos.size:
            m = pos.size
            signs = rng.integers(0, 2, size=(m, _BLOCK), dtype=np.int8)
            signs = (2 * signs - 1).astype(np.int32)
            walk = np.cumsum(signs, axis=1)
            walk += pos[:, None]
            if reflect is not None:
                if reflect == 0:
                    np.abs(walk, out=walk)
                else:
                    walk = reflect - np.abs(walk - reflect)
            if alpha > 0:
                prev = np.empty_like(walk)
                prev[:, 0] = pos
                prev[:, 1:] = walk[:, :-1]
                # entries past a path's first boundary hit are garbage but
                # harmless: they are never read back, only gathered safely
                np.clip(prev, 0, n - 1, out=prev)
                dt = rng.standard_exponential((m, _BLOCK)) * inv_rate[prev]
                cum_t = np.cumsum(dt, axis=1)

            hit = np.zeros(walk.shape, dtype=bool)
            for b in absorb:
                hit |= walk == b
            any_hit = hit.any(axis=1)
            first = np.argmax(hit, axis=1)

            if np.any(any_hit):
                rows = np.nonzero(any_hit)[0]
                cols = first[rows]
                landed = walk[rows, cols]
                is_target = landed == target
                if alpha > 0:
                    fin_tau = tau[rows] + cum_t[rows, cols]
                    pay = np.where(is_target & (fin_tau <= t_max),
                                   np.exp(-alpha * np.minimum(fin_tau, t_max)),
                                   0.0)
                else:
                    pay = is_target.astype(float)
                acc.add(pay)
            live = ~any_hit
            pos = walk[live, -1].astype(np.int32)
            if alpha > 0:
                tau = tau[live] + cum_t[live, -1]
                timed_out = tau > t_max
                if np.any(timed_out):
                    acc.add_zeros(int(np.sum(timed_out)))
                    pos = pos[~timed_out]
                    tau = tau[~timed_out]
            steps += _BLOCK
            if steps >= step_cap and pos.size:
                capped += int(pos.size)
                acc.add_zeros(int(pos.size))
                break
    return capped


def _stepwise_walk(chain: ChainApproximation, alpha: float, n_paths: int,
                   seed: int, t_max: float, acc: _PayoffAccumulator) -> int:
    """General per-step simulation (non-uniform probabilities, atoms)."""
    n = chain.n
    up_next = np.arange(n, dtype=np.int64) + 1
    dn_next = np.arange(n, dtype=np.int64) - 1
    for idx in chain.reflect_indices:
        up_next[idx] = idx + 1 if idx == 0 else idx - 1
        dn_next[idx] = up_next[idx]
    is_absorb = np.zeros(n, dtype=bool)
    is_absorb[list(chain.absorb_indices)] = True
    inv_rate = np.zeros(n)
    pos_rate = chain.rate > 0
    inv_rate[pos_rate] = 1.0 / chain.rate[pos_rate]
    step_cap = 128 * n * n + 200_000
    capped = 0

    batch_index = 0
    remaining = n_paths
    while remaining > 0:
        size = min(_BATCH, remaining)
        remaining -= size
        rng = np.random.Generator(np.random.Philox(
            key=np.asarray([seed & 0xFFFFFFFFFFFFFFFF, batch_index],
                           dtype=np.uint64)))
        batch_index += 1
        idx = np.full(size, chain.start_index, dtype=np.int64)
        tau = np.zeros(size) if alpha > 0 else None
        steps = 0
        while idx.size:
            steps += 1
            if alpha > 0:
                tau = tau + rng.standard_exponential(idx.size) * inv_rate[idx]
            up = rng.random(idx.size) < chain.p_up[idx]
            idx = np.where(up, up_next[idx], dn_next[idx])
            finished = is_absorb[idx]
            if alpha > 0:
                finished = finished | (tau > t_max)
            if np.any(finished):
                fin_idx = idx[finished]
                hit = fin_idx == chain.target_index
                if alpha > 0:
                    fin_tau = tau[finished]
                    pay = np.where(hit & (fin_tau <= t_max),
                                   np.exp(-alpha * np.minimum(fin_tau, t_max)),
                                   0.0)
                else:
                    pay = hit.astype(float)
                acc.add(pay)
                keep = ~finished
                idx = idx[keep]
                if alpha > 0:
                    tau = tau[keep]
            if steps >= step_cap and idx.size:
                capped += int(idx.size)
                acc.add_zeros(int(idx.size))
                break
    return capped


def mc_exit_functional(spec: DiffusionSpec, alpha: float, target_side: str,
                       x: float, n_paths: int = 100_000, seed: int = 0,
                       n_cells: int = 128, confidence: float = 0.95,
                       settings: GridSettings = DEFAULT_GRID_SETTINGS) -> OracleEstimate:
    """Monte Carlo estimate of the discounted exit functional.

    Paths follow the chain's embedded walk; for positive discount each step
    accumulates an exponential holding time.  Undiscounted hitting on a side
    with infinite opposite scale limit would be biased by any time or step
    cap (the true probability is one), so that case switches to the exact
    linear solve on the chain, reported with method "FD".
    """
    if n_paths < 1000:
        raise DomainError("need at least 1000 paths for a meaningful interval")
    rep = classify(spec)
    if not rep.endpoint(target_side).approachable:
        raise DomainError("target side has infinite scale limit")
    s_target = rep.endpoint(target_side).scale_value
    sx = float(spec.s(x))
    if sx == s_target:
        return OracleEstimate(value=1.0, half_width=0.0, method="MC",
                              n_paths=n_paths, confidence=confidence,
                              bias_note="start at target: exit time zero")
    far_side = "r" if target_side == "l" else "l"
    if alpha == 0 and not rep.endpoint(far_side).approachable:
        # recurrent toward the target: time-capped sampling cannot be made
        # unbiased, use the exact chain solve with a reflecting wall instead
        chain = build_chain(spec, 0.0, target_side, x, n_cells, settings, rep,
                            force_far_reflect=True)
        phi = _chain_solve(chain, 0.0)
        return OracleEstimate(value=float(phi[chain.start_index]),
                              half_width=1e-12, method="FD",
                              mesh=n_cells, confidence=confidence,
                              bias_note="recurrent case: exact chain solve")

    t_max = -math.log(1e-6) / alpha if alpha > 0 else math.inf
    acc = _PayoffAccumulator()
    chain_uniform = build_chain(spec, alpha, target_side, x, n_cells,
                                settings, rep, insert_x=False)
    uniform_ok = chain_uniform.n == n_cells + 1
    if uniform_ok:
        # martingale split of the start point between its bracketing nodes
        # keeps every jump probability at one half
        s_nodes = chain_uniform.s
        j_hi = int(np.searchsorted(s_nodes, sx))
        j_lo = max(j_hi - 1, 0)
        if j_hi >= s_nodes.size:
            j_hi = s_nodes.size - 1
        if s_nodes[j_lo] == sx:
            j_hi = j_lo
        q_lo = 1.0 if j_hi == j_lo else \
            (s_nodes[j_hi] - sx) / (s_nodes[j_hi] - s_nodes[j_lo])
        capped = _block_walk(chain_uniform, alpha, n_paths, seed, j_lo, q_lo,
                             t_max, acc)
    else:
        chain = build_chain(spec, alpha, target_side, x, n_cells, settings, rep)
        capped = _stepwise_walk(chain, alpha, n_paths, seed, t_max, acc)

    mean, half = acc.summary(confidence)
    notes = []
    if alpha > 0:
        notes.append(f"time-cap bias <= exp(-alpha*T) = {math.exp(-alpha * t_max):.1e}")
    if capped:
        notes.append(f"{capped} paths hit the step cap (counted as zero)")
    return OracleEstimate(value=mean, half_width=half, method="MC",
                          n_paths=n_paths, confidence=confidence,
                          bias_note="; ".join(notes) if notes else None)


# ---------------------------------------------------------------------------
# closed-form hitting probabilities

def hitting_probability(spec: DiffusionSpec, x: float, side: str) -> float:
    """First-hitting probability of an effective-interval endpoint, in the
    cases where the scale ratio (or recurrence) decides it."""
    rep = classify(spec)
    ie = rep.effective_interval
    if side not in ("l", "r"):
        raise DomainError("side must be 'l' or 'r'")
    refl_l = ie.includes_l
    refl_r = ie.includes_r
    s_x = float(spec.s(x))
    s_l = rep.endpoint("l").scale_value
    s_r = rep.endpoint("r").scale_value
    if refl_l and refl_r:
        ratio = (s_r - s_x) / (s_r - s_l)
        return ratio if side == "l" else 1.0 - ratio
    if refl_l and side == "l":
        if math.isinf(s_r):
            return 1.0
        return (s_r - s_x) / (s_r - s_l)
    if refl_r and side == "r":
        if math.isinf(s_l):
            return 1.0
        return (s_x - s_l) / (s_r - s_l)
    raise CaseMismatch(
        f"hitting law for side {side} not covered: effective interval {ie}")

"""Functions sampled on a grid, interpolated cubically in natural scale.

A GridFunction stores node values together with the right-continuous
version of the derivative with respect to the scale function; derivative
jumps at speed-measure atoms are kept explicitly so each cell can be
interpolated with the correct one-sided derivatives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError

__all__ = ["GridFunction"]


def _h_basis(t: np.ndarray):
    t2 = t * t
    t3 = t2 * t
    return (2 * t3 - 3 * t2 + 1, t3 - 2 * t2 + t, -2 * t3 + 3 * t2, t3 - t2)


def _h_basis_d(t: np.ndarray):
    t2 = t * t
    return (6 * t2 - 6 * t, 3 * t2 - 4 * t + 1, -6 * t2 + 6 * t, 3 * t2 - 2 * t)


@dataclass
class GridFunction:
    """A function on a strictly increasing grid with its scale derivative.

    ``ds_derivative`` holds the right-continuous derivative version;
    ``ds_jumps[i]`` is its jump at node i (nonzero only at atoms), so the
    left limit there is ``ds_derivative[i] - ds_jumps[i]``.
    """

    x: np.ndarray
    s: np.ndarray
    values: np.ndarray
    ds_derivative: np.ndarray
    ds_jumps: Optional[np.ndarray] = None
    scale: Optional[Callable] = None
    boundary_values: dict = field(default_factory=dict)
    boundary_ds: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.s = np.asarray(self.s, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.ds_derivative = np.asarray(self.ds_derivative, dtype=float)
        if self.ds_jumps is None:
            self.ds_jumps = np.zeros_like(self.values)
        else:
            self.ds_jumps = np.asarray(self.ds_jumps, dtype=float)
        n = self.x.size
        if not (self.s.size == self.values.size == self.ds_derivative.size == n):
            raise DomainError("grid columns must have matching lengths")
        for arr in (self.x, self.s, self.values, self.ds_derivative, self.ds_jumps):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.x.size

    def _query_s(self, xq):
        if self.scale is not None:
            return np.asarray(self.scale(xq), dtype=float)
        return np.interp(xq, self.x, self.s)

    def _cells(self, sq: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(self.s, sq, side="right") - 1
        return np.clip(idx, 0, self.n - 2)

    def __call__(self, xq):
        scalar = np.ndim(xq) == 0
        sq = np.atleast_1d(self._query_s(xq))
        ci = self._cells(sq)
        h = self.s[ci + 1] - self.s[ci]
        t = (sq - self.s[ci]) / h
        d0 = self.ds_derivative[ci]
        d1 = self.ds_derivative[ci + 1] - self.ds_jumps[ci + 1]
        h00, h10, h01, h11 = _h_basis(t)
        out = (h00 * self.values[ci] + h10 * h * d0
               + h01 * self.values[ci + 1] + h11 * h * d1)
        return float(out[0]) if scalar else out

    def derivative(self, xq):
        """Derivative with respect to the scale coordinate (right-continuous
        at nodes)."""
        scalar = np.ndim(xq) == 0
        sq = np.atleast_1d(self._query_s(xq))
        ci = self._cells(sq)
        h = self.s[ci + 1] - self.s[ci]
        t = (sq - self.s[ci]) / h
        d0 = self.ds_derivative[ci]
        d1 = self.ds_derivative[ci + 1] - self.ds_jumps[ci + 1]
        g00, g10, g01, g11 = _h_basis_d(t)
        out = (g00 * self.values[ci] / h + g10 * d0
               + g01 * self.values[ci + 1] / h + g11 * d1)
        # exactly at a node, report the stored right-continuous version
        at_node = t == 0.0
        if np.any(at_node):
            out = np.where(at_node, self.ds_derivative[ci], out)
        return float(out[0]) if scalar else out

    def node_index(self, x: float, *, tol: float = 1e-9) -> int:
        """Index of the grid node at x; raises if x is not a node."""
        i = int(np.searchsorted(self.x, x))
        for j in (i - 1, i, i + 1):
            if 0 <= j < self.n and abs(self.x[j] - x) <= tol * (1 + abs(x)):
                return j
        raise DomainError(f"{x} is not a grid node")

    def boundary_value(self, side: str) -> Optional[float]:
        return self.boundary_values.get(side)

    def boundary_derivative(self, side: str) -> Optional[float]:
        return self.boundary_ds.get(side)

    def with_columns(self, values, ds_derivative, ds_jumps=None,
                     boundary_values=None, boundary_ds=None) -> "GridFunction":
        return GridFunction(
            x=self.x, s=self.s, values=np.asarray(values, dtype=float),
            ds_derivative=np.asarray(ds_derivative, dtype=float),
            ds_jumps=None if ds_jumps is None else np.asarray(ds_jumps, dtype=float),
            scale=self.scale,
            boundary_values=dict(boundary_values or {}),
            boundary_ds=dict(boundary_ds or {}),
        )

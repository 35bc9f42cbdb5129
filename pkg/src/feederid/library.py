"""Conductor libraries and the global impedance envelope derived from them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Representative LV cable types, (r, x) in ohm/km. The set is shaped like the
# line codes of common European LV test feeders.
LV_CABLE_TYPES = {
    "4c_35": (0.089, 0.0675),
    "4c_185": (0.166, 0.068),
    "4c_100": (0.274, 0.073),
    "4c_95_sac": (0.322, 0.074),
    "4c_70": (0.446, 0.071),
    "4c_60": (0.469, 0.075),
    "35_sac": (0.868, 0.092),
    "2c_16": (1.150, 0.088),
    "2c_22": (1.257, 0.085),
}

# five well-separated types used by the synthetic benchmarks
DEFAULT_TYPES = ("4c_185", "4c_100", "4c_70", "35_sac", "2c_22")

# envelope lines in the r-x plane, ohm/km (slopes are dimensionless)
ENVELOPE_LINES = {"m_hi": 0.030, "b_hi": 0.068, "m_lo": 0.017, "b_lo": 0.061}


def ohm_per_km_to_pu_per_m(z_base: float) -> float:
    """Factor turning ohm/km into per-unit per meter."""
    return 1.0 / (1000.0 * z_base)


@dataclass(frozen=True)
class LibraryBounds:
    """Per-unit-length box and r-x lines bounding every library point.

    All values share the units of the library (slopes are dimensionless).
    """

    r_lo: float
    r_hi: float
    x_lo: float
    x_hi: float
    m_hi: float
    b_hi: float
    m_lo: float
    b_lo: float

    def __post_init__(self):
        if not (self.r_lo < self.r_hi and self.x_lo < self.x_hi):
            raise ValueError("library bounds must satisfy lo < hi")
        for r in (self.r_lo, self.r_hi):
            if self.m_hi * r + self.b_hi < self.m_lo * r + self.b_lo:
                raise ValueError("upper r-x line falls below the lower one")

    def contains(self, points, rtol: float = 1e-12) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        r, x = p[:, 0], p[:, 1]
        tol = rtol * np.maximum(np.abs(r) + np.abs(x), 1e-300)
        return (
            (r >= self.r_lo - tol) & (r <= self.r_hi + tol)
            & (x >= self.x_lo - tol) & (x <= self.x_hi + tol)
            & (x <= self.m_hi * r + self.b_hi + tol)
            & (x >= self.m_lo * r + self.b_lo - tol)
        )

    def scaled(self, factor: float) -> "LibraryBounds":
        """Same envelope expressed in units multiplied by ``factor``."""
        f = factor
        return LibraryBounds(
            self.r_lo * f, self.r_hi * f, self.x_lo * f, self.x_hi * f,
            self.m_hi, self.b_hi * f, self.m_lo, self.b_lo * f,
        )

    @classmethod
    def from_points(cls, points, hi_factor=1.10, lo_factor=0.90, **lines) -> "LibraryBounds":
        """Box from the extreme library values widened by the given factors.

        ``lines`` overrides any of ``m_hi, b_hi, m_lo, b_lo`` (defaults from
        :data:`ENVELOPE_LINES`, valid for ohm/km libraries).
        """
        p = np.asarray(points, dtype=float)
        kw = {**ENVELOPE_LINES, **lines}
        return cls(
            r_lo=lo_factor * p[:, 0].min(), r_hi=hi_factor * p[:, 0].max(),
            x_lo=lo_factor * p[:, 1].min(), x_hi=hi_factor * p[:, 1].max(),
            **kw,
        )


class CableLibrary:
    """Per-edge candidate (r, x) per unit length plus a global envelope.

    Parameters
    ----------
    per_edge : list of array-like, one ``(k_e, 2)`` array per edge
    bounds : LibraryBounds
        Must contain every library point.
    names : list of list of str, optional
    eps : float
        Minimum relative separation between points of the same edge list.
    """

    def __init__(self, per_edge, bounds: LibraryBounds, names=None, eps: float = 1e-3):
        self.per_edge = [np.atleast_2d(np.asarray(p, dtype=float)) for p in per_edge]
        self.bounds = bounds
        self.names = names
        for e, pts in enumerate(self.per_edge):
            if pts.size == 0:
                raise ValueError(f"edge {e} has an empty library")
            c = pts[:, 0] + 1j * pts[:, 1]
            for i in range(len(c)):
                for j in range(i + 1, len(c)):
                    sep = abs(c[i] - c[j]) / max(abs(c[i]), abs(c[j]))
                    if sep < eps:
                        raise ValueError(f"edge {e}: library points {i} and {j} are not distinct")
            if not np.all(bounds.contains(pts)):
                raise ValueError(f"edge {e}: library point outside the bounding envelope")

    @property
    def n_edges(self) -> int:
        return len(self.per_edge)

    @classmethod
    def uniform(cls, points, n_edges: int, bounds: LibraryBounds | None = None, names=None, **kw):
        """Same candidate list on every edge."""
        pts = np.asarray(points, dtype=float)
        if bounds is None:
            bounds = LibraryBounds.from_points(pts)
        nm = None if names is None else [list(names)] * n_edges
        return cls([pts] * n_edges, bounds, names=nm, **kw)

    def padded(self) -> np.ndarray:
        """``E x k_max`` complex matrix; missing slots hold ``nan``."""
        k = max(len(p) for p in self.per_edge)
        out = np.full((self.n_edges, k), np.nan + 0j)
        for e, p in enumerate(self.per_edge):
            out[e, : len(p)] = p[:, 0] + 1j * p[:, 1]
        return out

    def assignment(self, choice, lengths) -> np.ndarray:
        """Impedance vector ``[r, x]`` for one library index per edge."""
        lengths = np.asarray(lengths, dtype=float)
        pts = np.array([self.per_edge[e][int(k)] for e, k in enumerate(choice)])
        return np.concatenate([lengths * pts[:, 0], lengths * pts[:, 1]])


def default_library(n_edges: int, z_base: float, types=DEFAULT_TYPES) -> CableLibrary:
    """Library of :data:`DEFAULT_TYPES` in per-unit per meter, with the default envelope."""
    ohm = np.array([LV_CABLE_TYPES[t] for t in types])
    bounds = LibraryBounds.from_points(ohm).scaled(ohm_per_km_to_pu_per_m(z_base))
    pts = ohm * ohm_per_km_to_pu_per_m(z_base)
    return CableLibrary.uniform(pts, n_edges, bounds, names=list(types))

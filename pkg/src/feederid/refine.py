"""Pull sampled candidates toward the conductor library.

The objective per candidate is the summed distance of each edge impedance
to its nearest length-scaled library point, plus an optional quadratic
penalty on constraint violation::

    O(z) = sum_e min_c |z_e - l_e c| + rho/2 * ||[M z - d]_+||^2

Descent uses a fixed step ``lam``. The library part of each step is capped
at the remaining distance to the nearest point (the gradient of the
Moreau envelope of ``|.|``), so candidates land on library points instead
of chattering around them.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .library import CableLibrary
from .polytope import HalfSpaceSystem

log = logging.getLogger(__name__)

GRAD_ZERO = 1e-14


@dataclass
class RefinementConfig:
    lam: float = 0.01
    rho: float = 0.0
    max_iters: int = 5000
    stop_tol: float | None = None  # default 1e-8 * lam
    patience: int = 200
    chunk: int = 4096

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("learning rate must be positive")
        if self.rho < 0:
            raise ValueError("penalty coefficient must be non-negative")

    @property
    def tol(self) -> float:
        return 1e-8 * self.lam if self.stop_tol is None else self.stop_tol


def _offsets(z, lib: CableLibrary, lengths):
    """Complex offset of each edge to its nearest scaled library point."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    E = lib.n_edges
    if z.shape[1] != 2 * E or len(lengths) != E:
        raise DimensionMismatch("impedance width, library and lengths disagree")
    zc = z[:, :E] + 1j * z[:, E:]
    targets = np.asarray(lengths, dtype=float)[:, None] * lib.padded()  # E x k
    dist = np.abs(zc[:, :, None] - targets[None])
    dist = np.where(np.isnan(dist), np.inf, dist)
    nearest = np.argmin(dist, axis=2)  # first minimum -> lowest index on ties
    chosen = np.take_along_axis(np.broadcast_to(targets, dist.shape), nearest[:, :, None], 2)[..., 0]
    return zc - chosen, nearest


def library_distance(z, lib: CableLibrary, lengths):
    """Summed distance to the nearest library point; scalar for a vector, array for rows."""
    delta, _ = _offsets(z, lib, lengths)
    q = np.abs(delta).sum(axis=1)
    return float(q[0]) if np.ndim(z) == 1 else q


def library_gradient(z, lib: CableLibrary, lengths) -> np.ndarray:
    """Subgradient of :func:`library_distance`: unit offset per edge, zero on a library point."""
    delta, _ = _offsets(z, lib, lengths)
    mag = np.abs(delta)
    unit = np.where(mag < GRAD_ZERO, 0.0, delta / np.where(mag < GRAD_ZERO, 1.0, mag))
    g = np.concatenate([unit.real, unit.imag], axis=1)
    return g[0] if np.ndim(z) == 1 else g


def penalty(z, system: HalfSpaceSystem, rho: float):
    v = system.violation(np.atleast_2d(z))
    p = 0.5 * rho * np.sum(v * v, axis=1)
    return float(p[0]) if np.ndim(z) == 1 else p


def penalty_gradient(z, system: HalfSpaceSystem, rho: float) -> np.ndarray:
    """``rho * M^T [M z - d]_+`` for a vector or each row of a matrix."""
    g = rho * system.violation(np.atleast_2d(z)) @ system.M
    return g[0] if np.ndim(z) == 1 else g


def _objective(z, system, lib, lengths, rho):
    q = library_distance(z, lib, lengths)
    return q + penalty(z, system, rho) if rho > 0 else q


def refine_candidates(B, system: HalfSpaceSystem, lib: CableLibrary, lengths,
                      cfg: RefinementConfig | None = None, return_log=False):
    """Refine each row of ``B`` independently by penalized descent.

    Rows stop when the step norm drops below ``cfg.tol`` or after
    ``cfg.max_iters`` steps; a row whose objective has not improved for
    ``cfg.patience`` steps is frozen. Each row returns its best iterate.

    Returns
    -------
    C : ndarray, same shape as ``B``
    log_rows : list of dict, only if ``return_log``
        Per-row iterations, final library distance and penalty.
    """
    cfg = cfg or RefinementConfig()
    B = np.atleast_2d(np.asarray(B, dtype=float))
    E = lib.n_edges
    lengths = np.asarray(lengths, dtype=float)
    out = B.copy()
    iters = np.zeros(len(B), dtype=int)
    frozen_total = 0
    for lo in range(0, len(B), cfg.chunk):
        z = B[lo:lo + cfg.chunk].copy()
        n = len(z)
        best = z.copy()
        best_obj = _objective(z, system, lib, lengths, cfg.rho)
        stale = np.zeros(n, dtype=int)
        active = np.ones(n, dtype=bool)
        it = np.zeros(n, dtype=int)
        for _ in range(cfg.max_iters):
            if not active.any():
                break
            za = z[active]
            delta, _ = _offsets(za, lib, lengths)
            mag = np.abs(delta)
            # capped library step: lands exactly on the point when closer than lam
            scale = np.where(mag > cfg.lam, cfg.lam / np.where(mag > 0, mag, 1.0), 1.0)
            stepc = delta * scale
            step = np.concatenate([stepc.real, stepc.imag], axis=1)
            if cfg.rho > 0:
                step += cfg.lam * penalty_gradient(za, system, cfg.rho)
            zn = za - step
            z[active] = zn
            idx = np.flatnonzero(active)
            it[idx] += 1
            obj = _objective(zn, system, lib, lengths, cfg.rho)
            better = obj < best_obj[idx]
            best[idx[better]] = zn[better]
            best_obj[idx[better]] = obj[better]
            stale[idx] = np.where(better, 0, stale[idx] + 1)
            done = np.linalg.norm(step, axis=1) < cfg.tol
            stuck = stale[idx] > cfg.patience
            frozen_total += int(np.sum(stuck & ~done))
            active[idx[done | stuck]] = False
        out[lo:lo + n] = best
        iters[lo:lo + n] = it
    if frozen_total:
        log.info("%d rows stopped improving and were frozen at their best iterate", frozen_total)
    if not return_log:
        return out
    q = library_distance(out, lib, lengths)
    p = penalty(out, system, cfg.rho) if cfg.rho > 0 else np.zeros(len(out))
    rows = [{"row": i, "iterations": int(iters[i]), "library_distance": float(q[i]),
             "penalty": float(p[i])} for i in range(len(out))]
    return out, rows

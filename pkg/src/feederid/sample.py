"""Polytope preprocessing and near-uniform random walks.

Pipeline: :func:`remove_redundant` drops constraints that never bind,
:func:`round_polytope` eliminates near-equalities, recenters at the analytic
center and rescales from pilot-run covariances, :func:`sample_walk` runs the
walk in the rounded space and maps samples back, :func:`lift_to_full` fills
in the fixed coordinates.

One hit-and-run *step* is a full systematic sweep over the walk coordinates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg

from .errors import Infeasible, NumericalDegeneracy, StartInfeasible
from .lp import solve_lp
from .polytope import DirectionSplit, HalfSpaceSystem, chebyshev_center

log = logging.getLogger(__name__)

EQ_WIDTH = 1e-9


def _normalized(M, d):
    norms = np.linalg.norm(M, axis=1)
    nz = norms > 0
    Mn = np.zeros_like(M)
    dn = np.array(d, dtype=float)
    Mn[nz] = M[nz] / norms[nz, None]
    dn[nz] = d[nz] / norms[nz]
    return Mn, dn, nz


def equality_pairs(M, d, width=EQ_WIDTH) -> list[tuple[int, int]]:
    """Row pairs ``(i, j)`` with opposite normals whose slab is thinner than ``width``."""
    Mn, dn, nz = _normalized(np.asarray(M, float), np.asarray(d, float))
    if len(dn) == 0:
        return []
    G = Mn @ Mn.T
    pairs, used = [], set()
    for i in range(len(dn)):
        if i in used or not nz[i]:
            continue
        cand = np.flatnonzero((G[i] < -1 + 1e-12) & nz)
        for j in cand:
            if j > i and j not in used and dn[i] + dn[j] < width:
                pairs.append((i, int(j)))
                used.update((i, int(j)))
                break
    return pairs


def remove_redundant(system: HalfSpaceSystem, tol=1e-9) -> HalfSpaceSystem:
    """Drop rows that cannot bind, certified by one LP per row.

    Row ``i`` is removed when maximizing its left-hand side over the remaining
    rows stays below its right-hand side. Near-equality row pairs are always
    kept; duplicate and all-zero rows go first.
    """
    M, d = system.M, system.d
    if len(d) == 0:
        raise ValueError("empty system")
    Mn, dn, nz = _normalized(M, d)
    if np.any(dn[~nz] < -tol):
        raise Infeasible("constant row with negative right-hand side")
    keep = nz.copy()
    # exact duplicates after normalization: keep the tightest
    key = {}
    for i in np.flatnonzero(nz):
        k = tuple(np.round(Mn[i], 12))
        j = key.get(k)
        if j is None:
            key[k] = i
        elif dn[i] < dn[j]:
            keep[j] = False
            key[k] = i
        else:
            keep[i] = False
    protected = {i for p in equality_pairs(M[keep], d[keep]) for i in np.flatnonzero(keep)[list(p)]}
    n = system.dim
    for i in np.flatnonzero(keep):
        if i in protected:
            continue
        others = keep.copy()
        others[i] = False
        A = np.vstack([M[others], M[i]])
        b = np.concatenate([d[others], [d[i] + 1.0 + abs(d[i])]])
        res = solve_lp(-M[i], A, b, bounds=[(None, None)] * n)
        if -res.fun <= d[i] + tol * (1.0 + abs(d[i])):
            keep[i] = False
    return system.select(keep)


# ---------------------------------------------------------------------------
# walk kernels


@numba.njit(cache=True)
def _slack(GT, h, u):
    k, R = GT.shape
    s = h.copy()
    for i in range(k):
        ui = u[i]
        if ui != 0.0:
            for r in range(R):
                s[r] -= GT[i, r] * ui
    return s


@numba.njit(cache=True)
def _chr_kernel(GT, h, u0, n_out, thin, burn, uniforms, out):
    """Coordinate hit-and-run; returns 0 on success, 1 if a chord is unbounded."""
    k, R = GT.shape
    u = u0.copy()
    s = _slack(GT, h, u)
    idx = 0
    total = burn + n_out * thin
    c = 0
    for step in range(total):
        for i in range(k):
            lo = -np.inf
            hi = np.inf
            for r in range(R):
                a = GT[i, r]
                if a > 0.0:
                    v = s[r] / a
                    if v < hi:
                        hi = v
                elif a < 0.0:
                    v = s[r] / a
                    if v > lo:
                        lo = v
            if not (np.isfinite(lo) and np.isfinite(hi)):
                return 1
            if hi < 0.0:
                hi = 0.0
            if lo > 0.0:
                lo = 0.0
            t = lo + (hi - lo) * uniforms[c]
            c += 1
            u[i] += t
            for r in range(R):
                s[r] -= t * GT[i, r]
        if step % 64 == 63:
            s = _slack(GT, h, u)
        if step >= burn and (step - burn) % thin == thin - 1:
            for i in range(k):
                out[idx, i] = u[i]
            idx += 1
    return 0


def _chr(G, h, u0, n_out, thin, burn, rng):
    k = G.shape[1]
    GT = np.ascontiguousarray(G.T)
    uniforms = rng.random((burn + n_out * thin) * k)
    out = np.empty((n_out, k))
    if _chr_kernel(GT, np.ascontiguousarray(h), np.ascontiguousarray(u0, dtype=float),
                   n_out, thin, burn, uniforms, out):
        raise NumericalDegeneracy("polytope is unbounded along a walk coordinate")
    return out


def _dikin_hessian(G, s):
    W = G / s[:, None]
    return W.T @ W


def _dikin(G, h, u0, n_out, thin, burn, rng, step=0.5):
    """Gaussian Dikin walk with Metropolis correction (uniform target)."""
    k = G.shape[1]
    x = np.array(u0, dtype=float)
    sx = h - G @ x
    Hx = _dikin_hessian(G, sx)
    Lx = np.linalg.cholesky(Hx)
    ldx = 2.0 * np.sum(np.log(np.diag(Lx)))
    c2 = step**2 / k
    out = np.empty((n_out, k))
    idx = 0
    for it in range(burn + n_out * thin):
        xi = rng.standard_normal(k)
        y = x + np.sqrt(c2) * scipy.linalg.solve_triangular(Lx.T, xi, lower=False)
        sy = h - G @ y
        accept_u = rng.random()
        if np.all(sy > 0):
            Hy = _dikin_hessian(G, sy)
            Ly = np.linalg.cholesky(Hy)
            ldy = 2.0 * np.sum(np.log(np.diag(Ly)))
            dlt = x - y
            log_a = 0.5 * (ldy - ldx) - (dlt @ Hy @ dlt - dlt @ Hx @ dlt) / (2.0 * c2)
            if np.log(accept_u) < log_a:
                x, sx, Hx, Lx, ldx = y, sy, Hy, Ly, ldy
        if it >= burn and (it - burn) % thin == thin - 1:
            out[idx] = x
            idx += 1
    return out


# ---------------------------------------------------------------------------
# rounding


@dataclass
class RoundedPolytope:
    """Walk-space system ``G w <= h`` with ``z_free = shift + L @ w``; ``w = 0`` is interior."""

    G: np.ndarray
    h: np.ndarray
    L: np.ndarray
    shift: np.ndarray
    start: np.ndarray
    pilot_condition: float = 1.0

    @property
    def dim(self) -> int:
        return self.G.shape[1]

    def to_free(self, w) -> np.ndarray:
        return self.shift + np.atleast_2d(w) @ self.L.T


def _eliminate_equalities(M, d):
    """Null-space parametrization ``z = zp + N y`` of the near-equality rows."""
    n = M.shape[1]
    pairs = equality_pairs(M, d)
    if not pairs:
        return np.zeros(n), np.eye(n), M, d
    i_rows = [i for i, _ in pairs]
    j_rows = [j for _, j in pairs]
    E = M[i_rows]
    f = (d[i_rows] - d[j_rows]) / 2.0  # midpoint of each slab
    zp, *_ = np.linalg.lstsq(E, f, rcond=None)
    N = scipy.linalg.null_space(E, rcond=1e-10)
    rest = np.setdiff1d(np.arange(len(d)), i_rows + j_rows)
    G = M[rest] @ N
    h = d[rest] - M[rest] @ zp
    norms = np.linalg.norm(G, axis=1)
    small = norms <= 1e-12 * max(1.0, np.linalg.norm(M[rest], axis=1).max(initial=0.0))
    if np.any(h[small] < -1e-9):
        raise Infeasible("inequalities conflict with the near-equality constraints")
    return zp, N, G[~small], h[~small]


def _analytic_center(G, h, y, iters=50):
    """Damped Newton on the log barrier from a strictly interior ``y``."""
    for _ in range(iters):
        s = h - G @ y
        g = G.T @ (1.0 / s)
        H = _dikin_hessian(G, s)
        try:
            step = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        dec = float(-g @ step)
        if dec < 1e-12:
            break
        t = 1.0
        Gs = G @ step
        neg = Gs > 0
        if np.any(neg):
            t = min(1.0, 0.99 * float(np.min(s[neg] / Gs[neg])))
        f0 = -np.sum(np.log(s))
        while t > 1e-12:
            yn = y + t * step
            sn = h - G @ yn
            if np.all(sn > 0) and -np.sum(np.log(sn)) <= f0 - 0.25 * t * dec:
                break
            t *= 0.5
        y = y + t * step
    return y


def round_polytope(system: HalfSpaceSystem, pilot_steps=5000, rounds=2, seed=0) -> RoundedPolytope:
    """Embed, recenter and round ``system`` for hit-and-run.

    Near-equality slabs are removed by a null-space projection, the barrier's
    Hessian at the analytic center gives an initial scaling, then ``rounds``
    pilot runs of ``pilot_steps`` sweeps each refine it with the sample
    covariance.

    Raises
    ------
    NumericalDegeneracy
        If the set has no interior in the embedded space or the pilot
        covariance is rank deficient.
    """
    M, d = system.M, system.d
    zp, N, G, h = _eliminate_equalities(M, d)
    k = N.shape[1]
    if k == 0:
        return RoundedPolytope(np.zeros((0, 0)), np.zeros(0), np.zeros((M.shape[1], 0)), zp, np.zeros(0))
    if len(h) == 0:
        raise NumericalDegeneracy("no inequality left after embedding: set is unbounded")
    y0, radius = chebyshev_center(HalfSpaceSystem(G, h), lexicographic=False)
    if radius <= 1e-14 * max(1.0, np.abs(y0).max()):
        raise NumericalDegeneracy(f"no interior (Chebyshev radius {radius:.3g})")
    yc = _analytic_center(G, h, y0)
    if not np.all(h - G @ yc > 0):
        yc = y0
    H = _dikin_hessian(G, h - G @ yc)
    try:
        R = np.linalg.cholesky(H)
        T = scipy.linalg.solve_triangular(R.T, np.eye(k), lower=False)  # R^{-T}
    except np.linalg.LinAlgError:
        raise NumericalDegeneracy("barrier Hessian is singular") from None
    shift_y = yc
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    cond = 1.0
    for _ in range(rounds):
        Gw = G @ T
        hw = h - G @ shift_y
        pilot = _chr(Gw, hw, np.zeros(k), pilot_steps, 1, 10 * k, rng)
        C = np.atleast_2d(np.cov(pilot, rowvar=False))
        ev = np.linalg.eigvalsh(C)
        if ev[0] <= 1e-12 * ev[-1] or ev[-1] <= 0:
            raise NumericalDegeneracy("pilot covariance is rank deficient; "
                                      "a non-identifiable direction may be missing")
        cond = float(ev[-1] / ev[0])
        mean = pilot.mean(axis=0)
        Lc = np.linalg.cholesky(C)
        shift_y = shift_y + T @ mean
        T = T @ Lc
    Gw = G @ T
    hw = h - G @ shift_y
    if not np.all(hw > 0):
        raise StartInfeasible("rounded start point is not strictly interior")
    return RoundedPolytope(Gw, hw, N @ T, zp + N @ shift_y, np.zeros(k), cond)


def sample_walk(rp: RoundedPolytope, m: int, seed=0, method="hit_and_run", thin=3,
                n_chains=4, step=0.5, burn_in=None) -> np.ndarray:
    """Draw ``m`` near-uniform points (free coordinates) from a rounded polytope.

    Each chain performs ``10 * dim`` burn-in steps, then ``thin`` steps per
    kept sample. Chains run with independent sub-seeds and their outputs are
    interleaved by chain index, so results are reproducible bit for bit.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    k = rp.dim
    if k == 0:
        return np.repeat(rp.shift[None, :], m, axis=0)
    if not np.all(rp.h - rp.G @ rp.start > 0):
        raise StartInfeasible("start point is not strictly inside the polytope")
    burn = 10 * k if burn_in is None else burn_in
    n_chains = max(1, min(n_chains, m))
    per = -(-m // n_chains)
    seqs = np.random.SeedSequence(seed).spawn(n_chains)
    chains = []
    for ss in seqs:
        rng = np.random.default_rng(ss)
        if method == "hit_and_run":
            chains.append(_chr(rp.G, rp.h, rp.start, per, thin, burn, rng))
        elif method == "dikin":
            chains.append(_dikin(rp.G, rp.h, rp.start, per, thin, burn, rng, step))
        else:
            raise ValueError(f"unknown walk {method!r}")
    w = np.stack(chains, axis=1).reshape(-1, k)[:m]
    return rp.to_free(w)


def lift_to_full(samples_free, split: DirectionSplit) -> np.ndarray:
    """Candidate matrix B: sampled free coordinates, fixed ones from ``z0``."""
    return split.lift(samples_free)

"""Product-Gaussian kernel density estimation and mean-shift mode search."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize

from .errors import AmleError, DegenerateSampleError, DimensionError, LostTrackError

__all__ = [
    "KdeModel",
    "ModeResult",
    "bandwidth_silverman",
    "bandwidth_lscv",
    "kde_eval",
    "kde_gradient",
    "mean_shift_step",
    "mode_search",
    "in_convex_hull",
    "export_surface",
]

_LOG_NORM = -0.5 * math.log(2 * math.pi)
_BLOCK = 1 << 17  # kernel matrix entries per block


@dataclass(frozen=True)
class KdeModel:
    """Sample points with a diagonal Gaussian bandwidth."""

    points: np.ndarray
    bandwidth: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        h = np.atleast_1d(np.array(self.bandwidth, dtype=float))
        if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] < 1:
            raise AmleError(f"KDE needs at least two points in d >= 1 dims, got shape {pts.shape}")
        if h.shape != (pts.shape[1],):
            raise DimensionError(f"bandwidth has {h.size} entries for {pts.shape[1]} dims")
        if not np.all(h > 0):
            raise AmleError("bandwidths must be positive")
        pts.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "bandwidth", h)
        # points in bandwidth units (one row per coordinate) and the density normaliser
        object.__setattr__(self, "_scaled_t", np.ascontiguousarray((pts / h).T))
        norm = math.exp(pts.shape[1] * _LOG_NORM) / (pts.shape[0] * float(np.prod(h)))
        object.__setattr__(self, "_norm", norm)

    @classmethod
    def fit(cls, points, bandwidth="silverman") -> "KdeModel":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if isinstance(bandwidth, str):
            if bandwidth == "silverman":
                h = bandwidth_silverman(pts)
            elif bandwidth == "lscv":
                h = bandwidth_lscv(pts)
            else:
                raise AmleError(f"unknown bandwidth selector {bandwidth!r}")
        else:
            h = bandwidth
        return cls(pts, h)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class ModeResult:
    location: np.ndarray
    density_value: float
    iterations: int
    inside_hull: bool


def bandwidth_silverman(points) -> np.ndarray:
    """Normal-reference rule ``sd_j * (4 / ((d + 2) m)) ** (1 / (d + 4))`` per dimension."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    m, d = pts.shape
    if m < 2:
        raise DegenerateSampleError("bandwidth needs at least two points")
    sd = pts.std(axis=0, ddof=1)
    if np.any(sd <= 0) or not np.all(np.isfinite(sd)):
        raise DegenerateSampleError(f"zero spread in dims {np.flatnonzero(~(sd > 0)).tolist()}")
    return sd * (4.0 / ((d + 2) * m)) ** (1.0 / (d + 4))


def bandwidth_lscv(points) -> np.ndarray:
    """Least-squares cross-validation bandwidth for one-dimensional samples.

    Minimises the Gaussian-kernel LSCV score over ``[0.05, 2]`` times the
    Silverman bandwidth.  Cost is quadratic in the sample size.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 2:
        if pts.shape[1] != 1:
            raise AmleError("LSCV is only implemented for d = 1")
        pts = pts[:, 0]
    m = pts.size
    h0 = bandwidth_silverman(pts)[0]
    diff = pts[:, None] - pts[None, :]
    sq = diff[np.triu_indices(m, 1)] ** 2

    def score(log_h):
        h = math.exp(log_h)
        # integral of fhat^2 and leave-one-out mean, both from pairwise sums
        a = 2 * h * h
        int_f2 = (m / math.sqrt(2 * a * math.pi) + 2 * np.exp(-sq / (2 * a)).sum() / math.sqrt(2 * math.pi * a)) / m**2
        loo = 2 * np.exp(-sq / (2 * h * h)).sum() / (math.sqrt(2 * math.pi) * h) / (m * (m - 1))
        return int_f2 - 2 * loo

    res = optimize.minimize_scalar(score, bounds=(math.log(0.05 * h0), math.log(2 * h0)), method="bounded")
    return np.array([math.exp(res.x)])


def _as_queries(model: KdeModel, z) -> tuple:
    """Normalise queries to ``(k, d)``; ``kind`` says how to shape results back."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 0:
        return z.reshape(1, 1), "scalar"
    if z.ndim == 1:
        if model.d == 1:
            return z.reshape(-1, 1), "flat"
        z, kind = z.reshape(1, -1), "point"
    else:
        kind = "batch"
    if z.shape[1] != model.d:
        raise DimensionError(f"query has {z.shape[1]} coordinates, KDE has {model.d}")
    return z, kind


def _shape_values(v: np.ndarray, kind: str):
    return float(v[0]) if kind in ("scalar", "point") else v


def _shape_vectors(v: np.ndarray, kind: str):
    if kind in ("scalar", "point"):
        return v[0]
    if kind == "flat":
        return v[:, 0]
    return v


def _kernel_blocks(model: KdeModel, q: np.ndarray):
    """Yield ``(slice, w)`` with ``w[i, j] = exp(-|q_i - Z_j|_h^2 / 2)`` for a block of query rows.

    Blocks are sized to stay cache resident; ``w`` is a reused buffer.
    """
    qs = q / model.bandwidth
    pts = model._scaled_t
    rows = max(1, _BLOCK // model.m)
    buf = np.empty((rows, model.m))
    tmp = np.empty((rows, model.m)) if model.d > 1 else None
    for s in range(0, len(q), rows):
        e = min(len(q), s + rows)
        w = buf[: e - s]
        np.subtract(qs[s:e, 0:1], pts[0], out=w)
        np.multiply(w, w, out=w)
        for c in range(1, model.d):
            t = tmp[: e - s]
            np.subtract(qs[s:e, c:c + 1], pts[c], out=t)
            np.multiply(t, t, out=t)
            w += t
        w *= -0.5
        np.exp(w, out=w)
        yield slice(s, e), w


def kde_eval(model: KdeModel, z):
    """Density of the Parzen estimator at ``z`` (one point or a ``(k, d)`` array)."""
    q, kind = _as_queries(model, z)
    out = np.empty(len(q))
    for sl, w in _kernel_blocks(model, q):
        out[sl] = w.sum(axis=1)
    return _shape_values(out * model._norm, kind)


def kde_gradient(model: KdeModel, z):
    """Analytic gradient of :func:`kde_eval`: ``sum_j w_j (Z_j - z) / h^2`` times the normaliser."""
    q, kind = _as_queries(model, z)
    out = np.empty_like(q)
    for sl, w in _kernel_blocks(model, q):
        out[sl] = w @ model.points - w.sum(axis=1)[:, None] * q[sl]
    out *= model._norm / model.bandwidth**2
    return _shape_vectors(out, kind)


def mean_shift_step(model: KdeModel, z) -> np.ndarray:
    """Kernel-weighted mean of the sample points seen from ``z``."""
    q, kind = _as_queries(model, z)
    out = np.empty_like(q)
    tot = np.empty(len(q))
    for sl, w in _kernel_blocks(model, q):
        tot[sl] = w.sum(axis=1)
        out[sl] = w @ model.points
    if np.any(tot == 0):
        raise LostTrackError("all kernel weights underflowed; start is too far from the sample")
    return _shape_vectors(out / tot[:, None], kind)


def in_convex_hull(points, z, tol: float = 1e-9) -> bool:
    """Whether ``z`` is a convex combination of ``points`` (LP feasibility)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    z = np.atleast_1d(np.asarray(z, dtype=float))
    span = np.maximum(pts.max(axis=0) - pts.min(axis=0), 1.0)
    if np.any(z < pts.min(axis=0) - tol * span) or np.any(z > pts.max(axis=0) + tol * span):
        return False
    if pts.shape[1] == 1:
        return True
    # unique rows keep the LP small for duplicated draws
    pts = np.unique(pts, axis=0)
    m = len(pts)
    a_eq = np.vstack([pts.T, np.ones(m)])
    b_eq = np.append(z, 1.0)
    res = optimize.linprog(np.zeros(m), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status == 0:
        return True
    # retry with a small slack for points sitting on a face
    a_ub = np.vstack([a_eq[:-1], -a_eq[:-1]])
    slack = tol * np.append(span, span)
    b_ub = np.concatenate([z, -z]) + slack
    res = optimize.linprog(np.zeros(m), A_ub=a_ub, b_ub=b_ub, A_eq=np.ones((1, m)), b_eq=[1.0],
                           bounds=(0, None), method="highs")
    return res.status == 0


def mode_search(model: KdeModel, n_starts: int = 50, tol: float | None = None, max_iter: int = 2000,
                check_hull: bool = True) -> ModeResult:
    """Multi-start Gaussian mean-shift from the highest-density sample points.

    Iterates from the ``n_starts`` sample points with the largest estimated
    density until every step is shorter than ``tol`` (default ``1e-8`` times
    the largest bandwidth).  The terminal point with the highest density
    wins; near-ties (within ``1e-9``) go to the lexicographically smallest
    location.  Iterates are convex combinations of the sample, so the result
    stays inside its convex hull.
    """
    if n_starts < 1:
        raise AmleError("n_starts must be >= 1")
    if tol is None:
        tol = 1e-8 * float(model.bandwidth.max())
    dens = kde_eval(model, model.points)
    k = min(n_starts, model.m)
    order = np.argsort(-dens, kind="stable")[:k]
    z = model.points[order].copy()
    active = np.ones(k, dtype=bool)
    iters = 0
    while active.any() and iters < max_iter:
        iters += 1
        nxt = mean_shift_step(model, z[active])
        step = np.sqrt((((nxt - z[active]) / model.bandwidth) ** 2).sum(axis=1)) * model.bandwidth.max()
        idx = np.flatnonzero(active)
        z[idx] = nxt
        active[idx[step < tol]] = False

    cand = np.vstack([z, model.points[order[:1]]])
    cand_dens = np.append(kde_eval(model, z), dens[order[0]])
    best = cand_dens.max()
    near = np.flatnonzero(cand_dens >= best - 1e-9)
    pick = near[np.lexsort(cand[near].T[::-1])[0]]
    loc = cand[pick].copy()
    inside = in_convex_hull(model.points, loc) if check_hull else True
    return ModeResult(loc, float(cand_dens[pick]), iters, inside)


def export_surface(model: KdeModel, axes, path=None) -> np.ndarray:
    """Evaluate the density on the tensor grid spanned by ``axes``.

    Returns rows ``(coord_1, ..., coord_d, density)``; with ``path`` also
    writes them as CSV with header ``x0,...,density``.
    """
    axes = [np.asarray(a, dtype=float).ravel() for a in axes]
    if len(axes) != model.d:
        raise DimensionError(f"need {model.d} grid axes, got {len(axes)}")
    mesh = np.meshgrid(*axes, indexing="ij")
    coords = np.column_stack([g.ravel() for g in mesh])
    table = np.column_stack([coords, kde_eval(model, coords)])
    if path is not None:
        header = ",".join([f"x{j}" for j in range(model.d)] + ["density"])
        lines = [header] + [",".join(repr(float(v)) for v in row) for row in table]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return table

"""Rejection ABC: distances, acceptance kernels, samplers and likelihood curves.

Proposals are processed in fixed-size batches.  Batch ``b`` draws all of its
randomness from ``seed.generator(BATCH, b)``, so results depend only on the
seed and the batch size, never on how many worker threads evaluate batches.
Accepted draws are merged in proposal order, which makes a run identical to
the serial algorithm stopped at the ``m_target``-th acceptance.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .core import ParameterSpace, RngSeed
from .errors import AmleError, DimensionError, PartialSampleError

__all__ = [
    "DistanceSpec",
    "KernelSpec",
    "AbcConfig",
    "AbcSample",
    "LikelihoodCurve",
    "distance",
    "distances",
    "kernel_accept",
    "pilot_scale",
    "resolve_distance",
    "abc_rejection",
    "abc_rejection_sweep",
    "abc_nearest",
    "abc_nearest_sweep",
    "run_abc",
    "run_abc_sweep",
    "acceptance_rates",
    "likelihood_curve",
    "save_sample",
    "load_sample",
]

# derivation keys for sub-streams
BATCH = 1
PILOT = 2
CURVE = 3
RATES = 4

PILOT_SIZE = 1000


@dataclass(frozen=True)
class DistanceSpec:
    """Metric on statistic space.

    ``kind`` is ``"euclidean"``, ``"weighted"`` (divide each component by
    ``scale`` first) or ``"pilot"`` (weighted, with the scale set to
    per-component median absolute deviations of a prior-predictive pilot run;
    see :func:`resolve_distance`).
    """

    kind: str = "euclidean"
    scale: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("euclidean", "weighted", "pilot"):
            raise AmleError(f"unknown distance kind {self.kind!r}")
        if self.kind == "weighted":
            if self.scale is None:
                raise AmleError("weighted distance needs a scale")
            sc = tuple(float(s) for s in self.scale)
            if not all(s > 0 and math.isfinite(s) for s in sc):
                raise AmleError("distance scale entries must be positive and finite")
            object.__setattr__(self, "scale", sc)

    def weights(self, m: int) -> np.ndarray:
        if self.kind == "pilot":
            raise AmleError("pilot distance must be resolved before use")
        if self.kind == "euclidean":
            return np.ones(m)
        if len(self.scale) != m:
            raise DimensionError(f"distance scale has {len(self.scale)} entries, statistic has {m}")
        return np.asarray(self.scale)


def distance(spec: DistanceSpec, a, b) -> float:
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"statistic dimensions differ: {a.size} vs {b.size}")
    w = spec.weights(a.size)
    return float(np.sqrt(np.sum(((a - b) / w) ** 2)))


def distances(spec: DistanceSpec, stats: np.ndarray, observed) -> np.ndarray:
    """Row-wise distances to ``observed``; NaN rows (uncomputable statistics) map to ``inf``."""
    observed = np.asarray(observed, dtype=float).ravel()
    stats = np.atleast_2d(stats)
    if stats.shape[1] != observed.size:
        raise DimensionError(f"statistic dimensions differ: {stats.shape[1]} vs {observed.size}")
    w = spec.weights(observed.size)
    # screened or uncomputable rows are NaN throughout; skip them when they dominate
    live = np.flatnonzero(~np.isnan(stats[:, 0]))
    if len(live) < len(stats) // 2:
        d = np.full(len(stats), np.inf)
        d[live] = np.sqrt((((stats[live] - observed) / w) ** 2).sum(axis=1))
    else:
        d = np.sqrt((((stats - observed) / w) ** 2).sum(axis=1))
    d[np.isnan(d)] = np.inf
    return d


@dataclass(frozen=True)
class KernelSpec:
    """ABC acceptance kernel with all of its mass inside the tolerance ball.

    ``indicator`` accepts iff ``dist < epsilon``.  ``truncated_gaussian``
    accepts with probability ``exp(-dist^2 / (2 (epsilon/3)^2))`` when
    ``dist < epsilon`` and never otherwise.
    """

    kind: str = "indicator"
    epsilon: float = 1.0

    def __post_init__(self):
        if self.kind not in ("indicator", "truncated_gaussian"):
            raise AmleError(f"unknown kernel {self.kind!r}")
        if not self.epsilon > 0:
            raise AmleError(f"tolerance must be positive, got {self.epsilon}")

    def weight(self, d) -> np.ndarray:
        """Kernel value relative to its value at distance zero."""
        d = np.asarray(d, dtype=float)
        inside = d < self.epsilon
        if self.kind == "indicator":
            return inside.astype(float)
        s = self.epsilon / 3.0
        with np.errstate(invalid="ignore"):
            return np.where(inside, np.exp(-0.5 * (d / s) ** 2), 0.0)

    def accept(self, d: np.ndarray, u: np.ndarray | None = None) -> np.ndarray:
        if self.kind == "indicator":
            return np.asarray(d) < self.epsilon
        return u < self.weight(d)


def kernel_accept(spec: KernelSpec, dist: float, rng: np.random.Generator) -> bool:
    if dist < 0:
        raise AmleError("distance must be non-negative")
    if spec.kind == "indicator":
        return bool(dist < spec.epsilon)
    return bool(rng.random() < spec.weight(dist))


@dataclass(frozen=True)
class AbcConfig:
    """Settings of one rejection-ABC run.

    ``mode="absolute"`` treats ``epsilon`` as a distance radius.
    ``mode="quantile"`` treats it as the accepted fraction: ``m_target / epsilon``
    proposals are simulated and the ``m_target`` nearest kept.

    ``screen`` lets models that support it skip simulating later statistic
    components once a partial distance already exceeds ``epsilon``
    (indicator kernel only).  Results stay exact but the random stream is
    consumed differently, so screened and unscreened runs are not
    draw-for-draw identical.
    """

    epsilon: float
    m_target: int = 10_000
    max_proposals: int = 10_000_000
    distance: DistanceSpec = field(default_factory=DistanceSpec)
    kernel: str = "indicator"
    batch_size: int | None = None
    screen: bool = False
    threads: int = 1
    mode: str = "absolute"

    def __post_init__(self):
        if not self.epsilon > 0:
            raise AmleError(f"tolerance must be positive, got {self.epsilon}")
        if self.mode not in ("absolute", "quantile"):
            raise AmleError(f"unknown tolerance mode {self.mode!r}")
        if self.mode == "quantile" and self.epsilon > 1:
            raise AmleError("an accepted fraction must lie in (0, 1]")
        if self.m_target < 1:
            raise AmleError("m_target must be >= 1")
        if self.max_proposals < self.m_target:
            raise AmleError("max_proposals must be >= m_target")
        if self.batch_size is not None and self.batch_size < 1:
            raise AmleError("batch_size must be >= 1")
        if self.threads < 1:
            raise AmleError("threads must be >= 1")
        if self.screen and self.kernel != "indicator":
            raise AmleError("screening requires the indicator kernel")
        KernelSpec(self.kernel, self.epsilon)

    @property
    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel, self.epsilon)


@dataclass
class AbcSample:
    """Accepted parameter draws in proposal order.

    ``epsilon`` is the configured tolerance.  In ``"absolute"`` mode it is
    the distance radius; in ``"quantile"`` mode it is the accepted fraction
    of simulations and ``radius`` holds the largest accepted distance.
    """

    draws: np.ndarray
    distances: np.ndarray
    epsilon: float
    proposals_used: int
    seed: RngSeed
    names: tuple
    mode: str = "absolute"
    radius: float | None = None
    scale: tuple | None = None
    complete: bool = True

    @property
    def acceptance_rate(self) -> float:
        return len(self.draws) / self.proposals_used if self.proposals_used else 0.0

    def __len__(self):
        return len(self.draws)


class _Screen:
    """Early-rejection helper handed to models (see ``ModelSpec``)."""

    def __init__(self, observed, weights, epsilon):
        self.observed = np.asarray(observed, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.epsilon = float(epsilon)

    def interval(self, j: int) -> tuple:
        """Centre and half-width a single component must fall within."""
        return float(self.observed[j]), self.epsilon * float(self.weights[j])

    def keep(self, columns, values) -> np.ndarray:
        cols = np.atleast_1d(columns)
        v = np.atleast_2d(values)
        part = (((v - self.observed[cols]) / self.weights[cols]) ** 2).sum(axis=1)
        return part < self.epsilon**2


def pilot_scale(model, space: ParameterSpace, seed: RngSeed, size: int = PILOT_SIZE) -> tuple:
    """Per-component median absolute deviation of prior-predictive statistics."""
    rng = seed.derive(PILOT).generator()
    thetas = space.draw(rng, size)
    stats = model.simulate_statistics(thetas, rng)
    stats = stats[~np.isnan(stats).any(axis=1)]
    if len(stats) < 2:
        raise AmleError("pilot run produced too few computable statistics")
    mad = np.median(np.abs(stats - np.median(stats, axis=0)), axis=0)
    if np.any(mad <= 0):
        raise AmleError(f"pilot MAD is zero for components {np.flatnonzero(mad <= 0).tolist()}")
    return tuple(float(v) for v in mad)


def resolve_distance(spec: DistanceSpec, model, space: ParameterSpace, seed: RngSeed) -> DistanceSpec:
    if spec.kind != "pilot":
        return spec
    return DistanceSpec("weighted", pilot_scale(model, space, seed))


def _check_inputs(model, space, observed):
    observed = np.asarray(observed, dtype=float).ravel()
    if observed.size != model.statistic_dim:
        raise DimensionError(f"observed statistic has {observed.size} components, model produces {model.statistic_dim}")
    if list(space.names) != list(model.param_names):
        raise DimensionError(f"space dims {space.names} do not match model parameters {list(model.param_names)}")
    return observed


def _batches(model, space, observed, dist, seed, batch_size, kernel=None, screen=None, threads=1) -> Iterator:
    """Yield ``(start, thetas, d, u)`` per batch, in proposal order, forever."""
    w = dist.weights(observed.size)
    scr = _Screen(observed, w, kernel.epsilon) if screen else None
    need_u = kernel is not None and kernel.kind != "indicator"

    def run(b):
        rng = seed.generator(BATCH, b)
        thetas = space.draw(rng, batch_size)
        stats = model.simulate_statistics(thetas, rng, scr)
        d = distances(dist, stats, observed)
        u = rng.random(batch_size) if need_u else None
        return b * batch_size, thetas, d, u

    b = 0
    if threads <= 1:
        while True:
            yield run(b)
            b += 1
    with ThreadPoolExecutor(max_workers=threads) as pool:
        while True:
            yield from pool.map(run, range(b, b + threads))
            b += threads


def abc_rejection(model, space: ParameterSpace, observed, cfg: AbcConfig, seed: RngSeed) -> AbcSample:
    """Rejection ABC until ``cfg.m_target`` acceptances.

    Raises :class:`PartialSampleError` (carrying the partial sample) if
    ``cfg.max_proposals`` proposals are used first.
    """
    return abc_rejection_sweep(model, space, observed, cfg, [cfg.epsilon], seed, _screen=cfg.screen)[cfg.epsilon]


def abc_rejection_sweep(model, space, observed, cfg: AbcConfig, epsilons, seed: RngSeed, _screen=False) -> dict:
    """Rejection ABC at several tolerances on one shared proposal stream.

    Each entry equals what :func:`abc_rejection` returns for that tolerance
    with the same seed; the simulations are shared.  Screening is never used
    here because it would make the stream depend on the tolerance.
    """
    observed = _check_inputs(model, space, observed)
    epsilons = sorted({float(e) for e in epsilons}, reverse=True)
    for e in epsilons:
        KernelSpec(cfg.kernel, e)
    dist = resolve_distance(cfg.distance, model, space, seed)
    bs = cfg.batch_size or model.batch_size
    kernels = {e: KernelSpec(cfg.kernel, e) for e in epsilons}
    got = {e: ([], [], 0) for e in epsilons}  # thetas, dists, proposals_used
    done = {}
    stream = _batches(
        model, space, observed, dist, seed, bs,
        kernel=kernels[epsilons[-1]] if _screen else kernels[epsilons[0]],
        screen=_screen, threads=cfg.threads,
    )
    used = 0
    for start, thetas, d, u in stream:
        limit = min(len(d), cfg.max_proposals - start)
        for e in epsilons:
            if e in done:
                continue
            th_list, d_list, n_acc = got[e]
            acc = np.flatnonzero(kernels[e].accept(d[:limit], None if u is None else u[:limit]))
            need = cfg.m_target - n_acc
            if len(acc) >= need:
                acc = acc[:need]
                th_list.append(thetas[acc])
                d_list.append(d[acc])
                done[e] = start + int(acc[-1]) + 1
            else:
                th_list.append(thetas[acc])
                d_list.append(d[acc])
            got[e] = (th_list, d_list, n_acc + len(acc))
        used = start + limit
        if len(done) == len(epsilons) or used >= cfg.max_proposals:
            break
    stream.close()

    out = {}
    for e in epsilons:
        th_list, d_list, n_acc = got[e]
        sample = AbcSample(
            draws=np.concatenate(th_list) if th_list else np.empty((0, space.ndim)),
            distances=np.concatenate(d_list) if d_list else np.empty(0),
            epsilon=e,
            proposals_used=done.get(e, used),
            seed=seed,
            names=tuple(space.names),
            radius=e,
            scale=dist.scale,
        )
        if e not in done:
            if len(epsilons) == 1:
                raise PartialSampleError(
                    f"only {n_acc} of {cfg.m_target} acceptances after {used} proposals at epsilon={e}", sample
                )
            sample.complete = False
        out[e] = sample
    return out


def _nearest_from(thetas, d, m, fraction, n_sims, seed, names, scale):
    order = np.argsort(d[:n_sims], kind="stable")[:m]
    order = order[np.isfinite(d[order])]
    order.sort()  # back to proposal order
    rad = float(d[order].max()) if len(order) else math.inf
    return AbcSample(
        draws=thetas[order], distances=d[order], epsilon=fraction, proposals_used=n_sims,
        seed=seed, names=tuple(names), mode="quantile", radius=rad, scale=scale,
    )


def abc_nearest_sweep(model, space, observed, m: int, fractions, seed: RngSeed,
                      distance_spec: DistanceSpec | None = None, batch_size=None, threads=1) -> dict:
    """Accepted-fraction ABC at several fractions on one shared stream.

    For fraction ``f`` the first ``ceil(m / f)`` proposals are simulated and
    the ``m`` nearest (ties broken by proposal order) are kept, i.e. the
    indicator kernel with the radius set at the ``f``-quantile of simulated
    distances.  Uncomputable statistics are never accepted.
    """
    observed = _check_inputs(model, space, observed)
    if m < 1:
        raise AmleError("m must be >= 1")
    fractions = sorted({float(f) for f in fractions})
    if not all(0 < f <= 1 for f in fractions):
        raise AmleError("accepted fractions must lie in (0, 1]")
    dist = resolve_distance(distance_spec or DistanceSpec(), model, space, seed)
    bs = batch_size or model.batch_size
    need = {f: int(math.ceil(m / f - 1e-9)) for f in fractions}
    total = max(need.values())
    th, dd = [], []
    stream = _batches(model, space, observed, dist, seed, bs, threads=threads)
    n = 0
    for start, thetas, d, _ in stream:
        th.append(thetas)
        dd.append(d)
        n = start + len(d)
        if n >= total:
            break
    stream.close()
    thetas = np.concatenate(th)
    d = np.concatenate(dd)
    return {f: _nearest_from(thetas, d, m, f, need[f], seed, space.names, dist.scale) for f in fractions}


def abc_nearest(model, space, observed, m: int, fraction: float, seed: RngSeed,
                distance_spec: DistanceSpec | None = None, batch_size=None) -> AbcSample:
    return abc_nearest_sweep(model, space, observed, m, [fraction], seed, distance_spec, batch_size)[float(fraction)]


def run_abc(model, space, observed, cfg: AbcConfig, seed: RngSeed) -> AbcSample:
    """Dispatch on ``cfg.mode``."""
    if cfg.mode == "quantile":
        return abc_nearest_sweep(model, space, observed, cfg.m_target, [cfg.epsilon], seed,
                                 cfg.distance, cfg.batch_size, cfg.threads)[float(cfg.epsilon)]
    return abc_rejection(model, space, observed, cfg, seed)


def run_abc_sweep(model, space, observed, cfg: AbcConfig, epsilons, seed: RngSeed) -> dict:
    """Dispatch on ``cfg.mode``; entries match single runs with the same seed."""
    if cfg.mode == "quantile":
        return abc_nearest_sweep(model, space, observed, cfg.m_target, epsilons, seed,
                                 cfg.distance, cfg.batch_size, cfg.threads)
    return abc_rejection_sweep(model, space, observed, cfg, epsilons, seed)


def acceptance_rates(model, space, observed, epsilons, seed: RngSeed, n: int = 20_000,
                     distance_spec: DistanceSpec | None = None, batch_size=None) -> dict:
    """Indicator-kernel acceptance rate at each tolerance from ``n`` prior-predictive simulations.

    Runs on its own sub-stream, so it does not disturb later samplers
    sharing ``seed``.
    """
    observed = _check_inputs(model, space, observed)
    dist = resolve_distance(distance_spec or DistanceSpec(), model, space, seed)
    bs = batch_size or model.batch_size
    rng = seed.generator(RATES)
    d = []
    left = n
    while left:
        k = min(bs, left)
        d.append(distances(dist, model.simulate_statistics(space.draw(rng, k), rng), observed))
        left -= k
    d = np.concatenate(d)
    return {float(e): float(np.mean(d < e)) for e in epsilons}


@dataclass
class LikelihoodCurve:
    """Monte Carlo estimate of the smoothed likelihood on a parameter grid."""

    thetas: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    epsilon: float
    n_sims: int

    def normalized(self) -> np.ndarray:
        """Values rescaled to sum to one over the grid."""
        tot = self.values.sum()
        return self.values / tot if tot > 0 else self.values

    def rows(self):
        return list(zip(map(tuple, self.thetas), self.values, self.stderr))


def likelihood_curve(model, thetas, observed, epsilon: float, n_sims_per_point: int, seed: RngSeed,
                     distance_spec: DistanceSpec | None = None, kernel: str = "indicator",
                     batch_size: int | None = None) -> LikelihoodCurve:
    """Kernel-weighted acceptance frequency of simulated statistics at each grid point.

    The estimate is unbiased for the smoothed likelihood up to the kernel's
    normalising constant.  No prior is involved, so points outside any prior
    box are fine.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    if len(thetas) == 0:
        raise AmleError("empty parameter grid")
    if n_sims_per_point < 1:
        raise AmleError("n_sims_per_point must be >= 1")
    observed = np.asarray(observed, dtype=float).ravel()
    ker = KernelSpec(kernel, epsilon)
    dist = distance_spec or DistanceSpec()
    if dist.kind == "pilot":
        raise AmleError("likelihood curves need an explicit distance scale")
    bs = batch_size or model.batch_size
    vals = np.empty(len(thetas))
    errs = np.empty(len(thetas))
    for i, th in enumerate(thetas):
        rng = seed.generator(CURVE, i)
        s1 = s2 = 0.0
        left = n_sims_per_point
        while left:
            k = min(bs, left)
            stats = model.simulate_statistics(np.repeat(th[None, :], k, axis=0), rng)
            w = ker.weight(distances(dist, stats, observed))
            s1 += w.sum()
            s2 += (w**2).sum()
            left -= k
        n = n_sims_per_point
        mean = s1 / n
        vals[i] = mean
        errs[i] = math.sqrt(max(s2 / n - mean**2, 0.0) / n)
    return LikelihoodCurve(thetas, vals, errs, float(epsilon), int(n_sims_per_point))


def save_sample(sample: AbcSample, path) -> Path:
    """Write draws as CSV plus a ``<path>.meta`` key=value sidecar."""
    path = Path(path)
    lines = [",".join(list(sample.names) + ["distance"])]
    for th, d in zip(sample.draws, sample.distances):
        lines.append(",".join(repr(float(v)) for v in th) + "," + repr(float(d)))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = {
        "epsilon": repr(float(sample.epsilon)),
        "mode": sample.mode,
        "radius": repr(float(sample.radius)) if sample.radius is not None else "",
        "proposals_used": str(sample.proposals_used),
        "acceptance_rate": repr(sample.acceptance_rate),
        "seed": str(sample.seed.seed),
        "stream_id": str(sample.seed.stream_id),
        "seed_path": "/".join(str(k) for k in sample.seed.path),
        "scale": ";".join(repr(v) for v in sample.scale) if sample.scale else "",
    }
    Path(str(path) + ".meta").write_text("".join(f"{k}={v}\n" for k, v in meta.items()), encoding="utf-8")
    return path


def load_sample(path) -> AbcSample:
    path = Path(path)
    rows = path.read_text(encoding="utf-8").splitlines()
    header = rows[0].split(",")
    data = np.array([[float(v) for v in r.split(",")] for r in rows[1:] if r]).reshape(-1, len(header))
    meta = dict(
        ln.split("=", 1) for ln in Path(str(path) + ".meta").read_text(encoding="utf-8").splitlines() if ln
    )
    seed_path = tuple(int(k) for k in meta["seed_path"].split("/") if k)
    return AbcSample(
        draws=data[:, :-1],
        distances=data[:, -1],
        epsilon=float(meta["epsilon"]),
        proposals_used=int(meta["proposals_used"]),
        seed=RngSeed(int(meta["seed"]), int(meta["stream_id"]), seed_path),
        names=tuple(header[:-1]),
        mode=meta["mode"],
        radius=float(meta["radius"]) if meta["radius"] else None,
        scale=tuple(float(v) for v in meta["scale"].split(";")) if meta["scale"] else None,
    )

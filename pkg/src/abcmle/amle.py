"""Approximate maximum likelihood: ABC sample, kernel density, mode.

The estimate is the mode of a kernel density fitted to an ABC rejection
sample drawn under a uniform prior.  With a discrete coordinate the draws
are partitioned by its value; each value is scored by its share of the
sample times the maximum of the conditional density of the continuous
coordinates, and the best-scoring value wins.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .abc_engine import AbcConfig, AbcSample, run_abc, run_abc_sweep
from .core import ParameterSpace, RngSeed
from .density import KdeModel, mode_search
from .errors import AmleError, DegenerateSampleError, EstimationFailure, LostTrackError, PartialSampleError

__all__ = [
    "AmleConfig",
    "AmleResult",
    "DiscreteScore",
    "StudyRow",
    "StudyResult",
    "amle_from_sample",
    "amle_estimate",
    "amle_discrete",
    "replicate_study",
    "five_number",
    "write_study",
    "STUDY_COLUMNS",
    "RESULT_COLUMNS",
]

# derivation keys under a study seed
REPLICATE = 11
DATA = 12


@dataclass(frozen=True)
class AmleConfig:
    """ABC settings plus density and mode-search options."""

    abc: AbcConfig
    space: ParameterSpace
    bandwidth: object = "silverman"
    n_starts: int = 50
    tol: float | None = None
    min_per_value: int = 2

    def __post_init__(self):
        if self.n_starts < 1:
            raise AmleError("n_starts must be >= 1")
        if self.min_per_value < 2:
            raise AmleError("min_per_value must be >= 2")


@dataclass(frozen=True)
class DiscreteScore:
    value: tuple
    count: int
    density_max: float
    score: float
    mode: np.ndarray
    inside_hull: bool = True


@dataclass
class AmleResult:
    theta: np.ndarray
    density_at_mode: float
    acceptance_rate: float
    proposals: int
    m: int
    epsilon: float
    radius: float | None
    posterior_mean: np.ndarray
    inside_hull: bool = True
    per_discrete_value: list = field(default_factory=list)
    sample: AbcSample | None = field(default=None, repr=False)


def _continuous_mode(points: np.ndarray, cfg: AmleConfig):
    kde = KdeModel.fit(points, cfg.bandwidth)
    return mode_search(kde, n_starts=cfg.n_starts, tol=cfg.tol)


def amle_from_sample(sample: AbcSample, cfg: AmleConfig) -> AmleResult:
    """AMLE computed from an existing ABC sample."""
    space = cfg.space
    draws = np.asarray(sample.draws, dtype=float)
    if draws.ndim != 2 or draws.shape[1] != space.ndim:
        raise AmleError("sample does not match the parameter space")
    if len(draws) < 2:
        raise EstimationFailure(f"only {len(draws)} accepted draws; need at least 2")
    cont = space.continuous_index
    disc = space.discrete_index
    base = dict(
        acceptance_rate=sample.acceptance_rate,
        proposals=sample.proposals_used,
        m=len(draws),
        epsilon=sample.epsilon,
        radius=sample.radius,
        posterior_mean=draws.mean(axis=0),
        sample=sample,
    )
    if not disc:
        try:
            res = _continuous_mode(draws, cfg)
        except (DegenerateSampleError, LostTrackError) as exc:
            raise EstimationFailure(str(exc)) from exc
        return AmleResult(theta=res.location, density_at_mode=res.density_value,
                          inside_hull=res.inside_hull, **base)

    keys = [tuple(int(v) for v in row) for row in draws[:, disc]]
    scores = []
    for value in sorted(set(keys)):
        rows = draws[[k == value for k in keys]]
        if len(rows) < cfg.min_per_value:
            continue
        if cont:
            try:
                res = _continuous_mode(rows[:, cont], cfg)
            except (DegenerateSampleError, LostTrackError):
                continue
            dmax, loc, hull = res.density_value, res.location, res.inside_hull
        else:
            dmax, loc, hull = 1.0, np.empty(0), True
        scores.append(DiscreteScore(value, len(rows), dmax, len(rows) / len(draws) * dmax, loc, hull))
    if not scores:
        raise EstimationFailure(f"no discrete value kept {cfg.min_per_value} or more usable draws")
    # ties go to the smallest value
    best = max(scores, key=lambda s: (s.score, tuple(-v for v in s.value)))
    theta = np.empty(space.ndim)
    theta[disc] = best.value
    theta[cont] = best.mode
    return AmleResult(theta=theta, density_at_mode=best.density_max, inside_hull=best.inside_hull,
                      per_discrete_value=scores, **base)


def amle_estimate(model, observed, cfg: AmleConfig, seed: RngSeed) -> AmleResult:
    """Run ABC on ``observed`` statistics and return the density mode.

    Continuous spaces only; use :func:`amle_discrete` when some coordinate
    is discrete.
    """
    if cfg.space.discrete_index:
        raise AmleError("parameter space has discrete coordinates; use amle_discrete")
    return amle_from_sample(run_abc(model, cfg.space, observed, cfg.abc, seed), cfg)


def amle_discrete(model, observed, cfg: AmleConfig, seed: RngSeed) -> AmleResult:
    """AMLE over a space with discrete coordinates, conditioning on their values.

    ``per_discrete_value`` of the result lists every retained value with its
    draw count, conditional density maximum, score and conditional mode.
    """
    if not cfg.space.discrete_index:
        raise AmleError("parameter space has no discrete coordinate; use amle_estimate")
    return amle_from_sample(run_abc(model, cfg.space, observed, cfg.abc, seed), cfg)


@dataclass
class StudyRow:
    replicate: int
    seed: str
    epsilon: float
    result: AmleResult | None
    status: str = "ok"


@dataclass
class StudyResult:
    names: tuple
    rows: list
    epsilons: list
    m: int
    mode: str
    discrete_names: tuple = ()

    def estimates(self, epsilon: float) -> np.ndarray:
        """``(k, d)`` estimates of the successful replicates at ``epsilon``."""
        est = [r.result.theta for r in self.rows if r.epsilon == epsilon and r.result is not None]
        return np.array(est).reshape(-1, len(self.names))

    def failures(self, epsilon: float) -> int:
        return sum(1 for r in self.rows if r.epsilon == epsilon and r.result is None)

    def summary(self) -> dict:
        out = {}
        for e in self.epsilons:
            est = self.estimates(e)
            out[repr(e)] = {
                "n_ok": int(len(est)),
                "n_failed": self.failures(e),
                "params": {n: five_number(est[:, j]) for j, n in enumerate(self.names)},
            }
            if self.discrete_names:
                out[repr(e)]["counts"] = {
                    n: {str(int(v)): int(c) for v, c in zip(*np.unique(est[:, self.names.index(n)], return_counts=True))}
                    for n in self.discrete_names
                }
        return out


def five_number(x) -> dict:
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return {k: None for k in ("min", "q1", "median", "q3", "max")}
    q = np.quantile(x, [0, 0.25, 0.5, 0.75, 1.0])
    return dict(zip(("min", "q1", "median", "q3", "max"), (float(v) for v in q)))


def _one_replicate(model, observed, cfg, epsilons, seed, r):
    rseed = seed.derive(REPLICATE, r)
    if callable(observed):
        obs = observed(seed.derive(DATA, r).generator())
    else:
        obs = observed
    rows = []
    try:
        if len(epsilons) == 1:
            samples = {epsilons[0]: run_abc(model, cfg.space, obs, replace(cfg.abc, epsilon=epsilons[0]), rseed)}
        else:
            samples = run_abc_sweep(model, cfg.space, obs, cfg.abc, epsilons, rseed)
    except PartialSampleError as exc:
        samples = {epsilons[0]: exc.sample}
    except AmleError as exc:
        return [StudyRow(r, str(rseed), e, None, f"failed: {exc}") for e in epsilons]
    for e in epsilons:
        s = samples[e]
        if not s.complete or (s.mode == "absolute" and len(s) < cfg.abc.m_target):
            rows.append(StudyRow(r, str(rseed), e, None, f"failed: budget exhausted with {len(s)} draws"))
            continue
        try:
            rows.append(StudyRow(r, str(rseed), e, amle_from_sample(s, cfg)))
        except AmleError as exc:
            rows.append(StudyRow(r, str(rseed), e, None, f"failed: {exc}"))
    return rows


def replicate_study(model, observed, cfg: AmleConfig, replicates: int, seed: RngSeed,
                    epsilons=None, threads: int = 1) -> StudyResult:
    """Repeat AMLE ``replicates`` times, each on its own stream.

    ``observed`` is either a fixed statistic vector or a callable taking a
    generator and returning fresh observed statistics per replicate.
    Several ``epsilons`` share each replicate's proposal stream.  Failed
    replicates are recorded with ``result=None``.
    """
    if replicates < 1:
        raise AmleError("replicates must be >= 1")
    eps = [float(e) for e in (epsilons if epsilons is not None else [cfg.abc.epsilon])]
    eps = sorted(set(eps), reverse=True)
    if not callable(observed):
        observed = np.asarray(observed, dtype=float)

    def job(r):
        return _one_replicate(model, observed, cfg, eps, seed, r)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            chunks = list(pool.map(job, range(replicates)))
    else:
        chunks = [job(r) for r in range(replicates)]
    rows = [row for chunk in chunks for row in chunk]
    space = cfg.space
    return StudyResult(tuple(space.names), rows, eps, cfg.abc.m_target, cfg.abc.mode,
                       tuple(space.names[i] for i in space.discrete_index))


def _fmt(v) -> str:
    if v is None:
        return ""
    v = float(v)
    return repr(v) if math.isfinite(v) else str(v)


STUDY_COLUMNS = ("replicate", "seed", "config", "epsilon")
RESULT_COLUMNS = ("density_at_mode", "acceptance_rate", "proposals", "status")


def write_study(study: StudyResult, out_dir, config_hash: str = "", prefix: str = "study") -> list:
    """One CSV per tolerance plus a JSON summary; returns the written paths.

    Columns are ``replicate, seed, config, epsilon``, the parameters, then
    ``density_at_mode, acceptance_rate, proposals, status``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for e in study.epsilons:
        path = out / f"{prefix}_eps{e:g}_m{study.m}.csv"
        lines = [",".join([*STUDY_COLUMNS, *study.names, *RESULT_COLUMNS])]
        for r in study.rows:
            if r.epsilon != e:
                continue
            res = r.result
            vals = [_fmt(v) for v in res.theta] if res else [""] * len(study.names)
            extra = [_fmt(res.density_at_mode), _fmt(res.acceptance_rate), str(res.proposals)] if res else ["", "", ""]
            status = r.status.replace(",", ";").replace("\n", " ")
            lines.append(",".join([str(r.replicate), r.seed, config_hash, repr(e), *vals, *extra, status]))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(path)
    summ = out / f"{prefix}_summary_m{study.m}.json"
    summ.write_text(json.dumps({"config": config_hash, "mode": study.mode, "m": study.m,
                                "tolerances": study.summary()},
                               indent=2, sort_keys=True) + "\n", encoding="utf-8")
    paths.append(summ)
    return paths

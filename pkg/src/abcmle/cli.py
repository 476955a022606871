"""Command-line experiment runner.

Verbs: ``run``, ``validate``, ``plotdata``, ``surface`` and
``config-reference``.  Exit codes: 0 success, 2 configuration or input
error, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .abc_engine import DistanceSpec, likelihood_curve, resolve_distance
from .amle import RESULT_COLUMNS, STUDY_COLUMNS, AmleConfig, five_number, replicate_study, write_study
from .config import ExperimentConfig, curve_grid, load_observation, parse_config, reference_doc
from .core import Dataset, RngSeed, write_dataset
from .density import KdeModel, export_surface
from .errors import AmleError, ConfigError, EstimationFailure

__all__ = ["main", "run_experiment", "run_surface", "emit_plotdata", "observed_source", "simulate_until"]

log = logging.getLogger("abcmle")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ESTIMATION = 3

PLOT_COLUMNS = ("parameter", "epsilon", "n", "min", "q1", "median", "q3", "max")


def simulate_until(model, theta, require: dict, rng, max_attempts: int) -> Dataset:
    """Simulate datasets from ``theta`` until one meets ``require``.

    ``require`` may hold ``statistic`` plus ``tol`` (every component within
    ``tol`` of the target) and/or ``events`` (exact dataset size).
    """
    target = np.asarray(require["statistic"], dtype=float) if "statistic" in require else None
    for _ in range(max_attempts):
        data = model.simulate(theta, rng)
        if "events" in require and len(data) != require["events"]:
            continue
        if target is not None:
            try:
                stat = model.statistic(data)
            except AmleError:
                continue
            if not np.all(np.abs(stat - target) <= require["tol"]):
                continue
        return data
    raise EstimationFailure(f"no simulated dataset met {require} in {max_attempts} attempts")


def observed_source(cfg: ExperimentConfig):
    """``(dataset or None, observed statistics or per-replicate generator)``."""
    model = cfg.model
    d = cfg.data
    if d.file is not None:
        data = load_observation(cfg)
        return data, model.observe(data)
    theta = np.array([float(d.theta[n]) for n in model.param_names])
    if d.fresh:
        def fresh(rng):
            return model.observe(simulate_until(model, theta, d.require, rng, d.max_attempts))
        return None, fresh
    data = simulate_until(model, theta, d.require, RngSeed(d.seed).generator(), d.max_attempts)
    return data, model.observe(data)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _effective_hash(cfg: ExperimentConfig) -> str:
    text = f"{cfg.digest}\nseed={cfg.seed}\nmax_proposals={cfg.abc.max_proposals}\n"
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _write_manifest(out: Path, cfg: ExperimentConfig, paths, complete: bool, status: str) -> Path:
    items = [{"path": p.relative_to(out).as_posix(), "sha256": _sha256(p)} for p in sorted(paths)]
    manifest = {
        "config": _effective_hash(cfg),
        "config_file": cfg.path.name if cfg.path else None,
        "model": cfg.model_name,
        "seed": cfg.seed,
        "complete": complete,
        "status": status,
        "artifacts": items,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _amle_config(cfg: ExperimentConfig) -> AmleConfig:
    # replicates carry the parallelism, so each ABC run stays single-threaded
    return AmleConfig(abc=replace(cfg.abc, threads=1), space=cfg.space, bandwidth=cfg.bandwidth,
                      n_starts=cfg.n_starts)


def run_experiment(cfg: ExperimentConfig, out_dir=None, threads: int = 1) -> int:
    """Run every replicate at every tolerance and write the artifact set."""
    out = Path(out_dir) if out_dir is not None else cfg.output
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    try:
        data, observed = observed_source(cfg)
    except AmleError as exc:
        log.error("data: %s", exc)
        _write_manifest(out, cfg, paths, False, f"failed: {exc}")
        return EXIT_ESTIMATION
    if data is not None:
        p = out / "data.csv"
        write_dataset(p, data)
        paths.append(p)

    seed = cfg.rng_seed()
    amle_cfg = _amle_config(cfg)
    if cfg.abc.distance.kind == "pilot":
        # resolve once so every replicate shares the same metric
        try:
            dist = resolve_distance(cfg.abc.distance, cfg.model, cfg.space, seed)
        except AmleError as exc:
            log.error("pilot scaling: %s", exc)
            _write_manifest(out, cfg, paths, False, f"failed: {exc}")
            return EXIT_ESTIMATION
        amle_cfg = replace(amle_cfg, abc=replace(amle_cfg.abc, distance=dist))

    log.info("running %d replicate(s) at tolerances %s", cfg.replicates, list(cfg.epsilons))
    study = replicate_study(cfg.model, observed, amle_cfg, cfg.replicates, seed,
                            epsilons=list(cfg.epsilons), threads=threads)
    config_hash = _effective_hash(cfg)
    paths += write_study(study, out, config_hash)

    if cfg.surface_points:
        paths += _write_surfaces(cfg, study, out)

    failed = sum(study.failures(e) for e in study.epsilons)
    total = len(study.rows)
    for e in study.epsilons:
        n_ok = len(study.estimates(e))
        log.info("epsilon=%g: %d ok, %d failed", e, n_ok, study.failures(e))
    complete = failed == 0
    status = "ok" if complete else f"{failed} of {total} runs failed"
    _write_manifest(out, cfg, paths, complete, status)
    if failed == total:
        log.error("every run failed")
        return EXIT_ESTIMATION
    return EXIT_OK


def _write_surfaces(cfg: ExperimentConfig, study, out: Path) -> list:
    """KDE surface of replicate 0's accepted draws, one file per tolerance."""
    paths = []
    cont = cfg.space.continuous_index
    for r in study.rows:
        if r.replicate != 0 or r.result is None or r.result.sample is None or not cont:
            continue
        pts = r.result.sample.draws[:, cont]
        try:
            kde = KdeModel.fit(pts, cfg.bandwidth)
        except AmleError as exc:
            log.warning("surface at epsilon=%g skipped: %s", r.epsilon, exc)
            continue
        pad = 3 * kde.bandwidth
        axes = [np.linspace(pts[:, j].min() - pad[j], pts[:, j].max() + pad[j], cfg.surface_points)
                for j in range(len(cont))]
        p = out / f"surface_eps{r.epsilon:g}_m{study.m}.csv"
        export_surface(kde, axes, p)
        paths.append(p)
    return paths


def run_surface(cfg: ExperimentConfig, out_dir=None) -> int:
    """Monte Carlo likelihood curve on the configured grid, one CSV per tolerance."""
    if cfg.curve is None:
        raise ConfigError(["curve: the surface verb needs a `curve` section"])
    out = Path(out_dir) if out_dir is not None else cfg.output
    out.mkdir(parents=True, exist_ok=True)
    try:
        data, observed = observed_source(cfg)
    except AmleError as exc:
        log.error("data: %s", exc)
        return EXIT_ESTIMATION
    if callable(observed):
        raise ConfigError(["data.fresh: the surface verb needs a fixed dataset"])
    seed = cfg.rng_seed()
    dist = cfg.abc.distance
    if dist.kind == "pilot":
        dist = resolve_distance(dist, cfg.model, cfg.space, seed)
    grid = curve_grid(cfg)
    names = list(cfg.model.param_names)
    paths = []
    if data is not None:
        p = out / "data.csv"
        write_dataset(p, data)
        paths.append(p)
    for e in cfg.curve.epsilons:
        curve = likelihood_curve(cfg.model, grid, observed, e, cfg.curve.n_sims, seed, dist,
                                 cfg.abc.kernel, cfg.abc.batch_size)
        norm = curve.normalized()
        lines = [",".join(names + ["likelihood", "stderr", "normalized"])]
        for th, v, s, nv in zip(curve.thetas, curve.values, curve.stderr, norm):
            lines.append(",".join([*(repr(float(x)) for x in th), repr(float(v)), repr(float(s)), repr(float(nv))]))
        p = out / f"curve_eps{e:g}_n{cfg.curve.n_sims}.csv"
        p.write_text("\n".join(lines) + "\n", encoding="utf-8")
        paths.append(p)
    _write_manifest(out, cfg, paths, True, "ok")
    return EXIT_OK


class PlotDataError(AmleError):
    pass


def emit_plotdata(paths) -> list:
    """Boxplot rows ``(parameter, epsilon, n, min, q1, median, q3, max)`` from study CSVs.

    Groups follow the parameter column order, then descending tolerance.
    Rows whose status is not ``ok`` are skipped.
    """
    groups = {}
    params = []
    problems = []
    for path in map(Path, paths):
        with path.open(newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:len(STUDY_COLUMNS)] != list(STUDY_COLUMNS) \
                    or header[-len(RESULT_COLUMNS):] != list(RESULT_COLUMNS):
                raise PlotDataError(f"{path}:1: not a study CSV header")
            names = header[len(STUDY_COLUMNS):-len(RESULT_COLUMNS)]
            for n in names:
                if n not in params:
                    params.append(n)
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    problems.append(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
                    continue
                rec = dict(zip(header, row))
                if rec["status"] != "ok":
                    continue
                try:
                    eps = float(rec["epsilon"])
                    vals = [float(rec[n]) for n in names]
                except ValueError:
                    problems.append(f"{path}:{lineno}: non-numeric epsilon or estimate")
                    continue
                for n, v in zip(names, vals):
                    groups.setdefault((n, eps), []).append(v)
    if problems:
        raise PlotDataError("; ".join(problems))
    rows = []
    for n in params:
        for eps in sorted({e for (p, e) in groups if p == n}, reverse=True):
            vals = groups[(n, eps)]
            q = five_number(vals)
            rows.append((n, eps, len(vals), q["min"], q["q1"], q["median"], q["q3"], q["max"]))
    return rows


def _format_plot_rows(rows) -> str:
    lines = [",".join(PLOT_COLUMNS)]
    for n, eps, k, *q in rows:
        lines.append(",".join([n, repr(eps), str(k), *(repr(v) for v in q)]))
    return "\n".join(lines) + "\n"


def _load(args) -> ExperimentConfig:
    cfg = parse_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if getattr(args, "max_proposals", None) is not None:
        if args.max_proposals < cfg.abc.m_target:
            raise ConfigError([f"--max-proposals must be >= abc.m ({cfg.abc.m_target})"])
        changes["abc"] = replace(cfg.abc, max_proposals=args.max_proposals)
    return replace(cfg, **changes) if changes else cfg


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="abcmle",
        description="Approximate maximum likelihood estimation from ABC samples.",
        epilog="Exit codes: 0 success, 2 configuration error, 3 estimation failure. "
               "Run `abcmle config-reference` for every config key and default.",
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, out=True):
        sp.add_argument("config", help="experiment YAML file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        if out:
            sp.add_argument("--out-dir", default=None, help="override the config output directory")

    r = sub.add_parser("run", help="run the AMLE study described by a config")
    common(r)
    r.add_argument("--threads", type=int, default=1, help="replicates evaluated in parallel (default 1)")
    r.add_argument("--max-proposals", type=int, default=None, help="override abc.max_proposals")

    v = sub.add_parser("validate", help="check a config and report every problem")
    common(v, out=False)

    s = sub.add_parser("surface", help="export the Monte Carlo likelihood curve on the config's grid")
    common(s)

    pd = sub.add_parser("plotdata", help="summarise study CSVs into boxplot rows")
    pd.add_argument("study", nargs="+", help="study CSV files")
    pd.add_argument("-o", "--output", default=None, help="write to a file instead of stdout")

    sub.add_parser("config-reference", help="print the config key reference (Markdown)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.verb == "config-reference":
            sys.stdout.write(reference_doc() + "\n")
            return EXIT_OK
        if args.verb == "plotdata":
            text = _format_plot_rows(emit_plotdata(args.study))
            if args.output:
                Path(args.output).write_text(text, encoding="utf-8")
            else:
                sys.stdout.write(text)
            return EXIT_OK
        cfg = _load(args)
        if args.verb == "validate":
            print(f"ok: {cfg.model_name} model, {cfg.space.ndim} parameter(s), "
                  f"{len(cfg.epsilons)} tolerance(s), {cfg.replicates} replicate(s)")
            return EXIT_OK
        if args.verb == "surface":
            return run_surface(cfg, args.out_dir)
        if args.threads < 1:
            raise ConfigError(["--threads must be >= 1"])
        return run_experiment(cfg, args.out_dir, args.threads)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PlotDataError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AmleError as exc:
        print(f"estimation failure: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())

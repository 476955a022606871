"""YAML experiment configuration: schema, validation and model construction.

Validation collects every problem before failing, so a broken config is
reported in one pass.  The same schema table drives the generated
reference document (``abcmle config-reference``).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .abc_engine import AbcConfig, DistanceSpec
from .core import Continuous, Discrete, ParameterSpace, RngSeed, read_dataset
from .errors import AmleError, ConfigError
from .models import (
    DEFAULT_ECF_GRID,
    BinomialModel,
    EcfGrid,
    LocationScaleQuantileModel,
    NormalModel,
    StableModel,
    SuperposedGammaModel,
    load_returns_csv,
)

__all__ = ["ExperimentConfig", "DataSpec", "CurveSpec", "parse_config", "bundled_configs", "load_config_text",
           "reference_doc", "MODEL_PARAMS", "SCHEMA", "build_model", "curve_grid", "load_observation"]

# model name -> {option: (default, description)}
MODEL_PARAMS = {
    "binomial": {
        "n": (30, "number of observations"),
        "size": (10, "trials per observation"),
    },
    "normal": {
        "n": (100, "number of observations"),
    },
    "stable": {
        "n": (750, "number of observations"),
        "grid": (list(DEFAULT_ECF_GRID.t_values), "ECF evaluation points (nonzero)"),
        "beta": (0.0, "fixed skewness; null to estimate it"),
    },
    "superposed": {
        "t0": (420.0, "observation horizon"),
        "skewness": (True, "include the interval skewness (9 statistics instead of 8)"),
    },
    "locscale": {
        "n": (100_000, "number of observations"),
        "q": ([0.25, 0.75], "quantile levels of the two statistics"),
        "mapped": (False, "apply the closed-form inverse map to the quantiles"),
    },
}

# section -> {key: (default, description)}; REQUIRED marks mandatory keys
REQUIRED = object()
SCHEMA = {
    "model": {
        "name": (REQUIRED, "one of " + ", ".join(MODEL_PARAMS)),
        "...": (None, "model options, see the model table"),
    },
    "data": {
        "file": (None, "dataset path, relative to the config file"),
        "kind": ("real", "dataset format for `file`: real | events | returns"),
        "generate": (None, "simulate the data instead: {theta: {...}, seed: int, require: {...}}"),
        "fresh": (False, "re-simulate the data for every replicate (needs `generate`)"),
    },
    "prior": {
        "<param>": (REQUIRED, "[lower, upper] for continuous parameters or {values: [...]} for discrete ones"),
    },
    "abc": {
        "epsilon": (REQUIRED, "tolerance or list of tolerances"),
        "m": (10_000, "accepted draws per run"),
        "max_proposals": (10_000_000, "proposal budget per run"),
        "distance": ("euclidean", "euclidean | pilot | {scale: [...]}"),
        "kernel": ("indicator", "indicator | truncated_gaussian"),
        "tolerance": ("absolute", "absolute (epsilon is a radius) | quantile (epsilon is the accepted fraction)"),
        "screen": (False, "allow early rejection inside model simulators"),
        "batch_size": (None, "proposals per batch; null uses the model default"),
    },
    "kde": {
        "bandwidth": ("silverman", "silverman | lscv (one parameter only)"),
        "n_starts": (50, "mean-shift starting points"),
        "surface_points": (0, "grid points per axis for a KDE surface of replicate 0 (0 disables)"),
    },
    "curve": {
        "grid": (None, "{param: [lower, upper, points]} for the `surface` verb"),
        "epsilon": (None, "tolerances for the curve; defaults to abc.epsilon"),
        "n_sims": (100_000, "simulations per grid point"),
    },
    "replicates": (1, "number of independent AMLE runs"),
    "seed": (1, "master seed"),
    "output": ("out", "output directory"),
}


@dataclass(frozen=True)
class DataSpec:
    file: Path | None = None
    kind: str = "real"
    theta: dict | None = None
    seed: int = 0
    require: dict = field(default_factory=dict)
    max_attempts: int = 100_000
    fresh: bool = False


@dataclass(frozen=True)
class CurveSpec:
    grid: dict
    epsilons: tuple
    n_sims: int


@dataclass(frozen=True)
class ExperimentConfig:
    path: Path | None
    digest: str
    model_name: str
    model_options: dict
    model: object
    space: ParameterSpace
    data: DataSpec
    epsilons: tuple
    abc: AbcConfig
    bandwidth: str
    n_starts: int
    surface_points: int
    replicates: int
    seed: int
    output: Path
    curve: CurveSpec | None

    def rng_seed(self) -> RngSeed:
        return RngSeed(self.seed)


def build_model(name: str, opts: dict):
    if name == "binomial":
        return BinomialModel(n=opts["n"], size=opts["size"])
    if name == "normal":
        return NormalModel(n=opts["n"])
    if name == "stable":
        return StableModel(n=opts["n"], grid=EcfGrid(tuple(opts["grid"])), beta=opts["beta"])
    if name == "superposed":
        return SuperposedGammaModel(t0=opts["t0"], include_skewness=opts["skewness"])
    if name == "locscale":
        return LocationScaleQuantileModel(n=opts["n"], q=tuple(opts["q"]), mapped=opts["mapped"])
    raise AmleError(f"unknown model {name!r}")


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


class _Checker:
    def __init__(self):
        self.errors = []

    def err(self, where, msg):
        self.errors.append(f"{where}: {msg}")

    def section(self, raw, key) -> dict:
        v = raw.get(key, {})
        if v is None:
            return {}
        if not isinstance(v, dict):
            self.err(key, "must be a mapping")
            return {}
        return v

    def unknown(self, where, got: dict, allowed):
        for k in got:
            if k not in allowed:
                self.err(f"{where}.{k}" if where else str(k), "unknown key")

    def number(self, where, v, positive=False, integer=False, minimum=None):
        ok = _is_int(v) if integer else _is_num(v)
        if not ok:
            self.err(where, f"expected {'an integer' if integer else 'a number'}, got {v!r}")
            return False
        if positive and not v > 0:
            self.err(where, f"must be positive, got {v!r}")
            return False
        if minimum is not None and v < minimum:
            self.err(where, f"must be >= {minimum}, got {v!r}")
            return False
        return True


def load_config_text(text: str, path: Path | None = None) -> ExperimentConfig:
    """Validate YAML text; raises :class:`ConfigError` listing every problem."""
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"YAML syntax: {exc}"]) from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a mapping"])
    c = _Checker()
    c.unknown("", raw, SCHEMA)
    base = path.parent if path is not None else Path.cwd()

    # model
    msec = c.section(raw, "model")
    name = msec.get("name")
    opts = {}
    param_names = None
    if name is None:
        c.err("model.name", "missing required key")
    elif not isinstance(name, str) or name not in MODEL_PARAMS:
        c.err("model.name", f"unknown model {name!r}; expected one of {sorted(MODEL_PARAMS)}")
        name = None
    else:
        table = MODEL_PARAMS[name]
        before = len(c.errors)
        c.unknown("model", msec, ["name", *table])
        opts = {k: msec.get(k, d) for k, (d, _) in table.items()}
        param_names = _param_names(name, opts)
        _check_model_opts(c, name, opts)
        if len(c.errors) > before:
            name = None
    model = None
    if name is not None:
        try:
            model = build_model(name, opts)
        except AmleError as exc:
            c.err("model", str(exc))

    # prior
    psec = c.section(raw, "prior")
    space = None
    if param_names is not None:
        space = _check_prior(c, psec, param_names)

    # abc
    asec = c.section(raw, "abc")
    c.unknown("abc", asec, SCHEMA["abc"])
    eps = asec.get("epsilon")
    epsilons = ()
    if eps is None:
        c.err("abc.epsilon", "missing required key")
    else:
        lst = eps if isinstance(eps, list) else [eps]
        if not lst:
            c.err("abc.epsilon", "must not be empty")
        for i, e in enumerate(lst):
            if c.number(f"abc.epsilon[{i}]", e, positive=True):
                epsilons += (float(e),)
        if len(set(epsilons)) != len(epsilons):
            c.err("abc.epsilon", "duplicate tolerances")
    a = {k: asec.get(k, d) for k, (d, _) in SCHEMA["abc"].items() if k != "epsilon"}
    c.number("abc.m", a["m"], integer=True, minimum=1)
    c.number("abc.max_proposals", a["max_proposals"], integer=True, minimum=1)
    if a["batch_size"] is not None:
        c.number("abc.batch_size", a["batch_size"], integer=True, minimum=1)
    if a["kernel"] not in ("indicator", "truncated_gaussian"):
        c.err("abc.kernel", f"unknown kernel {a['kernel']!r}")
    if a["tolerance"] not in ("absolute", "quantile"):
        c.err("abc.tolerance", f"expected absolute or quantile, got {a['tolerance']!r}")
    elif a["tolerance"] == "quantile" and any(e > 1 for e in epsilons):
        c.err("abc.epsilon", "accepted fractions must lie in (0, 1]")
    if not isinstance(a["screen"], bool):
        c.err("abc.screen", "expected true or false")
    dist = _check_distance(c, a["distance"])

    # kde
    ksec = c.section(raw, "kde")
    c.unknown("kde", ksec, SCHEMA["kde"])
    k = {key: ksec.get(key, d) for key, (d, _) in SCHEMA["kde"].items()}
    if k["bandwidth"] not in ("silverman", "lscv"):
        c.err("kde.bandwidth", f"expected silverman or lscv, got {k['bandwidth']!r}")
    c.number("kde.n_starts", k["n_starts"], integer=True, minimum=1)
    c.number("kde.surface_points", k["surface_points"], integer=True, minimum=0)

    # scalars
    replicates = raw.get("replicates", SCHEMA["replicates"][0])
    c.number("replicates", replicates, integer=True, minimum=1)
    seed = raw.get("seed", SCHEMA["seed"][0])
    if c.number("seed", seed, integer=True, minimum=0) and seed >= 2**64:
        c.err("seed", "must fit in 64 bits")
    output = raw.get("output", SCHEMA["output"][0])
    if not isinstance(output, str) or not output:
        c.err("output", "expected a directory path")

    data = _check_data(c, c.section(raw, "data"), base, model)
    curve = _check_curve(c, raw.get("curve"), model, epsilons)

    if c.errors:
        raise ConfigError(c.errors)
    try:
        abc = AbcConfig(
            epsilon=epsilons[0], m_target=a["m"], max_proposals=max(a["max_proposals"], a["m"]),
            distance=dist, kernel=a["kernel"], batch_size=a["batch_size"], screen=a["screen"],
            mode=a["tolerance"],
        )
    except AmleError as exc:
        raise ConfigError([f"abc: {exc}"]) from exc
    digest = hashlib.sha256(text.encode("utf-8")).hexdigest()
    return ExperimentConfig(
        path=path, digest=digest, model_name=name, model_options=opts, model=model, space=space,
        data=data, epsilons=epsilons, abc=abc, bandwidth=k["bandwidth"], n_starts=k["n_starts"],
        surface_points=k["surface_points"], replicates=replicates, seed=seed, output=Path(output), curve=curve,
    )


BUNDLED_DIR = Path(__file__).parent / "configs"


def bundled_configs() -> list:
    """Names of the configs shipped with the package."""
    return sorted(p.stem for p in BUNDLED_DIR.glob("*.yaml"))


def parse_config(path) -> ExperimentConfig:
    """Load a config file; a bare bundled name such as ``binomial_basic`` also works."""
    path = Path(path)
    if not path.exists() and path.parent == Path(".") and path.stem in bundled_configs():
        path = BUNDLED_DIR / f"{path.stem}.yaml"
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"{path}: {exc.strerror or exc}"]) from exc
    return load_config_text(text, path)


def _param_names(name: str, opts: dict) -> tuple:
    """Parameter names a model will have, known before its options are validated."""
    if name == "stable":
        return ("alpha", "mu", "sigma") if opts.get("beta") is not None else ("alpha", "beta", "mu", "sigma")
    return {"binomial": BinomialModel, "normal": NormalModel, "superposed": SuperposedGammaModel,
            "locscale": LocationScaleQuantileModel}[name].param_names


def _check_model_opts(c: _Checker, name: str, o: dict):
    if "n" in o:
        c.number("model.n", o["n"], integer=True, minimum=1)
    if name == "binomial":
        c.number("model.size", o["size"], integer=True, minimum=1)
    elif name == "normal":
        c.number("model.n", o["n"], integer=True, minimum=2)
    elif name == "stable":
        g = o["grid"]
        if not isinstance(g, list) or not g or not all(_is_num(t) and t != 0 for t in g):
            c.err("model.grid", "expected a nonempty list of nonzero numbers")
        if o["beta"] is not None and not (_is_num(o["beta"]) and -1 <= o["beta"] <= 1):
            c.err("model.beta", "expected null or a number in [-1, 1]")
    elif name == "superposed":
        c.number("model.t0", o["t0"], positive=True)
        if not isinstance(o["skewness"], bool):
            c.err("model.skewness", "expected true or false")
    elif name == "locscale":
        q = o["q"]
        if not (isinstance(q, list) and len(q) == 2 and all(_is_num(v) and 0 < v < 1 for v in q) and q[0] != q[1]):
            c.err("model.q", "expected two distinct levels in (0, 1)")
        if not isinstance(o["mapped"], bool):
            c.err("model.mapped", "expected true or false")


def _check_prior(c: _Checker, psec: dict, names) -> ParameterSpace | None:
    c.unknown("prior", psec, names)
    dims = []
    for n in names:
        v = psec.get(n)
        where = f"prior.{n}"
        if v is None:
            c.err(where, "missing required key")
            continue
        if isinstance(v, dict):
            c.unknown(where, v, ["values"])
            vals = v.get("values")
            if not isinstance(vals, list) or not vals or not all(_is_int(x) for x in vals):
                c.err(f"{where}.values", "expected a nonempty list of integers")
                continue
            try:
                dims.append(Discrete(n, tuple(vals)))
            except AmleError as exc:
                c.err(where, str(exc))
        elif isinstance(v, list) and len(v) == 2 and all(_is_num(x) for x in v):
            try:
                dims.append(Continuous(n, v[0], v[1]))
            except AmleError as exc:
                c.err(where, str(exc))
        else:
            c.err(where, "expected [lower, upper] or {values: [...]}")
    if len(dims) != len(names):
        return None
    return ParameterSpace(tuple(dims))


def _check_distance(c: _Checker, d):
    if d in ("euclidean", "pilot"):
        return DistanceSpec(d)
    if isinstance(d, dict):
        c.unknown("abc.distance", d, ["scale"])
        sc = d.get("scale")
        if isinstance(sc, list) and sc and all(_is_num(s) and s > 0 for s in sc):
            return DistanceSpec("weighted", tuple(float(s) for s in sc))
        c.err("abc.distance.scale", "expected a list of positive numbers")
        return DistanceSpec()
    c.err("abc.distance", f"expected euclidean, pilot or {{scale: [...]}}, got {d!r}")
    return DistanceSpec()


def _check_data(c: _Checker, d: dict, base: Path, model) -> DataSpec | None:
    c.unknown("data", d, SCHEMA["data"])
    has_file = d.get("file") is not None
    has_gen = d.get("generate") is not None
    if has_file == has_gen:
        c.err("data", "exactly one of `file` or `generate` is required")
        return None
    fresh = d.get("fresh", False)
    if not isinstance(fresh, bool):
        c.err("data.fresh", "expected true or false")
    if has_file:
        kind = d.get("kind", "real")
        if kind not in ("real", "events", "returns"):
            c.err("data.kind", f"expected real, events or returns, got {kind!r}")
        if fresh:
            c.err("data.fresh", "only valid with `generate`")
        p = Path(d["file"])
        if not p.is_absolute():
            p = base / p
        if not p.is_file():
            c.err("data.file", f"file not found: {p}")
        return DataSpec(file=p, kind=kind)
    g = d["generate"]
    if not isinstance(g, dict):
        c.err("data.generate", "must be a mapping")
        return None
    c.unknown("data.generate", g, ["theta", "seed", "require", "max_attempts"])
    theta = g.get("theta")
    if not isinstance(theta, dict):
        c.err("data.generate.theta", "expected a mapping of parameter values")
        theta = {}
    elif model is not None:
        c.unknown("data.generate.theta", theta, model.param_names)
        for n in model.param_names:
            if n not in theta:
                c.err(f"data.generate.theta.{n}", "missing required key")
            else:
                c.number(f"data.generate.theta.{n}", theta[n])
    seed = g.get("seed", 0)
    c.number("data.generate.seed", seed, integer=True, minimum=0)
    req = g.get("require") or {}
    if not isinstance(req, dict):
        c.err("data.generate.require", "must be a mapping")
        req = {}
    c.unknown("data.generate.require", req, ["statistic", "tol", "events"])
    if "statistic" in req:
        st = req["statistic"]
        if not isinstance(st, list) or not all(_is_num(v) for v in st):
            c.err("data.generate.require.statistic", "expected a list of numbers")
        elif model is not None and len(st) != model.statistic_dim:
            c.err("data.generate.require.statistic", f"expected {model.statistic_dim} values")
        c.number("data.generate.require.tol", req.get("tol"), positive=True)
    if "events" in req:
        c.number("data.generate.require.events", req["events"], integer=True, minimum=0)
    attempts = g.get("max_attempts", 100_000)
    c.number("data.generate.max_attempts", attempts, integer=True, minimum=1)
    return DataSpec(theta=theta, seed=seed, require=req, max_attempts=attempts, fresh=bool(fresh))


def _check_curve(c: _Checker, raw, model, epsilons) -> CurveSpec | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        c.err("curve", "must be a mapping")
        return None
    c.unknown("curve", raw, SCHEMA["curve"])
    grid = raw.get("grid")
    out = {}
    if not isinstance(grid, dict):
        c.err("curve.grid", "expected {param: [lower, upper, points]}")
    elif model is not None:
        c.unknown("curve.grid", grid, model.param_names)
        for n in model.param_names:
            v = grid.get(n)
            if not (isinstance(v, list) and len(v) == 3 and _is_num(v[0]) and _is_num(v[1])
                    and _is_int(v[2]) and v[2] >= 1):
                c.err(f"curve.grid.{n}", "expected [lower, upper, points]")
            else:
                out[n] = (float(v[0]), float(v[1]), int(v[2]))
    eps = raw.get("epsilon")
    ce = epsilons
    if eps is not None:
        lst = eps if isinstance(eps, list) else [eps]
        ce = tuple(float(e) for i, e in enumerate(lst) if c.number(f"curve.epsilon[{i}]", e, positive=True))
    n_sims = raw.get("n_sims", SCHEMA["curve"]["n_sims"][0])
    c.number("curve.n_sims", n_sims, integer=True, minimum=1)
    return CurveSpec(out, ce, n_sims)


def curve_grid(cfg: ExperimentConfig) -> np.ndarray:
    """Tensor grid of parameter vectors for the likelihood curve."""
    axes = [np.linspace(*cfg.curve.grid[n]) for n in cfg.model.param_names]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([g.ravel() for g in mesh])


def _fmt_default(v) -> str:
    if v is REQUIRED:
        return "required"
    return "`" + yaml.safe_dump(v, default_flow_style=True).strip().removesuffix("...").strip() + "`"


def reference_doc() -> str:
    """Markdown reference of every config key and default."""
    lines = ["# Experiment config reference", "",
             "Configs are YAML. Unknown keys are errors. Relative data paths resolve against the config file.",
             "Bundled configs can be named without a path: " + ", ".join(bundled_configs()) + ".", ""]
    for sec, body in SCHEMA.items():
        if isinstance(body, tuple):
            lines.append(f"- `{sec}` ({_fmt_default(body[0])}): {body[1]}")
    lines.append("")
    for sec, body in SCHEMA.items():
        if isinstance(body, dict):
            lines += [f"## `{sec}`", "", "| key | default | meaning |", "|---|---|---|"]
            for k, (d, doc) in body.items():
                lines.append(f"| `{k}` | {_fmt_default(d)} | {doc} |")
            lines.append("")
    lines += ["## Model options", ""]
    for name, table in MODEL_PARAMS.items():
        lines += [f"### `{name}`", "", "| key | default | meaning |", "|---|---|---|"]
        for k, (d, doc) in table.items():
            lines.append(f"| `{k}` | {_fmt_default(d)} | {doc} |")
        lines.append("")
    return "\n".join(lines)


def load_observation(cfg: ExperimentConfig):
    """Dataset named by a file-backed config."""
    if cfg.data.kind == "returns":
        return load_returns_csv(cfg.data.file)
    return read_dataset(cfg.data.file, cfg.data.kind)

"""Simulators and summary statistics for the built-in experiment models.

Every model pairs a data simulator with a summary statistic and exposes a
vectorised ``simulate_statistics`` used by the ABC engine.  Where the
statistic has a cheap exact sampling distribution (binomial sums, normal
sufficient statistics, order statistics) the batch path samples it directly
instead of materialising every pseudo-dataset; the per-dataset path
``statistic(simulate(theta))`` stays available and is checked against it in
the tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy import special, stats

from .core import EventTimes, RealSample
from .errors import AmleError, DimensionError, InsufficientDataError

__all__ = [
    "ModelSpec",
    "BinomialModel",
    "NormalModel",
    "StableModel",
    "SuperposedGammaModel",
    "LocationScaleQuantileModel",
    "EcfGrid",
    "DEFAULT_ECF_GRID",
    "simulate_binomial",
    "simulate_normal",
    "simulate_stable",
    "simulate_superposed_gamma",
    "stat_mean",
    "stat_mean_sd",
    "ecf_statistic",
    "stats_superposed",
    "quantile_stat",
    "locscale_g_inverse",
    "locscale_lipschitz",
    "load_returns_csv",
]


def _flat(x) -> np.ndarray:
    if isinstance(x, RealSample):
        return x.values
    return np.asarray(x, dtype=float).ravel()


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------


def stat_mean(x) -> np.ndarray:
    v = _flat(x)
    if v.size == 0:
        raise InsufficientDataError("mean of an empty sample")
    return np.array([v.mean()])


def stat_mean_sd(x) -> np.ndarray:
    """``(mean, sd)`` with the ``n - 1`` divisor."""
    v = _flat(x)
    if v.size < 2:
        raise InsufficientDataError("sample sd needs at least two observations")
    return np.array([v.mean(), v.std(ddof=1)])


@dataclass(frozen=True)
class EcfGrid:
    """Nonzero, duplicate-free evaluation points for the empirical characteristic function."""

    t_values: tuple

    def __post_init__(self):
        t = tuple(float(v) for v in self.t_values)
        if not t:
            raise AmleError("ECF grid is empty")
        if any(v == 0 for v in t):
            raise AmleError("ECF grid must not contain t = 0")
        if len(set(t)) != len(t):
            raise AmleError("ECF grid has duplicate points")
        object.__setattr__(self, "t_values", t)

    def __len__(self):
        return len(self.t_values)


DEFAULT_ECF_GRID = EcfGrid((-250, -200, -100, -50, -10, 10, 50, 100, 200, 250))


def _int_power(z: np.ndarray, k: int) -> np.ndarray:
    result = None
    base = z
    while k:
        if k & 1:
            result = base if result is None else result * base
        k >>= 1
        if k:
            base = base * base
    return result


def _grid_multiples(grid: EcfGrid):
    """``(step, mults)`` when every ``|t|`` is a small integer multiple of the smallest, else None."""
    mags = np.unique(np.abs(np.asarray(grid.t_values, dtype=float)))
    mult = mags / mags[0]
    if np.allclose(mult, np.round(mult)) and mult.max() <= 64:
        return float(mags[0]), np.round(mult).astype(np.int64)
    return None


def _ecf_columns(grid: EcfGrid, lookup: dict) -> np.ndarray:
    """Interleave (cos, sin) columns in grid order from ECF values keyed by ``|t|``."""
    cols = []
    for tv in grid.t_values:
        phi = lookup[abs(float(tv))]
        cols.append(phi.real)
        cols.append(phi.imag if tv > 0 else -phi.imag)
    return np.stack(cols, axis=-1)


def _ecf_batch(x: np.ndarray, grid: EcfGrid) -> np.ndarray:
    """ECF rows for a ``(k, n)`` batch; output ``(k, 2 * len(grid))``, (cos, sin) per t."""
    mags = np.unique(np.abs(np.asarray(grid.t_values, dtype=float)))
    mm = _grid_multiples(grid)
    if mm is not None:
        # one complex exponential, then integer powers
        step, mults = mm
        z = np.exp(1j * step * x)
        lookup = {float(a): _int_power(z, int(k)).mean(axis=-1) for a, k in zip(mags, mults)}
    else:
        lookup = {float(a): np.exp(1j * a * x).mean(axis=-1) for a in mags}
    return _ecf_columns(grid, lookup)


# fast-math without the no-NaN/no-inf assumptions: heavy tails can overflow
_FAST = {"nsz", "arcp", "contract", "afn", "reassoc"}


@numba.njit(cache=True, fastmath=_FAST)
def _symmetric_stable_ecf(rng, alpha, mu, sigma, n, step, mults):
    """Simulate symmetric stable samples row by row and return their mean ``exp(i t x)``.

    Chambers-Mallows-Stuck with ``beta = 0`` rewritten as
    ``sin(a V) / cos V * (cos((1 - a) V) / (W cos V)) ** ((1 - a) / a)``;
    ``t = step * mults``.
    """
    k = alpha.shape[0]
    nm = mults.shape[0]
    re = np.zeros((k, nm))
    im = np.zeros((k, nm))
    for i in range(k):
        a = alpha[i]
        ex = (1.0 - a) / a
        for _ in range(n):
            v = np.pi * (rng.random() - 0.5)
            w = rng.standard_exponential()
            cv = math.cos(v)
            x = mu[i] + sigma[i] * (math.sin(a * v) / cv * (math.cos(v - a * v) / (w * cv)) ** ex)
            zr = math.cos(step * x)
            zi = math.sin(step * x)
            pr, pi_ = 1.0, 0.0
            prev = 0
            for q in range(nm):
                # multiply the running power by z ** (mults[q] - prev)
                e = mults[q] - prev
                br, bi = zr, zi
                rr, ri = 1.0, 0.0
                while e > 0:
                    if e & 1:
                        rr, ri = rr * br - ri * bi, rr * bi + ri * br
                    e >>= 1
                    if e > 0:
                        br, bi = br * br - bi * bi, 2.0 * br * bi
                pr, pi_ = pr * rr - pi_ * ri, pr * ri + pi_ * rr
                prev = mults[q]
                re[i, q] += pr
                im[i, q] += pi_
    return re / n, im / n


def ecf_statistic(x, grid: EcfGrid = DEFAULT_ECF_GRID) -> np.ndarray:
    """Real and imaginary ECF parts at each grid point, concatenated in grid order."""
    v = _flat(x)
    if v.size == 0:
        raise InsufficientDataError("ECF of an empty sample")
    t = np.asarray(grid.t_values)[:, None]
    tx = t * v[None, :]
    return np.column_stack([np.cos(tx).mean(axis=1), np.sin(tx).mean(axis=1)]).ravel()


DISPERSION_WINDOWS = (1.0, 5.0, 10.0, 20.0)
MIN_EVENTS = 7


def _superposed_stats_padded(times: np.ndarray, t0: float, include_skewness: bool) -> np.ndarray:
    """Statistics for a batch of sorted event rows padded with ``inf``.

    Rows with fewer than ``MIN_EVENTS`` events come back as NaN.
    """
    times = np.atleast_2d(times)
    k = times.shape[0]
    finite = np.isfinite(times)
    count = finite.sum(axis=1)
    with np.errstate(invalid="ignore"):
        iv = np.diff(times, axis=1)
    valid = np.isfinite(iv)
    ni = valid.sum(axis=1)
    ok = count >= MIN_EVENTS
    ni_safe = np.where(ok, ni, 2)

    ivz = np.where(valid, iv, 0.0)
    mean_iv = ivz.sum(axis=1) / ni_safe
    dev = np.where(valid, iv - mean_iv[:, None], 0.0)
    ss = (dev**2).sum(axis=1)
    sd = np.sqrt(ss / (ni_safe - 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        cv = sd / mean_iv
    ss_safe = np.where(ss > 0, ss, 1.0)
    acf = np.zeros(k)
    for lag in range(1, 6):
        acf += (dev[:, lag:] * dev[:, :-lag]).sum(axis=1) / ss_safe
    acf = np.where(ss > 0, acf, 0.0)

    cols = [count / t0, cv, acf, mean_iv]
    rows = np.arange(k)[:, None]
    for L in DISPERSION_WINDOWS:
        nb = int(t0 // L)
        if nb < 2:
            raise AmleError(f"horizon {t0} too short for dispersion window {L}")
        with np.errstate(invalid="ignore"):
            b = np.floor(times / L)
        inside = finite & (b < nb)
        idx = (np.where(inside, b, 0).astype(np.int64) + nb * rows)[inside]
        c = np.bincount(idx, minlength=nb * k).reshape(k, nb)
        mc = c.mean(axis=1)
        vc = c.var(axis=1, ddof=1)
        cols.append(np.where(mc > 0, vc / np.where(mc > 0, mc, 1.0), 0.0))
    if include_skewness:
        m2 = ss / ni_safe
        with np.errstate(divide="ignore", invalid="ignore"):
            sk = (dev**3).sum(axis=1) / m2**1.5
        cols.append(np.where(ss > 0, sk, 0.0))
    out = np.column_stack(cols)
    out[~ok] = np.nan
    return out


def stats_superposed(x: EventTimes, include_skewness: bool = True) -> np.ndarray:
    """Point-process summaries of an event sequence.

    Order: mean rate, CV of intervals, sum of lag 1..5 interval
    autocorrelations, mean interval, dispersion index for windows 1, 5, 10, 20,
    and optionally the interval skewness ``sum(d^3) / (sum(d^2)/n)^1.5``.
    """
    if len(x) < MIN_EVENTS:
        raise InsufficientDataError(f"need at least {MIN_EVENTS} events, got {len(x)}")
    return _superposed_stats_padded(x.times[None, :], x.t0, include_skewness)[0]


def quantile_stat(x, q1: float, q2: float) -> np.ndarray:
    """Empirical quantiles at ``q1 < q2`` with linear interpolation between order statistics."""
    if not 0 < q1 < q2 < 1:
        raise AmleError(f"need 0 < q1 < q2 < 1, got ({q1}, {q2})")
    v = _flat(x)
    if v.size == 0:
        raise InsufficientDataError("quantiles of an empty sample")
    return np.quantile(v, [q1, q2], method="linear")


def locscale_g_inverse(eta1, eta2, ref_quantiles) -> tuple:
    """Map a pair of quantiles back to ``(sigma, mu)`` of a location-scale family."""
    a, b = (float(v) for v in ref_quantiles)
    if a == b:
        raise AmleError("reference quantiles must differ")
    sigma = (np.asarray(eta1) - np.asarray(eta2)) / (a - b)
    mu = np.asarray(eta1) - sigma * a
    return sigma, mu


def locscale_lipschitz(ref_quantiles) -> float:
    """Lipschitz constant (spectral norm) of the linear quantile-to-parameter map."""
    a, b = (float(v) for v in ref_quantiles)
    if a == b:
        raise AmleError("reference quantiles must differ")
    c = a - b
    jac = np.array([[1 / c, -1 / c], [1 - a / c, a / c]])
    return float(np.linalg.norm(jac, 2))


# ---------------------------------------------------------------------------
# Simulators
# ---------------------------------------------------------------------------


def simulate_binomial(theta: float, n: int, size: int = 10, rng=None) -> RealSample:
    if not 0 < theta < 1:
        raise AmleError(f"binomial probability must lie in (0, 1), got {theta}")
    if n < 1:
        raise AmleError("n must be >= 1")
    return RealSample(rng.binomial(size, theta, n).astype(float))


def simulate_normal(mu: float, sigma: float, n: int, rng) -> RealSample:
    if not sigma > 0:
        raise AmleError(f"sigma must be positive, got {sigma}")
    return RealSample(rng.normal(mu, sigma, n))


def _stable_standard(alpha, beta, V, W):
    """Chambers-Mallows-Stuck transform: standard stable variates (1-parameterization)."""
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.all(beta == 0) and np.all(alpha != 1):
        # symmetric case, evaluated in log space
        inv = 1.0 / alpha
        cosv = np.cos(V)
        s = np.sin(alpha * V)
        logmag = np.log(np.abs(s)) - inv * np.log(cosv) + (inv - 1.0) * (np.log(np.cos(V - alpha * V)) - np.log(W))
        return np.copysign(np.exp(logmag), s)
    out = np.empty(np.broadcast(alpha, beta, V).shape)
    alpha, beta, V, W = np.broadcast_arrays(alpha, beta, V, W)
    one = alpha == 1
    a, b, v, w = alpha[~one], beta[~one], V[~one], W[~one]
    tan_pa = np.tan(np.pi * a / 2)
    B = np.arctan(b * tan_pa) / a
    S = (1 + b**2 * tan_pa**2) ** (1 / (2 * a))
    out[~one] = (
        S * np.sin(a * (v + B)) / np.cos(v) ** (1 / a) * (np.cos(v - a * (v + B)) / w) ** ((1 - a) / a)
    )
    b, v, w = beta[one], V[one], W[one]
    h = np.pi / 2 + b * v
    out[one] = (2 / np.pi) * (h * np.tan(v) - b * np.log((np.pi / 2) * w * np.cos(v) / h))
    return out


def _check_stable(alpha, beta, sigma):
    alpha = np.asarray(alpha)
    if np.any(alpha <= 0) or np.any(alpha > 2):
        raise AmleError("stable index alpha must lie in (0, 2]")
    if np.any(np.abs(beta) > 1):
        raise AmleError("stable skewness beta must lie in [-1, 1]")
    if np.any(np.asarray(sigma) <= 0):
        raise AmleError("stable scale must be positive")


def _stable_draws(alpha, beta, mu, sigma, shape, rng):
    V = rng.uniform(-np.pi / 2, np.pi / 2, shape)
    W = rng.standard_exponential(shape)
    Z = _stable_standard(alpha, beta, V, W)
    alpha = np.asarray(alpha, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if np.any(beta != 0):
        # shift into the 0-parameterization, continuous in alpha
        shift = np.where(alpha == 1, 0.0, beta * np.tan(np.pi * alpha / 2))
        Z = Z - shift
    return mu + sigma * Z


def simulate_stable(alpha, beta, mu, sigma, n, rng) -> RealSample:
    """i.i.d. alpha-stable draws; ``beta=0`` gives ``mu + sigma * S`` with ``S`` standard symmetric.

    ``alpha=2`` is Gaussian with variance ``2 sigma^2``; ``alpha=1, beta=0`` is Cauchy.
    """
    _check_stable(alpha, beta, sigma)
    return RealSample(_stable_draws(alpha, beta, mu, sigma, (n,), rng))


def _renewal_times(alpha: float, beta: float, t0: float, rng) -> np.ndarray:
    chunk = max(16, int(1.5 * t0 * beta / alpha) + 16)
    acc = [rng.gamma(alpha, 1.0 / beta, chunk).cumsum()]
    while acc[-1][-1] <= t0:
        acc.append(acc[-1][-1] + rng.gamma(alpha, 1.0 / beta, chunk).cumsum())
    t = np.concatenate(acc)
    return t[t <= t0]


def simulate_superposed_gamma(N: int, alpha: float, beta: float, t0: float, rng) -> EventTimes:
    """Merge ``N`` ordinary renewal processes with Gamma(shape alpha, rate beta) gaps on ``(0, t0]``."""
    if int(N) != N or N < 1:
        raise AmleError(f"number of processes must be a positive integer, got {N}")
    if not (alpha > 0 and beta > 0 and t0 > 0):
        raise AmleError("alpha, beta and t0 must be positive")
    t = np.sort(np.concatenate([_renewal_times(alpha, beta, t0, rng) for _ in range(int(N))]))
    return EventTimes(t, t0)


def _superposed_batch(thetas: np.ndarray, t0: float, rng) -> np.ndarray:
    """Padded ``(k, L)`` matrix of merged sorted event times (``inf`` padding)."""
    N = thetas[:, 0].astype(int)
    a = thetas[:, 1]
    b = thetas[:, 2]
    k = len(thetas)
    nmax = int(N.max())
    lam = t0 * b / a
    K = int(np.ceil((lam + 6 * np.sqrt(lam) + 10).max()))
    shape = np.broadcast_to(a[:, None, None], (k, nmax, K))
    t = np.cumsum(rng.standard_gamma(shape), axis=2) / b[:, None, None]
    short = t[:, :, -1] <= t0
    while short.any():
        rows = np.flatnonzero(short.any(axis=1))
        ext = np.cumsum(rng.standard_gamma(np.broadcast_to(a[rows, None, None], (len(rows), nmax, K))), axis=2)
        ext = ext / b[rows, None, None]
        t_ext = np.full((k, nmax, K), np.inf)
        t_ext[rows] = t[rows, :, -1:] + ext
        t = np.concatenate([t, t_ext], axis=2)
        short = t[:, :, -1] <= t0
    alive = np.arange(nmax)[None, :, None] < N[:, None, None]
    t = np.where(alive & (t <= t0), t, np.inf).reshape(k, -1)
    t.sort(axis=1)
    width = int(np.isfinite(t).sum(axis=1).max()) if k else 0
    return t[:, : max(width, 1)]


def load_returns_csv(path) -> RealSample:
    """Prices, one per row (a non-numeric header line is skipped), as log-returns."""
    prices = []
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        cell = ln.strip().split(",")[-1].strip()
        if not cell or cell.startswith("#"):
            continue
        try:
            prices.append(float(cell))
        except ValueError:
            if prices:
                raise AmleError(f"{path}: non-numeric price {cell!r}")
    p = np.asarray(prices)
    if p.size < 2 or np.any(p <= 0):
        raise AmleError(f"{path}: need at least two positive prices")
    return RealSample(np.diff(np.log(p)))


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class ModelSpec:
    """A simulator paired with a summary statistic.

    Subclasses set ``name``, ``param_names`` and ``statistic_dim`` and
    implement ``simulate`` and ``statistic``.  ``simulate_statistics`` maps a
    ``(k, d)`` array of parameter vectors to a ``(k, statistic_dim)`` array;
    rows whose statistic is uncomputable are NaN.

    ``screen`` (optional) lets a model skip work on proposals that cannot be
    accepted: ``screen.keep(columns, values)`` returns a mask of rows whose
    partial distance over ``columns`` is still inside the tolerance.
    Rejected rows may be returned as NaN.
    """

    name = "model"
    param_names: tuple = ()
    statistic_dim = 1
    batch_size = 4096

    def simulate(self, theta, rng):
        raise NotImplementedError

    def statistic(self, data) -> np.ndarray:
        raise NotImplementedError

    def simulate_statistics(self, thetas, rng, screen=None) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        out = np.full((len(thetas), self.statistic_dim), np.nan)
        for i, th in enumerate(thetas):
            try:
                out[i] = self.statistic(self.simulate(th, rng))
            except InsufficientDataError:
                pass
        return out

    def observe(self, data) -> np.ndarray:
        """Statistic of an observed dataset, checked against ``statistic_dim``."""
        s = np.asarray(self.statistic(data), dtype=float)
        if s.shape != (self.statistic_dim,):
            raise DimensionError(f"{self.name}: statistic has shape {s.shape}, expected ({self.statistic_dim},)")
        return s

    def _check_thetas(self, thetas):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if thetas.shape[1] != len(self.param_names):
            raise DimensionError(f"{self.name}: expected parameters {self.param_names}")
        return thetas

    def __repr__(self):
        return f"{type(self).__name__}({self.name})"


class BinomialModel(ModelSpec):
    """``n`` i.i.d. Binomial(size, p) counts summarised by their mean."""

    param_names = ("p",)
    statistic_dim = 1
    batch_size = 1 << 16

    def __init__(self, n: int = 30, size: int = 10):
        if n < 1 or size < 1:
            raise AmleError("n and size must be >= 1")
        self.n = int(n)
        self.size = int(size)
        self.name = f"binomial(n={self.n},size={self.size})"

    def simulate(self, theta, rng):
        return simulate_binomial(float(np.ravel(theta)[0]), self.n, self.size, rng)

    def statistic(self, data):
        return stat_mean(data)

    def simulate_statistics(self, thetas, rng, screen=None):
        p = self._check_thetas(thetas)[:, 0]
        # the sum of n Binomial(size, p) counts is Binomial(n * size, p)
        return (rng.binomial(self.n * self.size, p) / self.n)[:, None]


@numba.njit(cache=True)
def _normal_mean_screen(rng, mu, sigma, inv_root_n, target, halfwidth):
    k = mu.shape[0]
    xbar = np.empty(k)
    keep = np.empty(k, dtype=np.bool_)
    for i in range(k):
        x = mu[i] + sigma[i] * inv_root_n * rng.standard_normal()
        xbar[i] = x
        keep[i] = abs(x - target) < halfwidth
    return xbar, keep


class NormalModel(ModelSpec):
    """``n`` i.i.d. N(mu, sigma^2) draws summarised by ``(mean, sd)``.

    The batch path samples the sufficient statistics exactly:
    ``mean ~ N(mu, sigma^2/n)`` and ``(n-1) sd^2 / sigma^2 ~ chi2(n-1)``,
    independently.
    """

    param_names = ("mu", "sigma")
    statistic_dim = 2
    batch_size = 1 << 16

    def __init__(self, n: int = 100):
        if n < 2:
            raise AmleError("n must be >= 2 for the sample sd")
        self.n = int(n)
        self.name = f"normal(n={self.n})"

    def simulate(self, theta, rng):
        mu, sigma = np.ravel(theta)[:2]
        return simulate_normal(mu, sigma, self.n, rng)

    def statistic(self, data):
        return stat_mean_sd(data)

    def _sd_draw(self, sigma, rng):
        half = (self.n - 1) / 2.0
        return sigma * np.sqrt(rng.standard_gamma(half, sigma.shape) / half)

    def simulate_statistics(self, thetas, rng, screen=None):
        thetas = self._check_thetas(thetas)
        mu = np.ascontiguousarray(thetas[:, 0])
        sigma = np.ascontiguousarray(thetas[:, 1])
        if screen is None:
            xbar = mu + sigma / math.sqrt(self.n) * rng.standard_normal(len(mu))
            return np.column_stack([xbar, self._sd_draw(sigma, rng)])
        # two stages: the sd is only drawn for proposals whose mean alone is close enough
        target, halfwidth = screen.interval(0)
        xbar, keep = _normal_mean_screen(rng, mu, sigma, 1.0 / math.sqrt(self.n), target, halfwidth)
        out = np.full((len(mu), 2), np.nan)
        rows = np.flatnonzero(keep)
        out[rows, 0] = xbar[rows]
        out[rows, 1] = self._sd_draw(sigma[rows], rng)
        return out


class StableModel(ModelSpec):
    """Alpha-stable sample of size ``n`` summarised by its empirical characteristic function.

    With ``beta`` fixed (default 0) the parameters are ``(alpha, mu, sigma)``;
    pass ``beta=None`` to estimate it too, giving ``(alpha, beta, mu, sigma)``.
    """

    batch_size = 128

    def __init__(self, n: int = 750, grid: EcfGrid = DEFAULT_ECF_GRID, beta: float | None = 0.0):
        self.n = int(n)
        self.grid = grid
        self.beta = beta
        self.param_names = ("alpha", "mu", "sigma") if beta is not None else ("alpha", "beta", "mu", "sigma")
        self.statistic_dim = 2 * len(grid)
        self.name = f"stable(n={self.n},beta={'free' if beta is None else beta})"

    def _split(self, thetas):
        if self.beta is None:
            return thetas[:, 0], thetas[:, 1], thetas[:, 2], thetas[:, 3]
        return thetas[:, 0], np.full(len(thetas), float(self.beta)), thetas[:, 1], thetas[:, 2]

    def simulate(self, theta, rng):
        a, b, m, s = (v[0] for v in self._split(np.atleast_2d(np.asarray(theta, dtype=float))))
        return simulate_stable(a, b, m, s, self.n, rng)

    def statistic(self, data):
        return ecf_statistic(data, self.grid)

    def simulate_statistics(self, thetas, rng, screen=None):
        thetas = self._check_thetas(thetas)
        a, b, m, s = self._split(thetas)
        _check_stable(a, b, s)
        mm = _grid_multiples(self.grid)
        if mm is not None and np.all(b == 0):
            step, mults = mm
            re, im = _symmetric_stable_ecf(rng, np.ascontiguousarray(a), np.ascontiguousarray(m),
                                           np.ascontiguousarray(s), self.n, step, mults)
            mags = np.unique(np.abs(np.asarray(self.grid.t_values, dtype=float)))
            return _ecf_columns(self.grid, {float(g): re[:, q] + 1j * im[:, q] for q, g in enumerate(mags)})
        x = _stable_draws(a[:, None], b[:, None], m[:, None], s[:, None], (len(thetas), self.n), rng)
        return _ecf_batch(x, self.grid)


class SuperposedGammaModel(ModelSpec):
    """``N`` superposed gamma renewal processes on ``(0, t0]``; parameters ``(N, alpha, beta)``."""

    param_names = ("N", "alpha", "beta")
    batch_size = 1024

    def __init__(self, t0: float = 420.0, include_skewness: bool = True):
        self.t0 = float(t0)
        self.include_skewness = bool(include_skewness)
        self.statistic_dim = 9 if include_skewness else 8
        self.name = f"superposed(t0={self.t0:g},stats={self.statistic_dim})"

    def simulate(self, theta, rng):
        N, a, b = np.ravel(theta)[:3]
        return simulate_superposed_gamma(int(N), a, b, self.t0, rng)

    def statistic(self, data):
        return stats_superposed(data, self.include_skewness)

    def simulate_statistics(self, thetas, rng, screen=None):
        thetas = self._check_thetas(thetas)
        times = _superposed_batch(thetas, self.t0, rng)
        return _superposed_stats_padded(times, self.t0, self.include_skewness)


class LocationScaleQuantileModel(ModelSpec):
    """Location-scale sample summarised by two empirical quantiles.

    ``F0`` is any scipy distribution with a ``ppf`` (standard normal by
    default).  With ``mapped=True`` the statistic is passed through the
    closed-form inverse map and becomes ``(sigma_hat, mu_hat)``.
    The batch path draws the four order statistics the interpolated quantiles
    need from their exact joint law (sequential beta spacings), so cost does
    not grow with ``n``.
    """

    param_names = ("mu", "sigma")
    statistic_dim = 2
    batch_size = 1 << 14

    def __init__(self, n: int = 100_000, q=(0.25, 0.75), F0=stats.norm, mapped: bool = False):
        q1, q2 = (float(v) for v in q)
        if not 0 < q1 < q2 < 1:
            raise AmleError(f"need 0 < q1 < q2 < 1, got {q}")
        self.n = int(n)
        self.q = (q1, q2)
        self.F0 = F0
        self.ref = (float(F0.ppf(q1)), float(F0.ppf(q2)))
        if self.ref[0] == self.ref[1]:
            raise AmleError("reference quantiles coincide")
        self.mapped = bool(mapped)
        self.name = f"locscale(n={self.n},q={self.q},mapped={self.mapped})"

    @property
    def lipschitz(self) -> float:
        """Constant of the statistic-to-parameter map (1 for mapped statistics)."""
        return 1.0 if self.mapped else locscale_lipschitz(self.ref)

    def _finish(self, eta):
        if not self.mapped:
            return eta
        sigma, mu = locscale_g_inverse(eta[..., 0], eta[..., 1], self.ref)
        return np.stack([sigma, mu], axis=-1)

    def simulate(self, theta, rng):
        mu, sigma = np.ravel(theta)[:2]
        return RealSample(mu + sigma * self.F0.ppf(rng.random(self.n)))

    def statistic(self, data):
        return self._finish(quantile_stat(data, *self.q))

    def _ppf(self, u):
        if self.F0 is stats.norm:
            return special.ndtri(u)
        return self.F0.ppf(u)

    def simulate_statistics(self, thetas, rng, screen=None):
        thetas = self._check_thetas(thetas)
        k, n = len(thetas), self.n
        h = [(n - 1) * q for q in self.q]
        lo = [int(math.floor(v)) for v in h]
        ranks = sorted({r for j in lo for r in (j + 1, min(j + 2, n))})  # 1-based
        u = {}
        prev_rank, prev_u = 0, np.zeros(k)
        for r in ranks:
            gap = rng.beta(r - prev_rank, n - r + 1, k)
            cur = prev_u + (1.0 - prev_u) * gap
            u[r] = cur
            prev_rank, prev_u = r, cur
        x = {r: thetas[:, 0] + thetas[:, 1] * self._ppf(v) for r, v in u.items()}
        eta = np.empty((k, 2))
        for i, (j, hv) in enumerate(zip(lo, h)):
            frac = hv - j
            x_lo = x[j + 1]
            x_hi = x[min(j + 2, n)]
            eta[:, i] = x_lo + frac * (x_hi - x_lo)
        return self._finish(eta)

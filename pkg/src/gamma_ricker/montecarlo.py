"""Monte-Carlo ensembles of the raw stochastic Ricker map X' = X exp(r(1 - X)) eps.

Trajectories are processed in fixed blocks of ``BLOCK`` members. Each block
draws from its members' own counter-based streams and reduces its statistics
locally; block summaries are then merged in block order. Neither the draws
nor the arithmetic depend on how blocks are spread over threads, so output
is bit-identical for any thread count.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import rng as rngmod
from .errors import DomainError, UndefinedCV, require_positive
from .gamma_kernels import GammaShape, gamma_cdf, gamma_from_moments
from .moment_map import MomentState, Params, iterate

BLOCK = 8192
OVERFLOW_LIMIT = 1e308
HIST_QUANTILE = 0.999
TAIL_LEVEL = 0.95


# --- samplers ------------------------------------------------------------------

def _mt_constants(k):
    d = k - 1.0 / 3.0
    return d, 1.0 / math.sqrt(9.0 * d)


def sample_gamma(shape: GammaShape, rng) -> float:
    """One Gamma(k, theta) variate by Marsaglia-Tsang squeeze/rejection.

    ``rng`` needs ``standard_normal()`` and ``random()`` (a numpy Generator or a
    :class:`~gamma_ricker.rng.SplitMixStream`). Shapes below 1 are boosted:
    Gamma(k) = Gamma(k + 1) * U**(1/k).
    """
    k = shape.k
    boost = k < 1.0
    d, c = _mt_constants(k + 1.0 if boost else k)
    while True:
        x = rng.standard_normal()
        u = rng.random()
        t = 1.0 + c * x
        if t <= 0:
            continue
        v = t * t * t
        if u < 1.0 - 0.0331 * x**4 or math.log(u) < 0.5 * x * x + d * (1.0 - v + math.log(v)):
            break
    g = d * v
    if boost:
        g *= rng.random() ** (1.0 / k)
    return g * shape.theta


def gamma_array(shape: GammaShape, keys) -> np.ndarray:
    """Vectorised :func:`sample_gamma`: member ``i`` reads only its own stream ``keys[i]``.

    Attempt ``j`` uses counters ``2j`` (normal) and ``2j + 1`` (uniform), exactly as a
    :class:`SplitMixStream` would consume them, so the two routes agree bit for bit.
    """
    keys = np.asarray(keys, dtype=np.uint64)
    k = shape.k
    boost = k < 1.0
    d, c = _mt_constants(k + 1.0 if boost else k)
    out = np.empty(len(keys))
    attempt = np.zeros(len(keys), dtype=np.uint64)
    todo = np.arange(len(keys))
    while todo.size:
        kk = keys[todo]
        a = attempt[todo]
        x = rngmod.normals(kk, 2 * a)
        u = rngmod.uniforms(kk, 2 * a + np.uint64(1))
        t = 1.0 + c * x
        v = t * t * t
        with np.errstate(invalid="ignore", divide="ignore"):
            ok = (t > 0) & (
                (u < 1.0 - 0.0331 * x**4) | (np.log(u) < 0.5 * x * x + d * (1.0 - v + np.log(v)))
            )
        out[todo[ok]] = d * v[ok]
        attempt[todo] += np.uint64(1)
        todo = todo[~ok]
    if boost:
        out *= rngmod.uniforms(keys, 2 * attempt) ** (1.0 / k)
    return out * shape.theta


def _lognormal_from_normal(v, z):
    sigma2 = math.log(v)
    return np.exp(math.sqrt(sigma2) * z - 0.5 * sigma2)


def sample_lognormal_noise(v, rng) -> float:
    """exp(sigma Z - sigma^2/2) with sigma^2 = ln v, so E[eps] = 1 and E[eps^2] = v."""
    if not v > 1:
        raise DomainError("v", v, "> 1")
    return float(_lognormal_from_normal(v, rng.standard_normal()))


# Noise models map (v, uniforms) -> factors with mean 1 and second moment v.
def lognormal_noise(v, u):
    return _lognormal_from_normal(v, rngmod.ndtri(u))


def gamma_noise(v, u):
    from scipy.special import gammaincinv

    k = 1.0 / (v - 1.0)
    return gammaincinv(k, u) / k


def no_noise(v, u):
    return np.ones_like(u)


NOISE_MODELS: dict = {"lognormal": lognormal_noise, "gamma": gamma_noise, "none": no_noise}


# --- configuration and results -----------------------------------------------

@dataclass(frozen=True)
class EnsembleConfig:
    p: Params
    n_ens: int = 20000
    t_max: int = 1500
    transient: int = 1000
    collect: int = 500
    seed: int = 0
    init_mu: float = 0.5
    init_s: float = 0.02
    conv_window: int = 100
    conv_tol: float = 1e-4
    hist_bins: int = 200
    noise: str = "lognormal"

    def __post_init__(self):
        if self.n_ens < 1:
            raise DomainError("n_ens", self.n_ens, ">= 1")
        for name in ("t_max", "transient", "collect"):
            if getattr(self, name) < 0:
                raise DomainError(name, getattr(self, name), ">= 0")
        if self.transient + self.collect > self.t_max:
            raise DomainError("transient + collect", self.transient + self.collect, f"<= t_max={self.t_max}")
        if self.collect < 1:
            raise DomainError("collect", self.collect, ">= 1")
        if not 2 <= self.conv_window <= self.t_max + 1:
            raise DomainError("conv_window", self.conv_window, f"in [2, t_max + 1 = {self.t_max + 1}]")
        require_positive("conv_tol", self.conv_tol)
        require_positive("init_mu", self.init_mu)
        require_positive("init_s", self.init_s)
        if self.noise not in NOISE_MODELS:
            raise DomainError("noise", self.noise, f"one of {sorted(NOISE_MODELS)}")

    def to_dict(self):
        d = asdict(self)
        d["p"] = {"r": self.p.r, "v": self.p.v}
        return d


@dataclass
class EnsembleStats:
    mean_series: np.ndarray
    var_series: np.ndarray
    hist_edges: np.ndarray
    hist_density: np.ndarray
    converged: bool
    final_cv: float
    n_excluded: int
    extinct: bool
    stationary_mean: float
    stationary_var: float
    tail_quantile: float
    noise_mean: float
    noise_second_moment: float
    noise_count: int
    config: Optional[EnsembleConfig] = field(default=None, repr=False)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "mean", "var"])
        for n, (m, s) in enumerate(zip(self.mean_series, self.var_series)):
            w.writerow([n, f"{m:.17g}", f"{s:.17g}"])
        return buf.getvalue()

    def to_json_dict(self):
        def num(x):
            x = float(x)
            return x if math.isfinite(x) else None

        return {
            "config": self.config.to_dict() if self.config else None,
            "converged": bool(self.converged),
            "final_cv": num(self.final_cv),
            "n_excluded": int(self.n_excluded),
            "extinct": bool(self.extinct),
            "stationary": {"mean": num(self.stationary_mean), "var": num(self.stationary_var)},
            "noise": {
                "mean": num(self.noise_mean),
                "second_moment": num(self.noise_second_moment),
                "count": int(self.noise_count),
            },
            "histogram": {
                "edges": [float(e) for e in self.hist_edges],
                "density": [float(d) for d in self.hist_density],
            },
        }

    def to_json(self):
        return json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n"


# --- simulation ------------------------------------------------------------------

def convergence_check(mean_series, window, tol):
    """(converged, cv) with cv = sample std / mean over the trailing ``window`` values."""
    series = np.asarray(mean_series, dtype=float)
    if not 2 <= window <= len(series):
        raise DomainError("window", window, f"in [2, {len(series)}]")
    tail = series[-window:]
    m = float(np.mean(tail))
    if not m > 0:
        raise UndefinedCV(f"window mean {m} is not positive")
    cv = float(np.std(tail, ddof=1)) / m
    return cv < tol, cv


def thread_count(threads=None):
    if threads is not None:
        return max(1, int(threads))
    env = os.environ.get("RICKER_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


@dataclass
class _BlockResult:
    count: np.ndarray
    mean: np.ndarray
    m2: np.ndarray
    pooled: np.ndarray
    excluded: int
    noise_sums: tuple
    final_zero: bool


def _run_block(cfg: EnsembleConfig, noise_fn: Callable, lo, hi) -> _BlockResult:
    ids = np.arange(lo, hi, dtype=np.uint64)
    init_keys = rngmod.stream_keys(cfg.seed, ids, rngmod.TAG_INIT)
    noise_keys = rngmod.stream_keys(cfg.seed, ids, rngmod.TAG_NOISE)
    x = gamma_array(gamma_from_moments(cfg.init_mu, cfg.init_s), init_keys)
    r, v = cfg.p.r, cfg.p.v
    steps = cfg.t_max + 1
    count = np.zeros(steps, dtype=np.int64)
    mean = np.zeros(steps)
    m2 = np.zeros(steps)
    first, last = cfg.transient + 1, cfg.transient + cfg.collect
    pooled = np.empty((cfg.collect, hi - lo))
    n_sum = n_sq = 0.0
    n_count = 0

    def record(t):
        good = x[np.isfinite(x)]
        count[t] = good.size
        if good.size:
            mu = good.mean()
            mean[t] = mu
            m2[t] = np.sum((good - mu) ** 2)

    record(0)
    with np.errstate(over="ignore", invalid="ignore", under="ignore"):
        for t in range(cfg.t_max):
            eps = noise_fn(v, rngmod.uniforms(noise_keys, t))
            live = np.isfinite(x)
            e_live = eps[live]
            n_sum += float(np.sum(e_live))
            n_sq += float(np.sum(e_live * e_live))
            n_count += int(e_live.size)
            x = x * np.exp(r * (1.0 - x)) * eps
            x[~(x <= OVERFLOW_LIMIT)] = np.nan
            record(t + 1)
            if first <= t + 1 <= last:
                pooled[t + 1 - first] = x
    final = x[np.isfinite(x)]
    return _BlockResult(
        count, mean, m2, pooled.ravel(), int(np.count_nonzero(~np.isfinite(x))),
        (n_sum, n_sq, n_count), bool(final.size == 0 or np.all(final == 0)),
    )


def _merge(blocks):
    # Chan et al. pairwise update, applied in block order.
    n = blocks[0].count.astype(float)
    mean = blocks[0].mean.copy()
    m2 = blocks[0].m2.copy()
    for b in blocks[1:]:
        nb = b.count.astype(float)
        tot = n + nb
        with np.errstate(invalid="ignore", divide="ignore"):
            delta = b.mean - mean
            frac = np.where(tot > 0, nb / tot, 0.0)
            mean = mean + delta * frac
            m2 = m2 + b.m2 + delta * delta * n * frac
        n = tot
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(n > 0, m2 / n, np.nan)
        mean = np.where(n > 0, mean, np.nan)
    return mean, var


def run_ensemble(cfg: EnsembleConfig, threads=None, noise_fn: Optional[Callable] = None) -> EnsembleStats:
    """Simulate ``cfg.n_ens`` trajectories; see the module docstring for the determinism contract.

    ``noise_fn(v, u)`` overrides the configured noise model; it receives uniforms in (0, 1).
    """
    fn = noise_fn or NOISE_MODELS[cfg.noise]
    bounds = [(lo, min(lo + BLOCK, cfg.n_ens)) for lo in range(0, cfg.n_ens, BLOCK)]
    workers = min(thread_count(threads), len(bounds))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(lambda b: _run_block(cfg, fn, *b), bounds))
    else:
        blocks = [_run_block(cfg, fn, lo, hi) for lo, hi in bounds]

    mean_series, var_series = _merge(blocks)
    pooled = np.concatenate([b.pooled for b in blocks])
    pooled = pooled[np.isfinite(pooled)]
    n_excluded = sum(b.excluded for b in blocks)
    n_sum = sum(b.noise_sums[0] for b in blocks)
    n_sq = sum(b.noise_sums[1] for b in blocks)
    n_cnt = sum(b.noise_sums[2] for b in blocks)
    extinct = all(b.final_zero for b in blocks)

    edges, density = stationary_histogram(pooled, cfg.hist_bins)
    try:
        converged, cv = convergence_check(mean_series, cfg.conv_window, cfg.conv_tol)
    except UndefinedCV:
        converged, cv = False, math.nan
    return EnsembleStats(
        mean_series=mean_series,
        var_series=var_series,
        hist_edges=edges,
        hist_density=density,
        converged=bool(converged),
        final_cv=cv,
        n_excluded=n_excluded,
        extinct=extinct,
        stationary_mean=float(np.mean(pooled)) if pooled.size else math.nan,
        stationary_var=float(np.var(pooled)) if pooled.size else math.nan,
        tail_quantile=float(np.quantile(pooled, TAIL_LEVEL)) if pooled.size else math.nan,
        noise_mean=n_sum / n_cnt if n_cnt else math.nan,
        noise_second_moment=n_sq / n_cnt if n_cnt else math.nan,
        noise_count=n_cnt,
        config=cfg,
    )


def stationary_histogram(samples, bins=200, quantile=HIST_QUANTILE):
    """Density histogram on [0, empirical ``quantile``], normalised to integrate to 1."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        return np.zeros(0), np.zeros(0)
    top = float(np.quantile(samples, quantile))
    if not top > 0:
        top = float(samples.max()) or 1.0
    counts, edges = np.histogram(samples, bins=bins, range=(0.0, top))
    total = counts.sum()
    density = counts / (total * np.diff(edges)) if total else counts.astype(float)
    return edges, density


# --- closure comparison ------------------------------------------------------------

@dataclass(frozen=True)
class DistributionComparison:
    l1: float
    mean_rel_err: float
    var_rel_err: float
    tail_level: float
    tail_mass_empirical: float
    tail_mass_model: float

    @property
    def tail_rel_err(self):
        return abs(self.tail_mass_model - self.tail_mass_empirical) / self.tail_mass_empirical


def compare_distribution(stats: EnsembleStats, mu, s) -> DistributionComparison:
    """Stationary ensemble vs the Gamma law with mean ``mu`` and variance ``s``.

    ``l1`` is sum over bins of |histogram mass - Gamma mass|.
    """
    if len(stats.hist_density) == 0:
        raise ValueError("empty histogram")
    shape = gamma_from_moments(mu, s)
    widths = np.diff(stats.hist_edges)
    model_mass = np.diff(gamma_cdf(stats.hist_edges, shape))
    empirical_mass = stats.hist_density * widths
    l1 = float(np.sum(np.abs(empirical_mass - model_mass)))
    return DistributionComparison(
        l1=l1,
        mean_rel_err=abs(stats.stationary_mean - mu) / mu,
        var_rel_err=abs(stats.stationary_var - s) / s,
        tail_level=TAIL_LEVEL,
        tail_mass_empirical=1.0 - TAIL_LEVEL,
        tail_mass_model=1.0 - gamma_cdf(stats.tail_quantile, shape),
    )


def closure_prediction(cfg: EnsembleConfig) -> Optional[MomentState]:
    """Moment-map state after ``cfg.t_max`` steps from the ensemble's initial moments."""
    traj = iterate(MomentState(cfg.init_mu, cfg.init_s), cfg.p, cfg.t_max)
    return traj.states[-1] if traj.completed else None


def equilibrium_initial_moments(p: Params, fallback_mu=0.5, fallback_k=10.0):
    """Initial moments for stability runs: the feasible equilibrium if any, else a narrow Gamma."""
    from .equilibrium import solve_equilibrium

    eq = solve_equilibrium(p)
    if eq.feasible:
        return eq.mu_star, eq.s_star
    return fallback_mu, fallback_mu**2 / fallback_k

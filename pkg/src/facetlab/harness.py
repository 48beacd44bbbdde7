"""Experiment orchestration: configs, chain runs, estimates, exponent fits, tails and profiles."""
from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field, fields
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .chain import ChainState, init_chain, observe
from .errors import ConfigError, InsufficientData, NonPositiveMean, UnknownStatistic
from .path_core import LatticePath, ModelParams
from .rng import RngStream
from .sectors import (DEFAULT_CHI, DEFAULT_EPSILON, DEFAULT_EPSILON1, DEFAULT_ETA, DEFAULT_K1, DEFAULT_K2,
                      cone_area_statistic, vertex_angles)

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STATISTICS = ("mean_fl", "mean_lr", "max_fl", "max_lr", "mlrf", "excess_area", "length", "cone_area")
PROFILE_ANGLES = 33
FIT_STATISTICS = ("mean_fl", "mean_lr", "max_fl", "max_lr")


@dataclass
class ExperimentConfig:
    lam: float = 0.3
    n_grid: List[int] = field(default_factory=lambda: [32, 64, 128, 256, 512])
    chains: int = 16
    sweeps: int = 4000
    burn_in: int = 2000
    thin: int = 10
    seed: int = 1
    chi: float = DEFAULT_CHI
    eta: float = DEFAULT_ETA
    epsilon: float = DEFAULT_EPSILON
    epsilon1: float = DEFAULT_EPSILON1
    k1: float = DEFAULT_K1
    k2: float = DEFAULT_K2
    interior_fraction: float = 0.9
    window_fraction: float = 0.1
    window_scale: float = 4.0
    out_dir: str = "facetlab-out"
    statistics: List[str] = field(default_factory=lambda: list(STATISTICS))

    _KEYS = {"lambda": "lam"}

    def __post_init__(self):
        self.validate()

    def validate(self):
        try:
            ModelParams(self.lam, 1)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not self.n_grid or any(int(n) != n or n < 1 for n in self.n_grid):
            raise ConfigError("n_grid must be a nonempty list of positive integers")
        for name in ("chains", "thin"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        for name in ("sweeps", "burn_in"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if not 0 <= self.interior_fraction <= 1 or not 0 <= self.window_fraction <= 1:
            raise ConfigError("move fractions must lie in [0, 1]")
        unknown = [s for s in self.statistics if s not in STATISTICS]
        if unknown:
            raise ConfigError(f"unknown statistics {unknown}")

    # -- key = value file format --------------------------------------------

    def dumps(self) -> str:
        lines = [f"schema_version = {SCHEMA_VERSION}"]
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            key = "lambda" if f.name == "lam" else f.name
            value = getattr(self, f.name)
            if isinstance(value, list):
                text = ", ".join(str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        kinds = {f.name: f for f in fields(cls) if not f.name.startswith("_")}
        values: Dict[str, object] = {}
        version = None
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = key.strip(), value.strip()
            if key == "schema_version":
                version = value
                continue
            name = cls._KEYS.get(key, key)
            if name not in kinds or key == "lam":
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            default = kinds[name].default_factory() if callable(kinds[name].default_factory) else kinds[name].default
            try:
                if isinstance(default, list):
                    items = [v.strip() for v in value.split(",") if v.strip()]
                    values[name] = [int(v) for v in items] if name == "n_grid" else items
                elif isinstance(default, bool):
                    values[name] = value.lower() in ("1", "true", "yes")
                elif isinstance(default, int):
                    values[name] = int(value)
                elif isinstance(default, float):
                    values[name] = float(value)
                else:
                    values[name] = value
            except ValueError:
                raise ConfigError(f"line {lineno}: bad value for {key!r}: {value!r}") from None
        if version is None or version != str(SCHEMA_VERSION):
            raise ConfigError(f"config schema_version must be {SCHEMA_VERSION}, got {version!r}")
        return cls(**values)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                return cls.loads(fh.read())
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None

    def save(self, path: str):
        atomic_write(path, self.dumps())


def atomic_write(path: str, text: str):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def stream_id(n_target: int, chain: int) -> int:
    return int(n_target) * 10_000 + int(chain)


def radial_profile(path: LatticePath, angles: np.ndarray) -> np.ndarray:
    """Distance from the origin to the path along each ray, by interpolation between vertices."""
    xs, ys = path.vertices
    ang = vertex_angles(xs, ys)
    keep = ~np.isnan(ang)
    xs, ys, ang = xs[keep].astype(float), ys[keep].astype(float), ang[keep]
    out = np.empty(len(angles))
    # arguments decrease along the path; reverse to search in increasing order
    rev = ang[::-1]
    for i, t in enumerate(angles):
        k = int(np.searchsorted(rev, t))
        if k == 0:
            j0 = j1 = len(ang) - 1
        elif k >= len(rev):
            j0 = j1 = 0
        else:
            j1 = len(ang) - 1 - (k - 1)
            j0 = j1 - 1
        if j0 == j1:
            out[i] = math.hypot(xs[j0], ys[j0])
            continue
        # intersect the ray with the segment between vertices j0 and j1
        c, s = math.cos(t), math.sin(t)
        f0 = s * xs[j0] - c * ys[j0]
        f1 = s * xs[j1] - c * ys[j1]
        u = f0 / (f0 - f1) if f0 != f1 else 0.0
        out[i] = math.hypot(xs[j0] + u * (xs[j1] - xs[j0]), ys[j0] + u * (ys[j1] - ys[j0]))
    return out


def chain_record(state: ChainState, config: ExperimentConfig, chain: int) -> dict:
    path = state.path
    rec = {"N": state.params.n_target, "lambda": state.params.lam, "seed": config.seed, "chain": chain,
           "sweep": state.sweep_count}
    rec.update(observe(state))
    cone = cone_area_statistic(path, state.params.n_target)
    rec["cone_area"] = cone if cone is not None else float("nan")
    return rec


def run_chain(config: ExperimentConfig, n_target: int, chain: int, sink=None) -> Tuple[List[dict], np.ndarray]:
    """Burn in, then record every ``thin`` sweeps. Returns the records and the mean radial profile / N."""
    params = ModelParams(config.lam, n_target)
    state = init_chain(params, RngStream(config.seed, stream_id(n_target, chain)))
    wmax = max(4, int(config.window_scale * n_target ** (2.0 / 3.0)))
    angles = profile_angles()
    profile = np.zeros(len(angles))
    records = []
    for _ in range(config.burn_in):
        state.advance(max(state.length, 1), config.interior_fraction, config.window_fraction, wmax)
        state.sweep_count += 1
    for s in range(config.sweeps):
        state.advance(max(state.length, 1), config.interior_fraction, config.window_fraction, wmax)
        state.sweep_count += 1
        if (s + 1) % config.thin == 0:
            rec = chain_record(state, config, chain)
            records.append(rec)
            profile += radial_profile(state.path, angles) / n_target
            if sink is not None:
                sink(rec)
    state.audit()
    return records, profile / max(len(records), 1)


def profile_angles(count: int = PROFILE_ANGLES) -> np.ndarray:
    return np.linspace(0.0, math.pi / 2, count)


@dataclass
class FitResult:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float

    def as_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "stderr": self.stderr,
                "ci_low": self.ci_low, "ci_high": self.ci_high}


def _wls(x: np.ndarray, y: np.ndarray, w: np.ndarray) -> Tuple[float, float, float]:
    sw = w.sum()
    xm = (w * x).sum() / sw
    ym = (w * y).sum() / sw
    sxx = (w * (x - xm) ** 2).sum()
    slope = float((w * (x - xm) * (y - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    return slope, intercept, float(math.sqrt(1.0 / sxx))


def fit_exponent(table: Sequence[Tuple[float, float, float]], n_boot: int = 2000, seed: int = 0) -> FitResult:
    """Weighted least squares of log(mean) on log(N), weights 1/var(log mean), with a parametric bootstrap CI.

    ``table`` rows are (N, mean, standard error).  When any standard error is
    zero the fit is unweighted and the interval collapses to the point estimate.
    """
    rows = np.asarray(table, dtype=float).reshape(-1, 3)
    if len(rows) < 4:
        raise InsufficientData(f"need at least 4 (N, mean, se) rows, got {len(rows)}")
    n, mean, se = rows[:, 0], rows[:, 1], rows[:, 2]
    if np.any(mean <= 0):
        raise NonPositiveMean("log-log fit needs positive means")
    x, y = np.log(n), np.log(mean)
    exact = np.any(se <= 0)
    w = np.ones_like(x) if exact else (mean / se) ** 2
    slope, intercept, stderr = _wls(x, y, w)
    if exact:
        return FitResult(slope, intercept, 0.0, slope, slope)
    rng = np.random.default_rng(seed)
    boot = []
    for _ in range(n_boot):
        draw = mean + se * rng.standard_normal(len(mean))
        if np.any(draw <= 0):
            continue
        boot.append(_wls(x, np.log(draw), w)[0])
    lo, hi = np.percentile(boot, [2.5, 97.5])
    return FitResult(slope, intercept, stderr, float(lo), float(hi))


@dataclass
class ScalingResult:
    config: ExperimentConfig
    per_n: Dict[int, Dict[str, dict]]
    chain_means: Dict[int, Dict[str, List[float]]]
    fits: Dict[str, FitResult]
    profiles: Dict[int, List[List[float]]]

    def table(self, statistic: str) -> List[Tuple[float, float, float]]:
        return [(n, self.per_n[n][statistic]["mean"], self.per_n[n][statistic]["se"]) for n in sorted(self.per_n)]

    def fit(self, statistic: str) -> FitResult:
        if len(self.per_n) < 4:
            raise InsufficientData(f"an exponent needs at least 4 grid points, the run has {len(self.per_n)}")
        if statistic not in self.fits:
            raise InsufficientData(f"no exponent fitted for {statistic}")
        return self.fits[statistic]

    def medians(self, statistic: str) -> Dict[int, float]:
        return {n: self.per_n[n][statistic]["median"] for n in sorted(self.per_n)}

    def summary(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.dumps(),
            "per_n": {str(n): v for n, v in sorted(self.per_n.items())},
            "fits": {k: v.as_dict() for k, v in sorted(self.fits.items())},
            "profiles": {str(n): v for n, v in sorted(self.profiles.items())},
        }


def _chain_fit_bootstrap(chain_means: Dict[int, Dict[str, List[float]]], statistic: str, n_boot: int,
                         seed: int) -> Tuple[float, float]:
    """Percentile CI of the fitted slope, resampling whole chains within each N."""
    rng = np.random.default_rng(seed)
    grid = sorted(chain_means)
    x = np.log(np.array(grid, dtype=float))
    per = [np.asarray(chain_means[n][statistic], dtype=float) for n in grid]
    slopes = []
    for _ in range(n_boot):
        means, ses = [], []
        for arr in per:
            pick = arr[rng.integers(0, len(arr), len(arr))]
            means.append(pick.mean())
            ses.append(pick.std(ddof=1) / math.sqrt(len(pick)) if len(pick) > 1 else 0.0)
        means, ses = np.array(means), np.array(ses)
        if np.any(means <= 0) or np.any(ses <= 0):
            continue
        slopes.append(_wls(x, np.log(means), (means / ses) ** 2)[0])
    lo, hi = np.percentile(slopes, [2.5, 97.5])
    return float(lo), float(hi)


def summarize(config: ExperimentConfig, records: Dict[int, List[List[dict]]],
              profiles: Dict[int, List[np.ndarray]], n_boot: int = 2000) -> ScalingResult:
    per_n: Dict[int, Dict[str, dict]] = {}
    chain_means: Dict[int, Dict[str, List[float]]] = {}
    for n in sorted(records):
        per_n[n] = {}
        chain_means[n] = {}
        for stat in config.statistics:
            by_chain = [np.array([r[stat] for r in chain], dtype=float) for chain in records[n]]
            by_chain = [c[~np.isnan(c)] for c in by_chain]
            cm = [float(c.mean()) for c in by_chain if len(c)]
            pooled = np.concatenate(by_chain) if by_chain else np.zeros(0)
            se = float(np.std(cm, ddof=1) / math.sqrt(len(cm))) if len(cm) > 1 else float("nan")
            per_n[n][stat] = {
                "mean": float(np.mean(cm)) if cm else float("nan"),
                "se": se,
                "median": float(np.median(pooled)) if len(pooled) else float("nan"),
                "count": int(len(pooled)),
            }
            chain_means[n][stat] = cm
    fits = {}
    if len(per_n) >= 4 and config.chains > 1:
        x = np.log(np.array(sorted(per_n), dtype=float))
        for k, stat in enumerate(s for s in FIT_STATISTICS if s in config.statistics):
            means = np.array([per_n[n][stat]["mean"] for n in sorted(per_n)])
            ses = np.array([per_n[n][stat]["se"] for n in sorted(per_n)])
            if np.any(means <= 0) or np.any(~(ses > 0)):
                log.warning("no fit for %s: nonpositive mean or standard error", stat)
                continue
            slope, intercept, stderr = _wls(x, np.log(means), (means / ses) ** 2)
            lo, hi = _chain_fit_bootstrap(chain_means, stat, n_boot, config.seed + k)
            fits[stat] = FitResult(slope, intercept, stderr, lo, hi)
    prof = {n: np.mean(profiles[n], axis=0).round(12).tolist() for n in sorted(profiles)}
    return ScalingResult(config, per_n, chain_means, fits, prof)


def _format_record(rec: dict) -> str:
    return json.dumps(rec, sort_keys=True, allow_nan=True)


def estimate(config: ExperimentConfig, write: bool = True) -> ScalingResult:
    """Run every (N, chain) task, write one raw file per chain plus summary.json."""
    workers = int(os.environ.get("FACETLAB_WORKERS", "1"))
    tasks = [(n, c) for n in config.n_grid for c in range(config.chains)]
    raw_dir = os.path.join(config.out_dir, "raw")
    if write:
        os.makedirs(raw_dir, exist_ok=True)
        config.save(os.path.join(config.out_dir, "config.txt"))
    results = {}
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            futures = {t: pool.submit(_task, config, t, write) for t in tasks}
            for t, fut in futures.items():
                results[t] = fut.result()
    else:
        for t in tasks:
            results[t] = _task(config, t, write)
    records = {n: [results[(n, c)][0] for c in range(config.chains)] for n in config.n_grid}
    profiles = {n: [results[(n, c)][1] for c in range(config.chains)] for n in config.n_grid}
    result = summarize(config, records, profiles)
    if write:
        atomic_write(os.path.join(config.out_dir, "summary.json"),
                     json.dumps(result.summary(), sort_keys=True, indent=1) + "\n")
    return result


def _task(config: ExperimentConfig, task: Tuple[int, int], write: bool):
    n, c = task
    if not write:
        return run_chain(config, n, c)
    path = os.path.join(config.out_dir, "raw", f"N{n}_chain{c:03d}.jsonl")
    tmp = f"{path}.partial"
    with open(tmp, "w") as fh:
        recs, prof = run_chain(config, n, c, sink=lambda r: fh.write(_format_record(r) + "\n"))
    os.replace(tmp, path)
    return recs, prof


def load_records(out_dir: str) -> Dict[int, List[List[dict]]]:
    raw_dir = os.path.join(out_dir, "raw")
    out: Dict[int, Dict[int, List[dict]]] = {}
    for name in sorted(os.listdir(raw_dir)):
        if not name.endswith(".jsonl"):
            continue
        with open(os.path.join(raw_dir, name)) as fh:
            recs = [json.loads(line) for line in fh if line.strip()]
        if recs:
            out.setdefault(int(recs[0]["N"]), {})[int(recs[0]["chain"])] = recs
    return {n: [chains[c] for c in sorted(chains)] for n, chains in sorted(out.items())}


def wilson_interval(successes: int, trials: int, z: float = 1.959963984540054) -> Tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def tail_curve(records: Iterable[dict], statistic: str, thresholds: Sequence[float], scale: float = 1.0) -> List[dict]:
    """Empirical P[statistic >= t * scale] with Wilson intervals, one row per threshold t."""
    if statistic not in STATISTICS:
        raise UnknownStatistic(statistic)
    values = np.array([r[statistic] for r in records], dtype=float)
    values = values[~np.isnan(values)]
    rows = []
    for t in thresholds:
        k = int(np.sum(values >= t * scale))
        lo, hi = wilson_interval(k, len(values))
        rows.append({"t": float(t), "survival": k / len(values) if len(values) else float("nan"),
                     "low": lo, "high": hi, "count": k, "n": int(len(values))})
    return rows


def exponential_tail_fit(rows: Sequence[dict]) -> Dict[str, float]:
    """Weighted linear fit of log survival against t; weights from the binomial variance of the log."""
    t = np.array([r["t"] for r in rows], dtype=float)
    p = np.array([r["survival"] for r in rows], dtype=float)
    n = np.array([r["n"] for r in rows], dtype=float)
    keep = p > 0
    t, p, n = t[keep], p[keep], n[keep]
    y = np.log(p)
    w = n * p / np.maximum(1 - p, 1e-12)
    slope, intercept, _ = _wls(t, y, w)
    fitted = intercept + slope * t
    ybar = (w * y).sum() / w.sum()
    r2 = 1.0 - (w * (y - fitted) ** 2).sum() / (w * (y - ybar) ** 2).sum()
    return {"slope": slope, "intercept": intercept, "r2": float(r2), "points": int(len(t))}


def concavity_defect(angles: np.ndarray, radii: np.ndarray) -> float:
    """Largest distance of the Cartesian profile points below their own upper concave hull."""
    xs = radii * np.cos(angles)
    ys = radii * np.sin(angles)
    order = np.argsort(xs, kind="stable")
    px, py = xs[order], ys[order]
    hull: List[int] = []
    for i in range(len(px)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            if (px[b] - px[a]) * (py[i] - py[a]) - (py[b] - py[a]) * (px[i] - px[a]) >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    top = np.interp(px, px[hull], py[hull])
    return float(np.max(top - py))


def limit_shape_profile(config: ExperimentConfig, n_target: Optional[int] = None) -> dict:
    """Mean rescaled radial profile at one N from two independent halves of the chains."""
    n = int(n_target if n_target is not None else config.n_grid[-1])
    angles = profile_angles()
    per_chain = np.array([run_chain(config, n, c)[1] for c in range(config.chains)])
    half = max(len(per_chain) // 2, 1)
    first, second = per_chain[:half], per_chain[half:] if len(per_chain) > 1 else per_chain
    mean = per_chain.mean(axis=0)
    se = per_chain.std(axis=0, ddof=1) / math.sqrt(len(per_chain)) if len(per_chain) > 1 else np.zeros_like(mean)
    return {
        "N": n,
        "theta": angles.tolist(),
        "radius": mean.tolist(),
        "se": se.tolist(),
        "sup_deviation": float(np.max(np.abs(first.mean(axis=0) - second.mean(axis=0)))),
        "symmetry_deviation": float(np.max(np.abs(mean - mean[::-1]))),
        "concavity_defect": concavity_defect(angles, mean),
    }

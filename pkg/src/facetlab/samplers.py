"""Exact samplers: free paths, uniform bridges, bridges under a chord, small-N rejection."""
from __future__ import annotations

import logging
import math
from typing import Iterator, Tuple

import numba
import numpy as np

from .errors import AcceptanceBudgetExceeded, BudgetExceeded, EmptyBridgeSpace
from .path_core import Bridge, LatticePath, ModelParams, Point
from .rng import RngStream

log = logging.getLogger(__name__)

MAX_ENUMERATION_LENGTH = 26


def geometric_length(u: np.ndarray | float, lam: float):
    """Invert P[|path| >= n] = (2 lam)^n."""
    return np.floor(np.log1p(-np.asarray(u)) / math.log(2.0 * lam)).astype(np.int64)


def sample_free(params: ModelParams, rng: RngStream) -> LatticePath:
    n = int(geometric_length(rng.random(), params.lam))
    steps = rng.integers(0, 2, size=n).astype(np.uint8)
    return LatticePath(int(n - steps.sum()), steps)


@numba.njit(cache=True)
def _draw_free(log_ratio, buf):
    n = int(math.floor(math.log(1.0 - np.random.random()) / log_ratio))
    if n > buf.shape[0]:
        buf = np.empty(2 * n, dtype=np.uint8)
    downs = 0
    area = 0
    # fill from the end so each Right step sees the Downs after it
    for i in range(n - 1, -1, -1):
        if np.random.random() < 0.5:
            buf[i] = 1
            area += downs
        else:
            buf[i] = 0
            downs += 1
    return n, downs, area, buf


@numba.njit(cache=True)
def _free_stats(log_ratio, count):
    lengths = np.empty(count, dtype=np.int64)
    areas = np.empty(count, dtype=np.int64)
    buf = np.empty(64, dtype=np.uint8)
    for c in range(count):
        n, downs, area, buf = _draw_free(log_ratio, buf)
        lengths[c] = n
        areas[c] = area
    return lengths, areas


def free_length_area(params: ModelParams, rng: RngStream, count: int) -> Tuple[np.ndarray, np.ndarray]:
    """(length, area) of ``count`` independent free paths."""
    rng.kernel_seed()
    return _free_stats(math.log(2.0 * params.lam), int(count))


@numba.njit(cache=True)
def _rejection_one(log_ratio, threshold, max_attempts, buf):
    for attempt in range(1, max_attempts + 1):
        n, downs, area, buf = _draw_free(log_ratio, buf)
        if area >= threshold:
            return attempt, n, downs, area, buf
    return -1, 0, 0, 0, buf


@numba.njit(cache=True)
def _rejection_stats(log_ratio, threshold, count, max_attempts):
    lengths = np.empty(count, dtype=np.int64)
    areas = np.empty(count, dtype=np.int64)
    attempts = np.empty(count, dtype=np.int64)
    buf = np.empty(64, dtype=np.uint8)
    for c in range(count):
        a, n, downs, area, buf = _rejection_one(log_ratio, threshold, max_attempts, buf)
        if a < 0:
            return lengths[:c], areas[:c], attempts[:c]
        lengths[c] = n
        areas[c] = area
        attempts[c] = a
    return lengths, areas, attempts


def sample_conditioned_rejection(params: ModelParams, rng: RngStream, max_attempts: int = 10**7) -> Tuple[LatticePath, int]:
    """Exact draw from the area-conditioned law; returns (path, attempts used)."""
    if max_attempts <= 0:
        raise AcceptanceBudgetExceeded("max_attempts must be positive")
    rng.kernel_seed()
    attempts, n, downs, _, buf = _rejection_one(math.log(2.0 * params.lam), params.area_threshold,
                                                int(max_attempts), np.empty(64, dtype=np.uint8))
    if attempts < 0:
        raise AcceptanceBudgetExceeded(f"no path with area >= {params.area_threshold} in {max_attempts} attempts")
    return LatticePath(downs, buf[:n].copy()), int(attempts)


def rejection_length_area(params: ModelParams, rng: RngStream, count: int, max_attempts: int = 10**7):
    """(length, area, attempts) of ``count`` exact conditioned draws."""
    rng.kernel_seed()
    lengths, areas, attempts = _rejection_stats(math.log(2.0 * params.lam), params.area_threshold,
                                                int(count), int(max_attempts))
    if len(lengths) < count:
        raise AcceptanceBudgetExceeded(f"draw {len(lengths)} exceeded {max_attempts} attempts")
    return lengths, areas, attempts


def _check_bridge(a: Point, b: Point) -> Tuple[int, int]:
    r = int(b[0]) - int(a[0])
    d = int(a[1]) - int(b[1])
    if r < 0 or d < 0:
        raise EmptyBridgeSpace(f"no down-right bridge from {tuple(a)} to {tuple(b)}")
    return r, d


def sample_bridge_uniform(a: Point, b: Point, rng: RngStream) -> Bridge:
    r, d = _check_bridge(a, b)
    steps = np.r_[np.ones(r, np.uint8), np.zeros(d, np.uint8)]
    return Bridge(a, b, rng.generator.permutation(steps))


@numba.njit(cache=True)
def _shuffle(arr, lo, hi):
    for i in range(hi - 1, lo, -1):
        j = lo + int(np.random.random() * (i - lo + 1))
        t = arr[i]
        arr[i] = arr[j]
        arr[j] = t


@numba.njit(cache=True)
def below_chord(steps, lo, hi, r, d):
    """True iff the bridge steps[lo:hi] (r Rights, d Downs) stays weakly below its chord."""
    x = 0
    y = d
    for i in range(lo, hi):
        if steps[i] == 1:
            x += 1
        else:
            y -= 1
        # above the chord from (0, d) to (r, 0) iff r*(y - d) + d*x > 0
        if r * (y - d) + d * x > 0:
            return False
    return True


@numba.njit(cache=True)
def _below_rejection(r, d, count, max_tries):
    n = r + d
    out = np.empty((count, n), dtype=np.uint8)
    work = np.empty(n, dtype=np.uint8)
    for i in range(n):
        work[i] = 1 if i < r else 0
    tries = 0
    for c in range(count):
        while True:
            if tries >= max_tries:
                return out[:c], tries
            tries += 1
            _shuffle(work, 0, n)
            if below_chord(work, 0, n, r, d):
                out[c] = work
                break
    return out, tries


@numba.njit(cache=True)
def below_flip_sweeps(steps, r, d, proposals):
    """Corner-flip chain on bridges weakly below the chord; uniform stationary law."""
    n = r + d
    if n < 2:
        return
    # height of the chord in units of 1/(r+d) is tracked through x and y
    for _ in range(proposals):
        i = 1 + int(np.random.random() * (n - 1))
        if np.random.random() < 0.5:
            continue
        if steps[i - 1] == steps[i]:
            continue
        if steps[i - 1] == 1:
            steps[i - 1] = 0
            steps[i] = 1
        else:
            # Down-Right -> Right-Down lifts vertex i; check it stays under the chord
            x = 0
            for k in range(i - 1):
                x += steps[k]
            x += 1
            y = d - (i - x)
            if r * (y - d) + d * x > 0:
                continue
            steps[i - 1] = 1
            steps[i] = 0


def sample_bridge_below(a: Point, b: Point, rng: RngStream, *, calibration: int = 4000,
                        fallback_sweeps: int = 2000) -> Bridge:
    """Uniform bridge whose vertices stay weakly below the segment [a, b].

    Rejection from uniform shuffles.  If a whole calibration batch yields no
    acceptance (rate below 1e-3) a corner-flip chain started from the lowest
    bridge is run instead and the result is only approximately uniform.
    """
    r, d = _check_bridge(a, b)
    rng.kernel_seed()
    out, tries = _below_rejection(r, d, 1, int(calibration))
    if len(out):
        return Bridge(a, b, out[0])
    log.warning("below-chord acceptance under %.1e for span (%d, %d); using flip chain", 1.0 / calibration, r, d)
    steps = np.r_[np.zeros(d, np.uint8), np.ones(r, np.uint8)]
    below_flip_sweeps(steps, r, d, fallback_sweeps * max(r + d, 1))
    return Bridge(a, b, steps)


def sample_bridges_below(a: Point, b: Point, rng: RngStream, count: int, max_tries: int = 10**8) -> np.ndarray:
    """``count`` exact below-chord bridges as a (count, r+d) step matrix."""
    r, d = _check_bridge(a, b)
    rng.kernel_seed()
    out, tries = _below_rejection(r, d, int(count), int(max_tries))
    if len(out) < count:
        raise BudgetExceeded(f"only {len(out)} of {count} below-chord bridges in {max_tries} tries")
    return out


def pattern_steps(pattern: int, length: int) -> np.ndarray:
    """Steps of a path id: bit i (most significant first) is step i, 1 = Right."""
    shifts = np.arange(length - 1, -1, -1, dtype=np.int64)
    return ((int(pattern) >> shifts) & 1).astype(np.uint8) if length else np.zeros(0, np.uint8)


def enumerate_paths(max_len: int) -> Iterator[LatticePath]:
    """Every path of length <= max_len, ordered by (length, bit pattern)."""
    if max_len > MAX_ENUMERATION_LENGTH:
        raise BudgetExceeded(f"enumeration up to length {max_len} exceeds the limit {MAX_ENUMERATION_LENGTH}")
    for n in range(max_len + 1):
        for pattern in range(1 << n):
            steps = pattern_steps(pattern, n)
            yield LatticePath(int(n - steps.sum()), steps)

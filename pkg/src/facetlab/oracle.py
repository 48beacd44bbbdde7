"""Ground-truth engines used by the tests and the acceptance suite."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Hashable, Iterable, List, Mapping, Sequence, Tuple

import numba
import numpy as np

from .errors import BudgetExceeded, EmptyImage
from .path_core import LatticePath, ModelParams
from .rng import RngStream
from .samplers import pattern_steps

ENUMERATION_BUDGET = 2**27
_CHUNK = 1 << 20


@dataclass
class ExactTable:
    """Exact conditional law on {|path| <= L, area >= N^2}, keyed by (length, bit pattern)."""

    params: ModelParams
    max_length: int
    lengths: np.ndarray
    patterns: np.ndarray
    areas: np.ndarray
    probs: np.ndarray
    feasible_mass: float
    neglected_mass_bound: float

    def __len__(self) -> int:
        return len(self.probs)

    def path(self, row: int) -> LatticePath:
        n = int(self.lengths[row])
        steps = pattern_steps(int(self.patterns[row]), n)
        return LatticePath(int(n - steps.sum()), steps)

    def paths(self) -> Iterable[LatticePath]:
        for row in range(len(self)):
            yield self.path(row)

    def length_area_law(self) -> Dict[Tuple[int, int], float]:
        law: Dict[Tuple[int, int], float] = {}
        for n, a, p in zip(self.lengths.tolist(), self.areas.tolist(), self.probs.tolist()):
            law[(n, a)] = law.get((n, a), 0.0) + p
        return law


def _pattern_areas(n: int, patterns: np.ndarray) -> np.ndarray:
    area = np.zeros(patterns.size, dtype=np.int64)
    downs = np.zeros(patterns.size, dtype=np.int64)
    # bit 0 is the last step; walk from the end so each Right sees the Downs after it
    for bit in range(n):
        right = ((patterns >> bit) & 1).astype(bool)
        area += np.where(right, downs, 0)
        downs += ~right
    return area


def exact_conditional(params: ModelParams, max_length: int) -> ExactTable:
    """Enumerate every path up to ``max_length`` and weight the feasible ones by lam^|path|."""
    if 2 ** (max_length + 1) - 1 > ENUMERATION_BUDGET:
        raise BudgetExceeded(f"enumerating lengths <= {max_length} exceeds {ENUMERATION_BUDGET} paths")
    lam, thr = params.lam, params.area_threshold
    lengths, patterns, areas, weights = [], [], [], []
    for n in range(max_length + 1):
        for lo in range(0, 1 << n, _CHUNK):
            pat = np.arange(lo, min(lo + _CHUNK, 1 << n), dtype=np.int64)
            ar = _pattern_areas(n, pat)
            keep = ar >= thr
            if keep.any():
                lengths.append(np.full(int(keep.sum()), n, dtype=np.int64))
                patterns.append(pat[keep])
                areas.append(ar[keep])
                weights.append(np.full(int(keep.sum()), lam**n))
    if not lengths:
        raise BudgetExceeded(f"no feasible path of length <= {max_length}")
    w = np.concatenate(weights)
    z = 1.0 / (1.0 - 2.0 * lam)
    feasible_mass = float(math.fsum(w)) / z
    probs = w / math.fsum(w)
    bound = (2.0 * lam) ** (max_length + 1) / feasible_mass
    return ExactTable(params, max_length, np.concatenate(lengths), np.concatenate(patterns),
                      np.concatenate(areas), probs, feasible_mass, bound)


@numba.njit(cache=True)
def _length_area_dp(lam, max_length, threshold):
    amax = (max_length // 2) * ((max_length + 1) // 2)
    cur = np.zeros((max_length + 2, amax + 1))
    cur[0, 0] = 1.0
    law = np.zeros((max_length + 1, amax + 1))
    law[0, 0] = 1.0
    for n in range(1, max_length + 1):
        nxt = np.zeros_like(cur)
        # prepend a step: Down raises the start height, Right adds the current height to the area
        for d in range(n):
            top = (d * (n - 1 - d)) if d < n - 1 else 0
            for a in range(top + 1):
                v = cur[d, a] * lam
                if v == 0.0:
                    continue
                nxt[d + 1, a] += v
                nxt[d, a + d] += v
        cur = nxt
        for d in range(n + 1):
            for a in range(amax + 1):
                law[n, a] += cur[d, a]
    for n in range(max_length + 1):
        for a in range(min(threshold, amax + 1)):
            law[n, a] = 0.0
    return law


@dataclass
class LengthAreaLaw:
    params: ModelParams
    max_length: int
    table: np.ndarray
    feasible_mass: float
    neglected_mass_bound: float

    def as_dict(self, cutoff: float = 0.0) -> Dict[Tuple[int, int], float]:
        n, a = np.nonzero(self.table > cutoff)
        return {(int(i), int(j)): float(self.table[i, j]) for i, j in zip(n, a)}


def exact_length_area_law(params: ModelParams, max_length: int | None = None, tolerance: float = 1e-8) -> LengthAreaLaw:
    """Exact conditional law of (length, area) by dynamic programming over steps.

    Unlike ``exact_conditional`` this reaches the long truncations needed when
    lam is close to 1/2.  Without ``max_length`` the truncation grows until the
    neglected-mass bound falls below ``tolerance``.
    """
    lam, thr = params.lam, params.area_threshold
    L = max_length if max_length is not None else 16
    while True:
        raw = _length_area_dp(lam, L, thr)
        z = 1.0 / (1.0 - 2.0 * lam)
        mass = float(raw.sum()) / z
        bound = (2.0 * lam) ** (L + 1) / mass if mass > 0 else math.inf
        if max_length is not None or bound < tolerance:
            break
        L = int(L * 1.5) + 1
    return LengthAreaLaw(params, L, raw / raw.sum(), mass, bound)


def total_variation(p: Mapping[Hashable, float], q: Mapping[Hashable, float]) -> float:
    keys = set(p) | set(q)
    return 0.5 * math.fsum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical_law(keys: Iterable[Hashable]) -> Dict[Hashable, float]:
    counts: Dict[Hashable, int] = {}
    total = 0
    for k in keys:
        counts[k] = counts.get(k, 0) + 1
        total += 1
    return {k: c / total for k, c in counts.items()}


@numba.njit(cache=True)
def _jarvis(xs, ys):
    n = xs.shape[0]
    start = 0
    for i in range(1, n):
        if xs[i] < xs[start] or (xs[i] == xs[start] and ys[i] < ys[start]):
            start = i
    hull = np.empty(n + 1, dtype=np.int64)
    h = 0
    p = start
    while True:
        hull[h] = p
        h += 1
        q = (p + 1) % n
        for c in range(n):
            if xs[c] == xs[p] and ys[c] == ys[p]:
                continue
            if xs[q] == xs[p] and ys[q] == ys[p]:
                q = c
                continue
            cross = (xs[q] - xs[p]) * (ys[c] - ys[p]) - (ys[q] - ys[p]) * (xs[c] - xs[p])
            if cross > 0:
                q = c
            elif cross == 0:
                dq = (xs[q] - xs[p]) ** 2 + (ys[q] - ys[p]) ** 2
                dc = (xs[c] - xs[p]) ** 2 + (ys[c] - ys[p]) ** 2
                if dc > dq:
                    q = c
        if (xs[q] == xs[start] and ys[q] == ys[start]) or (xs[q] == xs[p] and ys[q] == ys[p]) or h > n:
            break
        p = q
    return hull[:h].copy()


def brute_hull(points: Sequence[Tuple[int, int]]) -> List[Tuple[int, int]]:
    """Strict extreme points of conv(points) by gift wrapping, clockwise from the lowest leftmost point.

    Deliberately independent of the monotone-chain scan in ``majorant``.
    """
    pts = np.asarray(points, dtype=np.int64).reshape(-1, 2)
    if len(pts) == 0:
        return []
    idx = _jarvis(np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]))
    return [(int(pts[i, 0]), int(pts[i, 1])) for i in idx]


def path_ext_points(path: LatticePath) -> List[Tuple[int, int]]:
    """Nonzero extreme points of conv(path + origin) through ``brute_hull``."""
    xs, ys = path.vertices
    pts = np.concatenate([[[0, 0]], np.stack([xs, ys], axis=1)])
    hull = brute_hull(pts)
    return [p for p in hull if p != (0, 0)]


def mvmp_audit(map_table: Mapping[Hashable, Iterable[Hashable]], p1_table: Mapping[Hashable, float],
               p2_table: Mapping[Hashable, float]) -> dict:
    """Check P1[A] <= phi * psi * P2[B] for a multivalued map T: A -> subsets of B.

    phi = max over a and b in T(a) of P1(a)/P2(b); psi = max preimage size over min image size.
    B is the image of T.
    """
    images = {a: set(bs) for a, bs in map_table.items()}
    for a, bs in images.items():
        if not bs:
            raise EmptyImage(f"T({a!r}) is empty")
    if not images:
        raise EmptyImage("the map has an empty domain")
    preimage: Dict[Hashable, int] = {}
    phi = 0.0
    for a, bs in images.items():
        for b in bs:
            preimage[b] = preimage.get(b, 0) + 1
            phi = max(phi, p1_table[a] / p2_table[b])
    psi = max(preimage.values()) / min(len(bs) for bs in images.values())
    lhs = math.fsum(p1_table[a] for a in images)
    rhs = phi * psi * math.fsum(p2_table[b] for b in preimage)
    return {"phi": phi, "psi": psi, "lhs": lhs, "rhs": rhs, "holds": lhs <= rhs * (1 + 1e-12)}


@numba.njit(cache=True)
def _bridge_majorant_stats(steps, span, s_points, out_len, out_gap, row):
    # vertices of the bridge as a function graph: x = index, y = walk height
    n = steps.shape[0]
    ys = np.empty(n + 1, dtype=np.int64)
    ys[0] = 0
    for i in range(n):
        ys[i + 1] = ys[i] + (1 if steps[i] == 1 else -1)
    hx = np.empty(n + 1, dtype=np.int64)
    h = 0
    for x in range(n + 1):
        while h >= 2:
            ax = hx[h - 2]
            bx = hx[h - 1]
            cross = (bx - ax) * (ys[x] - ys[ax]) - (ys[bx] - ys[ax]) * (x - ax)
            if cross >= 0:
                h -= 1
            else:
                break
        hx[h] = x
        h += 1
    for k in range(s_points.shape[0]):
        x = s_points[k] * n
        f = 0
        while f < h - 2 and hx[f + 1] < x:
            f += 1
        ax = hx[f]
        bx = hx[f + 1]
        t = (x - ax) / (bx - ax)
        value = ys[ax] + t * (ys[bx] - ys[ax])
        out_len[row, k] = (bx - ax) / n
        xi = int(round(x))
        out_gap[row, k] = (value - ys[xi]) / math.sqrt(n)


def bb_majorant_reference(span: int, samples: int, rng: RngStream, s_points=(0.25, 0.5, 0.75)) -> dict:
    """Facet length L(s) and majorant gap R(s) of uniform +/-1 bridges, rescaled by span and sqrt(span).

    A uniform bridge from (0, span) to (span, 0), rotated by 45 degrees, is a
    +/-1 walk of 2*span steps returning to 0.  The facet containing abscissa s
    and the vertical gap to the majorant there are reported per sample.
    """
    if span < 64:
        raise ValueError("span must be at least 64")
    s = np.asarray(s_points, dtype=np.float64)
    lengths = np.empty((samples, s.size))
    gaps = np.empty((samples, s.size))
    base = np.r_[np.ones(span, np.uint8), np.zeros(span, np.uint8)]
    for row in range(samples):
        steps = rng.generator.permutation(base)
        _bridge_majorant_stats(steps, span, s, lengths, gaps, row)
    return {"s": s, "facet_length": lengths, "gap": gaps}


def chain_transition_matrix(params: ModelParams, max_length: int, interior_fraction: float = 0.9,
                            window_fraction: float = 0.0, window_max: int = 2):
    """Exact transition matrix of the global chain on {|path| <= max_length, area >= N^2}.

    Mirrors the proposal probabilities of the compiled kernel.  Moves that
    would leave the truncated space are counted as rejections, which keeps
    pairwise balance intact.  Returns (paths, target weights, matrix).
    """
    from itertools import combinations

    thr, lam = params.area_threshold, params.lam
    states = [p for p in _enumerate(max_length) if p.area >= thr]
    index = {p: i for i, p in enumerate(states)}
    size = len(states)
    P = np.zeros((size, size))
    p_window = window_fraction
    p_interior = (1.0 - window_fraction) * interior_fraction
    p_boundary = (1.0 - window_fraction) * (1.0 - interior_fraction)

    def move(src: int, path: LatticePath, prob: float):
        dst = index.get(path) if path.length <= max_length and path.area >= thr else None
        P[src, src if dst is None else dst] += prob

    for s, path in enumerate(states):
        n, k, st = path.length, path.start_height, path.steps
        if n >= 2:
            for i in range(1, n):
                new = st.copy()
                new[i - 1], new[i] = st[i], st[i - 1]
                move(s, LatticePath(k, new), p_interior / (n - 1))
        else:
            P[s, s] += p_interior
        q = p_boundary / 4.0
        move(s, LatticePath(k + 1, np.r_[np.uint8(0), st]), q * lam)
        P[s, s] += q * (1.0 - lam)
        if n > 0 and st[0] == 0:
            move(s, LatticePath(k - 1, st[1:]), q)
        else:
            P[s, s] += q
        move(s, LatticePath(k, np.r_[st, np.uint8(1)]), q * lam)
        P[s, s] += q * (1.0 - lam)
        if n > 0 and st[-1] == 1:
            move(s, LatticePath(k, st[:-1]), q)
        else:
            P[s, s] += q
        if n >= 2:
            top = min(window_max, n)
            widths = range(2, top + 1)
            for w in widths:
                for lo in range(n - w + 1):
                    base = p_window / len(widths) / (n - w + 1)
                    r = int(st[lo:lo + w].sum())
                    arrangements = list(combinations(range(w), r))
                    for pos in arrangements:
                        win = np.zeros(w, np.uint8)
                        win[list(pos)] = 1
                        new = st.copy()
                        new[lo:lo + w] = win
                        move(s, LatticePath(k, new), base / len(arrangements))
        else:
            P[s, s] += p_window
    weights = np.array([lam ** p.length for p in states])
    return states, weights / weights.sum(), P


def _enumerate(max_length: int):
    for n in range(max_length + 1):
        for pattern in range(1 << n):
            steps = pattern_steps(pattern, n)
            yield LatticePath(int(n - steps.sum()), steps)

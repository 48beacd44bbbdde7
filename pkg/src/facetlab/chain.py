"""Markov chains for the area-conditioned law and the fixed-endpoint coupling.

The global chain mixes three proposal types, each reversible for the weight
lam^|path| * 1{area >= N^2}:

* interior corner flips (length preserving; plain Metropolis on the indicator),
* boundary moves: prepend/remove a leading Down, append/remove a trailing Right.
  These steps lie on an axis, so the area does not change and the MH ratio
  is lam^(change in length),
* window resamples: a uniformly placed window of the step sequence is
  shuffled and kept iff the area stays feasible.  The window is chosen from
  the length alone, so this is an independence proposal within the window.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Dict, List, Optional, Tuple

import numba
import numpy as np

from .errors import AuditFailure, BridgeEndpointsInvalid, PointNotOnPath
from .majorant import facet_statistics
from .path_core import Bridge, LatticePath, ModelParams, Point
from .rng import RngStream
from .samplers import _shuffle, below_chord

log = logging.getLogger(__name__)

MOVE_NAMES = ("interior", "prepend_down", "remove_down", "append_right", "remove_right", "window")
CHECKPOINT_VERSION = 1
AUDIT_EVERY = 10_000

_NO_HIST = np.zeros((1, 1), dtype=np.int64)

# kernel state slots
_HEAD, _LEN, _K, _AREA = 0, 1, 2, 3


@numba.njit(cache=True)
def _window_q(buf, lo, hi):
    downs = 0
    q = 0
    for i in range(hi - 1, lo - 1, -1):
        if buf[i] == 1:
            q += downs
        else:
            downs += 1
    return q


@numba.njit(cache=True)
def _chain_kernel(buf, st, threshold, lam, n_proposals, interior_fraction, window_fraction,
                  window_max, counters, scratch, mode, hist):
    """Run up to ``n_proposals`` moves. Returns the number done (fewer if the buffer needs to grow).

    mode 0 mixes all moves; 1 interior only; 2 boundary only; 3 window only.
    When ``hist`` has more than one row, hist[length, area] counts the state
    after every proposal (out-of-range states go to hist[0, 0]).
    """
    record = hist.shape[0] > 1
    cap = buf.shape[0]
    head = st[_HEAD]
    n = st[_LEN]
    k = st[_K]
    area = st[_AREA]
    done = 0
    while done < n_proposals:
        if head == 0 or head + n >= cap:
            break
        if record and done > 0:
            if n < hist.shape[0] and area < hist.shape[1]:
                hist[n, area] += 1
            else:
                hist[0, 0] += 1
        done += 1
        if mode == 0:
            u = np.random.random()
            if u < window_fraction:
                kind = 3
            elif u < window_fraction + (1.0 - window_fraction) * interior_fraction:
                kind = 1
            else:
                kind = 2
        else:
            kind = mode
        if kind == 1:
            counters[0, 0] += 1
            if n < 2:
                continue
            i = 1 + int(np.random.random() * (n - 1))
            a = buf[head + i - 1]
            b = buf[head + i]
            if a == b:
                continue
            if a == 1:
                if area - 1 < threshold:
                    continue
                area -= 1
            else:
                area += 1
            buf[head + i - 1] = b
            buf[head + i] = a
            counters[0, 1] += 1
        elif kind == 2:
            m = int(np.random.random() * 4)
            counters[1 + m, 0] += 1
            if m == 0:
                if np.random.random() < lam:
                    head -= 1
                    buf[head] = 0
                    n += 1
                    k += 1
                    counters[1, 1] += 1
            elif m == 1:
                if n > 0 and buf[head] == 0:
                    head += 1
                    n -= 1
                    k -= 1
                    counters[2, 1] += 1
            elif m == 2:
                if np.random.random() < lam:
                    buf[head + n] = 1
                    n += 1
                    counters[3, 1] += 1
            else:
                if n > 0 and buf[head + n - 1] == 1:
                    n -= 1
                    counters[4, 1] += 1
        else:
            counters[5, 0] += 1
            if n < 2:
                continue
            top = window_max if window_max < n else n
            w = 2 + int(np.random.random() * (top - 1))
            lo = head + int(np.random.random() * (n - w + 1))
            hi = lo + w
            q_old = _window_q(buf, lo, hi)
            for t in range(w):
                scratch[t] = buf[lo + t]
            _shuffle(scratch, 0, w)
            q_new = _window_q(scratch, 0, w)
            if area + q_new - q_old < threshold:
                continue
            for t in range(w):
                buf[lo + t] = scratch[t]
            area += q_new - q_old
            counters[5, 1] += 1
    if record and done > 0:
        if n < hist.shape[0] and area < hist.shape[1]:
            hist[n, area] += 1
        else:
            hist[0, 0] += 1
    st[_HEAD] = head
    st[_LEN] = n
    st[_K] = k
    st[_AREA] = area
    return done


class ChainState:
    """Mutable chain state owning one step buffer with slack on both sides."""

    def __init__(self, path: LatticePath, params: ModelParams, rng: RngStream):
        if path.area < params.area_threshold:
            raise ValueError("initial path must satisfy the area constraint")
        self.params = params
        self.rng = rng
        self.sweep_count = 0
        self.counters = np.zeros((len(MOVE_NAMES), 2), dtype=np.int64)
        self._accepted_at_audit = 0
        self.last_resample: Optional[dict] = None
        self._load(path)

    def _load(self, path: LatticePath, capacity: Optional[int] = None):
        n = path.length
        cap = capacity or max(64, 4 * n + 64)
        head = (cap - n) // 2
        self.buf = np.zeros(cap, dtype=np.uint8)
        self.buf[head:head + n] = path.steps
        self.st = np.array([head, n, path.start_height, path.area], dtype=np.int64)
        self.scratch = np.zeros(cap, dtype=np.uint8)

    @property
    def length(self) -> int:
        return int(self.st[_LEN])

    @property
    def area(self) -> int:
        return int(self.st[_AREA])

    @property
    def steps(self) -> np.ndarray:
        head, n = int(self.st[_HEAD]), int(self.st[_LEN])
        return self.buf[head:head + n]

    @property
    def path(self) -> LatticePath:
        return LatticePath(int(self.st[_K]), self.steps.copy())

    def set_path(self, path: LatticePath):
        if path.area < self.params.area_threshold:
            raise AuditFailure("replacement path violates the area constraint")
        self._load(path, max(self.buf.shape[0], 4 * path.length + 64))

    def audit(self):
        p = self.path
        fresh = p.recompute_area()
        if fresh != self.area or fresh < self.params.area_threshold:
            raise AuditFailure(f"cached area {self.area} vs recomputed {fresh} (threshold {self.params.area_threshold})")
        self._accepted_at_audit = int(self.counters[:, 1].sum())

    def _maybe_audit(self):
        if int(self.counters[:, 1].sum()) - self._accepted_at_audit >= AUDIT_EVERY:
            self.audit()

    def acceptance_rates(self) -> Dict[str, float]:
        out = {}
        for name, (prop, acc) in zip(MOVE_NAMES, self.counters):
            out[name] = float(acc / prop) if prop else float("nan")
        return out

    def advance(self, n_proposals: int, interior_fraction: float = 0.9, window_fraction: float = 0.0,
                window_max: int = 2, mode: int = 0, hist: Optional[np.ndarray] = None) -> int:
        """Run ``n_proposals`` moves in the compiled kernel, growing the buffer as needed."""
        self.rng.kernel_seed()
        remaining = int(n_proposals)
        while remaining > 0:
            done = _chain_kernel(self.buf, self.st, self.params.area_threshold, self.params.lam, remaining,
                                 float(interior_fraction), float(window_fraction), int(max(window_max, 2)),
                                 self.counters, self.scratch, int(mode), _NO_HIST if hist is None else hist)
            remaining -= done
            if remaining > 0:
                self._load(self.path, 2 * self.buf.shape[0] + 64)
        self._maybe_audit()
        return int(n_proposals)

    def to_checkpoint(self) -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "params": {"lambda": self.params.lam, "n_target": self.params.n_target},
            "rng": self.rng.get_state(),
            "path": self.path.encode(),
            "sweep_count": self.sweep_count,
            "counters": self.counters.tolist(),
        }

    @classmethod
    def from_checkpoint(cls, record: dict) -> "ChainState":
        if record.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {record.get('version')!r}")
        params = ModelParams(record["params"]["lambda"], record["params"]["n_target"])
        state = cls(LatticePath.parse(record["path"]), params, RngStream.from_state(record["rng"]))
        state.sweep_count = int(record["sweep_count"])
        state.counters = np.array(record["counters"], dtype=np.int64)
        state._accepted_at_audit = int(state.counters[:, 1].sum())
        return state


def init_chain(params: ModelParams, rng: RngStream) -> ChainState:
    """Start from the N x N square, whose area is exactly N^2."""
    return ChainState(LatticePath.square(params.n_target), params, rng)


def _single(state: ChainState, mode: int) -> bool:
    before = int(state.counters[:, 1].sum())
    state.advance(1, mode=mode, window_max=max(state.length, 2))
    return int(state.counters[:, 1].sum()) > before


def step_interior(state: ChainState) -> bool:
    return _single(state, 1)


def step_boundary(state: ChainState) -> bool:
    return _single(state, 2)


def step_window(state: ChainState) -> bool:
    return _single(state, 3)


def default_window_max(n_target: int) -> int:
    """Windows up to about four typical facet lengths."""
    return max(4, int(4 * n_target ** (2.0 / 3.0)))


@dataclass
class Trace:
    records: List[dict] = field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=float)


def observe(state: ChainState) -> dict:
    path = state.path
    rec = facet_statistics(path)
    rec["excess_area"] = path.area - state.params.area_threshold
    rec["length"] = path.length
    return rec


def run(state: ChainState, sweeps: int, interior_fraction: float = 0.9, *, window_fraction: float = 0.0,
        window_max: Optional[int] = None, thin: int = 1,
        observer: Optional[Callable[[ChainState], dict]] = observe,
        on_sweep: Optional[Callable[[ChainState], None]] = None) -> Tuple[ChainState, Trace]:
    """Advance ``sweeps`` sweeps of |path| proposals each; record ``observer`` every ``thin`` sweeps."""
    if sweeps < 0 or not 0.0 <= interior_fraction <= 1.0:
        raise ValueError("need sweeps >= 0 and interior_fraction in [0, 1]")
    wmax = default_window_max(state.params.n_target) if window_max is None else window_max
    trace = Trace()
    for s in range(int(sweeps)):
        state.advance(max(state.length, 1), interior_fraction, window_fraction, wmax)
        state.sweep_count += 1
        if observer is not None and (s + 1) % thin == 0:
            trace.records.append(observer(state))
        if on_sweep is not None:
            on_sweep(state)
    return state, trace


def integrated_autocorrelation(series: np.ndarray, n_batches: int = 20) -> float:
    """Batch-means estimate of the integrated autocorrelation time (in samples)."""
    x = np.asarray(series, dtype=float)
    n = len(x)
    size = n // n_batches
    var = x.var(ddof=1) if n > 1 else 0.0
    if size < 2 or var == 0.0:
        return 1.0
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(max(size * means.var(ddof=1) / var, 1.0))


# --- bridge resampling -------------------------------------------------------

EXACT_BRIDGE_LIMIT = 10**6
EXACT_TABLE_LIMIT = 4 * 10**6


@numba.njit(cache=True)
def _tail_tables(r, d):
    """Suffix counts S[i, j, t] = #{bridges with i Rights, j Downs and q-area >= t}, flattened."""
    offsets = np.empty((r + 1) * (d + 1), dtype=np.int64)
    total = 0
    for i in range(r + 1):
        for j in range(d + 1):
            offsets[i * (d + 1) + j] = total
            total += i * j + 1
    tab = np.zeros(total, dtype=np.float64)
    for i in range(r + 1):
        for j in range(d + 1):
            o = offsets[i * (d + 1) + j]
            size = i * j + 1
            if i == 0 or j == 0:
                tab[o] = 1.0
                continue
            o_r = offsets[(i - 1) * (d + 1) + j]
            size_r = (i - 1) * j + 1
            o_d = offsets[i * (d + 1) + j - 1]
            size_d = i * (j - 1) + 1
            for t in range(size):
                # first step Right adds j (the Downs after it); first step Down adds 0
                tr = t - j
                if tr <= 0:
                    v = tab[o_r]
                elif tr < size_r:
                    v = tab[o_r + tr]
                else:
                    v = 0.0
                if t < size_d:
                    v += tab[o_d + t]
                tab[o + t] = v
    return offsets, tab


@numba.njit(cache=True)
def _tail(offsets, tab, d, i, j, t):
    size = i * j + 1
    o = offsets[i * (d + 1) + j]
    if t <= 0:
        return tab[o]
    if t >= size:
        return 0.0
    return tab[o + t]


@numba.njit(cache=True)
def _sample_bridge_q_at_least(r, d, q_min, offsets, tab, out):
    i = r
    j = d
    t = q_min
    for pos in range(r + d):
        if i == 0:
            out[pos] = 0
            j -= 1
            continue
        if j == 0:
            out[pos] = 1
            i -= 1
            continue
        p_right = _tail(offsets, tab, d, i - 1, j, t - j) / _tail(offsets, tab, d, i, j, t)
        if np.random.random() < p_right:
            out[pos] = 1
            t -= j
            i -= 1
        else:
            out[pos] = 0
            j -= 1


@numba.njit(cache=True)
def _rejection_q_at_least(steps, lo, hi, q_min, tries, scratch):
    w = hi - lo
    for t in range(w):
        scratch[t] = steps[lo + t]
    for _ in range(tries):
        _shuffle(scratch, 0, w)
        if _window_q(scratch, 0, w) >= q_min:
            for t in range(w):
                steps[lo + t] = scratch[t]
            return True
    return False


@numba.njit(cache=True)
def _flip_chain_q_at_least(steps, lo, hi, q, q_min, proposals):
    w = hi - lo
    if w < 2:
        return q
    for _ in range(proposals):
        i = lo + 1 + int(np.random.random() * (w - 1))
        a = steps[i - 1]
        b = steps[i]
        if a == b:
            continue
        if a == 1:
            if q - 1 < q_min:
                continue
            q -= 1
        else:
            q += 1
        steps[i - 1] = b
        steps[i] = a
    return q


def exact_bridge_table_ok(r: int, d: int) -> bool:
    return comb(r + d, r) <= EXACT_BRIDGE_LIMIT and (r + 1) * (d + 1) * (r * d + 1) <= EXACT_TABLE_LIMIT


def resample_steps(steps: np.ndarray, lo: int, hi: int, q_min: int, rng: RngStream, budget: int = 50,
                   rejection_tries: int = 2000) -> dict:
    """Replace steps[lo:hi] in place by a uniform arrangement with q-area >= q_min.

    Exact table sampling when the bridge space is small, else rejection from
    uniform shuffles, else a corner-flip chain of ``budget`` sweeps.  Each
    branch leaves the conditional uniform law invariant; only the last one is
    flagged approximate because its output is not an independent draw.
    """
    w = hi - lo
    window = steps[lo:hi]
    r = int(window.sum())
    d = w - r
    rng.kernel_seed()
    if r == 0 or d == 0:
        return {"method": "trivial", "approximate": False}
    if q_min > r * d:
        raise BridgeEndpointsInvalid("no arrangement satisfies the area constraint")
    if exact_bridge_table_ok(r, d):
        offsets, tab = _tail_tables(r, d)
        out = np.empty(w, dtype=np.uint8)
        _sample_bridge_q_at_least(r, d, int(q_min), offsets, tab, out)
        steps[lo:hi] = out
        return {"method": "exact", "approximate": False}
    scratch = np.empty(w, dtype=np.uint8)
    if _rejection_q_at_least(steps, lo, hi, int(q_min), int(rejection_tries), scratch):
        return {"method": "rejection", "approximate": False}
    q = _window_q(steps, lo, hi)
    _flip_chain_q_at_least(steps, lo, hi, q, int(q_min), int(budget) * w)
    return {"method": "flip_chain", "approximate": True}


def resample_gibbs(state: ChainState, a: Point, b: Point, rng: RngStream, budget: int = 50) -> ChainState:
    """Resample the bridge of the current path between vertices ``a`` and ``b``.

    The caller must choose (a, b) from the path outside the bridge only.
    """
    path = state.path
    try:
        i = path.index_of(a)
        j = path.index_of(b)
    except PointNotOnPath as exc:
        raise BridgeEndpointsInvalid(str(exc)) from None
    if j < i:
        raise BridgeEndpointsInvalid(f"{tuple(b)} precedes {tuple(a)} on the path")
    head = int(state.st[_HEAD])
    q_old = int(_window_q(state.buf, head + i, head + j))
    excess = state.area - state.params.area_threshold
    info = resample_steps(state.buf, head + i, head + j, q_old - excess, rng, budget)
    state.st[_AREA] += int(_window_q(state.buf, head + i, head + j)) - q_old
    state.last_resample = info
    return state


# --- coupled fixed-endpoint dynamics ----------------------------------------

@numba.njit(cache=True)
def _coupled_kernel(upper, lower, r, d, q_upper, q_min, n_steps, check):
    """Shared (vertex, coin) tape for both chains. Returns (q_upper, violations)."""
    n = r + d
    violations = 0
    if n < 2:
        return q_upper, 0
    for _ in range(n_steps):
        i = 1 + int(np.random.random() * (n - 1))
        # the shared coin picks the direction, so both chains move the same way
        up = np.random.random() < 0.5
        for which in range(2):
            s = upper if which == 0 else lower
            a = s[i - 1]
            b = s[i]
            if a == b:
                continue
            if a == 1:
                if up:
                    continue
                # Right-Down corner: flip down; the upper chain keeps the area constraint
                if which == 0:
                    if q_upper - 1 < q_min:
                        continue
                    q_upper -= 1
                s[i - 1] = 0
                s[i] = 1
            else:
                if not up:
                    continue
                # Down-Right corner: flip up unless vertex i would rise above the chord
                x = 0
                for t in range(i - 1):
                    x += s[t]
                x += 1
                y = d - (i - x)
                if r * (y - d) + d * x > 0:
                    continue
                if which == 0:
                    q_upper += 1
                s[i - 1] = 1
                s[i] = 0
        if check:
            hu = 0
            hl = 0
            for t in range(n):
                hu += 2 * upper[t] - 1
                hl += 2 * lower[t] - 1
                if hl > hu:
                    violations += 1
                    break
    return q_upper, violations


class MonotoneCoupling:
    """Upper (area-constrained) and lower (free) corner-flip chains under a chord [a, b].

    Both start from the same bridge, which must lie weakly below the chord.
    ``q_min`` is the smallest q-area the upper bridge may take.
    """

    def __init__(self, bridge: Bridge, q_min: int, rng: RngStream, check: bool = True):
        r = bridge.b[0] - bridge.a[0]
        d = bridge.a[1] - bridge.b[1]
        if not below_chord(bridge.steps, 0, len(bridge), r, d):
            raise BridgeEndpointsInvalid("initial bridge rises above the chord")
        if bridge.q_area < q_min:
            raise BridgeEndpointsInvalid("initial bridge violates the area constraint")
        self.a, self.b = bridge.a, bridge.b
        self.r, self.d = r, d
        self.upper_steps = bridge.steps.copy()
        self.lower_steps = bridge.steps.copy()
        self.q_upper = int(bridge.q_area)
        self.q_min = int(q_min)
        self.rng = rng
        self.check = check
        self.steps_done = 0
        self.violations = 0

    @classmethod
    def from_path(cls, path: LatticePath, a: Point, b: Point, params: ModelParams, rng: RngStream,
                  check: bool = True) -> "MonotoneCoupling":
        i, j = path.index_of(a), path.index_of(b)
        bridge = Bridge(a, b, path.steps[i:j])
        excess = path.area - params.area_threshold
        return cls(bridge, bridge.q_area - excess, rng, check)

    @property
    def upper(self) -> Bridge:
        return Bridge(self.a, self.b, self.upper_steps)

    @property
    def lower(self) -> Bridge:
        return Bridge(self.a, self.b, self.lower_steps)


def coupled_step(coupling: MonotoneCoupling, n_steps: int = 1) -> MonotoneCoupling:
    coupling.rng.kernel_seed()
    q, v = _coupled_kernel(coupling.upper_steps, coupling.lower_steps, coupling.r, coupling.d,
                           coupling.q_upper, coupling.q_min, int(n_steps), bool(coupling.check))
    coupling.q_upper = int(q)
    coupling.violations += int(v)
    coupling.steps_done += int(n_steps)
    return coupling


def save_checkpoint(state: ChainState, path: str):
    import os
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(state.to_checkpoint(), fh, sort_keys=True)
    os.replace(tmp, path)


def load_checkpoint(path: str) -> ChainState:
    with open(path) as fh:
        return ChainState.from_checkpoint(json.load(fh))

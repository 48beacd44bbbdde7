"""Cones, sector grids, the event catalogue and the sector-by-sector resampling procedure.

Event areas are exact integers (twice the polygon area).  They are compared
with floating thresholds through a 1e-9 guard band: a value within the band
of a positive threshold counts as event-false.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .chain import ChainState, resample_gibbs
from .errors import AuditFailure, DegenerateChord, EmptyIntersection, InvalidParams, NotConnected
from .majorant import (distances_to_polyline, least_concave_majorant, roughness_profile,
                       upper_chain)
from .path_core import Bridge, LatticePath, Point
from .rng import RngStream

log = logging.getLogger(__name__)

GUARD = 1e-9

DEFAULT_EPSILON = 0.1
DEFAULT_ETA = 0.05
DEFAULT_CHI = 0.5
DEFAULT_EPSILON1 = 2.0 / 27.0
DEFAULT_K1 = 3.0
DEFAULT_K2 = 0.15


def exceeds(value: float, threshold: float) -> bool:
    if threshold <= 0.0:
        return value >= threshold
    return value > threshold + GUARD


@dataclass(frozen=True)
class Cone:
    angle_lo: float
    angle_hi: float

    def __post_init__(self):
        if not 0.0 <= self.angle_lo < self.angle_hi <= math.pi / 2 + 1e-12:
            raise InvalidParams(f"cone needs 0 <= lo < hi <= pi/2, got [{self.angle_lo}, {self.angle_hi}]")

    @classmethod
    def degrees(cls, lo: float, hi: float) -> "Cone":
        return cls(math.radians(lo), math.radians(hi))


def vertex_angles(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    ang = np.arctan2(ys.astype(float), xs.astype(float))
    ang[(xs == 0) & (ys == 0)] = np.nan
    return ang


@dataclass(frozen=True)
class ConeSection:
    first: int
    last: int
    x: Point
    y: Point

    @property
    def length(self) -> int:
        return self.last - self.first


def cone_section(path: LatticePath, cone: Cone) -> Optional[ConeSection]:
    xs, ys = path.vertices
    ang = vertex_angles(xs, ys)
    inside = np.flatnonzero((ang >= cone.angle_lo) & (ang <= cone.angle_hi))
    if inside.size == 0:
        return None
    # arguments never increase along the path, so the section is contiguous
    i, j = int(inside[0]), int(inside[-1])
    return ConeSection(i, j, path.vertex(i), path.vertex(j))


def cone_endpoints(path: LatticePath, cone: Cone) -> Tuple[Point, Point, int]:
    """Left-most and right-most vertices of the path inside the cone, and the path length between them."""
    sec = cone_section(path, cone)
    if sec is None:
        raise EmptyIntersection(f"path does not meet the cone [{cone.angle_lo:.4f}, {cone.angle_hi:.4f}]")
    return sec.x, sec.y, sec.length


def chord_angle(x: Point, y: Point) -> float:
    """Angle of the chord [x, y] with the horizontal, in [0, pi/2] for down-right chords."""
    return math.atan2(x[1] - y[1], y[0] - x[0])


def classify_chord(x: Point, y: Point, epsilon: float) -> str:
    if tuple(x) == tuple(y):
        raise DegenerateChord("chord endpoints coincide")
    theta = chord_angle(x, y)
    if theta <= epsilon:
        return "plus"
    if theta >= math.pi / 2 - epsilon:
        return "minus"
    return "neither"


def bad_angle(path: LatticePath, cone: Cone, epsilon: float = DEFAULT_EPSILON) -> str:
    x, y, _ = cone_endpoints(path, cone)
    return classify_chord(x, y, epsilon)


PathOrBridge = Union[LatticePath, Bridge]


def _section_vertices(obj: PathOrBridge, x: Point, y: Point) -> Tuple[np.ndarray, np.ndarray]:
    xs, ys = obj.vertices
    x = (int(x[0]), int(x[1]))
    y = (int(y[0]), int(y[1]))
    offset = xs[0] - ys[0]
    i = x[0] - x[1] - offset
    j = y[0] - y[1] - offset
    n = len(xs)
    if not (0 <= i < n and 0 <= j < n) or (xs[i], ys[i]) != x or (xs[j], ys[j]) != y:
        raise NotConnected(f"{x} and {y} are not both vertices")
    if j < i:
        raise NotConnected(f"{y} comes before {x}")
    return xs[i:j + 1], ys[i:j + 1]


def twice_excess(xs: np.ndarray, ys: np.ndarray) -> int:
    """Twice (area enclosed by origin, x, the sub-path, y) minus twice the triangle (0, x, y)."""
    x0, y0, x1, y1 = int(xs[0]), int(ys[0]), int(xs[-1]), int(ys[-1])
    # the sub-path runs clockwise, so its shoelace terms are negative
    enclose = -int(np.sum(xs[:-1] * ys[1:] - xs[1:] * ys[:-1]))
    triangle = x1 * y0 - x0 * y1
    return enclose - triangle


def _span(x: Point, y: Point) -> float:
    return math.hypot(x[0] - y[0], x[1] - y[1])


def gac_threshold(x: Point, y: Point, eta: float, with_log: bool = False) -> float:
    d = _span(x, y)
    if d == 0.0:
        return 0.0
    t = eta * d**1.5
    if with_log:
        t *= math.sqrt(math.log(d))
    return t


def gac_check(obj: PathOrBridge, x: Point, y: Point, eta: float = DEFAULT_ETA) -> Tuple[bool, float]:
    xs, ys = _section_vertices(obj, x, y)
    excess = twice_excess(xs, ys) / 2.0
    return exceeds(excess, gac_threshold(x, y, eta)), excess


def log_gac_check(obj: PathOrBridge, x: Point, y: Point, eta: float = DEFAULT_ETA) -> Tuple[bool, float]:
    xs, ys = _section_vertices(obj, x, y)
    excess = twice_excess(xs, ys) / 2.0
    return exceeds(excess, gac_threshold(x, y, eta, with_log=True)), excess


def sid_threshold(x: Point, y: Point, eta: float) -> float:
    d = _span(x, y)
    if d <= 1.0:
        return 0.0
    return eta * math.sqrt(d) * math.sqrt(math.log(d))


def inward_deviation(xs: np.ndarray, ys: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distance of each sub-path vertex to the boundary of conv({0, x, y} + sub-path).

    The sub-path lies in the cone spanned by its endpoints, so the boundary is
    [0, x], the upper chain of the sub-path, and [y, 0].
    """
    chain = upper_chain(xs, ys)
    hx = np.r_[0, xs[chain], 0].astype(np.int64)
    hy = np.r_[0, ys[chain], 0].astype(np.int64)
    return distances_to_polyline(xs, ys, hx, hy)[0], np.stack([hx, hy], axis=1)


def log_sid_check(obj: PathOrBridge, x: Point, y: Point, eta: float = DEFAULT_ETA) -> Tuple[bool, float, Point]:
    xs, ys = _section_vertices(obj, x, y)
    dev, _ = inward_deviation(xs, ys)
    w = int(np.argmax(dev))
    witness = (int(xs[w]), int(ys[w]))
    return exceeds(float(dev[w]), sid_threshold(x, y, eta)), float(dev[w]), witness


@dataclass(frozen=True)
class SectorGrid:
    n_target: int
    chi: float
    epsilon1: float
    theta: float
    m: int

    @property
    def s3(self) -> float:
        return self.n_target ** self.epsilon1

    @property
    def s2(self) -> float:
        return self.chi / 4.0 * self.n_target ** self.epsilon1

    @property
    def s1(self) -> float:
        return self.s3 - 1.0

    @property
    def schedule_feasible(self) -> bool:
        return self.s2 < self.chi / 2.0 * self.s1

    def sector(self, j: int) -> Cone:
        self._check(j)
        return Cone((j - 1) * self.theta, min(j * self.theta, math.pi / 2))

    def inner(self, j: int) -> Cone:
        self._check(j)
        return Cone((j - 1) * self.theta + self.theta / 4, j * self.theta - self.theta / 4)

    def _check(self, j: int):
        if not 1 <= j <= self.m:
            raise IndexError(f"sector {j} outside 1..{self.m}")

    @property
    def log_n(self) -> float:
        return math.log(self.n_target)

    def favourable_threshold(self, phi: Optional[float] = None) -> float:
        phi = self.chi ** (2.0 / 3.0) if phi is None else phi
        return phi * self.n_target ** (1.0 / 3.0) * self.log_n ** (2.0 / 3.0)

    def max_facet_bound(self) -> float:
        return self.s2 * self.n_target ** (2.0 / 3.0) * self.log_n ** (1.0 / 3.0)


def build_sector_grid(n_target: int, chi: float = DEFAULT_CHI, epsilon1: float = DEFAULT_EPSILON1) -> SectorGrid:
    if n_target < 2 or not chi > 0 or not 0 < epsilon1 < 2.0 / 3.0:
        raise InvalidParams(f"need N >= 2, chi > 0, epsilon1 in (0, 2/3); got {n_target}, {chi}, {epsilon1}")
    theta = chi * n_target ** (-1.0 / 3.0) * math.log(n_target) ** (1.0 / 3.0)
    m = int(math.floor(math.pi / (2.0 * theta)))
    if m < 1:
        raise InvalidParams(f"sector opening {theta:.3f} exceeds a right angle; no sectors")
    return SectorGrid(int(n_target), float(chi), float(epsilon1), theta, m)


def favourable(path: LatticePath, grid: SectorGrid, j: int, phi: Optional[float] = None,
               profile: Optional[np.ndarray] = None) -> bool:
    """Some vertex in sector j has roughness at least phi(chi) N^(1/3) (log N)^(2/3)."""
    sec = cone_section(path, grid.sector(j))
    if sec is None:
        return False
    if profile is None:
        profile, _ = roughness_profile(path)
    return bool(np.max(profile[sec.first:sec.last + 1]) >= grid.favourable_threshold(phi))


def mbt_set(path: LatticePath, grid: SectorGrid, k1: float = DEFAULT_K1) -> List[int]:
    """Sectors where the majorant moves and turns moderately between consecutive grid angles."""
    maj = least_concave_majorant(path)
    m = grid.m
    angles = [min(j * grid.theta, math.pi / 2) for j in range(m + 1)]
    z = np.array([maj.point_at_angle(a) for a in angles])
    w = np.array([maj.tangent_at_angle(a) for a in angles])
    step_bound = 10.0 * math.pi * k1 * grid.n_target / m
    turn_bound = 10.0 * math.pi / m
    members = []
    for j in range(1, m + 1):
        dist = float(np.hypot(*(z[j] - z[j - 1])))
        turn = math.acos(max(-1.0, min(1.0, float(np.dot(w[j], w[j - 1])))))
        if dist <= step_bound and turn <= turn_bound:
            members.append(j)
    xs, ys = path.vertices
    if np.all(np.hypot(xs, ys) <= k1 * grid.n_target) and len(members) < 0.9 * m:
        log.info("moderate-turning sectors %d of %d on a confined path", len(members), m)
    return members


@dataclass
class EventReport:
    j: int
    acted: bool = False
    empty: bool = False
    success: bool = False
    gac: bool = False
    log_gac: bool = False
    log_sid: bool = False
    favourable: bool = False
    mbt: bool = False
    bad_plus: bool = False
    bad_minus: bool = False
    x: Optional[Point] = None
    y: Optional[Point] = None
    chord_angle: float = float("nan")
    excess: float = float("nan")
    deviation: float = float("nan")
    witness: Optional[Point] = None
    method: str = ""
    approximate: bool = False

    def row(self) -> Dict[str, object]:
        return {k: getattr(self, k) for k in ("j", "acted", "success", "gac", "log_gac", "log_sid",
                                               "favourable", "mbt")}


def evaluate_bridge(report: EventReport, path: LatticePath, x: Point, y: Point, eta: float, epsilon: float):
    report.x, report.y = x, y
    if x == y:
        return report
    report.chord_angle = chord_angle(x, y)
    kind = classify_chord(x, y, epsilon)
    report.bad_plus, report.bad_minus = kind == "plus", kind == "minus"
    report.gac, report.excess = gac_check(path, x, y, eta)
    report.log_gac, _ = log_gac_check(path, x, y, eta)
    report.log_sid, report.deviation, report.witness = log_sid_check(path, x, y, eta)
    return report


def res_j(state: ChainState, grid: SectorGrid, j: int, rng: RngStream, *, eta: float = DEFAULT_ETA,
          epsilon: float = DEFAULT_EPSILON, budget: int = 50, events: bool = True) -> Tuple[ChainState, EventReport]:
    """Resample the path between the extreme vertices of the inner sector B_j."""
    report = EventReport(j)
    path = state.path
    sec = cone_section(path, grid.inner(j))
    if sec is None:
        log.debug("sector %d: inner cone misses the path", j)
        report.empty = True
        return state, report
    if sec.first == sec.last:
        report.x = report.y = sec.x
        return state, report
    resample_gibbs(state, sec.x, sec.y, rng, budget)
    report.acted = True
    report.method = state.last_resample["method"]
    report.approximate = state.last_resample["approximate"]
    if not events:
        return state, report
    new = state.path
    evaluate_bridge(report, new, sec.x, sec.y, eta, epsilon)
    report.success = report.log_gac and report.log_sid
    profile, _ = roughness_profile(new)
    report.favourable = favourable(new, grid, j, profile=profile)
    if report.success:
        lr = float(profile[new.index_of(report.witness)])
        if lr + GUARD < report.deviation:
            raise AuditFailure(f"roughness {lr} at the witness is below its inward deviation {report.deviation}")
    return state, report


@dataclass
class FullResReport:
    selected: List[int]
    sectors: List[EventReport]
    good: List[Dict[str, bool]]
    schedule_feasible: bool
    noninterference_checks: int = 0
    noninterference_violations: int = 0

    def rows(self) -> List[Dict[str, object]]:
        return [r.row() for r in self.sectors]


def _good_events(path: LatticePath, grid: SectorGrid, i: int, k1: float, k2: float, epsilon: float) -> Dict[str, bool]:
    maj = least_concave_majorant(path)
    lengths = maj.facet_lengths
    g1 = bool(lengths.size == 0 or lengths.max() <= grid.max_facet_bound())
    xs, ys = path.vertices
    r = np.hypot(xs, ys)
    g2 = bool(np.all(r <= k1 * grid.n_target) and np.all(r > k2 * grid.n_target))
    g3 = True
    if i >= 1:
        sec = cone_section(path, grid.inner(i))
        if sec is not None and sec.first != sec.last:
            g3 = classify_chord(sec.x, sec.y, epsilon) == "neither"
    return {"g1": g1, "g2": g2, "g3": g3}


def full_res(state: ChainState, grid: SectorGrid, rng: RngStream, *, eta: float = DEFAULT_ETA,
             epsilon: float = DEFAULT_EPSILON, k1: float = DEFAULT_K1, k2: float = DEFAULT_K2,
             budget: int = 50, events: bool = True) -> Tuple[ChainState, FullResReport]:
    """Visit sectors 1..m in order, resampling sector j when an independent Bernoulli(1/s3) coin says so."""
    if not grid.schedule_feasible:
        log.debug("schedule s2 < (chi/2) s1 fails at N=%d", grid.n_target)
    coins = rng.random(grid.m) < 1.0 / grid.s3
    selected = [j + 1 for j in np.flatnonzero(coins).tolist()]
    report = FullResReport(selected, [], [], grid.schedule_feasible)
    bound = grid.max_facet_bound()
    if events:
        report.good.append(_good_events(state.path, grid, 0, k1, k2, epsilon))
    for j in range(1, grid.m + 1):
        if j not in selected:
            if events:
                report.good.append(_good_events(state.path, grid, j, k1, k2, epsilon))
            continue
        before = state.path if events else None
        state, rep = res_j(state, grid, j, rng, eta=eta, epsilon=epsilon, budget=budget, events=events)
        if events:
            after = state.path
            rep.mbt = j in mbt_set(after, grid, k1)
            report.good.append(_good_events(after, grid, j, k1, k2, epsilon))
            if rep.acted and least_concave_majorant(before).facet_lengths.max(initial=0.0) <= bound \
                    and least_concave_majorant(after).facet_lengths.max(initial=0.0) <= bound:
                prof_b, _ = roughness_profile(before)
                prof_a, _ = roughness_profile(after)
                for k in range(1, grid.m + 1):
                    if abs(k - j) >= grid.s3 + 1:
                        report.noninterference_checks += 1
                        if favourable(before, grid, k, profile=prof_b) != favourable(after, grid, k, profile=prof_a):
                            report.noninterference_violations += 1
        report.sectors.append(rep)
    if report.noninterference_violations:
        log.warning("favourable status changed in %d of %d distant sectors", report.noninterference_violations,
                    report.noninterference_checks)
    return state, report


def cone_area_statistic(path: LatticePath, n_target: int) -> Optional[float]:
    """Excess area over the chord between the extreme vertices in the diagonal cone of opening N^(-1/3).

    Returns None when the cone meets the path in fewer than two vertices.
    """
    half = n_target ** (-1.0 / 3.0) / 2.0
    cone = Cone(max(math.pi / 4 - half, 0.0), min(math.pi / 4 + half, math.pi / 2))
    sec = cone_section(path, cone)
    if sec is None or sec.first == sec.last:
        return None
    xs, ys = path.vertices
    return twice_excess(xs[sec.first:sec.last + 1], ys[sec.first:sec.last + 1]) / 2.0


def sector_reports(path: LatticePath, grid: SectorGrid, *, eta: float = DEFAULT_ETA, epsilon: float = DEFAULT_EPSILON,
                   k1: float = DEFAULT_K1) -> List[EventReport]:
    """Event flags of every sector for a fixed path, without resampling (``acted`` stays False)."""
    profile, _ = roughness_profile(path)
    members = set(mbt_set(path, grid, k1))
    reports = []
    for j in range(1, grid.m + 1):
        rep = EventReport(j)
        sec = cone_section(path, grid.inner(j))
        if sec is None:
            rep.empty = True
        else:
            evaluate_bridge(rep, path, sec.x, sec.y, eta, epsilon)
            rep.success = rep.log_gac and rep.log_sid
        rep.favourable = favourable(path, grid, j, profile=profile)
        rep.mbt = j in members
        reports.append(rep)
    return reports

"""Down-right lattice paths from the y-axis to the x-axis.

A path is stored as its start height ``k`` plus a bit-packed step sequence
(most significant bit first, ``1`` = Right, ``0`` = Down).  Vertex coordinates
are derived on demand.  Every value type here is immutable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import (
    EndpointMismatch,
    IndexOutOfRange,
    InvalidParams,
    MalformedPath,
    NotAHorizontalStep,
    PointNotOnPath,
)

RIGHT = 1
DOWN = 0

Point = Tuple[int, int]
StepsLike = Union[str, Sequence[int], np.ndarray]


@dataclass(frozen=True)
class ModelParams:
    """Fugacity ``lam`` in (0, 1/2) and target side ``n_target``; the area threshold is n_target**2."""

    lam: float
    n_target: int

    def __post_init__(self):
        if not (0.0 < self.lam < 0.5) or not math.isfinite(self.lam):
            raise InvalidParams(f"lambda must lie in (0, 1/2), got {self.lam!r}")
        if int(self.n_target) != self.n_target or self.n_target < 1:
            raise InvalidParams(f"n_target must be a positive integer, got {self.n_target!r}")

    @property
    def area_threshold(self) -> int:
        return int(self.n_target) ** 2

    @property
    def partition_function(self) -> float:
        """Total free weight sum_n 2^n lam^n = 1 / (1 - 2 lam)."""
        return 1.0 / (1.0 - 2.0 * self.lam)


def steps_to_array(steps: StepsLike) -> np.ndarray:
    if isinstance(steps, str):
        raw = np.frombuffer(steps.encode("ascii"), dtype=np.uint8)
        bad = (raw != ord("R")) & (raw != ord("D"))
        if bad.any():
            raise MalformedPath(f"step string may contain only R and D: {steps!r}")
        return (raw == ord("R")).astype(np.uint8)
    arr = np.asarray(steps, dtype=np.int64).ravel()
    if arr.size and ((arr < 0) | (arr > 1)).any():
        raise MalformedPath("step values must be 0 (Down) or 1 (Right)")
    return arr.astype(np.uint8)


def steps_to_string(steps: np.ndarray) -> str:
    codes = np.where(np.asarray(steps, dtype=bool), ord("R"), ord("D")).astype(np.uint8)
    return codes.tobytes().decode("ascii")


def _area_of(start_height: int, steps: np.ndarray) -> int:
    if steps.size == 0:
        return 0
    downs = steps == DOWN
    heights_before = start_height - (np.cumsum(downs, dtype=np.int64) - downs)
    return int(heights_before[steps == RIGHT].sum())


def vertex_coords(start_height: int, steps: np.ndarray, origin: Point = (0, None)) -> Tuple[np.ndarray, np.ndarray]:
    """Vertex coordinates (xs, ys) of a step sequence starting at ``origin`` (default (0, k))."""
    x0 = origin[0]
    y0 = start_height if origin[1] is None else origin[1]
    s = steps.astype(np.int64)
    xs = np.empty(s.size + 1, dtype=np.int64)
    ys = np.empty(s.size + 1, dtype=np.int64)
    xs[0] = x0
    ys[0] = y0
    np.cumsum(s, out=xs[1:])
    xs[1:] += x0
    np.cumsum(1 - s, out=ys[1:])
    ys[1:] = y0 - ys[1:]
    return xs, ys


class LatticePath:
    """An oriented path from (0, k) to (x_end, 0)."""

    __slots__ = ("start_height", "length", "_packed", "_area", "__dict__")

    def __init__(self, start_height: int, steps: StepsLike):
        arr = steps_to_array(steps)
        k = int(start_height)
        if k < 0:
            raise MalformedPath("start height must be nonnegative")
        n_down = int(arr.size - arr.sum())
        if n_down != k:
            raise MalformedPath(f"path from height {k} has {n_down} Down steps; it must end on the x-axis")
        self.start_height = k
        self.length = int(arr.size)
        self._packed = np.packbits(arr).tobytes()
        self._area = _area_of(k, arr)

    @classmethod
    def parse(cls, text: str) -> "LatticePath":
        """Parse the canonical ``k:SSSS`` encoding."""
        head, sep, body = text.strip().partition(":")
        if not sep:
            raise MalformedPath(f"expected 'k:STEPS', got {text!r}")
        try:
            k = int(head)
        except ValueError:
            raise MalformedPath(f"bad start height in {text!r}") from None
        return cls(k, body)

    @classmethod
    def square(cls, side: int) -> "LatticePath":
        return cls(side, np.r_[np.ones(side, np.uint8), np.zeros(side, np.uint8)])

    def encode(self) -> str:
        return f"{self.start_height}:{steps_to_string(self.steps)}"

    def __str__(self) -> str:
        return self.encode()

    def __repr__(self) -> str:
        text = self.encode()
        if len(text) > 60:
            text = text[:57] + "..."
        return f"LatticePath({text!r})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, LatticePath):
            return NotImplemented
        return (self.start_height, self.length, self._packed) == (other.start_height, other.length, other._packed)

    def __hash__(self) -> int:
        return hash((self.start_height, self.length, self._packed))

    def __len__(self) -> int:
        return self.length

    @cached_property
    def steps(self) -> np.ndarray:
        arr = np.unpackbits(np.frombuffer(self._packed, dtype=np.uint8), count=self.length)
        arr.setflags(write=False)
        return arr

    @property
    def area(self) -> int:
        return self._area

    def recompute_area(self) -> int:
        """From-scratch shoelace area of (0,0) -> (0,k) -> ... -> (x_end,0) -> (0,0)."""
        xs, ys = self.vertices
        px = np.r_[0, xs, 0]
        py = np.r_[0, ys, 0]
        twice = int(np.sum(px[1:] * py[:-1] - px[:-1] * py[1:]))
        return twice // 2

    @property
    def x_end(self) -> int:
        return self.length - self.start_height

    @property
    def start(self) -> Point:
        return (0, self.start_height)

    @property
    def end(self) -> Point:
        return (self.x_end, 0)

    @cached_property
    def vertices(self) -> Tuple[np.ndarray, np.ndarray]:
        xs, ys = vertex_coords(self.start_height, self.steps)
        xs.setflags(write=False)
        ys.setflags(write=False)
        return xs, ys

    def vertex(self, i: int) -> Point:
        xs, ys = self.vertices
        return int(xs[i]), int(ys[i])

    def index_of(self, point: Point) -> int:
        """Position of ``point`` in the vertex list.

        x - y grows by one at every step, so the candidate index is known
        without a search.
        """
        x, y = int(point[0]), int(point[1])
        i = x - y + self.start_height
        if 0 <= i <= self.length and self.vertex(i) == (x, y):
            return i
        raise PointNotOnPath(f"{(x, y)} is not a vertex of {self!r}")


class Bridge:
    """A down-right path between two lattice points ``a`` and ``b``."""

    __slots__ = ("a", "b", "steps", "__dict__")

    def __init__(self, a: Point, b: Point, steps: StepsLike):
        a = (int(a[0]), int(a[1]))
        b = (int(b[0]), int(b[1]))
        if a[0] > b[0] or a[1] < b[1]:
            raise MalformedPath(f"no down-right bridge from {a} to {b}")
        arr = steps_to_array(steps)
        n_right = int(arr.sum())
        if n_right != b[0] - a[0] or arr.size - n_right != a[1] - b[1]:
            raise MalformedPath(f"steps do not join {a} to {b}")
        arr.setflags(write=False)
        self.a = a
        self.b = b
        self.steps = arr

    def __eq__(self, other) -> bool:
        if not isinstance(other, Bridge):
            return NotImplemented
        return self.a == other.a and self.b == other.b and np.array_equal(self.steps, other.steps)

    def __hash__(self) -> int:
        return hash((self.a, self.b, self.steps.tobytes()))

    def __repr__(self) -> str:
        return f"Bridge({self.a}, {self.b}, {steps_to_string(self.steps)!r})"

    def __len__(self) -> int:
        return int(self.steps.size)

    @property
    def text(self) -> str:
        return steps_to_string(self.steps)

    @cached_property
    def vertices(self) -> Tuple[np.ndarray, np.ndarray]:
        return vertex_coords(0, self.steps, origin=self.a)

    @property
    def q_area(self) -> int:
        """Area between the bridge and the horizontal line through ``b``, within [a.x, b.x]."""
        return _area_of(self.a[1] - self.b[1], self.steps)

    def heights(self) -> np.ndarray:
        """Height profile indexed by step: x + y at each vertex (a +/-1 walk).

        Two bridges with the same endpoints are ordered by comparing this profile pointwise.
        """
        s = self.steps.astype(np.int64)
        return np.r_[0, np.cumsum(2 * s - 1)] + (self.a[0] + self.a[1])


def area(path: LatticePath) -> int:
    return path.area


def excess_area(path: LatticePath, params: ModelParams) -> int:
    return path.area - params.area_threshold


def restrict(path: LatticePath, a: Point, b: Point) -> Bridge:
    """The sub-bridge of ``path`` between its vertices ``a`` and ``b``."""
    i = path.index_of(a)
    j = path.index_of(b)
    if j < i:
        raise PointNotOnPath(f"{tuple(b)} is visited before {tuple(a)}")
    return Bridge(a, b, path.steps[i:j])


def dominates(p: Bridge, q: Bridge) -> bool:
    """True iff ``p`` lies weakly above ``q``.

    Along every anti-diagonal x - y = c both bridges have exactly one vertex;
    p dominates q when p's vertex is the farther from the origin each time.
    This is the order preserved by the coupled corner-flip dynamics.
    """
    if p.a != q.a or p.b != q.b:
        raise EndpointMismatch(f"bridges join {p.a}->{p.b} and {q.a}->{q.b}")
    return bool(np.all(p.heights() >= q.heights()))


class Flipped(NamedTuple):
    path: LatticePath
    area_delta: int


def corner_flip(path: LatticePath, i: int) -> Optional[Flipped]:
    """Swap steps i-1 and i; ``None`` when they are collinear."""
    if not 1 <= i <= path.length - 1:
        raise IndexOutOfRange(f"vertex {i} is not interior to a path of length {path.length}")
    s = path.steps
    if s[i - 1] == s[i]:
        return None
    new = s.copy()
    new[i - 1], new[i] = s[i], s[i - 1]
    delta = -1 if s[i - 1] == RIGHT else 1
    return Flipped(LatticePath(path.start_height, new), delta)


def surg(path: LatticePath, horizontal_indices: Iterable[int]) -> LatticePath:
    """Insert a Down step just before each selected Right step."""
    chosen = sorted(set(int(i) for i in horizontal_indices))
    s = path.steps
    for i in chosen:
        if not 0 <= i < path.length or s[i] != RIGHT:
            raise NotAHorizontalStep(f"step {i} is not a Right step")
    if not chosen:
        return path
    new = np.insert(s, chosen, DOWN)
    return LatticePath(path.start_height + len(chosen), new)

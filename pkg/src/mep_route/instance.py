"""Problem instances, solutions and the distance functions shared by every module.

Node ids are 1-based everywhere they are visible to users (JSON, tours,
breaks); arrays inside the solver are 0-based.
"""
from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from .errors import InstanceError

Coord = Tuple[float, float]


class Variant(str, enum.Enum):
    BASIC = "BasicReturningTSP"
    NONRETURNING = "NonReturningMTSP"
    RETURNING = "ReturningMTSP"
    DEPOT = "SingleDepotReturningMTSP"
    CETSP = "ReturningCETSP"

    @property
    def returning(self) -> bool:
        return self is not Variant.NONRETURNING

    @property
    def cli_name(self) -> str:
        return _CLI_NAMES[self]

    @classmethod
    def parse(cls, text: str) -> "Variant":
        for v in cls:
            if text == v.value or text == _CLI_NAMES[v]:
                return v
        raise InstanceError(f"unknown variant {text!r}")


_CLI_NAMES = {
    Variant.BASIC: "basic",
    Variant.NONRETURNING: "mtsp-open",
    Variant.RETURNING: "mtsp-returning",
    Variant.DEPOT: "mtsp-depot",
    Variant.CETSP: "cetsp",
}


@dataclass(frozen=True)
class Node:
    id: int
    position: Coord
    radius: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.position):
            raise InstanceError(f"node {self.id}: non-finite coordinates")
        if not (self.radius >= 0.0 and math.isfinite(self.radius)):
            raise InstanceError(f"node {self.id}: radius must be a finite value >= 0")


@dataclass(frozen=True)
class Depot:
    position: Coord

    def __post_init__(self):
        if not all(math.isfinite(c) for c in self.position):
            raise InstanceError("depot: non-finite coordinates")


@dataclass(frozen=True)
class ProblemInstance:
    """A routing instance.

    Validation happens on construction, so any instance that exists satisfies
    the variant rules (depot only for the depot variant, radii only for CETSP,
    a single salesman for CETSP, ``salesmen <= len(nodes)``).
    """

    nodes: Tuple[Node, ...]
    variant: Variant = Variant.BASIC
    salesmen: int = 1
    depot: Optional[Depot] = None
    balance_eta: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "variant", Variant(self.variant))
        n = len(self.nodes)
        if n < 1:
            raise InstanceError("instance needs at least one node")
        ids = sorted(nd.id for nd in self.nodes)
        if ids != list(range(1, n + 1)):
            raise InstanceError("node ids must be unique and contiguous from 1")
        if self.nodes != tuple(sorted(self.nodes, key=lambda nd: nd.id)):
            object.__setattr__(self, "nodes", tuple(sorted(self.nodes, key=lambda nd: nd.id)))
        v = self.variant
        if (self.depot is not None) != (v is Variant.DEPOT):
            raise InstanceError("a depot is required for, and only allowed with, the depot variant")
        if v is not Variant.CETSP and any(nd.radius != 0.0 for nd in self.nodes):
            raise InstanceError("nonzero radii are only allowed for the CETSP variant")
        if self.salesmen < 1:
            raise InstanceError("salesmen must be >= 1")
        if v in (Variant.CETSP, Variant.BASIC) and self.salesmen != 1:
            raise InstanceError(f"{v.value} is a single-salesman variant")
        if self.salesmen > n:
            raise InstanceError(f"salesmen ({self.salesmen}) exceeds node count ({n})")
        if not (self.balance_eta >= 0.0 and math.isfinite(self.balance_eta)):
            raise InstanceError("eta must be a finite value >= 0")

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def coords(self) -> np.ndarray:
        return np.array([nd.position for nd in self.nodes], dtype=float).reshape(-1, 2)

    @property
    def radii(self) -> np.ndarray:
        return np.array([nd.radius for nd in self.nodes], dtype=float)

    @property
    def depot_xy(self) -> Optional[np.ndarray]:
        return None if self.depot is None else np.asarray(self.depot.position, dtype=float)

    def scale(self) -> float:
        """Bounding-box diagonal of nodes and depot (1.0 for a degenerate box)."""
        pts = self.coords
        if self.depot is not None:
            pts = np.vstack([pts, self.depot_xy])
        diag = float(np.hypot(*(pts.max(axis=0) - pts.min(axis=0))))
        return diag if diag > 0 else 1.0

    def spread(self) -> float:
        """Mean squared distance of the nodes to their centroid."""
        x = self.coords
        var = float(np.mean(np.sum((x - x.mean(axis=0)) ** 2, axis=1)))
        return var if var > 0 else self.scale() ** 2

    def replace(self, **changes) -> "ProblemInstance":
        kw = dict(nodes=self.nodes, variant=self.variant, salesmen=self.salesmen,
                  depot=self.depot, balance_eta=self.balance_eta)
        kw.update(changes)
        return ProblemInstance(**kw)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "salesmen": self.salesmen,
            "eta": self.balance_eta,
            "depot": None if self.depot is None else list(self.depot.position),
            "nodes": [{"id": nd.id, "x": nd.position[0], "y": nd.position[1],
                       "radius": nd.radius} for nd in self.nodes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemInstance":
        try:
            nodes = [Node(int(e["id"]), (float(e["x"]), float(e["y"])), float(e.get("radius", 0.0)))
                     for e in data["nodes"]]
            depot = data.get("depot")
            return cls(
                nodes=tuple(nodes),
                variant=Variant.parse(data.get("variant", Variant.BASIC.value)),
                salesmen=int(data.get("salesmen", 1)),
                depot=None if depot is None else Depot((float(depot[0]), float(depot[1]))),
                balance_eta=float(data.get("eta", 0.0)),
            )
        except (KeyError, TypeError, IndexError) as exc:
            raise InstanceError(f"malformed instance JSON: {exc}") from exc


def make_instance(coords, variant=Variant.BASIC, salesmen=1, depot=None,
                  radius=0.0, eta=0.0) -> ProblemInstance:
    """Build an instance from an ``(n, 2)`` array-like of coordinates."""
    coords = np.asarray(coords, dtype=float).reshape(-1, 2)
    radii = np.broadcast_to(np.asarray(radius, dtype=float), (len(coords),))
    nodes = tuple(Node(i + 1, (float(x), float(y)), float(r))
                  for i, ((x, y), r) in enumerate(zip(coords, radii)))
    return ProblemInstance(
        nodes=nodes, variant=Variant(variant), salesmen=salesmen,
        depot=None if depot is None else Depot((float(depot[0]), float(depot[1]))),
        balance_eta=eta,
    )


def load_instance(path) -> ProblemInstance:
    with open(path, "r", encoding="utf-8") as fh:
        return ProblemInstance.from_dict(json.load(fh))


def dump_instance(instance: ProblemInstance, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(instance.to_dict(), fh, indent=2)
        fh.write("\n")


# ---- distances -----------------------------------------------------------

def squared_distance(a, b) -> float:
    """||a - b||^2."""
    dx = float(a[0]) - float(b[0])
    dy = float(a[1]) - float(b[1])
    return dx * dx + dy * dy


def close_enough_distance(x, y, rho: float, interior_zero: bool = True) -> float:
    """Squared gap between ``y`` and the disk of radius ``rho`` around ``x``.

    With ``interior_zero`` (the default) points inside the disk cost nothing;
    without it the raw ``(||y - x|| - rho)^2`` is returned everywhere. When
    ``rho == 0`` the result is exactly :func:`squared_distance`.
    """
    r2 = squared_distance(x, y)
    if rho == 0.0:
        return r2
    r = math.sqrt(r2)
    if interior_zero and r <= rho:
        return 0.0
    return (r - rho) ** 2


def pairwise_squared(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix of squared distances between rows of ``a`` (n,2) and ``b`` (k,2)."""
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def pairwise_close_enough(x: np.ndarray, y: np.ndarray, radii: np.ndarray,
                          interior_zero: bool = True) -> np.ndarray:
    r2 = pairwise_squared(x, y)
    rho = radii[:, None]
    gap = np.sqrt(r2) - rho
    if interior_zero:
        gap = np.maximum(gap, 0.0)
    return np.where(rho > 0.0, gap * gap, r2)


def tour_length(points, closed: bool, metric: str = "euclidean") -> float:
    """Length of a polyline through ``points`` (plus the closing link if ``closed``)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 2:
        return 0.0
    if closed:
        pts = np.vstack([pts, pts[:1]])
    seg = np.diff(pts, axis=0)
    sq = np.einsum("ij,ij->i", seg, seg)
    if metric == "squared":
        return float(sq.sum())
    if metric == "euclidean":
        return float(np.sqrt(sq).sum())
    raise ValueError(f"unknown metric {metric!r}")


# ---- solutions -----------------------------------------------------------

@dataclass
class Solution:
    variant: Variant
    tours: list
    breaks: tuple
    euclidean_length: float
    squared_length: float
    codevectors: Optional[np.ndarray] = None
    waypoints: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "variant": Variant(self.variant).value,
            "tours": [[int(i) for i in t] for t in self.tours],
            "breaks": [int(k) for k in self.breaks],
            "euclidean_length": float(self.euclidean_length),
            "squared_length": float(self.squared_length),
            "waypoints": None if self.waypoints is None
            else [[float(a), float(b)] for a, b in np.asarray(self.waypoints)],
        }


def tour_points(tour: Sequence[int], instance: ProblemInstance) -> np.ndarray:
    """Coordinates of a tour, wrapped with the depot for the depot variant."""
    x = instance.coords
    pts = x[np.asarray(tour, dtype=int) - 1] if len(tour) else np.empty((0, 2))
    if instance.variant is Variant.DEPOT:
        d = instance.depot_xy[None, :]
        pts = np.vstack([d, pts, d])
    return pts


def tours_length(tours: Iterable[Sequence[int]], instance: ProblemInstance,
                 metric: str = "euclidean") -> float:
    """Total length of a set of tours under the instance's variant rules.

    Depot tours are closed through the depot (the stored polyline already
    starts and ends there); non-returning tours are open paths.
    """
    closed = instance.variant.returning and instance.variant is not Variant.DEPOT
    return float(sum(tour_length(tour_points(t, instance), closed, metric) for t in tours))


def check_partition(tours: Sequence[Sequence[int]], n: int) -> None:
    seen = [i for t in tours for i in t]
    if sorted(seen) != list(range(1, n + 1)):
        raise InstanceError("tours do not visit every node exactly once")

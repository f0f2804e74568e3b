"""Deterministic stand-in for a routing service on a synthetic road grid.

Plans shortest routes, annotates turn maneuvers from heading changes, estimates
travel time at constant speed and samples evenly spaced frame descriptors
along the route.
"""

from __future__ import annotations

import heapq
import json
import math
import random
from bisect import bisect_left
from dataclasses import dataclass, field
from functools import cached_property

from .errors import BadFrameCount, DegenerateRoute, InvalidDims, NoPath, ValidationError
from .geo import (
    DEFAULT_EARTH,
    EarthModel,
    GeoCoordinate,
    TranslationVector,
    bearing_deg,
    offset_coordinate,
    translation_between,
)

MANEUVER_KINDS = ("left", "right", "straight", "u-turn", "merge", "exit", "roundabout")
DEFAULT_SPEED_MPS = 10.0
STRAIGHT_MAX_DEG = 30.0
UTURN_MIN_DEG = 150.0
SIGNAL_PROBABILITY = 0.3

_STREET_NAMES = (
    "Main", "Oak", "Pine", "Maple", "Cedar", "Elm", "Walnut", "Birch", "Willow",
    "Spruce", "Chestnut", "Harbor", "Mill", "Ridge", "Lake", "Hill", "Park",
    "Station", "Bridge", "Garden", "Market", "Church", "Union", "Liberty",
)
_STREET_SUFFIXES = ("Street", "Avenue", "Road", "Boulevard", "Drive", "Lane")


@dataclass(frozen=True)
class RoadEdge:
    a: int
    b: int
    length_m: float
    road_name: str


@dataclass(frozen=True)
class RoadGraph:
    nodes: tuple[tuple[int, GeoCoordinate], ...]
    edges: tuple[RoadEdge, ...]
    seed: int = 0
    signals: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        ids = [nid for nid, _ in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate node ids in road graph")
        known = set(ids)
        for e in self.edges:
            if e.a not in known or e.b not in known:
                raise ValidationError(f"edge {e.a}-{e.b} references unknown node")
            if not e.length_m > 0:
                raise ValidationError(f"edge {e.a}-{e.b} has non-positive length")

    @cached_property
    def coords(self) -> dict[int, GeoCoordinate]:
        return dict(self.nodes)

    @cached_property
    def adjacency(self) -> dict[int, list[tuple[int, float, str]]]:
        adj: dict[int, list[tuple[int, float, str]]] = {nid: [] for nid, _ in self.nodes}
        for e in self.edges:
            adj[e.a].append((e.b, e.length_m, e.road_name))
            adj[e.b].append((e.a, e.length_m, e.road_name))
        for nbrs in adj.values():
            nbrs.sort()
        return adj

    def edge(self, a: int, b: int) -> tuple[float, str]:
        for nb, length, name in self.adjacency[a]:
            if nb == b:
                return length, name
        raise KeyError((a, b))

    def nearest_node(self, p: GeoCoordinate, earth: EarthModel = DEFAULT_EARTH) -> int:
        best_id, best_d = None, math.inf
        for nid, c in self.nodes:
            d = translation_between(p, c, earth).horizontal_norm
            if d < best_d or (d == best_d and nid < best_id):
                best_id, best_d = nid, d
        if best_id is None:
            raise ValidationError("road graph has no nodes")
        return best_id

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "nodes": [{"id": nid, "lat": c.lat, "lon": c.lon} for nid, c in self.nodes],
            "edges": [
                {"a": e.a, "b": e.b, "length_m": e.length_m, "road_name": e.road_name}
                for e in self.edges
            ],
            "signals": sorted(self.signals),
        }

    @classmethod
    def from_dict(cls, d: dict) -> RoadGraph:
        return cls(
            nodes=tuple((int(n["id"]), GeoCoordinate(n["lat"], n["lon"])) for n in d["nodes"]),
            edges=tuple(
                RoadEdge(int(e["a"]), int(e["b"]), float(e["length_m"]), str(e["road_name"]))
                for e in d["edges"]
            ),
            seed=int(d.get("seed", 0)),
            signals=frozenset(int(s) for s in d.get("signals", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> RoadGraph:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Maneuver:
    kind: str
    distance_from_prev_m: float
    has_signal: bool = False
    node_id: int | None = None
    road_name: str = ""

    def __post_init__(self) -> None:
        if self.kind not in MANEUVER_KINDS:
            raise ValidationError(f"unknown maneuver kind {self.kind!r}")
        if self.distance_from_prev_m < 0:
            raise ValidationError("maneuver distance must be non-negative")


@dataclass(frozen=True)
class Route:
    node_path: tuple[int, ...]
    coords: tuple[GeoCoordinate, ...]
    leg_lengths_m: tuple[float, ...]
    total_length_m: float
    duration_s: float
    maneuvers: tuple[Maneuver, ...]

    @cached_property
    def cumulative_m(self) -> tuple[float, ...]:
        acc, out = 0.0, [0.0]
        for leg in self.leg_lengths_m:
            acc += leg
            out.append(acc)
        return tuple(out)

    @cached_property
    def maneuver_positions_m(self) -> tuple[float, ...]:
        acc, out = 0.0, []
        for m in self.maneuvers:
            acc += m.distance_from_prev_m
            out.append(acc)
        return tuple(out)


@dataclass(frozen=True)
class RouteFrame:
    index: int
    position: GeoCoordinate
    heading_deg: float
    next_maneuver: Maneuver | None
    dist_to_next_maneuver_m: float
    arc_length_m: float


def _street_names(rng: random.Random, count: int, suffix_pool: tuple[str, ...]) -> list[str]:
    bases = rng.sample(_STREET_NAMES, k=min(count, len(_STREET_NAMES)))
    while len(bases) < count:
        bases.append(f"{rng.choice(_STREET_NAMES)} {len(bases) + 1}")
    return [f"{b} {rng.choice(suffix_pool)}" for b in bases]


def synthesize_graph(
    seed: int,
    grid_w: int,
    grid_h: int,
    origin: GeoCoordinate,
    spacing_m: float,
    earth: EarthModel = DEFAULT_EARTH,
) -> RoadGraph:
    """Build a ``grid_w`` x ``grid_h`` street grid with ``origin`` at its south-west corner.

    Node ``j * grid_w + i`` sits ``i * spacing_m`` east and ``j * spacing_m``
    north of the origin. East-west streets and north-south avenues get seeded
    names; signalised intersections are drawn with a seeded coin.
    """
    if grid_w < 2 or grid_h < 2:
        raise InvalidDims(f"grid must be at least 2x2, got {grid_w}x{grid_h}")
    if not spacing_m > 0:
        raise InvalidDims(f"spacing must be positive, got {spacing_m}")
    rng = random.Random(seed)
    rows = _street_names(rng, grid_h, ("Street", "Road", "Lane"))
    cols = _street_names(rng, grid_w, ("Avenue", "Boulevard", "Drive"))

    nodes = []
    for j in range(grid_h):
        for i in range(grid_w):
            t = TranslationVector(i * spacing_m, j * spacing_m, 0.0)
            nodes.append((j * grid_w + i, offset_coordinate(origin, t, earth)))

    edges = []
    for j in range(grid_h):
        for i in range(grid_w):
            nid = j * grid_w + i
            if i + 1 < grid_w:
                edges.append(RoadEdge(nid, nid + 1, float(spacing_m), rows[j]))
            if j + 1 < grid_h:
                edges.append(RoadEdge(nid, nid + grid_w, float(spacing_m), cols[i]))

    signals = frozenset(nid for nid, _ in nodes if rng.random() < SIGNAL_PROBABILITY)
    return RoadGraph(tuple(nodes), tuple(edges), seed=seed, signals=signals)


def classify_turn(heading_in: float, heading_out: float) -> str:
    """Map a heading change to a maneuver kind; clockwise changes are right turns."""
    delta = (heading_out - heading_in + 180.0) % 360.0 - 180.0
    if abs(delta) < STRAIGHT_MAX_DEG:
        return "straight"
    if abs(delta) >= UTURN_MIN_DEG:
        return "u-turn"
    return "right" if delta > 0 else "left"


def _shortest_path(graph: RoadGraph, src: int, dst: int, earth: EarthModel) -> list[int]:
    # Dijkstra over (node, previous node) states with lexicographic cost
    # (length, turns): shortest by length, fewest turns among equal lengths.
    coords = graph.coords

    def heading(a: int, b: int) -> float:
        return bearing_deg(translation_between(coords[a], coords[b], earth))

    start = (src, -1)
    best: dict[tuple[int, int], tuple[float, int]] = {start: (0.0, 0)}
    parent: dict[tuple[int, int], tuple[int, int] | None] = {start: None}
    heap = [(0.0, 0, src, -1)]
    while heap:
        length, turns, node, prev = heapq.heappop(heap)
        state = (node, prev)
        if best.get(state) != (length, turns):
            continue
        if node == dst:
            path = []
            cur: tuple[int, int] | None = state
            while cur is not None:
                path.append(cur[0])
                cur = parent[cur]
            return path[::-1]
        for nb, edge_len, _ in graph.adjacency[node]:
            if nb == prev:
                continue
            extra = 0
            if prev >= 0 and classify_turn(heading(prev, node), heading(node, nb)) != "straight":
                extra = 1
            cand = (length + edge_len, turns + extra)
            nstate = (nb, node)
            if nstate not in best or cand < best[nstate]:
                best[nstate] = cand
                parent[nstate] = state
                heapq.heappush(heap, (cand[0], cand[1], nb, node))
    raise NoPath(f"no path between nodes {src} and {dst}")


def _annotate(graph: RoadGraph, path: list[int], legs: list[float], earth: EarthModel) -> list[Maneuver]:
    coords = graph.coords
    maneuvers: list[Maneuver] = []
    since_last = legs[0]
    for k in range(1, len(path) - 1):
        a, b, c = path[k - 1], path[k], path[k + 1]
        h_in = bearing_deg(translation_between(coords[a], coords[b], earth))
        h_out = bearing_deg(translation_between(coords[b], coords[c], earth))
        kind = classify_turn(h_in, h_out)
        if kind != "straight":
            _, road = graph.edge(b, c)
            maneuvers.append(Maneuver(kind, since_last, b in graph.signals, b, road))
            since_last = 0.0
        since_last += legs[k]
    if not maneuvers:
        # a turn-free route is described by one straight run to the destination
        _, road = graph.edge(path[0], path[1])
        maneuvers.append(Maneuver("straight", since_last, path[-1] in graph.signals, path[-1], road))
    return maneuvers


def plan_route(
    graph: RoadGraph,
    src: GeoCoordinate,
    dst: GeoCoordinate,
    speed_mps: float = DEFAULT_SPEED_MPS,
    earth: EarthModel = DEFAULT_EARTH,
) -> Route:
    if not speed_mps > 0 or not math.isfinite(speed_mps):
        raise ValidationError(f"speed must be positive, got {speed_mps}")
    a = graph.nearest_node(src, earth)
    b = graph.nearest_node(dst, earth)
    if a == b:
        raise DegenerateRoute(f"source and destination both snap to node {a}")
    path = _shortest_path(graph, a, b, earth)
    legs = [graph.edge(u, v)[0] for u, v in zip(path, path[1:])]
    total = math.fsum(legs)
    return Route(
        node_path=tuple(path),
        coords=tuple(graph.coords[n] for n in path),
        leg_lengths_m=tuple(legs),
        total_length_m=total,
        duration_s=total / speed_mps,
        maneuvers=tuple(_annotate(graph, path, legs, earth)),
    )


def sample_frames(route: Route, F: int, earth: EarthModel = DEFAULT_EARTH) -> list[RouteFrame]:
    """Sample ``F`` frames at arc lengths ``k * L / (F - 1)``, endpoints included."""
    if F < 2:
        raise BadFrameCount(f"need at least 2 frames, got {F}")
    if len(route.node_path) < 2 or route.total_length_m <= 0:
        raise DegenerateRoute("cannot sample frames on an empty route")
    cum = route.cumulative_m
    L = route.total_length_m
    positions = route.maneuver_positions_m
    frames = []
    for k in range(F):
        s = L if k == F - 1 else k * L / (F - 1)
        seg = min(max(bisect_left(cum, s) - 1, 0), len(route.leg_lengths_m) - 1)
        a, b = route.coords[seg], route.coords[seg + 1]
        step = translation_between(a, b, earth)
        frac = (s - cum[seg]) / route.leg_lengths_m[seg]
        pos = offset_coordinate(a, step.scaled(frac), earth)
        nxt = bisect_left(positions, s - 1e-9)
        if nxt < len(positions):
            maneuver, dist = route.maneuvers[nxt], max(positions[nxt] - s, 0.0)
        else:
            maneuver, dist = None, max(L - s, 0.0)
        frames.append(RouteFrame(k, pos, bearing_deg(step), maneuver, dist, s))
    return frames

# modules/visgraph.py
"""
Visibility-graph planner.

Obstacles are inflated by a margin and their corners, together with anchor
points inside the exits, form the graph vertices. Two vertices are joined
when the segment between them does not cross the interior of any inflated
obstacle. Dijkstra runs once from a virtual goal node; a query point only
needs to be joined to the vertices it can see.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path as FilePath
from typing import Dict, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from modules.scene import Exit, Rect, SceneSpec
from utils.logger import get_logger
from utils.utility import PathUnreachableError

logger = get_logger(__name__)

GOAL = "goal"
SIDE_TOLERANCE = 1e-12
INTERIOR_SHRINK = 1e-9


@dataclass(frozen=True)
class PlannerParams:
    margin: float = 0.4
    lookahead_points: int = 4
    waypoint_spacing: float = 2.0


@dataclass(frozen=True)
class LineSeg:
    p: Tuple[float, float]
    q: Tuple[float, float]

    def __post_init__(self):
        if tuple(self.p) == tuple(self.q):
            raise ValueError(f"Degenerate segment at {self.p}")

    @property
    def length(self) -> float:
        return math.hypot(self.q[0] - self.p[0], self.q[1] - self.p[1])


def line_coefficients(s: LineSeg) -> Tuple[np.ndarray, float]:
    """(a, b) with <a, x> = b for every x on the line through the segment."""
    (px, py), (qx, qy) = s.p, s.q
    a = np.array([-(py - qy), px - qx], dtype=float)
    b = py * (px - qx) - px * (py - qy)
    return a, float(b)


def side_of_line(a: np.ndarray, b: float, x) -> int:
    """-1, 0 or +1 as <a, x> - b is negative, (numerically) zero or positive"""
    value = float(a[0] * x[0] + a[1] * x[1] - b)
    if abs(value) <= SIDE_TOLERANCE:
        return 0
    return 1 if value > 0 else -1


def circumscribed_rect(s: LineSeg) -> Rect:
    return Rect(min(s.p[0], s.q[0]), min(s.p[1], s.q[1]), max(s.p[0], s.q[0]), max(s.p[1], s.q[1]))


def rects_overlap(A: Rect, B: Rect) -> bool:
    """Closed rectangles share at least one point (touching counts)"""
    return not (A.x1 < B.x0 or B.x1 < A.x0 or A.y1 < B.y0 or B.y1 < A.y0)


def segment_intersects_rect(s: LineSeg, M: Rect) -> bool:
    """
    Whether a segment meets a closed rectangle.

    They intersect iff the segment's bounding box overlaps M and the four
    corners of M do not all lie strictly on one side of the segment's line.
    """
    if not rects_overlap(circumscribed_rect(s), M):
        return False
    a, b = line_coefficients(s)
    sides = {side_of_line(a, b, corner) for corner in M.corners()}
    return not (sides == {1} or sides == {-1})


def _rect_array(rects: Sequence[Rect]) -> np.ndarray:
    return np.array([r.as_list() for r in rects], dtype=float).reshape(-1, 4)


def _shrunk(rects: np.ndarray) -> np.ndarray:
    """Interiors as slightly shrunk closed rects; degenerate ones become NaN (never hit)"""
    out = rects.copy()
    out[:, :2] += INTERIOR_SHRINK
    out[:, 2:] -= INTERIOR_SHRINK
    empty = (out[:, 0] > out[:, 2]) | (out[:, 1] > out[:, 3])
    out[empty] = np.nan
    return out


def _crosses_any(p, q, interiors: np.ndarray) -> bool:
    """Vectorised segment_intersects_rect of segment p-q against many closed rects"""
    if len(interiors) == 0:
        return False
    px, py = p
    qx, qy = q
    x0, y0, x1, y1 = interiors.T
    with np.errstate(invalid="ignore"):
        overlap = ~((max(px, qx) < x0) | (x1 < min(px, qx)) | (max(py, qy) < y0) | (y1 < min(py, qy)))
    overlap &= ~np.isnan(x0)
    if not overlap.any():
        return False
    if px == qx and py == qy:
        return True
    a0, a1 = -(py - qy), px - qx
    b = py * (px - qx) - px * (py - qy)
    rects = interiors[overlap]
    cx = rects[:, [0, 2, 2, 0]]
    cy = rects[:, [1, 1, 3, 3]]
    values = a0 * cx + a1 * cy - b
    positive = (values > SIDE_TOLERANCE).all(axis=1)
    negative = (values < -SIDE_TOLERANCE).all(axis=1)
    return bool((~(positive | negative)).any())


def exit_target_region(ex: Exit) -> Rect:
    """Part of an exit a path aims for: the exit inset so targets lie strictly inside"""
    r = ex.rect
    inset_x = min(0.25 * r.width, 0.5)
    inset_y = min(0.25 * r.height, 0.5)
    return Rect(r.x0 + inset_x, r.y0 + inset_y, r.x1 - inset_x, r.y1 - inset_y)


def _closest_point(rect: Rect, x) -> Tuple[float, float]:
    return (min(max(x[0], rect.x0), rect.x1), min(max(x[1], rect.y0), rect.y1))


@dataclass
class VisibilityGraph:
    vertices: np.ndarray
    graph: nx.Graph
    obstacles: Tuple[Rect, ...]
    inflated: Tuple[Rect, ...]
    targets: Tuple[Rect, ...]
    distance: Dict
    routes: Dict
    n_anchors: int = 0

    def __post_init__(self):
        self._inflated_interiors = _shrunk(_rect_array(self.inflated))
        self._original_interiors = _shrunk(_rect_array(self.obstacles))
        self._inflated_closed = _rect_array(self.inflated)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def _inside_inflation(self, x) -> np.ndarray:
        r = self._inflated_closed
        return (x[0] > r[:, 0]) & (x[0] < r[:, 2]) & (x[1] > r[:, 1]) & (x[1] < r[:, 3])

    def visible(self, p, q) -> bool:
        """
        Whether segment p-q avoids every inflated interior.

        An obstacle whose inflation contains p or q is tested with its
        original outline instead.
        """
        interiors = self._inflated_interiors
        if len(interiors):
            swap = self._inside_inflation(p) | self._inside_inflation(q)
            if swap.any():
                interiors = interiors.copy()
                interiors[swap] = self._original_interiors[swap]
        return not _crosses_any(p, q, interiors)

    def edges(self) -> List[Tuple[int, int, float]]:
        return sorted((u, v, d["weight"]) for u, v, d in self.graph.edges(data=True)
                      if u != GOAL and v != GOAL)

    def route_points(self, vertex: int) -> List[Tuple[float, float]]:
        """Polyline from a vertex to its exit target along the Dijkstra tree"""
        nodes = list(reversed(self.routes[vertex]))
        points = [tuple(self.vertices[n]) for n in nodes if n != GOAL]
        last = nodes[-2]
        target = self.graph.edges[last, GOAL]["target"]
        if tuple(target) != points[-1]:
            points.append(tuple(target))
        return points


def build_graph(scene: SceneSpec, margin: float, goal: Optional[Union[Exit, Sequence[Exit]]] = None) -> VisibilityGraph:
    """
    Build the visibility graph over margin-inflated obstacles.

    Vertices are the inflated corners (clipped to the domain, dropped when
    inside another inflated obstacle) and the ends and midpoint of each goal
    exit edge.
    Anchors join the virtual goal node at zero cost; every other vertex joins
    it through the closest visible point of an exit.

    Args:
        scene: validated scene
        margin: obstacle inflation in metres
        goal: exit(s) to route to; all scene exits when omitted

    Returns:
        Graph with goal-rooted shortest distances precomputed
    """
    if margin < 0:
        raise ValueError(f"margin must be non-negative, got {margin}")
    exits = list(scene.exits) if goal is None else ([goal] if isinstance(goal, Exit) else list(goal))
    if not exits:
        raise PathUnreachableError("Scene has no exit to plan toward")

    bounds = scene.bounds
    inflated = tuple(o.inflate(margin).clip(bounds) for o in scene.obstacles)
    inflated_open = _rect_array(inflated)

    def inside_inflated(point, skip: Optional[int] = None) -> bool:
        for k, r in enumerate(inflated_open):
            if k == skip:
                continue
            if r[0] < point[0] < r[2] and r[1] < point[1] < r[3]:
                return True
        return False

    vertices: List[Tuple[float, float]] = []
    for k, rect in enumerate(inflated):
        for corner in rect.corners():
            if corner in vertices or inside_inflated(corner, skip=k):
                continue
            vertices.append(corner)

    targets = tuple(exit_target_region(ex) for ex in exits)
    anchors = []
    for ex in exits:
        for point in ex.anchors(bounds):
            if point not in anchors and point not in vertices and not inside_inflated(point):
                anchors.append(point)
    n_corners = len(vertices)
    vertices.extend(anchors)

    g = nx.Graph()
    g.add_node(GOAL)
    g.add_nodes_from(range(len(vertices)))

    graph = VisibilityGraph(
        vertices=np.array(vertices, dtype=float).reshape(-1, 2),
        graph=g,
        obstacles=tuple(scene.obstacles),
        inflated=inflated,
        targets=targets,
        distance={},
        routes={},
        n_anchors=len(anchors),
    )

    for u in range(len(vertices)):
        for v in range(u + 1, len(vertices)):
            if not graph.visible(vertices[u], vertices[v]):
                continue
            weight = math.dist(vertices[u], vertices[v])
            g.add_edge(u, v, weight=weight)

    for u in range(len(vertices)):
        if u >= n_corners:
            g.add_edge(u, GOAL, weight=0.0, target=vertices[u])
            continue
        best = _best_exit_point(graph, vertices[u])
        if best is not None:
            g.add_edge(u, GOAL, weight=best[0], target=best[1])

    graph.distance, graph.routes = nx.single_source_dijkstra(g, GOAL, weight="weight")
    logger.info(
        f"🕸️  Visibility graph: {len(vertices)} vertices ({len(anchors)} anchors), "
        f"{g.number_of_edges()} edges, margin {margin} m"
    )
    return graph


def _best_exit_point(graph: VisibilityGraph, x) -> Optional[Tuple[float, Tuple[float, float]]]:
    best = None
    for target in graph.targets:
        point = _closest_point(target, x)
        if point != tuple(x) and not graph.visible(x, point):
            continue
        length = math.dist(x, point)
        if best is None or length < best[0]:
            best = (length, point)
    return best


@dataclass
class Path:
    waypoints: np.ndarray
    weights: np.ndarray
    length: float
    tracker: int = 0
    last_direction: np.ndarray = field(default_factory=lambda: np.zeros(2))


def geometric_weights(n: int) -> np.ndarray:
    """w_k proportional to 2^-k, k = 1..n, normalised to sum 1"""
    w = 0.5 ** np.arange(1, n + 1)
    return w / w.sum()


def resample_polyline(points: Sequence[Tuple[float, float]], spacing: float) -> np.ndarray:
    """
    Points every ``spacing`` metres along each leg of a polyline.

    Leg end points are kept so every chord between consecutive waypoints lies
    on the original polyline.
    """
    pts = np.asarray(points, dtype=float)
    out = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        leg = math.dist(a, b)
        if leg == 0:
            continue
        steps = int(math.floor(leg / spacing))
        for k in range(1, steps + 1):
            if k * spacing >= leg:
                break
            out.append(a + (b - a) * (k * spacing / leg))
        out.append(b)
    return np.array(out)


def shortest_path(graph: VisibilityGraph, start, params: PlannerParams = PlannerParams()) -> Path:
    """
    Shortest obstacle-avoiding route from ``start`` to the goal.

    The start point is joined lazily to every vertex it can see and to the
    closest visible exit point; the goal-rooted Dijkstra tree supplies the
    rest of the route.

    Raises:
        PathUnreachableError: nothing visible from start leads to the goal
    """
    start = (float(start[0]), float(start[1]))
    best_length = math.inf
    best_points = None

    direct = _best_exit_point(graph, start)
    if direct is not None:
        best_length = direct[0]
        best_points = [start, direct[1]] if direct[1] != start else [start]

    for v in range(graph.n_vertices):
        if v not in graph.distance:
            continue
        vertex = tuple(graph.vertices[v])
        first_leg = math.dist(start, vertex)
        total = first_leg + graph.distance[v]
        if total >= best_length:
            continue
        if first_leg > 0 and not graph.visible(start, vertex):
            continue
        best_length = total
        route = graph.route_points(v)
        best_points = [start] + route if first_leg > 0 else route

    if best_points is None:
        raise PathUnreachableError(f"No route from ({start[0]:.3f}, {start[1]:.3f}) to the goal")

    if len(best_points) == 1:
        best_points = [start, start]
    waypoints = resample_polyline(best_points, params.waypoint_spacing)
    path = Path(waypoints=waypoints, weights=geometric_weights(params.lookahead_points), length=best_length)
    initial = waypoints[-1] - waypoints[0]
    norm = float(np.hypot(*initial))
    if norm > 0:
        path.last_direction = initial / norm
    return path


def waypoint_direction(path: Path, x) -> np.ndarray:
    """
    Unit direction from x toward the weighted average of the next waypoints.

    The tracker advances while x lies between p_i and p_{i+n}, i.e. while
    <x - p_i, x - p_{i+n}> < 0. When x coincides with the target the
    previous direction is returned.
    """
    x = np.asarray(x, dtype=float)
    wp = path.waypoints
    last = len(wp) - 1
    n = len(path.weights)

    while path.tracker < last:
        ahead = wp[min(path.tracker + n, last)]
        if np.dot(x - wp[path.tracker], x - ahead) < 0:
            path.tracker += 1
        else:
            break

    idx = np.minimum(path.tracker + np.arange(n), last)
    target = path.weights @ wp[idx]
    delta = target - x
    norm = float(np.hypot(delta[0], delta[1]))
    if norm < 1e-12:
        return path.last_direction.copy()
    path.last_direction = delta / norm
    return path.last_direction.copy()


def dump_graph(graph: VisibilityGraph, path: Union[str, FilePath]) -> FilePath:
    """Write vertices and edges as JSON for visual debugging"""
    path = FilePath(path)
    payload = {
        "vertices": graph.vertices.tolist(),
        "edges": [[u, v, w] for u, v, w in graph.edges()],
        "goal_edges": sorted(
            [[u if v == GOAL else v, d["weight"]] for u, v, d in graph.graph.edges(data=True)
             if GOAL in (u, v)]
        ),
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
    logger.debug(f"💾 Graph written to {path}")
    return path

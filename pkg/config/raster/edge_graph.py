"""
Grafo plano de aristas de todas las curvas de frontera.

Cada arista es una ventana [ta, tb] de una curva de entrada. Si un extremo se
fusiona con un vértice o se engancha a otra arista, la diferencia se reparte
linealmente en la ventana y la geometría termina justo en sus vértices.
"""
import copy
import logging
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .geometry import GEOM_TOL, Polyline, SegmentIndex, closest_point, discretize, intersect_polylines

logger = logging.getLogger(__name__)

REFINE_STEPS = 10
MAX_SPLITS = 100_000


@dataclass
class GraphVertex:
    id: int
    position: np.ndarray
    incident: list = field(default_factory=list)  # (id de arista, extremo): 0 = inicio, 1 = fin


@dataclass
class GraphEdge:
    id: int
    v0: int
    v1: int
    curve_index: int
    curve: object
    ta: float
    tb: float
    d0: np.ndarray
    d1: np.ndarray
    polyline: Polyline

    def _blend(self, ts):
        s = (np.asarray(ts, dtype=float) - self.ta) / (self.tb - self.ta)
        return (1.0 - s)[..., None] * self.d0 + s[..., None] * self.d1

    def points(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        return self.curve.spline.points(ts) + self._blend(ts)

    def point(self, t):
        return self.points([t])[0]

    def derivative(self, t):
        index, local = self.curve.spline.locate(t)
        return self.curve.spline.segments[index].derivatives(local) + (self.d1 - self.d0) / (self.tb - self.ta)

    def second_derivative(self, t):
        index, local = self.curve.spline.locate(t)
        return self.curve.spline.segments[index].second_derivatives(local)

    def bbox(self):
        return self.polyline.bbox()

    def length(self):
        return self.polyline.length()

    @property
    def source(self):
        return self.curve.source


def _live(ids):
    return [i for i in ids if i is not None]


class EdgeGraph:
    """Grafo plano no dirigido; ids crecientes, construcción determinista."""

    def __init__(self, tau=0.0, epsilon=0.01):
        self.tau = float(tau)
        self.epsilon = float(epsilon)
        self.vertices = {}
        self.edges = {}
        self.curves = []
        self.curve_polylines = []
        self.discarded_length = 0.0
        self._next_vertex = 0
        self._next_edge = 0
        self._segment_index = None

    @property
    def endpoint_tol(self):
        return max(math.sqrt(self.tau), 1e-6)

    def copy(self):
        self._segment_index = None
        return copy.deepcopy(self)

    def vertex_list(self):
        return [self.vertices[k] for k in sorted(self.vertices)]

    def edge_list(self):
        return [self.edges[k] for k in sorted(self.edges)]

    def candidates(self, bbox, margin=0.0):
        """Aristas, por id, con algún segmento a distancia <= margin de la caja."""
        if self._segment_index is None:
            self._segment_index = SegmentIndex((e.id, e.polyline) for e in self.edge_list())
        return [self.edges[i] for i in self._segment_index.near_box(bbox, margin)]

    # ---- vértices y aristas ----

    def _add_vertex(self, position):
        vertex = GraphVertex(self._next_vertex, np.asarray(position, dtype=float).copy())
        self.vertices[vertex.id] = vertex
        self._next_vertex += 1
        return vertex.id

    def _edge_polyline(self, curve_index, ta, tb, start, end, d0, d1):
        base = self.curve_polylines[curve_index]
        p = base.param_values
        inner = (p > ta + GEOM_TOL) & (p < tb - GEOM_TOL)
        ts = p[inner]
        s = (ts - ta) / (tb - ta)
        interior = base.vertices[inner] + (1.0 - s)[:, None] * d0 + s[:, None] * d1
        vertices = np.vstack([np.asarray(start)[None], interior, np.asarray(end)[None]])
        return Polyline(vertices, np.concatenate([[ta], ts, [tb]]))

    def _add_edge(self, curve_index, ta, tb, v0, v1):
        curve = self.curves[curve_index]
        start, end = self.vertices[v0].position, self.vertices[v1].position
        d0 = start - np.asarray(curve.spline.eval(ta))
        d1 = end - np.asarray(curve.spline.eval(tb))
        polyline = self._edge_polyline(curve_index, ta, tb, start, end, d0, d1)
        if v0 == v1 and polyline.length() <= GEOM_TOL:
            logger.warning("Discarding zero-length piece of %s at t=%.6g", curve.source, ta)
            self.discarded_length += polyline.length()
            return None
        self._segment_index = None
        edge = GraphEdge(self._next_edge, v0, v1, curve_index, curve, ta, tb, d0, d1, polyline)
        self._next_edge += 1
        self.edges[edge.id] = edge
        self.vertices[v0].incident.append((edge.id, 0))
        self.vertices[v1].incident.append((edge.id, 1))
        return edge.id

    def _remove_edge(self, edge_id):
        self._segment_index = None
        edge = self.edges.pop(edge_id)
        for vid in (edge.v0, edge.v1):
            vertex = self.vertices[vid]
            vertex.incident = [(e, end) for e, end in vertex.incident if e != edge_id]
        return edge

    def _split(self, edge_id, t, vertex_id):
        """Sustituye la arista por sus dos tramos en t, unidos en vertex_id."""
        edge = self._remove_edge(edge_id)
        left = self._add_edge(edge.curve_index, edge.ta, t, edge.v0, vertex_id)
        right = self._add_edge(edge.curve_index, t, edge.tb, vertex_id, edge.v1)
        return [left, right]

    # ---- enganche de extremos ----

    def _attaches(self, distance):
        return distance * distance < self.tau or distance <= GEOM_TOL

    def _attach(self, position):
        """Vértice para un extremo nuevo: fusionar, enganchar a una arista o crear."""
        position = np.asarray(position, dtype=float)
        if self.vertices:
            ids = sorted(self.vertices)
            dist = np.linalg.norm(np.array([self.vertices[i].position for i in ids]) - position, axis=1)
            k = int(np.argmin(dist))
            if self._attaches(dist[k]):
                return ids[k]

        best = None
        reach = math.sqrt(self.tau) + GEOM_TOL
        for edge in self.candidates(np.concatenate([position, position]), reach):
            t, _, distance = closest_point(edge.polyline, position)
            if self._attaches(distance) and (best is None or distance < best[0]):
                best = (distance, edge.id, t)
        if best is not None:
            _, edge_id, t = best
            edge = self.edges[edge_id]
            if edge.ta < t < edge.tb:
                vertex_id = self._add_vertex(edge.point(t))
                self._split(edge_id, t, vertex_id)
                return vertex_id
        return self._add_vertex(position)

    # ---- cruces ----

    def _refine(self, edge, t, other_a, other_b):
        """Bisección de la curva exacta contra la recta other_a-other_b cerca de t."""
        p = edge.polyline.param_values
        i = int(np.clip(np.searchsorted(p, t) - 1, 0, len(p) - 2))
        lo, hi = p[i], p[i + 1]
        direction = other_b - other_a

        def side(s):
            rel = edge.point(s) - other_a
            return rel[0] * direction[1] - rel[1] * direction[0]

        f_lo, f_hi = side(lo), side(hi)
        if f_lo == 0.0:
            return lo
        if f_hi == 0.0:
            return hi
        if np.sign(f_lo) == np.sign(f_hi):
            return t
        for _ in range(REFINE_STEPS):
            mid = 0.5 * (lo + hi)
            f_mid = side(mid)
            if np.sign(f_mid) == np.sign(f_lo):
                lo, f_lo = mid, f_mid
            else:
                hi = mid
        return 0.5 * (lo + hi)

    def _segment_at(self, edge, t):
        p = edge.polyline.param_values
        i = int(np.clip(np.searchsorted(p, t) - 1, 0, len(p) - 2))
        return edge.polyline.vertices[i], edge.polyline.vertices[i + 1]

    def _near_vertex(self, edge, point):
        tol = self.endpoint_tol
        for vid in (edge.v0, edge.v1):
            if np.linalg.norm(self.vertices[vid].position - point) <= tol:
                return vid
        return None

    def _arc(self, edge, t0, t1):
        lo, hi = sorted((t0, t1))
        return edge.polyline.slice(lo, hi, edge.point(lo), edge.point(hi)).length() if hi > lo else 0.0

    def _interior(self, edge, t):
        return edge.ta + 1e-12 < t < edge.tb - 1e-12

    def _resolve_pair(self, e, f):
        """Parte en el primer cruce de e y f; devuelve las aristas nuevas o None si ya es plano."""
        same = e.id == f.id
        hits = intersect_polylines(e.polyline, e.polyline if same else f.polyline)
        for ta, tb, point in hits:
            point = np.array(point)
            near_e = self._near_vertex(e, point)
            near_f = near_e if same else self._near_vertex(f, point)
            if same:
                if near_e is not None:
                    # La curva pasa por su propio vértice final: se parte donde vuelve.
                    ends = [t for t, v in ((e.ta, e.v0), (e.tb, e.v1)) if v == near_e]
                    t = max((ta, tb), key=lambda s: min(abs(s - end) for end in ends))
                    nearest_end = min(ends, key=lambda end: abs(t - end))
                    if self._interior(e, t) and self._arc(e, t, nearest_end) > 2.0 * self.endpoint_tol:
                        return _live(self._split(e.id, t, near_e))
                    continue
                a0, a1 = self._segment_at(e, tb)
                b0, b1 = self._segment_at(e, ta)
                ta, tb = self._refine(e, ta, a0, a1), self._refine(e, tb, b0, b1)
                if not (self._interior(e, ta) and self._interior(e, tb) and tb - ta > 1e-12):
                    continue
                vertex_id = self._add_vertex(0.5 * (e.point(ta) + e.point(tb)))
                left, right = self._split(e.id, ta, vertex_id)
                new = [left]
                if right is not None:
                    new.extend(self._split(right, tb, vertex_id))
                return _live(new)

            if near_e is not None and near_f is not None:
                continue
            if near_e is not None:
                if self._interior(f, tb):
                    return _live(self._split(f.id, tb, near_e))
                continue
            if near_f is not None:
                if self._interior(e, ta):
                    return _live(self._split(e.id, ta, near_f))
                continue
            f0, f1 = self._segment_at(f, tb)
            e0, e1 = self._segment_at(e, ta)
            ta, tb = self._refine(e, ta, f0, f1), self._refine(f, tb, e0, e1)
            if not (self._interior(e, ta) and self._interior(f, tb)):
                continue
            vertex_id = self._add_vertex(0.5 * (e.point(ta) + f.point(tb)))
            return _live(self._split(e.id, ta, vertex_id) + self._split(f.id, tb, vertex_id))
        return None

    def _duplicate_of(self, edge):
        """Arista anterior con los mismos extremos y geometría coincidente."""
        mid = edge.polyline.vertices[len(edge.polyline) // 2]
        tol = max(self.endpoint_tol, self.epsilon)
        for other_id in sorted({e for e, _ in self.vertices[edge.v0].incident}):
            other = self.edges[other_id]
            if other.id == edge.id or {other.v0, other.v1} != {edge.v0, edge.v1}:
                continue
            if other.curve_index > edge.curve_index:
                continue
            _, _, d_mid = closest_point(other.polyline, mid)
            other_mid = other.polyline.vertices[len(other.polyline) // 2]
            _, _, d_back = closest_point(edge.polyline, other_mid)
            if d_mid <= tol and d_back <= tol:
                return other
        return None

    def _resolve(self, worklist):
        splits = 0
        while worklist:
            edge_id = worklist.pop(0)
            edge = self.edges.get(edge_id)
            if edge is None:
                continue
            duplicate = self._duplicate_of(edge)
            if duplicate is not None:
                logger.warning("Dropping %s on [%.6g, %.6g]: it overlaps edge %d of %s",
                               edge.source, edge.ta, edge.tb, duplicate.id, duplicate.source)
                self._remove_edge(edge_id)
                continue
            nearby = [o for o in self.candidates(edge.bbox(), self.endpoint_tol) if o.id != edge_id]
            for other in [edge] + nearby:
                new = self._resolve_pair(edge, other)
                if new is not None:
                    splits += 1
                    if splits > MAX_SPLITS:
                        logger.warning("Stopping crossing resolution after %d splits", splits)
                        return
                    worklist[:0] = [e for e in new if e in self.edges]
                    if edge_id in self.edges:
                        worklist.append(edge_id)
                    break

    # ---- API pública ----

    def insert_curve(self, curve):
        """Inserta una curva de frontera: fusiona, engancha y parte según haga falta."""
        curve_index = len(self.curves)
        self.curves.append(curve)
        self.curve_polylines.append(discretize(curve.spline, self.epsilon))
        spline = curve.spline
        v_start = self._attach(spline.eval(spline.t0))
        v_end = self._attach(spline.eval(spline.t1))
        edge_id = self._add_edge(curve_index, spline.t0, spline.t1, v_start, v_end)
        if edge_id is not None:
            self._resolve([edge_id])
        return self

    def neighbours(self, vertex_id):
        return [(self.edges[e], end) for e, end in self.vertices[vertex_id].incident]


def build(curves, tau, epsilon) -> EdgeGraph:
    """Grafo vacío y luego cada curva en orden (bordes de malla antes que curvas de difusión)."""
    graph = EdgeGraph(tau, epsilon)
    for curve in curves:
        graph.insert_curve(curve)
    logger.debug("Edge graph: %d vertices, %d edges", len(graph.vertices), len(graph.edges))
    return graph


def check_planarity(graph: EdgeGraph):
    """Cruces entre interiores de aristas como (id, id, punto); vacío si el grafo es plano."""
    offending = []
    tol = graph.endpoint_tol
    for e in graph.edge_list():
        for f in graph.candidates(e.bbox(), tol):
            if f.id < e.id:
                continue
            hits = intersect_polylines(e.polyline, e.polyline if f.id == e.id else f.polyline)
            shared = [graph.vertices[v].position for v in {e.v0, e.v1} & {f.v0, f.v1}] if f.id != e.id \
                else [graph.vertices[v].position for v in {e.v0, e.v1}]
            for _, _, point in hits:
                if any(np.linalg.norm(np.array(point) - s) <= tol for s in shared):
                    continue
                offending.append((e.id, f.id, point))
    return offending


def connected_components(graph: EdgeGraph):
    g = nx.MultiGraph()
    g.add_nodes_from(graph.vertices)
    g.add_edges_from((e.v0, e.v1) for e in graph.edge_list())
    return sorted((set(c) for c in nx.connected_components(g)), key=min)


def near_misses(curves, tau, floor=0.0, epsilon=0.01):
    """
    Extremos que quedan a menos de max(2*sqrt(tau), floor) de otra curva sin engancharse.

    Devuelve tuplas (curva, extremo, otra curva, distancia).
    """
    window = max(2.0 * math.sqrt(tau), floor)
    polylines = [discretize(c.spline, epsilon) for c in curves]
    index = SegmentIndex(enumerate(polylines))
    found = []
    for i, curve in enumerate(curves):
        for label, point in (('start', polylines[i].start), ('end', polylines[i].end)):
            for j in sorted(set(index.near_point(point, window)) | {i}):
                other = curves[j]
                if j == i:
                    # Misma curva: solo cuenta el hueco entre sus dos extremos.
                    other_end = polylines[i].end if label == 'start' else None
                    if other_end is None:
                        continue
                    distance = float(np.linalg.norm(point - other_end))
                else:
                    _, _, distance = closest_point(polylines[j], point)
                if distance <= GEOM_TOL or distance * distance < tau or distance > window:
                    continue
                found.append((curve.source, label, other.source, distance))
    return found

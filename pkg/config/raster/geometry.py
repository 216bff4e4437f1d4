"""
Primitivas de curvas compartidas por todas las etapas del pipeline.

Coordenadas en unidades de imagen con el eje y hacia arriba: la normal
derecha es la tangente girada en sentido horario.
"""
import heapq
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import OnBoundary, ZeroTangent

GEOM_TOL = 1e-9
ZERO_TANGENT = 1e-12
FARTHEST_DEPTH = 32

# Rotación de la tangente unitaria a la normal derecha.
RIGHT_NORMAL = np.array([[0.0, 1.0], [-1.0, 0.0]])


class Point2(NamedTuple):
    x: float
    y: float


def _bernstein(t):
    t = np.asarray(t, dtype=float)
    s = 1.0 - t
    return np.stack([s ** 3, 3.0 * t * s ** 2, 3.0 * t ** 2 * s, t ** 3], axis=-1)


def _bernstein_d1(t):
    t = np.asarray(t, dtype=float)
    s = 1.0 - t
    return np.stack([-3.0 * s ** 2, 3.0 * s ** 2 - 6.0 * t * s, 6.0 * t * s - 3.0 * t ** 2, 3.0 * t ** 2], axis=-1)


def _bernstein_d2(t):
    t = np.asarray(t, dtype=float)
    return np.stack([6.0 * (1.0 - t), -12.0 + 18.0 * t, 6.0 - 18.0 * t, 6.0 * t], axis=-1)


def de_casteljau(ctrl, t):
    """Divide los puntos de control en t; devuelve (izquierda, derecha)."""
    p01 = (1 - t) * ctrl[0] + t * ctrl[1]
    p12 = (1 - t) * ctrl[1] + t * ctrl[2]
    p23 = (1 - t) * ctrl[2] + t * ctrl[3]
    p012 = (1 - t) * p01 + t * p12
    p123 = (1 - t) * p12 + t * p23
    mid = (1 - t) * p012 + t * p123
    return np.array([ctrl[0], p01, p012, mid]), np.array([mid, p123, p23, ctrl[3]])


@dataclass(frozen=True)
class CubicBezier:
    b0: Point2
    b1: Point2
    b2: Point2
    b3: Point2

    def __post_init__(self):
        ctrl = np.array([self.b0, self.b1, self.b2, self.b3], dtype=float)
        if not np.all(np.isfinite(ctrl)):
            raise ValueError("control points must be finite")
        ctrl.setflags(write=False)
        object.__setattr__(self, '_ctrl', ctrl)

    @classmethod
    def from_array(cls, ctrl):
        return cls(*(Point2(float(p[0]), float(p[1])) for p in ctrl))

    @property
    def control(self):
        return self._ctrl

    def eval(self, t) -> Point2:
        x, y = _bernstein(t) @ self._ctrl
        return Point2(float(x), float(y))

    def tangent(self, t) -> Point2:
        x, y = _bernstein_d1(t) @ self._ctrl
        return Point2(float(x), float(y))

    def normal(self, t) -> Point2:
        d = np.array(self.tangent(t))
        norm = math.hypot(*d)
        if norm < ZERO_TANGENT:
            raise ZeroTangent(f"tangent vanishes at t={t}")
        x, y = RIGHT_NORMAL @ (d / norm)
        return Point2(float(x), float(y))

    def points(self, ts):
        return _bernstein(ts) @ self._ctrl

    def derivatives(self, ts):
        return _bernstein_d1(ts) @ self._ctrl

    def second_derivatives(self, ts):
        return _bernstein_d2(ts) @ self._ctrl

    def split(self, t):
        left, right = de_casteljau(self._ctrl, t)
        return CubicBezier.from_array(left), CubicBezier.from_array(right)

    def sub_control(self, a, b):
        """Puntos de control del tramo [a, b]."""
        if b <= 0.0:
            return np.repeat(self._ctrl[:1], 4, axis=0)
        left, _ = de_casteljau(self._ctrl, b)
        _, piece = de_casteljau(left, a / b)
        return piece

    def is_degenerate(self):
        return bool(np.all(np.abs(self._ctrl - self._ctrl[0]) <= GEOM_TOL))


class BezierSpline:
    """Cadena C0 de cúbicas; parámetro global t = índice de segmento + t local."""

    def __init__(self, segments, dropped_segments=0):
        segments = tuple(segments)
        if not segments:
            raise ValueError("a spline needs at least one non-degenerate segment")
        for prev, nxt in zip(segments, segments[1:]):
            if prev.b3 != nxt.b0:
                raise ValueError("consecutive segments must share endpoints")
        self.segments = segments
        self.dropped_segments = dropped_segments

    @classmethod
    def from_points(cls, points):
        """Construye desde 3n+1 puntos de control, descartando segmentos de longitud cero."""
        pts = [Point2(float(p[0]), float(p[1])) for p in points]
        if len(pts) < 4 or (len(pts) - 1) % 3:
            raise ValueError("a cubic spline needs 3n+1 control points")
        segments, dropped = [], 0
        for i in range(0, len(pts) - 1, 3):
            seg = CubicBezier(*pts[i:i + 4])
            if seg.is_degenerate():
                dropped += 1
                continue
            if segments and segments[-1].b3 != seg.b0:
                # Reenganche sobre el segmento descartado; el hueco es menor que GEOM_TOL.
                seg = CubicBezier(segments[-1].b3, seg.b1, seg.b2, seg.b3)
            segments.append(seg)
        return cls(segments, dropped_segments=dropped)

    @property
    def param_range(self):
        return 0.0, float(len(self.segments))

    @property
    def t0(self):
        return 0.0

    @property
    def t1(self):
        return float(len(self.segments))

    def control_points(self):
        pts = [self.segments[0].b0]
        for seg in self.segments:
            pts.extend([seg.b1, seg.b2, seg.b3])
        return pts

    def locate(self, t):
        n = len(self.segments)
        t = min(max(float(t), 0.0), float(n))
        index = min(int(math.floor(t)), n - 1)
        return index, t - index

    def eval(self, t) -> Point2:
        index, local = self.locate(t)
        return self.segments[index].eval(local)

    def tangent(self, t) -> Point2:
        index, local = self.locate(t)
        return self.segments[index].tangent(local)

    def second_derivative(self, t) -> Point2:
        index, local = self.locate(t)
        x, y = self.segments[index].second_derivatives(local)
        return Point2(float(x), float(y))

    def normal(self, t) -> Point2:
        index, local = self.locate(t)
        return self.segments[index].normal(local)

    def points(self, ts):
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        n = len(self.segments)
        ts = np.clip(ts, 0.0, n)
        index = np.minimum(np.floor(ts).astype(int), n - 1)
        out = np.empty((len(ts), 2))
        for i in np.unique(index):
            sel = index == i
            out[sel] = self.segments[i].points(ts[sel] - i)
        return out

    @property
    def start(self):
        return self.segments[0].b0

    @property
    def end(self):
        return self.segments[-1].b3

    def is_closed(self):
        return math.dist(self.start, self.end) <= GEOM_TOL

    def arclength(self, samples_per_segment=256):
        total = 0.0
        for seg in self.segments:
            pts = seg.points(np.linspace(0.0, 1.0, samples_per_segment + 1))
            total += float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))
        return total


@dataclass(frozen=True)
class Polyline:
    vertices: np.ndarray
    param_values: np.ndarray

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        params = np.asarray(self.param_values, dtype=float).reshape(-1)
        if len(vertices) < 2 or len(vertices) != len(params):
            raise ValueError("a polyline needs at least two vertices with matching parameters")
        if np.any(np.diff(params) <= 0.0):
            raise ValueError("polyline parameters must be strictly increasing")
        vertices.setflags(write=False)
        params.setflags(write=False)
        object.__setattr__(self, 'vertices', vertices)
        object.__setattr__(self, 'param_values', params)

    def __len__(self):
        return len(self.vertices)

    @property
    def start(self):
        return self.vertices[0]

    @property
    def end(self):
        return self.vertices[-1]

    def bbox(self):
        return np.concatenate([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    def length(self):
        return float(np.sum(np.linalg.norm(np.diff(self.vertices, axis=0), axis=1)))

    def is_closed(self):
        return float(np.linalg.norm(self.vertices[-1] - self.vertices[0])) <= GEOM_TOL

    def slice(self, ta, tb, start, end):
        """Sub-polilínea en [ta, tb] con los extremos exactos dados."""
        p = self.param_values
        inner = (p > ta + GEOM_TOL) & (p < tb - GEOM_TOL)
        vertices = np.vstack([np.asarray(start, float)[None], self.vertices[inner], np.asarray(end, float)[None]])
        params = np.concatenate([[ta], p[inner], [tb]])
        return Polyline(vertices, params)


# ============================================================
# DISCRETIZACIÓN
# ============================================================

def _segment_distance(points, p, q):
    """Distancia de los puntos a la cuerda [p, q]."""
    d = q - p
    length2 = float(d @ d)
    if length2 <= GEOM_TOL ** 2:
        return np.linalg.norm(points - p, axis=-1)
    s = np.clip(((points - p) @ d) / length2, 0.0, 1.0)
    return np.linalg.norm(points - (p + s[..., None] * d), axis=-1)


def _farthest_point(curve, a, b, epsilon):
    """
    Parámetro del punto de [a, b] más alejado de su cuerda.

    Ramificación y poda sobre la cúbica exacta, acotando con los puntos de
    control. None si todo el tramo queda por debajo de epsilon.
    """
    ctrl = curve.sub_control(a, b)
    p, q = ctrl[0], ctrl[3]
    best_d, best_s = -1.0, 0.5
    heap = [(-float(_segment_distance(ctrl, p, q).max()), 0.0, 1.0, ctrl)]
    min_width = 2.0 ** -FARTHEST_DEPTH
    gap = 1e-6 * epsilon
    while heap:
        neg_upper, lo, hi, sub = heapq.heappop(heap)
        upper = -neg_upper
        if upper < epsilon and best_d < epsilon:
            return None
        if upper <= best_d + gap:
            break
        mid = 0.5 * (lo + hi)
        left, right = de_casteljau(sub, 0.5)
        d_mid = float(_segment_distance(left[3], p, q))
        if d_mid > best_d:
            best_d, best_s = d_mid, mid
        if hi - lo <= min_width:
            continue
        for piece, plo, phi in ((left, lo, mid), (right, mid, hi)):
            bound = float(_segment_distance(piece, p, q).max())
            if bound > best_d + gap:
                heapq.heappush(heap, (-bound, plo, phi, piece))
    if best_d < epsilon:
        return None
    return a + best_s * (b - a)


def _discretize_segment(curve, epsilon):
    params = [0.0]
    stack = [(0.0, 1.0)]
    while stack:
        a, b = stack.pop()
        split = _farthest_point(curve, a, b, epsilon)
        if split is None or split - a <= GEOM_TOL or b - split <= GEOM_TOL:
            params.append(b)
            continue
        # Mitad derecha primero: la izquierda sale antes.
        stack.append((split, b))
        stack.append((a, split))
    return params


def discretize(spline: BezierSpline, epsilon: float) -> Polyline:
    """Aplanado descendente estilo Douglas-Peucker de la spline exacta."""
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    params = [0.0]
    for index, seg in enumerate(spline.segments):
        params.extend(index + t for t in _discretize_segment(seg, epsilon)[1:])
    params = np.array(params)
    return Polyline(spline.points(params), params)


# ============================================================
# PREDICADOS SOBRE POLILÍNEAS
# ============================================================

def _cross(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _param_at(poly, index, s):
    p = poly.param_values
    return float(p[index] + s * (p[index + 1] - p[index]))


def intersect_polylines(a: Polyline, b: Polyline):
    """
    Intersecciones segmento-segmento como (t_a, t_b, punto), ordenadas por t_a.

    Con ``a is b`` cada autointersección sale una vez con t_a < t_b. Los
    solapes colineales devuelven sus dos extremos.
    """
    same = a is b
    a0, a1 = a.vertices[:-1], a.vertices[1:]
    b0, b1 = b.vertices[:-1], b.vertices[1:]
    amin, amax = np.minimum(a0, a1), np.maximum(a0, a1)
    bmin, bmax = np.minimum(b0, b1), np.maximum(b0, b1)
    overlap = np.all(
        (amin[:, None, :] <= bmax[None, :, :] + GEOM_TOL) & (bmin[None, :, :] <= amax[:, None, :] + GEOM_TOL),
        axis=-1,
    )
    if same:
        n = len(a0)
        i_idx, j_idx = np.indices((n, n))
        overlap &= j_idx > i_idx + 1
        if a.is_closed() and n > 2:
            overlap[0, n - 1] = False
    pairs = np.argwhere(overlap)
    if len(pairs) == 0:
        return []

    i, j = pairs[:, 0], pairs[:, 1]
    d = a1[i] - a0[i]
    e = b1[j] - b0[j]
    w = b0[j] - a0[i]
    denom = _cross(d, e)
    scale = np.linalg.norm(d, axis=1) * np.linalg.norm(e, axis=1)
    parallel = np.abs(denom) <= 1e-12 * np.maximum(scale, 1e-300)
    safe = np.where(parallel, 1.0, denom)
    s = _cross(w, e) / safe
    u = _cross(w, d) / safe
    tol = 1e-12
    hit = ~parallel & (s >= -tol) & (s <= 1 + tol) & (u >= -tol) & (u <= 1 + tol)

    hits = []
    for k in np.nonzero(hit)[0]:
        sk, uk = min(max(s[k], 0.0), 1.0), min(max(u[k], 0.0), 1.0)
        point = a0[i[k]] + sk * d[k]
        hits.append((_param_at(a, i[k], sk), _param_at(b, j[k], uk), Point2(float(point[0]), float(point[1]))))

    for k in np.nonzero(parallel)[0]:
        hits.extend(_collinear_overlap(a, b, i[k], j[k], d[k], w[k]))

    hits.sort(key=lambda h: (h[0], h[1]))
    unique = []
    for h in hits:
        if unique and abs(h[0] - unique[-1][0]) <= GEOM_TOL and math.dist(h[2], unique[-1][2]) <= GEOM_TOL:
            continue
        if same and abs(h[0] - h[1]) <= GEOM_TOL:
            continue
        unique.append(h)
    return unique


def _collinear_overlap(a, b, i, j, d, w):
    length2 = float(d @ d)
    if length2 <= GEOM_TOL ** 2 or abs(_cross(w, d)) > GEOM_TOL * math.sqrt(length2):
        return []
    b0, b1 = b.vertices[j], b.vertices[j + 1]
    e = b1 - b0
    sb0 = float((b0 - a.vertices[i]) @ d) / length2
    sb1 = float((b1 - a.vertices[i]) @ d) / length2
    lo, hi = max(0.0, min(sb0, sb1)), min(1.0, max(sb0, sb1))
    if lo > hi + GEOM_TOL:
        return []
    out = []
    e2 = float(e @ e)
    for s in sorted({lo, hi}):
        point = a.vertices[i] + s * d
        u = float((point - b0) @ e) / e2 if e2 > 0 else 0.0
        u = min(max(u, 0.0), 1.0)
        out.append((_param_at(a, i, s), _param_at(b, j, u), Point2(float(point[0]), float(point[1]))))
    return out


def ring_vertices(loop):
    """Une una cadena cerrada de polilíneas en un solo anillo."""
    parts = []
    for piece in loop:
        verts = piece.vertices if isinstance(piece, Polyline) else np.asarray(piece, dtype=float)
        if parts and np.linalg.norm(parts[-1][-1] - verts[0]) <= GEOM_TOL:
            verts = verts[1:]
        parts.append(verts)
    ring = np.vstack(parts)
    if np.linalg.norm(ring[-1] - ring[0]) > GEOM_TOL:
        ring = np.vstack([ring, ring[:1]])
    return ring


def distance_to_ring(ring, points):
    """Distancia mínima de cada punto a los segmentos del anillo."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    p0, p1 = ring[:-1], ring[1:]
    out = np.full(len(points), np.inf)
    for start in range(0, len(points), _chunk(len(p0))):
        chunk = points[start:start + _chunk(len(p0))]
        d = p1 - p0
        len2 = np.maximum(np.einsum('ij,ij->i', d, d), 1e-300)
        rel = chunk[:, None, :] - p0[None]
        s = np.clip(np.einsum('kij,ij->ki', rel, d) / len2, 0.0, 1.0)
        diff = rel - s[..., None] * d[None]
        out[start:start + len(chunk)] = np.sqrt(np.min(np.einsum('kij,kij->ki', diff, diff), axis=1))
    return out


def _chunk(n_segments):
    return max(1, 4_000_000 // max(n_segments, 1))


def winding_angles(ring, points):
    """Ángulo con signo total que subtiende el anillo en cada punto."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.empty(len(points))
    step = _chunk(len(ring))
    for start in range(0, len(points), step):
        chunk = points[start:start + step]
        rel = ring[None, :, :] - chunk[:, None, :]
        a, b = rel[:, :-1], rel[:, 1:]
        out[start:start + len(chunk)] = np.arctan2(_cross(a, b), np.einsum('kij,kij->ki', a, b)).sum(axis=1)
    return out


def winding_angle(loop, p) -> float:
    ring = ring_vertices(loop)
    point = np.asarray(p, dtype=float)
    if distance_to_ring(ring, point[None])[0] <= GEOM_TOL:
        raise OnBoundary(f"point {tuple(point)} lies on the loop")
    return float(winding_angles(ring, point[None])[0])


def closest_points(poly: Polyline, points):
    """Punto más cercano de la polilínea: (t, punto, distancia, índice de segmento)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    v, p = poly.vertices, poly.param_values
    p0, d = v[:-1], v[1:] - v[:-1]
    len2 = np.maximum(np.einsum('ij,ij->i', d, d), 1e-300)
    t = np.empty(len(points))
    closest = np.empty((len(points), 2))
    dist = np.empty(len(points))
    seg = np.empty(len(points), dtype=int)
    step = _chunk(len(p0))
    for start in range(0, len(points), step):
        chunk = points[start:start + step]
        rel = chunk[:, None, :] - p0[None]
        s = np.clip(np.einsum('kij,ij->ki', rel, d) / len2, 0.0, 1.0)
        foot = p0[None] + s[..., None] * d[None]
        dd = np.linalg.norm(chunk[:, None, :] - foot, axis=-1)
        k = np.argmin(dd, axis=1)
        rows = np.arange(len(chunk))
        sl = slice(start, start + len(chunk))
        seg[sl] = k
        dist[sl] = dd[rows, k]
        closest[sl] = foot[rows, k]
        t[sl] = p[k] + s[rows, k] * (p[k + 1] - p[k])
    return t, closest, dist, seg


def closest_point(poly: Polyline, p):
    t, closest, dist, _ = closest_points(poly, np.asarray(p, dtype=float)[None])
    return float(t[0]), Point2(float(closest[0, 0]), float(closest[0, 1])), float(dist[0])


def signed_area(ring):
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x[:-1] * y[1:] - x[1:] * y[:-1]))


# ============================================================
# ÍNDICE ESPACIAL DE SEGMENTOS
# ============================================================

class SegmentIndex:
    """
    Consultas de candidatos sobre los segmentos de varias polilíneas.

    cKDTree sobre los puntos medios; el radio de búsqueda se amplía con la
    mayor semilongitud de segmento, así ningún segmento cercano se pierde.
    """

    def __init__(self, polylines):
        keys, mids, halves = [], [], []
        for key, poly in polylines:
            a, b = poly.vertices[:-1], poly.vertices[1:]
            keys.append(np.full(len(a), key, dtype=int))
            mids.append(0.5 * (a + b))
            halves.append(0.5 * np.linalg.norm(b - a, axis=1))
        self.keys = np.concatenate(keys) if keys else np.empty(0, dtype=int)
        self.pad = float(np.concatenate(halves).max()) if keys else 0.0
        self.tree = cKDTree(np.vstack(mids)) if keys else None

    def near_point(self, point, radius):
        """Claves con algún segmento a distancia <= radius del punto."""
        if self.tree is None:
            return []
        found = self.tree.query_ball_point(np.asarray(point, dtype=float), radius + self.pad)
        return sorted({int(k) for k in self.keys[found]})

    def near_box(self, bbox, margin=0.0):
        """Claves con algún segmento a distancia <= margin de la caja [x0, y0, x1, y1]."""
        bbox = np.asarray(bbox, dtype=float)
        centre = 0.5 * (bbox[:2] + bbox[2:])
        radius = 0.5 * float(np.linalg.norm(bbox[2:] - bbox[:2])) + margin
        return self.near_point(centre, radius)

    def nearest_candidates(self, points):
        """Por punto, las claves que pueden contener su segmento más cercano."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.tree is None:
            return [[] for _ in points]
        reach, _ = self.tree.query(points)
        found = self.tree.query_ball_point(points, reach + self.pad + GEOM_TOL)
        return [sorted({int(k) for k in self.keys[f]}) for f in found]

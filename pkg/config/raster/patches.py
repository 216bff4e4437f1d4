"""
Parches unificados a partir del grafo de aristas.

Las semiaristas se recorren girando siempre a la derecha en cada vértice, lo
que da un lazo cerrado por lado de cara. Los lazos cuya tangente gira en
sentido horario (número de giro -1) delimitan un parche; los demás son el
exterior de una componente anidada y se adjuntan al menor parche que la
contiene.
"""
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContainmentAmbiguity, OnBoundary, TraversalStuck
from .geometry import BezierSpline, CubicBezier, GEOM_TOL, Point2, distance_to_ring, signed_area, winding_angles
from .scene import NEUMANN, InputBoundaryCurve, OverlapMode, SourceRef, mesh_outline

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PatchBoundaryCurve:
    edge: object
    forward: bool
    condition: object

    @property
    def edge_id(self):
        return self.edge.id

    @property
    def vertices(self):
        v = self.edge.polyline.vertices
        return v if self.forward else v[::-1]

    @property
    def params(self):
        p = self.edge.polyline.param_values
        return p if self.forward else p[::-1]

    @property
    def start_vertex(self):
        return self.edge.v0 if self.forward else self.edge.v1

    @property
    def end_vertex(self):
        return self.edge.v1 if self.forward else self.edge.v0


@dataclass(eq=False)
class BoundaryLoop:
    id: int
    curves: list
    turning: int = 0

    def ring(self):
        parts = [self.curves[0].vertices]
        parts.extend(c.vertices[1:] for c in self.curves[1:])
        return np.vstack(parts)

    def vertex_sequence(self):
        """Ids de los vértices visitados, cerrando en el vértice inicial."""
        return [c.start_vertex for c in self.curves] + [self.curves[-1].end_vertex]

    def edge_sequence(self):
        return [c.edge_id for c in self.curves]

    def bbox(self):
        ring = self.ring()
        return np.concatenate([ring.min(axis=0), ring.max(axis=0)])

    def area(self):
        return signed_area(self.ring())


@dataclass(eq=False)
class Patch:
    id: int
    outer: BoundaryLoop
    contained: list = field(default_factory=list)
    interior_point: np.ndarray = None
    mesh_weights: list = field(default_factory=list)

    def loops(self):
        return [self.outer, *self.contained]

    def boundary_curves(self):
        return [curve for loop in self.loops() for curve in loop.curves]

    def bbox(self):
        return self.outer.bbox()

    def contains(self, points):
        """Puntos estrictamente dentro del lazo exterior y fuera de todo lazo contenido."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        inside = np.abs(winding_angles(self.outer.ring(), points)) > math.pi
        for loop in self.contained:
            if not inside.any():
                break
            inside &= np.abs(winding_angles(loop.ring(), points)) < math.pi
        return inside


@dataclass(eq=False)
class PatchSet:
    graph: object
    loops: list
    patches: list
    discarded: list = field(default_factory=list)


# ============================================================
# RECORRIDO
# ============================================================

def _departure(edge, forward):
    """Dirección de salida y curvatura con signo de una semiarista en su vértice inicial."""
    t = edge.ta if forward else edge.tb
    d1 = np.asarray(edge.derivative(t), dtype=float)
    d2 = np.asarray(edge.second_derivative(t), dtype=float)
    if not forward:
        d1 = -d1
    norm = float(np.hypot(*d1))
    if norm < 1e-12:
        # Cúspide en el vértice: se usa el primer segmento de la polilínea.
        v = edge.polyline.vertices
        d1 = v[1] - v[0] if forward else v[-2] - v[-1]
        return math.atan2(d1[1], d1[0]), 0.0
    curvature = float(d1[0] * d2[1] - d1[1] * d2[0]) / norm ** 3
    return math.atan2(d1[1], d1[0]), curvature


def rotation_system(graph):
    """Semiaristas salientes (id de arista, sentido) de cada vértice, en sentido antihorario."""
    rotation = {}
    for vertex in graph.vertex_list():
        keyed = []
        for edge_id, end in vertex.incident:
            forward = end == 0
            angle, curvature = _departure(graph.edges[edge_id], forward)
            keyed.append(((angle, curvature, edge_id, not forward), (edge_id, forward)))
        rotation[vertex.id] = [half for _, half in sorted(keyed)]
    return rotation


def _condition(edge, forward):
    return edge.curve.right if forward else edge.curve.left


def trace_loops(graph):
    """
    Todos los lazos de frontera; cada semiarista se usa exactamente una vez.
    
    En cada vértice se sale por la primera semiarista en sentido antihorario
    desde la dirección de llegada invertida, que es el giro a la derecha más cerrado.
    """
    rotation = rotation_system(graph)
    position = {v: {half: i for i, half in enumerate(halves)} for v, halves in rotation.items()}
    used = set()
    loops = []
    total = 2 * len(graph.edges)
    for edge in graph.edge_list():
        for forward in (True, False):
            start = (edge.id, forward)
            if start in used:
                continue
            curves, half = [], start
            while True:
                if half in used:
                    raise TraversalStuck(
                        f"half-edge {half} visited twice while tracing from {start}; "
                        f"the rotation order at its vertex is inconsistent"
                    )
                used.add(half)
                e = graph.edges[half[0]]
                curves.append(PatchBoundaryCurve(e, half[1], _condition(e, half[1])))
                arrival = e.v1 if half[1] else e.v0
                twin = (half[0], not half[1])
                order = rotation[arrival]
                if twin not in position[arrival]:
                    raise TraversalStuck(f"vertex {arrival} does not list half-edge {twin}")
                half = order[(position[arrival][twin] + 1) % len(order)]
                if half == start:
                    break
                if len(curves) > total:
                    raise TraversalStuck(f"loop from {start} does not close")
            loop = BoundaryLoop(len(loops), curves)
            loop.turning = turning_number(loop)
            loops.append(loop)
    return loops


def turning_number(loop) -> int:
    """
    Suma de los ángulos exteriores discretos del lazo entre 2*pi, redondeada.
    
    Una vuelta atrás exacta (extremo de arista colgante) cuenta como giro a la izquierda de +pi.
    """
    ring = loop.ring() if isinstance(loop, BoundaryLoop) else np.asarray(loop, dtype=float)
    d = np.diff(ring, axis=0)
    d = d[np.hypot(d[:, 0], d[:, 1]) > GEOM_TOL * 1e-3]
    if len(d) == 0:
        return 0
    nxt = np.roll(d, -1, axis=0)
    cross = d[:, 0] * nxt[:, 1] - d[:, 1] * nxt[:, 0]
    dot = np.einsum('ij,ij->i', d, nxt)
    angles = np.arctan2(cross, dot)
    reversal = (np.abs(cross) <= 1e-15 * np.hypot(*d.T) * np.hypot(*nxt.T)) & (dot < 0)
    angles[reversal] = math.pi
    return int(round(float(angles.sum()) / (2 * math.pi)))


# ============================================================
# ENSAMBLADO
# ============================================================

def _components(graph):
    from .edge_graph import connected_components

    membership = {}
    for index, component in enumerate(connected_components(graph)):
        for vertex_id in component:
            membership[vertex_id] = index
    return membership


def _inside(container, loop):
    """Si un vértice del lazo cae dentro del anillo contenedor (decide el primero fuera del anillo)."""
    ring = container.ring()
    for point in loop.ring():
        if distance_to_ring(ring, point[None])[0] <= GEOM_TOL:
            continue
        return abs(winding_angles(ring, point[None])[0]) > math.pi
    raise OnBoundary(f"loop {loop.id} lies on loop {container.id}")


def _box_contains(outer, inner):
    return outer[0] <= inner[0] + GEOM_TOL and outer[1] <= inner[1] + GEOM_TOL \
        and outer[2] >= inner[2] - GEOM_TOL and outer[3] >= inner[3] - GEOM_TOL


def _interior_point(patch):
    rings = [loop.ring() for loop in patch.loops()]
    x0, y0, x1, y1 = patch.bbox()
    for n in (24, 96):
        xs = np.linspace(x0, x1, n + 2)[1:-1]
        ys = np.linspace(y0, y1, n + 2)[1:-1]
        grid = np.stack(np.meshgrid(xs, ys), axis=-1).reshape(-1, 2)
        inside = patch.contains(grid)
        if not inside.any():
            continue
        candidates = grid[inside]
        clearance = np.min([distance_to_ring(ring, candidates) for ring in rings], axis=0)
        best = int(np.argmax(clearance))
        if clearance[best] > GEOM_TOL:
            return candidates[best]
    # Astilla delgada: se sale del primer segmento hacia su derecha.
    a, b = rings[0][0], rings[0][1]
    d = b - a
    normal = np.array([d[1], -d[0]]) / max(float(np.hypot(*d)), 1e-300)
    return 0.5 * (a + b) + normal * max(1e-6 * float(np.hypot(x1 - x0, y1 - y0)), 1e-9)


def assemble_patches(loops, graph, scene=None):
    """
    Parches de los lazos negativos; cada otro lazo se adjunta al menor parche que lo contiene.
    
    Devuelve (parches, lazos descartados).
    """
    outer = [loop for loop in loops if loop.turning < 0]
    others = [loop for loop in loops if loop.turning >= 0]
    discarded = []
    if scene is not None:
        # Caras de curvas que salen del borde: quedan fuera del dominio.
        x0, y0, x1, y1 = scene.domain
        kept = []
        for loop in outer:
            point = _interior_point(Patch(-1, loop))
            if x0 < point[0] < x1 and y0 < point[1] < y1:
                kept.append(loop)
            else:
                logger.warning("Loop %d lies outside the image domain; discarded", loop.id)
                discarded.append(loop)
        outer = kept
    patches = [Patch(index, loop) for index, loop in enumerate(outer)]
    membership = _components(graph)
    boxes = {loop.id: loop.bbox() for loop in loops}
    areas = {loop.id: abs(loop.area()) for loop in outer}

    def component(loop):
        return membership[loop.curves[0].start_vertex]

    for loop in others:
        containers = []
        for patch in patches:
            if component(patch.outer) == component(loop) or not _box_contains(boxes[patch.outer.id], boxes[loop.id]):
                continue
            if _inside(patch.outer, loop):
                containers.append(patch)
        if not containers:
            logger.info("Loop %d (turning %+d) lies outside every patch; discarded", loop.id, loop.turning)
            discarded.append(loop)
            continue
        containers.sort(key=lambda p: areas[p.outer.id])
        for inner, outer_patch in zip(containers, containers[1:]):
            if not _inside(outer_patch.outer, inner.outer):
                raise ContainmentAmbiguity(
                    f"loop {loop.id} lies inside patches {inner.id} and {outer_patch.id}, which are not nested"
                )
        containers[0].contained.append(loop)

    for patch in patches:
        patch.interior_point = _interior_point(patch)
    return patches, discarded


def patch_laplacian_refs(patch, scene, mode, outlines=None):
    """Mallas de gradiente ponderadas del parche: [(id de malla, peso)] en orden de escena."""
    mode = OverlapMode(mode)
    if outlines is None:
        outlines = {m.id: mesh_outline(m, scene.settings.epsilon) for m in scene.gradient_meshes}
    sourced = {c.condition.mesh_id for c in patch.boundary_curves() if c.condition.is_dirichlet}
    meshes = []
    for mesh in scene.gradient_meshes:
        ring = outlines[mesh.id]
        point = np.asarray(patch.interior_point, dtype=float)[None]
        inside = abs(winding_angles(ring, point)[0]) > math.pi and distance_to_ring(ring, point)[0] > GEOM_TOL
        if inside or mesh.id in sourced:
            meshes.append(mesh)
    n = len(meshes)
    if mode == OverlapMode.ZERO:
        weights = [0.0] * n
    elif mode == OverlapMode.SUM:
        weights = [1.0] * n
    elif mode == OverlapMode.AVERAGE:
        weights = [1.0 / n] * n
    else:
        top = max(meshes, key=lambda m: m.z_order) if meshes else None
        weights = [1.0 if m is top else 0.0 for m in meshes]
    return [(m.id, w) for m, w in zip(meshes, weights)]


def border_curves(domain):
    """El rectángulo del dominio como cuatro curvas rectas en sentido horario, Neumann a ambos lados."""
    x0, y0, x1, y1 = domain
    corners = [(x0, y1), (x1, y1), (x1, y0), (x0, y0), (x0, y1)]
    names = ('top', 'right', 'bottom', 'left')
    curves = []
    for name, a, b in zip(names, corners, corners[1:]):
        a, b = np.array(a), np.array(b)
        seg = CubicBezier.from_array([a, a + (b - a) / 3.0, a + 2.0 * (b - a) / 3.0, b])
        curves.append(InputBoundaryCurve(BezierSpline([seg]), NEUMANN, NEUMANN, SourceRef('border', name)))
    return curves


def build_patches(graph, scene) -> PatchSet:
    """Añade el borde del dominio a una copia del grafo, la recorre y ensambla los parches ponderados."""
    bordered = graph.copy()
    for curve in border_curves(scene.domain):
        bordered.insert_curve(curve)
    loops = trace_loops(bordered)
    patches, discarded = assemble_patches(loops, bordered, scene)
    outlines = {m.id: mesh_outline(m, scene.settings.epsilon) for m in scene.gradient_meshes}
    for patch in patches:
        patch.mesh_weights = patch_laplacian_refs(patch, scene, scene.settings.overlap_mode, outlines)
    logger.debug("Traced %d loops into %d patches (%d discarded)", len(loops), len(patches), len(discarded))
    return PatchSet(bordered, loops, patches, discarded)

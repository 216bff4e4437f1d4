"""
Primitivos de la escena y su conversión en curvas de frontera de entrada.

Una escena reúne mallas de gradiente, curvas de difusión y curvas de Poisson
sobre un dominio rectangular. Las mallas y las curvas de difusión se
convierten en InputBoundaryCurve (spline orientada con una condición a cada
lado); las curvas de Poisson solo aportan al término fuente.
"""
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Union

import numpy as np
from django.db import models

from .exceptions import FoldedMesh, ParseError
from .geometry import BezierSpline, CubicBezier, GEOM_TOL, Point2, discretize, intersect_polylines

logger = logging.getLogger(__name__)

SCENE_FORMAT = 1


class ColorRGB(NamedTuple):
    r: float
    g: float
    b: float


class OverlapMode(models.TextChoices):
    ZERO = 'zero', 'Ignore mesh Laplacians in overlaps'
    SUM = 'sum', 'Add overlapping mesh Laplacians'
    AVERAGE = 'average', 'Average overlapping mesh Laplacians'
    FIRST = 'first', 'Use the topmost mesh only'


def hermite_basis(t):
    """Pesos de Hermite cúbicos (p0, p1, m0, m1) en t."""
    t = np.asarray(t, dtype=float)
    t2, t3 = t * t, t * t * t
    return np.stack([1 - 3 * t2 + 2 * t3, 3 * t2 - 2 * t3, t - 2 * t2 + t3, t3 - t2], axis=-1)


# ============================================================
# CONDICIONES DE FRONTERA
# ============================================================

@dataclass(frozen=True)
class ColorRamp:
    """Color lineal a trozos sobre el parámetro normalizado, acotado en los extremos."""
    stops: tuple

    def __post_init__(self):
        stops = tuple((float(t), ColorRGB(*map(float, c))) for t, c in self.stops)
        if not stops:
            raise ValueError("a color ramp needs at least one stop")
        ts = [t for t, _ in stops]
        if any(t < 0.0 or t > 1.0 for t in ts):
            raise ValueError("ramp stop parameters must lie in [0, 1]")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("ramp stop parameters must be strictly increasing")
        if not all(math.isfinite(v) for _, c in stops for v in c):
            raise ValueError("ramp colors must be finite")
        object.__setattr__(self, 'stops', stops)

    @classmethod
    def constant(cls, color):
        return cls(((0.0, color),))

    def sample(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        ts = np.array([t for t, _ in self.stops])
        colors = np.array([c for _, c in self.stops])
        return np.stack([np.interp(s, ts, colors[:, k]) for k in range(3)], axis=-1)

    def color_at(self, s) -> ColorRGB:
        return ColorRGB(*map(float, self.sample(s)[0]))


@dataclass(frozen=True)
class HermiteColorCurve:
    """Color cúbico exacto a lo largo de una arista del borde de una malla."""
    c0: ColorRGB
    c1: ColorRGB
    m0: ColorRGB
    m1: ColorRGB
    mesh_id: str = ''

    def sample(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        coeffs = np.array([self.c0, self.c1, self.m0, self.m1], dtype=float)
        return hermite_basis(np.clip(s, 0.0, 1.0)) @ coeffs

    def color_at(self, s) -> ColorRGB:
        return ColorRGB(*map(float, self.sample(s)[0]))


@dataclass(frozen=True)
class Dirichlet:
    ramp: Union[ColorRamp, HermiteColorCurve]

    is_dirichlet = True

    @property
    def mesh_id(self):
        return getattr(self.ramp, 'mesh_id', '') or None


@dataclass(frozen=True)
class NeumannHomogeneous:
    is_dirichlet = False


NEUMANN = NeumannHomogeneous()
BoundaryCondition = Union[Dirichlet, NeumannHomogeneous]


@dataclass(frozen=True)
class SourceRef:
    kind: str  # 'mesh', 'diffusion' or 'border'
    id: str
    edge_index: int = 0

    def __str__(self):
        if self.kind == 'mesh':
            return f"mesh:{self.id}#{self.edge_index}"
        return f"{self.kind}:{self.id}"


@dataclass(frozen=True, eq=False)
class InputBoundaryCurve:
    spline: BezierSpline
    left: BoundaryCondition
    right: BoundaryCondition
    source: SourceRef

    def normalized(self, t):
        """Lleva un parámetro global de la spline al intervalo [0, 1] de las rampas."""
        return np.asarray(t, dtype=float) / self.spline.t1


# ============================================================
# PRIMITIVOS
# ============================================================

@dataclass(frozen=True, eq=False)
class DiffusionCurve:
    id: str
    spline: BezierSpline
    left: BoundaryCondition
    right: BoundaryCondition


@dataclass(frozen=True)
class LaplacianProfile:
    """
    Laplaciano objetivo a lo largo de una curva de Poisson, por canal y por píxel al cuadrado.
    
    Toda variante se guarda como paradas lineales a trozos; ``kind`` recuerda
    cómo se escribió para serializarla igual.
    """
    kind: str  # 'constant', 'linear' or 'piecewise'
    stops: tuple

    def __post_init__(self):
        stops = tuple((float(t), ColorRGB(*map(float, c))) for t, c in self.stops)
        ts = [t for t, _ in stops]
        if not stops or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("profile stops must be strictly increasing")
        if any(t < 0.0 or t > 1.0 for t in ts):
            raise ValueError("profile stop parameters must lie in [0, 1]")
        object.__setattr__(self, 'stops', stops)

    @classmethod
    def constant(cls, value):
        return cls('constant', ((0.0, value),))

    @classmethod
    def linear(cls, start, end):
        return cls('linear', ((0.0, start), (1.0, end)))

    def sample(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        ts = np.array([t for t, _ in self.stops])
        values = np.array([c for _, c in self.stops])
        return np.stack([np.interp(s, ts, values[:, k]) for k in range(3)], axis=-1)

    def negated(self):
        return LaplacianProfile(self.kind, tuple((t, tuple(-v for v in c)) for t, c in self.stops))


@dataclass(frozen=True, eq=False)
class PoissonCurve:
    id: str
    spline: BezierSpline
    left_profile: LaplacianProfile
    right_profile: LaplacianProfile
    band_width: float = 3.0

    def __post_init__(self):
        samples = np.linspace(0.0, 1.0, 33)
        if np.max(np.abs(self.left_profile.sample(samples) + self.right_profile.sample(samples))) > 1e-12:
            raise ValueError("left and right profiles must sum to zero")
        if self.band_width <= 0.0:
            raise ValueError("band_width must be positive")


@dataclass(frozen=True, eq=False)
class GradientMesh:
    """
    Rejilla de rows x cols parches de Ferguson sin derivadas cruzadas.
    
    Los arreglos de nodos se indexan [fila, columna]; u avanza por columnas y v por filas.
    """
    id: str
    rows: int
    cols: int
    positions: np.ndarray
    colors: np.ndarray
    du: np.ndarray
    dv: np.ndarray
    color_du: np.ndarray
    color_dv: np.ndarray
    left: Optional[BoundaryCondition] = None
    z_order: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValueError("a gradient mesh needs at least one row and one column")
        shape = (self.rows + 1, self.cols + 1)
        for name, width in (('positions', 2), ('du', 2), ('dv', 2), ('colors', 3), ('color_du', 3), ('color_dv', 3)):
            value = np.asarray(getattr(self, name), dtype=float)
            if value.shape != shape + (width,):
                raise ValueError(f"{name} must have shape {shape + (width,)}")
            if not np.all(np.isfinite(value)):
                raise ValueError(f"{name} must be finite")
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    def patch_nodes(self, row, col):
        """Índices de nodo del parche (fila, columna) en (u, v) = (0,0), (1,0), (0,1), (1,1)."""
        return (row, col), (row, col + 1), (row + 1, col), (row + 1, col + 1)


@dataclass(frozen=True)
class SceneSettings:
    tau: float = 0.0
    epsilon: float = 0.01
    overlap_mode: str = OverlapMode.AVERAGE
    iterations: int = 10000
    multigrid_levels: int = 4
    residual_target: float = 1e-5

    def replace(self, **overrides):
        return dataclasses.replace(self, **{k: v for k, v in overrides.items() if v is not None})


@dataclass(frozen=True, eq=False)
class Scene:
    domain: tuple
    gradient_meshes: tuple = ()
    diffusion_curves: tuple = ()
    poisson_curves: tuple = ()
    settings: SceneSettings = field(default_factory=SceneSettings)

    def __post_init__(self):
        x0, y0, x1, y1 = map(float, self.domain)
        if not (x1 > x0 and y1 > y0):
            raise ValueError("the scene domain must have positive area")
        object.__setattr__(self, 'domain', (x0, y0, x1, y1))

    @property
    def width(self):
        return self.domain[2] - self.domain[0]

    @property
    def height(self):
        return self.domain[3] - self.domain[1]

    def with_settings(self, **overrides):
        return dataclasses.replace(self, settings=self.settings.replace(**overrides))

    def mesh(self, mesh_id):
        for mesh in self.gradient_meshes:
            if mesh.id == mesh_id:
                return mesh
        raise KeyError(mesh_id)


# ============================================================
# CURVAS DE FRONTERA DE ENTRADA
# ============================================================

def _ring_edges(mesh):
    """
    Aristas del borde de la malla como (puntos de control, datos de color de Hermite).
    
    Sentido horario para una malla orientada positivamente: columna derecha
    hacia abajo, fila inferior hacia la izquierda, columna izquierda hacia
    arriba y fila superior hacia la derecha.
    """
    pos, col = mesh.positions, mesh.colors
    R, C = mesh.rows, mesh.cols
    edges = []

    def emit(a, b, tangent_a, tangent_b, ctan_a, ctan_b):
        p0, p1 = pos[a], pos[b]
        ctrl = np.array([p0, p0 + tangent_a / 3.0, p1 - tangent_b / 3.0, p1])
        edges.append((ctrl, (col[a], col[b], ctan_a, ctan_b)))

    for r in range(R - 1, -1, -1):
        a, b = (r + 1, C), (r, C)
        emit(a, b, -mesh.dv[a], -mesh.dv[b], -mesh.color_dv[a], -mesh.color_dv[b])
    for c in range(C - 1, -1, -1):
        a, b = (0, c + 1), (0, c)
        emit(a, b, -mesh.du[a], -mesh.du[b], -mesh.color_du[a], -mesh.color_du[b])
    for r in range(R):
        a, b = (r, 0), (r + 1, 0)
        emit(a, b, mesh.dv[a], mesh.dv[b], mesh.color_dv[a], mesh.color_dv[b])
    for c in range(C):
        a, b = (R, c), (R, c + 1)
        emit(a, b, mesh.du[a], mesh.du[b], mesh.color_du[a], mesh.color_du[b])
    return edges


def _ring_area(edges):
    ring = np.vstack([CubicBezier.from_array(ctrl).points(np.linspace(0, 1, 9))[:-1] for ctrl, _ in edges])
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _folded_edges(curves, epsilon):
    polylines = [discretize(c.spline, epsilon) for c in curves]
    n = len(polylines)
    folded = set()
    for i, poly in enumerate(polylines):
        if intersect_polylines(poly, poly):
            folded.add(i)
        for j in range(i + 1, n):
            if j == i + 1:
                joint = poly.end
            elif i == 0 and j == n - 1:
                joint = poly.start
            else:
                joint = None
            for _, _, point in intersect_polylines(poly, polylines[j]):
                if joint is None or math.dist(point, joint) > 1e-7:
                    folded.update((i, j))
    return sorted(folded)


def mesh_boundary_curves(mesh: GradientMesh, epsilon=None):
    """
    Borde exterior de una malla como curvas de frontera en sentido horario.
    
    Cada arista de Ferguson del anillo exterior da una curva cuyo lado derecho
    lleva la restricción cúbica exacta del color de la malla. Las aristas
    interiores no se emiten. Lanza FoldedMesh si el anillo se corta a sí mismo.
    """
    edges = _ring_edges(mesh)
    if _ring_area(edges) > 0.0:
        # Parametrización negativa: se recorre el anillo al revés.
        edges = [(ctrl[::-1], (c1, c0, -m1, -m0)) for ctrl, (c0, c1, m0, m1) in reversed(edges)]
    left = mesh.left if mesh.left is not None else NEUMANN
    curves = []
    for index, (ctrl, (c0, c1, m0, m1)) in enumerate(edges):
        seg = CubicBezier.from_array(ctrl)
        if seg.is_degenerate():
            logger.warning("Mesh %s boundary edge %d has zero length; skipped", mesh.id, index)
            continue
        right = Dirichlet(HermiteColorCurve(
            ColorRGB(*c0), ColorRGB(*c1), ColorRGB(*m0), ColorRGB(*m1), mesh_id=mesh.id,
        ))
        curves.append(InputBoundaryCurve(BezierSpline([seg]), left, right, SourceRef('mesh', mesh.id, index)))

    if epsilon is None:
        extent = np.ptp(mesh.positions.reshape(-1, 2), axis=0)
        epsilon = max(0.01 * float(extent.min()), GEOM_TOL * 10)
    folded = _folded_edges(curves, epsilon)
    if folded:
        raise FoldedMesh(mesh.id, [curves[i].source.edge_index for i in folded])
    return curves


def diffusion_boundary_curve(dc: DiffusionCurve) -> InputBoundaryCurve:
    return InputBoundaryCurve(dc.spline, dc.left, dc.right, SourceRef('diffusion', dc.id))


def input_curves(scene: Scene):
    """Todas las curvas de frontera: primero mallas, luego curvas de difusión, en orden de escena."""
    curves = []
    for mesh in scene.gradient_meshes:
        curves.extend(mesh_boundary_curves(mesh, scene.settings.epsilon))
    curves.extend(diffusion_boundary_curve(dc) for dc in scene.diffusion_curves)
    return curves


def mesh_outline(mesh: GradientMesh, epsilon):
    """Anillo cerrado de vértices del borde exterior de la malla."""
    parts = [discretize(c.spline, epsilon).vertices[:-1] for c in mesh_boundary_curves(mesh, epsilon)]
    ring = np.vstack(parts)
    return np.vstack([ring, ring[:1]])


# ============================================================
# ARCHIVOS DE ESCENA
# ============================================================

def parse_scene(text) -> Scene:
    from .serializers import parse_document

    return parse_document(text)


def serialize_scene(scene: Scene) -> str:
    from .serializers import dump_document

    return dump_document(scene)


def load_scene(path) -> Scene:
    try:
        text = Path(path).read_text(encoding='utf-8')
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read scene file {path}: {exc}", line=0, column=0) from exc
    return parse_scene(text)

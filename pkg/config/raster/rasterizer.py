"""
Rasterización por parche y resolución de Poisson.

Cada parche trabaja en su recorte de la imagen (caja de píxeles más un
margen). Las filas van de arriba abajo: el píxel (i, j) tiene centro en
x = x0 + (j + 0.5) * hx, y = y1 - (i + 0.5) * hy.
"""
import enum
import logging
import math
from dataclasses import dataclass

import numpy as np

from .geometry import GEOM_TOL, SegmentIndex, closest_points, discretize, distance_to_ring
from .mesh_calculus import MeshField
from .patches import patch_laplacian_refs

logger = logging.getLogger(__name__)

SMOOTHING_OMEGA = 0.8
PRE_SWEEPS = 2
POST_SWEEPS = 2
COARSE_REDUCTION = 1e-2
CHECK_EVERY = 20
STALL_CYCLES = 5


class PixelType(enum.IntEnum):
    OUTSIDE = 0
    INTERIOR = 1
    DIRICHLET = 2
    NEUMANN = 3


@dataclass(frozen=True)
class PixelFrame:
    """Resolución de salida sobre el dominio de la escena."""
    domain: tuple
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("resolution must be positive")

    @property
    def hx(self):
        return (self.domain[2] - self.domain[0]) / self.width

    @property
    def hy(self):
        return (self.domain[3] - self.domain[1]) / self.height

    def xs(self, cols=slice(None)):
        return self.domain[0] + (np.arange(self.width)[cols] + 0.5) * self.hx

    def ys(self, rows=slice(None)):
        return self.domain[3] - (np.arange(self.height)[rows] + 0.5) * self.hy

    def centers(self, rows=slice(None), cols=slice(None)):
        X, Y = np.meshgrid(self.xs(cols), self.ys(rows))
        return np.stack([X.ravel(), Y.ravel()], axis=1)

    def crop(self, bbox, margin=1):
        """Slices de filas y columnas que cubren los centros dentro de bbox, más el margen."""
        bx0, by0, bx1, by1 = bbox
        x0, y1 = self.domain[0], self.domain[3]
        j0 = math.floor((bx0 - x0) / self.hx - 0.5) - margin
        j1 = math.ceil((bx1 - x0) / self.hx - 0.5) + margin
        i0 = math.floor((y1 - by1) / self.hy - 0.5) - margin
        i1 = math.ceil((y1 - by0) / self.hy - 0.5) + margin
        rows = slice(max(i0, 0), min(i1, self.height - 1) + 1)
        cols = slice(max(j0, 0), min(j1, self.width - 1) + 1)
        return rows, cols


@dataclass(eq=False)
class RasterGrids:
    """
    Datos de píxel de un parche.

    closed_h[i, j] separa (i, j) de (i, j+1); closed_v[i, j] separa (i, j) de (i+1, j).
    """
    hx: float
    hy: float
    pixel_type: np.ndarray
    closed_h: np.ndarray
    closed_v: np.ndarray
    source: np.ndarray
    color: np.ndarray
    dirichlet_color: np.ndarray
    rows: slice = slice(None)
    cols: slice = slice(None)
    frame: PixelFrame = None
    patch_id: int = -1

    @classmethod
    def empty(cls, height, width, hx, hy, **kwargs):
        return cls(
            hx=hx, hy=hy,
            pixel_type=np.zeros((height, width), dtype=np.int8),
            closed_h=np.zeros((height, max(width - 1, 0)), dtype=bool),
            closed_v=np.zeros((max(height - 1, 0), width), dtype=bool),
            source=np.zeros((height, width, 3)),
            color=np.zeros((height, width, 3)),
            dirichlet_color=np.zeros((height, width, 3)),
            **kwargs,
        )

    @classmethod
    def for_patch(cls, patch, frame: PixelFrame):
        rows, cols = frame.crop(patch.bbox())
        height = len(range(*rows.indices(frame.height)))
        width = len(range(*cols.indices(frame.width)))
        return cls.empty(height, width, frame.hx, frame.hy, rows=rows, cols=cols, frame=frame, patch_id=patch.id)

    @property
    def shape(self):
        return self.pixel_type.shape

    @property
    def height(self):
        return self.pixel_type.shape[0]

    @property
    def width(self):
        return self.pixel_type.shape[1]

    @property
    def inside(self):
        return self.pixel_type != PixelType.OUTSIDE

    @property
    def updatable(self):
        return (self.pixel_type == PixelType.INTERIOR) | (self.pixel_type == PixelType.NEUMANN)

    @property
    def scale(self):
        """Espaciado al cuadrado con el que se escalan los residuos (h^2 en malla cuadrada)."""
        return 2.0 / (1.0 / self.hx ** 2 + 1.0 / self.hy ** 2)

    def centers(self):
        return self.frame.centers(self.rows, self.cols)


@dataclass(frozen=True)
class SolverConfig:
    iterations: int = 10000
    multigrid_levels: int = 4
    residual_target: float = 1e-5

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if self.multigrid_levels < 1:
            raise ValueError("multigrid_levels must be at least 1")

    @classmethod
    def from_settings(cls, settings):
        return cls(settings.iterations, settings.multigrid_levels, settings.residual_target)


@dataclass
class SolveReport:
    converged: bool
    residual: float
    iterations: int
    levels: int = 1
    isolated: int = 0


# ============================================================
# MÁSCARAS
# ============================================================

def _inside(patch, grids):
    points = grids.centers()
    inside = patch.contains(points)
    near = np.zeros(len(points), dtype=bool)
    for loop in patch.loops():
        near |= distance_to_ring(loop.ring(), points) <= GEOM_TOL
    if near.any():
        # Centros sobre una curva: gana el parche que contiene el punto medio píxel abajo a la derecha.
        shifted = points[near] + np.array([0.5 * grids.hx, -0.5 * grids.hy])
        inside[near] = patch.contains(shifted)
    return inside.reshape(grids.shape)


def _crossed_links(curves, grids):
    """
    Enlaces entre centros vecinos que cruza una polilínea de frontera.

    Rango semiabierto en y (o x): un vértice sobre la línea de enlaces cuenta una vez.
    """
    height, width = grids.shape
    closed_h = np.zeros_like(grids.closed_h)
    closed_v = np.zeros_like(grids.closed_v)
    x_first, y_first = grids.frame.xs(grids.cols)[0], grids.frame.ys(grids.rows)[0]
    hx, hy = grids.hx, grids.hy
    segments = [np.stack([c.vertices[:-1], c.vertices[1:]], axis=1) for c in curves]
    if not segments:
        return closed_h, closed_v
    seg = np.concatenate(segments)
    a, b = seg[:, 0], seg[:, 1]

    if width > 1:
        lo, hi = np.minimum(a[:, 1], b[:, 1]), np.maximum(a[:, 1], b[:, 1])
        first = np.maximum(np.floor((y_first - hi) / hy).astype(int) + 1, 0)
        last = np.minimum(np.floor((y_first - lo) / hy).astype(int), height - 1)
        rows, k = _expand(first, last)
        y = y_first - rows * hy
        dy = b[k, 1] - a[k, 1]
        x = a[k, 0] + (y - a[k, 1]) * (b[k, 0] - a[k, 0]) / dy
        cols = np.floor((x - x_first) / hx).astype(int)
        ok = (cols >= 0) & (cols < width - 1)
        closed_h[rows[ok], cols[ok]] = True

    if height > 1:
        lo, hi = np.minimum(a[:, 0], b[:, 0]), np.maximum(a[:, 0], b[:, 0])
        first = np.maximum(np.ceil((lo - x_first) / hx).astype(int), 0)
        last = np.minimum(np.ceil((hi - x_first) / hx).astype(int) - 1, width - 1)
        cols, k = _expand(first, last)
        x = x_first + cols * hx
        dx = b[k, 0] - a[k, 0]
        y = a[k, 1] + (x - a[k, 0]) * (b[k, 1] - a[k, 1]) / dx
        rows = np.floor((y_first - y) / hy).astype(int)
        ok = (rows >= 0) & (rows < height - 1)
        closed_v[rows[ok], cols[ok]] = True
    return closed_h, closed_v


def _expand(first, last):
    """Aplana los rangos [first, last] de cada segmento en pares (valor, índice de segmento)."""
    counts = np.maximum(last - first + 1, 0)
    k = np.repeat(np.arange(len(counts)), counts)
    offsets = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    return first[k] + offsets, k


def _blocked(inside, closed_h, closed_v):
    """Píxeles con algún vecino fuera del parche o de la malla, o tras un enlace cerrado."""
    blocked = np.zeros_like(inside)
    blocked[:, :-1] |= ~inside[:, 1:] | closed_h
    blocked[:, 1:] |= ~inside[:, :-1] | closed_h
    blocked[:-1, :] |= ~inside[1:, :] | closed_v
    blocked[1:, :] |= ~inside[:-1, :] | closed_v
    blocked[0, :] = blocked[-1, :] = True
    blocked[:, 0] = blocked[:, -1] = True
    return blocked


def _closest_curves(patch, points):
    """
    Curva de frontera más cercana a cada punto: (curva, parámetro de la spline).

    Solo se miden las aristas candidatas del índice de segmentos. Aristas por
    id y gana la estrictamente más cercana: en empate, el id menor.
    """
    sides = {}
    for curve in patch.boundary_curves():
        sides.setdefault(curve.edge_id, {})[curve.forward] = curve
    polylines = {edge_id: next(iter(by_side.values())).edge.polyline for edge_id, by_side in sides.items()}
    members = {}
    for index, keys in enumerate(SegmentIndex(sorted(polylines.items())).nearest_candidates(points)):
        for key in keys:
            members.setdefault(key, []).append(index)

    best = np.full(len(points), np.inf)
    chosen = np.empty(len(points), dtype=object)
    params = np.zeros(len(points))
    for edge_id in sorted(members):
        idx = np.asarray(members[edge_id])
        by_side = sides[edge_id]
        poly = polylines[edge_id]
        t, foot, dist, seg = closest_points(poly, points[idx])
        closer = dist < best[idx]
        if not closer.any():
            continue
        d = poly.vertices[seg + 1] - poly.vertices[seg]
        rel = points[idx] - foot
        right_of_forward = d[:, 0] * rel[:, 1] - d[:, 1] * rel[:, 0] < 0.0
        pick = np.empty(len(idx), dtype=object)
        pick[:] = by_side.get(False, by_side.get(True))
        pick[right_of_forward] = by_side.get(True, by_side.get(False))
        won = idx[closer]
        best[won] = dist[closer]
        chosen[won] = pick[closer]
        params[won] = t[closer]
    return chosen, params


def _dirichlet_colors(curve, points, params, mesh_fields):
    condition = curve.condition
    colors = condition.ramp.sample(curve.edge.curve.normalized(params))
    mesh_id = condition.mesh_id
    if mesh_id is not None and mesh_fields and mesh_id in mesh_fields:
        sampled = mesh_fields[mesh_id].color_at(points)
        hit = ~np.isnan(sampled[:, 0])
        colors[hit] = sampled[hit]
    return colors


def rasterize_masks(patch, grids: RasterGrids, mesh_fields=None):
    """
    Tipos de píxel, banderas escalonadas y colores Dirichlet de un parche.

    Con mesh_fields (id de malla -> MeshField) los píxeles Dirichlet del borde
    de una malla toman el color interpolado en su centro.
    """
    inside = _inside(patch, grids)
    closed_h, closed_v = _crossed_links(patch.boundary_curves(), grids)
    boundary = inside & _blocked(inside, closed_h, closed_v)

    pixel_type = np.where(inside, PixelType.INTERIOR, PixelType.OUTSIDE).astype(np.int8)
    dirichlet_color = np.zeros(grids.shape + (3,))
    rows, cols = np.nonzero(boundary)
    if len(rows):
        points = grids.centers().reshape(grids.shape + (2,))[rows, cols]
        chosen, params = _closest_curves(patch, points)
        groups = {}
        for index, curve in enumerate(chosen):
            groups.setdefault(id(curve), (curve, []))[1].append(index)
        for curve, members in groups.values():
            members = np.asarray(members)
            r, c = rows[members], cols[members]
            if curve.condition.is_dirichlet:
                pixel_type[r, c] = PixelType.DIRICHLET
                dirichlet_color[r, c] = _dirichlet_colors(curve, points[members], params[members], mesh_fields)
            else:
                pixel_type[r, c] = PixelType.NEUMANN

    grids.pixel_type = pixel_type
    grids.closed_h = closed_h
    grids.closed_v = closed_v
    grids.dirichlet_color = dirichlet_color
    return grids


# ============================================================
# TÉRMINO FUENTE
# ============================================================

def poisson_source(scene, frame: PixelFrame):
    """
    Fuente de todas las curvas de Poisson sobre la imagen completa.

    Cada píxel de la banda toma el perfil de su lado por el número de vecinos
    del lado opuesto. Perfiles por píxel al cuadrado: se divide entre hx * hy.
    """
    out = np.zeros((frame.height, frame.width, 3))
    if not scene.poisson_curves:
        return out
    points = frame.centers()
    reach_unit = math.sqrt(frame.hx * frame.hy)
    for curve in scene.poisson_curves:
        poly = discretize(curve.spline, scene.settings.epsilon)
        reach = curve.band_width * reach_unit
        if reach < min(frame.hx, frame.hy):
            logger.warning("Poisson curve %r: band of %.3g px is narrower than a pixel; its source may vanish",
                           curve.id, curve.band_width)
        x0, y0, x1, y1 = poly.bbox()
        candidates = np.nonzero(
            (points[:, 0] >= x0 - reach) & (points[:, 0] <= x1 + reach)
            & (points[:, 1] >= y0 - reach) & (points[:, 1] <= y1 + reach)
        )[0]
        if len(candidates) == 0:
            continue
        t, foot, dist, seg = closest_points(poly, points[candidates])
        band = dist <= reach
        if not poly.is_closed():
            band &= (t > curve.spline.t0 + GEOM_TOL) & (t < curve.spline.t1 - GEOM_TOL)
        d = poly.vertices[seg + 1] - poly.vertices[seg]
        rel = points[candidates] - foot
        right = d[:, 0] * rel[:, 1] - d[:, 1] * rel[:, 0] < 0.0

        side = np.zeros(frame.height * frame.width, dtype=np.int8)
        side[candidates[band & right]] = -1
        side[candidates[band & ~right]] = 1
        side = side.reshape(frame.height, frame.width)
        gamma = _opposite_neighbours(side)

        s = np.zeros(frame.height * frame.width)
        s[candidates] = t / curve.spline.t1
        s = s.reshape(frame.height, frame.width)
        left_px, right_px = (side == 1) & (gamma > 0), (side == -1) & (gamma > 0)
        out[left_px] += curve.left_profile.sample(s[left_px]) * gamma[left_px, None]
        out[right_px] += curve.right_profile.sample(s[right_px]) * gamma[right_px, None]
    return out / (frame.hx * frame.hy)


def _opposite_neighbours(side):
    side = side.astype(int)
    count = np.zeros(side.shape, dtype=int)
    horizontal = side[:, :-1] * side[:, 1:] < 0
    vertical = side[:-1, :] * side[1:, :] < 0
    count[:, :-1] += horizontal
    count[:, 1:] += horizontal
    count[:-1, :] += vertical
    count[1:, :] += vertical
    return count


def rasterize_source(patch, grids: RasterGrids, scene, mode=None, mesh_fields=None, poisson=None):
    """
    Laplacianos de malla ponderados más las bandas de Poisson en píxeles actualizables.

    poisson es la salida de poisson_source; se calcula al vuelo si falta.
    """
    refs = patch.mesh_weights if mode is None else patch_laplacian_refs(patch, scene, mode)
    source = np.zeros(grids.shape + (3,))
    updatable = grids.updatable
    if updatable.any():
        points = grids.centers().reshape(grids.shape + (2,))[updatable]
        for mesh_id, weight in refs:
            if weight == 0.0:
                continue
            mesh_field = (mesh_fields or {}).get(mesh_id) or MeshField(scene.mesh(mesh_id))
            laplacian, _, _ = mesh_field.laplacian_at(points)
            source[updatable] += weight * laplacian
        if scene.poisson_curves:
            if poisson is None:
                poisson = poisson_source(scene, grids.frame)
            source[updatable] += poisson[grids.rows, grids.cols][updatable]
    grids.source = source
    return grids


# ============================================================
# RELAJACIÓN
# ============================================================

@dataclass(eq=False)
class _Level:
    grids: RasterGrids
    east: np.ndarray
    west: np.ndarray
    north: np.ndarray
    south: np.ndarray
    total: np.ndarray
    active: np.ndarray
    isolated: int = 0


def _level(grids: RasterGrids):
    """Pesos de vecinos: 1/h^2 a través de enlaces abiertos hacia píxeles del parche."""
    live = grids.inside
    wx, wy = 1.0 / grids.hx ** 2, 1.0 / grids.hy ** 2
    east, west = np.zeros(grids.shape), np.zeros(grids.shape)
    north, south = np.zeros(grids.shape), np.zeros(grids.shape)
    east[:, :-1] = wx * (live[:, 1:] & ~grids.closed_h)
    west[:, 1:] = wx * (live[:, :-1] & ~grids.closed_h)
    south[:-1, :] = wy * (live[1:, :] & ~grids.closed_v)
    north[1:, :] = wy * (live[:-1, :] & ~grids.closed_v)
    total = east + west + north + south
    updatable = grids.updatable
    for w in (east, west, north, south, total):
        w[~updatable] = 0.0
    active = updatable & (total > 0.0)
    isolated = int((updatable & ~active).sum())
    return _Level(grids, east, west, north, south, total, active, isolated)


def _neighbour_sum(level, c):
    s = np.zeros_like(c)
    s[:, :-1] += level.east[:, :-1, None] * c[:, 1:]
    s[:, 1:] += level.west[:, 1:, None] * c[:, :-1]
    s[:-1] += level.south[:-1, :, None] * c[1:]
    s[1:] += level.north[1:, :, None] * c[:-1]
    return s


def _sweep(level, c, f, omega=1.0):
    s = _neighbour_sum(level, c)
    a = level.active
    new = c.copy()
    jacobi = (s[a] - f[a]) / level.total[a, None]
    new[a] = jacobi if omega == 1.0 else (1.0 - omega) * c[a] + omega * jacobi
    return new


def _residual_field(level, c, f):
    res = np.zeros_like(c)
    a = level.active
    res[a] = f[a] - (_neighbour_sum(level, c)[a] - level.total[a, None] * c[a])
    return res


def jacobi_step(grids: RasterGrids, color=None, omega=1.0):
    """
    Un paso de Jacobi con doble buffer; devuelve el buffer nuevo.

    Los píxeles Dirichlet y los aislados conservan su valor.
    """
    level = _level(grids)
    if level.isolated:
        logger.warning("Patch %d: %d isolated pixels keep their previous color", grids.patch_id, level.isolated)
    return _sweep(level, grids.color if color is None else color, grids.source, omega)


def residual(grids: RasterGrids, color=None):
    """Norma máxima por canal del residuo discreto, escalado por h^2."""
    level = _level(grids)
    c = grids.color if color is None else color
    if not level.active.any():
        return np.zeros(3)
    return grids.scale * np.abs(_residual_field(level, c, grids.source)[level.active]).max(axis=0)


# ============================================================
# MULTIGRID
# ============================================================

def _blocks(a, height, width, fill):
    """Bloques 2x2 de a como eje final de longitud 4, rellenando con fill."""
    pad = [(0, 2 * height - a.shape[0]), (0, 2 * width - a.shape[1])] + [(0, 0)] * (a.ndim - 2)
    a = np.pad(a, pad, constant_values=fill)
    tail = a.shape[2:]
    return a.reshape(height, 2, width, 2, *tail).swapaxes(1, 2).reshape(height, width, 4, *tail)


def _restrict_values(grids, values, coarse_shape):
    """Media sobre los hijos actualizables de cada píxel grueso."""
    height, width = coarse_shape
    mask = _blocks(grids.updatable, height, width, False)
    summed = (_blocks(values, height, width, 0.0) * mask[..., None]).sum(axis=2)
    return summed / np.maximum(mask.sum(axis=2), 1)[..., None]


def restrict(grids: RasterGrids) -> RasterGrids:
    """Malla a media resolución: Dirichlet si algún hijo lo es; los enlaces cerrados se heredan."""
    height, width = (grids.height + 1) // 2, (grids.width + 1) // 2
    coarse = RasterGrids.empty(height, width, 2.0 * grids.hx, 2.0 * grids.hy, patch_id=grids.patch_id)

    types = _blocks(grids.pixel_type, height, width, PixelType.OUTSIDE)
    dirichlet = types == PixelType.DIRICHLET
    pixel_type = np.full((height, width), PixelType.OUTSIDE, dtype=np.int8)
    pixel_type[(types == PixelType.INTERIOR).any(axis=2)] = PixelType.INTERIOR
    pixel_type[(types == PixelType.NEUMANN).any(axis=2)] = PixelType.NEUMANN
    pixel_type[dirichlet.any(axis=2)] = PixelType.DIRICHLET
    coarse.pixel_type = pixel_type

    colors = _blocks(grids.dirichlet_color, height, width, 0.0)
    coarse.dirichlet_color = (colors * dirichlet[..., None]).sum(axis=2) \
        / np.maximum(dirichlet.sum(axis=2), 1)[..., None]
    coarse.source = _restrict_values(grids, grids.source, (height, width))

    closed_h = np.zeros((2 * height, 2 * width), dtype=bool)
    closed_h[:grids.height, :grids.width - 1] = grids.closed_h
    coarse.closed_h = closed_h[:, 1::2].reshape(height, 2, width).any(axis=1)[:, :width - 1]
    closed_v = np.zeros((2 * height, 2 * width), dtype=bool)
    closed_v[:grids.height - 1, :grids.width] = grids.closed_v
    coarse.closed_v = closed_v[1::2, :].reshape(height, width, 2).any(axis=2)[:height - 1]
    return coarse


def _open(coarse, i, j, di, dj):
    """Si el vecino grueso (i+di, j+dj) existe, está vivo y se alcanza por un enlace abierto."""
    height, width = coarse.shape
    ni, nj = i + di, j + dj
    valid = (ni >= 0) & (ni < height) & (nj >= 0) & (nj < width)
    ni_c, nj_c = np.clip(ni, 0, height - 1), np.clip(nj, 0, width - 1)
    ok = valid & coarse.inside[ni_c, nj_c]
    if np.any(dj != 0):
        link = np.clip(np.minimum(j, nj), 0, max(width - 2, 0))
        if coarse.closed_h.size:
            ok &= ~coarse.closed_h[i, link]
        else:
            ok &= False
    else:
        link = np.clip(np.minimum(i, ni), 0, max(height - 2, 0))
        if coarse.closed_v.size:
            ok &= ~coarse.closed_v[link, j]
        else:
            ok &= False
    return ok, ni_c, nj_c


def prolong(coarse: RasterGrids, values, fine_shape):
    """
    Interpolación bilineal de la malla gruesa a la fina.

    Pesos 9, 3, 3, 1 sobre 16; se omiten vecinos fuera o tras enlaces cerrados y se renormaliza.
    """
    height, width = fine_shape
    i = np.broadcast_to((np.arange(height) // 2)[:, None], fine_shape)
    j = np.broadcast_to((np.arange(width) // 2)[None, :], fine_shape)
    di = np.broadcast_to(np.where(np.arange(height) % 2 == 0, -1, 1)[:, None], fine_shape)
    dj = np.broadcast_to(np.where(np.arange(width) % 2 == 0, -1, 1)[None, :], fine_shape)
    zero = np.zeros(fine_shape, dtype=int)

    total = np.full(fine_shape, 9.0 / 16.0)
    out = total[..., None] * values[i, j]
    h_ok, hi_, hj_ = _open(coarse, i, j, zero, dj)
    v_ok, vi_, vj_ = _open(coarse, i, j, di, zero)
    via_h, di_, dj_ = _open(coarse, hi_, hj_, di, zero)
    via_v, _, _ = _open(coarse, vi_, vj_, zero, dj)
    d_ok = (h_ok & via_h) | (v_ok & via_v)
    for ok, ii, jj, w in ((h_ok, hi_, hj_, 3.0), (v_ok, vi_, vj_, 3.0), (d_ok, di_, dj_, 1.0)):
        weight = np.where(ok, w / 16.0, 0.0)
        out += weight[..., None] * values[ii, jj]
        total += weight
    return out / total[..., None]


def _pyramid(grids, levels):
    pyramid = [_level(grids)]
    while len(pyramid) < levels:
        coarse = restrict(pyramid[-1].grids)
        if min(coarse.shape) < 3 or not coarse.updatable.any():
            break
        pyramid.append(_level(coarse))
    return pyramid


def _coarse_solve(level, c, f, budget):
    """
    Barridos de Jacobi hasta reducir el residuo en COARSE_REDUCTION o agotar el presupuesto.

    Devuelve (buffer, barridos hechos).
    """
    if not level.active.any():
        return c, 0
    start = np.abs(_residual_field(level, c, f)).max()
    if start == 0.0:
        return c, 0
    done = 0
    while done < budget:
        for _ in range(min(CHECK_EVERY, budget - done)):
            c = _sweep(level, c, f, SMOOTHING_OMEGA)
            done += 1
        if np.abs(_residual_field(level, c, f)).max() <= COARSE_REDUCTION * start:
            break
    return c, done


def _work(pyramid, k):
    """Coste de un barrido en el nivel k, en barridos equivalentes del nivel fino."""
    return pyramid[k].grids.pixel_type.size / pyramid[0].grids.pixel_type.size


def _v_cycle(pyramid, k, c, f, coarse_budget):
    """Un ciclo V desde el nivel k; devuelve (buffer, trabajo en barridos finos equivalentes)."""
    level = pyramid[k]
    if k == len(pyramid) - 1:
        c, done = _coarse_solve(level, c, f, coarse_budget)
        return c, done * _work(pyramid, k)
    for _ in range(PRE_SWEEPS):
        c = _sweep(level, c, f, SMOOTHING_OMEGA)
    coarse = pyramid[k + 1]
    res = _residual_field(level, c, f)
    coarse_f = _restrict_values(level.grids, res, coarse.grids.shape)
    correction, work = _v_cycle(pyramid, k + 1, np.zeros_like(coarse_f), coarse_f, coarse_budget)
    c = c.copy()
    a = level.active
    c[a] += prolong(coarse.grids, correction, level.grids.shape)[a]
    for _ in range(POST_SWEEPS):
        c = _sweep(level, c, f, SMOOTHING_OMEGA)
    return c, work + (PRE_SWEEPS + POST_SWEEPS) * _work(pyramid, k)


def _initial_color(grids):
    c = np.zeros(grids.shape + (3,))
    dirichlet = grids.pixel_type == PixelType.DIRICHLET
    c[dirichlet] = grids.dirichlet_color[dirichlet]
    if dirichlet.any():
        c[grids.updatable] = grids.dirichlet_color[dirichlet].mean(axis=0)
    return c


def solve(grids: RasterGrids, config: SolverConfig) -> SolveReport:
    """
    Ciclos V de multigrid hasta que el residuo llegue a config.residual_target.

    config.iterations limita el trabajo total en barridos equivalentes del
    nivel fino: un barrido en un nivel grueso cuenta según su número de
    píxeles. Si se agota o el residuo se estanca, queda el mejor buffer.
    """
    levels = max(1, min(config.multigrid_levels, int(math.log2(max(min(grids.shape), 1))) or 1))
    pyramid = _pyramid(grids, levels)
    fine = pyramid[0]
    if fine.isolated:
        logger.warning("Patch %d: %d isolated pixels keep their initial color", grids.patch_id, fine.isolated)
    c = _initial_color(grids)
    f = grids.source

    def measure(buffer):
        if not fine.active.any():
            return 0.0
        return grids.scale * float(np.abs(_residual_field(fine, buffer, f)[fine.active]).max())

    coarse_shape = pyramid[-1].grids.shape
    coarse_budget = min(config.iterations, 2 * coarse_shape[0] * coarse_shape[1])
    levels_used = len(pyramid)
    current = measure(c)
    best, best_residual = c, current
    sweeps, stalled = 0.0, 0
    while best_residual > config.residual_target and sweeps < config.iterations:
        if len(pyramid) == 1:
            step = min(CHECK_EVERY, math.ceil(config.iterations - sweeps))
            for _ in range(step):
                c = _sweep(fine, c, f)
            sweeps += step
        else:
            c, work = _v_cycle(pyramid, 0, c, f, coarse_budget)
            sweeps += work
        previous, current = current, measure(c)
        if current < best_residual:
            best, best_residual = c, current
        stalled = stalled + 1 if len(pyramid) > 1 and current > 0.99 * previous else 0
        if stalled >= STALL_CYCLES:
            logger.info("Patch %d: multigrid stalled at residual %.3g; continuing with plain Jacobi",
                        grids.patch_id, current)
            pyramid, c, stalled = pyramid[:1], best, 0

    sweeps = math.ceil(sweeps - 1e-9)
    converged = best_residual <= config.residual_target
    if not converged:
        logger.warning("Patch %d did not converge: residual %.3g after %d sweeps (target %.3g)",
                       grids.patch_id, best_residual, sweeps, config.residual_target)
    grids.color = best
    logger.debug("Patch %d solved on %d levels: %d sweeps, residual %.3g",
                 grids.patch_id, levels_used, sweeps, best_residual)
    return SolveReport(converged, best_residual, sweeps, levels_used, fine.isolated)


# ============================================================
# PARCHES Y COMPOSICIÓN
# ============================================================

def render_patch(patch, frame: PixelFrame, scene, config: SolverConfig = None, mesh_fields=None, poisson=None):
    """Máscaras, fuente y resolución de un parche sobre su recorte."""
    config = config or SolverConfig.from_settings(scene.settings)
    grids = RasterGrids.for_patch(patch, frame)
    rasterize_masks(patch, grids, mesh_fields)
    rasterize_source(patch, grids, scene, mesh_fields=mesh_fields, poisson=poisson)
    report = solve(grids, config)
    return grids, report


def composite(buffers, width, height):
    """
    Coloca cada recorte resuelto en la imagen según la propiedad de píxel.

    Devuelve la imagen lineal sin recortar y el id de parche dueño (-1 si ninguno).
    """
    image = np.zeros((height, width, 3))
    owner = np.full((height, width), -1, dtype=int)
    for grids in buffers:
        mine = grids.inside
        region_owner = owner[grids.rows, grids.cols]
        clash = mine & (region_owner >= 0)
        if clash.any():
            logger.debug("Patch %d claims %d pixels already owned", grids.patch_id, int(clash.sum()))
        region_owner[mine] = grids.patch_id
        image[grids.rows, grids.cols][mine] = grids.color[mine]
    missing = int((owner < 0).sum())
    if missing:
        logger.warning("%d pixels belong to no patch and stay black", missing)
    return image, owner

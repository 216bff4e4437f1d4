"""
Parches de Ferguson y sus derivadas espaciales exactas.

Cada parche guarda una matriz de coeficientes de Hermite 4x4 por canal
(x, y, r, g, b); f(u, v) = h(u)^T Q h(v) con h los pesos de Hermite cúbicos.
Las derivadas del mapa inverso salen de invertir la matriz 5x5 de la regla
de la cadena que lleva (d/dx, d/dy, d2/dx2, d2/dxdy, d2/dy2) a
(d/du, d/dv, d2/du2, d2/dudv, d2/dv2).
"""
import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .exceptions import FoldDetected, NotInPatch, SingularJacobian
from .geometry import Point2, de_casteljau
from .scene import ColorRGB, GradientMesh, hermite_basis

logger = logging.getLogger(__name__)

PREIMAGE_DEPTH = 40
NEWTON_STEPS = 5
POSITION_TOL = 1e-9
SINGULAR_DET = 1e-12

# Coeficientes de Hermite (p0, p1, m0, m1) -> puntos de control de Bézier.
HERMITE_TO_BEZIER = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [1.0, 0.0, 1.0 / 3.0, 0.0],
    [0.0, 1.0, 0.0, -1.0 / 3.0],
    [0.0, 1.0, 0.0, 0.0],
])


class UV(NamedTuple):
    u: float
    v: float


def _hermite_d1(t):
    t = np.asarray(t, dtype=float)
    return np.stack([-6 * t + 6 * t * t, 6 * t - 6 * t * t, 1 - 4 * t + 3 * t * t, 3 * t * t - 2 * t], axis=-1)


def _hermite_d2(t):
    t = np.asarray(t, dtype=float)
    return np.stack([-6 + 12 * t, 6 - 12 * t, -4 + 6 * t, 6 * t - 2], axis=-1)


@dataclass(frozen=True, eq=False)
class FergusonPatch:
    """Canales x, y, r, g, b; filas de Q[k]: (f(0,.), f(1,.), f_u(0,.), f_u(1,.)), columnas igual en v."""
    Q: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.shape != (5, 4, 4):
            raise ValueError("a Ferguson patch needs five 4x4 coefficient matrices")
        if np.any(Q[:, 2:, 2:] != 0.0):
            raise ValueError("mixed partials must be zero")
        Q.setflags(write=False)
        object.__setattr__(self, 'Q', Q)
        net = np.einsum('ij,cjk,lk->cil', HERMITE_TO_BEZIER, Q[:2], HERMITE_TO_BEZIER)
        net.setflags(write=False)
        object.__setattr__(self, 'net', net)

    @classmethod
    def from_mesh(cls, mesh: GradientMesh, row, col):
        n00, n10, n01, n11 = mesh.patch_nodes(row, col)
        value = np.concatenate([mesh.positions, mesh.colors], axis=-1)
        d_u = np.concatenate([mesh.du, mesh.color_du], axis=-1)
        d_v = np.concatenate([mesh.dv, mesh.color_dv], axis=-1)
        zero = np.zeros(5)
        Q = np.array([
            [value[n00], value[n01], d_v[n00], d_v[n01]],
            [value[n10], value[n11], d_v[n10], d_v[n11]],
            [d_u[n00], d_u[n01], zero, zero],
            [d_u[n10], d_u[n11], zero, zero],
        ])
        return cls(np.moveaxis(Q, -1, 0))

    def bbox(self):
        pts = self.net.reshape(2, -1)
        return np.array([pts[0].min(), pts[1].min(), pts[0].max(), pts[1].max()])


def _derivatives(Q, u, v):
    """
    Valores y derivadas primeras y segundas en cada punto; Q es (5,4,4) o (N,5,4,4).
    
    Devuelve arreglos (N, 5) en el orden f, f_u, f_v, f_uu, f_uv, f_vv.
    """
    hu, hv = hermite_basis(u), hermite_basis(v)
    du, dv = _hermite_d1(u), _hermite_d1(v)
    ddu, ddv = _hermite_d2(u), _hermite_d2(v)
    subscripts = 'ni,cij,nj->nc' if Q.ndim == 3 else 'ni,ncij,nj->nc'
    return (
        np.einsum(subscripts, hu, Q, hv),
        np.einsum(subscripts, du, Q, hv),
        np.einsum(subscripts, hu, Q, dv),
        np.einsum(subscripts, ddu, Q, hv),
        np.einsum(subscripts, du, Q, dv),
        np.einsum(subscripts, hu, Q, ddv),
    )


def _chain_matrix(f_u, f_v, f_uu, f_uv, f_vv):
    """Matrices 5x5 directas de la regla de la cadena, una por punto."""
    xu, yu = f_u[:, 0], f_u[:, 1]
    xv, yv = f_v[:, 0], f_v[:, 1]
    zero = np.zeros_like(xu)
    rows = [
        [xu, yu, zero, zero, zero],
        [xv, yv, zero, zero, zero],
        [f_uu[:, 0], f_uu[:, 1], xu * xu, 2 * xu * yu, yu * yu],
        [f_uv[:, 0], f_uv[:, 1], xu * xv, xu * yv + xv * yu, yu * yv],
        [f_vv[:, 0], f_vv[:, 1], xv * xv, 2 * xv * yv, yv * yv],
    ]
    return np.moveaxis(np.array(rows), -1, 0)


def _jacobian_det(f_u, f_v):
    return f_u[:, 0] * f_v[:, 1] - f_v[:, 0] * f_u[:, 1]


def _inverse_chain(Q, u, v):
    """Matrices inversas y derivadas del color (N,5,3); los puntos singulares quedan en NaN."""
    _, f_u, f_v, f_uu, f_uv, f_vv = _derivatives(Q, np.atleast_1d(u), np.atleast_1d(v))
    singular = np.abs(_jacobian_det(f_u, f_v)) < SINGULAR_DET
    B = _chain_matrix(f_u, f_v, f_uu, f_uv, f_vv)
    B[singular] = np.eye(5)
    A = np.linalg.inv(B)
    A[singular] = np.nan
    color = np.stack([f_u[:, 2:], f_v[:, 2:], f_uu[:, 2:], f_uv[:, 2:], f_vv[:, 2:]], axis=1)
    return A, color, singular


# ============================================================
# OPERACIONES PUNTUALES
# ============================================================

def eval_surface(patch: FergusonPatch, uv):
    f = _derivatives(patch.Q, np.atleast_1d(uv[0]), np.atleast_1d(uv[1]))[0][0]
    return Point2(float(f[0]), float(f[1])), ColorRGB(*map(float, f[2:]))


@dataclass(frozen=True)
class CoordinatePartials:
    u_x: float
    v_x: float
    u_y: float
    v_y: float
    u_xx: float
    v_xx: float
    u_yy: float
    v_yy: float


def coordinate_partials(patch: FergusonPatch, uv) -> CoordinatePartials:
    A, _, singular = _inverse_chain(patch.Q, uv[0], uv[1])
    if singular[0]:
        raise SingularJacobian(f"coordinate Jacobian is singular at uv={tuple(uv)}")
    A = A[0]
    # Columna 0: derivadas x/y de u; columna 1: las de v.
    return CoordinatePartials(
        u_x=float(A[0, 0]), v_x=float(A[0, 1]), u_y=float(A[1, 0]), v_y=float(A[1, 1]),
        u_xx=float(A[2, 0]), v_xx=float(A[2, 1]), u_yy=float(A[4, 0]), v_yy=float(A[4, 1]),
    )


def _subdivision(a, b):
    """Matriz que lleva los puntos de control de Bézier en [0, 1] a los del tramo [a, b]."""
    left, _ = de_casteljau(np.eye(4), b)
    _, piece = de_casteljau(left, a / b if b > 0 else 0.0)
    return piece


def _newton(patch, x, uv, steps):
    u, v = uv
    for _ in range(steps):
        f, f_u, f_v = (d[0] for d in _derivatives(patch.Q, np.array([u]), np.array([v]))[:3])
        det = f_u[0] * f_v[1] - f_v[0] * f_u[1]
        if abs(det) < SINGULAR_DET:
            break
        rx, ry = f[0] - x[0], f[1] - x[1]
        u -= (f_v[1] * rx - f_v[0] * ry) / det
        v -= (-f_u[1] * rx + f_u[0] * ry) / det
        u, v = min(max(u, 0.0), 1.0), min(max(v, 0.0), 1.0)
    f = _derivatives(patch.Q, np.array([u]), np.array([v]))[0][0]
    return UV(u, v), float(np.hypot(f[0] - x[0], f[1] - x[1]))


def preimage(patch: FergusonPatch, x) -> UV:
    """
    Parámetro del punto del parche situado en x.
    
    Subdivisión recursiva del cuadrado UV, podada con la caja de la red de
    control de Bézier de cada subcuadrado, y pulido de Newton en la hoja.
    Lanza NotInPatch si ningún subcuadrado llega a una raíz y FoldDetected si
    el jacobiano cambia de signo durante el descenso.
    """
    x = np.asarray(x, dtype=float)
    stack = [(0.0, 1.0, 0.0, 1.0, 0, 0.0)]
    while stack:
        u0, u1, v0, v1, depth, sign = stack.pop()
        su, sv = _subdivision(u0, u1), _subdivision(v0, v1)
        net = np.einsum('ij,cjk,lk->cil', su, patch.net, sv).reshape(2, -1)
        lo, hi = net.min(axis=1), net.max(axis=1)
        if np.any(x < lo - POSITION_TOL) or np.any(x > hi + POSITION_TOL):
            continue
        um, vm = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
        _, f_u, f_v = _derivatives(patch.Q, np.array([um]), np.array([vm]))[:3]
        det = float(_jacobian_det(f_u, f_v)[0])
        if sign and det and np.sign(det) != sign:
            raise FoldDetected(f"Jacobian changes sign near uv=({um:.6g}, {vm:.6g})")
        sign = sign or float(np.sign(det))
        if depth >= PREIMAGE_DEPTH or float(np.max(hi - lo)) < 1e-10:
            uv, error = _newton(patch, x, (um, vm), NEWTON_STEPS)
            if error <= POSITION_TOL:
                return uv
            continue
        # Orden inverso: el cuadrante (u, v) más bajo se explora primero.
        for a0, a1, b0, b1 in ((um, u1, vm, v1), (u0, um, vm, v1), (um, u1, v0, vm), (u0, um, v0, vm)):
            stack.append((a0, a1, b0, b1, depth + 1, sign))
    raise NotInPatch(f"point {tuple(x)} is not covered by the patch")


def color_gradient(patch: FergusonPatch, x):
    """Gradiente espacial del color en x: fila 0 es d/dx, fila 1 es d/dy, una columna por canal."""
    uv = preimage(patch, x)
    A, color, singular = _inverse_chain(patch.Q, uv.u, uv.v)
    if singular[0]:
        raise SingularJacobian(f"coordinate Jacobian is singular at uv={tuple(uv)}")
    return A[0, :2] @ color[0]


def color_laplacian(patch: FergusonPatch, x) -> ColorRGB:
    uv = preimage(patch, x)
    A, color, singular = _inverse_chain(patch.Q, uv.u, uv.v)
    if singular[0]:
        raise SingularJacobian(f"coordinate Jacobian is singular at uv={tuple(uv)}")
    return ColorRGB(*map(float, (A[0, 2] + A[0, 4]) @ color[0]))


# ============================================================
# CAMPO VECTORIZADO DE LA MALLA COMPLETA
# ============================================================

class MeshField:
    """
    Localización y evaluación vectorizadas sobre todos los parches de una malla.
    
    Las semillas salen de un árbol KD sobre un muestreo UV denso; cada punto
    corre Newton desde sus semillas más cercanas y recurre a la búsqueda
    recursiva de preimagen si falla. Los puntos en aristas compartidas van al
    parche de (fila, columna) más bajo.
    """

    SAMPLES = 17
    SEEDS = 4
    NEWTON_ITERATIONS = 12

    def __init__(self, mesh: GradientMesh):
        self.mesh = mesh
        self.cells = [(r, c) for r in range(mesh.rows) for c in range(mesh.cols)]
        self.patches = [FergusonPatch.from_mesh(mesh, r, c) for r, c in self.cells]
        self.Q = np.stack([p.Q for p in self.patches])
        self.boxes = np.stack([p.bbox() for p in self.patches])

        t = np.linspace(0.0, 1.0, self.SAMPLES)
        uu, vv = (g.ravel() for g in np.meshgrid(t, t, indexing='ij'))
        seeds, owners = [], []
        for index, patch in enumerate(self.patches):
            seeds.append(_derivatives(patch.Q, uu, vv)[0][:, :2])
            owners.append(np.full(len(uu), index))
        self.seed_uv = np.tile(np.stack([uu, vv], axis=1), (len(self.patches), 1))
        self.seed_owner = np.concatenate(owners)
        self.tree = cKDTree(np.vstack(seeds))

    def _index(self, row, col):
        return row * self.mesh.cols + col

    def _polish(self, owner, uv, targets):
        Q = self.Q[owner]
        u, v = uv[:, 0].copy(), uv[:, 1].copy()
        for _ in range(self.NEWTON_ITERATIONS):
            f, f_u, f_v = _derivatives(Q, u, v)[:3]
            det = _jacobian_det(f_u, f_v)
            ok = np.abs(det) >= SINGULAR_DET
            det = np.where(ok, det, 1.0)
            rx, ry = f[:, 0] - targets[:, 0], f[:, 1] - targets[:, 1]
            u = np.where(ok, u - (f_v[:, 1] * rx - f_v[:, 0] * ry) / det, u)
            v = np.where(ok, v - (-f_u[:, 1] * rx + f_u[:, 0] * ry) / det, v)
            u, v = np.clip(u, -0.05, 1.05), np.clip(v, -0.05, 1.05)
        inside = (u >= -POSITION_TOL) & (u <= 1 + POSITION_TOL) & (v >= -POSITION_TOL) & (v <= 1 + POSITION_TOL)
        u, v = np.clip(u, 0.0, 1.0), np.clip(v, 0.0, 1.0)
        f = _derivatives(Q, u, v)[0]
        error = np.hypot(f[:, 0] - targets[:, 0], f[:, 1] - targets[:, 1])
        return np.stack([u, v], axis=1), inside & (error <= POSITION_TOL)

    def _prefer_lower(self, owner, uv):
        """Pasa los puntos de arista al parche de (fila, columna) más bajo que la comparte."""
        cols = self.mesh.cols
        for _ in range(self.mesh.rows + cols):
            row, col = owner // cols, owner % cols
            left = (uv[:, 0] <= POSITION_TOL) & (col > 0)
            down = (uv[:, 1] <= POSITION_TOL) & (row > 0) & ~left
            if not (left.any() or down.any()):
                break
            owner = np.where(left, owner - 1, np.where(down, owner - cols, owner))
            uv[left, 0] = 1.0
            uv[down, 1] = 1.0
        return owner, uv

    def locate(self, points):
        """Índice de parche (o -1) y UV de cada punto."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        owner = np.full(len(points), -1)
        uv = np.zeros((len(points), 2))
        lo, hi = self.boxes[:, :2].min(axis=0), self.boxes[:, 2:].max(axis=0)
        pending = np.nonzero(np.all((points >= lo - POSITION_TOL) & (points <= hi + POSITION_TOL), axis=1))[0]
        if len(pending) == 0:
            return owner, uv

        k = min(self.SEEDS, self.tree.n)
        _, nearest = self.tree.query(points[pending], k=k)
        nearest = nearest.reshape(len(pending), k)
        for j in range(k):
            if len(pending) == 0:
                break
            seed = nearest[:, j]
            cand_owner = self.seed_owner[seed]
            cand_uv, ok = self._polish(cand_owner, self.seed_uv[seed], points[pending])
            found = pending[ok]
            owner[found], uv[found] = cand_owner[ok], cand_uv[ok]
            pending, nearest = pending[~ok], nearest[~ok]

        for i in pending:
            p = points[i]
            for index, patch in enumerate(self.patches):
                box = self.boxes[index]
                if p[0] < box[0] - POSITION_TOL or p[0] > box[2] + POSITION_TOL \
                        or p[1] < box[1] - POSITION_TOL or p[1] > box[3] + POSITION_TOL:
                    continue
                try:
                    found_uv = preimage(patch, p)
                except NotInPatch:
                    continue
                except FoldDetected:
                    logger.debug("Fold in mesh %s patch %s near %s", self.mesh.id, self.cells[index], tuple(p))
                    continue
                owner[i], uv[i] = index, found_uv
                break

        hit = owner >= 0
        owner[hit], uv[hit] = self._prefer_lower(owner[hit], uv[hit])
        return owner, uv

    def contains(self, points):
        return self.locate(points)[0] >= 0

    def color_at(self, points):
        """Color interpolado (N,3); NaN donde el punto cae fuera de la malla."""
        owner, uv = self.locate(points)
        out = np.full((len(owner), 3), np.nan)
        hit = owner >= 0
        if hit.any():
            out[hit] = _derivatives(self.Q[owner[hit]], uv[hit, 0], uv[hit, 1])[0][:, 2:]
        return out

    def laplacian_at(self, points):
        """
        Laplaciano analítico del color (N,3) y máscaras de puntos cubiertos y singulares.
        
        Los puntos no cubiertos o singulares reciben laplaciano cero.
        """
        owner, uv = self.locate(points)
        out = np.zeros((len(owner), 3))
        hit = owner >= 0
        singular = np.zeros(len(owner), dtype=bool)
        if hit.any():
            A, color, sing = _inverse_chain(self.Q[owner[hit]], uv[hit, 0], uv[hit, 1])
            lap = np.einsum('nk,nkc->nc', A[:, 2] + A[:, 4], color)
            lap[sing] = 0.0
            out[hit] = lap
            singular[np.nonzero(hit)[0][sing]] = True
        if singular.any():
            logger.warning("Mesh %s: %d points with a singular Jacobian contribute no Laplacian",
                           self.mesh.id, int(singular.sum()))
        return out, hit, singular

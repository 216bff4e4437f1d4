"""Archivos de imagen y capas de depuración, codificados con OpenCV."""
import logging
from pathlib import Path

import cv2
import numpy as np

from .rasterizer import PixelType

logger = logging.getLogger(__name__)

PIXEL_TYPE_COLORS = {
    PixelType.OUTSIDE: (0, 0, 0),
    PixelType.INTERIOR: (200, 200, 200),
    PixelType.DIRICHLET: (220, 40, 40),
    PixelType.NEUMANN: (40, 90, 220),
}

# Colores distintos para el mapa de parches, ciclados por id.
PATCH_PALETTE = np.array([
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 212),
    (0, 128, 128), (220, 190, 255), (170, 110, 40), (255, 250, 200), (128, 0, 0),
    (170, 255, 195),
], dtype=np.uint8)


def srgb_encode(linear):
    linear = np.clip(np.asarray(linear, dtype=float), 0.0, 1.0)
    return np.where(linear <= 0.0031308, 12.92 * linear, 1.055 * np.power(linear, 1.0 / 2.4) - 0.055)


def to_8bit(rgb_linear, encode=True):
    values = srgb_encode(rgb_linear) if encode else np.clip(rgb_linear, 0.0, 1.0)
    return np.round(values * 255.0).astype(np.uint8)


def _write(path, rgb8):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(np.ascontiguousarray(rgb8), cv2.COLOR_RGB2BGR)):
        raise OSError(f"could not write image {path}")
    logger.debug("Wrote %s (%dx%d)", path, rgb8.shape[1], rgb8.shape[0])
    return path


def write_image(path, rgb_linear):
    """Acota y escribe una imagen RGB lineal: PNG de 8 bits en sRGB, o PPM binario sin codificar."""
    suffix = Path(path).suffix.lower()
    if suffix == '.png':
        return _write(path, to_8bit(rgb_linear))
    if suffix == '.ppm':
        return _write(path, to_8bit(rgb_linear, encode=False))
    raise ValueError(f"unsupported image format {suffix!r}; use .png or .ppm")


def write_layer(path, rgb8):
    return _write(path, rgb8)


def layer_path(output, layer, suffix='.png'):
    """<stem>.<layer><suffix> junto a la imagen de salida."""
    output = Path(output)
    return output.with_name(f"{output.stem}.{layer}{suffix}")


# ============================================================
# CAPAS DE DEPURACIÓN
# ============================================================

def _place(buffers, width, height, paint):
    canvas = np.zeros((height, width, 3), dtype=np.uint8)
    for grids in buffers:
        region = canvas[grids.rows, grids.cols]
        paint(grids, region)
    return canvas


def pixel_type_image(buffers, width, height):
    def paint(grids, region):
        for kind, color in PIXEL_TYPE_COLORS.items():
            if kind != PixelType.OUTSIDE:
                region[grids.pixel_type == kind] = color
    return _place(buffers, width, height, paint)


def staggered_flag_image(buffers, width, height):
    """Tipos de píxel; los vecinos de un enlace cerrado van en amarillo."""
    canvas = pixel_type_image(buffers, width, height) // 2
    for grids in buffers:
        region = canvas[grids.rows, grids.cols]
        flagged = np.zeros(grids.shape, dtype=bool)
        flagged[:, :-1] |= grids.closed_h
        flagged[:, 1:] |= grids.closed_h
        flagged[:-1, :] |= grids.closed_v
        flagged[1:, :] |= grids.closed_v
        region[flagged & grids.inside] = (255, 220, 0)
    return canvas


def source_heatmap(buffers, width, height):
    """Fuente sumada por canales en escala logarítmica simétrica: azul negativo, blanco cero, rojo positivo."""
    total = np.zeros((height, width))
    for grids in buffers:
        region = total[grids.rows, grids.cols]
        region[grids.inside] = grids.source.sum(axis=2)[grids.inside]
    magnitude = np.abs(total)
    peak = magnitude.max()
    rgb = np.full((height, width, 3), 255, dtype=np.uint8)
    if peak == 0.0:
        return rgb
    floor = max(peak * 1e-4, np.finfo(float).tiny)
    level = np.log1p(magnitude / floor) / np.log1p(peak / floor)
    fade = np.round(255.0 * (1.0 - level)).astype(np.uint8)
    positive, negative = total > 0.0, total < 0.0
    rgb[positive, 1] = fade[positive]
    rgb[positive, 2] = fade[positive]
    rgb[negative, 0] = fade[negative]
    rgb[negative, 1] = fade[negative]
    return rgb


def patch_id_image(owner):
    rgb = np.zeros(owner.shape + (3,), dtype=np.uint8)
    claimed = owner >= 0
    rgb[claimed] = PATCH_PALETTE[owner[claimed] % len(PATCH_PALETTE)]
    return rgb


def graph_overlay(graph, domain, width, height, background=None):
    """Polilíneas de aristas y puntos de vértices dibujados sobre la imagen (o sobre blanco)."""
    canvas = np.full((height, width, 3), 255, dtype=np.uint8) if background is None else background.copy()
    x0, y0, x1, y1 = domain

    def to_pixels(points):
        points = np.asarray(points, dtype=float)
        px = (points[:, 0] - x0) / (x1 - x0) * width
        py = (y1 - points[:, 1]) / (y1 - y0) * height
        return np.round(np.stack([px, py], axis=1)).astype(np.int32)

    for edge in graph.edge_list():
        cv2.polylines(canvas, [to_pixels(edge.polyline.vertices)], False, (20, 20, 20), 1, cv2.LINE_AA)
    for vertex in graph.vertex_list():
        cx, cy = to_pixels(np.asarray(vertex.position)[None])[0]
        cv2.circle(canvas, (int(cx), int(cy)), 3, (220, 30, 30), -1, cv2.LINE_AA)
    return canvas


def solution_layer(grids, width, height):
    """Buffer sin acotar de un parche sobre una imagen negra, codificado en sRGB."""
    layer = np.zeros((height, width, 3))
    region = layer[grids.rows, grids.cols]
    region[grids.inside] = grids.color[grids.inside]
    return to_8bit(layer)

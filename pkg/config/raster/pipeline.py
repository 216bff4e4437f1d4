"""
Pipeline de renderizado: escena → curvas de entrada → grafo de aristas →
parches → rasterizado y resolución por parche → composición.

Las etapas geométricas no dependen de la resolución de salida; una escena
ordenada una vez sirve para renderizar a cualquier tamaño.
"""
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

from .edge_graph import build
from .mesh_calculus import MeshField
from .patches import build_patches
from .rasterizer import PixelFrame, SolverConfig, composite, poisson_source, render_patch
from .scene import input_curves

logger = logging.getLogger(__name__)


@contextmanager
def stage(timings, name):
    start = time.perf_counter()
    try:
        yield
    finally:
        timings[name] = (time.perf_counter() - start) * 1000.0
        logger.debug("Stage %s took %.1f ms", name, timings[name])


@dataclass(eq=False)
class Arrangement:
    scene: object
    curves: list
    graph: object
    patch_set: object
    timings: dict = field(default_factory=dict)

    @property
    def patches(self):
        return self.patch_set.patches


@dataclass(eq=False)
class RenderResult:
    arrangement: Arrangement
    frame: PixelFrame
    buffers: list
    reports: list
    image: object
    owner: object
    timings: dict = field(default_factory=dict)

    @property
    def converged(self):
        return all(report.converged for report in self.reports)


def arrange(scene) -> Arrangement:
    """Solo las etapas geométricas."""
    timings = {}
    with stage(timings, 'curves'):
        curves = input_curves(scene)
    with stage(timings, 'graph'):
        graph = build(curves, scene.settings.tau, scene.settings.epsilon)
    with stage(timings, 'patches'):
        patch_set = build_patches(graph, scene)
    logger.info("Scene arranged: %d curves, %d vertices, %d edges, %d patches",
                len(curves), len(graph.vertices), len(graph.edges), len(patch_set.patches))
    return Arrangement(scene, curves, graph, patch_set, timings)


def render(scene, width, height, arrangement: Arrangement = None) -> RenderResult:
    arrangement = arrangement or arrange(scene)
    timings = dict(arrangement.timings)
    frame = PixelFrame(scene.domain, width, height)
    config = SolverConfig.from_settings(scene.settings)

    with stage(timings, 'raster'):
        mesh_fields = {mesh.id: MeshField(mesh) for mesh in scene.gradient_meshes}
        poisson = poisson_source(scene, frame)
        buffers, reports = [], []
        for patch in arrangement.patches:
            grids, report = render_patch(patch, frame, scene, config, mesh_fields, poisson)
            buffers.append(grids)
            reports.append(report)
    with stage(timings, 'composite'):
        image, owner = composite(buffers, width, height)

    unconverged = sum(not r.converged for r in reports)
    if unconverged:
        logger.warning("%d of %d patches stopped before reaching the residual target", unconverged, len(reports))
    return RenderResult(arrangement, frame, buffers, reports, image, owner, timings)


def scene_stats(arrangement: Arrangement, result: RenderResult = None):
    """Conteos de primitivos y del grafo, y tiempos por etapa en milisegundos."""
    scene = arrangement.scene
    stats = {
        'DCs': len(scene.diffusion_curves),
        'PCs': len(scene.poisson_curves),
        'GMs': len(scene.gradient_meshes),
        'Vs': len(arrangement.graph.vertices),
        'Es': len(arrangement.graph.edges),
        'Ps': len(arrangement.patches),
    }
    timings = dict(result.timings if result is not None else arrangement.timings)
    return stats, timings

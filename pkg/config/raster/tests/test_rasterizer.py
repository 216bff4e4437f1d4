import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from config.raster.geometry import BezierSpline
from config.raster.mesh_calculus import FergusonPatch, MeshField, color_laplacian
from config.raster.pipeline import arrange, render
from config.raster.rasterizer import (
    PixelFrame, PixelType, RasterGrids, SolverConfig, jacobi_step, poisson_source, prolong, rasterize_masks,
    rasterize_source, residual, restrict, solve,
)
from config.raster.scene import parse_scene, serialize_scene

KAPPA = 0.5522847498


def circle_points(cx, cy, r):
    k = KAPPA * r
    return [
        [cx + r, cy], [cx + r, cy + k], [cx + k, cy + r], [cx, cy + r],
        [cx - k, cy + r], [cx - r, cy + k], [cx - r, cy],
        [cx - r, cy - k], [cx - k, cy - r], [cx, cy - r],
        [cx + k, cy - r], [cx + r, cy - k], [cx + r, cy],
    ]


def square_points(x0, y0, x1, y1):
    corners = [(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)]
    points = [list(corners[0])]
    for (ax, ay), (bx, by) in zip(corners, corners[1:]):
        points += [[ax + (bx - ax) / 3, ay + (by - ay) / 3], [ax + 2 * (bx - ax) / 3, ay + 2 * (by - ay) / 3], [bx, by]]
    return points


def scene_of(domain, curves=(), **settings):
    return parse_scene(json.dumps({'format': 1, 'domain': domain, 'settings': settings,
                                   'diffusion_curves': list(curves)}))


def ring_grids(size, h, values):
    """Rejilla size x size con anillo Dirichlet tomado de values(x, y) e interior por resolver."""
    grids = RasterGrids.empty(size, size, h, h)
    grids.pixel_type[:] = PixelType.DIRICHLET
    grids.pixel_type[1:-1, 1:-1] = PixelType.INTERIOR
    ys, xs = np.mgrid[0:size, 0:size]
    x, y = (xs + 0.5) * h, 1.0 - (ys + 0.5) * h
    grids.dirichlet_color = values(x, y)
    return grids, x, y


def embed(full_shape, grids, values, fill=0):
    out = np.full(full_shape, fill, dtype=values.dtype)
    out[grids.rows, grids.cols.start:grids.cols.start + values.shape[1]] = values
    return out


# ============================================================
# ARITMÉTICA DE JACOBI
# ============================================================

@pytest.fixture
def plus():
    """Rejilla 3x3: anillo Dirichlet alrededor de un píxel interior con cuatro vecinos de colores distintos."""
    h = 0.1
    grids = RasterGrids.empty(3, 3, h, h)
    grids.pixel_type[:] = PixelType.DIRICHLET
    grids.pixel_type[1, 1] = PixelType.INTERIOR
    grids.color[0, 1] = (1, 0, 0)
    grids.color[1, 0] = (0, 1, 0)
    grids.color[1, 2] = (0, 0, 1)
    grids.color[2, 1] = (1, 1, 1)
    return grids


def test_jacobi_averages_neighbours(plus):
    new = jacobi_step(plus)
    assert_allclose(new[1, 1], (0.5, 0.5, 0.5))
    assert_array_equal(new[0], plus.color[0])


def test_jacobi_subtracts_scaled_source(plus):
    plus.source[1, 1] = np.array([0.4, 0.0, 0.0]) / plus.hx ** 2
    assert_allclose(jacobi_step(plus)[1, 1], (0.4, 0.5, 0.5))


def test_jacobi_skips_closed_links(plus):
    plus.pixel_type[1, 1] = PixelType.NEUMANN
    plus.closed_h[1, 1] = True
    assert_allclose(jacobi_step(plus)[1, 1], (2 / 3, 2 / 3, 1 / 3))


def test_isolated_pixel_keeps_its_color(plus):
    plus.closed_h[1, :] = True
    plus.closed_v[:, 1] = True
    plus.color[1, 1] = (0.3, 0.3, 0.3)
    assert_allclose(jacobi_step(plus)[1, 1], (0.3, 0.3, 0.3))


# ============================================================
# RESOLUCIÓN
# ============================================================

@pytest.mark.parametrize('levels', [1, 4])
def test_linear_field_is_reproduced(levels):
    grids, x, y = ring_grids(16, 1 / 16, lambda x, y: np.stack([0.2 + 0.5 * x, 0.7 - 0.3 * y, x + y], axis=-1))
    report = solve(grids, SolverConfig(iterations=50000, multigrid_levels=levels, residual_target=1e-10))
    assert report.converged
    expected = np.stack([0.2 + 0.5 * x, 0.7 - 0.3 * y, x + y], axis=-1)
    assert_allclose(grids.color, expected, atol=1e-7)


def test_constant_boundary_gives_constant_field():
    grids, _, _ = ring_grids(12, 1 / 12, lambda x, y: np.broadcast_to([0.3, 0.6, 0.9], x.shape + (3,)).copy())
    solve(grids, SolverConfig(residual_target=1e-10))
    assert_allclose(grids.color, np.broadcast_to([0.3, 0.6, 0.9], grids.shape + (3,)), atol=1e-8)


def test_maximum_principle():
    rng = np.random.default_rng(7)
    grids, _, _ = ring_grids(20, 1 / 20, lambda x, y: rng.uniform(-1, 2, x.shape + (3,)))
    ring = grids.pixel_type == PixelType.DIRICHLET
    solve(grids, SolverConfig(residual_target=1e-9))
    lo, hi = grids.dirichlet_color[ring].min(axis=0), grids.dirichlet_color[ring].max(axis=0)
    inner = grids.color[1:-1, 1:-1]
    assert (inner >= lo - 1e-9).all()
    assert (inner <= hi + 1e-9).all()


def test_solution_is_a_jacobi_fixed_point():
    grids, _, _ = ring_grids(24, 1 / 24, lambda x, y: np.stack([np.sin(3 * x), y * y, x * y], axis=-1))
    grids.source[1:-1, 1:-1] = (0.5, -1.0, 2.0)
    config = SolverConfig(residual_target=1e-6)
    report = solve(grids, config)
    assert report.converged
    assert residual(grids).max() <= config.residual_target
    assert np.abs(jacobi_step(grids) - grids.color).max() <= config.residual_target


def test_multigrid_needs_fewer_sweeps_than_jacobi():
    def values(x, y):
        return np.stack([x, y, x * x - y * y], axis=-1)

    plain, _, _ = ring_grids(64, 1 / 64, values)
    multi, _, _ = ring_grids(64, 1 / 64, values)
    target = 1e-6
    slow = solve(plain, SolverConfig(iterations=100000, multigrid_levels=1, residual_target=target))
    fast = solve(multi, SolverConfig(iterations=100000, multigrid_levels=4, residual_target=target))
    assert slow.converged and fast.converged
    assert fast.levels > 1
    assert fast.iterations < slow.iterations
    assert_allclose(multi.color, plain.color, atol=1e-3)


def test_budget_exhaustion_is_reported():
    grids, _, _ = ring_grids(32, 1 / 32, lambda x, y: np.stack([x, y, x], axis=-1))
    report = solve(grids, SolverConfig(iterations=3, multigrid_levels=1, residual_target=1e-12))
    assert not report.converged
    assert report.iterations == 3
    assert report.residual > 1e-12


def test_coarse_sweeps_count_against_the_budget():
    grids, _, _ = ring_grids(32, 1 / 32, lambda x, y: np.stack([x, y, x * y], axis=-1))
    report = solve(grids, SolverConfig(iterations=5, multigrid_levels=2, residual_target=1e-14))
    assert report.levels == 2
    # Un ciclo: 4 barridos finos y 5 barridos sobre 16x16, que cuentan 5/4.
    assert report.iterations == 6
    assert not report.converged


def test_harmonic_disc_grid_matches_analytic_solution():
    size, h = 128, 2.2 / 128
    grids = RasterGrids.empty(size, size, h, h)
    ys, xs = np.mgrid[0:size, 0:size]
    x, y = -1.1 + (xs + 0.5) * h, 1.1 - (ys + 0.5) * h
    inside = np.hypot(x, y) < 1.0
    ring = np.zeros_like(inside)
    ring[1:] |= inside[:-1]
    ring[:-1] |= inside[1:]
    ring[:, 1:] |= inside[:, :-1]
    ring[:, :-1] |= inside[:, 1:]
    ring &= ~inside
    grids.pixel_type[ring] = PixelType.DIRICHLET
    grids.pixel_type[inside] = PixelType.INTERIOR
    exact = np.stack([x, x * x - y * y, np.exp(x) * np.cos(y)], axis=-1)
    grids.dirichlet_color = exact.copy()
    report = solve(grids, SolverConfig(iterations=100000, multigrid_levels=4, residual_target=1e-8))
    assert report.converged
    assert np.abs(grids.color - exact)[inside].max() <= 5e-3


def test_pure_neumann_patch_is_trivially_converged():
    grids = RasterGrids.empty(8, 8, 0.1, 0.1)
    grids.pixel_type[:] = PixelType.NEUMANN
    grids.pixel_type[1:-1, 1:-1] = PixelType.INTERIOR
    report = solve(grids, SolverConfig())
    assert report.converged
    assert_allclose(grids.color, 0.0)


# ============================================================
# TRANSFERENCIA MULTIGRID
# ============================================================

def test_restrict_keeps_dirichlet_and_closed_links():
    grids, _, _ = ring_grids(8, 1 / 8, lambda x, y: np.stack([x, y, x], axis=-1))
    grids.closed_h[:, 3] = True
    coarse = restrict(grids)
    assert coarse.shape == (4, 4)
    assert coarse.hx == pytest.approx(0.25)
    assert (coarse.pixel_type[0] == PixelType.DIRICHLET).all()
    assert (coarse.pixel_type[1:-1, 1:-1] == PixelType.INTERIOR).all()
    assert coarse.closed_h[:, 1].all()
    assert not coarse.closed_h[:, 0].any()


def test_prolong_does_not_leak_across_closed_links():
    coarse = RasterGrids.empty(2, 2, 0.2, 0.2)
    coarse.pixel_type[:] = PixelType.INTERIOR
    coarse.closed_h[:, 0] = True
    values = np.zeros((2, 2, 3))
    values[:, 1] = 1.0
    fine = prolong(coarse, values, (4, 4))
    assert_allclose(fine[:, :2], 0.0)
    assert_allclose(fine[:, 2:], 1.0)


def test_prolong_reproduces_constants():
    coarse = RasterGrids.empty(3, 3, 0.2, 0.2)
    coarse.pixel_type[:] = PixelType.INTERIOR
    fine = prolong(coarse, np.full((3, 3, 3), 0.7), (6, 6))
    assert_allclose(fine, 0.7)


# ============================================================
# MÁSCARAS
# ============================================================

SQUARE = {'id': 'square', 'points': square_points(4, 4, 12, 12), 'left': [1, 0, 0], 'right': [0, 0, 1]}


@pytest.fixture
def square_scene():
    return scene_of([0, 0, 16, 16], [SQUARE])


def patches_of(scene):
    inner, outer = sorted(arrange(scene).patches, key=lambda p: abs(p.outer.area()))
    return inner, outer


def test_square_masks(square_scene):
    inner, _ = patches_of(square_scene)
    frame = PixelFrame(square_scene.domain, 16, 16)
    grids = rasterize_masks(inner, RasterGrids.for_patch(inner, frame))

    expected = np.full((16, 16), PixelType.OUTSIDE, dtype=np.int8)
    expected[4:12, 4:12] = PixelType.DIRICHLET
    expected[5:11, 5:11] = PixelType.INTERIOR
    assert_array_equal(embed((16, 16), grids, grids.pixel_type), expected)

    closed_h = np.zeros((16, 15), dtype=bool)
    closed_h[4:12, [3, 11]] = True
    closed_v = np.zeros((15, 16), dtype=bool)
    closed_v[[3, 11], 4:12] = True
    assert_array_equal(embed((16, 15), grids, grids.closed_h, False), closed_h)
    rows = slice(grids.rows.start, grids.rows.start + grids.closed_v.shape[0])
    full_v = np.zeros((15, 16), dtype=bool)
    full_v[rows, grids.cols] = grids.closed_v
    assert_array_equal(full_v, closed_v)

    dirichlet = grids.pixel_type == PixelType.DIRICHLET
    assert_allclose(grids.dirichlet_color[dirichlet], np.broadcast_to([1, 0, 0], (int(dirichlet.sum()), 3)))


def test_background_masks(square_scene):
    _, outer = patches_of(square_scene)
    frame = PixelFrame(square_scene.domain, 16, 16)
    grids = rasterize_masks(outer, RasterGrids.for_patch(outer, frame))
    types = embed((16, 16), grids, grids.pixel_type)
    assert types[3, 5] == PixelType.DIRICHLET
    assert types[8, 12] == PixelType.DIRICHLET
    assert types[0, 5] == PixelType.NEUMANN
    assert types[15, 15] == PixelType.NEUMANN
    assert types[8, 8] == PixelType.OUTSIDE
    assert types[2, 2] == PixelType.INTERIOR
    assert_allclose(embed((16, 16, 3), grids, grids.dirichlet_color)[3, 5], (0, 0, 1))


def test_empty_scene_is_neumann_bordered():
    scene = scene_of([0, 0, 1, 1])
    patch, = arrange(scene).patches
    grids = rasterize_masks(patch, RasterGrids.for_patch(patch, PixelFrame(scene.domain, 10, 10)))
    assert grids.shape == (10, 10)
    ring = np.ones((10, 10), dtype=bool)
    ring[1:-1, 1:-1] = False
    assert (grids.pixel_type[ring] == PixelType.NEUMANN).all()
    assert (grids.pixel_type[~ring] == PixelType.INTERIOR).all()
    assert not grids.closed_h.any() and not grids.closed_v.any()


def test_pixel_frame_geometry():
    frame = PixelFrame((0, 0, 2, 1), 4, 2)
    assert frame.hx == pytest.approx(0.5)
    assert_allclose(frame.xs(), [0.25, 0.75, 1.25, 1.75])
    assert_allclose(frame.ys(), [0.75, 0.25])
    rows, cols = frame.crop((0.6, 0.1, 1.1, 0.4), margin=0)
    # Redondea hacia fuera: cubre el centro (0.75, 0.25) con hasta un píxel de holgura.
    assert (rows, cols) == (slice(0, 2), slice(0, 3))
    assert frame.crop((0, 0, 2, 1)) == (slice(0, 2), slice(0, 4))


# ============================================================
# FUENTES
# ============================================================

def test_poisson_band_balances(load_fixture):
    scene = load_fixture('poisson_band')
    source = poisson_source(scene, PixelFrame(scene.domain, 64, 64))
    assert np.abs(source).sum() > 0.0
    for k in range(3):
        assert abs(source[..., k].sum()) <= 1e-6 * np.abs(source[..., k]).sum()


def with_band(scene, band_width):
    data = json.loads(serialize_scene(scene))
    for curve in data['poisson_curves']:
        curve['band_width'] = band_width
    return parse_scene(json.dumps(data))


def test_sub_pixel_band_is_reported(load_fixture, raster_logs):
    scene = load_fixture('poisson_band')
    poisson_source(with_band(scene, 3.0), PixelFrame(scene.domain, 32, 32))
    assert not [r for r in raster_logs.records if 'narrower than a pixel' in r.getMessage()]
    poisson_source(with_band(scene, 0.5), PixelFrame(scene.domain, 32, 32))
    warnings = [r for r in raster_logs.records if 'narrower than a pixel' in r.getMessage()]
    assert len(warnings) == 1
    assert warnings[0].levelname == 'WARNING'
    assert "'crease'" in warnings[0].getMessage()


def test_poisson_band_stays_near_the_curve(load_fixture):
    scene = load_fixture('poisson_band')
    frame = PixelFrame(scene.domain, 64, 64)
    source = poisson_source(scene, frame)
    touched = np.abs(source[..., 0]) > 0
    rows, cols = np.nonzero(touched)
    ys = frame.ys()[rows]
    assert ys.min() > 0.3 and ys.max() < 0.7


def test_poisson_curve_bends_the_solution(load_fixture):
    scene = load_fixture('poisson_band', residual_target=1e-8)
    bent = render(scene, 48, 48)
    plain = parse_scene(json.dumps(dict(json.loads(serialize_scene(scene)), poisson_curves=[])))
    baseline = render(plain, 48, 48)
    assert np.abs(bent.image - baseline.image).max() > 1e-3


def two_mesh_overlap(scene):
    arrangement = arrange(scene)
    return next(p for p in arrangement.patches if len(p.mesh_weights) == 2)


@pytest.mark.parametrize('mode', ['zero', 'sum', 'average', 'first'])
def test_overlap_modes_scale_mesh_laplacians(load_fixture, mode):
    scene = load_fixture('two_meshes')
    patch = two_mesh_overlap(scene)
    frame = PixelFrame(scene.domain, 50, 50)
    grids = rasterize_masks(patch, RasterGrids.for_patch(patch, frame))
    rasterize_source(patch, grids, scene, mode=mode)

    updatable = grids.updatable
    points = grids.centers().reshape(grids.shape + (2,))[updatable]
    assert len(points) > 0
    lower = FergusonPatch.from_mesh(scene.mesh('lower'), 0, 0)
    upper = FergusonPatch.from_mesh(scene.mesh('upper'), 0, 0)
    a = np.array([color_laplacian(lower, p) for p in points])
    b = np.array([color_laplacian(upper, p) for p in points])
    expected = {'zero': 0.0 * a, 'sum': a + b, 'average': 0.5 * (a + b), 'first': b}[mode]
    assert_allclose(grids.source[updatable], expected, atol=1e-8)
    assert_allclose(grids.source[~updatable], 0.0)


# ============================================================
# RENDERS COMPLETOS
# ============================================================

def test_composite_partitions_the_image(load_fixture):
    result = render(load_fixture('square_circle'), 48, 48)
    assert (result.owner >= 0).all()
    claims = np.zeros((48, 48), dtype=int)
    for grids in result.buffers:
        claims[grids.rows, grids.cols] += grids.inside
    assert_array_equal(claims, 1)
    assert result.image.shape == (48, 48, 3)


def test_harmonic_disc_matches_analytic_solution():
    samples = np.linspace(0.0, 1.0, 257)
    spline = BezierSpline.from_points(circle_points(0, 0, 1))
    xs = spline.points(samples * spline.t1)[:, 0]
    disc = {
        'id': 'disc', 'points': circle_points(0, 0, 1),
        'left': {'stops': [[float(s), [float(x)] * 3] for s, x in zip(samples, xs)]},
        'right': 'neumann',
    }
    scene = scene_of([-1.05, -1.05, 1.05, 1.05], [disc], epsilon=1e-3, residual_target=1e-9, iterations=50000)
    result = render(scene, 256, 256)
    centers = result.frame.centers().reshape(256, 256, 2)
    r = np.hypot(centers[..., 0], centers[..., 1])
    disc = r <= 0.8
    error = np.abs(result.image[..., 0] - centers[..., 0])[disc]
    assert error.max() <= 5e-3


def test_neumann_side_isolates_the_background():
    def scene(color):
        disc = {'id': 'disc', 'points': circle_points(0.5, 0.55, 0.25), 'left': color, 'right': 'neumann'}
        stroke = {'id': 'stroke', 'points': [[0.05, 0.1], [0.35, 0.1], [0.65, 0.1], [0.95, 0.1]],
                  'left': [0.9, 0.5, 0.1], 'right': [0.1, 0.4, 0.7]}
        return scene_of([0, 0, 1, 1], [disc, stroke], residual_target=1e-8)

    first = render(scene([1, 0, 0]), 40, 40)
    second = render(scene([0, 1, 0]), 40, 40)
    background = first.owner[0, 0]
    mask = first.owner == background
    assert_array_equal(second.owner, first.owner)
    assert_array_equal(first.image[mask], second.image[mask])
    assert not np.allclose(first.image[~mask], second.image[~mask])


@pytest.mark.parametrize('inside', [
    {},
    {'poisson_curves': [{'id': 'inner', 'points': [[0.4, 0.55], [0.47, 0.6], [0.53, 0.5], [0.6, 0.55]],
                         'left': 0.02}]},
])
def test_neumann_disc_keeps_background_independent_of_its_interior(inside):
    def scene(left, extra):
        disc = {'id': 'disc', 'points': circle_points(0.5, 0.55, 0.25), 'left': left, 'right': 'neumann'}
        stroke = {'id': 'stroke', 'points': [[0.05, 0.1], [0.35, 0.1], [0.65, 0.1], [0.95, 0.1]],
                  'left': [0.9, 0.5, 0.1], 'right': [0.1, 0.4, 0.7]}
        return parse_scene(json.dumps({'format': 1, 'domain': [0, 0, 1, 1], 'settings': {'residual_target': 1e-8},
                                       'diffusion_curves': [disc, stroke], **extra}))

    plain = render(scene([1, 0, 0], {}), 40, 40)
    varied = render(scene({'stops': [[0, [0, 1, 0]], [0.5, [0, 0, 1]], [1, [0, 1, 0]]]}, inside), 40, 40)
    disc_owner = plain.owner[20, 20]
    background = plain.owner != disc_owner
    assert_array_equal(varied.owner, plain.owner)
    assert_allclose(varied.image[background], plain.image[background], atol=1e-9)
    assert np.abs(varied.image[~background] - plain.image[~background]).max() > 0.1


def _mesh_rmse(scene, size):
    result = render(scene.with_settings(residual_target=1e-10, iterations=100000), size, size)
    exact = MeshField(scene.gradient_meshes[0]).color_at(result.frame.centers()).reshape(size, size, 3)
    covered = ~np.isnan(exact[..., 0])
    assert covered.sum() > 0
    return float(np.sqrt(np.mean((result.image[covered] - exact[covered]) ** 2)))


def test_single_mesh_is_reproduced_by_its_laplacian(load_fixture):
    scene = load_fixture('single_mesh')
    coarse = _mesh_rmse(scene, 64)
    fine = _mesh_rmse(scene, 128)
    assert fine <= 1e-2
    assert fine <= 0.6 * coarse or fine <= 1e-6


def random_mesh_scene(seed):
    """Malla 1x1 sin pliegues: esquinas, tangentes y colores perturbados."""
    rng = np.random.default_rng(seed)
    corners = np.array([[[0.2, 0.2], [0.8, 0.2]], [[0.2, 0.8], [0.8, 0.8]]]) + rng.uniform(-0.05, 0.05, (2, 2, 2))
    nodes = [
        [
            {
                'position': corners[r, c].tolist(),
                'color': rng.uniform(0.1, 0.9, 3).tolist(),
                'du': ([0.6, 0.0] + rng.uniform(-0.1, 0.1, 2)).tolist(),
                'dv': ([0.0, 0.6] + rng.uniform(-0.1, 0.1, 2)).tolist(),
                'color_du': rng.uniform(-0.3, 0.3, 3).tolist(),
                'color_dv': rng.uniform(-0.3, 0.3, 3).tolist(),
            }
            for c in range(2)
        ]
        for r in range(2)
    ]
    return parse_scene(json.dumps({'format': 1, 'domain': [0, 0, 1, 1],
                                   'gradient_meshes': [{'id': 'tile', 'rows': 1, 'cols': 1, 'nodes': nodes}]}))


@pytest.mark.parametrize('seed', range(5))
def test_random_meshes_converge_to_their_interpolation(seed):
    scene = random_mesh_scene(seed)
    coarse = _mesh_rmse(scene, 128)
    fine = _mesh_rmse(scene, 256)
    assert fine <= 1e-2
    assert fine <= 0.6 * coarse or fine <= 1e-6


def test_snapped_gap_holds_its_color(load_fixture):
    result = render(load_fixture('gap', tau=0.02), 48, 48)
    centers = result.frame.centers().reshape(48, 48, 2)
    x, y = centers[..., 0], centers[..., 1]
    inside = (x > 0.3) & (x < 1.7) & (y > 0.3) & (y < 1.7)
    outside = (x < -0.2) | (x > 2.2) | (y < -0.2) | (y > 2.2)
    red = result.image[..., 0]
    assert red[inside].mean() - red[outside].mean() >= 0.1

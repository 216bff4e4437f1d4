import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from config.raster.exceptions import FoldedMesh, ParseError, SceneValidationError
from config.raster.geometry import discretize, signed_area
from config.raster.mesh_calculus import FergusonPatch, eval_surface
from config.raster.scene import (
    ColorRamp, LaplacianProfile, OverlapMode, input_curves, mesh_boundary_curves, parse_scene, serialize_scene,
)

LINE = [[0, 0], [1, 0], [2, 0], [3, 0]]


def document(**parts):
    data = {'format': 1, 'domain': [0, 0, 4, 4]}
    data.update(parts)
    return json.dumps(data)


def bow_tie():
    """Malla 1x1 con las esquinas superiores cambiadas: sus aristas izquierda y derecha se cruzan."""
    node = {'color': [0.5, 0.5, 0.5]}
    return {
        'id': 'bow', 'rows': 1, 'cols': 1,
        'nodes': [
            [dict(node, position=[0, 0], du=[1, 0], dv=[1, 1]), dict(node, position=[1, 0], du=[1, 0], dv=[-1, 1])],
            [dict(node, position=[1, 1], du=[-1, 0], dv=[1, 1]), dict(node, position=[0, 1], du=[-1, 0], dv=[-1, 1])],
        ],
    }


# ============================================================
# LECTURA
# ============================================================

def test_fixture_parses(load_fixture):
    scene = load_fixture('square_circle')
    assert scene.domain == (0.0, 0.0, 4.0, 4.0)
    assert [dc.id for dc in scene.diffusion_curves] == ['square', 'circle']
    assert scene.settings.tau == pytest.approx(1e-4)


def test_defaults_fill_missing_settings():
    scene = parse_scene(document(diffusion_curves=[{'id': 'a', 'points': LINE, 'left': 'neumann', 'right': [1, 0, 0]}]))
    assert scene.settings.epsilon == pytest.approx(0.04)
    assert scene.settings.overlap_mode == OverlapMode.AVERAGE
    assert scene.settings.tau == 0.0
    curve = scene.diffusion_curves[0]
    assert not curve.left.is_dirichlet
    assert_allclose(curve.right.ramp.sample([0.0, 1.0]), [[1, 0, 0], [1, 0, 0]])


def test_malformed_json_reports_position():
    with pytest.raises(ParseError) as info:
        parse_scene('{\n  "domain": [0, 0, 1, 1],\n  oops\n}')
    assert info.value.line == 3
    assert info.value.column > 0


@pytest.mark.parametrize('parts, field', [
    ({'domain': [0, 0, 0, 1]}, 'domain'),
    ({'diffusion_curves': [{'id': 'a', 'points': LINE[:3], 'left': 'neumann', 'right': 'neumann'}]},
     'diffusion_curves'),
    ({'diffusion_curves': [{'id': 'a', 'points': LINE, 'left': 'shiny', 'right': 'neumann'}]}, 'diffusion_curves'),
    ({'poisson_curves': [{'id': 'p', 'points': LINE}]}, 'poisson_curves'),
    ({'poisson_curves': [{'id': 'p', 'points': LINE, 'left': 1.0, 'right': 1.0}]}, 'poisson_curves'),
    ({'settings': {'overlap_mode': 'max'}}, 'settings'),
    ({'format': 2}, 'format'),
])
def test_invalid_documents_are_rejected(parts, field):
    with pytest.raises(SceneValidationError) as info:
        parse_scene(document(**parts))
    assert field in info.value.detail


def test_duplicate_ids_are_rejected():
    curve = {'id': 'a', 'points': LINE, 'left': 'neumann', 'right': 'neumann'}
    with pytest.raises(SceneValidationError):
        parse_scene(document(diffusion_curves=[curve, dict(curve)]))


def test_poisson_profile_is_negated_on_the_other_side():
    scene = parse_scene(document(poisson_curves=[{'id': 'p', 'points': LINE, 'right': {'linear': [0.5, [1, 2, 3]]}}]))
    curve = scene.poisson_curves[0]
    assert_allclose(curve.left_profile.sample([0.0, 1.0]), [[-0.5, -0.5, -0.5], [-1, -2, -3]])
    assert curve.band_width == pytest.approx(3.0)


def test_serialized_scene_parses_back_to_same_geometry(load_fixture):
    scene = load_fixture('poisson_band')
    again = parse_scene(serialize_scene(scene))
    assert again.domain == scene.domain
    assert again.settings == scene.settings
    assert_allclose(again.diffusion_curves[0].spline.control_points(), scene.diffusion_curves[0].spline.control_points())
    assert_allclose(again.poisson_curves[0].right_profile.sample([0.3]), scene.poisson_curves[0].right_profile.sample([0.3]))


def assert_same_condition(a, b):
    assert a.is_dirichlet == b.is_dirichlet
    if a.is_dirichlet:
        assert len(a.ramp.stops) == len(b.ramp.stops)
        for (t, c), (u, d) in zip(a.ramp.stops, b.ramp.stops):
            assert_allclose([t, *c], [u, *d], atol=1e-12)


def test_round_trip_keeps_every_field(load_fixture):
    meshes = json.loads(serialize_scene(load_fixture('two_meshes')))['gradient_meshes']
    meshes[0]['left'] = {'stops': [[0.0, [0.1, 0.2, 0.3]], [0.4, [0.7, 0.1, 0.0]], [1.0, [0.2, 0.9, 0.5]]]}
    scene = parse_scene(json.dumps({
        'format': 1,
        'domain': [-1.5, -0.25, 3.0, 2.75],
        'settings': {'tau': 3e-4, 'epsilon': 0.0125, 'overlap_mode': 'first', 'iterations': 1234,
                     'multigrid_levels': 3, 'residual_target': 2.5e-7},
        'gradient_meshes': meshes,
        'diffusion_curves': [
            {'id': 'ramp', 'points': [[0, 0], [0.3, 1.1], [0.7, -0.4], [1.0, 0.2]],
             'left': {'stops': [[0.0, [1, 0, 0]], [0.25, [0.5, 0.5, 0]], [1.0, [0, 0, 1]]]},
             'right': 'neumann'},
            {'id': 'flat', 'points': LINE, 'left': [0.3, 0.3, 0.3], 'right': [0.9, 0.0, 0.1]},
        ],
        'poisson_curves': [
            {'id': 'c', 'points': LINE, 'left': {'constant': [0.5, -0.25, 1e-3]}, 'band_width': 2.5},
            {'id': 'l', 'points': LINE, 'right': {'linear': [0.1, [1, 2, 3]]}},
            {'id': 'p', 'points': LINE, 'left': {'piecewise': [[0.0, 1.0], [0.3, [0, 2, 0]], [1.0, -1.0]]}},
        ],
    }))
    again = parse_scene(serialize_scene(scene))

    assert again.domain == scene.domain
    assert again.settings == scene.settings
    assert len(again.gradient_meshes) == len(scene.gradient_meshes)
    for a, b in zip(scene.gradient_meshes, again.gradient_meshes):
        assert (a.id, a.rows, a.cols, a.z_order) == (b.id, b.rows, b.cols, b.z_order)
        for name in ('positions', 'colors', 'du', 'dv', 'color_du', 'color_dv'):
            assert_allclose(getattr(b, name), getattr(a, name), atol=1e-12)
        assert (a.left is None) == (b.left is None)
        if a.left is not None:
            assert_same_condition(a.left, b.left)
    for a, b in zip(scene.diffusion_curves, again.diffusion_curves):
        assert a.id == b.id
        assert_allclose(b.spline.control_points(), a.spline.control_points(), atol=1e-12)
        assert_same_condition(a.left, b.left)
        assert_same_condition(a.right, b.right)
    for a, b in zip(scene.poisson_curves, again.poisson_curves):
        assert a.id == b.id
        assert b.band_width == pytest.approx(a.band_width, abs=1e-12)
        for side in ('left_profile', 'right_profile'):
            pa, pb = getattr(a, side), getattr(b, side)
            assert pa.kind == pb.kind
            assert_allclose([[t, *c] for t, c in pb.stops], [[t, *c] for t, c in pa.stops], atol=1e-12)


# ============================================================
# TIPOS
# ============================================================

def test_color_ramp_interpolates_and_clamps():
    ramp = ColorRamp(((0.25, (0, 0, 0)), (0.75, (1, 0.5, 0))))
    assert_allclose(ramp.sample([0.0, 0.5, 1.0]), [[0, 0, 0], [0.5, 0.25, 0], [1, 0.5, 0]])


def test_color_ramp_needs_increasing_stops():
    with pytest.raises(ValueError):
        ColorRamp(((0.5, (0, 0, 0)), (0.5, (1, 1, 1))))


def test_profile_negation():
    profile = LaplacianProfile.linear((1, 0, -1), (2, 2, 2))
    assert_allclose(profile.negated().sample([0.5]), [[-1.5, -1.0, -0.5]])


# ============================================================
# CURVAS DE BORDE DE MALLA
# ============================================================

def test_mesh_boundary_is_clockwise_with_mesh_colors_on_the_right(load_fixture):
    mesh = load_fixture('single_mesh').gradient_meshes[0]
    curves = mesh_boundary_curves(mesh, 0.005)
    assert len(curves) == 4
    ring = np.vstack([discretize(c.spline, 0.005).vertices[:-1] for c in curves])
    assert signed_area(np.vstack([ring, ring[:1]])) < 0.0
    assert all(c.right.is_dirichlet and c.right.mesh_id == 'tile' for c in curves)
    assert all(not c.left.is_dirichlet for c in curves)
    first = curves[0]
    assert_allclose(first.spline.start, mesh.positions[1, 1])
    assert_allclose(first.right.ramp.sample([0.0]), [mesh.colors[1, 1]])
    assert_allclose(first.right.ramp.sample([1.0]), [mesh.colors[0, 1]])


def test_mesh_boundary_colors_follow_the_patch_edges(load_fixture):
    mesh = load_fixture('single_mesh').gradient_meshes[0]
    patch = FergusonPatch.from_mesh(mesh, 0, 0)
    # (u, v) a lo largo de cada arista, en el orden horario del borde.
    edges = [lambda s: (1.0, 1.0 - s), lambda s: (1.0 - s, 0.0), lambda s: (0.0, s), lambda s: (s, 1.0)]
    curves = mesh_boundary_curves(mesh, 0.005)
    samples = np.linspace(0.0, 1.0, 41)
    for curve, uv in zip(curves, edges):
        exact = [eval_surface(patch, uv(s)) for s in samples]
        assert_allclose(curve.spline.points(samples * curve.spline.t1), [p for p, _ in exact], atol=1e-9)
        assert_allclose(curve.right.ramp.sample(curve.normalized(samples * curve.spline.t1)),
                        [c for _, c in exact], atol=1e-9)


def test_reversed_mesh_is_still_traversed_clockwise(load_fixture):
    mesh = load_fixture('single_mesh').gradient_meshes[0]
    flipped = type(mesh)(
        id='flipped', rows=1, cols=1,
        positions=mesh.positions[:, ::-1], colors=mesh.colors[:, ::-1],
        du=-mesh.du[:, ::-1], dv=mesh.dv[:, ::-1],
        color_du=-mesh.color_du[:, ::-1], color_dv=mesh.color_dv[:, ::-1],
    )
    curves = mesh_boundary_curves(flipped, 0.005)
    ring = np.vstack([discretize(c.spline, 0.005).vertices[:-1] for c in curves])
    assert signed_area(np.vstack([ring, ring[:1]])) < 0.0


def test_folded_mesh_is_rejected():
    scene = parse_scene(document(gradient_meshes=[bow_tie()]))
    with pytest.raises(FoldedMesh) as info:
        input_curves(scene)
    assert info.value.mesh_id == 'bow'
    assert len(info.value.edges) >= 2


def test_input_curves_list_meshes_before_diffusion_curves(load_fixture):
    scene = parse_scene(document(
        gradient_meshes=json.loads(serialize_scene(load_fixture('single_mesh')))['gradient_meshes'],
        diffusion_curves=[{'id': 'a', 'points': LINE, 'left': 'neumann', 'right': [1, 0, 0]}],
    ))
    kinds = [c.source.kind for c in input_curves(scene)]
    assert kinds == ['mesh'] * 4 + ['diffusion']

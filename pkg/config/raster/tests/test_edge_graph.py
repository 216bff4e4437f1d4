import numpy as np
import pytest
from numpy.testing import assert_allclose

from config.raster.edge_graph import build, check_planarity, connected_components, near_misses
from config.raster.geometry import BezierSpline, CubicBezier, intersect_polylines
from config.raster.scene import NEUMANN, InputBoundaryCurve, SourceRef, input_curves


def straight(name, *points):
    """Polilínea por los puntos como spline de cúbicas rectas."""
    segments = []
    for a, b in zip(points, points[1:]):
        a, b = np.asarray(a, float), np.asarray(b, float)
        segments.append(CubicBezier.from_array([a, a + (b - a) / 3, a + 2 * (b - a) / 3, b]))
    return InputBoundaryCurve(BezierSpline(segments), NEUMANN, NEUMANN, SourceRef('diffusion', name))


def positions(graph):
    return sorted(tuple(np.round(v.position, 9)) for v in graph.vertex_list())


def test_crossing_scene_counts(load_fixture):
    scene = load_fixture('crossing')
    graph = build(input_curves(scene), scene.settings.tau, scene.settings.epsilon)
    assert len(graph.vertices) == 7
    assert len(graph.edges) == 7
    assert (2.0, 1.0) in positions(graph)
    assert check_planarity(graph) == []


def test_crossing_splits_both_curves():
    graph = build([straight('h', (-1, 0), (1, 0)), straight('v', (0, -1), (0, 1))], 0.0, 0.01)
    assert len(graph.vertices) == 5
    assert len(graph.edges) == 4
    centre = [v for v in graph.vertex_list() if np.allclose(v.position, 0.0)]
    assert len(centre) == 1
    assert len(centre[0].incident) == 4


def test_edges_keep_their_curve_parameters():
    graph = build([straight('h', (-1, 0), (1, 0)), straight('v', (0, -1), (0, 1))], 0.0, 0.01)
    for edge in graph.edge_list():
        assert edge.ta < edge.tb
        assert_allclose(edge.point(edge.ta), graph.vertices[edge.v0].position, atol=1e-9)
        assert_allclose(edge.point(edge.tb), graph.vertices[edge.v1].position, atol=1e-9)


def test_shared_endpoints_merge():
    graph = build([straight('a', (0, 0), (1, 0)), straight('b', (1, 0), (1, 1))], 0.0, 0.01)
    assert len(graph.vertices) == 3
    assert len(graph.edges) == 2


def test_closed_curve_has_one_vertex():
    graph = build([straight('loop', (0, 0), (1, 0), (1, 1), (0, 1), (0, 0))], 0.0, 0.01)
    assert len(graph.vertices) == 1
    edge, = graph.edge_list()
    assert edge.v0 == edge.v1


def test_endpoint_snaps_onto_nearby_edge():
    graph = build([straight('a', (0, 0), (2, 0)), straight('b', (1, 1), (1, 0.05))], 0.01, 0.01)
    assert len(graph.edges) == 3
    assert (1.0, 0.0) in positions(graph)


def test_insertion_is_deterministic(load_fixture):
    scene = load_fixture('square_circle')
    curves = input_curves(scene)
    first = build(curves, scene.settings.tau, scene.settings.epsilon)
    second = build(curves, scene.settings.tau, scene.settings.epsilon)
    assert positions(first) == positions(second)
    assert [(e.v0, e.v1, e.curve_index) for e in first.edge_list()] == \
        [(e.v0, e.v1, e.curve_index) for e in second.edge_list()]


def hash_grid():
    return [
        straight('h0', (-1, 0), (3, 0)), straight('h1', (-1, 2.05), (3, 2.05)),
        straight('v0', (0, -1), (0, 3)), straight('v1', (2.05, -1), (2.05, 3)),
        straight('d', (-1, -0.3), (3, 2.9)),
    ]


def test_edges_conserve_the_input_arclength():
    graph = build(hash_grid(), 0.0, 0.01)
    assert len(graph.edges) > len(graph.curves)
    total_in = sum(poly.length() for poly in graph.curve_polylines)
    total_out = sum(edge.length() for edge in graph.edge_list()) + graph.discarded_length
    assert total_out == pytest.approx(total_in, rel=1e-6)


def test_candidates_cover_every_crossing_edge(load_fixture):
    scene = load_fixture('square_circle')
    graph = build(input_curves(scene) + hash_grid(), 0.0, scene.settings.epsilon)
    edges = graph.edge_list()
    for e in edges:
        near = {f.id for f in graph.candidates(e.bbox())}
        assert e.id in near
        for f in edges:
            if f.id != e.id and intersect_polylines(e.polyline, f.polyline):
                assert f.id in near


def test_candidates_follow_insertions():
    graph = build([straight('a', (0, 0), (1, 0))], 0.0, 0.01)
    assert [e.id for e in graph.candidates([5, 5, 6, 6])] == []
    graph.insert_curve(straight('b', (5, 5), (6, 6)))
    assert [e.source.id for e in graph.candidates([5, 5, 6, 6])] == ['b']


# ============================================================
# HUECOS
# ============================================================

@pytest.mark.parametrize('tau, components', [(0.0, 2), (0.02, 1)])
def test_gap_closes_only_with_snapping(load_fixture, tau, components):
    scene = load_fixture('gap', tau=tau)
    graph = build(input_curves(scene), scene.settings.tau, scene.settings.epsilon)
    assert len(connected_components(graph)) == components


def test_near_misses_report_the_gap(load_fixture):
    scene = load_fixture('gap')
    found = near_misses(input_curves(scene), 0.0, floor=0.15, epsilon=scene.settings.epsilon)
    assert len(found) >= 2
    assert {str(source) for source, _, _, _ in found} == {'diffusion:upper', 'diffusion:lower'}
    assert all(distance == pytest.approx(0.1, abs=1e-6) for *_, distance in found)


def test_near_misses_are_silent_once_snapped(load_fixture):
    scene = load_fixture('gap', tau=0.02)
    assert near_misses(input_curves(scene), 0.02, floor=0.15, epsilon=scene.settings.epsilon) == []

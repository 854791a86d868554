import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mptomo.geometry import (
    EMPTY,
    Bean,
    CShape,
    Disk,
    DiskComplement,
    Drop,
    Ellipse,
    HalfPlane,
    LShape,
    Mesh,
    Rectangle,
    Union,
    build_disk_mesh,
    element_mask,
    region_contains,
    region_from_json,
)


@pytest.fixture(scope="module")
def mesh():
    return build_disk_mesh(0.3, 0.02)


def test_boundary_on_circle(mesh):
    r = np.hypot(*mesh.vertices[mesh.boundary].T)
    assert np.max(np.abs(r - 0.3)) <= 1e-9


def test_coarse_mesh_positive_areas():
    m = build_disk_mesh(1.0, 0.5)
    assert np.all(m.areas > 0)
    m.validate()


def test_area_close_to_disk(mesh):
    assert abs(mesh.areas.sum() / (math.pi * 0.09) - 1.0) < 0.01


@pytest.mark.parametrize("h", [0.04, 0.03, 0.02, 0.015, 0.01])
def test_mesh_invariants(h):
    m = build_disk_mesh(0.3, h)
    m.validate()
    assert m.edge_lengths().max() <= 1.5 * h
    # each interior edge is shared by two triangles, boundary edges by one
    e = np.sort(np.concatenate([m.triangles[:, [0, 1]], m.triangles[:, [1, 2]], m.triangles[:, [2, 0]]]), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    assert set(counts) == {1, 2}
    assert np.sum(counts == 1) == len(m.boundary)


def test_boundary_loop_and_angles(mesh):
    edges = mesh.boundary_edges
    assert np.array_equal(edges[1:, 0], edges[:-1, 1])
    assert edges[-1, 1] == edges[0, 0]
    unwrapped = np.unwrap(mesh.boundary_angle)
    assert np.all(np.diff(unwrapped) > 0)
    assert unwrapped[-1] - unwrapped[0] < 2 * math.pi


@pytest.mark.parametrize("h", [0.1, 0.06, 0.05, 0.03, 0.02])
def test_refinement_halves_edges(h):
    # ring spacing is radius / ceil(radius / h), so halving h doubles the ring count here
    coarse = build_disk_mesh(0.3, h).edge_lengths().max()
    fine = build_disk_mesh(0.3, h / 2).edge_lengths().max()
    assert fine <= 0.5 * coarse * (1 + 1e-9)


def test_centroids_clear_of_cell_lattice():
    for h in (0.04, 0.02, 0.01):
        c = build_disk_mesh(0.3, h).centroids
        for s in (0.05, 0.1):
            assert np.min(np.abs(c / s - np.round(c / s))) * s > 1e-6


@pytest.mark.parametrize("args", [(0.0, 0.1), (-1.0, 0.1), (0.3, 0.0), (0.3, -0.02)])
def test_rejects_bad_input(args):
    with pytest.raises(ValueError):
        build_disk_mesh(*args)


def test_mesh_json_roundtrip(tmp_path):
    m = build_disk_mesh(0.3, 0.1)
    m.save(tmp_path / "m.json")
    data = json.loads((tmp_path / "m.json").read_text())
    assert {"vertices", "triangles", "boundary"} <= set(data)
    back = Mesh.load(tmp_path / "m.json")
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.triangles, m.triangles)
    assert np.array_equal(back.boundary, m.boundary)


def test_disk_contains_center():
    assert region_contains(Disk((0.0, 0.0), 1.0), (0.0, 0.0))


def test_half_plane_sign():
    p, n = np.array([0.1, -0.2]), np.array([0.6, 0.8])
    hp = HalfPlane(tuple(p), tuple(n))
    assert region_contains(hp, p + n)
    assert not region_contains(hp, p - n)


SHAPES = [
    Disk((0.05, 0.0), 0.1),
    Rectangle((0.0, 0.05), 0.15, 0.1, 0.3),
    Ellipse((-0.05, 0.05), (0.12, 0.06), 0.5),
    CShape((0.0, 0.0), 0.08, 0.16, math.pi / 2),
    LShape((-0.1, -0.1), (0.15, 0.15), 0.05),
    Drop((0.0, 0.05), 0.1),
    Bean((0.02, -0.03), 0.08),
    HalfPlane((0.1, 0.0), (1.0, 0.0)),
    DiskComplement((0.0, 0.0), 0.2),
]

points = st.tuples(st.floats(-0.35, 0.35), st.floats(-0.35, 0.35))


@settings(max_examples=200, deadline=None)
@given(a=st.sampled_from(SHAPES), b=st.sampled_from(SHAPES), p=points)
def test_union_is_or(a, b, p):
    assert region_contains(Union((a, b)), p) == (region_contains(a, p) or region_contains(b, p))


@settings(max_examples=100, deadline=None)
@given(a=st.sampled_from(SHAPES), p=points)
def test_union_with_empty(a, p):
    assert region_contains(Union((a, EMPTY)), p) == region_contains(a, p)
    assert not region_contains(EMPTY, p)


def test_union_masks_or(mesh):
    for a, b in zip(SHAPES, SHAPES[1:]):
        assert np.array_equal(element_mask(mesh, Union((a, b))), element_mask(mesh, a) | element_mask(mesh, b))


def test_element_mask_trivial(mesh):
    assert not element_mask(mesh, EMPTY).any()
    assert element_mask(mesh, Disk((0.0, 0.0), 0.6)).all()
    assert len(element_mask(mesh, SHAPES[0])) == mesh.n_triangles


def test_element_mask_disk_area(mesh):
    area = mesh.areas[element_mask(mesh, Disk((0.0, 0.0), 0.1))].sum()
    assert abs(area / (math.pi * 0.01) - 1.0) < 0.05


def test_shape_areas_against_analytic():
    # fine raster estimate of each closed shape's area
    g = np.linspace(-0.35, 0.35, 1401)
    x, y = np.meshgrid(g, g)
    pts = np.stack([x, y], -1)
    cell = (g[1] - g[0]) ** 2
    expected = {
        0: math.pi * 0.01,
        1: 0.015,
        2: math.pi * 0.12 * 0.06,
        3: 0.75 * math.pi * (0.16**2 - 0.08**2),
        4: 2 * 0.15 * 0.05 - 0.05**2,
    }
    for i, area in expected.items():
        est = SHAPES[i].contains(pts).sum() * cell
        assert abs(est / area - 1) < 0.01, i


def test_c_shape_gap_faces_positive_x():
    c = SHAPES[3]
    assert not region_contains(c, (0.12, 0.0))
    assert region_contains(c, (-0.12, 0.0))
    assert region_contains(c, (0.0, 0.12))


def test_drop_and_bean_are_bounded_and_nonempty():
    g = np.linspace(-0.35, 0.35, 401)
    pts = np.stack(np.meshgrid(g, g), -1)
    for shape in (SHAPES[5], SHAPES[6]):
        inside = shape.contains(pts)
        assert inside.any()
        assert not inside[0].any() and not inside[-1].any()


@pytest.mark.parametrize("shape", SHAPES + [Union((SHAPES[0], SHAPES[1])), EMPTY])
def test_region_json_roundtrip(shape):
    back = region_from_json(json.loads(json.dumps(shape.to_json())))
    assert back == shape


def test_region_json_aliases():
    assert region_from_json({"type": "circle", "center": [0, 0], "radius": 1}) == Disk((0, 0), 1)
    assert region_from_json(None) == EMPTY
    with pytest.raises(ValueError):
        region_from_json({"type": "hexagon"})

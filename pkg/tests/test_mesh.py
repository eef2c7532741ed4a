import numpy as np
import pytest

from aoed.errors import GeometryError, PointLocationError
from aoed.mesh import (
    Mesh,
    build_structured_mesh,
    point_locate,
    read_mesh_file,
    write_mesh_file,
)

HOLES = ((0.25, 0.5, 0.15, 0.4), (0.6, 0.85, 0.6, 0.85))


def test_plain_square_counts():
    mesh = build_structured_mesh(8, holes=())
    assert mesh.n_nodes == 81
    assert mesh.n_triangles == 128


def test_triangle_areas_positive_and_sum_to_domain():
    mesh = build_structured_mesh(8, holes=())
    areas = mesh.triangle_areas()
    assert np.all(areas > 0)
    assert np.isclose(areas.sum(), 1.0, rtol=0, atol=1e-14)


def test_hole_cutout_area_is_conservative_and_mesh_scale_accurate():
    # cells overlapping a hole are dropped and the ragged ring is snapped
    # onto the hole boundary, so the cutout is exact up to O(h) slivers
    mesh = build_structured_mesh(20, holes=HOLES)
    target = 1.0 - 2 * 0.25 * 0.25
    total = mesh.triangle_areas().sum()
    assert target - 0.03 < total <= target + 1e-12


def test_validate_accepts_default_mesh():
    mesh = build_structured_mesh(12, holes=HOLES)
    mesh.validate()


def test_validate_rejects_corrupted_connectivity():
    mesh = build_structured_mesh(4, holes=())
    bad = Mesh(
        nodes=mesh.nodes,
        triangles=mesh.triangles.copy(),
        boundary_edges=mesh.boundary_edges,
        boundary_labels=mesh.boundary_labels,
        holes=mesh.holes,
    )
    bad.triangles[0] = [0, 0, 1]
    with pytest.raises(GeometryError):
        bad.validate()


def test_point_locate_interpolates_linear_functions_exactly():
    mesh = build_structured_mesh(9, holes=())
    pts = np.array([[0.123, 0.456], [0.9, 0.05], [0.5, 0.5]])
    tri, bary = point_locate(mesh, pts)
    nodal = 2.0 * mesh.nodes[:, 0] - 3.0 * mesh.nodes[:, 1] + 0.25
    interp = np.einsum("pk,pk->p", nodal[mesh.triangles[tri]], bary)
    expect = 2.0 * pts[:, 0] - 3.0 * pts[:, 1] + 0.25
    assert np.allclose(interp, expect, atol=1e-12)


def test_point_locate_rejects_points_in_holes():
    mesh = build_structured_mesh(20, holes=HOLES)
    with pytest.raises(PointLocationError):
        point_locate(mesh, np.array([[0.375, 0.275]]))  # center of first hole


def test_point_locate_rejects_points_outside_domain():
    mesh = build_structured_mesh(8, holes=())
    with pytest.raises(PointLocationError):
        point_locate(mesh, np.array([[1.25, 0.5]]))


def test_mesh_file_roundtrip(tmp_path):
    mesh = build_structured_mesh(7, holes=HOLES)
    path = tmp_path / "mesh.txt"
    write_mesh_file(mesh, path)
    back = read_mesh_file(path, holes=HOLES)
    assert np.allclose(back.nodes, mesh.nodes)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.boundary_edges, mesh.boundary_edges)


def test_degenerate_hole_rejected():
    with pytest.raises(GeometryError):
        build_structured_mesh(8, holes=((0.5, 0.4, 0.1, 0.2),))

import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st

from purkinje_sph.geometry import (
    EmptyMeshError, LevelSetGrid, LevelSetRangeError, MeshParseError, SurfaceDistance,
    box_mesh, build_level_set, closest_points_on_triangles, icosphere, level_set_from_mesh,
    parse_mesh, plane_mesh, signed_distance, stl_ascii_bytes, stl_binary_bytes,
)


# --------------------------------------------------------------- oracles

def _seg_dist(p, a, b):
    ab = b - a
    t = np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0)
    return np.linalg.norm(p - (a + t * ab))


def point_triangle_distance(p, a, b, c):
    """Independent scalar oracle: plane distance if the projection lies inside, else edges."""
    n = np.cross(b - a, c - a)
    n /= np.linalg.norm(n)
    q = p - np.dot(p - a, n) * n
    # barycentric sign test of the projection
    s1 = np.dot(np.cross(b - a, q - a), n)
    s2 = np.dot(np.cross(c - b, q - b), n)
    s3 = np.dot(np.cross(a - c, q - c), n)
    if (s1 >= 0 and s2 >= 0 and s3 >= 0):
        return abs(np.dot(p - a, n))
    return min(_seg_dist(p, a, b), _seg_dist(p, b, c), _seg_dist(p, c, a))


# --------------------------------------------------------------- parsing

ONE_FACET = b"""solid t
  facet normal 0 0 1
    outer loop
      vertex 0 0 0
      vertex 1 0 0
      vertex 0 1 0
    endloop
  endfacet
endsolid t
"""


def test_ascii_stl_one_facet():
    soup = parse_mesh(ONE_FACET)
    assert len(soup) == 1
    assert np.allclose(soup.normals[0], (0, 0, 1))


def test_binary_stl_two_triangles():
    rec = struct.pack("<12fH", 0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0)
    rec2 = struct.pack("<12fH", 0, 0, 1, 1, 0, 0, 1, 1, 0, 0, 1, 0, 0)
    data = b"x" * 80 + struct.pack("<I", 2) + rec + rec2
    assert len(parse_mesh(data)) == 2


def test_zero_stored_normal_recomputed_from_winding():
    soup = parse_mesh(ONE_FACET.replace(b"normal 0 0 1", b"normal 0 0 0"))
    assert np.allclose(soup.normals[0], (0, 0, 1))


def test_truncated_binary_reports_offset():
    data = stl_binary_bytes(box_mesh((0, 0, 0), (1, 1, 1)))[:-30]
    with pytest.raises(MeshParseError) as exc:
        parse_mesh(data)
    assert exc.value.offset is not None and "offset" in str(exc.value)


def test_empty_and_garbage():
    with pytest.raises(EmptyMeshError):
        parse_mesh(b"solid x\nendsolid x\n")
    with pytest.raises(MeshParseError):
        parse_mesh(b"hello")


def test_degenerate_triangle_dropped():
    txt = ONE_FACET + ONE_FACET.replace(b"vertex 0 1 0", b"vertex 2 0 0")
    assert len(parse_mesh(txt)) == 1


def test_obj_and_roundtrips():
    box = box_mesh((0, 0, 0), (1, 2, 3))
    obj = "\n".join(
        [f"v {x} {y} {z}" for x, y, z in box.vertices.reshape(-1, 3)]
        + [f"f {3 * t + 1} {3 * t + 2} {3 * t + 3}" for t in range(len(box))]
    )
    for data in (obj.encode(), stl_ascii_bytes(box), stl_binary_bytes(box)):
        soup = parse_mesh(data)
        assert len(soup) == 12
        assert np.allclose(soup.vertices, box.vertices, atol=1e-6)


# ------------------------------------------------------- signed distance

def test_cube_centroid_and_outside_point():
    cube = box_mesh((0, 0, 0), (1, 1, 1))
    assert signed_distance((0.5, 0.5, 0.5), cube)[0] == pytest.approx(-0.5, abs=1e-14)
    assert signed_distance((2.0, 0.5, 0.5), cube)[0] == pytest.approx(1.0, abs=1e-14)


def test_icosphere_centre_against_facet_oracle():
    sphere = icosphere(10.0, 3)
    phi = signed_distance((0, 0, 0), sphere)[0]
    oracle = min(point_triangle_distance(np.zeros(3), *t) for t in sphere.vertices)
    assert phi == pytest.approx(-oracle, rel=1e-12)
    # bracket from the largest facet circumradius
    a, b, c = sphere.vertices[:, 0], sphere.vertices[:, 1], sphere.vertices[:, 2]
    edge = np.max(np.linalg.norm(np.stack([a - b, b - c, c - a]), axis=2))
    half_angle = np.arcsin(edge / np.sqrt(3) / 10.0)
    assert -10.0 <= phi <= -10.0 * np.cos(half_angle) + 1e-12


def test_nearest_equals_exhaustive_oracle(rng):
    sphere = icosphere(3.0, 2, center=(0.5, -0.2, 0.1))
    pts = rng.uniform(-5, 5, size=(80, 3))
    phi, _ = SurfaceDistance(sphere).signed_distance(pts)
    for p, f in zip(pts, phi):
        d = min(point_triangle_distance(p, *t) for t in sphere.vertices)
        inside = np.linalg.norm(p - (0.5, -0.2, 0.1)) < 3.0
        assert abs(f) == pytest.approx(d, rel=1e-9, abs=1e-12)
        if abs(d) > 0.2:
            assert (f < 0) == inside


@given(st.integers(0, 2**31 - 1))
def test_closest_point_feature_regions(seed):
    r = np.random.default_rng(seed)
    a, b, c = r.normal(size=(3, 3))
    p = r.normal(scale=3, size=(50, 3))
    cp, feat = closest_points_on_triangles(p, *(np.tile(v, (50, 1)) for v in (a, b, c)))
    for q, x, f in zip(p, cp, feat):
        assert np.linalg.norm(q - x) == pytest.approx(point_triangle_distance(q, a, b, c),
                                                      rel=1e-9, abs=1e-12)
        if f == 0:
            assert np.allclose(x, a)
        elif f == 1:
            assert np.allclose(x, b)
        elif f == 2:
            assert np.allclose(x, c)


# ------------------------------------------------------------ level set

def test_plane_grid_values_match_height():
    grid = build_level_set(plane_mesh(50.0), (-2, -2, -2), 0.5, (8, 8, 8))
    z = grid.cell_centers()[..., 2]
    assert np.all(np.abs(grid.phi - z) < 0.05)


def test_sphere_normals_radial_and_eikonal():
    sphere = icosphere(5.0, 4)
    grid = level_set_from_mesh(sphere, 0.5, 4)
    c = grid.cell_centers()
    near = np.abs(grid.phi) < 5 * grid.spacing
    radial = c[near] / np.linalg.norm(c[near], axis=1)[:, None]
    assert np.all(np.einsum("ij,ij->i", grid.normal[near], radial) > 0.99)
    g = np.linalg.norm(np.stack(np.gradient(grid.phi, grid.spacing), -1), axis=-1)
    band = np.abs(grid.phi) < 3 * grid.spacing
    assert np.all((g[band] > 0.8) & (g[band] < 1.2))


def test_grid_inside_large_box_is_negative():
    grid = build_level_set(box_mesh((-10, -10, -10), (10, 10, 10)), (-3, -3, -3), 1.0, (6, 6, 6))
    assert np.all(grid.phi < 0)


def test_sign_changes_once_along_ray():
    sphere = icosphere(4.0, 3)
    grid = level_set_from_mesh(sphere, 0.4, 4)
    t = np.linspace(0.0, 5.5, 200)
    ray = np.outer(t, np.array([0.3, 0.5, 0.81]) / np.linalg.norm([0.3, 0.5, 0.81]))
    phi = grid.interp_phi(ray)
    changes = np.nonzero(np.diff(np.sign(phi)))[0]
    assert len(changes) == 1
    assert abs(t[changes[0]] - 4.0) < grid.spacing


def _affine_grid():
    dims = (6, 5, 7)
    grid = LevelSetGrid(np.array([1.0, -2.0, 0.5]), 0.3, dims, None, None)
    c = grid.cell_centers()
    grid.phi = c[..., 0] + 2 * c[..., 1] + 3 * c[..., 2]
    grid.normal = np.broadcast_to(np.array([1, 2, 3]) / np.sqrt(14), dims + (3,)).copy()
    return grid


def test_interpolation_identities():
    grid = _affine_grid()
    c = grid.cell_centers()
    assert grid.interp_phi(c[2, 3, 4]) == grid.phi[2, 3, 4]
    mid = 0.5 * (c[1, 1, 1] + c[2, 1, 1])
    assert grid.interp_phi(mid) == pytest.approx(0.5 * (grid.phi[1, 1, 1] + grid.phi[2, 1, 1]),
                                                 abs=1e-13)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_trilinear_reproduces_affine_field(u, v, w):
    grid = _affine_grid()
    lo, hi = grid.query_bounds
    p = lo + np.array([u, v, w]) * (hi - lo)
    assert grid.interp_phi(p) == pytest.approx(p[0] + 2 * p[1] + 3 * p[2], abs=1e-12)
    assert np.linalg.norm(grid.interp_normal(p)) == pytest.approx(1.0, abs=1e-9)


def test_out_of_range_names_axis():
    grid = _affine_grid()
    lo, hi = grid.query_bounds
    p = 0.5 * (lo + hi)
    p[1] = hi[1] + 1.0
    with pytest.raises(LevelSetRangeError, match="axis y"):
        grid.interp_phi(p)


def test_too_small_grid_rejected():
    with pytest.raises(ValueError):
        build_level_set(plane_mesh(), (0, 0, 0), 1.0, (2, 5, 5))


def test_dump_load_roundtrip(tmp_path):
    grid = level_set_from_mesh(icosphere(2.0, 2), 0.5, 2)
    grid.dump(tmp_path / "g")
    back = LevelSetGrid.load(tmp_path / "g")
    assert np.array_equal(back.phi, grid.phi)
    assert np.array_equal(back.origin, grid.origin)
    assert back.dims == grid.dims and back.spacing == grid.spacing
    assert (tmp_path / "g.json").exists()

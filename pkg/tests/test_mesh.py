"""Triangle mesh container, topology checks, distances, and file formats."""

import numpy as np
import pytest

from solidangle import mesh as ms
from solidangle.errors import MeshFormatError

RIGHT = ms.TriMesh(np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0]]),
                   np.array([[0, 1, 2]]))


def two_tris():
    # shared edge 1-2, consistently oriented
    v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0], [1.0, 1, 0]])
    t = np.array([[0, 1, 2], [2, 1, 3]])
    return ms.TriMesh(v, t)


def test_trimesh_validation():
    with pytest.raises(MeshFormatError):
        ms.TriMesh(np.zeros((2, 3)), np.array([[0, 1, 2]]))
    with pytest.raises(MeshFormatError):
        ms.TriMesh(np.zeros((3, 3)), np.array([[0, 1, -1]]))
    e = ms.empty_mesh()
    assert e.n_vertices == 0 and e.n_triangles == 0
    assert ms.edge_census(e) == {"interior": 0, "boundary": 0, "nonmanifold": 0}
    assert ms.boundary_loops(e) == []
    assert ms.euler_characteristic(e) == 0
    assert ms.connected_components(e) == 0
    assert ms.total_area(e) == 0.0


def test_disk_topology():
    rings, segments = 5, 12
    d = ms.disk_mesh(rings=rings, segments=segments)
    assert d.n_vertices == 1 + rings * segments
    assert d.n_triangles == segments * (2 * rings - 1)
    census = ms.edge_census(d)
    assert census["boundary"] == segments
    assert census["nonmanifold"] == 0
    assert census["interior"] == segments * (3 * rings - 2)
    assert ms.orientation_consistent(d)
    assert ms.euler_characteristic(d) == 1
    assert ms.connected_components(d) == 1
    loops = ms.boundary_loops(d)
    assert len(loops) == 1
    assert len(loops[0]) == segments
    assert sorted(loops[0]) == list(range(1 + (rings - 1) * segments,
                                          1 + rings * segments))


def test_disk_boundary_orientation():
    # induced boundary runs counterclockwise seen from +z
    d = ms.disk_mesh(rings=2, segments=16)
    loop = ms.boundary_loops(d)[0]
    pts = d.vertices[loop]
    ang = np.unwrap(np.arctan2(pts[:, 1], pts[:, 0]))
    assert ang[-1] > ang[0]


def test_disk_area_is_polygon_area():
    rings, segments = 4, 64
    d = ms.disk_mesh(radius=1.5, rings=rings, segments=segments)
    polygon = 0.5 * segments * 1.5 ** 2 * np.sin(2 * np.pi / segments)
    assert ms.total_area(d) == pytest.approx(polygon, rel=1e-12)
    areas = ms.triangle_areas(d)
    assert areas.shape == (d.n_triangles,)
    assert np.all(areas > 0)


def test_disk_bump_shares_boundary():
    flat = ms.disk_mesh(rings=3, segments=24)
    bent = ms.disk_mesh(rings=3, segments=24, bump=lambda r: 0.3 * (1 - r ** 2))
    b = ms.boundary_loops(flat)[0]
    assert np.array_equal(flat.vertices[b], bent.vertices[b])
    assert ms.total_area(bent) > ms.total_area(flat)


def test_orientation_flip_detected():
    m = two_tris()
    assert ms.orientation_consistent(m)
    t = m.triangles.copy()
    t[1] = t[1, ::-1]
    assert not ms.orientation_consistent(ms.TriMesh(m.vertices, t))


def test_nonmanifold_edge_counted():
    v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0],
                  [0.0, 0, 1], [0.0, 0, -1]])
    t = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])
    census = ms.edge_census(ms.TriMesh(v, t))
    assert census["nonmanifold"] == 1


def test_boundary_branch_raises():
    # two triangles glued at a single vertex: four boundary edges meet there
    v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0],
                  [-1.0, 0, 0], [0.0, -1, 0]])
    t = np.array([[0, 1, 2], [0, 3, 4]])
    with pytest.raises(MeshFormatError):
        ms.boundary_loops(ms.TriMesh(v, t))


def test_components_and_loops_of_disjoint_union():
    a = ms.disk_mesh(rings=2, segments=8)
    b = ms.disk_mesh(rings=2, segments=8, center=(5.0, 0.0, 0.0))
    v = np.vstack([a.vertices, b.vertices])
    t = np.vstack([a.triangles, b.triangles + a.n_vertices])
    m = ms.TriMesh(v, t)
    assert ms.connected_components(m) == 2
    assert len(ms.boundary_loops(m)) == 2
    assert ms.euler_characteristic(m) == 2


def test_weld_duplicates():
    # the same two-triangle square, but each face carries private vertices
    v = np.array([[0.0, 0, 0], [1.0, 0, 0], [0.0, 1, 0],
                  [0.0, 1, 0], [1.0, 0, 0], [1.0, 1, 0]])
    v2 = v.copy()
    v2[3:] += 1e-12
    m = ms.TriMesh(v2, np.array([[0, 1, 2], [3, 4, 5]]))
    assert ms.edge_census(m)["interior"] == 0
    w = ms.weld_duplicate_vertices(m, 1e-9)
    assert w.n_vertices == 4
    assert w.n_triangles == 2
    assert ms.edge_census(w) == {"interior": 1, "boundary": 4,
                                 "nonmanifold": 0}
    assert ms.total_area(w) == pytest.approx(1.0, abs=1e-9)


def test_weld_drops_degenerate():
    v = np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0 + 1e-12, 0, 0]])
    m = ms.TriMesh(v, np.array([[0, 1, 2]]))
    w = ms.weld_duplicate_vertices(m, 1e-9)
    assert w.n_triangles == 0


def test_point_triangle_exact_regions():
    d = ms.point_triangle_distances
    # face projection
    assert d([0.2, 0.2, 0.7], RIGHT)[0] == pytest.approx(0.7, abs=1e-15)
    # vertex region
    assert d([-1.0, -1.0, 0.0], RIGHT)[0] == pytest.approx(np.sqrt(2),
                                                           abs=1e-15)
    # edge AB interior
    assert d([0.5, -1.0, 2.0], RIGHT)[0] == pytest.approx(np.sqrt(5),
                                                          abs=1e-15)
    # hypotenuse
    assert d([1.0, 1.0, 0.0], RIGHT)[0] == pytest.approx(np.sqrt(0.5),
                                                         abs=1e-14)


def test_point_triangle_degenerate():
    # collinear triangle: still the exact distance to the segment
    v = np.array([[0.0, 0, 0], [1.0, 1, 1], [2.0, 2, 2]])
    m = ms.TriMesh(v, np.array([[0, 1, 2]]))
    got = ms.point_triangle_distances([0.0, 0.0, 1.0], m)[0]
    assert got == pytest.approx(np.sqrt(2.0 / 3.0), abs=1e-14)
    # fully collapsed triangle: vertex distance
    p = ms.TriMesh(np.ones((3, 3)), np.array([[0, 1, 2]]))
    got = ms.point_triangle_distances([1.0, 1.0, 3.0], p)[0]
    assert got == pytest.approx(2.0, abs=1e-14)


def test_point_triangle_matches_sampled_oracle():
    rng = np.random.default_rng(42)
    grid = []
    n = 60
    for i in range(n + 1):
        for j in range(n + 1 - i):
            grid.append((i / n, j / n, (n - i - j) / n))
    bary = np.array(grid)
    for _ in range(30):
        tri = rng.normal(size=(3, 3))
        m = ms.TriMesh(tri, np.array([[0, 1, 2]]))
        x = rng.normal(size=3) * 1.5
        exact = ms.point_triangle_distances(x, m)[0]
        sampled = np.linalg.norm(bary @ tri - x, axis=1).min()
        assert exact <= sampled + 1e-12
        # dense barycentric grid overestimates by at most its spacing
        assert sampled - exact < 0.25 * np.abs(tri).max() / n * 3


def test_point_triangle_batch_shape():
    d = ms.disk_mesh(rings=3, segments=12)
    out = ms.point_triangle_distances([0.0, 0.0, 0.5], d)
    assert out.shape == (d.n_triangles,)
    assert out.min() == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("ext", ["obj", "ply"])
def test_roundtrip_exact(tmp_path, ext):
    d = ms.disk_mesh(rings=3, segments=20, center=(0.1, -0.2, 0.3))
    path = tmp_path / f"disk.{ext}"
    ms.export_mesh(d, path)
    back = ms.import_mesh(path)
    assert np.array_equal(back.vertices, d.vertices)
    assert np.array_equal(back.triangles, d.triangles)


def test_format_inference_and_override(tmp_path):
    d = two_tris()
    raw = tmp_path / "mesh.dat"
    with pytest.raises(MeshFormatError):
        ms.export_mesh(d, raw)
    ms.export_mesh(d, raw, fmt="ply")
    back = ms.import_mesh(raw, fmt="ply")
    assert np.array_equal(back.triangles, d.triangles)
    with pytest.raises(MeshFormatError):
        ms.export_mesh(d, tmp_path / "m.stl", fmt="stl")


def test_obj_slash_faces(tmp_path):
    p = tmp_path / "m.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1/1/1 2/2/2 3/3/3\n")
    m = ms.import_mesh(p)
    assert m.n_triangles == 1
    assert np.array_equal(m.triangles[0], [0, 1, 2])


def test_obj_rejects_quads_and_bad_vertices(tmp_path):
    p = tmp_path / "quad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(MeshFormatError):
        ms.import_mesh(p)
    p2 = tmp_path / "badv.obj"
    p2.write_text("v 0 0\n")
    with pytest.raises(MeshFormatError):
        ms.import_mesh(p2)


def test_ply_rejects_binary_and_quads(tmp_path):
    p = tmp_path / "bin.ply"
    p.write_text("ply\nformat binary_little_endian 1.0\nend_header\n")
    with pytest.raises(MeshFormatError):
        ms.import_mesh(p)
    q = tmp_path / "quad.ply"
    q.write_text("ply\nformat ascii 1.0\nelement vertex 4\n"
                 "property double x\nproperty double y\nproperty double z\n"
                 "element face 1\nproperty list uchar int vertex_indices\n"
                 "end_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n")
    with pytest.raises(MeshFormatError):
        ms.import_mesh(q)
    n = tmp_path / "not.ply"
    n.write_text("solid whatever\n")
    with pytest.raises(MeshFormatError):
        ms.import_mesh(n)

"""Triangle meshes: census, boundary structure, and ASCII export.

The mesh is a flat container (vertices, oriented triangles); everything
else is derived. Orientation is encoded by vertex order, so a consistent
mesh uses every interior edge once in each direction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MeshFormatError

FLOAT_FMT = "%.17g"


@dataclass
class TriMesh:
    """Oriented triangle mesh in R^3 (or any fixed ambient dimension)."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 3) \
            if np.size(self.vertices) else np.zeros((0, 3))
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3) \
            if np.size(self.triangles) else np.zeros((0, 3), dtype=np.int64)
        if len(self.triangles) and (self.triangles.min() < 0
                                    or self.triangles.max() >= len(self.vertices)):
            raise MeshFormatError("triangle indices out of range")

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)


def empty_mesh():
    return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def _directed_edges(mesh):
    t = mesh.triangles
    return np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], axis=0)


def edge_census(mesh):
    """Count undirected edge uses: {interior: 2, boundary: 1, nonmanifold: >2}."""
    if mesh.n_triangles == 0:
        return {"interior": 0, "boundary": 0, "nonmanifold": 0}
    e = np.sort(_directed_edges(mesh), axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return {
        "interior": int(np.count_nonzero(counts == 2)),
        "boundary": int(np.count_nonzero(counts == 1)),
        "nonmanifold": int(np.count_nonzero(counts > 2)),
    }


def orientation_consistent(mesh):
    """True when no directed edge repeats (interior edges oppose)."""
    if mesh.n_triangles == 0:
        return True
    e = _directed_edges(mesh)
    _, counts = np.unique(e, axis=0, return_counts=True)
    return bool(np.all(counts == 1))


def boundary_edges(mesh):
    """Directed boundary edges, oriented as induced by the triangles."""
    if mesh.n_triangles == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = _directed_edges(mesh)
    und = np.sort(e, axis=1)
    uniq, inv, counts = np.unique(und, axis=0, return_inverse=True,
                                  return_counts=True)
    return e[counts[inv] == 1]


def boundary_loops(mesh):
    """Boundary vertex loops in induced orientation.

    Raises MeshFormatError when the boundary is not a disjoint union of
    simple cycles (e.g. a vertex with two outgoing boundary edges).
    """
    edges = boundary_edges(mesh)
    if len(edges) == 0:
        return []
    nxt = {}
    for a, b in edges:
        a, b = int(a), int(b)
        if a in nxt:
            raise MeshFormatError(f"boundary branches at vertex {a}")
        nxt[a] = b
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop = [start]
        seen.add(start)
        cur = nxt[start]
        while cur != start:
            if cur in seen or cur not in nxt:
                raise MeshFormatError("boundary is not a union of simple cycles")
            loop.append(cur)
            seen.add(cur)
            cur = nxt[cur]
        loops.append(loop)
    return loops


def referenced_vertex_count(mesh):
    if mesh.n_triangles == 0:
        return 0
    return int(np.unique(mesh.triangles).size)


def euler_characteristic(mesh):
    """V - E + F over referenced vertices."""
    if mesh.n_triangles == 0:
        return 0
    e = np.sort(_directed_edges(mesh), axis=1)
    n_edges = np.unique(e, axis=0).shape[0]
    return referenced_vertex_count(mesh) - n_edges + mesh.n_triangles


def triangle_areas(mesh):
    v = mesh.vertices
    t = mesh.triangles
    if len(t) == 0:
        return np.zeros(0)
    a = v[t[:, 1]] - v[t[:, 0]]
    b = v[t[:, 2]] - v[t[:, 0]]
    return 0.5 * np.linalg.norm(np.cross(a, b), axis=1)


def total_area(mesh):
    return float(np.sum(triangle_areas(mesh)))


def component_labels(mesh):
    """Edge-connected component label per triangle (0-based, compacted)."""
    t = mesh.triangles
    if len(t) == 0:
        return np.zeros(0, dtype=np.int64)
    parent = np.arange(len(t))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    e = np.sort(_directed_edges(mesh), axis=1)
    tri_of = np.tile(np.arange(len(t)), 3)
    order = np.lexsort((e[:, 1], e[:, 0]))
    e_sorted = e[order]
    tri_sorted = tri_of[order]
    same = np.all(e_sorted[1:] == e_sorted[:-1], axis=1)
    for j in np.nonzero(same)[0]:
        ra, rb = find(tri_sorted[j]), find(tri_sorted[j + 1])
        if ra != rb:
            parent[ra] = rb
    roots = np.array([find(i) for i in range(len(t))])
    _, labels = np.unique(roots, return_inverse=True)
    return labels


def connected_components(mesh):
    """Number of edge-connected triangle components."""
    if len(mesh.triangles) == 0:
        return 0
    return int(component_labels(mesh).max()) + 1


def weld_duplicate_vertices(mesh, tol):
    """Merge vertices closer than tol; drops degenerate triangles."""
    v = mesh.vertices
    if len(v) == 0:
        return mesh
    key = np.round(v / max(tol, 1e-300)).astype(np.int64)
    _, first, inv = np.unique(key, axis=0, return_index=True,
                              return_inverse=True)
    new_v = v[first]
    tri = inv[mesh.triangles]
    ok = (tri[:, 0] != tri[:, 1]) & (tri[:, 1] != tri[:, 2]) \
        & (tri[:, 2] != tri[:, 0])
    return TriMesh(new_v, tri[ok])


def point_triangle_distances(x, mesh):
    """Euclidean distance from point x to every triangle of the mesh.

    Vectorized closest-point classification over vertex, edge, and face
    regions. Collinear triangles resolve through the edge regions; fully
    collapsed ones fall back to vertex distance.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    V = mesh.vertices
    T = mesh.triangles
    if len(T) == 0:
        return np.zeros(0)
    A, B, C = V[T[:, 0]], V[T[:, 1]], V[T[:, 2]]
    ab = B - A
    ac = C - A
    ap = x - A
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = x - B
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = x - C
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    closest = np.empty_like(A)
    done = np.zeros(len(T), dtype=bool)

    def settle(mask, value):
        use = mask & ~done
        closest[use] = value if np.ndim(value) == 1 else value[use]
        done[use] = True

    settle((d1 <= 0) & (d2 <= 0), A)
    settle((d3 >= 0) & (d4 <= d3), B)
    settle((d6 >= 0) & (d5 <= d6), C)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_ab = d1 / (d1 - d3)
        settle((vc <= 0) & (d1 >= 0) & (d3 <= 0), A + t_ab[:, None] * ab)
        t_ac = d2 / (d2 - d6)
        settle((vb <= 0) & (d2 >= 0) & (d6 <= 0), A + t_ac[:, None] * ac)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        settle((va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0),
               B + t_bc[:, None] * (C - B))
        denom = va + vb + vc
        v = vb / denom
        w = vc / denom
        face = A + v[:, None] * ab + w[:, None] * ac
    settle(np.ones(len(T), dtype=bool), face)
    dist = np.linalg.norm(x - closest, axis=-1)
    # degenerate triangles can produce nan through the face formula
    bad = ~np.isfinite(dist)
    if np.any(bad):
        dv = np.stack([np.linalg.norm(x - A, axis=-1),
                       np.linalg.norm(x - B, axis=-1),
                       np.linalg.norm(x - C, axis=-1)], axis=-1).min(-1)
        dist[bad] = dv[bad]
    return dist


# ------------------------------------------------------------------ file IO

def export_mesh(mesh, path, fmt=None):
    """Write ASCII OBJ or PLY with 17 significant digits."""
    fmt = _infer_format(path, fmt)
    if fmt == "obj":
        _write_obj(mesh, path)
    else:
        _write_ply(mesh, path)


def import_mesh(path, fmt=None):
    """Read a mesh written by export_mesh (ASCII OBJ or PLY)."""
    fmt = _infer_format(path, fmt)
    return _read_obj(path) if fmt == "obj" else _read_ply(path)


def _infer_format(path, fmt):
    if fmt is not None:
        fmt = fmt.lower()
        if fmt not in ("obj", "ply"):
            raise MeshFormatError(f"unsupported mesh format: {fmt}")
        return fmt
    p = str(path).lower()
    if p.endswith(".obj"):
        return "obj"
    if p.endswith(".ply"):
        return "ply"
    raise MeshFormatError(f"cannot infer mesh format from {path!r}")


def _write_obj(mesh, path):
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write("v " + " ".join(FLOAT_FMT % c for c in v) + "\n")
        for t in mesh.triangles:
            fh.write(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}\n")


def _read_obj(path):
    verts = []
    tris = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise MeshFormatError(f"bad vertex line: {line.strip()!r}")
                verts.append([float(c) for c in parts[1:4]])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise MeshFormatError("only triangle faces are supported")
                tris.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return TriMesh(np.array(verts, dtype=float).reshape(-1, 3),
                   np.array(tris, dtype=np.int64).reshape(-1, 3))


def _write_ply(mesh, path):
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {mesh.n_vertices}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write(f"element face {mesh.n_triangles}\n")
        fh.write("property list uchar int vertex_indices\n")
        fh.write("end_header\n")
        for v in mesh.vertices:
            fh.write(" ".join(FLOAT_FMT % c for c in v) + "\n")
        for t in mesh.triangles:
            fh.write(f"3 {t[0]} {t[1]} {t[2]}\n")


def _read_ply(path):
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise MeshFormatError("not a PLY file")
        n_v = n_f = 0
        while True:
            line = fh.readline()
            if not line:
                raise MeshFormatError("unterminated PLY header")
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format" and parts[1] != "ascii":
                raise MeshFormatError("only ascii PLY is supported")
            if parts[0] == "element":
                if parts[1] == "vertex":
                    n_v = int(parts[2])
                elif parts[1] == "face":
                    n_f = int(parts[2])
            if parts[0] == "end_header":
                break
        verts = np.array([[float(c) for c in fh.readline().split()[:3]]
                          for _ in range(n_v)], dtype=float).reshape(-1, 3)
        tris = []
        for _ in range(n_f):
            parts = fh.readline().split()
            if parts[0] != "3":
                raise MeshFormatError("only triangle faces are supported")
            tris.append([int(p) for p in parts[1:4]])
    return TriMesh(verts, np.array(tris, dtype=np.int64).reshape(-1, 3))


# ----------------------------------------------------- simple constructions

def disk_mesh(radius=1.0, rings=24, segments=48, center=(0.0, 0.0, 0.0),
              bump=None):
    """Flat triangulated disk in the xy-plane, counterclockwise from +z.

    bump, if given, is a callable r -> z displacement applied to interior
    rings only, so meshes with different bumps share the same boundary.
    """
    center = np.asarray(center, dtype=float)
    verts = [np.array([0.0, 0.0, 0.0])]
    for i in range(1, rings + 1):
        rho = radius * i / rings
        for j in range(segments):
            ang = 2.0 * np.pi * j / segments
            verts.append(np.array([rho * np.cos(ang), rho * np.sin(ang), 0.0]))
    verts = np.array(verts)
    if bump is not None:
        rho = np.linalg.norm(verts[:, :2], axis=1)
        inner = rho < radius * (1.0 - 1e-12)
        verts[inner, 2] += np.asarray([bump(r) for r in rho[inner]])
    verts = verts + center
    tris = []
    for j in range(segments):
        tris.append([0, 1 + j, 1 + (j + 1) % segments])
    for i in range(1, rings):
        base0 = 1 + (i - 1) * segments
        base1 = 1 + i * segments
        for j in range(segments):
            j2 = (j + 1) % segments
            tris.append([base0 + j, base1 + j, base1 + j2])
            tris.append([base0 + j, base1 + j2, base0 + j2])
    return TriMesh(verts, np.array(tris, dtype=np.int64))

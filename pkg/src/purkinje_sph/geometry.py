"""Triangle-mesh parsing and level-set (signed distance) representation.

Sign convention: phi < 0 inside the closed surface, phi > 0 outside.
Grid values live at cell centres ``origin + (index + 0.5) * spacing``.
"""

from dataclasses import dataclass
import itertools
import json
import logging
import re
import struct

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)


class MeshParseError(ValueError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class EmptyMeshError(ValueError):
    pass


class LevelSetRangeError(ValueError):
    pass


@dataclass
class TriangleSoup:
    vertices: np.ndarray  # (T, 3, 3)
    normals: np.ndarray  # (T, 3)

    def __len__(self):
        return len(self.vertices)

    @property
    def bounds(self):
        v = self.vertices.reshape(-1, 3)
        return v.min(axis=0), v.max(axis=0)

    @classmethod
    def from_indexed(cls, points, faces):
        points = np.asarray(points, dtype=float)
        faces = np.asarray(faces, dtype=np.int64)
        tri = points[faces]
        return _finalise(tri, np.zeros((len(tri), 3)))


def _winding_normals(tri):
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    return n


def _finalise(tri, stored):
    tri = np.asarray(tri, dtype=float).reshape(-1, 3, 3)
    stored = np.asarray(stored, dtype=float).reshape(-1, 3)
    if len(tri) == 0:
        raise EmptyMeshError("mesh contains no triangles")
    if not np.all(np.isfinite(tri)):
        raise MeshParseError("mesh contains non-finite coordinates")
    wn = _winding_normals(tri)
    area2 = np.linalg.norm(wn, axis=1)
    scale = max(float(np.ptp(tri.reshape(-1, 3), axis=0).max()), 1e-300)
    degenerate = area2 <= 1e-14 * scale * scale
    if np.any(degenerate):
        log.warning("dropping %d degenerate triangle(s)", int(degenerate.sum()))
        tri, stored, wn, area2 = tri[~degenerate], stored[~degenerate], wn[~degenerate], area2[~degenerate]
    if len(tri) == 0:
        raise EmptyMeshError("mesh contains no non-degenerate triangles")
    slen = np.linalg.norm(stored, axis=1)
    normals = np.where(
        (slen > 0)[:, None], stored / np.where(slen > 0, slen, 1.0)[:, None], wn / area2[:, None]
    )
    return TriangleSoup(tri, normals)


# ---------------------------------------------------------------- parsing

_FLOAT = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"


def parse_mesh(data: bytes) -> TriangleSoup:
    """Parse ASCII/binary STL or OBJ-style vertex/face text."""
    if isinstance(data, str):
        data = data.encode()
    head = data[:512].lstrip().lower()
    if len(data) >= 84:
        count = struct.unpack_from("<I", data, 80)[0]
        if 84 + 50 * count == len(data) and not (
            head.startswith(b"solid") and b"facet" in data[: 84 + 200].lower() and count == 0
        ):
            return _parse_binary_stl(data)
    if head.startswith(b"solid"):
        return _parse_ascii_stl(data)
    if re.search(rb"(?m)^\s*v\s", data):
        return _parse_obj(data)
    if len(data) >= 84:
        count = struct.unpack_from("<I", data, 80)[0]
        need = 84 + 50 * count
        if len(data) < need:
            last_full = 84 + 50 * ((len(data) - 84) // 50)
            raise MeshParseError(
                f"truncated binary STL: header declares {count} triangles, "
                f"needs {need} bytes, got {len(data)}",
                offset=last_full,
            )
        raise MeshParseError(f"binary STL has {len(data) - need} trailing bytes", offset=need)
    raise MeshParseError("unrecognised mesh format", offset=0)


def _parse_binary_stl(data):
    count = struct.unpack_from("<I", data, 80)[0]
    if count == 0:
        raise EmptyMeshError("binary STL declares zero triangles")
    rec = np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    arr = np.frombuffer(data, dtype=rec, count=count, offset=84)
    return _finalise(arr["v"].astype(float), arr["n"].astype(float))


def _parse_ascii_stl(data):
    text = data.decode("ascii", errors="replace")
    tris, norms = [], []
    facet_re = re.compile(r"facet\s+normal\s+(\S+)\s+(\S+)\s+(\S+)", re.I)
    vert_re = re.compile(r"vertex\s+(\S+)\s+(\S+)\s+(\S+)", re.I)
    pos = 0
    while True:
        m = facet_re.search(text, pos)
        if m is None:
            break
        try:
            n = [float(x) for x in m.groups()]
        except ValueError:
            raise MeshParseError("malformed facet normal", offset=m.start()) from None
        end = text.find("endfacet", m.end())
        if end < 0:
            raise MeshParseError("facet without endfacet", offset=m.start())
        verts = vert_re.findall(text, m.end(), end)
        if len(verts) != 3:
            raise MeshParseError(f"facet has {len(verts)} vertices, expected 3", offset=m.start())
        try:
            tris.append([[float(c) for c in v] for v in verts])
        except ValueError:
            raise MeshParseError("malformed vertex coordinate", offset=m.start()) from None
        norms.append(n)
        pos = end + len("endfacet")
    if not tris:
        if "endsolid" not in text.lower():
            raise MeshParseError("truncated ASCII STL", offset=len(data))
        raise EmptyMeshError("ASCII STL contains no facets")
    return _finalise(np.array(tris), np.array(norms))


def _parse_obj(data):
    points, faces = [], []
    offset = 0
    for line in data.splitlines(keepends=True):
        parts = line.split()
        if parts and parts[0] == b"v":
            try:
                points.append([float(x) for x in parts[1:4]])
            except ValueError:
                raise MeshParseError("malformed vertex line", offset=offset) from None
            if len(points[-1]) != 3:
                raise MeshParseError("vertex line needs three coordinates", offset=offset)
        elif parts and parts[0] == b"f":
            try:
                idx = [int(p.split(b"/")[0]) for p in parts[1:]]
            except ValueError:
                raise MeshParseError("malformed face line", offset=offset) from None
            if len(idx) < 3:
                raise MeshParseError("face needs at least three vertices", offset=offset)
            idx = [i - 1 if i > 0 else len(points) + i for i in idx]
            if min(idx) < 0 or max(idx) >= len(points):
                raise MeshParseError("face references an undefined vertex", offset=offset)
            for k in range(1, len(idx) - 1):
                faces.append((idx[0], idx[k], idx[k + 1]))
        offset += len(line)
    if not faces:
        raise EmptyMeshError("OBJ data contains no faces")
    return TriangleSoup.from_indexed(points, faces)


def stl_ascii_bytes(soup: TriangleSoup, name="mesh") -> bytes:
    out = [f"solid {name}"]
    for tri, n in zip(soup.vertices, soup.normals):
        out.append(f"  facet normal {n[0]:.9e} {n[1]:.9e} {n[2]:.9e}")
        out.append("    outer loop")
        for v in tri:
            out.append(f"      vertex {v[0]:.9e} {v[1]:.9e} {v[2]:.9e}")
        out.append("    endloop")
        out.append("  endfacet")
    out.append(f"endsolid {name}")
    return ("\n".join(out) + "\n").encode()


def stl_binary_bytes(soup: TriangleSoup) -> bytes:
    rec = np.dtype([("n", "<f4", 3), ("v", "<f4", (3, 3)), ("attr", "<u2")])
    arr = np.zeros(len(soup), dtype=rec)
    arr["n"] = soup.normals
    arr["v"] = soup.vertices
    return b"\0" * 80 + struct.pack("<I", len(soup)) + arr.tobytes()


# ---------------------------------------------------------- mesh builders

def icosphere(radius=1.0, subdivisions=3, center=(0.0, 0.0, 0.0)) -> TriangleSoup:
    t = (1.0 + 5**0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    pts = np.array(verts) * radius + np.asarray(center, float)
    return TriangleSoup.from_indexed(pts, faces)


def ellipsoid_mesh(semi_axes, subdivisions=3, center=(0.0, 0.0, 0.0)) -> TriangleSoup:
    unit = icosphere(1.0, subdivisions)
    tri = unit.vertices * np.asarray(semi_axes, float) + np.asarray(center, float)
    return _finalise(tri, np.zeros((len(tri), 3)))


def box_mesh(lo, hi) -> TriangleSoup:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    c = np.array([[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])])
    # outward (counter-clockwise seen from outside) winding
    faces = [(0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5), (0, 4, 5), (0, 5, 1),
             (2, 3, 7), (2, 7, 6), (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3)]
    return TriangleSoup.from_indexed(c, faces)


def plane_mesh(half_width=100.0, z=0.0) -> TriangleSoup:
    w = half_width
    pts = [(-w, -w, z), (w, -w, z), (w, w, z), (-w, w, z)]
    return TriangleSoup.from_indexed(pts, [(0, 1, 2), (0, 2, 3)])


# ---------------------------------------------------------- signed distance

def closest_points_on_triangles(p, a, b, c):
    """Closest point on triangle (a, b, c) to p, row-wise.

    Returns the closest points and the feature hit: 0, 1, 2 for vertices
    a, b, c; 3, 4, 5 for edges ab, bc, ca; 6 for the face interior.
    """
    def dot(u, v):
        return np.einsum("ij,ij->i", u, v)

    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = dot(ab, ap), dot(ac, ap)
    bp = p - b
    d3, d4 = dot(ab, bp), dot(ac, bp)
    cp = p - c
    d5, d6 = dot(ab, cp), dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide="ignore", invalid="ignore"):
        conds = [
            (d1 <= 0) & (d2 <= 0),
            (d3 >= 0) & (d4 <= d3),
            (vc <= 0) & (d1 >= 0) & (d3 <= 0),
            (d6 >= 0) & (d5 <= d6),
            (vb <= 0) & (d2 >= 0) & (d6 <= 0),
            (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
        ]
        t_ab = d1 / (d1 - d3)
        t_ac = d2 / (d2 - d6)
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        denom = 1.0 / (va + vb + vc)
        # barycentric weights (v on ab, w on ac) of the closest point per region
        v = np.select(conds, [0.0, 1.0, t_ab, 0.0, 0.0, 1.0 - t_bc], vb * denom)
        w = np.select(conds, [0.0, 0.0, 0.0, 1.0, t_ac, t_bc], vc * denom)
    feat = np.select(conds, [0, 1, 3, 2, 5, 4], 6).astype(np.int8)
    out = a + v[:, None] * ab + w[:, None] * ac
    return out, feat


class SurfaceDistance:
    """Exact nearest-triangle queries with angle-weighted pseudo-normals.

    A k-d tree over triangle centroids supplies candidates; a candidate set is
    accepted only once the k-th centroid distance minus the largest centroid
    radius exceeds the best exact distance, so results equal a sweep over all
    triangles.
    """

    def __init__(self, soup: TriangleSoup):
        if len(soup) == 0:
            raise EmptyMeshError("empty triangle soup")
        self.soup = soup
        tri = soup.vertices
        self.a, self.b, self.c = tri[:, 0].copy(), tri[:, 1].copy(), tri[:, 2].copy()
        self.centroids = tri.mean(axis=1)
        self.radius = np.linalg.norm(tri - self.centroids[:, None, :], axis=2).max(axis=1)
        self.rmax = float(self.radius.max())
        self.tree = cKDTree(self.centroids)
        self._build_pseudo_normals()

    def _build_pseudo_normals(self):
        tri = self.soup.vertices
        flat = tri.reshape(-1, 3)
        scale = max(float(np.ptp(flat, axis=0).max()), 1e-12)
        key = np.round(flat / (scale * 1e-9)).astype(np.int64)
        _, vid = np.unique(key, axis=0, return_inverse=True)
        vid = vid.reshape(-1, 3)
        fn = _winding_normals(tri)
        fn /= np.linalg.norm(fn, axis=1)[:, None]
        self.face_normal = fn
        nv = vid.max() + 1
        vnorm = np.zeros((nv, 3))
        for k in range(3):
            e1 = tri[:, (k + 1) % 3] - tri[:, k]
            e2 = tri[:, (k + 2) % 3] - tri[:, k]
            cosang = np.einsum("ij,ij->i", e1, e2) / (
                np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
            )
            ang = np.arccos(np.clip(cosang, -1.0, 1.0))
            np.add.at(vnorm, vid[:, k], ang[:, None] * fn)
        self.vertex_normal = vnorm / np.maximum(np.linalg.norm(vnorm, axis=1), 1e-300)[:, None]
        edge_sum = {}
        for t in range(len(tri)):
            for k in range(3):
                e = (min(vid[t, k], vid[t, (k + 1) % 3]), max(vid[t, k], vid[t, (k + 1) % 3]))
                edge_sum[e] = edge_sum.get(e, 0.0) + fn[t]
        # edge order matches feature codes 3, 4, 5: ab, bc, ca
        en = np.empty((len(tri), 3, 3))
        for t in range(len(tri)):
            for k in range(3):
                e = (min(vid[t, k], vid[t, (k + 1) % 3]), max(vid[t, k], vid[t, (k + 1) % 3]))
                s = edge_sum[e]
                en[t, k] = s / np.linalg.norm(s) if np.linalg.norm(s) > 0 else fn[t]
        self.edge_normal = en
        self.vid = vid

    def _exact(self, p, t):
        cp, feat = closest_points_on_triangles(p, self.a[t], self.b[t], self.c[t])
        return cp, feat, np.linalg.norm(p - cp, axis=1)

    def nearest(self, points, chunk=4000):
        """Nearest triangle index, closest point and feature per query point."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = len(points)
        tri_id = np.empty(n, dtype=np.int64)
        closest = np.empty((n, 3))
        feature = np.empty(n, dtype=np.int8)
        dist = np.empty(n)
        for s in range(0, n, chunk):
            sl = slice(s, min(n, s + chunk))
            t, cp, f, d = self._nearest_block(points[sl])
            tri_id[sl], closest[sl], feature[sl], dist[sl] = t, cp, f, d
        return tri_id, closest, feature, dist

    def _nearest_block(self, pts, max_pairs=2_000_000):
        m = len(pts)
        # an upper bound from the triangle with the nearest centroid; any
        # triangle able to beat it has its centroid within ub + rmax
        _, first = self.tree.query(pts, k=1)
        ub = self._exact(pts, first)[2]
        lists = self.tree.query_ball_point(pts, ub + self.rmax, return_sorted=True)
        counts = np.fromiter((len(x) for x in lists), dtype=np.int64, count=m)
        tri = np.fromiter(itertools.chain.from_iterable(lists), dtype=np.int64, count=counts.sum())
        row = np.repeat(np.arange(m), counts)
        lb = np.linalg.norm(pts[row] - self.centroids[tri], axis=1) - self.radius[tri]
        keep = lb <= ub[row]
        tri, row = tri[keep], row[keep]
        d = np.empty(len(tri))
        for s in range(0, len(tri), max_pairs):
            sl = slice(s, s + max_pairs)
            d[sl] = self._exact(pts[row[sl]], tri[sl])[2]
        order = np.lexsort((tri, d, row))
        _, head = np.unique(row[order], return_index=True)
        best_t = tri[order[head]]
        cp, feat, dist = self._exact(pts, best_t)
        return best_t, cp, feat, dist

    def pseudo_normals(self, tri_id, feature):
        out = self.face_normal[tri_id].copy()
        vmask = feature <= 2
        if np.any(vmask):
            corner = feature[vmask].astype(np.int64)
            out[vmask] = self.vertex_normal[self.vid[tri_id[vmask], corner]]
        emask = (feature >= 3) & (feature <= 5)
        if np.any(emask):
            k = feature[emask].astype(np.int64) - 3
            out[emask] = self.edge_normal[tri_id[emask], k]
        return out

    def signed_distance(self, points):
        """Signed distance and the sign-determining surface normal per point."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        t, cp, f, d = self.nearest(points)
        n = self.pseudo_normals(t, f)
        s = np.sign(np.einsum("ij,ij->i", points - cp, n))
        return s * d, n


def signed_distance(point, soup: TriangleSoup, _cache={}):
    """Signed distance from ``point`` to the surface and the nearest normal."""
    key = id(soup)
    sd = _cache.get(key)
    if sd is None or sd.soup is not soup:
        _cache.clear()
        sd = _cache[key] = SurfaceDistance(soup)
    phi, n = sd.signed_distance(np.asarray(point, float).reshape(1, 3))
    return float(phi[0]), n[0]


def brute_force_signed_distance(points, soup: TriangleSoup):
    """Reference sweep over every triangle (test oracle)."""
    sd = SurfaceDistance(soup)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    ntri = len(soup)
    out = np.empty(len(points))
    for i, p in enumerate(points):
        t = np.arange(ntri)
        cp, feat, d = sd._exact(np.repeat(p[None], ntri, axis=0), t)
        j = int(np.argmin(d))
        n = sd.pseudo_normals(np.array([j]), feat[j : j + 1])[0]
        out[i] = np.sign(np.dot(p - cp[j], n)) * d[j]
    return out


# ---------------------------------------------------------- level-set grid

_EDGE_TOL = 1e-9  # cells; absorbs round-off for queries on the outermost centres

@dataclass
class LevelSetGrid:
    origin: np.ndarray
    spacing: float
    dims: tuple
    phi: np.ndarray  # (nx, ny, nz)
    normal: np.ndarray  # (nx, ny, nz, 3)

    def cell_centers(self):
        axes = [self.origin[a] + (np.arange(self.dims[a]) + 0.5) * self.spacing for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @property
    def query_bounds(self):
        lo = self.origin + 0.5 * self.spacing
        hi = self.origin + (np.asarray(self.dims) - 0.5) * self.spacing
        return lo, hi

    def _locate(self, point):
        p = np.asarray(point, dtype=float)
        if p.shape == (3,):
            s, o, dims = self.spacing, self.origin, self.dims
            u = [(p[0] - o[0]) / s - 0.5, (p[1] - o[1]) / s - 0.5, (p[2] - o[2]) / s - 0.5]
            if all(-_EDGE_TOL <= u[a] <= dims[a] - 1 + _EDGE_TOL for a in range(3)):
                u = [min(max(u[a], 0.0), dims[a] - 1.0) for a in range(3)]
                i = [min(int(u[a]), dims[a] - 2) for a in range(3)]
                return np.array(i), np.array([u[0] - i[0], u[1] - i[1], u[2] - i[2]])
        u = (p - self.origin) / self.spacing - 0.5
        dims = np.asarray(self.dims)
        bad = (u < -_EDGE_TOL) | (u > dims - 1 + _EDGE_TOL)
        if np.any(bad):
            axis = int(np.argmax(bad if bad.ndim == 1 else bad.any(axis=0)))
            raise LevelSetRangeError(
                f"query point {p.tolist()} outside level-set grid along axis "
                f"{'xyz'[axis]} (valid range {self.query_bounds[0][axis]:.6g}"
                f" .. {self.query_bounds[1][axis]:.6g})"
            )
        u = np.clip(u, 0.0, dims - 1.0)
        i = np.minimum(np.floor(u).astype(np.int64), dims - 2)
        return i, u - i

    def _blend(self, field, point):
        i, f = self._locate(point)
        if i.ndim == 1:
            fx, fy, fz = f
            gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
            w = np.array([gx * gy * gz, gx * gy * fz, gx * fy * gz, gx * fy * fz,
                          fx * gy * gz, fx * gy * fz, fx * fy * gz, fx * fy * fz])
            block = field[i[0] : i[0] + 2, i[1] : i[1] + 2, i[2] : i[2] + 2]
            return w @ block.reshape(8, -1) if field.ndim == 4 else w @ block.reshape(8)
        out = 0.0
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    w = (
                        (f[:, 0] if dx else 1 - f[:, 0])
                        * (f[:, 1] if dy else 1 - f[:, 1])
                        * (f[:, 2] if dz else 1 - f[:, 2])
                    )
                    val = field[i[:, 0] + dx, i[:, 1] + dy, i[:, 2] + dz]
                    out = out + (w[:, None] * val if val.ndim == 2 else w * val)
        return out

    def interp_phi(self, point):
        v = self._blend(self.phi, point)
        return float(v) if np.ndim(v) == 0 else v

    def interp_normal(self, point):
        n = self._blend(self.normal, point)
        norm = np.linalg.norm(n, axis=-1, keepdims=True)
        return n / np.where(norm > 0, norm, 1.0)

    def dump(self, path_prefix):
        """Write ``<prefix>.lsgrid`` (text header + float64 payload) and ``<prefix>.json``."""
        header = (
            f"origin {float(self.origin[0])!r} {float(self.origin[1])!r} "
            f"{float(self.origin[2])!r} spacing {float(self.spacing)!r} dims {self.dims[0]} {self.dims[1]} {self.dims[2]}\n"
        )
        with open(f"{path_prefix}.lsgrid", "wb") as fh:
            fh.write(header.encode())
            fh.write(np.ascontiguousarray(self.phi, dtype="<f8").tobytes())
        meta = {
            "origin_mm": [float(x) for x in self.origin],
            "spacing_mm": float(self.spacing),
            "dims": [int(d) for d in self.dims],
            "payload": "phi, float64 little-endian, row-major (x slowest, z fastest)",
            "phi_min_mm": float(self.phi.min()),
            "phi_max_mm": float(self.phi.max()),
            "sign_convention": "negative inside, positive outside",
        }
        with open(f"{path_prefix}.json", "w") as fh:
            json.dump(meta, fh, indent=2)

    @classmethod
    def load(cls, path_prefix):
        with open(f"{path_prefix}.lsgrid", "rb") as fh:
            header = fh.readline().decode().split()
            payload = fh.read()
        origin = np.array([float(x) for x in header[1:4]])
        spacing = float(header[5])
        dims = tuple(int(x) for x in header[7:10])
        phi = np.frombuffer(payload, dtype="<f8").reshape(dims).copy()
        return cls(origin, spacing, dims, phi, _normals_from_phi(phi, spacing))


def _normals_from_phi(phi, spacing):
    g = np.stack(np.gradient(phi, spacing), axis=-1)
    norm = np.linalg.norm(g, axis=-1, keepdims=True)
    return np.where(norm > 0, g / np.where(norm > 0, norm, 1.0), 0.0)


def grid_for(soup: TriangleSoup, spacing: float, padding: int = 4):
    """Origin and dims of a grid covering the mesh bounds plus ``padding`` cells."""
    lo, hi = soup.bounds
    origin = lo - padding * spacing
    dims = tuple(int(x) for x in np.ceil((hi - lo) / spacing).astype(int) + 2 * padding)
    return origin, dims


def build_level_set(soup: TriangleSoup, origin, spacing, dims) -> LevelSetGrid:
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 3:
        raise ValueError(f"level-set dims must all be >= 3, got {dims}")
    if not spacing > 0:
        raise ValueError("level-set spacing must be positive")
    origin = np.asarray(origin, dtype=float)
    grid = LevelSetGrid(origin, float(spacing), dims, None, None)
    centers = grid.cell_centers().reshape(-1, 3)
    phi, _ = SurfaceDistance(soup).signed_distance(centers)
    grid.phi = phi.reshape(dims)
    grid.normal = _normals_from_phi(grid.phi, spacing)
    return grid


def level_set_from_mesh(soup: TriangleSoup, spacing: float, padding: int = 4) -> LevelSetGrid:
    origin, dims = grid_for(soup, spacing, padding)
    return build_level_set(soup, origin, spacing, dims)

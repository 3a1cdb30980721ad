"""Cell-linked list for nearest-node and fixed-radius neighbour search.

The same structure serves two purposes: incremental insertion of network
nodes during growth (exact nearest-node queries with tag exclusion), and bulk
construction of particle pair lists within a cutoff radius.
"""

from functools import lru_cache
import itertools

import numpy as np


@lru_cache(maxsize=None)
def _ring_offsets(k: int) -> tuple:
    """Integer cell offsets with Chebyshev norm exactly ``k``."""
    if k == 0:
        return ((0, 0, 0),)
    rng = range(-k, k + 1)
    return tuple(
        o for o in itertools.product(rng, rng, rng) if max(abs(o[0]), abs(o[1]), abs(o[2])) == k
    )


_HALF_OFFSETS = [
    o for o in itertools.product((-1, 0, 1), repeat=3) if o > (0, 0, 0)
]


_FAR = np.iinfo(np.int64).max


class CellLinkedList:
    """Uniform hash grid of points.

    Cells are cubes of edge ``cell_size`` indexed by ``floor(x / cell_size)``;
    points may be inserted one at a time.  Every point carries an integer tag
    (the branch id during network growth) used for exclusion queries.
    """

    def __init__(self, cell_size: float, capacity: int = 1024):
        if not cell_size > 0:
            raise ValueError("cell_size must be positive")
        self.cell_size = float(cell_size)
        self._pos = np.empty((capacity, 3))
        self._tag = np.empty(capacity, dtype=np.int64)
        self._cell = np.empty((3, capacity), dtype=np.int64)
        self._n = 0
        self._cells: dict = {}

    @classmethod
    def from_points(cls, points, cell_size, tags=None):
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        cll = cls(cell_size, capacity=max(len(points), 16))
        tags = np.zeros(len(points), dtype=np.int64) if tags is None else np.asarray(tags)
        for p, t in zip(points, tags):
            cll.insert(p, int(t))
        return cll

    def __len__(self):
        return self._n

    @property
    def positions(self):
        return self._pos[: self._n]

    @property
    def tags(self):
        return self._tag[: self._n]

    def cell_of(self, p):
        s = self.cell_size
        return (int(np.floor(p[0] / s)), int(np.floor(p[1] / s)), int(np.floor(p[2] / s)))

    def insert(self, p, tag: int = 0) -> int:
        if self._n == len(self._pos):
            grow = len(self._pos) * 2
            self._pos = np.resize(self._pos, (grow, 3))
            self._tag = np.resize(self._tag, grow)
            cell = np.empty((3, grow), dtype=np.int64)
            cell[:, : self._n] = self._cell
            self._cell = cell
        idx = self._n
        c = self.cell_of(p)
        self._pos[idx] = p
        self._tag[idx] = tag
        self._cell[:, idx] = c
        self._n += 1
        self._cells.setdefault(c, []).append(idx)
        return idx

    def _ring_ids(self, c, k):
        cells = self._cells
        out = []
        for o in _ring_offsets(k):
            lst = cells.get((c[0] + o[0], c[1] + o[1], c[2] + o[2]))
            if lst:
                out.extend(lst)
        return out

    def _keep(self, ids, exclude):
        ids = np.asarray(ids, dtype=np.int64)
        if exclude and len(ids):
            tags = self._tag[ids]
            keep = np.ones(len(ids), dtype=bool)
            for t in exclude:
                keep &= tags != t
            ids = ids[keep]
        return ids

    def nearest_distances(self, points, exclude=(), center=None):
        """Exact distance from each query point to its nearest non-excluded node.

        Returns an array of distances (``inf`` where no eligible node exists)
        and the matching node ids (-1 where none).  Query points are expected
        to be clustered around ``center``.  Candidates are taken ring by ring
        in Chebyshev cell distance from the centre cell: a node ``k + 1`` rings
        away is at least ``k * cell_size - slack`` from every query point.
        """
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        if center is None:
            center = points.mean(axis=0)
        slack = float(np.max(np.linalg.norm(points - center, axis=1)))
        best = np.full(len(points), np.inf)
        best_id = np.full(len(points), -1, dtype=np.int64)
        n = self._n
        if n == 0:
            return best, best_id
        c = self.cell_of(center)
        cx, cy, cz = self._cell[:, :n]
        ring = np.maximum(np.maximum(np.abs(cx - c[0]), np.abs(cy - c[1])), np.abs(cz - c[2]))
        if exclude:
            tags = self._tag[:n]
            for t in exclude:
                ring[tags == t] = _FAR
        k = int(ring.min())
        if k == _FAR:
            return best, best_id
        self._update_best(points, np.flatnonzero(ring == k), best, best_id)
        # every node that could still be closer lies within this many rings
        k_all = int(np.floor((best.max() + slack) / self.cell_size)) + 1
        if k_all > k:
            self._update_best(points, np.flatnonzero((ring > k) & (ring <= k_all)), best, best_id)
        return best, best_id

    def _update_best(self, points, ids, best, best_id):
        if len(ids) == 0:
            return
        d = np.linalg.norm(points[:, None, :] - self._pos[ids][None, :, :], axis=2)
        j = np.argmin(d, axis=1)
        dmin = d[np.arange(len(points)), j]
        better = dmin < best
        best[better] = dmin[better]
        best_id[better] = ids[j[better]]

    def nearest(self, p, exclude=()):
        """Nearest non-excluded node to ``p`` as ``(id, distance)``; ``(-1, inf)`` if none."""
        d, i = self.nearest_distances(np.asarray(p, dtype=float)[None, :], exclude, center=p)
        return int(i[0]), float(d[0])

    def within(self, p, radius, exclude=()):
        """Ids of non-excluded nodes with ``|x - p| <= radius``."""
        p = np.asarray(p, dtype=float)
        rings = int(np.ceil(radius / self.cell_size))
        c = self.cell_of(p)
        ids = []
        for k in range(rings + 1):
            ids.extend(self._ring_ids(c, k))
        ids = self._keep(ids, exclude)
        if len(ids) == 0:
            return ids
        d = np.linalg.norm(self._pos[ids] - p, axis=1)
        return ids[d <= radius]


def pairs_within(points, cutoff, cell_size=None):
    """All unordered pairs ``(i, j)``, ``i < j``, with ``|x_i - x_j| < cutoff``.

    Vectorised cell-list sweep over the 13 forward neighbour cells plus the
    home cell.  Returns ``(i, j, r)`` with ``r`` the pair distance.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    cell_size = cutoff if cell_size is None else cell_size
    if cell_size < cutoff:
        raise ValueError("cell_size must not be smaller than the cutoff radius")
    if n < 2:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, np.empty(0)
    lo = points.min(axis=0)
    ijk = np.floor((points - lo) / cell_size).astype(np.int64) + 1
    dims = ijk.max(axis=0) + 2
    key = (ijk[:, 0] * dims[1] + ijk[:, 1]) * dims[2] + ijk[:, 2]
    order = np.argsort(key, kind="stable")
    skey = key[order]
    ucell, start, count = np.unique(skey, return_index=True, return_counts=True)
    out_i, out_j, out_r = [], [], []
    for off in [(0, 0, 0)] + _HALF_OFFSETS:
        shift = (off[0] * dims[1] + off[1]) * dims[2] + off[2]
        loc = np.searchsorted(ucell, ucell + shift)
        loc_c = np.minimum(loc, len(ucell) - 1)
        ok = (loc < len(ucell)) & (ucell[loc_c] == ucell + shift)
        a = np.nonzero(ok)[0]
        b = loc_c[ok]
        ca, cb = count[a], count[b]
        sizes = ca * cb
        total = int(sizes.sum())
        if total == 0:
            continue
        rep = np.repeat(np.arange(len(a)), sizes)
        first = np.repeat(np.cumsum(sizes) - sizes, sizes)
        k = np.arange(total) - first
        cb_rep = cb[rep]
        ia = order[start[a][rep] + k // cb_rep]
        ib = order[start[b][rep] + k % cb_rep]
        if off == (0, 0, 0):
            keep = ia < ib
            ia, ib = ia[keep], ib[keep]
        r = np.linalg.norm(points[ia] - points[ib], axis=1)
        keep = r < cutoff
        ia, ib, r = ia[keep], ib[keep], r[keep]
        swap = ia > ib
        ia[swap], ib[swap] = ib[swap], ia[swap].copy()
        out_i.append(ia)
        out_j.append(ib)
        out_r.append(r)
    if not out_i:
        empty = np.empty(0, dtype=np.int64)
        return empty, empty, np.empty(0)
    i = np.concatenate(out_i)
    j = np.concatenate(out_j)
    r = np.concatenate(out_r)
    srt = np.lexsort((j, i))
    return i[srt], j[srt], r[srt]


def brute_force_pairs(points, cutoff, block=512):
    """Reference all-pairs search in row blocks; O(n^2) time, for test-sized inputs."""
    points = np.asarray(points, dtype=float)
    out_i, out_j, out_d = [], [], []
    for start in range(0, len(points), block):
        rows = points[start:start + block]
        d = np.linalg.norm(rows[:, None, :] - points[None, :, :], axis=2)
        a, b = np.nonzero(d < cutoff)
        a_abs = a + start
        keep = b > a_abs
        out_i.append(a_abs[keep])
        out_j.append(b[keep])
        out_d.append(d[a[keep], b[keep]])
    return (np.concatenate(out_i).astype(np.int64), np.concatenate(out_j).astype(np.int64),
            np.concatenate(out_d))

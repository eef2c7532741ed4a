"""Triangulated unit-square domains with rectangular holes.

The domain is the unit square minus a set of axis-aligned rectangles
("buildings").  Meshes are structured right-triangle grids: cells that
overlap a hole are dropped and the ragged ring of nodes left behind is
snapped onto the hole boundary so the mesh conforms to the rectangle.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import GeometryError, PointLocationError

DEFAULT_HOLES = ((0.25, 0.5, 0.15, 0.4), (0.6, 0.85, 0.6, 0.85))


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle given by x and y extents."""

    x0: float
    x1: float
    y0: float
    y1: float

    def contains(self, x, y, pad=0.0):
        """Vectorized strict interior test, optionally padded outward."""
        return (
            (x > self.x0 - pad)
            & (x < self.x1 + pad)
            & (y > self.y0 - pad)
            & (y < self.y1 + pad)
        )

    def overlaps_cell(self, cx0, cx1, cy0, cy1):
        """True when the open rectangle and the cell share positive area."""
        return cx0 < self.x1 and cx1 > self.x0 and cy0 < self.y1 and cy1 > self.y0

    def nearest_boundary_point(self, x, y):
        """Closest point on the rectangle's boundary to (x, y)."""
        px = min(max(x, self.x0), self.x1)
        py = min(max(y, self.y0), self.y1)
        if self.x0 < px < self.x1 and self.y0 < py < self.y1:
            # interior point: project to the nearest of the four sides
            gaps = (px - self.x0, self.x1 - px, py - self.y0, self.y1 - py)
            side = int(np.argmin(gaps))
            if side == 0:
                px = self.x0
            elif side == 1:
                px = self.x1
            elif side == 2:
                py = self.y0
            else:
                py = self.y1
        return px, py

    def distance(self, x, y):
        dx = np.maximum(np.maximum(self.x0 - x, x - self.x1), 0.0)
        dy = np.maximum(np.maximum(self.y0 - y, y - self.y1), 0.0)
        return np.hypot(dx, dy)


def as_rects(holes):
    out = []
    for h in holes:
        out.append(h if isinstance(h, Rect) else Rect(*h))
    return out


@dataclass
class Mesh:
    """Linear triangle mesh.

    Attributes
    ----------
    nodes : (n, 2) float array
    triangles : (m, 3) int array, counterclockwise vertex indices
    boundary_edges : (e, 2) int array, each edge on the domain boundary
    boundary_labels : (e,) str array, 'outer' or 'building'
    holes : list of Rect removed from the unit square
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_labels: np.ndarray
    holes: list = field(default_factory=list)
    _tree: cKDTree = field(default=None, repr=False, compare=False)

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def triangle_areas(self):
        p = self.nodes[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def centroid_tree(self):
        if self._tree is None:
            cent = self.nodes[self.triangles].mean(axis=1)
            self._tree = cKDTree(cent)
        return self._tree

    def validate(self):
        """Raise GeometryError unless the mesh satisfies its invariants."""
        areas = self.triangle_areas()
        if np.any(areas <= 0.0):
            bad = int(np.argmin(areas))
            raise GeometryError(
                f"triangle {bad} has non-positive area {areas[bad]:.3e}"
            )
        counts = {}
        for tri in self.triangles:
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                key = (min(a, b), max(a, b))
                counts[key] = counts.get(key, 0) + 1
        if any(c > 2 for c in counts.values()):
            raise GeometryError("non-conforming mesh: an edge joins >2 triangles")
        used = np.zeros(self.n_nodes, dtype=bool)
        used[self.triangles.ravel()] = True
        if not used.all():
            raise GeometryError("mesh contains nodes not referenced by any triangle")
        x, y = self.nodes[:, 0], self.nodes[:, 1]
        for r in self.holes:
            inside = r.contains(x, y, pad=-1e-12)
            if inside.any():
                raise GeometryError(
                    f"{int(inside.sum())} nodes lie strictly inside hole {r}"
                )
        return True


def _check_holes(rects):
    for r in rects:
        if not (r.x0 < r.x1 and r.y0 < r.y1):
            raise GeometryError(f"hole {r} has non-positive extent")
        if r.x0 <= 0.0 or r.x1 >= 1.0 or r.y0 <= 0.0 or r.y1 >= 1.0:
            raise GeometryError(f"hole {r} touches the outer boundary")
    for i in range(len(rects)):
        for j in range(i + 1, len(rects)):
            a, b = rects[i], rects[j]
            if a.x0 < b.x1 and a.x1 > b.x0 and a.y0 < b.y1 and a.y1 > b.y0:
                raise GeometryError(f"holes {a} and {b} overlap")


def _extract_boundary(nodes, triangles, holes, tol=1e-9):
    counts = {}
    for tri in triangles:
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            key = (min(a, b), max(a, b))
            counts[key] = counts.get(key, 0) + 1
    edges = [e for e, c in counts.items() if c == 1]
    edges = np.array(sorted(edges), dtype=int) if edges else np.zeros((0, 2), int)
    labels = []
    for a, b in edges:
        mx, my = 0.5 * (nodes[a] + nodes[b])
        on_outer = (
            abs(mx) < tol or abs(mx - 1.0) < tol or abs(my) < tol or abs(my - 1.0) < tol
        )
        labels.append("outer" if on_outer else "building")
    return edges, np.array(labels, dtype=object)


def build_structured_mesh(resolution, holes=DEFAULT_HOLES):
    """Mesh the unit square minus holes with structured right triangles.

    Parameters
    ----------
    resolution : int
        Number of grid cells per side, at least 4.
    holes : iterable of (x0, x1, y0, y1) or Rect
        Rectangles removed from the domain; must lie strictly inside the
        square and must not overlap each other.

    Returns
    -------
    Mesh
    """
    if resolution < 4:
        raise GeometryError(f"resolution must be at least 4, got {resolution}")
    rects = as_rects(holes)
    _check_holes(rects)

    n_side = resolution + 1
    h = 1.0 / resolution
    xs = np.linspace(0.0, 1.0, n_side)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    def nid(i, j):
        return i * n_side + j

    triangles = []
    cut_cells = []
    for i in range(resolution):
        for j in range(resolution):
            cx0, cx1 = xs[i], xs[i + 1]
            cy0, cy1 = xs[j], xs[j + 1]
            if any(r.overlaps_cell(cx0, cx1, cy0, cy1) for r in rects):
                cut_cells.append((i, j))
                continue
            n00, n10 = nid(i, j), nid(i + 1, j)
            n01, n11 = nid(i, j + 1), nid(i + 1, j + 1)
            triangles.append((n00, n10, n11))
            triangles.append((n00, n11, n01))
    if not triangles:
        raise GeometryError("holes removed every cell; domain is empty")
    triangles = np.array(triangles, dtype=int)

    used = np.zeros(nodes.shape[0], dtype=bool)
    used[triangles.ravel()] = True

    # nodes on the ragged ring around each hole get pulled onto the hole
    # boundary so the mesh conforms to the rectangle
    ring = set()
    for i, j in cut_cells:
        for a, b in ((i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)):
            k = nid(a, b)
            if used[k]:
                ring.add(k)
    snapped = nodes.copy()
    for k in sorted(ring):
        x, y = nodes[k]
        dists = [r.distance(x, y) for r in rects]
        r = rects[int(np.argmin(dists))]
        if min(dists) > h * 1.0001:
            continue
        px, py = r.nearest_boundary_point(x, y)
        old = snapped[k].copy()
        snapped[k] = (px, py)
        touching = np.any(triangles == k, axis=1)
        p = snapped[triangles[touching]]
        areas = 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])
        )
        if np.any(areas < 1e-14):
            snapped[k] = old  # snap would flatten a kept triangle

    keep = np.flatnonzero(used)
    remap = -np.ones(nodes.shape[0], dtype=int)
    remap[keep] = np.arange(keep.size)
    nodes = snapped[keep]
    triangles = remap[triangles]

    edges, labels = _extract_boundary(nodes, triangles, rects)
    mesh = Mesh(nodes, triangles, edges, labels, rects)
    mesh.validate()
    return mesh


def point_locate(mesh, points, tol=1e-10):
    """Find containing triangles and barycentric weights for query points.

    Parameters
    ----------
    mesh : Mesh
    points : (k, 2) array or single (2,) point

    Returns
    -------
    (tri_idx, bary) : ((k,) int array, (k, 3) float array)

    Raises
    ------
    PointLocationError
        If a point falls inside a hole or outside the mesh.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    for r in mesh.holes:
        inside = r.contains(pts[:, 0], pts[:, 1], pad=-tol)
        if inside.any():
            k = int(np.flatnonzero(inside)[0])
            raise PointLocationError(
                f"point ({pts[k, 0]:.6g}, {pts[k, 1]:.6g}) lies inside a hole"
            )
    tree = mesh.centroid_tree()
    n_query = min(16, mesh.n_triangles)
    _, cand = tree.query(pts, k=n_query)
    cand = np.atleast_2d(cand)
    tri_idx = np.full(pts.shape[0], -1, dtype=int)
    bary = np.zeros((pts.shape[0], 3))

    def bary_of(t, xy):
        a, b, c = mesh.nodes[mesh.triangles[t]]
        mat = np.array([[b[0] - a[0], c[0] - a[0]], [b[1] - a[1], c[1] - a[1]]])
        rhs = np.array([xy[0] - a[0], xy[1] - a[1]])
        lam = np.linalg.solve(mat, rhs)
        return np.array([1.0 - lam[0] - lam[1], lam[0], lam[1]])

    for k, xy in enumerate(pts):
        found = False
        for t in cand[k]:
            lam = bary_of(int(t), xy)
            if lam.min() >= -tol:
                tri_idx[k] = int(t)
                bary[k] = np.clip(lam, 0.0, None)
                bary[k] /= bary[k].sum()
                found = True
                break
        if not found:  # rare: fall back to a full scan
            for t in range(mesh.n_triangles):
                lam = bary_of(t, xy)
                if lam.min() >= -tol:
                    tri_idx[k] = t
                    bary[k] = np.clip(lam, 0.0, None)
                    bary[k] /= bary[k].sum()
                    found = True
                    break
        if not found:
            raise PointLocationError(
                f"point ({xy[0]:.6g}, {xy[1]:.6g}) is outside the mesh"
            )
    return tri_idx, bary


def write_mesh_file(mesh, path):
    """Write the node/triangle listing: counts, then coordinates, then triples."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{mesh.n_nodes} {mesh.n_triangles}\n")
        for x, y in mesh.nodes:
            f.write(f"{x:.17g} {y:.17g}\n")
        for a, b, c in mesh.triangles:
            f.write(f"{a} {b} {c}\n")


def read_mesh_file(path, holes=()):
    """Read a mesh written by :func:`write_mesh_file`.

    Hole rectangles are not stored in the file; pass them explicitly when
    the caller needs hole-aware point location.
    """
    with open(path, "r", encoding="utf-8") as f:
        tokens = f.read().split()
    if len(tokens) < 2:
        raise GeometryError(f"mesh file {path} is truncated")
    n_nodes, n_tris = int(tokens[0]), int(tokens[1])
    need = 2 + 2 * n_nodes + 3 * n_tris
    if len(tokens) < need:
        raise GeometryError(f"mesh file {path} is truncated")
    vals = np.array(tokens[2 : 2 + 2 * n_nodes], dtype=float)
    nodes = vals.reshape(n_nodes, 2)
    tris = np.array(tokens[2 + 2 * n_nodes : need], dtype=int).reshape(n_tris, 3)
    if tris.min() < 0 or tris.max() >= n_nodes:
        raise GeometryError(f"mesh file {path} references nodes out of range")
    rects = as_rects(holes)
    edges, labels = _extract_boundary(nodes, tris, rects)
    mesh = Mesh(nodes, tris, edges, labels, rects)
    mesh.validate()
    return mesh

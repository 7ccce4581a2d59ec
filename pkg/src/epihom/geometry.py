"""Unit-cell and tiled meshes with a closed membrane curve.

The membrane is an ellipse (a circle when both semi-axes agree) inside the
square cell ``[0, L]^2``.  Triangles are tagged inner/outer and the vertices
on the membrane are duplicated, one copy per side, so a P1 field can jump
across it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.spatial import Delaunay, cKDTree

from .errors import GeometryError

INNER = 0
OUTER = 1

MIN_INTERFACE_EDGES = 16


@dataclass(frozen=True)
class CellGeometry:
    """Elliptic cell inside a square unit cell.

    ``phi`` rotates the cell with respect to the lattice axes.  ``offset`` moves
    the cell centre away from the middle of the unit cell.
    """

    cell_size: float = 2e-4
    a: float = 5e-5
    b: float = 5e-5
    phi: float = 0.0
    offset: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "offset", tuple(float(o) for o in self.offset))
        if not (self.a > 0 and self.b > 0 and self.cell_size > 0):
            raise GeometryError("invalid-geometry", "semi-axes and cell size must be positive")
        if not 0.0 <= self.phi < np.pi:
            raise GeometryError("invalid-geometry", f"lattice angle {self.phi} outside [0, pi)")

    @classmethod
    def circle(cls, radius, cell_size=2e-4, offset=(0.0, 0.0)):
        return cls(cell_size=cell_size, a=radius, b=radius, offset=offset)

    @classmethod
    def from_fraction(cls, volume_fraction, aspect_ratio=1.0, cell_size=2e-4, phi=0.0,
                      offset=(0.0, 0.0)):
        """Ellipse with ``a/b = aspect_ratio`` occupying ``volume_fraction`` of the cell."""
        if not 0.0 < volume_fraction < 1.0:
            raise GeometryError("invalid-geometry", f"volume fraction {volume_fraction} not in (0, 1)")
        if aspect_ratio <= 0:
            raise GeometryError("invalid-geometry", "aspect ratio must be positive")
        ab = volume_fraction * cell_size**2 / np.pi
        a = np.sqrt(ab * aspect_ratio)
        return cls(cell_size=cell_size, a=a, b=ab / a, phi=phi, offset=offset)

    @property
    def center(self):
        half = 0.5 * self.cell_size
        return np.array([half + self.offset[0], half + self.offset[1]])

    @property
    def volume_fraction(self):
        return np.pi * self.a * self.b / self.cell_size**2

    @property
    def is_circle(self):
        return self.a == self.b

    def half_extent(self):
        c, s = np.cos(self.phi), np.sin(self.phi)
        wx = np.sqrt((self.a * c) ** 2 + (self.b * s) ** 2)
        wy = np.sqrt((self.a * s) ** 2 + (self.b * c) ** 2)
        return np.array([wx, wy])

    def boundary_gap(self):
        """Smallest distance between the cell closure and the unit-cell boundary."""
        lo = self.center - self.half_extent()
        hi = self.center + self.half_extent()
        return float(min(lo.min(), (self.cell_size - hi).min()))

    def check_inside(self):
        if self.boundary_gap() <= 0.0:
            raise GeometryError("cell-intersects-boundary",
                                f"gap to the unit-cell boundary is {self.boundary_gap():.3e}")

    def points(self, theta):
        theta = np.asarray(theta, dtype=float)
        local = np.stack([self.a * np.cos(theta), self.b * np.sin(theta)], axis=-1)
        return local @ self._rotation().T + self.center

    def normals(self, theta):
        """Outward unit normals at parameter values ``theta``."""
        theta = np.asarray(theta, dtype=float)
        n = np.stack([self.b * np.cos(theta), self.a * np.sin(theta)], axis=-1)
        n /= np.linalg.norm(n, axis=-1, keepdims=True)
        return n @ self._rotation().T

    def speed(self, theta):
        return np.hypot(self.a * np.sin(theta), self.b * np.cos(theta))

    def curvature_radius(self, theta):
        return self.speed(theta) ** 3 / (self.a * self.b)

    def perimeter(self):
        theta = np.linspace(0.0, 2 * np.pi, 4097)
        return float(np.trapezoid(self.speed(theta), theta))

    def _rotation(self):
        c, s = np.cos(self.phi), np.sin(self.phi)
        return np.array([[c, -s], [s, c]])


@dataclass(eq=False)
class InterfaceMesh:
    """Triangulation with duplicated vertices along the membrane.

    ``iface_in[k]`` and ``iface_out[k]`` are the inner- and outer-side copies of
    membrane node ``k``; ``interface_edges`` index into these arrays and run
    counter-clockwise around each cell, so the outward normal of an edge
    ``(k, l)`` is the tangent rotated clockwise.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    tags: np.ndarray
    iface_in: np.ndarray
    iface_out: np.ndarray
    interface_edges: np.ndarray
    boundary_vertices: np.ndarray
    extent: float
    h: float
    cell_centers: np.ndarray = field(default_factory=lambda: np.zeros((1, 2)))
    iface_cell: np.ndarray | None = None
    grid_step: float | None = None

    def __post_init__(self):
        if self.iface_cell is None:
            self.iface_cell = np.zeros(len(self.iface_in), dtype=int)
        for name in ("vertices", "triangles", "tags", "iface_in", "iface_out",
                     "interface_edges", "boundary_vertices", "cell_centers", "iface_cell"):
            getattr(self, name).setflags(write=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_interface(self):
        return len(self.iface_in)

    @property
    def interface_pairs(self):
        return np.column_stack([self.iface_in, self.iface_out])

    @cached_property
    def triangle_areas(self):
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self):
        return float(self.triangle_areas.sum())

    @property
    def inner_area(self):
        return float(self.triangle_areas[self.tags == INNER].sum())

    @property
    def volume_fraction(self):
        return self.inner_area / self.area

    @cached_property
    def edge_vectors(self):
        p = self.vertices[self.iface_in]
        e = self.interface_edges
        return p[e[:, 1]] - p[e[:, 0]]

    @property
    def edge_lengths(self):
        return np.linalg.norm(self.edge_vectors, axis=1)

    @property
    def edge_normals(self):
        t = self.edge_vectors
        return np.column_stack([t[:, 1], -t[:, 0]]) / self.edge_lengths[:, None]

    @property
    def interface_length(self):
        return float(self.edge_lengths.sum())

    @cached_property
    def interface_weights(self):
        """Lumped (trapezoid) measure of the membrane patch around each node."""
        w = np.zeros(self.n_interface)
        half = 0.5 * self.edge_lengths
        np.add.at(w, self.interface_edges[:, 0], half)
        np.add.at(w, self.interface_edges[:, 1], half)
        return w

    @cached_property
    def normal_weights(self):
        """``sum_e |e|/2 n_e`` over the edges touching each node.

        Trapezoid quadrature of ``int_Gamma f n dS`` is ``normal_weights.T @ f``.
        """
        nw = np.zeros((self.n_interface, 2))
        half = 0.5 * self.edge_lengths[:, None] * self.edge_normals
        np.add.at(nw, self.interface_edges[:, 0], half)
        np.add.at(nw, self.interface_edges[:, 1], half)
        return nw

    @property
    def interface_points(self):
        return self.vertices[self.iface_in]

    def interface_angles(self):
        """Polar angle of each membrane node about its own cell centre."""
        d = self.interface_points - self.cell_centers[self.iface_cell]
        return np.arctan2(d[:, 1], d[:, 0])

    def vertex_integration_weights(self):
        """Weights ``w`` with ``w @ u`` equal to the exact integral of a P1 field."""
        w = np.zeros(self.n_vertices)
        third = self.triangle_areas / 3.0
        for j in range(3):
            np.add.at(w, self.triangles[:, j], third)
        return w

    def periodic_map(self):
        """Representative vertex for every vertex under left/right, bottom/top identification."""
        tol = self.h * 1e-6
        L = self.extent
        rep = np.arange(self.n_vertices)
        x, y = self.vertices[:, 0], self.vertices[:, 1]
        b = self.boundary_vertices

        def match(src_mask, dst_mask, coord):
            src = b[src_mask]
            dst = b[dst_mask]
            keys = {int(np.rint(coord[i] / tol)): i for i in dst}
            for i in src:
                k = int(np.rint(coord[i] / tol))
                j = keys.get(k)
                if j is None:
                    raise GeometryError("non-periodic-mesh", f"no partner for boundary vertex {i}")
                rep[i] = rep[j]

        match(np.abs(x[b] - L) < tol, np.abs(x[b]) < tol, y)
        match(np.abs(y[b] - L) < tol, np.abs(y[b]) < tol, x)
        # corners: resolve chains such as (L, L) -> (0, L) -> (0, 0)
        for _ in range(2):
            rep = rep[rep]
        return rep


def _interface_parameters(geom: CellGeometry, h):
    if geom.is_circle:
        n = int(np.ceil(2 * np.pi * geom.a / min(h, 0.5 * geom.a) / 4.0)) * 4
        return 2 * np.pi * np.arange(n) / n
    theta = np.linspace(0.0, 2 * np.pi, 8193)
    spacing = np.minimum(h, 0.5 * geom.curvature_radius(theta))
    density = geom.speed(theta) / spacing
    cum = cumulative_trapezoid(density, theta, initial=0.0)
    n = int(np.ceil(cum[-1] / 4.0)) * 4
    return np.interp(cum[-1] * np.arange(n) / n, cum, theta)


def _point_in_polygon(pts, poly):
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    x0, y0 = poly[:, 0][None, :], poly[:, 1][None, :]
    x1, y1 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    crosses = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    return (crosses & (x < xint)).sum(axis=1) % 2 == 1


def build_unit_cell_mesh(geometry: CellGeometry, h_target: float) -> InterfaceMesh:
    """Mesh the unit cell ``[0, L]^2`` around ``geometry``.

    Membrane nodes are spaced by ``min(h_target, curvature_radius / 2)``, one
    ring of nodes is offset along the normal on either side, and a square grid
    of spacing ``~h_target`` fills the rest.  Fill points falling inside the
    diametral circle of a membrane edge are removed, which guarantees that every
    membrane edge is a Delaunay edge.
    """
    if h_target <= 0:
        raise GeometryError("invalid-geometry", "h_target must be positive")
    geometry.check_inside()
    if geometry.perimeter() / h_target < MIN_INTERFACE_EDGES:
        raise GeometryError(
            "insufficient-interface-resolution",
            f"h_target={h_target:.3e} gives fewer than {MIN_INTERFACE_EDGES} membrane edges")
    L = geometry.cell_size

    theta = _interface_parameters(geometry, h_target)
    gamma = geometry.points(theta)
    ng = len(gamma)
    normals = geometry.normals(theta)
    seg = np.linalg.norm(np.roll(gamma, -1, axis=0) - gamma, axis=1)
    spacing = 0.5 * (seg + np.roll(seg, 1))
    rho = geometry.curvature_radius(theta)

    inner_ring = gamma - (np.minimum(0.8 * spacing, 0.4 * rho))[:, None] * normals
    outer_ring = gamma + (0.8 * spacing)[:, None] * normals

    n_side = max(int(np.ceil(L / h_target)), 4)
    hs = L / n_side
    keep = np.all((outer_ring > 0.5 * hs) & (outer_ring < L - 0.5 * hs), axis=1)
    outer_ring = outer_ring[keep]

    idx = np.arange(n_side + 1) * hs
    idx[-1] = L
    gx, gy = np.meshgrid(idx, idx, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    on_bnd = ((grid == 0.0) | (grid == L)).any(axis=1)
    boundary_pts = grid[on_bnd]
    fill = grid[~on_bnd]

    structured = np.vstack([gamma, inner_ring, outer_ring])
    tree = cKDTree(structured)
    dist, near = tree.query(fill)
    local = np.concatenate([spacing, spacing, spacing[keep]])[near]
    fill = fill[dist > 0.75 * np.maximum(hs, local)]

    points = np.vstack([gamma, inner_ring, outer_ring, boundary_pts, fill])
    n_fixed = len(points) - len(fill)

    # diametral-circle (Gabriel) clearance of every membrane edge
    mid = 0.5 * (gamma + np.roll(gamma, -1, axis=0))
    radius = 0.5 * seg
    tree = cKDTree(points)
    drop = set()
    for e, hits in enumerate(tree.query_ball_point(mid, radius * (1 + 1e-9))):
        for p in hits:
            if p in (e, (e + 1) % ng):
                continue
            if p >= n_fixed:
                drop.add(p)
            else:
                raise GeometryError(
                    "insufficient-interface-resolution",
                    "membrane too close to the cell boundary or too coarse for h_target")
    if drop:
        points = np.delete(points, sorted(drop), axis=0)

    tri = Delaunay(points)
    if len(tri.coplanar):
        raise GeometryError("mesh-generation-failed", "Delaunay dropped coplanar points")
    simplices = tri.simplices.copy()
    p = points[simplices]
    area = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0]))
    neg = area < 0
    simplices[neg] = simplices[neg][:, [0, 2, 1]]
    good = np.abs(area) > 1e-10 * hs**2
    simplices = simplices[good]

    inside = _point_in_polygon(points[simplices].mean(axis=1), gamma)
    tags = np.where(inside, INNER, OUTER).astype(np.int8)

    edges = np.column_stack([np.arange(ng), (np.arange(ng) + 1) % ng])
    _check_interface_edges(simplices, tags, edges)

    # duplicate membrane vertices for the outer side
    n_pts = len(points)
    iface_in = np.arange(ng)
    iface_out = n_pts + np.arange(ng)
    outer = tags == OUTER
    t_out = simplices[outer]
    t_out = np.where(t_out < ng, t_out + n_pts, t_out)
    simplices[outer] = t_out
    vertices = np.vstack([points, gamma])

    tol = 1e-9 * L
    bmask = ((np.abs(vertices) < tol) | (np.abs(vertices - L) < tol)).any(axis=1)
    return InterfaceMesh(
        vertices=vertices, triangles=simplices, tags=tags, iface_in=iface_in,
        iface_out=iface_out, interface_edges=edges,
        boundary_vertices=np.flatnonzero(bmask), extent=L, h=h_target,
        cell_centers=geometry.center[None, :], grid_step=hs)


def _check_interface_edges(simplices, tags, edges):
    """Each membrane edge must border one inner and one outer triangle."""
    local = [(0, 1), (1, 2), (2, 0)]
    owner = {}
    for j0, j1 in local:
        a, b = simplices[:, j0], simplices[:, j1]
        for t in range(len(simplices)):
            key = (min(a[t], b[t]), max(a[t], b[t]))
            owner.setdefault(key, []).append(tags[t])
    for a, b in edges:
        sides = owner.get((min(a, b), max(a, b)), [])
        if sorted(sides) != [INNER, OUTER]:
            raise GeometryError("mesh-generation-failed",
                                f"membrane edge ({a}, {b}) not recovered (sides={sides})")


def build_tiled_mesh(geometry: CellGeometry, eps: float, domain_size: float,
                     h_target: float | None = None) -> InterfaceMesh:
    """``n x n`` copies of the unit cell scaled by ``eps`` covering ``[0, domain_size]^2``."""
    L = geometry.cell_size
    h_target = L / 40 if h_target is None else h_target
    n_real = domain_size / (eps * L)
    n = int(round(n_real))
    if n < 1 or abs(n_real - n) > 1e-9 * max(n_real, 1.0):
        raise GeometryError("non-conforming-tiling",
                            f"domain_size/(eps*L) = {n_real} is not a positive integer")
    unit = build_unit_cell_mesh(geometry, h_target)
    if n == 1 and eps == 1.0:
        return unit

    nv = unit.n_vertices
    step = eps * L
    verts, tris, tags, iin, iout, edges, centers, icell = [], [], [], [], [], [], [], []
    for c, (i, j) in enumerate((i, j) for j in range(n) for i in range(n)):
        shift = np.array([i * step, j * step])
        verts.append(unit.vertices * eps + shift)
        tris.append(unit.triangles + c * nv)
        tags.append(unit.tags)
        iin.append(unit.iface_in + c * nv)
        iout.append(unit.iface_out + c * nv)
        edges.append(unit.interface_edges + c * unit.n_interface)
        centers.append(unit.cell_centers[0] * eps + shift)
        icell.append(np.full(unit.n_interface, c))
    V = np.vstack(verts)
    T = np.vstack(tris)

    # merge the shared vertices on tile boundaries (grid points, exact multiples)
    hs = unit.grid_step * eps
    tile_bnd = np.concatenate([unit.boundary_vertices + c * nv for c in range(n * n)])
    keys = np.rint(V[tile_bnd] / hs).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    remap = np.arange(len(V))
    remap[tile_bnd] = tile_bnd[first][inverse.ravel()]
    used = np.unique(remap)
    compact = np.full(len(V), -1)
    compact[used] = np.arange(len(used))
    final = compact[remap]

    V = V[used]
    T = final[T]
    tol = 1e-9 * domain_size
    bmask = ((np.abs(V) < tol) | (np.abs(V - domain_size) < tol)).any(axis=1)
    return InterfaceMesh(
        vertices=V, triangles=T, tags=np.concatenate(tags),
        iface_in=final[np.concatenate(iin)], iface_out=final[np.concatenate(iout)],
        interface_edges=np.vstack(edges), boundary_vertices=np.flatnonzero(bmask),
        extent=domain_size, h=h_target * eps, cell_centers=np.array(centers),
        iface_cell=np.concatenate(icell), grid_step=hs)


def chord_error(mesh: InterfaceMesh, geometry: CellGeometry):
    """Largest distance from a membrane edge midpoint to the exact curve (unit cell only)."""
    pts = mesh.interface_points
    e = mesh.interface_edges
    mid = 0.5 * (pts[e[:, 0]] + pts[e[:, 1]])
    local = (mid - geometry.center) @ geometry._rotation()
    # radial distance to the ellipse along the ray from the centre
    r = np.linalg.norm(local, axis=1)
    ang = np.arctan2(local[:, 1], local[:, 0])
    r_curve = 1.0 / np.sqrt((np.cos(ang) / geometry.a) ** 2 + (np.sin(ang) / geometry.b) ** 2)
    return float(np.max(np.abs(r_curve - r)))


def write_mesh(mesh: InterfaceMesh, path):
    """Plain-text export: counts followed by vertex, triangle, pair and edge lines."""
    with open(path, "w") as fh:
        fh.write(f"{mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"{len(mesh.triangles)}\n")
        for (i, j, k), t in zip(mesh.triangles, mesh.tags):
            fh.write(f"{i} {j} {k} {'inner' if t == INNER else 'outer'}\n")
        fh.write(f"{mesh.n_interface}\n")
        for i, o in zip(mesh.iface_in, mesh.iface_out):
            fh.write(f"{i} {o}\n")
        fh.write(f"{len(mesh.interface_edges)}\n")
        for k, l in mesh.interface_edges:
            fh.write(f"{k} {l}\n")


def read_mesh(path, extent=None, h=None) -> InterfaceMesh:
    with open(path) as fh:
        lines = [ln.split() for ln in fh if ln.strip()]
    pos = 0

    def block(parse):
        nonlocal pos
        n = int(lines[pos][0])
        rows = [parse(r) for r in lines[pos + 1: pos + 1 + n]]
        pos += n + 1
        return rows

    verts = np.array(block(lambda r: (float(r[0]), float(r[1]))), dtype=float)
    tri_rows = block(lambda r: (int(r[0]), int(r[1]), int(r[2]), INNER if r[3] == "inner" else OUTER))
    pairs = np.array(block(lambda r: (int(r[0]), int(r[1]))), dtype=int).reshape(-1, 2)
    edges = np.array(block(lambda r: (int(r[0]), int(r[1]))), dtype=int).reshape(-1, 2)
    tri = np.array(tri_rows, dtype=int).reshape(-1, 4)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    extent = float(max(hi - lo)) if extent is None else extent
    tol = 1e-9 * extent
    bmask = ((np.abs(verts) < tol) | (np.abs(verts - extent) < tol)).any(axis=1)
    return InterfaceMesh(
        vertices=verts, triangles=tri[:, :3].copy(), tags=tri[:, 3].astype(np.int8),
        iface_in=pairs[:, 0].copy(), iface_out=pairs[:, 1].copy(), interface_edges=edges,
        boundary_vertices=np.flatnonzero(bmask), extent=extent,
        h=h if h is not None else extent / 40,
        cell_centers=verts[pairs[:, 0]].mean(axis=0)[None, :])


def build_square_mesh(domain_size: float, n: int) -> InterfaceMesh:
    """Membrane-free structured mesh of ``[0, domain_size]^2``: ``n x n`` squares, two triangles each."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = np.linspace(0.0, domain_size, n + 1)
    X, Y = np.meshgrid(x, x)
    V = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[:-1, 1:].ravel()
    c, d = idx[1:, 1:].ravel(), idx[1:, :-1].ravel()
    T = np.vstack([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    tol = 1e-9 * domain_size
    bmask = ((np.abs(V) < tol) | (np.abs(V - domain_size) < tol)).any(axis=1)
    empty = np.zeros(0, dtype=int)
    return InterfaceMesh(
        vertices=V, triangles=T, tags=np.full(len(T), OUTER, dtype=np.int8),
        iface_in=empty, iface_out=empty.copy(), interface_edges=np.zeros((0, 2), dtype=int),
        boundary_vertices=np.flatnonzero(bmask), extent=domain_size, h=domain_size / n,
        grid_step=domain_size / n)

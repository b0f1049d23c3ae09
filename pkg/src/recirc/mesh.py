"""2D triangular meshes with tagged boundaries and a marked control subdomain.

Boundary tags are strings: ``"Surface"``, ``"Wall"``, ``"Collector:k"`` and
``"Injector:k"`` with 1-based pump index ``k``.  Boundary edges are stored
with the domain on their left, so ``(dy, -dx)/length`` is the outward normal.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

SURFACE = "Surface"
WALL = "Wall"
_PUMP_TAG = re.compile(r"^(Collector|Injector):([1-9][0-9]*)$")
_SIDES = ("bottom", "right", "top", "left")


class MeshError(ValueError):
    """Invalid mesh data; the message names the offending entity."""


def collector_tag(k: int) -> str:
    return f"Collector:{k}"


def injector_tag(k: int) -> str:
    return f"Injector:{k}"


def parse_tag(tag: str):
    """Return ``(kind, k)`` for a pump tag, ``(tag, 0)`` otherwise."""
    m = _PUMP_TAG.match(tag)
    if m:
        return m.group(1), int(m.group(2))
    if tag in (SURFACE, WALL):
        return tag, 0
    raise MeshError(f"unknown boundary tag {tag!r}")


@dataclass(frozen=True)
class PumpPair:
    index: int
    collector_edges: np.ndarray
    injector_edges: np.ndarray
    collector_measure: float
    injector_measure: float
    collector_nodes: np.ndarray
    injector_nodes: np.ndarray


@dataclass(frozen=True)
class PumpLayout:
    """Collector/injector pairs derived from the boundary tags of a mesh."""

    pairs: tuple[PumpPair, ...]

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    @property
    def collector_measures(self) -> np.ndarray:
        return np.array([p.collector_measure for p in self.pairs])

    @property
    def injector_measures(self) -> np.ndarray:
        return np.array([p.injector_measure for p in self.pairs])

    @property
    def injector_nodes(self) -> np.ndarray:
        """All vertices on injector edges (the scalar Dirichlet set)."""
        if not self.pairs:
            return np.zeros(0, dtype=int)
        return np.unique(np.concatenate([p.injector_nodes for p in self.pairs]))


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_tags: tuple[str, ...]
    region_markers: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.ascontiguousarray(self.vertices, dtype=float))
        object.__setattr__(self, "triangles", np.ascontiguousarray(self.triangles, dtype=np.int64))
        object.__setattr__(
            self, "boundary_edges", np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        )
        object.__setattr__(self, "edge_tags", tuple(self.edge_tags))
        markers = self.region_markers
        if markers is None:
            markers = np.zeros(len(self.triangles), dtype=bool)
        object.__setattr__(self, "region_markers", np.asarray(markers, dtype=bool))
        for arr in (self.vertices, self.triangles, self.boundary_edges, self.region_markers):
            arr.setflags(write=False)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.boundary_edges)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """(nt, 3, 2) constant gradients of the barycentric coordinates."""
        p = self.vertices[self.triangles]
        area2 = 2.0 * self.signed_areas
        g = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = (p[:, j, 1] - p[:, k, 1]) / area2
            g[:, i, 1] = (p[:, k, 0] - p[:, j, 0]) / area2
        return g

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Unit outward normals of the boundary edges."""
        d = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / self.edge_lengths[:, None]

    @cached_property
    def edge_triangle(self) -> np.ndarray:
        """Index of the triangle adjacent to each boundary edge."""
        lookup = {}
        for t, tri in enumerate(self.triangles):
            for i in range(3):
                a, b = tri[i], tri[(i + 1) % 3]
                lookup[(a, b)] = t
        return np.array([lookup[(a, b)] for a, b in self.boundary_edges], dtype=np.int64)

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        return np.unique(self.boundary_edges)

    def edges_with_tag(self, *tags: str) -> np.ndarray:
        wanted = set(tags)
        return np.array([i for i, t in enumerate(self.edge_tags) if t in wanted], dtype=np.int64)

    def tag_length(self, tag: str) -> float:
        idx = self.edges_with_tag(tag)
        return float(self.edge_lengths[idx].sum()) if len(idx) else 0.0

    @property
    def tags(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.edge_tags)))

    @cached_property
    def pump_layout(self) -> PumpLayout:
        pumps: dict[int, dict[str, list[int]]] = {}
        for i, tag in enumerate(self.edge_tags):
            kind, k = parse_tag(tag)
            if k:
                pumps.setdefault(k, {"Collector": [], "Injector": []})[kind].append(i)
        pairs = []
        for k in range(1, len(pumps) + 1):
            if k not in pumps:
                raise MeshError(f"pump indices must be contiguous from 1; pump {k} missing")
            ce = np.array(pumps[k]["Collector"], dtype=np.int64)
            ie = np.array(pumps[k]["Injector"], dtype=np.int64)
            if len(ce) == 0 or len(ie) == 0:
                raise MeshError(f"pump {k} needs both collector and injector edges")
            pairs.append(
                PumpPair(
                    index=k,
                    collector_edges=ce,
                    injector_edges=ie,
                    collector_measure=float(self.edge_lengths[ce].sum()),
                    injector_measure=float(self.edge_lengths[ie].sum()),
                    collector_nodes=np.unique(self.boundary_edges[ce]),
                    injector_nodes=np.unique(self.boundary_edges[ie]),
                )
            )
        return PumpLayout(tuple(pairs))

    def validate(self) -> "Mesh":
        """Check all structural invariants; raise :class:`MeshError` on failure."""
        nv = self.n_vertices
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 2:
            raise MeshError("vertices must be an (n, 2) array")
        if self.triangles.ndim != 2 or self.triangles.shape[1] != 3:
            raise MeshError("triangles must be an (n, 3) array")
        if len(self.region_markers) != self.n_triangles:
            raise MeshError("one region marker per triangle required")
        if len(self.edge_tags) != self.n_edges:
            raise MeshError("one tag per boundary edge required")
        bad = np.flatnonzero((self.triangles < 0) | (self.triangles >= nv))
        if len(bad):
            raise MeshError(f"triangle {bad[0] // 3} references a missing vertex")
        bad = np.flatnonzero(self.signed_areas <= 0)
        if len(bad):
            raise MeshError(f"triangle {bad[0]} has non-positive signed area (inverted orientation)")

        # boundary of the triangulation = directed edges without a twin
        half = {}
        for t, tri in enumerate(self.triangles):
            for i in range(3):
                a, b = int(tri[i]), int(tri[(i + 1) % 3])
                if (a, b) in half:
                    raise MeshError(f"edge ({a}, {b}) of triangle {t} is shared with the same orientation")
                half[(a, b)] = t
        true_boundary = {(a, b) for (a, b) in half if (b, a) not in half}
        seen = set()
        for i, (a, b) in enumerate(self.boundary_edges):
            key = (int(a), int(b))
            if key not in true_boundary:
                if (key[1], key[0]) in true_boundary:
                    raise MeshError(f"boundary edge {i} has the wrong orientation")
                raise MeshError(f"boundary edge {i} ({a}, {b}) is not on the domain boundary")
            if key in seen:
                raise MeshError(f"boundary edge {i} listed twice")
            seen.add(key)
        missing = true_boundary - seen
        if missing:
            a, b = sorted(missing)[0]
            raise MeshError(f"untagged boundary edge ({a}, {b})")
        for i, tag in enumerate(self.edge_tags):
            try:
                parse_tag(tag)
            except MeshError:
                raise MeshError(f"boundary edge {i} has invalid tag {tag!r}") from None
        deg = np.bincount(self.boundary_edges.ravel(), minlength=nv)
        odd = np.flatnonzero((deg != 0) & (deg != 2))
        if len(odd):
            raise MeshError(f"boundary vertex {odd[0]} does not lie on a closed loop")
        layout = self.pump_layout
        owner = {}
        for p in layout.pairs:
            for kind, nodes in (("collector", p.collector_nodes), ("injector", p.injector_nodes)):
                for v in nodes:
                    if v in owner:
                        raise MeshError(
                            f"pump segments must not touch: vertex {v} is shared by {owner[v]} and {kind} {p.index}"
                        )
                    owner[v] = f"{kind} {p.index}"
        return self


def subdomain_measure(mesh: Mesh, marker=None) -> float:
    """Total area of marked triangles (the control subdomain by default)."""
    if marker is None:
        marker = mesh.region_markers
    marker = np.asarray(marker, dtype=bool)
    return float(mesh.areas[marker].sum())


# --------------------------------------------------------------------------- generation


@dataclass(frozen=True)
class Interval:
    """A segment ``[start, end]`` along one side of the rectangle (metres from the side's origin)."""

    side: str
    start: float
    end: float

    def __post_init__(self):
        if self.side not in _SIDES:
            raise MeshError(f"unknown side {self.side!r}; expected one of {_SIDES}")
        if not self.end > self.start:
            raise MeshError(f"interval on {self.side} has end <= start")


@dataclass(frozen=True)
class PumpSpec:
    collector: Interval
    injector: Interval


def _side_nodes(nx: int, ny: int, side: str) -> tuple[np.ndarray, int]:
    """Vertex ids along a side ordered by increasing coordinate, and its cell count."""
    ids = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    if side == "bottom":
        return ids[0, :], nx
    if side == "top":
        return ids[-1, :], nx
    if side == "left":
        return ids[:, 0], ny
    return ids[:, -1], ny


def generate_rect_mesh(
    width: float,
    height: float,
    nx: int,
    ny: int,
    pumps: Sequence[PumpSpec] = (),
    control_strip_height: float = 0.0,
) -> Mesh:
    """Structured triangulation of ``[0, width] x [0, height]``.

    Cells left of the vertical midline are split along one diagonal and cells
    right of it along the other, so the mesh is mirror symmetric for even
    ``nx``.  The top side is ``Surface``; pump intervals are snapped to grid
    nodes and must hit them exactly.  Triangles whose centroid lies below
    ``control_strip_height`` form the control subdomain.
    """
    if not (width > 0 and height > 0):
        raise MeshError("width and height must be positive")
    if nx < 1 or ny < 1:
        raise MeshError("nx and ny must be at least 1")
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    ids = np.arange((nx + 1) * (ny + 1)).reshape(ny + 1, nx + 1)
    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = ids[j, i], ids[j, i + 1], ids[j + 1, i + 1], ids[j + 1, i]
            if 2 * i < nx:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
    triangles = np.array(tris, dtype=np.int64)

    # counter-clockwise boundary: bottom left->right, right bottom->top, top right->left, left top->bottom
    spacing = {"bottom": width / nx, "top": width / nx, "left": height / ny, "right": height / ny}
    side_len = {"bottom": width, "top": width, "left": height, "right": height}
    tags: dict[str, list[str]] = {
        s: [SURFACE if s == "top" else WALL] * (nx if s in ("bottom", "top") else ny) for s in _SIDES
    }
    used: dict[str, list[tuple[int, int, str]]] = {s: [] for s in _SIDES}
    for k, pump in enumerate(pumps, start=1):
        for iv, tag in ((pump.collector, collector_tag(k)), (pump.injector, injector_tag(k))):
            h = spacing[iv.side]
            lo, hi = iv.start / h, iv.end / h
            i0, i1 = int(round(lo)), int(round(hi))
            if abs(lo - i0) > 1e-9 * max(1.0, lo) or abs(hi - i1) > 1e-9 * max(1.0, hi):
                raise MeshError(f"{tag} interval [{iv.start}, {iv.end}] on {iv.side} is not resolved by the grid spacing {h}")
            if i1 - i0 < 1:
                raise MeshError(f"{tag} interval is shorter than one mesh edge")
            if i0 < 1 or i1 > side_len[iv.side] / h - 1 + 1e-9:
                raise MeshError(f"{tag} interval must not reach a corner of the domain")
            for a, b, other in used[iv.side]:
                if i0 <= b and a <= i1:
                    raise MeshError(f"{tag} interval overlaps or touches {other}")
            used[iv.side].append((i0, i1, tag))
            for e in range(i0, i1):
                tags[iv.side][e] = tag

    edges, edge_tags = [], []
    nodes, _ = _side_nodes(nx, ny, "bottom")
    for e in range(nx):
        edges.append((nodes[e], nodes[e + 1]))
        edge_tags.append(tags["bottom"][e])
    nodes, _ = _side_nodes(nx, ny, "right")
    for e in range(ny):
        edges.append((nodes[e], nodes[e + 1]))
        edge_tags.append(tags["right"][e])
    nodes, _ = _side_nodes(nx, ny, "top")
    for e in reversed(range(nx)):
        edges.append((nodes[e + 1], nodes[e]))
        edge_tags.append(tags["top"][e])
    nodes, _ = _side_nodes(nx, ny, "left")
    for e in reversed(range(ny)):
        edges.append((nodes[e + 1], nodes[e]))
        edge_tags.append(tags["left"][e])

    centroids = vertices[triangles].mean(axis=1)
    markers = centroids[:, 1] < control_strip_height
    return Mesh(vertices, triangles, np.array(edges), tuple(edge_tags), markers).validate()


# --------------------------------------------------------------------------- file io


def save_mesh(mesh: Mesh, path) -> None:
    """Write the plain-text mesh format (see ``docs/mesh_format.md``)."""
    lines = ["# recirc mesh v1", f"VERTICES {mesh.n_vertices}"]
    lines += [f"{i} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.vertices.tolist())]
    lines.append(f"TRIANGLES {mesh.n_triangles}")
    lines += [f"{i} {a} {b} {c}" for i, (a, b, c) in enumerate(mesh.triangles.tolist())]
    lines.append(f"EDGES {mesh.n_edges}")
    lines += [f"{i} {a} {b} {t}" for i, ((a, b), t) in enumerate(zip(mesh.boundary_edges.tolist(), mesh.edge_tags))]
    lines.append(f"MARKERS {mesh.n_triangles}")
    lines += [f"{i} {int(m)}" for i, m in enumerate(mesh.region_markers)]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    """Parse and validate a mesh file."""
    text = Path(path).read_text().splitlines()
    rows = [ln.split() for ln in text if ln.strip() and not ln.lstrip().startswith("#")]
    sections: dict[str, list[list[str]]] = {}
    i = 0
    while i < len(rows):
        head = rows[i]
        if len(head) != 2 or head[0] not in ("VERTICES", "TRIANGLES", "EDGES", "MARKERS"):
            raise MeshError(f"expected a section header, got {' '.join(head)!r}")
        try:
            count = int(head[1])
        except ValueError:
            raise MeshError(f"bad count in section header {' '.join(head)!r}") from None
        body = rows[i + 1 : i + 1 + count]
        if len(body) != count:
            raise MeshError(f"section {head[0]} is truncated")
        sections[head[0]] = body
        i += 1 + count
    for name in ("VERTICES", "TRIANGLES", "EDGES"):
        if name not in sections:
            raise MeshError(f"missing section {name}")

    def table(name, ncols, conv):
        out = []
        for expect, row in enumerate(sections[name]):
            if len(row) != ncols + 1:
                raise MeshError(f"{name} entry {expect}: expected {ncols + 1} fields")
            try:
                if int(row[0]) != expect:
                    raise MeshError(f"{name} ids must be consecutive from 0 (entry {expect})")
                out.append([conv(x) for x in row[1:]])
            except ValueError:
                raise MeshError(f"{name} entry {expect}: parse failure") from None
        return out

    verts = np.array(table("VERTICES", 2, float), dtype=float).reshape(-1, 2)
    tris = np.array(table("TRIANGLES", 3, int), dtype=np.int64).reshape(-1, 3)
    edges, tags = [], []
    for expect, row in enumerate(sections["EDGES"]):
        if len(row) != 4:
            raise MeshError(f"EDGES entry {expect}: expected 4 fields")
        try:
            if int(row[0]) != expect:
                raise MeshError(f"EDGES ids must be consecutive from 0 (entry {expect})")
            edges.append((int(row[1]), int(row[2])))
        except ValueError:
            raise MeshError(f"EDGES entry {expect}: parse failure") from None
        tags.append(row[3])
    markers = np.zeros(len(tris), dtype=bool)
    if "MARKERS" in sections:
        for expect, row in enumerate(sections["MARKERS"]):
            if len(row) != 2:
                raise MeshError(f"MARKERS entry {expect}: expected 2 fields")
            try:
                t, flag = int(row[0]), int(row[1])
            except ValueError:
                raise MeshError(f"MARKERS entry {expect}: parse failure") from None
            if not 0 <= t < len(tris):
                raise MeshError(f"MARKERS entry {expect} names missing triangle {t}")
            markers[t] = bool(flag)
    return Mesh(verts, tris, np.array(edges, dtype=np.int64).reshape(-1, 2), tuple(tags), markers).validate()

"""Structured triangulations of the unit square, subdomain partitions and
probe-region checks.

Nodes of a ``build_rect_mesh`` grid are numbered row by row
(``node = j * (nx + 1) + i``) and cells likewise (``cell = j * nx + i``).
Subdomain labels are 1-based; ``OUTSIDE`` (0) marks elements in no subdomain.
"""
from __future__ import annotations

import hashlib
import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

NEUMANN = "NEUMANN"
DIRICHLET = "DIRICHLET"
OUTSIDE = 0

SIDES = ("bottom", "right", "top", "left")


class MeshError(ValueError):
    """Raised for malformed meshes or invalid mesh construction arguments."""


class PartitionError(ValueError):
    pass


class ProbeRegionError(ValueError):
    """Base class for topological violations of a probe-region pair."""

    code = "invalid"


class RegionOverlapError(ProbeRegionError):
    code = "overlap"


class DisconnectedComplementError(ProbeRegionError):
    code = "disconnected_complement"


class NeumannUnreachableError(ProbeRegionError):
    code = "complement_misses_neumann"


def _edge_key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangulated 2D domain with tagged boundary.

    Attributes
    ----------
    nodes : (n_nodes, 2) float array
    elements : (n_elements, 3) int array, counterclockwise vertex order
    boundary_edges : (n_bedges, 2) int array, oriented as in their element
    boundary_tags : tuple of ``NEUMANN`` / ``DIRICHLET``, one per boundary edge
    element_subdomain : (n_elements,) int array of labels (0 = outside)
    element_cell : (n_elements,) int array grouping elements into grid cells
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple
    element_subdomain: np.ndarray = None
    element_cell: np.ndarray = None
    shape: tuple | None = None

    def __post_init__(self):
        nodes = np.ascontiguousarray(self.nodes, dtype=float)
        elements = np.ascontiguousarray(self.elements, dtype=np.int64)
        bedges = np.ascontiguousarray(self.boundary_edges, dtype=np.int64).reshape(-1, 2)
        n_el = len(elements)
        sub = (np.zeros(n_el, dtype=np.int64) if self.element_subdomain is None
               else np.asarray(self.element_subdomain, dtype=np.int64))
        cell = (np.arange(n_el, dtype=np.int64) if self.element_cell is None
                else np.asarray(self.element_cell, dtype=np.int64))
        for name, arr in (("nodes", nodes), ("elements", elements), ("boundary_edges", bedges),
                          ("element_subdomain", sub), ("element_cell", cell)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "boundary_tags", tuple(self.boundary_tags))
        self._validate()

    # -- validation -------------------------------------------------------
    def _validate(self):
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise MeshError("nodes must have shape (n, 2)")
        if self.elements.ndim != 2 or self.elements.shape[1] != 3:
            raise MeshError("elements must have shape (m, 3)")
        if self.elements.min() < 0 or self.elements.max() >= len(self.nodes):
            raise MeshError("element references a node out of range")
        if len(self.element_subdomain) != self.n_elements or len(self.element_cell) != self.n_elements:
            raise MeshError("per-element arrays must match the element count")
        if np.any(self.signed_areas <= 0):
            bad = np.flatnonzero(self.signed_areas <= 0)
            raise MeshError(f"elements with non-positive signed area: {bad[:10].tolist()}")
        if len(self.boundary_tags) != len(self.boundary_edges):
            raise MeshError("one tag per boundary edge required")
        if set(self.boundary_tags) - {NEUMANN, DIRICHLET}:
            raise MeshError("boundary tags must be NEUMANN or DIRICHLET")

        owners = self.edge_elements
        true_boundary = {e for e, els in owners.items() if len(els) == 1}
        if any(len(els) > 2 for els in owners.values()):
            raise MeshError("an edge is shared by more than two elements")
        given = [_edge_key(a, b) for a, b in self.boundary_edges]
        if len(set(given)) != len(given):
            raise MeshError("duplicate boundary edge")
        for key in given:
            if key not in true_boundary:
                raise MeshError(f"boundary edge {key} does not belong to exactly one element")
        if set(given) != true_boundary:
            raise MeshError("tagged edges must cover the whole boundary")
        if DIRICHLET not in self.boundary_tags:
            raise MeshError("Dirichlet boundary must be non-empty")
        if NEUMANN not in self.boundary_tags:
            raise MeshError("Neumann boundary must be non-empty")

    # -- geometry ------------------------------------------------------------
    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.nodes[self.elements]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.nodes[self.elements].mean(axis=1)

    @cached_property
    def edge_elements(self) -> dict:
        """Map from sorted node pair to the list of elements containing it."""
        owners: dict = {}
        for t, (a, b, c) in enumerate(self.elements.tolist()):
            for e in ((a, b), (b, c), (c, a)):
                owners.setdefault(_edge_key(*e), []).append(t)
        return owners

    @cached_property
    def adjacency(self) -> list:
        """Edge-adjacency lists of the elements."""
        adj = [[] for _ in range(self.n_elements)]
        for els in self.edge_elements.values():
            if len(els) == 2:
                s, t = els
                adj[s].append(t)
                adj[t].append(s)
        return adj

    def edges_with_tag(self, tag: str) -> np.ndarray:
        mask = np.array([t == tag for t in self.boundary_tags], dtype=bool)
        return self.boundary_edges[mask]

    @cached_property
    def neumann_edges(self) -> np.ndarray:
        return self.edges_with_tag(NEUMANN)

    @cached_property
    def dirichlet_edges(self) -> np.ndarray:
        return self.edges_with_tag(DIRICHLET)

    @cached_property
    def dirichlet_nodes(self) -> np.ndarray:
        return np.unique(self.dirichlet_edges)

    @cached_property
    def neumann_nodes(self) -> np.ndarray:
        return np.unique(self.neumann_edges)

    def edge_normals(self, edges: np.ndarray) -> np.ndarray:
        """Unit normals pointing to the right of each oriented edge.

        For boundary edges stored in element (counterclockwise) orientation this
        is the outward normal.
        """
        d = self.nodes[edges[:, 1]] - self.nodes[edges[:, 0]]
        n = np.column_stack([d[:, 1], -d[:, 0]])
        return n / np.linalg.norm(n, axis=1)[:, None]

    # -- regions -------------------------------------------------------------
    def region_boundary_edges(self, region: Iterable[int]) -> np.ndarray:
        """Edges of ``region`` shared with no other element of the region.

        Edges keep the orientation of their owning element, so
        ``edge_normals`` of the result points out of the region.
        """
        region = np.asarray(sorted(set(int(t) for t in region)), dtype=np.int64)
        inside = np.zeros(self.n_elements, dtype=bool)
        inside[region] = True
        out = []
        for t in region.tolist():
            a, b, c = self.elements[t].tolist()
            for e in ((a, b), (b, c), (c, a)):
                owners = self.edge_elements[_edge_key(*e)]
                if sum(inside[o] for o in owners) == 1:
                    out.append(e)
        return np.array(out, dtype=np.int64).reshape(-1, 2)

    def cell_elements(self, i: int, j: int) -> np.ndarray:
        """Elements of grid cell ``(i, j)`` of a structured mesh."""
        if self.shape is None:
            raise MeshError("cell lookup requires a structured mesh")
        nx, ny = self.shape
        if not (0 <= i < nx and 0 <= j < ny):
            raise MeshError(f"cell ({i}, {j}) outside the {nx}x{ny} grid")
        return np.flatnonzero(self.element_cell == j * nx + i)

    def cells_elements(self, cells: Iterable[Sequence[int]]) -> np.ndarray:
        parts = [self.cell_elements(int(i), int(j)) for i, j in cells]
        return np.unique(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)

    def with_partition(self, partition: "Partition") -> "Mesh":
        return Mesh(self.nodes, self.elements, self.boundary_edges, self.boundary_tags,
                    element_subdomain=partition.labels, element_cell=self.element_cell,
                    shape=self.shape)

    # -- identity / serialization -----------------------------------------
    @cached_property
    def hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.nodes, self.elements, self.boundary_edges):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(",".join(self.boundary_tags).encode())
        return h.hexdigest()[:16]

    def to_dict(self) -> dict:
        out = {
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
            "boundary": [[int(a), int(b), t] for (a, b), t in zip(self.boundary_edges.tolist(), self.boundary_tags)],
            "subdomain": self.element_subdomain.tolist(),
            "cell": self.element_cell.tolist(),
        }
        if self.shape is not None:
            out["shape"] = list(self.shape)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Mesh":
        boundary = data["boundary"]
        shape = data.get("shape")
        return cls(
            nodes=np.array(data["nodes"], dtype=float),
            elements=np.array(data["elements"], dtype=np.int64),
            boundary_edges=np.array([[a, b] for a, b, _ in boundary], dtype=np.int64),
            boundary_tags=tuple(t for _, _, t in boundary),
            element_subdomain=data.get("subdomain"),
            element_cell=data.get("cell"),
            shape=tuple(shape) if shape is not None else None,
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "Mesh":
        return cls.from_dict(json.loads(text))


def _side_of_edge(p: np.ndarray, q: np.ndarray, tol: float = 1e-12) -> str:
    if abs(p[1]) < tol and abs(q[1]) < tol:
        return "bottom"
    if abs(p[1] - 1) < tol and abs(q[1] - 1) < tol:
        return "top"
    if abs(p[0]) < tol and abs(q[0]) < tol:
        return "left"
    return "right"


def build_rect_mesh(nx: int, ny: int, dirichlet_side="bottom", pattern: str = "right") -> Mesh:
    """Triangulate the unit square with ``nx`` by ``ny`` cells.

    Parameters
    ----------
    nx, ny : int
        Cell counts, both at least 2.
    dirichlet_side : str or iterable of str
        Side(s) among ``bottom``, ``right``, ``top``, ``left`` tagged
        ``DIRICHLET``; all other boundary edges are ``NEUMANN``.
    pattern : {"right", "crossed"}
        ``right`` splits each cell along its lower-left/upper-right diagonal;
        ``crossed`` adds a centre node and four triangles per cell.
    """
    if int(nx) != nx or int(ny) != ny or nx < 2 or ny < 2:
        raise MeshError(f"need nx, ny >= 2, got ({nx}, {ny})")
    nx, ny = int(nx), int(ny)
    sides = {dirichlet_side} if isinstance(dirichlet_side, str) else set(dirichlet_side)
    if not sides or sides - set(SIDES):
        raise MeshError(f"dirichlet_side must be drawn from {SIDES}, got {sorted(sides)}")
    if pattern not in ("right", "crossed"):
        raise MeshError(f"unknown pattern {pattern!r}")

    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    nodes = [np.column_stack([gx.ravel(), gy.ravel()])]

    def vid(i, j):
        return j * (nx + 1) + i

    elements, cells = [], []
    n_grid = (nx + 1) * (ny + 1)
    centre = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            cell = j * nx + i
            if pattern == "right":
                elements += [(a, b, c), (a, c, d)]
                cells += [cell, cell]
            else:
                m = n_grid + len(centre)
                centre.append(((xs[i] + xs[i + 1]) / 2, (ys[j] + ys[j + 1]) / 2))
                elements += [(a, b, m), (b, c, m), (c, d, m), (d, a, m)]
                cells += [cell] * 4
    if centre:
        nodes.append(np.array(centre))
    nodes = np.vstack(nodes)
    elements = np.array(elements, dtype=np.int64)

    bedges, tags = [], []
    for i in range(nx):
        bedges.append((vid(i, 0), vid(i + 1, 0)))
    for j in range(ny):
        bedges.append((vid(nx, j), vid(nx, j + 1)))
    for i in range(nx, 0, -1):
        bedges.append((vid(i, ny), vid(i - 1, ny)))
    for j in range(ny, 0, -1):
        bedges.append((vid(0, j), vid(0, j - 1)))
    for a, b in bedges:
        side = _side_of_edge(nodes[a], nodes[b])
        tags.append(DIRICHLET if side in sides else NEUMANN)

    return Mesh(nodes, elements, np.array(bedges, dtype=np.int64), tuple(tags),
                element_cell=np.array(cells, dtype=np.int64), shape=(nx, ny))


# ---------------------------------------------------------------------------
# Partitions
# ---------------------------------------------------------------------------

def is_edge_connected(mesh: Mesh, elements: Iterable[int]) -> bool:
    """Breadth-first check that ``elements`` form one edge-connected set."""
    members = set(int(t) for t in elements)
    if not members:
        return False
    start = next(iter(members))
    seen = {start}
    queue = deque([start])
    while queue:
        t = queue.popleft()
        for s in mesh.adjacency[t]:
            if s in members and s not in seen:
                seen.add(s)
                queue.append(s)
    return len(seen) == len(members)


def _touches_boundary_of_union(mesh: Mesh, sub: np.ndarray, union: np.ndarray) -> bool:
    in_union = np.zeros(mesh.n_elements, dtype=bool)
    in_union[union] = True
    for t in sub.tolist():
        a, b, c = mesh.elements[t].tolist()
        for e in ((a, b), (b, c), (c, a)):
            owners = mesh.edge_elements[_edge_key(*e)]
            if sum(in_union[o] for o in owners) == 1:
                return True
    return False


@dataclass(frozen=True, eq=False)
class Partition:
    """Pairwise disjoint, edge-connected subdomains ``S_1 .. S_N``.

    ``subdomain_elements[j - 1]`` holds the elements of ``S_j``;
    ``touches_support_boundary[j - 1]`` tells whether ``S_j`` has an edge on
    the boundary of the union of all subdomains.
    """

    n_elements: int
    subdomain_elements: tuple
    touches_support_boundary: tuple = field(default=())

    @classmethod
    def from_elements(cls, mesh: Mesh, subdomains: Sequence[Iterable[int]]) -> "Partition":
        subs = tuple(np.array(sorted(set(int(t) for t in s)), dtype=np.int64) for s in subdomains)
        seen = np.zeros(mesh.n_elements, dtype=np.int64)
        for s in subs:
            if len(s) == 0:
                raise PartitionError("empty subdomain")
            if s.min() < 0 or s.max() >= mesh.n_elements:
                raise PartitionError("element index out of range")
            seen[s] += 1
        if np.any(seen > 1):
            raise PartitionError("subdomains overlap")
        for j, s in enumerate(subs, start=1):
            if not is_edge_connected(mesh, s):
                raise PartitionError(f"subdomain {j} is not edge-connected")
        union = np.flatnonzero(seen)
        touches = tuple(_touches_boundary_of_union(mesh, s, union) for s in subs)
        for s in subs:
            s.setflags(write=False)
        return cls(mesh.n_elements, subs, touches)

    @property
    def n_subdomains(self) -> int:
        return len(self.subdomain_elements)

    @cached_property
    def labels(self) -> np.ndarray:
        lab = np.full(self.n_elements, OUTSIDE, dtype=np.int64)
        for j, s in enumerate(self.subdomain_elements, start=1):
            lab[s] = j
        lab.setflags(write=False)
        return lab

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.labels != OUTSIDE)

    @property
    def covers_mesh(self) -> bool:
        return bool(np.all(self.labels != OUTSIDE))

    def elements_of(self, j: int) -> np.ndarray:
        if not 1 <= j <= self.n_subdomains:
            raise PartitionError(f"subdomain index {j} outside 1..{self.n_subdomains}")
        return self.subdomain_elements[j - 1]

    def complement_of(self, j: int) -> np.ndarray:
        """Elements of the support outside ``S_j``."""
        lab = self.labels
        return np.flatnonzero((lab != OUTSIDE) & (lab != j))

    def non_touching(self) -> list:
        """1-based indices of subdomains without an edge on the support boundary."""
        return [j for j, ok in enumerate(self.touches_support_boundary, start=1) if not ok]

    @property
    def admissible(self) -> bool:
        return not self.non_touching()

    def expand(self, values: Sequence[float], outside: float = 0.0) -> np.ndarray:
        """Per-element field from one value per subdomain."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_subdomains,):
            raise PartitionError(f"expected {self.n_subdomains} subdomain values, got {values.shape}")
        out = np.full(self.n_elements, float(outside))
        for j, s in enumerate(self.subdomain_elements):
            out[s] = values[j]
        return out


def grid_partition(mesh: Mesh, px: int, py: int) -> Partition:
    """Split a structured mesh into ``px`` by ``py`` blocks of cells.

    Block ``(bx, by)`` gets label ``1 + bx + px * by``. The partition covers the
    whole mesh; blocks that do not reach its boundary are listed by
    ``Partition.non_touching``.
    """
    if mesh.shape is None:
        raise PartitionError("grid_partition needs a structured mesh")
    nx, ny = mesh.shape
    if px < 1 or py < 1 or nx % px or ny % py:
        raise PartitionError(f"({px}, {py}) blocks do not divide the {nx}x{ny} grid")
    bw, bh = nx // px, ny // py
    cells = mesh.element_cell
    ci, cj = cells % nx, cells // nx
    block = (ci // bw) + px * (cj // bh)
    subs = [np.flatnonzero(block == b) for b in range(px * py)]
    return Partition.from_elements(mesh, subs)


# ---------------------------------------------------------------------------
# Probe regions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ProbeRegions:
    d1_elements: np.ndarray
    d2_elements: np.ndarray

    @property
    def union(self) -> np.ndarray:
        return np.union1d(self.d1_elements, self.d2_elements)


def validate_probe_regions(mesh: Mesh, d1: Iterable[int], d2: Iterable[int]) -> ProbeRegions:
    """Check the topological side-conditions for a localized-potential pair.

    Raises
    ------
    RegionOverlapError
        The regions share an element or a node.
    DisconnectedComplementError
        The remaining elements are not edge-connected.
    NeumannUnreachableError
        No Neumann edge lies on an element outside both regions.
    """
    d1 = np.array(sorted(set(int(t) for t in d1)), dtype=np.int64)
    d2 = np.array(sorted(set(int(t) for t in d2)), dtype=np.int64)
    for d in (d1, d2):
        if len(d) == 0:
            raise ProbeRegionError("probe regions must be non-empty")
        if d.min() < 0 or d.max() >= mesh.n_elements:
            raise ProbeRegionError("element index out of range")
    if np.intersect1d(d1, d2).size or np.intersect1d(mesh.elements[d1], mesh.elements[d2]).size:
        raise RegionOverlapError("probe region closures intersect")

    blocked = np.zeros(mesh.n_elements, dtype=bool)
    blocked[d1] = blocked[d2] = True
    complement = np.flatnonzero(~blocked)
    if len(complement) == 0 or not is_edge_connected(mesh, complement):
        raise DisconnectedComplementError("complement of the probe regions is not connected")

    for a, b in mesh.neumann_edges.tolist():
        owner = mesh.edge_elements[_edge_key(a, b)][0]
        if not blocked[owner]:
            break
    else:
        raise NeumannUnreachableError("complement of the probe regions does not reach the Neumann boundary")

    d1.setflags(write=False)
    d2.setflags(write=False)
    return ProbeRegions(d1, d2)

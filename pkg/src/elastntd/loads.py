"""Piecewise-linear vector loads on the Neumann boundary.

A load is a coefficient vector ``c`` over vector hat functions
``phi_p = hat_node * e_comp``, ordered by the basis ``pairs``. The L2(Gamma_N)
inner product of two loads is ``c1 @ gram @ c2``.
"""
from __future__ import annotations

from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh


class BoundaryLoadBasis:
    """Vector hat functions on the Neumann nodes of ``mesh``.

    Parameters
    ----------
    mesh : Mesh
    order : sequence of int, optional
        Permutation of the default ``(node, component)`` ordering. The default
        lists Neumann nodes by increasing index, ``x`` before ``y``.
    include_junctions : bool
        Keep hats on nodes shared with the Dirichlet boundary. With them the
        basis spans every piecewise-linear field on the Neumann boundary, but
        those hats add ``2 * n_junction`` directions that no free test function
        sees, so the NtD matrix is only semidefinite. Without them it is definite.
    """

    def __init__(self, mesh: Mesh, order: Sequence[int] | None = None, include_junctions: bool = True):
        self.mesh = mesh
        self.include_junctions = include_junctions
        nodes = mesh.neumann_nodes
        if not include_junctions:
            nodes = np.setdiff1d(nodes, mesh.dirichlet_nodes)
        pairs = np.array([(n, c) for n in nodes.tolist() for c in (0, 1)], dtype=np.int64)
        if order is not None:
            order = np.asarray(order, dtype=np.int64)
            if sorted(order.tolist()) != list(range(len(pairs))):
                raise ValueError("order must be a permutation of the basis indices")
            pairs = pairs[order]
        self.pairs = pairs
        self.pairs.setflags(write=False)

    @property
    def size(self) -> int:
        return len(self.pairs)

    def __len__(self) -> int:
        return self.size

    @cached_property
    def junction_mask(self) -> np.ndarray:
        """True for basis functions sitting on a Neumann/Dirichlet junction node."""
        return np.isin(self.pairs[:, 0], self.mesh.dirichlet_nodes)

    @cached_property
    def dofs(self) -> np.ndarray:
        """Global FE degree of freedom carrying each basis function."""
        return 2 * self.pairs[:, 0] + self.pairs[:, 1]

    @cached_property
    def boundary_mass(self) -> sp.csr_matrix:
        """Neumann-edge mass matrix over all ``2 * n_nodes`` FE dofs."""
        mesh = self.mesh
        edges = mesh.neumann_edges
        length = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
        rows, cols, vals = [], [], []
        local = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
        for (a, b), h in zip(edges.tolist(), length.tolist()):
            ends = (a, b)
            for p in range(2):
                for q in range(2):
                    for comp in (0, 1):
                        rows.append(2 * ends[p] + comp)
                        cols.append(2 * ends[q] + comp)
                        vals.append(h * local[p, q])
        n = 2 * mesh.n_nodes
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    @cached_property
    def gram(self) -> np.ndarray:
        """``B[p, q] = int_{Gamma_N} phi_p . phi_q ds`` (dense, SPD)."""
        d = self.dofs
        return self.boundary_mass[d][:, d].toarray()

    @cached_property
    def load_matrix(self) -> sp.csc_matrix:
        """Columns are the FE load vectors ``int phi_q . w_i ds``."""
        return self.boundary_mass[:, self.dofs].tocsc()

    @cached_property
    def gram_cholesky(self) -> np.ndarray:
        return np.linalg.cholesky(self.gram)

    def rhs(self, coeffs: np.ndarray) -> np.ndarray:
        """FE right-hand side over all dofs for load coefficients."""
        return self.load_matrix @ np.asarray(coeffs, dtype=float)

    def trace(self, u_full: np.ndarray) -> np.ndarray:
        """Coefficients of the Neumann trace of a full-dof P1 field.

        The trace of a P1 field is itself piecewise linear on the Neumann
        edges, so it lies exactly in the span of the basis.
        """
        return np.asarray(u_full)[self.dofs]

    def inner(self, c1: np.ndarray, c2: np.ndarray) -> float:
        return float(np.asarray(c1) @ self.gram @ np.asarray(c2))

    def norm2(self, c: np.ndarray) -> float:
        return self.inner(c, c)

    def norm(self, c: np.ndarray) -> float:
        return float(np.sqrt(max(self.norm2(c), 0.0)))

    def interpolate(self, func: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        """Coefficients of the nodal interpolant of ``func(xy) -> (n, 2)``."""
        xy = self.mesh.nodes[self.pairs[:, 0]]
        values = np.asarray(func(xy), dtype=float).reshape(-1, 2)
        return values[np.arange(self.size), self.pairs[:, 1]]

    def normal_load(self) -> np.ndarray:
        """Interpolated unit outward normal (averaged at corners)."""
        mesh = self.mesh
        edges = mesh.neumann_edges
        normals = mesh.edge_normals(edges)
        acc = np.zeros((mesh.n_nodes, 2))
        cnt = np.zeros(mesh.n_nodes)
        for (a, b), nrm in zip(edges.tolist(), normals):
            acc[a] += nrm
            acc[b] += nrm
            cnt[a] += 1
            cnt[b] += 1
        nodal = acc / np.maximum(cnt, 1)[:, None]
        return nodal[self.pairs[:, 0], self.pairs[:, 1]]

    # -- nested coarse subspaces ----------------------------------------------
    @cached_property
    def chains(self) -> list:
        """Neumann node chains, each an ordered walk along connected edges."""
        edges = self.mesh.neumann_edges.tolist()
        nbrs: dict = {}
        for a, b in edges:
            nbrs.setdefault(a, []).append(b)
            nbrs.setdefault(b, []).append(a)
        seen: set = set()
        chains = []
        starts = sorted(n for n, v in nbrs.items() if len(v) == 1) + sorted(nbrs)
        for s in starts:
            if s in seen:
                continue
            chain = [s]
            seen.add(s)
            cur = s
            while True:
                nxt = [v for v in sorted(nbrs[cur]) if v not in seen]
                if not nxt:
                    break
                cur = nxt[0]
                chain.append(cur)
                seen.add(cur)
            chains.append(chain)
        return chains

    def coarse_prolongation(self, step: int) -> np.ndarray:
        """Prolongation onto hats spanning every ``step``-th chain node.

        Returns ``P`` with shape ``(size, m_coarse)``; coarse load ``y`` has
        fine coefficients ``P @ y``. Chain end points are always coarse nodes,
        so the spaces for steps ``s`` and ``s / 2`` are nested.
        """
        if step < 1:
            raise ValueError("step must be >= 1")
        index = {(int(n), int(c)): k for k, (n, c) in enumerate(self.pairs.tolist())}
        xy = self.mesh.nodes
        columns = []
        for chain in self.chains:
            arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(xy[chain], axis=0), axis=1))])
            last = len(chain) - 1
            coarse = sorted(set(range(0, last + 1, step)) | {last})
            for ci, pos in enumerate(coarse):
                hat = np.zeros(len(chain))
                hat[pos] = 1.0
                if ci > 0:
                    lo = coarse[ci - 1]
                    seg = slice(lo, pos + 1)
                    hat[seg] = np.maximum(hat[seg], (arc[seg] - arc[lo]) / (arc[pos] - arc[lo]))
                if ci + 1 < len(coarse):
                    hi = coarse[ci + 1]
                    seg = slice(pos, hi + 1)
                    hat[seg] = np.maximum(hat[seg], (arc[hi] - arc[seg]) / (arc[hi] - arc[pos]))
                for comp in (0, 1):
                    col = np.zeros(self.size)
                    for node, w in zip(chain, hat):
                        if w != 0.0 and (node, comp) in index:
                            col[index[(node, comp)]] = w
                    if col.any():
                        columns.append(col)
        return np.column_stack(columns)

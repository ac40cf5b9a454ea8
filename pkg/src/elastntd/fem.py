"""Vector P1 finite elements for ``-div(lam div(u) I + 2 mu eps(u)) + rho u = 0``.

Global dofs are ``2 * node + component``. Strains are element-constant, so the
stiffness and energy integrals are exact; the mass term uses the exact P1
mass matrix ``area / 12 * (1 + delta_ij)`` (the edge-midpoint rule gives the
same values).
"""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .loads import BoundaryLoadBasis
from .mesh import Mesh

P1_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


class MaterialError(ValueError):
    """Coefficients violate the admissibility bounds."""


class FactorizationError(RuntimeError):
    """The constrained stiffness matrix could not be factorized."""


# ---------------------------------------------------------------------------
# Element kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ElementKernels:
    """Unit-coefficient element matrices, one ``6 x 6`` block per element.

    Local dof order is ``[ux0, uy0, ux1, uy1, ux2, uy2]``.
    """

    area: np.ndarray      # (m,)
    div: np.ndarray       # (m, 6): div u = div @ u_e
    strain: np.ndarray    # (m, 3, 6): (exx, eyy, exy) = strain @ u_e
    k_div: np.ndarray     # (m, 6, 6): int div u div w
    k_strain: np.ndarray  # (m, 6, 6): int 2 eps(u) : eps(w)
    mass: np.ndarray      # (m, 6, 6): int u . w
    dofs: np.ndarray      # (m, 6)


def element_kernels(mesh: Mesh) -> ElementKernels:
    cached = mesh.__dict__.get("_elastntd_kernels")
    if cached is not None:
        return cached
    p = mesh.nodes[mesh.elements]
    area = mesh.signed_areas
    # gradients of barycentric coordinates
    x, y = p[..., 0], p[..., 1]
    bx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / (2 * area[:, None])
    by = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / (2 * area[:, None])
    m = mesh.n_elements
    strain = np.zeros((m, 3, 6))
    strain[:, 0, 0::2] = bx
    strain[:, 1, 1::2] = by
    strain[:, 2, 0::2] = 0.5 * by
    strain[:, 2, 1::2] = 0.5 * bx
    div = strain[:, 0] + strain[:, 1]
    k_div = area[:, None, None] * div[:, :, None] * div[:, None, :]
    frob = strain[:, 0:1].transpose(0, 2, 1) @ strain[:, 0:1] \
        + strain[:, 1:2].transpose(0, 2, 1) @ strain[:, 1:2] \
        + 2.0 * strain[:, 2:3].transpose(0, 2, 1) @ strain[:, 2:3]
    k_strain = 2.0 * area[:, None, None] * frob
    mass = area[:, None, None] * np.kron(P1_MASS, np.eye(2))[None]
    dofs = (2 * mesh.elements[:, :, None] + np.arange(2)[None, None, :]).reshape(m, 6)
    kern = ElementKernels(area, div, strain, k_div, k_strain, mass, dofs)
    mesh.__dict__["_elastntd_kernels"] = kern
    return kern


def _assemble_blocks(mesh: Mesh, blocks: np.ndarray) -> sp.csr_matrix:
    kern = element_kernels(mesh)
    rows = np.repeat(kern.dofs, 6, axis=1).ravel()
    cols = np.tile(kern.dofs, (1, 6)).ravel()
    n = 2 * mesh.n_nodes
    return sp.csr_matrix((blocks.ravel(), (rows, cols)), shape=(n, n))


def weighted_mass(mesh: Mesh, weights: np.ndarray) -> sp.csr_matrix:
    """Full-dof matrix of ``int weights u . w dx`` for per-element weights."""
    kern = element_kernels(mesh)
    return _assemble_blocks(mesh, np.asarray(weights, dtype=float)[:, None, None] * kern.mass)


# ---------------------------------------------------------------------------
# Material
# ---------------------------------------------------------------------------

class MaterialField:
    """Per-element Lame parameters and restoration coefficient.

    Parameters
    ----------
    lam, mu, rho : float or array of length ``n_elements``
    delta0, M0 : float, optional
        Admissibility constants: ``mu >= delta0``, ``lam + 2 mu >= delta0``,
        ``max lam <= M0`` and ``max rho <= M0``. When omitted only strict
        positivity is enforced.
    rho_bounds : (a, b), optional
        Required range of ``rho``.
    """

    def __init__(self, lam, mu, rho, n_elements: int | None = None, *, delta0=None, M0=None,
                 rho_bounds=None):
        sizes = [np.size(v) for v in (lam, mu, rho) if np.ndim(v) > 0]
        if n_elements is None:
            if not sizes:
                raise MaterialError("n_elements is required when all coefficients are scalars")
            n_elements = sizes[0]
        self.n_elements = int(n_elements)
        arrays = []
        for name, v in (("lam", lam), ("mu", mu), ("rho", rho)):
            arr = np.broadcast_to(np.asarray(v, dtype=float), (self.n_elements,)).copy() \
                if np.ndim(v) == 0 else np.asarray(v, dtype=float).copy()
            if arr.shape != (self.n_elements,):
                raise MaterialError(f"{name} has {arr.size} values for {self.n_elements} elements")
            if not np.all(np.isfinite(arr)):
                raise MaterialError(f"{name} has non-finite values")
            arr.setflags(write=False)
            arrays.append(arr)
        self.lam, self.mu, self.rho = arrays
        self.delta0 = delta0
        self.M0 = M0
        self.rho_bounds = rho_bounds
        self.validate()

    @classmethod
    def uniform(cls, mesh: Mesh, lam=1.0, mu=1.0, rho=1.0, **kw) -> "MaterialField":
        return cls(lam, mu, rho, mesh.n_elements, **kw)

    @classmethod
    def from_partition(cls, partition, lam, mu, rho, outside=None, **kw) -> "MaterialField":
        """Piecewise-constant coefficients, one value (or scalar) per subdomain.

        ``outside`` supplies ``(lam, mu, rho)`` on elements in no subdomain.
        """
        fields = []
        for k, v in enumerate((lam, mu, rho)):
            if np.ndim(v) == 0:
                v = np.full(partition.n_subdomains, float(v))
            out = 0.0 if outside is None else outside[k]
            fields.append(partition.expand(v, outside=out))
        return cls(*fields, partition.n_elements, **kw)

    def validate(self):
        lam, mu, rho = self.lam, self.mu, self.rho
        if np.any(mu <= 0) or np.any(lam <= 0) or np.any(rho <= 0):
            raise MaterialError("lam, mu and rho must be strictly positive")
        if self.delta0 is not None:
            if self.delta0 <= 0:
                raise MaterialError("delta0 must be positive")
            if np.any(mu < self.delta0) or np.any(lam + 2 * mu < self.delta0):
                raise MaterialError("mu >= delta0 and lam + 2 mu >= delta0 violated")
        if self.M0 is not None and (lam.max() > self.M0 or rho.max() > self.M0):
            raise MaterialError("max(lam) <= M0 and max(rho) <= M0 violated")
        if self.rho_bounds is not None:
            a, b = self.rho_bounds
            if np.any(rho < a) or np.any(rho > b):
                raise MaterialError(f"rho outside [{a}, {b}]")

    def with_rho(self, rho) -> "MaterialField":
        return MaterialField(self.lam, self.mu, rho, self.n_elements, delta0=self.delta0, M0=self.M0)

    @cached_property
    def hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.lam, self.mu, self.rho):
            h.update(arr.tobytes())
        return h.hexdigest()[:16]

    def __repr__(self):
        return (f"MaterialField(n={self.n_elements}, lam=[{self.lam.min():.3g}, {self.lam.max():.3g}], "
                f"mu=[{self.mu.min():.3g}, {self.mu.max():.3g}], rho=[{self.rho.min():.3g}, {self.rho.max():.3g}])")


# ---------------------------------------------------------------------------
# System and solves
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class Displacement:
    """Nodal P1 displacement, ``values[node] = (ux, uy)``."""

    mesh: Mesh
    values: np.ndarray

    @property
    def full(self) -> np.ndarray:
        return self.values.reshape(-1)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "ux", "uy"])
        for n, (ux, uy) in enumerate(self.values.tolist()):
            w.writerow([n, repr(float(ux)), repr(float(uy))])
        return buf.getvalue()


class StiffnessSystem:
    """Factorized bilinear form restricted to the non-Dirichlet dofs."""

    def __init__(self, mesh: Mesh, material: MaterialField, basis: BoundaryLoadBasis | None = None):
        self.mesh = mesh
        self.material = material
        self.basis = basis if basis is not None else BoundaryLoadBasis(mesh)
        if self.basis.mesh is not mesh:
            raise ValueError("basis belongs to a different mesh")
        kern = element_kernels(mesh)
        blocks = (material.lam[:, None, None] * kern.k_div
                  + material.mu[:, None, None] * kern.k_strain
                  + material.rho[:, None, None] * kern.mass)
        self.full_matrix = _assemble_blocks(mesh, blocks)
        fixed = np.zeros(2 * mesh.n_nodes, dtype=bool)
        fixed[2 * mesh.dirichlet_nodes] = True
        fixed[2 * mesh.dirichlet_nodes + 1] = True
        self.free = np.flatnonzero(~fixed)
        self.matrix = self.full_matrix[self.free][:, self.free].tocsc()
        try:
            self._lu = spla.splu(self.matrix)
        except RuntimeError as exc:
            raise FactorizationError(str(exc)) from exc
        diag = self._lu.U.diagonal()
        if np.any(diag == 0) or not np.all(np.isfinite(diag)):
            raise FactorizationError("singular constrained stiffness matrix")

    @property
    def n_dofs(self) -> int:
        return 2 * self.mesh.n_nodes

    def solve_full(self, rhs_full: np.ndarray) -> np.ndarray:
        """Solve with a full-dof right-hand side; Dirichlet entries of the
        result are zero and Dirichlet entries of ``rhs_full`` are ignored."""
        rhs_full = np.asarray(rhs_full, dtype=float)
        if sp.issparse(rhs_full):
            rhs_full = rhs_full.toarray()
        out = np.zeros((self.n_dofs,) + rhs_full.shape[1:])
        out[self.free] = self._lu.solve(np.ascontiguousarray(rhs_full[self.free]))
        return out

    def energy(self, u_full: np.ndarray) -> float:
        return float(u_full @ (self.full_matrix @ u_full))

    def bilinear(self, u_full: np.ndarray, w_full: np.ndarray) -> float:
        return float(w_full @ (self.full_matrix @ u_full))


def assemble(mesh: Mesh, mat: MaterialField, basis: BoundaryLoadBasis | None = None) -> StiffnessSystem:
    if mat.n_elements != mesh.n_elements:
        raise MaterialError(f"material has {mat.n_elements} elements, mesh has {mesh.n_elements}")
    mat.validate()
    return StiffnessSystem(mesh, mat, basis)


def solve_forward(sys: StiffnessSystem, load: np.ndarray) -> Displacement:
    """Displacement for Neumann load coefficients in ``sys.basis``."""
    load = np.asarray(load, dtype=float)
    if load.shape != (sys.basis.size,):
        raise ValueError(f"load has shape {load.shape}, basis size is {sys.basis.size}")
    u = sys.solve_full(sys.basis.rhs(load))
    return Displacement(sys.mesh, u.reshape(-1, 2))


def solve_loads(sys: StiffnessSystem, loads: np.ndarray) -> np.ndarray:
    """Full-dof solutions for load coefficient columns ``(m, k)``."""
    rhs = sys.basis.load_matrix @ np.asarray(loads, dtype=float)
    return sys.solve_full(rhs)


# ---------------------------------------------------------------------------
# Energies
# ---------------------------------------------------------------------------

def _as_full(u) -> np.ndarray:
    if isinstance(u, Displacement):
        return u.full
    return np.asarray(u, dtype=float).reshape(-1)


def element_energies(mesh: Mesh, u) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-element ``int |div u|^2``, ``int |eps(u)|_F^2`` and ``int |u|^2``."""
    kern = element_kernels(mesh)
    ue = _as_full(u)[kern.dofs]
    div = np.einsum("ej,ej->e", kern.div, ue)
    eps = np.einsum("eij,ej->ei", kern.strain, ue)
    frob = eps[:, 0] ** 2 + eps[:, 1] ** 2 + 2.0 * eps[:, 2] ** 2
    l2 = np.einsum("ei,eij,ej->e", ue, kern.mass, ue)
    return kern.area * div ** 2, kern.area * frob, l2


def energy_densities(mesh: Mesh, u, region: Iterable[int] | None = None) -> tuple[float, float, float]:
    """``(int_R |div u|^2, int_R |eps(u)|_F^2, int_R |u|^2)`` over region ``R``.

    ``region=None`` integrates over the whole mesh.
    """
    div, strain, l2 = element_energies(mesh, u)
    if region is None:
        return float(div.sum()), float(strain.sum()), float(l2.sum())
    idx = np.asarray(list(region) if not isinstance(region, np.ndarray) else region, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= mesh.n_elements):
        raise ValueError("region element index out of range")
    return float(div[idx].sum()), float(strain[idx].sum()), float(l2[idx].sum())


def weighted_l2(mesh: Mesh, u, weights: np.ndarray) -> float:
    """``int w |u|^2 dx`` for per-element weights."""
    return float(np.dot(np.asarray(weights, dtype=float), element_energies(mesh, u)[2]))

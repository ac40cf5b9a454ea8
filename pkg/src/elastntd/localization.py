"""Virtual measurement operators, Runge approximation, localized potentials
and the CGNE construction of probing loads.

Fields on a region ``D`` are element-wise P1 vectors stored as ``(len(D), 6)``
arrays of vertex values ``[ux0, uy0, ux1, uy1, ux2, uy2]`` (continuity across
elements is not required). Scalar fields for the divergence operators are
element constants. Region inner products are exact L2(D) products.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import (P1_MASS, MaterialField, StiffnessSystem, assemble, element_energies, element_kernels,
                  solve_forward, solve_loads)
from .loads import BoundaryLoadBasis
from .mesh import Mesh, Partition, PartitionError, validate_probe_regions

log = logging.getLogger(__name__)

_MASS_CHOL = np.kron(np.linalg.cholesky(P1_MASS), np.eye(2))  # lower, per unit area


class ProbingLoadError(RuntimeError):
    """CGNE did not produce a positive certificate."""


def _region(elements: Iterable[int]) -> np.ndarray:
    return np.array(sorted(set(int(t) for t in elements)), dtype=np.int64)


# ---------------------------------------------------------------------------
# Region fields
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class RegionField:
    """Element-wise P1 vector field on ``region``."""

    region: np.ndarray
    values: np.ndarray

    @classmethod
    def zeros(cls, region) -> "RegionField":
        region = _region(region)
        return cls(region, np.zeros((len(region), 6)))

    @classmethod
    def restrict(cls, mesh: Mesh, u_full: np.ndarray, region) -> "RegionField":
        region = _region(region)
        return cls(region, gather(mesh, np.asarray(u_full).reshape(-1), region))

    def norm2(self, mesh: Mesh) -> float:
        return region_inner(mesh, self.region, self.values, self.values)

    def on(self, elements) -> np.ndarray:
        """Values on a subset of the region's elements."""
        pos = np.searchsorted(self.region, _region(elements))
        return self.values[pos]


def gather(mesh: Mesh, u_full: np.ndarray, region: np.ndarray) -> np.ndarray:
    return np.asarray(u_full)[element_kernels(mesh).dofs[region]]


def region_inner(mesh: Mesh, region: np.ndarray, f: np.ndarray, h: np.ndarray) -> float:
    kern = element_kernels(mesh)
    return float(np.einsum("ei,eij,ej->", f, kern.mass[region], h))


def region_rhs(mesh: Mesh, region: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Full-dof load vector of ``int_D f . w dx``."""
    kern = element_kernels(mesh)
    out = np.zeros(2 * mesh.n_nodes)
    np.add.at(out, kern.dofs[region], np.einsum("eij,ej->ei", kern.mass[region], f))
    return out


def region_div_rhs(mesh: Mesh, region: np.ndarray, F: np.ndarray) -> np.ndarray:
    """Full-dof load vector of ``int_D F div(w) dx`` for element-constant ``F``."""
    kern = element_kernels(mesh)
    out = np.zeros(2 * mesh.n_nodes)
    np.add.at(out, kern.dofs[region], (kern.area[region] * np.asarray(F))[:, None] * kern.div[region])
    return out


def gather_div(mesh: Mesh, u_full: np.ndarray, region: np.ndarray) -> np.ndarray:
    kern = element_kernels(mesh)
    return np.einsum("ej,ej->e", kern.div[region], np.asarray(u_full)[kern.dofs[region]])


# ---------------------------------------------------------------------------
# Virtual measurement operators
# ---------------------------------------------------------------------------

class OpKind(str, Enum):
    RUNGE_A = "RUNGE_A"
    T_DIV = "T_DIV"
    Z_L2 = "Z_L2"
    H_LOCAL = "H_LOCAL"


class VirtualMeasurementOp:
    """Interior source on ``region`` mapped to the Neumann trace of the response.

    ``apply(f)`` solves the forward problem with the volume load ``f`` (paired
    with ``w`` for the vector kinds, with ``div w`` for ``T_DIV``) and returns
    the trace coefficients. ``adjoint(g)`` returns ``u|_D`` (vector kinds) or
    ``div u|_D`` (``T_DIV``) for the Neumann load ``g``.
    """

    def __init__(self, kind: OpKind | str, region, system: StiffnessSystem):
        self.kind = OpKind(kind)
        self.region = _region(region)
        self.system = system
        self.mesh = system.mesh
        self.basis = system.basis

    @classmethod
    def h_local(cls, mesh: Mesh, partition: Partition, j: int, k: int, a: float, b: float, region,
                lam=1.0, mu=1.0, basis: BoundaryLoadBasis | None = None) -> "VirtualMeasurementOp":
        dens = build_test_density(partition, j, k, a, b)
        sys = assemble(mesh, MaterialField(lam, mu, dens.field, mesh.n_elements), basis)
        return cls(OpKind.H_LOCAL, region, sys)

    @property
    def is_scalar(self) -> bool:
        return self.kind is OpKind.T_DIV

    def field_shape(self) -> tuple:
        return (len(self.region),) if self.is_scalar else (len(self.region), 6)

    def apply(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=float).reshape(self.field_shape())
        rhs = (region_div_rhs if self.is_scalar else region_rhs)(self.mesh, self.region, f)
        return self.basis.trace(self.system.solve_full(rhs))

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        u = solve_forward(self.system, g).full
        return (gather_div if self.is_scalar else gather)(self.mesh, u, self.region)

    def boundary_inner(self, c1: np.ndarray, c2: np.ndarray) -> float:
        return self.basis.inner(c1, c2)

    def region_inner(self, f: np.ndarray, h: np.ndarray) -> float:
        if self.is_scalar:
            area = element_kernels(self.mesh).area[self.region]
            return float(np.sum(area * f * h))
        return region_inner(self.mesh, self.region, f, h)

    def adjoint_defect(self, f: np.ndarray, g: np.ndarray) -> float:
        """``|<op f, g>_{Gamma_N} - <f, adj g>_D|``."""
        return abs(self.boundary_inner(self.apply(f), g) - self.region_inner(f, self.adjoint(g)))

    def region_norm(self, f: np.ndarray) -> float:
        return math.sqrt(max(self.region_inner(f, f), 0.0))


# ---------------------------------------------------------------------------
# Runge approximation and local solutions
# ---------------------------------------------------------------------------

def _whitening(mesh: Mesh, region: np.ndarray) -> np.ndarray:
    """Per-element factors ``L_e`` with ``M_e = L_e L_e^T``."""
    area = element_kernels(mesh).area[region]
    return np.sqrt(area)[:, None, None] * _MASS_CHOL[None]


def runge_approximate(mesh: Mesh, mat, target: RegionField, basis: BoundaryLoadBasis | None = None,
                      subspace: np.ndarray | None = None, rcond: float | None = None):
    """Least-squares fit of ``u^g|_D`` to ``target`` over the load space.

    Parameters
    ----------
    mat : MaterialField or StiffnessSystem
    subspace : (m, m_c) array, optional
        Restrict loads to ``g = subspace @ y`` (e.g. a coarse prolongation).
    rcond : float, optional
        Relative singular-value cutoff for the whitened least-squares solve.

    Returns
    -------
    load : ndarray
        Minimum-norm minimizer (coefficients in ``basis``).
    residual : float
        ``||u^load|_D - target||_{L2(D)}``.
    """
    sys = mat if isinstance(mat, StiffnessSystem) else assemble(mesh, mat, basis)
    basis = sys.basis
    P = np.eye(basis.size) if subspace is None else np.asarray(subspace, dtype=float)
    region = target.region
    U = solve_loads(sys, P)
    K = gather(mesh, U, region)                      # (nD, 6, m_c)
    L = _whitening(mesh, region)
    W = np.einsum("eji,ejc->eic", L, K).reshape(-1, P.shape[1])
    rhs = np.einsum("eji,ej->ei", L, target.values).ravel()
    gram = P.T @ basis.gram @ P
    try:
        chol = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("load subspace Gram matrix is singular") from exc
    Wt = sla.solve_triangular(chol, W.T, lower=True).T        # W L^{-T}
    y, _, rank, _ = sla.lstsq(Wt, rhs, cond=rcond)
    if rank == 0:
        raise np.linalg.LinAlgError("normal equations are singular: load space does not reach the region")
    coarse = sla.solve_triangular(chol.T, y, lower=False)
    resid = float(np.linalg.norm(Wt @ y - rhs))
    return P @ coarse, resid


def _edge_tractions(mesh: Mesh, edges: np.ndarray, edge_load) -> np.ndarray:
    if edge_load is None:
        return mesh.edge_normals(edges)
    t = np.asarray(edge_load, dtype=float)
    if t.shape == (2,):
        t = np.broadcast_to(t, (len(edges), 2))
    if t.shape != (len(edges), 2):
        raise ValueError(f"edge_load needs shape ({len(edges)}, 2)")
    return t


def local_neumann_solution(mesh: Mesh, mat: MaterialField, region, edge_load=None) -> RegionField:
    """Solve the pure-traction problem on ``region`` alone.

    ``edge_load`` gives one constant traction per boundary edge of the region
    (ordered as ``mesh.region_boundary_edges``), a single vector for all
    edges, or ``None`` for the unit outward normal.
    """
    region = _region(region)
    edges = mesh.region_boundary_edges(region)
    traction = _edge_tractions(mesh, edges, edge_load)
    if not np.any(traction):
        raise ValueError("edge load must not vanish")
    kern = element_kernels(mesh)
    blocks = (mat.lam[region, None, None] * kern.k_div[region]
              + mat.mu[region, None, None] * kern.k_strain[region]
              + mat.rho[region, None, None] * kern.mass[region])
    dofs = kern.dofs[region]
    local, inv = np.unique(dofs, return_inverse=True)
    inv = inv.reshape(dofs.shape)
    n = len(local)
    S = sp.csc_matrix((blocks.ravel(), (np.repeat(inv, 6, axis=1).ravel(), np.tile(inv, (1, 6)).ravel())),
                      shape=(n, n))
    f_full = np.zeros(2 * mesh.n_nodes)
    length = np.linalg.norm(mesh.nodes[edges[:, 1]] - mesh.nodes[edges[:, 0]], axis=1)
    for (a, b), t, h in zip(edges.tolist(), traction, length):
        for v in (a, b):
            f_full[2 * v:2 * v + 2] += 0.5 * h * t
    phi_local = spla.spsolve(S, f_full[local])
    phi_full = np.zeros(2 * mesh.n_nodes)
    phi_full[local] = phi_local
    return RegionField.restrict(mesh, phi_full, region)


def _phi_on(mesh: Mesh, mat: MaterialField, excited, silent, edge_load=None) -> RegionField:
    excited, silent = _region(excited), _region(silent)
    local = local_neumann_solution(mesh, mat, excited, edge_load)
    out = RegionField.zeros(np.concatenate([excited, silent]))
    out.values[np.searchsorted(out.region, excited)] = local.values
    return out


def local_solution_phi(mesh: Mesh, mat: MaterialField, d1, d2, edge_load=None) -> RegionField:
    """Local solution on ``D1`` driven by ``edge_load``, extended by zero on ``D2``."""
    regions = validate_probe_regions(mesh, d1, d2)
    return _phi_on(mesh, mat, regions.d1_elements, regions.d2_elements, edge_load)


# ---------------------------------------------------------------------------
# Localized potentials
# ---------------------------------------------------------------------------

@dataclass
class LocalizedLevel:
    step: int
    n_loads: int
    load: np.ndarray
    d1_energy: float
    d2_energy: float
    d1_unscaled: float
    d2_unscaled: float
    residual: float
    perfect: bool = False

    @property
    def ratio(self) -> float:
        if self.perfect or self.d2_energy == 0.0:
            return math.inf
        return self.d1_energy / self.d2_energy


PERFECT_RATIO = 1e20


def localized_sequence(mesh: Mesh, mat: MaterialField, d1, d2, n_levels: int = 3,
                       basis: BoundaryLoadBasis | None = None, edge_load=None, finest_step: int = 1) -> list:
    """Runge fits to a local solution on nested load spaces, quarter-power scaled.

    Level ``l`` (0-based) uses hats on every ``finest_step * 2 ** (n_levels - 1 - l)``-th
    Neumann node along each boundary chain. Each fitted load is divided by the
    fourth root of its ``D2`` energy. A level whose unscaled ``D2`` energy is
    zero, or below ``D1 energy / PERFECT_RATIO`` (round-off level), is kept
    unscaled with ``perfect=True``.
    """
    if n_levels < 2:
        raise ValueError("at least two levels are required")
    if finest_step < 1:
        raise ValueError("finest_step must be >= 1")
    regions = validate_probe_regions(mesh, d1, d2)
    sys = assemble(mesh, mat, basis)
    basis = sys.basis
    phi = _phi_on(mesh, mat, regions.d1_elements, regions.d2_elements, edge_load)
    levels = []
    for lev in range(n_levels):
        step = finest_step * 2 ** (n_levels - 1 - lev)
        P = basis.coarse_prolongation(step)
        g_fit, resid = runge_approximate(mesh, sys, phi, subspace=P)
        _, _, l2 = element_energies(mesh, solve_forward(sys, g_fit).full)
        e1, e2 = float(l2[regions.d1_elements].sum()), float(l2[regions.d2_elements].sum())
        if e2 == 0.0 or e1 > PERFECT_RATIO * e2:
            log.info("level %d: D2 energy at round-off, load is an exact localizer", lev)
            levels.append(LocalizedLevel(step, P.shape[1], g_fit, e1, e2, e1, e2, resid, True))
            continue
        g = g_fit / e2 ** 0.25
        _, _, l2s = element_energies(mesh, solve_forward(sys, g).full)
        levels.append(LocalizedLevel(step, P.shape[1], g, float(l2s[regions.d1_elements].sum()),
                                     float(l2s[regions.d2_elements].sum()), e1, e2, resid))
    return levels


def _response_forms(mesh: Mesh, sys: StiffnessSystem, regions, kind: str):
    U = solve_loads(sys, np.eye(sys.basis.size))
    kern = element_kernels(mesh)
    forms = []
    for reg in (regions.d1_elements, regions.d2_elements):
        if kind == "div":
            dv = np.einsum("ej,ejm->em", kern.div[reg], U[kern.dofs[reg]])
            forms.append(dv.T @ (kern.area[reg][:, None] * dv))
        elif kind == "l2":
            ue = U[kern.dofs[reg]]
            forms.append(np.einsum("eim,eij,ejn->mn", ue, kern.mass[reg], ue))
        else:
            raise ValueError(f"unknown energy kind {kind!r}")
    return forms


def rayleigh_localized_load(mesh: Mesh, mat: MaterialField, d1, d2, epsilon: float, kind: str = "div",
                            basis: BoundaryLoadBasis | None = None):
    """Maximize ``E1(g) / (E2(g) + epsilon ||g||^2)`` over the load space.

    ``kind="div"`` uses ``E_i = int_{D_i} |div u|^2``, ``kind="l2"`` uses
    ``int_{D_i} |u|^2``. Returns ``(load, E1 / E2)`` with the load of unit
    B-norm and sign fixed so its largest-magnitude entry is positive.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    regions = validate_probe_regions(mesh, d1, d2)
    sys = assemble(mesh, mat, basis)
    B = sys.basis.gram
    q1, q2 = _response_forms(mesh, sys, regions, kind)
    q1, q2 = 0.5 * (q1 + q1.T), 0.5 * (q2 + q2.T)
    _, vec = sla.eigh(q1, q2 + epsilon * B)
    g = vec[:, -1]
    g = g / math.sqrt(g @ B @ g)
    if g[np.argmax(np.abs(g))] < 0:
        g = -g
    e1, e2 = float(g @ q1 @ g), float(g @ q2 @ g)
    return g, (math.inf if e2 <= 0 else e1 / e2)


def div_localized_load(mesh: Mesh, mat: MaterialField, d1, d2, epsilon: float,
                       basis: BoundaryLoadBasis | None = None) -> np.ndarray:
    """Load concentrating divergence energy on ``D1`` and suppressing it on ``D2``."""
    return rayleigh_localized_load(mesh, mat, d1, d2, epsilon, "div", basis)[0]


def l2_localized_load(mesh: Mesh, mat: MaterialField, d1, d2, epsilon: float,
                      basis: BoundaryLoadBasis | None = None) -> np.ndarray:
    return rayleigh_localized_load(mesh, mat, d1, d2, epsilon, "l2", basis)[0]


# ---------------------------------------------------------------------------
# Test densities, certificates and probing loads
# ---------------------------------------------------------------------------

def n_levels_K(a: float, b: float) -> int:
    """``floor(5 (b/a - 1)) + 1``, with near-integers snapped before flooring."""
    if not 0 < a < b:
        raise ValueError(f"need 0 < a < b, got a={a}, b={b}")
    x = 5.0 * (b - a) / a
    r = round(x)
    if abs(x - r) < 1e-9 * max(1.0, abs(x)):
        x = r
    return int(math.floor(x)) + 1


@dataclass(frozen=True, eq=False)
class TestDensity:
    j: int
    k: int
    a: float
    b: float
    K: int
    field: np.ndarray

    @property
    def inside_value(self) -> float:
        return (self.k + 6) * self.a / 5

    @property
    def outside_value(self) -> float:
        return 3 * self.a / 5


def build_test_density(partition: Partition, j: int, k: int, a: float, b: float) -> TestDensity:
    """``(k + 6) a / 5`` on ``S_j``, ``3 a / 5`` on the rest of the support,
    zero off the support."""
    K = n_levels_K(a, b)
    if not 1 <= k <= K:
        raise ValueError(f"k={k} outside 1..{K}")
    partition.elements_of(j)
    lab = partition.labels
    f = np.where(lab == j, (k + 6) * a / 5, np.where(lab != 0, 3 * a / 5, 0.0))
    f.setflags(write=False)
    return TestDensity(j, k, a, b, K, f)


def bracket_level(rho_j: float, a: float, b: float) -> int:
    """The ``k`` with ``(k + 4) a / 5 <= rho_j < (k + 5) a / 5``."""
    K = n_levels_K(a, b)
    if not a <= rho_j <= b:
        raise ValueError(f"rho_j={rho_j} outside [{a}, {b}]")
    k = int(math.floor(5 * rho_j / a)) - 4
    while k > 1 and (k + 4) * a / 5 > rho_j:
        k -= 1
    while (k + 5) * a / 5 <= rho_j:
        k += 1
    return min(max(k, 1), K)


def certificate_weight(a: float, b: float) -> float:
    return 5 * b / (2 * a) - 1.5


def certificate_I(mesh: Mesh, partition: Partition, j: int, u, a: float, b: float) -> float:
    """``1/2 int_{S_j} |u|^2 - (5b/(2a) - 3/2) int_{S \\ S_j} |u|^2``."""
    l2 = element_energies(mesh, u)[2]
    inside = float(l2[partition.elements_of(j)].sum())
    outside = float(l2[partition.complement_of(j)].sum())
    return 0.5 * inside - certificate_weight(a, b) * outside


def _point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = b - a
    t = np.clip(np.einsum("ij,ij->i", p[None] - a, d) / np.einsum("ij,ij->i", d, d), 0.0, 1.0)
    return np.linalg.norm(p[None] - (a + t[:, None] * d), axis=1)


def choose_probe_cell(mesh: Mesh, partition: Partition, j: int) -> np.ndarray:
    """Elements of the boundary-adjacent cell of ``S_j`` nearest the Neumann
    boundary; ties go to the cell holding the lowest element index."""
    sub = partition.elements_of(j)
    in_support = np.zeros(mesh.n_elements, dtype=bool)
    in_support[partition.support] = True
    edges = mesh.neumann_edges
    ea, eb = mesh.nodes[edges[:, 0]], mesh.nodes[edges[:, 1]]
    best = None
    cells = mesh.element_cell[sub]
    for cell in np.unique(cells).tolist():
        members = sub[cells == cell]
        on_boundary = False
        for t in members.tolist():
            a, b_, c = mesh.elements[t].tolist()
            for e in ((a, b_), (b_, c), (c, a)):
                key = (min(e), max(e))
                if sum(in_support[o] for o in mesh.edge_elements[key]) == 1:
                    on_boundary = True
        if not on_boundary:
            continue
        centre = mesh.centroids[members].mean(axis=0)
        dist = float(_point_segment_distance(centre, ea, eb).min())
        key = (round(dist, 12), int(members.min()))
        if best is None or key < best[0]:
            best = (key, members)
    if best is None:
        raise PartitionError(f"subdomain {j} does not touch the support boundary")
    return best[1]


@dataclass
class ProbingLoad:
    j: int
    k: int
    a: float
    b: float
    load: np.ndarray
    certificate: float
    cgne_iterations: int
    normalized: bool
    norm2: float
    raw_certificate: float = float("nan")
    mesh_hash: str = ""
    residuals: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"j": self.j, "k": self.k, "a": self.a, "b": self.b, "mesh_hash": self.mesh_hash,
                "load": [float(v) for v in self.load], "I": self.certificate,
                "raw_I": self.raw_certificate, "iterations": self.cgne_iterations,
                "normalized": self.normalized, "norm2": self.norm2}

    @classmethod
    def from_dict(cls, d: dict) -> "ProbingLoad":
        return cls(int(d["j"]), int(d["k"]), float(d["a"]), float(d["b"]), np.array(d["load"], dtype=float),
                   float(d["I"]), int(d["iterations"]), bool(d["normalized"]), float(d["norm2"]),
                   float(d.get("raw_I", float("nan"))), d.get("mesh_hash", ""))


def _cgne(apply_op, apply_adj, target: np.ndarray, inner_dom, inner_rng, max_iter: int, on_iterate, tol: float):
    """CGNE (CGLS) for ``apply_op(x) = target`` in weighted inner products.

    ``on_iterate(n, x, u_x)`` is called after every update with the iterate
    and the accumulated forward response; iteration stops when it returns True.
    ``apply_op`` returns ``(range_value, response)``.
    """
    x = None
    r = target.copy()
    s = apply_adj(r)
    p = s.copy()
    gamma = inner_dom(s, s)
    gamma0 = gamma
    x = np.zeros_like(s)
    u_x = None
    history = [math.sqrt(max(inner_rng(r, r), 0.0))]
    for n in range(1, max_iter + 1):
        if gamma <= (tol ** 2) * gamma0 or gamma == 0.0:
            return x, n - 1, history, False
        q, u_p = apply_op(p)
        alpha = gamma / inner_rng(q, q)
        x = x + alpha * p
        u_x = alpha * u_p if u_x is None else u_x + alpha * u_p
        r = r - alpha * q
        history.append(math.sqrt(max(inner_rng(r, r), 0.0)))
        if on_iterate(n, x, u_x):
            return x, n, history, True
        s = apply_adj(r)
        gamma_new = inner_dom(s, s)
        p = s + (gamma_new / gamma) * p
        gamma = gamma_new
    return x, max_iter, history, False


def construct_probing_load(mesh: Mesh, partition: Partition, j: int, k: int, a: float, b: float,
                           max_iter: int = 500, lam=1.0, mu=1.0, basis: BoundaryLoadBasis | None = None,
                           tol: float = 1e-14) -> ProbingLoad:
    """Build the probing load for subdomain ``j`` at contrast level ``k``.

    CGNE is run on ``u^g|_D = Phi`` under the test density, where
    ``D = B + (S \\ S_j)``, ``B`` is a boundary cell of ``S_j`` and ``Phi`` is
    a local traction solution on ``B`` extended by zero. The first iterate with
    a positive certificate is rescaled so the certificate equals one.

    Raises
    ------
    PartitionError
        The partition does not cover the mesh or ``S_j`` misses the support boundary.
    ProbingLoadError
        No positive certificate within ``max_iter`` iterations.
    """
    if not partition.covers_mesh:
        raise PartitionError("probing loads need a partition covering the whole mesh")
    if not partition.touches_support_boundary[j - 1]:
        raise PartitionError(f"subdomain {j} does not touch the support boundary")
    dens = build_test_density(partition, j, k, a, b)
    mat = MaterialField(lam, mu, dens.field, mesh.n_elements)
    sys = assemble(mesh, mat, basis)
    basis = sys.basis
    cell = choose_probe_cell(mesh, partition, j)
    rest = partition.complement_of(j)
    phi = _phi_on(mesh, mat, cell, rest)
    region = phi.region

    def apply_op(p):
        u_p = solve_forward(sys, p).full
        return gather(mesh, u_p, region), u_p

    def apply_adj(r):
        return basis.trace(sys.solve_full(region_rhs(mesh, region, r)))

    found = {}

    def on_iterate(n, x, u_x):
        cert = certificate_I(mesh, partition, j, u_x, a, b)
        if cert > 0:
            found["I"] = cert
            return True
        return False

    x, n_iter, history, ok = _cgne(apply_op, apply_adj, phi.values,
                                   basis.inner, lambda f, h: region_inner(mesh, region, f, h),
                                   max_iter, on_iterate, tol)
    if not ok:
        raise ProbingLoadError(f"(j={j}, k={k}): no positive certificate after {n_iter} CGNE iterations")
    raw = found["I"]
    g = x / math.sqrt(raw)
    cert = certificate_I(mesh, partition, j, solve_forward(sys, g).full, a, b)
    return ProbingLoad(j, k, a, b, g, cert, n_iter, True, basis.norm2(g), raw, mesh.hash, history)


@dataclass
class ProbingLoadSet:
    a: float
    b: float
    n_subdomains: int
    K: int
    mesh_hash: str
    lam: float = 1.0
    mu: float = 1.0
    loads: dict = field(default_factory=dict)

    def missing(self) -> list:
        return [(j, k) for j in range(1, self.n_subdomains + 1) for k in range(1, self.K + 1)
                if (j, k) not in self.loads]

    def __len__(self):
        return len(self.loads)

    def to_dict(self) -> dict:
        return {"a": self.a, "b": self.b, "N": self.n_subdomains, "K": self.K, "mesh_hash": self.mesh_hash,
                "lam": self.lam, "mu": self.mu,
                "loads": [self.loads[key].to_dict() for key in sorted(self.loads)]}

    @classmethod
    def from_dict(cls, d: dict) -> "ProbingLoadSet":
        out = cls(float(d["a"]), float(d["b"]), int(d["N"]), int(d["K"]), d["mesh_hash"],
                  float(d.get("lam", 1.0)), float(d.get("mu", 1.0)))
        for item in d["loads"]:
            pl = ProbingLoad.from_dict(item)
            out.loads[(pl.j, pl.k)] = pl
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_json(cls, text: str) -> "ProbingLoadSet":
        return cls.from_dict(json.loads(text))


def construct_all(mesh: Mesh, partition: Partition, a: float, b: float, lam=1.0, mu=1.0, max_iter: int = 500,
                  basis: BoundaryLoadBasis | None = None, existing: ProbingLoadSet | None = None,
                  workers: int = 1, tol: float = 1e-14) -> ProbingLoadSet:
    """Probing loads for all ``(j, k)``; entries already in ``existing`` are kept."""
    basis = basis or BoundaryLoadBasis(mesh)
    K = n_levels_K(a, b)
    if existing is not None and (existing.mesh_hash != mesh.hash or existing.a != a or existing.b != b
                                 or existing.n_subdomains != partition.n_subdomains):
        existing = None
    out = ProbingLoadSet(a, b, partition.n_subdomains, K, mesh.hash, float(np.mean(lam)), float(np.mean(mu)))
    if existing is not None:
        out.loads.update(existing.loads)
    todo = out.missing()

    def job(jk):
        return construct_probing_load(mesh, partition, jk[0], jk[1], a, b, max_iter, lam, mu, basis, tol)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(job, todo))
    else:
        results = [job(jk) for jk in todo]
    for pl in results:
        out.loads[(pl.j, pl.k)] = pl
    return out

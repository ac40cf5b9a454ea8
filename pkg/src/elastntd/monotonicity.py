"""Monotonicity sandwiches and the comparison functionals J, Psi and Phi.

All energies are computed from the discrete P1 solutions, for which the
sandwich inequalities hold exactly up to round-off.
"""
from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass

import numpy as np

from .fem import MaterialField, MaterialError, StiffnessSystem, assemble, element_energies, solve_forward
from .loads import BoundaryLoadBasis
from .mesh import Mesh

REL_TOL = 1e-9


@dataclass(frozen=True)
class SandwichReport:
    upper_bound: float
    middle: float
    lower_bound: float

    @property
    def scale(self) -> float:
        return max(abs(self.upper_bound), abs(self.middle), abs(self.lower_bound))

    @property
    def upper_slack(self) -> float:
        return self.upper_bound - self.middle

    @property
    def lower_slack(self) -> float:
        return self.middle - self.lower_bound

    def holds(self, rel_tol: float = REL_TOL) -> bool:
        tol = rel_tol * self.scale
        return self.upper_slack >= -tol and self.lower_slack >= -tol


def _system(mesh: Mesh, mat, basis):
    if isinstance(mat, StiffnessSystem):
        return mat
    return assemble(mesh, mat, basis)


def _boundary_work(sys: StiffnessSystem, g: np.ndarray, u_full: np.ndarray) -> float:
    """``<g, Lambda g> = int_{Gamma_N} g . u ds``."""
    return float(sys.basis.rhs(g) @ u_full)


def sandwich_rho(mesh: Mesh, mat1: MaterialField, mat2: MaterialField, g: np.ndarray,
                 basis: BoundaryLoadBasis | None = None) -> SandwichReport:
    """Density-only sandwich for coefficient sets differing only in ``rho``.

    ``upper = int (rho1 - rho2)|u2|^2``, ``middle = <g, L2 g> - <g, L1 g>``,
    ``lower = int (rho1 - rho2)|u1|^2``.
    """
    if not (np.array_equal(mat1.lam, mat2.lam) and np.array_equal(mat1.mu, mat2.mu)):
        raise MaterialError("sandwich_rho needs identical lam and mu")
    basis = basis or BoundaryLoadBasis(mesh)
    s1, s2 = assemble(mesh, mat1, basis), assemble(mesh, mat2, basis)
    u1 = solve_forward(s1, g).full
    u2 = solve_forward(s2, g).full
    drho = mat1.rho - mat2.rho
    upper = float(drho @ element_energies(mesh, u2)[2])
    lower = float(drho @ element_energies(mesh, u1)[2])
    middle = _boundary_work(s2, g, u2) - _boundary_work(s1, g, u1)
    return SandwichReport(upper, middle, lower)


def _three_term(mesh: Mesh, mat1: MaterialField, mat2: MaterialField, u_full: np.ndarray) -> float:
    div, strain, l2 = element_energies(mesh, u_full)
    return float((mat1.lam - mat2.lam) @ div + 2.0 * (mat1.mu - mat2.mu) @ strain
                 + (mat1.rho - mat2.rho) @ l2)


def sandwich_full(mesh: Mesh, mat1: MaterialField, mat2: MaterialField, g: np.ndarray,
                  basis: BoundaryLoadBasis | None = None) -> SandwichReport:
    """Three-coefficient sandwich; bounds evaluated with ``u2`` (upper) and ``u1`` (lower)."""
    basis = basis or BoundaryLoadBasis(mesh)
    s1, s2 = assemble(mesh, mat1, basis), assemble(mesh, mat2, basis)
    u1 = solve_forward(s1, g).full
    u2 = solve_forward(s2, g).full
    middle = _boundary_work(s2, g, u2) - _boundary_work(s1, g, u1)
    return SandwichReport(_three_term(mesh, mat1, mat2, u2), middle, _three_term(mesh, mat1, mat2, u1))


def shifted_bound(mesh: Mesh, mat: MaterialField, delta: np.ndarray, g: np.ndarray,
                  basis: BoundaryLoadBasis | None = None) -> tuple[float, float]:
    """Return ``(int delta |u_rho|^2, int delta |u_{rho+delta}|^2)``.

    For ``delta >= 0`` the first value dominates the second.
    """
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0):
        raise ValueError("delta must be non-negative")
    basis = basis or BoundaryLoadBasis(mesh)
    u0 = solve_forward(assemble(mesh, mat, basis), g).full
    u1 = solve_forward(assemble(mesh, mat.with_rho(mat.rho + delta), basis), g).full
    return float(delta @ element_energies(mesh, u0)[2]), float(delta @ element_energies(mesh, u1)[2])


def j_functional(mesh: Mesh, g: np.ndarray, zeta: np.ndarray, tau, basis: BoundaryLoadBasis | None = None) -> float:
    """``J(g, zeta, tau) = int zeta |u_tau^g|^2 dx`` with per-element ``zeta``.

    ``tau`` is a MaterialField or an already assembled StiffnessSystem.
    """
    sys = _system(mesh, tau, basis)
    u = solve_forward(sys, g).full
    return float(np.asarray(zeta, dtype=float) @ element_energies(mesh, u)[2])


def psi_functional(mesh: Mesh, g: np.ndarray, weights, mat, basis: BoundaryLoadBasis | None = None) -> float:
    """``int a |div u|^2 + 2 int b |eps(u)|_F^2 + int c |u|^2`` for ``weights = (a, b, c)``.

    The divergence term is squared, matching the monotonicity estimate it
    bounds.
    """
    wa, wb, wc = (np.broadcast_to(np.asarray(w, dtype=float), (mesh.n_elements,)) for w in weights)
    sys = _system(mesh, mat, basis)
    div, strain, l2 = element_energies(mesh, solve_forward(sys, g).full)
    return float(wa @ div + 2.0 * (wb @ strain) + wc @ l2)


def phi_functional(mesh: Mesh, g: np.ndarray, weights, mat_a, mat_b,
                   basis: BoundaryLoadBasis | None = None) -> float:
    """``max(Psi(g, w, mat_a), Psi(g, -w, mat_b))``."""
    neg = tuple(-np.asarray(w, dtype=float) for w in weights)
    return max(psi_functional(mesh, g, weights, mat_a, basis),
               psi_functional(mesh, g, neg, mat_b, basis))


# ---------------------------------------------------------------------------
# Batch verification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SandwichRow:
    suite: str
    pair_id: int
    load_id: int
    upper_bound: float
    middle: float
    lower_bound: float
    upper_slack: float
    lower_slack: float
    passed: bool


def verify_pairs(mesh: Mesh, pairs, loads, suite: str = "full", basis: BoundaryLoadBasis | None = None,
                 rel_tol: float = REL_TOL) -> list:
    """Evaluate a sandwich for every ``(pair, load)`` combination."""
    basis = basis or BoundaryLoadBasis(mesh)
    fn = {"rho": sandwich_rho, "full": sandwich_full}[suite]
    rows = []
    for pid, (m1, m2) in enumerate(pairs):
        for lid, g in enumerate(loads):
            rep = fn(mesh, m1, m2, g, basis)
            rows.append(SandwichRow(suite, pid, lid, rep.upper_bound, rep.middle, rep.lower_bound,
                                    rep.upper_slack, rep.lower_slack, rep.holds(rel_tol)))
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if not rows:
        return ""
    header = list(asdict(rows[0]).keys())
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
    return buf.getvalue()

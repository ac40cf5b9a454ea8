"""Galerkin matrix of the Neumann-to-Dirichlet map and its operator norms."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .fem import StiffnessSystem, solve_loads
from .loads import BoundaryLoadBasis

__all__ = ["BoundaryLoadBasis", "NtDMatrix", "assemble_ntd", "ntd_operator_norm",
           "ntd_norm_maximizer", "b_weighted_eigenvalues"]

SYMMETRY_TOL = 1e-10


class NtDAsymmetryError(RuntimeError):
    pass


@dataclass(eq=False)
class NtDMatrix:
    """``matrix[p, q] = int_{Gamma_N} phi_p . u^{phi_q} ds``.

    For load coefficients ``c`` the boundary work is ``<g, Lambda g> = c @ matrix @ c``.
    """

    matrix: np.ndarray
    basis: BoundaryLoadBasis
    asymmetry: float = 0.0
    material_hash: str = ""

    def __sub__(self, other: "NtDMatrix") -> "NtDMatrix":
        if other.basis is not self.basis and not np.array_equal(other.basis.pairs, self.basis.pairs):
            raise ValueError("NtD matrices use different bases")
        return NtDMatrix(self.matrix - other.matrix, self.basis)

    def quadratic(self, c: np.ndarray) -> float:
        c = np.asarray(c, dtype=float)
        return float(c @ self.matrix @ c)

    def apply(self, c: np.ndarray) -> np.ndarray:
        """Coefficients of ``Lambda g`` (the boundary trace)."""
        return np.linalg.solve(self.basis.gram, self.matrix @ np.asarray(c, dtype=float))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in self.matrix.tolist():
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {
            "mesh_hash": self.basis.mesh.hash,
            "material_hash": self.material_hash,
            "basis": [[int(n), "xy"[c]] for n, c in self.basis.pairs.tolist()],
            "size": int(self.matrix.shape[0]),
            "asymmetry": self.asymmetry,
        }

    def save(self, stem) -> None:
        """Write ``<stem>.csv`` and the ``<stem>.json`` sidecar."""
        from pathlib import Path
        stem = Path(stem)
        stem.with_suffix(".csv").write_text(self.to_csv())
        stem.with_suffix(".json").write_text(json.dumps(self.sidecar(), indent=2))


def assemble_ntd(sys: StiffnessSystem, basis: BoundaryLoadBasis | None = None) -> NtDMatrix:
    """One forward solve per basis load, traces integrated against the basis."""
    basis = sys.basis if basis is None else basis
    if basis.mesh is not sys.mesh:
        raise ValueError("system and basis come from different meshes")
    if basis is not sys.basis:
        rhs = basis.load_matrix.toarray()
        u = sys.solve_full(rhs)
    else:
        u = solve_loads(sys, np.eye(basis.size))
    lam = basis.gram @ basis.trace(u)
    scale = max(np.abs(lam).max(), np.finfo(float).tiny)
    asym = float(np.abs(lam - lam.T).max() / scale)
    if asym > SYMMETRY_TOL:
        raise NtDAsymmetryError(f"NtD matrix asymmetry {asym:.3e} exceeds {SYMMETRY_TOL:g}")
    lam = 0.5 * (lam + lam.T)
    return NtDMatrix(lam, basis, asym, sys.material.hash)


def _as_array(delta) -> np.ndarray:
    return delta.matrix if isinstance(delta, NtDMatrix) else np.asarray(delta, dtype=float)


def _whitened(delta, basis: BoundaryLoadBasis) -> tuple[np.ndarray, np.ndarray]:
    d = _as_array(delta)
    if d.shape != (basis.size, basis.size):
        raise ValueError(f"operator of shape {d.shape} does not match basis size {basis.size}")
    try:
        chol = sla.cholesky(basis.gram, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("boundary Gram matrix is not SPD") from exc
    tmp = sla.solve_triangular(chol, 0.5 * (d + d.T), lower=True)
    white = sla.solve_triangular(chol, tmp.T, lower=True)
    return 0.5 * (white + white.T), chol


def b_weighted_eigenvalues(delta, basis: BoundaryLoadBasis) -> np.ndarray:
    """Eigenvalues of ``delta x = theta B x`` in ascending order."""
    white, _ = _whitened(delta, basis)
    return sla.eigvalsh(white)


def ntd_operator_norm(delta, basis: BoundaryLoadBasis) -> float:
    """L2(Gamma_N) operator norm of a symmetric operator given in Galerkin form.

    Equals the largest ``|theta|`` with ``delta x = theta B x``.
    """
    theta = b_weighted_eigenvalues(delta, basis)
    return float(np.abs(theta).max()) if theta.size else 0.0


def ntd_norm_maximizer(delta, basis: BoundaryLoadBasis) -> tuple[float, np.ndarray]:
    """Return ``(norm, c)`` with ``c`` of unit B-norm realizing the norm.

    ``|c @ delta @ c|`` equals the operator norm for the returned ``c``.
    """
    white, chol = _whitened(delta, basis)
    theta, vec = sla.eigh(white)
    k = int(np.argmax(np.abs(theta)))
    c = sla.solve_triangular(chol.T, vec[:, k], lower=False)
    return float(abs(theta[k])), c

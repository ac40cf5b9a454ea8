"""Dense reference implementations written independently of the package kernels.

Stiffness uses the Voigt form ``area * B^T D B`` with engineering shear strain,
the mass term uses the edge-midpoint rule and boundary integrals use two-point
Gauss quadrature on each edge.
"""
import numpy as np
import scipy.linalg as sla


def voigt_element(p, lam, mu, rho):
    (x1, y1), (x2, y2), (x3, y3) = p
    area = 0.5 * ((x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1))
    b = np.array([y2 - y3, y3 - y1, y1 - y2]) / (2 * area)
    c = np.array([x3 - x2, x1 - x3, x2 - x1]) / (2 * area)
    B = np.zeros((3, 6))
    B[0, 0::2] = b
    B[1, 1::2] = c
    B[2, 0::2] = c
    B[2, 1::2] = b
    D = np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])
    K = area * B.T @ D @ B
    # edge midpoints: barycentric (1/2, 1/2, 0) and permutations, weight area/3
    M = np.zeros((6, 6))
    for bary in ([0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]):
        N = np.zeros((2, 6))
        N[0, 0::2] = bary
        N[1, 1::2] = bary
        M += area / 3 * N.T @ N
    return K + rho * M, area


def dense_stiffness(mesh, lam, mu, rho):
    n = 2 * mesh.n_nodes
    A = np.zeros((n, n))
    lam, mu, rho = (np.broadcast_to(np.asarray(v, float), (mesh.n_elements,)) for v in (lam, mu, rho))
    for t, tri in enumerate(mesh.elements):
        Ke, _ = voigt_element(mesh.nodes[tri], lam[t], mu[t], rho[t])
        dofs = np.ravel([[2 * v, 2 * v + 1] for v in tri])
        A[np.ix_(dofs, dofs)] += Ke
    return A


def dense_boundary_mass(mesh):
    n = 2 * mesh.n_nodes
    G = np.zeros((n, n))
    gp = np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])
    for a, b in mesh.neumann_edges:
        h = np.linalg.norm(mesh.nodes[b] - mesh.nodes[a])
        for s in gp:
            phi = {a: 1 - s, b: s}
            for p, wp in phi.items():
                for q, wq in phi.items():
                    for comp in (0, 1):
                        G[2 * p + comp, 2 * q + comp] += 0.5 * h * wp * wq
    return G


def dense_ntd(mesh, lam, mu, rho, dofs):
    """Galerkin NtD matrix and boundary Gram matrix over the given load dofs."""
    A = dense_stiffness(mesh, lam, mu, rho)
    G = dense_boundary_mass(mesh)
    fixed = np.zeros(A.shape[0], bool)
    fixed[2 * mesh.dirichlet_nodes] = fixed[2 * mesh.dirichlet_nodes + 1] = True
    free = ~fixed
    F = G[:, dofs]
    U = np.zeros_like(F)
    U[free] = np.linalg.solve(A[np.ix_(free, free)], F[free])
    return F.T @ U, G[np.ix_(dofs, dofs)]


def dense_norm(delta, gram):
    return float(np.abs(sla.eigh(delta, gram, eigvals_only=True)).max())

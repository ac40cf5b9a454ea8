"""Linear elasticity with a restoration term: forward solver, Neumann-to-Dirichlet
operator, monotonicity checks, localized potentials, probing loads and
Lipschitz-stability sweeps on structured 2D meshes."""

__version__ = "0.1.0"

from .mesh import (DIRICHLET, NEUMANN, OUTSIDE, DisconnectedComplementError, Mesh, MeshError,
                   NeumannUnreachableError, Partition, PartitionError, ProbeRegionError, ProbeRegions,
                   RegionOverlapError, build_rect_mesh, grid_partition, validate_probe_regions)
from .loads import BoundaryLoadBasis
from .fem import (Displacement, FactorizationError, MaterialError, MaterialField, StiffnessSystem, assemble,
                  element_energies, energy_densities, solve_forward)
from .ntd import NtDMatrix, assemble_ntd, b_weighted_eigenvalues, ntd_norm_maximizer, ntd_operator_norm
from .monotonicity import (SandwichReport, j_functional, phi_functional, psi_functional, sandwich_full,
                           sandwich_rho, shifted_bound, verify_pairs)
from .localization import (OpKind, ProbingLoad, ProbingLoadError, ProbingLoadSet, RegionField, TestDensity,
                           VirtualMeasurementOp, build_test_density, certificate_I, construct_all,
                           construct_probing_load, div_localized_load, l2_localized_load, local_solution_phi,
                           localized_sequence, runge_approximate)
from .stability import (AdmissibleSample, LipschitzReport, SampleKind, alpha_constant, delta_norm,
                        lipschitz_sweep_density, lipschitz_sweep_simultaneous, sample_unit_sphere_K,
                        theta_normalize)

"""Constructive constant, Lipschitz-ratio sweeps and admissible-set sampling.

Random pairs are drawn from per-pair child streams of one ``SeedSequence``
feeding the counter-based Philox generator, so serial and threaded runs
produce identical rows.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Iterable

import numpy as np

from .fem import MaterialError, MaterialField, assemble, element_energies, solve_forward
from .loads import BoundaryLoadBasis
from .localization import ProbingLoadSet, bracket_level
from .mesh import Mesh, Partition
from .ntd import assemble_ntd, ntd_operator_norm

__all__ = ["AdmissibleSample", "SampleKind", "LipschitzRow", "LipschitzReport", "alpha_constant",
           "lipschitz_sweep_density", "lipschitz_sweep_simultaneous", "sample_unit_sphere_K",
           "delta_norm", "theta_normalize", "existence_margins", "pair_generators", "bracket_level"]

MAX_REDRAWS = 1000


class SampleKind(str, Enum):
    DENSITY = "DENSITY"
    TRIPLE = "TRIPLE"


@dataclass(frozen=True, eq=False)
class AdmissibleSample:
    """Per-subdomain coefficients inside box bounds.

    ``values`` has shape ``(N,)`` for DENSITY and ``(N, 3)`` columns
    ``(lam, mu, rho)`` for TRIPLE. ``bounds`` is ``(a, b)`` or ``(a, b, c, d, e, f)``.
    """

    kind: SampleKind
    values: np.ndarray
    bounds: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", v)
        if self.kind is SampleKind.DENSITY:
            a, b = self.bounds
            if v.ndim != 1 or np.any(v < a) or np.any(v > b):
                raise MaterialError(f"density values outside [{a}, {b}]")
        else:
            check_triple_bounds(self.bounds)
            lo, hi = np.array(self.bounds[0::2]), np.array(self.bounds[1::2])
            if v.ndim != 2 or v.shape[1] != 3 or np.any(v < lo) or np.any(v > hi):
                raise MaterialError("triple values outside their bounds")

    def material(self, partition: Partition, lam=1.0, mu=1.0) -> MaterialField:
        """Material on the mesh; elements off the support take the lower bounds."""
        if self.kind is SampleKind.DENSITY:
            return MaterialField.from_partition(partition, lam, mu, self.values,
                                                outside=(float(lam), float(mu), self.bounds[0]))
        outside = tuple(float(x) for x in self.bounds[0::2])
        return MaterialField.from_partition(partition, self.values[:, 0], self.values[:, 1], self.values[:, 2],
                                            outside=outside)


def check_triple_bounds(bounds) -> None:
    if len(bounds) != 6:
        raise MaterialError("six bounds (a, b, c, d, e, f) are required")
    a, b, c, d, e, f = (float(x) for x in bounds)
    if not (0 < a < b and 0 < c < d and 0 < e < f):
        raise MaterialError("bounds need 0 < a < b, 0 < c < d, 0 < e < f")


def delta_norm(d_lam, d_mu, d_rho) -> float:
    """``max(||d_lam||_inf, ||d_mu||_inf, ||d_rho||_inf)`` over subdomain values."""
    return float(max(np.max(np.abs(d_lam)), np.max(np.abs(d_mu)), np.max(np.abs(d_rho))))


def theta_normalize(s1: AdmissibleSample, s2: AdmissibleSample):
    """Coefficient differences divided by their ``Delta`` norm."""
    diff = s1.values - s2.values
    n = delta_norm(diff[:, 0], diff[:, 1], diff[:, 2])
    if n == 0:
        raise ValueError("identical triples have no normalized difference")
    return diff[:, 0] / n, diff[:, 1] / n, diff[:, 2] / n


def pair_generators(seed: int, n: int) -> list:
    return [np.random.Generator(np.random.Philox(child)) for child in np.random.SeedSequence(seed).spawn(n)]


def sample_unit_sphere_K(partition: Partition, seed: int) -> np.ndarray:
    """Per-element weights, uniform per subdomain and rescaled to ``max |zeta_j| = 1``."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    while True:
        z = rng.uniform(-1.0, 1.0, partition.n_subdomains)
        m = np.max(np.abs(z))
        if m > 0:
            break
    return partition.expand(z / m, outside=0.0)


def alpha_constant(loads, basis: BoundaryLoadBasis) -> float:
    """Reciprocal of the largest squared B-norm of the probing loads.

    ``loads`` is a full ProbingLoadSet or, for synthetic checks, an iterable
    of coefficient vectors.
    """
    if isinstance(loads, ProbingLoadSet):
        missing = loads.missing()
        if missing:
            raise KeyError(f"probing loads missing for (j, k) = {missing}")
        if not all(pl.normalized for pl in loads.loads.values()):
            raise ValueError("probing loads must be normalized")
        vectors = [pl.load for pl in loads.loads.values()]
    else:
        vectors = list(loads)
    if not vectors:
        raise KeyError("no probing loads")
    return 1.0 / max(basis.norm2(v) for v in vectors)


def existence_margins(mesh: Mesh, partition: Partition, loads: ProbingLoadSet, rho_sub: np.ndarray,
                      lam=1.0, mu=1.0, basis: BoundaryLoadBasis | None = None) -> np.ndarray:
    """``int_{S_j} |u|^2 - int_{S \\ S_j} |u|^2`` for every ``j`` under density ``rho``.

    Each ``u`` is driven by the probing load ``g^(j, k)`` with ``k`` bracketing ``rho_j``.
    """
    sample = AdmissibleSample(SampleKind.DENSITY, rho_sub, (loads.a, loads.b))
    sys = assemble(mesh, sample.material(partition, lam, mu), basis)
    out = np.empty(partition.n_subdomains)
    for j in range(1, partition.n_subdomains + 1):
        k = bracket_level(float(rho_sub[j - 1]), loads.a, loads.b)
        l2 = element_energies(mesh, solve_forward(sys, loads.loads[(j, k)].load).full)[2]
        out[j - 1] = l2[partition.elements_of(j)].sum() - l2[partition.complement_of(j)].sum()
    return out


# ---------------------------------------------------------------------------
# Sweeps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LipschitzRow:
    pair_id: int
    coef_distance: float
    ntd_distance: float
    ratio: float
    redraws: int
    first: str
    second: str


@dataclass
class LipschitzReport:
    mode: str
    seed: int
    rows: list
    alpha: float | None = None
    rel_tol: float = 1e-6
    asserted: bool = True
    meta: dict = field(default_factory=dict)

    @property
    def ratios(self) -> np.ndarray:
        return np.array([r.ratio for r in self.rows])

    @property
    def min_ratio(self) -> float:
        return float(self.ratios.min()) if self.rows else math.nan

    @property
    def c_estimate(self) -> float:
        """Empirical reciprocal of the minimum ratio; an estimate, not a bound."""
        m = self.min_ratio
        return math.inf if m == 0 else 1.0 / m

    @property
    def failing_rows(self) -> list:
        if self.alpha is not None:
            return [r.pair_id for r in self.rows if not r.ratio >= self.alpha * (1 - self.rel_tol)]
        return [r.pair_id for r in self.rows if not r.ratio > 0]

    @property
    def passed(self) -> bool:
        return bool(self.rows) and not self.failing_rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f.name for f in LipschitzRow.__dataclass_fields__.values()])
        for r in self.rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])
        return buf.getvalue()

    def summary(self) -> dict:
        return {"mode": self.mode, "seed": self.seed, "n_pairs": len(self.rows), "alpha": self.alpha,
                "min_ratio": self.min_ratio, "c_estimate": self.c_estimate, "passed": self.passed,
                "asserted": self.asserted, "failing_rows": self.failing_rows, **self.meta}


def _fmt(values: np.ndarray) -> str:
    return ";".join(repr(float(v)) for v in np.asarray(values).ravel())


def _run(n_pairs: int, seed: int, evaluate: Callable, workers: int) -> list:
    if n_pairs < 1:
        raise ValueError("n_pairs must be positive")
    gens = pair_generators(seed, n_pairs)
    jobs = list(enumerate(gens))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda t: evaluate(*t), jobs))
    return [evaluate(i, g) for i, g in jobs]


def _draw_nondegenerate(rng, draw, distance):
    for redraws in range(MAX_REDRAWS):
        s1, s2 = draw(rng)
        dist = distance(s1, s2)
        if dist > 0:
            return s1, s2, dist, redraws
    raise RuntimeError("sampler keeps returning identical pairs")


def lipschitz_sweep_density(mesh: Mesh, partition: Partition, lam, mu, a: float, b: float, n_pairs: int = 50,
                            seed: int = 0, alpha: float | None = None, basis: BoundaryLoadBasis | None = None,
                            workers: int = 1, draw: Callable | None = None, rel_tol: float = 1e-6) -> LipschitzReport:
    """``||Lambda(rho1) - Lambda(rho2)|| / max_j |rho1_j - rho2_j|`` over random pairs.

    ``draw(rng) -> (rho1, rho2)`` overrides the uniform per-subdomain sampler.
    With ``alpha`` given the report passes iff every ratio is at least
    ``alpha (1 - rel_tol)``.
    """
    if not 0 < a < b:
        raise MaterialError(f"need 0 < a < b, got a={a}, b={b}")
    basis = basis or BoundaryLoadBasis(mesh)
    N = partition.n_subdomains
    draw = draw or (lambda rng: (rng.uniform(a, b, N), rng.uniform(a, b, N)))

    def evaluate(pid, rng):
        r1, r2, dist, redraws = _draw_nondegenerate(rng, draw, lambda x, y: float(np.max(np.abs(x - y))))
        mats = [AdmissibleSample(SampleKind.DENSITY, r, (a, b)).material(partition, lam, mu) for r in (r1, r2)]
        l1, l2 = (assemble_ntd(assemble(mesh, m, basis)) for m in mats)
        nd = ntd_operator_norm(l1 - l2, basis)
        return LipschitzRow(pid, dist, nd, nd / dist, redraws, _fmt(r1), _fmt(r2))

    rows = _run(n_pairs, seed, evaluate, workers)
    return LipschitzReport("density", seed, rows, alpha, rel_tol,
                           meta={"a": a, "b": b, "lam": float(np.mean(lam)), "mu": float(np.mean(mu))})


class Direction(str, Enum):
    INCREASING = "increasing"
    DECREASING = "decreasing"
    MIXED = "mixed"


def _ordered_triples(rng, N: int, bounds, direction: Direction):
    cols1, cols2 = [], []
    for c, (lo, hi) in enumerate(zip(bounds[0::2], bounds[1::2])):
        v = np.sort(rng.uniform(lo, hi, (N, 2)), axis=1)
        up = direction is Direction.INCREASING or (direction is Direction.MIXED and c != 1)
        cols1.append(v[:, 0] if up else v[:, 1])
        cols2.append(v[:, 1] if up else v[:, 0])
    return np.column_stack(cols1), np.column_stack(cols2)


def lipschitz_sweep_simultaneous(mesh: Mesh, partition: Partition, bounds, direction="increasing",
                                 n_pairs: int = 50, seed: int = 0, basis: BoundaryLoadBasis | None = None,
                                 workers: int = 1, draw: Callable | None = None) -> LipschitzReport:
    """Ratios ``||Lambda_1 - Lambda_2|| / ||(d_lam, d_mu, d_rho)||_Delta`` over ordered triples.

    ``direction="increasing"`` draws triples with all three coefficients of
    the first set below the second, ``"decreasing"`` the reverse. ``"mixed"``
    orders ``mu`` opposite to ``lam`` and ``rho`` and serves as an unasserted
    negative control.
    """
    check_triple_bounds(bounds)
    bounds = tuple(float(x) for x in bounds)
    direction = Direction(direction)
    basis = basis or BoundaryLoadBasis(mesh)
    N = partition.n_subdomains
    draw = draw or (lambda rng: _ordered_triples(rng, N, bounds, direction))

    def dist(x, y):
        d = x - y
        return delta_norm(d[:, 0], d[:, 1], d[:, 2])

    def evaluate(pid, rng):
        t1, t2, dd, redraws = _draw_nondegenerate(rng, draw, dist)
        mats = [AdmissibleSample(SampleKind.TRIPLE, t, bounds).material(partition) for t in (t1, t2)]
        l1, l2 = (assemble_ntd(assemble(mesh, m, basis)) for m in mats)
        nd = ntd_operator_norm(l1 - l2, basis)
        return LipschitzRow(pid, dd, nd, nd / dd, redraws, _fmt(t1), _fmt(t2))

    rows = _run(n_pairs, seed, evaluate, workers)
    return LipschitzReport(f"simultaneous-{direction.value}", seed, rows, None,
                           asserted=direction is not Direction.MIXED, meta={"bounds": list(bounds)})

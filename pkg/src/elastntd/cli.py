"""``elastntd`` command-line runner.

Exit codes: 0 success, 1 a checked property failed, 2 configuration or
usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .fem import MaterialError, MaterialField, assemble, solve_forward
from .loads import BoundaryLoadBasis
from .localization import ProbingLoadError, ProbingLoadSet, construct_all, localized_sequence, \
    rayleigh_localized_load
from .mesh import MeshError, PartitionError, ProbeRegionError, build_rect_mesh, grid_partition, \
    validate_probe_regions
from .monotonicity import rows_to_csv, verify_pairs
from .stability import AdmissibleSample, SampleKind, alpha_constant, lipschitz_sweep_density, \
    lipschitz_sweep_simultaneous

log = logging.getLogger("elastntd")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
CERT_TOL = 1e-9


class RunWriter:
    """Serializes every output write into the run directory."""

    def __init__(self, cfg: ExperimentConfig, command: str):
        self.dir = cfg.run_dir()
        self.dir.mkdir(parents=True, exist_ok=True)
        self.command = command
        (self.dir / "config.json").write_text(cfg.to_json() + "\n")
        self.cfg_hash = cfg.hash

    def text(self, name: str, body: str) -> Path:
        path = self.dir / name
        path.write_text(body)
        return path

    def summary(self, data: dict) -> Path:
        payload = {"command": self.command, "config_hash": self.cfg_hash, "version": __version__,
                   "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"), **data}
        return self.text(f"summary_{self.command}.json", json.dumps(payload, indent=2, default=_jsonable) + "\n")


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(type(v))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def _setup(cfg: ExperimentConfig):
    mesh = build_rect_mesh(cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.dirichlet_side, cfg.mesh.pattern)
    partition = grid_partition(mesh, cfg.partition.px, cfg.partition.py)
    return mesh, partition, BoundaryLoadBasis(mesh)


def named_load(basis: BoundaryLoadBasis, name: str) -> np.ndarray:
    if name == "zero":
        return np.zeros(basis.size)
    if name == "normal":
        return basis.normal_load()
    if name == "traction_x":
        return basis.interpolate(lambda xy: np.tile([1.0, 0.0], (len(xy), 1)))
    if name == "traction_y":
        return basis.interpolate(lambda xy: np.tile([0.0, 1.0], (len(xy), 1)))
    if name == "corner":
        xy = basis.mesh.nodes[basis.pairs[:, 0]]
        dist = np.linalg.norm(xy - xy.max(axis=0), axis=1) + (basis.pairs[:, 1] != 0)
        c = np.zeros(basis.size)
        c[int(np.argmin(dist))] = 1.0
        return c
    raise ConfigError(f"unknown load {name!r}")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_forward(cfg: ExperimentConfig, out: RunWriter) -> int:
    mesh, _, basis = _setup(cfg)
    mat = MaterialField.uniform(mesh, cfg.material.lam, cfg.material.mu, cfg.forward.rho)
    sys_ = assemble(mesh, mat, basis)
    u = solve_forward(sys_, named_load(basis, cfg.forward.load))
    out.text("displacement.csv", u.to_csv())
    energy = sys_.energy(u.full)
    out.summary({"load": cfg.forward.load, "energy": energy, "max_abs": float(np.abs(u.values).max())})
    print(f"forward: load={cfg.forward.load} energy={energy:.6e} -> {out.dir / 'displacement.csv'}")
    return EXIT_OK


def _mono_pairs(cfg: ExperimentConfig, partition, rng):
    m = cfg.material
    a, b = m.rho_bounds
    N = partition.n_subdomains
    if cfg.mono.rho_pairs is not None:
        rho_pairs = [(np.asarray(r1, float), np.asarray(r2, float)) for r1, r2 in cfg.mono.rho_pairs]
    else:
        rho_pairs = [(rng.uniform(a, b, N), rng.uniform(a, b, N)) for _ in range(cfg.mono.n_pairs)]
    rho_mats = [tuple(MaterialField.from_partition(partition, m.lam, m.mu, r) for r in pr) for pr in rho_pairs]
    full_mats = []
    for _ in range(cfg.mono.n_pairs):
        pair = []
        for _side in range(2):
            t = np.column_stack([rng.uniform(lo, hi, N) for lo, hi in (m.lam_bounds, m.mu_bounds, m.rho_bounds)])
            pair.append(AdmissibleSample(SampleKind.TRIPLE, t, m.six_bounds).material(partition))
        full_mats.append(tuple(pair))
    return rho_mats, full_mats


def cmd_mono(cfg: ExperimentConfig, out: RunWriter) -> int:
    mesh, partition, basis = _setup(cfg)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(cfg.sweep.seed)))
    rho_mats, full_mats = _mono_pairs(cfg, partition, rng)
    loads = [rng.standard_normal(basis.size) for _ in range(cfg.mono.n_loads)]
    rows = verify_pairs(mesh, rho_mats, loads, "rho", basis) + verify_pairs(mesh, full_mats, loads, "full", basis)
    out.text("mono.csv", rows_to_csv(rows))
    failing = [(r.suite, r.pair_id, r.load_id) for r in rows if not r.passed]
    out.summary({"n_rows": len(rows), "failing_rows": failing})
    print(f"mono: {len(rows) - len(failing)}/{len(rows)} rows pass")
    for suite, pid, lid in failing:
        print(f"  FAIL suite={suite} pair={pid} load={lid}")
    return EXIT_FAIL if failing else EXIT_OK


def _loads_path(out: RunWriter) -> Path:
    return out.dir / "probing_loads.json"


def _construct(cfg: ExperimentConfig, out: RunWriter, mesh, partition, basis):
    path = _loads_path(out)
    existing = ProbingLoadSet.from_json(path.read_text()) if path.exists() else None
    loads = construct_all(mesh, partition, cfg.material.a, cfg.material.b, cfg.material.lam, cfg.material.mu,
                          cfg.cgne.max_iter, basis, existing, cfg.sweep.workers, cfg.cgne.tol)
    reused = sum(1 for key, pl in loads.loads.items() if existing is not None and existing.loads.get(key) is pl)
    out.text(path.name, loads.to_json() + "\n")
    return loads, reused


def cmd_construct(cfg: ExperimentConfig, out: RunWriter) -> int:
    mesh, partition, basis = _setup(cfg)
    try:
        loads, reused = _construct(cfg, out, mesh, partition, basis)
    except ProbingLoadError as exc:
        print(f"construct: {exc}")
        return EXIT_FAIL
    alpha = alpha_constant(loads, basis)
    bad = [(pl.j, pl.k) for pl in loads.loads.values() if abs(pl.certificate - 1.0) > CERT_TOL]
    iters = {f"{j},{k}": pl.cgne_iterations for (j, k), pl in sorted(loads.loads.items())}
    out.summary({"alpha": alpha, "n_loads": len(loads), "reused": reused, "iterations": iters,
                 "failing_rows": bad})
    print(f"construct: {len(loads)} loads ({reused} reused), alpha = {alpha!r}")
    for j, k in bad:
        print(f"  FAIL (j={j}, k={k}) certificate {loads.loads[(j, k)].certificate!r}")
    return EXIT_FAIL if bad else EXIT_OK


def cmd_sweep(cfg: ExperimentConfig, out: RunWriter, mode: str) -> int:
    mesh, partition, basis = _setup(cfg)
    sw = cfg.sweep
    if mode == "density":
        try:
            loads, _ = _construct(cfg, out, mesh, partition, basis)
        except ProbingLoadError as exc:
            print(f"sweep: {exc}")
            return EXIT_FAIL
        alpha = alpha_constant(loads, basis)
        rep = lipschitz_sweep_density(mesh, partition, cfg.material.lam, cfg.material.mu, cfg.material.a,
                                      cfg.material.b, sw.n_pairs, sw.seed, alpha, basis, sw.workers)
        reports = [rep]
    else:
        reports = [lipschitz_sweep_simultaneous(mesh, partition, cfg.material.six_bounds, d, sw.n_pairs, sw.seed,
                                                basis, sw.workers) for d in ("increasing", "decreasing", "mixed")]
    status = EXIT_OK
    for rep in reports:
        name = f"sweep_{rep.mode}.csv"
        out.text(name, rep.to_csv())
        label = "" if rep.asserted else " (control, not asserted)"
        print(f"sweep {rep.mode}: min ratio {rep.min_ratio!r}, C estimate {rep.c_estimate!r}"
              + (f", alpha {rep.alpha!r}" if rep.alpha is not None else "") + label)
        if rep.asserted and not rep.passed:
            status = EXIT_FAIL
            for pid in rep.failing_rows:
                print(f"  FAIL {name} pair_id={pid}")
    out.summary({"mode": mode, "reports": [r.summary() for r in reports]})
    return status


def cmd_locpot(cfg: ExperimentConfig, out: RunWriter) -> int:
    mesh, _, basis = _setup(cfg)
    pr = cfg.probe
    if pr.d1_cells is None or pr.d2_cells is None:
        raise ConfigError("probe.d1_cells and probe.d2_cells are required for locpot")
    d1 = mesh.cells_elements([tuple(c) for c in pr.d1_cells])
    d2 = mesh.cells_elements([tuple(c) for c in pr.d2_cells])
    validate_probe_regions(mesh, d1, d2)
    mat = MaterialField.uniform(mesh, cfg.material.lam, cfg.material.mu, pr.rho)
    levels = localized_sequence(mesh, mat, d1, d2, pr.n_levels, basis, finest_step=pr.finest_step)
    out.text("locpot_levels.csv", _csv(
        ["level", "step", "n_loads", "d1_energy", "d2_energy", "ratio", "d1_unscaled", "d2_unscaled",
         "residual", "perfect"],
        [(i, lv.step, lv.n_loads, lv.d1_energy, lv.d2_energy, lv.ratio, lv.d1_unscaled, lv.d2_unscaled,
          lv.residual, lv.perfect) for i, lv in enumerate(levels)]))
    eps_rows = []
    for eps in pr.epsilons:
        for kind in ("div", "l2"):
            eps_rows.append((float(eps), kind, rayleigh_localized_load(mesh, mat, d1, d2, eps, kind, basis)[1]))
    out.text("locpot_eps.csv", _csv(["epsilon", "kind", "ratio"], eps_rows))
    ratios = [lv.ratio for lv in levels]
    drops = [i for i in range(1, len(ratios)) if ratios[i] < ratios[i - 1]]
    out.summary({"ratios": ratios, "failing_rows": drops})
    print("locpot: ratios " + ", ".join(f"{r:.6g}" for r in ratios))
    for i in drops:
        print(f"  FAIL locpot_levels.csv level={i}: ratio decreased")
    return EXIT_FAIL if drops else EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elastntd", description="Elasticity NtD stability experiments.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("forward", "mono", "construct", "sweep", "locpot"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="path to the JSON config")
        sp.add_argument("--seed", type=int, default=None, help="override sweep.seed")
        sp.add_argument("--out", default=None, help="override the output root directory")
        sp.add_argument("--workers", type=int, default=None, help="override sweep.workers")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "sweep":
            sp.add_argument("--mode", choices=("density", "simultaneous"), default="density")
    return p


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    sweep = cfg.sweep
    if args.seed is not None:
        sweep = replace(sweep, seed=args.seed)
    if args.workers is not None:
        sweep = replace(sweep, workers=args.workers)
    cfg = replace(cfg, sweep=sweep, output=args.out if args.out is not None else cfg.output)
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(ExperimentConfig.load(args.config), args)
        out = RunWriter(cfg, args.command if args.command != "sweep" else f"sweep_{args.mode}")
        if args.command == "forward":
            return cmd_forward(cfg, out)
        if args.command == "mono":
            return cmd_mono(cfg, out)
        if args.command == "construct":
            return cmd_construct(cfg, out)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, args.mode)
        return cmd_locpot(cfg, out)
    except ProbeRegionError as exc:
        print(f"error: {type(exc).__name__} [{exc.code}]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, MeshError, PartitionError, MaterialError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

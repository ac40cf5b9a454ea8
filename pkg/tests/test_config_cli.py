import csv
import json
from pathlib import Path

import numpy as np
import pytest

from elastntd.cli import main
from elastntd.config import ConfigError, ExperimentConfig

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_cfg(tmp_path, name="cfg.json", **overrides):
    data = json.loads((CONFIGS / "reference.json").read_text())
    for key, value in overrides.items():
        section, _, field = key.partition("__")
        if field:
            data.setdefault(section, {})[field] = value
        else:
            data[section] = value
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return path


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path / "runs")])


def run_dir(tmp_path):
    dirs = [d for d in (tmp_path / "runs").iterdir() if d.is_dir()]
    assert len(dirs) == 1
    return dirs[0]


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


class TestConfig:
    def test_roundtrip(self):
        cfg = ExperimentConfig.load(CONFIGS / "reference.json")
        back = ExperimentConfig.from_json(cfg.to_json())
        assert back == cfg and back.hash == cfg.hash

    @pytest.mark.parametrize("name", ["reference.json", "locpot.json", "example.json"])
    def test_shipped_configs_load(self, name):
        ExperimentConfig.load(CONFIGS / name)

    def test_example_lists_every_key(self):
        data = json.loads((CONFIGS / "example.json").read_text())
        assert data == json.loads(ExperimentConfig.from_dict(data).to_json())

    def test_defaults(self):
        cfg = ExperimentConfig.from_dict({})
        assert cfg.material.a == 1.0 and cfg.material.b == 2.0
        assert cfg.material.six_bounds == (1.0, 2.0, 1.0, 2.0, 1.0, 2.0)

    def test_hash_ignores_output_and_workers(self):
        base = ExperimentConfig.from_dict({})
        other = ExperimentConfig.from_dict({"output": "elsewhere", "sweep": {"workers": 8}})
        seeded = ExperimentConfig.from_dict({"sweep": {"seed": 1}})
        assert base.hash == other.hash != seeded.hash

    def test_int_promoted_to_float(self):
        assert ExperimentConfig.from_dict({"material": {"lam": 2}}).material.lam == 2.0

    @pytest.mark.parametrize("data", [
        {"bogus": 1},
        {"mesh": {"nx": 4, "colour": "red"}},
        {"mesh": {"nx": 1}},
        {"mesh": {"nx": 4.5}},
        {"mesh": {"dirichlet_side": "middle"}},
        {"mesh": "4x4"},
        {"partition": {"px": 3}},
        {"material": {"rho_bounds": [2.0, 1.0]}},
        {"material": {"rho_bounds": [1.0]}},
        {"material": {"lam": -1.0}},
        {"material": {"delta0": 1.5}},
        {"material": {"M0": 1.5}},
        {"sweep": {"n_pairs": 0}},
        {"sweep": {"seed": "x"}},
        {"sweep": {"workers": 0}},
        {"cgne": {"max_iter": 0}},
        {"forward": {"load": "sideways"}},
        {"probe": {"n_levels": 1}},
        {"probe": {"epsilons": [0.0]}},
        {"probe": {"d1_cells": [[9, 9]]}},
        {"mono": {"rho_pairs": [[[1.0, 1.0], [1.0, 1.0]]]}},
        {"mesh": {"nx": True}},
    ])
    def test_invalid(self, data):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict(data)

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{not json")
        with pytest.raises(ConfigError):
            ExperimentConfig.load(p)
        with pytest.raises(ConfigError):
            ExperimentConfig.load(tmp_path / "missing.json")


class TestCliErrors:
    def test_missing_config(self, tmp_path):
        assert run(tmp_path, "forward", "--config", str(tmp_path / "nope.json")) == 2

    def test_bad_config(self, tmp_path, capsys):
        assert run(tmp_path, "forward", "--config", str(write_cfg(tmp_path, mesh__nx=0))) == 2
        assert "ConfigError" in capsys.readouterr().err

    def test_bad_arguments(self, tmp_path):
        assert main(["sweep", "--config", "x.json", "--mode", "diagonal"]) == 2
        assert main(["unknown"]) == 2
        assert main([]) == 2

    def test_reversed_bounds(self, tmp_path):
        cfg = write_cfg(tmp_path, material__rho_bounds=[2.0, 1.0])
        assert run(tmp_path, "construct", "--config", str(cfg)) == 2

    def test_zero_pairs(self, tmp_path):
        cfg = write_cfg(tmp_path, sweep__n_pairs=0)
        assert run(tmp_path, "sweep", "--config", str(cfg)) == 2

    def test_invalid_probe_regions(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, mesh={"nx": 8, "ny": 8},
                        probe={"d1_cells": [[1, 1], [2, 1]], "d2_cells": [[2, 1], [3, 1]], "finest_step": 2})
        assert run(tmp_path, "locpot", "--config", str(cfg)) == 2
        err = capsys.readouterr().err
        assert "RegionOverlapError" in err and "[overlap]" in err

    def test_locpot_needs_regions(self, tmp_path):
        assert run(tmp_path, "locpot", "--config", str(write_cfg(tmp_path))) == 2


class TestForward:
    def test_zero_load(self, tmp_path):
        assert run(tmp_path, "forward", "--config", str(write_cfg(tmp_path, forward__load="zero"))) == 0
        rows = read_csv(run_dir(tmp_path) / "displacement.csv")
        assert len(rows) == 25
        assert all(float(r["ux"]) == 0 and float(r["uy"]) == 0 for r in rows)

    def test_corner_load(self, tmp_path):
        assert run(tmp_path, "forward", "--config", str(write_cfg(tmp_path, forward__load="corner"))) == 0
        d = run_dir(tmp_path)
        rows = read_csv(d / "displacement.csv")
        assert max(abs(float(r["ux"])) + abs(float(r["uy"])) for r in rows) > 0
        bottom = [r for r in rows if int(r["node"]) < 5]
        assert all(float(r["ux"]) == 0 and float(r["uy"]) == 0 for r in bottom)
        cfg = ExperimentConfig.load(d / "config.json")
        assert d.name == cfg.hash
        summary = json.loads((d / "summary_forward.json").read_text())
        assert summary["energy"] > 0 and "created" in summary


class TestMono:
    def test_passes(self, tmp_path):
        cfg = write_cfg(tmp_path, mono={"n_pairs": 3, "n_loads": 2})
        assert run(tmp_path, "mono", "--config", str(cfg)) == 0
        rows = read_csv(run_dir(tmp_path) / "mono.csv")
        assert len(rows) == 12
        assert {r["suite"] for r in rows} == {"rho", "full"}
        assert all(r["passed"] == "True" for r in rows)

    def test_explicit_rho_pairs(self, tmp_path):
        pairs = [[[1.0, 1.2, 1.4, 1.6], [2.0, 1.9, 1.8, 1.7]]]
        cfg = write_cfg(tmp_path, mono={"n_pairs": 0, "n_loads": 3, "rho_pairs": pairs})
        assert run(tmp_path, "mono", "--config", str(cfg)) == 0
        assert len(read_csv(run_dir(tmp_path) / "mono.csv")) == 3


class TestConstructAndSweep:
    def test_construct_resumes(self, tmp_path, capsys):
        cfg = str(write_cfg(tmp_path))
        assert run(tmp_path, "construct", "--config", cfg) == 0
        first = capsys.readouterr().out
        assert "24 loads (0 reused)" in first
        path = run_dir(tmp_path) / "probing_loads.json"
        data = json.loads(path.read_text())
        data["loads"] = data["loads"][:10]
        path.write_text(json.dumps(data))
        assert run(tmp_path, "construct", "--config", cfg) == 0
        assert "24 loads (10 reused)" in capsys.readouterr().out
        assert run(tmp_path, "construct", "--config", cfg) == 0
        assert "24 loads (24 reused)" in capsys.readouterr().out
        summary = json.loads((run_dir(tmp_path) / "summary_construct.json").read_text())
        assert summary["alpha"] == pytest.approx(6.5021667701870305e-06, rel=1e-8)
        assert summary["failing_rows"] == []

    def test_construct_budget_exhausted(self, tmp_path):
        cfg = write_cfg(tmp_path, cgne={"max_iter": 2, "tol": 1e-14})
        assert run(tmp_path, "construct", "--config", str(cfg)) == 1

    def test_density_sweep(self, tmp_path):
        cfg = str(write_cfg(tmp_path, sweep={"n_pairs": 8, "seed": 5, "workers": 1}))
        assert run(tmp_path, "sweep", "--config", cfg) == 0
        d = run_dir(tmp_path)
        first = (d / "sweep_density.csv").read_bytes()
        assert len(read_csv(d / "sweep_density.csv")) == 8
        assert run(tmp_path, "sweep", "--config", cfg, "--workers", "3") == 0
        assert (d / "sweep_density.csv").read_bytes() == first
        summary = json.loads((d / "summary_sweep_density.json").read_text())
        assert summary["reports"][0]["passed"]

    def test_seed_override(self, tmp_path):
        cfg = str(write_cfg(tmp_path, sweep={"n_pairs": 2, "seed": 5, "workers": 1}))
        assert run(tmp_path, "sweep", "--config", cfg, "--seed", "6") == 0
        d = run_dir(tmp_path)
        assert ExperimentConfig.load(d / "config.json").sweep.seed == 6

    def test_simultaneous_sweep(self, tmp_path, capsys):
        cfg = str(write_cfg(tmp_path, sweep={"n_pairs": 6, "seed": 2, "workers": 2}))
        assert run(tmp_path, "sweep", "--config", cfg, "--mode", "simultaneous") == 0
        d = run_dir(tmp_path)
        for name in ("increasing", "decreasing", "mixed"):
            rows = read_csv(d / f"sweep_simultaneous-{name}.csv")
            assert len(rows) == 6 and all(float(r["ratio"]) > 0 for r in rows)
        assert "not asserted" in capsys.readouterr().out


class TestLocpot:
    def test_reference(self, tmp_path):
        assert main(["locpot", "--config", str(CONFIGS / "locpot.json"), "--out", str(tmp_path / "runs")]) == 0
        d = run_dir(tmp_path)
        levels = read_csv(d / "locpot_levels.csv")
        ratios = [float(r["ratio"]) for r in levels]
        assert [int(r["step"]) for r in levels] == [8, 4, 2]
        assert ratios == sorted(ratios) and ratios[-1] > 100
        eps = read_csv(d / "locpot_eps.csv")
        assert {(float(r["epsilon"]), r["kind"]) for r in eps} == {(0.01, "div"), (0.01, "l2"),
                                                                   (0.0001, "div"), (0.0001, "l2")}
        first = (d / "locpot_levels.csv").read_bytes()
        assert main(["locpot", "--config", str(CONFIGS / "locpot.json"), "--out", str(tmp_path / "runs")]) == 0
        assert (d / "locpot_levels.csv").read_bytes() == first

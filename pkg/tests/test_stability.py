import numpy as np
import pytest

from elastntd.fem import MaterialError, MaterialField
from elastntd.localization import ProbingLoadSet, div_localized_load
from elastntd.monotonicity import phi_functional
from elastntd.stability import (AdmissibleSample, SampleKind, alpha_constant, delta_norm, existence_margins,
                                lipschitz_sweep_density, lipschitz_sweep_simultaneous, pair_generators,
                                sample_unit_sphere_K, theta_normalize)
from elastntd.mesh import Partition, grid_partition

REFERENCE_ALPHA = 6.5021667701870305e-06
BOUNDS = (1.0, 2.0, 1.0, 2.0, 1.0, 2.0)


class TestSamples:
    def test_density_bounds(self):
        AdmissibleSample(SampleKind.DENSITY, [1.0, 2.0], (1.0, 2.0))
        with pytest.raises(MaterialError):
            AdmissibleSample(SampleKind.DENSITY, [0.9, 1.5], (1.0, 2.0))

    def test_triple_bounds(self):
        with pytest.raises(MaterialError):
            AdmissibleSample(SampleKind.TRIPLE, np.ones((4, 3)), (1.0, 2.0))
        with pytest.raises(MaterialError):
            AdmissibleSample(SampleKind.TRIPLE, np.ones((4, 3)), (2.0, 1.0, 1.0, 2.0, 1.0, 2.0))
        with pytest.raises(MaterialError):
            AdmissibleSample(SampleKind.TRIPLE, np.full((4, 3), 3.0), BOUNDS)

    def test_material_outside_support(self, mesh4):
        full = grid_partition(mesh4, 2, 2)
        part = Partition.from_elements(mesh4, [full.elements_of(1), full.elements_of(2)])
        mat = AdmissibleSample(SampleKind.DENSITY, [1.5, 1.7], (1.0, 2.0)).material(part, 1.0, 1.0)
        outside = np.setdiff1d(np.arange(mesh4.n_elements), part.support)
        assert np.all(mat.rho[outside] == 1.0)
        assert np.all(mat.rho[part.elements_of(2)] == 1.7)

    def test_theta(self, rng):
        s1 = AdmissibleSample(SampleKind.TRIPLE, rng.uniform(1, 2, (4, 3)), BOUNDS)
        s2 = AdmissibleSample(SampleKind.TRIPLE, rng.uniform(1, 2, (4, 3)), BOUNDS)
        assert delta_norm(*theta_normalize(s1, s2)) == pytest.approx(1.0, abs=1e-15)
        with pytest.raises(ValueError):
            theta_normalize(s1, s1)

    def test_delta_norm(self):
        assert delta_norm([0.1, -0.3], [0.2, 0.0], [0.0, 0.25]) == 0.3

    def test_unit_sphere(self, part4):
        z = sample_unit_sphere_K(part4, 3)
        assert np.abs(z).max() == 1.0
        assert np.array_equal(z, sample_unit_sphere_K(part4, 3))
        for i in range(1, 5):
            assert np.unique(z[part4.elements_of(i)]).size == 1

    def test_unit_sphere_single(self, mesh4):
        z = sample_unit_sphere_K(grid_partition(mesh4, 1, 1), 11)
        assert np.all(np.abs(z) == 1.0)

    def test_generators_independent(self):
        a, b = pair_generators(5, 2)
        assert a.random() != b.random()
        assert pair_generators(5, 2)[1].random() == pair_generators(5, 3)[1].random()


class TestAlpha:
    def test_synthetic(self, basis4):
        e = np.zeros(basis4.size)
        e[0] = 1.0
        n1 = basis4.norm(e)
        loads = [2 * e / n1, 3 * e / n1]
        assert alpha_constant(loads, basis4) == pytest.approx(1 / 9, rel=1e-14)
        assert alpha_constant([2 * v for v in loads], basis4) == pytest.approx(1 / 36, rel=1e-14)

    def test_empty(self, basis4):
        with pytest.raises(KeyError):
            alpha_constant([], basis4)

    def test_reference(self, reference_loads, basis4):
        alpha = alpha_constant(reference_loads, basis4)
        assert alpha == pytest.approx(REFERENCE_ALPHA, rel=1e-8)
        assert alpha == 1.0 / max(pl.norm2 for pl in reference_loads.loads.values())

    def test_missing(self, reference_loads, basis4):
        partial = ProbingLoadSet.from_json(reference_loads.to_json())
        del partial.loads[(3, 2)]
        with pytest.raises(KeyError):
            alpha_constant(partial, basis4)

    def test_existence_margins(self, mesh4, part4, basis4, reference_loads):
        rng = np.random.default_rng(0)
        for rho in [np.full(4, 1.0), np.full(4, 2.0), *rng.uniform(1, 2, (20, 4))]:
            m = existence_margins(mesh4, part4, reference_loads, rho, basis=basis4)
            assert m.min() >= 1 - 1e-6


class TestDensitySweep:
    def test_reference_sweep(self, mesh4, part4, basis4, reference_loads):
        alpha = alpha_constant(reference_loads, basis4)
        rep = lipschitz_sweep_density(mesh4, part4, 1.0, 1.0, 1.0, 2.0, 50, seed=7, alpha=alpha, basis=basis4)
        assert rep.passed and not rep.failing_rows
        assert len(rep.rows) == 50
        assert rep.min_ratio >= alpha
        assert rep.min_ratio == pytest.approx(0.0198, rel=0.05)
        assert rep.c_estimate == pytest.approx(1 / rep.min_ratio)

    def test_failing_with_large_alpha(self, mesh4, part4, basis4):
        rep = lipschitz_sweep_density(mesh4, part4, 1.0, 1.0, 1.0, 2.0, 5, seed=1, alpha=1e3, basis=basis4)
        assert not rep.passed and rep.failing_rows == [0, 1, 2, 3, 4]

    def test_redraw(self, mesh4, part4, basis4):
        calls = {"n": 0}

        def draw(rng):
            calls["n"] += 1
            r = rng.uniform(1, 2, 4)
            return (r, r.copy()) if calls["n"] == 1 else (r, rng.uniform(1, 2, 4))

        rep = lipschitz_sweep_density(mesh4, part4, 1.0, 1.0, 1.0, 2.0, 1, basis=basis4, draw=draw)
        assert rep.rows[0].redraws == 1 and rep.rows[0].coef_distance > 0

    def test_directional_limit(self, mesh4, part4, basis4):
        rho0 = np.array([1.3, 1.5, 1.4, 1.6])
        e = np.array([1.0, -0.5, 0.25, 0.0])
        ratios = []
        for d in (1e-2, 1e-3, 1e-4):
            rep = lipschitz_sweep_density(mesh4, part4, 1.0, 1.0, 1.0, 2.0, 1, basis=basis4,
                                          draw=lambda rng, d=d: (rho0, rho0 + d * e))
            ratios.append(rep.min_ratio)
        assert abs(ratios[1] - ratios[2]) < abs(ratios[0] - ratios[1]) + 1e-12
        assert ratios[2] == pytest.approx(ratios[1], rel=1e-2)

    def test_parallel_identical(self, mesh4, part4, basis4):
        args = (mesh4, part4, 1.0, 1.0, 1.0, 2.0, 12)
        serial = lipschitz_sweep_density(*args, seed=3, basis=basis4)
        par = lipschitz_sweep_density(*args, seed=3, basis=basis4, workers=4)
        assert serial.to_csv() == par.to_csv()

    def test_bad_inputs(self, mesh4, part4):
        with pytest.raises(MaterialError):
            lipschitz_sweep_density(mesh4, part4, 1.0, 1.0, 2.0, 1.0, 5)
        with pytest.raises(ValueError):
            lipschitz_sweep_density(mesh4, part4, 1.0, 1.0, 1.0, 2.0, 0)

    def test_csv_columns(self, mesh4, part4, basis4):
        rep = lipschitz_sweep_density(mesh4, part4, 1.0, 1.0, 1.0, 2.0, 2, basis=basis4)
        lines = rep.to_csv().splitlines()
        assert lines[0] == "pair_id,coef_distance,ntd_distance,ratio,redraws,first,second"
        assert len(lines) == 3


class TestSimultaneousSweep:
    @pytest.mark.parametrize("direction", ["increasing", "decreasing"])
    def test_positive(self, mesh4, part4, basis4, direction):
        rep = lipschitz_sweep_simultaneous(mesh4, part4, BOUNDS, direction, 30, seed=1, basis=basis4)
        assert rep.passed and rep.asserted
        assert rep.min_ratio == pytest.approx(0.1844, rel=0.02)

    def test_ordering(self, mesh4, part4, basis4):
        rep = lipschitz_sweep_simultaneous(mesh4, part4, BOUNDS, "increasing", 5, seed=2, basis=basis4)
        for row in rep.rows:
            t1 = np.array(row.first.split(";"), dtype=float)
            t2 = np.array(row.second.split(";"), dtype=float)
            assert np.all(t1 <= t2)

    def test_mixed_is_control(self, mesh4, part4, basis4):
        rep = lipschitz_sweep_simultaneous(mesh4, part4, BOUNDS, "mixed", 10, seed=1, basis=basis4)
        assert not rep.asserted
        assert rep.summary()["mode"] == "simultaneous-mixed"

    def test_swap_invariant(self, mesh4, part4, basis4):
        inc = lipschitz_sweep_simultaneous(mesh4, part4, BOUNDS, "increasing", 6, seed=4, basis=basis4)
        dec = lipschitz_sweep_simultaneous(mesh4, part4, BOUNDS, "decreasing", 6, seed=4, basis=basis4)
        assert np.allclose(inc.ratios, dec.ratios, rtol=1e-10)
        assert [r.first for r in inc.rows] == [r.second for r in dec.rows]

    def test_parallel_identical(self, mesh4, part4, basis4):
        a = lipschitz_sweep_simultaneous(mesh4, part4, BOUNDS, "increasing", 8, seed=9, basis=basis4)
        b = lipschitz_sweep_simultaneous(mesh4, part4, BOUNDS, "increasing", 8, seed=9, basis=basis4, workers=3)
        assert a.to_csv() == b.to_csv()

    def test_bad_bounds(self, mesh4, part4):
        with pytest.raises(MaterialError):
            lipschitz_sweep_simultaneous(mesh4, part4, (1.0, 2.0), "increasing", 2)
        with pytest.raises(ValueError):
            lipschitz_sweep_simultaneous(mesh4, part4, BOUNDS, "sideways", 2)

    def test_phi_positive_for_ordered_pair(self, mesh8, basis8, probe8, rng):
        part = grid_partition(mesh8, 2, 2)
        lo = np.sort(rng.uniform(1, 2, (4, 3, 2)), axis=2)
        s1 = AdmissibleSample(SampleKind.TRIPLE, lo[..., 1], BOUNDS)
        s2 = AdmissibleSample(SampleKind.TRIPLE, lo[..., 0], BOUNDS)
        m1, m2 = s1.material(part), s2.material(part)
        w = (m1.lam - m2.lam, m1.mu - m2.mu, m1.rho - m2.rho)
        g = div_localized_load(mesh8, MaterialField.uniform(mesh8), *probe8, 1e-3, basis8)
        assert phi_functional(mesh8, g, w, m1, m2, basis8) > 0

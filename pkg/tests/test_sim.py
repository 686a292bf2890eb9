import math

import numpy as np
import pytest
import scipy.stats as st

from bbmlab.errors import ConfigurationError, DomainError
from bbmlab.model import ModelParams, RateFamily, RateTable, derived_constants
from bbmlab.sim import (
    PathFunctional,
    derive_seed,
    export_stats_csv,
    many_to_one_check,
    many_to_two_check,
    porism_probe,
    run_continuous,
    run_coupled,
    run_discrete,
)

P_SIN = ModelParams(alpha=1.0, rate_family=RateFamily.SIN_POW)
P_HOM = ModelParams(alpha=1.0, rate_family=RateFamily.HOMOGENEOUS)


def flat_table(p):
    return ModelParams(alpha=1.0, rate_family=RateFamily.CUSTOM,
                       table=RateTable(tuple([p] * 17)))


class TestContinuous:
    def test_determinism_bit_exact(self):
        a, _ = run_continuous(P_SIN, 4.0, 99, snapshot_times=[2.0])
        b, _ = run_continuous(P_SIN, 4.0, 99, snapshot_times=[2.0])
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
        assert np.array_equal(a.lid_hi, b.lid_hi) and np.array_equal(a.lid_lo, b.lid_lo)

    def test_yule_mean_population(self):
        sizes = [run_continuous(P_HOM, 8.0, derive_seed(123, r))[0].size
                 for r in range(500)]
        mean = np.mean(sizes)
        assert abs(mean - math.exp(8.0)) / math.exp(8.0) < 0.05

    def test_small_t_analytic(self):
        sizes = [run_continuous(P_HOM, 1.0, derive_seed(9, r))[0].size
                 for r in range(3000)]
        assert np.mean(sizes) == pytest.approx(math.e, rel=0.03)

    def test_rate_zero_single_brownian(self):
        pop, _ = run_continuous(flat_table(0.0), 6.0, 5)
        assert pop.size == 1 and not pop.truncated

    def test_smaller_alpha_fewer_particles(self):
        small, _ = run_continuous(ModelParams(alpha=0.5), 9.0, 42)
        large, _ = run_continuous(ModelParams(alpha=3.0), 9.0, 42)
        assert small.size <= large.size

    def test_birth_before_proposal(self):
        pop, _ = run_continuous(P_SIN, 5.0, 17)
        assert np.all(pop.birth <= pop.next_proposal)

    def test_unique_ids(self):
        pop, _ = run_continuous(P_HOM, 7.0, 3)
        assert len(pop.lineage_ids()) == pop.size

    def test_particle_view(self):
        pop, _ = run_continuous(P_HOM, 4.0, 3)
        root = pop.particle(0)
        assert root.parent_id is None and root.birth_time == 0.0
        assert root.birth_time <= root.next_proposal
        if pop.size > 1:
            kid = pop.particle(1)
            assert kid.parent_id is not None
            assert kid.birth_time <= kid.next_proposal

    def test_child_ids_reproducible(self):
        from bbmlab.rng import child_id

        pop, _ = run_continuous(P_HOM, 5.0, 21)
        kids = np.nonzero(pop.parent >= 0)[0]
        assert len(kids) > 0
        for i in kids[:20]:
            p = pop.parent[i]
            # the child id must be derivable from the parent id and one of
            # the parent's proposal indices
            found = False
            for k in range(1, 40):
                hi, lo = child_id(pop.lid_hi[p], pop.lid_lo[p], np.uint64(k))
                if hi == pop.lid_hi[i] and lo == pop.lid_lo[i]:
                    found = True
                    break
            assert found

    def test_cap_halts_without_culling(self):
        pop, _ = run_continuous(P_HOM, 12.0, 4, cap=500)
        assert pop.truncated
        assert pop.size <= 500
        assert pop.time < 12.0

    def test_thinning_exactness_ks(self):
        # single tagged lineage observed for a long window; population-wide
        # gap collection would be length-biased by the exponential growth
        p_const = 0.6
        pop, _ = run_continuous(flat_table(p_const), 18000.0, 555,
                                record_splits=True, spawn_children=False)
        times = np.array(sorted(t for _, t in pop.split_log))
        gaps = np.diff(np.concatenate([[0.0], times]))[:10000]
        assert len(gaps) == 10000
        ks = st.kstest(gaps, "expon", args=(0, 1.0 / p_const))
        assert ks.pvalue > 0.01

    def test_snapshot_sync_and_stats(self, sys_a1_small):
        consts = derived_constants(P_SIN, sys_a1_small.eigenvalues[0])
        pop, stats = run_continuous(P_SIN, 6.0, 8, snapshot_times=[3.0],
                                    consts=consts)
        assert [s.t for s in stats] == [3.0, 6.0]
        for s_entry in stats:
            assert s_entry.m_t >= abs(s_entry.max_x) * (1 if s_entry.max_x >= 0 else 0)
            if s_entry.barrier_ok:
                assert s_entry.z_t >= 0.0

    def test_validation(self):
        with pytest.raises(DomainError):
            run_continuous(P_SIN, -1.0, 3)
        with pytest.raises(DomainError):
            run_continuous(P_SIN, 2.0, 3, cap=0)


class TestCoupled:
    def test_subset_chain_and_sizes(self):
        runs = run_coupled([0.5, 1.0, 2.0, 4.0], 10.0, 31,
                           snapshot_times=[2.5, 5.0, 7.5],
                           include_homogeneous=True)
        sizes = [runs[k][0].size for k in ("0.5", "1.0", "2.0", "4.0", "inf")]
        assert sizes == sorted(sizes)
        # chain is asserted inside run_coupled; verify the top member too
        top = runs["inf"][0].lineage_ids()
        for k in ("0.5", "1.0", "2.0", "4.0"):
            assert runs[k][0].lineage_ids().issubset(top)

    def test_single_alpha_equals_plain_run(self):
        one = run_coupled([1.0], 4.0, 99, snapshot_times=[2.0])["1.0"][0]
        two, _ = run_continuous(P_SIN, 4.0, 99, snapshot_times=[2.0])
        assert np.array_equal(one.x, two.x)
        assert np.array_equal(one.lid_lo, two.lid_lo)

    def test_unsorted_rejected(self):
        with pytest.raises(ConfigurationError):
            run_coupled([2.0, 1.0], 4.0, 3)


class TestDiscrete:
    def test_doubling_exact(self):
        pop, _ = run_discrete(P_HOM, 10, 7)
        assert pop.size == 2 ** 10

    def test_walker_variance(self):
        disp = []
        for rep in range(3000):
            pp, _ = run_discrete(flat_table(0.0), 10, derive_seed(1000, rep))
            disp.append((pp.x[0], pp.y[0]))
        disp = np.array(disp)
        # one-step variance per coordinate is 2/5
        assert disp[:, 0].var() == pytest.approx(4.0, rel=0.1)
        assert disp[:, 1].var() == pytest.approx(4.0, rel=0.1)

    def test_determinism(self):
        a, _ = run_discrete(P_SIN, 8, 12)
        b, _ = run_discrete(P_SIN, 8, 12)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.lid_lo, b.lid_lo)

    def test_offspring_frequency_binomial(self):
        # 99% CI per theta bin over >= 1e4 events
        events_theta, events_kids = [], []
        rep = 0
        while sum(len(t) for t in events_theta) < 10_000:
            _, ev = run_discrete(P_SIN, 9, derive_seed(4321, rep), record_events=True)
            for theta, kids in ev:
                events_theta.append(theta)
                events_kids.append(kids)
            rep += 1
        theta = np.concatenate(events_theta)
        kids = np.concatenate(events_kids)
        from bbmlab.model import branching_rate

        p = branching_rate(theta, P_SIN)
        bins = np.linspace(-math.pi, math.pi, 13)
        which = np.digitize(theta, bins) - 1
        for b in range(12):
            sel = which == b
            n = int(sel.sum())
            if n < 50:
                continue
            successes = float((kids[sel] - 1).sum())
            mean_p = float(p[sel].sum())
            var_p = float((p[sel] * (1 - p[sel])).sum())
            if var_p == 0:
                assert successes == mean_p
                continue
            z = (successes - mean_p) / math.sqrt(var_p)
            assert abs(z) <= 2.576

    def test_cap(self):
        pop, _ = run_discrete(P_HOM, 20, 3, cap=1000)
        assert pop.truncated and pop.size <= 1000


class TestManyToFew:
    def test_mto1_constant_rate(self):
        rep = many_to_one_check(P_HOM, 2.0, PathFunctional("one"), 500, 2000, seed=11)
        assert rep["mc"] == pytest.approx(math.exp(2.0), rel=1e-12)
        assert abs(rep["z"]) <= 3.0

    def test_mto1_rate_zero_brownian(self):
        rep = many_to_one_check(flat_table(0.0), 2.0,
                                PathFunctional("x_indicator", x0=0.5), 200, 20000, seed=3)
        assert rep["sim"] == pytest.approx(rep["mc"], abs=4 * rep["mc_se"] + 4 * rep["sim_se"])

    def test_mto1_inhomogeneous(self):
        rep = many_to_one_check(P_SIN, 2.0, PathFunctional("x_indicator", x0=1.0),
                                1000, 50000, seed=12)
        assert abs(rep["z"]) <= 3.0

    def test_mto1_cylinder(self):
        fn = PathFunctional("x_cylinder", times=(1.0, 2.0), thresholds=(-2.0, -1.0))
        rep = many_to_one_check(P_SIN, 2.0, fn, 500, 30000, seed=15)
        assert abs(rep["z"]) <= 3.5

    def test_mto2_yule_second_factorial_moment(self):
        from oracles import yule_second_factorial

        rep = many_to_two_check(P_HOM, 1.5, PathFunctional("one"),
                                PathFunctional("one"), 6000, 40000, seed=13)
        exact = yule_second_factorial(1.5)
        assert rep["sim"] == pytest.approx(exact, rel=0.05)
        assert rep["mc"] == pytest.approx(exact, rel=0.05)

    def test_mto2_inhomogeneous(self):
        f = PathFunctional("x_indicator", x0=0.5)
        rep = many_to_two_check(P_SIN, 1.5, f, f, 4000, 50000, seed=14)
        assert abs(rep["z"]) <= 3.0

    def test_mto2_zero_functional(self):
        f = PathFunctional("x_indicator", x0=math.inf)
        rep = many_to_two_check(P_SIN, 1.0, f, f, 100, 1000, seed=2)
        assert rep["sim"] == 0.0 and rep["mc"] == 0.0

    def test_unsupported_functional(self):
        with pytest.raises(ConfigurationError):
            many_to_one_check(P_SIN, 2.0, PathFunctional("weird"), 100, 1000, seed=1)
        with pytest.raises(ConfigurationError):
            many_to_two_check(P_SIN, 1.0, PathFunctional("x_cylinder"),
                              PathFunctional("one"), 100, 1000, seed=1)


class TestPorism:
    def test_homogeneous_control_no_decay(self):
        rep = porism_probe(P_HOM, [4.0, 8.0], 100, seed=7)
        # rotational symmetry: scaled |Y| stays order sqrt(t); reported only
        assert rep["rows"][8.0]["y_scaled_quantiles"][0.5] > 0.3

    def test_gap_nonnegative(self):
        rep = porism_probe(P_SIN, [4.0, 8.0], 100, seed=8)
        for row in rep["rows"].values():
            assert row["gap_quantiles"][0.25] >= 0.0

    def test_radius_law_matches_bessel_density(self):
        # radius of the single driftless walker at t=2 follows the planar
        # radial density; with r0 = 0 that is Rayleigh(sqrt 2)
        radii = []
        for rep in range(4000):
            pop, _ = run_continuous(flat_table(0.0), 2.0, derive_seed(31415, rep))
            radii.append(math.hypot(pop.x[0], pop.y[0]))
        ks = st.kstest(np.array(radii), lambda z: 1.0 - np.exp(-z * z / 4.0))
        assert ks.pvalue > 0.01
        # the same law through the Bessel-density module at r0 = 0
        from bbmlab.mc import bessel_density

        z = np.linspace(0.01, 6.0, 200)
        rayleigh = z / 2.0 * np.exp(-z * z / 4.0)
        assert np.allclose(bessel_density(0.0, 2.0, z), rayleigh, atol=1e-14)

    def test_throughput_large_population(self):
        import time

        p4 = ModelParams(alpha=4.0, rate_family=RateFamily.SIN_POW)
        t0 = time.time()
        pop, _ = run_continuous(p4, 13.0, 5, snapshot_times=[13.0])
        assert pop.size > 100_000 and not pop.truncated
        assert time.time() - t0 < 30.0

    def test_stats_export(self, tmp_path):
        pop, stats = run_continuous(P_SIN, 4.0, 3, snapshot_times=[2.0])
        export_stats_csv(tmp_path / "s.csv", [(0, stats)])
        lines = (tmp_path / "s.csv").read_text().splitlines()
        assert lines[0] == "replicate,t,M_t,max_X,argmax_Y,Z_t,barrier_ok"
        assert len(lines) == 3

    def test_snapshot_export(self, tmp_path):
        pop, _ = run_continuous(P_SIN, 3.0, 3, snapshot_times=[1.5])
        pop.export_snapshots_csv(tmp_path / "snap.csv", replicate=2)
        head = (tmp_path / "snap.csv").read_text().splitlines()
        assert head[0] == "replicate,time,lineage_id,x,y"
        assert head[1].startswith("2,1.5,")

import numpy as np
import pytest
from scipy import stats

from upcross import engine
from upcross.deviation import build_proxy, sup_deviation
from upcross.engine import EnginePlan, PathRangeError, run_path
from upcross.exit_law import fast_law
from upcross.field import build_field
from upcross.ks import kolmogorov_sf, ks_2samp, ks_statistic
from upcross.pvariation import sup_pvar_over_time
from upcross.rng import path_stream
from upcross.skeleton import coarsen, generate_skeleton


@pytest.mark.parametrize("i", range(4))
def test_engine_matches_materialized_path(i):
    law = fast_law()
    plan = EnginePlan.build([3, 4], 4, [0.3, 0.5], pvar_levels=[3, 4], m=1, q=3.0)
    res = run_path(path_stream(1, i), plan, law)
    for ti, T in enumerate(plan.horizons):
        sk = generate_skeleton(path_stream(1, i), 8, 0.0, T, law=law)
        for p, (k, K) in enumerate(plan.pairs):
            fine, c = build_field(coarsen(sk, K)), build_field(coarsen(sk, k))
            st = sup_deviation(c, build_proxy(fine, [k]), T)
            assert st.sup_deviation == res.dev_counts[p, ti] * fine.unit
            assert st.lstar == res.lstar_counts[p, ti] * fine.unit
            li = plan.levels.index(k)
            assert res.pvar[li, ti] * c.unit**3 == pytest.approx(sup_pvar_over_time(c, 3.0, 1, T), rel=1e-12)
            assert res.origin_counts[li, ti] == c.upcrossings_before(0, T)


def test_plan_build():
    plan = EnginePlan.build([4, 2, 2], 6, [1.0, 0.5])
    assert plan.levels == (2, 4, 8, 10)
    assert plan.pairs == ((2, 8), (4, 10))
    assert plan.horizons == (0.5, 1.0)
    assert plan.finest == 10
    assert plan.projected_steps() == 4.0**10
    assert EnginePlan.build([3], None, [1.0]).pairs == ()


def test_deterministic_mode_step_count():
    plan = EnginePlan.build([3], None, [0.5], mode="deterministic-durations")
    res = run_path(path_stream(0, 0), plan)
    assert res.n_steps == 32


def test_path_range_error(monkeypatch):
    monkeypatch.setattr(engine, "RADIUS_SIGMAS", 0.0)
    with pytest.raises(PathRangeError):
        run_path(path_stream(0, 0), EnginePlan.build([2], None, [50.0]))


def test_ks_against_scipy():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=300), rng.normal(0.2, 1, size=450)
    res = ks_2samp(a, b)
    assert res.statistic == pytest.approx(stats.ks_2samp(a, b).statistic, abs=1e-15)
    en = np.sqrt(300 * 450 / 750)
    assert res.pvalue == pytest.approx(stats.kstwobign.sf(en * res.statistic), rel=1e-12)


@pytest.mark.parametrize("x", [0.1, 0.5, 0.9, 1.0, 1.2, 2.0, 4.0])
def test_kolmogorov_sf(x):
    assert kolmogorov_sf(x) == pytest.approx(stats.kstwobign.sf(x), rel=1e-12, abs=1e-300)


def test_ks_trivial_cases():
    x = np.arange(10.0)
    r = ks_2samp(x, x)
    assert r.statistic == 0.0 and r.pvalue == 1.0
    assert ks_statistic([0, 1, 2], [5, 6]) == 1.0
    with pytest.raises(ValueError):
        ks_2samp([], [1.0])

import math

import numpy as np
import pytest

from upcross.deviation import (
    MIN_PROXY_GAP, build_proxy, normalizer, subadditivity_check, sup_deviation,
    sup_deviation_bruteforce,
)
from upcross.exit_law import fast_law
from upcross.field import build_field
from upcross.rng import path_stream
from upcross.skeleton import CrossingSkeleton, coarsen, generate_skeleton


def ladder():
    # level-2 walk 0 1 2 3 4 3 2 (units of 1/4), one step per 0.1
    return CrossingSkeleton(level=2, start=0, times=np.arange(1, 7) / 10,
                            signs=np.array([1, 1, 1, 1, -1, -1], np.int8), horizon=0.6)


def test_normalizer_values():
    for k in (1, 4, 10):
        assert normalizer(k) == pytest.approx(math.sqrt(2.0**-k * k * math.log(2)), rel=1e-15)
    assert normalizer(3, log_base=2) == pytest.approx(math.sqrt(3 / 8), rel=1e-15)


def test_ladder_by_hand():
    fine = ladder()
    f, c = build_field(fine), build_field(coarsen(fine, 1))
    st = sup_deviation(c, build_proxy(f, strict=False), 0.6)
    # each fine cell is one fine upcrossing (0.5) away from the coarse value
    assert st.sup_deviation == 0.5
    assert st.lstar == 0.5
    assert st.normalizer == normalizer(1)
    assert st.rate_statistic == 0.5 / normalizer(1)
    assert st.F_statistic == pytest.approx(st.rate_statistic**2)
    assert st.centered_statistic == pytest.approx(st.rate_statistic - 2 * math.sqrt(0.5))
    assert sup_deviation_bruteforce(c, build_proxy(f, strict=False), 0.6) == 0.5
    assert sup_deviation(c, build_proxy(f, strict=False), 0.05).sup_deviation == 0.0


def test_same_level_is_zero():
    s = generate_skeleton(path_stream(1, 0), 5, 0.0, 0.5, law=fast_law())
    f = build_field(s)
    st = sup_deviation(f, build_proxy(f, strict=False), 0.5)
    assert st.sup_deviation == 0.0 and st.rate_statistic == 0.0


@pytest.mark.parametrize("seed", range(4))
def test_matches_bruteforce(seed):
    s = generate_skeleton(path_stream(seed, 1), 6, 0.0, 0.25, law=fast_law())
    assert 500 < s.n_steps < 1600
    f = build_field(s)
    c = build_field(coarsen(s, 4))
    proxy = build_proxy(f, strict=False)
    for T in (0.1, 0.25):
        assert sup_deviation(c, proxy, T).sup_deviation == sup_deviation_bruteforce(c, proxy, T)


def test_proxy_level_rules():
    s = generate_skeleton(path_stream(2, 2), 6, 0.0, 0.1)
    f = build_field(s)
    build_proxy(f, [6 - MIN_PROXY_GAP])
    with pytest.raises(ValueError):
        build_proxy(f, [6 - MIN_PROXY_GAP + 1])
    with pytest.raises(ValueError):
        build_proxy(f, [7], strict=False)


def test_mismatched_inputs():
    a = generate_skeleton(path_stream(3, 0), 6, 0.0, 0.1)
    b = generate_skeleton(path_stream(3, 1), 6, 0.0, 0.2)
    proxy = build_proxy(build_field(a), strict=False)
    with pytest.raises(ValueError):
        sup_deviation(build_field(coarsen(b, 3)), proxy, 0.1)
    with pytest.raises(ValueError):
        sup_deviation(build_field(coarsen(a, 3)), proxy, 0.5)
    with pytest.raises(ValueError):
        sup_deviation(proxy.field, build_proxy(build_field(coarsen(a, 3)), strict=False), 0.1)


def test_subadditivity_and_identities():
    for i in range(5):
        s = generate_skeleton(path_stream(9, i), 7, 0.0, 0.3, law=fast_law())
        rep = subadditivity_check(s, 3, 0.3)
        assert rep.n_checked == coarsen(s, 3).step_count_at(0.3) + 1
        assert rep.violations == 0
        assert rep.identity_violations == 0
        assert rep.max_excess <= 1e-12


def test_subadditivity_shift_at_zero_is_equality():
    s = generate_skeleton(path_stream(4, 4), 7, 0.0, 0.3, law=fast_law())
    rep = subadditivity_check(s, 3, 0.3, step_indices=[0])
    assert rep.n_checked == 1 and rep.max_excess == 0.0


def test_subadditivity_t_equals_s():
    s = generate_skeleton(path_stream(4, 5), 6, 0.0, 0.3, law=fast_law())
    c = coarsen(s, 2)
    n = 2
    T = float(c.times[n - 1])
    rep = subadditivity_check(s, 2, T, step_indices=[n])
    assert rep.violations == 0 and rep.max_excess <= 0.0

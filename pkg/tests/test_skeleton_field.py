import numpy as np
import pytest

from upcross.exit_law import fast_law
from upcross.field import build_field, level_index
from upcross.rng import path_stream
from upcross.skeleton import (
    CrossingSkeleton, coarsen, dump_skeleton, generate_skeleton, iter_steps, load_skeleton,
)


def toy():
    # values 0 1 2 1 0 1 at level 1 (h = 1/2)
    return CrossingSkeleton(level=1, start=0, times=np.array([0.1, 0.2, 0.3, 0.4, 0.5]),
                            signs=np.array([1, 1, -1, -1, 1], dtype=np.int8), horizon=0.5)


@pytest.fixture(scope="module")
def path():
    return generate_skeleton(path_stream(7, 0), 8, 0.0, 0.5, law=fast_law())


def test_toy_values_and_queries():
    s = toy()
    np.testing.assert_array_equal(s.values, [0, 1, 2, 1, 0, 1])
    assert s.step_count_at(0.0) == 0
    assert s.step_count_at(0.2) == 2
    assert s.walk_value_at(0.25) == 1.0
    assert s.walk_value_at(0.5) == 0.5
    np.testing.assert_allclose(s.durations, [0.1] * 5)
    with pytest.raises(ValueError):
        s.step_count_at(0.6)


def test_toy_field():
    f = build_field(toy())
    assert f.n_up == 3 and f.n_down == 2
    assert (f.j_min, f.j_max) == (1, 2)
    np.testing.assert_array_equal(f.times_for(1), [0.1, 0.5])
    np.testing.assert_array_equal(f.times_for(2), [0.2])
    assert f.times_for(5).size == 0
    assert f.upcrossings_before(1, 0.3) == 1
    assert f.upcrossings_before(1, 0.5) == 2
    assert f.U_value(0.3, 0.5) == 1.0
    assert f.U_value(0.3, 0.4) == 1.0
    assert f.U_value(0.3, 0.7) == 1.0
    assert f.U_value(0.3, 0.0) == 0.0
    np.testing.assert_array_equal(f.counts_at(0.5), [2, 1])


def test_level_index_boundaries():
    assert level_index(0.0, 3) == 0
    assert level_index(0.125, 3) == 1
    assert level_index(0.1250001, 3) == 2
    assert level_index(-0.125, 3) == -1
    with pytest.raises(ValueError):
        level_index(float("inf"), 2)


def test_generated_skeleton_shape(path):
    assert path.level == 8 and path.start == 0
    assert path.times[-1] >= 0.5 > path.times[-2]
    assert np.all(np.diff(path.times) > 0)
    assert set(np.unique(path.signs)) <= {-1, 1}
    # about T * 4^k steps
    assert 0.5 * 4**8 * 0.8 < path.n_steps < 0.5 * 4**8 * 1.2


def test_generation_is_reproducible():
    a = generate_skeleton(path_stream(3, 4), 6, 0.25, 0.2)
    b = generate_skeleton(path_stream(3, 4), 6, 0.25, 0.2)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.signs, b.signs)
    assert a.start == 16


def test_generation_errors():
    with pytest.raises(ValueError):
        generate_skeleton(path_stream(0, 0), 3, 0.1, 1.0)
    with pytest.raises(ValueError):
        generate_skeleton(path_stream(0, 0), 3, 0.0, 1.0, mode="bogus")
    with pytest.raises(ValueError):
        generate_skeleton(path_stream(0, 0), 0, 0.0, 1.0)


def test_deterministic_durations():
    s = generate_skeleton(path_stream(1, 1), 4, 0.0, 0.5, mode="deterministic-durations")
    np.testing.assert_allclose(s.durations, 4.0**-4)
    assert s.n_steps == 128


def test_iter_steps_chunks_concatenate():
    parts = list(iter_steps(path_stream(2, 0), 5, 0.3, law=fast_law(), chunk=64))
    whole = generate_skeleton(path_stream(2, 0), 5, 0.0, 0.3, law=fast_law())
    np.testing.assert_array_equal(np.concatenate([p[0] for p in parts]), whole.times)


def test_coarsen_nesting(path):
    for k in (3, 5, 7):
        c = coarsen(path, k)
        assert c.level == k
        assert np.all(np.isin(c.times, path.times))
        assert np.all(np.abs(np.diff(c.values)) == 1)
        # the coarse walk value equals the fine value at each coarse time
        n = np.searchsorted(path.times, c.times) + 1
        np.testing.assert_array_equal(path.values[n], c.values[1:] * 2 ** (8 - k))
    assert coarsen(path, 8) is path
    np.testing.assert_array_equal(coarsen(coarsen(path, 6), 4).times, coarsen(path, 4).times)


def test_coarsen_errors(path):
    with pytest.raises(ValueError):
        coarsen(path, 9)
    with pytest.raises(ValueError):
        coarsen(path, 0)
    odd = CrossingSkeleton(level=3, start=1, times=np.array([0.1]), signs=np.array([1], np.int8), horizon=0.1)
    with pytest.raises(ValueError):
        coarsen(odd, 2)


def test_shift_tail(path):
    n = 100
    sh = path.shift_tail(n)
    assert sh.start == path.values[n]
    assert sh.horizon == pytest.approx(0.5 - path.times[n - 1])
    np.testing.assert_array_equal(sh.times, path.times[n:] - path.times[n - 1])
    assert path.shift_tail(0).start == path.start
    with pytest.raises(IndexError):
        path.shift_tail(path.n_steps + 1)


def test_dump_round_trip(tmp_path, path):
    p = tmp_path / "s.bin"
    dump_skeleton(path, p)
    back = load_skeleton(p)
    assert (back.level, back.start, back.horizon) == (path.level, path.start, path.horizon)
    np.testing.assert_array_equal(back.signs, path.signs)
    np.testing.assert_allclose(back.times, path.times, rtol=1e-12)
    raw = p.read_bytes()
    assert raw[:4] == b"UPXS"
    assert len(raw) == 32 + 9 * path.n_steps
    (tmp_path / "bad.bin").write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(ValueError):
        load_skeleton(tmp_path / "bad.bin")


def test_field_counts_match_walk(path):
    f = build_field(path)
    v = path.values
    up = v[1:] > v[:-1]
    assert f.n_up == int(up.sum())
    assert f.n_up - f.n_down == v[-1] - v[0]
    # every upcrossing into j is preceded by arrival at j-1
    for j in range(f.j_min, f.j_max + 1):
        assert f.times_for(j).size == int(np.sum(up & (v[1:] == j)))

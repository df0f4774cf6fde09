import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deltamerge.codec import SortedDictionary, to_words
from deltamerge.merge import (MergeError, build_delta_dictionary, merge_column_naive,
                              merge_column_optimized, merge_dictionaries,
                              rewrite_values_optimized)
from deltamerge.parallel import (parallel_build_delta_dictionary, parallel_merge_dictionaries,
                                 parallel_merge_table, parallel_rewrite_values,
                                 partition_ranges, prefix_sum, prefix_sum_parallel)
from deltamerge.store import DeltaPartition, MainPartition, Table

from helpers import example_delta, example_main


def _dict(values, width=4):
    return SortedDictionary.from_values(values, width)


@given(st.lists(st.binary(min_size=4, max_size=4), max_size=100),
       st.lists(st.binary(min_size=4, max_size=4), max_size=100),
       st.integers(1, 12))
def test_partition_is_balanced_and_ordered(a, b, n_threads):
    um, ud = _dict(a), _dict(b)
    ranges = partition_ranges(um, ud, n_threads)
    total = len(um) + len(ud)
    assert len(ranges) == n_threads
    assert ranges[0].main_start == ranges[0].delta_start == 0
    assert ranges[-1].main_end == len(um) and ranges[-1].delta_end == len(ud)
    sizes = [r.size for r in ranges]
    assert sum(sizes) == total and max(sizes) - min(sizes) <= 1
    for r, nxt in zip(ranges, ranges[1:]):
        assert (r.main_end, r.delta_end) == (nxt.main_start, nxt.delta_start)
    # every element of a range sorts no later than every element of the next
    mv, dv = um.values(), ud.values()
    for r, nxt in zip(ranges, ranges[1:]):
        left = mv[r.main_start:r.main_end] + dv[r.delta_start:r.delta_end]
        right = mv[nxt.main_start:nxt.main_end] + dv[nxt.delta_start:nxt.delta_end]
        if left and right:
            assert max(left) <= min(right)


def test_partition_more_threads_than_entries():
    ranges = partition_ranges(_dict([b"aaaa"]), _dict([b"bbbb"]), 8)
    assert sum(r.size for r in ranges) == 2
    assert sum(r.size == 0 for r in ranges) == 6
    with pytest.raises(ValueError):
        partition_ranges(_dict([]), _dict([]), 0)


def test_prefix_sum_examples():
    assert prefix_sum([]).tolist() == [0]
    assert prefix_sum([3, 1, 2]).tolist() == [0, 3, 4, 6]
    assert prefix_sum_parallel([], 4).tolist() == [0]
    assert prefix_sum_parallel([3, 1, 2], 2).tolist() == [0, 3, 4, 6]


def test_prefix_sum_errors():
    with pytest.raises(OverflowError):
        prefix_sum([2 ** 62, 2 ** 62])
    with pytest.raises(OverflowError):
        prefix_sum_parallel([2 ** 62, 2 ** 62], 2)
    with pytest.raises(ValueError):
        prefix_sum([1, -1])


@given(st.lists(st.integers(0, 10 ** 9), max_size=70), st.integers(1, 9))
def test_parallel_scan_matches_serial(counts, n_threads):
    want = [0]
    for c in counts:
        want.append(want[-1] + c)
    assert prefix_sum(counts).tolist() == want
    assert prefix_sum_parallel(counts, n_threads).tolist() == want


@pytest.mark.parametrize("n_threads", [1, 2, 3, 4])
def test_worked_example_parallel(n_threads):
    um = SortedDictionary.from_values(example_main(), 8)
    ud = SortedDictionary.from_values(example_delta(), 8)
    res = parallel_merge_dictionaries(um, ud, n_threads)
    assert len(res.merged) == 9 and res.x_main[4] == 6
    ref = merge_dictionaries(um, ud)
    assert res.merged == ref.merged
    assert np.array_equal(res.x_main, ref.x_main) and np.array_equal(res.x_delta, ref.x_delta)


@settings(max_examples=150)
@given(st.lists(st.binary(min_size=2, max_size=2), max_size=120),
       st.lists(st.binary(min_size=2, max_size=2), max_size=120),
       st.sampled_from([1, 2, 3, 4, 8, 16]))
def test_parallel_dictionary_merge_bitwise(a, b, n_threads):
    # two-byte values give many shared entries, often right at range boundaries
    um, ud = _dict(a, 2), _dict(b, 2)
    ref = merge_dictionaries(um, ud)
    res = parallel_merge_dictionaries(um, ud, n_threads)
    assert res.merged.words.tobytes() == ref.merged.words.tobytes()
    assert res.x_main.tobytes() == ref.x_main.tobytes()
    assert res.x_delta.tobytes() == ref.x_delta.tobytes()


def _column(rng, n_main, n_delta, k, width=8):
    pool = np.unique(rng.integers(0, 2 ** 62, k)).astype(">u8")
    main = MainPartition.from_values([v.tobytes() for v in rng.choice(pool, n_main)], width)
    d = DeltaPartition(width)
    if n_delta:
        d.append_words(to_words([v.tobytes() for v in rng.choice(pool, n_delta)], width))
    d.freeze()
    return main, d


@pytest.mark.parametrize("n_threads", [1, 2, 3, 8])
def test_parallel_steps_match_serial(n_threads):
    rng = np.random.default_rng(n_threads)
    main, delta = _column(rng, 5000, 777, 900)
    u_d, codes = build_delta_dictionary(delta)
    pu_d, pcodes = parallel_build_delta_dictionary(delta, n_threads)
    assert pu_d == u_d and pcodes == codes
    res = merge_dictionaries(main.dictionary, u_d)
    w = main.codes.width_bits + 1
    ref = rewrite_values_optimized(main.codes, codes, res.x_main, res.x_delta, w)
    out = parallel_rewrite_values(main.codes, codes, res.x_main, res.x_delta, w, n_threads)
    assert out == ref


def _table(rng, n_cols, sizes=None):
    t = Table.create(n_cols, 8)
    n_main = 3000
    mains, deltas = [], []
    for j in range(n_cols):
        k = (sizes or [50] * n_cols)[j]
        pool = np.unique(rng.integers(0, 2 ** 62, k)).astype(">u8").view(np.uint64)
        pool = pool.byteswap().reshape(-1, 1)
        mains.append(pool[rng.integers(0, len(pool), n_main)])
        deltas.append(pool[rng.integers(0, len(pool), 200)])
    t.bulk_load(mains)
    t.insert_rows(deltas)
    return t


@pytest.mark.parametrize("strategy", ["columns", "intra"])
def test_table_merge_matches_serial(strategy):
    t = _table(np.random.default_rng(5), 20)
    t.freeze_and_swap()
    ref = [merge_column_naive(c.main, c.merging_delta) for c in t.columns]
    stats = {}
    new = parallel_merge_table(t, 8, strategy, stats)
    assert all(a == b for a, b in zip(new, ref))
    assert stats["wall"] > 0
    t.commit_merge(new)
    assert t.n_main == 3200 and t.n_delta == 0


def test_skewed_columns():
    t = _table(np.random.default_rng(9), 6, sizes=[1, 2, 5, 3000, 1, 2])
    t.freeze_and_swap()
    ref = [merge_column_optimized(c.main, c.merging_delta) for c in t.columns]
    for strategy in ("columns", "intra"):
        assert parallel_merge_table(t, 4, strategy) == ref


def test_table_merge_requires_freeze():
    t = Table.create(1, 8)
    with pytest.raises(MergeError):
        parallel_merge_table(t, 2)
    t.freeze_and_swap()
    with pytest.raises(ValueError):
        parallel_merge_table(t, 2, "bogus")


def test_merge_convenience_all_paths():
    expected = None
    for method, nt, strategy in [("naive", 1, "columns"), ("optimized", 1, "columns"),
                                 ("optimized", 4, "columns"), ("optimized", 4, "intra")]:
        t = _table(np.random.default_rng(2), 3)
        t.merge(method, nt, strategy)
        got = [t.materialize(j) for j in range(3)]
        expected = expected or got
        assert got == expected

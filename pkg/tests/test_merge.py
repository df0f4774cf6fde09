import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deltamerge.codec import BitPackedVector, SortedDictionary, pack, to_words
from deltamerge.merge import (MergeError, build_delta_dictionary, merge_column,
                              merge_column_naive, merge_column_optimized, merge_dictionaries,
                              new_code_width, rewrite_values_optimized)
from deltamerge.store import DeltaPartition, MainPartition

from helpers import (example_delta, example_main, pad, ref_encode, ref_merge_column, ref_translation,
                     ref_width)


def _delta(values, width=8):
    d = DeltaPartition(width)
    for v in values:
        d.append(v)
    d.freeze()
    return d


def test_worked_example_end_to_end():
    main = MainPartition.from_values(example_main(), 8)
    assert len(main.dictionary) == 6 and main.codes.width_bits == 3
    assert main.codes[0] == 4
    delta = _delta(example_delta())

    u_d, d_codes = build_delta_dictionary(delta)
    assert len(u_d) == 4 and d_codes.width_bits == 2
    res = merge_dictionaries(main.dictionary, u_d)
    assert len(res.merged) == 9
    assert res.x_main[4] == 6
    assert new_code_width(len(res.merged)) == 4

    out = merge_column_optimized(main, delta)
    assert out.codes.width_bits == 4 and len(out) == 12
    assert out.codes[0] == 6
    assert out.decode() == example_main() + example_delta()
    assert out == merge_column_naive(main, delta)
    assert out.codes.words.tobytes() == merge_column_naive(main, delta).codes.words.tobytes()


def test_rewrite_single_code():
    x_main = np.array([0, 1, 2, 3, 6, 7], dtype=np.uint32)
    out = rewrite_values_optimized(pack([4], 3), BitPackedVector(0, 1), x_main,
                                   np.zeros(0, dtype=np.uint32), 4)
    assert out.width_bits == 4 and out.to_array().tolist() == [6]


def test_rewrite_empty():
    out = rewrite_values_optimized(BitPackedVector(0, 1), BitPackedVector(0, 1),
                                   np.zeros(0, np.uint32), np.zeros(0, np.uint32), 1)
    assert out.count == 0


def test_rewrite_rejects_corrupt_code():
    with pytest.raises(MergeError, match="row 1"):
        rewrite_values_optimized(pack([0, 3], 2), BitPackedVector(0, 1),
                                 np.array([0, 1], np.uint32), np.zeros(0, np.uint32), 1)


def test_unfrozen_delta_rejected():
    d = DeltaPartition(8)
    d.append(pad("a"))
    with pytest.raises(MergeError):
        build_delta_dictionary(d)
    with pytest.raises(MergeError):
        merge_column_naive(MainPartition.empty(8), d)


def test_empty_delta_is_identity():
    main = MainPartition.from_values(example_main(), 8)
    for method in ("optimized", "naive"):
        assert merge_column(main, _delta([]), method) == main
    u_d, codes = build_delta_dictionary(_delta([]))
    assert len(u_d) == 0 and codes.count == 0
    res = merge_dictionaries(main.dictionary, u_d)
    assert res.x_main.tolist() == list(range(6)) and res.merged == main.dictionary


def test_empty_main():
    delta = _delta(example_delta())
    out = merge_column_optimized(MainPartition.empty(8), delta)
    assert out.decode() == example_delta()
    assert out == merge_column_naive(MainPartition.empty(8), delta)
    assert merge_column_optimized(MainPartition.empty(8), _delta([])) == MainPartition.empty(8)


def test_unknown_method():
    with pytest.raises(ValueError):
        merge_column(MainPartition.empty(8), _delta([]), "fast")


def test_dictionary_width_mismatch():
    with pytest.raises(MergeError):
        merge_dictionaries(SortedDictionary.empty(8), SortedDictionary.empty(4))


def _sorted_dict(values, width):
    return SortedDictionary.from_values(values, width)


@given(st.lists(st.binary(min_size=4, max_size=4), max_size=80),
       st.lists(st.binary(min_size=4, max_size=4), max_size=80))
def test_dictionary_merge_against_set_union(a, b):
    u_m, u_d = _sorted_dict(a, 4), _sorted_dict(b, 4)
    res = merge_dictionaries(u_m, u_d, check=True)
    merged = sorted(set(a) | set(b))
    assert res.merged.values() == merged
    assert res.x_main.tolist() == ref_translation(u_m.values(), merged)
    assert res.x_delta.tolist() == ref_translation(u_d.values(), merged)
    assert max(len(u_m), len(u_d)) <= len(merged) <= len(u_m) + len(u_d)
    for x in (res.x_main, res.x_delta):
        assert np.all(np.diff(x.astype(np.int64)) > 0)


@st.composite
def columns(draw):
    width = draw(st.sampled_from([4, 8, 16]))
    alphabet = draw(st.lists(st.binary(min_size=width, max_size=width), min_size=1,
                             max_size=40, unique=True))
    main = draw(st.lists(st.sampled_from(alphabet), max_size=150))
    delta = draw(st.lists(st.sampled_from(alphabet) | st.binary(min_size=width, max_size=width),
                          max_size=60))
    return width, main, delta


@settings(max_examples=150)
@given(columns())
def test_merge_against_reference(case):
    width, main_vals, delta_vals = case
    main = MainPartition.from_values(main_vals, width)
    delta = DeltaPartition(width)
    if delta_vals:
        delta.append_words(to_words(delta_vals, width))
    delta.freeze()
    opt = merge_column_optimized(main, delta)
    naive = merge_column_naive(main, delta)
    assert opt == naive
    merged, codes = ref_merge_column(main_vals, delta_vals)
    assert opt.dictionary.values() == merged
    assert opt.codes.to_array().tolist() == codes
    assert opt.decode() == main_vals + delta_vals
    if merged:
        assert opt.codes.width_bits == ref_width(len(merged)) >= main.codes.width_bits
    u_d, d_codes = build_delta_dictionary(delta)
    ud_ref, dc_ref = ref_encode(delta_vals)
    assert u_d.values() == ud_ref and d_codes.to_array().tolist() == dc_ref
    if delta_vals:
        assert delta.raw.tobytes() == to_words(delta_vals, width).tobytes()


def test_large_random_merge_matches_naive():
    rng = np.random.default_rng(11)
    width = 8
    pool = np.unique(rng.integers(0, 2 ** 40, 5000)).astype(">u8")
    main_vals = [v.tobytes() for v in rng.choice(pool, 60_000)]
    delta_vals = [v.tobytes() for v in rng.choice(pool, 4000)] + [b"\xff" * 8]
    main = MainPartition.from_values(main_vals, width)
    delta = DeltaPartition(width)
    delta.append_words(to_words(delta_vals, width))
    delta.freeze()
    opt = merge_column_optimized(main, delta, stats := {})
    assert opt == merge_column_naive(main, delta)
    assert opt.decode() == main_vals + delta_vals
    assert set(stats) == {"step1a", "step1b", "step2a", "step2"}

"""Serial merge of one column's main partition with its frozen delta.

Optimized path (linear in rows plus dictionary sizes):

1a. walk the delta index in value order, producing the delta dictionary and
    a bit-packed code for every delta tuple (scattered through the postings);
1b. merge the main and delta dictionaries, dropping duplicates, while
    recording for every old code its position in the merged dictionary
    (the translation tables ``x_main`` / ``x_delta``);
2a. pick the new code width;
2b. rewrite every code with one translation-table lookup.

The naive path skips the translation tables and instead decodes each main
tuple through the old dictionary and binary-searches the merged one, which
costs a logarithmic search per tuple.
"""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numba import njit

from .codec import (BitPackedVector, SortedDictionary, cmp_rows, compressed_width,
                    copy_row, get_code, put_code)
from .store import DeltaPartition, MainPartition


class MergeError(RuntimeError):
    pass


@dataclass
class DictMergeResult:
    """Merged dictionary plus old-code -> new-code translation tables.

    ``x_main[i]`` is the merged position of ``u_main[i]`` and ``x_delta[k]``
    that of ``u_delta[k]``; both tables are strictly increasing.
    """
    merged: SortedDictionary
    x_main: np.ndarray
    x_delta: np.ndarray


def translation_dtype(n_entries: int) -> np.dtype:
    return np.dtype(np.uint32) if n_entries <= 2 ** 32 else np.dtype(np.uint64)


def _tick(stats: Optional[dict], key: str, t0: float) -> float:
    t1 = time.perf_counter()
    if stats is not None:
        stats[key] = stats.get(key, 0.0) + (t1 - t0)
    return t1


# --------------------------------------------------------------------------
# kernels

@njit(nogil=True, cache=True)
def merge_range(um, a0, a1, ud, d0, d1, out, o0, xm, xd, write, with_x):
    """Merge um[a0:a1] and ud[d0:d1] dropping equal heads once.

    With ``write`` the merged rows go to out[o0:] and, with ``with_x``, the
    output positions to xm / xd.  Returns the number of merged rows.
    """
    i = a0
    j = d0
    o = o0
    while i < a1 and j < d1:
        c = cmp_rows(um, i, ud, j)
        if c < 0:
            if write:
                copy_row(um, i, out, o)
                if with_x:
                    xm[i] = o
            i += 1
        elif c > 0:
            if write:
                copy_row(ud, j, out, o)
                if with_x:
                    xd[j] = o
            j += 1
        else:
            if write:
                copy_row(um, i, out, o)
                if with_x:
                    xm[i] = o
                    xd[j] = o
            i += 1
            j += 1
        o += 1
    while i < a1:
        if write:
            copy_row(um, i, out, o)
            if with_x:
                xm[i] = o
        i += 1
        o += 1
    while j < d1:
        if write:
            copy_row(ud, j, out, o)
            if with_x:
                xd[j] = o
        j += 1
        o += 1
    return o - o0


_BATCH = 4096


@njit(nogil=True, cache=True)
def _translate(src, sw, x, out, ow, shift, lo, hi, buf):
    # unpack, gather, pack in separate tight loops so that many table
    # misses can be outstanding at once
    n = np.uint64(x.shape[0])
    i0 = lo
    while i0 < hi:
        m = min(buf.shape[0], hi - i0)
        bad = False
        for k in range(m):
            c = get_code(src, sw, i0 + k)
            bad |= c >= n
            buf[k] = c
        if bad:
            for k in range(m):
                if buf[k] >= n:
                    return i0 + k + shift
        for k in range(m):
            buf[k] = x[buf[k]]
        for k in range(m):
            put_code(out, ow, i0 + k + shift, buf[k])
        i0 += m
    return -1


@njit(nogil=True, cache=True)
def rewrite_range(mwords, mw, n_main, xm, dwords, dw, xd, out, ow, start, stop):
    """out[i] = xm[main[i]] for main rows, xd[delta[i - n_main]] after.

    Returns -1, or the first row whose old code has no translation."""
    buf = np.empty(_BATCH, dtype=np.uint64)
    lo = start
    hi = min(stop, n_main)
    if lo < hi:
        bad = _translate(mwords, mw, xm, out, ow, 0, lo, hi, buf)
        if bad >= 0:
            return bad
    lo = max(start, n_main)
    if lo < stop:
        return _translate(dwords, dw, xd, out, ow, n_main, lo - n_main, stop - n_main, buf)
    return -1


@njit(inline="always")
def _search(merged, src, r):
    lo = 0
    hi = merged.shape[0]
    while lo < hi:
        mid = (lo + hi) >> 1
        if cmp_rows(merged, mid, src, r) < 0:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(nogil=True, cache=True)
def rewrite_naive_range(mwords, mw, n_main, um, draw, merged, out, ow, start, stop):
    """Decode through the old dictionary, then binary-search the merged one."""
    nm = merged.shape[0]
    for i in range(start, min(stop, n_main)):
        c = np.int64(get_code(mwords, mw, i))
        if c >= um.shape[0]:
            return i
        k = _search(merged, um, c)
        if k >= nm or cmp_rows(merged, k, um, c) != 0:
            return i
        put_code(out, ow, i, k)
    for i in range(max(start, n_main), stop):
        r = i - n_main
        k = _search(merged, draw, r)
        if k >= nm or cmp_rows(merged, k, draw, r) != 0:
            return i
        put_code(out, ow, i, k)
    return -1


# --------------------------------------------------------------------------
# steps

def build_delta_dictionary(delta: DeltaPartition) -> tuple[SortedDictionary, BitPackedVector]:
    """Step 1(a): sorted distinct delta values and the delta re-encoded
    against them.  The delta itself is left untouched; codes go to a fresh
    bit-packed vector."""
    if not delta.frozen:
        raise MergeError("delta partition must be frozen before merging")
    u = len(delta.index)
    if u == 0:
        return SortedDictionary.empty(delta.width), BitPackedVector(0, 1)
    width = compressed_width(u)
    codes = BitPackedVector(len(delta), width)
    words = delta.index.extract_codes(codes.words, width)
    return SortedDictionary(delta.width, words, check=False), codes


def merge_dictionaries(u_main: SortedDictionary, u_delta: SortedDictionary,
                       check: bool = False) -> DictMergeResult:
    """Step 1(b): sorted union of two dictionaries plus translation tables."""
    if u_main.width != u_delta.width:
        raise MergeError(f"dictionary widths differ: {u_main.width} vs {u_delta.width}")
    if check:
        SortedDictionary(u_main.width, u_main.words)
        SortedDictionary(u_delta.width, u_delta.words)
    nm, nd = len(u_main), len(u_delta)
    xdt = translation_dtype(nm + nd)
    out = np.empty((nm + nd, u_main.words.shape[1]), dtype=u_main.words.dtype)
    xm = np.empty(nm, dtype=xdt)
    xd = np.empty(nd, dtype=xdt)
    n = merge_range(u_main.words, 0, nm, u_delta.words, 0, nd, out, 0, xm, xd, True, True)
    merged = SortedDictionary(u_main.width, out[:n], check=False)
    return DictMergeResult(merged, xm, xd)


def new_code_width(merged_size: int) -> int:
    """Step 2(a)."""
    return compressed_width(merged_size) if merged_size else 1


def rewrite_values_optimized(main_codes: BitPackedVector, delta_codes: BitPackedVector,
                             x_main: np.ndarray, x_delta: np.ndarray,
                             new_width: int) -> BitPackedVector:
    """Step 2(b): one translation lookup per tuple, main rows then delta rows."""
    total = main_codes.count + delta_codes.count
    out = BitPackedVector(total, new_width)
    if total:
        bad = rewrite_range(main_codes.words, main_codes.width_bits, main_codes.count, x_main,
                            delta_codes.words, delta_codes.width_bits, x_delta,
                            out.words, new_width, 0, total)
        if bad >= 0:
            raise MergeError(f"row {bad}: code outside translation table")
    return out


def merge_column_optimized(main: MainPartition, delta: DeltaPartition,
                           stats: Optional[dict] = None) -> MainPartition:
    t = time.perf_counter()
    u_delta, delta_codes = build_delta_dictionary(delta)
    t = _tick(stats, "step1a", t)
    res = merge_dictionaries(main.dictionary, u_delta)
    t = _tick(stats, "step1b", t)
    width = new_code_width(len(res.merged))
    t = _tick(stats, "step2a", t)
    codes = rewrite_values_optimized(main.codes, delta_codes, res.x_main, res.x_delta, width)
    _tick(stats, "step2", t)
    return MainPartition(res.merged, codes)


def merge_column_naive(main: MainPartition, delta: DeltaPartition,
                       stats: Optional[dict] = None) -> MainPartition:
    if not delta.frozen:
        raise MergeError("delta partition must be frozen before merging")
    t = time.perf_counter()
    ud_words, _, _ = delta.index.traverse_arrays()
    u_delta = SortedDictionary(delta.width, ud_words, check=False)
    t = _tick(stats, "step1a", t)
    um = main.dictionary
    nm, nd = len(um), len(u_delta)
    out = np.empty((nm + nd, um.words.shape[1]), dtype=um.words.dtype)
    none = np.empty(0, dtype=np.uint32)
    n = merge_range(um.words, 0, nm, u_delta.words, 0, nd, out, 0, none, none, True, False)
    merged = SortedDictionary(delta.width, out[:n], check=False)
    t = _tick(stats, "step1b", t)
    width = new_code_width(n)
    t = _tick(stats, "step2a", t)
    total = len(main) + len(delta)
    codes = BitPackedVector(total, width)
    if total:
        bad = rewrite_naive_range(main.codes.words, main.codes.width_bits, len(main), um.words,
                                  delta.raw, merged.words, codes.words, width, 0, total)
        if bad >= 0:
            raise MergeError(f"row {bad}: value missing from merged dictionary")
    _tick(stats, "step2", t)
    return MainPartition(merged, codes)


def merge_column(main: MainPartition, delta: DeltaPartition, method: str = "optimized",
                 stats: Optional[dict] = None) -> MainPartition:
    if method == "optimized":
        return merge_column_optimized(main, delta, stats)
    if method == "naive":
        return merge_column_naive(main, delta, stats)
    raise ValueError(f"unknown merge method {method!r}")

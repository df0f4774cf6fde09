"""Multi-threaded merge.

All heavy lifting happens in numba kernels compiled with ``nogil=True``, so
plain Python threads run them concurrently.  Two table-level strategies:

``columns``  one task per column pulled from a shared queue by N_T workers,
             each running the serial optimized merge;
``intra``    columns one after another, each merged by all N_T workers:
             parallel delta-code scatter, three-phase dictionary merge and
             a partitioned code rewrite.

The three-phase dictionary merge splits both dictionaries into N_T
order-respecting ranges (co-rank binary search on the merge path), lets
every worker count its de-duplicated output, turns the counts into write
offsets with an exclusive prefix sum behind a barrier, then re-merges each
range straight into its final position.
"""
from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .codec import BitPackedVector, SortedDictionary, cmp_rows, compressed_width, put_code
from .merge import (DictMergeResult, MergeError, merge_column_optimized, merge_range,
                    new_code_width, rewrite_range, translation_dtype)
from .store import DeltaPartition, MainPartition, Table

STRATEGIES = {"columns": "columns", "per-column-tasks": "columns",
              "intra": "intra", "intra-column": "intra"}

_ALIGN = 64  # rows per chunk boundary; keeps each worker's packed output word-aligned


@dataclass(frozen=True)
class MergeRange:
    thread: int
    main_start: int
    main_end: int
    delta_start: int
    delta_end: int

    @property
    def size(self) -> int:
        return self.main_end - self.main_start + self.delta_end - self.delta_start


@contextmanager
def _pool(n_threads: int, pool: Optional[ThreadPoolExecutor]):
    if pool is not None:
        yield pool
    else:
        with ThreadPoolExecutor(max_workers=n_threads, thread_name_prefix="merge") as ex:
            yield ex


def _run_all(pool: ThreadPoolExecutor, fn, args_list) -> list:
    futures = [pool.submit(fn, *args) for args in args_list]
    errors = [f.exception() for f in futures]
    # report the root cause, not the broken barrier it left behind
    errors.sort(key=lambda e: isinstance(e, threading.BrokenBarrierError))
    if errors and errors[0] is not None:
        raise errors[0]
    return [f.result() for f in futures]


# --------------------------------------------------------------------------
# partitioning

@njit(nogil=True, cache=True)
def co_rank(um, ud, b):
    """Number of ``um`` rows among the first ``b`` rows of the stable merge
    (main rows precede equal delta rows)."""
    nm = um.shape[0]
    nd = ud.shape[0]
    lo = max(0, b - nd)
    hi = min(b, nm)
    while lo < hi:
        i = (lo + hi) >> 1
        j = b - i
        # main row i still belongs to the prefix if it is <= delta row j - 1
        if j > 0 and cmp_rows(um, i, ud, j - 1) <= 0:
            lo = i + 1
        else:
            hi = i
    return lo


def partition_ranges(u_main: SortedDictionary, u_delta: SortedDictionary,
                     n_threads: int) -> list[MergeRange]:
    if n_threads < 1:
        raise ValueError("n_threads must be >= 1")
    total = len(u_main) + len(u_delta)
    splits = []
    for t in range(n_threads + 1):
        b = t * total // n_threads
        a = co_rank(u_main.words, u_delta.words, b)
        splits.append((a, b - a))
    return [MergeRange(t, splits[t][0], splits[t + 1][0], splits[t][1], splits[t + 1][1])
            for t in range(n_threads)]


# --------------------------------------------------------------------------
# prefix sums

_I64_MAX = 2 ** 63 - 1


def _check_overflow(counts: np.ndarray) -> None:
    if counts.size and counts.min() < 0:
        raise ValueError("counts must be non-negative")
    if counts.size and int(counts.max()) * counts.size > _I64_MAX:
        if sum(int(c) for c in counts) > _I64_MAX:
            raise OverflowError("prefix sum exceeds int64")


def prefix_sum(counts: Sequence[int]) -> np.ndarray:
    """Exclusive prefix sums with the total appended: out[i] = sum(counts[:i])."""
    c = np.asarray(counts, dtype=np.int64).ravel()
    _check_overflow(c)
    out = np.zeros(c.size + 1, dtype=np.int64)
    np.cumsum(c, out=out[1:])
    return out


def prefix_sum_parallel(counts: Sequence[int], n_threads: int,
                        pool: Optional[ThreadPoolExecutor] = None) -> np.ndarray:
    """Hillis-Steele scan: log2(n) rounds, each splitting the index range
    among the workers, with a barrier between rounds."""
    c = np.asarray(counts, dtype=np.int64).ravel()
    _check_overflow(c)
    n = c.size
    bufs = [c.copy(), np.empty_like(c)]
    if n == 0:
        return np.zeros(1, dtype=np.int64)
    n_threads = max(1, min(n_threads, n))
    bounds = [t * n // n_threads for t in range(n_threads + 1)]
    rounds = []
    d = 1
    while d < n:
        rounds.append(d)
        d <<= 1
    barrier = threading.Barrier(n_threads)

    def worker(t):
        lo, hi = bounds[t], bounds[t + 1]
        try:
            for r, d in enumerate(rounds):
                src, dst = bufs[r % 2], bufs[(r + 1) % 2]
                a = max(lo, d)
                dst[lo:a] = src[lo:a]
                if a < hi:
                    np.add(src[a:hi], src[a - d:hi - d], out=dst[a:hi])
                barrier.wait()
        except BaseException:
            barrier.abort()
            raise

    with _pool(n_threads, pool) as ex:
        _run_all(ex, worker, [(t,) for t in range(n_threads)])
    inclusive = bufs[len(rounds) % 2]
    out = np.zeros(n + 1, dtype=np.int64)
    out[1:] = inclusive
    return out


# --------------------------------------------------------------------------
# dictionary merge

def parallel_merge_dictionaries(u_main: SortedDictionary, u_delta: SortedDictionary,
                                n_threads: int,
                                pool: Optional[ThreadPoolExecutor] = None) -> DictMergeResult:
    if u_main.width != u_delta.width:
        raise MergeError(f"dictionary widths differ: {u_main.width} vs {u_delta.width}")
    um, ud = u_main.words, u_delta.words
    nm, nd = um.shape[0], ud.shape[0]
    ranges = partition_ranges(u_main, u_delta, n_threads)
    counter = np.zeros(n_threads + 1, dtype=np.int64)
    offsets = np.zeros(n_threads + 1, dtype=np.int64)
    xdt = translation_dtype(nm + nd)
    out = np.empty((nm + nd, um.shape[1]), dtype=um.dtype)
    xm = np.empty(nm, dtype=xdt)
    xd = np.empty(nd, dtype=xdt)
    none = np.empty(0, dtype=xdt)

    def phase2():
        offsets[:] = prefix_sum(counter[:n_threads])

    barrier = threading.Barrier(n_threads, action=phase2)

    def worker(r: MergeRange):
        try:
            a0, a1, d0, d1 = r.main_start, r.main_end, r.delta_start, r.delta_end
            # an equal pair split across the boundary was already emitted
            # by an earlier range; skip our copy of it
            skip_d = a0 > 0 and d0 < d1 and cmp_rows(um, a0 - 1, ud, d0) == 0
            skip_m = d0 > 0 and a0 < a1 and cmp_rows(ud, d0 - 1, um, a0) == 0
            s0 = a0 + 1 if skip_m else a0
            t0 = d0 + 1 if skip_d else d0
            counter[r.thread] = merge_range(um, s0, a1, ud, t0, d1, out, 0, none, none,
                                            False, False)
            barrier.wait()
            base = offsets[r.thread]
            n = merge_range(um, s0, a1, ud, t0, d1, out, base, xm, xd, True, True)
            if n != counter[r.thread]:
                raise MergeError(f"thread {r.thread}: phase 3 wrote {n} rows, "
                                 f"phase 1 counted {counter[r.thread]}")
            if skip_d:
                xd[d0] = base - 1
            if skip_m:
                xm[a0] = base - 1
        except BaseException:
            barrier.abort()
            raise

    with _pool(n_threads, pool) as ex:
        _run_all(ex, worker, [(r,) for r in ranges])
    total = int(offsets[n_threads])
    merged = SortedDictionary(u_main.width, out[:total], check=False)
    return DictMergeResult(merged, xm, xd)


# --------------------------------------------------------------------------
# step 1(a), scheme (ii): serial dictionary walk, parallel code scatter

@njit(nogil=True, cache=True)
def _scatter_codes(offsets, postings, p0, p1, e0, codes):
    e = e0
    for p in range(p0, p1):
        while offsets[e + 1] <= p:
            e += 1
        codes[postings[p]] = e


@njit(nogil=True, cache=True)
def _pack_range(codes, width, out, start, stop):
    for i in range(start, stop):
        put_code(out, width, i, codes[i])


def _aligned_bounds(n: int, n_threads: int) -> list[int]:
    per = -(-n // n_threads)
    per = -(-per // _ALIGN) * _ALIGN
    return [min(t * per, n) for t in range(n_threads + 1)]


def parallel_build_delta_dictionary(delta: DeltaPartition, n_threads: int,
                                    pool: Optional[ThreadPoolExecutor] = None
                                    ) -> tuple[SortedDictionary, BitPackedVector]:
    if not delta.frozen:
        raise MergeError("delta partition must be frozen before merging")
    words, offsets, postings = delta.index.traverse_arrays()
    u = words.shape[0]
    if u == 0:
        return SortedDictionary.empty(delta.width), BitPackedVector(0, 1)
    n = postings.shape[0]
    width = compressed_width(u)
    codes = np.empty(n, dtype=translation_dtype(u))
    packed = BitPackedVector(n, width)
    pb = [t * n // n_threads for t in range(n_threads + 1)]
    starts = np.searchsorted(offsets, pb[:-1], side="right") - 1
    ab = _aligned_bounds(n, n_threads)
    with _pool(n_threads, pool) as ex:
        _run_all(ex, _scatter_codes,
                 [(offsets, postings, pb[t], pb[t + 1], int(starts[t]), codes)
                  for t in range(n_threads)])
        _run_all(ex, _pack_range,
                 [(codes, width, packed.words, ab[t], ab[t + 1]) for t in range(n_threads)])
    return SortedDictionary(delta.width, words, check=False), packed


# --------------------------------------------------------------------------
# step 2

def parallel_rewrite_values(main_codes: BitPackedVector, delta_codes: BitPackedVector,
                            x_main: np.ndarray, x_delta: np.ndarray, new_width: int,
                            n_threads: int,
                            pool: Optional[ThreadPoolExecutor] = None) -> BitPackedVector:
    """Each worker rewrites a contiguous, 64-row-aligned slice of the output."""
    total = main_codes.count + delta_codes.count
    out = BitPackedVector(total, new_width)
    if not total:
        return out
    b = _aligned_bounds(total, n_threads)
    args = [(main_codes.words, main_codes.width_bits, main_codes.count, x_main,
             delta_codes.words, delta_codes.width_bits, x_delta,
             out.words, new_width, b[t], b[t + 1]) for t in range(n_threads)]
    with _pool(n_threads, pool) as ex:
        bad = [x for x in _run_all(ex, rewrite_range, args) if x >= 0]
    if bad:
        raise MergeError(f"row {min(bad)}: code outside translation table")
    return out


def merge_column_intra(main: MainPartition, delta: DeltaPartition, n_threads: int,
                       pool: Optional[ThreadPoolExecutor] = None,
                       stats: Optional[dict] = None) -> MainPartition:
    with _pool(n_threads, pool) as ex:
        t = time.perf_counter()
        u_delta, delta_codes = parallel_build_delta_dictionary(delta, n_threads, ex)
        t = _tick(stats, "step1a", t)
        res = parallel_merge_dictionaries(main.dictionary, u_delta, n_threads, ex)
        t = _tick(stats, "step1b", t)
        width = new_code_width(len(res.merged))
        t = _tick(stats, "step2a", t)
        codes = parallel_rewrite_values(main.codes, delta_codes, res.x_main, res.x_delta,
                                        width, n_threads, ex)
        _tick(stats, "step2", t)
    return MainPartition(res.merged, codes)


def _tick(stats: Optional[dict], key: str, t0: float) -> float:
    t1 = time.perf_counter()
    if stats is not None:
        stats[key] = stats.get(key, 0.0) + (t1 - t0)
    return t1


# --------------------------------------------------------------------------
# tables

def parallel_merge_table(t: Table, n_threads: int, strategy: str = "columns",
                         stats: Optional[dict] = None) -> list[MainPartition]:
    """Merge every column of a table whose deltas are frozen.

    Returns the new main partitions in column order; the table itself is not
    modified (commit with ``Table.commit_merge``).  Under ``columns`` the
    per-step entries of ``stats`` are worker-seconds summed over columns;
    ``stats["wall"]`` is the elapsed time either way.
    """
    if n_threads < 1:
        raise ValueError("n_threads must be >= 1")
    try:
        strategy = STRATEGIES[strategy]
    except KeyError:
        raise ValueError(f"unknown strategy {strategy!r}") from None
    if not t.merge_in_progress:
        raise MergeError("no frozen delta; call freeze_and_swap first")
    states = [c.state for c in t.columns]
    t0 = time.perf_counter()
    if strategy == "columns":
        per_col = [dict() for _ in states]
        with ThreadPoolExecutor(max_workers=n_threads, thread_name_prefix="merge") as ex:
            mains = _run_all(ex, merge_column_optimized,
                             [(s.main, s.merging, st) for s, st in zip(states, per_col)])
        if stats is not None:
            for st in per_col:
                for k, v in st.items():
                    stats[k] = stats.get(k, 0.0) + v
    else:
        with ThreadPoolExecutor(max_workers=n_threads, thread_name_prefix="merge") as ex:
            mains = [merge_column_intra(s.main, s.merging, n_threads, ex, stats)
                     for s in states]
    if stats is not None:
        stats["wall"] = stats.get("wall", 0.0) + time.perf_counter() - t0
    return mains

"""Memory micro-benchmarks: streaming and random bandwidth, cache size.

Random bandwidth is measured with independent cache-line gathers, the access
pattern of the code rewrite (every tuple's lookup is independent of the
previous one, so many misses are in flight).  A dependent pointer chase is
also available; it measures latency rather than bandwidth.
"""
from __future__ import annotations

import os
import re
import time
from functools import lru_cache
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from numba import njit

LINE = 64
DEFAULT_CLOCK_HZ = 3.3e9


class Bandwidth(NamedTuple):
    stream_bpc: float
    random_bpc: float
    stream_gbs: float
    random_gbs: float
    clock_hz: float


def detect_clock_hz() -> float:
    """Nominal core clock from /proc/cpuinfo or cpufreq; 3.3 GHz if unknown."""
    try:
        mhz = re.findall(r"^cpu MHz\s*:\s*([\d.]+)", Path("/proc/cpuinfo").read_text(), re.M)
        if mhz:
            return max(float(m) for m in mhz) * 1e6
    except OSError:
        pass
    try:
        khz = Path("/sys/devices/system/cpu/cpu0/cpufreq/cpuinfo_max_freq").read_text()
        return float(khz) * 1e3
    except (OSError, ValueError):
        return DEFAULT_CLOCK_HZ


def sysfs_llc_bytes() -> Optional[int]:
    """Largest cache reported for cpu0 (may describe the host, not the slice
    of it a container actually gets)."""
    best = None
    for d in Path("/sys/devices/system/cpu/cpu0/cache").glob("index*"):
        try:
            size = (d / "size").read_text().strip()
        except OSError:
            continue
        m = re.fullmatch(r"(\d+)([KMG]?)", size)
        if m:
            b = int(m.group(1)) * {"": 1, "K": 2 ** 10, "M": 2 ** 20, "G": 2 ** 30}[m.group(2)]
            best = b if best is None else max(best, b)
    return best


def physical_memory_bytes() -> int:
    try:
        return os.sysconf("SC_PHYS_PAGES") * os.sysconf("SC_PAGE_SIZE")
    except (ValueError, OSError):
        return 4 * 2 ** 30


# --------------------------------------------------------------------------
# kernels

@njit(nogil=True, cache=True)
def _gather(buf, idx):
    s = np.uint64(0)
    for i in range(idx.shape[0]):
        s += buf[idx[i]]
    return s


@njit(nogil=True, cache=True)
def _chase(nxt, steps):
    p = 0
    for _ in range(steps):
        p = nxt[p]
    return p


def _median_time(fn, reps: int) -> float:
    ts = []
    for _ in range(reps):
        t = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t)
    return float(np.median(ts))


def stream_bandwidth(nbytes: int = 128 * 2 ** 20, reps: int = 5) -> float:
    """Bytes/second of a large copy, counting the read and the write."""
    src = np.ones(nbytes // 8, dtype=np.uint64)
    dst = np.empty_like(src)
    np.copyto(dst, src)
    return 2 * src.nbytes / _median_time(lambda: np.copyto(dst, src), reps)


def random_bandwidth(nbytes: int = 256 * 2 ** 20, accesses: int = 8 * 10 ** 6,
                     reps: int = 5, seed: int = 0) -> float:
    """Bytes/second of independent reads, one cache line each, spread over a
    buffer much larger than the cache."""
    buf = np.ones(nbytes // 8, dtype=np.uint64)
    lines = nbytes // LINE
    idx = np.random.default_rng(seed).integers(0, lines, accesses) * (LINE // 8)
    _gather(buf, idx[:1000])
    return accesses * LINE / _median_time(lambda: _gather(buf, idx), reps)


def chase_latency(nbytes: int, steps: int = 2 * 10 ** 6, seed: int = 0) -> float:
    """Seconds per dependent load over a random cycle through ``nbytes``,
    one element per cache line."""
    n = max(2, nbytes // LINE)
    stride = LINE // 8
    order = np.random.default_rng(seed).permutation(n)
    nxt = np.zeros(n * stride, dtype=np.int64)
    nxt[order * stride] = np.roll(order, -1) * stride
    _chase(nxt, 1000)
    t = time.perf_counter()
    _chase(nxt, steps)
    return (time.perf_counter() - t) / steps


def random_chase_bandwidth(nbytes: int = 256 * 2 ** 20, steps: int = 10 ** 6) -> float:
    """Bytes/second of dependent cache-line reads (latency bound)."""
    return LINE / chase_latency(nbytes, steps)


def detect_llc_bytes(max_bytes: int = 128 * 2 ** 20) -> int:
    """Effective last-level cache: the largest working set whose chase
    latency stays below the midpoint between the small-set and
    memory latencies."""
    sizes = []
    s = 2 ** 19
    while s <= max_bytes:
        sizes.append(s)
        s *= 2
    lat = [min(chase_latency(s, steps=3 * 10 ** 5, seed=r) for r in range(3)) for s in sizes]
    cut = lat[0] + (lat[-1] - lat[0]) / 2
    best = sizes[0]
    for s, t in zip(sizes, lat):
        if t <= cut:
            best = s
    return best


def micro_bandwidth(clock_hz: Optional[float] = None, pattern: str = "gather",
                    preset: Optional[str] = None) -> Bandwidth:
    """Streaming and random bandwidth in bytes/cycle.

    ``pattern`` is ``gather`` (independent reads) or ``chase`` (dependent
    reads).  ``preset="reference-platform"`` skips measuring and returns 7 and 5
    bytes/cycle at 3.3 GHz.
    """
    if preset is not None:
        if preset != "reference-platform":
            raise ValueError(f"unknown preset {preset!r}")
        hz = 3.3e9
        return Bandwidth(7.0, 5.0, 7.0 * hz / 1e9, 5.0 * hz / 1e9, hz)
    hz = clock_hz or detect_clock_hz()
    s = stream_bandwidth()
    if pattern == "gather":
        r = random_bandwidth()
    elif pattern == "chase":
        r = random_chase_bandwidth()
    else:
        raise ValueError(f"unknown pattern {pattern!r}")
    return Bandwidth(s / hz, r / hz, s / 1e9, r / 1e9, hz)


@lru_cache(maxsize=None)
def cached_bandwidth(clock_hz: float) -> Bandwidth:
    return micro_bandwidth(clock_hz)


@lru_cache(maxsize=None)
def cached_llc_bytes() -> int:
    try:
        return detect_llc_bytes()
    except MemoryError:
        return sysfs_llc_bytes() or 8 * 2 ** 20

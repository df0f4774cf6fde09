"""Synthetic column data: uniform draws from a pool of distinct values."""
from __future__ import annotations

import numpy as np

from ..codec import from_words, sort_dedup, word_dtype, words_per_value


def pool_size(n: int, unique_fraction: float) -> int:
    if not 0 < unique_fraction <= 1:
        raise ValueError(f"unique fraction must be in (0, 1], got {unique_fraction}")
    return max(1, round(unique_fraction * n))


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def distinct_values(k: int, value_bytes: int, seed) -> np.ndarray:
    """``k`` distinct values drawn uniformly from the whole E-byte space, in
    random order, as a word array."""
    bits = 8 * value_bytes
    if k > 2 ** bits:
        raise ValueError(f"{k} distinct values do not fit in {value_bytes} bytes")
    rng = _rng(seed)
    if bits <= 24:
        x = rng.choice(2 ** bits, size=k, replace=False)
        buf = x.astype(">u4").view(np.uint8).reshape(-1, 4)[:, 4 - value_bytes:]
        return _bytes_to_words(np.ascontiguousarray(buf), value_bytes)
    out = np.empty((0, words_per_value(value_bytes)), dtype=word_dtype(value_bytes))
    while out.shape[0] < k:
        need = k - out.shape[0]
        raw = rng.integers(0, 256, size=(need + need // 16 + 1, value_bytes), dtype=np.uint8)
        cand = np.concatenate([out, _bytes_to_words(raw, value_bytes)])
        uniq, inv = sort_dedup(cand)
        # keep first occurrences, in draw order
        first = np.full(uniq.shape[0], cand.shape[0], dtype=np.int64)
        np.minimum.at(first, inv, np.arange(cand.shape[0]))
        out = cand[np.sort(first)]
    out = out[:k]
    return out[rng.permutation(k)]


def _bytes_to_words(raw: np.ndarray, value_bytes: int) -> np.ndarray:
    dt = word_dtype(value_bytes)
    big = np.ascontiguousarray(raw).view(dt.newbyteorder(">"))
    return big.astype(dt).reshape(-1, words_per_value(value_bytes))


def gen_column(n: int, value_bytes: int, unique_fraction: float, seed) -> np.ndarray:
    """``n`` values as an ``(n, k)`` word array.

    The pool holds exactly ``max(1, round(unique_fraction * n))`` distinct
    values.  With a fraction of 1 the column is a permutation of the pool;
    otherwise rows are drawn from it uniformly with replacement.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    rng = _rng(seed)
    k = pool_size(max(n, 1), unique_fraction)
    pool = distinct_values(k, value_bytes, rng)
    if n == 0:
        return pool[:0]
    if k == n:
        return pool
    return pool[rng.integers(0, k, size=n)]


def gen_values(n: int, value_bytes: int, unique_fraction: float, seed) -> list[bytes]:
    return from_words(gen_column(n, value_bytes, unique_fraction, seed), value_bytes)


def count_distinct(words: np.ndarray) -> int:
    return sort_dedup(words)[0].shape[0] if words.shape[0] else 0

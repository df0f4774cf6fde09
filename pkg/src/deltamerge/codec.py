"""Fixed-width values, sorted dictionaries and bit-packed code vectors.

Values are opaque byte strings of a fixed width and order lexicographically.
Internally a column of values is held as a 2-D array of unsigned "words"
(one row per value) read big-endian from the bytes, so that comparing rows
word by word gives the same order as comparing the original bytes.  The word
size is the largest of 8/4/2/1 bytes that divides the value width, so no
padding is ever introduced.
"""
from __future__ import annotations

from typing import Iterable, Optional, Sequence

import numpy as np
from numba import njit

WORD_BITS = 64


class CodecError(ValueError):
    pass


# --------------------------------------------------------------------------
# value <-> word rows

def word_bytes(width: int) -> int:
    if width <= 0:
        raise CodecError(f"value width must be positive, got {width}")
    for w in (8, 4, 2, 1):
        if width % w == 0:
            return w
    raise AssertionError("unreachable")


def word_dtype(width: int) -> np.dtype:
    return np.dtype(f"u{word_bytes(width)}")


def words_per_value(width: int) -> int:
    return width // word_bytes(width)


def to_words(values: Iterable[bytes], width: int) -> np.ndarray:
    """Convert byte strings of length ``width`` into an ``(n, k)`` word array."""
    if isinstance(values, (bytes, bytearray, memoryview)):
        buf = bytes(values)
    else:
        vals = list(values)
        for i, v in enumerate(vals):
            if len(v) != width:
                raise CodecError(f"value {i} has width {len(v)}, expected {width}")
        buf = b"".join(vals)
    if len(buf) % width:
        raise CodecError("buffer length is not a multiple of the value width")
    return buffer_to_words(buf, width)


def buffer_to_words(buf: bytes, width: int) -> np.ndarray:
    wb = word_bytes(width)
    big = np.frombuffer(buf, dtype=f">u{wb}")
    return big.astype(f"=u{wb}").reshape(-1, width // wb)


def words_to_buffer(words: np.ndarray) -> bytes:
    wb = words.dtype.itemsize
    return np.ascontiguousarray(words).astype(f">u{wb}").tobytes()


def from_words(words: np.ndarray, width: int) -> list[bytes]:
    buf = words_to_buffer(words)
    return [buf[i:i + width] for i in range(0, len(buf), width)]


def row_to_bytes(words: np.ndarray, i: int) -> bytes:
    return words_to_buffer(words[i:i + 1])


def encode_uint(x: int, width: int) -> bytes:
    """Big-endian encoding, so byte order equals numeric order."""
    return int(x).to_bytes(width, "big")


def decode_uint(v: bytes) -> int:
    return int.from_bytes(v, "big")


def empty_words(width: int, n: int = 0) -> np.ndarray:
    return np.empty((n, words_per_value(width)), dtype=word_dtype(width))


# --------------------------------------------------------------------------
# row kernels shared by the other modules

@njit(inline="always")
def cmp_rows(a, i, b, j):
    for w in range(a.shape[1]):
        x = a[i, w]
        y = b[j, w]
        if x < y:
            return -1
        if x > y:
            return 1
    return 0


@njit(inline="always")
def copy_row(src, i, dst, j):
    for w in range(src.shape[1]):
        dst[j, w] = src[i, w]


@njit(nogil=True, cache=True)
def lower_bound(words, key, lo, hi):
    """First index in [lo, hi) whose row is >= key[0]."""
    while lo < hi:
        mid = (lo + hi) >> 1
        if cmp_rows(words, mid, key, 0) < 0:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(nogil=True, cache=True)
def _first_not_increasing(words):
    for i in range(1, words.shape[0]):
        if cmp_rows(words, i - 1, words, i) >= 0:
            return i
    return -1


def sort_dedup(words: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sorted distinct rows plus, for every input row, its index among them."""
    n, k = words.shape
    if n == 0:
        return words.copy(), np.empty(0, dtype=np.int64)
    if k == 1:
        uniq, inverse = np.unique(words[:, 0], return_inverse=True)
        return uniq.reshape(-1, 1), inverse.astype(np.int64)
    order = np.lexsort(words.T[::-1])
    srt = words[order]
    new = np.empty(n, dtype=bool)
    new[0] = True
    new[1:] = np.any(srt[1:] != srt[:-1], axis=1)
    rank = np.cumsum(new) - 1
    inverse = np.empty(n, dtype=np.int64)
    inverse[order] = rank
    return srt[new], inverse


# --------------------------------------------------------------------------
# sorted dictionary

class SortedDictionary:
    """Strictly increasing run of fixed-width values; a value's code is its index."""

    __slots__ = ("width", "words")

    def __init__(self, width: int, words: np.ndarray, *, check: bool = True):
        words = np.asarray(words)
        if words.ndim != 2 or words.shape[1] != words_per_value(width) \
                or words.dtype != word_dtype(width):
            raise CodecError(f"word array of shape {words.shape}/{words.dtype} "
                             f"does not hold {width}-byte values")
        if check and words.shape[0] > 1:
            bad = _first_not_increasing(words)
            if bad >= 0:
                raise CodecError(f"dictionary entries not strictly increasing at {bad}")
        self.width = width
        self.words = words

    @classmethod
    def empty(cls, width: int) -> "SortedDictionary":
        return cls(width, empty_words(width), check=False)

    @classmethod
    def from_values(cls, values: Iterable[bytes], width: int) -> "SortedDictionary":
        uniq, _ = sort_dedup(to_words(values, width))
        return cls(width, uniq, check=False)

    @classmethod
    def from_sorted(cls, values: Sequence[bytes], width: int) -> "SortedDictionary":
        return cls(width, to_words(values, width))

    def __len__(self) -> int:
        return self.words.shape[0]

    def __getitem__(self, code: int) -> bytes:
        return dict_value(self, code)

    def __iter__(self):
        return iter(self.values())

    def values(self) -> list[bytes]:
        return from_words(self.words, self.width)

    def find(self, v: bytes) -> Optional[int]:
        return dict_find(self, v)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SortedDictionary):
            return NotImplemented
        return self.width == other.width and np.array_equal(self.words, other.words)

    def __repr__(self) -> str:
        return f"SortedDictionary(width={self.width}, size={len(self)})"


def dict_find(d: SortedDictionary, v: bytes) -> Optional[int]:
    """Binary search; the code of ``v`` or None when absent."""
    if len(v) != d.width:
        raise CodecError(f"value width {len(v)} does not match dictionary width {d.width}")
    key = buffer_to_words(bytes(v), d.width)
    n = len(d)
    i = lower_bound(d.words, key, 0, n)
    if i < n and np.array_equal(d.words[i], key[0]):
        return int(i)
    return None


def dict_value(d: SortedDictionary, code: int) -> bytes:
    code = int(code)
    if not 0 <= code < len(d):
        raise CodecError(f"code {code} out of range for dictionary of size {len(d)}")
    return row_to_bytes(d.words, code)


# --------------------------------------------------------------------------
# bit packing: little-endian within 64-bit words, codes may straddle words

def compressed_width(dict_size: int) -> int:
    """Bits per code for a dictionary of ``dict_size`` entries (at least 1)."""
    dict_size = int(dict_size)
    if dict_size <= 0:
        raise CodecError("empty dictionary")
    return max(1, (dict_size - 1).bit_length())


def n_words(count: int, width_bits: int) -> int:
    return (count * width_bits + WORD_BITS - 1) // WORD_BITS


@njit(inline="always")
def _mask(width):
    return np.uint64(0xFFFFFFFFFFFFFFFF) >> np.uint64(64 - width)


@njit(inline="always")
def get_code(words, width, i):
    # branch-free: the straddle test mispredicts often enough to dominate
    bit = i * width
    wi = bit >> 6
    off = np.uint64(bit & 63)
    hi = words[min(wi + 1, words.shape[0] - 1)]
    v = (words[wi] >> off) | ((hi << np.uint64(1)) << (np.uint64(63) - off))
    return v & _mask(width)


@njit(inline="always")
def put_code(words, width, i, code):
    """OR a code into zero-initialised storage."""
    bit = i * width
    wi = bit >> 6
    off = np.uint64(bit & 63)
    c = np.uint64(code)
    words[wi] |= c << off
    if (bit & 63) + width > 64:
        words[wi + 1] |= c >> (np.uint64(64) - off)


@njit(nogil=True, cache=True)
def _pack(codes, width, out):
    for i in range(codes.shape[0]):
        put_code(out, width, i, codes[i])


@njit(nogil=True, cache=True)
def _unpack(words, width, start, stop, out):
    for i in range(start, stop):
        out[i - start] = get_code(words, width, i)


@njit(nogil=True, cache=True)
def _positions_of(words, width, count, code):
    hits = 0
    for i in range(count):
        if get_code(words, width, i) == code:
            hits += 1
    out = np.empty(hits, dtype=np.int64)
    j = 0
    for i in range(count):
        if get_code(words, width, i) == code:
            out[j] = i
            j += 1
    return out


class BitPackedVector:
    """``count`` codes of ``width_bits`` bits each, densely packed."""

    __slots__ = ("count", "width_bits", "words")

    def __init__(self, count: int, width_bits: int, words: Optional[np.ndarray] = None):
        if not 1 <= width_bits <= WORD_BITS:
            raise CodecError(f"width_bits must be in [1, 64], got {width_bits}")
        if words is None:
            words = np.zeros(n_words(count, width_bits), dtype=np.uint64)
        elif words.dtype != np.uint64 or words.shape != (n_words(count, width_bits),):
            raise CodecError("storage does not match count and width")
        self.count = int(count)
        self.width_bits = int(width_bits)
        self.words = words

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i: int) -> int:
        return unpack_at(self, i)

    def __iter__(self):
        return iter(self.to_array().tolist())

    def to_array(self, start: int = 0, stop: Optional[int] = None) -> np.ndarray:
        stop = self.count if stop is None else stop
        out = np.empty(max(stop - start, 0), dtype=np.uint64)
        if out.size:
            _unpack(self.words, self.width_bits, start, stop, out)
        return out

    def positions_of(self, code: int) -> np.ndarray:
        """Ascending indices holding ``code`` (a full sequential scan)."""
        if code < 0 or code >> self.width_bits:
            return np.empty(0, dtype=np.int64)
        return _positions_of(self.words, self.width_bits, self.count, np.uint64(code))

    @property
    def nbytes(self) -> int:
        return self.words.nbytes

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitPackedVector):
            return NotImplemented
        return (self.count == other.count and self.width_bits == other.width_bits
                and np.array_equal(self.words, other.words))

    def __repr__(self) -> str:
        return f"BitPackedVector(count={self.count}, width_bits={self.width_bits})"


def pack(codes, width_bits: int) -> BitPackedVector:
    arr = np.asarray(codes)
    if arr.size and arr.dtype.kind not in "ui":
        raise CodecError(f"codes must be integers, got {arr.dtype}")
    if arr.size and arr.dtype.kind == "i":
        neg = np.flatnonzero(arr < 0)
        if neg.size:
            raise CodecError(f"code at index {neg[0]} is negative")
    arr = arr.astype(np.uint64, copy=False).ravel()
    out = BitPackedVector(arr.size, width_bits)
    if width_bits < WORD_BITS and arr.size:
        over = np.flatnonzero(arr >> np.uint64(width_bits))
        if over.size:
            raise CodecError(f"code {arr[over[0]]} at index {over[0]} "
                             f"does not fit in {width_bits} bits")
    if arr.size:
        _pack(arr, width_bits, out.words)
    return out


def unpack_at(v: BitPackedVector, i: int) -> int:
    i = int(i)
    if not 0 <= i < v.count:
        raise IndexError(f"index {i} out of bounds for {v.count} codes")
    w = v.width_bits
    bit = i * w
    wi, off = divmod(bit, WORD_BITS)
    x = int(v.words[wi]) >> off
    if off + w > WORD_BITS:
        x |= int(v.words[wi + 1]) << (WORD_BITS - off)
    return x & ((1 << w) - 1)

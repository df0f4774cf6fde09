"""Cache-sensitive B+-tree over delta values, with tuple-id postings.

Layout follows the "full" CSB+-tree variant: every internal node stores its
keys and a single pointer to its child *group*, a contiguous block of nodes
preallocated at the maximum fanout.  Splits shift nodes within a group or
split the group in two.  All nodes live in one pool of struct-of-arrays
storage (keys, key counts, child-group pointers, leaf entry ids) that the
numba kernels below mutate; the Python wrapper only grows the pools when a
kernel reports it ran out of room.

Node fanout: ``max(2, (node_size - 4) // value_width)`` keys per node, i.e.
one 4-byte pointer plus as many keys as fit in ``node_size`` bytes.  With the
default 64-byte nodes that is 15 keys for 4-byte values, 7 for 8-byte values
and 3 for 16-byte values.  Leaves use the same fanout.

Each distinct value owns an "entry" whose posting list (a growable array in
a shared pool, doubled on overflow) records tuple ids in insertion order.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np
from numba import njit

from .codec import (CodecError, buffer_to_words, from_words, put_code, word_dtype,
                    words_per_value)

POINTER_BYTES = 4
DEFAULT_NODE_SIZE = 64
_INIT_POSTING_CAP = 2

# meta slots
_ROOT, _NODES, _ENTRIES, _POOL, _HEIGHT, _INSERTS = range(6)

# kernel status codes
_OK, _GROW_NODES, _GROW_ENTRIES, _GROW_POOL, _GROW_TIDS, _DUPLICATE = range(6)

_MAX_HEIGHT = 64


class DuplicateTupleId(CodecError):
    pass


def fanout_for(node_size: int, value_width: int) -> int:
    return max(2, (node_size - POINTER_BYTES) // value_width)


# --------------------------------------------------------------------------
# kernels

@njit(inline="always")
def _copy_node(keys, nkeys, child, entry, a, b):
    n = nkeys[a]
    for s in range(n):
        for w in range(keys.shape[2]):
            keys[b, s, w] = keys[a, s, w]
        entry[b, s] = entry[a, s]
    nkeys[b] = n
    child[b] = child[a]


@njit(inline="always")
def _cmp_key(keys, node, slot, q, r):
    for w in range(keys.shape[2]):
        x = keys[node, slot, w]
        y = q[r, w]
        if x < y:
            return -1
        if x > y:
            return 1
    return 0


@njit(inline="always")
def _descend(keys, nkeys, child, meta, q, r, path_node, path_slot):
    node = meta[_ROOT]
    for lvl in range(meta[_HEIGHT]):
        # child slot = number of separators <= key
        lo = 0
        hi = nkeys[node]
        while lo < hi:
            mid = (lo + hi) >> 1
            if _cmp_key(keys, node, mid, q, r) <= 0:
                lo = mid + 1
            else:
                hi = mid
        path_node[lvl] = node
        path_slot[lvl] = lo
        node = child[node] + lo
    return node


@njit(inline="always")
def _leaf_pos(keys, nkeys, node, q, r):
    lo = 0
    hi = nkeys[node]
    while lo < hi:
        mid = (lo + hi) >> 1
        if _cmp_key(keys, node, mid, q, r) < 0:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(inline="always")
def _alloc_group(meta, group):
    base = meta[_NODES]
    meta[_NODES] = base + group
    return base


@njit(nogil=True, cache=True)
def _insert_many(keys, nkeys, child, entry, meta, pstart, plen, pcap, pool, seen,
                 scratch_keys, q, tids, start, fanout):
    """Insert q[i] / tids[i] for i >= start.  Returns (next i, status)."""
    m = fanout
    group = m + 1
    tmp = 0            # pool slot 0: node being pushed into a parent
    scr = 1            # pool slots 1..m+2: logical child group during a split
    path_node = np.empty(_MAX_HEIGHT, dtype=np.int64)
    path_slot = np.empty(_MAX_HEIGHT, dtype=np.int64)
    kw = keys.shape[2]
    # scratch_keys rows: [0, m] logical keys, m+1 separator
    sep = m + 1
    lentry = np.empty(m + 1, dtype=np.int64)
    n = q.shape[0]
    for i in range(start, n):
        tid = tids[i]
        if tid < 0:
            return i, _DUPLICATE
        if tid >= seen.shape[0]:
            return i, _GROW_TIDS
        if seen[tid]:
            return i, _DUPLICATE
        h = meta[_HEIGHT]
        if meta[_NODES] + (h + 2) * group > nkeys.shape[0]:
            return i, _GROW_NODES
        leaf = _descend(keys, nkeys, child, meta, q, i, path_node, path_slot)
        nk = nkeys[leaf]
        pos = _leaf_pos(keys, nkeys, leaf, q, i)
        if pos < nk and _cmp_key(keys, leaf, pos, q, i) == 0:
            e = entry[leaf, pos]
            if plen[e] == pcap[e]:
                need = 2 * pcap[e]
                if meta[_POOL] + need > pool.shape[0]:
                    return i, _GROW_POOL
                base = meta[_POOL]
                for j in range(plen[e]):
                    pool[base + j] = pool[pstart[e] + j]
                pstart[e] = base
                pcap[e] = need
                meta[_POOL] = base + need
            pool[pstart[e] + plen[e]] = tid
            plen[e] += 1
            seen[tid] = 1
            meta[_INSERTS] += 1
            continue

        # new distinct value
        if meta[_ENTRIES] >= pstart.shape[0]:
            return i, _GROW_ENTRIES
        if meta[_POOL] + _INIT_POSTING_CAP > pool.shape[0]:
            return i, _GROW_POOL
        e = meta[_ENTRIES]
        meta[_ENTRIES] = e + 1
        pstart[e] = meta[_POOL]
        pcap[e] = _INIT_POSTING_CAP
        plen[e] = 1
        pool[pstart[e]] = tid
        meta[_POOL] += _INIT_POSTING_CAP
        seen[tid] = 1
        meta[_INSERTS] += 1

        if nk < m:
            for s in range(nk, pos, -1):
                for w in range(kw):
                    keys[leaf, s, w] = keys[leaf, s - 1, w]
                entry[leaf, s] = entry[leaf, s - 1]
            for w in range(kw):
                keys[leaf, pos, w] = q[i, w]
            entry[leaf, pos] = e
            nkeys[leaf] = nk + 1
            continue

        # leaf split: logical run of m + 1 keys
        src = 0
        for s in range(m + 1):
            if s == pos:
                for w in range(kw):
                    scratch_keys[s, w] = q[i, w]
                lentry[s] = e
            else:
                for w in range(kw):
                    scratch_keys[s, w] = keys[leaf, src, w]
                lentry[s] = entry[leaf, src]
                src += 1
        left = (m + 2) // 2
        right = m + 1 - left
        for s in range(left):
            for w in range(kw):
                keys[leaf, s, w] = scratch_keys[s, w]
            entry[leaf, s] = lentry[s]
        nkeys[leaf] = left
        for s in range(right):
            for w in range(kw):
                keys[tmp, s, w] = scratch_keys[left + s, w]
            entry[tmp, s] = lentry[left + s]
        nkeys[tmp] = right
        child[tmp] = -1
        for w in range(kw):
            scratch_keys[sep, w] = scratch_keys[left, w]

        # push (separator, tmp) upwards
        level = h - 1
        while True:
            if level < 0:
                root = meta[_ROOT]
                g = _alloc_group(meta, group)
                _copy_node(keys, nkeys, child, entry, root, g)
                _copy_node(keys, nkeys, child, entry, tmp, g + 1)
                r = _alloc_group(meta, group)
                for w in range(kw):
                    keys[r, 0, w] = scratch_keys[sep, w]
                nkeys[r] = 1
                child[r] = g
                meta[_ROOT] = r
                meta[_HEIGHT] = h + 1
                break
            p = path_node[level]
            s_new = path_slot[level] + 1
            b = child[p]
            npk = nkeys[p]
            if npk < m:
                for j in range(npk, s_new - 1, -1):
                    _copy_node(keys, nkeys, child, entry, b + j, b + j + 1)
                _copy_node(keys, nkeys, child, entry, tmp, b + s_new)
                for s in range(npk, s_new - 1, -1):
                    for w in range(kw):
                        keys[p, s, w] = keys[p, s - 1, w]
                for w in range(kw):
                    keys[p, s_new - 1, w] = scratch_keys[sep, w]
                nkeys[p] = npk + 1
                break
            # parent full: split parent and its child group
            for j in range(m + 2):
                if j < s_new:
                    _copy_node(keys, nkeys, child, entry, b + j, scr + j)
                elif j == s_new:
                    _copy_node(keys, nkeys, child, entry, tmp, scr + j)
                else:
                    _copy_node(keys, nkeys, child, entry, b + j - 1, scr + j)
            src = 0
            for s in range(m + 1):
                if s == s_new - 1:
                    for w in range(kw):
                        scratch_keys[s, w] = scratch_keys[sep, w]
                else:
                    for w in range(kw):
                        scratch_keys[s, w] = keys[p, src, w]
                    src += 1
            cl = (m + 3) // 2
            cr = m + 2 - cl
            g2 = _alloc_group(meta, group)
            for j in range(cl):
                _copy_node(keys, nkeys, child, entry, scr + j, b + j)
            for j in range(cr):
                _copy_node(keys, nkeys, child, entry, scr + cl + j, g2 + j)
            for s in range(cl - 1):
                for w in range(kw):
                    keys[p, s, w] = scratch_keys[s, w]
            nkeys[p] = cl - 1
            for s in range(cr - 1):
                for w in range(kw):
                    keys[tmp, s, w] = scratch_keys[cl + s, w]
            nkeys[tmp] = cr - 1
            child[tmp] = g2
            for w in range(kw):
                scratch_keys[sep, w] = scratch_keys[cl - 1, w]
            level -= 1
    return n, _OK


@njit(nogil=True, cache=True)
def _find(keys, nkeys, child, meta, q):
    path_node = np.empty(_MAX_HEIGHT, dtype=np.int64)
    path_slot = np.empty(_MAX_HEIGHT, dtype=np.int64)
    leaf = _descend(keys, nkeys, child, meta, q, 0, path_node, path_slot)
    pos = _leaf_pos(keys, nkeys, leaf, q, 0)
    if pos < nkeys[leaf] and _cmp_key(keys, leaf, pos, q, 0) == 0:
        return pos, leaf
    return -1, leaf


@njit(inline="always")
def _next_leaf(nkeys, child, height, sn, sc, depth):
    """Advance an in-order walk to the next leaf; returns (leaf, depth)."""
    while depth >= 0:
        if depth == height:
            node = sn[depth]
            depth -= 1
            return node, depth
        node = sn[depth]
        c = sc[depth]
        if c > nkeys[node]:
            depth -= 1
            continue
        sc[depth] = c + 1
        depth += 1
        sn[depth] = child[node] + c
        sc[depth] = 0
    return -1, depth


@njit(nogil=True, cache=True)
def _traverse(keys, nkeys, child, entry, meta, pstart, plen, pool,
              out_words, out_offsets, out_postings):
    """In-order leaf walk emitting values, posting offsets and postings."""
    height = meta[_HEIGHT]
    sn = np.empty(height + 1, dtype=np.int64)
    sc = np.zeros(height + 1, dtype=np.int64)
    sn[0] = meta[_ROOT]
    depth = 0
    u = 0
    p = 0
    out_offsets[0] = 0
    while True:
        leaf, depth = _next_leaf(nkeys, child, height, sn, sc, depth)
        if leaf < 0:
            break
        for s in range(nkeys[leaf]):
            for w in range(keys.shape[2]):
                out_words[u, w] = keys[leaf, s, w]
            e = entry[leaf, s]
            b = pstart[e]
            for j in range(plen[e]):
                out_postings[p] = pool[b + j]
                p += 1
            u += 1
            out_offsets[u] = p
    return u


@njit(nogil=True, cache=True)
def _extract_codes(keys, nkeys, child, entry, meta, pstart, plen, pool,
                   out_words, code_words, code_width):
    """Leaf walk that writes the sorted dictionary and scatters each value's
    dictionary position into the packed code vector at its tuple ids."""
    height = meta[_HEIGHT]
    sn = np.empty(height + 1, dtype=np.int64)
    sc = np.zeros(height + 1, dtype=np.int64)
    sn[0] = meta[_ROOT]
    depth = 0
    u = 0
    while True:
        leaf, depth = _next_leaf(nkeys, child, height, sn, sc, depth)
        if leaf < 0:
            break
        for s in range(nkeys[leaf]):
            for w in range(keys.shape[2]):
                out_words[u, w] = keys[leaf, s, w]
            e = entry[leaf, s]
            b = pstart[e]
            for j in range(plen[e]):
                put_code(code_words, code_width, pool[b + j], u)
            u += 1
    return u


# --------------------------------------------------------------------------

class OrderedValueIndex:
    """Ordered map from fixed-width value to the tuple ids it was inserted at."""

    def __init__(self, width: int, node_size: int = DEFAULT_NODE_SIZE, capacity: int = 64):
        if node_size <= POINTER_BYTES:
            raise ValueError(f"node_size must exceed {POINTER_BYTES} bytes")
        self.width = width
        self.node_size = node_size
        self.fanout = fanout_for(node_size, width)
        self._group = self.fanout + 1
        k = words_per_value(width)
        dt = word_dtype(width)
        self._scratch_nodes = self.fanout + 3
        cap_nodes = self._scratch_nodes + 8 * self._group
        self._keys = np.zeros((cap_nodes, self.fanout, k), dtype=dt)
        self._nkeys = np.zeros(cap_nodes, dtype=np.int32)
        self._child = np.full(cap_nodes, -1, dtype=np.int64)
        self._entry = np.zeros((cap_nodes, self.fanout), dtype=np.int64)
        self._scratch_keys = np.zeros((self.fanout + 2, k), dtype=dt)
        capacity = max(int(capacity), 4)
        self._pstart = np.zeros(capacity, dtype=np.int64)
        self._plen = np.zeros(capacity, dtype=np.int64)
        self._pcap = np.zeros(capacity, dtype=np.int64)
        self._pool = np.zeros(capacity * _INIT_POSTING_CAP, dtype=np.int64)
        self._seen = np.zeros(capacity, dtype=np.uint8)
        self._meta = np.zeros(8, dtype=np.int64)
        self._meta[_NODES] = self._scratch_nodes
        root = self._scratch_nodes
        self._meta[_NODES] += self._group
        self._meta[_ROOT] = root
        self.frozen = False

    # -- sizes
    def __len__(self) -> int:
        return int(self._meta[_ENTRIES])

    @property
    def n_postings(self) -> int:
        return int(self._meta[_INSERTS])

    @property
    def height(self) -> int:
        return int(self._meta[_HEIGHT])

    @property
    def n_nodes(self) -> int:
        return int(self._meta[_NODES]) - self._scratch_nodes

    # -- writes
    def freeze(self) -> None:
        self.frozen = True

    def insert(self, v: bytes, tuple_id: int) -> None:
        if len(v) != self.width:
            raise CodecError(f"value width {len(v)} does not match index width {self.width}")
        self.insert_many(buffer_to_words(bytes(v), self.width),
                         np.array([tuple_id], dtype=np.int64))

    def insert_many(self, words: np.ndarray, tuple_ids: np.ndarray) -> None:
        if self.frozen:
            raise RuntimeError("index is frozen")
        tuple_ids = np.ascontiguousarray(tuple_ids, dtype=np.int64)
        words = np.ascontiguousarray(words, dtype=self._keys.dtype)
        if words.shape[0] != tuple_ids.shape[0]:
            raise ValueError("values and tuple ids differ in length")
        if tuple_ids.size and tuple_ids.min() < 0:
            raise ValueError("tuple ids must be non-negative")
        i = 0
        n = words.shape[0]
        while i < n:
            i, status = _insert_many(self._keys, self._nkeys, self._child, self._entry,
                                     self._meta, self._pstart, self._plen, self._pcap,
                                     self._pool, self._seen, self._scratch_keys,
                                     words, tuple_ids, i, self.fanout)
            if status == _OK:
                break
            if status == _DUPLICATE:
                raise DuplicateTupleId(f"tuple id {tuple_ids[i]} already indexed")
            self._grow(status, n - i, int(tuple_ids[i:].max()))

    def _grow(self, status: int, pending: int, max_tid: int) -> None:
        if status == _GROW_NODES:
            extra = max(self._keys.shape[0], (self.height + 2) * self._group)
            self._keys = _extend(self._keys, extra)
            self._nkeys = _extend(self._nkeys, extra)
            self._child = _extend(self._child, extra, fill=-1)
            self._entry = _extend(self._entry, extra)
        elif status == _GROW_ENTRIES:
            extra = max(self._pstart.shape[0], 1024)
            self._pstart = _extend(self._pstart, extra)
            self._plen = _extend(self._plen, extra)
            self._pcap = _extend(self._pcap, extra)
        elif status == _GROW_POOL:
            # the largest posting list may need to double in one step
            extra = max(self._pool.shape[0], 2 * int(self._pcap.max(initial=0)), 1024)
            self._pool = _extend(self._pool, extra)
        elif status == _GROW_TIDS:
            target = max(2 * self._seen.shape[0], max_tid + 1)
            self._seen = _extend(self._seen, target - self._seen.shape[0])

    # -- reads
    def lookup(self, v: bytes) -> list[int]:
        """Posting list of ``v`` (empty when absent)."""
        return self.postings_array(v).tolist()

    def postings_array(self, v: bytes) -> np.ndarray:
        if len(v) != self.width:
            raise CodecError(f"value width {len(v)} does not match index width {self.width}")
        pos, leaf = _find(self._keys, self._nkeys, self._child, self._meta,
                          buffer_to_words(bytes(v), self.width))
        if pos < 0:
            return np.empty(0, dtype=np.int64)
        e = self._entry[leaf, pos]
        b = self._pstart[e]
        return self._pool[b:b + self._plen[e]].copy()

    def traverse_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sorted values ``(u, k)``, posting offsets ``(u + 1,)`` and the
        concatenated postings, all in value order."""
        u = len(self)
        words = np.empty((u, self._keys.shape[2]), dtype=self._keys.dtype)
        offsets = np.empty(u + 1, dtype=np.int64)
        postings = np.empty(self.n_postings, dtype=np.int64)
        if u:
            _traverse(self._keys, self._nkeys, self._child, self._entry, self._meta,
                      self._pstart, self._plen, self._pool, words, offsets, postings)
        else:
            offsets[0] = 0
        return words, offsets, postings

    def traverse(self) -> Iterator[tuple[bytes, list[int]]]:
        words, offsets, postings = self.traverse_arrays()
        for i, v in enumerate(from_words(words, self.width)):
            yield v, postings[offsets[i]:offsets[i + 1]].tolist()

    def extract_codes(self, code_words: np.ndarray, code_width: int) -> np.ndarray:
        """Sorted distinct values; scatters each tuple's position among them
        into ``code_words`` (zeroed bit-packed storage)."""
        words = np.empty((len(self), self._keys.shape[2]), dtype=self._keys.dtype)
        if len(self):
            _extract_codes(self._keys, self._nkeys, self._child, self._entry, self._meta,
                           self._pstart, self._plen, self._pool, words, code_words,
                           code_width)
        return words

    def __repr__(self) -> str:
        return (f"OrderedValueIndex(width={self.width}, fanout={self.fanout}, "
                f"values={len(self)}, postings={self.n_postings}, height={self.height})")


def _extend(a: np.ndarray, extra: int, fill=0) -> np.ndarray:
    out = np.full((a.shape[0] + extra,) + a.shape[1:], fill, dtype=a.dtype)
    out[:a.shape[0]] = a
    return out


def index_insert(idx: OrderedValueIndex, v: bytes, tuple_id: int) -> None:
    idx.insert(v, tuple_id)


def index_traverse(idx: OrderedValueIndex) -> list[tuple[bytes, list[int]]]:
    return list(idx.traverse())

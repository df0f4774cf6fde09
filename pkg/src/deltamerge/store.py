"""Tables of dictionary-compressed columns with a write-optimized delta.

Tuple ids are implicit offsets shared by every column of a table:

    [0, N_M)                       main partition
    [N_M, N_M + |merging|)         delta frozen for an in-progress merge
    [N_M + |merging|, row_count)   active delta receiving inserts

Committing a merge folds the frozen delta into the main partition, so every
existing id keeps addressing the same row.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Union

import numpy as np

from .codec import (BitPackedVector, CodecError, SortedDictionary, buffer_to_words,
                    compressed_width, dict_find, from_words, pack,
                    row_to_bytes, sort_dedup, word_dtype, words_per_value)
from .delta_index import DEFAULT_NODE_SIZE, OrderedValueIndex

DEFAULT_MERGE_FRACTION = 0.01


class StoreError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# partitions

class MainPartition:
    """Sorted dictionary plus one bit-packed code per tuple."""

    __slots__ = ("dictionary", "codes")

    def __init__(self, dictionary: SortedDictionary, codes: BitPackedVector):
        if len(dictionary) == 0:
            if codes.count:
                raise StoreError("codes present but dictionary is empty")
            if codes.width_bits != 1:
                raise StoreError("empty main partition must use 1-bit codes")
        elif codes.width_bits != compressed_width(len(dictionary)):
            raise StoreError(f"code width {codes.width_bits} is not minimal for "
                             f"{len(dictionary)} dictionary entries")
        self.dictionary = dictionary
        self.codes = codes

    @classmethod
    def empty(cls, width: int) -> "MainPartition":
        return cls(SortedDictionary.empty(width), BitPackedVector(0, 1))

    @classmethod
    def from_words(cls, words: np.ndarray, width: int) -> "MainPartition":
        """Bulk build from an ``(n, k)`` word array of uncompressed values."""
        if words.shape[0] == 0:
            return cls.empty(width)
        uniq, inverse = sort_dedup(words)
        d = SortedDictionary(width, uniq, check=False)
        return cls(d, pack(inverse, compressed_width(len(d))))

    @classmethod
    def from_values(cls, values: Sequence[bytes], width: int) -> "MainPartition":
        return cls.from_words(_values_to_words(values, width), width)

    @property
    def width(self) -> int:
        return self.dictionary.width

    def __len__(self) -> int:
        return self.codes.count

    def value(self, i: int) -> bytes:
        return self.dictionary[self.codes[i]]

    def decode_words(self) -> np.ndarray:
        if not len(self):
            return self.dictionary.words[:0].copy()
        return self.dictionary.words[self.codes.to_array().astype(np.int64)]

    def decode(self) -> list[bytes]:
        return from_words(self.decode_words(), self.width)

    def __eq__(self, other) -> bool:
        if not isinstance(other, MainPartition):
            return NotImplemented
        return self.dictionary == other.dictionary and self.codes == other.codes

    def __repr__(self) -> str:
        return (f"MainPartition(rows={len(self)}, dict={len(self.dictionary)}, "
                f"bits={self.codes.width_bits})")


class DeltaPartition:
    """Append-only uncompressed values plus an ordered index over them.

    Tuple ids inside the index are positions in this partition (0-based).
    """

    def __init__(self, width: int, node_size: int = DEFAULT_NODE_SIZE):
        self.width = width
        self._raw = np.empty((16, words_per_value(width)), dtype=word_dtype(width))
        self._n = 0
        self.index = OrderedValueIndex(width, node_size)
        self.frozen = False

    def __len__(self) -> int:
        return self._n

    @property
    def raw(self) -> np.ndarray:
        """``(n, k)`` words of every value, in insertion order."""
        return self._raw[:self._n]

    def _reserve(self, extra: int) -> None:
        need = self._n + extra
        if need > self._raw.shape[0]:
            cap = max(need, 2 * self._raw.shape[0])
            grown = np.empty((cap, self._raw.shape[1]), dtype=self._raw.dtype)
            grown[:self._n] = self._raw[:self._n]
            self._raw = grown

    def append(self, v: bytes) -> int:
        if len(v) != self.width:
            raise CodecError(f"value width {len(v)} does not match column width {self.width}")
        return self.append_words(buffer_to_words(bytes(v), self.width))

    def append_words(self, words: np.ndarray) -> int:
        """Append rows of words; returns the position of the first one."""
        if self.frozen:
            raise StoreError("delta partition is frozen")
        n = words.shape[0]
        start = self._n
        self._reserve(n)
        self._raw[start:start + n] = words
        self.index.insert_many(words, np.arange(start, start + n, dtype=np.int64))
        self._n = start + n
        return start

    def value(self, i: int) -> bytes:
        if not 0 <= i < self._n:
            raise IndexError(f"delta position {i} out of range")
        return row_to_bytes(self._raw, i)

    def freeze(self) -> None:
        self.frozen = True
        self.index.freeze()

    def __repr__(self) -> str:
        return f"DeltaPartition(rows={self._n}, distinct={len(self.index)}, frozen={self.frozen})"


# --------------------------------------------------------------------------
# columns and tables

@dataclass(frozen=True)
class ColumnSpec:
    name: str
    width: int


@dataclass
class TableSchema:
    columns: list[ColumnSpec] = field(default_factory=list)
    node_size: int = DEFAULT_NODE_SIZE

    @classmethod
    def uniform(cls, n_cols: int, width: int, **kw) -> "TableSchema":
        return cls([ColumnSpec(f"c{j}", width) for j in range(n_cols)], **kw)

    @classmethod
    def from_config(cls, cfg: dict) -> "TableSchema":
        """``{"n_cols": 3, "value_bytes": 8}`` or ``{"columns": "a:8,b:16"}``."""
        if "columns" in cfg:
            cols = []
            for item in str(cfg["columns"]).split(","):
                name, _, width = item.strip().partition(":")
                cols.append(ColumnSpec(name, int(width)))
            return cls(cols)
        return cls.uniform(int(cfg["n_cols"]), int(cfg["value_bytes"]))


class ColumnState(NamedTuple):
    main: MainPartition
    merging: Optional[DeltaPartition]
    active: DeltaPartition


class Column:
    """One attribute; readers take ``state`` once and work on that snapshot."""

    def __init__(self, spec: ColumnSpec, node_size: int = DEFAULT_NODE_SIZE):
        self.name = spec.name
        self.width = spec.width
        self.node_size = node_size
        self.state = ColumnState(MainPartition.empty(spec.width), None,
                                 DeltaPartition(spec.width, node_size))

    @property
    def main(self) -> MainPartition:
        return self.state.main

    @property
    def merging_delta(self) -> Optional[DeltaPartition]:
        return self.state.merging

    @property
    def active_delta(self) -> DeltaPartition:
        return self.state.active

    def __repr__(self) -> str:
        s = self.state
        return (f"Column({self.name!r}, width={self.width}, main={len(s.main)}, "
                f"merging={len(s.merging) if s.merging else None}, active={len(s.active)})")


@dataclass(frozen=True)
class DeltaSnapshot:
    """Frozen deltas handed to a merge, one per column."""
    deltas: tuple
    n_main: int

    def __len__(self) -> int:
        return len(self.deltas[0]) if self.deltas else 0


ColumnRef = Union[int, str]


class Table:
    def __init__(self, schema: TableSchema):
        if not schema.columns:
            raise StoreError("a table needs at least one column")
        names = [c.name for c in schema.columns]
        if len(set(names)) != len(names):
            raise StoreError("duplicate column names")
        self.schema = schema
        self.columns = [Column(c, schema.node_size) for c in schema.columns]
        self._by_name = {c.name: i for i, c in enumerate(self.columns)}
        self._write_lock = threading.RLock()

    @classmethod
    def create(cls, n_cols: int, width: int, **kw) -> "Table":
        return cls(TableSchema.uniform(n_cols, width, **kw))

    # -- sizes
    @property
    def n_cols(self) -> int:
        return len(self.columns)

    @property
    def n_main(self) -> int:
        return len(self.columns[0].state.main)

    @property
    def n_merging(self) -> int:
        m = self.columns[0].state.merging
        return len(m) if m is not None else 0

    @property
    def n_active(self) -> int:
        return len(self.columns[0].state.active)

    @property
    def n_delta(self) -> int:
        return self.n_merging + self.n_active

    @property
    def row_count(self) -> int:
        s = self.columns[0].state
        return len(s.main) + (len(s.merging) if s.merging is not None else 0) + len(s.active)

    @property
    def merge_in_progress(self) -> bool:
        return self.columns[0].state.merging is not None

    def column(self, ref: ColumnRef) -> Column:
        if isinstance(ref, str):
            try:
                return self.columns[self._by_name[ref]]
            except KeyError:
                raise StoreError(f"no column named {ref!r}") from None
        return self.columns[ref]

    # -- writes
    def insert_row(self, values: Sequence[bytes]) -> int:
        """Append one tuple to every column's active delta; returns its id."""
        if len(values) != self.n_cols:
            raise StoreError(f"expected {self.n_cols} values, got {len(values)}")
        for col, v in zip(self.columns, values):
            if len(v) != col.width:
                raise CodecError(f"column {col.name!r} expects {col.width}-byte values, "
                                 f"got {len(v)}")
        with self._write_lock:
            tid = self.row_count
            for col, v in zip(self.columns, values):
                active = col.state.active
                if active.frozen:
                    raise StoreError("active delta is frozen")
                active.append(v)
            return tid

    def insert_rows(self, columns: Sequence) -> int:
        """Bulk form of ``insert_row``: one word array (or list of bytes) per
        column, all of equal length.  Returns the id of the first new row."""
        if len(columns) != self.n_cols:
            raise StoreError(f"expected {self.n_cols} columns, got {len(columns)}")
        arrays = [_values_to_words(vals, col.width) for col, vals in zip(self.columns, columns)]
        n = arrays[0].shape[0]
        if any(a.shape[0] != n for a in arrays):
            raise StoreError("columns differ in length")
        with self._write_lock:
            tid = self.row_count
            for col, words in zip(self.columns, arrays):
                if col.state.active.frozen:
                    raise StoreError("active delta is frozen")
                col.state.active.append_words(words)
            return tid

    def bulk_load(self, columns: Sequence) -> None:
        """Build main partitions directly (empty table only).  Each column is
        given as values, a word array or a ready ``MainPartition``."""
        if len(columns) != self.n_cols:
            raise StoreError(f"expected {self.n_cols} columns, got {len(columns)}")
        with self._write_lock:
            if self.row_count:
                raise StoreError("bulk_load requires an empty table")
            mains = [v if isinstance(v, MainPartition)
                     else MainPartition.from_words(_values_to_words(v, c.width), c.width)
                     for c, v in zip(self.columns, columns)]
            if len({len(m) for m in mains}) > 1:
                raise StoreError("columns differ in length")
            for col, m in zip(self.columns, mains):
                if m.width != col.width:
                    raise StoreError(f"column {col.name!r} expects width {col.width}, "
                                     f"got {m.width}")
            for col, m in zip(self.columns, mains):
                col.state = col.state._replace(main=m)

    # -- merge protocol
    def freeze_and_swap(self) -> DeltaSnapshot:
        with self._write_lock:
            if self.merge_in_progress:
                raise StoreError("a merge is already in progress")
            frozen = []
            for col in self.columns:
                s = col.state
                s.active.freeze()
                frozen.append(s.active)
                col.state = ColumnState(s.main, s.active,
                                        DeltaPartition(col.width, col.node_size))
            return DeltaSnapshot(tuple(frozen), len(self.columns[0].state.main))

    def commit_merge(self, new_mains: Sequence[MainPartition]) -> None:
        with self._write_lock:
            if not self.merge_in_progress:
                raise StoreError("no merge in progress")
            if len(new_mains) != self.n_cols:
                raise StoreError(f"expected {self.n_cols} main partitions, got {len(new_mains)}")
            for col, m in zip(self.columns, new_mains):
                s = col.state
                want = len(s.main) + len(s.merging)
                if len(m) != want:
                    raise StoreError(f"column {col.name!r}: merged length {len(m)} != {want}")
                if m.width != col.width:
                    raise StoreError(f"column {col.name!r}: merged width {m.width} != {col.width}")
            for col, m in zip(self.columns, new_mains):
                col.state = ColumnState(m, None, col.state.active)

    def merge_trigger_due(self, fraction: float = DEFAULT_MERGE_FRACTION) -> bool:
        if fraction <= 0:
            raise ValueError("fraction must be positive")
        return self.n_delta > fraction * self.n_main

    def merge(self, method: str = "optimized", n_threads: int = 1,
              strategy: str = "columns", stats: Optional[dict] = None) -> None:
        """Freeze, merge every column and commit."""
        from .parallel import parallel_merge_table
        from .merge import merge_column_naive

        if method not in ("naive", "optimized"):
            raise ValueError(f"unknown merge method {method!r}")
        snap = self.freeze_and_swap()
        try:
            if method == "naive":
                mains = [merge_column_naive(c.state.main, d, stats=stats)
                         for c, d in zip(self.columns, snap.deltas)]
            else:
                mains = parallel_merge_table(self, n_threads, strategy, stats=stats)
        except BaseException:
            self._abort_merge()
            raise
        self.commit_merge(mains)

    def _abort_merge(self) -> None:
        """Fold the frozen delta back in front of the active one."""
        with self._write_lock:
            for col in self.columns:
                s = col.state
                if s.merging is None:
                    continue
                fresh = DeltaPartition(col.width, col.node_size)
                if len(s.merging):
                    fresh.append_words(s.merging.raw)
                if len(s.active):
                    fresh.append_words(s.active.raw)
                col.state = ColumnState(s.main, None, fresh)

    # -- reads
    def _locate(self, s: ColumnState, tuple_id: int):
        n_main = len(s.main)
        if tuple_id < n_main:
            return s.main, tuple_id
        tuple_id -= n_main
        if s.merging is not None:
            if tuple_id < len(s.merging):
                return s.merging, tuple_id
            tuple_id -= len(s.merging)
        if tuple_id < len(s.active):
            return s.active, tuple_id
        return None, None

    def get_value(self, column: ColumnRef, tuple_id: int) -> bytes:
        s = self.column(column).state
        if tuple_id < 0:
            raise IndexError(f"tuple id {tuple_id} out of range")
        part, pos = self._locate(s, int(tuple_id))
        if part is None:
            raise IndexError(f"tuple id {tuple_id} out of range")
        return part.value(pos)

    def scan_eq(self, column: ColumnRef, v: bytes) -> list[int]:
        """Ids of all tuples whose value equals ``v``, ascending."""
        col = self.column(column)
        if len(v) != col.width:
            raise CodecError(f"column {col.name!r} expects {col.width}-byte values")
        s = col.state
        parts = []
        main = s.main
        if len(main):
            code = dict_find(main.dictionary, v)
            if code is not None:
                parts.append(main.codes.positions_of(code))
        offset = len(main)
        for delta in (s.merging, s.active):
            if delta is None:
                continue
            parts.append(delta.index.postings_array(v) + offset)
            offset += len(delta)
        if not parts:
            return []
        return np.concatenate(parts).tolist()

    def materialize(self, column: ColumnRef) -> list[bytes]:
        """Every value of the column in tuple-id order."""
        s = self.column(column).state
        out = s.main.decode()
        for delta in (s.merging, s.active):
            if delta is not None:
                out.extend(from_words(delta.raw, delta.width))
        return out

    def __repr__(self) -> str:
        return (f"Table(cols={self.n_cols}, main={self.n_main}, merging={self.n_merging}, "
                f"active={self.n_active})")


def _values_to_words(values, width: int) -> np.ndarray:
    if isinstance(values, np.ndarray):
        if values.ndim != 2 or values.dtype != word_dtype(width) \
                or values.shape[1] != words_per_value(width):
            raise CodecError(f"word array {values.shape}/{values.dtype} does not hold "
                             f"{width}-byte values")
        return np.ascontiguousarray(values)
    from .codec import to_words
    return to_words(values, width)


# module-level forms of the table operations
def insert_row(t: Table, values: Sequence[bytes]) -> int:
    return t.insert_row(values)


def scan_eq(t: Table, column: ColumnRef, v: bytes) -> list[int]:
    return t.scan_eq(column, v)


def get_value(t: Table, column: ColumnRef, tuple_id: int) -> bytes:
    return t.get_value(column, tuple_id)


def freeze_and_swap(t: Table) -> DeltaSnapshot:
    return t.freeze_and_swap()


def commit_merge(t: Table, new_mains: Sequence[MainPartition]) -> None:
    t.commit_merge(new_mains)


def merge_trigger_due(t: Table, fraction: float = DEFAULT_MERGE_FRACTION) -> bool:
    return t.merge_trigger_due(fraction)

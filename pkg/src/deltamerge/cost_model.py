"""Analytical memory-traffic model of the merge.

Every step is costed as bytes moved divided by the bandwidth of the access
pattern (streaming or random), in cycles, and normalised per tuple over
N_M + N_D tuples of one column.  Where a step is compute bound the compute
estimate is reported beside the bandwidth estimate.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import NamedTuple, Optional, Union

from .codec import compressed_width

MERGE_OPS_PER_OUTPUT = 12   # Step 1(b) compare/copy/branch work per merged entry
GATHER_OPS_PER_TUPLE = 4    # Step 2 translation lookup when the tables are cached


@dataclass(frozen=True)
class MachineParams:
    cache_line_bytes: int = 64
    stream_bw: float = 7.0          # bytes/cycle, sequential
    random_bw: float = 5.0          # bytes/cycle, cache-line random
    clock_hz: float = 3.3e9
    llc_bytes: float = 24 * 2 ** 20
    n_threads: int = 1

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be positive, got {getattr(self, f.name)}")


REFERENCE_PLATFORM = MachineParams(cache_line_bytes=64, stream_bw=7.0, random_bw=5.0,
                               clock_hz=3.3e9, llc_bytes=24 * 2 ** 20, n_threads=6)


@dataclass(frozen=True)
class WorkloadParams:
    n_main: float
    n_delta: float
    n_cols: int = 1
    value_bytes: int = 8
    unique_main: float = 1.0
    unique_delta: float = 1.0
    code_bits: Optional[float] = None       # fractional E'_C override
    merged_unique: Optional[float] = None   # measured |U'_M|

    def __post_init__(self):
        if self.n_main < 0 or self.n_delta < 0:
            raise ValueError("partition sizes must be non-negative")
        if self.n_cols < 1 or self.value_bytes < 1:
            raise ValueError("n_cols and value_bytes must be positive")
        for name in ("unique_main", "unique_delta"):
            lam = getattr(self, name)
            if not 0 < lam <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {lam}")
        if self.code_bits is not None and self.code_bits <= 0:
            raise ValueError("code_bits must be positive")

    @property
    def n_total(self) -> float:
        return self.n_main + self.n_delta

    @property
    def u_main(self) -> float:
        return self.unique_main * self.n_main

    @property
    def u_delta(self) -> float:
        return self.unique_delta * self.n_delta

    @property
    def u_merged(self) -> float:
        """|U'_M|: measured if given, else the upper bound |U_M| + |U_D|."""
        if self.merged_unique is not None:
            return self.merged_unique
        return self.u_main + self.u_delta

    @property
    def code_width(self) -> float:
        """E'_C in bits."""
        if self.code_bits is not None:
            return self.code_bits
        return compressed_width(max(1, math.ceil(self.u_merged)))


class Traffic(NamedTuple):
    stream_bytes: float
    random_bytes: float

    @property
    def total(self) -> float:
        return self.stream_bytes + self.random_bytes


class Step1bTraffic(NamedTuple):
    read_bytes: float
    write_bytes: float
    parallel_extra_bytes: float

    @property
    def total(self) -> float:
        return self.read_bytes + self.write_bytes + self.parallel_extra_bytes


def traffic_step1a(w: WorkloadParams, cache_line_bytes: int = 64) -> Traffic:
    """Tree walk (streamed, ~4E bytes per distinct value) plus one random
    cache line read and written per delta tuple for the code scatter."""
    return Traffic(4 * w.value_bytes * w.u_delta, (2 * cache_line_bytes + 4) * w.n_delta)


def traffic_step1b(w: WorkloadParams, n_threads: int = 1) -> Step1bTraffic:
    e, ec = w.value_bytes, w.code_width
    tables = ec * (w.u_main + w.u_delta) / 8
    read = e * (w.u_main + w.u_delta + w.u_merged) + tables
    write = e * w.u_merged + tables
    extra = 0.0
    if n_threads > 1:
        # phase 3 reads both inputs again and rewrites the output
        extra = e * (w.u_main + w.u_delta) + 2 * e * w.u_merged
    return Step1bTraffic(read, write, extra)


def traffic_step2(w: WorkloadParams, aux_fits: bool, cache_line_bytes: int = 64) -> Traffic:
    """Read old codes and write new ones (streamed); out of cache, every
    tuple's table lookup costs a random cache line."""
    ec = w.code_width
    stream = ec * w.n_total / 8 + 2 * ec * w.n_total / 8
    rand = 0.0 if aux_fits else cache_line_bytes * w.n_total
    return Traffic(stream, rand)


def aux_size_bytes(w: WorkloadParams) -> float:
    return (w.u_main + w.u_delta) * w.code_width / 8


def aux_fits_cache(w: WorkloadParams, m: MachineParams) -> bool:
    return aux_size_bytes(w) <= m.llc_bytes


@dataclass
class StepCost:
    stream_bytes: float = 0.0
    random_bytes: float = 0.0
    bandwidth_cycles: float = 0.0   # per tuple
    compute_cycles: float = 0.0     # per tuple
    cycles: float = 0.0             # per tuple, what the step is charged


@dataclass
class CostBreakdown:
    steps: dict = field(default_factory=dict)
    aux_fits: bool = True

    @property
    def total(self) -> float:
        return sum(s.cycles for s in self.steps.values())

    def __getitem__(self, step: str) -> StepCost:
        return self.steps[step]

    def to_record(self) -> dict:
        rec = {k: {"stream_bytes": s.stream_bytes, "random_bytes": s.random_bytes,
                   "cycles": s.cycles} for k, s in self.steps.items()}
        rec["total"] = {"cycles": self.total}
        return rec


def predict_cpt(w: WorkloadParams, m: MachineParams) -> CostBreakdown:
    """Cycles per tuple per column for each merge step."""
    n = w.n_total
    fits = aux_fits_cache(w, m)
    out = CostBreakdown(aux_fits=fits)
    if n == 0:
        out.steps = {k: StepCost() for k in ("step1a", "step1b", "step2")}
        return out

    t = traffic_step1a(w, m.cache_line_bytes)
    bw = (t.stream_bytes / m.stream_bw + t.random_bytes / m.random_bw) / n
    out.steps["step1a"] = StepCost(t.stream_bytes, t.random_bytes, bw, 0.0, bw)

    t1 = traffic_step1b(w, m.n_threads)
    bw = t1.total / m.stream_bw / n
    comp = MERGE_OPS_PER_OUTPUT * w.u_merged / m.n_threads / n
    out.steps["step1b"] = StepCost(t1.total, 0.0, bw, comp, max(bw, comp))

    t2 = traffic_step2(w, fits, m.cache_line_bytes)
    bw = (t2.stream_bytes / m.stream_bw + t2.random_bytes / m.random_bw) / n
    comp = GATHER_OPS_PER_TUPLE / m.n_threads if fits else 0.0
    out.steps["step2"] = StepCost(t2.stream_bytes, t2.random_bytes, bw, comp, bw + comp)
    return out


def update_rate(n_delta: float, cpt: float, n_cols: int, clock_hz: float,
                n_total: float, update_cpt: float = 0.0) -> float:
    """Updates per second from a per-tuple-per-column cost.

    ``cpt`` is the merge cost; ``update_cpt`` the measured delta-insert cost
    on the same normalisation, added to it.
    """
    denom = (cpt + update_cpt) * n_total * n_cols
    if denom == 0:
        raise ZeroDivisionError("update rate undefined for zero cost or empty table")
    return n_delta * clock_hz / denom


# --------------------------------------------------------------------------
# key=value configuration

_ALIASES = {"N_M": "n_main", "N_D": "n_delta", "N_C": "n_cols", "E": "value_bytes",
            "lambda_M": "unique_main", "lambda_D": "unique_delta", "E_C": "code_bits",
            "L": "cache_line_bytes", "N_T": "n_threads", "llc": "llc_bytes"}


def parse_kv(text: str) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {no}: expected key=value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[_ALIASES.get(k, k).replace("-", "_")] = v
    return out


def _coerce(cls, kv: dict) -> dict:
    out = {}
    for f in fields(cls):
        if f.name in kv:
            v = kv[f.name]
            out[f.name] = None if v.lower() in ("", "none") else float(v)
            if f.name in ("n_cols", "value_bytes", "cache_line_bytes", "n_threads"):
                out[f.name] = int(out[f.name])
    return out


def load_params(source: Union[str, Path, dict],
                machine: MachineParams = REFERENCE_PLATFORM
                ) -> tuple[WorkloadParams, MachineParams]:
    """Workload and machine parameters from a key=value file, text or dict.
    Machine keys that are absent keep the values of ``machine``."""
    if isinstance(source, dict):
        kv = {_ALIASES.get(k, k): str(v) for k, v in source.items()}
    else:
        p = Path(source)
        kv = parse_kv(p.read_text() if "\n" not in str(source) and p.exists() else str(source))
    known = {f.name for f in fields(WorkloadParams)} | {f.name for f in fields(MachineParams)}
    unknown = set(kv) - known
    if unknown:
        raise ValueError(f"unknown parameters: {sorted(unknown)}")
    w = WorkloadParams(**_coerce(WorkloadParams, kv))
    m = MachineParams(**{**asdict(machine), **_coerce(MachineParams, kv)})
    return w, m

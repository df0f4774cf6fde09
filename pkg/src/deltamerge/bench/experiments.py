"""Experiment specs, the measurement loop and the named sweeps."""
from __future__ import annotations

import dataclasses
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np

from .. import cost_model as cm
from ..codec import compressed_width
from ..merge import merge_column_naive
from ..parallel import STRATEGIES, parallel_merge_table
from ..store import MainPartition, Table
from . import micro
from .data import count_distinct, gen_column

CSV_COLUMNS = ("experiment", "seed", "rep", "n_main", "n_delta", "n_cols", "value_bytes",
               "unique_main", "unique_delta", "threads", "strategy", "t_update_s",
               "t_step1a_s", "t_step1b_s", "t_step2_s", "t_naive_step2_s", "cpt_total",
               "cpt_model", "updates_per_s")

STEPS = ("step1a", "step1b", "step2a", "step2")


class BudgetExceeded(MemoryError):
    pass


@dataclass(frozen=True)
class ExperimentSpec:
    experiment: str = "smoke"
    n_main: int = 10_000
    n_delta: int = 100
    n_cols: int = 2
    value_bytes: int = 8
    unique_main: float = 0.1
    unique_delta: float = 0.1
    threads: tuple = (1,)
    strategy: str = "columns"
    seed: int = 0
    reps: int = 3
    naive: bool = True

    def __post_init__(self):
        for name in ("n_main", "n_delta", "n_cols", "value_bytes", "reps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("unique_main", "unique_delta"):
            lam = getattr(self, name)
            if not 0 < lam <= 1:
                raise ValueError(f"{name} must be in (0, 1], got {lam}")
        object.__setattr__(self, "threads", tuple(int(t) for t in self.threads))
        if not self.threads or min(self.threads) < 1:
            raise ValueError("threads must be a non-empty list of positive counts")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    @property
    def n_total(self) -> int:
        return self.n_main + self.n_delta

    def replace(self, **kw) -> "ExperimentSpec":
        return dataclasses.replace(self, **kw)


@dataclass
class BenchContext:
    """Machine description used to turn seconds into cycles and to feed the
    cost model."""
    clock_hz: float
    stream_bpc: float
    random_bpc: float
    llc_bytes: int
    mem_budget: int

    @classmethod
    def detect(cls, clock_hz: Optional[float] = None, llc_bytes: Optional[int] = None,
               mem_budget: Optional[int] = None, stream_bpc: Optional[float] = None,
               random_bpc: Optional[float] = None) -> "BenchContext":
        hz = clock_hz or micro.detect_clock_hz()
        if stream_bpc is None or random_bpc is None:
            bw = micro.cached_bandwidth(hz)
            stream_bpc = stream_bpc or bw.stream_bpc
            random_bpc = random_bpc or bw.random_bpc
        llc = llc_bytes or micro.cached_llc_bytes()
        budget = mem_budget or int(0.7 * micro.physical_memory_bytes())
        return cls(hz, stream_bpc, random_bpc, llc, budget)

    def machine(self, n_threads: int) -> cm.MachineParams:
        return cm.MachineParams(stream_bw=self.stream_bpc, random_bw=self.random_bpc,
                                clock_hz=self.clock_hz, llc_bytes=self.llc_bytes,
                                n_threads=n_threads)


@dataclass
class MeasurementRow:
    experiment: str
    seed: int
    rep: int
    n_main: int
    n_delta: int
    n_cols: int
    value_bytes: int
    unique_main: float
    unique_delta: float
    threads: int
    strategy: str
    t_update_s: float
    t_step1a_s: float
    t_step1b_s: float
    t_step2_s: float
    t_naive_step2_s: float
    cpt_total: float
    cpt_model: float
    updates_per_s: float
    # not in the CSV
    t_step2a_s: float = 0.0
    t_merge_s: float = 0.0
    t_naive_merge_s: float = float("nan")
    cpt_update: float = 0.0
    cpt_step2: float = 0.0
    model_step_cpt: dict = field(default_factory=dict)
    realized_unique_main: float = 0.0
    realized_unique_delta: float = 0.0
    merged_unique: float = 0.0
    aux_fits: bool = True
    outputs_match: bool = True
    clock_hz: float = 0.0

    @property
    def model_error(self) -> float:
        """Measured over predicted cycles per tuple."""
        return self.cpt_total / self.cpt_model if self.cpt_model else float("nan")

    @property
    def step2_model_error(self) -> float:
        m = self.model_step_cpt.get("step2", 0.0)
        return self.cpt_step2 / m if m else float("nan")

    @property
    def naive_step2_speedup(self) -> float:
        return self.t_naive_step2_s / self.t_step2_s if self.t_step2_s else float("nan")

    def csv_record(self) -> dict:
        return {c: getattr(self, c) for c in CSV_COLUMNS}


# --------------------------------------------------------------------------
# footprint guard

def estimate_footprint(spec: ExperimentSpec) -> int:
    """Rough peak bytes: resident table plus the transient state of the
    columns being merged at once plus data generation."""
    e = spec.value_bytes
    um = spec.unique_main * spec.n_main
    ud = spec.unique_delta * spec.n_delta
    bits = compressed_width(max(1, round(um + ud)))
    resident = (spec.n_main * bits / 8 + um * e             # main codes and dictionary
                + 2 * spec.n_delta * e                      # delta values (doubling)
                + 3 * ud * e + 24 * spec.n_delta)           # index nodes and postings
    transient = (spec.n_total * bits / 8 * 2 + (um + ud) * (e + 8)
                 + spec.n_delta * 8)
    if spec.naive:
        transient += spec.n_total * bits / 8 + (um + ud) * e
    generation = 4 * spec.n_main * e
    workers = min(max(spec.threads), spec.n_cols) if spec.strategy == "columns" else 1
    return int(spec.n_cols * resident + workers * transient + generation)


def check_budget(spec: ExperimentSpec, budget: int) -> None:
    est = estimate_footprint(spec)
    if est > budget:
        raise BudgetExceeded(f"{spec.experiment}: estimated footprint {est / 2**20:.0f} MiB "
                             f"exceeds budget {budget / 2**20:.0f} MiB")


# --------------------------------------------------------------------------
# measurement

def _column_seed(spec: ExperimentSpec, col: int, part: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([spec.seed, col, part])


def build_inputs(spec: ExperimentSpec) -> tuple[list[MainPartition], list[np.ndarray]]:
    """Main partitions and delta rows, one column at a time.  Main and delta
    values come from independent pools."""
    mains, deltas = [], []
    for j in range(spec.n_cols):
        words = gen_column(spec.n_main, spec.value_bytes, spec.unique_main,
                           np.random.default_rng(_column_seed(spec, j, 0)))
        mains.append(MainPartition.from_words(words, spec.value_bytes))
        del words
        deltas.append(gen_column(spec.n_delta, spec.value_bytes, spec.unique_delta,
                                 np.random.default_rng(_column_seed(spec, j, 1))))
    return mains, deltas


def _cpt(seconds: float, spec: ExperimentSpec, clock_hz: float) -> float:
    return seconds * clock_hz / (spec.n_total * spec.n_cols)


def _step_walls(stats: dict) -> dict:
    """Per-step elapsed time.  Worker-seconds (several columns in flight) are
    scaled so the steps add up to the measured wall time."""
    busy = sum(stats.get(s, 0.0) for s in STEPS)
    wall = stats.get("wall", busy)
    k = wall / busy if busy else 0.0
    return {s: stats.get(s, 0.0) * k for s in STEPS}


_warm: set = set()


def warm_up(value_bytes: int, strategy: str) -> None:
    """Run every kernel once on a tiny table so compilation and cache
    loading stay out of the timed regions."""
    key = (value_bytes, STRATEGIES[strategy])
    if key in _warm:
        return
    tiny = ExperimentSpec(n_main=300, n_delta=70, n_cols=2, value_bytes=value_bytes,
                          strategy=strategy, reps=1)
    mains, deltas = build_inputs(tiny)
    t = Table.create(tiny.n_cols, value_bytes)
    t.bulk_load(mains)
    t.insert_rows(deltas)
    t.freeze_and_swap()
    for c in t.columns:
        merge_column_naive(c.state.main, c.state.merging)
    for nt in (1, 2):
        parallel_merge_table(t, nt, strategy)
    _warm.add(key)


def run_experiment(spec: ExperimentSpec, ctx: Optional[BenchContext] = None,
                   log: Optional[Callable[[str], None]] = None) -> list[MeasurementRow]:
    """One row per (repetition, thread count)."""
    ctx = ctx or BenchContext.detect()
    check_budget(spec, ctx.mem_budget)
    log = log or (lambda s: None)
    warm_up(spec.value_bytes, spec.strategy)
    mains, deltas = build_inputs(spec)
    real_um = float(np.mean([len(m.dictionary) / spec.n_main for m in mains]))
    real_ud = float(np.mean([count_distinct(d) / spec.n_delta for d in deltas]))
    rows = []
    for rep in range(spec.reps):
        t = Table.create(spec.n_cols, spec.value_bytes)
        t.bulk_load(mains)
        t0 = time.perf_counter()
        t.insert_rows(deltas)
        t_update = time.perf_counter() - t0
        t.freeze_and_swap()

        naive_step2 = naive_total = float("nan")
        reference = None
        if spec.naive:
            nstats: dict = {}
            t0 = time.perf_counter()
            reference = [merge_column_naive(c.state.main, c.state.merging, nstats)
                         for c in t.columns]
            naive_total = time.perf_counter() - t0
            naive_step2 = nstats["step2"]

        for nt in spec.threads:
            stats: dict = {}
            new = parallel_merge_table(t, nt, spec.strategy, stats)
            if reference is None:
                reference = new
            match = all(a == b for a, b in zip(new, reference))
            steps = _step_walls(stats)
            t_merge = stats["wall"]
            merged = float(np.mean([len(m.dictionary) for m in new]))
            w = cm.WorkloadParams(spec.n_main, spec.n_delta, spec.n_cols, spec.value_bytes,
                                  real_um, real_ud, merged_unique=merged)
            pred = cm.predict_cpt(w, ctx.machine(nt))
            cpt_update = _cpt(t_update, spec, ctx.clock_hz)
            cpt_merge = _cpt(t_merge, spec, ctx.clock_hz)
            row = MeasurementRow(
                experiment=spec.experiment, seed=spec.seed, rep=rep,
                n_main=spec.n_main, n_delta=spec.n_delta, n_cols=spec.n_cols,
                value_bytes=spec.value_bytes, unique_main=spec.unique_main,
                unique_delta=spec.unique_delta, threads=nt, strategy=STRATEGIES[spec.strategy],
                t_update_s=t_update, t_step1a_s=steps["step1a"], t_step1b_s=steps["step1b"],
                t_step2_s=steps["step2"], t_naive_step2_s=naive_step2,
                cpt_total=cpt_update + cpt_merge, cpt_model=pred.total + cpt_update,
                updates_per_s=cm.update_rate(spec.n_delta, cpt_merge, spec.n_cols,
                                             ctx.clock_hz, spec.n_total, cpt_update),
                t_step2a_s=steps["step2a"], t_merge_s=t_merge, t_naive_merge_s=naive_total,
                cpt_update=cpt_update, cpt_step2=_cpt(steps["step2"], spec, ctx.clock_hz),
                model_step_cpt={k: s.cycles for k, s in pred.steps.items()},
                realized_unique_main=real_um, realized_unique_delta=real_ud,
                merged_unique=merged, aux_fits=pred.aux_fits, outputs_match=match,
                clock_hz=ctx.clock_hz)
            rows.append(row)
            log(f"{spec.experiment} rep={rep} N_T={nt} merge={t_merge:.3f}s "
                f"cpt={row.cpt_total:.2f} model={row.cpt_model:.2f}")
        t.commit_merge(new)
        del t, new, reference
    return rows


# --------------------------------------------------------------------------
# named sweeps

DESK_DEFAULTS = dict(n_main=10 ** 7, n_cols=20, value_bytes=8, unique_main=0.1,
                     unique_delta=0.1, threads=(1,), strategy="columns", seed=0, reps=3)
DEFAULT_DELTA_FRAC = 0.01

SMOKE = dict(n_main=10_000, n_delta=100, n_cols=2, threads=(1, 2), reps=1)


def _both(lam: float) -> dict:
    return dict(unique_main=lam, unique_delta=lam)


EXPERIMENTS: dict[str, Callable[[ExperimentSpec], list[ExperimentSpec]]] = {
    "smoke": lambda s: [s],
    "delta-sweep": lambda s: [s.replace(n_delta=max(1, round(f * s.n_main)))
                              for f in (0.005, 0.01, 0.02, 0.04)],
    "width-sweep": lambda s: [s.replace(value_bytes=e) for e in (4, 8, 16)],
    "unique-sweep": lambda s: [s.replace(**_both(lam)) for lam in (0.001, 0.01, 0.1, 1.0)],
    "scaling": lambda s: [s.replace(**_both(lam)) for lam in (0.01, 1.0)],
    "model-check": lambda s: [s.replace(naive=False, **_both(lam)) for lam in (0.01, 1.0)],
}


def expand(name: str, overrides: Optional[dict] = None) -> list[ExperimentSpec]:
    """Specs for a named sweep.  ``overrides`` fix the parameters the sweep
    does not vary; ``delta_frac`` is accepted in place of ``n_delta``."""
    if name not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {name!r}; choose from {sorted(EXPERIMENTS)}")
    kw = dict(SMOKE if name == "smoke" else DESK_DEFAULTS)
    if name == "scaling":
        kw["threads"] = tuple(sorted({1, 2, 4, os.cpu_count() or 1}))
    kw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    frac = kw.pop("delta_frac", None)
    if "n_delta" not in kw:
        kw["n_delta"] = max(1, round((frac or DEFAULT_DELTA_FRAC) * kw["n_main"]))
    base = ExperimentSpec(experiment=name, **kw)
    return EXPERIMENTS[name](base)


def run_all(specs: Iterable[ExperimentSpec], ctx: Optional[BenchContext] = None,
            log: Optional[Callable[[str], None]] = None) -> list[MeasurementRow]:
    ctx = ctx or BenchContext.detect()
    rows = []
    for s in specs:
        rows.extend(run_experiment(s, ctx, log))
    return rows

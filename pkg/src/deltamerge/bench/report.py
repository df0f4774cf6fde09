"""CSV output and a plain-text summary of measurement rows."""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from pathlib import Path
from statistics import median
from typing import IO, Iterable, Optional, Sequence, Union

from .experiments import CSV_COLUMNS, MeasurementRow

TARGET_RATES = {"low update rate": 3_000, "high update rate": 18_000}

_INT = {"seed", "rep", "n_main", "n_delta", "n_cols", "value_bytes", "threads"}
_STR = {"experiment", "strategy"}


def write_csv(rows: Iterable[MeasurementRow], out: Union[str, Path, IO[str]]) -> None:
    if isinstance(out, (str, Path)):
        with open(out, "w", newline="") as f:
            write_csv(rows, f)
        return
    w = csv.DictWriter(out, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v
                    for k, v in r.csv_record().items()})


def _parse(col: str, s: str):
    if col in _STR:
        return s
    if col in _INT:
        return int(s)
    return float(s)


def read_csv(src: Union[str, Path, IO[str]]) -> list[dict]:
    if isinstance(src, (str, Path)):
        with open(src, newline="") as f:
            return read_csv(f)
    r = csv.DictReader(src)
    if tuple(r.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {r.fieldnames}")
    return [{k: _parse(k, v) for k, v in row.items()} for row in r]


def _config_key(r: MeasurementRow) -> tuple:
    return (r.experiment, r.n_main, r.n_delta, r.n_cols, r.value_bytes,
            r.unique_main, r.unique_delta, r.strategy)


def _med(xs: Sequence[float]) -> float:
    xs = [x for x in xs if not math.isnan(x)]
    return median(xs) if xs else float("nan")


def median_rows(rows: Iterable[MeasurementRow]) -> dict[tuple, dict[int, dict]]:
    """config -> threads -> median of the numeric fields over repetitions."""
    groups: dict = defaultdict(lambda: defaultdict(list))
    for r in rows:
        groups[_config_key(r)][r.threads].append(r)
    out: dict = {}
    for key, by_t in groups.items():
        out[key] = {}
        for nt, rs in sorted(by_t.items()):
            out[key][nt] = {
                "t_update_s": _med([r.t_update_s for r in rs]),
                "step1": _med([r.t_step1a_s + r.t_step1b_s for r in rs]),
                "step1a": _med([r.t_step1a_s for r in rs]),
                "step1b": _med([r.t_step1b_s for r in rs]),
                "step2": _med([r.t_step2_s for r in rs]),
                "naive_step2": _med([r.t_naive_step2_s for r in rs]),
                "cpt_total": _med([r.cpt_total for r in rs]),
                "cpt_model": _med([r.cpt_model for r in rs]),
                "cpt_step2": _med([r.cpt_step2 for r in rs]),
                "model_step2": _med([r.model_step_cpt.get("step2", math.nan) for r in rs]),
                "updates_per_s": _med([r.updates_per_s for r in rs]),
                "realized_unique_delta": rs[0].realized_unique_delta,
                "aux_fits": rs[0].aux_fits,
                "match": all(r.outputs_match for r in rs),
                "clock_hz": rs[0].clock_hz,
            }
    return out


def _label(key: tuple) -> str:
    exp, nm, nd, nc, e, lm, ld, strat = key
    return (f"{exp}: N_M={nm:,} N_D={nd:,} N_C={nc} E={e} "
            f"unique={lm:g}/{ld:g} strategy={strat}")


def scaling_table(med: dict) -> str:
    """Serial and parallel cycles/tuple per step with the scaling factor."""
    lines = [f"{'% unique':>9} {'step':>7} {'serial cpt':>11} {'parallel cpt':>13} "
             f"{'N_T':>4} {'scaling':>8}"]
    for key, by_t in med.items():
        if len(by_t) < 2 or 1 not in by_t:
            continue
        nt = max(by_t)
        per = by_t[1]["clock_hz"] / ((key[1] + key[2]) * key[3])
        for step in ("step1", "step2"):
            s = by_t[1][step]
            p = by_t[nt][step]
            scale = s / p if p else float("nan")
            lines.append(f"{100 * key[5]:>8g}% {step:>7} {s * per:>11.2f} "
                         f"{p * per:>13.2f} {nt:>4} {scale:>7.2f}x")
    return "\n".join(lines) if len(lines) > 1 else ""


def summarize(rows: Sequence[MeasurementRow]) -> str:
    if not rows:
        return "no measurements\n"
    med = median_rows(rows)
    out = io.StringIO()
    p = lambda s="": print(s, file=out)
    p("per-configuration medians")
    for key, by_t in med.items():
        p(_label(key))
        for nt, m in by_t.items():
            sp = m["naive_step2"] / m["step2"] if m["step2"] else float("nan")
            err = m["cpt_total"] / m["cpt_model"] if m["cpt_model"] else float("nan")
            err2 = m["cpt_step2"] / m["model_step2"] if m["model_step2"] else float("nan")
            p(f"  N_T={nt:<3} cpt={m['cpt_total']:.2f} model={m['cpt_model']:.2f} "
              f"(measured/model {err:.2f}; step 2 {err2:.2f}) "
              f"naive step 2 speedup={sp:.1f}x updates/s={m['updates_per_s']:,.0f} "
              f"realized delta unique={m['realized_unique_delta']:.4f} "
              f"aux {'in' if m['aux_fits'] else 'out of'} cache"
              f"{'' if m['match'] else '  OUTPUT MISMATCH'}")
    table = scaling_table(med)
    if table:
        p()
        p("parallel scalability (cycles per tuple per column, medians)")
        p(table)
    p()
    p("update rate against targets")
    for key, by_t in med.items():
        best = max(m["updates_per_s"] for m in by_t.values())
        verdict = ", ".join(f"{'meets' if best >= v else 'below'} {k} target ({v:,}/s)"
                            for k, v in TARGET_RATES.items())
        p(f"  {_label(key)}: {best:,.0f} updates/s; {verdict}")
    return out.getvalue()


def report(rows: Sequence[MeasurementRow], out: Optional[Union[str, Path, IO[str]]] = None
           ) -> str:
    """Write the CSV (if ``out`` is given) and return the summary text."""
    if out is not None:
        write_csv(rows, out)
    return summarize(rows)

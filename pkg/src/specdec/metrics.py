"""Block efficiency, the analytic walltime speedup model, and report tables."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Sequence

from .decoding import RunRecords
from .errors import BadParams, DomainError, EmptyRun, ScenarioMismatch

# Measured draft-to-target per-token latency ratios T_q / T_p,
# keyed by (target size, draft size).
LATENCY_PRESETS: dict[tuple[str, str], float] = {
    ("7B", "68M"): 0.063,
    ("7B", "160M"): 0.206,
    ("13B", "68M"): 0.042,
    ("13B", "160M"): 0.137,
}


@dataclass(frozen=True)
class LatencyModel:
    """Per-token draft cost relative to the target.

    The flags record the assumptions the model rests on: per-call latency
    does not depend on the block length, the sequence length, or the batch
    size within the operating range. They are documentation only and never
    enter the arithmetic.
    """

    ratio: float
    invariant_in_gamma: bool = True
    invariant_in_seq_len: bool = True
    invariant_in_batch: bool = True

    def __post_init__(self):
        if not self.ratio > 0:
            raise BadParams(f"latency ratio must be > 0, got {self.ratio}")

    @classmethod
    def preset(cls, target: str, draft: str) -> "LatencyModel":
        try:
            return cls(LATENCY_PRESETS[(target, draft)])
        except KeyError:
            raise BadParams(f"no latency preset for target {target} / draft {draft}") from None


def block_efficiency(records: RunRecords | Iterable[RunRecords]) -> float:
    """Mean tokens produced per block, i.e. mean of accepted_count + 1.

    Given several sessions, blocks are pooled across all of them.
    """
    if isinstance(records, RunRecords):
        records = [records]
    n = 0
    total = 0
    for rec in records:
        n += len(rec.blocks)
        total += sum(b.accepted_count + 1 for b in rec.blocks)
    if n == 0:
        raise EmptyRun("no blocks recorded")
    return total / n


def expected_speedup(tau: float, gamma: int, latency: LatencyModel | float) -> float:
    """tau / (gamma * T_q/T_p + 1)."""
    ratio = latency.ratio if isinstance(latency, LatencyModel) else float(latency)
    if gamma < 1:
        raise DomainError(f"gamma must be >= 1, got {gamma}")
    if not 1.0 <= tau <= gamma + 1:
        raise DomainError(f"block efficiency {tau} outside [1, {gamma + 1}]")
    if not ratio > 0:
        raise DomainError(f"latency ratio must be > 0, got {ratio}")
    return tau / (gamma * ratio + 1.0)


def weight_rows(records: RunRecords) -> list[list]:
    """Weight trajectory rows: block_index, position, w_0..w_{m-1}, accepted_count."""
    return [
        [i, b.position, *b.weight_used, b.accepted_count]
        for i, b in enumerate(records.blocks)
    ]


def weight_csv(records: RunRecords) -> str:
    m = len(records.blocks[0].weight_used) if records.blocks else 0
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["block_index", "position", *[f"w_{i}" for i in range(m)], "accepted_count"])
    writer.writerows(weight_rows(records))
    return buf.getvalue()


@dataclass(frozen=True)
class ComparisonRow:
    scenario: str
    method: str
    block_efficiency: float
    rank: int


def compare_report(reports: Sequence[dict]) -> list[ComparisonRow]:
    """Rank methods per scenario by block efficiency (higher is better).

    Each report is a run summary as written by ``run_experiment``. Equal
    efficiencies share a rank (1, 1, 3, ...) and are listed by method name.
    When several reports carry the same method name, the name is prefixed
    with the report index.
    """
    if not reports:
        raise BadParams("no reports to compare")
    scenario_sets = [frozenset(r["scenario"] for r in rep["runs"]) for rep in reports]
    if any(s != scenario_sets[0] for s in scenario_sets[1:]):
        raise ScenarioMismatch(
            "reports cover different scenarios: " + "; ".join(sorted(map(str, map(sorted, scenario_sets))))
        )
    names: dict[str, int] = {}
    for rep in reports:
        for method in {r["method"] for r in rep["runs"]}:
            names[method] = names.get(method, 0) + 1
    rows: list[ComparisonRow] = []
    for scenario in sorted(scenario_sets[0]):
        entries = []
        for k, rep in enumerate(reports):
            for run in rep["runs"]:
                if run["scenario"] != scenario:
                    continue
                label = run["method"] if names[run["method"]] == 1 else f"{k}:{run['method']}"
                entries.append((label, run["block_efficiency"]))
        entries.sort(key=lambda e: (-e[1], e[0]))
        rank = 0
        prev = None
        for i, (label, be) in enumerate(entries):
            if be != prev:
                rank = i + 1
                prev = be
            rows.append(ComparisonRow(scenario, label, be, rank))
    return rows


def comparison_csv(rows: Sequence[ComparisonRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["scenario", "method", "block_efficiency", "rank"])
    for r in rows:
        writer.writerow([r.scenario, r.method, repr(r.block_efficiency), r.rank])
    return buf.getvalue()


def comparison_table(rows: Sequence[ComparisonRow]) -> str:
    """Scenarios as rows, methods as columns; best marked '*', runner-up '+'."""
    methods = sorted({r.method for r in rows})
    scenarios = sorted({r.scenario for r in rows})
    cell = {(r.scenario, r.method): r for r in rows}
    width = max([len(m) for m in methods] + [8]) + 2
    first = max([len(s) for s in scenarios] + [8]) + 2
    lines = ["scenario".ljust(first) + "".join(m.rjust(width) for m in methods)]
    for s in scenarios:
        parts = [s.ljust(first)]
        for m in methods:
            r = cell.get((s, m))
            if r is None:
                parts.append("-".rjust(width))
                continue
            mark = "*" if r.rank == 1 else "+" if r.rank == 2 else " "
            parts.append(f"{r.block_efficiency:.3f}{mark}".rjust(width))
        lines.append("".join(parts))
    return "\n".join(lines) + "\n"

"""Benchmark suite, grindtime accounting, YAML reports and report diffs.

Grindtime is wall time in nanoseconds per grid cell, per equation, per
right-hand-side evaluation. Initialization and output are outside the timed
region.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from harness import __version__
from harness.scaling import balanced_decomposition
from harness.workload import WorkloadCase, run_case

BYTES_PER_CELL_PER_EQ = 250
BYTES_PER_GB = 10**9
MIN_EDGE = 4
DEFAULT_THRESHOLD = 0.10

REPORT_KEYS = ("system", "mode", "mem_gb_per_rank", "nranks", "tool_version", "invocation", "cases")
CASE_KEYS = ("name", "status", "wall_s", "grind_ns", "cells", "equations", "steps", "rhs_per_step")


class BenchReportError(ValueError):
    pass


class SizingError(ValueError):
    pass


def grindtime(wall_ns: float, cells: int, equations: int, total_rhs_evals: int) -> float:
    for name, value in (("cells", cells), ("equations", equations), ("total_rhs_evals", total_rhs_evals)):
        if value <= 0:
            raise ValueError(f"{name} must be positive, got {value}")
    if wall_ns < 0:
        raise ValueError(f"wall time must be nonnegative, got {wall_ns}")
    # integer denominator: exact for any realistic run size
    return wall_ns / (cells * equations * total_rhs_evals)


def icbrt(value: int) -> int:
    """Largest integer whose cube does not exceed ``value``."""
    if value < 0:
        raise ValueError("negative value")
    root = int(round(value ** (1.0 / 3.0)))
    while root**3 > value:
        root -= 1
    while (root + 1) ** 3 <= value:
        root += 1
    return root


def size_problem(mem_gb_per_rank: float, equations: int,
                 bytes_per_cell_per_eq: int = BYTES_PER_CELL_PER_EQ) -> int:
    """Per-rank cube edge that fits ``mem_gb_per_rank`` decimal gigabytes."""
    if equations < 1 or bytes_per_cell_per_eq <= 0:
        raise SizingError("equations and bytes per cell must be positive")
    cells = math.floor(mem_gb_per_rank * BYTES_PER_GB / (equations * bytes_per_cell_per_eq))
    edge = icbrt(max(cells, 0))
    if edge < MIN_EDGE:
        raise SizingError(
            f"{mem_gb_per_rank} GB/rank holds only a {edge}^3 block for {equations} "
            f"equations; need at least {MIN_EDGE}^3"
        )
    return edge


@dataclass(frozen=True)
class BenchCase:
    name: str
    case: WorkloadCase


BENCH_SUITE = [
    BenchCase("advect-1eq", WorkloadCase(num_equations=1, t_steps=10)),
    BenchCase("advect-4eq", WorkloadCase(num_equations=4, t_steps=10)),
    BenchCase("advect-8eq", WorkloadCase(num_equations=8, t_steps=10)),
    BenchCase("advect-8eq-long", WorkloadCase(num_equations=8, t_steps=20)),
    BenchCase("advect-8eq-caseopt", WorkloadCase(num_equations=8, t_steps=10, case_optimization=True)),
]


@dataclass
class BenchRecord:
    case_name: str
    status: str = "ok"
    wall_s: float | None = None
    grind_ns: float | None = None
    cells: int | None = None
    equations: int | None = None
    steps: int | None = None
    rhs_per_step: int | None = None
    ranks: int = 1
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        out = {
            "name": self.case_name,
            "status": self.status,
            "wall_s": self.wall_s,
            "grind_ns": self.grind_ns,
            "cells": self.cells,
            "equations": self.equations,
            "steps": self.steps,
            "rhs_per_step": self.rhs_per_step,
        }
        if self.error:
            out["error"] = self.error
        return out


@dataclass
class BenchReport:
    system_id: str
    mode: str
    mem_gb_per_rank: float
    nranks: int
    records: list[BenchRecord] = field(default_factory=list)
    tool_version: str = __version__
    invocation: str = ""

    def record(self, name: str) -> BenchRecord | None:
        for rec in self.records:
            if rec.case_name == name:
                return rec
        return None

    @property
    def failed(self) -> list[BenchRecord]:
        return [r for r in self.records if not r.ok]

    def to_dict(self) -> dict:
        return {
            "system": self.system_id,
            "mode": self.mode,
            "mem_gb_per_rank": self.mem_gb_per_rank,
            "nranks": self.nranks,
            "tool_version": self.tool_version,
            "invocation": self.invocation,
            "cases": [rec.to_dict() for rec in self.records],
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, data, source: str = "<report>") -> "BenchReport":
        if not isinstance(data, dict):
            raise BenchReportError(f"{source}: expected a mapping at top level")
        missing = [k for k in REPORT_KEYS if k not in data]
        if missing:
            raise BenchReportError(f"{source}: missing keys {', '.join(missing)}")
        unknown = [k for k in data if k not in REPORT_KEYS]
        if unknown:
            raise BenchReportError(f"{source}: unknown keys {', '.join(map(str, unknown))}")
        nranks = int(data["nranks"])
        records = []
        for i, entry in enumerate(data["cases"] or []):
            if not isinstance(entry, dict) or any(k not in entry for k in CASE_KEYS):
                raise BenchReportError(f"{source}: case #{i} lacks one of {', '.join(CASE_KEYS)}")
            records.append(BenchRecord(
                case_name=str(entry["name"]),
                status=str(entry["status"]),
                wall_s=entry["wall_s"],
                grind_ns=entry["grind_ns"],
                cells=entry["cells"],
                equations=entry["equations"],
                steps=entry["steps"],
                rhs_per_step=entry["rhs_per_step"],
                ranks=nranks,
                error=entry.get("error"),
            ))
        names = [r.case_name for r in records]
        if len(set(names)) != len(names):
            raise BenchReportError(f"{source}: duplicate case names")
        return cls(
            system_id=str(data["system"]),
            mode=str(data["mode"]),
            mem_gb_per_rank=data["mem_gb_per_rank"],
            nranks=nranks,
            records=records,
            tool_version=str(data["tool_version"]),
            invocation=str(data["invocation"]),
        )

    @classmethod
    def from_yaml(cls, text: str, source: str = "<report>") -> "BenchReport":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise BenchReportError(f"{source}: {exc}") from None
        return cls.from_dict(data, source)


def load_report(path) -> BenchReport:
    with open(path, encoding="utf-8") as fh:
        return BenchReport.from_yaml(fh.read(), str(path))


def write_report(report: BenchReport, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report.to_yaml(), encoding="utf-8")
    return path


def sized_case(case: WorkloadCase, nranks: int, mem_gb_per_rank: float,
               bytes_per_cell_per_eq: int = BYTES_PER_CELL_PER_EQ) -> WorkloadCase:
    edge = size_problem(mem_gb_per_rank, case.num_equations, bytes_per_cell_per_eq)
    px, py, pz = balanced_decomposition(nranks)
    return case.replace(m=px * edge, n=py * edge, p=pz * edge, decomposition=(px, py, pz))


def run_benchmarks(suite, system_id: str, nranks: int, mem_gb_per_rank: float, mode: str = "cpu",
                   bytes_per_cell_per_eq: int = BYTES_PER_CELL_PER_EQ, invocation: str = "",
                   output=None, workers: int = 1, echo=None) -> BenchReport:
    """Size, run and time every case strictly one after another."""
    if not suite:
        raise ValueError("benchmark suite is empty")
    report = BenchReport(system_id, mode, mem_gb_per_rank, nranks, invocation=invocation)
    for bench_case in suite:
        try:
            case = sized_case(bench_case.case, nranks, mem_gb_per_rank, bytes_per_cell_per_eq)
            result = run_case(case, nranks, workers=workers)
            rec = BenchRecord(
                case_name=bench_case.name,
                wall_s=result.wall_ns / 1e9,
                grind_ns=grindtime(result.wall_ns, result.cells, result.equations, result.total_rhs_evals),
                cells=result.cells,
                equations=result.equations,
                steps=result.steps,
                rhs_per_step=result.rhs_evals_per_step,
                ranks=nranks,
            )
        except Exception as exc:  # recorded per case; the suite carries on
            rec = BenchRecord(bench_case.name, status="failed", ranks=nranks,
                              error=f"{type(exc).__name__}: {exc}")
        report.records.append(rec)
        if echo is not None:
            if rec.ok:
                echo(f"{rec.case_name:<24} {rec.cells:>10} cells  {rec.wall_s:9.3f} s  {rec.grind_ns:9.3f} ns")
            else:
                echo(f"{rec.case_name:<24} FAILED  {rec.error}")
    if output is not None:
        write_report(report, output)
    return report


@dataclass(frozen=True)
class DiffRow:
    case_name: str
    ref_grind_ns: float
    new_grind_ns: float
    speedup: float
    regression: bool


@dataclass
class DiffTable:
    rows: list[DiffRow] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    extra: list[str] = field(default_factory=list)
    threshold: float = DEFAULT_THRESHOLD

    @property
    def overall_regression(self) -> bool:
        return bool(self.missing) or any(r.regression for r in self.rows)

    def render(self) -> str:
        header = ("Case", "Ref [ns]", "New [ns]", "Speedup", "Status")
        body = [
            (r.case_name, f"{r.ref_grind_ns:.4g}", f"{r.new_grind_ns:.4g}", f"{r.speedup:.2f}",
             "REGRESSION" if r.regression else "ok")
            for r in self.rows
        ]
        body += [(name, "-", "-", "-", "MISSING") for name in self.missing]
        body += [(name, "-", "-", "-", "new") for name in self.extra]
        widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
        lines = []
        for row in [header] + body:
            cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
            lines.append("  ".join(cells).rstrip())
        lines.insert(1, "  ".join("-" * w for w in widths))
        pct = f"{100 * self.threshold:g}%"
        if self.overall_regression:
            slow = sum(r.regression for r in self.rows)
            lines.append(f"FAIL: {slow} case(s) slower than reference by more than {pct}, "
                         f"{len(self.missing)} missing")
        else:
            lines.append(f"PASS: no regressions beyond {pct} across {len(self.rows)} case(s)")
        return "\n".join(lines) + "\n"


def bench_diff(reference: BenchReport, candidate: BenchReport,
               threshold: float = DEFAULT_THRESHOLD) -> DiffTable:
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    table = DiffTable(threshold=threshold)
    for ref in reference.records:
        if not ref.ok:
            continue
        new = candidate.record(ref.case_name)
        if new is None or not new.ok:
            table.missing.append(ref.case_name)
            continue
        table.rows.append(DiffRow(
            case_name=ref.case_name,
            ref_grind_ns=ref.grind_ns,
            new_grind_ns=new.grind_ns,
            speedup=ref.grind_ns / new.grind_ns,
            regression=new.grind_ns > ref.grind_ns * (1 + threshold),
        ))
    table.extra = [r.case_name for r in candidate.records if reference.record(r.case_name) is None]
    return table


@dataclass(frozen=True)
class ReferenceGrindtime:
    hardware: str
    type: str
    usage: str
    grind_ns: float


def parse_reference_grindtimes(text: str) -> list[ReferenceGrindtime]:
    rows = list(csv.DictReader(text.splitlines(), delimiter="\t"))
    if rows and set(rows[0]) != {"hardware", "type", "usage", "grind_ns"}:
        raise ValueError(f"unexpected columns {sorted(rows[0])}")
    return [
        ReferenceGrindtime(r["hardware"], r["type"], r["usage"], float(r["grind_ns"]))
        for r in rows
    ]


def load_reference_grindtimes(path=None) -> list[ReferenceGrindtime]:
    if path is None:
        text = resources.files("harness").joinpath("data/reference_grindtimes.tsv").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    return parse_reference_grindtimes(text)

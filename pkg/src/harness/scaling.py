"""Weak and strong scaling planners and efficiency arithmetic."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction


def factor_triples(nranks: int):
    """All (px, py, pz) with px <= py <= pz and px*py*pz == nranks."""
    px = 1
    while px * px * px <= nranks:
        if nranks % px == 0:
            rest = nranks // px
            py = px
            while py * py <= rest:
                if rest % py == 0:
                    yield px, py, rest // py
                py += 1
        px += 1


def balanced_decomposition(nranks: int) -> tuple[int, int, int]:
    """Most cube-like 3-factor split of ``nranks``.

    Minimizes pz/px, then pz - px, then prefers the largest px. This chain
    reproduces the decompositions of the published Frontier weak-scaling
    runs (e.g. 384 -> 6x8x8, 3072 -> 12x16x16).
    """
    if nranks < 1:
        raise ValueError(f"nranks must be positive, got {nranks}")
    return min(
        factor_triples(nranks),
        key=lambda t: (Fraction(t[2], t[0]), t[2] - t[0], -t[0]),
    )


def format_sig(value: float, digits: int = 3) -> str:
    return f"{value:.{digits}g}"


@dataclass(frozen=True)
class PlanRow:
    nranks: int
    decomposition: tuple[int, int, int]
    discretization: tuple[int, int, int]
    total_cells: int
    cells_per_rank: float
    evenly_divided: bool = True

    def to_dict(self) -> dict:
        return {
            "nranks": self.nranks,
            "decomposition": list(self.decomposition),
            "discretization": list(self.discretization),
            "total_cells": self.total_cells,
            "cells_per_rank": self.cells_per_rank,
            "evenly_divided": self.evenly_divided,
        }


@dataclass
class ScalingPlan:
    kind: str
    rows: list[PlanRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "rows": [row.to_dict() for row in self.rows]}

    def render(self) -> str:
        header = ["# Ranks", "Decomposition", "Discretization", "# Cells [B]"]
        if self.kind == "strong":
            header.append("Cells/rank [M]")
        body = []
        for row in self.rows:
            cols = [
                str(row.nranks),
                " x ".join(map(str, row.decomposition)),
                " x ".join(map(str, row.discretization)),
                format_sig(row.total_cells / 1e9),
            ]
            if self.kind == "strong":
                note = "" if row.evenly_divided else " *"
                cols.append(format_sig(row.cells_per_rank / 1e6) + note)
            body.append(cols)
        widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
        lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in [header] + body]
        if self.kind == "strong" and not all(r.evenly_divided for r in self.rows):
            lines.append("* grid does not split evenly across ranks")
        return "\n".join(lines) + "\n"


def weak_scaling_plan(rank_counts, edge: int = 200) -> ScalingPlan:
    if edge < 1:
        raise ValueError(f"edge must be positive, got {edge}")
    plan = ScalingPlan("weak")
    for nranks in rank_counts:
        px, py, pz = balanced_decomposition(nranks)
        plan.rows.append(PlanRow(
            nranks=nranks,
            decomposition=(px, py, pz),
            discretization=(px * edge, py * edge, pz * edge),
            total_cells=nranks * edge**3,
            cells_per_rank=float(edge**3),
        ))
    return plan


def strong_scaling_plan(base_edge: int = 634, rank_counts=(8, 16, 32, 64, 128)) -> ScalingPlan:
    rank_counts = list(rank_counts)
    if base_edge < 1:
        raise ValueError(f"base_edge must be positive, got {base_edge}")
    if any(b < a for a, b in zip(rank_counts, rank_counts[1:])):
        raise ValueError("rank counts must be nondecreasing")
    total = base_edge**3
    plan = ScalingPlan("strong")
    for nranks in rank_counts:
        decomp = balanced_decomposition(nranks)
        plan.rows.append(PlanRow(
            nranks=nranks,
            decomposition=decomp,
            discretization=(base_edge, base_edge, base_edge),
            total_cells=total,
            cells_per_rank=total / nranks,
            evenly_divided=all(base_edge % p == 0 for p in decomp),
        ))
    return plan


@dataclass(frozen=True)
class EfficiencyRecord:
    base: tuple[int, float]
    limit: tuple[int, float]
    efficiency: float

    @property
    def percent(self) -> int:
        return round(100 * self.efficiency)


def _positive(*values):
    for v in values:
        if not v > 0:
            raise ValueError(f"expected a positive value, got {v!r}")


def weak_efficiency(base: tuple[int, float], limit: tuple[int, float]) -> EfficiencyRecord:
    """Ideal weak scaling keeps grindtime x ranks constant."""
    (ranks_b, grind_b), (ranks_l, grind_l) = base, limit
    _positive(ranks_b, grind_b, ranks_l, grind_l)
    return EfficiencyRecord(tuple(base), tuple(limit), (grind_b * ranks_b) / (grind_l * ranks_l))


def speedup(grind_base: float, grind_n: float) -> float:
    _positive(grind_base, grind_n)
    return grind_base / grind_n

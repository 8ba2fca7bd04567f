"""Golden reference files: serialization, tolerance comparison and updates.

``golden.txt`` holds one variable per line, a name followed by its flattened
values in 17-significant-digit scientific notation::

    q0 1.0000000000000000E+00 2.5000000000000000E-01
    conserved 4.1887902047863905E+00
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

DEFAULT_ATOL = 1e-12
DEFAULT_RTOL = 1e-12


class GoldenFormatError(ValueError):
    def __init__(self, message: str, lineno: int | None = None):
        prefix = f"line {lineno}: " if lineno is not None else ""
        super().__init__(prefix + message)
        self.lineno = lineno


class GoldenFile:
    """Ordered mapping of variable name to a 1-D float64 array."""

    def __init__(self, variables=()):
        self.variables: dict[str, np.ndarray] = {}
        items = variables.items() if isinstance(variables, dict) else variables
        for name, values in items:
            self.add(name, values)

    def add(self, name: str, values) -> None:
        if not name or any(c.isspace() for c in name):
            raise GoldenFormatError(f"invalid variable name {name!r}")
        if name in self.variables:
            raise GoldenFormatError(f"duplicate variable {name!r}")
        arr = np.array(values, dtype=np.float64).ravel()
        if arr.size == 0:
            raise GoldenFormatError(f"variable {name!r} is empty")
        self.variables[name] = arr

    @property
    def names(self) -> list[str]:
        return list(self.variables)

    def __getitem__(self, name):
        return self.variables[name]

    def __contains__(self, name):
        return name in self.variables

    def __len__(self):
        return len(self.variables)

    def __eq__(self, other):
        # bitwise: distinguishes -0.0 from 0.0
        if not isinstance(other, GoldenFile) or self.names != other.names:
            return False
        return all(
            a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.variables.values(), other.variables.values())
        )

    def __repr__(self):
        shapes = ", ".join(f"{k}[{v.size}]" for k, v in self.variables.items())
        return f"GoldenFile({shapes})"


def format_value(value: float) -> str:
    return f"{value:.16E}"


def serialize_line(name: str, values: np.ndarray) -> str:
    if not np.all(np.isfinite(values)):
        raise GoldenFormatError(f"variable {name!r} contains non-finite values")
    return name + " " + " ".join(format_value(v) for v in values.tolist()) + "\n"


def serialize_golden(golden: GoldenFile) -> str:
    return "".join(serialize_line(name, values) for name, values in golden.variables.items())


def parse_golden(text: str) -> GoldenFile:
    golden = GoldenFile()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        name, *tokens = line.split()
        if not tokens:
            raise GoldenFormatError(f"variable {name!r} has no values", lineno)
        try:
            values = [float(tok) for tok in tokens]
        except ValueError as exc:
            raise GoldenFormatError(str(exc), lineno) from None
        if not all(math.isfinite(v) for v in values):
            raise GoldenFormatError(f"variable {name!r} contains non-finite values", lineno)
        if name in golden:
            raise GoldenFormatError(f"duplicate variable {name!r}", lineno)
        golden.add(name, values)
    return golden


@dataclass
class VariableReport:
    name: str
    max_abs_err: float
    max_rel_err: float
    worst_index: int
    passed: bool
    detail: str = ""


@dataclass
class ComparisonReport:
    per_variable: list[VariableReport] = field(default_factory=list)
    missing_in_candidate: list[str] = field(default_factory=list)
    extra_in_candidate: list[str] = field(default_factory=list)

    @property
    def overall_pass(self) -> bool:
        return not self.missing_in_candidate and all(v.passed for v in self.per_variable)

    def failures(self) -> list[str]:
        lines = [f"missing variable {name!r}" for name in self.missing_in_candidate]
        for v in self.per_variable:
            if v.passed:
                continue
            if v.detail:
                lines.append(f"{v.name}: {v.detail}")
            else:
                lines.append(
                    f"{v.name}: max abs err {v.max_abs_err:.3e}, max rel err "
                    f"{v.max_rel_err:.3e} (worst index {v.worst_index})"
                )
        return lines


def compare_variable(name, candidate, reference, atol, rtol) -> VariableReport:
    if candidate.shape != reference.shape:
        return VariableReport(
            name, math.inf, math.inf, -1, False,
            f"length mismatch: candidate {candidate.size} vs reference {reference.size}",
        )
    with np.errstate(all="ignore"):
        abs_err = np.abs(candidate - reference)
        scale = np.abs(reference)
        ok = (abs_err <= atol) | (abs_err <= rtol * scale)
        rel_err = np.where(abs_err == 0, 0.0, abs_err / scale)
    # nan errors count as worst
    worst = int(np.argmax(np.where(np.isnan(abs_err), np.inf, abs_err)))
    return VariableReport(
        name,
        float(np.max(abs_err)),
        float(np.max(rel_err)),
        worst,
        bool(np.all(ok)),
    )


def compare(candidate: GoldenFile, reference: GoldenFile,
            atol: float = DEFAULT_ATOL, rtol: float = DEFAULT_RTOL) -> ComparisonReport:
    """Element passes iff ``|c-r| <= atol`` or ``|c-r| <= rtol*|r|``.

    The relative branch is anchored to the reference value, so swapping the
    arguments can change the outcome.
    """
    if atol < 0 or rtol < 0:
        raise ValueError("tolerances must be nonnegative")
    report = ComparisonReport()
    for name, ref in reference.variables.items():
        if name not in candidate:
            report.missing_in_candidate.append(name)
            continue
        report.per_variable.append(compare_variable(name, candidate[name], ref, atol, rtol))
    report.extra_in_candidate = [n for n in candidate.names if n not in reference]
    return report


def add_new_variables(existing: GoldenFile, fresh: GoldenFile) -> GoldenFile:
    merged = GoldenFile((name, values.copy()) for name, values in existing.variables.items())
    for name, values in fresh.variables.items():
        if name not in merged:
            merged.add(name, values.copy())
    return merged


def add_new_variables_text(existing_text: str, fresh: GoldenFile) -> str:
    """Append fresh-only variables to a golden file without touching its lines."""
    existing = parse_golden(existing_text)
    text = existing_text
    if text and not text.endswith("\n"):
        text += "\n"
    for name, values in fresh.variables.items():
        if name not in existing:
            text += serialize_line(name, values)
    return text


@dataclass
class GoldenMetadata:
    build_config: dict = field(default_factory=dict)
    system_description: str = ""
    hardware_description: str = ""
    creation_timestamp: str = ""

    @classmethod
    def now(cls, **kwargs) -> "GoldenMetadata":
        stamp = datetime.now(timezone.utc).replace(microsecond=0).isoformat()
        return cls(creation_timestamp=stamp, **kwargs)


def _escape(text: str) -> str:
    return str(text).replace("\\", "\\\\").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out = []
    chars = iter(text)
    for c in chars:
        if c == "\\":
            nxt = next(chars, "")
            out.append("\n" if nxt == "n" else nxt)
        else:
            out.append(c)
    return "".join(out)


def write_metadata(meta: GoldenMetadata) -> str:
    lines = [
        f"creation_timestamp: {_escape(meta.creation_timestamp)}",
        f"system_description: {_escape(meta.system_description)}",
        f"hardware_description: {_escape(meta.hardware_description)}",
    ]
    lines += [f"build_config.{key}: {_escape(value)}" for key, value in meta.build_config.items()]
    return "\n".join(lines) + "\n"


def parse_metadata(text: str) -> GoldenMetadata:
    meta = GoldenMetadata()
    # LF only: values may hold other line-break characters
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        key, sep, value = line.partition(": ")
        if not sep:
            key, sep, value = line.partition(":")
        if not sep:
            raise GoldenFormatError(f"expected 'key: value', got {line!r}", lineno)
        value = _unescape(value)
        if key.startswith("build_config."):
            meta.build_config[key[len("build_config."):]] = value
        elif key in ("creation_timestamp", "system_description", "hardware_description"):
            setattr(meta, key, value)
        else:
            raise GoldenFormatError(f"unknown metadata key {key!r}", lineno)
    return meta

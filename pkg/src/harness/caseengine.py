"""Case composition on a push/pop parameter stack, plus content-hashed case ids.

A generator pushes frames onto a :class:`CaseStack`, calls :func:`define_case`
for every leaf, and pops what it pushed::

    def alter_velocity(stack):
        stack.push("diagonal", {"velocity_x": 1.0, "velocity_y": 1.0})
        yield define_case(stack, "cfl=0.2", {"cfl": 0.2})
        stack.pop()
"""

from __future__ import annotations

from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Iterable, Mapping

TRACE_SEP = " -> "

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1


class CaseDefinitionError(ValueError):
    pass


class SuiteDefinitionError(ValueError):
    pass


def _check_value(key, value):
    if not isinstance(key, str):
        raise CaseDefinitionError(f"case parameter key {key!r} is not a string")
    if not isinstance(value, (bool, int, float, str)):
        raise CaseDefinitionError(
            f"case parameter {key!r} has unsupported type {type(value).__name__}"
        )


class CaseStack:
    def __init__(self):
        self.frames: list[tuple[str, dict]] = []

    def __len__(self):
        return len(self.frames)

    def __eq__(self, other):
        return isinstance(other, CaseStack) and self.snapshot() == other.snapshot()

    def push(self, trace_fragment: str, params: Mapping | None = None) -> None:
        params = dict(params or {})
        for key, value in params.items():
            _check_value(key, value)
        self.frames.append((trace_fragment, params))

    def pop(self) -> None:
        if not self.frames:
            raise IndexError("pop from an empty case stack")
        self.frames.pop()

    def flatten(self) -> dict:
        out: dict = {}
        for _, params in self.frames:
            out.update(params)
        return out

    def trace(self) -> str:
        return TRACE_SEP.join(fragment for fragment, _ in self.frames)

    def snapshot(self) -> str:
        """Canonical text of the stack, used to check push/pop neutrality."""
        return "\n".join(f"{frag}|{canonical_params(params)}" for frag, params in self.frames)


def _canonical_value(value) -> str:
    if isinstance(value, bool):
        return "T" if value else "F"
    if isinstance(value, float):
        # repr is the shortest string that round-trips
        return repr(value)
    return str(value)


def canonical_params(params: Mapping) -> str:
    return "\n".join(f"{key}={_canonical_value(params[key])}" for key in sorted(params))


def fnv1a_64(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & _MASK64
    return h


def case_uuid(params: Mapping) -> str:
    digest = fnv1a_64(canonical_params(params).encode("utf-8"))
    return f"{digest & 0xFFFFFFFF:08x}"


@dataclass(frozen=True)
class CaseDefinition:
    params: Mapping = field(default_factory=dict)
    trace: str = ""

    def __post_init__(self):
        for key, value in self.params.items():
            _check_value(key, value)
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))

    @property
    def uuid(self) -> str:
        return case_uuid(self.params)

    def to_dict(self) -> dict:
        return dict(self.params)


def define_case(stack: CaseStack, trace_fragment: str, extra: Mapping | None = None) -> CaseDefinition:
    params = stack.flatten()
    params.update(extra or {})
    trace = stack.trace()
    trace = f"{trace}{TRACE_SEP}{trace_fragment}" if trace else trace_fragment
    return CaseDefinition(params, trace)


Generator = Callable[[CaseStack], Iterable[CaseDefinition]]


def generate_suite(registry: Iterable[Generator], echo: Callable[[str], None] | None = None) -> list[CaseDefinition]:
    """Run each generator on a fresh stack and collect its cases in order."""
    cases: list[CaseDefinition] = []
    seen: dict[str, CaseDefinition] = {}
    for generator in registry:
        stack = CaseStack()
        produced = list(generator(stack))
        if len(stack):
            name = getattr(generator, "__name__", repr(generator))
            raise SuiteDefinitionError(f"generator {name} left {len(stack)} frame(s) on the stack")
        for case in produced:
            other = seen.get(case.uuid)
            if other is not None:
                raise SuiteDefinitionError(
                    f"duplicate case uuid {case.uuid}: {other.trace!r} and {case.trace!r}"
                )
            seen[case.uuid] = case
            cases.append(case)
            if echo is not None:
                echo(f"{case.uuid}  {case.trace}")
    return cases

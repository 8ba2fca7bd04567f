"""Parse the system modules file and resolve per-system environments.

The modules file is line oriented::

    d      NCSA Delta
    d-all python/3.11.6
    d-cpu gcc/11.4.0 openmpi
    d-gpu nvhpc/24.1 cuda/12.3.0 openmpi/4.1.5+cuda cmake
    d-gpu CC=nvc CXX=nvc++ FC=nvfortran

A bare ``<id>`` line declares a system and its display name. ``<id>-all``,
``<id>-cpu`` and ``<id>-gpu`` lines append items to the matching bucket.
Items are module names or ``KEY=VALUE`` assignments.
"""

from __future__ import annotations

import shlex
from dataclasses import dataclass

MODES = ("cpu", "gpu")
BUCKETS = ("all",) + MODES
_MODE_ALIASES = {"c": "cpu", "cpu": "cpu", "g": "gpu", "gpu": "gpu"}


class ModulesParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class UnknownSystemError(LookupError):
    pass


@dataclass(frozen=True)
class SystemEntry:
    id: str
    display_name: str
    all_items: tuple[str, ...] = ()
    cpu_items: tuple[str, ...] = ()
    gpu_items: tuple[str, ...] = ()

    def items(self, bucket: str) -> tuple[str, ...]:
        return getattr(self, f"{bucket}_items")


@dataclass(frozen=True)
class EnvironmentSpec:
    system_id: str
    mode: str
    modules: tuple[str, ...] = ()
    env: tuple[tuple[str, str], ...] = ()


def is_assignment(token: str) -> bool:
    return "=" in token


def split_assignment(token: str) -> tuple[str, str]:
    # first "=" only: values such as compiler flags may contain "="
    key, _, value = token.partition("=")
    return key, value


def _check_item(token: str, lineno: int) -> None:
    if is_assignment(token) and not split_assignment(token)[0]:
        raise ModulesParseError(lineno, f"assignment {token!r} has an empty key")


def parse_modules_file(text: str) -> list[SystemEntry]:
    order: list[str] = []
    names: dict[str, str] = {}
    buckets: dict[str, dict[str, list[str]]] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        head, *tail = line.split(None, 1)
        rest = tail[0].strip() if tail else ""

        if "-" not in head:
            if head in names:
                raise ModulesParseError(lineno, f"duplicate system id {head!r}")
            names[head] = rest
            order.append(head)
            buckets[head] = {b: [] for b in BUCKETS}
            continue

        sys_id, _, suffix = head.rpartition("-")
        if suffix not in BUCKETS:
            raise ModulesParseError(
                lineno, f"unknown suffix {suffix!r} in {head!r} (expected one of {', '.join(BUCKETS)})"
            )
        if sys_id not in names:
            raise ModulesParseError(lineno, f"items for {sys_id!r} appear before its declaration")
        tokens = rest.split()
        for token in tokens:
            _check_item(token, lineno)
        buckets[sys_id][suffix].extend(tokens)

    return [
        SystemEntry(
            id=sys_id,
            display_name=names[sys_id],
            all_items=tuple(buckets[sys_id]["all"]),
            cpu_items=tuple(buckets[sys_id]["cpu"]),
            gpu_items=tuple(buckets[sys_id]["gpu"]),
        )
        for sys_id in order
    ]


def serialize_modules(entries: list[SystemEntry]) -> str:
    """Inverse of :func:`parse_modules_file`; empty buckets are omitted."""
    lines = []
    for entry in entries:
        lines.append(f"{entry.id} {entry.display_name}".rstrip())
        for bucket in BUCKETS:
            items = entry.items(bucket)
            if items:
                lines.append(f"{entry.id}-{bucket} " + " ".join(items))
    return "".join(line + "\n" for line in lines)


def normalize_mode(mode: str) -> str:
    try:
        return _MODE_ALIASES[mode.lower()]
    except KeyError:
        raise ValueError(f"unknown mode {mode!r}: expected cpu or gpu") from None


def find_system(entries: list[SystemEntry], system_id: str) -> SystemEntry:
    for entry in entries:
        if entry.id == system_id:
            return entry
    available = ", ".join(e.id for e in entries) or "(none)"
    raise UnknownSystemError(f"unknown system {system_id!r}; available: {available}")


def resolve_environment(entries: list[SystemEntry], system_id: str, mode: str) -> EnvironmentSpec:
    mode = normalize_mode(mode)
    entry = find_system(entries, system_id)

    modules: list[str] = []
    env: dict[str, str] = {}
    for token in entry.all_items + entry.items(mode):
        if is_assignment(token):
            key, value = split_assignment(token)
            env[key] = value
        else:
            modules.append(token)
    return EnvironmentSpec(system_id, mode, tuple(modules), tuple(env.items()))


def emit_load_script(spec: EnvironmentSpec) -> str:
    lines = ["module purge"]
    lines += [f"module load {shlex.quote(m)}" for m in spec.modules]
    lines += [f"export {key}={shlex.quote(value)}" for key, value in spec.env]
    return "\n".join(lines) + "\n"


def load_modules_file(path) -> list[SystemEntry]:
    with open(path, encoding="utf-8") as fh:
        return parse_modules_file(fh.read())

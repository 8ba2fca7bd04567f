"""Job-script templates with ``${name}`` substitution and scheduler headers.

Template files look like::

    #! scheduler=slurm
    #! setup-begin
    export MPICH_GPU_SUPPORT_ENABLED=1
    ulimit -s unlimited
    #! setup-end
    srun -n ${total_ranks} ${command}

Directive lines emitted per dialect (optional lines only when the field is
set, GPU lines only when ``gpu_per_node > 0``):

========  ====================================================================
slurm     ``#SBATCH --job-name=J``, ``--nodes=N``, ``--ntasks-per-node=R``,
          ``--time=HH:MM:SS``, ``--partition=Q``, ``--account=A``,
          ``--gpus-per-node=G``
pbs       ``#PBS -N J``, ``-l select=N:ncpus=R:mpiprocs=R[:ngpus=G]``,
          ``-l walltime=HH:MM:SS``, ``-q Q``, ``-A A``
lsf       ``#BSUB -J J``, ``-nnodes N``, ``-W HH:MM`` (rounded up),
          ``-q Q``, ``-P A``, ``-gpu num=G``
flux      ``# flux: --job-name=J``, ``-N N``, ``-n T``, ``-t M`` (minutes,
          rounded up), ``-q Q``, ``--bank=A``, ``--gpus-per-node=G``
none      no directives
========  ====================================================================
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, fields
from pathlib import Path

SCHEDULERS = ("slurm", "pbs", "lsf", "flux", "none")
SENTINELS = {"slurm": "#SBATCH", "pbs": "#PBS", "lsf": "#BSUB", "flux": "# flux:"}
SHEBANG = "#!/usr/bin/env bash"

_WALLTIME_RE = re.compile(r"^(\d+):(\d{2}):(\d{2})$")
_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")


class TemplateConfigError(ValueError):
    pass


class TemplateSyntaxError(ValueError):
    def __init__(self, message: str, offset: int, template: str = ""):
        where = f" in template {template!r}" if template else ""
        super().__init__(f"{message} at offset {offset}{where}")
        self.offset = offset


class TemplateRenderError(KeyError):
    def __init__(self, placeholder: str, template: str):
        super().__init__(f"unresolved placeholder ${{{placeholder}}} in template {template!r}")
        self.placeholder = placeholder
        self.template = template

    def __str__(self):
        return self.args[0]


def parse_walltime(walltime: str) -> int:
    """Return the walltime in seconds."""
    match = _WALLTIME_RE.match(walltime)
    if not match:
        raise TemplateConfigError(f"walltime {walltime!r} is not HH:MM:SS")
    hours, minutes, seconds = (int(g) for g in match.groups())
    if minutes >= 60 or seconds >= 60:
        raise TemplateConfigError(f"walltime {walltime!r} has minutes or seconds out of range")
    return hours * 3600 + minutes * 60 + seconds


@dataclass(frozen=True)
class JobParams:
    job_name: str
    nodes: int
    ranks_per_node: int
    total_ranks: int
    walltime: str
    command: str
    partition_or_queue: str | None = None
    account: str | None = None
    gpu_per_node: int = 0
    extra_env: tuple[tuple[str, str], ...] = ()
    profile_hook: str | None = None

    def __post_init__(self):
        if self.nodes < 1 or self.ranks_per_node < 1:
            raise TemplateConfigError("nodes and ranks_per_node must be positive")
        if self.total_ranks != self.nodes * self.ranks_per_node:
            raise TemplateConfigError(
                f"total_ranks={self.total_ranks} != nodes*ranks_per_node="
                f"{self.nodes * self.ranks_per_node}"
            )
        if self.gpu_per_node < 0:
            raise TemplateConfigError("gpu_per_node must be nonnegative")
        parse_walltime(self.walltime)

    @classmethod
    def for_ranks(cls, nranks: int, ranks_per_node: int | None = None, **kwargs) -> "JobParams":
        rpn = ranks_per_node or nranks
        nodes = -(-nranks // rpn)
        if nodes * rpn != nranks:
            raise TemplateConfigError(f"{nranks} ranks do not fill nodes of {rpn} ranks")
        return cls(nodes=nodes, ranks_per_node=rpn, total_ranks=nranks, **kwargs)

    def values(self) -> dict[str, str]:
        """Placeholder values: built-in fields first, then extra_env."""
        out = {}
        for f in fields(self):
            if f.name == "extra_env":
                continue
            value = getattr(self, f.name)
            out[f.name] = "" if value is None else str(value)
        if self.profile_hook:
            out["command"] = f"{self.profile_hook} {self.command}"
        for key, value in self.extra_env:
            out.setdefault(key, value)
        return out


PARAM_FIELDS = frozenset(f.name for f in fields(JobParams) if f.name != "extra_env")


@dataclass(frozen=True)
class Template:
    name: str
    scheduler: str
    body: str
    setup_lines: str = ""

    def __post_init__(self):
        if self.scheduler not in SCHEDULERS:
            raise TemplateConfigError(
                f"template {self.name!r}: unsupported scheduler {self.scheduler!r}"
            )


def _tokenize(text: str, template: str = "") -> list[tuple[bool, str]]:
    """Split text into (is_placeholder, payload) chunks."""
    chunks = []
    pos = 0
    while True:
        start = text.find("${", pos)
        if start < 0:
            chunks.append((False, text[pos:]))
            return chunks
        end = text.find("}", start + 2)
        if end < 0:
            raise TemplateSyntaxError("unclosed '${'", start, template)
        name = text[start + 2:end]
        if not _NAME_RE.fullmatch(name):
            raise TemplateSyntaxError(f"invalid placeholder name {name!r}", start, template)
        chunks.append((False, text[pos:start]))
        chunks.append((True, name))
        pos = end + 1


def placeholders(text: str, template: str = "") -> list[str]:
    seen = []
    for is_name, payload in _tokenize(text, template):
        if is_name and payload not in seen:
            seen.append(payload)
    return seen


def substitute(text: str, values: dict[str, str], template: str = "") -> str:
    out = []
    for is_name, payload in _tokenize(text, template):
        if not is_name:
            out.append(payload)
        elif payload in values:
            out.append(values[payload])
        else:
            raise TemplateRenderError(payload, template)
    return "".join(out)


def _minutes_up(seconds: int) -> int:
    return -(-seconds // 60)


def scheduler_header(scheduler: str, params: JobParams) -> list[str]:
    if scheduler not in SCHEDULERS:
        raise TemplateConfigError(f"unsupported scheduler {scheduler!r}")
    p = params
    queue, account, gpus = p.partition_or_queue, p.account, p.gpu_per_node
    seconds = parse_walltime(p.walltime)

    if scheduler == "none":
        return []
    if scheduler == "slurm":
        lines = [
            f"--job-name={p.job_name}",
            f"--nodes={p.nodes}",
            f"--ntasks-per-node={p.ranks_per_node}",
            f"--time={p.walltime}",
        ]
        if queue:
            lines.append(f"--partition={queue}")
        if account:
            lines.append(f"--account={account}")
        if gpus:
            lines.append(f"--gpus-per-node={gpus}")
    elif scheduler == "pbs":
        select = f"select={p.nodes}:ncpus={p.ranks_per_node}:mpiprocs={p.ranks_per_node}"
        if gpus:
            select += f":ngpus={gpus}"
        lines = [f"-N {p.job_name}", f"-l {select}", f"-l walltime={p.walltime}"]
        if queue:
            lines.append(f"-q {queue}")
        if account:
            lines.append(f"-A {account}")
    elif scheduler == "lsf":
        minutes = _minutes_up(seconds)
        lines = [f"-J {p.job_name}", f"-nnodes {p.nodes}", f"-W {minutes // 60:02d}:{minutes % 60:02d}"]
        if queue:
            lines.append(f"-q {queue}")
        if account:
            lines.append(f"-P {account}")
        if gpus:
            lines.append(f"-gpu num={gpus}")
    else:  # flux
        lines = [
            f"--job-name={p.job_name}",
            f"-N {p.nodes}",
            f"-n {p.total_ranks}",
            f"-t {_minutes_up(seconds)}m",
        ]
        if queue:
            lines.append(f"-q {queue}")
        if account:
            lines.append(f"--bank={account}")
        if gpus:
            lines.append(f"--gpus-per-node={gpus}")

    sentinel = SENTINELS[scheduler]
    return [f"{sentinel} {line}" for line in lines]


def _join_block(text: str) -> str:
    if not text:
        return ""
    return text if text.endswith("\n") else text + "\n"


def render_job_script(template: Template, params: JobParams, mode: str = "batch") -> str:
    if mode not in ("batch", "interactive"):
        raise TemplateConfigError(f"unknown mode {mode!r}: expected batch or interactive")
    values = params.values()
    setup = substitute(template.setup_lines, values, template.name)
    body = substitute(template.body, values, template.name)

    # setup and body are shared verbatim between the two modes
    rest = "\n" + _join_block(setup) + _join_block(body)
    head = SHEBANG + "\n"
    if mode == "batch":
        head += "".join(line + "\n" for line in scheduler_header(template.scheduler, params))
    return head + rest


def validate_template(template: Template) -> list[str]:
    """Names referenced by the template that no JobParams field provides.

    Such names can still be satisfied at render time through ``extra_env``.
    """
    names = placeholders(template.setup_lines, template.name)
    names += [n for n in placeholders(template.body, template.name) if n not in names]
    return [n for n in names if n not in PARAM_FIELDS]


def parse_template(name: str, text: str) -> Template:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#!"):
        raise TemplateConfigError(f"template {name!r}: missing '#! scheduler=<dialect>' header")
    meta = lines[0][2:].strip()
    key, _, scheduler = meta.partition("=")
    if key.strip() != "scheduler":
        raise TemplateConfigError(f"template {name!r}: bad metadata header {lines[0]!r}")

    setup: list[str] = []
    body: list[str] = []
    in_setup = False
    for lineno, line in enumerate(lines[1:], start=2):
        marker = line.strip()
        if marker == "#! setup-begin":
            if in_setup:
                raise TemplateConfigError(f"template {name!r} line {lineno}: nested setup-begin")
            in_setup = True
        elif marker == "#! setup-end":
            if not in_setup:
                raise TemplateConfigError(f"template {name!r} line {lineno}: setup-end without begin")
            in_setup = False
        elif in_setup:
            setup.append(line)
        else:
            body.append(line)
    if in_setup:
        raise TemplateConfigError(f"template {name!r}: unterminated setup block")

    return Template(
        name=name,
        scheduler=scheduler.strip(),
        body="".join(line + "\n" for line in body),
        setup_lines="".join(line + "\n" for line in setup),
    )


def load_template(templates_dir, system: str) -> Template:
    path = Path(templates_dir) / f"{system}.tmpl"
    if not path.is_file():
        available = sorted(p.stem for p in Path(templates_dir).glob("*.tmpl"))
        raise TemplateConfigError(
            f"no template for system {system!r} in {templates_dir}; available: {', '.join(available) or '(none)'}"
        )
    return parse_template(system, path.read_text(encoding="utf-8"))


def write_job_script(run_dir, text: str) -> Path:
    path = Path(run_dir) / "job.sh"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    os.chmod(path, 0o755)
    return path

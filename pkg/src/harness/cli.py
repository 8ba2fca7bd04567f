"""Command-line entry point.

    harness <tool> [tool-flags] [-- -c <system> -n <nranks> (--gpu|--no-gpu)]

Exit codes: 0 success, 1 test or benchmark regression, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import shlex
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from harness import __version__, bench, goldens, scaling, sysconfig, templates, workload
from harness.suite import default_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
TOOLS = ("load", "build", "test", "bench", "bench_diff", "run", "scaling")
TABLE4_RANKS = "128,384,1024,3072,8192,24576,65536"

RUN_CONTEXT_HELP = """\
run-context options (after a lone '--'):
  -c, --system SYSTEM   system identifier / template name
  -n, --nranks N        number of (simulated) MPI ranks
  --gpu [acc|mp]        GPU mode label
  --no-gpu              CPU mode label (default)
"""


class UsageError(Exception):
    pass


def config_root() -> Path:
    env = os.environ.get("HARNESS_CONFIG_DIR")
    if env:
        return Path(env)
    local = Path("config")
    if (local / "modules").is_file():
        return local
    return Path(__file__).parent / "config"


def _context_parser():
    p = argparse.ArgumentParser(prog="harness ... --", add_help=False)
    p.add_argument("-c", "--system")
    p.add_argument("-n", "--nranks", type=int)
    p.add_argument("--gpu", nargs="?", const="acc", choices=("acc", "mp"))
    p.add_argument("--no-gpu", action="store_true")
    return p


def parse_context(argv):
    try:
        ctx, unknown = _context_parser().parse_known_args(argv)
    except SystemExit:
        raise UsageError(f"bad run-context options: {' '.join(argv)}") from None
    if unknown:
        raise UsageError(f"unrecognized run-context options: {' '.join(unknown)}")
    if ctx.gpu and ctx.no_gpu:
        raise UsageError("--gpu and --no-gpu are mutually exclusive")
    if ctx.nranks is not None and ctx.nranks < 1:
        raise UsageError("-n must be positive")
    return ctx


def _mode(ctx, args=None) -> str:
    gpu = ctx.gpu or (getattr(args, "gpu", None) if args is not None else None)
    return "gpu" if gpu else "cpu"


def _parser(tool, description):
    return argparse.ArgumentParser(
        prog=f"harness {tool}",
        description=description,
        epilog=RUN_CONTEXT_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )


def _echo(*args):
    print(*args, flush=True)


def _err(message):
    print(f"harness: error: {message}", file=sys.stderr)


# load ---------------------------------------------------------------------

def cmd_load(argv, ctx):
    p = _parser("load", "Emit a sourceable script that loads a system's modules and environment.")
    p.add_argument("-s", "--system", help="system identifier from the modules file")
    p.add_argument("-m", "--mode", help="cpu|gpu (also c|g)")
    p.add_argument("--modules-file", help="modules file (default: <config>/modules)")
    p.add_argument("-o", "--output", help="write the script here instead of stdout")
    args = p.parse_args(argv)

    system = args.system or ctx.system
    if not system:
        raise UsageError("no system given; use -s <id> or '-- -c <id>'")
    mode = args.mode or _mode(ctx)
    entries = sysconfig.load_modules_file(args.modules_file or config_root() / "modules")
    script = sysconfig.emit_load_script(sysconfig.resolve_environment(entries, system, mode))
    if args.output:
        Path(args.output).write_text(script, encoding="utf-8")
    else:
        sys.stdout.write(script)
    return EXIT_OK


# build --------------------------------------------------------------------

def _validate_templates(root: Path) -> list[str]:
    names = []
    for path in sorted((root / "templates").glob("*.tmpl")):
        tmpl = templates.parse_template(path.stem, path.read_text(encoding="utf-8"))
        unknown = templates.validate_template(tmpl)
        if unknown:
            raise templates.TemplateConfigError(
                f"template {path.stem!r} references unknown placeholders: {', '.join(unknown)}"
            )
        names.append(path.stem)
    return names


def cmd_build(argv, ctx):
    p = _parser("build", "Validate configuration, resolve workload kernels and write a build manifest.")
    p.add_argument("--gpu", nargs="?", const="acc", choices=("acc", "mp"), help="GPU build label")
    p.add_argument("--no-gpu", action="store_true", help="CPU build (default)")
    p.add_argument("--case-optimization", action="store_true", help="select specialized kernels")
    p.add_argument("-i", "--input", help="additional case file to validate")
    p.add_argument("-o", "--output", default="build/manifest.yml", help="manifest path")
    args = p.parse_args(argv)

    root = config_root()
    entries = sysconfig.load_modules_file(root / "modules")
    template_names = _validate_templates(root)

    kernels = {}
    for bc in bench.BENCH_SUITE:
        case = bc.case.replace(case_optimization=bc.case.case_optimization or args.case_optimization)
        kernels[bc.name] = workload.select_kernel(case)
    for case_def in default_suite():
        workload.WorkloadCase.from_mapping(case_def.params)
    if args.input:
        case = _load_case(args.input)
        if args.case_optimization:
            case = case.replace(case_optimization=True)
        kernels[str(args.input)] = workload.select_kernel(case)

    gpu = args.gpu or ctx.gpu
    manifest = {
        "tool_version": __version__,
        "created": datetime.now(timezone.utc).replace(microsecond=0).isoformat(),
        "mode": "gpu" if gpu else "cpu",
        "gpu_backend": gpu or "none",
        "case_optimization": args.case_optimization,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "platform": platform.platform(),
        "config_dir": str(root),
        "systems": [e.id for e in entries],
        "templates": template_names,
        "kernels": kernels,
    }
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(yaml.safe_dump(manifest, sort_keys=False), encoding="utf-8")
    _echo(f"validated {len(entries)} system(s), {len(template_names)} template(s)")
    for name, kernel in kernels.items():
        _echo(f"  {name:<24} {kernel}")
    _echo(f"wrote {out}")
    return EXIT_OK


# test ---------------------------------------------------------------------

def _load_case(path) -> workload.WorkloadCase:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise workload.WorkloadConfigError(f"{path}: case file must hold a JSON object")
    return workload.WorkloadCase.from_mapping(data)


def _metadata(case: workload.WorkloadCase, system: str | None) -> goldens.GoldenMetadata:
    uname = platform.uname()
    return goldens.GoldenMetadata.now(
        build_config={
            "tool_version": __version__,
            "kernel": workload.select_kernel(case),
            "case_optimization": "on" if case.case_optimization else "off",
            "decomposition": "x".join(map(str, case.decomposition)),
            "numpy": np.__version__,
            "system": system or "default",
        },
        system_description=f"{uname.system} {uname.release} {uname.version}; Python {platform.python_version()}",
        hardware_description=f"{uname.machine} {uname.processor or ''} ({os.cpu_count()} logical CPUs)".replace("  ", " "),
    )


def cmd_test(argv, ctx):
    p = _parser("test", "Run the regression suite against golden files.")
    p.add_argument("-o", "--only", metavar="UUID", action="append", help="restrict to case UUID (repeatable)")
    p.add_argument("-l", "--list", action="store_true", help="list 'uuid  trace' and exit")
    p.add_argument("--generate", action="store_true", help="write golden.txt and golden-metadata.txt")
    p.add_argument("--add-new-variables", action="store_true", help="append newly tracked variables to goldens")
    p.add_argument("--force", action="store_true", help="allow --generate to overwrite goldens")
    p.add_argument("--dir", default="tests", help="golden directory root (default: tests)")
    p.add_argument("--atol", type=float, default=goldens.DEFAULT_ATOL, help="absolute tolerance")
    p.add_argument("--rtol", type=float, default=goldens.DEFAULT_RTOL, help="relative tolerance")
    p.add_argument("--workers", type=int, default=1, help="threads for rank workers")
    args = p.parse_args(argv)
    if args.generate and args.add_new_variables:
        raise UsageError("--generate and --add-new-variables are mutually exclusive")

    suite = default_suite()
    if args.list:
        for case in suite:
            _echo(f"{case.uuid}  {case.trace}")
        return EXIT_OK

    if args.only:
        by_uuid = {c.uuid: c for c in suite}
        unknown = [u for u in args.only if u not in by_uuid]
        if unknown:
            _err(f"unknown case uuid(s): {', '.join(unknown)}")
            print("available: " + " ".join(by_uuid), file=sys.stderr)
            return EXIT_USAGE
        suite = [c for c in suite if c.uuid in args.only]

    root = Path(args.dir)
    if args.generate and not args.force:
        existing = [c.uuid for c in suite if (root / c.uuid / "golden.txt").exists()]
        if existing:
            raise UsageError(
                f"refusing to overwrite {len(existing)} existing golden file(s) "
                f"(e.g. {root / existing[0] / 'golden.txt'}); pass --force"
            )
    if args.add_new_variables:
        absent = [c.uuid for c in suite if not (root / c.uuid / "golden.txt").exists()]
        if absent:
            raise UsageError(f"no golden file for {', '.join(absent)}; run --generate first")

    failed = 0
    for case_def in suite:
        case = workload.WorkloadCase.from_mapping(case_def.params)
        if ctx.nranks:
            case = case.with_ranks(ctx.nranks)
        case_dir = root / case_def.uuid
        golden_path = case_dir / "golden.txt"

        if not args.generate and not args.add_new_variables and not golden_path.exists():
            failed += 1
            _echo(f"FAIL  {case_def.uuid}  {case_def.trace}")
            _echo(f"      no golden file at {golden_path}; run with --generate")
            continue

        result = workload.run_case(case, workers=args.workers)

        if args.generate:
            case_dir.mkdir(parents=True, exist_ok=True)
            (case_dir / "case.json").write_text(
                json.dumps(case_def.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
            golden_path.write_text(goldens.serialize_golden(result.samples), encoding="utf-8")
            (case_dir / "golden-metadata.txt").write_text(
                goldens.write_metadata(_metadata(case, ctx.system)), encoding="utf-8")
            _echo(f"GEN   {case_def.uuid}  {case_def.trace}")
        elif args.add_new_variables:
            old = golden_path.read_text(encoding="utf-8")
            new = goldens.add_new_variables_text(old, result.samples)
            golden_path.write_text(new, encoding="utf-8")
            added = len(goldens.parse_golden(new)) - len(goldens.parse_golden(old))
            _echo(f"ADD   {case_def.uuid}  {case_def.trace}  (+{added} variable(s))")
        else:
            reference = goldens.parse_golden(golden_path.read_text(encoding="utf-8"))
            report = goldens.compare(result.samples, reference, args.atol, args.rtol)
            if report.overall_pass:
                _echo(f"PASS  {case_def.uuid}  {case_def.trace}")
            else:
                failed += 1
                _echo(f"FAIL  {case_def.uuid}  {case_def.trace}")
                for line in report.failures():
                    _echo(f"      {line}")

    if not (args.generate or args.add_new_variables):
        _echo(f"{len(suite) - failed} passed, {failed} failed")
    return EXIT_FAIL if failed else EXIT_OK


# bench --------------------------------------------------------------------

def _check_system(system: str):
    root = config_root()
    if (root / "templates" / f"{system}.tmpl").is_file():
        return
    entries = sysconfig.load_modules_file(root / "modules")
    sysconfig.find_system(entries, system)


def cmd_bench(argv, ctx, raw_argv):
    p = _parser("bench", "Run the benchmark suite and write a YAML summary.")
    p.add_argument("--mem", type=float, required=True, metavar="GB", help="problem size per rank in GB")
    p.add_argument("-o", "--output", default="bench.yml", help="output YAML (default: bench.yml)")
    p.add_argument("--bytes-per-cell", type=int, default=bench.BYTES_PER_CELL_PER_EQ,
                   help="memory per cell per equation used for sizing")
    p.add_argument("--workers", type=int, default=1, help="threads for rank workers")
    args = p.parse_args(argv)

    system = ctx.system or "default"
    _check_system(system)
    nranks = ctx.nranks or 1
    report = bench.run_benchmarks(
        bench.BENCH_SUITE, system, nranks, args.mem, mode=_mode(ctx),
        bytes_per_cell_per_eq=args.bytes_per_cell,
        invocation="harness " + shlex.join(raw_argv),
        output=args.output, workers=args.workers, echo=_echo,
    )
    _echo(f"wrote {args.output}")
    return EXIT_FAIL if report.failed else EXIT_OK


def cmd_bench_diff(argv, ctx):
    p = _parser("bench_diff", "Compare two benchmark reports by grindtime.")
    p.add_argument("reference", help="reference report YAML")
    p.add_argument("candidate", help="candidate report YAML")
    p.add_argument("--threshold", type=float, default=bench.DEFAULT_THRESHOLD,
                   help="allowed fractional grindtime increase (default: 0.10)")
    p.add_argument("-o", "--output", help="also write the table as YAML")
    args = p.parse_args(argv)

    table = bench.bench_diff(bench.load_report(args.reference), bench.load_report(args.candidate),
                             args.threshold)
    sys.stdout.write(table.render())
    if args.output:
        data = {
            "threshold": table.threshold,
            "overall_regression": table.overall_regression,
            "rows": [vars(r) for r in table.rows],
            "missing": table.missing,
            "extra": table.extra,
        }
        Path(args.output).write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    return EXIT_FAIL if table.overall_regression else EXIT_OK


# run ----------------------------------------------------------------------

def cmd_run(argv, ctx):
    p = _parser("run", "Run a user-defined case file.")
    p.add_argument("case", help="case JSON file")
    p.add_argument("--run-dir", help="output directory (default: the case file's directory)")
    p.add_argument("--mode", choices=("batch", "interactive"), default="interactive",
                   help="job script flavour when a system is given")
    p.add_argument("--walltime", default="00:30:00", help="job walltime HH:MM:SS")
    p.add_argument("--ranks-per-node", type=int, help="ranks per node in the job script")
    p.add_argument("--profile", help="profiler command prefixed to the executable")
    p.add_argument("--dry-run", action="store_true", help="write job.sh but do not run")
    p.add_argument("--workers", type=int, default=1, help="threads for rank workers")
    args = p.parse_args(argv)

    case_path = Path(args.case).resolve()
    case = _load_case(case_path)
    if ctx.nranks:
        case = case.with_ranks(ctx.nranks)
    run_dir = Path(args.run_dir) if args.run_dir else case_path.parent
    run_dir.mkdir(parents=True, exist_ok=True)

    if ctx.system:
        tmpl = templates.load_template(config_root() / "templates", ctx.system)
        command = f"{shlex.quote(sys.executable)} -m harness run {shlex.quote(str(case_path))} -- -n {case.nranks}"
        params = templates.JobParams.for_ranks(
            case.nranks, args.ranks_per_node,
            job_name=case_path.stem, walltime=args.walltime, command=command,
            gpu_per_node=(args.ranks_per_node or case.nranks) if ctx.gpu else 0,
            profile_hook=args.profile,
        )
        script = templates.write_job_script(run_dir, templates.render_job_script(tmpl, params, args.mode))
        _echo(f"wrote {script}")
    if args.dry_run:
        return EXIT_OK

    result = workload.run_case(case, workers=args.workers)
    grind = bench.grindtime(result.wall_ns, result.cells, result.equations, result.total_rhs_evals) \
        if result.total_rhs_evals else None
    (run_dir / "output.txt").write_text(goldens.serialize_golden(result.samples), encoding="utf-8")
    summary = result.summary()
    summary["grind_ns"] = grind
    (run_dir / "run.yml").write_text(yaml.safe_dump(summary, sort_keys=False), encoding="utf-8")
    _echo(f"cells {result.cells}  equations {result.equations}  steps {result.steps}  "
          f"ranks {result.nranks}  kernel {result.kernel}")
    _echo(f"wall {result.wall_ns / 1e9:.3f} s  grindtime "
          + (f"{grind:.3f} ns" if grind is not None else "n/a (no steps)"))
    _echo(f"wrote {run_dir / 'output.txt'} and {run_dir / 'run.yml'}")
    return EXIT_OK


# scaling ------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("rank counts must be positive")
    return values


def _write_yaml(path, data):
    Path(path).write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")


def cmd_scaling(argv, ctx):
    p = _parser("scaling", "Plan weak/strong scaling studies and compute efficiencies.")
    sub = p.add_subparsers(dest="kind", required=True)
    weak = sub.add_parser("weak", help="weak-scaling plan with cubic per-rank blocks")
    weak.add_argument("--ranks", type=_int_list, default=_int_list(TABLE4_RANKS), help="comma-separated rank counts")
    weak.add_argument("--edge", type=int, default=200, help="per-rank cube edge (default: 200)")
    weak.add_argument("-o", "--output", help="also write the plan as YAML")
    strong = sub.add_parser("strong", help="strong-scaling plan at a fixed grid")
    strong.add_argument("--base-edge", type=int, default=634, help="global cube edge (default: 634)")
    strong.add_argument("--ranks", type=_int_list, default=_int_list("8,16,32,64,128,256,512"),
                        help="comma-separated rank counts, nondecreasing")
    strong.add_argument("-o", "--output", help="also write the plan as YAML")
    eff = sub.add_parser("efficiency", help="weak efficiency and speedup between two bench reports")
    eff.add_argument("base", help="report at the base rank count")
    eff.add_argument("limit", help="report at the larger rank count")
    eff.add_argument("-o", "--output", help="also write the results as YAML")
    args = p.parse_args(argv)

    if args.kind in ("weak", "strong"):
        if args.kind == "weak":
            plan = scaling.weak_scaling_plan(args.ranks, args.edge)
        else:
            plan = scaling.strong_scaling_plan(args.base_edge, args.ranks)
        sys.stdout.write(plan.render())
        if args.output:
            _write_yaml(args.output, plan.to_dict())
        return EXIT_OK

    base, limit = bench.load_report(args.base), bench.load_report(args.limit)
    header = ("Case", "Base ranks", "Base [ns]", "Limit ranks", "Limit [ns]", "Weak eff.", "Speedup")
    rows, data = [], []
    for rec in base.records:
        other = limit.record(rec.case_name)
        if not rec.ok or other is None or not other.ok:
            continue
        eff_rec = scaling.weak_efficiency((base.nranks, rec.grind_ns), (limit.nranks, other.grind_ns))
        s = scaling.speedup(rec.grind_ns, other.grind_ns)
        rows.append((rec.case_name, str(base.nranks), f"{rec.grind_ns:.4g}", str(limit.nranks),
                     f"{other.grind_ns:.4g}", f"{eff_rec.percent}%", f"{s:.2f}"))
        data.append({"case": rec.case_name, "base": [base.nranks, rec.grind_ns],
                     "limit": [limit.nranks, other.grind_ns],
                     "efficiency": eff_rec.efficiency, "speedup": s})
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    for r in [header] + rows:
        _echo("  ".join([r[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(r[1:], widths[1:])]))
    if args.output:
        _write_yaml(args.output, {"results": data})
    return EXIT_OK


# dispatch -----------------------------------------------------------------

USAGE = """\
usage: harness <tool> [tool-flags] [-- -c <system> -n <nranks> (--gpu|--no-gpu)]

tools:
  load        emit a script that loads modules and environment
  build       validate configuration and write a build manifest
  test        run the regression test suite
  bench       run the benchmark suite
  bench_diff  compare benchmark results
  run         run a user-defined case file
  scaling     plan scaling studies and compute efficiencies

'harness <tool> --help' lists each tool's options.
"""


def dispatch(argv) -> int:
    argv = list(argv)
    if not argv:
        sys.stderr.write(USAGE)
        return EXIT_USAGE
    if argv[0] in ("-h", "--help"):
        sys.stdout.write(USAGE)
        return EXIT_OK
    if argv[0] == "--version":
        _echo(__version__)
        return EXIT_OK
    tool, rest = argv[0], argv[1:]
    if tool not in TOOLS:
        sys.stderr.write(USAGE)
        _err(f"unknown tool {tool!r}")
        return EXIT_USAGE

    if "--" in rest:
        split = rest.index("--")
        tool_argv, context_argv = rest[:split], rest[split + 1:]
    else:
        tool_argv, context_argv = rest, []

    try:
        ctx = parse_context(context_argv)
        if tool == "load":
            return cmd_load(tool_argv, ctx)
        if tool == "build":
            return cmd_build(tool_argv, ctx)
        if tool == "test":
            return cmd_test(tool_argv, ctx)
        if tool == "bench":
            return cmd_bench(tool_argv, ctx, argv)
        if tool == "bench_diff":
            return cmd_bench_diff(tool_argv, ctx)
        if tool == "run":
            return cmd_run(tool_argv, ctx)
        return cmd_scaling(tool_argv, ctx)
    except SystemExit as exc:  # argparse: --help exits 0, bad flags exit 2
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        _err(str(exc))
        return EXIT_USAGE
    except BrokenPipeError:
        raise
    except (ValueError, LookupError, OSError) as exc:
        _err(str(exc))
        return EXIT_USAGE


def main(argv=None) -> int:
    try:
        return dispatch(sys.argv[1:] if argv is None else argv)
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

import json
import os
import stat
from pathlib import Path

import pytest
import yaml

from harness.bench import BenchRecord, BenchReport, write_report
from harness.caseengine import case_uuid
from harness.cli import TOOLS, dispatch, main
from harness.suite import default_suite

SUITE = default_suite()
FIRST = SUITE[0].uuid


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("HARNESS_CONFIG_DIR", raising=False)
    return tmp_path


def write_bench(path, grinds):
    recs = [BenchRecord(k, wall_s=0.1, grind_ns=v, cells=64, equations=8, steps=10, rhs_per_step=3)
            for k, v in grinds.items()]
    write_report(BenchReport("default", "cpu", 0.05, 8, recs), path)


# dispatch

@pytest.mark.parametrize("tool", TOOLS)
def test_help_exits_zero(tool, capsys):
    assert dispatch([tool, "--help"]) == 0
    assert f"harness {tool}" in capsys.readouterr().out


def test_help_lists_parsed_flags(capsys):
    dispatch(["test", "--help"])
    out = capsys.readouterr().out
    for flag in ("--only", "--generate", "--add-new-variables", "--force", "--list", "-c, --system"):
        assert flag in out


def test_no_arguments_is_usage_error(capsys):
    assert dispatch([]) == 2
    assert "usage" in capsys.readouterr().err
    assert main([]) == 2


def test_unknown_tool(capsys):
    assert dispatch(["frobnicate"]) == 2
    assert "unknown tool" in capsys.readouterr().err


def test_top_level_help():
    assert dispatch(["--help"]) == 0


def test_bad_run_context():
    assert dispatch(["scaling", "weak", "--", "--bogus"]) == 2
    assert dispatch(["scaling", "weak", "--", "--gpu", "--no-gpu"]) == 2
    assert dispatch(["scaling", "weak", "--", "-n", "0"]) == 2


# bench_diff

def test_bench_diff_regression_exit_code(workdir, capsys):
    write_bench("ref.yml", {"a": 1.0, "b": 2.0})
    write_bench("new.yml", {"a": 1.2, "b": 2.0})
    assert dispatch(["bench_diff", "ref.yml", "new.yml"]) == 1
    out = capsys.readouterr().out
    assert "REGRESSION" in out and "FAIL" in out
    assert dispatch(["bench_diff", "ref.yml", "ref.yml", "-o", "d.yml"]) == 0
    data = yaml.safe_load(Path("d.yml").read_text())
    assert [r["speedup"] for r in data["rows"]] == [1.0, 1.0]
    assert data["overall_regression"] is False


def test_bench_diff_threshold_flag(workdir):
    write_bench("ref.yml", {"a": 1.0})
    write_bench("new.yml", {"a": 1.2})
    assert dispatch(["bench_diff", "ref.yml", "new.yml", "--threshold", "0.25"]) == 0


def test_bench_diff_bad_input(workdir):
    Path("bad.yml").write_text("system: x\n")
    write_bench("ref.yml", {"a": 1.0})
    assert dispatch(["bench_diff", "ref.yml", "bad.yml"]) == 2
    assert dispatch(["bench_diff", "ref.yml", "missing.yml"]) == 2


# test

def test_generate_then_test_then_tamper(workdir, capsys):
    assert dispatch(["test", "--generate", "-o", FIRST, "-o", SUITE[1].uuid]) == 0
    case_dir = workdir / "tests" / FIRST
    for name in ("case.json", "golden.txt", "golden-metadata.txt"):
        assert (case_dir / name).is_file()
    # case.json holds the bare parameters: hashes back to its uuid and runs as-is
    assert case_uuid(json.loads((case_dir / "case.json").read_text())) == FIRST
    assert dispatch(["run", str(case_dir / "case.json"), "--run-dir", "r"]) == 0
    capsys.readouterr()

    assert dispatch(["test", "-o", FIRST]) == 0
    out = capsys.readouterr().out
    assert f"PASS  {FIRST}  {SUITE[0].trace}" in out
    assert "1 passed, 0 failed" in out

    golden = case_dir / "golden.txt"
    lines = golden.read_text().splitlines()
    name, first, *rest = lines[0].split()
    lines[0] = " ".join([name, f"{float(first) + 1e-6:.16E}", *rest])
    golden.write_text("\n".join(lines) + "\n")
    assert dispatch(["test", "-o", FIRST, "-o", SUITE[1].uuid]) == 1
    out = capsys.readouterr().out
    assert f"FAIL  {FIRST}" in out and f"PASS  {SUITE[1].uuid}" in out
    assert "1 passed, 1 failed" in out


def test_missing_golden_fails(workdir, capsys):
    assert dispatch(["test", "-o", FIRST]) == 1
    assert "--generate" in capsys.readouterr().out


def test_unknown_uuid(workdir, capsys):
    assert dispatch(["test", "-o", "deadbeef"]) == 2
    err = capsys.readouterr().err
    assert "deadbeef" in err and FIRST in err


def test_generate_requires_force(workdir):
    assert dispatch(["test", "--generate", "-o", FIRST]) == 0
    golden = workdir / "tests" / FIRST / "golden.txt"
    before = golden.read_bytes()
    assert dispatch(["test", "--generate", "-o", FIRST]) == 2
    assert dispatch(["test", "--generate", "--force", "-o", FIRST]) == 0
    assert golden.read_bytes() == before


def test_add_new_variables(workdir, capsys):
    assert dispatch(["test", "--generate", "-o", FIRST]) == 0
    golden = workdir / "tests" / FIRST / "golden.txt"
    lines = golden.read_text().splitlines()
    kept = [l for l in lines if not l.startswith("conserved ")]
    golden.write_text("\n".join(kept) + "\n")
    assert dispatch(["test", "--add-new-variables", "-o", FIRST]) == 0
    assert "+1 variable" in capsys.readouterr().out
    text = golden.read_text()
    assert text.startswith("\n".join(kept) + "\n")
    assert text.splitlines()[-1].startswith("conserved ")
    assert dispatch(["test", "--add-new-variables", "-o", FIRST]) == 0
    assert golden.read_text() == text
    assert dispatch(["test", "-o", FIRST]) == 0


def test_add_new_variables_needs_golden(workdir):
    assert dispatch(["test", "--add-new-variables", "-o", FIRST]) == 2


def test_list(workdir, capsys):
    assert dispatch(["test", "--list"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines == [f"{c.uuid}  {c.trace}" for c in SUITE]


def test_custom_golden_dir_and_ranks(workdir):
    assert dispatch(["test", "--generate", "--dir", "g", "-o", FIRST]) == 0
    assert (workdir / "g" / FIRST / "golden.txt").is_file()
    assert dispatch(["test", "--dir", "g", "-o", FIRST, "--", "-n", "8"]) == 0


# load / build

def test_load_emits_script(workdir, capsys):
    assert dispatch(["load", "-s", "d", "-m", "g"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("module purge\n")
    assert "module load" in out
    assert dispatch(["load", "--", "-c", "default"]) == 0


def test_load_errors(workdir):
    assert dispatch(["load"]) == 2
    assert dispatch(["load", "-s", "nosuchsystem"]) == 2
    assert dispatch(["load", "-s", "d", "-m", "tpu"]) == 2


def test_build_manifest(workdir, capsys):
    assert dispatch(["build", "--case-optimization", "-o", "m.yml"]) == 0
    manifest = yaml.safe_load(Path("m.yml").read_text())
    assert manifest["case_optimization"] is True
    assert set(manifest["templates"]) >= {"default", "f"}
    assert all(k.startswith("specialized") for k in manifest["kernels"].values())
    assert dispatch(["build"]) == 0
    plain = yaml.safe_load(Path("build/manifest.yml").read_text())
    assert plain["kernels"]["advect-8eq"] == "generic"
    assert plain["mode"] == "cpu"


def test_config_dir_override(workdir, monkeypatch, capsys):
    cfg = workdir / "cfg"
    (cfg / "templates").mkdir(parents=True)
    (cfg / "modules").write_text("z Zed\nz-all foo/1.0\n")
    monkeypatch.setenv("HARNESS_CONFIG_DIR", str(cfg))
    assert dispatch(["load", "-s", "z"]) == 0
    assert "module load foo/1.0" in capsys.readouterr().out
    assert dispatch(["load", "-s", "d"]) == 2


def test_bad_template_fails_build(workdir, monkeypatch):
    cfg = workdir / "cfg"
    (cfg / "templates").mkdir(parents=True)
    (cfg / "modules").write_text("z Zed\n")
    (cfg / "templates" / "z.tmpl").write_text("#! scheduler=slurm\nsrun ${nodez}\n")
    monkeypatch.setenv("HARNESS_CONFIG_DIR", str(cfg))
    assert dispatch(["build"]) == 2


# bench

def test_bench_writes_report(workdir):
    assert dispatch(["bench", "--mem", "0.002", "-o", "b.yml", "--", "-c", "default", "-n", "2", "--no-gpu"]) == 0
    data = yaml.safe_load(Path("b.yml").read_text())
    assert data["system"] == "default" and data["nranks"] == 2 and data["mode"] == "cpu"
    assert len(data["cases"]) == 5
    assert all(c["status"] == "ok" for c in data["cases"])
    assert "bench --mem 0.002" in data["invocation"]


def test_bench_errors(workdir):
    assert dispatch(["bench"]) == 2
    assert dispatch(["bench", "--mem", "0.002", "--", "-c", "nosuchsystem"]) == 2
    # too small for any case: every record fails
    assert dispatch(["bench", "--mem", "0.00001", "-o", "b.yml"]) == 1
    assert all(c["status"] == "failed" for c in yaml.safe_load(Path("b.yml").read_text())["cases"])


# run

def test_run_case_file(workdir, capsys):
    Path("case.json").write_text(json.dumps({"m": 8, "n": 8, "p": 8, "num_equations": 2, "t_steps": 2}))
    assert dispatch(["run", "case.json", "--run-dir", "out", "--", "-n", "8"]) == 0
    summary = yaml.safe_load((workdir / "out" / "run.yml").read_text())
    assert summary["nranks"] == 8 and summary["total_rhs_evals"] == 6
    assert summary["grind_ns"] > 0
    assert (workdir / "out" / "output.txt").read_text().startswith("q0 ")


def test_run_writes_job_script(workdir, capsys):
    Path("case.json").write_text(json.dumps({"m": 8, "n": 8, "p": 8, "nranks": 8}))
    argv = ["run", "case.json", "--mode", "batch", "--ranks-per-node", "4", "--dry-run",
            "--profile", "nsys profile", "--", "-c", "f", "--gpu"]
    assert dispatch(argv) == 0
    job = workdir / "job.sh"
    assert stat.S_IMODE(os.stat(job).st_mode) == 0o755
    text = job.read_text()
    assert text.startswith("#!/usr/bin/env bash\n#SBATCH")
    assert "#SBATCH --nodes=2" in text and "#SBATCH --gpus-per-node=4" in text
    assert "nsys profile " in text
    assert not (workdir / "run.yml").exists()


def test_run_errors(workdir):
    assert dispatch(["run", "nothere.json"]) == 2
    Path("bad.json").write_text(json.dumps({"m": 8, "bogus": 1}))
    assert dispatch(["run", "bad.json"]) == 2
    Path("case.json").write_text(json.dumps({"m": 8, "n": 8, "p": 8}))
    assert dispatch(["run", "case.json", "--dry-run", "--", "-c", "nosuch"]) == 2


# scaling

def test_scaling_weak_default_table(workdir, capsys):
    assert dispatch(["scaling", "weak", "-o", "w.yml"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 8
    assert lines[-1].split()[-1] == "524"
    data = yaml.safe_load(Path("w.yml").read_text())
    assert data["rows"][1]["decomposition"] == [6, 8, 8]


def test_scaling_strong(workdir, capsys):
    assert dispatch(["scaling", "strong", "--ranks", "8", "-o", "s.yml"]) == 0
    assert capsys.readouterr().out.splitlines()[1].endswith("31.9")
    assert yaml.safe_load(Path("s.yml").read_text())["rows"][0]["cells_per_rank"] == 634**3 / 8
    assert dispatch(["scaling", "strong", "--ranks", "16,8"]) == 2
    assert dispatch(["scaling", "strong", "--ranks", "x"]) == 2


def test_scaling_efficiency(workdir, capsys):
    write_report(BenchReport("s", "gpu", 1, 64, [BenchRecord("std", wall_s=1, grind_ns=0.5, cells=1,
                                                             equations=8, steps=1, rhs_per_step=3)]), "base.yml")
    write_report(BenchReport("s", "gpu", 1, 32768, [BenchRecord("std", wall_s=1, grind_ns=9.865e-4, cells=1,
                                                                equations=8, steps=1, rhs_per_step=3)]), "lim.yml")
    assert dispatch(["scaling", "efficiency", "base.yml", "lim.yml", "-o", "e.yml"]) == 0
    assert "99%" in capsys.readouterr().out
    (res,) = yaml.safe_load(Path("e.yml").read_text())["results"]
    assert res["efficiency"] == pytest.approx(0.98993, abs=1e-5)

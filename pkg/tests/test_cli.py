"""Command line behavior: exit codes, outputs, cache interplay.

Most tests drive main() in process for speed; the reproducibility check
goes through the installed entry point because byte-identical output is
a promise about the whole pipe, not the Python API.
"""

import csv
import io
import json
import subprocess
import sys

import pytest

from mcas.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_TIMEOUT,
    TABLE1_ROWS,
    CliError,
    _parse_problem_spec,
    main,
)
from mcas.solver import load_policy


@pytest.fixture()
def cache(tmp_path, monkeypatch):
    cache_dir = tmp_path / "cache"
    monkeypatch.setenv("MCAS_CACHE_DIR", str(cache_dir))
    return cache_dir


def run_cli(*argv):
    return main(list(argv))


# ---------------------------------------------------------------------------
# problem spec parsing
# ---------------------------------------------------------------------------

def test_problem_spec_grammar():
    spec = _parse_problem_spec("meet-3x3:2:AG,UI,WP")
    assert (spec.name, spec.num_agents) == ("meet-3x3", 2)
    assert spec.qualifiers == frozenset({"AG", "UI", "WP"})
    assert _parse_problem_spec("dec-tiger").num_agents == 2
    with pytest.raises(CliError):
        _parse_problem_spec("a:b:c:d")
    with pytest.raises(CliError):
        _parse_problem_spec("dec-tiger:two")
    with pytest.raises(CliError):
        _parse_problem_spec(":2")


# ---------------------------------------------------------------------------
# solve
# ---------------------------------------------------------------------------

def test_solve_writes_a_loadable_policy(tmp_path, capsys):
    out = tmp_path / "view0.alpha"
    code = run_cli(
        "solve", "--model", "dec-tiger:2", "--agent-view", "0",
        "--precision", "1e-2", "--out", str(out),
    )
    assert code == EXIT_OK
    stdout = capsys.readouterr().out
    assert f"to {out}" in stdout and "vectors" in stdout
    policy = load_policy(out)
    assert len(policy) >= 1 and policy.num_states == 2


def test_solve_mmdp_takes_the_exact_route(tmp_path, capsys):
    out = tmp_path / "mmdp.alpha"
    code = run_cli("solve", "--model", "broadcast:2", "--mmdp", "--out", str(out))
    assert code == EXIT_OK
    policy = load_policy(out)
    assert policy.num_states == 4


def test_solve_accepts_model_files(tmp_path, capsys):
    out = tmp_path / "joint.alpha"
    code = run_cli(
        "solve", "--model", "models/dec-tiger-n2.model",
        "--precision", "1e-2", "--out", str(out),
    )
    assert code == EXIT_OK
    assert load_policy(out).num_states == 2


def test_solve_rejects_bad_targets(tmp_path, capsys):
    out = str(tmp_path / "x.alpha")
    assert run_cli(
        "solve", "--model", "dec-tiger:2", "--agent-view", "7", "--out", out
    ) == EXIT_CONFIG
    assert run_cli("solve", "--model", "no-such:2", "--out", out) == EXIT_CONFIG
    assert run_cli("solve", "--model", "dec-tiger:9", "--out", out) == EXIT_CONFIG
    assert "mcas:" in capsys.readouterr().err


def test_solve_strict_reports_time_budget_hits(tmp_path, capsys):
    out = tmp_path / "rushed.alpha"
    code = run_cli(
        "solve", "--model", "dec-tiger:2", "--agent-view", "0",
        "--max-time", "1e-9", "--strict", "--out", str(out),
    )
    assert code == EXIT_TIMEOUT
    assert "budget" in capsys.readouterr().err
    assert out.exists()  # the loose policy is still written


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def test_run_mmdp_prints_csv(cache, capsys):
    code = run_cli(
        "run", "--problem", "dec-tiger", "--method", "mmdp",
        "--runs", "2", "--steps", "5",
    )
    assert code == EXIT_OK
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert len(rows) == 1
    assert rows[0]["method"] == "mmdp"
    assert float(rows[0]["mean"]) == pytest.approx(200.0, abs=1e-6)


def test_run_writes_csv_and_prints_the_table(cache, tmp_path, capsys):
    out = tmp_path / "res.csv"
    code = run_cli(
        "run", "--problem", "dec-tiger", "--method", "mcas",
        "--runs", "4", "--steps", "4", "--precision", "1e-2",
        "--out", str(out),
    )
    assert code == EXIT_OK
    stdout = capsys.readouterr().out
    assert f"wrote {out}" in stdout
    assert "max|B|" in stdout  # aligned table went to stdout
    rows = list(csv.DictReader(out.open()))
    assert rows[0]["method"] == "mcas" and rows[0]["n_runs"] == "4"
    assert (cache / "index.json").exists()


def test_run_rejects_conflicting_flags(cache, capsys):
    base = ["run", "--problem", "dec-tiger", "--runs", "2", "--steps", "2"]
    assert run_cli(*base, "--method", "mpomdp", "--message-mode", "alpha") == EXIT_CONFIG
    assert run_cli(*base, "--method", "mcas", "--message-mode", "alpha") == EXIT_CONFIG
    assert run_cli(*base, "--method", "mmdp", "--qualifiers", "UI") == EXIT_CONFIG
    assert run_cli(*base, "--method", "mmdp", "--agents", "9") == EXIT_CONFIG


def test_run_strict_flags_timed_out_solves(cache, capsys):
    code = run_cli(
        "run", "--problem", "dec-tiger", "--method", "mpomdp",
        "--runs", "2", "--steps", "2", "--max-time", "1e-9", "--strict",
    )
    assert code == EXIT_TIMEOUT


def test_stale_cache_is_refused_then_tolerated(cache, tmp_path, capsys):
    args = (
        "run", "--problem", "dec-tiger", "--method", "mpomdp",
        "--runs", "2", "--steps", "2", "--precision", "1e-2",
    )
    assert run_cli(*args) == EXIT_OK
    index_path = cache / "index.json"
    index = json.loads(index_path.read_text())
    for entry in index.values():
        entry["solver"] = "prehistoric"
    index_path.write_text(json.dumps(index))

    assert run_cli(*args) == EXIT_CONFIG
    assert "allow_stale" in capsys.readouterr().err
    assert run_cli(*args, "--allow-stale") == EXIT_OK


# ---------------------------------------------------------------------------
# table1
# ---------------------------------------------------------------------------

def test_table1_covers_the_reported_rows():
    names = [name for name, _, _ in TABLE1_ROWS]
    assert names.count("dec-tiger") == 3
    assert ("meet-3x3", 2, ("AG", "UI", "WP")) in TABLE1_ROWS
    assert ("broadcast", 3, ("DP", "WP")) in TABLE1_ROWS


def test_table1_only_filter(cache, tmp_path, capsys):
    out = tmp_path / "t1.csv"
    code = run_cli(
        "table1", "--only", "broadcast", "--runs", "2", "--steps", "2",
        "--precision", "1e-2", "--out", str(out),
    )
    assert code == EXIT_OK
    rows = list(csv.DictReader(out.open()))
    expected = sum(1 for name, _, _ in TABLE1_ROWS if name == "broadcast") * 7
    assert len(rows) == expected
    assert {r["problem"] for r in rows} == {"broadcast"}
    assert run_cli("table1", "--only", "nonesuch", "--runs", "2") == EXIT_CONFIG


# ---------------------------------------------------------------------------
# reproducibility through the installed entry point
# ---------------------------------------------------------------------------

def test_identical_invocations_write_identical_bytes(cache, tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        proc = subprocess.run(
            [
                sys.executable, "-m", "mcas.cli",
                "run", "--problem", "dec-tiger", "--method", "mcas",
                "--runs", "4", "--steps", "4", "--jobs", "2",
                "--precision", "1e-2", "--out", str(out),
            ],
            capture_output=True,
            text=True,
            env={"MCAS_CACHE_DIR": str(cache), "PATH": "/usr/bin:/bin"},
        )
        assert proc.returncode == EXIT_OK, proc.stderr
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]

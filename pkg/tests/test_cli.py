import filecmp
import json
import os
import subprocess
import sys

import pytest

from pathvisc import cli

CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def config(name):
    return os.path.join(CONFIGS, f"{name}.toml")


def write(tmp_path, text, name="run.toml"):
    f = tmp_path / name
    f.write_text(text)
    return str(f)


BASE = """
[problem]
T = 0.5
[problem.H]
family = "x_independent"
[problem.F]
family = "zero"
[problem.path]
source = "formula"
formula = "t"
samples = 20
[problem.u0]
kind = "quadratic"
A = -1.0
[numerics]
box = [[-2.0, 2.0]]
nodes = 41
dt = {dt}
"""


def test_verify_passes(tmp_path, capsys):
    code = cli.main(["verify", "--config", config("verify_quadratic"), "--out", str(tmp_path)])
    assert code == cli.EXIT_OK
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["passed"]
    names = [c["name"] for c in manifest["checks"]]
    assert any("bump" in n for n in names)
    assert "FAIL" not in capsys.readouterr().out


def test_missing_key_is_named(tmp_path, capsys):
    text = BASE.format(dt=0.01).replace('family = "zero"\n', "")
    code = cli.main(["solve", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG
    assert "problem.F.family" in capsys.readouterr().err


@pytest.mark.parametrize(
    "old, new, key",
    [
        ("nodes = 41", "nodes = 2", "numerics.nodes"),
        ("box = [[-2.0, 2.0]]", "box = [[2.0, -2.0]]", "numerics.box[0]"),
        ('source = "formula"', 'source = "radio"', "problem.path.source"),
        ("T = 0.5", "T = -1.0", "problem.T"),
    ],
)
def test_bad_values_are_named(tmp_path, capsys, old, new, key):
    text = BASE.format(dt=0.01).replace(old, new)
    code = cli.main(["solve", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG
    assert key in capsys.readouterr().err


def test_missing_file(tmp_path, capsys):
    assert cli.main(["lift", "--config", str(tmp_path / "nope.toml")]) == cli.EXIT_CONFIG
    assert "does not exist" in capsys.readouterr().err


def test_step_restriction_abort(tmp_path, capsys):
    code = cli.main(["solve", "--config", write(tmp_path, BASE.format(dt=0.4).replace('"zero"', '"heat"\nnu = 0.2')), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_ABORT
    assert "required dt <=" in capsys.readouterr().err


def test_run_is_deterministic(tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        proc = subprocess.run(
            [sys.executable, "-m", "pathvisc", "run", "--config", config("hopf_lax"), "--seed", "7", "--out", str(out)],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        runs.append(out)
    files = sorted(os.listdir(runs[0]))
    assert "manifest.json" in files
    match, mismatch, errors = filecmp.cmpfiles(runs[0], runs[1], files, shallow=False)
    assert not mismatch and not errors


def test_brownian_seed_override(tmp_path):
    paths = {}
    for seed in (1, 1, 2):
        out = tmp_path / f"s{seed}_{len(paths)}"
        assert cli.main(["lift", "--config", config("brownian_2d"), "--seed", str(seed), "--out", str(out)]) == 0
        paths.setdefault(seed, []).append((out / "path.csv").read_bytes())
    assert paths[1][0] == paths[1][1]
    assert paths[1][0] != paths[2][0]

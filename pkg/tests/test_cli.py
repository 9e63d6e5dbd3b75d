import csv
import io
import json

import pytest

from eagleson import cli
from eagleson.cli import COLUMNS, ConfigError, main, parse_config

MAP_CONFIG = """
format_version = 1
kind = "{kind}"
seed = 7
count = 400
n_list = [16, 64]

[model]
type = "expanding-map"
slopes = [2, 3]

[tilt]
type = "cosine"
amplitude = 0.5
"""

IID_CONFIG = """
format_version = 1
kind = "eagleson-convergence"
count = 100
n_list = [8]

[model]
type = "iid"
support = [-1.0, 1.0]
probs = [0.5, 0.5]
"""


def write(tmp_path, text, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_well_formed_config_resolves():
    cfg = parse_config(MAP_CONFIG.format(kind="quant-bound"))
    assert cfg.kind == "quant-bound" and cfg.n_list == [16, 64] and cfg.tilt.validated
    assert cfg.observable.trig is not None


def test_errors_are_collected():
    text = MAP_CONFIG.format(kind="nope").replace("count = 400", "count = -5")
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    joined = "\n".join(info.value.errors)
    assert "count" in joined and "eagleson-convergence" in joined and "wip" in joined


def test_parse_error_has_position():
    with pytest.raises(ConfigError) as info:
        parse_config('format_version = 1\nkind = "x\n')
    assert "line 2" in info.value.errors[0]


def test_format_version_required():
    with pytest.raises(ConfigError) as info:
        parse_config(MAP_CONFIG.format(kind="wip").replace("format_version = 1", ""))
    assert any("format_version" in e for e in info.value.errors)


def test_n_list_must_increase():
    with pytest.raises(ConfigError):
        parse_config(MAP_CONFIG.format(kind="wip").replace("[16, 64]", "[64, 16]"))


def test_seed_override():
    assert parse_config(MAP_CONFIG.format(kind="wip"), seed_override=99).seed == 99


def test_minimal_iid_run_zero_distance(tmp_path):
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, IID_CONFIG), "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO((out / "eagleson-convergence.csv").read_text())))
    assert float(rows[0]["dK_mu_nu"]) == 0.0


def test_constant_kind(tmp_path):
    text = "format_version = 1\nkind = \"constant\"\n"
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, text), "--out", str(out)]) == 0
    row = next(csv.DictReader(io.StringIO((out / "constant.csv").read_text())))
    assert float(row["residual"]) <= 1e-10 and 1.9 < float(row["c"]) < 2.2


@pytest.mark.parametrize("kind", ["eagleson-convergence", "quant-bound", "centering", "variance", "wip"])
def test_map_kinds_headers_and_reproducibility(tmp_path, kind):
    cfg = write(tmp_path, MAP_CONFIG.format(kind=kind))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a), "--workers", "1"]) == 0
    assert main(["run", "--config", cfg, "--out", str(b), "--workers", "1"]) == 0
    text = (a / f"{kind}.csv").read_text()
    assert text.splitlines()[0] == ",".join(COLUMNS[kind])
    assert text == (b / f"{kind}.csv").read_text()
    assert (a / "report.jsonl").read_bytes() == (b / "report.jsonl").read_bytes()
    lines = [json.loads(x) for x in (a / "report.jsonl").read_text().splitlines()]
    assert lines[0]["type"] == "config" and lines[-1]["type"] == "summary"
    meta = json.loads((a / "run_meta.json").read_text())
    assert meta["workers"] == 1


def test_worker_count_stability(tmp_path):
    cfg = write(tmp_path, MAP_CONFIG.format(kind="quant-bound"))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", cfg, "--out", str(a), "--workers", "1"]) == 0
    assert main(["run", "--config", cfg, "--out", str(b), "--workers", "3"]) == 0
    ra = list(csv.DictReader(io.StringIO((a / "quant-bound.csv").read_text())))
    rb = list(csv.DictReader(io.StringIO((b / "quant-bound.csv").read_text())))
    for x, y in zip(ra, rb):
        for col in ("dK_mu", "dK_nu_measured", "bound_total", "I_rho"):
            assert abs(float(x[col]) - float(y[col])) <= 1e-12


def test_mixing_audit_chain(tmp_path):
    text = """
format_version = 1
kind = "mixing-audit"
count = 100
n_list = [1, 2, 3]
[model]
type = "markov-chain"
matrices = [[0.9, 0.1], [0.1, 0.9]]
initial = [0.5, 0.5]
[mixing]
k = 0
depth = 1
"""
    out = tmp_path / "out"
    assert main(["run", "--config", write(tmp_path, text), "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO((out / "mixing-audit.csv").read_text())))
    assert [r["holds"] for r in rows] == ["true"] * 3
    assert float(rows[1]["alpha_dobrushin"]) == pytest.approx(0.16)


def test_exit_codes(tmp_path, capsys):
    bad = write(tmp_path, MAP_CONFIG.format(kind="nope"), "bad.toml")
    assert main(["validate", "--config", bad]) == cli.EXIT_CONFIG
    assert "valid kinds" in capsys.readouterr().err
    big = MAP_CONFIG.format(kind="centering") + "\n[limits]\nmemory_bytes = 1000\n"
    assert main(["run", "--config", write(tmp_path, big, "big.toml"), "--out", str(tmp_path / "o")]) \
        == cli.EXIT_RESOURCE
    assert main(["run"]) == cli.EXIT_CONFIG
    assert main(["validate", "--config", write(tmp_path, MAP_CONFIG.format(kind="wip"), "ok.toml")]) == 0


def test_dominance_failure_exit_code(tmp_path, monkeypatch):
    cfg = write(tmp_path, MAP_CONFIG.format(kind="centering"))

    def failing(cfg, workers):
        return cli.RunReport("centering", [], [], cfg.raw, checks_passed=False)

    monkeypatch.setattr(cli, "_run_centering", failing)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == cli.EXIT_CHECK


def test_constant_subcommand(capsys):
    assert main(["constant"]) == 0
    assert "c = 2.03" in capsys.readouterr().out

import json
import shutil
import subprocess
import sys

import pytest

from signed_consensus import cli
from signed_consensus.presets import PRESET_DIR


def run(*argv):
    return cli.main(list(argv))


def write(path, obj):
    path.write_text(json.dumps(obj))
    return path


def test_analyze_fixtures(tmp_path, capsys):
    assert run("analyze", str(PRESET_DIR / "matrices" / "sub-zero-diagonal.json")) == cli.OK
    out = json.loads(capsys.readouterr().out)
    bound = {b["rule"]: b for b in out["bounds"]}["sub_zero_diag"]["bound"]
    assert bound == pytest.approx(0.9 ** 0.5)
    assert run("analyze", str(PRESET_DIR / "matrices" / "super-zero-diagonal.json")) == cli.OK
    out = json.loads(capsys.readouterr().out)
    assert {b["rule"]: b for b in out["bounds"]}["super_zero_diag"]["bound"] == pytest.approx(0.96 ** 0.5)
    eye = write(tmp_path / "eye.json", {"matrix": [[1, 0], [0, 1]]})
    assert run("analyze", str(eye)) == cli.OK
    out = json.loads(capsys.readouterr().out)
    assert out["numeric_rho"] == pytest.approx(1.0) and not any(b["applicable"] for b in out["bounds"])


def test_analyze_product_and_errors(tmp_path, capsys):
    assert run("analyze", str(PRESET_DIR / "matrices" / "sub-product.json"), "--out", str(tmp_path)) == cli.OK
    out = json.loads(capsys.readouterr().out)
    assert out["certified"] and out["window_norm"] == pytest.approx(0.95)
    assert (tmp_path / "analysis.json").is_file()
    neg = write(tmp_path / "neg.json", {"matrix": [[0.5, -0.1], [0, 1]]})
    assert run("analyze", str(neg)) == cli.NEITHER
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run("analyze", str(bad)) == cli.INPUT_ERROR
    assert run("analyze", str(write(tmp_path / "rect.json", {"matrix": [[1, 0]]}))) == cli.INPUT_ERROR
    assert run("analyze", str(tmp_path / "missing.json")) == cli.INPUT_ERROR


def test_gate_exit_codes(capsys):
    assert run("gate", "--preset", "first-order-async") == cli.OK
    assert run("gate", "--preset", "first-order-async", "--override", "psi=3") == cli.NEGATIVE
    assert run("gate", "--preset", "second-order-active-async") == cli.NEGATIVE
    out = capsys.readouterr().out
    assert "sufficient condition only" in out


def test_input_errors(tmp_path):
    assert run("gate", "--preset", "no-such-preset") == cli.INPUT_ERROR
    assert run("gate") == cli.INPUT_ERROR
    assert run("gate", "--preset", "first-order-async", "--override", "psi") == cli.INPUT_ERROR
    cfg = write(tmp_path / "c.json", {"kind": "first_order_async", "colour": 1})
    assert run("gate", "--config", str(cfg)) == cli.INPUT_ERROR
    with pytest.raises(SystemExit) as exc:
        run("frobnicate")
    assert exc.value.code == cli.INPUT_ERROR


def test_config_file_with_inline_graph(tmp_path, capsys):
    cfg = write(tmp_path / "c.json", {
        "kind": "first_order_async", "h": 2, "horizon": 100, "seed": 1,
        "gains": {"tau": 0.2, "psi": 1.0},
        "graph": {"n": 2, "edges": [[2, 1, -1.0]], "leader": [[1, 1.0]]},
        "x": [1.0, 2.0], "leader_x": [0.5]})
    assert run("simulate", "--config", str(cfg), "--out", str(tmp_path / "o")) == cli.OK
    assert (tmp_path / "o" / "c" / "verdict.json").is_file()


def test_simulate_outputs(tmp_path, capsys):
    code = run("simulate", "--preset", "second-order-static-async", "--out", str(tmp_path))
    assert code == cli.OK
    out = tmp_path / "second-order-static-async"
    for name in ("trace.csv", "verdict.json", "gate.json", "scenario.json", "plot_data.txt", "plot.py"):
        assert (out / name).is_file()
    verdict = json.loads((out / "verdict.json").read_text())
    assert verdict["verdict"]["tracked"] and verdict["dual_divergence"] < 1e-10
    header = (out / "trace.csv").open().readline().strip().split(",")
    assert header[:2] == ["k", "t"] and header[-1] == "err_vel_inf"
    compile((out / "plot.py").read_text(), "plot.py", "exec")


def test_simulate_diverging_gain(tmp_path, capsys):
    code = run("simulate", "--preset", "second-order-static-async", "--horizon", "400",
               "--override", "gamma=12", "--out", str(tmp_path))
    assert code == cli.NEGATIVE


def test_simulate_bounded_estimation(tmp_path, capsys):
    assert run("simulate", "--preset", "unmeasurable-leader", "--out", str(tmp_path)) == cli.OK
    v = json.loads((tmp_path / "unmeasurable-leader" / "verdict.json").read_text())["verdict"]
    assert v["bounded"] and v["empirical_limsup"] <= v["residual_bound"]["bound"]


def test_output_dir_env_and_precedence(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SIGNED_CONSENSUS_OUT", str(tmp_path / "env"))
    assert run("simulate", "--preset", "first-order-async") == cli.OK
    assert (tmp_path / "env" / "first-order-async" / "trace.csv").is_file()
    assert run("simulate", "--preset", "first-order-async", "--out", str(tmp_path / "flag")) == cli.OK
    assert (tmp_path / "flag" / "first-order-async" / "trace.csv").is_file()


def test_unwritable_output(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("simulate", "--preset", "first-order-async", "--out", str(blocker / "sub")) == cli.IO_ERROR


def test_monte_carlo(tmp_path, capsys):
    code = run("monte-carlo", "--preset", "packet-loss", "--replicates", "100", "--horizon", "1500",
               "--out", str(tmp_path))
    summary = json.loads((tmp_path / "packet-loss" / "monte_carlo.json").read_text())
    assert code == cli.OK and summary["max_z"] <= 3
    assert run("monte-carlo", "--preset", "packet-loss", "--replicates", "0") == cli.INPUT_ERROR


def test_render_writes_png(tmp_path, capsys):
    pytest.importorskip("matplotlib")
    assert run("simulate", "--preset", "first-order-async", "--render", "--out", str(tmp_path)) == cli.OK
    assert (tmp_path / "first-order-async" / "trajectories.png").stat().st_size > 0


def _small_preset_dir(tmp_path):
    d = tmp_path / "presets"
    shutil.copytree(PRESET_DIR / "graphs", d / "graphs")
    for name in ("first-order-async", "disturbed-static"):
        shutil.copy(PRESET_DIR / f"{name}.json", d)
    return d


def test_reproduce_all_isolates_broken_preset(tmp_path, capsys):
    d = _small_preset_dir(tmp_path)
    (d / "broken.json").write_text('{"scenario": {"kind": ')
    code = run("reproduce-all", "--preset-dir", str(d), "--skip-criteria", "--out", str(tmp_path / "o"))
    assert code == cli.NEGATIVE
    rows = {r["preset"]: r for r in json.loads((tmp_path / "o" / "reproduce_all.json").read_text())["presets"]}
    assert not rows["broken"]["pass"] and "error" in rows["broken"]
    assert rows["first-order-async"]["pass"] and rows["disturbed-static"]["pass"]


def test_reproduce_all_is_deterministic(tmp_path, capsys):
    d = _small_preset_dir(tmp_path)
    outs = []
    for tag in "ab":
        assert run("reproduce-all", "--preset-dir", str(d), "--skip-criteria", "--out", str(tmp_path / tag)) == cli.OK
        outs.append((tmp_path / tag / "reproduce_all.json").read_text())
    assert outs[0] == outs[1]


def test_list_presets(capsys):
    assert run("list-presets") == cli.OK
    assert "external-noise" in capsys.readouterr().out


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "signed_consensus", "gate", "--preset", "first-order-async",
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert res.returncode == 0
    assert json.loads(res.stdout)["overall"] is True

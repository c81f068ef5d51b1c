import json

import pytest

from ipregret.cli import main, replay_verify, run
from ipregret.config import ConfigError, load_document, parse_config


def _err(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_regress_outputs_and_byte_identical_rerun(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "regress", "--seed", "42", "--out", str(a)]) == 0
    assert main(["run", "regress", "--seed", "42", "--out", str(b)]) == 0
    for name in ("trace.csv", "config.resolved.json", "summary.json"):
        assert (a / name).is_file()
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    summary = json.loads((a / "summary.json").read_text())
    assert "ip_profile" in summary and summary["ip_profile"]["queries"]


def test_replay_verify(tmp_path):
    out = tmp_path / "r"
    assert main(["run", "regress", "--seed", "42", "--out", str(out)]) == 0
    trace, cfg = out / "trace.csv", out / "config.resolved.json"
    assert replay_verify(trace, cfg).identical

    lines = trace.read_text().splitlines(True)
    cells = lines[5].split(",")
    cells[3] = "0.123"
    lines[5] = ",".join(cells)
    bad = tmp_path / "bad" / "trace.csv"
    bad.parent.mkdir()
    bad.write_text("".join(lines))
    res = replay_verify(bad, cfg)
    assert not res.identical and res.first_mismatch_row == 5

    doc = json.loads(cfg.read_text())
    doc["seed"] = 43
    other = tmp_path / "seed43.json"
    other.write_text(json.dumps(doc))
    assert not replay_verify(trace, other).identical


def test_replay_missing_or_corrupt_files(tmp_path, capsys):
    out = tmp_path / "r"
    main(["run", "regress", "--seed", "1", "--out", str(out)])
    capsys.readouterr()
    assert main(["replay", "--trace", str(tmp_path / "nope.csv"), "--config", str(out / "config.resolved.json")]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    assert main(["replay", "--trace", str(out / "trace.csv"), "--config", str(broken)]) == 2
    assert _err(capsys)["error"] == "invalid_config"


def test_replay_cli_exit_codes(tmp_path, capsys):
    out = tmp_path / "r"
    main(["run", "regress", "--seed", "5", "--out", str(out)])
    assert main(["replay", "--trace", str(out / "trace.csv"), "--config", str(out / "config.resolved.json")]) == 0
    (out / "trace.csv").write_text((out / "trace.csv").read_text().replace("1,", "9,", 1))
    assert main(["replay", "--trace", str(out / "trace.csv"), "--config", str(out / "config.resolved.json")]) == 1


def test_pendulum_all_scenarios(tmp_path):
    out = tmp_path / "p"
    assert main(["run", "pendulum", "--scenario", "all", "--out", str(out)]) == 0
    for sc in ("true_model", "zero_model", "gp_adaptive"):
        assert (out / f"trace_{sc}.csv").is_file()
        assert (out / f"plot_{sc}.dat").read_text().startswith("#")
    summary = json.loads((out / "summary.json").read_text())
    assert summary["comparison"]["ordering_holds"] is True
    assert replay_verify(out / "trace_gp_adaptive.csv", out / "config.resolved.json").identical


def test_pendulum_single_scenario_and_bad_name(tmp_path, capsys):
    out = tmp_path / "p"
    assert main(["run", "pendulum", "--scenario", "zero_model", "--format", "csv", "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["config.resolved.json", "summary.json", "trace_zero_model.csv"]
    assert main(["run", "pendulum", "--scenario", "bogus", "--out", str(out)]) == 2
    assert "scenario" in _err(capsys)["message"]


def test_ipcheck_report(tmp_path):
    trace = tmp_path / "s.csv"
    trace.write_text("s\n" + "\n".join(["1.0"] * 5 + ["0.0"] * 30) + "\n")
    out = tmp_path / "i"
    assert main(["run", "ipcheck", "--input", str(trace), "--target", "0", "--eps", "0.05",
                 "--duration", "10", "--out", str(out)]) == 0
    rep = json.loads((out / "witness.json").read_text())
    assert rep["queries"] == [{"epsilon": 0.05, "duration": 10, "start": 1, "witness_index": 5, "infeasible": False}]


def test_ipcheck_infeasible_and_interval(tmp_path):
    trace = tmp_path / "s.csv"
    trace.write_text("0.3\n0.25\n0.3\n")
    out = tmp_path / "i"
    assert main(["run", "ipcheck", "--input", str(trace), "--target-interval", "0.3", "--eps", "0.01",
                 "--duration", "2", "--out", str(out)]) == 0
    assert json.loads((out / "witness.json").read_text())["queries"][0]["witness_index"] == 1
    assert main(["run", "ipcheck", "--input", str(trace), "--eps", "0.01", "--duration", "5", "--out", str(out)]) == 0
    assert json.loads((out / "witness.json").read_text())["queries"][0]["infeasible"] is True


def test_ipcheck_on_named_column(tmp_path):
    out = tmp_path / "r"
    main(["run", "regress", "--seed", "42", "--out", str(out)])
    assert main(["run", "ipcheck", "--input", str(out / "trace.csv"), "--column", "loss",
                 "--eps", "0.05", "--duration", "10", "--out", str(tmp_path / "i")]) == 0


def test_dynamics_linear_from_toml(tmp_path):
    cfg = tmp_path / "lin.toml"
    cfg.write_text(
        'kind = "dynamics"\n'
        f'out = "{tmp_path / "d"}"\n'
        "[dynamics]\n"
        "x0 = [1.0, 0.0]\n"
        'system = { type = "linear", matrix = [[0.5, 1.0], [0.0, 0.6]] }\n'
        'disturbance = { type = "ip_vanishing", scale = 0.1 }\n'
    )
    assert main(["run", "--config", str(cfg)]) == 0
    s = json.loads((tmp_path / "d" / "summary.json").read_text())
    assert s["bound_check"]["passed"] and s["sigma_tail_bound"] <= 1e-8
    assert replay_verify(tmp_path / "d" / "trajectory.csv", tmp_path / "d" / "config.resolved.json").identical


def test_dynamics_unstable_matrix_is_config_error(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps({"kind": "dynamics", "out": str(tmp_path / "d"),
                               "dynamics": {"x0": [0.0], "system": {"type": "linear", "matrix": [[1.5]]}}}))
    assert main(["run", "--config", str(cfg)]) == 2


@pytest.mark.parametrize("doc,needle", [
    ({"kind": "regress", "seed": 1, "regress": {"horizn": 10}}, "horizn"),
    ({"kind": "regress", "seed": 1, "extra": 1}, "extra"),
    ({"kind": "regress"}, "seed"),
    ({"kind": "regress", "seed": -1}, "seed"),
    ({"kind": "regress", "seed": 2 ** 64}, "seed"),
    ({"kind": "pendulum", "pendulum": {"plant": {"masss": 1.0}}}, "masss"),
    ({"kind": "dynamics", "dynamics": {"system": {"type": "linear"}}}, "linear"),
    ({"kind": "regress", "seed": 1, "formats": ["csv", "pdf"]}, "pdf"),
    ({"kind": "nope"}, "kind"),
])
def test_strict_parsing(tmp_path, capsys, doc, needle):
    p = tmp_path / "c.json"
    p.write_text(json.dumps(doc))
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    err = _err(capsys)
    assert err["error"] == "invalid_config" and needle in err["message"]


def test_seed_flag_overrides_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('kind = "regress"\nseed = 1\n[regress]\nhorizon = 20\n')
    out = tmp_path / "o"
    assert main(["run", "--config", str(p), "--seed", "7", "--out", str(out)]) == 0
    assert json.loads((out / "config.resolved.json").read_text())["seed"] == 7


def test_numerical_failure_exit_3(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text('kind = "pendulum"\n[pendulum.mixture]\nweights = [1e306, 1e306, 1e306, 1e306]\n')
    assert main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 3
    err = _err(capsys)
    assert err["error"] == "numerical_failure" and isinstance(err["stage"], int)


@pytest.mark.parametrize("argv", [
    ["run", "regress", "--seed", "3"],
    ["run", "pendulum"],
    ["run", "dynamics"],
])
def test_config_roundtrip(tmp_path, argv):
    out = tmp_path / "o"
    assert main(argv + ["--out", str(out)]) == 0
    doc = load_document(out / "config.resolved.json")
    again = parse_config(doc)
    assert again.resolve() == doc
    assert parse_config(again.resolve()).resolve() == doc


def test_run_api_rejects_bad_kind_section():
    with pytest.raises(ConfigError):
        parse_config({"kind": "regress", "seed": 1, "regress": 5})


def test_run_function_direct(tmp_path):
    cfg = parse_config({"kind": "regress", "seed": 9, "formats": ["csv"], "regress": {"horizon": 30}})
    summary = run(cfg, tmp_path)
    assert summary["seed"] == 9
    assert sorted(p.name for p in tmp_path.iterdir()) == ["config.resolved.json", "summary.json", "trace.csv"]

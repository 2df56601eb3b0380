import csv
import io
import json
import math
from pathlib import Path

import pytest

from mfrl.classes import ClassGenSpec, generate_class
from mfrl.cli import main
from mfrl.errors import ConfigError, SchemaVersionError
from mfrl.harness import aggregate_curves, emit_curves, fmt, load_config, mean_se, parse_config, read_trace, \
    run_experiment

GEN = {"S": 3, "A": 2, "H": 3, "size": 4, "contraction": True}


def write_config(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc, indent=1))
    return p


def snapshot(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


# --- config validation ---------------------------------------------------------------------------

def test_validation_messages_are_line_anchored(tmp_path):
    text = '{\n "mode": "mfc",\n "class": {"generate": {"S": 2, "A": 2, "H": 2, "size": 2}},\n' \
           ' "params": {"K": 5,\n  "delta": 2.0, "epsilon": 0.1}\n}\n'
    with pytest.raises(ConfigError, match=r"^cfg\.json:5: params\.delta"):
        parse_config(text, "cfg.json")


@pytest.mark.parametrize("doc,needle", [
    ({"mode": "mfx"}, "unknown mode"),
    ({"mode": "mfc", "class": {"generate": {"S": 2, "A": 2, "H": 2, "size": 2}}, "params": {"K": 5}},
     "requires params.delta"),
    ({"mode": "bounds", "class": {}}, "exactly one of"),
    ({"mode": "bounds", "class": {"generate": {"S": 2}}}, "invalid class generator"),
    ({"mode": "bounds", "class": {"generate": GEN}, "seeds": []}, "nonempty"),
    ({"mode": "bounds", "class": {"generate": GEN}, "seeds": [-1]}, "non-negative"),
    ({"mode": "bounds", "class": {"generate": GEN}, "schema_version": 7}, "schema_version"),
    ({"mode": "eluder", "class": {"generate": GEN}, "params": {"alpha": 0.5, "epsilon": 0.1}}, "alpha"),
])
def test_invalid_configs(doc, needle):
    with pytest.raises(ConfigError, match=needle):
        parse_config(json.dumps(doc))


def test_invalid_json_reports_line():
    with pytest.raises(ConfigError, match=r"x\.json:2: invalid JSON"):
        parse_config('{"mode": "mfc",\n oops}', "x.json")


def test_mode_must_match_subcommand():
    with pytest.raises(ConfigError, match="does not match"):
        parse_config(json.dumps({"mode": "mfc", "class": {"generate": GEN},
                                 "params": {"K": 2, "delta": 0.1, "epsilon": 0.1}}), mode="mfg")


# --- formatting -------------------------------------------------------------------------------------

def test_number_formatting():
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(1 / 3)) == 1 / 3
    assert fmt(True) == "1" and fmt(False) == "0" and fmt(7) == "7"


def test_mean_se():
    assert mean_se([2.0]) == {"mean": 2.0, "se": 0.0, "n": 1}
    r = mean_se([1.0, 2.0, 3.0])
    assert r["mean"] == 2.0 and r["se"] == pytest.approx(1 / math.sqrt(3))


# --- experiments --------------------------------------------------------------------------------------

def test_bounds_identical_pair_passes(tmp_path):
    cfg = write_config(tmp_path, {"mode": "bounds", "class": {"generate": GEN},
                                  "params": {"model": 0, "model_tilde": 0}})
    assert main(["check-bounds", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "bounds_seed0.json").read_text())
    assert doc["passed"] and all(c["status"] != "fail" for c in doc["checks"])
    assert all(c["lhs"] == 0 for c in doc["checks"] if c["status"] != "skipped")


def test_mfg_three_seeds_outputs_and_rerun(tmp_path):
    doc = {"mode": "mfg", "class": {"generate": GEN}, "seeds": [0, 1, 2], "params": {"K": 5, "delta": 0.1}}
    cfg = load_config(write_config(tmp_path, doc))
    res = run_experiment(cfg, tmp_path / "a")
    assert res.status == 0
    files = snapshot(tmp_path / "a")
    assert sorted(n for n in files if n.endswith(".csv")) == [f"trace_seed{s}.csv" for s in (0, 1, 2)]
    assert "summary.json" in files and "manifest.json" in files
    run_experiment(cfg, tmp_path / "b")
    assert snapshot(tmp_path / "b") == files
    cfg.jobs = 3
    run_experiment(cfg, tmp_path / "c")
    assert snapshot(tmp_path / "c") == files


def test_summary_mean_matches_hand_average(tmp_path):
    doc = {"mode": "mfg", "class": {"generate": GEN}, "seeds": [4, 5, 6], "params": {"K": 4, "delta": 0.1}}
    res = run_experiment(load_config(write_config(tmp_path, doc)), tmp_path / "o")
    last = []
    for s in (4, 5, 6):
        _, rows = read_trace(tmp_path / "o" / f"trace_seed{s}.csv")
        assert rows[-1]["k"] == "4"
        last.append(float(rows[-1]["true_eopt_or_ene"]))
    summary = json.loads((tmp_path / "o" / "summary.json").read_text())
    assert summary["metrics"]["true_eopt_or_ene"]["mean"] == pytest.approx(sum(last) / 3, rel=1e-15, abs=1e-300)
    assert res.summary["metrics"]["true_eopt_or_ene"]["n"] == 3


def test_csv_layout(tmp_path):
    doc = {"mode": "mfc", "class": {"generate": GEN}, "seeds": [1],
           "params": {"K": 3, "delta": 0.1, "epsilon": 0.2}}
    run_experiment(load_config(write_config(tmp_path, doc)), tmp_path / "o")
    raw = (tmp_path / "o" / "trace_seed1.csv").read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().split("\n")
    assert lines[0] == "# schema_version=1 mode=mfc seed=1"
    assert lines[1] == "k,conf_set_size,truth_in_set,optimistic_value_or_gap,true_eopt_or_ene,ne_converged,wallclock_ms"
    result = json.loads((tmp_path / "o" / "result_seed1.json").read_text())
    assert {"returned_policy", "final_metric", "trajectories_consumed", "schema_version"} <= set(result)
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["schema_version"] == 1 and len(manifest["config_hash"]) == 64 and manifest["tool_version"]


def test_class_from_file(tmp_path):
    c = generate_class(ClassGenSpec(S=2, A=2, H=2, size=3, seed=9))
    (tmp_path / "cls.json").write_text(c.to_json())
    cfg = write_config(tmp_path, {"mode": "ne", "class": {"file": "cls.json"}, "params": {"model": 1}})
    assert main(["ne-solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    doc = json.loads((tmp_path / "o" / "ne_seed0.json").read_text())
    assert doc["model"] == 1 and doc["converged"]


def test_gen_class_and_eluder(tmp_path):
    cfg = write_config(tmp_path, {"mode": "gen_class", "class": {"generate": {**GEN, "seed": 3}}})
    assert main(["gen-class", "--config", str(cfg), "--out", str(tmp_path / "g")]) == 0
    text = (tmp_path / "g" / "class_seed0.json").read_text()
    assert text.strip() == generate_class(ClassGenSpec(**{**GEN, "seed": 3})).to_json()
    cfg = write_config(tmp_path, {"mode": "eluder", "class": {"file": "g/class_seed0.json"},
                                  "params": {"alpha": 1, "epsilon": 0.1, "probes": {"n_random": 2}}}, "e.json")
    assert main(["eluder-dim", "--config", str(cfg), "--out", str(tmp_path / "e")]) == 0
    rep = json.loads((tmp_path / "e" / "eluder_seed0.json").read_text())
    assert {"per_h", "mf_mbed", "probes", "seed"} <= set(rep)


# --- CLI exit codes and overrides ---------------------------------------------------------------------

def test_exit_code_validation(tmp_path, capsys):
    cfg = write_config(tmp_path, {"mode": "mfc", "class": {"generate": GEN}, "params": {"K": 2}})
    assert main(["run-mfc", "--config", str(cfg)]) == 1
    assert "cfg.json:" in capsys.readouterr().err
    assert main(["run-mfc", "--config", str(tmp_path / "missing.json")]) == 1


def test_exit_code_check_failure(tmp_path):
    cfg = write_config(tmp_path, {"mode": "ne", "class": {"generate": GEN},
                                  "params": {"ne": {"max_iters": 1, "restarts": 1}}})
    assert main(["ne-solve", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    doc = json.loads((tmp_path / "o" / "ne_seed0.json").read_text())
    assert doc["converged"] is False


def test_exit_code_internal(tmp_path, monkeypatch):
    import mfrl.harness as harness

    def boom(*a, **k):
        raise RuntimeError("boom")

    monkeypatch.setattr(harness, "_replicate", boom)
    cfg = write_config(tmp_path, {"mode": "bounds", "class": {"generate": GEN}})
    assert main(["check-bounds", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_seed_override_and_env_out(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, {"mode": "bounds", "class": {"generate": GEN}, "seeds": [0],
                                  "out": str(tmp_path / "ignored")})
    monkeypatch.setenv("MFRL_OUT", str(tmp_path / "env"))
    assert main(["check-bounds", "--config", str(cfg), "--seed", "5", "--seed", "6",
                 "--out", str(tmp_path / "flag")]) == 0
    assert sorted(p.name for p in (tmp_path / "env").glob("bounds_seed*.json")) == \
        ["bounds_seed5.json", "bounds_seed6.json"]
    assert not (tmp_path / "flag").exists() and not (tmp_path / "ignored").exists()


# --- curves --------------------------------------------------------------------------------------------

def run_mfg_traces(tmp_path, seeds, K=4):
    doc = {"mode": "mfg", "class": {"generate": GEN}, "seeds": seeds, "params": {"K": K, "delta": 0.1}}
    res = run_experiment(load_config(write_config(tmp_path, doc)), tmp_path / "o")
    return res, [tmp_path / "o" / f"trace_seed{s}.csv" for s in seeds]


def read_long(path):
    text = Path(path).read_text()
    return list(csv.DictReader(io.StringIO(text.split("\n", 1)[1])))


def test_single_trace_row_count(tmp_path):
    _, traces = run_mfg_traces(tmp_path, [0], K=4)
    n = emit_curves(traces, tmp_path / "long.csv")
    assert n == 4 * 5
    assert len(read_long(tmp_path / "long.csv")) == n


def test_two_traces_concatenate(tmp_path):
    _, traces = run_mfg_traces(tmp_path, [3, 8], K=3)
    emit_curves(traces, tmp_path / "long.csv")
    rows = read_long(tmp_path / "long.csv")
    assert {r["seed"] for r in rows} == {"3", "8"}
    assert sum(r["seed"] == "3" for r in rows) == sum(r["seed"] == "8" for r in rows) == 15


def test_curves_reproduce_summary(tmp_path):
    res, traces = run_mfg_traces(tmp_path, [0, 1, 2], K=4)
    emit_curves(traces, tmp_path / "long.csv")
    agg = aggregate_curves(tmp_path / "long.csv")
    for name in ("true_eopt_or_ene", "optimistic_value_or_gap", "conf_set_size"):
        assert agg[name] == res.summary["metrics"][name]


def test_unknown_trace_version_is_rejected(tmp_path):
    _, traces = run_mfg_traces(tmp_path, [0], K=2)
    bad = tmp_path / "bad.csv"
    bad.write_text(traces[0].read_text().replace("schema_version=1", "schema_version=2", 1))
    with pytest.raises(SchemaVersionError):
        emit_curves([bad], tmp_path / "long.csv")
    assert main(["emit-curves", str(bad), "--out", str(tmp_path / "x.csv")]) == 1

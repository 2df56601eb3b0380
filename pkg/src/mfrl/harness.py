"""Experiment configuration, replicate orchestration and flat-file outputs.

Every output file carries ``schema_version``. CSV files start with a comment
line ``# schema_version=1 mode=<mode> seed=<seed>``, use LF line endings and
write reals with 17 significant digits, so reruns are byte-identical.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import rng as rngmod
from .classes import ClassGenSpec, ModelClass, generate_class
from .core.model import SCHEMA_VERSION, canonical_json, random_policy, uniform_policy
from .eluder import ProbeSpec, linear_dim_bound, mf_mbed
from .errors import ConfigError, MFRLError, SchemaVersionError
from .learner import TRACE_COLUMNS, NEParams, run_mfc, run_mfg
from .planning import PlannerBudget, bound_check_suite, ne_solve

MODES = ("mfc", "mfg", "eluder", "bounds", "ne", "gen_class")
EXIT_OK, EXIT_VALIDATION, EXIT_CHECK, EXIT_INTERNAL = 0, 1, 2, 3

_REQUIRED = {
    "mfc": ("K", "delta", "epsilon"),
    "mfg": ("K", "delta"),
    "eluder": ("alpha", "epsilon"),
    "bounds": (),
    "ne": (),
    "gen_class": (),
}


# --- config -----------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    mode: str
    class_source: dict
    params: dict
    seeds: list
    out: str = "out"
    jobs: int = 1
    record_timing: bool = False
    base_dir: str = "."
    raw: dict = field(default_factory=dict, repr=False)

    def hash(self) -> str:
        return hashlib.sha256(canonical_json(self.raw).encode()).hexdigest()


def _line_of(text: str, key: str) -> int:
    if text:
        m = re.search(r'"%s"\s*:' % re.escape(key), text)
        if m:
            return text.count("\n", 0, m.start()) + 1
    return 1


def _fail(src: str, text: str, key: str, msg: str):
    raise ConfigError(f"{src}:{_line_of(text, key)}: {msg}")


def parse_config(text: str, src: str = "<config>", mode: str | None = None,
                 base_dir: str = ".") -> ExperimentConfig:
    """Validate a JSON config; errors read ``<file>:<line>: <message>``."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{src}:{e.lineno}: invalid JSON: {e.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{src}:1: config must be a JSON object")
    sv = doc.get("schema_version", SCHEMA_VERSION)
    if sv != SCHEMA_VERSION:
        _fail(src, text, "schema_version", f"unsupported schema_version {sv!r}")
    cfg_mode = doc.get("mode", mode)
    if cfg_mode is None:
        _fail(src, text, "mode", "missing 'mode'")
    if cfg_mode not in MODES:
        _fail(src, text, "mode", f"unknown mode {cfg_mode!r}; expected one of {MODES}")
    if mode is not None and cfg_mode != mode:
        _fail(src, text, "mode", f"config mode {cfg_mode!r} does not match subcommand mode {mode!r}")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        _fail(src, text, "params", "'params' must be an object")
    for key in _REQUIRED[cfg_mode]:
        if key not in params:
            _fail(src, text, "params", f"mode {cfg_mode!r} requires params.{key}")
    for key in ("delta", "epsilon"):
        if key in params and not (isinstance(params[key], (int, float)) and 0 < params[key] < 1):
            _fail(src, text, key, f"params.{key} must lie in (0, 1)")
    if "K" in params and not (isinstance(params["K"], int) and params["K"] >= 1):
        _fail(src, text, "K", "params.K must be a positive integer")
    if "alpha" in params and not (isinstance(params["alpha"], (int, float)) and params["alpha"] >= 1):
        _fail(src, text, "alpha", "params.alpha must be >= 1")
    seeds = doc.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        _fail(src, text, "seeds", "'seeds' must be a nonempty list of non-negative integers")
    cls = doc.get("class")
    if not isinstance(cls, dict) or (("file" in cls) == ("generate" in cls)):
        _fail(src, text, "class", "'class' must be an object with exactly one of 'file' or 'generate'")
    if "generate" in cls:
        try:
            gen = dict(cls["generate"])
            gen.setdefault("seed", 0)
            ClassGenSpec.from_dict(gen)
        except (TypeError, ValueError, MFRLError) as e:
            _fail(src, text, "generate", f"invalid class generator: {e}")
    jobs = doc.get("jobs", 1)
    if not isinstance(jobs, int) or jobs < 1:
        _fail(src, text, "jobs", "'jobs' must be a positive integer")
    return ExperimentConfig(cfg_mode, cls, params, list(seeds), str(doc.get("out", "out")), jobs,
                            bool(doc.get("record_timing", False)), base_dir, doc)


def load_config(path, mode: str | None = None) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"{path}:1: cannot read config: {e.strerror}") from None
    return parse_config(text, str(path), mode, str(p.parent))


def load_class(cfg: ExperimentConfig, seed: int) -> ModelClass:
    src = cfg.class_source
    if "file" in src:
        path = Path(src["file"])
        if not path.is_absolute():
            path = Path(cfg.base_dir) / path
        try:
            return ModelClass.from_json(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"class file {path}: {e.strerror}") from None
    gen = dict(src["generate"])
    gen.setdefault("seed", seed)
    return generate_class(ClassGenSpec.from_dict(gen))


# --- formatting ------------------------------------------------------------------------

def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return "" if v is None else str(v)


def _write_csv(path: Path, header: str, columns, rows):
    buf = io.StringIO(newline="")
    buf.write(f"# {header}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r[c]) for c in columns])
    path.write_bytes(buf.getvalue().encode("utf-8"))


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def _write_json(path: Path, doc):
    text = json.dumps(_jsonable(doc), sort_keys=True, indent=1, allow_nan=False) + "\n"
    path.write_bytes(text.encode("utf-8"))


def mean_se(values) -> dict:
    """Mean and standard error (sample standard deviation over sqrt(n))."""
    v = [float(x) for x in values]
    n = len(v)
    mean = math.fsum(v) / n
    se = math.sqrt(math.fsum((x - mean) ** 2 for x in v) / (n - 1) / n) if n > 1 else 0.0
    return {"mean": mean, "se": se, "n": n}


# --- replicate runners (top-level so they pickle for worker processes) ----------------------

def _replicate(cfg: ExperimentConfig, seed: int, out: Path) -> dict:
    c = load_class(cfg, seed)
    p = cfg.params
    header = f"schema_version={SCHEMA_VERSION} mode={cfg.mode} seed={seed}"
    if cfg.mode in ("mfc", "mfg"):
        if cfg.mode == "mfc":
            budget = PlannerBudget(**{"seed": seed, **p.get("planner", {})})
            res = run_mfc(c, p["K"], p["delta"], p["epsilon"], budget, seed, record_timing=cfg.record_timing)
        else:
            res = run_mfg(c, p["K"], p["delta"], NEParams(**p.get("ne", {})), seed,
                          record_timing=cfg.record_timing)
        _write_csv(out / f"trace_seed{seed}.csv", header, TRACE_COLUMNS, res.trace.rows)
        last = res.trace.rows[-1]
        doc = {"schema_version": SCHEMA_VERSION, "mode": cfg.mode, "seed": seed,
               "returned_policy": res.policy, "returned_k": res.returned_k,
               "final_metric": res.final_metric, "trajectories_consumed": res.trajectories,
               "truth_always_in_set": res.trace.truth_always_in_set}
        _write_json(out / f"result_seed{seed}.json", doc)
        return {"seed": seed, "ok": True, "metrics": {
            "final_metric": res.final_metric,
            "true_eopt_or_ene": last["true_eopt_or_ene"],
            "optimistic_value_or_gap": last["optimistic_value_or_gap"],
            "conf_set_size": last["conf_set_size"],
            "truth_in_set": last["truth_in_set"],
            "ne_converged": last["ne_converged"],
        }}
    if cfg.mode == "eluder":
        probes = ProbeSpec(**{"seed": seed, **p.get("probes", {})})
        rep = mf_mbed(c, p["alpha"], p["epsilon"], probes, tuple(p.get("distances", ("tv", "hellinger"))))
        doc = {"schema_version": SCHEMA_VERSION, **rep.to_dict()}
        ok = True
        lb = p.get("linear_bound")
        if lb is not None:
            bound = linear_dim_bound(lb["d"], lb["C_phi"], lb["C_const"], p["epsilon"])
            doc["linear_bound"] = bound
            ok = rep.estimate <= bound
        doc["passed"] = ok
        _write_json(out / f"eluder_seed{seed}.json", doc)
        _write_csv(out / f"eluder_seed{seed}.csv", header, ("h", "tv_dim", "hellinger_dim"), rep.per_h)
        return {"seed": seed, "ok": ok, "metrics": {"mf_mbed": rep.estimate}}
    if cfg.mode == "bounds":
        i = int(p.get("model", c.truth_index))
        j = int(p.get("model_tilde", i))
        S, A, H = c.shape
        prng = rngmod.stream(seed, rngmod.POLICY)
        pols = []
        for key in ("policy", "policy_tilde"):
            kind = p.get(key, "random")
            pols.append(uniform_policy(H, S, A) if kind == "uniform" else random_policy(prng, H, S, A))
        rep = bound_check_suite(c.models[i], c.models[j], pols[0], pols[1], p.get("contraction", "auto"))
        _write_json(out / f"bounds_seed{seed}.json", {"schema_version": SCHEMA_VERSION, "seed": seed,
                                                       "model": i, "model_tilde": j, **rep.to_dict()})
        _write_csv(out / f"bounds_seed{seed}.csv", header, ("name", "lhs", "rhs", "slack", "status"),
                   [c_.to_dict() for c_ in rep.checks])
        fails = sum(c_.status == "fail" for c_ in rep.checks)
        return {"seed": seed, "ok": rep.passed, "metrics": {"failed_checks": fails}}
    if cfg.mode == "ne":
        i = int(p.get("model", c.truth_index))
        ne = NEParams(**p.get("ne", {}))
        sol = ne_solve(c.models[i], ne.damping, ne.max_iters, ne.tol, ne.restarts,
                       rngmod.stream(seed, rngmod.POLICY, i), ne.prox_weight)
        row = {"model": i, "exploitability": sol.exploitability,
               "consistency_residual": sol.consistency_residual,
               "fixed_point_residual": sol.fixed_point_residual,
               "iterations": sol.iterations, "converged": sol.converged, "restarts": sol.restarts}
        _write_json(out / f"ne_seed{seed}.json", {"schema_version": SCHEMA_VERSION, "seed": seed,
                                                   "policy": sol.policy, "flow": sol.flow, **row})
        _write_csv(out / f"ne_seed{seed}.csv", header, tuple(row), [row])
        return {"seed": seed, "ok": sol.converged, "metrics": {
            "exploitability": sol.exploitability, "converged": sol.converged}}
    # gen_class
    (out / f"class_seed{seed}.json").write_bytes((c.to_json() + "\n").encode("utf-8"))
    return {"seed": seed, "ok": True, "metrics": {"size": len(c)}}


def _replicate_packed(args):
    cfg, seed, out = args
    return _replicate(cfg, seed, Path(out))


@dataclass(frozen=True)
class ExperimentResult:
    status: int
    out: Path
    summary: dict


def run_experiment(cfg: ExperimentConfig, out: str | os.PathLike | None = None) -> ExperimentResult:
    """Run every replicate, then write ``summary.json`` and ``manifest.json``.

    Status is 0 on success and 2 if any replicate failed its checks (bounds,
    eluder and ne modes).
    """
    out = Path(out if out is not None else cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg, s, str(out)) for s in cfg.seeds]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            results = list(ex.map(_replicate_packed, jobs))
    else:
        results = [_replicate_packed(j) for j in jobs]
    results.sort(key=lambda r: cfg.seeds.index(r["seed"]))
    names = sorted({k for r in results for k in r["metrics"]})
    metrics = {k: mean_se([r["metrics"][k] for r in results if k in r["metrics"]]) for k in names}
    summary = {"schema_version": SCHEMA_VERSION, "mode": cfg.mode, "seeds": cfg.seeds,
               "passed": all(r["ok"] for r in results),
               "replicates": [{"seed": r["seed"], "ok": r["ok"], **r["metrics"]} for r in results],
               "metrics": metrics}
    _write_json(out / "summary.json", summary)
    files = sorted(p.name for p in out.iterdir() if p.is_file() and p.name != "manifest.json")
    _write_json(out / "manifest.json", {"schema_version": SCHEMA_VERSION, "config_hash": cfg.hash(),
                                        "tool_version": __version__, "files": files})
    checked = cfg.mode in ("bounds", "eluder", "ne")
    status = EXIT_CHECK if checked and not summary["passed"] else EXIT_OK
    return ExperimentResult(status, out, summary)


# --- curves -----------------------------------------------------------------------------

CURVE_METRICS = tuple(c for c in TRACE_COLUMNS if c not in ("k", "wallclock_ms"))


def read_trace(path) -> tuple[dict, list]:
    """Header fields and rows of a trace CSV; rejects unknown schema versions."""
    text = Path(path).read_text(encoding="utf-8")
    first, _, rest = text.partition("\n")
    if not first.startswith("#"):
        raise SchemaVersionError(f"{path}: missing schema_version header")
    meta = dict(tok.split("=", 1) for tok in first[1:].split() if "=" in tok)
    if meta.get("schema_version") != str(SCHEMA_VERSION):
        raise SchemaVersionError(f"{path}: unsupported schema_version {meta.get('schema_version')!r}")
    rows = list(csv.DictReader(io.StringIO(rest)))
    return meta, rows


def emit_curves(trace_files, out_path) -> int:
    """Write tidy ``seed,k,metric,value`` rows for every trace; returns the row count."""
    rows = []
    for f in trace_files:
        meta, trace = read_trace(f)
        for r in trace:
            for mname in CURVE_METRICS:
                rows.append({"seed": int(meta["seed"]), "k": int(r["k"]), "metric": mname,
                             "value": r[mname]})
    buf = io.StringIO(newline="")
    buf.write(f"# schema_version={SCHEMA_VERSION} format=long\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("seed", "k", "metric", "value"))
    for r in rows:
        w.writerow((r["seed"], r["k"], r["metric"], r["value"]))
    Path(out_path).write_bytes(buf.getvalue().encode("utf-8"))
    return len(rows)


def aggregate_curves(long_path) -> dict:
    """Mean and standard error across seeds of each metric at each seed's last iteration."""
    meta, rows = read_trace(long_path)
    last: dict = {}
    for r in rows:
        key = (int(r["seed"]), r["metric"])
        k = int(r["k"])
        if key not in last or k > last[key][0]:
            last[key] = (k, float(r["value"]))
    out = {}
    for mname in sorted({m for _, m in last}):
        seeds = sorted(s for s, m in last if m == mname)
        out[mname] = mean_se([last[(s, mname)][1] for s in seeds])
    return out

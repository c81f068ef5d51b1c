"""Command-line runner: ``ipregret run KIND`` and ``ipregret replay``.

Exit codes: 0 success, 1 replay mismatch, 2 invalid configuration or
missing/corrupt files, 3 numerical failure during a run. Errors are printed
to stderr as a one-line JSON object.
"""

from __future__ import annotations

import argparse
import csv
import filecmp
import json
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dynamics
from .config import ConfigError, ExperimentConfig, load_document, parse_config
from .control import ConfigurationError, ControlDiverged, compare_scenarios, run_scenarios
from .ip_convergence import (
    Interval,
    IpQuery,
    QueryInfeasible,
    SequenceTrace,
    classical_tail_check,
    ip_profile,
    ip_witness,
    log_ladder,
)
from .ocp import NonFiniteGradient, average_regret_curve
from .regression import NumericalFailure, representational_error, run_online_regression

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


class NumericalRunError(RuntimeError):
    def __init__(self, message: str, stage=None):
        super().__init__(message)
        self.stage = stage


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- experiments -------------------------------------------------------------

def _run_regress(cfg: ExperimentConfig, out: Path) -> dict:
    sec = cfg.section
    exp = sec.experiment
    run = run_online_regression(exp)
    fset = exp.learning_set()
    if "csv" in cfg.formats:
        run.write_csv(out / "trace.csv")
    if "json" in cfg.formats:
        run.write_sidecar(out / "trace.meta.json")
    if "plotdata" in cfg.formats:
        run.write_curve(out / "curve.dat")
        with open(out / "loss.dat", "w") as fh:
            fh.write("# stage loss\n")
            for t, v in enumerate(run.losses, start=1):
                fh.write(f"{t} {v:.17g}\n")

    T = exp.horizon
    fifth = max(1, T // 5)
    first, last = float(np.mean(run.losses[:fifth])), float(np.mean(run.losses[-fifth:]))
    horizons = sorted(set([h for h in log_ladder(T) if h > 1] + [T]))
    curve = average_regret_curve(run.ledger, fset, horizons)
    summary = {
        "kind": "regress",
        "seed": cfg.seed,
        "mean_loss_first_fifth": first,
        "mean_loss_last_fifth": last,
        "loss_ratio": last / first if first > 0 else None,
        "average_regret": {str(h): float(v) for h, v in zip(horizons, curve)},
    }
    if exp.drop_features:
        # the hypothesis cannot represent the target; losses settle near r_f
        rep = representational_error(exp.hypothesis_map(), run.target_fn(),
                                     (exp.input_low, exp.input_high), sec.mc_samples, cfg.seed)
        target = Interval(rep.value + 3.0 * rep.std_error)
        summary["representational_error"] = {"value": rep.value, "std_error": rep.std_error,
                                             "n_samples": rep.n_samples}
    else:
        target = 0.0
    summary["ip_profile"] = ip_profile(run.losses, target, [tuple(q) for q in sec.ip_queries]).to_dict()
    return summary


def _run_pendulum(cfg: ExperimentConfig, out: Path) -> dict:
    sec = cfg.section
    runs = run_scenarios(sec.plant, sec.mixture, sec.controller, sec.scenarios())
    target = np.asarray(sec.controller.target, dtype=float)
    per = {}
    for sc, tr in runs.items():
        if "csv" in cfg.formats:
            tr.write_csv(out / f"trace_{sc.value}.csv")
        if "plotdata" in cfg.formats:
            tr.write_plotdata(out / f"plot_{sc.value}.dat", target)
        norms = tr.error_norms
        tail = classical_tail_check(norms, 0.0, 0.01)
        per[sc.value] = {
            "last_quarter_mean_norm_e": float(np.mean(tr.last_quarter(norms))),
            "last_quarter_max_dist_to_target": float(np.max(tr.last_quarter(tr.tracking_distance(target)))),
            "final_x": tr.final_x.tolist(),
            "final_theta": tr.theta[-1].tolist(),
            "classical_tail_start_eps_0.01": tail.start,
            "ip_profile": ip_profile(norms, 0.0, [tuple(q) for q in sec.ip_queries]).to_dict(),
        }
    summary = {"kind": "pendulum", "scenarios": per}
    if len(runs) == 3:
        summary["comparison"] = compare_scenarios(runs, target).to_dict()
    return summary


def _disturbance(spec: dict):
    kind = spec["type"]
    direction = tuple(spec["direction"]) if spec.get("direction") is not None else None
    if kind == "ip_vanishing":
        base = tuple(spec["base"]) if spec.get("base") is not None else None
        return dynamics.IpVanishing(float(spec["scale"]), base, direction)
    if kind == "constant":
        return dynamics.ConstantBounded(float(spec["level"]), direction)
    samples = spec["samples"]
    return dynamics.Recorded(tuple(tuple(s) if isinstance(s, list) else s for s in samples))


def _run_dynamics(cfg: ExperimentConfig, out: Path) -> dict:
    sec = cfg.section
    d = _disturbance(sec.disturbance)
    system = sec.system
    try:
        if system["type"] == "linear":
            rec = dynamics.LinearRecurrence(np.asarray(system["matrix"], dtype=float))
            series = dynamics.sigma_series(rec.M, tail_tol=sec.tail_tol)
            traj = dynamics.simulate_linear(rec, sec.x0, d, sec.horizon)
            sigma, lam = series.value, None
            extra = {"spectral_radius": dynamics.spectral_radius(rec.M), "sigma_terms": series.terms,
                     "sigma_tail_bound": series.tail_bound}
        else:
            if system["type"] == "affine":
                spec = dynamics.affine_contraction(float(system["slope"]), float(system["offset"]))
            else:
                spec = dynamics.sine_contraction(float(system["amplitude"]))
            traj = dynamics.simulate_contraction(spec, sec.x0, d, sec.horizon)
            lam = spec.lipschitz
            sigma, extra = 1.0 / (1.0 - lam), {"fixed_point": spec.fixed_point.tolist()}
    except (ValueError, dynamics.NumericalError) as exc:
        if isinstance(exc, dynamics.SimulationDiverged):
            raise
        raise ConfigError(f"[dynamics]: {exc}") from exc
    check = dynamics.check_bound(traj.trace, sigma, sec.r, sec.epsilon, lam, tuple(sec.durations))
    if "csv" in cfg.formats:
        traj.write_csv(out / "trajectory.csv")
    if "json" in cfg.formats:
        _dump_json(check.to_dict(), out / "bound_check.json")
    if "plotdata" in cfg.formats:
        with open(out / "trajectory.dat", "w") as fh:
            fh.write("# t distance bound\n")
            for t, v in enumerate(traj.trace, start=1):
                fh.write(f"{t} {v:.17g} {check.bound:.17g}\n")
    return {"kind": "dynamics", **extra, "bound_check": check.to_dict()}


def _read_column(path: str, column: str | None) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"input trace not found: {path}")
    try:
        if column is None:
            return SequenceTrace.from_csv(p).values
        with open(p, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or column not in reader.fieldnames:
                raise ConfigError(f"column {column!r} not in {reader.fieldnames}")
            return np.array([float(row[column]) for row in reader])
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"corrupt trace {path}: {exc}") from None


def _run_ipcheck(cfg: ExperimentConfig, out: Path) -> dict:
    sec = cfg.section
    values = _read_column(sec.input, sec.column)
    if values.size == 0 or not np.all(np.isfinite(values)):
        raise ConfigError(f"trace {sec.input} is empty or has non-finite entries")
    target = Interval(sec.target_interval) if sec.target_interval is not None else float(sec.target)
    queries = []
    for eps, dur, start in sec.queries:
        try:
            w = ip_witness(values, IpQuery(eps, dur, start, target))
            queries.append({"epsilon": eps, "duration": dur, "start": start,
                            "witness_index": w, "infeasible": False})
        except QueryInfeasible:
            queries.append({"epsilon": eps, "duration": dur, "start": start,
                            "witness_index": None, "infeasible": True})
    report = {"horizon": int(values.size), "queries": queries}
    if "json" in cfg.formats:
        _dump_json(report, out / "witness.json")
    tail = classical_tail_check(values, target, sec.queries[0][0])
    return {"kind": "ipcheck", "witness_report": report,
            "classical_tail": {"start": tail.start, "last_exceedance": tail.last_exceedance},
            "ip_profile": ip_profile(values, target, [(q[0], q[1]) for q in sec.queries]).to_dict()}


RUNNERS = {"regress": _run_regress, "pendulum": _run_pendulum,
           "dynamics": _run_dynamics, "ipcheck": _run_ipcheck}


def run(cfg: ExperimentConfig, out: str | Path | None = None) -> dict:
    """Execute an experiment and write its artifacts; returns the summary."""
    out = Path(cfg.out if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write_resolved(out / "config.resolved.json")
    try:
        # overflow surfaces through the simulators' own finiteness checks, which know the stage
        with np.errstate(over="ignore", invalid="ignore"):
            summary = RUNNERS[cfg.kind](cfg, out)
    except (NumericalFailure, ControlDiverged, dynamics.SimulationDiverged) as exc:
        raise NumericalRunError(str(exc), exc.stage) from exc
    except (FloatingPointError, NonFiniteGradient) as exc:
        raise NumericalRunError(str(exc)) from exc
    except ConfigurationError as exc:
        raise ConfigError(str(exc)) from exc
    _dump_json(summary, out / "summary.json")
    return summary


# -- replay ------------------------------------------------------------------

@dataclass
class ReplayResult:
    identical: bool
    first_mismatch_row: int | None = None
    detail: str = ""

    def __bool__(self) -> bool:
        return self.identical


def _first_mismatch(a: Path, b: Path) -> int:
    la, lb = Path(a).read_text().splitlines(True), Path(b).read_text().splitlines(True)
    for i, (x, y) in enumerate(zip(la, lb)):
        if x != y:
            return i
    return min(len(la), len(lb))


def replay_verify(trace_path, resolved_config_path) -> ReplayResult:
    """Re-run the experiment from its resolved config and compare the trace byte for byte.

    Row numbers are zero-based file lines, so row 0 is the header.
    Raises ``ConfigError`` for missing or corrupt inputs.
    """
    trace_path, resolved_config_path = Path(trace_path), Path(resolved_config_path)
    if not trace_path.is_file():
        raise ConfigError(f"trace file not found: {trace_path}")
    cfg = parse_config(load_document(resolved_config_path))
    with tempfile.TemporaryDirectory() as tmp:
        run(cfg, tmp)
        fresh = Path(tmp) / trace_path.name
        if not fresh.is_file():
            raise ConfigError(f"{trace_path.name} is not an output of this {cfg.kind} configuration")
        if filecmp.cmp(trace_path, fresh, shallow=False):
            return ReplayResult(True)
        row = _first_mismatch(trace_path, fresh)
        return ReplayResult(False, row, f"{trace_path.name} differs from the replay at row {row}")


# -- argument handling ------------------------------------------------------

def _fail(code: int, kind: str, message: str, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}), file=sys.stderr)
    return code


def _collect(args) -> dict:
    doc = load_document(args.config) if args.config else {}
    kind = args.kind or doc.get("kind")
    if args.kind and doc.get("kind") not in (None, args.kind):
        raise ConfigError(f"command line kind {args.kind!r} contradicts config kind {doc['kind']!r}")
    doc["kind"] = kind
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["out"] = args.out
    if args.format is not None:
        doc["formats"] = args.format
    block = doc.setdefault(kind, {}) if kind else {}
    if not isinstance(block, dict):
        raise ConfigError(f"[{kind}] must be a section")
    if args.scenario is not None:
        if kind != "pendulum":
            raise ConfigError("--scenario applies to pendulum runs only")
        block["scenario"] = args.scenario
    ip_flags = {"input": args.input, "column": args.column, "target": args.target,
                "target_interval": args.target_interval}
    given = {k: v for k, v in ip_flags.items() if v is not None}
    query_flags = (args.eps, args.duration, args.start)
    if given or any(v is not None for v in query_flags):
        if kind != "ipcheck":
            raise ConfigError("--input/--column/--target/--eps/--duration/--start apply to ipcheck only")
        block.update(given)
        if any(v is not None for v in query_flags):
            q = (block.get("queries") or [[0.05, 10, 1]])[0]
            q = list(q) + [1] * (3 - len(q))
            block["queries"] = [[args.eps if args.eps is not None else q[0],
                                 args.duration if args.duration is not None else q[1],
                                 args.start if args.start is not None else q[2]]]
    return doc


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ipregret", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("kind", nargs="?", choices=["regress", "pendulum", "dynamics", "ipcheck"])
    r.add_argument("--config", help="TOML or JSON experiment file")
    r.add_argument("--seed", type=_u64, help="overrides the file's seed")
    r.add_argument("--out", help="output directory")
    r.add_argument("--format", help="comma-separated subset of csv,json,plotdata")
    r.add_argument("--scenario", help="pendulum scenario name or 'all'")
    r.add_argument("--input", help="ipcheck: trace CSV")
    r.add_argument("--column", help="ipcheck: named CSV column (default: first column)")
    r.add_argument("--target", type=float, help="ipcheck: point target")
    r.add_argument("--target-interval", type=float, dest="target_interval",
                   help="ipcheck: upper end r of the interval target [0, r]")
    r.add_argument("--eps", type=float)
    r.add_argument("--duration", type=int)
    r.add_argument("--start", type=int)

    v = sub.add_parser("replay", help="re-run from a resolved config and compare a trace")
    v.add_argument("--trace", required=True)
    v.add_argument("--config", required=True, help="config.resolved.json written by run")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "replay":
            res = replay_verify(args.trace, args.config)
            print(json.dumps({"identical": res.identical, "first_mismatch_row": res.first_mismatch_row,
                              "detail": res.detail}))
            return EXIT_OK if res.identical else EXIT_MISMATCH
        cfg = parse_config(_collect(args))
        summary = run(cfg)
        print(json.dumps({"out": cfg.out, "kind": cfg.kind,
                          "comparison": summary.get("comparison")} if cfg.kind == "pendulum"
                         else {"out": cfg.out, "kind": cfg.kind}))
        return EXIT_OK
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "invalid_config", str(exc))
    except NumericalRunError as exc:
        return _fail(EXIT_NUMERIC, "numerical_failure", str(exc), stage=exc.stage)


if __name__ == "__main__":
    sys.exit(main())

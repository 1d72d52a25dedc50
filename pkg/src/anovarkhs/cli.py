"""Command-line entry point.

    anovarkhs {fit,tune,simulate,sweep,probe} [--config FILE] [--out DIR]
              [--seed N] [--jobs N] [--override key=value ...]

Every run writes ``manifest.json`` first, then its results, then
``outputs.json`` listing result hashes. Exit codes: 0 ok, 2 invalid config,
3 numerical failure, 4 I/O failure (1 for anything unexpected); failures print one JSON error record on
stderr (and to ``error.json`` when the output directory exists).
"""
from __future__ import annotations

import argparse
import platform
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from ._io import dumps, read_matrix, sha256_file, write_csv, write_json
from ._rng import RNG_ALGORITHM, make_generator
from .bench import Scenario, make_dataset, make_truth, rate_sweep
from .config import COMMANDS, PROBE_DEFAULTS, ConfigError, RunConfig, apply_overrides, parse_config
from .estimator import fit, rescale_fit
from .kernels import DegenerateKernelError, anova_gram
from .probes import (InsufficientDataError, PointSet, concentration_probe, covering_bounds,
                     sudakov_probe)
from .rates import TuningTable, tuning_table

EXIT_OK, EXIT_INTERNAL, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3, 4


class NumericalFailure(RuntimeError):
    pass


def _versions() -> dict:
    import matplotlib
    import scipy

    return {
        "anovarkhs": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "matplotlib": matplotlib.__version__,
        "pyyaml": yaml.__version__,
    }


def write_manifest(out: Path, cfg: RunConfig, inputs: dict) -> Path:
    manifest = {
        "command": cfg.command,
        "config": cfg.to_dict(),
        "config_hash": cfg.content_hash(),
        "inputs": inputs,
        "rng": RNG_ALGORITHM,
        "versions": _versions(),
        "created_utc": datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ"),
    }
    return write_json(out / "manifest.json", manifest)


# ------------------------------------------------------------------ data

def _load_data(cfg: RunConfig, sc: Scenario):
    """Design and response from files, or replicate 0 of the scenario."""
    if "design" in cfg.data:
        X = read_matrix(cfg.data["design"])
        if X.shape[1] != sc.d:
            raise ConfigError(f"design has {X.shape[1]} columns, scenario.d = {sc.d}")
        Y = None
        if "response" in cfg.data:
            Y = read_matrix(cfg.data["response"]).ravel()
            if Y.size != X.shape[0]:
                raise ConfigError(f"response has {Y.size} values, design has {X.shape[0]} rows")
        return X, Y
    X, Y, _ = make_dataset(sc, 0)
    return X, Y


def _tuning(sc: Scenario, grams, n: int) -> TuningTable:
    if sc.tuning_mode == "manual":
        return TuningTable.constant(grams.groups, sc.mu, sc.gamma)
    return tuning_table(grams, sc.rate_params(n))


def _input_hashes(cfg: RunConfig) -> dict:
    return {k: sha256_file(v) for k, v in sorted(cfg.data.items())}


# -------------------------------------------------------------- commands

def cmd_tune(cfg: RunConfig, out: Path) -> list:
    sc = cfg.build_scenario()
    X, _ = _load_data(cfg, sc)
    grams = anova_gram(sc.kernel, X, sc.groups)
    tab = _tuning(sc, grams, grams.n)
    body = {"n": grams.n, "d": grams.d, "kernel": sc.kernel.to_dict(), "design_hash": grams.content_hash}
    body.update(tab.to_dict())
    return [write_json(out / "tuning.json", body)]


def cmd_fit(cfg: RunConfig, out: Path) -> list:
    sc = cfg.build_scenario()
    X, Y = _load_data(cfg, sc)
    if Y is None:
        raise ConfigError("fit needs data.response when data.design is given")
    grams = anova_gram(sc.kernel, X, sc.groups)
    tab = _tuning(sc, grams, grams.n)
    if sc.tuning_mode == "theory" and sc.sigma > 0:
        res = rescale_fit(Y, sc.sigma, grams, tab, sc.fit, sc.radius)
    else:
        res = fit(Y, grams, tab, sc.fit, sc.radius)
    if not np.all(np.isfinite(res.objective_trace)):
        raise NumericalFailure("objective became non-finite")
    model = res.model.to_dict()
    model["kernel"] = sc.kernel.to_dict()
    paths = [write_json(out / "model.json", model)]
    paths.append(write_csv(out / "fit_trace.csv",
                           [{"sweep": i, "objective": v} for i, v in enumerate(res.objective_trace)]))
    active = set(res.active_set)
    rows = []
    for g, (emp, hil) in zip(res.model.groups, res.model.norms):
        kind, val = res.stationarity.get(g.label, ("", float("nan")))
        rows.append({"group": g.label, "active": g in active, "norm_empirical": emp,
                     "norm_hilbert": hil, "stationarity_kind": kind, "stationarity_value": val})
    paths.append(write_csv(out / "fit_groups.csv", rows))
    paths.append(write_json(out / "fit_summary.json", {
        "active_set": [g.label for g in res.active_set],
        "converged": res.converged,
        "sweeps_used": res.sweeps_used,
        "binding": res.binding,
        "objective": res.objective_trace[-1],
        "intercept": res.model.f0,
        "tuning": tab.to_dict(),
    }))
    return paths


def cmd_simulate(cfg: RunConfig, out: Path) -> list:
    sc = cfg.build_scenario()
    truth = make_truth(sc.truth, sc.d, sc.kernel, sc.expressions)
    header = [f"x{a + 1}" for a in range(sc.d)] + ["m", "y"]
    paths = []
    for rep in range(sc.replicates):
        X, Y, m = make_dataset(sc, rep, truth=truth)
        rows = [list(x) + [mi, yi] for x, mi, yi in zip(X, m, Y)]
        paths.append(write_csv(out / f"dataset_{rep:03d}.csv", rows, header))
    paths.append(write_json(out / "truth.json", {"truth": sc.truth, "m0": truth.m0,
                                                 "components": [g.label for g in truth.component_groups],
                                                 "support": [g.label for g in truth.support()]}))
    return paths


def cmd_sweep(cfg: RunConfig, out: Path) -> list:
    from .plotting import sweep_figure

    sc = cfg.build_scenario()
    res = rate_sweep(sc, jobs=cfg.jobs)
    rows = []
    for r in res["rows"]:
        rows.append({k: (";".join(v) if isinstance(v, list) else v) for k, v in r.items() if k != "tuning"})
    paths = [write_csv(out / "sweep_rows.csv", rows)]
    per_n = [{k: v for k, v in p.items() if k != "tuning"} for p in res["per_n"]]
    paths.append(write_csv(out / "sweep_per_n.csv", per_n))
    summary = {k: v for k, v in res.items() if k not in ("rows", "per_n")}
    summary["per_n"] = per_n
    paths.append(write_json(out / "sweep_summary.json", summary))
    paths.append(sweep_figure(res, out / "sweep.png"))
    return paths


def _probe_cfg(cfg: RunConfig) -> dict:
    kind = cfg.probe["kind"]
    p = dict(PROBE_DEFAULTS[kind])
    p.update({k: v for k, v in cfg.probe.items() if k != "kind"})
    return p


def cmd_probe(cfg: RunConfig, out: Path) -> list:
    from . import plotting

    kind = cfg.probe["kind"]
    p = _probe_cfg(cfg)
    paths = []
    if kind == "concentration":
        rec = concentration_probe(float(p["alpha"]), int(p["n"]), p["phi"], int(p["n_mc"]), cfg.seed,
                                  grid_size=int(p["grid_size"]), min_exceed=int(p["min_exceed"]),
                                  standardize=bool(p["standardize"]))
        rows = [{"probe": "concentration", "alpha": p["alpha"], "n": p["n"], "phi": p["phi"],
                 "u": u, "tail": t, "fitted_log_tail": rec["intercept"] + rec["slope"] * u * u,
                 "resolved": ok}
                for u, t, ok in zip(rec["u"], rec["tail"], rec.get("resolved", [False] * len(rec["u"])))]
        paths.append(write_csv(out / "probe_concentration.csv", rows))
        summary = {k: v for k, v in rec.items() if k not in ("u", "tail", "resolved")}
        paths.append(write_json(out / "probe_summary.json", {"kind": kind, "params": p, **summary}))
        paths.append(plotting.concentration_figure(rec, out / "probe_concentration.png"))
        return paths
    rng = make_generator(cfg.seed, 1)
    if kind == "covering":
        T = PointSet(rng.uniform(size=(int(p["n_points"]), int(p["dim"]))))
        rows = []
        for delta in sorted(float(x) for x in p["deltas"]):
            b = covering_bounds(T, delta)
            rows.append({"probe": "covering", "delta": delta, "proper": b.proper, "lower": b.lower,
                         "half_lower": b.half_lower, "exact": b.exact,
                         "sandwich_holds": b.lower <= b.proper <= b.half_lower})
        paths.append(write_csv(out / "probe_covering.csv", rows))
        paths.append(write_json(out / "probe_summary.json",
                                {"kind": kind, "params": p, "diameter": T.diameter,
                                 "all_sandwich": all(r["sandwich_holds"] for r in rows)}))
        paths.append(plotting.covering_figure(rows, out / "probe_covering.png"))
        return paths
    # sudakov: points drawn uniformly from the unit ball
    g = rng.standard_normal((int(p["n_points"]), int(p["dim"])))
    radii = rng.uniform(size=(g.shape[0], 1)) ** (1.0 / g.shape[1])
    T = PointSet(radii * g / np.linalg.norm(g, axis=1, keepdims=True))
    rec = sudakov_probe(T, float(p["alpha"]), int(p["n_mc"]), [float(x) for x in p["deltas"]], cfg.seed)
    rows = [{"probe": "sudakov", "alpha": p["alpha"], **r} for r in rec["rows"]]
    paths.append(write_csv(out / "probe_sudakov.csv", rows))
    paths.append(write_json(out / "probe_summary.json",
                            {"kind": kind, "params": p, "M": rec["M"], "M_se": rec["M_se"]}))
    paths.append(plotting.sudakov_figure(rec, out / "probe_sudakov.png"))
    return paths


HANDLERS = {"tune": cmd_tune, "fit": cmd_fit, "simulate": cmd_simulate, "sweep": cmd_sweep,
            "probe": cmd_probe}


# ------------------------------------------------------------------ main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="anovarkhs", description="RKHS ANOVA ridge group sparse estimation.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="YAML or JSON run config")
        sp.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--jobs", type=int)
        sp.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    return parser


def _error(code: int, exc: BaseException, command, out: Path | None) -> int:
    kind = {EXIT_CONFIG: "invalid_config", EXIT_NUMERIC: "numerical_failure", EXIT_IO: "io_failure",
            EXIT_INTERNAL: "internal_error"}[code]
    record = {"status": "error", "exit_code": code, "kind": kind, "command": command,
              "error_type": type(exc).__name__, "message": str(exc)}
    sys.stderr.write(dumps(record, indent=0).replace("\n", "") + "\n")
    if out is not None and out.is_dir():
        try:
            write_json(out / "error.json", record)
        except OSError:
            pass
    return code


def _resolve(args) -> RunConfig:
    doc = {}
    if args.config is not None:
        text = args.config.read_text(encoding="utf-8")
        try:
            doc = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a mapping")
    if doc.get("command", args.command) != args.command:
        raise ConfigError(f"config is for {doc['command']!r}, invoked as {args.command!r}")
    doc["command"] = args.command
    doc = apply_overrides(doc, args.override)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.jobs is not None:
        doc["jobs"] = args.jobs
    if args.out is not None:
        doc["output_dir"] = str(args.out)
    return parse_config(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = None
    try:
        cfg = _resolve(args)
        out = Path(cfg.output_dir)
        inputs = _input_hashes(cfg)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, exc, args.command, None)
    except OSError as exc:
        return _error(EXIT_IO, exc, args.command, None)
    try:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, cfg, inputs)
        paths = HANDLERS[cfg.command](cfg, out)
        write_json(out / "outputs.json", {p.name: sha256_file(p) for p in paths})
    except ConfigError as exc:
        return _error(EXIT_CONFIG, exc, args.command, out)
    except OSError as exc:
        return _error(EXIT_IO, exc, args.command, out)
    except (NumericalFailure, DegenerateKernelError, InsufficientDataError, ArithmeticError,
            np.linalg.LinAlgError, RuntimeError, ValueError) as exc:
        return _error(EXIT_NUMERIC, exc, args.command, out)
    except Exception as exc:  # noqa: BLE001 - still emit a record
        return _error(EXIT_INTERNAL, exc, args.command, out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

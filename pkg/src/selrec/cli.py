"""Command-line driver: ``selrec {weights,select,simulate,fit,replay}``.

Each run reads an optional YAML/JSON config (``--spec``), overlays the common
flags, fills in defaults and writes its outputs plus ``manifest.json`` into
``--out``. The manifest holds the fully resolved config, so passing it back
as ``--spec`` (or to ``selrec replay``) reproduces the CSVs byte for byte.
"""

from __future__ import annotations

import argparse
import copy
import csv
import datetime as _dt
import hashlib
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import InfeasibleCohort, InvalidConfig, SelrecError, TooManyStrata
from .models import fit_cox, fit_logistic
from .pool import (
    BinaryOutcome,
    CovariateSpec,
    apply_scaling,
    fit_scaling,
    format_value,
    ingest_csv,
)
from .recruit import Protocol, pool_weights, select
from .simulate.ehr import ehr_generator, run_ehr_study, synthetic_ehr_pool
from .simulate.experiments import run_power_experiment, run_unmeasured_covariate_experiment
from .simulate.generators import (
    DEFAULT_CELLS,
    GeneratorConfig,
    Logistic,
    OneContinuous,
    TwoBinary,
)

MANIFEST = "manifest.json"
U64_MAX = 2**64 - 1
DEFAULT_GRID = list(range(100, 1001, 100))

COMMON_DEFAULTS = {"seed": 0, "threads": 1}
COMMAND_DEFAULTS = {
    "weights": {"pool": None, "covariates": None, "outcome": None, "weight_covariates": None},
    "select": {"pool": None, "covariates": None, "outcome": None, "weight_covariates": None,
               "protocol": "mixed", "n": None},
    "fit": {"pool": None, "covariates": None, "outcome": None, "level": 0.95,
            "ties": "efron", "scale": False},
    "simulate": {"preset": None, "R": 1000, "alpha": 0.05},
}

PRESETS = {
    "binary-power": {
        "generator": GeneratorConfig(10_000, TwoBinary(DEFAULT_CELLS), Logistic(-1 / 6, (1 / 3, 1 / 3))).to_dict(),
        "protocols": ["random", "marginal", "joint"],
        "n_grid": DEFAULT_GRID,
        "fixed_pool": False,
    },
    "continuous-power": {
        "generator": GeneratorConfig(10_000, OneContinuous(0.0, 0.608), Logistic(-0.5, (-0.25,))).to_dict(),
        "protocols": ["random", "continuous"],
        "n_grid": sorted(DEFAULT_GRID + [275]),
        "fixed_pool": False,
    },
    "type1": {
        "generator": GeneratorConfig(10_000, TwoBinary(DEFAULT_CELLS), Logistic(-1 / 6, (1 / 3, 0.0))).to_dict(),
        "protocols": ["random", "marginal", "joint"],
        "n_grid": DEFAULT_GRID,
        "fixed_pool": False,
    },
    "unmeasured": {
        "pool_size": 10_000,
        "cells": list(DEFAULT_CELLS),
        "n_grid": DEFAULT_GRID,
    },
    "ehr-study": {
        "generator": ehr_generator().to_dict(),
        "n_subpools": 10,
        "cohort_n": 1000,
        "scale": True,
    },
}
CUSTOM_DEFAULTS = {"protocols": ["random", "mixed"], "n_grid": DEFAULT_GRID, "fixed_pool": False}

REMEDIATION = {
    InfeasibleCohort: "reduce n to at most the number of individuals with positive weight",
    TooManyStrata: "balance on fewer binary covariates or use the marginal protocol",
}


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def load_config(path) -> dict:
    """Parse a YAML or JSON config; a manifest is accepted via its ``config`` key."""
    with open(path, encoding="utf-8") as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"{path}:{mark.line + 1}" if mark else str(path)
            raise InvalidConfig(f"{where}: {getattr(exc, 'problem', exc)}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise InvalidConfig(f"{path}: top level must be a mapping")
    if "config" in data and isinstance(data["config"], dict):
        data = dict(data["config"], command=data.get("command"))
    return data


def parse_specs(raw) -> list[CovariateSpec]:
    """Covariate specs from a list of {name, kind} or a mapping name -> kind."""
    if raw is None:
        raise InvalidConfig("config must list 'covariates' with their kinds")
    items = raw.items() if isinstance(raw, dict) else ((d.get("name"), d.get("kind")) for d in raw)
    try:
        return [CovariateSpec(str(name), kind) for name, kind in items]
    except (ValueError, AttributeError) as exc:
        raise InvalidConfig(f"bad covariate spec: {exc}") from None


def resolve(command: str, file_cfg: dict, args: argparse.Namespace) -> dict:
    cfg = dict(COMMON_DEFAULTS)
    cfg.update(copy.deepcopy(COMMAND_DEFAULTS[command]))
    if command == "simulate":
        preset = args.preset or file_cfg.get("preset")
        if preset is not None:
            if preset not in PRESETS:
                raise InvalidConfig(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
            cfg.update(copy.deepcopy(PRESETS[preset]))
        else:
            cfg.update(copy.deepcopy(CUSTOM_DEFAULTS))
    cfg.update({k: v for k, v in file_cfg.items() if k != "command"})
    for key in ("pool", "seed", "threads", "preset", "protocol", "n", "R"):
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if "covariates" in cfg and cfg["covariates"] is not None:
        cfg["covariates"] = [{"name": s.name, "kind": s.kind.value} for s in parse_specs(cfg["covariates"])]
    seed = cfg["seed"]
    if not isinstance(seed, int) or not 0 <= seed <= U64_MAX:
        raise InvalidConfig(f"seed must be an integer in [0, 2**64), got {seed!r}")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise InvalidConfig("threads must be a positive integer")
    return cfg


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _num(v) -> str:
    v = float(v)
    return "nan" if math.isnan(v) else repr(v)


def write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg: dict, outputs: list[Path], extra: dict | None = None):
    manifest = {
        "command": command,
        "config": cfg,
        "selrec_version": __version__,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    if cfg.get("pool"):
        manifest["pool_sha256"] = _sha256(Path(cfg["pool"]))
    manifest.update(extra or {})
    with open(out / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _plot(path: Path, result, metric: str, ylabel: str, unit_range: bool) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "selrec", "svg.fonttype": "path"}):
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for label in result.labels:
            v, se = result.curve(label, metric)
            ax.errorbar(result.n_grid, v, yerr=2 * se, marker="o", ms=3, capsize=2, label=label)
        ax.set_xlabel("cohort size n")
        ax.set_ylabel(ylabel)
        if unit_range:
            ax.set_ylim(0, 1)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def _load_pool(cfg):
    """Pool from config; ``outcome`` names the outcome columns present in the file, if any."""
    if not cfg.get("pool"):
        raise InvalidConfig("no pool given; pass --pool or set 'pool' in the config")
    return ingest_csv(cfg["pool"], parse_specs(cfg["covariates"]), cfg.get("outcome"))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_weights(cfg: dict, out: Path) -> dict:
    pool = _load_pool(cfg)
    w = pool_weights(pool, cfg["weight_covariates"])
    path = out / "weights.csv"
    write_rows(path, ["row_id", "unnormalized", "normalized"],
               ((i, _num(a), _num(b)) for i, (a, b) in enumerate(zip(w.unnormalized, w.normalized))))
    return {"outputs": [path]}


def cmd_select(cfg: dict, out: Path) -> dict:
    if cfg["n"] is None:
        raise InvalidConfig("cohort size 'n' is required (config key or --n)")
    pool = _load_pool(cfg)
    protocol = Protocol(cfg["protocol"])
    cohort = select(pool, protocol, int(cfg["n"]), cfg["seed"], cfg["weight_covariates"])
    path = out / "cohort.csv"
    write_rows(path, ["row_id"] + pool.names,
               ([i] + [format_value(v) for v in pool.records[i]] for i in cohort.indices))
    return {"outputs": [path], "extra": {"imperfect_balance": cohort.imperfect}}


def cmd_fit(cfg: dict, out: Path) -> dict:
    if cfg["outcome"] is None:
        raise InvalidConfig("'outcome' must be 'binary' (logistic) or 'survival' (Cox)")
    pool = _load_pool(cfg)
    if cfg["scale"]:
        pool = apply_scaling(pool, fit_scaling(pool))
    if isinstance(pool.outcome, BinaryOutcome):
        model = fit_logistic(pool.records, pool.outcome.y, pool.names)
    else:
        model = fit_cox(pool.records, pool.outcome.time, pool.outcome.event, pool.names, cfg["ties"])
    path = out / "report.csv"
    write_report(path, model, cfg["level"])
    return {"outputs": [path], "extra": {"converged": model.converged, "iterations": model.iterations}}


def write_report(path: Path, model, level: float) -> None:
    ci = model.confidence_intervals(level)
    write_rows(path, ["covariate", "inferred_beta", "lower_ci", "upper_ci", "p_value"],
               ((nm, _num(b), _num(lo), _num(hi), _num(p)) for nm, b, (lo, hi), p
                in zip(model.names, model.coefficients, ci, model.p_values)))


def cmd_simulate(cfg: dict, out: Path) -> dict:
    preset = cfg.get("preset")
    if preset == "ehr-study":
        return _simulate_ehr(cfg, out)
    if preset == "unmeasured":
        result = run_unmeasured_covariate_experiment(
            cfg["R"], cfg["n_grid"], cfg["seed"], cfg["alpha"], cfg["threads"],
            cfg["pool_size"], cfg["cells"])
    else:
        if not cfg.get("generator"):
            raise InvalidConfig("a custom simulation needs a 'generator' section or a preset")
        gen = GeneratorConfig.from_dict(cfg["generator"])
        result = run_power_experiment(gen, cfg["protocols"], cfg["n_grid"], cfg["R"], cfg["alpha"],
                                      cfg["seed"], cfg["fixed_pool"], cfg["threads"], preset or "custom")
    records = result.to_records()
    path = out / "results.csv"
    write_rows(path, ["protocol", "n", "metric", "value", "mc_se", "replications"],
               ((p, n, m, _num(v), _num(se), r) for p, n, m, v, se, r in records))
    outputs = [path]
    first = result.cell(result.labels[0], result.n_grid[0])
    plots = [("mse", "coefficient MSE", False)]
    if first.power is not None:
        plots.insert(0, ("power", "power", True))
    if first.type1 is not None:
        plots.append(("type1", "type I error rate", True))
    for metric, ylabel, unit in plots:
        svg = out / f"{metric}.svg"
        _plot(svg, result, metric, ylabel, unit)
        outputs.append(svg)
    rates = [r[3] for r in records if r[2] == "fit_failure_rate"]
    return {"outputs": outputs, "extra": {"fit_failure_rate": max(rates) if rates else 0.0}}


def _simulate_ehr(cfg: dict, out: Path) -> dict:
    gen = GeneratorConfig.from_dict(cfg["generator"])
    pool = synthetic_ehr_pool(cfg["seed"], gen, scale=cfg["scale"])
    result = run_ehr_study(pool, cfg["n_subpools"], cfg["cohort_n"], cfg["alpha"], cfg["seed"])
    path = out / "results.csv"
    write_rows(path, ["protocol", "n", "metric", "value", "mc_se", "replications"],
               ((p, n, m, _num(v), _num(se), r) for p, n, m, v, se, r in result.to_records()))
    per = out / "subpools.csv"
    write_rows(per, ["subpool", "protocol"] + list(result.METRICS),
               ([e.subpool, e.protocol] + [_num(getattr(e, m)) for m in result.METRICS]
                for e in result.evaluations))
    ref = out / "reference.csv"
    write_report(ref, result.reference, 1 - cfg["alpha"])
    return {"outputs": [path, per, ref],
            "extra": {"event_fraction": float(np.mean(pool.outcome.event))}}


COMMANDS = {"weights": cmd_weights, "select": cmd_select, "fit": cmd_fit, "simulate": cmd_simulate}


def run(command: str, cfg: dict, out) -> Path:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = COMMANDS[command](cfg, out)
    write_manifest(out, command, cfg, res["outputs"], res.get("extra"))
    return out


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--spec", help="YAML/JSON config, or a manifest.json to replay")
    common.add_argument("--pool", help="pool CSV (overrides the config)")
    common.add_argument("--seed", type=_u64, help="master seed, unsigned 64-bit")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--threads", type=int, help="worker processes for simulations")

    parser = argparse.ArgumentParser(prog="selrec", description="Selective recruitment of cohorts.")
    parser.add_argument("--version", action="version", version=f"selrec {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("weights", parents=[common], help="per-individual recruitment weights")
    p = sub.add_parser("select", parents=[common], help="draw a cohort")
    p.add_argument("--protocol", choices=[p.value for p in Protocol])
    p.add_argument("--n", type=int, help="cohort size")
    p = sub.add_parser("simulate", parents=[common], help="Monte-Carlo experiments")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("-R", type=int, dest="R", help="replications")
    sub.add_parser("fit", parents=[common], help="logistic or Cox fit report")
    p = sub.add_parser("replay", help="re-run a manifest into a new directory")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "replay":
            file_cfg = load_config(args.manifest)
            command = file_cfg.pop("command", None)
            if command not in COMMANDS:
                raise InvalidConfig(f"{args.manifest}: not a selrec manifest")
            run(command, file_cfg, args.out)
            return 0
        file_cfg = load_config(args.spec) if args.spec else {}
        if file_cfg.get("command") not in (None, args.command):
            raise InvalidConfig(f"{args.spec} was written by '{file_cfg['command']}', not '{args.command}'")
        cfg = resolve(args.command, file_cfg, args)
        run(args.command, cfg, args.out)
    except SelrecError as exc:
        msg = str(exc)
        for cls, hint in REMEDIATION.items():
            if isinstance(exc, cls):
                msg += f" (hint: {hint})"
        print(f"selrec: error: {msg}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"selrec: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

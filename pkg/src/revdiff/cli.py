"""Command-line entry point.

Every run subcommand builds an engine config from an optional JSON config
file whose keys are the engine config field names, then applies any flags
given on the command line on top.  Outputs land under ``--out`` as
``flow.csv``, ``trajectories.jsonl`` and ``summary.json``.

Exit codes: 0 success, 1 validation error, 2 protocol failure (teleport
budget exceeded), 3 verify-suite failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .channel import ChannelConfig
from .depolarizing import DepolarizingConfig
from .ensemble import KINDS, EnsembleSpec, config_from_dict, run_ensemble
from .gates import GateConfig, ThetaSampler
from .verify import run_checks

EXIT_OK, EXIT_INVALID, EXIT_PROTOCOL, EXIT_VERIFY = 0, 1, 2, 3

# subcommand -> (ensemble kind, segment)
COMMANDS = {
    "forward": ("channel", "forward"),
    "reverse": ("channel", "cycle"),
    "sme": ("sme", "cycle"),
    "depol-forward": ("depolarizing", "forward"),
    "depol-reverse": ("depolarizing", "cycle"),
    "gate": ("gate", "cycle"),
    "teleport": ("teleport", "cycle"),
}
RUNNER_KEYS = ("kind", "n_traj", "base_seed", "initial", "time_grid", "epsilon", "out", "workers", "grid_points")
CONFIG_CLASSES = {"channel": ChannelConfig, "depolarizing": DepolarizingConfig, "gate": GateConfig,
                  "teleport": ChannelConfig, "sme": ChannelConfig}


class UsageError(Exception):
    """Invalid arguments or configuration (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _add_run_flags(sp: argparse.ArgumentParser):
    # all defaults are None so that absent flags never override the config file
    sp.add_argument("--config", help="JSON file with engine config field names")
    sp.add_argument("--p", type=float, help="noise strength")
    sp.add_argument("--T", type=float, help="half horizon")
    sp.add_argument("--dt", type=float, help="time step")
    sp.add_argument("--seed", type=int, help="base seed")
    sp.add_argument("--traj", type=int, help="number of trajectories")
    sp.add_argument("--pauli", help="Pauli word, e.g. X or XZ")
    sp.add_argument("--mode", choices=("dissipative", "conserving"))
    sp.add_argument("--theta", type=float, help="gate angle in radians")
    sp.add_argument("--epsilon", type=float, help="teleport failure target")
    sp.add_argument("--stepper", choices=("exact", "em"))
    sp.add_argument("--initial", help="zero, haar, or a JSON list of amplitudes")
    sp.add_argument("--grid-points", type=int, dest="grid_points", help="output samples per run (default 101)")
    sp.add_argument("--out", help="output directory")
    sp.add_argument("--workers", type=int, help="worker processes")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="revdiff", description="Reverse quantum diffusion simulator")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        _add_run_flags(sub.add_parser(name, help=f"run the {name} experiment"))
    ens = sub.add_parser("ensemble", help="run an ensemble of any engine")
    _add_run_flags(ens)
    ens.add_argument("--kind", choices=KINDS)
    ens.add_argument("--segment", choices=("cycle", "forward"))
    sub.add_parser("verify", help="run the invariant suite")
    return parser


def load_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    return data


FLAG_KEYS = {"traj": "n_traj", "seed": "seed"}


def merge_settings(args: argparse.Namespace) -> dict:
    """Config file values, then flags on top."""
    settings = load_config(args.config) if args.config else {}
    for key, value in vars(args).items():
        if key in ("command", "config") or value is None:
            continue
        settings[FLAG_KEYS.get(key, key)] = value
    return settings


def _initial(value):
    if value is None or value in ("zero", "haar"):
        return value or "zero"
    if isinstance(value, str):
        try:
            value = json.loads(value)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--initial must be zero, haar or a JSON amplitude list: {exc}") from exc
    return value


def build_spec(command: str, settings: dict) -> tuple[EnsembleSpec, dict]:
    """Validate merged settings and return the ensemble spec and runner options."""
    settings = dict(settings)
    if command == "ensemble":
        kind = settings.pop("kind", None)
        if kind is None:
            raise UsageError("ensemble needs a kind (--kind or config)")
        segment = settings.pop("segment", "cycle")
    else:
        kind, segment = COMMANDS[command]
        settings.pop("kind", None)
        settings.pop("segment", None)
    runner = {k: settings.pop(k) for k in RUNNER_KEYS if k in settings}
    if "theta_sampler" in settings and isinstance(settings["theta_sampler"], dict):
        settings["theta_sampler"] = ThetaSampler(**settings["theta_sampler"])
    cls = CONFIG_CLASSES[kind]
    allowed = {f.name for f in fields(cls)}
    unknown = sorted(set(settings) - allowed)
    if unknown:
        raise UsageError(f"unknown settings for {kind}: {', '.join(unknown)}")
    try:
        cfg = config_from_dict(kind, settings)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid {kind} config: {exc}") from exc
    if kind == "depolarizing" and segment == "cycle" and not cfg.in_accuracy_regime:
        raise UsageError(f"depolarizing reverse needs pT < 1 (got pT = {cfg.p * cfg.T:g})")

    n = int(runner.get("grid_points", 101))
    if n < 2:
        raise UsageError("grid_points must be at least 2")
    span = (0.0, cfg.T) if segment == "forward" else ((cfg.T, 2 * cfg.T) if kind == "gate" else (0.0, 2 * cfg.T))
    grid = runner.get("time_grid", list(np.linspace(*span, n)))
    initial = _initial(runner.get("initial"))
    if not isinstance(initial, str):
        amps = np.asarray(initial, dtype=float)
        size = amps.size // 2 if amps.ndim == 2 else amps.size
        if size != 2 ** (1 if kind == "depolarizing" else cfg.pauli.m) or not np.any(amps):
            raise UsageError("initial amplitudes must be a nonzero vector of length 2^m")
    try:
        spec = EnsembleSpec(
            kind=kind,
            config=cfg,
            n_traj=int(runner.get("n_traj", 1)),
            base_seed=int(runner.get("base_seed", settings.get("seed", 0))),
            initial=initial,
            time_grid=grid,
            epsilon=float(runner.get("epsilon", 1e-3)),
            segment=segment,
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    workers = int(runner.get("workers", 1))
    if workers < 1:
        raise UsageError("workers must be at least 1")
    return spec, {"out": runner.get("out"), "workers": workers}


def _report(result, out) -> None:
    s = result.summary
    tf = s["terminal_fidelity"]
    line = f"{s['kind']} n={s['n_traj']}: terminal fidelity mean={tf['mean']} min={tf['min']}"
    print(line)
    if out:
        print(f"outputs written to {out}")


def _cmd_run(command: str, args) -> int:
    spec, opts = build_spec(command, merge_settings(args))
    result = run_ensemble(spec, workers=opts["workers"], out=opts["out"])
    _report(result, opts["out"])
    if spec.kind == "teleport" and result.summary["teleport"]["failed_runs"]:
        failed = result.summary["teleport"]["failed_runs"]
        print(f"teleport protocol failed on {failed} of {spec.n_traj} runs (attempt budget exceeded)", file=sys.stderr)
        return EXIT_PROTOCOL
    return EXIT_OK


def _cmd_verify() -> int:
    results = run_checks()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail} ({r.seconds:.1f} s)")
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "verify":
            return _cmd_verify()
        return _cmd_run(args.command, args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

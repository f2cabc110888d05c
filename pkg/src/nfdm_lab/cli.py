"""Command-line entry point: ``nfdm-lab <experiment> [options]``.

Configuration is layered: the experiment preset, then the ``--config`` JSON
file, then individual ``--key.path value`` flags (for example
``--link.n-spans 6`` or ``--power-sweep -8,-6``).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .errors import ConfigError, ConvergenceError, NumericalDomainError
from .experiments import Experiment, ExperimentConfig, default_threads, preset, run_experiment
from .signal import LinkConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

COMMANDS = {
    "compare-b-qc": Experiment.COMPARE_B_QC,
    "eta-sweep": Experiment.ETA_SWEEP,
    "entropy": Experiment.ENTROPY_STUDY,
    "b2b": Experiment.B2B_DISTORTION,
    "dbp": Experiment.DBP_RESIDUAL,
}

_LIST_KEYS = {"power_sweep", "etas", "modulations", "scenarios"}


class _ConfigArgumentError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ConfigArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nfdm-lab", description="Dual-polarisation NFDM simulation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, exp in COMMANDS.items():
        p = sub.add_parser(name, help=f"run the {exp.value} experiment")
        p.add_argument("--config", type=Path, help="JSON configuration file")
        p.add_argument("--seed", type=int)
        p.add_argument("--desk-scale", action="store_true", default=None, help="reduced statistics preset (default)")
        p.add_argument("--full-scale", action="store_false", dest="desk_scale", help="full statistics preset")
        p.add_argument("--out", type=Path, help="output directory")
        p.add_argument("--threads", type=int)
        p.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS)
    return parser


def _parse_value(key: str, text: str):
    if key in _LIST_KEYS:
        items = [t for t in text.split(",") if t]
        if key in ("modulations", "scenarios"):
            return items
        return [float(t) for t in items]
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(extra: list[str]) -> dict:
    """Turn ``--a.b-c value`` pairs into a nested dict ``{"a": {"b_c": value}}``."""
    out: dict = {}
    i = 0
    while i < len(extra):
        flag = extra[i]
        if not flag.startswith("--") or len(flag) == 2:
            raise ConfigError(f"unexpected argument {flag!r}")
        if "=" in flag:
            flag, text = flag.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(extra):
                raise ConfigError(f"missing value for {flag}")
            text = extra[i + 1]
            i += 2
        path = [p.replace("-", "_") for p in flag[2:].split(".")]
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"conflicting override for {flag}")
        node[path[-1]] = _parse_value(path[-1], text)
    return out


def _merge(base: dict, update: dict) -> dict:
    merged = dict(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(merged.get(k), dict):
            merged[k] = _merge(merged[k], v)
        else:
            merged[k] = v
    return merged


def resolve_config(args: argparse.Namespace, extra: list[str]) -> ExperimentConfig:
    experiment = COMMANDS[args.command]
    file_cfg: dict = {}
    if args.config is not None:
        try:
            file_cfg = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ConfigError("the configuration file must hold a JSON object")
        if file_cfg.get("experiment", experiment.value) != experiment.value:
            raise ConfigError(f"configuration file is for {file_cfg['experiment']}, not {experiment.value}")
    desk = args.desk_scale if args.desk_scale is not None else file_cfg.get("desk_scale", True)
    d = _merge(preset(experiment, desk), file_cfg)
    d = _merge(d, parse_overrides(extra))
    d["desk_scale"] = desk
    if args.seed is not None:
        d["seed"] = args.seed
    if args.out is not None:
        d["output_dir"] = str(args.out)
    d["threads"] = args.threads if args.threads is not None else d.get("threads") or default_threads()
    if "link" in d:
        d["link"] = _merge({f.name: getattr(LinkConfig(), f.name) for f in dataclasses.fields(LinkConfig)}, d["link"])
    return ExperimentConfig.from_dict(d)


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        args, extra = build_parser().parse_known_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )
        cfg = resolve_config(args, extra)
    except ConfigError as exc:
        print(f"nfdm-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows = run_experiment(cfg)
    except ConfigError as exc:
        print(f"nfdm-lab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalDomainError, ConvergenceError, ArithmeticError) as exc:
        print(f"nfdm-lab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"{len(rows)} rows written to {Path(cfg.output_dir) / cfg.experiment.value}.csv")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

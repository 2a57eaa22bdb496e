"""Command-line entry point: ``indfind <command> [options]``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import warnings
from pathlib import Path

from .errors import ConfigError, IndfindError
from .pipeline import (EXIT_CONFIG, EXIT_OK, RunConfig, cmd_ablate, cmd_grid, cmd_project, cmd_run,
                       describe_keys, exit_code_for, read_config_file)
from .synth import SynthConfig, generate_cohort

log = logging.getLogger("indfind")

SYNTH_RUN_CONFIG = """\
# written by `indfind synth`; paths are relative to this file
paths.events = events.csv
paths.patients = patients.csv
paths.vocabulary = vocabulary.csv
paths.roles = roles.csv
"""


def _key_value(text: str) -> tuple[str, str]:
    key, sep, value = text.partition("=")
    if not sep or not key.strip():
        raise argparse.ArgumentTypeError(f"expected KEY=VALUE, got {text!r}")
    return key.strip(), value.strip()


def _common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", dest="overrides", action="append", type=_key_value, default=[],
                   metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--out", required=out_required, help="output directory (paths.out)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--threads", type=int, help="worker cap for parallel stages")
    p.add_argument("-v", "--verbose", action="count", default=0)


def build_parser() -> argparse.ArgumentParser:
    epilog = "config keys (file or --set):\n" + describe_keys() + \
        "\n\nexit codes: 0 success, 2 usage/config, 3 data error, 4 numeric failure"
    fmt = argparse.RawDescriptionHelpFormatter
    parser = argparse.ArgumentParser(prog="indfind", description=__doc__, epilog=epilog,
                                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", required=True)

    synth_fields = ", ".join(f.name for f in dataclasses.fields(SynthConfig))
    p = sub.add_parser("synth", help="generate a synthetic cohort", formatter_class=fmt,
                       epilog=f"--set accepts SynthConfig fields: {synth_fields}")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-patients", type=int)
    p.add_argument("--set", dest="overrides", action="append", type=_key_value, default=[],
                   metavar="FIELD=VALUE")
    p.add_argument("-v", "--verbose", action="count", default=0)

    for name, text in (("run", "full pipeline: rank, stability filter, evaluate"),
                       ("grid", "hyperparameter grid search (resumable)"),
                       ("ablate", "recall against cohort size"),
                       ("project", "2D projection of the embeddings"),
                       ("validate-config", "check a config without running anything")):
        p = sub.add_parser(name, help=text, epilog=epilog, formatter_class=fmt)
        _common(p)
        if name == "grid":
            p.add_argument("--grid", help="grid file (paths.grid)")
        if name == "ablate":
            p.add_argument("--fractions", help="comma-separated fractions (ablate.fractions)")
    return parser


def resolve_config(args) -> RunConfig:
    """defaults < config file < --set < dedicated flags."""
    file_layer = read_config_file(args.config) if args.config else {}
    cli_layer = dict(args.overrides)
    for flag, key in (("out", "paths.out"), ("seed", "seed"), ("threads", "threads"),
                      ("grid", "paths.grid"), ("fractions", "ablate.fractions")):
        value = getattr(args, flag, None)
        if value is not None:
            cli_layer[key] = value
    return RunConfig.from_layers(file_layer, cli_layer)


def _synth_config(args) -> SynthConfig:
    fields = {f.name: f for f in dataclasses.fields(SynthConfig)}
    values: dict[str, object] = {"seed": args.seed}
    if args.n_patients is not None:
        values["n_patients"] = args.n_patients
    for key, raw in args.overrides:
        key = key.removeprefix("synth.")
        if key not in fields:
            raise ConfigError(f"unknown synth field {key!r}")
        default = getattr(SynthConfig(), key)
        try:
            if isinstance(default, bool):
                value = raw.lower() in ("1", "true", "yes", "on")
            elif isinstance(default, tuple) or key.endswith("_features"):
                value = tuple(x.strip() for x in raw.split(",") if x.strip())
            else:
                value = type(default)(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
        values[key] = value
    return SynthConfig(**values)


def cmd_synth(args) -> int:
    cfg = _synth_config(args)
    paths = generate_cohort(cfg, args.out)
    (Path(args.out) / "run.cfg").write_text(SYNTH_RUN_CONFIG)
    print(f"wrote {len(paths) + 1} files to {args.out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    try:
        if args.command == "synth":
            return cmd_synth(args)
        config = resolve_config(args)
        if args.command == "validate-config":
            config.check_paths()
            sys.stdout.write(config.render())
            return EXIT_OK
        command = {"run": cmd_run, "grid": cmd_grid, "ablate": cmd_ablate,
                   "project": cmd_project}[args.command]
        manifest = command(config)
        print(f"{args.command}: wrote {len(manifest['outputs'])} outputs to {config['paths.out']}")
        return EXIT_OK
    except IndfindError as exc:
        print(f"indfind {args.command}: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"indfind {args.command}: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())

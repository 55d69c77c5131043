"""Command line entry point.

Subcommands::

    socpme simulate --config F --seed S --out D     one path
    socpme ensemble --config F --paths P --seed S --out D
    socpme report --manifest M [--json]
    socpme check --config F

``--set section.key=value`` (repeatable) overrides any configuration key.
Exit codes: 0 success, 1 configuration error, 2 numerical failure in any
path, 3 I/O error.  The worker count comes from ``SOCPME_WORKERS``.
"""
from __future__ import annotations

import argparse
import sys

from .config import ConfigError, parse_config
from .harness import ReportError, report, run_ensemble

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _overrides(args) -> dict[str, str]:
    out = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError([(0, f"--set expects section.key=value, got {item!r}")])
        out[key.strip()] = value.strip()
    for attr, key in (("seed", "run.seed"), ("paths", "run.paths"), ("out", "run.out_dir"),
                      ("scheme", "run.scheme")):
        value = getattr(args, attr, None)
        if value is not None:
            out[key] = str(value)
    return out


def _load(args):
    text = ""
    if args.config:
        with open(args.config) as fh:
            text = fh.read()
    return parse_config(text, _overrides(args))


def _print_errors(exc: ConfigError) -> None:
    for line, msg in exc.errors:
        where = f"line {line}" if line else "override/default"
        print(f"config error ({where}): {msg}", file=sys.stderr)


def _cmd_check(args) -> int:
    cfg = _load(args)
    print(f"config ok: dim={cfg.dim} n={cfg.n} lambda={cfg.lam} dt={cfg.dt} t_end={cfg.t_end} N={cfg.N}")
    return EXIT_OK


def _finish_run(manifest) -> int:
    for e in manifest.entries:
        state = e.status if e.status == "ok" else f"{e.status} ({e.error})"
        print(f"path {e.index} seed {e.seed}: {state} {' '.join(sorted(e.files.values()))}")
    print(f"manifest: {manifest.out_dir}/manifest.json")
    return EXIT_NUMERICAL if manifest.failed else EXIT_OK


def _cmd_simulate(args) -> int:
    cfg = _load(args)
    return _finish_run(run_ensemble(cfg, seeds=[cfg.seed]))


def _cmd_ensemble(args) -> int:
    cfg = _load(args)
    return _finish_run(run_ensemble(cfg))


def _cmd_report(args) -> int:
    rep = report(args.manifest)
    sys.stdout.write(rep.to_jsonl() if args.json else rep.table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="socpme", description="Stochastic porous-media SOC simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=False):
        sp.add_argument("--config", required=config_required, help="configuration file")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config key")

    s = sub.add_parser("simulate", help="run a single path")
    common(s)
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.add_argument("--scheme", choices=("direct", "transformed", "both"))
    s.set_defaults(func=_cmd_simulate)

    e = sub.add_parser("ensemble", help="run independent paths")
    common(e)
    e.add_argument("--paths", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.add_argument("--scheme", choices=("direct", "transformed", "both"))
    e.set_defaults(func=_cmd_ensemble)

    r = sub.add_parser("report", help="summarize a finished ensemble")
    r.add_argument("--manifest", required=True, help="manifest.json or its directory")
    r.add_argument("--json", action="store_true", help="emit JSON lines instead of a table")
    r.set_defaults(func=_cmd_report)

    c = sub.add_parser("check", help="validate a configuration")
    common(c, config_required=True)
    c.set_defaults(func=_cmd_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _print_errors(exc)
        return EXIT_CONFIG
    except ReportError as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())

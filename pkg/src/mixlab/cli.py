"""Command line entry point: ``mixlab <subcommand> [--config PATH] [--seed S] ...``.

Every subcommand writes its tables as CSV files plus a JSON manifest into
the output directory.  Exit status: 0 when all checks pass, 2 when a
numerical check fails, 1 on errors.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import experiments as ex
from .config import ConfigError, ExperimentConfig, apply_overrides, load_config, validate
from .control import ControlError
from .dynamics import InstabilityError

EXIT_PASS, EXIT_ERROR, EXIT_FAIL = 0, 1, 2


def _decay(cfg, seed, threads):
    res = ex.decay_study(cfg)
    sg = ex.semigroup_study(cfg.make_domain(), cfg.make_damping(), 3.0 * cfg.noise.T, cfg.solver.dt, oracle=True)
    res.tables.update(sg.tables)
    res.checks.update({f"semigroup_{k}": v for k, v in sg.checks.items()})
    res.summary.update(sg.summary)
    return res


COMMANDS = {
    "simulate": lambda cfg, seed, threads: ex.simulate_study(cfg, seed),
    "decay": _decay,
    "absorb": lambda cfg, seed, threads: ex.absorb_study(cfg, seed),
    "attract": lambda cfg, seed, threads: ex.attract_study(cfg, seed),
    "observe": lambda cfg, seed, threads: ex.observe_study(cfg),
    "control": lambda cfg, seed, threads: ex.control_study(cfg, seed),
    "squeeze": lambda cfg, seed, threads: ex.squeeze_study(cfg, seed),
    "couple": lambda cfg, seed, threads: ex.couple_study(cfg, seed),
    "mix": lambda cfg, seed, threads: ex.mix_study(cfg, seed, threads=threads),
    "toy": lambda cfg, seed, threads: ex.toy_study(seed),
}


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.17g" % float(x)
    return str(x)


def write_csv(path: Path, table: ex.Table, run_id: str, reference: str):
    lines = [f"# {reference}", ",".join(["run_id"] + list(table.columns))]
    for row in table.rows:
        lines.append(",".join([run_id] + [format_value(x) for x in row]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else str(x)
    return x


def output_dir(cfg: ExperimentConfig, flag: str | None) -> Path:
    """--out beats MIXLAB_OUT, which beats the config's run.out."""
    if flag:
        return Path(flag)
    env = os.environ.get("MIXLAB_OUT")
    return Path(env) if env else Path(cfg.run.out)


def run_subcommand(name: str, cfg: ExperimentConfig, overrides=(), seed: int | None = None,
                   out: str | None = None, threads: int = 1) -> tuple[int, ex.StudyResult | None, Path]:
    """Run one subcommand, write its artifacts and return (exit status, result, out dir)."""
    if name not in COMMANDS:
        raise ConfigError(f"unknown subcommand {name!r}; choose from {', '.join(COMMANDS)}")
    cfg = apply_overrides(cfg, overrides)
    if seed is not None:
        cfg = cfg.override("run", "seed", str(seed))
    cfg = validate(cfg)
    seed = cfg.run.seed
    checksum = cfg.checksum()
    out_dir = output_dir(cfg, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    result = COMMANDS[name](cfg, seed, max(1, int(threads)))
    run_id = f"{name}-{checksum[:12]}-{seed}"
    manifest_name = f"{name}.manifest.json"
    reference = f"manifest={manifest_name} config_sha256={checksum} seed={seed}"
    files = []
    for tname, table in result.tables.items():
        path = out_dir / f"{tname}.csv"
        write_csv(path, table, run_id, reference)
        files.append(path.name)
    (out_dir / f"{name}.config.ini").write_text(cfg.to_text(), encoding="utf-8")
    manifest = dict(
        command=name, run_id=run_id, version=__version__, seed=seed, config_sha256=checksum,
        config_file=f"{name}.config.ini", started=started,
        finished=datetime.datetime.now(datetime.timezone.utc).isoformat(),
        files=files, checks=result.checks, summary=result.summary, passed=result.passed,
    )
    (out_dir / manifest_name).write_text(json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    return (EXIT_PASS if result.passed else EXIT_FAIL), result, out_dir


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the error status 1 instead of argparse's 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mixlab", description="Damped wave experiments: dynamics, control, coupling, mixing.")
    parser.add_argument("--version", action="version", version=f"mixlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI configuration file")
        p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
        p.add_argument("--out", help="output directory (overrides MIXLAB_OUT and run.out)")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override one configuration value (repeatable)")
        p.add_argument("--threads", type=int, default=1, help="worker threads for ensembles")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        if args.seed is not None and args.seed < 0:
            raise ConfigError("seed must be a nonnegative integer")
        status, result, out_dir = run_subcommand(args.command, cfg, args.set, args.seed, args.out, args.threads)
    except (ConfigError, ControlError, InstabilityError, ValueError, OSError) as exc:
        print(f"mixlab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    for key, ok in result.checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {key}")
    print(f"artifacts in {out_dir}")
    return status


if __name__ == "__main__":
    sys.exit(main())

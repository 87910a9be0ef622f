"""Command line entry point: ``dpgwave <experiment> [--config PATH] [--out DIR] ...``.

The optional configuration file holds ``key = value`` lines under
``[section]`` headers. Keys in ``[DEFAULT]`` apply to every experiment and
keys in the section named after the experiment override them. Integer lists
may be written as ``1, 2, 4`` or as an inclusive range ``2..4``.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import logging
import sys
from dataclasses import fields
from pathlib import Path

from .experiments import EXPERIMENTS, ConfigError, ExperimentConfig, SweepResult, run_experiment

log = logging.getLogger("dpgwave")

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2

_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_INT_LISTS = {"lengths", "p_values", "z_values", "modes"}
_STR_LISTS = {"strategies", "policies"}


def _int_list(text: str) -> tuple[int, ...]:
    out = []
    for part in text.replace(";", ",").split(","):
        part = part.strip()
        if not part:
            continue
        if ".." in part:
            lo, hi = (int(v) for v in part.split(".."))
            out.extend(range(lo, hi + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _convert(key: str, text: str):
    if key not in _FIELDS or key == "experiment":
        raise ConfigError(f"unknown configuration key {key!r}")
    if key in _INT_LISTS:
        return _int_list(text)
    if key in _STR_LISTS:
        return tuple(v.strip() for v in text.split(",") if v.strip())
    default = getattr(ExperimentConfig, key)
    if isinstance(default, bool):
        return text.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


def load_config(experiment: str, path: str | None = None, **overrides) -> ExperimentConfig:
    """Build a validated configuration from defaults, an optional file and overrides."""
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"malformed config {path}: {exc}") from exc
        items = dict(parser.defaults())
        if parser.has_section(experiment):
            items.update(parser.items(experiment))
        for key, text in items.items():
            try:
                values[key] = _convert(key, text)
            except ConfigError:
                raise
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {text!r}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(experiment=experiment, **values)


def _cell(v) -> str:
    if isinstance(v, float) or type(v).__name__.startswith("float"):
        return repr(float(v))
    return str(v)


def write_outputs(result: SweepResult, out: Path) -> list[Path]:
    """Write each table as CSV and each kept mesh as JSON; returns the written paths."""
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, table in result.tables.items():
        path = out / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(table.columns)
            for row in table.rows:
                w.writerow([_cell(row.get(c, "")) for c in table.columns])
        written.append(path)
    if result.meshes:
        mdir = out / "meshes"
        mdir.mkdir(exist_ok=True)
        for name, mesh in result.meshes.items():
            path = mdir / f"{name}.json"
            path.write_text(mesh.to_json(), encoding="utf-8")
            written.append(path)
    return written


def _defaults_help() -> str:
    lines = ["configuration keys and defaults:"]
    for f in fields(ExperimentConfig):
        if f.name == "experiment":
            continue
        v = getattr(ExperimentConfig, f.name)
        if isinstance(v, tuple):
            v = ", ".join(map(str, v))
        lines.append(f"  {f.name} = {v}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="dpgwave", description="Run a DPG guided-wave experiment and write CSV tables.",
        epilog=_defaults_help(), formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("experiment", choices=EXPERIMENTS)
    ap.add_argument("--config", metavar="PATH", help="key = value file with [section] headers")
    ap.add_argument("--out", metavar="DIR", default="results", help="output directory (default: results)")
    ap.add_argument("--threads", metavar="N", type=int, default=None,
                    help="worker threads for independent grid points (default: 1)")
    ap.add_argument("--seed", metavar="N", type=int, default=None,
                    help="seed for the graph partitioner visiting order (default: 0)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.experiment, args.config, threads=args.threads, seed=args.seed)
    except (ConfigError, TypeError) as exc:
        print(f"dpgwave: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run_experiment(cfg)
    except ConfigError as exc:
        print(f"dpgwave: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for path in write_outputs(result, Path(args.out)):
        log.info("wrote %s", path)
    if result.failures:
        print(f"dpgwave: {result.failures} grid point(s) failed; see the status column",
              file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

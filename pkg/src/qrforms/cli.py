"""Command-line runner: ``qrforms run``.

Configuration is one JSON object; every key is optional::

    {
      "suites": ["all"],                  # algebra linear forms manifolds qr degree all
      "maps": [{"name": "winding2d", "params": {"k": 3}}, ...],
      "resolution": 64,                   # grid cells per axis for the base grids
      "tolerances": {"forms.dd_zero": 1e-9, "quadrature": 1e-3},
      "format": "json",                   # json | csv
      "output": "reports/",               # directory; omitted -> stdout
      "seed": 0                           # unsigned 64-bit
    }

Tolerance keys are matched first against check ids, then against check
kinds. Command-line flags override the file. Exit status: 0 when every
check passes, 1 when any fails, 2 for configuration or output errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass, field

from .maps import MAP_NAMES, map_library
from .report import digest, emit_report
from .suites import DEFAULT_MAPS, SUITES, Context, run_suites

CONFIG_KEYS = ("suites", "maps", "resolution", "tolerances", "format", "output", "seed")
FORMATS = ("json", "csv")


class ConfigError(ValueError):
    def __init__(self, where: str, message: str):
        super().__init__(f"{where}: {message}")
        self.where = where


@dataclass
class SuiteConfig:
    suites: list = field(default_factory=lambda: ["all"])
    maps: list = field(default_factory=lambda: [dict(m) for m in DEFAULT_MAPS])
    resolution: int = 64
    tolerances: dict = field(default_factory=dict)
    format: str = "json"
    output: str | None = None
    seed: int = 0

    def digest(self) -> str:
        """Digest of everything that affects check results (output location excluded)."""
        return digest({"suites": self.suites, "maps": self.maps, "resolution": self.resolution,
                       "tolerances": self.tolerances, "seed": self.seed})


def _check_suites(names, where="suites") -> list:
    if isinstance(names, str) or not isinstance(names, list) or not names:
        raise ConfigError(where, "expected a non-empty list of suite names")
    for name in names:
        if name not in SUITES + ("all",):
            raise ConfigError(where, f"unknown suite {name!r}; expected one of {', '.join(SUITES + ('all',))}")
    return list(names)


def _check_maps(maps) -> list:
    if not isinstance(maps, list) or not maps:
        raise ConfigError("maps", "expected a non-empty list of {name, params} records")
    out = []
    for i, entry in enumerate(maps):
        where = f"maps[{i}]"
        if not isinstance(entry, dict) or "name" not in entry:
            raise ConfigError(where, "expected an object with a 'name' field")
        extra = set(entry) - {"name", "params"}
        if extra:
            raise ConfigError(where, f"unknown field(s) {sorted(extra)}")
        if entry["name"] not in MAP_NAMES:
            raise ConfigError(f"{where}.name", f"unknown map {entry['name']!r}; expected one of "
                                               f"{', '.join(MAP_NAMES)}")
        params = entry.get("params", {})
        if not isinstance(params, dict):
            raise ConfigError(f"{where}.params", "expected an object")
        try:
            map_library(entry["name"], params)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"{where}.params", str(exc)) from None
        out.append({"name": entry["name"], "params": params})
    return out


def _check_resolution(v, where="resolution") -> int:
    if isinstance(v, bool) or not isinstance(v, int) or v < 8:
        raise ConfigError(where, "expected an integer >= 8")
    return v


def _check_seed(v, where="seed") -> int:
    if isinstance(v, bool) or not isinstance(v, int) or not 0 <= v < 2**64:
        raise ConfigError(where, "expected an unsigned 64-bit integer")
    return v


def _check_format(v, where="format") -> str:
    if v not in FORMATS:
        raise ConfigError(where, f"expected one of {', '.join(FORMATS)}")
    return v


def parse_config(text: str) -> SuiteConfig:
    """Parse and validate a JSON configuration document."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno}, column {exc.colno}", exc.msg) from None
    if not isinstance(data, dict):
        raise ConfigError("top level", "expected a JSON object")
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(unknown[0], f"unknown key; expected one of {', '.join(CONFIG_KEYS)}")
    cfg = SuiteConfig()
    if "suites" in data:
        cfg.suites = _check_suites(data["suites"])
    if "maps" in data:
        cfg.maps = _check_maps(data["maps"])
    if "resolution" in data:
        cfg.resolution = _check_resolution(data["resolution"])
    if "tolerances" in data:
        tol = data["tolerances"]
        if not isinstance(tol, dict):
            raise ConfigError("tolerances", "expected an object of name -> number")
        for key, v in tol.items():
            if isinstance(v, bool) or not isinstance(v, (int, float)) or v < 0:
                raise ConfigError(f"tolerances.{key}", "expected a non-negative number")
        cfg.tolerances = {k: float(v) for k, v in tol.items()}
    if "format" in data:
        cfg.format = _check_format(data["format"])
    if "output" in data:
        if data["output"] is not None and not isinstance(data["output"], str):
            raise ConfigError("output", "expected a directory path or null")
        cfg.output = data["output"]
    if "seed" in data:
        cfg.seed = _check_seed(data["seed"])
    return cfg


def load_config(path: str | None) -> SuiteConfig:
    if path is None:
        return SuiteConfig()
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(path, exc.strerror or str(exc)) from None
    return parse_config(text)


def run(cfg: SuiteConfig):
    ctx = Context(resolution=cfg.resolution, seed=cfg.seed, maps=cfg.maps, tolerances=cfg.tolerances)
    return run_suites(cfg.suites, ctx, cfg.digest())


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrforms", description="Numerical verification suites for "
                                "differential forms and quasiregular maps.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run verification suites and write a report")
    r.add_argument("--config", help="JSON configuration file")
    r.add_argument("--suite", action="append", help="suite to run (repeatable); overrides the config")
    r.add_argument("--resolution", type=int, help="base grid cells per axis")
    r.add_argument("--seed", type=int, help="seed for randomized sweeps (unsigned 64-bit)")
    r.add_argument("--format", choices=FORMATS, help="report format")
    r.add_argument("--out", help="output directory (default: stdout)")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.suite:
            cfg.suites = _check_suites(args.suite, "--suite")
        if args.resolution is not None:
            cfg.resolution = _check_resolution(args.resolution, "--resolution")
        if args.seed is not None:
            cfg.seed = _check_seed(args.seed, "--seed")
        if args.format is not None:
            cfg.format = args.format
        if args.out is not None:
            cfg.output = args.out
    except ConfigError as exc:
        print(f"qrforms: configuration error at {exc}", file=sys.stderr)
        return 2

    start = time.perf_counter()
    report = run(cfg)
    wall = time.perf_counter() - start
    timing = {"wall_time_s": round(wall, 3), "checks": len(report.checks)}

    if cfg.output is None:
        sys.stdout.write(emit_report(report, cfg.format))
        print(f"qrforms: {report.summary['pass']} passed, {report.summary['fail']} failed "
              f"in {wall:.1f} s", file=sys.stderr)
    else:
        try:
            os.makedirs(cfg.output, exist_ok=True)
            emit_report(report, cfg.format, os.path.join(cfg.output, f"report.{cfg.format}"))
            with open(os.path.join(cfg.output, "timing.json"), "w") as fh:
                json.dump(timing, fh, indent=2)
                fh.write("\n")
        except OSError as exc:
            print(f"qrforms: cannot write report to {cfg.output}: {exc}", file=sys.stderr)
            return 2
        print(f"qrforms: {report.summary['pass']} passed, {report.summary['fail']} failed "
              f"in {wall:.1f} s; report in {cfg.output}", file=sys.stderr)
    return 0 if report.ok else 1


if __name__ == "__main__":
    sys.exit(main())

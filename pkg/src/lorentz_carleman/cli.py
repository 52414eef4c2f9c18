"""``lorentz-carleman`` command line.

Exit status is 0 when every non-advisory row passes, 1 when some check
fails (the failing rows are printed), and 2 for usage or configuration
errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline as pl
from .config import ConfigError, config_from_dict, read_raw
from .report import failing, write_report
from .wave_control import ConfigError as WaveConfigError

log = logging.getLogger("lorentz_carleman")

STAGES = {
    "verify-geometry": ("geometry", pl.geometry_stage),
    "verify-pseudoconvexity": ("pseudoconvexity", pl.pseudoconvexity_stage),
    "verify-carleman": ("carleman", pl.carleman_stage),
    "observability": ("observability", pl.observability_stage),
    "control": ("control", pl.control_stage),
}


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _grid(text: str) -> tuple[int, int | None]:
    parts = text.lower().split("x")
    try:
        if len(parts) == 1:
            return int(parts[0]), None
        if len(parts) == 2:
            return int(parts[0]), int(parts[1])
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"grid must look like 128x256 or 128, got {text!r}")


def _span(text: str) -> tuple[float, float]:
    v = _floats(text)
    if len(v) != 2:
        raise argparse.ArgumentTypeError("time span needs two numbers, e.g. -2,2")
    return v[0], v[1]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file (omitted keys take defaults)")
    common.add_argument("--model", help="catalog model: minkowski, warped or conformal")
    common.add_argument("--n", type=int, help="spatial dimension")
    common.add_argument("--delta", type=float, help="curvature amplitude of the model")
    common.add_argument("--k", type=float, help="wavenumber of the warped model")
    common.add_argument("--eps0", type=float)
    common.add_argument("--b0", type=float)
    common.add_argument("--a", type=float, help="weight exponent (default 4 n^2)")
    common.add_argument("--r0", type=float, help="radius of the sampled region")
    common.add_argument("--grid", type=_grid, help="wave grid NXxNT (NT = steps per unit time; omit for CFL-safe)")
    common.add_argument("--time-span", type=_span, help="wave time span, e.g. -2,2")
    common.add_argument("--centre", type=_floats, help="centre chart coordinates for the geometric checks")
    common.add_argument("--wave-centre", type=float, help="spatial position of the control centre")
    common.add_argument("--target", choices=("bump", "zero"), help="terminal target for control")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--format", choices=("json", "csv"))
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="lorentz-carleman", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["all"]:
        sub.add_parser(name, parents=[common])
    return parser


def _merge(args: argparse.Namespace) -> dict:
    raw = read_raw(args.config) if args.config else {}
    wave = dict(raw.get("wave", {}))
    for key in ("model", "n", "delta", "k", "eps0", "b0", "a", "r0", "centre", "seed", "out", "format"):
        val = getattr(args, key)
        if val is not None:
            raw[key] = val
    if args.grid is not None:
        wave["nx"], wave["nt"] = args.grid
    if args.time_span is not None:
        wave["span"] = list(args.time_span)
    if args.wave_centre is not None:
        wave["centre"] = args.wave_centre
    if args.target is not None:
        wave["target"] = args.target
    if wave:
        raw["wave"] = wave
    return raw


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_dict(_merge(args))
    except (ConfigError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2

    out = cfg.out_dir()
    out.mkdir(parents=True, exist_ok=True)
    names = list(STAGES) if args.command == "all" else [args.command]
    header = cfg.to_dict()
    everything = []
    for name in names:
        tag, fn = STAGES[name]
        log.info("running %s", name)
        try:
            stage = fn(cfg)
        except (ConfigError, WaveConfigError) as exc:
            print(f"configuration error in {name}: {exc}", file=sys.stderr)
            return 2
        write_report(stage.rows, out / f"{tag}.{cfg.format}", cfg.format, header=header)
        if tag == "control":
            pl.write_control_artifacts(stage, out)
        everything.extend(stage.rows)
    if cfg.format == "csv":
        (out / "config.json").write_text(json.dumps(header, indent=1) + "\n")

    bad = failing(everything)
    for r in everything:
        flag = "ok  " if r.passed else ("adv " if r.advisory else "FAIL")
        print(f"{flag} {r.check:34s} measured={r.measured:.6g} bound={r.bound:.6g}")
    if bad:
        print(f"{len(bad)} check(s) failed: " + ", ".join(r.check for r in bad), file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

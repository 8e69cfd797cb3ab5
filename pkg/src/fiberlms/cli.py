"""Command line: ``fiberlms run|validate|sweep``.

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration,
3 instability under ``--strict``.
"""

import argparse
import csv
import hashlib
import json
import logging
import sys
from importlib import resources
from pathlib import Path

from .config import ConfigError, load_config, parse_value, warnings_for
from .experiment import RealizationCache, run_experiment

log = logging.getLogger("fiberlms")

EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_UNSTABLE = 3


def scenario_path(name):
    """A config path as given, or a scenario shipped with the package (by file or stem name)."""
    p = Path(name)
    if p.exists():
        return p
    stem = p.name if p.suffix else p.name + ".toml"
    shipped = resources.files("fiberlms") / "scenarios" / stem
    if shipped.is_file():
        return Path(str(shipped))
    return p


def list_scenarios():
    root = resources.files("fiberlms") / "scenarios"
    return sorted(Path(str(f)).stem for f in root.iterdir() if str(f).endswith(".toml"))


def _load(args, extra=()):
    overrides = list(getattr(args, "override", None) or ()) + list(extra)
    if getattr(args, "seed", None) is not None:
        overrides.append(f"run.seed={args.seed}")
    return load_config(scenario_path(args.config), overrides)


def _progress(done, total, rmse):
    log.info("realization %d/%d  rmse %.3f dB", done, total, rmse)


def cmd_validate(args):
    try:
        cfg = _load(args)
        from .config import build_link
        from .twin import make_twin_config
        link = build_link(cfg)
        tcfg = make_twin_config(link, cfg.symbol_period_s, cfg.twin.grid_step_km,
                                cfg.signal.power_dbm, cfg.signal.n_pol,
                                block_length=cfg.twin.block_length_symbols or None)
        if cfg.run.n_symbols % tcfg.block_length:
            raise ConfigError(f"run.n_symbols ({cfg.run.n_symbols}) is not a multiple of the "
                              f"block length ({tcfg.block_length})", args.config)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for w in warnings_for(cfg):
        print(f"warning: {w}", file=sys.stderr)
    print(f"ok: {cfg.name}: {cfg.link.n_spans} x {cfg.link.span_length_km:g} km, "
          f"M={tcfg.M}, L={tcfg.block_length}")
    return 0


def cmd_run(args):
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for w in warnings_for(cfg):
        print(f"warning: {w}", file=sys.stderr)
    try:
        result = run_experiment(cfg, jobs=args.jobs, progress=_progress)
        result.write(args.output, figures=not args.no_figures)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - report any runtime failure as exit 1
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{cfg.name}: final RMSE {result.final_rmse_db:.3f} dB, "
          f"unstable={result.unstable}, output in {args.output}")
    if args.strict and result.unstable:
        return EXIT_UNSTABLE
    return 0


def cmd_sweep(args):
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        print("error: no sweep values", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfgs = [_load(args, [f"{args.parameter}={v}"]) for v in values]
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    cache = RealizationCache()
    rows = []
    unstable = False
    for v, cfg in zip(values, cfgs):
        sub = out / f"{args.parameter}={v}"
        try:
            res = run_experiment(cfg, cache=cache, jobs=args.jobs, progress=_progress)
            res.write(sub, figures=not args.no_figures)
        except Exception as exc:  # noqa: BLE001
            print(f"runtime failure at {args.parameter}={v}: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
        unstable |= res.unstable
        rows.append((parse_value(v), res.final_rmse_db, res.ser, res.snr_before_db,
                     res.snr_after_db, res.unstable))
        print(f"{args.parameter}={v}: final RMSE {res.final_rmse_db:.3f} dB")
    path = out / "sweep.csv"
    with path.open("w", newline="") as f:
        wr = csv.writer(f, lineterminator="\n")
        wr.writerow(("value", "final_rmse_db", "ser", "snr_before_db", "snr_after_db", "unstable"))
        for r in rows:
            wr.writerow((r[0],) + tuple(repr(float(x)) for x in r[1:5]) + (str(r[5]).lower(),))
    files = {"sweep.csv": hashlib.sha256(path.read_bytes()).hexdigest()}
    if not args.no_figures and all(isinstance(r[0], (int, float)) for r in rows):
        from .plotting import plot_sweep
        png = plot_sweep(rows, args.parameter, out / "sweep.png")
        files[png.name] = hashlib.sha256(png.read_bytes()).hexdigest()
    manifest = {"parameter": args.parameter, "values": values, "files": files,
                "runs": [f"{args.parameter}={v}/manifest.json" for v in values]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if args.strict and unstable:
        return EXIT_UNSTABLE
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="fiberlms", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="scenario TOML file or shipped scenario name")
        sp.add_argument("--override", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. lms.mu_bar=0.2 (repeatable)")
        sp.add_argument("--seed", type=int, help="root seed (overrides run.seed)")

    sp = sub.add_parser("run", help="run one scenario")
    common(sp)
    sp.add_argument("-o", "--output", default="out", help="output directory")
    sp.add_argument("--jobs", type=int, default=1, help="parallel link simulations")
    sp.add_argument("--strict", action="store_true", help="exit 3 when the run is unstable")
    sp.add_argument("--no-figures", action="store_true", help="skip PNG figures")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("validate", help="check a scenario without running it")
    common(sp)
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("sweep", help="run a scenario for several values of one key")
    common(sp)
    sp.add_argument("parameter", help="config key, e.g. noise.snr_db")
    sp.add_argument("values", help="comma separated values")
    sp.add_argument("-o", "--output", default="out", help="output directory")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--strict", action="store_true")
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("list", help="list shipped scenarios")
    sp.set_defaults(func=lambda a: print("\n".join(list_scenarios())) or 0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())

"""msrom command line.

Exit status: 0 success, 1 numerical failure, 2 configuration failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import dump_config, parse_config, validate_mesh
from .errors import ConfigError, NumericalError
from .randfield import (
    KLEModel,
    draw_coefficients,
    ingest_raster,
    sample_field,
    synth_high_contrast,
    synth_lognormal,
    write_raster,
)

log = logging.getLogger("msrom")

EXIT_OK, EXIT_NUMERICAL, EXIT_CONFIG = 0, 1, 2


def _common(p: argparse.ArgumentParser, out: bool = True) -> None:
    p.add_argument("-c", "--config", help="INI run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override a config value (repeatable)")
    p.add_argument("--seed", type=int, help="training seed; evaluation uses seed + 1")
    if out:
        p.add_argument("-o", "--out", default="out", help="output directory (default: out)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="msrom", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="group", required=True)

    field = sub.add_parser("field", help="permeability field tools").add_subparsers(dest="cmd", required=True)
    p = field.add_parser("synth", help="write a synthetic high-contrast field")
    _common(p)
    p.add_argument("--kind", choices=("channels", "lognormal"), default="channels")
    p.add_argument("--contrast", type=float)
    p = field.add_parser("ingest", help="validate a raster or CSV field and store it as a raster")
    _common(p)
    p.add_argument("path")

    kle = sub.add_parser("kle", help="Karhunen-Loeve model tools").add_subparsers(dest="cmd", required=True)
    p = kle.add_parser("build", help="build the KLE model of the configured field")
    _common(p)
    p = kle.add_parser("sample", help="draw permeability samples")
    _common(p)
    p.add_argument("--model", help="kle.npz from 'kle build' (default: build from config)")
    p.add_argument("-n", "--count", type=int, default=1)
    p.add_argument("--start", type=int, default=0, help="first stream index")

    run = sub.add_parser("run", help="solvers and pipelines").add_subparsers(dest="cmd", required=True)
    for name, text in (("fine", "fine solve on the mean field"),
                       ("gmsfem", "multiscale space and Step-1 error on the mean field"),
                       ("method1", "three-step pipeline, enrichment on the mean field"),
                       ("method2", "three-step pipeline, hierarchical sample-driven enrichment")):
        p = run.add_parser(name, help=text)
        _common(p)
        p.add_argument("--l", type=int, help="POD size")
        p.add_argument("--workers", type=int, default=0, help="worker processes (default: logical cores)")
        if name in ("method1", "method2"):
            p.add_argument("--sweep", help="extra POD sizes to evaluate, e.g. 5,10,15")

    p = sub.add_parser("report", help="ensemble statistics from an errors.csv")
    p.add_argument("errors")
    p.add_argument("-o", "--out", default=None, help="output directory (default: next to errors.csv)")
    return ap


def _config(args) -> pl.RunConfig:
    overrides = list(args.overrides)
    if getattr(args, "l", None) is not None:
        overrides.append(f"pod.l={args.l}")
    if args.seed is not None:
        overrides += [f"samples.train_seed={args.seed}", f"samples.eval_seed={args.seed + 1}"]
    cfg = parse_config(args.config, overrides)
    validate_mesh(cfg)
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_field(args) -> None:
    cfg = _config(args)
    mesh = cfg.build_mesh()
    out = _outdir(args)
    if args.cmd == "synth":
        contrast = args.contrast if args.contrast is not None else cfg.field.contrast
        make = synth_high_contrast if args.kind == "channels" else synth_lognormal
        kappa = make(mesh, contrast, cfg.field.pattern_seed)
    else:
        kappa = ingest_raster(args.path, (mesh.nx, mesh.ny))
    write_raster(out / "kappa.raster", kappa.values)
    meta = {"schema": "msrom-field v1", "nx": mesh.nx, "ny": mesh.ny, "kmin": kappa.kmin, "kmax": kappa.kmax,
            "contrast": kappa.kmax / kappa.kmin}
    (out / "kappa.json").write_text(json.dumps(meta, indent=2) + "\n")
    print(f"wrote {out / 'kappa.raster'} ({mesh.nx}x{mesh.ny}, contrast {meta['contrast']:.3g})")


def _cmd_kle(args) -> None:
    cfg = _config(args)
    mesh = cfg.build_mesh()
    out = _outdir(args)
    if args.cmd == "build":
        kle = pl.build_kle_model(cfg, mesh)
        kle.save(out / "kle.npz")
        total = float(np.sum(kle.spectrum))
        meta = {"schema": "msrom-kle v1", "n_modes": kle.n_modes, "kle_grid": list(kle.kle_shape),
                "eigenvalues": kle.eigenvalues.tolist(),
                "energy": float(np.sum(kle.eigenvalues) / total) if total > 0 else 1.0}
        (out / "kle.json").write_text(json.dumps(meta, indent=2) + "\n")
        print(f"wrote {out / 'kle.npz'} ({kle.n_modes} modes)")
        return
    if args.count < 1:
        raise ConfigError("--count must be positive")
    kle = KLEModel.load(args.model) if args.model else pl.build_kle_model(cfg, mesh)
    seed = cfg.samples.train_seed
    idx = range(args.start, args.start + args.count)
    write_raster(out / "samples.raster", [sample_field(kle, draw_coefficients(kle, seed, i)).values for i in idx])
    (out / "samples.json").write_text(json.dumps({"schema": "msrom-field v1", "seed": seed,
                                                  "indices": list(idx)}, indent=2) + "\n")
    print(f"wrote {args.count} sample(s) to {out / 'samples.raster'}")


def _cmd_run(args) -> None:
    cfg = _config(args)
    out = _outdir(args)
    t0 = time.perf_counter()
    extra = {}
    if args.cmd == "fine":
        report, _ = pl.run_fine(cfg)
        artifacts = {}
    elif args.cmd == "gmsfem":
        report, space, trace = pl.run_gmsfem(cfg)
        artifacts = {"space": {"counts": cfg.basis.counts, "dimension": space.dim, "spectral": space.n_spectral,
                               "residual": space.n_residual, "Lambda": space.Lambda},
                     "enrichment": [{"step": st.step, "residuals": st.residual_norms} for st in trace]}
    else:
        sweep = [int(s) for s in args.sweep.split(",")] if args.sweep else None
        run = pl.run_method1 if args.cmd == "method1" else pl.run_method2
        result = run(cfg, workers=args.workers, l_values=sweep)
        report, artifacts = result.report, result.artifacts
        extra["workers"] = pl.resolve_workers(args.workers)
    extra["command"] = f"run {args.cmd}"
    extra["wall_time"] = time.perf_counter() - t0
    pl.write_errors_csv(out / "errors.csv", report)
    pl.write_stats_csv(out / "stats.csv", report)
    pl.write_run_json(out / "run.json", cfg, artifacts, extra)
    (out / "config.ini").write_text(dump_config(cfg))
    for step in report.steps:
        s = report.stats(step)
        print(f"{step:>12}: final mean e_a = {s['mean_ea'][-1]:.4g}  e_l2 = {s['mean_el2'][-1]:.4g}")
    print(f"artifacts in {out}")


def _cmd_report(args) -> None:
    src = Path(args.errors)
    if not src.is_file():
        raise ConfigError(f"{src}: no such file")
    report = pl.read_errors_csv(src)
    out = Path(args.out) if args.out else src.parent
    out.mkdir(parents=True, exist_ok=True)
    pl.write_stats_csv(out / "stats.csv", report)
    print(f"wrote {out / 'stats.csv'}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"field": _cmd_field, "kle": _cmd_kle, "run": _cmd_run, "report": _cmd_report}[args.group]
    try:
        handler(args)
    except ConfigError as exc:
        print(f"msrom: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"msrom: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, np.linalg.LinAlgError) as exc:
        code = EXIT_NUMERICAL if isinstance(exc, np.linalg.LinAlgError) else EXIT_CONFIG
        print(f"msrom: {exc}", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

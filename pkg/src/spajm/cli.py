"""Command line entry points.

Exit codes: 0 success, 2 configuration error, 3 input/output error,
4 numerical failure, 5 benchmark finished with failed replications.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from datetime import datetime, timezone
from pathlib import Path

import pandas as pd

from . import __version__
from .basis import lattice_graph, read_gra, write_gra
from .config import ConfigError, parse_model_config, serialize_model_config, validate_against_data, with_overrides
from .data import DataError, read_longitudinal_csv, read_survival_csv, write_csv
from .model import build_design
from .ped import augment, make_cuts
from .posterior import score_against_truth, summarize
from .sampler import ChainOutput, SamplerError, run_design
from .simulate import SimulationConfig, simulate_study, study_model_spec, study_truth

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_PARTIAL = 0, 2, 3, 4, 5
MANIFEST = "manifest.json"
MAP_FILE = "grid.gra"

log = logging.getLogger("spajm")


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def write_manifest(out, command, *, seed=None, configs=(), inputs=(), outputs=(), started=None, extra=None):
    """Write the run manifest of an output directory."""
    out = Path(out)
    manifest = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "configs": [str(p) for p in configs],
        "inputs": [str(p) for p in inputs],
        "outputs": sorted(str(p) for p in outputs),
        "timing": {
            "started": datetime.fromtimestamp(started or time.time(), timezone.utc).isoformat(),
            "duration_seconds": time.time() - (started or time.time()),
        },
    }
    if extra:
        manifest.update(extra)
    out.mkdir(parents=True, exist_ok=True)
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


# --------------------------------------------------------------------------
# configuration helpers
# --------------------------------------------------------------------------

_SIM_TYPES = {f.name: f.type for f in fields(SimulationConfig)}


def read_simulation_config(path=None, **overrides):
    """Simulation settings from an INI file with a ``[simulation]`` section.

    Recognised keys are the :class:`SimulationConfig` fields plus
    ``map_rows`` and ``map_cols`` for the lattice map.
    """
    values, rows, cols = {}, 8, 8
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as err:
            raise ConfigError(f"{path}: {err}") from None
        if not parser.has_section("simulation"):
            raise ConfigError(f"{path}: missing [simulation] section")
        for key, raw in parser.items("simulation"):
            try:
                if key in ("map_rows", "map_cols"):
                    v = int(raw)
                    rows, cols = (v, cols) if key == "map_rows" else (rows, v)
                elif key in ("n", "ni", "setting", "seed"):
                    values[key] = int(raw)
                elif key in _SIM_TYPES and key != "map":
                    values[key] = float(raw)
                else:
                    raise ConfigError(f"{path}: unknown simulation setting {key!r}")
            except ValueError:
                raise ConfigError(f"{path}: bad value {raw!r} for {key}") from None
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return SimulationConfig(map=lattice_graph(rows, cols), **values)
    except ValueError as err:
        raise ConfigError(str(err)) from None


def _load_maps(spec, config_path, map_args):
    maps = {}
    given = dict(m.split("=", 1) for m in map_args or [])
    base = Path(config_path).parent if config_path else Path(".")
    for _, term in spec.terms():
        ref = term.map_ref
        if ref is None or ref in maps:
            continue
        path = Path(given.get(ref, ref))
        if not path.is_absolute() and not path.exists():
            path = base / path
        maps[ref] = read_gra(path)
    return maps


def _read_text(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as err:
        raise CliError(f"cannot read {path}: {err.strerror}", EXIT_IO) from None


def _require_file(path):
    if not Path(path).is_file():
        raise CliError(f"data file not found: {path}", EXIT_IO)
    return path


def _read_data(long_path, surv_path):
    surv = read_survival_csv(_require_file(surv_path))
    return read_longitudinal_csv(_require_file(long_path)), surv


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_simulate(args):
    started = time.time()
    cfg = read_simulation_config(args.config, seed=args.seed, setting=args.setting)
    study = simulate_study(cfg)
    out = Path(args.out)
    study.write(out)
    write_gra(cfg.map, out / MAP_FILE)
    write_manifest(
        out, "simulate", seed=cfg.seed, configs=[args.config] if args.config else [],
        outputs=["long.csv", "surv.csv", "truth.json", MAP_FILE], started=started,
        extra={"setting": cfg.setting, "n_subjects": cfg.n},
    )
    log.info("simulated %d subjects (setting %d) into %s", cfg.n, cfg.setting, out)
    return EXIT_OK


def cmd_augment(args):
    started = time.time()
    surv = read_survival_csv(_require_file(args.surv))
    long = read_longitudinal_csv(_require_file(args.long)) if args.long else None
    cuts = make_cuts(surv, args.cuts)
    ped = augment(surv, long, cuts, subject_splits=args.subject_splits, fill=args.fill)
    out = Path(args.out)
    ped.to_csv(out / "ped.csv")
    write_manifest(out, "augment", inputs=[p for p in (args.long, args.surv) if p], outputs=["ped.csv"],
                   started=started, extra={"rows": len(ped), "intervals": len(cuts) - 1})
    return EXIT_OK


def _fit(config_text, config_path, long, surv, out, *, seed=None, iterations=None, burn_in=None,
         thinning=None, maps=None, map_args=None):
    spec, hyper, sampler = parse_model_config(config_text)
    sampler = with_overrides(sampler, seed=seed, iterations=iterations, burn_in=burn_in, thinning=thinning)
    maps = maps if maps is not None else _load_maps(spec, config_path, map_args)
    problems = validate_against_data(spec, long, surv, maps)
    if problems:
        raise ConfigError("; ".join(problems))
    design = build_design(spec, long, surv, hyper=hyper, sampler=sampler, maps=maps)
    chain = run_design(design, sampler.iterations, sampler.burn_in, sampler.thinning, sampler.seed)
    chain.to_files(out)
    (Path(out) / "model.conf").write_text(serialize_model_config(spec, hyper, sampler))
    return design, chain, sampler


def cmd_fit(args):
    started = time.time()
    text = _read_text(args.config)
    long, surv = _read_data(args.long, args.surv)
    _, chain, sampler = _fit(
        text, args.config, long, surv, args.out, seed=args.seed, iterations=args.iterations,
        burn_in=args.burnin, thinning=args.thin, map_args=args.map,
    )
    write_manifest(
        args.out, "fit", seed=sampler.seed, configs=[Path(args.config).resolve()],
        inputs=[Path(args.long).resolve(), Path(args.surv).resolve()],
        outputs=["draws.csv", "acceptance.json", "model.conf"], started=started,
        extra={"draws": chain.n_draws, "maps": args.map or []},
    )
    log.info("kept %d draws in %s", chain.n_draws, args.out)
    return EXIT_OK


def _summarize_fit(fit_dir, long, surv, maps, truth=None, out=None):
    spec, hyper, sampler = parse_model_config((Path(fit_dir) / "model.conf").read_text())
    design = build_design(spec, long, surv, hyper=hyper, sampler=sampler, maps=maps)
    chain = ChainOutput.from_files(fit_dir)
    summary = summarize(chain, design.blocks)
    out = Path(out or fit_dir)
    summary.to_csv(out / "summary.csv", out / "functions.csv")
    metrics = None
    if truth is not None:
        metrics = score_against_truth(summary, study_truth(truth, summary))
        write_csv(metrics[["target", "mse", "bias", "abs_bias", "covered"]], out / "metrics.csv")
    return summary, metrics


def cmd_summarize(args):
    started = time.time()
    fit_dir = Path(args.fit)
    manifest_path = fit_dir / MANIFEST
    if not manifest_path.is_file():
        raise CliError(f"{fit_dir} is not a fit directory (no {MANIFEST})", EXIT_IO)
    fit_manifest = json.loads(manifest_path.read_text())
    long_path, surv_path = fit_manifest["inputs"]
    long, surv = _read_data(long_path, surv_path)
    spec, _, _ = parse_model_config((fit_dir / "model.conf").read_text())
    config_path = fit_manifest["configs"][0] if fit_manifest["configs"] else None
    maps = _load_maps(spec, config_path, fit_manifest.get("maps"))
    truth = json.loads(_read_text(args.truth)) if args.truth else None
    out = Path(args.out or fit_dir)
    _, metrics = _summarize_fit(fit_dir, long, surv, maps, truth, out)
    if out != fit_dir:
        outputs = ["summary.csv", "functions.csv"] + (["metrics.csv"] if metrics is not None else [])
        write_manifest(out, "summarize", inputs=[str(fit_dir)] + ([args.truth] if args.truth else []),
                       outputs=outputs, started=started)
    return EXIT_OK


def predictor_of(target):
    if target in ("alpha", "sigma2_alpha"):
        return "association"
    if target == "sigma2_eps":
        return "l"
    return target.split(".", 1)[0]


def run_replication(setting, seed, out, config_text=None, iterations=None, burn_in=None, thinning=None):
    """simulate, fit, summarize and score one replication; returns metrics rows."""
    started = time.time()
    out = Path(out)
    cfg = SimulationConfig(setting=setting, seed=seed)
    study = simulate_study(cfg)
    study.write(out)
    write_gra(cfg.map, out / MAP_FILE)
    if config_text is None:
        config_text = serialize_model_config(study_model_spec(setting, map_ref=MAP_FILE))
    maps = {MAP_FILE: cfg.map}
    _fit(config_text, None, study.long, study.surv, out, seed=seed, iterations=iterations,
         burn_in=burn_in, thinning=thinning, maps=maps)
    _, metrics = _summarize_fit(out, study.long, study.surv, maps, study.truth, out)
    write_manifest(
        out, "benchmark-replication", seed=seed,
        outputs=["long.csv", "surv.csv", "truth.json", MAP_FILE, "draws.csv", "acceptance.json",
                 "model.conf", "summary.csv", "functions.csv", "metrics.csv"],
        started=started, extra={"setting": setting},
    )
    return metrics.assign(setting=setting, seed=seed)


def _replication_job(job):
    r, setting, seed, out, text, it, burn, thin = job
    try:
        return r, run_replication(setting, seed, out, text, it, burn, thin), None
    except Exception as err:  # noqa: BLE001 - partial-failure policy: log and continue
        return r, None, f"{type(err).__name__}: {err}"


def cmd_benchmark(args):
    started = time.time()
    if args.replications < 1:
        raise ConfigError("--replications must be >= 1")
    if args.setting not in (1, 2, 3):
        raise ConfigError("--setting must be 1, 2 or 3")
    text = _read_text(args.config) if args.config else None
    out = Path(args.out)
    seed0 = args.seed if args.seed is not None else 1
    jobs = [
        (r, args.setting, seed0 + r, out / f"rep_{r:03d}", text, args.iterations, args.burnin, args.thin)
        for r in range(args.replications)
    ]
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_replication_job, jobs))
    else:
        results = [_replication_job(j) for j in jobs]

    frames, failures = [], []
    for r, metrics, err in sorted(results, key=lambda x: x[0]):
        if err is not None:
            log.error("replication %d failed: %s", r, err)
            failures.append({"replication": r, "error": err})
        else:
            frames.append(metrics.assign(replication=r))
    cols = ["setting", "replication", "seed", "target", "mse", "bias", "abs_bias", "covered"]
    table = pd.concat(frames, ignore_index=True)[cols] if frames else pd.DataFrame(columns=cols)
    write_csv(table, out / "metrics.csv")
    boxplot = table.melt(
        id_vars=["setting", "replication", "target"], value_vars=["mse", "bias", "covered"],
        var_name="statistic", value_name="value",
    )
    boxplot.insert(2, "predictor", boxplot["target"].map(predictor_of))
    write_csv(boxplot, out / "boxplot.csv")
    write_manifest(
        out, "benchmark", seed=seed0, configs=[args.config] if args.config else [],
        outputs=["metrics.csv", "boxplot.csv"], started=started,
        extra={"setting": args.setting, "replications": args.replications, "failures": failures},
    )
    return EXIT_PARTIAL if failures else EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _budget(p):
    p.add_argument("--iterations", type=int)
    p.add_argument("--burnin", type=int)
    p.add_argument("--thin", type=int)


def build_parser():
    parser = argparse.ArgumentParser(prog="spajm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a joint study")
    p.add_argument("--config", help="INI file with a [simulation] section")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--setting", type=int, choices=(1, 2, 3))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("augment", help="write piecewise-exponential data")
    p.add_argument("--surv", required=True)
    p.add_argument("--long")
    p.add_argument("--out", required=True)
    p.add_argument("--cuts", default="event_times", help="event_times or quantiles:J")
    p.add_argument("--subject-splits", action="store_true")
    p.add_argument("--fill", default="backward", choices=("backward", "drop", "raise"))
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("fit", help="run the sampler")
    p.add_argument("--config", required=True, help="model configuration document")
    p.add_argument("--long", required=True)
    p.add_argument("--surv", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--map", action="append", metavar="NAME=PATH", help="adjacency file for a map name")
    _budget(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("summarize", help="posterior summaries of a fit")
    p.add_argument("--fit", required=True, help="output directory of 'fit'")
    p.add_argument("--truth", help="truth.json of a simulated study")
    p.add_argument("--out")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("benchmark", help="replicated simulate-fit-score runs")
    p.add_argument("--setting", type=int, required=True)
    p.add_argument("--replications", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="model configuration (default: the generating model)")
    p.add_argument("--out", required=True)
    _budget(p)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DataError) as err:
        print(f"input/output error: {err}", file=sys.stderr)
        return EXIT_IO
    except SamplerError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line interface.

Exit codes: 0 success, 2 configuration/input error, 3 runtime (numerical) error.
Logs go to stderr; results only to files.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import tomli

from . import __version__
from .config import ConfigError, ModelSpec, RunConfig, load_config, save_config
from .data import DataError, align_and_preprocess, export_panel, ingest_daily, ingest_hourly, read_panel
from .posterior import DiagnosticsError, country_effect, diagnostics, export, volatility_path
from .sampler import PanelModel, SamplerError, run_chain
from .store import DrawStore, DrawWriter
from .synthetic import (
    ScenarioConfig,
    SimulationError,
    default_truth,
    generate_panel,
    truth_from_dict,
    write_truth,
)

log = logging.getLogger("prumidas")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
WORKERS_ENV = "PRUMIDAS_WORKERS"


class UsageError(Exception):
    pass


def _digest(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(directory: Path, command: str, config_hash: str, inputs, seed, started: float, outputs) -> Path:
    """Write ``manifest.json`` atomically (temp file + rename)."""
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "inputs": {str(p): _digest(Path(p)) for p in inputs},
        "seed": seed,
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "outputs": sorted(str(p) for p in outputs),
        "software_version": __version__,
    }
    directory.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".manifest", suffix=".json")
    with os.fdopen(fd, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    final = directory / "manifest.json"
    os.replace(tmp, final)
    return final


# ---------------------------------------------------------------------------
# simulate


def _load_toml(path: Path) -> dict:
    if not path.exists():
        raise UsageError(f"file not found: {path}")
    try:
        return tomli.loads(path.read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from exc


def cmd_simulate(args) -> int:
    started = time.time()
    scen_path = Path(args.scenario)
    raw = _load_toml(scen_path)
    try:
        spec = ModelSpec.from_dict(raw.get("model", {}))
        scenario = ScenarioConfig.from_dict(raw.get("scenario", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{scen_path}: {exc}") from exc
    if args.seed is not None:
        scenario.seed = args.seed
    rng = np.random.default_rng(scenario.seed)
    truth_cfg = raw.get("truth", {})
    if "psi" in truth_cfg:
        truth = truth_from_dict(truth_cfg)
    else:
        kw = {k: truth_cfg[k] for k in ("sigma2", "q", "r", "ar_total", "slopes") if k in truth_cfg}
        truth = default_truth(spec, rng, **kw)
        if "gamma" in truth_cfg:
            truth.gamma = np.asarray(truth_cfg["gamma"], dtype=float)
    out = Path(args.out)
    data, rawpanel = generate_panel(spec, truth, scenario, rng)
    paths = rawpanel.write(out)
    truth_path = out / "truth.json"
    write_truth(truth_path, spec, truth, scenario, data.countries)
    paths.append(truth_path)
    write_manifest(out, "simulate", RunConfig(model=spec).config_hash(), [scen_path], scenario.seed, started, paths)
    log.info("wrote %d files to %s", len(paths), out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit


def _hourly_files(data_dir: Path) -> list[Path]:
    files = sorted(data_dir.glob("hourly_*.csv"))
    if not files:
        raise UsageError(f"no hourly_<country>.csv files in {data_dir}")
    return files


def load_dataset(data_dir: Path, cfg: RunConfig, date_from=None, date_to=None):
    files = _hourly_files(data_dir)
    spec = cfg.model
    if spec.n_countries != len(files):
        log.info("setting n_countries=%d from the data directory", len(files))
        spec = ModelSpec.from_dict({**spec.to_dict(), "n_countries": len(files)})
    tables = [ingest_hourly(p, p.stem[len("hourly_"):], H=spec.H) for p in files]
    daily_path = data_dir / "daily.csv"
    daily = ingest_daily(daily_path) if spec.n_low else None
    inputs = files + ([daily_path] if spec.n_low else [])
    window = None
    if date_from or date_to:
        start = date_from or max(t.dates[0] for t in tables).isoformat()
        end = date_to or min(t.dates[-1] for t in tables).isoformat()
        window = (start, end)
    data = align_and_preprocess(tables, daily, spec, window)
    return data, RunConfig(model=spec, prior=cfg.prior, sampler=cfg.sampler), inputs


def _run_one(payload):
    cfg_dict, dataset_dir, chain_dir, entropy, chain_id = payload
    cfg = RunConfig.from_dict(cfg_dict)
    data = read_panel(dataset_dir)
    model = PanelModel.from_dataset(data, cfg.prior, cfg.sampler)
    writer = DrawWriter(
        model.spec,
        store_random_effects=cfg.sampler.store_random_effects,
        directory=chain_dir,
        meta={"countries": data.countries, "chain": chain_id, "dataset": "../dataset",
              "seed_entropy": entropy, "config_hash": cfg.config_hash(),
              "manifest": "../manifest.json"},
    )
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy, spawn_key=(chain_id,))))
    total = cfg.sampler.n_sweeps
    marks = {max(1, total * k // 10) for k in range(1, 11)}

    def progress(i, n):
        if i in marks:
            log.info("chain %d: sweep %d/%d", chain_id, i, n)

    t0 = time.time()
    run_chain(model, cfg.sampler, rng=rng, writer=writer, progress=progress)
    return chain_id, time.time() - t0, total


def cmd_fit(args) -> int:
    started = time.time()
    cfg = load_config(args.config) if args.config else RunConfig()
    cfg = cfg.replace(
        sampler={
            "burn_in": args.burn_in,
            "retained": args.retained,
            "thin": args.thin,
            "seed": args.seed,
            "gamma_step": args.gamma_step,
            "store_random_effects": False if args.no_random_effects else None,
        }
    )
    data_dir = Path(args.data)
    if not data_dir.is_dir():
        raise UsageError(f"data directory not found: {data_dir}")
    data, cfg, inputs = load_dataset(data_dir, cfg, args.date_from, args.date_to)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset_dir = out / "dataset"
    export_panel(data, dataset_dir)
    save_config(cfg, out / "config.toml")
    log.info("%d countries, %d estimation days, %d observations, L=%d", data.spec.G, data.estimation_days,
             data.n_obs, data.spec.L)

    workers = args.workers or int(os.environ.get(WORKERS_ENV, "1"))
    payloads = [(cfg.to_dict(), str(dataset_dir), str(out / f"chain_{k}"), cfg.sampler.seed, k)
                for k in range(args.chains)]
    if workers > 1 and args.chains > 1:
        with ProcessPoolExecutor(max_workers=min(workers, args.chains)) as pool:
            results = list(pool.map(_run_one, payloads))
    else:
        results = [_run_one(p) for p in payloads]
    for chain_id, secs, sweeps in results:
        log.info("chain %d: %d sweeps in %.1fs (%.2f ms/sweep)", chain_id, sweeps, secs, 1e3 * secs / sweeps)
    outputs = [out / "config.toml", dataset_dir] + [out / f"chain_{k}" for k in range(args.chains)]
    write_manifest(out, "fit", cfg.config_hash(), inputs + [Path(args.config)] if args.config else inputs,
                   cfg.sampler.seed, started, outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# reports


def _open_run(run_dir: Path, chain: int):
    chain_dir = run_dir / f"chain_{chain}"
    if not (chain_dir / "draws.json").exists():
        if (run_dir / "draws.json").exists():
            chain_dir = run_dir
        else:
            raise UsageError(f"no draw store in {run_dir}")
    store = DrawStore.load(chain_dir)
    ds = chain_dir / store.meta.get("dataset", "../dataset")
    return store, ds


def _report_meta(store) -> dict:
    return {"config_hash": store.meta.get("config_hash"), "manifest": "manifest.json",
            "chain": store.meta.get("chain")}


def _report_dir(args, default: str) -> Path:
    return Path(args.out) if args.out else Path(args.run) / default


def cmd_effects(args) -> int:
    started = time.time()
    store, _ = _open_run(Path(args.run), args.chain)
    covs = [args.covariate] if args.covariate else store.spec.covariate_names
    for c in covs:
        if c not in store.spec.covariate_names:
            raise UsageError(f"unknown covariate {c!r}; available: {store.spec.covariate_names}")
    effects = [country_effect(store, c, g) for c in covs for g in range(store.spec.G)]
    out = _report_dir(args, "reports")
    written = export(out, effects=effects, meta=_report_meta(store))
    write_manifest(out, "effects", store.meta.get("config_hash", ""), [], store.meta.get("seed"), started,
                   written.values())
    return EXIT_OK


def cmd_volatility(args) -> int:
    started = time.time()
    store, ds = _open_run(Path(args.run), args.chain)
    data = read_panel(ds)
    paths = [volatility_path(store, data, g, args.aggregate, args.statistic) for g in range(store.spec.G)]
    out = _report_dir(args, "reports")
    written = export(out, volatility=paths, meta={**_report_meta(store), "plug_in": args.statistic})
    write_manifest(out, "volatility", store.meta.get("config_hash", ""), [], store.meta.get("seed"), started,
                   written.values())
    return EXIT_OK


def cmd_diagnose(args) -> int:
    started = time.time()
    store, _ = _open_run(Path(args.run), args.chain)
    diag = diagnostics(store, params="all" if args.all else "gamma")
    out = _report_dir(args, "reports")
    written = export(out, diag=diag, meta=_report_meta(store))
    write_manifest(out, "diagnose", store.meta.get("config_hash", ""), [], store.meta.get("seed"), started,
                   written.values())
    return EXIT_OK


def cmd_summarize(args) -> int:
    started = time.time()
    store, ds = _open_run(Path(args.run), args.chain)
    data = read_panel(ds)
    out = _report_dir(args, "reports")
    effects = [country_effect(store, c, g) for c in store.spec.covariate_names for g in range(store.spec.G)]
    vols = [volatility_path(store, data, g, "daily") for g in range(store.spec.G)]
    diag = diagnostics(store)
    written = export(out, effects=effects, volatility=vols, diag=diag,
                     meta=_report_meta(store))
    labels = store.spec.coef_labels()
    q = np.quantile(store.gamma, [0.05, 0.5, 0.95], axis=0)
    table = {
        lab: {"mean": float(store.gamma[:, k].mean()), "sd": float(store.gamma[:, k].std(ddof=1)),
              "q05": float(q[0, k]), "q50": float(q[1, k]), "q95": float(q[2, k])}
        for k, lab in enumerate(labels)
    }
    p = out / "common_effects.json"
    p.write_text(json.dumps({**_report_meta(store), "gamma": table}, indent=2),
                 encoding="utf-8")
    write_manifest(out, "summarize", store.meta.get("config_hash", ""), [], store.meta.get("seed"), started,
                   list(written.values()) + [p])
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prumidas", description=__doc__.splitlines()[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a synthetic panel and write input CSVs")
    p.add_argument("--scenario", required=True, help="scenario TOML ([model], [scenario], optional [truth])")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="preprocess data and run the Gibbs sampler")
    p.add_argument("--config", help="run config TOML/JSON (defaults: full nine-country specification)")
    p.add_argument("--data", required=True, help="directory with hourly_<country>.csv and daily.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--from", dest="date_from", help="first day of the estimation window (YYYY-MM-DD)")
    p.add_argument("--to", dest="date_to", help="last day of the estimation window (YYYY-MM-DD)")
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--burn-in", type=int)
    p.add_argument("--retained", type=int)
    p.add_argument("--thin", type=int)
    p.add_argument("--gamma-step", choices=["collapsed", "diagonal", "conditional"])
    p.add_argument("--no-random-effects", action="store_true", help="do not store psi/zeta draws")
    p.add_argument("--workers", type=int, help=f"parallel chains (default ${WORKERS_ENV} or 1)")
    p.set_defaults(func=cmd_fit)

    for name, func, helptext in [
        ("effects", cmd_effects, "country-effect boxplot tables and densities"),
        ("volatility", cmd_volatility, "time-varying volatility paths"),
        ("diagnose", cmd_diagnose, "ESS and Geweke z per parameter"),
        ("summarize", cmd_summarize, "all reports plus a common-effects table"),
    ]:
        p = sub.add_parser(name, help=helptext)
        p.add_argument("run", help="fit output directory (or a single chain directory)")
        p.add_argument("--chain", type=int, default=0)
        p.add_argument("--out", help="report directory (default <run>/reports)")
        if name == "effects":
            p.add_argument("--covariate", help="covariate name (default: all)")
        if name == "volatility":
            p.add_argument("--aggregate", choices=["daily", "hourly"], default="daily")
            p.add_argument("--statistic", choices=["mean", "median"], default="mean")
        if name == "diagnose":
            p.add_argument("--all", action="store_true", help="include log variances")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, DataError, FileNotFoundError, KeyError, DiagnosticsError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (SamplerError, SimulationError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("runtime failure: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

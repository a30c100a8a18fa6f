"""Command-line entry point. Every stage reads and writes inside a run
directory and appends an entry (config, seeds, output hashes) to
``manifest.json`` there."""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import logging
import sys
from collections import Counter
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import synthlab
from .dataset import RateTable, featurize, read_dataset, write_dataset
from .ensemble import EnsembleParams
from .evaluation import APPROACHES, ModelBundle, evaluate_models, qq_export
from .features import centered_log_returns
from .gbt import load_model, save_model
from .ingest import (DropReport, clean_and_filter, parse_chain_csv, read_quotes_csv,
                     split_by_date, underlying_closes, write_quotes_csv)
from .pipeline import PipelineConfig, calibrate_bundle, train_approach
from .pricing import approx_error_study, sigma_grid

log = logging.getLogger("resilient_options")

SPLITS = ("train", "typical", "atypical")


class StageError(RuntimeError):
    pass


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Stage:
    """Tracks files written by one CLI stage."""

    def __init__(self, run: Path, command: str, argv: list[str], config: PipelineConfig):
        self.run, self.command, self.argv, self.config = run, command, argv, config
        self.outputs: list[Path] = []
        self.seeds: dict = {"gbt": config.gbt.seed}

    def path(self, rel: str) -> Path:
        p = self.run / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        self.outputs.append(p)
        return p

    def record(self) -> None:
        manifest_path = self.run / "manifest.json"
        manifest = json.loads(manifest_path.read_text()) if manifest_path.exists() else {"stages": []}
        manifest["stages"].append({
            "command": self.command,
            "argv": self.argv,
            "config": self.config.to_dict(),
            "seeds": self.seeds,
            "outputs": {str(p.relative_to(self.run)): _sha256(p)
                        for p in self.outputs if p.exists()},
        })
        manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")

    def discard(self) -> None:
        for p in self.outputs:
            if p.exists():
                p.unlink()


@contextmanager
def stage(args, command: str):
    run = Path(args.run)
    run.mkdir(parents=True, exist_ok=True)
    cfg = _load_config(args, run)
    st = Stage(run, command, list(args.argv), cfg)
    try:
        yield st
    except BaseException:
        st.discard()
        raise
    st.record()


def _load_config(args, run: Path) -> PipelineConfig:
    saved = run / "config.json"
    if getattr(args, "config", None):
        cfg = PipelineConfig.load(args.config)
        if not saved.exists():
            cfg.save(saved)
        return cfg
    if saved.exists():
        return PipelineConfig.load(saved)
    cfg = PipelineConfig()
    cfg.save(saved)
    return cfg


def _model_id(symbols) -> str:
    return "+".join(sorted(symbols))


def _read_split(run: Path, split: str, symbols=None) -> pd.DataFrame:
    path = run / f"features_{split}.csv"
    if not path.exists():
        raise StageError(f"{path} missing; run `featurize` first")
    df = read_dataset(path)
    if symbols:
        df = df[df["symbol"].isin(list(symbols))]
    return df.reset_index(drop=True)


def _read_underlying(path: Path) -> dict:
    out: dict = {}
    with path.open(newline="") as fh:
        for r in csv.DictReader(fh):
            out.setdefault(r["symbol"], {})[dt.date.fromisoformat(r["date"])] = float(r["close"])
    return out


def _write_underlying(series: dict, path: Path) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["symbol", "date", "close"])
        for sym in sorted(series):
            for d in sorted(series[sym]):
                w.writerow([sym, d.isoformat(), repr(series[sym][d])])


# -- stages -----------------------------------------------------------------

def cmd_ingest(args) -> None:
    with stage(args, "ingest") as st:
        cfg = st.config
        rows = []
        for path in args.input:
            rows.extend(parse_chain_csv(path, cfg.schema, cfg.date_formats))
        report = DropReport()
        quotes = clean_and_filter(rows, cfg.filter, report)
        split = split_by_date(quotes, cfg.boundaries())
        for name, part in split:
            write_quotes_csv(part, st.path(f"quotes_{name}.csv"))
        if args.underlying:
            series = _read_underlying(Path(args.underlying))
        else:
            series = underlying_closes(rows)
        _write_underlying(series, st.path("underlying.csv"))
        text = report.to_text() + "".join(f"split.{n}\t{len(p)}\n" for n, p in split)
        st.path("drop_report.txt").write_text(text)
        log.info("ingest: %d rows in, %d quotes kept", report.n_in, report.n_out)


def _rates(args, cfg: PipelineConfig):
    if args.rate is not None:
        return float(args.rate)
    if args.rate_file or cfg.rate_file:
        return RateTable.from_csv(args.rate_file or cfg.rate_file, percent=cfg.rate_in_percent)
    if cfg.rate is not None:
        return float(cfg.rate)
    raise StageError("no risk-free rate given (use --rate, --rate-file or config)")


def cmd_featurize(args) -> None:
    with stage(args, "featurize") as st:
        cfg, run = st.config, st.run
        underlying = _read_underlying(run / "underlying.csv")
        rates = _rates(args, cfg)
        lines = []
        for name in SPLITS:
            counts = Counter()
            quotes = read_quotes_csv(run / f"quotes_{name}.csv")
            df = featurize(quotes, underlying, rates, cfg.window_end, cfg.year_days, counts)
            write_dataset(df, st.path(f"features_{name}.csv"))
            lines.append(f"{name}\trows={len(df)}\tno_window={counts['no_window']}"
                         f"\tdegenerate_vol={counts['degenerate_vol']}\n")
        st.path("featurize_report.txt").write_text("".join(lines))


def cmd_train(args) -> None:
    with stage(args, "train") as st:
        cfg = st.config
        if args.n_estimators:
            st.config = cfg = replace(cfg, gbt=replace(cfg.gbt, n_estimators=args.n_estimators))
        df = _read_split(st.run, "train", args.symbols)
        if df.empty:
            raise StageError(f"no training rows for symbols {args.symbols}")
        model = train_approach(df, args.approach, cfg.gbt)
        save_model(model, st.path(f"models/{args.approach.lower()}_{_model_id(args.symbols)}.json"))


def _bundle(run: Path, symbols) -> ModelBundle:
    mid = _model_id(symbols)
    paths = {a: run / "models" / f"{a}_{mid}.json" for a in ("hh", "ds")}
    for p in paths.values():
        if not p.exists():
            raise StageError(f"{p} missing; run `train` for both approaches first")
    bundle = ModelBundle(load_model(paths["hh"]), load_model(paths["ds"]), None, mid)
    ens = run / "models" / f"ensemble_{mid}.json"
    if ens.exists():
        bundle.ensemble = EnsembleParams.load(ens)
    return bundle


def cmd_calibrate(args) -> None:
    with stage(args, "calibrate-ensemble") as st:
        cfg = st.config
        if args.mode:
            st.config = cfg = replace(cfg, calibration=replace(cfg.calibration, mode=args.mode))
        bundle = _bundle(st.run, args.symbols)
        train = _read_split(st.run, "train", args.symbols)
        tests = [_read_split(st.run, s, args.symbols) for s in ("typical", "atypical")]
        params, grid = calibrate_bundle(bundle, train, cfg, [t for t in tests if len(t)])
        params.save(st.path(f"models/ensemble_{bundle.name}.json"))
        pd.DataFrame(list(grid.rows()), columns=["lambda1", "lambda2", "rmse"]).to_csv(
            st.path(f"reports/ensemble_grid_{bundle.name}.csv"), index=False, lineterminator="\n")
        log.info("ensemble %s: lambda=(%.1f, %.1f), rmse=%.6f", bundle.name,
                 params.lambda1, params.lambda2, grid.rmse_min)


def cmd_evaluate(args) -> None:
    with stage(args, "evaluate") as st:
        bundle = _bundle(st.run, args.model)
        test_symbols = args.test_symbols or args.model
        df = _read_split(st.run, args.split, test_symbols)
        approaches = [a for a in APPROACHES if a != "E" or bundle.ensemble is not None]
        reports = evaluate_models(df, bundle, args.split, approaches, st.config.floor_prices)
        tag = f"{bundle.name}_{args.split}_{_model_id(test_symbols)}"
        rows = []
        for a, rep in reports.items():
            stem = f"reports/eval_{tag}_{a}"
            for p in (f"{stem}.json", f"{stem}_residuals.csv", f"{stem}_histogram.csv"):
                st.path(p)
            rep.write(st.run / "reports", f"eval_{tag}_{a}")
            rows.append({**rep.summary(), "test_symbols": _model_id(test_symbols)})
        pd.DataFrame(rows).to_csv(st.path(f"reports/summary_{tag}.csv"), index=False,
                                  lineterminator="\n")


def _split_returns(series: dict, lo: dt.date | None, hi: dt.date) -> np.ndarray:
    days = sorted(d for d in series if (lo is None or d > lo) and d <= hi)
    if len(days) < 2:
        return np.zeros(0)
    return np.diff(np.log([series[d] for d in days]))


def cmd_report(args) -> None:
    with stage(args, "report") as st:
        run, cfg = st.run, st.config
        summaries = sorted((run / "reports").glob("summary_*.csv"))
        if not summaries:
            raise StageError("no evaluation summaries found; run `evaluate` first")
        table = pd.concat([pd.read_csv(p) for p in summaries], ignore_index=True)
        table = table.sort_values(["model_id", "test_symbols", "split", "approach"])
        table.to_csv(st.path("reports/table.csv"), index=False, lineterminator="\n")

        # every trained approach must beat the benchmark somewhere
        failures = []
        bench = table[table["approach"] == "BSM"].set_index(["model_id", "test_symbols", "split"])["rmse"]
        for (mid, appr), grp in table[table["approach"] != "BSM"].groupby(["model_id", "approach"]):
            beats = [r.rmse < bench.get((mid, r.test_symbols, r.split), np.inf)
                     for r in grp.itertuples()]
            if not any(beats):
                failures.append(f"{mid}/{appr}")

        underlying = _read_underlying(run / "underlying.csv")
        b0, b1, b2 = cfg.boundaries()
        qq_paths = []
        for sym in sorted(underlying):
            s = underlying[sym]
            train = _split_returns(s, None, b0)
            for name, lo, hi in (("typical", b0, b1), ("atypical", b1, b2)):
                test = _split_returns(s, lo, hi)
                if train.size and test.size:
                    p = st.path(f"reports/qq_{sym}_train_vs_{name}.csv")
                    qq_export(train, test).to_csv(p, index=False, lineterminator="\n")
                    qq_paths.append(p.name)
        syms = sorted(underlying)
        for a, b in zip(syms, syms[1:]):
            ra, rb = _split_returns(underlying[a], None, b0), _split_returns(underlying[b], None, b0)
            if ra.size and rb.size:
                p = st.path(f"reports/qq_train_{a}_vs_{b}.csv")
                qq_export(ra, rb).to_csv(p, index=False, lineterminator="\n")
                qq_paths.append(p.name)

        lines = [f"models_evaluated\t{table['model_id'].nunique()}\n"]
        if failures:
            lines.append("status\tBENCHMARK_NOT_BEATEN\n")
            lines.extend(f"not_beating_benchmark\t{f}\n" for f in failures)
            lines.append("see Q-Q tables comparing train and test return distributions:\n")
            lines.extend(f"qq\t{p}\n" for p in qq_paths)
        else:
            lines.append("status\tALL_BEAT_BENCHMARK_ON_SOME_SPLIT\n")
        st.path("reports/diagnostic.txt").write_text("".join(lines))


def cmd_approx_error(args) -> None:
    with stage(args, "approx-error") as st:
        axis = sigma_grid(args.sigma_min, args.sigma_max, args.step)
        grid = approx_error_study(axis, T=args.t, p=args.p, rate=args.r)
        labels = [f"{s:.4f}" for s in axis]
        pd.DataFrame(grid.matrix, index=labels, columns=labels).rename_axis("sigma1").to_csv(
            st.path("approx_error/matrix.csv"), lineterminator="\n")
        pd.DataFrame(grid.scatter, columns=["vol_ratio", "rel_error"]).to_csv(
            st.path("approx_error/scatter.csv"), index=False, lineterminator="\n")
        summary = {
            "T": args.t, "p": args.p, "r": args.r,
            "max_error": grid.max_error(),
            "max_error_both_ge_9pct": grid.max_error(0.09),
            "max_error_ratio_le_2": grid.max_error_ratio(2.0),
            "max_error_ratio_le_9": grid.max_error_ratio(9.0),
        }
        st.path("approx_error/summary.json").write_text(json.dumps(summary, indent=2) + "\n")
        print(json.dumps(summary, indent=2))


def _parse_range(text: str) -> tuple:
    lo, hi, step = (float(x) for x in text.split(":"))
    return tuple(float(s) for s in sigma_grid(lo, hi, step))


def cmd_synth(args) -> None:
    with stage(args, "synth") as st:
        cfg = st.config
        gbt = replace(cfg.gbt, seed=args.seed)
        if args.n_estimators:
            gbt = replace(gbt, n_estimators=args.n_estimators)
        st.config = replace(cfg, gbt=gbt)
        st.seeds = {"gbt": gbt.seed, "synthetic": args.seed}
        train_sigmas = _parse_range(args.train_sigmas)
        test_sigmas = _parse_range(args.test_sigmas)
        train = synthlab.pooled_dataset(train_sigmas, synthlab.ROLE_TRAIN, args.seed)
        write_dataset(train, st.path("synth/features_train.csv"))
        bundle = ModelBundle(train_approach(train, "HH", gbt), train_approach(train, "DS", gbt),
                             None, "synthetic")
        save_model(bundle.hh, st.path("synth/models/hh_synthetic.json"))
        save_model(bundle.ds, st.path("synth/models/ds_synthetic.json"))
        tests = synthlab.test_datasets(test_sigmas, args.seed)
        if args.experiment == 1:
            curves = synthlab.run_experiment_1({"synthetic": bundle}, tests=tests)
        else:
            params, grid = synthlab.calibrate_synthetic(bundle, train, args.calibration,
                                                        train_sigmas, tests, args.seed)
            params.save(st.path("synth/models/ensemble_synthetic.json"))
            pd.DataFrame(list(grid.rows()), columns=["lambda1", "lambda2", "rmse"]).to_csv(
                st.path("synth/ensemble_grid.csv"), index=False, lineterminator="\n")
            curves = synthlab.run_experiment_2({"synthetic": bundle}, tests=tests)
            synthlab.experiment_2_flags(curves).to_csv(
                st.path("synth/experiment2_flags.csv"), index=False, lineterminator="\n")
        curves.to_csv(st.path(f"synth/experiment{args.experiment}_curves.csv"), index=False,
                      lineterminator="\n")


# -- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="resilient-options",
                                 description="Domain-shift resilient option price prediction.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--run", required=True, help="run directory")
        p.add_argument("--config", help="pipeline config JSON")
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "parse, clean and split option-chain CSVs")
    p.add_argument("--input", action="append", required=True)
    p.add_argument("--underlying", help="CSV with symbol,date,close (default: from the chain)")

    p = add("featurize", cmd_featurize, "build feature/target datasets per split")
    p.add_argument("--rate", type=float, help="constant risk-free rate (decimal)")
    p.add_argument("--rate-file", help="CSV of date, yield")

    p = add("train", cmd_train, "fit an HH or DS booster")
    p.add_argument("--approach", type=str.lower, choices=["hh", "ds"], required=True)
    p.add_argument("--symbols", nargs="+", required=True)
    p.add_argument("--n-estimators", type=int)

    p = add("calibrate-ensemble", cmd_calibrate, "grid-calibrate the blend weights")
    p.add_argument("--symbols", nargs="+", required=True)
    p.add_argument("--mode", choices=["holdout", "test", "range"])

    p = add("evaluate", cmd_evaluate, "RMSE reports on a test split")
    p.add_argument("--split", choices=["train", "typical", "atypical"], required=True)
    p.add_argument("--model", nargs="+", required=True, help="training symbols of the model")
    p.add_argument("--test-symbols", nargs="+")

    add("report", cmd_report, "aggregate reports, Q-Q tables and benchmark diagnostic")

    p = add("approx-error", cmd_approx_error, "relative error study of the shift target")
    p.add_argument("--t", type=float, default=0.2)
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--r", type=float, default=0.0)
    p.add_argument("--sigma-min", type=float, default=0.05)
    p.add_argument("--sigma-max", type=float, default=1.0)
    p.add_argument("--step", type=float, default=0.01)

    p = add("synth", cmd_synth, "synthetic GBM domain-shift experiments")
    p.add_argument("--experiment", type=int, choices=[1, 2], required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-sigmas", default="0.08:0.16:0.01", help="lo:hi:step")
    p.add_argument("--test-sigmas", default="0.01:0.30:0.01", help="lo:hi:step")
    p.add_argument("--calibration", choices=["holdout", "test"], default="holdout")
    p.add_argument("--n-estimators", type=int)
    return ap


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # any failure -> diagnostic + nonzero exit
        log.debug("stage failed", exc_info=True)
        print(f"error: {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

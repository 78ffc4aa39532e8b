"""``resnls`` command line: train, evaluate, sweep, backtest, gradcheck.

Every command resolves a :class:`~resnls.config.RunConfig`, writes its
artifacts under ``--out`` and finishes with ``manifest.json`` listing each
artifact with its sha256.  Failures print one JSON object on stderr and
exit with the code carried by the exception family (2 config, 3 data,
4 divergence, 5 gradient check, 1 anything else).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from . import backtest as bt
from . import metrics as mt
from . import plots
from .config import BUILTIN_SYNTHETIC, RunConfig, resolve
from .data import PriceSeries, Split, fit_normalizer, ingest_csv, split
from .errors import ConfigError, GradCheckFailure, IncompatibleModelError, ResNLSError
from .gradcheck import SUITE_MAX_ENTRIES, run_suite
from .models import TrainedModel, build, file_checksum, load, save
from .synthetic import load_bundled
from .training import LossCurve, train

log = logging.getLogger("resnls")

MANIFEST_NAME = "manifest.json"


@dataclass
class RunManifest:
    command: str
    config: dict
    version: str = __version__
    artifacts: dict[str, dict] = field(default_factory=dict)
    timings: dict[str, float] = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    def add(self, name: str, path: Path) -> None:
        self.artifacts[name] = {"path": str(path), "sha256": file_checksum(path)}

    def write(self, out: Path) -> Path:
        path = out / MANIFEST_NAME
        payload = {
            "command": self.command,
            "version": self.version,
            "config": self.config,
            "artifacts": self.artifacts,
            "timings_s": self.timings,
            "metrics": self.metrics,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


class _Timer:
    def __init__(self, manifest: RunManifest, name: str):
        self.manifest, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.manifest.timings[self.name] = round(time.perf_counter() - self.t0, 6)
        return False


# -- shared pipeline steps ------------------------------------------------------------


def load_series(cfg: RunConfig) -> PriceSeries:
    if cfg.data == BUILTIN_SYNTHETIC:
        series = load_bundled()
    else:
        series = ingest_csv(cfg.data, cfg.instrument or None)
    if cfg.instrument and series.instrument != cfg.instrument:
        series = replace(series, instrument=cfg.instrument)
    return series


def prepare(cfg: RunConfig, series: PriceSeries | None = None) -> tuple[PriceSeries, Split]:
    series = load_series(cfg) if series is None else series
    return series, split(series, cfg.train_range, cfg.test_range, cfg.window_n, cfg.field)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fit_and_train(cfg: RunConfig, data: Split) -> tuple[TrainedModel, LossCurve]:
    model = build(cfg.model_spec)
    model.normalizer = data.normalizer
    model, curve = train(model, (data.train, data.test), cfg.train_config)
    model.fingerprint.update({"field": cfg.field, "instrument": cfg.instrument})
    return model, curve


def _loss_plot(curve: LossCurve, path: Path, title: str) -> None:
    epochs = list(range(len(curve)))
    plots.line_chart(
        path,
        [
            plots.Line("train", epochs, curve.train_mse, plots.BLUE),
            plots.Line("test", epochs, curve.test_mse, plots.RED),
        ],
        title, xlabel="epoch", ylabel="MSE (normalized)",
    )


def check_compatible(model: TrainedModel, cfg: RunConfig, series: PriceSeries) -> None:
    """The model must have been trained for this config's window, architecture and normalizer."""
    spec = model.spec
    if spec.architecture != cfg.arch or spec.window_n != cfg.window_n:
        raise IncompatibleModelError(
            f"model is {spec.label}, config asks for {cfg.arch} with window {cfg.window_n}", "window_n"
        )
    if model.normalizer is None:
        raise IncompatibleModelError("model file carries no normalizer", "model")
    want = fit_normalizer(series, cfg.field, cfg.train_range)
    got = model.normalizer
    if (got.min, got.max) != (want.min, want.max) or (got.fitted_on is not None and got.fitted_on != want.fitted_on):
        raise IncompatibleModelError(
            f"model normalizer [{got.min}, {got.max}] fitted on {got.fitted_on} does not match "
            f"[{want.min}, {want.max}] from the configured data and train range {cfg.train_range}",
            "train_start",
        )
    trained_field = model.fingerprint.get("field")
    if trained_field is not None and trained_field != cfg.field:
        raise IncompatibleModelError(f"model was trained on {trained_field!r}, config uses {cfg.field!r}", "field")


def _load_checked(cfg: RunConfig, series: PriceSeries) -> TrainedModel:
    path = cfg.model_path
    if not path.is_file():
        raise ConfigError(f"model file not found: {path}", "model")
    model = load(path)
    check_compatible(model, cfg, series)
    return model


# -- commands ---------------------------------------------------------------------------


def cmd_train(cfg: RunConfig) -> RunManifest:
    cfg.validate()
    out = _out_dir(cfg)
    manifest = RunManifest("train", cfg.snapshot())
    with _Timer(manifest, "prepare"):
        _, data = prepare(cfg)
    with _Timer(manifest, "train"):
        model, curve = _fit_and_train(cfg, data)
    model_path = out / "model.resnls"
    save(model, model_path)
    curve.to_csv(out / "loss_curve.csv")
    _loss_plot(curve, out / "loss_curve.svg", f"Loss curve, {model.spec.label}")
    manifest.add("model", model_path)
    manifest.add("loss_curve_csv", out / "loss_curve.csv")
    manifest.add("loss_curve_svg", out / "loss_curve.svg")
    manifest.metrics = {"final_train_mse": curve.train_mse[-1], "final_test_mse": curve.test_mse[-1],
                        "epoch0_test_mse": curve.test_mse[0], "train_windows": len(data.train),
                        "test_windows": len(data.test)}
    manifest.write(out)
    return manifest


def cmd_evaluate(cfg: RunConfig) -> RunManifest:
    cfg.validate()
    out = _out_dir(cfg)
    manifest = RunManifest("evaluate", cfg.snapshot())
    series, data = prepare(cfg)
    model = _load_checked(cfg, series)
    with _Timer(manifest, "predict"):
        actual, pred = mt.predict_prices(model, data.test)
    report = mt.report_from_residuals(actual - pred, data.test.target_dates)

    with (out / "predictions.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "actual", "predicted"])
        for d, a, p in zip(data.test.target_dates, actual, pred):
            w.writerow([d.isoformat(), repr(float(a)), repr(float(p))])
    mt.write_csv([mt.RankRow(model.spec.label, report.mae, report.mse, report.rmse, report.n_test)],
                 out / "metrics.csv")
    _overlay_plot(series, cfg, data, actual, pred, out / "prediction_overlay.svg", model.spec.label)
    for name in ("predictions.csv", "metrics.csv", "prediction_overlay.svg"):
        manifest.add(name.rsplit(".", 1)[0] + "_" + name.rsplit(".", 1)[1], out / name)
    manifest.metrics = {"mae": report.mae, "mse": report.mse, "rmse": report.rmse, "n_test": report.n_test}
    manifest.write(out)
    return manifest


def _overlay_plot(series, cfg, data: Split, actual, pred, path: Path, label: str) -> None:
    """Tail of the training closes, then actual and predicted test closes on one date axis."""
    lo, hi = series.span(cfg.train_range)
    tail = min(hi - lo, max(len(actual), 1))
    train_vals = series.field(cfg.field)[hi - tail : hi]
    train_dates = series.dates[hi - tail : hi]
    test_dates = data.test.target_dates
    xs_train = list(range(tail))
    xs_test = list(range(tail, tail + len(test_dates)))
    plots.line_chart(
        path,
        [
            plots.Line("train", xs_train, list(train_vals), plots.DARK_GREY),
            plots.Line("actual", xs_test, list(actual), plots.LIGHT_GREY, 2.0),
            plots.Line("predicted", xs_test, list(pred), plots.RED),
        ],
        f"Predictions, {label}", ylabel=cfg.field,
        xtick_labels=plots.date_ticks(list(train_dates) + list(test_dates)),
    )


def _sweep_one(cfg: RunConfig, n: int) -> dict:
    sub = replace(cfg, window_n=n, init_seed=cfg.init_seed ^ n, shuffle_seed=cfg.shuffle_seed ^ n)
    series, data = prepare(sub)
    model, curve = _fit_and_train(sub, data)
    report = mt.evaluate(model, data.test)
    out = Path(cfg.out)
    stem = f"n{n}"
    save(model, out / f"model_{stem}.resnls")
    curve.to_csv(out / f"loss_curve_{stem}.csv")
    _loss_plot(curve, out / f"loss_curve_{stem}.svg", f"Loss curve, {model.spec.label}")
    return {"n": n, "mae": report.mae, "mse": report.mse, "rmse": report.rmse}


def _write_sweep(rows: list[dict], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n", "mae", "mse", "rmse"])
        for r in sorted(rows, key=lambda r: r["n"]):
            w.writerow([r["n"], repr(r["mae"]), repr(r["mse"]), repr(r["rmse"])])


def cmd_sweep(cfg: RunConfig) -> RunManifest:
    """Train and score one model per window length; each n gets seeds ``seed XOR n``."""
    cfg.validate()
    out = _out_dir(cfg)
    ns = cfg.windows
    manifest = RunManifest("sweep", cfg.snapshot())
    rows: list[dict] = []
    failure: tuple[int, BaseException] | None = None
    t0 = time.perf_counter()
    if cfg.workers > 1 and len(ns) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(ns))) as pool:
            futures = [(n, pool.submit(_sweep_one, cfg, n)) for n in ns]
            for n, fut in futures:
                try:
                    rows.append(fut.result())
                except Exception as exc:
                    failure = failure or (n, exc)
    else:
        for n in ns:
            log.info("sweep: training n=%d", n)
            try:
                rows.append(_sweep_one(cfg, n))
            except Exception as exc:
                failure = (n, exc)
                break
    manifest.timings["sweep"] = round(time.perf_counter() - t0, 6)

    table = out / ("sweep.csv" if failure is None else "sweep_partial.csv")
    _write_sweep(rows, table)
    manifest.add("sweep_csv" if failure is None else "sweep_partial_csv", table)
    for r in sorted(rows, key=lambda r: r["n"]):
        stem = f"n{r['n']}"
        manifest.add(f"model_{stem}", out / f"model_{stem}.resnls")
        manifest.add(f"loss_curve_{stem}_csv", out / f"loss_curve_{stem}.csv")
        manifest.add(f"loss_curve_{stem}_svg", out / f"loss_curve_{stem}.svg")
    manifest.metrics = {"rows": sorted(rows, key=lambda r: r["n"])}
    if failure is not None:
        n, exc = failure
        manifest.metrics.update({"partial": True, "failed_n": n, "error": f"{type(exc).__name__}: {exc}"})
        manifest.write(out)
        raise exc
    manifest.write(out)
    return manifest


def predictions_by_date(model: TrainedModel, data: Split) -> dict:
    _, pred = mt.predict_prices(model, data.test)
    return dict(zip(data.test.target_dates, (float(p) for p in pred)))


def cmd_backtest(cfg: RunConfig) -> RunManifest:
    cfg.validate()
    out = _out_dir(cfg)
    manifest = RunManifest("backtest", cfg.snapshot())
    series, data = prepare(cfg)
    model = _load_checked(cfg, series)
    forecasts = predictions_by_date(model, data)
    test_series = series.restrict(cfg.test_range)
    strategy = cfg.strategy
    with _Timer(manifest, "backtest"):
        pred_res = bt.run_prediction_strategy(test_series, forecasts, strategy)
        bench_res = bt.run_benchmark(test_series, strategy)

    bt.write_daily_csv(pred_res, bench_res, out / "backtest.csv")
    bt.write_trades_csv([pred_res, bench_res], out / "trades.csv")
    instrument = cfg.instrument or series.instrument
    with (out / "summary.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instrument", "strategy", "arr"])
        w.writerow([instrument, "prediction", repr(pred_res.final_arr)])
        w.writerow([instrument, "benchmark", repr(bench_res.final_arr)])
    xs = list(range(len(test_series)))
    plots.line_chart(
        out / "arr_curve.svg",
        [
            plots.Line("prediction", xs, pred_res.arr_curve, plots.RED),
            plots.Line("benchmark", xs, bench_res.arr_curve, plots.BLUE),
        ],
        f"ARR, {instrument}", ylabel="ARR (%)", xtick_labels=plots.date_ticks(list(test_series.dates)),
    )
    for name in ("backtest.csv", "trades.csv", "summary.csv", "arr_curve.svg"):
        manifest.add(name.replace(".", "_"), out / name)
    manifest.metrics = {"arr_prediction": pred_res.final_arr, "arr_benchmark": bench_res.final_arr,
                        "trades": len(pred_res.trades)}
    manifest.write(out)
    return manifest


def cmd_gradcheck(cfg: RunConfig, full: bool = False) -> RunManifest:
    out = _out_dir(cfg)
    manifest = RunManifest("gradcheck", cfg.snapshot())
    with _Timer(manifest, "gradcheck"):
        report = run_suite(seed=cfg.init_seed, max_entries=None if full else SUITE_MAX_ENTRIES)
    path = out / "gradcheck.csv"
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "size", "checked", "rel_error", "status"])
        for e in report.entries:
            w.writerow([e.name, e.size, e.checked, repr(e.rel_error), "ok" if e.rel_error < report.tol else "FAIL"])
    manifest.add("gradcheck_csv", path)
    manifest.metrics = {"max_rel_error": report.max_error, "entries": len(report.entries),
                        "failures": [e.name for e in report.failures]}
    manifest.write(out)
    print(report.format())
    if not report.passed:
        names = ", ".join(e.name for e in report.failures)
        raise GradCheckFailure(f"gradient check failed for: {names}")
    return manifest


# -- argument handling ----------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--seed", type=int, help="sets both init_seed and shuffle_seed")
    common.add_argument("--arch", help="resnls, cnn, rnn, lstm or bilstm")
    common.add_argument("--window-n", type=int, dest="window_n", help="input window length n")
    common.add_argument("--data", help="OHLC CSV path, or builtin:synthetic")
    common.add_argument("--model", help="model file (evaluate, backtest); default <out>/model.resnls")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; repeatable")
    common.add_argument("--print-config", action="store_true", help="print the resolved config and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="resnls", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train one model")
    sub.add_parser("evaluate", parents=[common], help="score a trained model on the test range")
    sw = sub.add_parser("sweep", parents=[common], help="train one model per window length")
    sw.add_argument("--windows", help="comma-separated window lengths")
    sw.add_argument("--workers", type=int, help="parallel worker processes")
    sub.add_parser("backtest", parents=[common], help="threshold strategy versus buy-and-hold")
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    gc.add_argument("--full", action="store_true", help="check every coordinate of every parameter")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    values: dict = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        values[key.strip()] = raw
    flags = {"out": args.out, "arch": args.arch, "window_n": args.window_n, "data": args.data,
             "model": args.model, "sweep_windows": getattr(args, "windows", None),
             "workers": getattr(args, "workers", None)}
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.seed is not None:
        values["init_seed"] = values["shuffle_seed"] = args.seed
    return values


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "backtest": cmd_backtest,
}


def _report_error(exc: BaseException, code: int) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    for attr in ("field", "row", "epoch", "batch"):
        value = getattr(exc, attr, None)
        if value is not None:
            payload[attr] = value
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve(args.config, _overrides(args), os.environ)
        if args.print_config:
            sys.stdout.write(cfg.to_text())
            return 0
        if args.command == "gradcheck":
            manifest = cmd_gradcheck(cfg, full=args.full)
        else:
            manifest = COMMANDS[args.command](cfg)
    except ResNLSError as exc:
        _report_error(exc, exc.exit_code)
        return exc.exit_code
    except Exception as exc:  # anything unexpected is an internal error
        _report_error(exc, 1)
        return 1
    print(json.dumps({"command": args.command, "out": cfg.out, "metrics": manifest.metrics},
                     sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())

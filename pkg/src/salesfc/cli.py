"""``salesfc`` command line: ingest -> features -> train/predict/evaluate/tune/compare.

Each stage writes a cache file plus a ``.meta.json`` sidecar recording the
checksums it was built from; a stage refuses to run on stale inputs.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

import numpy as np
import pandas as pd
from filelock import FileLock

from salesfc import arima, config, evalharness, gbt, ingest, pipeline, seqnet, synthetic
from salesfc.errors import (
    EmptyPartitionError,
    InsufficientDataError,
    NumericError,
    ReferentialIntegrityError,
    SchemaError,
    StaleCacheError,
)
from salesfc.features import read_matrix, write_matrix
from salesfc.panel import split_rows

logger = logging.getLogger("salesfc")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MODELS = ("gbt", "arima", "lstm")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- cache layout ---------------------------------------------------------------------


class Workspace:
    def __init__(self, cfg: dict):
        self.cfg = cfg
        p = cfg["paths"]
        self.data = Path(p["data_dir"])
        self.cache = Path(p["cache_dir"])
        self.out = Path(p["output_dir"])
        self.labels_path = Path(p["labels"]) if p.get("labels") else self.data / "test_labels.csv"

    grid = property(lambda self: self.cache / "grid.csv")
    matrix = property(lambda self: self.cache / "features.csv")

    def model_path(self, name: str) -> Path:
        return self.out / f"model_{name}.json"

    @staticmethod
    def meta(path: Path) -> Path:
        return path.with_name(path.name + ".meta.json")

    def raw_inputs(self) -> dict[str, str]:
        out = {}
        for key, fname in ingest.KAGGLE_FILES.items():
            path = self.data / fname
            if key == "test" and not path.exists():
                continue
            if not path.exists():
                raise FileNotFoundError(f"{path}: required input file not found")
            out[fname] = sha256(path)
        return out

    @contextmanager
    def lock(self):
        self.cache.mkdir(parents=True, exist_ok=True)
        with FileLock(str(self.cache / ".lock")):
            yield

    def write_meta(self, path: Path, meta: dict) -> None:
        meta = {**meta, "sha256": sha256(path)}
        self.meta(path).write_text(json.dumps(meta, indent=1, sort_keys=True))

    def read_meta(self, path: Path, stage: str) -> dict:
        if not path.exists() or not self.meta(path).exists():
            raise FileNotFoundError(f"{path}: cache missing; run `salesfc {stage}` first")
        meta = json.loads(self.meta(path).read_text())
        if sha256(path) != meta.get("sha256"):
            raise StaleCacheError(f"{path} was modified after it was written; re-run `salesfc {stage}`")
        return meta

    def check_grid(self) -> dict:
        meta = self.read_meta(self.grid, "ingest")
        if meta["inputs"] != self.raw_inputs():
            raise StaleCacheError(f"raw files in {self.data} changed since the grid was built; re-run `salesfc ingest`")
        return meta

    def check_matrix(self) -> dict:
        grid_meta = self.check_grid()
        meta = self.read_meta(self.matrix, "features")
        if meta["grid_sha256"] != grid_meta["sha256"]:
            raise StaleCacheError("grid cache changed since features were built; re-run `salesfc features`")
        return meta

    def check_model(self, name: str, upstream_sha: str) -> dict:
        path = self.model_path(name)
        meta = self.read_meta(path, f"train {name}")
        if meta.get("upstream_sha256") != upstream_sha:
            raise StaleCacheError(f"{path} was trained on an older cache; re-run `salesfc train {name}`")
        return meta


# --- shared loading -------------------------------------------------------------------


def _load_raw(ws: Workspace):
    records, report, catalog = ingest.load_kaggle_dir(ws.data)
    return records, report, catalog


def _test_pairs(ws: Workspace) -> pd.DataFrame | None:
    path = ws.data / ingest.KAGGLE_FILES["test"]
    return ingest.load_test(path) if path.exists() else None


def _labels(ws: Workspace, test_ids: pd.DataFrame | None) -> pd.DataFrame | None:
    if test_ids is None or not ws.labels_path.exists():
        return None
    lab = pd.read_csv(ws.labels_path)
    return test_ids.merge(lab, on="ID", how="inner")[["shop_id", "item_id", "item_cnt_month", "ID"]]


def _prepared(ws: Workspace, with_matrix=True) -> pipeline.Prepared:
    cfg = ws.cfg
    ws.check_matrix() if with_matrix else ws.check_grid()
    records, _, catalog = _load_raw(ws)
    split = config.split_spec(cfg)
    test_ids = _test_pairs(ws)
    grid = ingest.read_grid(ws.grid)
    if test_ids is not None and split.test_block not in set(grid.blocks.tolist()):
        grid = ingest.append_forecast_block(grid, test_ids, split.test_block)
    matrix = read_matrix(ws.matrix) if with_matrix else None
    return pipeline.Prepared(grid, catalog, records, matrix, split, _labels(ws, test_ids))


def _gbt_params(cfg) -> gbt.GbtParams:
    return gbt.GbtParams.from_dict({**cfg["gbt"], "seed": config.derive_seed(cfg["seed"], "gbt")})


def _seqnet_params(cfg) -> seqnet.SeqNetParams:
    return seqnet.SeqNetParams.from_dict({**cfg["seqnet"], "seed": config.derive_seed(cfg["seed"], "seqnet")})


def _append_report(ws: Workspace, report: evalharness.RunReport) -> None:
    path = ws.out / "reports.csv"
    row = evalharness.report_frame([report])
    row.to_csv(path, mode="a", header=not path.exists(), index=False, na_rep="", lineterminator="\n")


# --- commands -------------------------------------------------------------------------


def cmd_ingest(ws: Workspace, args) -> int:
    with ws.lock():
        inputs = ws.raw_inputs()
        records, report, catalog = _load_raw(ws)
        grid = ingest.build_grid(records, catalog, tuple(ws.cfg.get("clip", (0.0, 20.0))), report)
        ingest.write_grid(grid, ws.grid)
        ws.write_meta(ws.grid, {"inputs": inputs, "clip": list(grid.clip)})
        ws.out.mkdir(parents=True, exist_ok=True)
        ingest.revenue_by_month(records).to_csv(ws.out / "revenue_by_month.csv", index=False, lineterminator="\n")
    print(f"grid: {len(grid)} cells over {len(grid.blocks)} blocks -> {ws.grid}")
    print(f"cleaning: {report.summary()}")
    return EXIT_OK


def cmd_features(ws: Workspace, args) -> int:
    with ws.lock():
        grid_meta = ws.check_grid()
        spec = config.feature_spec(ws.cfg)
        split = config.split_spec(ws.cfg)
        records, _, catalog = _load_raw(ws)
        prep = pipeline.prepare(records, catalog, spec, split, _test_pairs(ws), grid=ingest.read_grid(ws.grid))
        write_matrix(prep.matrix, ws.matrix)
        ws.write_meta(ws.matrix, {"grid_sha256": grid_meta["sha256"], "spec": spec.to_dict(),
                                  "split": ws.cfg["split"]})
    m = prep.matrix
    print(f"features: {m.n_rows} rows x {m.n_features} columns, blocks {m.date_block.min()}..{m.date_block.max()}")
    for name in m.feature_names:
        print(f"  {name}")
    return EXIT_OK


def cmd_train(ws: Workspace, args) -> int:
    name = args.model
    ws.out.mkdir(parents=True, exist_ok=True)
    try:
        if name == "gbt":
            meta = ws.check_matrix()
            prep = _prepared(ws)
            model, report, _ = pipeline.run_gbt(prep, _gbt_params(ws.cfg))
            model.save(ws.model_path("gbt"))
            ws.write_meta(ws.model_path("gbt"), {"upstream_sha256": meta["sha256"]})
            top = ", ".join(f"{k}={v}" for k, v in list(gbt.importance(model).items())[:10])
            print(f"top features (F-score): {top}")
        elif name == "lstm":
            meta = ws.check_matrix()
            prep = _prepared(ws)
            sc = ws.cfg["seqnet"]
            model, report, _, log = pipeline.run_lstm(
                prep, _seqnet_params(ws.cfg), int(sc.get("window", 12)), sc.get("max_train_samples")
            )
            model.save(ws.model_path("lstm"))
            ws.write_meta(ws.model_path("lstm"), {"upstream_sha256": meta["sha256"],
                                                  "window": int(sc.get("window", 12))})
            for e in log:
                print(f"  epoch {e['epoch']}: train {e['train_rmse']:.6f} val {e.get('val_rmse', math.nan):.6f}")
        else:
            meta = ws.check_grid()
            prep = _prepared(ws, with_matrix=False)
            ac = ws.cfg["arima"]
            first = int(ws.cfg["features"].get("burn_in_blocks", 12))
            fc, report, test = pipeline.run_arima(prep, arima.ArimaOrder.parse(ac["order"]),
                                                  int(ac.get("min_nonzero", 3)), int(ws.cfg["jobs"]), first)
            diag_path = ws.out / "arima_diagnostics.csv"
            fc.diagnostics().to_csv(diag_path, index=False, lineterminator="\n")
            path = ws.model_path("arima")
            path.write_text(json.dumps({"order": ac["order"], "fallback_rate": fc.fallback_rate,
                                        "test": test[["shop_id", "item_id", "prediction"]].to_dict("list")}))
            ws.write_meta(path, {"upstream_sha256": meta["sha256"]})
            print(f"ARIMA fallback rate {fc.fallback_rate:.4f}; diagnostics -> {diag_path}")
    except (ValueError, ArithmeticError, KeyError) as exc:
        raise type(exc)(f"{name}: {exc}") from exc
    _append_report(ws, report)
    print(evalharness.render_table([report]))
    return EXIT_OK


def _model_test_predictions(ws: Workspace, name: str) -> pd.DataFrame:
    if name == "gbt":
        meta = ws.check_matrix()
        ws.check_model("gbt", meta["sha256"])
        model = gbt.GbtModel.load(ws.model_path("gbt"))
        m = read_matrix(ws.matrix)
        _, _, test = split_rows(m, config.split_spec(ws.cfg))
        pred = gbt.predict(model, test, clip=True)
        return pd.DataFrame({"shop_id": test.row_keys[:, 0], "item_id": test.row_keys[:, 1], "prediction": pred})
    if name == "lstm":
        meta = ws.check_matrix()
        mmeta = ws.check_model("lstm", meta["sha256"])
        model = seqnet.SeqNetModel.load(ws.model_path("lstm"))
        prep = _prepared(ws)
        _, _, test = prep.partitions()
        raw = seqnet.build_samples(prep.grid, prep.catalog, prep.records, test, int(mmeta.get("window", 12)))
        data = seqnet.apply_scaler(raw, model.scaler)
        pred = np.clip(seqnet.predict(model, data), 0.0, 20.0)
        return pd.DataFrame({"shop_id": test.row_keys[:, 0], "item_id": test.row_keys[:, 1], "prediction": pred})
    meta = ws.check_grid()
    ws.check_model("arima", meta["sha256"])
    saved = json.loads(ws.model_path("arima").read_text())
    return pd.DataFrame(saved["test"])


def cmd_predict(ws: Workspace, args) -> int:
    test_ids = _test_pairs(ws)
    if test_ids is None:
        raise FileNotFoundError(f"{ws.data / 'test.csv'}: required for predict")
    frame = _model_test_predictions(ws, args.model)
    out = Path(args.output) if args.output else ws.out / "submission.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    values = evalharness.write_submission(pipeline.prediction_map(frame, test_ids), test_ids, out)
    print(f"submission: {len(values)} rows -> {out}")
    labels = _labels(ws, test_ids)
    if labels is not None:
        print(f"test RMSE: {evalharness.score_submission(out, labels[['ID', 'item_cnt_month']])!r}")
    return EXIT_OK


def cmd_evaluate(ws: Workspace, args) -> int:
    if args.submission:
        labels_path = Path(args.labels) if args.labels else ws.labels_path
        score = evalharness.score_submission(args.submission, pd.read_csv(labels_path))
        print(f"submission RMSE: {score!r}")
        return EXIT_OK
    ws.check_matrix()
    m = read_matrix(ws.matrix)
    _, val, _ = split_rows(m, config.split_spec(ws.cfg))
    t = val.target
    if args.model == "mean":
        pred = np.full_like(t, t.mean())
    elif args.model == "zero":
        pred = np.zeros_like(t)
    elif args.model == "gbt":
        ws.check_model("gbt", ws.check_matrix()["sha256"])
        pred = gbt.predict(gbt.GbtModel.load(ws.model_path("gbt")), val, clip=True)
    else:
        raise UsageError(f"evaluate supports mean, zero and gbt on the validation block (got {args.model})")
    print(f"validation RMSE ({args.model}): {evalharness.rmse(pred, t)!r}")
    return EXIT_OK


def cmd_tune(ws: Workspace, args) -> int:
    meta = ws.check_matrix()
    m = read_matrix(ws.matrix)
    train, val, _ = split_rows(m, config.split_spec(ws.cfg))
    tc = ws.cfg["tune"]
    space = evalharness.SearchSpace(
        {("reg_lambda" if k == "lambda" else "reg_alpha" if k == "alpha" else k): v for k, v in tc["space"].items()},
        int(tc["n_samples"]),
        config.derive_seed(ws.cfg["seed"], "tune"),
    )
    result = evalharness.random_search(space, pipeline.gbt_scorer(train, val), n_jobs=int(ws.cfg["jobs"]))
    ws.out.mkdir(parents=True, exist_ok=True)
    log_path = Path(args.trial_log) if args.trial_log else ws.out / "trials.csv"
    result.write_log(log_path)
    (ws.out / "best_gbt_params.json").write_text(json.dumps(result.best_params, indent=1, sort_keys=True))
    print(f"best validation RMSE {result.best_val_rmse:.6f} with {json.dumps(result.best_params, sort_keys=True)}")
    print(f"trial log ({len(result.trials)} trials) -> {log_path}; features sha {meta['sha256'][:12]}")
    return EXIT_OK


def cmd_compare(ws: Workspace, args) -> int:
    prep = _prepared(ws)
    sc, ac = ws.cfg["seqnet"], ws.cfg["arima"]
    reports = evalharness.compare_models(
        prep,
        _gbt_params(ws.cfg),
        _seqnet_params(ws.cfg),
        arima.ArimaOrder.parse(ac["order"]),
        lstm_window=int(sc.get("window", 12)),
        lstm_max_train_samples=sc.get("max_train_samples"),
        arima_min_nonzero=int(ac.get("min_nonzero", 3)),
        n_jobs=int(ws.cfg["jobs"]),
    )
    ws.out.mkdir(parents=True, exist_ok=True)
    evalharness.write_report(reports, ws.out / "compare.csv")
    print(evalharness.render_table(reports))
    return EXIT_OK


def cmd_synth(ws: Workspace, args) -> int:
    panel = synthetic.generate(args.months, args.shops, args.items, seed=ws.cfg["seed"])
    out = synthetic.write_kaggle_dir(panel, args.out)
    print(f"synthetic dataset ({args.months} months x {args.shops} shops x {args.items} items) -> {out}")
    return EXIT_OK


COMMANDS = {
    "ingest": cmd_ingest,
    "features": cmd_features,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "tune": cmd_tune,
    "compare": cmd_compare,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    def shared(suppress: bool) -> argparse.ArgumentParser:
        # global flags are accepted before or after the subcommand; the copy on
        # each subparser must not reset values given before it
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p = argparse.ArgumentParser(add_help=False)
        p.add_argument("--config", default=d(None), help="JSON run configuration")
        p.add_argument("--set", dest="sets", action="append", default=d([]), metavar="KEY=VALUE",
                       help="override a config value (dotted key, JSON value); repeatable")
        p.add_argument("--seed", type=int, default=d(None), help="global seed")
        p.add_argument("--jobs", type=int, default=d(None), help="worker count for parallel stages")
        p.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return p

    common = shared(suppress=True)
    parser = _Parser(prog="salesfc", description=__doc__.splitlines()[0], parents=[shared(suppress=False)])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("ingest", parents=[common], help="parse raw CSVs and build the monthly grid cache")
    sub.add_parser("features", parents=[common], help="build the feature matrix cache")
    p = sub.add_parser("train", parents=[common], help="fit one model")
    p.add_argument("model", choices=MODELS)
    p = sub.add_parser("predict", parents=[common], help="write a submission file")
    p.add_argument("--model", choices=MODELS, default="gbt")
    p.add_argument("--output", help="submission path (default <output_dir>/submission.csv)")
    p = sub.add_parser("evaluate", parents=[common], help="validation RMSE of a model or baseline")
    p.add_argument("--model", choices=("gbt", "mean", "zero"), default="gbt")
    p.add_argument("--submission", help="score this submission file against labels instead")
    p.add_argument("--labels", help="labels CSV (ID,item_cnt_month)")
    p = sub.add_parser("tune", parents=[common], help="random search over GBT hyperparameters")
    p.add_argument("--trial-log", help="trial log CSV path (default <output_dir>/trials.csv)")
    sub.add_parser("compare", parents=[common], help="train all three models and print the RMSE table")
    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset in the raw file layout")
    p.add_argument("--out", required=True)
    p.add_argument("--months", type=int, default=24)
    p.add_argument("--shops", type=int, default=20)
    p.add_argument("--items", type=int, default=50)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = config.load_config(args.config, args.sets)
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.jobs is not None:
            cfg["jobs"] = args.jobs
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return COMMANDS[args.command](Workspace(cfg), args)
    except UsageError as exc:
        print(f"salesfc: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as exc:
        print(f"salesfc: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, SchemaError, ReferentialIntegrityError, StaleCacheError,
            EmptyPartitionError, InsufficientDataError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"salesfc: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface: synth -> ingest -> label -> featurize -> train -> predict -> evaluate.

Every stage reads the previous stage's artifacts from disk and is
idempotent for a fixed seed: rerunning with identical inputs rewrites
byte-identical outputs. All randomness flows from --seed.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import adapter as adapter_mod
from . import features as features_mod
from . import forest as forest_mod
from . import ingestion, labeling, metrics, pipeline, store, synth
from .errors import FailcastError
from .features import DatasetConfig, FeatureConfig, Instance
from .forest import ForestParams
from .ocsvm import OcsvmParams
from .trace_model import INTERVAL_US, FailureType

logger = logging.getLogger(__name__)

PREDICTIONS_HEADER = "machine_id,interval,predicted_y,score"


def _read_config_file(path: Optional[str]) -> dict[str, str]:
    if not path:
        return {}
    cfg = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FailcastError(f"config line without '=': {line!r}")
        key, value = line.split("=", 1)
        cfg[key.strip()] = value.strip()
    return cfg


class _Resolver:
    """CLI flag > config-file entry > built-in default."""

    def __init__(self, ns: argparse.Namespace, cfg: dict[str, str]):
        self.ns = ns
        self.cfg = cfg

    def get(self, name: str, default, cast=None):
        value = getattr(self.ns, name, None)
        if value is not None:
            return value
        if name in self.cfg:
            raw = self.cfg[name]
            if cast is not None:
                return cast(raw)
            if default is not None:
                return type(default)(raw)
            return raw
        return default


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _require_file(path: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FailcastError(f"input not found: {p}")
    return p


# ---------------------------------------------------------------- synth


def _cmd_synth(ns: argparse.Namespace, cfg: dict[str, str]) -> int:
    r = _Resolver(ns, cfg)
    config = synth.SynthConfig(
        machines=r.get("machines", 500),
        horizon_days=r.get("days", 7.0),
        signature_strength=r.get("signature", 0.9),
        degenerate_machines=r.get("degenerate", 2),
        rng_seed=r.get("seed", 0),
    )
    paths = synth.generate(config, Path(ns.out))
    print(f"wrote {paths.events}")
    print(f"wrote {paths.usage}")
    print(f"wrote {paths.truth}")
    return 0


# ---------------------------------------------------------------- ingest


def _cmd_ingest(ns: argparse.Namespace, cfg: dict[str, str]) -> int:
    r = _Resolver(ns, cfg)
    events_path = _require_file(ns.events)
    usage_path = _require_file(ns.usage)
    with open(events_path) as f:
        events = ingestion.parse_machine_events(f)
    with open(usage_path) as f:
        records, clamps = ingestion.parse_usage_records(f)
    interval_us = r.get("interval_us", INTERVAL_US)
    horizon = r.get("horizon_us", 0, int)
    if not horizon:
        max_end = max((rec.end_us for rec in records), default=0)
        max_event = max((e.time_us + 1 for e in events), default=0)
        horizon = -(-max(max_end, max_event) // interval_us) * interval_us
    series = ingestion.aggregate_intervals(records, horizon, interval_us)
    store.save_interval_store(
        series,
        Path(ns.out),
        interval_us,
        horizon,
        extra_meta={
            "events": len(events),
            "usage_records": len(records),
            "values_clamped": clamps.values_clamped,
            "rows_with_clamps": clamps.rows_affected,
        },
    )
    print(
        f"ingested {len(records)} usage records for {len(series)} machines "
        f"({clamps.values_clamped} values clamped); store at {ns.out}"
    )
    return 0


# ---------------------------------------------------------------- label


def _cmd_label(ns: argparse.Namespace, cfg: dict[str, str]) -> int:
    r = _Resolver(ns, cfg)
    series, meta = store.load_interval_store(_require_file(ns.store))
    with open(_require_file(ns.events)) as f:
        events = ingestion.parse_machine_events(f)
    lcfg = labeling.LabelingConfig(
        ir_max_downtime_us=r.get("ir_max_minutes", 30) * 60 * 1_000_000,
        degenerate_min_failures=r.get("degenerate_min_failures", 100),
        trace_end_us=meta["horizon_us"],
    )
    pairing = labeling.pair_failures(events, lcfg)
    excluded = labeling.detect_degenerate_machines(series, pairing.failures, lcfg)
    kept_series = {m: s for m, s in series.items() if m not in excluded}
    kept_failures = [f for f in pairing.failures if f.machine_id not in excluded]
    tracks = labeling.build_label_tracks(
        kept_failures, kept_series, lcfg, meta["interval_us"]
    )
    out_dir = Path(ns.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    store.save_label_store(
        tracks,
        out_dir,
        excluded,
        extra_meta={
            "failures": len(kept_failures),
            "dropped_removes": pairing.dropped_removes,
            "class_counts": {
                "ir": sum(f.ftype == FailureType.IMMEDIATE_REBOOT for f in kept_failures),
                "sr": sum(f.ftype == FailureType.SLOW_REBOOT for f in kept_failures),
                "fd": sum(
                    f.ftype == FailureType.FORCIBLE_DECOMMISSION for f in kept_failures
                ),
            },
        },
    )
    with open(out_dir / "failures.csv", "w", newline="\n") as f:
        labeling.write_failures_csv(kept_failures, f)
    print(
        f"labeled {len(kept_failures)} failures over {len(tracks)} machines; "
        f"excluded {len(excluded)} degenerate machine(s)"
    )
    return 0


# ---------------------------------------------------------------- pacf-report


def _cmd_pacf_report(ns: argparse.Namespace, cfg: dict[str, str]) -> int:
    r = _Resolver(ns, cfg)
    series, _ = store.load_interval_store(_require_file(ns.store))
    max_lag = r.get("max_lag", 10)
    results = features_mod.pacf_by_machine(series, max_lag=max_lag)
    hist = features_mod.significant_lag_histogram(results)
    out = Path(ns.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="\n") as f:
        f.write("lag,significant_pairs\n")
        for lag in range(1, max_lag + 1):
            f.write(f"{lag},{hist.get(lag, 0)}\n")
    total = sum(hist.values())
    in_window = sum(c for lag, c in hist.items() if lag <= 6)
    share = in_window / total if total else float("nan")
    print(
        f"pacf over {len(results)} machine-resource pairs; "
        f"{total} significant lags, {share:.1%} within lags 1..6; wrote {out}"
    )
    return 0


# ---------------------------------------------------------------- featurize


def _cmd_featurize(ns: argparse.Namespace, cfg: dict[str, str]) -> int:
    r = _Resolver(ns, cfg)
    series, _meta = store.load_interval_store(_require_file(ns.store))
    tracks, label_meta = store.load_label_store(_require_file(ns.labels))
    fcfg = FeatureConfig(lags=r.get("lags", 6))
    dcfg = DatasetConfig(
        normal_sample_count=r.get("normal_samples", 50_000),
        rng_seed=r.get("seed", 0),
        train_fraction=r.get("train_fraction", 0.8),
    )
    kept = {m: s for m, s in series.items() if m in tracks}
    train_set, test_set = features_mod.build_dataset(kept, tracks, fcfg, dcfg)
    out_dir = Path(ns.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, instances in (("train", train_set), ("test", test_set)):
        with open(out_dir / f"{name}.csv", "w", newline="\n") as f:
            features_mod.write_dataset_csv(instances, f, fcfg.dim)
        with open(out_dir / f"{name}_ids.csv", "w", newline="\n") as f:
            features_mod.write_ids_csv(instances, f)
    (out_dir / "layout.json").write_text(fcfg.layout_json())
    print(
        f"dataset: {len(train_set)} train / {len(test_set)} test instances "
        f"({fcfg.dim} features); wrote {out_dir}"
    )
    return 0


# ---------------------------------------------------------------- train


def _load_instances(data_dir: Path, name: str) -> list[Instance]:
    with open(data_dir / f"{name}.csv") as f:
        X, y = features_mod.read_dataset_csv(f)
    ids_path = data_dir / f"{name}_ids.csv"
    pairs = []
    if ids_path.exists():
        for i, line in enumerate(ids_path.read_text().splitlines()):
            if i == 0 or not line:
                continue
            m, tau = line.split(",")
            pairs.append((int(m), int(tau)))
    else:
        pairs = [(0, i) for i in range(len(y))]
    return [
        Instance(y=FailureType(int(yi)), x=xi, machine_id=m, interval=tau)
        for xi, yi, (m, tau) in zip(X, y, pairs)
    ]


def _parse_float_list(raw: str) -> tuple[float, ...]:
    return tuple(float(v) for v in raw.split(",") if v)


def _parse_int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(v) for v in raw.split(",") if v)


def _cmd_train(ns: argparse.Namespace, cfg: dict[str, str]) -> int:
    r = _Resolver(ns, cfg)
    data_dir = _require_file(ns.data)
    train_set = _load_instances(Path(data_dir), "train")
    seed = r.get("seed", 0)
    threads = r.get("threads", 1)

    gammas = _parse_float_list(r.get("gammas", "", str) or str(r.get("gamma", 1.0 / 72.0)))
    nus = _parse_float_list(r.get("nus", "", str) or str(r.get("nu", 0.05)))
    trees = _parse_int_list(r.get("trees_grid", "", str) or str(r.get("trees", 100)))
    grid = pipeline.GridSpec(
        gammas=gammas, nus=nus, tree_counts=trees, folds=r.get("folds", 5)
    )
    base_ocsvm = OcsvmParams(tol=r.get("tol", 1e-4))
    base_forest = ForestParams(rng_seed=seed)

    (best_gamma, best_nu, best_trees), table = pipeline.grid_search_cv(
        train_set, grid, seed, base_ocsvm, base_forest, threads=threads
    )
    model = pipeline.train(
        train_set,
        OcsvmParams(nu=best_nu, gamma=best_gamma, tol=base_ocsvm.tol),
        ForestParams(n_trees=best_trees, rng_seed=seed),
        FeatureConfig(lags=r.get("lags", 6)),
    )
    out_dir = Path(ns.out)
    pipeline.save_bundle(model, out_dir)
    with open(out_dir / "cv_table.csv", "w", newline="\n") as f:
        f.write("gamma,nu,trees,mean_f3," + ",".join(
            f"fold{i}_f3" for i in range(grid.folds)) + "\n")
        for cell in table:
            folds = ",".join(f"{v:.6f}" for v in cell.fold_f3)
            f.write(
                f"{cell.gamma!r},{cell.nu!r},{cell.n_trees},{cell.mean_f3:.6f},{folds}\n"
            )
    with open(out_dir / "split_counts.csv", "w", newline="\n") as f:
        f.write("index,kind,resource,lag,count\n")
        for row in forest_mod.split_count_report(model.forest, model.feature_config):
            f.write(
                f"{row['index']},{row['kind']},{row['resource']},{row['lag']},{row['count']}\n"
            )
    if ns.archive:
        pipeline.save_archive(model, Path(ns.archive))
    print(
        f"best cell: gamma={best_gamma:g} nu={best_nu:g} trees={best_trees}; "
        f"bundle at {out_dir}"
    )
    return 0


# ---------------------------------------------------------------- predict


def _cmd_predict(ns: argparse.Namespace, cfg: dict[str, str]) -> int:
    model = pipeline.load_bundle(_require_file(ns.model))
    if ns.stream:
        for line in sys.stdin:
            line = line.strip()
            if not line:
                continue
            x = np.array([float(v) for v in line.split(",")])
            y = pipeline.predict(model, x)
            s = pipeline.score(model, x)
            sys.stdout.write(f"{int(y)},{float(s)!r}\n")
            sys.stdout.flush()
        return 0
    if not ns.data or not ns.out:
        raise FailcastError("predict needs --data and --out unless --stream is set")
    data_dir = Path(_require_file(ns.data))
    instances = _load_instances(data_dir, ns.split)
    X, _ = features_mod.to_arrays(instances)
    preds, scores = pipeline.predict_batch(model, X)
    out = Path(ns.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="\n") as f:
        f.write(PREDICTIONS_HEADER + "\n")
        for inst, p, s in zip(instances, preds, scores):
            f.write(f"{inst.machine_id},{inst.interval},{int(p)},{float(s)!r}\n")
    print(f"wrote {len(instances)} predictions to {out}")
    return 0


# ---------------------------------------------------------------- evaluate


def _read_predictions(path: Path) -> dict[tuple[int, int], tuple[int, float]]:
    out = {}
    for i, line in enumerate(path.read_text().splitlines()):
        if i == 0:
            if line != PREDICTIONS_HEADER:
                raise FailcastError(f"unexpected predictions header in {path}")
            continue
        if not line:
            continue
        m, tau, y, s = line.split(",")
        out[(int(m), int(tau))] = (int(y), float(s))
    return out


def _cmd_evaluate(ns: argparse.Namespace, cfg: dict[str, str]) -> int:
    r = _Resolver(ns, cfg)
    preds_by_id = _read_predictions(_require_file(ns.predictions))
    data_dir = Path(_require_file(ns.data))
    instances = _load_instances(data_dir, ns.split)
    actuals, preds, scores = [], [], []
    for inst in instances:
        key = (inst.machine_id, inst.interval)
        if key not in preds_by_id:
            raise FailcastError(f"missing prediction for instance {key}")
        y, s = preds_by_id[key]
        actuals.append(int(inst.y))
        preds.append(y)
        scores.append(s)

    latency = None
    reps = r.get("latency", 0)
    if reps:
        if not ns.model:
            raise FailcastError("--latency needs --model to time predictions")
        model = pipeline.load_bundle(_require_file(ns.model))
        X, _ = features_mod.to_arrays(instances)
        latency = metrics.measure_latency(
            lambda x: pipeline.predict(model, x), list(X), reps
        )
    report = metrics.build_report(preds, actuals, scores, latency=latency)
    out_dir = Path(ns.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.txt").write_text(metrics.render_text(report))
    (out_dir / "report.kv").write_text(metrics.render_kv(report))
    try:
        points = metrics.roc_curve(scores, actuals)
        with open(out_dir / "roc.csv", "w", newline="\n") as f:
            metrics.write_roc_csv(points, f)
    except metrics.UndefinedAucError:
        logger.warning("single-class input; skipping ROC export")
    print(metrics.render_text(report))
    return 0


# ---------------------------------------------------------------- adapt-google


def _cmd_adapt_google(ns: argparse.Namespace, cfg: dict[str, str]) -> int:
    stats = adapter_mod.adapt(
        _require_file(ns.machine_events),
        _require_file(ns.task_usage),
        Path(ns.out),
    )
    print(
        f"converted {stats.events_converted} events "
        f"({stats.events_skipped} skipped), "
        f"{stats.usage_rows_read} task rows into {stats.usage_bins_written} "
        f"machine bins ({stats.values_clamped} clamped); output at {ns.out}"
    )
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master rng seed")
    common.add_argument("--threads", type=int, default=None, help="worker bound")
    common.add_argument("--config", default=None, help="key=value fallback file")

    p = argparse.ArgumentParser(
        prog="failcast",
        description="Machine-failure forecasting pipeline over cluster traces.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic trace")
    s.add_argument("--out", required=True)
    s.add_argument("--machines", type=int, default=None)
    s.add_argument("--days", type=float, default=None)
    s.add_argument("--signature", type=float, default=None)
    s.add_argument("--degenerate", type=int, default=None)
    s.set_defaults(func=_cmd_synth)

    s = sub.add_parser("ingest", parents=[common], help="parse and bin a trace")
    s.add_argument("--events", required=True)
    s.add_argument("--usage", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--interval-us", dest="interval_us", type=int, default=None)
    s.add_argument("--horizon-us", dest="horizon_us", type=int, default=None)
    s.set_defaults(func=_cmd_ingest)

    s = sub.add_parser("label", parents=[common], help="pair and categorize failures")
    s.add_argument("--store", required=True)
    s.add_argument("--events", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--ir-max-minutes", dest="ir_max_minutes", type=int, default=None)
    s.add_argument(
        "--degenerate-min-failures",
        dest="degenerate_min_failures",
        type=int,
        default=None,
    )
    s.set_defaults(func=_cmd_label)

    s = sub.add_parser("pacf-report", parents=[common], help="significant-lag histogram")
    s.add_argument("--store", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--max-lag", dest="max_lag", type=int, default=None)
    s.set_defaults(func=_cmd_pacf_report)

    s = sub.add_parser("featurize", parents=[common], help="build the labeled dataset")
    s.add_argument("--store", required=True)
    s.add_argument("--labels", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--lags", type=int, default=None)
    s.add_argument("--normal-samples", dest="normal_samples", type=int, default=None)
    s.add_argument(
        "--train-fraction", dest="train_fraction", type=float, default=None
    )
    s.set_defaults(func=_cmd_featurize)

    s = sub.add_parser("train", parents=[common], help="grid-search CV, then train")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--gamma", type=float, default=None)
    s.add_argument("--nu", type=float, default=None)
    s.add_argument("--trees", type=int, default=None)
    s.add_argument("--gammas", default=None, help="comma list enabling a grid axis")
    s.add_argument("--nus", default=None)
    s.add_argument("--trees-grid", dest="trees_grid", default=None)
    s.add_argument("--folds", type=int, default=None)
    s.add_argument("--lags", type=int, default=None)
    s.add_argument("--tol", type=float, default=None)
    s.add_argument("--archive", default=None, help="also write a single-file bundle")
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("predict", parents=[common], help="classify instances")
    s.add_argument("--model", required=True)
    s.add_argument("--data", default=None)
    s.add_argument("--split", default="test", choices=("train", "test"))
    s.add_argument("--out", default=None)
    s.add_argument(
        "--stream",
        action="store_true",
        help="read f0..f71 lines from stdin, write y,score lines",
    )
    s.set_defaults(func=_cmd_predict)

    s = sub.add_parser("evaluate", parents=[common], help="metrics report + ROC csv")
    s.add_argument("--predictions", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--split", default="test", choices=("train", "test"))
    s.add_argument("--out", required=True)
    s.add_argument("--model", default=None)
    s.add_argument(
        "--latency",
        type=int,
        default=None,
        help="also time this many predict calls (needs --model; report stops "
        "being byte-reproducible)",
    )
    s.set_defaults(func=_cmd_evaluate)

    s = sub.add_parser(
        "adapt-google", parents=[common], help="convert clusterdata-2011 tables"
    )
    s.add_argument("--machine-events", dest="machine_events", required=True)
    s.add_argument("--task-usage", dest="task_usage", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_cmd_adapt_google)

    return p


def main(argv: Optional[list[str]] = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _read_config_file(ns.config)
        return ns.func(ns, cfg)
    except FailcastError as exc:
        return _fail(str(exc))
    except FileNotFoundError as exc:
        return _fail(f"missing file: {exc.filename}")


if __name__ == "__main__":
    sys.exit(main())

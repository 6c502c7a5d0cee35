"""Command-line entry points for the whole platform.

Everything operates on a --data-dir holding the funnel store,
dimensions, experiment configs, the model repository, and the analytics
table. Subcommands are thin wrappers over the library modules.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import sys
from pathlib import Path

from . import __version__
from .cubes import AnalyticsTable, build_cubes
from .experiments import ExperimentConfig, ExperimentStore
from .features import (
    CourseCatalog,
    FeatureSnapshot,
    build_training_set,
    compute_trailing_aggregates,
    save_aggregates_csv,
)
from .pmml import to_pmml
from .repository import ModelRepository
from .scoring import PRESETS, ScoreParams, Scorer, batch_score
from .sim import SimConfig, run_sessions, write_events
from .store import FunnelStore, parse_date
from .trees import TreeParams, evaluate_holdout, train_tree

ANALYTICS_FILE = "analytics/analytics.csv"


def _store(args) -> FunnelStore:
    return FunnelStore(args.data_dir)


def _date(value: str) -> dt.date:
    return parse_date(value)


def _params_from(args) -> ScoreParams:
    if args.preset:
        return PRESETS[args.preset]
    return ScoreParams.from_dict(json.loads(args.params)) \
        if getattr(args, "params", None) else ScoreParams()


def cmd_ingest(args):
    store = _store(args)
    total = None
    for path in args.files:
        with open(path, encoding="utf-8") as fh:
            report = store.ingest_events(fh)
        print(f"{path}: created={report.created} merged={report.merged} "
              f"deduped={report.deduped} rejects={len(report.rejects)}")
        for reject in report.rejects[:20]:
            print(f"  line {reject.line}: {reject.reason}", file=sys.stderr)
        total = report
    if not args.no_compact:
        snapshot = store.compact()
        print(f"compacted snapshot {snapshot}")
    return 0 if total is None or not total.rejects else 1


def cmd_compact(args):
    print(f"compacted snapshot {_store(args).compact()}")


def cmd_scan(args):
    store = _store(args)
    filters = {}
    for clause in args.filter or []:
        key, _, value = clause.partition("=")
        filters[key] = value
    count = 0
    for row in store.scan(filters or None, args.date_from, args.date_to):
        print(json.dumps(row.to_record(), sort_keys=True))
        count += 1
        if args.limit and count >= args.limit:
            break


def cmd_dimension_register(args):
    store = _store(args)
    with open(args.csv, encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    store.register_dimension(args.name, args.keys.split(","), rows)
    print(f"registered dimension {args.name} ({len(rows)} rows)")


def _as_of_or_fail(args, store):
    as_of = args.as_of or store.max_date
    if as_of is None:
        print("store is empty; ingest events first (or pass --as-of)",
              file=sys.stderr)
        sys.exit(1)
    return as_of


def cmd_features_build(args):
    store = _store(args)
    as_of = _as_of_or_fail(args, store)
    catalog = CourseCatalog.from_store(store)
    aggregates = compute_trailing_aggregates(store, as_of, catalog)
    out = Path(args.data_dir) / "features" / f"aggregates-{as_of}.csv"
    save_aggregates_csv(aggregates, out)
    print(f"wrote {len(aggregates)} course aggregates to {out}")


def cmd_features_vector(args):
    store = _store(args)
    as_of = _as_of_or_fail(args, store)
    snapshot = FeatureSnapshot(store, CourseCatalog.from_store(store), as_of)
    vector = snapshot.feature_vector(args.visitor, args.course, args.context)
    print(json.dumps(vector, indent=2))


def cmd_model_train(args):
    store = _store(args)
    catalog = CourseCatalog.from_store(store)
    date_from = args.date_from or store.min_date
    date_to = args.date_to or store.max_date
    rows = build_training_set(store, catalog, args.target, date_from, date_to)
    if not rows:
        print("no training rows in range", file=sys.stderr)
        return 1
    holdout = []
    training = rows
    if args.holdout_fraction > 0:
        cut = int(len(rows) * (1 - args.holdout_fraction))
        training, holdout = rows[:cut], rows[cut:]
    params = TreeParams(max_depth=args.max_depth,
                        min_leaf_weight=args.min_leaf_weight,
                        min_gain=args.min_gain)
    tree = train_tree(training, params, target_name=args.target)
    repo = ModelRepository(Path(args.data_dir) / "models")
    model_id = args.model_id or f"{args.target}_tree"
    document = to_pmml(tree)
    manifest = repo.save_model(document, model_id, args.target,
                               (date_from.isoformat(), date_to.isoformat()))
    print(f"saved {model_id} v{manifest.version} "
          f"({tree.node_count()} nodes, {len(training)} rows)"
          f"{' [active]' if manifest.active else ''}")
    if holdout:
        report = evaluate_holdout(tree, holdout)
        print(f"holdout: weighted MAE {report.weighted_mae:.4f}, "
              f"bias {report.weighted_mean_bias:+.4f} "
              f"({report.count} rows)")


def cmd_model_eval(args):
    store = _store(args)
    repo = ModelRepository(Path(args.data_dir) / "models")
    tree, manifest = (repo.load(args.model_id, args.version)
                      if args.version else repo.get_active(args.target))
    catalog = CourseCatalog.from_store(store)
    date_from = args.date_from or store.min_date
    date_to = args.date_to or store.max_date
    holdout = build_training_set(store, catalog, manifest.target,
                                 date_from, date_to)
    if not holdout:
        print("no holdout rows in range", file=sys.stderr)
        return 1
    report = evaluate_holdout(tree, holdout)
    print(f"{manifest.model_id} v{manifest.version} on "
          f"{report.count} rows: weighted MAE {report.weighted_mae:.4f}, "
          f"bias {report.weighted_mean_bias:+.4f}")
    for decile in report.deciles:
        print(f"  decile {decile.decile}: n={decile.count} "
              f"pred={decile.mean_prediction:.3f} "
              f"actual={decile.mean_target:.3f} bias={decile.bias:+.4f}")


def cmd_model_activate(args):
    repo = ModelRepository(Path(args.data_dir) / "models")
    manifest = repo.activate(args.model_id, args.version)
    print(f"activated {manifest.model_id} v{manifest.version} "
          f"for target {manifest.target}")


def cmd_model_list(args):
    repo = ModelRepository(Path(args.data_dir) / "models")
    for m in repo.list_manifests():
        flag = " *active*" if m.active else ""
        print(f"{m.model_id} v{m.version} target={m.target} "
              f"window={m.training_window[0]}..{m.training_window[1]}{flag}")


def _active_models(repo: ModelRepository, params: ScoreParams) -> dict:
    return {target: repo.get_active(target)[0]
            for target in params.required_targets()}


def cmd_score_one(args):
    store = _store(args)
    as_of = _as_of_or_fail(args, store)
    params = _params_from(args)
    repo = ModelRepository(Path(args.data_dir) / "models")
    snapshot = FeatureSnapshot(store, CourseCatalog.from_store(store), as_of)
    scorer = Scorer(snapshot, _active_models(repo, params))
    value = scorer.score(args.visitor, args.course, params)
    print(json.dumps({"visitor_id": args.visitor, "course_id": args.course,
                      "as_of": as_of.isoformat(), "score": value}))


def cmd_score_batch(args):
    store = _store(args)
    as_of = _as_of_or_fail(args, store)
    params = _params_from(args)
    repo = ModelRepository(Path(args.data_dir) / "models")
    catalog = CourseCatalog.from_store(store)
    snapshot = FeatureSnapshot(store, catalog, as_of)
    scorer = Scorer(snapshot, _active_models(repo, params))
    visitors = sorted({r.visitor_id for r in store.rows()})
    if args.limit_visitors:
        visitors = visitors[:args.limit_visitors]
    out_dir = Path(args.data_dir) / "cache" / f"scores-{as_of}"
    entries, report = batch_score(scorer, visitors, catalog.course_ids(),
                                  params, out_dir=out_dir,
                                  partitions=args.partitions)
    print(f"scored {len(entries)} visitors into {out_dir} "
          f"(completed={report.completed} skipped={report.skipped} "
          f"failed={report.failed})")
    return 1 if report.failed else 0


def cmd_experiment_create(args):
    with open(args.config, encoding="utf-8") as fh:
        config = ExperimentConfig.from_dict(json.load(fh))
    ExperimentStore(Path(args.data_dir) / "experiments").save(config)
    print(f"saved experiment {config.experiment_id}")


def cmd_experiment_list(args):
    store = ExperimentStore(Path(args.data_dir) / "experiments")
    for config in store.list_experiments():
        tags = ",".join(config.variant_tags())
        print(f"{config.experiment_id}: {config.start_date}.."
              f"{config.end_date} traffic={config.traffic_fraction} "
              f"variants={tags}")


def cmd_cube_build(args):
    store = _store(args)
    experiments = ExperimentStore(Path(args.data_dir) / "experiments")
    config = experiments.get(args.experiment)
    numerators = args.numerators.split(",") if args.numerators \
        else ["page_context"]
    denominators = args.denominators.split(",") if args.denominators \
        else ["visitor_newness"]
    rows = build_cubes(store, config, numerator_dims=numerators,
                       denominator_dims=denominators,
                       date_from=args.date_from, date_to=args.date_to)
    path = Path(args.data_dir) / ANALYTICS_FILE
    table = AnalyticsTable.load(path)
    table.replace_experiment(config.experiment_id, rows)
    table.save(path)
    print(f"built {len(rows)} analytics rows for {config.experiment_id} "
          f"into {path}")


def cmd_cube_query(args):
    experiments = ExperimentStore(Path(args.data_dir) / "experiments")
    config = experiments.get(args.experiment)
    control = args.control_variant or config.control.variant_tag
    test = args.test_variant or next(
        tag for tag in config.variant_tags() if tag != control)
    table = AnalyticsTable.load(Path(args.data_dir) / ANALYTICS_FILE)
    filters = {}
    for clause in args.filters.split(",") if args.filters else []:
        key, _, value = clause.partition(":")
        filters[key] = value
    results = table.query(args.experiment, args.numerator, args.measure,
                          test_variant=test, control_variant=control,
                          filters=filters)
    for result in results:
        print(json.dumps(result.to_dict(), sort_keys=True))


def cmd_sim_run(args):
    with open(args.config, encoding="utf-8") as fh:
        config = SimConfig.from_dict(json.load(fh))
    with open(args.experiment, encoding="utf-8") as fh:
        experiment = ExperimentConfig.from_dict(json.load(fh))
    result = run_sessions(config, experiment)
    write_events(result.events, args.out)
    print(f"wrote {len(result.events)} events to {args.out}")
    if args.register:
        data_store = FunnelStore(args.data_dir)
        data_store.register_dimension("course", ["course_id"],
                                      result.course_rows)
        with open(args.out, encoding="utf-8") as fh:
            report = data_store.ingest_events(fh)
        snapshot = data_store.compact()
        ExperimentStore(Path(args.data_dir) / "experiments").save(experiment)
        print(f"ingested into {args.data_dir} (snapshot {snapshot}, "
              f"created={report.created})")


def cmd_serve(args):
    from .server import run_server

    run_server(args.data_dir, host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="slatelab",
        description="recommender experimentation platform")
    parser.add_argument("--data-dir", default="./data",
                        help="platform data directory (default ./data)")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="ingest NDJSON event files")
    p.add_argument("files", nargs="+")
    p.add_argument("--no-compact", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("compact", help="fold pending events into a snapshot")
    p.set_defaults(func=cmd_compact)

    p = sub.add_parser("scan", help="stream funnel rows")
    p.add_argument("--filter", action="append", metavar="FIELD=VALUE")
    p.add_argument("--from", dest="date_from", type=_date, default=None)
    p.add_argument("--to", dest="date_to", type=_date, default=None)
    p.add_argument("--limit", type=int, default=0)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("dimension", help="dimension management")
    dim_sub = p.add_subparsers(dest="dim_command", required=True)
    d = dim_sub.add_parser("register")
    d.add_argument("name")
    d.add_argument("--keys", required=True,
                   help="comma-separated funnel key fields")
    d.add_argument("--csv", required=True)
    d.set_defaults(func=cmd_dimension_register)

    p = sub.add_parser("features", help="feature engineering")
    feat_sub = p.add_subparsers(dest="features_command", required=True)
    f = feat_sub.add_parser("build")
    f.add_argument("--as-of", dest="as_of", type=_date, default=None)
    f.set_defaults(func=cmd_features_build)
    f = feat_sub.add_parser("vector")
    f.add_argument("--visitor", required=True)
    f.add_argument("--course", type=int, required=True)
    f.add_argument("--as-of", dest="as_of", type=_date, default=None)
    f.add_argument("--context", default="featured")
    f.set_defaults(func=cmd_features_vector)

    p = sub.add_parser("model", help="tree model lifecycle")
    model_sub = p.add_subparsers(dest="model_command", required=True)
    m = model_sub.add_parser("train")
    m.add_argument("--target", choices=("epmi", "cpe", "npe"), required=True)
    m.add_argument("--from", dest="date_from", type=_date, default=None)
    m.add_argument("--to", dest="date_to", type=_date, default=None)
    m.add_argument("--max-depth", type=int, default=6)
    m.add_argument("--min-leaf-weight", type=float, default=1000.0)
    m.add_argument("--min-gain", type=float, default=1e-6)
    m.add_argument("--model-id", default=None)
    m.add_argument("--holdout-fraction", type=float, default=0.2)
    m.set_defaults(func=cmd_model_train)
    m = model_sub.add_parser("eval")
    m.add_argument("--model-id", default=None)
    m.add_argument("--version", type=int, default=None)
    m.add_argument("--target", default="epmi")
    m.add_argument("--from", dest="date_from", type=_date, default=None)
    m.add_argument("--to", dest="date_to", type=_date, default=None)
    m.set_defaults(func=cmd_model_eval)
    m = model_sub.add_parser("activate")
    m.add_argument("--model-id", required=True)
    m.add_argument("--version", type=int, required=True)
    m.set_defaults(func=cmd_model_activate)
    m = model_sub.add_parser("list")
    m.set_defaults(func=cmd_model_list)

    p = sub.add_parser("score", help="batch and on-request scoring")
    score_sub = p.add_subparsers(dest="score_command", required=True)
    s = score_sub.add_parser("one")
    s.add_argument("--visitor", required=True)
    s.add_argument("--course", type=int, required=True)
    s.add_argument("--as-of", dest="as_of", type=_date, default=None)
    s.add_argument("--preset", choices=sorted(PRESETS), default=None)
    s.add_argument("--params", default=None, help="ScoreParams as JSON")
    s.set_defaults(func=cmd_score_one)
    s = score_sub.add_parser("batch")
    s.add_argument("--as-of", dest="as_of", type=_date, default=None)
    s.add_argument("--preset", choices=sorted(PRESETS), default=None)
    s.add_argument("--params", default=None)
    s.add_argument("--partitions", type=int, default=4)
    s.add_argument("--limit-visitors", type=int, default=0)
    s.set_defaults(func=cmd_score_batch)

    p = sub.add_parser("experiment", help="experiment configs")
    exp_sub = p.add_subparsers(dest="experiment_command", required=True)
    e = exp_sub.add_parser("create")
    e.add_argument("--config", required=True)
    e.set_defaults(func=cmd_experiment_create)
    e = exp_sub.add_parser("list")
    e.set_defaults(func=cmd_experiment_list)

    p = sub.add_parser("cube", help="hypercube analytics")
    cube_sub = p.add_subparsers(dest="cube_command", required=True)
    c = cube_sub.add_parser("build")
    c.add_argument("--experiment", required=True)
    c.add_argument("--numerators", default=None,
                   help="comma-separated numerator dims")
    c.add_argument("--denominators", default=None)
    c.add_argument("--from", dest="date_from", type=_date, default=None)
    c.add_argument("--to", dest="date_to", type=_date, default=None)
    c.set_defaults(func=cmd_cube_build)
    c = cube_sub.add_parser("query")
    c.add_argument("--experiment", required=True)
    c.add_argument("--numerator", default="_overall")
    c.add_argument("--measure", default="impressions")
    c.add_argument("--filters", default=None, help="dim:value,dim:value")
    c.add_argument("--test-variant", default=None)
    c.add_argument("--control-variant", default=None)
    c.set_defaults(func=cmd_cube_query)

    p = sub.add_parser("sim", help="marketplace simulator")
    sim_sub = p.add_subparsers(dest="sim_command", required=True)
    s = sim_sub.add_parser("run")
    s.add_argument("--config", required=True, help="SimConfig JSON file")
    s.add_argument("--experiment", required=True,
                   help="ExperimentConfig JSON file")
    s.add_argument("--out", required=True)
    s.add_argument("--register", action="store_true",
                   help="also ingest the log and course dimension into "
                        "--data-dir")
    s.set_defaults(func=cmd_sim_run)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8330)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    result = args.func(args)
    return int(result or 0)


if __name__ == "__main__":
    sys.exit(main())

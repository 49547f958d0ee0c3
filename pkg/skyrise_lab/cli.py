"""Command-line entry point.

Subcommands: ``datagen``, ``bench run``, ``query run``, ``econ bei|beas|qph``,
``warming`` and ``catalog validate|show``. Human-readable tables by default,
JSON with ``--json``. Exit codes: 0 success, 1 usage or validation problem,
2 any other lab failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from skyrise_lab.bench import ExperimentConfig, Lab, emit_plotdata, run_experiment
from skyrise_lab.config import calibration_dir, catalog_path, env_seed, verbose_from_env
from skyrise_lab.dataform import describe, generate_files
from skyrise_lab.econ import (
    NeverBreaksEven,
    break_even_qph,
    render_scan_table,
    render_shuffle_table,
    scan_break_even_table,
    scan_table_csv,
    shuffle_break_even_table,
    shuffle_table_csv,
    table_to_dict,
)
from skyrise_lab.errors import DriverFailure, IoError, SkyriseLabError, ValidationError
from skyrise_lab.pricing import PriceCatalog, WarmingModel, load_catalog, warming_cost
from skyrise_lab.storesim import load_storage_calibration
from skyrise_lab.validation import LabValidator

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_FAILURE = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that reports usage problems instead of exiting with 2"""

    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    if quiet:
        level = logging.ERROR
    elif verbose or verbose_from_env():
        level = logging.DEBUG
    else:
        level = logging.INFO
    fmt = "%(asctime)s %(name)s %(levelname)s %(message)s" if level == logging.DEBUG else "%(message)s"
    logging.basicConfig(level=level, format=fmt, stream=sys.stderr)


def _emit(payload: Any) -> None:
    print(json.dumps(payload, sort_keys=True, indent=2))


def _align(rows: List[List[str]]) -> str:
    widths = [max(len(row[col]) for row in rows) for col in range(len(rows[0]))]
    return "\n".join("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip() for row in rows)


def _fmt(value: Any) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _catalog(args: argparse.Namespace) -> PriceCatalog:
    return load_catalog(catalog_path(args.catalog))


def _lab(args: argparse.Namespace) -> Lab:
    return Lab.load(calibration_dir(args.calibration), _catalog(args))


# datagen


def cmd_datagen(args: argparse.Namespace) -> int:
    LabValidator.validate_table_kind(args.table)
    LabValidator.validate_scale(args.scale)
    out = Path(args.out)
    files = generate_files(args.table, args.scale, args.seed, args.partitions)
    metas = []
    try:
        for key, blob in files:
            target = out / key
            target.parent.mkdir(parents=True, exist_ok=True)
            target.write_bytes(blob)
            metas.append(describe(key, blob))
    except OSError as exc:
        raise IoError(f"cannot write table files under {out}: {exc}") from exc
    summary = {
        "table": args.table,
        "scale": args.scale,
        "seed": args.seed,
        "files": [meta.to_dict() for meta in metas],
        "rows": sum(meta.rows for meta in metas),
    }
    if args.json:
        _emit(summary)
    else:
        print(f"{args.table}: {summary['rows']} rows in {len(metas)} files under {out}")
    return EXIT_OK


# bench


def _summary_rows(result) -> List[List[str]]:
    rows = [["region", "metric", "median", "mean", "stddev", "cov_pct", "mr"]]
    for region, metrics in result.aggregates.items():
        for name, agg in sorted(metrics.items()):
            rows.append([region, name] + [_fmt(v) for v in (agg.median, agg.mean, agg.stddev, agg.cov, agg.mr)])
    return rows


def cmd_bench_run(args: argparse.Namespace) -> int:
    config = ExperimentConfig.load(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.repetitions is not None:
        if args.repetitions < 1:
            raise ValidationError("--repetitions must be >= 1")
        config.repetitions = args.repetitions
    try:
        result = run_experiment(config, lab=_lab(args))
    except DriverFailure as failure:
        if args.out and failure.partial is not None:
            failure.partial.save(args.out)
            logger.info("partial result written to %s", args.out)
        raise
    if args.out:
        result.save(args.out)
    if args.plotdata:
        emit_plotdata(result, args.plotdata)
    if args.json:
        print(result.to_json(), end="")
    else:
        print(f"{config.name}: {len(result.samples)} samples, primary metric {result.primary}")
        print(_align(_summary_rows(result)))
        print(f"total cost: {result.cost.cents:.6f} cents")
    return EXIT_OK


# query


def cmd_query_run(args: argparse.Namespace) -> int:
    parameters: Dict[str, Any] = {
        "query": args.plan,
        "deployment": args.deployment,
        "scale": args.scale,
        "warm_bucket": args.warm_bucket,
    }
    if args.budget_mib is not None:
        parameters["budget_mib"] = args.budget_mib
    if args.instances is not None:
        parameters["instances"] = args.instances
    if args.instance_type is not None:
        parameters["instance_type"] = args.instance_type
    config = ExperimentConfig(
        name=f"query_{Path(args.plan).stem}",
        system_under_test="vm_pool" if args.deployment == "vm" else "faas",
        driver="query",
        parameters=parameters,
        seed=args.seed,
    )
    result = run_experiment(config, lab=_lab(args))
    response = result.samples[0].extra["response"]
    if args.json:
        _emit(response)
    else:
        cost = response["cost"]
        print(_align([
            ["query", response["query_id"]],
            ["deployment", response["deployment"]],
            ["result", response["result_location"]],
            ["runtime_s", _fmt(response["runtime_s"])],
            ["cost_cents", _fmt(cost["total"] / 1000)],
            ["fragments", _fmt(response["metrics"]["fragments"])],
        ]))
    return EXIT_OK


# econ


def _never(value: Any) -> Any:
    return "never" if isinstance(value, NeverBreaksEven) else value


def cmd_econ_bei(args: argparse.Namespace) -> int:
    rows = scan_break_even_table(_catalog(args))
    if args.json:
        _emit(table_to_dict(rows))
    elif args.csv:
        print(scan_table_csv(rows), end="")
    else:
        print(render_scan_table(rows))
    return EXIT_OK


def cmd_econ_beas(args: argparse.Namespace) -> int:
    headers, rows = shuffle_break_even_table(_catalog(args))
    if args.json:
        _emit({row.label: {h: _never(v) for h, v in zip(headers, row.sizes)} for row in rows})
    elif args.csv:
        print(shuffle_table_csv(headers, rows), end="")
    else:
        print(render_shuffle_table(headers, rows))
    return EXIT_OK


def cmd_econ_qph(args: argparse.Namespace) -> int:
    if args.vm_hourly is not None:
        hourly = args.vm_hourly
    else:
        hourly = float(_catalog(args).vm_price(args.vm_type).hourly)
    qph = break_even_qph(args.faas_cents, args.peak_nodes, hourly)
    if args.json:
        _emit({"faas_cents_per_query": args.faas_cents, "peak_nodes": args.peak_nodes, "vm_hourly_cents": hourly, "qph": qph})
    else:
        print(f"break-even: {qph:.1f} queries/hour ({args.peak_nodes} nodes at {hourly:g} cents/h, {args.faas_cents:g} cents/query)")
    return EXIT_OK


# warming


def cmd_warming(args: argparse.Namespace) -> int:
    calibration = load_storage_calibration(calibration_dir(args.calibration))
    profile = calibration.profiles["object_standard"]
    LabValidator.validate_target_iops(args.target_iops, profile.read_iops_quota)
    model = WarmingModel.measure(calibration, seed=args.seed)
    estimate = warming_cost(args.target_iops, _catalog(args), model, args.service)
    if args.json:
        _emit(estimate.to_dict())
    else:
        record = estimate.to_dict()
        print(_align([[key, _fmt(value)] for key, value in record.items()]))
    return EXIT_OK


# catalog


def _catalog_record(catalog: PriceCatalog) -> Dict[str, Any]:
    return {
        "date": catalog.date,
        "region": catalog.region,
        "compute": {name: float(price.per_gib_h) for name, price in sorted(catalog.compute.items())},
        "vm": {name: float(price.hourly) for name, price in sorted(catalog.vm.items())},
        "storage": {
            name: {"read_per_M": float(price.read_per_M), "write_per_M": float(price.write_per_M)}
            for name, price in sorted(catalog.storage.items())
        },
    }


def cmd_catalog_validate(args: argparse.Namespace) -> int:
    catalog = load_catalog(args.file)
    if args.json:
        _emit({"valid": True, "date": catalog.date, "path": str(args.file)})
    else:
        print(f"{args.file}: ok ({catalog.date}, {len(catalog.vm)} VM types, {len(catalog.storage)} storage services)")
    return EXIT_OK


def cmd_catalog_show(args: argparse.Namespace) -> int:
    catalog = load_catalog(args.file) if args.file else _catalog(args)
    record = _catalog_record(catalog)
    if args.json:
        _emit(record)
        return EXIT_OK
    print(f"catalog {record['date']} {record['region']}".rstrip())
    rows = [["kind", "name", "price"]]
    rows += [["compute", name, f"{value:.6g} c/GiB-h"] for name, value in record["compute"].items()]
    rows += [["vm", name, f"{value:.6g} c/h"] for name, value in record["vm"].items()]
    rows += [
        ["storage", name, f"{value['read_per_M']:.6g} c/M reads, {value['write_per_M']:.6g} c/M writes"]
        for name, value in record["storage"].items()
    ]
    print(_align(rows))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--json", action="store_true", help="Print machine-readable JSON")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="Errors only")
    common.add_argument("--catalog", default=None, help="Price catalog (default: $SKYRISE_LAB_CATALOG)")
    common.add_argument("--calibration", default=None, help="Calibration directory")

    parser = _Parser(prog="skyrise_lab", description="Deterministic serverless systems lab")
    commands = parser.add_subparsers(dest="command", required=True)

    datagen = commands.add_parser("datagen", parents=[common], help="Generate table files")
    datagen.add_argument("--table", required=True)
    datagen.add_argument("--scale", type=float, required=True)
    datagen.add_argument("--seed", type=int, default=env_seed())
    datagen.add_argument("--partitions", type=int, default=None)
    datagen.add_argument("--out", required=True, help="Output directory")
    datagen.set_defaults(handler=cmd_datagen)

    bench = commands.add_parser("bench", help="Experiment harness").add_subparsers(dest="action", required=True)
    bench_run = bench.add_parser("run", parents=[common], help="Run an experiment config")
    bench_run.add_argument("config")
    bench_run.add_argument("--seed", type=int, default=None, help="Override the config seed")
    bench_run.add_argument("--repetitions", type=int, default=None)
    bench_run.add_argument("--out", default=None, help="Result JSON path")
    bench_run.add_argument("--plotdata", default=None, help="Directory for plot CSVs")
    bench_run.set_defaults(handler=cmd_bench_run)

    query = commands.add_parser("query", help="Query engine").add_subparsers(dest="action", required=True)
    query_run = query.add_parser("run", parents=[common], help="Run one plan on simulated resources")
    query_run.add_argument("plan", help="Plan JSON path or shipped plan name")
    query_run.add_argument("--deployment", choices=["faas", "vm"], required=True)
    query_run.add_argument("--warm-bucket", action="store_true", help="Pre-warm the exchange bucket")
    query_run.add_argument("--scale", type=float, default=0.01)
    query_run.add_argument("--seed", type=int, default=env_seed())
    query_run.add_argument("--budget-mib", type=float, default=None)
    query_run.add_argument("--instances", type=int, default=None)
    query_run.add_argument("--instance-type", default=None)
    query_run.set_defaults(handler=cmd_query_run)

    econ = commands.add_parser("econ", help="Break-even economics").add_subparsers(dest="action", required=True)
    bei = econ.add_parser("bei", parents=[common], help="Caching break-even intervals")
    bei.add_argument("--csv", action="store_true")
    bei.set_defaults(handler=cmd_econ_bei)
    beas = econ.add_parser("beas", parents=[common], help="Shuffle break-even access sizes")
    beas.add_argument("--csv", action="store_true")
    beas.set_defaults(handler=cmd_econ_beas)
    qph = econ.add_parser("qph", parents=[common], help="FaaS against VM break-even query rate")
    qph.add_argument("--faas-cents", type=float, required=True, help="Cost of one query on functions")
    qph.add_argument("--peak-nodes", type=int, required=True)
    qph.add_argument("--vm-type", default="c6g.xlarge")
    qph.add_argument("--vm-hourly", type=float, default=None, help="Hourly VM rent in cents")
    qph.set_defaults(handler=cmd_econ_qph)

    warming = commands.add_parser("warming", parents=[common], help="Cost to warm a bucket to a read rate")
    warming.add_argument("--target-iops", type=float, required=True)
    warming.add_argument("--service", default="object_standard")
    warming.add_argument("--seed", type=int, default=env_seed())
    warming.set_defaults(handler=cmd_warming)

    catalog = commands.add_parser("catalog", help="Price catalogs").add_subparsers(dest="action", required=True)
    validate = catalog.add_parser("validate", parents=[common], help="Check a catalog file")
    validate.add_argument("file")
    validate.set_defaults(handler=cmd_catalog_validate)
    show = catalog.add_parser("show", parents=[common], help="Print catalog prices")
    show.add_argument("file", nargs="?", default=None)
    show.set_defaults(handler=cmd_catalog_show)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_logging(args.verbose, args.quiet)
    try:
        return args.handler(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SkyriseLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE

"""
Command line entry point. Every pipeline stage is a subcommand that reads its inputs from the
configured files and from the outputs of earlier stages in the output directory, so stages can be
re-run one at a time; `run` executes them all in order into a fresh run directory.

Example:
    ```Shell
    sextortion-forensics fixture work/fixture --seed 7
    sextortion-forensics run --config work/fixture/pipeline.ini -v
    sextortion-forensics trace --config work/fixture/pipeline.ini --out-dir work/fixture/out/run-...
    ```
"""
import argparse
import asyncio
import csv
import datetime
import json
import logging
import sys
from decimal import Decimal
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

from sextortion_forensics import __version__
from sextortion_forensics.chainstore import ChainStore, PriceSeries, btc
from sextortion_forensics.clustering import (
    CoinJoinParams,
    SeedSet,
    Tag,
    cluster_statistics,
    expand_seeds,
    multi_input_cluster,
    read_clusters,
    read_tags,
    seed_clusters,
    write_cluster_table,
    write_clusters,
)
from sextortion_forensics.config import PipelineConfig
from sextortion_forensics.corpus import (
    BucketLabel,
    ExtractedDatapoints,
    FiatRates,
    apply_labels,
    bucket_emails,
    bucket_summary,
    campaign_name,
    extract_datapoints,
    read_bucket_quality,
    read_buckets,
    read_corpus,
    read_datapoints,
    read_labels,
    read_membership,
    size_distribution,
    write_bucket_quality,
    write_bucket_table,
    write_buckets,
    write_datapoints,
    write_size_distribution,
)
from sextortion_forensics.exceptions import (
    ConfigError,
    InvariantViolation,
    SextortionForensicsError,
    StageError,
)
from sextortion_forensics.filters import (
    FILTER_COMBOS,
    RansomAmountSet,
    collect_payments,
    per_campaign_amounts,
    read_payments,
    revenue_report,
    write_monthly_revenue,
    write_payments,
    write_revenue_table,
)
from sextortion_forensics.fixture import FixtureSpec, write_fixture
from sextortion_forensics.flows import (
    async_holding_periods,
    async_trace_flows,
    cashout_candidates,
    depth_cluster_table,
    holding_periods,
    tagged_inflow,
    trace_flows,
    write_depth_table,
    write_flow_edges,
    write_holding_histogram,
    write_holding_periods,
)
from sextortion_forensics.linkage import (
    address_components,
    bucket_addresses,
    build_linkage,
    components,
    linkage_clusters,
    with_revenue,
    write_components,
    write_dot,
    write_edges,
)
from sextortion_forensics.reports import (
    mark_failed,
    plot_amount_groups,
    plot_cumulative_revenue,
    plot_holding_histogram,
    plot_payments,
    plot_size_distribution,
    run_directory,
    write_manifest,
)
from sextortion_forensics.stats import (
    breach_match,
    group_amounts,
    pairwise_analysis,
    write_group_summary,
    write_normality,
    write_test_matrix,
)
from sextortion_forensics.utils import format_btc, format_usd

logger = logging.getLogger(__name__)

BUCKETS = "buckets.jsonl"
MEMBERSHIP = "membership.csv"
BUCKET_QUALITY = "bucket_quality.csv"
BUCKET_TABLE = "bucket_table.csv"
SIZE_DISTRIBUTION = "size_distribution.csv"
DATAPOINTS = "datapoints.jsonl"
CLUSTERS = "clusters.csv"
CLUSTER_TABLE = "cluster_table.csv"
EXPANSION = "expansion.json"
PAYMENTS = "payments.csv"
REVENUE = "revenue.csv"
HOLDING_PERIODS = "holding_periods.csv"
HOLDING_HISTOGRAM = "holding_histogram.csv"
FLOW_EDGES = "flow_edges.csv"
DEPTH_CLUSTERS = "depth_clusters.csv"
FLOWS = "flows.json"
BREACH = "breach.json"
LINKAGE_EDGES = "linkage_edges.csv"
LINKAGE_COMPONENTS = "linkage_components.csv"
LINKAGE_DOT = "linkage.dot"

AMOUNT_GROUPINGS = ("language", "campaign", "secret")
_LOG_LEVELS = (logging.WARNING, logging.INFO, logging.DEBUG)


def _dump_json(data: Any, path: Path) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _combo_slug(combo: str) -> str:
    return combo.replace("+", "_")


class StageContext:
    """Configuration, output directory and the inputs shared by the stages of one run, loaded lazily."""

    def __init__(self, config: PipelineConfig, out_dir: Path):
        self.config = config
        self.out_dir = Path(out_dir)
        self._ledger: Optional[ChainStore] = None
        self._prices: Optional[PriceSeries] = None
        self._tags: Optional[Dict[str, Tag]] = None
        self._labels: Optional[Dict[int, BucketLabel]] = None

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def stage_input(self, name: str) -> Path:
        path = self.path(name)
        if not path.is_file():
            raise ConfigError(f"missing input: {path} (run the stage that writes {name} first)")
        return path

    @property
    def ledger(self) -> ChainStore:
        if self._ledger is None:
            self.config.require("ledger")
            store = ChainStore.create(self.config.ledger_db)
            if len(store):
                logger.info("reusing %d transactions already in %s", len(store), self.config.ledger_db)
            else:
                store.ingest(self.config.ledger)
            self._ledger = store
        return self._ledger

    @property
    def concurrent_reads(self) -> bool:
        """File-backed stores serve lookups from worker threads; the in-memory store shares one connection."""
        return self.config.ledger_db is not None

    @property
    def prices(self) -> Optional[PriceSeries]:
        if self._prices is None and self.config.prices is not None:
            self.config.require("prices")
            self._prices = PriceSeries.read(self.config.prices)
        return self._prices

    @property
    def tags(self) -> Dict[str, Tag]:
        if self._tags is None:
            if self.config.tags is not None:
                self.config.require("tags")
            self._tags = read_tags(self.config.tags) if self.config.tags is not None else {}
        return self._tags

    @property
    def labels(self) -> Optional[Dict[int, BucketLabel]]:
        if self._labels is None and self.config.labels is not None:
            self.config.require("labels")
            self._labels = read_labels(self.config.labels)
        return self._labels

    def datapoints(self) -> Dict[str, ExtractedDatapoints]:
        return {point.email_id: point for point in read_datapoints(self.stage_input(DATAPOINTS))}

    def campaign_of(self) -> Dict[str, str]:
        """Email id -> campaign name, leaving out emails of buckets labeled `other`."""
        labels = self.labels
        mapping = {}
        for email_id, bucket_id in read_membership(self.stage_input(MEMBERSHIP)).items():
            label = (labels or {}).get(bucket_id)
            if label is not None and label.label == "other":
                continue
            mapping[email_id] = campaign_name(bucket_id, labels)
        return mapping

    def expansion(self) -> Dict[str, Any]:
        with open(self.stage_input(EXPANSION), encoding="utf-8") as fp:
            return json.load(fp)

    def close(self) -> None:
        if self._ledger is not None:
            self._ledger.close()
            self._ledger = None


def stage_bucket(ctx: StageContext) -> Dict[str, Any]:
    config = ctx.config
    config.require("corpus")
    buckets = bucket_emails(read_corpus(config.corpus), l=config.l, t=config.t)
    write_buckets(buckets, ctx.path(BUCKETS), ctx.path(MEMBERSHIP))
    write_bucket_quality(buckets, ctx.path(BUCKET_QUALITY), sample_size=config.quality_sample_size, seed=config.seed)
    shares = size_distribution(buckets)
    write_size_distribution(shares, ctx.path(SIZE_DISTRIBUTION))
    plot_size_distribution(shares, ctx.path("size_distribution.svg"))
    return {"emails": sum(b.size for b in buckets), "buckets": len(buckets)}


def stage_extract(ctx: StageContext) -> Dict[str, Any]:
    config = ctx.config
    config.require("corpus")
    if config.rates is not None:
        config.require("rates")
    rates = FiatRates.read(config.rates) if config.rates is not None else FiatRates()
    points = [extract_datapoints(email, rates, config.secret_labels) for email in read_corpus(config.corpus)]
    write_datapoints(points, ctx.path(DATAPOINTS))
    buckets, campaigns = apply_labels(read_buckets(ctx.stage_input(BUCKETS), ctx.stage_input(MEMBERSHIP)), ctx.labels)
    rows = bucket_summary(
        buckets,
        {p.email_id: p for p in points},
        campaigns,
        quality=read_bucket_quality(ctx.stage_input(BUCKET_QUALITY)),
    )
    write_bucket_table(rows, ctx.path(BUCKET_TABLE))
    return {
        "datapoints": len(points),
        "with_amount": sum(1 for p in points if p.amount_usd is not None),
        "seed_addresses": len({a for p in points for a in p.payment_addresses}),
    }


def stage_cluster(ctx: StageContext) -> Dict[str, Any]:
    config = ctx.config
    seeds = sorted({address for point in ctx.datapoints().values() for address in point.payment_addresses})
    store = ctx.ledger
    clusters = multi_input_cluster(store, exclude_coinjoin=config.exclude_coinjoin, params=CoinJoinParams(min_equal_outputs=config.coinjoin_min_k))
    seed_set = SeedSet.from_store(seeds, store)
    cluster_statistics(clusters, store, ctx.prices, seeds=seeds, tags=ctx.tags)
    expansion = expand_seeds(seed_set, clusters, supercluster_limit=config.supercluster_limit, exclude_tagged=config.exclude_tagged)
    write_clusters(clusters, ctx.path(CLUSTERS))
    write_cluster_table(seed_clusters(clusters, seed_set), ctx.path(CLUSTER_TABLE))
    _dump_json(
        {
            "seeds": len(seed_set.addresses),
            "funded_seeds": len(seed_set.funded),
            "unclustered_seeds": expansion.unclustered_seeds,
            "clustered_seeds": expansion.clustered_seeds,
            "clusters_touched": list(expansion.clusters_touched),
            "excluded_clusters": list(expansion.excluded_clusters),
            "addresses": sorted(expansion.addresses),
        },
        ctx.path(EXPANSION),
    )
    return {"clusters": len(clusters), "expanded_addresses": expansion.total}


def stage_filter(ctx: StageContext) -> Dict[str, Any]:
    config = ctx.config
    # the range filter values every payment
    config.require("prices")
    points = list(ctx.datapoints().values())
    addresses = frozenset(ctx.expansion()["addresses"])
    amounts = RansomAmountSet.from_datapoints(points, config.p)
    per_address = per_campaign_amounts(points, ctx.campaign_of(), config.p) if config.per_campaign_range else None
    payments = collect_payments(ctx.ledger, addresses, ctx.prices, amounts, per_address)
    loose = {p.output_ref for p in payments if p.passes("1+2")}
    if any(p.passes("1+2+3") and p.output_ref not in loose for p in payments):
        raise InvariantViolation("a payment kept by filters 1+2+3 is dropped by filters 1+2")
    write_payments(payments, ctx.path(PAYMENTS))
    reports = [revenue_report(payments, combo) for combo in FILTER_COMBOS]
    write_revenue_table(reports, ctx.path(REVENUE))
    for report in reports:
        write_monthly_revenue(report, ctx.path(f"monthly_revenue_{_combo_slug(report.combo)}.csv"))
    plot_cumulative_revenue(reports, ctx.path("cumulative_revenue.svg"))
    plot_payments(payments, config.revenue_combo, ctx.path("payments.svg"))
    return {
        "payments": len(payments),
        **{f"kept_{combo}": report.payments for combo, report in zip(FILTER_COMBOS, reports)},
        "revenue_usd": format_usd(reports[0].usd),
    }


def stage_trace(ctx: StageContext) -> Dict[str, Any]:
    config = ctx.config
    payments = read_payments(ctx.stage_input(PAYMENTS))
    kept = [p for p in payments if p.passes(config.revenue_combo)]
    store = ctx.ledger
    if ctx.concurrent_reads:
        holding = asyncio.run(async_holding_periods(kept, store, config.holding_bin_hours))
        traversal = asyncio.run(async_trace_flows(kept, store, ctx.tags, config.max_depth, config.width_limit))
    else:
        holding = holding_periods(kept, store, config.holding_bin_hours)
        traversal = trace_flows(kept, store, ctx.tags, config.max_depth, config.width_limit)
    for depth in range(1, len(traversal.levels)):
        if traversal.traced_btc(depth) > traversal.traced_btc(depth - 1):
            raise InvariantViolation(f"more value traced at depth {depth} than at depth {depth - 1}")

    clusters = read_clusters(ctx.stage_input(CLUSTERS))
    cluster_statistics(clusters, store, ctx.prices, tags=ctx.tags)
    revenue = {combo: btc(sum(p.value_sat for p in payments if p.passes(combo))) for combo in FILTER_COMBOS}
    denominator = revenue[config.revenue_combo]
    inflow = tagged_inflow(traversal, ctx.tags, denominator)
    cashout = cashout_candidates(traversal, clusters, denominator, config.cutoff_date, ctx.tags)
    rows = depth_cluster_table(traversal, config.max_depth, clusters, store, ctx.prices, ctx.tags)

    write_holding_periods(holding, ctx.path(HOLDING_PERIODS))
    write_holding_histogram(holding, ctx.path(HOLDING_HISTOGRAM))
    plot_holding_histogram(holding, ctx.path("holding_histogram.svg"))
    write_flow_edges(traversal, ctx.path(FLOW_EDGES))
    write_depth_table(rows, ctx.path(DEPTH_CLUSTERS))

    def share(value: Decimal, combo: str) -> str:
        return f"{value / revenue[combo]:.6f}" if revenue[combo] else ""

    _dump_json(
        {
            "revenue_combo": config.revenue_combo,
            "holding": {
                "spent": len(holding.spent),
                "unspent": len(holding.unspent),
                "mean_days": holding.mean_days,
                "median_days": holding.median_days,
                "bin_hours": holding.bin_hours,
                "spent_btc": format_btc(holding.spent_btc),
            },
            "traced_btc": [format_btc(traversal.traced_btc(d)) for d in range(len(traversal.levels))],
            "tagged_inflow": {
                "btc": format_btc(inflow.btc),
                "by_entity": {tag: format_btc(v) for tag, v in inflow.by_entity.items()},
                **{f"fraction_{combo}": share(inflow.btc, combo) for combo in FILTER_COMBOS},
            },
            "cashout": {
                "cutoff": config.cutoff_date.isoformat(),
                "btc": format_btc(cashout.btc),
                "by_cluster": {cluster: format_btc(v) for cluster, v in cashout.by_entity.items()},
                **{f"fraction_{combo}": share(cashout.btc, combo) for combo in FILTER_COMBOS},
            },
        },
        ctx.path(FLOWS),
    )
    return {"traced_payments": len(traversal.roots), "tagged_btc": format_btc(inflow.btc), "cashout_btc": format_btc(cashout.btc)}


def stage_stats(ctx: StageContext) -> Dict[str, Any]:
    config = ctx.config
    points = list(ctx.datapoints().values())
    campaign_of = ctx.campaign_of()
    tested = 0
    for by in AMOUNT_GROUPINGS:
        groups = group_amounts(points, by=by, campaign_of=campaign_of)
        analysis = pairwise_analysis(
            groups,
            alpha=config.alpha,
            resamples=config.resamples,
            sample_size=config.normality_sample_size,
            seed=config.seed,
        )
        tested += analysis.comparisons
        write_group_summary(groups, ctx.path(f"amounts_by_{by}.csv"))
        write_normality(analysis.screens, ctx.path(f"normality_by_{by}.csv"))
        write_test_matrix(analysis.results, ctx.path(f"ttests_by_{by}.csv"))
        plot_amount_groups(groups, ctx.path(f"amounts_by_{by}.svg"))
    summary: Dict[str, Any] = {"comparisons": tested}
    if config.breach_lists:
        config.require("breach_lists")
        passwords = [p.password_or_phone for p in points if p.password_or_phone]
        match = breach_match(passwords, config.breach_lists, config.breach_sample_fraction, config.seed)
        _dump_json({"candidates": match.candidates, "sampled": match.sampled, "matched": match.matched, "rate": match.rate}, ctx.path(BREACH))
        summary["breach_rate"] = match.rate
    return summary


def stage_linkage(ctx: StageContext) -> Dict[str, Any]:
    buckets, campaigns = apply_labels(read_buckets(ctx.stage_input(BUCKETS), ctx.stage_input(MEMBERSHIP)), ctx.labels)
    addresses = bucket_addresses(buckets, ctx.datapoints())
    mapping = linkage_clusters(read_clusters(ctx.stage_input(CLUSTERS)), ctx.expansion()["excluded_clusters"])
    graph = build_linkage(addresses, mapping, emails={b.id: b.size for b in buckets}, campaigns=campaigns)
    found = components(graph)
    payments = read_payments(ctx.stage_input(PAYMENTS))
    report = revenue_report(payments, ctx.config.revenue_combo, address_components(found, graph, mapping))
    found = with_revenue(found, report)
    write_edges(graph, ctx.path(LINKAGE_EDGES))
    write_components(found, ctx.path(LINKAGE_COMPONENTS))
    write_dot(graph, ctx.path(LINKAGE_DOT))
    return {"components": len(found), "giant_component": found[0].size if found else 0}


STAGES: Dict[str, Callable[[StageContext], Dict[str, Any]]] = {
    "bucket": stage_bucket,
    "extract": stage_extract,
    "cluster": stage_cluster,
    "filter": stage_filter,
    "trace": stage_trace,
    "stats": stage_stats,
    "linkage": stage_linkage,
}


def check_inputs(config: PipelineConfig) -> None:
    """Every input the full pipeline reads must be configured and readable."""
    config.require("corpus", "ledger", "prices")
    for name in ("rates", "tags", "labels"):
        if getattr(config, name) is not None:
            config.require(name)
    if config.breach_lists:
        config.require("breach_lists")


def run_stage(name: str, ctx: StageContext) -> Dict[str, Any]:
    """Run one stage; a failure leaves a FAILED marker and a manifest of the partial outputs."""
    try:
        summary = STAGES[name](ctx)
    except SextortionForensicsError as exc:
        mark_failed(ctx.out_dir, name, exc)
        write_manifest(ctx.out_dir)
        raise StageError(name, exc) from exc
    logger.info("stage %s: %s", name, ", ".join(f"{k}={v}" for k, v in summary.items()))
    return summary


def run_pipeline(config: PipelineConfig, now: Optional[datetime.datetime] = None) -> Path:
    """Run every stage into a new run directory and write its manifest. Returns the run directory."""
    check_inputs(config)
    out_dir = run_directory(config.out_dir, timestamped=config.timestamped_out_dir, now=now)
    ctx = StageContext(config, out_dir)
    try:
        for name in STAGES:
            run_stage(name, ctx)
    finally:
        ctx.close()
    write_manifest(out_dir)
    return out_dir


def headline(out_dir: Path) -> List[str]:
    """Short text summary of the tables found in a run directory."""
    lines = []
    revenue = out_dir / REVENUE
    if revenue.is_file():
        with open(revenue, newline="", encoding="utf-8") as fp:
            for row in csv.DictReader(fp):
                lines.append(f"filters {row['filters']}: {row['payments']} payments, ${row['revenue_usd']}, {row['revenue_btc']} BTC")
    flows = out_dir / FLOWS
    if flows.is_file():
        with open(flows, encoding="utf-8") as fp:
            data = json.load(fp)
        holding = data["holding"]
        if holding["mean_days"] is not None:
            lines.append(f"holding period: mean {holding['mean_days']:.2f} days, median {holding['median_days']:.2f} days")
        lines.append(f"tagged entities: {data['tagged_inflow']['btc']} BTC; pre-{data['cashout']['cutoff']} clusters: {data['cashout']['btc']} BTC")
    linkage = out_dir / LINKAGE_COMPONENTS
    if linkage.is_file():
        with open(linkage, newline="", encoding="utf-8") as fp:
            rows = list(csv.DictReader(fp))
        if rows:
            lines.append(f"largest linked component: {len(rows[0]['buckets'].split())} buckets, {rows[0]['email_share']} of emails")
    return lines


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    return config.override(
        seed=args.seed,
        out_dir=args.out_dir,
        cutoff_date=args.cutoff,
        l=args.l,
        t=args.t,
        p=args.p,
        timestamped_out_dir=False if getattr(args, "no_timestamp", False) else None,
    )


def _cmd_stage(args: argparse.Namespace) -> int:
    config = _load_config(args)
    ctx = StageContext(config, run_directory(config.out_dir, timestamped=False))
    try:
        summary = run_stage(args.command, ctx)
    finally:
        ctx.close()
    print(json.dumps(summary, sort_keys=True, default=str))
    return 0


def _cmd_run(args: argparse.Namespace) -> int:
    out_dir = run_pipeline(_load_config(args))
    for line in headline(out_dir):
        print(line)
    print(out_dir)
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    config = _load_config(args)
    out_dir = Path(config.out_dir)
    if not out_dir.is_dir():
        raise ConfigError(f"missing input: output directory {out_dir} does not exist")
    hashes = write_manifest(out_dir)
    for line in headline(out_dir):
        print(line)
    print(f"{len(hashes)} files in manifest")
    return 0


def _cmd_fixture(args: argparse.Namespace) -> int:
    values = {
        "campaigns": args.campaigns,
        "emails_per_campaign": args.emails_per_campaign,
        "payments_per_address": args.payments_per_address,
    }
    try:
        spec = FixtureSpec(**{k: v for k, v in values.items() if v is not None})
    except ValueError as exc:
        raise ConfigError(f"invalid fixture spec: {exc}") from None
    files = write_fixture(args.directory, spec, seed=args.seed or 0)
    print(files["pipeline.ini"])
    return 0


def _date(text: str) -> datetime.date:
    try:
        return datetime.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an ISO date: {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", type=Path, help="pipeline INI file")
    common.add_argument("--seed", type=int, help="seed of every random choice")
    common.add_argument("--out-dir", type=Path, help="output directory")
    common.add_argument("--cutoff", type=_date, help="cash-out cutoff date (YYYY-MM-DD)")
    common.add_argument("--l", type=int, help="trailing words compared when bucketing")
    common.add_argument("--t", type=float, help="Jaccard merge threshold")
    common.add_argument("--p", type=Decimal, help="range filter tolerance")
    common.add_argument("-v", "--verbose", action="count", default=0, help="-v for progress, -vv for debug output")

    parser = argparse.ArgumentParser(prog="sextortion-forensics", description="Sextortion spam corpus and ledger forensics")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, stage in STAGES.items():
        sub = subparsers.add_parser(name, parents=[common], help=(stage.__doc__ or f"run the {name} stage").strip().splitlines()[0])
        sub.set_defaults(handler=_cmd_stage)
    run = subparsers.add_parser("run", parents=[common], help="run every stage into a new run directory")
    run.add_argument("--no-timestamp", action="store_true", help="write into --out-dir itself")
    run.set_defaults(handler=_cmd_run)
    report = subparsers.add_parser("report", parents=[common], help="rebuild the manifest of an output directory and print the headline tables")
    report.set_defaults(handler=_cmd_report)
    fixture = subparsers.add_parser("fixture", parents=[common], help="generate a synthetic corpus and ledger with ground truth")
    fixture.add_argument("directory", type=Path)
    fixture.add_argument("--campaigns", type=int)
    fixture.add_argument("--emails-per-campaign", type=int)
    fixture.add_argument("--payments-per-address", type=int)
    fixture.set_defaults(handler=_cmd_fixture)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=_LOG_LEVELS[min(args.verbose, 2)], format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except SextortionForensicsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code

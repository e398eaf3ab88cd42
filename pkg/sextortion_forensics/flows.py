"""Holding periods of victim payments and forward tracing of their value through the ledger."""
import asyncio
import csv
import datetime
import logging
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import (
    Dict,
    Generator,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

import numpy as np

from sextortion_forensics.chainstore import (
    SATOSHI_PER_BTC,
    ChainStore,
    Ledger,
    OutputRef,
    PriceSeries,
    Transaction,
    btc,
    value_usd,
)
from sextortion_forensics.clustering import ClusterSet, Tag
from sextortion_forensics.exceptions import InvariantViolation, MissingPrice
from sextortion_forensics.filters import PaymentRecord
from sextortion_forensics.utils import format_btc, format_usd

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEFAULT_BIN_HOURS = 10
DEFAULT_MAX_DEPTH = 2
DEFAULT_WIDTH_LIMIT = 100
DEFAULT_CUTOFF = datetime.date(2018, 6, 1)


class StopReason(str, Enum):
    TAGGED_ENTITY = "tagged_entity"
    WIDTH_LIMIT = "width_limit"
    DEPTH_LIMIT = "depth_limit"
    UNSPENT = "unspent"


@dataclass(frozen=True)
class HoldingPeriod:
    payment: OutputRef
    received_at: datetime.datetime
    spent_at: Optional[datetime.datetime]
    amount_sat: int

    @property
    def duration_hours(self) -> Optional[float]:
        if self.spent_at is None:
            return None
        return (self.spent_at - self.received_at).total_seconds() / 3600


@dataclass
class HoldingSummary:
    periods: List[HoldingPeriod]
    bin_hours: int = DEFAULT_BIN_HOURS
    mean_days: Optional[float] = None
    median_days: Optional[float] = None
    histogram: List[Tuple[int, Decimal]] = field(default_factory=list)

    @property
    def spent(self) -> List[HoldingPeriod]:
        return [p for p in self.periods if p.spent_at is not None]

    @property
    def unspent(self) -> List[HoldingPeriod]:
        return [p for p in self.periods if p.spent_at is None]

    @property
    def spent_btc(self) -> Decimal:
        return btc(sum(p.amount_sat for p in self.spent))


@dataclass(frozen=True)
class FlowEdge:
    """Traced value moving from an output at `depth - 1` to an output at `depth` through `tx_id`."""

    depth: int
    src: OutputRef
    src_address: Optional[str]
    dst: OutputRef
    dst_address: Optional[str]
    tx_id: str
    value_sat: Fraction

    @property
    def value_btc(self) -> Decimal:
        return _fraction_btc(self.value_sat)


@dataclass(frozen=True)
class FlowStop:
    depth: int
    ref: OutputRef
    address: Optional[str]
    reason: StopReason


@dataclass
class FlowTraversal:
    roots: Tuple[OutputRef, ...]
    max_depth: int
    width_limit: int
    levels: List[Dict[str, Fraction]] = field(default_factory=list)
    edges: List[FlowEdge] = field(default_factory=list)
    stops: List[FlowStop] = field(default_factory=list)

    def nodes(self, depth: int) -> Dict[str, Fraction]:
        """Address -> traced satoshis received at `depth`."""
        return self.levels[depth] if depth < len(self.levels) else {}

    def traced_btc(self, depth: int) -> Decimal:
        return _fraction_btc(sum(self.nodes(depth).values(), Fraction(0)))

    def stop_reasons(self, depth: int, address: str) -> Set[StopReason]:
        return {s.reason for s in self.stops if s.depth == depth and s.address == address}


@dataclass(frozen=True)
class DepthClusterRow:
    cluster_id: int
    total_spent_usd: Decimal
    first_tx: Optional[datetime.datetime]
    txs_out: int
    btc_received: Decimal


@dataclass(frozen=True)
class InflowEstimate:
    btc: Decimal
    fraction: Decimal
    by_entity: Mapping[str, Decimal] = field(default_factory=dict)


def _fraction_btc(value: Fraction) -> Decimal:
    return Decimal(value.numerator) / Decimal(value.denominator) / SATOSHI_PER_BTC


def _summarize(periods: List[HoldingPeriod], bin_hours: int) -> HoldingSummary:
    summary = HoldingSummary(periods=periods, bin_hours=bin_hours)
    spent = summary.spent
    if not spent:
        return summary
    hours = np.array([p.duration_hours for p in spent], dtype=float)
    if (hours < 0).any():
        raise InvariantViolation("a payment is spent before it is received")
    summary.mean_days = float(np.mean(hours)) / 24
    summary.median_days = float(np.median(hours)) / 24
    bins = (hours // bin_hours).astype(int)
    mass = [Decimal(0)] * (int(bins.max()) + 1)
    for period, index in zip(spent, bins):
        mass[index] += btc(period.amount_sat)
    summary.histogram = [(i * bin_hours, amount) for i, amount in enumerate(mass)]
    return summary


def holding_periods(payments: Iterable[PaymentRecord], ledger: Ledger, bin_hours: int = DEFAULT_BIN_HOURS) -> HoldingSummary:
    """
    Per-output delay between receiving a payment and spending it. Mean and median are in days over spent
    outputs; the histogram is weighted by BTC amount with `bin_hours` wide bins. Unspent outputs carry no
    duration and are only counted.
    """
    periods = []
    for payment in payments:
        spender = ledger.spender(payment.output_ref)
        periods.append(HoldingPeriod(payment.output_ref, payment.timestamp, spender.timestamp if spender else None, payment.value_sat))
    summary = _summarize(periods, bin_hours)
    logger.info("%d payments spent, %d unspent, mean holding %s days", len(summary.spent), len(summary.unspent), summary.mean_days)
    return summary


async def async_holding_periods(payments: Sequence[PaymentRecord], store: ChainStore, bin_hours: int = DEFAULT_BIN_HOURS) -> HoldingSummary:
    spenders = await asyncio.gather(*(store.async_spender(p.output_ref) for p in payments))
    periods = [
        HoldingPeriod(p.output_ref, p.timestamp, spender.timestamp if spender else None, p.value_sat) for p, spender in zip(payments, spenders)
    ]
    return _summarize(periods, bin_hours)


Frontier = List[Tuple[OutputRef, Optional[str], Fraction]]
SpenderLookup = Dict[OutputRef, Optional[Transaction]]


def _traversal(
    payments: Iterable[PaymentRecord],
    tags: Mapping[str, Tag],
    max_depth: int,
    width_limit: int,
) -> Generator[List[OutputRef], SpenderLookup, FlowTraversal]:
    """Level-by-level traversal; yields the outputs whose spenders it needs and receives them."""
    roots: Dict[OutputRef, PaymentRecord] = {}
    for payment in payments:
        roots.setdefault(payment.output_ref, payment)
    traversal = FlowTraversal(roots=tuple(sorted(roots)), max_depth=max_depth, width_limit=width_limit)
    frontier: Frontier = [(ref, roots[ref].address, Fraction(roots[ref].value_sat)) for ref in traversal.roots]
    depth = 0
    while frontier:
        level: Dict[str, Fraction] = {}
        for _, address, value in frontier:
            if address is not None:
                level[address] = level.get(address, Fraction(0)) + value
        traversal.levels.append(level)
        if depth > 0 and len(level) > width_limit:
            traversal.stops.extend(FlowStop(depth, ref, address, StopReason.WIDTH_LIMIT) for ref, address, _ in frontier)
            logger.info("%d nodes at depth %d exceed the width limit of %d", len(level), depth, width_limit)
            break
        expand = []
        for ref, address, value in frontier:
            if depth > 0 and address in tags:
                traversal.stops.append(FlowStop(depth, ref, address, StopReason.TAGGED_ENTITY))
            elif depth >= max_depth:
                traversal.stops.append(FlowStop(depth, ref, address, StopReason.DEPTH_LIMIT))
            else:
                expand.append((ref, address, value))
        if not expand:
            break
        spenders = yield [ref for ref, _, _ in expand]
        traced_in: Dict[str, Fraction] = {}
        spent_by: Dict[str, Transaction] = {}
        sources: Dict[str, List[Tuple[OutputRef, Optional[str], Fraction]]] = {}
        for ref, address, value in expand:
            tx = spenders.get(ref)
            if tx is None:
                traversal.stops.append(FlowStop(depth, ref, address, StopReason.UNSPENT))
                continue
            spent_by[tx.tx_id] = tx
            traced_in[tx.tx_id] = traced_in.get(tx.tx_id, Fraction(0)) + value
            sources.setdefault(tx.tx_id, []).append((ref, address, value))
        frontier = []
        for tx_id in sorted(spent_by):
            tx = spent_by[tx_id]
            # outputs beyond the inputs carry no traced value
            spread = max(tx.input_value, tx.output_value)
            if not spread:
                continue
            for out in tx.outputs:
                share = traced_in[tx_id] * out.value_sat / spread
                frontier.append((tx.ref(out.index), out.address, share))
                for src, src_address, value in sources[tx_id]:
                    traversal.edges.append(
                        FlowEdge(depth + 1, src, src_address, tx.ref(out.index), out.address, tx_id, value * out.value_sat / spread)
                    )
        depth += 1
    return traversal


def trace_flows(
    payments: Iterable[PaymentRecord],
    ledger: Ledger,
    tags: Optional[Mapping[str, Tag]] = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
    width_limit: int = DEFAULT_WIDTH_LIMIT,
) -> FlowTraversal:
    """
    Follow the value of the payment outputs (depth 0) forward through spending transactions.

    A spending transaction passes the traced value on to each of its outputs in proportion to the output's
    share of the larger of the transaction's input and output value; fees and any value created by the
    transaction are attributed to no one. A branch stops at tagged
    entities, at unspent outputs and at `max_depth`. When a level holds more than `width_limit` distinct
    addresses the whole level stops.
    """
    walk = _traversal(payments, tags or {}, max_depth, width_limit)
    try:
        wanted = next(walk)
        while True:
            wanted = walk.send({ref: ledger.spender(ref) for ref in wanted})
    except StopIteration as done:
        traversal = done.value
    logger.info("traced %d payments over %d levels, %d edges", len(traversal.roots), len(traversal.levels), len(traversal.edges))
    return traversal


async def async_trace_flows(
    payments: Iterable[PaymentRecord],
    store: ChainStore,
    tags: Optional[Mapping[str, Tag]] = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
    width_limit: int = DEFAULT_WIDTH_LIMIT,
) -> FlowTraversal:
    """Same traversal as `trace_flows`, with the spend lookups of one level run concurrently."""
    walk = _traversal(payments, tags or {}, max_depth, width_limit)
    try:
        wanted = next(walk)
        while True:
            found = await asyncio.gather(*(store.async_spender(ref) for ref in wanted))
            wanted = walk.send(dict(zip(wanted, found)))
    except StopIteration as done:
        return done.value


def _is_tagged(cluster_addresses: Iterable[str], tags: Mapping[str, Tag]) -> bool:
    return any(address in tags for address in cluster_addresses)


def depth_cluster_table(
    traversal: FlowTraversal,
    depth: int,
    clusters: ClusterSet,
    ledger: Ledger,
    prices: Optional[PriceSeries] = None,
    tags: Optional[Mapping[str, Tag]] = None,
) -> List[DepthClusterRow]:
    """
    Untagged clusters reached at `depth`, by BTC received from victims descending. `total_spent_usd`
    values every transaction spending from the cluster at its own date; `txs_out` counts them.
    """
    tags = tags or {}
    received: Dict[int, Fraction] = {}
    for address, value in traversal.nodes(depth).items():
        cluster_id = clusters.cluster_id_of(address)
        if cluster_id is None:
            logger.warning("address %s reached at depth %d belongs to no cluster", address, depth)
            continue
        received[cluster_id] = received.get(cluster_id, Fraction(0)) + value
    rows = []
    for cluster_id, value in received.items():
        cluster = clusters[cluster_id]
        if cluster.tag or _is_tagged(cluster.addresses, tags):
            continue
        spending: Dict[str, Transaction] = {}
        first = None
        for address in cluster.addresses:
            for tx in ledger.outgoing(address):
                spending[tx.tx_id] = tx
            for tx, _ in ledger.incoming(address):
                first = tx.timestamp if first is None else min(first, tx.timestamp)
        total_usd = Decimal(0)
        for tx in spending.values():
            first = tx.timestamp if first is None else min(first, tx.timestamp)
            spent_sat = sum(i.value_sat for i in tx.inputs if i.address in cluster.addresses)
            if prices is None:
                continue
            try:
                total_usd += value_usd(spent_sat, tx.timestamp, prices)
            except MissingPrice:
                logger.warning("no BTC price for %s, left out of cluster %d spending", tx.timestamp.date(), cluster_id)
        rows.append(DepthClusterRow(cluster_id, total_usd, first, len(spending), _fraction_btc(value)))
    rows.sort(key=lambda r: (-r.btc_received, r.cluster_id))
    return rows


def tagged_inflow(
    traversal: FlowTraversal,
    tags: Mapping[str, Tag],
    revenue_btc: Decimal,
    max_depth: Optional[int] = None,
) -> InflowEstimate:
    """BTC reaching tagged entities within `max_depth` hops and its share of `revenue_btc`."""
    last = traversal.max_depth if max_depth is None else max_depth
    by_entity: Dict[str, Fraction] = {}
    for depth in range(1, min(last, len(traversal.levels) - 1) + 1):
        for address, value in traversal.nodes(depth).items():
            if address in tags:
                by_entity[tags[address].tag] = by_entity.get(tags[address].tag, Fraction(0)) + value
    total = _fraction_btc(sum(by_entity.values(), Fraction(0)))
    fraction = total / revenue_btc if revenue_btc else Decimal(0)
    return InflowEstimate(total, fraction, {tag: _fraction_btc(v) for tag, v in sorted(by_entity.items())})


def cashout_candidates(
    traversal: FlowTraversal,
    clusters: ClusterSet,
    revenue_btc: Decimal,
    cutoff: datetime.date = DEFAULT_CUTOFF,
    tags: Optional[Mapping[str, Tag]] = None,
) -> InflowEstimate:
    """
    Traced BTC entering untagged clusters that were active before `cutoff`, and its share of `revenue_btc`.
    Only value crossing from another cluster counts. Requires `first_tx` filled by `cluster_statistics`.
    """
    tags = tags or {}
    cutoff_at = datetime.datetime.combine(cutoff, datetime.time(), tzinfo=datetime.timezone.utc)
    by_cluster: Dict[int, Fraction] = {}
    for edge in traversal.edges:
        if edge.dst_address is None:
            continue
        cluster = clusters.cluster_of(edge.dst_address)
        if cluster is None or cluster.first_tx is None or cluster.first_tx >= cutoff_at:
            continue
        if cluster.tag or _is_tagged(cluster.addresses, tags):
            continue
        if edge.src_address is not None and clusters.cluster_id_of(edge.src_address) == cluster.cluster_id:
            continue
        by_cluster[cluster.cluster_id] = by_cluster.get(cluster.cluster_id, Fraction(0)) + edge.value_sat
    total = _fraction_btc(sum(by_cluster.values(), Fraction(0)))
    fraction = total / revenue_btc if revenue_btc else Decimal(0)
    if by_cluster:
        logger.info("%s BTC (%.1f%% of revenue) reached %d clusters older than %s", total, float(fraction) * 100, len(by_cluster), cutoff)
    return InflowEstimate(total, fraction, {str(k): _fraction_btc(v) for k, v in sorted(by_cluster.items())})


def write_holding_histogram(summary: HoldingSummary, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["bin_start_hours", "btc_amount"])
        for start, amount in summary.histogram:
            writer.writerow([start, format_btc(amount)])


def write_holding_periods(summary: HoldingSummary, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["tx_id", "output_index", "received_at", "spent_at", "hours", "value_sat"])
        for p in summary.periods:
            hours = p.duration_hours
            writer.writerow(
                [
                    p.payment.tx_id,
                    p.payment.index,
                    p.received_at.isoformat(),
                    "" if p.spent_at is None else p.spent_at.isoformat(),
                    "" if hours is None else f"{hours:.4f}",
                    p.amount_sat,
                ]
            )


def write_depth_table(rows: Sequence[DepthClusterRow], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["cluster_id", "total_spent_usd", "first_tx", "txs_out", "btc_received"])
        for row in rows:
            writer.writerow(
                [
                    row.cluster_id,
                    format_usd(row.total_spent_usd),
                    "" if row.first_tx is None else row.first_tx.date().isoformat(),
                    row.txs_out,
                    format_btc(row.btc_received),
                ]
            )


def write_flow_edges(traversal: FlowTraversal, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["depth", "src", "src_address", "dst", "dst_address", "tx_id", "btc"])
        for edge in traversal.edges:
            writer.writerow(
                [edge.depth, str(edge.src), edge.src_address or "", str(edge.dst), edge.dst_address or "", edge.tx_id, format_btc(edge.value_btc)]
            )

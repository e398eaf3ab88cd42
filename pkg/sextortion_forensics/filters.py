"""Victim payment filters and revenue estimation."""
import csv
import datetime
import logging
from collections import OrderedDict
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import Enum
from pathlib import Path
from typing import (
    AbstractSet,
    Dict,
    FrozenSet,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

from sextortion_forensics.chainstore import (
    Ledger,
    OutputRef,
    PriceSeries,
    Transaction,
    btc,
    parse_timestamp,
    value_usd,
)
from sextortion_forensics.corpus import ExtractedDatapoints
from sextortion_forensics.exceptions import ConfigError, DataError, MissingPrice, SchemaError
from sextortion_forensics.utils import format_btc, format_usd

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEFAULT_TOLERANCE = Decimal("0.1")


class PaymentFilter(str, Enum):
    COLLECTOR = "collector"
    RANGE = "range"
    MOVING_MONEY = "moving_money"


FILTER_COMBOS: Dict[str, Tuple[PaymentFilter, ...]] = {
    "1+2": (PaymentFilter.COLLECTOR, PaymentFilter.RANGE),
    "1+2+3": (PaymentFilter.COLLECTOR, PaymentFilter.RANGE, PaymentFilter.MOVING_MONEY),
}


def combo_filters(combo: str) -> Tuple[PaymentFilter, ...]:
    try:
        return FILTER_COMBOS[combo]
    except KeyError:
        raise ConfigError(f"unknown filter combination {combo!r}, expected one of {', '.join(FILTER_COMBOS)}") from None


@dataclass(frozen=True)
class RansomAmountSet:
    """The USD ransom amounts S found in the corpus and the tolerance p of the range filter."""

    amounts: FrozenSet[Decimal]
    p: Decimal = DEFAULT_TOLERANCE

    def __post_init__(self):
        object.__setattr__(self, "amounts", frozenset(Decimal(a) for a in self.amounts))
        object.__setattr__(self, "p", Decimal(self.p))
        if not Decimal(0) <= self.p < Decimal(1):
            raise ConfigError(f"range tolerance p must lie in [0, 1), got {self.p}")

    @classmethod
    def from_datapoints(cls, points: Iterable[ExtractedDatapoints], p: Decimal = DEFAULT_TOLERANCE) -> "RansomAmountSet":
        return cls(frozenset(point.amount_usd for point in points if point.amount_usd is not None), p)

    @property
    def window(self) -> Tuple[Decimal, Decimal]:
        """Inclusive bounds `[(1 - p) * min S, (1 + p) * max S]`."""
        if not self.amounts:
            raise DataError("no ransom amounts were extracted, the range filter has nothing to compare with")
        return (1 - self.p) * min(self.amounts), (1 + self.p) * max(self.amounts)

    def __contains__(self, value: Decimal) -> bool:
        low, high = self.window
        return low <= value <= high


@dataclass(frozen=True)
class PaymentRecord:
    """One output paying an address of the expanded set. Rejected records are kept for the audit trail."""

    output_ref: OutputRef
    address: str
    timestamp: datetime.datetime
    value_sat: int
    value_usd: Optional[Decimal]
    passed_filters: FrozenSet[PaymentFilter] = frozenset()
    flags: Tuple[str, ...] = ()

    @property
    def value_btc(self) -> Decimal:
        return btc(self.value_sat)

    def passes(self, combo: str) -> bool:
        return all(f in self.passed_filters for f in combo_filters(combo))


@dataclass(frozen=True)
class MonthlyRevenue:
    month: str
    payments: int
    usd: Decimal
    btc: Decimal
    cumulative_usd: Decimal
    cumulative_btc: Decimal


@dataclass
class RevenueReport:
    combo: str
    payments: int = 0
    usd: Decimal = Decimal(0)
    btc: Decimal = Decimal(0)
    monthly: List[MonthlyRevenue] = field(default_factory=list)
    component_usd: Dict[int, Decimal] = field(default_factory=dict)

    @property
    def average_monthly_usd(self) -> Decimal:
        if not self.monthly:
            return Decimal(0)
        return self.usd / len(self.monthly)

    def component_share(self, component: int) -> Decimal:
        if not self.usd:
            return Decimal(0)
        return self.component_usd.get(component, Decimal(0)) / self.usd


def collector_filter(tx: Transaction, sextortion: AbstractSet[str]) -> bool:
    """Keep unless the transaction has a sextortion address among its inputs and one among its outputs."""
    return not (tx.input_addresses & sextortion and tx.output_addresses & sextortion)


def range_filter(payment: PaymentRecord, amounts: RansomAmountSet) -> bool:
    """Keep iff the USD value of the payment lies in the inclusive tolerance window around S. Unpriced payments are dropped."""
    if payment.value_usd is None:
        return False
    return payment.value_usd in amounts


def moving_money_filter(tx: Transaction) -> bool:
    """Drop single-output (exact amount) transactions."""
    return len(tx.outputs) != 1


def classify_payments(
    transactions: Iterable[Transaction],
    addresses: AbstractSet[str],
    prices: Optional[PriceSeries],
    amounts: RansomAmountSet,
    per_address: Optional[Mapping[str, RansomAmountSet]] = None,
) -> List[PaymentRecord]:
    """
    Build a PaymentRecord for every output paying one of `addresses` and record which filters it passes.
    With `per_address`, the range filter of an address uses its own campaign's amounts instead of the global set.

    Returns:
        Records sorted by (timestamp, tx_id, output index).
    """
    records = []
    for tx in transactions:
        keeps_collector = collector_filter(tx, addresses)
        keeps_moving = moving_money_filter(tx)
        for out in tx.outputs:
            if out.address not in addresses:
                continue
            flags = []
            usd = None
            if prices is None:
                flags.append("missing_price")
            else:
                try:
                    usd = value_usd(out.value_sat, tx.timestamp, prices)
                except MissingPrice:
                    flags.append("missing_price")
            record = PaymentRecord(tx.ref(out.index), out.address, tx.timestamp, out.value_sat, usd, flags=tuple(flags))
            passed = set()
            if keeps_collector:
                passed.add(PaymentFilter.COLLECTOR)
            if range_filter(record, (per_address or {}).get(out.address, amounts)):
                passed.add(PaymentFilter.RANGE)
            if keeps_moving:
                passed.add(PaymentFilter.MOVING_MONEY)
            records.append(
                PaymentRecord(record.output_ref, record.address, record.timestamp, record.value_sat, usd, frozenset(passed), record.flags)
            )
    records.sort(key=lambda r: (r.timestamp, r.output_ref.tx_id, r.output_ref.index))
    return records


def collect_payments(
    ledger: Ledger,
    addresses: AbstractSet[str],
    prices: Optional[PriceSeries],
    amounts: RansomAmountSet,
    per_address: Optional[Mapping[str, RansomAmountSet]] = None,
) -> List[PaymentRecord]:
    """Audit trail of every incoming output of the expanded sextortion address set."""
    transactions: Dict[str, Transaction] = OrderedDict()
    for address in sorted(addresses):
        for tx, _ in ledger.incoming(address):
            transactions.setdefault(tx.tx_id, tx)
    records = classify_payments(transactions.values(), frozenset(addresses), prices, amounts, per_address)
    unpriced = sum(1 for r in records if "missing_price" in r.flags)
    if unpriced:
        logger.warning("%d payments have no BTC price and fail the range filter", unpriced)
    logger.info(
        "%d incoming payments, %d kept by 1+2, %d kept by 1+2+3",
        len(records),
        sum(1 for r in records if r.passes("1+2")),
        sum(1 for r in records if r.passes("1+2+3")),
    )
    return records


def per_campaign_amounts(
    points: Iterable[ExtractedDatapoints],
    campaign_of: Mapping[str, str],
    p: Decimal = DEFAULT_TOLERANCE,
) -> Dict[str, RansomAmountSet]:
    """
    Experimental: one ransom set per campaign, keyed by every address the campaign's emails carry.
    An address used by several campaigns gets the union of their amounts.
    """
    points = list(points)
    by_campaign: Dict[str, set] = {}
    for point in points:
        campaign = campaign_of.get(point.email_id)
        if campaign is not None and point.amount_usd is not None:
            by_campaign.setdefault(campaign, set()).add(point.amount_usd)
    by_address: Dict[str, set] = {}
    for point in points:
        campaign = campaign_of.get(point.email_id)
        if campaign is None:
            continue
        for address in point.payment_addresses:
            by_address.setdefault(address, set()).update(by_campaign.get(campaign, ()))
    return {address: RansomAmountSet(frozenset(found), p) for address, found in by_address.items() if found}


def _month(ts: datetime.datetime) -> Tuple[int, int]:
    return ts.year, ts.month


def _months_between(first: Tuple[int, int], last: Tuple[int, int]) -> List[Tuple[int, int]]:
    months = []
    year, month = first
    while (year, month) <= last:
        months.append((year, month))
        year, month = (year + 1, 1) if month == 12 else (year, month + 1)
    return months


def revenue_report(
    payments: Iterable[PaymentRecord],
    combo: str = "1+2",
    address_components: Optional[Mapping[str, int]] = None,
) -> RevenueReport:
    """
    Totals of the payments passing `combo`, with a UTC calendar-month series (months without
    payments included as zero rows) and cumulative totals.

    Args:
        payments: records from `collect_payments`; records failing `combo` are ignored.
        combo: "1+2" or "1+2+3".
        address_components: optional address -> linkage component, to split revenue per component.
    """
    selected = [p for p in payments if p.passes(combo)]
    report = RevenueReport(combo=combo)
    if not selected:
        return report
    per_month: Dict[Tuple[int, int], List[PaymentRecord]] = {}
    for payment in selected:
        per_month.setdefault(_month(payment.timestamp), []).append(payment)
        if address_components is not None and payment.address in address_components:
            component = address_components[payment.address]
            report.component_usd[component] = report.component_usd.get(component, Decimal(0)) + payment.value_usd
    cumulative_usd, cumulative_btc = Decimal(0), Decimal(0)
    for year, month in _months_between(min(per_month), max(per_month)):
        rows = per_month.get((year, month), [])
        usd = sum((r.value_usd for r in rows), Decimal(0))
        amount_btc = btc(sum(r.value_sat for r in rows))
        cumulative_usd += usd
        cumulative_btc += amount_btc
        report.monthly.append(MonthlyRevenue(f"{year:04d}-{month:02d}", len(rows), usd, amount_btc, cumulative_usd, cumulative_btc))
    report.payments = len(selected)
    report.usd = cumulative_usd
    report.btc = cumulative_btc
    return report


def _filters_cell(passed: Iterable[PaymentFilter]) -> str:
    passed = set(passed)
    return "|".join(f.value for f in PaymentFilter if f in passed)


def write_payments(payments: Sequence[PaymentRecord], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["tx_id", "output_index", "address", "timestamp", "value_sat", "value_usd", "filters_passed"])
        for p in payments:
            writer.writerow(
                [
                    p.output_ref.tx_id,
                    p.output_ref.index,
                    p.address,
                    p.timestamp.isoformat(),
                    p.value_sat,
                    "" if p.value_usd is None else str(p.value_usd),
                    _filters_cell(p.passed_filters),
                ]
            )


def read_payments(path: PathLike) -> List[PaymentRecord]:
    payments = []
    with open(path, newline="", encoding="utf-8") as fp:
        for line_no, row in enumerate(csv.DictReader(fp), start=2):
            try:
                usd = Decimal(row["value_usd"]) if row["value_usd"] else None
                passed = frozenset(PaymentFilter(name) for name in row["filters_passed"].split("|") if name)
                payments.append(
                    PaymentRecord(
                        output_ref=OutputRef(row["tx_id"], int(row["output_index"])),
                        address=row["address"],
                        timestamp=parse_timestamp(row["timestamp"]),
                        value_sat=int(row["value_sat"]),
                        value_usd=usd,
                        passed_filters=passed,
                        flags=() if usd is not None else ("missing_price",),
                    )
                )
            except (KeyError, TypeError, ValueError, InvalidOperation) as exc:
                raise SchemaError(f"bad payment row: {exc}", line=line_no, source=str(path)) from exc
    return payments


def write_revenue_table(reports: Sequence[RevenueReport], path: PathLike) -> None:
    """Payment count and revenue per filter combination."""
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["filters", "payments", "revenue_usd", "revenue_btc"])
        for report in reports:
            writer.writerow([report.combo, report.payments, format_usd(report.usd), format_btc(report.btc)])


def write_monthly_revenue(report: RevenueReport, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["month", "payments", "revenue_usd", "revenue_btc", "cumulative_usd", "cumulative_btc"])
        for row in report.monthly:
            writer.writerow(
                [
                    row.month,
                    row.payments,
                    format_usd(row.usd),
                    format_btc(row.btc),
                    format_usd(row.cumulative_usd),
                    format_btc(row.cumulative_btc),
                ]
            )

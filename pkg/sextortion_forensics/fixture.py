"""
Synthetic corpora and ledgers with known ground truth.

The generator plants every case the pipeline has to tell apart: template variants that only differ
inside the compared suffix, a payment address shared by all campaigns, payments inside and outside the
ransom window (one exactly on its lower bound), collector transfers, single-output payments, a
CoinJoin-shaped transaction, a supercluster, and a tagged exchange plus a pre-cutoff cluster two hops
away from the payments. The ground truth is derived from the construction, not from the pipeline.
"""
import csv
import datetime
import hashlib
import json
import logging
import random
import statistics
from dataclasses import dataclass, field
from decimal import Decimal
from email.utils import format_datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator

from sextortion_forensics.base58 import encode_address
from sextortion_forensics.chainstore import (
    SATOSHI_PER_BTC,
    OutputRef,
    Transaction,
    TxInput,
    TxOutput,
    btc,
    transaction_record,
)
from sextortion_forensics.clustering import Tag
from sextortion_forensics.config import PipelineConfig
from sextortion_forensics.exceptions import InvariantViolation
from sextortion_forensics.utils import format_btc, format_usd

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CORPUS = "corpus.jsonl"
LEDGER = "ledger.jsonl"
PRICES = "prices.csv"
RATES = "rates.csv"
TAGS = "tags.csv"
BREACH = "breach.txt"
CONFIG = "pipeline.ini"
GROUND_TRUTH = "ground_truth.json"

# every price divides 10**6, so any cent amount is a whole number of satoshis
PRICE_CYCLE = (Decimal(4000), Decimal(5000), Decimal(8000), Decimal(10000), Decimal(6250))
PRICE_START = datetime.date(2017, 1, 1)
EUR_RATE = Decimal("1.14")
TAIL_WORDS = 60
COMMON_WORDS = ("i", "know", "everything", "about", "you", "and", "your", "dirty", "little", "secret")
CHANGE_SAT = 50_000
FEE_SAT = 1_000
EXCHANGE_TAG = "exchange-x"
OUT_OF_RANGE_USD = Decimal(100)
SWEEP_USD = Decimal(250)
SHARED_USD = Decimal(700)
CO_SPENT_USD = Decimal(500)

# (currency, ransom amounts, language) per campaign, cycled
_CAMPAIGN_PLANS = (
    ("USD", (Decimal(200), Decimal(250)), "en"),
    ("USD", (Decimal(500), Decimal(700)), "cs"),
    ("EUR", (Decimal(600), Decimal(1000)), "de"),
)
_GREETINGS = ("Hello!", "Hi!", "Greetings!", "Hello there,", "Dear user,", "Hey!")
_OPENERS = (
    "I am a hacker who got access to your device.",
    "I am a hacker and I got access to your device!",
    "I am a programmer who got access to your device...",
    "I got access to your device some time ago.",
)
_SYLLABLES = ("ka", "lo", "mi", "ne", "ru", "ta", "vo", "si", "pe", "du", "ga", "zo", "bi", "fe", "hu", "ja")
_REPEATED_PASSWORD = "qwerty123"


class FixtureSpec(BaseModel):
    """Shape of a generated fixture. Defaults give a desk-sized corpus and ledger."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    campaigns: int = Field(3, ge=3)
    emails_per_campaign: int = Field(12, ge=2)
    addresses_per_campaign: int = Field(2, ge=2)
    payments_per_address: int = Field(2, ge=1)
    tail_variants: int = Field(2, ge=1, le=5)
    sweeps: int = Field(1, ge=0, description="single-output victim payments")
    out_of_range: int = Field(1, ge=1, description="payments below the ransom window; the first funds the collector transfer")
    supercluster_size: int = Field(25, ge=3)
    supercluster_limit: int = Field(20, ge=1)
    start: datetime.date = datetime.date(2018, 10, 1)
    span_days: int = Field(30, ge=1)

    @model_validator(mode="after")
    def _consistent(self) -> "FixtureSpec":
        if self.supercluster_size <= self.supercluster_limit:
            raise ValueError("supercluster_size must exceed supercluster_limit")
        if self.emails_per_campaign < self.addresses_per_campaign + 2:
            raise ValueError("every campaign needs an email per address plus the shared and the unfunded address")
        return self


@dataclass
class _Payment:
    role: str
    address: str
    usd: Decimal
    outputs: int
    at: Optional[datetime.datetime] = None
    ref: Optional[OutputRef] = None
    value_sat: int = 0
    spent_at: Optional[datetime.datetime] = None

    def kept(self, low: Decimal, high: Decimal) -> bool:
        return low <= self.usd <= high


@dataclass
class Fixture:
    spec: FixtureSpec
    seed: int
    emails: List[Dict[str, Any]]
    transactions: List[Transaction]
    prices: Dict[datetime.date, Decimal]
    rates: Dict[Tuple[datetime.date, str], Decimal]
    tags: Dict[str, Tag]
    breach_words: List[str]
    config: PipelineConfig
    ground_truth: Dict[str, Any] = field(default_factory=dict)

    def write(self, out_dir: PathLike) -> Dict[str, Path]:
        """Write every input file, the pipeline config and the ground truth into `out_dir`."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = {name: out_dir / name for name in (CORPUS, LEDGER, PRICES, RATES, TAGS, BREACH, CONFIG, GROUND_TRUTH)}
        with open(files[CORPUS], "w", encoding="utf-8", newline="\n") as fp:
            for record in self.emails:
                fp.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
        with open(files[LEDGER], "w", encoding="utf-8", newline="\n") as fp:
            for tx in self.transactions:
                fp.write(json.dumps(transaction_record(tx), sort_keys=True) + "\n")
        with open(files[PRICES], "w", encoding="utf-8", newline="") as fp:
            writer = csv.writer(fp, lineterminator="\n")
            writer.writerow(["date", "usd_per_btc"])
            for day in sorted(self.prices):
                writer.writerow([day.isoformat(), self.prices[day]])
        with open(files[RATES], "w", encoding="utf-8", newline="") as fp:
            writer = csv.writer(fp, lineterminator="\n")
            writer.writerow(["date", "currency", "usd_per_unit"])
            for day, currency in sorted(self.rates):
                writer.writerow([day.isoformat(), currency, self.rates[(day, currency)]])
        with open(files[TAGS], "w", encoding="utf-8", newline="") as fp:
            writer = csv.writer(fp, lineterminator="\n")
            writer.writerow(["address", "tag", "source"])
            for address in sorted(self.tags):
                writer.writerow([address, self.tags[address].tag, self.tags[address].source])
        files[BREACH].write_text("".join(word + "\n" for word in self.breach_words), encoding="utf-8")
        self.config.to_file(files[CONFIG])
        files[GROUND_TRUTH].write_text(json.dumps(self.ground_truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info("fixture with %d emails and %d transactions written to %s", len(self.emails), len(self.transactions), out_dir)
        return files


def price_on(day: datetime.date) -> Decimal:
    return PRICE_CYCLE[(day - PRICE_START).days % len(PRICE_CYCLE)]


def _satoshis(usd: Decimal, day: datetime.date) -> int:
    value = usd * SATOSHI_PER_BTC / price_on(day)
    if value != value.to_integral_value():
        raise InvariantViolation(f"${usd} is not a whole number of satoshis on {day}")
    return int(value)


def _address(rng: random.Random) -> str:
    return encode_address(bytes(rng.getrandbits(8) for _ in range(20)))


def _word(rng: random.Random, used: set) -> str:
    while True:
        word = "".join(rng.choice(_SYLLABLES) for _ in range(4))
        if word not in used:
            used.add(word)
            return word


def _campaign_name(index: int) -> str:
    return f"campaign-{chr(ord('A') + index)}" if index < 26 else f"campaign-{index}"


class _LedgerBuilder:
    """Appends transactions with deterministic ids and keeps the spendable outputs."""

    def __init__(self, seed: int):
        self.seed = seed
        self.transactions: List[Transaction] = []
        self.utxos: Dict[OutputRef, Tuple[str, int]] = {}

    def _tx_id(self) -> str:
        return hashlib.sha256(f"fixture:{self.seed}:{len(self.transactions)}".encode()).hexdigest()

    def coinbase(self, address: str, value_sat: int, at: datetime.datetime) -> OutputRef:
        tx = Transaction(self._tx_id(), at, (), (TxOutput(0, address, value_sat),), coinbase=True)
        self.transactions.append(tx)
        self.utxos[tx.ref(0)] = (address, value_sat)
        return tx.ref(0)

    def spend(self, refs: Sequence[OutputRef], outputs: Sequence[Tuple[str, int]], at: datetime.datetime) -> Transaction:
        inputs = []
        for ref in refs:
            address, value = self.utxos.pop(ref)
            inputs.append(TxInput(address, value, ref))
        tx = Transaction(self._tx_id(), at, tuple(inputs), tuple(TxOutput(i, a, v) for i, (a, v) in enumerate(outputs)))
        if tx.output_value > tx.input_value:
            raise InvariantViolation(f"fixture transaction {tx.tx_id} creates value")
        self.transactions.append(tx)
        for out in tx.outputs:
            self.utxos[tx.ref(out.index)] = (out.address, out.value_sat)
        return tx


def _emails(spec: FixtureSpec, rng: random.Random, campaign_addresses, shared: str, unfunded, t0: datetime.datetime):
    used = set(COMMON_WORDS)
    records = []
    passwords = []
    buckets: Dict[str, List[str]] = {}
    for c in range(spec.campaigns):
        currency, amounts, language = _CAMPAIGN_PLANS[c % len(_CAMPAIGN_PLANS)]
        base = [_word(rng, used) for _ in range(TAIL_WORDS - len(COMMON_WORDS))]
        extra = [_word(rng, used) for _ in range(5 * (spec.tail_variants - 1))]
        variants = []
        for v in range(spec.tail_variants):
            words = list(base)
            for j in range(5 if v else 0):
                words[(v * 11 + 9 * j) % len(words)] = extra[(v - 1) * 5 + j]
            variants.append(list(COMMON_WORDS) + words)
        name = _campaign_name(c)
        buckets[name] = []
        for k in range(spec.emails_per_campaign):
            if k == 0:
                address = shared
            elif k == spec.emails_per_campaign - 1:
                address = unfunded[c]
            else:
                address = campaign_addresses[c][(k - 1) % spec.addresses_per_campaign]
            amount = amounts[k % len(amounts)]
            amount_text = f"${amount}" if currency == "USD" else f"€{amount}"
            if c == 0 and k % 5 == 4:
                secret = _REPEATED_PASSWORD
            else:
                secret = f"{_word(rng, used)}{rng.randint(10, 99)}"
            passwords.append(secret)
            tail = variants[rng.randrange(spec.tail_variants)]
            sentences = [" ".join(tail[i : i + 12]) + "." for i in range(0, len(tail), 12)]
            opener = rng.choice(_OPENERS)
            if rng.random() < 0.3:
                opener = opener.rstrip(".!") + "!!"
            body = "\n".join(
                [
                    rng.choice(_GREETINGS),
                    opener,
                    f"You have to pay {amount_text} to my bitcoin wallet {address}",
                    f"password: {secret}",
                    " ".join(sentences),
                ]
            )
            email_id = f"c{c:02d}-e{k:04d}"
            buckets[name].append(email_id)
            records.append({"id": email_id, "language": language, "subject": "Your account is hacked", "body": body, "currency": currency})
    rng.shuffle(records)
    for i, record in enumerate(records):
        record["date"] = format_datetime(t0 - datetime.timedelta(days=7) + datetime.timedelta(minutes=i))
    return records, passwords, buckets


def generate_fixture(spec: Optional[FixtureSpec] = None, seed: int = 0) -> Fixture:
    """
    Build a corpus, ledger, price and rate series, tags, breach list and pipeline config with their
    ground truth. The same `spec` and `seed` always give the same fixture.
    """
    spec = spec or FixtureSpec()
    rng = random.Random(seed)
    t0 = datetime.datetime.combine(spec.start, datetime.time(), tzinfo=datetime.timezone.utc)

    campaign_addresses = [[_address(rng) for _ in range(spec.addresses_per_campaign)] for _ in range(spec.campaigns)]
    unfunded = [_address(rng) for _ in range(spec.campaigns)]
    shared, co_spender, wallet, exchange, old = (_address(rng) for _ in range(5))

    records, passwords, buckets = _emails(spec, rng, campaign_addresses, shared, unfunded, t0)
    currencies = {record.pop("currency") for record in records}
    rates = {}
    if "EUR" in currencies:
        day = (t0 - datetime.timedelta(days=7)).date()
        while day <= t0.date():
            rates[(day, "EUR")] = EUR_RATE
            day += datetime.timedelta(days=1)

    ransom_usd = set()
    for c in range(spec.campaigns):
        currency, amounts, _ = _CAMPAIGN_PLANS[c % len(_CAMPAIGN_PLANS)]
        ransom_usd.update(a * (EUR_RATE if currency == "EUR" else 1) for a in amounts)
    p = Decimal("0.1")
    low, high = (1 - p) * min(ransom_usd), (1 + p) * max(ransom_usd)

    plan: List[_Payment] = []
    for c in range(spec.campaigns):
        currency, amounts, _ = _CAMPAIGN_PLANS[c % len(_CAMPAIGN_PLANS)]
        for i, address in enumerate(campaign_addresses[c]):
            for j in range(spec.payments_per_address):
                amount = amounts[(i + j) % len(amounts)] * (EUR_RATE if currency == "EUR" else 1)
                plan.append(_Payment("regular", address, amount, 2))
    plan.append(_Payment("shared", shared, SHARED_USD, 2))
    plan.append(_Payment("co_spent", co_spender, CO_SPENT_USD, 2))
    plan.append(_Payment("boundary", campaign_addresses[1][0], low, 2))
    plan.extend(_Payment("sweep", campaign_addresses[0][1], SWEEP_USD, 1) for _ in range(spec.sweeps))
    plan.extend(_Payment("out_of_range", campaign_addresses[0][0], OUT_OF_RANGE_USD, 2) for _ in range(spec.out_of_range))
    rng.shuffle(plan)
    step = max(1, spec.span_days * 24 // (len(plan) + 1))
    for n, payment in enumerate(plan):
        payment.at = t0 + datetime.timedelta(hours=(n + 1) * step)

    ledger = _LedgerBuilder(seed)
    funding_at = datetime.datetime(2017, 6, 1, tzinfo=datetime.timezone.utc)
    ledger.coinbase(old, 1_000_000, datetime.datetime(2017, 3, 1, tzinfo=datetime.timezone.utc))
    for n, payment in enumerate(plan):
        payment.value_sat = _satoshis(payment.usd, payment.at.date())
        victim = _address(rng)
        extra = CHANGE_SAT + FEE_SAT if payment.outputs == 2 else FEE_SAT
        funding = ledger.coinbase(victim, payment.value_sat + extra, funding_at + datetime.timedelta(minutes=n))
        outputs = [(payment.address, payment.value_sat)]
        if payment.outputs == 2:
            outputs.append((_address(rng), CHANGE_SAT))
        tx = ledger.spend([funding], outputs, payment.at)
        payment.ref = tx.ref(0)

    kept = sorted((p for p in plan if p.kept(low, high)), key=lambda p: p.at)

    def first(role: str, address: str) -> _Payment:
        return next(p for p in kept if p.role == role and p.address == address)

    coinjoined = first("regular", campaign_addresses[2][0])
    superclustered = first("regular", campaign_addresses[1][1])
    co_spent = [first("regular", campaign_addresses[0][0]), next(p for p in kept if p.role == "co_spent")]
    special = {id(coinjoined), id(superclustered)} | {id(p) for p in co_spent}
    unspent = [p for p in kept if id(p) not in special][-1]
    to_wallet = [p for p in kept if id(p) not in special and p is not unspent]

    spends: List[Tuple[datetime.datetime, str, Any]] = []
    spends.append((coinjoined.at + datetime.timedelta(hours=5), "coinjoin", coinjoined))
    spends.append((superclustered.at + datetime.timedelta(hours=15), "supercluster", superclustered))
    spends.append((max(p.at for p in co_spent) + datetime.timedelta(hours=10), "co_spend", co_spent))
    for rank, payment in enumerate(to_wallet):
        spends.append((payment.at + datetime.timedelta(hours=10 * (rank + 1)), "wallet", payment))
    collector_source = next(p for p in plan if p.role == "out_of_range")
    spends.append((collector_source.at + datetime.timedelta(hours=12), "collector", collector_source))

    outsiders = [_address(rng) for _ in range(4)]
    outsider_refs = [
        ledger.coinbase(a, 10_000_000 + k * 1_000_000, funding_at + datetime.timedelta(days=30, minutes=k)) for k, a in enumerate(outsiders)
    ]
    members = [_address(rng) for _ in range(spec.supercluster_size - 1)]
    member_refs = [ledger.coinbase(a, 100_000, funding_at + datetime.timedelta(days=60, minutes=k)) for k, a in enumerate(members)]

    for at, kind, target in sorted(spends, key=lambda s: (s[0], s[1])):
        if kind == "coinjoin":
            outputs = [(_address(rng), 1_000_000)]
            outputs.append((_address(rng), target.value_sat - 1_000_000))
            for k in range(len(outsiders)):
                outputs.append((_address(rng), 1_000_000))
                outputs.append((_address(rng), 9_000_000 + k * 1_000_000))
            ledger.spend([target.ref, *outsider_refs], outputs, at)
            target.spent_at = at
        elif kind == "supercluster":
            total = target.value_sat + 100_000 * len(members)
            ledger.spend([target.ref, *member_refs], [(_address(rng), total - FEE_SAT)], at)
            target.spent_at = at
        elif kind == "co_spend":
            ledger.spend([p.ref for p in target], [(wallet, sum(p.value_sat for p in target))], at)
            for payment in target:
                payment.spent_at = at
        elif kind == "wallet":
            ledger.spend([target.ref], [(wallet, target.value_sat)], at)
            target.spent_at = at
        else:
            half = target.value_sat // 2
            ledger.spend([target.ref], [(campaign_addresses[1][0], half), (campaign_addresses[0][0], target.value_sat - half)], at)

    sweep_at = max(tx.timestamp for tx in ledger.transactions) + datetime.timedelta(days=1)
    wallet_refs = sorted(ref for ref, (address, _) in ledger.utxos.items() if address == wallet)
    wallet_total = sum(ledger.utxos[ref][1] for ref in wallet_refs)
    to_exchange = wallet_total * 3 // 5
    ledger.spend(wallet_refs, [(exchange, to_exchange), (old, wallet_total - to_exchange)], sweep_at)

    last_day = sweep_at.date() + datetime.timedelta(days=30)
    prices = {}
    day = PRICE_START
    while day <= last_day:
        prices[day] = price_on(day)
        day += datetime.timedelta(days=1)

    tags = {exchange: Tag(EXCHANGE_TAG, "fixture")}
    noise = [f"{_word(rng, set())}{n}" for n in range(20)]
    breach_words = sorted(set(passwords) | set(noise))

    config = PipelineConfig.build(
        corpus=Path(CORPUS),
        ledger=Path(LEDGER),
        prices=Path(PRICES),
        rates=Path(RATES),
        tags=Path(TAGS),
        breach_lists=[Path(BREACH)],
        supercluster_limit=spec.supercluster_limit,
        p=p,
        resamples=50,
        normality_sample_size=min(8, spec.emails_per_campaign),
        seed=seed,
        out_dir=Path("out"),
    )

    seeds = {shared, *unfunded, *(a for addresses in campaign_addresses for a in addresses)}
    funded = seeds - set(unfunded)
    combos = {
        "1+2": [p for p in plan if p.kept(low, high)],
        "1+2+3": [p for p in plan if p.kept(low, high) and p.outputs == 2],
    }
    ground_truth = {
        "seed": seed,
        "buckets": {name: sorted(ids) for name, ids in buckets.items()},
        "seed_addresses": sorted(seeds),
        "funded_seeds": sorted(funded),
        "expanded": sorted(funded | {co_spender}),
        "coinjoin_participants": sorted([coinjoined.address, *outsiders]),
        "supercluster_seed": superclustered.address,
        "window_usd": [format_usd(low), format_usd(high)],
        "boundary_payment": str(next(p.ref for p in plan if p.role == "boundary")),
        "payments": {combo: sorted(str(p.ref) for p in chosen) for combo, chosen in combos.items()},
        "revenue": {
            combo: {
                "payments": len(chosen),
                "usd": format_usd(sum((p.usd for p in chosen), Decimal(0))),
                "btc": format_btc(btc(sum(p.value_sat for p in chosen))),
            }
            for combo, chosen in combos.items()
        },
        "holding": _holding_truth(kept),
        "tagged_inflow_btc": format_btc(btc(to_exchange)),
        "cashout_btc": format_btc(btc(wallet_total - to_exchange)),
        "exchange": exchange,
        "old_cluster_address": old,
        "linkage_giant_component": spec.campaigns,
        "breach_rate": 1.0,
    }
    logger.info("generated %d emails, %d transactions, %d planned payments", len(records), len(ledger.transactions), len(plan))
    transactions = sorted(ledger.transactions, key=lambda tx: (tx.timestamp, tx.tx_id))
    return Fixture(spec, seed, records, transactions, prices, rates, tags, breach_words, config, ground_truth)


def _holding_truth(kept: Sequence[_Payment], bin_hours: int = 10) -> Dict[str, Any]:
    spent = [p for p in kept if p.spent_at is not None]
    hours = [(p.spent_at - p.at).total_seconds() / 3600 for p in spent]
    bins: Dict[int, int] = {}
    for payment, h in zip(spent, hours):
        bins[int(h // bin_hours)] = bins.get(int(h // bin_hours), 0) + payment.value_sat
    return {
        "spent": len(spent),
        "unspent": len(kept) - len(spent),
        "mean_days": statistics.mean(hours) / 24,
        "median_days": statistics.median(hours) / 24,
        "histogram": [[i * bin_hours, format_btc(btc(bins.get(i, 0)))] for i in range(max(bins) + 1)],
    }


def write_fixture(out_dir: PathLike, spec: Optional[FixtureSpec] = None, seed: int = 0) -> Dict[str, Path]:
    return generate_fixture(spec, seed).write(out_dir)

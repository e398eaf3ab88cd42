"""Spam corpus parsing, email bucketing and datapoint extraction."""
import csv
import datetime
import json
import logging
import random
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from email.utils import parsedate_to_datetime
from functools import cached_property
from pathlib import Path
from typing import (
    Dict,
    FrozenSet,
    Iterable,
    Iterator,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
from networkx.utils import UnionFind

from sextortion_forensics.base58 import B58_ALPHABET, is_valid_address
from sextortion_forensics.exceptions import (
    ConfigError,
    DuplicateEmail,
    MissingRate,
    SchemaError,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEFAULT_SUFFIX_LENGTH = 50
DEFAULT_MERGE_THRESHOLD = 0.3
SUPPORTED_CURRENCIES = ("USD", "EUR", "GBP", "NOK")
DEFAULT_SECRET_LABELS = (
    "password",
    "passwort",
    "pass",
    "heslo",
    "hasło",
    "mot de passe",
    "contraseña",
    "phone",
    "telefon",
    "tel",
)

_B58 = re.escape(B58_ALPHABET)
ADDRESS_PATTERN = re.compile(rf"(?<![{_B58}])[13][{_B58}]{{25,34}}(?![{_B58}])")

_NUMBER = r"(?<![\d.,])(?:\d{1,3}(?:[,.\u00a0\u202f]\d{3})+(?:[.,]\d{1,2})?|\d+(?:[.,]\d{1,2})?)(?![\d])"
_SYMBOLS = {"$": "USD", "€": "EUR", "£": "GBP"}
_CODES = {
    "usd": "USD",
    "dollar": "USD",
    "dollars": "USD",
    "eur": "EUR",
    "euro": "EUR",
    "euros": "EUR",
    "gbp": "GBP",
    "pounds": "GBP",
    "nok": "NOK",
    "kr": "NOK",
}
_CODE_ALT = "|".join(sorted(_CODES, key=len, reverse=True))
_AMOUNT_PATTERNS = (
    re.compile(rf"(?P<unit>[$€£])\s?(?P<num>{_NUMBER})"),
    re.compile(rf"(?P<num>{_NUMBER})\s?(?P<unit>[$€£]|\b(?:{_CODE_ALT})\b)", re.IGNORECASE),
    re.compile(rf"\b(?P<unit>usd|eur|gbp|nok)\s?(?P<num>{_NUMBER})", re.IGNORECASE),
)
_GROUPED = re.compile(r"^\d{1,3}(?:[,.\u00a0\u202f]\d{3})+(?:[.,]\d{1,2})?$")


@dataclass(frozen=True)
class Email:
    id: str
    date: Optional[datetime.datetime]
    language: Optional[str]
    subject: str
    body: str
    masked_fields: Mapping[str, str] = field(default_factory=dict)
    date_raw: Optional[str] = None

    @property
    def date_valid(self) -> bool:
        return self.date is not None


@dataclass(frozen=True)
class TokenSuffix:
    tokens: Tuple[str, ...]
    l: int  # noqa: E741

    @classmethod
    def of(cls, tokens: Sequence[str], l: int) -> "TokenSuffix":  # noqa: E741
        return cls(tuple(tokens[-l:]), l)

    @cached_property
    def as_set(self) -> FrozenSet[str]:
        return frozenset(self.tokens)


@dataclass
class Bucket:
    id: int
    template_email_id: str
    member_ids: List[str]
    suffix: TokenSuffix
    member_suffixes: Dict[str, TokenSuffix] = field(default_factory=dict, repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.member_ids)


@dataclass(frozen=True)
class ExtractedDatapoints:
    email_id: str
    payment_addresses: Tuple[str, ...] = ()
    amount: Optional[Decimal] = None
    currency: Optional[str] = None
    amount_usd: Optional[Decimal] = None
    password_or_phone: Optional[str] = None
    language: Optional[str] = None
    date: Optional[datetime.datetime] = None
    flags: Tuple[str, ...] = ()


@dataclass(frozen=True)
class BucketLabel:
    label: str
    campaign: Optional[str]


@dataclass(frozen=True)
class BucketSummary:
    bucket_id: int
    campaign: str
    languages: Tuple[str, ...]
    emails: int
    range_usd: Optional[Tuple[Decimal, Decimal]]
    currencies: Tuple[str, ...]
    period: Optional[Tuple[datetime.date, datetime.date]]
    passwords: int
    unique_passwords: int
    jaccard_mean: float
    jaccard_var: float


def parse_date(value: Optional[str]) -> Optional[datetime.datetime]:
    """Parse an RFC 2822 `Date` header or an ISO-8601 timestamp into an aware UTC datetime."""
    if not value:
        return None
    parsed = None
    try:
        parsed = parsedate_to_datetime(value)
    except (TypeError, ValueError, IndexError):
        try:
            parsed = datetime.datetime.fromisoformat(value.strip().replace("Z", "+00:00"))
        except ValueError:
            return None
    if parsed is None:
        return None
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=datetime.timezone.utc)
    return parsed.astimezone(datetime.timezone.utc)


def _strip_punctuation(token: str) -> str:
    start, end = 0, len(token)
    while start < end and unicodedata.category(token[start]).startswith("P"):
        start += 1
    while end > start and unicodedata.category(token[end - 1]).startswith("P"):
        end -= 1
    return token[start:end]


def normalize_and_tokenize(text: str) -> List[str]:
    """Lowercase, split on Unicode whitespace and strip punctuation from token edges.

    Example:
        ```Python
        normalize_and_tokenize("Hello!  As you MAY have...")
        # ['hello', 'as', 'you', 'may', 'have']
        ```
    """
    tokens = []
    for raw in text.lower().split():
        token = _strip_punctuation(raw)
        if token:
            tokens.append(token)
    return tokens


def jaccard(a: FrozenSet[str], b: FrozenSet[str]) -> float:
    if not a and not b:
        return 1.0
    union = len(a | b)
    return len(a & b) / union


def read_corpus(path: PathLike) -> Iterator[Email]:
    """Stream emails from a JSON-lines corpus. Ids must be unique."""
    seen = set()
    with open(path, encoding="utf-8") as fp:
        for line_no, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", line=line_no, source=str(path)) from exc
            if not isinstance(record, dict) or "id" not in record or "body" not in record:
                raise SchemaError("email record needs 'id' and 'body'", line=line_no, source=str(path))
            email_id = str(record["id"])
            if email_id in seen:
                raise DuplicateEmail(f"{path}:{line_no}: duplicate email id {email_id!r}")
            seen.add(email_id)
            date_raw = record.get("date")
            date = parse_date(date_raw)
            if date is None:
                logger.warning("email %s has an unparseable date %r", email_id, date_raw)
            yield Email(
                id=email_id,
                date=date,
                language=record.get("language") or None,
                subject=record.get("subject") or "",
                body=record["body"] or "",
                masked_fields=record.get("masked_fields") or {},
                date_raw=date_raw,
            )


def bucket_emails(
    emails: Iterable[Email],
    l: int = DEFAULT_SUFFIX_LENGTH,  # noqa: E741
    t: float = DEFAULT_MERGE_THRESHOLD,
) -> List[Bucket]:
    """
    Group emails into buckets of syntactically similar messages.
    Args:
        emails: The corpus, in stream order. Step 1 depends on this order.
        l: Number of trailing words compared.
        t: Templates whose suffix sets have a Jaccard similarity strictly above `t` are merged.

    Returns:
        Buckets numbered by size, largest first.
    """
    if l < 1:
        raise ConfigError(f"l must be a positive integer, got {l}")
    if not 0 < t < 1:
        raise ConfigError(f"t must lie in (0, 1), got {t}")

    position: Dict[str, int] = {}
    by_suffix: Dict[Tuple[str, ...], int] = {}
    raw: List[Bucket] = []
    for email in emails:
        if email.id in position:
            raise DuplicateEmail(f"duplicate email id {email.id!r}")
        position[email.id] = len(position)
        suffix = TokenSuffix.of(normalize_and_tokenize(email.body), l)
        index = by_suffix.get(suffix.tokens)
        if index is None:
            index = by_suffix[suffix.tokens] = len(raw)
            raw.append(Bucket(id=index, template_email_id=email.id, member_ids=[], suffix=suffix))
        bucket = raw[index]
        bucket.member_ids.append(email.id)
        bucket.member_suffixes[email.id] = bucket.suffix
    logger.info("step 1: %d emails in %d exact-suffix buckets", len(position), len(raw))

    merged = UnionFind(range(len(raw)))
    sets = [bucket.suffix.as_set for bucket in raw]
    sizes = [len(s) for s in sets]
    for i in range(len(raw)):
        for j in range(i + 1, len(raw)):
            small, large = sorted((sizes[i], sizes[j]))
            # J(a, b) <= |small| / |large|
            if large and small / large <= t:
                continue
            if jaccard(sets[i], sets[j]) > t:
                merged.union(i, j)

    groups = [sorted(group) for group in merged.to_sets()]
    groups.sort(key=lambda group: (-sum(raw[i].size for i in group), group[0]))
    buckets = []
    for new_id, group in enumerate(groups):
        representative = raw[min(group, key=lambda i: (-raw[i].size, i))]
        member_suffixes: Dict[str, TokenSuffix] = {}
        for i in group:
            member_suffixes.update(raw[i].member_suffixes)
        members = sorted(member_suffixes, key=position.__getitem__)
        buckets.append(
            Bucket(
                id=new_id,
                template_email_id=representative.template_email_id,
                member_ids=members,
                suffix=representative.suffix,
                member_suffixes=member_suffixes,
            )
        )
    logger.info("step 2: merged into %d buckets (l=%d, t=%s)", len(buckets), l, t)
    return buckets


def bucket_quality(bucket: Bucket, sample_size: int = 1000, seed: int = 0) -> Tuple[float, float]:
    """Mean and variance of the pairwise Jaccard similarity of member suffixes.

    All pairs are used when the bucket has at most `sample_size` members, otherwise a seeded sample.
    """
    members = list(bucket.member_ids)
    if len(members) > sample_size:
        members = random.Random(seed).sample(members, sample_size)
    suffixes = {}
    counts: Counter = Counter()
    for member in members:
        suffix = bucket.member_suffixes.get(member, bucket.suffix)
        suffixes[suffix.tokens] = suffix.as_set
        counts[suffix.tokens] += 1
    keys = list(counts)
    values, weights = [], []
    for i, a in enumerate(keys):
        same = counts[a] * (counts[a] - 1) // 2
        if same:
            values.append(1.0)
            weights.append(same)
        for b in keys[i + 1 :]:
            values.append(jaccard(suffixes[a], suffixes[b]))
            weights.append(counts[a] * counts[b])
    if not weights:
        return 1.0, 0.0
    mean = float(np.average(values, weights=weights))
    var = float(np.average((np.asarray(values) - mean) ** 2, weights=weights))
    return mean, var


def size_distribution(buckets: Sequence[Bucket], top: int = 100) -> List[float]:
    """Cumulative share of all emails held by the `top` largest buckets."""
    total = sum(bucket.size for bucket in buckets)
    if not total:
        return []
    sizes = sorted((bucket.size for bucket in buckets), reverse=True)[:top]
    return [float(share) for share in np.cumsum(sizes) / total]


class FiatRates:
    """Daily fiat exchange rates, keyed by (UTC date, currency)."""

    def __init__(self, rates: Optional[Mapping[Tuple[datetime.date, str], Decimal]] = None):
        self._rates: Dict[Tuple[datetime.date, str], Decimal] = dict(rates or {})

    def __len__(self) -> int:
        return len(self._rates)

    @classmethod
    def read(cls, path: PathLike) -> "FiatRates":
        rates = {}
        with open(path, newline="", encoding="utf-8") as fp:
            for line_no, row in enumerate(csv.DictReader(fp), start=2):
                try:
                    day = datetime.date.fromisoformat(row["date"].strip())
                    currency = row["currency"].strip().upper()
                    rate = Decimal(row["usd_per_unit"].strip())
                except (KeyError, AttributeError, ValueError, InvalidOperation) as exc:
                    raise SchemaError(f"bad fiat rate row: {exc}", line=line_no, source=str(path)) from exc
                if rate <= 0:
                    raise SchemaError("usd_per_unit must be positive", line=line_no, source=str(path))
                rates[(day, currency)] = rate
        return cls(rates)

    def usd_per_unit(self, day: datetime.date, currency: str) -> Decimal:
        if currency == "USD":
            return Decimal(1)
        try:
            return self._rates[(day, currency)]
        except KeyError:
            raise MissingRate(f"no {currency}/USD rate for {day.isoformat()}") from None

    def to_usd(self, amount: Decimal, currency: str, day: datetime.date) -> Decimal:
        return amount * self.usd_per_unit(day, currency)


def parse_amount(number: str) -> Decimal:
    """Parse a number that may carry thousands separators ('1,000', '1.000,50', '7 000')."""
    if _GROUPED.match(number):
        decimals = ""
        tail = re.search(r"[.,](\d{1,2})$", number)
        if tail:
            decimals = "." + tail.group(1)
            number = number[: tail.start()]
        return Decimal(re.sub(r"\D", "", number) + decimals)
    return Decimal(number.replace(",", "."))


def find_amount(text: str) -> Optional[Tuple[Decimal, str]]:
    """The first fiat amount mentioned in `text` as (value, ISO currency)."""
    best = None
    for pattern in _AMOUNT_PATTERNS:
        for match in pattern.finditer(text):
            if best is None or match.start() < best.start():
                best = match
            break
    if best is None:
        return None
    unit = best.group("unit")
    currency = _SYMBOLS.get(unit) or _CODES[unit.lower()]
    return parse_amount(best.group("num")), currency


def find_addresses(text: str) -> List[str]:
    """Checksum-valid legacy addresses in order of first appearance."""
    found = []
    for match in ADDRESS_PATTERN.finditer(text):
        candidate = match.group(0)
        if candidate not in found and is_valid_address(candidate):
            found.append(candidate)
    return found


def find_secret(text: str, labels: Sequence[str] = DEFAULT_SECRET_LABELS) -> Optional[str]:
    """Value following the first labeled delimiter, e.g. `password: hunter2`."""
    if not labels:
        return None
    alternatives = "|".join(re.escape(label) for label in sorted(labels, key=len, reverse=True))
    match = re.search(rf"(?<!\w)(?:{alternatives})\s*[:=]\s*(\S+)", text, re.IGNORECASE)
    if not match:
        return None
    value = match.group(1).rstrip(".,;)")
    return value or None


def extract_datapoints(
    email: Email,
    rates: Optional[FiatRates] = None,
    secret_labels: Sequence[str] = DEFAULT_SECRET_LABELS,
) -> ExtractedDatapoints:
    """Pull payment addresses, the ransom amount (also in USD) and the alleged password or phone out of an email."""
    flags = []
    text = f"{email.subject}\n{email.body}"
    addresses = tuple(find_addresses(text))
    amount, currency, amount_usd = None, None, None
    found = find_amount(email.body)
    if found is not None:
        amount, currency = found
        if currency == "USD":
            amount_usd = amount
        elif email.date is None:
            flags.append("invalid_date")
        else:
            try:
                amount_usd = (rates or FiatRates()).to_usd(amount, currency, email.date.date())
            except MissingRate as exc:
                logger.warning("email %s: %s", email.id, exc)
                flags.append("missing_rate")
    if email.date is None and "invalid_date" not in flags:
        flags.append("invalid_date")
    return ExtractedDatapoints(
        email_id=email.id,
        payment_addresses=addresses,
        amount=amount,
        currency=currency,
        amount_usd=amount_usd,
        password_or_phone=find_secret(email.body, secret_labels),
        language=email.language,
        date=email.date,
        flags=tuple(flags),
    )


def write_buckets(buckets: Sequence[Bucket], jsonl_path: PathLike, membership_path: PathLike) -> None:
    with open(jsonl_path, "w", encoding="utf-8", newline="\n") as fp:
        for bucket in buckets:
            record = {
                "bucket_id": bucket.id,
                "template_email_id": bucket.template_email_id,
                "member_count": bucket.size,
                "suffix_tokens": list(bucket.suffix.tokens),
            }
            fp.write(json.dumps(record, ensure_ascii=False) + "\n")
    with open(membership_path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["email_id", "bucket_id"])
        for bucket in buckets:
            for member in bucket.member_ids:
                writer.writerow([member, bucket.id])


def write_bucket_quality(buckets: Sequence[Bucket], path: PathLike, sample_size: int = 1000, seed: int = 0) -> Dict[int, Tuple[float, float]]:
    """Jaccard mean and variance of every bucket, computed while the member suffixes are still known."""
    quality = {bucket.id: bucket_quality(bucket, sample_size=sample_size, seed=seed) for bucket in buckets}
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["bucket_id", "jaccard_mean", "jaccard_var"])
        for bucket_id, (mean, var) in quality.items():
            writer.writerow([bucket_id, repr(mean), repr(var)])
    return quality


def read_bucket_quality(path: PathLike) -> Dict[int, Tuple[float, float]]:
    with open(path, newline="", encoding="utf-8") as fp:
        return {int(row["bucket_id"]): (float(row["jaccard_mean"]), float(row["jaccard_var"])) for row in csv.DictReader(fp)}


def read_membership(path: PathLike) -> Dict[str, int]:
    with open(path, newline="", encoding="utf-8") as fp:
        return {row["email_id"]: int(row["bucket_id"]) for row in csv.DictReader(fp)}


def read_buckets(jsonl_path: PathLike, membership_path: PathLike) -> List[Bucket]:
    """Rebuild buckets from their exported form. Member suffixes default to the template suffix."""
    membership = read_membership(membership_path)
    members: Dict[int, List[str]] = {}
    for email_id, bucket_id in membership.items():
        members.setdefault(bucket_id, []).append(email_id)
    buckets = []
    with open(jsonl_path, encoding="utf-8") as fp:
        for line_no, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                suffix = TokenSuffix(tuple(record["suffix_tokens"]), max(len(record["suffix_tokens"]), 1))
                bucket = Bucket(
                    id=int(record["bucket_id"]),
                    template_email_id=record["template_email_id"],
                    member_ids=members.get(int(record["bucket_id"]), []),
                    suffix=suffix,
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"bad bucket record: {exc}", line=line_no, source=str(jsonl_path)) from exc
            bucket.member_suffixes = {member: suffix for member in bucket.member_ids}
            buckets.append(bucket)
    return buckets


def write_datapoints(points: Iterable[ExtractedDatapoints], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        for point in points:
            record = {
                "email_id": point.email_id,
                "payment_addresses": list(point.payment_addresses),
                "amount": None if point.amount is None else str(point.amount),
                "currency": point.currency,
                "amount_usd": None if point.amount_usd is None else str(point.amount_usd),
                "password_or_phone": point.password_or_phone,
                "language": point.language,
                "date": None if point.date is None else point.date.isoformat(),
                "flags": list(point.flags),
            }
            fp.write(json.dumps(record, ensure_ascii=False) + "\n")


def read_datapoints(path: PathLike) -> List[ExtractedDatapoints]:
    points = []
    with open(path, encoding="utf-8") as fp:
        for line_no, line in enumerate(fp, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                points.append(
                    ExtractedDatapoints(
                        email_id=record["email_id"],
                        payment_addresses=tuple(record.get("payment_addresses") or ()),
                        amount=None if record.get("amount") is None else Decimal(record["amount"]),
                        currency=record.get("currency"),
                        amount_usd=None if record.get("amount_usd") is None else Decimal(record["amount_usd"]),
                        password_or_phone=record.get("password_or_phone"),
                        language=record.get("language"),
                        date=parse_date(record.get("date")),
                        flags=tuple(record.get("flags") or ()),
                    )
                )
            except (KeyError, TypeError, ValueError, InvalidOperation) as exc:
                raise SchemaError(f"bad datapoint record: {exc}", line=line_no, source=str(path)) from exc
    return points


def read_labels(path: PathLike) -> Dict[int, BucketLabel]:
    """Human bucket annotations: CSV `bucket_id,label,campaign`, label in {sextortion, other}."""
    labels = {}
    with open(path, newline="", encoding="utf-8") as fp:
        for line_no, row in enumerate(csv.DictReader(fp), start=2):
            try:
                label = row["label"].strip().lower()
                bucket_id = int(row["bucket_id"])
            except (KeyError, AttributeError, ValueError) as exc:
                raise SchemaError(f"bad label row: {exc}", line=line_no, source=str(path)) from exc
            if label not in ("sextortion", "other"):
                raise SchemaError(f"unknown label {label!r}", line=line_no, source=str(path))
            labels[bucket_id] = BucketLabel(label=label, campaign=(row.get("campaign") or "").strip() or None)
    return labels


def campaign_name(bucket_id: int, labels: Optional[Mapping[int, BucketLabel]] = None) -> str:
    label = (labels or {}).get(bucket_id)
    if label is not None and label.campaign:
        return label.campaign
    return f"bucket-{bucket_id}"


def apply_labels(buckets: Sequence[Bucket], labels: Optional[Mapping[int, BucketLabel]]) -> Tuple[List[Bucket], Dict[int, str]]:
    """Drop buckets labeled `other` and name the campaign of every remaining bucket."""
    kept, campaigns = [], {}
    unlabeled = 0
    for bucket in buckets:
        label = (labels or {}).get(bucket.id)
        if label is None and labels:
            unlabeled += 1
        if label is not None and label.label == "other":
            continue
        kept.append(bucket)
        campaigns[bucket.id] = campaign_name(bucket.id, labels)
    if unlabeled:
        logger.warning("%d buckets have no label and are kept as sextortion", unlabeled)
    return kept, campaigns


def bucket_summary(
    buckets: Sequence[Bucket],
    datapoints: Mapping[str, ExtractedDatapoints],
    campaigns: Optional[Mapping[int, str]] = None,
    sample_size: int = 1000,
    seed: int = 0,
    quality: Optional[Mapping[int, Tuple[float, float]]] = None,
) -> List[BucketSummary]:
    """One table row per bucket. `quality` supplies precomputed Jaccard (mean, var) per bucket id."""
    rows = []
    for bucket in buckets:
        points = [datapoints[m] for m in bucket.member_ids if m in datapoints]
        languages = Counter(p.language for p in points if p.language)
        amounts = [p.amount_usd for p in points if p.amount_usd is not None]
        dates = [p.date.date() for p in points if p.date is not None]
        secrets = [p.password_or_phone for p in points if p.password_or_phone]
        if quality is not None and bucket.id in quality:
            mean, var = quality[bucket.id]
        else:
            mean, var = bucket_quality(bucket, sample_size=sample_size, seed=seed)
        rows.append(
            BucketSummary(
                bucket_id=bucket.id,
                campaign=(campaigns or {}).get(bucket.id, f"bucket-{bucket.id}"),
                languages=tuple(lang for lang, _ in sorted(languages.items(), key=lambda kv: (-kv[1], kv[0]))),
                emails=bucket.size,
                range_usd=(min(amounts), max(amounts)) if amounts else None,
                currencies=tuple(sorted({p.currency for p in points if p.currency})),
                period=(min(dates), max(dates)) if dates else None,
                passwords=len(secrets),
                unique_passwords=len(set(secrets)),
                jaccard_mean=mean,
                jaccard_var=var,
            )
        )
    return rows


def write_bucket_table(rows: Sequence[BucketSummary], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(
            ["bucket", "campaign", "language", "emails", "range_usd", "currency", "time_period", "passwords", "unique_passwords", "jaccard_mean", "jaccard_var"]
        )
        for row in rows:
            writer.writerow(
                [
                    row.bucket_id,
                    row.campaign,
                    ",".join(row.languages),
                    row.emails,
                    "" if row.range_usd is None else f"{row.range_usd[0]:.2f}|{row.range_usd[1]:.2f}",
                    ",".join(row.currencies),
                    "" if row.period is None else f"{row.period[0].isoformat()}|{row.period[1].isoformat()}",
                    row.passwords,
                    row.unique_passwords,
                    f"{row.jaccard_mean:.2f}",
                    f"{row.jaccard_var:.2f}",
                ]
            )


def write_size_distribution(shares: Sequence[float], path: PathLike) -> None:
    """Cumulative share of emails held by the top-N buckets."""
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["top_n", "email_share"])
        for n, share in enumerate(shares, start=1):
            writer.writerow([n, f"{share:.6f}"])

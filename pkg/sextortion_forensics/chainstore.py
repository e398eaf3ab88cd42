"""Indexed ledger export: transactions by address and spent outputs by spending input."""
import csv
import datetime
import json
import logging
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import (
    Dict,
    Iterable,
    Iterator,
    List,
    Mapping,
    NamedTuple,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

from sqlalchemy import func, insert, select
from sqlalchemy.engine import URL
from sqlalchemy.orm import Session

from sextortion_forensics.database import Database
from sextortion_forensics.exceptions import (
    DoubleSpend,
    DuplicateTransaction,
    MissingPrice,
    SchemaError,
)
from sextortion_forensics.models import Base, InputRow, OutputRow, TxRow

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SATOSHI_PER_BTC = 100_000_000
_CHUNK = 500
_INSERT_BATCH = 5000


class OutputRef(NamedTuple):
    tx_id: str
    index: int

    def __str__(self) -> str:
        return f"{self.tx_id}:{self.index}"

    @classmethod
    def parse(cls, text: str) -> "OutputRef":
        tx_id, _, index = text.rpartition(":")
        return cls(tx_id, int(index))


@dataclass(frozen=True)
class TxInput:
    address: Optional[str]
    value_sat: int
    spends: Optional[OutputRef] = None


@dataclass(frozen=True)
class TxOutput:
    index: int
    address: Optional[str]
    value_sat: int


@dataclass(frozen=True)
class Transaction:
    tx_id: str
    timestamp: datetime.datetime
    inputs: Tuple[TxInput, ...] = ()
    outputs: Tuple[TxOutput, ...] = ()
    coinbase: bool = False

    @property
    def input_addresses(self) -> Set[str]:
        return {i.address for i in self.inputs if i.address}

    @property
    def output_addresses(self) -> Set[str]:
        return {o.address for o in self.outputs if o.address}

    @property
    def input_value(self) -> int:
        return sum(i.value_sat for i in self.inputs)

    @property
    def output_value(self) -> int:
        return sum(o.value_sat for o in self.outputs)

    def ref(self, index: int) -> OutputRef:
        return OutputRef(self.tx_id, index)


def btc(satoshis: Union[int, float, Decimal]) -> Decimal:
    return Decimal(satoshis) / SATOSHI_PER_BTC


def utc(value: datetime.datetime) -> datetime.datetime:
    if value.tzinfo is None:
        return value.replace(tzinfo=datetime.timezone.utc)
    return value.astimezone(datetime.timezone.utc)


def parse_timestamp(value: Union[str, int, float]) -> datetime.datetime:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return datetime.datetime.fromtimestamp(value, tz=datetime.timezone.utc)
    return utc(datetime.datetime.fromisoformat(str(value).strip().replace("Z", "+00:00")))


class PriceSeries:
    """Daily closing BTC price in USD, keyed by UTC date."""

    def __init__(self, prices: Optional[Mapping[datetime.date, Decimal]] = None):
        self._prices: Dict[datetime.date, Decimal] = {}
        for day, price in (prices or {}).items():
            price = Decimal(price)
            if price <= 0:
                raise ValueError(f"price for {day} must be positive")
            self._prices[day] = price

    def __len__(self) -> int:
        return len(self._prices)

    def __contains__(self, day: datetime.date) -> bool:
        return day in self._prices

    @classmethod
    def read(cls, path: PathLike) -> "PriceSeries":
        prices = {}
        with open(path, newline="", encoding="utf-8") as fp:
            for line_no, row in enumerate(csv.DictReader(fp), start=2):
                try:
                    day = datetime.date.fromisoformat(row["date"].strip())
                    price = Decimal(row["usd_per_btc"].strip())
                except (KeyError, AttributeError, ValueError, InvalidOperation) as exc:
                    raise SchemaError(f"bad price row: {exc}", line=line_no, source=str(path)) from exc
                if price <= 0:
                    raise SchemaError("usd_per_btc must be positive", line=line_no, source=str(path))
                if day in prices:
                    raise SchemaError(f"duplicate price date {day}", line=line_no, source=str(path))
                prices[day] = price
        return cls(prices)

    def usd_per_btc(self, day: datetime.date) -> Decimal:
        try:
            return self._prices[day]
        except KeyError:
            raise MissingPrice(f"no BTC price for {day.isoformat()}") from None


def value_usd(satoshis: int, at: datetime.datetime, prices: PriceSeries) -> Decimal:
    """Value `satoshis` at the daily close of the UTC date of `at`."""
    return btc(satoshis) * prices.usd_per_btc(utc(at).date())


def parse_transaction(record: dict) -> Transaction:
    """Build a Transaction from one ledger record; raises KeyError/TypeError/ValueError on malformed input."""
    inputs = []
    for item in record.get("inputs") or ():
        spends = item.get("spends")
        inputs.append(
            TxInput(
                address=item.get("address"),
                value_sat=int(item["value_sat"]),
                spends=OutputRef(str(spends["tx_id"]), int(spends["index"])) if spends else None,
            )
        )
    outputs = [
        TxOutput(index=int(item["index"]), address=item.get("address"), value_sat=int(item["value_sat"]))
        for item in record.get("outputs") or ()
    ]
    outputs.sort(key=lambda o: o.index)
    return Transaction(
        tx_id=str(record["tx_id"]),
        timestamp=parse_timestamp(record["timestamp"]),
        inputs=tuple(inputs),
        outputs=tuple(outputs),
        coinbase=bool(record.get("coinbase", not inputs)),
    )


def transaction_record(tx: Transaction) -> dict:
    record = {
        "tx_id": tx.tx_id,
        "timestamp": tx.timestamp.isoformat(),
        "inputs": [
            {
                "address": i.address,
                "value_sat": i.value_sat,
                "spends": None if i.spends is None else {"tx_id": i.spends.tx_id, "index": i.spends.index},
            }
            for i in tx.inputs
        ],
        "outputs": [{"index": o.index, "address": o.address, "value_sat": o.value_sat} for o in tx.outputs],
    }
    if tx.coinbase:
        record["coinbase"] = True
    return record


def validate_transaction(tx: Transaction, check_fees: bool = False) -> None:
    """Raise ValueError when `tx` breaks the ledger invariants."""
    if [o.index for o in tx.outputs] != list(range(len(tx.outputs))):
        raise ValueError(f"output indices of {tx.tx_id} are not contiguous from 0")
    if any(i.value_sat < 0 for i in tx.inputs) or any(o.value_sat < 0 for o in tx.outputs):
        raise ValueError(f"negative value in {tx.tx_id}")
    if not tx.coinbase and any(i.spends is None for i in tx.inputs):
        raise ValueError(f"input of non-coinbase {tx.tx_id} does not reference an output")
    if check_fees and not tx.coinbase and tx.input_value < tx.output_value:
        raise ValueError(f"{tx.tx_id} spends more than its inputs")


class ChainStore:
    """
    Ledger store on top of SQLAlchemy. Ingestion is single-writer and transactional;
    once ingestion is finished the store is only read.

    Example:
        ```Python
        store = ChainStore.create()  # in-memory sqlite
        store.ingest("ledger.jsonl")
        store.incoming("1A1zP1eP5QGefi2DMPTfTL5SLmv7DivfNa")
        ```
    """

    def __init__(self, db: Database):
        self.db = db
        Base.metadata.create_all(self.db.engine)

    @classmethod
    def create(cls, url: Union[str, URL, None] = None, **kwargs) -> "ChainStore":
        return cls(Database.create(url, **kwargs))

    def close(self) -> None:
        self.db.close()

    def __len__(self) -> int:
        return self.db.session.scalar(select(func.count()).select_from(TxRow)) or 0

    def ingest(
        self,
        path: PathLike,
        cutoff: Optional[datetime.datetime] = None,
        check_fees: bool = False,
    ) -> int:
        """Ingest a JSON-lines ledger export. Nothing is stored when the file is rejected."""

        def records() -> Iterator[Tuple[int, Transaction]]:
            with open(path, encoding="utf-8") as fp:
                for line_no, line in enumerate(fp, start=1):
                    if not line.strip():
                        continue
                    try:
                        yield line_no, parse_transaction(json.loads(line))
                    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                        raise SchemaError(f"bad ledger record: {exc}", line=line_no, source=str(path)) from exc

        return self._ingest(records(), str(path), cutoff=cutoff, check_fees=check_fees)

    def add_transactions(
        self,
        transactions: Iterable[Transaction],
        cutoff: Optional[datetime.datetime] = None,
        check_fees: bool = False,
    ) -> int:
        return self._ingest(enumerate(transactions, start=1), "<transactions>", cutoff=cutoff, check_fees=check_fees)

    def _ingest(
        self,
        numbered: Iterable[Tuple[int, Transaction]],
        source: str,
        cutoff: Optional[datetime.datetime],
        check_fees: bool,
    ) -> int:
        cutoff = utc(cutoff) if cutoff is not None else None
        with self.db.transaction() as session:
            position = session.scalar(select(func.count()).select_from(TxRow)) or 0
            has_rows = position > 0
            known_outputs: Dict[OutputRef, Tuple[Optional[str], int]] = {}
            spent: Dict[OutputRef, str] = {}
            seen: Set[str] = set()
            pending: List[Tuple[int, Transaction]] = []
            skipped = 0
            for line_no, tx in numbered:
                if cutoff is not None and tx.timestamp > cutoff:
                    skipped += 1
                    continue
                try:
                    validate_transaction(tx, check_fees=check_fees)
                except ValueError as exc:
                    raise SchemaError(str(exc), line=line_no, source=source) from exc
                if tx.tx_id in seen or (has_rows and session.get(TxRow, tx.tx_id) is not None):
                    raise DuplicateTransaction(f"{source}:{line_no}: duplicate transaction {tx.tx_id}")
                seen.add(tx.tx_id)
                for txin in tx.inputs:
                    if txin.spends is None:
                        continue
                    if txin.spends in spent or (has_rows and self._spender_id(session, txin.spends) is not None):
                        raise DoubleSpend(f"{source}:{line_no}: output {txin.spends} spent twice (by {tx.tx_id})")
                    spent[txin.spends] = tx.tx_id
                for out in tx.outputs:
                    known_outputs[tx.ref(out.index)] = (out.address, out.value_sat)
                pending.append((line_no, tx))

            for line_no, tx in pending:
                for txin in tx.inputs:
                    if txin.spends is None:
                        continue
                    target = known_outputs.get(txin.spends)
                    if target is None and has_rows:
                        row = session.get(OutputRow, (txin.spends.tx_id, txin.spends.index))
                        target = None if row is None else (row.address, row.value_sat)
                    if target is None:
                        raise SchemaError(f"input spends unknown output {txin.spends}", line=line_no, source=source)
                    if target != (txin.address, txin.value_sat):
                        raise SchemaError(
                            f"input spending {txin.spends} disagrees with the output it spends",
                            line=line_no,
                            source=source,
                        )

            tx_rows, input_rows, output_rows = [], [], []
            for offset, (_, tx) in enumerate(pending):
                tx_rows.append(
                    {
                        "tx_id": tx.tx_id,
                        "position": position + offset,
                        "timestamp": tx.timestamp.replace(tzinfo=None),
                        "coinbase": tx.coinbase,
                    }
                )
                for i, txin in enumerate(tx.inputs):
                    input_rows.append(
                        {
                            "tx_id": tx.tx_id,
                            "position": i,
                            "address": txin.address,
                            "value_sat": txin.value_sat,
                            "spent_tx_id": txin.spends.tx_id if txin.spends else None,
                            "spent_index": txin.spends.index if txin.spends else None,
                        }
                    )
                for out in tx.outputs:
                    output_rows.append(
                        {"tx_id": tx.tx_id, "output_index": out.index, "address": out.address, "value_sat": out.value_sat}
                    )
            for model, rows in ((TxRow, tx_rows), (OutputRow, output_rows), (InputRow, input_rows)):
                for start in range(0, len(rows), _INSERT_BATCH):
                    session.execute(insert(model), rows[start : start + _INSERT_BATCH])
        logger.info("ingested %d transactions from %s (%d after cutoff skipped)", len(pending), source, skipped)
        return len(pending)

    @staticmethod
    def _spender_id(session: Session, ref: OutputRef) -> Optional[str]:
        return session.scalar(select(InputRow.tx_id).where(InputRow.spent_tx_id == ref.tx_id, InputRow.spent_index == ref.index))

    @staticmethod
    def _load(session: Session, tx_ids: Sequence[str]) -> List[Transaction]:
        """Materialize transactions, in the order of `tx_ids`."""
        loaded: Dict[str, Transaction] = {}
        unique_ids = list(dict.fromkeys(tx_ids))
        for start in range(0, len(unique_ids), _CHUNK):
            chunk = unique_ids[start : start + _CHUNK]
            inputs: Dict[str, List[TxInput]] = {}
            for row in session.scalars(
                select(InputRow).where(InputRow.tx_id.in_(chunk)).order_by(InputRow.tx_id, InputRow.position)
            ):
                spends = None if row.spent_tx_id is None else OutputRef(row.spent_tx_id, row.spent_index)
                inputs.setdefault(row.tx_id, []).append(TxInput(row.address, row.value_sat, spends))
            outputs: Dict[str, List[TxOutput]] = {}
            for row in session.scalars(
                select(OutputRow).where(OutputRow.tx_id.in_(chunk)).order_by(OutputRow.tx_id, OutputRow.output_index)
            ):
                outputs.setdefault(row.tx_id, []).append(TxOutput(row.output_index, row.address, row.value_sat))
            for row in session.scalars(select(TxRow).where(TxRow.tx_id.in_(chunk))):
                loaded[row.tx_id] = Transaction(
                    tx_id=row.tx_id,
                    timestamp=utc(row.timestamp),
                    inputs=tuple(inputs.get(row.tx_id, ())),
                    outputs=tuple(outputs.get(row.tx_id, ())),
                    coinbase=row.coinbase,
                )
        return [loaded[tx_id] for tx_id in unique_ids if tx_id in loaded]

    def transaction(self, tx_id: str) -> Optional[Transaction]:
        found = self._load(self.db.session, [tx_id])
        return found[0] if found else None

    def transactions(self) -> Iterator[Transaction]:
        """All transactions in ingestion order."""
        session = self.db.session
        tx_ids = list(session.scalars(select(TxRow.tx_id).order_by(TxRow.position)))
        for start in range(0, len(tx_ids), _CHUNK):
            yield from self._load(session, tx_ids[start : start + _CHUNK])

    def addresses(self) -> Set[str]:
        session = self.db.session
        found = set(session.scalars(select(OutputRow.address).where(OutputRow.address.is_not(None)).distinct()))
        found.update(session.scalars(select(InputRow.address).where(InputRow.address.is_not(None)).distinct()))
        return found

    def _ordered(self, session: Session, tx_ids: Iterable[str]) -> List[Transaction]:
        ids = set(tx_ids)
        if not ids:
            return []
        ordered = []
        id_list = sorted(ids)
        for start in range(0, len(id_list), _CHUNK):
            chunk = id_list[start : start + _CHUNK]
            ordered.extend(session.execute(select(TxRow.position, TxRow.tx_id).where(TxRow.tx_id.in_(chunk))).all())
        return self._load(session, [tx_id for _, tx_id in sorted(ordered)])

    def incoming(self, address: str) -> List[Tuple[Transaction, TxOutput]]:
        """Every output paying `address`, with its transaction, in ingestion order."""
        session = self.db.session
        tx_ids = session.scalars(select(OutputRow.tx_id).where(OutputRow.address == address))
        return [(tx, out) for tx in self._ordered(session, tx_ids) for out in tx.outputs if out.address == address]

    def outgoing(self, address: str) -> List[Transaction]:
        """Transactions spending from `address`, in ingestion order."""
        session = self.db.session
        return self._ordered(session, session.scalars(select(InputRow.tx_id).where(InputRow.address == address)))

    def transactions_of(self, address: str) -> List[Transaction]:
        session = self.db.session
        tx_ids = set(session.scalars(select(OutputRow.tx_id).where(OutputRow.address == address)))
        tx_ids.update(session.scalars(select(InputRow.tx_id).where(InputRow.address == address)))
        return self._ordered(session, tx_ids)

    def output(self, ref: OutputRef) -> Optional[TxOutput]:
        row = self.db.session.get(OutputRow, (ref.tx_id, ref.index))
        return None if row is None else TxOutput(row.output_index, row.address, row.value_sat)

    def spender(self, ref: OutputRef) -> Optional[Transaction]:
        """The transaction spending `ref`, None while it is unspent."""
        return self._find_spender(self.db.session, ref)

    async def async_spender(self, ref: OutputRef) -> Optional[Transaction]:
        return await self.db.async_read(self._find_spender, ref)

    async def async_incoming(self, address: str) -> List[Tuple[Transaction, TxOutput]]:
        def lookup(session: Session) -> List[Tuple[Transaction, TxOutput]]:
            tx_ids = session.scalars(select(OutputRow.tx_id).where(OutputRow.address == address))
            return [(tx, out) for tx in self._ordered(session, tx_ids) for out in tx.outputs if out.address == address]

        return await self.db.async_read(lookup)

    def _find_spender(self, session: Session, ref: OutputRef) -> Optional[Transaction]:
        tx_id = self._spender_id(session, ref)
        if tx_id is None:
            return None
        return self._load(session, [tx_id])[0]

    def export(self, path: PathLike) -> int:
        count = 0
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            for tx in self.transactions():
                fp.write(json.dumps(transaction_record(tx)) + "\n")
                count += 1
        return count


def ingest_ledger(
    path: PathLike,
    url: Union[str, URL, None] = None,
    cutoff: Optional[datetime.datetime] = None,
    check_fees: bool = False,
) -> ChainStore:
    """Create a store (in-memory sqlite unless `url` is given) and ingest `path` into it."""
    store = ChainStore.create(url)
    store.ingest(path, cutoff=cutoff, check_fees=check_fees)
    return store


class MemoryLedger:
    """Read-only view over a transaction list with the lookups of ChainStore, without a database."""

    def __init__(self, transactions: Iterable[Transaction]):
        self._txs: List[Transaction] = list(transactions)
        self._by_id: Dict[str, Transaction] = {tx.tx_id: tx for tx in self._txs}
        self._incoming: Dict[str, List[Tuple[Transaction, TxOutput]]] = {}
        self._outgoing: Dict[str, List[Transaction]] = {}
        self._spenders: Dict[OutputRef, Transaction] = {}
        for tx in self._txs:
            for out in tx.outputs:
                if out.address:
                    self._incoming.setdefault(out.address, []).append((tx, out))
            for address in sorted(tx.input_addresses):
                self._outgoing.setdefault(address, []).append(tx)
            for txin in tx.inputs:
                if txin.spends is not None:
                    if txin.spends in self._spenders:
                        raise DoubleSpend(f"output {txin.spends} spent twice (by {tx.tx_id})")
                    self._spenders[txin.spends] = tx

    def __len__(self) -> int:
        return len(self._txs)

    def transaction(self, tx_id: str) -> Optional[Transaction]:
        return self._by_id.get(tx_id)

    def transactions(self) -> Iterator[Transaction]:
        return iter(self._txs)

    def addresses(self) -> Set[str]:
        return set(self._incoming) | set(self._outgoing)

    def incoming(self, address: str) -> List[Tuple[Transaction, TxOutput]]:
        return list(self._incoming.get(address, ()))

    def outgoing(self, address: str) -> List[Transaction]:
        return list(self._outgoing.get(address, ()))

    def output(self, ref: OutputRef) -> Optional[TxOutput]:
        tx = self._by_id.get(ref.tx_id)
        if tx is None or not 0 <= ref.index < len(tx.outputs):
            return None
        return tx.outputs[ref.index]

    def spender(self, ref: OutputRef) -> Optional[Transaction]:
        return self._spenders.get(ref)


Ledger = Union[ChainStore, MemoryLedger]

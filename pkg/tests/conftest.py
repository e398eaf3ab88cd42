import datetime
import hashlib
from decimal import Decimal
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pytest

from sextortion_forensics.base58 import encode_address
from sextortion_forensics.chainstore import (
    MemoryLedger,
    OutputRef,
    PriceSeries,
    Transaction,
    TxInput,
    TxOutput,
)
from sextortion_forensics.fixture import Fixture, FixtureSpec, generate_fixture

T0 = datetime.datetime(2018, 10, 1, tzinfo=datetime.timezone.utc)
BTC = 100_000_000


def address(name: str) -> str:
    """A checksum-valid P2PKH address derived from `name`."""
    return encode_address(hashlib.sha256(name.encode()).digest()[:20])


def hours(n: float) -> datetime.timedelta:
    return datetime.timedelta(hours=n)


class Chain:
    """Hand-built ledgers: coinbase funding plus spends that resolve their inputs from earlier outputs."""

    def __init__(self, start: datetime.datetime = T0):
        self.start = start
        self.transactions: List[Transaction] = []
        self.outputs: Dict[OutputRef, Tuple[Optional[str], int]] = {}

    def _at(self, at: Optional[datetime.datetime]) -> datetime.datetime:
        return at if at is not None else self.start + datetime.timedelta(minutes=len(self.transactions))

    def fund(self, to: str, value_sat: int, at: Optional[datetime.datetime] = None) -> OutputRef:
        tx = Transaction(f"tx{len(self.transactions):05d}", self._at(at), (), (TxOutput(0, to, value_sat),), coinbase=True)
        self.transactions.append(tx)
        self.outputs[tx.ref(0)] = (to, value_sat)
        return tx.ref(0)

    def spend(
        self,
        refs: Sequence[OutputRef],
        outputs: Sequence[Tuple[Optional[str], int]],
        at: Optional[datetime.datetime] = None,
    ) -> Transaction:
        inputs = tuple(TxInput(self.outputs[ref][0], self.outputs[ref][1], ref) for ref in refs)
        tx = Transaction(
            f"tx{len(self.transactions):05d}",
            self._at(at),
            inputs,
            tuple(TxOutput(i, a, v) for i, (a, v) in enumerate(outputs)),
        )
        self.transactions.append(tx)
        for out in tx.outputs:
            self.outputs[tx.ref(out.index)] = (out.address, out.value_sat)
        return tx

    def ledger(self) -> MemoryLedger:
        return MemoryLedger(self.transactions)


def flat_prices(usd_per_btc: int = 10_000, first: datetime.date = datetime.date(2017, 1, 1), days: int = 1000) -> PriceSeries:
    return PriceSeries({first + datetime.timedelta(days=i): Decimal(usd_per_btc) for i in range(days)})


@pytest.fixture
def chain() -> Chain:
    return Chain()


@pytest.fixture
def prices() -> PriceSeries:
    return flat_prices()


@pytest.fixture(scope="session")
def fixture() -> Fixture:
    return generate_fixture(FixtureSpec(), seed=0)


@pytest.fixture
def fixture_dir(fixture: Fixture, tmp_path: Path) -> Path:
    fixture.write(tmp_path / "fixture")
    return tmp_path / "fixture"

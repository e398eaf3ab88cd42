import asyncio
import datetime
import json
import random
from decimal import Decimal
from pathlib import Path

import pytest

from sextortion_forensics.chainstore import (
    ChainStore,
    MemoryLedger,
    OutputRef,
    PriceSeries,
    Transaction,
    TxInput,
    TxOutput,
    ingest_ledger,
    parse_timestamp,
    transaction_record,
    value_usd,
)
from sextortion_forensics.exceptions import DoubleSpend, DuplicateTransaction, MissingPrice, SchemaError
from tests.conftest import BTC, T0, Chain, address, hours


def write_ledger(path: Path, transactions) -> Path:
    with open(path, "w", encoding="utf-8") as fp:
        for tx in transactions:
            fp.write(json.dumps(transaction_record(tx)) + "\n")
    return path


def random_chain(seed: int, size: int = 60) -> Chain:
    rng = random.Random(seed)
    chain = Chain()
    names = [address(f"r{seed}-{i}") for i in range(12)]
    unspent = [chain.fund(rng.choice(names), rng.randint(1, 5) * BTC) for _ in range(8)]
    for _ in range(size):
        rng.shuffle(unspent)
        take = unspent[: rng.randint(1, min(3, len(unspent)))]
        del unspent[: len(take)]
        total = sum(chain.outputs[ref][1] for ref in take)
        first = rng.randint(0, total)
        tx = chain.spend(take, [(rng.choice(names), first), (rng.choice(names), total - first)])
        unspent.extend(tx.ref(out.index) for out in tx.outputs)
    return chain


@pytest.fixture
def store():
    store = ChainStore.create()
    yield store
    store.close()


def test_empty_ledger(store: ChainStore, tmp_path: Path):
    path = tmp_path / "ledger.jsonl"
    path.write_text("")
    assert store.ingest(path) == 0
    assert len(store) == 0
    assert store.addresses() == set()
    assert store.incoming(address("nobody")) == []


def test_incoming_and_outgoing(store: ChainStore, chain: Chain):
    alice, bob, carol = address("alice"), address("bob"), address("carol")
    funding = chain.fund(alice, 3 * BTC)
    pay = chain.spend([funding], [(bob, 2 * BTC), (alice, BTC)])
    onward = chain.spend([pay.ref(0)], [(carol, 2 * BTC)])
    assert store.add_transactions(chain.transactions) == 3

    incoming = store.incoming(bob)
    assert [(tx.tx_id, out.index, out.value_sat) for tx, out in incoming] == [(pay.tx_id, 0, 2 * BTC)]
    assert [tx.tx_id for tx in store.outgoing(bob)] == [onward.tx_id]
    assert [tx.tx_id for tx in store.transactions_of(alice)] == [funding.tx_id, pay.tx_id]
    assert store.spender(pay.ref(0)).tx_id == onward.tx_id
    assert store.spender(pay.ref(1)) is None
    assert store.output(pay.ref(1)) == TxOutput(1, alice, BTC)
    assert store.output(OutputRef("missing", 0)) is None
    assert store.addresses() == {alice, bob, carol}
    assert store.transaction(pay.tx_id) == pay


@pytest.mark.parametrize("seed", range(5))
def test_index_matches_scan(seed: int):
    chain = random_chain(seed)
    store = ChainStore.create()
    store.add_transactions(chain.transactions)
    memory = MemoryLedger(chain.transactions)
    for addr in store.addresses():
        scanned_in = [(tx.tx_id, out.index) for tx in chain.transactions for out in tx.outputs if out.address == addr]
        scanned_out = [tx.tx_id for tx in chain.transactions if addr in tx.input_addresses]
        assert [(tx.tx_id, out.index) for tx, out in store.incoming(addr)] == scanned_in
        assert [tx.tx_id for tx in store.outgoing(addr)] == scanned_out
        assert [(tx.tx_id, out.index) for tx, out in memory.incoming(addr)] == scanned_in
        assert [tx.tx_id for tx in memory.outgoing(addr)] == scanned_out
    spenders = {txin.spends: tx.tx_id for tx in chain.transactions for txin in tx.inputs}
    for tx in chain.transactions:
        for out in tx.outputs:
            expected = spenders.get(tx.ref(out.index))
            found = store.spender(tx.ref(out.index))
            assert (found.tx_id if found else None) == expected
    store.close()


def test_export_round_trip(tmp_path: Path):
    chain = random_chain(9, size=20)
    source = write_ledger(tmp_path / "ledger.jsonl", chain.transactions)
    store = ingest_ledger(source)
    assert store.export(tmp_path / "exported.jsonl") == len(chain.transactions)
    assert (tmp_path / "exported.jsonl").read_text() == source.read_text()
    assert list(store.transactions()) == chain.transactions


def test_duplicate_transaction(store: ChainStore, chain: Chain):
    chain.fund(address("a"), BTC)
    with pytest.raises(DuplicateTransaction):
        store.add_transactions(chain.transactions * 2)
    assert len(store) == 0


def test_double_spend_rejects_the_whole_file(store: ChainStore, chain: Chain, tmp_path: Path):
    ref = chain.fund(address("a"), BTC)
    chain.spend([ref], [(address("b"), BTC)])
    chain.spend([ref], [(address("c"), BTC)])
    with pytest.raises(DoubleSpend):
        store.ingest(write_ledger(tmp_path / "ledger.jsonl", chain.transactions))
    assert len(store) == 0
    with pytest.raises(DoubleSpend):
        MemoryLedger(chain.transactions)


def test_double_spend_across_ingests(store: ChainStore, chain: Chain):
    ref = chain.fund(address("a"), BTC)
    chain.spend([ref], [(address("b"), BTC)])
    store.add_transactions(chain.transactions)
    again = Transaction("late", T0 + hours(1), (TxInput(address("a"), BTC, ref),), (TxOutput(0, address("c"), BTC),))
    with pytest.raises(DoubleSpend):
        store.add_transactions([again])
    assert len(store) == 2


def test_schema_error_reports_the_line(store: ChainStore, tmp_path: Path):
    path = tmp_path / "ledger.jsonl"
    good = transaction_record(Transaction("t0", T0, (), (TxOutput(0, address("a"), BTC),), coinbase=True))
    path.write_text(json.dumps(good) + "\n" + '{"tx_id": "t1"}\n')
    with pytest.raises(SchemaError) as exc_info:
        store.ingest(path)
    assert exc_info.value.line == 2
    assert len(store) == 0


def test_input_must_match_the_spent_output(store: ChainStore, chain: Chain):
    ref = chain.fund(address("a"), BTC)
    wrong = Transaction("t1", T0 + hours(1), (TxInput(address("a"), 2 * BTC, ref),), (TxOutput(0, address("b"), BTC),))
    with pytest.raises(SchemaError):
        store.add_transactions(chain.transactions + [wrong])


def test_fee_check(store: ChainStore, chain: Chain):
    ref = chain.fund(address("a"), BTC)
    chain.spend([ref], [(address("b"), 2 * BTC)])
    store.add_transactions(chain.transactions)
    with pytest.raises(SchemaError):
        ChainStore.create().add_transactions(chain.transactions, check_fees=True)


def test_cutoff_skips_later_transactions(store: ChainStore, chain: Chain):
    chain.fund(address("a"), BTC, at=T0)
    chain.fund(address("b"), BTC, at=T0 + datetime.timedelta(days=2))
    assert store.add_transactions(chain.transactions, cutoff=T0 + datetime.timedelta(days=1)) == 1
    assert store.addresses() == {address("a")}


def test_value_usd():
    prices = PriceSeries({datetime.date(2018, 10, 1): Decimal(4000)})
    assert value_usd(BTC, T0, prices) == Decimal(4000)
    assert value_usd(0, T0, prices) == 0
    assert value_usd(BTC // 2, T0 + hours(23), prices) == Decimal(2000)
    with pytest.raises(MissingPrice):
        value_usd(BTC, T0 + datetime.timedelta(days=1), prices)


def test_price_file(tmp_path: Path):
    path = tmp_path / "prices.csv"
    path.write_text("date,usd_per_btc\n2018-10-01,6600.12\n2018-10-02,6590\n")
    prices = PriceSeries.read(path)
    assert len(prices) == 2
    assert prices.usd_per_btc(datetime.date(2018, 10, 1)) == Decimal("6600.12")
    path.write_text("date,usd_per_btc\n2018-10-01,-1\n")
    with pytest.raises(SchemaError):
        PriceSeries.read(path)


def test_parse_timestamp():
    assert parse_timestamp("2018-10-01T00:00:00Z") == T0
    assert parse_timestamp(int(T0.timestamp())) == T0
    assert parse_timestamp("2018-10-01T02:00:00+02:00") == T0


async def test_async_lookups_on_a_file_store(tmp_path: Path, chain: Chain):
    payee = address("payee")
    refs = [chain.fund(payee, (i + 1) * BTC) for i in range(5)]
    spend = chain.spend(refs[:2], [(address("out"), 3 * BTC)])
    store = ChainStore.create(str(tmp_path / "ledger.db"))
    store.add_transactions(chain.transactions)
    spenders = await asyncio.gather(*(store.async_spender(ref) for ref in refs))
    assert [s.tx_id if s else None for s in spenders] == [spend.tx_id, spend.tx_id, None, None, None]
    incoming = await store.async_incoming(payee)
    assert incoming == store.incoming(payee)
    store.close()

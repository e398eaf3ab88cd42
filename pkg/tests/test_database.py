import threading
from concurrent.futures import ALL_COMPLETED, ThreadPoolExecutor, wait
from decimal import Decimal
from pathlib import Path

import pytest
from sqlalchemy import func, select
from sqlalchemy.orm import Session

from sextortion_forensics.database import Database
from sextortion_forensics.models import Base, TxRow
from sextortion_forensics.utils import engine_options, format_btc, format_usd, is_memory_url, ledger_url
from tests.conftest import T0


def row(tx_id: str, position: int) -> TxRow:
    return TxRow(tx_id=tx_id, position=position, timestamp=T0.replace(tzinfo=None))


@pytest.fixture
def db():
    db = Database.create()
    Base.metadata.create_all(db.engine)
    with db.transaction() as session:
        session.add_all([row(f"t{i}", i) for i in range(3)])
    yield db
    db.close()


def count(session: Session) -> int:
    return session.scalar(select(func.count()).select_from(TxRow))


def test_session_maker(db: Database):
    with db.session_maker() as session:
        assert session.get(TxRow, "t1").position == 1


def test_read(db: Database):
    assert db.read(count) == 3
    assert db.read(lambda session, tx_id: session.get(TxRow, tx_id).position, "t2") == 2


def test_transaction_rolls_back_on_error(db: Database):
    with pytest.raises(RuntimeError):
        with db.transaction() as session:
            session.add(row("t9", 9))
            session.flush()
            assert count(session) == 4
            raise RuntimeError("stop")
    assert count(db.session) == 3
    assert not db.in_transaction


lock = threading.Lock()


def write_in_transaction(db: Database, i: int = 1) -> int:
    outer_session = db.session
    assert not db.in_transaction
    with db.transaction() as session:
        assert db.in_transaction
        assert session is db.session
        assert session is not outer_session
        with db.transaction() as nested:
            assert nested is db.session
            assert nested is not session
            assert count(nested) >= 3
        assert session is db.session
        with lock:
            session.add(row(f"w{i}", 100 + i))
            session.commit()
    assert db.session is outer_session
    return i


def test_transaction_binds_the_context_session(db: Database):
    write_in_transaction(db)
    assert db.session.get(TxRow, "w1") is not None


def test_thread_pool(tmp_path: Path):
    db = Database.create(str(tmp_path / "ledger.db"))
    Base.metadata.create_all(db.engine)
    with db.transaction() as session:
        session.add_all([row(f"t{i}", i) for i in range(3)])
    task_count = 20
    pool = ThreadPoolExecutor(max_workers=8)
    tasks = [pool.submit(write_in_transaction, db, k) for k in range(task_count)]
    done, _ = wait(tasks, return_when=ALL_COMPLETED)
    assert {task.result() for task in done} == set(range(task_count))
    assert count(db.session) == task_count + 3
    db.close()


async def test_async_read(tmp_path: Path):
    db = Database.create(str(tmp_path / "ledger.db"))
    Base.metadata.create_all(db.engine)
    with db.transaction() as session:
        session.add(row("a", 0))
    assert await db.async_read(lambda session, tx_id: session.get(TxRow, tx_id).position, "a") == 0
    assert await db.async_read(count) == 1
    db.close()


def test_ledger_url(tmp_path: Path):
    assert is_memory_url(ledger_url())
    assert is_memory_url(ledger_url(":memory:"))
    file_url = ledger_url(tmp_path / "ledger.db")
    assert file_url.get_backend_name() == "sqlite"
    assert not is_memory_url(file_url)
    assert file_url.database == str((tmp_path / "ledger.db").resolve())
    assert ledger_url("postgresql://u:p@localhost/ledger").get_backend_name() == "postgresql"
    assert "poolclass" in engine_options(ledger_url())
    assert "poolclass" not in engine_options(file_url)


def test_formatting():
    assert format_usd(Decimal("180.005")) == "180.00"
    assert format_usd(Decimal("180.015")) == "180.02"
    assert format_usd(None) == ""
    assert format_btc(Decimal("0.1")) == "0.10000000"
    assert format_btc(Decimal(0)) == "0.00000000"

import asyncio
import logging
from contextvars import ContextVar, Token
from typing import Any, Callable, Mapping, Optional, TypeVar, Union

from sqlalchemy import create_engine
from sqlalchemy.engine import URL, Engine
from sqlalchemy.orm import Session, scoped_session, sessionmaker
from typing_extensions import Concatenate, ParamSpec

from sextortion_forensics.utils import engine_options, ledger_url

logger = logging.getLogger(__name__)

_P = ParamSpec("_P")
_T = TypeVar("_T")


class Database:
    """SQLAlchemy client behind the ledger store.

    Reads go through `session`, a session local to the current context. Writes run inside
    `transaction()`, which binds a fresh session to the context and commits or rolls it back as
    a whole. `async_read` runs a read in a worker thread with a session of its own.
    """

    def __init__(self, engine: Engine, **session_options):
        self.engine: Engine = engine
        session_options.setdefault("expire_on_commit", False)
        self.session_maker: Callable[..., Session] = sessionmaker(self.engine, class_=Session, **session_options)
        self._context: ContextVar[Optional[Session]] = ContextVar(f"ledger_session_{id(self)}", default=None)
        self.scoped_session: scoped_session = scoped_session(self.session_maker, scopefunc=self._context.get)

    @property
    def session(self) -> Session:
        return self.scoped_session()

    @property
    def in_transaction(self) -> bool:
        return self._context.get() is not None

    @classmethod
    def create(cls, url: Union[str, URL, None] = None, *, session_options: Optional[Mapping[str, Any]] = None, **kwargs) -> "Database":
        """
        Args:
            url: SQLAlchemy url or sqlite file path; in-memory sqlite when omitted.
            session_options: extra `sessionmaker` parameters.
            **kwargs: engine parameters, on top of `engine_options`.
        """
        url = ledger_url(url)
        engine = create_engine(url, **engine_options(url, **kwargs))
        logger.debug("ledger database at %s", url.render_as_string(hide_password=True))
        return cls(engine, **dict(session_options or {}))

    def transaction(self) -> "LedgerTransaction":
        return LedgerTransaction(self)

    def read(self, fn: Callable[Concatenate[Session, _P], _T], *args: _P.args, **kwargs: _P.kwargs) -> _T:
        return fn(self.session, *args, **kwargs)

    async def async_read(self, fn: Callable[Concatenate[Session, _P], _T], *args: _P.args, **kwargs: _P.kwargs) -> _T:
        """Run `fn(session, ...)` in a worker thread. Only for lookups once ingestion is finished."""
        return await asyncio.to_thread(self._read_in_new_session, fn, *args, **kwargs)

    def _read_in_new_session(self, fn: Callable[..., _T], *args, **kwargs) -> _T:
        with self.session_maker() as session:
            return fn(session, *args, **kwargs)

    def close(self) -> None:
        self.scoped_session.remove()
        self.engine.dispose()


class LedgerTransaction:
    """Context manager binding a fresh session to the current context until it exits."""

    def __init__(self, db: Database):
        self.db = db
        self._token: Optional[Token] = None

    def __enter__(self) -> Session:
        session = self.db.session_maker()
        self._token = self.db._context.set(session)
        self.db.scoped_session.registry.set(session)
        return session

    def __exit__(self, exc_type, exc_value, traceback):
        session = self.db.session
        try:
            if exc_type is None:
                session.commit()
            else:
                logger.debug("rolling back ledger transaction: %s", exc_value)
                session.rollback()
        finally:
            session.close()
            self.db.scoped_session.registry.clear()
            self.db._context.reset(self._token)

"""ORM tables of the ledger store."""
import sqlalchemy as sa
from sqlalchemy.orm import declarative_base

Base = declarative_base()


class TxRow(Base):
    __tablename__ = "ledger_tx"
    tx_id = sa.Column(sa.String(128), primary_key=True)
    position = sa.Column(sa.Integer, unique=True, index=True, nullable=False)
    timestamp = sa.Column(sa.DateTime, index=True, nullable=False)  # naive UTC
    coinbase = sa.Column(sa.Boolean, default=False, nullable=False)


class InputRow(Base):
    __tablename__ = "ledger_input"
    __table_args__ = (sa.UniqueConstraint("spent_tx_id", "spent_index", name="uq_input_spends"),)
    id = sa.Column(sa.Integer, primary_key=True, autoincrement=True)
    tx_id = sa.Column(sa.String(128), sa.ForeignKey("ledger_tx.tx_id"), index=True, nullable=False)
    position = sa.Column(sa.Integer, nullable=False)
    address = sa.Column(sa.String(128), index=True)
    value_sat = sa.Column(sa.BigInteger, nullable=False)
    spent_tx_id = sa.Column(sa.String(128))
    spent_index = sa.Column(sa.Integer)


class OutputRow(Base):
    __tablename__ = "ledger_output"
    tx_id = sa.Column(sa.String(128), sa.ForeignKey("ledger_tx.tx_id"), primary_key=True)
    output_index = sa.Column(sa.Integer, primary_key=True)
    address = sa.Column(sa.String(128), index=True)
    value_sat = sa.Column(sa.BigInteger, nullable=False)

"""Pipeline configuration: a pydantic model stored as an INI file with one section per stage."""
import configparser
import datetime
import logging
from decimal import Decimal
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from sextortion_forensics.corpus import DEFAULT_SECRET_LABELS
from sextortion_forensics.exceptions import ConfigError
from sextortion_forensics.filters import FILTER_COMBOS

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

SECTIONS: Dict[str, Tuple[str, ...]] = {
    "paths": ("corpus", "ledger", "prices", "rates", "tags", "labels", "breach_lists"),
    "bucket": ("l", "t", "quality_sample_size"),
    "extract": ("secret_labels",),
    "cluster": ("supercluster_limit", "exclude_coinjoin", "exclude_tagged", "coinjoin_min_k"),
    "filter": ("p", "per_campaign_range"),
    "trace": ("max_depth", "width_limit", "cutoff_date", "revenue_combo", "holding_bin_hours"),
    "stats": ("alpha", "resamples", "normality_sample_size", "breach_sample_fraction"),
    "run": ("seed", "out_dir", "ledger_db", "timestamped_out_dir"),
}


class PipelineConfig(BaseModel):
    """Inputs and parameters of every stage. Relative paths are resolved against the config file."""

    model_config = ConfigDict(extra="forbid", validate_assignment=True)

    corpus: Optional[Path] = Field(None, description="JSON-lines spam corpus")
    ledger: Optional[Path] = Field(None, description="JSON-lines ledger export")
    prices: Optional[Path] = Field(None, description="CSV date,usd_per_btc")
    rates: Optional[Path] = Field(None, description="CSV date,currency,usd_per_unit")
    tags: Optional[Path] = Field(None, description="CSV address,tag,source")
    labels: Optional[Path] = Field(None, description="CSV bucket_id,label,campaign")
    breach_lists: List[Path] = Field(default_factory=list, description="clear-text password wordlists")

    l: int = Field(50, ge=1, description="trailing words compared when bucketing")  # noqa: E741
    t: float = Field(0.3, gt=0, lt=1, description="Jaccard merge threshold")
    quality_sample_size: int = Field(1000, ge=1)

    secret_labels: List[str] = Field(default_factory=lambda: list(DEFAULT_SECRET_LABELS))

    supercluster_limit: int = Field(10_000, ge=1)
    exclude_coinjoin: bool = True
    exclude_tagged: bool = True
    coinjoin_min_k: int = Field(2, ge=2)

    p: Decimal = Field(Decimal("0.1"), ge=0, lt=1, description="range filter tolerance")
    per_campaign_range: bool = Field(False, description="experimental: one ransom set per campaign")

    max_depth: int = Field(2, ge=0)
    width_limit: int = Field(100, ge=1)
    cutoff_date: datetime.date = datetime.date(2018, 6, 1)
    revenue_combo: str = "1+2"
    holding_bin_hours: int = Field(10, ge=1)

    alpha: float = Field(0.05, gt=0, lt=1)
    resamples: int = Field(100, ge=1)
    normality_sample_size: int = Field(30, ge=2)
    breach_sample_fraction: float = Field(0.25, gt=0, le=1)

    seed: int = 0
    out_dir: Path = Path("out")
    ledger_db: Optional[str] = Field(None, description="SQLAlchemy url or sqlite file of the ledger store; in-memory when empty")
    timestamped_out_dir: bool = True

    @field_validator("revenue_combo")
    @classmethod
    def _known_combo(cls, value: str) -> str:
        if value not in FILTER_COMBOS:
            raise ValueError(f"must be one of {', '.join(FILTER_COMBOS)}")
        return value

    @field_validator("breach_lists", "secret_labels", mode="before")
    @classmethod
    def _split_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("corpus", "ledger", "prices", "rates", "tags", "labels", "ledger_db", mode="before")
    @classmethod
    def _empty_is_none(cls, value: Any) -> Any:
        if isinstance(value, str) and not value.strip():
            return None
        return value

    @classmethod
    def build(cls, **values: Any) -> "PipelineConfig":
        try:
            return cls(**values)
        except ValidationError as exc:
            raise ConfigError(_describe(exc)) from None

    def override(self, **values: Any) -> "PipelineConfig":
        """A copy with the given non-None values replaced and validated."""
        merged = self.model_dump()
        merged.update({k: v for k, v in values.items() if v is not None})
        return self.build(**merged)

    @classmethod
    def from_file(cls, path: PathLike) -> "PipelineConfig":
        path = Path(path)
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path, encoding="utf-8") as fp:
                parser.read_file(fp)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        values: Dict[str, Any] = {}
        for section in parser.sections():
            if section not in SECTIONS:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, value in parser.items(section):
                if key not in SECTIONS[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                values[key] = value
        config = cls.build(**values)
        return config.resolved(path.parent)

    def resolved(self, base: PathLike) -> "PipelineConfig":
        base = Path(base)

        def resolve(value: Optional[Path]) -> Optional[Path]:
            return None if value is None or value.is_absolute() else base / value

        return self.model_copy(
            update={
                **{name: resolve(getattr(self, name)) for name in SECTIONS["paths"] if name != "breach_lists"},
                "breach_lists": [resolve(p) for p in self.breach_lists],
                "out_dir": resolve(self.out_dir),
            }
        )

    def to_file(self, path: PathLike) -> None:
        parser = configparser.ConfigParser(interpolation=None)
        parser.read_dict(self.as_ini_dict())
        with open(path, "w", encoding="utf-8", newline="\n") as fp:
            parser.write(fp)

    def require(self, *names: str) -> None:
        """Raise ConfigError naming the first missing or unreadable input among `names`."""
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"missing input: [paths] {name} is not configured")
            for path in value if isinstance(value, list) else [value]:
                if not Path(path).is_file():
                    raise ConfigError(f"missing input: {name} file {path} does not exist")

    def as_ini_dict(self) -> Mapping[str, Mapping[str, str]]:
        return {section: {key: _ini_value(getattr(self, key)) for key in keys} for section, keys in SECTIONS.items()}


def _ini_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, (list, tuple)):
        return ", ".join(str(v) for v in value)
    if isinstance(value, datetime.date):
        return value.isoformat()
    return str(value)


def _describe(exc: ValidationError) -> str:
    return "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in exc.errors())

import datetime
from decimal import Decimal
from pathlib import Path

import pytest

from sextortion_forensics.config import PipelineConfig
from sextortion_forensics.exceptions import ConfigError


def test_defaults():
    config = PipelineConfig()
    assert (config.l, config.t, config.p) == (50, 0.3, Decimal("0.1"))
    assert (config.max_depth, config.width_limit, config.supercluster_limit) == (2, 100, 10_000)
    assert config.cutoff_date == datetime.date(2018, 6, 1)
    assert config.revenue_combo == "1+2"


def test_file_round_trip(tmp_path: Path):
    config = PipelineConfig.build(
        corpus=tmp_path / "corpus.jsonl",
        breach_lists=[tmp_path / "a.txt", tmp_path / "b.txt"],
        t=0.4,
        p=Decimal("0.15"),
        exclude_coinjoin=False,
        cutoff_date=datetime.date(2018, 1, 1),
        out_dir=tmp_path / "out",
    )
    config.to_file(tmp_path / "pipeline.ini")
    assert PipelineConfig.from_file(tmp_path / "pipeline.ini") == config


def test_relative_paths_follow_the_config_file(tmp_path: Path):
    (tmp_path / "pipeline.ini").write_text("[paths]\ncorpus = data/corpus.jsonl\nbreach_lists = x.txt, y.txt\n\n[run]\nout_dir = results\n")
    config = PipelineConfig.from_file(tmp_path / "pipeline.ini")
    assert config.corpus == tmp_path / "data" / "corpus.jsonl"
    assert config.breach_lists == [tmp_path / "x.txt", tmp_path / "y.txt"]
    assert config.out_dir == tmp_path / "results"
    assert config.ledger is None


@pytest.mark.parametrize(
    "text",
    [
        "[bucket]\nt = 1.5\n",
        "[bucket]\nl = 0\n",
        "[filter]\np = 1\n",
        "[trace]\nrevenue_combo = 2+3\n",
        "[unknown]\nx = 1\n",
        "[bucket]\nthreshold = 0.3\n",
        "not an ini file",
    ],
)
def test_invalid_files(tmp_path: Path, text: str):
    (tmp_path / "pipeline.ini").write_text(text)
    with pytest.raises(ConfigError):
        PipelineConfig.from_file(tmp_path / "pipeline.ini")


def test_missing_file(tmp_path: Path):
    with pytest.raises(ConfigError):
        PipelineConfig.from_file(tmp_path / "absent.ini")


def test_override():
    config = PipelineConfig().override(seed=7, t=None, max_depth=3)
    assert (config.seed, config.t, config.max_depth) == (7, 0.3, 3)
    with pytest.raises(ConfigError):
        config.override(width_limit=0)


def test_require(tmp_path: Path):
    config = PipelineConfig(corpus=tmp_path / "corpus.jsonl")
    with pytest.raises(ConfigError, match="ledger"):
        config.require("ledger")
    with pytest.raises(ConfigError, match="does not exist"):
        config.require("corpus")
    (tmp_path / "corpus.jsonl").write_text("")
    config.require("corpus")

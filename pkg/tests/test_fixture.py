import json
from pathlib import Path

import pytest
from pydantic import ValidationError

from sextortion_forensics.chainstore import MemoryLedger
from sextortion_forensics.config import PipelineConfig
from sextortion_forensics.fixture import CONFIG, GROUND_TRUTH, FixtureSpec, generate_fixture, price_on, write_fixture


def test_same_seed_writes_identical_files(tmp_path: Path):
    first = write_fixture(tmp_path / "a", seed=5)
    second = write_fixture(tmp_path / "b", seed=5)
    assert first.keys() == second.keys()
    for name in first:
        assert first[name].read_bytes() == second[name].read_bytes(), name


def test_seeds_differ(tmp_path: Path):
    first = write_fixture(tmp_path / "a", seed=1)
    second = write_fixture(tmp_path / "b", seed=2)
    assert first[GROUND_TRUTH].read_text() != second[GROUND_TRUTH].read_text()


@pytest.mark.parametrize(
    "values",
    [
        {"campaigns": 2},
        {"supercluster_size": 20, "supercluster_limit": 20},
        {"emails_per_campaign": 3, "addresses_per_campaign": 2},
        {"unknown": 1},
    ],
)
def test_invalid_spec(values):
    with pytest.raises(ValidationError):
        FixtureSpec(**values)


def test_ground_truth_is_consistent(fixture):
    truth = fixture.ground_truth
    assert truth["boundary_payment"] in truth["payments"]["1+2"]
    assert set(truth["payments"]["1+2+3"]) <= set(truth["payments"]["1+2"])
    assert truth["revenue"]["1+2"]["payments"] == len(truth["payments"]["1+2"])
    assert set(truth["funded_seeds"]) <= set(truth["seed_addresses"])
    assert set(truth["expanded"]) >= set(truth["funded_seeds"])
    assert truth["supercluster_seed"] in truth["expanded"]
    assert len(truth["expanded"]) <= len(truth["funded_seeds"]) + 1
    assert len(truth["buckets"]) == fixture.spec.campaigns
    assert all(len(ids) == fixture.spec.emails_per_campaign for ids in truth["buckets"].values())


def test_ledger_is_well_formed(fixture):
    ledger = MemoryLedger(fixture.transactions)
    assert len(list(ledger.transactions())) == len(ledger) == len(fixture.transactions)
    timestamps = [tx.timestamp for tx in fixture.transactions]
    assert timestamps == sorted(timestamps)
    for tx in fixture.transactions:
        assert tx.timestamp.date() in fixture.prices
        assert fixture.prices[tx.timestamp.date()] == price_on(tx.timestamp.date())


def test_written_config_points_at_the_written_files(tmp_path: Path, fixture):
    files = fixture.write(tmp_path)
    config = PipelineConfig.from_file(files[CONFIG])
    assert config.corpus == tmp_path / "corpus.jsonl"
    assert config.ledger == tmp_path / "ledger.jsonl"
    assert config.out_dir == tmp_path / "out"
    config.require("corpus", "ledger", "prices", "rates", "tags", "breach_lists")
    assert json.loads(files[GROUND_TRUTH].read_text()) == fixture.ground_truth

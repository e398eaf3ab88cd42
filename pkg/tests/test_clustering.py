import random
from decimal import Decimal
from pathlib import Path

import networkx as nx
import pytest

from sextortion_forensics.chainstore import MemoryLedger, Transaction, TxInput, TxOutput
from sextortion_forensics.clustering import (
    CoinJoinParams,
    SeedSet,
    Tag,
    cluster_statistics,
    detect_coinjoin,
    expand_seeds,
    multi_input_cluster,
    read_clusters,
    read_tags,
    seed_clusters,
    write_clusters,
)
from tests.conftest import BTC, T0, Chain, address


def shaped(inputs, outputs) -> Transaction:
    """A transaction with the given input addresses and output values, for the CoinJoin heuristic."""
    return Transaction(
        "shape",
        T0,
        tuple(TxInput(address(name), 1) for name in inputs),
        tuple(TxOutput(i, address(f"out{i}"), v) for i, v in enumerate(outputs)),
    )


@pytest.mark.parametrize(
    "inputs, outputs, expected",
    [
        (["a", "b", "c"], [1, 1, 1, 5, 2], True),
        (["a"], [3, 7], False),
        (["a", "b"], [5, 5, 1], False),
        (["a", "a2"], [1, 1, 1, 9, 9], False),
        (["a", "b", "c"], [1, 1, 1, 9], False),
        (["a", "b", "c", "d", "e"], [2, 2, 2, 2, 2, 7, 3, 4, 1], True),
    ],
)
def test_detect_coinjoin(inputs, outputs, expected):
    assert detect_coinjoin(shaped(inputs, outputs)) is expected


def test_coinjoin_params():
    tx = shaped(["a", "b"], [4, 4, 1, 9])
    assert detect_coinjoin(tx)
    assert not detect_coinjoin(tx, CoinJoinParams(min_equal_outputs=3))
    assert not detect_coinjoin(tx, CoinJoinParams(distinct_inputs_factor=2))
    assert detect_coinjoin(shaped(["a", "b"], [9, 9, 1]), CoinJoinParams(require_non_max_value=False))


def test_transitive_closure(chain: Chain):
    a, b, c = address("a"), address("b"), address("c")
    ra, rb1, rb2, rc = chain.fund(a, BTC), chain.fund(b, BTC), chain.fund(b, BTC), chain.fund(c, BTC)
    chain.spend([ra, rb1], [(address("x"), 2 * BTC)])
    chain.spend([rb2, rc], [(address("y"), 2 * BTC)])
    clusters = multi_input_cluster(chain.ledger())
    assert clusters.cluster_of(a).addresses == {a, b, c}
    assert clusters.cluster_id_of(a) == clusters.cluster_id_of(c)
    assert clusters.cluster_of(address("x")).addresses == {address("x")}
    # ids follow the smallest address of each cluster
    assert [min(cluster.addresses) for cluster in clusters] == sorted(min(cluster.addresses) for cluster in clusters)


def random_transactions(seed: int, size: int = 40):
    rng = random.Random(seed)
    chain = Chain()
    names = [address(f"p{seed}-{i}") for i in range(25)]
    unspent = [chain.fund(rng.choice(names), rng.randint(1, 9)) for _ in range(30)]
    for _ in range(size):
        if len(unspent) < 2:
            unspent.append(chain.fund(rng.choice(names), rng.randint(1, 9)))
        rng.shuffle(unspent)
        take = unspent[: rng.randint(1, min(4, len(unspent)))]
        del unspent[: len(take)]
        if rng.random() < 0.3:
            values = [1] * len(take) + [5]
        else:
            values = [rng.randint(1, 9) for _ in range(rng.randint(1, 3))]
        tx = chain.spend(take, [(rng.choice(names), v) for v in values])
        unspent.extend(tx.ref(out.index) for out in tx.outputs)
    return chain.transactions


def oracle_partition(transactions, exclude_coinjoin: bool):
    graph = nx.Graph()
    for tx in transactions:
        graph.add_nodes_from(tx.input_addresses | tx.output_addresses)
        if exclude_coinjoin and detect_coinjoin(tx):
            continue
        senders = sorted(tx.input_addresses)
        graph.add_edges_from(zip(senders, senders[1:]))
    return {frozenset(c) for c in nx.connected_components(graph)}


@pytest.mark.slow
@pytest.mark.parametrize("exclude_coinjoin", [True, False])
def test_clusters_match_connected_components(exclude_coinjoin: bool):
    for seed in range(200):
        transactions = random_transactions(seed)
        clusters = multi_input_cluster(MemoryLedger(transactions), exclude_coinjoin=exclude_coinjoin)
        assert clusters.partition() == oracle_partition(transactions, exclude_coinjoin)


def test_exclusion_refines_the_partition():
    for seed in range(20):
        transactions = random_transactions(seed)
        coarse = multi_input_cluster(transactions, exclude_coinjoin=False)
        fine = multi_input_cluster(transactions, exclude_coinjoin=True)
        for cluster in fine:
            assert len({coarse.cluster_id_of(a) for a in cluster.addresses}) == 1


def test_order_independent():
    transactions = random_transactions(3)
    shuffled = list(transactions)
    random.Random(0).shuffle(shuffled)
    first, second = multi_input_cluster(transactions), multi_input_cluster(shuffled)
    assert first.as_mapping() == second.as_mapping()


@pytest.fixture
def seeded(chain: Chain):
    s, x, y, u = address("seed"), address("x"), address("y"), address("unfunded")
    rs, rx1, rx2, ry = chain.fund(s, BTC), chain.fund(x, 2 * BTC), chain.fund(x, BTC), chain.fund(y, 3 * BTC)
    chain.spend([rs, rx1], [(address("z"), 3 * BTC)])
    chain.spend([rx2, ry], [(address("z"), 4 * BTC)])
    ledger = chain.ledger()
    return ledger, multi_input_cluster(ledger), SeedSet.from_store([s, u], ledger)


def test_seed_set(seeded):
    _, _, seeds = seeded
    assert seeds.addresses == {address("seed"), address("unfunded")}
    assert seeds.funded == {address("seed")}


def test_expand_seeds(seeded):
    ledger, clusters, seeds = seeded
    expansion = expand_seeds(seeds, clusters)
    assert expansion.addresses == {address("seed"), address("x"), address("y")}
    assert (expansion.unclustered_seeds, expansion.clustered_seeds) == (0, 1)
    assert expansion.clusters_touched == (clusters.cluster_id_of(address("seed")),)
    assert expansion.excluded_clusters == ()


def test_supercluster_keeps_only_the_seed(seeded):
    _, clusters, seeds = seeded
    expansion = expand_seeds(seeds, clusters, supercluster_limit=2)
    assert expansion.addresses == {address("seed")}
    assert expansion.excluded_clusters == (clusters.cluster_id_of(address("seed")),)
    assert expand_seeds(seeds, clusters, supercluster_limit=3).total == 3


def test_tagged_cluster_keeps_only_the_seed(seeded):
    ledger, clusters, seeds = seeded
    cluster_statistics(clusters, ledger, tags={address("y"): Tag("exchange", "test")})
    assert clusters.cluster_of(address("x")).tag == "exchange"
    assert expand_seeds(seeds, clusters).addresses == {address("seed")}
    assert expand_seeds(seeds, clusters, exclude_tagged=False).total == 3


def test_cluster_statistics(seeded, prices):
    ledger, clusters, seeds = seeded
    cluster_statistics(clusters, ledger, prices, seeds.addresses)
    main = clusters.cluster_of(address("seed"))
    assert main.amount_received_sat == 7 * BTC
    assert main.amount_received_usd == Decimal(70_000)
    assert main.first_tx == T0
    assert main.seed_addresses == {address("seed")}
    assert main.tag is None
    assert clusters.cluster_of(address("z")).amount_received_btc == Decimal(7)
    assert seed_clusters(clusters, seeds) == [main]


def test_fixture_expansion(fixture):
    truth = fixture.ground_truth
    ledger = MemoryLedger(fixture.transactions)
    clusters = cluster_statistics(multi_input_cluster(ledger), ledger, tags=fixture.tags)
    seeds = SeedSet.from_store(truth["seed_addresses"], ledger)
    assert seeds.funded == set(truth["funded_seeds"])
    expansion = expand_seeds(seeds, clusters, supercluster_limit=fixture.spec.supercluster_limit)
    assert expansion.addresses == set(truth["expanded"])
    assert clusters.cluster_id_of(truth["supercluster_seed"]) in expansion.excluded_clusters
    participants = truth["coinjoin_participants"]
    assert len({clusters.cluster_id_of(a) for a in participants}) == len(participants)
    joined = multi_input_cluster(ledger, exclude_coinjoin=False)
    assert len({joined.cluster_id_of(a) for a in participants}) == 1


def test_cluster_file_round_trip(tmp_path: Path):
    clusters = multi_input_cluster(random_transactions(5))
    write_clusters(clusters, tmp_path / "clusters.csv")
    assert read_clusters(tmp_path / "clusters.csv").as_mapping() == clusters.as_mapping()


def test_read_tags(tmp_path: Path):
    path = tmp_path / "tags.csv"
    path.write_text(f"address,tag,source\n{address('ex')},exchange-x,wallet explorer\n,,\n")
    assert read_tags(path) == {address("ex"): Tag("exchange-x", "wallet explorer")}

"""Multiple-input address clustering, CoinJoin exclusion and seed expansion."""
import csv
import datetime
import logging
from collections import Counter
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import (
    Dict,
    FrozenSet,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Set,
    Tuple,
    Union,
)

from networkx.utils import UnionFind

from sextortion_forensics.chainstore import (
    ChainStore,
    Ledger,
    MemoryLedger,
    PriceSeries,
    Transaction,
    btc,
    value_usd,
)
from sextortion_forensics.exceptions import MissingPrice, SchemaError
from sextortion_forensics.utils import format_usd

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEFAULT_SUPERCLUSTER_LIMIT = 10_000


@dataclass(frozen=True)
class CoinJoinParams:
    """Thresholds of the equal-output-value CoinJoin heuristic."""

    min_equal_outputs: int = 2
    distinct_inputs_factor: int = 1
    require_non_max_value: bool = True


@dataclass(frozen=True)
class Tag:
    tag: str
    source: str = ""


@dataclass
class AddressCluster:
    cluster_id: int
    addresses: FrozenSet[str]
    seed_addresses: FrozenSet[str] = frozenset()
    first_tx: Optional[datetime.datetime] = None
    amount_received_sat: int = 0
    amount_received_usd: Decimal = Decimal(0)
    tag: Optional[str] = None

    @property
    def amount_received_btc(self) -> Decimal:
        return btc(self.amount_received_sat)

    @property
    def size(self) -> int:
        return len(self.addresses)


@dataclass(frozen=True)
class SeedSet:
    addresses: FrozenSet[str]
    funded: FrozenSet[str]

    @classmethod
    def from_store(cls, addresses: Iterable[str], store: Ledger) -> "SeedSet":
        """Seeds are funded when at least one output in the ledger pays them."""
        seeds = frozenset(addresses)
        funded = frozenset(address for address in seeds if store.incoming(address))
        logger.info("%d seed addresses, %d funded", len(seeds), len(funded))
        return cls(seeds, funded)


@dataclass
class ClusterSet:
    clusters: List[AddressCluster]
    _by_address: Dict[str, int] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._by_address:
            self._by_address = {a: c.cluster_id for c in self.clusters for a in c.addresses}

    def __len__(self) -> int:
        return len(self.clusters)

    def __iter__(self):
        return iter(self.clusters)

    def __getitem__(self, cluster_id: int) -> AddressCluster:
        return self.clusters[cluster_id]

    def cluster_id_of(self, address: str) -> Optional[int]:
        return self._by_address.get(address)

    def cluster_of(self, address: str) -> Optional[AddressCluster]:
        cluster_id = self._by_address.get(address)
        return None if cluster_id is None else self.clusters[cluster_id]

    def as_mapping(self) -> Dict[str, int]:
        return dict(self._by_address)

    def partition(self) -> Set[FrozenSet[str]]:
        return {c.addresses for c in self.clusters}


@dataclass(frozen=True)
class SeedExpansion:
    addresses: FrozenSet[str]
    unclustered_seeds: int
    clustered_seeds: int
    clusters_touched: Tuple[int, ...]
    excluded_clusters: Tuple[int, ...]

    @property
    def total(self) -> int:
        return len(self.addresses)


def detect_coinjoin(tx: Transaction, params: CoinJoinParams = CoinJoinParams()) -> bool:
    """
    Equal-value CoinJoin heuristic. True iff the most frequent output value v occurs k >= 2 times,
    there are at least k distinct input addresses, at least 2k - 1 outputs, and v is not the largest output value.
    """
    if not tx.outputs or not tx.inputs:
        return False
    counts = Counter(o.value_sat for o in tx.outputs)
    # most frequent value; ties go to the smaller value
    value, k = min(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    if k < max(params.min_equal_outputs, 2):
        return False
    if len(tx.input_addresses) < k * params.distinct_inputs_factor:
        return False
    if len(tx.outputs) < 2 * k - 1:
        return False
    if params.require_non_max_value and value >= max(counts):
        return False
    return True


def multi_input_cluster(
    ledger: Union[Ledger, Iterable[Transaction]],
    exclude_coinjoin: bool = True,
    params: CoinJoinParams = CoinJoinParams(),
) -> ClusterSet:
    """
    Partition every address of the ledger by the multiple-input heuristic: all input addresses of one
    transaction belong to the same entity, closed transitively. CoinJoin-like transactions are skipped
    when `exclude_coinjoin` is set. Cluster ids follow the order of each cluster's smallest address.
    """
    transactions = ledger.transactions() if isinstance(ledger, (ChainStore, MemoryLedger)) else ledger
    forest = UnionFind()
    skipped = 0
    for tx in transactions:
        for out in tx.outputs:
            if out.address:
                forest[out.address]
        senders = sorted(tx.input_addresses)
        for address in senders:
            forest[address]
        if len(senders) < 2:
            continue
        if exclude_coinjoin and detect_coinjoin(tx, params):
            skipped += 1
            continue
        forest.union(*senders)
    groups = sorted((frozenset(group) for group in forest.to_sets()), key=min)
    clusters = [AddressCluster(cluster_id=i, addresses=group) for i, group in enumerate(groups)]
    logger.info("%d clusters over %d addresses (%d CoinJoin-like transactions excluded)", len(clusters), sum(len(g) for g in groups), skipped)
    return ClusterSet(clusters)


def read_tags(path: PathLike) -> Dict[str, Tag]:
    """Attribution tags: CSV `address,tag,source`."""
    tags = {}
    with open(path, newline="", encoding="utf-8") as fp:
        for line_no, row in enumerate(csv.DictReader(fp), start=2):
            try:
                address, tag = row["address"].strip(), row["tag"].strip()
            except (KeyError, AttributeError) as exc:
                raise SchemaError(f"bad tag row: {exc}", line=line_no, source=str(path)) from exc
            if address and tag:
                tags[address] = Tag(tag=tag, source=(row.get("source") or "").strip())
    return tags


def cluster_statistics(
    clusters: ClusterSet,
    store: Ledger,
    prices: Optional[PriceSeries] = None,
    seeds: Iterable[str] = (),
    tags: Optional[Mapping[str, Tag]] = None,
) -> ClusterSet:
    """Fill received amounts, first transaction, seed membership and tag of every cluster in place."""
    seeds = set(seeds)
    received_sat: Counter = Counter()
    received_usd: Dict[int, Decimal] = {}
    first: Dict[int, datetime.datetime] = {}
    missing_days = set()
    for tx in store.transactions():
        touched = {clusters.cluster_id_of(a) for a in tx.input_addresses | tx.output_addresses}
        for cluster_id in touched - {None}:
            if cluster_id not in first or tx.timestamp < first[cluster_id]:
                first[cluster_id] = tx.timestamp
        for out in tx.outputs:
            cluster = clusters.cluster_of(out.address) if out.address else None
            if cluster is None:
                continue
            received_sat[cluster.cluster_id] += out.value_sat
            if prices is None:
                continue
            try:
                usd = value_usd(out.value_sat, tx.timestamp, prices)
            except MissingPrice:
                missing_days.add(tx.timestamp.date())
                continue
            received_usd[cluster.cluster_id] = received_usd.get(cluster.cluster_id, Decimal(0)) + usd
    if missing_days:
        logger.warning("no BTC price for %d days; their outputs are left out of USD totals", len(missing_days))
    for cluster in clusters:
        cluster.first_tx = first.get(cluster.cluster_id)
        cluster.amount_received_sat = received_sat[cluster.cluster_id]
        cluster.amount_received_usd = received_usd.get(cluster.cluster_id, Decimal(0))
        cluster.seed_addresses = frozenset(cluster.addresses & seeds)
        if tags:
            labels = sorted({tags[a].tag for a in cluster.addresses if a in tags})
            cluster.tag = "|".join(labels) or None
    return clusters


def expand_seeds(
    seeds: SeedSet,
    clusters: ClusterSet,
    supercluster_limit: int = DEFAULT_SUPERCLUSTER_LIMIT,
    exclude_tagged: bool = True,
) -> SeedExpansion:
    """
    Replace every funded seed by its whole cluster, unless the cluster is a supercluster (more than
    `supercluster_limit` addresses) or carries an attribution tag; then only the seed itself is kept.
    """
    expanded: Set[str] = set()
    touched: Set[int] = set()
    excluded: Set[int] = set()
    unclustered = clustered = 0
    for seed in sorted(seeds.funded):
        cluster = clusters.cluster_of(seed)
        if cluster is None or cluster.size < 2:
            unclustered += 1
            expanded.add(seed)
            continue
        clustered += 1
        touched.add(cluster.cluster_id)
        if cluster.size > supercluster_limit or (exclude_tagged and cluster.tag):
            excluded.add(cluster.cluster_id)
            expanded.add(seed)
        else:
            expanded.update(cluster.addresses)
    logger.info(
        "%d seeds unclustered, %d seeds in %d clusters, %d clusters excluded, %d expanded addresses",
        unclustered,
        clustered,
        len(touched),
        len(excluded),
        len(expanded),
    )
    return SeedExpansion(
        addresses=frozenset(expanded),
        unclustered_seeds=unclustered,
        clustered_seeds=clustered,
        clusters_touched=tuple(sorted(touched)),
        excluded_clusters=tuple(sorted(excluded)),
    )


def seed_clusters(clusters: ClusterSet, seeds: SeedSet) -> List[AddressCluster]:
    """Clusters holding at least one funded seed, by USD received descending."""
    chosen = {}
    for seed in seeds.funded:
        cluster = clusters.cluster_of(seed)
        if cluster is not None:
            chosen[cluster.cluster_id] = cluster
    return sorted(chosen.values(), key=lambda c: (-c.amount_received_usd, c.cluster_id))


def write_clusters(clusters: ClusterSet, path: PathLike, only: Optional[Iterable[int]] = None) -> None:
    wanted = None if only is None else set(only)
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["cluster_id", "address"])
        for cluster in clusters:
            if wanted is not None and cluster.cluster_id not in wanted:
                continue
            for address in sorted(cluster.addresses):
                writer.writerow([cluster.cluster_id, address])


def read_clusters(path: PathLike) -> ClusterSet:
    """Clusters from a `cluster_id,address` export; ids are renumbered densely in file order."""
    grouped: Dict[int, Set[str]] = {}
    with open(path, newline="", encoding="utf-8") as fp:
        for line_no, row in enumerate(csv.DictReader(fp), start=2):
            try:
                grouped.setdefault(int(row["cluster_id"]), set()).add(row["address"])
            except (KeyError, TypeError, ValueError) as exc:
                raise SchemaError(f"bad cluster row: {exc}", line=line_no, source=str(path)) from exc
    groups = sorted((frozenset(g) for g in grouped.values()), key=min)
    return ClusterSet([AddressCluster(cluster_id=i, addresses=g) for i, g in enumerate(groups)])


def write_cluster_table(rows: Sequence[AddressCluster], path: PathLike) -> None:
    """Per-cluster seed count, size, USD received and first transaction date."""
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["cluster_id", "seed_addresses", "addresses", "amount_received_usd", "first_tx", "tag"])
        for cluster in rows:
            writer.writerow(
                [
                    cluster.cluster_id,
                    len(cluster.seed_addresses),
                    cluster.size,
                    format_usd(cluster.amount_received_usd),
                    "" if cluster.first_tx is None else cluster.first_tx.date().isoformat(),
                    cluster.tag or "",
                ]
            )

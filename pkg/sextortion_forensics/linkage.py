"""Bucket-linkage graph: buckets joined by shared payment addresses or shared clusters."""
import csv
import logging
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum
from pathlib import Path
from typing import (
    AbstractSet,
    Dict,
    FrozenSet,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import networkx as nx

from sextortion_forensics.clustering import ClusterSet
from sextortion_forensics.corpus import Bucket, ExtractedDatapoints
from sextortion_forensics.filters import RevenueReport

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class EdgeKind(str, Enum):
    SHARED_ADDRESS = "shared_address"
    SHARED_CLUSTER = "shared_cluster"


@dataclass
class LinkageGraph:
    graph: nx.MultiGraph
    bucket_addresses: Mapping[int, FrozenSet[str]]

    @property
    def total_emails(self) -> int:
        return sum(emails for _, emails in self.graph.nodes(data="emails", default=0))

    @property
    def total_addresses(self) -> int:
        return len(frozenset().union(*self.bucket_addresses.values())) if self.bucket_addresses else 0

    def edges(self, kind: Optional[EdgeKind] = None) -> List[Tuple[int, int, EdgeKind, int]]:
        """Edges as `(bucket_a, bucket_b, kind, weight)` with `bucket_a < bucket_b`, sorted."""
        found = []
        for a, b, key, weight in self.graph.edges(keys=True, data="weight"):
            if kind is None or key == kind:
                found.append((min(a, b), max(a, b), EdgeKind(key), weight))
        return sorted(found, key=lambda e: (e[0], e[1], e[2].value))


@dataclass(frozen=True)
class LinkageComponent:
    index: int
    buckets: Tuple[int, ...]
    emails: int
    email_share: Decimal
    addresses: int
    address_share: Decimal
    revenue_share: Optional[Decimal] = None

    @property
    def size(self) -> int:
        return len(self.buckets)


def bucket_addresses(buckets: Iterable[Bucket], datapoints: Mapping[str, ExtractedDatapoints]) -> Dict[int, FrozenSet[str]]:
    """Payment addresses found in the emails of each bucket."""
    found = {}
    for bucket in buckets:
        addresses = set()
        for member in bucket.member_ids:
            point = datapoints.get(member)
            if point is not None:
                addresses.update(point.payment_addresses)
        found[bucket.id] = frozenset(addresses)
    return found


def build_linkage(
    addresses: Mapping[int, AbstractSet[str]],
    clusters: Optional[Mapping[str, int]] = None,
    emails: Optional[Mapping[int, int]] = None,
    campaigns: Optional[Mapping[int, str]] = None,
) -> LinkageGraph:
    """
    Join two buckets with a `shared_address` edge when their payment addresses intersect and with a
    `shared_cluster` edge when the clusters of those addresses intersect. Edge weight is the number of
    shared entities. Addresses missing from `clusters` only take part in address edges.
    """
    clusters = clusters or {}
    graph = nx.MultiGraph()
    for bucket_id in sorted(addresses):
        graph.add_node(
            bucket_id,
            emails=(emails or {}).get(bucket_id, 0),
            campaign=(campaigns or {}).get(bucket_id, f"bucket-{bucket_id}"),
            addresses=len(addresses[bucket_id]),
        )
    by_address: Dict[str, List[int]] = {}
    by_cluster: Dict[int, List[int]] = {}
    for bucket_id in sorted(addresses):
        for address in addresses[bucket_id]:
            by_address.setdefault(address, []).append(bucket_id)
        for cluster_id in {clusters[a] for a in addresses[bucket_id] if a in clusters}:
            by_cluster.setdefault(cluster_id, []).append(bucket_id)
    for kind, index in ((EdgeKind.SHARED_ADDRESS, by_address), (EdgeKind.SHARED_CLUSTER, by_cluster)):
        for holders in index.values():
            for i, a in enumerate(holders):
                for b in holders[i + 1 :]:
                    if graph.has_edge(a, b, key=kind):
                        graph.edges[a, b, kind]["weight"] += 1
                    else:
                        graph.add_edge(a, b, key=kind, weight=1)
    linkage = LinkageGraph(graph, {b: frozenset(a) for b, a in addresses.items()})
    logger.info(
        "linkage graph: %d buckets, %d address edges, %d cluster edges",
        graph.number_of_nodes(),
        len(linkage.edges(EdgeKind.SHARED_ADDRESS)),
        len(linkage.edges(EdgeKind.SHARED_CLUSTER)),
    )
    return linkage


def linkage_clusters(clusters: ClusterSet, excluded: Iterable[int] = ()) -> Dict[str, int]:
    """Address -> cluster id for cluster edges, leaving out singletons and clusters excluded from seed expansion."""
    excluded = set(excluded)
    return {
        address: cluster.cluster_id
        for cluster in clusters
        if cluster.size > 1 and cluster.cluster_id not in excluded
        for address in cluster.addresses
    }


def components(graph: LinkageGraph) -> List[LinkageComponent]:
    """Connected components over both edge kinds, largest first (ties: smallest bucket id)."""
    total_emails = graph.total_emails
    total_addresses = graph.total_addresses
    groups = sorted((sorted(c) for c in nx.connected_components(graph.graph)), key=lambda c: (-len(c), c[0]))
    found = []
    for index, group in enumerate(groups):
        emails = sum(graph.graph.nodes[b]["emails"] for b in group)
        addresses = len(frozenset().union(*(graph.bucket_addresses.get(b, frozenset()) for b in group)))
        found.append(
            LinkageComponent(
                index=index,
                buckets=tuple(group),
                emails=emails,
                email_share=Decimal(emails) / total_emails if total_emails else Decimal(0),
                addresses=addresses,
                address_share=Decimal(addresses) / total_addresses if total_addresses else Decimal(0),
            )
        )
    if found:
        logger.info("%d components, the largest holds %d of %d buckets", len(found), found[0].size, graph.graph.number_of_nodes())
    return found


def address_components(
    found: Sequence[LinkageComponent],
    graph: LinkageGraph,
    clusters: Optional[Mapping[str, int]] = None,
) -> Dict[str, int]:
    """
    Address -> component index for every seed address and, when `clusters` is given, for every address
    sharing a cluster with a seed.
    """
    mapping: Dict[str, int] = {}
    members: Dict[int, List[str]] = {}
    for address, cluster_id in (clusters or {}).items():
        members.setdefault(cluster_id, []).append(address)
    for component in found:
        for bucket_id in component.buckets:
            for address in graph.bucket_addresses.get(bucket_id, ()):
                mapping[address] = component.index
                cluster_id = (clusters or {}).get(address)
                if cluster_id is not None:
                    for other in members[cluster_id]:
                        mapping.setdefault(other, component.index)
    return mapping


def with_revenue(found: Sequence[LinkageComponent], report: RevenueReport) -> List[LinkageComponent]:
    return [
        LinkageComponent(c.index, c.buckets, c.emails, c.email_share, c.addresses, c.address_share, report.component_share(c.index))
        for c in found
    ]


def write_edges(graph: LinkageGraph, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["bucket_a", "bucket_b", "kind", "weight"])
        for a, b, kind, weight in graph.edges():
            writer.writerow([a, b, kind.value, weight])


def write_components(found: Sequence[LinkageComponent], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["component", "buckets", "emails", "email_share", "addresses", "address_share", "revenue_share"])
        for c in found:
            writer.writerow(
                [
                    c.index,
                    " ".join(str(b) for b in c.buckets),
                    c.emails,
                    f"{c.email_share:.4f}",
                    c.addresses,
                    f"{c.address_share:.4f}",
                    "" if c.revenue_share is None else f"{c.revenue_share:.4f}",
                ]
            )


_DOT_COLORS = {EdgeKind.SHARED_ADDRESS: "red", EdgeKind.SHARED_CLUSTER: "black"}


def write_dot(graph: LinkageGraph, path: PathLike) -> None:
    """Graphviz rendering input; address edges red, cluster edges black, pen width by weight."""
    lines = ["graph linkage {", "  node [shape=circle];"]
    for bucket_id, data in sorted(graph.graph.nodes(data=True)):
        label = str(data.get("campaign", bucket_id)).replace('"', '\\"')
        lines.append(f'  {bucket_id} [label="{bucket_id}", tooltip="{label}", emails={data.get("emails", 0)}];')
    for a, b, kind, weight in graph.edges():
        lines.append(f'  {a} -- {b} [kind="{kind.value}", color={_DOT_COLORS[kind]}, weight={weight}, penwidth={min(weight, 10)}];')
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

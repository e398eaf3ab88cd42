"""SVG figures, the run manifest and output directory bookkeeping."""
import datetime
import hashlib
import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from sextortion_forensics.filters import PaymentRecord, RevenueReport  # noqa: E402
from sextortion_forensics.flows import HoldingSummary  # noqa: E402
from sextortion_forensics.stats import Z_95, AmountGroup  # noqa: E402

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MANIFEST = "manifest.json"
FAILED = "FAILED"

# fixed ids and no timestamps keep the SVG bytes stable between runs
plt.rcParams["svg.hashsalt"] = "sextortion-forensics"
plt.rcParams["svg.fonttype"] = "none"
_SVG_METADATA = {"Date": None, "Creator": None}


def _save(fig, path: PathLike) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_METADATA)
    plt.close(fig)


def plot_cumulative_revenue(reports: Sequence[RevenueReport], path: PathLike) -> None:
    """Cumulative USD revenue per month, one line per filter combination."""
    fig, ax = plt.subplots(figsize=(8, 4))
    for report in reports:
        months = [row.month for row in report.monthly]
        ax.plot(months, [float(row.cumulative_usd) for row in report.monthly], marker="o", label=f"filters {report.combo}")
    ax.set_xlabel("month")
    ax.set_ylabel("cumulative revenue [$]")
    ax.tick_params(axis="x", labelrotation=45)
    ax.grid(True)
    if any(r.monthly for r in reports):
        ax.legend()
    _save(fig, path)


def plot_payments(payments: Sequence[PaymentRecord], combo: str, path: PathLike) -> None:
    """Scatter of individual payments kept by `combo`, USD value against date."""
    kept = [p for p in payments if p.passes(combo)]
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.scatter([p.timestamp for p in kept], [float(p.value_usd) for p in kept], s=8)
    ax.set_xlabel("date")
    ax.set_ylabel("payment [$]")
    ax.tick_params(axis="x", labelrotation=45)
    ax.grid(True)
    _save(fig, path)


def plot_holding_histogram(summary: HoldingSummary, path: PathLike) -> None:
    fig, ax = plt.subplots(figsize=(8, 4))
    starts = [start for start, _ in summary.histogram]
    ax.bar(starts, [float(amount) for _, amount in summary.histogram], width=summary.bin_hours, align="edge")
    ax.set_xlabel("holding time [hours]")
    ax.set_ylabel("BTC")
    ax.grid(True, axis="y")
    _save(fig, path)


def plot_amount_groups(groups: Sequence[AmountGroup], path: PathLike) -> None:
    """Mean ransom per group with the standard deviation and 1.96 standard errors as error bars."""
    fig, ax = plt.subplots(figsize=(max(4, len(groups)), 4))
    if groups:
        positions = list(range(len(groups)))
        means = [g.mean for g in groups]
        ax.errorbar(positions, means, yerr=[g.std for g in groups], fmt="none", ecolor="grey", capsize=6, label="std")
        ax.errorbar(positions, means, yerr=[Z_95 * g.sem for g in groups], fmt="o", capsize=3, label="1.96 sem")
        ax.set_xticks(positions)
        ax.set_xticklabels([g.key for g in groups])
        ax.legend()
    ax.set_ylabel("amount asked [$]")
    ax.grid(True, axis="y")
    _save(fig, path)


def plot_size_distribution(shares: Sequence[float], path: PathLike) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(shares) + 1), shares, marker=".")
    ax.set_xlabel("top N buckets")
    ax.set_ylabel("share of emails")
    ax.set_ylim(0, 1.05)
    ax.grid(True)
    _save(fig, path)


def run_directory(out_dir: PathLike, timestamped: bool = True, now: Optional[datetime.datetime] = None) -> Path:
    """The directory one run writes to: `out_dir` itself or a fresh `run-<UTC timestamp>` child."""
    out_dir = Path(out_dir)
    if timestamped:
        now = now or datetime.datetime.now(datetime.timezone.utc)
        out_dir = out_dir / f"run-{now:%Y%m%dT%H%M%SZ}"
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def sha256_file(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fp:
        for block in iter(lambda: fp.read(1 << 16), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(out_dir: PathLike) -> Dict[str, str]:
    """Hash every file below `out_dir` into `manifest.json`; returns relative path -> sha256."""
    out_dir = Path(out_dir)
    hashes = {
        path.relative_to(out_dir).as_posix(): sha256_file(path)
        for path in sorted(out_dir.rglob("*"))
        if path.is_file() and path.name != MANIFEST
    }
    (out_dir / MANIFEST).write_text(json.dumps({"files": hashes}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("manifest of %d files written to %s", len(hashes), out_dir / MANIFEST)
    return hashes


def read_manifest(out_dir: PathLike) -> Dict[str, str]:
    with open(Path(out_dir) / MANIFEST, encoding="utf-8") as fp:
        return json.load(fp)["files"]


def verify_manifest(out_dir: PathLike) -> List[str]:
    """Files whose content no longer matches the manifest (missing files included)."""
    out_dir = Path(out_dir)
    return [name for name, digest in read_manifest(out_dir).items() if not (out_dir / name).is_file() or sha256_file(out_dir / name) != digest]


def mark_failed(out_dir: PathLike, stage: str, error: BaseException) -> Path:
    marker = Path(out_dir) / FAILED
    marker.write_text(f"stage: {stage}\nerror: {error}\n", encoding="utf-8")
    return marker

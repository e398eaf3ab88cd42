"""Pricing analysis (normality screen, Welch t-tests with Bonferroni correction) and breach password matching."""
import csv
import itertools
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import (
    Callable,
    Dict,
    Iterable,
    List,
    Mapping,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
from scipy import special
from scipy import stats as st

from sextortion_forensics.corpus import ExtractedDatapoints
from sextortion_forensics.exceptions import ConfigError, DegenerateVariance, GroupTooSmall

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

DEFAULT_ALPHA = 0.05
DEFAULT_RESAMPLES = 100
DEFAULT_SAMPLE_SIZE = 30
DEFAULT_BREACH_FRACTION = 0.25
MIN_PASSWORD_LENGTH = 4
Z_95 = 1.96


@dataclass(frozen=True)
class AmountGroup:
    key: str
    amounts_usd: Tuple[float, ...]
    n: int
    mean: float
    std: float

    @property
    def sem(self) -> float:
        return self.std / math.sqrt(self.n) if self.n else math.nan

    @property
    def variance(self) -> float:
        return self.std**2

    @classmethod
    def from_amounts(cls, key: str, amounts: Iterable[float]) -> "AmountGroup":
        values = np.asarray([float(a) for a in amounts], dtype=float)
        n = len(values)
        mean = float(values.mean()) if n else math.nan
        std = float(values.std(ddof=1)) if n > 1 else 0.0
        return cls(key, tuple(values.tolist()), n, mean, std)

    @classmethod
    def from_summary(cls, key: str, n: int, mean: float, std: float) -> "AmountGroup":
        """A group known only by its summary statistics; it cannot be resampled."""
        return cls(key, (), n, mean, std)


@dataclass(frozen=True)
class NormalityResult:
    key: str
    passed: bool
    statistic: float
    critical: float
    reason: str = ""


@dataclass(frozen=True)
class TestResult:
    __test__ = False

    pair: Tuple[str, str]
    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    p_adjusted: float
    reject: bool


@dataclass
class PairwiseAnalysis:
    groups: List[AmountGroup]
    screens: Dict[str, NormalityResult] = field(default_factory=dict)
    results: List[TestResult] = field(default_factory=list)
    alpha: float = DEFAULT_ALPHA

    @property
    def kept(self) -> List[AmountGroup]:
        return [g for g in self.groups if self.screens.get(g.key) is None or self.screens[g.key].passed]

    @property
    def comparisons(self) -> int:
        return len(self.results)


@dataclass(frozen=True)
class BreachMatch:
    candidates: int
    sampled: int
    matched: int

    @property
    def rate(self) -> float:
        return self.matched / self.sampled if self.sampled else 0.0


def group_amounts(
    points: Iterable[ExtractedDatapoints],
    by: str = "language",
    campaign_of: Optional[Mapping[str, str]] = None,
    where: Optional[Callable[[ExtractedDatapoints], bool]] = None,
) -> List[AmountGroup]:
    """
    Group the USD ransom amounts by `language`, `campaign` or `secret` (emails with versus without a
    password or phone). `where` restricts the emails, e.g. to one campaign or one language.
    """
    if by not in ("language", "campaign", "secret"):
        raise ConfigError(f"cannot group amounts by {by!r}")
    grouped: Dict[str, List[float]] = {}
    for point in points:
        if point.amount_usd is None or (where is not None and not where(point)):
            continue
        if by == "language":
            key = point.language or "unknown"
        elif by == "campaign":
            key = (campaign_of or {}).get(point.email_id)
            if key is None:
                continue
        else:
            key = "with_secret" if point.password_or_phone else "without_secret"
        grouped.setdefault(key, []).append(float(point.amount_usd))
    return [AmountGroup.from_amounts(key, grouped[key]) for key in sorted(grouped)]


def normality_screen(
    group: AmountGroup,
    resamples: int = DEFAULT_RESAMPLES,
    sample_size: int = DEFAULT_SAMPLE_SIZE,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
) -> NormalityResult:
    """
    Draw `resamples` random subsamples of `sample_size` amounts, take their means and test the means with
    Jarque-Bera against the chi-squared(2) critical value. The group passes when normality is not rejected.
    """
    critical = float(st.chi2.ppf(1 - alpha, 2))
    if group.n < sample_size or len(group.amounts_usd) < sample_size:
        raise GroupTooSmall(f"group {group.key} has {group.n} amounts, the screen needs {sample_size}")
    if group.std == 0:
        return NormalityResult(group.key, False, math.nan, critical, "zero variance")
    rng = np.random.default_rng(seed)
    values = np.asarray(group.amounts_usd, dtype=float)
    means = np.array([rng.choice(values, size=sample_size, replace=False).mean() for _ in range(resamples)])
    if np.ptp(means) == 0:
        return NormalityResult(group.key, False, math.nan, critical, "constant subsample means")
    statistic, _ = st.jarque_bera(means)
    statistic = float(statistic)
    return NormalityResult(group.key, statistic <= critical, statistic, critical, "" if statistic <= critical else "normality rejected")


def welch_from_summary(n1: int, m1: float, s1: float, n2: int, m2: float, s2: float) -> Tuple[float, float, float]:
    """
    Welch t statistic, Satterthwaite degrees of freedom and two-sided p-value from summary statistics.

    Returns:
        `(t, df, p)`; p is `I_{df/(df+t^2)}(df/2, 1/2)`, the Student-t two-sided tail.
    """
    v1 = s1**2 / n1
    v2 = s2**2 / n2
    pooled = v1 + v2
    if pooled == 0:
        if m1 == m2:
            raise DegenerateVariance("both groups have zero variance and equal means")
        return math.copysign(math.inf, m1 - m2), float(n1 + n2 - 2), 0.0
    t = (m1 - m2) / math.sqrt(pooled)
    df = pooled**2 / (v1**2 / (n1 - 1) + v2**2 / (n2 - 1))
    p = float(special.betainc(df / 2, 0.5, df / (df + t**2)))
    return t, df, min(1.0, p)


def welch_t_test(a: AmountGroup, b: AmountGroup, comparisons: int = 1, alpha: float = DEFAULT_ALPHA) -> TestResult:
    for group in (a, b):
        if group.n < 2:
            raise GroupTooSmall(f"group {group.key} needs at least 2 amounts for a t-test")
    t, df, p = welch_from_summary(a.n, a.mean, a.std, b.n, b.mean, b.std)
    adjusted = bonferroni(p, comparisons)
    return TestResult((a.key, b.key), t, df, p, adjusted, adjusted < alpha)


def bonferroni(p: float, comparisons: int) -> float:
    return min(1.0, p * max(comparisons, 1))


def pairwise_analysis(
    groups: Sequence[AmountGroup],
    alpha: float = DEFAULT_ALPHA,
    resamples: int = DEFAULT_RESAMPLES,
    sample_size: int = DEFAULT_SAMPLE_SIZE,
    seed: int = 0,
    screen: bool = True,
) -> PairwiseAnalysis:
    """
    Screen every group for normality and run Welch t-tests on all unordered pairs of the groups that
    pass, Bonferroni-corrected by the number of pairs. Fewer than two passing groups gives no tests.
    """
    analysis = PairwiseAnalysis(groups=list(groups), alpha=alpha)
    if screen:
        for group in groups:
            try:
                analysis.screens[group.key] = normality_screen(group, resamples, sample_size, alpha, seed)
            except GroupTooSmall as exc:
                analysis.screens[group.key] = NormalityResult(group.key, False, math.nan, math.nan, str(exc))
            if not analysis.screens[group.key].passed:
                logger.warning("group %s left out of t-tests: %s", group.key, analysis.screens[group.key].reason)
    kept = analysis.kept
    pairs = list(itertools.combinations(kept, 2))
    for a, b in pairs:
        analysis.results.append(welch_t_test(a, b, comparisons=len(pairs), alpha=alpha))
    logger.info("%d of %d groups tested, %d comparisons", len(kept), len(groups), len(pairs))
    return analysis


def breach_match(
    passwords: Iterable[str],
    breach_files: Sequence[PathLike],
    sample_fraction: float = DEFAULT_BREACH_FRACTION,
    seed: int = 0,
) -> BreachMatch:
    """
    Share of corpus passwords found in clear-text breach wordlists. Candidates are passwords seen exactly
    once and at least four characters long; a seeded random `sample_fraction` of them is looked up.
    """
    if not 0 < sample_fraction <= 1:
        raise ConfigError(f"breach sample fraction must lie in (0, 1], got {sample_fraction}")
    counts = Counter(p for p in passwords if p)
    candidates = sorted(p for p, seen in counts.items() if seen == 1 and len(p) >= MIN_PASSWORD_LENGTH)
    size = min(len(candidates), round(len(candidates) * sample_fraction))
    rng = np.random.default_rng(seed)
    chosen = sorted(rng.choice(len(candidates), size=size, replace=False).tolist()) if size else []
    sample = {candidates[i] for i in chosen}
    matched = set()
    for path in breach_files:
        with open(path, encoding="utf-8-sig", errors="replace") as fp:
            for line in fp:
                word = line.rstrip("\r\n")
                if word in sample:
                    matched.add(word)
    result = BreachMatch(len(candidates), len(sample), len(matched))
    logger.info("%d of %d sampled passwords found in %d breach lists", result.matched, result.sampled, len(breach_files))
    return result


def write_group_summary(groups: Sequence[AmountGroup], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["group", "n", "mean", "std", "sem"])
        for g in groups:
            writer.writerow([g.key, g.n, f"{g.mean:.4f}", f"{g.std:.4f}", f"{g.sem:.4f}"])


def write_test_matrix(results: Sequence[TestResult], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["a", "b", "t", "df", "p", "p_adj", "reject"])
        for r in results:
            writer.writerow(
                [r.pair[0], r.pair[1], f"{r.t_statistic:.6f}", f"{r.degrees_of_freedom:.4f}", f"{r.p_value:.6g}", f"{r.p_adjusted:.6g}", str(r.reject).lower()]
            )


def write_normality(screens: Mapping[str, NormalityResult], path: PathLike) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(["group", "passed", "statistic", "critical", "reason"])
        for key in sorted(screens):
            s = screens[key]
            writer.writerow([key, str(s.passed).lower(), f"{s.statistic:.4f}", f"{s.critical:.4f}", s.reason])

import math
from decimal import Decimal
from pathlib import Path

import numpy as np
import pytest
from scipy import stats as st

from sextortion_forensics.corpus import ExtractedDatapoints
from sextortion_forensics.exceptions import ConfigError, DegenerateVariance, GroupTooSmall
from sextortion_forensics.stats import (
    AmountGroup,
    bonferroni,
    breach_match,
    group_amounts,
    normality_screen,
    pairwise_analysis,
    welch_from_summary,
    welch_t_test,
    write_test_matrix,
)


def test_welch_worked_example():
    t, df, p = welch_from_summary(25, 110.0, 10.0, 25, 100.0, 5.0)
    assert t == pytest.approx(10 / math.sqrt(5))
    assert df == pytest.approx(600 / 17)
    expected = st.ttest_ind_from_stats(110.0, 10.0, 25, 100.0, 5.0, 25, equal_var=False)
    assert p == pytest.approx(expected.pvalue, rel=1e-10)
    assert p < 0.001


def test_identical_groups():
    t, _, p = welch_from_summary(10, 5.0, 2.0, 10, 5.0, 2.0)
    assert t == 0
    assert p == pytest.approx(1.0)


def test_symmetry():
    t1, df1, p1 = welch_from_summary(12, 300.0, 40.0, 30, 280.0, 25.0)
    t2, df2, p2 = welch_from_summary(30, 280.0, 25.0, 12, 300.0, 40.0)
    assert t1 == pytest.approx(-t2)
    assert (df1, p1) == pytest.approx((df2, p2))


def check_against_scipy(pairs: int, seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(pairs):
        a = rng.normal(rng.uniform(200, 900), rng.uniform(1, 200), size=rng.integers(2, 60))
        b = rng.normal(rng.uniform(200, 900), rng.uniform(1, 200), size=rng.integers(2, 60))
        ga, gb = AmountGroup.from_amounts("a", a), AmountGroup.from_amounts("b", b)
        result = welch_t_test(ga, gb)
        expected = st.ttest_ind(a, b, equal_var=False)
        va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
        df = (va + vb) ** 2 / (va**2 / (len(a) - 1) + vb**2 / (len(b) - 1))
        assert result.t_statistic == pytest.approx(expected.statistic, rel=1e-10)
        assert result.p_value == pytest.approx(expected.pvalue, rel=1e-10, abs=1e-300)
        assert result.degrees_of_freedom == pytest.approx(df, rel=1e-10)


def test_matches_scipy_on_random_samples():
    check_against_scipy(200, seed=2018)


@pytest.mark.slow
def test_matches_scipy_on_ten_thousand_pairs():
    check_against_scipy(10_000, seed=7)


@pytest.mark.parametrize("n_a, s_a, n_b, s_b", [(25, 10.0, 25, 5.0), (4, 1.0, 60, 30.0), (2, 3.0, 2, 3.0)])
def test_p_value_falls_as_t_grows(n_a, s_a, n_b, s_b):
    results = [welch_from_summary(n_a, 100.0 + gap, s_a, n_b, 100.0, s_b) for gap in np.linspace(0, 40, 81)]
    ts = [t for t, _, _ in results]
    dfs = {round(df, 9) for _, df, _ in results}
    ps = [p for _, _, p in results]
    assert ts == sorted(ts)
    assert len(dfs) == 1
    assert all(later < earlier for earlier, later in zip(ps, ps[1:]) if earlier > 1e-300)
    negative = [welch_from_summary(n_a, 100.0 - gap, s_a, n_b, 100.0, s_b)[2] for gap in np.linspace(0, 40, 81)]
    assert negative == pytest.approx(ps)


def test_zero_variance():
    with pytest.raises(DegenerateVariance):
        welch_from_summary(5, 200.0, 0.0, 5, 200.0, 0.0)
    t, _, p = welch_from_summary(5, 300.0, 0.0, 5, 200.0, 0.0)
    assert t == math.inf
    assert p == 0.0


@pytest.mark.parametrize("p, m, expected", [(0.01, 10, 0.1), (0.2, 10, 1.0), (0.03, 1, 0.03), (0.03, 0, 0.03)])
def test_bonferroni(p, m, expected):
    assert bonferroni(p, m) == pytest.approx(expected)
    assert bonferroni(p, m) >= p


def groups(count: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [AmountGroup.from_amounts(f"g{i}", rng.normal(300 + 50 * i, 30, size=40)) for i in range(count)]


@pytest.mark.parametrize("count, comparisons", [(1, 0), (2, 1), (5, 10)])
def test_pairwise_comparisons(count, comparisons):
    analysis = pairwise_analysis(groups(count), screen=False)
    assert analysis.comparisons == comparisons
    for result in analysis.results:
        assert result.p_adjusted == pytest.approx(min(1.0, result.p_value * comparisons))
        assert result.reject == (result.p_adjusted < 0.05)


def test_screen_keeps_failing_groups_out():
    constant = AmountGroup.from_amounts("flat", [500.0] * 40)
    small = AmountGroup.from_amounts("small", [400.0, 500.0])
    analysis = pairwise_analysis(groups(2) + [constant, small], sample_size=30, resamples=20)
    assert analysis.screens["flat"].reason == "zero variance"
    assert not analysis.screens["small"].passed
    assert {g.key for g in analysis.kept} <= {"g0", "g1"}


def test_normality_screen():
    with pytest.raises(GroupTooSmall):
        normality_screen(AmountGroup.from_amounts("x", [1.0, 2.0, 3.0]), sample_size=30)
    group = groups(1)[0]
    first = normality_screen(group, resamples=50, sample_size=20, seed=3)
    assert first == normality_screen(group, resamples=50, sample_size=20, seed=3)
    assert first.critical == pytest.approx(st.chi2.ppf(0.95, 2))
    assert first.passed == (first.statistic <= first.critical)
    with pytest.raises(GroupTooSmall):
        normality_screen(AmountGroup.from_summary("summary", 100, 500.0, 20.0), sample_size=30)


def test_t_test_needs_two_amounts():
    with pytest.raises(GroupTooSmall):
        welch_t_test(AmountGroup.from_amounts("a", [1.0]), groups(1)[0])


def test_group_amounts():
    points = [
        ExtractedDatapoints("1", amount_usd=Decimal(500), language="en", password_or_phone="hunter22"),
        ExtractedDatapoints("2", amount_usd=Decimal(700), language="en"),
        ExtractedDatapoints("3", amount_usd=Decimal(300), language="de", password_or_phone="geheim"),
        ExtractedDatapoints("4", language="de"),
    ]
    by_language = group_amounts(points)
    assert [(g.key, g.n, g.mean) for g in by_language] == [("de", 1, 300.0), ("en", 2, 600.0)]
    assert by_language[1].std == pytest.approx(math.sqrt(20_000))
    by_secret = group_amounts(points, by="secret")
    assert [(g.key, g.n) for g in by_secret] == [("with_secret", 2), ("without_secret", 1)]
    by_campaign = group_amounts(points, by="campaign", campaign_of={"1": "A", "2": "A", "3": "B"})
    assert [(g.key, g.n) for g in by_campaign] == [("A", 2), ("B", 1)]
    assert [g.key for g in group_amounts(points, where=lambda p: p.language == "en")] == ["en"]
    with pytest.raises(ConfigError):
        group_amounts(points, by="currency")


def test_breach_match(tmp_path: Path):
    passwords = ["hunter22", "qwerty123", "qwerty123", "abc", "letmein1", "s3cret!!"]
    empty = tmp_path / "empty.txt"
    empty.write_text("")
    assert breach_match(passwords, [empty], sample_fraction=1.0).rate == 0.0
    full = tmp_path / "full.txt"
    full.write_text("qwerty123\nhunter22\nletmein1\ns3cret!!\nabc\n")
    result = breach_match(passwords, [full], sample_fraction=1.0)
    assert (result.candidates, result.sampled, result.matched, result.rate) == (3, 3, 3, 1.0)
    assert breach_match([], [full]).rate == 0.0


def test_breach_sampling_is_seeded(tmp_path: Path):
    words = [f"word{i:04d}" for i in range(400)]
    path = tmp_path / "list.txt"
    path.write_text("\n".join(words[::2]) + "\n")
    first = breach_match(words, [path], sample_fraction=0.25, seed=9)
    assert first == breach_match(words, [path], sample_fraction=0.25, seed=9)
    assert first.sampled == 100
    assert 0 < first.matched < 100
    with pytest.raises(ConfigError):
        breach_match(words, [path], sample_fraction=0)


def test_test_matrix_file(tmp_path: Path):
    analysis = pairwise_analysis(groups(2), screen=False)
    write_test_matrix(analysis.results, tmp_path / "tests.csv")
    header, row = (tmp_path / "tests.csv").read_text().splitlines()
    assert header == "a,b,t,df,p,p_adj,reject"
    assert row.startswith("g0,g1,")

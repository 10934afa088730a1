import numpy as np
import pytest

from retinalkit.errors import ConfigError
from retinalkit.selection import rank_features, select_per_dataset

from corpora import selection_corpus, permutation_p_values


def test_identical_feature_not_retained_when_contended():
    rng = np.random.default_rng(0)
    labels = ["a"] * 20 + ["b"] * 20
    vectors = [{"flat": 1.0, "signal": (i >= 20) + rng.normal(0, 0.1)} for i in range(40)]
    rep = rank_features(vectors, labels, cap=1)
    assert rep["flat"].p_value == pytest.approx(1.0)
    assert rep.retained == ["signal"]
    assert rep["flat"].drop_reason == "high_p"


def test_informative_first_and_duplicates_dropped():
    vectors, labels, names = selection_corpus(seed=1)
    rep = rank_features(vectors, labels, cap=40)
    assert set(rep.retained[:2]) == {"informative_0", "informative_1"}
    assert rep["informative_0"].p_value < 1e-3 and rep["informative_1"].p_value < 1e-3
    assert rep["dup_informative_0"].drop_reason == "redundant_with:informative_0"
    assert rep["dup_informative_1"].drop_reason == "redundant_with:informative_1"
    assert len(rep.retained) <= 40
    assert all(f.drop_reason != "none" for f in rep.features if not f.retained)


def test_permutation_oracle_agrees_on_ordering():
    vectors, labels, names = selection_corpus(seed=2)
    rep = rank_features(vectors, labels, cap=40)
    perm = permutation_p_values(vectors, labels, names, n_perm=1000, seed=0)
    kw = {f.name: f.p_value for f in rep.features}
    top_kw = sorted(names, key=lambda n: (kw[n], names.index(n)))[:2]
    top_perm = sorted(names, key=lambda n: (perm[n], names.index(n)))[:4]
    assert set(top_kw) <= set(top_perm)
    ranks = lambda d: np.argsort(np.argsort([d[n] for n in names]))
    rho = np.corrcoef(ranks(kw), ranks(perm))[0, 1]
    assert rho > 0.9


def test_single_label_is_config_error():
    with pytest.raises(ConfigError):
        rank_features([{"a": 1.0}] * 20, ["x"] * 20)


def test_too_few_per_label():
    with pytest.raises(ConfigError):
        rank_features([{"a": float(i)} for i in range(15)], ["x"] * 10 + ["y"] * 5)


def test_null_heavy_feature_excluded():
    vectors, labels, names = selection_corpus(seed=3)
    for i, v in enumerate(vectors):
        v["noise_0"] = None
        if i % 2:
            v["noise_1"] = None
    rep = rank_features(vectors, labels)
    assert rep["noise_0"].drop_reason == "excessive_nulls"
    assert rep["noise_1"].drop_reason == "excessive_nulls"
    assert rep["noise_0"].p_value is None


def test_retained_pairwise_below_threshold():
    from scipy.stats import spearmanr

    vectors, labels, names = selection_corpus(seed=4)
    rep = rank_features(vectors, labels, redundancy_rho=0.5)
    cols = {n: np.array([v[n] for v in vectors]) for n in rep.retained}
    for i, a in enumerate(rep.retained):
        for b in rep.retained[i + 1:]:
            assert abs(spearmanr(cols[a], cols[b]).statistic) <= 0.5


def test_deterministic_and_label_permutation_invariant():
    vectors, labels, names = selection_corpus(seed=5)
    a = rank_features(vectors, labels)
    b = rank_features(vectors, labels)
    assert a.to_json() == b.to_json()
    renamed = [{"0": "z", "1": "y", "2": "x"}[l] for l in labels]
    c = rank_features(vectors, renamed)
    assert [f.p_value for f in a.features] == [f.p_value for f in c.features]
    assert a.retained == c.retained


def test_p_monotone_apart_from_skips():
    vectors, labels, names = selection_corpus(seed=6)
    rep = rank_features(vectors, labels)
    ps = [rep[n].p_value for n in rep.retained]
    assert ps == sorted(ps)


def test_allow_and_deny():
    vectors, labels, names = selection_corpus(seed=7)
    rep = rank_features(vectors, labels, cap=5, allow={"noise_10"}, deny={"informative_1"})
    assert rep.retained[0] == "noise_10"
    assert rep["informative_1"].drop_reason == "denied"
    assert len(rep.retained) == 5


def test_table_and_per_dataset():
    vectors, labels, names = selection_corpus(seed=8)
    ids = [f"i{k}" for k in range(len(vectors))]
    out = select_per_dataset(dict(zip(ids, vectors)), dict(zip(ids, labels)),
                             {i: ("A" if k % 2 else "B") for k, i in enumerate(ids)}, cap=10)
    assert sorted(out) == ["A", "B"]
    table = out["A"].to_table()
    assert "Kruskal-Wallis" in table and "informative_0" in table

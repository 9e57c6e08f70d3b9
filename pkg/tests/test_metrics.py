import json
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from policysteer.exceptions import ConfigurationError
from policysteer.metrics import (
    REPORT_SCHEMA,
    ablation_report,
    build_ablation_corpus,
    category_match,
    cosine_similarity,
    gt_accuracy,
    lcs_length,
    rouge_l,
    separation_auc,
    validate_report,
)
from policysteer.narration import BehaviorFeatures, Narration, render

from .oracles import brute_force_lcs, pairwise_auc

words = st.lists(st.sampled_from(["the", "cup", "rim", "handle", "lifts", "it", "low"]), max_size=8)
text = st.lists(st.sampled_from(["grasps", "cup", "bag", "rim", "edge", "lifts", "it"]), min_size=1, max_size=8)


@given(words, words)
def test_lcs_matches_brute_force_and_is_symmetric(a, b):
    assert lcs_length(a, b) == brute_force_lcs(a, b) == lcs_length(b, a)


def test_rouge_examples():
    s = rouge_l("the cat sat", "the cat")
    assert (s.precision, s.recall) == pytest.approx((2 / 3, 1.0))
    assert s.f1 == pytest.approx(0.8)
    assert rouge_l("a b c", "a b c").f1 == 1.0
    assert rouge_l("a b", "c d").f1 == 0.0
    assert rouge_l("", "").f1 == 0.0


@given(text)
def test_rouge_self_score_is_one(t):
    assert rouge_l(" ".join(t), " ".join(t)).f1 == pytest.approx(1.0)


def test_cosine_examples():
    assert cosine_similarity("the red cup", "the red cup") == pytest.approx(1.0)
    assert cosine_similarity("red cup", "blue bag") == 0.0
    assert cosine_similarity("", "blue bag") == 0.0


@given(text, text, st.randoms(use_true_random=False))
def test_cosine_bounds_and_permutation_invariance(a, b, rnd):
    corpus = [" ".join(a), " ".join(b), "grasps the cup by the rim"]
    s = cosine_similarity(" ".join(a), " ".join(b), corpus)
    assert 0.0 <= s <= 1.0
    shuffled = list(a)
    rnd.shuffle(shuffled)
    assert cosine_similarity(" ".join(shuffled), " ".join(a), corpus) == pytest.approx(1.0)


def test_gt_accuracy_is_exact_match(caplog):
    f = BehaviorFeatures("handle", True, False, "none", False, "high")
    assert gt_accuracy(Narration.from_features(f), f) == 1
    assert gt_accuracy(render(f), BehaviorFeatures("handle", True, False, "none", False, "low")) == 0
    assert gt_accuracy("gibberish", f) == 0
    assert "unparseable" in caplog.text


def test_category_match():
    handle_low = render(BehaviorFeatures("handle", True, False, "none", False, "low"))
    handle_high = render(BehaviorFeatures("handle", True, False, "light", True, "high"))
    failed = render(BehaviorFeatures("handle", False, False, "none", False, "low"))
    assert category_match(handle_low, handle_high) == 1.0
    assert category_match(handle_low, failed) == 0.0


def test_auc_matches_pairwise_oracle(rng):
    for _ in range(20):
        intra = rng.integers(0, 5, size=rng.integers(1, 12)).astype(float)
        inter = rng.integers(0, 5, size=rng.integers(1, 12)).astype(float)
        assert separation_auc(intra, inter) == pytest.approx(pairwise_auc(intra, inter))
    assert separation_auc([1.0], [1.0]) == 0.5


def test_default_corpus_pair_counts_and_separation():
    corpus = build_ablation_corpus()
    assert len(corpus) == 48
    reports = {m: ablation_report(corpus, m) for m in ("rouge_l", "tfidf_cosine", "category_match")}
    for r in reports.values():
        assert (r.n_intra, r.n_inter) == (360, 768)
        assert r.n_intra + r.n_inter == comb(48, 2)
    assert reports["category_match"].separation_auc == 1.0
    assert reports["rouge_l"].separation_auc < 1.0
    assert "stand-in" in reports["tfidf_cosine"].to_dict()["note"]


def test_degenerate_corpus_rejected():
    corpus = build_ablation_corpus()
    with pytest.raises(ConfigurationError):
        ablation_report([c for c in corpus if c[0] == "failure"], "rouge_l")
    with pytest.raises(ConfigurationError):
        ablation_report(corpus, "bleu")


def test_report_json_validates(tmp_path):
    report = ablation_report(build_ablation_corpus(4), "rouge_l")
    path = tmp_path / "r.json"
    report.write_json(path)
    doc = json.loads(path.read_text())
    validate_report(doc)
    assert set(doc) <= set(REPORT_SCHEMA["properties"])
    doc["n_intra"] += 1
    with pytest.raises(ConfigurationError):
        validate_report(doc)
    with pytest.raises(ConfigurationError):
        validate_report({"metric": "x"})


def test_csv_has_one_row_per_pair(tmp_path):
    corpus = build_ablation_corpus(3)
    report = ablation_report(corpus, "category_match")
    path = tmp_path / "r.csv"
    report.write_csv(path)
    rows = path.read_text().strip().splitlines()
    assert len(rows) == 1 + comb(9, 2)
    assert np.isclose(sum(float(r.split(",")[-1]) for r in rows[1:]), sum(report.intra_scores))

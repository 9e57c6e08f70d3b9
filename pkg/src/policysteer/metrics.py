"""Narration-quality metrics and the intra- vs inter-category score ablation.

Texts are lowercased and split on whitespace for every metric. ROUGE-L is an
LCS computation written out here; the cosine metric uses scikit-learn's TF-IDF
vectors fit on the evaluation corpus, so scores depend on that corpus.
"""

import csv
import itertools
import json
import logging
from dataclasses import dataclass

import jsonschema
import numpy as np
from scipy.stats import rankdata
from sklearn.feature_extraction.text import TfidfVectorizer

from .exceptions import ConfigurationError
from .narration import CRUSH_LEVELS, LIFT_HEIGHTS, BehaviorFeatures, Narration, render, try_parse

logger = logging.getLogger(__name__)


def tokenize(text):
    return str(text).lower().split()


def lcs_length(a, b):
    """Longest common subsequence length of two token lists."""
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


def rouge_l(candidate, reference):
    """LCS precision, recall and F1 (beta = 1). Empty input scores 0."""
    c, r = tokenize(candidate), tokenize(reference)
    if not c or not r:
        return RougeScore(0.0, 0.0, 0.0)
    lcs = lcs_length(c, r)
    if lcs == 0:
        return RougeScore(0.0, 0.0, 0.0)
    p, rec = lcs / len(c), lcs / len(r)
    return RougeScore(p, rec, 2 * p * rec / (p + rec))


class TfidfCosine:
    """Cosine similarity between TF-IDF vectors fit on a fixed corpus."""

    def __init__(self, corpus):
        corpus = [str(t) for t in corpus]
        if not any(tokenize(t) for t in corpus):
            raise ConfigurationError("TF-IDF corpus has no tokens")
        self.vectorizer = TfidfVectorizer(tokenizer=str.split, lowercase=True, token_pattern=None)
        self.vectorizer.fit(corpus)

    def __call__(self, candidate, reference):
        X = self.vectorizer.transform([str(candidate).lower(), str(reference).lower()])
        a, b = X[0].toarray().ravel(), X[1].toarray().ravel()
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0 or nb == 0:
            return 0.0
        return float(np.clip(a @ b / (na * nb), 0.0, 1.0))


def cosine_similarity(candidate, reference, corpus=None):
    """TF-IDF cosine; the corpus defaults to the two texts themselves."""
    corpus = [candidate, reference] if corpus is None else corpus
    if not tokenize(candidate) or not tokenize(reference):
        return 0.0
    return TfidfCosine(corpus)(candidate, reference)


def gt_accuracy(predicted, reference):
    """1 iff the predicted narration parses to exactly ``reference``."""
    text = predicted.text if isinstance(predicted, Narration) else predicted
    parsed = try_parse(text)
    if parsed is None:
        logger.warning("unparseable narration scored 0: %r", text)
        return 0
    return int(parsed == reference)


def behavior_category(features):
    if not features.grasp_succeeded:
        return "failure"
    return f"{features.first_contact_region}-grasp"


def category_match(candidate, reference):
    """1 if both texts parse to the same behavior category."""
    a, b = try_parse(candidate), try_parse(reference)
    if a is None or b is None:
        return 0.0
    return float(behavior_category(a) == behavior_category(b))


def build_ablation_corpus(n_per_category=16, seed=0):
    """Template narrations for handle grasps, rim grasps and failures.

    Fields that do not define the category (lift height, squeeze, drop,
    topple) vary within each category.
    """
    if n_per_category < 2:
        raise ConfigurationError("need at least two narrations per category")
    rng = np.random.default_rng(seed)
    pools = {}
    for region in ("handle", "rim"):
        pools[f"{region}-grasp"] = [
            BehaviorFeatures(region, True, False, crush, dropped, lift)
            for crush, dropped, lift in itertools.product(CRUSH_LEVELS, (False, True), LIFT_HEIGHTS)
        ]
    pools["failure"] = [
        BehaviorFeatures(region, False, toppled, crush, False, "low")
        for region, toppled, crush in itertools.product(
            ("none", "handle", "rim", "interior"), (False, True), CRUSH_LEVELS[:2]
        )
    ]
    corpus = []
    for category, pool in pools.items():
        order = list(rng.permutation(len(pool)))
        while len(order) < n_per_category:
            order.append(int(rng.integers(len(pool))))
        corpus.extend((category, render(pool[i])) for i in order[:n_per_category])
    return corpus


def separation_auc(intra, inter):
    """Probability that an intra-category score beats an inter-category one (ties count half)."""
    intra, inter = np.asarray(intra, float), np.asarray(inter, float)
    if intra.size == 0 or inter.size == 0:
        raise ConfigurationError("both score samples must be nonempty")
    ranks = rankdata(np.concatenate([intra, inter]))
    n1, n2 = intra.size, inter.size
    return float((ranks[:n1].sum() - n1 * (n1 + 1) / 2) / (n1 * n2))


_SCORES = {"type": "array", "items": {"type": "number"}}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["metric", "n_intra", "n_inter", "separation_auc", "intra_scores", "inter_scores"],
    "properties": {
        "metric": {"type": "string"},
        "n_intra": {"type": "integer", "minimum": 1},
        "n_inter": {"type": "integer", "minimum": 1},
        "separation_auc": {"type": "number", "minimum": 0, "maximum": 1},
        "intra_mean": {"type": "number"},
        "inter_mean": {"type": "number"},
        "note": {"type": ["string", "null"]},
        "intra_scores": _SCORES,
        "inter_scores": _SCORES,
    },
    "additionalProperties": False,
}


def validate_report(doc):
    """Check a report document against ``REPORT_SCHEMA``."""
    try:
        jsonschema.validate(doc, REPORT_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigurationError(f"invalid score report: {exc.message}") from None
    if doc["n_intra"] != len(doc["intra_scores"]) or doc["n_inter"] != len(doc["inter_scores"]):
        raise ConfigurationError("invalid score report: counts do not match the score lists")
    return doc


@dataclass
class ScoreDistributionReport:
    metric: str
    intra_scores: list
    inter_scores: list
    separation_auc: float
    pairs: list = None
    note: str = None

    @property
    def n_intra(self):
        return len(self.intra_scores)

    @property
    def n_inter(self):
        return len(self.inter_scores)

    def to_dict(self):
        return {
            "metric": self.metric,
            "n_intra": self.n_intra,
            "n_inter": self.n_inter,
            "separation_auc": self.separation_auc,
            "note": self.note,
            "intra_mean": float(np.mean(self.intra_scores)),
            "inter_mean": float(np.mean(self.inter_scores)),
            "intra_scores": list(self.intra_scores),
            "inter_scores": list(self.inter_scores),
        }

    def write_json(self, path):
        doc = validate_report(self.to_dict())
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "category_i", "category_j", "kind", "score"])
            w.writerows(self.pairs or [])


METRIC_NOTES = {"tfidf_cosine": "TF-IDF bag-of-words cosine, a stand-in for an embedding-based similarity"}

METRICS = {
    "rouge_l": lambda corpus: (lambda a, b: rouge_l(a, b).f1),
    "tfidf_cosine": lambda corpus: TfidfCosine([t for _, t in corpus]),
    "category_match": lambda corpus: category_match,
}


def ablation_report(corpus, metric):
    """All pairwise scores, split into same-category and cross-category pairs.

    ``metric`` is a name from ``METRICS`` or a callable ``(text_a, text_b) -> float``.
    """
    corpus = list(corpus)
    counts = {}
    for category, _ in corpus:
        counts[category] = counts.get(category, 0) + 1
    if len(counts) < 2 or min(counts.values()) < 2:
        raise ConfigurationError("ablation needs at least two categories with two narrations each")
    if isinstance(metric, str):
        if metric not in METRICS:
            raise ConfigurationError(f"unknown metric {metric!r}; expected one of {sorted(METRICS)}")
        name, fn = metric, METRICS[metric](corpus)
    else:
        name, fn = getattr(metric, "__name__", "custom"), metric
    intra, inter, pairs = [], [], []
    for (i, (ca, ta)), (j, (cb, tb)) in itertools.combinations(enumerate(corpus), 2):
        score = float(fn(ta, tb))
        kind = "intra" if ca == cb else "inter"
        (intra if kind == "intra" else inter).append(score)
        pairs.append((i, j, ca, cb, kind, score))
    return ScoreDistributionReport(
        name, intra, inter, separation_auc(intra, inter), pairs, METRIC_NOTES.get(name)
    )

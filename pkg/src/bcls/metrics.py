"""Retrieval evaluation: rank correlation, recalls, truncated-AP metrics.

All values are fractions in [0, 1] (tau in [-1, 1]); the CLI scales to the
percent convention for reports. Score ties are resolved toward the lowest
candidate index so every metric is deterministic.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BclsError


class LengthMismatch(BclsError):
    pass


class TooShort(BclsError):
    pass


class ZeroVariance(BclsError):
    pass


class EmptyRelevantSet(BclsError):
    def __init__(self, query_id):
        self.query_id = query_id
        super().__init__(f"query {query_id} has an empty relevant set")


@dataclass(frozen=True)
class TauResult:
    tau: float
    concordant: int
    discordant: int
    pairs: int


@dataclass(frozen=True)
class RankingOutcome:
    query_id: int
    order: np.ndarray  # candidate indices by descending score, ties -> low index
    relevant: frozenset = field(default_factory=frozenset)


def _paired(x, y):
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise LengthMismatch(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise TooShort("need at least 2 values")
    return a, b


def kendall_tau(scores, labels):
    """Rank correlation with the fixed n(n-1)/2 denominator.

    A pair is concordant when score order and label order agree, discordant
    when they disagree; a tie on either side counts as neither.
    """
    s, l = _paired(scores, labels)
    n = s.size
    ds = np.sign(s[:, None] - s[None, :])
    dl = np.sign(l[:, None] - l[None, :])
    prod = (ds * dl)[np.triu_indices(n, 1)]
    concordant = int((prod > 0).sum())
    discordant = int((prod < 0).sum())
    pairs = n * (n - 1) // 2
    return TauResult((concordant - discordant) / pairs, concordant, discordant, pairs)


def rank_candidates(scores):
    """Candidate order by descending score; equal scores keep index order."""
    s = np.asarray(scores, dtype=np.float64)
    return np.argsort(-s, kind="stable")


def recall_at_k(outcomes, k):
    """Fraction of queries with at least one relevant candidate in the top k."""
    if k < 1:
        raise BclsError(f"k must be >= 1, got {k}")
    outcomes = list(outcomes)
    if not outcomes:
        raise BclsError("no ranking outcomes given")
    hits = sum(
        1 for o in outcomes if any(int(c) in o.relevant for c in o.order[:k])
    )
    return hits / len(outcomes)


def rsum(recalls):
    """Sum of the six recall percentages (both directions at k = 1, 5, 10)."""
    vals = [float(v) for v in recalls]
    if len(vals) != 6:
        raise BclsError(f"expected six recall values, got {len(vals)}")
    if any(v < 0 or v > 100 for v in vals):
        raise BclsError("recall percentages must lie in [0, 100]")
    return math.fsum(vals)


def _truncated_hits(outcome):
    r = len(outcome.relevant)
    if r == 0:
        raise EmptyRelevantSet(outcome.query_id)
    return np.array([1.0 if int(c) in outcome.relevant else 0.0 for c in outcome.order[:r]])


def map_at_r(outcomes):
    """Mean average precision truncated at R = |relevant| per query."""
    outcomes = list(outcomes)
    if not outcomes:
        raise BclsError("no ranking outcomes given")
    aps = []
    for o in outcomes:
        hits = _truncated_hits(o)
        ranks = np.arange(1, hits.size + 1)
        aps.append(float(np.sum(hits * np.cumsum(hits) / ranks)) / hits.size)
    return float(np.mean(aps))


def r_precision(outcomes):
    """Mean fraction of relevant candidates found in the top R per query."""
    outcomes = list(outcomes)
    if not outcomes:
        raise BclsError("no ranking outcomes given")
    fractions = [float(np.mean(_truncated_hits(o))) for o in outcomes]
    return float(np.mean(fractions))


def pearson(x, y):
    """Product-moment correlation; both inputs need nonzero variance."""
    a, b = _paired(x, y)
    ac = a - a.mean()
    bc = b - b.mean()
    va = float(np.dot(ac, ac))
    vb = float(np.dot(bc, bc))
    if va == 0.0 or vb == 0.0:
        raise ZeroVariance("pearson undefined for a constant input")
    return float(np.dot(ac, bc) / math.sqrt(va * vb))

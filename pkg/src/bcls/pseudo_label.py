"""Continuous relevance labels from a precomputed text-similarity matrix.

Computing the text similarity itself (sentence encoders, captioning
metrics) is out of scope; this module consumes a square matrix of
inter-caption similarities and turns it into training labels.
"""

import itertools

import numpy as np

from .core import BclsError, as_matrix


class NotSquare(BclsError):
    pass


class NoPairs(BclsError):
    pass


class InvalidGroups(BclsError):
    pass


def relevance_from_text_similarity(s_text, pairing=None):
    """Relevance matrix: clamped text similarity with the paired entry pinned to 1.

    ``pairing`` maps caption index -> image index and must be a bijection;
    captions are reindexed into image order so row i / column j refer to
    image i and the caption paired with image j. Default is the identity,
    where the result is simply clamp(s_text, -1, 1) with a unit diagonal.
    """
    s = as_matrix(s_text, "text similarity")
    n = s.shape[0]
    if s.shape[0] != s.shape[1]:
        raise NotSquare(f"text similarity must be square, got {s.shape}")
    if pairing is not None:
        p = np.asarray(pairing, dtype=np.intp)
        if p.shape != (n,) or not np.array_equal(np.sort(p), np.arange(n)):
            raise BclsError("pairing must be a caption->image bijection")
        ref = np.empty(n, dtype=np.intp)
        ref[p] = np.arange(n)  # image -> its caption
        s = s[np.ix_(ref, ref)]
    r = np.clip(s, -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    return r


def validate_caption_groups(groups, n_captions):
    """Check that groups are non-empty, disjoint and cover 0..n_captions-1."""
    seen = set()
    for g in groups:
        if len(g) == 0:
            raise InvalidGroups("empty caption group")
        for idx in g:
            i = int(idx)
            if not 0 <= i < n_captions:
                raise InvalidGroups(f"caption index {i} out of range")
            if i in seen:
                raise InvalidGroups(f"caption index {i} appears in two groups")
            seen.add(i)
    if len(seen) != n_captions:
        raise InvalidGroups("groups do not cover every caption index")


def alpha_statistic(s_text, groups):
    """Pooled population std of within-group pairwise caption similarities.

    The label-noise scale this estimates is the natural default for the
    ranking-relaxation width; on full-size caption datasets it lands
    around 0.2. Pairs are unordered (a < b); pooling is over all groups.
    """
    s = as_matrix(s_text, "text similarity")
    if s.shape[0] != s.shape[1]:
        raise NotSquare(f"text similarity must be square, got {s.shape}")
    validate_caption_groups(groups, s.shape[0])
    vals = [
        s[a, b]
        for g in groups
        for a, b in itertools.combinations(sorted(int(i) for i in g), 2)
    ]
    if not vals:
        raise NoPairs("no group has two or more captions")
    return float(np.std(np.array(vals, dtype=np.float64)))

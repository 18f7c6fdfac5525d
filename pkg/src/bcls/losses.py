"""Ranking losses over a similarity matrix with analytic gradients.

Every loss takes a square similarity matrix S (rows: image queries,
columns: text candidates) and a relevance matrix R of the same shape, and
returns the scalar value together with dL/dS, so the whole family is
checkable by finite differences and independent of any encoder. Candidates
with relevance < 1 count as negatives. The image->text direction is
computed on (S, R) and the text->image direction on the transposes; both
are summed. Subgradient convention at a hinge kink: 0.

``hinge_evals`` on the result counts how many hinge terms the loss
semantically evaluates, which is how the O(M*B) bound of the windowed
hard-mining loss is asserted.
"""

from dataclasses import dataclass

import numpy as np

from .core import BclsError, as_matrix
from .sampling import WindowSpec, build_windows


class SizeMismatch(BclsError):
    pass


class NoNegatives(BclsError):
    def __init__(self, anchor):
        self.anchor = int(anchor)
        super().__init__(f"anchor {anchor} has no candidate with relevance < 1")


@dataclass
class LossResult:
    value: float
    grad: np.ndarray
    hinge_evals: int = 0


@dataclass(frozen=True)
class Hyperparams:
    margin: float = 0.2
    gamma: float = 50.0
    alpha: float = 0.2
    beta: float = 0.1
    kendall_margin: float = 0.0

    def __post_init__(self):
        if self.margin < 0:
            raise BclsError(f"margin must be >= 0, got {self.margin}")
        if self.gamma <= 0:
            raise BclsError(f"gamma must be > 0, got {self.gamma}")
        if self.kendall_margin < 0:
            raise BclsError(f"kendall_margin must be >= 0, got {self.kendall_margin}")


def _check_pair(s, r):
    s = as_matrix(s, "similarity")
    r = as_matrix(r, "relevance")
    if s.shape != r.shape or s.shape[0] != s.shape[1]:
        raise SizeMismatch(f"need equal square matrices, got {s.shape} and {r.shape}")
    if s.shape[0] < 2:
        raise SizeMismatch("batch must contain at least 2 items")
    return s, r


def _two_sided(one_dir, s, r):
    v1, g1, h1 = one_dir(s, r)
    v2, g2, h2 = one_dir(s.T, r.T)
    return LossResult(v1 + v2, g1 + g2.T, h1 + h2)


def _triplet_all_dir(s, r, margin):
    b = s.shape[0]
    neg = r < 1.0
    args = s - np.diagonal(s)[:, None] + margin
    terms = np.where(neg, np.maximum(args, 0.0), 0.0)
    active = neg & (args > 0.0)
    grad = active.astype(np.float64)
    idx = np.arange(b)
    grad[idx, idx] -= active.sum(axis=1)
    return float(np.sum(terms)), grad, int(neg.sum())


def triplet_all(s, r, margin=0.2):
    """Hinge on every negative: sum_i sum_{r<1} [s_neg - s_pos + margin]_+."""
    s, r = _check_pair(s, r)
    return _two_sided(lambda a, b: _triplet_all_dir(a, b, margin), s, r)


def _require_negatives(neg):
    counts = neg.sum(axis=1)
    if not counts.all():
        raise NoNegatives(np.flatnonzero(counts == 0)[0])


def _triplet_hn_dir(s, r, margin):
    b = s.shape[0]
    neg = r < 1.0
    _require_negatives(neg)
    masked = np.where(neg, s, -np.inf)
    hardest = np.argmax(masked, axis=1)  # first occurrence: lowest index on ties
    idx = np.arange(b)
    args = s[idx, hardest] - np.diagonal(s) + margin
    terms = np.maximum(args, 0.0)
    active = args > 0.0
    grad = np.zeros_like(s)
    rows = np.flatnonzero(active)
    grad[rows, hardest[rows]] += 1.0
    grad[idx, idx] -= active
    return float(np.sum(terms)), grad, b


def triplet_hn(s, r, margin=0.2):
    """Hinge on the single hardest (max-similarity) negative per anchor."""
    s, r = _check_pair(s, r)
    return _two_sided(lambda a, b: _triplet_hn_dir(a, b, margin), s, r)


def _triplet_sn_dir(s, r, margin, gamma):
    b = s.shape[0]
    neg = r < 1.0
    _require_negatives(neg)
    # log-sum-exp with max shift; masked entries become exp(-inf) = 0
    z = np.where(neg, gamma * s, -np.inf)
    zmax = z.max(axis=1)
    w = np.exp(z - zmax[:, None])
    wsum = w.sum(axis=1)
    soft_max = (zmax + np.log(wsum)) / gamma
    args = soft_max - np.diagonal(s) + margin
    terms = np.maximum(args, 0.0)
    active = args > 0.0
    grad = np.where(active[:, None], w / wsum[:, None], 0.0)
    idx = np.arange(b)
    grad[idx, idx] -= active
    return float(np.sum(terms)), grad, b


def triplet_sn(s, r, margin=0.2, gamma=50.0):
    """Soft negative mining: the hard max is replaced by a scale-gamma
    log-sum-exp, so every negative receives softmax-weighted gradient."""
    s, r = _check_pair(s, r)
    if gamma <= 0:
        raise BclsError(f"gamma must be > 0, got {gamma}")
    return _two_sided(lambda a, b: _triplet_sn_dir(a, b, margin, gamma), s, r)


def _kendall_dir(s, r, margin, relaxation, anchor_pairs_only):
    b = s.shape[0]
    diff = s[:, None, :] - s[:, :, None]  # diff[i, j, k] = s_ik - s_ij
    ind = r[:, :, None] > r[:, None, :] + relaxation  # r_ij > r_ik + relaxation
    if anchor_pairs_only:
        ind = ind & (np.arange(b)[None, :, None] == np.arange(b)[:, None, None])
    args = diff + margin
    terms = np.where(ind, np.maximum(args, 0.0), 0.0)
    act = ind & (args > 0.0)
    grad = act.sum(axis=1).astype(np.float64) - act.sum(axis=2)
    return float(np.sum(terms)), grad, int(ind.sum())


def kendall_basic(s, r, kendall_margin=0.0, anchor_pairs_only=False):
    """Pairwise concordance loss: every label-ordered candidate pair whose
    similarities are (margin-)misordered contributes a hinge.

    With ``anchor_pairs_only`` the higher-labeled item of each comparison is
    restricted to the anchor's own pair, which is the binary-label special
    case and coincides with ``triplet_all`` at margin 0.
    """
    s, r = _check_pair(s, r)
    return _two_sided(
        lambda a, b: _kendall_dir(a, b, kendall_margin, 0.0, anchor_pairs_only), s, r
    )


def kendall_relaxed(s, r, alpha=0.2, kendall_margin=0.0):
    """Concordance loss constrained to coarse label gaps (> alpha), which
    absorbs pseudo-label noise smaller than the relaxation."""
    s, r = _check_pair(s, r)
    return _two_sided(
        lambda a, b: _kendall_dir(a, b, kendall_margin, alpha, False), s, r
    )


# Above this many window-pair cells the batched (M, B, B, B) tensor is not
# worth its memory; fall back to a per-window sweep. Both paths reduce each
# window slice with np.sum in the same order, so results are bit-identical.
_SW_BATCH_LIMIT = 1 << 22


def _kendall_sw_dir(s, r, spec):
    b = s.shape[0]
    diff = s[:, None, :] - s[:, :, None]  # diff[i, j, k] = s_ik - s_ij
    hinge = np.maximum(diff, 0.0)
    misordered = diff > 0.0
    pos = r[None, :, :] >= spec.uppers[:, None, None]
    neg = r[None, :, :] < (spec.uppers - spec.alpha)[:, None, None]
    value = 0.0
    grad = np.zeros_like(s)
    count = 0
    if spec.num_windows * b * b * b <= _SW_BATCH_LIMIT:
        mask = pos[:, :, :, None] & neg[:, :, None, :]
        terms = np.where(mask, hinge[None], 0.0)
        for m in range(spec.num_windows):
            value += float(np.sum(terms[m]))
        act = mask & misordered[None]
        grad += act.sum(axis=(0, 2))
        grad -= act.sum(axis=(0, 3))
        count = int(mask.sum())
    else:
        for m in range(spec.num_windows):
            mask = pos[m][:, :, None] & neg[m][:, None, :]
            value += float(np.sum(np.where(mask, hinge, 0.0)))
            act = mask & misordered
            grad += act.sum(axis=1)
            grad -= act.sum(axis=2)
            count += int(mask.sum())
    return value, grad, count


def kendall_sw(s, r, spec):
    """Concordance loss restricted to the sliding-window pos/neg sets."""
    s, r = _check_pair(s, r)
    _check_spec(spec)
    return _two_sided(lambda a, b: _kendall_sw_dir(a, b, spec), s, r)


def _kendall_sw_hs_dir(s, r, spec):
    b = s.shape[0]
    pos = r[None, :, :] >= spec.uppers[:, None, None]
    neg = r[None, :, :] < (spec.uppers - spec.alpha)[:, None, None]
    valid = pos.any(axis=2) & neg.any(axis=2)  # (M, B): both sets non-empty
    # furthest positive / closest negative per (window, anchor);
    # argmin/argmax first-occurrence tie-break matches sampling.select_hard_pair
    furthest_pos = np.argmin(np.where(pos, s[None], np.inf), axis=2)
    closest_neg = np.argmax(np.where(neg, s[None], -np.inf), axis=2)
    rows = np.arange(b)[None, :]
    diffs = s[rows, closest_neg] - s[rows, furthest_pos]
    terms = np.where(valid, np.maximum(diffs, 0.0), 0.0)
    value = float(np.sum(terms)) / spec.num_windows
    act = valid & (diffs > 0.0)
    grad = np.zeros_like(s)
    mi, ii = np.nonzero(act)
    np.add.at(grad, (ii, closest_neg[mi, ii]), 1.0)
    np.add.at(grad, (ii, furthest_pos[mi, ii]), -1.0)
    grad /= spec.num_windows
    return value, grad, int(valid.sum())


def kendall_sw_hs(s, r, spec):
    """Windowed loss on hard pairs only: per anchor and window, a single
    hinge between the furthest positive and the closest negative, averaged
    over windows. At most one hinge per (window, anchor, direction)."""
    s, r = _check_pair(s, r)
    _check_spec(spec)
    return _two_sided(lambda a, b: _kendall_sw_hs_dir(a, b, spec), s, r)


def bcls(s, r, hp=Hyperparams()):
    """Combined objective: soft-negative triplet plus windowed hard-pair
    concordance, values and gradients added elementwise."""
    spec = build_windows(hp.alpha, hp.beta)
    a = triplet_sn(s, r, hp.margin, hp.gamma)
    b = kendall_sw_hs(s, r, spec)
    return LossResult(a.value + b.value, a.grad + b.grad, a.hinge_evals + b.hinge_evals)


def _check_spec(spec):
    if not isinstance(spec, WindowSpec):
        raise BclsError("expected a WindowSpec (see sampling.build_windows)")


LOSS_NAMES = (
    "triplet_all",
    "triplet_hn",
    "triplet_sn",
    "kendall_basic",
    "kendall_relaxed",
    "kendall_sw",
    "kendall_sw_hs",
    "bcls",
)


def make_loss_fn(name, hp):
    """Bind a loss name from LOSS_NAMES to hyperparameters: (S, R) -> LossResult."""
    if name == "triplet_all":
        return lambda s, r: triplet_all(s, r, hp.margin)
    if name == "triplet_hn":
        return lambda s, r: triplet_hn(s, r, hp.margin)
    if name == "triplet_sn":
        return lambda s, r: triplet_sn(s, r, hp.margin, hp.gamma)
    if name == "kendall_basic":
        return lambda s, r: kendall_basic(s, r, hp.kendall_margin)
    if name == "kendall_relaxed":
        return lambda s, r: kendall_relaxed(s, r, hp.alpha, hp.kendall_margin)
    if name == "kendall_sw":
        spec = build_windows(hp.alpha, hp.beta)
        return lambda s, r: kendall_sw(s, r, spec)
    if name == "kendall_sw_hs":
        spec = build_windows(hp.alpha, hp.beta)
        return lambda s, r: kendall_sw_hs(s, r, spec)
    if name == "bcls":
        return lambda s, r: bcls(s, r, hp)
    raise BclsError(f"unknown loss {name!r}; expected one of {LOSS_NAMES}")

"""Sliding-window positive/negative sampling over the relevance axis.

A window of width ``alpha`` slides from label +1 downward with stride
``beta``. Per window, candidates at or above the window top are positives,
candidates strictly below the window bottom are negatives, and the band in
between is excluded, so every kept pair is separated by more than alpha.
"""

import math
from dataclasses import dataclass

import numpy as np

from .core import BclsError

# Tolerance for deciding whether (2 - alpha) / beta is an exact multiple;
# plain ceil would inflate the count on float artifacts like 1.5 / 0.3.
_CEIL_EPS = 1e-9


class BadParams(BclsError):
    pass


@dataclass(frozen=True)
class WindowSpec:
    alpha: float
    beta: float
    num_windows: int
    uppers: np.ndarray  # uppers[m] = 1 - m * beta, strictly decreasing


@dataclass(frozen=True)
class WindowSample:
    anchor: int
    window: int
    pos: np.ndarray  # ascending candidate indices with label >= window top
    neg: np.ndarray  # ascending candidate indices with label < top - alpha


@dataclass(frozen=True)
class HardPair:
    hardest_pos: int  # positive furthest from the anchor (min similarity)
    hardest_neg: int  # negative closest to the anchor (max similarity)
    valid: bool


def build_windows(alpha, beta):
    """Window schedule covering the label range [-1, 1]."""
    if not (0.0 < beta <= alpha < 2.0):
        raise BadParams(f"need 0 < beta <= alpha < 2, got alpha={alpha} beta={beta}")
    num = int(math.ceil((2.0 - alpha) / beta - _CEIL_EPS))
    uppers = 1.0 - beta * np.arange(num, dtype=np.float64)
    return WindowSpec(float(alpha), float(beta), num, uppers)


def sample_window(r_row, spec, m, anchor=0):
    """Positive/negative index sets for one anchor row and window.

    Either set may be empty; callers treat that as a zero-loss window.
    """
    if not 0 <= m < spec.num_windows:
        raise BadParams(f"window index {m} out of range [0, {spec.num_windows})")
    r = np.asarray(r_row, dtype=np.float64)
    top = spec.uppers[m]
    pos = np.flatnonzero(r >= top)
    neg = np.flatnonzero(r < top - spec.alpha)
    return WindowSample(int(anchor), int(m), pos, neg)


def select_hard_pair(s_row, sample):
    """Hardest pair in a window: furthest positive, closest negative.

    Ties break toward the lowest candidate index. Invalid (flag False)
    when either set is empty.
    """
    if sample.pos.size == 0 or sample.neg.size == 0:
        return HardPair(-1, -1, False)
    s = np.asarray(s_row, dtype=np.float64)
    hardest_pos = int(sample.pos[np.argmin(s[sample.pos])])
    hardest_neg = int(sample.neg[np.argmax(s[sample.neg])])
    return HardPair(hardest_pos, hardest_neg, True)

"""Dense matrix primitives shared by every other module.

All arithmetic is float64 regardless of on-disk storage, so hinge losses
stay meaningful under finite-difference probing. Row reductions follow
numpy's deterministic order: fixed inputs give bit-identical outputs.
"""

import numpy as np

NORM_FLOOR = 1e-12


class BclsError(ValueError):
    """Base class for every contract violation raised by this package."""


class ZeroRow(BclsError):
    """A row with norm <= 1e-12 cannot be projected onto the unit sphere."""

    def __init__(self, index):
        self.index = int(index)
        super().__init__(f"row {index} has norm <= {NORM_FLOOR}")


class DimMismatch(BclsError):
    pass


def as_matrix(x, name="matrix"):
    """Coerce to a finite 2-d float64 array."""
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2:
        raise DimMismatch(f"{name} must be 2-d, got shape {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise DimMismatch(f"{name} must be non-empty, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise BclsError(f"{name} contains non-finite entries")
    return a


def l2_normalize_rows(x):
    """Project every row of ``x`` onto the unit sphere.

    Raises ZeroRow for the first row whose Euclidean norm is <= 1e-12.
    """
    a = as_matrix(x, "features")
    norms = np.sqrt(np.einsum("ij,ij->i", a, a))
    bad = np.flatnonzero(norms <= NORM_FLOOR)
    if bad.size:
        raise ZeroRow(bad[0])
    return a / norms[:, None]


def cosine_similarity(v, t):
    """Similarity matrix between unit-normalized row sets.

    Entry (i, j) is the dot product of row i of ``v`` with row j of ``t``;
    for unit rows that is the cosine, bounded by 1 + 1e-9.
    """
    a = as_matrix(v, "image features")
    b = as_matrix(t, "text features")
    if a.shape[1] != b.shape[1]:
        raise DimMismatch(
            f"feature widths differ: {a.shape[1]} vs {b.shape[1]}"
        )
    return a @ b.T

"""Finite-difference verification of every analytic gradient.

Central differences with step 1e-6 against float64 loss values. Sampled
instances are rejected when any hinge argument (or any same-row/-column
similarity gap, which protects arg-min/-max selections) sits within 1e-4
of zero, so no probe can cross a kink and piecewise-linear regions are
differenced exactly.
"""

import numpy as np

from .losses import Hyperparams, make_loss_fn
from .trainer import LinearEncoder, backward, forward

FD_STEP = 1e-6
KINK_TOL = 1e-4
PASS_TOL = 1e-4


def rel_error(analytic, fd):
    """Worst entrywise |a - b| / max(1, |a|, |b|)."""
    a = np.asarray(analytic, dtype=np.float64)
    b = np.asarray(fd, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


def _clear_of_kinks(s, r, hp, check_soft_max, tol=KINK_TOL):
    b = s.shape[0]
    offdiag = ~np.eye(b, dtype=bool)
    margins = sorted({0.0, hp.margin, hp.kendall_margin})
    for mat, rel in ((s, r), (s.T, r.T)):
        diff = mat[:, None, :] - mat[:, :, None]  # same-row candidate gaps
        gaps = diff[:, offdiag]
        for mu in margins:
            if np.min(np.abs(gaps + mu)) <= tol:
                return False
        if check_soft_max:
            neg = rel < 1.0
            if not neg.sum(axis=1).all():
                return False
            z = np.where(neg, hp.gamma * mat, -np.inf)
            zmax = z.max(axis=1)
            soft = (zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1))) / hp.gamma
            if np.min(np.abs(soft - np.diagonal(mat) + hp.margin)) <= tol:
                return False
    return True


def sample_instance(rng, b, hp, check_soft_max):
    """Random (S, R) pair rejected until every hinge argument is kink-free."""
    while True:
        s = rng.uniform(-1.0, 1.0, (b, b))
        r = rng.uniform(-1.0, 1.0, (b, b))
        np.fill_diagonal(r, 1.0)
        if _clear_of_kinks(s, r, hp, check_soft_max):
            return s, r


def finite_diff_similarity(loss_fn, s, r, h=FD_STEP):
    """Central differences of the loss value wrt every similarity entry."""
    s = s.copy()
    fd = np.zeros_like(s)
    for i in range(s.shape[0]):
        for j in range(s.shape[1]):
            orig = s[i, j]
            s[i, j] = orig + h
            up = loss_fn(s, r).value
            s[i, j] = orig - h
            down = loss_fn(s, r).value
            s[i, j] = orig
            fd[i, j] = (up - down) / (2.0 * h)
    return fd


def _needs_soft_max(loss_name):
    return loss_name in ("triplet_sn", "bcls")


def gradcheck_similarity(loss_name, b=8, trials=100, seed=0, hp=None):
    """Worst relative error between analytic dL/dS and central differences."""
    hp = hp or Hyperparams()
    rng = np.random.default_rng(seed)
    loss_fn = make_loss_fn(loss_name, hp)
    worst = 0.0
    for _ in range(trials):
        s, r = sample_instance(rng, b, hp, _needs_soft_max(loss_name))
        analytic = loss_fn(s, r).grad
        fd = finite_diff_similarity(loss_fn, s, r)
        worst = max(worst, rel_error(analytic, fd))
    return worst


def _finite_diff_params(loss_fn, enc, xv, xt, r, h=FD_STEP):
    fds = []
    for w in (enc.w_v, enc.w_t):
        fd = np.zeros_like(w)
        for i in range(w.shape[0]):
            for j in range(w.shape[1]):
                orig = w[i, j]
                w[i, j] = orig + h
                _, _, s = forward(enc, xv, xt)
                up = loss_fn(s, r).value
                w[i, j] = orig - h
                _, _, s = forward(enc, xv, xt)
                down = loss_fn(s, r).value
                w[i, j] = orig
                fd[i, j] = (up - down) / (2.0 * h)
        fds.append(fd)
    return fds


def gradcheck_end_to_end(
    loss_name, b=8, trials=20, seed=0, hp=None, d_v=6, d_t=5, dim=4
):
    """Worst relative error of dL/dW for both projections.

    Instances are resampled until the induced similarity matrix is
    kink-free, so the 1e-6 parameter probes stay on one linear piece.
    """
    hp = hp or Hyperparams()
    rng = np.random.default_rng(seed)
    loss_fn = make_loss_fn(loss_name, hp)
    worst = 0.0
    for _ in range(trials):
        while True:
            xv = rng.standard_normal((b, d_v))
            xt = rng.standard_normal((b, d_t))
            enc = LinearEncoder(
                rng.uniform(-1.0, 1.0, (d_v, dim)) / np.sqrt(d_v),
                rng.uniform(-1.0, 1.0, (d_t, dim)) / np.sqrt(d_t),
            )
            r = rng.uniform(-1.0, 1.0, (b, b))
            np.fill_diagonal(r, 1.0)
            _, _, s = forward(enc, xv, xt)
            if _clear_of_kinks(s, r, hp, _needs_soft_max(loss_name)):
                break
        result = loss_fn(s, r)
        grads = backward(enc, xv, xt, result.grad)
        fd_v, fd_t = _finite_diff_params(loss_fn, enc, xv, xt, r)
        worst = max(worst, rel_error(grads.w_v, fd_v), rel_error(grads.w_t, fd_t))
    return worst

"""Kendall correlation vectors as degree-2 U-statistics.

For two observations x, y the kernel is, per variable pair (i, j),

    h_{ij}(x, y) = sign(x_i - y_i) * sign(x_j - y_j)  in {-1, +1},

i.e. +1 for a concordant pair of observations and -1 for a discordant
one.  Averaging the kernel over all n(n-1)/2 observation pairs gives the
sample Kendall correlation vector tau_hat in flat pair order, and the
leave-one-out averages

    tau_hat^{(i)} = 1/(n-1) * sum_{s != i} h(X_i, X_s)

drive the jackknife covariance estimators.  Everything here is exact
integer arithmetic until the final division, so brute-force comparisons
can demand bitwise equality.

Tied values make the kernel 0 and break the +/-1 contract; by default
that is a hard error.  An opt-in, seeded jitter of relative size 1e-9
per column is available for data with incidental ties.
"""

import numpy as np

from .indexing import _incidence, _pairs0, pair_count

__all__ = [
    "TieError",
    "kendall_kernel",
    "kendall_tau_vector",
    "leave_one_out",
    "tau_and_leave_one_out",
    "column_means",
    "grand_mean",
    "jitter_ties",
]

# soft cap on the entries of the blocked sign tensor, ~256 MB of int8
_BLOCK_BUDGET = 2.7e8


class TieError(ValueError):
    """Tied values make the concordance kernel vanish."""


def _as_data(data):
    X = np.asarray(data, dtype=float)
    if X.ndim != 2:
        raise ValueError("data must be a 2-d array of shape (n, d)")
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least two observations, got n=%d" % n)
    if d < 2:
        raise ValueError("need at least two variables, got d=%d" % d)
    if not np.isfinite(X).all():
        raise ValueError("data contains non-finite values")
    return X


def _tied_columns(X):
    cols = []
    for j in range(X.shape[1]):
        if np.unique(X[:, j]).size < X.shape[0]:
            cols.append(j + 1)
    return cols


def jitter_ties(data, seed=0):
    """Break ties by adding tiny seeded uniform noise to tied columns.

    The perturbation is uniform on +/- 1e-9 times the column range, which
    leaves distinct values' ranks intact unless they are closer than the
    jitter itself.  Deterministic for a fixed seed.
    """
    X = _as_data(data).copy()
    rng = np.random.default_rng(seed)
    for j in _tied_columns(X):
        col = X[:, j - 1]
        span = float(col.max() - col.min()) or 1.0
        col += rng.uniform(-1e-9 * span, 1e-9 * span, size=col.shape)
    cols = _tied_columns(X)
    if cols:
        raise TieError("jitter failed to break ties in columns %s" % cols)
    return X


def _resolve_ties(X, ties, tie_seed):
    if ties == "error":
        cols = _tied_columns(X)
        if cols:
            raise TieError(
                "tied values in column(s) %s; pass ties='jitter' (seeded) or "
                "pre-process the data" % cols
            )
        return X
    if ties == "jitter":
        return jitter_ties(X, seed=tie_seed)
    raise ValueError("ties must be 'error' or 'jitter', got %r" % (ties,))


def kendall_kernel(x, y):
    """Concordance kernel h(x, y) in {-1, +1}^p for two d-vectors."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-d vectors of equal length")
    s = np.sign(x - y)
    if (s == 0).any():
        coord = int(np.flatnonzero(s == 0)[0]) + 1
        raise TieError("x and y are tied in coordinate %d" % coord)
    ii0, jj0 = _pairs0(x.shape[0])
    return s[ii0] * s[jj0]


def _pair_row_sums(X):
    """Row sums sum_{s != r} h(X_r, X_s) as an (n, p) integer array.

    Computed in blocks of rows so the sign tensor stays within a fixed
    memory budget; O(n^2 p) work overall.
    """
    n, d = X.shape
    ii0, jj0 = _pairs0(d)
    p = len(ii0)
    out = np.empty((n, p), dtype=np.int64)
    blk = int(max(1, min(n, _BLOCK_BUDGET // (n * (d + p)))))
    for start in range(0, n, blk):
        stop = min(start + blk, n)
        S = np.sign(X[start:stop, None, :] - X[None, :, :]).astype(np.int8)
        H = S[:, :, ii0] * S[:, :, jj0]
        out[start:stop] = H.sum(axis=1)  # diagonal terms are zero
    return out


def kendall_tau_vector(data, ties="error", tie_seed=0):
    """Sample Kendall correlations of all variable pairs, flat order.

    Exact U-statistic: the mean of the concordance kernel over all
    observation pairs.  Raises TieError on tied values unless
    ties='jitter'.
    """
    X = _resolve_ties(_as_data(data), ties, tie_seed)
    n = X.shape[0]
    sums = _pair_row_sums(X).sum(axis=0)
    return sums / float(n * (n - 1))


def leave_one_out(data, ties="error", tie_seed=0):
    """The n leave-one-out kernel averages, as an (n, p) array.

    Row i holds tau_hat^{(i)}; the row mean reproduces tau_hat exactly.
    """
    X = _resolve_ties(_as_data(data), ties, tie_seed)
    n = X.shape[0]
    return _pair_row_sums(X) / float(n - 1)


def tau_and_leave_one_out(data, ties="error", tie_seed=0):
    """Return (tau_hat, leave-one-out matrix) from one pass over the data."""
    X = _resolve_ties(_as_data(data), ties, tie_seed)
    n = X.shape[0]
    sums = _pair_row_sums(X)
    tau = sums.sum(axis=0) / float(n * (n - 1))
    return tau, sums / float(n - 1)


def column_means(tau, d=None):
    """Per-variable means T_bar_j of the entries involving variable j.

    T_bar_j averages the d-1 flat entries whose pair contains j.
    """
    tau = np.asarray(tau, dtype=float)
    p = tau.shape[-1]
    if d is None:
        d = int(round((1 + np.sqrt(1 + 8 * p)) / 2))
    if pair_count(d) != p:
        raise ValueError("vector length %d is not a pair count" % p)
    return tau @ _incidence(d) / (d - 1)


def grand_mean(tau):
    """Mean of all entries of the Kendall vector."""
    tau = np.asarray(tau, dtype=float)
    return float(tau.mean(axis=-1)) if tau.ndim == 1 else tau.mean(axis=-1)

"""Covariance estimation for the Kendall correlation vector.

The sampling covariance of tau_hat is estimated by the jackknife built on
leave-one-out kernel averages,

    Sigma_hat = (4 / n^2) * sum_i (tau^{(i)} - tau_hat)(tau^{(i)} - tau_hat)^T,

which is positive semidefinite by construction and consistent (times n)
for the asymptotic covariance.  Under partial exchangeability the
population covariance is constant on the orbits of group-respecting
variable permutations, so averaging the dense estimate over those orbits
gives a structured estimator with the same block pattern; for the
one-group (fully exchangeable) case the orbit classes collapse to the
overlap classes and the whole estimator reduces to three numbers
computable in O(n p) from per-row means -- no dense matrix needed.

Also here: eigenvalue clipping for indefinite estimates, pseudo-inverse
helpers used by the test statistics, and a Monte Carlo evaluator for the
population covariance coefficients of an exchangeable copula.
"""

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .indexing import _incidence, _pairs0
from .kendall import tau_and_leave_one_out

__all__ = [
    "CovarianceEstimate",
    "jackknife_cov",
    "structured_jackknife_exchangeable",
    "structured_jackknife_partition",
    "pd_repair",
    "psd_pinv",
    "psd_power",
    "population_sigma_mc",
    "PopulationSigma",
    "save_sigma_json",
    "load_sigma_json",
]

# relative eigenvalue cutoff for Moore-Penrose pseudo-inverses
_PINV_RTOL = 1e-10


@dataclass
class CovarianceEstimate:
    """A covariance estimate for tau_hat.

    kind is "dense" (matrix set), "exchangeable" (three coefficients set)
    or "partition" (matrix set, constant on partition orbits).  The
    estimate is on the scale of cov(tau_hat); multiply by n for the
    asymptotic matrix.
    """

    kind: str
    d: int
    n: int
    matrix: np.ndarray = None
    s: np.ndarray = None
    partition: object = None
    messages: list = field(default_factory=list)

    def dense(self):
        from .sblock import materialize

        if self.matrix is not None:
            return self.matrix
        return materialize(self.s, self.d)


def jackknife_cov(data, ties="error", tie_seed=0, precomputed=None):
    """Dense jackknife covariance estimate of tau_hat.

    ``precomputed`` may carry (tau, loo) from tau_and_leave_one_out to
    avoid recomputing the O(n^2 p) pass.
    """
    if precomputed is None:
        tau, loo = tau_and_leave_one_out(data, ties=ties, tie_seed=tie_seed)
        n = np.asarray(data).shape[0]
    else:
        tau, loo = precomputed
        n = loo.shape[0]
    D = loo - tau
    cov = (4.0 / n**2) * (D.T @ D)
    d = int(round((1 + np.sqrt(1 + 8 * cov.shape[0])) / 2))
    return CovarianceEstimate(kind="dense", d=d, n=n, matrix=cov)


def structured_jackknife_exchangeable(data, ties="error", tie_seed=0, precomputed=None):
    """Structured jackknife under full exchangeability, in O(n p).

    Averages of the dense jackknife over the three overlap classes,
    computed without forming the dense matrix:

        s2   = 4/(p n^2) ||D||_F^2,
        eta1 = 4/(d n^2) sum_j sum_i (col-mean deviations)^2,
        eta0 = 4/n^2     sum_i (grand-mean deviations)^2,
        s1 = ((d-1) eta1 - s2) / (d-2),
        s0 = (p eta0 - 2(d-1) eta1 + s2) / (p - 2d + 3).

    Exactly equal (in exact arithmetic) to class-averaging the dense
    estimate.  Requires d >= 4: below that some overlap class is empty.
    """
    if precomputed is None:
        tau, loo = tau_and_leave_one_out(data, ties=ties, tie_seed=tie_seed)
    else:
        tau, loo = precomputed
    n, p = loo.shape
    d = int(round((1 + np.sqrt(1 + 8 * p)) / 2))
    if d < 4:
        raise ValueError(
            "exchangeable structured jackknife needs d >= 4, got d=%d" % d
        )
    D = loo - tau
    s2 = 4.0 / (p * n**2) * float(np.einsum("ij,ij->", D, D))
    row_means = D.mean(axis=1)
    eta0 = 4.0 / n**2 * float(row_means @ row_means)
    G = D @ _incidence(d) / (d - 1.0)
    eta1 = 4.0 / (d * n**2) * float(np.einsum("ij,ij->", G, G))
    s1 = ((d - 1.0) * eta1 - s2) / (d - 2.0)
    s0 = (p * eta0 - 2.0 * (d - 1.0) * eta1 + s2) / (p - 2.0 * d + 3.0)
    return CovarianceEstimate(
        kind="exchangeable", d=d, n=n, s=np.array([s0, s1, s2])
    )


def _orbit_keys(partition):
    """Canonical orbit key of every entry (k, l) of pair-space matrices.

    Two entries get the same key exactly when some variable permutation
    preserving the partition groups maps one pair-of-pairs onto the
    other.  The key combines the group multisets of both pairs (order-
    canonicalized) with the group multiset of their shared variables.
    """
    d = partition.d
    g = partition.group_of
    K = partition.n_groups
    ii0, jj0 = _pairs0(d)
    ga, gb = g[ii0], g[jj0]
    q = np.minimum(ga, gb) * K + np.maximum(ga, gb)

    a_col, b_col = ii0[:, None], jj0[:, None]
    sh_a = (a_col == a_col.T) | (a_col == b_col.T)
    sh_b = (b_col == a_col.T) | (b_col == b_col.T)
    e = np.where(sh_a, 1 + ga[:, None], 0)
    f = np.where(sh_b, 1 + gb[:, None], 0)
    s_lo = np.minimum(e, f)
    s_hi = np.maximum(e, f)

    q1, q2 = q[:, None], q[None, :]
    q_lo = np.minimum(q1, q2)
    q_hi = np.maximum(q1, q2)
    base = K * K
    key = ((q_lo * base + q_hi) * (K + 1) + s_lo) * (K + 1) + s_hi
    return key


def structured_jackknife_partition(
    data, partition, ties="error", tie_seed=0, precomputed=None
):
    """Jackknife estimate averaged over the orbit classes of a partition.

    With a single group this reproduces the exchangeable estimator in
    dense form; with all-singleton groups every entry is its own class
    and the dense estimate is returned unchanged.
    """
    if precomputed is None and np.asarray(data).shape[0] < 3:
        raise ValueError("partition-structured jackknife needs n >= 3")
    est = jackknife_cov(data, ties=ties, tie_seed=tie_seed, precomputed=precomputed)
    if est.n < 3:
        raise ValueError("partition-structured jackknife needs n >= 3")
    if partition.d != est.d:
        raise ValueError(
            "partition is over d=%d variables, data has d=%d" % (partition.d, est.d)
        )
    key = _orbit_keys(partition)
    flat = key.ravel()
    uniq, inv = np.unique(flat, return_inverse=True)
    sums = np.bincount(inv, weights=est.matrix.ravel())
    counts = np.bincount(inv)
    avg = (sums / counts)[inv].reshape(key.shape)
    return CovarianceEstimate(
        kind="partition", d=est.d, n=est.n, matrix=avg, partition=partition
    )


def pd_repair(matrix, warn_rtol=1e-10):
    """Clip negative eigenvalues of a symmetric matrix to zero.

    Returns (repaired matrix, messages).  Negative eigenvalues within
    ``warn_rtol`` (relative to the largest eigenvalue) of zero are
    silently clipped as numerical noise; anything more negative is
    clipped too but reported in the messages list.
    """
    matrix = np.asarray(matrix, dtype=float)
    w, V = np.linalg.eigh((matrix + matrix.T) / 2.0)
    top = max(float(w.max()), 0.0)
    messages = []
    if w.min() < -warn_rtol * max(top, abs(float(w.min()))):
        msg = (
            "covariance estimate was not positive semidefinite; clipped "
            "eigenvalues as low as %.3e (largest %.3e)" % (w.min(), top)
        )
        messages.append(msg)
        warnings.warn(msg)
    if w.min() >= 0.0:
        return matrix, messages
    w = np.maximum(w, 0.0)
    return (V * w) @ V.T, messages


def _psd_eig(matrix):
    w, V = np.linalg.eigh((np.asarray(matrix, dtype=float)))
    top = max(float(w.max()), 0.0)
    cut = _PINV_RTOL * top
    keep = w > cut
    return w, V, keep


def psd_pinv(matrix):
    """Moore-Penrose pseudo-inverse of a PSD matrix via its spectrum."""
    w, V, keep = _psd_eig(matrix)
    if not keep.any():
        return np.zeros_like(np.asarray(matrix, dtype=float))
    Vk = V[:, keep]
    return (Vk / w[keep]) @ Vk.T


def psd_power(matrix, exponent):
    """Principal (symmetric) pseudo-power of a PSD matrix.

    Small or negative eigenvalues are dropped under the Moore-Penrose
    convention, so exponent -0.5 is the whitening root used by the test
    statistics.
    """
    w, V, keep = _psd_eig(matrix)
    if not keep.any():
        return np.zeros_like(np.asarray(matrix, dtype=float))
    Vk = V[:, keep]
    return (Vk * w[keep] ** exponent) @ Vk.T


@dataclass
class PopulationSigma:
    """Monte Carlo estimate of the exchangeable covariance coefficients."""

    sigma: np.ndarray
    sigma_se: np.ndarray
    sigma_n: np.ndarray = None
    sigma_n_se: np.ndarray = None
    beta: float = None
    n: int = None
    reps: int = 0


def population_sigma_mc(copula_sampler, mc_reps, rng, n=None, batches=20):
    """Estimate the population covariance coefficients of an exchangeable
    copula by Monte Carlo.

    ``copula_sampler(rng, size)`` must return a (size, 4) array
    distributed as four exchangeable coordinates of the copula.  The
    coefficients sigma = (sigma_0, sigma_1, sigma_2) give the asymptotic
    covariance (entry sigma_c at overlap c); with ``n`` set, the exact
    finite-n coefficients are estimated as well.

    Each bivariate/trivariate/quadrivariate orthant probability entering
    the moments is replaced by the indicator of an independent copy
    falling inside the orthant, so no explicit distribution function is
    needed.  Standard errors come from ``batches`` batch means.
    """
    if mc_reps < 1000:
        raise ValueError("mc_reps must be at least 1000, got %d" % mc_reps)
    if batches < 2 or mc_reps // batches < 1:
        raise ValueError("need at least 2 batches with at least 1 draw each")
    per = mc_reps // batches

    sig_batches = np.empty((batches, 3))
    sign_batches = np.empty((batches, 3)) if n is not None else None
    beta_acc = 0.0

    for b in range(batches):
        U = np.asarray(copula_sampler(rng, per), dtype=float)
        V = np.asarray(copula_sampler(rng, per), dtype=float)
        W = np.asarray(copula_sampler(rng, per), dtype=float)
        if U.shape != (per, 4) or V.shape != (per, 4) or W.shape != (per, 4):
            raise ValueError("copula_sampler must return a (size, 4) array")

        # orthant indicators of the independent copies at the U draw
        def lower(M, u_cols, m_count):
            ind = np.ones(per, dtype=bool)
            for c in range(m_count):
                ind &= M[:, c] <= U[:, u_cols[c]]
            return ind

        def upper2(M, u_cols):
            return (M[:, 0] > U[:, u_cols[0]]) & (M[:, 1] > U[:, u_cols[1]])

        c12_v = lower(V, (0, 1), 2)
        cb12_v = upper2(V, (0, 1))
        c12_w = lower(W, (0, 1), 2)
        cb12_w = upper2(W, (0, 1))
        c34_w = lower(W, (2, 3), 2)
        cb34_w = upper2(W, (2, 3))
        c23_w = lower(W, (1, 2), 2)
        cb23_w = upper2(W, (1, 2))
        c3_v = lower(V, (0, 1, 2), 3)
        c4_v = lower(V, (0, 1, 2, 3), 4)

        # overlap-2: both kernel factors at the pair (U1, U2)
        t2 = [
            np.mean(c12_v & c12_w),
            np.mean(cb12_v & c12_w),
            np.mean(c12_v & cb12_w),
            np.mean(cb12_v & cb12_w),
            np.mean(c12_v),  # the bivariate moment, also gives beta
            0.0,
        ]
        # overlap-1: pairs (U1, U2) and (U2, U3)
        t1 = [
            np.mean(c12_v & c23_w),
            np.mean(cb12_v & c23_w),
            np.mean(c12_v & cb23_w),
            np.mean(cb12_v & cb23_w),
            np.mean(c3_v),
            0.0,
        ]
        # overlap-0: pairs (U1, U2) and (U3, U4)
        t0 = [
            np.mean(c12_v & c34_w),
            np.mean(cb12_v & c34_w),
            np.mean(c12_v & cb34_w),
            np.mean(cb12_v & cb34_w),
            np.mean(c4_v),
            np.mean(c12_v.astype(float) - 2.0 * c3_v + c4_v),
        ]

        beta_b = 4.0 * t2[4] - 1.0
        beta_acc += beta_b
        shift = 4.0 * (beta_b + 1.0) ** 2
        for c, t in enumerate((t0, t1, t2)):
            sig_batches[b, c] = 16.0 * sum(t[:4]) - shift
        if n is not None:
            nn = float(n)
            fac = 16.0 / (nn * (nn - 1.0))
            tail = 2.0 * (2.0 * nn - 3.0) / (nn * (nn - 1.0)) * (beta_b + 1.0) ** 2
            for c, t in enumerate((t0, t1, t2)):
                sign_batches[b, c] = (
                    fac * ((nn - 2.0) * sum(t[:4]) + t[4] + t[5]) - tail
                )

    sigma = sig_batches.mean(axis=0)
    sigma_se = sig_batches.std(axis=0, ddof=1) / np.sqrt(batches)
    out = PopulationSigma(
        sigma=sigma,
        sigma_se=sigma_se,
        beta=beta_acc / batches,
        n=n,
        reps=per * batches,
    )
    if n is not None:
        out.sigma_n = sign_batches.mean(axis=0)
        out.sigma_n_se = sign_batches.std(axis=0, ddof=1) / np.sqrt(batches)
    return out


def save_sigma_json(path, estimate):
    """Write an exchangeable-structured estimate as JSON {s0, s1, s2, d}."""
    if estimate.kind != "exchangeable":
        raise ValueError("JSON export is for exchangeable-structured estimates")
    obj = {
        "s0": float(estimate.s[0]),
        "s1": float(estimate.s[1]),
        "s2": float(estimate.s[2]),
        "d": estimate.d,
        "n": estimate.n,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def load_sigma_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        obj = json.load(fh)
    return CovarianceEstimate(
        kind="exchangeable",
        d=int(obj["d"]),
        n=int(obj.get("n") or 0),
        s=np.array([obj["s0"], obj["s1"], obj["s2"]], dtype=float),
    )

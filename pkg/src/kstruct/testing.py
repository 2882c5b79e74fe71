"""Test statistics and p-value machinery.

Two statistics measure the misfit of tau_hat to the hypothesized linear
structure, both built from the whitened residual A^{-1/2}(tau_hat -
theta_hat): its squared Euclidean norm E and its max-norm M.  The
weighting A is either (1/n) I or an estimate of cov(tau_hat), and
A^{-1/2} always means the principal (symmetric) square root of the
pseudo-inverse -- the max statistic's entries depend on which root is
taken, so this choice is part of the definition.

P-values come from four schemes:

- a chi-square tail for E with covariance weighting (p - L degrees of
  freedom),
- Monte Carlo from a weighted chi-square mixture for E with identity
  weighting, the weights being the nonzero eigenvalues of the projected
  covariance (two closed-form weights in the exchangeable case),
- Monte Carlo over Gaussian draws with the appropriate null covariance
  for M, and
- a Gaussian multiplier bootstrap that replays the jackknife residuals,
  targeting the same law without sampling from an estimated matrix.

Monte Carlo p-values use the plain exceedance proportion with a strict
inequality; a plus-one correction is available as an option but off by
default.
"""

import hashlib
import json
import warnings as _warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ._version import __version__
from .covariance import (
    jackknife_cov,
    psd_power,
    structured_jackknife_exchangeable,
    structured_jackknife_partition,
)
from .indexing import (
    DesignMatrix,
    Partition,
    _pairs0,
    block_membership_matrix,
    pair_count,
)
from .kendall import _tied_columns, tau_and_leave_one_out
from .projection import gamma_projection, pseudoinverse_design
from .sblock import SingularError, eigenvalues, gamma_apply, gamma_star_apply

__all__ = [
    "TestOptions",
    "TestReport",
    "statistic_euclidean",
    "statistic_max",
    "pvalue_chisq",
    "pvalue_mixture_mc",
    "pvalue_max_mc",
    "mixture_spectrum",
    "sample_null_gaussian",
    "multiplier_bootstrap_replicates",
    "run_test",
]

_MERGE_RTOL = 1e-8
_DROP_RTOL = 1e-10

_DISTORTION_NOTE = (
    "covariance weighting with the unstructured jackknife is known to "
    "distort the level of design-matrix tests; rejection rates can far "
    "exceed the nominal level even under the null"
)


@dataclass
class TestOptions:
    """User choices for one test run.

    statistic: "euclidean" or "max".
    weighting: "sigma" (estimated covariance) or "identity" ((1/n) I).
    estimator: "structured" (partition hypotheses) or "jackknife"
        (design-matrix hypotheses).
    replicates: Monte Carlo draws for simulated p-values (>= 100).
    seed: required; every report echoes it.
    plus_one: use the conservative (1+hits)/(1+N) Monte Carlo p-value.
    ties: "error" or "jitter".
    null_draws: "auto", "gaussian", or "bootstrap" -- how Monte Carlo
        null replicates are produced when more than one scheme applies.
    """

    statistic: str = "euclidean"
    weighting: str = "sigma"
    estimator: str = "structured"
    replicates: int = 5000
    seed: int = None
    plus_one: bool = False
    ties: str = "error"
    tie_seed: int = 0
    null_draws: str = "auto"

    def validate(self):
        if self.statistic not in ("euclidean", "max"):
            raise ValueError("statistic must be 'euclidean' or 'max'")
        if self.weighting not in ("identity", "sigma"):
            raise ValueError("weighting must be 'identity' or 'sigma'")
        if self.estimator not in ("jackknife", "structured"):
            raise ValueError("estimator must be 'jackknife' or 'structured'")
        if int(self.replicates) < 100:
            raise ValueError("replicates must be at least 100")
        if self.seed is None:
            raise ValueError("a seed is required so reports are reproducible")
        if self.ties not in ("error", "jitter"):
            raise ValueError("ties must be 'error' or 'jitter'")
        if self.null_draws not in ("auto", "gaussian", "bootstrap"):
            raise ValueError("null_draws must be 'auto', 'gaussian' or 'bootstrap'")

    def to_dict(self):
        return {
            "statistic": self.statistic,
            "weighting": self.weighting,
            "estimator": self.estimator,
            "replicates": int(self.replicates),
            "seed": int(self.seed) if self.seed is not None else None,
            "plus_one": bool(self.plus_one),
            "ties": self.ties,
            "tie_seed": int(self.tie_seed),
            "null_draws": self.null_draws,
        }


@dataclass
class TestReport:
    """Outcome of one test, JSON-serializable."""

    statistic: str
    weighting: str
    estimator: str
    value: float
    p_value: float
    method: str
    N: int
    seed: int
    df: int = None
    eigenvalues: list = None
    warnings: list = field(default_factory=list)
    hypothesis: dict = None
    n: int = None
    d: int = None
    p: int = None
    L: int = None
    version: str = __version__
    input_digest: str = None
    options: dict = None

    def to_dict(self):
        out = {
            "statistic": self.statistic,
            "weighting": self.weighting,
            "estimator": self.estimator,
            "value": self.value,
            "p_value": self.p_value,
            "method": self.method,
            "N": self.N,
            "seed": self.seed,
            "warnings": list(self.warnings),
            "df": self.df,
            "hypothesis": self.hypothesis,
            "n": self.n,
            "d": self.d,
            "p": self.p,
            "L": self.L,
            "version": self.version,
            "input_digest": self.input_digest,
            "options": self.options,
        }
        if self.eigenvalues is not None:
            out["eigenvalues"] = [[float(l), int(m)] for l, m in self.eigenvalues]
        return out

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
            fh.write("\n")


# ---------------------------------------------------------------------------
# whitening


def _clipped_values(s, d):
    vals = np.asarray(eigenvalues(s, d).values, dtype=float)
    return np.maximum(vals, 0.0)


def _structured_whiten(s, d, r, exponent):
    """(pseudo) S^exponent r for an S-block weighting, negative class
    eigenvalues treated as zero."""
    if d < 4:
        raise ValueError("structured weighting needs d >= 4; use a dense matrix")
    vals = _clipped_values(s, d)
    top = vals.max()
    if top <= 0.0:
        raise SingularError("weighting matrix has zero rank")
    coef = np.where(vals > _DROP_RTOL * top, vals, np.inf) ** exponent
    coef[~np.isfinite(coef)] = 0.0
    g = gamma_apply(r)
    gs = gamma_star_apply(r, d)
    return coef[0] * g + coef[1] * (gs - g) + coef[2] * (r - gs)


def _dense_whiten(A, r, exponent):
    A = np.asarray(A, dtype=float)
    w, V = np.linalg.eigh((A + A.T) / 2.0)
    top = max(float(w.max()), 0.0)
    keep = w > _DROP_RTOL * top
    if top <= 0.0 or not keep.any():
        raise SingularError("weighting matrix has zero rank")
    Vk = V[:, keep]
    return (Vk * w[keep] ** exponent) @ (Vk.T @ r)


def _whitened_residual(tau, theta, weighting, exponent):
    r = np.asarray(tau, dtype=float) - np.asarray(theta, dtype=float)
    if weighting is None:
        return r
    if np.isscalar(weighting):
        a = float(weighting)
        if a <= 0.0:
            raise ValueError("scalar weighting must be positive")
        return a**exponent * r
    if isinstance(weighting, tuple) and weighting[0] == "sblock":
        _, s, d = weighting
        return _structured_whiten(np.asarray(s, dtype=float), d, r, exponent)
    return _dense_whiten(weighting, r, exponent)


def statistic_euclidean(tau, theta, weighting=None):
    """E = squared Euclidean norm of the whitened residual.

    ``weighting`` is the matrix A: a positive scalar a means a*I (so
    1/n gives E = n||tau-theta||^2), a dense symmetric matrix is
    pseudo-inverted on its positive eigenspace, and ("sblock", s, d)
    uses the O(p) structured inverse.
    """
    # the quadratic form needs A^{-1}, i.e. whitening applied once with
    # exponent -1 against the raw residual
    r = np.asarray(tau, dtype=float) - np.asarray(theta, dtype=float)
    z = _whitened_residual(tau, theta, weighting, -1.0)
    return float(r @ z)


def statistic_max(tau, theta, weighting=None):
    """M = max absolute entry of A^{-1/2}(tau - theta), principal root."""
    z = _whitened_residual(tau, theta, weighting, -0.5)
    return float(np.abs(z).max())


# ---------------------------------------------------------------------------
# p-values


def _mc_pvalue(hits, N, plus_one):
    if plus_one:
        return (1.0 + hits) / (1.0 + N)
    return hits / N


def pvalue_chisq(E, p, L):
    """Upper chi-square tail with p - L degrees of freedom."""
    if p <= L:
        raise ValueError("need p > L for a chi-square reference, got p=%d L=%d" % (p, L))
    return float(stats.chi2.sf(E, p - L))


def mixture_spectrum(matrix, merge_rtol=_MERGE_RTOL, drop_rtol=_DROP_RTOL):
    """Distinct positive eigenvalues of a symmetric matrix with their
    multiplicities.

    Eigenvalues within relative distance ``merge_rtol`` of each other are
    merged (multiplicities summed, value averaged); eigenvalues below
    ``drop_rtol`` times the largest are dropped.  Returns a list of
    (value, multiplicity) pairs sorted decreasing; empty if the matrix
    has no positive eigenvalue.
    """
    matrix = np.asarray(matrix, dtype=float)
    w = np.linalg.eigvalsh((matrix + matrix.T) / 2.0)
    top = float(w.max()) if w.size else 0.0
    if top <= 0.0:
        return []
    w = np.sort(w[w > drop_rtol * top])[::-1]
    out = []
    for lam in w:
        if out and (out[-1][0] - lam) <= merge_rtol * out[-1][0]:
            val, mult = out[-1]
            out[-1] = ((val * mult + lam) / (mult + 1), mult + 1)
        else:
            out.append((float(lam), 1))
    return [(float(v), int(m)) for v, m in out]


def pvalue_mixture_mc(E, spectrum, N, rng, plus_one=False):
    """Monte Carlo tail probability of sum_r lambda_r chi2(nu_r) at E."""
    if not spectrum:
        raise ValueError("mixture spectrum is empty")
    N = int(N)
    if N < 100:
        raise ValueError("need at least 100 Monte Carlo replicates")
    total = np.zeros(N)
    for lam, nu in spectrum:
        if lam <= 0.0:
            raise ValueError("mixture weights must be positive, got %g" % lam)
        total += lam * rng.chisquare(int(nu), N)
    return _mc_pvalue(int((total > E).sum()), N, plus_one)


def _sblock_colored(s, d, G):
    # color iid normals to covariance S(s); negative class eigenvalues of an
    # estimated triple are treated as zero
    vals = _clipped_values(s, d)
    g = gamma_apply(G)
    gs = gamma_star_apply(G, d)
    root = np.sqrt(vals)
    return root[0] * g + root[1] * (gs - g) + root[2] * (G - gs)


def _additive_eligible(s):
    s0, s1, s2 = (float(v) for v in s)
    return s1 >= s0 >= 0.0 and s2 - 2.0 * s1 + s0 >= 0.0


def sample_null_gaussian(spec, N, rng, method="auto"):
    """N Gaussian p-vectors with a prescribed null covariance.

    ``spec`` selects the target:

    - ("identity", p): standard normal draws;
    - ("projector", P): covariance equal to the symmetric idempotent P
      (draws are G @ P, no factorization);
    - ("dense", A): covariance A via its principal square root;
    - ("sblock", s, d): covariance S(s), O(p) per draw.  The additive
      construction (one global, d per-variable and p per-pair normals)
      is used when s1 >= s0 >= 0 and s2 - 2 s1 + s0 >= 0; otherwise the
      draws fall back to coloring by eigenspace components, which also
      handles the singular projected triples.  ``method`` can force
      "additive", "projection" (component coloring) or "dense".
    """
    N = int(N)
    kind = spec[0]
    if kind == "identity":
        return rng.standard_normal((N, int(spec[1])))
    if kind == "projector":
        P = np.asarray(spec[1], dtype=float)
        return rng.standard_normal((N, P.shape[0])) @ P
    if kind == "dense":
        A = np.asarray(spec[1], dtype=float)
        return rng.standard_normal((N, A.shape[0])) @ psd_power(A, 0.5)
    if kind != "sblock":
        raise ValueError("unknown sampler spec %r" % (spec[0],))

    _, s, d = spec
    s = np.asarray(s, dtype=float)
    p = pair_count(d)
    if method not in ("auto", "additive", "projection", "dense"):
        raise ValueError("method must be auto, additive, projection or dense")
    if method == "dense":
        from .sblock import materialize

        return rng.standard_normal((N, p)) @ psd_power(materialize(s, d), 0.5)
    if method in ("auto", "additive") and _additive_eligible(s):
        s0, s1, s2 = s
        ii0, jj0 = _pairs0(d)
        Z = np.sqrt(s2 - 2.0 * s1 + s0) * rng.standard_normal((N, p))
        V = rng.standard_normal((N, d))
        Z += np.sqrt(s1 - s0) * (V[:, ii0] + V[:, jj0])
        Z += np.sqrt(s0) * rng.standard_normal((N, 1))
        return Z
    return _sblock_colored(s, d, rng.standard_normal((N, p)))


def pvalue_max_mc(M, spec, N, rng, plus_one=False, draws=None, method="auto"):
    """Monte Carlo tail probability of the max statistic.

    Draws come from ``sample_null_gaussian(spec, N, rng, method)`` unless
    pre-generated draws (an (N, p) array, e.g. bootstrap replicates) are
    passed directly.
    """
    if draws is None:
        if int(N) < 100:
            raise ValueError("need at least 100 Monte Carlo replicates")
        draws = sample_null_gaussian(spec, N, rng, method=method)
    stat = np.abs(draws).max(axis=1)
    return _mc_pvalue(int((stat > M).sum()), stat.shape[0], plus_one)


def multiplier_bootstrap_replicates(
    data, design, N, rng, precomputed=None, ties="error", tie_seed=0
):
    """Gaussian multiplier replicates of the projected, scaled tau residual.

    Each replicate is (2 / (sqrt(n) (n-1))) (I - B B^+) times the
    multiplier-weighted sum of centered leave-one-out kernel sums.
    Conditional on the data the draws are zero-mean Gaussian with
    covariance n (I - B B^+) SigmaJ (I - B B^+), SigmaJ the jackknife
    estimate, so they can stand in for the null law of sqrt(n) times the
    projected residual.  ``design=None`` skips the projection.
    """
    if precomputed is None:
        tau, loo = tau_and_leave_one_out(data, ties=ties, tie_seed=tie_seed)
    else:
        tau, loo = precomputed
    n = loo.shape[0]
    if n < 3:
        raise ValueError("multiplier bootstrap needs n >= 3")
    D = (n - 1.0) * (loo - tau)
    W = rng.standard_normal((int(N), n))
    Z = (2.0 / (np.sqrt(n) * (n - 1.0))) * (W @ D)
    if design is not None:
        Bp = pseudoinverse_design(design)
        Z = Z - (Z @ Bp.T) @ design.matrix.T
    return Z


# ---------------------------------------------------------------------------
# orchestration


def _hypothesis_info(hypothesis, design):
    if isinstance(hypothesis, Partition):
        return {
            "type": "partition",
            "d": hypothesis.d,
            "groups": [list(g) for g in hypothesis.groups],
            "L": design.L,
        }
    return {
        "type": "design",
        "kind": design.kind,
        "p": design.p,
        "L": design.L,
    }


def _degenerate_fit(tau, theta):
    r = tau - theta
    scale = max(1.0, float(np.abs(tau).max()))
    return float(np.abs(r).max()) <= 1e-12 * scale


def run_test(data, hypothesis, options):
    """Run one structure test and return a TestReport.

    ``hypothesis`` is a Partition (the hypothesis that the Kendall
    matrix is invariant to permutations within groups, tested with
    structured covariance machinery) or a DesignMatrix (a general linear
    hypothesis tau = B beta with the dense jackknife).  ``options``
    selects the statistic, weighting, and p-value scheme; see
    TestOptions.
    """
    opts = options
    opts.validate()
    rng = np.random.default_rng(opts.seed)
    msgs = []

    X = np.asarray(data, dtype=float)
    digest = hashlib.sha256(np.ascontiguousarray(X).tobytes()).hexdigest()[:16]
    tau, loo = tau_and_leave_one_out(X, ties=opts.ties, tie_seed=opts.tie_seed)
    n, d = X.shape
    p = tau.shape[0]
    if opts.ties == "jitter":
        tied = _tied_columns(X)
        if tied:
            msgs.append(
                "tied values in column(s) %s were jittered before ranking" % tied
            )

    # -- hypothesis, covariance estimate, projection ------------------------
    if isinstance(hypothesis, Partition):
        part = hypothesis
        if part.d != d:
            raise ValueError(
                "partition is over %d variables, data has %d" % (part.d, d)
            )
        if opts.estimator != "structured":
            raise ValueError(
                "partition hypotheses use the structured estimator; to force "
                "the dense jackknife, pass the membership design matrix instead"
            )
        design = block_membership_matrix(part)
        exchangeable = part.n_groups == 1 and d >= 4
        if exchangeable:
            est = structured_jackknife_exchangeable(X, precomputed=(tau, loo))
            vals = np.asarray(eigenvalues(est.s, d).values)
            if vals.min() < -1e-10 * max(float(vals.max()), 0.0):
                msgs.append(
                    "structured covariance estimate is indefinite; negative "
                    "class eigenvalues were treated as zero"
                )
        else:
            est = structured_jackknife_partition(X, part, precomputed=(tau, loo))
        gamma = gamma_projection(design)  # = Gamma(A) for any matching A
    elif isinstance(hypothesis, DesignMatrix):
        design = hypothesis
        if design.p != p:
            raise ValueError(
                "design has %d rows but the data has %d pairs" % (design.p, p)
            )
        if opts.estimator != "jackknife":
            raise ValueError(
                "design-matrix hypotheses use the dense jackknife estimator; "
                "structured estimation needs a Partition hypothesis"
            )
        est = jackknife_cov(X, precomputed=(tau, loo))
        if opts.weighting == "sigma":
            msgs.append(_DISTORTION_NOTE)
            try:
                gamma = gamma_projection(design, est)
            except SingularError:
                fallback = gamma_projection(design)
                if _degenerate_fit(tau, fallback.apply(tau)):
                    gamma = fallback
                else:
                    raise
        else:
            gamma = gamma_projection(design)
    else:
        raise TypeError("hypothesis must be a Partition or a DesignMatrix")

    theta = gamma.apply(tau)
    exch = isinstance(hypothesis, Partition) and est.kind == "exchangeable"
    N = int(opts.replicates)
    df = None
    spectrum = None
    method = None

    if opts.weighting == "sigma":
        weight = ("sblock", est.s, d) if exch else est.matrix
    else:
        weight = 1.0 / n

    # -- statistic, with a guard for degenerate covariance + exact fit ------
    stat_fn = statistic_euclidean if opts.statistic == "euclidean" else statistic_max
    try:
        value = stat_fn(tau, theta, weight)
    except SingularError:
        if _degenerate_fit(tau, theta):
            value = 0.0
            msgs.append(
                "covariance estimate is degenerate and the hypothesis fits "
                "exactly; statistic treated as 0"
            )
        else:
            raise

    # -- p-value -------------------------------------------------------------
    if opts.statistic == "euclidean" and opts.weighting == "sigma":
        method = "chi-square"
        df = p - design.L
        p_value = pvalue_chisq(value, p, design.L)
        N = None
    elif opts.statistic == "euclidean":
        if opts.null_draws == "bootstrap":
            method = "bootstrap-mc"
            draws = multiplier_bootstrap_replicates(
                X, design, N, rng, precomputed=(tau, loo)
            )
            hits = int((np.einsum("ij,ij->i", draws, draws) > value).sum())
            p_value = _mc_pvalue(hits, N, opts.plus_one)
        else:
            method = "mixture-mc"
            if exch:
                vals = _clipped_values(est.s, d)
                spectrum = [
                    (n * float(vals[1]), d - 1),
                    (n * float(vals[2]), p - d),
                ]
                spectrum = [(l, m) for l, m in spectrum if l > 0.0 and m > 0]
            else:
                P = np.eye(p) - gamma.dense()
                spectrum = mixture_spectrum(n * (P @ est.dense() @ P))
            if not spectrum:
                p_value = 1.0 if value <= 0.0 else 0.0
                msgs.append("projected covariance estimate is zero")
            else:
                p_value = pvalue_mixture_mc(value, spectrum, N, rng, opts.plus_one)
    else:  # max statistic
        if opts.weighting == "sigma":
            method = "max-mc"
            if isinstance(hypothesis, Partition):
                # null covariance of the whitened residual is I - B B^+
                G = rng.standard_normal((N, p))
                draws = G - gamma.apply(G)
            else:
                C = psd_power(est.matrix, -0.5) @ design.matrix
                Adag = np.eye(p) - C @ np.linalg.pinv(C.T @ C, rcond=1e-10) @ C.T
                draws = sample_null_gaussian(("projector", Adag), N, rng)
        else:
            use_boot = opts.null_draws == "bootstrap" or (
                opts.null_draws == "auto" and isinstance(hypothesis, DesignMatrix)
            )
            if use_boot:
                method = "bootstrap-mc"
                draws = multiplier_bootstrap_replicates(
                    X, design, N, rng, precomputed=(tau, loo)
                )
            else:
                method = "max-mc"
                if exch:
                    vals = np.asarray(eigenvalues(est.s, d).values, dtype=float)
                    t = n * (est.s - vals[0] / p)
                    draws = sample_null_gaussian(("sblock", t, d), N, rng)
                else:
                    P = np.eye(p) - gamma.dense()
                    target = n * (P @ est.dense() @ P)
                    draws = sample_null_gaussian(("dense", target), N, rng)
        hits = int((np.abs(draws).max(axis=1) > value).sum())
        p_value = _mc_pvalue(hits, N, opts.plus_one)

    if value == 0.0:
        # the statistic is at its minimum; no evidence against the null
        p_value = 1.0

    return TestReport(
        statistic=opts.statistic,
        weighting=opts.weighting,
        estimator=opts.estimator,
        value=float(value),
        p_value=float(p_value),
        method=method,
        N=N,
        seed=int(opts.seed),
        df=df,
        eigenvalues=spectrum,
        warnings=msgs,
        hypothesis=_hypothesis_info(hypothesis, design),
        n=n,
        d=d,
        p=p,
        L=design.L,
        version=__version__,
        input_digest=digest,
        options=opts.to_dict(),
    )

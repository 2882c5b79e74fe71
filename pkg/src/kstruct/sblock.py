"""Three-coefficient structured matrices on pair space.

A symmetric p x p matrix whose (k, l) entry depends only on how many
variables the pairs k and l share lives in a three-dimensional algebra:
entry s2 on the diagonal (overlap 2), s1 where the pairs share one
variable, s0 where they are disjoint.  Such matrices have at most three
distinct eigenvalues with known eigenspaces, so matrix-vector products,
inverses and arbitrary real powers cost O(p d) instead of O(p^3):

    delta_1 = s2 + 2(d-2) s1 + (p-2d+3) s0      on the constant vector,
    delta_2 = s2 + (d-4) s1 - (d-3) s0          multiplicity d-1,
    delta_3 = s2 - 2 s1 + s0                    multiplicity p-d.

The eigenprojections are the grand-mean averager Gamma = J/p and the
"star" projector Gamma* onto per-variable additive effects; delta_2
lives on range(Gamma*) minus the constants and delta_3 on the
complement of range(Gamma*).

For d = 3 there are no disjoint pairs, so s0 is immaterial and the
matrix has two eigenvalues (multiplicities 1 and 2); inverses adopt the
convention t0 := t1.  For d = 2 everything is the scalar s2.
"""

from collections import namedtuple

import numpy as np

from .indexing import _incidence, _pairs0, pair_count

__all__ = [
    "SingularError",
    "Spectrum",
    "eigenvalues",
    "materialize",
    "matvec",
    "inverse",
    "apply_power",
    "gamma_star_apply",
    "gamma_apply",
    "is_pd_all_d",
]

# relative cutoff below which an eigenvalue counts as zero
_SINGULAR_RTOL = 1e-14

Spectrum = namedtuple("Spectrum", ["values", "multiplicities"])


class SingularError(ValueError):
    """A structured matrix has a (near-)zero eigenvalue where it may not."""


def _coeffs(s):
    s = np.asarray(s, dtype=float)
    if s.shape != (3,):
        raise ValueError("expected three coefficients (s0, s1, s2)")
    return float(s[0]), float(s[1]), float(s[2])


def eigenvalues(s, d):
    """Closed-form spectrum of the structured matrix with coefficients s.

    Returns a Spectrum(values=(delta_1, delta_2, delta_3),
    multiplicities=(1, d-1, p-d)).  Multiplicity-zero slots (d = 2, 3)
    still carry the formula value; it is ignored by every consumer.
    """
    s0, s1, s2 = _coeffs(s)
    p = pair_count(d)
    if d == 2:
        return Spectrum((s2, s2, s2), (1, 0, 0))
    d1 = s2 + 2.0 * (d - 2) * s1 + (p - 2 * d + 3) * s0
    d2 = s2 + (d - 4.0) * s1 - (d - 3.0) * s0
    d3 = s2 - 2.0 * s1 + s0
    return Spectrum((d1, d2, d3), (1, d - 1, p - d))


def materialize(s, d, max_d=60):
    """Dense p x p matrix with entry s_c at overlap count c.

    Refuses d beyond ``max_d`` (p grows quadratically; the point of the
    structured representation is to avoid dense work).
    """
    if d > max_d:
        raise ValueError(
            "refusing dense materialization for d=%d > max_d=%d" % (d, max_d)
        )
    s0, s1, s2 = _coeffs(s)
    ii0, jj0 = _pairs0(d)
    a, b = ii0[:, None], jj0[:, None]
    overlap = (
        (a == a.T).astype(np.int8)
        + (a == b.T)
        + (b == a.T)
        + (b == b.T)
    )
    return np.choose(overlap, (s0, s1, s2))


def matvec(s, d, v):
    """Structured matrix times vector in O(p d).

    ``v`` may be a (p,) vector or a (p, m) matrix of columns.
    """
    s0, s1, s2 = _coeffs(s)
    v = np.asarray(v, dtype=float)
    p = pair_count(d)
    if v.shape[0] != p:
        raise ValueError("vector has length %d, expected p=%d" % (v.shape[0], p))
    ii0, jj0 = _pairs0(d)
    if v.ndim == 1:
        colsum = np.bincount(ii0, weights=v, minlength=d) + np.bincount(
            jj0, weights=v, minlength=d
        )
    else:
        colsum = _incidence(d).T @ v
    total = v.sum(axis=0)
    return (
        (s2 - 2.0 * s1 + s0) * v
        + (s1 - s0) * (colsum[ii0] + colsum[jj0])
        + s0 * total
    )


def _active(spec):
    """Eigenvalues with nonzero multiplicity."""
    return [val for val, m in zip(spec.values, spec.multiplicities) if m > 0]


def inverse(s, d):
    """Coefficients of the inverse structured matrix.

    Solves the 3 x 3 linear system mapping coefficients to eigenvalues.
    Raises SingularError when an active eigenvalue is within 1e-14
    (relative) of zero.  For d = 3 the undetermined s0 follows the
    convention t0 := t1; for d = 2 the result is (0, 0, 1/s2).
    """
    s0, s1, s2 = _coeffs(s)
    spec = eigenvalues(s, d)
    active = _active(spec)
    top = max(abs(v) for v in active)
    if top == 0.0 or min(abs(v) for v in active) < _SINGULAR_RTOL * top:
        raise SingularError(
            "structured matrix is numerically singular (eigenvalues %r)"
            % (spec.values,)
        )
    if d == 2:
        return np.array([0.0, 0.0, 1.0 / s2])
    d1, d2, d3 = spec.values
    if d == 3:
        a = 1.0 / d2
        b = (1.0 / d1 - 1.0 / d2) / 3.0
        return np.array([b, b, a + b])
    p = pair_count(d)
    M = np.array(
        [
            [p - 2.0 * d + 3.0, 2.0 * (d - 2.0), 1.0],
            [-(d - 3.0), d - 4.0, 1.0],
            [1.0, -2.0, 1.0],
        ]
    )
    return np.linalg.solve(M, np.array([1.0 / d1, 1.0 / d2, 1.0 / d3]))


def gamma_apply(v):
    """Grand-mean projector J/p applied to v (last-axis-is-p layout)."""
    v = np.asarray(v, dtype=float)
    return np.broadcast_to(
        v.mean(axis=-1, keepdims=True), v.shape
    ).copy()


def gamma_star_apply(v, d):
    """Star projector onto per-variable additive effects, in O(p d).

    (Gamma* v)_k = (d-1)/(d-2) (Vbar_{i_k} + Vbar_{j_k}) - d/(d-2) vbar,
    where Vbar_j averages the entries containing variable j.  Only
    defined for d >= 4 (for d = 3 it would be the identity).

    ``v`` may be (p,) or (..., p); the projector acts on the last axis.
    """
    if d < 4:
        raise ValueError("the star projector needs d >= 4, got d=%d" % d)
    v = np.asarray(v, dtype=float)
    p = pair_count(d)
    if v.shape[-1] != p:
        raise ValueError("vector has length %d, expected p=%d" % (v.shape[-1], p))
    ii0, jj0 = _pairs0(d)
    if v.ndim == 1:
        colsum = np.bincount(ii0, weights=v, minlength=d) + np.bincount(
            jj0, weights=v, minlength=d
        )
    else:
        colsum = v @ _incidence(d)
    colmean = colsum / (d - 1.0)
    vbar = v.mean(axis=-1, keepdims=v.ndim > 1)
    out = (d - 1.0) / (d - 2.0) * (colmean[..., ii0] + colmean[..., jj0])
    return out - d / (d - 2.0) * vbar


def apply_power(s, d, v, exponent, pseudo=False):
    """Apply a real power of the structured matrix to v via its spectrum.

    Decomposes v into the three eigencomponents and scales each by
    delta^exponent.  With ``pseudo=True``, components whose eigenvalue is
    within 1e-14 (relative) of zero are dropped instead of raising, which
    implements Moore-Penrose pseudo-powers (used e.g. to draw from the
    singular null covariance via exponent 0.5).

    ``v`` may be (p,) or (..., p) with pair space on the last axis.
    """
    spec = eigenvalues(s, d)
    v = np.asarray(v, dtype=float)
    p = pair_count(d)
    if v.shape[-1] != p:
        raise ValueError("vector has length %d, expected p=%d" % (v.shape[-1], p))

    active = _active(spec)
    top = max(abs(val) for val in active)
    scales = []
    for val, mult in zip(spec.values, spec.multiplicities):
        if mult <= 0:
            scales.append(0.0)
            continue
        if top == 0.0 or abs(val) <= _SINGULAR_RTOL * top:
            if exponent < 0 and not pseudo:
                raise SingularError(
                    "cannot apply power %g of a singular structured matrix; "
                    "pass pseudo=True for the Moore-Penrose convention"
                    % exponent
                )
            scales.append(0.0 if (pseudo or exponent > 0) else None)
            if scales[-1] is None:
                # exponent == 0 of an exact zero: keep the component
                scales[-1] = 1.0
            continue
        if val < 0 and exponent != int(exponent):
            raise SingularError(
                "fractional power %g of a structured matrix with negative "
                "eigenvalue %g" % (exponent, val)
            )
        scales.append(float(val) ** exponent)

    c1, c2, c3 = scales
    w1 = gamma_apply(v)
    if d <= 3:
        # two eigenspaces: constants and their complement
        return c1 * w1 + c2 * (v - w1)
    star = gamma_star_apply(v, d)
    return c1 * w1 + c2 * (star - w1) + c3 * (v - star)


def is_pd_all_d(s0, s1, s2):
    """True when the coefficients give a positive definite matrix for
    every dimension d >= 4: s1 >= s0 >= 0 and s2 - s1 > s1 - s0."""
    return bool(s1 >= s0 >= 0.0 and (s2 - s1) > (s1 - s0))

"""Dense factorizations used by every filter.

All routines accept stacked input: an array of shape ``(..., n, N)`` is
treated as a batch of ``n x N`` matrices, which is how the benchmark
harness advances all Monte Carlo replicates at once.  The ``*_masked``
variants never raise on per-matrix failures; they return a boolean mask
over the batch instead, so one diverging replicate does not stop the rest.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import (
    InvalidInput,
    NotPositiveDefinite,
    NotPositiveSemiDefinite,
    SingularInnovationCovariance,
)

EPS = np.finfo(float).eps

# eigenvalues in [-PSD_FAIL_TOL*|p|, 0) are treated as roundoff and clamped
PSD_CLAMP_TOL = 1e-12
PSD_FAIL_TOL = 1e-8


@dataclass(frozen=True)
class SvdFactors:
    """Orthogonal and diagonal factors of a covariance ``P = Q D Q^T``.

    ``d_sqrt`` holds the square roots of the diagonal of ``D`` (the singular
    values of any generalized square root of ``P``), non-increasing.
    """

    q: np.ndarray
    d_sqrt: np.ndarray

    @property
    def n(self) -> int:
        return self.q.shape[-1]

    def sqrt_factor(self) -> np.ndarray:
        """Return ``Q D^{1/2}``."""
        return self.q * self.d_sqrt[..., None, :]

    def reconstruct(self) -> np.ndarray:
        s = self.sqrt_factor()
        return s @ np.swapaxes(s, -1, -2)

    def take(self, idx) -> "SvdFactors":
        return SvdFactors(self.q[idx], self.d_sqrt[idx])


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor ``L`` with ``P = L L^T``."""

    l: np.ndarray

    @property
    def n(self) -> int:
        return self.l.shape[-1]

    def sqrt_factor(self) -> np.ndarray:
        return self.l

    def reconstruct(self) -> np.ndarray:
        return self.l @ np.swapaxes(self.l, -1, -2)

    def take(self, idx) -> "CholeskyFactor":
        return CholeskyFactor(self.l[idx])


def _t(a: np.ndarray) -> np.ndarray:
    return np.swapaxes(a, -1, -2)


def _finite_mask(a: np.ndarray) -> np.ndarray:
    return np.isfinite(a).all(axis=(-2, -1))


def _replace_bad(a: np.ndarray, bad: np.ndarray, fill: np.ndarray) -> np.ndarray:
    # LAPACK may raise on NaN input; swap bad members for a harmless matrix
    if not np.any(bad):
        return a
    a = a.copy()
    a[bad] = fill
    return a


def reduced_svd_masked(pre_array: np.ndarray) -> tuple[SvdFactors, np.ndarray]:
    """Left singular factors of an ``n x N`` pre-array (``n <= N``).

    Returns ``(SvdFactors(W, S), bad)`` with ``T T^T = W S^2 W^T``; the
    right factor is never formed.  For wide arrays the pre-array is first
    compressed by an orthogonal LQ step (``T = L Q``), which leaves
    ``T T^T`` unchanged and shrinks the SVD to ``n x n``.
    """
    t = np.asarray(pre_array, dtype=float)
    n, big_n = t.shape[-2:]
    if n > big_n:
        raise InvalidInput(f"pre-array must have rows <= cols, got {n}x{big_n}")
    bad = ~_finite_mask(t)
    t = _replace_bad(t, bad, np.eye(n, big_n))
    if big_n == n:
        w, s, _ = np.linalg.svd(t)
        return SvdFactors(w, s), bad
    # T^T = Q R gives T = R^T Q^T, so the left factor of T is the right
    # factor of the contiguous R (cheaper than factoring the view R^T)
    r = np.linalg.qr(_t(t), mode="r")
    _, s, vh = np.linalg.svd(r)
    return SvdFactors(_t(vh), s), bad


def reduced_svd(pre_array: np.ndarray) -> SvdFactors:
    """Strict version of :func:`reduced_svd_masked` (raises ``InvalidInput``)."""
    factors, bad = reduced_svd_masked(pre_array)
    if np.any(bad):
        raise InvalidInput("pre-array contains non-finite entries")
    return factors


def svd_symmetric_masked(p: np.ndarray) -> tuple[SvdFactors, np.ndarray]:
    """SVD factors of a symmetric PSD matrix via its eigendecomposition.

    The input is symmetrized first.  Negative eigenvalues no smaller than
    ``-PSD_FAIL_TOL * |p|`` are clamped to zero; anything below flags the
    matrix as not positive semi-definite.
    """
    p = np.asarray(p, dtype=float)
    n = p.shape[-1]
    bad = ~_finite_mask(p)
    p = _replace_bad(p, bad, np.eye(n))
    p = 0.5 * (p + _t(p))
    lam, q = np.linalg.eigh(p)
    lam = lam[..., ::-1]
    q = q[..., ::-1]
    scale = np.abs(lam).max(axis=-1)
    bad = bad | (lam[..., -1] < -PSD_FAIL_TOL * scale)
    d_sqrt = np.sqrt(np.clip(lam, 0.0, None))
    return SvdFactors(q, d_sqrt), bad


def svd_symmetric(p: np.ndarray) -> SvdFactors:
    factors, bad = svd_symmetric_masked(p)
    if np.any(bad):
        raise NotPositiveSemiDefinite("matrix has a significantly negative eigenvalue")
    return factors


def cholesky_masked(p: np.ndarray) -> tuple[CholeskyFactor, np.ndarray]:
    """Lower Cholesky factor (reads the lower triangle only).

    Members with a non-positive pivot are flagged and their factor is left
    as the identity.
    """
    p = np.asarray(p, dtype=float)
    n = p.shape[-1]
    bad = ~_finite_mask(p)
    p = _replace_bad(p, bad, np.eye(n))
    try:
        return CholeskyFactor(np.linalg.cholesky(p)), bad
    except np.linalg.LinAlgError:
        pass
    batch = p.shape[:-2]
    l = np.broadcast_to(np.eye(n), p.shape).copy()
    bad = np.array(bad, copy=True)
    for idx in np.ndindex(*batch):
        try:
            l[idx] = np.linalg.cholesky(p[idx])
        except np.linalg.LinAlgError:
            bad[idx] = True
    return CholeskyFactor(l), bad


def cholesky(p: np.ndarray) -> CholeskyFactor:
    factor, bad = cholesky_masked(p)
    if np.any(bad):
        raise NotPositiveDefinite("non-positive pivot in Cholesky factorization")
    return factor


def triangularize(pre_array: np.ndarray) -> CholeskyFactor:
    """Lower-triangular ``L`` with ``L L^T = T T^T`` by Householder QR of ``T^T``.

    Column signs are fixed so the diagonal is non-negative.
    """
    t = np.asarray(pre_array, dtype=float)
    n = t.shape[-2]
    bad = ~_finite_mask(t)
    t = _replace_bad(t, bad, np.eye(n, t.shape[-1]))
    r = np.linalg.qr(_t(t), mode="r")[..., :n, :]
    l = _t(r)
    sign = np.where(np.diagonal(l, axis1=-2, axis2=-1) < 0, -1.0, 1.0)
    l = l * sign[..., None, :]
    if np.any(bad):
        l = l.copy()
        l[bad] = np.nan
    return CholeskyFactor(l)


def apply_inverse_via_svd_masked(
    f: SvdFactors, rhs: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Compute ``rhs Q D^{-1} Q^T`` with ``D = diag(d_sqrt^2)``.

    A member is flagged singular when its smallest ``d_sqrt`` is not above
    ``eps * max(d_sqrt)``; its result is garbage and must be discarded.
    """
    d_sqrt = f.d_sqrt
    bad = d_sqrt.min(axis=-1) <= EPS * d_sqrt.max(axis=-1)
    d = np.where(bad[..., None], 1.0, d_sqrt) ** 2
    out = ((rhs @ f.q) / d[..., None, :]) @ _t(f.q)
    return out, bad


def apply_inverse_via_svd(f: SvdFactors, rhs: np.ndarray) -> np.ndarray:
    out, bad = apply_inverse_via_svd_masked(f, rhs)
    if np.any(bad):
        raise SingularInnovationCovariance("diagonal SVD factor has a zero entry")
    return out


def condition_number(f: SvdFactors) -> np.ndarray | float:
    """Spectral condition number ``(max d_sqrt / min d_sqrt)^2`` of the factored matrix."""
    hi = f.d_sqrt.max(axis=-1)
    lo = f.d_sqrt.min(axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(lo > 0, (hi / np.where(lo > 0, lo, 1.0)) ** 2, np.inf)
    return float(c) if c.ndim == 0 else c

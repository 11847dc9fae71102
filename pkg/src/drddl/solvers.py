"""Numerical primitives: soft thresholding, least squares, ISTA, IRLS.

Matrices follow the column convention used throughout the package: one
sample (or one coefficient vector) per column.  The squared data term is
``||Y - D Z||_F^2`` with no 1/2 factor, which fixes the ISTA step and
threshold below.
"""

from dataclasses import dataclass, field
import logging
import warnings

import numpy as np

from . import _kernels
from .errors import DegenerateInput, NumericalError

log = logging.getLogger(__name__)

PINV_RCOND = 1e-10
ISTA_MAX_ITERS = 500
ISTA_TOL = 1e-8
IRLS_MAX_ITERS = 50
IRLS_EPS = 1e-6
IRLS_TOL = 1e-8
POWER_MAX_ITERS = 200
POWER_TOL = 1e-12
LIPSCHITZ_SLACK = 1e-6


@dataclass(frozen=True)
class IstaConfig:
    """Settings for :func:`ista`.

    ``lam`` weights the l1 penalty, ``tol`` is the relative change in the
    objective below which a column is considered converged.
    """

    lam: float = 0.0
    max_iters: int = ISTA_MAX_ITERS
    tol: float = ISTA_TOL

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not self.tol >= 0:
            raise ValueError(f"tol must be >= 0, got {self.tol}")


@dataclass
class SolveReport:
    iterations: int
    objective_trace: list = field(default_factory=list)
    converged: bool = False


def as_matrix(A, name="matrix"):
    """Return ``A`` as a finite 2-D float64 array (vectors become columns)."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim == 1:
        A = A[:, None]
    if A.ndim != 2 or A.shape[0] < 1 or A.shape[1] < 1:
        raise DegenerateInput(f"{name} must be a non-empty 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"{name} contains non-finite entries")
    return A


def check_finite(A, what):
    if not np.all(np.isfinite(A)):
        raise NumericalError(f"non-finite values in {what}")
    return A


def soft_threshold(x, tau):
    """Elementwise ``sign(x) * max(|x| - tau, 0)``; works on scalars and arrays."""
    if tau < 0:
        raise ValueError(f"threshold must be nonnegative, got {tau}")
    x = np.asarray(x, dtype=np.float64)
    out = np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)
    return out.item() if out.ndim == 0 else out


def pinv(A):
    """Moore-Penrose pseudo-inverse with relative cutoff ``PINV_RCOND``."""
    A = np.asarray(A, dtype=np.float64)
    try:
        return np.linalg.pinv(A, rcond=PINV_RCOND)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD failed to converge for pseudo-inverse: {exc}") from exc


def least_squares(A, Y):
    """Minimum-norm ``Z`` minimizing ``||Y - A Z||_F^2``.

    Parameters
    ----------
    A : ndarray, shape (m, k)
    Y : ndarray, shape (m, n) or (m,)

    Returns
    -------
    Z : ndarray, shape (k, n), or (k,) when ``Y`` is a vector.
    """
    A = as_matrix(A, "A")
    vec = np.ndim(Y) == 1
    Y = as_matrix(Y, "Y")
    if A.shape[0] != Y.shape[0]:
        raise DegenerateInput(f"row mismatch: A is {A.shape}, Y is {Y.shape}")
    if not np.any(A):
        raise DegenerateInput("A is identically zero")
    Z = check_finite(pinv(A) @ Y, "least-squares solution")
    return Z[:, 0] if vec else Z


def least_squares_rhs(Y, Z):
    """Left factor ``D = Y pinv(Z)`` minimizing ``||Y - D Z||_F^2``."""
    Y = as_matrix(Y, "Y")
    Z = as_matrix(Z, "Z")
    if Y.shape[1] != Z.shape[1]:
        raise DegenerateInput(f"column mismatch: Y is {Y.shape}, Z is {Z.shape}")
    return check_finite(Y @ pinv(Z), "least-squares left factor")


def spectral_norm_sq(A, max_iters=POWER_MAX_ITERS, tol=POWER_TOL):
    """Largest eigenvalue of ``A^T A`` by power iteration.

    The start vector is drawn from a fixed seed so the result is
    deterministic.  Raises :class:`NumericalError` (with the best estimate
    on ``exc.estimate``) if the Rayleigh quotient has not settled to ``tol``
    relative change within ``max_iters``.
    """
    A = as_matrix(A, "A")
    if not np.any(A):
        raise DegenerateInput("spectral norm of a zero matrix")
    v = np.random.default_rng(0).standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(max_iters):
        w = A.T @ (A @ v)
        new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            # start vector in the null space; restart along a nonzero column
            v = A.T @ A[:, np.argmax(np.abs(A).sum(axis=0))]
            v /= np.linalg.norm(v)
            continue
        v = w / nw
        if est > 0 and abs(new - est) <= tol * new:
            return new
        est = new
    exc = NumericalError(f"power iteration did not converge in {max_iters} steps")
    exc.estimate = est
    raise exc


def lipschitz(D):
    """Step constant ``2 * sigma_max(D)^2`` plus a small safety margin."""
    try:
        s2 = spectral_norm_sq(D)
    except NumericalError:
        # slow spectral gap; an exact SVD is cheap at dictionary sizes
        s2 = float(np.linalg.norm(np.asarray(D, dtype=np.float64), 2) ** 2)
    L = 2.0 * s2
    return L + LIPSCHITZ_SLACK * L


def lasso_objective(D, Y, Z, lam):
    R = Y - D @ Z
    return float(np.sum(R * R) + lam * np.sum(np.abs(Z)))


def ista(D, Y, cfg=None, Z0=None, record=True):
    """Iterative soft thresholding for ``||Y - D Z||_F^2 + lam ||Z||_1``.

    Iterates ``Z <- soft(Z + D^T (Y - D Z) / L, lam / (2 L))`` with
    ``L = 2 sigma_max(D)^2 (1 + 1e-6)``.  Each column stops on its own once
    the relative change of its objective drops below ``cfg.tol``, so a
    column's answer is the same whether it is solved alone or in a batch.

    Returns ``(Z, report)``; ``report.objective_trace[0]`` is the objective
    at ``Z0`` and entry ``t`` the total objective after iteration ``t``.
    """
    cfg = cfg or IstaConfig()
    D = as_matrix(D, "D")
    vec = np.ndim(Y) == 1
    Y = as_matrix(Y, "Y")
    m, k = D.shape
    if Y.shape[0] != m:
        raise DegenerateInput(f"row mismatch: D is {D.shape}, Y is {Y.shape}")
    if not np.any(D):
        raise DegenerateInput("D is identically zero")
    if Z0 is None:
        Z0 = np.zeros((k, Y.shape[1]))
    else:
        Z0 = as_matrix(Z0, "Z0")
        if Z0.shape != (k, Y.shape[1]):
            raise DegenerateInput(f"Z0 has shape {Z0.shape}, expected {(k, Y.shape[1])}")
    L = lipschitz(D)
    Z, iters, trace = _kernels.ista_cols(D, Y, Z0, cfg.lam, L, cfg.max_iters, cfg.tol,
                                         record=record)
    check_finite(Z, "ISTA iterate")
    n_done = int(iters.max())
    report = SolveReport(iterations=n_done,
                         converged=bool(np.all(iters < cfg.max_iters)))
    if record:
        report.objective_trace = trace[: n_done + 1].sum(axis=1).tolist()
    return (Z[:, 0] if vec else Z), report


def irls_l1(D, y, max_iters=IRLS_MAX_ITERS, eps=IRLS_EPS, tol=IRLS_TOL, return_iters=False):
    """Least absolute deviations fit ``argmin_z ||y - D z||_1`` by IRLS.

    Starts from the least-squares solution, then solves
    ``(D^T W D + eps I) z = D^T W y`` with ``W = diag(1 / max(|r|, eps))``.
    A column stops when ``||dz|| <= tol ||z||``, after ``max_iters``, or when
    a reweighted step would raise the l1 cost (the previous iterate is
    kept, so the cost never increases).

    IRLS approaches the last zero residual of an l1 fit only slowly, so when
    ``m > k`` the result is finished by a short vertex walk: the ``k``
    smallest residuals are solved exactly, then single basis swaps with an
    exact line search are made while the cost drops.  The walk's answer is
    used only if it is cheaper than the IRLS iterate.

    ``y`` may be a vector or a matrix of independent columns.
    """
    D = as_matrix(D, "D")
    vec = np.ndim(y) == 1
    Y = as_matrix(y, "y")
    m, k = D.shape
    if Y.shape[0] != m:
        raise DegenerateInput(f"row mismatch: D is {D.shape}, y is {Y.shape}")
    if not np.any(D):
        raise DegenerateInput("D is identically zero")
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if m < k:
        warnings.warn(f"IRLS with fewer rows ({m}) than unknowns ({k}); "
                      "solution is not unique", RuntimeWarning, stacklevel=2)
    Z, iters, status = _kernels.irls_cols(D, pinv(D), Y, max_iters, eps, tol)
    bad = np.flatnonzero(status)
    if bad.size:
        raise NumericalError(f"weighted normal system not positive definite "
                             f"for {bad.size} column(s), first index {bad[0]}")
    check_finite(Z, "IRLS iterate")
    out = Z[:, 0] if vec else Z
    return (out, iters) if return_iters else out

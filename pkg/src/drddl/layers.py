"""Single-level dictionary training and the matching test-time encoders.

Three trainers cover the three positions in a greedy stack:

* :func:`train_robust_layer` -- l1 data fidelity, Split Bregman (first level);
* :func:`train_dense_layer` -- Euclidean fidelity, method of optimal directions;
* :func:`train_final_layer` -- Euclidean fidelity, l1-sparse codes and a
  linear map onto one-hot targets.

Each returns the fitted :class:`Layer`, its coefficients and a
:class:`TrainReport` whose ``objective`` starts at the initial point.
"""

from dataclasses import dataclass, field
import logging
import warnings

import numpy as np

from . import _kernels
from .activations import IDENTITY, Activation
from .errors import DegenerateInput
from .solvers import (IstaConfig, as_matrix, check_finite, irls_l1, ista,
                      least_squares, least_squares_rhs, pinv, soft_threshold)

log = logging.getLogger(__name__)

ATOM_NORM_CAP = 1.0
# block-coordinate sweeps for the norm-capped dictionary update
CAPPED_SWEEPS = 20


@dataclass
class Layer:
    """Dictionary ``D`` (in_dim x out_dim, atoms as columns) plus the
    activation applied to this level's synthesized output."""

    D: np.ndarray
    activation: Activation = IDENTITY

    def __post_init__(self):
        # one memory layout, so trained and reloaded layers round identically
        self.D = np.ascontiguousarray(self.D, dtype=np.float64)

    @property
    def in_dim(self):
        return self.D.shape[0]

    @property
    def out_dim(self):
        return self.D.shape[1]


@dataclass(frozen=True)
class RobustTrainConfig:
    """Split Bregman settings.

    ``mu_bregman`` is dimensionless: the data are divided by their RMS before
    the proximal step, so the threshold ``1 / (2 mu)`` is relative to the
    typical entry size.
    """

    mu_bregman: float = 10.0
    outer_iters: int = 50
    inner_iters: int = 1
    tol: float = 1e-3

    def __post_init__(self):
        if not self.mu_bregman > 0:
            raise ValueError(f"mu_bregman must be positive, got {self.mu_bregman}")
        if self.outer_iters < 1 or self.inner_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        if not self.tol > 0:
            raise ValueError(f"tol must be positive, got {self.tol}")


@dataclass(frozen=True)
class FinalTrainConfig:
    """``lam`` is the sparsity weight, ``mu_cls`` the classifier weight."""

    lam: float = 0.2
    mu_cls: float = 1.0
    iters: int = 30
    ista: IstaConfig = field(default_factory=IstaConfig)

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lam must be >= 0, got {self.lam}")
        if not self.mu_cls > 0:
            raise ValueError(f"mu_cls must be positive, got {self.mu_cls}")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")


@dataclass
class TrainReport:
    objective: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    residual: float = float("nan")
    proxy: np.ndarray = None


def init_dictionary(m, k, seed):
    """Seeded Gaussian dictionary with unit-norm columns."""
    D = np.random.default_rng(seed).standard_normal((m, k))
    return D / np.linalg.norm(D, axis=0)


def normalize_atoms(D, Z, cap=ATOM_NORM_CAP):
    """Scale atoms to norm ``cap`` and compensate ``Z`` so ``D @ Z`` is kept.

    Zero atoms are left alone.
    """
    norms = np.linalg.norm(D, axis=0)
    scale = np.where(norms > 0, norms / cap, 1.0)
    return D / scale, Z * scale[:, None]


def orthonormalize_atoms(D, Z):
    """Replace ``D`` by the Q factor of its QR decomposition, ``Z`` by ``R Z``.

    ``D @ Z`` is unchanged, every atom has unit norm, and the factorization
    cannot drift toward nearly collinear atoms.
    """
    Q, R = np.linalg.qr(D)
    sign = np.sign(np.diag(R))
    sign[sign == 0] = 1.0
    return Q * sign, (R * sign[:, None]) @ Z


def _update_dictionary(Y, Z, D_prev):
    D = least_squares_rhs(Y, Z)
    # atoms whose coefficient row vanished are unconstrained; keep them
    dead = ~np.any(Z, axis=1)
    D[:, dead] = D_prev[:, dead]
    return D


def _capped_dictionary_update(Y, Z, D_prev, cap=ATOM_NORM_CAP, sweeps=CAPPED_SWEEPS):
    """Minimize ``||Y - D Z||_F^2`` subject to ``||d_j|| <= cap``.

    Returns the unconstrained least-squares factor when it is feasible.
    Otherwise starts from the better of the previous dictionary and the
    projected least-squares factor and runs exact per-atom block updates,
    so the cost never rises above that of ``D_prev``.
    """
    D_ls = _update_dictionary(Y, Z, D_prev)
    norms = np.linalg.norm(D_ls, axis=0)
    if np.all(norms <= cap * (1 + 1e-12)):
        return D_ls
    proj = D_ls / np.maximum(norms / cap, 1.0)

    def cost(D):
        R = Y - D @ Z
        return float(np.sum(R * R))

    D = proj if cost(proj) < cost(D_prev) else D_prev.copy()
    A = Z @ Z.T
    B = Y @ Z.T
    for _ in range(sweeps):
        for j in range(D.shape[1]):
            if A[j, j] <= 0:
                continue
            u = D[:, j] + (B[:, j] - D @ A[:, j]) / A[j, j]
            nu = np.linalg.norm(u)
            D[:, j] = u / max(nu / cap, 1.0)
    return D


def _check_training_input(X, out_dim, name="X"):
    X = as_matrix(X, name)
    m, n = X.shape
    if not 1 <= out_dim <= m:
        raise DegenerateInput(f"out_dim must be in [1, {m}], got {out_dim}")
    if n < out_dim:
        warnings.warn(f"{n} samples for {out_dim} atoms; factorization is underdetermined",
                      RuntimeWarning, stacklevel=3)
    return X


def train_robust_layer(X, out_dim, cfg=None, seed=0):
    """Robust dictionary fit ``min ||X - D Z||_1`` by Split Bregman.

    With ``P`` standing in for the residual ``X - D Z`` and ``B`` the Bregman
    variable, each outer round does (on ``X`` divided by its RMS)::

        P <- soft(X - D Z + B, 1 / (2 mu))
        D <- (X + B - P) pinv(Z);  orthonormalize atoms
        Z <- pinv(D) (X + B - P)
        B <- B + (X - D Z) - P

    and stops once ``||P - (X - D Z)||_F / ||X||_F < cfg.tol``.  The
    orthonormalization is a change of basis inside span(D), so ``D Z`` follows
    the same path as with plain atom rescaling; it only keeps the codes
    well conditioned.  The report's ``objective`` holds ``||X - D Z||_1`` at
    the start and after each round.  The returned ``Z`` is in the units of
    the input.  An all-zero ``X`` returns the initial dictionary with zero
    codes.

    Also returns the last proxy ``P`` (input units) as ``report.proxy``.
    """
    cfg = cfg or RobustTrainConfig()
    X = _check_training_input(X, out_dim)
    m, n = X.shape
    D = init_dictionary(m, out_dim, seed)
    xnorm = np.linalg.norm(X)
    if xnorm == 0.0:
        warnings.warn("all-zero input; returning the initial dictionary", RuntimeWarning,
                      stacklevel=2)
        return Layer(D), np.zeros((out_dim, n)), TrainReport([0.0], 0, True, 0.0)

    rms = xnorm / np.sqrt(X.size)
    Xn = X / rms
    xnorm = np.linalg.norm(Xn)
    Z = least_squares(D, Xn)
    B = np.zeros_like(Xn)
    report = TrainReport(objective=[float(rms * np.abs(Xn - D @ Z).sum())])
    thr = 1.0 / (2.0 * cfg.mu_bregman)
    for it in range(1, cfg.outer_iters + 1):
        P = soft_threshold(Xn - D @ Z + B, thr)
        target = Xn + B - P
        for _ in range(cfg.inner_iters):
            D = _update_dictionary(target, Z, D)
            D, Z = orthonormalize_atoms(D, Z)
            Z = least_squares(D, target)
        R = Xn - D @ Z
        B = B + R - P
        check_finite(B, "Bregman variable")
        report.objective.append(float(rms * np.abs(R).sum()))
        report.residual = float(np.linalg.norm(P - R) / xnorm)
        report.iterations = it
        if report.residual < cfg.tol:
            report.converged = True
            break
    report.proxy = rms * P
    log.debug("robust layer: %d rounds, primal residual %.3g", report.iterations,
              report.residual)
    return Layer(D), rms * Z, report


def train_dense_layer(Y, out_dim, iters=30, seed=0, activation=IDENTITY):
    """Euclidean dictionary fit ``min ||Y - D Z||_F^2`` by alternating least squares.

    Each round refits ``D`` given ``Z``, renormalizes atoms (compensating
    ``Z``), then refits ``Z`` given ``D``.
    """
    Y = _check_training_input(Y, out_dim, "Y")
    D = init_dictionary(Y.shape[0], out_dim, seed)
    Z = least_squares(D, Y)

    def cost():
        R = Y - D @ Z
        return float(np.sum(R * R))

    report = TrainReport(objective=[cost()])
    for it in range(1, iters + 1):
        D = _update_dictionary(Y, Z, D)
        D, Z = normalize_atoms(D, Z)
        Z = least_squares(D, Y)
        report.objective.append(cost())
        report.iterations = it
    report.converged = True
    report.residual = float(np.sqrt(report.objective[-1]) / max(np.linalg.norm(Y), 1e-300))
    return Layer(D, activation), Z, report


def one_hot(labels, num_classes):
    """C x n target matrix for 1-based class ids."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 1 or labels.max() > num_classes):
        raise DegenerateInput(f"labels must lie in 1..{num_classes}")
    T = np.zeros((num_classes, labels.size))
    T[labels - 1, np.arange(labels.size)] = 1.0
    return T


def final_objective(Y, D, Z, W, T, lam, mu):
    R = Y - D @ Z
    S = T - W @ Z
    return float(np.sum(R * R) + lam * np.abs(Z).sum() + mu * np.sum(S * S))


def train_final_layer(Y, out_dim, T, cfg=None, seed=0, activation=IDENTITY):
    """Sparse, discriminative top level.

    Minimizes ``||Y - D Z||^2 + lam ||Z||_1 + mu ||T - W Z||^2`` by cycling
    through

    * ``Z``: ISTA on the stacked system ``[Y; sqrt(mu) T] ~ [D; sqrt(mu) W] Z``,
      warm-started at the current codes;
    * ``D``: least squares with atom norms capped at ``ATOM_NORM_CAP``;
    * ``W``: least squares ``T pinv(Z)``.

    Returns ``(layer, W, Z, report)``.
    """
    cfg = cfg or FinalTrainConfig()
    Y = _check_training_input(Y, out_dim, "Y")
    T = as_matrix(T, "T")
    if T.shape[1] != Y.shape[1]:
        raise DegenerateInput(f"T has {T.shape[1]} columns, Y has {Y.shape[1]}")
    if not (np.all((T == 0) | (T == 1)) and np.all(T.sum(axis=0) == 1)):
        raise DegenerateInput("T must be one-hot: a single 1 in every column")
    missing = np.flatnonzero(T.sum(axis=1) == 0)
    if missing.size:
        raise DegenerateInput(f"class(es) {(missing + 1).tolist()} have no samples")

    lam, mu = cfg.lam, cfg.mu_cls
    root_mu = np.sqrt(mu)
    D = init_dictionary(Y.shape[0], out_dim, seed)
    Z = least_squares(D, Y)
    W = least_squares_rhs(T, Z)
    stacked_target = np.vstack([Y, root_mu * T])
    zcfg = IstaConfig(lam, cfg.ista.max_iters, cfg.ista.tol)
    report = TrainReport(objective=[final_objective(Y, D, Z, W, T, lam, mu)])
    for it in range(1, cfg.iters + 1):
        Z, _ = ista(np.vstack([D, root_mu * W]), stacked_target, zcfg, Z0=Z, record=False)
        D = _capped_dictionary_update(Y, Z, D)
        W = least_squares_rhs(T, Z)
        report.objective.append(final_objective(Y, D, Z, W, T, lam, mu))
        report.iterations = it
    report.converged = True
    R = Y - D @ Z
    report.residual = float(np.linalg.norm(R) / max(np.linalg.norm(Y), 1e-300))
    return Layer(D, activation), W, Z, report


# --------------------------------------------------------------------------
# encoders; batch inputs are columns and every column is solved on its own
# --------------------------------------------------------------------------

def encode_robust(layer, x, max_iters=50, eps=1e-6):
    return irls_l1(layer.D, x, max_iters=max_iters, eps=eps)


def encode_dense(layer, y):
    vec = np.ndim(y) == 1
    Y = as_matrix(y, "y")
    if Y.shape[0] != layer.in_dim:
        raise DegenerateInput(f"input has {Y.shape[0]} rows, layer expects {layer.in_dim}")
    Z = check_finite(_kernels.matvec_cols(pinv(layer.D), Y), "least-squares code")
    return Z[:, 0] if vec else Z


def encode_sparse(layer, y, lam, cfg=None):
    cfg = cfg or IstaConfig(lam)
    Z, _ = ista(layer.D, y, IstaConfig(lam, cfg.max_iters, cfg.tol), record=False)
    return Z

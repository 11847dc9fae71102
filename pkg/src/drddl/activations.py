"""Invertible elementwise activations and their clamped inverses."""

from dataclasses import dataclass
import enum

import numpy as np


class Kind(enum.Enum):
    IDENTITY = "identity"
    TANH = "tanh"
    SIGMOID = "sigmoid"


@dataclass(frozen=True)
class Activation:
    """An activation ``phi`` together with the clamp used by its inverse.

    Coefficients fed to :func:`apply_inverse` need not lie in the range of
    ``phi``; out-of-range entries are pulled ``clamp_eps`` inside the open
    range before inverting.
    """

    kind: Kind = Kind.TANH
    clamp_eps: float = 1e-6

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", Kind(self.kind.lower()))
        if not 0.0 < self.clamp_eps < 0.1:
            raise ValueError(f"clamp_eps must lie in (0, 0.1), got {self.clamp_eps}")

    @classmethod
    def parse(cls, name, clamp_eps=1e-6):
        return cls(Kind(str(name).lower()), clamp_eps)

    @property
    def name(self):
        return self.kind.value


IDENTITY = Activation(Kind.IDENTITY)
TANH = Activation(Kind.TANH)
SIGMOID = Activation(Kind.SIGMOID)


def apply(a, M):
    M = np.asarray(M, dtype=np.float64)
    if a.kind is Kind.IDENTITY:
        return M.copy()
    if a.kind is Kind.TANH:
        return np.tanh(M)
    # split by sign so exp never overflows
    out = np.empty_like(M)
    pos = M >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-M[pos]))
    e = np.exp(M[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def apply_inverse(a, M, return_clamped=False):
    """Elementwise ``phi^-1`` after clamping into the open range of ``phi``.

    With ``return_clamped=True`` also returns the number of entries that had
    to be moved.
    """
    M = np.asarray(M, dtype=np.float64)
    if a.kind is Kind.IDENTITY:
        out, n = M.copy(), 0
    elif a.kind is Kind.TANH:
        lo, hi = -1.0 + a.clamp_eps, 1.0 - a.clamp_eps
        n = int(np.count_nonzero((M < lo) | (M > hi)))
        out = np.arctanh(np.clip(M, lo, hi))
    else:
        lo, hi = a.clamp_eps, 1.0 - a.clamp_eps
        n = int(np.count_nonzero((M < lo) | (M > hi)))
        C = np.clip(M, lo, hi)
        out = np.log(C) - np.log1p(-C)
    return (out, n) if return_clamped else out

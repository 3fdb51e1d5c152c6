"""The 4-state F81 substitution channel with GC bias.

States are indexed A, T, G, C <-> 1, 2, 3, 4 (0..3 in arrays).  The two
communities are {A, T} with base frequency theta/2 each and {G, C} with
(1 - theta)/2 each.  Every transition matrix here has the form

    P = lam * I + (1 - lam) * 1 pi^T

so its spectrum is {1, lam, lam, lam}.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

STATES = ("A", "T", "G", "C")


class ParameterError(ValueError):
    """Raised for out-of-range model parameters."""


class ValidationError(ValueError):
    """Raised when a matrix fails a structural check."""


@dataclass(frozen=True)
class ChannelParams:
    """Channel parameters: base-frequency split, second eigenvalue, arity."""

    theta: float
    lam: float
    d: int = 2

    def __post_init__(self):
        if not (0.0 < self.theta < 1.0):
            raise ParameterError(f"theta must lie in (0, 1), got {self.theta}")
        if not (-1.0 <= self.lam <= 1.0):
            raise ParameterError(f"lambda must lie in [-1, 1], got {self.lam}")
        if int(self.d) != self.d or self.d < 2:
            raise ParameterError(f"d must be an integer >= 2, got {self.d}")
        object.__setattr__(self, "d", int(self.d))

    @classmethod
    def from_dlambda2(cls, theta: float, dlambda2: float, d: int = 2) -> "ChannelParams":
        """Build params from the phase variable d*lambda^2 (lambda >= 0)."""
        if dlambda2 < 0:
            raise ParameterError(f"d*lambda^2 must be >= 0, got {dlambda2}")
        return cls(theta, math.sqrt(dlambda2 / d), d)

    @property
    def dlambda2(self) -> float:
        return self.d * self.lam**2

    @property
    def sub_ks(self) -> bool:
        """True when d*lambda^2 <= 1 (at or below the Kesten-Stigum bound)."""
        return self.dlambda2 <= 1.0

    @property
    def pi(self) -> np.ndarray:
        return stationary_distribution(self.theta)

    @property
    def is_stochastic(self) -> bool:
        """Whether every entry of the transition matrix is a probability."""
        return bool(np.all(make_transition(self) >= 0.0))


def _check_theta(theta):
    if not (0.0 < theta < 1.0):
        raise ParameterError(f"theta must lie in (0, 1), got {theta}")


def stationary_distribution(theta: float) -> np.ndarray:
    """Base frequencies (theta/2, theta/2, (1-theta)/2, (1-theta)/2)."""
    _check_theta(theta)
    return np.array([theta / 2, theta / 2, (1 - theta) / 2, (1 - theta) / 2])


def make_rate_matrix(theta: float) -> np.ndarray:
    """F81 rate matrix with GC bias, including the overall factor 1/2."""
    _check_theta(theta)
    t = theta
    q = np.array(
        [
            [-2 + t, t, 1 - t, 1 - t],
            [t, -2 + t, 1 - t, 1 - t],
            [t, t, -1 - t, 1 - t],
            [t, t, 1 - t, -1 - t],
        ]
    )
    return 0.5 * q


def branch_length_to_lambda(v: float, theta: float) -> float:
    """Second eigenvalue for a branch of length ``v`` substitutions per site."""
    _check_theta(theta)
    if v < 0:
        raise ParameterError(f"branch length must be >= 0, got {v}")
    return math.exp(-v / (0.5 + theta * (1 - theta)))


def make_transition(params: ChannelParams) -> np.ndarray:
    """One-step transition matrix, rows = from-state in A, T, G, C order."""
    t, lam = params.theta, params.lam
    a = t * (1 - lam)
    b = (1 - t) * (1 - lam)
    p = np.array(
        [
            [2 * lam + a, a, b, b],
            [a, 2 * lam + a, b, b],
            [a, a, 2 * lam + b, b],
            [a, a, b, 2 * lam + b],
        ]
    )
    return 0.5 * p


def spectral_check(m: np.ndarray, tol: float = 1e-10) -> tuple[float, float, int]:
    """Leading eigenvalue, second eigenvalue and its multiplicity.

    Parameters
    ----------
    m : array_like, shape (4, 4)
        Row-stochastic matrix (rows summing to one; entries may be negative
        when the second eigenvalue is negative).
    tol : float
        Two eigenvalues closer than this count as the same eigenvalue.

    Returns
    -------
    leading, second, multiplicity
        ``leading`` is the eigenvalue of largest real part (1 for a stochastic
        matrix).  ``second`` is the largest of the remaining eigenvalues, and
        ``multiplicity`` counts the remaining eigenvalues that agree with it.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (4, 4):
        raise ValidationError(f"expected a 4x4 matrix, got shape {m.shape}")
    if not np.allclose(m.sum(axis=1), 1.0, rtol=0, atol=1e-10):
        raise ValidationError("rows do not sum to 1")
    ev = np.sort(np.real(np.linalg.eigvals(m)))[::-1]
    # the all-ones vector is a right eigenvector with eigenvalue 1
    k = int(np.argmin(np.abs(ev - 1.0)))
    leading = float(ev[k])
    rest = np.delete(ev, k)
    second = float(rest[0])
    multiplicity = int(np.sum(np.abs(rest - second) <= tol))
    return leading, second, multiplicity


def multi_step_closed_form(params: ChannelParams, s: int) -> np.ndarray:
    """``s``-step transition matrix from its closed form.

    Diagonal entries are pi_i + (1 - pi_i) lam^s and off-diagonal entries
    are pi_j - pi_j lam^s.
    """
    if int(s) != s or s < 1:
        raise ParameterError(f"number of steps must be an integer >= 1, got {s}")
    pi = params.pi
    ls = params.lam ** int(s)
    out = np.tile(pi - pi * ls, (4, 1))
    out[np.diag_indices(4)] = pi + (1 - pi) * ls
    return out


def ks_threshold_lambda(d: int) -> float:
    """The lambda at which d * lambda^2 = 1."""
    if int(d) != d or d < 2:
        raise ParameterError(f"d must be an integer >= 2, got {d}")
    return 1.0 / math.sqrt(d)


def matrix_to_json(m: np.ndarray) -> str:
    """Serialize a 4x4 matrix as a row-major JSON array."""
    return json.dumps(np.asarray(m, dtype=float).tolist())


def matrix_from_json(text: str) -> np.ndarray:
    m = np.asarray(json.loads(text), dtype=float)
    if m.shape != (4, 4):
        raise ValidationError(f"expected 4 rows of 4 reals, got shape {m.shape}")
    return m

"""Truncated second-order moment map and its threshold analysis.

The state tracks the two correct-guess excesses and the two sign-flipped
cross statistics:

    x_th  = x_{theta}      Z_th   = -z_{1-theta}
    x_1mth = x_{1-theta}   Z_1mth = -z_{theta}

The map keeps the linear term and the quadratic terms of the moment
recursion and drops everything of third order.  The {G, C} pair evolves by
the same equations with theta replaced by 1 - theta and the blocks swapped.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .channel import ChannelParams, ParameterError, ValidationError, _check_theta
from .popdyn import MomentVector, estimate_moments, exact_next_moments, symmetrized_law

# x >= Z is checked up to rounding of the previous step
ORDER_TOL = 1e-12


@dataclass(frozen=True)
class DynState:
    x_th: float
    Z_th: float
    x_1mth: float
    Z_1mth: float

    @property
    def y_th(self) -> float:
        return 2 * self.Z_th - self.x_th

    @property
    def y_1mth(self) -> float:
        return 2 * self.Z_1mth - self.x_1mth

    def as_array(self) -> np.ndarray:
        return np.array([self.x_th, self.Z_th, self.x_1mth, self.Z_1mth])

    @classmethod
    def from_moments(cls, mv: MomentVector) -> "DynState":
        return cls(mv.x_th, -mv.z_1mth, mv.x_1mth, -mv.z_th)


def initial_state(theta: float) -> DynState:
    """State at level 0, where the posterior is the indicator of the root."""
    _check_theta(theta)
    return DynState(1 - theta / 2, (1 - theta) / 2, 1 - (1 - theta) / 2, theta / 2)


def _block_step(x, big_z, x_o, big_z_o, t, lin, c):
    """One block of the map; (x_o, big_z_o) is the other block."""
    s = 1 - t
    y_o = 2 * big_z_o - x_o
    other = t * (x_o**2 + y_o**2)
    x_new = lin * x + c * (
        (-6 + 2 * s / t + 2 * t) * x**2
        + (-4 * t / s - 16) * big_z**2
        + (4 * t - 16) * x * (-big_z)
        + other
    )
    z_new = lin * big_z + c * (
        2 * s**2 / t * x**2
        - 4 * s**2 / t * x * big_z
        + (4 / t - 4 / s - 8) * big_z**2
        + other
    )
    return x_new, z_new


def dyn_step(s: DynState, params: ChannelParams, clamp: bool = True) -> DynState:
    """Apply the truncated map once; negative outputs are clamped to 0."""
    a = s.as_array()
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ValidationError(f"state components must be finite and >= 0: {s}")
    if s.x_th < s.Z_th - ORDER_TOL or s.x_1mth < s.Z_1mth - ORDER_TOL:
        raise ValidationError(f"state violates x >= Z: {s}")
    t, d = params.theta, params.d
    lin = d * params.lam**2
    c = d * (d - 1) / 2 * params.lam**4
    x, big_z = _block_step(s.x_th, s.Z_th, s.x_1mth, s.Z_1mth, t, lin, c)
    x1, big_z1 = _block_step(s.x_1mth, s.Z_1mth, s.x_th, s.Z_th, 1 - t, lin, c)
    out = np.array([x, big_z, x1, big_z1])
    if clamp:
        out = np.maximum(out, 0.0)
    return DynState(*map(float, out))


@dataclass(frozen=True)
class DynTrajectory:
    states: tuple
    diverged: bool

    def __len__(self):
        return len(self.states)

    def __getitem__(self, i):
        return self.states[i]

    def __iter__(self):
        return iter(self.states)

    def as_array(self) -> np.ndarray:
        return np.array([s.as_array() for s in self.states])


def iterate(s0: DynState, params: ChannelParams, n: int) -> DynTrajectory:
    """Up to ``n`` steps; stops after the first state with a component above 1."""
    if int(n) != n or n < 0:
        raise ParameterError(f"number of steps must be >= 0, got {n}")
    states = [s0]
    for _ in range(int(n)):
        nxt = dyn_step(states[-1], params)
        states.append(nxt)
        if np.any(nxt.as_array() > 1.0):
            return DynTrajectory(tuple(states), True)
    return DynTrajectory(tuple(states), False)


def classify_trajectory(traj: DynTrajectory, tol: float = 1e-8) -> str:
    """reconstructs / collapses / undecided for a map trajectory.

    Divergence counts as reconstruction (the map left the small-state
    regime upwards).  Otherwise the final max(x_th, x_1mth) decides.
    """
    if traj.diverged:
        return "reconstructs"
    last = traj[-1]
    top = max(last.x_th, last.x_1mth)
    if top < tol:
        return "collapses"
    if len(traj) >= 10:
        tail = traj.as_array()[-max(len(traj) // 3, 3):, [0, 2]].max(axis=1)
        if tail[-1] >= tail[0] * (1 - 1e-9):
            return "reconstructs"
    return "undecided"


def quadratic_coefficient(theta: float) -> float:
    """Coefficient of Z^2 once the x-terms are completed to a square."""
    _check_theta(theta)
    t, s = theta, 1 - theta
    return 4 / t - 4 / s - 8 - 2 * s**2 / t + 2 * t**3 / s**2


def threshold_roots() -> tuple[float, float]:
    """The two zeros of :func:`quadratic_coefficient`, one on each side of 1/2."""
    lo = brentq(quadratic_coefficient, 1e-6, 0.5, xtol=1e-15)
    hi = brentq(quadratic_coefficient, 0.5, 1 - 1e-6, xtol=1e-15)
    return lo, hi


@dataclass(frozen=True)
class ZBoundParams:
    zeta: float
    Gamma: float
    xi: float


def zbound_params(theta: float, zeta: float) -> ZBoundParams:
    """Constants of the two lower bounds on the next cross statistic.

    ``xi`` is min over u of a u^2 + b (x - u)^2 divided by x^2, with
    a = 1/8 and b = (1-theta)^2 / (16 theta).
    """
    _check_theta(theta)
    if not (0.5 < zeta < 1.0):
        raise ParameterError(f"zeta must lie in (1/2, 1), got {zeta}")
    t, s = theta, 1 - theta
    first = zeta * 2 * s**2 / t
    second = zeta**2 * (4 / t - 4 / s - 8 - 2 * s**2 / (zeta * t) + 2 * zeta * t**3 / s**2)
    gamma = min(first, second)
    if gamma <= 0:
        raise ParameterError(
            f"zeta={zeta} admits no positive Gamma for theta={theta} (Gamma={gamma:.6g})"
        )
    a, b = 1 / 8, s**2 / (16 * t)
    return ZBoundParams(zeta, gamma, a * b / (a + b))


@dataclass(frozen=True)
class ZBoundReport:
    passed: bool
    steps_checked: int
    first_violation: int | None  # step n whose successor breaks a bound
    violated: str | None  # "growth" or "quadratic"
    min_growth_margin: float
    min_quadratic_margin: float


def verify_zbound(
    traj, params: ChannelParams, zb: ZBoundParams, block: str = "th", rtol: float = 1e-12
) -> ZBoundReport:
    """Check both lower bounds on every step of a map trajectory.

    growth:    Z_{n+1} >= Z_n [d lam^2 + d(d-1)/4 lam^4 Gamma x_n]
    quadratic: Z_{n+1} >= xi x_n^2

    ``block`` selects the (x_th, Z_th) or (x_1mth, Z_1mth) pair; ``zb``
    must have been computed for the matching theta.  Margins are relative
    to the bound and a violation needs to exceed ``rtol``.
    """
    arr = np.array([s.as_array() for s in traj]) if len(traj) else np.zeros((0, 4))
    if block == "th":
        x, big_z = arr[:, 0], arr[:, 1]
    elif block == "1mth":
        x, big_z = arr[:, 2], arr[:, 3]
    else:
        raise ValueError(f"unknown block {block!r}")
    d, lam = params.d, params.lam
    first, which = None, None
    gm, qm = math.inf, math.inf
    for n in range(len(arr) - 1):
        growth = big_z[n] * (d * lam**2 + d * (d - 1) / 4 * lam**4 * zb.Gamma * x[n])
        quad = zb.xi * x[n] ** 2
        g_margin = big_z[n + 1] - growth
        q_margin = big_z[n + 1] - quad
        if growth > 0:
            gm = min(gm, float(g_margin / growth))
        if quad > 0:
            qm = min(qm, float(q_margin / quad))
        if first is None:
            if g_margin < -rtol * abs(growth):
                first, which = n, "growth"
            elif q_margin < -rtol * abs(quad):
                first, which = n, "quadratic"
    return ZBoundReport(first is None, max(len(arr) - 1, 0), first, which, gm, qm)


def step_residual(mv_now: MomentVector, mv_next: MomentVector, params: ChannelParams) -> np.ndarray:
    """Exact next-level state minus the map applied to the current state."""
    predicted = dyn_step(DynState.from_moments(mv_now), params, clamp=False)
    return DynState.from_moments(mv_next).as_array() - predicted.as_array()


TRAJECTORY_COLUMNS = ("step", "x_th", "Z_th", "x_1mth", "Z_1mth")


def write_trajectory_csv(traj, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    for i, s in enumerate(traj):
        w.writerow([str(i)] + [format(float(v), ".17g") for v in s.as_array()])


def read_trajectory_csv(fh) -> list[DynState]:
    return [
        DynState(float(r["x_th"]), float(r["Z_th"]), float(r["x_1mth"]), float(r["Z_1mth"]))
        for r in csv.DictReader(fh)
    ]


def residual_scaling(
    atoms: np.ndarray,
    weights: np.ndarray,
    params: ChannelParams,
    fractions=(0.5, 0.25, 0.125),
) -> list[tuple[float, float]]:
    """Map residual against the exact recursion at several state scales.

    The atoms are symmetrized and their spread around the stationary
    distribution is shrunk to each fraction of the largest admissible scale.
    Residuals below about 1e-16 are rounding noise of the exact sums, so the
    smallest fraction should keep the state well above 1e-6.
    Returns (magnitude, residual) pairs with magnitude = |(x_th, x_1mth)|
    and residual = max-abs entry of :func:`step_residual`.
    """
    pi = params.pi
    dev = np.abs(np.asarray(atoms, float) - pi)
    s_max = float(np.min(pi / np.maximum(dev, np.finfo(float).tiny)))
    out = []
    for f in fractions:
        law = symmetrized_law(atoms, weights, params.theta, f * s_max)
        mv = estimate_moments(law).value
        r = step_residual(mv, exact_next_moments(law, params), params)
        out.append((float(math.hypot(mv.x_th, mv.x_1mth)), float(np.max(np.abs(r)))))
    return out

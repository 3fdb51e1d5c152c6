"""Verification suites for the moment identities of the root posterior.

Every check returns :class:`IdentityReport` objects.  Two modes exist:

* ``exact``: inputs are exact (oracle moments or weighted populations) and
  an identity passes when both sides agree to ``EXACT_TOL``;
* ``statistical``: inputs are Monte Carlo estimates and an identity passes
  within ``tol_sigma`` combined standard errors.

Notation in names: ``h = theta/2``, ``g = (1-theta)/2``, ``E1``/``E3`` are
expectations with the root in state A/G, ``Y`` is the posterior of one
child of a state-A root.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .channel import ChannelParams
from .popdyn import (
    MomentEstimate,
    MomentVector,
    Population,
    child_law,
    estimate_moments,
    sample_child_posteriors,
    sample_z_products,
)

EXACT_TOL = 1e-10
STAT_SIGMA = 4.0


@dataclass(frozen=True)
class IdentityReport:
    name: str
    lhs: float
    rhs: float
    tolerance: float
    passed: bool
    mode: str
    kind: str = "eq"  # "eq": |lhs - rhs| <= tol, "ge": lhs - rhs >= -tol

    def to_dict(self) -> dict:
        return asdict(self)


def _report(name, lhs, rhs, tol, mode, kind="eq") -> IdentityReport:
    lhs, rhs, tol = float(lhs), float(rhs), float(tol)
    if kind == "eq":
        ok = abs(lhs - rhs) <= tol
    elif kind == "ge":
        ok = lhs - rhs >= -tol
    else:
        raise ValueError(f"unknown identity kind {kind!r}")
    ok = ok and math.isfinite(lhs) and math.isfinite(rhs)
    return IdentityReport(name, lhs, rhs, tol, bool(ok), mode, kind)


def reports_to_json(reports: Sequence[IdentityReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)


def all_passed(reports: Sequence[IdentityReport]) -> bool:
    return all(r.passed for r in reports)


# ---------------------------------------------------------------------------
# linear forms over sample sources
#
# A side of an identity is a list of (coefficient, source, per-sample
# integrand).  Sources are independent sample sets (or exact weighted laws);
# the standard error of lhs - rhs is computed from the per-source combined
# integrand, which accounts for correlations within a source.


class _Sources:
    def __init__(self):
        self.weights = {}

    def add(self, key, weights):
        self.weights[key] = weights

    def mean(self, key, arr):
        w = self.weights[key]
        return float(w @ arr) if w is not None else float(arr.mean())

    @property
    def exact(self) -> bool:
        return all(w is not None for w in self.weights.values())


def _evaluate(src: _Sources, lhs_terms, rhs_terms):
    lhs = sum(c * src.mean(k, a) for c, k, a in lhs_terms)
    rhs = sum(c * src.mean(k, a) for c, k, a in rhs_terms)
    diff = {}
    for sign, terms in ((1.0, lhs_terms), (-1.0, rhs_terms)):
        for c, k, a in terms:
            diff[k] = diff.get(k, 0.0) + sign * c * a
    var = 0.0
    for k, arr in diff.items():
        if src.weights[k] is None and np.ndim(arr) and len(arr) > 1:
            var += float(np.var(arr, ddof=1)) / len(arr)
    return lhs, rhs, math.sqrt(var)


def _population_integrands(pop: Population):
    """Per-sample integrands of the twelve moments and the cross moments."""
    h, g = pop.theta / 2, (1 - pop.theta) / 2
    s1, s3 = pop.samples[0], pop.samples[2]
    d11, d12, d13, d14 = s1[:, 0] - h, s1[:, 1] - h, s1[:, 2] - g, s1[:, 3] - g
    d31, d32, d33, d34 = s3[:, 0] - h, s3[:, 1] - h, s3[:, 2] - g, s3[:, 3] - g
    return {
        "x_th": ("s1", d11), "y_th": ("s1", d12), "z_th": ("s3", d31),
        "u_th": ("s1", d11**2), "v_th": ("s1", d12**2), "w_th": ("s3", d31**2),
        "x_1mth": ("s3", d33), "y_1mth": ("s3", d34), "z_1mth": ("s1", d13),
        "u_1mth": ("s3", d33**2), "v_1mth": ("s3", d34**2), "w_1mth": ("s1", d13**2),
        "E1(f1-h)(f2-h)": ("s1", d11 * d12),
        "E1(f1-h)(f3-g)": ("s1", d11 * d13),
        "E1(f2-h)(f3-g)": ("s1", d12 * d13),
        "E1(f3-g)(f4-g)": ("s1", d13 * d14),
        "E3(f1-h)(f2-h)": ("s3", d31 * d32),
    }


def _population_sources(pop: Population) -> _Sources:
    src = _Sources()
    src.add("s1", pop.weights[0] if pop.exact else None)
    src.add("s3", pop.weights[2] if pop.exact else None)
    return src


def _terms(integrands, coefs: dict):
    return [(c, *integrands[name]) for name, c in coefs.items()]


# ---------------------------------------------------------------------------
# identities among the twelve moments


def _lemma1_forms(theta: float):
    r = (1 - theta) / theta
    return [
        ("x_th = u_th + v_th + 2((1-theta)/theta) w_th",
         {"x_th": 1}, {"u_th": 1, "v_th": 1, "w_th": 2 * r}, "eq"),
        ("x_th >= 0", {"x_th": 1}, {}, "ge"),
        ("x_1mth = u_1mth + v_1mth + 2(theta/(1-theta)) w_1mth",
         {"x_1mth": 1}, {"u_1mth": 1, "v_1mth": 1, "w_1mth": 2 / r}, "eq"),
        ("x_1mth >= 0", {"x_1mth": 1}, {}, "ge"),
        ("z_1mth = -(x_th + y_th)/2", {"z_1mth": 1}, {"x_th": -0.5, "y_th": -0.5}, "eq"),
        ("z_1mth <= 0", {}, {"z_1mth": 1}, "ge"),
        ("x_th + z_1mth >= 0", {"x_th": 1, "z_1mth": 1}, {}, "ge"),
        ("z_th = -(x_1mth + y_1mth)/2", {"z_th": 1}, {"x_1mth": -0.5, "y_1mth": -0.5}, "eq"),
        ("z_th <= 0", {}, {"z_th": 1}, "ge"),
        ("x_1mth + z_th >= 0", {"x_1mth": 1, "z_th": 1}, {}, "ge"),
        ("theta z_1mth = (1-theta) z_th", {"z_1mth": theta}, {"z_th": 1 - theta}, "eq"),
    ]


def check_lemma1(
    mv: MomentVector | MomentEstimate,
    mode: str | None = None,
    tol: float = EXACT_TOL,
    tol_sigma: float = STAT_SIGMA,
) -> list[IdentityReport]:
    """Bayes/total-probability identities among the twelve moments.

    A :class:`MomentVector` is checked in exact mode; a
    :class:`MomentEstimate` in statistical mode with standard errors
    combined in quadrature (conservative for positively correlated terms).
    """
    if isinstance(mv, MomentEstimate):
        value, se = mv.value, mv.std_err
        mode = mode or "statistical"
    else:
        value, se = mv, None
        mode = mode or "exact"
    if mode not in ("exact", "statistical"):
        raise ValueError(f"unknown mode {mode!r}")
    out = []
    for name, lhs_c, rhs_c, kind in _lemma1_forms(value.theta):
        lhs = sum(c * getattr(value, k) for k, c in lhs_c.items())
        rhs = sum(c * getattr(value, k) for k, c in rhs_c.items())
        if mode == "exact" or se is None:
            t = tol
        else:
            var = sum((c * getattr(se, k)) ** 2 for k, c in {**lhs_c, **rhs_c}.items())
            t = tol_sigma * math.sqrt(var)
        out.append(_report(name, lhs, rhs, t, mode, kind))
    return out


def _lemma2_forms(theta: float):
    h, g = theta / 2, (1 - theta) / 2
    return [
        ("E1(f1-h)(f2-h) = h y_th + (v_th - h x_th)",
         {"E1(f1-h)(f2-h)": 1}, {"y_th": h, "v_th": 1, "x_th": -h}),
        ("E1(f1-h)(f3-g) = h z_1mth - (u_th - h x_th)/2 - (v_th - h x_th)/2",
         {"E1(f1-h)(f3-g)": 1}, {"z_1mth": h, "u_th": -0.5, "v_th": -0.5, "x_th": h}),
        ("E1(f2-h)(f3-g) = h z_1mth - (v_th - h x_th)",
         {"E1(f2-h)(f3-g)": 1}, {"z_1mth": h, "v_th": -1, "x_th": h}),
        ("E1(f3-g)(f4-g) = g y_1mth + (u_th - h x_th)/2 + 3(v_th - h x_th)/2"
         " - (w_1mth - g x_1mth)",
         {"E1(f3-g)(f4-g)": 1},
         {"y_1mth": g, "u_th": 0.5, "v_th": 1.5, "x_th": -2 * h, "w_1mth": -1, "x_1mth": g}),
        ("E3(f1-h)(f2-h) = h y_th - (theta/(1-theta))(v_th - h x_th)",
         {"E3(f1-h)(f2-h)": 1},
         {"y_th": h, "v_th": -theta / (1 - theta), "x_th": h * theta / (1 - theta)}),
    ]


def check_lemma2(
    pop: Population,
    tol_sigma: float = STAT_SIGMA,
    theta: float | None = None,
    tol: float = EXACT_TOL,
) -> list[IdentityReport]:
    """Cross moments of the posterior against their closed forms.

    ``theta`` overrides the value used in the closed-form coefficients
    (negative controls only).  Exact populations are checked to ``tol``.
    """
    th = pop.theta if theta is None else theta
    ints = _population_integrands(pop)
    src = _population_sources(pop)
    mode = "exact" if src.exact else "statistical"
    out = []
    for name, lhs_c, rhs_c in _lemma2_forms(th):
        lhs, rhs, se = _evaluate(src, _terms(ints, lhs_c), _terms(ints, rhs_c))
        out.append(_report(name, lhs, rhs, tol if mode == "exact" else tol_sigma * se, mode))
    return out


def _lemma3_integrands(y: np.ndarray, theta: float):
    h, g = theta / 2, (1 - theta) / 2
    e1, e2, e3, e4 = y[:, 0] - h, y[:, 1] - h, y[:, 2] - g, y[:, 3] - g
    return {
        "E(Y1-h)": ("y", e1), "E(Y2-h)": ("y", e2),
        "E(Y3-g)": ("y", e3), "E(Y4-g)": ("y", e4),
        "E(Y1-h)^2": ("y", e1**2), "E(Y2-h)^2": ("y", e2**2),
        "E(Y3-g)^2": ("y", e3**2), "E(Y4-g)^2": ("y", e4**2),
        "E(Y1-h)(Y2-h)": ("y", e1 * e2),
        "E(Y1-h)(Y3-g)": ("y", e1 * e3), "E(Y1-h)(Y4-g)": ("y", e1 * e4),
        "E(Y2-h)(Y3-g)": ("y", e2 * e3), "E(Y2-h)(Y4-g)": ("y", e2 * e4),
        "E(Y3-g)(Y4-g)": ("y", e3 * e4),
    }


def _lemma3_forms(theta: float, lam: float):
    h, g = theta / 2, (1 - theta) / 2
    # U = u_th - h x_th, V = v_th - h x_th, W = w_1mth - g x_1mth
    forms = [
        ("(a) E(Y1-h) = lam x_th", "E(Y1-h)", {"x_th": lam}),
        ("(b) E(Y2-h) = lam y_th", "E(Y2-h)", {"y_th": lam}),
        ("(c) E(Y3-g) = lam z_1mth", "E(Y3-g)", {"z_1mth": lam}),
        ("(c) E(Y4-g) = lam z_1mth", "E(Y4-g)", {"z_1mth": lam}),
        ("(d) E(Y1-h)^2 = h x_th + lam U", "E(Y1-h)^2",
         {"x_th": h - lam * h, "u_th": lam}),
        ("(e) E(Y2-h)^2 = h x_th + lam V", "E(Y2-h)^2",
         {"x_th": h - lam * h, "v_th": lam}),
        ("(f) E(Y3-g)^2 = g x_1mth + lam W", "E(Y3-g)^2",
         {"x_1mth": g - lam * g, "w_1mth": lam}),
        ("(f) E(Y4-g)^2 = g x_1mth + lam W", "E(Y4-g)^2",
         {"x_1mth": g - lam * g, "w_1mth": lam}),
        ("(g) E(Y1-h)(Y2-h) = h y_th + lam V", "E(Y1-h)(Y2-h)",
         {"y_th": h, "v_th": lam, "x_th": -lam * h}),
        ("(h) E(Y1-h)(Y3-g) = h z_1mth - lam U/2 - lam V/2", "E(Y1-h)(Y3-g)",
         {"z_1mth": h, "u_th": -lam / 2, "v_th": -lam / 2, "x_th": lam * h}),
        ("(h) E(Y1-h)(Y4-g) = h z_1mth - lam U/2 - lam V/2", "E(Y1-h)(Y4-g)",
         {"z_1mth": h, "u_th": -lam / 2, "v_th": -lam / 2, "x_th": lam * h}),
        ("(i) E(Y2-h)(Y3-g) = h z_1mth - lam V", "E(Y2-h)(Y3-g)",
         {"z_1mth": h, "v_th": -lam, "x_th": lam * h}),
        ("(i) E(Y2-h)(Y4-g) = h z_1mth - lam V", "E(Y2-h)(Y4-g)",
         {"z_1mth": h, "v_th": -lam, "x_th": lam * h}),
        ("(j) E(Y3-g)(Y4-g) = g y_1mth + lam U/2 + 3 lam V/2 - lam W", "E(Y3-g)(Y4-g)",
         {"y_1mth": g, "u_th": lam / 2, "v_th": 3 * lam / 2, "x_th": -2 * lam * h,
          "w_1mth": -lam, "x_1mth": lam * g}),
    ]
    return forms


def check_lemma3(
    pop: Population,
    params: ChannelParams,
    tol_sigma: float = STAT_SIGMA,
    size: int | None = None,
    seed: int = 0,
    tol: float = EXACT_TOL,
    threads: int = 1,
) -> list[IdentityReport]:
    """Moments of a child's posterior against their closed forms.

    For exact populations the child law is formed exactly; otherwise
    ``size`` child posteriors (default: the population size) are sampled.
    """
    ints = _population_integrands(pop)
    src = _population_sources(pop)
    if pop.exact:
        y, w = child_law(pop, params)
        src.add("y", w)
    else:
        y = sample_child_posteriors(pop, params, size or pop.size, seed, threads=threads)
        src.add("y", None)
    ints.update(_lemma3_integrands(y, pop.theta))
    mode = "exact" if src.exact else "statistical"
    out = []
    for name, lhs_key, rhs_c in _lemma3_forms(pop.theta, params.lam):
        lhs, rhs, se = _evaluate(src, _terms(ints, {lhs_key: 1}), _terms(ints, rhs_c))
        out.append(_report(name, lhs, rhs, tol if mode == "exact" else tol_sigma * se, mode))
    return out


# ---------------------------------------------------------------------------
# second-order expansions of the likelihood products


@dataclass(frozen=True)
class PiExpansion:
    pi1: float
    pi2: float
    pi3: float
    pi4: float
    pi5: float
    pi6: float
    ez1: float
    ez2: float
    ez3: float
    ez1sq: float
    ez2sq: float
    ez3sq: float
    ez1z3: float
    ez2z3: float
    ez3z4: float

    def predictions(self) -> dict:
        """Predicted E of each Z monomial (root in state A), 0-based indices."""
        return {
            "EZ1": self.ez1, "EZ2": self.ez2, "EZ3": self.ez3, "EZ4": self.ez3,
            "EZ1^2": self.ez1sq, "EZ2^2": self.ez2sq, "EZ1Z2": self.ez2sq,
            "EZ3^2": self.ez3sq, "EZ4^2": self.ez3sq,
            "EZ1Z3": self.ez1z3, "EZ1Z4": self.ez1z3,
            "EZ2Z3": self.ez2z3, "EZ2Z4": self.ez2z3, "EZ3Z4": self.ez3z4,
        }


def compute_pi(mv: MomentVector, params: ChannelParams) -> PiExpansion:
    """Second-order expansions of E Z-monomials in the level-n moments."""
    t, lam, d = params.theta, params.lam, params.d
    s = 1 - t
    h, g = t / 2, s / 2
    x, y, z1 = mv.x_th, mv.y_th, mv.z_1mth
    x1, y1 = mv.x_1mth, mv.y_1mth
    big_u = mv.u_th - h * x
    big_v = mv.v_th - h * x
    big_w = mv.w_1mth - g * x1
    l2, l3 = lam**2, lam**3
    pi1 = 6 * l2 / t * x + 4 * l3 / t**2 * big_u
    pi2 = 2 * l2 / t * x + 4 * l2 / t * y + 4 * l3 / t**2 * big_v
    pi3 = 4 * l2 / s * z1 + 2 * l2 / s * x1 + 4 * l3 / s**2 * big_w
    pi4 = 2 * l2 / t * x + 4 * l2 / s * z1 - 2 * l3 / (t * s) * (big_u + big_v)
    pi5 = 2 * l2 / t * y + 4 * l2 / s * z1 - 4 * l3 / (t * s) * big_v
    pi6 = (4 * l2 / s * z1 + 2 * l2 / s * y1
           + 2 * l3 / s**2 * (big_u + 3 * big_v) - 4 * l3 / s**2 * big_w)
    pairs = d * (d - 1) / 2

    def second(p):
        return 1 + d * p + pairs * p**2

    def first(m, scale):
        return 1 + d * l2 * 2 / scale * m + pairs * lam**4 * 4 / scale**2 * m**2

    return PiExpansion(
        pi1, pi2, pi3, pi4, pi5, pi6,
        first(x, t), first(y, t), first(z1, s),
        second(pi1), second(pi2), second(pi3),
        second(pi4), second(pi5), second(pi6),
    )


_Z_MONOMIALS = {
    "EZ1": (0,), "EZ2": (1,), "EZ3": (2,), "EZ4": (3,),
    "EZ1^2": (0, 0), "EZ2^2": (1, 1), "EZ1Z2": (0, 1), "EZ3^2": (2, 2), "EZ4^2": (3, 3),
    "EZ1Z3": (0, 2), "EZ1Z4": (0, 3), "EZ2Z3": (1, 2), "EZ2Z4": (1, 3), "EZ3Z4": (2, 3),
}


def _prediction_se(est: MomentEstimate, params: ChannelParams, key: str) -> float:
    """Delta-method error of a prediction from moment standard errors."""
    base = compute_pi(est.value, params).predictions()[key]
    var = 0.0
    for name, se in est.std_err.to_dict().items():
        if se > 0:
            bumped = est.value.replace(**{name: getattr(est.value, name) + se})
            var += (compute_pi(bumped, params).predictions()[key] - base) ** 2
    return math.sqrt(var)


def check_z_products(
    pop: Population,
    params: ChannelParams,
    tol_sigma: float = STAT_SIGMA,
    size: int | None = None,
    seed: int = 0,
    remainder: float = 0.0,
    predictions: bool = True,
    tol: float = EXACT_TOL,
    threads: int = 1,
) -> list[IdentityReport]:
    """Z-product symmetry and agreement with the second-order predictions.

    The first report is E(Z1 Z2) = E(Z2^2).  With ``predictions`` every
    Z-monomial expectation is compared to :func:`compute_pi`; the allowed
    error is the statistical (or exact) tolerance plus ``remainder * x^3``
    where x = max(|x_th|, |x_1mth|) covers the truncation.
    """
    est = estimate_moments(pop)
    lam = params.lam
    scale = lam / params.pi
    out = []
    if pop.exact:
        y, w = child_law(pop, params)
        m = (1.0 - lam) + y * scale  # per-child factor of each Z_i

        def expect(idx):
            return float(w @ np.prod(m[:, list(idx)], axis=1)) ** params.d

        lhs, rhs = expect((0, 1)), expect((1, 1))
        out.append(_report("E(Z1 Z2) = E(Z2^2)", lhs, rhs, tol, "exact"))
        mode = "exact"
    else:
        z = sample_z_products(pop, params, size or pop.size, seed, root=0, threads=threads)
        mono = {k: np.prod(z[:, list(idx)], axis=1) for k, idx in _Z_MONOMIALS.items()}
        diff = mono["EZ1Z2"] - mono["EZ2^2"]
        se = float(diff.std(ddof=1) / math.sqrt(len(diff)))
        out.append(
            _report("E(Z1 Z2) = E(Z2^2)", mono["EZ1Z2"].mean(), mono["EZ2^2"].mean(),
                    tol_sigma * se, "statistical")
        )
        mode = "statistical"
    if not predictions:
        return out
    pred = compute_pi(est.value, params).predictions()
    xmag = max(abs(est.value.x_th), abs(est.value.x_1mth))
    trunc = remainder * xmag**3
    for key, idx in _Z_MONOMIALS.items():
        if mode == "exact":
            lhs, t = expect(idx), tol + trunc
        else:
            arr = mono[key]
            se = float(arr.std(ddof=1) / math.sqrt(len(arr)))
            se = math.hypot(se, _prediction_se(est, params, key))
            lhs, t = float(arr.mean()), tol_sigma * se + trunc
        out.append(_report(f"{key} = second-order prediction", lhs, pred[key], t, mode))
    return out


def u_recursion_residual(prev: MomentVector, nxt: MomentVector, params: ChannelParams) -> float:
    """u_{n+1} - h x_{n+1} - d lam^3 (u_n - h x_n)."""
    h = params.theta / 2
    return (nxt.u_th - h * nxt.x_th) - params.d * params.lam**3 * (prev.u_th - h * prev.x_th)


def check_u_recursion(
    prev: MomentVector | MomentEstimate,
    nxt: MomentVector | MomentEstimate,
    params: ChannelParams,
    constant: float = 0.0,
    tol_sigma: float = 5.0,
    tol: float = EXACT_TOL,
) -> IdentityReport:
    """The second-moment recursion holds up to ``constant * x_n^2``."""
    statistical = isinstance(prev, MomentEstimate)
    pv = prev.value if statistical else prev
    nv = nxt.value if isinstance(nxt, MomentEstimate) else nxt
    r = u_recursion_residual(pv, nv, params)
    bound = constant * pv.x_th**2
    if statistical:
        h, k = params.theta / 2, params.d * params.lam**3
        ps, ns = prev.std_err, nxt.std_err
        se = math.sqrt(ns.u_th**2 + (h * ns.x_th) ** 2 + (k * ps.u_th) ** 2 + (k * h * ps.x_th) ** 2)
        t, mode = max(tol_sigma * se, bound), "statistical"
    else:
        t, mode = bound + tol, "exact"
    return _report("u_{n+1} - h x_{n+1} = d lam^3 (u_n - h x_n) + O(x_n^2)", r, 0.0, t, mode)


def fit_remainder_constant(scales: Sequence[float], residuals: Sequence[float], power: float) -> float:
    """Smallest C with |residual| <= C * scale^power at every fit point."""
    scales = np.abs(np.asarray(scales, dtype=float))
    residuals = np.abs(np.asarray(residuals, dtype=float))
    if np.any(scales <= 0):
        raise ValueError("scales must be nonzero")
    return float(np.max(residuals / scales**power))

"""Population dynamics for the root posterior of the broadcast process.

A :class:`Population` represents, for each root state c, the law of the
posterior vector ``(f_n(i, sigma^c(n)))_i`` at tree level n.  It comes in
two flavours:

* sampled: four arrays of posterior vectors with uniform weights, produced
  by :func:`evolve_one_level` (density evolution with resampling);
* exact: a finite set of atoms shared by the four root states, with
  per-state weights.  These come from exhaustive enumeration or from
  :func:`law_from_atoms` and can be advanced exactly with
  :func:`exact_evolve` / :func:`exact_next_moments`.

Random numbers are drawn from Philox streams keyed by
``(seed, level, target state, chunk index)``; chunks have a fixed size, so
results never depend on the number of worker threads.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Iterable, Sequence

import numpy as np

from .channel import STATES, ChannelParams, ParameterError, make_transition, stationary_distribution

CHUNK = 1 << 16
SIMPLEX_TOL = 1e-9

MOMENT_NAMES = (
    "x_th", "y_th", "z_th", "u_th", "v_th", "w_th",
    "x_1mth", "y_1mth", "z_1mth", "u_1mth", "v_1mth", "w_1mth",
)
TRAJECTORY_COLUMNS = (
    ("level",)
    + tuple(c for n in MOMENT_NAMES for c in (n, "se_" + n))
    + ("n_samples",)
)


class StateError(RuntimeError):
    """Raised when a population cannot be advanced."""


class DegenerateEvidenceError(StateError):
    """All four root likelihoods vanish (only possible when |lambda| = 1)."""


@dataclass(frozen=True)
class MomentVector:
    """The twelve first/second moment statistics of the root posterior.

    ``*_th`` fields belong to the {A, T} block (offset theta/2) and
    ``*_1mth`` fields to the {G, C} block (offset (1-theta)/2).
    """

    x_th: float
    y_th: float
    z_th: float
    u_th: float
    v_th: float
    w_th: float
    x_1mth: float
    y_1mth: float
    z_1mth: float
    u_1mth: float
    v_1mth: float
    w_1mth: float
    theta: float

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, n) for n in MOMENT_NAMES])

    @classmethod
    def from_array(cls, values: Sequence[float], theta: float) -> "MomentVector":
        values = [float(v) for v in values]
        if len(values) != len(MOMENT_NAMES):
            raise ValueError(f"expected {len(MOMENT_NAMES)} values, got {len(values)}")
        return cls(*values, theta=theta)

    def replace(self, **changes) -> "MomentVector":
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data.update(changes)
        return MomentVector(**data)

    def to_dict(self) -> dict:
        return {n: getattr(self, n) for n in MOMENT_NAMES}


@dataclass(frozen=True)
class MomentEstimate:
    value: MomentVector
    std_err: MomentVector
    n_samples: int

    def __post_init__(self):
        if np.any(self.std_err.as_array() < 0):
            raise ValueError("standard errors must be non-negative")

    @property
    def theta(self) -> float:
        return self.value.theta


@dataclass(frozen=True)
class CrossMomentEstimate:
    """Second-order cross moments of the root posterior.

    Keys ``a``..``e`` are, in order:
    ``E_1[(f1-h)(f2-h)]``, ``E_1[(f1-h)(f3-g)]``, ``E_1[(f2-h)(f3-g)]``,
    ``E_1[(f3-g)(f4-g)]`` and ``E_3[(f1-h)(f2-h)]`` where ``E_c`` conditions
    on the root state c, ``h = theta/2`` and ``g = (1-theta)/2``.
    """

    value: dict
    std_err: dict
    n_samples: int


@dataclass(frozen=True)
class Population:
    """Per-root-state laws of the level-``level`` posterior vector."""

    level: int
    theta: float
    samples: tuple
    weights: tuple | None = None

    def __post_init__(self):
        if len(self.samples) != 4:
            raise ValueError("need one sample array per root state")
        for s in self.samples:
            if s.ndim != 2 or s.shape[1] != 4:
                raise ValueError("samples must have shape (n, 4)")
            if len(s) == 0:
                raise StateError("empty sample set")
        if self.weights is not None:
            for s, w in zip(self.samples, self.weights):
                if w.shape != (len(s),):
                    raise ValueError("weights must match samples")
                if abs(w.sum() - 1.0) > 1e-9 or np.any(w < -1e-15):
                    raise ValueError("weights must be a probability vector")

    @property
    def exact(self) -> bool:
        return self.weights is not None

    @property
    def size(self) -> int:
        return len(self.samples[0])

    def check_simplex(self, tol: float = SIMPLEX_TOL) -> None:
        for s in self.samples:
            if np.any(s < -tol) or np.any(np.abs(s.sum(axis=1) - 1.0) > tol):
                raise StateError("posterior vector off the simplex")


# ---------------------------------------------------------------------------
# random streams


def _stream(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _run_jobs(fn, jobs, threads: int):
    if threads <= 1 or len(jobs) <= 1:
        return [fn(*j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda j: fn(*j), jobs))


# ---------------------------------------------------------------------------
# population construction and evolution


def init_population(size: int, theta: float) -> Population:
    """Level-0 population: the posterior is the indicator of the root state."""
    if int(size) != size or size < 1:
        raise ParameterError(f"population size must be >= 1, got {size}")
    stationary_distribution(theta)  # validates theta
    eye = np.eye(4)
    samples = tuple(np.tile(eye[c], (int(size), 1)) for c in range(4))
    return Population(0, theta, samples)


class _Sampler:
    """Draws child posteriors for a fixed target root state."""

    def __init__(self, pop: Population, params: ChannelParams):
        if not math.isclose(pop.theta, params.theta, rel_tol=0, abs_tol=1e-15):
            raise ParameterError("population and channel disagree on theta")
        if not params.is_stochastic:
            raise ParameterError("transition matrix has negative entries for these parameters")
        self.params = params
        self.pi = params.pi
        p = make_transition(params)
        self.cum_p = np.cumsum(p, axis=1)
        self.cum_p[:, -1] = 1.0
        self.flat = np.concatenate(pop.samples)
        self.sizes = np.array([len(s) for s in pop.samples])
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)[:-1]])
        self.cum_w = None
        if pop.weights is not None:
            self.cum_w = []
            for w in pop.weights:
                cw = np.cumsum(w)
                cw[-1] = 1.0
                self.cum_w.append(cw)

    def children(self, rng: np.random.Generator, root: int, m: int) -> np.ndarray:
        d = self.params.d
        u = rng.random((2, m, d))
        child = np.searchsorted(self.cum_p[root], u[0], side="right")
        np.minimum(child, 3, out=child)
        if self.cum_w is None:
            n_c = self.sizes[child]
            local = (u[1] * n_c).astype(np.int64)
            np.minimum(local, n_c - 1, out=local)
        else:
            local = np.empty(child.shape, dtype=np.int64)
            for c in range(4):
                mask = child == c
                local[mask] = np.minimum(
                    np.searchsorted(self.cum_w[c], u[1][mask], side="right"), self.sizes[c] - 1
                )
        local += self.offsets[child]
        return self.flat[local]

    def z_factors(self, y: np.ndarray) -> np.ndarray:
        """Z_i = prod_j [1 + lam (Y_ij - pi_i) / pi_i]; shape (m, 4)."""
        lam = self.params.lam
        scale = lam / self.pi
        z = y[:, 0] * scale
        z += 1.0 - lam
        for j in range(1, y.shape[1]):
            f = y[:, j] * scale
            f += 1.0 - lam
            z *= f
        return z

    def posteriors(self, y: np.ndarray) -> np.ndarray:
        n = self.z_factors(y)
        n *= self.pi
        s = n.sum(axis=1)
        if np.any(s <= 0.0):
            raise DegenerateEvidenceError(
                "children carry contradictory evidence: all root likelihoods are zero"
            )
        return n / s[:, None]


def _chunks(total: int) -> list[tuple[int, int]]:
    return [(k, min(CHUNK, total - k * CHUNK)) for k in range(-(-total // CHUNK))]


def _project_mean(atoms: np.ndarray, w: np.ndarray, pi: np.ndarray, iters: int = 20) -> np.ndarray:
    """Closest reweighting (in relative entropy) of ``w`` whose mean is ``pi``.

    Falls back to ``w`` if ``pi`` is outside the reach of the atoms.
    """
    # summation error leaves a gap of a few 1e-14 on 10^6 atoms
    dev = atoms - pi
    eta = np.zeros(4)
    q = w
    for _ in range(iters):
        e = dev @ eta
        e -= e.max()
        q = w * np.exp(e)
        q /= q.sum()
        g = q @ dev
        if np.max(np.abs(g)) < 1e-13:
            return q
        cov = (dev * q[:, None]).T @ dev - np.outer(g, g)
        eta = eta - np.linalg.lstsq(cov, g, rcond=None)[0]
    return q if np.max(np.abs(q @ dev)) < 1e-12 else w


def _bayes_resample(raw: tuple, pi: np.ndarray, size: int, seed: int, level: int) -> tuple:
    """Rebuild the four conditioned sets from the pooled unconditional law.

    The pooled atoms get weight pi_c / n for root c, are reweighted to have
    mean exactly pi, and the set for state c is a systematic resample of the
    pool tilted by f_c / pi_c.
    """
    atoms = np.concatenate(raw)
    w = np.concatenate([np.full(len(r), pi[c] / len(r)) for c, r in enumerate(raw)])
    w = _project_mean(atoms, w, pi)
    out = []
    for c in range(4):
        wc = w * atoms[:, c]
        total = wc.sum()
        if not total > 0:
            raise StateError(f"no sample supports state {STATES[c]}")
        cw = np.cumsum(wc / total)
        cw[-1] = 1.0
        u = _stream(seed, level, 48 + c, 0).random()
        idx = np.searchsorted(cw, (u + np.arange(size)) / size, side="right")
        out.append(atoms[np.minimum(idx, len(atoms) - 1)])
    return tuple(out)


def evolve_one_level(
    pop: Population,
    params: ChannelParams,
    new_size: int,
    seed: int,
    threads: int = 1,
    consistent: bool = True,
) -> Population:
    """Advance the population one tree level.

    For each target root state and each output sample, ``d`` child states
    are drawn from the root's row of the transition matrix, a level-n
    posterior is resampled for each child from the matching source set,
    and the parent posterior is formed from the product recursion.

    With ``consistent`` (the default) the four fresh sets are then pooled and
    re-split so that the set for state c is the pool tilted by f_c / pi_c.
    Independently resampled sets drift apart along the direction of a common
    bias in the posteriors, which the recursion amplifies by d * lam per
    level; below the threshold with lam > 1/d that drift swamps the signal
    within a few dozen levels.

    Raises
    ------
    DegenerateEvidenceError
        If some output has zero likelihood under every root state.
    """
    if int(new_size) != new_size or new_size < 1:
        raise ParameterError(f"population size must be >= 1, got {new_size}")
    sampler = _Sampler(pop, params)

    def job(root, k, m):
        rng = _stream(seed, pop.level, root, k)
        return sampler.posteriors(sampler.children(rng, root, m))

    jobs = [(r, k, m) for r in range(4) for k, m in _chunks(int(new_size))]
    parts = _run_jobs(job, jobs, threads)
    per_root = len(jobs) // 4
    samples = tuple(np.concatenate(parts[r * per_root:(r + 1) * per_root]) for r in range(4))
    if consistent:
        samples = _bayes_resample(samples, sampler.pi, int(new_size), seed, pop.level)
    return Population(pop.level + 1, pop.theta, samples)


def sample_z_products(
    pop: Population, params: ChannelParams, size: int, seed: int, root: int = 0, threads: int = 1
) -> np.ndarray:
    """Samples of (Z_1, .., Z_4) for one recursion step with the root fixed.

    ``root`` is 0-based (0 = state A).  Returned shape is (size, 4).
    """
    sampler = _Sampler(pop, params)

    def job(k, m):
        rng = _stream(seed, pop.level, 16 + root, k)
        return sampler.z_factors(sampler.children(rng, root, m))

    return np.concatenate(_run_jobs(job, [(k, m) for k, m in _chunks(int(size))], threads))


def sample_child_posteriors(
    pop: Population, params: ChannelParams, size: int, seed: int, root: int = 0, threads: int = 1
) -> np.ndarray:
    """Posteriors of children of a state-``root`` node; shape (size, 4).

    Each row is an independent draw: child state from the root's row of the
    transition matrix, then a posterior from the matching source law.
    """
    sampler = _Sampler(pop, params)
    d = params.d
    per = -(-int(size) // d)

    def job(k, m):
        rng = _stream(seed, pop.level, 32 + root, k)
        return sampler.children(rng, root, m).reshape(-1, 4)

    out = np.concatenate(_run_jobs(job, [(k, m) for k, m in _chunks(per)], threads))
    return out[: int(size)]


def child_law(pop: Population, params: ChannelParams, root: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Exact law of a child's posterior given the parent state (exact populations)."""
    if not pop.exact:
        raise StateError("child_law needs an exact population")
    p = make_transition(params)[root]
    atoms = np.concatenate(pop.samples)
    weights = np.concatenate([p[c] * pop.weights[c] for c in range(4)])
    return atoms, weights


# ---------------------------------------------------------------------------
# moment estimation


def _mean_se(values: np.ndarray, weights: np.ndarray | None) -> tuple[float, float]:
    if weights is not None:
        return float(weights @ values), 0.0
    n = len(values)
    if values[0] == values[-1] and np.ptp(values) == 0:
        return float(values[0]), 0.0  # avoids summation rounding on constant samples
    mean = float(values.mean())
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, se


def moment_terms(pop: Population) -> dict:
    """Per-sample integrands of the twelve moments, with their weights."""
    h, g = pop.theta / 2, (1 - pop.theta) / 2
    s1, s3 = pop.samples[0], pop.samples[2]
    w1 = w3 = None
    if pop.weights is not None:
        w1, w3 = pop.weights[0], pop.weights[2]
    d11, d12, d13 = s1[:, 0] - h, s1[:, 1] - h, s1[:, 2] - g
    d31, d33, d34 = s3[:, 0] - h, s3[:, 2] - g, s3[:, 3] - g
    return {
        "x_th": (d11, w1), "y_th": (d12, w1), "z_th": (d31, w3),
        "u_th": (d11**2, w1), "v_th": (d12**2, w1), "w_th": (d31**2, w3),
        "x_1mth": (d33, w3), "y_1mth": (d34, w3), "z_1mth": (d13, w1),
        "u_1mth": (d33**2, w3), "v_1mth": (d34**2, w3), "w_1mth": (d13**2, w1),
    }


def estimate_moments(pop: Population) -> MomentEstimate:
    """Sample means (or exact weighted means) of the twelve moments."""
    terms = moment_terms(pop)
    vals, ses = [], []
    for name in MOMENT_NAMES:
        m, se = _mean_se(*terms[name])
        vals.append(m)
        ses.append(se)
    return MomentEstimate(
        MomentVector.from_array(vals, pop.theta),
        MomentVector.from_array(ses, pop.theta),
        pop.size,
    )


def estimate_cross_moments(pop: Population) -> CrossMomentEstimate:
    h, g = pop.theta / 2, (1 - pop.theta) / 2
    s1, s3 = pop.samples[0], pop.samples[2]
    w1 = w3 = None
    if pop.weights is not None:
        w1, w3 = pop.weights[0], pop.weights[2]
    integrands = {
        "a": ((s1[:, 0] - h) * (s1[:, 1] - h), w1),
        "b": ((s1[:, 0] - h) * (s1[:, 2] - g), w1),
        "c": ((s1[:, 1] - h) * (s1[:, 2] - g), w1),
        "d": ((s1[:, 2] - g) * (s1[:, 3] - g), w1),
        "e": ((s3[:, 0] - h) * (s3[:, 1] - h), w3),
    }
    value, se = {}, {}
    for k, (v, w) in integrands.items():
        value[k], se[k] = _mean_se(v, w)
    return CrossMomentEstimate(value, se, pop.size)


def run_trajectory(
    params: ChannelParams, levels: int, size: int, seed: int, threads: int = 1
) -> list[MomentEstimate]:
    """Moment estimates at levels 0..levels of a density-evolution run."""
    if int(levels) != levels or levels < 0:
        raise ParameterError(f"levels must be >= 0, got {levels}")
    pop = init_population(size, params.theta)
    out = [estimate_moments(pop)]
    for _ in range(int(levels)):
        pop = evolve_one_level(pop, params, size, seed, threads)
        out.append(estimate_moments(pop))
    return out


def classify_series(
    x_th: Sequence[float],
    x_1mth: Sequence[float],
    se_th: Sequence[float],
    se_1mth: Sequence[float],
    tol: float = 1e-4,
    n_sigma: float = 5.0,
) -> str:
    """Classify a trajectory of the two correct-guess excesses.

    ``collapses``: the final max(x_th, x_1mth) is below max(tol, n_sigma*se)
    and the last third shows no significant upward trend.
    ``reconstructs``: over the whole last third, both series stay above
    n_sigma standard errors (and above zero).
    Anything else is ``undecided``.
    """
    x_th, x_1mth = np.asarray(x_th, float), np.asarray(x_1mth, float)
    se_th, se_1mth = np.asarray(se_th, float), np.asarray(se_1mth, float)
    n = len(x_th)
    if n < 10:
        raise ParameterError(f"need at least 10 levels to classify, got {n}")
    tail = slice(n - max(n // 3, 3), n)
    top = np.maximum(x_th, x_1mth)
    se_top = np.maximum(se_th, se_1mth)
    threshold = max(tol, n_sigma * se_top[-1])
    t = np.arange(n)[tail]
    slope = np.polyfit(t, top[tail], 1)[0] if np.ptp(top[tail]) > 0 else 0.0
    rise = slope * (t[-1] - t[0])
    if top[-1] < threshold and rise <= n_sigma * max(se_top[tail].mean(), 1e-300):
        return "collapses"
    plateau_th = np.all((x_th[tail] > n_sigma * se_th[tail]) & (x_th[tail] > 0))
    plateau_1mth = np.all((x_1mth[tail] > n_sigma * se_1mth[tail]) & (x_1mth[tail] > 0))
    if plateau_th and plateau_1mth:
        return "reconstructs"
    return "undecided"


def classify_reconstruction(traj: Sequence[MomentEstimate], tol: float = 1e-4) -> str:
    """Classify a popdyn trajectory as reconstructs / collapses / undecided."""
    return classify_series(
        [e.value.x_th for e in traj],
        [e.value.x_1mth for e in traj],
        [e.std_err.x_th for e in traj],
        [e.std_err.x_1mth for e in traj],
        tol,
    )


# ---------------------------------------------------------------------------
# exact finite laws


def law_from_atoms(
    atoms: np.ndarray, weights: np.ndarray, theta: float, level: int = 0, tol: float = 1e-10
) -> Population:
    """Exact law from posterior atoms and their unconditional probabilities.

    Any law on the simplex whose mean is the stationary distribution is the
    law of a genuine posterior; conditioning on root state c tilts the
    weights by ``p(c) / pi_c``.
    """
    atoms = np.asarray(atoms, dtype=float)
    weights = np.asarray(weights, dtype=float)
    pi = stationary_distribution(theta)
    weights = weights / weights.sum()
    mean = weights @ atoms
    if np.max(np.abs(mean - pi)) > tol:
        raise StateError(f"atom mean {mean} differs from the stationary distribution")
    cond = tuple(weights * atoms[:, c] / pi[c] for c in range(4))
    cond = tuple(w / w.sum() for w in cond)
    return Population(level, theta, (atoms,) * 4, cond)


def unconditional_atoms(pop: Population) -> tuple[np.ndarray, np.ndarray]:
    """Pool the four conditioned sets into one unconditional weighted law."""
    pi = stationary_distribution(pop.theta)
    if pop.exact and all(s is pop.samples[0] for s in pop.samples):
        w = sum(pi[c] * pop.weights[c] for c in range(4))
        return pop.samples[0], w / w.sum()
    atoms, weights = [], []
    for c in range(4):
        s = pop.samples[c]
        w = pop.weights[c] if pop.exact else np.full(len(s), 1.0 / len(s))
        atoms.append(s)
        weights.append(pi[c] * w)
    w = np.concatenate(weights)
    return np.concatenate(atoms), w / w.sum()


def symmetrized_law(
    atoms: np.ndarray, weights: np.ndarray, theta: float, scale: float = 1.0, level: int = 0
) -> Population:
    """Exact law closed under the model symmetries, with rescaled spread.

    Each atom p is mapped to pi + scale * (p - pi) and then replaced by its
    orbit under reflection through pi and the swaps A<->T and G<->C (eight
    copies, equal weight).  The result has mean exactly pi and vanishing odd
    central moments.
    """
    pi = stationary_distribution(theta)
    dev = scale * (np.asarray(atoms, float) - pi)
    w = np.asarray(weights, float)
    orbit = []
    for sign in (1.0, -1.0):
        for perm in ([0, 1, 2, 3], [1, 0, 2, 3], [0, 1, 3, 2], [1, 0, 3, 2]):
            orbit.append(sign * dev[:, perm])
    out = pi + np.concatenate(orbit)
    if np.any(out < 0):
        raise StateError("scale too large: reflected atoms leave the simplex")
    return law_from_atoms(out, np.tile(w, 8), theta, level)


def _shared_atoms(law: Population) -> np.ndarray:
    if not law.exact or not all(s is law.samples[0] for s in law.samples):
        raise StateError("exact recursion needs an exact law with shared atoms")
    return law.samples[0]


def _tuple_blocks(k: int, d: int, block: int):
    total = k**d
    for start in range(0, total, block):
        ids = np.arange(start, min(total, start + block))
        yield np.unravel_index(ids, (k,) * d)


def _child_weights(law: Population, params: ChannelParams) -> np.ndarray:
    """nu[r, k]: probability that a child of a state-r parent shows atom k."""
    p = make_transition(params)
    return p @ np.vstack(law.weights)


def exact_evolve(law: Population, params: ChannelParams, max_atoms: int = 1 << 21) -> Population:
    """Exact next-level law: one atom per ordered d-tuple of child atoms."""
    atoms = _shared_atoms(law)
    k, d = len(atoms), params.d
    if k**d > max_atoms:
        raise StateError(f"{k}^{d} tuples exceed the limit of {max_atoms}")
    pi = params.pi
    msg = (1.0 - params.lam) + params.lam * atoms / pi
    nu = _child_weights(law, params)
    idx = np.unravel_index(np.arange(k**d), (k,) * d)
    z = np.prod([msg[i] for i in idx], axis=0)
    n = pi * z
    s = n.sum(axis=1)
    if np.any(s <= 0):
        raise DegenerateEvidenceError("zero-likelihood tuple in exact recursion")
    new_atoms = n / s[:, None]
    weights = tuple(np.prod([nu[r][i] for i in idx], axis=0) for r in range(4))
    weights = tuple(w / w.sum() for w in weights)
    return Population(law.level + 1, law.theta, (new_atoms,) * 4, weights)


def exact_next_moments(law: Population, params: ChannelParams, block: int = 1 << 18) -> MomentVector:
    """Twelve moments of the next level, streamed over all child tuples."""
    atoms = _shared_atoms(law)
    k, d = len(atoms), params.d
    pi = params.pi
    h, g = law.theta / 2, (1 - law.theta) / 2
    msg = (1.0 - params.lam) + params.lam * atoms / pi
    nu = _child_weights(law, params)
    acc = np.zeros(len(MOMENT_NAMES))
    for idx in _tuple_blocks(k, d, block):
        z = msg[idx[0]].copy()
        w1 = nu[0][idx[0]].copy()
        w3 = nu[2][idx[0]].copy()
        for i in idx[1:]:
            z *= msg[i]
            w1 *= nu[0][i]
            w3 *= nu[2][i]
        n = pi * z
        f = n / n.sum(axis=1)[:, None]
        d11, d12, d13 = f[:, 0] - h, f[:, 1] - h, f[:, 2] - g
        d31, d33, d34 = f[:, 0] - h, f[:, 2] - g, f[:, 3] - g
        acc += [
            w1 @ d11, w1 @ d12, w3 @ d31, w1 @ d11**2, w1 @ d12**2, w3 @ d31**2,
            w3 @ d33, w3 @ d34, w1 @ d13, w3 @ d33**2, w3 @ d34**2, w1 @ d13**2,
        ]
    return MomentVector.from_array(acc, law.theta)


# ---------------------------------------------------------------------------
# CSV


def _fmt(v) -> str:
    return format(float(v), ".17g")


def write_trajectory_csv(traj: Iterable[MomentEstimate], fh) -> None:
    """Write one row per level with value and standard error of each moment."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(TRAJECTORY_COLUMNS)
    for level, est in enumerate(traj):
        row = [str(level)]
        for n in MOMENT_NAMES:
            row += [_fmt(getattr(est.value, n)), _fmt(getattr(est.std_err, n))]
        row.append(str(est.n_samples))
        w.writerow(row)


def read_trajectory_csv(fh, theta: float) -> list[MomentEstimate]:
    out = []
    for row in csv.DictReader(fh):
        vals = [float(row[n]) for n in MOMENT_NAMES]
        ses = [float(row["se_" + n]) for n in MOMENT_NAMES]
        out.append(
            MomentEstimate(
                MomentVector.from_array(vals, theta),
                MomentVector.from_array(ses, theta),
                int(row["n_samples"]),
            )
        )
    return out

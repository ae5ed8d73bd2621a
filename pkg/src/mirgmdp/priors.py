"""Reward distributions, problem instances and random instance generation.

Four families are supported: a point mass, a two-point law with one negative
and one positive atom, a general finite discrete law, and a Gaussian. The three
discrete families share one atom-based implementation, which makes every
quantity needed downstream (CDF, positivity mass, dominance) exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy import stats

from mirgmdp.errors import InvalidInstanceError, InvalidPriorError

# Arms whose mean is closer than this to the default's mean are rejected.
MEAN_GAP_TOLERANCE = 1e-9
# Tolerance on the total mass of a discrete law.
PROBABILITY_SUM_TOLERANCE = 1e-12

RngLike = Union[int, np.random.Generator, None]


def as_generator(rng: RngLike) -> np.random.Generator:
    """Return ``rng`` if it is a generator, otherwise seed a fresh one."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


class _DiscreteMixin:
    """Shared behaviour of the finite-support families.

    Subclasses populate ``_values`` (strictly increasing), ``_probs`` and
    ``_cum`` (cumulative probabilities ending at exactly 1).
    """

    _values: np.ndarray
    _probs: np.ndarray
    _cum: np.ndarray

    is_discrete = True

    def _init_atoms(self, values: Sequence[float], probs: Sequence[float]) -> None:
        v = np.asarray(values, dtype=float)
        p = np.asarray(probs, dtype=float)
        cum = np.cumsum(p)
        cum[-1] = 1.0
        for arr in (v, p, cum):
            arr.setflags(write=False)
        object.__setattr__(self, "_values", v)
        object.__setattr__(self, "_probs", p)
        object.__setattr__(self, "_cum", cum)
        object.__setattr__(self, "mean", math.fsum(v * p))

    def atoms(self) -> tuple[np.ndarray, np.ndarray]:
        """Support points (increasing) and their probabilities."""
        return self._values, self._probs

    @property
    def support_bound(self) -> float:
        return float(np.max(np.abs(self._values)))

    def cdf(self, x):
        """Pr(X <= x); vectorized over ``x``."""
        idx = np.searchsorted(self._values, x, side="right")
        out = np.where(idx > 0, self._cum[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def cdf_left(self, x):
        """Pr(X < x); vectorized over ``x``."""
        idx = np.searchsorted(self._values, x, side="left")
        out = np.where(idx > 0, self._cum[np.maximum(idx - 1, 0)], 0.0)
        return float(out) if np.ndim(out) == 0 else out

    def prob_positive(self, threshold: float = 0.0) -> float:
        """Pr(X > threshold), summed directly over the atoms."""
        return math.fsum(self._probs[self._values > threshold])

    def sample(self, rng: np.random.Generator, size=None):
        """Draw by inverting the CDF with one uniform per draw."""
        u = rng.random(size)
        idx = np.searchsorted(self._cum, u, side="right")
        out = self._values[np.minimum(idx, len(self._values) - 1)]
        return float(out) if size is None else out


@dataclass(frozen=True)
class PointMass(_DiscreteMixin):
    """A degenerate law putting all mass on ``value``."""

    value: float
    mean: float = field(init=False, repr=False)

    family = "point"

    def __post_init__(self):
        if not math.isfinite(self.value):
            raise InvalidPriorError(f"point mass value must be finite, got {self.value}")
        self._init_atoms([self.value], [1.0])

    def params(self) -> dict:
        return {"value": self.value}


@dataclass(frozen=True)
class TwoPoint(_DiscreteMixin):
    """``x_plus`` with probability ``p_plus``, otherwise ``x_minus``."""

    x_minus: float
    x_plus: float
    p_plus: float
    mean: float = field(init=False, repr=False)

    family = "two_point"

    def __post_init__(self):
        if not (self.x_minus < 0 < self.x_plus):
            raise InvalidPriorError(
                f"two-point law needs x_minus < 0 < x_plus, got {self.x_minus}, {self.x_plus}"
            )
        if not (0.0 < self.p_plus < 1.0):
            raise InvalidPriorError(f"p_plus must lie in (0, 1), got {self.p_plus}")
        self._init_atoms([self.x_minus, self.x_plus], [1.0 - self.p_plus, self.p_plus])

    def prob_positive(self, threshold: float = 0.0) -> float:
        if threshold < self.x_minus:
            return 1.0
        return self.p_plus if threshold < self.x_plus else 0.0

    def params(self) -> dict:
        return {"x_minus": self.x_minus, "x_plus": self.x_plus, "p_plus": self.p_plus}


@dataclass(frozen=True)
class FiniteDiscrete(_DiscreteMixin):
    """A law on finitely many strictly increasing ``values``."""

    values: tuple[float, ...]
    probs: tuple[float, ...]
    mean: float = field(init=False, repr=False)

    family = "discrete"

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)
        if len(values) == 0 or len(values) != len(probs):
            raise InvalidPriorError("values and probs must be non-empty and of equal length")
        if not all(math.isfinite(v) for v in values):
            raise InvalidPriorError("support values must be finite")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise InvalidPriorError("support values must be strictly increasing")
        if any(not (p > 0) for p in probs):
            raise InvalidPriorError("all probabilities must be positive")
        if abs(math.fsum(probs) - 1.0) > PROBABILITY_SUM_TOLERANCE:
            raise InvalidPriorError(f"probabilities sum to {math.fsum(probs)}, not 1")
        self._init_atoms(values, probs)

    def params(self) -> dict:
        return {"values": list(self.values), "probs": list(self.probs)}


@dataclass(frozen=True)
class Gaussian:
    """Normal law; instances built from these usually share one ``sigma``."""

    mean: float
    sigma: float = 1.0

    family = "gaussian"
    is_discrete = False
    support_bound = None

    def __post_init__(self):
        if not (math.isfinite(self.mean) and self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidPriorError(f"invalid Gaussian parameters {self.mean}, {self.sigma}")

    def cdf(self, x):
        out = stats.norm.cdf(x, loc=self.mean, scale=self.sigma)
        return float(out) if np.ndim(out) == 0 else out

    cdf_left = cdf

    def prob_positive(self, threshold: float = 0.0) -> float:
        return float(stats.norm.sf(threshold, loc=self.mean, scale=self.sigma))

    def sample(self, rng: np.random.Generator, size=None):
        out = rng.normal(self.mean, self.sigma, size)
        return float(out) if size is None else out

    def atoms(self):
        raise InvalidPriorError("a Gaussian law has no finite support")

    def params(self) -> dict:
        return {"mean": self.mean, "sigma": self.sigma}


RewardPrior = Union[PointMass, TwoPoint, FiniteDiscrete, Gaussian]

FAMILIES = {cls.family: cls for cls in (PointMass, TwoPoint, FiniteDiscrete, Gaussian)}


def discretize(prior: Gaussian, points: int = 21, width: float = 3.0) -> FiniteDiscrete:
    """Symmetric grid approximation of a Gaussian.

    Atoms sit at ``mean + sigma * z`` for ``points`` equally spaced ``z`` in
    ``[-width, width]`` with weights proportional to the standard normal
    density. The grid is symmetric, so the mean is kept, and two Gaussians with
    a common sigma map to shifted copies of one law, so dominance is kept too.
    """
    z = np.linspace(-width, width, points)
    w = stats.norm.pdf(z)
    w = w / w.sum()
    return FiniteDiscrete(tuple(prior.mean + prior.sigma * z), tuple(w))


def dominates(p: RewardPrior, q: RewardPrior, tol: float = 1e-12) -> bool:
    """First-order stochastic dominance of ``p`` over ``q``.

    Every pair of supported families is decidable: two Gaussians are
    comparable only with equal sigma, a Gaussian and a finite law never are
    (their lower or upper tails cross), and finite laws are compared by
    scanning both CDFs over the merged support.
    """
    if not p.is_discrete and not q.is_discrete:
        if math.isclose(p.sigma, q.sigma, rel_tol=1e-12):
            return p.mean >= q.mean
        return False
    if p.is_discrete != q.is_discrete:
        return False
    grid = np.union1d(p.atoms()[0], q.atoms()[0])
    return bool(np.all(p.cdf(grid) <= q.cdf(grid) + tol))


@dataclass(frozen=True, eq=False)
class Instance:
    """Immutable problem description.

    Attributes:
        arms: Reward priors of the K arms, indexed from 0.
        default: Prior of the default arm; its mean is the MIR threshold.
        seed: Seed that generated the instance, if any.
        name: Free-form identifier used in reports.
    """

    arms: tuple
    default: RewardPrior = PointMass(0.0)
    seed: int | None = None
    name: str = ""
    means: np.ndarray = field(init=False, repr=False)
    threshold: float = field(init=False, repr=False)
    above: tuple[int, ...] = field(init=False, repr=False)
    neg: tuple[int, ...] = field(init=False, repr=False)
    above_mask: int = field(init=False, repr=False)
    neg_mask: int = field(init=False, repr=False)

    def __post_init__(self):
        arms = tuple(self.arms)
        if len(arms) == 0:
            raise InvalidInstanceError("an instance needs at least one arm")
        means = np.array([a.mean for a in arms], dtype=float)
        threshold = float(self.default.mean)
        close = np.flatnonzero(np.abs(means - threshold) < MEAN_GAP_TOLERANCE)
        if close.size:
            raise InvalidInstanceError(
                f"arm {int(close[0])} has mean {means[close[0]]} equal to the threshold {threshold}"
            )
        means.setflags(write=False)
        above = tuple(int(i) for i in np.flatnonzero(means > threshold))
        neg = tuple(int(i) for i in np.flatnonzero(means < threshold))
        object.__setattr__(self, "arms", arms)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "threshold", threshold)
        object.__setattr__(self, "above", above)
        object.__setattr__(self, "neg", neg)
        object.__setattr__(self, "above_mask", sum(1 << i for i in above))
        object.__setattr__(self, "neg_mask", sum(1 << i for i in neg))

    def _key(self) -> tuple:
        return (self.arms, self.default, self.seed, self.name)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Instance):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self) -> int:
        return hash(self._key())

    @property
    def K(self) -> int:
        return len(self.arms)

    @property
    def full_state(self) -> int:
        return (1 << self.K) - 1

    @property
    def is_discrete(self) -> bool:
        return all(a.is_discrete for a in self.arms) and self.default.is_discrete

    @property
    def support_bound(self) -> float | None:
        """Largest support bound over the arms and the default, or None."""
        bounds = [a.support_bound for a in (*self.arms, self.default)]
        if any(b is None for b in bounds):
            return None
        return float(max(bounds))

    def neg_arms_ordered(self) -> bool:
        """True iff the neg arms are totally ordered by dominance in mean order."""
        order = sorted(self.neg, key=lambda j: (-self.means[j], j))
        return all(dominates(self.arms[a], self.arms[b]) for a, b in zip(order, order[1:]))


# Generated arms keep their means at least this far from the zero threshold.
MIN_ABS_MEAN = 0.05

TEMPLATES = ("gaussian", "gaussian21", "two_point", "discrete", "unordered")


def _random_discrete(rng: np.random.Generator, lo: float, hi: float) -> FiniteDiscrete:
    n = int(rng.integers(2, 5))
    values = np.unique(np.round(rng.uniform(lo, hi, n), 3))
    while values.size < 2:
        values = np.unique(np.round(rng.uniform(lo, hi, n), 3))
    probs = rng.dirichlet(np.ones(values.size))
    probs = np.maximum(probs, 1e-3)
    probs = probs / probs.sum()
    return FiniteDiscrete(tuple(values), tuple(probs))


def _draw_away_from_zero(rng: np.random.Generator, draw, mean_of, K: int) -> np.ndarray:
    """Draw ``K`` iid parameters, redrawing each one whose mean lies within 0.05 of zero."""
    params = draw(K)
    bad = np.abs(mean_of(params)) < MIN_ABS_MEAN
    while bad.any():
        params[bad] = draw(int(bad.sum()))
        bad = np.abs(mean_of(params)) < MIN_ABS_MEAN
    return params


def _template_arms(K: int, template: str, rng: np.random.Generator, H: float) -> list:
    if template in ("gaussian", "gaussian21"):
        means = _draw_away_from_zero(rng, lambda n: rng.uniform(-3.0, 3.0, n), lambda m: m, K)
        arms = [Gaussian(float(m), 1.0) for m in means]
        if template == "gaussian21":
            arms = [discretize(a) for a in arms]
        return arms
    if template == "two_point":
        probs = _draw_away_from_zero(rng, lambda n: rng.uniform(0.02, 0.98, n),
                                     lambda p: -1.0 + p * (H + 1.0), K)
        return [TwoPoint(-1.0, H, float(p)) for p in probs]
    if template == "discrete":
        n_above = int(rng.integers(1, K + 1))
        grid = np.arange(-2.0, 3.0)
        base = rng.dirichlet(np.ones(grid.size))
        base = np.maximum(base, 1e-3)
        base = base / base.sum()
        base_mean = float(grid @ base)
        arms = []
        for _ in range(K - n_above):
            shift = -base_mean - float(rng.uniform(0.05, 1.5))
            arms.append(FiniteDiscrete(tuple(np.round(grid + shift, 6)), tuple(base)))
        for _ in range(n_above):
            arms.append(_random_discrete(rng, -2.0, 3.0))
        order = rng.permutation(K)
        return [arms[i] for i in order]
    if template == "unordered":
        return [_random_discrete(rng, -3.0, 3.0) for _ in range(K)]
    raise InvalidInstanceError(f"unknown template {template!r}; choose from {TEMPLATES}")


def generate_instance(
    K: int, template: str = "discrete", rng: RngLike = None, *, H: float = 1.0,
    max_tries: int = 1000,
) -> Instance:
    """Draw a random instance from a family template.

    Templates ``gaussian``, ``gaussian21`` (Gaussians discretized on 21 points),
    ``two_point`` (common support ``{-1, H}``) and ``discrete`` (neg arms are
    shifted copies of one base law) always satisfy the stochastic-order
    requirement on neg arms. ``unordered`` draws arbitrary finite laws.

    Args:
        K: Number of arms, at least 1.
        template: Template name from :data:`TEMPLATES`.
        rng: Seed or generator.
        H: Upper atom of the ``two_point`` template.
        max_tries: Redraws allowed before giving up.

    Returns:
        An instance with at least one above arm.

    Raises:
        InvalidInstanceError: On bad arguments or after ``max_tries`` failures.
    """
    if K < 1:
        raise InvalidInstanceError(f"K must be at least 1, got {K}")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    gen = as_generator(rng)
    for _ in range(max_tries):
        arms = _template_arms(K, template, gen, H)
        means = np.array([a.mean for a in arms])
        if np.any(np.abs(means) < MIN_ABS_MEAN) or not np.any(means > 0):
            continue
        inst = Instance(tuple(arms), seed=None if seed is None else int(seed),
                        name=f"{template}-K{K}" + ("" if seed is None else f"-s{seed}"))
        if template != "unordered" and not inst.neg_arms_ordered():
            continue
        return inst
    raise InvalidInstanceError(f"template {template!r} gave no valid instance in {max_tries} tries")

"""The auxiliary goal MDP over sets of unobserved arms.

States are Python ints used as bitmasks: bit ``i`` is set while arm ``i`` is
still unobserved. A policy is any object with an ``action(state)`` method that
returns ``None`` at terminal states and otherwise an arm pair ``(i, j)``; the
pair stands for the mix of above arm ``i`` with neg arm ``j`` or, when
``i == j``, for pulling above arm ``i`` alone. The evaluators here work on that
pair representation, and :func:`mix_portfolio` turns a pair into an explicit
:class:`Portfolio`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Union

import numpy as np

from mirgmdp.errors import (
    IncompletePolicyError,
    InvalidMixError,
    InvalidSupportError,
    UnsupportedExactError,
)
from mirgmdp.priors import Instance, as_generator

DEFAULT = -1
"""Arm key of the default arm inside portfolios."""

MIR_TOLERANCE = 1e-12

Action = Union[tuple[int, int], None]


class Policy(Protocol):
    def action(self, state: int) -> Action: ...


def state_of(arms: Iterable[int]) -> int:
    """Bitmask of a collection of arm indices."""
    mask = 0
    for a in arms:
        mask |= 1 << int(a)
    return mask


def members(state: int) -> list[int]:
    """Arm indices contained in ``state``, increasing."""
    out = []
    while state:
        low = state & -state
        out.append(low.bit_length() - 1)
        state ^= low
    return out


def popcount(state: int) -> int:
    return bin(state).count("1")


def above_of(instance: Instance, state: int) -> int:
    return state & instance.above_mask


def neg_of(instance: Instance, state: int) -> int:
    return state & instance.neg_mask


def is_terminal(instance: Instance, state: int) -> bool:
    """A state is terminal iff it holds no above arm."""
    return above_of(instance, state) == 0


@dataclass(frozen=True)
class Portfolio:
    """A finitely supported distribution over arms and the default arm.

    Entries keep their insertion order, which fixes how :meth:`sample` maps a
    uniform draw to an arm: the first entry owns ``[0, w_0)``, the next one
    ``[w_0, w_0 + w_1)``, and so on.
    """

    entries: tuple[tuple[int, float], ...]

    def __post_init__(self):
        if not self.entries:
            raise ValueError("a portfolio needs at least one entry")
        seen = set()
        for arm, w in self.entries:
            if arm in seen:
                raise ValueError(f"arm {arm} listed twice")
            seen.add(arm)
            if not (0.0 <= w <= 1.0):
                raise ValueError(f"weight {w} of arm {arm} outside [0, 1]")
        total = math.fsum(w for _, w in self.entries)
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {total}, not 1")

    @classmethod
    def single(cls, arm: int) -> "Portfolio":
        return cls(((arm, 1.0),))

    @classmethod
    def from_weights(cls, weights: Mapping[int, float]) -> "Portfolio":
        return cls(tuple((int(a), float(w)) for a, w in weights.items() if w > 0))

    @property
    def weights(self) -> dict[int, float]:
        return dict(self.entries)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(a for a, w in self.entries if w > 0)

    def weight(self, arm: int) -> float:
        return self.weights.get(arm, 0.0)

    def expectation(self, values: Mapping[int, float] | np.ndarray, default_value: float) -> float:
        """Expected value given per-arm values and the default arm's value."""
        total = 0.0
        for arm, w in self.entries:
            if w == 0.0:
                continue
            total += w * (default_value if arm == DEFAULT else float(values[arm]))
        return total

    def sample(self, u: float) -> int:
        """Arm selected by the uniform draw ``u`` in ``[0, 1)``."""
        acc = 0.0
        last = self.entries[0][0]
        for arm, w in self.entries:
            if w == 0.0:
                continue
            acc += w
            last = arm
            if u < acc:
                return arm
        return last

    def to_json(self) -> dict[str, float]:
        return {("default" if a == DEFAULT else str(a)): w for a, w in self.entries}


def mix_weights(means: np.ndarray, threshold: float, i: int, j: int) -> tuple[float, float]:
    """Weights ``(w_i, w_j)`` that put the mix of ``i`` and ``j`` exactly on the threshold.

    ``w_j`` is the largest weight on ``j`` keeping the expected mean at least
    the threshold.
    """
    if i == j:
        return 1.0, 0.0
    mi, mj = float(means[i]), float(means[j])
    gap = mi - mj
    return (threshold - mj) / gap, (mi - threshold) / gap


def mix_portfolio(instance: Instance, i: int, j: int) -> Portfolio:
    """Portfolio mixing above arm ``i`` with neg arm ``j`` (or ``i`` alone if ``i == j``).

    Raises:
        InvalidMixError: If ``i`` is not an above arm or ``j`` is not a neg arm.
    """
    if i not in instance.above:
        raise InvalidMixError(f"arm {i} is not above the threshold")
    if i == j:
        return Portfolio.single(i)
    if j not in instance.neg:
        raise InvalidMixError(f"arm {j} is not below the threshold")
    wi, wj = mix_weights(instance.means, instance.threshold, i, j)
    return Portfolio(((i, wi), (j, wj)))


def portfolio_for(instance: Instance, action: Action) -> Portfolio | None:
    """Explicit portfolio of an arm-pair action; ``None`` stays ``None``."""
    return None if action is None else mix_portfolio(instance, *action)


def mir_certificate(instance: Instance, p: Portfolio) -> float:
    """Prior expected reward of ``p`` minus the threshold."""
    return p.expectation(instance.means, instance.threshold) - instance.threshold


def is_mir_prior(instance: Instance, state: int, p: Portfolio) -> bool:
    """Whether ``p`` is individually rational given only the prior.

    The comparison tolerance is ``1e-12`` scaled by the magnitude of the
    weighted means, so that boundary mixes of large-valued arms pass.

    Raises:
        InvalidSupportError: If ``p`` puts mass outside ``state`` and the default arm.
    """
    for arm in p.support:
        if arm != DEFAULT and not (state >> arm) & 1:
            raise InvalidSupportError(f"arm {arm} is not in the state")
    scale = sum(w * abs(instance.threshold if a == DEFAULT else instance.means[a])
                for a, w in p.entries)
    return mir_certificate(instance, p) >= -MIR_TOLERANCE * max(1.0, scale)


def is_pvalid(instance: Instance, state: int, action: Action) -> bool:
    """Whether ``action`` is an admissible arm pair for ``state``."""
    if is_terminal(instance, state):
        return action is None
    if action is None:
        return False
    i, j = action
    if not (above_of(instance, state) >> i) & 1:
        return False
    if neg_of(instance, state):
        return i != j and bool((neg_of(instance, state) >> j) & 1)
    return i == j


def transition(state: int, p: Portfolio, rng) -> tuple[int, int]:
    """Draw the realized arm from ``p`` and remove it from ``state``."""
    gen = as_generator(rng)
    arm = p.sample(gen.random())
    return arm, state & ~(1 << arm)


class PolicyTable:
    """Materialized stationary policy: state bitmask to arm pair or ``None``."""

    def __init__(self, actions: Mapping[int, Action] | None = None):
        self.actions: dict[int, Action] = dict(actions or {})

    def action(self, state: int) -> Action:
        try:
            return self.actions[state]
        except KeyError:
            raise IncompletePolicyError(f"no action for state {state:#x}") from None

    def __len__(self) -> int:
        return len(self.actions)

    def __eq__(self, other) -> bool:
        return isinstance(other, PolicyTable) and self.actions == other.actions

    def audit(self, instance: Instance) -> list[int]:
        """States whose entry is not admissible; empty when the table is valid."""
        return [s for s, a in self.actions.items() if not is_pvalid(instance, s, a)]

    def dumps(self) -> str:
        """One ``<hex state> <i> <j>`` or ``<hex state> terminal`` line per state."""
        lines = []
        for s in sorted(self.actions):
            a = self.actions[s]
            lines.append(f"{s:#x} terminal" if a is None else f"{s:#x} {a[0]} {a[1]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "PolicyTable":
        actions: dict[int, Action] = {}
        for n, line in enumerate(text.splitlines(), 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) == 2 and parts[1] == "terminal":
                actions[int(parts[0], 16)] = None
            elif len(parts) == 3:
                actions[int(parts[0], 16)] = (int(parts[1]), int(parts[2]))
            else:
                raise ValueError(f"line {n}: cannot parse {line!r}")
        return cls(actions)


class MixTable:
    """Cached mixing weights for all arm pairs of a small instance."""

    def __init__(self, instance: Instance):
        m = instance.means
        t = instance.threshold
        gap = m[:, None] - m[None, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            self.w_i = np.where(gap != 0, (t - m[None, :]) / gap, 1.0)
            self.w_j = np.where(gap != 0, (m[:, None] - t) / gap, 0.0)
        np.fill_diagonal(self.w_i, 1.0)
        np.fill_diagonal(self.w_j, 0.0)


def mix_table(instance: Instance) -> MixTable:
    cached = instance.__dict__.get("_mix_table")
    if cached is None:
        cached = MixTable(instance)
        object.__setattr__(instance, "_mix_table", cached)
    return cached


# Terminal rewards -----------------------------------------------------------


@dataclass(frozen=True)
class MonteCarlo:
    """Monte Carlo terminal-reward mode: ``samples`` joint draws from ``seed``."""

    samples: int = 100_000
    seed: int = 0

    def __str__(self) -> str:
        return f"mc:{self.samples}:{self.seed}"


EXACT = "exact"
TerminalMode = Union[str, MonteCarlo]


class TerminalRewards:
    """Evaluator of the terminal reward for one instance and one mode.

    The terminal reward of a state with unexplored set ``s`` is the expected
    best reward over all arms on the event that some explored arm beats the
    threshold, plus the threshold times the probability of the complementary
    event. In exact mode the explored and unexplored maxima are independent
    with CDFs equal to products of arm CDFs, so the expectation is a finite
    sum over the merged support. In Monte Carlo mode one matrix of joint draws
    is shared by every state, so all states are compared on common random
    numbers.
    """

    def __init__(self, instance: Instance, mode: TerminalMode = EXACT):
        self.instance = instance
        self.mode = mode
        self._cache: dict[int, float] = {}
        self._se: dict[int, float] = {}
        t = instance.threshold
        if mode == EXACT:
            if not instance.is_discrete:
                raise UnsupportedExactError("exact terminal rewards need finite-support arms")
            grid = np.unique(np.concatenate([a.atoms()[0] for a in instance.arms] + [[t]]))
            self._grid = grid
            self._cdfs = np.vstack([a.cdf(grid) for a in instance.arms])
            self._t_index = int(np.searchsorted(grid, t))
        elif isinstance(mode, MonteCarlo):
            gen = np.random.default_rng(mode.seed)
            self._draws = np.column_stack(
                [a.sample(gen, mode.samples) for a in instance.arms])
            self._overall = self._draws.max(axis=1)
        else:
            raise ValueError(f"unknown terminal mode {mode!r}")

    def __call__(self, state: int) -> float:
        value = self._cache.get(state)
        if value is None:
            value = self._exact(state) if self.mode == EXACT else self._monte_carlo(state)
            self._cache[state] = value
        return value

    def stderr(self, state: int) -> float:
        """Standard error of the estimate; zero in exact mode."""
        self(state)
        return self._se.get(state, 0.0)

    def _exact(self, state: int) -> float:
        t = self.instance.threshold
        explored = np.array([not (state >> i) & 1 for i in range(self.instance.K)])
        f_e = np.prod(self._cdfs[explored], axis=0)
        f_u = np.prod(self._cdfs[~explored], axis=0)
        f_e_t = f_e[self._t_index]
        # Joint CDF of the overall max on the event that the explored max beats t.
        joint = f_u * np.maximum(f_e - f_e_t, 0.0)
        joint[: self._t_index + 1] = 0.0
        mass = np.diff(joint, prepend=0.0)
        return math.fsum(self._grid * mass) + t * f_e_t

    def _monte_carlo(self, state: int) -> float:
        t = self.instance.threshold
        explored = [i for i in range(self.instance.K) if not (state >> i) & 1]
        if explored:
            hit = self._draws[:, explored].max(axis=1) > t
            values = np.where(hit, self._overall, t)
        else:
            values = np.full(self._draws.shape[0], t)
        self._se[state] = float(values.std(ddof=1) / math.sqrt(values.size))
        return float(values.mean())


def terminal_reward(instance: Instance, state: int, mode: TerminalMode = EXACT) -> float:
    """Terminal reward of ``state``; see :class:`TerminalRewards`."""
    return TerminalRewards(instance, mode)(state)


# Policy evaluation ----------------------------------------------------------


def q_value(instance: Instance, policy: Policy, state: int) -> float:
    """Probability that ``policy`` started at ``state`` explores every arm."""
    mix = mix_table(instance)
    memo: dict[int, float] = {0: 1.0}

    def rec(s: int) -> float:
        got = memo.get(s)
        if got is not None:
            return got
        action = policy.action(s)
        if action is None:
            value = 0.0
        else:
            i, j = action
            if i == j:
                value = rec(s & ~(1 << i))
            else:
                value = mix.w_i[i, j] * rec(s & ~(1 << i)) + mix.w_j[i, j] * rec(s & ~(1 << j))
        memo[s] = value
        return value

    return rec(state)


def q_table(instance: Instance, policy: Policy) -> np.ndarray:
    """Q values of every state, computed bottom-up over all ``2**K`` masks."""
    mix = mix_table(instance)
    q = np.zeros(1 << instance.K)
    q[0] = 1.0
    for s in range(1, 1 << instance.K):
        action = policy.action(s)
        if action is None:
            continue
        i, j = action
        if i == j:
            q[s] = q[s & ~(1 << i)]
        else:
            q[s] = mix.w_i[i, j] * q[s & ~(1 << i)] + mix.w_j[i, j] * q[s & ~(1 << j)]
    return q


def reach_probabilities(instance: Instance, policy: Policy, state: int) -> dict[int, float]:
    """Probability of ending in each terminal state when ``policy`` starts at ``state``.

    Probability mass is pushed forward level by level in decreasing
    population count, so each reachable state is expanded once.
    """
    mix = mix_table(instance)
    levels: dict[int, dict[int, float]] = {popcount(state): {state: 1.0}}
    out: dict[int, float] = {}
    for level in range(popcount(state), -1, -1):
        layer = levels.pop(level, {})
        below = levels.setdefault(level - 1, {})
        for s, prob in layer.items():
            action = policy.action(s)
            if action is None:
                out[s] = out.get(s, 0.0) + prob
                continue
            i, j = action
            if i == j:
                child = s & ~(1 << i)
                below[child] = below.get(child, 0.0) + prob
            else:
                ci, cj = s & ~(1 << i), s & ~(1 << j)
                below[ci] = below.get(ci, 0.0) + prob * mix.w_i[i, j]
                below[cj] = below.get(cj, 0.0) + prob * mix.w_j[i, j]
    return out


def w_value(
    instance: Instance, policy: Policy, state: int, rewards: TerminalRewards | None = None,
    method: str = "forward",
) -> float:
    """Expected terminal reward of ``policy`` started at ``state``.

    Args:
        method: ``"forward"`` sums reach probabilities times terminal rewards;
            ``"backward"`` runs the memoized value recursion. Both traverse the
            same reachable states in opposite orders.
    """
    rewards = rewards or TerminalRewards(instance)
    if method == "forward":
        reach = reach_probabilities(instance, policy, state)
        return math.fsum(p * rewards(s) for s, p in reach.items())
    if method != "backward":
        raise ValueError(f"unknown method {method!r}")
    mix = mix_table(instance)
    memo: dict[int, float] = {}

    def rec(s: int) -> float:
        got = memo.get(s)
        if got is not None:
            return got
        action = policy.action(s)
        if action is None:
            value = rewards(s)
        else:
            i, j = action
            if i == j:
                value = rec(s & ~(1 << i))
            else:
                value = mix.w_i[i, j] * rec(s & ~(1 << i)) + mix.w_j[i, j] * rec(s & ~(1 << j))
        memo[s] = value
        return value

    return rec(state)


def sample_mir_portfolios(
    instance: Instance, state: int, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Random prior-MIR portfolios over the arms of a non-terminal ``state``.

    Rows are weight vectors over ``members(state)``. Half are drawn from a flat
    Dirichlet and half from a sparse one; draws below the threshold are pulled
    onto the MIR boundary by mixing toward the highest-mean arm of the state.
    """
    arms = members(state)
    mu = instance.means[arms]
    t = instance.threshold
    alphas = np.where(np.arange(n) % 2 == 0, 1.0, 0.2)
    raw = rng.gamma(alphas[:, None], size=(n, len(arms)))
    raw = np.maximum(raw, 1e-300)
    p = raw / raw.sum(axis=1, keepdims=True)
    best = int(np.argmax(mu))
    value = p @ mu
    short = value < t
    if np.any(short):
        lam = (t - value[short]) / (mu[best] - value[short])
        p[short] *= (1.0 - lam)[:, None]
        p[short, best] += lam
    return p

"""Policy constructors: the greedy-ordered index policy, ordered policies,
random admissible policies and an experimental conjecture index.

The index policy (exposed as :func:`ogp`) mixes the lowest-index above arm
with the highest-mean neg arm. Its sorted structure is built once per instance
and a play-out walks it with two pointers, so a full play-out from the full
state costs O(K) after an O(K log K) sort.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from mirgmdp.errors import LatticeTooLargeError, UnsupportedExactError
from mirgmdp.gmdp import (
    Action,
    Portfolio,
    PolicyTable,
    above_of,
    is_terminal,
    members,
    mix_weights,
    neg_of,
    portfolio_for,
)
from mirgmdp.priors import Instance

MAX_TABLE_ARMS = 20


@dataclass
class OpCounter:
    """Counts of elementary operations on the sorted index structure."""

    queries: int = 0
    pointer_moves: int = 0
    removals: int = 0


class OgpIndex:
    """Sorted structure behind the index policy.

    Args:
        means: Prior (or conditional) means of the arms.
        threshold: MIR threshold; arms with mean equal to it count as above.
        above_by_mean: Order above arms by decreasing mean instead of by index.
    """

    def __init__(self, means: np.ndarray, threshold: float, above_by_mean: bool = False):
        means = np.asarray(means, dtype=float)
        self.means = means
        self.threshold = float(threshold)
        idx = np.arange(means.size)
        is_above = means >= threshold
        above = idx[is_above]
        if above_by_mean:
            above = above[np.lexsort((above, -means[above]))]
        neg = idx[~is_above]
        neg = neg[np.lexsort((neg, -means[neg]))]
        self.above_order = above
        self.neg_order = neg

    @classmethod
    def for_instance(cls, instance: Instance) -> "OgpIndex":
        cached = instance.__dict__.get("_ogp_index")
        if cached is None:
            cached = cls(instance.means, instance.threshold)
            object.__setattr__(instance, "_ogp_index", cached)
        return cached

    def cursor(self, removed: np.ndarray | None = None) -> "OgpCursor":
        return OgpCursor(self, removed)

    def action(self, state: int) -> Action:
        """Action at an arbitrary bitmask state (linear scan, for table paths)."""
        i = next((int(a) for a in self.above_order if (state >> int(a)) & 1), None)
        if i is None:
            return None
        j = next((int(b) for b in self.neg_order if (state >> int(b)) & 1), None)
        return (i, i) if j is None else (i, j)


class OgpCursor:
    """Play-out cursor over an :class:`OgpIndex`.

    Arms leave the state through :meth:`remove`; the pointers skip removed arms
    lazily, so any sequence of removals costs amortized O(1) per query.
    """

    def __init__(self, index: OgpIndex, removed: np.ndarray | None = None):
        self.index = index
        k = index.means.size
        self.removed = np.zeros(k, dtype=bool) if removed is None else removed.copy()
        self._removed = self.removed.tolist()
        self._above = index.above_order.tolist()
        self._neg = index.neg_order.tolist()
        self._a = 0
        self._n = 0
        self.counter = OpCounter()

    def _advance(self) -> None:
        above, neg, removed = self._above, self._neg, self._removed
        while self._a < len(above) and removed[above[self._a]]:
            self._a += 1
            self.counter.pointer_moves += 1
        while self._n < len(neg) and removed[neg[self._n]]:
            self._n += 1
            self.counter.pointer_moves += 1

    def action(self) -> Action:
        """Current arm pair, or ``None`` once no above arm is left."""
        self.counter.queries += 1
        self._advance()
        if self._a == len(self._above):
            return None
        i = self._above[self._a]
        if self._n == len(self._neg):
            return (i, i)
        return (i, self._neg[self._n])

    def next_unexplored_neg(self) -> int | None:
        """Highest-mean arm among those still unexplored below the threshold."""
        self._advance()
        return self._neg[self._n] if self._n < len(self._neg) else None

    @property
    def neg_position(self) -> int:
        """Position of the next unexplored neg arm in decreasing-mean order."""
        self._advance()
        return self._n

    def remove(self, arm: int) -> None:
        self.counter.removals += 1
        self._removed[arm] = True
        self.removed[arm] = True

    def weights(self, action: tuple[int, int]) -> tuple[float, float]:
        return mix_weights(self.index.means, self.index.threshold, *action)


def ogp(instance: Instance, state: int) -> Portfolio | None:
    """Portfolio of the index policy at ``state``; ``None`` if terminal."""
    return portfolio_for(instance, OgpIndex.for_instance(instance).action(state))


def ogp_playout(instance: Instance, choices: Sequence[int] | None = None,
                rng: np.random.Generator | None = None) -> tuple[list, OpCounter]:
    """Run the index policy from the full state until terminal.

    Each step draws the realized arm from the mix; ``choices`` (per-step
    uniforms) or ``rng`` supply the randomness.

    Returns:
        The list of ``(action, realized arm)`` steps and the operation counts.
    """
    index = OgpIndex.for_instance(instance)
    cursor = index.cursor()
    steps = []
    k = 0
    while True:
        action = cursor.action()
        if action is None:
            break
        wi, _ = cursor.weights(action)
        u = choices[k] if choices is not None else rng.random()
        arm = action[0] if u < wi else action[1]
        cursor.remove(arm)
        steps.append((action, arm))
        k += 1
    return steps, cursor.counter


@dataclass
class PolicySpec:
    """Lazily evaluated policy.

    Attributes:
        kind: ``"ogp"``, ``"ordered"``, ``"random"`` or ``"conjecture"``.
        instance: The instance the policy acts on.
        rule: Maps a state bitmask to an arm pair or ``None``.
    """

    kind: str
    instance: Instance
    rule: Callable[[int], Action] = field(repr=False)

    def action(self, state: int) -> Action:
        return self.rule(state)

    def portfolio(self, state: int) -> Portfolio | None:
        return portfolio_for(self.instance, self.rule(state))

    def materialize(self, state: int | None = None) -> PolicyTable:
        """Table over every state reachable from ``state`` (default: all arms)."""
        start = self.instance.full_state if state is None else state
        table: dict[int, Action] = {}
        stack = [start]
        while stack:
            s = stack.pop()
            if s in table:
                continue
            a = self.rule(s)
            table[s] = a
            if a is not None:
                stack.append(s & ~(1 << a[0]))
                stack.append(s & ~(1 << a[1]))
        return PolicyTable(table)


def ogp_policy(instance: Instance) -> PolicySpec:
    return PolicySpec("ogp", instance, OgpIndex.for_instance(instance).action)


def ordered_policy(instance: Instance, left: Sequence[int], right: Sequence[int]) -> PolicySpec:
    """Policy mixing the first remaining arm of ``left`` with the first of ``right``.

    Args:
        left: Permutation of the above arms.
        right: Permutation of the neg arms.

    Raises:
        ValueError: If either sequence is not a permutation of its arm set.
    """
    left = [int(a) for a in left]
    right = [int(b) for b in right]
    if sorted(left) != list(instance.above) or sorted(right) != list(instance.neg):
        raise ValueError("orders must be permutations of the above and neg arm sets")

    def rule(state: int) -> Action:
        i = next((a for a in left if (state >> a) & 1), None)
        if i is None:
            return None
        j = next((b for b in right if (state >> b) & 1), None)
        return (i, i) if j is None else (i, j)

    return PolicySpec("ordered", instance, rule)


def random_pvalid(instance: Instance, seed) -> PolicyTable:
    """Table over all states with an independently uniform admissible pair per state.

    Raises:
        LatticeTooLargeError: If the instance has more than 20 arms.
    """
    if instance.K > MAX_TABLE_ARMS:
        raise LatticeTooLargeError(f"K={instance.K} exceeds {MAX_TABLE_ARMS}")
    rng = np.random.default_rng(seed)
    n = 1 << instance.K
    u = rng.random((n, 2))
    actions: dict[int, Action] = {}
    for s in range(n):
        above = members(above_of(instance, s))
        if not above:
            actions[s] = None
            continue
        i = above[int(u[s, 0] * len(above))]
        neg = members(neg_of(instance, s))
        actions[s] = (i, i) if not neg else (i, neg[int(u[s, 1] * len(neg))])
    return PolicyTable(actions)


def conjecture_scores(instance: Instance, state: int) -> dict[int, float]:
    """Index of every neg arm of ``state``.

    For neg arm ``j`` the score is the probability that ``j`` beats the
    threshold, times the expected best reward over the arms of ``state`` given
    that event, divided by the distance of ``j``'s mean below the threshold.

    Raises:
        UnsupportedExactError: For instances with a continuous arm.
    """
    if not instance.is_discrete:
        raise UnsupportedExactError("the conjecture index needs finite-support arms")
    t = instance.threshold
    arms = members(state)
    grid = np.unique(np.concatenate([instance.arms[a].atoms()[0] for a in arms]))
    cdfs = {a: instance.arms[a].cdf(grid) for a in arms}
    scores = {}
    for j in members(neg_of(instance, state)):
        prior = instance.arms[j]
        pj = prior.prob_positive(t)
        if pj == 0.0:
            scores[j] = 0.0
            continue
        f_j = prior.cdf(t)
        cond = np.maximum(cdfs[j] - f_j, 0.0) / pj
        others = np.prod([cdfs[a] for a in arms if a != j], axis=0) if len(arms) > 1 else 1.0
        joint = cond * others
        expected_max = math.fsum(grid * np.diff(joint, prepend=0.0))
        scores[j] = pj * expected_max / (t - instance.means[j])
    return scores


def conjecture_action(instance: Instance, state: int) -> Action:
    if is_terminal(instance, state):
        return None
    i = members(above_of(instance, state))[0]
    scores = conjecture_scores(instance, state)
    if not scores:
        return (i, i)
    j = min(scores, key=lambda a: (-scores[a], a))
    return (i, j)


def conjecture_index(instance: Instance, state: int) -> Portfolio | None:
    """Portfolio mixing the lowest-index above arm with the top-scoring neg arm."""
    return portfolio_for(instance, conjecture_action(instance, state))


def conjecture_policy(instance: Instance) -> PolicySpec:
    return PolicySpec("conjecture", instance, lambda s: conjecture_action(instance, s))

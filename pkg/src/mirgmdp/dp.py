"""Exhaustive dynamic program over all subsets of unobserved arms.

States are processed in increasing population count so that every successor
is solved first. At each non-terminal state every admissible arm pair is
scored and the best one kept, preferring the lexicographically smallest pair
unless another beats it by more than a relative ``1e-12``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mirgmdp.errors import LatticeTooLargeError
from mirgmdp.gmdp import (
    EXACT,
    Action,
    MonteCarlo,
    PolicyTable,
    TerminalMode,
    TerminalRewards,
    mix_table,
    members,
    popcount,
    sample_mir_portfolios,
)
from mirgmdp.priors import Instance

MAX_DP_ARMS = 20
TIE_TOLERANCE = 1e-12


@dataclass
class DpSolution:
    """Optimal values and actions of every state.

    Attributes:
        w_star: Optimal value indexed by state bitmask.
        best_action: Optimal arm pair (``None`` when terminal) per state.
        mode: Terminal-reward mode used for the whole solve.
    """

    instance: Instance
    w_star: np.ndarray
    best_action: list
    mode: TerminalMode = EXACT

    @property
    def value(self) -> float:
        return float(self.w_star[self.instance.full_state])

    def policy(self) -> PolicyTable:
        return PolicyTable(dict(enumerate(self.best_action)))

    def dumps(self) -> str:
        """Golden-file text: a header, then ``<hex state> <value> <action>`` lines."""
        lines = [f"# K={self.instance.K} mode={self.mode}"]
        for s, (w, a) in enumerate(zip(self.w_star, self.best_action)):
            act = "terminal" if a is None else f"{a[0]},{a[1]}"
            lines.append(f"{s:#x} {float(w)!r} {act}")
        return "\n".join(lines) + "\n"

    @staticmethod
    def loads(text: str) -> tuple[np.ndarray, list]:
        """Parse golden-file text back into value and action arrays."""
        values, actions = [], []
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            state, value, act = line.split()
            if int(state, 16) != len(values):
                raise ValueError(f"states out of order at {state}")
            values.append(float(value))
            actions.append(None if act == "terminal" else tuple(int(x) for x in act.split(",")))
        return np.array(values), actions


def _states_by_popcount(k: int) -> list[list[int]]:
    strata: list[list[int]] = [[] for _ in range(k + 1)]
    for s in range(1 << k):
        strata[popcount(s)].append(s)
    return strata


def solve(
    instance: Instance,
    mode: TerminalMode = EXACT,
    extra_portfolios: int = 0,
    seed: int = 0,
) -> DpSolution:
    """Optimal values over all states.

    Args:
        instance: Instance with at most 20 arms.
        mode: Terminal-reward mode (exact needs finite-support arms).
        extra_portfolios: If positive, also score this many random prior-MIR
            portfolios over all arms of each non-terminal state. Such actions
            never enter ``best_action``; they only probe whether a richer
            action set can raise the value.
        seed: Seed for the random portfolios.

    Raises:
        LatticeTooLargeError: If the instance has more than 20 arms.
    """
    k = instance.K
    if k > MAX_DP_ARMS:
        raise LatticeTooLargeError(f"K={k} exceeds the DP bound of {MAX_DP_ARMS}")
    rewards = TerminalRewards(instance, mode)
    mix = mix_table(instance)
    rng = np.random.default_rng(seed)
    n = 1 << k
    w = np.zeros(n)
    best: list[Action] = [None] * n
    above_mask, neg_mask = instance.above_mask, instance.neg_mask
    for stratum in _states_by_popcount(k):
        for s in stratum:
            above = members(s & above_mask)
            if not above:
                w[s] = rewards(s)
                continue
            neg = members(s & neg_mask)
            if not neg:
                vals = [w[s & ~(1 << i)] for i in above]
                pick = _first_best(vals)
                best[s] = (above[pick], above[pick])
                w[s] = vals[pick]
            else:
                ai = np.array(above)
                nj = np.array(neg)
                wi = mix.w_i[np.ix_(ai, nj)]
                wj = mix.w_j[np.ix_(ai, nj)]
                wa = w[[s & ~(1 << i) for i in above]]
                wn = w[[s & ~(1 << j) for j in neg]]
                vals = (wi * wa[:, None] + wj * wn[None, :]).ravel()
                pick = _first_best(vals)
                best[s] = (above[pick // len(neg)], neg[pick % len(neg)])
                w[s] = vals[pick]
            if extra_portfolios:
                arms = members(s)
                p = sample_mir_portfolios(instance, s, extra_portfolios, rng)
                children = w[[s & ~(1 << a) for a in arms]]
                w[s] = max(w[s], float(np.max(p @ children)))
    return DpSolution(instance, w, best, mode)


def _first_best(vals) -> int:
    """Index of the first value within the tie tolerance of the maximum."""
    vals = np.asarray(vals, dtype=float)
    top = vals.max()
    return int(np.flatnonzero(vals >= top - TIE_TOLERANCE * max(1.0, abs(top)))[0])


def w_star(instance: Instance, mode: TerminalMode = EXACT) -> float:
    """Optimal value at the full state."""
    return solve(instance, mode).value


__all__ = ["DpSolution", "MonteCarlo", "solve", "w_star", "MAX_DP_ARMS"]

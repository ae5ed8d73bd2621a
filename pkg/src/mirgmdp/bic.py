"""Incentive-compatible exploration with hidden exploration rounds.

The mechanism first recommends the default arm, then greedy or default
recommendations, and afterwards splits time into phases of ``B`` rounds. In
each phase where the embedded index mechanism still explores, one uniformly
random round carries its recommendation and every other round gets the
greedy arm (once some revealed arm beats the default) or the default arm.

Besides the scalar engine :func:`run_bic_iregb` this module has a batch engine
that produces the recommendation matrix of many runs at once, and the
empirical incentive auditor :func:`audit_bic` built on it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np
from scipy import stats

from mirgmdp.errors import AssumptionViolation
from mirgmdp.gmdp import DEFAULT, Portfolio
from mirgmdp.policies import OgpIndex
from mirgmdp.priors import Instance, dominates
from mirgmdp.simulator import (
    GeneratorSource,
    InformationSet,
    SimTrace,
    Tape,
    bernoulli_trial_weights,
    replication_rng,
    run_iregb,
)

GAMMA_FLOOR = 1e-9
XI_GRID_SIZE = 512
# The returned gamma sits this far (relatively) below the attained minimum,
# so the defining product is strictly larger than gamma.
GAMMA_MARGIN = 1e-6
SPARSE_CELL = 30


@dataclass(frozen=True)
class BicConfig:
    """Hidden-exploration parameters.

    Attributes:
        xi: Margin by which an arm must beat every other arm.
        gamma: Lower bound on the probability of beating all others by ``xi``.
        phase_length: Rounds per phase, ``ceil(H / (xi * gamma)) + 1``.
        H: Support bound of all rewards, default arm included.
    """

    xi: float
    gamma: float
    phase_length: int
    H: float


def _arm_name(a: int) -> str:
    return "default" if a == DEFAULT else f"arm {a}"


def _all_priors(instance: Instance):
    """Priors and means with the default arm first (position 0 is ``DEFAULT``)."""
    priors = (instance.default, *instance.arms)
    means = np.array([p.mean for p in priors])
    return priors, means


def check_lower_tail_overlap(instance: Instance) -> None:
    """Every arm, default included, falls below every other arm's mean with positive probability.

    Raises:
        AssumptionViolation: Naming the first offending pair.
    """
    priors, means = _all_priors(instance)
    for a, prior in enumerate(priors):
        for b in range(len(priors)):
            if a != b and prior.cdf_left(means[b]) <= 0.0:
                raise AssumptionViolation(
                    "lower-tail-overlap",
                    f"Pr({_arm_name(a - 1)} < mean of {_arm_name(b - 1)}) = 0")


def gamma_of(instance: Instance, xi) -> np.ndarray:
    """Minimum over arms of the probability that all other arms fall ``xi`` below its mean."""
    priors, means = _all_priors(instance)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    n = len(priors)
    # tail[a, b, g] = Pr(X_a < mean_b - xi_g)
    tail = np.stack([
        np.stack([np.atleast_1d(priors[a].cdf_left(means[b] - xi)) for b in range(n)])
        for a in range(n)
    ])
    prods = []
    for b in range(n):
        others = [a for a in range(n) if a != b]
        prods.append(np.prod(tail[others, b, :], axis=0))
    return np.min(np.stack(prods), axis=0)


def compute_xi_gamma(instance: Instance, grid_size: int = XI_GRID_SIZE) -> BicConfig:
    """Grid search for the margin maximizing ``xi * gamma(xi)``.

    ``xi`` ranges over ``grid_size`` log-spaced values in ``[H * 1e-6, H]``;
    candidates with ``gamma(xi) <= 1e-9`` are rejected.

    Raises:
        AssumptionViolation: If rewards are unbounded, the lower-tail overlap
            condition fails, or no candidate is acceptable.
    """
    H = instance.support_bound
    if H is None:
        raise AssumptionViolation("bounded-support", "some prior has unbounded support")
    check_lower_tail_overlap(instance)
    xis = np.geomspace(H * 1e-6, H, grid_size)
    gam = gamma_of(instance, xis)
    ok = gam > GAMMA_FLOOR
    if not ok.any():
        raise AssumptionViolation("lower-tail-overlap", "no margin with positive probability")
    score = np.where(ok, xis * gam, -np.inf)
    g = int(np.argmax(score))
    xi = float(xis[g])
    gamma = float(gam[g]) * (1.0 - GAMMA_MARGIN)
    return BicConfig(xi, gamma, int(math.ceil(H / (xi * gamma))) + 1, float(H))


def validate_bic_instance(instance: Instance) -> BicConfig:
    """Check every modelling condition of the incentive-compatible mechanism.

    Conditions: bounded finite support; the default arm has the strictly
    largest prior mean and arms are indexed in non-increasing mean order; the
    arms are totally ordered by stochastic dominance in that order; lower-tail
    overlap.

    Returns:
        The hidden-exploration configuration.

    Raises:
        AssumptionViolation: Naming the first failed condition.
    """
    cached = instance.__dict__.get("_bic_config")
    if cached is not None:
        return cached
    if not instance.is_discrete:
        raise AssumptionViolation("bounded-support", "all priors must have finite support")
    means = instance.means
    if not np.all(instance.threshold > means):
        raise AssumptionViolation(
            "default-dominant-mean", "the default arm must have the largest prior mean")
    if np.any(np.diff(means) > 0):
        raise AssumptionViolation(
            "default-dominant-mean", "arms must be indexed in non-increasing mean order")
    for a in range(instance.K - 1):
        if not dominates(instance.arms[a], instance.arms[a + 1]):
            raise AssumptionViolation(
                "stochastic-order", f"arm {a} does not dominate arm {a + 1}")
    config = compute_xi_gamma(instance)
    object.__setattr__(instance, "_bic_config", config)
    return config


def greedy_arm(means: np.ndarray, info: InformationSet, default_mean: float) -> int:
    """Arm with the largest conditional mean; the default wins exact ties."""
    cond = np.where(np.isnan(info.values), means, info.values)
    default_value = default_mean if info.default_value is None else info.default_value
    arm = int(np.argmax(cond))
    return DEFAULT if default_value >= cond[arm] else arm


def greedy_recommendation(instance: Instance, info: InformationSet) -> int:
    """Greedy choice over the default and all arms given ``info``."""
    return greedy_arm(instance.means, info, instance.threshold)


class BicRound(NamedTuple):
    t: int
    recommendation: int
    action: int
    reward: float
    phase: str
    phase_index: int
    explorer: bool
    certificate: float


class BicTrace(SimTrace):
    """Trace of the incentive-compatible mechanism under obedient agents."""

    def __init__(self, horizon: int, realized: np.ndarray, default_value: float,
                 config: BicConfig, k: int):
        super().__init__(horizon, realized, default_value)
        self.config = config
        self.k = k

    def phase_of(self, t: int) -> int:
        """Phase index of round ``t``; 0 for the first ``K + 1`` rounds."""
        if t <= self.k + 1:
            return 0
        return (t - self.k - 2) // self.config.phase_length + 1

    def bic_rounds(self) -> Iterator[BicRound]:
        for r in self.rounds():
            yield BicRound(r.t, r.arm, r.arm, r.reward, r.phase, self.phase_of(r.t),
                           r.explorer, r.certificate)

    def explorer_rounds(self) -> list[int]:
        return [s.start for s in self.segments if s.explorer]


class _EmbeddedIndexMechanism:
    """Index-policy exploration with threshold equal to the realized default value."""

    def __init__(self, means: np.ndarray, threshold: float, revealed: np.ndarray):
        self.means = means
        self.threshold = threshold
        self.cursor = OgpIndex(means, threshold).cursor(removed=revealed)
        self.k_star: int | None = None

    def observe(self, arm: int) -> None:
        if arm != DEFAULT:
            self.cursor.remove(arm)

    def exploiting(self, info: InformationSet) -> bool:
        if self.cursor.action() is not None:
            return False
        best = info.best_revealed()
        return best is None or best[1] <= self.threshold or self.cursor.next_unexplored_neg() is None

    def exploit_arm(self, info: InformationSet) -> int:
        best = info.best_revealed()
        return DEFAULT if best is None or best[1] <= self.threshold else best[0]

    def recommend(self, info: InformationSet) -> tuple[Portfolio, str]:
        action = self.cursor.action()
        if action is not None:
            i, j = action
            if i == j:
                return Portfolio.single(i), "ogp-exploration"
            wi, wj = self.cursor.weights(action)
            return Portfolio(((i, wi), (j, wj))), "ogp-exploration"
        j = self.cursor.next_unexplored_neg()
        best = info.best_revealed()
        if j is None or best is None or best[1] <= self.threshold:
            # Greedy rounds earlier in the phase may have finished the exploration.
            arm = self.exploit_arm(info)
            return Portfolio.single(arm), "exploit-default" if arm == DEFAULT else "exploit-best"
        if self.k_star is None:
            self.k_star = best[0]
        x_best = float(info.values[self.k_star])
        wb, wj = bernoulli_trial_weights(x_best, self.means[j], self.threshold)
        return Portfolio(((self.k_star, wb), (j, wj))), "bernoulli-trial"


def _run_bic(instance: Instance, T: int, source, config: BicConfig) -> BicTrace:
    if T < 1:
        raise ValueError(f"horizon must be at least 1, got {T}")
    k = instance.K
    means = instance.means
    x, x0 = source.rewards()
    trace = BicTrace(T, x, x0, config, k)
    info = InformationSet(k)

    def certificate(p: Portfolio) -> float:
        return p.expectation(info.conditional_means(instance), x0) - x0

    def play(length: int, arm: int, phase: str, p: Portfolio | None = None,
             explorer: bool = False) -> None:
        p = p or Portfolio.single(arm)
        cert = certificate(p)
        reward = x0 if arm == DEFAULT else float(x[arm])
        trace.add(length, p, arm, reward, phase, cert, explorer)
        info.reveal(arm, reward)

    trace.add(1, Portfolio.single(DEFAULT), DEFAULT, x0, "initial-default", 0.0)
    info.reveal(DEFAULT, x0)
    greedy_start = x0 < means.min()
    for _ in range(2, min(k + 1, T) + 1):
        if greedy_start:
            play(1, greedy_arm(means, info, x0), "greedy")
        else:
            play(1, DEFAULT, "default")

    mech = _EmbeddedIndexMechanism(means, x0, ~np.isnan(info.values))

    def fill(end: int) -> None:
        """Non-explorer rounds up to round ``end`` inclusive."""
        while trace.rounds_played < end:
            best = info.best_revealed()
            if best is not None and best[1] > x0:
                arm, phase = greedy_arm(means, info, x0), "greedy"
            else:
                arm, phase = DEFAULT, "default"
            if arm == DEFAULT or info.known(arm):
                play(end - trace.rounds_played, arm, phase)
            else:
                play(1, arm, phase)
                mech.observe(arm)

    phase = 0
    while trace.rounds_played < T:
        phase += 1
        start = trace.rounds_played + 1
        end = min(start + config.phase_length - 1, T)
        if mech.exploiting(info):
            arm = mech.exploit_arm(info)
            play(T - trace.rounds_played, arm,
                 "exploit-default" if arm == DEFAULT else "exploit-best")
            break
        explorer_t = start + source.slot(phase, config.phase_length)
        if explorer_t > end:
            fill(end)
            continue
        fill(explorer_t - 1)
        p, label = mech.recommend(info)
        (a, wa), *rest = p.entries
        arm = a if not rest or source.round_uniform(explorer_t) < wa else rest[0][0]
        play(1, arm, label, p, explorer=True)
        mech.observe(arm)
        fill(end)
    return trace


def run_bic_iregb(instance: Instance, T: int, rng, source=None,
                  config: BicConfig | None = None) -> BicTrace:
    """Run the incentive-compatible mechanism under obedient agents.

    Raises:
        AssumptionViolation: If the instance fails a required condition.
    """
    config = config or validate_bic_instance(instance)
    if source is None:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        source = GeneratorSource(instance, gen)
    return _run_bic(instance, T, source, config)


def draw_bic_tape(instance: Instance, config: BicConfig, n: int, T: int,
                  rng: np.random.Generator) -> Tape:
    return Tape.draw(instance, n, rng, horizon=T, phase_length=config.phase_length)


def batch_bic_recommendations(instance: Instance, config: BicConfig, T: int,
                              tape: Tape) -> np.ndarray:
    """Recommendation of every round for every tape row, shape ``(n, T)``.

    Vectorized over rows, one round at a time; ``-1`` is the default arm.
    """
    x = tape.rewards
    x0 = tape.default
    n, k = x.shape
    means = instance.means
    rows = np.arange(n)
    B = config.phase_length
    neg_rank = np.lexsort((np.arange(k), -means))
    above = means[None, :] >= x0[:, None]
    revealed = np.zeros((n, k), dtype=bool)
    k_star = np.full(n, -1)
    exploiting = np.zeros(n, dtype=bool)
    slot = np.zeros(n, dtype=np.int64)
    greedy_start = x0 < means.min()
    out = np.empty((n, T), dtype=np.int8)
    # Per-row summaries of the revealed information, refreshed after each reveal.
    pos = np.zeros(n, dtype=bool)
    best = np.zeros(n, dtype=np.int64)
    grd = np.full(n, DEFAULT, dtype=np.int64)

    def refresh(idx: np.ndarray) -> None:
        rv, xv, x0v = revealed[idx], x[idx], x0[idx]
        local = np.arange(idx.size)
        pos[idx] = np.any(rv & (xv > x0v[:, None]), axis=1)
        best[idx] = np.argmax(np.where(rv, xv, -np.inf), axis=1)
        cond = np.where(rv, xv, means[None, :])
        arm = np.argmax(cond, axis=1)
        grd[idx] = np.where(x0v >= cond[local, arm], DEFAULT, arm)

    def first(cand: np.ndarray, order=None) -> tuple[np.ndarray, np.ndarray]:
        c = cand if order is None else cand[:, order]
        at = np.argmax(c, axis=1)
        arm = at if order is None else order[at]
        return c[np.arange(c.shape[0]), at], arm

    def explorer_pick(idx: np.ndarray, u: np.ndarray) -> np.ndarray:
        rv, ab, x0v = revealed[idx], above[idx], x0[idx]
        has_i, i = first(ab & ~rv)
        has_j, j = first(~ab & ~rv, neg_rank)
        mix = has_i & has_j
        gap = np.where(mix, means[i] - means[j], 1.0)
        wi = np.where(mix, (x0v - means[j]) / gap, 1.0)
        ogp_arm = np.where(u < wi, i, j)
        # Bernoulli trial stage: index policy terminal, positive found, neg arms left.
        trial = ~has_i & has_j & pos[idx]
        fresh = trial & (k_star[idx] < 0)
        k_star[idx[fresh]] = best[idx[fresh]]
        ks = np.maximum(k_star[idx], 0)
        x_best = x[idx, ks]
        tgap = np.where(trial, x_best - means[j], 1.0)
        wb = np.where(trial, (x0v - means[j]) / tgap, 1.0)
        trial_arm = np.where(u < wb, ks, j)
        # Greedy rounds earlier in the phase may have finished the exploration.
        exploit_arm = np.where(pos[idx], best[idx], DEFAULT)
        return np.where(has_i, ogp_arm, np.where(trial, trial_arm, exploit_arm))

    refresh(rows)
    for t in range(1, T + 1):
        if t == 1:
            rec = np.full(n, DEFAULT, dtype=np.int64)
        elif t <= k + 1:
            rec = np.where(greedy_start, grd, DEFAULT)
        else:
            offset = (t - k - 2) % B
            if offset == 0:
                phase = (t - k - 2) // B + 1
                has_i = np.any(above & ~revealed, axis=1)
                any_left = np.any(~revealed, axis=1)
                exploiting = ~has_i & (~pos | ~any_left)
                slot = tape.slots[:, phase - 1]
            rec = np.where(pos, grd, DEFAULT)
            rec = np.where(exploiting, np.where(pos, best, DEFAULT), rec)
            idx = np.flatnonzero(~exploiting & (slot == offset))
            if idx.size:
                rec[idx] = explorer_pick(idx, tape.rounds[idx, t - 1])
        out[:, t - 1] = rec
        new = np.flatnonzero((rec >= 0) & ~revealed[rows, np.maximum(rec, 0)])
        if new.size:
            revealed[new, rec[new]] = True
            refresh(new)
    return out


# Auditing -------------------------------------------------------------------


class AuditCell(NamedTuple):
    t: int
    recommended: int
    alternative: int
    estimate: float
    ci_low: float
    ci_high: float
    n: int
    flag: str


@dataclass
class AuditReport:
    """Conditional reward gaps of following a recommendation over each alternative.

    ``t`` is 0 for cells pooled over rounds under the uniform-belief mode.
    """

    cells: list
    replications: int
    belief: str

    @property
    def violations(self) -> list:
        return [c for c in self.cells if c.flag == "violation"]

    @property
    def sparse(self) -> list:
        return [c for c in self.cells if c.flag == "sparse"]

    def write_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AuditCell._fields)
        for c in self.cells:
            name = lambda a: "default" if a == DEFAULT else a  # noqa: E731
            writer.writerow([c.t, name(c.recommended), name(c.alternative), repr(c.estimate),
                             repr(c.ci_low), repr(c.ci_high), c.n, c.flag])


class _Accumulator:
    """Associative per-cell sums; arm ``a`` is stored at column ``a + 1``."""

    def __init__(self, T: int, k: int, belief: str):
        self.belief = belief
        self.k1 = k + 1
        shape = (T, self.k1, self.k1) if belief == "informative" else (self.k1, self.k1)
        self.count = np.zeros(shape[:-1] if belief == "informative" else shape[:1])
        self.s1 = np.zeros(shape)
        self.s2 = np.zeros(shape)
        if belief == "uniform":
            self.cc = np.zeros(self.k1)
            self.sc = np.zeros(shape)
            self.reps = 0

    def add(self, recs: np.ndarray, full: np.ndarray) -> None:
        """Fold in recommendations ``(n, T)`` and rewards ``(n, K+1)``, default first."""
        n, T = recs.shape
        rows = np.arange(n)
        k1 = self.k1
        if self.belief == "informative":
            for t in range(T):
                m = recs[:, t].astype(np.int64) + 1
                y = full[rows, m]
                self.count[t] += np.bincount(m, minlength=k1)
                for i in range(k1):
                    d = y - full[:, i]
                    self.s1[t, :, i] += np.bincount(m, weights=d, minlength=k1)
                    self.s2[t, :, i] += np.bincount(m, weights=d * d, minlength=k1)
            return
        # Per-replication totals over rounds, then sums across replications.
        cnt = np.zeros((n, k1))
        tot = np.zeros((n, k1, k1))
        for t in range(T):
            m = recs[:, t].astype(np.int64) + 1
            cnt[rows, m] += 1
            tot[rows, m, :] += full[rows, m][:, None] - full
        self.count += cnt.sum(axis=0)
        self.cc += (cnt * cnt).sum(axis=0)
        self.s1 += tot.sum(axis=0)
        self.s2 += (tot * tot).sum(axis=0)
        self.sc += (tot * cnt[:, :, None]).sum(axis=0)
        self.reps += n

    def report(self, replications: int, level: float) -> AuditReport:
        z = float(stats.norm.ppf(0.5 + level / 2))
        cells = []
        if self.belief == "informative":
            for t, l, i in zip(*np.nonzero(self.count[:, :, None] * np.ones(self.k1))):
                if l == i:
                    continue
                n = int(self.count[t, l])
                mean = self.s1[t, l, i] / n
                if n > 1:
                    var = max(self.s2[t, l, i] - n * mean * mean, 0.0) / (n - 1)
                    se = math.sqrt(var / n)
                else:
                    se = math.inf
                cells.append(_cell(int(t) + 1, int(l) - 1, int(i) - 1, mean, se, n, z))
            return AuditReport(cells, replications, self.belief)
        r = self.reps
        for l in range(self.k1):
            n = int(self.count[l])
            if n == 0:
                continue
            cbar = self.count[l] / r
            for i in range(self.k1):
                if l == i:
                    continue
                ratio = self.s1[l, i] / self.count[l]
                resid = self.s2[l, i] - 2 * ratio * self.sc[l, i] + ratio * ratio * self.cc[l]
                se = math.sqrt(max(resid, 0.0) / (r - 1) / r) / cbar if r > 1 else math.inf
                cells.append(_cell(0, l - 1, i - 1, ratio, se, n, z))
        return AuditReport(cells, replications, self.belief)


def _cell(t, l, i, mean, se, n, z) -> AuditCell:
    lo, hi = mean - z * se, mean + z * se
    if n < SPARSE_CELL:
        flag = "sparse"
    elif hi < 0:
        flag = "violation"
    else:
        flag = "ok"
    return AuditCell(t, l, i, float(mean), float(lo), float(hi), n, flag)


def audit_bic(instance: Instance, T: int, replications: int, seed: int,
              mechanism: str = "bic_iregb", belief: str = "informative",
              level: float = 0.99, chunk: int = 100_000) -> AuditReport:
    """Estimate the gain from obeying each recommendation over each alternative.

    For every round ``t`` (``informative``) or pooled over a uniformly random
    round (``uniform``), and every recommended arm ``l`` and alternative ``i``
    (default included), estimate the expected reward of ``l`` minus that of
    ``i`` given that ``l`` is recommended. A cell is a violation when the
    upper end of its two-sided ``level`` normal confidence interval is below 0
    and sparse when it has fewer than 30 samples.

    Args:
        mechanism: ``"bic_iregb"`` (batch engine) or ``"iregb"`` (scalar runs).
    """
    if belief not in ("informative", "uniform"):
        raise ValueError(f"unknown belief mode {belief!r}")
    acc = _Accumulator(T, instance.K, belief)
    if mechanism == "bic_iregb":
        config = validate_bic_instance(instance)
        for c, lo in enumerate(range(0, replications, chunk)):
            n = min(chunk, replications - lo)
            tape = draw_bic_tape(instance, config, n, T, replication_rng(seed, c))
            recs = batch_bic_recommendations(instance, config, T, tape)
            acc.add(recs, np.column_stack([tape.default, tape.rewards]))
    elif mechanism == "iregb":
        for lo in range(0, replications, chunk):
            n = min(chunk, replications - lo)
            recs = np.empty((n, T), dtype=np.int8)
            full = np.empty((n, instance.K + 1))
            for r in range(n):
                trace = run_iregb(instance, T, replication_rng(seed, lo + r))
                recs[r] = trace.arms()
                full[r, 0] = trace.default_value
                full[r, 1:] = trace.realized
            acc.add(recs, full)
    else:
        raise ValueError(f"unknown mechanism {mechanism!r}")
    return acc.report(replications, level)


def audit_harmless(trace: SimTrace, instance: Instance) -> bool:
    """False iff some round recommends an arm that cannot yield a positive reward.

    An arm cannot when its value is known and non-positive, or when it is
    unexplored and its prior puts no mass above zero. The default arm is the
    agents' outside option and is not audited.
    """
    known: dict[int, float] = {}
    for seg in trace.segments:
        arm = seg.arm
        if arm == DEFAULT:
            continue
        if arm in known:
            if known[arm] <= 0:
                return False
        else:
            if instance.arms[arm].prob_positive(0.0) == 0.0:
                return False
            known[arm] = seg.reward
            if seg.length > 1 and seg.reward <= 0:
                return False
    return True

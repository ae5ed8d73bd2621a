"""Finite-horizon simulation of the exploration mechanisms.

Traces are stored as run-length segments: a block of identical rounds (same
portfolio, arm, reward and phase) is one :class:`Segment`, so a run of length
``T`` costs time proportional to the number of distinct decisions rather than
to ``T``. Repeated failures of a Bernoulli trial are drawn in one step by
inverting the geometric law.

All randomness of a run is read from a *source*. :class:`GeneratorSource`
draws lazily from a numpy generator, while :class:`TapeSource` replays one row
of a pre-drawn :class:`Tape`. Replaying a tape through the scalar engine and
through the vectorized batch engine must give identical runs, which is how the
two implementations are cross-checked.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from mirgmdp.errors import InvalidPriorError, UnsupportedExactError
from mirgmdp.dp import w_star
from mirgmdp.gmdp import DEFAULT, Portfolio, mix_weights
from mirgmdp.policies import OgpIndex
from mirgmdp.priors import Instance, TwoPoint

PHASES = ("ogp-exploration", "bernoulli-trial", "exploit-best", "exploit-default")
MECHANISMS = ("iregb", "iregb_prime", "bic_iregb")


class InformationSet:
    """Realized values known to the mechanism.

    Values are static: revealing an arm twice with different values raises.
    """

    def __init__(self, k: int):
        self.values = np.full(k, np.nan)
        self.default_value: float | None = None
        self.t = 0

    def reveal(self, arm: int, value: float) -> None:
        if arm == DEFAULT:
            if self.default_value is not None and self.default_value != value:
                raise ValueError("default value changed after being revealed")
            self.default_value = value
            return
        old = self.values[arm]
        if not np.isnan(old) and old != value:
            raise ValueError(f"arm {arm} value changed after being revealed")
        self.values[arm] = value

    def known(self, arm: int) -> bool:
        if arm == DEFAULT:
            return self.default_value is not None
        return not np.isnan(self.values[arm])

    def conditional_means(self, instance: Instance) -> np.ndarray:
        return np.where(np.isnan(self.values), instance.means, self.values)

    def conditional_default(self, instance: Instance) -> float:
        return instance.threshold if self.default_value is None else self.default_value

    def best_revealed(self) -> tuple[int, float] | None:
        """Lowest-index arm among the largest revealed values."""
        if np.all(np.isnan(self.values)):
            return None
        arm = int(np.nanargmax(self.values))
        return arm, float(self.values[arm])


def geometric_failures(u: float, p: float) -> float:
    """Failures before the first success, by inversion of ``u`` in ``(0, 1]``."""
    if p >= 1.0:
        return 0.0
    if p <= 0.0:
        return math.inf
    return float(np.floor(np.log(u) / np.log1p(-p)))


def bernoulli_trial_weights(x_best: float, mean_j: float, threshold: float) -> tuple[float, float]:
    """Weights ``(w_best, w_j)`` putting the conditional mean exactly on the threshold."""
    gap = x_best - mean_j
    return (threshold - mean_j) / gap, (x_best - threshold) / gap


def bernoulli_trial_portfolio(x_best: float, instance: Instance, j: int,
                              best_arm: int) -> Portfolio:
    """Mix of explored arm ``best_arm`` (value ``x_best``) with unexplored neg arm ``j``.

    Raises:
        ValueError: If ``x_best`` does not beat the threshold.
    """
    if x_best <= instance.threshold:
        raise ValueError(f"x_best={x_best} must exceed the threshold {instance.threshold}")
    wb, wj = bernoulli_trial_weights(x_best, instance.means[j], instance.threshold)
    return Portfolio(((best_arm, wb), (j, wj)))


@dataclass(frozen=True)
class Segment:
    """A block of ``length`` identical rounds starting at round ``start``."""

    start: int
    length: int
    portfolio: Portfolio
    arm: int
    reward: float
    phase: str
    certificate: float
    explorer: bool = False


class Round(NamedTuple):
    t: int
    portfolio: Portfolio
    arm: int
    reward: float
    phase: str
    certificate: float
    explorer: bool


class SimTrace:
    """Record of one mechanism run.

    Attributes:
        horizon: Number of rounds ``T``.
        segments: Run-length encoded rounds, in order.
        realized: Realized rewards of every arm (including never-pulled ones).
        default_value: Realized reward of the default arm.
    """

    def __init__(self, horizon: int, realized: np.ndarray, default_value: float):
        self.horizon = horizon
        self.segments: list[Segment] = []
        self.realized = realized
        self.default_value = default_value
        self._next = 1

    def add(self, length: int, portfolio: Portfolio, arm: int, reward: float, phase: str,
            certificate: float, explorer: bool = False) -> None:
        length = int(length)
        if length <= 0:
            return
        self.segments.append(
            Segment(self._next, length, portfolio, arm, reward, phase, certificate, explorer))
        self._next += length

    @property
    def rounds_played(self) -> int:
        return self._next - 1

    def rounds(self) -> Iterator[Round]:
        for seg in self.segments:
            for t in range(seg.start, seg.start + seg.length):
                yield Round(t, seg.portfolio, seg.arm, seg.reward, seg.phase,
                            seg.certificate, seg.explorer)

    def arms(self) -> np.ndarray:
        """Realized arm of every round (``-1`` for the default arm)."""
        return np.repeat([s.arm for s in self.segments], [s.length for s in self.segments])

    def total_reward(self) -> float:
        return math.fsum(s.length * s.reward for s in self.segments)

    def average_reward(self) -> float:
        return self.total_reward() / self.horizon

    def min_certificate(self) -> float:
        return min((s.certificate for s in self.segments), default=0.0)

    def phase_sequence(self) -> list[str]:
        return [s.phase for s in self.segments]

    def write_jsonl(self, fh, expand: bool = True) -> None:
        """One JSON record per round (or per segment when ``expand`` is false)."""
        items = self.rounds() if expand else self.segments
        for r in items:
            rec = {
                "t": r.t if expand else r.start,
                "portfolio": r.portfolio.to_json(),
                "arm": "default" if r.arm == DEFAULT else r.arm,
                "reward": r.reward,
                "phase": r.phase,
                "certificate": r.certificate,
            }
            if not expand:
                rec["length"] = r.length
            fh.write(json.dumps(rec) + "\n")


# Randomness sources ---------------------------------------------------------


class GeneratorSource:
    """Draws every random quantity lazily from one numpy generator."""

    def __init__(self, instance: Instance, rng: np.random.Generator):
        self.instance = instance
        self.rng = rng

    def rewards(self) -> tuple[np.ndarray, float]:
        x = np.array([a.sample(self.rng) for a in self.instance.arms])
        return x, float(self.instance.default.sample(self.rng))

    def explore_uniform(self, step: int) -> float:
        return float(self.rng.random())

    def trial_uniform(self, position: int) -> float:
        return 1.0 - float(self.rng.random())

    def round_uniform(self, t: int) -> float:
        return float(self.rng.random())

    def slot(self, phase: int, length: int) -> int:
        return int(self.rng.integers(length))


@dataclass
class Tape:
    """Pre-drawn randomness for ``n`` runs.

    Attributes:
        rewards: Arm rewards, shape ``(n, K)``.
        default: Default-arm rewards, shape ``(n,)``.
        explore: Uniforms for index-policy steps, shape ``(n, K)``.
        trial: Uniforms in ``(0, 1]`` for Bernoulli trials by neg-order position.
        rounds: Per-round uniforms, shape ``(n, T)`` (may be empty).
        slots: Explorer slot per phase, shape ``(n, phases)`` (may be empty).
    """

    rewards: np.ndarray
    default: np.ndarray
    explore: np.ndarray
    trial: np.ndarray
    rounds: np.ndarray
    slots: np.ndarray

    @classmethod
    def draw(cls, instance: Instance, n: int, rng: np.random.Generator,
             horizon: int = 0, phase_length: int = 0) -> "Tape":
        k = instance.K
        rewards = np.column_stack([a.sample(rng, n) for a in instance.arms])
        default = np.asarray(instance.default.sample(rng, n), dtype=float)
        explore = rng.random((n, k))
        trial = 1.0 - rng.random((n, k))
        rounds = rng.random((n, horizon))
        phases = 0 if phase_length == 0 else max(0, -(-(horizon - k - 1) // phase_length))
        slots = rng.integers(max(phase_length, 1), size=(n, phases))
        return cls(rewards, default, explore, trial, rounds, slots)

    def source(self, row: int) -> "TapeSource":
        return TapeSource(self, row)


class TapeSource:
    """Replays row ``row`` of a :class:`Tape`."""

    def __init__(self, tape: Tape, row: int):
        self.tape = tape
        self.row = row

    def rewards(self) -> tuple[np.ndarray, float]:
        return self.tape.rewards[self.row].copy(), float(self.tape.default[self.row])

    def explore_uniform(self, step: int) -> float:
        return float(self.tape.explore[self.row, step])

    def trial_uniform(self, position: int) -> float:
        return float(self.tape.trial[self.row, position])

    def round_uniform(self, t: int) -> float:
        return float(self.tape.rounds[self.row, t - 1])

    def slot(self, phase: int, length: int) -> int:
        return int(self.tape.slots[self.row, phase - 1])


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    """Independent generator for one replication, derived by spawn key."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication,)))


# Scalar engines -------------------------------------------------------------


def _check_horizon(T: int) -> None:
    if T < 1:
        raise ValueError(f"horizon must be at least 1, got {T}")


def _run(instance: Instance, T: int, source, prime: bool) -> SimTrace:
    _check_horizon(T)
    x, x0 = source.rewards()
    thr = instance.threshold
    trace = SimTrace(T, x, x0)
    info = InformationSet(instance.K)
    cursor = OgpIndex(instance.means, thr, above_by_mean=prime).cursor()
    step = 0
    while trace.rounds_played < T:
        action = cursor.action()
        if action is None:
            break
        i, j = action
        wi, wj = cursor.weights(action)
        p = Portfolio.single(i) if i == j else Portfolio(((i, wi), (j, wj)))
        cert = p.expectation(instance.means, thr) - thr
        arm = i if cursor_choice(source.explore_uniform(step), wi) else j
        step += 1
        info.reveal(arm, x[arm])
        cursor.remove(arm)
        trace.add(1, p, arm, x[arm], "ogp-exploration", cert)
        if prime and x[arm] > thr:
            break

    if trace.rounds_played >= T:
        return trace
    best = info.best_revealed()
    if best is None or best[1] <= thr:
        trace.add(T - trace.rounds_played, Portfolio.single(DEFAULT), DEFAULT, x0,
                  "exploit-default", 0.0)
        return trace

    if not prime:
        k_star, x_best = best
        while True:
            j = cursor.next_unexplored_neg()
            if j is None:
                break
            wb, wj = bernoulli_trial_weights(x_best, instance.means[j], thr)
            p = Portfolio(((k_star, wb), (j, wj)))
            cert = p.expectation(info.conditional_means(instance), thr) - thr
            fails = geometric_failures(source.trial_uniform(cursor.neg_position), wj)
            left = T - trace.rounds_played
            trace.add(min(fails, left), p, k_star, x_best, "bernoulli-trial", cert)
            if trace.rounds_played >= T:
                return trace
            info.reveal(j, x[j])
            cursor.remove(j)
            trace.add(1, p, j, x[j], "bernoulli-trial", cert)
            if trace.rounds_played >= T:
                return trace
        best = info.best_revealed()

    arm, value = best
    trace.add(T - trace.rounds_played, Portfolio.single(arm), arm, value, "exploit-best",
              value - thr)
    return trace


def cursor_choice(u: float, w_first: float) -> bool:
    """Whether uniform ``u`` selects the first arm of a two-arm mix."""
    return u < w_first


def run_iregb(instance: Instance, T: int, rng, source=None) -> SimTrace:
    """Index-policy exploration, then Bernoulli trials, then exploitation.

    Args:
        instance: Problem instance.
        T: Horizon.
        rng: Seed or generator (ignored when ``source`` is given).
        source: Optional randomness source such as a :class:`TapeSource`.
    """
    if source is None:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        source = GeneratorSource(instance, gen)
    return _run(instance, T, source, prime=False)


def check_two_point(instance: Instance) -> tuple[float, float]:
    """Common ``(x_minus, x_plus)`` of an all-two-point instance.

    Raises:
        InvalidPriorError: If some arm is not two-point or supports differ.
    """
    supports = set()
    for a in instance.arms:
        if not isinstance(a, TwoPoint):
            raise InvalidPriorError(f"two-point variant needs two-point arms, got {a.family}")
        supports.add((a.x_minus, a.x_plus))
    if len(supports) != 1:
        raise InvalidPriorError(f"arms must share one support pair, got {sorted(supports)}")
    return supports.pop()


def run_iregb_prime(instance: Instance, T: int, rng, source=None) -> SimTrace:
    """Two-point variant: exploit the first arm that reveals the upper atom.

    When no neg arm is left, above arms are explored by decreasing mean.
    """
    check_two_point(instance)
    if source is None:
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        source = GeneratorSource(instance, gen)
    return _run(instance, T, source, prime=True)


# Batch engine ---------------------------------------------------------------


def batch_iregb_totals(instance: Instance, horizons, tape: Tape) -> np.ndarray:
    """Total rewards of all tape rows at every horizon, vectorized over rows.

    Every row is run once as an infinite-horizon segment list; each horizon
    then truncates the same list, so horizons share common random numbers.

    Returns:
        Array of shape ``(n, len(horizons))``.
    """
    thr = instance.threshold
    means = instance.means
    index = OgpIndex(means, thr)
    above, neg = index.above_order, index.neg_order
    n_a, n_n = above.size, neg.size
    x = tape.rewards
    n, k = x.shape
    rows = np.arange(n)
    ptr_a = np.zeros(n, dtype=np.int64)
    ptr_n = np.zeros(n, dtype=np.int64)
    revealed = np.zeros((n, k), dtype=bool)
    lengths, rewards = [], []
    for step in range(k):
        active = ptr_a < n_a
        if not active.any():
            break
        i = above[np.minimum(ptr_a, n_a - 1)]
        has_neg = ptr_n < n_n
        if n_n:
            j = neg[np.minimum(ptr_n, n_n - 1)]
            gap = means[i] - means[j]
            wi = np.where(has_neg, (thr - means[j]) / gap, 1.0)
        else:
            j = i
            wi = np.ones(n)
        pick_i = tape.explore[:, step] < wi
        arm = np.where(pick_i, i, j)
        lengths.append(active.astype(float))
        rewards.append(np.where(active, x[rows, arm], 0.0))
        revealed[rows[active], arm[active]] = True
        ptr_a += active & pick_i
        ptr_n += active & ~pick_i
    known = np.where(revealed, x, -np.inf)
    x_best = known.max(axis=1)
    positive = x_best > thr
    for pos in range(n_n):
        j = neg[pos]
        todo = positive & (ptr_n <= pos)
        gap = np.where(todo, x_best - means[j], 1.0)
        wj = np.where(todo, (x_best - thr) / gap, 1.0)
        fails = np.zeros(n)
        slow = todo & (wj < 1.0)
        fails[slow] = np.floor(np.log(tape.trial[slow, pos]) / np.log1p(-wj[slow]))
        lengths.append(np.where(todo, fails, 0.0))
        rewards.append(np.where(todo, x_best, 0.0))
        lengths.append(todo.astype(float))
        rewards.append(np.where(todo, x[:, j], 0.0))
    lengths.append(np.full(n, np.inf))
    rewards.append(np.where(positive, x.max(axis=1), tape.default))
    L = np.column_stack(lengths)
    R = np.column_stack(rewards)
    starts = np.zeros_like(L)
    np.cumsum(L[:, :-1], axis=1, out=starts[:, 1:])
    out = np.empty((n, len(horizons)))
    for h, T in enumerate(horizons):
        played = np.clip(T - starts, 0.0, L)
        out[:, h] = np.sum(np.where(played > 0, played * R, 0.0), axis=1)
    return out


# Welfare estimation ---------------------------------------------------------


class WelfareEstimate(NamedTuple):
    mean: float
    stderr: float


def _summarize(values: np.ndarray) -> WelfareEstimate:
    centred = values - values[0]
    if not np.any(centred):
        return WelfareEstimate(float(values[0]), 0.0)
    return WelfareEstimate(float(values.mean()),
                           float(values.std(ddof=1) / math.sqrt(values.size)))


def welfare_samples(instance: Instance, mechanism: str, horizons, replications: int, seed: int,
                    engine: str = "auto", chunk: int = 50_000) -> np.ndarray:
    """Per-run average rewards, shape ``(replications, len(horizons))``.

    The batch engine (default for ``iregb``) processes chunks of rows drawn
    from generators derived from ``seed`` and the chunk number. The scalar
    engine runs each replication on its own derived generator and shares it
    across horizons by truncating one long run.
    """
    horizons = [int(T) for T in horizons]
    if mechanism not in MECHANISMS:
        raise ValueError(f"unknown mechanism {mechanism!r}; choose from {MECHANISMS}")
    if engine == "auto":
        engine = "batch" if mechanism == "iregb" else "scalar"
    out = np.empty((replications, len(horizons)))
    if engine == "batch":
        if mechanism != "iregb":
            raise ValueError("the batch welfare engine covers iregb only")
        for c, lo in enumerate(range(0, replications, chunk)):
            hi = min(lo + chunk, replications)
            tape = Tape.draw(instance, hi - lo, replication_rng(seed, c))
            out[lo:hi] = batch_iregb_totals(instance, horizons, tape) / np.array(horizons)
        return out
    runner = mechanism_runner(mechanism)
    t_max = max(horizons)
    for r in range(replications):
        trace = runner(instance, t_max, replication_rng(seed, r))
        out[r] = _prefix_totals(trace, horizons) / np.array(horizons)
    return out


def mechanism_runner(mechanism: str):
    """Scalar run function ``(instance, T, rng) -> trace`` of a mechanism."""
    if mechanism == "iregb":
        return run_iregb
    if mechanism == "iregb_prime":
        return run_iregb_prime
    from mirgmdp.bic import run_bic_iregb
    return run_bic_iregb


def _prefix_totals(trace: SimTrace, horizons) -> np.ndarray:
    L = np.array([s.length for s in trace.segments], dtype=float)
    R = np.array([s.reward for s in trace.segments])
    starts = np.cumsum(L) - L
    return np.array([np.sum(np.clip(T - starts, 0.0, L) * R) for T in horizons])


def estimate_welfare(instance: Instance, mechanism: str, T: int, replications: int, seed: int,
                     engine: str = "auto") -> WelfareEstimate:
    """Mean and standard error of the per-run average reward over ``T`` rounds."""
    if replications < 2:
        raise ValueError("need at least two replications")
    values = welfare_samples(instance, mechanism, [T], replications, seed, engine)[:, 0]
    return _summarize(values)


# Convergence bound ----------------------------------------------------------


def inverse_gap_expectation(instance: Instance) -> float:
    """Expected inverse of the best above-arm excess over the threshold.

    The excess is the largest realized reward among above arms minus the
    threshold, and the expectation is conditioned on it being positive. Zero
    when no above arm can beat the threshold.
    """
    thr = instance.threshold
    if not instance.above:
        return 0.0
    grid = np.unique(np.concatenate([instance.arms[i].atoms()[0] for i in instance.above]))
    cdf = np.prod([instance.arms[i].cdf(grid) for i in instance.above], axis=0)
    mass = np.diff(cdf, prepend=0.0)
    hit = grid > thr
    total = mass[hit].sum()
    if total <= 0:
        return 0.0
    return math.fsum(mass[hit] / (grid[hit] - thr)) / total


def convergence_bound(instance: Instance, T: int, optimum: float | None = None) -> float:
    """Lower bound on the welfare of the index mechanism at horizon ``T``.

    The bound is ``(1 - K (1 + eta * E[1/delta]) / T) * optimum`` where
    ``eta`` is the largest distance of a neg mean below the threshold and
    ``E[1/delta]`` comes from :func:`inverse_gap_expectation`. ``optimum``
    defaults to the exact DP value.

    Raises:
        UnsupportedExactError: For instances without bounded finite support.
    """
    if not instance.is_discrete:
        raise UnsupportedExactError("the convergence bound needs bounded finite-support arms")
    if optimum is None:
        optimum = w_star(instance)
    thr = instance.threshold
    eta = max((thr - instance.means[j] for j in instance.neg), default=0.0)
    slowdown = instance.K * (1.0 + eta * inverse_gap_expectation(instance))
    return float((1.0 - slowdown / T) * optimum)


# Exports --------------------------------------------------------------------

WELFARE_COLUMNS = ("instance_id", "mechanism", "T", "replications", "mean", "stderr", "bound")


def write_welfare_csv(fh, rows, header_comment: str | None = None) -> None:
    """Write welfare rows (dicts keyed by :data:`WELFARE_COLUMNS`)."""
    if header_comment:
        fh.write(f"# {header_comment}\n")
    writer = csv.DictWriter(fh, fieldnames=WELFARE_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def discovery_frequency(instance: Instance, i: int, j: int, trials: int,
                        rng: np.random.Generator) -> float:
    """Fraction of independent single rounds of the ``(i, j)`` mix that beat the threshold.

    Each trial redraws both arms' rewards and the mix's realized arm.
    """
    wi, _ = mix_weights(instance.means, instance.threshold, i, j)
    pick_i = rng.random(trials) < wi
    xi = instance.arms[i].sample(rng, trials)
    xj = instance.arms[j].sample(rng, trials)
    realized = np.where(pick_i, xi, xj)
    return float(np.mean(realized > instance.threshold))

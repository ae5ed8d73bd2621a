"""Named instances used by the command line, the tests and the acceptance suite."""

from __future__ import annotations

from typing import Callable

from mirgmdp.errors import ConfigurationError
from mirgmdp.priors import FiniteDiscrete, Gaussian, Instance, TwoPoint, discretize


def four_gaussian() -> Instance:
    """Four unit-variance Gaussians with means 2, 1, -1 and -2."""
    return Instance(tuple(Gaussian(m, 1.0) for m in (2.0, 1.0, -1.0, -2.0)), name="four_gaussian")


def four_gaussian_discretized(points: int = 21) -> Instance:
    """:func:`four_gaussian` with every arm discretized on ``points`` atoms."""
    arms = tuple(discretize(a, points) for a in four_gaussian().arms)
    return Instance(arms, name="four_gaussian_discretized")


def two_arm() -> Instance:
    """One above and one neg two-point arm; the optimal value is 0.64."""
    return Instance((TwoPoint(-1.0, 1.0, 0.6), TwoPoint(-1.0, 1.0, 0.3)), name="two_arm")


def ordered_heavy_downside(eps: float = 0.01) -> Instance:
    """Three arms whose two neg arms are ordered by dominance.

    The second arm has a small negative mean and a large upside, the third
    arm shares that upside but has a catastrophic downside of ``-10**(1/eps)``.
    """
    if not 0 < eps < 1 / 7:
        raise ConfigurationError(f"eps must lie in (0, 1/7), got {eps}")
    big = 1e6
    arms = (
        TwoPoint(-1.0, 1.0, 0.55),
        TwoPoint(-big - 2 * eps, big, 0.5),
        TwoPoint(-(10.0 ** (1 / eps)), big, 0.5),
    )
    return Instance(arms, name=f"ordered-heavy-downside-eps{eps:g}")


def unordered_counterexample() -> Instance:
    """Neg arms not ordered by dominance, on which the index policy is suboptimal.

    The index policy first mixes with the neg arm of mean -0.4; mixing with
    the riskier arm of mean -0.5 is worth 1.21475 against 1.16975.
    """
    arms = (TwoPoint(-1.0, 1.0, 0.55), TwoPoint(-1.0, 1.0, 0.3), TwoPoint(-4.0, 3.0, 0.5))
    return Instance(arms, name="unordered_counterexample")


def empty_neg() -> Instance:
    """Only above arms: every policy explores all of them."""
    return Instance((TwoPoint(-1.0, 1.0, 0.7), TwoPoint(-1.0, 2.0, 0.5)), name="empty_neg")


# Instances for the incentive-compatible mechanism: the default has the
# largest prior mean, arms are indexed by non-increasing mean and each arm
# dominates the next.

def bic_two_arm() -> Instance:
    arms = (TwoPoint(-1.0, 1.0, 0.65), TwoPoint(-1.0, 1.0, 0.55))
    default = FiniteDiscrete((-0.5, 0.2, 1.0), (0.3, 0.3, 0.4))
    return Instance(arms, default=default, name="bic_two_arm")


def bic_three_arm() -> Instance:
    arms = (TwoPoint(-1.0, 1.0, 0.6), TwoPoint(-1.0, 1.0, 0.5), TwoPoint(-1.0, 1.0, 0.4))
    default = FiniteDiscrete((-0.5, 0.3, 1.0), (0.2, 0.3, 0.5))
    return Instance(arms, default=default, name="bic_three_arm")


def bic_four_arm() -> Instance:
    support = (-1.0, 0.0, 2.0)
    arms = tuple(FiniteDiscrete(support, (low, 0.3, 0.7 - low)) for low in (0.3, 0.35, 0.4, 0.45))
    default = FiniteDiscrete((-0.5, 1.0, 2.0), (0.3, 0.3, 0.4))
    return Instance(arms, default=default, name="bic_four_arm")


def iregb_not_bic() -> Instance:
    """An instance on which the plain mechanism recommends a neg arm in round one."""
    return Instance((TwoPoint(-1.0, 1.0, 0.6), TwoPoint(-1.0, 1.0, 0.45)), name="iregb_not_bic")


# Bounded discrete instances for the welfare convergence checks.

def conv_three_two_point() -> Instance:
    return Instance((TwoPoint(-1.0, 1.0, 0.7), TwoPoint(-1.0, 1.0, 0.4), TwoPoint(-1.0, 1.0, 0.3)),
                    name="conv_three_two_point")


def conv_four_wide() -> Instance:
    return Instance((TwoPoint(-1.0, 5.0, 0.3), TwoPoint(-1.0, 5.0, 0.15), TwoPoint(-1.0, 5.0, 0.1),
                     TwoPoint(-1.0, 5.0, 0.05)), name="conv_four_wide")


def conv_four_discrete() -> Instance:
    return Instance((FiniteDiscrete((-1.0, 0.5, 2.0), (0.3, 0.4, 0.3)),
                     FiniteDiscrete((-2.0, 0.0, 1.0), (0.3, 0.3, 0.4)),
                     FiniteDiscrete((-2.5, -0.5, 0.5), (0.3, 0.3, 0.4)),
                     FiniteDiscrete((-3.0, -1.0, 0.0), (0.3, 0.3, 0.4))),
                    name="conv_four_discrete")


def convergence_instances() -> list[Instance]:
    return [two_arm(), conv_three_two_point(), conv_four_wide(), conv_four_discrete(),
            four_gaussian_discretized()]


CATALOG: dict[str, Callable[[], Instance]] = {
    "four_gaussian": four_gaussian,
    "four_gaussian_discretized": four_gaussian_discretized,
    "two_arm": two_arm,
    "ordered_heavy_downside": ordered_heavy_downside,
    "unordered_counterexample": unordered_counterexample,
    "empty_neg": empty_neg,
    "bic_two_arm": bic_two_arm,
    "bic_three_arm": bic_three_arm,
    "bic_four_arm": bic_four_arm,
    "iregb_not_bic": iregb_not_bic,
    "conv_three_two_point": conv_three_two_point,
    "conv_four_wide": conv_four_wide,
    "conv_four_discrete": conv_four_discrete,
}


def bic_instances() -> list[Instance]:
    return [bic_two_arm(), bic_three_arm(), bic_four_arm()]


def standard_instances() -> list[Instance]:
    """Bounded instances on which mechanism certificates are checked."""
    return [two_arm(), four_gaussian_discretized(), unordered_counterexample(), empty_neg(),
            iregb_not_bic(), *convergence_instances()[1:4], *bic_instances()]


def by_name(name: str) -> Instance:
    try:
        return CATALOG[name]()
    except KeyError:
        raise ConfigurationError(f"unknown catalog instance {name!r}; choose from {sorted(CATALOG)}") from None


__all__ = ["CATALOG", "by_name", "bic_instances", "convergence_instances",
           "standard_instances", *CATALOG]

"""Closed-form formulas for level-crossing statistics of bounded martingales.

Everything here is a pure function of the threshold pair (a, b) and a start
value x. These are the exact laws that the simulation side must reproduce:
a continuous martingale in [0, 1] started at x hits b before a with the
fair-game probability, and its downcrossing count over [a, b] follows a
modified geometric law whose mean depends only on (x, a, b).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "ThresholdPair",
    "BoundBundle",
    "hit_prob",
    "exp_downcrossings",
    "mod_geometric_pmf",
    "bounds",
]


@dataclass(frozen=True)
class ThresholdPair:
    """A band 0 < a < b < 1. Boundary thresholds are degenerate and rejected."""

    a: float
    b: float

    def __post_init__(self) -> None:
        if not (0.0 < self.a < self.b < 1.0):
            raise ValueError(
                f"threshold pair must satisfy 0 < a < b < 1, got a={self.a}, b={self.b}"
            )


@dataclass(frozen=True)
class BoundBundle:
    """Means, variance caps, and the stage constant for one threshold pair.

    Two variance caps for the total downcrossing count are carried side by
    side: a conjectured cap beta^2 + beta with beta = (1-b)/(b-a), and a
    proved but looser cap. Reports must label the former as a conjecture.
    """

    mean_Nb: float
    mean_Dab: float
    var_cap_Nb: float
    var_cap_Dab_conjectured: float
    var_cap_Dab_proved: float
    k_alpha: int


def hit_prob(x: float, a: float, b: float) -> float:
    """Probability that a martingale started at x hits b before a.

    Requires a <= x <= b and a < b. Exact at the endpoints.
    """
    if not a < b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if not (a <= x <= b):
        raise ValueError(f"start value x={x} outside [{a}, {b}]")
    if x == a:
        return 0.0
    if x == b:
        return 1.0
    return (x - a) / (b - a)


def exp_downcrossings(x: float, pair: ThresholdPair) -> float:
    """Expected total downcrossings of [a, b] for a martingale from x to {0, 1}.

    Piecewise linear in x with a kink at b; both branches agree at x = b.
    """
    if not (0.0 <= x <= 1.0):
        raise ValueError(f"start value x={x} outside [0, 1]")
    a, b = pair.a, pair.b
    if x <= b:
        return x * (1.0 - b) / (b - a)
    return b * (1.0 - x) / (b - a)


def mod_geometric_pmf(d: int, pair: ThresholdPair) -> float:
    """P(D = d) for the downcrossing count of a martingale started at b.

    An atom at zero of mass (b-a)/(1-a), then a geometric tail with ratio
    rho = a(1-b)/(b(1-a)). Sums to one; mean is b(1-b)/(b-a).
    """
    if d < 0:
        raise ValueError(f"count d must be nonnegative, got {d}")
    a, b = pair.a, pair.b
    if d == 0:
        return (b - a) / (1.0 - a)
    rho = a * (1.0 - b) / (b * (1.0 - a))
    return (1.0 - b) / (1.0 - a) * rho ** (d - 1) * (1.0 - rho)


def bounds(pair: ThresholdPair) -> BoundBundle:
    """Means, variance caps, and the stage constant for the pair.

    The proved variance cap uses mu = min((2-b)/b^2, 1/a^2). The stage
    constant k_alpha = 6*floor(1/(1-a/b)) - 1 caps how many components a
    narrow-band construction can keep strictly inside (0, b] at termination.
    """
    a, b = pair.a, pair.b
    beta = (1.0 - b) / (b - a)
    mu = min((2.0 - b) / (b * b), 1.0 / (a * a))
    proved = (math.sqrt(beta + 2.0 * beta * beta + mu) + math.sqrt(mu)) ** 2 - beta * beta
    alpha = a / b
    return BoundBundle(
        mean_Nb=1.0 / b,
        mean_Dab=beta,
        var_cap_Nb=(1.0 - b) / (b * b),
        var_cap_Dab_conjectured=beta * beta + beta,
        var_cap_Dab_proved=proved,
        k_alpha=6 * math.floor(1.0 / (1.0 - alpha)) - 1,
    )

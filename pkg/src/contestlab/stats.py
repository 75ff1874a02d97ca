"""Estimates, goodness-of-fit tests, and bound-compliance reports.

Crossing counts are small nonnegative integers, so a sparse histogram
(value -> count) is the complete sufficient statistic for a batch of
runs. Summaries therefore store the histogram and derive all moments
from it exactly; merging two summaries is histogram addition, which is
associative and commutative, so parallel reductions give identical
results in any order.

The goodness-of-fit test is a chi-square against a geometric pmf whose
support starts at `shift` (0 or 1), with the tail pooled into the last
cell and cells merged from the tail end until every expected count is
at least 5. Totals below 1000 are flagged inconclusive rather than
trusted.

Bound reports compare empirical means against the universal crossing
expectations and empirical variances against the variance caps, using
the asymptotic standard error of the sample variance for the tolerance
band. The cap beta^2 + beta is a conjecture, not a theorem, and its
verdict is labeled accordingly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from contestlab.analytic import BoundBundle, ThresholdPair, bounds

__all__ = [
    "EstimateSummary",
    "GofResult",
    "BoundVerdict",
    "BoundsReport",
    "summarize",
    "merge",
    "gof_geometric",
    "bounds_report",
    "to_json",
]

MIN_CONCLUSIVE_N = 1000
MIN_EXPECTED_PER_CELL = 5.0
VAR_BAND_MULTIPLIER = 3.0


@dataclass(frozen=True)
class EstimateSummary:
    """Moments with uncertainty, derived exactly from a sparse histogram."""

    n: int
    mean: float
    variance: float
    mean_ci_halfwidth: float
    var_std_error: float
    z: float
    histogram: dict[int, int] = field(default_factory=dict)

    def to_jsonable(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "variance": self.variance,
            "mean_ci_halfwidth": self.mean_ci_halfwidth,
            "var_std_error": self.var_std_error,
            "z": self.z,
            "histogram": [[int(v), int(c)] for v, c in sorted(self.histogram.items())],
        }


@dataclass(frozen=True)
class GofResult:
    """Chi-square verdict for one histogram against one reference pmf."""

    statistic: float
    p_value: float
    dof: int
    n: int
    n_cells: int
    inconclusive: bool

    def to_jsonable(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "dof": self.dof,
            "n": self.n,
            "n_cells": self.n_cells,
            "inconclusive": self.inconclusive,
        }


@dataclass(frozen=True)
class BoundVerdict:
    """One bound comparison; margin >= 0 exactly when the status is pass."""

    name: str
    label: str  # "theorem" or "conjecture"
    status: str  # "pass" | "fail" | "inconclusive"
    observed: float
    reference: float
    slack: float
    margin: float

    def to_jsonable(self) -> dict:
        return {
            "name": self.name,
            "label": self.label,
            "status": self.status,
            "observed": self.observed,
            "reference": self.reference,
            "slack": self.slack,
            "margin": self.margin,
        }


@dataclass
class BoundsReport:
    """Theoretical bounds next to empirical summaries with verdicts."""

    pair: ThresholdPair
    theoretical: BoundBundle
    empirical: dict[str, EstimateSummary]
    verdicts: list[BoundVerdict]

    def to_jsonable(self) -> dict:
        return {
            "pair": {"a": self.pair.a, "b": self.pair.b},
            "theoretical": {
                "mean_Nb": self.theoretical.mean_Nb,
                "mean_Dab": self.theoretical.mean_Dab,
                "var_cap_Nb": self.theoretical.var_cap_Nb,
                "var_cap_Dab_conjectured": self.theoretical.var_cap_Dab_conjectured,
                "var_cap_Dab_proved": self.theoretical.var_cap_Dab_proved,
                "k_alpha": self.theoretical.k_alpha,
            },
            "empirical": {
                k: v.to_jsonable() for k, v in sorted(self.empirical.items())
            },
            "verdicts": [v.to_jsonable() for v in self.verdicts],
        }


def _histogram(samples) -> dict[int, int]:
    values, counts = np.unique(np.asarray(samples, dtype=np.int64),
                               return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


def from_histogram(histogram: dict[int, int], z: float = 3.0) -> EstimateSummary:
    """Summary statistics computed exactly from integer counts."""
    if not histogram:
        raise ValueError("empty histogram")
    if any(c < 0 for c in histogram.values()):
        raise ValueError("negative count")
    n = int(sum(histogram.values()))
    if n < 1:
        raise ValueError("histogram holds no samples")
    vals = np.array(sorted(histogram), dtype=np.float64)
    cnts = np.array([histogram[int(v)] for v in vals], dtype=np.float64)
    mean = float((vals * cnts).sum() / n)
    if n >= 2:
        dev = vals - mean
        m2 = float((cnts * dev**2).sum()) / n
        m4 = float((cnts * dev**4).sum()) / n
        variance = float((cnts * dev**2).sum() / (n - 1))
        # asymptotic standard error of the unbiased sample variance
        var_var = (m4 - (n - 3) / (n - 1) * m2 * m2) / n
        var_std_error = math.sqrt(var_var) if var_var > 0.0 else 0.0
        halfwidth = z * math.sqrt(variance / n)
    else:
        variance = math.nan
        var_std_error = math.nan
        halfwidth = math.nan
    return EstimateSummary(
        n=n,
        mean=mean,
        variance=variance,
        mean_ci_halfwidth=halfwidth,
        var_std_error=var_std_error,
        z=z,
        histogram={int(k): int(v) for k, v in histogram.items()},
    )


def summarize(samples, z: float = 3.0) -> EstimateSummary:
    """Exact sample moments of an integer sample with a z-sigma mean CI."""
    samples = np.asarray(samples)
    if samples.size == 0:
        raise ValueError("empty sample")
    return from_histogram(_histogram(samples), z=z)


def merge(left: EstimateSummary, right: EstimateSummary) -> EstimateSummary:
    """Combine two summaries by histogram addition (order-independent)."""
    if left.z != right.z:
        raise ValueError("cannot merge summaries with different z")
    histogram = dict(left.histogram)
    for v, c in right.histogram.items():
        histogram[v] = histogram.get(v, 0) + c
    return from_histogram(histogram, z=left.z)


def gof_geometric(histogram: dict[int, int], p: float,
                  shift: int) -> GofResult:
    """Chi-square test of a histogram against Geometric(p) started at shift.

    The reference pmf is P(X = k) = (1-p)^(k-shift) * p for k >= shift.
    Tail cells are pooled until every expected count reaches 5; the
    degrees of freedom are cells - 1 (p is given, not estimated).
    """
    if not (0.0 < p < 1.0):
        raise ValueError("p must lie in (0, 1)")
    if shift not in (0, 1):
        raise ValueError("shift must be 0 or 1")
    if not histogram:
        raise ValueError("empty histogram")
    if min(histogram) < shift:
        raise ValueError(
            f"observed value {min(histogram)} below the support start {shift}"
        )
    n = int(sum(histogram.values()))
    inconclusive = n < MIN_CONCLUSIVE_N
    q = 1.0 - p

    # individual cells while big enough, then one pooled tail cell
    expected = []
    k = shift
    while n * q ** (k - shift) * p >= MIN_EXPECTED_PER_CELL:
        expected.append(n * q ** (k - shift) * p)
        k += 1
    tail_start = k
    expected.append(n * q ** (tail_start - shift))
    observed = [0.0] * len(expected)
    for v, c in histogram.items():
        cell = v - shift if v < tail_start else len(expected) - 1
        observed[cell] += c
    while len(expected) >= 2 and expected[-1] < MIN_EXPECTED_PER_CELL:
        expected[-2] += expected[-1]
        observed[-2] += observed[-1]
        expected.pop()
        observed.pop()
    if len(expected) < 2:
        return GofResult(math.nan, math.nan, 0, n, len(expected), True)
    stat = float(
        sum((o - e) ** 2 / e for o, e in zip(observed, expected))
    )
    dof = len(expected) - 1
    p_value = float(chi2.sf(stat, dof))
    return GofResult(stat, p_value, dof, n, len(expected), inconclusive)


def _mean_verdict(name: str, summary: EstimateSummary,
                  reference: float) -> BoundVerdict:
    diff = abs(summary.mean - reference)
    slack = summary.mean_ci_halfwidth
    margin = slack - diff
    status = "pass" if margin >= 0.0 else "fail"
    return BoundVerdict(
        name=name,
        label="theorem",
        status=status,
        observed=summary.mean,
        reference=reference,
        slack=slack,
        margin=margin,
    )


def _var_verdict(name: str, label: str, summary: EstimateSummary,
                 cap: float) -> BoundVerdict:
    slack = VAR_BAND_MULTIPLIER * summary.var_std_error
    margin = cap + slack - summary.variance
    if summary.n < MIN_CONCLUSIVE_N:
        status = "inconclusive"
    else:
        status = "pass" if margin >= 0.0 else "fail"
    return BoundVerdict(
        name=name,
        label=label,
        status=status,
        observed=summary.variance,
        reference=cap,
        slack=slack,
        margin=margin,
    )


def bounds_report(pair: ThresholdPair,
                  summaries: dict[str, EstimateSummary]) -> BoundsReport:
    """Verdict sheet for one batch: means vs exact values, variances vs caps.

    summaries must hold entries under "n_b" and "d_ab".
    """
    for key in ("n_b", "d_ab"):
        if key not in summaries:
            raise ValueError(f"missing summary {key!r}")
    bb = bounds(pair)
    nb = summaries["n_b"]
    dab = summaries["d_ab"]
    verdicts = [
        _mean_verdict("mean_nb", nb, bb.mean_Nb),
        _mean_verdict("mean_dab", dab, bb.mean_Dab),
        _var_verdict("var_nb_cap", "theorem", nb, bb.var_cap_Nb),
        _var_verdict("var_dab_cap_proved", "theorem", dab, bb.var_cap_Dab_proved),
        _var_verdict(
            "var_dab_cap_conjectured", "conjecture", dab,
            bb.var_cap_Dab_conjectured,
        ),
    ]
    return BoundsReport(
        pair=pair,
        theoretical=bb,
        empirical=dict(summaries),
        verdicts=verdicts,
    )


def to_json(obj) -> str:
    """Deterministic JSON encoding (sorted keys, stable float repr)."""
    payload = obj.to_jsonable() if hasattr(obj, "to_jsonable") else obj
    return json.dumps(payload, sort_keys=True, indent=2)

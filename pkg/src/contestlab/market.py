"""Ingestion and crossing analysis of observed probability time series.

A market CSV holds rows `time,contestant,prob` (RFC 4180 quoting): one
probability sample per contestant per timestamp, with time given as
ISO-8601 or as an integer epoch. Ingestion validates every row (range,
ordering, shape) and reports the first offending line number. At
timestamps where every contestant quotes, the quotes are renormalized
to sum to 1 when the raw sum is within 5% of 1, and rejected otherwise,
naming the timestamp.

Crossing statistics run the engine's own pre_b/active/inactive monitor
over an interpolation of each contestant's samples. The default
interpolation is piecewise linear, which matches a continuous-path
model: a segment touches every level between its endpoints, in travel
order. The alternative "step" mode holds the last observation constant,
so a jump touches nothing between the two quotes. For plain threshold
hit counting the two modes coincide: a monotone segment attains its
extreme values at the quotes themselves, so every band the linear
segment enters is also entered by the endpoint touch. The switch pins
down the path model for any statistic that looks between quotes.
Either way, a level exceeded only between samples is invisible, so
observed counts are lower bounds on the underlying path's crossing
counts; reports carry that caveat next to the model expectations they
quote.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone

from contestlab.analytic import ThresholdPair, bounds
from contestlab.engine import MonitorState

__all__ = [
    "MarketDataError",
    "MarketSeries",
    "SeriesCrossings",
    "UNDERCOUNT_CAVEAT",
    "ingest_market_csv",
    "crossing_stats_from_series",
]

NORM_EPS = 0.05

UNDERCOUNT_CAVEAT = (
    "crossing counts are computed from sampled quotes; excursions between "
    "samples are invisible, so counts are lower bounds on the underlying "
    "path's counts"
)


class MarketDataError(ValueError):
    """Malformed or inconsistent market data."""


@dataclass
class MarketSeries:
    """Per-contestant time-ordered probability samples.

    samples maps contestant id to a list of (time, prob) with strictly
    increasing times (epoch seconds). n_renormalized counts the common
    timestamps whose quotes were scaled to sum to 1.
    """

    contestants: list[str]
    samples: dict[str, list[tuple[float, float]]]
    n_renormalized: int = 0


@dataclass
class SeriesCrossings:
    """Monitor outcomes per contestant plus model-expectation context."""

    pair: ThresholdPair
    interp: str
    monitors: dict[str, MonitorState]
    n_b: int
    d_ab: int
    expected_mean_nb: float
    expected_mean_dab: float
    caveat: str = UNDERCOUNT_CAVEAT

    def to_jsonable(self) -> dict:
        return {
            "pair": {"a": self.pair.a, "b": self.pair.b},
            "interp": self.interp,
            "contestants": {
                cid: {
                    "reached_b": mon.reached_b,
                    "downcrossings": mon.downcrossings,
                    "sup": mon.sup_value,
                    "status": mon.status,
                }
                for cid, mon in sorted(self.monitors.items())
            },
            "n_b": self.n_b,
            "d_ab": self.d_ab,
            "expected_mean_nb": self.expected_mean_nb,
            "expected_mean_dab": self.expected_mean_dab,
            "caveat": self.caveat,
        }


def _parse_time(text: str, line: int) -> float:
    raw = text.strip()
    if not raw:
        raise MarketDataError(f"line {line}: empty time field")
    try:
        return float(int(raw))
    except ValueError:
        pass
    try:
        stamp = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise MarketDataError(
            f"line {line}: time {raw!r} is neither an integer epoch nor ISO-8601"
        ) from None
    if stamp.tzinfo is None:
        stamp = stamp.replace(tzinfo=timezone.utc)
    return stamp.timestamp()


def _parse_prob(text: str, line: int) -> float:
    raw = text.strip()
    try:
        p = float(raw)
    except ValueError:
        raise MarketDataError(
            f"line {line}: probability {raw!r} is not a number"
        ) from None
    if not math.isfinite(p) or p < 0.0 or p > 1.0:
        raise MarketDataError(
            f"line {line}: probability {raw!r} outside [0, 1]"
        )
    return p


def ingest_market_csv(path) -> MarketSeries:
    """Parse, validate, and renormalize a `time,contestant,prob` CSV."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MarketDataError("no data rows") from None
        if [c.strip() for c in header] != ["time", "contestant", "prob"]:
            raise MarketDataError(
                f"line 1: header must be time,contestant,prob, "
                f"got {','.join(header)!r}"
            )
        for row in reader:
            line = reader.line_num
            if not row:
                continue
            if len(row) != 3:
                raise MarketDataError(
                    f"line {line}: expected 3 fields, got {len(row)}"
                )
            t = _parse_time(row[0], line)
            cid = row[1].strip()
            if not cid:
                raise MarketDataError(f"line {line}: empty contestant id")
            p = _parse_prob(row[2], line)
            rows.append((t, cid, p, row[0].strip(), line))
    if not rows:
        raise MarketDataError("no data rows")

    contestants: list[str] = []
    samples: dict[str, list[tuple[float, float]]] = {}
    lines: dict[str, list[int]] = {}
    raw_time: dict[float, str] = {}
    for t, cid, p, raw, line in rows:
        if cid not in samples:
            contestants.append(cid)
            samples[cid] = []
            lines[cid] = []
        samples[cid].append((t, p))
        lines[cid].append(line)
        raw_time.setdefault(t, raw)
    for cid in contestants:
        seq = samples[cid]
        for k in range(1, len(seq)):
            if seq[k][0] <= seq[k - 1][0]:
                raise MarketDataError(
                    f"line {lines[cid][k]}: timestamps for contestant "
                    f"{cid!r} must be strictly increasing"
                )

    # renormalize common timestamps (quotes from every contestant)
    by_time: dict[float, dict[str, int]] = {}
    for cid in contestants:
        for k, (t, _) in enumerate(samples[cid]):
            by_time.setdefault(t, {})[cid] = k
    n_renormalized = 0
    for t in sorted(by_time):
        members = by_time[t]
        if len(members) != len(contestants):
            continue
        total = sum(samples[cid][k][1] for cid, k in members.items())
        if abs(total - 1.0) > NORM_EPS:
            raise MarketDataError(
                f"quotes at time {raw_time[t]!r} sum to {total:.6g}, "
                f"outside [{1 - NORM_EPS}, {1 + NORM_EPS}]"
            )
        if total != 1.0:
            for cid, k in members.items():
                tt, p = samples[cid][k]
                samples[cid][k] = (tt, p / total)
            n_renormalized += 1
    return MarketSeries(
        contestants=contestants,
        samples=samples,
        n_renormalized=n_renormalized,
    )


def _walk_linear(values, pair: ThresholdPair, mon: MonitorState) -> None:
    mon.touch(values[0], pair)
    for k in range(1, len(values)):
        prev = values[k - 1]
        cur = values[k]
        if cur >= prev:
            if prev < pair.a <= cur:
                mon.touch(pair.a, pair)
            if prev < pair.b <= cur:
                mon.touch(pair.b, pair)
        else:
            if prev > pair.b >= cur:
                mon.touch(pair.b, pair)
            if prev > pair.a >= cur:
                mon.touch(pair.a, pair)
        mon.touch(cur, pair)


def _walk_step(values, pair: ThresholdPair, mon: MonitorState) -> None:
    for v in values:
        mon.touch(v, pair)


def crossing_stats_from_series(series: MarketSeries, pair: ThresholdPair,
                               interp: str = "linear") -> SeriesCrossings:
    """Run the crossing monitor over each contestant's interpolated path.

    interp "linear" walks every level between consecutive samples in
    travel order; "step" holds the last observation, so only the quoted
    values themselves are touched.
    """
    if interp not in ("linear", "step"):
        raise ValueError(f"unknown interpolation {interp!r}")
    monitors: dict[str, MonitorState] = {}
    for cid in series.contestants:
        values = [p for _, p in series.samples[cid]]
        mon = MonitorState(sup_value=-math.inf)
        if interp == "linear":
            _walk_linear(values, pair, mon)
        else:
            _walk_step(values, pair, mon)
        monitors[cid] = mon
    bb = bounds(pair)
    return SeriesCrossings(
        pair=pair,
        interp=interp,
        monitors=monitors,
        n_b=sum(1 for m in monitors.values() if m.reached_b),
        d_ab=sum(m.downcrossings for m in monitors.values()),
        expected_mean_nb=bb.mean_Nb,
        expected_mean_dab=bb.mean_Dab,
    )

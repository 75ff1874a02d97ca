"""Euler-Maruyama simulator for the k-allele Wright-Fisher diffusion.

The diffusion lives on the probability simplex: zero drift, covariance
rate x_i(delta_ij - x_j), so each coordinate is a martingale in [0, 1]
and the coordinates sum to 1. A step of size h draws independent
standard normals g_j and updates every unabsorbed component as

    x_i <- x_i + sqrt(h) * sqrt(x_i) * (g_i - sqrt(x_i) * sum_j sqrt(x_j) g_j)

with the sum over unabsorbed components. The increment vector is
jointly Gaussian with mean zero and covariance h * x_i(delta_ij - x_j)
(expanding the product and using sum_j x_j = 1 over live mass), and the
increments sum to zero, so one step preserves total mass up to float
rounding.

Components clamped at 0 are absorbed; the clamping surplus is removed
from the survivors proportionally so live mass stays exactly 1. A
component reaching 1 ends the run (fixation), as does the pool
shrinking to a single survivor.

Discrete sampling misses excursions between grid points, so crossing
counts are biased low for coarse h. With the bridge correction enabled,
a step from x to x' that stays below the upper threshold b still
registers a hit of b with probability exp(-2(b-x)(b-x')/(s2*h)), the
crossing probability of a Brownian bridge with variance rate s2 frozen
at the step midpoint value xbar*(1-xbar). The mirror-image correction
applies at the lower threshold a for components currently active. The
correction is a first-order fix, valid when h is small compared to the
squared distance to the threshold; a single step that leaps from below
b to below a (two missed crossings at once) is not corrected, which is
negligible for step scales far below b - a.

The per-run kernel consumes normals from a buffer refilled in blocks
from the run's own generator, so results are reproducible for a given
(seed, run index) regardless of batching or worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from contestlab.analytic import ThresholdPair
from contestlab.engine import InternalConsistencyError

__all__ = [
    "WfState",
    "WfRunParams",
    "WfRunRecord",
    "WfBatch",
    "Cov3Estimate",
    "wf_step",
    "wf_run",
    "wf_many",
    "cov3_mc",
]

MASS_TOL = 1e-9

# a bridge-crossing probability below exp(-2*20) is never worth a draw
_BRIDGE_CUTOFF = 20.0

_MAX_STEPS = 2**62


@dataclass
class WfState:
    """Simplex state: component values, absorption flags, model time."""

    values: np.ndarray
    absorbed: np.ndarray
    time: float = 0.0

    @classmethod
    def equal(cls, k: int) -> "WfState":
        """k live components of mass 1/k each."""
        if k < 2:
            raise ValueError("need at least two components")
        return cls(
            values=np.full(k, 1.0 / k),
            absorbed=np.zeros(k, dtype=bool),
        )

    def validate(self) -> None:
        if self.values.shape != self.absorbed.shape:
            raise ValueError("values and absorbed must have matching shape")
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise ValueError("component values must lie in [0, 1]")
        if abs(float(self.values.sum()) - 1.0) > MASS_TOL:
            raise ValueError("component values must sum to 1")
        dead = self.values[self.absorbed]
        if dead.size and not np.all((dead == 0.0) | (dead == 1.0)):
            raise ValueError("absorbed components must sit exactly at 0 or 1")
        if self.time < 0.0:
            raise ValueError("time must be nonnegative")


@dataclass(frozen=True)
class WfRunParams:
    """Run configuration: component count, step size, seed, monitors."""

    k: int
    h: float
    seed: int = 42
    monitors: ThresholdPair = ThresholdPair(0.1, 0.2)
    bridge_correction: bool = True
    max_time: float = math.inf

    def validate(self) -> None:
        if self.k < 2:
            raise ValueError("k must be at least 2")
        if not (self.h > 0.0):
            raise ValueError("h must be positive")
        if not (self.max_time > 0.0):
            raise ValueError("max_time must be positive")

    def max_steps(self) -> int:
        if math.isinf(self.max_time):
            return _MAX_STEPS
        return min(_MAX_STEPS, int(math.ceil(self.max_time / self.h)))


@dataclass(frozen=True)
class WfRunRecord:
    """Outcome of one diffusion run."""

    n_b: int
    d_ab: int
    winner_id: int
    steps: int
    time: float
    truncated: bool
    reached: np.ndarray
    downcrossings: np.ndarray


@dataclass
class WfBatch:
    """Per-run outcome arrays for a batch of seeded diffusion runs."""

    params: WfRunParams
    n_runs: int
    n_b: np.ndarray
    d_ab: np.ndarray
    winner: np.ndarray
    truncated: np.ndarray

    @property
    def n_truncated(self) -> int:
        return int(self.truncated.sum())


@dataclass(frozen=True)
class Cov3Estimate:
    """Fraction of 3-allele runs in which both watched components hit b."""

    estimate: float
    std_error: float
    n_runs: int
    n_used: int
    n_truncated: int


def _increments(values: np.ndarray, alive: np.ndarray, h: float,
                g: np.ndarray) -> np.ndarray:
    """Gaussian step increments; dead components receive 0.

    g may carry leading batch axes; the component axis is last.
    """
    sx = np.where(alive, np.sqrt(values), 0.0)
    s = (g * sx).sum(axis=-1, keepdims=True)
    return np.sqrt(h) * sx * (g - sx * s)


def wf_step(state: WfState, h: float, rng: np.random.Generator) -> WfState:
    """One Euler-Maruyama step (readable reference; no crossing monitors).

    Absorbed components do not move. A component clamped at 0 is
    absorbed and the surplus is removed from the survivors
    proportionally; a component reaching 1 fixes and absorbs everything.
    """
    if not (h > 0.0):
        raise ValueError("h must be positive")
    state.validate()
    alive = ~state.absorbed
    if int(alive.sum()) <= 1:
        return WfState(state.values.copy(), state.absorbed.copy(), state.time)
    g = rng.standard_normal(state.values.shape[0])
    x = state.values + _increments(state.values, alive, h, g)
    x[~alive] = state.values[~alive]
    np.clip(x, 0.0, 1.0, out=x)
    absorbed = state.absorbed | (alive & (x == 0.0))
    fixed = alive & (x == 1.0)
    if fixed.any():
        w = int(np.flatnonzero(fixed)[0])
        x[:] = 0.0
        x[w] = 1.0
        absorbed = np.ones_like(absorbed)
        return WfState(x, absorbed, state.time + h)
    live = ~absorbed
    total = float(x[live].sum())
    if total <= 0.0:
        raise InternalConsistencyError("live mass vanished in one step")
    x[live] *= 1.0 / total
    # push the last rounding crumbs onto the largest survivor
    live_ix = np.flatnonzero(live)
    big = live_ix[int(np.argmax(x[live_ix]))]
    x[big] += 1.0 - float(x.sum())
    return WfState(x, absorbed, state.time + h)


@njit(cache=True)
def _wf_kernel(x, reached, downx, a, b, h, max_steps, bridge, stop_pair,
               rngn, rngu):
    """Run one diffusion to fixation, mutating x in place.

    Returns (code, winner, n_b, d_ab, steps) with code 0 = fixation,
    1 = step cap reached, 2 = both watched components decided (only
    when stop_pair is 1), 3 = internal error. Monitor semantics match
    the crossing engine: reaching b activates, reaching a while active
    books one downcrossing and deactivates.
    """
    k = x.shape[0]
    status = np.zeros(k, np.int64)
    idx = np.empty(k, np.int64)
    sx = np.empty(k, np.float64)
    na = 0
    nb = 0
    dab = 0
    for i in range(k):
        reached[i] = 0
        downx[i] = 0
        if x[i] > 0.0:
            idx[na] = i
            na += 1
            if x[i] >= b:
                reached[i] = 1
                nb += 1
                status[i] = 1
    sqh = math.sqrt(h)
    nbuf = 4096 if 4 * k < 4096 else 4 * k
    buf = rngn.standard_normal(nbuf)
    pos = 0
    ubuf = rngu.random(512)
    upos = 0
    steps = 0
    while True:
        if na <= 1:
            if na == 0:
                return 3, -1, nb, dab, steps
            w = idx[0]
            x[w] = 1.0
            if reached[w] == 0:
                reached[w] = 1
                nb += 1
            status[w] = 1
            return 0, w, nb, dab, steps
        if stop_pair == 1:
            d0 = reached[0] == 1 or x[0] == 0.0
            d1 = reached[1] == 1 or x[1] == 0.0
            if d0 and d1:
                return 2, -1, nb, dab, steps
        if steps >= max_steps:
            return 1, -1, nb, dab, steps
        if pos + na > nbuf:
            buf = rngn.standard_normal(nbuf)
            pos = 0
        s = 0.0
        for z in range(na):
            v = math.sqrt(x[idx[z]])
            sx[z] = v
            s += v * buf[pos + z]
        total = 0.0
        dirty = False
        wloc = -1
        for z in range(na):
            i = idx[z]
            xo = x[i]
            sxi = sx[z]
            xn = xo + sqh * sxi * (buf[pos + z] - sxi * s)
            if xn <= 0.0:
                xn = 0.0
                dirty = True
            elif xn >= 1.0:
                xn = 1.0
                wloc = i
            if xn >= b:
                if reached[i] == 0:
                    reached[i] = 1
                    nb += 1
                status[i] = 1
            elif xn <= a:
                if status[i] == 1:
                    dab += 1
                    downx[i] += 1
                    status[i] = 2
            elif bridge == 1:
                xbar = 0.5 * (xo + xn)
                s2h = xbar * (1.0 - xbar) * h
                if status[i] != 1:
                    q = (b - xo) * (b - xn)
                    if q < _BRIDGE_CUTOFF * s2h:
                        if upos >= ubuf.shape[0]:
                            ubuf = rngu.random(512)
                            upos = 0
                        uu = ubuf[upos]
                        upos += 1
                        if uu < math.exp(-2.0 * q / s2h):
                            if reached[i] == 0:
                                reached[i] = 1
                                nb += 1
                            status[i] = 1
                elif a > 0.0:
                    q = (xo - a) * (xn - a)
                    if q < _BRIDGE_CUTOFF * s2h:
                        if upos >= ubuf.shape[0]:
                            ubuf = rngu.random(512)
                            upos = 0
                        uu = ubuf[upos]
                        upos += 1
                        if uu < math.exp(-2.0 * q / s2h):
                            dab += 1
                            downx[i] += 1
                            status[i] = 2
            x[i] = xn
            total += xn
        pos += na
        steps += 1
        if wloc >= 0:
            for z in range(na):
                i = idx[z]
                if i != wloc:
                    x[i] = 0.0
            x[wloc] = 1.0
            return 0, wloc, nb, dab, steps
        if dirty or abs(total - 1.0) > 1e-13:
            scale = 1.0 / total
            nn = 0
            big = -1
            for z in range(na):
                i = idx[z]
                if x[i] > 0.0:
                    x[i] *= scale
                    idx[nn] = i
                    nn += 1
                    if big < 0 or x[i] > x[big]:
                        big = i
            na = nn
            if na > 0:
                r = 1.0
                for z in range(na):
                    r -= x[idx[z]]
                x[big] += r


def _run_rngs(seed: int, run_index: int):
    rngn = np.random.default_rng(np.random.SeedSequence((seed, run_index, 0)))
    rngu = np.random.default_rng(np.random.SeedSequence((seed, run_index, 1)))
    return rngn, rngu


def _start_values(params: WfRunParams, start: WfState | None) -> np.ndarray:
    if start is None:
        return np.full(params.k, 1.0 / params.k)
    start.validate()
    if start.values.shape[0] != params.k:
        raise ValueError("start state size does not match params.k")
    return np.array(start.values, dtype=np.float64)


def wf_run(params: WfRunParams, start: WfState | None = None, *,
           run_index: int = 0) -> WfRunRecord:
    """One monitored diffusion run from `start` (default: equal masses)."""
    params.validate()
    x = _start_values(params, start)
    reached = np.zeros(params.k, dtype=np.int64)
    downx = np.zeros(params.k, dtype=np.int64)
    rngn, rngu = _run_rngs(params.seed, run_index)
    code, winner, nb, dab, steps = _wf_kernel(
        x, reached, downx, params.monitors.a, params.monitors.b, params.h,
        params.max_steps(), 1 if params.bridge_correction else 0, 0,
        rngn, rngu,
    )
    if code == 3:
        raise InternalConsistencyError("diffusion lost all live components")
    return WfRunRecord(
        n_b=int(nb),
        d_ab=int(dab),
        winner_id=int(winner),
        steps=int(steps),
        time=float(steps) * params.h,
        truncated=code == 1,
        reached=reached,
        downcrossings=downx,
    )


def _wf_range(params: WfRunParams, start_vals: np.ndarray | None,
              lo: int, hi: int):
    count = hi - lo
    n_b = np.empty(count, dtype=np.int64)
    d_ab = np.empty(count, dtype=np.int64)
    winner = np.empty(count, dtype=np.int64)
    truncated = np.zeros(count, dtype=bool)
    reached = np.zeros(params.k, dtype=np.int64)
    downx = np.zeros(params.k, dtype=np.int64)
    a = params.monitors.a
    b = params.monitors.b
    bridge = 1 if params.bridge_correction else 0
    cap = params.max_steps()
    for j, run_index in enumerate(range(lo, hi)):
        if start_vals is None:
            x = np.full(params.k, 1.0 / params.k)
        else:
            x = start_vals.copy()
        rngn, rngu = _run_rngs(params.seed, run_index)
        code, w, nb, dab, _ = _wf_kernel(
            x, reached, downx, a, b, params.h, cap, bridge, 0, rngn, rngu
        )
        if code == 3:
            raise InternalConsistencyError("diffusion lost all live components")
        n_b[j] = nb
        d_ab[j] = dab
        winner[j] = w
        truncated[j] = code == 1
    return n_b, d_ab, winner, truncated


def _wf_range_star(args):
    return _wf_range(*args)


def wf_many(params: WfRunParams, n_runs: int, *, start: WfState | None = None,
            workers: int = 1) -> WfBatch:
    """n_runs seeded diffusion runs; identical output for any worker count."""
    params.validate()
    if n_runs < 1:
        raise ValueError("n_runs must be positive")
    if workers < 1:
        raise ValueError("workers must be positive")
    start_vals = None if start is None else _start_values(params, start)
    if workers > 1 and n_runs > 1:
        k = min(workers, n_runs)
        cuts = np.linspace(0, n_runs, k + 1).astype(np.int64)
        jobs = [
            (params, start_vals, int(lo), int(hi))
            for lo, hi in zip(cuts[:-1], cuts[1:])
            if hi > lo
        ]
        with ProcessPoolExecutor(max_workers=k) as pool:
            parts = list(pool.map(_wf_range_star, jobs))
        n_b = np.concatenate([p[0] for p in parts])
        d_ab = np.concatenate([p[1] for p in parts])
        winner = np.concatenate([p[2] for p in parts])
        truncated = np.concatenate([p[3] for p in parts])
    else:
        n_b, d_ab, winner, truncated = _wf_range(params, start_vals, 0, n_runs)
    return WfBatch(
        params=params,
        n_runs=n_runs,
        n_b=n_b,
        d_ab=d_ab,
        winner=winner,
        truncated=truncated,
    )


def cov3_mc(x: float, y: float, b: float, params: WfRunParams,
            n_runs: int = 120_000) -> Cov3Estimate:
    """Joint hit estimate for a 3-allele diffusion started at (x, y, 1-x-y).

    Returns the fraction of runs in which components 1 and 2 both reach
    b before absorption (bridge-corrected supremum tracking). Runs stop
    as soon as both watched components are decided; runs cut off by
    max_time are excluded from the estimate but counted.
    """
    params.validate()
    if not (0.0 < b < 1.0):
        raise ValueError("b must lie in (0, 1)")
    if x < 0.0 or y < 0.0 or x + y > 1.0:
        raise ValueError("start must satisfy x, y >= 0 and x + y <= 1")
    if x > b or y > b:
        raise ValueError("start components must not exceed b")
    if n_runs < 1:
        raise ValueError("n_runs must be positive")
    start = np.array([x, y, 1.0 - x - y], dtype=np.float64)
    reached = np.zeros(3, dtype=np.int64)
    downx = np.zeros(3, dtype=np.int64)
    bridge = 1 if params.bridge_correction else 0
    cap = params.max_steps()
    # only the upper threshold matters here; the lower one is a dummy
    a = b / 2.0
    hits = 0
    used = 0
    truncated = 0
    for run_index in range(n_runs):
        xs = start.copy()
        rngn, rngu = _run_rngs(params.seed, run_index)
        code, _, _, _, _ = _wf_kernel(
            xs, reached, downx, a, b, params.h, cap, bridge, 1, rngn, rngu
        )
        if code == 3:
            raise InternalConsistencyError("diffusion lost all live components")
        if code == 1:
            truncated += 1
            continue
        used += 1
        if reached[0] == 1 and reached[1] == 1:
            hits += 1
    if used == 0:
        return Cov3Estimate(math.nan, math.nan, n_runs, 0, truncated)
    est = hits / used
    se = math.sqrt(est * (1.0 - est) / used)
    return Cov3Estimate(est, se, n_runs, used, truncated)

"""Compilers turning the extremal constructions into engine stage sequences.

Five construction kinds are supported. Each factory validates its
parameters and returns an immutable ConstructionProgram whose policy
generator emits StageSpec objects; the crossing engine executes them and
the policy inspects the mutated configuration between stages.

Conventions shared by every policy (and mirrored bit-for-bit by the
compiled kernels in _kernels):

- a pair stage reflection-couples a driver with one partner via the map
  partner = s - driver (s the pair's mass); stage walls are always grid
  endpoints, with freeze rules marking components stopped at a target;
- after a stage, a partner stopped within SNAP_TOL of its freeze target
  is snapped to the exact target float (the correction is ~1e-16, far
  inside the 1e-9 mass tolerance) so configurations hit advertised
  values exactly;
- participant values at or below DUST_TOL after a stage are set to 0
  (float-cancellation residue; genuine mass that small is sacrificed,
  which stays far below the mass tolerance);
- pair selection is "two largest, ties by lower id" where the
  construction's law requires it (threshold phase) and "two lowest ids"
  in the interchangeable internal cascades; fixation stages pick the
  largest component (ties by lower id) as driver with everything else
  tied proportionally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from contestlab.analytic import ThresholdPair
from contestlab.engine import (
    ACTIVE,
    Component,
    Configuration,
    InternalConsistencyError,
    StageSpec,
    make_component,
)

__all__ = [
    "SNAP_TOL",
    "DUST_TOL",
    "ConstructionProgram",
    "SmallSpreadState",
    "survivor_program",
    "survivor_zero_prefix_program",
    "sequential_program",
    "small_spread_program",
    "embed_prefix_program",
    "refinement_chain",
    "small_spread_checkpoint",
    "sequential_profile",
]

SNAP_TOL = 1e-12
DUST_TOL = 1e-12


# ---------------------------------------------------------------------------
# program container


@dataclass(frozen=True)
class ConstructionProgram:
    """A compiled construction: kind, parameters, and derived arrays."""

    kind: str
    pair: ThresholdPair
    initial_values: tuple[float, ...]
    params: Mapping[str, object]
    parents: tuple[int, ...] | None = None

    def initial_config(self, pair: ThresholdPair) -> Configuration:
        self._check_pair(pair)
        comps = [
            make_component(i, v, pair, None if self.parents is None else self.parents[i])
            for i, v in enumerate(self.initial_values)
        ]
        return Configuration(comps, total=1.0)

    def stages(
        self, config: Configuration, pair: ThresholdPair
    ) -> Iterator[StageSpec]:
        self._check_pair(pair)
        gen = _POLICIES[self.kind]
        return gen(self, config, pair)

    def _check_pair(self, pair: ThresholdPair) -> None:
        if (pair.a, pair.b) != (self.pair.a, self.pair.b):
            raise ValueError(
                f"program was compiled for pair ({self.pair.a}, {self.pair.b}), "
                f"got ({pair.a}, {pair.b})"
            )


def _validate_distribution(p: Sequence[float]) -> tuple[float, ...]:
    vals = tuple(float(v) for v in p)
    if not vals:
        raise ValueError("empty initial distribution")
    if any(v <= 0.0 for v in vals):
        raise ValueError("initial distribution must have strictly positive atoms")
    if abs(sum(vals) - 1.0) > 1e-9:
        raise ValueError(f"initial distribution sums to {sum(vals)!r}, not 1")
    return vals


# ---------------------------------------------------------------------------
# shared stage builders (the kernel mirrors of these live in _kernels)


def _reflection_spec(
    driver: Component,
    partner: Component,
    lo: float,
    hi: float,
    rules: dict[float, frozenset[int]],
) -> StageSpec:
    s = driver.value + partner.value
    return StageSpec(
        driver_id=driver.id,
        tied={partner.id: (s, -1.0)},
        stop_levels=(lo, hi),
        freeze_rules=rules,
    )


def _add_rule(rules: dict[float, set[int]], level: float, cid: int) -> None:
    for existing in rules:
        if abs(existing - level) <= SNAP_TOL:
            rules[existing].add(cid)
            return
    rules[level] = {cid}


def _finalize_rules(rules: dict[float, set[int]]) -> dict[float, frozenset[int]]:
    return {lv: frozenset(ids) for lv, ids in rules.items()}


def _snap(comp: Component, target: float) -> None:
    if abs(comp.value - target) <= SNAP_TOL:
        comp.value = target


def _dust_kill(*comps: Component) -> None:
    for c in comps:
        if 0.0 < c.value <= DUST_TOL:
            c.value = 0.0


def _two_largest(comps: list[Component]) -> tuple[Component, Component]:
    ordered = sorted(comps, key=lambda c: (-c.value, c.id))
    return ordered[0], ordered[1]


def _two_lowest_ids(comps: list[Component]) -> tuple[Component, Component]:
    ordered = sorted(comps, key=lambda c: c.id)
    return ordered[0], ordered[1]


def _freeze_or_merge_round(
    d: Component, q: Component, target: float
) -> tuple[StageSpec, float]:
    """One cascade round: freeze one of the pair at `target`, or merge.

    If the pair's mass exceeds the target the stage walls are
    (s - target, target) and whichever component reaches the target is
    frozen there; otherwise the walls are (0, s) and one of the pair
    dies. Returns the StageSpec and the pair mass.
    """
    s = d.value + q.value
    rules: dict[float, set[int]] = {}
    if s > target:
        lo, hi = s - target, target
        _add_rule(rules, hi, d.id)
        _add_rule(rules, lo, q.id)
    else:
        lo, hi = 0.0, s
    return _reflection_spec(d, q, lo, hi, _finalize_rules(rules)), s


def _pair_off_stages(
    config: Configuration, pair: ThresholdPair
) -> Iterator[StageSpec]:
    """Resolve survivors two at a time with reflection walks to {0, s}.

    The two smallest live components are coupled so their sum s is
    conserved and one of them ends with all of it. Ranked values then
    evolve deterministically, so crossing counts booked in different
    stages are decoupled and the pair's counts are anticorrelated,
    keeping the total downcrossing variance near the sum of the fixed
    per-component marginals.
    """
    while True:
        alive = [c for c in config.components if c.value > DUST_TOL]
        if len(alive) <= 1:
            return
        for c in alive:
            c.frozen = False
        alive.sort(key=lambda c: (c.value, c.id))
        d, q = alive[0], alive[1]
        yield _reflection_spec(d, q, 0.0, d.value + q.value, {})
        _dust_kill(d, q)


def _fixation_stages(
    config: Configuration, pair: ThresholdPair
) -> Iterator[StageSpec]:
    """Largest-driver proportional stages until one component holds 1."""
    while True:
        alive = [c for c in config.components if c.value > DUST_TOL]
        for c in alive:
            c.frozen = False
        if len(alive) <= 1:
            return
        alive.sort(key=lambda c: (-c.value, c.id))
        driver = alive[0]
        xd = driver.value
        tied = {}
        for c in sorted(alive[1:], key=lambda c: c.id):
            c0 = c.value / (1.0 - xd)
            tied[c.id] = (c0, -c0)
        yield StageSpec(driver.id, tied, (0.0, 1.0), {})
        for c in alive:
            _dust_kill(c)


# ---------------------------------------------------------------------------
# survivor


def survivor_program(
    p: Sequence[float] | int, b: float, a: float
) -> ConstructionProgram:
    """Freeze components at b pairwise until the mass runs out.

    p may be an explicit initial distribution or an integer n0 meaning n0
    equal components. Requires max p_i <= b. The count of components
    reaching b is ⌊1/b⌋ plus a Bernoulli(r/b) for the residual r.
    """
    pair = ThresholdPair(a, b)
    if isinstance(p, int):
        if p < 2:
            raise ValueError("need at least two components")
        vals = tuple(1.0 / p for _ in range(p))
    else:
        vals = _validate_distribution(p)
    if max(vals) > b + SNAP_TOL:
        raise ValueError(f"max initial value {max(vals)} exceeds b={b}")
    return ConstructionProgram(
        kind="survivor", pair=pair, initial_values=vals, params={}
    )


def _survivor_threshold_phase(
    config: Configuration, pair: ThresholdPair
) -> Iterator[StageSpec]:
    """Reflection-couple the two largest below b; freeze arrivals at b."""
    b = pair.b
    while True:
        elig = [
            c
            for c in config.components
            if not c.frozen and DUST_TOL < c.value < b - SNAP_TOL
        ]
        if len(elig) < 2:
            return
        d, q = _two_largest(elig)
        s = d.value + q.value
        rules: dict[float, set[int]] = {}
        if s >= b:
            hi = b
            _add_rule(rules, b, d.id)
        else:
            hi = s
        lo = s - b if s - b > 0.0 else 0.0
        if lo > 0.0:
            _add_rule(rules, lo, q.id)
        yield _reflection_spec(d, q, lo, hi, _finalize_rules(rules))
        if q.frozen:
            _snap(q, b)
        _dust_kill(d, q)


def _survivor_residual_phase(
    config: Configuration, pair: ThresholdPair
) -> Iterator[StageSpec]:
    """Let the leftover below b reach b (prob r/b) or die, against a frozen one."""
    b = pair.b
    residual = [
        c
        for c in config.components
        if not c.frozen and DUST_TOL < c.value < b - SNAP_TOL
    ]
    if not residual:
        return
    (r_comp,) = residual
    at_b = [c for c in config.components if abs(c.value - b) <= SNAP_TOL]
    if not at_b:
        raise InternalConsistencyError("no component at b after threshold phase")
    partner = min(at_b, key=lambda c: c.id)
    partner.frozen = False
    rules: dict[float, set[int]] = {}
    _add_rule(rules, b, r_comp.id)
    yield _reflection_spec(r_comp, partner, 0.0, b, _finalize_rules(rules))
    _dust_kill(r_comp, partner)


def _survivor_stages(
    program: ConstructionProgram, config: Configuration, pair: ThresholdPair
) -> Iterator[StageSpec]:
    yield from _survivor_threshold_phase(config, pair)
    yield from _survivor_residual_phase(config, pair)
    yield from _fixation_stages(config, pair)


# ---------------------------------------------------------------------------
# survivor with zero-mass prefix


def survivor_zero_prefix_program(M0: int, b: float, a: float) -> ConstructionProgram:
    """Cascade M0 equal components down to ⌈1/b⌉, then behave as survivor.

    Stage m turns m components at exactly 1/m into m-1 at exactly
    1/(m-1), eliminating one component; mass conservation forces this
    outcome for any pairing order.
    """
    pair = ThresholdPair(a, b)
    if not isinstance(M0, int) or M0 < 2:
        raise ValueError("M0 must be an integer >= 2")
    if 1.0 / M0 > b + SNAP_TOL:
        raise ValueError(f"1/M0 = {1.0 / M0} exceeds b={b}")
    vals = tuple(1.0 / M0 for _ in range(M0))
    m_star = target_count(b)
    return ConstructionProgram(
        kind="survivor_zero_prefix",
        pair=pair,
        initial_values=vals,
        params={"M0": M0, "m_star": m_star},
    )


def target_count(b: float) -> int:
    """⌈1/b⌉ computed stably against float noise in 1/b."""
    return int(math.ceil(1.0 / b - 1e-12))


def _prefix_cascade(
    config: Configuration, m_from: int, m_to: int
) -> Iterator[StageSpec]:
    """Stages m_from -> m_from-1 -> ... -> m_to, freezing at 1/(m-1)."""
    m = m_from
    while m > m_to:
        target = 1.0 / (m - 1)
        while True:
            members = [
                c for c in config.components if not c.frozen and c.value > DUST_TOL
            ]
            # a member already at the target cannot walk: freeze in place
            pre = [c for c in members if abs(c.value - target) <= SNAP_TOL]
            if pre:
                comp = min(pre, key=lambda c: c.id)
                comp.value = target
                comp.frozen = True
                continue
            if len(members) < 2:
                break
            d, q = _two_lowest_ids(members)
            spec, _ = _freeze_or_merge_round(d, q, target)
            yield spec
            if d.frozen:
                _snap(d, target)
            if q.frozen:
                _snap(q, target)
            _dust_kill(d, q)
        leftovers = [
            c for c in config.components if not c.frozen and c.value > DUST_TOL
        ]
        if leftovers:
            raise InternalConsistencyError(
                f"cascade stage to 1/{m - 1} left an unfrozen component"
            )
        for c in config.components:
            c.frozen = False
        m -= 1


def _zero_prefix_stages(
    program: ConstructionProgram, config: Configuration, pair: ThresholdPair
) -> Iterator[StageSpec]:
    m0 = int(program.params["M0"])
    m_star = int(program.params["m_star"])
    yield from _prefix_cascade(config, m0, m_star)
    yield from _survivor_threshold_phase(config, pair)
    yield from _survivor_residual_phase(config, pair)
    yield from _fixation_stages(config, pair)


# ---------------------------------------------------------------------------
# sequential


def sequential_profile(b0: float) -> tuple[np.ndarray, np.ndarray]:
    """Geometric initial profile and the tail-remainder table.

    prof[t] = b0 (1-b0)^t; the profile is truncated once the remaining
    tail mass drops to 1e-12, and the final atom absorbs the remainder.
    tail[j] = (1-b0)^(n-1-j) is the value of that final atom once the
    first j components have died.
    """
    q = 1.0 - b0
    n = 2
    while q ** (n - 1) > 1e-12:
        n += 1
    t = np.arange(n, dtype=np.float64)
    prof = b0 * q**t
    tail = q ** (n - 1 - t)
    return prof, tail


def sequential_program(b0: float, b: float, a: float) -> ConstructionProgram:
    """Examine components one at a time from exactly b0.

    Component j is run as driver on {0, 1} with all later components
    tied proportionally to (1 - driver); when it dies the next is
    examined. Every examined driver starts at exactly b0, so the count
    reaching b is Geometric(b) and the total downcrossing count D
    satisfies D + 1 ~ Geometric((b-a)/(1-a)).
    """
    pair = ThresholdPair(a, b)
    if not 0.0 < b0 <= b:
        raise ValueError(f"need 0 < b0 <= b, got b0={b0}, b={b}")
    prof, tail = sequential_profile(b0)
    n = prof.shape[0]
    vals = tuple(prof[:-1]) + (float(tail[0]),)
    return ConstructionProgram(
        kind="sequential",
        pair=pair,
        initial_values=vals,
        params={"b0": b0, "prof": prof, "tail": tail, "n": n},
    )


def _sequential_stages(
    program: ConstructionProgram, config: Configuration, pair: ThresholdPair
) -> Iterator[StageSpec]:
    b0 = float(program.params["b0"])
    prof: np.ndarray = program.params["prof"]
    tail: np.ndarray = program.params["tail"]
    n = int(program.params["n"])
    scale = 1.0 - b0
    for j in range(n):
        driver = config.component(j)
        tied = {}
        for i in range(j + 1, n):
            c0 = (prof[i - j] if i < n - 1 else tail[j]) / scale
            tied[i] = (float(c0), float(-c0))
        yield StageSpec(j, tied, (0.0, 1.0), _finalize_rules({}))
        if driver.value >= 1.0 - SNAP_TOL:
            return
        # driver died; re-canonicalize survivors onto the exact profile
        for i in range(j + 1, n):
            comp = config.component(i)
            canonical = float(prof[i - j - 1] if i < n - 1 else tail[j + 1])
            if abs(comp.value - canonical) <= SNAP_TOL:
                comp.value = canonical
    raise InternalConsistencyError("sequential program exhausted its components")


# ---------------------------------------------------------------------------
# small spread


@dataclass(frozen=True)
class SmallSpreadState:
    """Band census, ranked values, and the machine's downcrossing total."""

    n_zero: int
    n_low: int
    n_mid_active: int
    n_mid_inactive: int
    n_at_b: int
    n_high: int
    ranked_values: tuple[float, ...]
    machine_downcrossings: int

    def in_band_count(self) -> int:
        """Components strictly inside (0, b]."""
        return self.n_low + self.n_mid_active + self.n_mid_inactive + self.n_at_b


def small_spread_program(
    p0: Sequence[float], a: float, b: float
) -> ConstructionProgram:
    """Run the four-case stage machine, then pair off the survivors.

    The machine repeatedly applies the first matching case (enough
    components at b / active in (a,b) / non-active in (a,b) / in (0,a])
    and stops when none matches, leaving at most one component above b
    and at most k_alpha in (0, b]. Its ranked evolution, and hence its
    downcrossing total, is deterministic. The few survivors are then
    resolved pairwise by reflection, which keeps the downcrossing
    variance bounded as the thresholds shrink at fixed a/b.
    """
    pair = ThresholdPair(a, b)
    vals = _validate_distribution(p0)
    if max(vals) >= b - SNAP_TOL:
        raise ValueError(f"all atoms must lie strictly inside (0, b={b})")
    checkpoint = small_spread_checkpoint(vals, a, b)
    return ConstructionProgram(
        kind="small_spread",
        pair=pair,
        initial_values=vals,
        params={"checkpoint": checkpoint},
    )


def _band(v: float, active: bool, a: float, b: float) -> str:
    if v <= DUST_TOL:
        return "zero"
    if v <= a + SNAP_TOL:
        return "low"
    if v < b - SNAP_TOL:
        return "mid_active" if active else "mid_inactive"
    if v <= b + SNAP_TOL:
        return "at_b"
    return "high"


def _census(values_active: list[tuple[float, bool]], a: float, b: float):
    counts = {
        "zero": 0,
        "low": 0,
        "mid_active": 0,
        "mid_inactive": 0,
        "at_b": 0,
        "high": 0,
    }
    for v, act in values_active:
        counts[_band(v, act, a, b)] += 1
    return counts


def _split_on_walls(total: float, n: int, a: float, b: float):
    """Unique (k_a, k_b, leftover) with k_a at a, k_b at b, leftover in [a, b].

    A leftover landing within tolerance of a wall is classified as
    stopped at that wall (returned with leftover None).
    """
    for k_b in range(n):
        k_a = n - 1 - k_b
        r = total - k_a * a - k_b * b
        if a - SNAP_TOL <= r <= b + SNAP_TOL:
            if abs(r - b) <= SNAP_TOL:
                return k_a, k_b + 1, None
            if abs(r - a) <= SNAP_TOL:
                return k_a + 1, k_b, None
            return k_a, k_b, r
    raise InternalConsistencyError("no consistent wall split exists")


def _split_zero_or_b(total: float, b: float):
    """(k at b, leftover in (0, b) or None) for a pool collapsing to {0, b}."""
    k = int(math.floor(total / b + SNAP_TOL))
    r = total - k * b
    if r <= DUST_TOL:
        return k, None
    return k, r


def small_spread_checkpoint(
    p0: Sequence[float], a: float, b: float
) -> SmallSpreadState:
    """Deterministic machine outcome computed without any randomness.

    Evolves the ranked (value, active) multiset through the four-case
    machine using mass conservation alone; the pairwise stage dynamics
    realize exactly this outcome for every seed.
    """
    pair = ThresholdPair(a, b)
    f1 = math.floor(1.0 / (1.0 - a / b))
    state: list[tuple[float, bool]] = [(float(v), False) for v in p0]
    d_total = 0

    def take(predicate):
        nonlocal state
        pool = [sv for sv in state if predicate(*sv)]
        state = [sv for sv in state if not predicate(*sv)]
        return pool

    while True:
        c = _census(state, a, b)
        if c["at_b"] >= f1 + 1:
            had_high = c["high"] >= 1
            pool = take(lambda v, act: _band(v, act, a, b) == "at_b")
            n = len(pool)
            mass = sum(v for v, _ in pool)
            d_total += n - 1
            state.extend([(a, False)] * (n - 1))
            state.append((mass - (n - 1) * a, True))
            pool2 = take(lambda v, act: abs(v - a) <= SNAP_TOL)
            if pool2:
                n2 = len(pool2)
                mass2 = sum(v for v, _ in pool2)
                k, r = _split_zero_or_b(mass2, b)
                state.extend([(b, True)] * k)
                if r is not None:
                    # leftover keeps its prior (non-active) status
                    state.append((r, False))
                state.extend([(0.0, False)] * (n2 - k - (0 if r is None else 1)))
            if had_high:
                pool3 = take(lambda v, act: v > b + SNAP_TOL)
                n3 = len(pool3)
                mass3 = sum(v for v, _ in pool3)
                state.extend([(b, True)] * (n3 - 1))
                state.append((mass3 - (n3 - 1) * b, True))
        elif c["mid_active"] >= 2 * f1 + 1:
            pool = take(lambda v, act: _band(v, act, a, b) == "mid_active")
            n = len(pool)
            mass = sum(v for v, _ in pool)
            k_a, k_b, r = _split_on_walls(mass, n, a, b)
            d_total += k_a
            state.extend([(a, False)] * k_a)
            state.extend([(b, True)] * k_b)
            if r is not None:
                state.append((r, True))
        elif c["mid_inactive"] >= 2 * f1 + 1:
            pool = take(lambda v, act: _band(v, act, a, b) == "mid_inactive")
            n = len(pool)
            mass = sum(v for v, _ in pool)
            k_a, k_b, r = _split_on_walls(mass, n, a, b)
            state.extend([(a, False)] * k_a)
            state.extend([(b, True)] * k_b)
            if r is not None:
                state.append((r, False))
        elif c["low"] >= f1 and c["low"] >= 2:
            # a singleton pool cannot evolve (its mass is conserved), so
            # the low-band case needs two members to be executable
            pool = take(lambda v, act: _band(v, act, a, b) == "low")
            n = len(pool)
            mass = sum(v for v, _ in pool)
            k, r = _split_zero_or_b(mass, b)
            state.extend([(b, True)] * k)
            if r is not None:
                state.append((r, False))
            state.extend([(0.0, False)] * (n - k - (0 if r is None else 1)))
        else:
            break

    c = _census(state, a, b)
    ranked = tuple(sorted((v for v, _ in state), reverse=True))
    return SmallSpreadState(
        n_zero=c["zero"],
        n_low=c["low"],
        n_mid_active=c["mid_active"],
        n_mid_inactive=c["mid_inactive"],
        n_at_b=c["at_b"],
        n_high=c["high"],
        ranked_values=ranked,
        machine_downcrossings=d_total,
    )


def _pool_rounds_zero_or_b(
    config: Configuration, pool_ids: list[int], b: float
) -> Iterator[StageSpec]:
    """Pairwise rounds sending a fixed pool to {0, b}, freezing at b."""
    while True:
        members = [
            config.component(i)
            for i in pool_ids
            if not config.component(i).frozen and config.component(i).value > DUST_TOL
        ]
        # a member already at b cannot walk: freeze in place
        pre = [c for c in members if abs(c.value - b) <= SNAP_TOL]
        if pre:
            comp = min(pre, key=lambda c: c.id)
            comp.value = b
            comp.frozen = True
            continue
        if len(members) < 2:
            return
        d, q = _two_lowest_ids(members)
        s = d.value + q.value
        rules: dict[float, set[int]] = {}
        if s >= b:
            hi = b
            _add_rule(rules, b, d.id)
        else:
            hi = s
        lo = s - b if s - b > 0.0 else 0.0
        if lo > 0.0:
            _add_rule(rules, lo, q.id)
        yield _reflection_spec(d, q, lo, hi, _finalize_rules(rules))
        if d.frozen:
            _snap(d, b)
        if q.frozen:
            _snap(q, b)
        _dust_kill(d, q)


def _pool_rounds_walls(
    config: Configuration, pool_ids: list[int], lo_wall: float, hi_wall: float
) -> Iterator[StageSpec]:
    """Pairwise rounds freezing pool members at lo_wall or hi_wall."""
    while True:
        members = [
            config.component(i)
            for i in pool_ids
            if not config.component(i).frozen and config.component(i).value > DUST_TOL
        ]
        if len(members) < 2:
            return
        d, q = _two_lowest_ids(members)
        s = d.value + q.value
        lo = lo_wall if lo_wall >= s - hi_wall else s - hi_wall
        hi = hi_wall if hi_wall <= s - lo_wall else s - lo_wall
        rules: dict[float, set[int]] = {}
        if abs(lo - lo_wall) <= SNAP_TOL:
            _add_rule(rules, lo, d.id)
        if abs(lo - (s - hi_wall)) <= SNAP_TOL:
            _add_rule(rules, lo, q.id)
        if abs(hi - hi_wall) <= SNAP_TOL:
            _add_rule(rules, hi, d.id)
        if abs(hi - (s - lo_wall)) <= SNAP_TOL:
            _add_rule(rules, hi, q.id)
        yield _reflection_spec(d, q, lo, hi, _finalize_rules(rules))
        for c in (d, q):
            if c.frozen:
                # frozen at whichever wall its value is nearest
                tgt = lo_wall if abs(c.value - lo_wall) <= abs(c.value - hi_wall) else hi_wall
                _snap(c, tgt)
        _dust_kill(d, q)


def _small_spread_stages(
    program: ConstructionProgram, config: Configuration, pair: ThresholdPair
) -> Iterator[StageSpec]:
    a, b = pair.a, pair.b
    f1 = math.floor(1.0 / (1.0 - a / b))

    def unfreeze_all():
        for c in config.components:
            c.frozen = False

    def ids_where(pred):
        return [c.id for c in config.components if pred(c)]

    def band_of(c: Component) -> str:
        return _band(c.value, c.monitor.status == ACTIVE, a, b)

    while True:
        counts = {
            "zero": 0,
            "low": 0,
            "mid_active": 0,
            "mid_inactive": 0,
            "at_b": 0,
            "high": 0,
        }
        for c in config.components:
            counts[band_of(c)] += 1
        if counts["at_b"] >= f1 + 1:
            had_high = counts["high"] >= 1
            pool = ids_where(lambda c: band_of(c) == "at_b")
            yield from _pool_rounds_walls(config, pool, a, 1.0)
            unfreeze_all()
            pool2 = ids_where(lambda c: abs(c.value - a) <= SNAP_TOL)
            yield from _pool_rounds_zero_or_b(config, pool2, b)
            unfreeze_all()
            if had_high:
                pool3 = ids_where(lambda c: c.value > b + SNAP_TOL)
                yield from _pool_rounds_walls(config, pool3, b, 1.0)
                unfreeze_all()
        elif counts["mid_active"] >= 2 * f1 + 1:
            pool = ids_where(lambda c: band_of(c) == "mid_active")
            yield from _pool_rounds_walls(config, pool, a, b)
            unfreeze_all()
        elif counts["mid_inactive"] >= 2 * f1 + 1:
            pool = ids_where(lambda c: band_of(c) == "mid_inactive")
            yield from _pool_rounds_walls(config, pool, a, b)
            unfreeze_all()
        elif counts["low"] >= f1 and counts["low"] >= 2:
            pool = ids_where(lambda c: band_of(c) == "low")
            yield from _pool_rounds_zero_or_b(config, pool, b)
            unfreeze_all()
        else:
            break

    checkpoint: SmallSpreadState = program.params["checkpoint"]
    machine_d = sum(c.monitor.downcrossings for c in config.components)
    ranked = tuple(
        sorted((c.value for c in config.components if c.value > DUST_TOL), reverse=True)
    )
    expect_ranked = tuple(v for v in checkpoint.ranked_values if v > DUST_TOL)
    if machine_d != checkpoint.machine_downcrossings or len(ranked) != len(
        expect_ranked
    ):
        raise InternalConsistencyError(
            "stage machine diverged from its deterministic checkpoint: "
            f"d={machine_d} vs {checkpoint.machine_downcrossings}"
        )
    for got, want in zip(ranked, expect_ranked):
        if abs(got - want) > 1e-9:
            raise InternalConsistencyError(
                f"ranked value {got!r} differs from checkpoint {want!r}"
            )
    yield from _pair_off_stages(config, pair)


# ---------------------------------------------------------------------------
# dyadic embedding prefix


def refinement_chain(p: Sequence[float], k: int) -> list[tuple[float, ...]]:
    """p = p^0, p^1, ..., p^k; level m splits atoms above 2^-m dyadically.

    An atom p_i > 2^-m becomes 2^j equal copies of p_i/2^j with j
    minimal such that p_i/2^j <= 2^-m; scaling by powers of two is exact
    in floating point. Atom order: descendants of p_0 first, then p_1,
    and so on.
    """
    base = tuple(float(v) for v in p)
    chain = [base]
    for m in range(1, k + 1):
        cap = 2.0 ** (-m)
        level: list[float] = []
        for v in base:
            j = 0
            while v * 0.5**j > cap:
                j += 1
            level.extend([v * 0.5**j] * (2**j))
        chain.append(tuple(level))
    return chain


def _multiset_diff(xs: Sequence[float], ys: Sequence[float]) -> list[float]:
    """Multiset xs minus ys using exact float identity."""
    remaining = list(ys)
    out = []
    for x in xs:
        if x in remaining:
            remaining.remove(x)
        else:
            out.append(x)
    return out


def embed_prefix_program(
    p: Sequence[float], k: int, b: float, a: float
) -> ConstructionProgram:
    """Start from the dyadic refinement p^k and merge back down to p.

    Each merge phase m reassembles the atoms of p^m into p^(m-1):
    components are pairwise coupled and frozen on reaching the smallest
    outstanding target value; mass conservation makes every intermediate
    ranked configuration exactly equal to the precomputed chain.
    """
    pair = ThresholdPair(a, b)
    vals = _validate_distribution(p)
    if any(vals[i] < vals[i + 1] for i in range(len(vals) - 1)):
        raise ValueError("initial distribution must be ranked (non-increasing)")
    if not isinstance(k, int) or k < 0:
        raise ValueError("refinement depth k must be a nonnegative integer")
    chain = refinement_chain(vals, k)
    parents = []
    cap = 2.0 ** (-k)
    for i, v in enumerate(vals):
        j = 0
        while v * 0.5**j > cap:
            j += 1
        parents.extend([i] * (2**j))
    phases = []
    for m in range(k, 0, -1):
        need = _multiset_diff(chain[m], chain[m - 1])
        targets = sorted(_multiset_diff(chain[m - 1], chain[m]))
        phases.append((need, targets))
    return ConstructionProgram(
        kind="embed_prefix",
        pair=pair,
        initial_values=chain[k],
        params={"k": k, "chain": chain, "phases": phases},
        parents=tuple(parents),
    )


def _embed_merge_phase(
    config: Configuration, need: list[float], targets: list[float]
) -> Iterator[StageSpec]:
    """Merge the `need` components into the ascending `targets`."""
    members: list[int] = []
    remaining = list(need)
    for c in config.components:
        if c.value in remaining:
            remaining.remove(c.value)
            members.append(c.id)
    if remaining:
        raise InternalConsistencyError("phase start does not match the chain")
    ptr = 0
    while ptr < len(targets):
        target = targets[ptr]
        live = [
            config.component(i)
            for i in members
            if not config.component(i).frozen
            and config.component(i).value > DUST_TOL
        ]
        pre = [c for c in live if abs(c.value - target) <= SNAP_TOL]
        if pre:
            comp = min(pre, key=lambda c: c.id)
            comp.value = target
            comp.frozen = True
            ptr += 1
            continue
        if len(live) < 2:
            raise InternalConsistencyError(
                "merge phase stalled with targets outstanding"
            )
        d, q = _two_lowest_ids(live)
        spec, _ = _freeze_or_merge_round(d, q, target)
        yield spec
        froze = d.frozen or q.frozen
        if d.frozen:
            _snap(d, target)
        if q.frozen:
            _snap(q, target)
        _dust_kill(d, q)
        if froze:
            ptr += 1
    live = [
        config.component(i)
        for i in members
        if not config.component(i).frozen and config.component(i).value > DUST_TOL
    ]
    if live:
        raise InternalConsistencyError("merge phase left unassembled mass")
    for c in config.components:
        c.frozen = False


def _embed_stages(
    program: ConstructionProgram, config: Configuration, pair: ThresholdPair
) -> Iterator[StageSpec]:
    chain: list[tuple[float, ...]] = program.params["chain"]
    phases = program.params["phases"]
    for idx, (need, targets) in enumerate(phases):
        yield from _embed_merge_phase(config, list(need), list(targets))
        level = chain[len(phases) - 1 - idx]
        got = sorted((c.value for c in config.components if c.value > DUST_TOL), reverse=True)
        want = sorted(level, reverse=True)
        if got != want:
            raise InternalConsistencyError(
                f"configuration after merge phase is {got}, expected {want}"
            )
    yield from _fixation_stages(config, pair)


_POLICIES = {
    "survivor": _survivor_stages,
    "survivor_zero_prefix": _zero_prefix_stages,
    "sequential": _sequential_stages,
    "small_spread": _small_spread_stages,
    "embed_prefix": _embed_stages,
}

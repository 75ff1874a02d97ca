"""Exact time-free crossing engine.

A system of continuous martingales in [0, 1] is simulated as an embedded
chain on a finite level grid: between adjacent grid levels, any continuous
martingale moves up or down with the gambler's-ruin probabilities, so a
walk that visits every level at which a crossing monitor or a freeze rule
could fire reproduces the joint law of (crossing counts, winner) with zero
discretization bias. Time is abstracted away entirely: the engine samples
the crossing record, not a time-indexed path.

A stage moves one driver component; other participating components are
tied to the driver through affine maps value = c0 + c1 * driver. The
coefficient sums are constrained so total mass is conserved exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Iterator, Mapping, Protocol, Sequence

from contestlab.analytic import ThresholdPair

__all__ = [
    "LEVEL_TOL",
    "MASS_TOL",
    "DEFAULT_MOVE_BUDGET",
    "PRE_B",
    "ACTIVE",
    "INACTIVE",
    "MonitorState",
    "Component",
    "Configuration",
    "StageSpec",
    "RunRecord",
    "EngineError",
    "InternalConsistencyError",
    "RunawayError",
    "MoveBudget",
    "TraceFn",
    "gambler_step",
    "build_stage_grid",
    "run_stage",
    "run_program",
    "make_component",
]

LEVEL_TOL = 1e-12
MASS_TOL = 1e-9
DEFAULT_MOVE_BUDGET = 10_000_000

PRE_B = "pre_b"
ACTIVE = "active"
INACTIVE = "inactive"

# Trace callback: (stage_index, component_id, value, monitor_status)
TraceFn = Callable[[int, int, float, str], None]


class EngineError(RuntimeError):
    """Base class for engine failures."""


class InternalConsistencyError(EngineError):
    """A monitor threshold was skipped between grid levels, or an invariant broke."""


class RunawayError(EngineError):
    """The elementary-move budget was exhausted before fixation."""


@dataclass
class MonitorState:
    """Crossing monitor for one component.

    status is pre_b until the component first reaches b, then alternates
    active (counted as potentially mid-downcrossing) and inactive: an
    active component reaching a increments downcrossings and goes
    inactive; reaching b again reactivates it.
    """

    status: str = PRE_B
    reached_b: bool = False
    downcrossings: int = 0
    sup_value: float = 0.0

    def copy(self) -> "MonitorState":
        return MonitorState(
            self.status, self.reached_b, self.downcrossings, self.sup_value
        )

    def touch(self, value: float, pair: ThresholdPair) -> None:
        """Record an arrival of the component at `value`.

        Idempotent between threshold visits: re-touching the same band
        changes nothing, so coincident grid levels are safe.
        """
        if value > self.sup_value:
            self.sup_value = value
        if value >= pair.b - LEVEL_TOL:
            if not self.reached_b:
                self.reached_b = True
            if self.status != ACTIVE:
                self.status = ACTIVE
        elif abs(value - pair.a) <= LEVEL_TOL or value < pair.a:
            if self.status == ACTIVE:
                self.downcrossings += 1
                self.status = INACTIVE


@dataclass
class Component:
    """One contestant's win-probability process."""

    id: int
    value: float
    frozen: bool = False
    monitor: MonitorState = field(default_factory=MonitorState)
    parent: int | None = None


def make_component(
    cid: int, value: float, pair: ThresholdPair, parent: int | None = None
) -> Component:
    """Create a component and apply the creation touch to its monitor."""
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"component value {value} outside [0, 1]")
    comp = Component(id=cid, value=value, parent=parent)
    comp.monitor.sup_value = value
    comp.monitor.touch(value, pair)
    return comp


@dataclass
class Configuration:
    """All components plus the conserved total mass (normally 1)."""

    components: list[Component]
    total: float = 1.0

    def __post_init__(self) -> None:
        self._by_id = {c.id: c for c in self.components}
        if len(self._by_id) != len(self.components):
            raise ValueError("duplicate component ids")

    def component(self, cid: int) -> Component:
        return self._by_id[cid]

    def add_component(self, comp: Component) -> None:
        if comp.id in self._by_id:
            raise ValueError(f"duplicate component id {comp.id}")
        self.components.append(comp)
        self._by_id[comp.id] = comp

    def mass(self) -> float:
        return sum(c.value for c in self.components)

    def validate(self) -> None:
        if abs(self.mass() - self.total) > MASS_TOL:
            raise InternalConsistencyError(
                f"mass {self.mass()!r} drifted from total {self.total!r}"
            )
        at_one = 0
        for c in self.components:
            if not (-LEVEL_TOL <= c.value <= 1.0 + LEVEL_TOL):
                raise InternalConsistencyError(
                    f"component {c.id} value {c.value!r} outside [0, 1]"
                )
            if c.value >= 1.0 - LEVEL_TOL:
                at_one += 1
        if at_one > 1:
            raise InternalConsistencyError("more than one component at value 1")


@dataclass(frozen=True)
class StageSpec:
    """One stage: a driver walking a level grid, others tied affinely.

    tied maps component id to (c0, c1) with value = c0 + c1 * driver.
    stop_levels bound the driver's reachable range; the walk halts on
    arrival at a level carrying a freeze rule or at a grid endpoint.
    freeze_rules maps a stop level to the ids frozen on arrival there.
    """

    driver_id: int
    tied: Mapping[int, tuple[float, float]]
    stop_levels: tuple[float, ...]
    freeze_rules: Mapping[float, frozenset[int]]

    def __post_init__(self) -> None:
        levels = self.stop_levels
        if len(levels) < 2:
            raise ValueError("need at least two stop levels")
        if any(levels[i] >= levels[i + 1] for i in range(len(levels) - 1)):
            raise ValueError("stop levels must be strictly sorted")
        if self.driver_id in self.tied:
            raise ValueError("driver cannot be tied to itself")


def gambler_step(rng, x: float, lower: float, upper: float) -> float:
    """One exact hitting step: returns upper w.p. (x-lower)/(upper-lower).

    Consumes exactly one uniform draw. Valid for lower <= x <= upper.
    """
    if not lower < upper:
        raise ValueError(f"degenerate interval [{lower}, {upper}]")
    if not (lower <= x <= upper):
        raise ValueError(f"start {x} outside [{lower}, {upper}]")
    p = (x - lower) / (upper - lower)
    return upper if rng.random() < p else lower


def _merge_levels(primary: Sequence[float], extra: Iterable[float]) -> list[float]:
    """Union of levels with near-duplicates (within LEVEL_TOL) dropped.

    Levels already in `primary` keep their exact float values; an `extra`
    level within tolerance of any kept level is discarded rather than
    perturbing it. Result is strictly sorted.
    """
    merged = sorted(primary)
    for lv in sorted(extra):
        if all(abs(lv - kept) > LEVEL_TOL for kept in merged):
            merged.append(lv)
    merged.sort()
    return merged


def build_stage_grid(spec: StageSpec, pair: ThresholdPair) -> StageSpec:
    """Insert every level at which a monitor could fire during the stage.

    Adds the thresholds a and b (driver's own crossing levels) and the
    driver-level preimages of a and b under each tied affine map, clipped
    to the driver's reachable range [min stop, max stop]. Constant tied
    maps (c1 = 0) contribute no preimage. Duplicates within LEVEL_TOL are
    merged; freeze-rule keys are canonicalized onto the merged levels.
    Idempotent.
    """
    lo = spec.stop_levels[0]
    hi = spec.stop_levels[-1]
    candidates = [pair.a, pair.b]
    for c0, c1 in spec.tied.values():
        if c1 == 0.0:
            continue
        candidates.append((pair.a - c0) / c1)
        candidates.append((pair.b - c0) / c1)
    inside = [v for v in candidates if lo - LEVEL_TOL <= v <= hi + LEVEL_TOL]
    merged = _merge_levels(spec.stop_levels, inside)

    def canon(level: float) -> float:
        for lv in merged:
            if abs(lv - level) <= LEVEL_TOL:
                return lv
        raise ValueError(f"freeze-rule level {level} not on the grid")

    rules = {canon(lv): frozenset(ids) for lv, ids in spec.freeze_rules.items()}
    return replace(spec, stop_levels=tuple(merged), freeze_rules=rules)


class _MoveMeter:
    """Shared elementary-move counter with a hard budget."""

    __slots__ = ("moves", "budget")

    def __init__(self, budget: int) -> None:
        self.moves = 0
        self.budget = budget

    def tick(self) -> None:
        self.moves += 1
        if self.moves > self.budget:
            raise RunawayError(f"move budget {self.budget} exhausted")


MoveBudget = _MoveMeter


def run_stage(
    config: Configuration,
    spec: StageSpec,
    pair: ThresholdPair,
    rng,
    *,
    meter: _MoveMeter | None = None,
    trace: TraceFn | None = None,
    stage_index: int = 0,
) -> Configuration:
    """Walk the driver until a freeze-rule level or a grid endpoint.

    After every elementary move the tied values are recomputed from their
    affine maps and every participating monitor is updated, so threshold
    hits at a and b are observed exactly. On arrival at a stop level the
    monitors fire before the freeze rule. Mutates config in place and
    returns it. Mass is conserved to within MASS_TOL every move.
    """
    if meter is None:
        meter = _MoveMeter(DEFAULT_MOVE_BUDGET)
    aug = build_stage_grid(spec, pair)
    driver = config.component(aug.driver_id)
    if driver.frozen:
        raise ValueError(f"driver {driver.id} is frozen")
    tied_comps = []
    c1_sum = 1.0
    for cid, (c0, c1) in aug.tied.items():
        comp = config.component(cid)
        if comp.frozen:
            raise ValueError(f"tied component {cid} is frozen")
        tied_comps.append((comp, c0, c1))
        c1_sum += c1
    # A stage either conserves mass (slopes sum to 0) or moves a lone
    # driver with nothing tied, in which case total follows the driver
    # (single-martingale diagnostics; programs only emit conserving stages).
    lone_driver = not tied_comps
    if not lone_driver and abs(c1_sum) > MASS_TOL:
        raise InternalConsistencyError(
            f"stage affine maps do not conserve mass (sum of slopes {c1_sum!r})"
        )

    grid = _merge_levels(aug.stop_levels, [driver.value])
    pos = min(range(len(grid)), key=lambda i: abs(grid[i] - driver.value))
    if abs(grid[pos] - driver.value) > LEVEL_TOL:
        raise InternalConsistencyError(
            f"driver value {driver.value!r} not on the stage grid"
        )
    rule_at = {}
    for lv, ids in aug.freeze_rules.items():
        for i, g in enumerate(grid):
            if abs(g - lv) <= LEVEL_TOL:
                rule_at[i] = ids
                break

    def is_stop(i: int) -> bool:
        return i == 0 or i == len(grid) - 1 or i in rule_at

    def crossed(prev: float, new: float, threshold: float) -> bool:
        if abs(new - threshold) <= LEVEL_TOL or abs(prev - threshold) <= LEVEL_TOL:
            return False
        return (prev - threshold) * (new - threshold) < 0.0

    while not is_stop(pos):
        meter.tick()
        lower, upper = grid[pos - 1], grid[pos + 1]
        x = grid[pos]
        nxt = gambler_step(rng, x, lower, upper)
        pos = pos + 1 if nxt == upper else pos - 1
        level = grid[pos]
        prev_driver = driver.value
        driver.value = level
        if crossed(prev_driver, level, pair.a) or crossed(prev_driver, level, pair.b):
            raise InternalConsistencyError(
                f"driver skipped a threshold moving {prev_driver} -> {level}"
            )
        driver.monitor.touch(level, pair)
        if trace is not None:
            trace(stage_index, driver.id, level, driver.monitor.status)
        for comp, c0, c1 in tied_comps:
            prev = comp.value
            new = c0 + c1 * level
            if crossed(prev, new, pair.a) or crossed(prev, new, pair.b):
                raise InternalConsistencyError(
                    f"tied component {comp.id} skipped a threshold "
                    f"moving {prev} -> {new}"
                )
            comp.value = new
            comp.monitor.touch(new, pair)
            if trace is not None:
                trace(stage_index, comp.id, new, comp.monitor.status)
        if lone_driver:
            config.total += level - prev_driver
        elif abs(config.mass() - config.total) > MASS_TOL:
            raise InternalConsistencyError("mass drifted beyond tolerance")

    for cid in rule_at.get(pos, ()):
        config.component(cid).frozen = True
    return config


@dataclass(frozen=True)
class RunRecord:
    """Outcome of one complete run to fixation."""

    n_b: int
    d_ab: int
    winner_id: int
    per_component: tuple[MonitorState, ...]
    stages_executed: int


class ConstructionProgramLike(Protocol):
    """What run_program needs from a compiled construction."""

    def initial_config(self, pair: ThresholdPair) -> Configuration: ...

    def stages(
        self, config: Configuration, pair: ThresholdPair
    ) -> Iterator[StageSpec]: ...


def _fixation_winner(config: Configuration) -> Component | None:
    """The single component holding all mass, if the run has fixated."""
    winner = None
    for c in config.components:
        if c.value > LEVEL_TOL:
            if abs(c.value - config.total) <= MASS_TOL:
                if winner is not None:
                    return None
                winner = c
            else:
                return None
    return winner


def run_program(
    program: ConstructionProgramLike,
    pair: ThresholdPair,
    rng,
    *,
    move_budget: int = DEFAULT_MOVE_BUDGET,
    trace: TraceFn | None = None,
) -> RunRecord:
    """Execute a compiled construction to fixation and collect its record.

    Stages come from the program's policy generator, which inspects the
    (mutated) configuration between stages. Raises RunawayError with a
    diagnostic if the elementary-move budget is exhausted.
    """
    config = program.initial_config(pair)
    config.validate()
    meter = _MoveMeter(move_budget)
    stages = 0
    try:
        for spec in program.stages(config, pair):
            run_stage(
                config, spec, pair, rng, meter=meter, trace=trace, stage_index=stages
            )
            stages += 1
    except RunawayError as exc:
        state = ", ".join(
            f"{c.id}:{c.value:.6g}{'*' if c.frozen else ''}" for c in config.components
        )
        raise RunawayError(
            f"{exc} after {stages} stages; configuration: [{state}]"
        ) from None
    config.validate()
    winner = _fixation_winner(config)
    if winner is None:
        raise InternalConsistencyError("program ended before fixation")
    n_b = sum(1 for c in config.components if c.monitor.reached_b)
    d_ab = sum(c.monitor.downcrossings for c in config.components)
    if n_b < 1 or not winner.monitor.reached_b:
        raise InternalConsistencyError("winner never reached b")
    snaps = tuple(c.monitor.copy() for c in config.components)
    return RunRecord(
        n_b=n_b,
        d_ab=d_ab,
        winner_id=winner.id,
        per_component=snaps,
        stages_executed=stages,
    )

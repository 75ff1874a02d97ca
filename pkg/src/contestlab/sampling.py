"""Seeded batch sampling over construction programs.

Two interchangeable backends produce identical results run for run:

- "reference": the readable engine (`run_program`), drawing uniforms one
  at a time from the run's generator;
- "kernel": the compiled replay in `_kernels`, consuming a pre-drawn
  uniform buffer from the same generator. Because a generator's batched
  draws are a prefix-stable stream, a run whose buffer runs out is
  simply retried with a longer buffer and replays identically.

Every run gets its own generator seeded by (master seed, run index), so
results do not depend on batch boundaries or worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from contestlab import _kernels as _K
from contestlab.analytic import ThresholdPair
from contestlab.constructions import DUST_TOL, ConstructionProgram
from contestlab.engine import (
    DEFAULT_MOVE_BUDGET,
    InternalConsistencyError,
    RunawayError,
    run_program,
)

__all__ = [
    "DEFAULT_BUFFER",
    "SampleBatch",
    "KernelRun",
    "run_rng",
    "kernel_run",
    "simulate_many",
]

DEFAULT_BUFFER = 4096


def run_rng(master_seed: int, run_index: int) -> np.random.Generator:
    """Independent per-run stream derived from (master seed, run index).

    Uses the spawn-key construction, so run_rng(s, i) is the i-th child
    of SeedSequence(s) and a batch of runs is the standard spawned
    family of parallel streams.
    """
    seq = np.random.SeedSequence(master_seed, spawn_key=(run_index,))
    return np.random.default_rng(seq)


@dataclass
class SampleBatch:
    """Per-run outcome arrays for a batch of seeded runs.

    machine_d is populated only for small-spread programs (the
    downcrossing total accumulated by the deterministic stage machine,
    before the continuation stages).
    """

    kind: str
    pair: ThresholdPair
    n_runs: int
    master_seed: int
    engine: str
    n_b: np.ndarray
    d_ab: np.ndarray
    winner: np.ndarray
    stages: np.ndarray
    machine_d: np.ndarray | None = None


@dataclass(frozen=True)
class KernelRun:
    """Full single-run record from the compiled backend."""

    n_b: int
    d_ab: int
    winner_id: int
    stages_executed: int
    moves: int
    draws_used: int
    machine_d: int | None
    sup: np.ndarray
    reached: np.ndarray
    downcrossings: np.ndarray


class _Compiled:
    """Marshaled program plus reusable per-run state and scratch arrays."""

    def __init__(self, program: ConstructionProgram):
        self.program = program
        self.a = program.pair.a
        self.b = program.pair.b
        init = np.asarray(program.initial_values, dtype=np.float64)
        self.init_vals = init
        n = init.shape[0]
        self.n = n
        # all per-run state lives in two flat arrays (see _kernels)
        self.F = np.zeros(_K.f_size(n), dtype=np.float64)
        self.I = np.zeros(_K.i_size(n), dtype=np.int64)
        self.vals = self.F[0:n]
        self.sup = self.F[n:2 * n]
        self.status = self.I[2 * n:3 * n]
        self.reached = self.I[3 * n:4 * n]
        self.frozen = self.I[4 * n:5 * n]
        self.downx = self.I[5 * n:6 * n]
        self.ctr = self.I[8 * n + 8:8 * n + 11]
        kind = program.kind
        if kind == "survivor_zero_prefix":
            self.m0 = int(program.params["M0"])
            self.m_star = int(program.params["m_star"])
        elif kind == "sequential":
            self.prof = np.ascontiguousarray(program.params["prof"], dtype=np.float64)
            self.tail = np.ascontiguousarray(program.params["tail"], dtype=np.float64)
            scale = 1.0 - float(program.params["b0"])
            self.ps = np.ascontiguousarray(self.prof / scale)
            self.ts = np.ascontiguousarray(self.tail / scale)
        elif kind == "small_spread":
            ck = program.params["checkpoint"]
            self.f1 = int(math.floor(1.0 / (1.0 - self.a / self.b)))
            self.ck_d = int(ck.machine_downcrossings)
            self.ck_ranked = np.asarray(
                [v for v in ck.ranked_values if v > DUST_TOL], dtype=np.float64
            )
        elif kind == "embed_prefix":
            chain = program.params["chain"]
            phases = program.params["phases"]
            needs = [np.asarray(nd, dtype=np.float64) for nd, _ in phases]
            tgts = [np.asarray(tg, dtype=np.float64) for _, tg in phases]
            lvls = [
                np.asarray(
                    sorted(chain[len(phases) - 1 - idx], reverse=True),
                    dtype=np.float64,
                )
                for idx in range(len(phases))
            ]
            self.need_flat, self.need_off = _flatten(needs)
            self.tgt_flat, self.tgt_off = _flatten(tgts)
            self.lvl_flat, self.lvl_off = _flatten(lvls)

    def run(self, u: np.ndarray, budget: int):
        """One compiled run; returns (code, winner, n_b, d_ab, machine_d)."""
        kind = self.program.kind
        a, b, F, I = self.a, self.b, self.F, self.I
        if kind == "survivor":
            return _K.k_survivor(self.init_vals, a, b, budget, u, F, I)
        if kind == "survivor_zero_prefix":
            return _K.k_zero_prefix(
                self.init_vals, self.m0, self.m_star, a, b, budget, u, F, I
            )
        if kind == "sequential":
            return _K.k_sequential(
                self.init_vals, self.prof, self.tail, self.ps, self.ts,
                a, b, budget, u, F, I,
            )
        if kind == "small_spread":
            return _K.k_small_spread(
                self.init_vals, self.f1, self.ck_d, self.ck_ranked,
                a, b, budget, u, F, I,
            )
        if kind == "embed_prefix":
            return _K.k_embed(
                self.init_vals, self.need_flat, self.need_off, self.tgt_flat,
                self.tgt_off, self.lvl_flat, self.lvl_off, a, b, budget,
                u, F, I,
            )
        raise ValueError(f"unknown construction kind {kind!r}")


def _flatten(arrays: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    off = np.zeros(len(arrays) + 1, dtype=np.int64)
    for i, arr in enumerate(arrays):
        off[i + 1] = off[i] + arr.shape[0]
    flat = np.concatenate(arrays) if arrays else np.empty(0, dtype=np.float64)
    return np.ascontiguousarray(flat, dtype=np.float64), off


def _kernel_attempt(comp: _Compiled, master_seed: int, run_index: int,
                    budget: int, bufsize: int):
    """Retry loop: regrow the uniform buffer until the run completes."""
    while True:
        rng = run_rng(master_seed, run_index)
        u = rng.random(bufsize)
        code, winner, nb, dab, md = comp.run(u, budget)
        if code == _K.EXHAUSTED:
            bufsize *= 2
            continue
        break
    if code == _K.BUDGET:
        raise RunawayError(
            f"move budget {budget} exhausted in run {run_index} "
            f"of {comp.program.kind}"
        )
    if code == _K.INTERNAL:
        raise InternalConsistencyError(
            f"kernel invariant violated in run {run_index} of {comp.program.kind}"
        )
    return winner, nb, dab, md, bufsize


def kernel_run(program: ConstructionProgram, *, master_seed: int = 42,
               run_index: int = 0, move_budget: int = DEFAULT_MOVE_BUDGET,
               buffer_size: int = DEFAULT_BUFFER) -> KernelRun:
    """One compiled run with full per-component detail (for inspection)."""
    comp = _Compiled(program)
    winner, nb, dab, md, _ = _kernel_attempt(
        comp, master_seed, run_index, move_budget, buffer_size
    )
    return KernelRun(
        n_b=int(nb),
        d_ab=int(dab),
        winner_id=int(winner),
        stages_executed=int(comp.ctr[2]),
        moves=int(comp.ctr[1]),
        draws_used=int(comp.ctr[0]),
        machine_d=int(md) if program.kind == "small_spread" else None,
        sup=comp.sup.copy(),
        reached=comp.reached.copy(),
        downcrossings=comp.downx.copy(),
    )


def _simulate_range(program: ConstructionProgram, start: int, stop: int,
                    master_seed: int, engine: str, move_budget: int,
                    buffer_size: int):
    count = stop - start
    n_b = np.empty(count, dtype=np.int64)
    d_ab = np.empty(count, dtype=np.int64)
    winner = np.empty(count, dtype=np.int64)
    stages = np.empty(count, dtype=np.int64)
    track_md = program.kind == "small_spread"
    machine_d = np.empty(count, dtype=np.int64) if track_md else None
    if engine == "reference":
        ck_d = (
            int(program.params["checkpoint"].machine_downcrossings)
            if track_md
            else 0
        )
        for k, i in enumerate(range(start, stop)):
            rng = run_rng(master_seed, i)
            rec = run_program(program, program.pair, rng, move_budget=move_budget)
            n_b[k] = rec.n_b
            d_ab[k] = rec.d_ab
            winner[k] = rec.winner_id
            stages[k] = rec.stages_executed
            if track_md:
                # the policy already verified the machine total against
                # its deterministic checkpoint, so the value is exact
                machine_d[k] = ck_d
    else:
        comp = _Compiled(program)
        bufsize = buffer_size
        for k, i in enumerate(range(start, stop)):
            w, nb, dab, md, bufsize = _kernel_attempt(
                comp, master_seed, i, move_budget, bufsize
            )
            n_b[k] = nb
            d_ab[k] = dab
            winner[k] = w
            stages[k] = comp.ctr[2]
            if track_md:
                machine_d[k] = md
    return n_b, d_ab, winner, stages, machine_d


def _simulate_range_star(args):
    return _simulate_range(*args)


def simulate_many(program: ConstructionProgram, n_runs: int, *,
                  master_seed: int = 42, engine: str = "kernel",
                  workers: int = 1, move_budget: int = DEFAULT_MOVE_BUDGET,
                  buffer_size: int = DEFAULT_BUFFER) -> SampleBatch:
    """Run a program n_runs times and collect per-run outcome arrays.

    The result is identical for any worker count and either backend;
    ordering follows the run index.
    """
    if engine not in ("kernel", "reference"):
        raise ValueError(f"unknown engine {engine!r}")
    if n_runs < 1:
        raise ValueError("n_runs must be positive")
    if workers < 1:
        raise ValueError("workers must be positive")
    if workers > 1 and n_runs > 1:
        k = min(workers, n_runs)
        cuts = np.linspace(0, n_runs, k + 1).astype(np.int64)
        jobs = [
            (program, int(lo), int(hi), master_seed, engine, move_budget,
             buffer_size)
            for lo, hi in zip(cuts[:-1], cuts[1:])
            if hi > lo
        ]
        with ProcessPoolExecutor(max_workers=k) as pool:
            parts = list(pool.map(_simulate_range_star, jobs))
        n_b = np.concatenate([p[0] for p in parts])
        d_ab = np.concatenate([p[1] for p in parts])
        winner = np.concatenate([p[2] for p in parts])
        stages = np.concatenate([p[3] for p in parts])
        machine_d = (
            np.concatenate([p[4] for p in parts])
            if program.kind == "small_spread"
            else None
        )
    else:
        n_b, d_ab, winner, stages, machine_d = _simulate_range(
            program, 0, n_runs, master_seed, engine, move_budget, buffer_size
        )
    return SampleBatch(
        kind=program.kind,
        pair=program.pair,
        n_runs=n_runs,
        master_seed=master_seed,
        engine=engine,
        n_b=n_b,
        d_ab=d_ab,
        winner=winner,
        stages=stages,
        machine_d=machine_d,
    )

"""Compiled batch kernels replaying the construction policies.

Each kernel is a draw-for-draw mirror of the reference engine running one
construction policy: the same uniforms produce the same stage sequence,
the same elementary moves, and the same crossing record, down to the
float. The kernels consume a pre-drawn buffer of uniforms instead of
calling a generator one draw at a time, which is what makes large batches
cheap; when a run outlives its buffer the caller regenerates a longer
buffer from the same stream (the prefix is unchanged) and retries.

Keeping the two implementations bitwise interchangeable rests on a few
rules, mirrored from the reference engine and the policy module:

- grid construction adds candidate levels in the same order (a, b, then
  tied-map preimages), filters to the stage range, sorts, and merges
  with the 1e-12 tolerance keeping earlier-kept floats intact;
- freeze rules are carried as (level, id) entries; an entry resolves to
  the first grid index within tolerance of its level, which reproduces
  the engine's canonicalization even when two rule levels coincide;
- all float expressions (pair mass, affine coefficients, gambler-step
  probability) are written with the same operand order as the reference
  code so both sides round identically;
- a tied component is updated per move only when a stage level could
  mutate its monitor: either its value can reach the upper predicate
  (v >= b - tol) somewhere on the grid, or it enters the stage already
  in the active state and its value can reach the lower predicate
  (v <= a + tol). Otherwise every touch would at most raise its running
  supremum, so its final value and supremum are reconstructed at stage
  end from the driver's visited extremes. Affine maps are monotone in
  the driver and float rounding preserves monotonicity, so the
  reconstructed floats are the identical ones the per-move path would
  have produced; such a component also contributes no in-range grid
  candidates, but candidates are still computed for every tied
  component exactly as the reference does, so the grid cannot differ.

Compiled-to-compiled calls cost time proportional to the number of
array arguments (reference-count and descriptor traffic), which at this
problem's scale outweighs the called work. All per-run state therefore
lives in two flat arrays indexed by offsets derived from the component
count n:

  F (float64, size 8n+18):
    [0:n]          component values
    [n:2n]         running supremum per component
    [2n:3n]        tied-map intercepts c0
    [3n:4n]        tied-map slopes c1
    [4n:4n+4]      freeze-rule levels
    [4n+4:6n+12]   stage grid levels
    [6n+12:8n+18]  candidate / sort scratch
  I (int64, size 8n+11):
    [0:n]          tied component ids
    [n:2n]         per-move-updated tied list (indices into tied slots)
    [2n:3n]        monitor status (0 before, 1 active, 2 inactive)
    [3n:4n]        reached-b flags
    [4n:5n]        frozen flags
    [5n:6n]        downcrossing counts
    [6n:7n]        tied update-mode mask
    [7n:8n]        id pool scratch
    [8n:8n+4]      freeze-rule ids
    [8n+4:8n+8]    freeze-rule grid positions
    [8n+8:8n+11]   counters [uniforms used, moves, stages]

For the same reason the monitor predicate body is written out inline at
each hot site instead of being shared through a helper, and the
equal-mass cascade, whose rounds dominate the total stage count, embeds
the stage-walk body directly in its round loop rather than calling the
generic walker.

Return codes: 0 success, 1 uniform buffer exhausted, 2 move budget
exceeded, 3 internal invariant violated.
"""

from __future__ import annotations

import numpy as np
from numba import njit

TOL = 1e-12
MASS_TOL = 1e-9

OK = 0
EXHAUSTED = 1
BUDGET = 2
INTERNAL = 3

# monitor status encoding
PRE = 0
ACT = 1
INA = 2


def f_size(n: int) -> int:
    return 8 * n + 18


def i_size(n: int) -> int:
    return 8 * n + 11


@njit(cache=True)
def _reset(init_vals, a, b, n, F, I):
    for i in range(n):
        v = init_vals[i]
        F[i] = v
        F[n + i] = v
        I[2 * n + i] = PRE
        I[3 * n + i] = 0
        I[4 * n + i] = 0
        I[5 * n + i] = 0
        if v >= b - TOL:
            I[3 * n + i] = 1
            I[2 * n + i] = ACT
        elif v <= a + TOL:
            if I[2 * n + i] == ACT:
                I[5 * n + i] += 1
                I[2 * n + i] = INA
    I[8 * n + 8] = 0
    I[8 * n + 9] = 0
    I[8 * n + 10] = 0


@njit(cache=True)
def _walk(driver, nt, lo, hi, nr, a, b, budget, n, u, F, I):
    """One stage: the driver walks the level grid until a stop fires.

    Builds the same augmented grid as the reference engine (thresholds,
    tied-map preimages, driver start), then performs gambler-step moves.
    Tied components whose monitor could fire inside the grid range are
    updated after every move; the rest are reconstructed at stage end
    from the driver's visited extremes (bitwise identical).
    """
    OS = n
    OC0 = 2 * n
    OC1 = 3 * n
    ORL = 4 * n
    OG = 4 * n + 4
    OCD = 6 * n + 12
    OA = n
    OST = 2 * n
    ORE = 3 * n
    OFR = 4 * n
    ODX = 5 * n
    OTA = 6 * n
    ORI = 8 * n
    ORP = 8 * n + 4
    OCT = 8 * n + 8
    ui = I[OCT]
    mv = I[OCT + 1]
    I[OCT + 2] += 1
    nc = 0
    F[OCD + nc] = a
    nc += 1
    F[OCD + nc] = b
    nc += 1
    for t in range(nt):
        c1 = F[OC1 + t]
        if c1 != 0.0:
            c0 = F[OC0 + t]
            F[OCD + nc] = (a - c0) / c1
            nc += 1
            F[OCD + nc] = (b - c0) / c1
            nc += 1
    m = 0
    for i in range(nc):
        v = F[OCD + i]
        if lo - TOL <= v <= hi + TOL:
            F[OCD + m] = v
            m += 1
    for i in range(1, m):
        key = F[OCD + i]
        j = i - 1
        while j >= 0 and F[OCD + j] > key:
            F[OCD + j + 1] = F[OCD + j]
            j -= 1
        F[OCD + j + 1] = key
    g = 0
    F[OG + g] = lo
    g += 1
    F[OG + g] = hi
    g += 1
    for i in range(m):
        v = F[OCD + i]
        keep = True
        for q in range(g):
            if abs(v - F[OG + q]) <= TOL:
                keep = False
                break
        if keep:
            F[OG + g] = v
            g += 1
    for i in range(1, g):
        key = F[OG + i]
        j = i - 1
        while j >= 0 and F[OG + j] > key:
            F[OG + j + 1] = F[OG + j]
            j -= 1
        F[OG + j + 1] = key
    dv = F[driver]
    keep = True
    for q in range(g):
        if abs(dv - F[OG + q]) <= TOL:
            keep = False
            break
    if keep:
        j = g
        while j > 0 and F[OG + j - 1] > dv:
            F[OG + j] = F[OG + j - 1]
            j -= 1
        F[OG + j] = dv
        g += 1
    pos = 0
    best = abs(F[OG] - dv)
    for q in range(1, g):
        d2 = abs(F[OG + q] - dv)
        if d2 < best:
            best = d2
            pos = q
    if best > TOL:
        I[OCT] = ui
        I[OCT + 1] = mv
        return INTERNAL
    for r in range(nr):
        rp = -1
        for q in range(g):
            if abs(F[OG + q] - F[ORL + r]) <= TOL:
                rp = q
                break
        if rp < 0:
            I[OCT] = ui
            I[OCT + 1] = mv
            return INTERNAL
        I[ORP + r] = rp
    gxlo = F[OG]
    gxhi = F[OG + g - 1]
    nact = 0
    npas = 0
    for t in range(nt):
        c1 = F[OC1 + t]
        active = True
        if c1 != 0.0:
            c0 = F[OC0 + t]
            v1 = c0 + c1 * gxlo
            v2 = c0 + c1 * gxhi
            vmax = v1 if v1 >= v2 else v2
            vmin = v1 if v1 <= v2 else v2
            if vmax < b - TOL and (I[OST + I[t]] != ACT or vmin > a + TOL):
                active = False
        if active:
            I[OA + nact] = t
            nact += 1
            I[OTA + t] = 1
        else:
            I[OTA + t] = 0
            npas += 1
    minx = np.inf
    maxx = -np.inf
    while True:
        if pos == 0 or pos == g - 1:
            break
        hit = False
        for r in range(nr):
            if I[ORP + r] == pos:
                hit = True
                break
        if hit:
            break
        mv += 1
        if mv > budget:
            I[OCT] = ui
            I[OCT + 1] = mv
            return BUDGET
        if ui >= u.shape[0]:
            I[OCT] = ui
            I[OCT + 1] = mv
            return EXHAUSTED
        uu = u[ui]
        ui += 1
        lower = F[OG + pos - 1]
        upper = F[OG + pos + 1]
        x = F[OG + pos]
        if uu < (x - lower) / (upper - lower):
            pos += 1
        else:
            pos -= 1
        level = F[OG + pos]
        if level < minx:
            minx = level
        if level > maxx:
            maxx = level
        F[driver] = level
        if level > F[OS + driver]:
            F[OS + driver] = level
        if level >= b - TOL:
            I[ORE + driver] = 1
            I[OST + driver] = ACT
        elif level <= a + TOL:
            if I[OST + driver] == ACT:
                I[ODX + driver] += 1
                I[OST + driver] = INA
        for z in range(nact):
            t = I[OA + z]
            nv = F[OC0 + t] + F[OC1 + t] * level
            i = I[t]
            F[i] = nv
            if nv > F[OS + i]:
                F[OS + i] = nv
            if nv >= b - TOL:
                I[ORE + i] = 1
                I[OST + i] = ACT
            elif nv <= a + TOL:
                if I[OST + i] == ACT:
                    I[ODX + i] += 1
                    I[OST + i] = INA
    if npas > 0 and maxx >= minx:
        level = F[OG + pos]
        for t in range(nt):
            if I[OTA + t] == 0:
                c0 = F[OC0 + t]
                c1 = F[OC1 + t]
                i = I[t]
                F[i] = c0 + c1 * level
                v1 = c0 + c1 * minx
                v2 = c0 + c1 * maxx
                vm = v1 if v1 >= v2 else v2
                if vm > F[OS + i]:
                    F[OS + i] = vm
    for r in range(nr):
        if I[ORP + r] == pos:
            I[OFR + I[ORI + r]] = 1
    I[OCT] = ui
    I[OCT + 1] = mv
    return OK


@njit(cache=True)
def _finalize(n, F, I):
    """Winner and aggregate tallies; INTERNAL unless exactly one holds 1."""
    winner = -1
    for i in range(n):
        if F[i] > TOL:
            if abs(F[i] - 1.0) <= MASS_TOL:
                if winner >= 0:
                    return INTERNAL, -1, 0, 0
                winner = i
            else:
                return INTERNAL, -1, 0, 0
    if winner < 0:
        return INTERNAL, -1, 0, 0
    nb = 0
    dab = 0
    for i in range(n):
        nb += I[3 * n + i]
        dab += I[5 * n + i]
    if nb < 1 or I[3 * n + winner] == 0:
        return INTERNAL, -1, 0, 0
    return OK, winner, nb, dab


@njit(cache=True)
def _fixation(a, b, budget, n, u, F, I):
    """Largest-driver proportional stages until one component holds 1."""
    OC0 = 2 * n
    OC1 = 3 * n
    OFR = 4 * n
    OPL = 7 * n
    while True:
        nal = 0
        for i in range(n):
            if F[i] > TOL:
                I[OFR + i] = 0
                I[OPL + nal] = i
                nal += 1
        if nal <= 1:
            return OK
        d = I[OPL]
        for k in range(1, nal):
            if F[I[OPL + k]] > F[d]:
                d = I[OPL + k]
        xd = F[d]
        nt = 0
        for k in range(nal):
            i = I[OPL + k]
            if i != d:
                c0 = F[i] / (1.0 - xd)
                I[nt] = i
                F[OC0 + nt] = c0
                F[OC1 + nt] = -c0
                nt += 1
        code = _walk(d, nt, 0.0, 1.0, 0, a, b, budget, n, u, F, I)
        if code != OK:
            return code
        for k in range(nal):
            i = I[OPL + k]
            if 0.0 < F[i] <= TOL:
                F[i] = 0.0


@njit(cache=True)
def _survivor_threshold(a, b, budget, n, u, F, I):
    """Couple the two largest below b; freeze arrivals at b."""
    OC0 = 2 * n
    OC1 = 3 * n
    ORL = 4 * n
    OFR = 4 * n
    ORI = 8 * n
    while True:
        d = -1
        q = -1
        cnt = 0
        for i in range(n):
            v = F[i]
            if I[OFR + i] == 0 and v > TOL and v < b - TOL:
                cnt += 1
                if d < 0:
                    d = i
                elif v > F[d]:
                    q = d
                    d = i
                elif q < 0:
                    q = i
                elif v > F[q]:
                    q = i
        if cnt < 2:
            return OK
        s = F[d] + F[q]
        nr = 0
        if s >= b:
            hi = b
            F[ORL + nr] = b
            I[ORI + nr] = d
            nr += 1
        else:
            hi = s
        lo = s - b if s - b > 0.0 else 0.0
        if lo > 0.0:
            F[ORL + nr] = lo
            I[ORI + nr] = q
            nr += 1
        I[0] = q
        F[OC0] = s
        F[OC1] = -1.0
        code = _walk(d, 1, lo, hi, nr, a, b, budget, n, u, F, I)
        if code != OK:
            return code
        if I[OFR + q] == 1:
            if abs(F[q] - b) <= TOL:
                F[q] = b
        if 0.0 < F[d] <= TOL:
            F[d] = 0.0
        if 0.0 < F[q] <= TOL:
            F[q] = 0.0


@njit(cache=True)
def _survivor_residual(a, b, budget, n, u, F, I):
    """Let a lone leftover below b reach b or die against a frozen one."""
    OC0 = 2 * n
    OC1 = 3 * n
    ORL = 4 * n
    OFR = 4 * n
    ORI = 8 * n
    r = -1
    for i in range(n):
        v = F[i]
        if I[OFR + i] == 0 and v > TOL and v < b - TOL:
            if r >= 0:
                return INTERNAL
            r = i
    if r < 0:
        return OK
    partner = -1
    for i in range(n):
        if abs(F[i] - b) <= TOL:
            partner = i
            break
    if partner < 0:
        return INTERNAL
    I[OFR + partner] = 0
    s = F[r] + F[partner]
    F[ORL] = b
    I[ORI] = r
    I[0] = partner
    F[OC0] = s
    F[OC1] = -1.0
    code = _walk(r, 1, 0.0, b, 1, a, b, budget, n, u, F, I)
    if code != OK:
        return code
    if 0.0 < F[r] <= TOL:
        F[r] = 0.0
    if 0.0 < F[partner] <= TOL:
        F[partner] = 0.0
    return OK


@njit(cache=True)
def k_survivor(init_vals, a, b, budget, u, F, I):
    n = init_vals.shape[0]
    _reset(init_vals, a, b, n, F, I)
    code = _survivor_threshold(a, b, budget, n, u, F, I)
    if code == OK:
        code = _survivor_residual(a, b, budget, n, u, F, I)
    if code == OK:
        code = _fixation(a, b, budget, n, u, F, I)
    if code != OK:
        return code, -1, 0, 0, -1
    fcode, winner, nb, dab = _finalize(n, F, I)
    return fcode, winner, nb, dab, -1


@njit(cache=True)
def _cascade(m0, m_star, a, b, budget, n, u, F, I):
    """Equal-mass cascade: m components at 1/m down to m_star at 1/m_star.

    Only the previous round's surviving participant can newly sit at the
    stage target (everyone else keeps its stage-entry value), so after
    the entry sweep the pre-freeze check inspects that single id. The
    two lowest live ids only ever move up, so the pair scan resumes from
    monotone cursors instead of rescanning from zero.
    """
    OS = n
    OC0 = 2 * n
    OC1 = 3 * n
    ORL = 4 * n
    OG = 4 * n + 4
    OCD = 6 * n + 12
    OST = 2 * n
    ORE = 3 * n
    OFR = 4 * n
    ODX = 5 * n
    ORI = 8 * n
    ORP = 8 * n + 4
    OCT = 8 * n + 8
    ui = I[OCT]
    mv = I[OCT + 1]
    st = I[OCT + 2]
    m = m0
    while m > m_star:
        target = 1.0 / (m - 1)
        for i in range(n):
            if I[OFR + i] == 0 and F[i] > TOL and abs(F[i] - target) <= TOL:
                F[i] = target
                I[OFR + i] = 1
        cursor = 0
        qcur = 0
        leftover = -1
        while True:
            if leftover >= 0:
                i = leftover
                if I[OFR + i] == 0 and F[i] > TOL and abs(F[i] - target) <= TOL:
                    F[i] = target
                    I[OFR + i] = 1
                leftover = -1
            while cursor < n and (I[OFR + cursor] == 1 or F[cursor] <= TOL):
                cursor += 1
            if cursor >= n:
                break
            d = cursor
            if qcur < d + 1:
                qcur = d + 1
            while qcur < n and (I[OFR + qcur] == 1 or F[qcur] <= TOL):
                qcur += 1
            if qcur >= n:
                break
            q = qcur
            s = F[d] + F[q]
            nr = 0
            if s > target:
                lo = s - target
                hi = target
                F[ORL] = hi
                I[ORI] = d
                F[ORL + 1] = lo
                I[ORI + 1] = q
                nr = 2
            else:
                lo = 0.0
                hi = s
            c0 = s
            c1 = -1.0
            # embedded stage walk: same structure as _walk with a single
            # tied component (the pair partner)
            st += 1
            nc = 0
            F[OCD + nc] = a
            nc += 1
            F[OCD + nc] = b
            nc += 1
            F[OCD + nc] = (a - c0) / c1
            nc += 1
            F[OCD + nc] = (b - c0) / c1
            nc += 1
            mm = 0
            for i in range(nc):
                v = F[OCD + i]
                if lo - TOL <= v <= hi + TOL:
                    F[OCD + mm] = v
                    mm += 1
            for i in range(1, mm):
                key = F[OCD + i]
                j = i - 1
                while j >= 0 and F[OCD + j] > key:
                    F[OCD + j + 1] = F[OCD + j]
                    j -= 1
                F[OCD + j + 1] = key
            g = 0
            F[OG + g] = lo
            g += 1
            F[OG + g] = hi
            g += 1
            for i in range(mm):
                v = F[OCD + i]
                keep = True
                for z in range(g):
                    if abs(v - F[OG + z]) <= TOL:
                        keep = False
                        break
                if keep:
                    F[OG + g] = v
                    g += 1
            for i in range(1, g):
                key = F[OG + i]
                j = i - 1
                while j >= 0 and F[OG + j] > key:
                    F[OG + j + 1] = F[OG + j]
                    j -= 1
                F[OG + j + 1] = key
            dv = F[d]
            keep = True
            for z in range(g):
                if abs(dv - F[OG + z]) <= TOL:
                    keep = False
                    break
            if keep:
                j = g
                while j > 0 and F[OG + j - 1] > dv:
                    F[OG + j] = F[OG + j - 1]
                    j -= 1
                F[OG + j] = dv
                g += 1
            pos = 0
            best = abs(F[OG] - dv)
            for z in range(1, g):
                d2 = abs(F[OG + z] - dv)
                if d2 < best:
                    best = d2
                    pos = z
            if best > TOL:
                I[OCT] = ui
                I[OCT + 1] = mv
                I[OCT + 2] = st
                return INTERNAL
            for r in range(nr):
                rp = -1
                for z in range(g):
                    if abs(F[OG + z] - F[ORL + r]) <= TOL:
                        rp = z
                        break
                if rp < 0:
                    I[OCT] = ui
                    I[OCT + 1] = mv
                    I[OCT + 2] = st
                    return INTERNAL
                I[ORP + r] = rp
            gxlo = F[OG]
            gxhi = F[OG + g - 1]
            v1 = c0 + c1 * gxlo
            v2 = c0 + c1 * gxhi
            vmax = v1 if v1 >= v2 else v2
            vmin = v1 if v1 <= v2 else v2
            pact = True
            if vmax < b - TOL and (I[OST + q] != ACT or vmin > a + TOL):
                pact = False
            minx = np.inf
            maxx = -np.inf
            while True:
                if pos == 0 or pos == g - 1:
                    break
                hit = False
                for r in range(nr):
                    if I[ORP + r] == pos:
                        hit = True
                        break
                if hit:
                    break
                mv += 1
                if mv > budget:
                    I[OCT] = ui
                    I[OCT + 1] = mv
                    I[OCT + 2] = st
                    return BUDGET
                if ui >= u.shape[0]:
                    I[OCT] = ui
                    I[OCT + 1] = mv
                    I[OCT + 2] = st
                    return EXHAUSTED
                uu = u[ui]
                ui += 1
                lower = F[OG + pos - 1]
                upper = F[OG + pos + 1]
                x = F[OG + pos]
                if uu < (x - lower) / (upper - lower):
                    pos += 1
                else:
                    pos -= 1
                level = F[OG + pos]
                if level < minx:
                    minx = level
                if level > maxx:
                    maxx = level
                F[d] = level
                if level > F[OS + d]:
                    F[OS + d] = level
                if level >= b - TOL:
                    I[ORE + d] = 1
                    I[OST + d] = ACT
                elif level <= a + TOL:
                    if I[OST + d] == ACT:
                        I[ODX + d] += 1
                        I[OST + d] = INA
                if pact:
                    nv = c0 + c1 * level
                    F[q] = nv
                    if nv > F[OS + q]:
                        F[OS + q] = nv
                    if nv >= b - TOL:
                        I[ORE + q] = 1
                        I[OST + q] = ACT
                    elif nv <= a + TOL:
                        if I[OST + q] == ACT:
                            I[ODX + q] += 1
                            I[OST + q] = INA
            if not pact and maxx >= minx:
                level = F[OG + pos]
                F[q] = c0 + c1 * level
                v1 = c0 + c1 * minx
                v2 = c0 + c1 * maxx
                vm = v1 if v1 >= v2 else v2
                if vm > F[OS + q]:
                    F[OS + q] = vm
            for r in range(nr):
                if I[ORP + r] == pos:
                    I[OFR + I[ORI + r]] = 1
            # end of embedded stage walk
            if I[OFR + d] == 1:
                if abs(F[d] - target) <= TOL:
                    F[d] = target
            if I[OFR + q] == 1:
                if abs(F[q] - target) <= TOL:
                    F[q] = target
            if 0.0 < F[d] <= TOL:
                F[d] = 0.0
            if 0.0 < F[q] <= TOL:
                F[q] = 0.0
            if I[OFR + d] == 0 and F[d] > TOL:
                leftover = d
            elif I[OFR + q] == 0 and F[q] > TOL:
                leftover = q
        for i in range(n):
            if I[OFR + i] == 0 and F[i] > TOL:
                I[OCT] = ui
                I[OCT + 1] = mv
                I[OCT + 2] = st
                return INTERNAL
        for i in range(n):
            I[OFR + i] = 0
        m -= 1
    I[OCT] = ui
    I[OCT + 1] = mv
    I[OCT + 2] = st
    return OK


@njit(cache=True)
def k_zero_prefix(init_vals, m0, m_star, a, b, budget, u, F, I):
    n = init_vals.shape[0]
    _reset(init_vals, a, b, n, F, I)
    code = _cascade(m0, m_star, a, b, budget, n, u, F, I)
    if code == OK:
        code = _survivor_threshold(a, b, budget, n, u, F, I)
    if code == OK:
        code = _survivor_residual(a, b, budget, n, u, F, I)
    if code == OK:
        code = _fixation(a, b, budget, n, u, F, I)
    if code != OK:
        return code, -1, 0, 0, -1
    fcode, winner, nb, dab = _finalize(n, F, I)
    return fcode, winner, nb, dab, -1


@njit(cache=True)
def k_sequential(init_vals, prof, tail, ps, ts, a, b, budget, u, F, I):
    n = init_vals.shape[0]
    OC0 = 2 * n
    OC1 = 3 * n
    _reset(init_vals, a, b, n, F, I)
    for j in range(n):
        nt = 0
        for i in range(j + 1, n):
            if i < n - 1:
                c0 = ps[i - j]
            else:
                c0 = ts[j]
            I[nt] = i
            F[OC0 + nt] = c0
            F[OC1 + nt] = -c0
            nt += 1
        code = _walk(j, nt, 0.0, 1.0, 0, a, b, budget, n, u, F, I)
        if code != OK:
            return code, -1, 0, 0, -1
        if F[j] >= 1.0 - TOL:
            fcode, winner, nb, dab = _finalize(n, F, I)
            return fcode, winner, nb, dab, -1
        for i in range(j + 1, n):
            canonical = prof[i - j - 1] if i < n - 1 else tail[j + 1]
            if abs(F[i] - canonical) <= TOL:
                F[i] = canonical
    return INTERNAL, -1, 0, 0, -1


@njit(cache=True, inline="always")
def _band_k(v, active, a, b):
    if v <= TOL:
        return 0
    if v <= a + TOL:
        return 1
    if v < b - TOL:
        if active:
            return 2
        return 3
    if v <= b + TOL:
        return 4
    return 5


@njit(cache=True)
def _pool_zero_or_b(npool, a, b, budget, n, u, F, I):
    """Pairwise rounds sending a fixed pool to {0, b}, freezing at b."""
    OC0 = 2 * n
    OC1 = 3 * n
    ORL = 4 * n
    OFR = 4 * n
    OPL = 7 * n
    ORI = 8 * n
    while True:
        pre = -1
        for k in range(npool):
            i = I[OPL + k]
            if I[OFR + i] == 0 and F[i] > TOL and abs(F[i] - b) <= TOL:
                pre = i
                break
        if pre >= 0:
            F[pre] = b
            I[OFR + pre] = 1
            continue
        d = -1
        q = -1
        cnt = 0
        for k in range(npool):
            i = I[OPL + k]
            if I[OFR + i] == 0 and F[i] > TOL:
                cnt += 1
                if d < 0:
                    d = i
                elif q < 0:
                    q = i
        if cnt < 2:
            return OK
        s = F[d] + F[q]
        nr = 0
        if s >= b:
            hi = b
            F[ORL + nr] = b
            I[ORI + nr] = d
            nr += 1
        else:
            hi = s
        lo = s - b if s - b > 0.0 else 0.0
        if lo > 0.0:
            F[ORL + nr] = lo
            I[ORI + nr] = q
            nr += 1
        I[0] = q
        F[OC0] = s
        F[OC1] = -1.0
        code = _walk(d, 1, lo, hi, nr, a, b, budget, n, u, F, I)
        if code != OK:
            return code
        if I[OFR + d] == 1:
            if abs(F[d] - b) <= TOL:
                F[d] = b
        if I[OFR + q] == 1:
            if abs(F[q] - b) <= TOL:
                F[q] = b
        if 0.0 < F[d] <= TOL:
            F[d] = 0.0
        if 0.0 < F[q] <= TOL:
            F[q] = 0.0


@njit(cache=True)
def _pool_walls(npool, lo_wall, hi_wall, a, b, budget, n, u, F, I):
    """Pairwise rounds freezing pool members at lo_wall or hi_wall."""
    OC0 = 2 * n
    OC1 = 3 * n
    ORL = 4 * n
    OFR = 4 * n
    OPL = 7 * n
    ORI = 8 * n
    while True:
        d = -1
        q = -1
        cnt = 0
        for k in range(npool):
            i = I[OPL + k]
            if I[OFR + i] == 0 and F[i] > TOL:
                cnt += 1
                if d < 0:
                    d = i
                elif q < 0:
                    q = i
        if cnt < 2:
            return OK
        s = F[d] + F[q]
        lo = lo_wall if lo_wall >= s - hi_wall else s - hi_wall
        hi = hi_wall if hi_wall <= s - lo_wall else s - lo_wall
        nr = 0
        if abs(lo - lo_wall) <= TOL:
            F[ORL + nr] = lo
            I[ORI + nr] = d
            nr += 1
        if abs(lo - (s - hi_wall)) <= TOL:
            F[ORL + nr] = lo
            I[ORI + nr] = q
            nr += 1
        if abs(hi - hi_wall) <= TOL:
            F[ORL + nr] = hi
            I[ORI + nr] = d
            nr += 1
        if abs(hi - (s - lo_wall)) <= TOL:
            F[ORL + nr] = hi
            I[ORI + nr] = q
            nr += 1
        I[0] = q
        F[OC0] = s
        F[OC1] = -1.0
        code = _walk(d, 1, lo, hi, nr, a, b, budget, n, u, F, I)
        if code != OK:
            return code
        for z in range(2):
            c = d if z == 0 else q
            if I[OFR + c] == 1:
                dl = abs(F[c] - lo_wall)
                dh = abs(F[c] - hi_wall)
                tgt = lo_wall if dl <= dh else hi_wall
                if abs(F[c] - tgt) <= TOL:
                    F[c] = tgt
        if 0.0 < F[d] <= TOL:
            F[d] = 0.0
        if 0.0 < F[q] <= TOL:
            F[q] = 0.0


@njit(cache=True)
def _pair_off(a, b, budget, n, u, F, I):
    """Resolve survivors two at a time: reflection walks to {0, d+q}.

    Picks the two smallest live components (value, then index), exactly
    mirroring the reference generator's sort order.
    """
    OC0 = 2 * n
    OC1 = 3 * n
    OFR = 4 * n
    while True:
        d = -1
        q = -1
        nal = 0
        for i in range(n):
            if F[i] > TOL:
                nal += 1
                I[OFR + i] = 0
                if d < 0:
                    d = i
                elif F[i] < F[d]:
                    q = d
                    d = i
                elif q < 0 or F[i] < F[q]:
                    q = i
        if nal <= 1:
            return OK
        s = F[d] + F[q]
        I[0] = q
        F[OC0] = s
        F[OC1] = -1.0
        code = _walk(d, 1, 0.0, s, 0, a, b, budget, n, u, F, I)
        if code != OK:
            return code
        if 0.0 < F[d] <= TOL:
            F[d] = 0.0
        if 0.0 < F[q] <= TOL:
            F[q] = 0.0


@njit(cache=True)
def _small_spread_machine(f1, a, b, budget, n, u, F, I):
    """First-applicable case machine over the band census."""
    OST = 2 * n
    OFR = 4 * n
    OPL = 7 * n
    while True:
        c_low = 0
        c_ma = 0
        c_mi = 0
        c_ab = 0
        c_hi = 0
        for i in range(n):
            bd = _band_k(F[i], I[OST + i] == ACT, a, b)
            if bd == 1:
                c_low += 1
            elif bd == 2:
                c_ma += 1
            elif bd == 3:
                c_mi += 1
            elif bd == 4:
                c_ab += 1
            elif bd == 5:
                c_hi += 1
        if c_ab >= f1 + 1:
            had_high = c_hi >= 1
            npool = 0
            for i in range(n):
                if _band_k(F[i], I[OST + i] == ACT, a, b) == 4:
                    I[OPL + npool] = i
                    npool += 1
            code = _pool_walls(npool, a, 1.0, a, b, budget, n, u, F, I)
            if code != OK:
                return code
            for i in range(n):
                I[OFR + i] = 0
            npool = 0
            for i in range(n):
                if abs(F[i] - a) <= TOL:
                    I[OPL + npool] = i
                    npool += 1
            code = _pool_zero_or_b(npool, a, b, budget, n, u, F, I)
            if code != OK:
                return code
            for i in range(n):
                I[OFR + i] = 0
            if had_high:
                npool = 0
                for i in range(n):
                    if F[i] > b + TOL:
                        I[OPL + npool] = i
                        npool += 1
                code = _pool_walls(npool, b, 1.0, a, b, budget, n, u, F, I)
                if code != OK:
                    return code
                for i in range(n):
                    I[OFR + i] = 0
        elif c_ma >= 2 * f1 + 1:
            npool = 0
            for i in range(n):
                if _band_k(F[i], I[OST + i] == ACT, a, b) == 2:
                    I[OPL + npool] = i
                    npool += 1
            code = _pool_walls(npool, a, b, a, b, budget, n, u, F, I)
            if code != OK:
                return code
            for i in range(n):
                I[OFR + i] = 0
        elif c_mi >= 2 * f1 + 1:
            npool = 0
            for i in range(n):
                if _band_k(F[i], I[OST + i] == ACT, a, b) == 3:
                    I[OPL + npool] = i
                    npool += 1
            code = _pool_walls(npool, a, b, a, b, budget, n, u, F, I)
            if code != OK:
                return code
            for i in range(n):
                I[OFR + i] = 0
        elif c_low >= f1 and c_low >= 2:
            # a singleton pool cannot evolve, so this case needs two members
            npool = 0
            for i in range(n):
                if _band_k(F[i], I[OST + i] == ACT, a, b) == 1:
                    I[OPL + npool] = i
                    npool += 1
            code = _pool_zero_or_b(npool, a, b, budget, n, u, F, I)
            if code != OK:
                return code
            for i in range(n):
                I[OFR + i] = 0
        else:
            return OK


@njit(cache=True)
def k_small_spread(init_vals, f1, ck_d, ck_ranked, a, b, budget, u, F, I):
    n = init_vals.shape[0]
    OCD = 6 * n + 12
    ODX = 5 * n
    _reset(init_vals, a, b, n, F, I)
    code = _small_spread_machine(f1, a, b, budget, n, u, F, I)
    if code != OK:
        return code, -1, 0, 0, -1
    machine_d = 0
    for i in range(n):
        machine_d += I[ODX + i]
    nal = 0
    for i in range(n):
        if F[i] > TOL:
            F[OCD + nal] = F[i]
            nal += 1
    for i in range(1, nal):
        key = F[OCD + i]
        j = i - 1
        while j >= 0 and F[OCD + j] < key:
            F[OCD + j + 1] = F[OCD + j]
            j -= 1
        F[OCD + j + 1] = key
    if machine_d != ck_d or nal != ck_ranked.shape[0]:
        return INTERNAL, -1, 0, 0, -1
    for i in range(nal):
        if abs(F[OCD + i] - ck_ranked[i]) > 1e-9:
            return INTERNAL, -1, 0, 0, -1
    code = _pair_off(a, b, budget, n, u, F, I)
    if code != OK:
        return code, -1, 0, 0, -1
    fcode, winner, nb, dab = _finalize(n, F, I)
    return fcode, winner, nb, dab, machine_d


@njit(cache=True)
def _embed_phase(need, tgt, a, b, budget, n, u, F, I):
    """Merge the components holding `need` into the ascending `tgt` values.

    Claimed member ids live in the pool slot; the per-move-update list
    slot is free until the first stage walk, so during claiming it
    serves as the match-once marker.
    """
    OC0 = 2 * n
    OC1 = 3 * n
    ORL = 4 * n
    OA = n
    OFR = 4 * n
    OPL = 7 * n
    ORI = 8 * n
    nneed = need.shape[0]
    for t in range(nneed):
        I[OA + t] = 0
    nmem = 0
    for i in range(n):
        v = F[i]
        for t in range(nneed):
            if I[OA + t] == 0 and need[t] == v:
                I[OA + t] = 1
                I[OPL + nmem] = i
                nmem += 1
                break
    for t in range(nneed):
        if I[OA + t] == 0:
            return INTERNAL
    ntgt = tgt.shape[0]
    ptr = 0
    while ptr < ntgt:
        target = tgt[ptr]
        pre = -1
        for k in range(nmem):
            i = I[OPL + k]
            if I[OFR + i] == 0 and F[i] > TOL and abs(F[i] - target) <= TOL:
                pre = i
                break
        if pre >= 0:
            F[pre] = target
            I[OFR + pre] = 1
            ptr += 1
            continue
        d = -1
        q = -1
        cnt = 0
        for k in range(nmem):
            i = I[OPL + k]
            if I[OFR + i] == 0 and F[i] > TOL:
                cnt += 1
                if d < 0:
                    d = i
                elif q < 0:
                    q = i
        if cnt < 2:
            return INTERNAL
        s = F[d] + F[q]
        nr = 0
        if s > target:
            lo = s - target
            hi = target
            F[ORL] = hi
            I[ORI] = d
            F[ORL + 1] = lo
            I[ORI + 1] = q
            nr = 2
        else:
            lo = 0.0
            hi = s
        I[0] = q
        F[OC0] = s
        F[OC1] = -1.0
        code = _walk(d, 1, lo, hi, nr, a, b, budget, n, u, F, I)
        if code != OK:
            return code
        froze = I[OFR + d] == 1 or I[OFR + q] == 1
        if I[OFR + d] == 1:
            if abs(F[d] - target) <= TOL:
                F[d] = target
        if I[OFR + q] == 1:
            if abs(F[q] - target) <= TOL:
                F[q] = target
        if 0.0 < F[d] <= TOL:
            F[d] = 0.0
        if 0.0 < F[q] <= TOL:
            F[q] = 0.0
        if froze:
            ptr += 1
    for k in range(nmem):
        i = I[OPL + k]
        if I[OFR + i] == 0 and F[i] > TOL:
            return INTERNAL
    for i in range(n):
        I[OFR + i] = 0
    return OK


@njit(cache=True)
def k_embed(init_vals, need_flat, need_off, tgt_flat, tgt_off, lvl_flat,
            lvl_off, a, b, budget, u, F, I):
    n = init_vals.shape[0]
    OCD = 6 * n + 12
    _reset(init_vals, a, b, n, F, I)
    nphases = need_off.shape[0] - 1
    for ph in range(nphases):
        need = need_flat[need_off[ph]:need_off[ph + 1]]
        tgt = tgt_flat[tgt_off[ph]:tgt_off[ph + 1]]
        code = _embed_phase(need, tgt, a, b, budget, n, u, F, I)
        if code != OK:
            return code, -1, 0, 0, -1
        lvl = lvl_flat[lvl_off[ph]:lvl_off[ph + 1]]
        nal = 0
        for i in range(n):
            if F[i] > TOL:
                if nal >= lvl.shape[0]:
                    return INTERNAL, -1, 0, 0, -1
                F[OCD + nal] = F[i]
                nal += 1
        for i in range(1, nal):
            key = F[OCD + i]
            j = i - 1
            while j >= 0 and F[OCD + j] < key:
                F[OCD + j + 1] = F[OCD + j]
                j -= 1
            F[OCD + j + 1] = key
        if nal != lvl.shape[0]:
            return INTERNAL, -1, 0, 0, -1
        for i in range(nal):
            if F[OCD + i] != lvl[i]:
                return INTERNAL, -1, 0, 0, -1
    code = _fixation(a, b, budget, n, u, F, I)
    if code != OK:
        return code, -1, 0, 0, -1
    fcode, winner, nb, dab = _finalize(n, F, I)
    return fcode, winner, nb, dab, -1

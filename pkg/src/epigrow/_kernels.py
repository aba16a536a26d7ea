"""Compiled event loops for the stochastic engine.

All kernels consume a ``numpy.random.Generator`` and draw in a fixed,
documented order (one standard exponential for the waiting time, then one
uniform for event selection, plus the extra uniforms noted per kernel), so
seeded runs are bit-reproducible.  Kernels release the GIL; callers may run
them from thread pools with one generator per task.

Terminal codes shared with the wrapper layer:
    0 = reached t_max          1 = epidemic extinct
    2 = population extinct     3 = event cap hit
    4 = infection threshold / fate determined
    5 = buffer full (ages kernel only)
"""

import numpy as np
from numba import njit

TMAX = 0
EPIDEMIC_EXTINCT = 1
POPULATION_EXTINCT = 2
EVENT_CAP = 3
THRESHOLD = 4
BUFFER_FULL = 5


@njit(cache=True, nogil=True)
def epidemic_kernel(
    rng,
    lam,
    mu,
    gamma,
    delta,
    nu,
    seir,
    s0,
    e0,
    i0,
    r0,
    t_max,
    max_events,
    infection_stop,
    stop_on_extinction,
    grid,
    out_counts,
):
    """Direct-method exact simulation of the SIR/SEIR jump chain.

    Event order for the selection cascade: birth, death S, death E,
    death I, death R, infection, become-infectious, recovery.  States are
    recorded at the grid times (state after the last event at or before
    the grid time); ``out_counts`` must have shape (len(grid), 4).
    Returns (code, t_end, s, e, i, r, events, n_grid_filled).
    """
    s = s0
    e = e0
    i = i0
    r = r0
    t = 0.0
    gi = 0
    ng = grid.shape[0]
    events = 0
    track_extinction = stop_on_extinction and (e0 + i0) > 0
    code = TMAX
    while True:
        n = s + e + i + r
        if n == 0:
            code = POPULATION_EXTINCT
            break
        if track_extinction and e + i == 0:
            code = EPIDEMIC_EXTINCT
            break
        if infection_stop > 0 and e + i >= infection_stop:
            code = THRESHOLD
            break
        if events >= max_events:
            code = EVENT_CAP
            break
        nf = 1.0 * n
        r_birth = lam * nf
        r_ds = mu * s
        r_de = mu * e
        r_di = mu * i
        r_dr = mu * r
        r_inf = gamma * (1.0 * i) * (1.0 * s) / nf
        r_prog = nu * e
        r_rec = delta * i
        c1 = r_birth
        c2 = c1 + r_ds
        c3 = c2 + r_de
        c4 = c3 + r_di
        c5 = c4 + r_dr
        c6 = c5 + r_inf
        c7 = c6 + r_prog
        total = c7 + r_rec
        t_next = t + rng.standard_exponential() / total
        while gi < ng and grid[gi] < t_next:
            out_counts[gi, 0] = s
            out_counts[gi, 1] = e
            out_counts[gi, 2] = i
            out_counts[gi, 3] = r
            gi += 1
        if t_next > t_max:
            while gi < ng:
                out_counts[gi, 0] = s
                out_counts[gi, 1] = e
                out_counts[gi, 2] = i
                out_counts[gi, 3] = r
                gi += 1
            t = t_max
            code = TMAX
            break
        t = t_next
        u = rng.random() * total
        if u < c1:
            s += 1
        elif u < c2:
            s -= 1
        elif u < c3:
            e -= 1
        elif u < c4:
            i -= 1
        elif u < c5:
            r -= 1
        elif u < c6:
            s -= 1
            if seir:
                e += 1
            else:
                i += 1
        elif u < c7:
            e -= 1
            i += 1
        else:
            i -= 1
            r += 1
        events += 1
    return code, t, s, e, i, r, events, gi


@njit(cache=True, nogil=True)
def ages_kernel(rng, lam, mu, n0, t_max, max_events, birth_times):
    """Individual-level linear birth-death process recording birth times.

    ``birth_times`` is caller-allocated scratch; the first ``alive``
    entries on return are the birth times of the living individuals (in
    exchangeable order; deaths remove a uniformly chosen individual via
    one extra ``integers`` draw).  Returns (code, alive, events, t_end).
    """
    cap = birth_times.shape[0]
    for k in range(n0):
        birth_times[k] = 0.0
    alive = n0
    t = 0.0
    events = 0
    rate_pair = lam + mu
    while True:
        if alive == 0:
            return POPULATION_EXTINCT, alive, events, t
        if events >= max_events:
            return EVENT_CAP, alive, events, t
        total = rate_pair * alive
        t_next = t + rng.standard_exponential() / total
        if t_next > t_max:
            return TMAX, alive, events, t_max
        t = t_next
        if rng.random() * rate_pair < lam:
            if alive >= cap:
                return BUFFER_FULL, alive, events, t
            birth_times[alive] = t
            alive += 1
        else:
            victim = rng.integers(0, alive)
            birth_times[victim] = birth_times[alive - 1]
            alive -= 1
        events += 1


@njit(cache=True, nogil=True)
def coupled_kernel(
    rng,
    lam,
    mu,
    gamma,
    delta,
    s0,
    i0,
    r0,
    eps0,
    t_max,
    max_events,
    upper_stop,
    lower_stop,
    grid,
    out_low,
    out_epi,
    out_up,
    out_sfrac,
):
    """Joint SIR epidemic + bounding branching processes on shared randomness.

    The upper process counts epidemic infectives plus ghosts; ghosts arise
    from contacts that fail to find a susceptible and then reproduce (rate
    gamma, always into ghosts) and die (rate delta+mu) on their own.  The
    lower process is a marker on epidemic infectives: a contact first picks
    its source uniformly among infectives (one uniform, marked with
    probability low/i), then draws the contactee uniform U; U < s/n infects
    and the child inherits the marker only when the source was marked and
    U < 1-eps0.  Removals draw one uniform to decide whether a marked
    individual left.  When s/n first drops below 1-eps0 the marker set is
    frozen and only the epidemic and upper process continue.

    With ``upper_stop`` > 0 the run ends early once the fate of all three
    processes is determined (each at 0, at its stop threshold, or frozen).
    Returns (code, t_end, s, i, r, low, ghosts, events, n_grid_filled,
    violations, broken, t_break).
    """
    s = s0
    i = i0
    r = r0
    low = i0
    gh = 0
    broken = False
    t_break = -1.0
    t = 0.0
    events = 0
    gi = 0
    ng = grid.shape[0]
    violations = 0
    dm = delta + mu
    thr = 1.0 - eps0
    n = s + i + r
    if 1.0 * s < thr * n:
        broken = True
        t_break = 0.0
    code = TMAX
    while True:
        n = s + i + r
        up = i + gh
        if not broken and low > i:
            violations += 1
        if n == 0 and gh == 0:
            code = POPULATION_EXTINCT
            break
        if upper_stop > 0:
            up_done = up == 0 or up >= upper_stop
            epi_done = i == 0 or i >= upper_stop
            lstop = lower_stop if lower_stop > 0 else upper_stop
            low_done = low == 0 or broken or low >= lstop
            if up_done and epi_done and low_done:
                code = THRESHOLD
                break
        if events >= max_events:
            code = EVENT_CAP
            break
        nf = 1.0 * n
        r_birth = lam * nf
        r_ds = mu * s
        r_di = mu * i
        r_dr = mu * r
        r_contact = gamma * i
        r_rec = delta * i
        r_gb = gamma * gh
        c1 = r_birth
        c2 = c1 + r_ds
        c3 = c2 + r_di
        c4 = c3 + r_dr
        c5 = c4 + r_contact
        c6 = c5 + r_rec
        c7 = c6 + r_gb
        total = c7 + dm * gh
        t_next = t + rng.standard_exponential() / total
        while gi < ng and grid[gi] < t_next:
            out_low[gi] = low
            out_epi[gi] = i
            out_up[gi] = up
            out_sfrac[gi] = (1.0 * s) / nf if n > 0 else 0.0
            gi += 1
        if t_next > t_max:
            while gi < ng:
                out_low[gi] = low
                out_epi[gi] = i
                out_up[gi] = up
                out_sfrac[gi] = (1.0 * s) / nf if n > 0 else 0.0
                gi += 1
            t = t_max
            code = TMAX
            break
        t = t_next
        u = rng.random() * total
        if u < c1:
            s += 1
        elif u < c2:
            s -= 1
        elif u < c3:
            if not broken and low > 0 and rng.random() * i < low:
                low -= 1
            i -= 1
        elif u < c4:
            r -= 1
        elif u < c5:
            source_marked = False
            if not broken and low > 0:
                source_marked = rng.random() * i < low
            uu = rng.random()
            if uu * nf < s:
                s -= 1
                i += 1
                if source_marked and uu < thr:
                    low += 1
            else:
                gh += 1
        elif u < c6:
            if not broken and low > 0 and rng.random() * i < low:
                low -= 1
            i -= 1
            r += 1
        elif u < c7:
            gh += 1
        else:
            gh -= 1
        events += 1
        if not broken:
            n2 = s + i + r
            if n2 > 0 and 1.0 * s < thr * n2:
                broken = True
                t_break = t
    return code, t, s, i, r, low, gh, events, gi, violations, broken, t_break


@njit(cache=True, nogil=True)
def birth_death_kernel(rng, birth, death, x0, t_max, max_events, stop):
    """Bare linear birth-death process; returns (code, t_end, count, events)."""
    x = x0
    t = 0.0
    events = 0
    pair = birth + death
    while True:
        if x == 0:
            return EPIDEMIC_EXTINCT, t, x, events
        if stop > 0 and x >= stop:
            return THRESHOLD, t, x, events
        if events >= max_events:
            return EVENT_CAP, t, x, events
        total = pair * x
        t_next = t + rng.standard_exponential() / total
        if t_next > t_max:
            return TMAX, t_max, x, events
        t = t_next
        if rng.random() * pair < birth:
            x += 1
        else:
            x -= 1
        events += 1

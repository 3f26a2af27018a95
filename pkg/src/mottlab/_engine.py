"""Jump-by-jump simulation core, JIT-compiled.

The chain is handed over as CSR arrays plus per-row cumulative weights.
Randomness comes in as flat arrays of uniforms drawn outside (two per
step: holding time and jump target), so the stream contract stays with
numpy generators; the wrapper refills chunks when they run out.
"""

import numpy as np
from numba import njit

STOP_CHUNK = 0  # uniforms exhausted; caller refills and resumes
STOP_TIME = 1
STOP_HIT = 2
STOP_STEPS = 3
STOP_CAP = 4  # record arrays full; caller grows and resumes


@njit(cache=True, fastmath=True)
def run_chain(
    indptr,
    indices,
    row_cum,
    masses,
    rates,
    site,
    t,
    steps,
    u,
    u_pos,
    t_max,
    max_steps,
    hit_mask,
    rec_t,
    rec_s,
    rec_len,
    occ,
    track_occ,
):
    """Advance the chain until a stop condition fires.

    Returns (site, t, steps, u_pos, rec_len, stop_code).  ``rec_t``/``rec_s``
    of length 0 disable path recording; ``occ`` of length > 0 accumulates
    per-site occupation time.  ``hit_mask[site]`` is checked on entry, so a
    start inside the hit set stops immediately at time 0.
    """
    n_u = u.shape[0]
    cap = rec_t.shape[0]
    record = cap > 0
    while True:
        if hit_mask[site]:
            return site, t, steps, u_pos, rec_len, STOP_HIT
        if steps >= max_steps:
            return site, t, steps, u_pos, rec_len, STOP_STEPS
        if u_pos + 1 >= n_u:
            return site, t, steps, u_pos, rec_len, STOP_CHUNK
        if record and rec_len >= cap:
            return site, t, steps, u_pos, rec_len, STOP_CAP
        lo = indptr[site]
        hi = indptr[site + 1]
        w = rates[site]
        dt = -np.log(u[u_pos]) * masses[site] / w
        if t + dt > t_max:
            if track_occ:
                occ[site] += t_max - t
            return site, t_max, steps, u_pos + 2, rec_len, STOP_TIME
        if track_occ:
            occ[site] += dt
        t += dt
        base = row_cum[lo - 1] if lo > 0 else 0.0
        target = base + u[u_pos + 1] * w
        # first index in [lo, hi) with row_cum > target
        a = lo
        b = hi
        while a < b:
            mid = (a + b) >> 1
            if row_cum[mid] > target:
                b = mid
            else:
                a = mid + 1
        site = indices[a if a < hi else hi - 1]
        u_pos += 2
        steps += 1
        if record:
            rec_t[rec_len] = t
            rec_s[rec_len] = site
            rec_len += 1

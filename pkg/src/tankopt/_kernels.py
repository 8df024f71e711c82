"""Compiled numerical core.

Every piece of tank physics lives here exactly once (failure-rate curve,
closed-form flows, boundary detection, jump kernel, reward) and is shared by
the scalar model in :mod:`tankopt.tank` and the batch Monte Carlo engines
below.  All functions are nopython numba kernels; random draws go through a
numpy ``Generator`` (Philox) passed in by the caller.

Parameter vectors are plain float64 arrays with the layout given by the
``P_*`` index constants; modes are integers ``u1*32 + u2*8 + u3*2 + ctrl``
with unit states On=0, Off=1, StuckOn=2, StuckOff=3 and controller
Working=1 / Failed=0.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

# --- parameter vector layout -------------------------------------------------
P_B1 = 0
P_B2 = 1
P_BC = 2
P_BD = 3
P_THETA_IN = 4
P_L1 = 5
P_L2 = 6
P_L3 = 7
P_G = 8
P_K = 9
P_P_CONTROL = 10
P_STUCK_ON = 11
P_H_DRY = 12
P_H_LOW = 13
P_H_HIGH = 14
P_H_OVER = 15
P_THETA_HOT = 16
P_T_HORIZON = 17
P_ALPHA = 18
P_THETA_NORM = 19
P_THETA_FLOOR = 20
N_PARAMS = 21

# --- event kind codes ----------------------------------------------------------
K_INIT = 0
K_RANDOM = 1
K_CTRL_LOW = 2
K_CTRL_HIGH = 3
K_TOP_DRY = 4
K_TOP_OVER = 5
K_TOP_HOT = 6
K_HORIZON = 7
K_FROZEN = 8
K_BUDGET = 9

# policy replay outcome codes
OUT_PLANNED = 0
OUT_BUDGET = 1
OUT_HORIZON = 2
OUT_TOP = 3
OUT_FALLBACK = 4

_BISECT_TOL = 1e-9
_EPS_BOUND = 1e-9


@njit(cache=True, inline="always")
def unit_state(mode, i):
    if i == 0:
        return (mode >> 5) & 3
    if i == 1:
        return (mode >> 3) & 3
    return (mode >> 1) & 3


@njit(cache=True, inline="always")
def controller_working(mode):
    return (mode & 1) == 1


@njit(cache=True, inline="always")
def _nu(u):
    return 1 if (u == 0 or u == 2) else 0


@njit(cache=True, inline="always")
def flow_counts(mode):
    """(c, p): net level slope count nu1+nu2-nu3 and pump count nu1+nu2."""
    n1 = _nu(unit_state(mode, 0))
    n2 = _nu(unit_state(mode, 1))
    n3 = _nu(unit_state(mode, 2))
    return n1 + n2 - n3, n1 + n2


@njit(cache=True, inline="always")
def set_unit(mode, i, v):
    if i == 0:
        return (mode & ~(3 << 5)) | (v << 5)
    if i == 1:
        return (mode & ~(3 << 3)) | (v << 3)
    return (mode & ~(3 << 1)) | (v << 1)


@njit(cache=True)
def rate_multiplier(theta, P):
    """Temperature modulation of the unit failure rates; equals 1 at 20 C."""
    b1 = P[P_B1]
    b2 = P[P_B2]
    return (b1 * math.exp(P[P_BC] * (theta - 20.0))
            + b2 * math.exp(-P[P_BD] * (theta - 20.0))) / (b1 + b2)


@njit(cache=True, inline="always")
def live_rate_sum(mode, P):
    s = 0.0
    if unit_state(mode, 0) < 2:
        s += P[P_L1]
    if unit_state(mode, 1) < 2:
        s += P[P_L2]
    if unit_state(mode, 2) < 2:
        s += P[P_L3]
    return s


@njit(cache=True)
def total_rate(mode, theta, P):
    return rate_multiplier(theta, P) * live_rate_sum(mode, P)


@njit(cache=True)
def rate_bound(mode, P):
    """Constant per-mode bound: the multiplier is maximal at the hot limit."""
    return rate_multiplier(P[P_THETA_HOT], P) * live_rate_sum(mode, P)


@njit(cache=True)
def theta_at(theta0, h0, c, p, u, P):
    """Closed-form temperature after flowing for u hours in a fixed mode."""
    G = P[P_G]
    K = P[P_K]
    if p > 0:
        theta_inf = P[P_THETA_IN] + K / (p * G)
        if c == 0:
            return theta_inf + (theta0 - theta_inf) * math.exp(-p * G * u / h0)
        h1 = h0 + c * G * u
        return theta_inf + (theta0 - theta_inf) * (h0 / h1) ** (p / c)
    if c == 0:
        return theta0 + K * u / h0
    h1 = h0 + c * G * u
    return theta0 + (K / (c * G)) * math.log(h1 / h0)


@njit(cache=True)
def flow_state(mode, h, theta, t, u, P):
    """Deterministic flow for u hours: (h', theta', t+u)."""
    c, p = flow_counts(mode)
    return h + c * P[P_G] * u, theta_at(theta, h, c, p, u, P), t + u


@njit(cache=True)
def boundary_time(mode, h, theta, t, P):
    """Time to the first active boundary and its kind.

    Active level thresholds depend on the flow direction and the controller:
    6 m only when falling with a Working controller, 8 m only when rising with
    a Working controller, 4 m / 10 m otherwise; crossings must take strictly
    positive time (a solicitation is a one-shot crossing event).  The hot
    threshold is located by bisection (the temperature is monotone within a
    mode); the running-time horizon always bounds the domain.
    """
    c, p = flow_counts(mode)
    G = P[P_G]
    best = P[P_T_HORIZON] - t
    kind = K_HORIZON
    if c > 0:
        if controller_working(mode) and h < P[P_H_HIGH]:
            tc = (P[P_H_HIGH] - h) / (c * G)
            kc = K_CTRL_HIGH
        else:
            tc = (P[P_H_OVER] - h) / (c * G)
            kc = K_TOP_OVER
        if tc < best:
            best = tc
            kind = kc
    elif c < 0:
        if controller_working(mode) and h > P[P_H_LOW]:
            tc = (h - P[P_H_LOW]) / (-c * G)
            kc = K_CTRL_LOW
        else:
            tc = (h - P[P_H_DRY]) / (-c * G)
            kc = K_TOP_DRY
        if tc < best:
            best = tc
            kind = kc
    if p == 0 and theta < P[P_THETA_HOT]:
        # no incoming fluid: theta rises monotonically and may hit the limit
        if theta_at(theta, h, c, p, best, P) >= P[P_THETA_HOT]:
            lo = 0.0
            hi = best
            while hi - lo > _BISECT_TOL:
                mid = 0.5 * (lo + hi)
                if theta_at(theta, h, c, p, mid, P) >= P[P_THETA_HOT]:
                    hi = mid
                else:
                    lo = mid
            best = hi
            kind = K_TOP_HOT
    return best, kind


@njit(cache=True)
def boundary_state(mode, h, theta, t, tstar, kind, P):
    """Flow to the boundary and snap the crossing coordinate exactly."""
    h1, th1, t1 = flow_state(mode, h, theta, t, tstar, P)
    if kind == K_CTRL_LOW:
        h1 = P[P_H_LOW]
    elif kind == K_CTRL_HIGH:
        h1 = P[P_H_HIGH]
    elif kind == K_TOP_DRY:
        h1 = P[P_H_DRY]
    elif kind == K_TOP_OVER:
        h1 = P[P_H_OVER]
    elif kind == K_TOP_HOT:
        th1 = P[P_THETA_HOT]
    elif kind == K_HORIZON:
        t1 = P[P_T_HORIZON]
    return h1, th1, t1


@njit(cache=True)
def is_absorbing(h, theta, t, P):
    return (h <= P[P_H_DRY] + _EPS_BOUND or h >= P[P_H_OVER] - _EPS_BOUND
            or theta >= P[P_THETA_HOT] - _EPS_BOUND
            or t >= P[P_T_HORIZON] - _EPS_BOUND)


@njit(nogil=True)
def draw_event(mode, h, theta, t, P, gen):
    """Thinning against the per-mode constant rate bound.

    Returns (tau, kind): tau is the elapsed time to the event, kind is
    K_RANDOM or the boundary kind.  Returns (-1, -1) if the model contract is
    violated (intensity above its bound).
    """
    tstar, bkind = boundary_time(mode, h, theta, t, P)
    lbar = rate_bound(mode, P)
    if lbar <= 0.0:
        return tstar, bkind
    c, p = flow_counts(mode)
    tau = 0.0
    while True:
        tau += gen.exponential(1.0 / lbar)
        if tau >= tstar:
            return tstar, bkind
        lam = total_rate(mode, theta_at(theta, h, c, p, tau, P), P)
        if lam > lbar * (1.0 + 1e-9):
            return -1.0, -1
        if gen.random() * lbar < lam:
            return tau, K_RANDOM


@njit(nogil=True)
def apply_random_failure(mode, P, gen):
    """Pick a live unit proportionally to its base rate; stick it on or off."""
    w1 = P[P_L1] if unit_state(mode, 0) < 2 else 0.0
    w2 = P[P_L2] if unit_state(mode, 1) < 2 else 0.0
    w3 = P[P_L3] if unit_state(mode, 2) < 2 else 0.0
    r = gen.random() * (w1 + w2 + w3)
    if r < w1:
        i = 0
    elif r < w1 + w2:
        i = 1
    else:
        i = 2
    v = 2 if gen.random() < P[P_STUCK_ON] else 3
    return set_unit(mode, i, v)


@njit(nogil=True)
def apply_control(mode, at_low, P, gen):
    """Solicit the controller at a level threshold.

    Success moves every non-stuck unit to the threshold's target positions;
    failure flips the controller to Failed and leaves the units alone.
    """
    if gen.random() < P[P_P_CONTROL]:
        if at_low:
            t1, t2, t3 = 0, 0, 1
        else:
            t1, t2, t3 = 1, 1, 0
        m = mode
        if unit_state(m, 0) < 2:
            m = set_unit(m, 0, t1)
        if unit_state(m, 1) < 2:
            m = set_unit(m, 1, t2)
        if unit_state(m, 2) < 2:
            m = set_unit(m, 2, t3)
        return m
    return mode & ~1


@njit(cache=True)
def reward_shape(h, theta, P):
    """Position reward surface: 1 on the normal band, 0 at every top event."""
    hd = P[P_H_DRY]
    hl = P[P_H_LOW]
    hh = P[P_H_HIGH]
    ho = P[P_H_OVER]
    if h <= hd or h >= ho:
        fh = 0.0
    elif h < hl:
        fh = (h - hd) / (hl - hd)
    elif h <= hh:
        fh = 1.0
    else:
        fh = (ho - h) / (ho - hh)
    tn = P[P_THETA_NORM]
    th = P[P_THETA_HOT]
    if theta <= tn:
        ft = 1.0
    elif theta >= th:
        ft = 0.0
    else:
        ft = (th - theta) / (th - tn)
    return fh * ft


@njit(cache=True)
def reward(h, theta, t, P):
    if t <= 0.0:
        return 0.0
    return reward_shape(h, theta, P) * t ** P[P_ALPHA]


# --- batch engines -----------------------------------------------------------

@njit(nogil=True)
def chain_batch(P, mode0, h0, theta0, n_steps, gen, modes, coords, kinds):
    """Simulate one embedded-chain row block.

    Writes, for each trajectory i and step n: the post-jump mode, the state
    (h, theta, t), the inter-jump time s, and the event kind.  Terminal
    boundary hits (top events, horizon) occupy their own step; afterwards the
    chain freezes in place with s=0.  Returns -1, or the trajectory index of
    a model-contract violation.
    """
    n_traj = modes.shape[0]
    for i in range(n_traj):
        m = mode0
        h = h0
        th = theta0
        t = 0.0
        modes[i, 0] = m
        coords[i, 0, 0] = h
        coords[i, 0, 1] = th
        coords[i, 0, 2] = t
        coords[i, 0, 3] = 0.0
        kinds[i, 0] = K_INIT
        absorbed = False
        for n in range(1, n_steps + 1):
            if absorbed:
                modes[i, n] = m
                coords[i, n, 0] = h
                coords[i, n, 1] = th
                coords[i, n, 2] = t
                coords[i, n, 3] = 0.0
                kinds[i, n] = K_FROZEN
                continue
            tau, kind = draw_event(m, h, th, t, P, gen)
            if kind < 0:
                return i
            if kind == K_RANDOM:
                h, th, t = flow_state(m, h, th, t, tau, P)
                m = apply_random_failure(m, P, gen)
            else:
                h, th, t = boundary_state(m, h, th, t, tau, kind, P)
                if kind == K_CTRL_LOW or kind == K_CTRL_HIGH:
                    m = apply_control(m, kind == K_CTRL_LOW, P, gen)
                else:
                    absorbed = True
            modes[i, n] = m
            coords[i, n, 0] = h
            coords[i, n, 1] = th
            coords[i, n, 2] = t
            coords[i, n, 3] = tau
            kinds[i, n] = kind
    return -1


@njit(nogil=True)
def census_batch(P, mode0, h0, theta0, n_traj, n_steps, gen, counts):
    """Tally kernel-jump modes per jump index into counts[n, mode]."""
    for i in range(n_traj):
        m = mode0
        h = h0
        th = theta0
        t = 0.0
        for n in range(1, n_steps + 1):
            tau, kind = draw_event(m, h, th, t, P, gen)
            if kind < 0:
                return i
            if kind == K_RANDOM:
                h, th, t = flow_state(m, h, th, t, tau, P)
                m = apply_random_failure(m, P, gen)
            elif kind == K_CTRL_LOW or kind == K_CTRL_HIGH:
                h, th, t = boundary_state(m, h, th, t, tau, kind, P)
                m = apply_control(m, kind == K_CTRL_LOW, P, gen)
            else:
                break
            counts[n, m] += 1
    return -1


@njit(nogil=True)
def baseline_batch(P, mode0, h0, theta0, n_steps, gen, out):
    """No-maintenance campaign: run to top event / horizon / jump budget.

    out rows: (reward, h, theta, t, cause).
    """
    n_traj = out.shape[0]
    for i in range(n_traj):
        m = mode0
        h = h0
        th = theta0
        t = 0.0
        cause = K_BUDGET
        for n in range(1, n_steps + 1):
            tau, kind = draw_event(m, h, th, t, P, gen)
            if kind < 0:
                return i
            if kind == K_RANDOM:
                h, th, t = flow_state(m, h, th, t, tau, P)
                m = apply_random_failure(m, P, gen)
            elif kind == K_CTRL_LOW or kind == K_CTRL_HIGH:
                h, th, t = boundary_state(m, h, th, t, tau, kind, P)
                m = apply_control(m, kind == K_CTRL_LOW, P, gen)
            else:
                h, th, t = boundary_state(m, h, th, t, tau, kind, P)
                cause = kind
                break
        out[i, 0] = reward(h, th, t, P)
        out[i, 1] = h
        out[i, 2] = th
        out[i, 3] = t
        out[i, 4] = cause
    return -1


@njit(cache=True, inline="always")
def norm4(h, theta, t, s, P):
    x0 = (h - P[P_H_DRY]) / (P[P_H_OVER] - P[P_H_DRY])
    x1 = (theta - P[P_THETA_FLOOR]) / (P[P_THETA_HOT] - P[P_THETA_FLOOR])
    x2 = t / P[P_T_HORIZON]
    x3 = s / P[P_T_HORIZON]
    return x0, x1, x2, x3


@njit(cache=True)
def nearest_in_slice(coords, lo, hi, x0, x1, x2, x3):
    """Index of the nearest codebook point in [lo, hi); ties keep the lowest."""
    best = -1
    bd = 1e300
    for j in range(lo, hi):
        d0 = coords[j, 0] - x0
        d1 = coords[j, 1] - x1
        d2 = coords[j, 2] - x2
        d3 = coords[j, 3] - x3
        d = d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3
        if d < bd:
            bd = d
            best = j
    return best


@njit(cache=True)
def clvq_pass(codes, samples, gamma0, decay, step0):
    """Sequential competitive-learning pass over one (index, mode) cell.

    The winning point moves toward each sample with gain
    gamma_i = gamma0 / (1 + gamma0 * decay * i).  Returns the step counter.
    """
    n = samples.shape[0]
    k = codes.shape[0]
    step = step0
    for si in range(n):
        x0 = samples[si, 0]
        x1 = samples[si, 1]
        x2 = samples[si, 2]
        x3 = samples[si, 3]
        best = 0
        bd = 1e300
        for j in range(k):
            d0 = codes[j, 0] - x0
            d1 = codes[j, 1] - x1
            d2 = codes[j, 2] - x2
            d3 = codes[j, 3] - x3
            d = d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3
            if d < bd:
                bd = d
                best = j
        g = gamma0 / (1.0 + gamma0 * decay * step)
        codes[best, 0] -= g * (codes[best, 0] - x0)
        codes[best, 1] -= g * (codes[best, 1] - x1)
        codes[best, 2] -= g * (codes[best, 2] - x2)
        codes[best, 3] -= g * (codes[best, 3] - x3)
        step += 1
    return step


@njit(cache=True)
def clvq_pass_nd(codes, samples, gamma0, decay, step0):
    """Dimension-agnostic CLVQ pass (used by the standalone codebook trainer)."""
    n, d = samples.shape
    k = codes.shape[0]
    step = step0
    for si in range(n):
        best = 0
        bd = 1e300
        for j in range(k):
            acc = 0.0
            for c in range(d):
                dd = codes[j, c] - samples[si, c]
                acc += dd * dd
            if acc < bd:
                bd = acc
                best = j
        g = gamma0 / (1.0 + gamma0 * decay * step)
        for c in range(d):
            codes[best, c] -= g * (codes[best, c] - samples[si, c])
        step += 1
    return step


@njit(nogil=True, cache=True)
def assign_batch(P, bank_modes, bank_coords, grid_coords, mode_lo, mode_hi, out_idx):
    """Nearest same-mode grid point for every bank row at one jump index.

    mode_lo/mode_hi give the grid's codebook slice per mode (CSR over the 128
    mode integers).  out_idx gets the grid-local point index, or -1 when the
    sample's mode has no points.
    """
    n = bank_modes.shape[0]
    for i in range(n):
        m = bank_modes[i]
        lo = mode_lo[m]
        hi = mode_hi[m]
        if lo == hi:
            out_idx[i] = -1
            continue
        x0, x1, x2, x3 = norm4(bank_coords[i, 0], bank_coords[i, 1],
                               bank_coords[i, 2], bank_coords[i, 3], P)
        out_idx[i] = nearest_in_slice(grid_coords, lo, hi, x0, x1, x2, x3)
    return 0


@njit(cache=True)
def distortion_batch(P, bank_modes, bank_coords, grid_coords, mode_lo, mode_hi):
    """(sum of squared projection distances, matched count) for one index."""
    n = bank_modes.shape[0]
    acc = 0.0
    matched = 0
    for i in range(n):
        m = bank_modes[i]
        lo = mode_lo[m]
        hi = mode_hi[m]
        if lo == hi:
            continue
        x0, x1, x2, x3 = norm4(bank_coords[i, 0], bank_coords[i, 1],
                               bank_coords[i, 2], bank_coords[i, 3], P)
        j = nearest_in_slice(grid_coords, lo, hi, x0, x1, x2, x3)
        d0 = grid_coords[j, 0] - x0
        d1 = grid_coords[j, 1] - x1
        d2 = grid_coords[j, 2] - x2
        d3 = grid_coords[j, 3] - x3
        acc += d0 * d0 + d1 * d1 + d2 * d2 + d3 * d3
        matched += 1
    return acc, matched


@njit(cache=True)
def stop_scan(P, mode, h, theta, t, tstar, n_nodes, a_cum, b_cum, s_sorted,
              gscale):
    """Scan the time grid of one point: max over u of the stop branch.

    a_cum/b_cum are cumulative (transition*value) and transition mass in the
    order of s_sorted; gscale multiplies the reward.  Returns (best value,
    best u, node index); the smallest maximizing u wins ties.
    """
    delta = tstar / n_nodes
    kn = s_sorted.shape[0]
    best_v = -1.0
    best_u = 0.0
    best_i = 0
    for ui in range(n_nodes):
        u = ui * delta
        h1, th1, t1 = flow_state(mode, h, theta, t, u, P)
        g = gscale * reward(h1, th1, t1, P)
        # count s_j < u
        lo = 0
        hi = kn
        while lo < hi:
            mid = (lo + hi) >> 1
            if s_sorted[mid] < u:
                lo = mid + 1
            else:
                hi = mid
        a = a_cum[lo - 1] if lo > 0 else 0.0
        bmass = 1.0 - (b_cum[lo - 1] if lo > 0 else 0.0)
        if bmass < 0.0:
            bmass = 0.0
        v = a + g * bmass
        if v > best_v:
            best_v = v
            best_u = u
            best_i = ui
    return best_v, best_u, best_i


@njit(cache=True)
def clamp_offset(mode, h, theta, t, offset, n_nodes, P):
    """Keep a scheduled stop inside the current flow when it heads to a top
    event: stopping past the death time is never optimal and the boundary
    time of the observed state is known at decision time."""
    tstar, bkind = boundary_time(mode, h, theta, t, P)
    if offset >= tstar and (bkind == K_TOP_DRY or bkind == K_TOP_OVER
                            or bkind == K_TOP_HOT):
        return tstar * (1.0 - 1.0 / n_nodes)
    return offset


@njit(nogil=True, cache=True)
def policy_replay_batch(P, modes, coords, kinds, n_steps,
                        grid_coords, grid_off, mode_lo, mode_hi,
                        ustar, branch, n_nodes, out):
    """Replay the stopping rule over recorded chains.

    The policy only chooses when to stop, so campaign trajectories can be
    simulated once and replayed under any value table.  out rows:
    (tau, h, theta, reward, outcome).
    """
    n_traj = modes.shape[0]
    for i in range(n_traj):
        tau = 0.0
        hs = 0.0
        ths = 0.0
        rew = 0.0
        outcome = OUT_BUDGET
        for n in range(n_steps + 1):
            m = modes[i, n]
            h = np.float64(coords[i, n, 0])
            th = np.float64(coords[i, n, 1])
            t = np.float64(coords[i, n, 2])
            kind = kinds[i, n]
            if kind == K_TOP_DRY or kind == K_TOP_OVER or kind == K_TOP_HOT:
                tau = t
                hs = h
                ths = th
                rew = reward(h, th, t, P)
                outcome = OUT_TOP
                break
            if kind == K_HORIZON:
                tau = t
                hs = h
                ths = th
                rew = reward(h, th, t, P)
                outcome = OUT_HORIZON
                break
            s = np.float64(coords[i, n, 3])
            x0, x1, x2, x3 = norm4(h, th, t, s, P)
            lo = mode_lo[n, m]
            hi = mode_hi[n, m]
            if lo == hi:
                # unseen mode: conservative immediate maintenance
                tau = t
                hs = h
                ths = th
                rew = reward(h, th, t, P)
                outcome = OUT_FALLBACK
                break
            j = nearest_in_slice(grid_coords, grid_off[n] + lo, grid_off[n] + hi,
                                 x0, x1, x2, x3)
            if n == n_steps:
                # jump budget: maintenance forced at the Nth jump
                tau = t
                hs = h
                ths = th
                rew = reward(h, th, t, P)
                outcome = OUT_BUDGET
                break
            s_next = np.float64(coords[i, n + 1, 3])
            u = clamp_offset(m, h, th, t, ustar[j], n_nodes, P)
            if branch[j] == 1 and u <= s_next:
                h1, th1, t1 = flow_state(m, h, th, t, u, P)
                tau = t1
                hs = h1
                ths = th1
                rew = reward(h1, th1, t1, P)
                outcome = OUT_PLANNED
                break
        out[i, 0] = tau
        out[i, 1] = hs
        out[i, 2] = ths
        out[i, 3] = rew
        out[i, 4] = outcome
    return 0

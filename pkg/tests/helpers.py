"""Independent oracles used across the test suite.

These stay deliberately naive (enumeration, finite differences, brute-force
dynamic programming) so they cannot share bugs with the implementations they
check.
"""

import itertools

import numpy as np


def central_difference(fn, x, step=1e-4):
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        grad[i] = (fn(hi) - fn(lo)) / (2.0 * step)
    return grad


def box_vertices(lower, upper):
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    corners = []
    for picks in itertools.product(*[(lo, hi) for lo, hi in zip(lower, upper)]):
        corners.append(np.array(picks))
    return np.array(corners)


def brute_force_maxmin(p, f, g, w, u_box, d_box):
    """max_u min_d p.(f + g u + w d) by enumerating box vertices.

    Returns (value, u_vertex, d_vertex). The optimum of a linear objective
    over a box is attained at a vertex, so enumeration is exact.
    """
    base = float(p @ f)
    best_u, best_val = None, -np.inf
    d_verts = box_vertices(d_box.lower, d_box.upper)
    for u in box_vertices(u_box.lower, u_box.upper):
        inner_best, inner_d = np.inf, None
        for d in d_verts:
            val = float(p @ (g @ u) + p @ (w @ d))
            if val < inner_best:
                inner_best, inner_d = val, d
        if inner_best > best_val:
            best_val, best_u, best_d = inner_best, u, inner_d
    return base + best_val, best_u, best_d


def discrete_game_dp(ell_fn, xs, u_values, d_values, n_steps, dt, aggregation="min"):
    """Brute-force value iteration for the 1-D game xdot = u + d on a state grid.

    Player I (u) maximizes, Player II (d) minimizes; per-step play is
    min over d of max over u (the disturbance may react). aggregation
    selects the running min (avoid game) or running max (follow game)
    of the boundary values along the trajectory.

    Returns an array of per-step value slices, index k = k steps of
    exposure (k * dt of time-to-go).
    """
    xs = np.asarray(xs, dtype=float)
    ell = ell_fn(xs)
    combine = np.minimum if aggregation == "min" else np.maximum
    slices = [ell.copy()]
    v = ell.copy()
    for _ in range(n_steps):
        outer = None
        for d in d_values:
            inner = None
            for u in u_values:
                nxt = np.clip(xs + (u + d) * dt, xs[0], xs[-1])
                vu = np.interp(nxt, xs, v)
                inner = vu if inner is None else np.maximum(inner, vu)
            outer = inner if outer is None else np.minimum(outer, inner)
        v = combine(ell, outer)
        slices.append(v.copy())
    return np.array(slices)

"""Backward dynamic programming over the quantized chain.

The one-step operator improves a next-index value vector w at a grid point z
by comparing the best stop along the flow with pure continuation:

    max over u in the time grid of
        E[ w(Z+) 1{S+ < u} + g(flow(z, u)) 1{S+ >= u} ]
    versus  E[ w(Z+) ]

where (Z+, S+) is distributed by z's transition row, so the expectations are
finite weighted sums.  Time grids are path-adapted: nodes {0, d, ..., t*-d}
with d = t*(z)/n_nodes, keeping a strict margin below the boundary time.
Sweeping indices backward from v_N = g yields the approximate value function
and, per point, the maximizing date and winning branch that the online
stopping rule reads back.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from .base import ParamsMixin, check_is_fitted, check_positive_int
from .quantizer import ChainQuantizer, QuantizationGrid, denormalize_coords
from .tank import TankModel

BRANCH_CONTINUE = 0
BRANCH_STOP = 1


def build_time_grid(tstar: float, n_nodes: int) -> np.ndarray:
    """Nodes {0, d, 2d, ..., t*-d} with d = t*/n_nodes."""
    n_nodes = check_positive_int(n_nodes, "n_nodes")
    delta = tstar / n_nodes
    return np.arange(n_nodes) * delta


@dataclass
class ValueTable:
    """Per index and grid point: value, maximizing date offset, branch flag."""

    values: list[np.ndarray]
    u_star: list[np.ndarray]
    branch: list[np.ndarray]
    t_star: list[np.ndarray]
    n_nodes: int
    grids_digest: str
    reward_hash: str

    @property
    def v0(self) -> float:
        return float(self.values[0][0])

    @property
    def n_grids(self) -> int:
        return len(self.values)

    def flat_policy_arrays(self):
        ustar = np.concatenate(self.u_star)
        branch = np.concatenate(self.branch).astype(np.int8)
        return ustar, branch


def apply_step(P, grid: QuantizationGrid, next_grid: QuantizationGrid,
               w: np.ndarray, n_nodes: int, reward_scale: float = 1.0):
    """One backward sweep: value, maximizer and branch for every point of grid.

    w is the value vector on next_grid.  Returns (values, u_star, branch,
    t_star) arrays.
    """
    T = grid.transition
    if T is None:
        raise ValueError("grid has no transition matrix toward the next index")
    states = denormalize_coords(grid.coords, P)
    s_next = denormalize_coords(next_grid.coords, P)[:, 3]
    order = np.argsort(s_next, kind="stable")
    s_sorted = np.ascontiguousarray(s_next[order])
    Tw_c = np.ascontiguousarray(np.cumsum(T[:, order] * w[order][None, :], axis=1))
    Tp_c = np.ascontiguousarray(np.cumsum(T[:, order], axis=1))
    cont = T @ w

    k = grid.n_points
    values = np.empty(k)
    u_star = np.empty(k)
    branch = np.empty(k, dtype=np.int8)
    t_star = np.empty(k)
    for j in range(k):
        m = int(grid.modes[j])
        h, th, t = states[j, 0], states[j, 1], states[j, 2]
        if _k.is_absorbing(h, th, t, P):
            # the process is stopped here; its frozen self-map row is chain
            # bookkeeping, not a real continuation
            t_star[j] = 0.0
            values[j] = reward_scale * _k.reward(h, th, t, P)
            u_star[j] = 0.0
            branch[j] = BRANCH_STOP
            continue
        ts, _ = _k.boundary_time(m, h, th, t, P)
        stop_v, stop_u, _ = _k.stop_scan(P, m, h, th, t, ts, n_nodes,
                                         Tw_c[j], Tp_c[j], s_sorted,
                                         reward_scale)
        t_star[j] = ts
        if stop_v > cont[j]:
            values[j] = stop_v
            u_star[j] = stop_u
            branch[j] = BRANCH_STOP
        else:
            values[j] = cont[j]
            u_star[j] = 0.0
            branch[j] = BRANCH_CONTINUE
    return values, u_star, branch, t_star


def apply_L_hat(model: TankModel, mode: int, h: float, theta: float, t: float,
                trans_row: np.ndarray, next_values: np.ndarray,
                next_s: np.ndarray, n_nodes: int = 50):
    """One-point form of the backward operator, for direct inspection.

    trans_row is the point's transition row; next_values / next_s the value
    vector and inter-jump coordinates (hours) on the next grid.  Returns
    (value, u_star, branch).
    """
    P = model.params.as_array()
    trans_row = np.asarray(trans_row, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    next_s = np.asarray(next_s, dtype=np.float64)
    order = np.argsort(next_s, kind="stable")
    s_sorted = np.ascontiguousarray(next_s[order])
    a_cum = np.ascontiguousarray(np.cumsum(trans_row[order] * next_values[order]))
    p_cum = np.ascontiguousarray(np.cumsum(trans_row[order]))
    cont = float(trans_row @ next_values)
    if _k.is_absorbing(h, theta, t, P):
        ts = 0.0
    else:
        ts, _ = _k.boundary_time(mode, h, theta, t, P)
    stop_v, stop_u, _ = _k.stop_scan(P, mode, h, theta, t, ts, n_nodes,
                                     a_cum, p_cum, s_sorted, 1.0)
    if stop_v > cont:
        return stop_v, stop_u, BRANCH_STOP
    return cont, 0.0, BRANCH_CONTINUE


def backward_solve(grids: list[QuantizationGrid], model: TankModel,
                   n_nodes: int = 50, reward_scale: float = 1.0,
                   grids_digest: str = "") -> ValueTable:
    """Sweep the discretized operator backward from v_N = g."""
    P = model.params.as_array()
    N = len(grids) - 1
    values: list = [None] * (N + 1)
    u_star: list = [None] * (N + 1)
    branch: list = [None] * (N + 1)
    t_star: list = [None] * (N + 1)

    last = denormalize_coords(grids[N].coords, P)
    vN = np.array([reward_scale * _k.reward(h, th, t, P)
                   for h, th, t in zip(last[:, 0], last[:, 1], last[:, 2])])
    values[N] = vN
    u_star[N] = np.zeros(grids[N].n_points)
    branch[N] = np.full(grids[N].n_points, BRANCH_STOP, dtype=np.int8)
    t_star[N] = np.zeros(grids[N].n_points)

    for n in range(N - 1, -1, -1):
        values[n], u_star[n], branch[n], t_star[n] = apply_step(
            P, grids[n], grids[n + 1], values[n + 1], n_nodes, reward_scale)
    return ValueTable(values, u_star, branch, t_star, n_nodes,
                      grids_digest, model.params.reward_hash())


class ValueSolver(ParamsMixin):
    """Estimator wrapper: fit on a fitted quantizer, exposing table_ and v0_."""

    def __init__(self, n_nodes=50):
        self.n_nodes = n_nodes

    def fit(self, quantizer: ChainQuantizer, model: TankModel) -> "ValueSolver":
        check_is_fitted(quantizer, "grids_")
        if quantizer.dynamics_hash_ != model.params.dynamics_hash():
            from .errors import ArtifactMismatchError
            raise ArtifactMismatchError(
                "quantizer was fitted on different tank dynamics")
        self.table_ = backward_solve(quantizer.grids_, model,
                                     check_positive_int(self.n_nodes, "n_nodes"),
                                     grids_digest=quantizer.digest_)
        self.v0_ = self.table_.v0
        return self

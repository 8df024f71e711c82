"""Online stopping rule built from the stored maximizers.

At every jump the current (Z_n, S_n) is projected onto grid n and the
maximizer of the backward operator at that point is read off: if the stop
branch won, the next maintenance date is the stored offset from the current
jump time; otherwise the process runs to the next jump and the date is
recomputed there.  Maintenance is forced at the Nth jump or the time horizon,
whichever comes first.  The rule consumes only the history up to the current
jump, so the resulting date is a genuine stopping time.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k
from .errors import ArtifactMismatchError, ProjectionError
from .pdmp import HybridState, sample_next_jump
from .quantizer import ChainQuantizer
from .tank import TankModel
from .value import BRANCH_STOP, ValueTable

log = logging.getLogger(__name__)


@dataclass
class Decision:
    """Either wait for the next jump or stop offset hours after this one."""

    stop: bool
    offset: float = 0.0
    fallback: bool = False

    @property
    def runs_to_next_jump(self) -> bool:
        return not self.stop


@dataclass
class PolicyRun:
    tau: float
    h: float
    theta: float
    reward: float
    outcome: int
    events: list = field(default_factory=list)


def next_decision(table: ValueTable, quantizer: ChainQuantizer, n: int,
                  mode: int, h: float, theta: float, t: float,
                  s: float) -> Decision:
    """Decision after the n-th jump from the stored maximizer at grid n.

    A scheduled date is clamped inside the current flow when that flow runs
    into a top event (the projected point's maximizer can overshoot the true
    boundary time).  Unknown modes fall back to immediate maintenance
    (conservative, logged).
    """
    try:
        j = quantizer.project(n, mode, h, theta, t, s)
    except ProjectionError:
        log.warning("mode %d unseen on grid %d: falling back to immediate "
                    "maintenance", mode, n)
        return Decision(stop=True, offset=0.0, fallback=True)
    if table.branch[n][j] == BRANCH_STOP:
        P = quantizer.model_params_.as_array()
        offset = _k.clamp_offset(mode, h, theta, t,
                                 float(table.u_star[n][j]), table.n_nodes, P)
        return Decision(stop=True, offset=float(offset))
    return Decision(stop=False)


class StoppingPolicy:
    """Bundles model, fitted grids and value table behind the hash chain."""

    def __init__(self, model: TankModel, quantizer: ChainQuantizer,
                 table: ValueTable, check_hashes: bool = True):
        if check_hashes:
            if quantizer.dynamics_hash_ != model.params.dynamics_hash():
                raise ArtifactMismatchError(
                    "grids were built for different tank dynamics")
            if table.grids_digest and table.grids_digest != quantizer.digest_:
                raise ArtifactMismatchError(
                    "value table was solved on different grids")
            if table.reward_hash != model.params.reward_hash():
                raise ArtifactMismatchError(
                    "value table was solved for a different reward")
        self.model = model
        self.quantizer = quantizer
        self.table = table
        self._N = table.n_grids - 1

    def decide(self, n: int, mode: int, h: float, theta: float, t: float,
               s: float) -> Decision:
        return next_decision(self.table, self.quantizer, n, mode, h, theta, t, s)

    def run(self, rng: np.random.Generator) -> PolicyRun:
        """Live run: simulate the tank and stop it by the rule."""
        model = self.model
        state = model.initial_state()
        t = 0.0
        s = 0.0
        events = [(0, state.mode, *state.euclid, s)]
        n = 0
        while True:
            decision = self.decide(n, state.mode, state.euclid[0],
                                   state.euclid[1], state.euclid[2], s)
            if decision.fallback:
                return self._stopped(state, t, _k.OUT_FALLBACK, events)
            if n == self._N:
                return self._stopped(state, t, _k.OUT_BUDGET, events)
            sample, _kind = sample_next_jump(model, state, rng, jump_index=n + 1)
            if decision.stop and decision.offset <= sample.s:
                x = model.flow(state.mode, state.euclid, decision.offset)
                stopped = HybridState(state.mode, x)
                return self._stopped(stopped, t + decision.offset,
                                     _k.OUT_PLANNED, events)
            t += sample.s
            state = sample.z
            s = sample.s
            events.append((n + 1, state.mode, *state.euclid, s))
            if model.is_absorbing(state.mode, state.euclid):
                outcome = (_k.OUT_HORIZON
                           if model.is_time_horizon(state.mode, state.euclid)
                           else _k.OUT_TOP)
                return self._stopped(state, t, outcome, events)
            n += 1

    def _stopped(self, state: HybridState, tau: float, outcome: int,
                 events) -> PolicyRun:
        h, theta = float(state.euclid[0]), float(state.euclid[1])
        return PolicyRun(tau=tau, h=h, theta=theta,
                         reward=self.model.reward(
                             np.array([h, theta, tau])),
                         outcome=outcome, events=events)

    def replay(self, jumps) -> PolicyRun:
        """Run the rule over recorded jump events instead of a live simulator.

        ``jumps`` is an iterable of (t, mode, h, theta) rows: the initial
        state (t=0) followed by the post-jump states; absorbed runs must end
        with the boundary state.  Yields the same stopping time as a live run
        on that trajectory.
        """
        rows = [(float(t), int(m), float(h), float(th)) for t, m, h, th in jumps]
        if not rows:
            raise ValueError("replay needs at least the initial state")
        for n, (t, mode, h, theta) in enumerate(rows):
            state = np.array([h, theta, t])
            if self.model.is_absorbing(mode, state):
                outcome = (_k.OUT_HORIZON
                           if self.model.is_time_horizon(mode, state)
                           else _k.OUT_TOP)
                return self._stopped(HybridState(mode, state), t, outcome, rows)
            s = t - rows[n - 1][0] if n > 0 else 0.0
            decision = self.decide(n, mode, h, theta, t, s)
            if decision.fallback:
                return self._stopped(HybridState(mode, state), t,
                                     _k.OUT_FALLBACK, rows)
            if n == self._N or n == len(rows) - 1:
                # budget reached, or the recording ended while running: forced
                return self._stopped(HybridState(mode, state), t,
                                     _k.OUT_BUDGET, rows)
            t_next = rows[n + 1][0]
            if decision.stop and t + decision.offset <= t_next:
                x = self.model.flow(mode, state, decision.offset)
                return self._stopped(HybridState(mode, x), t + decision.offset,
                                     _k.OUT_PLANNED, rows)
        raise AssertionError("unreachable")

    def stream(self, lines):
        """Line-protocol decisions for externally simulated jump events.

        Input lines are ``t,mode,h,theta`` CSV records (comments with '#'),
        the first being the initial state.  For each record one reply is
        emitted: ``stop_at <absolute time>`` when a maintenance date is
        scheduled, ``continue`` to wait for the next jump, or ``stop_now``
        when maintenance is forced (absorbed, budget, or unseen mode).
        """
        n = 0
        t_prev = None
        for raw in lines:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise ValueError(f"bad record {line!r}: want t,mode,h,theta")
            t, h, theta = float(parts[0]), float(parts[2]), float(parts[3])
            mode = int(parts[1])
            state = np.array([h, theta, t])
            if self.model.is_absorbing(mode, state):
                yield "stop_now"
                return
            s = 0.0 if t_prev is None else t - t_prev
            decision = self.decide(n, mode, h, theta, t, s)
            if decision.fallback or n == self._N:
                yield "stop_now"
                return
            if decision.stop:
                yield f"stop_at {t + decision.offset:.12g}"
            else:
                yield "continue"
            t_prev = t
            n += 1


def run_policy(model: TankModel, table: ValueTable, quantizer: ChainQuantizer,
               rng: np.random.Generator) -> PolicyRun:
    """One live policy run; see StoppingPolicy.run."""
    return StoppingPolicy(model, quantizer, table).run(rng)

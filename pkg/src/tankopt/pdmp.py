"""Model-agnostic piecewise deterministic Markov processes.

A PDMP alternates deterministic flow with jumps that are either random
(intensity-driven) or forced (the flow reaches the domain boundary).  The
:class:`PdmpModel` contract carries the local characteristics; the functions
here are the exact event-driven simulator of trajectories and of the embedded
chain (Z_n, S_n).

Jump times are sampled by thinning: candidate times from a homogeneous
Poisson stream at the mode's constant intensity bound, accepted with
probability intensity/bound, truncated at the boundary time.  Every candidate
consumes fresh draws, so the law of the accepted time does not depend on the
bound (only the cost does).
"""
from __future__ import annotations

import abc
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import DomainExitError, ModelContractError


class JumpKind(Enum):
    RANDOM = "random"
    BOUNDARY = "boundary"


class TerminalCause(Enum):
    TOP_EVENT = "top_event"
    HORIZON = "horizon"
    JUMP_BUDGET = "jump_budget"


@dataclass
class HybridState:
    """Full PDMP state: discrete mode plus the Euclidean coordinates."""

    mode: int
    euclid: np.ndarray

    def __post_init__(self):
        self.euclid = np.asarray(self.euclid, dtype=float)

    def copy(self) -> "HybridState":
        return HybridState(self.mode, self.euclid.copy())


@dataclass
class JumpSample:
    """One step of the embedded chain: post-jump state and inter-jump time."""

    z: HybridState
    s: float
    jump_index: int
    kind: JumpKind


@dataclass
class Trajectory:
    """Embedded chain of one run plus how it ended.

    ``samples`` holds the kernel jumps (random failures and non-absorbing
    boundary jumps); ``terminal`` is the absorbing boundary step when the run
    died at a top event or the horizon, None when the jump budget ran out.
    """

    start: HybridState
    samples: list[JumpSample] = field(default_factory=list)
    terminal: JumpSample | None = None
    cause: TerminalCause = TerminalCause.JUMP_BUDGET

    @property
    def terminal_state(self) -> HybridState:
        if self.terminal is not None:
            return self.terminal.z
        if self.samples:
            return self.samples[-1].z
        return self.start

    @property
    def n_jumps(self) -> int:
        return len(self.samples) + (1 if self.terminal is not None else 0)


class PdmpModel(abc.ABC):
    """Local characteristics of a PDMP.

    Implementations must keep ``flow`` a true semigroup, ``boundary_time``
    consistent with the mode's domain, and ``intensity`` below
    ``intensity_bound`` along every flow in the mode.
    """

    @abc.abstractmethod
    def flow(self, mode: int, x: np.ndarray, u: float) -> np.ndarray:
        """Deterministic motion for u time units."""

    @abc.abstractmethod
    def boundary_time(self, mode: int, x: np.ndarray) -> float:
        """Time for the flow to reach the domain boundary (may be inf)."""

    @abc.abstractmethod
    def intensity(self, mode: int, x: np.ndarray) -> float:
        """Instantaneous random-jump rate at the state."""

    @abc.abstractmethod
    def intensity_bound(self, mode: int) -> float:
        """Finite rate dominating the intensity along any flow in the mode."""

    @abc.abstractmethod
    def kernel(self, mode: int, x: np.ndarray, kind: JumpKind,
               rng: np.random.Generator) -> tuple[int, np.ndarray]:
        """Post-jump draw; called at the jump location."""

    @abc.abstractmethod
    def is_absorbing(self, mode: int, x: np.ndarray) -> bool:
        """True where the process stops (kernel is never applied there)."""

    def is_time_horizon(self, mode: int, x: np.ndarray) -> bool:
        """Distinguishes the running-time boundary from genuine top events."""
        return False

    def boundary_state(self, mode: int, x: np.ndarray) -> tuple[np.ndarray, float]:
        """State at the domain boundary and the time to reach it.

        Models with exact threshold geometry should override this to snap the
        crossing coordinate, so that one-shot boundary semantics are robust to
        rounding; the default just flows for boundary_time.
        """
        ts = self.boundary_time(mode, x)
        return self.flow(mode, x, ts), ts


def flow_between(model: PdmpModel, state: HybridState, u: float) -> HybridState:
    """Pure deterministic motion from a state; refuses to leave the domain."""
    if u < 0:
        raise DomainExitError("negative flow duration")
    ts = model.boundary_time(state.mode, state.euclid)
    if u > ts * (1 + 1e-12) + 1e-12:
        raise DomainExitError(f"flow duration {u} exceeds boundary time {ts}")
    return HybridState(state.mode, model.flow(state.mode, state.euclid, u))


def sample_next_jump(model: PdmpModel, start: HybridState,
                     rng: np.random.Generator,
                     jump_index: int = 1) -> tuple[JumpSample, JumpKind]:
    """Draw the next jump of the chain from ``start`` by thinning.

    Random jump: the kernel is applied at the flow position of the accepted
    candidate.  Boundary jump: the state moves to the boundary point and the
    kernel is applied there unless the point is absorbing.
    """
    mode, x = start.mode, start.euclid
    if model.is_absorbing(mode, x):
        raise ValueError("sample_next_jump called on an absorbing state")
    tstar = model.boundary_time(mode, x)
    lbar = model.intensity_bound(mode)
    if not np.isfinite(lbar):
        raise ModelContractError("intensity_bound must be finite")
    tau = 0.0
    took_random = False
    while lbar > 0.0:
        tau += rng.exponential(1.0 / lbar)
        if tau >= tstar:
            break
        x_t = model.flow(mode, x, tau)
        if not np.all(np.isfinite(x_t)):
            raise ModelContractError("non-finite flow output")
        lam = model.intensity(mode, x_t)
        if lam > lbar * (1.0 + 1e-9):
            raise ModelContractError(
                f"intensity {lam} exceeds bound {lbar} in mode {mode}")
        if rng.random() * lbar < lam:
            took_random = True
            break
    if took_random:
        new_mode, new_x = model.kernel(mode, x_t, JumpKind.RANDOM, rng)
        return JumpSample(HybridState(new_mode, new_x), tau, jump_index,
                          JumpKind.RANDOM), JumpKind.RANDOM
    if not np.isfinite(tstar):
        raise ModelContractError(
            "zero intensity with an infinite boundary time never jumps")
    xb, ts = model.boundary_state(mode, x)
    if model.is_absorbing(mode, xb):
        return JumpSample(HybridState(mode, xb), ts, jump_index,
                          JumpKind.BOUNDARY), JumpKind.BOUNDARY
    new_mode, new_x = model.kernel(mode, xb, JumpKind.BOUNDARY, rng)
    return JumpSample(HybridState(new_mode, new_x), ts, jump_index,
                      JumpKind.BOUNDARY), JumpKind.BOUNDARY


def simulate_trajectory(model: PdmpModel, start: HybridState, max_jumps: int,
                        rng: np.random.Generator) -> Trajectory:
    """Chain jumps until absorption or the jump budget."""
    if max_jumps < 1:
        raise ValueError("max_jumps must be >= 1")
    traj = Trajectory(start=start.copy())
    state = start
    for j in range(1, max_jumps + 1):
        sample, kind = sample_next_jump(model, state, rng, jump_index=j)
        if model.is_absorbing(sample.z.mode, sample.z.euclid):
            traj.terminal = sample
            traj.cause = (TerminalCause.HORIZON
                          if model.is_time_horizon(sample.z.mode, sample.z.euclid)
                          else TerminalCause.TOP_EVENT)
            return traj
        traj.samples.append(sample)
        state = sample.z
    traj.cause = TerminalCause.JUMP_BUDGET
    return traj

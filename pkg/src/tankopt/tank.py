"""The heated hold-up tank model.

Three flow units (two inlet pumps, one outlet valve) keep the liquid level of
a heated tank between thresholds; unit failure rates grow with temperature,
the level drives the temperature, and a fallible controller switches the
units when the level crosses 6 m or 8 m.  The system dies at dry-out (4 m),
overflow (10 m), overheating (100 C) or the 1000 h horizon.

This module holds the parameter set, the mode encoding, scalar physics
wrappers around the compiled kernels, and the concrete PDMP model.
"""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import _kernels as _k
from .errors import ModelContractError, TankoptError
from .pdmp import HybridState, JumpKind, PdmpModel


class UnitState(IntEnum):
    ON = 0
    OFF = 1
    STUCK_ON = 2
    STUCK_OFF = 3

    @property
    def stuck(self) -> bool:
        return self >= 2


class ControllerState(IntEnum):
    FAILED = 0
    WORKING = 1


@dataclass(frozen=True)
class Mode:
    """Discrete regime: three unit positions plus controller health.

    Canonical integer encoding: unit1*32 + unit2*8 + unit3*2 + controller,
    with On=0, Off=1, StuckOn=2, StuckOff=3 and Working=1 / Failed=0.
    """

    unit1: UnitState
    unit2: UnitState
    unit3: UnitState
    controller: ControllerState

    def encode(self) -> int:
        return self.unit1 * 32 + self.unit2 * 8 + self.unit3 * 2 + self.controller

    @classmethod
    def decode(cls, code: int) -> "Mode":
        if not 0 <= code < 128:
            raise ValueError(f"mode code out of range: {code}")
        return cls(UnitState((code >> 5) & 3), UnitState((code >> 3) & 3),
                   UnitState((code >> 1) & 3), ControllerState(code & 1))

    @property
    def units(self) -> tuple[UnitState, UnitState, UnitState]:
        return (self.unit1, self.unit2, self.unit3)

    def __int__(self) -> int:
        return self.encode()


INITIAL_MODE = Mode(UnitState.ON, UnitState.OFF, UnitState.ON, ControllerState.WORKING)


@dataclass(frozen=True)
class TankParams:
    """All tank constants; defaults are the benchmark values."""

    b1: float = 3.0295
    b2: float = 0.7578
    bc: float = 0.05756
    bd: float = 0.2301
    theta_in: float = 15.0
    l1: float = 2.2831e-3
    l2: float = 2.8571e-3
    l3: float = 1.5625e-3
    G: float = 1.5
    K: float = 23.88915
    p_control: float = 0.8
    stuck_on_prob: float = 0.5
    alpha: float = 1.01
    h0: float = 7.0
    theta0: float = 30.9261
    h_dry: float = 4.0
    h_low: float = 6.0
    h_high: float = 8.0
    h_over: float = 10.0
    theta_hot: float = 100.0
    theta_floor: float = 15.0
    theta_norm_hi: float = 50.0
    t_horizon: float = 1000.0
    max_jumps: int = 26

    def __post_init__(self):
        for name in ("b1", "b2", "bc", "bd", "G", "K"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("l1", "l2", "l3"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 <= self.p_control <= 1.0:
            raise ValueError("p_control must be a probability")
        if not 0.0 <= self.stuck_on_prob <= 1.0:
            raise ValueError("stuck_on_prob must be a probability")
        if not (self.h_dry < self.h_low < self.h_high < self.h_over):
            raise ValueError("level thresholds must be ordered 4 < 6 < 8 < 10")
        if not (self.h_low < self.h0 < self.h_high):
            raise ValueError("h0 must sit strictly inside the normal band")
        if not (self.theta_floor <= self.theta0 < self.theta_hot):
            raise ValueError("theta0 must lie in [floor, hot)")
        if self.t_horizon <= 0 or self.max_jumps < 1:
            raise ValueError("horizon and jump budget must be positive")

    def as_array(self) -> np.ndarray:
        P = np.empty(_k.N_PARAMS, dtype=np.float64)
        P[_k.P_B1] = self.b1
        P[_k.P_B2] = self.b2
        P[_k.P_BC] = self.bc
        P[_k.P_BD] = self.bd
        P[_k.P_THETA_IN] = self.theta_in
        P[_k.P_L1] = self.l1
        P[_k.P_L2] = self.l2
        P[_k.P_L3] = self.l3
        P[_k.P_G] = self.G
        P[_k.P_K] = self.K
        P[_k.P_P_CONTROL] = self.p_control
        P[_k.P_STUCK_ON] = self.stuck_on_prob
        P[_k.P_H_DRY] = self.h_dry
        P[_k.P_H_LOW] = self.h_low
        P[_k.P_H_HIGH] = self.h_high
        P[_k.P_H_OVER] = self.h_over
        P[_k.P_THETA_HOT] = self.theta_hot
        P[_k.P_T_HORIZON] = self.t_horizon
        P[_k.P_ALPHA] = self.alpha
        P[_k.P_THETA_NORM] = self.theta_norm_hi
        P[_k.P_THETA_FLOOR] = self.theta_floor
        return P

    def replace(self, **kw) -> "TankParams":
        return dataclasses.replace(self, **kw)

    _REWARD_FIELDS = ("alpha", "theta_norm_hi")

    def _hash_fields(self, names) -> str:
        h = hashlib.sha256()
        for name in names:
            v = getattr(self, name)
            tok = v.hex() if isinstance(v, float) else str(v)
            h.update(f"{name}={tok};".encode())
        return h.hexdigest()[:16]

    def dynamics_hash(self) -> str:
        """Hash of everything the embedded chain's law depends on.

        Excludes the reward parameters, so quantization grids built for one
        reward remain valid for any other.
        """
        names = [f.name for f in dataclasses.fields(self)
                 if f.name not in self._REWARD_FIELDS]
        return self._hash_fields(names)

    def reward_hash(self) -> str:
        return self._hash_fields(self._REWARD_FIELDS)


# --- scalar physics (single shared implementation in _kernels) ----------------

def rate_multiplier(theta: float, params: TankParams) -> float:
    """Temperature modulation a of the failure rates (1 at 20 C, ~80 at 100 C)."""
    if not 0.0 <= theta <= params.theta_hot:
        raise ValueError("temperature outside [0, 100]")
    return float(_k.rate_multiplier(theta, params.as_array()))


def unit_intensity(unit: int, theta: float, mode: Mode | int, params: TankParams) -> float:
    """Failure intensity of one unit: a(theta) * l_i for live units, 0 if stuck."""
    code = int(mode)
    if _k.unit_state(code, unit) >= 2:
        return 0.0
    base = (params.l1, params.l2, params.l3)[unit]
    return rate_multiplier(theta, params) * base


def total_intensity(mode: Mode | int, theta: float, params: TankParams) -> float:
    return float(_k.total_rate(int(mode), theta, params.as_array()))


def flow(mode: Mode | int, h: float, theta: float, t: float, u: float,
         params: TankParams) -> tuple[float, float, float]:
    """Deterministic motion over u hours in a fixed mode (closed form)."""
    return _k.flow_state(int(mode), h, theta, t, u, params.as_array())


def boundary_time(mode: Mode | int, h: float, theta: float, t: float,
                  params: TankParams) -> tuple[float, int]:
    """(t*, boundary kind) for the current state; t* is always finite."""
    ts, kind = _k.boundary_time(int(mode), h, theta, t, params.as_array())
    return float(ts), int(kind)


def reward_shape(h: float, theta: float, params: TankParams) -> float:
    """Position factor of the reward: 1 on [6,8]x[15,50], 0 at top events."""
    return float(_k.reward_shape(h, theta, params.as_array()))


def reward(h: float, theta: float, t: float, params: TankParams) -> float:
    """Performance when stopping at (h, theta, t): shape(h, theta) * t**alpha."""
    return float(_k.reward(h, theta, t, params.as_array()))


def jump_kernel(mode: Mode | int, h: float, theta: float, t: float,
                kind: JumpKind, rng: np.random.Generator,
                params: TankParams) -> int:
    """Post-jump mode draw; the continuous coordinates are never touched.

    Random jumps stick one live unit (picked proportionally to its base rate)
    on or off; boundary jumps at 6 m / 8 m solicit the controller.  Absorbing
    boundaries must not reach the kernel.
    """
    P = params.as_array()
    code = int(mode)
    if kind == JumpKind.RANDOM:
        if _k.live_rate_sum(code, P) <= 0.0:
            raise TankoptError("random jump in a mode with no live units")
        return int(_k.apply_random_failure(code, P, rng))
    if abs(h - params.h_low) < 1e-9:
        return int(_k.apply_control(code, True, P, rng))
    if abs(h - params.h_high) < 1e-9:
        return int(_k.apply_control(code, False, P, rng))
    raise TankoptError(
        f"kernel invoked at a non-control boundary (h={h}, theta={theta}, t={t})")


class TankModel(PdmpModel):
    """Concrete PDMP for the tank; all numerics delegate to the shared kernels."""

    def __init__(self, params: TankParams | None = None):
        self.params = params or TankParams()
        self._P = self.params.as_array()

    # -- PdmpModel contract -----------------------------------------------
    def initial_state(self) -> HybridState:
        return HybridState(INITIAL_MODE.encode(),
                           np.array([self.params.h0, self.params.theta0, 0.0]))

    def flow(self, mode: int, x: np.ndarray, u: float) -> np.ndarray:
        h, th, t = _k.flow_state(mode, x[0], x[1], x[2], u, self._P)
        out = np.array([h, th, t])
        if not np.all(np.isfinite(out)):
            raise ModelContractError(f"non-finite flow output from {x} over {u} h")
        return out

    def boundary_time(self, mode: int, x: np.ndarray) -> float:
        ts, _ = _k.boundary_time(mode, x[0], x[1], x[2], self._P)
        return float(ts)

    def boundary_state(self, mode: int, x: np.ndarray) -> tuple[np.ndarray, float]:
        ts, kind = _k.boundary_time(mode, x[0], x[1], x[2], self._P)
        h, th, t = _k.boundary_state(mode, x[0], x[1], x[2], ts, kind, self._P)
        return np.array([h, th, t]), float(ts)

    def intensity(self, mode: int, x: np.ndarray) -> float:
        return float(_k.total_rate(mode, x[1], self._P))

    def intensity_bound(self, mode: int) -> float:
        return float(_k.rate_bound(mode, self._P))

    def kernel(self, mode: int, x: np.ndarray, kind: JumpKind,
               rng: np.random.Generator) -> tuple[int, np.ndarray]:
        new_mode = jump_kernel(mode, x[0], x[1], x[2], kind, rng, self.params)
        return new_mode, x

    def is_absorbing(self, mode: int, x: np.ndarray) -> bool:
        return bool(_k.is_absorbing(x[0], x[1], x[2], self._P))

    def is_time_horizon(self, mode: int, x: np.ndarray) -> bool:
        return x[2] >= self.params.t_horizon - 1e-9

    # -- extras -------------------------------------------------------------
    def reward(self, x: np.ndarray) -> float:
        return float(_k.reward(x[0], x[1], x[2], self._P))

    def top_event_kind(self, x: np.ndarray) -> int | None:
        """Which absorbing boundary the state sits on, if any."""
        p = self.params
        if x[0] <= p.h_dry + 1e-9:
            return _k.K_TOP_DRY
        if x[0] >= p.h_over - 1e-9:
            return _k.K_TOP_OVER
        if x[1] >= p.theta_hot - 1e-9:
            return _k.K_TOP_HOT
        if x[2] >= p.t_horizon - 1e-9:
            return _k.K_HORIZON
        return None


# --- reachable-mode enumeration ------------------------------------------------

#: level regions used by the reachability search: the three open bands plus
#: the two control thresholds as degenerate points
_ATOMS = ("(4,6)", "{6}", "(6,8)", "{8}", "(8,10)")
_A_BELOW, _A_LOW, _A_MID, _A_HIGH, _A_ABOVE = range(5)


@dataclass(frozen=True)
class ReachabilityReport:
    modes: frozenset[int]
    depth_counts: tuple[int, ...]
    depth_sets: tuple[frozenset[int], ...]

    @property
    def total(self) -> int:
        return len(self.modes)


def reachable_modes(params: TankParams | None = None,
                    max_depth: int | None = None) -> ReachabilityReport:
    """Exhaustive search of the jump graph from the equilibrium start.

    Abstract states are (mode, level region); that abstraction is exact for
    mode reachability because failure successors do not depend on the level
    and control availability depends only on the flow direction, the
    controller state, and which side of 6 m / 8 m the level is on.  Control
    crossings are one-shot (strictly positive crossing time) and directional:
    6 m fires falling, 8 m fires rising, both only while the controller works.
    """
    params = params or TankParams()
    depth = params.max_jumps if max_depth is None else max_depth
    branch_fail = params.p_control < 1.0
    branch_success = params.p_control > 0.0
    stuck_targets = []
    if params.stuck_on_prob > 0.0:
        stuck_targets.append(UnitState.STUCK_ON)
    if params.stuck_on_prob < 1.0:
        stuck_targets.append(UnitState.STUCK_OFF)

    def successors(code: int, atom: int) -> set[tuple[int, int]]:
        c, _ = _k.flow_counts(code)
        working = bool(code & 1)
        out: set[tuple[int, int]] = set()

        def fail_into(atoms):
            for i in range(3):
                if _k.unit_state(code, i) >= 2:
                    continue
                for tgt in stuck_targets:
                    m2 = _k.set_unit(code, i, int(tgt))
                    for a2 in atoms:
                        out.add((int(m2), a2))

        def control(at_low: bool, at_atom: int):
            if branch_success:
                t = (0, 0, 1) if at_low else (1, 1, 0)
                m2 = code
                for i in range(3):
                    if _k.unit_state(m2, i) < 2:
                        m2 = _k.set_unit(m2, i, t[i])
                out.add((int(m2), at_atom))
            if branch_fail:
                out.add((code & ~1, at_atom))

        if c > 0:
            if working and atom in (_A_BELOW, _A_LOW, _A_MID):
                swept = {_A_BELOW: (_A_BELOW, _A_MID),
                         _A_LOW: (_A_MID,),
                         _A_MID: (_A_MID,)}[atom]
                fail_into(swept)
                control(False, _A_HIGH)
            else:
                swept = {_A_BELOW: (_A_BELOW, _A_MID, _A_ABOVE),
                         _A_LOW: (_A_MID, _A_ABOVE),
                         _A_MID: (_A_MID, _A_ABOVE),
                         _A_HIGH: (_A_ABOVE,),
                         _A_ABOVE: (_A_ABOVE,)}[atom]
                fail_into(swept)
        elif c < 0:
            if working and atom in (_A_MID, _A_HIGH, _A_ABOVE):
                swept = {_A_ABOVE: (_A_ABOVE, _A_MID),
                         _A_HIGH: (_A_MID,),
                         _A_MID: (_A_MID,)}[atom]
                fail_into(swept)
                control(True, _A_LOW)
            else:
                swept = {_A_ABOVE: (_A_ABOVE, _A_MID, _A_BELOW),
                         _A_HIGH: (_A_MID, _A_BELOW),
                         _A_MID: (_A_MID, _A_BELOW),
                         _A_LOW: (_A_BELOW,),
                         _A_BELOW: (_A_BELOW,)}[atom]
                fail_into(swept)
        else:
            fail_into((atom,))
        return out

    level: set[tuple[int, int]] = {(INITIAL_MODE.encode(), _A_MID)}
    depth_sets: list[frozenset[int]] = []
    for _ in range(depth + 1):
        depth_sets.append(frozenset(m for m, _a in level))
        nxt: set[tuple[int, int]] = set()
        for code, atom in level:
            nxt |= successors(code, atom)
        level = nxt

    all_modes: set[int] = set()
    for s in depth_sets:
        all_modes |= s
    return ReachabilityReport(frozenset(all_modes),
                              tuple(len(s) for s in depth_sets),
                              tuple(depth_sets))

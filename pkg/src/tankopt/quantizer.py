"""Vector quantization of the embedded chain (Z_n, S_n).

One codebook per jump index, stratified by mode: points are allocated to the
modes observed during a calibration run proportionally to their frequency
(with a floor of one point per observed mode), trained by competitive
learning (stochastic-gradient nearest-neighbor attraction), then weighted and
linked by transition matrices estimated from a frozen pass of fresh
simulations.  Grids depend only on the dynamics, never on the reward.

Coordinates are normalized to [0,1]^4 with fixed affine maps (level over
[4,10], temperature over [15,100], running and inter-jump time over
[0,1000]) so that no coordinate dominates the metric.
"""
from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _kernels as _k
from . import rng as _rng
from .base import ParamsMixin, check_is_fitted, check_positive_int
from .errors import ModelContractError, ProjectionError
from .tank import TankModel

N_MODES = 128


@dataclass
class ChainBank:
    """Simulated embedded-chain sample block.

    modes[i, n] is the post-jump mode, coords[i, n] = (h, theta, t, s), and
    kinds[i, n] the event code, for trajectory i at jump index n.
    """

    modes: np.ndarray
    coords: np.ndarray
    kinds: np.ndarray

    @property
    def n_traj(self) -> int:
        return self.modes.shape[0]

    @property
    def n_steps(self) -> int:
        return self.modes.shape[1] - 1


def sample_chain_bank(model: TankModel, n_traj: int, *, seed: int = 0,
                      path: tuple = ("bank",), chunk_size: int = 1 << 17,
                      threads: int = 1) -> ChainBank:
    """Simulate n_traj embedded chains with the batch engine.

    Chunks are driven by independent counter-based streams keyed on the chunk
    index, so results do not depend on the thread schedule.
    """
    n_traj = check_positive_int(n_traj, "n_traj")
    n_steps = model.params.max_jumps
    modes = np.empty((n_traj, n_steps + 1), dtype=np.uint8)
    coords = np.empty((n_traj, n_steps + 1, 4), dtype=np.float32)
    kinds = np.empty((n_traj, n_steps + 1), dtype=np.uint8)
    P = model.params.as_array()
    m0 = model.initial_state().mode
    h0, th0 = model.params.h0, model.params.theta0

    spans = [(lo, min(lo + chunk_size, n_traj))
             for lo in range(0, n_traj, chunk_size)]

    def run_chunk(ci: int):
        lo, hi = spans[ci]
        gen = _rng.philox(seed, *path, "chunk", ci)
        bad = _k.chain_batch(P, m0, h0, th0, n_steps, gen,
                             modes[lo:hi], coords[lo:hi], kinds[lo:hi])
        if bad >= 0:
            raise ModelContractError(
                f"intensity exceeded its bound in trajectory {lo + bad}")

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_chunk, range(len(spans))))
    else:
        for ci in range(len(spans)):
            run_chunk(ci)
    return ChainBank(modes, coords, kinds)


def normalize_coords(coords: np.ndarray, P: np.ndarray) -> np.ndarray:
    """Affine map of raw (h, theta, t, s) rows onto [0,1]^4."""
    out = np.empty(coords.shape, dtype=np.float64)
    out[..., 0] = (coords[..., 0] - P[_k.P_H_DRY]) / (P[_k.P_H_OVER] - P[_k.P_H_DRY])
    out[..., 1] = ((coords[..., 1] - P[_k.P_THETA_FLOOR])
                   / (P[_k.P_THETA_HOT] - P[_k.P_THETA_FLOOR]))
    out[..., 2] = coords[..., 2] / P[_k.P_T_HORIZON]
    out[..., 3] = coords[..., 3] / P[_k.P_T_HORIZON]
    return out


def denormalize_coords(coords: np.ndarray, P: np.ndarray) -> np.ndarray:
    out = np.empty(coords.shape, dtype=np.float64)
    out[..., 0] = coords[..., 0] * (P[_k.P_H_OVER] - P[_k.P_H_DRY]) + P[_k.P_H_DRY]
    out[..., 1] = (coords[..., 1] * (P[_k.P_THETA_HOT] - P[_k.P_THETA_FLOOR])
                   + P[_k.P_THETA_FLOOR])
    out[..., 2] = coords[..., 2] * P[_k.P_T_HORIZON]
    out[..., 3] = coords[..., 3] * P[_k.P_T_HORIZON]
    return out


@dataclass(frozen=True)
class GridPoint:
    """One codebook entry (normalized coordinates)."""

    mode: int
    coords: np.ndarray
    weight: float


@dataclass
class QuantizationGrid:
    """Codebook of one jump index.

    Points are stored sorted by mode; mode_lo/mode_hi index the slice of each
    mode integer.  ``transition`` is the row-stochastic matrix toward the next
    index's grid (None on the last grid).
    """

    index: int
    modes: np.ndarray
    coords: np.ndarray
    weights: np.ndarray
    mode_lo: np.ndarray
    mode_hi: np.ndarray
    transition: np.ndarray | None = None

    @property
    def n_points(self) -> int:
        return len(self.modes)

    def mode_set(self) -> set[int]:
        return set(int(m) for m in np.unique(self.modes))

    def points(self):
        for j in range(self.n_points):
            yield GridPoint(int(self.modes[j]), self.coords[j].copy(),
                            float(self.weights[j]))

    def project(self, mode: int, xnorm: np.ndarray) -> int:
        """Nearest same-mode point (index into this grid); lowest index wins ties."""
        lo, hi = int(self.mode_lo[mode]), int(self.mode_hi[mode])
        if lo == hi:
            raise ProjectionError(
                f"grid {self.index} has no points in mode {mode}")
        j = _k.nearest_in_slice(self.coords, lo, hi,
                                xnorm[0], xnorm[1], xnorm[2], xnorm[3])
        return int(j)


def _mode_slices(modes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    lo = np.searchsorted(modes, np.arange(N_MODES), side="left").astype(np.int32)
    hi = np.searchsorted(modes, np.arange(N_MODES), side="right").astype(np.int32)
    return lo, hi


def _allocate(k: int, counts: np.ndarray) -> np.ndarray:
    """Largest-remainder allocation of k points with a floor of 1 per stratum."""
    observed = np.flatnonzero(counts)
    freq = counts[observed] / counts.sum()
    base = np.maximum(1, np.floor(k * freq)).astype(np.int64)
    rem = k * freq - np.floor(k * freq)
    total = int(base.sum())
    if total < k:
        for idx in np.argsort(-rem, kind="stable"):
            if total == k:
                break
            base[idx] += 1
            total += 1
        while total < k:  # fewer strata than leftover points: round-robin
            for idx in np.argsort(-freq, kind="stable"):
                if total == k:
                    break
                base[idx] += 1
                total += 1
    elif total > k:
        order = np.argsort(-base, kind="stable")
        while total > k:
            shrunk = False
            for idx in order:
                if total == k:
                    break
                if base[idx] > 1:
                    base[idx] -= 1
                    total -= 1
                    shrunk = True
            if not shrunk:
                break  # every observed stratum at the floor: accept total > k
    alloc = np.zeros(len(counts), dtype=np.int64)
    alloc[observed] = base
    return alloc


class ChainQuantizer(ParamsMixin):
    """Mode-stratified codebooks of the embedded chain, one per jump index.

    Parameters follow the estimator convention: configure in the constructor,
    then ``fit(model)`` simulates, trains and freezes the grids into the
    ``grids_`` attribute.  Pre-simulated banks can be passed to ``fit`` to
    share them between quantizers.
    """

    def __init__(self, n_points=1000, calib_sims=1_000_000,
                 train_sims=1_000_000, freeze_sims=1_000_000,
                 gamma0=0.5, decay=1e-3, chunk_size=1 << 17, threads=1,
                 random_state=0):
        self.n_points = n_points
        self.calib_sims = calib_sims
        self.train_sims = train_sims
        self.freeze_sims = freeze_sims
        self.gamma0 = gamma0
        self.decay = decay
        self.chunk_size = chunk_size
        self.threads = threads
        self.random_state = random_state

    # -- fitting ------------------------------------------------------------
    def fit(self, model: TankModel, calib_bank: ChainBank | None = None,
            train_bank: ChainBank | None = None,
            freeze_bank: ChainBank | None = None) -> "ChainQuantizer":
        k = check_positive_int(self.n_points, "n_points")
        P = model.params.as_array()
        seed = int(self.random_state)

        if calib_bank is None:
            calib_bank = sample_chain_bank(
                model, check_positive_int(self.calib_sims, "calib_sims"),
                seed=seed, path=("quantizer", "calib"),
                chunk_size=self.chunk_size, threads=self.threads)
        grids = self._stratified_init(model, calib_bank, k,
                                      _rng.philox(seed, "quantizer", "init"))
        del calib_bank

        if train_bank is None:
            train_bank = sample_chain_bank(
                model, check_positive_int(self.train_sims, "train_sims"),
                seed=seed, path=("quantizer", "train"),
                chunk_size=self.chunk_size, threads=self.threads)
        self._patch_coverage(grids, train_bank, P)
        self._train(grids, train_bank, P)
        del train_bank

        if freeze_bank is None:
            freeze_bank = sample_chain_bank(
                model, check_positive_int(self.freeze_sims, "freeze_sims"),
                seed=seed, path=("quantizer", "freeze"),
                chunk_size=self.chunk_size, threads=self.threads)
        self._patch_coverage(grids, freeze_bank, P)
        distortion = self._freeze(grids, freeze_bank, P)

        self.grids_ = grids
        self.distortion_ = distortion
        self.n_grids_ = len(grids)
        self.model_params_ = model.params
        self.dynamics_hash_ = model.params.dynamics_hash()
        self.digest_ = grids_digest(grids)
        return self

    def _stratified_init(self, model, bank: ChainBank, k: int,
                         gen: np.random.Generator) -> list[QuantizationGrid]:
        P = model.params.as_array()
        n_steps = bank.n_steps
        grids: list[QuantizationGrid] = []

        # the chain starts deterministically: one point, full weight
        x0 = normalize_coords(
            np.array([[model.params.h0, model.params.theta0, 0.0, 0.0]]), P)
        lo, hi = _mode_slices(np.array([model.initial_state().mode], dtype=np.int64))
        grids.append(QuantizationGrid(0, np.array([model.initial_state().mode],
                                                  dtype=np.int32),
                                      x0, np.array([1.0]), lo, hi))

        for n in range(1, n_steps + 1):
            mode_col = bank.modes[:, n].astype(np.int64)
            c = bank.coords[:, n, :]
            # stratify by (mode, stopped-flag): absorbed states are point
            # masses in the level/temperature/time coordinates and must not
            # share codebook points with live states of the same mode
            dead = (
                (c[:, 0] <= P[_k.P_H_DRY] + 1e-9)
                | (c[:, 0] >= P[_k.P_H_OVER] - 1e-9)
                | (c[:, 1] >= P[_k.P_THETA_HOT] - 1e-9)
                | (c[:, 2] >= P[_k.P_T_HORIZON] - 1e-9))
            key = mode_col + N_MODES * dead
            counts = np.bincount(key, minlength=2 * N_MODES)
            alloc = _allocate(k, counts)
            modes_list = []
            coords_list = []
            for kk in np.flatnonzero(alloc):
                rows = np.flatnonzero(key == kk)
                take = int(alloc[kk])
                pick = gen.choice(rows, size=take, replace=take > len(rows))
                modes_list.append(np.full(take, kk % N_MODES, dtype=np.int32))
                coords_list.append(
                    normalize_coords(bank.coords[pick, n, :].astype(np.float64), P))
            modes = np.concatenate(modes_list)
            coords = np.concatenate(coords_list, axis=0)
            order = np.argsort(modes, kind="stable")
            modes = modes[order]
            coords = np.ascontiguousarray(coords[order])
            lo, hi = _mode_slices(modes)
            weights = np.full(len(modes), 1.0 / len(modes))
            grids.append(QuantizationGrid(n, modes, coords, weights, lo, hi))
        return grids

    def _patch_coverage(self, grids: list[QuantizationGrid], bank: ChainBank, P):
        """Guarantee one point per (index, mode) cell the bank visits.

        Codebooks must cover every mode the nearest-neighbor passes will see;
        the calibration run can miss cells rarer than ~1/calib_sims, so any
        cell first observed in a later bank gets one point seeded at its first
        sample.  Projection of externally supplied data onto the fitted grids
        still fails loudly on unknown modes.
        """
        for n in range(1, bank.n_steps + 1):
            g = grids[n]
            mode_col = bank.modes[:, n].astype(np.int64)
            missing = [m for m in np.unique(mode_col)
                       if g.mode_lo[m] == g.mode_hi[m]]
            if not missing:
                continue
            add_modes = []
            add_coords = []
            for m in missing:
                row = int(np.flatnonzero(mode_col == m)[0])
                add_modes.append(m)
                add_coords.append(normalize_coords(
                    bank.coords[row, n, :].astype(np.float64), P))
            modes = np.concatenate([g.modes, np.array(add_modes, dtype=np.int32)])
            coords = np.concatenate([g.coords, np.stack(add_coords)], axis=0)
            order = np.argsort(modes, kind="stable")
            g.modes = modes[order]
            g.coords = np.ascontiguousarray(coords[order])
            g.weights = np.full(len(g.modes), 1.0 / len(g.modes))
            g.mode_lo, g.mode_hi = _mode_slices(g.modes)

    def _train(self, grids: list[QuantizationGrid], bank: ChainBank, P):
        gamma0 = float(self.gamma0)
        decay = float(self.decay)
        for n in range(1, bank.n_steps + 1):
            g = grids[n]
            mode_col = bank.modes[:, n].astype(np.int64)
            order = np.argsort(mode_col, kind="stable")
            sorted_modes = mode_col[order]
            starts = np.searchsorted(sorted_modes, np.arange(N_MODES), side="left")
            ends = np.searchsorted(sorted_modes, np.arange(N_MODES), side="right")
            for m in np.unique(sorted_modes):
                lo, hi = int(g.mode_lo[m]), int(g.mode_hi[m])
                if lo == hi:
                    raise ProjectionError(
                        f"training sample in mode {int(m)} at index {n} has no "
                        f"grid point; increase calib_sims so rare modes are "
                        f"observed during initialization")
                rows = order[starts[m]:ends[m]]
                samples = normalize_coords(
                    bank.coords[rows, n, :].astype(np.float64), P)
                cell = g.coords[lo:hi]
                _k.clvq_pass(cell, samples, gamma0, decay, 0)

    def _freeze(self, grids: list[QuantizationGrid], bank: ChainBank, P):
        n_steps = bank.n_steps
        n_traj = bank.n_traj
        assignments = np.empty((n_traj, n_steps + 1), dtype=np.int64)
        distortion = np.zeros(n_steps + 1)
        for n in range(n_steps + 1):
            g = grids[n]
            idx = np.empty(n_traj, dtype=np.int64)
            _k.assign_batch(P, bank.modes[:, n], bank.coords[:, n, :],
                            g.coords, g.mode_lo, g.mode_hi, idx)
            if np.any(idx < 0):
                m = int(bank.modes[np.argmax(idx < 0), n])
                raise ProjectionError(
                    f"freeze sample in mode {m} at index {n} has no grid "
                    f"point; increase calib_sims")
            assignments[:, n] = idx
            sq, matched = _k.distortion_batch(P, bank.modes[:, n],
                                              bank.coords[:, n, :],
                                              g.coords, g.mode_lo, g.mode_hi)
            distortion[n] = sq / max(matched, 1)

        for n in range(n_steps + 1):
            g = grids[n]
            counts = np.bincount(assignments[:, n], minlength=g.n_points)
            g.weights = counts / n_traj
            if n < n_steps:
                nxt = grids[n + 1]
                T = np.zeros((g.n_points, nxt.n_points))
                np.add.at(T, (assignments[:, n], assignments[:, n + 1]), 1.0)
                row = T.sum(axis=1)
                visited = row > 0
                T[visited] /= row[visited, None]
                for j in np.flatnonzero(~visited):
                    T[j] = self._self_map_row(grids, n, j, P)
                g.transition = T
        return distortion

    @staticmethod
    def _self_map_row(grids, n, j, P):
        """Transition row for a never-visited point: its own frozen successor."""
        g, nxt = grids[n], grids[n + 1]
        row = np.zeros(nxt.n_points)
        m = int(g.modes[j])
        x = g.coords[j].copy()
        x[3] = 0.0  # frozen successor repeats the state with s = 0
        lo, hi = int(nxt.mode_lo[m]), int(nxt.mode_hi[m])
        if lo == hi:
            row[:] = 1.0 / nxt.n_points
        else:
            tgt = _k.nearest_in_slice(nxt.coords, lo, hi, x[0], x[1], x[2], x[3])
            row[tgt] = 1.0
        return row

    # -- use ------------------------------------------------------------------
    def project(self, n: int, mode: int, h: float, theta: float, t: float,
                s: float) -> int:
        """Grid-point index of the nearest same-mode point at jump index n."""
        check_is_fitted(self, "grids_")
        P = self.model_params_.as_array()
        x = normalize_coords(np.array([[h, theta, t, s]]), P)[0]
        return self.grids_[n].project(int(mode), x)

    def transform(self, bank: ChainBank) -> np.ndarray:
        """Nearest-neighbor assignments of a bank onto the fitted grids."""
        check_is_fitted(self, "grids_")
        P = self.model_params_.as_array()
        out = np.empty((bank.n_traj, bank.n_steps + 1), dtype=np.int64)
        for n in range(bank.n_steps + 1):
            g = self.grids_[n]
            idx = np.empty(bank.n_traj, dtype=np.int64)
            _k.assign_batch(P, bank.modes[:, n], bank.coords[:, n, :],
                            g.coords, g.mode_lo, g.mode_hi, idx)
            if np.any(idx < 0):
                raise ProjectionError("bank contains modes unknown to the grids")
            out[:, n] = idx
        return out

    def distortion(self, bank: ChainBank) -> np.ndarray:
        """Per-index mean squared projection error of a bank."""
        check_is_fitted(self, "grids_")
        P = self.model_params_.as_array()
        out = np.zeros(bank.n_steps + 1)
        for n in range(bank.n_steps + 1):
            g = self.grids_[n]
            sq, matched = _k.distortion_batch(P, bank.modes[:, n],
                                              bank.coords[:, n, :],
                                              g.coords, g.mode_lo, g.mode_hi)
            out[n] = sq / max(matched, 1)
        return out

    def flat_arrays(self):
        """Concatenated grid arrays for the compiled policy-replay kernel."""
        check_is_fitted(self, "grids_")
        sizes = [g.n_points for g in self.grids_]
        off = np.zeros(len(sizes) + 1, dtype=np.int64)
        off[1:] = np.cumsum(sizes)
        coords = np.concatenate([g.coords for g in self.grids_], axis=0)
        mode_lo = np.stack([g.mode_lo for g in self.grids_])
        mode_hi = np.stack([g.mode_hi for g in self.grids_])
        return coords, off, mode_lo, mode_hi


def grids_digest(grids: list[QuantizationGrid]) -> str:
    """Stable content digest of a grid stack (used for the artifact chain)."""
    h = hashlib.sha256()
    for g in grids:
        h.update(np.int64(g.index).tobytes())
        h.update(np.ascontiguousarray(g.modes, dtype=np.int32).tobytes())
        h.update(np.ascontiguousarray(g.coords, dtype=np.float64).tobytes())
        h.update(np.ascontiguousarray(g.weights, dtype=np.float64).tobytes())
        if g.transition is not None:
            h.update(np.ascontiguousarray(g.transition, dtype=np.float64).tobytes())
    return h.hexdigest()[:16]


def train_codebook(samples: np.ndarray, n_codes: int, gamma0: float = 0.5,
                   decay: float = 1e-3, init: np.ndarray | None = None,
                   rng: np.random.Generator | None = None) -> np.ndarray:
    """Standalone CLVQ codebook on raw vectors (any dimension)."""
    samples = np.ascontiguousarray(samples, dtype=np.float64)
    gen = _rng.as_generator(rng)
    if init is None:
        pick = gen.choice(len(samples), size=n_codes,
                          replace=n_codes > len(samples))
        init = samples[pick]
    codes = np.ascontiguousarray(init, dtype=np.float64).copy()
    _k.clvq_pass_nd(codes, samples, float(gamma0), float(decay), 0)
    return codes


def codebook_distortion(codes: np.ndarray, samples: np.ndarray,
                        chunk: int = 65536) -> float:
    """Mean squared distance of samples to their nearest code vector."""
    codes = np.asarray(codes, dtype=np.float64)
    total = 0.0
    for lo in range(0, len(samples), chunk):
        block = np.asarray(samples[lo:lo + chunk], dtype=np.float64)
        d = ((block[:, None, :] - codes[None, :, :]) ** 2).sum(axis=2)
        total += d.min(axis=1).sum()
    return total / len(samples)

"""Monte Carlo campaigns: no-maintenance baseline, policy evaluation, and the
per-jump-index mode census, with fixed-bin histograms ready for CSV export."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as _k
from . import rng as _rng
from .base import check_is_fitted, check_positive_int
from .errors import ModelContractError
from .quantizer import ChainQuantizer, sample_chain_bank
from .tank import TankModel, reachable_modes
from .value import ValueTable

#: fixed histogram bin edges, so exported CSVs diff cleanly across runs;
#: exact endpoints keep boundary values (h=10, theta=100, tau=1000) in range
TAU_EDGES = np.linspace(0.0, 1000.0, 101)
H_EDGES = np.linspace(4.0, 10.0, 61)
THETA_EDGES = np.linspace(15.0, 100.0, 86)


@dataclass
class CampaignStats:
    """Aggregates of one campaign (baseline or policy)."""

    n_runs: int
    mean_reward: float
    stderr_reward: float
    frac_null: float
    frac_h_band: float
    frac_theta_cool: float
    frac_top_dry: float
    frac_top_over: float
    frac_top_hot: float
    frac_horizon: float
    frac_budget: float
    frac_planned: float
    frac_fallback: float
    frac_at_horizon_time: float
    hist_tau: np.ndarray = field(repr=False)
    hist_h: np.ndarray = field(repr=False)
    hist_theta: np.ndarray = field(repr=False)

    @property
    def frac_top_total(self) -> float:
        return self.frac_top_dry + self.frac_top_over + self.frac_top_hot

    def summary_row(self) -> dict:
        return {k: getattr(self, k) for k in (
            "n_runs", "mean_reward", "stderr_reward", "frac_null",
            "frac_h_band", "frac_theta_cool", "frac_top_dry", "frac_top_over",
            "frac_top_hot", "frac_horizon", "frac_budget", "frac_planned",
            "frac_fallback", "frac_at_horizon_time")}


def _aggregate(rewards, h, theta, tau, cause_masks, n_runs, params,
               frac_planned=0.0, frac_fallback=0.0) -> CampaignStats:
    mean = float(rewards.mean())
    stderr = float(rewards.std(ddof=1) / np.sqrt(n_runs)) if n_runs > 1 else 0.0
    return CampaignStats(
        n_runs=n_runs,
        mean_reward=mean,
        stderr_reward=stderr,
        frac_null=float((rewards == 0.0).mean()),
        frac_h_band=float(((h >= params.h_low) & (h <= params.h_high)).mean()),
        frac_theta_cool=float((theta <= params.theta_norm_hi).mean()),
        frac_top_dry=cause_masks["dry"],
        frac_top_over=cause_masks["over"],
        frac_top_hot=cause_masks["hot"],
        frac_horizon=cause_masks["horizon"],
        frac_budget=cause_masks["budget"],
        frac_planned=frac_planned,
        frac_fallback=frac_fallback,
        frac_at_horizon_time=float((tau >= params.t_horizon - 1e-9).mean()),
        hist_tau=np.histogram(tau, bins=TAU_EDGES)[0],
        hist_h=np.histogram(h, bins=H_EDGES)[0],
        hist_theta=np.histogram(theta, bins=THETA_EDGES)[0],
    )


def baseline_campaign(model: TankModel, n_runs: int, seed: int = 0,
                      chunk_size: int = 1 << 17) -> CampaignStats:
    """Run the tank with no maintenance and score the terminal states."""
    n_runs = check_positive_int(n_runs, "n_runs")
    P = model.params.as_array()
    m0 = model.initial_state().mode
    out = np.empty((n_runs, 5))
    for ci, lo in enumerate(range(0, n_runs, chunk_size)):
        hi = min(lo + chunk_size, n_runs)
        gen = _rng.philox(seed, "baseline", "chunk", ci)
        bad = _k.baseline_batch(P, m0, model.params.h0, model.params.theta0,
                                model.params.max_jumps, gen, out[lo:hi])
        if bad >= 0:
            raise ModelContractError("intensity exceeded its bound")
    cause = out[:, 4].astype(int)
    masks = {
        "dry": float((cause == _k.K_TOP_DRY).mean()),
        "over": float((cause == _k.K_TOP_OVER).mean()),
        "hot": float((cause == _k.K_TOP_HOT).mean()),
        "horizon": float((cause == _k.K_HORIZON).mean()),
        "budget": float((cause == _k.K_BUDGET).mean()),
    }
    return _aggregate(out[:, 0], out[:, 1], out[:, 2], out[:, 3], masks,
                      n_runs, model.params)


def policy_campaign(model: TankModel, table: ValueTable,
                    quantizer: ChainQuantizer, n_runs: int, seed: int = 0,
                    chunk_size: int = 1 << 17) -> CampaignStats:
    """Evaluate the stopping rule over fresh trajectories.

    The rule never alters the dynamics (it only truncates observation), so
    the campaign simulates an embedded-chain bank once and replays the rule
    over it; for a fixed seed the same bank can serve several value tables,
    which gives common random numbers across grid sizes.
    """
    check_is_fitted(quantizer, "grids_")
    bank = sample_chain_bank(model, n_runs, seed=seed, path=("policy",),
                             chunk_size=chunk_size)
    return policy_campaign_on_bank(model, table, quantizer, bank)


def policy_campaign_on_bank(model: TankModel, table: ValueTable,
                            quantizer: ChainQuantizer, bank) -> CampaignStats:
    P = model.params.as_array()
    coords, off, mode_lo, mode_hi = quantizer.flat_arrays()
    ustar, branch = table.flat_policy_arrays()
    out = np.empty((bank.n_traj, 5))
    _k.policy_replay_batch(P, bank.modes, bank.coords, bank.kinds,
                           bank.n_steps, coords, off, mode_lo, mode_hi,
                           ustar, branch, table.n_nodes, out)
    outcome = out[:, 4].astype(int)
    top = outcome == _k.OUT_TOP
    h_stop = out[:, 1]
    th_stop = out[:, 2]
    p = model.params
    masks = {
        "dry": float((top & (h_stop <= p.h_dry + 1e-9)).mean()),
        "over": float((top & (h_stop >= p.h_over - 1e-9)).mean()),
        "hot": float((top & (th_stop >= p.theta_hot - 1e-9)).mean()),
        "horizon": float((outcome == _k.OUT_HORIZON).mean()),
        "budget": float((outcome == _k.OUT_BUDGET).mean()),
    }
    return _aggregate(out[:, 3], h_stop, th_stop, out[:, 0], masks,
                      bank.n_traj, p,
                      frac_planned=float((outcome == _k.OUT_PLANNED).mean()),
                      frac_fallback=float((outcome == _k.OUT_FALLBACK).mean()))


@dataclass
class CensusReport:
    """Observed vs theoretical distinct modes per jump index."""

    n_runs: int
    observed_counts: np.ndarray      # (N+1, 128) occurrence counts
    observed_distinct: np.ndarray    # (N+1,) distinct modes seen
    theory_distinct: np.ndarray      # (N+1,) from the reachability search
    theory_sets: tuple

    def observed_set(self, n: int) -> set[int]:
        return set(np.flatnonzero(self.observed_counts[n]).tolist())

    def rows(self):
        for n in range(len(self.observed_distinct)):
            yield {"jump_index": n,
                   "theory": int(self.theory_distinct[n]),
                   "observed": int(self.observed_distinct[n])}


def mode_census(model: TankModel, n_runs: int, seed: int = 0,
                chunk_size: int = 1 << 17) -> CensusReport:
    """Count distinct kernel-jump modes at each jump index over n_runs."""
    n_runs = check_positive_int(n_runs, "n_runs")
    P = model.params.as_array()
    m0 = model.initial_state().mode
    n_steps = model.params.max_jumps
    counts = np.zeros((n_steps + 1, 128), dtype=np.int64)
    for ci, lo in enumerate(range(0, n_runs, chunk_size)):
        hi = min(lo + chunk_size, n_runs)
        gen = _rng.philox(seed, "census", "chunk", ci)
        block = np.zeros((n_steps + 1, 128), dtype=np.int64)
        bad = _k.census_batch(P, m0, model.params.h0, model.params.theta0,
                              hi - lo, n_steps, gen, block)
        if bad >= 0:
            raise ModelContractError("intensity exceeded its bound")
        counts += block
    report = reachable_modes(model.params, max_depth=n_steps)
    observed = (counts > 0).sum(axis=1)
    observed[0] = 1  # the initial mode occupies index 0 by definition
    counts[0, m0] = n_runs
    return CensusReport(n_runs, counts, observed,
                        np.array(report.depth_counts), report.depth_sets)


# --- CSV writers ---------------------------------------------------------------

def write_stats_csv(path, stats: CampaignStats, label: str, meta: dict | None = None):
    row = {"campaign": label, **stats.summary_row(), **(meta or {})}
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)


def write_histograms_csv(path, stats: CampaignStats):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["variable", "bin_left", "bin_right", "count"])
        for name, edges, hist in (("tau", TAU_EDGES, stats.hist_tau),
                                  ("h", H_EDGES, stats.hist_h),
                                  ("theta", THETA_EDGES, stats.hist_theta)):
            for i, c in enumerate(hist):
                w.writerow([name, f"{edges[i]:.6g}", f"{edges[i + 1]:.6g}", int(c)])


def write_census_csv(path, report: CensusReport, meta: dict | None = None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if meta:
            fh.write("# " + ", ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        w.writerow(["jump_index", "theory", "observed"])
        for row in report.rows():
            w.writerow([row["jump_index"], row["theory"], row["observed"]])

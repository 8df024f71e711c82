"""Quantization: stratified allocation, CLVQ training, frozen estimation."""
import numpy as np
import pytest

from tankopt import (ChainQuantizer, ProjectionError,
                     codebook_distortion, train_codebook)
from tankopt.quantizer import _allocate, normalize_coords, sample_chain_bank
from tankopt.rng import philox


def test_grid_zero_is_the_deterministic_start(small_quantizer, params):
    g0 = small_quantizer.grids_[0]
    assert g0.n_points == 1
    assert g0.weights[0] == 1.0
    raw = g0.coords[0]
    assert raw[0] == pytest.approx((params.h0 - 4.0) / 6.0)
    assert raw[3] == 0.0


def test_grid_one_covers_the_failure_modes(small_quantizer):
    # six single-failure modes; rare horizon survivors may add the start mode
    modes = small_quantizer.grids_[1].mode_set()
    assert {13, 15, 17, 25, 73, 105} <= modes
    assert modes <= {9, 13, 15, 17, 25, 73, 105}


def test_allocation_floor_rule():
    counts = np.zeros(128, dtype=np.int64)
    counts[3] = 999_900
    counts[7] = 100  # frequency 1e-4 with k=200: floor forces one point
    alloc = _allocate(200, counts)
    assert alloc[7] == 1
    assert alloc[3] == 199
    assert alloc.sum() == 200


def test_allocation_proportional_with_many_modes():
    counts = np.zeros(128, dtype=np.int64)
    counts[:10] = 1000
    alloc = _allocate(200, counts)
    assert alloc[:10].sum() == 200
    assert np.all(alloc[:10] == 20)


def test_weights_and_transitions_are_stochastic(small_quantizer):
    for g in small_quantizer.grids_:
        assert g.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.all(g.weights >= 0)
        if g.transition is not None:
            rows = g.transition.sum(axis=1)
            assert np.max(np.abs(rows - 1.0)) < 1e-10
            assert g.transition.min() >= 0.0


def test_weight_flow_consistency(small_quantizer):
    """weights[n] equal weights[n-1] @ transition within a small TV error."""
    for n in range(1, small_quantizer.n_grids_):
        prev = small_quantizer.grids_[n - 1]
        pushed = prev.weights @ prev.transition
        tv = 0.5 * np.abs(pushed - small_quantizer.grids_[n].weights).sum()
        assert tv < 1e-2


def test_mode_marginals_match_calibration_frequencies(model):
    q = ChainQuantizer(n_points=80, calib_sims=50_000, train_sims=50_000,
                       freeze_sims=50_000, random_state=3).fit(model)
    bank = sample_chain_bank(model, 50_000, seed=1234, path=("marg",))
    counts = np.bincount(bank.modes[:, 1].astype(int), minlength=128)
    freq = counts / counts.sum()
    g = q.grids_[1]
    for m in g.mode_set():
        w = g.weights[g.modes == m].sum()
        p = freq[m]
        se = np.sqrt(max(p, 1e-12) * (1 - p) / counts.sum())
        assert abs(w - p) < max(3 * se, 2e-3) + 3 * np.sqrt(p * (1 - p) / q.freeze_sims)


def test_projection_equals_exhaustive_scan(small_quantizer, params):
    P = params.as_array()
    rng = philox(17, "proj")
    for _ in range(300):
        n = int(rng.integers(1, small_quantizer.n_grids_))
        g = small_quantizer.grids_[n]
        pick = int(rng.integers(0, g.n_points))
        mode = int(g.modes[pick])
        x = np.array([rng.uniform(4, 10), rng.uniform(15, 100),
                      rng.uniform(0, 1000), rng.uniform(0, 1000)])
        xn = normalize_coords(x[None, :], P)[0]
        j = g.project(mode, xn)
        same = np.flatnonzero(g.modes == mode)
        d = ((g.coords[same] - xn) ** 2).sum(axis=1)
        assert g.modes[j] == mode
        assert ((g.coords[j] - xn) ** 2).sum() <= d.min() + 1e-15


def test_projection_of_grid_point_is_itself(small_quantizer):
    g = small_quantizer.grids_[2]
    j = g.project(int(g.modes[5]), g.coords[5])
    assert j == 5 or np.allclose(g.coords[j], g.coords[5])


def test_projection_single_point_per_mode_ignores_coords(model):
    q = ChainQuantizer(n_points=1, calib_sims=20_000, train_sims=20_000,
                       freeze_sims=20_000, random_state=5).fit(model)
    g = q.grids_[1]
    for m in sorted(g.mode_set()):
        lo, hi = int(g.mode_lo[m]), int(g.mode_hi[m])
        if hi - lo == 1:
            assert g.project(m, np.array([0.9, 0.9, 0.9, 0.9])) == lo


def test_unknown_mode_raises(small_quantizer):
    with pytest.raises(ProjectionError):
        small_quantizer.project(1, 127, 7.0, 30.0, 5.0, 1.0)


def test_training_reduces_distortion(model):
    """Distortion of trained grids is below distortion at initialization."""
    held_out = sample_chain_bank(model, 50_000, seed=99, path=("ho",))
    trained = ChainQuantizer(n_points=150, calib_sims=50_000, train_sims=50_000,
                             freeze_sims=50_000, random_state=8).fit(model)
    untrained = ChainQuantizer(n_points=150, calib_sims=50_000, train_sims=1,
                               freeze_sims=50_000, random_state=8)
    untrained.fit(model,
                  train_bank=sample_chain_bank(model, 1, seed=8, path=("no",)))
    d_trained = trained.distortion(held_out)
    d_init = untrained.distortion(held_out)
    # compare on indices that carry real mass
    sel = slice(1, 12)
    assert d_trained[sel].mean() <= d_init[sel].mean()


def test_distortion_nonincreasing_in_grid_size(model):
    held_out = sample_chain_bank(model, 30_000, seed=77, path=("k",))
    banks = dict(
        calib_bank=sample_chain_bank(model, 50_000, seed=70, path=("c",)),
        train_bank=sample_chain_bank(model, 50_000, seed=71, path=("t",)),
        freeze_bank=sample_chain_bank(model, 50_000, seed=72, path=("f",)))
    means = []
    for k in (50, 150, 400):
        q = ChainQuantizer(n_points=k, random_state=4).fit(model, **banks)
        means.append(q.distortion(held_out)[1:15].mean())
    assert means[0] > means[1] > means[2]


def test_standalone_codebook_beats_uniform_lattice():
    """200-point trained codebook vs a 200-point lattice on the 2D normal."""
    rng = philox(2024, "normal2d")
    train = rng.standard_normal((200_000, 2))
    codes = train_codebook(train, 200, gamma0=0.5, decay=5e-4,
                           rng=philox(2024, "init"))
    xs = np.linspace(-3, 3, 20)
    ys = np.linspace(-3, 3, 10)
    lattice = np.array([(x, y) for x in xs for y in ys])
    eval_samples = philox(2025, "eval").standard_normal((200_000, 2))
    d_trained = codebook_distortion(codes, eval_samples)
    d_lattice = codebook_distortion(lattice, eval_samples)
    assert d_trained < d_lattice


def test_banks_independent_of_thread_count(model):
    """Chunk streams are keyed by chunk index, not worker assignment."""
    a = sample_chain_bank(model, 40_000, seed=21, path=("thr",),
                          chunk_size=8192, threads=1)
    b = sample_chain_bank(model, 40_000, seed=21, path=("thr",),
                          chunk_size=8192, threads=3)
    assert np.array_equal(a.modes, b.modes)
    assert np.array_equal(a.coords, b.coords)
    assert np.array_equal(a.kinds, b.kinds)


def test_fit_is_reproducible(model):
    kw = dict(n_points=60, calib_sims=20_000, train_sims=20_000,
              freeze_sims=20_000, random_state=33)
    a = ChainQuantizer(**kw).fit(model)
    b = ChainQuantizer(**kw).fit(model)
    assert a.digest_ == b.digest_


def test_get_set_params_roundtrip():
    q = ChainQuantizer(n_points=5)
    assert q.get_params()["n_points"] == 5
    q.set_params(n_points=9, gamma0=0.25)
    assert q.n_points == 9 and q.gamma0 == 0.25
    with pytest.raises(ValueError):
        q.set_params(bogus=1)

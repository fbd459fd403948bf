"""Coding set invariants, regularization losses and serialization."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from betof.coding import (CodingSet, LossWeights, double_well_value,
                          freeze_binary, init_codes, load_coding,
                          loss_double_well, loss_first_difference,
                          loss_fisher, project_box, save_coding, square_codes,
                          transition_count)
from betof.errors import ConfigurationError, StateError
from betof.physics import AttenuationModel, NoiseModel, TimingConfig
from betof.scene import Scene


def ramp_scene(lo=30.2, hi=32.6, size=8, albedo=0.7, ambient=0.1):
    depth = np.tile(np.linspace(lo, hi, size), (size, 1))
    return Scene(size, size, np.full_like(depth, albedo),
                 np.full_like(depth, ambient), depth)


# ---------------------------------------------------------------------------
# type invariants


def test_k_below_three_rejected():
    with pytest.raises(ConfigurationError):
        CodingSet(2, 10, np.ones((2, 10)))


def test_out_of_range_values_rejected():
    with pytest.raises(ConfigurationError):
        CodingSet(4, 5, np.full((4, 5), 1.2))


def test_frozen_requires_binary():
    with pytest.raises(ConfigurationError):
        CodingSet(4, 5, np.full((4, 5), 0.5), frozen=True)


def test_loss_weights_nonnegative():
    with pytest.raises(ConfigurationError):
        LossWeights(gamma1=-1.0)


def test_loss_weights_schedule():
    w = LossWeights(gamma1=5e-4, gamma2=5e-2, gamma3=5.0,
                    schedule=[(40, 5e-5, 1.0)])
    early = w.at_epoch(10)
    late = w.at_epoch(40)
    assert (early.gamma1, early.gamma2) == (5e-4, 5e-2)
    assert (late.gamma1, late.gamma2) == (5e-5, 1.0)
    assert late.gamma3 == 5.0


# ---------------------------------------------------------------------------
# double well


def test_double_well_values():
    assert double_well_value(0.0) == pytest.approx(-0.25)
    assert double_well_value(1.0) == pytest.approx(-0.25)
    assert double_well_value(0.5) == 0.0


def test_double_well_loss_stationary_points():
    k, m = 4, 25
    mid = CodingSet(k, m, np.full((k, m), 0.5))
    v, g = loss_double_well(mid)
    assert v == 0.0
    assert np.all(g == 0.0)
    binary = CodingSet(k, m, (np.arange(k * m).reshape(k, m) % 2).astype(float))
    v, g = loss_double_well(binary)
    assert v == pytest.approx(-0.25 * k * m)
    assert np.all(g == 0.0)


def test_double_well_single_perturbed_entry():
    k, m = 4, 10
    vals = np.zeros((k, m))
    vals[1, 3] = 0.75
    v, g = loss_double_well(CodingSet(k, m, vals))
    assert v == pytest.approx(-0.25 * (k * m - 1) - 0.109375)
    assert g[1, 3] == pytest.approx(-0.75)
    g[1, 3] = 0.0
    assert np.all(g == 0.0)


# ---------------------------------------------------------------------------
# first difference


def test_first_difference_constant_code():
    v, g = loss_first_difference(CodingSet(4, 50, np.full((4, 50), 0.7)))
    assert v == 0.0
    assert np.all(g == 0.0)


def test_first_difference_single_step():
    k, m = 4, 100
    vals = np.zeros((k, m))
    vals[:, 50:] = 1.0
    v, _ = loss_first_difference(CodingSet(k, m, vals))
    # smoothed |.| undercounts a unit jump by ~eps, so compare loosely
    assert v == pytest.approx(k, rel=0.01)


def test_first_difference_alternating():
    m = 1000
    vals = np.tile((np.arange(m) % 2).astype(float), (4, 1))
    v, _ = loss_first_difference(CodingSet(4, m, vals))
    assert v / 4 == pytest.approx(999.0, rel=0.01)


def test_first_difference_matches_transition_count():
    frozen = square_codes(4, 200)
    soft = CodingSet(4, 200, frozen.values.copy())  # same values, unfrozen
    v, _ = loss_first_difference(soft)
    assert v == pytest.approx(sum(transition_count(frozen)), rel=0.005)


def test_losses_reject_frozen_codes():
    frozen = square_codes(4, 40)
    with pytest.raises(StateError):
        loss_double_well(frozen)
    with pytest.raises(StateError):
        loss_first_difference(frozen)


# ---------------------------------------------------------------------------
# fisher


def fisher_setup(m=200, sigma_r=3.0):
    timing = TimingConfig(tau=200e-9, M=m)
    noise = NoiseModel(20.0, sigma_r, 500.0)
    coding = init_codes(4, m, timing=timing, seed=2)
    return timing, AttenuationModel(), noise, coding


def test_fisher_zero_albedo_scene():
    timing, att, noise, coding = fisher_setup()
    scene = ramp_scene(albedo=0.0)
    v, g = loss_fisher(scene, coding, timing, att, noise)
    assert v == 0.0
    assert np.all(g == 0.0)


def test_fisher_weakens_with_readout_noise():
    timing, att, noise_lo, coding = fisher_setup(sigma_r=3.0)
    _, _, noise_hi, _ = fisher_setup(sigma_r=30.0)
    scene = ramp_scene()
    v_lo, _ = loss_fisher(scene, coding, timing, att, noise_lo)
    v_hi, _ = loss_fisher(scene, coding, timing, att, noise_hi)
    assert abs(v_hi) < abs(v_lo)


# ---------------------------------------------------------------------------
# projection, freezing, transitions


def test_project_box_clamps():
    coding = init_codes(4, 30, seed=1)
    coding.values[0, 0] = 1.3   # simulate an un-projected optimizer step
    coding.values[1, 2] = -0.2
    coding.values[2, 4] = 0.6
    out = project_box(coding)
    assert out.values[0, 0] == 1.0
    assert out.values[1, 2] == 0.0
    assert out.values[2, 4] == 0.6


def test_freeze_threshold_and_moved_fraction():
    vals = np.full((4, 10), 0.49)
    vals[0, :] = 0.51
    vals[1, :] = 1.0
    frozen, moved = freeze_binary(CodingSet(4, 10, vals))
    assert np.all(frozen.values[0] == 1.0)
    assert np.all(frozen.values[1] == 1.0)
    assert np.all(frozen.values[2:] == 0.0)
    assert frozen.frozen
    assert moved == pytest.approx(0.75)  # rows at 0.49/0.51 moved > 0.05


def test_freeze_already_binary_moves_nothing():
    binary = CodingSet(4, 16, (np.arange(64).reshape(4, 16) % 2).astype(float))
    frozen, moved = freeze_binary(binary)
    assert moved == 0.0
    assert np.array_equal(frozen.values, binary.values)
    with pytest.raises(StateError):
        freeze_binary(frozen)


def test_transition_count_cases():
    m = 1000
    vals = np.zeros((3, m))
    vals[0, :] = 1.0                      # constant-1 channel
    vals[1, 100:300] = 1.0                # single gate
    vals[2, :] = np.arange(m) % 2         # alternating
    counts = transition_count(CodingSet(3, m, vals, frozen=True))
    assert counts == [0, 2, 999]
    with pytest.raises(StateError):
        transition_count(CodingSet(3, m, vals))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_freeze_is_binary_and_projection_feasible(seed):
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    coding = init_codes(4, 32, seed=seed)
    coding.values += rng.normal(0, 0.8, size=coding.values.shape)
    out = project_box(coding)
    assert out.values.min() >= 0.0 and out.values.max() <= 1.0
    frozen, moved = freeze_binary(out)
    assert np.all(np.isin(frozen.values, (0.0, 1.0)))
    assert 0.0 <= moved <= 1.0


# ---------------------------------------------------------------------------
# serialization


def test_coding_roundtrip_bit_exact(tmp_path):
    coding = init_codes(4, 64, seed=9)
    path = tmp_path / "codes.csv"
    save_coding(coding, path)
    back = load_coding(path)
    assert np.array_equal(back.values, coding.values)
    assert (back.K, back.M, back.frozen) == (4, 64, False)
    frozen, _ = freeze_binary(coding)
    save_coding(frozen, path)
    back = load_coding(path)
    assert back.frozen
    assert np.array_equal(back.values, frozen.values)


def test_load_coding_rejects_garbage(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("not,a\ncoding,file\n")
    with pytest.raises(ConfigurationError):
        load_coding(path)

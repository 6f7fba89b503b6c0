"""Integrated correlations, interferometer algebra, delay handling."""

import dataclasses

import numpy as np
import pytest

from spsim.dynamics import CorrelationGrid, TimeGrid
from spsim.errors import EstimateError, GridError
from spsim.coherence import (
    FivePeakPattern,
    SplitterSpec,
    coherence_summary,
    delay_shift,
    delay_steps,
    hom_cross_general,
    hom_identical,
    hom_normalization_reference,
    hom_short_time_intensity,
    hom_single_photon_overlap,
    integrated_g1sq_zero,
    integrated_g2_zero,
    mz_five_peaks,
    mz_identical,
)


# ---------------------------------------------------------------------------
# scalar reductions


def test_laser_like_reference_values():
    # Poissonian light with unit first-order coherence
    assert hom_identical(1.0, 1.0) == 0.5
    assert mz_identical(1.0, 1.0) == 2.0 / 3.0
    assert hom_identical(0.0, 1.0) == 0.0
    assert mz_identical(0.0, 1.0) == 0.0


def _const_grid(value: complex, kind: str, n: int = 101) -> CorrelationGrid:
    grid = TimeGrid(0.0, 1.0, n)
    return CorrelationGrid(grid=grid,
                           values=np.full((n, n), value, dtype=complex),
                           kind=kind)


def test_integrated_g2_on_constant_grid():
    # weights sum to the unit span, so the double integral is the constant
    g2 = _const_grid(3.0, "g2")
    assert integrated_g2_zero(g2, 2.0) == pytest.approx(0.75, rel=1e-12)
    with pytest.raises(GridError):
        integrated_g2_zero(_const_grid(1.0, "g1"), 1.0)
    with pytest.raises(EstimateError):
        integrated_g2_zero(g2, 0.0)


def test_integrated_g1sq_on_constant_grid():
    g1 = _const_grid(1.0 + 1.0j, "g1")
    assert integrated_g1sq_zero(g1, 2.0) == pytest.approx(0.5, rel=1e-12)
    with pytest.raises(GridError):
        integrated_g1sq_zero(_const_grid(1.0, "g2"), 1.0)
    with pytest.raises(EstimateError):
        integrated_g1sq_zero(g1, -1.0)


def test_coherence_summary_consistency(driven_point):
    summary = coherence_summary(driven_point["g1"], driven_point["g2"],
                                driven_point["mean"])
    summary.validate()
    assert summary.g2_hom == pytest.approx(
        hom_identical(summary.g2_zero, summary.g1sq_zero), abs=1e-15)
    assert summary.g2_mz == pytest.approx(
        mz_identical(summary.g2_zero, summary.g1sq_zero), abs=1e-15)
    d = summary.to_dict()
    assert set(d) == {"mean_photons", "g2_zero", "g1sq_zero", "g2_hom", "g2_mz"}

    with pytest.raises(EstimateError):
        dataclasses.replace(summary, g2_hom=summary.g2_hom + 0.01).validate()
    with pytest.raises(EstimateError):
        dataclasses.replace(summary, g1sq_zero=1.1, g2_hom=0.0,
                            g2_mz=0.0).validate()
    with pytest.raises(EstimateError):
        dataclasses.replace(summary, g2_zero=-0.5).validate()


# ---------------------------------------------------------------------------
# splitters and five-peak patterns


def test_splitter_validation():
    SplitterSpec(0.4, 0.6, 0.5, 0.5)
    with pytest.raises(EstimateError):
        SplitterSpec(0.4, 0.5, 0.5, 0.5)
    with pytest.raises(EstimateError):
        SplitterSpec(1.2, -0.2, 0.5, 0.5)
    assert SplitterSpec.balanced().t1 == 0.5


def test_five_peak_pattern_guards():
    with pytest.raises(EstimateError):
        FivePeakPattern(values=(0.1, 0.1, -0.2, 0.1, 0.1))
    p = FivePeakPattern(values=(0.1, 0.2, 0.0, 0.2, 0.1))
    with pytest.raises(EstimateError):
        p.peak(3)
    assert p.peak(-2) == 0.1 and p.peak(0) == 0.0
    assert p.csv_row() == "0.1,0.2,0.0,0.2,0.1"


def test_ideal_balanced_five_peaks():
    p = mz_five_peaks(0.0, 1.0, SplitterSpec.balanced())
    ref = (1.0 / 6.0, 1.0 / 3.0, 0.0, 1.0 / 3.0, 1.0 / 6.0)
    assert np.abs(np.array(p.values) - np.array(ref)).max() < 1e-12


@pytest.mark.parametrize("g2,g1sq", [
    (0.0, 1.0), (0.0337, 0.9), (0.44, 0.84), (1.0, 1.0), (0.3, 0.5),
])
def test_balanced_center_peak_is_mz_identical(g2, g1sq):
    p = mz_five_peaks(g2, g1sq, SplitterSpec.balanced())
    assert p.peak(0) == pytest.approx(mz_identical(g2, g1sq), abs=1e-12)


def test_first_splitter_exchange_symmetry():
    a = mz_five_peaks(0.2, 0.8, SplitterSpec(0.3, 0.7, 0.5, 0.5))
    b = mz_five_peaks(0.2, 0.8, SplitterSpec(0.7, 0.3, 0.5, 0.5))
    assert a.values == b.values


def test_single_arm_first_splitter():
    # everything goes down one arm: no photon pairs straddle adjacent
    # pulses, so the outer peaks vanish and the center carries only the
    # same-pulse two-photon term
    g2 = 0.35
    p = mz_five_peaks(g2, 0.9, SplitterSpec(1.0, 0.0, 0.5, 0.5))
    assert p.peak(-2) == 0.0 and p.peak(2) == 0.0
    assert p.peak(0) / p.peak(1) == pytest.approx(2.0 * g2, rel=1e-12)


def test_outer_peak_ratio_tracks_second_splitter():
    p = mz_five_peaks(0.1, 0.9, SplitterSpec(0.5, 0.5, 0.3, 0.7))
    assert p.peak(2) / p.peak(-2) == pytest.approx(0.09 / 0.49, rel=1e-12)


def test_normalization_identity():
    for ma, mb in ((1.0, 1.0), (0.5, 1.5), (0.0, 2.0)):
        assert hom_normalization_reference(ma, mb) == pytest.approx(
            hom_short_time_intensity(ma, mb) + 0.5 * ma * mb, abs=1e-15)


# ---------------------------------------------------------------------------
# cross-source HOM


def test_cross_hom_reduces_to_identical_case(driven_point):
    g1, g2 = driven_point["g1"], driven_point["g2"]
    m = driven_point["mean"]
    cross = hom_cross_general(g1, g1, g2, g2, m, m)
    summary = coherence_summary(g1, g2, m)
    assert abs(cross - summary.g2_hom) < 1e-10


def test_cross_hom_input_checks(driven_point):
    g1, g2 = driven_point["g1"], driven_point["g2"]
    with pytest.raises(GridError):
        hom_cross_general(g1, g1, g1, g2, 1.0, 1.0)
    with pytest.raises(EstimateError):
        hom_cross_general(g1, g1, g2, g2, 0.0, 0.0)
    other = CorrelationGrid(grid=TimeGrid(0.0, 1.0, g1.n),
                            values=np.array(g1.values), kind="g1")
    with pytest.raises(GridError):
        hom_cross_general(g1, other, g2, g2, 1.0, 1.0)


def _normalized_decay_g1(excited_decay) -> CorrelationGrid:
    corr_values = np.exp(
        -0.5 * (excited_decay["grid"].times[:, None]
                + excited_decay["grid"].times[None, :]))
    grid = excited_decay["grid"]
    flux = float(grid.weights @ np.diagonal(corr_values).real)
    return CorrelationGrid(grid=grid, values=corr_values / flux + 0j, kind="g1")


def test_overlap_hom_of_identical_wavepackets(excited_decay):
    g1 = _normalized_decay_g1(excited_decay)
    assert abs(hom_single_photon_overlap(g1, g1)) < 1e-12


def test_overlap_hom_of_delayed_wavepackets():
    # pure Gaussian wavepacket, amplitude width s: delaying one copy by tau
    # leaves an overlap exp(-tau^2 / 4 s^2)
    grid = TimeGrid(0.0, 20.0, 801)
    s = 1.0
    psi = (2.0 * np.pi * s**2) ** -0.25 * np.exp(
        -((grid.times - 10.0) ** 2) / (4.0 * s**2))
    g1 = CorrelationGrid(grid=grid, values=np.outer(psi, psi) + 0j, kind="g1")

    steps = 40
    tau = steps * grid.dt
    assert tau == pytest.approx(1.0)
    shifted = delay_shift(g1, steps)
    got = hom_single_photon_overlap(g1, shifted)
    assert got == pytest.approx(0.5 * (1.0 - np.exp(-tau**2 / (4.0 * s**2))),
                                abs=1e-9)


def test_overlap_hom_rejects_unnormalized(excited_decay):
    g1 = _normalized_decay_g1(excited_decay)
    doubled = CorrelationGrid(grid=g1.grid, values=2.0 * g1.values, kind="g1")
    with pytest.raises(EstimateError):
        hom_single_photon_overlap(g1, doubled)


# ---------------------------------------------------------------------------
# delays


def test_delay_steps_rounding():
    grid = TimeGrid(0.0, 1.0, 101)  # dt = 0.01
    assert delay_steps(grid, 0.026) == 3
    assert delay_steps(grid, -0.026) == -3
    assert delay_steps(grid, 0.0) == 0


def test_delay_shift_moves_block(driven_point):
    g1 = driven_point["g1"]
    same = delay_shift(g1, 0)
    assert np.array_equal(same.values, g1.values)

    fwd = delay_shift(g1, 3)
    assert np.array_equal(fwd.values[3:, 3:], g1.values[:-3, :-3])
    assert np.all(fwd.values[:3, :] == 0.0)
    assert np.all(fwd.values[:, :3] == 0.0)

    back = delay_shift(g1, -3)
    assert np.array_equal(back.values[:-3, :-3], g1.values[3:, 3:])
    assert np.all(back.values[-3:, :] == 0.0)

    with pytest.raises(GridError):
        delay_shift(g1, g1.n)

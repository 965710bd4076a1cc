import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ecd_peakformer.spectra import (GRID, N_GRID, ExcitedState, Peak, PeakSet, SpectrumError,
                                    extract_peaks, render, render_unclipped, synthesize_from_states,
                                    validate_spectrum)


def at(curve, nm):
    return curve[int(nm) - 80]


def test_grid_shape():
    assert GRID[0] == 80 and GRID[-1] == 450 and N_GRID == 371 == GRID.size


def test_single_peak_amplitude_mode():
    curve = render(PeakSet.from_tuples([(250, 1, 100)]))
    assert at(curve, 250) == 100.0
    assert at(curve, 250 + 60) == 0.0 and at(curve, 250 - 60) == 0.0
    assert np.all(curve[np.abs(GRID - 250) >= 60] == 0)
    assert at(curve, 259) > 0


def test_empty_peakset_renders_zero():
    assert np.array_equal(render(PeakSet()), np.zeros(N_GRID))


def test_two_opposite_peaks_closed_form():
    curve = render(PeakSet.from_tuples([(150, 1, 80), (350, -1, 80)]))
    assert at(curve, 150) == 80.0
    assert at(curve, 350) == -80.0
    assert at(curve, 250) == 0.0
    # a point inside the support, against the scalar formula
    assert at(curve, 160) == pytest.approx(80 * math.exp(-100 / 200), abs=1e-12)


def test_literal_mode_width_is_height():
    curve = render(PeakSet.from_tuples([(250, -1, 20)]), mode="literal")
    assert at(curve, 250) == -100.0
    assert at(curve, 270) == pytest.approx(-100 * math.exp(-400 / 800), abs=1e-12)
    assert at(curve, 370) == 0.0  # 6 * 20 nm away


def test_render_rejects_bad_sigma():
    with pytest.raises(SpectrumError):
        render(PeakSet.from_tuples([(250, 1, 50)]), sigma0_nm=0)
    with pytest.raises(SpectrumError):
        render(PeakSet.from_tuples([(250, 1, 50)]), mode="nonsense")


def test_render_clips():
    curve = render(PeakSet.from_tuples([(200, 1, 150), (205, 1, 150)]))
    assert curve.max() == 200.0
    assert render_unclipped(PeakSet.from_tuples([(200, 1, 150), (205, 1, 150)])).max() > 200


def test_synthesis_single_state():
    curve = synthesize_from_states([ExcitedState(310, 50)])
    assert GRID[np.argmax(curve)] == 310
    assert abs(curve.max() - 50) <= 1e-6


def test_synthesis_zero_strengths():
    assert np.array_equal(synthesize_from_states([(200, 0.0), (300, 0.0)]), np.zeros(N_GRID))


def test_synthesis_merged_states_against_scalar_formula():
    states = [(250, 30.0), (251, 30.0)]
    curve = synthesize_from_states(states)
    for k in (0, 100, 170, 171, 300):
        lam = 80 + k
        ref = sum(r * math.exp(-(((1239.84 / lam) - 1239.84 / w) / 0.3) ** 2) for w, r in states)
        assert curve[k] == pytest.approx(ref, rel=1e-12, abs=1e-12)
    peaks = extract_peaks(curve)
    assert len(peaks) == 1
    assert peaks[0].position_nm in (250.0, 251.0)
    assert peaks[0].height_mdeg > 30


def test_synthesis_enantiomer_negation():
    states = [(200, 12.0), (260, -40.0), (330, 25.0)]
    a = synthesize_from_states(states)
    b = synthesize_from_states([(w, -r) for w, r in states])
    assert np.array_equal(b, -a)


def test_synthesis_errors():
    with pytest.raises(SpectrumError):
        synthesize_from_states([(0, 1.0)])
    with pytest.raises(SpectrumError):
        synthesize_from_states([(200 + k, 1.0) for k in range(21)])


def test_extract_single_rendered_peak():
    peaks = extract_peaks(render(PeakSet.from_tuples([(250, 1, 100)])))
    assert peaks == PeakSet.from_tuples([(250, 1, 100)])


def test_extract_flat_zero():
    assert len(extract_peaks(np.zeros(N_GRID))) == 0


def test_extract_four_separated_peaks():
    truth = PeakSet.from_tuples([(110, 1, 60), (200, -1, 120), (290, 1, 30), (380, -1, 190)])
    got = extract_peaks(render(truth))
    assert len(got) == 4
    assert np.array_equal(got.symbols, truth.symbols)
    assert np.all(np.abs(got.positions - truth.positions) <= 1)


def test_extract_separation_keeps_larger():
    x = np.zeros(N_GRID)
    x[100], x[103] = 50.0, 80.0
    got = extract_peaks(x)
    assert got.positions.tolist() == [183.0]


def test_extract_tie_keeps_shorter_wavelength():
    x = np.zeros(N_GRID)
    x[100], x[103] = 50.0, 50.0
    assert extract_peaks(x).positions.tolist() == [180.0]


def test_extract_prominence_floor():
    x = np.zeros(N_GRID)
    x[50], x[200] = 100.0, -4.0
    assert extract_peaks(x).positions.tolist() == [130.0]


def test_validate_spectrum():
    with pytest.raises(SpectrumError, match="expected 371 grid points"):
        validate_spectrum(np.zeros(370))
    with pytest.raises(SpectrumError):
        validate_spectrum(np.full(N_GRID, 250.0))
    v = validate_spectrum(np.full(N_GRID, 200.0 + 1e-7))
    assert v.max() == 200.0


def test_peak_validation():
    with pytest.raises(SpectrumError):
        Peak(79.0, 1, 10.0)
    with pytest.raises(SpectrumError):
        Peak(200.0, 0, 10.0)
    with pytest.raises(SpectrumError):
        PeakSet((Peak(200.0, 1, 10.0), Peak(200.0, -1, -10.0)))
    assert Peak(200.0, -1, 10.0).height_mdeg == -10.0


@st.composite
def separated_peaksets(draw, min_gap=80.0):
    n = draw(st.integers(0, 4))
    positions, lo = [], 80.0
    for _ in range(n):
        hi = 450.0 - min_gap * (n - len(positions) - 1)
        if lo > hi:
            break
        p = float(draw(st.integers(int(math.ceil(lo)), int(hi))))
        positions.append(p)
        lo = p + min_gap
    peaks = []
    for p in positions:
        s = draw(st.sampled_from([1, -1]))
        h = draw(st.floats(20.0, 200.0))
        peaks.append((p, s, s * h))
    return PeakSet.from_tuples(peaks)


@settings(max_examples=200, deadline=None)
@given(separated_peaksets())
def test_render_extract_round_trip(truth):
    got = extract_peaks(render(truth))
    assert len(got) == len(truth)
    assert np.array_equal(got.symbols, truth.symbols)
    assert np.all(np.abs(got.positions - truth.positions) <= 1.0)
    assert np.allclose(got.heights, truth.heights, rtol=0.02)


@settings(max_examples=100, deadline=None)
@given(separated_peaksets(min_gap=1.0), separated_peaksets(min_gap=1.0))
def test_render_additive_before_clipping(a, b):
    union = {p.position_nm: p for p in a}
    for p in b:
        union.setdefault(p.position_nm, p)
    b_only = PeakSet(tuple(p for p in b if p.position_nm not in {q.position_nm for q in a}))
    both = PeakSet(tuple(union[k] for k in sorted(union)))
    expected = np.clip(render_unclipped(a) + render_unclipped(b_only), -200, 200)
    assert np.allclose(render(both), expected, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(separated_peaksets(min_gap=1.0), st.sampled_from(["amplitude", "literal"]))
def test_negation_negates_spectrum(peaks, mode):
    assert np.array_equal(render_unclipped(peaks.negated(), mode), -render_unclipped(peaks, mode))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-300, 300, allow_nan=False), min_size=N_GRID, max_size=N_GRID))
def test_extract_always_valid_peakset(values):
    peaks = extract_peaks(np.array(values))
    assert all(a.position_nm < b.position_nm for a, b in zip(peaks, peaks[1:]))
    assert all(abs(p.height_mdeg) <= 200 and p.symbol in (1, -1) for p in peaks)
    assert all(b.position_nm - a.position_nm >= 5 for a, b in zip(peaks, peaks[1:]))

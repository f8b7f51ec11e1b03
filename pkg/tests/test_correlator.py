import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from narrowpair.correlator import (CoincidenceHistogram, brightness_report,
                                   brute_force_histogram, build_histogram, coincidence_rate,
                                   decay_model, efficiency_budget, fit_decay,
                                   write_histogram_csv, write_report)
from narrowpair.errors import DomainError, FitError
from narrowpair.pairsim import DetectorSpec, SourceConfig, calibrated_pair_rate, run_experiment

TAU = 1 / (2 * np.pi * 22.4e6)


def _synthetic(amp, tau, bg, t0, resolution=0.0, rng=None, bin_width=1e-9,
               window=(-200e-9, 200e-9)):
    n = int(round((window[1] - window[0]) / bin_width))
    edges = window[0] + bin_width * np.arange(n + 1)
    mean, _ = decay_model((amp, tau, bg, t0), edges[:-1], edges[1:], resolution)
    counts = rng.poisson(mean) if rng is not None else np.round(mean)
    return CoincidenceHistogram(bin_width, window, counts, 100.0)


@pytest.fixture(scope="module")
def simulated(narrow_spectrum, chain):
    det = DetectorSpec()
    src = SourceConfig(narrow_spectrum)
    rate = calibrated_pair_rate(src, chain, det)
    out = {}
    for power, duration in ((1.0, 600.0), (10.0, 60.0), (70.0, 10.0)):
        s = SourceConfig(narrow_spectrum, pump_power=power, generated_pair_rate_per_mw=rate)
        a, b = run_experiment(s, chain, det, duration, electronic_delay=50e-9, seed=21)
        out[power] = (b, a, duration)
    return out


def test_empty_streams():
    h = build_histogram(np.array([], np.int64), np.array([], np.int64), 1.0)
    assert h.counts.sum() == 0 and len(h.counts) == 400


def test_single_pair():
    h = build_histogram(np.array([1000]), np.array([1000 + 5500]), 1.0)
    assert h.counts.sum() == 1
    assert h.counts[205] == 1


def test_window_edges_half_open():
    a = np.array([0])
    h = build_histogram(a, np.array([-200_000, 200_000]), 1.0)
    assert h.counts[0] == 1 and h.counts.sum() == 1


def test_unsorted_rejected():
    with pytest.raises(ValueError, match="sorted"):
        build_histogram(np.array([5, 1]), np.array([1, 2]), 1.0)


def test_window_must_tile_bins():
    with pytest.raises(DomainError):
        build_histogram(np.array([1]), np.array([2]), 1.0, bin_width=3e-9,
                        window=(-10e-9, 10e-9))


def test_histogram_validation():
    with pytest.raises(DomainError):
        CoincidenceHistogram(1e-9, (0, 2e-9), [1, -1], 1.0)
    with pytest.raises(DomainError):
        CoincidenceHistogram(1e-9, (0, 2e-9), [1, 1], 0.0)


@pytest.mark.parametrize("trial", range(5))
def test_matches_brute_force(trial):
    rng = np.random.default_rng(100 + trial)
    a = np.sort(rng.integers(0, 2_000_000, rng.integers(0, 400)))
    b = np.sort(rng.integers(0, 2_000_000, rng.integers(0, 400)))
    h = build_histogram(a, b, 1.0, bin_width=2e-9, window=(-60e-9, 80e-9))
    assert np.array_equal(h.counts, brute_force_histogram(a, b, 2e-9, (-60e-9, 80e-9)))


@settings(max_examples=25, deadline=None)
@given(shift=st.integers(-100, 100), seed=st.integers(0, 1000))
def test_shift_equivariance(shift, seed):
    rng = np.random.default_rng(seed)
    a = np.sort(rng.integers(0, 10**6, 300))
    b = np.sort(rng.integers(0, 10**6, 300))
    w = (-100e-9, 100e-9)
    base = build_histogram(a, b, 1.0, window=w).counts
    moved = build_histogram(a, b + shift * 1000, 1.0,
                            window=(w[0] + shift * 1e-9, w[1] + shift * 1e-9)).counts
    assert np.array_equal(base, moved)


def test_merge_adds_counts():
    rng = np.random.default_rng(3)
    a1, b1 = np.sort(rng.integers(0, 10**6, 500)), np.sort(rng.integers(0, 10**6, 500))
    a2, b2 = np.sort(rng.integers(0, 10**6, 300)), np.sort(rng.integers(0, 10**6, 300))
    h1 = build_histogram(a1, b1, 2.0)
    h2 = build_histogram(a2, b2, 3.0)
    m = h1 + h2
    assert np.array_equal(m.counts, h1.counts + h2.counts)
    assert m.acquisition_time == 5.0
    assert m.rate_a == pytest.approx(800 / 5.0)


def test_merge_needs_same_binning():
    h1 = CoincidenceHistogram(1e-9, (0, 2e-9), [1, 1], 1.0)
    h2 = CoincidenceHistogram(2e-9, (0, 2e-9), [1], 1.0)
    with pytest.raises(DomainError):
        h1 + h2


def test_accidental_floor():
    # uncorrelated Poisson streams: mean count per bin = rA rB dt T
    rng = np.random.default_rng(4)
    T, ra, rb = 10.0, 20000.0, 20000.0
    a = np.sort(rng.integers(0, int(T * 1e12), rng.poisson(ra * T)))
    b = np.sort(rng.integers(0, int(T * 1e12), rng.poisson(rb * T)))
    h = build_histogram(a, b, T)
    expected = ra * rb * 1e-9 * T
    assert abs(h.counts.mean() - expected) < 3 * np.sqrt(expected / len(h.counts))


@pytest.mark.parametrize("resolution", [0.0, 1.4e-9])
def test_model_jacobian(resolution):
    edges = np.linspace(-50e-9, 100e-9, 151)
    p = np.array([300.0, TAU, 5.0, 3.3e-9])
    _, jac = decay_model(p, edges[:-1], edges[1:], resolution)
    for k, h in enumerate((1e-3, 1e-13, 1e-4, 1e-13)):
        up, dn = p.copy(), p.copy()
        up[k] += h
        dn[k] -= h
        num = (decay_model(up, edges[:-1], edges[1:], resolution)[0]
               - decay_model(dn, edges[:-1], edges[1:], resolution)[0]) / (2 * h)
        assert np.allclose(jac[:, k], num, rtol=1e-4, atol=1e-6 * np.abs(num).max())


def test_model_integrates_to_area():
    edges = np.linspace(-100e-9, 300e-9, 401)
    m, _ = decay_model((1.0, TAU, 0.0, 0.0), edges[:-1], edges[1:], 1e-9)
    assert m.sum() * 1e-9 == pytest.approx(TAU, rel=1e-6)


def test_noiseless_recovery():
    h = _synthetic(1e7, TAU, 1e5, 0.0)
    fit = fit_decay(h)
    assert fit.decay_time == pytest.approx(TAU, rel=1e-3)
    assert fit.background == pytest.approx(1e5, rel=1e-3)


def test_noiseless_recovery_with_resolution():
    h = _synthetic(1e7, TAU, 1e5, 2e-9, resolution=1.4e-9)
    fit = fit_decay(h, resolution=1.4e-9)
    assert fit.decay_time == pytest.approx(TAU, rel=1e-3)
    assert fit.onset == pytest.approx(2e-9, abs=1e-11)


def test_noisy_fit_within_errors():
    rng = np.random.default_rng(5)
    fit = fit_decay(_synthetic(400.0, TAU, 20.0, 0.0, 1.4e-9, rng), resolution=1.4e-9)
    assert abs(fit.decay_time - TAU) < 4 * fit.decay_time_err
    assert abs(fit.bandwidth - 22.4e6) < 4 * fit.bandwidth_err
    assert 0.5 < fit.chi2_reduced < 2.0


def test_pure_accidentals_raise():
    rng = np.random.default_rng(6)
    h = CoincidenceHistogram(1e-9, (-200e-9, 200e-9), rng.poisson(100.0, 400), 10.0)
    with pytest.raises(FitError) as err:
        fit_decay(h)
    assert "background" in err.value.diagnostics


def test_zero_amplitude_rate():
    from narrowpair.correlator import DecayFit
    h = CoincidenceHistogram(1e-9, (0, 4e-9), [1, 1, 1, 1], 1.0)
    assert coincidence_rate(h, DecayFit(0.0, TAU, 1.0, 0.0)) == 0.0


def test_rate_linear_in_power(simulated):
    rates = {}
    for power, (start, stop, duration) in simulated.items():
        h = build_histogram(start, stop, duration)
        fit = fit_decay(h, resolution=np.sqrt(2) * 1e-9)
        rates[power] = coincidence_rate(h, fit) / power
    for power, r in rates.items():
        n = r * power * simulated[power][2]
        assert r == pytest.approx(4.8, abs=3 * 4.8 / np.sqrt(n) + 0.1)


def test_design_run_count(simulated):
    start, stop, duration = simulated[70.0]
    h = build_histogram(start, stop, duration)
    n = coincidence_rate(h, fit_decay(h, resolution=np.sqrt(2) * 1e-9)) * duration
    assert abs(n - 3400) <= 340


def test_background_matches_singles(simulated):
    start, stop, duration = simulated[70.0]
    h = build_histogram(start, stop, duration)
    fit = fit_decay(h, resolution=np.sqrt(2) * 1e-9)
    expected = h.rate_a * h.rate_b * 1e-9 * duration
    assert abs(fit.background - expected) < 3 * max(fit.background_err, np.sqrt(expected / 300))


def test_brightness_numbers():
    r = brightness_report(4.8, 70, 0.45, 22.4e6)
    assert r.extrapolated_rate == pytest.approx(336.0)
    assert r.spectral_brightness_generated == pytest.approx(1.0582, rel=1e-3)


def test_brightness_edge_cases():
    assert brightness_report(0.0, 70, 0.45, 22.4e6).spectral_brightness_generated == 0.0
    a = brightness_report(4.8, 70, 0.45, 22.4e6).spectral_brightness_generated
    b = brightness_report(4.8, 70, 0.45, 44.8e6).spectral_brightness_generated
    assert b == pytest.approx(a / 2)
    with pytest.raises(DomainError):
        brightness_report(4.8, 70, 0.0, 22.4e6)


def test_efficiency_budget():
    assert efficiency_budget(0.88, 0.88, 0.42, 0.45) == pytest.approx(0.1463616)
    assert efficiency_budget(("fiber", 0.42), 1.0, 1.0) == pytest.approx(0.42)
    assert efficiency_budget() == 1.0
    with pytest.raises(DomainError):
        efficiency_budget(1.2)


def test_text_outputs(tmp_path):
    h = CoincidenceHistogram(1e-9, (0, 2e-9), [3, 4], 1.0)
    write_histogram_csv(h, tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines() == [
        "delay_s,counts", "5.000000e-10,3", "1.500000e-09,4"]
    write_report([("a", 0.5), ("b", 3)], tmp_path / "r.txt")
    assert (tmp_path / "r.txt").read_text() == "a = 0.5\nb = 3\n"

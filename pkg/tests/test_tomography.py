import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize
from scipy.stats import unitary_group

from narrowpair.errors import DomainError
from narrowpair.tomography import (KETS, PHI_MINUS, PHI_PLUS, PSI_MINUS, PSI_PLUS,
                                   WAVEPLATE_TABLE, DensityMatrix, MeasurementSetting,
                                   TomographyRecord, bell_diagonal_state, bootstrap_errors,
                                   calibrated_state, canonical_16_settings, concurrence,
                                   entanglement_report, fidelity_with_singlet, gram_matrix,
                                   linear_reconstruction, log_likelihood, mle_reconstruction,
                                   physicalize, probabilities, pure, read_counts_csv,
                                   simulate_counts, subtract_accidentals, visibility,
                                   werner_state, write_counts_csv, write_matrix_csv)
from narrowpair.tomography import waveplate_projector

SETTINGS = canonical_16_settings()


def _same_ray(a, b):
    return abs(abs(np.vdot(a, b)) - 1) < 1e-12


def _exact_record(rho, n=1e4):
    return TomographyRecord(SETTINGS, n * probabilities(rho, SETTINGS), np.zeros(16))


def _random_state(rng, rank=4):
    g = rng.normal(size=(4, rank)) + 1j * rng.normal(size=(4, rank))
    m = g @ g.conj().T
    return DensityMatrix(m / np.trace(m))


def test_identity_waveplates_give_h():
    assert _same_ray(waveplate_projector(0.0, 0.0), KETS["H"])


@pytest.mark.parametrize("label", sorted(WAVEPLATE_TABLE))
def test_waveplate_table(label):
    q, h = np.deg2rad(WAVEPLATE_TABLE[label])
    assert _same_ray(waveplate_projector(q, h), KETS[label])


@settings(max_examples=50, deadline=None)
@given(q=st.floats(-np.pi, np.pi), h=st.floats(-np.pi, np.pi))
def test_projector_normalized(q, h):
    assert abs(np.linalg.norm(waveplate_projector(q, h)) - 1) < 1e-12


def test_unknown_label():
    with pytest.raises(DomainError):
        MeasurementSetting.from_label("HX")


def test_sixteen_settings_complete():
    assert len(SETTINGS) == 16
    g = gram_matrix(SETTINGS)
    assert np.isfinite(np.linalg.cond(g))
    assert np.linalg.matrix_rank(g) == 16
    for s in SETTINGS:
        p = s.projector
        assert abs(np.trace(p) - 1) < 1e-12
        # product state: reduced states are pure
        red = np.einsum("ijkj->ik", p.reshape(2, 2, 2, 2))
        assert abs(np.trace(red @ red) - 1) < 1e-12


def test_simulated_means():
    singlet = pure(PSI_MINUS)
    hv = MeasurementSetting.from_label("HV")
    hh = MeasurementSetting.from_label("HH")
    assert probabilities(singlet, [hv])[0] == pytest.approx(0.5)
    assert probabilities(singlet, [hh])[0] == pytest.approx(0.0, abs=1e-15)
    assert np.allclose(probabilities(np.eye(4) / 4, SETTINGS), 0.25)
    rec = simulate_counts(singlet, [hv, hh], 10**6, accidental_rate=7.0, seed=1)
    assert abs(rec.raw[0] - 5e5) < 5 * np.sqrt(5e5)
    assert abs(rec.raw[1] - 7.0) < 5 * np.sqrt(7.0)


def test_simulation_deterministic():
    a = simulate_counts(werner_state(0.7), SETTINGS, 1000, 3.0, seed=4)
    b = simulate_counts(werner_state(0.7), SETTINGS, 1000, 3.0, seed=4)
    assert np.array_equal(a.raw, b.raw)


def test_record_validation():
    with pytest.raises(DomainError):
        TomographyRecord(SETTINGS, np.ones(15), np.zeros(15))
    with pytest.raises(DomainError):
        TomographyRecord(SETTINGS, -np.ones(16), np.zeros(16))


def test_subtraction_identity_without_accidentals():
    rec = simulate_counts(pure(PSI_MINUS), SETTINGS, 1000, seed=2)
    corrected, clamped = subtract_accidentals(rec)
    assert np.array_equal(corrected, rec.raw) and not clamped.any()


def test_subtraction_clamps_with_warning():
    rec = TomographyRecord(SETTINGS, np.full(16, 5.0), np.r_[10.0, np.zeros(15)])
    with pytest.warns(RuntimeWarning, match="HH"):
        corrected, clamped = subtract_accidentals(rec)
    assert corrected[0] == 0 and clamped[0] and not clamped[1:].any()


def test_subtraction_restores_visibility():
    rec = _exact_record(pure(PSI_MINUS), 1e4)
    noisy = rec.with_raw(rec.raw + 200.0)
    floor = TomographyRecord(SETTINGS, noisy.raw, np.full(16, 200.0))
    v_raw = visibility(linear_reconstruction(noisy), "HV")
    v_sub = visibility(linear_reconstruction(floor), "HV")
    assert v_raw < 0.97 and v_sub == pytest.approx(1.0, abs=1e-10)


@pytest.mark.parametrize("seed", range(4))
def test_linear_inversion_exact(seed):
    rho = _random_state(np.random.default_rng(seed))
    est = linear_reconstruction(_exact_record(rho))
    assert np.max(np.abs(est.matrix - rho.matrix)) < 1e-10
    assert est.physical


def test_linear_noisy_singlet_flagged():
    rec = simulate_counts(pure(PSI_MINUS), SETTINGS, 100, seed=0)
    est = linear_reconstruction(rec)
    assert not est.physical
    assert est.eigenvalues.min() < 0
    assert abs(np.trace(est.matrix) - 1) < 1e-12


def test_linear_equal_counts_mixed():
    rec = TomographyRecord(SETTINGS, np.full(16, 250.0), np.zeros(16))
    assert np.allclose(linear_reconstruction(rec).matrix, np.eye(4) / 4, atol=1e-12)


def test_physicalize():
    rec = simulate_counts(pure(PSI_MINUS), SETTINGS, 100, seed=0)
    phys = physicalize(linear_reconstruction(rec))
    assert phys.check(1e-10)


@pytest.mark.parametrize("rho", [pure(PSI_MINUS), werner_state(0.6), calibrated_state()],
                         ids=["singlet", "werner", "calibrated"])
def test_mle_exact_counts(rho):
    est = mle_reconstruction(_exact_record(rho), restarts=1)
    assert est.trace_distance(rho) < 1e-6


def test_mle_singlet_round_trip():
    rec = simulate_counts(pure(PSI_MINUS), SETTINGS, 10**4, seed=3)
    assert fidelity_with_singlet(mle_reconstruction(rec)) > 0.99


@settings(max_examples=10, deadline=None)
@given(counts=st.lists(st.integers(0, 500), min_size=16, max_size=16).filter(lambda c: sum(c) > 0))
def test_mle_always_physical(counts):
    rec = TomographyRecord(SETTINGS, counts, np.zeros(16))
    assert mle_reconstruction(rec, restarts=1).check(1e-10)


@pytest.mark.parametrize("seed", range(3))
def test_mle_improves_likelihood(seed):
    rec = simulate_counts(werner_state(0.9), SETTINGS, 200, seed=seed)
    k = subtract_accidentals(rec)[0]
    start = physicalize(linear_reconstruction(rec))
    assert log_likelihood(mle_reconstruction(rec), k, SETTINGS) >= \
        log_likelihood(start, k, SETTINGS) - 1e-9


def test_mle_empty_counts():
    with pytest.raises(DomainError):
        mle_reconstruction(TomographyRecord(SETTINGS, np.zeros(16), np.zeros(16)))


@pytest.mark.parametrize("ket", [PSI_MINUS, PSI_PLUS, PHI_MINUS, PHI_PLUS])
def test_bell_states_maximal(ket):
    assert concurrence(pure(ket)) == pytest.approx(1.0, abs=1e-10)


def test_product_state_zero():
    ket = np.kron(KETS["D"], KETS["R"])
    assert concurrence(pure(ket)) == pytest.approx(0.0, abs=1e-10)
    assert concurrence(np.eye(4) / 4) == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("p", [0.0, 1 / 3, 0.5, 0.9, 1.0])
def test_werner_metrics(p):
    rho = werner_state(p)
    assert concurrence(rho) == pytest.approx(max(0.0, (3 * p - 1) / 2), abs=1e-10)
    assert fidelity_with_singlet(rho) == pytest.approx(p + (1 - p) / 4, abs=1e-10)


def test_concurrence_matches_eigen_formula():
    sysy = np.kron([[0, -1j], [1j, 0]], [[0, -1j], [1j, 0]])
    rng = np.random.default_rng(9)
    for _ in range(5):
        rho = _random_state(rng).matrix
        lam = np.sqrt(np.abs(np.linalg.eigvals(rho @ sysy @ rho.conj() @ sysy)))
        lam = np.sort(lam)[::-1]
        assert concurrence(rho) == pytest.approx(max(0, lam[0] - lam[1:].sum()), abs=1e-9)


@pytest.mark.parametrize("seed", range(5))
def test_local_unitary_invariance(seed):
    rng = np.random.default_rng(seed)
    rho = _random_state(rng, rank=2).matrix
    u = np.kron(unitary_group.rvs(2, random_state=rng), unitary_group.rvs(2, random_state=rng))
    moved = u @ rho @ u.conj().T
    assert concurrence(moved) == pytest.approx(concurrence(rho), abs=1e-9)
    assert concurrence(np.exp(1.3j) * rho * np.exp(-1.3j)) == pytest.approx(concurrence(rho))


@settings(max_examples=40, deadline=None)
@given(w=st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3), top=st.floats(0.5, 1.0))
def test_bell_diagonal_fidelity_relation(w, top):
    rest = np.array(w) + 1e-9
    rest = rest / rest.sum() * (1 - top)
    m = top * np.outer(PSI_MINUS, PSI_MINUS.conj())
    for weight, ket in zip(rest, (PSI_PLUS, PHI_MINUS, PHI_PLUS)):
        m = m + weight * np.outer(ket, ket.conj())
    assert fidelity_with_singlet(m) == pytest.approx((1 + concurrence(m)) / 2, abs=1e-9)


def test_visibilities():
    assert visibility(pure(PSI_MINUS), "HV") == pytest.approx(1.0)
    assert visibility(pure(PSI_MINUS), "PM") == pytest.approx(1.0)
    assert visibility(np.eye(4) / 4, "HV") == pytest.approx(0.0)
    assert visibility(pure(PSI_MINUS), "+-45") == visibility(pure(PSI_MINUS), "PM")
    with pytest.raises(DomainError):
        visibility(pure(PSI_MINUS), "RL")


def test_calibrated_state_visibilities():
    rho = calibrated_state()
    assert rho.check()
    assert visibility(rho, "HV") == pytest.approx(0.991, abs=1e-12)
    assert visibility(rho, "PM") == pytest.approx(0.975, abs=1e-12)


def test_calibration_by_search():
    # numerical 2-D search over the (a, b) family lands on the closed form
    def loss(x):
        rho = bell_diagonal_state(x[0], x[1])
        return (visibility(rho, "HV") - 0.991) ** 2 + (visibility(rho, "PM") - 0.975) ** 2
    res = minimize(loss, [0.9, 0.05], method="Nelder-Mead",
                   options={"xatol": 1e-12, "fatol": 1e-20})
    assert res.x == pytest.approx([0.983, 0.008], abs=1e-6)


def test_unphysical_calibration_rejected():
    with pytest.raises(DomainError):
        calibrated_state(0.97, 0.99)


def test_report_bounds():
    rep = entanglement_report(werner_state(0.2))
    for v in (rep.concurrence, rep.fidelity, rep.visibility_hv, rep.visibility_pm):
        assert 0 <= v <= 1


def test_bootstrap_single_resample():
    rec = simulate_counts(werner_state(0.8), SETTINGS, 1000, seed=1)
    rep = bootstrap_errors(rec, 1, seed=2)
    assert rep.concurrence_err == rep.fidelity_err == 0.0


def test_bootstrap_deterministic_any_workers():
    rec = simulate_counts(werner_state(0.8), SETTINGS, 1000, seed=1)
    assert bootstrap_errors(rec, 6, seed=3) == bootstrap_errors(rec, 6, seed=3, workers=3)


@pytest.mark.slow
def test_bootstrap_scaling():
    errs = []
    for n in (10**3, 10**4, 10**5):
        rec = simulate_counts(werner_state(0.8), SETTINGS, n, seed=1)
        rep = bootstrap_errors(rec, 40, seed=2)
        errs.append((rep.concurrence_err, rep.fidelity_err))
    errs = np.array(errs)
    ratios = errs[:-1] / errs[1:]
    assert np.all(ratios > np.sqrt(10) / 1.5) and np.all(ratios < np.sqrt(10) * 1.5)


def test_bootstrap_singlet_bracket():
    rec = simulate_counts(pure(PSI_MINUS), SETTINGS, 10**4, seed=1)
    rep = bootstrap_errors(rec, 30, seed=2)
    assert 0.001 < rep.concurrence_err < 0.05


def test_counts_csv_round_trip(tmp_path):
    rec = simulate_counts(werner_state(0.8), SETTINGS, 1000, 2.5, seed=1)
    write_counts_csv(rec, tmp_path / "c.csv")
    back = read_counts_csv(tmp_path / "c.csv")
    assert back.labels == rec.labels
    assert np.array_equal(back.raw, rec.raw)
    assert np.array_equal(back.accidentals, rec.accidentals)


def test_counts_csv_bad_row(tmp_path):
    (tmp_path / "c.csv").write_text("setting_label,raw_count,accidental_count\nHH,3\n")
    with pytest.raises(DomainError, match="row 1"):
        read_counts_csv(tmp_path / "c.csv")


def test_matrix_csv(tmp_path):
    write_matrix_csv(pure(PSI_MINUS), tmp_path / "re.csv", tmp_path / "im.csv")
    rows = (tmp_path / "re.csv").read_text().splitlines()
    assert rows[0] == ",HH,HV,VH,VV"
    assert rows[2] == "HV,0,0.5,-0.5,0"

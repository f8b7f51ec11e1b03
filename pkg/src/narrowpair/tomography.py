"""Two-photon polarization tomography and entanglement measures.

Basis ordering is ``|HH>, |HV>, |VH>, |VV>`` with the first factor the
photon in arm A.

Waveplate convention
--------------------
A retarder with retardance ``g`` and fast axis at angle ``t`` from
horizontal has Jones matrix ``R(t) @ diag(1, exp(i g)) @ R(-t)`` with
``R(t) = [[cos t, -sin t], [sin t, cos t]]``.  The analyzer in each arm is
quarter-wave plate, then half-wave plate, then a PBS whose transmitted port
is H.  The measured state is therefore ``(W_h W_q)^dagger |H>``::

    state   quarter   half
    H         0        0
    V         0       45
    D        45       22.5
    A        45       67.5
    R         0       22.5
    L         0       67.5

with ``D = (H+V)/sqrt2``, ``A = (H-V)/sqrt2``, ``R = (H-iV)/sqrt2`` and
``L = (H+iV)/sqrt2`` (angles in degrees).
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import csv
import warnings

import numpy as np

from .errors import DomainError, MLEStagnationError
from .seeding import seed_sequence

_S2 = np.sqrt(0.5)

KETS = {
    "H": np.array([1, 0], dtype=complex),
    "V": np.array([0, 1], dtype=complex),
    "D": np.array([_S2, _S2], dtype=complex),
    "A": np.array([_S2, -_S2], dtype=complex),
    "R": np.array([_S2, -1j * _S2], dtype=complex),
    "L": np.array([_S2, 1j * _S2], dtype=complex),
}

WAVEPLATE_TABLE = {
    "H": (0.0, 0.0),
    "V": (0.0, 45.0),
    "D": (45.0, 22.5),
    "A": (45.0, 67.5),
    "R": (0.0, 22.5),
    "L": (0.0, 67.5),
}

# James, Kwiat, Munro & White, PRA 64, 052312 (2001), Table I order
CANONICAL_LABELS = ("HH", "HV", "VV", "VH", "RH", "RV", "DV", "DH",
                    "DR", "DD", "RD", "HD", "VD", "VL", "HL", "RL")

PSI_MINUS = np.array([0, 1, -1, 0], dtype=complex) * _S2
PSI_PLUS = np.array([0, 1, 1, 0], dtype=complex) * _S2
PHI_MINUS = np.array([1, 0, 0, -1], dtype=complex) * _S2
PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) * _S2

_SYSY = np.kron(np.array([[0, -1j], [1j, 0]]), np.array([[0, -1j], [1j, 0]]))


@dataclass(frozen=True)
class DensityMatrix:
    """Two-qubit density matrix in the H/V basis."""

    matrix: np.ndarray = field(repr=False)
    physical: bool = True

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (4, 4):
            raise DomainError("density matrix must be 4x4, got shape %r" % (m.shape,))
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)

    @property
    def eigenvalues(self):
        return np.linalg.eigvalsh(_hermitian_part(self.matrix))

    def check(self, tol=1e-10):
        """True if Hermitian, unit trace and positive semidefinite within ``tol``."""
        m = self.matrix
        return (np.max(np.abs(m - m.conj().T)) <= tol
                and abs(np.trace(m) - 1) <= tol
                and self.eigenvalues.min() >= -tol)

    def trace_distance(self, other):
        diff = self.matrix - np.asarray(other)
        return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(_hermitian_part(diff)))))


def _hermitian_part(m):
    return 0.5 * (m + m.conj().T)


def _as_matrix(rho):
    return np.asarray(rho, dtype=complex)


def pure(ket):
    ket = np.asarray(ket, dtype=complex)
    return DensityMatrix(np.outer(ket, ket.conj()))


def werner_state(p):
    return DensityMatrix(p * np.outer(PSI_MINUS, PSI_MINUS.conj()) + (1 - p) * np.eye(4) / 4)


def bell_diagonal_state(a, b, partner=PSI_PLUS):
    """``a |Psi-><Psi-| + b |partner><partner| + (1-a-b) I/4``."""
    m = (a * np.outer(PSI_MINUS, PSI_MINUS.conj()) + b * np.outer(partner, partner.conj())
         + (1 - a - b) * np.eye(4) / 4)
    return DensityMatrix(m)


def singlet_state(depolarization=0.0):
    return werner_state(1.0 - depolarization)


def calibrated_state(v_hv=0.991, v_pm=0.975):
    """Bell-diagonal state matching the anti-correlation visibilities.

    Mixing the singlet with ``|Psi+>`` and white noise gives ``V_HV = a + b``
    and ``V_pm = a - b``.  The 2-D search is closed-form here; the parameters
    are recovered numerically as a consistency check in the tests.
    """
    a = 0.5 * (v_hv + v_pm)
    b = 0.5 * (v_hv - v_pm)
    if b < 0 or a + b > 1:
        raise DomainError("visibilities (%.4f, %.4f) not reachable by the Psi+ family"
                          % (v_hv, v_pm))
    return bell_diagonal_state(a, b, PSI_PLUS)


# -- measurement settings ------------------------------------------------------

def _retarder(theta, retardance):
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    return rot @ np.diag([1.0, np.exp(1j * retardance)]) @ rot.T


def waveplate_projector(quarter, half):
    """Single-qubit state transmitted by the QWP/HWP/PBS analyzer (angles in rad)."""
    m = _retarder(half, np.pi) @ _retarder(quarter, np.pi / 2)
    return m.conj().T @ KETS["H"]


@dataclass(frozen=True)
class MeasurementSetting:
    label: str
    quarter_a: float
    half_a: float
    quarter_b: float
    half_b: float

    @classmethod
    def from_label(cls, label):
        try:
            qa, ha = WAVEPLATE_TABLE[label[0]]
            qb, hb = WAVEPLATE_TABLE[label[1]]
        except (KeyError, IndexError):
            raise DomainError("unknown setting label %r" % label) from None
        return cls(label, *np.deg2rad([qa, ha, qb, hb]))

    @property
    def state(self):
        return np.kron(waveplate_projector(self.quarter_a, self.half_a),
                       waveplate_projector(self.quarter_b, self.half_b))

    @property
    def projector(self):
        psi = self.state
        return np.outer(psi, psi.conj())


def canonical_16_settings():
    return [MeasurementSetting.from_label(s) for s in CANONICAL_LABELS]


@dataclass(frozen=True)
class TomographyRecord:
    """Raw coincidence counts per setting and the accidental estimate for each."""

    settings: tuple
    raw: np.ndarray
    accidentals: np.ndarray
    acquisition_time: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "settings", tuple(self.settings))
        raw = np.array(self.raw, dtype=float)
        acc = np.array(self.accidentals, dtype=float)
        if raw.shape != (len(self.settings),) or acc.shape != raw.shape:
            raise DomainError("counts must match the number of settings")
        if np.any(raw < 0) or np.any(acc < 0):
            raise DomainError("counts must be non-negative")
        raw.setflags(write=False)
        acc.setflags(write=False)
        object.__setattr__(self, "raw", raw)
        object.__setattr__(self, "accidentals", acc)

    @property
    def labels(self):
        return [s.label for s in self.settings]

    def with_raw(self, raw):
        return TomographyRecord(self.settings, raw, self.accidentals, self.acquisition_time)


def probabilities(rho, settings):
    m = _as_matrix(rho)
    return np.array([np.real(np.vdot(s.state, m @ s.state)) for s in settings])


def simulate_counts(rho, settings, n_per_setting, accidental_rate=0.0, seed=0):
    """Poisson counts with mean ``N Tr(rho Pi) + accidentals`` per setting.

    ``accidental_rate`` is the expected number of accidental coincidences per
    setting and is also recorded as the accidental estimate.
    """
    rng = np.random.Generator(np.random.PCG64(seed_sequence(seed, "tomography.counts")))
    mean = n_per_setting * np.clip(probabilities(rho, settings), 0, None) + accidental_rate
    raw = rng.poisson(mean)
    return TomographyRecord(settings, raw, np.full(len(settings), float(accidental_rate)))


def accidental_estimate(rate_a, rate_b, window, acquisition_time):
    """Expected accidentals r_A * r_B * dt * T."""
    return rate_a * rate_b * window * acquisition_time


def subtract_accidentals(record):
    """Raw minus accidentals, clamped at zero.  Returns (corrected, clamped mask)."""
    diff = record.raw - record.accidentals
    clamped = diff < 0
    if np.any(clamped):
        warnings.warn("accidental estimate exceeds raw counts for settings %s; clamped to 0"
                      % [record.labels[i] for i in np.flatnonzero(clamped)],
                      RuntimeWarning, stacklevel=2)
    return np.where(clamped, 0.0, diff), clamped


# -- reconstruction ------------------------------------------------------------

_PAULI = [np.eye(2), np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]),
          np.diag([1.0, -1.0])]
_PAULI2 = [np.kron(a, b) for a in _PAULI for b in _PAULI]


def _design_matrix(settings):
    # counts_i / N = sum_j Tr(Pi_i sigma_j) r_j / 4
    return np.array([[np.real(np.vdot(s.state, p @ s.state)) / 4 for p in _PAULI2]
                     for s in settings])


def gram_matrix(settings):
    vecs = np.array([s.projector.reshape(-1) for s in settings])
    return vecs.conj() @ vecs.T


def _counts(record_or_counts):
    if isinstance(record_or_counts, TomographyRecord):
        return subtract_accidentals(record_or_counts)[0], record_or_counts.settings
    raise TypeError("expected a TomographyRecord")


def linear_reconstruction(record, counts=None):
    """Invert the 16-setting linear map; trace-normalized, may be non-physical."""
    if counts is None:
        counts, settings = _counts(record)
    else:
        settings = record.settings
    design = _design_matrix(settings)
    if design.shape[0] < 16:
        raise DomainError("need at least 16 settings for linear inversion")
    coeff = np.linalg.lstsq(design, np.asarray(counts, dtype=float), rcond=None)[0]
    m = sum(c * p for c, p in zip(coeff, _PAULI2)) / 4
    tr = np.real(np.trace(m))
    if not tr > 0:
        raise DomainError("linear reconstruction has non-positive trace")
    m = _hermitian_part(m / tr)
    return DensityMatrix(m, physical=bool(np.linalg.eigvalsh(m).min() >= -1e-10))


def physicalize(rho):
    """Clip negative eigenvalues and renormalize."""
    w, v = np.linalg.eigh(_hermitian_part(_as_matrix(rho)))
    w = np.clip(w, 0, None)
    m = (v * w) @ v.conj().T
    return DensityMatrix(m / np.real(np.trace(m)))


def log_likelihood(rho, counts, settings):
    """Poisson log-likelihood with the overall intensity profiled out."""
    p = np.clip(probabilities(rho, settings), 0, None)
    k = np.asarray(counts, dtype=float)
    scale = k.sum() / p.sum()
    return _poisson_ll(k, scale * p)


def _poisson_ll(k, mu):
    pos = k > 0
    if np.any(mu[pos] <= 0):
        return -np.inf
    return float(np.sum(k[pos] * np.log(mu[pos])) - np.sum(mu))


_TRIL = np.tril_indices(4)
_OFF = np.tril_indices(4, -1)


def _t_from_params(x):
    t = np.zeros((4, 4), dtype=complex)
    t[np.diag_indices(4)] = x[:4]
    t[_OFF] = x[4:10] + 1j * x[10:16]
    return t


def _params_from_gram(m):
    """Lower-triangular T with ``T^dagger T = m`` (m positive definite)."""
    flip = m[::-1, ::-1]
    lower = np.linalg.cholesky(flip)
    upper = lower[::-1, ::-1]          # m = upper @ upper^dagger
    t = upper.conj().T
    return np.concatenate([np.real(np.diag(t)), np.real(t[_OFF]), np.imag(t[_OFF])])


def _mu_and_jac(x, kets):
    t = _t_from_params(x)
    v = kets @ t.T                     # row i: T psi_i
    mu = np.sum(np.abs(v) ** 2, axis=1)
    # d mu_i / d T_ab = 2 Re(conj(v_ia) psi_ib) (real part), -2 Im(...) (imag part)
    prod = np.conj(v)[:, :, None] * kets[:, None, :]
    jac = np.empty((kets.shape[0], 16))
    jac[:, :4] = 2 * np.real(prod[:, np.arange(4), np.arange(4)])
    jac[:, 4:10] = 2 * np.real(prod[:, _OFF[0], _OFF[1]])
    jac[:, 10:16] = -2 * np.imag(prod[:, _OFF[0], _OFF[1]])
    return mu, jac


def _lm_poisson(x, k, kets, max_iter, rtol):
    """Damped Gauss-Newton (Fisher scoring) ascent of the Poisson likelihood."""
    mu, jac = _mu_and_jac(x, kets)
    ll = _poisson_ll(k, mu)
    lam = 1e-3
    small = 0
    for it in range(max_iter):
        w = 1.0 / np.maximum(mu, 1e-12 * max(k.sum(), 1.0))
        grad = jac.T @ (k * w - 1.0)
        fisher = (jac.T * w) @ jac
        diag = np.diag(fisher).copy() + 1e-12 * np.trace(fisher) + 1e-300
        accepted = False
        while lam < 1e16:
            try:
                step = np.linalg.solve(fisher + lam * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            x_new = x + step
            mu_new, jac_new = _mu_and_jac(x_new, kets)
            ll_new = _poisson_ll(k, mu_new)
            if ll_new >= ll:
                accepted = True
                break
            lam *= 4
        if not accepted:
            return x, ll, float(np.linalg.norm(grad)), True
        change = abs(ll_new - ll) / max(abs(ll_new), 1e-300)
        x, mu, jac, ll = x_new, mu_new, jac_new, ll_new
        lam = max(lam / 3, 1e-12)
        small = small + 1 if change < rtol else 0
        if small >= 3:
            grad = jac.T @ (k / np.maximum(mu, 1e-300) - 1.0)
            return x, ll, float(np.linalg.norm(grad)), True
    grad = jac.T @ (k / np.maximum(mu, 1e-300) - 1.0)
    return x, ll, float(np.linalg.norm(grad)), False


def mle_reconstruction(record, counts=None, restarts=5, seed=0, max_iter=500, rtol=1e-10):
    """Maximum-likelihood physical density matrix, rho = T^dag T / Tr(T^dag T).

    The first start is the physicalized linear estimate; ``restarts``
    additional random starts use seeds derived from ``seed``.  Raises
    :class:`MLEStagnationError` when no start converges.
    """
    if counts is None:
        counts, settings = _counts(record)
    else:
        settings = record.settings
    k = np.asarray(counts, dtype=float)
    if k.sum() <= 0:
        raise DomainError("no counts to reconstruct from")
    kets = np.array([s.state for s in settings])

    try:
        rho0 = physicalize(linear_reconstruction(record, counts)).matrix
    except DomainError:
        rho0 = np.eye(4) / 4
    p0 = np.real(np.einsum("ij,jk,ik->i", kets.conj(), rho0, kets))
    scale = k.sum() / max(p0.sum(), 1e-300)
    starts = [_params_from_gram(scale * (rho0 + 1e-9 * np.eye(4)))]
    rng = np.random.Generator(np.random.PCG64(seed_sequence(seed, "tomography.mle")))
    for _ in range(restarts):
        g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        m = g @ g.conj().T
        m *= k.sum() / max(np.real(np.einsum("ij,jk,ik->i", kets.conj(), m, kets)).sum(),
                           1e-300)
        starts.append(_params_from_gram(m))

    best = None
    for x0 in starts:
        x, ll, gnorm, ok = _lm_poisson(x0, k, kets, max_iter, rtol)
        if best is None or ll > best[1]:
            best = (x, ll, gnorm, ok)
    x, ll, gnorm, ok = best
    t = _t_from_params(x)
    m = t.conj().T @ t
    m = _hermitian_part(m / np.real(np.trace(m)))
    if not ok:
        raise MLEStagnationError("likelihood maximization did not converge",
                                 best_rho=DensityMatrix(m), gradient_norm=gnorm)
    return DensityMatrix(m)


# -- metrics -------------------------------------------------------------------

def _sqrtm_psd(m):
    w, v = np.linalg.eigh(_hermitian_part(m))
    return (v * np.sqrt(np.clip(w, 0, None))) @ v.conj().T


def concurrence(rho):
    """Wootters concurrence.

    Uses the singular values of ``sqrt(rho) sqrt(rho~)``, which equal the
    square roots of the eigenvalues of ``rho rho~`` but stay accurate for
    rank-deficient states.  Negative eigenvalues are clipped.
    """
    m = _as_matrix(rho)
    s = _sqrtm_psd(m)
    s_tilde = _SYSY @ s.conj() @ _SYSY
    lam = np.sort(np.linalg.svd(s @ s_tilde, compute_uv=False))[::-1]
    return float(max(0.0, lam[0] - lam[1] - lam[2] - lam[3]))


def fidelity_with_singlet(rho):
    m = _as_matrix(rho)
    return float(np.real(np.vdot(PSI_MINUS, m @ PSI_MINUS)))


_BASES = {
    "HV": (KETS["H"], KETS["V"]),
    "PM": (KETS["D"], KETS["A"]),
}


def visibility(rho, basis="HV"):
    """Anti-correlation visibility (C_anti - C_corr) / (C_anti + C_corr)."""
    key = {"HV": "HV", "PM": "PM", "+-45": "PM", "±45": "PM", "DA": "PM"}.get(basis)
    if key is None:
        raise DomainError("unknown basis %r (use 'HV' or 'PM')" % basis)
    m = _as_matrix(rho)
    e0, e1 = _BASES[key]
    prob = lambda a, b: np.real(np.vdot(np.kron(a, b), m @ np.kron(a, b)))
    corr = prob(e0, e0) + prob(e1, e1)
    anti = prob(e0, e1) + prob(e1, e0)
    return float((anti - corr) / (anti + corr))


@dataclass(frozen=True)
class EntanglementReport:
    concurrence: float
    fidelity: float
    visibility_hv: float
    visibility_pm: float
    concurrence_err: float = 0.0
    fidelity_err: float = 0.0
    visibility_hv_err: float = 0.0
    visibility_pm_err: float = 0.0

    def as_pairs(self):
        return [("concurrence", self.concurrence), ("concurrence_err", self.concurrence_err),
                ("fidelity", self.fidelity), ("fidelity_err", self.fidelity_err),
                ("visibility_hv", self.visibility_hv),
                ("visibility_hv_err", self.visibility_hv_err),
                ("visibility_pm", self.visibility_pm),
                ("visibility_pm_err", self.visibility_pm_err)]


def _metrics(rho):
    return np.array([concurrence(rho), fidelity_with_singlet(rho),
                     visibility(rho, "HV"), visibility(rho, "PM")])


def entanglement_report(rho):
    return EntanglementReport(*(float(np.clip(v, 0, 1)) for v in _metrics(rho)))


def bootstrap_errors(record, n_resamples=50, seed=0, workers=None, restarts=2):
    """Parametric bootstrap: Poisson-resample raw counts and re-reconstruct.

    Point values come from the MLE on the record itself; uncertainties are
    sample standard deviations over resamples (zero for a single resample).
    """
    if n_resamples < 1:
        raise DomainError("n_resamples must be at least 1")
    root = seed_sequence(seed, "tomography.bootstrap")
    children = root.spawn(n_resamples)

    def one(child):
        rng = np.random.Generator(np.random.PCG64(child))
        resampled = record.with_raw(rng.poisson(record.raw))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            counts = subtract_accidentals(resampled)[0]
        if counts.sum() <= 0:
            return np.full(4, np.nan)
        sub_seed = int(child.generate_state(1, dtype=np.uint64)[0])
        return _metrics(mle_reconstruction(resampled, counts, restarts=restarts,
                                           seed=sub_seed))

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            samples = np.array(list(ex.map(one, children)))
    else:
        samples = np.array([one(c) for c in children])
    ddof = 1 if n_resamples > 1 else 0
    std = np.nanstd(samples, axis=0, ddof=ddof)
    point = _metrics(mle_reconstruction(record, restarts=restarts, seed=seed))
    point = np.clip(point, 0, 1)
    return EntanglementReport(*(float(v) for v in point), *(float(v) for v in std))


# -- file formats --------------------------------------------------------------

def read_counts_csv(path):
    """Read ``setting_label, raw_count, accidental_count`` rows."""
    labels, raw, acc = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if rows and rows[0][0].strip() == "setting_label":
        rows = rows[1:]
    for lineno, row in enumerate(rows, 1):
        if len(row) != 3:
            raise DomainError("counts row %d: expected 3 fields, got %d" % (lineno, len(row)))
        labels.append(row[0].strip())
        raw.append(float(row[1]))
        acc.append(float(row[2]))
    settings = [MeasurementSetting.from_label(l) for l in labels]
    return TomographyRecord(settings, raw, acc)


def write_counts_csv(record, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("setting_label", "raw_count", "accidental_count"))
        for lab, r, a in zip(record.labels, record.raw, record.accidentals):
            w.writerow((lab, "%d" % r if float(r).is_integer() else repr(float(r)),
                        repr(float(a))))


def write_matrix_csv(rho, real_path, imag_path):
    m = _as_matrix(rho)
    for part, path in ((np.real(m), real_path), (np.imag(m), imag_path)):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("", "HH", "HV", "VH", "VV"))
            for label, row in zip(("HH", "HV", "VH", "VV"), part):
                w.writerow([label] + ["%.12g" % (v + 0.0) for v in row])

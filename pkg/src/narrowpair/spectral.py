"""SPDC spectral envelope and Fabry-Perot filter responses.

Frequencies are in Hz.  Detunings ``dnu`` are measured from the filter
chain's lock frequency (the master laser / atomic line).
"""

from dataclasses import dataclass, field, replace
import csv
import functools

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq, minimize_scalar

from .crystal import C_LIGHT, degenerate_qpm_wavelength, qpm_mismatch
from .errors import DomainError, SearchError


@dataclass(frozen=True)
class CavitySpec:
    length: float
    finesse: float = 620.0
    peak_transmission: float = 0.88
    center_offset: float = 0.0

    def __post_init__(self):
        if not self.length > 0:
            raise DomainError("cavity length must be positive, got %r" % self.length)
        if not self.finesse > 1:
            raise DomainError("finesse must exceed 1, got %r" % self.finesse)
        if not 0 < self.peak_transmission <= 1:
            raise DomainError("peak_transmission must lie in (0, 1], got %r"
                              % self.peak_transmission)

    @property
    def fsr(self):
        return cavity_fsr(self.length)

    @property
    def linewidth(self):
        return cavity_linewidth(self)


@dataclass(frozen=True)
class FilterChain:
    cavities: tuple
    lock_frequency: float = C_LIGHT / 849.8e-9

    def __post_init__(self):
        object.__setattr__(self, "cavities", tuple(self.cavities))
        if not self.cavities:
            raise DomainError("filter chain needs at least one cavity")
        if not self.lock_frequency > 0:
            raise DomainError("lock_frequency must be positive")

    @property
    def peak_product(self):
        return float(np.prod([c.peak_transmission for c in self.cavities]))

    @property
    def narrowest(self):
        return min(self.cavities, key=cavity_linewidth)


def design_chain(lock_frequency=C_LIGHT / 849.8e-9, finesse=(620.0, 620.0),
                 lengths=(77.5e-6, 10e-3), peak_transmission=(0.88, 0.88)):
    """The two-cavity filter line: 77.5 um then 10 mm, both locked."""
    cavities = [CavitySpec(L, F, T) for L, F, T in zip(lengths, finesse, peak_transmission)]
    return FilterChain(tuple(cavities), lock_frequency)


def cavity_fsr(length):
    return C_LIGHT / (2.0 * length)


def cavity_linewidth(cavity):
    """Full width at half maximum, FSR / finesse."""
    return cavity_fsr(cavity.length) / cavity.finesse


def airy_transmission(cavity, dnu):
    dnu = np.asarray(dnu, dtype=float)
    coeff = (2 * cavity.finesse / np.pi) ** 2
    s = np.sin(np.pi * (dnu - cavity.center_offset) / cavity.fsr)
    t = cavity.peak_transmission / (1.0 + coeff * s * s)
    return float(t) if t.ndim == 0 else t


def cascade_transmission(chain, dnu, relative=False):
    """Product of the Airy transmissions of every cavity in the chain.

    With ``relative=True`` the result is divided by the product of peak
    transmissions, so a perfectly aligned chain peaks at 1.
    """
    t = np.ones(np.shape(dnu))
    for cav in chain.cavities:
        t = t * airy_transmission(cav, dnu)
    if relative:
        t = t / chain.peak_product
    return float(t) if np.ndim(t) == 0 else t


# -- SPDC envelope ---------------------------------------------------------

def phase_matched_pump_frequency(crystal, grating_index):
    return 2.0 * C_LIGHT / degenerate_qpm_wavelength(crystal, grating_index)


def spdc_intensity(crystal, grating_index, pump_frequency, detuning):
    """sinc^2(dk L / 2) with the signal at nu_p/2 + delta and idler at nu_p/2 - delta."""
    delta = np.asarray(detuning, dtype=float)
    half = pump_frequency / 2.0
    dk = qpm_mismatch(crystal, grating_index, C_LIGHT / pump_frequency,
                      C_LIGHT / (half + delta), C_LIGHT / (half - delta))
    out = np.sinc(np.asarray(dk) * crystal.length / 2.0 / np.pi) ** 2
    return float(out) if out.ndim == 0 else out


def _half_max_edge(f, peak, direction, limit):
    # walk outward in coarse steps, then refine the crossing with Brent
    step = 1e9
    x_prev, x = peak, peak + direction * step
    while abs(x - peak) <= limit:
        if f(x) < 0.5:
            return brentq(lambda d: f(d) - 0.5, min(x_prev, x), max(x_prev, x), xtol=1.0)
        x_prev, x = x, x + direction * step
    raise SearchError("envelope stays above half maximum within +/-%.3g Hz" % limit)


def spdc_fwhm(crystal, grating_index, pump_frequency=None, limit=5e12):
    """Full width at half maximum of the SPDC envelope in signal detuning."""
    if pump_frequency is None:
        pump_frequency = phase_matched_pump_frequency(crystal, grating_index)
    f = lambda d: spdc_intensity(crystal, grating_index, pump_frequency, d)
    peak = 0.0
    if f(peak) < 0.5:
        raise SearchError("envelope below half maximum at zero detuning")
    right = _half_max_edge(f, peak, +1, limit)
    left = _half_max_edge(f, peak, -1, limit)
    return right - left


@dataclass(frozen=True)
class SpdcSpectrum:
    """Tabulated SPDC envelope, peak-normalized, on a detuning grid."""

    crystal: object
    grating_index: int
    pump_frequency: float
    detuning: np.ndarray = field(repr=False)
    intensity: np.ndarray = field(repr=False)
    fwhm: float

    def __post_init__(self):
        for name in ("detuning", "intensity"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def half_span(self):
        return float(np.max(np.abs(self.detuning)))

    def __call__(self, detuning):
        return np.interp(detuning, self.detuning, self.intensity, left=0.0, right=0.0)

    def integral(self):
        return float(trapezoid(self.intensity, self.detuning))


def tabulate_spectrum(crystal, grating_index, pump_frequency=None, half_span=1e12,
                      points=4001):
    if pump_frequency is None:
        pump_frequency = phase_matched_pump_frequency(crystal, grating_index)
    grid = np.linspace(-half_span, half_span, points)
    raw = spdc_intensity(crystal, grating_index, pump_frequency, grid)
    peak = raw.max()
    if not peak > 0:
        raise DomainError("SPDC envelope vanishes on the requested grid")
    return SpdcSpectrum(crystal, grating_index, pump_frequency, grid, raw / peak,
                        spdc_fwhm(crystal, grating_index, pump_frequency))


# -- filter-chain analysis ---------------------------------------------------

def count_transmission_windows(chain, spectrum, threshold=0.5, half_span=None,
                               resolution=1e6):
    """Number of disjoint detuning intervals where relative transmission >= threshold.

    The scan covers ``+/- half_span`` (default: half the spectrum FWHM) at
    ``resolution`` Hz, and sub-threshold local maxima are refined with a
    bounded scalar search so windows narrower than the grid are not missed.
    """
    if not 0 < threshold < 1:
        raise DomainError("threshold must lie in (0, 1), got %r" % threshold)
    if half_span is None:
        half_span = spectrum.fwhm / 2.0
    n = int(np.ceil(2 * half_span / resolution)) + 1
    grid = np.linspace(-half_span, half_span, n)
    t = cascade_transmission(chain, grid, relative=True)
    above = t >= threshold
    rises = np.count_nonzero(above[1:] & ~above[:-1]) + int(above[0])

    inner = t[1:-1]
    local_max = np.flatnonzero((inner > t[:-2]) & (inner >= t[2:]) & (inner < threshold)) + 1
    for i in local_max:
        if above[i - 1] or above[i + 1]:
            continue
        res = minimize_scalar(lambda x: -cascade_transmission(chain, x, relative=True),
                              bounds=(grid[i - 1], grid[i + 1]), method="bounded",
                              options={"xatol": 1.0})
        if -res.fun >= threshold:
            rises += 1
    return int(rises)


def _window_peak(chain):
    narrow = chain.narrowest
    width = cavity_linewidth(narrow)
    half = narrow.fsr / 2.0
    grid = np.linspace(-half, half, int(min(2e6, max(2001, 40 * 2 * half / width))))
    t = cascade_transmission(chain, grid)
    i = int(np.argmax(t - 1e-18 * np.abs(grid)))  # nearest to lock on ties
    step = grid[1] - grid[0]
    res = minimize_scalar(lambda x: -cascade_transmission(chain, x),
                          bounds=(grid[i] - step, grid[i] + step), method="bounded",
                          options={"xatol": 1e-3})
    return float(res.x), -float(res.fun)


@functools.lru_cache(maxsize=64)
def effective_filter_fwhm(chain):
    """FWHM of the composite transmission window nearest the lock frequency."""
    x0, peak = _window_peak(chain)
    f = lambda x: cascade_transmission(chain, x) - 0.5 * peak
    width = cavity_linewidth(chain.narrowest)
    edges = []
    for direction in (+1, -1):
        step = width / 4.0
        a, b = x0, x0 + direction * step
        while f(b) > 0:
            a, b = b, b + direction * step
            if abs(b - x0) > chain.narrowest.fsr / 2:
                raise SearchError("composite window does not fall to half maximum")
        edges.append(brentq(f, min(a, b), max(a, b), xtol=1e-6, rtol=1e-14))
    return edges[0] - edges[1]


def window_center(chain):
    return _window_peak(chain)[0]


def tune_narrow_finesse(chain, target_fwhm):
    """Copy of ``chain`` whose narrowest cavity finesse gives ``target_fwhm``."""
    narrow = chain.narrowest
    idx = chain.cavities.index(narrow)

    def rebuilt(finesse):
        cavs = list(chain.cavities)
        cavs[idx] = replace(narrow, finesse=finesse)
        return FilterChain(tuple(cavs), chain.lock_frequency)

    f = lambda F: effective_filter_fwhm(rebuilt(F)) - target_fwhm
    lo, hi = 1.5, 1e6
    if f(lo) < 0 or f(hi) > 0:
        raise SearchError("target bandwidth %.4g Hz not reachable by finesse tuning"
                          % target_fwhm)
    return rebuilt(brentq(f, lo, hi, xtol=1e-9, rtol=1e-13))


def write_curve_csv(path, x, y, columns=("detuning_hz", "value")):
    """Two-column UTF-8 CSV with a header row."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for a, b in zip(np.asarray(x, dtype=float), np.asarray(y, dtype=float)):
            w.writerow((repr(float(a)), repr(float(b))))

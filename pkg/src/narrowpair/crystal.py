"""Dispersion, quasi-phase-matching and focusing for periodically poled KTP.

All lengths and wavelengths are in meters, temperatures in degrees Celsius.
Refractive indices come from the temperature-dependent Sellmeier set of
Kato & Takaoka (2002)::

    n^2(lam) = A + B / (lam^2 - C) + D / (lam^2 - E)          (lam in um, 20 C)
    dn/dT    = (a / lam^3 + b / lam^2 + c / lam + d) * 1e-5    (per K)

Collinear type-II interaction, propagation along x: the pump and signal are
polarized along y, the idler along z.  Poling-period thermal expansion is
neglected.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy.optimize import bisect

from .errors import DomainError, NoPhaseMatchError

C_LIGHT = 299792458.0

KATO_2002 = "Kato & Takaoka, Appl. Opt. 41, 5040 (2002)"

# (A, B, C, D, E) Sellmeier, (a, b, c, d) thermo-optic, per axis.
_SELLMEIER = {
    KATO_2002: {
        "y": ((3.45018, 0.04341, 0.04597, 16.98825, 39.43799),
              (0.1997, -0.4063, 0.5154, 0.5425)),
        "z": ((4.59423, 0.06206, 0.04763, 110.80672, 86.12171),
              (0.9221, -2.9220, 3.6677, -0.1897)),
    },
}
_REFERENCE_TEMPERATURE = 20.0

# The Sellmeier fit is stated from about 0.43 um; the window is stretched to 0.40 um
# so the 425-427 nm pump can be evaluated (mild extrapolation).
WAVELENGTH_RANGE = (0.40e-6, 3.54e-6)
TEMPERATURE_RANGE = (0.0, 150.0)

# type-II assignment: (pump, signal, idler)
TYPE_II_AXES = ("y", "y", "z")

_BRACKET = (800e-9, 900e-9)
_XTOL = 1e-15


@dataclass(frozen=True)
class CrystalSpec:
    """Geometry, poling gratings and operating point of the crystal."""

    length: float = 20e-3
    gratings: tuple = (14.03e-6, 14.63e-6)
    temperature: float = 25.0
    width: float = 6e-3
    height: float = 1e-3
    dispersion_model: str = KATO_2002

    def __post_init__(self):
        object.__setattr__(self, "gratings", tuple(float(g) for g in self.gratings))
        if not self.length > 0:
            raise DomainError("crystal length must be positive, got %r" % self.length)
        if not self.gratings or any(not g > 0 for g in self.gratings):
            raise DomainError("poling periods must be positive, got %r" % (self.gratings,))
        if self.dispersion_model not in _SELLMEIER:
            raise DomainError("unknown dispersion model %r" % self.dispersion_model)
        _check_temperature(self.temperature)

    def with_temperature(self, temperature):
        return CrystalSpec(self.length, self.gratings, temperature, self.width,
                           self.height, self.dispersion_model)

    def with_length(self, length):
        return CrystalSpec(length, self.gratings, self.temperature, self.width,
                           self.height, self.dispersion_model)

    def period(self, grating_index):
        try:
            return self.gratings[grating_index]
        except (IndexError, TypeError):
            raise DomainError("grating index %r out of range (have %d gratings)"
                              % (grating_index, len(self.gratings))) from None


@dataclass(frozen=True)
class FocusSpec:
    """Pump focusing: xi = L / z_R and z_R = pi * w0^2 * n_p / lambda_p."""

    xi: float
    rayleigh_range: float
    waist: float
    pump_wavelength: float
    pump_index: float
    length: float = field(default=float("nan"))


@dataclass(frozen=True)
class PhaseMatchPoint:
    pump_wavelength: float
    signal_wavelength: float
    idler_wavelength: float
    grating_index: int
    mismatch: float

    def energy_residual(self):
        """Relative violation of 1/lp = 1/ls + 1/li."""
        inv_p = 1.0 / self.pump_wavelength
        return abs(inv_p - 1.0 / self.signal_wavelength - 1.0 / self.idler_wavelength) / inv_p


def _check_temperature(temperature):
    lo, hi = TEMPERATURE_RANGE
    if not lo <= temperature <= hi:
        raise DomainError("temperature %.3f C outside dispersion-model range [%g, %g] C"
                          % (temperature, lo, hi))


def refractive_index(wavelength, axis, temperature, model=KATO_2002):
    """Principal refractive index of KTP.

    Parameters
    ----------
    wavelength : float or array_like
        Vacuum wavelength in meters, inside ``WAVELENGTH_RANGE``.
    axis : {'y', 'z'}
    temperature : float
        Crystal temperature in degrees Celsius.
    """
    try:
        (A, B, C, D, E), (a, b, c, d) = _SELLMEIER[model][axis]
    except KeyError:
        raise DomainError("no coefficients for model %r axis %r" % (model, axis)) from None
    _check_temperature(temperature)
    lam = np.asarray(wavelength, dtype=float)
    lo, hi = WAVELENGTH_RANGE
    if np.any(lam < lo):
        raise DomainError("wavelength %.4g m below dispersion-model minimum %.3g m"
                          % (lam.min(), lo))
    if np.any(lam > hi):
        raise DomainError("wavelength %.4g m above dispersion-model maximum %.3g m"
                          % (lam.max(), hi))
    um = lam * 1e6
    um2 = um * um
    n0 = np.sqrt(A + B / (um2 - C) + D / (um2 - E))
    dndt = (a / um**3 + b / um2 + c / um + d) * 1e-5
    n = n0 + dndt * (temperature - _REFERENCE_TEMPERATURE)
    return float(n) if n.ndim == 0 else n


def _k(wavelength, axis, crystal):
    n = refractive_index(wavelength, axis, crystal.temperature, crystal.dispersion_model)
    return 2 * np.pi * n / wavelength


def qpm_mismatch(crystal, grating_index, pump_wavelength, signal_wavelength,
                 idler_wavelength, include_grating=True):
    """Phase mismatch dk = k_p - k_s - k_i - 2 pi / Lambda in rad/m.

    Wavelengths broadcast against each other; they must satisfy energy
    conservation to 1e-9 relative.
    """
    lp, ls, li = np.broadcast_arrays(np.asarray(pump_wavelength, dtype=float),
                                     np.asarray(signal_wavelength, dtype=float),
                                     np.asarray(idler_wavelength, dtype=float))
    resid = np.abs(1.0 / lp - 1.0 / ls - 1.0 / li) * lp
    if np.any(resid > 1e-9):
        raise ValueError("wavelengths violate energy conservation (relative residual %.3g)"
                         % resid.max())
    period = crystal.period(grating_index)
    pa, sa, ia = TYPE_II_AXES
    dk = _k(lp, pa, crystal) - _k(ls, sa, crystal) - _k(li, ia, crystal)
    if include_grating:
        dk = dk - 2 * np.pi / period
    return float(dk) if np.ndim(dk) == 0 else dk


def _degenerate_mismatch(crystal, grating_index, wavelength):
    return qpm_mismatch(crystal, grating_index, wavelength / 2, wavelength, wavelength)


def degenerate_qpm_wavelength(crystal, grating_index):
    """Degenerate signal/idler wavelength (= 2 x pump) where dk = 0.

    Bisection over 800-900 nm.
    """
    lo, hi = _BRACKET
    f = lambda lam: _degenerate_mismatch(crystal, grating_index, lam)
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise NoPhaseMatchError(
            "no degenerate phase match for period %.4g m at %.2f C in %g-%g nm"
            % (crystal.period(grating_index), crystal.temperature, lo * 1e9, hi * 1e9))
    return bisect(f, lo, hi, xtol=_XTOL, maxiter=200)


def degenerate_phase_match(crystal, grating_index):
    lam = degenerate_qpm_wavelength(crystal, grating_index)
    return PhaseMatchPoint(lam / 2, lam, lam, grating_index,
                           _degenerate_mismatch(crystal, grating_index, lam))


def temperature_tuning_coefficient(crystal, grating_index, temperature=None, delta=1.0):
    """d(lambda_deg)/dT in m/K by central difference."""
    t = crystal.temperature if temperature is None else temperature
    up = degenerate_qpm_wavelength(crystal.with_temperature(t + delta), grating_index)
    down = degenerate_qpm_wavelength(crystal.with_temperature(t - delta), grating_index)
    return (up - down) / (2 * delta)


def optimal_pump_waist(length, pump_wavelength, pump_index, xi=5.68):
    """Pump waist giving the focusing parameter ``xi = length / z_R``."""
    for name, value in (("length", length), ("pump_wavelength", pump_wavelength),
                        ("pump_index", pump_index), ("xi", xi)):
        if not value > 0:
            raise DomainError("%s must be positive, got %r" % (name, value))
    z_r = length / xi
    w0 = math.sqrt(z_r * pump_wavelength / (math.pi * pump_index))
    return FocusSpec(xi=xi, rayleigh_range=z_r, waist=w0, pump_wavelength=pump_wavelength,
                     pump_index=pump_index, length=length)

"""Coincidence histograms, ring-down fits and brightness bookkeeping.

Stream timestamps are integer picoseconds; public time arguments are seconds.
A histogram entry is the delay ``stop - start`` for every pair of events
within the window.
"""

from dataclasses import dataclass, field
import csv

import numpy as np
from scipy.optimize import least_squares
from scipy.special import log_ndtr, ndtr

from .errors import DomainError, FitError

PEAK_WINDOW_TAUS = 7.0


@dataclass(frozen=True)
class CoincidenceHistogram:
    bin_width: float
    window: tuple
    counts: np.ndarray = field(repr=False)
    acquisition_time: float
    rate_a: float = 0.0
    rate_b: float = 0.0

    def __post_init__(self):
        counts = np.array(self.counts, dtype=np.int64)
        if np.any(counts < 0):
            raise DomainError("histogram counts must be non-negative")
        if not self.acquisition_time > 0:
            raise DomainError("acquisition_time must be positive")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "window", tuple(float(w) for w in self.window))

    @property
    def edges(self):
        return self.window[0] + self.bin_width * np.arange(len(self.counts) + 1)

    @property
    def centers(self):
        return self.window[0] + self.bin_width * (np.arange(len(self.counts)) + 0.5)

    def __add__(self, other):
        """Merge histograms from disjoint acquisition segments."""
        if (other.bin_width, other.window) != (self.bin_width, self.window):
            raise DomainError("cannot merge histograms with different binning")
        total = self.acquisition_time + other.acquisition_time
        return CoincidenceHistogram(
            self.bin_width, self.window, self.counts + other.counts, total,
            (self.rate_a * self.acquisition_time + other.rate_a * other.acquisition_time) / total,
            (self.rate_b * self.acquisition_time + other.rate_b * other.acquisition_time) / total)


def _ps(seconds):
    return int(round(seconds * 1e12))


def _times(stream):
    return np.asarray(getattr(stream, "times", stream), dtype=np.int64)


def build_histogram(start, stop, acquisition_time, bin_width=1e-9, window=(-200e-9, 200e-9)):
    """Histogram of ``stop - start`` delays inside ``[t_min, t_max)``.

    For each start event the range of stop events inside the window is
    located on the sorted stop stream, so the cost is linear in the number
    of events plus the number of pairs in the window (up to the binary
    searches).
    """
    a, b = _times(start), _times(stop)
    if not bin_width > 0:
        raise DomainError("bin_width must be positive")
    if np.any(np.diff(a) < 0) or np.any(np.diff(b) < 0):
        raise ValueError("timestamp streams must be sorted ascending")
    lo_ps, hi_ps, bw_ps = _ps(window[0]), _ps(window[1]), _ps(bin_width)
    n_bins, rem = divmod(hi_ps - lo_ps, bw_ps)
    if n_bins <= 0 or rem:
        raise DomainError("window width must be a positive integer multiple of bin_width")

    first = np.searchsorted(b, a + lo_ps, side="left")
    last = np.searchsorted(b, a + hi_ps, side="left")
    per = last - first
    total = int(per.sum())
    counts = np.zeros(n_bins, dtype=np.int64)
    if total:
        owner = np.repeat(np.arange(len(a)), per)
        offset = np.arange(total) - np.repeat(np.cumsum(per) - per, per)
        delay = b[first[owner] + offset] - a[owner]
        counts += np.bincount((delay - lo_ps) // bw_ps, minlength=n_bins)
    return CoincidenceHistogram(bin_width, window, counts, acquisition_time,
                                len(a) / acquisition_time, len(b) / acquisition_time)


def brute_force_histogram(start, stop, bin_width, window):
    """All-pairs reference for small streams."""
    a, b = _times(start), _times(stop)
    lo_ps, hi_ps, bw_ps = _ps(window[0]), _ps(window[1]), _ps(bin_width)
    n_bins = (hi_ps - lo_ps) // bw_ps
    d = np.subtract.outer(b, a).ravel()
    d = d[(d >= lo_ps) & (d < hi_ps)]
    return np.bincount((d - lo_ps) // bw_ps, minlength=n_bins).astype(np.int64)


@dataclass(frozen=True)
class DecayFit:
    amplitude: float
    decay_time: float
    background: float
    onset: float
    amplitude_err: float = 0.0
    decay_time_err: float = 0.0
    background_err: float = 0.0
    onset_err: float = 0.0
    chi2_reduced: float = float("nan")
    iterations: int = 0
    resolution: float = 0.0

    @property
    def bandwidth(self):
        return 1.0 / (2 * np.pi * self.decay_time)

    @property
    def bandwidth_err(self):
        return self.decay_time_err / (2 * np.pi * self.decay_time**2)

    def as_pairs(self):
        return [("amplitude_counts_per_bin", self.amplitude),
                ("amplitude_err", self.amplitude_err),
                ("decay_time_s", self.decay_time), ("decay_time_err", self.decay_time_err),
                ("background_counts_per_bin", self.background),
                ("background_err", self.background_err),
                ("onset_s", self.onset), ("onset_err", self.onset_err),
                ("bandwidth_hz", self.bandwidth), ("bandwidth_err", self.bandwidth_err),
                ("chi2_reduced", self.chi2_reduced), ("iterations", self.iterations)]


def _g_step(u, tau):
    # integral of exp(-u'/tau) [u' >= 0] from -inf to u, and its u/tau derivatives
    up = np.maximum(u, 0.0)
    e = np.exp(-up / tau)
    g = tau * (1.0 - e)
    dg_du = np.where(u > 0, e, 0.0)
    dg_dtau = (1.0 - e) - up * e / tau
    return g, dg_du, dg_dtau


def _g_gauss(u, tau, sigma):
    # same integral after convolution with a unit Gaussian of width sigma
    z = u / sigma
    ephi = np.exp(-u / tau + sigma**2 / (2 * tau**2) + log_ndtr(z - sigma / tau))
    cdf = ndtr(z)
    pdf = np.exp(-0.5 * z * z) / np.sqrt(2 * np.pi)
    g = tau * (cdf - ephi)
    dg_du = ephi
    dg_dtau = cdf - ephi * (1 + u / tau - sigma**2 / tau**2) - sigma * pdf / tau
    return g, dg_du, dg_dtau


def decay_model(params, left, right, resolution=0.0):
    """Bin-averaged ``b + A exp(-(t - t0)/tau) [t >= t0]`` over ``[left, right)``.

    With ``resolution > 0`` the exponential is first convolved with a
    Gaussian timing response of that rms width.  Returns the model and its
    Jacobian with respect to ``(A, tau, b, t0)``.
    """
    amp, tau, bg, t0 = params
    width = right - left
    if resolution > 0:
        gl, dl, tl = _g_gauss(left - t0, tau, resolution)
        gr, dr, tr = _g_gauss(right - t0, tau, resolution)
    else:
        gl, dl, tl = _g_step(left - t0, tau)
        gr, dr, tr = _g_step(right - t0, tau)
    shape = (gr - gl) / width
    model = bg + amp * shape
    jac = np.column_stack([shape, amp * (tr - tl) / width, np.ones_like(left),
                           -amp * (dr - dl) / width])
    return model, jac


def fit_decay(hist, resolution=0.0, max_iter=200, xtol=1e-8):
    """Poisson-weighted least-squares fit of the ring-down peak.

    Damped Gauss-Newton (MINPACK Levenberg-Marquardt) with an analytic
    Jacobian.  ``resolution`` is the rms timing jitter of the start-stop
    pair; zero fits the bare one-sided exponential.  Raises
    :class:`FitError` when no peak stands out of the background or the
    optimizer does not converge.
    """
    y = hist.counts.astype(float)
    n = len(y)
    edges = hist.edges
    left, right = edges[:-1], edges[1:]
    lead = y[: max(5, n // 5)]
    bg0 = float(np.median(lead))
    ipk = int(np.argmax(y))
    if not y[ipk] > bg0 + 5 * np.sqrt(bg0):
        raise FitError("no detectable peak: max %.1f vs background %.1f" % (y[ipk], bg0),
                       {"max": float(y[ipk]), "background": bg0})
    amp0 = y[ipk] - bg0
    above = np.flatnonzero(y[ipk:] - bg0 > amp0 / np.e)
    tau0 = max(hist.bin_width, (above[-1] + 1 if len(above) else 1) * hist.bin_width)
    x0 = np.array([amp0, tau0, bg0, left[ipk]])
    scale = np.array([max(amp0, 1.0), tau0, max(bg0, 1.0), hist.bin_width])
    # first pass weights from the data, then two passes weighted by the model
    sigma = np.sqrt(np.maximum(y, 1.0))

    def resid(p):
        return (decay_model(p * scale, left, right, resolution)[0] - y) / sigma

    def jac(p):
        return decay_model(p * scale, left, right, resolution)[1] * scale / sigma[:, None]

    x = x0 / scale
    nfev = 0
    for npass in range(3):
        if npass:
            model = decay_model(x * scale, left, right, resolution)[0]
            sigma = np.sqrt(np.maximum(model, 0.5))
        res = least_squares(resid, x, jac=jac, method="lm", xtol=xtol, ftol=1e-12,
                            max_nfev=max_iter)
        nfev += res.nfev
        diag = {"status": int(res.status), "message": res.message, "nfev": int(nfev),
                "cost": float(res.cost), "pass": npass}
        if res.status <= 0 or not np.all(np.isfinite(res.x)) or res.x[1] <= 0:
            raise FitError("decay fit did not converge: %s" % res.message, diag)
        x = res.x
    p = res.x * scale
    j = jac(res.x)
    try:
        cov = np.linalg.inv(j.T @ j) * np.outer(scale, scale)
    except np.linalg.LinAlgError:
        raise FitError("singular fit covariance", diag) from None
    err = np.sqrt(np.abs(np.diag(cov)))
    dof = max(n - 4, 1)
    return DecayFit(amplitude=float(p[0]), decay_time=float(p[1]),
                    background=float(max(p[2], 0.0)), onset=float(p[3]),
                    amplitude_err=float(err[0]), decay_time_err=float(err[1]),
                    background_err=float(err[2]), onset_err=float(err[3]),
                    chi2_reduced=float(2 * res.cost / dof), iterations=int(nfev),
                    resolution=float(resolution))


def coincidence_rate(hist, fit, n_tau=PEAK_WINDOW_TAUS):
    """Background-subtracted peak counts over ``[t0, t0 + n_tau tau]`` per second.

    When the fit carries a timing resolution the window opens four
    resolution widths before ``t0`` to collect the smeared leading edge.
    """
    if fit.amplitude == 0:
        return 0.0
    c = hist.centers
    sel = ((c >= fit.onset - 4 * fit.resolution)
           & (c <= fit.onset + n_tau * fit.decay_time))
    return float(np.sum(hist.counts[sel] - fit.background) / hist.acquisition_time)


@dataclass(frozen=True)
class BrightnessReport:
    detected_pairs_per_s_per_mw: float
    pump_power: float
    extrapolated_rate: float
    spectral_brightness_generated: float
    efficiency_budget: tuple = ()

    def as_pairs(self):
        out = [("detected_pairs_per_s_per_mw", self.detected_pairs_per_s_per_mw),
               ("pump_power_mw", self.pump_power),
               ("extrapolated_rate_pairs_per_s", self.extrapolated_rate),
               ("spectral_brightness_pairs_per_s_mhz_mw", self.spectral_brightness_generated)]
        out += [("budget." + label, value) for label, value in self.efficiency_budget]
        return out


def brightness_report(rate_per_mw, pump_power, detector_efficiency, bandwidth):
    """Extrapolated rate and generated spectral brightness per (s MHz mW).

    Only the two detector efficiencies are divided out, then the rate is
    spread over the pair bandwidth.
    """
    if not detector_efficiency > 0:
        raise DomainError("detector_efficiency must be positive")
    if not bandwidth > 0:
        raise DomainError("bandwidth must be positive")
    budget = (("detector_a", detector_efficiency), ("detector_b", detector_efficiency))
    return BrightnessReport(
        detected_pairs_per_s_per_mw=rate_per_mw,
        pump_power=pump_power,
        extrapolated_rate=rate_per_mw * pump_power,
        spectral_brightness_generated=rate_per_mw / (detector_efficiency**2 * bandwidth / 1e6),
        efficiency_budget=budget)


def efficiency_budget(*factors):
    """Product of efficiency factors; each is a number or ``(label, number)``."""
    product = 1.0
    for f in factors:
        value = f[1] if isinstance(f, tuple) else f
        if not 0 <= value <= 1:
            raise DomainError("efficiency factor %r outside [0, 1]" % (f,))
        product *= value
    return product


def write_histogram_csv(hist, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("delay_s", "counts"))
        for c, n in zip(hist.centers, hist.counts.tolist()):
            w.writerow(("%.6e" % c, n))


def write_report(pairs, path):
    """``key = value`` lines, one per entry."""
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in pairs:
            if isinstance(value, float):
                value = repr(value)
            fh.write("%s = %s\n" % (key, value))

"""Experiment stages driven by a :class:`~narrowpair.config.RunConfig`.

Each stage writes its outputs into the run directory and returns the list
of data files it produced.  Figures are tracked separately because PNG
rendering is not part of the byte-reproducibility contract.
"""

from dataclasses import dataclass, field
import hashlib
import json
import os
import platform

import numpy as np
import scipy

from . import __version__
from .correlator import (brightness_report, build_histogram, coincidence_rate,
                         efficiency_budget, fit_decay, write_histogram_csv, write_report)
from .crystal import (CrystalSpec, C_LIGHT, degenerate_phase_match, optimal_pump_waist,
                      refractive_index, temperature_tuning_coefficient)
from .pairsim import (DetectorSpec, SourceConfig, calibrated_pair_rate, read_streams_binary,
                      read_streams_csv, run_experiment, write_streams_binary,
                      write_streams_csv)
from .spectral import (CavitySpec, FilterChain, cascade_transmission, cavity_fsr,
                       cavity_linewidth, count_transmission_windows, effective_filter_fwhm,
                       tabulate_spectrum, tune_narrow_finesse, write_curve_csv)
from .tomography import (bootstrap_errors, calibrated_state, canonical_16_settings,
                         linear_reconstruction, mle_reconstruction, pure, PSI_MINUS,
                         read_counts_csv, simulate_counts, werner_state, write_counts_csv,
                         write_matrix_csv, singlet_state)

PUMP_WAVELENGTHS = {850: 425e-9, 854: 427e-9}


@dataclass
class RunState:
    config: object
    out: str
    workers: int = 1
    data_files: list = field(default_factory=list)
    figures: list = field(default_factory=list)
    cache: dict = field(default_factory=dict)

    def path(self, name):
        return os.path.join(self.out, name)

    def data(self, name):
        self.data_files.append(name)
        return self.path(name)

    def figure(self, name):
        self.figures.append(name)
        return self.path(name)


def build_crystal(cfg):
    c = cfg["crystal"]
    return CrystalSpec(length=c["length"], gratings=tuple(c["gratings"]),
                       temperature=c["temperature"], width=c["width"], height=c["height"])


def build_chain(cfg, lock_frequency):
    f = cfg["filter"]
    cavities = [CavitySpec(L, F, T, off) for L, F, T, off in
                zip(f["lengths"], f["finesse"], f["peak_transmission"], f["center_offsets"])]
    chain = FilterChain(tuple(cavities), lock_frequency)
    if f["target_bandwidth"] > 0:
        chain = tune_narrow_finesse(chain, f["target_bandwidth"])
    return chain


def build_detector(cfg):
    d = cfg["detector"]
    return DetectorSpec(d["efficiency"], d["dark_rate"], d["jitter_rms"], d["arm_coupling"])


def _setup(state):
    if "crystal" not in state.cache:
        cfg = state.config
        crystal = build_crystal(cfg)
        pm = degenerate_phase_match(crystal, cfg.grating_index)
        chain = build_chain(cfg, C_LIGHT / pm.signal_wavelength)
        state.cache.update(crystal=crystal, phase_match=pm, chain=chain)
    return state.cache["crystal"], state.cache["phase_match"], state.cache["chain"]


def stage_phasematch(state):
    cfg = state.config
    crystal, pm, _ = _setup(state)
    pairs = [("dispersion_model", crystal.dispersion_model),
             ("temperature_c", crystal.temperature)]
    for i, period in enumerate(crystal.gratings):
        point = degenerate_phase_match(crystal, i)
        pairs += [("grating%d.period_m" % i, period),
                  ("grating%d.degenerate_wavelength_m" % i, point.signal_wavelength),
                  ("grating%d.mismatch_rad_per_m" % i, point.mismatch),
                  ("grating%d.tuning_m_per_k" % i,
                   temperature_tuning_coefficient(crystal, i))]
    pump = cfg["focus"]["pump_wavelength"] or PUMP_WAVELENGTHS[cfg["crystal"]["grating"]]
    n_p = refractive_index(pump, "y", crystal.temperature)
    focus = optimal_pump_waist(crystal.length, pump, n_p, cfg["focus"]["xi"])
    pairs += [("focus.xi", focus.xi), ("focus.pump_wavelength_m", pump),
              ("focus.pump_index", n_p), ("focus.rayleigh_range_m", focus.rayleigh_range),
              ("focus.waist_m", focus.waist)]
    write_report(pairs, state.data("phasematch.txt"))
    return dict(pairs)


def stage_spectrum(state):
    cfg = state.config
    crystal, pm, chain = _setup(state)
    s = cfg["spectrum"]
    spectrum = tabulate_spectrum(crystal, cfg.grating_index, half_span=s["half_span"],
                                 points=s["points"])
    write_curve_csv(state.data("spectrum.csv"), spectrum.detuning, spectrum.intensity,
                    ("detuning_hz", "relative_intensity"))
    width = effective_filter_fwhm(chain)
    near = np.linspace(-10 * width, 10 * width, 4001)
    write_curve_csv(state.data("transmission_window.csv"), near,
                    cascade_transmission(chain, near), ("detuning_hz", "transmission"))
    f = cfg["filter"]
    wide = np.linspace(-f["window_half_span"], f["window_half_span"], 20001)
    write_curve_csv(state.data("transmission_wide.csv"), wide,
                    cascade_transmission(chain, wide), ("detuning_hz", "transmission"))
    windows = count_transmission_windows(chain, spectrum, f["window_threshold"],
                                         half_span=f["window_half_span"])
    pairs = [("spdc_fwhm_hz", spectrum.fwhm), ("lock_frequency_hz", chain.lock_frequency)]
    for i, cav in enumerate(chain.cavities):
        pairs += [("cavity%d.length_m" % i, cav.length), ("cavity%d.finesse" % i, cav.finesse),
                  ("cavity%d.fsr_hz" % i, cavity_fsr(cav.length)),
                  ("cavity%d.linewidth_hz" % i, cavity_linewidth(cav)),
                  ("cavity%d.peak_transmission" % i, cav.peak_transmission)]
    pairs += [("cascade.peak_transmission", chain.peak_product),
              ("cascade.effective_fwhm_hz", width),
              ("cascade.windows_above_threshold", windows)]
    write_report(pairs, state.data("filter.txt"))
    if cfg["run"]["plots"]:
        from .plotting import plot_spectrum
        grid = np.linspace(-s["half_span"], s["half_span"], 20001)
        plot_spectrum(grid, spectrum(grid), cascade_transmission(chain, grid, relative=True),
                      state.figure("spectrum.png"))
    return dict(pairs)


def _source(state):
    cfg = state.config
    crystal, pm, chain = _setup(state)
    s, sp = cfg["source"], cfg["spectrum"]
    spectrum = tabulate_spectrum(crystal, cfg.grating_index, half_span=sp["sim_half_span"],
                                 points=sp["sim_points"])
    pol = (calibrated_state() if s["state"] == "calibrated"
           else singlet_state(s["depolarization"]))
    source = SourceConfig(spectrum, s["pump_power"], 1.0, pol, s["splitter"],
                          s["pump_jitter_rms"])
    det = build_detector(cfg)
    rate = s["pair_rate_per_mw"] or calibrated_pair_rate(source, chain, det,
                                                          s["detected_rate_per_mw"])
    return SourceConfig(spectrum, s["pump_power"], rate, pol, s["splitter"],
                        s["pump_jitter_rms"]), chain, det


def stage_simulate(state):
    cfg = state.config
    source, chain, det = _source(state)
    s = cfg["source"]
    stream_a, stream_b = run_experiment(source, chain, det, s["duration"],
                                        s["electronic_delay"], cfg.seed,
                                        s["chunk_duration"], state.workers)
    write_streams_binary(state.data("streams.bin"), stream_a, stream_b)
    if s["write_csv"]:
        write_streams_csv(state.data("streams.csv"), stream_a, stream_b)
    pairs = [("pair_rate_per_mw", source.generated_pair_rate_per_mw),
             ("pump_power_mw", source.pump_power), ("duration_s", s["duration"]),
             ("ringdown_bandwidth_hz", effective_filter_fwhm(chain)),
             ("events_a", len(stream_a)), ("events_b", len(stream_b))]
    write_report(pairs, state.data("simulation.txt"))
    state.cache["streams"] = (stream_a, stream_b)
    return dict(pairs)


def stage_correlate(state):
    cfg = state.config
    c, s = cfg["correlator"], cfg["source"]
    if c["input"]:
        reader = read_streams_csv if c["input"].endswith(".csv") else read_streams_binary
        stream_a, stream_b = reader(c["input"])
    elif "streams" in state.cache:
        stream_a, stream_b = state.cache["streams"]
    else:
        stage_simulate(state)
        stream_a, stream_b = state.cache["streams"]
    duration = s["duration"]
    # unfiltered arm starts, filtered arm stops: the ring-down extends to positive delay
    hist = build_histogram(stream_b, stream_a, duration, c["bin_width"], tuple(c["window"]))
    write_histogram_csv(hist, state.data("histogram.csv"))
    from .plotting import emit_plot_data
    emit_plot_data(hist, state.data("histogram_plot.csv"))
    det = build_detector(cfg)
    resolution = (np.sqrt(2) * det.jitter_rms if c["timing_resolution"] < 0
                  else c["timing_resolution"])
    fit = fit_decay(hist, resolution=resolution)
    write_report(fit.as_pairs(), state.data("decay_fit.txt"))
    rate = coincidence_rate(hist, fit)
    pairs = [("coincidence_rate_per_s", rate)]
    if s["pump_power"] > 0:
        report = brightness_report(rate / s["pump_power"], s["pump_power"], det.efficiency,
                                   fit.bandwidth)
        pairs += report.as_pairs()
    _, _, chain = _setup(state)
    budget = [("cavity%d" % i, cav.peak_transmission) for i, cav in enumerate(chain.cavities)]
    budget += [("fiber", det.arm_coupling), ("detector", det.efficiency)]
    pairs += [("filtered_arm_budget." + k, v) for k, v in budget]
    pairs += [("filtered_arm_detection_probability", efficiency_budget(*budget))]
    write_report(pairs, state.data("brightness.txt"))
    if cfg["run"]["plots"]:
        from .plotting import plot_correlation
        plot_correlation(hist, fit, state.figure("correlation.png"))
    return hist, fit


def stage_tomography(state):
    cfg = state.config
    t = cfg["tomography"]
    if t["input"]:
        record = read_counts_csv(t["input"])
    else:
        truth = {"calibrated": calibrated_state, "singlet": lambda: pure(PSI_MINUS),
                 "werner": lambda: werner_state(t["werner_p"])}[t["state"]]()
        record = simulate_counts(truth, canonical_16_settings(), t["counts_per_setting"],
                                 t["accidentals_per_setting"], seed=cfg.seed)
    write_counts_csv(record, state.data("tomography_counts.csv"))
    linear = linear_reconstruction(record)
    rho = mle_reconstruction(record, restarts=t["restarts"], seed=cfg.seed)
    report = bootstrap_errors(record, t["bootstrap"], seed=cfg.seed, workers=state.workers)
    write_matrix_csv(rho, state.data("rho_real.csv"), state.data("rho_imag.csv"))
    from .plotting import emit_plot_data
    emit_plot_data(rho, state.data("rho_plot.csv"))
    pairs = report.as_pairs() + [("linear_estimate_physical", linear.physical),
                                 ("min_eigenvalue_linear", float(linear.eigenvalues.min()))]
    write_report(pairs, state.data("tomography.txt"))
    if cfg["run"]["plots"]:
        from .plotting import plot_density_matrix
        plot_density_matrix(rho, state.figure("density_matrix.png"))
    return rho, report


STAGES = {
    "phasematch": (stage_phasematch,),
    "spectrum": (stage_spectrum,),
    "simulate": (stage_simulate,),
    "correlate": (stage_correlate,),
    "tomography": (stage_tomography,),
    "full-pipeline": (stage_phasematch, stage_spectrum, stage_simulate, stage_correlate,
                      stage_tomography),
}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def execute(config, workers=1):
    """Run the configured stages and write ``manifest.json``; returns the RunState."""
    os.makedirs(config.out, exist_ok=True)
    state = RunState(config, config.out, workers)
    for stage in STAGES[config.kind]:
        stage(state)
    manifest = {
        "kind": config.kind,
        "seed": config.seed,
        "config_sha256": config.digest(),
        "versions": {"narrowpair": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__, "python": platform.python_version()},
        "data_files": {name: _sha256(state.path(name)) for name in state.data_files},
        "figures": list(state.figures),
    }
    with open(state.path("manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return state

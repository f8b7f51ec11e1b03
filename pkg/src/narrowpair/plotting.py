"""Figure rendering and plot-ready data export.

Figures go to PNG through the Agg backend; the CSV written by
:func:`emit_plot_data` carries everything needed to redraw them elsewhere.
"""

import csv

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .correlator import CoincidenceHistogram, decay_model  # noqa: E402
from .tomography import DensityMatrix  # noqa: E402

GOLDEN = (np.sqrt(5) - 1.0) / 2.0
FIG_WIDTH = 5.0

STYLE = {
    "axes.labelsize": 10,
    "font.size": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 3,
    "figure.dpi": 100,
    "savefig.dpi": 150,
}


def figsize(scale=1.0, ratio=GOLDEN):
    return (FIG_WIDTH * scale, FIG_WIDTH * scale * ratio)


def _save(fig, path):
    # no Software/date metadata so repeated runs give the same bytes
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_correlation(hist, fit, path):
    """Coincidences vs delay with the fitted ring-down."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        t_ns = hist.centers * 1e9
        ax.plot(t_ns, hist.counts, "o", color="0.35", label="coincidences")
        if fit is not None:
            edges = hist.edges
            fine = np.linspace(edges[0], edges[-1], 4 * len(hist.counts) + 1)
            model, _ = decay_model((fit.amplitude, fit.decay_time, fit.background, fit.onset),
                                   fine[:-1], fine[1:], fit.resolution)
            ax.plot(0.5 * (fine[:-1] + fine[1:]) * 1e9, model, "-", color="C3",
                    label=r"fit, $\Delta\nu$ = %.1f MHz" % (fit.bandwidth / 1e6))
        ax.set_xlabel("delay (ns)")
        ax.set_ylabel("coincidences / %.3g ns" % (hist.bin_width * 1e9))
        ax.legend(frameon=False)
        fig.tight_layout()
        return _save(fig, path)


def plot_density_matrix(rho, path):
    """Real and imaginary bar charts of the two-photon density matrix."""
    m = np.asarray(rho)
    labels = ["HH", "HV", "VH", "VV"]
    with plt.rc_context(STYLE):
        fig = plt.figure(figsize=figsize(1.6, 0.45))
        xs, ys = np.meshgrid(np.arange(4), np.arange(4), indexing="ij")
        for k, (part, title) in enumerate(((np.real(m), "Re"), (np.imag(m), "Im"))):
            ax = fig.add_subplot(1, 2, k + 1, projection="3d")
            z = part.ravel()
            colors = np.where(z >= 0, "C0", "C3")
            ax.bar3d(xs.ravel() - 0.3, ys.ravel() - 0.3, np.minimum(z, 0), 0.6, 0.6,
                     np.abs(z), color=colors, shade=True)
            ax.set_xticks(range(4))
            ax.set_xticklabels(labels)
            ax.set_yticks(range(4))
            ax.set_yticklabels(labels)
            ax.set_zlim(-0.5, 0.5)
            ax.set_title(r"%s($\rho$)" % title)
        fig.subplots_adjust(left=0.02, right=0.98, bottom=0.05, top=0.92, wspace=0.1)
        return _save(fig, path)


def plot_spectrum(detuning, intensity, transmission, path):
    """SPDC envelope with the filter-line transmission overlaid."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=figsize())
        ax.plot(np.asarray(detuning) / 1e9, intensity, color="C0", label="SPDC envelope")
        ax.plot(np.asarray(detuning) / 1e9, transmission, color="C1", lw=0.8,
                label="filter line (relative)")
        ax.set_xlabel("signal detuning (GHz)")
        ax.set_ylabel("relative intensity")
        ax.legend(frameon=False, loc="upper right")
        fig.tight_layout()
        return _save(fig, path)


def emit_plot_data(dataset, path):
    """Write plot-ready CSV with a ``#`` header naming axes and units.

    Histograms become ``delay_ns, counts``; density matrices become long-form
    ``row, col, re, im``; a ``(x, y, x_label, y_label)`` tuple becomes two
    columns.  ``None`` or an empty dataset produces a header-only file.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if isinstance(dataset, CoincidenceHistogram):
            fh.write("# x: delay (ns); y: coincidences per %.6g ns bin; T = %r s\n"
                     % (dataset.bin_width * 1e9, dataset.acquisition_time))
            w.writerow(("delay_ns", "counts"))
            for c, n in zip(dataset.centers, dataset.counts.tolist()):
                w.writerow(("%.6f" % (c * 1e9), n))
        elif isinstance(dataset, tuple) and len(dataset) == 4:
            x, y, xl, yl = dataset
            fh.write("# x: %s; y: %s\n" % (xl, yl))
            w.writerow((xl.split(" ")[0], yl.split(" ")[0]))
            for a, b in zip(np.asarray(x, dtype=float), np.asarray(y, dtype=float)):
                w.writerow((repr(float(a)), repr(float(b))))
        elif isinstance(dataset, DensityMatrix) or np.shape(dataset) == (4, 4):
            m = np.asarray(dataset)
            fh.write("# two-photon density matrix, H/V basis order HH,HV,VH,VV; "
                     "re/im dimensionless\n")
            w.writerow(("row", "col", "re", "im"))
            labels = ["HH", "HV", "VH", "VV"]
            for i in range(4):
                for j in range(4):
                    # + 0.0 folds negative zeros
                    w.writerow((labels[i], labels[j], "%.12g" % (m[i, j].real + 0.0),
                                "%.12g" % (m[i, j].imag + 0.0)))
        elif dataset is None or len(dataset) == 0:
            fh.write("# empty dataset\n")
        else:
            raise TypeError("unsupported dataset type %r" % type(dataset).__name__)
    return path

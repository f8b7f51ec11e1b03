"""Run configuration: TOML sections of ``key = value`` pairs.

Grammar is TOML 1.0 restricted to one level of tables.  Every table and
key must appear in :data:`SCHEMA`; missing keys take the defaults, which
reproduce the reference design of the source.  An empty file is a valid
configuration.
"""

from dataclasses import dataclass
import hashlib
import math
import re

import tomli
import tomli_w

from .errors import ConfigError

KINDS = ("phasematch", "spectrum", "simulate", "correlate", "tomography", "full-pipeline")
GRATINGS = {850: 0, 854: 1}


def _positive(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _unit(v):
    return 0 <= v <= 1


def _open_unit(v):
    return 0 < v <= 1


def _fraction(v):
    return 0 < v < 1


def _u64(v):
    return 0 <= v < 2**64


# key -> (default, type, check, constraint text)
SCHEMA = {
    "run": {
        "kind": ("full-pipeline", str, lambda v: v in KINDS, "one of %s" % ", ".join(KINDS)),
        "seed": (2009, int, _u64, "unsigned 64-bit integer"),
        "out": ("results", str, lambda v: len(v) > 0, "non-empty path"),
        "plots": (True, bool, None, ""),
    },
    "crystal": {
        "length": (20e-3, float, _positive, "> 0"),
        "width": (6e-3, float, _positive, "> 0"),
        "height": (1e-3, float, _positive, "> 0"),
        "gratings": ([14.03e-6, 14.63e-6], [float], lambda v: len(v) == 2 and min(v) > 0,
                     "two positive poling periods"),
        "temperature": (25.0, float, lambda v: 0 <= v <= 150, "within 0-150 C"),
        "grating": (850, int, lambda v: v in GRATINGS, "850 or 854"),
        "dispersion_model": ("kato2002", str, lambda v: v == "kato2002", "'kato2002'"),
    },
    "focus": {
        "xi": (5.68, float, _positive, "> 0"),
        "pump_wavelength": (0.0, float, _nonneg,
                            ">= 0 (0 selects 425 or 427 nm from the grating)"),
    },
    "spectrum": {
        "half_span": (1e12, float, _positive, "> 0"),
        "points": (4001, int, lambda v: v >= 11, ">= 11"),
        "sim_half_span": (250e6, float, _positive, "> 0"),
        "sim_points": (2001, int, lambda v: v >= 11, ">= 11"),
    },
    "filter": {
        "lengths": ([77.5e-6, 10e-3], [float], lambda v: len(v) > 0 and min(v) > 0,
                    "non-empty list of positive lengths"),
        "finesse": ([620.0, 620.0], [float], lambda v: len(v) > 0 and min(v) > 1,
                    "every value > 1"),
        "peak_transmission": ([0.88, 0.88], [float],
                              lambda v: len(v) > 0 and all(0 < x <= 1 for x in v),
                              "every value in (0, 1]"),
        "center_offsets": ([0.0, 0.0], [float], lambda v: len(v) > 0, "non-empty list"),
        "target_bandwidth": (0.0, float, _nonneg,
                             ">= 0 (0 keeps the finesse; > 0 retunes the narrow cavity)"),
        "window_threshold": (0.5, float, _fraction, "in (0, 1)"),
        "window_half_span": (143e9, float, _positive, "> 0"),
    },
    "source": {
        "pump_power": (70.0, float, _nonneg, ">= 0 mW"),
        "pair_rate_per_mw": (0.0, float, _nonneg,
                             ">= 0 (0 calibrates to detected_rate_per_mw)"),
        "detected_rate_per_mw": (4.8, float, _positive, "> 0"),
        "splitter": ("PBS", str, lambda v: v in ("PBS", "BS50"), "'PBS' or 'BS50'"),
        "state": ("singlet", str, lambda v: v in ("singlet", "calibrated"),
                  "'singlet' or 'calibrated'"),
        "depolarization": (0.0, float, _unit, "in [0, 1]"),
        "pump_jitter_rms": (250e3, float, _nonneg, ">= 0"),
        "duration": (10.0, float, _nonneg, ">= 0 s"),
        "electronic_delay": (50e-9, float, None, ""),
        "chunk_duration": (1.0, float, _positive, "> 0 s"),
        "write_csv": (False, bool, None, ""),
    },
    "detector": {
        "efficiency": (0.45, float, _unit, "in [0, 1]"),
        "dark_rate": (50.0, float, _nonneg, ">= 0"),
        "jitter_rms": (1e-9, float, _nonneg, ">= 0"),
        "arm_coupling": (0.42, float, _unit, "in [0, 1]"),
    },
    "correlator": {
        "bin_width": (1e-9, float, _positive, "> 0"),
        "window": ([-200e-9, 200e-9], [float], lambda v: len(v) == 2 and v[0] < v[1],
                   "[t_min, t_max] with t_min < t_max"),
        "timing_resolution": (-1.0, float, lambda v: v == -1.0 or v >= 0,
                              ">= 0, or -1 to derive from detector jitter"),
        "input": ("", str, None, ""),
    },
    "tomography": {
        "state": ("calibrated", str, lambda v: v in ("calibrated", "singlet", "werner"),
                  "'calibrated', 'singlet' or 'werner'"),
        "werner_p": (0.9, float, _unit, "in [0, 1]"),
        "counts_per_setting": (10000, int, _positive, "> 0"),
        "accidentals_per_setting": (10.0, float, _nonneg, ">= 0"),
        "bootstrap": (50, int, _positive, ">= 1"),
        "restarts": (5, int, _nonneg, ">= 0"),
        "input": ("", str, None, ""),
    },
}


@dataclass(frozen=True)
class RunConfig:
    sections: dict

    def __getitem__(self, section):
        return self.sections[section]

    @property
    def kind(self):
        return self.sections["run"]["kind"]

    @property
    def seed(self):
        return self.sections["run"]["seed"]

    @property
    def out(self):
        return self.sections["run"]["out"]

    @property
    def grating_index(self):
        return GRATINGS[self.sections["crystal"]["grating"]]

    def to_dict(self):
        return {s: dict(v) for s, v in self.sections.items()}

    def replace(self, section, **values):
        data = self.to_dict()
        data[section].update(values)
        return validate(data)

    def digest(self):
        return hashlib.sha256(dump_config(self).encode("utf-8")).hexdigest()


def _coerce(section, key, value, typ):
    name = "%s.%s" % (section, key)
    if isinstance(typ, list):
        if not isinstance(value, list):
            raise ConfigError("%s: expected a list, got %r" % (name, value), key=name)
        return [_coerce(section, key, v, typ[0]) for v in value]
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError("%s: expected true/false, got %r" % (name, value), key=name)
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("%s: expected an integer, got %r" % (name, value), key=name)
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("%s: expected a number, got %r" % (name, value), key=name)
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError("%s: must be finite, got %r" % (name, value), key=name)
        return value
    if not isinstance(value, typ):
        raise ConfigError("%s: expected %s, got %r" % (name, typ.__name__, value), key=name)
    return value


def validate(data):
    """Apply defaults and check every key; returns a :class:`RunConfig`."""
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be a table")
    for section in data:
        if section not in SCHEMA:
            raise ConfigError("unknown section [%s]" % section, key=section)
        if not isinstance(data[section], dict):
            raise ConfigError("%s must be a table" % section, key=section)
    sections = {}
    for section, fields in SCHEMA.items():
        given = data.get(section, {})
        for key in given:
            if key not in fields:
                raise ConfigError("unknown key %s.%s" % (section, key),
                                  key="%s.%s" % (section, key))
        out = {}
        for key, (default, typ, check, text) in fields.items():
            value = _coerce(section, key, given.get(key, default), typ)
            if check is not None and not check(value):
                raise ConfigError("%s.%s = %r violates constraint: %s"
                                  % (section, key, value, text), key="%s.%s" % (section, key))
            out[key] = value
        sections[section] = out
    f = sections["filter"]
    n = len(f["lengths"])
    for key in ("finesse", "peak_transmission", "center_offsets"):
        if len(f[key]) != n:
            raise ConfigError("filter.%s must have %d entries to match filter.lengths"
                              % (key, n), key="filter." + key)
    return RunConfig(sections)


_POSITION = re.compile(r"at line (\d+), column (\d+)")


def parse_config(text):
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = _POSITION.search(str(exc))
        line, col = (int(m.group(1)), int(m.group(2))) if m else (None, None)
        raise ConfigError("parse error: %s" % exc, line=line, column=col) from None
    return validate(data)


def load_config(path=None):
    """Read and validate a configuration file; ``None`` gives all defaults."""
    if path is None:
        return validate({})
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(config):
    return tomli_w.dumps(config.to_dict())

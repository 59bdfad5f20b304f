"""INI scenario files.

Sections and keys are listed in ``SCHEMA``; everything except the keys in
``REQUIRED`` has a default. Vectors are whitespace-separated numbers and
lists of vectors are separated by ``;``. Repeated sections use a dotted
suffix: ``[tag.<id>]``, ``[reflector.<name>]``, ``[obstacle.<name>]``.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .channel import (ClockModel, DiskObstacle, Geometry, PlaneReflector, PointScatterer,
                      ScreenObstacle, uhf_link, uwb_link, uwb_pulse_energy)
from .energy import (AddressCodec, RectennaModel, TagEnergyState, asic_state,
                     load_efficiency_csv)
from .locate import PfParams
from .signal import Modulation, PulseTrainSpec, make_pulse_shape
from .simkit import NoiseMode, ScenarioConfig, TagSpec
from .tdoa import RecordingWindow


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line is not None else f"{source}: "
        super().__init__(where + message)


SCHEMA = {
    "scenario": {"seed", "n_cycles", "mode", "sample_rate", "charge_interval", "ref_start",
                 "tag_start", "detection_threshold_db", "upsample", "peak_mode",
                 "receiver_filter", "offset_spread", "ook_snr_db"},
    "geometry": {"anchors", "ref_tx", "showers", "bounds", "anchor_boresights",
                 "pattern_exponent"},
    "clocks": {"offsets"},
    "uhf": {"erp", "carrier", "tx_antenna_gain", "rx_antenna_gain", "noise_figure"},
    "uwb": {"carrier", "tx_antenna_gain", "rx_antenna_gain", "noise_figure", "tx_psd",
            "bandwidth"},
    "train": {"prp", "jitter_sigma", "n_pulses", "modulation", "energy_per_pulse"},
    "window": {"t_r", "t_w", "offset"},
    "noise": {"mode", "target_snr_db", "reference_distance", "psd"},
    "codec": {"bitrate", "address_bits", "samples_per_chip", "amplitude"},
    "pf": {"n_particles", "process_noise", "meas_sigma", "dim", "height"},
    "rectenna": {"efficiency_csv", "split_fraction_wur"},
    "tag": {"position", "waypoints", "preset", "stored", "capacity", "threshold_cold",
            "threshold_sustain", "quiescent_power", "tx_energy_per_cycle"},
    "reflector": {"type", "point", "normal", "position", "coefficient"},
    "obstacle": {"type", "center", "normal", "radius", "a", "b", "attenuation_db"},
}
REPEATED = {"tag", "reflector", "obstacle"}
REQUIRED = {"scenario": ("seed", "n_cycles"), "geometry": ("anchors", "ref_tx")}


@dataclass(frozen=True)
class LoadedConfig:
    scenario: ScenarioConfig
    n_cycles: int
    text: str
    path: str


def _line_index(text: str) -> dict:
    """Map (section, key) -> line number, and (section, None) -> header line."""
    index = {}
    section = None
    head = re.compile(r"^\s*\[([^\]]+)\]")
    item = re.compile(r"^([^\s=:#;][^=:]*?)\s*[=:]")
    for n, line in enumerate(text.splitlines(), start=1):
        m = head.match(line)
        if m:
            section = m.group(1).strip()
            index[(section, None)] = n
            continue
        m = item.match(line)
        if m and section is not None:
            index[(section, m.group(1).strip().lower())] = n
    return index


class _Reader:
    def __init__(self, text: str, source: str):
        self.source = source
        self.lines = _line_index(text)
        self.cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
        try:
            self.cp.read_string(text, source=source)
        except configparser.DuplicateSectionError as exc:
            raise ConfigError(f"duplicate section [{exc.section}]", exc.lineno, source) from None
        except configparser.DuplicateOptionError as exc:
            raise ConfigError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno,
                              source) from None
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError("key outside any section", exc.lineno, source) from None
        except configparser.ParsingError as exc:
            line = exc.errors[0][0] if exc.errors else None
            raise ConfigError("cannot parse line", line, source) from None
        self._check_schema()

    def error(self, section, key, message):
        line = self.lines.get((section, key), self.lines.get((section, None)))
        label = f"[{section}] {key}" if key else f"[{section}]"
        return ConfigError(f"{label}: {message}", line, self.source)

    def _check_schema(self):
        for section in self.cp.sections():
            kind = section.split(".", 1)[0]
            if kind not in SCHEMA or (kind in REPEATED) != ("." in section):
                raise self.error(section, None, "unknown section")
            for key in self.cp[section]:
                if key not in SCHEMA[kind]:
                    raise self.error(section, key, "unknown key")
        for section, keys in REQUIRED.items():
            for key in keys:
                if not self.cp.has_option(section, key):
                    line = self.lines.get((section, None))
                    raise ConfigError(f"missing required key {key!r} in [{section}]", line,
                                      self.source)

    def has(self, section, key) -> bool:
        return self.cp.has_option(section, key) and self.cp[section][key].strip() != ""

    def raw(self, section, key):
        return self.cp[section][key].strip()

    def get(self, section, key, convert, default=None):
        if not self.has(section, key):
            return default
        try:
            return convert(self.raw(section, key))
        except (TypeError, ValueError) as exc:
            raise self.error(section, key, str(exc) or "invalid value") from None

    def number(self, section, key, default=None):
        return self.get(section, key, _float, default)

    def integer(self, section, key, default=None):
        return self.get(section, key, _int, default)

    def vector(self, section, key, size=None, default=None):
        return self.get(section, key, lambda s: _vector(s, size), default)

    def vectors(self, section, key, size=None, default=None):
        return self.get(section, key, lambda s: _vectors(s, size), default)

    def boolean(self, section, key, default=None):
        return self.get(section, key, _bool, default)

    def sections(self, kind):
        return [s for s in self.cp.sections() if s.startswith(kind + ".")]


def _float(s: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise ValueError(f"expected a number, got {s!r}") from None
    if not np.isfinite(v):
        raise ValueError(f"expected a finite number, got {s!r}")
    return v


def _int(s: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ValueError(f"expected an integer, got {s!r}") from None


def _bool(s: str) -> bool:
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _vector(s: str, size=None) -> tuple:
    v = tuple(_float(x) for x in s.split())
    if size is not None and len(v) != size:
        raise ValueError(f"expected {size} numbers, got {len(v)}")
    return v


def _vectors(s: str, size=None) -> tuple:
    return tuple(_vector(p, size) for p in s.split(";") if p.strip())


def _geometry(r: _Reader) -> Geometry:
    reflectors = []
    for sec in r.sections("reflector"):
        kind = r.get(sec, "type", str, "plane")
        coef = r.number(sec, "coefficient", 0.5)
        if kind == "plane":
            reflectors.append(PlaneReflector(r.vector(sec, "point", 3, (0.0, 0.0, 0.0)),
                                             r.vector(sec, "normal", 3, (0.0, 0.0, 1.0)), coef))
        elif kind == "point":
            reflectors.append(PointScatterer(r.vector(sec, "position", 3), coef))
        else:
            raise r.error(sec, "type", f"expected 'plane' or 'point', got {kind!r}")
    obstacles = []
    for sec in r.sections("obstacle"):
        kind = r.get(sec, "type", str, "disk")
        att = r.number(sec, "attenuation_db", 15.0)
        if kind == "disk":
            obstacles.append(DiskObstacle(r.vector(sec, "center", 3), r.vector(sec, "normal", 3),
                                          r.number(sec, "radius"), att))
        elif kind == "screen":
            obstacles.append(ScreenObstacle(r.vector(sec, "a", 2), r.vector(sec, "b", 2), att))
        else:
            raise r.error(sec, "type", f"expected 'disk' or 'screen', got {kind!r}")
    kw = dict(anchors=r.vectors("geometry", "anchors", 3),
              ref_tx=r.vector("geometry", "ref_tx", 3),
              showers=r.vectors("geometry", "showers", 3, ()),
              reflectors=tuple(reflectors), obstacles=tuple(obstacles),
              pattern_exponent=r.number("geometry", "pattern_exponent", 0.0))
    if r.has("geometry", "anchor_boresights"):
        kw["anchor_boresights"] = r.vectors("geometry", "anchor_boresights", 3)
    try:
        return Geometry(**kw)
    except ValueError as exc:
        raise r.error("geometry", None, str(exc)) from None


def _tags(r: _Reader) -> tuple:
    tags = []
    for sec in r.sections("tag"):
        try:
            tag_id = int(sec.split(".", 1)[1])
        except ValueError:
            raise r.error(sec, None, "tag sections are named [tag.<integer id>]") from None
        if not (r.has(sec, "position") or r.has(sec, "waypoints")):
            raise r.error(sec, None, "missing required key 'position'")
        preset = r.get(sec, "preset", str, "default")
        if preset not in ("default", "asic"):
            raise r.error(sec, "preset", f"expected 'default' or 'asic', got {preset!r}")
        fields = {k: r.number(sec, k) for k in ("stored", "capacity", "threshold_cold",
                                                "threshold_sustain", "quiescent_power",
                                                "tx_energy_per_cycle") if r.has(sec, k)}
        try:
            energy = asic_state(**fields) if preset == "asic" else TagEnergyState(**fields)
        except ValueError as exc:
            raise r.error(sec, None, str(exc)) from None
        kw = dict(id=tag_id, energy=energy)
        if r.has(sec, "position"):
            kw["position"] = r.vector(sec, "position", 3)
        if r.has(sec, "waypoints"):
            kw["waypoints"] = r.vectors(sec, "waypoints", 4)
        tags.append(TagSpec(**kw))
    if not tags:
        raise ConfigError("at least one [tag.<id>] section is required", None, r.source)
    return tuple(sorted(tags, key=lambda t: t.id))


def parse_config(text: str, source: str = "<config>", base_dir=None) -> LoadedConfig:
    r = _Reader(text, source)
    base_dir = Path(base_dir) if base_dir is not None else Path(".")
    g = _geometry(r)
    link_uhf = uhf_link(**{k: v for k, v in (
        ("erp", r.number("uhf", "erp")), ("carrier", r.number("uhf", "carrier")),
        ("tx_antenna_gain", r.number("uhf", "tx_antenna_gain")),
        ("rx_antenna_gain", r.number("uhf", "rx_antenna_gain")),
        ("noise_figure", r.number("uhf", "noise_figure"))) if v is not None})
    link_uwb = uwb_link(**{k: v for k, v in (
        ("carrier", r.number("uwb", "carrier")),
        ("tx_antenna_gain", r.number("uwb", "tx_antenna_gain")),
        ("rx_antenna_gain", r.number("uwb", "rx_antenna_gain")),
        ("noise_figure", r.number("uwb", "noise_figure")),
        ("uwb_tx_psd", r.number("uwb", "tx_psd")),
        ("uwb_bandwidth", r.number("uwb", "bandwidth"))) if v is not None})
    fs = r.number("scenario", "sample_rate", 4e9)
    try:
        shape, _ = make_pulse_shape(link_uwb.carrier, link_uwb.uwb_bandwidth, fs)
        prp = r.number("train", "prp", 6.25e-9)
        train = PulseTrainSpec(
            shape, prp=prp, jitter_sigma=r.number("train", "jitter_sigma", 200e-12),
            n_pulses=r.integer("train", "n_pulses", 5000),
            modulation=Modulation.parse(r.get("train", "modulation", str, "jittered")),
            energy_per_pulse=r.number("train", "energy_per_pulse",
                                      uwb_pulse_energy(link_uwb, prp)))
    except ValueError as exc:
        raise r.error("train", None, str(exc)) from None
    try:
        window = RecordingWindow(r.number("window", "t_r", 100e-6),
                                 r.number("window", "t_w", 40e-6),
                                 r.number("window", "offset", 0.0))
    except ValueError as exc:
        raise r.error("window", None, str(exc)) from None
    offsets = r.vector("clocks", "offsets", g.n_anchors, (0.0,) * g.n_anchors)
    try:
        clocks = ClockModel(offsets)
    except ValueError as exc:
        raise r.error("clocks", "offsets", str(exc)) from None
    codec = AddressCodec(bitrate=r.number("codec", "bitrate", 10e3),
                         address_bits=r.integer("codec", "address_bits", 8),
                         samples_per_chip=r.integer("codec", "samples_per_chip", 8),
                         amplitude=r.number("codec", "amplitude", 1.0))
    pf = PfParams(n_particles=r.integer("pf", "n_particles", 2000),
                  process_noise=r.number("pf", "process_noise", 0.5),
                  meas_sigma=r.number("pf", "meas_sigma", 0.02),
                  dim=r.integer("pf", "dim", 2), height=r.number("pf", "height"))
    if pf.dim not in (2, 3):
        raise r.error("pf", "dim", "expected 2 or 3")
    split = r.number("rectenna", "split_fraction_wur", 0.2)
    if r.has("rectenna", "efficiency_csv"):
        csv_path = base_dir / r.raw("rectenna", "efficiency_csv")
        try:
            rectenna = load_efficiency_csv(csv_path, split)
        except (OSError, ValueError) as exc:
            raise r.error("rectenna", "efficiency_csv", str(exc)) from None
    else:
        rectenna = RectennaModel(split_fraction_wur=split)
    noise_mode = r.get("noise", "mode", str, "thermal")
    try:
        noise = NoiseMode(noise_mode)
    except ValueError:
        raise r.error("noise", "mode", f"unknown noise mode {noise_mode!r}") from None
    kw = dict(
        geometry=g, tags=_tags(r), clocks=clocks, link_uhf=link_uhf,
        link_uwb=link_uwb, train=train, window=window, codec=codec, pf=pf, rectenna=rectenna,
        seed=r.integer("scenario", "seed"), sample_rate=fs,
        ref_start=r.number("scenario", "ref_start", 6e-6),
        tag_start=r.number("scenario", "tag_start", 6e-6),
        charge_interval=r.number("scenario", "charge_interval", 0.2),
        mode=r.get("scenario", "mode", str, "snapshot"),
        noise=noise, target_snr_db=r.number("noise", "target_snr_db", 37.0),
        snr_reference_distance=r.number("noise", "reference_distance"),
        noise_psd_w_hz=r.number("noise", "psd"),
        detection_threshold_db=r.number("scenario", "detection_threshold_db", 10.0),
        upsample=r.integer("scenario", "upsample", 4),
        peak_mode=r.get("scenario", "peak_mode", str, "strongest"),
        receiver_filter=r.boolean("scenario", "receiver_filter", True),
        offset_spread=r.number("scenario", "offset_spread", 0.0),
        ook_snr_db=r.number("scenario", "ook_snr_db"),
    )
    if r.has("geometry", "bounds"):
        b = r.vectors("geometry", "bounds", 3)
        if len(b) != 2:
            raise r.error("geometry", "bounds", "expected two corners 'lo; hi'")
        kw["bounds"] = b
    n_cycles = r.integer("scenario", "n_cycles")
    if n_cycles < 1:
        raise r.error("scenario", "n_cycles", "must be >= 1")
    if kw["seed"] < 0:
        raise r.error("scenario", "seed", "must be >= 0")
    try:
        cfg = ScenarioConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc), None, source) from None
    return LoadedConfig(cfg, n_cycles, text, source)


def load_config(path) -> LoadedConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    return parse_config(text, str(path), path.parent)


def bundled_config_path(name: str = "room10x7.cfg") -> Path:
    return Path(__file__).with_name("data") / name


def with_seed(loaded: LoadedConfig, seed: int) -> LoadedConfig:
    return replace(loaded, scenario=replace(loaded.scenario, seed=seed))

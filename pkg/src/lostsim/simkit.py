"""Interrogation-cycle simulation, scenario runs and parameter sweeps."""

from __future__ import annotations

import enum
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft

from .channel import (C, ClockModel, Geometry, PlaneReflector, RfLinkParams, add_noise, friis_rx_power,
                      noise_psd, propagate, uhf_link, uwb_link, uwb_pulse_energy)
from .energy import (AddressCodec, DecodeError, RectennaModel, TagEnergyState, can_wake, charge,
                     ook_decode, ook_encode, rectifier_output, transmit)
from .locate import (AnchorSet, GeometryError, PfParams, PositionEstimate, pf_init, pf_step,
                     solve_position_lsq)
from .signal import (EmissionSchedule, Modulation, PulseTrainSpec, Waveform,
                     draw_emission_schedule, make_pulse_shape)
from .tdoa import (DetectionError, RecordingWindow, SyncGeometry, TdoaMeasurement,
                   correlation_from_spectrum, correlation_length, double_correlation_tdoa,
                   matched_filter_weights, tdoa_from_correlations)

# seed stream identifiers
_REF, _TAG, _NOISE, _OOK, _PF, _OFFSET, _TRIAL = range(7)

ROOM_HEIGHT = 2.03
CEILING_HEIGHT = 3.0
FLOOR_REFLECTION = 0.5
CEILING_REFLECTION = 0.4


class WindowDisciplineError(RuntimeError):
    pass


def _seed(base: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(base), spawn_key=tuple(int(k) for k in key))


def _derive_seed(base: int, *key: int) -> int:
    return int(_seed(base, *key).generate_state(1, np.uint64)[0] >> np.uint64(1))


@dataclass(frozen=True)
class TagSpec:
    id: int
    position: tuple = (5.0, 3.5, ROOM_HEIGHT)
    waypoints: tuple = ()
    energy: TagEnergyState = TagEnergyState()

    def position_at(self, t: float) -> np.ndarray:
        """Static position, or linear interpolation over ``(t, x, y, z)`` waypoints."""
        if not self.waypoints:
            return np.asarray(self.position, dtype=float)
        wp = np.asarray(self.waypoints, dtype=float)
        return np.array([np.interp(t, wp[:, 0], wp[:, k]) for k in (1, 2, 3)])


class NoiseMode(enum.Enum):
    THERMAL = "thermal"
    TARGET = "target"
    PSD = "psd"
    OFF = "off"


@dataclass(frozen=True)
class ScenarioConfig:
    geometry: Geometry
    tags: tuple
    clocks: ClockModel | None = None
    link_uhf: RfLinkParams = field(default_factory=uhf_link)
    link_uwb: RfLinkParams = field(default_factory=uwb_link)
    train: PulseTrainSpec | None = None
    window: RecordingWindow = RecordingWindow()
    codec: AddressCodec = AddressCodec()
    pf: PfParams = PfParams()
    rectenna: RectennaModel = RectennaModel()
    seed: int = 0
    sample_rate: float = 4e9
    ref_start: float = 6e-6
    tag_start: float = 6e-6
    charge_interval: float = 0.2
    mode: str = "snapshot"
    noise: NoiseMode = NoiseMode.THERMAL
    target_snr_db: float = 37.0
    snr_reference_distance: float | None = None
    noise_psd_w_hz: float | None = None
    detection_threshold_db: float = 10.0
    upsample: int = 4
    peak_mode: str = "strongest"
    bounds: tuple | None = None
    offset_spread: float = 0.0
    ook_snr_db: float | None = None
    receiver_filter: bool = True

    def __post_init__(self):
        if self.train is None:
            shape, _ = make_pulse_shape(self.link_uwb.carrier, self.link_uwb.uwb_bandwidth,
                                        self.sample_rate)
            prp = 6.25e-9
            object.__setattr__(self, "train", PulseTrainSpec(
                shape, prp=prp, energy_per_pulse=uwb_pulse_energy(self.link_uwb, prp)))
        if self.clocks is None:
            object.__setattr__(self, "clocks", ClockModel.synchronized(self.geometry.n_anchors))
        object.__setattr__(self, "noise", NoiseMode(self.noise) if not isinstance(
            self.noise, NoiseMode) else self.noise)
        object.__setattr__(self, "tags", tuple(self.tags))
        if self.bounds is None:
            pts = np.vstack([self.geometry.anchors, self.geometry.ref_tx[None, :]])
            object.__setattr__(self, "bounds", (tuple(pts.min(0)), tuple(pts.max(0))))
        self.validate()

    @property
    def anchors(self) -> AnchorSet:
        return AnchorSet(self.geometry.anchors, 0)

    @property
    def dim(self) -> int:
        return self.pf.dim

    @property
    def height(self) -> float:
        return self.pf.height if self.pf.height is not None else float(
            self.geometry.anchors[:, 2].mean())

    def tag(self, tag_id: int) -> TagSpec:
        for t in self.tags:
            if t.id == tag_id:
                return t
        raise KeyError(f"no tag with id {tag_id}")

    def burst_span(self) -> float:
        """Upper bound on the on-air length of one burst including jitter drift."""
        tr = self.train
        drift = 4 * tr.effective_jitter * math.sqrt(tr.n_pulses)
        return (tr.n_pulses - 1) * tr.prp + drift + tr.shape.duration

    def max_delay(self) -> float:
        lo, hi = np.asarray(self.bounds[0]), np.asarray(self.bounds[1])
        return float(np.linalg.norm(hi - lo)) / C

    def validate(self) -> None:
        g = self.geometry
        if len(self.clocks.offsets) != g.n_anchors:
            raise ValueError("one clock offset per anchor required")
        self.clocks.check(self.window.t_r)
        if not self.tags:
            raise ValueError("scenario needs at least one tag")
        ids = [t.id for t in self.tags]
        if len(set(ids)) != len(ids):
            raise ValueError("tag ids must be unique")
        for t in self.tags:
            if not 0 <= t.id < 2 ** self.codec.address_bits:
                raise ValueError(f"tag id {t.id} does not fit the address codec")
        lo, hi = np.asarray(self.bounds[0], float), np.asarray(self.bounds[1], float)
        tol = 1e-9
        for t in self.tags:
            pts = (np.asarray(t.waypoints, float)[:, 1:] if t.waypoints
                   else np.asarray(t.position, float)[None, :])
            if np.any(pts < lo - tol) or np.any(pts > hi + tol):
                raise ValueError(f"tag {t.id} leaves the declared bounding region")
        if self.mode not in ("snapshot", "tracking"):
            raise ValueError(f"unknown mode {self.mode!r}")
        w = self.window
        off = np.asarray(self.clocks.offsets)
        lo_off = min(off.min(), -self.offset_spread)
        hi_off = max(off.max(), self.offset_spread)
        span = self.burst_span()
        for start in (self.ref_start, self.tag_start):
            if start < w.offset:
                raise ValueError("bursts must start inside RX1's integration window")
            if start + span + self.max_delay() > w.offset + w.t_w:
                raise ValueError("burst does not fit RX1's integration window")
            if start + lo_off < 0 or start + span + self.max_delay() + hi_off > w.half:
                raise ValueError("burst does not fit the half-window under the clock offsets")

    @property
    def prefilter_sigma(self) -> float | None:
        return self.train.shape.sigma if self.receiver_filter else None

    def pulse_energy_rx(self, distance: float) -> float:
        """Received energy per pulse (J) over a free-space path of ``distance``."""
        lam = C / self.train.shape.center_frequency
        g = 10 ** ((self.link_uwb.tx_antenna_gain + self.link_uwb.rx_antenna_gain) / 10)
        return self.train.energy_per_pulse * g * (lam / (4 * np.pi * distance)) ** 2

    def reference_distance(self) -> float:
        if self.snr_reference_distance is not None:
            return self.snr_reference_distance
        a = self.geometry.anchors
        return float(max(np.linalg.norm(p - q) for p in a for q in a))

    def noise_n0(self) -> float:
        if self.noise is NoiseMode.THERMAL:
            return noise_psd(self.link_uwb.noise_figure)
        if self.noise is NoiseMode.PSD:
            if self.noise_psd_w_hz is None:
                raise ValueError("noise mode 'psd' needs noise_psd_w_hz")
            return float(self.noise_psd_w_hz)
        if self.noise is NoiseMode.OFF:
            return 0.0
        e_acc = self.train.n_pulses * self.pulse_energy_rx(self.reference_distance())
        return e_acc / 10 ** (self.target_snr_db / 10)

    def accumulated_snr_db(self, distance: float) -> float:
        n0 = self.noise_n0()
        if n0 == 0:
            return float("inf")
        return float(10 * np.log10(self.train.n_pulses * self.pulse_energy_rx(distance) / n0))


def default_config(**overrides) -> ScenarioConfig:
    """The 10 x 7 m room: corner anchors on 2.03 m poles, showers mid-side.

    A concrete floor and a 3 m suspended ceiling are the only reflectors; the
    ceiling bounce arrives about a nanosecond after line of sight and sets
    the noise-independent part of the error.
    """
    h = ROOM_HEIGHT
    geometry = Geometry(
        anchors=[(0.0, 0.0, h), (10.0, 0.0, h), (10.0, 7.0, h), (0.0, 7.0, h)],
        ref_tx=(5.0, 7.0, h),
        showers=[(5.0, 0.0, h), (0.0, 3.5, h), (10.0, 3.5, h)],
        reflectors=(PlaneReflector((0.0, 0.0, 0.0), (0.0, 0.0, 1.0), FLOOR_REFLECTION),
                    PlaneReflector((0.0, 0.0, CEILING_HEIGHT), (0.0, 0.0, -1.0),
                                   CEILING_REFLECTION)),
    )
    kw = dict(geometry=geometry, tags=(TagSpec(1, (3.0, 2.5, h)),),
              bounds=((0.0, 0.0, h), (10.0, 7.0, h)))
    kw.update(overrides)
    if "target_snr_db" in overrides and "noise" not in overrides:
        # asking for an SNR only makes sense with noise referenced to it
        kw["noise"] = NoiseMode.TARGET
    return ScenarioConfig(**kw)


@dataclass(frozen=True)
class CycleResult:
    cycle: int
    tag_id: int
    transmitted: bool
    detected: tuple
    tdoas: tuple
    estimate: PositionEstimate | None
    truth: np.ndarray
    error: float
    energy_log: tuple
    tdoa_errors: tuple = ()
    responder: int | None = None
    flags: tuple = ()
    waveforms: dict | None = None

    @property
    def n_detections(self) -> int:
        return int(sum(self.detected))

    @property
    def min_peak_quality(self) -> float:
        return min((m.peak_quality for m in self.tdoas), default=float("nan"))


@dataclass(frozen=True)
class MetricsRow:
    cycle: int
    tag_id: int
    truth: tuple
    estimate: tuple
    error_m: float
    n_detections: int
    min_peak_quality_db: float
    tdoa_errors: tuple = ()
    sweep_value: float = float("nan")
    trial: int = 0
    snr_db: float = float("nan")
    note: str = ""


class MetricsTable:
    """Append-only list of per-cycle rows."""

    def __init__(self, variable: str = "", rows=()):
        self.variable = variable
        self._rows: list[MetricsRow] = list(rows)

    def append(self, row: MetricsRow) -> None:
        self._rows.append(row)

    def extend(self, rows) -> None:
        for r in rows:
            self.append(r)

    @property
    def rows(self) -> tuple:
        return tuple(self._rows)

    def __len__(self) -> int:
        return len(self._rows)

    def __iter__(self):
        return iter(self._rows)

    def errors(self) -> np.ndarray:
        e = np.array([r.error_m for r in self._rows], dtype=float)
        return e[np.isfinite(e)]

    def groups(self) -> dict:
        out: dict = {}
        for r in self._rows:
            out.setdefault(r.sweep_value, []).append(r)
        return out


def _row(res: CycleResult, sweep_value=float("nan"), trial=0, snr_db=float("nan")) -> MetricsRow:
    est = (tuple(float(v) for v in res.estimate.position[:2]) if res.estimate is not None
           else (float("nan"), float("nan")))
    return MetricsRow(res.cycle, res.tag_id, tuple(float(v) for v in res.truth[:2]), est,
                      float(res.error), res.n_detections, float(res.min_peak_quality),
                      tuple(float(e) for e in res.tdoa_errors), float(sweep_value), trial,
                      float(snr_db), ";".join(res.flags))


def _check_window(cfg: ScenarioConfig, sched: EmissionSchedule, tx, offsets, half_index: int,
                  label: str) -> None:
    w = cfg.window
    half0 = half_index * w.half
    dur = cfg.train.shape.duration / 2
    for i, a in enumerate(cfg.geometry.anchors):
        delay = np.linalg.norm(np.asarray(tx) - a) / C
        first = sched.times[0] + delay + offsets[i] - dur
        last = sched.times[-1] + delay + offsets[i] + dur
        lo, hi = half0, half0 + w.half
        if i == 0:
            lo, hi = half0 + w.offset, half0 + w.offset + w.t_w
        if first < lo or last > hi:
            raise WindowDisciplineError(
                f"{label} burst [{first:.4e}, {last:.4e}] s leaves the window [{lo:.4e}, {hi:.4e}] s "
                f"of receiver {i}")


class Simulation:
    """Stateful run of a scenario: tag energy, tracks and the cycle clock."""

    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.cycle = 0
        self.time = 0.0
        self.energy = {t.id: t.energy for t in cfg.tags}
        self.tracks: dict = {}
        self.last_time: dict = {}
        self.last_estimate: dict = {}

    def shower_power_dbm(self, pos) -> float:
        showers = self.cfg.geometry.showers
        if showers.shape[0] == 0:
            return float("-inf")
        d = np.linalg.norm(showers - np.asarray(pos)[None, :], axis=1)
        p_mw = np.sum(10 ** (np.asarray(friis_rx_power(self.cfg.link_uhf, d)) / 10))
        return float(10 * np.log10(p_mw))

    def offsets(self) -> np.ndarray:
        off = np.asarray(self.cfg.clocks.offsets, dtype=float)
        if self.cfg.offset_spread > 0:
            rng = np.random.default_rng(_seed(self.cfg.seed, self.cycle, _OFFSET))
            extra = rng.uniform(-1, 1, off.size) * self.cfg.offset_spread
            extra[0] = 0.0
            off = off + extra
        return off

    def record(self, sched: EmissionSchedule, tx, rx_index: int, half_index: int,
               offset: float, n0: float, seed) -> Waveform:
        cfg = self.cfg
        t0 = half_index * cfg.window.half
        w = propagate(sched, cfg.train.shape, tx, cfg.geometry.anchors[rx_index], cfg.geometry,
                      offset, cfg.sample_rate, (t0, t0 + cfg.window.half),
                      pulse_energy=cfg.train.energy_per_pulse, link=cfg.link_uwb,
                      rx_index=rx_index)
        if n0 > 0:
            return add_noise(w, cfg.link_uwb.noise_figure, seed, psd=n0, dtype=np.complex64)
        return Waveform(w.sample_rate, w.t0, w.samples.astype(np.complex64))

    def _charge_all(self) -> dict:
        cfg = self.cfg
        p_rf = {}
        for t in cfg.tags:
            p = self.shower_power_dbm(t.position_at(self.time))
            p_rf[t.id] = p
            p_dc = rectifier_output(cfg.rectenna, p)
            self.energy[t.id] = charge(self.energy[t.id], p_dc, cfg.charge_interval, p)
        return p_rf

    def _broadcast(self, address: int) -> int | None:
        """OOK-address the tags; return the id of the tag that wakes, if any."""
        cfg = self.cfg
        env = ook_encode(address, cfg.codec)
        if cfg.ook_snr_db is not None:
            rng = np.random.default_rng(_seed(cfg.seed, self.cycle, _OOK))
            sigma = cfg.codec.amplitude * 10 ** (-cfg.ook_snr_db / 20)
            env = env + sigma * rng.standard_normal(env.size)
        try:
            decoded = ook_decode(env, cfg.codec)
        except DecodeError:
            return None
        return decoded

    def run_cycle(self, tag_id: int, broadcast_address: int | None = None,
                  keep_waveforms: bool = False) -> CycleResult:
        cfg = self.cfg
        tag = cfg.tag(tag_id)
        self.time += cfg.charge_interval
        p_rf = self._charge_all()
        truth = tag.position_at(self.time)
        before = self.energy[tag_id].stored
        decoded = self._broadcast(tag_id if broadcast_address is None else broadcast_address)
        responder = None
        for t in cfg.tags:
            if t.id == decoded and can_wake(self.energy[t.id], p_rf[t.id]):
                responder = t.id
        n = cfg.geometry.n_anchors
        cyc = self.cycle
        self.cycle += 1
        if responder is not None and responder != tag_id:
            self.energy[responder] = transmit(self.energy[responder])
        if responder != tag_id:
            return CycleResult(cyc, tag_id, False, (False,) * n, (), None, truth, float("nan"),
                               (before, self.energy[tag_id].stored), responder=responder,
                               flags=("not_woken",))
        if self.energy[tag_id].stored < self.energy[tag_id].tx_energy_per_cycle:
            raise AssertionError("energy causality violated")

        offsets = self.offsets()
        half = cfg.window.half
        ref_sched = draw_emission_schedule(cfg.train, _seed(cfg.seed, cyc, _REF)).shifted(
            cfg.ref_start)
        tag_sched = draw_emission_schedule(cfg.train, _seed(cfg.seed, cyc, _TAG)).shifted(
            half + cfg.tag_start)
        _check_window(cfg, ref_sched, cfg.geometry.ref_tx, offsets, 0, "reference")
        _check_window(cfg, tag_sched, truth, offsets, 1, "tag")
        n0 = cfg.noise_n0()
        first, second = [], []
        for i in range(n):
            first.append(self.record(ref_sched, cfg.geometry.ref_tx, i, 0, offsets[i], n0,
                                     _seed(cfg.seed, cyc, _NOISE, i, 0)))
            second.append(self.record(tag_sched, truth, i, 1, offsets[i], n0,
                                      _seed(cfg.seed, cyc, _NOISE, i, 1)))

        anchors = cfg.geometry.anchors
        ref = cfg.geometry.ref_tx
        detected = [False] * n
        meas: list[TdoaMeasurement] = []
        errs = []
        for i in range(1, n):
            sync = SyncGeometry(np.linalg.norm(ref - anchors[0]) / C,
                                np.linalg.norm(ref - anchors[i]) / C)
            try:
                m = double_correlation_tdoa(first[0], second[0], first[i], second[i], sync,
                                            cfg.window, rx_pair=(0, i),
                                            detection_threshold_db=cfg.detection_threshold_db,
                                            upsample=cfg.upsample, peak_mode=cfg.peak_mode,
                                            prefilter_sigma=cfg.prefilter_sigma)
            except DetectionError:
                continue
            detected[i] = True
            meas.append(m)
            true_tdoa = (np.linalg.norm(truth - anchors[i]) - np.linalg.norm(truth - anchors[0])) / C
            errs.append(m.tdoa - true_tdoa)
        detected[0] = bool(meas)
        estimate, flags = self._localize(tag_id, meas)
        self.energy[tag_id] = transmit(self.energy[tag_id])
        err = float("nan")
        if estimate is not None:
            err = float(np.linalg.norm(estimate.position[:cfg.dim] - truth[:cfg.dim]))
        wf = None
        if keep_waveforms:
            wf = {"first": first, "second": second, "offsets": offsets}
        return CycleResult(cyc, tag_id, True, tuple(detected), tuple(meas), estimate, truth, err,
                           (before, self.energy[tag_id].stored), tuple(errs), responder, flags, wf)

    def _localize(self, tag_id: int, meas) -> tuple:
        cfg = self.cfg
        anchors = cfg.anchors
        enough = len(meas) >= cfg.dim
        flags = () if enough else ("too_few_detections",)
        if cfg.mode == "tracking":
            ps = self.tracks.get(tag_id)
            dt = self.time - self.last_time.get(tag_id, self.time)
            if ps is None:
                lo, hi = cfg.bounds
                ps = pf_init(anchors, cfg.pf.n_particles, (lo, hi),
                             _seed(cfg.seed, tag_id, _PF), cfg.dim)
            ps, est = pf_step(ps, meas if enough else [], anchors, dt, cfg.pf)
            self.tracks[tag_id] = ps
            self.last_time[tag_id] = self.time
            if est.status != "ok":
                flags += (est.status,)
            return (est if enough else None), flags
        if not enough:
            return None, flags
        start = self.last_estimate.get(tag_id)
        if start is None:
            start = cfg.geometry.anchors.mean(axis=0)[:cfg.dim]
        try:
            est = solve_position_lsq(meas, anchors, start, dim=cfg.dim, height=cfg.height)
        except GeometryError:
            return None, flags + ("degenerate_geometry",)
        if not est.converged:
            flags += ("not_converged",)
        return est, flags


def run_cycle(cfg: ScenarioConfig, tag_id: int, **kwargs) -> CycleResult:
    """One interrogation cycle of a fresh simulation."""
    return Simulation(cfg).run_cycle(tag_id, **kwargs)


def run_scenario(cfg: ScenarioConfig, n_cycles: int, *, sweep_value=float("nan"), trial: int = 0,
                 sim: Simulation | None = None, on_cycle=None) -> MetricsTable:
    """Round-robin addressing of the tags for ``n_cycles`` cycles."""
    sim = sim or Simulation(cfg)
    table = MetricsTable()
    ids = [t.id for t in cfg.tags]
    for k in range(n_cycles):
        res = sim.run_cycle(ids[k % len(ids)], keep_waveforms=on_cycle is not None)
        if on_cycle is not None:
            on_cycle(res)
        d = float(np.linalg.norm(res.truth - cfg.geometry.anchors[0]))
        table.append(_row(res, sweep_value, trial, cfg.accumulated_snr_db(d)))
    return table


class SweepVariable(enum.Enum):
    ACCUMULATED_SNR = "snr"
    INTEGRATION_TIME = "tw"
    DISTANCE = "distance"
    JITTER_SIGMA = "jitter"

    @classmethod
    def parse(cls, value) -> "SweepVariable":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {"snr": cls.ACCUMULATED_SNR, "accumulatedsnr": cls.ACCUMULATED_SNR,
                   "tw": cls.INTEGRATION_TIME, "integrationtime": cls.INTEGRATION_TIME,
                   "distance": cls.DISTANCE, "jitter": cls.JITTER_SIGMA,
                   "jittersigma": cls.JITTER_SIGMA}
        if key not in aliases:
            raise ValueError(f"unknown sweep variable {value!r}")
        return aliases[key]


def integration_time_config(cfg: ScenarioConfig, t_w: float, slack: float = 6e-6) -> ScenarioConfig:
    """Re-derive the windows and pulse count for integration time ``t_w``.

    The burst is scaled to fill the integration window (n = T_w / prp, less a
    guard for jitter drift) and the noise PSD of ``cfg`` is frozen, so the
    per-pulse SNR stays fixed.
    """
    tr = cfg.train
    if t_w < tr.prp:
        raise ValueError(f"T_w = {t_w:g} s is shorter than one pulse period")
    n_guess = max(1, int(t_w / tr.prp))
    guard = 0.01 * t_w + 5 * tr.effective_jitter * math.sqrt(n_guess) + tr.shape.duration
    guard += cfg.max_delay()
    n = int((t_w - 2 * guard) / tr.prp) + 1
    if n < 1:
        raise ValueError(f"T_w = {t_w:g} s cannot hold a pulse")
    spread = max(max(abs(o) for o in cfg.clocks.offsets), cfg.offset_spread)
    slack = max(slack, spread + 1e-6)
    window = RecordingWindow(t_r=2 * (slack + t_w + slack), t_w=t_w, offset=slack)
    n0 = cfg.noise_n0()
    return replace(cfg, train=replace(tr, n_pulses=n), window=window,
                   ref_start=slack + guard, tag_start=slack + guard,
                   noise=NoiseMode.PSD if n0 > 0 else NoiseMode.OFF, noise_psd_w_hz=n0)


def distance_config(cfg: ScenarioConfig, distance: float) -> ScenarioConfig:
    """Single tag at ``distance`` from RX1 towards the anchor centroid."""
    a0 = cfg.geometry.anchors[0]
    u = cfg.geometry.anchors.mean(axis=0) - a0
    u[2] = 0.0
    u /= np.linalg.norm(u)
    pos = a0 + distance * u
    tag = replace(cfg.tags[0], position=tuple(pos), waypoints=())
    return replace(cfg, tags=(tag,))


def derive_config(cfg: ScenarioConfig, variable, value: float) -> ScenarioConfig:
    var = SweepVariable.parse(variable)
    if var is SweepVariable.ACCUMULATED_SNR:
        return replace(cfg, noise=NoiseMode.TARGET, target_snr_db=float(value))
    if var is SweepVariable.INTEGRATION_TIME:
        return integration_time_config(cfg, float(value))
    if var is SweepVariable.DISTANCE:
        return distance_config(cfg, float(value))
    return replace(cfg, train=replace(cfg.train, jitter_sigma=float(value)))


def _trial_job(args):
    cfg, variable, value, vi, trial, cycles = args
    try:
        derived = derive_config(cfg, variable, value)
    except ValueError as exc:
        return [MetricsRow(-1, -1, (float("nan"),) * 2, (float("nan"),) * 2, float("nan"), 0,
                           float("nan"), (), float(value), trial, float("nan"),
                           f"skipped: {exc}")]
    derived = replace(derived, seed=_derive_seed(cfg.seed, _TRIAL, vi, trial))
    n = cycles if cycles is not None else len(derived.tags)
    return list(run_scenario(derived, n, sweep_value=value, trial=trial))


def sweep_workers() -> int:
    raw = os.environ.get("LOST_SIM_THREADS", "0").strip() or "0"
    n = int(raw)
    return os.cpu_count() or 1 if n <= 0 else n


def sweep(cfg: ScenarioConfig, variable, values, trials_per_value: int, *,
          cycles_per_trial: int | None = None, workers: int | None = None) -> MetricsTable:
    """Run independent trials for each value; rows ordered by (value, trial)."""
    values = list(values)
    if not values:
        raise ValueError("sweep needs at least one value")
    if trials_per_value < 1:
        raise ValueError("trials_per_value must be >= 1")
    var = SweepVariable.parse(variable)
    jobs = [(cfg, var, v, vi, t, cycles_per_trial)
            for vi, v in enumerate(values) for t in range(trials_per_value)]
    workers = sweep_workers() if workers is None else workers
    table = MetricsTable(var.value)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_job, jobs))
    else:
        results = [_trial_job(j) for j in jobs]
    for rows in results:
        if rows and rows[0].note.startswith("skipped"):
            warnings.warn(rows[0].note, RuntimeWarning, stacklevel=2)
        table.extend(rows)
    return table


@dataclass(frozen=True)
class ErrorCdf:
    errors: np.ndarray
    median: float
    p90: float
    empty: bool = False


def error_cdf(table) -> ErrorCdf:
    """Ascending errors with median and 90th percentile."""
    if isinstance(table, MetricsTable):
        e = table.errors()
    else:
        e = np.asarray([r.error_m if isinstance(r, MetricsRow) else r for r in table], float)
        e = e[np.isfinite(e)]
    if e.size == 0:
        return ErrorCdf(np.zeros(0), float("nan"), float("nan"), True)
    e = np.sort(e)
    return ErrorCdf(e, float(np.median(e)), float(np.percentile(e, 90)))


# ---------------------------------------------------------------------------
# receiver-pair Monte Carlo for TDOA accuracy versus accumulated SNR


def pair_tdoa_errors(cfg: ScenarioConfig, snr_values_db, trials: int, *, rx=(0, 1),
                     tag_index: int = 0, first_trial: int = 0) -> np.ndarray:
    """TDOA errors (s), shape (len(snr_values), trials), for one receiver pair.

    The accumulated SNR is referenced to the weakest of the four arrivals
    (reference and tag burst at both receivers). Every SNR value reuses the
    same jitter draws and unit-noise realisations per trial, and the
    correlations are formed from per-trial spectra, which is exact by
    linearity of the transform. Detection failures keep their raw estimate.
    """
    snr_values_db = np.atleast_1d(np.asarray(snr_values_db, float))
    a_idx, b_idx = rx
    g = cfg.geometry
    anchors = g.anchors
    tag_pos = cfg.tags[tag_index].position_at(0.0)
    ref = g.ref_tx
    dists = [np.linalg.norm(p - anchors[k]) for p in (ref, tag_pos) for k in (a_idx, b_idx)]
    e_min = cfg.train.n_pulses * min(cfg.pulse_energy_rx(d) for d in dists)
    n0s = e_min / 10 ** (snr_values_db / 10)
    sync = SyncGeometry(np.linalg.norm(ref - anchors[a_idx]) / C,
                        np.linalg.norm(ref - anchors[b_idx]) / C)
    truth = (np.linalg.norm(tag_pos - anchors[b_idx]) - np.linalg.norm(tag_pos - anchors[a_idx])) / C
    sim = Simulation(cfg)
    w = cfg.window
    half = w.half
    fs = cfg.sample_rate
    out = np.empty((snr_values_db.size, trials))
    for t in range(trials):
        trial = first_trial + t
        sim.cycle = trial
        offsets = sim.offsets()
        ref_sched = draw_emission_schedule(cfg.train, _seed(cfg.seed, trial, _REF)).shifted(
            cfg.ref_start)
        tag_sched = draw_emission_schedule(cfg.train, _seed(cfg.seed, trial, _TAG)).shifted(
            half + cfg.tag_start)
        spectra = []
        for h, (sched, tx) in enumerate(((ref_sched, ref), (tag_sched, tag_pos))):
            parts = []
            for k in (a_idx, b_idx):
                clean = sim.record(sched, tx, k, h, offsets[k], 0.0, None)
                unit = add_noise(Waveform(fs, clean.t0, np.zeros(len(clean), np.complex128)), 0.0,
                                 _seed(cfg.seed, trial, _NOISE, k, h), psd=1.0)
                if k == a_idx:
                    clean = clean.segment(clean.t0 + w.offset, w.t_w)
                    unit = unit.segment(unit.t0 + w.offset, w.t_w)
                parts.append((clean, unit))
            (ca, ua), (cb, ub) = parts
            L = correlation_length(len(ca), len(cb))
            wts = (None if cfg.prefilter_sigma is None
                   else matched_filter_weights(cfg.prefilter_sigma, L, fs))
            spectra.append((sfft.fft(ca.samples.astype(np.complex128), L), sfft.fft(ua.samples, L),
                            sfft.fft(cb.samples.astype(np.complex128), L), sfft.fft(ub.samples, L),
                            len(ca), len(cb), cb.t0 - ca.t0, wts))
        for s, n0 in enumerate(n0s):
            alpha = np.sqrt(n0)
            corr = []
            for As, An, Bs, Bn, na, nb, lag0, wts in spectra:
                X = np.conj(As + alpha * An) * (Bs + alpha * Bn)
                corr.append(correlation_from_spectrum(X, na, nb, fs, lag0, weights=wts))
            try:
                m = tdoa_from_correlations(corr[0], corr[1], sync, rx_pair=rx,
                                           detection_threshold_db=cfg.detection_threshold_db,
                                           upsample=cfg.upsample, peak_mode=cfg.peak_mode)
            except DetectionError as exc:
                m = exc.measurement
            out[s, t] = m.tdoa - truth
    return out


def rmse(errors, axis=-1):
    return np.sqrt(np.mean(np.square(errors), axis=axis))


def snr_crossing(snr_values_db, rmse_values, target: float) -> float:
    """Accumulated SNR at which the RMSE curve last falls through ``target``.

    Interpolates linearly in log-RMSE between the bracketing grid points.
    Returns nan when the curve never crosses inside the grid.
    """
    x = np.asarray(snr_values_db, float)
    y = np.asarray(rmse_values, float)
    above = np.flatnonzero(y > target)
    if above.size == 0 or above[-1] == y.size - 1:
        return float("nan")
    i = above[-1]
    l0, l1, lt = np.log(y[i]), np.log(y[i + 1]), np.log(target)
    return float(x[i] + (x[i + 1] - x[i]) * (l0 - lt) / (l0 - l1))


def snr_pair_config(cfg: ScenarioConfig | None = None, **overrides) -> ScenarioConfig:
    """Receiver-pair scene for accuracy-versus-SNR studies.

    Line-of-sight only, so the result characterises the estimator rather than
    the room. Noise is off here and set per SNR point by
    :func:`pair_tdoa_errors`.
    """
    cfg = cfg or default_config()
    kw = dict(noise=NoiseMode.OFF, tags=(TagSpec(1, (3.0, 2.5, ROOM_HEIGHT)),),
              geometry=replace(cfg.geometry, reflectors=(), obstacles=()))
    kw.update(overrides)
    return replace(cfg, **kw)


def modulation_config(cfg: ScenarioConfig, modulation) -> ScenarioConfig:
    """Switch the burst modulation; PN polarity uses an unjittered generator."""
    mod = Modulation.parse(modulation)
    tr = cfg.train
    jitter = 0.0 if mod is Modulation.PN_POLARITY else tr.jitter_sigma
    return replace(cfg, train=replace(tr, modulation=mod, jitter_sigma=jitter))

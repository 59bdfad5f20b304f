"""Propagation, link budgets, clock offsets and thermal noise."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .signal import EmissionSchedule, PulseShape, Waveform, render_pulses

C = 299_792_458.0
K_BOLTZMANN = 1.380649e-23
T0 = 290.0
ERP_TO_EIRP_DB = 2.15
THERMAL_FLOOR_DBM_HZ = -174.0


@dataclass(frozen=True)
class RfLinkParams:
    """Link parameters. Defaults are the UHF power-transfer link."""

    erp: float = 2.0
    carrier: float = 868e6
    tx_antenna_gain: float = 0.0
    rx_antenna_gain: float = 1.8
    noise_figure: float = 2.0
    uwb_tx_psd: float = -50.0
    uwb_bandwidth: float = 1.4e9

    def __post_init__(self):
        if self.erp <= 0 or self.carrier <= 0:
            raise ValueError("erp and carrier must be positive")
        if self.noise_figure < 0:
            raise ValueError("noise_figure must be >= 0")
        if self.uwb_bandwidth <= 0:
            raise ValueError("uwb_bandwidth must be positive")


def uhf_link(**overrides) -> RfLinkParams:
    return RfLinkParams(**overrides)


def uwb_link(**overrides) -> RfLinkParams:
    """UWB reader link: 4 GHz centre, 5 dB reader antenna, isotropic tag antenna."""
    kw = dict(carrier=4e9, rx_antenna_gain=5.0, tx_antenna_gain=0.0)
    kw.update(overrides)
    return RfLinkParams(**kw)


@dataclass(frozen=True)
class PlaneReflector:
    point: tuple
    normal: tuple
    coefficient: float

    def __post_init__(self):
        if not 0.0 <= self.coefficient <= 1.0:
            raise ValueError("reflection coefficient must lie in [0, 1]")
        n = np.asarray(self.normal, dtype=float)
        if np.linalg.norm(n) == 0:
            raise ValueError("reflector normal must be non-zero")


@dataclass(frozen=True)
class PointScatterer:
    position: tuple
    coefficient: float

    def __post_init__(self):
        if not 0.0 <= self.coefficient <= 1.0:
            raise ValueError("reflection coefficient must lie in [0, 1]")


@dataclass(frozen=True)
class DiskObstacle:
    center: tuple
    normal: tuple
    radius: float
    attenuation_db: float = 15.0


@dataclass(frozen=True)
class ScreenObstacle:
    """Vertical screen spanning all heights along the floor-plan segment a-b."""

    a: tuple
    b: tuple
    attenuation_db: float = 15.0


@dataclass(frozen=True)
class Geometry:
    anchors: np.ndarray
    ref_tx: np.ndarray
    showers: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    reflectors: tuple = ()
    obstacles: tuple = ()
    anchor_boresights: np.ndarray | None = None
    pattern_exponent: float = 0.0

    def __post_init__(self):
        anchors = np.atleast_2d(np.asarray(self.anchors, dtype=float))
        if anchors.shape[0] < 3 or anchors.shape[1] != 3:
            raise ValueError("need at least 3 anchors given as 3D positions")
        object.__setattr__(self, "anchors", anchors)
        object.__setattr__(self, "ref_tx", np.asarray(self.ref_tx, dtype=float).reshape(3))
        showers = np.asarray(self.showers, dtype=float).reshape(-1, 3)
        object.__setattr__(self, "showers", showers)
        object.__setattr__(self, "reflectors", tuple(self.reflectors))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.anchor_boresights is not None:
            b = np.asarray(self.anchor_boresights, dtype=float).reshape(-1, 3)
            if b.shape[0] != anchors.shape[0]:
                raise ValueError("one boresight per anchor required")
            object.__setattr__(self, "anchor_boresights", b)

    @property
    def n_anchors(self) -> int:
        return self.anchors.shape[0]


@dataclass(frozen=True)
class ClockModel:
    """Per-receiver offset t_R of the local clock relative to RX1 (local = global + offset)."""

    offsets: tuple

    def __post_init__(self):
        off = tuple(float(o) for o in self.offsets)
        if not off or off[0] != 0.0:
            raise ValueError("offset of the reference receiver must be 0")
        object.__setattr__(self, "offsets", off)

    @classmethod
    def synchronized(cls, n: int) -> "ClockModel":
        return cls((0.0,) * n)

    def check(self, t_r: float) -> None:
        if any(abs(o) >= t_r / 4 for o in self.offsets):
            raise ValueError("clock offsets must stay below T_r/4")


def _check_distance(distance):
    d = np.asarray(distance, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return d


def fspl(distance, frequency):
    """Free-space path loss in dB."""
    d = _check_distance(distance)
    if np.any(np.asarray(frequency) <= 0):
        raise ValueError("frequency must be positive")
    lam = C / np.asarray(frequency, dtype=float)
    out = 20 * np.log10(4 * np.pi * d / lam)
    return float(out) if np.ndim(out) == 0 else out


def eirp_dbm(link: RfLinkParams) -> float:
    return 10 * np.log10(link.erp * 1000.0) + ERP_TO_EIRP_DB


def friis_rx_power(link: RfLinkParams, distance):
    """Received power (dBm) at the tag antenna from one ERP-rated source."""
    return eirp_dbm(link) + link.rx_antenna_gain - fspl(distance, link.carrier)


def uwb_tx_power_dbm(link: RfLinkParams) -> float:
    return link.uwb_tx_psd + 10 * np.log10(link.uwb_bandwidth / 1e6)


def noise_floor_dbm(noise_figure: float, bandwidth: float) -> float:
    return THERMAL_FLOOR_DBM_HZ + noise_figure + 10 * np.log10(bandwidth)


def uwb_link_snr(link: RfLinkParams, distance):
    """In-band received SNR (dB): received UWB power over noise in the UWB bandwidth."""
    rx = (uwb_tx_power_dbm(link) + link.tx_antenna_gain + link.rx_antenna_gain
          - fspl(distance, link.carrier))
    return rx - noise_floor_dbm(link.noise_figure, link.uwb_bandwidth)


def pulse_snr_db(link: RfLinkParams, distance, prp: float):
    """Per-pulse matched-filter SNR E_p/N0 (dB) for a PSD-limited pulse train.

    The in-band SNR times B*prp, since each pulse carries the average power
    over one repetition period.
    """
    return uwb_link_snr(link, distance) + 10 * np.log10(link.uwb_bandwidth * prp)


def uwb_pulse_energy(link: RfLinkParams, prp: float) -> float:
    """Radiated energy per pulse (J) when the PSD limit is met on average."""
    return 10 ** ((uwb_tx_power_dbm(link) - 30) / 10) * prp


def noise_psd(noise_figure: float) -> float:
    """One-sided thermal noise PSD N0 = k T0 F in W/Hz."""
    return K_BOLTZMANN * T0 * 10 ** (noise_figure / 10)


def cosine_pattern_gain(direction, boresight, exponent: float) -> float:
    """Relative power gain cos(theta)^exponent, 0 behind the antenna."""
    if exponent == 0 or boresight is None:
        return 1.0
    u = np.asarray(direction, float)
    b = np.asarray(boresight, float)
    cos = float(np.dot(u, b) / (np.linalg.norm(u) * np.linalg.norm(b)))
    return max(cos, 0.0) ** exponent


def _segment_hits_disk(p0, p1, ob: DiskObstacle) -> bool:
    n = np.asarray(ob.normal, float)
    c = np.asarray(ob.center, float)
    d = p1 - p0
    denom = np.dot(n, d)
    if abs(denom) < 1e-15:
        return False
    s = np.dot(n, c - p0) / denom
    if not 0.0 < s < 1.0:
        return False
    hit = p0 + s * d
    return bool(np.linalg.norm(hit - c) <= ob.radius)


def _segment_hits_screen(p0, p1, ob: ScreenObstacle) -> bool:
    a = np.asarray(ob.a, float)[:2]
    b = np.asarray(ob.b, float)[:2]
    p, q = p0[:2], p1[:2]

    def cross(u, v):
        return u[0] * v[1] - u[1] * v[0]

    r, s = q - p, b - a
    den = cross(r, s)
    if abs(den) < 1e-15:
        return False
    t = cross(a - p, s) / den
    u = cross(a - p, r) / den
    return bool(0.0 < t < 1.0 and 0.0 <= u <= 1.0)


def _obstacle_loss_db(points, geometry: Geometry) -> float:
    loss = 0.0
    for p0, p1 in zip(points[:-1], points[1:]):
        for ob in geometry.obstacles:
            hit = (_segment_hits_disk(p0, p1, ob) if isinstance(ob, DiskObstacle)
                   else _segment_hits_screen(p0, p1, ob))
            if hit:
                loss += ob.attenuation_db
    return loss


@dataclass(frozen=True)
class Path:
    length: float
    amplitude: float  # real field-amplitude factor relative to LOS free space at 1 m
    arrival_direction: np.ndarray

    @property
    def delay(self) -> float:
        return self.length / C


def trace_paths(tx, rx, geometry: Geometry) -> list[Path]:
    """LOS path plus one image-source path per reflector."""
    tx = np.asarray(tx, float)
    rx = np.asarray(rx, float)
    los = np.linalg.norm(rx - tx)
    if los <= 0:
        raise ValueError("transmitter and receiver coincide")
    paths = []
    att = 10 ** (-_obstacle_loss_db([tx, rx], geometry) / 20)
    paths.append(Path(los, att, tx - rx))
    for ref in geometry.reflectors:
        if ref.coefficient == 0:
            continue
        if isinstance(ref, PlaneReflector):
            n = np.asarray(ref.normal, float)
            n = n / np.linalg.norm(n)
            p = np.asarray(ref.point, float)
            image = tx - 2 * np.dot(tx - p, n) * n
            length = np.linalg.norm(rx - image)
            d = rx - image
            den = np.dot(n, d)
            if abs(den) < 1e-15:
                continue
            s = np.dot(n, p - image) / den
            bounce = image + s * d
            pts = [tx, bounce, rx]
            arrival = bounce - rx
        else:
            bounce = np.asarray(ref.position, float)
            length = np.linalg.norm(bounce - tx) + np.linalg.norm(rx - bounce)
            pts = [tx, bounce, rx]
            arrival = bounce - rx
        if length <= 0:
            raise ValueError("zero-length reflected path")
        att = ref.coefficient * 10 ** (-_obstacle_loss_db(pts, geometry) / 20)
        paths.append(Path(length, att, arrival))
    return paths


def propagate(emission: EmissionSchedule, shape: PulseShape, tx, rx, geometry: Geometry,
              clock_offset: float, sample_rate: float, window, *,
              pulse_energy: float, link: RfLinkParams, rx_index: int | None = None) -> Waveform:
    """Waveform recorded by a receiver in its local clock for one emitted burst.

    ``pulse_energy`` is the radiated energy per pulse; each path is scaled by
    the Friis gain at the UWB centre frequency and receives the carrier phase
    of its delay.
    """
    t_start, t_end = float(window[0]), float(window[1])
    if t_end <= t_start:
        raise ValueError("window length must be positive")
    n = int(round((t_end - t_start) * sample_rate))
    lam = C / shape.center_frequency
    g_lin = 10 ** ((link.tx_antenna_gain + link.rx_antenna_gain) / 10)
    boresight = None
    if geometry.anchor_boresights is not None and rx_index is not None:
        boresight = geometry.anchor_boresights[rx_index]
    samples = np.zeros(n, dtype=np.complex128)
    fc = shape.center_frequency
    base = np.sqrt(pulse_energy) * emission.polarities
    for path in trace_paths(tx, rx, geometry):
        pat = cosine_pattern_gain(path.arrival_direction, boresight, geometry.pattern_exponent)
        amp = path.amplitude * np.sqrt(g_lin * pat) * lam / (4 * np.pi * path.length)
        if amp == 0:
            continue
        arrive = emission.times + path.delay
        weights = amp * base * np.exp(-2j * np.pi * fc * arrive)
        samples += render_pulses(arrive + clock_offset, weights, shape, sample_rate, t_start, n)
    return Waveform(sample_rate, t_start, samples)


def add_noise(w: Waveform, noise_figure: float, seed, *, psd: float | None = None,
              dtype=np.complex128) -> Waveform:
    """Add circular complex white Gaussian noise of PSD N0 over the sampled band.

    Per-sample variance is N0 * sample_rate. ``psd`` overrides the thermal
    N0 = k T0 F (used for SNR targeting).
    """
    n0 = noise_psd(noise_figure) if psd is None else float(psd)
    rng = np.random.default_rng(seed)
    scale = np.sqrt(n0 * w.sample_rate / 2)
    noise = rng.standard_normal((2, len(w)))
    out = w.samples + scale * (noise[0] + 1j * noise[1])
    return Waveform(w.sample_rate, w.t0, out.astype(dtype, copy=False))

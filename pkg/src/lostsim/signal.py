"""UWB pulse prototypes, emission schedules and complex-baseband synthesis.

All signals live at complex baseband with the carrier removed. A pulse
emitted at instant ``t_k`` carries the carrier phase ``exp(-2j*pi*fc*t_k)``
because the generator's oscillator is gated on at ``t_k``; this is what makes
a jittered train decorrelate away from zero lag, exactly as a passband
receiver would see it.
"""

from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import erfinv

DEFAULT_SAMPLE_RATE = 4e9
DEFAULT_PRP = 6.25e-9
DEFAULT_JITTER_SIGMA = 200e-12
DEFAULT_N_PULSES = 5000
# fraction of pulse energy defining the reported duration
DURATION_ENERGY_FRACTION = 0.99


class Modulation(enum.Enum):
    PERIODIC = "periodic"
    JITTERED = "jittered"
    PN_POLARITY = "pn"

    @classmethod
    def parse(cls, value: "str | Modulation") -> "Modulation":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {"periodic": cls.PERIODIC, "jittered": cls.JITTERED, "jitter": cls.JITTERED,
                   "pn": cls.PN_POLARITY, "pnpolarity": cls.PN_POLARITY}
        if key not in aliases:
            raise ValueError(f"unknown modulation {value!r}")
        return aliases[key]


@dataclass(frozen=True)
class PulseShape:
    """Gaussian-envelope UWB pulse described at complex baseband.

    ``bandwidth`` is the two-sided -10 dB width of the energy spectrum and
    ``duration`` the interval holding 99% of the pulse energy.
    """

    center_frequency: float
    bandwidth: float
    duration: float
    energy: float = 1.0

    def __post_init__(self):
        if self.bandwidth <= 0 or self.duration <= 0:
            raise ValueError("pulse bandwidth and duration must be positive")
        if self.center_frequency <= self.bandwidth / 2:
            raise ValueError("center_frequency must exceed bandwidth/2")

    @property
    def sigma(self) -> float:
        """Time-domain std of the amplitude envelope exp(-t^2 / (2 sigma^2))."""
        return float(np.sqrt(np.log(10.0)) / (np.pi * self.bandwidth))

    def envelope(self, t):
        """Unit-energy continuous envelope evaluated at times ``t`` (s)."""
        s = self.sigma
        amp = (s * np.sqrt(np.pi)) ** -0.5
        return amp * np.exp(-np.square(t) / (2 * s * s))

    def support(self, n_sigma: float = 9.0) -> float:
        """Half-width beyond which the envelope is numerically zero."""
        return n_sigma * self.sigma


@dataclass(frozen=True)
class Waveform:
    """Uniformly sampled complex-baseband segment in a receiver's local clock."""

    sample_rate: float
    t0: float
    samples: np.ndarray

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        arr = np.asarray(self.samples)
        if not np.iscomplexobj(arr):
            arr = arr.astype(np.complex128)
        if arr.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if arr.size and not np.all(np.isfinite(arr)):
            raise ValueError("waveform contains non-finite samples")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def t_end(self) -> float:
        return self.t0 + self.duration

    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) / self.sample_rate

    def energy(self) -> float:
        """Energy in J when samples are in sqrt(W)."""
        return float(np.sum(np.abs(self.samples.astype(np.complex128)) ** 2) / self.sample_rate)

    def segment(self, t_start: float, duration: float) -> "Waveform":
        """Sub-window starting at local time ``t_start`` (snapped to the grid)."""
        i0 = int(round((t_start - self.t0) * self.sample_rate))
        n = int(round(duration * self.sample_rate))
        i0 = max(i0, 0)
        i1 = min(i0 + n, self.samples.size)
        return Waveform(self.sample_rate, self.t0 + i0 / self.sample_rate, self.samples[i0:i1])

    def __add__(self, other: "Waveform") -> "Waveform":
        if (other.sample_rate != self.sample_rate or other.t0 != self.t0
                or len(other) != len(self)):
            raise ValueError("waveforms must share sample rate, start time and length")
        return Waveform(self.sample_rate, self.t0, self.samples + other.samples)


@dataclass(frozen=True)
class PulseTrainSpec:
    shape: PulseShape
    prp: float = DEFAULT_PRP
    jitter_sigma: float = DEFAULT_JITTER_SIGMA
    n_pulses: int = DEFAULT_N_PULSES
    modulation: Modulation = Modulation.JITTERED
    energy_per_pulse: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "modulation", Modulation.parse(self.modulation))
        if self.n_pulses < 1:
            raise ValueError("n_pulses must be >= 1")
        if self.prp <= self.shape.duration:
            raise ValueError("prp must exceed the pulse duration")
        if self.jitter_sigma < 0 or self.jitter_sigma >= self.prp / 4:
            raise ValueError("jitter_sigma must lie in [0, prp/4)")
        if self.prp - 3 * self.effective_jitter <= self.shape.duration:
            raise ValueError("3-sigma jitter would let consecutive pulses overlap")
        if self.energy_per_pulse <= 0:
            raise ValueError("energy_per_pulse must be positive")

    @property
    def effective_jitter(self) -> float:
        return 0.0 if self.modulation is Modulation.PERIODIC else self.jitter_sigma

    @property
    def burst_duration(self) -> float:
        """Nominal on-air length of the burst, n_pulses * prp."""
        return self.n_pulses * self.prp


@dataclass(frozen=True)
class EmissionSchedule:
    times: np.ndarray
    polarities: np.ndarray = field(default=None)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        p = (np.ones(t.size, dtype=np.int8) if self.polarities is None
             else np.asarray(self.polarities, dtype=np.int8).reshape(-1))
        if p.size != t.size:
            raise ValueError("times and polarities must have equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("emission times must be strictly increasing")
        if p.size and not np.all(np.abs(p) == 1):
            raise ValueError("polarities must be +1 or -1")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "polarities", p)

    def __len__(self) -> int:
        return self.times.size

    def shifted(self, dt: float) -> "EmissionSchedule":
        return EmissionSchedule(self.times + dt, self.polarities)


def make_pulse_shape(center_frequency: float, bandwidth: float,
                     sample_rate: float = DEFAULT_SAMPLE_RATE) -> tuple[PulseShape, Waveform]:
    """Build the Gaussian prototype and a unit-energy sampled copy centred on t=0."""
    if center_frequency <= 0 or bandwidth <= 0 or sample_rate <= 0:
        raise ValueError("center_frequency, bandwidth and sample_rate must be positive")
    if center_frequency <= bandwidth / 2:
        raise ValueError("center_frequency must exceed bandwidth/2")
    sigma = np.sqrt(np.log(10.0)) / (np.pi * bandwidth)
    # energy density is Gaussian with std sigma/sqrt(2)
    z = np.sqrt(2.0) * erfinv(DURATION_ENERGY_FRACTION)
    duration = 2 * z * sigma / np.sqrt(2.0)
    shape = PulseShape(center_frequency, bandwidth, float(duration))
    half = int(np.ceil(shape.support() * sample_rate))
    t = np.arange(-half, half + 1) / sample_rate
    proto = shape.envelope(t).astype(np.complex128)
    proto /= np.sqrt(np.sum(np.abs(proto) ** 2) / sample_rate)
    return shape, Waveform(sample_rate, float(t[0]), proto)


def _draw_truncated_normal(rng: np.random.Generator, n: int, limit: float = 3.0) -> np.ndarray:
    x = rng.standard_normal(n)
    bad = np.abs(x) > limit
    while np.any(bad):
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > limit
    return x


def draw_emission_schedule(spec: PulseTrainSpec, seed) -> EmissionSchedule:
    """Emission instants (first pulse at t=0) and polarities of one burst."""
    rng = np.random.default_rng(seed)
    n = spec.n_pulses
    steps = np.full(n - 1, spec.prp)
    if spec.effective_jitter > 0 and n > 1:
        steps = steps + spec.effective_jitter * _draw_truncated_normal(rng, n - 1)
    times = np.concatenate(([0.0], np.cumsum(steps)))
    if spec.modulation is Modulation.PN_POLARITY:
        pol = rng.choice(np.array([-1, 1], dtype=np.int8), size=n)
    else:
        pol = np.ones(n, dtype=np.int8)
    return EmissionSchedule(times, pol)


@lru_cache(maxsize=32)
def _kernel_spectrum(sigma: float, sample_rate: float) -> tuple[int, np.ndarray, np.ndarray]:
    """Spectrum of the sampled unit-energy envelope on a short odd-length grid."""
    half = int(np.ceil(9.0 * sigma * sample_rate)) + 2
    n = 2 * half + 1
    t = (np.arange(n) - half) / sample_rate
    amp = (sigma * np.sqrt(np.pi)) ** -0.5
    kern = amp * np.exp(-t ** 2 / (2 * sigma ** 2))
    freqs = np.fft.fftfreq(n)
    return half, np.fft.fft(np.fft.ifftshift(kern)), freqs


def render_pulses(times, weights, shape: PulseShape, sample_rate: float,
                  t_start: float, n_samples: int) -> np.ndarray:
    """Superpose complex-weighted pulses centred at ``times`` on a sample grid.

    Each pulse is placed at the nearest sample and the residual fraction is
    applied as a linear phase ramp on the prototype spectrum, which is an
    exact band-limited delay for the (effectively band-limited) prototype.
    The returned samples have energy ``|w|^2`` per isolated pulse.
    """
    out = np.zeros(n_samples, dtype=np.complex128)
    times = np.asarray(times, dtype=float)
    weights = np.asarray(weights, dtype=np.complex128)
    if times.size == 0 or n_samples == 0:
        return out
    half, spec, freqs = _kernel_spectrum(shape.sigma, float(sample_rate))
    pos = (times - t_start) * sample_rate
    centre = np.rint(pos).astype(np.int64)
    keep = (centre + half >= 0) & (centre - half < n_samples)
    if not np.any(keep):
        return out
    centre, frac, w = centre[keep], (pos - np.rint(pos))[keep], weights[keep]
    # delay by frac samples: multiply by exp(-2j*pi*f*frac)
    ramp = np.exp(-2j * np.pi * np.outer(frac, freqs))
    kernels = np.fft.fftshift(np.fft.ifft(ramp * spec, axis=1), axes=1) * w[:, None]
    idx = centre[:, None] + np.arange(-half, half + 1)[None, :]
    valid = (idx >= 0) & (idx < n_samples)
    flat_idx, flat_val = idx[valid], kernels[valid]
    out.real = np.bincount(flat_idx, weights=flat_val.real, minlength=n_samples)
    out.imag = np.bincount(flat_idx, weights=flat_val.imag, minlength=n_samples)
    return out


def _window_samples(window, sample_rate: float) -> tuple[float, int]:
    t_start, t_end = float(window[0]), float(window[1])
    n = int(round((t_end - t_start) * sample_rate))
    return t_start, max(n, 0)


def synthesize(schedule: EmissionSchedule, shape: PulseShape, sample_rate: float,
               window, energy_per_pulse: float = 1.0) -> Waveform:
    """Render a burst into ``window = (t_start, t_end)`` of the emitter's clock."""
    if sample_rate < 2 * shape.bandwidth:
        raise ValueError("sample_rate must be at least twice the pulse bandwidth")
    t_start, n = _window_samples(window, sample_rate)
    if n / sample_rate < shape.duration:
        warnings.warn("synthesis window shorter than one pulse; returning empty waveform",
                      RuntimeWarning, stacklevel=2)
        return Waveform(sample_rate, t_start, np.zeros(0, dtype=np.complex128))
    weights = (np.sqrt(energy_per_pulse) * schedule.polarities
               * np.exp(-2j * np.pi * shape.center_frequency * schedule.times))
    samples = render_pulses(schedule.times, weights, shape, sample_rate, t_start, n)
    return Waveform(sample_rate, t_start, samples)

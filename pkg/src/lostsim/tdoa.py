"""Double cross-correlation TDOA estimation.

A reference transmitter at a known position fires in the first half of each
receiver's recording, the tag in the second half. Correlating the two halves
across a receiver pair gives two peak delays that both contain the unknown
receiver clock offset; their difference does not.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
import scipy.fft as sfft

from .signal import Waveform

ROBUST_SCALE = 1.4826


class DegeneratePeakError(ValueError):
    pass


class DetectionError(RuntimeError):
    """Correlation peak below the detection threshold."""

    def __init__(self, message, peak_quality=None, measurement=None):
        super().__init__(message)
        self.peak_quality = peak_quality
        self.measurement = measurement


@dataclass(frozen=True)
class RecordingWindow:
    """Receiver acquisition timing.

    ``t_r`` is the whole recording, split into two halves; ``t_w`` is the
    integration window applied to RX1's halves, starting ``offset`` seconds
    into each half.
    """

    t_r: float = 100e-6
    t_w: float = 40e-6
    offset: float = 0.0

    def __post_init__(self):
        if self.t_r <= 0 or self.t_w <= 0 or self.offset < 0:
            raise ValueError("window durations must be positive")
        if self.offset + self.t_w > self.t_r / 2 + 1e-15:
            raise ValueError("integration window must fit in half the recording")

    @property
    def half(self) -> float:
        return self.t_r / 2


@dataclass(frozen=True)
class SyncGeometry:
    tp11: float
    tp12: float

    def __post_init__(self):
        if self.tp11 < 0 or self.tp12 < 0:
            raise ValueError("propagation delays must be non-negative")


@dataclass(frozen=True)
class CorrelationFunction:
    """C(t) = sum_n a[n] conj(b[n+k]) / fs on lags t = (b.t0 - a.t0) + k/fs.

    ``spectrum`` is the zero-padded cross-spectrum conj(A)B, kept so the
    peak can be refined by exact band-limited interpolation.
    """

    lags: np.ndarray
    values: np.ndarray
    sample_rate: float
    spectrum: np.ndarray | None = None
    k_min: int = 0
    lag0: float = 0.0
    n_a: int | None = None
    n_b: int | None = None

    @cached_property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    def evaluate(self, k: np.ndarray) -> np.ndarray:
        """Band-limited interpolation at fractional lag indices (in samples)."""
        if self.spectrum is None:
            raise ValueError("correlation carries no spectrum")
        k = np.atleast_1d(np.asarray(k, dtype=float))
        L = self.spectrum.size
        f = np.fft.fftfreq(L) * L
        out = np.empty(k.size, dtype=np.complex128)
        for i, kk in enumerate(k):
            out[i] = np.conj(np.dot(self.spectrum, np.exp(2j * np.pi * f * kk / L)) / L)
        return out / self.sample_rate


@dataclass(frozen=True)
class Peak:
    delay: float
    value: float
    curvature: float
    index: int


@dataclass(frozen=True)
class TdoaMeasurement:
    rx_pair: tuple
    tdoa: float
    peak_quality: float
    ambiguity_ratio: float
    delta_t: float = float("nan")
    t1: float = float("nan")
    t2: float = float("nan")
    ref_peak_quality: float = float("nan")


def matched_filter_weights(sigma: float, n_fft: int, sample_rate: float) -> np.ndarray:
    """|P(f)|^2 of a Gaussian pulse with envelope std ``sigma``, peak 1, on FFT bins.

    Weighting a cross-spectrum by this is equivalent to passing both inputs
    through a receive filter matched to the pulse before correlating.
    """
    f = sfft.fftfreq(n_fft, 1.0 / sample_rate)
    return np.exp(-np.square(2 * np.pi * sigma * f))


def correlation_from_spectrum(X: np.ndarray, n_a: int, n_b: int, sample_rate: float,
                              lag0: float = 0.0, keep_spectrum: bool = True,
                              weights: np.ndarray | None = None) -> CorrelationFunction:
    """Correlation on the symmetric lag grid from a cross-spectrum conj(A)B.

    ``X`` must have length >= n_a + n_b - 1 so the circular correlation holds
    the full linear one; lags outside [-(n_a-1), n_b-1] are exactly zero.
    Optional real ``weights`` (e.g. :func:`matched_filter_weights`) shape the
    spectrum first.
    """
    if weights is not None:
        X = X * weights
    L = X.size
    n = max(n_a, n_b)
    raw = np.conj(sfft.ifft(X))
    # raw[m] = sum_n a[n] conj(b[n+m]) for m mod L
    ks = np.arange(-(n - 1), n)
    values = np.zeros(ks.size, dtype=np.complex128)
    live = (ks > -n_a) & (ks < n_b)
    values[live] = raw[ks[live] % L] / sample_rate
    return CorrelationFunction(lag0 + ks / sample_rate, values, sample_rate,
                               X if keep_spectrum else None, -(n - 1), lag0, n_a, n_b)


def correlation_length(n_a: int, n_b: int) -> int:
    return sfft.next_fast_len(n_a + n_b - 1)


def cross_correlate(a: Waveform, b: Waveform, *, keep_spectrum: bool = True,
                    prefilter_sigma: float | None = None) -> CorrelationFunction:
    """Full linear cross-correlation via a zero-padded FFT.

    ``prefilter_sigma`` applies a receive filter matched to a Gaussian pulse
    of that envelope std to both inputs.
    """
    if a.sample_rate != b.sample_rate:
        raise ValueError("sample rates differ")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty waveforms")
    L = correlation_length(len(a), len(b))
    A = sfft.fft(np.asarray(a.samples, dtype=np.complex128), L)
    B = sfft.fft(np.asarray(b.samples, dtype=np.complex128), L)
    w = None if prefilter_sigma is None else matched_filter_weights(prefilter_sigma, L,
                                                                     a.sample_rate)
    return correlation_from_spectrum(np.conj(A) * B, len(a), len(b), a.sample_rate,
                                     b.t0 - a.t0, keep_spectrum, w)


def direct_correlate(a: Waveform, b: Waveform) -> CorrelationFunction:
    """O(N^2) reference implementation of :func:`cross_correlate`."""
    if a.sample_rate != b.sample_rate:
        raise ValueError("sample rates differ")
    n = max(len(a), len(b))
    xa = np.zeros(n, complex)
    xb = np.zeros(n, complex)
    xa[:len(a)] = a.samples
    xb[:len(b)] = b.samples
    ks = np.arange(-(n - 1), n)
    vals = np.empty(ks.size, complex)
    for i, k in enumerate(ks):
        if k >= 0:
            vals[i] = np.sum(xa[:n - k] * np.conj(xb[k:]))
        else:
            vals[i] = np.sum(xa[-k:] * np.conj(xb[:n + k]))
    return CorrelationFunction(b.t0 - a.t0 + ks / a.sample_rate, vals / a.sample_rate,
                               a.sample_rate, None, -(n - 1), b.t0 - a.t0, len(a), len(b))


@lru_cache(maxsize=8)
def _fine_phasors(L: int, upsample: int) -> np.ndarray:
    f = np.fft.fftfreq(L) * L
    m = np.arange(-upsample + 1, upsample)
    return np.exp(2j * np.pi * np.outer(m, f) / (upsample * L))


def _parabolic(ym, y0, yp):
    den = ym - 2 * y0 + yp
    if den >= 0:
        return 0.0, y0, den
    delta = 0.5 * (ym - yp) / den
    return float(np.clip(delta, -0.5, 0.5)), y0 - 0.25 * (ym - yp) * delta, den


def _coarse_index(mag: np.ndarray, lags: np.ndarray) -> int:
    peak = mag.max()
    ties = np.flatnonzero(mag == peak)
    if ties.size == 1:
        return int(ties[0])
    order = np.lexsort((lags[ties], np.abs(lags[ties])))
    return int(ties[order[0]])


def find_peak(c: CorrelationFunction, upsample: int = 1) -> Peak:
    """Global magnitude maximum refined by 3-point parabolic interpolation.

    With ``upsample > 1`` the magnitude is first evaluated by band-limited
    interpolation on a grid ``upsample`` times finer around the discrete
    maximum, and the parabola is fitted there.
    """
    mag = c.magnitude
    if mag.size == 0:
        raise DegeneratePeakError("empty correlation")
    if np.all(mag == mag[0]):
        raise DegeneratePeakError("flat correlation has no peak")
    i = _coarse_index(mag, c.lags)
    dt = 1.0 / c.sample_rate
    if i == 0 or i == mag.size - 1:
        return Peak(float(c.lags[i]), float(mag[i]), 0.0, i)
    if upsample > 1 and c.spectrum is not None:
        fine = _fine_magnitudes(c, i, upsample)
        fine = np.concatenate(([mag[i - 1]], fine, [mag[i + 1]]))
        j = int(np.argmax(fine))
        j = min(max(j, 1), fine.size - 2)
        delta, val, den = _parabolic(fine[j - 1], fine[j], fine[j + 1])
        step = dt / upsample
        centre = c.lags[i] + (j - upsample) * step
        return Peak(float(centre + delta * step), float(val), float(den / step ** 2), i)
    delta, val, den = _parabolic(mag[i - 1], mag[i], mag[i + 1])
    return Peak(float(c.lags[i] + delta * dt), float(val), float(den / dt ** 2), i)


def _fine_magnitudes(c: CorrelationFunction, i: int, upsample: int) -> np.ndarray:
    X = c.spectrum
    L = X.size
    k = c.k_min + i
    f = np.fft.fftfreq(L) * L
    shift = np.exp(2j * np.pi * ((f * k) % L) / L)
    vals = _fine_phasors(L, upsample) @ (X * shift)
    return np.abs(vals) / (L * c.sample_rate)


def first_peak(c: CorrelationFunction, fraction: float = 0.5, search: float = 50e-9,
               upsample: int = 1) -> Peak:
    """Earliest local maximum within ``search`` before the strongest peak
    whose magnitude reaches ``fraction`` of it."""
    strongest = find_peak(c, upsample)
    mag = c.magnitude
    i = strongest.index
    lo = max(1, i - int(round(search * c.sample_rate)))
    thr = fraction * mag[i]
    for j in range(lo, i):
        if mag[j] >= thr and mag[j] >= mag[j - 1] and mag[j] >= mag[j + 1]:
            delta, val, den = _parabolic(mag[j - 1], mag[j], mag[j + 1])
            dt = 1.0 / c.sample_rate
            return Peak(float(c.lags[j] + delta * dt), float(val), float(den / dt ** 2), j)
    return strongest


def _overlap_counts(c: CorrelationFunction) -> np.ndarray:
    """Number of sample products summed at each lag (flat if lengths unknown)."""
    if c.n_a is None or c.n_b is None:
        return np.ones(c.values.size)
    k = c.k_min + np.arange(c.values.size)
    counts = np.minimum.reduce([np.full(k.size, min(c.n_a, c.n_b)), k + c.n_a, c.n_b - k])
    return np.maximum(counts, 0).astype(float)


def peak_quality(c: CorrelationFunction, peak_index: int, guard: float = 50e-9) -> float:
    """Peak magnitude over a robust floor estimate outside +-guard, in dB."""
    mag = c.magnitude
    g = int(round(guard * c.sample_rate))
    peak = mag[peak_index]
    if peak == 0:
        return 0.0
    # noise in C scales with the square root of the number of overlapping
    # samples; normalise to full overlap and skip the thin tails
    overlap = _overlap_counts(c)
    full = overlap.max()
    mask = overlap >= full / 2
    mask[max(0, peak_index - g):peak_index + g + 1] = False
    if not np.any(mask):
        return 0.0
    floor = ROBUST_SCALE * np.median(mag[mask] * np.sqrt(full / overlap[mask]))
    floor = max(floor, peak * 1e-12)
    return float(20 * np.log10(peak / floor))


def ambiguity_ratio(c: CorrelationFunction, exclusion: float = 2e-9) -> float:
    """Largest magnitude outside +-exclusion of the main peak over the main peak."""
    mag = c.magnitude
    i = _coarse_index(mag, c.lags)
    peak = mag[i]
    if peak == 0:
        return 0.0
    outside = np.abs(c.lags - c.lags[i]) > exclusion
    if not np.any(outside):
        return 0.0
    return float(mag[outside].max() / peak)


def tdoa_from_correlations(c1: CorrelationFunction, c2: CorrelationFunction,
                           sync: SyncGeometry, *, rx_pair=(0, 1),
                           detection_threshold_db: float = 10.0, upsample: int = 4,
                           peak_mode: str = "strongest") -> TdoaMeasurement:
    """Peak delays of C1 (reference burst) and C2 (tag burst) to a TDOA.

    Raises DetectionError, carrying the measurement, when either peak is
    below the detection threshold.
    """
    if peak_mode == "first":
        pick = first_peak
    elif peak_mode == "strongest":
        pick = find_peak
    else:
        raise ValueError(f"unknown peak_mode {peak_mode!r}")
    p1 = pick(c1, upsample=upsample)
    p2 = pick(c2, upsample=upsample)
    q1 = peak_quality(c1, p1.index)
    q2 = peak_quality(c2, p2.index)
    delta_t = p2.delay - p1.delay
    tdoa = delta_t + (sync.tp12 - sync.tp11)
    meas = TdoaMeasurement(tuple(rx_pair), float(tdoa), q2, ambiguity_ratio(c2),
                           float(delta_t), p1.delay, p2.delay, q1)
    if min(q1, q2) < detection_threshold_db:
        raise DetectionError(
            f"peak quality {min(q1, q2):.1f} dB below {detection_threshold_db} dB",
            min(q1, q2), meas)
    return meas


def double_correlation_tdoa(r11: Waveform, r12: Waveform, r21: Waveform, r22: Waveform,
                            sync: SyncGeometry, window: RecordingWindow, *,
                            prefilter_sigma: float | None = None, **kwargs) -> TdoaMeasurement:
    """TDOA t_p22 - t_p21 of the tag between RX1 and RX2.

    ``r11``/``r21`` are the first half-windows of RX1/RX2 (reference burst),
    ``r12``/``r22`` the second halves (tag burst). RX1's halves are cut to
    the integration window; RX2's are used whole so any clock offset that
    keeps the burst inside the half-window is absorbed. ``prefilter_sigma``
    enables the matched receive filter; other keyword arguments go to
    :func:`tdoa_from_correlations`.
    """
    a1 = r11.segment(r11.t0 + window.offset, window.t_w)
    a2 = r12.segment(r12.t0 + window.offset, window.t_w)
    c1 = cross_correlate(a1, r21, prefilter_sigma=prefilter_sigma)
    c2 = cross_correlate(a2, r22, prefilter_sigma=prefilter_sigma)
    return tdoa_from_correlations(c1, c2, sync, **kwargs)


def accumulated_snr_db(pulse_snr_db: float, n_pulses: int) -> float:
    return pulse_snr_db + 10 * np.log10(n_pulses)

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from modules.errors import DegenerateInputError, ParameterError
from scipy import fft as sp_fft
from scipy import signal as sp_signal

logger = logging.getLogger()

EPS_SCALE = 1e-6


def next_pow2(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


@dataclass
class Spectrum:
    bins: np.ndarray
    fs: float
    n: int
    "Transform length (power of two, >= source length)"

    length: int
    "Length of the time-domain signal the spectrum was taken from"

    @classmethod
    def forward(cls, signal: np.ndarray, fs: float, n: int | None = None) -> Spectrum:
        signal = np.asarray(signal, dtype=np.float64)
        length = signal.shape[-1]
        n = next_pow2(length) if n is None else int(n)
        if n < length:
            raise ParameterError(f"transform length {n} shorter than signal length {length}")
        return cls(bins=sp_fft.fft(signal, n=n, axis=-1), fs=fs, n=n, length=length)

    def inverse(self) -> np.ndarray:
        return sp_fft.ifft(self.bins, n=self.n, axis=-1).real[..., : self.length]

    @property
    def frequencies(self) -> np.ndarray:
        return sp_fft.fftfreq(self.n, d=1.0 / self.fs)

    def band_mask(self, f_lo: float, f_hi: float) -> np.ndarray:
        """Both the positive bins and their negative-frequency mirror inside [f_lo, f_hi]."""
        f = np.abs(self.frequencies)
        return (f >= f_lo) & (f <= f_hi)

    def energy(self) -> np.ndarray:
        """Parseval: equals the time-domain energy of the (zero padded) signal."""
        return np.sum(np.abs(self.bins) ** 2, axis=-1) / self.n


def analytic_envelope(signal: np.ndarray) -> np.ndarray:
    """Magnitude of the analytic signal along the last axis; rows of a 2-D input are independent frames."""
    signal = np.asarray(signal, dtype=np.float64)
    if signal.ndim == 0 or signal.shape[-1] < 4:
        raise ParameterError("analytic_envelope needs at least 4 samples")

    length = signal.shape[-1]
    analytic = sp_signal.hilbert(signal, N=next_pow2(length), axis=-1)[..., :length]
    return np.abs(analytic)


def instantaneous_frequency(signal: np.ndarray, fs: float) -> np.ndarray:
    """Derivative of the unwrapped analytic phase (central differences), in Hz."""
    signal = np.asarray(signal, dtype=np.float64)
    length = signal.shape[-1]
    analytic = sp_signal.hilbert(signal, N=next_pow2(length))[:length]
    phase = np.unwrap(np.angle(analytic))
    return np.gradient(phase) * fs / (2.0 * np.pi)


@dataclass
class MatchedFilterResult:
    correlation: np.ndarray
    "Normalized cross-correlation, one value per template offset"

    amplitude: np.ndarray
    "Least-squares gain of a template copy at each offset (raw correlation over template energy)"

    peaks: np.ndarray
    "Offsets of accepted peaks, ascending"

    def peak_values(self) -> np.ndarray:
        return self.correlation[self.peaks]


def _normalize(raw: np.ndarray, signal: np.ndarray, template: np.ndarray) -> np.ndarray:
    m = template.shape[-1]
    # Summed per window (not via cumsum) so silent stretches stay exactly zero
    window_energy = np.lib.stride_tricks.sliding_window_view(signal**2, m).sum(axis=-1)
    template_norm = np.linalg.norm(template)

    floor = 1e-12 * max(float(window_energy.max(initial=0.0)), 1e-300)
    denom = template_norm * np.sqrt(window_energy)
    out = np.zeros_like(raw)
    valid = window_energy > floor
    out[valid] = raw[valid] / denom[valid]
    return np.clip(out, -1.0, 1.0)


def normalized_correlation(signal: np.ndarray, template: np.ndarray) -> np.ndarray:
    """Cross-correlation divided by the template norm and the norm of the signal window under it.

    A perfect (scaled) copy of the template scores 1.0 regardless of its amplitude; windows with no
    energy score 0.
    """
    signal = np.asarray(signal, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    return _normalize(sp_signal.correlate(signal, template, mode="valid"), signal, template)


def matched_filter(
    signal: np.ndarray,
    template: np.ndarray,
    threshold_ratio: float = 0.5,
    min_separation: int = 1,
) -> MatchedFilterResult:
    signal = np.asarray(signal, dtype=np.float64)
    template = np.asarray(template, dtype=np.float64)
    if template.size == 0 or template.shape[-1] > signal.shape[-1]:
        raise ParameterError(
            f"template length {template.shape[-1]} must be nonzero and <= signal length {signal.shape[-1]}"
        )
    if not np.any(template):
        raise ParameterError("template is all zeros")

    raw = sp_signal.correlate(signal, template, mode="valid")
    correlation = _normalize(raw, signal, template)
    amplitude = raw / np.dot(template, template)
    top = float(correlation.max())
    if top <= 0.0:
        return MatchedFilterResult(correlation=correlation, amplitude=amplitude, peaks=np.array([], dtype=np.int64))

    # Pad so offsets 0 and len-1 can be peaks too
    floor = correlation.min() - 1.0
    padded = np.concatenate(([floor], correlation, [floor]))
    peaks, _ = sp_signal.find_peaks(padded, height=threshold_ratio * top, distance=max(int(min_separation), 1))
    return MatchedFilterResult(correlation=correlation, amplitude=amplitude, peaks=(peaks - 1).astype(np.int64))


def transfer_impulse_response(
    direct: np.ndarray,
    reflected: np.ndarray,
    band: tuple[float, float],
    fs: float,
    eps: float | np.ndarray | None = None,
    eps_scale: float = EPS_SCALE,
) -> np.ndarray:
    """Band-limited regularized deconvolution h = IFFT(Y_ref conj(Y_dir) / (|Y_dir|^2 + eps)).

    Works row-wise on 2-D input. The result is scaled by the band's own peak gain so that an
    identity system (reflected == direct) has a unit peak at lag 0.
    """
    direct = np.asarray(direct, dtype=np.float64)
    reflected = np.asarray(reflected, dtype=np.float64)
    if direct.shape != reflected.shape:
        raise ParameterError(f"direct {direct.shape} and reflected {reflected.shape} must have equal shapes")

    f_lo, f_hi = band
    if not 0 < f_lo < f_hi <= fs / 2:
        raise ParameterError(f"band ({f_lo}, {f_hi}) must lie inside (0, fs/2]")

    y_dir = Spectrum.forward(direct, fs)
    y_ref = Spectrum.forward(reflected, fs, n=y_dir.n)

    power = np.abs(y_dir.bins) ** 2
    peak_power = power.max(axis=-1, keepdims=True)
    if np.any(peak_power == 0.0):
        rows = np.flatnonzero(peak_power.reshape(-1) == 0.0)
        raise DegenerateInputError(
            "direct wave is all zeros", cycle=int(rows[0]) if direct.ndim > 1 else None
        )
    if eps is None:
        eps = eps_scale * peak_power

    mask = y_dir.band_mask(f_lo, f_hi)
    h_bins = np.where(mask, y_ref.bins * np.conj(y_dir.bins) / (power + eps), 0.0)
    band_gain = mask.sum() / y_dir.n

    h = Spectrum(bins=h_bins, fs=fs, n=y_dir.n, length=y_dir.length).inverse()
    return h / band_gain

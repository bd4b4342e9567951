"""Internal effect implementations behind the render backend.

Every effect consumes a normalized parameter vector (values in [0, 1],
aligned with its descriptor's parameter list) and maps it to physical
units through the descriptor's :class:`ParamMap`.  Neutral points are
calibrated so identity checks are possible: EQ/gain at 0.5 sit at 0 dB,
delay/reverb at mix 0 pass the signal through untouched, and a 1:1
compressor with no makeup is exact unity.

Processing is block-based and pure: each call sees the whole buffer and
holds no state between calls, so instances are safe to use from any one
worker at a time.  Internals run in float64 and return float32.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.signal import fftconvolve, lfilter

from mixgraph.core import (
    FX_COMPRESSOR,
    FX_DELAY,
    FX_EQ,
    FX_GAIN,
    FX_MIX,
    FX_REVERB,
    FX_SPLITTER,
)
from mixgraph.dsp.buffers import AudioBuffer
from mixgraph.registry import PluginDescriptor

__all__ = [
    "Effect",
    "Eq3",
    "Splitter3",
    "Delay",
    "SchroederReverb",
    "Compressor",
    "GainFx",
    "PassThrough",
    "SidechainLengthMismatchError",
    "make_effect",
    "SPLITTER_TAPS",
]

SPLITTER_TAPS = 1023

# Schroeder's textbook constants: four parallel feedback combs into two
# series allpasses.  Comb gains follow from the target RT60 per comb delay.
COMB_DELAYS_MS = (29.7, 37.1, 41.1, 43.7)
ALLPASS_DELAYS_MS = (5.0, 1.7)
ALLPASS_GAIN = 0.7

_TINY = np.finfo(np.float64).tiny


class SidechainLengthMismatchError(ValueError):
    """Sidechain buffer shorter than the audio it should steer."""


class Effect:
    """Base: construct from a descriptor plus resolved normalized params."""

    def __init__(self, descriptor: PluginDescriptor, params: list[float]):
        self.descriptor = descriptor
        self.norm_params = list(params)

    def physical(self, name: str) -> float:
        i = self.descriptor.param_index(name)
        return self.descriptor.params[i].map.to_physical(self.norm_params[i])

    def process(self, buf: AudioBuffer, sidechain: AudioBuffer | None = None):
        raise NotImplementedError


def _db_to_gain(db: float) -> float:
    return 10.0 ** (db / 20.0)


# ---------------------------------------------------------------------------
# EQ: low shelf / peaking / high shelf biquads (RBJ cookbook)
# ---------------------------------------------------------------------------


def _shelf_low(f0: float, gain_db: float, fs: float) -> tuple[np.ndarray, np.ndarray]:
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * np.pi * f0 / fs
    cw, sw = np.cos(w0), np.sin(w0)
    alpha = sw / 2.0 * np.sqrt(2.0)  # shelf slope S = 1
    sq = 2.0 * np.sqrt(a) * alpha
    b = np.array(
        [a * ((a + 1) - (a - 1) * cw + sq), 2 * a * ((a - 1) - (a + 1) * cw), a * ((a + 1) - (a - 1) * cw - sq)]
    )
    aa = np.array([(a + 1) + (a - 1) * cw + sq, -2 * ((a - 1) + (a + 1) * cw), (a + 1) + (a - 1) * cw - sq])
    return b / aa[0], aa / aa[0]


def _shelf_high(f0: float, gain_db: float, fs: float) -> tuple[np.ndarray, np.ndarray]:
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * np.pi * f0 / fs
    cw, sw = np.cos(w0), np.sin(w0)
    alpha = sw / 2.0 * np.sqrt(2.0)
    sq = 2.0 * np.sqrt(a) * alpha
    b = np.array(
        [a * ((a + 1) + (a - 1) * cw + sq), -2 * a * ((a - 1) + (a + 1) * cw), a * ((a + 1) + (a - 1) * cw - sq)]
    )
    aa = np.array([(a + 1) - (a - 1) * cw + sq, 2 * ((a - 1) - (a + 1) * cw), (a + 1) - (a - 1) * cw - sq])
    return b / aa[0], aa / aa[0]


def _peaking(f0: float, gain_db: float, fs: float, q: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * np.pi * f0 / fs
    cw, sw = np.cos(w0), np.sin(w0)
    alpha = sw / (2.0 * q)
    b = np.array([1 + alpha * a, -2 * cw, 1 - alpha * a])
    aa = np.array([1 + alpha / a, -2 * cw, 1 - alpha / a])
    return b / aa[0], aa / aa[0]


class Eq3(Effect):
    """Three-band EQ: low shelf, mid peak, high shelf.

    Band gains map 0.5 -> 0 dB, so the all-0.5 setting is an exact identity
    (each biquad collapses to [1, 0, 0]).
    """

    def process(self, buf: AudioBuffer, sidechain: AudioBuffer | None = None) -> AudioBuffer:
        fs = float(buf.sample_rate)
        sections = [
            _shelf_low(self.physical("Low Freq"), self.physical("Low"), fs),
            _peaking(self.physical("Mid Freq"), self.physical("Mid"), fs),
            _shelf_high(self.physical("High Freq"), self.physical("High"), fs),
        ]
        y = buf.samples.astype(np.float64)
        for b, a in sections:
            y = lfilter(b, a, y, axis=1)
        return AudioBuffer(y.astype(np.float32), buf.sample_rate)


# ---------------------------------------------------------------------------
# Splitter: complementary linear-phase FIR crossover, latency compensated
# ---------------------------------------------------------------------------


def _lowpass_kernel(cut_hz: float, fs: float, taps: int = SPLITTER_TAPS) -> np.ndarray:
    m = np.arange(taps) - (taps - 1) / 2.0
    h = np.sinc(2.0 * cut_hz / fs * m) * (2.0 * cut_hz / fs)
    h *= np.hanning(taps)
    return h / h.sum()


class Splitter3(Effect):
    """Split stereo audio into complementary low/mid/high bands.

    Complementary windowed-sinc pairs (highpass = delta minus lowpass) make
    the three band kernels sum to a pure delay, which is trimmed off, so
    adding the bands reconstructs the input to float precision.  The price
    is a look-ahead of one kernel length; outputs stay length-aligned with
    the input.
    """

    def process(self, buf: AudioBuffer, sidechain: AudioBuffer | None = None) -> tuple[AudioBuffer, ...]:
        fs = float(buf.sample_rate)
        f_lo = self.physical("xover_lo")
        f_hi = max(self.physical("xover_hi"), f_lo * 1.5)
        taps = SPLITTER_TAPS
        half = (taps - 1) // 2

        lp_lo = _lowpass_kernel(f_lo, fs, taps)
        hp_lo = -lp_lo.copy()
        hp_lo[half] += 1.0
        lp_hi = _lowpass_kernel(f_hi, fs, taps)
        hp_hi = -lp_hi.copy()
        hp_hi[half] += 1.0

        # Align all bands to the same two-stage group delay.
        k_low = np.concatenate([np.zeros(half), lp_lo])
        k_mid = np.convolve(hp_lo, lp_hi)
        k_high = np.convolve(hp_lo, hp_hi)

        x = buf.samples.astype(np.float64)
        n = x.shape[1]
        lag = 2 * half
        bands = []
        for kern in (k_low, k_mid, k_high):
            y = fftconvolve(x, kern[None, :], mode="full")[:, lag : lag + n]
            bands.append(AudioBuffer(y.astype(np.float32), buf.sample_rate))
        return tuple(bands)


# ---------------------------------------------------------------------------
# Delay: feedback delay line as a sparse impulse response
# ---------------------------------------------------------------------------


def _sparse_geometric_ir(n: int, step: int, first: int, ratio: float, scale: float = 1.0) -> np.ndarray:
    """IR with taps scale * ratio**k at sample first + k*step, truncated at n."""
    ir = np.zeros(n, dtype=np.float64)
    amp = scale
    pos = first
    while pos < n and abs(amp) > 1e-12:
        ir[pos] += amp
        amp *= ratio
        pos += step
    return ir


class Delay(Effect):
    """Wet/dry feedback delay: echoes at k*time with amplitude feedback**(k-1)."""

    def process(self, buf: AudioBuffer, sidechain: AudioBuffer | None = None) -> AudioBuffer:
        mix = self.physical("mix")
        if mix <= 0.0:
            return buf
        fs = buf.sample_rate
        d = max(1, int(round(self.physical("time") * fs / 1000.0)))
        fb = min(self.physical("feedback"), 0.99)
        x = buf.samples.astype(np.float64)
        n = x.shape[1]
        ir = _sparse_geometric_ir(n, d, d, fb)
        wet = fftconvolve(x, ir[None, :], mode="full")[:, :n]
        y = (1.0 - mix) * x + mix * wet
        return AudioBuffer(y.astype(np.float32), buf.sample_rate)


# ---------------------------------------------------------------------------
# Reverb: Schroeder comb bank -> series allpasses
# ---------------------------------------------------------------------------


class SchroederReverb(Effect):
    """Classic Schroeder reverberator with RT60 set by the decay parameter."""

    def process(self, buf: AudioBuffer, sidechain: AudioBuffer | None = None) -> AudioBuffer:
        mix = self.physical("mix")
        if mix <= 0.0:
            return buf
        fs = buf.sample_rate
        rt60 = self.physical("decay")
        x = buf.samples.astype(np.float64)
        n = x.shape[1]

        comb_ir = np.zeros(n, dtype=np.float64)
        for ms in COMB_DELAYS_MS:
            d = int(round(ms * fs / 1000.0))
            g = 10.0 ** (-3.0 * d / (fs * rt60))
            comb_ir += _sparse_geometric_ir(n, d, 0, g, scale=1.0 / len(COMB_DELAYS_MS))

        wet_ir = comb_ir
        for ms in ALLPASS_DELAYS_MS:
            d = int(round(ms * fs / 1000.0))
            g = ALLPASS_GAIN
            ap = _sparse_geometric_ir(n, d, d, g, scale=1.0 - g * g)
            ap[0] += -g
            wet_ir = fftconvolve(wet_ir, ap)[:n]

        wet = fftconvolve(x, wet_ir[None, :], mode="full")[:, :n]
        y = (1.0 - mix) * x + mix * wet
        return AudioBuffer(y.astype(np.float32), buf.sample_rate)


# ---------------------------------------------------------------------------
# Compressor: peak envelope detector + static gain curve + makeup
# ---------------------------------------------------------------------------


@njit(cache=True)
def _peak_envelope(detector: np.ndarray, attack_alpha: float, release_alpha: float) -> np.ndarray:
    env = np.empty_like(detector)
    e = 0.0
    for i in range(detector.shape[0]):
        d = detector[i]
        a = attack_alpha if d > e else release_alpha
        e = (1.0 - a) * e + a * d
        env[i] = e
    return env


def _ema_alpha(time_ms: float, fs: float) -> float:
    t = max(time_ms, 1e-3) / 1000.0
    return 1.0 - float(np.exp(-1.0 / (t * fs)))


class Compressor(Effect):
    """Feed-forward compressor; the detector reads the sidechain when given.

    Channel-linked: the envelope follows the per-sample peak across detector
    channels and one gain trace is applied to every audio channel.  With
    ratio 1:1 and no makeup the static curve is identically 0 dB.
    """

    def process(self, buf: AudioBuffer, sidechain: AudioBuffer | None = None) -> AudioBuffer:
        fs = float(buf.sample_rate)
        x = buf.samples.astype(np.float64)
        n = x.shape[1]

        if sidechain is not None and self.descriptor.supports_sidechain:
            if sidechain.n_samples < n:
                raise SidechainLengthMismatchError(
                    f"sidechain has {sidechain.n_samples} samples, audio has {n}"
                )
            det_src = sidechain.samples[:, :n].astype(np.float64)
        else:
            det_src = x
        detector = np.max(np.abs(det_src), axis=0)

        env = _peak_envelope(
            detector,
            _ema_alpha(self.physical("attack"), fs),
            _ema_alpha(self.physical("release"), fs),
        )

        ratio = self.physical("ratio")
        th_db = self.physical("threshold")
        makeup_db = self.physical("makeup")
        env_db = 20.0 * np.log10(np.maximum(env, _TINY))
        over = np.maximum(env_db - th_db, 0.0)
        gain_db = over * (1.0 / ratio - 1.0) + makeup_db
        gain = 10.0 ** (gain_db / 20.0)

        return AudioBuffer((x * gain[None, :]).astype(np.float32), buf.sample_rate)


# ---------------------------------------------------------------------------
# Utility effects
# ---------------------------------------------------------------------------


class GainFx(Effect):
    """Scalar gain, 0.5 -> 0 dB."""

    def process(self, buf: AudioBuffer, sidechain: AudioBuffer | None = None) -> AudioBuffer:
        g = _db_to_gain(self.physical("gain"))
        if g == 1.0:
            return buf
        return AudioBuffer((buf.samples.astype(np.float64) * g).astype(np.float32), buf.sample_rate)


class PassThrough(Effect):
    """Unity: stands in for empty chains and the mix node."""

    def process(self, buf: AudioBuffer, sidechain: AudioBuffer | None = None) -> AudioBuffer:
        return buf


_EFFECTS = {
    FX_EQ: Eq3,
    FX_SPLITTER: Splitter3,
    FX_DELAY: Delay,
    FX_REVERB: SchroederReverb,
    FX_COMPRESSOR: Compressor,
    FX_GAIN: GainFx,
    FX_MIX: PassThrough,
}


def make_effect(descriptor: PluginDescriptor, params: list[float]) -> Effect:
    cls = _EFFECTS.get(descriptor.fx_type)
    if cls is None:
        raise ValueError(f"no internal implementation for fx_type {descriptor.fx_type!r}")
    return cls(descriptor, params)

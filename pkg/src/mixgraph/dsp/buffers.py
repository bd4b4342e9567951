"""Audio buffers and signal generators.

Buffers are channel-major float32 arrays at a fixed project sample rate
(44.1 kHz stereo by default).  Mono material is upmixed by duplication.
The generators below exist for stems, probes and tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "SAMPLE_RATE",
    "CHANNELS",
    "TAIL_SECONDS",
    "AudioBuffer",
    "silence",
    "sine",
    "white_noise",
    "log_sweep",
    "impulse",
]

SAMPLE_RATE = 44100
CHANNELS = 2

# Every buffer in a project is padded to the longest stem plus this tail so
# delay/reverb decays survive and lengths agree across the whole graph.
TAIL_SECONDS = 2.0


@dataclass(frozen=True)
class AudioBuffer:
    """Channel-major float32 samples plus their sample rate."""

    samples: np.ndarray  # shape (channels, n)
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.dtype != np.float32:
            arr = arr.astype(np.float32)
        object.__setattr__(self, "samples", arr)

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def to_stereo(self) -> "AudioBuffer":
        if self.channels == CHANNELS:
            return self
        if self.channels == 1:
            return AudioBuffer(np.repeat(self.samples, CHANNELS, axis=0), self.sample_rate)
        return AudioBuffer(self.samples[:CHANNELS], self.sample_rate)

    def padded_to(self, n: int) -> "AudioBuffer":
        if self.n_samples >= n:
            return self
        pad = np.zeros((self.channels, n - self.n_samples), dtype=np.float32)
        return AudioBuffer(np.concatenate([self.samples, pad], axis=1), self.sample_rate)

    def scaled(self, gain: float) -> "AudioBuffer":
        return AudioBuffer(self.samples * np.float32(gain), self.sample_rate)

    def rms(self) -> float:
        return float(np.sqrt(np.mean(np.square(self.samples.astype(np.float64)))))

    def peak(self) -> float:
        return float(np.max(np.abs(self.samples)))

    def mono(self) -> np.ndarray:
        return self.samples.astype(np.float64).mean(axis=0)


def silence(seconds: float, sample_rate: int = SAMPLE_RATE, channels: int = CHANNELS) -> AudioBuffer:
    n = int(round(seconds * sample_rate))
    return AudioBuffer(np.zeros((channels, n), dtype=np.float32), sample_rate)


def sine(
    freq: float,
    seconds: float,
    amplitude: float = 0.5,
    sample_rate: int = SAMPLE_RATE,
    channels: int = CHANNELS,
) -> AudioBuffer:
    t = np.arange(int(round(seconds * sample_rate))) / sample_rate
    x = amplitude * np.sin(2.0 * np.pi * freq * t)
    return AudioBuffer(np.tile(x.astype(np.float32), (channels, 1)), sample_rate)


def white_noise(
    seconds: float,
    amplitude: float = 0.25,
    seed: int = 0,
    sample_rate: int = SAMPLE_RATE,
    channels: int = CHANNELS,
) -> AudioBuffer:
    rng = np.random.default_rng(seed)
    n = int(round(seconds * sample_rate))
    x = amplitude * rng.standard_normal((channels, n))
    return AudioBuffer(x.astype(np.float32), sample_rate)


def log_sweep(
    seconds: float = 2.0,
    f0: float = 20.0,
    f1: float = 20000.0,
    amplitude: float = 0.5,
    sample_rate: int = SAMPLE_RATE,
    channels: int = CHANNELS,
) -> AudioBuffer:
    """Exponential sine sweep from f0 to f1; excites every band."""
    n = int(round(seconds * sample_rate))
    t = np.arange(n) / sample_rate
    k = np.log(f1 / f0)
    phase = 2.0 * np.pi * f0 * seconds / k * (np.exp(t / seconds * k) - 1.0)
    x = amplitude * np.sin(phase)
    return AudioBuffer(np.tile(x.astype(np.float32), (channels, 1)), sample_rate)


def impulse(seconds: float, sample_rate: int = SAMPLE_RATE, channels: int = CHANNELS) -> AudioBuffer:
    buf = silence(seconds, sample_rate, channels)
    buf.samples[:, 0] = 1.0
    return buf

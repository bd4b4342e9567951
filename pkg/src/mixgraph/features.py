"""Audio features and clustering used for preset selection.

The MFCC pipeline is the standard one: pre-emphasis, framing, Hann
window, power spectrum, mel filterbank, log, DCT-II.  KMeans is Lloyd's
algorithm with seeded greedy farthest-point initialization; ties break
toward the lowest point index so runs are reproducible bit for bit.
"""

from __future__ import annotations

import numpy as np
from scipy.fft import dct

from mixgraph.dsp.buffers import AudioBuffer

__all__ = [
    "TooShortError",
    "KTooLargeError",
    "mfcc_features",
    "kmeans",
]

_LOG_FLOOR = 1e-12


class TooShortError(ValueError):
    """Signal shorter than one analysis frame."""


class KTooLargeError(ValueError):
    """More clusters requested than points available."""


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def _mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filters over the rfft bins, (n_mels, n_fft//2 + 1)."""
    mel_pts = np.linspace(_hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0), n_mels + 2)
    hz_pts = _mel_to_hz(mel_pts)
    bins = np.floor((n_fft + 1) * hz_pts / sample_rate).astype(int)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for m in range(1, n_mels + 1):
        lo, mid, hi = bins[m - 1], bins[m], bins[m + 1]
        for b in range(lo, mid):
            if mid != lo:
                fb[m - 1, b] = (b - lo) / (mid - lo)
        for b in range(mid, hi):
            if hi != mid:
                fb[m - 1, b] = (hi - b) / (hi - mid)
    return fb


def mfcc_features(
    buf: AudioBuffer,
    n_mfcc: int = 13,
    frame: int = 1024,
    hop: int = 512,
    n_mels: int = 26,
    pre_emphasis: float = 0.97,
) -> np.ndarray:
    """MFCC matrix of shape (1 + (N - frame)//hop, n_mfcc).

    Raises :class:`TooShortError` when the signal holds less than one frame.
    """
    x = buf.mono()
    if x.shape[0] < frame:
        raise TooShortError(f"{x.shape[0]} samples < frame {frame}")
    x = np.concatenate([x[:1], x[1:] - pre_emphasis * x[:-1]])

    n_frames = 1 + (x.shape[0] - frame) // hop
    idx = np.arange(frame)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = x[idx] * np.hanning(frame)[None, :]

    power = np.abs(np.fft.rfft(frames, n=frame, axis=1)) ** 2 / frame
    fb = _mel_filterbank(n_mels, frame, buf.sample_rate)
    mel_energy = power @ fb.T
    log_mel = np.log(mel_energy + _LOG_FLOOR)
    return dct(log_mel, type=2, norm="ortho", axis=1)[:, :n_mfcc]


def _farthest_point_init(points: np.ndarray, k: int, seed) -> np.ndarray:
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(points.shape[0]))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    while len(chosen) < k:
        nxt = int(np.argmax(d2))  # argmax takes the lowest index on ties
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    return points[chosen].copy()


def kmeans(
    points: np.ndarray,
    k: int,
    seed: int = 0,
    max_iters: int = 100,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm; returns (assignments, centroids).

    Deterministic given the seed; inertia is asserted non-increasing each
    iteration.  Raises :class:`KTooLargeError` when k exceeds the point
    count.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    n = points.shape[0]
    if not 1 <= k <= n:
        raise KTooLargeError(f"k={k} with {n} points")

    centroids = _farthest_point_init(points, k, seed)
    assign = np.full(n, -1, dtype=np.int64)
    prev_inertia = np.inf
    for _ in range(max_iters):
        d2 = np.sum((points[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(d2, axis=1)  # lowest cluster index on ties
        inertia = float(np.sum(d2[np.arange(n), new_assign]))
        assert inertia <= prev_inertia + 1e-9, "kmeans inertia increased"
        prev_inertia = inertia
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(k):
            members = points[assign == j]
            if len(members):
                centroids[j] = members.mean(axis=0)
            else:
                # re-seed an empty cluster with the worst-fitted point
                worst = int(np.argmax(d2[np.arange(n), assign]))
                centroids[j] = points[worst]
    return assign, centroids

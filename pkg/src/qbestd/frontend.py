"""Acoustic frontend: MFCC extraction, deltas, context stacking, archives.

Everything downstream (training, SAD, search) speaks FeatureMatrix, a
per-utterance [frames x dims] float32 matrix with one row per 10 ms frame.
This module turns raw PCM into that currency, widens it with deltas and
temporal context, lays frames out as single-channel images for the
convolutional models, and owns the binary feature archive format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .errors import DataError

ARCHIVE_MAGIC = b"QBE1"


@dataclass
class FeatureMatrix:
    """One utterance worth of features: [frames x dims], float32.

    Rows are frames (10 ms apart for real audio), columns are feature
    dimensions. Values must be finite; shape must be at least 1x1.
    """

    utterance_id: str
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise DataError(
                f"feature matrix {self.utterance_id!r} must be 2-D and non-empty, "
                f"got shape {self.data.shape}"
            )
        if not np.all(np.isfinite(self.data)):
            raise DataError(f"feature matrix {self.utterance_id!r} contains non-finite values")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]


@dataclass
class FeatureImage:
    """Single-channel context window around one frame: [dims x width]."""

    utterance_id: str
    center_frame: int
    data: np.ndarray


@dataclass
class FrameContextConfig:
    """Symmetric (or not) frame context for vector stacking."""

    left: int = 6
    right: int = 6
    base_dims: int = 39

    @property
    def width(self) -> int:
        return self.left + self.right + 1

    @property
    def stacked_dims(self) -> int:
        return self.base_dims * self.width


@dataclass
class MfccConfig:
    """MFCC recipe. The defaults are the common 13-coefficient setup
    behind 39-dim MFCC+delta+deltadelta frontends; every knob is
    configurable because no single reference recipe is canonical."""

    window_ms: float = 25.0
    hop_ms: float = 10.0
    preemphasis: float = 0.97
    num_filters: int = 23
    num_ceps: int = 13
    log_floor: float = 1e-10

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))


def _hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def _mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def _mel_filterbank(num_filters: int, nfft: int, sample_rate: int) -> np.ndarray:
    """Triangular mel filterbank, [num_filters x (nfft//2 + 1)]."""
    low, high = _hz_to_mel(0.0), _hz_to_mel(sample_rate / 2.0)
    mel_points = np.linspace(low, high, num_filters + 2)
    hz_points = _mel_to_hz(mel_points)
    bins = np.floor((nfft + 1) * hz_points / sample_rate).astype(int)
    fbank = np.zeros((num_filters, nfft // 2 + 1), dtype=np.float64)
    for m in range(1, num_filters + 1):
        left, center, right = bins[m - 1], bins[m], bins[m + 1]
        for k in range(left, center):
            if center > left:
                fbank[m - 1, k] = (k - left) / (center - left)
        for k in range(center, right):
            if right > center:
                fbank[m - 1, k] = (right - k) / (right - center)
    return fbank


def compute_mfcc(samples: np.ndarray, sample_rate: int, cfg: MfccConfig | None = None) -> FeatureMatrix:
    """Compute MFCCs from 16-bit mono PCM.

    Returns one row of ``cfg.num_ceps`` cepstral coefficients (c0
    included) per hop. Deterministic: identical samples give identical
    bytes.

    Raises DataError for unsupported sample rates or if the signal is
    shorter than one analysis window.
    """
    cfg = cfg or MfccConfig()
    if sample_rate not in (8000, 16000):
        raise DataError(f"unsupported sample rate {sample_rate}")
    samples = np.asarray(samples)
    if samples.ndim != 1:
        raise DataError("expected mono (1-D) samples")
    win = cfg.window_samples(sample_rate)
    hop = cfg.hop_samples(sample_rate)
    if samples.shape[0] < win:
        raise DataError("input too short: need at least one full analysis window")

    x = samples.astype(np.float64) / 32768.0
    pre = np.empty_like(x)
    pre[0] = x[0] - cfg.preemphasis * x[0]
    pre[1:] = x[1:] - cfg.preemphasis * x[:-1]

    num_frames = 1 + (len(pre) - win) // hop
    idx = np.arange(win)[None, :] + hop * np.arange(num_frames)[:, None]
    frames = pre[idx] * np.hamming(win)[None, :]

    nfft = 1
    while nfft < win:
        nfft *= 2
    spectrum = np.abs(np.fft.rfft(frames, n=nfft, axis=1)) ** 2
    fbank = _mel_filterbank(cfg.num_filters, nfft, sample_rate)
    logmel = np.log(np.maximum(spectrum @ fbank.T, cfg.log_floor))
    ceps = scipy.fft.dct(logmel, type=2, axis=1, norm="ortho")[:, : cfg.num_ceps]
    return FeatureMatrix("", ceps)


def add_deltas(feat: FeatureMatrix, window: int = 2) -> FeatureMatrix:
    """Append delta and delta-delta columns: output dims = 3 x input dims.

    Deltas use the standard regression over +-window frames with edge
    replication, denominator 2 * sum(d^2); delta-deltas are deltas of
    the deltas.
    """
    if window < 1:
        raise DataError("delta window must be >= 1")

    def regress(data: np.ndarray) -> np.ndarray:
        padded = np.pad(data, ((window, window), (0, 0)), mode="edge")
        denom = 2.0 * sum(d * d for d in range(1, window + 1))
        out = np.zeros_like(data, dtype=np.float64)
        for d in range(1, window + 1):
            out += d * (padded[window + d : window + d + data.shape[0]].astype(np.float64)
                        - padded[window - d : window - d + data.shape[0]])
        return out / denom

    static = feat.data.astype(np.float64)
    delta = regress(static)
    ddelta = regress(delta)
    return FeatureMatrix(feat.utterance_id, np.hstack([static, delta, ddelta]))


def stack_context(feat: FeatureMatrix, cfg: FrameContextConfig) -> FeatureMatrix:
    """Stack +-context frames into each row: dims -> dims * width.

    Frame order inside the stacked vector is [t-left, ..., t, ..., t+right];
    out-of-range neighbors replicate the edge frame. Frame count is
    preserved.
    """
    if feat.dims != cfg.base_dims:
        raise DataError(
            f"expected {cfg.base_dims}-dim features for context stacking, got {feat.dims}"
        )
    frames = feat.frames
    blocks = []
    for off in range(-cfg.left, cfg.right + 1):
        t = np.clip(np.arange(frames) + off, 0, frames - 1)
        blocks.append(feat.data[t])
    return FeatureMatrix(feat.utterance_id, np.hstack(blocks))


def extract_images(feat: FeatureMatrix, left: int = 12, right: int = 12) -> list[FeatureImage]:
    """Cut one [dims x (left+right+1)] single-channel image per frame.

    Image column c holds frame t - left + c; boundaries replicate the
    edge frames. Under the default config (39-dim features, +-12) each
    image is 39x25.
    """
    frames = feat.frames
    images = []
    for t in range(frames):
        cols = np.clip(np.arange(t - left, t + right + 1), 0, frames - 1)
        images.append(FeatureImage(feat.utterance_id, t, feat.data[cols].T.copy()))
    return images


def image_tensor(feat: FeatureMatrix, left: int = 12, right: int = 12) -> np.ndarray:
    """All context images of an utterance as one [frames x 1 x dims x width]
    array, the batched layout the convolutional models consume."""
    frames = feat.frames
    cols = np.clip(np.arange(frames)[:, None] + np.arange(-left, right + 1)[None, :], 0, frames - 1)
    # [frames, width, dims] -> [frames, dims, width]
    imgs = feat.data[cols].transpose(0, 2, 1)
    return np.ascontiguousarray(imgs[:, None, :, :])


def mean_variance_stats(mats: list[FeatureMatrix]) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and standard deviation over all frames of all
    matrices (training split only, by convention). Std is floored at 1e-6
    so constant dimensions stay usable."""
    if not mats:
        raise DataError("no feature matrices to compute statistics from")
    stacked = np.concatenate([m.data for m in mats], axis=0).astype(np.float64)
    mean = stacked.mean(axis=0)
    std = np.maximum(stacked.std(axis=0), 1e-6)
    return mean.astype(np.float32), std.astype(np.float32)


# ---------------------------------------------------------------------------
# Feature archive: magic "QBE1", little-endian, see README for the layout.
# ---------------------------------------------------------------------------

def write_archive(features: list[FeatureMatrix], path) -> None:
    """Write matrices to a binary archive. Utterance ids must be unique;
    read_archive(write_archive(x)) reproduces x bit-exactly."""
    seen = set()
    for f in features:
        if f.utterance_id in seen:
            raise DataError(f"duplicate id {f.utterance_id!r} in archive write")
        seen.add(f.utterance_id)
    with open(path, "wb") as fh:
        fh.write(ARCHIVE_MAGIC)
        fh.write(struct.pack("<I", len(features)))
        for f in features:
            ident = f.utterance_id.encode("utf-8")
            if len(ident) > 0xFFFF:
                raise DataError(f"utterance id too long: {len(ident)} bytes")
            fh.write(struct.pack("<H", len(ident)))
            fh.write(ident)
            fh.write(struct.pack("<II", f.frames, f.dims))
            fh.write(f.data.astype("<f4").tobytes())


def read_archive(path) -> list[FeatureMatrix]:
    """Read a feature archive written by write_archive.

    Raises DataError with distinct messages for bad magic, truncated
    records and duplicate utterance ids.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != ARCHIVE_MAGIC:
        raise DataError(f"bad magic in {path}: not a feature archive")
    off = 4

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(blob):
            raise DataError(f"truncated record in {path} at byte {off}")
        chunk = blob[off : off + n]
        off += n
        return chunk

    (count,) = struct.unpack("<I", take(4))
    out: list[FeatureMatrix] = []
    seen: set[str] = set()
    for _ in range(count):
        (id_len,) = struct.unpack("<H", take(2))
        ident = take(id_len).decode("utf-8")
        frames, dims = struct.unpack("<II", take(8))
        if frames < 1 or dims < 1:
            raise DataError(f"invalid record shape {frames}x{dims} in {path}")
        data = np.frombuffer(take(4 * frames * dims), dtype="<f4").reshape(frames, dims)
        if ident in seen:
            raise DataError(f"duplicate id {ident!r} in {path}")
        seen.add(ident)
        out.append(FeatureMatrix(ident, data.copy()))
    return out


def read_archive_dict(path) -> dict[str, FeatureMatrix]:
    """Archive as {utterance_id: FeatureMatrix}, preserving file order."""
    return {f.utterance_id: f for f in read_archive(path)}

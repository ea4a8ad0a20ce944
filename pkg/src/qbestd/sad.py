"""Speech activity detection over multiple posterior streams.

Each utterance comes with posterior streams from several phone
recognizers. A frame's non-speech evidence is the average over streams
of its summed silence/noise posteriors; its speech evidence is the
average over streams of the single strongest speech-class posterior.
Frames whose non-speech evidence reaches the speech evidence (plus a
configurable bias, default 0) are removed before search, and anything
left with fewer than 10 frames is dropped entirely.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .frontend import FeatureMatrix, read_archive, write_archive

MIN_ADMIT_FRAMES = 10


@dataclass
class PosteriorStream:
    """Per-frame class posteriors from one recognizer, with the indices
    of its silence/noise classes."""

    utterance_id: str
    probs: np.ndarray
    nonspeech: tuple

    def __post_init__(self):
        self.probs = np.ascontiguousarray(self.probs, dtype=np.float32)
        self.nonspeech = tuple(int(i) for i in self.nonspeech)
        if self.probs.ndim != 2 or self.probs.shape[1] < 2:
            raise DataError(
                f"posterior stream {self.utterance_id!r} needs [frames x classes>=2], "
                f"got {self.probs.shape}"
            )
        if np.any(self.probs < 0) or np.any(self.probs > 1):
            raise DataError(f"posteriors out of [0,1] in {self.utterance_id!r}")
        sums = self.probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-4):
            raise DataError(f"posterior rows of {self.utterance_id!r} do not sum to 1")
        classes = self.probs.shape[1]
        if not self.nonspeech:
            raise DataError(f"stream {self.utterance_id!r} declares no non-speech classes")
        if any(i < 0 or i >= classes for i in self.nonspeech):
            raise DataError(f"non-speech index out of range in {self.utterance_id!r}")
        if len(self.nonspeech) >= classes:
            raise DataError(f"stream {self.utterance_id!r} has no speech classes left")

    @property
    def frames(self) -> int:
        return self.probs.shape[0]

    def speech_classes(self) -> np.ndarray:
        return np.array(
            [c for c in range(self.probs.shape[1]) if c not in set(self.nonspeech)]
        )


def _check_aligned(streams: list[PosteriorStream]) -> int:
    if not streams:
        raise DataError("no posterior streams given")
    frames = streams[0].frames
    for s in streams[1:]:
        if s.frames != frames:
            raise DataError(
                f"stream frame counts differ: {frames} vs {s.frames} "
                f"({s.utterance_id!r})"
            )
    return frames


def nonspeech_score(streams: list[PosteriorStream]) -> np.ndarray:
    """Per frame: average over streams of the summed non-speech mass."""
    _check_aligned(streams)
    per_stream = [s.probs[:, list(s.nonspeech)].sum(axis=1) for s in streams]
    return np.mean(per_stream, axis=0)


def speech_peak(streams: list[PosteriorStream]) -> np.ndarray:
    """Per frame: average over streams of the maximum single
    speech-class posterior."""
    _check_aligned(streams)
    per_stream = [s.probs[:, s.speech_classes()].max(axis=1) for s in streams]
    return np.mean(per_stream, axis=0)


def keep_mask(streams: list[PosteriorStream], bias: float = 0.0) -> np.ndarray:
    """True where the frame survives: non-speech mass strictly below the
    peak speech posterior plus bias."""
    return nonspeech_score(streams) < speech_peak(streams) + bias


def filter_frames(feat: FeatureMatrix, streams: list[PosteriorStream],
                  bias: float = 0.0):
    """Drop non-speech frames, preserving order. Returns a new
    FeatureMatrix, or None when nothing survives (feature matrices
    cannot be empty)."""
    frames = _check_aligned(streams)
    if feat.frames != frames:
        raise DataError(
            f"features for {feat.utterance_id!r} have {feat.frames} frames, "
            f"streams have {frames}"
        )
    mask = keep_mask(streams, bias)
    if not mask.any():
        return None
    return FeatureMatrix(feat.utterance_id, feat.data[mask])


def admit(feat, min_frames: int = MIN_ADMIT_FRAMES) -> bool:
    """Admit only utterances that kept at least min_frames frames."""
    return feat is not None and feat.frames >= min_frames


# ---------------------------------------------------------------------------
# Stream archives: posterior matrices reuse the feature archive format,
# one archive per stream, plus a sidecar text file with one line per
# stream: "<stream index>\t<space-separated non-speech class indices>".
# ---------------------------------------------------------------------------

def save_streams(per_stream: list[list[PosteriorStream]], directory, prefix: str) -> list:
    from pathlib import Path

    directory = Path(directory)
    paths = []
    sidecar_lines = []
    for k, streams in enumerate(per_stream):
        nonspeech_sets = {s.nonspeech for s in streams}
        if len(nonspeech_sets) != 1:
            raise DataError(f"stream {k} mixes non-speech index sets")
        path = directory / f"{prefix}_{k}.qbe"
        write_archive(
            [FeatureMatrix(s.utterance_id, s.probs) for s in streams], path
        )
        paths.append(path)
        sidecar_lines.append(f"{k}\t{' '.join(str(i) for i in sorted(streams[0].nonspeech))}")
    sidecar = directory / f"{prefix}.nonspeech"
    sidecar.write_text("\n".join(sidecar_lines) + "\n", encoding="utf-8")
    return paths


def load_streams(directory, prefix: str) -> dict:
    """Returns {utterance_id: [PosteriorStream, ...]} with streams in
    index order."""
    from pathlib import Path

    directory = Path(directory)
    sidecar = directory / f"{prefix}.nonspeech"
    if not sidecar.exists():
        raise DataError(f"missing non-speech sidecar {sidecar}")
    nonspeech = {}
    for line in sidecar.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        idx, _, rest = line.partition("\t")
        nonspeech[int(idx)] = tuple(int(tok) for tok in rest.split())
    out: dict[str, list[PosteriorStream]] = {}
    for k in sorted(nonspeech):
        path = directory / f"{prefix}_{k}.qbe"
        for mat in read_archive(path):
            out.setdefault(mat.utterance_id, []).append(
                PosteriorStream(mat.utterance_id, mat.data, nonspeech[k])
            )
    counts = {len(v) for v in out.values()}
    if len(counts) > 1:
        raise DataError("stream archives do not cover the same utterances")
    return out

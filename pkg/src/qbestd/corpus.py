"""Synthetic multilingual corpus with planted query occurrences.

Each "phone" is a spherical Gaussian over feature space. A configurable
fraction of phone distributions is shared across languages, which is
the structure multilingual training can exploit; the rest are private
to one language. Documents are phone sequences with random durations
and inserted silence; queries are short phone sequences; planted
occurrences are fresh draws from the query's phone distributions (a
new "speaker"), never copied frames, inserted at random positions in
roughly plant_rate of documents. Three posterior streams per test
utterance mark the true silence frames for the activity detector.

Everything is drawn from one seeded generator in a fixed order, so the
same config produces byte-identical archives and manifest.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .frontend import FeatureMatrix, write_archive
from .sad import PosteriorStream, save_streams
from .search import DtwConfig, ScoreTable, dtw_subsequence, similarity

SILENCE = "sil"


@dataclass
class SyntheticCorpusConfig:
    num_languages: int = 3
    phones_per_language: int = 8
    shared_phone_fraction: float = 0.5
    feature_dim: int = 39
    train_utterances: int = 30
    dev_utterances: int = 8
    doc_count: int = 40
    query_count: int = 12
    plant_rate: float = 0.25
    min_phone_frames: int = 5
    max_phone_frames: int = 12
    doc_min_phones: int = 10
    doc_max_phones: int = 20
    query_min_phones: int = 3
    query_max_phones: int = 8
    # default scales put the benchmark in the discriminative sweet spot:
    # raw features are noisy enough to leave headroom, phone classes stay
    # learnable, and planted terms remain detectable by the oracle matcher
    mean_scale: float = 1.0
    noise_scale: float = 4.0
    silence_rate: float = 0.3
    silence_min_frames: int = 3
    silence_max_frames: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.num_languages < 1:
            raise ConfigError("need at least one language")
        if self.phones_per_language < 3:
            raise ConfigError("need at least three phones per language")
        if not 0.0 <= self.shared_phone_fraction <= 1.0:
            raise ConfigError("shared phone fraction must lie in [0, 1]")
        if not 0.0 <= self.plant_rate < 1.0:
            raise ConfigError("plant rate must lie in [0, 1)")
        if self.feature_dim < 1:
            raise ConfigError("feature dim must be positive")
        for lo, hi, what in [
            (self.min_phone_frames, self.max_phone_frames, "phone frames"),
            (self.doc_min_phones, self.doc_max_phones, "document phones"),
            (self.query_min_phones, self.query_max_phones, "query phones"),
            (self.silence_min_frames, self.silence_max_frames, "silence frames"),
        ]:
            if lo < 1 or hi < lo:
                raise ConfigError(f"invalid {what} range [{lo}, {hi}]")
        if self.query_max_phones > self.doc_min_phones:
            raise ConfigError(
                "queries may be longer than the shortest document; "
                "shrink the query range or grow the document range"
            )
        if self.train_utterances < 1 or self.dev_utterances < 1:
            raise ConfigError("need at least one utterance per split")
        if self.doc_count < 1 or self.query_count < 1:
            raise ConfigError("need at least one document and one query")


@dataclass
class CorpusManifest:
    """Everything the pipeline and the evaluator need to know about a
    generated corpus: splits, per-frame training labels, the true phone
    sequences (for the oracle matcher), and the trial list.
    """

    config: dict
    languages: list
    phones: dict            # phone id -> mean vector (list of floats)
    inventories: dict       # language -> ordered phone ids (label index order)
    train: dict             # language -> utterance ids
    dev: dict               # language -> utterance ids
    docs: list
    queries: list
    labels: dict            # training/dev utterance id -> per-frame label index
    doc_phones: dict        # doc id -> segment ids including "sil"
    query_phones: dict      # query id -> phone ids
    trials: list = field(default_factory=list)  # [query id, doc id, 0/1]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(asdict(self), fh, sort_keys=True, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "CorpusManifest":
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
        manifest = cls(**raw)
        manifest.trials = [tuple(t) for t in manifest.trials]
        return manifest


def _phone_inventory(cfg: SyntheticCorpusConfig, rng):
    n_shared = round(cfg.shared_phone_fraction * cfg.phones_per_language)
    languages = [f"L{i + 1}" for i in range(cfg.num_languages)]
    phones = {}
    shared = []
    for i in range(n_shared):
        pid = f"sh{i:02d}"
        shared.append(pid)
        phones[pid] = cfg.mean_scale * rng.standard_normal(cfg.feature_dim)
    inventories = {}
    for lang in languages:
        private = []
        for i in range(cfg.phones_per_language - n_shared):
            pid = f"{lang}_p{i:02d}"
            private.append(pid)
            phones[pid] = cfg.mean_scale * rng.standard_normal(cfg.feature_dim)
        inventories[lang] = shared + private
    return languages, phones, inventories


class _Drawer:
    """Frame emission for phones and silence from one shared generator."""

    def __init__(self, cfg, phones, rng):
        self.cfg = cfg
        self.phones = phones
        self.rng = rng

    def phone(self, pid):
        dur = int(self.rng.integers(self.cfg.min_phone_frames,
                                    self.cfg.max_phone_frames + 1))
        return self.phones[pid] + self.cfg.noise_scale * self.rng.standard_normal(
            (dur, self.cfg.feature_dim))

    def silence(self):
        dur = int(self.rng.integers(self.cfg.silence_min_frames,
                                    self.cfg.silence_max_frames + 1))
        return 0.5 * self.cfg.noise_scale * self.rng.standard_normal(
            (dur, self.cfg.feature_dim))


def _labeled_utterance(cfg, drawer, rng, inventory):
    """Training-style utterance: phones only, one label per frame."""
    n_phones = int(rng.integers(cfg.doc_min_phones, cfg.doc_max_phones + 1))
    frames, labels = [], []
    for _ in range(n_phones):
        idx = int(rng.integers(len(inventory)))
        seg = drawer.phone(inventory[idx])
        frames.append(seg)
        labels.extend([idx] * len(seg))
    return np.vstack(frames).astype(np.float32), labels


def _doc_segments(cfg, drawer, rng, test_inventory):
    """Document as a list of (segment id, frames): phones interleaved
    with silence at silence_rate."""
    n_phones = int(rng.integers(cfg.doc_min_phones, cfg.doc_max_phones + 1))
    segments = []
    for _ in range(n_phones):
        if rng.random() < cfg.silence_rate:
            segments.append((SILENCE, drawer.silence()))
        pid = test_inventory[int(rng.integers(len(test_inventory)))]
        segments.append((pid, drawer.phone(pid)))
    if rng.random() < cfg.silence_rate:
        segments.append((SILENCE, drawer.silence()))
    return segments


def _sad_streams(utt_id, silence_mask, rng):
    """Three jittered two-class (speech, non-speech) posterior streams
    that track the true silence frames."""
    streams = []
    for _ in range(3):
        nonspeech = np.where(
            silence_mask,
            rng.uniform(0.7, 0.95, size=len(silence_mask)),
            rng.uniform(0.05, 0.3, size=len(silence_mask)),
        )
        probs = np.stack([1.0 - nonspeech, nonspeech], axis=1).astype(np.float32)
        streams.append(PosteriorStream(utt_id, probs, nonspeech=(1,)))
    return streams


def generate_corpus(cfg: SyntheticCorpusConfig, out_dir) -> CorpusManifest:
    """Write feature archives, posterior streams, and the manifest to
    out_dir; returns the manifest. Deterministic given cfg.seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    languages, phones, inventories = _phone_inventory(cfg, rng)
    drawer = _Drawer(cfg, phones, rng)
    test_inventory = sorted(set().union(*inventories.values()))

    train, dev, labels = {}, {}, {}
    train_feats, dev_feats = [], []
    for lang in languages:
        train[lang], dev[lang] = [], []
        for split, count, ids, feats in (
            ("tr", cfg.train_utterances, train[lang], train_feats),
            ("dv", cfg.dev_utterances, dev[lang], dev_feats),
        ):
            for i in range(count):
                utt = f"{split}_{lang}_{i:03d}"
                data, utt_labels = _labeled_utterance(
                    cfg, drawer, rng, inventories[lang])
                ids.append(utt)
                labels[utt] = utt_labels
                feats.append(FeatureMatrix(utt, data))

    # documents as segment lists, so plants can be inserted between
    # segments before frames are finalized
    doc_ids = [f"doc_{i:03d}" for i in range(cfg.doc_count)]
    doc_segs = {did: _doc_segments(cfg, drawer, rng, test_inventory)
                for did in doc_ids}

    query_ids = [f"qry_{i:02d}" for i in range(cfg.query_count)]
    query_phones = {}
    query_feats = {}
    for qid in query_ids:
        n_phones = int(rng.integers(cfg.query_min_phones, cfg.query_max_phones + 1))
        seq = [test_inventory[int(rng.integers(len(test_inventory)))]
               for _ in range(n_phones)]
        query_phones[qid] = seq
        segments = []
        if rng.random() < cfg.silence_rate:
            segments.append((SILENCE, drawer.silence()))
        segments.extend((pid, drawer.phone(pid)) for pid in seq)
        if rng.random() < cfg.silence_rate:
            segments.append((SILENCE, drawer.silence()))
        query_feats[qid] = segments

    planted = {qid: set() for qid in query_ids}
    doc_plants = {did: [] for did in doc_ids}
    for qid in query_ids:
        for did in doc_ids:
            if rng.random() < cfg.plant_rate:
                _plant(qid, did, query_phones, doc_segs, doc_plants,
                       drawer, rng, planted)
    if cfg.plant_rate > 0.0:
        # a query with no occurrence cannot be evaluated per query;
        # guarantee one plant each
        for qid in query_ids:
            if not planted[qid]:
                did = doc_ids[int(rng.integers(cfg.doc_count))]
                _plant(qid, did, query_phones, doc_segs, doc_plants,
                       drawer, rng, planted)

    trials = [(qid, did, 1 if did in planted[qid] else 0)
              for qid in query_ids for did in doc_ids]

    doc_feats, doc_phone_seqs = [], {}
    stream_sets = [[], [], []]
    for did in doc_ids:
        segments = doc_segs[did]
        frames = np.vstack([seg for _, seg in segments]).astype(np.float32)
        silence_mask = np.concatenate(
            [np.full(len(seg), sid == SILENCE) for sid, seg in segments])
        doc_feats.append(FeatureMatrix(did, frames))
        doc_phone_seqs[did] = [sid for sid, _ in segments]
        for k, stream in enumerate(_sad_streams(did, silence_mask, rng)):
            stream_sets[k].append(stream)
    query_mats = []
    for qid in query_ids:
        segments = query_feats[qid]
        frames = np.vstack([seg for _, seg in segments]).astype(np.float32)
        silence_mask = np.concatenate(
            [np.full(len(seg), sid == SILENCE) for sid, seg in segments])
        query_mats.append(FeatureMatrix(qid, frames))
        for k, stream in enumerate(_sad_streams(qid, silence_mask, rng)):
            stream_sets[k].append(stream)

    write_archive(train_feats, out_dir / "train.qbe")
    write_archive(dev_feats, out_dir / "dev.qbe")
    write_archive(doc_feats, out_dir / "docs.qbe")
    write_archive(query_mats, out_dir / "queries.qbe")
    save_streams(stream_sets, out_dir, "sad")

    manifest = CorpusManifest(
        config=asdict(cfg),
        languages=languages,
        phones={pid: mean.tolist() for pid, mean in phones.items()},
        inventories=inventories,
        train=train,
        dev=dev,
        docs=doc_ids,
        queries=query_ids,
        labels=labels,
        doc_phones=doc_phone_seqs,
        query_phones=query_phones,
        trials=trials,
    )
    manifest.save(out_dir / "manifest.json")
    return manifest


def _plant(qid, did, query_phones, doc_segs, doc_plants, drawer, rng, planted):
    if did in planted[qid]:
        return
    segments = doc_segs[did]
    # never split an earlier plant's run: insertion must not fall
    # strictly inside any protected span
    spans = doc_plants[did]
    valid = [p for p in range(len(segments) + 1)
             if all(not start < p < start + length for start, length in spans)]
    pos = valid[int(rng.integers(len(valid)))]
    plant = [(pid, drawer.phone(pid)) for pid in query_phones[qid]]
    doc_segs[did] = segments[:pos] + plant + segments[pos:]
    doc_plants[did] = [
        (start + len(plant), length) if start >= pos else (start, length)
        for start, length in spans
    ] + [(pos, len(plant))]
    planted[qid].add(did)


# ---------------------------------------------------------------------------
# evaluation hooks
# ---------------------------------------------------------------------------


def trial_labels(manifest: CorpusManifest):
    from .evaluation import TrialLabels

    labels = TrialLabels()
    for qid, did, label in manifest.trials:
        labels.set(qid, did, label)
    if not any(label for _, _, label in manifest.trials):
        raise DataError(
            "corpus has zero planted occurrences; nothing to evaluate")
    return labels


def oracle_score_table(manifest: CorpusManifest) -> ScoreTable:
    """Cheating matcher: alignment on the true phone-mean sequences
    (silence dropped, as perfect activity detection would). Guards
    against generating an undetectable benchmark.
    """
    means = {pid: np.asarray(m, dtype=np.float32)
             for pid, m in manifest.phones.items()}
    cfg = DtwConfig()
    table = ScoreTable()
    doc_means = {}
    for did in manifest.docs:
        seq = [means[sid] for sid in manifest.doc_phones[did] if sid != SILENCE]
        doc_means[did] = FeatureMatrix(did, np.stack(seq))
    for qid in manifest.queries:
        q = FeatureMatrix(qid, np.stack(
            [means[pid] for pid in manifest.query_phones[qid]]))
        for did in manifest.docs:
            sim = similarity(q, doc_means[did])
            table.set(qid, did, dtw_subsequence(sim, cfg).score)
    return table

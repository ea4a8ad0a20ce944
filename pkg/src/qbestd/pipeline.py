"""Experiment orchestration over a run directory.

Stage order: synth (optional) -> featurize -> train -> extract -> sad
-> search -> znorm -> eval. The raw-feature baseline skips train and
extract and matches on the corpus features directly. Every stage reads
and writes the declared on-disk formats, so each can also be run alone
from the command line against an existing run directory.

A run log records the config hash, seed, and per-stage wall times.
Timings naturally differ between runs; all other outputs (scores,
reports, archives) are bit-identical for the same config and seed.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_hash
from .corpus import CorpusManifest, generate_corpus, trial_labels
from .errors import ConfigError, DataError, QbeError
from .evaluation import (
    EvalConfig,
    MetricReport,
    compute_report,
    emit_det_file,
    write_report,
    znorm,
)
from .frontend import (
    FrameContextConfig,
    read_archive_dict,
    stack_context,
    write_archive,
)
from .models import (
    build_ffn,
    build_resnet,
    extract_bottleneck,
    load_model,
    save_model,
    train,
)
from .plots import plot_det, plot_losses
from .sad import admit, filter_frames, load_streams
from .search import DtwConfig, read_scores, search_all, write_scores

log = logging.getLogger(__name__)

ARCHIVE_NAMES = ("train.qbe", "dev.qbe", "docs.qbe", "queries.qbe")


@dataclass
class RunPaths:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def corpus_dir(self) -> Path:
        return self.root / "corpus"

    @property
    def features_dir(self) -> Path:
        return self.root / "features"

    @property
    def speech_dir(self) -> Path:
        return self.root / "speech"

    @property
    def report_dir(self) -> Path:
        return self.root / "report"

    @property
    def manifest(self) -> Path:
        return self.corpus_dir / "manifest.json"

    @property
    def model(self) -> Path:
        return self.root / "model.qbm"

    @property
    def training_log(self) -> Path:
        return self.root / "training_log.json"

    @property
    def bottleneck_dir(self) -> Path:
        return self.root / "bottleneck"

    @property
    def scores_raw(self) -> Path:
        return self.root / "scores_raw.tsv"

    @property
    def scores_znormed(self) -> Path:
        return self.root / "scores_znormed.tsv"

    @property
    def run_log(self) -> Path:
        return self.root / "run_log.json"


def _load_manifest(paths: RunPaths) -> CorpusManifest:
    if not paths.manifest.exists():
        raise DataError(f"no corpus manifest at {paths.manifest}; run synth first")
    return CorpusManifest.load(paths.manifest)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def stage_synth(cfg: ExperimentConfig, paths: RunPaths) -> None:
    generate_corpus(cfg.corpus, paths.corpus_dir)


def stage_featurize(cfg: ExperimentConfig, paths: RunPaths) -> None:
    """Model-ready features. The feedforward model consumes stacked
    context windows; the residual and raw paths keep base features
    (images are assembled inside extraction)."""
    manifest = _load_manifest(paths)
    paths.features_dir.mkdir(parents=True, exist_ok=True)
    context = FrameContextConfig(
        left=cfg.context_left, right=cfg.context_right,
        base_dims=manifest.config["feature_dim"],
    )
    for name in ARCHIVE_NAMES:
        feats = read_archive_dict(paths.corpus_dir / name)
        out = []
        for utt in sorted(feats):
            feat = feats[utt]
            if cfg.architecture == "ffn":
                feat = stack_context(feat, context)
            out.append(feat)
        write_archive(out, paths.features_dir / name)


def _labeled_arrays(cfg: ExperimentConfig, manifest: CorpusManifest,
                    feats: dict, split: dict, languages: list) -> dict:
    """{language: (inputs, labels)} over one split's utterances; inputs
    are stacked frames for vector models, context images for resnet."""
    from .frontend import image_tensor

    out = {}
    for lang in languages:
        xs, ys = [], []
        for utt in split[lang]:
            feat = feats[utt]
            if cfg.architecture == "resnet":
                xs.append(image_tensor(feat, cfg.image_left, cfg.image_right)
                          .astype(np.float32))
            else:
                xs.append(feat.data)
            ys.append(np.asarray(manifest.labels[utt], dtype=np.int64))
        out[lang] = (np.concatenate(xs, axis=0), np.concatenate(ys))
    return out


def stage_train(cfg: ExperimentConfig, paths: RunPaths):
    """Build and train the bottleneck model; no-op for the raw baseline."""
    if not cfg.needs_training:
        log.info("raw baseline: no model to train")
        return None
    manifest = _load_manifest(paths)
    languages = cfg.languages or manifest.languages
    unknown = set(languages) - set(manifest.languages)
    if unknown:
        raise ConfigError(f"languages {sorted(unknown)} not in corpus")
    num_classes = {lang: manifest.config["phones_per_language"]
                   for lang in languages}
    train_feats = read_archive_dict(paths.features_dir / "train.qbe")
    dev_feats = read_archive_dict(paths.features_dir / "dev.qbe")
    train_set = _labeled_arrays(cfg, manifest, train_feats, manifest.train,
                                languages)
    dev_set = _labeled_arrays(cfg, manifest, dev_feats, manifest.dev, languages)

    init_rng = np.random.default_rng(cfg.seed + 2)
    if cfg.architecture == "ffn":
        input_dim = train_set[languages[0]][0].shape[1]
        model = build_ffn(languages, input_dim=input_dim,
                          num_classes=num_classes, hidden_dim=cfg.hidden_dim,
                          dropout=cfg.dropout, rng=init_rng)
    else:
        model = build_resnet(languages, num_classes=num_classes,
                             image_height=manifest.config["feature_dim"],
                             dropout=cfg.dropout, rng=init_rng)
    history = train(model, train_set, dev_set, epochs=cfg.epochs,
                    batch_size=cfg.batch_size, lr=cfg.lr,
                    rng=np.random.default_rng(cfg.seed + 1))
    save_model(model, paths.model)
    with open(paths.training_log, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(
            {"train_losses": history.train_losses,
             "dev_losses": history.dev_losses,
             "lr_trace": history.lr_trace},
            fh, sort_keys=True, indent=2)
        fh.write("\n")
    return history


def stage_extract(cfg: ExperimentConfig, paths: RunPaths) -> None:
    """Bottleneck features for the test archives; no-op for raw."""
    if not cfg.needs_training:
        log.info("raw baseline: matching on corpus features directly")
        return
    model = load_model(paths.model)
    paths.bottleneck_dir.mkdir(parents=True, exist_ok=True)
    for name in ("docs.qbe", "queries.qbe"):
        feats = read_archive_dict(paths.features_dir / name)
        out = [
            extract_bottleneck(model, feats[utt],
                               image_left=cfg.image_left,
                               image_right=cfg.image_right)
            for utt in sorted(feats)
        ]
        write_archive(out, paths.bottleneck_dir / name)


def stage_sad(cfg: ExperimentConfig, paths: RunPaths) -> None:
    """Drop non-speech frames from the matching features; utterances
    left with fewer than min_frames frames are not admitted."""
    streams = load_streams(paths.corpus_dir, "sad")
    source = paths.bottleneck_dir if cfg.needs_training else paths.features_dir
    paths.speech_dir.mkdir(parents=True, exist_ok=True)
    for name in ("docs.qbe", "queries.qbe"):
        feats = read_archive_dict(source / name)
        kept = []
        for utt in sorted(feats):
            if utt not in streams:
                raise DataError(f"no activity streams for utterance {utt!r}")
            filtered = filter_frames(feats[utt], streams[utt], bias=cfg.sad_bias)
            if not admit(filtered, cfg.min_frames):
                frames = 0 if filtered is None else filtered.frames
                log.warning("dropping %r: %d speech frame(s) after filtering",
                            utt, frames)
                continue
            kept.append(filtered)
        if not kept:
            raise DataError(f"activity detection removed every utterance in {name}")
        write_archive(kept, paths.speech_dir / name)


def stage_search(cfg: ExperimentConfig, paths: RunPaths):
    queries = read_archive_dict(paths.speech_dir / "queries.qbe")
    docs = read_archive_dict(paths.speech_dir / "docs.qbe")
    table, timing = search_all(
        queries, docs,
        DtwConfig(max_consecutive_nondiagonal=cfg.max_consecutive_nondiagonal),
        threads=cfg.threads,
    )
    write_scores(table, paths.scores_raw)
    return timing


def stage_znorm(cfg: ExperimentConfig, paths: RunPaths) -> None:
    table = read_scores(paths.scores_raw)
    write_scores(znorm(table), paths.scores_znormed)


def stage_eval(cfg: ExperimentConfig, paths: RunPaths) -> MetricReport:
    manifest = _load_manifest(paths)
    table = read_scores(paths.scores_znormed, state="znormed")
    labels = trial_labels(manifest)
    eval_cfg = EvalConfig(cost_false_alarm=cfg.cost_false_alarm,
                          cost_miss=cfg.cost_miss,
                          target_prior=cfg.target_prior)
    report = compute_report(table, labels, eval_cfg)
    paths.report_dir.mkdir(parents=True, exist_ok=True)
    write_report(report, paths.report_dir / "report.txt")
    emit_det_file(report.det_points, paths.report_dir / "det.tsv")
    with open(paths.report_dir / "per_query_cnxe.tsv", "w",
              encoding="utf-8", newline="\n") as fh:
        for qid in sorted(report.per_query_cnxe):
            fh.write(f"{qid}\t{report.per_query_cnxe[qid]:.6f}\n")
    plot_det(report.det_points, paths.report_dir / "det.png",
             label=cfg.architecture)
    if paths.training_log.exists():
        with open(paths.training_log, "r", encoding="utf-8") as fh:
            history = json.load(fh)
        plot_losses(history["train_losses"], history["dev_losses"],
                    paths.report_dir / "loss.png")
    return report


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

_STAGES = (
    ("synth", stage_synth),
    ("featurize", stage_featurize),
    ("train", stage_train),
    ("extract", stage_extract),
    ("sad", stage_sad),
    ("search", stage_search),
    ("znorm", stage_znorm),
    ("eval", stage_eval),
)

STAGE_NAMES = tuple(name for name, _ in _STAGES)


def run_stage(name: str, cfg: ExperimentConfig, paths: RunPaths):
    """One named stage, with failures tagged by stage name."""
    fn = dict(_STAGES).get(name)
    if fn is None:
        raise ConfigError(f"unknown stage {name!r}")
    started = time.perf_counter()
    try:
        result = fn(cfg, paths)
    except QbeError as err:
        raise type(err)(f"stage {name}: {err}") from err
    seconds = time.perf_counter() - started
    log.info("stage %s finished in %.2f s", name, seconds)
    return result, seconds


def run_pipeline(cfg: ExperimentConfig, out_dir, skip_synth: bool = False
                 ) -> MetricReport:
    """All stages in order; returns the metric report and writes the
    run log (config hash, seed, stage timings) into the run directory.
    """
    paths = RunPaths(out_dir)
    paths.root.mkdir(parents=True, exist_ok=True)
    stage_log = []
    report = None
    search_timing = None
    for name, _ in _STAGES:
        if name == "synth" and skip_synth:
            continue
        result, seconds = run_stage(name, cfg, paths)
        stage_log.append({"name": name, "seconds": round(seconds, 3)})
        if name == "search":
            search_timing = result
        if name == "eval":
            report = result
    payload = {
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "stages": stage_log,
    }
    if search_timing is not None:
        payload["search"] = {
            "pairs": search_timing.pairs,
            "threads": search_timing.threads,
            "wall_seconds": round(search_timing.wall_seconds, 4),
        }
    with open(paths.run_log, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return report


def read_per_query_file(path) -> dict:
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 fields")
            values[parts[0]] = float(parts[1])
    return values


def compare_runs(run_a, run_b) -> tuple:
    """Significance of run A being worse than run B on per-query
    normalized cross entropy (positive t: A has higher cross entropy).
    Returns (t, p, summary text).
    """
    from .evaluation import paired_ttest_one_tailed

    a = read_per_query_file(RunPaths(run_a).report_dir / "per_query_cnxe.tsv")
    b = read_per_query_file(RunPaths(run_b).report_dir / "per_query_cnxe.tsv")
    if sorted(a) != sorted(b):
        raise DataError("runs scored different query sets; cannot pair")
    t, p = paired_ttest_one_tailed(a, b)
    if t > 0:
        direction = "first run worse (higher per-query cross entropy)"
    elif t < 0:
        direction = "first run better (lower per-query cross entropy)"
    else:
        direction = "no direction"
    text = (f"queries\t{len(a)}\n"
            f"t\t{t:.4f}\n"
            f"p\t{p:.6f}\n"
            f"direction\t{direction}\n")
    return t, p, text

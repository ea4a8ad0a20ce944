"""Configuration loading: INI parsing, typed conversion, override
precedence, validation, and the config digest."""

import pytest

from qbestd.config import (
    ExperimentConfig,
    build_experiment,
    config_hash,
    load_experiment,
    read_config_file,
    write_config_template,
)
from qbestd.corpus import SyntheticCorpusConfig
from qbestd.errors import ConfigError


class TestValidation:
    def test_defaults_are_valid(self):
        cfg = ExperimentConfig()
        assert cfg.architecture == "ffn"
        assert cfg.needs_training

    def test_unknown_architecture(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(architecture="transformer")

    def test_raw_needs_no_training(self):
        assert not ExperimentConfig(architecture="raw").needs_training

    def test_nonpositive_epochs(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(epochs=0)

    def test_nonpositive_threads(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(threads=0)

    def test_hidden_dim_must_exceed_bottleneck(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(hidden_dim=32)
        # the raw baseline has no hidden layers to size
        ExperimentConfig(architecture="raw", hidden_dim=32)

    def test_run_seed_drives_corpus_seed(self):
        cfg = ExperimentConfig(seed=77,
                               corpus=SyntheticCorpusConfig(seed=5))
        assert cfg.corpus.seed == 77


class TestFileParsing:
    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            read_config_file(tmp_path / "nope.ini")

    def test_unknown_section(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[decoder]\nbeam = 7\n")
        with pytest.raises(ConfigError, match=r"unknown config section"):
            read_config_file(path)

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[model]\nlayers = 9\n")
        with pytest.raises(ConfigError, match=r"unknown key"):
            read_config_file(path)

    def test_typed_values(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text(
            "[model]\narchitecture = resnet\nepochs = 3\nlr = 0.01\n"
            "languages = L1, L2\n"
            "[run]\nseed = 42\n"
            "[corpus]\nnum_languages = 2\nnoise_scale = 1.5\n"
        )
        cfg = load_experiment(path)
        assert cfg.architecture == "resnet"
        assert cfg.epochs == 3
        assert cfg.lr == pytest.approx(0.01)
        assert cfg.languages == ["L1", "L2"]
        assert cfg.seed == 42
        assert cfg.corpus.num_languages == 2
        assert cfg.corpus.noise_scale == pytest.approx(1.5)
        assert cfg.corpus.seed == 42

    def test_bad_value_type(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[model]\nepochs = soon\n")
        with pytest.raises(ConfigError, match="bad value"):
            load_experiment(path)

    def test_empty_target_prior_means_empirical(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[eval]\ntarget_prior = \n")
        assert load_experiment(path).target_prior is None
        path.write_text("[eval]\ntarget_prior = 0.25\n")
        assert load_experiment(path).target_prior == pytest.approx(0.25)


class TestOverrides:
    def test_override_beats_file(self, tmp_path):
        path = tmp_path / "c.ini"
        path.write_text("[run]\nseed = 1\nthreads = 1\n")
        cfg = load_experiment(path, {"run.seed": 99})
        assert cfg.seed == 99
        assert cfg.threads == 1

    def test_none_override_ignored(self):
        cfg = build_experiment({}, {"run.seed": None})
        assert cfg.seed == 0

    def test_override_without_file(self):
        cfg = load_experiment(None, {"run.threads": 4, "model.epochs": 2})
        assert cfg.threads == 4
        assert cfg.epochs == 2

    def test_override_unknown_key(self):
        with pytest.raises(ConfigError):
            build_experiment({}, {"model.width": 3})


class TestTemplate:
    def test_roundtrip_equals_defaults(self, tmp_path):
        path = tmp_path / "template.ini"
        write_config_template(path)
        assert load_experiment(path) == ExperimentConfig()

    def test_template_mentions_every_section(self, tmp_path):
        path = tmp_path / "template.ini"
        write_config_template(path)
        text = path.read_text()
        for section in ("corpus", "model", "frontend", "search", "sad",
                        "eval", "run"):
            assert f"[{section}]" in text


class TestHash:
    def test_stable_for_equal_configs(self):
        assert config_hash(ExperimentConfig()) == config_hash(ExperimentConfig())

    def test_sensitive_to_any_field(self):
        base = config_hash(ExperimentConfig())
        assert config_hash(ExperimentConfig(seed=1)) != base
        assert config_hash(ExperimentConfig(architecture="raw")) != base
        assert config_hash(
            ExperimentConfig(corpus=SyntheticCorpusConfig(doc_count=41))
        ) != base

    def test_short_hex(self):
        digest = config_hash(ExperimentConfig())
        assert len(digest) == 16
        int(digest, 16)

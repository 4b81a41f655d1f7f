"""Config parsing, validation, and canonical text round-trips."""

import pytest

from marvid.config import (
    ModelConfig, config_from_text, config_hash, config_text, parse_config,
)
from marvid.errors import ConfigError


class TestDefaults:
    def test_desk_scale_geometry(self):
        cfg = ModelConfig().validate()
        assert cfg.tokens_per_frame == 16
        assert cfg.seq_len == 8 * 16 + 1

    def test_defaults_are_valid(self):
        ModelConfig().validate()


class TestValidation:
    @pytest.mark.parametrize("key,value", [
        ("mask_ratio", 1.5),
        ("mask_ratio", -0.1),
        ("patch", 5),        # does not divide img_size 32
        ("heads", 3),        # does not divide dim 64
        ("frames", 0),
        ("depth", 0),
        ("decoder_depth", 0),
        ("ar_mode", "clip"),
        ("mamba_per_attn", -1),
    ])
    def test_bad_value_names_the_key(self, key, value):
        with pytest.raises(ConfigError) as err:
            parse_config(overrides={key: value})
        assert key in str(err.value)


class TestParsing:
    def test_file_then_overrides(self, tmp_path):
        p = tmp_path / "model.cfg"
        p.write_text("# comment\nmask_ratio = 0.5\ndepth=3\n\n")
        cfg = parse_config(str(p), overrides={"mask_ratio": 0.8})
        assert cfg.mask_ratio == 0.8 and cfg.depth == 3

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "model.cfg"
        p.write_text("layers=5\n")
        with pytest.raises(ConfigError) as err:
            parse_config(str(p))
        assert "layers" in str(err.value)

    def test_unparseable_value(self, tmp_path):
        p = tmp_path / "model.cfg"
        p.write_text("depth=five\n")
        with pytest.raises(ConfigError) as err:
            parse_config(str(p))
        assert "depth" in str(err.value)

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            parse_config("/no/such/file.cfg")

    def test_string_overrides_coerced(self):
        cfg = parse_config(overrides={"depth": "7", "mask_ratio": "0.25"})
        assert cfg.depth == 7 and cfg.mask_ratio == 0.25


class TestCanonicalText:
    def test_roundtrip(self):
        cfg = ModelConfig(depth=9, mask_ratio=0.8, ar_mode="token")
        assert config_from_text(config_text(cfg)) == cfg

    def test_hash_is_stable_and_sensitive(self):
        a = config_hash(ModelConfig())
        assert a == config_hash(ModelConfig())
        assert len(a) == 8
        assert a != config_hash(ModelConfig(depth=6))

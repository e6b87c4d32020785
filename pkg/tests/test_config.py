import pytest

from mvdistill.config import (
    apply_env_overrides,
    canonical_config_json,
    config_to_dict,
    parse_config,
    parse_config_dict,
    serialize_config,
)
from mvdistill.errors import ConfigError

MINIMAL = {"generator": {"kind": "direct_image"}, "score": {"source": "gaussian"}}


def write_toml(tmp_path, text):
    path = tmp_path / "run.toml"
    path.write_text(text, encoding="utf-8")
    return path


class TestDefaults:
    def test_minimal_config_fills_documented_defaults(self):
        cfg = parse_config_dict(MINIMAL)
        assert cfg.run.learning_rate == 1e-4
        assert cfg.score.cfg_weight == 7.5
        assert cfg.generator.truncation_psi == 0.8
        assert (cfg.mirror.t_lo, cfg.mirror.t_hi) == (0.70, 0.96)
        assert (cfg.grid.t_lo, cfg.grid.t_hi) == (0.30, 0.80)
        assert cfg.mirror.rank_weights == (1.0, 0.75, 0.5, 0.25)
        assert cfg.schedule.steps == 1000
        assert cfg.score.negative_prompt == ""
        assert cfg.mirror.enabled and not cfg.grid.enabled

    def test_missing_required_key_named(self):
        with pytest.raises(ConfigError, match="generator.kind"):
            parse_config_dict({"score": {"source": "gaussian"}})
        with pytest.raises(ConfigError, match="score.source"):
            parse_config_dict({"generator": {"kind": "direct_image"}})


class TestValidation:
    def test_type_mismatch_names_key(self):
        data = {**MINIMAL, "run": {"learning_rate": "fast"}}
        with pytest.raises(ConfigError, match="learning_rate"):
            parse_config_dict(data)

    def test_unknown_key_rejected(self):
        data = {**MINIMAL, "mirror": {"t_low": 0.5}}
        with pytest.raises(ConfigError, match="mirror.t_low"):
            parse_config_dict(data)

    def test_unknown_section_rejected(self):
        data = {**MINIMAL, "optimizer": {"beta1": 0.9}}
        with pytest.raises(ConfigError, match="optimizer"):
            parse_config_dict(data)

    def test_bool_is_not_an_int(self):
        data = {**MINIMAL, "run": {"iterations": True}}
        with pytest.raises(ConfigError, match="run.iterations"):
            parse_config_dict(data)

    def test_at_least_one_phase(self):
        data = {**MINIMAL, "mirror": {"enabled": False}, "grid": {"enabled": False}}
        with pytest.raises(ConfigError, match="mirror.enabled or grid.enabled"):
            parse_config_dict(data)

    def test_rank_weights_must_match_channels(self):
        data = {**MINIMAL, "generator": {"kind": "direct_image", "channels": 3}}
        with pytest.raises(ConfigError, match="rank_weights"):
            parse_config_dict(data)

    def test_rank_weights_shape_rules(self):
        data = {**MINIMAL, "mirror": {"rank_weights": [0.5, 0.25, 0.1, 0.0]}}
        with pytest.raises(ConfigError, match="mirror.rank_weights"):
            parse_config_dict(data)
        data = {**MINIMAL, "mirror": {"rank_weights": [1.0, 0.5, 0.75, 0.1]}}
        with pytest.raises(ConfigError, match="non-increasing"):
            parse_config_dict(data)

    def test_empty_rank_weights_disable(self):
        cfg = parse_config_dict({**MINIMAL, "mirror": {"rank_weights": []}})
        assert cfg.mirror.rank_weights == ()

    def test_enum_values_checked(self):
        with pytest.raises(ConfigError, match="phase_schedule"):
            parse_config_dict({**MINIMAL, "run": {"phase_schedule": "random"}})
        with pytest.raises(ConfigError, match="grid.tap"):
            parse_config_dict({**MINIMAL, "grid": {"tap": "mid_sr"}})


class TestRoundTrip:
    def test_parse_serialize_parse(self, tmp_path):
        data = {
            "run": {"iterations": 123, "seed": 9, "learning_rate": 3.5e-3},
            "generator": {"kind": "symmetric_toy", "channels": 4, "sr": "conv"},
            "score": {"source": "gmm", "gmm_means": [-2.0, 2.0], "gmm_weights": [0.5, 0.5],
                      "prompt": 'a "quoted" prompt\nwith newline'},
            "mirror": {"t_lo": 0.1, "t_hi": 0.2, "rank_weights": []},
            "grid": {"enabled": True},
        }
        cfg = parse_config_dict(data)
        text = serialize_config(cfg)
        path = write_toml(tmp_path, text)
        cfg2 = parse_config(path)
        assert cfg == cfg2
        assert canonical_config_json(cfg) == canonical_config_json(cfg2)

    def test_file_parse(self, tmp_path):
        path = write_toml(
            tmp_path,
            """
            [generator]
            kind = "direct_image"

            [score]
            source = "gaussian"

            [run]
            iterations = 7
            """,
        )
        cfg = parse_config(path)
        assert cfg.run.iterations == 7

    def test_invalid_toml(self, tmp_path):
        path = write_toml(tmp_path, "not == toml ==")
        with pytest.raises(ConfigError, match="TOML"):
            parse_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            parse_config(tmp_path / "nope.toml")


class TestEnvOverrides:
    def test_override_applies(self, tmp_path):
        path = write_toml(tmp_path, '[generator]\nkind = "direct_image"\n[score]\nsource = "gaussian"\n')
        cfg = parse_config(path, environ={"DISTILL_RUN__SEED": "42", "DISTILL_SCORE__VAR0": "0.25"})
        assert cfg.run.seed == 42
        assert cfg.score.var0 == 0.25

    def test_override_parses_toml_values(self):
        data = apply_env_overrides(
            dict(MINIMAL), environ={"DISTILL_MIRROR__RANK_WEIGHTS": "[1.0, 0.5, 0.5, 0.0]"}
        )
        cfg = parse_config_dict(data)
        assert cfg.mirror.rank_weights == (1.0, 0.5, 0.5, 0.0)

    def test_override_strings_fall_back_raw(self):
        data = apply_env_overrides(dict(MINIMAL), environ={"DISTILL_GENERATOR__SR": "identity"})
        cfg = parse_config_dict(data)
        assert cfg.generator.sr == "identity"

    def test_unrelated_env_ignored(self):
        data = apply_env_overrides(dict(MINIMAL), environ={"PATH": "/bin"})
        assert parse_config_dict(data) == parse_config_dict(MINIMAL)

    def test_malformed_override_name(self):
        with pytest.raises(ConfigError, match="DISTILL_SEED"):
            apply_env_overrides(dict(MINIMAL), environ={"DISTILL_SEED": "1"})


class TestDictEcho:
    def test_config_to_dict_round_trips(self):
        cfg = parse_config_dict(MINIMAL)
        assert parse_config_dict(config_to_dict(cfg)) == cfg

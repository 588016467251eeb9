"""
Tests for configuration loading and validation
"""

import json
import os
import sys

import pytest

# Add parent directory to path to import framework
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from core.config import (
    CONFIG_ENV_VAR,
    DEFAULT_CONFIG_PATH,
    RunConfig,
    from_mapping,
    load_config,
    set_dotted,
)
from error_handling import ConfigurationError


def write_json(path, data):
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


class TestDefaults:
    """Documented defaults"""

    def test_minimal_config_loads(self, tmp_path):
        cfg = load_config(write_json(tmp_path / "min.json", {}))
        assert cfg == RunConfig()
        assert cfg.refresh.window_ms == 64.0
        assert cfg.attack.bandwidth == "500Mbit"
        assert cfg.flip_model.threshold_by_distance == {1: 139_000, 2: 556_000}

    def test_shipped_default_file_matches_models(self):
        assert load_config(DEFAULT_CONFIG_PATH).canonical() == RunConfig().canonical()

    def test_no_path_no_env_uses_defaults(self, monkeypatch, tmp_path):
        monkeypatch.delenv(CONFIG_ENV_VAR, raising=False)
        monkeypatch.chdir(tmp_path)
        assert load_config() == RunConfig()

    def test_environment_variable(self, monkeypatch, tmp_path):
        path = write_json(tmp_path / "env.json", {"seed": 77})
        monkeypatch.setenv(CONFIG_ENV_VAR, str(path))
        assert load_config().seed == 77


class TestValidation:
    """Fail-fast validation naming the offending key"""

    def test_cat_ways_above_ways(self):
        with pytest.raises(ConfigurationError) as info:
            from_mapping({"cache": {"ways": 4, "cat_ways": 8}})
        assert info.value.key == "cache.cat_ways"

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError) as info:
            from_mapping({"attack": {"bandwith": "1Gbit"}})
        assert info.value.key == "attack.bandwith"

    @pytest.mark.parametrize("data,key", [
        ({"attack": {"frame_bytes": 32}}, "attack.frame_bytes"),
        ({"attack": {"bandwidth": "lots"}}, "attack.bandwidth"),
        ({"geometry": {"row_size_bytes": 3000}}, "geometry.row_size_bytes"),
        ({"flip_model": {"threshold_by_distance": {"1": 500, "2": 100}}}, "flip_model.threshold_by_distance"),
        ({"classifier": {"equality_tolerance": 30.0}}, "classifier"),
    ])
    def test_invalid_values(self, data, key):
        with pytest.raises(ConfigurationError) as info:
            from_mapping(data)
        assert info.value.key == key

    def test_json_parse_error_has_line(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text('{\n  "seed": 1,\n  "geometry": {\n}\n,\n', encoding="utf-8")
        with pytest.raises(ConfigurationError) as info:
            load_config(path)
        assert info.value.line is not None

    def test_toml_parse_error_has_line(self, tmp_path):
        path = tmp_path / "broken.toml"
        path.write_text("seed = 1\n[cache\nways = 4\n", encoding="utf-8")
        with pytest.raises(ConfigurationError) as info:
            load_config(path)
        assert info.value.line == 2

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigurationError):
            load_config(tmp_path / "absent.json")

    def test_incompatible_mapping(self):
        cfg = from_mapping({"mapping": {"bank": [[13], [14], [15]]}})
        with pytest.raises(ConfigurationError) as info:
            cfg.build_mapping()
        assert info.value.key == "mapping"


class TestDigest:
    """Canonical form and digest"""

    def test_round_trip_keeps_digest(self, tmp_path):
        cfg = from_mapping({"seed": 3, "policy": {"kind": "adaptive"}, "trr": {"enabled": True}})
        path = write_json(tmp_path / "cfg.json", cfg.canonical())
        assert load_config(path).digest() == cfg.digest()

    def test_key_order_does_not_matter(self):
        a = from_mapping({"seed": 1, "timing": {"t_rp": 15, "t_rcd": 16}})
        b = from_mapping({"timing": {"t_rcd": 16, "t_rp": 15}, "seed": 1})
        assert a.digest() == b.digest()

    def test_digest_changes_with_values(self):
        assert from_mapping({"seed": 1}).digest() != from_mapping({"seed": 2}).digest()

    def test_toml_and_json_agree(self, tmp_path):
        toml_path = tmp_path / "cfg.toml"
        toml_path.write_text('seed = 5\n[policy]\nkind = "fixed_open"\ntimeout_ns = 500.0\n', encoding="utf-8")
        json_path = write_json(tmp_path / "cfg.json", {"seed": 5, "policy": {"kind": "fixed_open", "timeout_ns": 500.0}})
        assert load_config(toml_path).digest() == load_config(json_path).digest()


class TestOverrides:
    """Dotted overrides and report re-execution"""

    def test_overrides_win_over_file(self, tmp_path):
        path = write_json(tmp_path / "cfg.json", {"policy": {"kind": "closed"}})
        cfg = load_config(path, {"policy.kind": "adaptive", "attack.duration_s": 0.5})
        assert cfg.policy.kind == "adaptive"
        assert cfg.attack.duration_s == 0.5

    def test_set_dotted_creates_levels(self):
        assert set_dotted({}, "a.b.c", 1) == {"a": {"b": {"c": 1}}}

    def test_set_dotted_into_scalar(self):
        with pytest.raises(ConfigurationError):
            set_dotted({"seed": 1}, "seed.value", 2)

    def test_report_is_accepted_as_config(self, tmp_path):
        cfg = from_mapping({"seed": 9, "trr": {"enabled": True}})
        report = {"schema_version": "1.0", "command": "simulate", "seed": 9,
                  "config_digest": cfg.digest(), "config": cfg.canonical(), "results": {}}
        path = write_json(tmp_path / "report.json", report)
        assert load_config(path).digest() == cfg.digest()


class TestBuilders:
    """Sections build runtime objects"""

    def test_policy_build(self):
        policy = from_mapping({"policy": {"kind": "fixed_open", "timeout_ns": 250.0}}).policy.build()
        assert policy.kind.value == "fixed_open"
        assert policy.timeout_ns == 250.0

    def test_null_timeout_never_closes(self):
        assert from_mapping({"policy": {"kind": "fixed_open"}}).policy.build().timeout_ns == float("inf")

    def test_double_sided_profile(self):
        cfg = from_mapping({"attack": {"pattern": {"kind": "double_sided", "bank": [0, 0, 1, 0, 3],
                                                   "victim_row": 77}}})
        mapping, geometry = cfg.build_mapping(), cfg.build_geometry()
        profile = cfg.attack.build_profile(mapping, geometry, cfg.seed)
        rows = sorted(mapping.decode(a).row for a in profile.function("nf_hook_slow").addresses)
        assert rows == [76, 78]

    def test_custom_profile_needs_functions(self):
        with pytest.raises(ConfigurationError):
            from_mapping({"attack": {"profile": {"name": "custom"}}})

    def test_udp_profile_lookup(self):
        cfg = from_mapping({"attack": {"hammered_function": "__udp4_lib_lookup",
                                       "profile": {"name": "udp_funccount"}}})
        profile = cfg.attack.build_profile(cfg.build_mapping(), cfg.build_geometry(), 0)
        assert profile.calls_per_packet("__udp4_lib_lookup") == 2
        assert profile.accesses_per_packet == 12

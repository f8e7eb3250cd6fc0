"""Experiment configuration: JSON parsing, presets, validation."""

import json

import pytest

from ensmooth.config import (
    Case1Settings,
    Case2Settings,
    DsSettings,
    ExperimentConfig,
    NetworkSettings,
    SeedBundle,
    TrainSettings,
    desk_config,
)
from ensmooth.core import InvalidInputError


class TestSeedBundle:
    def test_from_index_expands_four_distinct_seeds(self):
        s = SeedBundle.from_index(3)
        assert (s.truth, s.prior, s.noise, s.training) == (13, 14, 15, 16)
        assert len({s.truth, s.prior, s.noise, s.training}) == 4

    def test_negative_index_rejected(self):
        with pytest.raises(InvalidInputError):
            SeedBundle.from_index(-1)


class TestParsing:
    def test_round_trips_through_dict(self):
        cfg = ExperimentConfig(
            preset="gaussian_case1",
            method="dl",
            seeds=SeedBundle(1, 2, 3, 4),
            n_members=50,
            network=NetworkSettings(widths=(32, 16)),
        )
        again = ExperimentConfig.from_dict(cfg.to_dict())
        assert again == cfg

    def test_from_json_file(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({
            "preset": "gaussian_case1",
            "method": "kalman",
            "seeds": {"truth": 1, "prior": 2, "noise": 3, "training": 4},
            "n_members": 20,
        }), encoding="utf-8")
        cfg = ExperimentConfig.from_json(path)
        assert cfg.n_members == 20
        assert cfg.seeds == SeedBundle(1, 2, 3, 4)

    def test_unknown_keys_rejected_with_location(self):
        with pytest.raises(InvalidInputError, match="config"):
            ExperimentConfig.from_dict({"preset": "gaussian_case1", "typo": 1})
        with pytest.raises(InvalidInputError, match="config.train"):
            ExperimentConfig.from_dict(
                {"preset": "gaussian_case1", "train": {"lr": 0.1}})

    def test_invalid_json_reported(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(InvalidInputError, match="not valid JSON"):
            ExperimentConfig.from_json(path)

    def test_lists_become_tuples(self):
        cfg = ExperimentConfig.from_dict({
            "preset": "gaussian_case1",
            "network": {"widths": [32, 16]},
        })
        assert cfg.network.widths == (32, 16)


class TestValidation:
    def test_preset_and_method_whitelists(self):
        with pytest.raises(InvalidInputError):
            ExperimentConfig(preset="case3")
        with pytest.raises(InvalidInputError):
            ExperimentConfig(preset="gaussian_case1", method="enkf")

    def test_scale_minimums(self):
        with pytest.raises(InvalidInputError):
            ExperimentConfig(preset="gaussian_case1", n_members=1)
        with pytest.raises(InvalidInputError):
            ExperimentConfig(preset="gaussian_case1", nx=1)
        with pytest.raises(InvalidInputError):
            ExperimentConfig(preset="gaussian_case1", workers=0)

    def test_settings_validation_bubbles_up(self):
        with pytest.raises(InvalidInputError):
            TrainSettings(learning_rate=-1.0)
        with pytest.raises(InvalidInputError):
            NetworkSettings(widths=())
        with pytest.raises(InvalidInputError):
            DsSettings(distance_threshold=2.0)
        with pytest.raises(InvalidInputError):
            Case1Settings(n_kl=0)
        with pytest.raises(InvalidInputError):
            Case1Settings(release_edges=(1.0, 2.0))
        with pytest.raises(InvalidInputError):
            Case2Settings(k_bounds=(1.0, 0.5))


class TestResolution:
    def test_preset_scale_defaults_fill_in(self):
        cfg = ExperimentConfig(preset="gaussian_case1").resolved()
        assert (cfg.nx, cfg.ny, cfg.n_members, cfg.n_iter) == (81, 41, 500, 5)
        cfg2 = ExperimentConfig(preset="channel_case2").resolved()
        assert (cfg2.nx, cfg2.ny, cfg2.n_members, cfg2.n_iter) == (41, 41, 499, 1)

    def test_explicit_values_win(self):
        cfg = ExperimentConfig(preset="gaussian_case1", nx=41, ny=21).resolved()
        assert (cfg.nx, cfg.ny) == (41, 21)
        assert cfg.n_members == 500

    def test_custom_preset_requires_explicit_scale(self):
        with pytest.raises(InvalidInputError, match="custom preset requires"):
            ExperimentConfig(preset="custom").resolved()
        cfg = ExperimentConfig(preset="custom", nx=5, ny=5,
                               n_members=10, n_iter=1)
        assert cfg.resolved() is cfg

    def test_runnable_requires_seeds(self):
        with pytest.raises(InvalidInputError, match="seeds"):
            ExperimentConfig(preset="gaussian_case1").runnable()
        cfg = ExperimentConfig(preset="gaussian_case1",
                               seeds=SeedBundle(1, 2, 3, 4)).runnable()
        assert cfg.seeds is not None


class TestDeskConfig:
    def test_case1_desk_scale(self):
        cfg = desk_config("gaussian_case1", "kalman", SeedBundle.from_index(0))
        assert (cfg.nx, cfg.ny, cfg.n_members, cfg.n_iter) == (41, 21, 200, 4)
        assert cfg.case1.n_kl == 50

    def test_case2_desk_scale(self):
        cfg = desk_config("channel_case2", "dl", SeedBundle.from_index(1))
        resolved = cfg.resolved()
        assert (resolved.nx, resolved.ny) == (41, 41)
        assert resolved.n_members == 150
        assert resolved.n_iter == 1

    def test_seed_dict_accepted(self):
        cfg = desk_config("gaussian_case1", "kalman",
                          {"truth": 1, "prior": 2, "noise": 3, "training": 4})
        assert cfg.seeds == SeedBundle(1, 2, 3, 4)

    def test_no_desk_scale_for_custom(self):
        with pytest.raises(InvalidInputError):
            desk_config("custom", "kalman", SeedBundle.from_index(0))


class TestCase2Settings:
    def test_obs_times_ladder(self):
        s = Case2Settings(obs_dt=0.5, n_obs_times=4)
        assert s.obs_times() == (0.5, 1.0, 1.5, 2.0)

import pytest
import yaml

from robustdistill.config import (
    ExperimentConfig,
    apply_overrides,
    config_hash,
    parse_config,
    serialize_config,
)
from robustdistill.errors import InvalidConfigError
from robustdistill.presets import preset, preset_config

MINIMAL = """
schema_version: 1
dataset: {name: synthetic-moons, n: 200, seed: 0}
teacher: {checkpoint: teacher.ckpt}
student: {model: {family: mlp-relu, width: 8, depth: 1}}
variants: [KD]
loss: {lambda_ce: 0.5, lambda_kl: 0.5}
optimizer: {learning_rate: 0.1, momentum: 0.9, epochs: 2, batch_size: 32}
evaluation: {radii: [0.05, 0.1], steps: 5}
seeds: [0]
output_dir: out
"""


class TestParse:
    def test_round_trip_field_by_field(self):
        cfg = parse_config(MINIMAL)
        again = parse_config(serialize_config(cfg))
        assert cfg == again
        assert config_hash(cfg) == config_hash(again)

    def test_unknown_top_level_key(self):
        raw = yaml.safe_load(MINIMAL)
        raw["lamda"] = 3  # typo must be fatal
        with pytest.raises(InvalidConfigError):
            parse_config(yaml.safe_dump(raw))

    def test_unknown_nested_keys(self):
        for path, val in (("loss", {"lamda_iga": 1}), ("optimizer", {"lr": 0.1}),
                          ("evaluation", {"radius": [1]}), ("student", {"arch": "x"})):
            raw = yaml.safe_load(MINIMAL)
            raw[path] = {**raw[path], **val} if isinstance(raw[path], dict) else val
            with pytest.raises(InvalidConfigError):
                parse_config(yaml.safe_dump(raw))

    def test_missing_section(self):
        raw = yaml.safe_load(MINIMAL)
        del raw["optimizer"]
        with pytest.raises(InvalidConfigError):
            parse_config(yaml.safe_dump(raw))

    def test_schema_version_pinned(self):
        raw = yaml.safe_load(MINIMAL)
        raw["schema_version"] = 2
        with pytest.raises(InvalidConfigError):
            parse_config(yaml.safe_dump(raw))

    def test_radii_must_increase(self):
        raw = yaml.safe_load(MINIMAL)
        raw["evaluation"]["radii"] = [0.1, 0.05]
        with pytest.raises(InvalidConfigError):
            parse_config(yaml.safe_dump(raw))

    def test_unknown_variant(self):
        raw = yaml.safe_load(MINIMAL)
        raw["variants"] = ["KD", "TRADES"]
        with pytest.raises(InvalidConfigError):
            parse_config(yaml.safe_dump(raw))

    def test_adversarial_variants_need_train_attack(self):
        raw = yaml.safe_load(MINIMAL)
        raw["variants"] = ["ARD"]
        with pytest.raises(InvalidConfigError):
            parse_config(yaml.safe_dump(raw))
        raw["train_attack"] = {"epsilon": 0.05, "steps": 3}
        parse_config(yaml.safe_dump(raw))

    def test_lambda_iga_exclusivity(self):
        raw = yaml.safe_load(MINIMAL)
        raw["loss"]["lambda_iga"] = 0.1
        raw["loss"]["iga_coefficient"] = 10
        with pytest.raises(InvalidConfigError):
            parse_config(yaml.safe_dump(raw))

    def test_teacher_source_exclusivity(self):
        raw = yaml.safe_load(MINIMAL)
        raw["teacher"] = {}
        with pytest.raises(InvalidConfigError):
            parse_config(yaml.safe_dump(raw))


class TestTypedViews:
    def test_iga_coefficient_is_batch_relative(self):
        raw = yaml.safe_load(MINIMAL)
        raw["variants"] = ["KDIGA"]
        raw["loss"]["iga_coefficient"] = 10
        raw["optimizer"]["batch_size"] = 125
        cfg = parse_config(yaml.safe_dump(raw))
        assert cfg.loss_config("KDIGA").lambda_iga == 0.08

    def test_variant_fanout_zeroes_terms(self):
        raw = yaml.safe_load(MINIMAL)
        raw["variants"] = ["ST", "KD", "KDIGA"]
        raw["loss"]["iga_coefficient"] = 10
        cfg = parse_config(yaml.safe_dump(raw))
        assert cfg.loss_config("ST").lambda_kl == 0
        assert cfg.loss_config("KD").lambda_iga == 0
        assert cfg.loss_config("KDIGA").lambda_iga > 0

    def test_optimizer_config_view(self):
        cfg = parse_config(MINIMAL)
        opt = cfg.optimizer_config(seed=7)
        assert opt.seed == 7
        assert opt.learning_rate == 0.1


class TestPathValidation:
    def test_missing_teacher_checkpoint_rejected_at_run_time(self, tmp_path):
        from robustdistill.config import validate_paths

        cfg = parse_config(MINIMAL)  # references teacher.ckpt which does not exist
        with pytest.raises(InvalidConfigError):
            validate_paths(cfg)

    def test_existing_paths_pass(self, tmp_path):
        from robustdistill.config import validate_paths

        ckpt = tmp_path / "teacher.ckpt"
        ckpt.write_bytes(b"x")
        raw = yaml.safe_load(MINIMAL)
        raw["teacher"] = {"checkpoint": str(ckpt)}
        validate_paths(parse_config(yaml.safe_dump(raw)))


class TestOverrides:
    def test_flag_beats_file(self):
        raw = yaml.safe_load(MINIMAL)
        apply_overrides(raw, {"optimizer.epochs": 9, "output_dir": "elsewhere"})
        cfg = parse_config(yaml.safe_dump(raw))
        assert cfg.optimizer["epochs"] == 9
        assert cfg.output_dir == "elsewhere"

    def test_override_introducing_unknown_key_is_fatal(self):
        raw = yaml.safe_load(MINIMAL)
        apply_overrides(raw, {"optimizer.learning_rte": 0.5})
        with pytest.raises(InvalidConfigError):
            parse_config(yaml.safe_dump(raw))


class TestPresets:
    def test_cifar_preset_reproduces_reference_hyperparameters(self):
        cfg = preset_config("cifar10")
        opt = cfg.optimizer
        assert opt["epochs"] == 200
        assert opt["batch_size"] == 125
        assert opt["learning_rate"] == 0.1
        assert opt["milestones"] == [100, 150]
        assert opt["decay_factor"] == 0.1
        assert opt["weight_decay"] == 0.0002
        assert opt["momentum"] == 0.9
        assert cfg.loss["lambda_ce"] == 0.5
        assert cfg.loss["lambda_kl"] == 0.5
        assert cfg.loss["temperature"] == 1.0
        assert cfg.loss["iga_coefficient"] == 10.0
        assert cfg.evaluation["steps"] == 20
        assert cfg.evaluation["radii"][-1] == pytest.approx(8 / 255)
        # the preset must appear verbatim in the serialized snapshot
        snapshot = serialize_config(cfg)
        reparsed = parse_config(snapshot)
        assert reparsed.optimizer == opt

    def test_all_presets_validate(self):
        for name in ("cifar10", "digits", "moons"):
            assert isinstance(preset_config(name), ExperimentConfig)

    def test_preset_returns_fresh_copy(self):
        a = preset("digits")
        a["optimizer"]["epochs"] = 1
        b = preset("digits")
        assert b["optimizer"]["epochs"] != 1

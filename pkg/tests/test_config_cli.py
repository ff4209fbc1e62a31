import csv
import json
import math
from pathlib import Path

import numpy as np
import pytest

from rotgate import jsonio
from rotgate.cli import main
from rotgate.config import (
    BenchConfig,
    SEED_ENV_VAR,
    config_from_dict,
    config_to_dict,
    load_config,
)
from rotgate.errors import InvalidConfigError
from rotgate.residual import TrainedModel


def small_config_doc(**overrides):
    doc = {
        "seed": 7,
        "data": {
            "n_identities": 16,
            "obs_per_identity": 4,
            "noise_sigma": 0.03,
            "identity_scale": 0.25,
        },
        "backbone": {"dim": 16},
        "train": {"epochs": 12, "lr_schedule": [[8, 10.0]]},
    }
    doc.update(overrides)
    return doc


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    jsonio.dump(small_config_doc(), path)
    return path


class TestConfig:
    def test_defaults_round_trip(self):
        cfg = BenchConfig()
        doc = config_to_dict(cfg)
        rebuilt = config_from_dict(json.loads(json.dumps(doc)))
        assert config_to_dict(rebuilt) == doc

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(InvalidConfigError, match="unknown config key turbo"):
            config_from_dict({"turbo": True})

    def test_unknown_nested_key_rejected(self):
        with pytest.raises(InvalidConfigError, match="unknown config key data.pose_count"):
            config_from_dict({"data": {"pose_count": 3}})

    def test_bad_gate_kind_rejected(self):
        with pytest.raises(InvalidConfigError, match="gating.kind"):
            config_from_dict({"gating": {"kind": "cosine"}})

    def test_env_seed_override(self, tmp_path, monkeypatch):
        path = tmp_path / "config.json"
        jsonio.dump(small_config_doc(), path)
        monkeypatch.setenv(SEED_ENV_VAR, "4242")
        assert load_config(path).seed == 4242
        monkeypatch.setenv(SEED_ENV_VAR, "not-a-number")
        with pytest.raises(InvalidConfigError):
            load_config(path)

    def test_load_without_file_uses_defaults(self, monkeypatch):
        monkeypatch.delenv(SEED_ENV_VAR, raising=False)
        cfg = load_config(None)
        assert cfg.seed == BenchConfig().seed


class TestJsonIo:
    def test_float_round_trip_is_exact(self):
        values = [0.1, 1.0 / 3.0, math.pi, 1e-300, -2.5e17, 0.0]
        text = jsonio.dumps({"values": values})
        back = json.loads(text)["values"]
        assert back == values
        assert all(isinstance(v, float) for v in back)

    def test_large_magnitude_floats(self):
        rng = np.random.default_rng(123)
        values = [float(x) for x in rng.standard_normal(200) * 10.0 ** rng.integers(-20, 20, 200)]
        back = json.loads(jsonio.dumps(values))
        assert back == values

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            jsonio.dumps({"x": float("nan")})

    def test_compact_lines(self):
        line = jsonio.dumps_compact({"id": 3, "pose": [0.5, 0.0, 0.0]})
        assert "\n" not in line
        assert json.loads(line) == {"id": 3, "pose": [0.5, 0.0, 0.0]}


class TestCliPrintConfig:
    def test_prints_defaults(self, capsys):
        assert main(["--print-config"]) == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed == json.loads(json.dumps(config_to_dict(BenchConfig())))


class TestCliPipeline:
    def test_gen_is_byte_deterministic(self, tmp_path, config_file):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["gen", "--config", str(config_file), "--out", str(out_a)]) == 0
        assert main(["gen", "--config", str(config_file), "--out", str(out_b)]) == 0
        for name in ("observations.jsonl", "meta.json"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    def test_full_pipeline(self, tmp_path, config_file):
        data_dir = tmp_path / "data"
        model_path = tmp_path / "model.json"
        report_path = tmp_path / "report.json"
        curve_path = tmp_path / "curve.csv"

        assert main(["gen", "--config", str(config_file), "--out", str(data_dir)]) == 0
        meta = jsonio.load(data_dir / "meta.json")
        assert not set(meta["train_ids"]) & set(meta["test_ids"])

        lines = (data_dir / "observations.jsonl").read_text().splitlines()
        record = json.loads(lines[0])
        assert set(record) == {"id", "pose", "points"}
        assert len(record["pose"]) == 3
        assert len(record["points"]) == 32 * 3

        assert (
            main(
                [
                    "train",
                    "--config",
                    str(config_file),
                    "--data",
                    str(data_dir),
                    "--out",
                    str(model_path),
                ]
            )
            == 0
        )
        model = TrainedModel.load(model_path)
        assert model.loss_history
        assert model.backbone is not None

        assert (
            main(
                [
                    "eval",
                    "--config",
                    str(config_file),
                    "--model",
                    str(model_path),
                    "--data",
                    str(data_dir),
                    "--out",
                    str(report_path),
                    "--csv",
                    str(curve_path),
                ]
            )
            == 0
        )
        report = jsonio.load(report_path)
        assert 0.0 <= report["eer"] <= 1.0
        assert "0.01" in report["tar_at_far"]

        with open(curve_path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["threshold", "far", "frr", "tar"]
        assert rows[-1][0] == "inf"
        assert float(rows[1][1]) == 1.0  # accept everything at the lowest threshold

    def test_end_to_end_flag(self, tmp_path, config_file):
        data_dir = tmp_path / "data"
        model_path = tmp_path / "model_e2e.json"
        main(["gen", "--config", str(config_file), "--out", str(data_dir)])
        assert (
            main(
                [
                    "train",
                    "--config",
                    str(config_file),
                    "--data",
                    str(data_dir),
                    "--out",
                    str(model_path),
                    "--end-to-end",
                ]
            )
            == 0
        )
        model = TrainedModel.load(model_path)
        assert model.backbone.trainable

    def test_ablate_csv(self, tmp_path):
        config_path = tmp_path / "config.json"
        doc = small_config_doc()
        doc["experiment"] = {"arms": ["backbone", "residual:abs_sin"]}
        jsonio.dump(doc, config_path)
        out_path = tmp_path / "summary.csv"
        assert (
            main(
                [
                    "ablate",
                    "--config",
                    str(config_path),
                    "--seeds",
                    "2",
                    "--out",
                    str(out_path),
                ]
            )
            == 0
        )
        with open(out_path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["arm", "gate", "seed", "eer", "tar@1e-2", "tar@1e-3", "rank1", "rank5"]
        assert len(rows) == 1 + 2 * 2
        arms = {(row[0], row[1]) for row in rows[1:]}
        assert arms == {("backbone", "none"), ("residual", "abs_sin")}

    def test_opt_demo_noiseless(self, tmp_path):
        out_path = tmp_path / "trace.csv"
        assert (
            main(["opt-demo", "--trials", "3", "--noise", "0.0", "--out", str(out_path)])
            == 0
        )
        with open(out_path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["trial", "iter", "u", "grad_norm", "geodesic_error"]
        assert {row[0] for row in rows[1:]} == {"0", "1", "2"}
        final_errors = {}
        for row in rows[1:]:
            final_errors[row[0]] = float(row[4])
        assert all(err <= 1e-6 for err in final_errors.values())

    def test_opt_demo_noisy_stays_near_truth(self, tmp_path):
        out_path = tmp_path / "trace.csv"
        assert (
            main(["opt-demo", "--trials", "2", "--noise", "0.01", "--out", str(out_path)])
            == 0
        )
        with open(out_path, newline="") as fh:
            rows = list(csv.reader(fh))
        final_errors = {}
        for row in rows[1:]:
            final_errors[row[0]] = float(row[4])
        # The noisy optimum sits O(noise) away from the generating rotation.
        assert all(err <= 0.05 for err in final_errors.values())

    def test_unknown_config_key_fails_cleanly(self, tmp_path, capsys):
        config_path = tmp_path / "bad.json"
        jsonio.dump({"sneaky": 1}, config_path)
        assert main(["gen", "--config", str(config_path), "--out", str(tmp_path / "x")]) == 2
        assert "unknown config key" in capsys.readouterr().err

    def test_no_command_prints_help(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().out.lower()

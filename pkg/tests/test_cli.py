"""CLI contracts: exit codes, config plumbing, determinism, report files."""

import json

import numpy as np
import pytest

from emlang.cli import main, probe_serve_main
from emlang.corpus import encode_pgm


def write_image_folder(folder, n_classes=10, per_class=2, seed=0):
    folder.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = ["filename,category"]
    for cls in range(n_classes):
        for k in range(per_class):
            name = f"img_{cls}_{k}.pgm"
            img = rng.random((16, 16)).astype(np.float32)
            img[cls % 16, :] = 1.0     # a per-class stripe so classes differ
            (folder / name).write_bytes(encode_pgm(img))
            rows.append(f"{name},{cls}")
    (folder / "labels.csv").write_text("\n".join(rows) + "\n")
    return folder


def tiny_config(folder, **over):
    cfg = {
        "dataset": str(folder), "vocab_size": 6, "min_len": 2, "max_len": 3,
        "epochs": 1, "batches_per_epoch": 3, "eval_batches": 2,
        "enc_channels": [4, 8, 8, 8], "feat_dim": 16, "embed_dim": 8,
        "speaker_hidden": 16, "listener_hidden": 16, "drawer_channels": [8, 8],
        "seed": 0,
    }
    cfg.update(over)
    return cfg


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_run")
    folder = write_image_folder(root / "data")
    config_path = root / "config.json"
    config_path.write_text(json.dumps(tiny_config(folder)))
    out = root / "run"
    rc = main(["train", "--config", str(config_path), "--out", str(out)])
    assert rc == 0
    return {"root": root, "folder": folder, "config": config_path, "out": out}


class TestTrain:
    def test_missing_config_file_exits_2(self, tmp_path, capsys):
        rc = main(["train", "--config", str(tmp_path / "nope.json"),
                   "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "does not exist" in capsys.readouterr().err

    def test_invalid_json_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        rc = main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 2
        assert "not valid JSON" in capsys.readouterr().err

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"does_not_exist": 1}))
        rc = main(["train", "--config", str(bad), "--out", str(tmp_path / "o")])
        assert rc == 2

    def test_artifacts_and_manifest(self, trained_run):
        out = trained_run["out"]
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "train"
        assert manifest["seed"] == 0
        assert len(manifest["config_hash"]) == 8
        for name in manifest["artifacts"]:
            assert (out / name).exists(), name
        assert "checkpoint/tensors.bin" in manifest["artifacts"]

    def test_metrics_are_ndjson(self, trained_run):
        lines = (trained_run["out"] / "metrics.ndjson").read_text().splitlines()
        records = [json.loads(line) for line in lines]
        assert [r["epoch"] for r in records] == [0]
        assert 0.0 <= records[0]["train_guess_acc"] <= 1.0

    def test_same_seed_identical_metrics(self, trained_run, tmp_path):
        for sub in ("a", "b"):
            rc = main(["train", "--config", str(trained_run["config"]),
                       "--out", str(tmp_path / sub), "--seed", "7"])
            assert rc == 0
        assert (tmp_path / "a" / "metrics.ndjson").read_bytes() == \
            (tmp_path / "b" / "metrics.ndjson").read_bytes()

    def test_flag_overrides_config_seed(self, trained_run, tmp_path):
        rc = main(["train", "--config", str(trained_run["config"]),
                   "--out", str(tmp_path / "o"), "--seed", "3"])
        assert rc == 0
        meta = json.loads((tmp_path / "o" / "checkpoint" / "meta.json").read_text())
        assert meta["config"]["seed"] == 3


class TestEval:
    def test_unknown_suite_exits_2(self, trained_run, capsys):
        rc = main(["eval", "--checkpoint", str(trained_run["out"] / "checkpoint"),
                   "--suite", "nonsense"])
        assert rc == 2

    def test_missing_checkpoint_exits_2(self, tmp_path, capsys):
        rc = main(["eval", "--checkpoint", str(tmp_path / "no_ckpt"),
                   "--suite", "guess"])
        assert rc == 2
        assert "checkpoint" in capsys.readouterr().err

    def test_guess_suite_writes_reports(self, trained_run, tmp_path, capsys):
        out = tmp_path / "reports"
        rc = main(["eval", "--checkpoint", str(trained_run["out"] / "checkpoint"),
                   "--suite", "guess", "--out", str(out)])
        assert rc == 0
        csvs = list(out.glob("guess_*_s0.csv"))
        assert len(csvs) == 1
        body = csvs[0].read_text().splitlines()
        assert body[0] == "split,batches,accuracy"
        for line in body[1:]:
            assert 0.0 <= float(line.split(",")[-1]) <= 1.0
        assert "accuracy" in capsys.readouterr().out
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "eval:guess"

    def test_semantics_suite_reports_both_splits(self, trained_run, tmp_path):
        out = tmp_path / "reports"
        rc = main(["eval", "--checkpoint", str(trained_run["out"] / "checkpoint"),
                   "--suite", "semantics", "--out", str(out)])
        assert rc == 0
        body = next(out.glob("semantics_*.csv")).read_text()
        assert "train" in body and "test" in body

    def test_patterns_suite_lists_rules(self, trained_run, tmp_path):
        out = tmp_path / "reports"
        rc = main(["eval", "--checkpoint", str(trained_run["out"] / "checkpoint"),
                   "--suite", "patterns", "--out", str(out), "--dataset",
                   str(trained_run["folder"])])
        assert rc == 0
        header = next(out.glob("patterns_*.csv")).read_text().splitlines()[0]
        assert header == "pattern,support,feature_tag,total,cr"


class TestSpeak:
    def test_prints_message_of_requested_length(self, trained_run, capsys):
        image = trained_run["folder"] / "img_3_0.pgm"
        args = ["speak", "--checkpoint", str(trained_run["out"] / "checkpoint"),
                "--image", str(image), "--length", "3"]
        assert main(args) == 0
        first = capsys.readouterr().out.strip()
        assert len(first) == 3
        assert set(first) <= set("012345")
        assert main(args) == 0
        assert capsys.readouterr().out.strip() == first

    def test_out_of_range_length_exits_2(self, trained_run, capsys):
        rc = main(["speak", "--checkpoint", str(trained_run["out"] / "checkpoint"),
                   "--image", str(trained_run["folder"] / "img_0_0.pgm"),
                   "--length", "99"])
        assert rc == 2

    def test_vocab_mismatch_exits_2(self, trained_run, capsys):
        rc = main(["speak", "--checkpoint", str(trained_run["out"] / "checkpoint"),
                   "--image", str(trained_run["folder"] / "img_0_0.pgm"),
                   "--length", "3", "--vocab", "26"])
        assert rc == 2
        assert "vocabulary" in capsys.readouterr().err

    def test_missing_image_exits_2(self, trained_run):
        rc = main(["speak", "--checkpoint", str(trained_run["out"] / "checkpoint"),
                   "--image", "/no/such/image.pgm", "--length", "3"])
        assert rc == 2


class TestParsing:
    def test_no_command_exits_2(self):
        assert main([]) == 2

    def test_help_exits_0(self):
        assert main(["--help"]) == 0

    def test_subcommand_help_exits_0(self):
        assert main(["train", "--help"]) == 0

    def test_probe_serve_help_exits_0(self):
        assert probe_serve_main(["--help"]) == 0

    def test_probe_serve_requires_checkpoint(self):
        assert probe_serve_main([]) == 2

    def test_workdir_resolves_relative_paths(self, trained_run, tmp_path, capsys):
        rc = main(["speak", "--workdir", str(trained_run["root"]),
                   "--checkpoint", "run/checkpoint",
                   "--image", "data/img_1_0.pgm", "--length", "2"])
        assert rc == 0
        assert len(capsys.readouterr().out.strip()) == 2

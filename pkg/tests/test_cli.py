import csv
import json

import numpy as np
import pytest

import sl3d.cli as cli
from sl3d import gss
from sl3d import synthdata as sd
from sl3d.config import PipelineConfig, dump_config, load_config
from sl3d.errors import ConfigError
from sl3d.pointset import PointCloud, save_cloud


FAST = ["--set=sample_count=96", "--set=epochs=3", "--set=K=3",
        "--set=hidden_widths=16", "--set=embedding_dim=24", "--set=lr=0.01"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, small_object_set):
    root = tmp_path_factory.mktemp("cli")
    samples, labels = small_object_set
    obj_dir = root / "objects"
    obj_dir.mkdir()
    for s in samples:
        save_cloud(PointCloud(s.points, id=s.source_id),
                   obj_dir / f"{s.source_id}.xyz")
    with open(root / "gt.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "class"])
        for s, y in zip(samples, labels):
            w.writerow([s.source_id, y])

    scene_dir = root / "scenes"
    scene_dir.mkdir()
    specs = [sd.ShapeSpec("sphere", size=0.4, points=250,
                          translation=(2, 0, 1), noise_sigma=0.002),
             sd.ShapeSpec("box", size=0.6, points=250,
                          translation=(-2, 0, 1), noise_sigma=0.002)]
    scene, gt = sd.gen_scene(specs, seed=3, floor_size=8.0, floor_points=1000)
    save_cloud(scene, scene_dir / "scene-3.xyz")
    with open(root / "gt_boxes.jsonl", "w") as fh:
        for box, cls in gt:
            p = gss.Proposal(box, np.arange(1), score=1.0, scene_id="scene-3")
            fh.write(gss.proposal_to_json(p, cls) + "\n")

    # train once; several command tests reuse the checkpoint
    train_dir = root / "train"
    assert cli.main(FAST + ["selflabel", "--objects", str(obj_dir),
                            "--out", str(train_dir),
                            "--gt-labels", str(root / "gt.csv")]) == 0
    return root


class TestConfigModule:
    def test_defaults_roundtrip(self, tmp_path):
        cfg = PipelineConfig()
        path = tmp_path / "c.cfg"
        path.write_text(dump_config(cfg))
        assert load_config(path) == cfg

    def test_overrides_win(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("K = 5\nlr = 0.2  # comment\n")
        cfg = load_config(path, {"K": "7"})
        assert cfg.K == 7 and cfg.lr == 0.2

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "c.cfg"
        path.write_text("frobnicate = 1\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            load_config(None, {"epochs": "many"})

    def test_adapters(self):
        cfg = PipelineConfig(hidden_widths="8,16", knn_k="3,9",
                             gss_max_plane_dist=-1.0)
        assert cfg.train_config().hidden_widths == (8, 16)
        assert cfg.knn_k_values() == [3, 9]
        assert cfg.gss_params().max_plane_dist is None


class TestSelflabel:
    def test_artifacts(self, workspace):
        out = workspace / "train"
        for name in ("model.ckpt", "labels.csv", "metrics.csv",
                     "resolved.config", "training.png", "occupancy.png"):
            assert (out / name).exists(), name
        header = (out / "metrics.csv").read_text().splitlines()[0]
        assert header == "epoch,mean_loss,lr,label_entropy,purity"
        rows = (out / "labels.csv").read_text().splitlines()
        assert rows[0] == "sample_id,pseudo_label"
        assert len(rows) == 25  # header + 24 objects


class TestExportLabels:
    def test_matches_training_labels(self, workspace):
        out = workspace / "export"
        assert cli.main(FAST + ["export-labels",
                                "--checkpoint", str(workspace / "train/model.ckpt"),
                                "--objects", str(workspace / "objects"),
                                "--out", str(out)]) == 0
        assert ((out / "labels.csv").read_text()
                == (workspace / "train/labels.csv").read_text())


class TestPropose:
    def test_jsonl_output(self, workspace, capsys):
        out = workspace / "props"
        assert cli.main(["propose", "--scenes", str(workspace / "scenes"),
                         "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert "1 scenes," in printed and "proposals/scene" in printed
        lines = (out / "scene-3.proposals.jsonl").read_text().splitlines()
        assert lines
        for line in lines:
            p, cls = gss.proposal_from_json(line)
            assert p.scene_id == "scene-3" and cls is None

    def test_corrupt_scene_exits_3_without_output(self, workspace, tmp_path,
                                                  capsys):
        bad_dir = tmp_path / "bad"
        bad_dir.mkdir()
        (bad_dir / "broken.xyz").write_text("1 2\n")
        out = tmp_path / "out"
        assert cli.main(["propose", "--scenes", str(bad_dir),
                         "--out", str(out)]) == 3
        assert not (out / "broken.proposals.jsonl").exists()
        assert "data error" in capsys.readouterr().err


class TestEval:
    def test_purity(self, workspace, tmp_path):
        out = tmp_path / "purity"
        assert cli.main(["eval", "purity",
                         "--labels", str(workspace / "train/labels.csv"),
                         "--gt", str(workspace / "gt.csv"),
                         "--out", str(out)]) == 0
        data = json.loads((out / "metrics.json").read_text())
        assert data["metric"] == "mean_purity"
        assert 0.0 < data["value"] <= 1.0
        assert (out / "metrics.txt").exists()
        assert (out / "occupancy.png").exists()

    def test_det_perfect(self, workspace, tmp_path):
        out = tmp_path / "det"
        assert cli.main(["eval", "det",
                         "--predictions", str(workspace / "gt_boxes.jsonl"),
                         "--gt", str(workspace / "gt_boxes.jsonl"),
                         "--out", str(out)]) == 0
        data = json.loads((out / "metrics.json").read_text())
        assert data["value"] == 1.0
        assert (out / "pr_curves.png").exists()

    def test_det_missing_class_is_data_error(self, workspace, tmp_path):
        bad = tmp_path / "noclass.jsonl"
        p = gss.Proposal(gss.Box3((0, 0, 0), (1, 1, 1)), np.arange(1),
                         scene_id="scene-3")
        bad.write_text(gss.proposal_to_json(p) + "\n")
        assert cli.main(["eval", "det", "--predictions", str(bad),
                         "--gt", str(workspace / "gt_boxes.jsonl"),
                         "--out", str(tmp_path / "out")]) == 3

    def test_seg(self, tmp_path):
        rng = np.random.default_rng(0)
        gt = rng.integers(0, 3, 150)
        pred_dir = tmp_path / "pred"
        gt_dir = tmp_path / "gt"
        pred_dir.mkdir()
        gt_dir.mkdir()
        for d, arr in ((pred_dir, gt), (gt_dir, gt)):
            (d / "sc.labels.txt").write_text("\n".join(map(str, arr)) + "\n")
        out = tmp_path / "seg"
        assert cli.main(["eval", "seg", "--predictions", str(pred_dir),
                         "--gt", str(gt_dir), "--out", str(out)]) == 0
        assert json.loads((out / "metrics.json").read_text())["value"] == 1.0

    def test_unknown_task_is_usage_error(self, workspace, tmp_path):
        with pytest.raises(SystemExit) as exc:
            cli.main(["eval", "frobnicate", "--out", str(tmp_path / "x")])
        assert exc.value.code == 2


class TestKnn:
    def test_two_result_rows(self, workspace, tmp_path, capsys):
        out = tmp_path / "knn"
        args = (FAST + ["--set=knn_k=5,10", "knn",
                        "--checkpoint", str(workspace / "train/model.ckpt"),
                        "--train-objects", str(workspace / "objects"),
                        "--test-objects", str(workspace / "objects"),
                        "--train-gt", str(workspace / "gt.csv"),
                        "--test-gt", str(workspace / "gt.csv"),
                        "--out", str(out)])
        assert cli.main(args) == 0
        printed = capsys.readouterr().out
        assert "5-NN top1" in printed and "10-NN top1" in printed
        data = json.loads((out / "metrics.json").read_text())
        assert set(data["per_class"]) == {"5", "10"}


class TestFinetune:
    def test_runs_and_reports_accuracy(self, workspace, tmp_path):
        out = tmp_path / "ft"
        args = (FAST + ["finetune",
                        "--checkpoint", str(workspace / "train/model.ckpt"),
                        "--train-objects", str(workspace / "objects"),
                        "--test-objects", str(workspace / "objects"),
                        "--train-gt", str(workspace / "gt.csv"),
                        "--test-gt", str(workspace / "gt.csv"),
                        "--out", str(out)])
        assert cli.main(args) == 0
        assert (out / "finetuned.ckpt").exists()
        data = json.loads((out / "metrics.json").read_text())
        assert 0.0 <= data["value"] <= 1.0

    def test_missing_label_is_data_error(self, workspace, tmp_path):
        sparse = tmp_path / "sparse.csv"
        sparse.write_text("sample_id,class\nplane-0,0\n")
        args = (FAST + ["finetune",
                        "--train-objects", str(workspace / "objects"),
                        "--test-objects", str(workspace / "objects"),
                        "--train-gt", str(sparse),
                        "--test-gt", str(sparse),
                        "--out", str(tmp_path / "out")])
        assert cli.main(args) == 3


class TestErrors:
    def test_unknown_config_key_exit_2(self, workspace, tmp_path, capsys):
        assert cli.main(["--set=bogus=1", "propose",
                         "--scenes", str(workspace / "scenes"),
                         "--out", str(tmp_path / "x")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_bad_set_syntax_exit_2(self, workspace, tmp_path):
        assert cli.main(["--set=epochs", "propose",
                         "--scenes", str(workspace / "scenes"),
                         "--out", str(tmp_path / "x")]) == 2

    def test_missing_checkpoint_exit_3(self, workspace, tmp_path):
        assert cli.main(["export-labels", "--checkpoint",
                         str(tmp_path / "nope.ckpt"),
                         "--objects", str(workspace / "objects"),
                         "--out", str(tmp_path / "x")]) == 3

    def test_resolved_config_written(self, workspace):
        text = (workspace / "train" / "resolved.config").read_text()
        cfg = load_config(workspace / "train" / "resolved.config")
        assert "epochs = 3" in text
        assert cfg.K == 3

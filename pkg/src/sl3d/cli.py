"""Batch command-line front end: proposal generation, self-label training,
label export, finetuning, and evaluation.

Subcommands: propose | selflabel | export-labels | eval | finetune | knn.
Every command is deterministic given identical inputs and seed, writes outputs
atomically, and drops its fully-resolved config next to its outputs.
Exit codes: 0 ok, 2 usage/config error, 3 data error, 4 internal invariant.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import evalmetrics as ev
from . import gss
from . import report
from . import selflabel as sl
from .config import PipelineConfig, dump_config, load_config
from .errors import ConfigError, DataError, InternalInvariantError, SL3DError
from .pointset import FORMATS, load_cloud, normalize_object, sample_points
from .trainloop import finetune, train_selflabel

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4


def _scene_files(directory) -> list:
    directory = Path(directory)
    if not directory.is_dir():
        raise DataError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir()
                  if p.suffix.lower().lstrip(".") in FORMATS)


def _load_objects(directory, cfg: PipelineConfig):
    """Load, sample, and normalize every object file in a directory."""
    samples = []
    for i, path in enumerate(_scene_files(directory)):
        cloud = load_cloud(path)
        cloud = sample_points(cloud, cfg.sample_count, seed=cfg.seed + i)
        samples.append(normalize_object(cloud))
    if not samples:
        raise DataError(f"no point cloud files in {directory}")
    return samples


def _read_label_csv(path) -> dict:
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        for row in reader:
            if len(row) < 2:
                continue
            out[row[0]] = int(row[1])
    return out


def _labels_for(samples, label_map) -> list:
    missing = [s.source_id for s in samples if s.source_id not in label_map]
    if missing:
        raise DataError(f"no label for sample(s): {', '.join(missing[:5])}")
    return [label_map[s.source_id] for s in samples]


def _write_resolved_config(cfg: PipelineConfig, out_dir: Path) -> str:
    text = dump_config(cfg)
    report.atomic_write_text(out_dir / "resolved.config", text)
    return report.config_digest(text)


def _embeddings(model, samples):
    return np.array([enc.forward(model, s)[0] for s in samples])


def cmd_propose(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(cfg, out_dir)
    files = _scene_files(args.scenes)
    params = cfg.gss_params()
    total = 0
    for path in files:
        scene = load_cloud(path)
        proposals = gss.generate_proposals(scene, params, seed=cfg.seed)
        total += len(proposals)
        text = "".join(gss.proposal_to_json(p) + "\n" for p in proposals)
        report.atomic_write_text(out_dir / f"{path.stem}.proposals.jsonl", text)
    mean = total / len(files) if files else 0.0
    print(f"{len(files)} scenes, {total} proposals, "
          f"{mean:.1f} mean proposals/scene")
    return EXIT_OK


def cmd_selflabel(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(cfg, out_dir)
    samples = _load_objects(args.objects, cfg)
    gt = None
    if args.gt_labels:
        gt = _labels_for(samples, _read_label_csv(args.gt_labels))
    tcfg = cfg.train_config()
    model, labels, metrics = train_selflabel(samples, tcfg, gt_labels=gt)

    enc.save_checkpoint(model, out_dir / "model.ckpt")
    lab = io.StringIO()
    lab.write("sample_id,pseudo_label\n")
    for sid, y in zip(labels.sample_ids, labels.labels):
        lab.write(f"{sid},{y}\n")
    report.atomic_write_text(out_dir / "labels.csv", lab.getvalue())
    met = io.StringIO()
    header = "epoch,mean_loss,lr,label_entropy"
    if gt is not None:
        header += ",purity"
    met.write(header + "\n")
    for row in metrics:
        met.write(",".join(format(v, ".10g") if isinstance(v, float) else str(v)
                           for v in row) + "\n")
    report.atomic_write_text(out_dir / "metrics.csv", met.getvalue())
    if metrics:
        report.save_loss_figure(metrics, out_dir / "training.png")
    entropy, counts = sl.degeneracy_report(labels, tcfg.K)
    report.save_occupancy_figure(counts, out_dir / "occupancy.png")
    summary = f"final label entropy {entropy:.4f}"
    if gt is not None:
        summary += f", purity {ev.mean_purity(labels, gt):.4f}"
    print(summary)
    return EXIT_OK


def cmd_export_labels(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_resolved_config(cfg, out_dir)
    model, _ = enc.load_checkpoint(args.checkpoint)
    samples = _load_objects(args.objects, cfg)
    logits = np.array([enc.forward(model, s)[1] for s in samples])
    p = sl.assemble_P(logits)
    q = sl.sinkhorn_assign(p, lam=cfg.lam, iterations=cfg.sk_iterations)
    labels = sl.extract_labels(q, [s.source_id for s in samples])
    out = io.StringIO()
    out.write("sample_id,pseudo_label\n")
    for sid, y in zip(labels.sample_ids, labels.labels):
        out.write(f"{sid},{y}\n")
    report.atomic_write_text(out_dir / "labels.csv", out.getvalue())
    print(f"{len(labels)} labels written")
    return EXIT_OK


def _write_metric_report(out_dir: Path, digest: str, metric: str, value: float,
                         per_class: dict | None, extra_rows=()) -> None:
    report.atomic_write_text(
        out_dir / "metrics.json",
        report.metrics_json(metric, value, per_class, digest))
    rows = [(metric, value)] + list(extra_rows)
    for k, v in sorted((per_class or {}).items()):
        rows.append((f"class {k}", v))
    report.atomic_write_text(out_dir / "metrics.txt",
                             report.metrics_table(metric, rows))


def _load_detections(path):
    preds = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        p, cls = gss.proposal_from_json(line)
        if cls is None:
            raise DataError(f"{path}: detection line missing class")
        preds.append(ev.DetectionRecord(p.scene_id, p.box, cls, p.score))
    return preds


def _load_gt_boxes(path):
    gt = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        p, cls = gss.proposal_from_json(line)
        if cls is None:
            raise DataError(f"{path}: gt line missing class")
        gt.setdefault(p.scene_id, []).append((p.box, cls))
    return gt


def _per_scene_labels(directory):
    out = {}
    for path in sorted(Path(directory).glob("*.labels.txt")):
        out[path.name[:-len(".labels.txt")]] = np.array(
            [int(v) for v in path.read_text().split()], dtype=np.int64)
    if not out:
        raise DataError(f"no *.labels.txt files in {directory}")
    return out


def cmd_eval(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = _write_resolved_config(cfg, out_dir)

    if args.task == "purity":
        pred = _read_label_csv(args.labels)
        gt = _read_label_csv(args.gt)
        ids = sorted(pred)
        if set(ids) != set(gt):
            raise DataError("label and gt sample ids differ")
        labels = sl.LabelSet(np.array([pred[i] for i in ids]), ids)
        gt_vec = [gt[i] for i in ids]
        purity = ev.mean_purity(labels, gt_vec)
        align = ev.align_classes(labels, gt_vec)
        _write_metric_report(out_dir, digest, "mean_purity", purity, None,
                             [("obtained_classes", align.obtained_classes)])
        _, counts = sl.degeneracy_report(labels, int(labels.labels.max()) + 1)
        report.save_occupancy_figure(counts, out_dir / "occupancy.png")
        print(f"mean_purity {purity:.4f}")
    elif args.task == "det":
        preds = _load_detections(args.predictions)
        gt = _load_gt_boxes(args.gt)
        per_class, m = ev.map_at_iou(preds, gt, cfg.eval_iou_threshold)
        _write_metric_report(out_dir, digest,
                             f"mAP@{cfg.eval_iou_threshold}", m, per_class)
        curves = {}
        for cls in per_class:
            cls_preds = [p for p in preds if p.class_id == cls]
            n_gt = sum(1 for boxes in gt.values() for _, c in boxes if c == cls)
            if cls_preds:
                matched = _match_flags(cls_preds, gt, cls, cfg.eval_iou_threshold)
                curves[cls] = ev.pr_curve([p.score for p in cls_preds],
                                          matched, n_gt)
        report.save_pr_figure(curves, out_dir / "pr_curves.png")
        print(f"mAP@{cfg.eval_iou_threshold} {m:.4f}")
    elif args.task == "seg":
        pred = _per_scene_labels(args.predictions)
        gt = _per_scene_labels(args.gt)
        if set(pred) != set(gt):
            raise DataError("prediction and gt scene sets differ")
        scenes = sorted(pred)
        num_classes = cfg.num_classes or int(
            max(max(gt[s].max() for s in scenes), 0)) + 1
        per_class, m = ev.miou([pred[s] for s in scenes],
                               [gt[s] for s in scenes], num_classes)
        _write_metric_report(out_dir, digest, "mIoU", m, per_class)
        report.save_bar_figure(per_class, out_dir / "iou_per_class.png", "IoU")
        print(f"mIoU {m:.4f}")
    elif args.task == "cls":
        model, _ = enc.load_checkpoint(args.checkpoint)
        samples = _load_objects(args.objects, cfg)
        ys = _labels_for(samples, _read_label_csv(args.gt))
        correct = sum(int(np.argmax(enc.forward(model, s)[1])) == y
                      for s, y in zip(samples, ys))
        acc = correct / len(samples)
        _write_metric_report(out_dir, digest, "accuracy", acc, None)
        print(f"accuracy {acc:.4f}")
    elif args.task == "knn":
        return _run_knn(args, cfg, out_dir, digest)
    else:
        raise ConfigError(f"unknown eval task {args.task!r}")
    return EXIT_OK


def _match_flags(cls_preds, gt, cls, threshold):
    ordered = sorted(cls_preds, key=lambda p: -p.score)
    matched = {sid: [False] * sum(1 for _, c in boxes if c == cls)
               for sid, boxes in gt.items()}
    flags = []
    for p in ordered:
        cand = [b for b, c in gt.get(p.scene_id, []) if c == cls]
        best_iou, best_j = 0.0, -1
        for j, g in enumerate(cand):
            v = gss.iou3d(p.box, g)
            if v > best_iou:
                best_iou, best_j = v, j
        if best_j >= 0 and best_iou >= threshold \
                and not matched[p.scene_id][best_j]:
            matched[p.scene_id][best_j] = True
            flags.append(True)
        else:
            flags.append(False)
    return np.array(flags, dtype=bool)


def _run_knn(args, cfg: PipelineConfig, out_dir: Path, digest: str) -> int:
    model, _ = enc.load_checkpoint(args.checkpoint)
    train_samples = _load_objects(args.train_objects, cfg)
    test_samples = _load_objects(args.test_objects, cfg)
    train_y = np.array(_labels_for(train_samples,
                                   _read_label_csv(args.train_gt)))
    test_y = np.array(_labels_for(test_samples, _read_label_csv(args.test_gt)))
    tr_emb = _embeddings(model, train_samples)
    te_emb = _embeddings(model, test_samples)
    rows = []
    per_k = {}
    for k in cfg.knn_k_values():
        top1, top5 = ev.knn_eval(tr_emb, train_y, te_emb, test_y, k)
        rows.append((f"{k}-NN top1", top1))
        rows.append((f"{k}-NN top5", top5))
        per_k[k] = top1
        print(f"{k}-NN top1 {top1:.2f} top5 {top5:.2f}")
    _write_metric_report(out_dir, digest, "knn_top1",
                         rows[0][1] if rows else 0.0, per_k, rows)
    report.save_bar_figure(per_k, out_dir / "knn_top1.png", "top-1 accuracy (%)")
    return EXIT_OK


def cmd_finetune(args, cfg: PipelineConfig) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    digest = _write_resolved_config(cfg, out_dir)
    pretrained = None
    if args.checkpoint:
        pretrained, _ = enc.load_checkpoint(args.checkpoint)
    train_samples = _load_objects(args.train_objects, cfg)
    test_samples = _load_objects(args.test_objects, cfg)
    train_y = _labels_for(train_samples, _read_label_csv(args.train_gt))
    test_y = _labels_for(test_samples, _read_label_csv(args.test_gt))
    num_classes = cfg.num_classes or max(train_y + test_y) + 1
    model, acc = finetune(pretrained, list(zip(train_samples, train_y)),
                          list(zip(test_samples, test_y)),
                          cfg.train_config(), num_classes)
    enc.save_checkpoint(model, out_dir / "finetuned.ckpt")
    _write_metric_report(out_dir, digest, "accuracy", acc, None)
    print(f"accuracy {acc:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sl3d",
        description="Unsupervised 3D recognition pipeline driver")
    parser.add_argument("--config", help="key = value configuration file")
    parser.add_argument("--set", action="append", default=[],
                        metavar="KEY=VALUE", help="override a config key")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("propose", help="generate box proposals per scene")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("selflabel", help="train the self-labeling model")
    p.add_argument("--objects", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt-labels", help="optional sample_id,class CSV for purity")

    p = sub.add_parser("export-labels",
                       help="assign pseudo labels with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--objects", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="run an evaluation task")
    p.add_argument("task", choices=["cls", "det", "seg", "knn", "purity"])
    p.add_argument("--out", required=True)
    p.add_argument("--labels")
    p.add_argument("--gt")
    p.add_argument("--predictions")
    p.add_argument("--checkpoint")
    p.add_argument("--objects")
    p.add_argument("--train-objects")
    p.add_argument("--test-objects")
    p.add_argument("--train-gt")
    p.add_argument("--test-gt")

    p = sub.add_parser("finetune", help="supervised finetuning")
    p.add_argument("--checkpoint", help="pretrained weights; omit for random init")
    p.add_argument("--train-objects", required=True)
    p.add_argument("--test-objects", required=True)
    p.add_argument("--train-gt", required=True)
    p.add_argument("--test-gt", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("knn", help="k-NN embedding evaluation")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--train-objects", required=True)
    p.add_argument("--test-objects", required=True)
    p.add_argument("--train-gt", required=True)
    p.add_argument("--test-gt", required=True)
    p.add_argument("--out", required=True)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        overrides = {}
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
            key, _, val = item.partition("=")
            overrides[key.strip()] = val.strip()
        cfg = load_config(args.config, overrides)
        if args.command == "propose":
            return cmd_propose(args, cfg)
        if args.command == "selflabel":
            return cmd_selflabel(args, cfg)
        if args.command == "export-labels":
            return cmd_export_labels(args, cfg)
        if args.command == "eval":
            return cmd_eval(args, cfg)
        if args.command == "finetune":
            return cmd_finetune(args, cfg)
        if args.command == "knn":
            args.task = "knn"
            out_dir = Path(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
            digest = _write_resolved_config(cfg, out_dir)
            return _run_knn(args, cfg, out_dir, digest)
        parser.error(f"unknown command {args.command}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InternalInvariantError as e:
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL
    except (SL3DError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Alternating optimization: cluster features into a balanced assignment Q,
train the encoder against Q with cross-entropy, repeat. Also supervised
finetuning from pretrained weights.

Every run is deterministic given (dataset, config): shuffling uses a
per-epoch seed derived from (config.seed, epoch) and batch gradients reduce
in index order.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import selflabel as sl
from .errors import DatasetTooSmall, LabelOutOfRange


@dataclass
class TrainConfig:
    epochs: int = 600
    batch_size: int = 32
    lr: float = 0.001
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 200
    momentum: float = 0.9
    weight_decay: float = 1e-4
    K: int = 10
    lam: float = 25.0
    sk_iterations: int = 100
    relabel_every: int = 10
    seed: int = 0
    hidden_widths: tuple = (64, 128)
    embedding_dim: int = 1024
    balanced: bool = True  # False: naive argmax self-labeling baseline

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0 or self.lr <= 0:
            raise ValueError("epochs must be >= 0, batch_size and lr positive")
        if self.K < 2:
            raise ValueError("K must be >= 2")

    def point_widths(self) -> tuple:
        return (3,) + tuple(self.hidden_widths) + (self.embedding_dim,)


@dataclass
class TrainState:
    model: enc.EncoderModel
    momentum: enc.MomentumState
    Q: sl.SoftAssignment | None
    labels: sl.LabelSet | None
    epoch: int
    loss_history: list = field(default_factory=list)


def learning_rate(config: TrainConfig, epoch: int) -> float:
    return config.lr / config.lr_decay_factor ** (epoch // config.lr_decay_every)


def _forward_all(model, dataset):
    logits = np.empty((len(dataset), model.num_classes))
    embeddings = np.empty((len(dataset), model.embedding_dim))
    for i, sample in enumerate(dataset):
        embeddings[i], logits[i] = enc.forward(model, sample)
    return embeddings, logits


def relabel(state: TrainState, dataset: list, config: TrainConfig) -> TrainState:
    """Recompute Q and hard labels from the current model over the full dataset."""
    _, logits = _forward_all(state.model, dataset)
    p = sl.assemble_P(logits)
    ids = [s.source_id for s in dataset]
    if config.balanced:
        q = sl.sinkhorn_assign(p, lam=config.lam, iterations=config.sk_iterations)
        labels = sl.extract_labels(q, ids)
    else:
        # naive baseline: hard argmax of P, no equipartition
        hard = np.argmax(p.values, axis=0)
        qv = np.zeros_like(p.values)
        qv[hard, np.arange(p.N)] = 1.0 / p.N
        q = sl.SoftAssignment(qv, config.lam, 0)
        labels = sl.LabelSet(hard.astype(np.int64), ids)
    state.Q = q
    state.labels = labels
    return state


def init_state(dataset: list, config: TrainConfig) -> TrainState:
    if len(dataset) < config.K:
        raise DatasetTooSmall(f"need at least K={config.K} samples, "
                              f"have {len(dataset)}")
    model = enc.init_params(config.point_widths(),
                            num_classes=config.K, seed=config.seed)
    state = TrainState(model, enc.MomentumState.zeros_like(model),
                       None, None, 0)
    return relabel(state, dataset, config)


def train_epoch(state: TrainState, dataset: list, config: TrainConfig) -> float:
    """One pass over the dataset; relabels first when the schedule says so.
    Returns the mean per-sample cross-entropy loss."""
    epoch = state.epoch
    if epoch > 0 and epoch % config.relabel_every == 0:
        relabel(state, dataset, config)
    rng = np.random.default_rng((config.seed, epoch))
    perm = rng.permutation(len(dataset))
    lr = learning_rate(config, epoch)
    qv = state.Q.values
    total = 0.0
    for start in range(0, len(perm), config.batch_size):
        batch = perm[start:start + config.batch_size]
        acc = None
        for i in batch:  # fixed order within the batch: deterministic reduce
            col = qv[:, i]
            target = col / col.sum()
            loss, grads = enc.backward(state.model, dataset[i], target)
            total += loss
            acc = grads if acc is None else acc.add_(grads)
        acc.scale_(1.0 / len(batch))
        enc.sgd_step(state.model, acc, lr, config.momentum,
                     config.weight_decay, state.momentum)
    state.epoch += 1
    mean_loss = total / len(dataset)
    state.loss_history.append(mean_loss)
    return mean_loss


def train_selflabel(dataset: list, config: TrainConfig, gt_labels=None,
                    metrics_hook=None):
    """Full self-labeling run. Returns (model, final LabelSet, metrics rows).

    Metrics rows are (epoch, mean_loss, lr, label_entropy[, purity]) with
    purity present only when gt_labels is given. metrics_hook, if set, is
    called with each row as it is produced.
    """
    from .evalmetrics import mean_purity  # local import avoids a cycle

    state = init_state(dataset, config)
    metrics = []

    def record(epoch, mean_loss):
        entropy, _ = sl.degeneracy_report(state.labels, config.K)
        row = [epoch, mean_loss, learning_rate(config, epoch), entropy]
        if gt_labels is not None:
            row.append(mean_purity(state.labels, gt_labels))
        metrics.append(tuple(row))
        if metrics_hook:
            metrics_hook(tuple(row))

    for epoch in range(config.epochs):
        mean_loss = train_epoch(state, dataset, config)
        record(epoch, mean_loss)
    relabel(state, dataset, config)  # final labels from the trained model
    if config.epochs == 0:
        record(0, float("nan"))
    return state.model, state.labels, metrics


def finetune(pretrained: enc.EncoderModel | None, train_set: list,
             test_set: list, config: TrainConfig, num_classes: int):
    """Supervised finetuning with one-hot cross-entropy.

    train_set/test_set are lists of (ObjectSample, class_id). A fresh head of
    width num_classes replaces the pseudo-class head; with pretrained=None the
    whole network starts from random initialization. Returns
    (model, test accuracy in [0, 1]).
    """
    for _, y in list(train_set) + list(test_set):
        if not 0 <= y < num_classes:
            raise LabelOutOfRange(f"class id {y} outside [0, {num_classes})")
    if pretrained is not None:
        model = pretrained.copy()
    else:
        model = enc.init_params(config.point_widths(),
                                num_classes=num_classes, seed=config.seed)
    head = enc.init_params((model.embedding_dim,),
                           head_widths=(model.embedding_dim, num_classes),
                           seed=config.seed + 1)
    model.head_weights = head.head_weights
    model.head_biases = head.head_biases
    momentum = enc.MomentumState.zeros_like(model)

    samples = [s for s, _ in train_set]
    ys = [y for _, y in train_set]
    for epoch in range(config.epochs):
        rng = np.random.default_rng((config.seed, epoch))
        perm = rng.permutation(len(samples))
        lr = learning_rate(config, epoch)
        for start in range(0, len(perm), config.batch_size):
            batch = perm[start:start + config.batch_size]
            acc = None
            for i in batch:
                target = np.zeros(num_classes)
                target[ys[i]] = 1.0
                _, grads = enc.backward(model, samples[i], target)
                acc = grads if acc is None else acc.add_(grads)
            acc.scale_(1.0 / len(batch))
            enc.sgd_step(model, acc, lr, config.momentum,
                         config.weight_decay, momentum)
    correct = 0
    for s, y in test_set:
        _, logits = enc.forward(model, s)
        if int(np.argmax(logits)) == y:
            correct += 1
    acc = correct / len(test_set) if test_set else 0.0
    return model, acc


def save_state(state: TrainState, config: TrainConfig, prefix) -> None:
    """Checkpoint a run: model + momentum, config + epoch sidecar, and Q."""
    prefix = Path(prefix)
    enc.save_checkpoint(state.model, prefix.with_suffix(".ckpt"), state.momentum)
    side = [f"epoch = {state.epoch}"]
    for f in dataclasses.fields(config):
        v = getattr(config, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        side.append(f"{f.name} = {v}")
    side.append("loss_history = " + " ".join(format(v, ".17g")
                                             for v in state.loss_history))
    prefix.with_suffix(".state").write_text("\n".join(side) + "\n")
    q = state.Q
    lines = [f"Q {q.K} {q.N} {format(q.lam, '.17g')} {q.iterations_run}"]
    for row in q.values:
        lines.append(" ".join(format(v, ".17g") for v in row))
    lines.append("labels " + " ".join(str(v) for v in state.labels.labels))
    lines.append("ids " + " ".join(state.labels.sample_ids))
    prefix.with_suffix(".q").write_text("\n".join(lines) + "\n")


def load_state(prefix) -> tuple[TrainState, TrainConfig]:
    prefix = Path(prefix)
    model, momentum = enc.load_checkpoint(prefix.with_suffix(".ckpt"))
    kv = {}
    for line in prefix.with_suffix(".state").read_text().splitlines():
        key, _, val = line.partition(" = ")
        kv[key.strip()] = val.strip()
    loss_history = [float(v) for v in kv.pop("loss_history").split()] \
        if kv.get("loss_history") else []
    if "loss_history" in kv:
        del kv["loss_history"]
    epoch = int(kv.pop("epoch"))
    cfg_kwargs = {}
    for f in dataclasses.fields(TrainConfig):
        raw = kv[f.name]
        if f.name == "hidden_widths":
            cfg_kwargs[f.name] = tuple(int(v) for v in raw.split(","))
        elif f.type == "bool" or isinstance(getattr(TrainConfig, f.name, None), bool):
            cfg_kwargs[f.name] = raw == "True"
        elif f.name in ("epochs", "batch_size", "lr_decay_every", "K",
                        "sk_iterations", "relabel_every", "seed",
                        "embedding_dim"):
            cfg_kwargs[f.name] = int(raw)
        else:
            cfg_kwargs[f.name] = float(raw)
    config = TrainConfig(**cfg_kwargs)
    qlines = prefix.with_suffix(".q").read_text().splitlines()
    _, k, n, lam, it_run = qlines[0].split()
    k, n = int(k), int(n)
    qv = np.array([[float(v) for v in qlines[1 + r].split()] for r in range(k)])
    q = sl.SoftAssignment(qv, float(lam), int(it_run))
    labels = np.array([int(v) for v in qlines[1 + k].split()[1:]], dtype=np.int64)
    ids = qlines[2 + k].split()[1:]
    state = TrainState(model, momentum, q, sl.LabelSet(labels, ids),
                       epoch, loss_history)
    return state, config

"""Flat key=value pipeline configuration with CLI-flag overrides.

Unknown keys are rejected so typos surface immediately, and every run writes
its fully-resolved configuration next to its outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .gss import GssParams
from .trainloop import TrainConfig


@dataclass
class PipelineConfig:
    # gss
    gss_k: int = 12
    gss_max_angle_deg: float = 20.0
    gss_min_region_size: int = 50
    gss_max_plane_dist: float = -1.0  # < 0: auto (1% of scene bbox diagonal)
    gss_jitter_sigma: float = 0.005
    gss_max_proposals: int = 1000
    gss_nms_iou: float = 0.75
    gss_max_proposal_points: int = 15000
    # training
    epochs: int = 600
    batch_size: int = 32
    lr: float = 0.001
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 200
    momentum: float = 0.9
    weight_decay: float = 0.0001
    K: int = 10
    lam: float = 25.0
    sk_iterations: int = 100
    relabel_every: int = 10
    hidden_widths: str = "64,128"
    embedding_dim: int = 1024
    balanced: bool = True
    # data conditioning
    sample_count: int = 1024
    # evaluation
    eval_iou_threshold: float = 0.25
    knn_k: str = "20,100"
    num_classes: int = 0  # 0: infer from labels
    # run
    seed: int = 0
    jobs: int = 1

    def gss_params(self) -> GssParams:
        return GssParams(
            k=self.gss_k,
            max_angle_deg=self.gss_max_angle_deg,
            min_region_size=self.gss_min_region_size,
            max_plane_dist=None if self.gss_max_plane_dist < 0
            else self.gss_max_plane_dist,
            jitter_sigma=self.gss_jitter_sigma,
            max_proposals=self.gss_max_proposals,
            nms_iou=self.gss_nms_iou,
            max_proposal_points=self.gss_max_proposal_points,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            lr_decay_factor=self.lr_decay_factor,
            lr_decay_every=self.lr_decay_every,
            momentum=self.momentum,
            weight_decay=self.weight_decay,
            K=self.K,
            lam=self.lam,
            sk_iterations=self.sk_iterations,
            relabel_every=self.relabel_every,
            seed=self.seed,
            hidden_widths=tuple(int(v) for v in self.hidden_widths.split(",")),
            embedding_dim=self.embedding_dim,
            balanced=self.balanced,
        )

    def knn_k_values(self) -> list:
        return [int(v) for v in self.knn_k.split(",")]


_FIELDS = {f.name: f for f in fields(PipelineConfig)}


def _parse_value(name: str, raw: str):
    f = _FIELDS[name]
    try:
        if f.type == "bool":
            if raw not in ("true", "false", "True", "False", "0", "1"):
                raise ValueError(raw)
            return raw in ("true", "True", "1")
        if f.type == "int":
            return int(raw)
        if f.type == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def load_config(path=None, overrides: dict | None = None) -> PipelineConfig:
    """Read key = value lines ('#' comments), then apply overrides on top."""
    cfg = PipelineConfig()
    if path is not None:
        for line_no, line in enumerate(
                Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            s = line.split("#", 1)[0].strip()
            if not s:
                continue
            if "=" not in s:
                raise ConfigError(f"{path}:{line_no}: expected key = value")
            key, _, raw = s.partition("=")
            key = key.strip()
            raw = raw.strip()
            if key not in _FIELDS:
                raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
            setattr(cfg, key, _parse_value(key, raw))
    for key, raw in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _parse_value(key, str(raw)))
    return cfg


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for f in fields(PipelineConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"

"""Pipeline run configuration: full-scale defaults, desk-scale presets,
JSON config files with flag overrides, and a stable hash for run
directories."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field


@dataclass
class RunConfig:
    # corpus
    corpus_dir: str = ""
    synth_users: int = 200
    synth_items: int = 500
    image_side: int = 32
    synth_extra_positives: float = 2.5
    # shared
    seed: int = 0
    out_dir: str = "runs"
    preset: str = "desk"              # desk | full
    # ranking (full-scale defaults; desk preset overrides sizes)
    latent_dim: int = 50              # K
    dvbpr_batch: int = 128
    dvbpr_epochs: int = 90
    dvbpr_lr: float = 1e-3
    dvbpr_lr_factors: float = 1e-2
    reg_visual: float = 1.0           # user visual-factor regularizer
    weight_decay: float = 1e-3
    dropout: float = 0.5
    mf_epochs: int = 30
    mf_lr: float = 0.01
    reg_lambda: float | None = None   # None -> validation grid search
    cnn_input_side: int = 64
    # classifier
    classifier_epochs: int = 20
    feature_dim: int = 64
    # gan
    gan_batch: int = 64
    gan_batch_desk: int = 8
    gan_epochs: int = 25
    gan_lr: float = 2e-4
    gan_lr_desk: float = 1e-3
    gan_side_desk: int = 32
    gan_side_full: int = 128
    # design
    design_starts: int = 64           # m
    design_k: int = 3
    design_eta: float = 1.0
    design_iterations: int = 50
    # service
    host: str = "127.0.0.1"
    port: int = 8321
    workers: int = 1

    @property
    def gan_side(self) -> int:
        return self.gan_side_full if self.preset == "full" else self.gan_side_desk

    @property
    def gan_batch_effective(self) -> int:
        return self.gan_batch if self.preset == "full" else self.gan_batch_desk

    @property
    def gan_lr_effective(self) -> float:
        return self.gan_lr if self.preset == "full" else self.gan_lr_desk

    @property
    def cnn_preset(self) -> str:
        return "full" if self.preset == "full" else "desk"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:10]

    @classmethod
    def load(cls, path: str | None = None, overrides: dict | None = None) -> "RunConfig":
        data = {}
        if path:
            with open(path) as f:
                data = json.load(f)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**data)
        for key, value in (overrides or {}).items():
            if value is None:
                continue
            if key not in known:
                raise ValueError(f"unknown config key {key!r}")
            setattr(cfg, key, value)
        return cfg

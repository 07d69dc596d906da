"""The full punctuation model: lexical encoder, acoustic assistant, fusion stack, classifier."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .acoustic import acoustic_or_virtual, init_acoustic
from .bootstrapper import bootstrapper_layer, classify, init_bootstrapper, init_classifier, predict_labels
from .data import Batch
from .encoder import encode, init_encoder
from .tensor import Tensor


@dataclass
class ModelConfig:
    vocab_size: int
    feat_dim: int = 80
    d_model: int = 64
    heads: int = 4
    enc_layers: int = 2
    boot_layers: int = 2
    ffn_dim: int | None = None
    conv_channels: int | None = None
    kernel: int = 15
    stride: int = 5
    ve_len: int = 5
    dropout: float = 0.1

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.ve_len < 1:
            raise ValueError("virtual embedding needs at least one row")
        if self.ffn_dim is None:
            self.ffn_dim = 4 * self.d_model
        if self.conv_channels is None:
            self.conv_channels = self.d_model

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown model config keys {sorted(unknown)}")
        return cls(**raw)


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    init_encoder(params, cfg.vocab_size, cfg.d_model, cfg.enc_layers, cfg.ffn_dim, rng)
    init_acoustic(params, cfg.feat_dim, cfg.conv_channels, cfg.d_model, cfg.kernel, cfg.ve_len, rng)
    init_bootstrapper(params, cfg.d_model, cfg.boot_layers, rng)
    init_classifier(params, cfg.d_model, rng)
    return params


class UniPunc:
    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = init_params(cfg, seed) if params is None else params

    def acoustic(self, batch: Batch, downsample_fn=None) -> tuple[Tensor, np.ndarray]:
        """Per-sample acoustic rows padded into ``[B x m_max x d]`` plus the key mask."""
        rows = [
            acoustic_or_virtual(has, feats, self.params, self.cfg.kernel, self.cfg.stride, downsample_fn)
            for has, feats in zip(batch.has_audio, batch.features)
        ]
        return T.pad_stack(rows)

    def forward(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None,
                downsample_fn=None, record: list | None = None) -> Tensor:
        """Logits ``[B x n x 4]``.

        ``downsample_fn(features, params)`` replaces the conv stack for audio
        samples when given.
        """
        cfg = self.cfg
        drop = cfg.dropout if training else 0.0
        hidden = encode(batch.ids, batch.mask, self.params, cfg.enc_layers, cfg.heads,
                        drop, training, rng, record=record)
        acoustic, acoustic_mask = self.acoustic(batch, downsample_fn)
        for i in range(cfg.boot_layers):
            hidden = bootstrapper_layer(hidden, acoustic, batch.mask, acoustic_mask, self.params,
                                        f"bootstrapper.{i}", cfg.heads, drop, training, rng, record)
        return classify(hidden, self.params)

    def loss(self, batch: Batch, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        return T.cross_entropy(self.forward(batch, training, rng), batch.labels, batch.mask)

    def predict(self, batch: Batch) -> list[list[int]]:
        """Label ids per sample, trimmed to each sample's true length."""
        labels = predict_labels(self.forward(batch))
        return [labels[i, : int(batch.mask[i].sum())].tolist() for i in range(len(batch))]

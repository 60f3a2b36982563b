"""Frozen surrogate transformer backbone.

A deterministic, seed-built stack of pre-norm transformer blocks (multi-head
self-attention + tanh MLP) that maps a token sequence [cls, prompts, patches]
to per-layer CLS activations. It stands in for a frozen pre-trained vision
transformer at desk scale: weights are a pure function of (seed, shapes) and
are never mutated after construction.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

_LN_EPS = 1e-6


class InvalidConfigError(ValueError):
    pass


class DimensionMismatchError(ValueError):
    pass


class EmptyBatchError(ValueError):
    pass


@dataclass(frozen=True)
class BackboneConfig:
    layers: int = 4
    embed_dim: int = 16
    patches: int = 8
    heads: int = 2
    mlp_ratio: float = 2.0
    seed: int = 0

    def validate(self) -> None:
        if self.layers < 1:
            raise InvalidConfigError("layers must be >= 1")
        if self.embed_dim < 2:
            raise InvalidConfigError("embed_dim must be >= 2")
        if self.patches < 1:
            raise InvalidConfigError("patches must be >= 1")
        if self.heads < 1 or self.embed_dim % self.heads != 0:
            raise InvalidConfigError(
                f"heads ({self.heads}) must divide embed_dim ({self.embed_dim})")
        if self.mlp_ratio <= 0:
            raise InvalidConfigError("mlp_ratio must be positive")


@dataclass(frozen=True)
class LayerStats:
    """Per-layer CLS statistics over a batch: mean and population std."""

    mu: np.ndarray     # (layers, embed_dim)
    sigma: np.ndarray  # (layers, embed_dim)


@dataclass(frozen=True)
class LayerTrace:
    cls_per_layer: np.ndarray  # (layers, embed_dim)
    final_cls: np.ndarray      # (embed_dim,)


def _layer_norm(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mean) / np.sqrt(var + _LN_EPS)


class Backbone:
    """Immutable after construction; safe to share across threads.

    Weight draw order is fixed: cls token, patch positional embeddings, then
    per layer (in order) Wq, Wk, Wv, Wo, W1, b1, W2, b2, each Gaussian with
    scale 1/sqrt(fan_in).
    """

    def __init__(self, config: BackboneConfig):
        config.validate()
        self.config = config
        d = config.embed_dim
        hidden = int(round(config.mlp_ratio * d))
        rng = np.random.default_rng(config.seed)
        scale = 1.0 / np.sqrt(d)
        self.cls_token = rng.standard_normal(d) * scale
        self.pos_patch = rng.standard_normal((config.patches, d)) * scale
        self.blocks = []
        for _ in range(config.layers):
            self.blocks.append({
                "wq": rng.standard_normal((d, d)) * scale,
                "wk": rng.standard_normal((d, d)) * scale,
                "wv": rng.standard_normal((d, d)) * scale,
                "wo": rng.standard_normal((d, d)) * scale,
                "w1": rng.standard_normal((d, hidden)) * scale,
                "b1": np.zeros(hidden),
                "w2": rng.standard_normal((hidden, d)) / np.sqrt(hidden),
                "b2": np.zeros(d),
            })

    def checksum(self) -> str:
        """SHA-256 over all weight tensors in draw order."""
        digest = hashlib.sha256()
        digest.update(self.cls_token.tobytes())
        digest.update(self.pos_patch.tobytes())
        for block in self.blocks:
            for key in ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2"):
                digest.update(block[key].tobytes())
        return digest.hexdigest()

    def token_count(self, num_prompts: int) -> int:
        return 1 + num_prompts + self.config.patches

    def _attend(self, x: np.ndarray, block: dict) -> np.ndarray:
        # x: (batch, tokens, d)
        cfg = self.config
        d_head = cfg.embed_dim // cfg.heads
        u = _layer_norm(x)
        q = u @ block["wq"]
        k = u @ block["wk"]
        v = u @ block["wv"]
        n, t, d = q.shape
        # (batch, heads, tokens, d_head)
        q = q.reshape(n, t, cfg.heads, d_head).transpose(0, 2, 1, 3)
        k = k.reshape(n, t, cfg.heads, d_head).transpose(0, 2, 1, 3)
        v = v.reshape(n, t, cfg.heads, d_head).transpose(0, 2, 1, 3)
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(d_head)
        scores -= scores.max(axis=-1, keepdims=True)
        attn = np.exp(scores)
        attn /= attn.sum(axis=-1, keepdims=True)
        out = (attn @ v).transpose(0, 2, 1, 3).reshape(n, t, d)
        return out @ block["wo"]

    def _forward_tokens(self, tokens: np.ndarray) -> np.ndarray:
        """Run the block stack; returns per-layer CLS rows, (layers, batch, d)."""
        x = tokens
        cls_rows = []
        for block in self.blocks:
            x = x + self._attend(x, block)
            u = _layer_norm(x)
            x = x + np.tanh(u @ block["w1"] + block["b1"]) @ block["w2"] + block["b2"]
            cls_rows.append(x[:, 0, :].copy())
        return np.stack(cls_rows)

    def _assemble(self, prompts: np.ndarray, patch_batch: np.ndarray) -> np.ndarray:
        cfg = self.config
        prompts = np.atleast_2d(np.asarray(prompts, dtype=float))
        if prompts.size == 0:
            prompts = prompts.reshape(0, cfg.embed_dim)
        if prompts.shape[1] != cfg.embed_dim:
            raise DimensionMismatchError(
                f"prompt width {prompts.shape[1]} != embed_dim {cfg.embed_dim}")
        if patch_batch.shape[1:] != (cfg.patches, cfg.embed_dim):
            raise DimensionMismatchError(
                f"patch batch shape {patch_batch.shape[1:]} != "
                f"({cfg.patches}, {cfg.embed_dim})")
        n = patch_batch.shape[0]
        num_p = prompts.shape[0]
        tokens = np.empty((n, self.token_count(num_p), cfg.embed_dim))
        tokens[:, 0, :] = self.cls_token
        tokens[:, 1:1 + num_p, :] = prompts
        tokens[:, 1 + num_p:, :] = patch_batch + self.pos_patch
        return tokens

    def forward(self, prompts: np.ndarray, patches: np.ndarray) -> LayerTrace:
        """Single-sample forward; `patches` is (m, d)."""
        patches = np.asarray(patches, dtype=float)
        trace = self._forward_tokens(self._assemble(prompts, patches[None, :, :]))
        cls_per_layer = trace[:, 0, :]
        return LayerTrace(cls_per_layer=cls_per_layer, final_cls=cls_per_layer[-1])

    def batch_forward(self, prompts: np.ndarray,
                      patch_batch: np.ndarray) -> tuple[np.ndarray, LayerStats]:
        """Batched forward over (n, m, d) inputs.

        Returns the stacked final CLS rows (n, d) and per-layer batch
        statistics (population std, i.e. divide by n).
        """
        patch_batch = np.asarray(patch_batch, dtype=float)
        if patch_batch.ndim != 3 or patch_batch.shape[0] == 0:
            raise EmptyBatchError("batch_forward needs a nonempty (n, m, d) batch")
        cls_rows = self._forward_tokens(self._assemble(prompts, patch_batch))
        stats = LayerStats(mu=cls_rows.mean(axis=1), sigma=cls_rows.std(axis=1))
        return cls_rows[-1].copy(), stats


def backbone_build(config: BackboneConfig) -> Backbone:
    return Backbone(config)

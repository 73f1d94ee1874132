"""Vision Transformer: patch extraction, embeddings, encoder, classifier head.

An image resized to (H, W) is cut into N = H*W/P^2 patches of P*P*C values
(channels included in the flattening), linearly projected to width D,
prefixed with a learnable class token, and offset by a learnable positional
table. L encoder layers apply pre-norm multi-head self-attention and a GeLU
MLP, each with a residual skip. The class-token row of the final sequence
feeds the classification head.

Width bookkeeping: D is the last encoder MLP width so the MLP output
re-enters the residual stream; each of the h heads works at d_k = D/h.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from . import tensor as T
from .errors import ContractError, ShapeError
from .image import ImageFrame
from .rng import SeededGenerator
from .tensor import Tensor


@dataclass(frozen=True)
class VitConfig:
    """Model and training hyperparameters plus derived widths."""

    num_classes: int = 2
    input_shape: tuple[int, int, int] = (256, 256, 3)
    resized: tuple[int, int] = (392, 392)
    patch_size: int = 28
    batch_size: int = 256
    epochs: int = 150
    learning_rate: float = 0.001
    weight_decay: float = 0.0001
    num_heads: int = 4
    num_layers: int = 8
    transformer_units: tuple[int, ...] = (128, 64)
    mlp_head_units: tuple[int, ...] = (2048, 1024)
    projection_dim: int = 64
    dropout_rate: float = 0.0
    init_std: float = 0.02
    layer_norm_eps: float = 1e-6
    channel_mean: tuple[float, ...] | None = None
    channel_std: tuple[float, ...] | None = None

    def __post_init__(self):
        h, w = self.resized
        if h % self.patch_size or w % self.patch_size:
            raise ContractError(
                f"resized {self.resized} not divisible by patch size {self.patch_size}"
            )
        if self.projection_dim % self.num_heads:
            raise ContractError(
                f"projection dim {self.projection_dim} not divisible by "
                f"{self.num_heads} heads"
            )
        if self.transformer_units[-1] != self.projection_dim:
            raise ContractError(
                f"last transformer unit {self.transformer_units[-1]} must equal "
                f"projection dim {self.projection_dim} for the residual add"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ContractError("dropout_rate must lie in [0, 1)")

    @property
    def channels(self) -> int:
        return self.input_shape[2]

    @property
    def num_patches(self) -> int:
        h, w = self.resized
        return (h * w) // (self.patch_size ** 2)

    @property
    def patch_elements(self) -> int:
        return self.patch_size ** 2 * self.channels

    @property
    def head_dim(self) -> int:
        return self.projection_dim // self.num_heads

    def to_items(self) -> list[tuple[str, str]]:
        """Flat key=value form used by config files and checkpoints."""
        items = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                text = "none"
            elif isinstance(value, tuple):
                text = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
            elif isinstance(value, float):
                text = repr(value)
            else:
                text = str(value)
            items.append((f.name, text))
        return items

    @classmethod
    def from_items(cls, items: dict[str, str]) -> "VitConfig":
        parsers = {
            "num_classes": int, "patch_size": int, "batch_size": int,
            "epochs": int, "num_heads": int, "num_layers": int,
            "projection_dim": int,
            "learning_rate": float, "weight_decay": float,
            "dropout_rate": float, "init_std": float, "layer_norm_eps": float,
            "input_shape": _int_tuple, "resized": _int_tuple,
            "transformer_units": _int_tuple, "mlp_head_units": _int_tuple,
            "channel_mean": _optional_float_tuple,
            "channel_std": _optional_float_tuple,
        }
        known = {f.name for f in fields(cls)}
        kwargs = {}
        for key, raw in items.items():
            if key not in known:
                raise ContractError(f"unknown config key '{key}'")
            kwargs[key] = parsers[key](raw)
        return cls(**kwargs)


def _int_tuple(text: str) -> tuple[int, ...]:
    parts = text.strip().strip("()").split(",")
    return tuple(int(p.strip()) for p in parts if p.strip())


def _optional_float_tuple(text: str):
    text = text.strip()
    if text.lower() in ("none", ""):
        return None
    return tuple(float(p.strip()) for p in text.strip("()").split(",") if p.strip())


# ---------------------------------------------------------------------------
# patch extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PatchSequence:
    """N x (P^2 * C) matrix of flattened patches in row-major patch order."""

    patch_size: int
    channels: int
    rows: np.ndarray

    @property
    def patch_count(self) -> int:
        return self.rows.shape[0]

    @property
    def elements_per_patch(self) -> int:
        return self.rows.shape[1]


def patchify(frame: ImageFrame, patch_size: int) -> PatchSequence:
    """Cut a frame into non-overlapping P x P patches, channels flattened in."""
    p = int(patch_size)
    if p < 1:
        raise ContractError(f"patch size must be >= 1, got {p}")
    h, w, c = frame.shape
    if h % p or w % p:
        raise ContractError(f"frame {h}x{w} not divisible by patch size {p}")
    grid = frame.pixels.reshape(h // p, p, w // p, p, c)
    rows = grid.transpose(0, 2, 1, 3, 4).reshape((h // p) * (w // p), p * p * c)
    return PatchSequence(patch_size=p, channels=c, rows=rows.copy())


def unpatchify(seq: PatchSequence, height: int, width: int) -> ImageFrame:
    """Exact inverse of patchify for the given frame dimensions."""
    p, c = seq.patch_size, seq.channels
    gh, gw = height // p, width // p
    if gh * gw != seq.patch_count:
        raise ContractError(
            f"{seq.patch_count} patches cannot tile {height}x{width} at size {p}"
        )
    grid = seq.rows.reshape(gh, gw, p, p, c).transpose(0, 2, 1, 3, 4)
    return ImageFrame(grid.reshape(height, width, c))


def patchify_stack(frames: list[ImageFrame], patch_size: int) -> np.ndarray:
    """Stack patchified frames into a (B, N, P^2*C) batch array."""
    return np.stack([patchify(f, patch_size).rows for f in frames])


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

@dataclass
class EmbeddingParams:
    """Patch projection, class token, and positional table."""

    projection: Tensor      # (P^2*C) x D
    class_token: Tensor     # 1 x D
    position: Tensor        # (N+1) x D


@dataclass
class EncoderLayerParams:
    """One encoder layer: pre-norm MSA and pre-norm GeLU MLP."""

    norm1_gain: Tensor
    norm1_bias: Tensor
    query_weights: list[Tensor]   # h tensors, D x d_k
    key_weights: list[Tensor]
    value_weights: list[Tensor]
    output_weight: Tensor         # (h*d_k) x D
    norm2_gain: Tensor
    norm2_bias: Tensor
    mlp_weights: list[Tensor]
    mlp_biases: list[Tensor]


@dataclass
class HeadParams:
    """Classifier head: GeLU hidden layers then a linear logits layer."""

    hidden_weights: list[Tensor]
    hidden_biases: list[Tensor]
    logits_weight: Tensor
    logits_bias: Tensor


@dataclass
class AttentionState:
    """Q, K, V and the row-stochastic attention weights of one head."""

    layer: int
    head: int
    queries: np.ndarray
    keys: np.ndarray
    values: np.ndarray
    weights: np.ndarray


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def embed_patches(rows, embedding: EmbeddingParams) -> Tensor:
    """Project patches, prefix the class token, add positional offsets."""
    rows = rows if isinstance(rows, Tensor) else Tensor(rows)
    projected = T.matmul(rows, embedding.projection)
    with_token = T.prepend_token(projected, embedding.class_token)
    return T.add(with_token, embedding.position)


def attention_head(z, wq: Tensor, wk: Tensor, wv: Tensor,
                   sink: list | None = None, layer: int = 0, head: int = 0) -> Tensor:
    """Scaled dot-product attention: softmax(Q K^T / sqrt(d_k)) V."""
    q = T.matmul(z, wq)
    k = T.matmul(z, wk)
    v = T.matmul(z, wv)
    d_k = wq.shape[-1]
    logits = T.matmul(q, T.transpose(k)) * (1.0 / math.sqrt(d_k))
    weights = T.softmax_rows(logits)
    if sink is not None:
        sink.append(AttentionState(
            layer=layer, head=head,
            queries=q.data.copy(), keys=k.data.copy(), values=v.data.copy(),
            weights=weights.data.copy(),
        ))
    return T.matmul(weights, v)


def multi_head_attention(z, layer_params: EncoderLayerParams,
                         sink: list | None = None, layer: int = 0) -> Tensor:
    """Concatenate all head outputs and project back to width D."""
    heads = [
        attention_head(z, wq, wk, wv, sink=sink, layer=layer, head=i)
        for i, (wq, wk, wv) in enumerate(zip(
            layer_params.query_weights,
            layer_params.key_weights,
            layer_params.value_weights,
        ))
    ]
    stacked = heads[0] if len(heads) == 1 else T.concat(heads, axis=-1)
    if stacked.shape[-1] != layer_params.output_weight.shape[0]:
        raise ShapeError(
            f"concatenated head width {stacked.shape[-1]} does not match output "
            f"projection rows {layer_params.output_weight.shape[0]}"
        )
    return T.matmul(stacked, layer_params.output_weight)


def _mlp(x, weights: list[Tensor], biases: list[Tensor]) -> Tensor:
    for w, b in zip(weights, biases):
        x = T.gelu(T.add(T.matmul(x, w), b))
    return x


def encoder_layer(z, layer_params: EncoderLayerParams, eps: float = 1e-6,
                  dropout_rate: float = 0.0, rng: SeededGenerator | None = None,
                  sink: list | None = None, layer: int = 0) -> Tensor:
    """Pre-norm MSA + residual, then pre-norm MLP + residual."""
    normed = T.layer_norm(z, layer_params.norm1_gain, layer_params.norm1_bias, eps)
    attended = multi_head_attention(normed, layer_params, sink=sink, layer=layer)
    if dropout_rate > 0.0:
        attended = T.dropout(attended, dropout_rate, rng)
    z = T.add(attended, z)
    normed = T.layer_norm(z, layer_params.norm2_gain, layer_params.norm2_bias, eps)
    hidden = _mlp(normed, layer_params.mlp_weights, layer_params.mlp_biases)
    if dropout_rate > 0.0:
        hidden = T.dropout(hidden, dropout_rate, rng)
    return T.add(hidden, z)


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------

class VitModel:
    """Parameter container plus the forward pass."""

    def __init__(self, config: VitConfig, embedding: EmbeddingParams,
                 layers: list[EncoderLayerParams], head: HeadParams):
        self.config = config
        self.embedding = embedding
        self.layers = layers
        self.head = head

    @classmethod
    def initialize(cls, config: VitConfig, rng: SeededGenerator,
                   dtype=np.float32) -> "VitModel":
        """Gaussian(0, init_std) weights, zero biases, neutral layer norms.

        Draws quantize through the storage dtype (float32 by default) so a
        freshly initialized model round-trips checkpoints bit-exactly.
        """
        std = config.init_std
        d = config.projection_dim
        dk = config.head_dim

        def normal(*shape):
            draw = rng.normal(0.0, std, size=shape).astype(dtype)
            return Tensor(draw, requires_grad=True)

        def zeros(*shape):
            return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

        def ones(*shape):
            return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

        embedding = EmbeddingParams(
            projection=normal(config.patch_elements, d),
            class_token=normal(1, d),
            position=normal(config.num_patches + 1, d),
        )
        layers = []
        for _ in range(config.num_layers):
            widths = (d,) + tuple(config.transformer_units)
            layers.append(EncoderLayerParams(
                norm1_gain=ones(d), norm1_bias=zeros(d),
                query_weights=[normal(d, dk) for _ in range(config.num_heads)],
                key_weights=[normal(d, dk) for _ in range(config.num_heads)],
                value_weights=[normal(d, dk) for _ in range(config.num_heads)],
                output_weight=normal(config.num_heads * dk, d),
                norm2_gain=ones(d), norm2_bias=zeros(d),
                mlp_weights=[normal(a, b) for a, b in zip(widths, widths[1:])],
                mlp_biases=[zeros(b) for b in widths[1:]],
            ))
        head_widths = (d,) + tuple(config.mlp_head_units)
        head = HeadParams(
            hidden_weights=[normal(a, b) for a, b in zip(head_widths, head_widths[1:])],
            hidden_biases=[zeros(b) for b in head_widths[1:]],
            logits_weight=normal(head_widths[-1], config.num_classes),
            logits_bias=zeros(config.num_classes),
        )
        return cls(config, embedding, layers, head)

    def named_parameters(self) -> dict[str, Tensor]:
        """Deterministically ordered name -> tensor table."""
        params: dict[str, Tensor] = {
            "embed.projection": self.embedding.projection,
            "embed.class_token": self.embedding.class_token,
            "embed.position": self.embedding.position,
        }
        for l, layer in enumerate(self.layers):
            prefix = f"encoder{l}"
            params[f"{prefix}.norm1.gain"] = layer.norm1_gain
            params[f"{prefix}.norm1.bias"] = layer.norm1_bias
            for k in range(len(layer.query_weights)):
                params[f"{prefix}.head{k}.query"] = layer.query_weights[k]
                params[f"{prefix}.head{k}.key"] = layer.key_weights[k]
                params[f"{prefix}.head{k}.value"] = layer.value_weights[k]
            params[f"{prefix}.attention.output"] = layer.output_weight
            params[f"{prefix}.norm2.gain"] = layer.norm2_gain
            params[f"{prefix}.norm2.bias"] = layer.norm2_bias
            for j in range(len(layer.mlp_weights)):
                params[f"{prefix}.mlp{j}.weight"] = layer.mlp_weights[j]
                params[f"{prefix}.mlp{j}.bias"] = layer.mlp_biases[j]
        for j in range(len(self.head.hidden_weights)):
            params[f"head{j}.weight"] = self.head.hidden_weights[j]
            params[f"head{j}.bias"] = self.head.hidden_biases[j]
        params["logits.weight"] = self.head.logits_weight
        params["logits.bias"] = self.head.logits_bias
        return params

    def forward(self, patch_rows, attention_sink: list | None = None,
                train: bool = False, rng: SeededGenerator | None = None) -> Tensor:
        """Batched patch rows (B, N, P^2*C) -> logits (B, num_classes)."""
        cfg = self.config
        if not isinstance(patch_rows, Tensor):
            patch_rows = Tensor(patch_rows)
        if patch_rows.ndim != 3 or patch_rows.shape[1:] != (cfg.num_patches,
                                                            cfg.patch_elements):
            raise ShapeError(
                f"patch rows {patch_rows.shape} do not match batched "
                f"(B, {cfg.num_patches}, {cfg.patch_elements})"
            )
        rate = cfg.dropout_rate if train else 0.0
        if rate > 0.0 and rng is None:
            raise ContractError("dropout requires an rng in training mode")
        z = embed_patches(patch_rows, self.embedding)
        for l, layer in enumerate(self.layers):
            z = encoder_layer(z, layer, eps=cfg.layer_norm_eps,
                              dropout_rate=rate, rng=rng,
                              sink=attention_sink, layer=l)
        cls_row = T.select_token(z, 0)
        hidden = _mlp(cls_row, self.head.hidden_weights, self.head.hidden_biases)
        return T.add(T.matmul(hidden, self.head.logits_weight), self.head.logits_bias)


def forward_classify(frame: ImageFrame, model: VitModel) -> np.ndarray:
    """Probabilities (drowsy, vigilant) for one preprocessed frame."""
    cfg = model.config
    if (frame.height, frame.width) != tuple(cfg.resized) or frame.channels != cfg.channels:
        raise ContractError(
            f"frame {frame.shape} is not preprocessed to {cfg.resized} "
            f"x {cfg.channels} channels"
        )
    rows = patchify(frame, cfg.patch_size).rows
    logits = model.forward(Tensor(rows[None, :, :]))
    return T.softmax_rows(logits).data[0].copy()

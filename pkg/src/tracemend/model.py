"""Transformer autoencoder for trace classification and correction.

The encoder reads [CLS]-prefixed token sequences; the detection head maps
the [CLS] hidden state through a scalar linear layer and a sigmoid, and the
decoder turns the remaining hidden rows into per-position token logits in a
single non-autoregressive pass. Two baseline variants share the interface:
an encoder-only model whose correction path is a position-wise feed-forward
map, and a dense autoencoder over flattened one-hot inputs.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from . import nncore as nn
from ._util import rng_for, STAGE_MODEL_INIT
from .errors import CheckpointError, ConfigError, DataError, ShapeError

VARIANTS = ("transformer-ae", "encoder-only", "dense-ae")

_MAGIC = b"TMENDCK1"
_CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    max_len: int
    d_model: int = 64
    n_heads_enc: int = 8
    n_heads_dec: int = 8
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    d_ffn: int = 64
    variant: str = "transformer-ae"
    mask_pad_attention: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown model variant {self.variant!r}; choose from {VARIANTS}")
        if self.vocab_size < 4:
            raise ConfigError("vocab_size must cover at least one activity plus special tokens")
        if self.max_len < 2:
            raise ConfigError("max_len must be at least 2 ([CLS] plus one event)")
        if self.variant != "dense-ae":
            for heads in (self.n_heads_enc, self.n_heads_dec):
                if self.d_model % heads:
                    raise ConfigError(
                        f"d_model={self.d_model} not divisible by {heads} attention heads"
                    )

    def as_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "max_len": self.max_len,
            "d_model": self.d_model,
            "n_heads_enc": self.n_heads_enc,
            "n_heads_dec": self.n_heads_dec,
            "n_layers_enc": self.n_layers_enc,
            "n_layers_dec": self.n_layers_dec,
            "d_ffn": self.d_ffn,
            "variant": self.variant,
            "mask_pad_attention": self.mask_pad_attention,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ForwardOutput:
    anomaly_prob: nn.Tensor   # (batch,)
    logits: nn.Tensor         # (batch, max_len - 1, vocab_size)


class MultiHeadAttention:
    """Bidirectional scaled dot-product attention with per-head projections."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator, prefix: str):
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.wq = [nn.uniform_param((d_model, self.d_k), rng, f"{prefix}.q.{i}")
                   for i in range(n_heads)]
        self.wk = [nn.uniform_param((d_model, self.d_k), rng, f"{prefix}.k.{i}")
                   for i in range(n_heads)]
        self.wv = [nn.uniform_param((d_model, self.d_k), rng, f"{prefix}.v.{i}")
                   for i in range(n_heads)]
        self.wo = nn.uniform_param((d_model, d_model), rng, f"{prefix}.o")
        self._scale = 1.0 / np.sqrt(self.d_k)

    def __call__(self, x: nn.Tensor, mask: Optional[nn.Tensor] = None) -> nn.Tensor:
        heads = []
        for wq, wk, wv in zip(self.wq, self.wk, self.wv):
            q = nn.matmul(x, wq)
            k = nn.matmul(x, wk)
            v = nn.matmul(x, wv)
            scores = nn.mul(nn.matmul(q, nn.transpose_last2(k)), self._scale)
            if mask is not None:
                scores = nn.add(scores, mask)
            heads.append(nn.matmul(nn.softmax_lastdim(scores), v))
        return nn.matmul(nn.concat_lastdim(heads), self.wo)

    def parameters(self) -> list[nn.Parameter]:
        return [*self.wq, *self.wk, *self.wv, self.wo]


class TransformerBlock:
    """Post-norm residual block: Norm(MHA(x) + x) then Norm(FFN(z) + z)."""

    def __init__(self, d_model: int, n_heads: int, d_ffn: int,
                 rng: np.random.Generator, prefix: str):
        self.attn = MultiHeadAttention(d_model, n_heads, rng, f"{prefix}.attn")
        self.ln1_gain = nn.Parameter(np.ones(d_model, dtype=np.float32), f"{prefix}.ln1.gain")
        self.ln1_bias = nn.zeros_param((d_model,), f"{prefix}.ln1.bias")
        self.ffn_w1 = nn.uniform_param((d_model, d_ffn), rng, f"{prefix}.ffn.w1")
        self.ffn_b1 = nn.zeros_param((d_ffn,), f"{prefix}.ffn.b1")
        self.ffn_w2 = nn.uniform_param((d_ffn, d_model), rng, f"{prefix}.ffn.w2")
        self.ffn_b2 = nn.zeros_param((d_model,), f"{prefix}.ffn.b2")
        self.ln2_gain = nn.Parameter(np.ones(d_model, dtype=np.float32), f"{prefix}.ln2.gain")
        self.ln2_bias = nn.zeros_param((d_model,), f"{prefix}.ln2.bias")

    def __call__(self, x: nn.Tensor, mask: Optional[nn.Tensor] = None) -> nn.Tensor:
        z = nn.layer_norm(nn.add(self.attn(x, mask), x), self.ln1_gain, self.ln1_bias)
        out = nn.ffn(z, self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2)
        return nn.layer_norm(nn.add(out, z), self.ln2_gain, self.ln2_bias)

    def parameters(self) -> list[nn.Parameter]:
        return [*self.attn.parameters(),
                self.ln1_gain, self.ln1_bias,
                self.ffn_w1, self.ffn_b1, self.ffn_w2, self.ffn_b2,
                self.ln2_gain, self.ln2_bias]


def _check_tokens(tokens: np.ndarray, config: ModelConfig) -> np.ndarray:
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    if tokens.ndim != 2 or tokens.shape[1] != config.max_len:
        raise ShapeError(
            f"token batch must be (n, {config.max_len}), got {tokens.shape}"
        )
    if tokens.min() < 0 or tokens.max() >= config.vocab_size:
        raise DataError(f"token ids must lie in [0, {config.vocab_size})")
    return tokens


class _EncoderCore:
    """Shared embedding + encoder stack + detection head; subclasses add
    their correction path via decode()."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator):
        self.config = config
        self.activity_names: Optional[tuple[str, ...]] = None
        d, v, l = config.d_model, config.vocab_size, config.max_len
        self.token_embedding = nn.uniform_param((v, d), rng, "embed.token")
        self.enc_pos_embedding = nn.uniform_param((l, d), rng, "embed.enc_pos")
        self.encoder = [
            TransformerBlock(d, config.n_heads_enc, config.d_ffn, rng, f"encoder.{i}")
            for i in range(config.n_layers_enc)
        ]
        # zero-initialized scalar head: an untrained model answers 0.5
        self.detect_w = nn.zeros_param((d, 1), "head.detect.w")
        self.detect_b = nn.zeros_param((1,), "head.detect.b")

    # pad token id = vocab_size - 3 by TokenVocab construction
    def _pad_mask(self, tokens: np.ndarray) -> Optional[nn.Tensor]:
        if not self.config.mask_pad_attention:
            return None
        pad_id = self.config.vocab_size - 3
        mask = np.where(tokens == pad_id, np.float32(-1e9), np.float32(0.0))
        return nn.Tensor(mask[:, None, :])

    def encode(self, tokens: np.ndarray) -> nn.Tensor:
        tokens = _check_tokens(tokens, self.config)
        cls_id = self.config.vocab_size - 2
        if not np.all(tokens[:, 0] == cls_id):
            raise DataError("encoder input must start with the [CLS] token")
        x = nn.add(nn.embedding_lookup(self.token_embedding, tokens),
                   self.enc_pos_embedding)
        mask = self._pad_mask(tokens)
        for block in self.encoder:
            x = block(x, mask)
        return x

    def detect(self, hidden: nn.Tensor) -> nn.Tensor:
        row0 = nn.slice_seq(hidden, 0, 1)
        logit = nn.add(nn.matmul(row0, self.detect_w), self.detect_b)
        return nn.sigmoid(nn.reshape(logit, (hidden.shape[0],)))

    def decode(self, hidden: nn.Tensor, tokens: Optional[np.ndarray] = None) -> nn.Tensor:
        raise NotImplementedError

    def forward(self, tokens: np.ndarray) -> ForwardOutput:
        tokens = _check_tokens(tokens, self.config)
        hidden = self.encode(tokens)
        return ForwardOutput(anomaly_prob=self.detect(hidden),
                             logits=self.decode(hidden, tokens))

    def _core_parameters(self) -> list[nn.Parameter]:
        params = [self.token_embedding, self.enc_pos_embedding]
        for block in self.encoder:
            params.extend(block.parameters())
        return params


class TransformerAutoencoder(_EncoderCore):
    """Full encoder-decoder variant; the decoder consumes encoder hidden rows
    1.. with fresh learnable position embeddings (no token re-embedding)."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        rng = rng_for(seed, STAGE_MODEL_INIT)
        super().__init__(config, rng)
        d, v, l = config.d_model, config.vocab_size, config.max_len
        self.dec_pos_embedding = nn.uniform_param((l - 1, d), rng, "embed.dec_pos")
        self.decoder = [
            TransformerBlock(d, config.n_heads_dec, config.d_ffn, rng, f"decoder.{i}")
            for i in range(config.n_layers_dec)
        ]
        self.correct_w = nn.uniform_param((d, v), rng, "head.correct.w")
        self.correct_b = nn.zeros_param((v,), "head.correct.b")

    def decode(self, hidden: nn.Tensor, tokens: Optional[np.ndarray] = None) -> nn.Tensor:
        x = nn.add(nn.slice_seq(hidden, 1, self.config.max_len), self.dec_pos_embedding)
        mask = None
        if tokens is not None and self.config.mask_pad_attention:
            mask_full = self._pad_mask(np.asarray(tokens))
            mask = nn.Tensor(mask_full.data[:, :, 1:])
        for block in self.decoder:
            x = block(x, mask)
        return nn.linear(x, self.correct_w, self.correct_b)

    def parameters(self) -> list[nn.Parameter]:
        params = self._core_parameters()
        params.append(self.dec_pos_embedding)
        for block in self.decoder:
            params.extend(block.parameters())
        params.extend([self.detect_w, self.detect_b, self.correct_w, self.correct_b])
        return params


class EncoderOnlyModel(_EncoderCore):
    """BERT-style baseline: the decoder stack is replaced by a position-wise
    fully connected network over the encoder's non-[CLS] rows."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        rng = rng_for(seed, STAGE_MODEL_INIT)
        super().__init__(config, rng)
        d, v = config.d_model, config.vocab_size
        self.correct_w1 = nn.uniform_param((d, config.d_ffn), rng, "head.correct.w1")
        self.correct_b1 = nn.zeros_param((config.d_ffn,), "head.correct.b1")
        self.correct_w2 = nn.uniform_param((config.d_ffn, v), rng, "head.correct.w2")
        self.correct_b2 = nn.zeros_param((v,), "head.correct.b2")

    def decode(self, hidden: nn.Tensor, tokens: Optional[np.ndarray] = None) -> nn.Tensor:
        rest = nn.slice_seq(hidden, 1, self.config.max_len)
        return nn.ffn(rest, self.correct_w1, self.correct_b1,
                      self.correct_w2, self.correct_b2)

    def parameters(self) -> list[nn.Parameter]:
        params = self._core_parameters()
        params.extend([self.detect_w, self.detect_b,
                       self.correct_w1, self.correct_b1,
                       self.correct_w2, self.correct_b2])
        return params


class DenseAutoencoder:
    """Plain autoencoder baseline: flattened one-hot input through a two-layer
    bottleneck, with the same two heads for interface parity."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.activity_names: Optional[tuple[str, ...]] = None
        rng = rng_for(seed, STAGE_MODEL_INIT)
        d, v, l = config.d_model, config.vocab_size, config.max_len
        self.enc_w = nn.uniform_param((l * v, d), rng, "dense.enc.w")
        self.enc_b = nn.zeros_param((d,), "dense.enc.b")
        self.detect_w = nn.zeros_param((d, 1), "head.detect.w")
        self.detect_b = nn.zeros_param((1,), "head.detect.b")
        self.dec_w = nn.uniform_param((d, (l - 1) * v), rng, "dense.dec.w")
        self.dec_b = nn.zeros_param(((l - 1) * v,), "dense.dec.b")

    def forward(self, tokens: np.ndarray) -> ForwardOutput:
        tokens = _check_tokens(tokens, self.config)
        b, l = tokens.shape
        v = self.config.vocab_size
        onehot = np.zeros((b, l, v), dtype=np.float32)
        onehot[np.arange(b)[:, None], np.arange(l)[None, :], tokens] = 1.0
        x = nn.Tensor(onehot.reshape(b, 1, l * v))
        hid = nn.relu(nn.linear(x, self.enc_w, self.enc_b))
        prob = nn.sigmoid(nn.reshape(
            nn.linear(hid, self.detect_w, self.detect_b), (b,)))
        logits = nn.reshape(nn.linear(hid, self.dec_w, self.dec_b), (b, l - 1, v))
        return ForwardOutput(anomaly_prob=prob, logits=logits)

    def parameters(self) -> list[nn.Parameter]:
        return [self.enc_w, self.enc_b, self.detect_w, self.detect_b,
                self.dec_w, self.dec_b]


Model = Union[TransformerAutoencoder, EncoderOnlyModel, DenseAutoencoder]


def build_model(config: ModelConfig, seed: int = 0) -> Model:
    if config.variant == "transformer-ae":
        return TransformerAutoencoder(config, seed)
    if config.variant == "encoder-only":
        return EncoderOnlyModel(config, seed)
    return DenseAutoencoder(config, seed)


def save_checkpoint(model: Model, path: Union[str, Path],
                    extras: Optional[dict] = None) -> None:
    """Write magic + JSON manifest + contiguous little-endian float32 blob."""
    params = model.parameters()
    tensors = []
    offset = 0
    blobs = []
    for p in params:
        raw = np.ascontiguousarray(p.data, dtype="<f4").tobytes()
        tensors.append({
            "name": p.name,
            "shape": list(p.data.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    manifest = {
        "format_version": _CHECKPOINT_VERSION,
        "config": model.config.as_dict(),
        "extras": extras or {},
        "tensors": tensors,
    }
    if getattr(model, "activity_names", None) is not None:
        manifest["extras"].setdefault("activity_names", list(model.activity_names))
    header = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: Union[str, Path]) -> tuple[Model, dict]:
    """Rebuild a model from a checkpoint file; returns (model, extras)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes, not a tracemend checkpoint")
        raw_len = fh.read(4)
        if len(raw_len) < 4:
            raise CheckpointError(f"{path}: truncated header length")
        (header_len,) = struct.unpack("<I", raw_len)
        header = fh.read(header_len)
        if len(header) < header_len:
            raise CheckpointError(f"{path}: truncated manifest")
        try:
            manifest = json.loads(header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointError(f"{path}: unreadable manifest: {exc}") from None
        if manifest.get("format_version") != _CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {manifest.get('format_version')}"
            )
        blob = fh.read()

    config = ModelConfig.from_dict(manifest["config"])
    model = build_model(config, seed=0)
    named = nn.collect_named(model.parameters())
    declared = {t["name"] for t in manifest["tensors"]}
    if declared != set(named):
        missing = sorted(set(named) - declared)
        extra = sorted(declared - set(named))
        raise CheckpointError(
            f"{path}: parameter names disagree with architecture "
            f"(missing {missing or 'none'}, unexpected {extra or 'none'})"
        )
    for entry in manifest["tensors"]:
        param = named[entry["name"]]
        shape = tuple(entry["shape"])
        expected_bytes = int(np.prod(shape, dtype=np.int64)) * 4
        if shape != param.data.shape:
            raise CheckpointError(
                f"{path}: tensor {entry['name']} has shape {shape}, "
                f"architecture expects {param.data.shape}"
            )
        if entry["nbytes"] != expected_bytes:
            raise CheckpointError(
                f"{path}: tensor {entry['name']} declares {entry['nbytes']} bytes, "
                f"shape {shape} requires {expected_bytes}"
            )
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(blob):
            raise CheckpointError(f"{path}: blob truncated at tensor {entry['name']}")
        param.data = np.frombuffer(blob[start:stop], dtype="<f4").reshape(shape).copy()
        param.grad = np.zeros_like(param.data)
    extras = manifest.get("extras", {})
    names = extras.get("activity_names")
    if names is not None:
        model.activity_names = tuple(names)
    return model, extras

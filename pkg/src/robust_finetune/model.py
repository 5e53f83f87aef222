"""Transformer-encoder classifier over a named parameter map.

The encoder embeds tokens plus learned positions, runs post-norm attention
blocks, mean-pools over non-PAD positions, and feeds a tanh pooler into the
classification head. Parameters live in an ordered name -> tensor map so
that training strategies can address individual tensors (the adversarial
attack targets ``embeddings.token``, gradient masks target any subset), and
the checkpoint manifest has stable names.

Forward and prediction are pure with respect to the parameters; the
backward pass seeds autograd with the analytic d(loss)/d(logits) from
:mod:`robust_finetune.losses` and additionally returns the gradient with
respect to the summed input embeddings.

Checkpoint container layout (also described in README.md):

* 8-byte magic ``RFTCHK01``
* little-endian uint64 header length
* UTF-8 JSON header: ``encoder_config``, ``extra`` (arbitrary metadata), and
  a ``tensors`` manifest of ``{name, shape, dtype, offset, nbytes}``
* payload: the raw tensor data, little-endian float32, concatenated in
  manifest order

Round-trips are bit-exact for float32 parameters.
"""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch

from . import losses
from .corpus import TokenizedBatch, batches
from .ensemble import PredictionRow

CHECKPOINT_MAGIC = b"RFTCHK01"


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 64
    ff_dim: int = 128
    max_positions: int = 280
    num_classes: int = 14
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.hidden_dim % self.num_heads != 0:
            raise ValueError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.vocab_size < 2:
            raise ValueError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if self.num_layers < 1 or self.num_heads < 1:
            raise ValueError("num_layers and num_heads must be >= 1")
        if self.max_positions < 1 or self.ff_dim < 1 or self.hidden_dim < 1:
            raise ValueError("dimensions must be >= 1")


@dataclass
class ForwardResult:
    logits: np.ndarray
    probabilities: np.ndarray


@dataclass
class BackwardResult:
    loss: float
    grads: "OrderedDict[str, torch.Tensor]"
    embedding_grad: torch.Tensor


def _glorot(shape: tuple[int, ...], gen: torch.Generator, dtype) -> torch.Tensor:
    fan_in, fan_out = shape[0], shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return (torch.rand(shape, generator=gen, dtype=dtype) * 2.0 - 1.0) * bound


def init_params(config: EncoderConfig, dtype: torch.dtype = torch.float32) -> "OrderedDict[str, torch.Tensor]":
    """Deterministic parameter init: fan-scaled uniform weights, zero biases,
    unit LayerNorm gains. ``dtype=torch.float64`` is used by the gradient
    checks; checkpoints only store float32."""
    gen = torch.Generator().manual_seed(config.seed)
    d, f = config.hidden_dim, config.ff_dim
    params: "OrderedDict[str, torch.Tensor]" = OrderedDict()

    def weight(name: str, shape: tuple[int, ...]) -> None:
        params[name] = _glorot(shape, gen, dtype)

    def zeros(name: str, size: int) -> None:
        params[name] = torch.zeros(size, dtype=dtype)

    def ones(name: str, size: int) -> None:
        params[name] = torch.ones(size, dtype=dtype)

    weight("embeddings.token", (config.vocab_size, d))
    weight("embeddings.position", (config.max_positions, d))
    for i in range(config.num_layers):
        prefix = f"encoder.{i}"
        for proj in ("wq", "wk", "wv", "wo"):
            weight(f"{prefix}.attn.{proj}", (d, d))
        for bias in ("bq", "bk", "bv", "bo"):
            zeros(f"{prefix}.attn.{bias}", d)
        ones(f"{prefix}.attn_norm.gain", d)
        zeros(f"{prefix}.attn_norm.bias", d)
        weight(f"{prefix}.ffn.w1", (d, f))
        zeros(f"{prefix}.ffn.b1", f)
        weight(f"{prefix}.ffn.w2", (f, d))
        zeros(f"{prefix}.ffn.b2", d)
        ones(f"{prefix}.ffn_norm.gain", d)
        zeros(f"{prefix}.ffn_norm.bias", d)
    weight("pooler.weight", (d, d))
    zeros("pooler.bias", d)
    weight("classifier.weight", (d, config.num_classes))
    zeros("classifier.bias", config.num_classes)

    for tensor in params.values():
        tensor.requires_grad_(True)
    return params


def _dropout(x: torch.Tensor, rate: float, gen: torch.Generator | None) -> torch.Tensor:
    if gen is None or rate == 0.0:
        return x
    keep = (torch.rand(x.shape, generator=gen, dtype=x.dtype) >= rate).to(x.dtype)
    return x * keep / (1.0 - rate)


class TextClassifier:
    """Config plus parameters, with forward/backward/predict operations."""

    def __init__(
        self,
        config: EncoderConfig,
        params: "OrderedDict[str, torch.Tensor] | None" = None,
        dtype: torch.dtype = torch.float32,
    ):
        self.config = config
        self.params = params if params is not None else init_params(config, dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.params["embeddings.token"].dtype

    def _validate_batch(self, batch: TokenizedBatch) -> None:
        cfg = self.config
        if batch.seq_length > cfg.max_positions:
            raise ValueError(
                f"sequence length {batch.seq_length} exceeds max_positions {cfg.max_positions}"
            )
        if batch.token_ids.size and (
            batch.token_ids.min() < 0 or batch.token_ids.max() >= cfg.vocab_size
        ):
            raise ValueError(
                f"token id out of range [0, {cfg.vocab_size}): "
                f"min {batch.token_ids.min()}, max {batch.token_ids.max()}"
            )

    def _forward_graph(
        self, batch: TokenizedBatch, train_mode: bool, dropout_seed: int
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """Build the computation graph; returns (logits, summed embeddings)."""
        self._validate_batch(batch)
        cfg = self.config
        p = self.params
        dtype = self.dtype
        num, length = batch.token_ids.shape
        heads, d = cfg.num_heads, cfg.hidden_dim
        head_dim = d // heads

        gen = None
        if train_mode and cfg.dropout_rate > 0.0:
            gen = torch.Generator().manual_seed(dropout_seed)

        ids = torch.from_numpy(batch.token_ids)
        mask = torch.from_numpy(batch.mask).to(dtype)

        emb_sum = p["embeddings.token"][ids] + p["embeddings.position"][:length].unsqueeze(0)
        x = _dropout(emb_sum, cfg.dropout_rate, gen)

        # Padded keys get a large negative bias; exp underflows them to 0.
        attn_bias = (1.0 - mask).view(num, 1, 1, length) * -1e9

        def split_heads(t: torch.Tensor) -> torch.Tensor:
            return t.view(num, length, heads, head_dim).transpose(1, 2)

        for i in range(cfg.num_layers):
            prefix = f"encoder.{i}"
            q = split_heads(x @ p[f"{prefix}.attn.wq"] + p[f"{prefix}.attn.bq"])
            k = split_heads(x @ p[f"{prefix}.attn.wk"] + p[f"{prefix}.attn.bk"])
            v = split_heads(x @ p[f"{prefix}.attn.wv"] + p[f"{prefix}.attn.bv"])
            scores = q @ k.transpose(-2, -1) / math.sqrt(head_dim) + attn_bias
            attn = torch.softmax(scores, dim=-1)
            attn = _dropout(attn, cfg.dropout_rate, gen)
            ctx = (attn @ v).transpose(1, 2).reshape(num, length, d)
            ctx = ctx @ p[f"{prefix}.attn.wo"] + p[f"{prefix}.attn.bo"]
            x = torch.nn.functional.layer_norm(
                x + _dropout(ctx, cfg.dropout_rate, gen),
                (d,),
                p[f"{prefix}.attn_norm.gain"],
                p[f"{prefix}.attn_norm.bias"],
            )
            hidden = torch.nn.functional.gelu(x @ p[f"{prefix}.ffn.w1"] + p[f"{prefix}.ffn.b1"])
            hidden = hidden @ p[f"{prefix}.ffn.w2"] + p[f"{prefix}.ffn.b2"]
            x = torch.nn.functional.layer_norm(
                x + _dropout(hidden, cfg.dropout_rate, gen),
                (d,),
                p[f"{prefix}.ffn_norm.gain"],
                p[f"{prefix}.ffn_norm.bias"],
            )

        denom = mask.sum(dim=1, keepdim=True).clamp(min=1.0)
        pooled = (x * mask.unsqueeze(-1)).sum(dim=1) / denom
        pooled = torch.tanh(pooled @ p["pooler.weight"] + p["pooler.bias"])
        pooled = _dropout(pooled, cfg.dropout_rate, gen)
        logits = pooled @ p["classifier.weight"] + p["classifier.bias"]
        return logits, emb_sum

    def forward(
        self, batch: TokenizedBatch, train_mode: bool = False, dropout_seed: int = 0
    ) -> ForwardResult:
        with torch.no_grad():
            logits, _ = self._forward_graph(batch, train_mode, dropout_seed)
        logits_np = logits.numpy().astype(np.float64, copy=False)
        return ForwardResult(logits=logits_np, probabilities=losses.softmax(logits_np))

    def backward(
        self,
        batch: TokenizedBatch,
        loss_kind: str = "ce",
        loss_params: losses.InTrustParams | None = None,
        train_mode: bool = True,
        dropout_seed: int = 0,
    ) -> BackwardResult:
        """Mean loss over the batch, one gradient per parameter, and the
        gradient with respect to the summed input embeddings."""
        if batch.labels is None:
            raise ValueError("backward requires a fully labeled batch")
        logits, emb_sum = self._forward_graph(batch, train_mode, dropout_seed)
        loss, grad_logits = losses.batch_loss_and_grad(
            loss_kind, logits.detach().numpy().astype(np.float64, copy=False),
            batch.labels, loss_params,
        )
        seed = torch.from_numpy(grad_logits).to(self.dtype)
        inputs = list(self.params.values()) + [emb_sum]
        grads = torch.autograd.grad(logits, inputs, grad_outputs=seed, allow_unused=True)
        named = OrderedDict(
            (name, g if g is not None else torch.zeros_like(p))
            for (name, p), g in zip(self.params.items(), grads[:-1])
        )
        emb_grad = grads[-1] if grads[-1] is not None else torch.zeros_like(emb_sum)
        return BackwardResult(loss=loss, grads=named, embedding_grad=emb_grad)

    def predict(self, batch: TokenizedBatch, with_probs: bool = True) -> list[PredictionRow]:
        """Argmax class per example (lowest index wins ties), probabilities
        retained in each row."""
        result = self.forward(batch, train_mode=False)
        rows = []
        for i, example_id in enumerate(batch.ids):
            probs = result.probabilities[i]
            rows.append(
                PredictionRow(
                    id=example_id,
                    predicted=int(np.argmax(probs)),
                    probs=probs.copy() if with_probs else None,
                )
            )
        return rows


def predict_corpus(
    classifier: TextClassifier,
    corpus: Sequence,
    vocab,
    batch_size: int = 32,
    max_length: int = 280,
    with_probs: bool = True,
) -> list[PredictionRow]:
    """Predict a whole corpus in file order."""
    rows: list[PredictionRow] = []
    for batch in batches(corpus, vocab, batch_size, max_length, shuffle_seed=None):
        rows.extend(classifier.predict(batch, with_probs=with_probs))
    return rows


def save_checkpoint(
    path,
    params: "OrderedDict[str, torch.Tensor]",
    encoder_config: EncoderConfig,
    extra: dict | None = None,
) -> None:
    """Write the named-tensor container described in the module docstring."""
    manifest = []
    payload = bytearray()
    for name, tensor in params.items():
        if tensor.dtype != torch.float32:
            raise ValueError(
                f"checkpoints store float32 tensors; {name!r} has dtype {tensor.dtype}"
            )
        raw = tensor.detach().numpy().astype("<f4", copy=False).tobytes()
        manifest.append(
            {
                "name": name,
                "shape": list(tensor.shape),
                "dtype": "f4",
                "offset": len(payload),
                "nbytes": len(raw),
            }
        )
        payload.extend(raw)
    header = json.dumps(
        {
            "encoder_config": asdict(encoder_config),
            "extra": extra or {},
            "tensors": manifest,
        },
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        fh.write(bytes(payload))


def load_checkpoint(path) -> tuple["OrderedDict[str, torch.Tensor]", EncoderConfig, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    config = EncoderConfig(**header["encoder_config"])
    params: "OrderedDict[str, torch.Tensor]" = OrderedDict()
    for entry in header["tensors"]:
        if entry["dtype"] != "f4":
            raise ValueError(f"unsupported tensor dtype {entry['dtype']!r}")
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start : start + nbytes], dtype="<f4").reshape(entry["shape"])
        params[entry["name"]] = torch.from_numpy(arr.copy()).requires_grad_(True)
    return params, config, header["extra"]

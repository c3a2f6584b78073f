"""Tiny decoder-only transformer with summed token/position/segment
embeddings, causal self-attention, a weight-tied LM head, masked
cross-entropy training, and a versioned binary checkpoint format.

Parameters are float32; loss reduction happens in float64 so gradient
checks reproduce. Pre-norm residual blocks keep training stable at this
scale. Trained single-threaded, runs are bit-reproducible under a seed.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .assembly import N_SEGMENTS, SEG_P2, TrainingSample
from .errors import DataError

CHECKPOINT_MAGIC = b"PARAFILL"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    vocab_size: int
    n_layers: int = 4
    n_heads: int = 4
    d_model: int = 128
    block_size: int = 256
    n_segments: int = N_SEGMENTS
    dropout: float = 0.1

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads != 0:
            raise DataError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.block_size < 1:
            raise DataError("block_size must be >= 1")


@dataclass
class TrainHyper:
    lr: float = 3e-4
    betas: tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.01
    grad_clip: float = 1.0


class CausalSelfAttention(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.n_heads = config.n_heads
        self.head_dim = config.d_model // config.n_heads
        self.qkv = nn.Linear(config.d_model, 3 * config.d_model)
        self.proj = nn.Linear(config.d_model, config.d_model)
        self.attn_drop = nn.Dropout(config.dropout)
        self.resid_drop = nn.Dropout(config.dropout)

    def forward(
        self,
        x: torch.Tensor,
        past: tuple[torch.Tensor, torch.Tensor] | None = None,
    ) -> tuple[torch.Tensor, tuple[torch.Tensor, torch.Tensor]]:
        bsz, t, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=2)

        def heads(m: torch.Tensor) -> torch.Tensor:
            return m.view(bsz, -1, self.n_heads, self.head_dim).transpose(1, 2)

        q, k, v = heads(q), heads(k), heads(v)
        if past is not None:
            k = torch.cat([past[0], k], dim=2)
            v = torch.cat([past[1], v], dim=2)
        total = k.shape[2]
        att = (q @ k.transpose(-2, -1)) / math.sqrt(self.head_dim)
        if t > 1:
            offset = total - t
            mask = torch.ones(t, total, dtype=torch.bool, device=x.device).tril(diagonal=offset)
            att = att.masked_fill(~mask, float("-inf"))
        att = self.attn_drop(F.softmax(att, dim=-1))
        out = (att @ v).transpose(1, 2).contiguous().view(bsz, t, d)
        return self.resid_drop(self.proj(out)), (k, v)


class Block(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(config.d_model)
        self.attn = CausalSelfAttention(config)
        self.ln2 = nn.LayerNorm(config.d_model)
        self.mlp = nn.Sequential(
            nn.Linear(config.d_model, 4 * config.d_model),
            nn.GELU(),
            nn.Linear(4 * config.d_model, config.d_model),
            nn.Dropout(config.dropout),
        )

    def forward(
        self,
        x: torch.Tensor,
        past: tuple[torch.Tensor, torch.Tensor] | None = None,
    ) -> tuple[torch.Tensor, tuple[torch.Tensor, torch.Tensor]]:
        attn_out, present = self.attn(self.ln1(x), past)
        x = x + attn_out
        x = x + self.mlp(self.ln2(x))
        return x, present


class TinyLM(nn.Module):
    """Decoder-only LM; input at position i is tok_emb[id] + pos_emb[i] +
    seg_emb[segment], the head is the token embedding transposed."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.tok_emb = nn.Embedding(config.vocab_size, config.d_model)
        self.pos_emb = nn.Embedding(config.block_size, config.d_model)
        self.seg_emb = nn.Embedding(config.n_segments, config.d_model)
        self.drop = nn.Dropout(config.dropout)
        self.blocks = nn.ModuleList(Block(config) for _ in range(config.n_layers))
        self.ln_f = nn.LayerNorm(config.d_model)
        self.head = nn.Linear(config.d_model, config.vocab_size, bias=False)
        self.head.weight = self.tok_emb.weight
        self.apply(self._init_weights)

    @staticmethod
    def _init_weights(module: nn.Module) -> None:
        if isinstance(module, nn.Linear):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)
            if module.bias is not None:
                nn.init.zeros_(module.bias)
        elif isinstance(module, nn.Embedding):
            nn.init.normal_(module.weight, mean=0.0, std=0.02)

    def _validate(self, ids: torch.Tensor, segments: torch.Tensor, offset: int) -> None:
        if ids.shape != segments.shape:
            raise DataError(f"ids shape {tuple(ids.shape)} != segments shape {tuple(segments.shape)}")
        if offset + ids.shape[-1] > self.config.block_size:
            raise DataError(
                f"sequence length {offset + ids.shape[-1]} exceeds block_size {self.config.block_size}"
            )
        if ids.numel():
            if int(ids.max()) >= self.config.vocab_size or int(ids.min()) < 0:
                raise DataError("token id out of range")
            if int(segments.max()) >= self.config.n_segments or int(segments.min()) < 0:
                raise DataError("segment id out of range")

    def hidden_states(
        self,
        ids: torch.Tensor,
        segments: torch.Tensor,
        past: list[tuple[torch.Tensor, torch.Tensor]] | None = None,
    ) -> tuple[torch.Tensor, list[tuple[torch.Tensor, torch.Tensor]]]:
        offset = past[0][0].shape[2] if past else 0
        self._validate(ids, segments, offset)
        positions = torch.arange(offset, offset + ids.shape[-1], device=ids.device)
        x = self.drop(self.tok_emb(ids) + self.pos_emb(positions) + self.seg_emb(segments))
        presents = []
        for layer_idx, block in enumerate(self.blocks):
            x, present = block(x, past[layer_idx] if past else None)
            presents.append(present)
        if self.blocks:
            # A zero-layer model keeps the raw embedding sum so its logits
            # equal the closed-form (tok+pos+seg) @ tied-head product.
            x = self.ln_f(x)
        return x, presents

    def forward(self, ids: torch.Tensor, segments: torch.Tensor) -> torch.Tensor:
        """Next-token logits for every position; shape (..., vocab_size)."""
        squeeze = ids.dim() == 1
        if squeeze:
            ids = ids.unsqueeze(0)
            segments = segments.unsqueeze(0)
        x, _ = self.hidden_states(ids, segments)
        logits = self.head(x)
        return logits.squeeze(0) if squeeze else logits


def masked_loss(
    logits: torch.Tensor, target_ids: torch.Tensor, loss_mask: torch.Tensor
) -> torch.Tensor:
    """Mean NLL over positions where loss_mask is true; masked-out
    positions contribute exactly zero (and receive exactly zero gradient)."""
    if not bool(loss_mask.any()):
        raise DataError("empty loss support: all positions masked out")
    flat_logits = logits.reshape(-1, logits.shape[-1])
    flat_targets = target_ids.reshape(-1)
    flat_mask = loss_mask.reshape(-1)
    selected = flat_mask.nonzero(as_tuple=True)[0]
    nll = F.cross_entropy(flat_logits[selected], flat_targets[selected], reduction="none")
    return nll.double().mean()


def _loss_from_hidden(model: TinyLM, hidden: torch.Tensor, targets: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    # Head applied only at loss positions: same value and gradients as the
    # full-logits path, at a fraction of the matmul cost.
    if not bool(mask.any()):
        raise DataError("empty loss support: all positions masked out")
    flat_hidden = hidden.reshape(-1, hidden.shape[-1])
    flat_targets = targets.reshape(-1)
    selected = mask.reshape(-1).nonzero(as_tuple=True)[0]
    logits = model.head(flat_hidden[selected])
    nll = F.cross_entropy(logits, flat_targets[selected], reduction="none")
    return nll.double().mean()


def collate(samples: Sequence[TrainingSample], crop: bool = True) -> dict[str, torch.Tensor]:
    """Stack samples into batch tensors; optionally crop the all-pad tail
    shared by the whole batch (identical logits at surviving positions)."""
    if not samples:
        raise DataError("empty batch")
    length = len(samples[0].ids)
    if crop:
        length = max(2, max(s.attention_len for s in samples))
    ids = torch.tensor([s.ids[:length] for s in samples], dtype=torch.long)
    segments = torch.tensor([s.segments[:length] for s in samples], dtype=torch.long)
    mask = torch.tensor([s.loss_mask[:length] for s in samples], dtype=torch.bool)
    return {"ids": ids, "segments": segments, "mask": mask}


def batch_loss(model: TinyLM, batch: dict[str, torch.Tensor]) -> torch.Tensor:
    """Masked next-token loss of a collated batch."""
    ids, segments, mask = batch["ids"], batch["segments"], batch["mask"]
    hidden, _ = model.hidden_states(ids[:, :-1], segments[:, :-1])
    return _loss_from_hidden(model, hidden, ids[:, 1:], mask[:, 1:])


def train_step(
    model: TinyLM,
    batch: dict[str, torch.Tensor],
    optimizer: torch.optim.Optimizer,
    grad_clip: float = 1.0,
    batch_id: int | str = "?",
) -> float:
    model.train()
    optimizer.zero_grad(set_to_none=True)
    loss = batch_loss(model, batch)
    if not torch.isfinite(loss):
        with torch.no_grad():
            logits = model(batch["ids"][:, :-1], batch["segments"][:, :-1])
            max_logit = float(logits.max())
        raise RuntimeError(
            f"non-finite loss at batch {batch_id}: loss={float(loss.detach())} "
            f"max_logit={max_logit}"
        )
    loss.backward()
    if grad_clip > 0:
        torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return float(loss.detach())


def make_optimizer(model: TinyLM, hyper: TrainHyper) -> torch.optim.Optimizer:
    decay, no_decay = [], []
    for name, param in model.named_parameters():
        if param.dim() >= 2 and "emb" not in name:
            decay.append(param)
        else:
            no_decay.append(param)
    groups = [
        {"params": decay, "weight_decay": hyper.weight_decay},
        {"params": no_decay, "weight_decay": 0.0},
    ]
    return torch.optim.AdamW(groups, lr=hyper.lr, betas=hyper.betas)


def train_model(
    model: TinyLM,
    epoch_samples: Callable[[int], Sequence[TrainingSample]],
    epochs: int,
    batch_size: int,
    hyper: TrainHyper | None = None,
    seed: int = 0,
    log_path: str | Path | None = None,
    progress: Callable[[dict], None] | None = None,
) -> list[float]:
    """Run the full loop: cosine LR decay, per-epoch sample rebuilding
    (summaries resample each epoch), JSONL step log. Returns mean loss per
    epoch."""
    hyper = hyper or TrainHyper()
    optimizer = make_optimizer(model, hyper)
    first_epoch = list(epoch_samples(0))
    if not first_epoch:
        raise DataError("no training samples")
    steps_per_epoch = math.ceil(len(first_epoch) / batch_size)
    scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(
        optimizer, T_max=max(1, steps_per_epoch * epochs)
    )
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    epoch_means: list[float] = []
    step = 0
    tokens_seen = 0
    try:
        for epoch in range(epochs):
            samples = first_epoch if epoch == 0 else list(epoch_samples(epoch))
            order = np.random.default_rng(
                np.random.SeedSequence([seed, epoch, 0xBA7C])
            ).permutation(len(samples))
            losses = []
            for start in range(0, len(order), batch_size):
                chunk = [samples[i] for i in order[start : start + batch_size]]
                batch = collate(chunk)
                loss = train_step(
                    model, batch, optimizer, hyper.grad_clip, batch_id=f"{epoch}:{start}"
                )
                scheduler.step()
                losses.append(loss)
                tokens_seen += int(batch["ids"].numel())
                step += 1
                row = {
                    "step": step,
                    "epoch": epoch,
                    "loss": loss,
                    "lr": scheduler.get_last_lr()[0],
                    "tokens_seen": tokens_seen,
                }
                if log_fh:
                    log_fh.write(json.dumps(row) + "\n")
                if progress:
                    progress(row)
            epoch_means.append(float(np.mean(losses)))
    finally:
        if log_fh:
            log_fh.close()
    return epoch_means


def perplexity(
    model: TinyLM, ids: Sequence[int], segments: Sequence[int], mask: Sequence[bool]
) -> float:
    """exp(mean NLL) over positions whose mask is true; position 0 has no
    prefix and must be masked out."""
    if len(ids) < 2:
        raise DataError("need at least two tokens to score")
    if mask[0]:
        raise DataError("position 0 has no prefix; mask it out")
    model.eval()
    with torch.no_grad():
        ids_t = torch.tensor(list(ids), dtype=torch.long)
        segs_t = torch.tensor(list(segments), dtype=torch.long)
        logits = model(ids_t[:-1], segs_t[:-1])
        loss = masked_loss(logits, ids_t[1:], torch.tensor(list(mask[1:]), dtype=torch.bool))
    return float(torch.exp(loss))


def text_perplexity(model: TinyLM, vocab, text: str, prefix_special: str = "[P2]") -> float:
    """Standalone-text fluency: score the text's tokens after a section
    marker so every content token has a prefix."""
    from .assembly import section_tokens

    tokens = section_tokens(vocab, text)
    if len(tokens) < 1:
        raise DataError("empty text")
    ids = [vocab.special_id(prefix_special)] + tokens
    segments = [SEG_P2] * len(ids)
    mask = [False] + [True] * len(tokens)
    return perplexity(model, ids, segments, mask)


class DecodeSession:
    """Incremental decoding state over an immutable model (KV cache).

    Satisfies the decode module's session protocol: logits(), advance(),
    fork(), vocab_size, and length accounting against block_size.
    """

    def __init__(self, model: TinyLM, prefix_ids: Sequence[int], prefix_segments: Sequence[int]):
        if len(prefix_ids) == 0:
            raise DataError("empty prefix")
        self.model = model
        self.vocab_size = model.config.vocab_size
        model.eval()
        with torch.no_grad():
            ids = torch.tensor([list(prefix_ids)], dtype=torch.long)
            segs = torch.tensor([list(prefix_segments)], dtype=torch.long)
            hidden, past = model.hidden_states(ids, segs)
            self._past = past
            self._logits = model.head(hidden[:, -1]).squeeze(0).double().numpy()
        self.length = len(prefix_ids)

    def logits(self) -> np.ndarray:
        return self._logits.copy()

    @property
    def remaining(self) -> int:
        return self.model.config.block_size - self.length

    def advance(self, token_id: int, segment: int = SEG_P2) -> None:
        if self.remaining <= 0:
            raise DataError("block_size exhausted")
        with torch.no_grad():
            ids = torch.tensor([[token_id]], dtype=torch.long)
            segs = torch.tensor([[segment]], dtype=torch.long)
            hidden, self._past = self.model.hidden_states(ids, segs, past=self._past)
            self._logits = self.model.head(hidden[:, -1]).squeeze(0).double().numpy()
        self.length += 1

    def fork(self) -> "DecodeSession":
        twin = object.__new__(DecodeSession)
        twin.model = self.model
        twin.vocab_size = self.vocab_size
        twin._past = [(k.clone(), v.clone()) for k, v in self._past]
        twin._logits = self._logits.copy()
        twin.length = self.length
        return twin


def save_checkpoint(
    model: TinyLM, vocab_hash: str, path: str | Path, extra: dict | None = None
) -> None:
    """Versioned container: magic, version, JSON header (config, vocab
    hash, tensor manifest, payload digest), then little-endian float32
    tensor data."""
    tensors = []
    payload = bytearray()
    for name, param in model.named_parameters():
        array = param.detach().numpy().astype("<f4")
        tensors.append(
            {
                "name": name,
                "shape": list(array.shape),
                "dtype": "<f4",
                "offset": len(payload),
                "nbytes": array.nbytes,
            }
        )
        payload.extend(array.tobytes())
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "vocab_hash": vocab_hash,
        "tensors": tensors,
        "payload_sha256": hashlib.sha256(bytes(payload)).hexdigest(),
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(bytes(payload))


def load_checkpoint(
    path: str | Path, expected_vocab_hash: str | None = None
) -> tuple[TinyLM, ModelConfig, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise DataError(f"not a checkpoint file: bad magic {magic!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise DataError(
                f"checkpoint format version {version} unsupported (expected {CHECKPOINT_VERSION})"
            )
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise DataError("checkpoint payload corrupted: digest mismatch")
    if expected_vocab_hash is not None and header["vocab_hash"] != expected_vocab_hash:
        raise DataError(
            f"vocab hash mismatch: checkpoint has {header['vocab_hash'][:12]}..., "
            f"expected {expected_vocab_hash[:12]}..."
        )
    config = ModelConfig(**header["config"])
    model = TinyLM(config)
    with torch.no_grad():
        for spec in header["tensors"]:
            raw = payload[spec["offset"] : spec["offset"] + spec["nbytes"]]
            array = np.frombuffer(raw, dtype=spec["dtype"]).reshape(spec["shape"]).copy()
            target = dict(model.named_parameters())[spec["name"]]
            target.copy_(torch.from_numpy(array))
    model.eval()
    return model, config, header


def checkpoint_file_hash(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def make_model(config: ModelConfig, seed: int = 0) -> TinyLM:
    """Seeded construction so identical seeds give identical init."""
    torch.manual_seed(seed)
    return TinyLM(config)

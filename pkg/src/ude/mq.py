"""Motion quantizer: a VQ-VAE over motion frames.

A three-layer temporal conv encoder (two stride-2 stages, so tokens run at
a quarter of the frame rate) maps frames to embeddings, each embedding row
snaps to its nearest codebook vector, and a mirrored conv decoder maps the
codes back to frames. Training optimizes reconstruction + codebook +
commitment terms with a straight-through estimator across the quantizer.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nm
from .errors import DimensionError, TokenError, TrainingError
from .nn import Embedding, Module
from .numerics import Tensor

DOWNSAMPLE = 4  # two stride-2 convolutions


@dataclass
class MQConfig:
    frame_dim: int
    code_count: int = 64
    code_dim: int = 32
    hidden: int = 64
    beta_codebook: float = 1.0
    beta_commit: float = 1.0


class _Conv(Module):
    def __init__(self, width, c_in, c_out, stride, pad, rng):
        scale = np.sqrt(2.0 / (width * c_in))
        self.kernel = Tensor(rng.normal(0.0, scale, (width, c_in, c_out)), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.stride = stride
        self.pad = pad

    def __call__(self, x):
        return nm.conv1d_temporal(x, self.kernel, stride=self.stride, pad=self.pad) + self.bias


class MQModel(Module):
    """Encoder/decoder conv stacks plus the learned codebook."""

    def __init__(self, cfg: MQConfig, rng: np.random.Generator):
        c, h, d = cfg.frame_dim, cfg.hidden, cfg.code_dim
        self.cfg = cfg
        # width-4 stride-2 convs halve T exactly (floor semantics for odd T)
        self.enc1 = _Conv(4, c, h, 2, 1, rng)
        self.enc2 = _Conv(4, h, h, 2, 1, rng)
        self.enc3 = _Conv(3, h, d, 1, 1, rng)
        self.dec1 = _Conv(3, d, h, 1, 1, rng)
        self.dec2 = _Conv(3, h, h, 1, 1, rng)
        self.dec3 = _Conv(3, h, c, 1, 1, rng)
        self.codebook = Embedding(cfg.code_count, d, rng, scale=0.5)
        # per-coordinate input standardization, filled in by the trainer
        self.center = np.zeros(c)
        self.scale = np.ones(c)
        self.usage = np.zeros(cfg.code_count, dtype=np.int64)

    # -- forward pieces ------------------------------------------------------

    def encode(self, frames) -> Tensor:
        """Frames [T, c] -> embeddings [T/4, code_dim]. T must divide by 4."""
        x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=np.float64))
        if x.ndim != 2 or x.shape[1] != self.cfg.frame_dim:
            raise DimensionError(f"expected [T, {self.cfg.frame_dim}] frames, got {x.shape}")
        if x.shape[0] % DOWNSAMPLE != 0:
            raise DimensionError(
                f"frame count {x.shape[0]} not divisible by {DOWNSAMPLE}; pad or crop first")
        x = (x - Tensor(self.center)) * Tensor(1.0 / self.scale)
        h = nm.relu(self.enc1(x))
        h = nm.relu(self.enc2(h))
        return self.enc3(h)

    def decode_embedding(self, codes) -> Tensor:
        """Code rows [T', code_dim] -> frames [T'*4, frame_dim]."""
        h = nm.relu(self.dec1(codes))
        h = nm.relu(self.dec2(nm.repeat_rows(h, 2)))
        out = self.dec3(nm.repeat_rows(h, 2))
        return out * Tensor(self.scale) + Tensor(self.center)

    def embed_tokens(self, tokens) -> Tensor:
        tokens = np.asarray(tokens, dtype=np.int64)
        if tokens.size and (tokens.min() < 0 or tokens.max() >= self.cfg.code_count):
            raise TokenError(f"token index outside [0, {self.cfg.code_count})")
        return self.codebook(tokens)

    def decode_tokens(self, tokens) -> np.ndarray:
        """Token indices -> motion frames, deterministically."""
        with nm.no_grad():
            return self.decode_embedding(self.embed_tokens(tokens)).data

    def encode_tokens(self, frames) -> np.ndarray:
        """Frames -> nearest-code token indices (no gradients)."""
        with nm.no_grad():
            e = self.encode(frames)
        return quantize(self.codebook.table.data, e.data)


def quantize(codebook: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    """Nearest code per row (squared Euclidean); ties go to the lowest index."""
    diff = embeddings[:, None, :] - codebook[None, :, :]
    d2 = np.einsum("tkd,tkd->tk", diff, diff)
    return np.argmin(d2, axis=1).astype(np.int64)


def vq_loss(model: MQModel, frames) -> tuple:
    """Total training loss and its parts for one sequence.

    Returns (total, parts) where parts maps "recon" / "codebook" /
    "commit" to scalar tensors and "tokens" to the chosen indices. The
    decoder consumes e + sg(q - e), so reconstruction gradients reach the
    encoder straight through the quantizer, while the codebook learns only
    from the codebook term.
    """
    x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=np.float64))
    e = model.encode(x)
    tokens = quantize(model.codebook.table.data, e.data)
    q = model.codebook(tokens)
    straight_through = e + Tensor(q.data - e.data)
    recon = model.decode_embedding(straight_through)
    l_rec = ((recon - x) ** 2).mean()
    l_code = ((e.detach() - q) ** 2).mean()
    l_commit = ((e - q.detach()) ** 2).mean()
    total = l_rec + model.cfg.beta_codebook * l_code + model.cfg.beta_commit * l_commit
    parts = {"recon": l_rec, "codebook": l_code, "commit": l_commit, "tokens": tokens}
    return total, parts


def reconstruction_mse(model: MQModel, motions) -> float:
    """Mean squared reconstruction error over a list of frame arrays."""
    total, count = 0.0, 0
    with nm.no_grad():
        for frames in motions:
            recon = model.decode_embedding(
                model.embed_tokens(model.encode_tokens(frames))).data
            total += float(((recon - frames) ** 2).sum())
            count += frames.size
    return total / count


def codebook_utilization(model: MQModel, motions) -> float:
    used = np.zeros(model.cfg.code_count, dtype=bool)
    for frames in motions:
        used[np.unique(model.encode_tokens(frames))] = True
    return used.mean()


def train_mq(model: MQModel, motions, epochs: int, seed: int, lr: float = 1e-3,
             batch_size: int = 8, log=None) -> list:
    """Train in place; returns one history row per epoch.

    Dead codes (unused for a whole epoch) are re-seeded to random encoder
    outputs so the codebook cannot collapse.
    """
    if not motions:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    model.center = np.mean([m.mean(axis=0) for m in motions], axis=0)
    model.scale = np.maximum(np.mean([m.std(axis=0) for m in motions], axis=0), 1e-3)
    named = model.named_parameters()
    opt = nm.Adam(named, lr=lr)
    code_param_index = next(i for i, (name, _) in enumerate(named) if "codebook" in name)
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(motions))
        epoch_usage = np.zeros(model.cfg.code_count, dtype=np.int64)
        sums = {"total": 0.0, "recon": 0.0, "codebook": 0.0, "commit": 0.0}
        stash = []
        for start in range(0, len(order), batch_size):
            batch = order[start:start + batch_size]
            losses = []
            for i in batch:
                try:
                    total, parts = vq_loss(model, motions[i])
                except nm.NumericsError as exc:
                    raise TrainingError(f"non-finite loss at epoch {epoch}: {exc}") from exc
                losses.append(total)
                epoch_usage[np.unique(parts["tokens"])] += 1
                sums["total"] += total.item()
                for key in ("recon", "codebook", "commit"):
                    sums[key] += parts[key].item()
                if len(stash) < 256:
                    with nm.no_grad():
                        stash.append(model.encode(motions[i]).data)
            loss = sum(losses[1:], losses[0]) * (1.0 / len(losses))
            opt.zero_grad()
            loss.backward()
            opt.step()
        model.usage = epoch_usage
        dead = np.where(epoch_usage == 0)[0]
        if dead.size and stash:
            pool = np.vstack(stash)
            picks = rng.integers(0, pool.shape[0], size=dead.size)
            model.codebook.table.data[dead] = pool[picks] + 0.01 * rng.standard_normal(
                (dead.size, model.cfg.code_dim))
            opt.reset_state(code_param_index, rows=dead)
        row = {key: val / len(motions) for key, val in sums.items()}
        row["epoch"] = epoch
        row["dead_codes"] = int(dead.size)
        history.append(row)
        if log:
            log(row)
    return history

"""Flat run configuration with desk-scale defaults.

Every knob has a default; a JSON config file may override any subset, and
unknown keys are rejected. The resolved config is echoed into every output
artifact (checkpoints, loss logs, metric reports, generation sidecars).

`LARGE_SCALE` documents the reference full-scale settings this desk setup
is scaled down from; they are constants, not defaults.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError

# Reference full-scale hyperparameters (documented, not defaults): codebook
# 2048x1024, 6-layer condition encoder (8 heads, hidden 1024, 256-d
# projection), 8-layer token transformer (hidden 1024), 8+8 diffusion
# layers with 1000 steps, Adam lr 1e-4, 438-d audio features, 24 joints.
LARGE_SCALE = {
    "code_count": 2048,
    "code_dim": 1024,
    "mate_layers": 6,
    "mate_heads": 8,
    "mate_hidden": 1024,
    "mate_proj_dim": 256,
    "utt_layers": 8,
    "utt_hidden": 1024,
    "dmd_cond_layers": 8,
    "dmd_layers": 8,
    "dmd_hidden": 1024,
    "dmd_heads": 8,
    "diffusion_steps": 1000,
    "lr": 1e-4,
    "beta_codebook": 1.0,
    "beta_commit": 1.0,
    "beta_adv": 1.0,
    "audio_feature_dim": 438,
    "joints": 24,
}


@dataclass
class RunConfig:
    # data
    fps: float = 16.0
    frames: int = 64
    joints: int = 8
    feature_dim: int = 16
    families: str = "walk:64,wave:64,jump:64,turn:64"
    families_test: str = "walk:16,wave:16,jump:16,turn:16"
    genres: str = "sway:86,groove:85,pulse:85"
    genres_test: str = "sway:22,groove:21,pulse:21"
    compose_fraction: float = 0.3

    # quantizer
    code_count: int = 64
    code_dim: int = 32
    mq_hidden: int = 64
    beta_codebook: float = 1.0
    beta_commit: float = 1.0

    # condition encoder
    embed_dim: int = 64
    mate_layers: int = 2
    mate_heads: int = 4
    max_text_len: int = 77
    max_audio_len: int = 256

    # token transformer
    utt_layers: int = 2
    utt_heads: int = 4
    z_dim: int = 16
    beta_adv: float = 1.0
    max_context: int = 512
    temperature: float = 1.0
    top_k: int = 16

    # diffusion decoder
    diffusion_steps: int = 50
    dmd_layers: int = 2
    dmd_cond_layers: int = 2
    dmd_heads: int = 4

    # training
    lr: float = 1e-3
    epochs_mq: int = 35
    epochs_utt: int = 18
    epochs_dmd: int = 12
    epochs_retrieval: int = 25
    batch_size: int = 8
    z_prob: float = 0.5
    seed: int = 0

    # metrics
    beat_sigma_frames: float = 3.0
    retrieval_distractors: int = 60
    retrieval_trials: int = 10
    retrieval_dim: int = 32
    samples_per_input: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def frame_dim(self) -> int:
        return self.joints * 3

    def beat_sigma_seconds(self) -> float:
        return self.beat_sigma_frames / self.fps


def parse_counts(spec: str) -> dict:
    """Parse "name:count,name:count" (or bare "name" = count 1) specs."""
    out = {}
    if not spec.strip():
        return out
    for chunk in spec.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        if ":" in chunk:
            name, _, count = chunk.partition(":")
            try:
                out[name.strip()] = int(count)
            except ValueError as exc:
                raise ConfigError(f"bad count in {chunk!r}") from exc
        else:
            out[chunk] = 1
    return {k: v for k, v in out.items() if v > 0}


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Build a RunConfig from an optional JSON file plus overrides.

    Unknown keys are rejected; values are coerced to the field types.
    """
    known = {f.name: f.type for f in fields(RunConfig)}
    merged: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                loaded = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError("config file must hold a JSON object")
        merged.update(loaded)
    merged.update(overrides or {})
    unknown = set(merged) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**merged)

"""Staged pipeline: build/train/save/load the model stack, generate motion
from text or audio conditions, stitch text-to-audio transitions through
token primitives, and run the metric battery.

Stage order is mq -> utt (mate+utt+disc) -> dmd -> retrieval; the utt and
dmd stages record the content hash of the mq checkpoint they were trained
against, and loading verifies those hashes so stale mixes fail loudly.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np

from . import checkpoint as ckpt
from . import dmd as dmd_mod
from . import metrics as metrics_mod
from . import mq as mq_mod
from . import utt as utt_mod
from .audio import AudioFeatureSequence
from .config import RunConfig, parse_counts
from .dataset import (SynthConfig, build_vocabulary, load_samples,
                      load_vocabulary, save_vocabulary, synth_dataset, tokenize,
                      VOCAB_WORDS)
from .errors import ConfigError, ContractError, DimensionError, StageError
from .fileio import atomic_write_text
from .mate import MATEConfig, MATEModel, audio_input, text_input
from .mate import encode as mate_encode
from .motion import MotionSequence, save_motion
from .numerics import Tensor
from .utt import SamplingConfig

STAGES = ("mq", "utt", "dmd", "retrieval")


def synth_config(cfg: RunConfig) -> SynthConfig:
    return SynthConfig(
        fps=cfg.fps,
        frames=cfg.frames,
        feature_dim=cfg.feature_dim,
        compose_fraction=cfg.compose_fraction,
        families_train=parse_counts(cfg.families),
        families_test=parse_counts(cfg.families_test),
        genres_train=parse_counts(cfg.genres),
        genres_test=parse_counts(cfg.genres_test),
    )


def run_synth(cfg: RunConfig, seed: int, out_dir) -> dict:
    manifest = synth_dataset(synth_config(cfg), seed, out_dir)
    atomic_write_text(os.path.join(os.fspath(out_dir), "config.json"),
                      json.dumps({"config": cfg.to_dict(), "seed": seed}, indent=2) + "\n")
    counts = {}
    for entry in manifest.entries:
        key = f"{entry.split}/{entry.modality}"
        counts[key] = counts.get(key, 0) + 1
    return counts


# -- model builders -----------------------------------------------------------------


def _mq_config(cfg: RunConfig) -> mq_mod.MQConfig:
    return mq_mod.MQConfig(frame_dim=cfg.frame_dim, code_count=cfg.code_count,
                           code_dim=cfg.code_dim, hidden=cfg.mq_hidden,
                           beta_codebook=cfg.beta_codebook, beta_commit=cfg.beta_commit)


def _mate_config(cfg: RunConfig, vocab_size: int) -> MATEConfig:
    return MATEConfig(vocab_size=vocab_size, audio_dim=cfg.feature_dim,
                      dim=cfg.embed_dim, layers=cfg.mate_layers, heads=cfg.mate_heads,
                      max_text_len=cfg.max_text_len, max_audio_len=cfg.max_audio_len)


def _utt_config(cfg: RunConfig) -> utt_mod.UTTConfig:
    return utt_mod.UTTConfig(code_count=cfg.code_count, dim=cfg.embed_dim,
                             layers=cfg.utt_layers, heads=cfg.utt_heads,
                             z_dim=cfg.z_dim, max_context=cfg.max_context,
                             beta_adv=cfg.beta_adv)


def _dmd_config(cfg: RunConfig) -> dmd_mod.DMDConfig:
    return dmd_mod.DMDConfig(frame_dim=cfg.frame_dim, code_count=cfg.code_count,
                             steps=cfg.diffusion_steps, dim=cfg.embed_dim,
                             cond_layers=cfg.dmd_cond_layers, layers=cfg.dmd_layers,
                             heads=cfg.dmd_heads)


def _write_loss_log(path, cfg: RunConfig, seed: int, history, columns) -> None:
    lines = [f"# config: {json.dumps(cfg.to_dict())} seed: {seed}",
             ",".join(["epoch"] + columns)]
    for row in history:
        lines.append(",".join([str(row["epoch"])] + [repr(float(row[c])) for c in columns]))
    atomic_write_text(path, "\n".join(lines) + "\n")


# -- training stages -----------------------------------------------------------------


def train_stage(stage: str, cfg: RunConfig, data_dir, out_dir, seed: int,
                epochs: int | None = None) -> dict:
    """Train one stage (or "all"), writing checkpoints and loss logs."""
    if stage == "all":
        out = {}
        for s in STAGES:
            out[s] = train_stage(s, cfg, data_dir, out_dir, seed, epochs)
        return out
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    os.makedirs(os.fspath(out_dir), exist_ok=True)
    train = load_samples(data_dir, split="train")
    motions = [s.motion.frames for s in train]
    rng = np.random.default_rng(np.random.SeedSequence([seed, hash_stage(stage)]))

    if stage == "mq":
        model = mq_mod.MQModel(_mq_config(cfg), rng)
        history = mq_mod.train_mq(model, motions, epochs=epochs or cfg.epochs_mq,
                                  seed=seed, lr=cfg.lr, batch_size=cfg.batch_size)
        ckpt.save_checkpoint(
            ckpt.stage_path(out_dir, "mq"), "mq",
            {"mq": {"config": asdict(model.cfg), "params": ckpt.params_blob(model)}},
            cfg.to_dict(),
            buffers={"center": model.center, "scale": model.scale, "usage": model.usage})
        _write_loss_log(os.path.join(os.fspath(out_dir), "mq_loss.csv"), cfg, seed,
                        history, ["total", "recon", "codebook", "commit"])
        ckpt.update_bundle(out_dir, "mq")
        return {"history": history}

    if stage == "utt":
        mq_model, mq_hash = load_mq(out_dir)
        vocab = load_vocabulary(os.path.join(os.fspath(data_dir), "vocab.txt"))
        mate = MATEModel(_mate_config(cfg, len(vocab)), rng)
        utt = utt_mod.UTTModel(_utt_config(cfg), rng)
        disc = utt_mod.Discriminator(cfg.frame_dim, cfg.embed_dim, cfg.utt_heads, rng)
        samples = [(_sample_input(s), s.motion.frames) for s in train]
        history = utt_mod.train_utt(mate, utt, disc, mq_model, samples,
                                    epochs=epochs or cfg.epochs_utt, seed=seed,
                                    lr=cfg.lr, batch_size=cfg.batch_size,
                                    z_prob=cfg.z_prob)
        ckpt.save_checkpoint(
            ckpt.stage_path(out_dir, "utt"), "utt",
            {"mate": {"config": asdict(mate.cfg), "params": ckpt.params_blob(mate)},
             "utt": {"config": asdict(utt.cfg), "params": ckpt.params_blob(utt)},
             "disc": {"config": {"frame_dim": cfg.frame_dim, "dim": cfg.embed_dim,
                                 "heads": cfg.utt_heads},
                      "params": ckpt.params_blob(disc)}},
            cfg.to_dict(), deps={"mq": mq_hash})
        # generation needs the vocabulary next to the checkpoints
        save_vocabulary(os.path.join(os.fspath(out_dir), "vocab.txt"),
                        _vocab_words(vocab))
        _write_loss_log(os.path.join(os.fspath(out_dir), "utt_loss.csv"), cfg, seed,
                        history, ["ce", "adv", "disc"])
        ckpt.update_bundle(out_dir, "utt")
        return {"history": history}

    if stage == "dmd":
        mq_model, mq_hash = load_mq(out_dir)
        model = dmd_mod.DMDModel(_dmd_config(cfg), rng)
        sched = dmd_mod.make_schedule(cfg.diffusion_steps)
        history = dmd_mod.train_dmd(model, sched, mq_model, motions,
                                    epochs=epochs or cfg.epochs_dmd, seed=seed,
                                    lr=cfg.lr, batch_size=cfg.batch_size)
        ckpt.save_checkpoint(
            ckpt.stage_path(out_dir, "dmd"), "dmd",
            {"dmd": {"config": asdict(model.cfg), "params": ckpt.params_blob(model)}},
            cfg.to_dict(), deps={"mq": mq_hash})
        _write_loss_log(os.path.join(os.fspath(out_dir), "dmd_loss.csv"), cfg, seed,
                        history, ["loss"])
        ckpt.update_bundle(out_dir, "dmd")
        return {"history": history}

    # retrieval
    vocab = load_vocabulary(os.path.join(os.fspath(data_dir), "vocab.txt"))
    pairs = [(s.motion.frames, s.text_ids) for s in train if s.modality == "text"]
    enc, history = metrics_mod.train_retrieval_encoder(
        pairs, frame_dim=cfg.frame_dim, vocab_size=len(vocab),
        epochs=epochs if epochs is not None else cfg.epochs_retrieval,
        seed=seed, lr=cfg.lr, out_dim=cfg.retrieval_dim)
    ckpt.save_checkpoint(
        ckpt.stage_path(out_dir, "retrieval"), "retrieval",
        {"retrieval": {"config": {"frame_dim": cfg.frame_dim, "vocab_size": len(vocab),
                                  "out_dim": cfg.retrieval_dim},
                       "params": ckpt.params_blob(enc)}},
        cfg.to_dict())
    _write_loss_log(os.path.join(os.fspath(out_dir), "retrieval_loss.csv"), cfg, seed,
                    history, ["loss"])
    ckpt.update_bundle(out_dir, "retrieval")
    return {"history": history}


def hash_stage(stage: str) -> int:
    return {"mq": 101, "utt": 102, "dmd": 103, "retrieval": 104}[stage]


def _sample_input(sample):
    if sample.modality == "text":
        return text_input(sample.text_ids)
    return audio_input(sample.features.features)


def _vocab_words(vocab: dict) -> tuple:
    return tuple(sorted(vocab, key=vocab.get))


# -- loading -----------------------------------------------------------------------


def load_mq(ckpt_dir) -> tuple:
    body = ckpt.load_stage(ckpt_dir, "mq")
    section = body["sections"]["mq"]
    model = mq_mod.MQModel(mq_mod.MQConfig(**section["config"]),
                           np.random.default_rng(0))
    ckpt.load_params(model, section["params"])
    buffers = body.get("buffers", {})
    model.center = np.array(buffers.get("center", model.center), dtype=np.float64)
    model.scale = np.array(buffers.get("scale", model.scale), dtype=np.float64)
    return model, ckpt.stage_hash(ckpt_dir, "mq")


def load_utt_stack(ckpt_dir) -> tuple:
    """(mate, utt, disc) rebuilt from the utt checkpoint, deps verified."""
    body = ckpt.load_stage(ckpt_dir, "utt")
    sections = body["sections"]
    mate = MATEModel(MATEConfig(**sections["mate"]["config"]), np.random.default_rng(0))
    ckpt.load_params(mate, sections["mate"]["params"])
    utt = utt_mod.UTTModel(utt_mod.UTTConfig(**sections["utt"]["config"]),
                           np.random.default_rng(0))
    ckpt.load_params(utt, sections["utt"]["params"])
    disc_cfg = sections["disc"]["config"]
    disc = utt_mod.Discriminator(disc_cfg["frame_dim"], disc_cfg["dim"],
                                 disc_cfg["heads"], np.random.default_rng(0))
    ckpt.load_params(disc, sections["disc"]["params"])
    return mate, utt, disc


def load_dmd(ckpt_dir) -> tuple:
    body = ckpt.load_stage(ckpt_dir, "dmd")
    section = body["sections"]["dmd"]
    model = dmd_mod.DMDModel(dmd_mod.DMDConfig(**section["config"]),
                             np.random.default_rng(0))
    ckpt.load_params(model, section["params"])
    sched = dmd_mod.make_schedule(model.cfg.steps)
    return model, sched


def load_retrieval(ckpt_dir) -> metrics_mod.RetrievalEncoder:
    body = ckpt.load_stage(ckpt_dir, "retrieval")
    section = body["sections"]["retrieval"]
    enc = metrics_mod.RetrievalEncoder(section["config"]["frame_dim"],
                                       section["config"]["vocab_size"],
                                       np.random.default_rng(0),
                                       out_dim=section["config"]["out_dim"])
    ckpt.load_params(enc, section["params"])
    return enc


def load_generation_stack(ckpt_dir, decoder: str = "dmd"):
    """Everything `generate` needs; decoder is "vq" or "dmd"."""
    mq_model, _ = load_mq(ckpt_dir)
    mate, utt, _ = load_utt_stack(ckpt_dir)
    vocab_path = os.path.join(os.fspath(ckpt_dir), "vocab.txt")
    vocab = load_vocabulary(vocab_path) if os.path.exists(vocab_path) else build_vocabulary()
    stack = {"mq": mq_model, "mate": mate, "utt": utt, "vocab": vocab,
             "dmd": None, "sched": None}
    if decoder == "dmd":
        model, sched = load_dmd(ckpt_dir)
        stack["dmd"], stack["sched"] = model, sched
    elif decoder != "vq":
        raise ConfigError(f"unknown decoder {decoder!r}")
    return stack


# -- generation ----------------------------------------------------------------------


def condition_from_request(stack, cfg: RunConfig, modality: str, prompt=None,
                           features=None):
    if modality == "text":
        ids = tokenize(prompt or "", stack["vocab"])
        if ids.size == 0:
            raise ContractError("empty prompt")
        unk = stack["vocab"].get("<unk>", 0)
        warned = bool(ids.size) and bool((ids == unk).all())
        return text_input(ids), warned
    if modality == "audio":
        feats = features.features if isinstance(features, AudioFeatureSequence) else features
        feats = np.asarray(feats, dtype=np.float64)
        want = stack["mate"].cfg.audio_dim
        if feats.ndim != 2 or feats.shape[1] != want:
            raise DimensionError(f"feature matrix must be [T, {want}]")
        return audio_input(feats), False
    raise ConfigError(f"unknown modality {modality!r}")


def generate_motion(stack, cfg: RunConfig, modality: str, frames: int, seed: int,
                    prompt=None, features=None, use_z: bool = False,
                    decoder: str = "vq", sampling: SamplingConfig | None = None,
                    primitive=None) -> dict:
    """Condition -> tokens -> frames. Returns tokens, frames, and flags."""
    if frames % 4 != 0:
        raise ConfigError(f"target frames {frames} must be divisible by 4")
    inp, unk_only = condition_from_request(stack, cfg, modality, prompt, features)
    cond = mate_encode(stack["mate"], inp)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 41]))
    z = rng.standard_normal(stack["utt"].cfg.z_dim) if use_z else None
    sampling = sampling or SamplingConfig(temperature=cfg.temperature, top_k=cfg.top_k)
    n_tokens = frames // 4
    tokens = utt_mod.generate_tokens(stack["utt"], cond, n_tokens, sampling,
                                     primitive=primitive, z=z, seed=seed,
                                     min_len=n_tokens)
    if decoder == "vq":
        out = stack["mq"].decode_tokens(tokens)
    elif decoder == "dmd":
        if stack["dmd"] is None:
            raise StageError("requires stage dmd: no diffusion decoder loaded")
        out = dmd_mod.decode_tokens_dmd(stack["dmd"], stack["sched"], tokens, seed=seed)
    else:
        raise ConfigError(f"unknown decoder {decoder!r}")
    return {"tokens": tokens, "frames": out, "unk_only": unk_only}


def transition_motion(stack, cfg: RunConfig, prompt: str, features, seed: int,
                      text_frames: int, audio_frames: int, primitive_len: int = 8,
                      decoder: str = "vq") -> dict:
    """Text segment, then an audio segment conditioned on the last
    `primitive_len` text tokens; the concatenated tokens are decoded in one
    pass and the junction discontinuity is reported."""
    text_out = generate_motion(stack, cfg, "text", text_frames, seed,
                               prompt=prompt, decoder="vq")
    text_tokens = text_out["tokens"]
    if primitive_len > text_tokens.size:
        raise ContractError(
            f"text segment has {text_tokens.size} tokens, fewer than the "
            f"{primitive_len}-token primitive")
    primitive = text_tokens[text_tokens.size - primitive_len:]
    audio_out = generate_motion(stack, cfg, "audio", audio_frames + 4 * primitive_len,
                                seed + 1, features=features, decoder="vq",
                                primitive=primitive)
    cont_tokens = audio_out["tokens"]
    full = np.concatenate([text_tokens, cont_tokens[primitive_len:]])
    if decoder == "dmd":
        if stack["dmd"] is None:
            raise StageError("requires stage dmd: no diffusion decoder loaded")
        frames = dmd_mod.decode_tokens_dmd(stack["dmd"], stack["sched"], full, seed=seed)
    else:
        frames = stack["mq"].decode_tokens(full)
    boundary_frame = 4 * text_tokens.size
    motion = MotionSequence(cfg.fps, frames)
    report = boundary_report(motion, boundary_frame)
    report.update({
        "text_tokens": text_tokens.tolist(),
        "continuation_tokens": cont_tokens.tolist(),
        "full_tokens": full.tolist(),
        "primitive_len": primitive_len,
        "boundary_frame": boundary_frame,
    })
    return {"motion": motion, "report": report}


def boundary_report(motion: MotionSequence, boundary_frame: int) -> dict:
    """Max per-joint jump across the boundary vs the median frame-to-frame
    displacement of the whole output."""
    pos = motion.positions()
    disp = np.linalg.norm(pos[1:] - pos[:-1], axis=-1)  # [T-1, J]
    i = min(max(boundary_frame - 1, 0), disp.shape[0] - 1)
    return {
        "boundary_max_jump": float(disp[i].max()),
        "median_displacement": float(np.median(disp)),
    }


# -- plotting ------------------------------------------------------------------------


def motion_svg(motion: MotionSequence) -> str:
    """Static SVG: root ground-plane trajectory plus per-joint height strips."""
    pos = motion.positions()
    width, height = 640, 160 + 40 * motion.joint_count

    def polyline(points, color):
        coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
        return (f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                f'points="{coords}"/>')

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             '<rect width="100%" height="100%" fill="white"/>']
    # top: root path in the ground plane
    xz = pos[:, 0, [0, 2]]
    span = max(np.ptp(xz[:, 0]), np.ptp(xz[:, 1]), 1e-6)
    scale = 140.0 / span
    cx, cz = xz.mean(axis=0)
    points = [(320 + (x - cx) * scale, 80 - (z - cz) * scale) for x, z in xz]
    parts.append('<text x="8" y="16" font-size="12">root trajectory (x-z)</text>')
    parts.append(polyline(points, "#1f6f8b"))
    # bottom: joint heights over time
    t_axis = np.linspace(20, width - 20, motion.length)
    for j in range(motion.joint_count):
        y = pos[:, j, 1]
        base = 160 + 40 * j + 20
        span_y = max(np.ptp(y), 1e-6)
        ys = base - (y - y.min()) / span_y * 30
        parts.append(f'<text x="8" y="{base - 18}" font-size="10">joint {j} height</text>')
        parts.append(polyline(list(zip(t_axis, ys)), "#8b1f4f"))
    parts.append("</svg>")
    return "\n".join(parts)


# -- evaluation ----------------------------------------------------------------------


def _eval_threads() -> int:
    try:
        return max(1, int(os.environ.get("UDE_THREADS", "1")))
    except ValueError:
        return 1


def evaluate(cfg: RunConfig, data_dir, ckpt_dir, split: str = "test",
             seed: int = 0, decoder: str = "vq",
             samples_per_input: int | None = None) -> dict:
    """Full metric battery on one split. Returns a JSON-ready report."""
    samples = load_samples(data_dir, split=split)
    if not samples:
        raise ConfigError(f"split {split!r} is empty")
    spi = samples_per_input or cfg.samples_per_input
    stack = load_generation_stack(ckpt_dir, decoder=decoder)
    retrieval = load_retrieval(ckpt_dir)
    sigma = cfg.beat_sigma_seconds()

    text_samples = [s for s in samples if s.modality == "text"]
    audio_samples = [s for s in samples if s.modality == "audio"]

    def one_generation(args):
        sample, rep = args
        gen_seed = int(np.random.SeedSequence([seed, rep, _stable_id(sample.id)])
                       .generate_state(1)[0])
        out = generate_motion(
            stack, cfg, sample.modality, sample.motion.length, gen_seed,
            prompt=sample.sentence, features=(sample.features.features
                                              if sample.features else None),
            use_z=False, decoder=decoder)
        return sample.id, rep, MotionSequence(cfg.fps, out["frames"])

    jobs = [(s, rep) for s in samples for rep in range(spi)]
    threads = _eval_threads()
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_generation, jobs))
    else:
        results = [one_generation(job) for job in jobs]
    generated = {}
    for sid, rep, motion in results:
        generated.setdefault(sid, []).append(motion)

    report = {"config": cfg.to_dict(), "seed": seed, "split": split,
              "decoder": decoder, "samples_per_input": spi,
              "counts": {"text": len(text_samples), "audio": len(audio_samples)},
              "metrics": {}}

    for modality, group in (("text", text_samples), ("audio", audio_samples)):
        if not group:
            continue
        gt_motions = [s.motion for s in group]
        gen_motions = [m for s in group for m in generated[s.id]]
        block = {}
        for kind, tag in (("kinetic", "k"), ("geometric", "m")):
            gt_fs = metrics_mod.feature_set(kind, gt_motions)
            gen_fs = metrics_mod.feature_set(kind, gen_motions)
            block[f"fid_{tag}"] = metrics_mod.fid(gen_fs, gt_fs)
            block[f"div_{tag}"] = metrics_mod.diversity(gen_fs)
            block[f"div_{tag}_gt"] = metrics_mod.diversity(gt_fs)
        recon = [metrics_mod.recon_accuracy(generated[s.id][0], s.motion) for s in group]
        for key in ("ape", "ave", "ape_root", "ave_root"):
            block[key] = float(np.mean([r[key] for r in recon]))
        report["metrics"][modality] = block

    if text_samples:
        pairs = [(generated[s.id][0].frames, s.text_ids) for s in text_samples]
        top1, top5 = metrics_mod.retrieval_accuracy(
            retrieval, pairs, distractors=cfg.retrieval_distractors,
            trials=cfg.retrieval_trials, seed=seed)
        report["metrics"]["text"]["top1"] = top1
        report["metrics"]["text"]["top5"] = top5

    if audio_samples:
        aligns, gt_aligns = [], []
        for s in audio_samples:
            if s.features.beat_times is None or s.features.beat_times.size == 0:
                continue
            beats = metrics_mod.detect_motion_beats(generated[s.id][0])
            aligns.append(metrics_mod.beat_align(beats, s.features.beat_times, sigma))
            gt_beats = metrics_mod.detect_motion_beats(s.motion)
            gt_aligns.append(metrics_mod.beat_align(gt_beats, s.features.beat_times, sigma))
        if aligns:
            report["metrics"]["audio"]["beat_align"] = float(np.mean(aligns))
            report["metrics"]["audio"]["beat_align_gt"] = float(np.mean(gt_aligns))

    return report


def _stable_id(sample_id: str) -> int:
    return int.from_bytes(sample_id.encode(), "little") % (2 ** 31)

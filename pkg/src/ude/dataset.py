"""Procedural synthetic dataset: text-described action clips and beat-locked
dance clips with matching synthetic audio feature matrices.

Text samples pair a templated sentence over a closed vocabulary with a
motion built from that sentence (walk / wave / jump / turn families plus
optional two-action compositions). Audio samples pair a dance motion whose
speed minima land exactly on a genre's beat grid with a feature matrix
whose last channel peaks at those beats.

Everything is a pure function of the seed: the same seed reproduces the
same files byte for byte.

Manifest: one JSON object per line with keys id, modality, motion, cond,
split. A vocabulary file (one word per line, line number = id) sits next
to it.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .audio import AudioFeatureSequence, load_features, save_features
from .errors import ConfigError, FormatError
from .fileio import atomic_write_text
from .motion import MotionSequence, Skeleton, default_skeleton, normalize_heading, save_motion, load_motion

UNK = "<unk>"

VOCAB_WORDS = (
    UNK,
    "a", "the", "person", "someone", "figure", "character",
    "walks", "strolls", "marches", "forward", "backward",
    "slowly", "quickly", "steadily", "briskly", "casually",
    "waves", "raises", "their", "left", "right", "hand", "arm",
    "gently", "rapidly",
    "jumps", "hops", "bounces", "up", "and", "down", "in", "place", "high", "twice",
    "turns", "spins", "rotates", "around", "to", "fully",
    "then",
)

TEXT_FAMILIES = ("walk", "wave", "jump", "turn")
GENRE_BEAT_HZ = {"sway": 1.0, "groove": 1.6, "pulse": 2.0}


def build_vocabulary() -> dict:
    return {w: i for i, w in enumerate(VOCAB_WORDS)}


def save_vocabulary(path, words=VOCAB_WORDS) -> None:
    atomic_write_text(path, "\n".join(words) + "\n")


def load_vocabulary(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        words = [ln.strip() for ln in fh.read().splitlines() if ln.strip()]
    return {w: i for i, w in enumerate(words)}


_PUNCT = str.maketrans({c: " " for c in ".,!?;:()\"'"})


def tokenize(text: str, vocab: dict) -> np.ndarray:
    """Lowercase, strip punctuation, split on whitespace, map unknowns to UNK."""
    unk = vocab.get(UNK, 0)
    words = text.lower().translate(_PUNCT).split()
    return np.array([vocab.get(w, unk) for w in words], dtype=np.int64)


# -- manifest -------------------------------------------------------------------


@dataclass
class ManifestEntry:
    id: str
    modality: str  # "text" | "audio"
    motion: str    # motion file path, relative to the manifest directory
    cond: str      # condition file path (sentence .txt / feature .udef)
    split: str     # "train" | "test"


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)

    def select(self, split=None, modality=None):
        out = self.entries
        if split is not None:
            out = [e for e in out if e.split == split]
        if modality is not None:
            out = [e for e in out if e.modality == modality]
        return out


def save_manifest(manifest: DatasetManifest, path) -> None:
    lines = []
    for e in manifest.entries:
        lines.append(json.dumps(
            {"id": e.id, "modality": e.modality, "motion": e.motion,
             "cond": e.cond, "split": e.split}))
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_manifest(path) -> DatasetManifest:
    entries = []
    base = os.path.dirname(os.fspath(path))
    with open(path, "r", encoding="utf-8") as fh:
        for i, ln in enumerate(fh, start=1):
            if not ln.strip():
                continue
            try:
                obj = json.loads(ln)
                entries.append(ManifestEntry(obj["id"], obj["modality"], obj["motion"],
                                             obj["cond"], obj["split"]))
            except (json.JSONDecodeError, KeyError) as exc:
                raise FormatError(f"{path}: line {i}: {exc}") from exc
    for e in entries:
        for rel in (e.motion, e.cond):
            if not os.path.exists(os.path.join(base, rel)):
                raise FormatError(f"{path}: referenced file missing: {rel}")
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate sample ids")
    return DatasetManifest(entries)


# -- motion assembly ---------------------------------------------------------------


def _rot_axis(axis: str, theta: np.ndarray) -> np.ndarray:
    """Stack of rotation matrices about a principal axis, [T, 3, 3]."""
    t = theta.shape[0]
    c, s = np.cos(theta), np.sin(theta)
    out = np.zeros((t, 3, 3))
    if axis == "x":
        out[:, 0, 0] = 1
        out[:, 1, 1], out[:, 1, 2] = c, -s
        out[:, 2, 1], out[:, 2, 2] = s, c
    elif axis == "y":
        out[:, 1, 1] = 1
        out[:, 0, 0], out[:, 0, 2] = c, s
        out[:, 2, 0], out[:, 2, 2] = -s, c
    elif axis == "z":
        out[:, 2, 2] = 1
        out[:, 0, 0], out[:, 0, 1] = c, -s
        out[:, 1, 0], out[:, 1, 1] = s, c
    else:
        raise ValueError(axis)
    return out


def _assemble(skel: Skeleton, root: np.ndarray, yaw: np.ndarray, local: dict) -> np.ndarray:
    """Build [T, J*3] frames from a root path, yaw track and per-joint local
    rotations (joint name -> [T,3,3]). Rotations keep bone lengths exact."""
    t = root.shape[0]
    j = skel.joint_count
    yaw_mat = _rot_axis("y", yaw)
    pos = np.zeros((t, j, 3))
    pos[:, 0] = root
    for idx in range(1, j):
        name = skel.names[idx]
        rot = yaw_mat
        if name in local:
            rot = np.einsum("tij,tjk->tik", yaw_mat, local[name])
        offset = skel.offsets[idx]
        pos[:, idx] = pos[:, skel.parents[idx]] + np.einsum("tij,j->ti", rot, offset)
    return pos.reshape(t, j * 3)


ROOT_HEIGHT = 1.0


def _build_action_track(family: str, params: dict, times: np.ndarray,
                        root0: np.ndarray, yaw0: float):
    """Root path, yaw and local joint rotations for one action over `times`
    (local time starting at 0). Returns (root, yaw, local, root_end, yaw_end)."""
    t = times.shape[0]
    root = np.tile(root0, (t, 1))
    yaw = np.full(t, yaw0)
    local = {}
    zeros = np.zeros(t)

    # each family starts mid-action (fixed phase offsets) so its opening
    # frames are already distinctive; autoregressive models commit to a
    # family at the first token and need the condition to decide it there
    if family == "walk":
        speed = params["speed"] * (1.0 if params["direction"] == "forward" else -1.0)
        f_step = 1.6
        heading = np.array([math.cos(yaw0), 0.0, -math.sin(yaw0)])
        root = root0[None, :] + speed * times[:, None] * heading[None, :]
        root[:, 1] = ROOT_HEIGHT + 0.03 * np.sin(2 * math.pi * 2 * f_step * times)
        swing = 0.55 * np.sin(2 * math.pi * f_step * times + math.pi / 2)
        local["l_foot"] = _rot_axis("z", swing)
        local["r_foot"] = _rot_axis("z", -swing)
        local["l_wrist"] = _rot_axis("z", -0.25 * swing / 0.55)
        local["r_wrist"] = _rot_axis("z", 0.25 * swing / 0.55)
        root_end = root0 + speed * (times[-1] + times[1] - times[0]) * heading
        root_end[1] = root0[1]
        return root, yaw, local, root_end, yaw0

    if family == "wave":
        freq = params["freq"]
        side = params["side"]
        root[:, 1] = ROOT_HEIGHT
        theta = 0.9 * np.sin(2 * math.pi * freq * times + 1.1)
        joint = "l_wrist" if side == "left" else "r_wrist"
        sign = 1.0 if side == "left" else -1.0
        local[joint] = _rot_axis("x", sign * theta)
        # barely-moving legs so the waving wrist dominates every other joint
        local["l_foot"] = _rot_axis("z", 0.01 * np.sin(2 * math.pi * times))
        local["r_foot"] = _rot_axis("z", -0.01 * np.sin(2 * math.pi * times))
        return root, yaw, local, root0, yaw0

    if family == "jump":
        freq = params["freq"]
        height = params["height"]
        phase = (times * freq + 0.35) % 1.0
        root[:, 1] = ROOT_HEIGHT + height * 4.0 * phase * (1.0 - phase)
        lift = 0.4 * np.sin(math.pi * np.clip(phase * 2, 0, 1))
        local["l_wrist"] = _rot_axis("x", lift)
        local["r_wrist"] = _rot_axis("x", -lift)
        return root, yaw, local, root0, yaw0

    if family == "turn":
        total = params["angle"] * (1.0 if params["side"] == "left" else -1.0)
        duration = times[-1] + (times[1] - times[0]) if t > 1 else 1.0
        yaw = yaw0 + total * times / duration
        root[:, 1] = ROOT_HEIGHT
        sway = 0.08 * np.sin(2 * math.pi * 1.0 * times)
        local["l_wrist"] = _rot_axis("z", sway)
        local["r_wrist"] = _rot_axis("z", -sway)
        return root, yaw, local, root0, yaw0 + total

    raise ConfigError(f"unknown action family {family!r}")


_SUBJECTS = ("a person", "the person", "someone", "a figure", "the character")
_WALK_VERBS = ("walks", "strolls", "marches")
_WALK_SPEEDS = {"slowly": 0.5, "steadily": 0.9, "quickly": 1.4, "briskly": 1.4, "casually": 0.7}
_WAVE_VERBS = ("waves", "raises")
_WAVE_FREQS = {"gently": 1.0, "": 1.5, "rapidly": 2.2}
_JUMP_VERBS = ("jumps", "hops", "bounces")
_TURN_VERBS = ("turns", "spins", "rotates")


def _sample_action(family: str, rng: np.random.Generator):
    """One action draw: (phrase, params). The phrase omits the subject."""
    if family == "walk":
        verb = _WALK_VERBS[rng.integers(len(_WALK_VERBS))]
        direction = "forward" if rng.random() < 0.7 else "backward"
        speed_word = list(_WALK_SPEEDS)[rng.integers(len(_WALK_SPEEDS))]
        phrase = f"{verb} {direction} {speed_word}"
        return phrase, {"speed": _WALK_SPEEDS[speed_word], "direction": direction}
    if family == "wave":
        verb = _WAVE_VERBS[rng.integers(len(_WAVE_VERBS))]
        side = "left" if rng.random() < 0.5 else "right"
        speed_word = list(_WAVE_FREQS)[rng.integers(len(_WAVE_FREQS))]
        phrase = f"{verb} their {side} hand" + (f" {speed_word}" if speed_word else "")
        return phrase, {"side": side, "freq": _WAVE_FREQS[speed_word]}
    if family == "jump":
        verb = _JUMP_VERBS[rng.integers(len(_JUMP_VERBS))]
        style = ("up and down", "in place", "high", "twice")[rng.integers(4)]
        phrase = f"{verb} {style}"
        freq = {"up and down": 1.25, "in place": 1.25, "high": 1.0, "twice": 0.5}[style]
        height = {"up and down": 0.22, "in place": 0.18, "high": 0.35, "twice": 0.25}[style]
        return phrase, {"freq": freq, "height": height}
    if family == "turn":
        verb = _TURN_VERBS[rng.integers(len(_TURN_VERBS))]
        side = "left" if rng.random() < 0.5 else "right"
        fully = rng.random() < 0.4
        phrase = f"{verb} around to the {side}" + (" fully" if fully else "")
        return phrase, {"side": side, "angle": math.pi if fully else math.pi / 2}
    raise ConfigError(f"unknown action family {family!r}")


def make_text_motion(families, frames: int, fps: float, rng: np.random.Generator,
                     compose_fraction: float = 0.3, skeleton: Skeleton | None = None):
    """One text sample: (MotionSequence, sentence)."""
    skel = skeleton or default_skeleton()
    subject = _SUBJECTS[rng.integers(len(_SUBJECTS))]
    compose = rng.random() < compose_fraction and frames >= 16
    chosen = [families[rng.integers(len(families))]]
    if compose:
        chosen.append(families[rng.integers(len(families))])

    segments = np.array_split(np.arange(frames), len(chosen))
    root0 = np.array([0.0, ROOT_HEIGHT, 0.0])
    yaw0 = 0.0
    parts, phrases = [], []
    for fam, seg in zip(chosen, segments):
        times = (seg - seg[0]) / fps
        phrase, params = _sample_action(fam, rng)
        root, yaw, local, root0, yaw0 = _build_action_track(fam, params, times, root0, yaw0)
        parts.append(_assemble(skel, root, yaw, local))
        phrases.append(phrase)
    sentence = f"{subject} " + " then ".join(phrases)
    return MotionSequence(fps, np.vstack(parts)), sentence


def _genre_pattern(genre: str, dim: int) -> np.ndarray:
    """Deterministic per-genre channel signature."""
    seed = int.from_bytes(genre.encode(), "little") % (2 ** 31)
    g = np.random.default_rng(seed)
    vec = g.normal(0.0, 1.0, size=dim)
    return vec / np.linalg.norm(vec)


def make_dance_motion(genre: str, frames: int, fps: float, feature_dim: int,
                      rng: np.random.Generator, skeleton: Skeleton | None = None):
    """One audio sample: (MotionSequence, AudioFeatureSequence).

    All oscillators follow cos(pi * f_beat * t) so every joint's speed
    vanishes exactly at the beat grid t = k / f_beat. The feature matrix's
    last channel is an onset envelope peaking at those beats.
    """
    if genre not in GENRE_BEAT_HZ:
        raise ConfigError(f"unknown dance genre {genre!r}")
    skel = skeleton or default_skeleton()
    f_beat = GENRE_BEAT_HZ[genre]
    duration = frames / fps
    times = np.arange(frames) / fps
    amp = rng.uniform(0.7, 1.0)

    profile = {
        "sway": {"arms": 1.0, "root_z": 1.0, "legs": 0.2, "bob": 0.3},
        "groove": {"arms": 0.6, "root_z": 0.4, "legs": 0.8, "bob": 1.0},
        "pulse": {"arms": 0.3, "root_z": 0.2, "legs": 1.0, "bob": 1.2},
    }[genre]

    carrier = np.cos(math.pi * f_beat * times)
    root = np.zeros((frames, 3))
    root[:, 1] = ROOT_HEIGHT + 0.06 * amp * profile["bob"] * carrier
    root[:, 2] = 0.15 * amp * profile["root_z"] * carrier
    yaw = 0.15 * amp * profile["root_z"] * carrier

    local = {
        "l_wrist": _rot_axis("x", 0.8 * amp * profile["arms"] * carrier),
        "r_wrist": _rot_axis("x", -0.8 * amp * profile["arms"] * carrier),
        "l_foot": _rot_axis("z", 0.3 * amp * profile["legs"] * carrier),
        "r_foot": _rot_axis("z", -0.3 * amp * profile["legs"] * carrier),
    }
    motion = MotionSequence(fps, _assemble(skel, root, yaw, local))

    n_beats = int(math.floor(duration * f_beat - 1e-9))
    beat_times = np.arange(1, n_beats + 1) / f_beat
    beat_times = beat_times[beat_times < duration - 1.0 / fps]

    pattern = _genre_pattern(genre, feature_dim - 1)
    envelope = 0.5 + 0.5 * carrier
    features = np.zeros((frames, feature_dim))
    features[:, :-1] = pattern[None, :] * envelope[:, None]
    features[:, :-1] += 0.05 * rng.standard_normal((frames, feature_dim - 1))
    sigma = 1.5 / fps
    for b in beat_times:
        features[:, -1] += np.exp(-((times - b) ** 2) / (2 * sigma * sigma))
    return motion, AudioFeatureSequence(fps, features, beat_times)


# -- dataset synthesis -----------------------------------------------------------------


@dataclass
class SynthConfig:
    fps: float = 16.0
    frames: int = 64
    feature_dim: int = 16
    compose_fraction: float = 0.3
    # per-family text sample counts and per-genre audio sample counts
    families_train: dict = field(default_factory=lambda: {f: 64 for f in TEXT_FAMILIES})
    families_test: dict = field(default_factory=lambda: {f: 16 for f in TEXT_FAMILIES})
    genres_train: dict = field(default_factory=lambda: {"sway": 86, "groove": 85, "pulse": 85})
    genres_test: dict = field(default_factory=lambda: {"sway": 22, "groove": 21, "pulse": 21})

    def validate(self):
        for fam in list(self.families_train) + list(self.families_test):
            if fam not in TEXT_FAMILIES:
                raise ConfigError(f"unknown action family {fam!r}")
        for gen in list(self.genres_train) + list(self.genres_test):
            if gen not in GENRE_BEAT_HZ:
                raise ConfigError(f"unknown dance genre {gen!r}")
        if self.frames % 4 != 0:
            raise ConfigError("frames must be divisible by 4")


def synth_dataset(cfg: SynthConfig, seed: int, out_dir) -> DatasetManifest:
    """Generate the dataset under out_dir and return its manifest."""
    cfg.validate()
    out_dir = os.fspath(out_dir)
    os.makedirs(os.path.join(out_dir, "motions"), exist_ok=True)
    os.makedirs(os.path.join(out_dir, "conds"), exist_ok=True)
    entries = []
    counter = 0

    def text_batch(counts: dict, split: str):
        nonlocal counter
        used = set()
        for fam in TEXT_FAMILIES:
            for _ in range(counts.get(fam, 0)):
                rng = np.random.default_rng(np.random.SeedSequence([seed, 1, counter]))
                # keep sentences unique within the split so retrieval is well posed
                for _attempt in range(64):
                    motion, sentence = make_text_motion(
                        [fam], cfg.frames, cfg.fps, rng, cfg.compose_fraction)
                    key = (split, sentence)
                    if key not in used:
                        used.add(key)
                        break
                sid = f"text_{split}_{counter:05d}"
                mrel = f"motions/{sid}.udem"
                crel = f"conds/{sid}.txt"
                save_motion(motion, os.path.join(out_dir, mrel))
                atomic_write_text(os.path.join(out_dir, crel), sentence + "\n")
                entries.append(ManifestEntry(sid, "text", mrel, crel, split))
                counter += 1

    def audio_batch(counts: dict, split: str):
        nonlocal counter
        for gen in GENRE_BEAT_HZ:
            for _ in range(counts.get(gen, 0)):
                rng = np.random.default_rng(np.random.SeedSequence([seed, 2, counter]))
                motion, feats = make_dance_motion(gen, cfg.frames, cfg.fps,
                                                  cfg.feature_dim, rng)
                sid = f"audio_{split}_{counter:05d}"
                mrel = f"motions/{sid}.udem"
                crel = f"conds/{sid}.udef"
                save_motion(motion, os.path.join(out_dir, mrel))
                save_features(feats, os.path.join(out_dir, crel))
                entries.append(ManifestEntry(sid, "audio", mrel, crel, split))
                counter += 1

    text_batch(cfg.families_train, "train")
    text_batch(cfg.families_test, "test")
    audio_batch(cfg.genres_train, "train")
    audio_batch(cfg.genres_test, "test")

    save_vocabulary(os.path.join(out_dir, "vocab.txt"))
    manifest = DatasetManifest(entries)
    save_manifest(manifest, os.path.join(out_dir, "manifest.jsonl"))
    return manifest


# -- loading ------------------------------------------------------------------------


@dataclass
class Sample:
    id: str
    modality: str
    split: str
    motion: MotionSequence
    text_ids: np.ndarray | None = None
    sentence: str | None = None
    features: AudioFeatureSequence | None = None


def load_samples(data_dir, split=None, modality=None, normalize=True) -> list:
    """Load manifest entries into memory, heading-normalizing motions."""
    data_dir = os.fspath(data_dir)
    manifest = load_manifest(os.path.join(data_dir, "manifest.jsonl"))
    vocab = load_vocabulary(os.path.join(data_dir, "vocab.txt"))
    out = []
    for e in manifest.select(split, modality):
        motion = load_motion(os.path.join(data_dir, e.motion))
        if normalize:
            motion = normalize_heading(motion)
        sample = Sample(e.id, e.modality, e.split, motion)
        if e.modality == "text":
            with open(os.path.join(data_dir, e.cond), "r", encoding="utf-8") as fh:
                sample.sentence = fh.read().strip()
            sample.text_ids = tokenize(sample.sentence, vocab)
        else:
            sample.features = load_features(os.path.join(data_dir, e.cond))
        out.append(sample)
    return out

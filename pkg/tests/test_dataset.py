import hashlib
import os

import numpy as np
import pytest

from ude.dataset import (GENRE_BEAT_HZ, SynthConfig, build_vocabulary,
                         load_manifest, load_samples, make_dance_motion,
                         make_text_motion, synth_dataset, tokenize)
from ude.errors import ConfigError
from ude.metrics import detect_motion_beats
from ude.motion import bone_lengths, default_skeleton


def _tiny_config():
    return SynthConfig(
        families_train={"walk": 2, "wave": 2, "jump": 2, "turn": 2},
        families_test={"walk": 1, "wave": 1},
        genres_train={"sway": 2, "groove": 2, "pulse": 2},
        genres_test={"sway": 1},
    )


def _dir_digest(root):
    digest = hashlib.sha256()
    for dirpath, dirnames, filenames in sorted(os.walk(root)):
        dirnames.sort()
        for name in sorted(filenames):
            with open(os.path.join(dirpath, name), "rb") as fh:
                digest.update(name.encode())
                digest.update(fh.read())
    return digest.hexdigest()


class TestVocabulary:
    def test_unknown_words_map_to_unk(self):
        vocab = build_vocabulary()
        ids = tokenize("A person zorbulates Forward!", vocab)
        assert ids[0] == vocab["a"]
        assert ids[2] == vocab["<unk>"]
        assert ids[3] == vocab["forward"]

    def test_all_ids_in_range(self):
        vocab = build_vocabulary()
        ids = tokenize("someone waves their left hand then jumps twice", vocab)
        assert ids.max() < len(vocab)
        assert (ids >= 0).all()


class TestGenerators:
    def test_wave_wrist_dominates(self):
        rng = np.random.default_rng(3)
        for _ in range(5):
            motion, sentence = make_text_motion(["wave"], 64, 16.0, rng,
                                                compose_fraction=0.0)
            pos = motion.positions()
            amp = pos[:, :, 1].max(axis=0) - pos[:, :, 1].min(axis=0)
            skel = default_skeleton()
            wrists = [skel.names.index("l_wrist"), skel.names.index("r_wrist")]
            others = [j for j in range(skel.joint_count) if j not in wrists]
            assert amp[wrists].max() >= 3.0 * amp[others].max()

    def test_bone_lengths_preserved(self):
        rng = np.random.default_rng(4)
        skel = default_skeleton()
        rest = np.linalg.norm(skel.offsets[1:], axis=-1)
        for fam in ("walk", "wave", "jump", "turn"):
            motion, _ = make_text_motion([fam], 32, 16.0, rng, compose_fraction=0.5)
            lengths = bone_lengths(motion, skel)
            assert np.abs(lengths - rest).max() <= 0.05 * rest.min() + 1e-9

    def test_dance_beats_spacing_2hz(self):
        rng = np.random.default_rng(5)
        motion, feats = make_dance_motion("pulse", 64, 16.0, 16, rng)
        assert GENRE_BEAT_HZ["pulse"] == 2.0
        spacing = np.diff(feats.beat_times)
        assert np.allclose(spacing, 0.5)

    def test_dance_beats_recoverable_from_motion(self):
        rng = np.random.default_rng(6)
        for genre in GENRE_BEAT_HZ:
            for _ in range(3):
                motion, feats = make_dance_motion(genre, 64, 16.0, 16, rng)
                detected = detect_motion_beats(motion)
                tol = 2.0 / motion.fps
                hits = sum(np.min(np.abs(detected - b)) <= tol + 1e-9
                           for b in feats.beat_times)
                assert hits >= 0.9 * len(feats.beat_times)

    def test_onset_channel_peaks_at_beats(self):
        rng = np.random.default_rng(7)
        motion, feats = make_dance_motion("sway", 64, 16.0, 16, rng)
        onset = feats.features[:, -1]
        for b in feats.beat_times:
            frame = int(round(b * 16.0))
            window = onset[max(0, frame - 2):frame + 3]
            assert onset[frame] >= window.max() - 1e-9


class TestSynthDataset:
    def test_same_seed_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        synth_dataset(_tiny_config(), seed=9, out_dir=a)
        synth_dataset(_tiny_config(), seed=9, out_dir=b)
        assert _dir_digest(a) == _dir_digest(b)

    def test_different_seed_differs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        synth_dataset(_tiny_config(), seed=9, out_dir=a)
        synth_dataset(_tiny_config(), seed=10, out_dir=b)
        assert _dir_digest(a) != _dir_digest(b)

    def test_counts_and_splits(self, tmp_path):
        manifest = synth_dataset(_tiny_config(), seed=1, out_dir=tmp_path)
        assert len(manifest.select("train", "text")) == 8
        assert len(manifest.select("test", "text")) == 2
        assert len(manifest.select("train", "audio")) == 6
        assert len(manifest.select("test", "audio")) == 1

    def test_zero_count_family_absent(self, tmp_path):
        cfg = _tiny_config()
        cfg.families_train = {"walk": 3}
        cfg.families_test = {}
        manifest = synth_dataset(cfg, seed=2, out_dir=tmp_path)
        samples = load_samples(tmp_path, modality="text")
        assert len(samples) == 3
        assert all("walk" in s.sentence or "stroll" in s.sentence
                   or "march" in s.sentence for s in samples)

    def test_unknown_family_rejected(self, tmp_path):
        cfg = _tiny_config()
        cfg.families_train = {"moonwalk": 4}
        with pytest.raises(ConfigError):
            synth_dataset(cfg, seed=0, out_dir=tmp_path)

    def test_manifest_round_trip(self, tmp_path):
        synth_dataset(_tiny_config(), seed=3, out_dir=tmp_path)
        manifest = load_manifest(tmp_path / "manifest.jsonl")
        ids = [e.id for e in manifest.entries]
        assert len(set(ids)) == len(ids)

    def test_loaded_samples_have_conditions(self, tmp_path):
        synth_dataset(_tiny_config(), seed=4, out_dir=tmp_path)
        samples = load_samples(tmp_path, split="train")
        for s in samples:
            if s.modality == "text":
                assert s.text_ids is not None and len(s.text_ids) >= 3
            else:
                assert s.features is not None
                assert s.features.length == s.motion.length

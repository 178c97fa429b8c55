"""Dataset manifests and batch assembly.

A manifest is JSON-lines, one object per clip:
`{"path": str, "labels": [int], "split": "train"|"val"|"test"}`.
Features come either from WAV files directly or from a cache directory
of pre-extracted log-mel files (one per clip, named by the clip stem).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import load_wav, logmel, read_feature_cache, write_feature_cache
from .errors import ConfigError, FormatError, ParameterError

SPLITS = ("train", "val", "test")


@dataclass
class ManifestEntry:
    path: str
    labels: tuple
    split: str


def read_manifest(path) -> list[ManifestEntry]:
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict) or set(obj) != {"path", "labels", "split"}:
                raise FormatError(f"{path}:{lineno}: expected keys path/labels/split")
            if obj["split"] not in SPLITS:
                raise FormatError(f"{path}:{lineno}: unknown split {obj['split']!r}")
            labels = tuple(int(v) for v in obj["labels"])
            entries.append(ManifestEntry(path=str(obj["path"]), labels=labels, split=obj["split"]))
    return entries


def write_manifest(path, entries) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in entries:
            fh.write(json.dumps({"path": e.path, "labels": list(e.labels), "split": e.split}))
            fh.write("\n")


def split_entries(entries, split: str) -> list[ManifestEntry]:
    if split not in SPLITS:
        raise ParameterError(f"unknown split {split!r}")
    return [e for e in entries if e.split == split]


def multi_hot(label_sets, num_classes: int) -> np.ndarray:
    out = np.zeros((len(label_sets), num_classes), dtype=np.float32)
    for i, labels in enumerate(label_sets):
        for lab in labels:
            if not 0 <= lab < num_classes:
                raise ParameterError(f"label {lab} outside [0, {num_classes})")
            out[i, lab] = 1.0
    return out


def feature_cache_path(features_dir, clip_path) -> Path:
    return Path(features_dir) / (Path(clip_path).stem + ".lmel")


def extract_features(entries, out_dir, n_frames: int, n_mels: int) -> list[Path]:
    """Compute log-mels for every manifest entry and cache them in out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for entry in entries:
        feats = logmel(load_wav(entry.path), n_frames=n_frames, n_mels=n_mels)
        target = feature_cache_path(out_dir, entry.path)
        write_feature_cache(target, feats)
        written.append(target)
    return written


def load_split_arrays(
    entries,
    split: str,
    num_classes: int,
    n_frames: int,
    n_mels: int,
    features_dir=None,
) -> tuple[np.ndarray, np.ndarray]:
    """(features, multi-hot targets) for one split, from caches or WAVs."""
    subset = split_entries(entries, split)
    if not subset:
        raise ConfigError(f"manifest has no entries for split {split!r}")
    feats = np.empty((len(subset), n_frames, n_mels), dtype=np.float32)
    for i, entry in enumerate(subset):
        if features_dir is not None:
            arr = read_feature_cache(feature_cache_path(features_dir, entry.path))
            if arr.shape != (n_frames, n_mels):
                raise FormatError(
                    f"cached features for {entry.path} have shape {arr.shape}, "
                    f"expected ({n_frames}, {n_mels})"
                )
            feats[i] = arr
        else:
            feats[i] = logmel(load_wav(entry.path), n_frames=n_frames, n_mels=n_mels)
    targets = multi_hot([e.labels for e in subset], num_classes)
    return feats, targets


def synthetic_dataset(
    num_samples: int,
    num_classes: int,
    n_frames: int,
    n_mels: int,
    seed: int = 0,
    labels_per_sample: int = 2,
) -> tuple[np.ndarray, np.ndarray]:
    """Random standardized features with random multi-hot labels.

    Inputs are i.i.d. normal, so every sample is distinguishable and a
    model with enough capacity can memorize the label assignment.
    """
    rng = np.random.default_rng(seed)
    feats = rng.normal(0.0, 1.0, (num_samples, n_frames, n_mels)).astype(np.float32)
    targets = np.zeros((num_samples, num_classes), dtype=np.float32)
    for i in range(num_samples):
        chosen = rng.choice(num_classes, size=min(labels_per_sample, num_classes), replace=False)
        targets[i, chosen] = 1.0
    return feats, targets

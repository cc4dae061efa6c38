"""Labeled image collections and their on-disk layout.

A dataset directory holds PNG images plus a manifest.json:
{"classes": [...], "items": [{"path": ..., "label": N, "split": "train"|"test"}]}
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .codecs import load_image, save_image
from .raster import RasterImage


@dataclass
class LabeledImageSet:
    """Images with integer labels and a train/test split tag per item."""

    class_names: list[str]
    items: list[tuple[RasterImage, int, str]] = field(default_factory=list)

    def validate(self) -> None:
        k = len(self.class_names)
        for _, label, split in self.items:
            if not 0 <= label < k:
                raise ValueError(f"label {label} outside [0, {k})")
            if split not in ("train", "test"):
                raise ValueError(f"unknown split tag {split!r}")
        train_labels = {label for _, label, split in self.items if split == "train"}
        if self.split("train") and train_labels != set(range(k)):
            missing = sorted(set(range(k)) - train_labels)
            raise ValueError(f"classes missing from train split: {missing}")

    def split(self, tag: str) -> list[tuple[RasterImage, int]]:
        return [(img, label) for img, label, split in self.items if split == tag]

    def __len__(self) -> int:
        return len(self.items)


def save_dataset(ds: LabeledImageSet, root) -> None:
    os.makedirs(root, exist_ok=True)
    manifest = {"classes": ds.class_names, "items": []}
    counters: dict[str, int] = {}
    for img, label, split in ds.items:
        idx = counters.get(split, 0)
        counters[split] = idx + 1
        rel = os.path.join(split, f"{ds.class_names[label]}_{idx:05d}.png")
        os.makedirs(os.path.join(root, split), exist_ok=True)
        save_image(img, os.path.join(root, rel))
        manifest["items"].append({"path": rel, "label": label, "split": split})
    with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)


def load_dataset(root) -> LabeledImageSet:
    with open(os.path.join(root, "manifest.json"), "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    ds = LabeledImageSet(class_names=list(manifest["classes"]))
    for row in manifest["items"]:
        img = load_image(os.path.join(root, row["path"]))
        ds.items.append((img, int(row["label"]), row["split"]))
    ds.validate()
    return ds

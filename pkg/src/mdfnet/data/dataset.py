"""Turn joined instances into model-ready arrays."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from ..model import Batch
from .join import JoinedInstance, join, read_manifest
from .synth import read_pgm
from .tables import read_tables


@dataclass
class LoadedDataset:
    instances: List[JoinedInstance]
    images: np.ndarray                 # (N, 1, S, S) float64 in [0, 1]

    def __len__(self) -> int:
        return len(self.instances)

    def subset(self, split: str) -> "LoadedDataset":
        idx = [i for i, inst in enumerate(self.instances) if inst.split == split]
        return LoadedDataset([self.instances[i] for i in idx], self.images[idx])

    def take(self, idx: Sequence[int]) -> "LoadedDataset":
        idx = list(idx)
        return LoadedDataset([self.instances[i] for i in idx], self.images[idx])

    def batch(self, idx: Sequence[int]) -> Batch:
        idx = list(idx)
        insts = [self.instances[i] for i in idx]
        return Batch(
            images=self.images[idx],
            records=[inst.record for inst in insts],
            gt_boxes=[np.array([b.xywh for b in inst.boxes], dtype=np.float64).reshape(-1, 4) for inst in insts],
            gt_labels=[np.array([b.label for b in inst.boxes], dtype=np.int64) for inst in insts],
        )


def load_images(instances: Sequence[JoinedInstance], root) -> np.ndarray:
    root = Path(root)
    arrs = [read_pgm(root / inst.image) for inst in instances]
    if not arrs:
        return np.zeros((0, 1, 0, 0))
    return (np.stack(arrs)[:, None].astype(np.float64)) / 255.0


def load_dataset(directory, manifest: Optional[str] = None) -> LoadedDataset:
    """Join the tables in ``directory`` (or read a prepared manifest) and load the images."""
    d = Path(directory)
    if manifest is not None:
        insts = read_manifest(manifest)
    elif (d / "manifest.jsonl").exists():
        insts = read_manifest(d / "manifest.jsonl")
    else:
        insts, _ = join(read_tables(d), image_dir=d / "images")
    return LoadedDataset(insts, load_images(insts, d))

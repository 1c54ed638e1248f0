"""Per-channel conv activation maps, class averages, and heatmap export.

Maps are captured post-ReLU and pre-pooling, at full NxN resolution, so
they overlay directly on the cage grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import nncore
from .errors import DataError, ShapeError
from .nncore import CLASS_NAMES, ModelParams


@dataclass
class ActivationSet:
    branch_a: np.ndarray  # [16, N, N], 3x3-kernel branch
    branch_b: np.ndarray  # [16, N, N], 9x9-kernel branch
    recording_id: str = ""
    label: str = ""


@dataclass
class ClassAverageMaps:
    """Per-class mean activation maps; absent classes are simply missing."""

    maps: dict  # label -> {"a": [16,N,N], "b": [16,N,N]}
    counts: dict  # label -> number of contributing sets


def capture_activations(
    params: ModelParams, features: np.ndarray, recording_id: str = "", label: str = ""
) -> ActivationSet:
    """Run a forward pass and keep both branches' post-ReLU maps."""
    features = np.asarray(features, dtype=float)
    if features.ndim != 3:
        raise ShapeError(f"features must be [T,N,N], got {features.shape}")
    _, cache = nncore._forward_batch(params, features[None])
    return ActivationSet(
        branch_a=cache["relu_a"][0].copy(),
        branch_b=cache["relu_b"][0].copy(),
        recording_id=recording_id,
        label=label,
    )


def class_average(sets) -> ClassAverageMaps:
    sets = list(sets)
    if not sets:
        raise DataError("no activation sets to average")
    maps = {}
    counts = {}
    for label in CLASS_NAMES:
        group = [s for s in sets if s.label == label]
        if not group:
            continue
        maps[label] = {
            "a": np.mean([s.branch_a for s in group], axis=0),
            "b": np.mean([s.branch_b for s in group], axis=0),
        }
        counts[label] = len(group)
    if sum(counts.values()) != len(sets):
        unknown = sorted({s.label for s in sets} - set(CLASS_NAMES))
        raise DataError(f"unknown class labels in activation sets: {unknown}")
    return ClassAverageMaps(maps=maps, counts=counts)


def export_heatmap(map2d: np.ndarray, path, format: str = "pgm"):
    """Write one NxN map as ASCII PGM (scaled to 0..255) or full-precision CSV."""
    arr = np.asarray(map2d, dtype=float)
    if arr.ndim != 2:
        raise ShapeError(f"heatmap must be 2-D, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DataError("heatmap contains non-finite values")
    path = Path(path)
    if format == "csv":
        with open(path, "w") as fh:
            for row in arr:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    elif format == "pgm":
        lo, hi = arr.min(), arr.max()
        if hi > lo:
            pix = np.rint((arr - lo) / (hi - lo) * 255).astype(int)
        else:
            pix = np.zeros(arr.shape, dtype=int)
        with open(path, "w") as fh:
            fh.write(f"P2\n{arr.shape[1]} {arr.shape[0]}\n255\n")
            for row in pix:
                fh.write(" ".join(str(v) for v in row) + "\n")
    else:
        raise DataError(f"unknown heatmap format {format!r}")


def load_heatmap_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)


def export_class_maps(
    cam: ClassAverageMaps, out_dir, formats=("pgm",), figures: bool = False
) -> Path:
    """Write <out>/<class>/<branch>/<channel>.<fmt> plus an index.json.

    With figures=True, also renders a per-class PNG montage via matplotlib.
    """
    out_dir = Path(out_dir)
    index = {"classes": {}, "branches": ["a", "b"]}
    for label, branches in cam.maps.items():
        entry = {"count": cam.counts[label], "channels": {}}
        for branch, stack in branches.items():
            bdir = out_dir / label / branch
            bdir.mkdir(parents=True, exist_ok=True)
            for ch in range(stack.shape[0]):
                for fmt in formats:
                    export_heatmap(stack[ch], bdir / f"{ch:02d}.{fmt}", fmt)
                entry["channels"][f"{branch}/{ch:02d}"] = {
                    "min": float(stack[ch].min()),
                    "max": float(stack[ch].max()),
                }
        index["classes"][label] = entry
        if figures:
            from .figures import save_activation_montage

            save_activation_montage(branches, out_dir / f"{label}.png", title=label)
    with open(out_dir / "index.json", "w") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    return out_dir / "index.json"

"""Scene-level image-uncertainty sliders.

Both manipulations operate on the scene graph, not the rendered pixels, so a
perturbed scene re-renders with every untouched factor bit-identical and the
ground-truth masks unchanged: nuclei-intensity scales only the nucleus stain,
blood-stain adds distractor blood cells plus diffuse stroma-only red blobs.

Level 0 is always the identity.  Blood cells and blobs for higher levels are
prefixes of one seed-determined candidate sequence, so severity is monotone
per seed, not just in expectation.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .config import derive_seed, make_rng
from .scenegen import (
    MAX_INSTANCES,
    SceneGraph,
    SceneSizeError,
    StainBlob,
    place_distractors,
)

PERTURBATION_KINDS = ("nuclei-intensity", "blood-stain")
MAX_EXTRA_BLOOD = 150
MAX_STAIN_BLOBS = 10
_BLOB_RADIUS_RANGE = (5.0, 25.0)
_BLOB_PEAK_ABSORBANCE = 0.6


@dataclass
class PerturbationSpec:
    kind: str
    level: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"level must be in [0, 1], got {self.level}")


def apply(scene: SceneGraph, spec: PerturbationSpec) -> SceneGraph:
    if spec.kind == "nuclei-intensity":
        return apply_nuclei_intensity(scene, spec.level)
    return apply_blood_stain(scene, spec.level, spec.seed)


def apply_nuclei_intensity(scene: SceneGraph, level: float) -> SceneGraph:
    """Scale the effective nucleus stain to (1 - level) of the original.

    At level 1 nuclei are unstained and blend into cytoplasm/tissue; nothing
    else in the scene changes.
    """
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"level must be in [0, 1], got {level}")
    out = copy.deepcopy(scene)
    out.config.stain.nucleus_intensity = (
        (1.0 - level) * scene.config.stain.nucleus_intensity)
    return out


def apply_blood_stain(scene: SceneGraph, level: float, seed: int) -> SceneGraph:
    """Add round(level * 150) blood cells and level-scaled red stain blobs.

    Added objects are background-labeled distractors, so semantic and
    instance masks are identical across all levels of the same base scene.
    """
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"level must be in [0, 1], got {level}")
    out = copy.deepcopy(scene)
    n_extra = int(round(level * MAX_EXTRA_BLOOD))
    n_blobs = int(round(level * MAX_STAIN_BLOBS))
    if n_extra == 0 and n_blobs == 0:
        return out

    candidates = place_distractors(scene.layout, scene.config,
                                   derive_seed(seed, "blood-extra", 0),
                                   MAX_EXTRA_BLOOD)
    next_id = len(scene.cells) + 1
    if len(scene.cells) + n_extra > MAX_INSTANCES:
        raise SceneSizeError(
            f"{len(scene.cells) + n_extra} instances exceed the 16-bit id space")
    for cell in candidates[:n_extra]:
        cell.id = next_id
        next_id += 1
        out.cells.append(cell)

    rng = make_rng(derive_seed(seed, "blood-blob", 0))
    extent = scene.config.world_extent
    blobs = []
    for _ in range(MAX_STAIN_BLOBS):
        cx, cy = rng.uniform(0.0, extent, 2)
        radius = rng.uniform(*_BLOB_RADIUS_RANGE)
        blobs.append(StainBlob((float(cx), float(cy)), float(radius),
                               _BLOB_PEAK_ABSORBANCE * level))
    out.stain_blobs = list(scene.stain_blobs) + blobs[:n_blobs]
    return out

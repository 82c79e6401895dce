"""Seeded corruption of ground-truth masks, emulating annotator noise.

Two tasks: semantic class flips (each instance's class is switched to another
nucleus class with probability `level`) and foreground shape noise (each
instance is shifted, scaled, elastically deformed, or dropped with probability
`level`).  Corruption is per-instance and deterministic in (mask, spec).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import find_objects, gaussian_filter

from .config import make_rng

LABEL_NOISE_TASKS = ("semseg-flip", "fgbg-shape")
_SHAPE_OPS = ("shift", "scale", "elastic", "drop")
_NUCLEUS_LABELS = (1, 2, 3, 4, 5)


@dataclass
class LabelNoiseSpec:
    task: str
    level: float
    seed: int = 0
    shift_max: float = 0.5  # fraction of instance equivalent diameter
    scale_range: tuple[float, float] = (0.6, 1.4)
    elastic_sigma: float = 8.0  # px
    elastic_alpha: float = 10.0  # px
    op_weights: tuple[float, float, float, float] = (0.25, 0.25, 0.25, 0.25)

    def __post_init__(self):
        if self.task not in LABEL_NOISE_TASKS:
            raise ValueError(f"unknown label-noise task {self.task!r}")
        if not 0.0 <= self.level <= 1.0:
            raise ValueError(f"level must be in [0, 1], got {self.level}")
        if len(self.op_weights) != 4 or any(w < 0 for w in self.op_weights):
            raise ValueError("op_weights must be 4 non-negative entries")
        if abs(sum(self.op_weights) - 1.0) > 1e-9:
            raise ValueError(f"op_weights sum = {sum(self.op_weights):.6g}")
        if self.scale_range[0] <= 0 or self.scale_range[1] < self.scale_range[0]:
            raise ValueError(f"bad scale_range {self.scale_range}")


def semantic_from_instances(instance_mask: np.ndarray,
                            class_map: dict[int, int]) -> np.ndarray:
    """Re-derive the pixel semantic mask from an instance mask and an
    id -> class table."""
    lut = np.zeros(int(instance_mask.max()) + 1, dtype=np.uint8)
    for iid, cls in class_map.items():
        if iid <= instance_mask.max():
            lut[iid] = cls
    return lut[instance_mask]


def corrupt_semantic(instance_mask: np.ndarray, class_map: dict[int, int],
                     spec: LabelNoiseSpec) -> dict[int, int]:
    """Flip each instance's class with probability `level`, uniformly among
    the other four nucleus classes.  Returns a new id -> class table."""
    if spec.task != "semseg-flip":
        raise ValueError(f"spec.task must be 'semseg-flip', got {spec.task!r}")
    present = np.unique(instance_mask)
    present = present[present != 0]
    unknown = [int(i) for i in present if int(i) not in class_map]
    if unknown:
        raise ValueError(f"instance id {unknown[0]} missing from class map")

    rng = make_rng(spec.seed)
    out = {}
    for iid in sorted(class_map):
        cls = int(class_map[iid])
        if cls not in _NUCLEUS_LABELS:
            raise ValueError(f"instance {iid} has non-nucleus class {cls}")
        if rng.random() < spec.level:
            others = [c for c in _NUCLEUS_LABELS if c != cls]
            cls = others[int(rng.integers(0, len(others)))]
        out[iid] = cls
    return out


def corrupt_shapes(instance_mask: np.ndarray,
                   spec: LabelNoiseSpec) -> np.ndarray:
    """Shift/scale/elastic/drop each instance with probability `level`.

    Collisions resolve in favor of untouched instances; between two modified
    instances the lower id wins.  Pixels pushed off the image are clipped.
    """
    if spec.task != "fgbg-shape":
        raise ValueError(f"spec.task must be 'fgbg-shape', got {spec.task!r}")
    mask = np.asarray(instance_mask)
    ids = np.unique(mask)
    ids = ids[ids != 0]
    if len(ids) == 0 or spec.level == 0.0:
        return mask.copy()

    slices = find_objects(mask.astype(np.int64))
    rng = make_rng(spec.seed)
    transformed: dict[int, np.ndarray] = {}  # id -> (n, 2) target pixels
    for iid in ids:
        if rng.random() >= spec.level:
            continue
        op = _SHAPE_OPS[int(rng.choice(len(_SHAPE_OPS), p=spec.op_weights))]
        sl = slices[int(iid) - 1]
        local = mask[sl] == iid
        offset = np.array([sl[0].start, sl[1].start])
        if op == "drop":
            transformed[int(iid)] = np.empty((0, 2), dtype=np.int64)
        elif op == "shift":
            transformed[int(iid)] = _shift_pixels(local, offset, rng,
                                                  spec.shift_max)
        elif op == "scale":
            factor = float(rng.uniform(*spec.scale_range))
            transformed[int(iid)] = _scale_pixels(local, offset, factor)
        else:
            transformed[int(iid)] = _elastic_pixels(local, offset, rng,
                                                    spec.elastic_sigma,
                                                    spec.elastic_alpha)

    if not transformed:
        return mask.copy()

    out = mask.copy()
    affected = np.fromiter(transformed, dtype=np.int64)
    out[np.isin(mask, affected)] = 0
    h, w = mask.shape
    for iid in sorted(transformed):
        pix = transformed[iid]
        keep = ((pix[:, 0] >= 0) & (pix[:, 0] < h)
                & (pix[:, 1] >= 0) & (pix[:, 1] < w))
        pix = pix[keep]
        free = out[pix[:, 0], pix[:, 1]] == 0
        out[pix[free, 0], pix[free, 1]] = iid
    return out


def _shift_pixels(local, offset, rng, shift_max):
    pix = np.argwhere(local) + offset
    equiv_diam = 2.0 * np.sqrt(len(pix) / np.pi)
    angle = rng.uniform(0.0, 2.0 * np.pi)
    mag = rng.uniform(0.0, shift_max) * equiv_diam
    delta = np.array([round(mag * np.sin(angle)), round(mag * np.cos(angle))],
                     dtype=np.int64)
    return pix + delta


def _scale_pixels(local, offset, factor):
    """Nearest-neighbor inverse mapping about the centroid; factor 1 is the
    exact identity."""
    src = np.argwhere(local).astype(np.float64)
    centroid = src.mean(axis=0)
    h, w = local.shape
    pad = int(np.ceil(max(h, w) * max(factor - 1.0, 0.0))) + 2
    yy, xx = np.mgrid[-pad:h + pad, -pad:w + pad]
    tgt = np.column_stack([yy.ravel(), xx.ravel()]).astype(np.float64)
    back = (tgt - centroid) / factor + centroid
    back_i = np.rint(back).astype(np.int64)
    ok = ((back_i[:, 0] >= 0) & (back_i[:, 0] < h)
          & (back_i[:, 1] >= 0) & (back_i[:, 1] < w))
    hit = np.zeros(len(tgt), dtype=bool)
    hit[ok] = local[back_i[ok, 0], back_i[ok, 1]]
    return tgt[hit].astype(np.int64) + offset


def _elastic_pixels(local, offset, rng, sigma, alpha):
    """Random displacement field: per-pixel Gaussian noise smoothed with
    kernel sigma, rescaled so the largest displacement is alpha pixels."""
    h, w = local.shape
    pad = int(np.ceil(alpha)) + 2
    hp, wp = h + 2 * pad, w + 2 * pad
    field = rng.normal(size=(hp, wp, 2))
    for c in range(2):
        field[:, :, c] = gaussian_filter(field[:, :, c], sigma)
    mag = np.sqrt(np.sum(field**2, axis=2))
    peak = mag.max()
    if peak > 0:
        field *= alpha / peak
    yy, xx = np.mgrid[0:hp, 0:wp]
    src_y = np.rint(yy + field[:, :, 0]).astype(np.int64) - pad
    src_x = np.rint(xx + field[:, :, 1]).astype(np.int64) - pad
    ok = (src_y >= 0) & (src_y < h) & (src_x >= 0) & (src_x < w)
    hit = np.zeros((hp, wp), dtype=bool)
    hit[ok] = local[src_y[ok], src_x[ok]]
    tgt = np.argwhere(hit) - pad + offset
    return tgt


def derive_fgbg(semantic_mask: np.ndarray) -> np.ndarray:
    """Binary foreground mask: 1 where the semantic label is nonzero."""
    return (np.asarray(semantic_mask) != 0).astype(np.uint8)

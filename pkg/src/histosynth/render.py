"""Orthographic brightfield renderer with exact masks.

Color follows a Beer-Lambert absorbance model: every stained volume (tissue
slab, cytoplasms, nuclei, blood bodies, diffuse stain blobs) contributes
``hue * intensity * jitter * path_length / reference_length`` to a per-pixel
absorbance accumulator, and the pixel color is
``background_light * exp(-total)``.  Each object's contribution is blurred
with a Gaussian of sigma = blur_strength * |z_center - focal_depth| before
compositing, which produces the defocus look of thick sections.

Masks are rendered separately, unblurred, at native resolution from nucleus
slab occupancy; overlaps resolve to the nucleus nearer the focal plane, then
to the lower id.  Goblet and blood-cell distractors never enter the masks.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .config import NUCLEUS_CLASSES, CellClass
from .geometry import ImplicitShape, Slab, footprint, slab_occupancy_grid
from .scenegen import (
    SceneGraph,
    body_implicit,
    crypt_axis_xy,
    in_stroma,
    nucleus_implicit,
    points_in_polygon,
    scene_hash,
)
from .config import config_hash

SUPERSAMPLE = 2  # RGB only; masks stay at native resolution
_LUMEN_Z_SAMPLES = 9
_MIN_BLUR_SIGMA_PX = 0.25  # below this the blur kernel is a no-op


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3) uint8
    semantic_mask: np.ndarray  # (H, W) uint8, 0 background, 1..5 nucleus classes
    instance_mask: np.ndarray  # (H, W) uint16, 0 background
    depth_map: np.ndarray  # (H, W) float32, nucleus-center depth, 0 background


def render_scene(scene: SceneGraph) -> RenderOutput:
    cfg = scene.config
    slab = Slab(cfg.slab_z0, cfg.slab_thickness)
    return _render(scene, slab, reference_length=cfg.slab_thickness)


def render_zstack(scene: SceneGraph, n_slices: int) -> list[RenderOutput]:
    """Render the slab as `n_slices` equal sub-slabs (n_slices=1 is
    render_scene).  The absorbance reference length stays the full slab
    thickness so thinner slices come out proportionally paler."""
    if n_slices < 1:
        raise ValueError(f"n_slices must be >= 1, got {n_slices}")
    cfg = scene.config
    step = cfg.slab_thickness / n_slices
    return [
        _render(scene, Slab(cfg.slab_z0 + k * step, step),
                reference_length=cfg.slab_thickness)
        for k in range(n_slices)
    ]


# ---------------------------------------------------------------------------
# Core pass
# ---------------------------------------------------------------------------

def _render(scene: SceneGraph, slab: Slab, reference_length: float) -> RenderOutput:
    cfg = scene.config
    st = cfg.stain
    w, h = cfg.image_width, cfg.image_height
    ss = SUPERSAMPLE
    ws, hs = w * ss, h * ss
    px_x = cfg.world_extent / ws  # um per supersampled pixel
    px_y = cfg.world_extent / hs
    xs = (np.arange(ws) + 0.5) * px_x
    ys = (np.arange(hs) + 0.5) * px_y

    absorb = np.zeros((hs, ws, 3), dtype=np.float64)

    # tissue slab with lumen holes, tears and goblet vacuoles carved out
    tissue_path = _tissue_path(scene, slab, xs, ys)
    tissue_rgb = np.asarray(st.tissue_hue) * st.tissue_intensity
    tissue_sigma = _blur_sigma_px(cfg, (slab.z0 + slab.z1) / 2.0, px_x, px_y)
    tissue_a = tissue_path[:, :, None] / reference_length * tissue_rgb
    if max(tissue_sigma) > _MIN_BLUR_SIGMA_PX:
        for c in range(3):
            tissue_a[:, :, c] = gaussian_filter(tissue_a[:, :, c], tissue_sigma)
    absorb += tissue_a

    for cell in scene.cells:
        for shape, rgb in _stained_volumes(cell, cfg):
            _accumulate_volume(absorb, shape, rgb, slab, reference_length,
                               cfg, xs, ys, px_x, px_y)

    if scene.stain_blobs:
        _accumulate_stain_blobs(absorb, scene, xs, ys)

    color = np.asarray(st.background_light) * np.exp(-absorb)
    color = color.reshape(h, ss, w, ss, 3).mean(axis=(1, 3))
    image = np.clip(np.round(color * 255.0), 0, 255).astype(np.uint8)

    semantic, instance, depth = _render_masks(scene, slab, w, h)
    return RenderOutput(image, semantic, instance, depth)


def _blur_sigma_px(cfg, z_center: float, px_x: float, px_y: float):
    sigma_um = cfg.blur_strength * abs(z_center - cfg.focal_depth)
    return (sigma_um / px_y, sigma_um / px_x)  # (row, col) order


def _stained_volumes(cell, cfg):
    """(shape, rgb absorbance) pairs contributed by one cell."""
    st = cfg.stain
    key = cell.cell_class.key
    out = []
    if cell.cell_class in NUCLEUS_CLASSES:
        nuc = nucleus_implicit(cell)
        rgb = (np.asarray(st.nucleus_hue[key]) * st.nucleus_intensity
               * cell.stain_jitter)
        out.append((nuc, rgb))
        cyto_rgb = (np.asarray(st.cytoplasm_hue[key])
                    * st.cytoplasm_intensity[key] * cell.stain_jitter)
        if cyto_rgb.any():
            out.append((body_implicit(cell), cyto_rgb))
    elif cell.cell_class is CellClass.BLOOD:
        rgb = (np.asarray(st.cytoplasm_hue["blood"])
               * st.cytoplasm_intensity["blood"] * cell.stain_jitter)
        out.append((body_implicit(cell), rgb))
    # goblet vacuoles are unstained; they displace tissue instead
    return out


def _patch_bounds(box, xs, ys, px_x, px_y, pad_px):
    j0 = max(0, int(np.floor(box[0] / px_x)) - pad_px - 1)
    j1 = min(len(xs), int(np.ceil(box[2] / px_x)) + pad_px + 1)
    i0 = max(0, int(np.floor(box[1] / px_y)) - pad_px - 1)
    i1 = min(len(ys), int(np.ceil(box[3] / px_y)) + pad_px + 1)
    return i0, i1, j0, j1


def _accumulate_volume(absorb, shape, rgb, slab, reference_length, cfg,
                       xs, ys, px_x, px_y):
    box = footprint(shape, slab)
    if box is None:
        return
    sigma = _blur_sigma_px(cfg, float(shape.center[2]), px_x, px_y)
    pad_px = int(np.ceil(4.0 * max(sigma))) + 1 if max(sigma) > _MIN_BLUR_SIGMA_PX else 0
    i0, i1, j0, j1 = _patch_bounds(box, xs, ys, px_x, px_y, pad_px)
    if i0 >= i1 or j0 >= j1:
        return
    gx, gy = np.meshgrid(xs[j0:j1], ys[i0:i1])
    xy = np.column_stack([gx.ravel(), gy.ravel()])
    covered, z_entry, z_exit = slab_occupancy_grid(shape, slab, xy)
    path = np.where(covered, z_exit - z_entry, 0.0).reshape(i1 - i0, j1 - j0)
    if not path.any():
        return
    path /= reference_length
    if max(sigma) > _MIN_BLUR_SIGMA_PX:
        path = gaussian_filter(path, sigma, mode="constant")
    absorb[i0:i1, j0:j1] += path[:, :, None] * rgb


def _tissue_path(scene: SceneGraph, slab: Slab, xs, ys) -> np.ndarray:
    """Per-column tissue path length: slab thickness minus crypt lumens,
    tears (full-thickness voids) and goblet vacuoles."""
    cfg = scene.config
    path = np.full((len(ys), len(xs)), slab.thickness, dtype=np.float64)
    step = slab.thickness / _LUMEN_Z_SAMPLES
    z_samples = slab.z0 + (np.arange(_LUMEN_Z_SAMPLES) + 0.5) * step
    px_x = xs[1] - xs[0] if len(xs) > 1 else 1.0
    px_y = ys[1] - ys[0] if len(ys) > 1 else 1.0

    for crypt in scene.layout.crypts:
        r_lumen = crypt.radius - crypt.wall_thickness
        if r_lumen <= 0:
            continue
        wander = (abs(crypt.bend_linear[0]) + abs(crypt.bend_linear[1])) * \
            slab.thickness / 2.0 + (abs(crypt.bend_quad[0])
                                    + abs(crypt.bend_quad[1])) * \
            (slab.thickness / 2.0) ** 2
        reach = r_lumen + wander + 2.0
        box = (crypt.center[0] - reach, crypt.center[1] - reach,
               crypt.center[0] + reach, crypt.center[1] + reach)
        i0, i1, j0, j1 = _patch_bounds(box, xs, ys, px_x, px_y, 0)
        if i0 >= i1 or j0 >= j1:
            continue
        gx, gy = np.meshgrid(xs[j0:j1], ys[i0:i1])
        lumen = np.zeros(gx.shape, dtype=np.float64)
        for z in z_samples:
            ax, ay = crypt_axis_xy(crypt, z)
            lumen += ((gx - ax) ** 2 + (gy - ay) ** 2) < r_lumen * r_lumen
        path[i0:i1, j0:j1] -= lumen * step

    if scene.layout.tears:
        gx, gy = np.meshgrid(xs, ys)
        pts = np.column_stack([gx.ravel(), gy.ravel()])
        void = np.zeros(len(pts), dtype=bool)
        for tear in scene.layout.tears:
            void |= points_in_polygon(pts, tear.vertices)
        path[void.reshape(path.shape)] = 0.0

    for cell in scene.cells:
        if cell.cell_class is not CellClass.GOBLET:
            continue
        shape = body_implicit(cell)
        box = footprint(shape, slab)
        if box is None:
            continue
        i0, i1, j0, j1 = _patch_bounds(box, xs, ys, px_x, px_y, 0)
        if i0 >= i1 or j0 >= j1:
            continue
        gx, gy = np.meshgrid(xs[j0:j1], ys[i0:i1])
        xy = np.column_stack([gx.ravel(), gy.ravel()])
        covered, z_entry, z_exit = slab_occupancy_grid(shape, slab, xy)
        vac = np.where(covered, z_exit - z_entry, 0.0).reshape(i1 - i0, j1 - j0)
        path[i0:i1, j0:j1] -= vac

    return np.maximum(path, 0.0)


def _accumulate_stain_blobs(absorb, scene: SceneGraph, xs, ys):
    """Diffuse red blobs restricted to the stroma (blood-stain slider)."""
    st = scene.config.stain
    rgb = np.asarray(st.cytoplasm_hue["blood"])
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    stroma = in_stroma(scene.layout, pts).reshape(gx.shape)
    field = np.zeros(gx.shape, dtype=np.float64)
    for blob in scene.stain_blobs:
        d = np.hypot(gx - blob.center[0], gy - blob.center[1]) / blob.radius
        profile = np.clip(1.0 - d, 0.0, 1.0) ** 2  # soft-edged disc
        field += blob.strength * profile
    absorb += (field * stroma)[:, :, None] * rgb


def _render_masks(scene: SceneGraph, slab: Slab, w: int, h: int):
    cfg = scene.config
    px_x = cfg.world_extent / w
    px_y = cfg.world_extent / h
    xs = (np.arange(w) + 0.5) * px_x
    ys = (np.arange(h) + 0.5) * px_y

    semantic = np.zeros((h, w), dtype=np.uint8)
    instance = np.zeros((h, w), dtype=np.uint16)
    depth = np.zeros((h, w), dtype=np.float32)
    best = np.full((h, w), np.inf, dtype=np.float64)

    for cell in scene.cells:  # ascending id: earlier id wins priority ties
        shape = nucleus_implicit(cell)
        if shape is None:
            continue
        box = footprint(shape, slab)
        if box is None:
            continue
        i0, i1, j0, j1 = _patch_bounds(box, xs, ys, px_x, px_y, 0)
        if i0 >= i1 or j0 >= j1:
            continue
        gx, gy = np.meshgrid(xs[j0:j1], ys[i0:i1])
        xy = np.column_stack([gx.ravel(), gy.ravel()])
        covered, _, _ = slab_occupancy_grid(shape, slab, xy)
        if not covered.any():
            continue
        covered = covered.reshape(i1 - i0, j1 - j0)
        priority = abs(cell.nucleus_center[2] - cfg.focal_depth)
        sel = covered & (priority < best[i0:i1, j0:j1])
        best[i0:i1, j0:j1][sel] = priority
        semantic[i0:i1, j0:j1][sel] = int(cell.cell_class)
        instance[i0:i1, j0:j1][sel] = cell.id
        depth[i0:i1, j0:j1][sel] = cell.nucleus_center[2]

    return semantic, instance, depth


# ---------------------------------------------------------------------------
# File IO
# ---------------------------------------------------------------------------

def write_outputs(out: RenderOutput, directory, stem: str,
                  scene: SceneGraph | None = None) -> dict[str, Path]:
    """Write the per-scene file set; returns {role: path}.  Existing files
    with the same stem are overwritten."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    h, w = out.semantic_mask.shape
    paths = {
        "image": directory / f"{stem}.png",
        "semantic": directory / f"{stem}_sem.png",
        "instance": directory / f"{stem}_inst.png",
        "depth": directory / f"{stem}_depth.bin",
        "meta": directory / f"{stem}_meta.json",
    }
    Image.fromarray(out.image, mode="RGB").save(paths["image"])
    Image.fromarray(out.semantic_mask, mode="L").save(paths["semantic"])
    Image.fromarray(out.instance_mask.astype(np.uint16)).save(paths["instance"])
    paths["depth"].write_bytes(
        np.ascontiguousarray(out.depth_map, dtype="<f4").tobytes())
    meta = {"width": w, "height": h, "depth_dtype": "<f4"}
    if scene is not None:
        meta["scene_hash"] = scene_hash(scene)
        meta["config_hash"] = config_hash(scene.config)
    paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return paths


def read_outputs(directory, stem: str) -> RenderOutput:
    directory = Path(directory)
    image = np.asarray(Image.open(directory / f"{stem}.png").convert("RGB"))
    semantic = np.asarray(Image.open(directory / f"{stem}_sem.png")).astype(np.uint8)
    instance = np.asarray(
        Image.open(directory / f"{stem}_inst.png")).astype(np.uint16)
    h, w = semantic.shape
    depth = np.frombuffer((directory / f"{stem}_depth.bin").read_bytes(),
                          dtype="<f4").reshape(h, w).astype(np.float32)
    return RenderOutput(image, semantic, instance, depth)


def check_mask_consistency(scene: SceneGraph, out: RenderOutput) -> list[str]:
    """Violations of the mask/scene invariants (empty list = consistent)."""
    problems = []
    ids = {c.id for c in scene.cells}
    class_of = {c.id: int(c.cell_class) for c in scene.cells}
    mask_ids = np.unique(out.instance_mask)
    mask_ids = mask_ids[mask_ids != 0]
    for mid in mask_ids:
        if int(mid) not in ids:
            problems.append(f"instance id {mid} not in scene")
        elif class_of[int(mid)] > 5:
            problems.append(f"distractor id {mid} appears in instance mask")
    fg = out.instance_mask != 0
    if not np.array_equal(out.semantic_mask[fg],
                          np.vectorize(lambda i: class_of.get(int(i), 0),
                                       otypes=[np.uint8])(out.instance_mask[fg])
                          if fg.any() else out.semantic_mask[fg]):
        problems.append("semantic/instance class mismatch on foreground")
    if np.any(out.semantic_mask[~fg] != 0):
        problems.append("semantic foreground without instance id")
    if np.any(out.semantic_mask > 5):
        problems.append("semantic label above 5")
    shapes = {out.image.shape[:2], out.semantic_mask.shape,
              out.instance_mask.shape, out.depth_map.shape}
    if len(shapes) != 1:
        problems.append("plane dimensions differ")
    return problems

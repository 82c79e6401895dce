"""Ground-truth world building: crypt macrostructure and cell placement.

The world is a slab of colonic mucosa: rod-shaped crypts on a jittered
hexagonal lattice, epithelial nuclei packed on rings inside each crypt wall,
stromal immune/support cells scattered between crypts, plus unlabeled
distractor objects (goblet vacuoles, blood cells).  Everything is a pure
function of (config, seed), so a scene can be reassembled bit-for-bit from its
serialized form.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

import numpy as np

from .config import (
    STROMAL_CLASSES,
    NUCLEUS_CLASSES,
    CellClass,
    SceneConfig,
    config_from_dict,
    config_to_dict,
    derive_seed,
    make_rng,
    validate,
)
from .geometry import ImplicitShape

MAX_INSTANCES = 65534  # 16-bit ids, 0 reserved for background


class SceneSizeError(ValueError):
    """Raised when a scene would exceed the 16-bit instance id space."""


# ---------------------------------------------------------------------------
# Domain types (plain floats/tuples: comparable, JSON-serializable)
# ---------------------------------------------------------------------------

@dataclass
class Crypt:
    center: tuple[float, float]
    radius: float
    wall_thickness: float
    axis_tilt: tuple[float, float, float]
    bend_linear: tuple[float, float]  # um lateral offset per um of z
    bend_quad: tuple[float, float]  # um lateral offset per um^2 of z
    z_ref: float  # z at which the axis passes through `center`


@dataclass
class Tear:
    vertices: tuple  # ((x, y), ...) closed polygon, implicit last edge


@dataclass
class CryptLayout:
    crypts: list[Crypt]
    tears: list[Tear]


@dataclass
class ShapeSample:
    """One sampled nucleus/body geometry (see geometry.ImplicitShape)."""

    kind: str
    semi_axes: tuple[float, float, float]
    lobe_separation: float = 0.0
    noise_amplitude: float = 0.0
    noise_seed: int = 0
    bend: float = 0.0
    cytoplasm_scale: float = 1.0


@dataclass
class CellInstance:
    id: int
    cell_class: CellClass
    nucleus_center: tuple[float, float, float]
    orientation: tuple[float, float, float, float]  # unit quaternion (w,x,y,z)
    shape: ShapeSample
    stain_jitter: float = 1.0


@dataclass
class StainBlob:
    """Diffuse stroma-only red-stain disc added by the blood-stain slider."""

    center: tuple[float, float]
    radius: float
    strength: float


@dataclass
class SceneGraph:
    config: SceneConfig
    layout: CryptLayout
    cells: list[CellInstance]
    seeds: dict[str, int]
    stain_blobs: list[StainBlob] = field(default_factory=list)


# ---------------------------------------------------------------------------
# Crypt layout
# ---------------------------------------------------------------------------

def crypt_axis_xy(crypt: Crypt, z) -> np.ndarray:
    """xy of the (tilted, bent) crypt axis at height z; supports array z."""
    dz = np.asarray(z, dtype=np.float64) - crypt.z_ref
    off = (np.multiply.outer(dz, np.asarray(crypt.bend_linear))
           + np.multiply.outer(dz * dz, np.asarray(crypt.bend_quad)))
    return np.asarray(crypt.center) + off


def build_crypt_layout(config: SceneConfig, seed: int) -> CryptLayout:
    """Jittered hexagonal crypt lattice plus tear polygons.

    `crypt_radius_jitter` jitters both per-crypt radius and center; with zero
    jitter and zero bending the centers sit exactly on the lattice.  A safety
    pass shrinks (or drops) crypts so interiors never overlap.
    """
    rng = make_rng(seed)
    s = config.crypt_spacing
    extent = config.world_extent
    jit = config.crypt_radius_jitter
    wall = config.crypt_wall_thickness
    z_mid = config.slab_z0 + config.slab_thickness / 2.0
    half_t = config.slab_thickness / 2.0

    margin = config.crypt_radius_mean + jit + config.crypt_bending_amplitude + 2.0
    row_dy = s * np.sqrt(3.0) / 2.0
    crypts: list[Crypt] = []
    j_min = int(np.ceil(-margin / row_dy))
    j_max = int(np.floor((extent + margin) / row_dy))
    for j in range(j_min, j_max + 1):
        y = j * row_dy
        offset = (s / 2.0) if (j % 2) else 0.0
        k_min = int(np.ceil((-margin - offset) / s))
        k_max = int(np.floor((extent + margin - offset) / s))
        for k in range(k_min, k_max + 1):
            x = offset + k * s
            ang = rng.uniform(0.0, 2.0 * np.pi)
            rad_off = rng.uniform(0.0, jit)
            cx = x + rad_off * np.cos(ang)
            cy = y + rad_off * np.sin(ang)
            radius = config.crypt_radius_mean + rng.uniform(-jit, jit)
            radius = max(radius, wall * 1.01)
            theta = min(abs(rng.normal(0.0, 0.06)), 0.17)
            phi = rng.uniform(0.0, 2.0 * np.pi)
            tilt = (np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi),
                    np.cos(theta))
            b1 = (tilt[0] / tilt[2], tilt[1] / tilt[2])
            bend_mag = rng.uniform(0.0, config.crypt_bending_amplitude)
            bend_phi = rng.uniform(0.0, 2.0 * np.pi)
            denom = half_t * half_t if half_t > 0 else 1.0
            b2 = (bend_mag * np.cos(bend_phi) / denom,
                  bend_mag * np.sin(bend_phi) / denom)
            crypts.append(Crypt((float(cx), float(cy)), float(radius), wall,
                                tilt, b1, b2, z_mid))

    crypts = _resolve_crypt_overlaps(crypts, wall)
    tears = _sample_tears(rng, config)
    return CryptLayout(crypts, tears)


def _resolve_crypt_overlaps(crypts: list[Crypt], wall: float) -> list[Crypt]:
    kept: list[Crypt] = []
    for crypt in crypts:
        ok = True
        for other in kept:
            d = float(np.hypot(crypt.center[0] - other.center[0],
                               crypt.center[1] - other.center[1]))
            if d < crypt.radius + other.radius:
                scale = 0.98 * d / (crypt.radius + other.radius)
                new_r = crypt.radius * scale
                other_r = other.radius * scale
                if new_r <= wall or other_r <= wall:
                    ok = False  # cannot shrink without breaking radius > wall
                    break
                crypt.radius = new_r
                other.radius = other_r
        if ok:
            kept.append(crypt)
    return kept


def _sample_tears(rng: np.random.Generator, config: SceneConfig) -> list[Tear]:
    n = int(round(config.tearing_degree * 4.0))
    tears = []
    for _ in range(n):
        cx, cy = rng.uniform(0.0, config.world_extent, 2)
        r_mean = config.world_extent * rng.uniform(0.05, 0.09)
        k = int(rng.integers(4, 8))
        angles = np.sort(rng.uniform(0.0, 2.0 * np.pi, k))
        radii = r_mean * rng.uniform(0.6, 1.4, k)
        verts = tuple((float(cx + r * np.cos(a)), float(cy + r * np.sin(a)))
                      for a, r in zip(angles, radii))
        tears.append(Tear(verts))
    return tears


def points_in_polygon(pts: np.ndarray, vertices) -> np.ndarray:
    """Even-odd-rule point-in-polygon test, vectorized over pts (N, 2)."""
    pts = np.asarray(pts, dtype=np.float64)
    verts = np.asarray(vertices, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    k = len(verts)
    for i in range(k):
        x0, y0 = verts[i]
        x1, y1 = verts[(i + 1) % k]
        crosses = (y0 > y) != (y1 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < x_at)
    return inside


def in_stroma(layout: CryptLayout, pts: np.ndarray) -> np.ndarray:
    """True where xy points lie in the stroma: outside every crypt disc and
    outside every tear polygon."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    ok = np.ones(len(pts), dtype=bool)
    for crypt in layout.crypts:
        d2 = ((pts[:, 0] - crypt.center[0]) ** 2
              + (pts[:, 1] - crypt.center[1]) ** 2)
        ok &= d2 >= crypt.radius * crypt.radius
    for tear in layout.tears:
        ok &= ~points_in_polygon(pts, tear.vertices)
    return ok


# ---------------------------------------------------------------------------
# Quaternion helpers
# ---------------------------------------------------------------------------

def _quat_multiply(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def _random_quat(rng: np.random.Generator):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return tuple(float(v) for v in q)


def _small_tilt_quat(rng: np.random.Generator, sigma: float):
    psi = rng.uniform(0.0, 2.0 * np.pi)
    eps = rng.normal(0.0, sigma)
    return (float(np.cos(eps / 2.0)),
            float(np.sin(eps / 2.0) * np.cos(psi)),
            float(np.sin(eps / 2.0) * np.sin(psi)), 0.0)


def _yaw_quat(theta: float):
    return (float(np.cos(theta / 2.0)), 0.0, 0.0, float(np.sin(theta / 2.0)))


def _draw_noise_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, 2**64, dtype=np.uint64))


# ---------------------------------------------------------------------------
# Epithelial ring packing
# ---------------------------------------------------------------------------

def _pack_ring_diameters(rng, circumference, mean, sd):
    """Greedy 1D packing: draw diameters until the ring arc is filled."""
    diams = []
    total = 0.0
    while total < circumference:
        d = float(np.clip(rng.normal(mean, sd), 0.55 * mean, 1.6 * mean))
        diams.append(d)
        total += d
        if len(diams) > 10000:  # degenerate config guard
            break
    return np.asarray(diams), total


def _relax_ring(angles, weights, iterations=4):
    """Weighted Lloyd relaxation on the circle: gaps equalize proportionally
    to per-cell target weights.  Returns (angles, voronoi cell widths)."""
    theta = np.sort(np.mod(angles, 2.0 * np.pi))
    w = np.asarray(weights, dtype=np.float64)
    for _ in range(iterations):
        nxt = np.roll(theta, -1)
        gap = np.mod(nxt - theta, 2.0 * np.pi)
        frac = w / (w + np.roll(w, -1))
        bound = theta + gap * frac  # boundary between i and i+1
        prev_bound = np.roll(bound, 1)
        cell = np.mod(bound - prev_bound, 2.0 * np.pi)
        theta = np.mod(prev_bound + cell / 2.0, 2.0 * np.pi)
        order = np.argsort(theta)
        theta, w = theta[order], w[order]
    nxt = np.roll(theta, -1)
    gap = np.mod(nxt - theta, 2.0 * np.pi)
    frac = w / (w + np.roll(w, -1))
    bound = theta + gap * frac
    cell = np.mod(bound - np.roll(bound, 1), 2.0 * np.pi)
    return theta, cell


def place_epithelial_cells(layout: CryptLayout, config: SceneConfig,
                           seed: int) -> list[CellInstance]:
    """Pack radially oriented epithelial nuclei on each crypt-wall ring.

    Ring seed points are drawn by greedy diameter packing, relaxed so angular
    gaps equalize, and each nucleus' tangential extent is its 1D Voronoi cell
    scaled into [0.6, 1.0] of the gap so boundaries stay visible.  A
    `goblet_ratio` fraction of positions become goblet vacuoles instead.
    """
    rng = make_rng(seed)
    sp = config.shape_params["epithelial"]
    gsp = config.shape_params["goblet"]
    sigma = config.stain.stain_noise_sigma
    wall = config.crypt_wall_thickness

    band_height = sp.diameter_mean * 1.4
    n_bands = max(1, int(config.slab_thickness // band_height))
    band_step = config.slab_thickness / n_bands
    band_centers = [config.slab_z0 + (k + 0.5) * band_step for k in range(n_bands)]

    cells: list[CellInstance] = []
    for crypt in layout.crypts:
        ring_r = crypt.radius - wall / 2.0
        if ring_r <= 1.0:
            continue
        circumference = 2.0 * np.pi * ring_r
        for band_z in band_centers:
            diams, _ = _pack_ring_diameters(rng, circumference,
                                            sp.diameter_mean, sp.diameter_sd)
            if len(diams) < 3:
                continue
            arc = np.cumsum(diams) - diams / 2.0
            angles = arc * (2.0 * np.pi / np.sum(diams)) + rng.uniform(0, 2 * np.pi)
            order = np.argsort(np.mod(angles, 2 * np.pi))
            angles, diams = np.mod(angles, 2 * np.pi)[order], diams[order]
            angles, gaps = _relax_ring(angles, diams)

            for theta, d_i, gap in zip(angles, diams, gaps):
                z = float(band_z + rng.normal(0.0, 0.06 * band_step))
                axis = crypt_axis_xy(crypt, z)
                cx = float(axis[0] + ring_r * np.cos(theta))
                cy = float(axis[1] + ring_r * np.sin(theta))
                is_goblet = rng.random() < config.goblet_ratio
                jitter = float(np.exp(rng.normal(0.0, sigma)))
                if is_goblet:
                    dv = float(np.clip(rng.normal(gsp.diameter_mean, gsp.diameter_sd),
                                       4.0, max(4.0, wall)))
                    shape = ShapeSample(
                        kind="vacuole",
                        semi_axes=(dv / 2.0, dv / 2.0, dv / 2.0),
                        noise_amplitude=gsp.shape_noise,
                        noise_seed=_draw_noise_seed(rng),
                        cytoplasm_scale=1.0,
                    )
                    quat = _yaw_quat(float(theta))
                    cells.append(CellInstance(0, CellClass.GOBLET, (cx, cy, z),
                                              quat, shape, jitter))
                else:
                    factor = float(np.clip(rng.normal(0.82, 0.08), 0.6, 1.0))
                    half_angle = gap * factor / 2.0
                    tangential = max(float(ring_r * np.sin(half_angle)), 0.6)
                    radial = min(d_i / 2.0 * sp.elongation, wall * 0.48)
                    shape = ShapeSample(
                        kind="ellipsoid",
                        semi_axes=(float(radial), float(tangential), d_i / 2.0),
                        noise_amplitude=float(np.clip(
                            sp.shape_noise * rng.uniform(0.75, 1.25), 0.0, 1.0)),
                        noise_seed=_draw_noise_seed(rng),
                        bend=float(sp.bending * rng.uniform(0.0, 1.0)),
                        cytoplasm_scale=sp.cytoplasm_scale,
                    )
                    quat = _quat_multiply(_yaw_quat(float(theta)),
                                          _small_tilt_quat(rng, 0.05))
                    cells.append(CellInstance(0, CellClass.EPITHELIAL, (cx, cy, z),
                                              quat, shape, jitter))
    return cells


# ---------------------------------------------------------------------------
# Stromal cells and distractors
# ---------------------------------------------------------------------------

def _sample_stromal_shape(rng, cls: CellClass, config: SceneConfig) -> ShapeSample:
    sp = config.shape_params[cls.key]
    d = float(np.clip(rng.normal(sp.diameter_mean, sp.diameter_sd),
                      0.5 * sp.diameter_mean, 1.6 * sp.diameter_mean))
    amp = float(np.clip(sp.shape_noise * rng.uniform(0.75, 1.25), 0.0, 1.0))
    noise_seed = _draw_noise_seed(rng)
    if cls is CellClass.EOSINOPHIL:
        scale = d / sp.diameter_mean
        return ShapeSample(
            kind="bilobed",
            semi_axes=(0.42 * d, 0.36 * d, 0.36 * d),
            lobe_separation=sp.lobe_separation * scale,
            noise_amplitude=amp, noise_seed=noise_seed,
            cytoplasm_scale=sp.cytoplasm_scale,
        )
    if cls is CellClass.FIBROBLAST:
        return ShapeSample(
            kind="spindle",
            semi_axes=(d / 2.0 * sp.elongation, d / 2.0, d / 2.0),
            noise_amplitude=amp, noise_seed=noise_seed,
            bend=float(sp.bending * rng.uniform(0.2, 1.0)),
            cytoplasm_scale=sp.cytoplasm_scale,
        )
    return ShapeSample(
        kind="ellipsoid",
        semi_axes=(d / 2.0 * sp.elongation, d / 2.0, d / 2.0),
        noise_amplitude=amp, noise_seed=noise_seed,
        cytoplasm_scale=sp.cytoplasm_scale,
    )


def _mean_stromal_diameter(config: SceneConfig) -> float:
    return float(sum(r * config.shape_params[c.key].diameter_mean
                     for r, c in zip(config.class_ratios, STROMAL_CLASSES)))


def place_stromal_cells(layout: CryptLayout, config: SceneConfig,
                        seed: int) -> list[CellInstance]:
    """Scatter stromal-class cells uniformly over the stroma.

    Candidates arrive as a Poisson process over the whole world and are
    thinned to the stroma, so the kept count is Poisson with mean
    density * stroma_area.  Dart throwing (30 retries, then accept) enforces a
    soft minimum separation of half the mean stromal diameter.
    """
    rng = make_rng(seed)
    extent = config.world_extent
    lam = config.stromal_density / 1e6 * extent * extent
    n_candidates = int(rng.poisson(lam))
    min_sep = 0.5 * _mean_stromal_diameter(config)
    sigma = config.stain.stain_noise_sigma

    accepted: list[np.ndarray] = []
    cells: list[CellInstance] = []
    grid: dict[tuple[int, int], list[int]] = {}
    cell_size = max(min_sep, 1e-6)

    def neighbors_clear(p) -> bool:
        gx, gy = int(p[0] // cell_size), int(p[1] // cell_size)
        for ix in range(gx - 1, gx + 2):
            for iy in range(gy - 1, gy + 2):
                for idx in grid.get((ix, iy), ()):
                    if np.hypot(*(accepted[idx] - p)) < min_sep:
                        return False
        return True

    for _ in range(n_candidates):
        p = rng.uniform(0.0, extent, 2)
        if not in_stroma(layout, p)[0]:
            continue  # thinning: candidate falls outside the stroma
        for _retry in range(30):
            if neighbors_clear(p):
                break
            q = rng.uniform(0.0, extent, 2)
            if in_stroma(layout, q)[0]:
                p = q
        accepted.append(p)
        grid.setdefault((int(p[0] // cell_size), int(p[1] // cell_size)),
                        []).append(len(accepted) - 1)

        cls = STROMAL_CLASSES[int(rng.choice(len(STROMAL_CLASSES),
                                             p=config.class_ratios))]
        shape = _sample_stromal_shape(rng, cls, config)
        zpad = max(shape.semi_axes) / 2.0
        z = float(rng.uniform(config.slab_z0 - zpad,
                              config.slab_z0 + config.slab_thickness + zpad))
        quat = _random_quat(rng)
        jitter = float(np.exp(rng.normal(0.0, sigma)))
        cells.append(CellInstance(0, cls, (float(p[0]), float(p[1]), z),
                                  quat, shape, jitter))
    return cells


def place_distractors(layout: CryptLayout, config: SceneConfig, seed: int,
                      blood_count: int) -> list[CellInstance]:
    """Place exactly `blood_count` anucleate blood-cell discs in the stroma."""
    rng = make_rng(seed)
    sp = config.shape_params["blood"]
    sigma = config.stain.stain_noise_sigma
    extent = config.world_extent
    cells: list[CellInstance] = []
    for _ in range(int(blood_count)):
        p = rng.uniform(0.0, extent, 2)
        for _retry in range(200):
            if in_stroma(layout, p)[0]:
                break
            p = rng.uniform(0.0, extent, 2)
        d = float(np.clip(rng.normal(sp.diameter_mean, sp.diameter_sd),
                          0.5 * sp.diameter_mean, 1.6 * sp.diameter_mean))
        r = d / 2.0
        shape = ShapeSample(
            kind="disc",
            semi_axes=(r, r, 0.35 * r),
            noise_amplitude=float(np.clip(sp.shape_noise, 0.0, 1.0)),
            noise_seed=_draw_noise_seed(rng),
            cytoplasm_scale=1.0,
        )
        quat = _quat_multiply(_yaw_quat(rng.uniform(0, 2 * np.pi)),
                              _small_tilt_quat(rng, 0.25))
        z = float(rng.uniform(config.slab_z0 + 0.35 * r,
                              config.slab_z0 + config.slab_thickness - 0.35 * r))
        jitter = float(np.exp(rng.normal(0.0, sigma)))
        cells.append(CellInstance(0, CellClass.BLOOD,
                                  (float(p[0]), float(p[1]), z), quat, shape,
                                  jitter))
    return cells


# ---------------------------------------------------------------------------
# Scene assembly
# ---------------------------------------------------------------------------

def assemble_scene(config: SceneConfig) -> SceneGraph:
    """Compose layout + placements into a SceneGraph; pure in the config."""
    validate(config)
    ms = config.master_seed
    seeds = {
        "layout": derive_seed(ms, "layout", 0),
        "epithelial": derive_seed(ms, "epithelial", 0),
        "stromal": derive_seed(ms, "stromal", 0),
        "blood": derive_seed(ms, "blood", 0),
    }
    layout = build_crypt_layout(config, seeds["layout"])
    cells = (place_epithelial_cells(layout, config, seeds["epithelial"])
             + place_stromal_cells(layout, config, seeds["stromal"])
             + place_distractors(layout, config, seeds["blood"],
                                 config.blood_cell_baseline))
    if len(cells) > MAX_INSTANCES:
        raise SceneSizeError(
            f"{len(cells)} instances exceed the 16-bit id space ({MAX_INSTANCES})")
    for i, cell in enumerate(cells):
        cell.id = i + 1
    return SceneGraph(config=config, layout=layout, cells=cells, seeds=seeds)


def nucleus_implicit(cell: CellInstance) -> ImplicitShape | None:
    """The stained nucleus volume; None for anucleate distractors."""
    if cell.cell_class not in NUCLEUS_CLASSES:
        return None
    s = cell.shape
    return ImplicitShape(
        kind=s.kind, center=np.array(cell.nucleus_center),
        quat=np.array(cell.orientation), semi_axes=np.array(s.semi_axes),
        lobe_separation=s.lobe_separation, noise_amplitude=s.noise_amplitude,
        noise_seed=s.noise_seed, bend=s.bend)


def body_implicit(cell: CellInstance) -> ImplicitShape:
    """The cell body: cytoplasm envelope for nucleated cells, the vacuole for
    goblets, the disc for blood cells."""
    s = cell.shape
    if cell.cell_class in NUCLEUS_CLASSES:
        scale = max(s.cytoplasm_scale, 1.0)
        return ImplicitShape(
            kind=s.kind, center=np.array(cell.nucleus_center),
            quat=np.array(cell.orientation),
            semi_axes=np.array(s.semi_axes) * scale,
            lobe_separation=s.lobe_separation * scale,
            noise_amplitude=s.noise_amplitude * 0.7,
            noise_seed=derive_seed(s.noise_seed, "body", 0), bend=s.bend)
    return ImplicitShape(
        kind=s.kind, center=np.array(cell.nucleus_center),
        quat=np.array(cell.orientation), semi_axes=np.array(s.semi_axes),
        lobe_separation=s.lobe_separation, noise_amplitude=s.noise_amplitude,
        noise_seed=s.noise_seed, bend=s.bend)


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

def scene_to_dict(scene: SceneGraph) -> dict:
    return {
        "config": config_to_dict(scene.config),
        "layout": {
            "crypts": [_dc_dict(c) for c in scene.layout.crypts],
            "tears": [{"vertices": [list(v) for v in t.vertices]}
                      for t in scene.layout.tears],
        },
        "cells": [
            {
                "id": c.id,
                "cell_class": c.cell_class.key,
                "nucleus_center": list(c.nucleus_center),
                "orientation": list(c.orientation),
                "shape": _dc_dict(c.shape),
                "stain_jitter": c.stain_jitter,
            }
            for c in scene.cells
        ],
        "seeds": dict(scene.seeds),
        "stain_blobs": [_dc_dict(b) for b in scene.stain_blobs],
    }


def _dc_dict(obj) -> dict:
    out = {}
    for f in fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, tuple):
            v = [list(x) if isinstance(x, tuple) else x for x in v]
        out[f.name] = v
    return out


def scene_to_json(scene: SceneGraph) -> str:
    return json.dumps(scene_to_dict(scene), indent=2, sort_keys=True) + "\n"


def scene_from_dict(data: dict) -> SceneGraph:
    cfg = config_from_dict(data["config"])
    crypts = [Crypt(center=tuple(c["center"]), radius=c["radius"],
                    wall_thickness=c["wall_thickness"],
                    axis_tilt=tuple(c["axis_tilt"]),
                    bend_linear=tuple(c["bend_linear"]),
                    bend_quad=tuple(c["bend_quad"]), z_ref=c["z_ref"])
              for c in data["layout"]["crypts"]]
    tears = [Tear(tuple(tuple(v) for v in t["vertices"]))
             for t in data["layout"]["tears"]]
    cells = [CellInstance(
        id=c["id"],
        cell_class=CellClass[c["cell_class"].upper()],
        nucleus_center=tuple(c["nucleus_center"]),
        orientation=tuple(c["orientation"]),
        shape=ShapeSample(**{k: tuple(v) if isinstance(v, list) else v
                             for k, v in c["shape"].items()}),
        stain_jitter=c["stain_jitter"],
    ) for c in data["cells"]]
    blobs = [StainBlob(center=tuple(b["center"]), radius=b["radius"],
                       strength=b["strength"])
             for b in data.get("stain_blobs", [])]
    return SceneGraph(config=cfg, layout=CryptLayout(crypts, tears),
                      cells=cells, seeds={k: int(v)
                                          for k, v in data["seeds"].items()},
                      stain_blobs=blobs)


def scene_from_json(text: str) -> SceneGraph:
    return scene_from_dict(json.loads(text))


def scene_hash(scene: SceneGraph) -> str:
    return hashlib.sha256(scene_to_json(scene).encode("utf-8")).hexdigest()

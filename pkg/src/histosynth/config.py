"""Scene configuration: every controllable knob of the generation pipeline.

A validated :class:`SceneConfig` fully determines one scene.  The JSON form is
canonical (sorted keys, stable float repr), so serialize -> parse -> serialize
is byte-identical and a config file can stand in for the scene itself.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, fields, is_dataclass
from enum import IntEnum

import numpy as np

_MASK64 = 0xFFFFFFFFFFFFFFFF


class CellClass(IntEnum):
    """Cell classes.  Values 1..5 double as semantic mask labels; goblet and
    blood cells are rendered distractors that never enter the masks."""

    EPITHELIAL = 1
    PLASMA = 2
    LYMPHOCYTE = 3
    EOSINOPHIL = 4
    FIBROBLAST = 5
    GOBLET = 6
    BLOOD = 7

    @property
    def key(self) -> str:
        return self.name.lower()


NUCLEUS_CLASSES = (
    CellClass.EPITHELIAL,
    CellClass.PLASMA,
    CellClass.LYMPHOCYTE,
    CellClass.EOSINOPHIL,
    CellClass.FIBROBLAST,
)
STROMAL_CLASSES = (
    CellClass.PLASMA,
    CellClass.LYMPHOCYTE,
    CellClass.EOSINOPHIL,
    CellClass.FIBROBLAST,
)
DISTRACTOR_CLASSES = (CellClass.GOBLET, CellClass.BLOOD)

#: Semantic label names indexed by mask value (0 = background).
SEMANTIC_CLASS_NAMES = (
    "background",
    "epithelial",
    "plasma",
    "lymphocyte",
    "eosinophil",
    "fibroblast",
)


class ConfigError(ValueError):
    """A config invariant is violated; message carries the field path."""

    def __init__(self, field_path: str, detail: str):
        self.field_path = field_path
        super().__init__(f"{field_path}: {detail}")


@dataclass
class ShapeParams:
    """Per-class nucleus geometry knobs (micrometers / dimensionless)."""

    diameter_mean: float
    diameter_sd: float
    elongation: float = 1.0
    bending: float = 0.0
    shape_noise: float = 0.0
    lobe_separation: float = 0.0  # eosinophil only
    cytoplasm_scale: float = 1.5


@dataclass
class StainConfig:
    """Digital H&E staining: per-volume RGB absorbance hues and intensities.

    Hues are unit-range absorbance triples (fraction of light absorbed per
    reference path length per channel); a hematoxylin-like hue absorbs green
    and red more than blue, which is what makes nuclei look purple.
    """

    nucleus_hue: dict[str, tuple[float, float, float]] = field(
        default_factory=lambda: {
            "epithelial": (0.55, 0.75, 0.30),
            "plasma": (0.60, 0.78, 0.32),
            "lymphocyte": (0.65, 0.85, 0.30),
            "eosinophil": (0.55, 0.75, 0.35),
            "fibroblast": (0.50, 0.70, 0.30),
        }
    )
    nucleus_intensity: float = 0.9
    cytoplasm_hue: dict[str, tuple[float, float, float]] = field(
        default_factory=lambda: {
            "epithelial": (0.05, 0.45, 0.25),
            "plasma": (0.06, 0.48, 0.26),
            "lymphocyte": (0.05, 0.40, 0.22),
            "eosinophil": (0.08, 0.60, 0.45),
            "fibroblast": (0.05, 0.42, 0.24),
            "goblet": (0.0, 0.0, 0.0),
            "blood": (0.05, 0.70, 0.60),
        }
    )
    cytoplasm_intensity: dict[str, float] = field(
        default_factory=lambda: {
            "epithelial": 0.45,
            "plasma": 0.50,
            "lymphocyte": 0.30,
            "eosinophil": 0.80,
            "fibroblast": 0.35,
            "goblet": 0.0,
            "blood": 0.90,
        }
    )
    tissue_hue: tuple[float, float, float] = (0.04, 0.30, 0.18)
    tissue_intensity: float = 0.25
    stain_noise_sigma: float = 0.08
    background_light: tuple[float, float, float] = (1.0, 1.0, 1.0)


def _default_shape_params() -> dict[str, ShapeParams]:
    return {
        "epithelial": ShapeParams(7.5, 0.8, elongation=1.9, bending=0.10,
                                  shape_noise=0.12, cytoplasm_scale=1.35),
        "plasma": ShapeParams(6.5, 0.7, elongation=1.25, shape_noise=0.18,
                              cytoplasm_scale=1.9),
        "lymphocyte": ShapeParams(5.0, 0.5, elongation=1.1, shape_noise=0.08,
                                  cytoplasm_scale=1.25),
        "eosinophil": ShapeParams(6.5, 0.6, elongation=1.0, shape_noise=0.12,
                                  lobe_separation=3.5, cytoplasm_scale=2.0),
        "fibroblast": ShapeParams(3.6, 0.5, elongation=3.8, bending=0.35,
                                  shape_noise=0.18, cytoplasm_scale=1.6),
        "goblet": ShapeParams(9.0, 1.5, shape_noise=0.15, cytoplasm_scale=1.0),
        "blood": ShapeParams(6.0, 0.6, shape_noise=0.08, cytoplasm_scale=1.0),
    }


@dataclass
class SceneConfig:
    """The complete slider set controlling one scene.

    All lengths are micrometers; the image maps ``world_extent`` micrometers
    onto each image side.
    """

    image_width: int = 512
    image_height: int = 512
    world_extent: float = 256.0
    slab_z0: float = 0.0
    slab_thickness: float = 12.0
    focal_depth: float = 6.0
    blur_strength: float = 0.18  # sigma in um per um of defocus
    crypt_spacing: float = 105.0
    crypt_radius_mean: float = 34.0
    crypt_radius_jitter: float = 4.0
    crypt_wall_thickness: float = 11.0
    crypt_bending_amplitude: float = 4.0
    tearing_degree: float = 0.0
    shape_params: dict[str, ShapeParams] = field(default_factory=_default_shape_params)
    class_ratios: tuple[float, float, float, float] = (0.32, 0.40, 0.10, 0.18)
    stromal_density: float = 2200.0  # cells per mm^2
    goblet_ratio: float = 0.22
    stain: StainConfig = field(default_factory=StainConfig)
    blood_cell_baseline: int = 6
    master_seed: int = 0


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _check(cond: bool, field_path: str, detail: str) -> None:
    if not cond:
        raise ConfigError(field_path, detail)


def _check_unit(value, field_path: str) -> None:
    _check(0.0 <= value <= 1.0, field_path, f"value {value!r} outside [0, 1]")


def _check_rgb(hue, field_path: str) -> None:
    _check(len(hue) == 3, field_path, f"expected 3 channels, got {len(hue)}")
    for i, v in enumerate(hue):
        _check_unit(v, f"{field_path}[{i}]")


def validate(config: SceneConfig) -> SceneConfig:
    """Check every invariant; return the config unchanged if all hold.

    Raises :class:`ConfigError` naming the first violated field.  Total:
    malformed values surface as a ConfigError, never as a crash.
    """
    try:
        _check(isinstance(config.image_width, int) and config.image_width > 0,
               "image_width", f"must be a positive integer, got {config.image_width!r}")
        _check(isinstance(config.image_height, int) and config.image_height > 0,
               "image_height", f"must be a positive integer, got {config.image_height!r}")
        _check(config.world_extent > 0, "world_extent",
               f"must be > 0, got {config.world_extent!r}")
        _check(config.slab_thickness > 0, "slab_thickness",
               f"must be > 0, got {config.slab_thickness!r}")
        _check(config.blur_strength >= 0, "blur_strength",
               f"must be >= 0, got {config.blur_strength!r}")
        _check(config.crypt_spacing > 0, "crypt_spacing",
               f"must be > 0, got {config.crypt_spacing!r}")
        _check(config.crypt_radius_mean > 0, "crypt_radius_mean",
               f"must be > 0, got {config.crypt_radius_mean!r}")
        _check(config.crypt_radius_jitter >= 0, "crypt_radius_jitter",
               f"must be >= 0, got {config.crypt_radius_jitter!r}")
        _check(config.crypt_wall_thickness > 0, "crypt_wall_thickness",
               f"must be > 0, got {config.crypt_wall_thickness!r}")
        _check(config.crypt_wall_thickness < config.crypt_radius_mean,
               "crypt_wall_thickness",
               f"must be < crypt_radius_mean ({config.crypt_radius_mean!r}), "
               f"got {config.crypt_wall_thickness!r}")
        _check(config.crypt_bending_amplitude >= 0, "crypt_bending_amplitude",
               f"must be >= 0, got {config.crypt_bending_amplitude!r}")
        _check_unit(config.tearing_degree, "tearing_degree")
        _check_unit(config.goblet_ratio, "goblet_ratio")

        _check(len(config.class_ratios) == len(STROMAL_CLASSES), "class_ratios",
               f"expected {len(STROMAL_CLASSES)} entries, got {len(config.class_ratios)}")
        for i, r in enumerate(config.class_ratios):
            _check(r >= 0, f"class_ratios[{i}]", f"must be >= 0, got {r!r}")
        total = float(sum(config.class_ratios))
        _check(abs(total - 1.0) <= 1e-9, "class_ratios", f"sum = {total:.6g}")

        _check(config.stromal_density >= 0, "stromal_density",
               f"must be >= 0, got {config.stromal_density!r}")
        _check(isinstance(config.blood_cell_baseline, int)
               and config.blood_cell_baseline >= 0,
               "blood_cell_baseline",
               f"must be a non-negative integer, got {config.blood_cell_baseline!r}")
        _check(isinstance(config.master_seed, int)
               and 0 <= config.master_seed <= _MASK64,
               "master_seed", f"must be a u64, got {config.master_seed!r}")

        for cls in CellClass:
            key = cls.key
            _check(key in config.shape_params, f"shape_params.{key}", "missing class")
            sp = config.shape_params[key]
            base = f"shape_params.{key}"
            _check(sp.diameter_mean > 0, f"{base}.diameter_mean",
                   f"must be > 0, got {sp.diameter_mean!r}")
            _check(sp.diameter_sd >= 0, f"{base}.diameter_sd",
                   f"must be >= 0, got {sp.diameter_sd!r}")
            _check(sp.elongation >= 1, f"{base}.elongation",
                   f"must be >= 1, got {sp.elongation!r}")
            _check_unit(sp.bending, f"{base}.bending")
            _check_unit(sp.shape_noise, f"{base}.shape_noise")
            _check(sp.lobe_separation >= 0, f"{base}.lobe_separation",
                   f"must be >= 0, got {sp.lobe_separation!r}")
            _check(sp.cytoplasm_scale >= 1, f"{base}.cytoplasm_scale",
                   f"must be >= 1, got {sp.cytoplasm_scale!r}")

        st = config.stain
        for cls in NUCLEUS_CLASSES:
            _check(cls.key in st.nucleus_hue, f"stain.nucleus_hue.{cls.key}",
                   "missing class")
            _check_rgb(st.nucleus_hue[cls.key], f"stain.nucleus_hue.{cls.key}")
        _check_unit(st.nucleus_intensity, "stain.nucleus_intensity")
        for cls in CellClass:
            _check(cls.key in st.cytoplasm_hue, f"stain.cytoplasm_hue.{cls.key}",
                   "missing class")
            _check_rgb(st.cytoplasm_hue[cls.key], f"stain.cytoplasm_hue.{cls.key}")
            _check(cls.key in st.cytoplasm_intensity,
                   f"stain.cytoplasm_intensity.{cls.key}", "missing class")
            _check_unit(st.cytoplasm_intensity[cls.key],
                        f"stain.cytoplasm_intensity.{cls.key}")
        _check_rgb(st.tissue_hue, "stain.tissue_hue")
        _check_unit(st.tissue_intensity, "stain.tissue_intensity")
        _check(st.stain_noise_sigma >= 0, "stain.stain_noise_sigma",
               f"must be >= 0, got {st.stain_noise_sigma!r}")
        _check_rgb(st.background_light, "stain.background_light")
    except ConfigError:
        raise
    except Exception as exc:  # malformed values report instead of crashing
        raise ConfigError("config", f"malformed value: {exc}") from exc
    return config


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------

def derive_seed(master_seed: int, stream_label: str, index: int) -> int:
    """Deterministic, collision-resistant 64-bit sub-seed.

    BLAKE2b-64 over (master_seed LE64, utf-8 label, index LE64); distinct
    labels or indices yield statistically independent streams.
    """
    payload = (
        struct.pack("<Q", master_seed & _MASK64)
        + stream_label.encode("utf-8")
        + struct.pack("<Q", index & _MASK64)
    )
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based Philox generator so streams replicate across platforms."""
    return np.random.Generator(np.random.Philox(key=seed & _MASK64))


# ---------------------------------------------------------------------------
# Serialization (canonical JSON)
# ---------------------------------------------------------------------------

def _to_plain(obj):
    if is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, dict):
        return {k: _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def config_to_dict(config: SceneConfig) -> dict:
    return _to_plain(config)


def config_to_json(config: SceneConfig) -> str:
    """Canonical JSON text: sorted keys, two-space indent, trailing newline."""
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True) + "\n"


def _from_plain(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(path or "config", f"expected object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{path + '.' if path else ''}{unknown[0]}", "unknown key")
    kwargs = {}
    for name, value in data.items():
        sub = f"{path + '.' if path else ''}{name}"
        if name == "shape_params":
            kwargs[name] = {k: _from_plain(ShapeParams, v, f"{sub}.{k}")
                            for k, v in value.items()}
        elif name == "stain":
            kwargs[name] = _from_plain(StainConfig, value, sub)
        elif isinstance(value, list):
            kwargs[name] = tuple(value)
        elif isinstance(value, dict):
            kwargs[name] = {k: tuple(v) if isinstance(v, list) else v
                            for k, v in value.items()}
        else:
            kwargs[name] = value
    return cls(**kwargs)


def config_from_dict(data: dict) -> SceneConfig:
    """Parse a config mapping; unknown keys are rejected with their path."""
    return _from_plain(SceneConfig, data, "")


def config_from_json(text: str) -> SceneConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from exc
    return config_from_dict(data)


def config_hash(config: SceneConfig) -> str:
    return hashlib.sha256(config_to_json(config).encode("utf-8")).hexdigest()

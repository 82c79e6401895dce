"""histosynth: procedural H&E-style histology scenes with exact masks,
controllable uncertainty sliders, and a model-agnostic UQ benchmark harness."""

__version__ = "0.1.0"

from .config import (
    CellClass,
    ConfigError,
    SceneConfig,
    ShapeParams,
    StainConfig,
    SEMANTIC_CLASS_NAMES,
    config_from_json,
    config_to_json,
    derive_seed,
    make_rng,
    validate,
)
from .geometry import ImplicitShape, Slab, contains, footprint, slab_occupancy
from .scenegen import (
    CellInstance,
    CryptLayout,
    SceneGraph,
    assemble_scene,
    build_crypt_layout,
    place_distractors,
    place_epithelial_cells,
    place_stromal_cells,
    scene_from_json,
    scene_to_json,
)
from .render import RenderOutput, render_scene, render_zstack, write_outputs
from .perturb import PerturbationSpec, apply_blood_stain, apply_nuclei_intensity
from .labelnoise import (
    LabelNoiseSpec,
    corrupt_semantic,
    corrupt_shapes,
    derive_fgbg,
)
from .uq import (
    AggregationSpec,
    ProbStack,
    UncMaps,
    aggregate,
    benchmark_run,
    decompose,
    entropy,
    msr_uncertainty,
    predictive_mean,
    read_probstack,
    segmentation_metrics,
    validate_probstack,
    write_probstack,
)
from .mockpred import MockSpec, generate_stack

__all__ = [name for name in dir() if not name.startswith("_")]

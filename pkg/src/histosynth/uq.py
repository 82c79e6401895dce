"""Uncertainty math over model-agnostic softmax stacks.

A ProbStack holds T softmax samples (model realizations) per pixel.  The
predictive distribution is their mean; predictive uncertainty is its entropy;
aleatoric uncertainty is the mean per-sample entropy; epistemic uncertainty is
their difference (the mutual information between prediction and model
realization), clamped at zero against float cancellation.  All entropies are
natural-log (nats).

The on-disk exchange format is ``<stem>_probs.bin`` (little-endian float32,
T,C,H,W row-major) plus a ``<stem>_probs.json`` sidecar; it is the sole
contract between any predictive model and this harness.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.special import xlogy

SIMPLEX_ATOL = 1e-5
AGGREGATION_STRATEGIES = ("image-mean", "patch-max", "threshold-mean")


class ProbStackError(ValueError):
    """A softmax stack violates the simplex contract."""


@dataclass
class ProbStack:
    samples: np.ndarray  # (T, C, H, W) float32
    class_names: tuple[str, ...]
    source_tag: str = "unknown"

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32)
        self.class_names = tuple(self.class_names)

    @property
    def shape(self):
        return self.samples.shape


@dataclass
class UncMaps:
    """Per-pixel predictive/aleatoric/epistemic uncertainty in nats."""

    pu: np.ndarray  # (H, W) float32
    au: np.ndarray
    eu: np.ndarray
    clamp_magnitude: float = 0.0  # largest negative pu-au clipped to zero
    single_sample: bool = False  # T = 1: eu is identically zero by construction


@dataclass
class AggregationSpec:
    strategy: str = "threshold-mean"
    patch_size: int = 64
    stride: int = 32
    quantile_p: float = 0.9

    def __post_init__(self):
        if self.strategy not in AGGREGATION_STRATEGIES:
            raise ValueError(f"unknown aggregation strategy {self.strategy!r}")
        if self.patch_size <= 0 or self.stride <= 0:
            raise ValueError("patch_size and stride must be > 0")
        if not 0.0 <= self.quantile_p < 1.0:
            raise ValueError(f"quantile_p must be in [0, 1), got {self.quantile_p}")

    def label(self) -> str:
        if self.strategy == "image-mean":
            return "image-mean"
        if self.strategy == "patch-max":
            return f"patch-max:{self.patch_size}:{self.stride}"
        return f"threshold-mean:{self.quantile_p:g}"


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------

def validate_probstack(stack: ProbStack, atol: float = SIMPLEX_ATOL) -> ProbStack:
    """Check every (t, :, h, w) vector is a probability simplex."""
    s = stack.samples
    if s.ndim != 4:
        raise ProbStackError(f"expected (T, C, H, W) array, got shape {s.shape}")
    t, c, _, _ = s.shape
    if t < 1 or c < 1:
        raise ProbStackError(f"need T >= 1 and C >= 1, got shape {s.shape}")
    if len(stack.class_names) != c:
        raise ProbStackError(
            f"{len(stack.class_names)} class names for {c} channels")
    if np.any(s < 0):
        t_i, c_i, h_i, w_i = np.argwhere(s < 0)[0]
        raise ProbStackError(
            f"negative probability at (t={t_i}, c={c_i}, h={h_i}, w={w_i})")
    sums = s.sum(axis=1, dtype=np.float64)
    bad = np.abs(sums - 1.0) > atol
    if bad.any():
        t_i, h_i, w_i = np.argwhere(bad)[0]
        raise ProbStackError(
            f"probabilities sum to {sums[t_i, h_i, w_i]:.6f} at "
            f"(t={t_i}, h={h_i}, w={w_i})")
    return stack


def predictive_mean(stack: ProbStack) -> np.ndarray:
    """Arithmetic mean over the T samples; output (C, H, W) float64."""
    validate_probstack(stack)
    return stack.samples.mean(axis=0, dtype=np.float64)


def entropy(prob: np.ndarray, axis: int = 0) -> np.ndarray:
    """Shannon entropy in nats along the class axis, with 0*ln(0) := 0."""
    p = np.asarray(prob, dtype=np.float64)
    return -xlogy(p, p).sum(axis=axis)


def decompose(stack: ProbStack) -> UncMaps:
    """Split predictive entropy into aleatoric and epistemic parts.

    pu = H[mean over samples]; au = mean over samples of H[sample];
    eu = pu - au >= 0 (Jensen), clamped against float cancellation with the
    clamp magnitude recorded.  T = 1 degenerates to eu = 0, au = pu and is
    flagged.
    """
    validate_probstack(stack)
    s = stack.samples.astype(np.float64)
    pu = entropy(s.mean(axis=0), axis=0)
    au = entropy(s, axis=1).mean(axis=0)
    raw_eu = pu - au
    clamp = max(0.0, float(-raw_eu.min())) if raw_eu.size else 0.0
    eu = np.maximum(raw_eu, 0.0)
    return UncMaps(pu.astype(np.float32), au.astype(np.float32),
                   eu.astype(np.float32), clamp_magnitude=clamp,
                   single_sample=stack.samples.shape[0] == 1)


def msr_uncertainty(prob: np.ndarray) -> np.ndarray:
    """1 - max_c p_c: the cheap single-model alternative to entropy."""
    p = np.asarray(prob, dtype=np.float64)
    return 1.0 - p.max(axis=0)


def aggregate(unc: np.ndarray, spec: AggregationSpec) -> float:
    """Collapse an uncertainty map to one scalar per the aggregation spec."""
    unc = np.asarray(unc, dtype=np.float64)
    h, w = unc.shape
    if spec.strategy == "image-mean":
        return float(unc.mean())
    if spec.strategy == "patch-max":
        if spec.patch_size > max(h, w):
            raise ValueError(
                f"patch_size {spec.patch_size} exceeds image side {max(h, w)}")
        best = -np.inf
        for r in range(0, h, spec.stride):
            for c in range(0, w, spec.stride):
                window = unc[r:min(r + spec.patch_size, h),
                             c:min(c + spec.patch_size, w)]
                best = max(best, float(window.mean()))
        return best
    # threshold-mean: nearest-rank quantile, then mean of values >= it
    flat = np.sort(unc.ravel())
    rank = max(1, int(np.ceil(spec.quantile_p * flat.size)))
    q = flat[rank - 1]
    return float(unc[unc >= q].mean())


def segmentation_metrics(pred_classes: np.ndarray, gt: np.ndarray,
                         n_classes: int | None = None) -> dict:
    """Pixel accuracy, per-class F1 and confusion matrix (rows = gt class)."""
    pred = np.asarray(pred_classes)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    n = int(n_classes if n_classes is not None
            else max(int(pred.max()), int(gt.max())) + 1)
    confusion = np.bincount(
        gt.astype(np.int64).ravel() * n + pred.astype(np.int64).ravel(),
        minlength=n * n).reshape(n, n)
    total = confusion.sum()
    tp = np.diag(confusion).astype(np.float64)
    fp = confusion.sum(axis=0) - tp
    fn = confusion.sum(axis=1) - tp
    denom = 2 * tp + fp + fn
    f1 = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    observed = denom > 0
    return {
        "accuracy": float(tp.sum() / total) if total else 0.0,
        "f1": f1,
        "f1_macro": float(f1[observed].mean()) if observed.any() else 0.0,
        "confusion": confusion,
    }


# ---------------------------------------------------------------------------
# ProbStack file format
# ---------------------------------------------------------------------------

def write_probstack(stack: ProbStack, directory, stem: str) -> tuple[Path, Path]:
    validate_probstack(stack)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    t, c, h, w = stack.samples.shape
    bin_path = directory / f"{stem}_probs.bin"
    json_path = directory / f"{stem}_probs.json"
    bin_path.write_bytes(
        np.ascontiguousarray(stack.samples, dtype="<f4").tobytes())
    sidecar = {"T": t, "C": c, "H": h, "W": w,
               "class_names": list(stack.class_names),
               "source_tag": stack.source_tag}
    json_path.write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return bin_path, json_path


def read_probstack(directory, stem: str) -> ProbStack:
    directory = Path(directory)
    sidecar = json.loads((directory / f"{stem}_probs.json").read_text())
    t, c, h, w = (sidecar[k] for k in ("T", "C", "H", "W"))
    raw = (directory / f"{stem}_probs.bin").read_bytes()
    expected = t * c * h * w * 4
    if len(raw) != expected:
        raise ProbStackError(
            f"{stem}_probs.bin holds {len(raw)} bytes, expected {expected}")
    samples = np.frombuffer(raw, dtype="<f4").reshape(t, c, h, w)
    return ProbStack(samples.copy(), tuple(sidecar["class_names"]),
                     sidecar.get("source_tag", "unknown"))


# ---------------------------------------------------------------------------
# Benchmark harness
# ---------------------------------------------------------------------------

@dataclass
class BenchmarkRow:
    noise_level: str
    image_stem: str
    source_tag: str
    accuracy: float
    f1_macro: float
    pu: float
    au: float
    eu: float
    agg_strategy: str


CSV_FIELDS = ("noise_level", "image_stem", "source_tag", "accuracy",
              "f1_macro", "pu", "au", "eu", "agg_strategy")


def _find_stacks(directory: Path) -> dict[str, Path]:
    stems = {}
    for p in sorted(directory.rglob("*_probs.json")):
        stems[p.name[: -len("_probs.json")]] = p.parent
    return stems


def _find_gt(gt_dir: Path, stem: str) -> Path | None:
    direct = gt_dir / f"{stem}_sem.png"
    if direct.exists():
        return direct
    hits = sorted(gt_dir.rglob(f"{stem}_sem.png"))
    return hits[0] if hits else None


def benchmark_run(pred_dirs, gt_dir, agg: AggregationSpec):
    """Evaluate prediction stacks against ground truth, per noise level.

    `pred_dirs` is an iterable of (noise_level, directory); each directory is
    searched recursively for ``*_probs.json``.  Returns (rows, summaries)
    where summaries hold per-level means.  Missing ground-truth pairs raise
    with every unpaired stem listed.
    """
    gt_dir = Path(gt_dir)
    if isinstance(pred_dirs, dict):
        pred_dirs = sorted(pred_dirs.items())
    rows: list[BenchmarkRow] = []
    for level, pred_dir in pred_dirs:
        stacks = _find_stacks(Path(pred_dir))
        if not stacks:
            raise FileNotFoundError(f"no prediction stacks under {pred_dir}")
        missing = [s for s in stacks if _find_gt(gt_dir, s) is None]
        if missing:
            raise FileNotFoundError(
                f"no ground truth for stems: {', '.join(sorted(missing))}")
        for stem, directory in sorted(stacks.items()):
            try:
                stack = validate_probstack(read_probstack(directory, stem))
            except ProbStackError as exc:
                raise ProbStackError(f"{stem}: {exc}") from exc
            gt = np.asarray(Image.open(_find_gt(gt_dir, stem)))
            c = stack.samples.shape[1]
            if c == 2:
                gt = (gt != 0).astype(np.uint8)
            mean = stack.samples.mean(axis=0, dtype=np.float64)
            pred = mean.argmax(axis=0)  # ties: lowest class index
            maps = decompose(stack)
            metrics = segmentation_metrics(pred, gt, n_classes=c)
            rows.append(BenchmarkRow(
                noise_level=str(level), image_stem=stem,
                source_tag=stack.source_tag,
                accuracy=metrics["accuracy"], f1_macro=metrics["f1_macro"],
                pu=aggregate(maps.pu, agg), au=aggregate(maps.au, agg),
                eu=aggregate(maps.eu, agg), agg_strategy=agg.label()))
    summaries = summarize_rows(rows)
    return rows, summaries


def summarize_rows(rows) -> list[dict]:
    levels: dict[str, list[BenchmarkRow]] = {}
    for row in rows:
        levels.setdefault(row.noise_level, []).append(row)
    out = []
    for level in sorted(levels, key=_level_sort_key):
        group = levels[level]
        out.append({
            "noise_level": level,
            "n_images": len(group),
            "accuracy": float(np.mean([r.accuracy for r in group])),
            "f1_macro": float(np.mean([r.f1_macro for r in group])),
            "pu": float(np.mean([r.pu for r in group])),
            "au": float(np.mean([r.au for r in group])),
            "eu": float(np.mean([r.eu for r in group])),
            "agg_strategy": group[0].agg_strategy,
        })
    return out


def _level_sort_key(level: str):
    try:
        return (0, float(level))
    except ValueError:
        return (1, level)


def write_report(rows, summaries, csv_path) -> Path:
    """Write the per-image CSV plus a machine-readable summary JSON."""
    csv_path = Path(csv_path)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: getattr(row, k) for k in CSV_FIELDS})
    summary_path = csv_path.with_suffix(".summary.json")
    summary_path.write_text(json.dumps(summaries, indent=2, sort_keys=True) + "\n")
    return summary_path

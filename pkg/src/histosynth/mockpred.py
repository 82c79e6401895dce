"""Ground-truth-derived softmax-stack oracle.

Builds valid ProbStacks straight from a semantic mask with independently
tunable knobs: `softness` spreads within-member probability mass off the true
class (driving aleatoric uncertainty), `jitter` perturbs logits independently
per member (driving epistemic uncertainty), and an optional row-stochastic
confusion matrix remaps labels before softening (wrong-but-confident
predictions).  The whole construction runs in logit space, so simplex validity
is guaranteed without projection, and every noise draw is keyed by
(seed, member), so stacks are reproducible member by member.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .config import SEMANTIC_CLASS_NAMES, derive_seed, make_rng
from .uq import ProbStack, validate_probstack

_LOGIT_FLOOR = 1e-12


@dataclass
class MockSpec:
    t_samples: int = 4
    softness: float = 0.0  # within-member temperature (drives AU)
    jitter: float = 0.0  # between-member logit noise std (drives EU)
    confusion: tuple | None = None  # C x C row-stochastic label remap
    boundary_sigma: float = 0.0  # px of label smoothing at boundaries
    seed: int = 0
    n_classes: int = 6

    def __post_init__(self):
        if self.t_samples < 1:
            raise ValueError(f"t_samples must be >= 1, got {self.t_samples}")
        if self.softness < 0 or self.jitter < 0:
            raise ValueError("softness and jitter must be >= 0")
        if self.confusion is not None:
            m = np.asarray(self.confusion, dtype=np.float64)
            if m.shape != (self.n_classes, self.n_classes):
                raise ValueError(
                    f"confusion must be {self.n_classes}x{self.n_classes}, "
                    f"got {m.shape}")
            if np.any(m < 0) or np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-9):
                raise ValueError("confusion rows must be >= 0 and sum to 1")


def _default_names(c: int) -> tuple[str, ...]:
    if c == len(SEMANTIC_CLASS_NAMES):
        return SEMANTIC_CLASS_NAMES
    if c == 2:
        return ("background", "foreground")
    return tuple(f"class_{i}" for i in range(c))


def _resample_labels(labels: np.ndarray, confusion, seed: int) -> np.ndarray:
    m = np.asarray(confusion, dtype=np.float64)
    cum = np.cumsum(m, axis=1)
    u = make_rng(derive_seed(seed, "confusion", 0)).random(labels.shape)
    out = np.empty_like(labels)
    for c in np.unique(labels):
        sel = labels == c
        out[sel] = np.minimum(
            np.searchsorted(cum[int(c)], u[sel], side="right"), m.shape[1] - 1)
    return out


def generate_stack(gt_semantic: np.ndarray, spec: MockSpec,
                   class_names: tuple[str, ...] | None = None) -> ProbStack:
    """Build a T-member softmax stack from a ground-truth label map."""
    gt = np.asarray(gt_semantic).astype(np.int64)
    c = spec.n_classes
    if gt.min() < 0 or gt.max() >= c:
        raise ValueError(
            f"labels must lie in [0, {c}), got range [{gt.min()}, {gt.max()}]")

    labels = (_resample_labels(gt, spec.confusion, spec.seed)
              if spec.confusion is not None else gt)

    prob = np.moveaxis(np.eye(c, dtype=np.float64)[labels], -1, 0)  # (C, H, W)
    if spec.boundary_sigma > 0:
        for ch in range(c):
            prob[ch] = gaussian_filter(prob[ch], spec.boundary_sigma,
                                       mode="nearest")
        prob /= prob.sum(axis=0, keepdims=True)

    logits = np.log(np.clip(prob, _LOGIT_FLOOR, None))
    logits /= 1.0 + spec.softness

    members = []
    for t in range(spec.t_samples):
        lt = logits
        if spec.jitter > 0:
            noise = make_rng(derive_seed(spec.seed, "member", t)).normal(
                size=logits.shape)
            lt = logits + spec.jitter * noise
        lt = lt - lt.max(axis=0, keepdims=True)
        e = np.exp(lt)
        members.append((e / e.sum(axis=0, keepdims=True)).astype(np.float32))

    stack = ProbStack(np.stack(members, axis=0),
                      class_names or _default_names(c), source_tag="mock")
    return validate_probstack(stack)

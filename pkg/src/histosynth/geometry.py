"""Implicit-surface nucleus/cytoplasm shapes and slab sectioning queries.

Shapes are evaluated in a local frame (unit quaternion pose); membership is a
smooth margin function with value <= 1 inside.  Organic boundaries come from a
band-limited angular noise field (random low-wavenumber cosines on the unit
sphere) that perturbs the radius multiplicatively, so a conservative bounding
box is just (1 + noise_amplitude) times the base extents.

Sectioning uses vertical rays (orthographic geometry): for noiseless quadric
shapes the z-interval is solved in closed form; otherwise by a coarse z-scan
plus bisection on the membership margin.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import make_rng

#: kinds whose base margin is a quadratic form in the local coordinates
_QUADRIC_KINDS = frozenset({"ellipsoid", "disc", "vacuole"})
SHAPE_KINDS = ("ellipsoid", "bilobed", "spindle", "disc", "vacuole")

_SPINDLE_EXPONENT = 1.5  # <2 sharpens the tips of the major axis
_NOISE_COMPONENTS = 6
_BISECT_ITERS = 14


@dataclass
class Slab:
    """A finite-thickness horizontal sectioning volume, z0 <= z <= z0+thickness."""

    z0: float
    thickness: float

    def __post_init__(self):
        if self.thickness <= 0:
            raise ValueError(f"slab thickness must be > 0, got {self.thickness}")

    @property
    def z1(self) -> float:
        return self.z0 + self.thickness


@dataclass
class ImplicitShape:
    kind: str
    center: np.ndarray  # (3,) um
    quat: np.ndarray  # (4,) unit, (w, x, y, z)
    semi_axes: np.ndarray  # (3,) um
    lobe_separation: float = 0.0  # bilobed only
    noise_amplitude: float = 0.0
    noise_seed: int = 0
    bend: float = 0.0  # lateral quadratic offset as fraction of semi_axes[1]
    _rot: np.ndarray = field(init=False, repr=False)
    _noise_basis: tuple | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        self.center = np.asarray(self.center, dtype=np.float64)
        self.quat = np.asarray(self.quat, dtype=np.float64)
        self.semi_axes = np.asarray(self.semi_axes, dtype=np.float64)
        self._rot = quat_to_matrix(self.quat)

    # -- noise -------------------------------------------------------------

    def _basis(self):
        # Coefficients depend only on noise_seed => deterministic membership.
        if self._noise_basis is None:
            rng = make_rng(self.noise_seed)
            dirs = rng.normal(size=(_NOISE_COMPONENTS, 3))
            dirs /= np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
            wavenum = rng.uniform(2.0, 6.0, _NOISE_COMPONENTS)
            k = dirs * wavenum[:, None]
            phase = rng.uniform(0.0, 2.0 * np.pi, _NOISE_COMPONENTS)
            coef = rng.normal(size=_NOISE_COMPONENTS)
            total = np.sum(np.abs(coef))
            coef = coef / total if total > 0 else coef
            self._noise_basis = (k, phase, coef)
        return self._noise_basis

    def _radius_factor(self, scaled: np.ndarray) -> np.ndarray:
        """Multiplicative radius perturbation, bounded in [1-amp, 1+amp]."""
        k, phase, coef = self._basis()
        norm = np.linalg.norm(scaled, axis=-1, keepdims=True)
        u = np.divide(scaled, norm, out=np.zeros_like(scaled), where=norm > 0)
        f = np.cos(u @ k.T + phase) @ coef
        return 1.0 + self.noise_amplitude * f

    # -- frames ------------------------------------------------------------

    def to_local(self, pts: np.ndarray) -> np.ndarray:
        return (pts - self.center) @ self._rot

    def _bend_local(self, local: np.ndarray) -> np.ndarray:
        if self.bend == 0.0:
            return local
        a, b = self.semi_axes[0], self.semi_axes[1]
        out = local.copy()
        out[..., 1] -= self.bend * b * (local[..., 0] / a) ** 2
        return out

    # -- margin ------------------------------------------------------------

    def margin(self, pts: np.ndarray) -> np.ndarray:
        """Smooth inside/outside field over world points (N, 3); <= 1 inside."""
        local = self._bend_local(self.to_local(np.asarray(pts, dtype=np.float64)))
        scaled = local / self.semi_axes
        if self.noise_amplitude > 0.0:
            g = self._radius_factor(scaled)
            local = local / g[..., None]
            scaled = scaled / g[..., None]
        if self.kind in _QUADRIC_KINDS:
            return np.sum(scaled * scaled, axis=-1)
        if self.kind == "spindle":
            return (np.abs(scaled[..., 0]) ** _SPINDLE_EXPONENT
                    + scaled[..., 1] ** 2 + scaled[..., 2] ** 2)
        if self.kind == "bilobed":
            half = 0.5 * self.lobe_separation
            a, b, c = self.semi_axes
            q_pos = (((local[..., 0] - half) / a) ** 2
                     + (local[..., 1] / b) ** 2 + (local[..., 2] / c) ** 2)
            q_neg = (((local[..., 0] + half) / a) ** 2
                     + (local[..., 1] / b) ** 2 + (local[..., 2] / c) ** 2)
            return np.minimum(q_pos, q_neg)
        raise AssertionError(self.kind)

    # -- bounds ------------------------------------------------------------

    def local_half_extents(self) -> np.ndarray:
        """Conservative local-frame box half-sizes (contains the shape)."""
        h = self.semi_axes.copy()
        if self.kind == "bilobed":
            h = h + np.array([0.5 * self.lobe_separation, 0.0, 0.0])
        pad = 1.0 + self.noise_amplitude
        if self.bend > 0.0:
            h[1] += self.bend * self.semi_axes[1] * pad**2
        return h * pad

    def world_half_extents(self) -> np.ndarray:
        """Axis-aligned world half-extents of the rotated conservative box."""
        return np.abs(self._rot) @ self.local_half_extents()


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix with columns = rotated local axes; q = (w, x, y, z)."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def contains(shape: ImplicitShape, point) -> bool:
    """True iff the world point lies inside the (possibly noisy) shape."""
    pt = np.asarray(point, dtype=np.float64).reshape(1, 3)
    return bool(shape.margin(pt)[0] <= 1.0)


@dataclass
class OccupancySample:
    covered: bool
    z_entry: float
    z_exit: float

    @property
    def path_length(self) -> float:
        return self.z_exit - self.z_entry if self.covered else 0.0


def footprint(shape: ImplicitShape, slab: Slab):
    """Conservative xy bounding box (xmin, ymin, xmax, ymax), or None if the
    shape cannot intersect the slab at all."""
    half = shape.world_half_extents()
    cz = shape.center[2]
    if cz + half[2] < slab.z0 or cz - half[2] > slab.z1:
        return None
    cx, cy = shape.center[0], shape.center[1]
    return (cx - half[0], cy - half[1], cx + half[0], cy + half[1])


# ---------------------------------------------------------------------------
# Vertical-ray occupancy
# ---------------------------------------------------------------------------

def _analytic_z_interval(shape: ImplicitShape, slab: Slab, xy: np.ndarray):
    """Exact z-interval for noiseless quadric kinds (union hull for bilobed).

    The margin restricted to a vertical line is a quadratic in z, so entry and
    exit are the clipped roots.
    """
    rot_t = shape._rot.T
    inv_s = 1.0 / shape.semi_axes
    n = xy.shape[0]
    p0 = np.concatenate([xy, np.zeros((n, 1))], axis=1) - shape.center
    v0 = (p0 @ shape._rot) * inv_s  # local point at z=0, scaled
    w = rot_t[:, 2] * inv_s  # d(scaled local)/dz

    if shape.kind == "bilobed":
        offs = np.array([-0.5, 0.5]) * shape.lobe_separation * inv_s[0]
        lo = np.full(n, np.inf)
        hi = np.full(n, -np.inf)
        for off in offs:
            v = v0.copy()
            v[:, 0] += off
            l, h = _quadratic_roots(v, w)
            lo = np.minimum(lo, l)
            hi = np.maximum(hi, h)
    else:
        lo, hi = _quadratic_roots(v0, w)

    lo = np.maximum(lo, slab.z0)
    hi = np.minimum(hi, slab.z1)
    covered = lo <= hi
    return covered, np.where(covered, lo, 0.0), np.where(covered, hi, 0.0)


def _quadratic_roots(v0: np.ndarray, w: np.ndarray):
    """Roots of |v0 + z*w|^2 = 1 per row; (inf, -inf) where no intersection."""
    a = float(w @ w)
    b = 2.0 * (v0 @ w)
    c = np.einsum("ij,ij->i", v0, v0) - 1.0
    disc = b * b - 4.0 * a * c
    ok = disc >= 0.0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    lo = np.where(ok, (-b - sq) / (2.0 * a), np.inf)
    hi = np.where(ok, (-b + sq) / (2.0 * a), -np.inf)
    return lo, hi


def _scanned_z_interval(shape: ImplicitShape, slab: Slab, xy: np.ndarray):
    """Sampled z-interval for noisy/non-quadric shapes.

    Coarse scan with step bounded by the smallest semi-axis, then bisection on
    the margin along z (well below the 0.01 um tolerance target).
    """
    half = shape.world_half_extents()
    z_lo = max(slab.z0, shape.center[2] - half[2])
    z_hi = min(slab.z1, shape.center[2] + half[2])
    n = xy.shape[0]
    if z_hi <= z_lo:
        zero = np.zeros(n)
        return np.zeros(n, dtype=bool), zero, zero

    step = min(max(float(np.min(shape.semi_axes)) / 3.0, 0.05), 0.75)
    k = int(np.clip(np.ceil((z_hi - z_lo) / step) + 1, 5, 96))
    zs = np.linspace(z_lo, z_hi, k)

    pts = np.empty((n, k, 3))
    pts[:, :, 0] = xy[:, 0:1]
    pts[:, :, 1] = xy[:, 1:2]
    pts[:, :, 2] = zs[None, :]
    inside = shape.margin(pts.reshape(-1, 3)).reshape(n, k) <= 1.0

    covered = inside.any(axis=1)
    z_entry = np.zeros(n)
    z_exit = np.zeros(n)
    if not covered.any():
        return covered, z_entry, z_exit

    idx = np.flatnonzero(covered)
    first = np.argmax(inside[idx], axis=1)
    last = k - 1 - np.argmax(inside[idx][:, ::-1], axis=1)
    xy_c = xy[idx]

    z_entry[idx] = np.where(
        first == 0, z_lo,
        _bisect_boundary(shape, xy_c, zs[np.maximum(first - 1, 0)], zs[first]))
    z_exit[idx] = np.where(
        last == k - 1, z_hi,
        _bisect_boundary(shape, xy_c, zs[np.minimum(last + 1, k - 1)], zs[last]))
    return covered, z_entry, z_exit


def _bisect_boundary(shape, xy, z_out, z_in):
    """Vectorized bisection between an outside and an inside z per column."""
    z_out = z_out.astype(np.float64).copy()
    z_in = z_in.astype(np.float64).copy()
    pts = np.empty((xy.shape[0], 3))
    pts[:, :2] = xy
    for _ in range(_BISECT_ITERS):
        mid = 0.5 * (z_out + z_in)
        pts[:, 2] = mid
        inside = shape.margin(pts) <= 1.0
        z_in = np.where(inside, mid, z_in)
        z_out = np.where(inside, z_out, mid)
    return 0.5 * (z_out + z_in)


def slab_occupancy_grid(shape: ImplicitShape, slab: Slab, xy: np.ndarray):
    """Vertical-ray occupancy for many columns at once.

    Returns (covered bool (N,), z_entry (N,), z_exit (N,)); entry/exit are
    clipped to the slab and zero where not covered.
    """
    xy = np.asarray(xy, dtype=np.float64)
    if (shape.noise_amplitude == 0.0 and shape.bend == 0.0
            and shape.kind in (_QUADRIC_KINDS | {"bilobed"})):
        return _analytic_z_interval(shape, slab, xy)
    return _scanned_z_interval(shape, slab, xy)


def slab_occupancy(shape: ImplicitShape, slab: Slab, xy) -> OccupancySample:
    """Single-column occupancy of shape-intersect-slab at world xy."""
    covered, z_entry, z_exit = slab_occupancy_grid(
        shape, slab, np.asarray(xy, dtype=np.float64).reshape(1, 2))
    return OccupancySample(bool(covered[0]), float(z_entry[0]), float(z_exit[0]))

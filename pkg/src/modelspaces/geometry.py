"""Acceptable-weight regions in parameter space and their intersection.

A node summarizes the weight vectors it deems acceptable as a ball (or a
per-axis scaled ellipsoid) around its locally trained optimum. A coordinator
then seeks a single weight vector inside every node's region by minimizing a
hinge penalty on each region's normalized-distance overshoot.
"""

from __future__ import annotations

from dataclasses import dataclass
import struct

import numpy as np

from .data import Dataset
from .models import LogisticModel, _softmax

_RADIUS_FLOOR = 1e-12  # keeps degenerate (zero-radius) regions well-behaved


class InfeasibleCenterError(ValueError):
    """The search center itself fails the acceptance test; lower the threshold."""


class NumericError(ArithmeticError):
    """A numeric quantity (gradient, Fisher entry) became non-finite."""


@dataclass(frozen=True)
class BallSearchConfig:
    r_max: float = 16.0
    delta: float = 0.01
    surface_samples: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.delta < self.r_max:
            raise ValueError("need 0 < delta < r_max")
        if self.surface_samples < 1:
            raise ValueError("surface_samples must be >= 1")


@dataclass(frozen=True)
class FisherScales:
    """Empirical diagonal Fisher values plus the floor constant for Eq-style scaling."""

    fisher: np.ndarray
    c_floor: float = 0.1

    def __post_init__(self):
        fisher = np.ascontiguousarray(self.fisher, dtype=np.float64).ravel()
        if len(fisher) == 0:
            raise ValueError("fisher array must be nonempty")
        if not 0 < self.c_floor < 1:
            raise ValueError("c_floor must lie in (0, 1)")
        if np.any(fisher < 0) or not np.all(np.isfinite(fisher)):
            raise NumericError("fisher entries must be finite and nonnegative")
        fisher.flags.writeable = False
        object.__setattr__(self, "fisher", fisher)


@dataclass(frozen=True)
class ModelSpace:
    """Ball/ellipsoid of acceptable weights: center, base radius, per-axis scales."""

    center: np.ndarray
    base_radius: float
    axis_scales: np.ndarray
    node_id: int = -1

    def __post_init__(self):
        center = np.ascontiguousarray(self.center, dtype=np.float64).ravel()
        scales = np.ascontiguousarray(self.axis_scales, dtype=np.float64).ravel()
        if len(scales) != len(center):
            raise ValueError("axis_scales length must match center length")
        if self.base_radius < 0:
            raise ValueError("base_radius must be nonnegative")
        if np.any(scales <= 0) or np.any(scales > 1):
            raise ValueError("axis scales must lie in (0, 1]")
        center.flags.writeable = False
        scales.flags.writeable = False
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "axis_scales", scales)

    @property
    def dim(self) -> int:
        return len(self.center)

    def axis_radii(self) -> np.ndarray:
        return np.maximum(self.axis_scales * self.base_radius, _RADIUS_FLOOR)

    def membership_distance(self, w) -> float:
        """Normalized ellipsoid distance; <= 1 means w is inside the space."""
        w = np.asarray(w, dtype=np.float64).ravel()
        return float(np.linalg.norm((w - self.center) / self.axis_radii()))

    def mean_radius(self) -> float:
        """Geometric mean of the per-axis radii."""
        return float(np.exp(np.mean(np.log(self.axis_radii()))))

    def to_bytes(self) -> bytes:
        header = struct.pack("<iQ", self.node_id, self.dim)
        return (header + self.center.astype("<f8").tobytes()
                + struct.pack("<d", self.base_radius)
                + self.axis_scales.astype("<f8").tobytes())

    @classmethod
    def from_bytes(cls, raw: bytes) -> "ModelSpace":
        node_id, d = struct.unpack_from("<iQ", raw, 0)
        off = 12
        center = np.frombuffer(raw, dtype="<f8", count=d, offset=off).copy()
        off += 8 * d
        (radius,) = struct.unpack_from("<d", raw, off)
        off += 8
        scales = np.frombuffer(raw, dtype="<f8", count=d, offset=off).copy()
        return cls(center, radius, scales, node_id=node_id)


def fisher_diagonal(model: LogisticModel, data: Dataset) -> np.ndarray:
    """Per-parameter mean squared score of the softmax log-likelihood.

    Returns a flat array ordered like the model's weight vector (W then b).
    """
    if len(data) == 0:
        raise ValueError("fisher_diagonal needs a nonempty dataset")
    X = data.features
    resid = _softmax(model.logits(X))
    resid[np.arange(len(X)), data.labels] -= 1.0  # p - onehot(y); sign squares away
    sq = resid**2
    fisher_W = (X**2).T @ sq / len(X)
    fisher_b = sq.mean(axis=0)
    out = np.concatenate([fisher_W.ravel(), fisher_b])
    if not np.all(np.isfinite(out)):
        raise NumericError("non-finite Fisher diagonal")
    return out


def axis_scales(f: FisherScales) -> np.ndarray:
    """Per-axis scale factors: least-sensitive axis keeps the full radius.

    Zero Fisher entries are floored so the minimum is taken over positive
    values; every scale lands in [c_floor, 1].
    """
    floored = np.maximum(f.fisher, _RADIUS_FLOOR)
    scales = np.maximum(floored.min() / floored, f.c_floor)
    return np.minimum(scales, 1.0)


def sample_surface(center, radius: float, scales, p: int, rng) -> np.ndarray:
    """p points on the scaled-ellipsoid surface of the given radius.

    Directions are uniform on the unit sphere (normalized Gaussian draws), so
    every returned point has membership distance exactly 1.
    """
    center = np.asarray(center, dtype=np.float64).ravel()
    scales = np.asarray(scales, dtype=np.float64).ravel()
    if radius <= 0:
        raise ValueError("radius must be > 0")
    u = rng.standard_normal((p, len(center)))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return center + radius * (scales * u)


def construct_space(w_star, evalfn, scales=None, cfg: BallSearchConfig | None = None,
                    node_id: int = -1) -> ModelSpace:
    """Binary-search the largest radius whose sampled surface all passes evalfn.

    evalfn maps a flat weight vector to +1 (acceptable) or -1. The search
    keeps the largest radius at which every one of the configured surface
    samples passed, and stops once the bracket is narrower than delta.
    """
    cfg = cfg or BallSearchConfig()
    w_star = np.asarray(w_star, dtype=np.float64).ravel()
    if scales is None:
        scales = np.ones_like(w_star)
    if evalfn(w_star) != 1:
        raise InfeasibleCenterError(
            "center fails its own acceptance test; lower the threshold"
        )
    rng = np.random.default_rng(cfg.seed)
    lower, upper = 0.0, cfg.r_max
    while upper - lower > cfg.delta:
        r = 0.5 * (upper + lower)
        samples = sample_surface(w_star, r, scales, cfg.surface_samples, rng)
        if all(evalfn(s) == 1 for s in samples):
            lower = r
        else:
            upper = r
    return ModelSpace(w_star, lower, scales, node_id=node_id)


def _hinge_terms(w, spaces):
    terms = []
    for s in spaces:
        radii = s.axis_radii()
        dist = np.linalg.norm((w - s.center) / radii)
        terms.append((s, radii, dist, s.mean_radius()))
    return terms


def hinge_loss(w, spaces) -> float:
    """Sum of per-space overshoot penalties; zero exactly when w is in all spaces.

    Each space contributes max(0, dist - 1) weighted by its geometric-mean
    radius, where dist is the normalized ellipsoid distance. For unit scales
    this reduces to max(0, ||w - c|| - R) per space.
    """
    w = np.asarray(w, dtype=np.float64).ravel()
    for s in spaces:
        if s.dim != len(w):
            raise ValueError(f"dimension mismatch: w has {len(w)}, space has {s.dim}")
    return float(sum(max(0.0, dist - 1.0) * rbar
                     for _, _, dist, rbar in _hinge_terms(w, spaces)))


def _hinge_loss_grad(w, spaces):
    loss = 0.0
    grad = np.zeros_like(w)
    for s, radii, dist, rbar in _hinge_terms(w, spaces):
        if dist > 1.0:
            loss += (dist - 1.0) * rbar
            grad += rbar * (w - s.center) / (radii**2) / dist
    return loss, grad


@dataclass(frozen=True)
class IntersectConfig:
    step_size: float | None = None  # default 0.05 * largest base radius
    max_iters: int = 2000
    tol: float = 1e-8
    init: np.ndarray | None = None


def intersect(spaces, opts: IntersectConfig | None = None):
    """Gradient-descend the hinge objective toward a point inside every space.

    Returns (weight vector, found). found is True when the final loss is at
    most tol; the final iterate is returned either way, so callers can still
    inspect the best-effort point when no intersection exists.
    """
    opts = opts or IntersectConfig()
    if not spaces:
        raise ValueError("need at least one space")
    d = spaces[0].dim
    if any(s.dim != d for s in spaces):
        raise ValueError("spaces disagree on dimension")

    if opts.init is not None:
        w = np.asarray(opts.init, dtype=np.float64).ravel().copy()
    else:
        # Tight spaces pin the solution near their centers while loose ones
        # barely constrain it, so centers are weighted by inverse radius.
        inv = 1.0 / np.array([max(s.base_radius, _RADIUS_FLOOR) for s in spaces])
        centers = np.stack([s.center for s in spaces])
        w = (inv[:, None] * centers).sum(axis=0) / inv.sum()
    step = opts.step_size
    if step is None:
        step = 0.05 * max(max(s.base_radius for s in spaces), _RADIUS_FLOOR)

    loss, grad = _hinge_loss_grad(w, spaces)
    for _ in range(opts.max_iters):
        if loss <= opts.tol:
            break
        gnorm = np.linalg.norm(grad)
        if gnorm < 1e-15 or step < 1e-15:
            break
        candidate = w - step * grad
        new_loss, new_grad = _hinge_loss_grad(candidate, spaces)
        if new_loss >= loss:
            step *= 0.5
            continue
        w, loss, grad = candidate, new_loss, new_grad
    return w, bool(loss <= opts.tol)

"""Discrete and empirical probability measures over box grids.

Contains the occupation-measure histogram, the L2/KL/Wasserstein distance
menu used as fitting objectives and error metrics, and the energy-distance
MMD used for sample-cloud comparison.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.spatial.distance import cdist

WEIGHT_TOL = 1e-12


class DomainError(ValueError):
    """A sample fell outside the declared grid box with clipping disabled."""


class SupportMismatchError(ValueError):
    """Two measures do not share a common support."""


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform rectangular mesh over a box, cells indexed column-major.

    The i-th axis carries n_i equally spaced cell centers from lo_i to hi_i,
    with spacing dx_i = (hi_i - lo_i)/(n_i - 1). Flat index j and its
    axis-i neighbor differ by the stride S_i = n_1 * ... * n_{i-1}.
    """

    lo: np.ndarray
    hi: np.ndarray
    n_per_dim: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=float))
        object.__setattr__(
            self, "n_per_dim", np.asarray(self.n_per_dim, dtype=int))
        if self.lo.shape != self.hi.shape or self.lo.ndim != 1:
            raise ValueError("lo and hi must be 1-d vectors of equal length")
        if not np.all(self.lo < self.hi):
            raise ValueError("grid box requires lo < hi componentwise")
        if self.n_per_dim.shape != self.lo.shape:
            raise ValueError("n_per_dim must match the box dimension")
        if np.any(self.n_per_dim < 2):
            raise ValueError("need at least 2 cells per dimension")

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def shape(self) -> tuple:
        return tuple(self.n_per_dim)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.n_per_dim))

    @property
    def spacings(self) -> np.ndarray:
        return (self.hi - self.lo) / (self.n_per_dim - 1)

    @property
    def cell_volume(self) -> float:
        # Uniform volume for every cell, boundary cells untruncated.
        return float(np.prod(self.spacings))

    @property
    def strides(self) -> np.ndarray:
        s = np.ones(self.dim, dtype=int)
        for i in range(1, self.dim):
            s[i] = s[i - 1] * self.n_per_dim[i - 1]
        return s

    def multi_to_flat(self, multi: np.ndarray) -> np.ndarray:
        multi = np.asarray(multi, dtype=int)
        return np.ravel_multi_index(multi.T, self.shape, order="F")

    def flat_to_multi(self, flat) -> np.ndarray:
        return np.stack(
            np.unravel_index(np.asarray(flat), self.shape, order="F"),
            axis=-1)

    def centers(self) -> np.ndarray:
        multi = self.flat_to_multi(np.arange(self.n_cells))
        return self.lo + multi * self.spacings

    def locate(self, points: np.ndarray, clip: bool = False) -> np.ndarray:
        """Flat cell index of each point (nearest cell center)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if not clip:
            slack = 1e-9 * (self.hi - self.lo)
            low = pts < self.lo - slack
            high = pts > self.hi + slack
            bad = np.any(low | high, axis=1)
            if np.any(bad):
                k = int(np.argmax(bad))
                raise DomainError(
                    f"sample {k} at {pts[k]} lies outside the grid box")
        idx = np.rint((pts - self.lo) / self.spacings).astype(int)
        np.clip(idx, 0, self.n_per_dim - 1, out=idx)
        return self.multi_to_flat(idx)

    def matches(self, other: "Grid") -> bool:
        return (np.array_equal(self.n_per_dim, other.n_per_dim)
                and np.allclose(self.lo, other.lo)
                and np.allclose(self.hi, other.hi))


@dataclass
class Measure:
    """Probability vector bound to a grid or an unstructured cell set."""

    weights: np.ndarray
    support: object = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < -WEIGHT_TOL):
            raise ValueError("negative weight in measure")
        w = np.maximum(w, 0.0)
        total = w.sum()
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ValueError(f"weights sum to {total}, expected 1")
        self.weights = w

    @property
    def n(self) -> int:
        return self.weights.size


@dataclass
class SampleCloud:
    """Point samples, optionally weighted (uniform by default)."""

    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[0] == 0:
            raise ValueError("empty sample cloud")
        if not np.all(np.isfinite(self.points)):
            raise ValueError("non-finite sample point")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if w.shape != (self.points.shape[0],):
                raise ValueError("weights must match the number of points")
            if np.any(w < 0):
                raise ValueError("negative sample weight")
            self.weights = w / w.sum()

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def effective_weights(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self.weights


def subsample_stride(cloud: SampleCloud, max_points: int = 4000) -> SampleCloud:
    """Deterministic strided thinning used before O(n^2) pairwise sums."""
    if cloud.n <= max_points:
        return cloud
    idx = np.linspace(0, cloud.n - 1, max_points).round().astype(int)
    w = None if cloud.weights is None else cloud.weights[idx]
    return SampleCloud(cloud.points[idx], w)


def occupation_measure(traj, grid: Grid, clip: bool = False) -> Measure:
    """Histogram of trajectory samples over the grid cells.

    weights[j] = (# samples in cell j) / N. Out-of-box samples raise a
    DomainError unless clip=True moves them to the nearest boundary cell.
    """
    states = traj.states if hasattr(traj, "states") else np.asarray(traj)
    idx = grid.locate(states, clip=clip)
    counts = np.bincount(idx, minlength=grid.n_cells).astype(float)
    return Measure(counts / counts.sum(), support=grid)


def _common_support(a: Measure, b: Measure):
    if a.n != b.n:
        raise SupportMismatchError("measures have different sizes")
    sa, sb = a.support, b.support
    if isinstance(sa, Grid) and isinstance(sb, Grid):
        if not sa.matches(sb):
            raise SupportMismatchError("measures live on different grids")
        return sa.cell_volume
    if sa is not None and sb is not None and sa is not sb:
        ca = getattr(sa, "centers", None)
        cb = getattr(sb, "centers", None)
        if ca is not None and cb is not None:
            ca = ca() if callable(ca) else ca
            cb = cb() if callable(cb) else cb
            if ca.shape != cb.shape or not np.allclose(ca, cb):
                raise SupportMismatchError("measures live on different cells")
    return 1.0


def l2_distance(a: Measure, b: Measure) -> float:
    """(1/2) integral of the squared density difference over the box."""
    vol = _common_support(a, b)
    diff = a.weights - b.weights
    return float(diff @ diff / (2.0 * vol))


def kl_divergence(a: Measure, b: Measure) -> float:
    """KL(b || a) restricted to cells where both measures are positive."""
    _common_support(a, b)
    mask = (a.weights > 0) & (b.weights > 0)
    wa, wb = a.weights[mask], b.weights[mask]
    return float(np.sum(wb * np.log(wb / wa)))


def grid_objective(name: str):
    """Objective value and d(objective)/d(weights) for grid measures.

    Returns a callable (weights, target_weights, cell_volume) -> (J, grad)
    so gradient drivers can consume any implemented objective uniformly.
    """
    if name == "l2":
        def l2(w, t, vol):
            diff = w - t
            return float(diff @ diff / (2.0 * vol)), diff / vol
        return l2
    if name == "quadratic":
        def quad(w, t, vol):
            diff = w - t
            return float(0.5 * diff @ diff), diff.copy()
        return quad
    if name == "kl":
        def kl(w, t, vol):
            mask = (w > 0) & (t > 0)
            val = float(np.sum(t[mask] * np.log(t[mask] / w[mask])))
            grad = np.zeros_like(w)
            grad[mask] = -t[mask] / w[mask]
            return val, grad
        return kl
    raise ValueError(f"unknown objective {name!r}")


def _quantile_w2_squared(xa, wa, xb, wb) -> float:
    """Exact squared 1-d Wasserstein-2 between weighted point masses."""
    ia = np.argsort(xa, kind="stable")
    ib = np.argsort(xb, kind="stable")
    xa, xb = xa[ia], xb[ib]
    ca = np.cumsum(wa[ia] / wa.sum())
    cb = np.cumsum(wb[ib] / wb.sum())
    ca[-1] = cb[-1] = 1.0
    edges = np.union1d(ca, cb)
    widths = np.diff(np.concatenate([[0.0], edges]))
    mids = edges - 0.5 * widths
    ka = np.minimum(np.searchsorted(ca, mids, side="left"), xa.size - 1)
    kb = np.minimum(np.searchsorted(cb, mids, side="left"), xb.size - 1)
    return float(np.sum(widths * (xa[ka] - xb[kb]) ** 2))


def wasserstein2(a: SampleCloud, b: SampleCloud, n_projections: int = 64,
                 seed: int = 0) -> float:
    """Wasserstein-2 distance between sample clouds.

    Exact quantile coupling in 1-d. In higher dimension this is the sliced
    approximation: the root-mean squared 1-d distance over n_projections
    random unit directions, deterministic per seed.
    """
    if a.dim != b.dim:
        raise SupportMismatchError("clouds have different dimensions")
    wa, wb = a.effective_weights(), b.effective_weights()
    if a.dim == 1:
        return float(np.sqrt(_quantile_w2_squared(
            a.points[:, 0], wa, b.points[:, 0], wb)))
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_projections, a.dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    total = 0.0
    for u in dirs:
        total += _quantile_w2_squared(a.points @ u, wa, b.points @ u, wb)
    return float(np.sqrt(total / n_projections))


def _weighted_mean_distance(x, wx, y, wy, chunk: int = 1024) -> float:
    total = 0.0
    for start in range(0, x.shape[0], chunk):
        block = cdist(x[start:start + chunk], y)
        total += wx[start:start + chunk] @ block @ wy
    return float(total)


def energy_mmd(a: SampleCloud, b: SampleCloud) -> float:
    """Energy-distance MMD: E|X-Y| - E|X-X'|/2 - E|Y-Y'|/2 (V-statistic)."""
    if a.dim != b.dim:
        raise SupportMismatchError("clouds have different dimensions")
    wa, wb = a.effective_weights(), b.effective_weights()
    cross = _weighted_mean_distance(a.points, wa, b.points, wb)
    within_a = _weighted_mean_distance(a.points, wa, a.points, wa)
    within_b = _weighted_mean_distance(b.points, wb, b.points, wb)
    return max(cross - 0.5 * within_a - 0.5 * within_b, 0.0)


def energy_mmd_grad_x(x: np.ndarray, y: np.ndarray,
                      chunk: int = 1024) -> tuple[float, np.ndarray]:
    """Energy MMD between uniform clouds and its gradient in the x points.

    Zero-distance pairs contribute zero gradient (subgradient choice).
    """
    n, m = x.shape[0], y.shape[0]
    val_cross = 0.0
    val_xx = 0.0
    grad = np.zeros_like(x)
    for start in range(0, n, chunk):
        xs = x[start:start + chunk]
        dxy = cdist(xs, y)
        val_cross += dxy.sum()
        inv = np.divide(1.0, dxy, out=np.zeros_like(dxy), where=dxy > 0)
        # d|x - y|/dx = (x - y)/|x - y|
        grad[start:start + chunk] += (
            xs * inv.sum(axis=1, keepdims=True) - inv @ y) / (n * m)
        dxx = cdist(xs, x)
        val_xx += dxx.sum()
        invx = np.divide(1.0, dxx, out=np.zeros_like(dxx), where=dxx > 0)
        grad[start:start + chunk] -= (
            xs * invx.sum(axis=1, keepdims=True) - invx @ x) / (n * n)
    dyy = _weighted_mean_distance(y, np.full(m, 1.0 / m), y,
                                  np.full(m, 1.0 / m))
    val = val_cross / (n * m) - 0.5 * val_xx / (n * n) - 0.5 * dyy
    return float(val), grad


def measure_to_cloud(m: Measure, n_samples: int, seed: int = 0,
                     mode: str = "proportional") -> SampleCloud:
    """Turn a cell-supported measure into a point cloud at the cell centers.

    Modes: "weighted" keeps one weighted point per cell, "proportional"
    apportions n_samples deterministically by largest remainder, and
    "multinomial" resamples (deterministic per seed).
    """
    support = m.support
    centers = getattr(support, "centers", None)
    if centers is None:
        raise ValueError("measure support does not expose cell centers")
    centers = centers() if callable(centers) else centers
    if mode == "weighted":
        keep = m.weights > 0
        return SampleCloud(centers[keep], m.weights[keep])
    if mode == "proportional":
        target = n_samples * m.weights
        counts = np.floor(target).astype(int)
        short = n_samples - counts.sum()
        if short > 0:
            order = np.argsort(-(target - counts), kind="stable")
            counts[order[:short]] += 1
        return SampleCloud(np.repeat(centers, counts, axis=0))
    if mode == "multinomial":
        rng = np.random.default_rng(seed)
        counts = rng.multinomial(n_samples, m.weights)
        return SampleCloud(np.repeat(centers, counts, axis=0))
    raise ValueError(f"unknown mode {mode!r}")

"""Distributional estimators used for training and for effect functionals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ArgumentError, UnsupportedDimensionError

# multivariate energy distance is O(n^2); larger inputs are subsampled
MAX_POINTS_MULTIVARIATE = 5000
SUBSAMPLE_SEED = 20240611

FUNCTIONAL_KINDS = ("mean", "quantile", "exceedance", "ed", "w1", "dte_point", "qte_curve")
CONTRAST_KINDS = ("mean", "quantile", "exceedance", "dte_point", "qte_curve")


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ArgumentError(f"sample set must be 1-D or 2-D, got shape {x.shape}")
    return x


def _as_1d(x, what="sample") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2 and x.shape[1] == 1:
        x = x[:, 0]
    if x.ndim != 1:
        raise UnsupportedDimensionError(f"{what} must be one-dimensional, got shape {x.shape}")
    return x


def energy_score_mc(generated, observation) -> float:
    """Monte Carlo energy score of a predictive sample at one observation.

    Positively oriented (higher is better): the within-sample term is an
    average over ordered pairs ``k != k'`` halved, minus the mean distance to
    the observation.
    """
    u = _as_points(generated)
    y = np.atleast_1d(np.asarray(observation, dtype=np.float64))
    k = u.shape[0]
    if k < 2:
        raise ArgumentError("energy score needs at least two generated draws")
    if y.shape != (u.shape[1],):
        raise ArgumentError(f"observation dimension {y.shape} does not match sample dim {u.shape[1]}")
    pair = cdist(u, u).sum() / (2.0 * k * (k - 1))
    data = np.linalg.norm(u - y, axis=1).mean()
    return float(pair - data)


def _pairwise_sum_sorted(v: np.ndarray) -> float:
    # sum over all ordered pairs |v_i - v_j| for sorted v
    n = v.shape[0]
    coef = 2.0 * np.arange(n, dtype=np.float64) - (n - 1)
    return 2.0 * float(np.dot(coef, v))


def _energy_distance_1d(x: np.ndarray, y: np.ndarray) -> float:
    n, m = x.shape[0], y.shape[0]
    both = np.concatenate([x, y])
    center = np.median(both)
    xs = np.sort(x - center)
    ys = np.sort(y - center)
    w_x = _pairwise_sum_sorted(xs)
    w_y = _pairwise_sum_sorted(ys)
    w_all = _pairwise_sum_sorted(np.sort(both - center))
    cross = 0.5 * (w_all - (w_x + w_y))
    return 2.0 * cross / (n * m) - (w_x / (n * n) + w_y / (m * m))


def _subsample(x: np.ndarray, cap: int, salt: int) -> np.ndarray:
    if x.shape[0] <= cap:
        return x
    gen = np.random.default_rng([SUBSAMPLE_SEED, salt])
    return x[np.sort(gen.choice(x.shape[0], cap, replace=False))]


def _block_distance_sum(a: np.ndarray, b: np.ndarray, block: int = 2048) -> float:
    total = 0.0
    for i in range(0, a.shape[0], block):
        total += float(cdist(a[i : i + block], b).sum())
    return total


def _energy_distance_nd(x: np.ndarray, y: np.ndarray) -> float:
    x = _subsample(x, MAX_POINTS_MULTIVARIATE, 1)
    y = _subsample(y, MAX_POINTS_MULTIVARIATE, 2)
    # canonical argument order keeps the cross term bitwise symmetric
    a, b = (x, y) if (x.shape, x.tobytes()) <= (y.shape, y.tobytes()) else (y, x)
    cross = _block_distance_sum(a, b) / (x.shape[0] * y.shape[0])
    w_x = _block_distance_sum(x, x) / x.shape[0] ** 2
    w_y = _block_distance_sum(y, y) / y.shape[0] ** 2
    return 2.0 * cross - (w_x + w_y)


def energy_distance(x, y) -> float:
    """V-statistic energy distance ``2E|X-Y| - E|X-X'| - E|Y-Y'|``.

    One-dimensional inputs are handled exactly in ``O(N log N)`` through
    sorted cumulative sums, so no subsampling is needed. Multivariate inputs
    use explicit pairwise distances on at most ``MAX_POINTS_MULTIVARIATE``
    points per set (fixed-seed subsample).
    """
    x = _as_points(x)
    y = _as_points(y)
    if x.shape[1] != y.shape[1]:
        raise ArgumentError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if x.shape[0] < 1 or y.shape[0] < 1:
        raise ArgumentError("energy distance needs non-empty samples")
    if x.shape[1] == 1:
        return _energy_distance_1d(x[:, 0], y[:, 0])
    return _energy_distance_nd(x, y)


def energy_distance_bruteforce(x, y) -> float:
    """Reference O(n*m) V-statistic, no subsampling."""
    x = _as_points(x)
    y = _as_points(y)
    return float(2.0 * cdist(x, y).mean() - cdist(x, x).mean() - cdist(y, y).mean())


def wasserstein1_1d(x, y) -> float:
    """Exact W1 between two 1-D empirical measures via quantile coupling."""
    x = np.sort(_as_1d(x, "x"))
    y = np.sort(_as_1d(y, "y"))
    n, m = x.shape[0], y.shape[0]
    if n == 0 or m == 0:
        raise ArgumentError("W1 needs non-empty samples")
    if n == m:
        return float(np.abs(x - y).mean())
    # breakpoints of both step quantile functions on (0, 1]
    grid = np.union1d(np.arange(1, n + 1) / n, np.arange(1, m + 1) / m)
    lo = np.concatenate([[0.0], grid[:-1]])
    mid = 0.5 * (lo + grid)
    ix = np.minimum((mid * n).astype(np.int64), n - 1)
    iy = np.minimum((mid * m).astype(np.int64), m - 1)
    return float(np.dot(grid - lo, np.abs(x[ix] - y[iy])))


def _check_tau(tau):
    tau = np.asarray(tau, dtype=np.float64)
    if np.any(~(tau > 0.0) | ~(tau < 1.0)):
        raise ArgumentError(f"quantile level must lie strictly inside (0, 1), got {tau}")
    return tau


def empirical_quantile(x, tau):
    """Linear-interpolation quantile, position ``h = (n - 1) * tau + 1``.

    ``tau`` may be a scalar or an array of levels.
    """
    x = _as_1d(x)
    tau = _check_tau(tau)
    if x.shape[0] == 0:
        raise ArgumentError("quantile of an empty sample")
    out = np.quantile(x, tau, method="linear")
    return float(out) if out.ndim == 0 else out


def exceedance(x, c: float) -> float:
    """Fraction of draws at or above the threshold ``c``."""
    x = _as_1d(x)
    return float(np.mean(x >= c)) if x.shape[0] else float("nan")


def ecdf_at(x, c: float) -> float:
    x = _as_1d(x)
    return float(np.mean(x <= c))


@dataclass(frozen=True)
class FunctionalSpec:
    """A summary operator or discrepancy applied to a pair of samples.

    ``tau`` is used by ``quantile``; ``threshold`` by ``exceedance`` and
    ``dte_point``; ``taus`` by ``qte_curve``.
    """

    kind: str
    tau: float | None = None
    threshold: float | None = None
    taus: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in FUNCTIONAL_KINDS:
            raise ArgumentError(f"kind: unknown functional {self.kind!r}")
        if self.kind == "quantile":
            if self.tau is None or not 0.0 < float(self.tau) < 1.0:
                raise ArgumentError(f"tau: quantile level must lie in (0, 1), got {self.tau}")
        if self.kind in ("exceedance", "dte_point"):
            if self.threshold is None or not np.isfinite(self.threshold):
                raise ArgumentError("threshold: a finite threshold is required")
        if self.kind == "qte_curve":
            if not self.taus:
                raise ArgumentError("taus: empty quantile grid")
            taus = np.asarray(self.taus, dtype=np.float64)
            if np.any(~(taus > 0.0) | ~(taus < 1.0)):
                raise ArgumentError(f"taus: levels must lie in (0, 1), got {self.taus}")
            if np.any(np.diff(taus) <= 0):
                raise ArgumentError("taus: grid must be strictly increasing")
            object.__setattr__(self, "taus", tuple(float(t) for t in taus))

    @property
    def is_contrast(self) -> bool:
        return self.kind in CONTRAST_KINDS

    @property
    def label(self) -> str:
        if self.kind == "quantile":
            return f"quantile[{self.tau:g}]"
        if self.kind in ("exceedance", "dte_point"):
            return f"{self.kind}[{self.threshold:g}]"
        return self.kind

    def params(self) -> dict:
        out = {}
        if self.tau is not None:
            out["tau"] = float(self.tau)
        if self.threshold is not None:
            out["threshold"] = float(self.threshold)
        if self.taus is not None:
            out["taus"] = list(self.taus)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> FunctionalSpec:
        unknown = set(d) - {"kind", "tau", "threshold", "taus"}
        if unknown:
            raise ArgumentError(f"unknown functional fields {sorted(unknown)}")
        taus = d.get("taus")
        return cls(d.get("kind"), d.get("tau"), d.get("threshold"),
                   tuple(taus) if taus is not None else None)

    def to_dict(self) -> dict:
        return {"kind": self.kind, **self.params()}


def apply_functional_contrast(spec: FunctionalSpec, p, q):
    """``T(p) - T(q)`` for contrast kinds, the discrepancy itself otherwise."""
    k = spec.kind
    if k == "ed":
        return energy_distance(p, q)
    if k == "w1":
        return wasserstein1_1d(p, q)
    p = _as_1d(p, "p")
    q = _as_1d(q, "q")
    if k == "mean":
        return float(p.mean() - q.mean())
    if k == "quantile":
        return empirical_quantile(p, spec.tau) - empirical_quantile(q, spec.tau)
    if k == "exceedance":
        return exceedance(p, spec.threshold) - exceedance(q, spec.threshold)
    if k == "dte_point":
        return ecdf_at(p, spec.threshold) - ecdf_at(q, spec.threshold)
    taus = np.asarray(spec.taus)
    return empirical_quantile(p, taus) - empirical_quantile(q, taus)


def count_modes(x, bandwidth: float = 0.3, grid_size: int = 1024, prominence: float = 0.05):
    """Count modes of a Gaussian-kernel density estimate with fixed bandwidth.

    The density is evaluated on a regular grid via a binned convolution. A
    local maximum counts as a mode when it rises at least ``prominence``
    (relative to the global peak) above the deepest dip separating it from a
    higher mode. Returns ``(count, mode_locations)`` sorted by density.
    """
    x = _as_1d(x)
    lo, hi = x.min() - 4 * bandwidth, x.max() + 4 * bandwidth
    edges = np.linspace(lo, hi, grid_size + 1)
    counts, _ = np.histogram(x, edges)
    centers = 0.5 * (edges[:-1] + edges[1:])
    step = edges[1] - edges[0]
    half = int(np.ceil(4 * bandwidth / step))
    kern = np.exp(-0.5 * (np.arange(-half, half + 1) * step / bandwidth) ** 2)
    dens = np.convolve(counts.astype(np.float64), kern, mode="same")
    dens /= dens.max()
    peaks = [i for i in range(1, grid_size - 1) if dens[i] > dens[i - 1] and dens[i] >= dens[i + 1]]
    peaks.sort(key=lambda i: -dens[i])
    kept = []
    for i in peaks:
        ok = True
        for j in kept:
            a, b = sorted((i, j))
            if dens[i] - dens[a : b + 1].min() < prominence:
                ok = False
                break
        if ok:
            kept.append(i)
    return len(kept), centers[kept]

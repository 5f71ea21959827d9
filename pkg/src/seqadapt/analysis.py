"""Domain-gap diagnostics: unbiased Gaussian-kernel MMD and PCA projection
of extracted feature sets."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

SIGMA_FLOOR = 1e-6
_BLOCK_ROWS = 1024


@dataclass
class KernelConfig:
    sigma: float | None = None          # None -> median heuristic
    mode: str = "median-heuristic"      # or "fixed"

    def __post_init__(self):
        if self.mode not in ("median-heuristic", "fixed"):
            raise ValueError(f"unknown bandwidth mode {self.mode!r}")
        if self.mode == "fixed":
            if self.sigma is None or not (self.sigma > 0) \
                    or not math.isfinite(self.sigma):
                raise ValueError("fixed mode needs a finite sigma > 0")


def gaussian_kernel(x, y, sigma: float) -> float:
    """exp(-||x - y||^2 / (2 sigma^2)); 1 exactly when x == y."""
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"point shapes differ: {x.shape} vs {y.shape}")
    d = x - y
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma * sigma)))


def _kernel_block_sums(a: np.ndarray, b: np.ndarray, sigma: float,
                       drop_diagonal: bool) -> float:
    """Sum of exp(-d^2 / 2 sigma^2) over all pairs, in fixed block order so
    the reduction is deterministic; never materializes the full matrix."""
    denom = 2.0 * sigma * sigma
    total = 0.0
    for start in range(0, a.shape[0], _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, a.shape[0])
        k = np.exp(-cdist(a[start:stop], b, "sqeuclidean") / denom)
        if drop_diagonal:
            rows = np.arange(start, stop)
            k[rows - start, rows] = 0.0
        total += float(k.sum())
    return total


def mmd_squared(x, y, sigma: float) -> float:
    """Unbiased squared MMD between two sample sets under the Gaussian kernel.

    Self-similarity terms exclude the diagonal (so the estimate can be
    slightly negative); unequal set sizes use each set's own size in its own
    term. Exactly symmetric in its arguments.

    Byte-identical sets are a degenerate input for the estimator (the cross
    pairs are not independent draws); they return exactly 0, matching the
    leave-one-out treatment of the shared sample.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise ValueError(
            f"need at least 2 samples per set, got {x.shape[0]} and {y.shape[0]}")
    if x.shape[1] != y.shape[1]:
        raise ValueError(f"feature widths differ: {x.shape[1]} vs {y.shape[1]}")
    if not sigma > 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if x.shape == y.shape:
        xb, yb = x.tobytes(), y.tobytes()
        if xb == yb:
            return 0.0
        # canonical argument order keeps the estimate bitwise symmetric
        if yb < xb:
            x, y = y, x
    elif y.shape[0] < x.shape[0]:
        x, y = y, x
    m, n = x.shape[0], y.shape[0]
    xx = _kernel_block_sums(x, x, sigma, drop_diagonal=True)
    yy = _kernel_block_sums(y, y, sigma, drop_diagonal=True)
    xy = _kernel_block_sums(x, y, sigma, drop_diagonal=False)
    return xx / (m * (m - 1)) - 2.0 * xy / (m * n) + yy / (n * (n - 1))


def median_heuristic(points, max_points: int = 1000, seed: int = 0) -> float:
    """Bandwidth = median pairwise Euclidean distance over a capped seeded
    subsample, floored at 1e-6."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if points.shape[0] < 2:
        raise ValueError("median heuristic needs at least 2 points")
    if points.shape[0] > max_points:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(points.shape[0], size=max_points,
                                 replace=False))
        points = points[idx]
    d = cdist(points, points, "euclidean")
    pairwise = d[np.triu_indices(points.shape[0], k=1)]
    return max(float(np.median(pairwise)), SIGMA_FLOOR)


def resolve_sigma(points, config: KernelConfig) -> float:
    if config.mode == "fixed":
        return float(config.sigma)
    return median_heuristic(points)


# ---------------------------------------------------------------------------
# PCA


def pca_project(features, dims: int) -> tuple[np.ndarray, np.ndarray]:
    """Project onto the top principal directions of the covariance.

    Returns (projected (m, dims), explained-variance fractions (dims,)).
    Components are ordered by descending variance and signed so each one's
    largest-magnitude coordinate is positive; directions past the data rank
    are zero-filled with explained variance 0.
    """
    if dims not in (2, 3):
        raise ValueError(f"dims must be 2 or 3, got {dims}")
    f = np.atleast_2d(np.asarray(features, dtype=np.float64))
    m, d = f.shape
    if m <= dims:
        raise ValueError(f"need more than {dims} samples, got {m}")
    centered = f - f.mean(axis=0)
    cov = centered.T @ centered / (m - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.maximum(eigvals[order], 0.0)
    eigvecs = eigvecs[:, order]
    total = float(eigvals.sum())

    components = np.zeros((d, dims))
    explained = np.zeros(dims)
    rank = int(np.sum(eigvals > total * 1e-12)) if total > 0 else 0
    for i in range(min(dims, rank)):
        vec = eigvecs[:, i]
        if vec[np.argmax(np.abs(vec))] < 0:
            vec = -vec
        components[:, i] = vec
        explained[i] = eigvals[i] / total if total > 0 else 0.0
    return centered @ components, explained


# ---------------------------------------------------------------------------
# gap report


@dataclass
class GapReport:
    mmd: float
    sigma: float
    sigma_mode: str
    n_source: int
    n_target: int
    projection_2d: np.ndarray = field(repr=False)
    explained_2d: np.ndarray = field(repr=False)
    projection_3d: np.ndarray = field(repr=False)
    explained_3d: np.ndarray = field(repr=False)
    domains: np.ndarray = field(repr=False)   # 0 = source row, 1 = target row

    def key_values(self) -> dict[str, float | int | str]:
        return {
            "mmd": self.mmd,
            "sigma": self.sigma,
            "sigma_mode": self.sigma_mode,
            "n_source": self.n_source,
            "n_target": self.n_target,
            # semicolon-joined so the values stay one CSV cell each
            "explained_2d": ";".join(repr(v) for v in self.explained_2d),
            "explained_3d": ";".join(repr(v) for v in self.explained_3d),
        }


def domain_gap_report(source_features, target_features,
                      config: KernelConfig | None = None) -> GapReport:
    """MMD plus a joint 2D/3D PCA projection fitted on the union, so both
    domains share axes."""
    config = config or KernelConfig()
    src = np.atleast_2d(np.asarray(source_features, dtype=np.float64))
    tgt = np.atleast_2d(np.asarray(target_features, dtype=np.float64))
    union = np.concatenate([src, tgt], axis=0)
    sigma = resolve_sigma(union, config)
    proj2, ev2 = pca_project(union, 2)
    proj3, ev3 = pca_project(union, 3)
    domains = np.concatenate([np.zeros(src.shape[0], dtype=np.int64),
                              np.ones(tgt.shape[0], dtype=np.int64)])
    return GapReport(
        mmd=mmd_squared(src, tgt, sigma),
        sigma=sigma,
        sigma_mode=config.mode,
        n_source=src.shape[0],
        n_target=tgt.shape[0],
        projection_2d=proj2,
        explained_2d=ev2,
        projection_3d=proj3,
        explained_3d=ev3,
        domains=domains,
    )


def projection_csv(projection: np.ndarray, domains, labels=None) -> str:
    """CSV text with header domain,class,pc1,pc2[,pc3]."""
    dims = projection.shape[1]
    header = "domain,class," + ",".join(f"pc{i + 1}" for i in range(dims))
    lines = [header]
    labels = labels if labels is not None else np.full(len(projection), -1)
    for dom, lab, row in zip(domains, labels, projection):
        coords = ",".join(repr(float(v)) for v in row)
        lines.append(f"{int(dom)},{int(lab)},{coords}")
    return "\n".join(lines) + "\n"

"""Distances between real and synthetic expression matrices.

KL and W1 are computed per gene on 1-D marginals and averaged over genes.
MMD is one multivariate statistic over whole cell vectors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import ExpressionMatrix
from .errors import ConvergenceFailure, DegenerateRange, DimensionMismatch, EmptySample, InvalidRange
from .rng import Xoshiro256

REPORT_SCHEMA_VERSION = 1
DEFAULT_BINS = 50


def _as_2d(x, name: str) -> np.ndarray:
    a = x.values if isinstance(x, ExpressionMatrix) else np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be a vector or matrix, got ndim {a.ndim}")
    if a.shape[0] == 0:
        raise EmptySample(f"{name} has no rows")
    return a


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a, b = _as_2d(a, "first sample"), _as_2d(b, "second sample")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"gene dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    return a, b


def wasserstein_gene(a: np.ndarray, b: np.ndarray) -> float:
    """W1 between two 1-D empirical distributions."""
    a, b = np.sort(a), np.sort(b)
    if len(a) == len(b):
        return float(np.mean(np.abs(a - b)))
    # integral of |F_a - F_b| over the pooled support
    grid = np.sort(np.concatenate([a, b]))
    widths = np.diff(grid)
    fa = np.searchsorted(a, grid[:-1], side="right") / len(a)
    fb = np.searchsorted(b, grid[:-1], side="right") / len(b)
    return float(np.sum(np.abs(fa - fb) * widths))


def wasserstein_per_gene(a, b) -> np.ndarray:
    a, b = _pair(a, b)
    return np.array([wasserstein_gene(a[:, j], b[:, j]) for j in range(a.shape[1])])


def wasserstein_1d(a, b) -> float:
    """Per-gene W1 averaged over genes."""
    return float(np.mean(wasserstein_per_gene(a, b)))


def _sq_dists(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * (x @ y.T)
    return np.maximum(d, 0.0)


def median_bandwidth(a, b) -> float:
    """Median pairwise distance over the pooled rows (distinct index pairs)."""
    z = np.concatenate(_pair(a, b))
    if len(z) < 2:
        return 1.0
    iu = np.triu_indices(len(z), k=1)
    med = float(np.median(np.sqrt(_sq_dists(z, z)[iu])))
    # all points coincide: any width gives MMD 0, pick 1
    return med if med > 0 else 1.0


def mmd_rbf(a, b, bandwidth: float | str = "auto") -> float:
    """Biased (V-statistic) RBF-kernel MMD, square-rooted and floored at 0."""
    a, b = _pair(a, b)
    gamma = median_bandwidth(a, b) if bandwidth == "auto" else float(bandwidth)
    if not gamma > 0:
        raise InvalidRange(f"bandwidth must be > 0, got {gamma}")
    c = 1.0 / (2.0 * gamma * gamma)

    def k(x, y):
        return float(np.exp(-_sq_dists(x, y) * c).mean())

    return math.sqrt(max(k(a, a) + k(b, b) - 2.0 * k(a, b), 0.0))


def kl_gene(a: np.ndarray, b: np.ndarray, bins: int = DEFAULT_BINS) -> float:
    """Discrete KL(a || b) on shared equal-width bins with add-one smoothing."""
    lo, hi = float(min(a.min(), b.min())), float(max(a.max(), b.max()))
    if lo == hi:
        raise DegenerateRange(f"pooled range is the single value {lo}")
    ca, _ = np.histogram(a, bins=bins, range=(lo, hi))
    cb, _ = np.histogram(b, bins=bins, range=(lo, hi))
    p = (ca + 1.0) / (len(a) + bins)
    q = (cb + 1.0) / (len(b) + bins)
    return float(np.sum(p * np.log(p / q)))


def kl_per_gene(a, b, bins: int = DEFAULT_BINS) -> np.ndarray:
    if bins < 2:
        raise InvalidRange(f"bins must be >= 2, got {bins}")
    a, b = _pair(a, b)
    out = np.zeros(a.shape[1])
    for j in range(a.shape[1]):
        try:
            out[j] = kl_gene(a[:, j], b[:, j], bins)
        except DegenerateRange:
            out[j] = 0.0
    return out


def kl_histogram(a, b, bins: int = DEFAULT_BINS) -> float:
    """Mean over genes of KL(real || synthetic); constant genes contribute 0."""
    return float(np.mean(kl_per_gene(a, b, bins)))


def cv_and_zero_prop(matrix) -> tuple[np.ndarray, np.ndarray]:
    """Per-gene cv (NaN where the mean is 0) and fraction of exact zeros."""
    x = _as_2d(matrix, "matrix")
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cv = np.where(mean != 0, sd / np.where(mean != 0, mean, 1.0), np.nan)
    return cv, (x == 0).mean(axis=0)


@dataclass
class PCAResult:
    real: np.ndarray
    synth: np.ndarray
    components: np.ndarray  # (genes, dims)
    variances: np.ndarray
    iterations: int


def pca_project(real, synth, dims: int = 2, tol: float = 1e-9, max_iter: int = 1000,
                seed: int = 0) -> PCAResult:
    """Project both sets on the top principal axes of the pooled, centered rows.

    Axes come from orthogonal (block power) iteration with a Rayleigh-Ritz
    rotation each round; a few extra columns speed up separation of the
    leading pairs. Each axis is signed so its largest-magnitude loading is
    positive.
    """
    a, b = _pair(real, synth)
    z = np.concatenate([a, b])
    n, g = z.shape
    if dims < 1 or dims > g or n < dims:
        raise InvalidRange(f"cannot extract {dims} axes from {n} rows of {g} genes")
    x = z - z.mean(axis=0)
    cov = x.T @ x / n
    k = min(g, dims + 4)
    q, _ = np.linalg.qr(Xoshiro256(seed).normal((g, k)))
    scale = max(float(np.abs(cov).max()), np.finfo(float).tiny)
    for it in range(1, max_iter + 1):
        q, _ = np.linalg.qr(cov @ q)
        w, v = np.linalg.eigh(q.T @ cov @ q)
        order = np.argsort(w)[::-1]
        w, q = w[order], q @ v[:, order]
        resid = np.linalg.norm(cov @ q[:, :dims] - q[:, :dims] * w[:dims], axis=0)
        if np.all(resid <= tol * scale):
            break
    else:
        raise ConvergenceFailure(f"power iteration did not converge in {max_iter} iterations")
    comps = q[:, :dims].copy()
    for j in range(dims):
        if comps[np.argmax(np.abs(comps[:, j])), j] < 0:
            comps[:, j] = -comps[:, j]
    coords = x @ comps
    return PCAResult(coords[:len(a)], coords[len(a):], comps, np.maximum(w[:dims], 0.0), it)


@dataclass
class MetricsReport:
    kl: float
    wasserstein: float
    mmd: float
    cv_real: np.ndarray
    cv_synth: np.ndarray
    zero_prop_real: np.ndarray
    zero_prop_synth: np.ndarray
    n_real: int
    n_synth: int
    kernel_bandwidth: float
    histogram_bins: int
    gene_names: list[str] | None = None

    def to_dict(self) -> dict:
        def vec(v):
            return [None if not np.isfinite(x) else float(x) for x in v]

        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "kl": self.kl, "wasserstein": self.wasserstein, "mmd": self.mmd,
            "n_real": self.n_real, "n_synth": self.n_synth,
            "kernel_bandwidth": self.kernel_bandwidth, "histogram_bins": self.histogram_bins,
            "per_gene_cv": {"real": vec(self.cv_real), "synth": vec(self.cv_synth)},
            "per_gene_zero_prop": {"real": vec(self.zero_prop_real), "synth": vec(self.zero_prop_synth)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def write_per_gene_csv(self, path) -> None:
        names = self.gene_names or [f"gene{j}" for j in range(len(self.cv_real))]
        lines = ["gene,cv_real,cv_synth,zeroprop_real,zeroprop_synth"]
        for j, name in enumerate(names):
            vals = (self.cv_real[j], self.cv_synth[j], self.zero_prop_real[j], self.zero_prop_synth[j])
            lines.append(",".join([name] + ["" if np.isnan(v) else repr(float(v)) for v in vals]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def check_gene_names(real: list[str], synth: list[str]) -> None:
    """Raise DimensionMismatch naming the first column where the headers differ."""
    for j in range(max(len(real), len(synth))):
        x = real[j] if j < len(real) else "<missing>"
        y = synth[j] if j < len(synth) else "<missing>"
        if x != y:
            raise DimensionMismatch(f"gene column {j + 1} differs: real '{x}' vs synthetic '{y}'")


def evaluate(real, synth, bins: int = DEFAULT_BINS, bandwidth: float | str = "auto") -> MetricsReport:
    if isinstance(real, ExpressionMatrix) and isinstance(synth, ExpressionMatrix):
        check_gene_names(real.gene_names, synth.gene_names)
    a, b = _pair(real, synth)
    gamma = median_bandwidth(a, b) if bandwidth == "auto" else float(bandwidth)
    cv_a, z_a = cv_and_zero_prop(a)
    cv_b, z_b = cv_and_zero_prop(b)
    names = list(real.gene_names) if isinstance(real, ExpressionMatrix) else None
    return MetricsReport(kl_histogram(a, b, bins), wasserstein_1d(a, b), mmd_rbf(a, b, gamma),
                         cv_a, cv_b, z_a, z_b, len(a), len(b), gamma, bins, names)


def write_pca_csv(result: PCAResult, path) -> None:
    lines = ["set,dim1,dim2"]
    for label, pts in (("real", result.real), ("synth", result.synth)):
        for row in pts:
            lines.append(",".join([label] + [repr(float(v)) for v in row[:2]]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

"""Zero-inflated log-normal mixture data with known moments."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ExpressionMatrix
from .errors import InvalidSpec
from .rng import Xoshiro256


@dataclass
class Component:
    weight: float
    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class GeneratorSpec:
    n_genes: int
    n_cells: int
    components: list[Component]
    dropout_prob: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.n_genes < 1 or self.n_cells < 1:
            raise InvalidSpec("n_genes and n_cells must be >= 1")
        if not self.components:
            raise InvalidSpec("need at least one mixture component")
        comps = []
        for c in self.components:
            if not isinstance(c, Component):
                c = Component(**c) if isinstance(c, dict) else Component(*c)
            c.mu = np.broadcast_to(np.asarray(c.mu, dtype=np.float64), (self.n_genes,)).copy()
            c.sigma = np.broadcast_to(np.asarray(c.sigma, dtype=np.float64), (self.n_genes,)).copy()
            if c.weight < 0 or np.any(c.sigma < 0):
                raise InvalidSpec("weights and sigmas must be nonnegative")
            comps.append(c)
        self.components = comps
        if abs(sum(c.weight for c in comps) - 1.0) > 1e-9:
            raise InvalidSpec(f"component weights sum to {sum(c.weight for c in comps)}, not 1")
        d = np.broadcast_to(np.asarray(self.dropout_prob, dtype=np.float64), (self.n_genes,)).copy()
        if np.any(d < 0) or np.any(d > 1):
            raise InvalidSpec("dropout probabilities must lie in [0, 1]")
        self.dropout_prob = d

    def expected_mean(self) -> np.ndarray:
        """Per-gene mean ``(1 - d) * sum_k w_k exp(mu_k + sigma_k^2 / 2)``."""
        m = sum(c.weight * np.exp(c.mu + 0.5 * c.sigma**2) for c in self.components)
        return (1.0 - self.dropout_prob) * m

    def to_dict(self) -> dict:
        return {
            "n_genes": self.n_genes, "n_cells": self.n_cells, "seed": self.seed,
            "dropout_prob": self.dropout_prob.tolist(),
            "components": [{"weight": c.weight, "mu": c.mu.tolist(), "sigma": c.sigma.tolist()}
                           for c in self.components],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        allowed = {"n_genes", "n_cells", "seed", "dropout_prob", "components"}
        unknown = set(d) - allowed
        if unknown:
            raise InvalidSpec(f"unknown generator keys: {sorted(unknown)}")
        try:
            comps = [Component(float(c["weight"]), c["mu"], c["sigma"]) for c in d["components"]]
            return cls(int(d["n_genes"]), int(d["n_cells"]), comps, d["dropout_prob"], int(d.get("seed", 0)))
        except (KeyError, TypeError) as err:
            raise InvalidSpec(f"malformed generator spec: {err}") from None


def random_spec(n_genes: int, n_cells: int, n_components: int = 2, seed: int = 0,
                dropout_range=(0.1, 0.6)) -> GeneratorSpec:
    """A mixture with well-separated component means, parameters drawn from ``seed``."""
    rng = Xoshiro256(seed)
    comps = []
    for k in range(n_components):
        mu = -0.5 + 1.5 * rng.uniform(n_genes)
        sigma = 0.2 + 0.4 * rng.uniform(n_genes)
        comps.append(Component(1.0 / n_components, mu, sigma))
    lo, hi = dropout_range
    dropout = lo + (hi - lo) * rng.uniform(n_genes)
    return GeneratorSpec(n_genes, n_cells, comps, dropout, seed)


def generate(spec: GeneratorSpec) -> ExpressionMatrix:
    """One row per cell, each from its own stream ``Xoshiro256(seed ^ cell)``.

    Per cell: one uniform picks the component, ``n_genes`` Gaussians give
    log-normal values, ``n_genes`` uniforms decide dropout.
    """
    cum = np.cumsum([c.weight for c in spec.components])
    values = np.empty((spec.n_cells, spec.n_genes))
    root = Xoshiro256(spec.seed)
    for i in range(spec.n_cells):
        rng = root.split(i)
        u = rng.uniform(1)[0]
        k = min(int(np.searchsorted(cum, u, side="right")), len(spec.components) - 1)
        comp = spec.components[k]
        row = np.exp(comp.mu + comp.sigma * rng.normal(spec.n_genes))
        row[rng.uniform(spec.n_genes) < spec.dropout_prob] = 0.0
        values[i] = row
    genes = [f"gene{j:04d}" for j in range(spec.n_genes)]
    cells = [f"cell{i:06d}" for i in range(spec.n_cells)]
    return ExpressionMatrix(values, genes, cells)

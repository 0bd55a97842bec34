"""Expression matrices, hypervariable-gene screening and zero negation."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateGene,
    EmptyMatrix,
    InputError,
    NegativeValue,
    NotRaw,
    ParseError,
    ZeroMeanGene,
)

DEFAULT_TOP_K = 2000
DEFAULT_NEGATION = -10.0

_NAME_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


@dataclass
class ExpressionMatrix:
    """Cells x genes matrix of expression values with gene labels."""

    values: np.ndarray
    gene_names: list[str]
    cell_ids: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise InputError(f"expression values must be 2-D, got shape {self.values.shape}")
        self.gene_names = [str(g) for g in self.gene_names]
        if len(self.gene_names) != self.values.shape[1]:
            raise InputError(
                f"{len(self.gene_names)} gene names for {self.values.shape[1]} columns")
        seen = set()
        for g in self.gene_names:
            if g in seen:
                raise DuplicateGene(f"duplicate gene name {g!r}")
            seen.add(g)
        if self.cell_ids is not None:
            self.cell_ids = [str(c) for c in self.cell_ids]
            if len(self.cell_ids) != self.values.shape[0]:
                raise InputError(f"{len(self.cell_ids)} cell ids for {self.values.shape[0]} rows")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_cells(self) -> int:
        return self.values.shape[0]

    @property
    def n_genes(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "ExpressionMatrix":
        return ExpressionMatrix(values, list(self.gene_names),
                                None if self.cell_ids is None else list(self.cell_ids))

    def subset_genes(self, indices) -> "ExpressionMatrix":
        indices = list(indices)
        return ExpressionMatrix(self.values[:, indices], [self.gene_names[i] for i in indices],
                                None if self.cell_ids is None else list(self.cell_ids))

    def subset_cells(self, indices) -> "ExpressionMatrix":
        indices = list(indices)
        ids = None if self.cell_ids is None else [self.cell_ids[i] for i in indices]
        return ExpressionMatrix(self.values[indices, :], list(self.gene_names), ids)


@dataclass
class PreprocessSpec:
    top_k: int = DEFAULT_TOP_K
    negation: float = DEFAULT_NEGATION
    selected_gene_indices: list[int] = field(default_factory=list)
    selected_gene_names: list[str] = field(default_factory=list)
    skipped_genes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if int(self.top_k) < 1:
            raise InputError(f"top_k must be >= 1, got {self.top_k}")
        if not self.negation < 0:
            raise InputError(f"negation value must be negative, got {self.negation}")


def coefficient_of_variation(gene_column) -> float:
    """Population standard deviation over mean."""
    y = np.asarray(gene_column, dtype=np.float64)
    m = y.mean() if y.size else 0.0
    if not m > 0:
        raise ZeroMeanGene(f"gene has mean {m}; coefficient of variation undefined")
    return float(y.std() / m)


def select_hypervariable(matrix: ExpressionMatrix, top_k: int = DEFAULT_TOP_K,
                         negation: float = DEFAULT_NEGATION):
    """Keep the ``top_k`` genes with the largest coefficient of variation.

    Zero-mean genes are skipped and listed in ``spec.skipped_genes``. Ties in
    cv are broken by ascending gene name; output columns follow the ranking.

    Returns ``(spec, reduced_matrix)``.
    """
    if top_k < 1:
        raise InputError(f"top_k must be >= 1, got {top_k}")
    if matrix.n_cells == 0 or matrix.n_genes == 0:
        raise EmptyMatrix("expression matrix has no cells or no genes")
    ranked = []
    skipped = []
    for j, name in enumerate(matrix.gene_names):
        try:
            ranked.append((-coefficient_of_variation(matrix.values[:, j]), name, j))
        except ZeroMeanGene:
            skipped.append(name)
    if not ranked:
        raise EmptyMatrix("every gene has zero mean")
    ranked.sort()
    keep = [j for _, _, j in ranked[:top_k]]
    spec = PreprocessSpec(
        top_k=top_k,
        negation=negation,
        selected_gene_indices=keep,
        selected_gene_names=[matrix.gene_names[j] for j in keep],
        skipped_genes=skipped,
    )
    return spec, matrix.subset_genes(keep)


def _values(matrix):
    return matrix.values if isinstance(matrix, ExpressionMatrix) else np.asarray(matrix, dtype=np.float64)


def _rewrap(matrix, values):
    return matrix.with_values(values) if isinstance(matrix, ExpressionMatrix) else values


def zero_negate(matrix, n: float = DEFAULT_NEGATION):
    """Replace exact zeros by the negative constant ``n``."""
    if not n < 0:
        raise InputError(f"negation value must be negative, got {n}")
    x = _values(matrix)
    if (x < 0).any():
        raise NotRaw("matrix already contains negative values")
    return _rewrap(matrix, np.where(x == 0.0, float(n), x))


def truncate_negatives(matrix):
    """Clamp every negative value to exactly 0.0."""
    x = _values(matrix)
    return _rewrap(matrix, np.where(x < 0, 0.0, x))


def preprocess(matrix: ExpressionMatrix, top_k: int = DEFAULT_TOP_K,
               negation: float = DEFAULT_NEGATION):
    """Hypervariable selection followed by zero negation."""
    spec, reduced = select_hypervariable(matrix, top_k, negation)
    return spec, zero_negate(reduced, negation)


# -- CSV --------------------------------------------------------------------
def _check_name(name: str, row: int, col: int) -> None:
    if not _NAME_RE.match(name):
        raise ParseError(f"invalid name {name!r}", row=row, column=col)


def load_csv(path, raw: bool = True) -> ExpressionMatrix:
    """Read ``cell_id,<gene1>,...`` CSV. ``raw`` rejects negative values."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file, header row missing", row=1)
    header = lines[0].split(",")
    if len(header) < 2 or header[0] != "cell_id":
        raise ParseError(f"{path}: header must start with 'cell_id' and name at least one gene", row=1)
    genes = header[1:]
    seen = set()
    for c, g in enumerate(genes, start=2):
        _check_name(g, 1, c)
        if g in seen:
            raise DuplicateGene(f"{path}: duplicate gene name {g!r} in header column {c}")
        seen.add(g)
    cells, rows = [], []
    for r, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split(",")
        if len(fields) != len(header):
            raise ParseError(f"{path}: expected {len(header)} fields, got {len(fields)}", row=r)
        _check_name(fields[0], r, 1)
        vals = []
        for c, tok in enumerate(fields[1:], start=2):
            try:
                v = float(tok)
            except ValueError:
                raise ParseError(f"{path}: cannot parse {tok!r} as a number", row=r, column=c) from None
            if not np.isfinite(v):
                raise ParseError(f"{path}: non-finite value {tok!r}", row=r, column=c)
            if raw and v < 0:
                raise NegativeValue(f"{path}: negative value {tok} at row {r}, column {c}")
            vals.append(v)
        cells.append(fields[0])
        rows.append(vals)
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(genes))
    return ExpressionMatrix(values, genes, cells)


def save_csv(matrix: ExpressionMatrix, path) -> None:
    """Write with shortest round-trip float formatting."""
    ids = matrix.cell_ids if matrix.cell_ids is not None else [f"cell{i}" for i in range(matrix.n_cells)]
    for c, g in enumerate(matrix.gene_names, start=2):
        _check_name(g, 1, c)
    out = ["cell_id," + ",".join(matrix.gene_names)]
    for cid, row in zip(ids, matrix.values):
        out.append(cid + "," + ",".join(repr(float(v)) for v in row))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")

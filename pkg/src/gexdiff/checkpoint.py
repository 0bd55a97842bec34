"""Binary checkpoint format.

Layout (all integers and floats little-endian)::

    b"SCRD"                      magic
    u32                          format version (1)
    u32 n_genes, u32 patch_size, u32 hidden_size, u32 n_blocks, u32 n_heads,
    f64 mlp_ratio, u32 t_embed_dim
    u32 T, f64 beta_start, f64 beta_end
    u32 top_k, f64 negation, u32 n_names, n_names x str
    u32 n_params, n_params x (str name, u32 ndims, ndims x u64 dim, f64 values...)

where ``str`` is a u32 byte length followed by UTF-8 bytes.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import PreprocessSpec
from .denoiser import DenoiserConfig, DenoiserModel
from .errors import CheckpointError
from .schedule import NoiseSchedule, linear_schedule

MAGIC = b"SCRD"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    model: DenoiserModel
    schedule: NoiseSchedule
    preprocess: PreprocessSpec

    @property
    def gene_names(self) -> list[str]:
        return list(self.preprocess.selected_gene_names)


def _put_str(buf, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)


def encode(model: DenoiserModel, schedule: NoiseSchedule, preprocess: PreprocessSpec) -> bytes:
    cfg = model.config
    if schedule.T != model.n_timesteps:
        raise CheckpointError(f"model expects T={model.n_timesteps}, schedule has T={schedule.T}")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<5IdI", cfg.n_genes, cfg.patch_size, cfg.hidden_size, cfg.n_blocks,
                          cfg.n_heads, cfg.mlp_ratio, cfg.t_embed_dim))
    buf.write(struct.pack("<Idd", schedule.T, schedule.beta_start, schedule.beta_end))
    buf.write(struct.pack("<Id", preprocess.top_k, preprocess.negation))
    buf.write(struct.pack("<I", len(preprocess.selected_gene_names)))
    for name in preprocess.selected_gene_names:
        _put_str(buf, name)
    buf.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        _put_str(buf, name)
        buf.write(struct.pack("<I", p.data.ndim))
        buf.write(struct.pack(f"<{p.data.ndim}Q", *p.data.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return buf.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def string(self) -> str:
        (n,) = self.take("<I")
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        raw = self.data[self.pos:self.pos + n]
        self.pos += n
        return raw.decode("utf-8")

    def floats(self, count: int) -> np.ndarray:
        size = 8 * count
        if self.pos + size > len(self.data):
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.pos).astype(np.float64)
        self.pos += size
        return arr


def decode(data: bytes) -> Checkpoint:
    if data[:4] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic bytes)")
    r = _Reader(data)
    r.pos = 4
    (version,) = r.take("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    n_genes, patch, hidden, blocks, heads, mlp_ratio, t_dim = r.take("<5IdI")
    cfg = DenoiserConfig(n_genes, patch, hidden, blocks, heads, mlp_ratio)
    if t_dim != cfg.t_embed_dim:
        raise CheckpointError(f"t_embed_dim {t_dim} != hidden size {cfg.hidden_size}")
    T, beta_start, beta_end = r.take("<Idd")
    top_k, negation = r.take("<Id")
    (n_names,) = r.take("<I")
    names = [r.string() for _ in range(n_names)]
    (n_params,) = r.take("<I")
    params = {}
    for _ in range(n_params):
        name = r.string()
        (ndim,) = r.take("<I")
        shape = r.take(f"<{ndim}Q")
        params[name] = r.floats(int(np.prod(shape, dtype=np.int64))).reshape(shape)
    if r.pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint payload")
    model = DenoiserModel(cfg, n_timesteps=T, params=params)
    schedule = linear_schedule(T, beta_start, beta_end)
    spec = PreprocessSpec(top_k=top_k, negation=negation, selected_gene_names=names)
    return Checkpoint(model, schedule, spec)


def save(path, model: DenoiserModel, schedule: NoiseSchedule, preprocess: PreprocessSpec) -> None:
    Path(path).write_bytes(encode(model, schedule, preprocess))


def load(path) -> Checkpoint:
    return decode(Path(path).read_bytes())


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()

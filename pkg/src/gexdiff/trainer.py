"""Noise-prediction training loop with Adam and resumable state."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from . import tensor as tc
from .dataset import ExpressionMatrix, PreprocessSpec
from .denoiser import DenoiserModel
from .errors import InvalidConfig, NonFinite, ShapeMismatch
from .rng import Xoshiro256
from .schedule import NoiseSchedule, q_sample_batch
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 1e-4
    b1: float = 0.9
    b2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    checkpoint_every: int = 0  # 0 writes only the final checkpoint
    log_every: int = 10

    def __post_init__(self):
        if int(self.epochs) < 1:
            raise InvalidConfig(f"epochs must be >= 1, got {self.epochs}")
        if int(self.batch_size) < 1:
            raise InvalidConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise InvalidConfig(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0 <= self.b1 < 1 and 0 <= self.b2 < 1 and self.eps > 0):
            raise InvalidConfig("need 0 <= b1, b2 < 1 and eps > 0")
        if self.checkpoint_every < 0 or self.log_every < 0:
            raise InvalidConfig("checkpoint_every and log_every must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfig(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


class Adam:
    """Adaptive moment estimation with bias-corrected first/second moments."""

    def __init__(self, params: dict[str, Tensor], lr: float, b1: float = 0.9, b2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        c1 = 1.0 - self.b1 ** self.step_count
        c2 = 1.0 - self.b2 ** self.step_count
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            v = self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainState:
    epoch: int
    step: int
    running_loss: float
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    rng_state: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    def save(self, path) -> None:
        arrays = {f"m/{k}": a for k, a in self.m.items()}
        arrays.update({f"v/{k}": a for k, a in self.v.items()})
        np.savez(path, epoch=self.epoch, step=self.step, running_loss=self.running_loss,
                 rng_state=self.rng_state, loss_history=np.array(self.loss_history, dtype=np.float64),
                 **arrays)

    @classmethod
    def load(cls, path) -> "TrainState":
        with np.load(path) as z:
            m = {k[2:]: z[k] for k in z.files if k.startswith("m/")}
            v = {k[2:]: z[k] for k in z.files if k.startswith("v/")}
            return cls(int(z["epoch"]), int(z["step"]), float(z["running_loss"]), m, v,
                       z["rng_state"].astype(np.uint64), [float(x) for x in z["loss_history"]])


@dataclass
class TrainResult:
    model: DenoiserModel
    loss_history: list[float]
    state: TrainState


def draw_timesteps(batch_size: int, T: int, rng: Xoshiro256) -> np.ndarray:
    """i.i.d. uniform integers in ``[1, T]``."""
    if T < 1:
        raise InvalidConfig(f"T must be >= 1, got {T}")
    return rng.integers(1, T, batch_size)


def loss(model, x0: np.ndarray, t: np.ndarray, eps: np.ndarray, s: NoiseSchedule) -> Tensor:
    """Mean squared error between true and predicted noise."""
    x0, eps = np.asarray(x0, dtype=np.float64), np.asarray(eps, dtype=np.float64)
    if x0.shape != eps.shape or x0.shape[0] != len(t):
        raise ShapeMismatch(f"x0 {x0.shape}, eps {eps.shape} and {len(t)} timesteps disagree")
    pred = model(q_sample_batch(x0, t, eps, s), t)
    if not isinstance(pred, Tensor):
        pred = Tensor(pred)
    d = pred - Tensor(eps)
    return (d * d).mean()


def _checkpoint_paths(out_dir: Path, epoch: int) -> tuple[Path, Path]:
    return out_dir / f"epoch_{epoch:05d}.ckpt", out_dir / f"epoch_{epoch:05d}.state.npz"


def train(model: DenoiserModel, matrix, s: NoiseSchedule, cfg: TrainConfig,
          out_dir=None, preprocess: PreprocessSpec | None = None,
          resume: TrainState | None = None) -> TrainResult:
    """Fit ``model`` to the rows of ``matrix`` (already preprocessed).

    One epoch is a seeded shuffle of all cells split into mini-batches, each
    row getting its own timestep and noise draw. With ``out_dir`` set, model
    checkpoints and optimizer state are written every ``checkpoint_every``
    epochs and after the last one (``final.ckpt``).
    """
    x = matrix.values if isinstance(matrix, ExpressionMatrix) else np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.config.n_genes:
        raise ShapeMismatch(f"data has shape {x.shape}, model expects {model.config.n_genes} genes")
    if model.n_timesteps != s.T:
        raise InvalidConfig(f"model built for T={model.n_timesteps}, schedule has T={s.T}")
    if preprocess is None:
        names = matrix.gene_names if isinstance(matrix, ExpressionMatrix) else \
            [f"gene{i}" for i in range(x.shape[1])]
        preprocess = PreprocessSpec(top_k=len(names), selected_gene_names=list(names))
    n = x.shape[0]
    opt = Adam(model.params, cfg.learning_rate, cfg.b1, cfg.b2, cfg.eps)
    if resume is None:
        rng = Xoshiro256(cfg.seed)
        history: list[float] = []
        start_epoch = 0
    else:
        rng = Xoshiro256.from_state(resume.rng_state)
        history = list(resume.loss_history)
        start_epoch = resume.epoch
        opt.step_count = resume.step
        opt.m = {k: a.copy() for k, a in resume.m.items()}
        opt.v = {k: a.copy() for k, a in resume.v.items()}
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    def snapshot(epoch):
        return TrainState(epoch, opt.step_count, history[-1] if history else float("nan"),
                          {k: a.copy() for k, a in opt.m.items()},
                          {k: a.copy() for k, a in opt.v.items()}, rng.state, list(history))

    for epoch in range(start_epoch + 1, cfg.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for b, lo in enumerate(range(0, n, cfg.batch_size)):
            rows = order[lo:lo + cfg.batch_size]
            t = draw_timesteps(len(rows), s.T, rng)
            eps = rng.normal((len(rows), x.shape[1]))
            model.zero_grad()
            try:
                value = loss(model, x[rows], t, eps, s)
                value.backward()
                opt.step()
            except NonFinite as err:
                raise NonFinite(f"epoch {epoch}, batch {b}: {err}") from err
            if not all(np.isfinite(p.data).all() for p in model.parameters()):
                raise NonFinite(f"epoch {epoch}, batch {b}: parameters became non-finite")
            total += value.item() * len(rows)
        history.append(total / n)
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("epoch %d mean loss %.6f", epoch, history[-1])
        if out_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            ck, st = _checkpoint_paths(out_dir, epoch)
            checkpoint.save(ck, model, s, preprocess)
            snapshot(epoch).save(st)
    state = snapshot(cfg.epochs)
    if out_dir is not None:
        checkpoint.save(out_dir / "final.ckpt", model, s, preprocess)
        state.save(out_dir / "final.state.npz")
        write_loss_csv(out_dir / "loss.csv", history)
    return TrainResult(model, history, state)


def write_loss_csv(path, history) -> None:
    lines = ["epoch,mean_loss"] + [f"{i},{v!r}" for i, v in enumerate(history, start=1)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def resume_from(out_dir, epoch: int) -> tuple[checkpoint.Checkpoint, TrainState]:
    ck, st = _checkpoint_paths(Path(out_dir), epoch)
    return checkpoint.load(ck), TrainState.load(st)


def no_grad_eval_loss(model, x0, t, eps, s) -> float:
    with tc.no_grad():
        return loss(model, x0, t, eps, s).item()

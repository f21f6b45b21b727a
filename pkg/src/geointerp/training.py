"""Training loop for the velocity and score fields, optimiser and checkpoints."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .distributions import SampleSet
from .errors import ConfigError
from .fields import SMOOTH_ACTIVATIONS, FieldNet, score_loss_ism, velocity_loss
from .interpolant import build_batch, cut_locus_mask
from .manifold import SPHERE

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "geointerp-fieldnet"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    iterations: int = 5000
    batch_size: int = 512
    learning_rate: float = 3e-3
    weight_decay: float = 0.0
    lr_step: int = 2500
    lr_gamma: float = 0.7
    seed: int = 0
    eval_every: int = 10
    # None -> same as learning_rate
    score_learning_rate: float | None = None

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be nonnegative")
        if self.batch_size < 1 or self.lr_step < 1 or self.eval_every < 1:
            raise ConfigError("batch_size, lr_step and eval_every must be positive")
        if self.learning_rate <= 0 or (self.score_learning_rate is not None and self.score_learning_rate <= 0):
            raise ConfigError("learning rates must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be nonnegative")
        if not 0.0 < self.lr_gamma <= 1.0:
            raise ConfigError("lr_gamma must lie in (0, 1]")


class AdamW:
    """Adam moments with decoupled weight decay."""

    def __init__(self, size: int, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps

    def step(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.b1 * self.m + (1.0 - self.b1) * grad
        self.v = self.b2 * self.v + (1.0 - self.b2) * grad * grad
        mhat = self.m / (1.0 - self.b1**self.t)
        vhat = self.v / (1.0 - self.b2**self.t)
        params = params * (1.0 - lr * self.weight_decay)
        return params - lr * mhat / (np.sqrt(vhat) + self.eps)


def step_lr(base: float, iteration: int, step: int, gamma: float) -> float:
    return base * gamma ** (iteration // step)


@dataclass
class LossTrace:
    """Window-averaged losses, one row every ``eval_every`` iterations."""

    iterations: list[int] = field(default_factory=list)
    velocity: list[float] = field(default_factory=list)
    score: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.iterations)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iteration,velocity_loss,score_loss\n")
            for it, v, s in zip(self.iterations, self.velocity, self.score):
                fh.write(f"{it},{v!r},{s!r}\n")


@dataclass
class TrainResult:
    velocity: FieldNet
    score: FieldNet | None
    trace: LossTrace


def _pair_batch(rng, prior: Callable, data: np.ndarray, size: int):
    x1 = data[rng.integers(0, len(data), size)]
    x0 = prior(rng, size)
    bad = ~cut_locus_mask(SPHERE, x0, x1)
    while np.any(bad):
        x0[bad] = prior(rng, int(bad.sum()))
        bad = ~cut_locus_mask(SPHERE, x0, x1)
    return x0, x1


def train(velocity_net: FieldNet, score_net: FieldNet | None, prior: Callable,
          data, cfg: TrainConfig) -> TrainResult:
    """Fit the velocity (and optionally score) field on geodesic interpolants.

    ``prior(rng, m)`` returns ``m`` prior points; ``data`` is a SampleSet or an
    ``(N, d)`` array on the same sphere.  Each iteration draws one shared batch
    of ``(t, x0, x1)`` triples and takes one AdamW step per network.  Input
    networks are copied, never modified.
    """
    pts = data.points if isinstance(data, SampleSet) else np.asarray(data, dtype=np.float64)
    if isinstance(data, SampleSet) and data.manifold != SPHERE:
        raise ConfigError("training runs on sphere routes; embed SO(3) data into S^5 first")
    if pts.ndim != 2 or len(pts) == 0:
        raise ConfigError("training data must be a nonempty (N, d) array")
    d = pts.shape[1]
    if velocity_net.ambient_dim != d:
        raise ConfigError(f"velocity net emits {velocity_net.ambient_dim}-vectors, data is {d}-dimensional")
    if score_net is not None:
        if score_net.ambient_dim != d:
            raise ConfigError(f"score net emits {score_net.ambient_dim}-vectors, data is {d}-dimensional")
        if score_net.activation not in SMOOTH_ACTIVATIONS:
            raise ConfigError("the score net needs a smooth activation for the divergence term")

    vnet = velocity_net.copy()
    snet = score_net.copy() if score_net is not None else None
    trace = LossTrace()
    if cfg.iterations == 0:
        return TrainResult(vnet, snet, trace)

    rng = np.random.default_rng(cfg.seed)
    opt_v = AdamW(vnet.num_params, cfg.weight_decay)
    opt_s = AdamW(snet.num_params, cfg.weight_decay) if snet is not None else None
    lr_s0 = cfg.score_learning_rate or cfg.learning_rate
    acc_v = acc_s = 0.0
    window = 0
    for it in range(cfg.iterations):
        t = rng.random(cfg.batch_size)
        x0, x1 = _pair_batch(rng, prior, pts, cfg.batch_size)
        batch = build_batch(SPHERE, t, x0, x1)

        lv, gv = velocity_loss(vnet, batch)
        vnet.set_flat(opt_v.step(vnet.get_flat(), gv, step_lr(cfg.learning_rate, it, cfg.lr_step, cfg.lr_gamma)))
        acc_v += lv
        if snet is not None:
            ls, gs = score_loss_ism(snet, batch)
            snet.set_flat(opt_s.step(snet.get_flat(), gs, step_lr(lr_s0, it, cfg.lr_step, cfg.lr_gamma)))
            acc_s += ls
        window += 1
        if (it + 1) % cfg.eval_every == 0:
            trace.iterations.append(it + 1)
            trace.velocity.append(acc_v / window)
            trace.score.append(acc_s / window if snet is not None else float("nan"))
            acc_v = acc_s = 0.0
            window = 0
            if (it + 1) % (50 * cfg.eval_every) == 0:
                log.info("iter %d  velocity %.5f  score %.5f", it + 1, trace.velocity[-1], trace.score[-1])
    return TrainResult(vnet, snet, trace)


# ---------------------------------------------------------------------------
# Checkpoints: one JSON header line, then raw little-endian float64 parameters
# ---------------------------------------------------------------------------


def save_checkpoint(path, net: FieldNet) -> None:
    payload = net.get_flat().astype("<f8").tobytes()
    header = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_dims": net.layer_dims,
        "activation": net.activation,
        "time_freqs": net.time_freqs,
        "num_params": net.num_params,
        "sha256": hashlib.sha256(payload).hexdigest(),
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(payload)


def load_checkpoint(path, expected_dims: list[int] | None = None,
                    ambient_dim: int | None = None) -> FieldNet:
    raw = Path(path).read_bytes()
    head, sep, payload = raw.partition(b"\n")
    if not sep:
        raise ConfigError(f"{path}: truncated checkpoint")
    try:
        header = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ConfigError(f"{path}: unreadable checkpoint header") from None
    if header.get("format") != CHECKPOINT_FORMAT or header.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint format")
    if hashlib.sha256(payload).hexdigest() != header["sha256"]:
        raise ConfigError(f"{path}: checksum mismatch")
    dims = list(header["layer_dims"])
    if expected_dims is not None and dims != list(expected_dims):
        raise ConfigError(f"{path}: layer dims {dims} != expected {list(expected_dims)}")
    if ambient_dim is not None and dims[-1] != ambient_dim:
        raise ConfigError(f"{path}: network emits {dims[-1]}-vectors, route needs {ambient_dim}")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    net = FieldNet.zeros(dims[-1], dims[1:-1], header["activation"], header["time_freqs"])
    if net.layer_dims != dims:
        raise ConfigError(f"{path}: inconsistent layer dims")
    net.set_flat(flat)
    return net


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)

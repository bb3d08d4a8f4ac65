"""Adam training of the equilibrium denoiser.

Each optimizer step processes one batch of (noisy, clean) crops: solve the
fixed point without gradients, unroll a few layer steps from the solution,
backpropagate the reconstruction loss through the unroll only, and apply a
bias-corrected Adam update. The learning rate halves on a fixed epoch
period. Samples whose forward solve diverges are skipped; an epoch that
loses more than half its samples aborts the run. Everything is a
deterministic function of (dataset, config, seed).
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from . import metrics
from .errors import (
    DivergenceError,
    NonFiniteError,
    ShapeError,
    TrainingAbortedError,
)
from .grad import phantom_backward, unroll_forward
from .model import ModelConfig, init_model_params, reconstruct
from .solver import SolverConfig, solve_equilibrium


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch: int = 8
    epochs: int = 30
    lr_half_period: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    phantom_len: int = 5
    grad_clip: float = 0.0  # 0 disables; >0 clips the global grad norm
    crop: int = 32
    seed: int = 0
    max_steps: int = 0  # 0 means no cap
    solver: SolverConfig = field(default_factory=SolverConfig)

    def validate(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch < 1 or self.epochs < 1:
            raise ValueError("batch and epochs must be >= 1")
        if self.lr_half_period < 1:
            raise ValueError(
                f"lr_half_period must be >= 1, got {self.lr_half_period}"
            )
        if not 0.0 <= self.adam_beta1 < 1.0 or not 0.0 <= self.adam_beta2 < 1.0:
            raise ValueError("adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError(f"adam_eps must be positive, got {self.adam_eps}")
        if self.phantom_len < 1:
            raise ValueError(f"phantom_len must be >= 1, got {self.phantom_len}")
        if self.grad_clip < 0:
            raise ValueError(f"grad_clip must be >= 0, got {self.grad_clip}")
        if self.crop < 1:
            raise ValueError(f"crop must be >= 1, got {self.crop}")
        if self.max_steps < 0:
            raise ValueError(f"max_steps must be >= 0, got {self.max_steps}")
        self.solver.validate()


def lr_at(cfg, epoch):
    """Halving schedule: lr * 0.5 ** (epoch // period), exact in floats."""
    return cfg.lr * 0.5 ** (epoch // cfg.lr_half_period)


def loss(xhat, x):
    """Squared Frobenius distance for one pair; batches average this."""
    xhat = np.asarray(xhat, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if xhat.shape != x.shape:
        raise ShapeError(f"shape mismatch: {xhat.shape} vs {x.shape}")
    delta = xhat - x
    return float(np.sum(delta * delta))


def batch_loss(pairs):
    """Mean squared Frobenius distance over a batch of (estimate, target)."""
    if not pairs:
        raise ValueError("batch must be non-empty")
    return float(np.mean([loss(a, b) for a, b in pairs]))


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0


def init_adam(params):
    leaves = dict(params.leaves())
    return AdamState(
        m={k: np.zeros_like(a) for k, a in leaves.items()},
        v={k: np.zeros_like(a) for k, a in leaves.items()},
    )


def grad_norm(grads):
    return float(np.sqrt(sum(np.sum(g * g) for g in grads.values())))


def clip_grads(grads, max_norm):
    """Scale all leaves so the global norm is at most max_norm."""
    norm = grad_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


def adam_step(params, grads, state, cfg, lr=None):
    """Bias-corrected Adam update. Non-finite gradients, or finite ones so
    large the squared moments overflow, skip the update and leave params and
    moments untouched; returns (params, state, stepped)."""
    if lr is None:
        lr = cfg.lr
    for g in grads.values():
        if not np.all(np.isfinite(g)):
            return params, state, False
    if cfg.grad_clip > 0.0:
        grads, _ = clip_grads(grads, cfg.grad_clip)
    t = state.step + 1
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    new_leaves, new_m, new_v = [], {}, {}
    with np.errstate(over="ignore", invalid="ignore"):
        for name, p in params.leaves():
            g = grads[name]
            m = b1 * state.m[name] + (1.0 - b1) * g
            v = b2 * state.v[name] + (1.0 - b2) * g * g
            upd = p - lr * (m / (1.0 - b1**t)) / (np.sqrt(v / (1.0 - b2**t)) + eps)
            if not (np.all(np.isfinite(v)) and np.all(np.isfinite(upd))):
                return params, state, False
            new_m[name], new_v[name] = m, v
            new_leaves.append(upd)
    state.m, state.v = new_m, new_v
    state.step = t
    return params.with_leaves(new_leaves), state, True


@dataclass
class StepRecord:
    epoch: int
    step: int
    loss: float
    lr: float
    mean_solver_iters: float


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    lr: float
    val_psnr: float
    skipped_samples: int


@dataclass
class TrainLog:
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    skipped_samples: int = 0
    skipped_steps: int = 0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "step", "loss", "lr", "mean_solver_iters"])
            for r in self.steps:
                w.writerow(
                    [r.epoch, r.step, repr(r.loss), repr(r.lr), repr(r.mean_solver_iters)]
                )

    def write_epochs_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mean_loss", "lr", "val_psnr", "skipped_samples"])
            for r in self.epochs:
                w.writerow(
                    [r.epoch, repr(r.mean_loss), repr(r.lr), repr(r.val_psnr), r.skipped_samples]
                )


def _check_dataset(dataset):
    if not dataset:
        raise ValueError("dataset must be non-empty")
    bands = None
    for y, x in dataset:
        if y.shape != x.shape or y.ndim != 3:
            raise ShapeError(f"bad pair shapes {y.shape} vs {x.shape}")
        if bands is None:
            bands = y.shape[0]
        elif y.shape[0] != bands:
            raise ShapeError("all cubes must share the band count")
    return bands


def _crop_pair(y, x, size, rng):
    h, w = y.shape[1], y.shape[2]
    if h < size or w < size:
        raise ShapeError(f"cube {y.shape} smaller than crop {size}")
    r = int(rng.integers(0, h - size + 1))
    c = int(rng.integers(0, w - size + 1))
    return (
        np.ascontiguousarray(y[:, r : r + size, c : c + size]),
        np.ascontiguousarray(x[:, r : r + size, c : c + size]),
    )


def _sample_grad(params, yc, xc, cfg):
    """Loss, gradient dict, and solver iterations for one crop; None if the
    forward solve diverged or went non-finite."""
    try:
        state, trace = solve_equilibrium(params, yc, cfg.solver)
        final, tape = unroll_forward(state, yc, cfg.phantom_len, params)
    except (DivergenceError, NonFiniteError):
        return None
    xhat = reconstruct(final, params)
    delta = xhat - xc
    grads = phantom_backward(tape, 2.0 * delta, params)
    return float(np.sum(delta * delta)), grads, trace.iterations


def validation_psnr(params, val_set, cfg):
    """Mean band-wise PSNR of the denoised output over (noisy, clean) pairs;
    diverged solves are excluded, NaN if nothing survives."""
    scores = []
    for yv, xv in val_set:
        try:
            state, _ = solve_equilibrium(params, yv, cfg.solver)
        except (DivergenceError, NonFiniteError):
            continue
        scores.append(metrics.psnr(reconstruct(state, params), xv))
    return float(np.mean(scores)) if scores else float("nan")


def train(dataset, cfg, model_cfg=None, params=None, val_set=None):
    """Optimize ModelParams on (noisy, clean) pairs; returns (params, log)."""
    cfg.validate()
    bands = _check_dataset(dataset)
    init_ss, loop_ss = np.random.SeedSequence(cfg.seed).spawn(2)
    if params is None:
        params = init_model_params(
            model_cfg or ModelConfig(), bands, np.random.default_rng(init_ss)
        )
    adam = init_adam(params)
    rng = np.random.default_rng(loop_ss)
    log = TrainLog()
    gstep = 0
    capped = False
    for epoch in range(cfg.epochs):
        lr = lr_at(cfg, epoch)
        order = rng.permutation(len(dataset))
        seen = skipped = 0
        epoch_losses = []
        for start in range(0, len(order), cfg.batch):
            samples = []
            iters = []
            for i in order[start : start + cfg.batch]:
                y, x = dataset[int(i)]
                yc, xc = _crop_pair(y, x, cfg.crop, rng)
                seen += 1
                out = _sample_grad(params, yc, xc, cfg)
                if out is None:
                    skipped += 1
                    log.skipped_samples += 1
                    continue
                samples.append(out[:2])
                iters.append(out[2])
            if not samples:
                continue
            n = len(samples)
            grads = {
                k: sum(s[1][k] for s in samples) / n for k in samples[0][1]
            }
            bloss = float(np.mean([s[0] for s in samples]))
            params, adam, stepped = adam_step(params, grads, adam, cfg, lr=lr)
            if not stepped:
                log.skipped_steps += 1
            gstep += 1
            log.steps.append(
                StepRecord(epoch, gstep, bloss, lr, float(np.mean(iters)))
            )
            epoch_losses.append(bloss)
            if cfg.max_steps and gstep >= cfg.max_steps:
                capped = True
                break
        if seen and skipped / seen > 0.5:
            raise TrainingAbortedError(
                f"epoch {epoch}: {skipped}/{seen} samples skipped"
            )
        val = validation_psnr(params, val_set, cfg) if val_set else float("nan")
        mean_loss = float(np.mean(epoch_losses)) if epoch_losses else float("nan")
        log.epochs.append(EpochRecord(epoch, mean_loss, lr, val, skipped))
        if capped:
            break
    return params, log

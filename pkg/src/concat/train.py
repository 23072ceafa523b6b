"""Training loop, batch evaluation and finite-difference gradient verification."""
from __future__ import annotations

import copy
import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

from .metrics import msle
from .model import ConCat, Example, ModelConfig, cascade_losses, collate
from .solvers import SolverError, SolverSpec
from .tpp import inverse_softplus

logger = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    """A loss or gradient went non-finite."""


@dataclass
class TrainingConfig:
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    clip_norm: float = 5.0
    patience: int | None = None
    init_output_bias: bool = True
    init_intensity_bias: bool = True
    lr_schedule: str = "constant"  # or "cosine": anneal to zero over `epochs`
    amsgrad: bool = False

    def __post_init__(self):
        if self.lr < 0 or self.batch_size < 1 or self.epochs < 0 or self.clip_norm <= 0:
            raise ValueError("invalid training configuration")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")


@contextmanager
def seeded(seed: int):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def init_model(cfg: ModelConfig, seed: int) -> ConCat:
    torch.use_deterministic_algorithms(True)
    with seeded(seed):
        return ConCat(cfg)


def _batches(items: Sequence, size: int):
    for i in range(0, len(items), size):
        yield items[i:i + size]


@torch.no_grad()
def predict(model: ConCat, examples: Sequence[Example], spec: SolverSpec,
            batch_size: int = 64, no_align: bool | None = None):
    """Predictions and per-cascade losses, in input order."""
    preds, losses = [], []
    for chunk in _batches(list(examples), batch_size):
        batch = collate(chunk)
        p, traj = model(batch, spec, no_align=no_align)
        preds.append(p.numpy())
        losses.append(cascade_losses(batch.labels, p, traj, model.cfg).numpy())
    return np.concatenate(preds), np.concatenate(losses)


@dataclass
class TrainResult:
    model: ConCat
    log: list = field(default_factory=list)
    best_epoch: int | None = None


def _guard(losses: torch.Tensor, ids):
    bad = ~torch.isfinite(losses)
    if bool(bad.any()):
        culprits = [cid for cid, b in zip(ids, bad.tolist()) if b]
        raise NumericalError(f"non-finite loss for cascades {culprits}")


def train(train_set: Sequence[Example], val_set: Sequence[Example] | None,
          model_cfg: ModelConfig, cfg: TrainingConfig, spec: SolverSpec,
          eval_spec: SolverSpec | None = None, model: ConCat | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> TrainResult:
    """Adam on the mean per-cascade loss; returns the best-validation model.

    Without a validation set the final parameters are returned. Training is
    deterministic for a fixed seed and a fixed-step solver.
    """
    if not train_set:
        raise ValueError("empty training set")
    eval_spec = eval_spec or spec
    model = model or init_model(model_cfg, cfg.seed)
    if not model_cfg.no_tpp:
        arrivals = np.mean([len(e.times) - (0 if model_cfg.include_root_intensity else 1)
                            for e in train_set])
        with torch.no_grad():
            model.head.compensator_scale.fill_(max(float(arrivals), 1.0))
            if cfg.init_intensity_bias:
                # start from the constant-rate maximum-likelihood fit
                horizon = np.mean([e.observation_time for e in train_set])
                model.intensity.linear.bias.fill_(inverse_softplus(max(arrivals / horizon, 1e-3)))
    if cfg.init_output_bias:
        labels = np.array([e.label for e in train_set], dtype=float)
        target = max(2.0 ** np.mean(np.log2(labels + 1)) - 1.0, 1e-3)
        with torch.no_grad():
            model.head.output_layer.bias.fill_(inverse_softplus(target))
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr, amsgrad=cfg.amsgrad)
    sched = None
    if cfg.lr_schedule == "cosine" and cfg.epochs > 0:
        sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.epochs)
    rng = np.random.default_rng(cfg.seed)
    train_set = list(train_set)

    result = TrainResult(model=model)
    best_val, best_state, stale = math.inf, None, 0
    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = rng.permutation(len(train_set))
        total, preds, labels = 0.0, [], []
        for idx in _batches(order, cfg.batch_size):
            batch = collate([train_set[i] for i in idx])
            try:
                p, traj = model(batch, spec)
            except SolverError as exc:
                raise NumericalError(f"solver failed on cascades {batch.ids}: {exc}") from exc
            losses = cascade_losses(batch.labels, p, traj, model_cfg)
            _guard(losses, batch.ids)
            opt.zero_grad()
            losses.mean().backward()
            grad_norm = torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.clip_norm)
            if not torch.isfinite(grad_norm):
                raise NumericalError(f"non-finite gradient on cascades {batch.ids}")
            opt.step()
            total += float(losses.detach().sum())
            preds.append(p.detach().numpy())
            labels.append(batch.labels.numpy())
        if sched is not None:
            sched.step()
        row = {"epoch": epoch, "train_loss": total / len(train_set),
               "train_msle": msle(np.concatenate(labels), np.concatenate(preds))}
        if val_set:
            model.eval()
            vp, vl = predict(model, val_set, eval_spec, cfg.batch_size)
            row["val_loss"] = float(vl.mean())
            row["val_msle"] = msle([e.label for e in val_set], vp)
            if row["val_msle"] < best_val:
                best_val, stale = row["val_msle"], 0
                best_state = copy.deepcopy(model.state_dict())
                result.best_epoch = epoch
            else:
                stale += 1
        result.log.append(row)
        if on_epoch:
            on_epoch(row)
        logger.info("epoch %d %s", epoch, {k: round(v, 6) for k, v in row.items() if k != "epoch"})
        if cfg.patience is not None and val_set and stale >= cfg.patience:
            logger.info("early stop at epoch %d (best %s)", epoch, result.best_epoch)
            break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    return result


# ---------------------------------------------------------------------------
# gradient verification


@dataclass
class GradcheckResult:
    max_rel_error: float
    checked: int
    excluded: int
    worst: tuple | None  # (parameter name, flat index, analytic, finite difference)


def total_loss(model: ConCat, batch, spec: SolverSpec) -> torch.Tensor:
    p, traj = model(batch, spec)
    return cascade_losses(batch.labels, p, traj, model.cfg).mean()


def gradcheck(model: ConCat, examples: Sequence[Example], spec: SolverSpec,
              epsilon: float = 1e-5, threshold: float = 1e-8, stencil: int = 2) -> GradcheckResult:
    """Compare autograd against central differences for every scalar parameter.

    ``stencil`` is 2 (``f(x+e) - f(x-e)``) or 4 (fourth-order central
    weights); the wider stencil tolerates a larger ``epsilon`` and so loses
    less to round-off on small derivatives. Entries where both derivatives
    are at most ``threshold`` in magnitude are excluded from the maximum.
    """
    if spec.adaptive:
        raise ValueError("gradcheck needs a fixed-step solver")
    if stencil not in (2, 4):
        raise ValueError("stencil must be 2 or 4")
    offsets = {2: ((1, 0.5), (-1, -0.5)), 4: ((2, -1 / 12), (1, 8 / 12), (-1, -8 / 12), (-2, 1 / 12))}[stencil]
    batch = collate(list(examples))
    model.zero_grad()
    total_loss(model, batch, spec).backward()
    worst, max_rel, checked, excluded = None, 0.0, 0, 0
    with torch.no_grad():
        for name, param in model.named_parameters():
            analytic = (param.grad if param.grad is not None else torch.zeros_like(param)).reshape(-1)
            flat = param.data.view(-1)
            for k in range(flat.numel()):
                orig = flat[k].item()
                fd = 0.0
                for step, weight in offsets:
                    flat[k] = orig + step * epsilon
                    fd += weight * total_loss(model, batch, spec).item()
                flat[k] = orig
                fd /= epsilon
                a = analytic[k].item()
                scale = max(abs(a), abs(fd))
                if scale <= threshold:
                    excluded += 1
                    continue
                checked += 1
                rel = abs(a - fd) / scale
                if rel > max_rel:
                    max_rel, worst = rel, (name, k, a, fd)
    model.zero_grad()
    return GradcheckResult(max_rel, checked, excluded, worst)


def toy_examples(cascade_dim: int = 4, global_dim: int = 4, seed: int = 0,
                 times=(0.0, 0.2, 0.45, 0.7), observation_time: float = 1.0,
                 label: int = 5) -> list[Example]:
    """A single small cascade with random embeddings, for gradient checks."""
    rng = np.random.default_rng(seed)
    n = len(times)
    return [Example("toy", rng.normal(0, 0.5, (n, cascade_dim)), rng.normal(0, 0.5, (n, global_dim)),
                    np.asarray(times, dtype=float), observation_time, label)]

"""Mini-batch training with per-batch noise sampling and gradient routing."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .. import noise, nsm
from ..core import Adam, backward, no_grad
from ..core import functional as F
from ..dem import threshold
from ..metrics import accuracy, psnr
from ..model import CIN
from .checkpoint import load_checkpoint, save_checkpoint
from .config import TrainConfig
from .losses import LossWeights, loss_terms

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class StepResult:
    step: int
    noise: str
    loss: float
    terms: Dict[str, float]
    acc: float  # IM-path bit accuracy on the batch, percent
    psnr: float  # cover vs watermarked, float images, dB

    def to_dict(self) -> dict:
        return {"step": self.step, "noise": self.noise, "loss": self.loss, "acc": self.acc,
                "psnr": self.psnr, **{f"loss_{k}": v for k, v in self.terms.items()}}


@dataclass
class StageResult:
    model: CIN
    history: List[StepResult] = field(default_factory=list)
    evaluations: List[dict] = field(default_factory=list)
    checkpoint: Optional[Path] = None

    @property
    def losses(self) -> np.ndarray:
        return np.array([h.loss for h in self.history])


def random_messages(rng: np.random.Generator, batch: int, length: int) -> np.ndarray:
    return rng.integers(0, 2, size=(batch, length)).astype(np.float32)


def _check_finite(terms: dict, step: int, spec: noise.NoiseSpec) -> None:
    for name, t in terms.items():
        v = float(t.data)
        if not math.isfinite(v):
            raise TrainingError(f"step {step}: loss term {name!r} is {v} under {spec.label}")


def train_step(model: CIN, opt: Adam, cover: np.ndarray, spec: noise.NoiseSpec, rng: np.random.Generator,
               weights: LossWeights, strength: float = 1.0, train_niam: bool = False,
               niam_weight: float = 1.0, nsm_weight: float = 0.1, step: int = 0) -> StepResult:
    """One Adam step on a batch attacked by ``spec``.

    Under a differentiable attack the image, message and (noise-free stage)
    restoration terms backpropagate into the encoder. Under a
    non-differentiable attack the encoder runs without a graph and only the
    NIAM and NSM terms remain, so the encoder receives no gradient.
    With ``train_niam`` the NIAM message term is added for JPEG attacks and
    the NSM classification term for every attack, with the unattacked
    watermarked batch as extra negatives.
    """
    B, L = cover.shape[0], model.config.message_length
    msg = random_messages(rng, B, L)
    opt.zero_grad()
    terms = {}
    if spec.differentiable:
        wi, _ = model.embed(cover, msg, strength)
        attacked = noise.apply(spec, wi, cover, rng)
        logits, restored = model.decode_im(attacked)
        terms = loss_terms(cover, wi, msg, logits, restored if weights.ri > 0 else None, weights)
    else:
        with no_grad():
            wi, _ = model.embed(cover, msg, strength)
            attacked = noise.apply(spec, wi, cover, rng)
            logits, _ = model.decode_im(attacked)
    if train_niam:
        if noise.is_jpeg(spec):
            terms["niam"] = F.mse_loss(model.decode_niam(attacked), msg) * niam_weight
        # the clean watermarked batch is always a negative, so a JPEG-only pool still teaches both classes
        seen = F.stop_gradient(F.concat([attacked, wi], axis=0))
        label = np.concatenate([np.full(B, nsm.jpeg_label(spec.kind)), np.zeros(B)]).astype(np.float32)
        terms["nsm"] = F.bce_with_logits(model.nsm.logits(seen), label) * nsm_weight
    if not terms:
        raise TrainingError(f"no trainable loss term for {spec.label} in this stage")
    _check_finite(terms, step, spec)

    total = None
    for t in terms.values():
        total = t if total is None else total + t
    loss_value = float(total.data)
    if total.requires_grad:
        backward(total)
        opt.step()
    if train_niam:
        model.niam_trained = True
    acc = accuracy(threshold(logits.data), msg)
    return StepResult(step, spec.label, loss_value, {k: float(v.data) for k, v in terms.items()},
                      acc, psnr(wi.data, cover, data_range=1.0))


def batches(n_images: int, batch_size: int, rng: np.random.Generator):
    """Endless index batches: a fresh permutation each epoch, ragged tails dropped."""
    bs = min(batch_size, n_images)
    while True:
        order = rng.permutation(n_images)
        for lo in range(0, n_images - bs + 1, bs):
            yield order[lo:lo + bs]


def build_model(config: TrainConfig) -> tuple:
    """(model, meta) at the start of a stage."""
    if config.warm_start:
        model, meta, _ = load_checkpoint(config.warm_start)
        mc = model.config
        if (mc.image_size, mc.message_length) != (config.image_size, config.message_length):
            raise TrainingError(
                f"warm start {config.warm_start} was trained for {mc.image_size}px / L={mc.message_length}, "
                f"config asks for {config.image_size}px / L={config.message_length}")
        return model, meta
    return CIN(config.model_config(), seed=config.seed), {}


def train_stage(config: TrainConfig, images: np.ndarray, callback=None, evaluate_fn=None) -> StageResult:
    """Run ``config.steps`` Adam steps of one stage on ``images`` (N, 3, H, W) in [0, 1]."""
    images = np.asarray(images, dtype=np.float32)
    if images.ndim != 4 or len(images) == 0:
        raise TrainingError(f"need a non-empty (N, 3, H, W) image array, got shape {images.shape}")
    if images.shape[1:] != (3, config.image_size, config.image_size):
        raise TrainingError(f"images are {images.shape[1:]}, config expects 3x{config.image_size}x{config.image_size}")

    model, meta = build_model(config)
    opt = Adam(model.named_parameters(), lr=config.lr)
    pool = noise.get_pool(config.pool) if config.stage != "noise_free" else noise.get_pool(["Identity"])
    train_niam = config.stage == "combined" and model.config.use_niam
    rng = np.random.default_rng(config.seed)
    result = StageResult(model)
    stages = list(meta.get("stages", []))
    t0 = time.time()

    def snapshot(step):
        info = {"stage": config.stage, "steps": step, "pool": pool.name, "config": config.to_dict()}
        return save_checkpoint(config.checkpoint, model, {"stages": stages + [info]}, opt.state)

    index_stream = batches(len(images), config.batch_size, rng)
    for step in range(1, config.steps + 1):
        idx = next(index_stream)
        spec = pool.sample(rng)
        r = train_step(model, opt, images[idx], spec, rng, config.weights_at(step), config.strength, train_niam,
                       config.niam_weight, config.nsm_weight, step)
        result.history.append(r)
        if callback is not None:
            callback(r)
        if config.log_every and step % config.log_every == 0:
            log.info("step %d/%d loss %.5f acc %.2f psnr %.2f (%.1fs)", step, config.steps, r.loss, r.acc,
                     r.psnr, time.time() - t0)
        if evaluate_fn is not None and config.eval_every and step % config.eval_every == 0:
            result.evaluations.append({"step": step, **evaluate_fn(model)})
        if config.checkpoint and config.checkpoint_every and step % config.checkpoint_every == 0:
            snapshot(step)
    if config.checkpoint:
        result.checkpoint = snapshot(config.steps)
    return result

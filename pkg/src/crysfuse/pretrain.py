"""Self-supervised pretraining: geometric denoising plus cross-view contrast.

Each step perturbs every structure's edge geometry with Gaussian noise —
angles for the invariant view, distances for the equivariant view (directions
are kept, so only radial features change) — runs both encoders on the noisy
views, and optimizes three terms: squared-error recovery of the realized
angle noise, the same for distance noise, and an NT-Xent loss pulling the two
views' pooled embeddings together across the batch.

Denoising losses are plain sums over structures and edges; the contrastive
loss averages over the 2N anchors of the batch pool.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .graph import PeriodicGraph
from .model import MGTModel, ModelInputs
from .optim import AdamW, lr_schedule
from .rng import stream
from .tensor import Tensor, concat

DISTANCE_FLOOR = 1e-6  # perturbed distances are clamped to stay positive


@dataclass(frozen=True)
class NoisySample:
    """A structure's perturbed edge geometry and the realized noise."""

    graph: PeriodicGraph
    noisy_angles: np.ndarray      # (E, 3), clamped to [0, pi]
    noisy_distances: np.ndarray   # (E,), clamped positive
    eps_theta: np.ndarray         # (E, 3) post-clamp angle deltas
    eps_e: np.ndarray             # (E,) post-clamp distance deltas


def inject_noise(graph: PeriodicGraph, sigma: float,
                 gen: np.random.Generator) -> NoisySample:
    """Perturb angles and distances with N(0, sigma^2) noise.

    Values are clamped back into their valid ranges and the stored noise is
    the realized (post-clamp) delta, so a zero-error denoiser must predict
    exactly the delta that was applied. ``sigma = 0`` degenerates to the
    identity (all noise exactly zero).
    """
    if sigma < 0:
        raise ValueError(f"noise scale must be non-negative, got {sigma}")
    num_edges = graph.num_edges
    noisy_angles = np.clip(
        graph.angles + gen.normal(0.0, sigma, (num_edges, 3)), 0.0, math.pi)
    noisy_distances = np.clip(
        graph.distance + gen.normal(0.0, sigma, num_edges),
        DISTANCE_FLOOR, None)
    return NoisySample(
        graph=graph,
        noisy_angles=noisy_angles,
        noisy_distances=noisy_distances,
        eps_theta=noisy_angles - graph.angles,
        eps_e=noisy_distances - graph.distance,
    )


def nt_xent(z_view1: Tensor, z_view2: Tensor, tau: float) -> Tensor:
    """Contrastive loss over the 2N-row pool [view1; view2].

    Row k of view 1 and row k of view 2 are the positive pair; every other
    row in the pool is a negative. Each of the 2N rows anchors once and the
    denominator excludes self-similarity.
    """
    n = z_view1.shape[0]
    if n < 2:
        raise ValueError(f"contrastive batch needs >= 2 structures, got {n}")
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    z = concat([z_view1, z_view2], axis=0)
    sq_norms = (z * z).sum(axis=1, keepdims=True)
    if np.any(sq_norms.data <= 0):
        raise ValueError("zero-norm embedding row in contrastive batch")
    zn = z / sq_norms ** 0.5
    sim = (zn @ zn.T) * (1.0 / tau)  # (2N, 2N)

    two_n = 2 * n
    off_diag = sim.data.copy()
    np.fill_diagonal(off_diag, -np.inf)
    row_max = off_diag.max(axis=1, keepdims=True)  # detached shift for stability
    exp_sim = (sim - Tensor(row_max)).exp() * Tensor(1.0 - np.eye(two_n))
    log_denom = exp_sim.sum(axis=1, keepdims=True).log() + Tensor(row_max)
    pos = np.concatenate([np.arange(n) + n, np.arange(n)])
    pos_sim = sim[np.arange(two_n), pos].reshape(two_n, 1)
    return (log_denom - pos_sim).mean()


def denoising_losses(pred_theta: list[Tensor], pred_e: list[Tensor],
                     samples: list[NoisySample]) -> tuple[Tensor, Tensor]:
    """Summed squared error of noise predictions over the whole batch."""
    loss_theta = None
    loss_e = None
    for p_t, p_e, sample in zip(pred_theta, pred_e, samples):
        diff_t = p_t - Tensor(sample.eps_theta)
        diff_e = p_e - Tensor(sample.eps_e.reshape(-1, 1))
        term_t = (diff_t * diff_t).sum()
        term_e = (diff_e * diff_e).sum()
        loss_theta = term_t if loss_theta is None else loss_theta + term_t
        loss_e = term_e if loss_e is None else loss_e + term_e
    return loss_theta, loss_e


@dataclass
class PretrainParts:
    total: float
    contrast: float
    se3: float
    so3: float


def pretrain_step(model: MGTModel, batch: list[tuple[PeriodicGraph, str]],
                  opt: AdamW, noise_gen: np.random.Generator) -> PretrainParts:
    """One optimizer step on the combined objective for one batch."""
    cfg = model.cfg
    samples: list[NoisySample] = []
    preds_theta: list[Tensor] = []
    preds_e: list[Tensor] = []
    e1_rows: list[Tensor] = []
    e2_rows: list[Tensor] = []
    for graph, sid in batch:
        sample = inject_noise(graph, cfg.sigma, noise_gen)
        inputs = model.make_inputs(graph, angles=sample.noisy_angles,
                                   so3_distances=sample.noisy_distances)
        enc = model.encode(inputs, training=True)
        p_theta = model.predict_angle_noise(enc)
        p_e = model.predict_distance_noise(enc, inputs)
        if not (np.all(np.isfinite(p_theta.data)) and np.all(np.isfinite(p_e.data))
                and np.all(np.isfinite(enc.e1.data))
                and np.all(np.isfinite(enc.e2.data))):
            raise NumericError(f"non-finite pretraining loss at structure {sid}")
        samples.append(sample)
        preds_theta.append(p_theta)
        preds_e.append(p_e)
        e1_rows.append(enc.e1)
        e2_rows.append(enc.e2)

    loss_se3, loss_so3 = denoising_losses(preds_theta, preds_e, samples)
    loss_contrast = nt_xent(concat(e1_rows, axis=0), concat(e2_rows, axis=0),
                            cfg.tau)
    total = (cfg.lambda_contrast * loss_contrast
             + cfg.lambda_se3 * loss_se3 + cfg.lambda_so3 * loss_so3)
    if not np.isfinite(total.data):
        raise NumericError(
            f"non-finite pretraining loss at structure {batch[0][1]}")
    opt.zero_grad()
    total.backward()
    opt.step()
    return PretrainParts(total=float(total.data),
                         contrast=float(loss_contrast.data),
                         se3=float(loss_se3.data), so3=float(loss_so3.data))


def run_pretraining(model: MGTModel, graphs: list[tuple[PeriodicGraph, str]],
                    log_path: str | None = None,
                    epochs: int | None = None,
                    max_steps: int | None = None) -> list[dict]:
    """Full SSL loop: shuffled batches, warmup + cosine schedule, JSONL log.

    Batches that would leave fewer than two structures (no contrastive pool)
    are folded into the previous batch. Returns the per-step log records.
    """
    cfg = model.cfg
    epochs = cfg.pretrain_epochs if epochs is None else epochs
    batch_size = min(cfg.pretrain_batch_size, len(graphs))
    if batch_size < 2:
        raise ValueError("pretraining needs at least 2 structures")
    steps_per_epoch = max(1, len(graphs) // batch_size)
    total_steps = epochs * steps_per_epoch
    if max_steps is not None:
        total_steps = min(total_steps, max_steps)
    warmup = min(cfg.warmup_steps, total_steps - 1) if total_steps > 1 else 0
    opt = AdamW(model.store.params, lr=cfg.pretrain_lr,
                betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps,
                weight_decay=cfg.weight_decay)
    noise_gen = stream(cfg.seed, "noise")
    history: list[dict] = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        step = 0
        for epoch in range(epochs):
            order = stream(cfg.seed, f"shuffle/pretrain/{epoch}").permutation(
                len(graphs))
            for b in range(steps_per_epoch):
                if step >= total_steps:
                    return history
                lo = b * batch_size
                hi = len(graphs) if b == steps_per_epoch - 1 else lo + batch_size
                batch = [graphs[i] for i in order[lo:hi]]
                step += 1
                opt.lr = lr_schedule(step, total_steps, warmup,
                                     cfg.pretrain_lr, cfg.lr_min)
                parts = pretrain_step(model, batch, opt, noise_gen)
                record = {"step": step, "lr": opt.lr, "L_total": parts.total,
                          "L_contrast": parts.contrast, "L_SE3": parts.se3,
                          "L_SO3": parts.so3}
                history.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
    finally:
        if log_fh:
            log_fh.close()
    return history

"""Optimization-based attack with a pluggable distance penalty.

Minimizes ``lam * L_dist + L_adv`` over the tanh-space variable u with Adam,
where L_adv is the hinge on logit differences and L_dist is one of the
distance kinds (deep perceptual distance, squared l2, shifted negative PSNR,
or 1 - SSIM). The first iterate is the clean image; the attack returns the
lowest-loss iterate that met the goal, falling back to the final iterate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..classifiers import AccessTier, Classifier
from ..errors import TierViolationError
from ..imaging import LabeledImage
from ..perceptual import ChannelWeights, PerceptualNet
from .base import (
    AttackConfig,
    AttackResult,
    DistanceKind,
    f_margin_t,
    finalize_result,
    goal_met,
    make_distance_fn,
    tanh_decode_t,
    tanh_encode,
)


@dataclass
class _Retained:
    loss: float
    distance: float
    adversarial: np.ndarray
    label: int


def _optimize(
    c: Classifier,
    dist_fn,
    x: np.ndarray,
    label: int,
    lam: float,
    cfg: AttackConfig,
) -> tuple[_Retained | None, np.ndarray, int, int]:
    """One optimization run; returns (best success, final iterate, final label, steps)."""
    attack_label = cfg.target if cfg.targeted else label
    x_t = torch.as_tensor(np.asarray(x, dtype=np.float64)).unsqueeze(0)
    u = torch.as_tensor(tanh_encode(x)).unsqueeze(0)
    u.requires_grad_(True)
    optimizer = torch.optim.Adam([u], lr=cfg.learning_rate)

    best: _Retained | None = None
    checkpoint: float | None = None
    steps = 0

    def evaluate() -> tuple[torch.Tensor, float, np.ndarray, int]:
        x_adv_t = tanh_decode_t(u)
        z = c.logits_t(x_adv_t)
        dist = dist_fn(x_adv_t, x_t)
        loss = lam * dist + f_margin_t(z[0], attack_label, cfg.targeted, cfg.kappa)
        adv_np = x_adv_t.detach().squeeze(0).numpy()
        pred = int(np.argmax(z.detach().squeeze(0).numpy()))
        return loss, float(dist.detach()), adv_np, pred

    def retain(loss_val: float, dist_val: float, adv_np: np.ndarray, pred: int) -> None:
        nonlocal best
        if goal_met(pred, label, cfg.targeted, cfg.target) and (
            best is None or loss_val < best.loss
        ):
            best = _Retained(loss_val, dist_val, adv_np, pred)

    final_adv = np.asarray(x, dtype=np.float64)
    final_pred = label
    for _ in range(cfg.max_iters):
        loss, dist_val, adv_np, pred = evaluate()
        final_adv, final_pred = adv_np, pred
        loss_val = float(loss.detach())
        retain(loss_val, dist_val, adv_np, pred)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        steps += 1
        # early stop once the joint loss stops converging: compare losses one
        # patience window apart and require a relative improvement of at least
        # early_stop_tol between checkpoints
        if cfg.early_stop_patience > 0 and steps % cfg.early_stop_patience == 0:
            if checkpoint is not None and (
                checkpoint - loss_val
                < cfg.early_stop_tol * max(abs(checkpoint), 1e-12)
            ):
                break
            checkpoint = loss_val

    if cfg.max_iters > 0:
        # assess the iterate produced by the last step
        loss, dist_val, adv_np, pred = evaluate()
        final_adv, final_pred = adv_np, pred
        retain(float(loss.detach()), dist_val, adv_np, pred)
    return best, final_adv, final_pred, steps


def cw_attack(
    c: Classifier,
    net: PerceptualNet,
    x: LabeledImage,
    kind: DistanceKind,
    cfg: AttackConfig,
    weights: ChannelWeights | None = None,
) -> AttackResult:
    """Craft an adversarial example by joint distance/margin minimization."""
    if c.access_tier is not AccessTier.WHITE_BOX:
        raise TierViolationError(f"cw_attack needs a white_box handle, got {c.access_tier.value}")
    cfg.validate(original_label=x.label)
    w = weights if weights is not None else ChannelWeights.ones_for(net)
    queries_before = c.query_count

    if c.predict(x.image) != x.label:
        raise ValueError(f"sample {x.sample_id}: already misclassified, nothing to attack")

    name = {
        DistanceKind.PERCEPTUAL: "demiguise-cw",
        DistanceKind.L2: "cw-l2",
        DistanceKind.NEG_PSNR: "cw-psnr",
        DistanceKind.ONE_MINUS_SSIM: "cw-ssim",
    }[kind]

    def result(adv: np.ndarray, adv_label: int, iters: int) -> AttackResult:
        return finalize_result(
            adversarial=adv,
            adversarial_label=adv_label,
            original_label=x.label,
            iterations_used=iters,
            queries_used=c.query_count - queries_before,
            original=x.image,
            net=net,
            weights=w,
            attack_name=name,
            targeted=cfg.targeted,
            target=cfg.target,
            kind=kind,
        )

    if cfg.max_iters == 0:
        return result(np.asarray(x.image, dtype=np.float64), x.label, 0)

    dist_fn = make_distance_fn(kind, net, w)
    lam_values = [cfg.lam]
    if cfg.lambda_search:
        lam_values = [cfg.lam / 10.0, cfg.lam, cfg.lam * 10.0]

    chosen: _Retained | None = None
    fallback: tuple[np.ndarray, int] | None = None
    total_steps = 0
    for lam in lam_values:
        best, final_adv, final_pred, steps = _optimize(c, dist_fn, x.image, x.label, lam, cfg)
        total_steps += steps
        # across lambda runs the comparable quantity is the distance itself
        if best is not None and (chosen is None or best.distance < chosen.distance):
            chosen = best
        if fallback is None:
            fallback = (final_adv, final_pred)

    if chosen is not None:
        return result(chosen.adversarial, chosen.label, total_steps)
    adv, pred = fallback  # type: ignore[misc]
    return result(adv, pred, total_steps)

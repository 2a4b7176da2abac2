"""Momentum sign-attack family with an optional perceptual-gradient term.

Per step the cross-entropy gradient and (when lam > 0) the perceptual-distance
gradient are each divided by their l1 norm, combined with weight lam, fed into
the momentum accumulator, and the image moves by (epsilon / N) * sign(m),
projected onto the l-inf ball and [0, 1]. The random resize-pad transform, when
enabled, diversifies the classifier input at every gradient evaluation.
"""

from __future__ import annotations

import numpy as np
import torch

from ..classifiers import AccessTier, Classifier
from ..errors import TierViolationError
from ..imaging import LabeledImage
from ..perceptual import ChannelWeights, PerceptualNet
from .base import AttackConfig, AttackResult, finalize_result

RESIZE_BAND = 0.9  # lower edge of the random resize range, as a side fraction


def _diversify_t(xt: torch.Tensor, p: float, rng: np.random.Generator) -> torch.Tensor:
    """Randomly resize into [0.9*side, side] and zero-pad back (in-graph)."""
    if rng.random() >= p:
        return xt
    side = xt.shape[-1]
    low = int(np.ceil(RESIZE_BAND * side))
    new = int(rng.integers(low, side + 1))
    resized = torch.nn.functional.interpolate(
        xt, size=(new, new), mode="bilinear", align_corners=False
    )
    rem = side - new
    top = int(rng.integers(0, rem + 1))
    left = int(rng.integers(0, rem + 1))
    return torch.nn.functional.pad(
        resized, (left, rem - left, top, rem - top), value=0.0
    )


def input_diversity(x: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Apply the resize-pad transform with probability p (identity at p=0)."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if p == 0.0:
        return np.array(x, copy=True)
    xt = torch.as_tensor(np.asarray(x, dtype=np.float64)).unsqueeze(0)
    with torch.no_grad():
        out = _diversify_t(xt, p, rng)
    return out.squeeze(0).numpy().astype(np.asarray(x).dtype)


def _l1_normalized(g: torch.Tensor) -> torch.Tensor:
    norm = torch.sum(torch.abs(g))
    if float(norm) == 0.0:
        return torch.zeros_like(g)
    return g / norm


def mifgsm_attack(
    c: Classifier,
    net: PerceptualNet | None,
    x: LabeledImage,
    cfg: AttackConfig,
    weights: ChannelWeights | None = None,
) -> AttackResult:
    """Momentum iterative sign attack; lam=0 reduces to the plain baseline."""
    if c.access_tier is not AccessTier.WHITE_BOX:
        raise TierViolationError(
            f"mifgsm_attack needs a white_box handle, got {c.access_tier.value}"
        )
    cfg.validate(original_label=x.label)
    if cfg.lam > 0 and net is None:
        raise ValueError("lam > 0 requires a perceptual net")
    w = None
    if net is not None:
        w = weights if weights is not None else ChannelWeights.ones_for(net)
    queries_before = c.query_count

    if c.predict(x.image) != x.label:
        raise ValueError(f"sample {x.sample_id}: already misclassified, nothing to attack")

    name = "demiguise-mifgsm" if cfg.lam > 0 else "mifgsm"
    if cfg.di_probability > 0:
        name = f"{name}-di"

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
        )

    if cfg.max_iters == 0 or cfg.epsilon == 0.0:
        return result(np.array(x.image, copy=True), x.label, 0)

    rng = np.random.default_rng(cfg.seed)
    alpha = cfg.epsilon / cfg.max_iters
    attack_label = cfg.target if cfg.targeted else x.label
    x_t = torch.as_tensor(np.asarray(x.image, dtype=np.float64)).unsqueeze(0)
    lower = torch.clamp(x_t - cfg.epsilon, min=0.0)
    upper = torch.clamp(x_t + cfg.epsilon, max=1.0)
    adv_t = x_t.clone()
    momentum = torch.zeros_like(x_t)

    for _ in range(cfg.max_iters):
        var = adv_t.clone().requires_grad_(True)
        model_in = (
            _diversify_t(var, cfg.di_probability, rng)
            if cfg.di_probability > 0
            else var
        )
        z = c.logits_t(model_in)
        ce = torch.nn.functional.cross_entropy(z, torch.tensor([attack_label]))
        (grad_ce,) = torch.autograd.grad(ce, var)
        if cfg.targeted:
            grad_ce = -grad_ce  # descend toward the target class
        combined = _l1_normalized(grad_ce)
        if cfg.lam > 0:
            var_d = adv_t.clone().requires_grad_(True)
            dist = net.distance_t(w, var_d, x_t)
            (grad_d,) = torch.autograd.grad(dist, var_d)
            combined = combined + cfg.lam * _l1_normalized(grad_d)
        momentum = cfg.mu * momentum + combined
        stepped = adv_t + alpha * torch.sign(momentum)
        adv_t = torch.minimum(torch.maximum(stepped, lower), upper)

    adv = adv_t.squeeze(0).numpy()
    return result(adv, c.predict(adv.astype(np.float32)), cfg.max_iters)

"""Shared attack machinery: configs, results, margins, codecs, distance kinds."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import torch

from .. import imaging
from ..perceptual import ChannelWeights, PerceptualNet, perceptual_distance

# Shift floor for the PSNR-flavored penalty: 10*log10(1 + mse/floor) is finite
# and zero at mse == 0; for mse >> floor it equals 60 dB minus the PSNR.
NEG_PSNR_MSE_FLOOR = 1e-6

TANH_CLAMP = 1e-6  # inward clamp applied before arctanh


class DistanceKind(enum.Enum):
    PERCEPTUAL = "perceptual"
    L2 = "l2"
    NEG_PSNR = "neg_psnr"
    ONE_MINUS_SSIM = "one_minus_ssim"


@dataclass
class AttackConfig:
    """Hyperparameters shared by the attack family.

    lam             weight of the distance penalty in joint losses
    learning_rate   optimizer step size for the optimization-based attacks
    max_iters       iteration budget N (step size of the sign attacks is eps/N)
    epsilon         l-inf budget for the sign-attack family
    mu              momentum decay factor
    query_budget    decision-query budget for the boundary attack family
    di_probability  probability of the random resize-pad transform per step
    kappa           optional confidence margin added inside the hinge
    lambda_search   also try lam/10 and 10*lam, keeping the best success
    early_stop_*    relative-improvement tolerance and patience window
    """

    lam: float = 0.05
    learning_rate: float = 0.05
    max_iters: int = 300
    epsilon: float = 0.1
    mu: float = 1.0
    query_budget: int = 2000
    targeted: bool = False
    target: int | None = None
    di_probability: float = 0.0
    seed: int = 0
    kappa: float = 0.0
    lambda_search: bool = False
    early_stop_tol: float = 1e-4
    early_stop_patience: int = 50

    def validate(self, original_label: int | None = None) -> None:
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.query_budget < 0:
            raise ValueError("query_budget must be >= 0")
        if not 0.0 <= self.di_probability <= 1.0:
            raise ValueError("di_probability must lie in [0, 1]")
        if self.targeted:
            if self.target is None:
                raise ValueError("targeted attack requires a target class")
            if original_label is not None and self.target == original_label:
                raise ValueError("target class equals the original label")


@dataclass
class AttackResult:
    """An adversarial example plus attack diagnostics.

    ``final_distance_kind`` holds the attack's own optimized distance (set by
    the optimization-based attacks); the perceptual/l2/linf fields are always
    recomputed from the returned artifact.
    """

    adversarial: np.ndarray
    success: bool
    iterations_used: int
    queries_used: int
    final_distance_perceptual: float | None
    final_l2: float
    final_linf: float
    original_label: int
    adversarial_label: int
    attack_name: str = field(default="", compare=False)
    final_distance_kind: float | None = None


def f_margin(z: np.ndarray, label: int, targeted: bool, kappa: float = 0.0) -> float:
    """Hinge on logit differences; zero exactly when the attack goal is met."""
    z = np.asarray(z, dtype=np.float64)
    if not 0 <= int(label) < z.shape[0]:
        raise ValueError(f"label {label} outside logits of length {z.shape[0]}")
    others = np.delete(z, int(label))
    if targeted:
        margin = float(others.max() - z[int(label)])
    else:
        margin = float(z[int(label)] - others.max())
    return max(margin + kappa, 0.0)


def f_margin_t(z: torch.Tensor, label: int, targeted: bool,
               kappa: float = 0.0) -> torch.Tensor:
    """Differentiable twin of :func:`f_margin` for a 1-D logits tensor."""
    mask = torch.ones_like(z, dtype=torch.bool)
    mask[int(label)] = False
    others_max = z[mask].max()
    margin = others_max - z[int(label)] if targeted else z[int(label)] - others_max
    return torch.clamp(margin + kappa, min=0.0)


def tanh_encode(x: np.ndarray) -> np.ndarray:
    """Map [0, 1] pixels to unconstrained space (values at 0/1 clamped inward)."""
    clamped = np.clip(np.asarray(x, dtype=np.float64), TANH_CLAMP, 1.0 - TANH_CLAMP)
    return np.arctanh(2.0 * clamped - 1.0)


def tanh_decode(u: np.ndarray) -> np.ndarray:
    """Inverse map back into [0, 1]."""
    return (np.tanh(np.asarray(u, dtype=np.float64)) + 1.0) / 2.0


def tanh_decode_t(u: torch.Tensor) -> torch.Tensor:
    return (torch.tanh(u) + 1.0) / 2.0


def _ssim_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Differentiable SSIM matching :func:`demiguise.imaging.ssim`."""
    channels = a.shape[1]
    window = torch.as_tensor(imaging.gaussian_window(), dtype=a.dtype)
    kernel = window.expand(channels, 1, -1, -1)
    conv = lambda t: torch.nn.functional.conv2d(t, kernel, groups=channels)
    mu_a, mu_b = conv(a), conv(b)
    var_a = conv(a * a) - mu_a * mu_a
    var_b = conv(b * b) - mu_b * mu_b
    cov = conv(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + imaging.SSIM_C1) * (2 * cov + imaging.SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + imaging.SSIM_C1) * (var_a + var_b + imaging.SSIM_C2)
    return torch.mean(num / den)


def make_distance_fn(kind: DistanceKind, net: PerceptualNet | None,
                     weights: ChannelWeights | None):
    """Differentiable penalty d(adv, ref) for the optimization-based attacks."""
    if kind is DistanceKind.PERCEPTUAL:
        if net is None or weights is None:
            raise ValueError("perceptual distance kind requires a net and weights")
        return lambda adv, ref: net.distance_t(weights, ref, adv)
    if kind is DistanceKind.L2:
        return lambda adv, ref: torch.sum((adv - ref) ** 2)
    if kind is DistanceKind.NEG_PSNR:
        def neg_psnr(adv, ref):
            mse = torch.mean((adv - ref) ** 2)
            return 10.0 * torch.log10(1.0 + mse / NEG_PSNR_MSE_FLOOR)
        return neg_psnr
    if kind is DistanceKind.ONE_MINUS_SSIM:
        return lambda adv, ref: 1.0 - _ssim_t(adv, ref)
    raise ValueError(f"unknown distance kind: {kind}")


def scalar_distance(kind: DistanceKind, net: PerceptualNet | None,
                    weights: ChannelWeights | None, x_ref: np.ndarray,
                    x_adv: np.ndarray) -> float:
    """Recompute a distance kind from scratch (used for result bookkeeping)."""
    a = np.asarray(x_ref, dtype=np.float64)
    b = np.asarray(x_adv, dtype=np.float64)
    if kind is DistanceKind.PERCEPTUAL:
        if net is None or weights is None:
            raise ValueError("perceptual distance kind requires a net and weights")
        return perceptual_distance(net, weights, x_ref, x_adv)
    if kind is DistanceKind.L2:
        return float(np.sum((a - b) ** 2))
    if kind is DistanceKind.NEG_PSNR:
        mse = float(np.mean((a - b) ** 2))
        return float(10.0 * np.log10(1.0 + mse / NEG_PSNR_MSE_FLOOR))
    if kind is DistanceKind.ONE_MINUS_SSIM:
        return 1.0 - imaging.ssim(a, b)
    raise ValueError(f"unknown distance kind: {kind}")


def goal_met(pred: int, label: int, targeted: bool, target: int | None) -> bool:
    return (pred == target) if targeted else (pred != label)


def finalize_result(
    *,
    adversarial: np.ndarray,
    adversarial_label: int,
    original_label: int,
    iterations_used: int,
    queries_used: int,
    original: np.ndarray,
    net: PerceptualNet | None,
    weights: ChannelWeights | None,
    attack_name: str,
    targeted: bool,
    target: int | None,
    kind: DistanceKind | None = None,
) -> AttackResult:
    """Assemble a result; distance fields are recomputed from the artifacts."""
    adv = np.clip(np.asarray(adversarial, dtype=np.float64), 0.0, 1.0).astype(np.float32)
    diff = adv.astype(np.float64) - np.asarray(original, dtype=np.float64)
    dist_p = None
    w = weights
    if net is not None:
        w = weights if weights is not None else ChannelWeights.ones_for(net)
        dist_p = perceptual_distance(net, w, original, adv)
    dist_kind = None
    if kind is not None:
        dist_kind = scalar_distance(kind, net, w, original, adv)
    return AttackResult(
        adversarial=adv,
        success=goal_met(adversarial_label, original_label, targeted, target),
        iterations_used=iterations_used,
        queries_used=queries_used,
        final_distance_perceptual=dist_p,
        final_l2=float(np.linalg.norm(diff)),
        final_linf=float(np.abs(diff).max()) if diff.size else 0.0,
        original_label=int(original_label),
        adversarial_label=int(adversarial_label),
        attack_name=attack_name,
        final_distance_kind=dist_kind,
    )

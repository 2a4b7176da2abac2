"""Deep perceptual similarity: feature taps, unit normalization, weighted distance.

The distance between two images is computed from the backbone's per-block
activations: at every tap layer the channel vector at each spatial location is
scaled to unit Euclidean norm, the two feature fields are subtracted, weighted
channel-wise, squared, averaged over space, and summed over layers. The
backbone runs in float64 so gradient checks against finite differences are
tight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from . import weights_io
from .nets import PerceptualBackbone

NORM_EPS = 1e-10  # guard for zero feature vectors during unit normalization


@dataclass
class FeatureStack:
    """Per-layer activation grids, each of shape (C_l, H_l, W_l)."""

    layers: list[np.ndarray]

    def __post_init__(self):
        self.layers = [np.asarray(layer, dtype=np.float64) for layer in self.layers]
        for i, layer in enumerate(self.layers):
            if layer.ndim != 3:
                raise ValueError(f"layer {i}: expected (C, H, W), got {layer.shape}")


@dataclass
class ChannelWeights:
    """Non-negative channel scaling vectors, one per tap layer."""

    per_layer: list[np.ndarray]

    def __post_init__(self):
        self.per_layer = [np.asarray(w, dtype=np.float64).reshape(-1) for w in self.per_layer]
        for i, w in enumerate(self.per_layer):
            if np.any(w < 0) or not np.all(np.isfinite(w)):
                raise ValueError(f"layer {i}: channel weights must be finite and >= 0")

    @classmethod
    def ones_for(cls, net: "PerceptualNet") -> "ChannelWeights":
        return cls([np.ones(c, dtype=np.float64) for c, _, _ in net.layer_shapes])

    def save(self, manifest_path: str) -> None:
        weights_io.save_tensors(
            manifest_path, {f"layer.{i}": w for i, w in enumerate(self.per_layer)}
        )

    @classmethod
    def load(cls, manifest_path: str) -> "ChannelWeights":
        tensors = weights_io.load_tensors(manifest_path)
        keys = sorted(tensors, key=lambda k: int(k.split(".")[1]))
        return cls([tensors[k] for k in keys])


class PerceptualNet:
    """An immutable feature extractor with declared tap shapes.

    ``backbone`` must expose ``taps(x) -> list[Tensor]``. Input normalization
    constants are baked into the net; callers pass pixel-space images.
    """

    def __init__(
        self,
        backbone: nn.Module,
        input_size: int,
        mean: np.ndarray | None = None,
        std: np.ndarray | None = None,
    ):
        backbone = backbone.double().eval()
        for p in backbone.parameters():
            p.requires_grad_(False)
        self.backbone = backbone
        self.input_size = int(input_size)
        mean = np.zeros(3) if mean is None else np.asarray(mean, dtype=np.float64)
        std = np.ones(3) if std is None else np.asarray(std, dtype=np.float64)
        self._mean = torch.as_tensor(mean).view(1, 3, 1, 1)
        self._std = torch.as_tensor(std).view(1, 3, 1, 1)
        with torch.no_grad():
            probe = torch.zeros(1, 3, self.input_size, self.input_size, dtype=torch.float64)
            taps = self.taps_t(probe)
        self.layer_shapes = [tuple(t.shape[1:]) for t in taps]
        if not self.layer_shapes:
            raise ValueError("backbone exposes no tap layers")

    @classmethod
    def load(cls, manifest_path: str) -> "PerceptualNet":
        tensors = weights_io.load_tensors(manifest_path)
        backbone = PerceptualBackbone(num_classes=int(tensors["meta.num_classes"][0]))
        state = {
            key[len("param."):]: torch.as_tensor(value)
            for key, value in tensors.items()
            if key.startswith("param.")
        }
        backbone.load_state_dict(state)
        return cls(
            backbone,
            input_size=int(tensors["meta.input_size"][0]),
            mean=tensors["norm.mean"],
            std=tensors["norm.std"],
        )

    def _check_shape(self, x: np.ndarray) -> None:
        expected = (3, self.input_size, self.input_size)
        if tuple(np.asarray(x).shape) != expected:
            raise ValueError(f"shape mismatch: expected {expected}, got {np.asarray(x).shape}")

    def taps_t(self, xt: torch.Tensor) -> list[torch.Tensor]:
        """Raw tap activations for a (1, 3, H, W) float64 batch tensor."""
        return self.backbone.taps((xt - self._mean) / self._std)

    def distance_t(
        self, weights: ChannelWeights, xa: torch.Tensor, xb: torch.Tensor
    ) -> torch.Tensor:
        """Differentiable distance between two (1, 3, H, W) tensors."""
        taps_a = self.taps_t(xa)
        taps_b = self.taps_t(xb)
        total = xa.new_zeros(())
        for ta, tb, w in zip(taps_a, taps_b, weights.per_layer):
            na = ta / torch.clamp(torch.linalg.vector_norm(ta, dim=1, keepdim=True), min=NORM_EPS)
            nb = tb / torch.clamp(torch.linalg.vector_norm(tb, dim=1, keepdim=True), min=NORM_EPS)
            wt = torch.as_tensor(w, dtype=ta.dtype).view(1, -1, 1, 1)
            diff = wt * (na - nb)
            total = total + torch.mean(torch.sum(diff * diff, dim=1))
        return total


def extract_features(net: PerceptualNet, x: np.ndarray) -> FeatureStack:
    """Raw (pre-normalization) activations at every tap layer."""
    net._check_shape(x)
    xt = torch.as_tensor(np.asarray(x, dtype=np.float64)).unsqueeze(0)
    with torch.no_grad():
        taps = net.taps_t(xt)
    return FeatureStack([t.squeeze(0).numpy() for t in taps])


def unit_normalize(stack: FeatureStack) -> FeatureStack:
    """Scale each spatial location's channel vector to unit norm (zero stays zero)."""
    normalized = []
    for layer in stack.layers:
        norms = np.linalg.norm(layer, axis=0, keepdims=True)
        normalized.append(layer / np.maximum(norms, NORM_EPS))
    return FeatureStack(normalized)


def distance_from_stacks(
    stack_a: FeatureStack, stack_b: FeatureStack, weights: ChannelWeights
) -> float:
    """Distance from raw feature stacks: normalize, weight, square, average, sum."""
    if len(stack_a.layers) != len(stack_b.layers):
        raise ValueError("feature stacks have different layer counts")
    if len(stack_a.layers) != len(weights.per_layer):
        raise ValueError("channel weights do not match the layer count")
    na, nb = unit_normalize(stack_a), unit_normalize(stack_b)
    total = 0.0
    for la, lb, w in zip(na.layers, nb.layers, weights.per_layer):
        if la.shape != lb.shape:
            raise ValueError(f"layer shape mismatch: {la.shape} vs {lb.shape}")
        if la.shape[0] != w.shape[0]:
            raise ValueError(f"weight length {w.shape[0]} != channels {la.shape[0]}")
        diff = w[:, None, None] * (la - lb)
        total += float(np.mean(np.sum(diff * diff, axis=0)))
    return total


def perceptual_distance(
    net: PerceptualNet, weights: ChannelWeights, x: np.ndarray, x2: np.ndarray
) -> float:
    """Perceptual distance between two pixel-space images (non-negative)."""
    if np.asarray(x).shape != np.asarray(x2).shape:
        raise ValueError(f"dimension mismatch: {np.asarray(x).shape} vs {np.asarray(x2).shape}")
    return distance_from_stacks(
        extract_features(net, x), extract_features(net, x2), weights
    )


def perceptual_gradient(
    net: PerceptualNet, weights: ChannelWeights, x_ref: np.ndarray, x_var: np.ndarray
) -> np.ndarray:
    """Gradient of the distance with respect to the second image."""
    if np.asarray(x_ref).shape != np.asarray(x_var).shape:
        raise ValueError(
            f"dimension mismatch: {np.asarray(x_ref).shape} vs {np.asarray(x_var).shape}"
        )
    net._check_shape(x_var)
    ref_t = torch.as_tensor(np.asarray(x_ref, dtype=np.float64)).unsqueeze(0)
    var_t = torch.as_tensor(np.asarray(x_var, dtype=np.float64)).unsqueeze(0)
    var_t.requires_grad_(True)
    dist = net.distance_t(weights, ref_t, var_t)
    (grad,) = torch.autograd.grad(dist, var_t)
    return grad.squeeze(0).numpy()

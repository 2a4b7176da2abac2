"""Opaque classifier handles, the desk model zoo, and its one-shot trainer.

A ``Classifier`` wraps a torch module behind an access tier so black-box
experiments are machine-checked: ``decision_only`` handles expose only
``predict``, ``score_only`` adds ``logits``, and ``white_box`` adds input
gradients. Callers always pass pixel-space [0, 1] images; per-channel
normalization happens inside the handle. Every forward evaluation increments
the handle's query counter by exactly one.

Weight archives use the shared flat-binary tensor format; the zoo manifest is
a plain-text file with one ``name arch archive accuracy`` line per model.
"""

from __future__ import annotations

import enum
import os
import threading

import numpy as np
import torch
from torch import nn

from . import nets, weights_io
from .errors import TierViolationError


class AccessTier(enum.Enum):
    WHITE_BOX = "white_box"
    SCORE_ONLY = "score_only"
    DECISION_ONLY = "decision_only"


class Classifier:
    """A model handle exposing logits, predictions, and input gradients.

    Weights are frozen at construction. The query counter is the only mutable
    state and is incremented under a lock so concurrent attacks can share a
    handle.
    """

    def __init__(
        self,
        name: str,
        module: nn.Module,
        mean: np.ndarray,
        std: np.ndarray,
        input_size: int,
        num_classes: int,
        access_tier: AccessTier = AccessTier.WHITE_BOX,
        expected_accuracy: float | None = None,
    ):
        module = module.double().eval()
        for p in module.parameters():
            p.requires_grad_(False)
        self.name = name
        self.module = module
        self.input_size = int(input_size)
        self.num_classes = int(num_classes)
        self.access_tier = access_tier
        self.expected_accuracy = expected_accuracy
        self._mean = torch.as_tensor(np.asarray(mean, dtype=np.float64)).view(1, 3, 1, 1)
        self._std = torch.as_tensor(np.asarray(std, dtype=np.float64)).view(1, 3, 1, 1)
        self._queries = 0
        self._lock = threading.Lock()

    # -- bookkeeping ---------------------------------------------------------

    @property
    def query_count(self) -> int:
        return self._queries

    def _count_query(self) -> None:
        with self._lock:
            self._queries += 1

    def with_tier(self, tier: AccessTier) -> "Classifier":
        """A new handle over the same weights with its own query counter."""
        clone = Classifier.__new__(Classifier)
        clone.__dict__.update(self.__dict__)
        clone.access_tier = tier
        clone._queries = 0
        clone._lock = threading.Lock()
        return clone

    @property
    def normalization(self) -> tuple[np.ndarray, np.ndarray]:
        return (self._mean.numpy().reshape(3), self._std.numpy().reshape(3))

    # -- evaluation ----------------------------------------------------------

    def _check_shape(self, x: np.ndarray) -> None:
        expected = (3, self.input_size, self.input_size)
        if tuple(np.asarray(x).shape) != expected:
            raise ValueError(f"shape mismatch: expected {expected}, got {np.asarray(x).shape}")

    def _forward(self, xt: torch.Tensor) -> torch.Tensor:
        self._count_query()
        return self.module((xt - self._mean) / self._std)

    def logits_t(self, xt: torch.Tensor) -> torch.Tensor:
        """Differentiable logits for a (1, 3, H, W) float64 tensor (white-box only)."""
        if self.access_tier is not AccessTier.WHITE_BOX:
            raise TierViolationError(
                f"{self.name}: differentiable access requires white_box tier, "
                f"handle is {self.access_tier.value}"
            )
        return self._forward(xt)

    def logits(self, x: np.ndarray) -> np.ndarray:
        if self.access_tier is AccessTier.DECISION_ONLY:
            raise TierViolationError(
                f"{self.name}: logits unavailable at decision_only tier"
            )
        self._check_shape(x)
        xt = torch.as_tensor(np.asarray(x, dtype=np.float64)).unsqueeze(0)
        with torch.no_grad():
            z = self._forward(xt)
        return z.squeeze(0).numpy()

    def predict(self, x: np.ndarray) -> int:
        """Argmax class (ties break to the lowest index); available at any tier."""
        self._check_shape(x)
        xt = torch.as_tensor(np.asarray(x, dtype=np.float64)).unsqueeze(0)
        with torch.no_grad():
            z = self._forward(xt)
        return int(np.argmax(z.squeeze(0).numpy()))

    def loss_gradient(self, x: np.ndarray, y: int) -> np.ndarray:
        """Gradient of softmax cross-entropy w.r.t. the pixel-space input."""
        if self.access_tier is not AccessTier.WHITE_BOX:
            raise TierViolationError(
                f"{self.name}: gradients require white_box tier, handle is "
                f"{self.access_tier.value}"
            )
        self._check_shape(x)
        if not 0 <= int(y) < self.num_classes:
            raise ValueError(f"label {y} outside [0, {self.num_classes})")
        xt = torch.as_tensor(np.asarray(x, dtype=np.float64)).unsqueeze(0)
        xt.requires_grad_(True)
        z = self._forward(xt)
        loss = nn.functional.cross_entropy(z, torch.tensor([int(y)]))
        (grad,) = torch.autograd.grad(loss, xt)
        return grad.squeeze(0).numpy()


# -- archives and the zoo manifest -------------------------------------------


def save_classifier(
    manifest_path: str,
    module: nn.Module,
    mean: np.ndarray,
    std: np.ndarray,
    input_size: int,
    num_classes: int,
) -> None:
    tensors: dict[str, np.ndarray] = {}
    for key, value in module.state_dict().items():
        tensors[f"param.{key}"] = value.detach().cpu().numpy().astype(np.float32)
    tensors["norm.mean"] = np.asarray(mean, dtype=np.float64)
    tensors["norm.std"] = np.asarray(std, dtype=np.float64)
    tensors["meta.input_size"] = np.asarray([input_size], dtype=np.int64)
    tensors["meta.num_classes"] = np.asarray([num_classes], dtype=np.int64)
    weights_io.save_tensors(manifest_path, tensors)


def load_classifier(
    manifest_path: str,
    arch: str,
    name: str,
    access_tier: AccessTier = AccessTier.WHITE_BOX,
    expected_accuracy: float | None = None,
) -> Classifier:
    tensors = weights_io.load_tensors(manifest_path)
    num_classes = int(tensors["meta.num_classes"][0])
    input_size = int(tensors["meta.input_size"][0])
    module = nets.build(arch, num_classes=num_classes)
    state = {
        key[len("param."):]: torch.as_tensor(value)
        for key, value in tensors.items()
        if key.startswith("param.")
    }
    module.load_state_dict(state)
    return Classifier(
        name=name,
        module=module,
        mean=tensors["norm.mean"],
        std=tensors["norm.std"],
        input_size=input_size,
        num_classes=num_classes,
        access_tier=access_tier,
        expected_accuracy=expected_accuracy,
    )


def load_zoo(
    manifest_path: str, access_tier: AccessTier = AccessTier.WHITE_BOX
) -> list[Classifier]:
    """Load every classifier listed in a zoo manifest, in listed order."""
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"zoo manifest not found: {manifest_path}")
    base = os.path.dirname(os.path.abspath(manifest_path))
    zoo: list[Classifier] = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(
                    f"{manifest_path}:{lineno}: expected 'name arch archive accuracy'"
                )
            name, arch, archive, acc_s = parts
            archive_path = os.path.join(base, archive)
            if not os.path.isfile(archive_path):
                raise FileNotFoundError(
                    f"{manifest_path}:{lineno}: missing weight archive {archive_path}"
                )
            zoo.append(
                load_classifier(archive_path, arch, name, access_tier, float(acc_s))
            )
    if not zoo:
        raise ValueError(f"{manifest_path}: no models listed")
    num_classes = {c.num_classes for c in zoo}
    if len(num_classes) != 1:
        raise ValueError(f"{manifest_path}: models disagree on label set: {num_classes}")
    return zoo


def default_zoo_dir() -> str:
    return os.path.join(os.path.dirname(os.path.abspath(__file__)), "zoo")


def default_zoo_manifest() -> str:
    return os.path.join(default_zoo_dir(), "zoo.txt")


# -- one-shot training script -------------------------------------------------

ZOO_SPECS = [("plainnet", "plain"), ("skipnet", "residual"), ("dwnet", "depthwise")]


def _evaluate(module: nn.Module, images: np.ndarray, labels: np.ndarray,
              mean: np.ndarray, std: np.ndarray, batch: int = 256) -> float:
    module.eval()
    correct = 0
    mean_t = torch.as_tensor(mean, dtype=torch.float32).view(1, 3, 1, 1)
    std_t = torch.as_tensor(std, dtype=torch.float32).view(1, 3, 1, 1)
    with torch.no_grad():
        for i in range(0, len(images), batch):
            xb = torch.as_tensor(images[i : i + batch], dtype=torch.float32)
            z = module((xb - mean_t) / std_t)
            correct += int((z.argmax(dim=1).numpy() == labels[i : i + batch]).sum())
    return correct / len(images)


def train_model(
    arch: str,
    train_images: np.ndarray,
    train_labels: np.ndarray,
    test_images: np.ndarray,
    test_labels: np.ndarray,
    mean: np.ndarray,
    std: np.ndarray,
    seed: int,
    epochs: int = 6,
    batch: int = 128,
    lr: float = 1e-3,
    verbose: bool = True,
) -> tuple[nn.Module, float]:
    """Train one architecture; returns the module and its test accuracy."""
    torch.manual_seed(seed)
    module = nets.build(arch)
    optimizer = torch.optim.Adam(module.parameters(), lr=lr)
    mean_t = torch.as_tensor(mean, dtype=torch.float32).view(1, 3, 1, 1)
    std_t = torch.as_tensor(std, dtype=torch.float32).view(1, 3, 1, 1)
    rng = np.random.default_rng(seed)
    module.train()
    for epoch in range(epochs):
        order = rng.permutation(len(train_images))
        for i in range(0, len(order), batch):
            idx = order[i : i + batch]
            xb = torch.as_tensor(train_images[idx], dtype=torch.float32)
            yb = torch.as_tensor(train_labels[idx])
            optimizer.zero_grad()
            loss = nn.functional.cross_entropy(module((xb - mean_t) / std_t), yb)
            loss.backward()
            optimizer.step()
        if verbose:
            acc = _evaluate(module, test_images, test_labels, mean, std)
            print(f"  {arch}: epoch {epoch + 1}/{epochs} test acc {acc:.3f}")
    accuracy = _evaluate(module, test_images, test_labels, mean, std)
    return module.eval(), accuracy


def train_desk_zoo(
    out_dir: str,
    seed: int = 7,
    train_size: int = 6000,
    test_size: int = 1000,
    epochs: int = 6,
    verbose: bool = True,
) -> str:
    """Train the three-model zoo plus the perceptual backbone; returns manifest path.

    Weights, normalization constants, and measured test accuracies are written
    to ``out_dir`` so the zoo is fully reproducible from the seed.
    """
    from . import dataset  # local import to avoid a cycle at module load

    os.makedirs(out_dir, exist_ok=True)
    train_x, train_y = dataset.preprocessed_split(train_size, seed=seed)
    test_x, test_y = dataset.preprocessed_split(test_size, seed=seed + 1)
    mean = train_x.mean(axis=(0, 2, 3)).astype(np.float64)
    std = train_x.std(axis=(0, 2, 3)).astype(np.float64)

    manifest_lines = ["# desk zoo: name arch archive accuracy"]
    for i, (name, arch) in enumerate(ZOO_SPECS):
        if verbose:
            print(f"training {name} ({arch})")
        module, acc = train_model(
            arch, train_x, train_y, test_x, test_y, mean, std,
            seed=seed + 100 + i, epochs=epochs, verbose=verbose,
        )
        archive = f"{name}.manifest"
        save_classifier(os.path.join(out_dir, archive), module, mean, std,
                        input_size=train_x.shape[-1], num_classes=dataset.NUM_CLASSES)
        manifest_lines.append(f"{name} {arch} {archive} {acc:.4f}")

    if verbose:
        print("training perceptual backbone")
    backbone, acc = train_model(
        "perceptual", train_x, train_y, test_x, test_y, mean, std,
        seed=seed + 200, epochs=epochs, verbose=verbose,
    )
    save_classifier(os.path.join(out_dir, "perceptual.manifest"), backbone, mean, std,
                    input_size=train_x.shape[-1], num_classes=dataset.NUM_CLASSES)
    manifest_lines.append(f"# perceptual backbone test accuracy {acc:.4f}")

    manifest_path = os.path.join(out_dir, "zoo.txt")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(manifest_lines) + "\n")
    return manifest_path

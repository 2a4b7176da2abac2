import numpy as np
import pytest
import torch
from torch import nn

from demiguise import dataset
from demiguise.classifiers import AccessTier, Classifier, default_zoo_manifest, load_zoo
from demiguise.imaging import LabeledImage
from demiguise.perceptual import ChannelWeights, PerceptualNet


def make_linear_classifier(seed: int = 0, size: int = 8, num_classes: int = 10,
                           tier: AccessTier = AccessTier.WHITE_BOX,
                           name: str = "stub") -> Classifier:
    """Tiny linear model wrapped in a real handle; fast and easy to fool."""
    torch.manual_seed(seed)
    module = nn.Sequential(nn.Flatten(), nn.Linear(3 * size * size, num_classes))
    return Classifier(
        name=name, module=module, mean=np.zeros(3), std=np.ones(3),
        input_size=size, num_classes=num_classes, access_tier=tier,
    )


def make_constant_classifier(size: int = 8, num_classes: int = 10,
                             winner: int = 0) -> Classifier:
    """Classifier whose logits ignore the input (robust to any perturbation)."""
    module = nn.Sequential(nn.Flatten(), nn.Linear(3 * size * size, num_classes))
    with torch.no_grad():
        module[1].weight.zero_()
        module[1].bias.zero_()
        module[1].bias[winner] = 5.0
    return Classifier(
        name="constant", module=module, mean=np.zeros(3), std=np.ones(3),
        input_size=size, num_classes=num_classes,
    )


class TwoTapConvs(nn.Module):
    """Two-layer tap stack for perceptual-module tests."""

    def __init__(self, seed: int = 0, bias: bool = True):
        super().__init__()
        torch.manual_seed(seed)
        self.conv1 = nn.Conv2d(3, 4, 3, padding=1, bias=bias)
        self.conv2 = nn.Conv2d(4, 6, 3, padding=1, bias=bias)
        self.pool = nn.MaxPool2d(2)

    def taps(self, x):
        t1 = torch.relu(self.conv1(x))
        t2 = torch.relu(self.conv2(self.pool(t1)))
        return [t1, t2]


class OneConv(nn.Module):
    """Single 3x3 conv tap, for the direct-convolution oracle."""

    def __init__(self, seed: int = 0, bias: bool = False):
        super().__init__()
        torch.manual_seed(seed)
        self.conv = nn.Conv2d(3, 5, 3, padding=1, bias=bias)

    def taps(self, x):
        return [torch.relu(self.conv(x))]


class SpyHandle:
    """Delegating wrapper that counts which classifier capabilities are used."""

    def __init__(self, inner: Classifier):
        self.inner = inner
        self.predict_calls = 0
        self.logits_calls = 0
        self.gradient_calls = 0

    @property
    def access_tier(self):
        return self.inner.access_tier

    @property
    def num_classes(self):
        return self.inner.num_classes

    @property
    def name(self):
        return self.inner.name

    def predict(self, x):
        self.predict_calls += 1
        return self.inner.predict(x)

    def logits(self, x):
        self.logits_calls += 1
        return self.inner.logits(x)

    def logits_t(self, xt):
        self.logits_calls += 1
        return self.inner.logits_t(xt)

    def loss_gradient(self, x, y):
        self.gradient_calls += 1
        return self.inner.loss_gradient(x, y)


def stub_perceptual_net(seed: int = 0, size: int = 8) -> PerceptualNet:
    return PerceptualNet(TwoTapConvs(seed=seed), input_size=size)


def random_image(rng: np.random.Generator, size: int = 8) -> np.ndarray:
    return rng.random((3, size, size)).astype(np.float32)


def labeled_for(c: Classifier, rng: np.random.Generator,
                sample_id: str = "t0") -> LabeledImage:
    """A random image labeled with the classifier's own prediction."""
    img = random_image(rng, c.input_size)
    return LabeledImage(image=img, label=c.predict(img), sample_id=sample_id)


# -- shared session fixtures over the shipped zoo ------------------------------


@pytest.fixture(scope="session")
def zoo():
    return load_zoo(default_zoo_manifest())


@pytest.fixture(scope="session")
def pnet():
    import os

    from demiguise.classifiers import default_zoo_dir

    return PerceptualNet.load(os.path.join(default_zoo_dir(), "perceptual.manifest"))


@pytest.fixture(scope="session")
def pweights(pnet):
    return ChannelWeights.ones_for(pnet)


@pytest.fixture(scope="session")
def desk_pool(zoo):
    """120 preprocessed desk samples correctly classified by every zoo model."""
    images, labels = dataset.preprocessed_split(220, seed=303)
    picked = []
    for i, (img, label) in enumerate(zip(images, labels)):
        if all(m.predict(img) == int(label) for m in zoo):
            picked.append(LabeledImage(image=img, label=int(label),
                                       sample_id=f"pool{i:04d}"))
        if len(picked) >= 120:
            break
    assert len(picked) >= 100, "desk zoo misclassifies too much of the pool"
    return picked

"""Backbone registry: name -> frozen feature extractor plus preprocessing.

Two families:

- torchvision classifiers with their published pretrained weights, ending
  at the penultimate pooled features. These need the weights to be
  downloadable (or already cached); when they are not, building raises an
  error that says how to fix it.
- seeded frozen random-projection CNNs ("randconv"). No downloads, fully
  deterministic, useful offline and in tests; random convolutional
  features are weak but honest view builders.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn
from torchvision import transforms


@dataclass
class Backbone:
    name: str
    dim: int
    model: nn.Module
    preprocess: transforms.Compose
    description: str


class BackboneUnavailable(RuntimeError):
    pass


_IMAGENET_NORM = transforms.Normalize(mean=[0.485, 0.456, 0.406],
                                      std=[0.229, 0.224, 0.225])


def _torchvision_backbone(name, dim, builder, weights):
    def build():
        try:
            net = builder(weights=weights)
        except Exception as e:  # typically a download failure
            raise BackboneUnavailable(
                f"{name}: could not fetch pretrained weights ({e}); "
                "download them on a connected machine into TORCH_HOME "
                "(~/.cache/torch) or use an offline randconv backbone"
            ) from e
        net.fc = nn.Identity() if hasattr(net, "fc") else net.fc
        if hasattr(net, "classifier"):
            net.classifier = nn.Identity()
        net.eval()
        pre = transforms.Compose([
            transforms.Resize(256),
            transforms.CenterCrop(224),
            transforms.ToTensor(),
            _IMAGENET_NORM,
        ])
        return Backbone(name, dim, net, pre,
                        f"torchvision {name} penultimate features, "
                        "resize 256 / center-crop 224 / imagenet norm")
    return build


class _RandConv(nn.Module):
    """Frozen random CNN: seeded init, global average pooled features."""

    def __init__(self, dim, seed, width=32):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(3, width, 5, stride=2, padding=2), nn.ReLU(),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1), nn.ReLU(),
            nn.Conv2d(2 * width, dim, 3, stride=2, padding=1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
        )
        gen = torch.Generator().manual_seed(seed)
        for p in self.parameters():
            with torch.no_grad():
                p.uniform_(-0.25, 0.25, generator=gen)
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def forward(self, x):
        return self.features(x)


def _randconv_backbone(name, dim, seed):
    def build():
        net = _RandConv(dim, seed)
        pre = transforms.Compose([
            transforms.Resize(64),
            transforms.CenterCrop(64),
            transforms.ToTensor(),
            transforms.Normalize(mean=[0.5, 0.5, 0.5], std=[0.5, 0.5, 0.5]),
        ])
        return Backbone(name, dim, net, pre,
                        f"seeded random conv features (seed {seed}), "
                        "resize 64 / center-crop 64 / [-1,1] norm")
    return build


def _make_registry():
    from torchvision.models import (MobileNet_V3_Small_Weights,
                                    ResNet18_Weights, mobilenet_v3_small,
                                    resnet18)
    return {
        "resnet18-imagenet": _torchvision_backbone(
            "resnet18-imagenet", 512, resnet18,
            ResNet18_Weights.IMAGENET1K_V1),
        "mobilenet-v3-small-imagenet": _torchvision_backbone(
            "mobilenet-v3-small-imagenet", 576, mobilenet_v3_small,
            MobileNet_V3_Small_Weights.IMAGENET1K_V1),
        "randconv-a-64": _randconv_backbone("randconv-a-64", 64, seed=101),
        "randconv-b-96": _randconv_backbone("randconv-b-96", 96, seed=202),
    }


REGISTRY = _make_registry()


def available_backbones():
    return sorted(REGISTRY)


def build_backbone(name):
    if name not in REGISTRY:
        raise BackboneUnavailable(
            f"unknown backbone {name!r}; available: "
            f"{', '.join(available_backbones())}")
    return REGISTRY[name]()

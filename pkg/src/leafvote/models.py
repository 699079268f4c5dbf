"""Frozen pretrained backbones with a replaceable linear head.

Backbone weights come from a provider. ``TorchvisionProvider`` fetches the
ImageNet weights through torchvision (cached under ``LEAFVOTE_WEIGHTS_DIR``
when set); ``RandomBackboneProvider`` builds the same architectures from a
seed so tests and offline runs never touch the network.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import numpy as np
import torch
import torch.nn as nn
import torchvision

from .data import IMAGENET_MEAN, IMAGENET_STD
from .errors import BadBatch, ProviderError, UnknownArch

WEIGHTS_DIR_ENV = "LEAFVOTE_WEIGHTS_DIR"
CHECKPOINT_FORMAT = "leafvote-head/1"


class Arch(str, enum.Enum):
    RESNET50 = "resnet50"
    EFFICIENTNET_B0 = "efficientnet_b0"
    DENSENET121 = "densenet121"

    @classmethod
    def parse(cls, name: "str | Arch") -> "Arch":
        if isinstance(name, Arch):
            return name
        key = name.lower().replace("-", "_")
        aliases = {"efficientnetb0": "efficientnet_b0", "efficientnet": "efficientnet_b0"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise UnknownArch(f"unknown architecture {name!r}; choose from {[a.value for a in cls]}") from None


# attribute holding the original ImageNet classifier
_HEAD_ATTR = {
    Arch.RESNET50: "fc",
    Arch.EFFICIENTNET_B0: "classifier",
    Arch.DENSENET121: "classifier",
}

_TV_WEIGHTS = {
    Arch.RESNET50: "ResNet50_Weights",
    Arch.EFFICIENTNET_B0: "EfficientNet_B0_Weights",
    Arch.DENSENET121: "DenseNet121_Weights",
}


def _last_linear(module: nn.Module) -> nn.Linear:
    linears = [m for m in module.modules() if isinstance(m, nn.Linear)]
    if not linears:
        raise UnknownArch(f"no linear classifier found in {type(module).__name__}")
    return linears[-1]


@dataclass(frozen=True)
class ModelSpec:
    arch: Arch
    num_classes: int
    pretrained: bool = True

    def __post_init__(self):
        object.__setattr__(self, "arch", Arch.parse(self.arch))
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")

    def to_dict(self) -> dict:
        return {"arch": self.arch.value, "num_classes": self.num_classes, "pretrained": self.pretrained}


class BackboneProvider(Protocol):
    name: str

    def load(self, arch: Arch) -> nn.Module:
        """Return the full ImageNet architecture with its weights loaded."""
        ...


class TorchvisionProvider:
    name = "torchvision"

    def load(self, arch: Arch) -> nn.Module:
        cache = os.environ.get(WEIGHTS_DIR_ENV)
        if cache:
            torch.hub.set_dir(cache)
        try:
            weights = getattr(torchvision.models, _TV_WEIGHTS[arch]).DEFAULT
            return getattr(torchvision.models, arch.value)(weights=weights)
        except Exception as exc:  # download, hash or unpickling failures
            raise ProviderError(f"could not obtain pretrained {arch.value} weights: {exc}") from exc


class RandomBackboneProvider:
    """Seeded random weights with BatchNorm statistics calibrated on synthetic images.

    Freshly initialised BatchNorm layers carry unit running statistics,
    which makes some architectures emit near-zero or exploding features in
    eval mode. A few seeded batches (half uniform noise, half flat random
    tints with mild noise) are pushed through the network with only the
    norm layers in train mode to give them usable statistics. Calibrated
    statistics are rounded through float16 so the checksum does not depend
    on BLAS thread scheduling.
    """

    name = "random"

    def __init__(self, seed: int = 0, calibration_batches: int = 4, batch_size: int = 16):
        self.seed = seed
        self.calibration_batches = calibration_batches
        self.batch_size = batch_size

    def load(self, arch: Arch) -> nn.Module:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed)
            model = getattr(torchvision.models, arch.value)(weights=None)
        self._calibrate(model)
        return model

    def _calibration_batch(self, gen: torch.Generator) -> torch.Tensor:
        half = self.batch_size // 2
        noise = torch.rand(self.batch_size - half, 3, 64, 64, generator=gen)
        tints = torch.rand(half, 3, 1, 1, generator=gen) + 0.1 * torch.randn(half, 3, 64, 64, generator=gen)
        batch = torch.cat([noise, tints.clamp(0, 1)])
        batch = nn.functional.interpolate(batch, size=(224, 224), mode="bilinear", align_corners=False)
        mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)
        return (batch - mean) / std

    def _calibrate(self, model: nn.Module) -> None:
        norms = [m for m in model.modules() if isinstance(m, nn.modules.batchnorm._BatchNorm)]
        if not norms or self.calibration_batches < 1:
            return
        for m in norms:
            m.reset_running_stats()
            m.momentum = None  # cumulative average over the calibration batches
        gen = torch.Generator().manual_seed(self.seed)
        # only the norm layers run in train mode; stochastic depth and dropout stay off
        model.eval()
        for m in norms:
            m.train()
        with torch.no_grad():
            for _ in range(self.calibration_batches):
                model(self._calibration_batch(gen))
        model.eval()
        for m in norms:
            m.momentum = 0.1
            m.running_mean.copy_(m.running_mean.half().float())
            m.running_var.copy_(m.running_var.half().float())


PROVIDERS: dict[str, Callable[[], BackboneProvider]] = {
    "torchvision": TorchvisionProvider,
    "random": RandomBackboneProvider,
}


def get_provider(name: str | None, pretrained: bool = True) -> BackboneProvider:
    if name is None:
        name = "torchvision" if pretrained else "random"
    try:
        return PROVIDERS[name]()
    except KeyError:
        raise ProviderError(f"unknown provider {name!r}; choose from {sorted(PROVIDERS)}") from None


def module_checksum(module: nn.Module) -> str:
    """sha256 over every parameter and buffer (name, dtype, shape, bytes)."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        t = tensor.detach().cpu().contiguous()
        h.update(name.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()


@dataclass
class AdaptedModel:
    spec: ModelSpec
    backbone: nn.Module
    head: nn.Linear
    backbone_checksum: str
    provider: str
    head_seed: int
    input_size: tuple[int, int] = (224, 224)
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def tag(self) -> str:
        return self.spec.arch.value

    @property
    def feature_dim(self) -> int:
        return self.head.in_features

    @property
    def device(self) -> torch.device:
        return self.head.weight.device

    def to(self, device: str | torch.device) -> "AdaptedModel":
        self.backbone.to(device)
        self.head.to(device)
        return self

    def _check_batch(self, batch) -> torch.Tensor:
        t = torch.as_tensor(np.asarray(batch, dtype=np.float32)) if not isinstance(batch, torch.Tensor) else batch.float()
        if t.ndim != 4 or t.shape[1] != 3 or tuple(t.shape[2:]) != tuple(self.input_size):
            raise BadBatch(f"expected B×3×{self.input_size[0]}×{self.input_size[1]}, got {tuple(t.shape)}")
        if t.shape[0] == 0:
            raise BadBatch("empty batch")
        return t

    @torch.no_grad()
    def features(self, batch) -> torch.Tensor:
        self.backbone.eval()
        return self.backbone(self._check_batch(batch).to(self.device)).cpu()

    @torch.no_grad()
    def probs_from_features(self, feats) -> np.ndarray:
        logits = self.head(torch.as_tensor(feats, dtype=torch.float32).to(self.device)).double()
        return torch.softmax(logits, dim=1).cpu().numpy()

    def probs(self, batch) -> np.ndarray:
        return self.probs_from_features(self.features(batch))

    def head_state(self) -> dict[str, np.ndarray]:
        return {
            "weight": self.head.weight.detach().cpu().numpy().copy(),
            "bias": self.head.bias.detach().cpu().numpy().copy(),
        }

    def load_head_state(self, state: dict[str, np.ndarray]) -> None:
        with torch.no_grad():
            self.head.weight.copy_(torch.as_tensor(state["weight"]))
            self.head.bias.copy_(torch.as_tensor(state["bias"]))

    def current_backbone_checksum(self) -> str:
        return module_checksum(self.backbone)


def build_model(
    spec: ModelSpec,
    head_seed: int = 42,
    provider: BackboneProvider | str | None = None,
) -> AdaptedModel:
    """Load a backbone, freeze it, and attach a fresh ``feature_dim -> C`` head."""
    if not isinstance(provider, (str, type(None))):
        prov = provider
    else:
        prov = get_provider(provider, spec.pretrained)
    net = prov.load(spec.arch)
    attr = _HEAD_ATTR[spec.arch]
    feature_dim = _last_linear(getattr(net, attr)).in_features
    setattr(net, attr, nn.Identity())
    for p in net.parameters():
        p.requires_grad_(False)
    net.eval()

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(head_seed)
        head = nn.Linear(feature_dim, spec.num_classes, bias=True)

    return AdaptedModel(
        spec=spec,
        backbone=net,
        head=head,
        backbone_checksum=module_checksum(net),
        provider=prov.name,
        head_seed=head_seed,
    )


def forward_probs(model: AdaptedModel, batch) -> np.ndarray:
    """Softmax class probabilities, one row per image in a B×3×H×W batch."""
    return model.probs(batch)


# -------------------------------------------------------------- checkpoints


def save_checkpoint(model: AdaptedModel, path: str | Path, **extra: Any) -> Path:
    """Write the head, spec, checksum and ``extra`` metadata to an ``.npz`` file.

    Layout: arrays ``head_weight`` (C×D float32) and ``head_bias`` (C,),
    plus ``meta``, a JSON string with keys ``format``, ``spec``,
    ``provider``, ``head_seed``, ``backbone_checksum`` and anything passed
    in ``extra`` (history, checkpoint policy, ...). Backbone weights are not
    stored.
    """
    path = Path(path)
    meta = {
        "format": CHECKPOINT_FORMAT,
        "spec": model.spec.to_dict(),
        "provider": model.provider,
        "head_seed": model.head_seed,
        "backbone_checksum": model.backbone_checksum,
        **model.meta,
        **extra,
    }
    state = model.head_state()
    with open(path, "wb") as fh:
        np.savez(fh, head_weight=state["weight"], head_bias=state["bias"], meta=np.array(json.dumps(meta, sort_keys=True)))
    return path


def read_checkpoint_meta(path: str | Path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        return json.loads(str(z["meta"]))


def load_checkpoint(path: str | Path, provider: BackboneProvider | str | None = None, verify: bool = True) -> AdaptedModel:
    """Rebuild a model from a checkpoint, re-fetching and verifying the backbone."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta"]))
        weight, bias = z["head_weight"], z["head_bias"]
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ProviderError(f"{path}: unsupported checkpoint format {meta.get('format')!r}")
    spec = ModelSpec(**meta["spec"])
    model = build_model(spec, head_seed=meta["head_seed"], provider=provider if provider is not None else meta["provider"])
    if verify and model.backbone_checksum != meta["backbone_checksum"]:
        raise ProviderError(
            f"{path}: backbone checksum mismatch (checkpoint {meta['backbone_checksum'][:12]}, "
            f"provider {model.backbone_checksum[:12]})"
        )
    model.load_head_state({"weight": weight, "bias": bias})
    known = {"format", "spec", "provider", "head_seed", "backbone_checksum"}
    model.meta = {k: v for k, v in meta.items() if k not in known}
    return model

"""Multi-depth convolutional feature extractor for the perceptual loss.

Topology is the classic 16-conv ladder (2-2-4-4-4 convs per stage, max
pooling between stages, widths 64-128-256-512-512 at base_width=64). Tap
names follow the ``conv{stage}_{index}`` convention and yield
post-activation feature maps at 1/2, 1/4, 1/8, and 1/16 of the input
resolution for the default taps.

Weights come either from a named-tensor checkpoint file (e.g. exported
pretrained weights, see scripts/export_vgg19_weights.py) or from
``random({seed})``, a seeded fan-in-scaled initialization with identical
topology so everything downstream runs offline. The extractor maps
network-domain inputs from [-1, 1] to [0, 1] and then applies the
per-channel mean/std normalization of the pretrained training regime.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError
from .params import ParamStore, config_hash

# (stage, convs in stage); pooling after each stage
_STAGE_PLAN = ((1, 2), (2, 2), (3, 4), (4, 4), (5, 4))
_STAGE_WIDTH_FACTORS = (1, 2, 4, 8, 8)

CHANNEL_MEAN = (0.485, 0.456, 0.406)
CHANNEL_STD = (0.229, 0.224, 0.225)


@dataclass(frozen=True)
class FeatureExtractorConfig:
    layer_taps: tuple[str, ...] = ("conv2_2", "conv3_3", "conv4_4", "conv5_4")
    weights_source: str = "random(0)"
    base_width: int = 64
    preprocessing: str = "signed_unit_to_imagenet"

    def __post_init__(self):
        valid = set(all_layer_names())
        for tap in self.layer_taps:
            if tap not in valid:
                raise ConfigError(f"unknown tap {tap!r}; valid taps: {sorted(valid)}")
        if not self.layer_taps:
            raise ConfigError("layer_taps must not be empty")
        if self.base_width < 1:
            raise ConfigError(f"base_width must be >= 1, got {self.base_width}")


def all_layer_names() -> list[str]:
    return [f"conv{s}_{j}" for s, n in _STAGE_PLAN for j in range(1, n + 1)]


def _pools_before(tap: str) -> int:
    stage = int(tap[4])
    return stage - 1


class FeatureExtractor(nn.Module):
    """Frozen conv ladder returning the configured taps, deepest last."""

    def __init__(self, config: FeatureExtractorConfig):
        super().__init__()
        self.config = config
        names = all_layer_names()
        deepest = max(names.index(t) for t in config.layer_taps)
        self._ordered_taps = [n for n in names if n in config.layer_taps]

        convs = {}
        c_prev = 3
        idx = 0
        for (stage, n_convs), factor in zip(_STAGE_PLAN, _STAGE_WIDTH_FACTORS):
            width = config.base_width * factor
            for j in range(1, n_convs + 1):
                convs[f"conv{stage}_{j}"] = nn.Conv2d(c_prev, width, 3, padding=1)
                c_prev = width
                idx += 1
                if idx > deepest:
                    break
            if idx > deepest:
                break
        self.convs = nn.ModuleDict(convs)
        self.pool = nn.MaxPool2d(2, 2)
        for p in self.parameters():
            p.requires_grad_(False)

    @property
    def min_input_size(self) -> int:
        deepest = self._ordered_taps[-1]
        return 2 ** _pools_before(deepest) * 2

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected an N x 3 x H x W batch, got {tuple(x.shape)}")
        m = self.min_input_size
        if x.shape[2] < m or x.shape[3] < m:
            raise ShapeError(
                f"input {x.shape[2]}x{x.shape[3]} is too small for the deepest tap "
                f"{self._ordered_taps[-1]} (needs at least {m}x{m})"
            )
        mean = x.new_tensor(CHANNEL_MEAN).view(1, 3, 1, 1)
        std = x.new_tensor(CHANNEL_STD).view(1, 3, 1, 1)
        y = ((x + 1.0) / 2.0 - mean) / std

        taps = {}
        current_stage = 1
        for name, conv in self.convs.items():
            stage = int(name[4])
            if stage != current_stage:
                y = self.pool(y)
                current_stage = stage
            y = torch.relu(conv(y))
            if name in self.config.layer_taps:
                taps[name] = y
        return [taps[n] for n in self._ordered_taps]


def make_feature_extractor(
    config: FeatureExtractorConfig, dtype: str = "float32"
) -> FeatureExtractor:
    """Build an extractor from a weights file or a seeded random source."""
    from .networks import _TORCH_DTYPES, _init_module, _load_module_from_store

    module = FeatureExtractor(config)
    m = re.fullmatch(r"random\((\d+)\)", config.weights_source)
    if m:
        _init_module(module, int(m.group(1)), dtype)
    else:
        store = ParamStore.load(config.weights_source)
        store.metadata["dtype"] = dtype
        _load_module_from_store(module, store)
        module.to(_TORCH_DTYPES[dtype])
    for p in module.parameters():
        p.requires_grad_(False)
    return module


def extractor_store(module: FeatureExtractor, seed: int = 0) -> ParamStore:
    """Snapshot extractor weights in the shared checkpoint format."""
    tensors = {n: p.detach().cpu().numpy().copy() for n, p in module.named_parameters()}
    cfg = asdict(module.config)
    cfg["layer_taps"] = list(cfg["layer_taps"])
    return ParamStore(
        tensors=tensors,
        config_hash=config_hash(cfg),
        creation_seed=seed,
        metadata={"kind": "feature_extractor", "config": cfg},
    )


def extract_features(extractor: FeatureExtractor, batch: torch.Tensor) -> list[torch.Tensor]:
    """Post-activation feature maps at the configured taps, deepest last."""
    return extractor(batch)

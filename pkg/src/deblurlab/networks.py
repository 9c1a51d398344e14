"""Restoration generator and patch critic.

Generator layer plan (clamped residual around a global skip connection):

    head    7x7 stride-1 conv (reflect pad) 3 -> base_channels, IN, ReLU
    down i  3x3 stride-2 conv, doubling channels; the last downsampling
            conv outputs rfb_channels                          (IN, ReLU)
    body    n_rfbs multi-branch dilated blocks at rfb_channels
    up i    4x4 stride-2 transposed conv, mirroring the down ladder
                                                               (IN, ReLU)
    final   7x7 stride-1 conv (reflect pad) -> 3, tanh, no normalization
    output  clamp(input + residual, -1, 1); the clamp is skipped inside
            the training graph to keep gradients alive

Each multi-branch block has five branches: a 1x1 shortcut plus four
feature branches (1x1 channel reduction, then branch-specific spatial
convs, then a dilated 3x3). Branch outputs are concatenated, projected by
a bare 1x1 conv, added to the shortcut, and passed through ReLU; keeping
the projection and shortcut free of normalization makes the merge linear
in the branch outputs.

Critic plan (unbounded patch scores): 4x4 convs with pad 1; every conv in
``channel_plan`` except the last uses stride 2, the remaining ones stride
1; LeakyReLU(0.2) activations; instance norm on all but the first layer;
a final 4x4 stride-1 conv to one channel with no squashing.

Convolutions followed by instance norm carry no bias (the norm cancels a
constant channel shift; its affine beta plays that role). Bare convs (the
block shortcut/projection, the generator's final conv, the critic's first
and last convs) keep their biases.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn

from .errors import ConfigError, ShapeError
from .params import ParamStore, config_hash

_TORCH_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class RFBSConfig:
    """One multi-branch block: 1 shortcut + 4 dilated feature branches."""

    in_channels: int
    dilation_rates: tuple[int, ...] = (1, 3, 3, 5)

    def __post_init__(self):
        if self.in_channels < 4 or self.in_channels % 4 != 0:
            raise ConfigError(
                f"in_channels must be a positive multiple of 4, got {self.in_channels}"
            )
        if len(self.dilation_rates) != 4 or any(d < 1 for d in self.dilation_rates):
            raise ConfigError(f"need 4 positive dilation rates, got {self.dilation_rates}")

    @property
    def branch_channels(self) -> int:
        return self.in_channels // 4


@dataclass(frozen=True)
class GeneratorConfig:
    base_channels: int = 64
    n_rfbs: int = 9
    rfb_channels: int = 256
    downsample_steps: int = 2
    dilation_rates: tuple[int, ...] = (1, 3, 3, 5)

    def __post_init__(self):
        if self.base_channels < 1:
            raise ConfigError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.n_rfbs < 1:
            raise ConfigError(f"n_rfbs must be >= 1, got {self.n_rfbs}")
        if self.rfb_channels % 4 != 0:
            raise ConfigError(
                f"rfb_channels must be divisible by 4, got {self.rfb_channels}"
            )
        if self.downsample_steps < 1:
            raise ConfigError(
                f"downsample_steps must be >= 1, got {self.downsample_steps}"
            )

    @property
    def channel_ladder(self) -> tuple[int, ...]:
        """Channel counts from the head down to the block resolution."""
        mids = [self.base_channels * 2 ** (i + 1) for i in range(self.downsample_steps - 1)]
        return (self.base_channels, *mids, self.rfb_channels)

    @property
    def size_multiple(self) -> int:
        return 2**self.downsample_steps


@dataclass(frozen=True)
class DiscriminatorConfig:
    channel_plan: tuple[int, ...] = (64, 128, 256, 512)

    def __post_init__(self):
        if len(self.channel_plan) < 1 or any(c < 1 for c in self.channel_plan):
            raise ConfigError(f"channel_plan must be non-empty positive, got {self.channel_plan}")

    @property
    def layer_geometry(self) -> tuple[tuple[int, int, int], ...]:
        """(kernel, stride, padding) per conv, including the score conv."""
        n = len(self.channel_plan)
        geoms = [(4, 2 if i < n - 1 else 1, 1) for i in range(n)]
        geoms.append((4, 1, 1))
        return tuple(geoms)

    @property
    def patch_receptive_field(self) -> int:
        rf = 1
        for k, s, _ in reversed(self.layer_geometry):
            rf = rf * s + (k - s)
        return rf

    @property
    def min_input_size(self) -> int:
        return self.patch_receptive_field

    def score_map_size(self, h: int, w: int) -> tuple[int, int]:
        """Closed-form score-map shape for an h x w input."""
        for k, s, p in self.layer_geometry:
            h = (h + 2 * p - k) // s + 1
            w = (w + 2 * p - k) // s + 1
        return h, w


def _conv_in_relu(c_in, c_out, kernel, stride=1, padding=0, dilation=1, relu=True, pad_mode="zeros"):
    # Instance norm cancels a constant channel shift, so these convs carry
    # no bias; the norm's affine beta plays that role.
    layers = [
        nn.Conv2d(
            c_in, c_out, kernel,
            stride=stride, padding=padding, dilation=dilation, padding_mode=pad_mode,
            bias=False,
        ),
        nn.InstanceNorm2d(c_out, affine=True),
    ]
    if relu:
        layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class RFBSBlock(nn.Module):
    """Five-branch dilated block; preserves channel count and resolution."""

    def __init__(self, config: RFBSConfig):
        super().__init__()
        self.config = config
        c, bc = config.in_channels, config.branch_channels
        d0, d1, d2, d3 = config.dilation_rates
        self.shortcut = nn.Conv2d(c, c, 1)
        self.branches = nn.ModuleList(
            [
                nn.Sequential(
                    _conv_in_relu(c, bc, 1),
                    _conv_in_relu(bc, bc, 3, padding=d0, dilation=d0, relu=False),
                ),
                nn.Sequential(
                    _conv_in_relu(c, bc, 1),
                    _conv_in_relu(bc, bc, (1, 3), padding=(0, 1)),
                    _conv_in_relu(bc, bc, 3, padding=d1, dilation=d1, relu=False),
                ),
                nn.Sequential(
                    _conv_in_relu(c, bc, 1),
                    _conv_in_relu(bc, bc, (3, 1), padding=(1, 0)),
                    _conv_in_relu(bc, bc, 3, padding=d2, dilation=d2, relu=False),
                ),
                nn.Sequential(
                    _conv_in_relu(c, bc, 1),
                    _conv_in_relu(bc, bc, 3, padding=1),
                    _conv_in_relu(bc, bc, 3, padding=d3, dilation=d3, relu=False),
                ),
            ]
        )
        self.project = nn.Conv2d(4 * bc, c, 1)

    def pre_activation(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[1] != self.config.in_channels:
            raise ShapeError(
                f"expected {self.config.in_channels} channels, got {x.shape[1]}"
            )
        merged = torch.cat([branch(x) for branch in self.branches], dim=1)
        return self.project(merged) + self.shortcut(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return torch.relu(self.pre_activation(x))


class Generator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        self.config = config
        ladder = config.channel_ladder
        self.head = _conv_in_relu(3, ladder[0], 7, padding=3, pad_mode="reflect")
        self.downs = nn.ModuleList(
            [
                _conv_in_relu(ladder[i], ladder[i + 1], 3, stride=2, padding=1)
                for i in range(config.downsample_steps)
            ]
        )
        self.blocks = nn.ModuleList(
            [
                RFBSBlock(RFBSConfig(config.rfb_channels, config.dilation_rates))
                for _ in range(config.n_rfbs)
            ]
        )
        ups = []
        for i in range(config.downsample_steps):
            c_in, c_out = ladder[-1 - i], ladder[-2 - i]
            ups.append(
                nn.Sequential(
                    nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1, bias=False),
                    nn.InstanceNorm2d(c_out, affine=True),
                    nn.ReLU(),
                )
            )
        self.ups = nn.ModuleList(ups)
        self.final_conv = nn.Conv2d(ladder[0], 3, 7, padding=3, padding_mode="reflect")

    def residual(self, x: torch.Tensor) -> torch.Tensor:
        m = self.config.size_multiple
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected an N x 3 x H x W batch, got {tuple(x.shape)}")
        if x.shape[2] % m or x.shape[3] % m:
            raise ShapeError(
                f"H and W must be divisible by {m}, got {x.shape[2]}x{x.shape[3]}; "
                f"pad the input up to the next multiple of {m} and crop the output back"
            )
        y = self.head(x)
        for down in self.downs:
            y = down(y)
        for block in self.blocks:
            y = block(y)
        for up in self.ups:
            y = up(y)
        return torch.tanh(self.final_conv(y))

    def forward(self, x: torch.Tensor, clamp: bool = True) -> torch.Tensor:
        out = x + self.residual(x)
        return out.clamp(-1.0, 1.0) if clamp else out


class Critic(nn.Module):
    def __init__(self, config: DiscriminatorConfig):
        super().__init__()
        self.config = config
        plan = config.channel_plan
        geoms = config.layer_geometry
        layers: list[nn.Module] = []
        c_prev = 3
        for i, c in enumerate(plan):
            k, s, p = geoms[i]
            layers.append(nn.Conv2d(c_prev, c, k, stride=s, padding=p, bias=(i == 0)))
            if i > 0:
                # Batch statistics degenerate at batch size 1, and gradient
                # penalties conflict with batch norm; instance norm instead.
                layers.append(nn.InstanceNorm2d(c, affine=True))
            layers.append(nn.LeakyReLU(0.2))
            c_prev = c
        k, s, p = geoms[-1]
        layers.append(nn.Conv2d(c_prev, 1, k, stride=s, padding=p))
        self.layers = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ShapeError(f"expected an N x 3 x H x W batch, got {tuple(x.shape)}")
        m = self.config.min_input_size
        if x.shape[2] < m or x.shape[3] < m:
            raise ShapeError(
                f"input {x.shape[2]}x{x.shape[3]} is below the critic's minimum size {m}"
            )
        return self.layers(x)


def _init_module(module: nn.Module, seed: int, dtype: str) -> None:
    """Fan-in-scaled Gaussian weights, zero biases, identity norm affines.

    Weight tensors with >= 2 dims get std 1/sqrt(prod(shape[1:])); 1-D
    ``weight`` tensors are normalization gains (ones). Deterministic per
    seed: tensors are filled in named_parameters order.
    """
    if dtype not in _TORCH_DTYPES:
        raise ConfigError(f"dtype must be one of {sorted(_TORCH_DTYPES)}, got {dtype!r}")
    module.to(_TORCH_DTYPES[dtype])
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, p in module.named_parameters():
            if p.ndim >= 2:
                fan_in = math.prod(p.shape[1:])
                vals = rng.standard_normal(tuple(p.shape)) / math.sqrt(fan_in)
                p.copy_(torch.from_numpy(vals).to(p.dtype))
            elif name.endswith("weight"):
                p.fill_(1.0)
            else:
                p.zero_()


def _store_from_module(module: nn.Module, kind: str, cfg_dict: dict, seed: int, dtype: str) -> ParamStore:
    tensors = {
        name: p.detach().cpu().numpy().copy() for name, p in module.named_parameters()
    }
    return ParamStore(
        tensors=tensors,
        config_hash=config_hash(cfg_dict),
        creation_seed=seed,
        metadata={"kind": kind, "config": cfg_dict, "dtype": dtype},
    )


def _load_module_from_store(module: nn.Module, store: ParamStore) -> nn.Module:
    dtype = _TORCH_DTYPES[store.metadata.get("dtype", "float32")]
    module.to(dtype)
    named = dict(module.named_parameters())
    if set(named) != set(store.tensors):
        missing = set(named) ^ set(store.tensors)
        raise ShapeError(f"parameter names do not match the config: {sorted(missing)[:5]}")
    with torch.no_grad():
        for name, p in named.items():
            arr = store.tensors[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise ShapeError(
                    f"shape mismatch for {name}: store {arr.shape} vs module {tuple(p.shape)}"
                )
            p.copy_(torch.from_numpy(arr).to(dtype))
    return module


def init_generator(config: GeneratorConfig, seed: int, dtype: str = "float32") -> ParamStore:
    module = Generator(config)
    _init_module(module, seed, dtype)
    return _store_from_module(module, "generator", asdict(config), seed, dtype)


def build_generator(store: ParamStore) -> Generator:
    cfg = store.metadata["config"]
    config = GeneratorConfig(
        base_channels=cfg["base_channels"],
        n_rfbs=cfg["n_rfbs"],
        rfb_channels=cfg["rfb_channels"],
        downsample_steps=cfg["downsample_steps"],
        dilation_rates=tuple(cfg["dilation_rates"]),
    )
    return _load_module_from_store(Generator(config), store)


def init_discriminator(config: DiscriminatorConfig, seed: int, dtype: str = "float32") -> ParamStore:
    module = Critic(config)
    _init_module(module, seed, dtype)
    return _store_from_module(module, "critic", asdict(config), seed, dtype)


def build_discriminator(store: ParamStore) -> Critic:
    config = DiscriminatorConfig(channel_plan=tuple(store.metadata["config"]["channel_plan"]))
    return _load_module_from_store(Critic(config), store)


def init_rfb_s(config: RFBSConfig, seed: int, dtype: str = "float32") -> ParamStore:
    module = RFBSBlock(config)
    _init_module(module, seed, dtype)
    return _store_from_module(module, "rfb_s", asdict(config), seed, dtype)


def build_rfb_s(store: ParamStore) -> RFBSBlock:
    cfg = store.metadata["config"]
    config = RFBSConfig(
        in_channels=cfg["in_channels"], dilation_rates=tuple(cfg["dilation_rates"])
    )
    return _load_module_from_store(RFBSBlock(config), store)


def _as_tensor(batch, dtype_name: str) -> tuple[torch.Tensor, bool]:
    if isinstance(batch, torch.Tensor):
        return batch, False
    return torch.from_numpy(np.asarray(batch)).to(_TORCH_DTYPES[dtype_name]), True


def generator_forward(store: ParamStore, blurred, clamp: bool = True):
    """Run the generator from a parameter store; accepts numpy or torch."""
    module = build_generator(store)
    x, from_numpy = _as_tensor(blurred, store.metadata.get("dtype", "float32"))
    with torch.no_grad():
        out = module(x, clamp=clamp)
    return out.numpy() if from_numpy else out


def discriminator_forward(store: ParamStore, images):
    module = build_discriminator(store)
    x, from_numpy = _as_tensor(images, store.metadata.get("dtype", "float32"))
    with torch.no_grad():
        out = module(x)
    return out.numpy() if from_numpy else out


def rfb_s_forward(store: ParamStore, x):
    module = build_rfb_s(store)
    t, from_numpy = _as_tensor(x, store.metadata.get("dtype", "float32"))
    with torch.no_grad():
        out = module(t)
    return out.numpy() if from_numpy else out

"""Training loop: alternating critic/generator updates under the protocol.

Protocol highlights: 500 epochs by default, learning rate 1e-4 held for the
first 250 epochs then decayed linearly to 1e-5, batch size 1, crops drawn
from randomly chosen scales {256, 384, 512, 640}, independent horizontal
and vertical flips, and ``critic_steps_per_gen`` critic updates per
generator update. One epoch is one pass over the manifest pairs.

All stochastic choices (scale, crop position, flips, penalty interpolation)
come from a single numpy generator whose state is checkpointed, so a
resumed run reproduces an uninterrupted one bit-exactly in single-worker
mode.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .blur import PairManifest
from .errors import ConfigError, NumericalError, ParameterError, ShapeError
from .features import FeatureExtractor, FeatureExtractorConfig, make_feature_extractor
from .images import load_image, unit_to_signed
from .losses import (
    LossBundle,
    LossWeights,
    critic_loss_parts,
    feature_loss,
    generator_adv_loss,
    l2_loss,
    total_generator_loss,
)
from .networks import (
    _TORCH_DTYPES,
    Critic,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    _load_module_from_store,
    _store_from_module,
    build_discriminator,
    build_generator,
    init_discriminator,
    init_generator,
)
from .params import ParamStore, config_hash

log = logging.getLogger(__name__)

LOSS_LOG_FILENAME = "loss_log.jsonl"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 500
    lr_initial: float = 1e-4
    lr_final: float = 1e-5
    decay_start_epoch: int = 250
    batch_size: int = 1
    crop_scales: tuple[int, ...] = (256, 384, 512, 640)
    critic_steps_per_gen: int = 5
    seed: int = 0
    loss_weights: LossWeights = field(default_factory=LossWeights)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    critic: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    extractor: FeatureExtractorConfig = field(default_factory=FeatureExtractorConfig)
    checkpoint_every: int = 1
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 <= self.decay_start_epoch <= self.epochs:
            raise ConfigError(
                f"need 0 <= decay_start_epoch <= epochs, got {self.decay_start_epoch}"
            )
        if self.lr_initial < 0 or self.lr_final < 0 or self.lr_final > self.lr_initial:
            raise ConfigError("need 0 <= lr_final <= lr_initial")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.crop_scales or any(
            s % self.generator.size_multiple for s in self.crop_scales
        ):
            raise ConfigError(
                f"crop scales {self.crop_scales} must all be divisible by "
                f"{self.generator.size_multiple}"
            )
        if self.critic_steps_per_gen < 1:
            raise ConfigError("critic_steps_per_gen must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")
        if self.dtype not in _TORCH_DTYPES:
            raise ConfigError(f"dtype must be one of {sorted(_TORCH_DTYPES)}")


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Constant at lr_initial, then linear to lr_final at the last epoch."""
    if not 0 <= epoch < config.epochs:
        raise ParameterError(f"epoch {epoch} outside [0, {config.epochs})")
    if epoch < config.decay_start_epoch:
        return config.lr_initial
    last = config.epochs - 1
    if last == config.decay_start_epoch:
        return config.lr_final
    t = (epoch - config.decay_start_epoch) / (last - config.decay_start_epoch)
    # Convex combination rather than initial + delta*t: exact at both ends.
    return config.lr_initial * (1.0 - t) + config.lr_final * t


def _resize_up(pixels: np.ndarray, target_min_side: int) -> np.ndarray:
    h, w = pixels.shape[:2]
    scale = target_min_side / min(h, w)
    new_h = max(target_min_side, int(np.ceil(h * scale)))
    new_w = max(target_min_side, int(np.ceil(w * scale)))
    x = torch.from_numpy(np.transpose(pixels, (2, 0, 1))[None]).to(torch.float64)
    y = F.interpolate(x, size=(new_h, new_w), mode="bicubic", align_corners=False)
    return np.clip(np.transpose(y[0].numpy(), (1, 2, 0)), 0.0, 1.0)


def sample_training_pair(
    pair: tuple[np.ndarray, np.ndarray],
    config: TrainConfig,
    rng: np.random.Generator,
    scale: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Crop and flip a (blurred, sharp) pair with identical geometry.

    Draw order is fixed (scale, y, x, hflip, vflip) to keep trajectories
    reproducible. Images smaller than the smallest scale are bicubically
    resized up first, with a warning.
    """
    blurred, sharp = pair
    if blurred.shape != sharp.shape:
        raise ShapeError(
            f"pair shapes differ: {blurred.shape} vs {sharp.shape}"
        )
    smallest = min(config.crop_scales)
    if min(blurred.shape[:2]) < smallest:
        log.warning(
            "image %sx%s below smallest crop scale %s; resizing up",
            blurred.shape[0], blurred.shape[1], smallest,
        )
        blurred = _resize_up(blurred, smallest)
        sharp = _resize_up(sharp, smallest)
    h, w = blurred.shape[:2]
    if scale is None:
        choices = [s for s in config.crop_scales if s <= min(h, w)]
        scale = int(choices[rng.integers(0, len(choices))])
    y = int(rng.integers(0, h - scale + 1))
    x = int(rng.integers(0, w - scale + 1))
    b = blurred[y : y + scale, x : x + scale]
    s = sharp[y : y + scale, x : x + scale]
    if rng.random() < 0.5:
        b, s = b[:, ::-1], s[:, ::-1]
    if rng.random() < 0.5:
        b, s = b[::-1, :], s[::-1, :]
    return np.ascontiguousarray(b), np.ascontiguousarray(s)


@dataclass
class TrainState:
    """Everything a resumed run needs to continue bit-exactly."""

    config: TrainConfig
    generator: Generator
    critic: Critic
    extractor: FeatureExtractor
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: np.random.Generator
    epoch: int = 0
    step: int = 0
    best_val_psnr: float | None = None


def init_train_state(config: TrainConfig) -> TrainState:
    # Component seeds are derived from the run seed so that one integer
    # pins the whole trajectory.
    gen_seed, critic_seed, sample_seed = [
        int(s) for s in np.random.SeedSequence(config.seed).generate_state(3)
    ]
    gen_store = init_generator(config.generator, gen_seed, config.dtype)
    critic_store = init_discriminator(config.critic, critic_seed, config.dtype)
    generator = build_generator(gen_store)
    critic = build_discriminator(critic_store)
    extractor = make_feature_extractor(config.extractor, config.dtype)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr_initial)
    opt_d = torch.optim.Adam(critic.parameters(), lr=config.lr_initial)
    rng = np.random.default_rng(sample_seed)
    return TrainState(config, generator, critic, extractor, opt_g, opt_d, rng)


def _require_finite(name: str, value: torch.Tensor, step: int) -> None:
    if not torch.isfinite(value).all():
        raise NumericalError(f"{name} is non-finite at step {step}")


def _batch_to_tensors(
    pairs: list[tuple[np.ndarray, np.ndarray]], dtype: str
) -> tuple[torch.Tensor, torch.Tensor]:
    blurred = np.stack([np.transpose(unit_to_signed(b), (2, 0, 1)) for b, _ in pairs])
    sharp = np.stack([np.transpose(unit_to_signed(s), (2, 0, 1)) for _, s in pairs])
    td = _TORCH_DTYPES[dtype]
    return torch.from_numpy(blurred).to(td), torch.from_numpy(sharp).to(td)


def critic_phase(state: TrainState, batch: tuple[torch.Tensor, torch.Tensor]) -> tuple[float, float]:
    """Run the configured number of critic updates on a frozen generator.

    Returns the (wasserstein term, penalty) of the last update.
    """
    cfg = state.config
    blurred, sharp = batch
    with torch.no_grad():
        fake = state.generator(blurred, clamp=False)
    adv_d_val = gp_val = 0.0
    for _ in range(cfg.critic_steps_per_gen):
        loss_d, adv_d, gp = critic_loss_parts(
            state.critic, sharp, fake, cfg.loss_weights.lambda_gp, state.rng
        )
        _require_finite("critic loss", loss_d, state.step)
        state.opt_d.zero_grad()
        loss_d.backward()
        state.opt_d.step()
        adv_d_val, gp_val = float(adv_d.detach()), float(gp.detach())
    return adv_d_val, gp_val


def generator_phase(state: TrainState, batch: tuple[torch.Tensor, torch.Tensor]) -> tuple[float, float, float, float]:
    """One generator update; returns (adv_g, feature, l2, total_g)."""
    weights = state.config.loss_weights
    blurred, sharp = batch
    restored = state.generator(blurred, clamp=False)
    adv_g = generator_adv_loss(state.critic(restored))
    feat = feature_loss(state.extractor, restored, sharp, weights.layer_weights)
    l2 = l2_loss(restored, sharp)
    total = total_generator_loss(adv_g, feat, l2, weights)
    for name, value in (("adv_g", adv_g), ("feature", feat), ("l2", l2), ("total_g", total)):
        _require_finite(name, value, state.step)
    state.opt_g.zero_grad()
    # Clear critic grads produced through the adversarial term so the next
    # critic phase starts clean.
    state.opt_d.zero_grad()
    total.backward()
    state.opt_g.step()
    return (
        float(adv_g.detach()),
        float(feat.detach()),
        float(l2.detach()),
        float(total.detach()),
    )


def train_step(state: TrainState, batch: tuple[torch.Tensor, torch.Tensor]) -> LossBundle:
    """critic_steps_per_gen critic updates, then one generator update.

    Mutates the state in place (parameters, optimizer slots, rng, step
    counter) and returns the step's loss record.
    """
    adv_d_val, gp_val = critic_phase(state, batch)
    adv_g, feat, l2, total = generator_phase(state, batch)
    state.step += 1
    return LossBundle(
        adv_g=adv_g, adv_d=adv_d_val, gp=gp_val, feature=feat, l2=l2, total_g=total
    )


def _chunks(seq, size):
    for i in range(0, len(seq), size):
        yield seq[i : i + size]


def _optimizer_tensors(opt: torch.optim.Adam, named: list[str], prefix: str) -> dict:
    tensors = {}
    sd = opt.state_dict()
    for idx, name in enumerate(named):
        st = sd["state"].get(idx)
        if st is None:
            continue
        tensors[f"{prefix}/{name}/step"] = st["step"].detach().cpu().numpy().copy()
        tensors[f"{prefix}/{name}/exp_avg"] = st["exp_avg"].detach().cpu().numpy().copy()
        tensors[f"{prefix}/{name}/exp_avg_sq"] = st["exp_avg_sq"].detach().cpu().numpy().copy()
    return tensors


def _load_optimizer(opt: torch.optim.Adam, named: list[str], prefix: str, store: ParamStore, dtype: str) -> None:
    td = _TORCH_DTYPES[dtype]
    state = {}
    for idx, name in enumerate(named):
        key = f"{prefix}/{name}/step"
        if key not in store.tensors:
            continue
        state[idx] = {
            "step": torch.from_numpy(store.tensors[key].copy()),
            "exp_avg": torch.from_numpy(store.tensors[f"{prefix}/{name}/exp_avg"].copy()).to(td),
            "exp_avg_sq": torch.from_numpy(
                store.tensors[f"{prefix}/{name}/exp_avg_sq"].copy()
            ).to(td),
        }
    sd = opt.state_dict()
    sd["state"] = state
    opt.load_state_dict(sd)


def train_state_to_store(state: TrainState) -> ParamStore:
    cfg = state.config
    tensors: dict[str, np.ndarray] = {}
    gen_names = [n for n, _ in state.generator.named_parameters()]
    critic_names = [n for n, _ in state.critic.named_parameters()]
    for name, p in state.generator.named_parameters():
        tensors[f"generator/{name}"] = p.detach().cpu().numpy().copy()
    for name, p in state.critic.named_parameters():
        tensors[f"critic/{name}"] = p.detach().cpu().numpy().copy()
    tensors.update(_optimizer_tensors(state.opt_g, gen_names, "opt_g"))
    tensors.update(_optimizer_tensors(state.opt_d, critic_names, "opt_d"))
    gen_cfg = asdict(cfg.generator)
    metadata = {
        "kind": "train_state",
        "dtype": cfg.dtype,
        "epoch": state.epoch,
        "step": state.step,
        "best_val_psnr": state.best_val_psnr,
        "rng_state": state.rng.bit_generator.state,
        "train_config": resolved_config_dict(cfg),
        "generator_config": gen_cfg,
        "generator_config_hash": config_hash(gen_cfg),
        "critic_config": asdict(cfg.critic),
    }
    return ParamStore(
        tensors=tensors,
        config_hash=config_hash(gen_cfg),
        creation_seed=cfg.seed,
        metadata=metadata,
    )


def generator_store_from_state(state: TrainState) -> ParamStore:
    cfg = asdict(state.config.generator)
    store = _store_from_module(
        state.generator, "generator", cfg, state.config.seed, state.config.dtype
    )
    store.metadata["epoch"] = state.epoch
    store.metadata["step"] = state.step
    return store


def load_train_state(path: str | Path, config: TrainConfig) -> TrainState:
    store = ParamStore.load(path)
    if store.metadata.get("kind") != "train_state":
        raise ConfigError(f"{path} is not a training checkpoint")
    # Hash comparison: JSON round-trips turn tuples into lists, so compare
    # canonical encodings rather than raw dicts.
    if config_hash(store.metadata["generator_config"]) != config_hash(asdict(config.generator)):
        raise ConfigError("checkpoint generator config does not match the run config")
    if config_hash(store.metadata["critic_config"]) != config_hash(asdict(config.critic)):
        raise ConfigError("checkpoint critic config does not match the run config")
    dtype = store.metadata["dtype"]
    generator = Generator(config.generator).to(_TORCH_DTYPES[dtype])
    critic = Critic(config.critic).to(_TORCH_DTYPES[dtype])
    with torch.no_grad():
        for name, p in generator.named_parameters():
            p.copy_(torch.from_numpy(store.tensors[f"generator/{name}"].copy()))
        for name, p in critic.named_parameters():
            p.copy_(torch.from_numpy(store.tensors[f"critic/{name}"].copy()))
    extractor = make_feature_extractor(config.extractor, dtype)
    opt_g = torch.optim.Adam(generator.parameters(), lr=config.lr_initial)
    opt_d = torch.optim.Adam(critic.parameters(), lr=config.lr_initial)
    gen_names = [n for n, _ in generator.named_parameters()]
    critic_names = [n for n, _ in critic.named_parameters()]
    _load_optimizer(opt_g, gen_names, "opt_g", store, dtype)
    _load_optimizer(opt_d, critic_names, "opt_d", store, dtype)
    rng = np.random.default_rng()
    rng.bit_generator.state = store.metadata["rng_state"]
    return TrainState(
        config=config,
        generator=generator,
        critic=critic,
        extractor=extractor,
        opt_g=opt_g,
        opt_d=opt_d,
        rng=rng,
        epoch=int(store.metadata["epoch"]),
        step=int(store.metadata["step"]),
        best_val_psnr=store.metadata.get("best_val_psnr"),
    )


def _load_pair(entry) -> tuple[np.ndarray, np.ndarray]:
    return load_image(entry.blurred_path), load_image(entry.sharp_path)


def _validation_psnr(state: TrainState, val_manifest: PairManifest) -> float:
    from .metrics import psnr, restore_image

    scores = []
    for entry in val_manifest.entries:
        blurred = load_image(entry.blurred_path)
        sharp = load_image(entry.sharp_path)
        restored, _ = restore_image(state.generator, blurred)
        scores.append(psnr(restored, sharp))
    return float(np.mean(scores))


def train(
    config: TrainConfig,
    manifest: PairManifest,
    out_dir: str | Path,
    resume: str | Path | None = None,
    val_manifest: PairManifest | None = None,
) -> Path:
    """Run the protocol over the manifest; returns the final checkpoint path.

    Writes per-epoch training checkpoints, a standalone generator
    checkpoint at the end, and an append-only loss log with one record per
    generator step. With a validation split, each checkpointed epoch also
    scores mean validation PSNR and keeps the best generator at
    ``best_generator.ntck``.
    """
    if not manifest.entries:
        raise ParameterError("training manifest is empty")
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)

    state = load_train_state(resume, config) if resume else init_train_state(config)
    log_path = out_dir / LOSS_LOG_FILENAME
    best_psnr = float(state.best_val_psnr) if state.best_val_psnr is not None else None

    for epoch in range(state.epoch, config.epochs):
        lr = lr_schedule(epoch, config)
        for group in state.opt_g.param_groups:
            group["lr"] = lr
        for group in state.opt_d.param_groups:
            group["lr"] = lr
        for chunk in _chunks(manifest.entries, config.batch_size):
            raw_pairs = [_load_pair(e) for e in chunk]
            # One scale per batch so crops stack; each pair gets its own
            # crop window and flips.
            smallest = min(config.crop_scales)
            min_side = min(min(p[0].shape[:2]) for p in raw_pairs)
            usable = [s for s in config.crop_scales if s <= max(min_side, smallest)]
            scale = int(usable[state.rng.integers(0, len(usable))])
            pairs = [
                sample_training_pair(p, config, state.rng, scale=scale)
                for p in raw_pairs
            ]
            batch = _batch_to_tensors(pairs, config.dtype)
            bundle = train_step(state, batch)
            record = {"step": state.step, "epoch": epoch, "lr": lr, **asdict(bundle)}
            with log_path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
        state.epoch = epoch + 1
        if (epoch + 1) % config.checkpoint_every == 0 or epoch + 1 == config.epochs:
            if val_manifest is not None and val_manifest.entries:
                score = _validation_psnr(state, val_manifest)
                with (out_dir / "val_log.jsonl").open("a") as fh:
                    fh.write(json.dumps({"epoch": epoch + 1, "val_psnr_db": score}) + "\n")
                if best_psnr is None or score > best_psnr:
                    best_psnr = score
                    state.best_val_psnr = best_psnr
                    generator_store_from_state(state).save(out_dir / "best_generator.ntck")
            state.best_val_psnr = best_psnr
            train_state_to_store(state).save(ckpt_dir / f"epoch_{epoch + 1:05d}.ntck")

    final_path = out_dir / "generator_final.ntck"
    generator_store_from_state(state).save(final_path)
    return final_path


# --- flat key=value config files -------------------------------------------

_LIST_KEYS = {"crop_scales", "layer_weights", "disc_channel_plan", "extractor_taps", "gen_dilation_rates"}

_CONFIG_KEYS = {
    "epochs": int,
    "lr_initial": float,
    "lr_final": float,
    "decay_start_epoch": int,
    "batch_size": int,
    "crop_scales": int,
    "critic_steps_per_gen": int,
    "seed": int,
    "checkpoint_every": int,
    "dtype": str,
    "lambda_gp": float,
    "lambda_x": float,
    "lambda_2": float,
    "layer_weights": float,
    "gen_base_channels": int,
    "gen_n_rfbs": int,
    "gen_rfb_channels": int,
    "gen_downsample_steps": int,
    "gen_dilation_rates": int,
    "disc_channel_plan": int,
    "extractor_taps": str,
    "extractor_weights": str,
    "extractor_base_width": int,
}


def parse_config_text(text: str, overrides: list[str] | None = None) -> TrainConfig:
    """Parse ``key = value`` lines (# comments) into a TrainConfig.

    Unknown keys are a hard error. ``overrides`` are additional
    ``key=value`` strings applied on top, same key set.
    """
    raw: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        raw[key] = value
    for ov in overrides or []:
        if "=" not in ov:
            raise ConfigError(f"override must be key=value, got {ov!r}")
        key, value = (part.strip() for part in ov.split("=", 1))
        raw[key] = value

    unknown = set(raw) - set(_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    parsed: dict[str, object] = {}
    for key, value in raw.items():
        caster = _CONFIG_KEYS[key]
        try:
            if key in _LIST_KEYS:
                parsed[key] = tuple(caster(v.strip()) for v in value.split(",") if v.strip())
            else:
                parsed[key] = caster(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {value!r} ({exc})") from exc

    weights_kwargs = {
        k: parsed.pop(k) for k in ("lambda_gp", "lambda_x", "lambda_2", "layer_weights") if k in parsed
    }
    gen_kwargs = {
        dst: parsed.pop(src)
        for src, dst in (
            ("gen_base_channels", "base_channels"),
            ("gen_n_rfbs", "n_rfbs"),
            ("gen_rfb_channels", "rfb_channels"),
            ("gen_downsample_steps", "downsample_steps"),
            ("gen_dilation_rates", "dilation_rates"),
        )
        if src in parsed
    }
    disc_kwargs = {}
    if "disc_channel_plan" in parsed:
        disc_kwargs["channel_plan"] = parsed.pop("disc_channel_plan")
    ext_kwargs = {}
    if "extractor_taps" in parsed:
        ext_kwargs["layer_taps"] = parsed.pop("extractor_taps")
    if "extractor_weights" in parsed:
        ext_kwargs["weights_source"] = parsed.pop("extractor_weights")
    if "extractor_base_width" in parsed:
        ext_kwargs["base_width"] = parsed.pop("extractor_base_width")

    return TrainConfig(
        loss_weights=LossWeights(**weights_kwargs),
        generator=GeneratorConfig(**gen_kwargs),
        critic=DiscriminatorConfig(**disc_kwargs),
        extractor=FeatureExtractorConfig(**ext_kwargs),
        **parsed,
    )


def parse_config_file(path: str | Path | None, overrides: list[str] | None = None) -> TrainConfig:
    text = Path(path).read_text() if path else ""
    return parse_config_text(text, overrides)


def resolved_config_dict(config: TrainConfig) -> dict:
    """Flat snapshot of every config/loss-weight field, for reproducibility."""
    lw = config.loss_weights
    return {
        "epochs": config.epochs,
        "lr_initial": config.lr_initial,
        "lr_final": config.lr_final,
        "decay_start_epoch": config.decay_start_epoch,
        "batch_size": config.batch_size,
        "crop_scales": list(config.crop_scales),
        "critic_steps_per_gen": config.critic_steps_per_gen,
        "seed": config.seed,
        "checkpoint_every": config.checkpoint_every,
        "dtype": config.dtype,
        "lambda_gp": lw.lambda_gp,
        "lambda_x": lw.lambda_x,
        "lambda_2": lw.lambda_2,
        "layer_weights": list(lw.layer_weights),
        "gen_base_channels": config.generator.base_channels,
        "gen_n_rfbs": config.generator.n_rfbs,
        "gen_rfb_channels": config.generator.rfb_channels,
        "gen_downsample_steps": config.generator.downsample_steps,
        "gen_dilation_rates": list(config.generator.dilation_rates),
        "disc_channel_plan": list(config.critic.channel_plan),
        "extractor_taps": list(config.extractor.layer_taps),
        "extractor_weights": config.extractor.weights_source,
        "extractor_base_width": config.extractor.base_width,
    }

"""Motion-deblurring laboratory.

Synthetic linear-motion blur, an adversarially trained residual
restoration network with multi-branch dilated blocks, a patch critic,
perceptual/pixel losses, PSNR/SSIM evaluation, and a CLI tying it all
together.
"""

from .blur import (
    BlurKernel,
    BlurParams,
    PairEntry,
    PairManifest,
    apply_blur,
    make_motion_kernel,
    synthesize_pairs,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DeblurLabError,
    NumericalError,
    ParameterError,
    ShapeError,
)
from .features import FeatureExtractorConfig, extract_features, make_feature_extractor
from .losses import (
    LossBundle,
    LossWeights,
    critic_loss,
    feature_loss,
    generator_adv_loss,
    gradient_penalty,
    l2_loss,
    total_generator_loss,
)
from .metrics import EvalReport, EvalRow, evaluate, psnr, ssim
from .networks import (
    Critic,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    RFBSBlock,
    RFBSConfig,
    build_discriminator,
    build_generator,
    discriminator_forward,
    generator_forward,
    init_discriminator,
    init_generator,
    init_rfb_s,
    rfb_s_forward,
)
from .params import ParamStore, config_hash
from .training import (
    TrainConfig,
    TrainState,
    init_train_state,
    lr_schedule,
    sample_training_pair,
    train,
    train_step,
)

__version__ = "0.1.0"

#!/usr/bin/env python3
"""Export torchvision's pretrained VGG19 conv weights to the extractor format.

Produces a named-tensor checkpoint usable as ``extractor_weights`` /
``FeatureExtractorConfig.weights_source``. Requires torchvision and the
pretrained weight file (downloaded or cached); the rest of the package and
its test suite never need either.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from deblurlab.features import FeatureExtractor, FeatureExtractorConfig, extractor_store

# torchvision vgg19.features indices of each conv layer
_TV_CONV_INDICES = {
    "conv1_1": 0, "conv1_2": 2,
    "conv2_1": 5, "conv2_2": 7,
    "conv3_1": 10, "conv3_2": 12, "conv3_3": 14, "conv3_4": 16,
    "conv4_1": 19, "conv4_2": 21, "conv4_3": 23, "conv4_4": 25,
    "conv5_1": 28, "conv5_2": 30, "conv5_3": 32, "conv5_4": 34,
}


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="vgg19_features.ntck")
    args = parser.parse_args()

    try:
        from torchvision.models import VGG19_Weights, vgg19
    except ImportError:
        sys.exit("torchvision is required for this export")

    source = vgg19(weights=VGG19_Weights.IMAGENET1K_V1).features
    module = FeatureExtractor(FeatureExtractorConfig())
    import torch

    with torch.no_grad():
        for name, conv in module.convs.items():
            src = source[_TV_CONV_INDICES[name]]
            conv.weight.copy_(src.weight)
            conv.bias.copy_(src.bias)
    extractor_store(module).save(args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()

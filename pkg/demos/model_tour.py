"""Walk through the transformer classifier: patch extraction, the named
architecture presets and their parameter counts, a forward pass, the residual
identity of a silenced encoder block, and checkpoint round-tripping."""

import tempfile

import numpy as np

from vitbench import (Tensor, VisionTransformer, ViTConfig, cnn_baseline,
                      load_checkpoint, param_count, preset, save_checkpoint)
from vitbench.models import patchify


def main():
    rng = np.random.default_rng(0)

    # patchify: (H, W, C) -> (num_patches, P*P*C), row-major patch order
    image = rng.random((32, 32, 3))
    patches = patchify(image, 8)
    print(f"32x32x3 image -> {patches.shape[0]} patches of {patches.shape[1]} values")

    # the named presets and their sizes at standard resolution
    for name in ("ViT-B/16", "ViT-L/16", "ViT-L/32"):
        n = param_count(preset(name, 224, 1000))
        print(f"{name}: {n:,} parameters")

    # a small model we can actually run on a laptop core
    config = ViTConfig(image_size=(32, 32), patch_size=8, hidden_dim=64,
                       depth=4, heads=4, mlp_dim=128, num_classes=5,
                       dropout=0.0)
    model = VisionTransformer(config, seed=0)
    print(f"small model: {param_count(config):,} parameters, "
          f"{config.num_tokens} tokens per image")

    images = Tensor(rng.random((2, 32, 32, 3)))
    logits = model.forward(images)
    print(f"forward: {tuple(images.shape)} -> logits {tuple(logits.shape)}")

    # zero the output projections of block 0: residual makes it an identity
    for key in ("attn_wo", "attn_bo", "mlp_w2", "mlp_b2"):
        model.params[f"block0_{key}"].data[...] = 0.0
    tokens = Tensor(rng.standard_normal((2, config.num_tokens, 64)))
    out = model.encoder_block(tokens, 0)
    print(f"silenced block is bit-exact identity: "
          f"{np.array_equal(out.data, tokens.data)}")

    # the CNN baseline exposes the same forward contract
    baseline = cnn_baseline((32, 32), num_classes=5, seed=0)
    print(f"cnn baseline logits: {tuple(baseline.forward(images).shape)}")

    # checkpoints: config sidecar + one flat parameter binary
    with tempfile.TemporaryDirectory() as tmp:
        save_checkpoint(tmp, model, classes=["a", "b", "c", "d", "e"])
        again, classes = load_checkpoint(tmp)
    same = all(np.array_equal(model.params[k].data, again.params[k].data)
               for k in model.params)
    print(f"checkpoint round trip exact: {same}, classes: {classes}")


if __name__ == "__main__":
    main()

"""Image classifiers built on the tensor core.

``VisionTransformer`` follows the patch-token recipe: non-overlapping
patches are flattened, linearly projected to the model width, combined
with a learnable positional embedding (and optionally a class token),
and pushed through a stack of pre-norm encoder blocks, each a multi-head
self-attention sub-layer and an MLP sub-layer with residual connections.
``ConvBaseline`` is a deliberately small convolutional classifier that
exposes the same ``forward(images) -> logits`` contract so the harness
can compare the two families end to end.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, ContractError
from .tensor import Tensor, concat, dropout, gelu, layer_norm, matmul, softmax

INIT_STD = 0.02

PRESETS = {
    "ViT-B/16": dict(patch_size=16, hidden_dim=768, depth=12, heads=12, mlp_dim=3072),
    "ViT-L/16": dict(patch_size=16, hidden_dim=1024, depth=24, heads=16, mlp_dim=4096),
    "ViT-L/32": dict(patch_size=32, hidden_dim=1024, depth=24, heads=16, mlp_dim=4096),
}


@dataclass
class ViTConfig:
    image_size: tuple[int, int]
    patch_size: int
    hidden_dim: int
    depth: int
    heads: int
    mlp_dim: int
    num_classes: int
    channels: int = 3
    dropout: float = 0.1
    use_class_token: bool = True

    def __post_init__(self):
        h, w = self.image_size
        if h % self.patch_size or w % self.patch_size:
            raise ConfigError(
                f"image size {h}x{w} not divisible by patch size {self.patch_size}"
            )
        if self.hidden_dim % self.heads:
            raise ConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by {self.heads} heads"
            )
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    @property
    def num_patches(self) -> int:
        h, w = self.image_size
        return (h * w) // (self.patch_size**2)

    @property
    def num_tokens(self) -> int:
        return self.num_patches + (1 if self.use_class_token else 0)

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * self.channels


def preset(name: str, image_size, num_classes: int, channels: int = 3,
           dropout: float = 0.1) -> ViTConfig:
    """Named architecture presets. Sizes follow the base/large transformer
    recipe (blocks, heads, widths) the presets are named after."""
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose one of {sorted(PRESETS)}")
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    return ViTConfig(
        image_size=tuple(image_size),
        num_classes=num_classes,
        channels=channels,
        dropout=dropout,
        **PRESETS[name],
    )


def vit_param_shapes(config: ViTConfig) -> dict[str, tuple[int, ...]]:
    """Canonical parameter layout; the checkpoint format flattens in this order."""
    d, k = config.hidden_dim, config.num_classes
    shapes: dict[str, tuple[int, ...]] = {
        "patch_proj_w": (config.patch_dim, d),
        "patch_proj_b": (d,),
    }
    if config.use_class_token:
        shapes["cls_token"] = (d,)
    shapes["pos_embed"] = (config.num_tokens, d)
    for i in range(config.depth):
        p = f"block{i}_"
        shapes[p + "ln1_gamma"] = (d,)
        shapes[p + "ln1_beta"] = (d,)
        for proj in ("q", "k", "v", "o"):
            shapes[p + f"attn_w{proj}"] = (d, d)
            shapes[p + f"attn_b{proj}"] = (d,)
        shapes[p + "ln2_gamma"] = (d,)
        shapes[p + "ln2_beta"] = (d,)
        shapes[p + "mlp_w1"] = (d, config.mlp_dim)
        shapes[p + "mlp_b1"] = (config.mlp_dim,)
        shapes[p + "mlp_w2"] = (config.mlp_dim, d)
        shapes[p + "mlp_b2"] = (d,)
    shapes["final_ln_gamma"] = (d,)
    shapes["final_ln_beta"] = (d,)
    shapes["head_w"] = (d, k)
    shapes["head_b"] = (k,)
    return shapes


def param_count(config: ViTConfig) -> int:
    """Closed-form count of trainable scalars for a config."""
    d, k, m = config.hidden_dim, config.num_classes, config.mlp_dim
    per_block = 2 * d + 4 * (d * d + d) + 2 * d + (d * m + m) + (m * d + d)
    total = (config.patch_dim * d + d) + config.num_tokens * d
    if config.use_class_token:
        total += d
    total += config.depth * per_block
    total += 2 * d + (d * k + k)
    return total


def truncated_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal samples with |z| > 2 redrawn, then scaled by std."""
    out = rng.standard_normal(shape)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return out * std


def _init_params(shapes: dict[str, tuple[int, ...]], rng: np.random.Generator,
                 dtype) -> dict[str, Tensor]:
    params = {}
    for name, shape in shapes.items():
        if name.endswith(("_gamma",)):
            data = np.ones(shape)
        elif name.endswith(("_b", "_beta", "_b1", "_b2")) or name == "cls_token" \
                or name.endswith(("_bq", "_bk", "_bv", "_bo")):
            data = np.zeros(shape)
        else:
            data = truncated_normal(rng, shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True)
    return params


def patchify(image: Tensor, patch_size: int) -> Tensor:
    """Split an H*W*C image (or a B*H*W*C batch) into flattened non-overlapping
    patches, ordered row-major over the patch grid."""
    image = Tensor._coerce(image)
    p = patch_size
    if image.ndim == 3:
        h, w, c = image.shape
        if h % p or w % p:
            raise ConfigError(f"image {h}x{w} not divisible by patch size {p}")
        grid_h, grid_w = h // p, w // p
        out = image.reshape(grid_h, p, grid_w, p, c)
        out = out.transpose((0, 2, 1, 3, 4))
        return out.reshape(grid_h * grid_w, p * p * c)
    if image.ndim == 4:
        b, h, w, c = image.shape
        if h % p or w % p:
            raise ConfigError(f"image {h}x{w} not divisible by patch size {p}")
        grid_h, grid_w = h // p, w // p
        out = image.reshape(b, grid_h, p, grid_w, p, c)
        out = out.transpose((0, 1, 3, 2, 4, 5))
        return out.reshape(b, grid_h * grid_w, p * p * c)
    raise ConfigError(f"patchify expects 3-D or 4-D input, got shape {image.shape}")


def unpatchify(patches: Tensor, image_size, channels: int, patch_size: int) -> Tensor:
    """Inverse of patchify; pixel-exact."""
    patches = Tensor._coerce(patches)
    h, w = image_size
    p = patch_size
    grid_h, grid_w = h // p, w // p
    if patches.ndim == 2:
        out = patches.reshape(grid_h, grid_w, p, p, channels)
        out = out.transpose((0, 2, 1, 3, 4))
        return out.reshape(h, w, channels)
    b = patches.shape[0]
    out = patches.reshape(b, grid_h, grid_w, p, p, channels)
    out = out.transpose((0, 1, 3, 2, 4, 5))
    return out.reshape(b, h, w, channels)


class VisionTransformer:
    """Patch-token transformer classifier."""

    kind = "vit"

    def __init__(self, config: ViTConfig, seed: int = 0,
                 params: dict[str, Tensor] | None = None, name: str | None = None):
        self.config = config
        self.name = name or "vit"
        shapes = vit_param_shapes(config)
        if params is None:
            rng = np.random.default_rng(seed)
            params = _init_params(shapes, rng, T.default_dtype())
        else:
            for pname, shape in shapes.items():
                if params[pname].shape != shape:
                    raise ConfigError(
                        f"parameter {pname} has shape {params[pname].shape}, expected {shape}"
                    )
        self.params = params

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def embed(self, patches: Tensor) -> Tensor:
        """Project patches to the model width, prepend the class token when
        enabled, and add the positional embedding."""
        p = self.params
        x = matmul(patches, p["patch_proj_w"]) + p["patch_proj_b"]
        if self.config.use_class_token:
            d = self.config.hidden_dim
            if x.ndim == 2:
                cls = p["cls_token"].reshape(1, d)
                x = concat([cls, x], axis=0)
            else:
                cls = p["cls_token"].reshape(1, 1, d).broadcast_to((x.shape[0], 1, d))
                x = concat([cls, x], axis=1)
        return x + p["pos_embed"]

    def _attention(self, x: Tensor, i: int) -> Tensor:
        cfg = self.config
        p = self.params
        b, t, d = x.shape
        heads, dh = cfg.heads, cfg.hidden_dim // cfg.heads
        q = matmul(x, p[f"block{i}_attn_wq"]) + p[f"block{i}_attn_bq"]
        k = matmul(x, p[f"block{i}_attn_wk"]) + p[f"block{i}_attn_bk"]
        v = matmul(x, p[f"block{i}_attn_wv"]) + p[f"block{i}_attn_bv"]
        q = q.reshape(b, t, heads, dh).transpose((0, 2, 1, 3))
        k = k.reshape(b, t, heads, dh).transpose((0, 2, 1, 3))
        v = v.reshape(b, t, heads, dh).transpose((0, 2, 1, 3))
        scores = matmul(q, k.transpose((0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
        attn = softmax(scores, axis=-1)
        ctx = matmul(attn, v).transpose((0, 2, 1, 3)).reshape(b, t, d)
        return matmul(ctx, p[f"block{i}_attn_wo"]) + p[f"block{i}_attn_bo"]

    def encoder_block(self, z: Tensor, i: int, train_mode: bool = False,
                      rng: np.random.Generator | None = None) -> Tensor:
        """One pre-norm block: attention and MLP sub-layers, each normalized
        inside a residual connection."""
        squeeze = z.ndim == 2
        if squeeze:
            z = z.reshape(1, *z.shape)
        p = self.params
        u = layer_norm(z, p[f"block{i}_ln1_gamma"], p[f"block{i}_ln1_beta"])
        z = self._attention(u, i) + z
        u = layer_norm(z, p[f"block{i}_ln2_gamma"], p[f"block{i}_ln2_beta"])
        h = gelu(matmul(u, p[f"block{i}_mlp_w1"]) + p[f"block{i}_mlp_b1"])
        if train_mode and self.config.dropout > 0.0:
            h = dropout(h, self.config.dropout, self._need_rng(rng))
        z = matmul(h, p[f"block{i}_mlp_w2"]) + p[f"block{i}_mlp_b2"] + z
        return z.reshape(*z.shape[1:]) if squeeze else z

    def forward_tokens(self, tokens: Tensor, train_mode: bool = False,
                       rng: np.random.Generator | None = None) -> Tensor:
        """Encoder stack, final layer norm, pooling, and the classifier head."""
        z = tokens
        for i in range(self.config.depth):
            z = self.encoder_block(z, i, train_mode, rng)
        z = layer_norm(z, self.params["final_ln_gamma"], self.params["final_ln_beta"])
        pooled = z[:, 0, :] if self.config.use_class_token else z.mean(axis=1)
        return matmul(pooled, self.params["head_w"]) + self.params["head_b"]

    def forward(self, images: Tensor, train_mode: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        images = Tensor._coerce(images)
        cfg = self.config
        expected = (*cfg.image_size, cfg.channels)
        if images.ndim != 4 or images.shape[1:] != expected:
            raise ConfigError(
                f"expected image batch of shape (B, {expected[0]}, {expected[1]}, "
                f"{expected[2]}), got {images.shape}"
            )
        tokens = self.embed(patchify(images, cfg.patch_size))
        if train_mode and cfg.dropout > 0.0:
            tokens = dropout(tokens, cfg.dropout, self._need_rng(rng))
        return self.forward_tokens(tokens, train_mode, rng)

    @staticmethod
    def _need_rng(rng):
        if rng is None:
            raise ContractError("train_mode forward with dropout needs an rng")
        return rng


@dataclass
class ConvConfig:
    image_size: tuple[int, int]
    num_classes: int
    channels: int = 3
    widths: tuple[int, int, int] = (16, 32, 64)

    def __post_init__(self):
        h, w = self.image_size
        if h % 8 or w % 8:
            raise ConfigError(
                f"baseline needs image dims divisible by 8 (three stride-2 stages), got {h}x{w}"
            )
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")


def conv_param_shapes(config: ConvConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    cin = config.channels
    for i, cout in enumerate(config.widths):
        shapes[f"conv{i}_w"] = (9 * cin, cout)
        shapes[f"conv{i}_b"] = (cout,)
        shapes[f"conv{i}_ln_gamma"] = (cout,)
        shapes[f"conv{i}_ln_beta"] = (cout,)
        cin = cout
    shapes["head_w"] = (config.widths[-1], config.num_classes)
    shapes["head_b"] = (config.num_classes,)
    return shapes


def _conv3x3_stride2(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """3x3 convolution, stride 2, zero padding 1, on channels-last input.
    Built from pad/slice/concat/matmul so gradients come from composition."""
    _, h, wid, _ = x.shape
    ho, wo = h // 2, wid // 2
    xp = x.pad([(0, 0), (1, 1), (1, 1), (0, 0)])
    taps = []
    for di in range(3):
        for dj in range(3):
            taps.append(xp[:, di : di + 2 * ho - 1 : 2, dj : dj + 2 * wo - 1 : 2, :])
    cols = concat(taps, axis=-1)
    return matmul(cols, w) + b


class ConvBaseline:
    """Three conv-norm-gelu stages with stride-2 downsampling, global average
    pooling, and a linear head. Same forward contract as the transformer."""

    kind = "cnn-baseline"

    def __init__(self, config: ConvConfig, seed: int = 0,
                 params: dict[str, Tensor] | None = None, name: str | None = None):
        self.config = config
        self.name = name or "cnn-baseline"
        shapes = conv_param_shapes(config)
        if params is None:
            rng = np.random.default_rng(seed)
            params = _init_params(shapes, rng, T.default_dtype())
        self.params = params

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, images: Tensor, train_mode: bool = False,
                rng: np.random.Generator | None = None) -> Tensor:
        images = Tensor._coerce(images)
        cfg = self.config
        expected = (*cfg.image_size, cfg.channels)
        if images.ndim != 4 or images.shape[1:] != expected:
            raise ConfigError(
                f"expected image batch of shape (B, {expected[0]}, {expected[1]}, "
                f"{expected[2]}), got {images.shape}"
            )
        x = images
        for i in range(len(cfg.widths)):
            x = _conv3x3_stride2(x, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"])
            x = layer_norm(x, self.params[f"conv{i}_ln_gamma"], self.params[f"conv{i}_ln_beta"])
            x = gelu(x)
        pooled = x.mean(axis=(1, 2))
        return matmul(pooled, self.params["head_w"]) + self.params["head_b"]


def cnn_baseline(image_size, num_classes: int, channels: int = 3, seed: int = 0) -> ConvBaseline:
    if isinstance(image_size, int):
        image_size = (image_size, image_size)
    return ConvBaseline(ConvConfig(tuple(image_size), num_classes, channels), seed=seed)


# -- checkpoints ----------------------------------------------------------------

_CKPT_CONFIG = "model.cfg"
_CKPT_PARAMS = "params.tnsr"


def save_checkpoint(directory, model, classes: list[str] | None = None) -> None:
    """Write a checkpoint directory: a structured-text config sidecar and the
    parameters flattened into one tensor binary (canonical layout order)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = configparser.ConfigParser()
    cfg["model"] = {}
    sect = cfg["model"]
    sect["kind"] = model.kind
    sect["name"] = model.name
    c = model.config
    sect["image_size"] = f"{c.image_size[0]}x{c.image_size[1]}"
    sect["channels"] = str(c.channels)
    sect["num_classes"] = str(c.num_classes)
    if model.kind == "vit":
        sect["patch_size"] = str(c.patch_size)
        sect["hidden_dim"] = str(c.hidden_dim)
        sect["depth"] = str(c.depth)
        sect["heads"] = str(c.heads)
        sect["mlp_dim"] = str(c.mlp_dim)
        sect["dropout"] = repr(c.dropout)
        sect["use_class_token"] = "true" if c.use_class_token else "false"
    else:
        sect["widths"] = ",".join(str(w) for w in c.widths)
    if classes:
        sect["classes"] = ",".join(classes)
    with open(directory / _CKPT_CONFIG, "w") as fh:
        cfg.write(fh)
    flat = np.concatenate([p.data.reshape(-1) for p in model.params.values()])
    T.save_tensor(directory / _CKPT_PARAMS, Tensor(flat))


def load_checkpoint(directory):
    """Rebuild a model from a checkpoint directory. Returns (model, classes)."""
    directory = Path(directory)
    cfg_path = directory / _CKPT_CONFIG
    if not cfg_path.exists():
        raise ConfigError(f"{directory} is not a checkpoint (missing {_CKPT_CONFIG})")
    cfg = configparser.ConfigParser()
    cfg.read(cfg_path)
    sect = cfg["model"]
    kind = sect["kind"]
    h, w = (int(v) for v in sect["image_size"].split("x"))
    classes = sect["classes"].split(",") if "classes" in sect else None
    if kind == "vit":
        config = ViTConfig(
            image_size=(h, w),
            patch_size=sect.getint("patch_size"),
            hidden_dim=sect.getint("hidden_dim"),
            depth=sect.getint("depth"),
            heads=sect.getint("heads"),
            mlp_dim=sect.getint("mlp_dim"),
            num_classes=sect.getint("num_classes"),
            channels=sect.getint("channels"),
            dropout=sect.getfloat("dropout"),
            use_class_token=sect.getboolean("use_class_token"),
        )
        shapes = vit_param_shapes(config)
    elif kind == "cnn-baseline":
        config = ConvConfig(
            image_size=(h, w),
            num_classes=sect.getint("num_classes"),
            channels=sect.getint("channels"),
            widths=tuple(int(v) for v in sect["widths"].split(",")),
        )
        shapes = conv_param_shapes(config)
    else:
        raise ConfigError(f"unknown model kind {kind!r} in {cfg_path}")

    flat = T.load_tensor(directory / _CKPT_PARAMS).data
    expected = sum(int(np.prod(s)) for s in shapes.values())
    if flat.size != expected:
        raise ConfigError(
            f"{directory}: parameter file holds {flat.size} values, config implies {expected}"
        )
    params = {}
    offset = 0
    for pname, shape in shapes.items():
        n = int(np.prod(shape))
        params[pname] = Tensor(flat[offset : offset + n].reshape(shape), requires_grad=True)
        offset += n
    name = sect.get("name", kind)
    if kind == "vit":
        return VisionTransformer(config, params=params, name=name), classes
    return ConvBaseline(config, params=params, name=name), classes

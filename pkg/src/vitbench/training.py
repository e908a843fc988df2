"""Loss functions, the Adam optimizer with per-epoch decay, and the epoch loop.

Two losses are provided: categorical cross-entropy and focal loss. Focal
loss scales each sample's log-probability term by ``(1 - p)**gamma`` and a
per-class weight ``alpha``, so hard or rare examples contribute more. With
``gamma=0`` and uniform weights it reduces to cross-entropy exactly — the
scaling factors become literal 1.0 multiplies, which are bit-exact no-ops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DataError
from .tensor import Tensor, no_grad, softmax

LOSSES = ("cross_entropy", "focal")
EPS_LOG = 1e-12  # floor applied to probabilities inside logs


@dataclass
class TrainConfig:
    loss: str = "cross_entropy"
    focal_gamma: float = 2.0
    # None for uniform weights, a per-class sequence, or "inverse-frequency"
    focal_alpha: object = "inverse-frequency"
    learning_rate: float = 1e-4
    decay: float = 0.97
    batch_size: int = 32
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.focal_gamma < 0:
            raise ConfigError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError(f"decay must be in (0, 1], got {self.decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if isinstance(self.focal_alpha, str) and self.focal_alpha not in (
                "inverse-frequency", "none"):
            raise ConfigError(
                f"focal_alpha must be per-class weights, None, or 'inverse-frequency', "
                f"got {self.focal_alpha!r}")
        if not isinstance(self.focal_alpha, str) and self.focal_alpha is not None:
            w = np.asarray(self.focal_alpha, dtype=float)
            if (w < 0).any() or not (w > 0).any():
                raise ConfigError("focal_alpha weights must be non-negative, not all zero")


def _checked_labels(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ContractError(f"labels must be a 1-D index array, got shape {labels.shape}")
    bad = (labels < 0) | (labels >= num_classes)
    if bad.any():
        i = int(np.argmax(bad))
        raise DataError(
            f"label {int(labels[i])} at sample {i} is outside [0, {num_classes})")
    return labels.astype(np.intp)


def _picked_log_probs(logits: Tensor, labels) -> tuple[Tensor, Tensor, np.ndarray]:
    logits = Tensor._coerce(logits)
    if logits.ndim != 2:
        raise ContractError(f"logits must be (batch, classes), got shape {logits.shape}")
    labels = _checked_labels(labels, logits.shape[1])
    if len(labels) != logits.shape[0]:
        raise ContractError(
            f"{len(labels)} labels for a batch of {logits.shape[0]} logits")
    probs = softmax(logits, axis=-1)
    picked = probs[np.arange(len(labels)), labels]
    return picked, picked.clamp_min(EPS_LOG).log(), labels


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean over the batch of -log softmax(logits)[label]."""
    _, log_p, _ = _picked_log_probs(logits, labels)
    return -(log_p.mean())


def focal_loss(logits: Tensor, labels, gamma: float = 2.0,
               alpha: Sequence[float] | None = None) -> Tensor:
    """Mean over the batch of -alpha[label] * (1 - p_label)**gamma * log p_label."""
    if gamma < 0:
        raise ContractError(f"gamma must be >= 0, got {gamma}")
    picked, log_p, labels = _picked_log_probs(logits, labels)
    terms = ((1.0 - picked) ** float(gamma)) * log_p
    if alpha is not None:
        w = np.asarray(alpha, dtype=float).reshape(-1)
        num_classes = Tensor._coerce(logits).shape[-1]
        if len(w) != num_classes:
            raise ContractError(
                f"alpha has {len(w)} weights for {num_classes} classes")
        terms = terms * w[labels]
    return -(terms.mean())


def inverse_frequency_weights(labels, num_classes: int) -> np.ndarray:
    """Per-class weights proportional to 1/count, normalized to mean 1."""
    labels = _checked_labels(labels, num_classes)
    counts = np.bincount(labels, minlength=num_classes)
    if (counts == 0).any():
        missing = int(np.argmax(counts == 0))
        raise DataError(
            f"class {missing} has no training samples; inverse-frequency weights undefined")
    w = 1.0 / counts
    return w * (num_classes / w.sum())


def resolve_alpha(focal_alpha, train_labels, num_classes: int) -> np.ndarray | None:
    """Turn the config's focal_alpha field into a concrete weight vector."""
    if focal_alpha is None or focal_alpha == "none":
        return None
    if focal_alpha == "inverse-frequency":
        return inverse_frequency_weights(train_labels, num_classes)
    w = np.asarray(focal_alpha, dtype=float)
    if w.shape != (num_classes,):
        raise ConfigError(
            f"focal_alpha has {w.size} weights for {num_classes} classes")
    if (w < 0).any() or not (w > 0).any():
        raise ConfigError("focal_alpha weights must be non-negative, not all zero")
    return w


def make_loss_fn(config: TrainConfig, train_labels, num_classes: int) -> Callable:
    if config.loss == "cross_entropy":
        return cross_entropy
    alpha = resolve_alpha(config.focal_alpha, train_labels, num_classes)
    gamma = config.focal_gamma
    return lambda logits, labels: focal_loss(logits, labels, gamma, alpha)


# -- optimizer -----------------------------------------------------------------

BETA1, BETA2, ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_init(params: dict[str, Tensor]) -> AdamState:
    return AdamState(
        step=0,
        m={k: np.zeros_like(p.data) for k, p in params.items()},
        v={k: np.zeros_like(p.data) for k, p in params.items()},
    )


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> AdamState:
    """One Adam update (beta1=0.9, beta2=0.999, eps=1e-8, bias-corrected),
    applied in place to ``params``. ``lr=0`` is an exact no-op (handy for
    dry-run epochs)."""
    if lr < 0:
        raise ContractError(f"learning rate must be >= 0, got {lr}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - BETA1**t
    bc2 = 1.0 - BETA2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ContractError(f"no gradient supplied for parameter {name}")
        if g.shape != p.data.shape:
            raise ContractError(
                f"gradient for {name} has shape {g.shape}, parameter is {p.data.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * (g * g)
        if lr:
            p.data = p.data - lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return state


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Multiplicative schedule: learning_rate * decay**epoch."""
    if epoch < 0:
        raise ContractError(f"epoch must be >= 0, got {epoch}")
    return config.learning_rate * config.decay**epoch


# -- epoch loop ------------------------------------------------------------------


def _collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def train_epoch(model, batches: Iterable, config: TrainConfig,
                rng: np.random.Generator, state: AdamState | None = None,
                lr: float | None = None, loss_fn: Callable | None = None):
    """One full pass: for each batch, forward -> loss -> backward -> Adam.

    Batch order within the epoch is drawn from ``rng`` (the same generator
    drives dropout), so a fixed seed fixes the whole pass. Returns
    ``(mean loss over samples, optimizer state)``.
    """
    batches = list(batches)
    if state is None:
        state = adam_init(model.params)
    if lr is None:
        lr = config.learning_rate
    if loss_fn is None:
        all_labels = np.concatenate([np.asarray(lab) for _, lab in batches])
        loss_fn = make_loss_fn(config, all_labels, model.config.num_classes)
    order = rng.permutation(len(batches))
    total_loss = 0.0
    total_n = 0
    for pos, bi in enumerate(order):
        images, labels = batches[bi]
        for p in model.params.values():
            p.zero_grad()
        try:
            logits = model.forward(Tensor._coerce(images), train_mode=True, rng=rng)
            loss = loss_fn(logits, labels)
        except DataError as exc:
            raise DataError(f"batch {int(bi)}: {exc}") from exc
        loss.backward()
        adam_step(model.params, _collect_grads(model.params), state, lr)
        n = len(labels)
        total_loss += loss.item() * n
        total_n += n
    return total_loss / max(total_n, 1), state


def evaluate_batches(model, batches: Iterable, loss_fn: Callable = cross_entropy):
    """Augmentation-free pass: returns (mean loss, accuracy) over the batches."""
    total_loss = 0.0
    total_n = 0
    correct = 0
    with no_grad():
        for images, labels in batches:
            logits = model.forward(Tensor._coerce(images))
            loss = loss_fn(logits, labels)
            labels = np.asarray(labels)
            n = len(labels)
            total_loss += loss.item() * n
            total_n += n
            correct += int((np.argmax(logits.data, axis=-1) == labels).sum())
    if total_n == 0:
        raise ContractError("evaluate_batches got no samples")
    return total_loss / total_n, correct / total_n


def fit(model, train_batches: Callable[[int], Iterable],
        valid_batches: Callable[[], Iterable], config: TrainConfig,
        on_epoch: Callable | None = None) -> list[dict]:
    """Run the full schedule. ``train_batches(epoch)`` yields that epoch's
    (images, labels) batches; ``valid_batches()`` the held-out ones. Returns
    one log row per epoch: epoch, lr, train_loss, valid_loss, valid_accuracy.
    """
    rng = np.random.default_rng(config.seed)
    state = adam_init(model.params)
    first_epoch = list(train_batches(0))
    all_labels = np.concatenate([np.asarray(lab) for _, lab in first_epoch])
    loss_fn = make_loss_fn(config, all_labels, model.config.num_classes)
    rows = []
    for epoch in range(config.epochs):
        lr = lr_at_epoch(config, epoch)
        batches = first_epoch if epoch == 0 else train_batches(epoch)
        train_loss, state = train_epoch(
            model, batches, config, rng, state=state, lr=lr, loss_fn=loss_fn)
        valid_loss, valid_acc = evaluate_batches(model, valid_batches(), loss_fn)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": train_loss,
            "valid_loss": valid_loss,
            "valid_accuracy": valid_acc,
        }
        rows.append(row)
        if on_epoch is not None:
            on_epoch(row)
    return rows

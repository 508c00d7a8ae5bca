"""AdamW training of the LoRA adapters against the combined objective.

Only the four adapter factors (A and B of each tower) are trainable; the
frozen projections never change. Every batch carries a slice of every role
so each loss term is evaluated at every step.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .corpus import Corpus
from .encoder import (
    EncoderConfig,
    EncoderState,
    LoraAdapter,
    RoleBatch,
    batch_embed,
    featurize_corpus,
    new_state,
)
from .losses import GradientSet, LossBreakdown, LossWeights, total_loss

_SEED_MOD = 2**63


class TrainingError(ValueError):
    """Raised for invalid training configs or non-finite training steps."""


class CheckpointError(ValueError):
    """Raised for unreadable, truncated, or incompatible checkpoint files."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    max_grad_norm: float | None = None

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "max_grad_norm": self.max_grad_norm,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "TrainConfig":
        base = cls()
        kwargs = {}
        for name, default in base.to_dict().items():
            value = raw.get(name, default)
            if name == "max_grad_norm":
                kwargs[name] = None if value is None else float(value)
            elif isinstance(default, int):
                kwargs[name] = int(value)
            else:
                kwargs[name] = float(value)
        return cls(**kwargs)


def validate_config(config: TrainConfig) -> None:
    if config.learning_rate <= 0:
        raise TrainingError(f"learning_rate must be positive, got {config.learning_rate}")
    if config.batch_size < 1:
        raise TrainingError(f"batch_size must be >= 1, got {config.batch_size}")
    if config.epochs < 1:
        raise TrainingError(f"epochs must be >= 1, got {config.epochs}")


PARAM_KEYS = ("a_text", "b_text", "a_image", "b_image")


def _params(state: EncoderState) -> dict[str, np.ndarray]:
    return {
        "a_text": state.lora_text.a,
        "b_text": state.lora_text.b,
        "a_image": state.lora_image.a,
        "b_image": state.lora_image.b,
    }


def _grad_arrays(grads: GradientSet) -> dict[str, np.ndarray]:
    return {
        "a_text": grads.da_text,
        "b_text": grads.db_text,
        "a_image": grads.da_image,
        "b_image": grads.db_image,
    }


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_optimizer(state: EncoderState) -> OptimizerState:
    params = _params(state)
    return OptimizerState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
    )


def adamw_update(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    opt: OptimizerState,
    config: TrainConfig,
) -> None:
    """One decoupled-weight-decay Adam step, applied in place."""
    opt.step += 1
    t = opt.step
    bc1 = 1.0 - config.beta1**t
    bc2 = 1.0 - config.beta2**t
    for key, theta in params.items():
        g = grads[key]
        m = opt.m[key]
        v = opt.v[key]
        m *= config.beta1
        m += (1.0 - config.beta1) * g
        v *= config.beta2
        v += (1.0 - config.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        theta -= config.learning_rate * (
            m_hat / (np.sqrt(v_hat) + config.adam_eps) + config.weight_decay * theta
        )


def make_batches(
    corpus: Mapping[str, RoleBatch],
    batch_size: int,
    seed: int,
    epoch: int,
) -> list[dict[str, RoleBatch]]:
    """Per-role slices with a deterministic shuffle per (seed, epoch).

    Every batch holds ``batch_size`` pairs of every role; the number of
    batches is set by the smallest role set.
    """
    if not corpus:
        raise TrainingError("no roles to batch")
    roles = sorted(corpus)
    sizes = {role: len(corpus[role]) for role in roles}
    smallest_role = min(roles, key=lambda r: sizes[r])
    smallest = sizes[smallest_role]
    if batch_size > smallest:
        raise TrainingError(
            f"batch_size {batch_size} exceeds the smallest role set "
            f"({smallest_role!r} has {smallest} pairs); use a smaller batch "
            "or replicate pairs"
        )
    n_batches = smallest // batch_size

    perms = {}
    for k, role in enumerate(roles):
        rng = np.random.default_rng([seed % _SEED_MOD, epoch, k])
        perms[role] = rng.permutation(sizes[role])

    batches = []
    for b in range(n_batches):
        batches.append(
            {
                role: corpus[role].take(perms[role][b * batch_size : (b + 1) * batch_size])
                for role in roles
            }
        )
    return batches


def step(
    state: EncoderState,
    opt_state: OptimizerState,
    batch: Mapping[str, RoleBatch],
    weights: LossWeights,
    config: TrainConfig,
) -> tuple[EncoderState, OptimizerState, LossBreakdown]:
    """Evaluate the objective on one batch and apply an AdamW update."""
    breakdown, grads = total_loss(batch, state, weights)
    if config.max_grad_norm is not None:
        norm = grads.global_norm()
        if norm > config.max_grad_norm:
            factor = config.max_grad_norm / norm
            for arr in grads.arrays():
                arr *= factor
    adamw_update(_params(state), _grad_arrays(grads), opt_state, config)
    return state, opt_state, breakdown


@dataclass
class TrainLog:
    steps: list[LossBreakdown] = field(default_factory=list)
    steps_per_epoch: int = 0
    epoch_seconds: list[float] = field(default_factory=list)

    def epoch_mean(self, term: str, epoch: int) -> float:
        lo = epoch * self.steps_per_epoch
        hi = lo + self.steps_per_epoch
        window = self.steps[lo:hi]
        if not window:
            raise TrainingError(f"no logged steps for epoch {epoch}")
        return float(np.mean([getattr(bd, term) for bd in window]))

    @property
    def epochs(self) -> int:
        return len(self.steps) // self.steps_per_epoch if self.steps_per_epoch else 0


def attach_anchor_base(feats: dict[str, RoleBatch], state: EncoderState) -> None:
    """Cache frozen-base anchor embeddings; they never change during training."""
    anchors = feats.get("anchor")
    if anchors is not None and anchors.base_text_emb is None:
        anchors.base_text_emb = batch_embed(anchors.text, state.w_text)[2]
        anchors.base_image_emb = batch_embed(anchors.image, state.w_image)[2]


def train(
    state: EncoderState,
    corpus: Corpus,
    weights: LossWeights,
    config: TrainConfig,
) -> tuple[EncoderState, TrainLog]:
    """Run the full schedule; deterministic for fixed corpus, weights, config."""
    validate_config(config)
    feats = featurize_corpus(corpus, state.config)
    attach_anchor_base(feats, state)
    opt_state = init_optimizer(state)

    log = TrainLog()
    for epoch in range(config.epochs):
        started = time.perf_counter()
        batches = make_batches(feats, config.batch_size, config.seed, epoch)
        if epoch == 0:
            log.steps_per_epoch = len(batches)
        for batch in batches:
            state, opt_state, breakdown = step(state, opt_state, batch, weights, config)
            log.steps.append(breakdown)
        log.epoch_seconds.append(time.perf_counter() - started)
    return state, log


# --- checkpoints ----------------------------------------------------------------

_MAGIC_PREFIX = b"RFCKPT"
_MAGIC = _MAGIC_PREFIX + b"01"


def _array_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_checkpoint(
    state: EncoderState,
    path: str | Path,
    optimizer: OptimizerState | None = None,
) -> Path:
    """Binary adapter checkpoint.

    Layout: 8-byte magic (format + version), 4-byte little-endian header
    length, JSON header (encoder config, optimizer flag, step count), then
    row-major little-endian float64 arrays: A_text, B_text, A_image,
    B_image, and, when present, the optimizer's m then v arrays in the same
    parameter order.
    """
    header = {
        "config": state.config.to_dict(),
        "optimizer": optimizer is not None,
        "opt_step": 0 if optimizer is None else optimizer.step,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    blob = bytearray()
    blob += _MAGIC
    blob += len(header_bytes).to_bytes(4, "little")
    blob += header_bytes
    blob += _array_bytes(state.lora_text.a)
    blob += _array_bytes(state.lora_text.b)
    blob += _array_bytes(state.lora_image.a)
    blob += _array_bytes(state.lora_image.b)
    if optimizer is not None:
        for collection in (optimizer.m, optimizer.v):
            for key in PARAM_KEYS:
                blob += _array_bytes(collection[key])
    path = Path(path)
    path.write_bytes(bytes(blob))
    return path


def load_checkpoint(
    path: str | Path,
    expected_config: EncoderConfig | None = None,
) -> tuple[EncoderState, OptimizerState | None]:
    """Rebuild an encoder state (and optimizer, if stored) from a checkpoint."""
    raw = Path(path).read_bytes()
    if len(raw) < len(_MAGIC) + 4:
        raise CheckpointError("truncated checkpoint: missing header")
    if raw[: len(_MAGIC_PREFIX)] != _MAGIC_PREFIX:
        raise CheckpointError("not a relforget checkpoint (bad magic)")
    if raw[: len(_MAGIC)] != _MAGIC:
        raise CheckpointError(
            f"unsupported checkpoint version {raw[len(_MAGIC_PREFIX):len(_MAGIC)]!r}"
        )
    offset = len(_MAGIC)
    header_len = int.from_bytes(raw[offset : offset + 4], "little")
    offset += 4
    if len(raw) < offset + header_len:
        raise CheckpointError("truncated checkpoint: incomplete header")
    try:
        header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
        config = EncoderConfig.from_dict(header["config"])
        has_optimizer = bool(header["optimizer"])
        opt_step = int(header["opt_step"])
    except (json.JSONDecodeError, UnicodeDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"corrupt checkpoint header: {exc}") from exc
    offset += header_len

    if expected_config is not None and config != expected_config:
        raise CheckpointError(
            "checkpoint config mismatch: "
            f"stored {config.to_dict()}, expected {expected_config.to_dict()}"
        )

    def take(shape: tuple[int, int]) -> np.ndarray:
        nonlocal offset
        count = shape[0] * shape[1]
        end = offset + count * 8
        if len(raw) < end:
            raise CheckpointError("truncated checkpoint: incomplete array data")
        arr = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
        return arr

    a_shape = (config.rank, config.d_in)
    b_shape = (config.d_out, config.rank)
    state = new_state(config)
    scale = config.alpha_lora / config.rank
    state.lora_text = LoraAdapter(a=take(a_shape), b=take(b_shape), rank=config.rank, scale=scale)
    state.lora_image = LoraAdapter(a=take(a_shape), b=take(b_shape), rank=config.rank, scale=scale)

    optimizer = None
    if has_optimizer:
        shapes = {"a_text": a_shape, "b_text": b_shape, "a_image": a_shape, "b_image": b_shape}
        m = {key: take(shapes[key]) for key in PARAM_KEYS}
        v = {key: take(shapes[key]) for key in PARAM_KEYS}
        optimizer = OptimizerState(m=m, v=v, step=opt_step)

    if offset != len(raw):
        raise CheckpointError(f"corrupt checkpoint: {len(raw) - offset} trailing bytes")
    return state, optimizer

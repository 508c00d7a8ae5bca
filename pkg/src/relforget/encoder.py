"""Frozen toy dual encoder with trainable LoRA adapters on its projections.

Text features are seeded feature-hashed unigrams and bigrams; image features
share the same hash space through a latent scene vector, plus a style offset
and per-pair noise, so matched caption/scene pairs start out aligned. Each
modality is projected by a frozen random matrix; only the low-rank adapters
(B @ A, zero at init) ever train.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping

import numpy as np

from .corpus import Corpus, ExamplePair, SceneDescriptor
from .lexicon import NEUTRAL_STYLE

NORM_EPS = 1e-12

_NOISE_STREAM = 1
_STYLE_STREAM = 2
_SEED_MOD = 2**63


class EncoderError(ValueError):
    """Raised for dimension mismatches, degenerate outputs, or bad adapters."""


@dataclass(frozen=True)
class EncoderConfig:
    """Dimensions, seeds, and featurizer knobs of the toy dual encoder.

    ``tower_alignment`` is the correlation between the two frozen
    projections (each tower mixes a shared matrix with private noise). It
    stands in for the cross-modal alignment a pretrained dual encoder would
    have learned: at 1.0 the towers are identical, at 0.0 independent
    projections wipe out the feature-space alignment of matched pairs.
    """

    d_in: int = 512
    d_out: int = 64
    rank: int = 8
    alpha_lora: float = 16.0
    weight_seed: int = 1234
    adapter_seed: int = 4321
    feat_seed: int = 7777
    bigram_weight: float = 0.5
    noise_scale: float = 0.25
    style_scale: float = 0.8
    context_weight: float = 0.35
    tower_alignment: float = 0.95

    def to_dict(self) -> dict:
        return {
            "d_in": self.d_in,
            "d_out": self.d_out,
            "rank": self.rank,
            "alpha_lora": self.alpha_lora,
            "weight_seed": self.weight_seed,
            "adapter_seed": self.adapter_seed,
            "feat_seed": self.feat_seed,
            "bigram_weight": self.bigram_weight,
            "noise_scale": self.noise_scale,
            "style_scale": self.style_scale,
            "context_weight": self.context_weight,
            "tower_alignment": self.tower_alignment,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "EncoderConfig":
        base = cls()
        kwargs = {}
        for name, default in base.to_dict().items():
            value = raw.get(name, default)
            kwargs[name] = type(default)(value)
        return cls(**kwargs)


@dataclass(eq=False)
class FeatureVector:
    values: np.ndarray
    modality: str


@dataclass(eq=False)
class Embedding:
    values: np.ndarray
    modality: str


# --- feature hashing ---------------------------------------------------------


def _tokenize(text: str) -> list[str]:
    return re.findall(r"[a-z0-9]+", text.lower())


@lru_cache(maxsize=None)
def _hash_slot(token: str, feat_seed: int, dim: int) -> tuple[int, float]:
    digest = hashlib.blake2b(
        token.encode("utf-8"), digest_size=8, key=str(feat_seed).encode("ascii")
    ).digest()
    value = int.from_bytes(digest, "little")
    sign = 1.0 if value < 2**63 else -1.0
    return value % dim, sign


def _unit(v: np.ndarray, what: str) -> np.ndarray:
    norm = float(np.linalg.norm(v))
    if norm < NORM_EPS:
        raise EncoderError(f"degenerate {what}: norm below {NORM_EPS}")
    return v / norm


@lru_cache(maxsize=65536)
def _text_features(caption: str, feat_seed: int, dim: int, bigram_weight: float) -> np.ndarray:
    tokens = _tokenize(caption)
    if not tokens:
        raise EncoderError(f"caption {caption!r} has no tokens")
    v = np.zeros(dim)
    for tok in tokens:
        idx, sign = _hash_slot("u:" + tok, feat_seed, dim)
        v[idx] += sign
    for a, b in zip(tokens, tokens[1:]):
        idx, sign = _hash_slot(f"b:{a}|{b}", feat_seed, dim)
        v[idx] += bigram_weight * sign
    v = _unit(v, f"text features for {caption!r}")
    v.setflags(write=False)
    return v


@lru_cache(maxsize=65536)
def _scene_latent(
    core_tokens: tuple[str, ...],
    context_tokens: tuple[str, ...],
    feat_seed: int,
    dim: int,
    context_weight: float,
) -> np.ndarray:
    v = np.zeros(dim)
    for tok in core_tokens:
        idx, sign = _hash_slot("u:" + tok, feat_seed, dim)
        v[idx] += sign
    # Context is background: it contributes, but the subjects dominate.
    for tok in context_tokens:
        idx, sign = _hash_slot("u:" + tok, feat_seed, dim)
        v[idx] += context_weight * sign
    v = _unit(v, "scene latent")
    v.setflags(write=False)
    return v


@lru_cache(maxsize=256)
def _style_vector(style_tag: str, feat_seed: int, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(("style:" + style_tag).encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng([feat_seed % _SEED_MOD, _STYLE_STREAM, int.from_bytes(digest, "little")])
    v = _unit(rng.standard_normal(dim), "style vector")
    v.setflags(write=False)
    return v


def _noise_vector(noise_seed: int, feat_seed: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng([feat_seed % _SEED_MOD, _NOISE_STREAM, noise_seed % _SEED_MOD])
    return _unit(rng.standard_normal(dim), "noise vector")


def featurize_text(caption: str, config: EncoderConfig) -> FeatureVector:
    """Hash token unigrams and bigrams into a unit vector."""
    if not caption.strip():
        raise EncoderError("caption must be non-empty")
    values = _text_features(caption, config.feat_seed, config.d_in, config.bigram_weight)
    return FeatureVector(values=values.copy(), modality="text")


def featurize_image(scene: SceneDescriptor, config: EncoderConfig) -> FeatureVector:
    """Shared scene latent plus style offset plus seeded per-pair noise."""
    core: list[str] = []
    for label in scene.objects:
        core.extend(_tokenize(label))
    if scene.relation is not None:
        core.extend(_tokenize(scene.relation))
    context: list[str] = []
    for tag in scene.context_tags:
        context.extend(_tokenize(tag))
    if not core:
        raise EncoderError("scene has no describable tokens")

    v = _scene_latent(
        tuple(core), tuple(context), config.feat_seed, config.d_in, config.context_weight
    ).copy()
    if scene.style_tag != NEUTRAL_STYLE:
        v += config.style_scale * _style_vector(scene.style_tag, config.feat_seed, config.d_in)
    if config.noise_scale > 0.0:
        v += config.noise_scale * _noise_vector(scene.noise_seed, config.feat_seed, config.d_in)
    return FeatureVector(values=_unit(v, "image features"), modality="image")


def featurize_pair(pair: ExamplePair, config: EncoderConfig) -> tuple[np.ndarray, np.ndarray]:
    """Feature vectors for one pair; precomputed vectors bypass the hashers."""
    if pair.text_vec is not None and pair.image_vec is not None:
        text = np.asarray(pair.text_vec, dtype=np.float64)
        image = np.asarray(pair.image_vec, dtype=np.float64)
        for name, vec in (("text", text), ("image", image)):
            if vec.shape != (config.d_in,):
                raise EncoderError(
                    f"external {name} vector has dimension {vec.shape[0]}, expected {config.d_in}"
                )
            if not np.all(np.isfinite(vec)):
                raise EncoderError(f"external {name} vector has non-finite entries")
        return text, image
    if pair.scene is None:
        raise EncoderError(f"pair {pair.caption!r} has neither scene nor vectors")
    text = featurize_text(pair.caption, config).values
    image = featurize_image(pair.scene, config).values
    return text, image


@dataclass
class RoleBatch:
    """Featurized pairs for one role, optionally with cached base embeddings."""

    text: np.ndarray
    image: np.ndarray
    base_text_emb: np.ndarray | None = None
    base_image_emb: np.ndarray | None = None

    def __len__(self) -> int:
        return self.text.shape[0]

    def take(self, index: np.ndarray) -> "RoleBatch":
        return RoleBatch(
            text=self.text[index],
            image=self.image[index],
            base_text_emb=None if self.base_text_emb is None else self.base_text_emb[index],
            base_image_emb=None if self.base_image_emb is None else self.base_image_emb[index],
        )


def featurize_pairs(pairs: Iterable[ExamplePair], config: EncoderConfig) -> RoleBatch:
    pairs = list(pairs)
    if not pairs:
        raise EncoderError("cannot featurize an empty pair set")
    text = np.empty((len(pairs), config.d_in))
    image = np.empty((len(pairs), config.d_in))
    for i, pair in enumerate(pairs):
        text[i], image[i] = featurize_pair(pair, config)
    return RoleBatch(text=text, image=image)


def featurize_corpus(corpus: Corpus, config: EncoderConfig) -> dict[str, RoleBatch]:
    return {role: featurize_pairs(pairs, config) for role, pairs in corpus.train.items()}


# --- LoRA and projections -----------------------------------------------------


@dataclass
class LoraAdapter:
    a: np.ndarray  # (rank, d_in)
    b: np.ndarray  # (d_out, rank)
    rank: int
    scale: float

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(a=self.a.copy(), b=self.b.copy(), rank=self.rank, scale=self.scale)


def init_lora(dims: tuple[int, int], rank: int, alpha_lora: float, seed: int) -> LoraAdapter:
    """Fresh adapter: A ~ N(0, 0.02), B = 0, so the initial update is zero."""
    d_in, d_out = dims
    if not 1 <= rank <= min(d_in, d_out):
        raise EncoderError(f"rank {rank} outside [1, {min(d_in, d_out)}] for dims {dims}")
    rng = np.random.default_rng(seed % _SEED_MOD)
    a = rng.normal(0.0, 0.02, size=(rank, d_in))
    b = np.zeros((d_out, rank))
    return LoraAdapter(a=a, b=b, rank=rank, scale=alpha_lora / rank)


def effective_weight(w: np.ndarray, lora: LoraAdapter) -> np.ndarray:
    """W + scale * B @ A. A zero adapter returns W itself (bit-exact)."""
    d_out, d_in = w.shape
    if lora.a.shape != (lora.rank, d_in) or lora.b.shape != (d_out, lora.rank):
        raise EncoderError(
            f"adapter shapes {lora.a.shape}/{lora.b.shape} incompatible with weight {w.shape}"
        )
    if not lora.b.any():
        return w.copy()
    return w + lora.scale * (lora.b @ lora.a)


@dataclass
class EncoderState:
    config: EncoderConfig
    w_text: np.ndarray
    w_image: np.ndarray
    lora_text: LoraAdapter
    lora_image: LoraAdapter


def new_state(config: EncoderConfig) -> EncoderState:
    """Frozen random projections plus freshly initialized adapters."""
    if not 0.0 <= config.tower_alignment <= 1.0:
        raise EncoderError(f"tower_alignment must lie in [0, 1], got {config.tower_alignment}")
    scale = 1.0 / np.sqrt(config.d_in)
    shape = (config.d_out, config.d_in)
    seed = config.weight_seed % _SEED_MOD
    shared = np.random.default_rng([seed, 0]).normal(0.0, scale, size=shape)
    rho = config.tower_alignment
    mix = np.sqrt(1.0 - rho * rho)
    w_text = rho * shared + mix * np.random.default_rng([seed, 1]).normal(0.0, scale, size=shape)
    w_image = rho * shared + mix * np.random.default_rng([seed, 2]).normal(0.0, scale, size=shape)
    w_text.setflags(write=False)
    w_image.setflags(write=False)
    dims = (config.d_in, config.d_out)
    return EncoderState(
        config=config,
        w_text=w_text,
        w_image=w_image,
        lora_text=init_lora(dims, config.rank, config.alpha_lora, config.adapter_seed * 2 + 0),
        lora_image=init_lora(dims, config.rank, config.alpha_lora, config.adapter_seed * 2 + 1),
    )


def copy_state(state: EncoderState) -> EncoderState:
    """Independent adapters over the same (read-only) frozen projections."""
    return EncoderState(
        config=state.config,
        w_text=state.w_text,
        w_image=state.w_image,
        lora_text=state.lora_text.copy(),
        lora_image=state.lora_image.copy(),
    )


def randomize_adapters(state: EncoderState, seed: int, scale: float = 0.05) -> None:
    """Overwrite both adapters with dense noise (gradient-check scaffolding)."""
    rng = np.random.default_rng(seed % _SEED_MOD)
    for lora in (state.lora_text, state.lora_image):
        lora.a[...] = rng.normal(0.0, scale, size=lora.a.shape)
        lora.b[...] = rng.normal(0.0, scale, size=lora.b.shape)


def tower_weight(state: EncoderState, modality: str, mode: str) -> np.ndarray:
    if modality not in ("text", "image"):
        raise EncoderError(f"unknown modality {modality!r}")
    if mode not in ("base", "adapted"):
        raise EncoderError(f"unknown mode {mode!r}")
    w = state.w_text if modality == "text" else state.w_image
    if mode == "base":
        return w
    lora = state.lora_text if modality == "text" else state.lora_image
    return effective_weight(w, lora)


def embed(state: EncoderState, features: FeatureVector, mode: str = "adapted") -> Embedding:
    """Project features through the chosen tower and unit-normalize."""
    x = np.asarray(features.values, dtype=np.float64)
    if x.shape != (state.config.d_in,):
        raise EncoderError(
            f"feature dimension {x.shape} does not match d_in={state.config.d_in}"
        )
    w = tower_weight(state, features.modality, mode)
    z = w @ x
    return Embedding(values=_unit(z, "embedding"), modality=features.modality)


def cosine(a: Embedding, b: Embedding) -> float:
    """Cosine of two unit embeddings; equal vectors short-circuit to exactly 1."""
    if a.values.shape != b.values.shape:
        raise EncoderError(f"embedding dims differ: {a.values.shape} vs {b.values.shape}")
    if np.array_equal(a.values, b.values):
        return 1.0
    return float(np.clip(np.dot(a.values, b.values), -1.0, 1.0))


# --- batched forward helpers ---------------------------------------------------


def batch_embed(x: np.ndarray, w_eff: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project rows of x and normalize; returns (raw, norms, unit rows)."""
    z = x @ w_eff.T
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms < NORM_EPS):
        raise EncoderError("degenerate embedding in batch: projection collapsed to zero")
    return z, norms, z / norms


def batch_cosine(ea: np.ndarray, eb: np.ndarray) -> np.ndarray:
    """Row-wise cosine of unit rows; identical rows give exactly 1."""
    c = np.clip(np.einsum("ij,ij->i", ea, eb), -1.0, 1.0)
    equal = np.all(ea == eb, axis=1)
    if equal.any():
        c = np.where(equal, 1.0, c)
    return c

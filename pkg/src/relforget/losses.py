"""Six-term unlearning objective with analytic LoRA gradients.

Pull terms drive matched text/image embeddings together (1 - cosine), push
terms drive unsafe pairs below a cosine margin (hinge), and the consistency
term holds adapted embeddings near the frozen base. Gradients with respect
to the adapter factors are derived by hand; ``grad_check`` compares them
against central finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .encoder import (
    EncoderState,
    RoleBatch,
    batch_cosine,
    batch_embed,
    effective_weight,
)


class LossError(ValueError):
    """Raised for empty pair sets, bad weights, or non-finite loss values."""


@dataclass(frozen=True)
class LossWeights:
    """Term weights for the combined objective.

    ``alpha`` scales the node pull, ``beta`` the safe-edge pull, ``delta``
    the neutral pull, ``gamma`` the consistency term, and ``lambda_adv`` the
    adversarial push. ``push_margin`` is the hinge target for both push
    terms: pairs already below it contribute nothing.

    The pull defaults sit well below 1.0 on purpose: a pull term rewards
    raising safe cosines all the way to 1, so at unit weight it drags safe
    pairs far above their base alignment and shows up as drift. Light pulls
    plus a unit consistency term keep the safe geometry pinned to the base
    encoder while the push terms do the targeted work.
    """

    alpha: float = 0.1
    beta: float = 0.1
    delta: float = 0.1
    gamma: float = 1.0
    lambda_adv: float = 1.0
    push_margin: float = -0.4

    def __post_init__(self) -> None:
        for name in ("alpha", "beta", "delta", "gamma", "lambda_adv"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise LossError(f"weight {name} must be finite and >= 0, got {value}")
        if not -1.0 <= self.push_margin <= 1.0:
            raise LossError(f"push_margin must lie in [-1, 1], got {self.push_margin}")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "delta": self.delta,
            "gamma": self.gamma,
            "lambda_adv": self.lambda_adv,
            "push_margin": self.push_margin,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "LossWeights":
        base = cls()
        return cls(**{k: float(raw.get(k, v)) for k, v in base.to_dict().items()})


@dataclass(frozen=True)
class LossBreakdown:
    l1: float
    l2: float
    l3: float
    l4: float
    lc: float
    ladv: float
    total: float

    @property
    def pull_aggregate(self) -> float:
        return self.l1 + self.l2 + self.l4

    def to_dict(self) -> dict:
        return {
            "l1": self.l1,
            "l2": self.l2,
            "l3": self.l3,
            "l4": self.l4,
            "lc": self.lc,
            "ladv": self.ladv,
            "total": self.total,
        }


@dataclass
class GradientSet:
    da_text: np.ndarray
    db_text: np.ndarray
    da_image: np.ndarray
    db_image: np.ndarray

    @classmethod
    def zeros(cls, state: EncoderState) -> "GradientSet":
        return cls(
            da_text=np.zeros_like(state.lora_text.a),
            db_text=np.zeros_like(state.lora_text.b),
            da_image=np.zeros_like(state.lora_image.a),
            db_image=np.zeros_like(state.lora_image.b),
        )

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (self.da_text, self.db_text, self.da_image, self.db_image)

    def add_scaled(self, other: "GradientSet", weight: float) -> None:
        if weight == 0.0:
            return
        self.da_text += weight * other.da_text
        self.db_text += weight * other.db_text
        self.da_image += weight * other.da_image
        self.db_image += weight * other.db_image

    def global_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(a * a)) for a in self.arrays())))


@dataclass
class _PairForward:
    pt: np.ndarray
    pi: np.ndarray
    et: np.ndarray
    ei: np.ndarray
    nt: np.ndarray
    ni: np.ndarray
    cos: np.ndarray


def _forward_pairs(batch: RoleBatch, state: EncoderState) -> _PairForward:
    wt = effective_weight(state.w_text, state.lora_text)
    wi = effective_weight(state.w_image, state.lora_image)
    _, nt, et = batch_embed(batch.text, wt)
    _, ni, ei = batch_embed(batch.image, wi)
    return _PairForward(
        pt=batch.text @ state.lora_text.a.T,
        pi=batch.image @ state.lora_image.a.T,
        et=et,
        ei=ei,
        nt=nt,
        ni=ni,
        cos=batch_cosine(et, ei),
    )


def _pair_grads(batch: RoleBatch, fw: _PairForward, dldc: np.ndarray, state: EncoderState) -> GradientSet:
    grads = GradientSet.zeros(state)
    # d cos / d z_text = (e_image - cos * e_text) / ||z_text||, and symmetrically.
    gt = dldc[:, None] * (fw.ei - fw.cos[:, None] * fw.et) / fw.nt
    gi = dldc[:, None] * (fw.et - fw.cos[:, None] * fw.ei) / fw.ni
    st = state.lora_text.scale
    si = state.lora_image.scale
    grads.db_text += st * (gt.T @ fw.pt)
    grads.da_text += st * (state.lora_text.b.T @ (gt.T @ batch.text))
    grads.db_image += si * (gi.T @ fw.pi)
    grads.da_image += si * (state.lora_image.b.T @ (gi.T @ batch.image))
    return grads


def pull_loss(pairs: RoleBatch, state: EncoderState) -> tuple[float, GradientSet]:
    """Mean of (1 - cosine) over matched pairs, in adapted mode."""
    n = len(pairs)
    if n == 0:
        raise LossError("pull_loss needs a non-empty pair set")
    fw = _forward_pairs(pairs, state)
    value = float(np.mean(1.0 - fw.cos))
    dldc = np.full(n, -1.0 / n)
    return value, _pair_grads(pairs, fw, dldc, state)


def push_loss(pairs: RoleBatch, state: EncoderState, margin: float) -> tuple[float, GradientSet]:
    """Mean hinge max(0, cosine - margin); inactive pairs get zero gradient."""
    n = len(pairs)
    if n == 0:
        raise LossError("push_loss needs a non-empty pair set")
    if not -1.0 <= margin <= 1.0:
        raise LossError(f"margin must lie in [-1, 1], got {margin}")
    fw = _forward_pairs(pairs, state)
    excess = fw.cos - margin
    active = excess > 0.0
    value = float(np.sum(np.where(active, excess, 0.0)) / n)
    dldc = np.where(active, 1.0 / n, 0.0)
    return value, _pair_grads(pairs, fw, dldc, state)


def consistency_loss(anchors: RoleBatch, state: EncoderState) -> tuple[float, GradientSet]:
    """Mean of (1 - cosine(adapted, base)) over anchors and both modalities.

    Base embeddings are constants; ``RoleBatch.base_*_emb`` caches them so a
    training loop pays the frozen projection once per corpus.
    """
    n = len(anchors)
    if n == 0:
        raise LossError("consistency_loss needs a non-empty anchor set")
    base_t = anchors.base_text_emb
    base_i = anchors.base_image_emb
    if base_t is None:
        base_t = batch_embed(anchors.text, state.w_text)[2]
    if base_i is None:
        base_i = batch_embed(anchors.image, state.w_image)[2]

    grads = GradientSet.zeros(state)
    total = 0.0
    for modality, x, base, lora, w in (
        ("text", anchors.text, base_t, state.lora_text, state.w_text),
        ("image", anchors.image, base_i, state.lora_image, state.w_image),
    ):
        _, na, ea = batch_embed(x, effective_weight(w, lora))
        c = batch_cosine(ea, base)
        total += float(np.sum(1.0 - c))
        dldc = np.full(len(x), -1.0 / (2 * n))
        g = dldc[:, None] * (base - c[:, None] * ea) / na
        p = x @ lora.a.T
        db = lora.scale * (g.T @ p)
        da = lora.scale * (lora.b.T @ (g.T @ x))
        if modality == "text":
            grads.db_text += db
            grads.da_text += da
        else:
            grads.db_image += db
            grads.da_image += da
    return total / (2 * n), grads


_TERM_ROLES = {
    "l1": "l1",
    "l2": "l2",
    "l3": "l3",
    "l4": "l4",
    "lc": "anchor",
    "ladv": "adv",
}


def total_loss(
    batch: Mapping[str, RoleBatch],
    state: EncoderState,
    weights: LossWeights,
) -> tuple[LossBreakdown, GradientSet]:
    """Weighted sum of all six terms plus the merged gradient.

    Roles with zero weight may be absent; their term reports 0. A present
    role is always evaluated so baseline runs still log every curve.
    """

    def run_term(
        term: str, weight: float, fn: Callable[[RoleBatch], tuple[float, GradientSet]]
    ) -> tuple[float, GradientSet | None]:
        role = _TERM_ROLES[term]
        pairs = batch.get(role)
        if pairs is None or len(pairs) == 0:
            if weight != 0.0 or term == "l3":
                raise LossError(f"loss term {term!r} needs pairs for role {role!r}")
            return 0.0, None
        value, grads = fn(pairs)
        if not math.isfinite(value):
            raise LossError(f"non-finite value in loss term {term!r}")
        if weight != 0.0 and not all(np.all(np.isfinite(a)) for a in grads.arrays()):
            raise LossError(f"non-finite gradient in loss term {term!r}")
        return value, grads

    margin = weights.push_margin
    l3, g3 = run_term("l3", 1.0, lambda p: push_loss(p, state, margin))
    l2, g2 = run_term("l2", weights.alpha, lambda p: pull_loss(p, state))
    l1, g1 = run_term("l1", weights.beta, lambda p: pull_loss(p, state))
    l4, g4 = run_term("l4", weights.delta, lambda p: pull_loss(p, state))
    lc, gc = run_term("lc", weights.gamma, lambda p: consistency_loss(p, state))
    ladv, gadv = run_term("ladv", weights.lambda_adv, lambda p: push_loss(p, state, margin))

    total = (
        l3
        + weights.alpha * l2
        + weights.beta * l1
        + weights.delta * l4
        + weights.gamma * lc
        + weights.lambda_adv * ladv
    )
    merged = GradientSet.zeros(state)
    for grads, weight in (
        (g3, 1.0),
        (g2, weights.alpha),
        (g1, weights.beta),
        (g4, weights.delta),
        (gc, weights.gamma),
        (gadv, weights.lambda_adv),
    ):
        if grads is not None:
            merged.add_scaled(grads, weight)

    breakdown = LossBreakdown(l1=l1, l2=l2, l3=l3, l4=l4, lc=lc, ladv=ladv, total=total)
    return breakdown, merged


def grad_check(
    state: EncoderState,
    batch: Mapping[str, RoleBatch],
    weights: LossWeights,
    eps: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Perturbs every adapter coordinate in place (restoring it afterwards), so
    the state must not be shared with concurrent readers.
    """
    if not 0.0 < eps <= 1e-2:
        raise LossError(f"eps must lie in (0, 1e-2], got {eps}")
    _, analytic = total_loss(batch, state, weights)

    def value() -> float:
        t = total_loss(batch, state, weights)[0].total
        if not math.isfinite(t):
            raise LossError("non-finite loss encountered during finite differences")
        return t

    params = (
        (state.lora_text.a, analytic.da_text),
        (state.lora_text.b, analytic.db_text),
        (state.lora_image.a, analytic.da_image),
        (state.lora_image.b, analytic.db_image),
    )
    worst = 0.0
    for array, grad in params:
        flat = array.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            upper = value()
            flat[i] = orig - eps
            lower = value()
            flat[i] = orig
            fd = (upper - lower) / (2.0 * eps)
            ga = gflat[i]
            rel = abs(ga - fd) / max(1e-8, abs(ga) + abs(fd))
            worst = max(worst, rel)
    return worst


# --- loss-curve log -----------------------------------------------------------

LOSS_LOG_COLUMNS = ("step", "l1", "l2", "l3", "l4", "lc", "ladv", "total")


def write_loss_log(breakdowns: list[LossBreakdown], path: str | Path) -> Path:
    """One tab-separated record per step, in LOSS_LOG_COLUMNS order."""
    path = Path(path)
    lines = ["# " + "\t".join(LOSS_LOG_COLUMNS)]
    for step, bd in enumerate(breakdowns):
        row = bd.to_dict()
        lines.append("\t".join([str(step)] + [repr(row[c]) for c in LOSS_LOG_COLUMNS[1:]]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_loss_log(path: str | Path) -> list[LossBreakdown]:
    breakdowns = []
    for idx, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != len(LOSS_LOG_COLUMNS):
            raise LossError(f"loss log row {idx}: expected {len(LOSS_LOG_COLUMNS)} columns")
        values = [float(x) for x in parts[1:]]
        breakdowns.append(LossBreakdown(*values))
    return breakdowns

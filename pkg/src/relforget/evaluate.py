"""Forgetting, preservation, and ablation evaluation.

Every metric is a before/after comparison of mean pair cosines: the base
side uses the frozen projections, the optimal side the adapted ones.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import (
    ATTACK_TYPES,
    Corpus,
    CorpusConfig,
    ExamplePair,
    PRESERVATION_CASES,
    generate_corpus,
    pair_identity,
)
from .encoder import (
    EncoderConfig,
    EncoderState,
    batch_cosine,
    batch_embed,
    copy_state,
    featurize_pairs,
    new_state,
    tower_weight,
)
from .graph import RelationGraph, validate
from .losses import LossWeights, write_loss_log
from .trainer import TrainConfig, train


class EvalError(ValueError):
    """Raised for empty evaluation sets or malformed report requests."""


@dataclass(frozen=True)
class AttackSet:
    attack_type: str
    tier: str
    pairs: tuple[ExamplePair, ...]

    def __post_init__(self) -> None:
        if not self.pairs:
            raise EvalError(f"attack set {self.attack_type}/{self.tier} is empty")


@dataclass(frozen=True)
class AttackResult:
    attack_type: str
    tier: str
    n_pairs: int
    base_cos: float
    optimal_cos: float
    delta_cos: float

    @classmethod
    def from_means(
        cls, attack_type: str, tier: str, n_pairs: int, base_cos: float, optimal_cos: float
    ) -> "AttackResult":
        return cls(
            attack_type=attack_type,
            tier=tier,
            n_pairs=n_pairs,
            base_cos=base_cos,
            optimal_cos=optimal_cos,
            delta_cos=base_cos - optimal_cos,
        )

    def to_dict(self) -> dict:
        return {
            "attack_type": self.attack_type,
            "tier": self.tier,
            "n_pairs": self.n_pairs,
            "base_cos": self.base_cos,
            "optimal_cos": self.optimal_cos,
            "delta_cos": self.delta_cos,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "AttackResult":
        return cls(
            attack_type=str(raw["attack_type"]),
            tier=str(raw["tier"]),
            n_pairs=int(raw["n_pairs"]),
            base_cos=float(raw["base_cos"]),
            optimal_cos=float(raw["optimal_cos"]),
            delta_cos=float(raw["delta_cos"]),
        )


@dataclass(frozen=True)
class ForgettingReport:
    tiers: tuple[AttackResult, ...]
    by_type: dict[str, AttackResult]

    def to_dict(self) -> dict:
        return {
            "tiers": [r.to_dict() for r in self.tiers],
            "by_type": {k: r.to_dict() for k, r in self.by_type.items()},
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "ForgettingReport":
        return cls(
            tiers=tuple(AttackResult.from_dict(r) for r in raw["tiers"]),
            by_type={k: AttackResult.from_dict(r) for k, r in raw["by_type"].items()},
        )


@dataclass(frozen=True)
class PreservationResult:
    case: str
    n_pairs: int
    base_cos: float
    optimal_cos: float
    abs_drift: float

    def to_dict(self) -> dict:
        return {
            "case": self.case,
            "n_pairs": self.n_pairs,
            "base_cos": self.base_cos,
            "optimal_cos": self.optimal_cos,
            "abs_drift": self.abs_drift,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "PreservationResult":
        return cls(
            case=str(raw["case"]),
            n_pairs=int(raw["n_pairs"]),
            base_cos=float(raw["base_cos"]),
            optimal_cos=float(raw["optimal_cos"]),
            abs_drift=float(raw["abs_drift"]),
        )


@dataclass(frozen=True)
class PreservationReport:
    cases: dict[str, PreservationResult]

    @property
    def mean_abs_drift(self) -> float:
        return float(np.mean([r.abs_drift for r in self.cases.values()]))

    def to_dict(self) -> dict:
        return {
            "cases": {k: r.to_dict() for k, r in self.cases.items()},
            "mean_abs_drift": self.mean_abs_drift,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "PreservationReport":
        return cls(cases={k: PreservationResult.from_dict(r) for k, r in raw["cases"].items()})


def _check_dims(base_state: EncoderState, adapted_state: EncoderState) -> None:
    b, a = base_state.config, adapted_state.config
    if (b.d_in, b.d_out) != (a.d_in, a.d_out):
        raise EvalError(
            f"states disagree on dimensions: ({b.d_in},{b.d_out}) vs ({a.d_in},{a.d_out})"
        )


def _pair_cosines(
    pairs: Sequence[ExamplePair],
    base_state: EncoderState,
    adapted_state: EncoderState,
) -> tuple[np.ndarray, np.ndarray]:
    rb = featurize_pairs(pairs, base_state.config)
    base_t = batch_embed(rb.text, tower_weight(base_state, "text", "base"))[2]
    base_i = batch_embed(rb.image, tower_weight(base_state, "image", "base"))[2]
    adapted_t = batch_embed(rb.text, tower_weight(adapted_state, "text", "adapted"))[2]
    adapted_i = batch_embed(rb.image, tower_weight(adapted_state, "image", "adapted"))[2]
    return batch_cosine(base_t, base_i), batch_cosine(adapted_t, adapted_i)


def build_attack_suite(
    graph: RelationGraph, corpus_config: CorpusConfig, seed: int
) -> list[AttackSet]:
    """One attack set per family, drawn from the eval side of the corpus."""
    corpus = generate_corpus(graph, replace(corpus_config, seed=seed))
    return attack_sets_from_corpus(corpus)


def attack_sets_from_corpus(corpus: Corpus) -> list[AttackSet]:
    sets = []
    for attack_type in ATTACK_TYPES:
        for (atype, tier), pairs in corpus.attacks.items():
            if atype == attack_type:
                sets.append(AttackSet(attack_type=atype, tier=tier, pairs=pairs))
    if not sets:
        raise EvalError("corpus carries no attack sets")
    return sets


def forgetting_eval(
    base_state: EncoderState,
    adapted_state: EncoderState,
    attack_sets: Sequence[AttackSet],
) -> ForgettingReport:
    """Mean base/adapted cosine per attack set plus per-type aggregates.

    The per-type aggregate is the unweighted mean over that type's tiers;
    delta is always base minus optimal.
    """
    if not attack_sets:
        raise EvalError("forgetting_eval needs at least one attack set")
    _check_dims(base_state, adapted_state)

    tier_rows: list[AttackResult] = []
    for aset in attack_sets:
        base_cos, adapted_cos = _pair_cosines(aset.pairs, base_state, adapted_state)
        tier_rows.append(
            AttackResult.from_means(
                aset.attack_type,
                aset.tier,
                len(aset.pairs),
                float(np.mean(base_cos)),
                float(np.mean(adapted_cos)),
            )
        )

    by_type: dict[str, AttackResult] = {}
    for attack_type in dict.fromkeys(r.attack_type for r in tier_rows):
        rows = [r for r in tier_rows if r.attack_type == attack_type]
        by_type[attack_type] = AttackResult.from_means(
            attack_type,
            "all",
            sum(r.n_pairs for r in rows),
            float(np.mean([r.base_cos for r in rows])),
            float(np.mean([r.optimal_cos for r in rows])),
        )
    return ForgettingReport(tiers=tuple(tier_rows), by_type=by_type)


def preservation_eval(
    base_state: EncoderState,
    adapted_state: EncoderState,
    preservation_sets: Mapping[str, Sequence[ExamplePair]],
) -> PreservationReport:
    """Mean cosines and absolute drift for the four preservation cases."""
    missing = [c for c in PRESERVATION_CASES if not preservation_sets.get(c)]
    if missing:
        raise EvalError(f"preservation cases missing or empty: {', '.join(missing)}")
    _check_dims(base_state, adapted_state)

    cases: dict[str, PreservationResult] = {}
    for case in PRESERVATION_CASES:
        pairs = preservation_sets[case]
        base_cos, adapted_cos = _pair_cosines(pairs, base_state, adapted_state)
        base_mean = float(np.mean(base_cos))
        adapted_mean = float(np.mean(adapted_cos))
        cases[case] = PreservationResult(
            case=case,
            n_pairs=len(pairs),
            base_cos=base_mean,
            optimal_cos=adapted_mean,
            abs_drift=abs(adapted_mean - base_mean),
        )
    return PreservationReport(cases=cases)


def anchor_drift(
    base_state: EncoderState,
    adapted_state: EncoderState,
    anchors: Sequence[ExamplePair],
) -> float:
    """Mean embedding movement (1 - cosine to base) over anchors, both towers."""
    if not anchors:
        raise EvalError("anchor_drift needs a non-empty anchor set")
    _check_dims(base_state, adapted_state)
    rb = featurize_pairs(anchors, base_state.config)
    total = 0.0
    for x, modality in ((rb.text, "text"), (rb.image, "image")):
        base_e = batch_embed(x, tower_weight(base_state, modality, "base"))[2]
        adapted_e = batch_embed(x, tower_weight(adapted_state, modality, "adapted"))[2]
        total += float(np.sum(1.0 - batch_cosine(adapted_e, base_e)))
    return total / (2 * len(anchors))


def disjointness_audit(corpus: Corpus) -> tuple[str, ...]:
    """Names every eval pair that also appears in the training corpus."""
    train_ids = {}
    for role, pairs in corpus.train.items():
        for pair in pairs:
            train_ids.setdefault(pair_identity(pair), role)
    violations = []
    eval_groups = [(f"attack {atype}/{tier}", pairs) for (atype, tier), pairs in corpus.attacks.items()]
    eval_groups += [(f"preservation {case}", pairs) for case, pairs in corpus.preservation.items()]
    for group, pairs in eval_groups:
        for pair in pairs:
            role = train_ids.get(pair_identity(pair))
            if role is not None:
                violations.append(f"{group}: pair {pair.caption!r} also trains role {role!r}")
    return tuple(violations)


# --- ablation -------------------------------------------------------------------


@dataclass(frozen=True)
class AblationVariant:
    name: str
    overrides: Mapping[str, float] = field(default_factory=dict)


DEFAULT_VARIANTS: tuple[AblationVariant, ...] = (
    AblationVariant(
        "baseline",
        {"alpha": 0.0, "beta": 0.0, "delta": 0.0, "gamma": 0.0, "lambda_adv": 0.0},
    ),
    AblationVariant("full", {}),
    AblationVariant("minus-lc", {"gamma": 0.0}),
    AblationVariant("minus-ladv", {"lambda_adv": 0.0}),
)


@dataclass(frozen=True)
class VariantResult:
    name: str
    weights: LossWeights
    forgetting: ForgettingReport
    preservation: PreservationReport
    anchor_drift: float

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "weights": self.weights.to_dict(),
            "forgetting": self.forgetting.to_dict(),
            "preservation": self.preservation.to_dict(),
            "anchor_drift": self.anchor_drift,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "VariantResult":
        return cls(
            name=str(raw["name"]),
            weights=LossWeights.from_dict(raw["weights"]),
            forgetting=ForgettingReport.from_dict(raw["forgetting"]),
            preservation=PreservationReport.from_dict(raw["preservation"]),
            anchor_drift=float(raw["anchor_drift"]),
        )


@dataclass(frozen=True)
class AblationReport:
    variants: tuple[VariantResult, ...]

    def get(self, name: str) -> VariantResult:
        for variant in self.variants:
            if variant.name == name:
                return variant
        raise EvalError(f"no ablation variant named {name!r}")

    def to_dict(self) -> dict:
        return {"variants": [v.to_dict() for v in self.variants]}

    @classmethod
    def from_dict(cls, raw: Mapping) -> "AblationReport":
        return cls(variants=tuple(VariantResult.from_dict(v) for v in raw["variants"]))


def ablation_run(
    graph: RelationGraph,
    corpus: Corpus,
    weights: LossWeights,
    train_config: TrainConfig,
    variants: Sequence[AblationVariant] = DEFAULT_VARIANTS,
    encoder_config: EncoderConfig | None = None,
) -> AblationReport:
    """Train every variant from identical initial adapters and evaluate alike."""
    names = {v.name for v in variants}
    if not {"baseline", "full"} <= names:
        raise EvalError("ablation variants must include 'baseline' and 'full'")
    report = validate(graph)
    if not report.ok:
        raise EvalError("invalid graph: " + "; ".join(report.violations))

    initial = new_state(encoder_config or EncoderConfig())
    attack_sets = attack_sets_from_corpus(corpus)
    anchors = corpus.train.get("anchor", ())

    results = []
    for variant in variants:
        variant_weights = LossWeights.from_dict({**weights.to_dict(), **dict(variant.overrides)})
        state = copy_state(initial)
        state, _ = train(state, corpus, variant_weights, train_config)
        results.append(
            VariantResult(
                name=variant.name,
                weights=variant_weights,
                forgetting=forgetting_eval(initial, state, attack_sets),
                preservation=preservation_eval(initial, state, corpus.preservation),
                anchor_drift=anchor_drift(initial, state, anchors),
            )
        )
    return AblationReport(variants=tuple(results))


# --- report emission --------------------------------------------------------------


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def _forgetting_table(report: ForgettingReport) -> str:
    lines = ["Attack\tBase Cosine\tOptimal Cosine\tDelta Cos"]
    for attack_type, row in report.by_type.items():
        lines.append(
            "\t".join((attack_type, _fmt(row.base_cos), _fmt(row.optimal_cos), _fmt(row.delta_cos)))
        )
    return "\n".join(lines) + "\n"


def _preservation_table(report: PreservationReport) -> str:
    lines = ["Case\tBase Cosine\tOptimal Cosine\tAbs Drift"]
    for case, row in report.cases.items():
        lines.append(
            "\t".join((case, _fmt(row.base_cos), _fmt(row.optimal_cos), _fmt(row.abs_drift)))
        )
    return "\n".join(lines) + "\n"


def _ablation_table(report: AblationReport) -> str:
    header = (
        "Variant\tParaphrase Delta\tContextual Delta\tOOD Delta"
        "\tMean Preservation Drift\tAnchor Drift"
    )
    lines = [header]
    for variant in report.variants:
        deltas = []
        for attack_type in ATTACK_TYPES:
            row = variant.forgetting.by_type.get(attack_type)
            deltas.append("-" if row is None else _fmt(row.delta_cos))
        lines.append(
            "\t".join(
                [variant.name]
                + deltas
                + [_fmt(variant.preservation.mean_abs_drift), _fmt(variant.anchor_drift)]
            )
        )
    return "\n".join(lines) + "\n"


def emit_report(reports: Mapping[str, object], out_dir: str | Path) -> list[Path]:
    """Write the structured report plus flat tables and plot-ready data.

    Known keys: ``forgetting``, ``preservation``, ``ablation``,
    ``loss_curve`` (a list of LossBreakdown records), and ``extra`` (any
    JSON-serializable object folded into report.json).
    """
    if not reports:
        raise EvalError("no reports to emit")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    doc: dict = {}

    forgetting = reports.get("forgetting")
    if forgetting is not None:
        path = out_dir / "forgetting.tsv"
        path.write_text(_forgetting_table(forgetting), encoding="utf-8")
        written.append(path)
        doc["forgetting"] = forgetting.to_dict()

    preservation = reports.get("preservation")
    if preservation is not None:
        path = out_dir / "preservation.tsv"
        path.write_text(_preservation_table(preservation), encoding="utf-8")
        written.append(path)
        doc["preservation"] = preservation.to_dict()

    ablation = reports.get("ablation")
    if ablation is not None:
        path = out_dir / "ablation.tsv"
        path.write_text(_ablation_table(ablation), encoding="utf-8")
        written.append(path)
        doc["ablation"] = ablation.to_dict()

    loss_curve = reports.get("loss_curve")
    if loss_curve is not None:
        path = write_loss_log(list(loss_curve), out_dir / "loss_curve.tsv")
        written.append(path)
        doc["loss_curve"] = [bd.to_dict() for bd in loss_curve]

    extra = reports.get("extra")
    if extra is not None:
        doc["extra"] = extra

    unknown = set(reports) - {"forgetting", "preservation", "ablation", "loss_curve", "extra"}
    if unknown:
        raise EvalError(f"unknown report keys: {sorted(unknown)}")
    if not doc:
        raise EvalError("no recognized reports to emit")

    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    written.append(json_path)
    return written

"""Relation-aware safety unlearning on a frozen toy dual encoder."""

from .corpus import (
    Corpus,
    CorpusConfig,
    ExamplePair,
    SceneDescriptor,
    contextual_variant,
    generate_corpus,
    import_manifest,
    ood_scene,
    paraphrase_variants,
)
from .encoder import (
    Embedding,
    EncoderConfig,
    EncoderState,
    FeatureVector,
    LoraAdapter,
    cosine,
    effective_weight,
    embed,
    featurize_image,
    featurize_text,
    init_lora,
    new_state,
)
from .evaluate import (
    AblationReport,
    AttackSet,
    ForgettingReport,
    PreservationReport,
    ablation_run,
    build_attack_suite,
    emit_report,
    forgetting_eval,
    preservation_eval,
)
from .graph import (
    GraphSpec,
    RelationGraph,
    assign_roles,
    build_unlearn_graph,
    emit_graph,
    parse_graph,
    validate,
)
from .losses import (
    GradientSet,
    LossBreakdown,
    LossWeights,
    consistency_loss,
    grad_check,
    pull_loss,
    push_loss,
    total_loss,
)
from .trainer import (
    OptimizerState,
    TrainConfig,
    TrainLog,
    load_checkpoint,
    make_batches,
    save_checkpoint,
    step,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AblationReport",
    "AttackSet",
    "Corpus",
    "CorpusConfig",
    "Embedding",
    "EncoderConfig",
    "EncoderState",
    "ExamplePair",
    "FeatureVector",
    "ForgettingReport",
    "GradientSet",
    "GraphSpec",
    "LoraAdapter",
    "LossBreakdown",
    "LossWeights",
    "OptimizerState",
    "PreservationReport",
    "RelationGraph",
    "SceneDescriptor",
    "TrainConfig",
    "TrainLog",
    "ablation_run",
    "assign_roles",
    "build_attack_suite",
    "build_unlearn_graph",
    "consistency_loss",
    "contextual_variant",
    "cosine",
    "effective_weight",
    "embed",
    "emit_graph",
    "emit_report",
    "featurize_image",
    "featurize_text",
    "forgetting_eval",
    "generate_corpus",
    "grad_check",
    "import_manifest",
    "init_lora",
    "load_checkpoint",
    "make_batches",
    "new_state",
    "ood_scene",
    "paraphrase_variants",
    "parse_graph",
    "preservation_eval",
    "pull_loss",
    "push_loss",
    "save_checkpoint",
    "step",
    "total_loss",
    "train",
    "validate",
]

"""Deterministic synthesis of role-tagged caption/scene pairs.

Every loss term and every evaluation case gets its own pair set, all derived
from the relation graph plus a seed. No external data or services: captions
come from templates and a synonym table, scenes are symbolic descriptors the
encoder featurizes on demand. Precomputed feature vectors can be brought in
through the embedding manifest instead.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

from .graph import NodeRole, RelationGraph, assign_roles, slugify, validate
from .lexicon import (
    ADJECTIVES,
    CONTEXT_TAGS,
    CONTEXT_TEMPLATES,
    DEFAULT_NEUTRAL_EDGES,
    DEFAULT_NEUTRAL_OBJECTS,
    EDGE_TEMPLATES,
    NEUTRAL_STYLE,
    NODE_TEMPLATES,
    PARAPHRASE_FRAMES,
    STYLES,
    SYNONYMS,
    TRAIN_CONTEXT_TAGS,
)

REGISTERED_CONTEXT_TAGS = CONTEXT_TAGS + TRAIN_CONTEXT_TAGS


class CorpusError(ValueError):
    """Raised for invalid corpus configs, unknown tags, or malformed manifests."""


TRAIN_ROLES = ("l1", "l2", "l3", "l4", "adv", "anchor")

ATTACK_TYPES = ("paraphrase", "contextual", "ood_image")
ATTACK_TIER = {"paraphrase": "easy", "contextual": "medium", "ood_image": "hard"}

CASE_SINGLE_NODE = "single-node"
CASE_NEW_SAFE_EDGE = "new-safe-edge"
CASE_NEW_SAFE_NODE = "new-safe-node"
CASE_NEW_NEUTRAL_EDGE = "new-neutral-edge"
PRESERVATION_CASES = (
    CASE_SINGLE_NODE,
    CASE_NEW_SAFE_EDGE,
    CASE_NEW_SAFE_NODE,
    CASE_NEW_NEUTRAL_EDGE,
)

# Distinct paraphrase captions generated for the adversarial training role;
# beyond this the captions cycle (scenes still vary by noise seed).
ADV_CAPTION_CAP = 64

DEFAULT_TRAIN_COUNT = 1600
DEFAULT_EVAL_COUNT = 48


@dataclass(frozen=True)
class SceneDescriptor:
    objects: tuple[str, ...]
    relation: str | None
    context_tags: tuple[str, ...] = ()
    style_tag: str = NEUTRAL_STYLE
    noise_seed: int = 0

    def __post_init__(self) -> None:
        if not self.objects:
            raise CorpusError("scene needs at least one object")
        if self.style_tag not in STYLES:
            raise CorpusError(f"unknown style {self.style_tag!r}")


@dataclass(frozen=True)
class ExamplePair:
    caption: str
    scene: SceneDescriptor | None
    loss_role: str
    source_element: str
    text_vec: tuple[float, ...] | None = None
    image_vec: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if not self.caption.strip():
            raise CorpusError("caption must be non-empty")
        if self.scene is None and (self.text_vec is None or self.image_vec is None):
            raise CorpusError("pair needs either a scene or precomputed vectors")


def pair_identity(pair: ExamplePair) -> tuple:
    """Equality key used for the train/eval disjointness audit."""
    return (pair.caption, pair.scene, pair.text_vec, pair.image_vec)


@dataclass(frozen=True)
class Corpus:
    train: dict[str, tuple[ExamplePair, ...]]
    attacks: dict[tuple[str, str], tuple[ExamplePair, ...]]
    preservation: dict[str, tuple[ExamplePair, ...]]

    def train_pairs(self) -> tuple[ExamplePair, ...]:
        return tuple(itertools.chain.from_iterable(self.train.values()))

    def eval_pairs(self) -> tuple[ExamplePair, ...]:
        return tuple(
            itertools.chain(
                itertools.chain.from_iterable(self.attacks.values()),
                itertools.chain.from_iterable(self.preservation.values()),
            )
        )


def default_counts(n: int = DEFAULT_TRAIN_COUNT) -> dict[str, int]:
    return {role: n for role in TRAIN_ROLES}


@dataclass(frozen=True)
class CorpusConfig:
    counts: Mapping[str, int] = field(default_factory=default_counts)
    eval_count: int = DEFAULT_EVAL_COUNT
    seed: int = 7
    neutral_edges: tuple[tuple[str, str, str], ...] = DEFAULT_NEUTRAL_EDGES
    neutral_objects: tuple[str, ...] = DEFAULT_NEUTRAL_OBJECTS

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "eval_count": self.eval_count,
            "seed": self.seed,
            "neutral_edges": [list(e) for e in self.neutral_edges],
            "neutral_objects": list(self.neutral_objects),
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "CorpusConfig":
        base = cls()
        return cls(
            counts={str(k): int(v) for k, v in raw.get("counts", base.counts).items()},
            eval_count=int(raw.get("eval_count", base.eval_count)),
            seed=int(raw.get("seed", base.seed)),
            neutral_edges=tuple(
                (str(s), str(r), str(o)) for s, r, o in raw.get("neutral_edges", base.neutral_edges)
            ),
            neutral_objects=tuple(str(o) for o in raw.get("neutral_objects", base.neutral_objects)),
        )


# --- caption synthesis -----------------------------------------------------


def _edge_caption(subject: str, relation: str, obj: str, variation: int) -> str:
    template = EDGE_TEMPLATES[variation % len(EDGE_TEMPLATES)]
    return template.format(s=subject, r=relation, o=obj)


def _node_caption(label: str, variation: int) -> str:
    template = NODE_TEMPLATES[variation % len(NODE_TEMPLATES)]
    adjective = ADJECTIVES[(variation // len(NODE_TEMPLATES)) % len(ADJECTIVES)]
    return template.format(adj=adjective, o=label)


def canonical_unsafe_caption(graph: RelationGraph) -> str:
    ft = graph.forget_tuple
    return f"{graph.node(ft.o1).label} {ft.relation} a {graph.node(ft.o2).label}"


_MAX_KEY_TOKENS = max(len(key.split()) for key in SYNONYMS)


def _substitute(tokens: list[str], choose) -> str:
    """Greedy longest-match phrase substitution over whitespace tokens."""
    out: list[str] = []
    i = 0
    while i < len(tokens):
        matched = False
        for width in range(min(_MAX_KEY_TOKENS, len(tokens) - i), 0, -1):
            phrase = " ".join(tokens[i : i + width]).lower()
            if phrase in SYNONYMS:
                out.append(choose(phrase, SYNONYMS[phrase]))
                i += width
                matched = True
                break
        if not matched:
            out.append(tokens[i])
            i += 1
    return " ".join(out)


def paraphrase_variants(caption: str, n: int, seed: int) -> list[str]:
    """Seeded paraphrases of a caption; never includes the caption itself.

    The first variant is the canonical one: every known word or phrase
    replaced by its primary synonym. Later variants mix synonym choices and
    sentence frames.
    """
    if n < 1:
        raise CorpusError(f"paraphrase count must be >= 1, got {n}")
    tokens = caption.split()
    if not tokens:
        raise CorpusError("caption must be non-empty")

    variants: list[str] = []
    seen = {caption}
    primary = _substitute(tokens, lambda key, options: options[0])
    if primary not in seen:
        variants.append(primary)
        seen.add(primary)

    draw = 0
    attempts = 0
    max_attempts = 200 * n + 100
    while len(variants) < n:
        attempts += 1
        if attempts > max_attempts:
            raise CorpusError(
                f"cannot derive {n} distinct paraphrases of {caption!r}; "
                "extend the synonym table"
            )
        rng = random.Random(seed * 1_000_003 + draw)
        draw += 1
        body = _substitute(tokens, lambda key, options: rng.choice((key, *options)))
        frame = PARAPHRASE_FRAMES[rng.randrange(len(PARAPHRASE_FRAMES))]
        candidate = frame.format(p=body)
        if candidate in seen:
            continue
        seen.add(candidate)
        variants.append(candidate)
    return variants


def contextual_variant(
    caption: str,
    context_tag: str,
    seed: int,
    scene: SceneDescriptor | None = None,
) -> ExamplePair:
    """Embed a caption (and optionally its scene) in a registered context."""
    if context_tag not in REGISTERED_CONTEXT_TAGS:
        raise CorpusError(f"unknown context tag {context_tag!r}")
    rng = random.Random(seed)
    template = CONTEXT_TEMPLATES[rng.randrange(len(CONTEXT_TEMPLATES))]
    framed = template.format(p=caption, c=context_tag)
    framed_scene = None
    if scene is not None:
        framed_scene = replace(scene, context_tags=scene.context_tags + (context_tag,))
    return ExamplePair(
        caption=framed,
        scene=framed_scene,
        loss_role="adv",
        source_element="contextual",
    )


def ood_scene(scene: SceneDescriptor, style_tag: str) -> SceneDescriptor:
    """Swap only the rendering style; objects, relation, and context stay."""
    if style_tag not in STYLES:
        raise CorpusError(f"unknown style {style_tag!r}")
    return replace(scene, style_tag=style_tag)


# --- corpus generation -----------------------------------------------------


def generate_corpus(graph: RelationGraph, config: CorpusConfig) -> Corpus:
    """Synthesize train and eval pair sets for a validated graph.

    Pure function of (graph, config): identical inputs give identical
    corpora. Training scenes draw even noise seeds, evaluation scenes odd
    ones, which keeps the two sides disjoint by construction; the result is
    audited anyway before returning.
    """
    report = validate(graph)
    if not report.ok:
        raise CorpusError("invalid graph: " + "; ".join(report.violations))
    assignment = assign_roles(graph)

    counts = dict(config.counts)
    for role in TRAIN_ROLES:
        if counts.get(role, 0) < 1:
            raise CorpusError(f"role {role!r} needs a count >= 1, got {counts.get(role, 0)}")
    if config.eval_count < 1:
        raise CorpusError(f"eval_count must be >= 1, got {config.eval_count}")

    def node_label(node_id: str) -> str:
        return graph.node(node_id).label

    edge_by_id = {e.id: e for e in graph.edges}
    forget_edge = graph.forget_edge
    unsafe_subject = node_label(forget_edge.subject_id)
    unsafe_object = node_label(forget_edge.object_id)
    safe_edges = [edge_by_id[eid] for eid in assignment.l1_edges]
    l2_labels = [(node_label(nid), nid) for nid in assignment.l2_nodes]
    endpoint_labels = [
        (node_label(forget_edge.subject_id), forget_edge.subject_id),
        (node_label(forget_edge.object_id), forget_edge.object_id),
    ]
    neighbor_labels = [
        (n.label, n.id) for n in graph.nodes if n.role == NodeRole.PRESERVATION_NEIGHBOR
    ]

    # Neutral content: graph-resident neutral edges plus config-level entries.
    neutral_edges: list[tuple[str, str, str, str]] = [
        (node_label(e.subject_id), e.relation, node_label(e.object_id), e.id)
        for e in (edge_by_id[eid] for eid in assignment.l4_edges)
    ]
    neutral_edges += [
        (s, r, o, f"neutral:{slugify(s)}-{slugify(r)}-{slugify(o)}")
        for s, r, o in config.neutral_edges
    ]
    neutral_objects = [(o, f"neutral:{slugify(o)}") for o in config.neutral_objects]
    if not neutral_edges and not neutral_objects:
        raise CorpusError("no neutral concepts configured for role 'l4'")
    if not neutral_edges:
        raise CorpusError(f"preservation case {CASE_NEW_NEUTRAL_EDGE!r} needs a neutral edge")

    seed_base = config.seed * 1_000_000_007
    train_counter = itertools.count()
    eval_counter = itertools.count()

    def train_scene(objects: tuple[str, ...], relation: str | None) -> SceneDescriptor:
        return SceneDescriptor(
            objects=objects,
            relation=relation,
            noise_seed=seed_base + 2 * next(train_counter),
        )

    def eval_scene(
        objects: tuple[str, ...],
        relation: str | None,
        context_tags: tuple[str, ...] = (),
        style_tag: str = NEUTRAL_STYLE,
    ) -> SceneDescriptor:
        return SceneDescriptor(
            objects=objects,
            relation=relation,
            context_tags=context_tags,
            style_tag=style_tag,
            noise_seed=seed_base + 2 * next(eval_counter) + 1,
        )

    def edge_pair(edge_item: tuple[str, str, str, str], variation: int, role: str, scene_fn) -> ExamplePair:
        subject, relation, obj, source = edge_item
        return ExamplePair(
            caption=_edge_caption(subject, relation, obj, variation),
            scene=scene_fn((subject, obj), relation),
            loss_role=role,
            source_element=source,
        )

    def node_pair(label: str, source: str, variation: int, role: str, scene_fn) -> ExamplePair:
        return ExamplePair(
            caption=_node_caption(label, variation),
            scene=scene_fn((label,), None),
            loss_role=role,
            source_element=source,
        )

    def cycle_edges(items, count: int, role: str, scene_fn) -> tuple[ExamplePair, ...]:
        return tuple(
            edge_pair(items[i % len(items)], i // len(items), role, scene_fn)
            for i in range(count)
        )

    def cycle_nodes(items, count: int, role: str, scene_fn) -> tuple[ExamplePair, ...]:
        return tuple(
            node_pair(items[i % len(items)][0], items[i % len(items)][1], i // len(items), role, scene_fn)
            for i in range(count)
        )

    unsafe_edge_item = (unsafe_subject, forget_edge.relation, unsafe_object, forget_edge.id)
    safe_edge_items = [
        (node_label(e.subject_id), e.relation, node_label(e.object_id), e.id) for e in safe_edges
    ]

    train: dict[str, tuple[ExamplePair, ...]] = {}
    train["l1"] = cycle_edges(safe_edge_items, counts["l1"], "l1", train_scene)
    train["l2"] = cycle_nodes(l2_labels, counts["l2"], "l2", train_scene)
    train["l3"] = cycle_edges([unsafe_edge_item], counts["l3"], "l3", train_scene)

    neutral_items = [("edge", item) for item in neutral_edges] + [
        ("node", item) for item in neutral_objects
    ]
    l4_pairs = []
    for i in range(counts["l4"]):
        kind, item = neutral_items[i % len(neutral_items)]
        variation = i // len(neutral_items)
        if kind == "edge":
            l4_pairs.append(edge_pair(item, variation, "l4", train_scene))
        else:
            l4_pairs.append(node_pair(item[0], item[1], variation, "l4", train_scene))
    train["l4"] = tuple(l4_pairs)

    # Paraphrase pool: held-out attack captions first, then the training slice.
    canonical = canonical_unsafe_caption(graph)
    pool_size = config.eval_count + min(counts["adv"], ADV_CAPTION_CAP)
    pool = paraphrase_variants(canonical, pool_size, config.seed)
    attack_captions = pool[: config.eval_count]
    adv_captions = pool[config.eval_count :]

    # Adversarial training alternates paraphrases of the unsafe caption with
    # contextual embeddings of it (training tags only; the attack suite keeps
    # its own tags, so contextual evaluation stays held out).
    adv_pairs = []
    for i in range(counts["adv"]):
        if i % 2 == 0:
            adv_pairs.append(
                ExamplePair(
                    caption=adv_captions[(i // 2) % len(adv_captions)],
                    scene=train_scene((unsafe_subject, unsafe_object), forget_edge.relation),
                    loss_role="adv",
                    source_element=forget_edge.id,
                )
            )
        else:
            tag = TRAIN_CONTEXT_TAGS[(i // 2) % len(TRAIN_CONTEXT_TAGS)]
            scene = train_scene((unsafe_subject, unsafe_object), forget_edge.relation)
            pair = contextual_variant(canonical, tag, seed=config.seed * 52_711 + i, scene=scene)
            adv_pairs.append(replace(pair, source_element=forget_edge.id))
    train["adv"] = tuple(adv_pairs)

    # Anchors: safe and neutral content only; they exist to hold the adapted
    # encoder near the base encoder, so the unsafe tuple stays out.
    anchor_items: list[tuple[str, object]] = (
        [("edge", item) for item in safe_edge_items]
        + [("node", item) for item in l2_labels]
        + neutral_items
    )
    anchor_pairs = []
    for i in range(counts["anchor"]):
        kind, item = anchor_items[i % len(anchor_items)]
        variation = i // len(anchor_items)
        if kind == "edge":
            anchor_pairs.append(edge_pair(item, variation, "anchor", train_scene))
        else:
            anchor_pairs.append(node_pair(item[0], item[1], variation, "anchor", train_scene))
    train["anchor"] = tuple(anchor_pairs)

    # --- evaluation-only sets ---
    attacks: dict[tuple[str, str], tuple[ExamplePair, ...]] = {}
    attacks[("paraphrase", ATTACK_TIER["paraphrase"])] = tuple(
        ExamplePair(
            caption=caption,
            scene=eval_scene((unsafe_subject, unsafe_object), forget_edge.relation),
            loss_role="adv",
            source_element=forget_edge.id,
        )
        for caption in attack_captions
    )

    contextual_pairs = []
    for i in range(config.eval_count):
        tag = CONTEXT_TAGS[i % len(CONTEXT_TAGS)]
        scene = eval_scene(
            (unsafe_subject, unsafe_object), forget_edge.relation, context_tags=()
        )
        pair = contextual_variant(canonical, tag, seed=config.seed * 92_821 + i, scene=scene)
        contextual_pairs.append(replace(pair, source_element=forget_edge.id))
    attacks[("contextual", ATTACK_TIER["contextual"])] = tuple(contextual_pairs)

    ood_styles = [s for s in STYLES if s != NEUTRAL_STYLE]
    attacks[("ood_image", ATTACK_TIER["ood_image"])] = tuple(
        ExamplePair(
            caption=canonical,
            scene=ood_scene(
                eval_scene((unsafe_subject, unsafe_object), forget_edge.relation),
                ood_styles[i % len(ood_styles)],
            ),
            loss_role="adv",
            source_element=forget_edge.id,
        )
        for i in range(config.eval_count)
    )

    preservation: dict[str, tuple[ExamplePair, ...]] = {}
    preservation[CASE_SINGLE_NODE] = cycle_nodes(
        endpoint_labels, config.eval_count, "l2", eval_scene
    )
    preservation[CASE_NEW_SAFE_EDGE] = cycle_edges(
        safe_edge_items, config.eval_count, "l1", eval_scene
    )
    preservation[CASE_NEW_SAFE_NODE] = cycle_nodes(
        neighbor_labels, config.eval_count, "l2", eval_scene
    )
    preservation[CASE_NEW_NEUTRAL_EDGE] = cycle_edges(
        neutral_edges, config.eval_count, "l4", eval_scene
    )

    corpus = Corpus(train=train, attacks=attacks, preservation=preservation)
    overlap = {pair_identity(p) for p in corpus.train_pairs()} & {
        pair_identity(p) for p in corpus.eval_pairs()
    }
    if overlap:
        raise CorpusError(f"internal error: {len(overlap)} pairs shared between train and eval")
    return corpus


# --- corpus JSON (full-fidelity save/load) ----------------------------------


def _pair_to_dict(pair: ExamplePair) -> dict:
    scene = None
    if pair.scene is not None:
        scene = {
            "objects": list(pair.scene.objects),
            "relation": pair.scene.relation,
            "context_tags": list(pair.scene.context_tags),
            "style_tag": pair.scene.style_tag,
            "noise_seed": pair.scene.noise_seed,
        }
    return {
        "caption": pair.caption,
        "scene": scene,
        "loss_role": pair.loss_role,
        "source_element": pair.source_element,
        "text_vec": None if pair.text_vec is None else list(pair.text_vec),
        "image_vec": None if pair.image_vec is None else list(pair.image_vec),
    }


def _pair_from_dict(raw: Mapping, where: str) -> ExamplePair:
    try:
        scene = None
        if raw.get("scene") is not None:
            s = raw["scene"]
            scene = SceneDescriptor(
                objects=tuple(str(o) for o in s["objects"]),
                relation=None if s["relation"] is None else str(s["relation"]),
                context_tags=tuple(str(t) for t in s.get("context_tags", ())),
                style_tag=str(s.get("style_tag", NEUTRAL_STYLE)),
                noise_seed=int(s.get("noise_seed", 0)),
            )
        return ExamplePair(
            caption=str(raw["caption"]),
            scene=scene,
            loss_role=str(raw["loss_role"]),
            source_element=str(raw["source_element"]),
            text_vec=None if raw.get("text_vec") is None else tuple(float(x) for x in raw["text_vec"]),
            image_vec=None if raw.get("image_vec") is None else tuple(float(x) for x in raw["image_vec"]),
        )
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"{where}: malformed pair ({exc})") from exc


def emit_corpus(corpus: Corpus) -> str:
    doc = {
        "train": {role: [_pair_to_dict(p) for p in pairs] for role, pairs in corpus.train.items()},
        "attacks": {
            f"{atype}/{tier}": [_pair_to_dict(p) for p in pairs]
            for (atype, tier), pairs in corpus.attacks.items()
        },
        "preservation": {
            case: [_pair_to_dict(p) for p in pairs] for case, pairs in corpus.preservation.items()
        },
    }
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def parse_corpus(text: str) -> Corpus:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"corpus manifest line {exc.lineno}: {exc.msg}") from exc
    train = {
        str(role): tuple(
            _pair_from_dict(p, f"train[{role}][{i}]") for i, p in enumerate(pairs)
        )
        for role, pairs in doc.get("train", {}).items()
    }
    attacks = {}
    for key, pairs in doc.get("attacks", {}).items():
        atype, _, tier = key.partition("/")
        if not tier:
            raise CorpusError(f"attacks key {key!r} must look like 'type/tier'")
        attacks[(atype, tier)] = tuple(
            _pair_from_dict(p, f"attacks[{key}][{i}]") for i, p in enumerate(pairs)
        )
    preservation = {
        str(case): tuple(
            _pair_from_dict(p, f"preservation[{case}][{i}]") for i, p in enumerate(pairs)
        )
        for case, pairs in doc.get("preservation", {}).items()
    }
    return Corpus(train=train, attacks=attacks, preservation=preservation)


def save_corpus(corpus: Corpus, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(emit_corpus(corpus), encoding="utf-8")
    return path


def load_corpus(path: str | Path) -> Corpus:
    return parse_corpus(Path(path).read_text(encoding="utf-8"))


# --- embedding manifest (the external bridge) --------------------------------

MANIFEST_VERSION_LINE = "# relforget-embedding-manifest v1"


def attack_role_token(attack_type: str, tier: str) -> str:
    return f"attack/{attack_type}/{tier}"


def preservation_role_token(case: str) -> str:
    return f"preserve/{case}"


def write_embedding_manifest(
    rows: Iterable[tuple[str, str, Iterable[float], Iterable[float]]],
    dim: int,
    path: str | Path,
) -> Path:
    """Write `(role_token, caption, text_vec, image_vec)` rows as TSV.

    Format: two comment header lines (version, `# dim=<d>`), then one row per
    pair with tab-separated fields; vectors are comma-joined decimal floats.
    """
    path = Path(path)
    lines = [MANIFEST_VERSION_LINE, f"# dim={dim}"]
    for role, caption, text_vec, image_vec in rows:
        if "\t" in caption or "\n" in caption:
            raise CorpusError(f"caption {caption!r} cannot contain tabs or newlines")
        tvec = [float(x) for x in text_vec]
        ivec = [float(x) for x in image_vec]
        if len(tvec) != dim or len(ivec) != dim:
            raise CorpusError(
                f"vector length mismatch for {caption!r}: got {len(tvec)}/{len(ivec)}, expected {dim}"
            )
        lines.append(
            "\t".join(
                (role, caption, ",".join(repr(x) for x in tvec), ",".join(repr(x) for x in ivec))
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def import_manifest(path: str | Path, expected_dim: int | None = None) -> Corpus:
    """Load externally precomputed feature vectors as a Corpus.

    Role tokens route rows: plain train roles ("l1".."anchor"), attack sets
    ("attack/<type>/<tier>"), and preservation cases ("preserve/<case>").
    """
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()

    dim: int | None = None
    for line in lines:
        if line.startswith("# dim="):
            try:
                dim = int(line.split("=", 1)[1])
            except ValueError as exc:
                raise CorpusError(f"malformed dimension header {line!r}") from exc
            break
    if dim is None:
        raise CorpusError("manifest is missing the '# dim=<d>' header")
    if expected_dim is not None and dim != expected_dim:
        raise CorpusError(
            f"dimension mismatch: manifest declares d={dim}, encoder expects d_in={expected_dim}"
        )

    train: dict[str, list[ExamplePair]] = {}
    attacks: dict[tuple[str, str], list[ExamplePair]] = {}
    preservation: dict[str, list[ExamplePair]] = {}
    n_rows = 0
    for idx, line in enumerate(lines):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise CorpusError(f"row {idx}: expected 4 tab-separated fields, got {len(parts)}")
        role_token, caption, text_raw, image_raw = parts
        try:
            text_vec = tuple(float(x) for x in text_raw.split(","))
            image_vec = tuple(float(x) for x in image_raw.split(","))
        except ValueError as exc:
            raise CorpusError(f"row {idx}: malformed float ({exc})") from exc
        if len(text_vec) != dim or len(image_vec) != dim:
            raise CorpusError(
                f"row {idx}: vector length {len(text_vec)}/{len(image_vec)} does not match dim={dim}"
            )

        if role_token.startswith("attack/"):
            _, _, rest = role_token.partition("/")
            atype, _, tier = rest.partition("/")
            if not tier:
                raise CorpusError(f"row {idx}: attack role token {role_token!r} needs a tier")
            role = "adv"
            bucket = attacks.setdefault((atype, tier), [])
        elif role_token.startswith("preserve/"):
            case = role_token.split("/", 1)[1]
            role = {"single-node": "l2", "new-safe-edge": "l1", "new-safe-node": "l2"}.get(case, "l4")
            bucket = preservation.setdefault(case, [])
        elif role_token in TRAIN_ROLES:
            role = role_token
            bucket = train.setdefault(role_token, [])
        else:
            raise CorpusError(f"row {idx}: unknown role token {role_token!r}")

        bucket.append(
            ExamplePair(
                caption=caption,
                scene=None,
                loss_role=role,
                source_element="external",
                text_vec=text_vec,
                image_vec=image_vec,
            )
        )
        n_rows += 1

    if n_rows == 0:
        raise CorpusError("no examples in manifest")
    return Corpus(
        train={role: tuple(pairs) for role, pairs in train.items()},
        attacks={key: tuple(pairs) for key, pairs in attacks.items()},
        preservation={case: tuple(pairs) for case, pairs in preservation.items()},
    )

"""Command-line front door for reproducible unlearning experiments.

Subcommands: graph, corpus, train, eval, ablate, gradcheck, report. Each run
writes every output under one directory, including a run_manifest.json that
records the fully resolved config; re-running from that manifest reproduces
the outputs byte for byte.

Heavy imports happen inside the command handlers so that ``--threads`` can
cap the BLAS pools before numpy is loaded.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

ENV_OUT_ROOT = "RELFORGET_OUT_ROOT"
DEFAULT_SEED = 7


def _apply_override(raw: dict, item: str) -> None:
    if "=" not in item:
        raise ValueError(f"override {item!r} must look like section.key=value")
    dotted, text = item.split("=", 1)
    keys = dotted.split(".")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ValueError(f"override {item!r} walks through a non-object at {key!r}")
    node[keys[-1]] = value


def _resolve_out_dir(args, command: str, seed: int) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    root = os.environ.get(ENV_OUT_ROOT)
    if root:
        return Path(root) / f"{command}-seed{seed}"
    raise ValueError(f"--out is required (or set ${ENV_OUT_ROOT})")


class _RunBundle:
    """Fully resolved run configuration plus the constructed objects."""

    def __init__(self, resolved: dict, graph) -> None:
        from .corpus import CorpusConfig
        from .encoder import EncoderConfig
        from .losses import LossWeights
        from .trainer import TrainConfig

        self.resolved = resolved
        self.graph = graph
        self.seed = resolved["seed"]
        self.corpus_config = CorpusConfig.from_dict(resolved["corpus"])
        self.weights = LossWeights.from_dict(resolved["weights"])
        self.train_config = TrainConfig.from_dict(resolved["train"])
        self.encoder_config = EncoderConfig.from_dict(resolved["encoder"])


def _resolve_run(args) -> _RunBundle:
    from .corpus import CorpusConfig
    from .encoder import EncoderConfig
    from .graph import GraphSpec, build_unlearn_graph, load_graph, parse_graph
    from .losses import LossWeights
    from .trainer import TrainConfig

    raw: dict = {}
    if getattr(args, "config", None):
        text = Path(args.config).read_text(encoding="utf-8")
        raw = json.loads(text)
        if not isinstance(raw, dict):
            raise ValueError("config file must hold a JSON object")
    for item in getattr(args, "set", None) or []:
        _apply_override(raw, item)
    if getattr(args, "seed", None) is not None:
        raw["seed"] = args.seed

    seed = int(raw.get("seed", DEFAULT_SEED))

    # Exactly one graph source; an explicit --graph flag wins over the config.
    if getattr(args, "graph", None):
        graph = load_graph(args.graph)
    elif raw.get("graph") is not None and raw.get("graph_spec") is not None:
        raise ValueError("config declares both 'graph' and 'graph_spec'; keep exactly one")
    elif raw.get("graph") is not None:
        graph = parse_graph(json.dumps(raw["graph"]))
    elif raw.get("graph_spec") is not None:
        spec_raw = dict(raw["graph_spec"])
        neutral = tuple(tuple(edge) for edge in spec_raw.pop("neutral_edges", []))
        graph = build_unlearn_graph(GraphSpec(neutral_edges=neutral, **spec_raw))
    else:
        raise ValueError("no graph source: pass --graph or put 'graph'/'graph_spec' in the config")

    corpus_raw = dict(raw.get("corpus", {}))
    corpus_raw.setdefault("seed", seed)
    train_raw = dict(raw.get("train", {}))
    train_raw.setdefault("seed", seed)
    if getattr(args, "seed", None) is not None:
        corpus_raw["seed"] = args.seed
        train_raw["seed"] = args.seed

    from .graph import emit_graph

    resolved = {
        "seed": seed,
        "graph": json.loads(emit_graph(graph)),
        "corpus": CorpusConfig.from_dict(corpus_raw).to_dict(),
        "weights": LossWeights.from_dict(raw.get("weights", {})).to_dict(),
        "train": TrainConfig.from_dict(train_raw).to_dict(),
        "encoder": EncoderConfig.from_dict(raw.get("encoder", {})).to_dict(),
    }
    return _RunBundle(resolved, graph)


def _write_run_manifest(bundle: _RunBundle, out_dir: Path) -> Path:
    path = out_dir / "run_manifest.json"
    path.write_text(
        json.dumps(bundle.resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return path


def _load_run_corpus(args, bundle: _RunBundle):
    from .corpus import import_manifest, load_corpus

    corpus_path = getattr(args, "corpus", None)
    if not corpus_path:
        from .corpus import generate_corpus

        return generate_corpus(bundle.graph, bundle.corpus_config)
    if str(corpus_path).endswith(".tsv"):
        return import_manifest(corpus_path, expected_dim=bundle.encoder_config.d_in)
    return load_corpus(corpus_path)


# --- commands ----------------------------------------------------------------


def cmd_graph(args) -> int:
    from .graph import GraphSpec, build_unlearn_graph, save_graph, validate

    neutral = []
    for item in args.neutral_edge:
        parts = [p.strip() for p in item.split(",")]
        if len(parts) != 3 or not all(parts):
            raise ValueError(f"--neutral-edge {item!r} must look like subject,relation,object")
        neutral.append(tuple(parts))
    spec = GraphSpec(
        subject=args.subject,
        relation=args.relation,
        object=args.object,
        subject_neighbor=args.subject_neighbor,
        object_neighbor=args.object_neighbor,
        alternate_relation=args.alt_relation,
        neutral_edges=tuple(neutral),
    )
    graph = build_unlearn_graph(spec)
    report = validate(graph)
    if not report.ok:
        for violation in report.violations:
            print(f"invalid graph: {violation}", file=sys.stderr)
        return 1
    path = save_graph(graph, args.out)
    print(f"wrote {path} ({len(graph.nodes)} nodes, {len(graph.edges)} edges)")
    return 0


def _manifest_rows(corpus, encoder_config):
    from .corpus import attack_role_token, preservation_role_token
    from .encoder import featurize_pair

    for role, pairs in corpus.train.items():
        for pair in pairs:
            text, image = featurize_pair(pair, encoder_config)
            yield role, pair.caption, text, image
    for (atype, tier), pairs in corpus.attacks.items():
        token = attack_role_token(atype, tier)
        for pair in pairs:
            text, image = featurize_pair(pair, encoder_config)
            yield token, pair.caption, text, image
    for case, pairs in corpus.preservation.items():
        token = preservation_role_token(case)
        for pair in pairs:
            text, image = featurize_pair(pair, encoder_config)
            yield token, pair.caption, text, image


def cmd_corpus(args) -> int:
    from .corpus import save_corpus, write_embedding_manifest

    bundle = _resolve_run(args)
    out_dir = _resolve_out_dir(args, "corpus", bundle.seed)
    out_dir.mkdir(parents=True, exist_ok=True)

    from .corpus import generate_corpus

    corpus = generate_corpus(bundle.graph, bundle.corpus_config)
    corpus_path = save_corpus(corpus, out_dir / "corpus.json")
    manifest_path = write_embedding_manifest(
        _manifest_rows(corpus, bundle.encoder_config),
        bundle.encoder_config.d_in,
        out_dir / "features.tsv",
    )
    _write_run_manifest(bundle, out_dir)
    n_train = sum(len(p) for p in corpus.train.values())
    n_eval = len(corpus.eval_pairs())
    print(f"wrote {corpus_path} ({n_train} train pairs, {n_eval} eval pairs)")
    print(f"wrote {manifest_path}")
    return 0


def cmd_train(args) -> int:
    from .encoder import new_state
    from .losses import write_loss_log
    from .trainer import save_checkpoint, train, validate_config

    bundle = _resolve_run(args)
    validate_config(bundle.train_config)
    out_dir = _resolve_out_dir(args, "train", bundle.seed)
    out_dir.mkdir(parents=True, exist_ok=True)

    corpus = _load_run_corpus(args, bundle)
    state = new_state(bundle.encoder_config)
    state, log = train(state, corpus, bundle.weights, bundle.train_config)

    checkpoint_path = save_checkpoint(state, out_dir / "checkpoint.bin")
    write_loss_log(log.steps, out_dir / "loss_curve.tsv")
    _write_run_manifest(bundle, out_dir)

    first, last = log.steps[0], log.steps[-1]
    print(f"trained {len(log.steps)} steps ({log.steps_per_epoch} per epoch)")
    print(f"l3 {first.l3:.4f} -> {last.l3:.4f}, lc {first.lc:.4f} -> {last.lc:.4f}")
    print(f"wrote {checkpoint_path}")
    return 0


def cmd_eval(args) -> int:
    from .encoder import new_state
    from .evaluate import (
        anchor_drift,
        attack_sets_from_corpus,
        disjointness_audit,
        emit_report,
        forgetting_eval,
        preservation_eval,
    )
    from .trainer import load_checkpoint

    bundle = _resolve_run(args)
    out_dir = _resolve_out_dir(args, "eval", bundle.seed)
    out_dir.mkdir(parents=True, exist_ok=True)

    adapted_state, _ = load_checkpoint(args.checkpoint, expected_config=bundle.encoder_config)
    base_state = new_state(bundle.encoder_config)
    corpus = _load_run_corpus(args, bundle)

    violations = disjointness_audit(corpus)
    if violations:
        for violation in violations[:10]:
            print(f"disjointness violation: {violation}", file=sys.stderr)
        return 1

    forgetting = forgetting_eval(base_state, adapted_state, attack_sets_from_corpus(corpus))
    preservation = preservation_eval(base_state, adapted_state, corpus.preservation)
    drift = anchor_drift(base_state, adapted_state, corpus.train.get("anchor", ()))
    emit_report(
        {
            "forgetting": forgetting,
            "preservation": preservation,
            "extra": {"anchor_drift": drift},
        },
        out_dir,
    )
    _write_run_manifest(bundle, out_dir)

    for attack_type, row in forgetting.by_type.items():
        print(
            f"{attack_type}: base {row.base_cos:.4f}, optimal {row.optimal_cos:.4f}, "
            f"delta {row.delta_cos:.4f}"
        )
    print(f"mean preservation drift {preservation.mean_abs_drift:.4f}, anchor drift {drift:.6f}")
    print(f"wrote reports under {out_dir}")
    return 0


def cmd_ablate(args) -> int:
    from .evaluate import DEFAULT_VARIANTS, ablation_run, emit_report

    bundle = _resolve_run(args)
    out_dir = _resolve_out_dir(args, "ablate", bundle.seed)
    out_dir.mkdir(parents=True, exist_ok=True)

    wanted = None
    if args.variants:
        names = [name.strip() for name in args.variants.split(",") if name.strip()]
        by_name = {v.name: v for v in DEFAULT_VARIANTS}
        unknown = [n for n in names if n not in by_name]
        if unknown:
            raise ValueError(f"unknown variants: {', '.join(unknown)}")
        wanted = tuple(by_name[n] for n in names)

    corpus = _load_run_corpus(args, bundle)
    report = ablation_run(
        bundle.graph,
        corpus,
        bundle.weights,
        bundle.train_config,
        variants=wanted or DEFAULT_VARIANTS,
        encoder_config=bundle.encoder_config,
    )
    emit_report({"ablation": report}, out_dir)
    _write_run_manifest(bundle, out_dir)

    for variant in report.variants:
        print(
            f"{variant.name}: mean drift {variant.preservation.mean_abs_drift:.4f}, "
            f"anchor drift {variant.anchor_drift:.6f}"
        )
    print(f"wrote reports under {out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    import numpy as np

    from .encoder import EncoderConfig, RoleBatch, new_state, randomize_adapters
    from .losses import LossWeights, grad_check, total_loss

    config = EncoderConfig(d_in=args.d_in, d_out=args.d_out, rank=args.rank)
    weights = LossWeights()

    def random_batch(seed: int) -> dict[str, RoleBatch]:
        rng = np.random.default_rng(seed)
        batch = {}
        for role in ("l1", "l2", "l3", "l4", "adv", "anchor"):
            text = rng.standard_normal((args.pairs, config.d_in))
            image = rng.standard_normal((args.pairs, config.d_in))
            text /= np.linalg.norm(text, axis=1, keepdims=True)
            image /= np.linalg.norm(image, axis=1, keepdims=True)
            batch[role] = RoleBatch(text=text, image=image)
        return batch

    worst = 0.0
    failed = False
    for seed in range(args.seeds):
        state = new_state(config)
        randomize_adapters(state, seed=seed * 7919 + 13)
        batch = random_batch(seed * 104729 + 1)
        error = grad_check(state, batch, weights, eps=args.eps)
        worst = max(worst, error)
        status = "ok" if error <= args.tol else "FAIL"
        print(f"seed {seed}: max relative error {error:.3e} [{status}]")
        failed = failed or error > args.tol
    print(f"worst over {args.seeds} seeds: {worst:.3e} (tolerance {args.tol:.1e})")
    return 1 if failed else 0


def cmd_report(args) -> int:
    from .evaluate import (
        AblationReport,
        ForgettingReport,
        PreservationReport,
        emit_report,
    )
    from .losses import LossBreakdown

    doc = json.loads(Path(args.report).read_text(encoding="utf-8"))
    reports: dict = {}
    if "forgetting" in doc:
        reports["forgetting"] = ForgettingReport.from_dict(doc["forgetting"])
    if "preservation" in doc:
        reports["preservation"] = PreservationReport.from_dict(doc["preservation"])
    if "ablation" in doc:
        reports["ablation"] = AblationReport.from_dict(doc["ablation"])
    if "loss_curve" in doc:
        reports["loss_curve"] = [LossBreakdown(**row) for row in doc["loss_curve"]]
    if "extra" in doc:
        reports["extra"] = doc["extra"]
    written = emit_report(reports, args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


# --- parser --------------------------------------------------------------------


def _add_run_arguments(sp, with_corpus: bool = True) -> None:
    sp.add_argument("--config", help="run config or run manifest (JSON)")
    sp.add_argument("--graph", help="graph manifest path (overrides the config)")
    sp.add_argument("--seed", type=int, help="master seed (overrides config and sub-seeds)")
    sp.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted config override, e.g. weights.alpha=0.5 or train.epochs=1",
    )
    sp.add_argument("--out", help=f"output directory (default: ${ENV_OUT_ROOT}/<command>-seed<seed>)")
    if with_corpus:
        sp.add_argument(
            "--corpus",
            help="reuse a corpus.json or features.tsv instead of regenerating",
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relforget",
        description="Relation-aware safety unlearning on a toy dual encoder.",
    )
    parser.add_argument("--threads", type=int, help="cap BLAS worker threads")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("graph", help="build and validate a relation-graph manifest")
    g.add_argument("--subject", required=True, help="forget-tuple subject label (O1)")
    g.add_argument("--relation", required=True, help="relation to forget (R1)")
    g.add_argument("--object", required=True, help="forget-tuple object label (O2)")
    g.add_argument("--subject-neighbor", required=True, help="safe substitute for the subject")
    g.add_argument("--object-neighbor", required=True, help="safe substitute for the object")
    g.add_argument("--alt-relation", required=True, help="safe relation between O1 and O2 (R2)")
    g.add_argument("--neutral-edge", action="append", default=[], metavar="S,R,O")
    g.add_argument("--out", required=True, help="output manifest path")
    g.set_defaults(func=cmd_graph)

    c = sub.add_parser("corpus", help="generate the corpus and embedding manifest")
    _add_run_arguments(c, with_corpus=False)
    c.set_defaults(func=cmd_corpus)

    t = sub.add_parser("train", help="train LoRA adapters and write a checkpoint")
    _add_run_arguments(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate forgetting and preservation")
    _add_run_arguments(e)
    e.add_argument("--checkpoint", required=True, help="adapter checkpoint to evaluate")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and compare loss-term ablations")
    _add_run_arguments(a)
    a.add_argument(
        "--variants",
        help="comma-separated subset of: baseline,full,minus-lc,minus-ladv",
    )
    a.set_defaults(func=cmd_ablate)

    gc = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    gc.add_argument("--d-in", type=int, default=16)
    gc.add_argument("--d-out", type=int, default=8)
    gc.add_argument("--rank", type=int, default=2)
    gc.add_argument("--pairs", type=int, default=4, help="pairs per role in the probe batch")
    gc.add_argument("--eps", type=float, default=1e-5)
    gc.add_argument("--seeds", type=int, default=3)
    gc.add_argument("--tol", type=float, default=1e-4)
    gc.set_defaults(func=cmd_gradcheck)

    r = sub.add_parser("report", help="re-emit flat tables from a structured report")
    r.add_argument("--report", required=True, help="path to a report.json")
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

"""Command-line front end.

Subcommands mirror the pipeline stages (ingest, ich, embed, tune, negatives,
train-projector, infer, episodes, viz) plus `pipeline`, which runs the whole
chain from one JSON config. Any subcommand that trains accepts --verbose to
stream per-epoch losses and --seed to override the config seed; unset seeds
fall back to a fixed constant, never to wall-clock state.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .embedding import BallSpace, EmbedConfig, train_embeddings
from .evaluation import GridSpec, grid_search, score_space
from .harness import (REFERENCE_RESULTS, evaluate_episodes,
                      nearest_centroid_accuracy, read_features_csv,
                      sample_episodes)
from .negatives import NegativeSets, build_negative_sets
from .ontology import (OntologyError, compute_ich, compute_stats,
                       load_ontology, validate)
from .pipeline import (DEFAULT_SEED, DESK_EMBED, DESK_PROJECTOR,
                       PipelineConfig, PipelineError, merge_section,
                       run_pipeline, _write_json)
from .projector import Mlp, ProjectorConfig, ancestor_report, mlp_forward, train_base
from .viz import render_balls_2d


def _load_config_sections(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        obj = json.load(fh)
    if not isinstance(obj, dict):
        raise ValueError("config file must hold a JSON object")
    return obj


def _stage_config(sections: dict, name: str, base, seed: int | None):
    raw = dict(sections.get(name, {}))
    if seed is not None:
        raw["seed"] = seed
    else:
        raw.setdefault("seed", int(sections.get("seed", DEFAULT_SEED)))
    return merge_section(base, raw)


def _embed_config(sections: dict, seed: int | None) -> EmbedConfig:
    return _stage_config(sections, "embed", DESK_EMBED, seed)


def _projector_config(sections: dict, seed: int | None) -> ProjectorConfig:
    return _stage_config(sections, "projector", DESK_PROJECTOR, seed)


def _load_space(path) -> BallSpace:
    with open(path) as fh:
        return BallSpace.from_dict(json.load(fh))


def _load_mlp(path) -> Mlp:
    with open(path) as fh:
        return Mlp.from_dict(json.load(fh))


def _load_negatives(path) -> NegativeSets:
    with open(path) as fh:
        return NegativeSets.from_dict(json.load(fh))


def _float_list(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


# ---------------------------------------------------------------------------
# subcommand bodies


def cmd_ingest(args) -> int:
    ontology = load_ontology(args.ontology)
    for diag in validate(ontology):
        print(f"{diag.kind}: {diag.message}")
    print(f"ok: {len(ontology.concepts)} concepts, "
          f"{len(ontology.told_subsumptions)} subsumptions, "
          f"{len(ontology.disjointness)} disjointness pairs, "
          f"{len(ontology.leaves)} leaves")
    if args.out:
        _write_json(Path(args.out), ontology.to_dict())
    return 0


def cmd_ich(args) -> int:
    ontology = load_ontology(args.ontology)
    ich = compute_ich(ontology)
    print(f"closure: {len(ich.pairs)} subsumption pairs")
    if args.out:
        _write_json(Path(args.out), ich.to_dict())
    return 0


def cmd_embed(args) -> int:
    ontology = load_ontology(args.ontology)
    ich = compute_ich(ontology)
    stats = compute_stats(ontology, ich)
    config = _embed_config(_load_config_sections(args.config), args.seed)
    space, history = train_embeddings(ontology, ich, stats, config)
    if args.verbose:
        for i, breakdown in enumerate(history.epochs):
            print(f"epoch {i + 1}: loss {breakdown.total:.6f}")
    scores = score_space(space, ich, ontology.leaves)
    print(f"f1_all {scores.f1_all:.4f}  f1_leaf {scores.f1_leaf:.4f}  "
          f"s_d_fraction {scores.s_d_fraction:.4f}")
    _write_json(Path(args.out), space.to_dict())
    return 0


def cmd_tune(args) -> int:
    ontology = load_ontology(args.ontology)
    ich = compute_ich(ontology)
    stats = compute_stats(ontology, ich)
    base = _embed_config(_load_config_sections(args.config), args.seed)
    grid = GridSpec(gammas=_float_list(args.gammas),
                    psis=_float_list(args.psis),
                    phis=_float_list(args.phis),
                    s_d_threshold=args.s_d_threshold)
    result = grid_search(ontology, ich, stats, grid, base)
    best = result.best_scores
    print(f"best: gamma {result.best_config.gamma} psi {result.best_config.psi} "
          f"phi {result.best_config.phi} -> f1_leaf {best.f1_leaf:.4f}")
    if result.below_threshold:
        print("warning: no grid point met the separation threshold")
    _write_json(Path(args.out), result.to_dict())
    if args.space_out:
        _write_json(Path(args.space_out), result.best_space.to_dict())
    return 0


def cmd_negatives(args) -> int:
    space = _load_space(args.space)
    names = (tuple(args.leaves.split(",")) if args.leaves
             else tuple(space.concepts))
    seed = DEFAULT_SEED if args.seed is None else args.seed
    negatives = build_negative_sets(space, names, k=args.k, seed=seed)
    _write_json(Path(args.out), negatives.to_dict())
    print(f"negative sets for {len(negatives.negatives)} classes")
    return 0


def cmd_train_projector(args) -> int:
    space = _load_space(args.space)
    negatives = _load_negatives(args.negatives)
    features = read_features_csv(args.features, split="base")
    config = _projector_config(_load_config_sections(args.config), args.seed)
    mlp, losses = train_base(features, space, negatives, config)
    if args.verbose:
        for i, value in enumerate(losses):
            print(f"epoch {i + 1}: loss {value:.6f}")
    print(f"final loss {losses[-1]:.6f}" if losses else "no training epochs")
    _write_json(Path(args.out), mlp.to_dict())
    return 0


def cmd_infer(args) -> int:
    space = _load_space(args.space)
    mlp = _load_mlp(args.mlp)
    features = read_features_csv(args.features, split="base")
    if args.candidates:
        names = tuple(args.candidates.split(","))
    else:
        names = tuple(sorted(mlp.trained_labels)) or tuple(space.concepts)
    candidates = [(name, space.ball(name)) for name in names]
    ich = None
    if args.ontology:
        ich = compute_ich(load_ontology(args.ontology))
    from .projector import classify

    rows = []
    outputs = mlp_forward(features.features, mlp)
    for h, truth in zip(outputs, features.labels):
        pred = classify(h, candidates)
        row = {"label": truth, "prediction": pred.label,
               "u": pred.u_value, "inside": pred.inside}
        if ich is not None:
            row["ancestors"] = ancestor_report(h, space, ich)
        rows.append(row)
    hits = sum(r["prediction"] == r["label"] for r in rows)
    print(f"accuracy {hits / len(rows):.4f} over {len(rows)} examples")
    if args.out:
        _write_json(Path(args.out), {"predictions": rows})
    return 0


def cmd_episodes(args) -> int:
    space = _load_space(args.space)
    mlp = _load_mlp(args.mlp)
    novel = read_features_csv(args.novel, split="novel")
    negatives = _load_negatives(args.negatives)
    sections = _load_config_sections(args.config)
    config = _projector_config(sections, args.seed)
    seed = DEFAULT_SEED if args.seed is None else args.seed
    ich = None
    if args.ontology:
        ich = compute_ich(load_ontology(args.ontology))
    episodes = sample_episodes(novel, w=args.w, s=args.s, q=args.q,
                               n_episodes=args.episodes, seed=seed)
    report = evaluate_episodes(space, mlp, episodes, config, negatives, ich=ich)
    baseline = nearest_centroid_accuracy(episodes)
    print(f"accuracy {report.accuracy:.4f} +/- {report.ci95:.4f} "
          f"(baseline {baseline.accuracy:.4f})")
    summary = {
        "episodes": report.to_dict(),
        "baseline_nearest_centroid": baseline.to_dict(),
        "margin_over_baseline": report.accuracy - baseline.accuracy,
        "protocol": {"w": args.w, "s": args.s, "q": args.q,
                     "n_episodes": args.episodes, "seed": seed},
        "reference_results": REFERENCE_RESULTS,
    }
    if args.out:
        _write_json(Path(args.out), summary)
    return 0


def cmd_viz(args) -> int:
    space = _load_space(args.space)
    concepts = (tuple(args.concepts.split(",")) if args.concepts
                else tuple(space.concepts))
    points = labels = None
    if args.points:
        dataset = read_features_csv(args.points, split="base")
        labels = dataset.labels
        if args.mlp:
            points = mlp_forward(dataset.features, _load_mlp(args.mlp))
        elif dataset.dim == space.dim:
            points = dataset.features
        else:
            raise ValueError(
                f"points are {dataset.dim}d but the space is {space.dim}d; "
                "pass --mlp to project them")
    svg = render_balls_2d(space, concepts, points=points, point_labels=labels)
    Path(args.out).write_text(svg)
    print(f"wrote {args.out}")
    return 0


def cmd_pipeline(args) -> int:
    config = PipelineConfig.from_json(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    written = run_pipeline(config, verbose=args.verbose)
    print(f"wrote {len(written)} artifacts to {config.out_dir}")
    return 0


# ---------------------------------------------------------------------------
# parser wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="geoball",
        description="Ontology-guided n-ball embeddings and few-shot evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=None,
                       help="override every stage seed (default: fixed constant)")
        return p

    p = add("ingest", cmd_ingest, "validate an ontology file")
    p.add_argument("ontology")
    p.add_argument("--out", help="write the normalized ontology JSON here")

    p = add("ich", cmd_ich, "compute the inferred class hierarchy")
    p.add_argument("ontology")
    p.add_argument("--out", help="write closure pairs JSON here")

    p = add("embed", cmd_embed, "train n-ball embeddings")
    p.add_argument("ontology")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="pipeline JSON; the embed section is used")
    p.add_argument("--verbose", action="store_true")

    p = add("tune", cmd_tune, "grid-search embedding margins")
    p.add_argument("ontology")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="pipeline JSON; the embed section is used")
    p.add_argument("--gammas", default="-0.2,-0.1,-0.05")
    p.add_argument("--psis", default="0.1,0.3")
    p.add_argument("--phis", default="1.0,2.0")
    p.add_argument("--s-d-threshold", type=float, default=0.95)
    p.add_argument("--space-out", help="also write the winning space here")

    p = add("negatives", cmd_negatives, "build hard-negative sets")
    p.add_argument("space")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--leaves", help="comma-separated class names "
                                    "(default: every concept in the space)")

    p = add("train-projector", cmd_train_projector,
            "base learning for the feature projector")
    p.add_argument("space")
    p.add_argument("negatives")
    p.add_argument("features", help="base-split feature CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="pipeline JSON; the projector section is used")
    p.add_argument("--verbose", action="store_true")

    p = add("infer", cmd_infer, "classify feature vectors against balls")
    p.add_argument("space")
    p.add_argument("mlp")
    p.add_argument("features")
    p.add_argument("--candidates", help="comma-separated candidate classes")
    p.add_argument("--ontology", help="enables ancestor reports")
    p.add_argument("--out")

    p = add("episodes", cmd_episodes, "few-shot episode evaluation")
    p.add_argument("space")
    p.add_argument("mlp")
    p.add_argument("--novel", required=True, help="novel-split feature CSV")
    p.add_argument("--negatives", required=True,
                   help="hard-negative sets JSON (few-shot stage needs them)")
    p.add_argument("--w", type=int, default=5)
    p.add_argument("--s", type=int, default=5)
    p.add_argument("--q", type=int, default=15)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--ontology", help="enables semantic-error accounting")
    p.add_argument("--config", help="pipeline JSON; the projector section is used")
    p.add_argument("--out")

    p = add("viz", cmd_viz, "render selected balls to SVG")
    p.add_argument("space")
    p.add_argument("--out", required=True)
    p.add_argument("--concepts", help="comma-separated (default: all)")
    p.add_argument("--points", help="feature CSV to scatter over the balls")
    p.add_argument("--mlp", help="projector used to map --points into the space")

    p = add("pipeline", cmd_pipeline, "run every stage from one config")
    p.add_argument("--config", required=True)
    p.add_argument("--verbose", action="store_true")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OntologyError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

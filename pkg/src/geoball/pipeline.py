"""End-to-end orchestration: one JSON config in, six artifact files out.

Stages run in dependency order (ingest, embed, negatives, features,
train-projector, episodes). Every stage derives its seed from the global one
unless its config section pins its own, so re-running the same config file
reproduces each artifact byte for byte. A stage failure aborts the run with
the stage name attached; artifacts of completed stages stay on disk, nothing
half-written is left behind.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .embedding import EmbedConfig, train_embeddings
from .evaluation import score_space
from .harness import (
    REFERENCE_RESULTS,
    evaluate_episodes,
    generate_synthetic_features,
    nearest_centroid_accuracy,
    sample_episodes,
    write_features_csv,
)
from .negatives import build_negative_sets
from .ontology import compute_ich, compute_stats, load_ontology
from .projector import ProjectorConfig, train_base

# unset seeds fall back to this constant, never to wall-clock state
DEFAULT_SEED = 0

ARTIFACT_NAMES = (
    "space.json",
    "negatives.json",
    "features_base.csv",
    "features_novel.csv",
    "mlp.json",
    "report.json",
)

# the stock desk fixture: a (5, 2, 4) tree, 40 leaves split 20/20, feature
# noise tuned so the raw nearest-support-centroid baseline lands mid-0.8
DESK_EMBED = EmbedConfig(
    dim=16, gamma=-0.1, disjoint_gamma=0.05, psi=0.3, phi=2.0,
    learning_rate=0.05, lr_decay=0.002, epochs=1500, batch_size=64,
    seed=DEFAULT_SEED, radius_clamp_min=0.4, init_radius_slack=0.1)

DESK_PROJECTOR = ProjectorConfig(
    learning_rate=0.003, epochs_bl=400, epochs_fsl=60, batch_size=64,
    seed=DEFAULT_SEED, optimizer="adam", hidden_sizes=(256,), reduce_dim=12)


@dataclass(frozen=True)
class GeneratorConfig:
    """Synthetic feature source: ambient size, class volume, noise level."""

    dim: int = 2304
    per_class: int = 200
    noise_sigma: float = 1.85
    anchor_scale: float = 3.0
    step_scale: float = 3.0
    intrinsic_dim: int | None = 12

    def __post_init__(self):
        if self.dim < 1 or self.per_class < 1:
            raise ValueError("dim and per_class must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


@dataclass(frozen=True)
class EpisodeConfig:
    w: int = 5
    s: int = 5
    q: int = 15
    n_episodes: int = 100

    def __post_init__(self):
        if min(self.w, self.s, self.q, self.n_episodes) < 1:
            raise ValueError("episode parameters must be >= 1")


def merge_section(base, raw: dict):
    """Relaxed config parsing: unknown keys fail loudly, the rest override
    the base (stock) config through the dataclass constructor checks."""
    allowed = {f.name for f in fields(base)}
    unknown = set(raw) - allowed
    if unknown:
        raise ValueError(
            f"unknown {type(base).__name__} keys: {sorted(unknown)}")
    if "hidden_sizes" in raw:
        raw = {**raw, "hidden_sizes": tuple(raw["hidden_sizes"])}
    return replace(base, **raw)


@dataclass(frozen=True)
class PipelineConfig:
    """Paths plus the per-stage configs; the global seed reaches every stage
    whose section does not pin its own."""

    ontology_path: str
    out_dir: str
    seed: int = DEFAULT_SEED
    embed: EmbedConfig = DESK_EMBED
    projector: ProjectorConfig = DESK_PROJECTOR
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    episodes: EpisodeConfig = field(default_factory=EpisodeConfig)
    negatives_k: int | None = None

    @classmethod
    def from_dict(cls, obj: dict) -> "PipelineConfig":
        """Sections override the stock desk configuration field by field."""
        known = {"ontology_path", "out_dir", "seed", "embed", "projector",
                 "generator", "episodes", "negatives_k"}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        for key in ("ontology_path", "out_dir"):
            if key not in obj:
                raise ValueError(f"pipeline config needs {key!r}")
        seed = int(obj.get("seed", DEFAULT_SEED))

        def section(name, base, seeded=True):
            raw = dict(obj.get(name, {}))
            if seeded:
                raw.setdefault("seed", seed)
            return merge_section(base, raw)

        return cls(
            ontology_path=str(obj["ontology_path"]),
            out_dir=str(obj["out_dir"]),
            seed=seed,
            embed=section("embed", DESK_EMBED),
            projector=section("projector", DESK_PROJECTOR),
            generator=section("generator", GeneratorConfig(), seeded=False),
            episodes=section("episodes", EpisodeConfig(), seeded=False),
            negatives_k=obj.get("negatives_k"),
        )

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Force one seed onto the run and every seeded stage config."""
        return replace(self, seed=seed,
                       embed=replace(self.embed, seed=seed),
                       projector=replace(self.projector, seed=seed))

    def to_dict(self) -> dict:
        def plain(cfg):
            out = {}
            for f in fields(cfg):
                value = getattr(cfg, f.name)
                out[f.name] = list(value) if isinstance(value, tuple) else value
            return out

        return {
            "ontology_path": self.ontology_path,
            "out_dir": self.out_dir,
            "seed": self.seed,
            "embed": plain(self.embed),
            "projector": plain(self.projector),
            "generator": plain(self.generator),
            "episodes": plain(self.episodes),
            "negatives_k": self.negatives_k,
        }


class PipelineError(RuntimeError):
    """Stage failure wrapper so callers can report where a run died."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _write_json(path: Path, obj: dict) -> Path:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    path.write_text(text)
    return path


def run_pipeline(config: PipelineConfig, verbose: bool = False) -> list[Path]:
    """Execute all stages; returns the artifact paths in creation order."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    stage = "ingest"

    def log(msg):
        if verbose:
            print(msg)

    try:
        ontology = load_ontology(config.ontology_path)
        ich = compute_ich(ontology)
        stats = compute_stats(ontology, ich)
        log(f"ingest: {len(ontology.concepts)} concepts, "
            f"{len(ontology.leaves)} leaves")

        stage = "embed"
        space, history = train_embeddings(ontology, ich, stats, config.embed)
        if verbose:
            for i, bd in enumerate(history.epochs):
                print(f"embed epoch {i + 1}: loss {bd.total:.6f}")
        scores = score_space(space, ich, ontology.leaves)
        written.append(_write_json(out / "space.json", space.to_dict()))

        stage = "negatives"
        negatives = build_negative_sets(space, ontology.leaves,
                                        k=config.negatives_k, seed=config.seed)
        written.append(_write_json(out / "negatives.json", negatives.to_dict()))

        stage = "features"
        gen = config.generator
        base, novel = generate_synthetic_features(
            ontology, dim=gen.dim, per_class=gen.per_class,
            noise_sigma=gen.noise_sigma, seed=config.seed,
            anchor_scale=gen.anchor_scale, step_scale=gen.step_scale,
            intrinsic_dim=gen.intrinsic_dim)
        for name, dataset in (("features_base.csv", base),
                              ("features_novel.csv", novel)):
            write_features_csv(dataset, out / name)
            written.append(out / name)
        log(f"features: {len(base.labels)} base / {len(novel.labels)} novel "
            f"examples in {gen.dim}d")

        stage = "train-projector"
        mlp, losses = train_base(base, space, negatives, config.projector)
        if verbose:
            for i, value in enumerate(losses):
                print(f"projector epoch {i + 1}: loss {value:.6f}")
        written.append(_write_json(out / "mlp.json", mlp.to_dict()))

        stage = "episodes"
        ep = config.episodes
        episodes = sample_episodes(novel, w=ep.w, s=ep.s, q=ep.q,
                                   n_episodes=ep.n_episodes, seed=config.seed)
        report = evaluate_episodes(space, mlp, episodes, config.projector,
                                   negatives, ich=ich)
        baseline = nearest_centroid_accuracy(episodes)
        summary = {
            "embedding_scores": scores.to_dict(),
            "projector_final_loss": losses[-1] if losses else None,
            "episodes": report.to_dict(),
            "baseline_nearest_centroid": baseline.to_dict(),
            "margin_over_baseline": report.accuracy - baseline.accuracy,
            "protocol": {"w": ep.w, "s": ep.s, "q": ep.q,
                         "n_episodes": ep.n_episodes, "seed": config.seed},
            "reference_results": REFERENCE_RESULTS,
        }
        written.append(_write_json(out / "report.json", summary))
        log(f"episodes: accuracy {report.accuracy:.4f} "
            f"(baseline {baseline.accuracy:.4f})")
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(stage, exc) from exc
    return written

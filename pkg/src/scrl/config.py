"""Experiment configuration: a line-oriented ``section.key = value`` file.

Unknown keys, duplicate keys, type mismatches and constraint violations are
errors that name the offending key.  Absent keys fall back to defaults (the
standard pretraining recipe); every applied default is logged and recorded on
the returned config for the run manifest.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .augment import AugmentConfig
from .corpus import SynthesisConfig
from .downstream import BiLstmHeadConfig, MlpHeadConfig
from .encoder import EncoderConfig
from .pretrain import FRAMEWORKS, SslConfig

log = logging.getLogger(__name__)

STRATEGIES = ("sa", "random", "nn", "sc", "soft_sc")


class ConfigError(ValueError):
    """Configuration file or constraint problem; message names the key."""


def _parse_bool(raw: str) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ValueError("expected true or false")


def _parse_int_list(raw: str) -> tuple[int, ...]:
    if not raw:
        return ()
    return tuple(int(t.strip()) for t in raw.split(","))


def _parse_str_list(raw: str) -> tuple[str, ...]:
    if not raw:
        return ()
    return tuple(t.strip() for t in raw.split(","))


# key -> (parser, default)
SCHEMA: dict[str, tuple] = {
    "corpus.num_videos": (int, 100),
    "corpus.scenes_per_video": (int, 10),
    "corpus.shots_per_scene_min": (int, 6),
    "corpus.shots_per_scene_max": (int, 14),
    "corpus.dimension": (int, 32),
    "corpus.latent_noise_sigma": (float, 0.3),
    "corpus.interleave_prob": (float, 0.3),
    "split.train": (float, 0.6),
    "split.val": (float, 0.2),
    "split.test": (float, 0.2),
    "augment.mask_prob": (float, 0.1),
    "augment.noise_sigma": (float, 0.05),
    "augment.jitter_strength": (float, 0.4),
    "encoder.hidden_dims": (_parse_int_list, (256,)),
    "encoder.embed_dim": (int, 128),
    "encoder.dtype": (str, "f32"),
    "ssl.framework": (str, "moco"),
    "ssl.strategy": (str, "soft_sc"),
    "ssl.tau": (float, 0.07),
    "ssl.rho": (int, 16),
    "ssl.clip_shuffling": (_parse_bool, True),
    "ssl.batch_size": (int, 1024),
    "ssl.epochs": (int, 100),
    "ssl.lr": (float, 0.03),
    "ssl.queue_capacity": (int, 65536),
    "ssl.momentum": (float, 0.999),
    "ssl.random_n": (int, 1),
    "ssl.nn_m": (int, 8),
    "ssl.num_classes": (int, 24),
    "ssl.kmeans_iters": (int, 10),
    "ssl.gamma": (float, 0.5),
    "ssl.predictor_hidden": (int, 0),
    "mlp_head.num_of_shot": (int, 4),
    "mlp_head.hidden_dims": (_parse_int_list, (256,)),
    "mlp_head.dropout": (float, 0.4),
    "mlp_head.batch_size": (int, 128),
    "mlp_head.epochs": (int, 200),
    "mlp_head.milestones": (_parse_int_list, (50, 100, 150)),
    "mlp_head.lr": (float, 0.05),
    "mlp_head.lr_decay": (float, 0.1),
    "bilstm_head.shot_len": (int, 40),
    "bilstm_head.hidden_size": (int, 512),
    "bilstm_head.num_layers": (int, 2),
    "bilstm_head.inter_dropout": (float, 0.6),
    "bilstm_head.classifier_dropout": (float, 0.7),
    "bilstm_head.batch_size": (int, 32),
    "bilstm_head.epochs": (int, 200),
    "bilstm_head.milestones": (_parse_int_list, (160, 180)),
    "bilstm_head.lr": (float, 0.05),
    "bilstm_head.lr_decay": (float, 0.1),
    "eval.threshold": (float, 0.5),
    "run.seed": (int, 0),
    "run.out": (str, "runs/default"),
    "ablate.axis": (str, "strategy"),
    "ablate.strategies": (_parse_str_list, ("sa", "random", "nn", "sc", "soft_sc")),
    "ablate.frameworks": (_parse_str_list, ("moco", "simclr", "byol", "simsiam")),
    "ablate.seeds": (_parse_int_list, (0, 1, 2)),
}


@dataclass
class ExperimentConfig:
    corpus: SynthesisConfig
    split_fractions: tuple[float, float, float]
    augment: AugmentConfig
    encoder: EncoderConfig
    ssl: SslConfig
    mlp_head: MlpHeadConfig
    bilstm_head: BiLstmHeadConfig
    eval_threshold: float = 0.5
    seed: int = 0
    out: str = "runs/default"
    ablate_axis: str = "strategy"
    ablate_strategies: tuple[str, ...] = ("sa", "random", "nn", "sc", "soft_sc")
    ablate_frameworks: tuple[str, ...] = FRAMEWORKS
    ablate_seeds: tuple[int, ...] = (0, 1, 2)
    applied_defaults: list[str] = field(default_factory=list)
    seed_from_config: bool = False

    def validate(self) -> None:
        def fail(key: str, why: str):
            raise ConfigError(f"{key}: {why}")

        try:
            self.corpus.validate()
        except ValueError as exc:
            fail("corpus.*", str(exc))
        try:
            self.augment.validate()
        except ValueError as exc:
            fail("augment.*", str(exc))
        try:
            self.ssl.validate()
        except ValueError as exc:
            fail("ssl.*", str(exc))
        try:
            self.mlp_head.validate()
        except ValueError as exc:
            fail("mlp_head.*", str(exc))
        try:
            self.bilstm_head.validate()
        except ValueError as exc:
            fail("bilstm_head.*", str(exc))
        if any(f < 0 for f in self.split_fractions):
            fail("split.*", "fractions must be non-negative")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            fail("split.*", "fractions must sum to 1")
        if self.encoder.embed_dim < 2:
            fail("encoder.embed_dim", "must be >= 2")
        if any(h < 1 for h in self.encoder.hidden_dims):
            fail("encoder.hidden_dims", "entries must be >= 1")
        if self.encoder.dtype not in ("f32", "f64"):
            fail("encoder.dtype", "must be f32 or f64")
        if self.ssl.strategy_name not in STRATEGIES:
            fail("ssl.strategy", f"must be one of {STRATEGIES}")
        if self.ssl.num_classes > self.ssl.batch_size:
            fail("ssl.num_classes", "cannot exceed ssl.batch_size")
        if not 0.0 <= self.eval_threshold <= 1.0:
            fail("eval.threshold", "must be in [0, 1]")
        if self.seed < 0:
            fail("run.seed", "must be non-negative")
        if self.ablate_axis not in ("strategy", "framework"):
            fail("ablate.axis", "must be strategy or framework")
        for s in self.ablate_strategies:
            if s not in STRATEGIES:
                fail("ablate.strategies", f"unknown strategy {s!r}")
        for f in self.ablate_frameworks:
            if f not in FRAMEWORKS:
                fail("ablate.frameworks", f"unknown framework {f!r}")
        if not self.ablate_seeds:
            fail("ablate.seeds", "needs at least one seed")

    def echo(self) -> dict[str, str]:
        """Flat resolved key/value view, for manifests and reports."""
        values = _to_values(self)
        return {k: _fmt(values[k]) for k in SCHEMA}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(t) for t in v)
    return str(v)


def _to_values(cfg: ExperimentConfig) -> dict:
    c, s = cfg.corpus, cfg.ssl
    m, bl = cfg.mlp_head, cfg.bilstm_head
    return {
        "corpus.num_videos": c.num_videos,
        "corpus.scenes_per_video": c.scenes_per_video,
        "corpus.shots_per_scene_min": c.shots_per_scene_min,
        "corpus.shots_per_scene_max": c.shots_per_scene_max,
        "corpus.dimension": c.dimension,
        "corpus.latent_noise_sigma": c.latent_noise_sigma,
        "corpus.interleave_prob": c.interleave_prob,
        "split.train": cfg.split_fractions[0],
        "split.val": cfg.split_fractions[1],
        "split.test": cfg.split_fractions[2],
        "augment.mask_prob": cfg.augment.mask_prob,
        "augment.noise_sigma": cfg.augment.noise_sigma,
        "augment.jitter_strength": cfg.augment.jitter_strength,
        "encoder.hidden_dims": cfg.encoder.hidden_dims,
        "encoder.embed_dim": cfg.encoder.embed_dim,
        "encoder.dtype": cfg.encoder.dtype,
        "ssl.framework": s.framework,
        "ssl.strategy": s.strategy_name,
        "ssl.tau": s.tau,
        "ssl.rho": s.rho,
        "ssl.clip_shuffling": s.clip_shuffling,
        "ssl.batch_size": s.batch_size,
        "ssl.epochs": s.epochs,
        "ssl.lr": s.lr,
        "ssl.queue_capacity": s.queue_capacity,
        "ssl.momentum": s.momentum,
        "ssl.random_n": s.random_n,
        "ssl.nn_m": s.nn_m,
        "ssl.num_classes": s.num_classes,
        "ssl.kmeans_iters": s.kmeans_iters,
        "ssl.gamma": s.gamma,
        "ssl.predictor_hidden": s.predictor_hidden,
        "mlp_head.num_of_shot": m.num_of_shot,
        "mlp_head.hidden_dims": m.hidden_dims,
        "mlp_head.dropout": m.dropout,
        "mlp_head.batch_size": m.batch_size,
        "mlp_head.epochs": m.epochs,
        "mlp_head.milestones": m.milestones,
        "mlp_head.lr": m.lr,
        "mlp_head.lr_decay": m.lr_decay,
        "bilstm_head.shot_len": bl.shot_len,
        "bilstm_head.hidden_size": bl.hidden_size,
        "bilstm_head.num_layers": bl.num_layers,
        "bilstm_head.inter_dropout": bl.inter_dropout,
        "bilstm_head.classifier_dropout": bl.classifier_dropout,
        "bilstm_head.batch_size": bl.batch_size,
        "bilstm_head.epochs": bl.epochs,
        "bilstm_head.milestones": bl.milestones,
        "bilstm_head.lr": bl.lr,
        "bilstm_head.lr_decay": bl.lr_decay,
        "eval.threshold": cfg.eval_threshold,
        "run.seed": cfg.seed,
        "run.out": cfg.out,
        "ablate.axis": cfg.ablate_axis,
        "ablate.strategies": cfg.ablate_strategies,
        "ablate.frameworks": cfg.ablate_frameworks,
        "ablate.seeds": cfg.ablate_seeds,
    }


def config_from_values(values: dict, applied_defaults: list[str],
                       explicit: set[str]) -> ExperimentConfig:
    v = values
    cfg = ExperimentConfig(
        corpus=SynthesisConfig(
            num_videos=v["corpus.num_videos"],
            scenes_per_video=v["corpus.scenes_per_video"],
            shots_per_scene_min=v["corpus.shots_per_scene_min"],
            shots_per_scene_max=v["corpus.shots_per_scene_max"],
            dimension=v["corpus.dimension"],
            latent_noise_sigma=v["corpus.latent_noise_sigma"],
            interleave_prob=v["corpus.interleave_prob"],
        ),
        split_fractions=(v["split.train"], v["split.val"], v["split.test"]),
        augment=AugmentConfig(
            mask_prob=v["augment.mask_prob"],
            noise_sigma=v["augment.noise_sigma"],
            jitter_strength=v["augment.jitter_strength"],
        ),
        encoder=EncoderConfig(
            hidden_dims=v["encoder.hidden_dims"],
            embed_dim=v["encoder.embed_dim"],
            dtype=v["encoder.dtype"],
        ),
        ssl=SslConfig(
            framework=v["ssl.framework"],
            strategy_name=v["ssl.strategy"],
            tau=v["ssl.tau"],
            rho=v["ssl.rho"],
            clip_shuffling=v["ssl.clip_shuffling"],
            batch_size=v["ssl.batch_size"],
            epochs=v["ssl.epochs"],
            lr=v["ssl.lr"],
            queue_capacity=v["ssl.queue_capacity"],
            momentum=v["ssl.momentum"],
            random_n=v["ssl.random_n"],
            nn_m=v["ssl.nn_m"],
            num_classes=v["ssl.num_classes"],
            kmeans_iters=v["ssl.kmeans_iters"],
            gamma=v["ssl.gamma"],
            predictor_hidden=v["ssl.predictor_hidden"],
        ),
        mlp_head=MlpHeadConfig(
            num_of_shot=v["mlp_head.num_of_shot"],
            hidden_dims=v["mlp_head.hidden_dims"],
            dropout=v["mlp_head.dropout"],
            batch_size=v["mlp_head.batch_size"],
            epochs=v["mlp_head.epochs"],
            milestones=v["mlp_head.milestones"],
            lr=v["mlp_head.lr"],
            lr_decay=v["mlp_head.lr_decay"],
        ),
        bilstm_head=BiLstmHeadConfig(
            shot_len=v["bilstm_head.shot_len"],
            hidden_size=v["bilstm_head.hidden_size"],
            num_layers=v["bilstm_head.num_layers"],
            inter_dropout=v["bilstm_head.inter_dropout"],
            classifier_dropout=v["bilstm_head.classifier_dropout"],
            batch_size=v["bilstm_head.batch_size"],
            epochs=v["bilstm_head.epochs"],
            milestones=v["bilstm_head.milestones"],
            lr=v["bilstm_head.lr"],
            lr_decay=v["bilstm_head.lr_decay"],
        ),
        eval_threshold=v["eval.threshold"],
        seed=v["run.seed"],
        out=v["run.out"],
        ablate_axis=v["ablate.axis"],
        ablate_strategies=v["ablate.strategies"],
        ablate_frameworks=v["ablate.frameworks"],
        ablate_seeds=v["ablate.seeds"],
        applied_defaults=applied_defaults,
        seed_from_config="run.seed" in explicit,
    )
    cfg.validate()
    return cfg


def parse_config(path) -> ExperimentConfig:
    """Read and validate a config file; absent keys take defaults."""
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    seen: dict[str, object] = {}
    for lineno, raw_line in enumerate(lines, start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'section.key = value'")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        parser, _default = SCHEMA[key]
        try:
            seen[key] = parser(raw)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {key}: bad value {raw!r} ({exc})") from None
    values = {}
    applied_defaults = []
    for key, (parser, default) in SCHEMA.items():
        if key in seen:
            values[key] = seen[key]
        else:
            values[key] = default
            applied_defaults.append(key)
            log.debug("config default applied: %s = %s", key, _fmt(default))
    return config_from_values(values, applied_defaults, set(seen))


def default_config() -> ExperimentConfig:
    values = {key: default for key, (_p, default) in SCHEMA.items()}
    return config_from_values(values, sorted(SCHEMA), set())

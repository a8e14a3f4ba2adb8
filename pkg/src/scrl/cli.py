"""Command-line orchestration: generate -> pretrain -> embed -> head-train ->
eval, plus retrieval, the gradient-check suite, and the ablation runner.

Every subcommand reads and writes only paths under the run directory, writes
a manifest with the resolved config, effective seed and content hashes of its
inputs and outputs, and never mutates an input file.  Exit codes: 0 success,
1 validation/usage error, 2 I/O or file-format error.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import downstream, metrics
from .config import ConfigError, ExperimentConfig, default_config, parse_config
from .corpus import (Corpus, CorpusFormatError, generate_corpus, load_corpus,
                     save_corpus, split_corpus)
from .encoder import load_encoder, save_encoder
from .gradcheck import TOLERANCE, run_suite
from .pretrain import FRAMEWORKS, derive_seed, loss_table, pretrain
from .tensorio import TensorFormatError

log = logging.getLogger(__name__)

SEED_ENV_VAR = "SCRL_SEED"

SUBCOMMANDS = ("generate", "pretrain", "embed", "head-train", "eval",
               "retrieve", "gradcheck", "ablate")


class CliError(Exception):
    """Usage problem surfaced by the argument parser."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we use 1
        raise CliError(message)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, name: str, command: str,
                    cfg: ExperimentConfig, seed: int,
                    inputs: list[Path], outputs: list[Path],
                    extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "seed": seed,
        "config": cfg.echo(),
        "applied_defaults": sorted(cfg.applied_defaults),
        "inputs": {str(p): _sha256(p) for p in sorted(inputs)},
        "outputs": {str(p): _sha256(p) for p in sorted(outputs)},
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    if extra:
        manifest["extra"] = extra
    path = out_dir / name
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _resolve_seed(args, cfg: ExperimentConfig) -> int:
    """--seed flag beats config run.seed beats the environment variable."""
    if args.seed is not None:
        return args.seed
    if cfg.seed_from_config:
        return cfg.seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}")
    return cfg.seed


def _corpus_paths(out: Path) -> dict[str, Path]:
    d = out / "corpus"
    return {tag: d / f"{tag}.scrl" for tag in ("full", "train", "val", "test")}


def _embed_paths(out: Path) -> dict[str, Path]:
    d = out / "embed"
    return {tag: d / f"{tag}.scrl" for tag in ("train", "val", "test", "all")}


def cmd_generate(cfg: ExperimentConfig, seed: int, out: Path, args) -> int:
    paths = _corpus_paths(out)
    paths["full"].parent.mkdir(parents=True, exist_ok=True)
    syn = dataclasses.replace(cfg.corpus, seed=derive_seed(seed, "corpus"))
    corpus = generate_corpus(syn)
    train, val, test = split_corpus(corpus, cfg.split_fractions, derive_seed(seed, "split"))
    save_corpus(corpus, paths["full"])
    save_corpus(train, paths["train"])
    save_corpus(val, paths["val"])
    save_corpus(test, paths["test"])
    log.info("generated %d videos (%d shots), split %d/%d/%d",
             len(corpus.videos), corpus.num_shots,
             len(train.videos), len(val.videos), len(test.videos))
    _write_manifest(paths["full"].parent, "manifest.json", "generate", cfg, seed,
                    [], list(paths.values()))
    return 0


def cmd_pretrain(cfg: ExperimentConfig, seed: int, out: Path, args) -> int:
    train_path = _corpus_paths(out)["train"]
    if not train_path.exists():
        raise ConfigError(f"missing {train_path}; run generate first")
    corpus = load_corpus(train_path)
    ssl_cfg = dataclasses.replace(cfg.ssl, seed=derive_seed(seed, "ssl"))
    if args.strategy is not None:
        ssl_cfg = dataclasses.replace(ssl_cfg, strategy_name=args.strategy)
    if args.framework is not None:
        ssl_cfg = dataclasses.replace(ssl_cfg, framework=args.framework)
    ssl_cfg.validate()
    encoder, rows = pretrain(corpus, ssl_cfg, cfg.encoder, cfg.augment)
    d = out / "pretrain"
    d.mkdir(parents=True, exist_ok=True)
    ckpt = d / "encoder.ckpt"
    curve = d / "loss_curve.tsv"
    save_encoder(encoder, ckpt)
    curve.write_text(loss_table(rows))
    log.info("pretrained %s/%s for %d steps, final loss %.4f",
             ssl_cfg.framework, ssl_cfg.strategy_name, len(rows), rows[-1].loss)
    _write_manifest(d, "manifest.json", "pretrain", cfg, seed,
                    [train_path], [ckpt, curve],
                    extra={"strategy": ssl_cfg.strategy().describe(),
                           "framework": ssl_cfg.framework})
    return 0


def cmd_embed(cfg: ExperimentConfig, seed: int, out: Path, args) -> int:
    ckpt = out / "pretrain" / "encoder.ckpt"
    if not ckpt.exists():
        raise ConfigError(f"missing {ckpt}; run pretrain first")
    encoder = load_encoder(ckpt)
    corpus_paths = _corpus_paths(out)
    embed_paths = _embed_paths(out)
    embed_paths["all"].parent.mkdir(parents=True, exist_ok=True)
    inputs = [ckpt]
    outputs = []
    all_videos = []
    dim = None
    for tag in ("train", "val", "test"):
        src = corpus_paths[tag]
        if not src.exists():
            raise ConfigError(f"missing {src}; run generate first")
        inputs.append(src)
        corpus = load_corpus(src)
        emb = downstream.embed_corpus(encoder, corpus)
        emb.split_tag = tag
        save_corpus(emb, embed_paths[tag])
        outputs.append(embed_paths[tag])
        all_videos.extend(emb.videos)
        dim = emb.dimension
    merged = Corpus(dim, sorted(all_videos, key=lambda v: v.video_id), "unsplit")
    save_corpus(merged, embed_paths["all"])
    outputs.append(embed_paths["all"])
    _write_manifest(embed_paths["all"].parent, "manifest.json", "embed", cfg, seed,
                    inputs, outputs)
    return 0


def cmd_head_train(cfg: ExperimentConfig, seed: int, out: Path, args) -> int:
    train_path = _embed_paths(out)["train"]
    if not train_path.exists():
        raise ConfigError(f"missing {train_path}; run embed first")
    embedded = load_corpus(train_path)
    d = out / "head"
    d.mkdir(parents=True, exist_ok=True)
    if args.protocol == "mlp":
        head_cfg = dataclasses.replace(
            cfg.mlp_head, seed=derive_seed(seed, "mlp_head"))
        head = downstream.train_mlp_head(embedded, head_cfg)
    else:
        head_cfg = dataclasses.replace(
            cfg.bilstm_head, seed=derive_seed(seed, "bilstm_head"))
        head = downstream.train_bilstm_head(embedded, head_cfg)
    head_path = d / f"{args.protocol}.head"
    downstream.save_head(head, head_path)
    _write_manifest(d, f"manifest_{args.protocol}.json", "head-train", cfg, seed,
                    [train_path], [head_path], extra={"protocol": args.protocol})
    return 0


def cmd_eval(cfg: ExperimentConfig, seed: int, out: Path, args) -> int:
    head_path = out / "head" / f"{args.protocol}.head"
    test_path = _embed_paths(out)["test"]
    if not head_path.exists():
        raise ConfigError(f"missing {head_path}; run head-train first")
    if not test_path.exists():
        raise ConfigError(f"missing {test_path}; run embed first")
    head = downstream.load_head(head_path)
    embedded = load_corpus(test_path)
    scores = downstream.predict_boundaries(head, embedded, args.protocol)
    labels = downstream.transition_labels(embedded)
    report = metrics.evaluate(
        scores, labels, threshold=cfg.eval_threshold, seed=seed,
        config_echo={"protocol": args.protocol,
                     "strategy": cfg.ssl.strategy().describe(),
                     "framework": cfg.ssl.framework},
    )
    d = out / "eval"
    d.mkdir(parents=True, exist_ok=True)
    scores_path = d / f"{args.protocol}_test.scores"
    report_path = d / f"{args.protocol}_test.report"
    downstream.save_scores(scores, scores_path)
    report_path.write_text(report.to_text())
    print(f"mean_ap = {report.mean_average_precision:.4f}")
    print(f"f1 = {report.f1:.4f}")
    _write_manifest(d, f"manifest_{args.protocol}.json", "eval", cfg, seed,
                    [head_path, test_path], [scores_path, report_path],
                    extra={"protocol": args.protocol,
                           "mean_ap": round(report.mean_average_precision, 6),
                           "f1": round(report.f1, 6)})
    return 0


def cmd_retrieve(cfg: ExperimentConfig, seed: int, out: Path, args) -> int:
    all_path = _embed_paths(out)["all"]
    if not all_path.exists():
        raise ConfigError(f"missing {all_path}; run embed first")
    embedded = load_corpus(all_path)
    video = next((v for v in embedded.videos if v.video_id == args.video), None)
    if video is None:
        raise ConfigError(f"video {args.video} not found")
    feats = video.feature_matrix().astype(np.float64)
    top = metrics.retrieve_top_k(feats, args.shot, args.k)
    sims = feats @ feats[args.shot]
    lines = [f"query: video {args.video} shot {args.shot}"]
    for rank, idx in enumerate(top, start=1):
        lines.append(f"{rank}\tshot {idx}\tsimilarity {sims[idx]:.6f}")
    text = "\n".join(lines)
    print(text)
    d = out / "retrieve"
    d.mkdir(parents=True, exist_ok=True)
    result = d / f"video{args.video}_shot{args.shot}_top{args.k}.txt"
    result.write_text(text + "\n")
    _write_manifest(d, "manifest.json", "retrieve", cfg, seed,
                    [all_path], [result],
                    extra={"video": args.video, "shot": args.shot, "k": args.k})
    return 0


def cmd_gradcheck(cfg: ExperimentConfig, seed: int, out: Path, args) -> int:
    results = run_suite(seed)
    ok = True
    lines = []
    for name, err in results.items():
        status = "ok" if err < TOLERANCE else "FAIL"
        ok = ok and err < TOLERANCE
        lines.append(f"{name}\tmax_rel_err {err:.3e}\t{status}")
    text = "\n".join(lines)
    print(text)
    d = out / "gradcheck"
    d.mkdir(parents=True, exist_ok=True)
    result = d / "results.txt"
    result.write_text(text + "\n")
    _write_manifest(d, "manifest.json", "gradcheck", cfg, seed, [], [result],
                    extra={k: float(v) for k, v in results.items()})
    return 0 if ok else 1


def run_pipeline_in_memory(cfg: ExperimentConfig, corpus_train: Corpus,
                           corpus_test: Corpus, ssl_seed: int, head_seed: int):
    """generate-free chain used by the ablation runner: pretrain on the train
    split, embed both splits, train the window head, evaluate on test."""
    ssl_cfg = dataclasses.replace(cfg.ssl, seed=ssl_seed)
    encoder, _rows = pretrain(corpus_train, ssl_cfg, cfg.encoder, cfg.augment)
    emb_train = downstream.embed_corpus(encoder, corpus_train)
    emb_test = downstream.embed_corpus(encoder, corpus_test)
    head_cfg = dataclasses.replace(cfg.mlp_head, seed=head_seed)
    head = downstream.train_mlp_head(emb_train, head_cfg)
    scores = downstream.predict_boundaries_mlp(head, emb_test)
    labels = downstream.transition_labels(emb_test)
    report = metrics.evaluate(scores, labels, threshold=cfg.eval_threshold)
    return report


def cmd_ablate(cfg: ExperimentConfig, seed: int, out: Path, args) -> int:
    syn = dataclasses.replace(cfg.corpus, seed=derive_seed(seed, "corpus"))
    corpus = generate_corpus(syn)
    train, _val, test = split_corpus(corpus, cfg.split_fractions,
                                     derive_seed(seed, "split"))
    if cfg.ablate_axis == "strategy":
        values = cfg.ablate_strategies
        def variant(v):
            return dataclasses.replace(cfg, ssl=dataclasses.replace(cfg.ssl, strategy_name=v))
    else:
        values = cfg.ablate_frameworks
        def variant(v):
            return dataclasses.replace(cfg, ssl=dataclasses.replace(cfg.ssl, framework=v))

    rows = [f"{cfg.ablate_axis}\tseed\tmean_ap\tf1"]
    summary = [f"{cfg.ablate_axis}\tmedian_mean_ap"]
    for value in values:
        run_cfg = variant(value)
        run_cfg.ssl.validate()
        aps = []
        for s in cfg.ablate_seeds:
            report = run_pipeline_in_memory(
                run_cfg, train, test,
                ssl_seed=derive_seed(s, "ssl"), head_seed=derive_seed(s, "mlp_head"))
            aps.append(report.mean_average_precision)
            rows.append(f"{value}\t{s}\t{report.mean_average_precision:.4f}\t{report.f1:.4f}")
            log.info("ablate %s=%s seed=%d mean_ap=%.4f",
                     cfg.ablate_axis, value, s, report.mean_average_precision)
        summary.append(f"{value}\t{statistics.median(aps):.4f}")
    d = out / "ablate"
    d.mkdir(parents=True, exist_ok=True)
    results_path = d / "results.tsv"
    summary_path = d / "summary.tsv"
    results_path.write_text("\n".join(rows) + "\n")
    summary_path.write_text("\n".join(summary) + "\n")
    print("\n".join(summary))
    _write_manifest(d, "manifest.json", "ablate", cfg, seed, [],
                    [results_path, summary_path])
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="scrl", description=__doc__)
    parser.add_argument("--config", type=str, default=None,
                        help="path to a section.key = value config file")
    parser.add_argument("--out", type=str, default=None,
                        help="run directory (default: run.out from the config)")
    parser.add_argument("--seed", type=int, default=None,
                        help="overrides run.seed and the environment variable")
    sub = parser.add_subparsers(dest="command")
    for name in ("generate", "embed", "gradcheck", "ablate"):
        sub.add_parser(name)
    p = sub.add_parser("pretrain")
    p.add_argument("--strategy", choices=("sa", "random", "nn", "sc", "soft_sc"),
                   default=None)
    p.add_argument("--framework", choices=FRAMEWORKS, default=None)
    for name in ("head-train", "eval"):
        p = sub.add_parser(name)
        p.add_argument("--protocol", choices=("mlp", "bilstm"), required=True)
    p = sub.add_parser("retrieve")
    p.add_argument("--video", type=int, required=True)
    p.add_argument("--shot", type=int, required=True)
    p.add_argument("--k", type=int, default=5)
    return parser


_HANDLERS = {
    "generate": cmd_generate,
    "pretrain": cmd_pretrain,
    "embed": cmd_embed,
    "head-train": cmd_head_train,
    "eval": cmd_eval,
    "retrieve": cmd_retrieve,
    "gradcheck": cmd_gradcheck,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise CliError("a subcommand is required")
        cfg = parse_config(args.config) if args.config else default_config()
        seed = _resolve_seed(args, cfg)
        out = Path(args.out) if args.out else Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        return _HANDLERS[args.command](cfg, seed, out, args)
    except CliError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (ConfigError, ValueError) as exc:
        if isinstance(exc, (CorpusFormatError, TensorFormatError)):
            print(f"file format error: {exc}", file=sys.stderr)
            return 2
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

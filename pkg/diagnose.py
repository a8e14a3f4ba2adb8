"""Scratch diagnostics (not part of the package)."""
import dataclasses
import statistics
import numpy as np

from scrl.corpus import SynthesisConfig, generate_corpus, split_corpus, Corpus, Video, ShotFeature
from scrl.pretrain import SslConfig, pretrain, derive_seed
from scrl.encoder import EncoderConfig, Mlp
from scrl.augment import AugmentConfig
from scrl.downstream import (train_mlp_head, MlpHeadConfig,
                             predict_boundaries_mlp, embed_corpus,
                             transition_labels)
from scrl.metrics import evaluate


def head_ap(emb_train, emb_test, seed=0):
    head = train_mlp_head(emb_train, MlpHeadConfig(
        epochs=40, milestones=(20, 30), lr=0.05, seed=derive_seed(seed, "mlp_head")))
    scores = predict_boundaries_mlp(head, emb_test)
    return evaluate(scores, transition_labels(emb_test)).mean_average_precision


def scene_ids(video):
    return np.cumsum(np.concatenate([[0], video.scene_end[:-1]]))


def latent_corpus(corpus, syn):
    """Pseudo-oracle: replace each shot by its scene's normalized mean."""
    videos = []
    for v in corpus.videos:
        feats = v.feature_matrix().astype(np.float64)
        sid = scene_ids(v)
        out = np.empty_like(feats)
        for s in np.unique(sid):
            mean = feats[sid == s].mean(axis=0)
            out[sid == s] = mean / np.linalg.norm(mean)
        shots = [ShotFeature(v.video_id, i, out[i].astype(np.float32))
                 for i in range(len(v))]
        videos.append(Video(v.video_id, shots, v.scene_end.copy()))
    return Corpus(corpus.dimension, videos, corpus.split_tag)


def cos_stats(corpus):
    intra, inter = [], []
    for video in corpus.videos[:12]:
        feats = video.feature_matrix().astype(np.float64)
        sid = scene_ids(video)
        sims = feats @ feats.T
        n = len(video)
        iu = np.triu_indices(n, 1)
        same = sid[iu[0]] == sid[iu[1]]
        intra.append(sims[iu][same].mean())
        inter.append(sims[iu][~same].mean())
    return float(np.mean(intra)), float(np.mean(inter))


def main():
    syn = SynthesisConfig(seed=derive_seed(0, "corpus"))
    corpus = generate_corpus(syn)
    train, val, test = split_corpus(corpus, (0.6, 0.2, 0.2), derive_seed(0, "split"))

    # invisible boundaries: consecutive scenes sharing a latent (sigma=0 view)
    clean = latent_corpus(corpus, syn)
    invisible = 0
    total = 0
    for v in clean.videos:
        feats = v.feature_matrix().astype(np.float64)
        ends = np.flatnonzero(v.scene_end[:-1])
        for t in ends:
            total += 1
            if feats[t] @ feats[t + 1] > 0.9:  # scene means nearly identical
                invisible += 1
    print(f"boundaries {total}, near-invisible (adjacent scene means cos>0.9) {invisible} ({100*invisible/total:.1f}%)")

    clean_train = latent_corpus(train, syn)
    clean_test = latent_corpus(test, syn)
    print("oracle (true centers) AP:", f"{head_ap(clean_train, clean_test):.4f}")
    print("raw features AP:", f"{head_ap(train, test):.4f}")
    print("raw cos intra/inter:", cos_stats(test))

    enc_cfg = EncoderConfig(hidden_dims=(128,), embed_dim=64)
    aug = AugmentConfig(mask_prob=0.1, noise_sigma=0.05, jitter_strength=0.4)
    base = dict(framework="moco", batch_size=256, epochs=15, queue_capacity=1024,
                lr=0.01, tau=0.07, num_classes=24, kmeans_iters=10, rho=16)
    for name, strat, shuffle in (("sa", "sa", False), ("nn", "nn", False),
                                 ("sc", "sc", False), ("sc+shuf", "sc", True)):
        ssl_cfg = SslConfig(strategy_name=strat, clip_shuffling=shuffle,
                            seed=derive_seed(0, "ssl"), **base)
        enc, _ = pretrain(train, ssl_cfg, enc_cfg, aug)
        emb_test = embed_corpus(enc, test)
        intra, inter = cos_stats(emb_test)
        print(f"{name:8s} emb cos intra {intra:.3f} inter {inter:.3f} gap {intra-inter:.3f}")


if __name__ == "__main__":
    main()

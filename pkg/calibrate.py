"""Scratch calibration driver (not part of the package)."""
import sys
import time
import statistics
import dataclasses
import numpy as np

from scrl.corpus import SynthesisConfig, generate_corpus, split_corpus
from scrl.pretrain import SslConfig, pretrain, derive_seed
from scrl.encoder import EncoderConfig, Mlp
from scrl.augment import AugmentConfig
from scrl.downstream import (train_mlp_head, MlpHeadConfig,
                             predict_boundaries_mlp, embed_corpus,
                             transition_labels)
from scrl.metrics import evaluate


def head_eval(enc, train, test, head_cfg):
    emb_train = embed_corpus(enc, train)
    emb_test = embed_corpus(enc, test)
    head = train_mlp_head(emb_train, head_cfg)
    scores = predict_boundaries_mlp(head, emb_test)
    report = evaluate(scores, transition_labels(emb_test))
    return report.mean_average_precision


def bench(tag, train, test, enc_cfg, aug_cfg, head_cfg0, ssl_base, seeds=(0, 1, 2)):
    t00 = time.time()
    results = {}
    # random frozen baseline
    baps = []
    for s in seeds:
        rng = np.random.default_rng(derive_seed(s, "init"))
        enc = Mlp(enc_cfg.layer_dims(32), rng=rng, dtype=np.float32)
        baps.append(head_eval(enc, train, test,
                              dataclasses.replace(head_cfg0, seed=derive_seed(s, "mlp_head"))))
    results["random"] = baps

    for name, strat, shuffle in (("sa", "sa", False), ("nn", "nn", False),
                                 ("sc", "sc", False), ("sc+shuf", "sc", True)):
        aps = []
        for s in seeds:
            ssl_cfg = SslConfig(strategy_name=strat, clip_shuffling=shuffle,
                                seed=derive_seed(s, "ssl"), **ssl_base)
            enc, rows = pretrain(train, ssl_cfg, enc_cfg, aug_cfg)
            ap = head_eval(enc, train, test,
                           dataclasses.replace(head_cfg0, seed=derive_seed(s, "mlp_head")))
            aps.append(ap)
        results[name] = aps

    print(f"\n=== {tag} ({time.time()-t00:.0f}s) ===")
    for name, aps in results.items():
        print(f"{name:8s} med {statistics.median(aps):.4f}  {['%.4f' % a for a in aps]}")
    med = {k: statistics.median(v) for k, v in results.items()}
    ok = med["sc"] > med["nn"] > med["sa"] and med["sc+shuf"] >= med["sc"] and med["sc"] > med["random"]
    print("ordering ok:", ok)
    return results


def main():
    syn = SynthesisConfig(seed=derive_seed(0, "corpus"))
    corpus = generate_corpus(syn)
    train, val, test = split_corpus(corpus, (0.6, 0.2, 0.2), derive_seed(0, "split"))
    print(f"corpus {corpus.num_shots} shots; train {train.num_shots}, test {test.num_shots}")

    aug = AugmentConfig(mask_prob=0.1, noise_sigma=0.05, jitter_strength=0.4)
    head = MlpHeadConfig(epochs=40, milestones=(20, 30), lr=0.05)

    which = sys.argv[1] if len(sys.argv) > 1 else "A"

    variants = {
        "A": ("b128 q1024 lr0.01 ep15", dict(batch_size=128, epochs=15, lr=0.01)),
        "B": ("b128 q1024 lr0.03 ep15", dict(batch_size=128, epochs=15, lr=0.03)),
        "C": ("b128 q1024 lr0.03 ep25", dict(batch_size=128, epochs=25, lr=0.03)),
        "D": ("b128 q2048 lr0.01 ep25", dict(batch_size=128, epochs=25, lr=0.01,
                                             queue_capacity=2048)),
    }
    tag, over = variants[which]
    basecfg = dict(framework="moco", batch_size=128, epochs=15, queue_capacity=1024,
                   lr=0.01, tau=0.07, num_classes=24, kmeans_iters=10, rho=16)
    basecfg.update(over)
    bench(tag, train, test,
          EncoderConfig(hidden_dims=(128,), embed_dim=64), aug, head, basecfg)


if __name__ == "__main__":
    main()

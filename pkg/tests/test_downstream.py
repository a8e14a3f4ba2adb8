import numpy as np
import pytest

from scrl.bilstm import BiLstmTagger
from scrl.corpus import (Corpus, ShotFeature, SynthesisConfig, Video,
                         corpora_equal, generate_corpus, load_corpus,
                         save_corpus)
from scrl.downstream import (BiLstmHeadConfig, MlpHeadConfig, bilstm_infer,
                             build_chunks, build_windows, embed_corpus,
                             load_head, middle_portion, predict_boundaries,
                             predict_boundaries_mlp, save_head, save_scores,
                             load_scores, train_bilstm_head, train_mlp_head,
                             transition_labels, weighted_bce_with_logits)
from scrl.encoder import EncoderConfig, Mlp, parameter_digest
from scrl.downstream import BiLstmHead, MlpHead


@pytest.fixture(scope="module")
def encoder(small_corpus_module):
    rng = np.random.default_rng(0)
    return Mlp((small_corpus_module.dimension, 24, 12), rng=rng, dtype=np.float32)


@pytest.fixture(scope="module")
def small_corpus_module():
    return generate_corpus(SynthesisConfig(
        num_videos=8, scenes_per_video=4, shots_per_scene_min=4,
        shots_per_scene_max=8, dimension=16, latent_noise_sigma=0.25,
        interleave_prob=0.2, seed=21))


@pytest.fixture(scope="module")
def embedded(encoder, small_corpus_module):
    return embed_corpus(encoder, small_corpus_module)


def test_embed_identical_shots_identical_embeddings(encoder):
    f = np.zeros(16, dtype=np.float32)
    f[2] = 1.0
    video = Video(0, [ShotFeature(0, 0, f), ShotFeature(0, 1, f.copy())],
                  np.array([False, True]))
    emb = embed_corpus(encoder, Corpus(16, [video]))
    feats = emb.videos[0].feature_matrix()
    assert np.array_equal(feats[0], feats[1])


def test_embed_rows_unit_norm(embedded):
    for video in embedded.videos:
        norms = np.linalg.norm(video.feature_matrix().astype(np.float64), axis=1)
        assert np.allclose(norms, 1.0, atol=1e-5)


def test_embed_preserves_labels_and_roundtrips(embedded, small_corpus_module, tmp_path):
    assert embedded.dimension == 12
    for e, o in zip(embedded.videos, small_corpus_module.videos):
        assert np.array_equal(e.scene_end, o.scene_end)
    path = tmp_path / "emb.scrl"
    save_corpus(embedded, path)
    assert corpora_equal(embedded, load_corpus(path))


def test_embed_rejects_dimension_mismatch(encoder):
    with pytest.raises(ValueError, match="dimension"):
        embed_corpus(encoder, generate_corpus(SynthesisConfig(
            num_videos=1, scenes_per_video=1, dimension=8, seed=0)))


def test_weighted_bce_closed_form():
    # logit 0 gives log 2 per element regardless of label; weight scales the
    # positive element
    logits = np.array([0.0, 0.0])
    labels = np.array([1.0, 0.0])
    loss, grad = weighted_bce_with_logits(logits, labels, pos_weight=3.0)
    assert loss == pytest.approx((3.0 * np.log(2) + np.log(2)) / 2)
    assert grad == pytest.approx([3.0 * (0.5 - 1.0) / 2, 0.5 / 2])


def test_build_windows_alignment():
    # hand-built video: boundary after shot 1 -> window starting at 0 is
    # positive (center transition = shot index 1)
    feats = [np.eye(4, dtype=np.float32)[i % 4] for i in range(6)]
    ends = np.array([False, True, False, False, False, True])
    video = Video(0, [ShotFeature(0, i, f) for i, f in enumerate(feats)], ends)
    x, y = build_windows(Corpus(4, [video]), 4)
    assert x.shape == (3, 16)
    assert y.tolist() == [True, False, False]


def test_build_windows_skips_short_videos():
    f = np.ones(4, dtype=np.float32) / 2
    vshort = Video(0, [ShotFeature(0, 0, f)], np.array([True]))
    vlong = Video(1, [ShotFeature(1, i, f) for i in range(4)],
                  np.array([False, True, False, True]))
    x, y = build_windows(Corpus(4, [vshort, vlong]), 4)
    assert x.shape[0] == 1


def test_train_mlp_head_rejects_single_class():
    f = np.ones(4, dtype=np.float32) / 2
    video = Video(0, [ShotFeature(0, i, f) for i in range(6)],
                  np.array([False, False, False, False, False, True]))
    with pytest.raises(ValueError, match="single-class"):
        train_mlp_head(Corpus(4, [video]), MlpHeadConfig(epochs=1))


def test_mlp_scores_in_unit_interval_and_edges_zero(embedded):
    head = train_mlp_head(embedded, MlpHeadConfig(epochs=3, milestones=(2,), seed=0))
    scores = predict_boundaries_mlp(head, embedded)
    for video in embedded.videos:
        s = scores[video.video_id]
        assert len(s) == len(video) - 1
        assert np.all((s >= 0) & (s <= 1))
        assert s[0] == 0.0  # no full window fits the first transition


def test_mlp_predictions_deterministic(embedded):
    head = train_mlp_head(embedded, MlpHeadConfig(epochs=2, milestones=(), seed=3))
    a = predict_boundaries_mlp(head, embedded)
    b = predict_boundaries_mlp(head, embedded)
    for vid in a:
        assert np.array_equal(a[vid], b[vid])


def test_heads_do_not_mutate_encoder(encoder, small_corpus_module):
    digest = parameter_digest(encoder)
    embedded = embed_corpus(encoder, small_corpus_module)
    train_mlp_head(embedded, MlpHeadConfig(epochs=2, milestones=(), seed=1))
    train_bilstm_head(embedded, BiLstmHeadConfig(
        shot_len=8, hidden_size=6, num_layers=1, batch_size=8, epochs=1,
        milestones=(), seed=1))
    assert parameter_digest(encoder) == digest


def test_constant_scores_give_positive_rate_ap(embedded):
    # a constant ranker's AP equals the positive rate under the
    # ties-to-earlier-index definition... computed by the independent formula
    from scrl.metrics import average_precision
    labels = np.array([False, True, False, True, False])
    scores = np.full(5, 0.5)
    ap = average_precision(scores, labels)
    # stable tie order ranks items in index order; precision@2=1/2, @4=2/4
    assert ap == pytest.approx((1 / 2 + 2 / 4) / 2)


# ------------------------------------------------------------- bilstm


def test_bilstm_zero_weights_logits_equal_bias():
    rng = np.random.default_rng(0)
    net = BiLstmTagger(4, 3, 1, rng, inter_dropout=0, classifier_dropout=0,
                       dtype=np.float64)
    for p in net.parameters():
        p[...] = 0.0
    net.cls_b[...] = 0.37
    logits = net.forward(rng.standard_normal((2, 5, 4)))
    assert np.allclose(logits, 0.37, atol=1e-15)


def test_bilstm_reversal_swaps_direction_streams():
    rng = np.random.default_rng(1)
    net = BiLstmTagger(4, 3, 1, rng, inter_dropout=0, classifier_dropout=0,
                       dtype=np.float64)
    layer = net.layers[0]
    # share parameters across directions so the streams are comparable
    layer.bwd.w = layer.fwd.w.copy()
    layer.bwd.u = layer.fwd.u.copy()
    layer.bwd.b = layer.fwd.b.copy()
    x = rng.standard_normal((1, 6, 4))
    out_fwd, _ = layer.forward(x)
    out_rev, _ = layer.forward(x[:, ::-1, :])
    h = 3
    # forward stream of the reversed input == time-flipped backward stream
    assert np.allclose(out_rev[:, :, :h], out_fwd[:, ::-1, h:], atol=1e-12)
    assert np.allclose(out_rev[:, :, h:], out_fwd[:, ::-1, :h], atol=1e-12)


def test_bilstm_inference_deterministic(embedded):
    head = train_bilstm_head(embedded, BiLstmHeadConfig(
        shot_len=8, hidden_size=5, num_layers=2, batch_size=8, epochs=1,
        milestones=(), seed=2))
    feats = embedded.videos[0].feature_matrix()
    a = bilstm_infer(head, feats)
    b = bilstm_infer(head, feats)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("shot_len,expected", [
    (4, (1, 2)),
    (8, (2, 5)),
    (40, (10, 29)),
])
def test_middle_portion_indices(shot_len, expected):
    lo, hi = middle_portion(shot_len)
    assert (lo, hi - 1) == expected


def test_bilstm_infer_covers_every_shot_once():
    rng = np.random.default_rng(5)
    cfg = BiLstmHeadConfig(shot_len=8, hidden_size=4, num_layers=1,
                           batch_size=4, epochs=1, milestones=(), seed=0)
    net = BiLstmTagger(6, cfg.hidden_size, cfg.num_layers, rng,
                       inter_dropout=0, classifier_dropout=0, dtype=np.float32)
    head = BiLstmHead(net, cfg, 1.0)
    for n in (1, 2, 3, 4, 7, 8, 9, 16, 23, 40):
        feats = rng.standard_normal((n, 6)).astype(np.float32)
        scores = bilstm_infer(head, feats)
        assert scores.shape == (n,)
        assert np.all(np.isfinite(scores))


def test_bilstm_infer_three_shots_window_four():
    rng = np.random.default_rng(6)
    cfg = BiLstmHeadConfig(shot_len=4, hidden_size=3, num_layers=1,
                           batch_size=4, epochs=1, milestones=(), seed=0)
    net = BiLstmTagger(5, 3, 1, rng, inter_dropout=0, classifier_dropout=0,
                       dtype=np.float32)
    head = BiLstmHead(net, cfg, 1.0)
    scores = bilstm_infer(head, rng.standard_normal((3, 5)).astype(np.float32))
    assert scores.shape == (3,)


def test_bilstm_config_invariants():
    with pytest.raises(ValueError):
        BiLstmHeadConfig(shot_len=10).validate()
    with pytest.raises(ValueError):
        BiLstmHeadConfig(shot_len=2).validate()
    BiLstmHeadConfig(shot_len=8).validate()


def test_build_chunks_padding_and_mask():
    f = np.eye(3, dtype=np.float32)
    video = Video(0, [ShotFeature(0, i, f[i % 3]) for i in range(5)],
                  np.array([False, True, False, False, True]))
    x, y, mask = build_chunks(Corpus(3, [video]), 4)
    assert x.shape == (2, 4, 3)
    assert mask[0].tolist() == [1, 1, 1, 1]
    assert mask[1].tolist() == [1, 0, 0, 0]
    # padded steps repeat the final feature
    assert np.array_equal(x[1, 1], x[1, 0])


def test_protocol_dispatch_checks_head_type(embedded):
    mlp_head = train_mlp_head(embedded, MlpHeadConfig(epochs=1, milestones=(), seed=0))
    with pytest.raises(TypeError):
        predict_boundaries(mlp_head, embedded, "bilstm")
    with pytest.raises(ValueError, match="unknown protocol"):
        predict_boundaries(mlp_head, embedded, "cnn")
    scores = predict_boundaries(mlp_head, embedded, "mlp")
    labels = transition_labels(embedded)
    assert set(scores) == set(labels)
    for vid in scores:
        assert len(scores[vid]) == len(labels[vid])


def test_scores_file_roundtrip(tmp_path, embedded):
    head = train_mlp_head(embedded, MlpHeadConfig(epochs=1, milestones=(), seed=0))
    scores = predict_boundaries_mlp(head, embedded)
    path = tmp_path / "test.scores"
    save_scores(scores, path)
    loaded = load_scores(path)
    assert set(loaded) == set(scores)
    for vid in scores:
        assert np.allclose(loaded[vid], np.round(scores[vid], 6), atol=1e-9)
    # 6-decimal fixed formatting
    first_line = path.read_text().splitlines()[0]
    vid, _, rest = first_line.partition("\t")
    assert all(len(tok.split(".")[1]) == 6 for tok in rest.split(","))


def test_head_checkpoint_roundtrip_mlp(tmp_path, embedded):
    head = train_mlp_head(embedded, MlpHeadConfig(epochs=1, milestones=(), seed=0))
    path = tmp_path / "mlp.head"
    save_head(head, path)
    loaded = load_head(path)
    assert isinstance(loaded, MlpHead)
    assert loaded.config == head.config
    assert loaded.pos_weight == pytest.approx(head.pos_weight)
    a = predict_boundaries_mlp(head, embedded)
    b = predict_boundaries_mlp(loaded, embedded)
    for vid in a:
        assert np.allclose(a[vid], b[vid], atol=1e-7)


def test_head_checkpoint_roundtrip_bilstm(tmp_path, embedded):
    head = train_bilstm_head(embedded, BiLstmHeadConfig(
        shot_len=8, hidden_size=5, num_layers=2, batch_size=8, epochs=1,
        milestones=(), seed=2))
    path = tmp_path / "bilstm.head"
    save_head(head, path)
    loaded = load_head(path)
    assert isinstance(loaded, BiLstmHead)
    assert loaded.config == head.config
    feats = embedded.videos[0].feature_matrix()
    assert np.allclose(bilstm_infer(head, feats), bilstm_infer(loaded, feats),
                       atol=1e-7)

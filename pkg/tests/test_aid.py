import numpy as np
import pytest

from accentlab import aid
from accentlab import numkit as nk
from accentlab.corpus import EmbeddingSet, Utterance, mean_normalize


def emb_utt(uid, spk, accent, vec, n_words=5):
    d = len(vec) // 3
    e = EmbeddingSet(lid=vec[:d], sid=vec[d:2 * d], aid=vec[2 * d:])
    return Utterance(uid, spk, accent, n_words, embeddings=e)


def feat_utt(uid, spk, accent, features, n_words=5):
    return Utterance(uid, spk, accent, n_words, features=features)


def two_cluster_corpus(n_per=48, d=2, noise=0.05, seed=0):
    """Linearly separable embeddings: class a near +1, class b near -1."""
    rng = np.random.default_rng(seed)
    utts = []
    for i in range(n_per):
        for accent, sign in (("en-AU", 1.0), ("en-US", -1.0)):
            vec = sign * np.ones(3 * d) + noise * rng.standard_normal(3 * d)
            utts.append(emb_utt(f"{accent}-{i}", f"{accent}-s{i % 6}",
                                accent, vec, n_words=1 + i % 30))
    return utts


# ---------------------------------------------------------------- stats pool

def test_stats_pool_hand_case():
    pooled, _ = aid.stats_pool(np.array([[1.0, 2.0], [3.0, 4.0]]))
    assert np.allclose(pooled, [2.0, 3.0, 1.0, 1.0])


def test_stats_pool_constant_column_exact_zero_std():
    h = np.array([[5.0, 1.0], [5.0, 2.0], [5.0, 6.0]])
    pooled, _ = aid.stats_pool(h)
    assert pooled[2] == 0.0
    assert pooled[0] == 5.0


def test_stats_pool_single_frame():
    pooled, _ = aid.stats_pool(np.array([[3.0, -1.0]]))
    assert np.allclose(pooled, [3.0, -1.0, 0.0, 0.0])


def test_stats_pool_matches_numpy():
    rng = np.random.default_rng(7)
    h = rng.standard_normal((13, 5))
    pooled, _ = aid.stats_pool(h)
    assert np.allclose(pooled[:5], h.mean(axis=0))
    assert np.allclose(pooled[5:], h.std(axis=0))


def test_stats_pool_backward_matches_finite_differences():
    rng = np.random.default_rng(3)
    h = rng.standard_normal((9, 4))
    w = rng.standard_normal(8)

    def f(hm):
        pooled, _ = aid.stats_pool(hm)
        return float(w @ pooled)

    _, cache = aid.stats_pool(h)
    grad = aid.stats_pool_backward(w, cache)
    eps = 1e-6
    for t in range(h.shape[0]):
        for j in range(h.shape[1]):
            hp, hm_ = h.copy(), h.copy()
            hp[t, j] += eps
            hm_[t, j] -= eps
            fd = (f(hp) - f(hm_)) / (2 * eps)
            assert abs(fd - grad[t, j]) < 1e-6


def test_stats_pool_backward_zero_variance_subgradient():
    h = np.full((4, 1), 2.0)
    _, cache = aid.stats_pool(h)
    grad = aid.stats_pool_backward(np.array([0.0, 1.0]), cache)
    # std does not move for a constant column; only the mean half flows
    assert np.allclose(grad, 0.0)


# --------------------------------------------------------------- encoder ops

def small_encoder(feat_dim=3, h=4, d_aid=3, n_classes=2, seed=0):
    return aid.FrameEncoder(
        frame_net=nk.DenseNet.init([feat_dim, h, h], seed=seed,
                                   out_activation="relu"),
        proj_net=nk.DenseNet.init([2 * h, d_aid], seed=seed + 1),
        head=nk.DenseNet.init([d_aid, n_classes], seed=seed + 2),
        classes=("en-AU", "en-US")[:n_classes])


def test_encoder_rejects_mismatched_projection():
    with pytest.raises(ValueError, match="twice"):
        aid.FrameEncoder(frame_net=nk.DenseNet.init([3, 4, 4], seed=0),
                         proj_net=nk.DenseNet.init([5, 3], seed=1),
                         head=nk.DenseNet.init([3, 2], seed=2),
                         classes=("a", "b"))


def test_encode_utterance_shape_and_input_checks():
    enc = small_encoder()
    emb = aid.encode_utterance(enc, np.ones((6, 3)))
    assert emb.shape == (3,)
    with pytest.raises(ValueError, match="frames"):
        aid.encode_utterance(enc, np.ones(3))
    with pytest.raises(ValueError, match="frames"):
        aid.encode_utterance(enc, np.ones((0, 3)))


def test_fusion_batch_step_loss_value():
    net = nk.DenseNet.init([2, 3], seed=5)
    x = np.array([[0.5, -0.2], [1.0, 0.3]])
    y = np.array([0, 2])
    loss, _ = aid.fusion_batch_step(net, x, y)
    out, _ = nk.dense_forward(net, x)
    lp = nk.log_softmax(out)
    assert np.isclose(loss, -(lp[0, 0] + lp[1, 2]) / 2)


def test_fusion_batch_step_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    for trial in range(20):
        net = nk.DenseNet.init([3, 5, 4], seed=trial)
        x = rng.standard_normal((4, 3))
        _, cache = nk.dense_forward(net, x)
        if min(float(np.min(np.abs(z))) for z in cache.pre[:-1]) < 1e-3:
            continue  # too close to a relu kink for central differences
        y = rng.integers(0, 4, size=4)
        params = net.params()

        def loss_and_grad(_):
            return aid.fusion_batch_step(net, x, y)

        worst = nk.finite_diff_check(loss_and_grad, params)
        assert worst < 1e-4


def test_e2e_step_gradients_match_finite_differences():
    rng = np.random.default_rng(23)
    checked = 0
    for trial in range(40):
        enc = small_encoder(seed=trial)
        x = rng.standard_normal((7, 3)) * 2.0
        hidden, cache = nk.dense_forward(enc.frame_net, mean_normalize(x))
        if min(float(np.min(np.abs(z))) for z in cache.pre) < 2e-3:
            continue
        if float(np.min(hidden.std(axis=0))) < 1e-2:
            continue  # f.d. through sqrt near 0 is ill-conditioned

        def loss_and_grad(_):
            return aid.e2e_utterance_step(enc, x, 1)

        worst = nk.finite_diff_check(loss_and_grad, enc.params())
        assert worst < 1e-4
        checked += 1
        if checked >= 10:
            break
    assert checked >= 5


# ----------------------------------------------------------------- training

def test_train_fusion_separates_clusters():
    utts = two_cluster_corpus()
    train, dev = utts[:72], utts[72:]
    model = aid.train_fusion(train, dev, hyper=aid.TrainConfig(
        epochs=4, fusion_hidden=(8,), seed=0))
    assert model.classes == ("en-AU", "en-US")
    assert max(model.history["dev_accuracy"]) == 1.0
    rep = aid.evaluate(model, dev)
    assert rep.accuracy == 100.0


def test_train_fusion_deterministic():
    utts = two_cluster_corpus()
    train, dev = utts[:72], utts[72:]
    hyper = aid.TrainConfig(epochs=2, fusion_hidden=(8,), seed=3)
    m1 = aid.train_fusion(train, dev, hyper=hyper)
    m2 = aid.train_fusion(train, dev, hyper=hyper)
    for p1, p2 in zip(m1.net.params(), m2.net.params()):
        assert np.array_equal(p1, p2)


def test_train_fusion_epoch1_loss_decreases():
    utts = two_cluster_corpus()
    train, dev = utts[:72], utts[72:]
    model = aid.train_fusion(train, dev, hyper=aid.TrainConfig(
        epochs=1, fusion_hidden=(8,), seed=1))
    h = model.history
    assert h["epoch1_loss_end"] < h["epoch1_loss_start"]


def test_train_fusion_best_checkpoint_is_earliest_max():
    utts = two_cluster_corpus()
    train, dev = utts[:72], utts[72:]
    model = aid.train_fusion(train, dev, hyper=aid.TrainConfig(
        epochs=5, fusion_hidden=(8,), seed=0))
    accs = model.history["dev_accuracy"]
    assert model.history["best_epoch"] == accs.index(max(accs)) + 1


def test_train_fusion_single_class_rejected():
    utts = [emb_utt(f"u{i}", f"s{i}", "en-US", np.ones(6)) for i in range(8)]
    with pytest.raises(ValueError, match="two accent classes"):
        aid.train_fusion(utts, utts)


def test_train_fusion_unknown_dev_class_rejected():
    train = two_cluster_corpus()[:20]
    rogue = [emb_utt("x", "sx", "en-ZZ", np.zeros(6))]
    with pytest.raises(ValueError, match="en-ZZ"):
        aid.train_fusion(train, rogue)


def test_train_fusion_names_utterance_without_embeddings():
    utts = two_cluster_corpus()[:20]
    utts.append(feat_utt("feat-only", "sf", "en-US", np.ones((4, 2)),
                         n_words=2))
    with pytest.raises(ValueError, match="feat-only"):
        aid.train_fusion(utts, utts[:4])


def test_train_fusion_lr_starts_at_base():
    utts = two_cluster_corpus()
    model = aid.train_fusion(utts[:72], utts[72:], hyper=aid.TrainConfig(
        epochs=1, fusion_hidden=(4,), seed=0))
    assert model.history["lr_first_batch"][0] == pytest.approx(1e-8)


def variance_coded_corpus(n_per=30, feat_dim=6, frames=20, seed=0):
    """Class signal lives in per-frame variance, so it survives
    mean normalization."""
    rng = np.random.default_rng(seed)
    dirs = {"en-AU": np.eye(feat_dim)[0], "en-US": np.eye(feat_dim)[1]}
    utts = []
    for i in range(n_per):
        for accent, d in dirs.items():
            signs = rng.choice([-1.0, 1.0], size=frames)[:, None]
            x = signs * d[None, :] * 3.0 + 0.1 * rng.standard_normal((frames, feat_dim))
            utts.append(feat_utt(f"{accent}-{i}", f"{accent}-s{i % 5}",
                                 accent, x, n_words=1 + i % 25))
    return utts


def test_train_e2e_learns_variance_coded_classes():
    utts = variance_coded_corpus()
    train, dev = utts[:44], utts[44:]
    enc = aid.train_e2e_aid(train, dev, hyper=aid.TrainConfig(
        epochs=4, enc_hidden=8, d_aid=4, seed=0))
    assert max(enc.history["dev_accuracy"]) == 1.0
    assert len(enc.history["dev_accuracy"]) == 4


def test_train_e2e_requires_features():
    utts = two_cluster_corpus()[:12]
    with pytest.raises(ValueError, match="no features"):
        aid.train_e2e_aid(utts, utts)


def test_train_e2e_curriculum_plan_changes_epoch1_exposure():
    utts = variance_coded_corpus()
    train, dev = utts[:44], utts[44:]
    hyper = aid.TrainConfig(epochs=1, enc_hidden=4, d_aid=4, seed=0)
    full = aid.train_e2e_aid(train, dev, hyper=hyper)
    startled = aid.train_e2e_aid(train, dev, plan=[(21, None), (1, 20)],
                                 hyper=hyper)
    # with a two-stage plan epoch 1 sees only the 21+ bucket, so the
    # first-epoch checkpoint differs from the plain run
    diff = any(not np.array_equal(a, b)
               for a, b in zip(full.params(), startled.params()))
    assert diff


# -------------------------------------------------------------- predictions

def test_predict_fusion_matches_manual_softmax():
    utts = two_cluster_corpus()[:40]
    model = aid.train_fusion(utts[:32], utts[32:], hyper=aid.TrainConfig(
        epochs=1, fusion_hidden=(4,), seed=0))
    u = utts[5]
    p = aid.predict(model, u)
    out, _ = nk.dense_forward(model.net, u.embeddings.concat(model.streams))
    assert np.allclose(p, nk.softmax(out))
    assert np.isclose(p.sum(), 1.0)


def test_predict_rejects_other_models():
    with pytest.raises(TypeError):
        aid.predict(object(), two_cluster_corpus()[0])


def test_predict_fusion_requires_embeddings():
    utts = two_cluster_corpus()[:40]
    model = aid.train_fusion(utts[:32], utts[32:], hyper=aid.TrainConfig(
        epochs=1, fusion_hidden=(4,), seed=0))
    bare = feat_utt("bare", "s", "en-US", np.ones((3, 2)))
    with pytest.raises(ValueError, match="bare"):
        aid.predict(model, bare)


class _FixedModel(aid.FusionModel):
    """Fusion model wrapper with hand-set weights: argmax of the first
    n_classes embedding entries."""


def fixed_model(n_classes=2, d=2):
    net = nk.DenseNet.init([3 * d, n_classes], seed=0)
    w = np.zeros((n_classes, 3 * d))
    for k in range(n_classes):
        w[k, k] = 1.0
    net.layers[0].w[:] = w
    net.layers[0].b[:] = 0.0
    return _FixedModel(net, ("lid", "sid", "aid"), ("en-AU", "en-US"),
                       {"lid": d, "sid": d, "aid": d})


def test_evaluate_confusion_hand_case():
    model = fixed_model()
    # en-AU utterances: 3 classified right, 1 wrong; en-US: 2 right
    def vec(first_bigger):
        return np.array([1.0, 0.0, 0, 0, 0, 0] if first_bigger
                        else [0.0, 1.0, 0, 0, 0, 0])
    test = ([emb_utt(f"au{i}", "s1", "en-AU", vec(True), n_words=2)
             for i in range(3)]
            + [emb_utt("au-bad", "s1", "en-AU", vec(False), n_words=25)]
            + [emb_utt(f"us{i}", "s2", "en-US", vec(False), n_words=12)
               for i in range(2)])
    rep = aid.evaluate(model, test)
    assert rep.accuracy == pytest.approx(100.0 * 5 / 6)
    assert np.allclose(rep.confusion, [[75.0, 25.0], [0.0, 100.0]])
    assert list(rep.row_counts) == [4, 2]
    assert rep.bucket_accuracy == {"1-2": 100.0, "21+": 0.0, "11-20": 100.0}
    d = rep.to_dict()
    assert d["accuracy"] == rep.accuracy
    assert d["confusion"][0][0] == 75.0


def test_evaluate_rejects_empty_and_unknown():
    model = fixed_model()
    with pytest.raises(ValueError, match="empty"):
        aid.evaluate(model, [])
    stranger = emb_utt("s", "sp", "en-GB", np.zeros(6))
    with pytest.raises(ValueError, match="en-GB"):
        aid.evaluate(model, [stranger])


def test_evaluate_confusion_rows_sum_to_100():
    utts = two_cluster_corpus()
    model = aid.train_fusion(utts[:72], utts[72:], hyper=aid.TrainConfig(
        epochs=1, fusion_hidden=(4,), seed=0))
    rep = aid.evaluate(model, utts[72:])
    for row, count in zip(rep.confusion, rep.row_counts):
        if count:
            assert np.isclose(row.sum(), 100.0)


# ------------------------------------------------------------------- export

def test_export_embeddings_round_trip(tmp_path):
    from accentlab.corpus import read_embedding_matrix
    utts = two_cluster_corpus()[:10]
    model = aid.train_fusion(utts[:8], utts[8:], hyper=aid.TrainConfig(
        epochs=1, fusion_hidden=(4,), seed=0))
    paths = aid.export_embeddings(model, utts, str(tmp_path))
    m = read_embedding_matrix(paths["lid"])
    assert m.shape == (10, 2)
    # float32 storage: round-trip only to f4 precision
    assert np.allclose(m[3], utts[3].embeddings.lid, atol=1e-6)
    lines = open(paths["labels"]).read().splitlines()
    assert lines[0] == "utt_id,speaker_id,accent"
    assert len(lines) == 11


def test_export_embeddings_encoder_computes_aid(tmp_path):
    from accentlab.corpus import read_embedding_matrix
    utts = variance_coded_corpus()[:6]
    enc = aid.train_e2e_aid(utts[:4], utts[4:], hyper=aid.TrainConfig(
        epochs=1, enc_hidden=4, d_aid=3, seed=0))
    paths = aid.export_embeddings(enc, utts, str(tmp_path))
    m = read_embedding_matrix(paths["aid"])
    assert m.shape == (6, 3)
    want = aid.encode_utterance(enc, mean_normalize(utts[0].features))
    assert np.allclose(m[0], want, atol=1e-5)
    assert "lid" not in paths

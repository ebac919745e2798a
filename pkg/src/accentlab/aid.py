"""Accent identification models and training.

FrameEncoder: a small frame-wise encoder with mean+std statistics pooling
that produces fixed-length utterance embeddings and classifies accents
end to end. FusionModel: the multi-embedding classifier over concatenated
(lid, sid, aid) stream vectors, trained with the stream producers frozen.
Both train with Adam, decoupled weight decay, and a triangular2 cyclical
learning rate, optionally under a length curriculum; the checkpoint with
the best dev accuracy wins, earlier epoch on ties.
"""

import numpy as np

from . import curriculum as cur
from . import numkit as nk
from .corpus import mean_normalize


class TrainConfig:
    """Shared hyperparameters for the AID trainers."""

    def __init__(self, epochs=10, batch_size=32, base_lr=1e-8, max_lr=1e-2,
                 step_size=None, weight_decay=2e-5, seed=0,
                 fusion_hidden=(256, 256), enc_hidden=128, d_aid=192):
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.base_lr = base_lr
        self.max_lr = max_lr
        self.step_size = step_size  # None: two epochs' worth of batches
        self.weight_decay = weight_decay
        self.seed = int(seed)
        self.fusion_hidden = tuple(fusion_hidden)
        self.enc_hidden = int(enc_hidden)
        self.d_aid = int(d_aid)

    def schedule(self, n_train):
        ss = self.step_size
        if ss is None:
            ss = max(1, 2 * -(-n_train // self.batch_size))
        return nk.LrSchedule(self.base_lr, self.max_lr, ss, "triangular2")


class FusionModel:
    def __init__(self, net, streams, classes, dims):
        self.net = net
        self.streams = tuple(streams)
        self.classes = tuple(classes)
        self.dims = dict(dims)
        self.history = {}


class FrameEncoder:
    """frame net (feat -> hidden -> hidden), mean+std pooling,
    projection (2*hidden -> d_aid), classifier head (d_aid -> classes)."""

    def __init__(self, frame_net, proj_net, head, classes):
        if proj_net.in_dim != 2 * frame_net.out_dim:
            raise ValueError("projection input must be twice the frame width")
        self.frame_net = frame_net
        self.proj_net = proj_net
        self.head = head
        self.classes = tuple(classes)
        self.history = {}

    def params(self):
        return self.frame_net.params() + self.proj_net.params() + self.head.params()


def stats_pool(h):
    """Mean and population std per channel over frames: [T, h] -> [2h].

    Columns that are exactly constant yield an exact 0 in the std half.
    """
    t = h.shape[0]
    mu = h.mean(axis=0)
    dev = h - mu
    var = np.square(dev).mean(axis=0)
    const = (h == h[0]).all(axis=0)
    var[const] = 0.0
    std = np.sqrt(var)
    return np.concatenate([mu, std]), (dev, std, t)


def stats_pool_backward(grad, pool_cache):
    dev, std, t = pool_cache
    h = dev.shape[1]
    gmu, gstd = grad[:h], grad[h:]
    safe = np.where(std > 0.0, std, 1.0)
    # d std_j / d H_tj = dev_tj / (T * std_j); zero-variance channels get
    # the zero subgradient
    return gmu / t + (gstd * (std > 0.0) / (t * safe)) * dev


def encode_utterance(encoder, features):
    """Fixed-length aid embedding for one utterance's frame matrix."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"need a non-empty [frames, dim] matrix, got shape {x.shape}")
    hidden, _ = nk.dense_forward(encoder.frame_net, x)
    pooled, _ = stats_pool(hidden)
    emb, _ = nk.dense_forward(encoder.proj_net, pooled)
    return emb


def fusion_batch_step(net, x, labels):
    """Mean cross-entropy over a batch plus parameter gradients."""
    out, cache = nk.dense_forward(net, x)
    lp = nk.log_softmax(out)
    n = x.shape[0]
    loss = float(-lp[np.arange(n), labels].mean())
    grad = np.exp(lp)
    grad[np.arange(n), labels] -= 1.0
    grads, _ = nk.dense_backward(net, cache, grad / n)
    return loss, grads


def e2e_utterance_step(encoder, features, label):
    """Loss and gradients (encoder.params() order) for one utterance."""
    x = mean_normalize(features)
    hidden, c_frames = nk.dense_forward(encoder.frame_net, x)
    pooled, c_pool = stats_pool(hidden)
    emb, c_proj = nk.dense_forward(encoder.proj_net, pooled)
    logits, c_head = nk.dense_forward(encoder.head, emb)
    lp = nk.log_softmax(logits)
    loss = nk.cross_entropy(lp, label)
    grad = np.exp(lp)
    grad[label] -= 1.0
    g_head, g_emb = nk.dense_backward(encoder.head, c_head, grad)
    g_proj, g_pooled = nk.dense_backward(encoder.proj_net, c_proj, g_emb)
    g_frames = stats_pool_backward(g_pooled, c_pool)
    g_frame, _ = nk.dense_backward(encoder.frame_net, c_frames, g_frames)
    return loss, g_frame + g_proj + g_head


def _class_labels(train, dev):
    classes = tuple(sorted({u.accent for u in train}))
    if len(classes) < 2:
        raise ValueError(f"need at least two accent classes, found {classes}")
    missing = {u.accent for u in dev} - set(classes)
    if missing:
        raise ValueError(
            f"dev classes absent from train set: {sorted(missing)}")
    return classes


def _make_plan(train, plan):
    if plan is None:
        return cur.assign_buckets(train, [(1, None)])
    if isinstance(plan, cur.CurriculumPlan):
        return plan
    # raw boundary tuples
    return cur.assign_buckets(train, plan)


def _run_training(net_params, batch_loss_fn, dev_acc_fn, train, plan, hyper):
    """Shared loop: curriculum epochs, cyclical LR, best-dev checkpoint.

    batch_loss_fn(batch) -> (loss, grads); dev_acc_fn() -> accuracy.
    Returns history dict; net_params end up at the best checkpoint.
    """
    schedule = hyper.schedule(len(train))
    state = nk.OptimizerState.for_params(net_params,
                                         weight_decay=hyper.weight_decay)
    epoch1 = cur.epoch_subset(plan, 1, hyper.seed)
    history = {"dev_accuracy": [], "lr_first_batch": [],
               "epoch1_loss_start": batch_loss_fn(epoch1)[0]}
    best = (-1.0, None, -1)
    t = 0
    for epoch in range(1, hyper.epochs + 1):
        order = cur.epoch_subset(plan, epoch, hyper.seed)
        history["lr_first_batch"].append(nk.cyclical_lr(schedule, t))
        for s in range(0, len(order), hyper.batch_size):
            batch = order[s:s + hyper.batch_size]
            _, grads = batch_loss_fn(batch)
            nk.adam_step(net_params, grads, state,
                         nk.cyclical_lr(schedule, t))
            t += 1
        if epoch == 1:
            history["epoch1_loss_end"] = batch_loss_fn(epoch1)[0]
        acc = dev_acc_fn()
        history["dev_accuracy"].append(acc)
        if acc > best[0]:
            best = (acc, [p.copy() for p in net_params], epoch)
    history["best_epoch"] = best[2]
    for p, bp in zip(net_params, best[1]):
        p[:] = bp
    return history


def train_fusion(train, dev, streams=("lid", "sid", "aid"), plan=None,
                 hyper=None):
    """Train the multi-embedding classifier on frozen stream vectors."""
    hyper = hyper or TrainConfig()
    streams = tuple(s for s in ("lid", "sid", "aid") if s in streams)
    if not streams:
        raise ValueError("no streams requested")
    classes = _class_labels(train, dev)
    plan = _make_plan(train, plan)

    def stream_vec(u):
        if not u.has_embeddings():
            raise ValueError(f"{u.utt_id}: no embeddings")
        try:
            return u.embeddings.concat(streams)
        except ValueError as exc:
            raise ValueError(f"{u.utt_id}: {exc}") from exc

    first = stream_vec(train[0])
    dims = {}
    pos = 0
    for s in streams:
        d = len(getattr(train[0].embeddings, s))
        dims[s] = d
        pos += d
    if pos != len(first):
        raise ValueError("stream dims inconsistent")

    net = nk.DenseNet.init([pos, *hyper.fusion_hidden, len(classes)],
                           seed=hyper.seed)
    label_of = {c: i for i, c in enumerate(classes)}

    def batch_loss(batch):
        x = np.stack([stream_vec(u) for u in batch])
        y = np.array([label_of[u.accent] for u in batch])
        return fusion_batch_step(net, x, y)

    dev_x = np.stack([stream_vec(u) for u in dev])
    dev_y = np.array([label_of[u.accent] for u in dev])

    def dev_acc():
        out, _ = nk.dense_forward(net, dev_x)
        return float((out.argmax(axis=1) == dev_y).mean())

    model = FusionModel(net, streams, classes, dims)
    model.history = _run_training(net.params(), batch_loss, dev_acc,
                                  train, plan, hyper)
    return model


def train_e2e_aid(train, dev, plan=None, hyper=None):
    """Train the frame encoder end to end on utterance features."""
    hyper = hyper or TrainConfig()
    classes = _class_labels(train, dev)
    plan = _make_plan(train, plan)
    for u in train:
        if not u.has_features():
            raise ValueError(f"{u.utt_id}: no features for E2E training")
    feat_dim = train[0].features.shape[1]
    h = hyper.enc_hidden
    encoder = FrameEncoder(
        frame_net=nk.DenseNet.init([feat_dim, h, h], seed=hyper.seed,
                                   out_activation="relu"),
        proj_net=nk.DenseNet.init([2 * h, hyper.d_aid], seed=hyper.seed + 100),
        head=nk.DenseNet.init([hyper.d_aid, len(classes)],
                              seed=hyper.seed + 200),
        classes=classes)
    label_of = {c: i for i, c in enumerate(classes)}
    params = encoder.params()

    def batch_loss(batch):
        total = 0.0
        acc = [np.zeros_like(p) for p in params]
        for u in batch:
            loss, grads = e2e_utterance_step(encoder, u.features,
                                             label_of[u.accent])
            total += loss
            for a, g in zip(acc, grads):
                a += g
        n = len(batch)
        return total / n, [a / n for a in acc]

    def dev_acc():
        correct = 0
        for u in dev:
            p = predict(encoder, u)
            correct += encoder.classes[int(np.argmax(p))] == u.accent
        return correct / len(dev)

    encoder.history = _run_training(params, batch_loss, dev_acc,
                                    train, plan, hyper)
    return encoder


def model_logits(model, utt):
    """Raw class scores for one utterance, before any softmax."""
    if isinstance(model, FusionModel):
        if not utt.has_embeddings():
            raise ValueError(f"{utt.utt_id}: no embeddings")
        try:
            x = utt.embeddings.concat(model.streams)
        except ValueError as exc:
            raise ValueError(f"{utt.utt_id}: {exc}") from exc
        out, _ = nk.dense_forward(model.net, x)
    elif isinstance(model, FrameEncoder):
        if not utt.has_features():
            raise ValueError(f"{utt.utt_id}: no features")
        emb = encode_utterance(model, mean_normalize(utt.features))
        out, _ = nk.dense_forward(model.head, emb)
    else:
        raise TypeError(f"cannot predict with {type(model).__name__}")
    return out


def predict(model, utt):
    """Probability vector over the model's accent classes."""
    return nk.softmax(model_logits(model, utt))


class EvalReport:
    def __init__(self, accuracy, classes, confusion, row_counts,
                 bucket_accuracy):
        self.accuracy = accuracy            # percent
        self.classes = classes
        self.confusion = confusion          # row-normalized percent
        self.row_counts = row_counts
        self.bucket_accuracy = bucket_accuracy  # label -> percent

    def to_dict(self):
        return {"accuracy": self.accuracy, "classes": list(self.classes),
                "confusion": [[float(v) for v in row] for row in self.confusion],
                "row_counts": [int(c) for c in self.row_counts],
                "bucket_accuracy": dict(self.bucket_accuracy)}


def evaluate(model, test, boundaries=cur.DEFAULT_BOUNDARIES):
    """Accuracy, row-normalized confusion, and per-bucket accuracies."""
    if not test:
        raise ValueError("empty test set")
    classes = model.classes
    idx = {c: i for i, c in enumerate(classes)}
    n = len(classes)
    counts = np.zeros((n, n), dtype=np.int64)
    correct_by_bucket = {}
    plan = cur.assign_buckets(test, boundaries)
    for u in test:
        if u.accent not in idx:
            raise ValueError(f"{u.utt_id}: accent {u.accent!r} unknown to model")
        pred = int(np.argmax(predict(model, u)))
        counts[idx[u.accent], pred] += 1
        label = cur.bucket_label(plan.boundaries[plan.subset_of(u) - 1])
        hit, total = correct_by_bucket.get(label, (0, 0))
        correct_by_bucket[label] = (hit + (pred == idx[u.accent]), total + 1)
    row_counts = counts.sum(axis=1)
    confusion = np.zeros((n, n))
    for i in range(n):
        if row_counts[i]:
            confusion[i] = 100.0 * counts[i] / row_counts[i]
    accuracy = 100.0 * counts.trace() / len(test)
    buckets = {label: 100.0 * hit / total
               for label, (hit, total) in correct_by_bucket.items()}
    return EvalReport(accuracy, classes, confusion, row_counts, buckets)


def export_embeddings(model, utts, out_dir):
    """One EMB1 matrix per available stream plus a labels CSV.

    For a FrameEncoder the aid stream is computed by the encoder; lid/sid
    come from the utterances when present.
    """
    import csv
    import os
    from .corpus import write_embedding_matrix

    os.makedirs(out_dir, exist_ok=True)
    columns = {}
    if isinstance(model, FrameEncoder):
        columns["aid"] = [encode_utterance(model, mean_normalize(u.features))
                          for u in utts]
        for stream in ("lid", "sid"):
            if all(u.has_embeddings() and getattr(u.embeddings, stream) is not None
                   for u in utts):
                columns[stream] = [getattr(u.embeddings, stream) for u in utts]
    else:
        for stream in model.streams:
            columns[stream] = [getattr(u.embeddings, stream) for u in utts]
    paths = {}
    for stream, vecs in sorted(columns.items()):
        p = os.path.join(out_dir, f"{stream}.emb1")
        write_embedding_matrix(p, np.stack(vecs))
        paths[stream] = p
    labels = os.path.join(out_dir, "labels.csv")
    with open(labels, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["utt_id", "speaker_id", "accent"])
        for u in utts:
            w.writerow([u.utt_id, u.speaker_id, u.accent])
    paths["labels"] = labels
    return paths

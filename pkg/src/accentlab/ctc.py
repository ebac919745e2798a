"""CTC loss, gradients, decoding, and the toy acoustic model trainer.

Everything runs in log space. The forward loss sums path probabilities
over the blank-interleaved target with the usual two-transition
recursion; gradients come from the forward-backward occupancy; a
brute-force path enumerator serves as the oracle at test scale. The
acoustic model is a frame-wise dense net (no temporal context), trained
only on native-labeled transcribed speech.
"""

import itertools
import math

import numpy as np

from . import numkit as nk
from . import _kernels
from .corpus import DEFAULT_SYMBOLS

NATIVE_ACCENT = "en-US"


class SymbolTable:
    """Blank at index 0, then the printable symbols in fixed order."""

    def __init__(self, symbols=DEFAULT_SYMBOLS):
        if len(set(symbols)) != len(symbols):
            raise ValueError("duplicate symbols")
        self.symbols = str(symbols)
        self.blank = 0
        self._index = {c: i + 1 for i, c in enumerate(self.symbols)}

    @property
    def size(self):
        return len(self.symbols) + 1

    def index_of(self, ch):
        try:
            return self._index[ch]
        except KeyError:
            raise ValueError(f"character {ch!r} not in the symbol table") from None

    def char_of(self, idx):
        if not 1 <= idx < self.size:
            raise ValueError(f"index {idx} out of range (blank is 0)")
        return self.symbols[idx - 1]

    def encode(self, text):
        """Symbol indices for text; uppercase folds to lowercase."""
        out = np.empty(len(text), dtype=np.int32)
        for i, ch in enumerate(text.lower()):
            out[i] = self.index_of(ch)
        return out

    def decode(self, indices):
        return "".join(self.char_of(int(i)) for i in indices)


def _check_rows(log_probs):
    lp = np.asarray(log_probs, dtype=np.float64)
    if lp.ndim != 2 or lp.shape[0] < 1:
        raise ValueError(f"log_probs must be [T, S], got shape {lp.shape}")
    sums = np.exp(lp).sum(axis=1)
    bad = np.abs(sums - 1.0) > 1e-6
    if bad.any():
        t = int(np.argmax(bad))
        raise ValueError(
            f"log_probs row {t} is not a log-distribution (exp-sum {sums[t]})")
    return lp


def _check_target(target, n_symbols, blank=0):
    t = np.asarray(target, dtype=np.int32).reshape(-1)
    if (t == blank).any():
        raise ValueError("target contains the blank symbol")
    if t.size and (t.min() < 0 or t.max() >= n_symbols):
        raise ValueError(f"target indices outside [0, {n_symbols})")
    return t


def extend_with_blanks(target, blank=0):
    """Blank-interleaved target: b t1 b t2 b ... b tn b."""
    t = np.asarray(target, dtype=np.int32).reshape(-1)
    ext = np.full(2 * t.size + 1, blank, dtype=np.int32)
    ext[1::2] = t
    return ext


def ctc_forward_loss(log_probs, target):
    """-ln P(target | log_probs) over all collapsing paths.

    Infeasible targets (minimum path length exceeds T) give +inf.
    """
    lp = _check_rows(log_probs)
    t = _check_target(target, lp.shape[1])
    return _kernels.ctc_loss(lp, extend_with_blanks(t))


def ctc_backward_grad(log_probs, target):
    """Gradient of the CTC loss wrt the logits: softmax - occupancy.

    Also returns the loss. Rows of the gradient sum to 0. Infeasible
    targets are rejected: there is no gradient at +inf.
    """
    lp = _check_rows(log_probs)
    t = _check_target(target, lp.shape[1])
    loss, gamma = _kernels.ctc_loss_grad(lp, extend_with_blanks(t))
    if math.isinf(loss):
        raise ValueError(
            f"target of length {t.size} is infeasible in {lp.shape[0]} frames")
    return loss, np.exp(lp) - gamma


def ctc_bruteforce(log_probs, target):
    """Oracle loss: enumerate every length-T path and sum the collapsers."""
    lp = _check_rows(log_probs)
    t, s = lp.shape
    if s ** t > 10 ** 6:
        raise ValueError(f"{s}^{t} paths exceed the brute-force budget")
    want = [int(c) for c in _check_target(target, s)]
    total = -math.inf
    for path in itertools.product(range(s), repeat=t):
        collapsed = [c for i, c in enumerate(path)
                     if c != 0 and (i == 0 or c != path[i - 1])]
        if collapsed != want:
            continue
        total = np.logaddexp(total, sum(lp[i, c] for i, c in enumerate(path)))
    return float(-total)


def greedy_decode(log_probs, table):
    """Best-path decoding: frame argmax, collapse repeats, drop blanks.

    Argmax ties go to the lowest index, so blank wins a tie.
    """
    lp = _check_rows(log_probs)
    best = lp.argmax(axis=1)
    chars = []
    prev = -1
    for idx in best:
        if idx != prev and idx != table.blank:
            chars.append(table.char_of(int(idx)))
        prev = idx
    return "".join(chars)


class CtcModel:
    """Frame-wise acoustic model: feat_dim -> hidden -> hidden -> |S|."""

    def __init__(self, table, net):
        if net.out_dim != table.size:
            raise ValueError(
                f"net emits {net.out_dim} classes, table has {table.size}")
        self.table = table
        self.net = net
        self.history = {}

    def log_probs(self, features):
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError(f"need a [frames, dim] matrix, got shape {x.shape}")
        logits, _ = nk.dense_forward(self.net, x)
        return nk.log_softmax(logits)


def transcribe(model, features):
    return greedy_decode(model.log_probs(features), model.table)


class CtcTrainConfig:
    def __init__(self, epochs=40, batch_size=16, lr=1e-3, patience=3,
                 lr_factor=0.5, hidden=64, seed=0):
        if not 0 < lr_factor < 1:
            raise ValueError(f"lr_factor must be in (0, 1), got {lr_factor}")
        self.epochs = int(epochs)
        self.batch_size = int(batch_size)
        self.lr = lr
        self.patience = int(patience)
        self.lr_factor = lr_factor
        self.hidden = int(hidden)
        self.seed = int(seed)


def _utt_step(net, table, u):
    """Loss and parameter gradients for one utterance; None grads when
    the target does not fit in the frame count."""
    logits, cache = nk.dense_forward(net, u.features)
    lp = nk.log_softmax(logits)
    ext = extend_with_blanks(table.encode(u.transcript))
    loss, gamma = _kernels.ctc_loss_grad(lp, ext)
    if math.isinf(loss):
        return loss, None
    grads, _ = nk.dense_backward(net, cache, np.exp(lp) - gamma)
    return loss, grads


def train_ctc(train, dev, hyper=None, table=None):
    """Adam at a constant base rate, halved on dev-loss plateaus.

    The gradient step averages over the feasible utterances of each
    batch; infeasible ones still count toward the reported loss (+inf).
    Returns the model at its best dev-loss checkpoint (earlier epoch on
    ties). The acoustic features are consumed raw: the model is
    frame-wise, so per-utterance normalization would only smear
    utterance-level context into every frame.
    """
    hyper = hyper or CtcTrainConfig()
    table = table or SymbolTable()
    if not train or not dev:
        raise ValueError("train and dev sets must be non-empty")
    for u in train:
        if u.accent != NATIVE_ACCENT:
            raise ValueError(
                f"{u.utt_id}: train set must be {NATIVE_ACCENT} only, "
                f"got {u.accent!r}")
        if not u.has_features() or u.transcript is None:
            raise ValueError(f"{u.utt_id}: needs features and a transcript")
        table.encode(u.transcript)  # rejects out-of-alphabet characters

    feat_dim = train[0].features.shape[1]
    h = hyper.hidden
    net = nk.DenseNet.init([feat_dim, h, h, table.size], seed=hyper.seed)
    model = CtcModel(table, net)
    params = net.params()
    state = nk.OptimizerState.for_params(params, weight_decay=0.0)

    def dev_loss():
        total, n = 0.0, 0
        for u in dev:
            loss = _kernels.ctc_loss(
                model.log_probs(u.features),
                extend_with_blanks(table.encode(u.transcript)))
            if math.isfinite(loss):
                total += loss
                n += 1
        return total / n if n else math.inf

    history = {"dev_loss": [], "lr": [], "best_epoch": -1}
    lr = hyper.lr
    best = (math.inf, None, -1)
    stale = 0
    for epoch in range(1, hyper.epochs + 1):
        order = np.random.default_rng(hyper.seed ^ epoch).permutation(len(train))
        for s in range(0, len(order), hyper.batch_size):
            batch = [train[i] for i in order[s:s + hyper.batch_size]]
            acc = [np.zeros_like(p) for p in params]
            feasible = 0
            for u in batch:
                _, grads = _utt_step(net, table, u)
                if grads is None:
                    continue
                feasible += 1
                for a, g in zip(acc, grads):
                    a += g
            if feasible:
                nk.adam_step(params, [a / feasible for a in acc], state, lr)
        cur = dev_loss()
        history["dev_loss"].append(cur)
        history["lr"].append(lr)
        if cur < best[0]:
            best = (cur, [p.copy() for p in params], epoch)
            stale = 0
        else:
            stale += 1
            if stale >= hyper.patience:
                lr *= hyper.lr_factor
                stale = 0
    history["best_epoch"] = best[2]
    if best[1] is not None:
        for p, bp in zip(params, best[1]):
            p[:] = bp
    model.history = history
    return model

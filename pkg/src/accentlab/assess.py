"""Accentedness scoring and the statistics behind the rankings.

Two per-utterance score kinds: `aid_log_softmax` (log-probability the
binary accent classifier assigns to en-US; higher means less accented)
and `cer` (character error rate of the native-trained recognizer; lower
means less accented). Speakers are summarized by the median with box
statistics, ranked, and correlated with exact two-sided Pearson
p-values computed through a hand-rolled regularized incomplete beta.
"""

import csv
import math

import numpy as np

from . import _kernels
from . import numkit as nk
from .aid import model_logits

NATIVE_ACCENT = "en-US"
SCORE_KINDS = ("aid_log_softmax", "cer")


# --------------------------------------------------------------- distances

def edit_distance(a, b):
    """Unit-cost Levenshtein distance between two strings."""
    return _kernels.levenshtein(a, b)


def cer(hypothesis, reference):
    """edit_distance / reference length, case-folded; may exceed 1."""
    hyp = hypothesis.lower()
    ref = reference.lower()
    if not ref:
        raise ValueError("reference is empty after normalization")
    return edit_distance(hyp, ref) / len(ref)


# ------------------------------------------------------------------ scores

def aid_accentedness_score(model, utt):
    """log_softmax of the en-US output of a binary accent classifier.

    Higher (closer to 0) means the model hears the utterance as more
    native. Only 2-class models with an en-US output are accepted.
    """
    classes = tuple(model.classes)
    if len(classes) != 2:
        raise ValueError(f"model has {len(classes)} classes, need exactly 2")
    if NATIVE_ACCENT not in classes:
        raise ValueError(f"model classes {classes} lack {NATIVE_ACCENT!r}")
    logits = model_logits(model, utt)
    return float(nk.log_softmax(logits)[classes.index(NATIVE_ACCENT)])


class ScoreRow:
    __slots__ = ("utt_id", "speaker_id", "kind", "value")

    def __init__(self, utt_id, speaker_id, kind, value):
        if kind not in SCORE_KINDS:
            raise ValueError(f"unknown score kind {kind!r}")
        value = float(value)
        if kind == "cer" and value < 0:
            raise ValueError(f"{utt_id}: cer {value} is negative")
        if kind == "aid_log_softmax" and value > 0:
            raise ValueError(f"{utt_id}: log-softmax {value} is positive")
        self.utt_id = utt_id
        self.speaker_id = speaker_id
        self.kind = kind
        self.value = value


class ScoreTable:
    """Per-utterance rows of a single score kind."""

    def __init__(self, rows):
        rows = list(rows)
        if not rows:
            raise ValueError("empty score table")
        kinds = {r.kind for r in rows}
        if len(kinds) != 1:
            raise ValueError(f"mixed score kinds in one table: {sorted(kinds)}")
        self.rows = rows
        self.kind = rows[0].kind

    def speakers(self):
        return sorted({r.speaker_id for r in self.rows})

    def values_by_speaker(self):
        out = {}
        for r in self.rows:
            out.setdefault(r.speaker_id, []).append(r.value)
        return out


def write_scores(path, table):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["utt_id", "speaker_id", "kind", "value"])
        for r in table.rows:
            w.writerow([r.utt_id, r.speaker_id, r.kind, repr(r.value)])


def read_scores(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["utt_id", "speaker_id", "kind", "value"]:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [ScoreRow(u, s, k, float(v)) for u, s, k, v in reader]
    return ScoreTable(rows)


# ------------------------------------------------------------- aggregation

class BoxSummary:
    """Median, Tukey quartiles, 1.5*IQR whiskers clipped to the data,
    outliers beyond the whiskers, and deciles for boxen-style plots."""

    def __init__(self, values):
        xs = np.sort(np.asarray(list(values), dtype=np.float64))
        if xs.size == 0:
            raise ValueError("no scores for speaker")
        self.n = int(xs.size)
        self.median = float(np.quantile(xs, 0.5))
        self.q1 = float(np.quantile(xs, 0.25))
        self.q3 = float(np.quantile(xs, 0.75))
        iqr = self.q3 - self.q1
        lo_fence = self.q1 - 1.5 * iqr
        hi_fence = self.q3 + 1.5 * iqr
        inside = xs[(xs >= lo_fence) & (xs <= hi_fence)]
        self.whisker_lo = float(inside[0])
        self.whisker_hi = float(inside[-1])
        self.outliers = [float(v) for v in xs[(xs < lo_fence) | (xs > hi_fence)]]
        self.deciles = [float(np.quantile(xs, q / 10)) for q in range(1, 10)]


def speaker_aggregate(table):
    """BoxSummary per speaker; invariant to utterance order."""
    return {spk: BoxSummary(vals)
            for spk, vals in table.values_by_speaker().items()}


def rank_speakers(summaries, kind):
    """Speakers ordered least- to most-accented; returns (rank, id) pairs.

    aid_log_softmax ranks descending (higher score = rank 1), cer ranks
    ascending. Median ties break on speaker id.
    """
    if kind not in SCORE_KINDS:
        raise ValueError(f"unknown score kind {kind!r}")
    sign = -1.0 if kind == "aid_log_softmax" else 1.0
    order = sorted(summaries, key=lambda s: (sign * summaries[s].median, s))
    return [(i + 1, spk) for i, spk in enumerate(order)]


# ------------------------------------------------------------- correlation

def pearson(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D of equal length")
    if x.size < 3:
        raise ValueError(f"need at least 3 points, got {x.size}")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation undefined for zero-variance input")
    r = float(dx @ dy) / math.sqrt(sxx * syy)
    # rounding can leave exactly collinear data a few ulps shy of +-1;
    # snap so the degenerate cases report exactly +-1 (and p exactly 0)
    if 1.0 - abs(r) <= 1e-14:
        return math.copysign(1.0, r)
    return float(np.clip(r, -1.0, 1.0))


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise ArithmeticError("incomplete beta continued fraction stalled")


def betainc_reg(a, b, x):
    """Regularized incomplete beta I_x(a, b) for a, b > 0, x in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return float(x)
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    # the continued fraction converges fast only below the distribution
    # mean; use the symmetry I_x(a,b) = 1 - I_{1-x}(b,a) past it
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def pearson_pvalue(r, n):
    """Two-sided p-value for a sample Pearson r under the null, exact
    through the Student-t survival function with n-2 dof."""
    n = int(n)
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    if not -1.0 <= r <= 1.0:
        raise ValueError(f"|r| must be <= 1, got {r}")
    if abs(r) == 1.0:
        return 0.0
    dof = n - 2
    t2 = dof * r * r / (1.0 - r * r)
    # P(|T| >= t) = I_{dof/(dof+t^2)}(dof/2, 1/2)
    return betainc_reg(dof / 2.0, 0.5, dof / (dof + t2))


class CorrelationResult:
    def __init__(self, r, p_value, n, min_words=None):
        self.r = r
        self.p_value = p_value
        self.n = n
        self.min_words = min_words

    def to_dict(self):
        return {"r": self.r, "p": self.p_value, "n": self.n,
                "filter": self.min_words}


def correlate_scores(table_a, table_b, statistic="median", min_words=None,
                     n_words=None):
    """Correlate per-speaker statistics of two score tables.

    Speakers are inner-joined; the word-count filter (strictly more than
    min_words words, looked up per utt_id in n_words) applies before
    aggregation. Needs at least 3 joined speakers.
    """
    if statistic != "median":
        raise ValueError(f"unsupported statistic {statistic!r}")
    if min_words is not None and n_words is None:
        raise ValueError("min_words filter needs per-utterance n_words")

    def stat_by_speaker(table):
        out = {}
        for row in table.rows:
            if min_words is not None:
                try:
                    words = n_words[row.utt_id]
                except KeyError:
                    raise ValueError(
                        f"{row.utt_id}: no word count for filtering") from None
                if words <= min_words:
                    continue
            out.setdefault(row.speaker_id, []).append(row.value)
        return {spk: float(np.median(vals)) for spk, vals in out.items()}

    stats_a = stat_by_speaker(table_a)
    stats_b = stat_by_speaker(table_b)
    joined = sorted(set(stats_a) & set(stats_b))
    if len(joined) < 3:
        raise ValueError(
            f"only {len(joined)} speakers joined, need at least 3")
    x = [stats_a[s] for s in joined]
    y = [stats_b[s] for s in joined]
    r = pearson(x, y)
    return CorrelationResult(r, pearson_pvalue(r, len(joined)), len(joined),
                             min_words=min_words)

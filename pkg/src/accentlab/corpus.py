"""Data model and I/O: manifests, binary embedding matrices, feature
normalization, speaker-partitioned splits, and the synthetic corpus
generator that powers the desk-scale experiments.

Manifest format: UTF-8 JSON Lines. The first line is a header
`{"version":1,"d_lid":N,"d_sid":N,"d_aid":N,"feat_dim":N,"symbols":"..."}`;
every following line is one utterance with paths to its embedding/feature
files. Matrix files are `EMB1` + u32le rows + u32le cols + f32le payload,
row-major.
"""

import csv
import json
import os
import struct

import numpy as np

# Alphabet shared with the CTC symbol table: space, a-z, then punctuation.
# The blank symbol is not a character and never appears in transcripts.
DEFAULT_SYMBOLS = " abcdefghijklmnopqrstuvwxyz,?!.'"

MAGIC = b"EMB1"


def write_embedding_matrix(path, matrix):
    m = np.asarray(matrix, dtype=np.float32)
    if m.ndim == 1:
        m = m[None, :]
    if m.ndim != 2:
        raise ValueError(f"matrix must be 2-D, got shape {m.shape}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", m.shape[0], m.shape[1]))
        fh.write(m.astype("<f4").tobytes(order="C"))


def read_embedding_dims(path):
    """(rows, cols) from the 12-byte file header; payload untouched."""
    with open(path, "rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:4] != MAGIC:
        raise ValueError(f"{path}: not an EMB1 file")
    return struct.unpack("<II", head[4:12])


def read_embedding_matrix(path):
    with open(path, "rb") as fh:
        head = fh.read(12)
        if len(head) < 12 or head[:4] != MAGIC:
            raise ValueError(f"{path}: not an EMB1 file")
        rows, cols = struct.unpack("<II", head[4:12])
        payload = fh.read()
    expect = rows * cols * 4
    if len(payload) != expect:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes, "
            f"expected {expect} for {rows}x{cols}")
    data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return data.reshape(rows, cols)


class EmbeddingSet:
    """The three per-utterance stream vectors."""

    def __init__(self, lid=None, sid=None, aid=None):
        self.lid = None if lid is None else np.asarray(lid, dtype=np.float64)
        self.sid = None if sid is None else np.asarray(sid, dtype=np.float64)
        self.aid = None if aid is None else np.asarray(aid, dtype=np.float64)

    def concat(self, streams=("lid", "sid", "aid")):
        parts = []
        for name in ("lid", "sid", "aid"):
            if name not in streams:
                continue
            v = getattr(self, name)
            if v is None:
                raise ValueError(f"stream {name!r} not available")
            parts.append(v)
        return np.concatenate(parts)


class Utterance:
    def __init__(self, utt_id, speaker_id, accent, n_words, transcript=None,
                 features=None, embeddings=None, feature_path=None,
                 emb_paths=None, human_score=None):
        if n_words < 1:
            raise ValueError(f"{utt_id}: n_words must be >= 1, got {n_words}")
        self.utt_id = utt_id
        self.speaker_id = speaker_id
        self.accent = accent
        self.n_words = int(n_words)
        self.transcript = transcript
        self.human_score = human_score
        self._features = features if features is None else np.asarray(features, dtype=np.float64)
        self._embeddings = embeddings
        self.feature_path = feature_path
        self.emb_paths = emb_paths or {}
        if (self._features is None and self.feature_path is None
                and self._embeddings is None and not self.emb_paths):
            raise ValueError(
                f"{utt_id}: utterance has neither features nor embeddings")

    @property
    def features(self):
        if self._features is None and self.feature_path is not None:
            self._features = read_embedding_matrix(self.feature_path)
        return self._features

    @property
    def embeddings(self):
        if self._embeddings is None and self.emb_paths:
            self._embeddings = EmbeddingSet(
                **{k: read_embedding_matrix(p)[0] for k, p in self.emb_paths.items()})
        return self._embeddings

    def has_features(self):
        return self._features is not None or self.feature_path is not None

    def has_embeddings(self):
        return self._embeddings is not None or bool(self.emb_paths)


class SpeakerRecord:
    def __init__(self, speaker_id, accent, severity=None, human_score=None):
        if human_score is not None and not 1.0 <= human_score <= 9.0:
            raise ValueError(
                f"{speaker_id}: human_score {human_score} outside [1, 9]")
        self.speaker_id = speaker_id
        self.accent = accent
        self.severity = severity
        self.human_score = human_score


def load_manifest(path):
    """Parse a manifest; returns (utterances, speakers).

    Embedding and feature payloads stay on disk until accessed, but file
    existence and declared dimensions are checked here, with the manifest
    line number in every complaint.
    """
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        return [], []
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ValueError(f"line 1: header is not valid JSON: {exc}") from exc
    for key in ("version", "d_lid", "d_sid", "d_aid", "feat_dim", "symbols"):
        if key not in header:
            raise ValueError(f"line 1: header missing {key!r}")
    if header["version"] != 1:
        raise ValueError(f"line 1: unsupported version {header['version']}")
    symbols = set(header["symbols"])
    dims = {"lid": header["d_lid"], "sid": header["d_sid"], "aid": header["d_aid"]}

    utts = []
    seen = set()
    speaker_accents = {}
    speaker_scores = {}
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {lineno}: invalid JSON: {exc}") from exc
        try:
            utt_id = rec["utt_id"]
            speaker_id = rec["speaker_id"]
            accent = rec["accent"]
            n_words = rec["n_words"]
        except KeyError as exc:
            raise ValueError(f"line {lineno}: missing field {exc}") from exc
        if utt_id in seen:
            raise ValueError(f"line {lineno}: duplicate utt_id {utt_id!r}")
        seen.add(utt_id)
        transcript = rec.get("transcript")
        if transcript is not None:
            bad = set(transcript) - symbols
            if bad:
                raise ValueError(
                    f"line {lineno}: utt_id {utt_id!r} transcript contains "
                    f"characters outside the symbol set: {sorted(bad)!r}")
        emb_paths = {}
        for stream in ("lid", "sid", "aid"):
            if stream not in rec:
                continue
            p = os.path.join(base, rec[stream])
            if not os.path.exists(p):
                raise ValueError(f"line {lineno}: missing file {p}")
            rows, cols = read_embedding_dims(p)
            if rows != 1 or cols != dims[stream]:
                raise ValueError(
                    f"line {lineno}: utt_id {utt_id!r} {stream} embedding is "
                    f"{rows}x{cols}, header declares 1x{dims[stream]}")
            emb_paths[stream] = p
        feature_path = None
        if "features" in rec:
            feature_path = os.path.join(base, rec["features"])
            if not os.path.exists(feature_path):
                raise ValueError(f"line {lineno}: missing file {feature_path}")
            rows, cols = read_embedding_dims(feature_path)
            if cols != header["feat_dim"]:
                raise ValueError(
                    f"line {lineno}: utt_id {utt_id!r} features have "
                    f"{cols} columns, header declares {header['feat_dim']}")
        hs = rec.get("human_score")
        if hs is not None and not 1.0 <= hs <= 9.0:
            raise ValueError(
                f"line {lineno}: human_score {hs} outside [1, 9]")
        try:
            utt = Utterance(utt_id, speaker_id, accent, n_words,
                            transcript=transcript, feature_path=feature_path,
                            emb_paths=emb_paths, human_score=hs)
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from exc
        utts.append(utt)
        if speaker_id in speaker_accents:
            if speaker_accents[speaker_id] != accent:
                raise ValueError(
                    f"line {lineno}: speaker {speaker_id!r} appears with "
                    f"accents {speaker_accents[speaker_id]!r} and {accent!r}")
        else:
            speaker_accents[speaker_id] = accent
        if hs is not None:
            speaker_scores.setdefault(speaker_id, []).append(hs)

    sidecar = os.path.join(base, "speakers.csv")
    severities = {}
    sidecar_scores = {}
    if os.path.exists(sidecar):
        with open(sidecar, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                sid = row["speaker_id"]
                if row.get("severity"):
                    severities[sid] = float(row["severity"])
                if row.get("human_score"):
                    sidecar_scores[sid] = float(row["human_score"])

    speakers = []
    for sid in sorted(speaker_accents):
        hs = sidecar_scores.get(sid)
        if hs is None and sid in speaker_scores:
            hs = float(np.median(speaker_scores[sid]))
        speakers.append(SpeakerRecord(sid, speaker_accents[sid],
                                      severity=severities.get(sid),
                                      human_score=hs))
    return utts, speakers


def mean_normalize(features):
    """Subtract the per-dimension mean over frames."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected a non-empty [frames, dim] matrix, got shape {x.shape}")
    return x - x.mean(axis=0)


def split_dataset(utts, ratios, seed):
    """Speaker-partitioned (train, dev, test) split, stratified by accent.

    Ratios must be non-negative and sum to 1.  Speakers are shuffled and
    allocated within each accent group using cumulative rounding, so every
    split sees each accent whenever its speaker count allows and the split
    is deterministic for a given seed.
    """
    ratios = [float(r) for r in ratios]
    if len(ratios) != 3:
        raise ValueError("ratios must have three entries (train, dev, test)")
    if any(r < 0 for r in ratios):
        raise ValueError(f"ratios must be non-negative, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    accent_of = {}
    for u in utts:
        accent_of[u.speaker_id] = u.accent
    speakers = sorted(accent_of)
    needed = sum(1 for r in ratios if r > 0)
    if len(speakers) < needed:
        raise ValueError(
            f"{len(speakers)} speakers cannot fill {needed} non-empty splits")
    rng = np.random.default_rng(seed)
    groups = [set(), set(), set()]
    for accent in sorted({accent_of[s] for s in speakers}):
        members = [s for s in speakers if accent_of[s] == accent]
        order = list(rng.permutation(members))
        n = len(order)
        cuts = [int(round(sum(ratios[:k + 1]) * n)) for k in range(3)]
        cuts[2] = n
        groups[0].update(order[:cuts[0]])
        groups[1].update(order[cuts[0]:cuts[1]])
        groups[2].update(order[cuts[1]:cuts[2]])
    out = ([], [], [])
    for u in utts:
        for k in range(3):
            if u.speaker_id in groups[k]:
                out[k].append(u)
                break
    return out


class SynthConfig:
    """Knobs for the synthetic corpus.

    Embedding streams are accent-class Gaussians on per-accent axes; the
    lid stream separates `lid_strong` hard and leaves the rest nearly
    merged, the sid stream does the same for `sid_strong`, and the aid
    stream separates every class moderately.  Non-native speakers get a
    per-speaker severity that pulls their class mean toward the native one
    and perturbs their acoustic frames, so every downstream score has a
    ground truth to correlate against.

    `bucket_spread`, when set, draws each speaker's word-count bucket
    usage from a Dirichlet centered on `bucket_probs` (smaller values
    spread speakers further apart); left as None, every speaker samples
    from the shared `bucket_probs` and the random stream is unchanged.
    """

    def __init__(self,
                 accents=("en-US", "en-IN", "en-AU"),
                 native="en-US",
                 lid_strong="en-IN",
                 sid_strong="en-AU",
                 n_speakers=30,
                 n_utterances=40,
                 d_lid=16, d_sid=16, d_aid=16, feat_dim=12,
                 sep_lid=6.0, sep_sid=6.0, sep_aid=2.4,
                 weak_frac=0.15,
                 emb_noise_scale=1.0,
                 length_exponent=0.35,
                 severity_range=(0.25, 1.0),
                 feat_noise_scale=0.3,
                 feat_length_exponent=0.0,
                 perturb_scale=2.5,
                 frames_per_char=2,
                 word_buckets=((1, 2), (3, 10), (11, 20), (21, 40)),
                 bucket_probs=(0.25, 0.25, 0.25, 0.25),
                 lexicon_size=60,
                 templates_seed=1234,
                 with_features=True,
                 human_noise=0.5,
                 bucket_spread=None):
        if native not in accents:
            raise ValueError(f"native accent {native!r} not in {accents}")
        if lid_strong not in accents or sid_strong not in accents:
            raise ValueError("lid_strong and sid_strong must be listed accents")
        for name, val in (("sep_lid", sep_lid), ("sep_sid", sep_sid),
                          ("sep_aid", sep_aid), ("emb_noise_scale", emb_noise_scale),
                          ("feat_noise_scale", feat_noise_scale),
                          ("perturb_scale", perturb_scale)):
            if not np.isfinite(val) or val < 0:
                raise ValueError(f"{name} must be a non-negative finite number")
        if len(word_buckets) != len(bucket_probs):
            raise ValueError("word_buckets and bucket_probs lengths differ")
        if abs(sum(bucket_probs) - 1.0) > 1e-9:
            raise ValueError("bucket_probs must sum to 1")
        if bucket_spread is not None:
            if not np.isfinite(bucket_spread) or bucket_spread <= 0:
                raise ValueError("bucket_spread must be a positive number")
            if min(bucket_probs) <= 0:
                # the Dirichlet draw needs strictly positive concentrations
                raise ValueError(
                    "bucket_spread needs every bucket_probs entry > 0")
        if frames_per_char < 2:
            # below 2 frames per character, targets with repeated characters
            # can exceed the CTC path-length bound
            raise ValueError("frames_per_char must be >= 2")
        if not (0.0 <= severity_range[0] <= severity_range[1] <= 1.0):
            raise ValueError(f"bad severity_range {severity_range}")
        self.accents = tuple(accents)
        self.native = native
        self.lid_strong = lid_strong
        self.sid_strong = sid_strong
        self.n_speakers = int(n_speakers)
        self.n_utterances = int(n_utterances)
        self.d_lid, self.d_sid, self.d_aid = int(d_lid), int(d_sid), int(d_aid)
        self.feat_dim = int(feat_dim)
        self.sep_lid, self.sep_sid, self.sep_aid = sep_lid, sep_sid, sep_aid
        self.weak_frac = weak_frac
        self.emb_noise_scale = emb_noise_scale
        self.length_exponent = length_exponent
        self.severity_range = tuple(severity_range)
        self.feat_noise_scale = feat_noise_scale
        self.feat_length_exponent = feat_length_exponent
        self.perturb_scale = perturb_scale
        self.frames_per_char = int(frames_per_char)
        self.word_buckets = tuple(tuple(b) for b in word_buckets)
        self.bucket_probs = tuple(bucket_probs)
        self.lexicon_size = int(lexicon_size)
        self.templates_seed = int(templates_seed)
        self.with_features = bool(with_features)
        self.human_noise = human_noise
        self.bucket_spread = (None if bucket_spread is None
                              else float(bucket_spread))

    def to_dict(self):
        return dict(self.__dict__)


def _class_means(cfg):
    """Per-stream, per-accent mean vectors on orthogonal axes."""
    means = {}
    for stream, d, sep, strong in (("lid", cfg.d_lid, cfg.sep_lid, cfg.lid_strong),
                                   ("sid", cfg.d_sid, cfg.sep_sid, cfg.sid_strong),
                                   ("aid", cfg.d_aid, cfg.sep_aid, None)):
        if d < len(cfg.accents):
            raise ValueError(f"d_{stream}={d} smaller than accent count")
        per_accent = {}
        for idx, accent in enumerate(cfg.accents):
            v = np.zeros(d)
            if strong is None:
                v[idx] = sep
            else:
                v[idx] = sep if accent == strong else sep * cfg.weak_frac
            per_accent[accent] = v
        means[stream] = per_accent
    return means


def generate_synthetic_corpus(cfg, seed, out_dir):
    """Write manifest.jsonl, speakers.csv, and all matrix files under out_dir.

    Deterministic for a given (cfg, seed): same call, byte-identical tree.
    Returns the manifest path.
    """
    os.makedirs(out_dir, exist_ok=True)
    emb_dir = os.path.join(out_dir, "emb")
    os.makedirs(emb_dir, exist_ok=True)
    if cfg.with_features:
        feat_dir = os.path.join(out_dir, "feat")
        os.makedirs(feat_dir, exist_ok=True)

    trng = np.random.default_rng(cfg.templates_seed)
    letters = list("abcdefghijklmnopqrstuvwxyz")
    lexicon = ["".join(trng.choice(letters, size=int(trng.integers(2, 8))))
               for _ in range(cfg.lexicon_size)]
    templates = {ch: trng.normal(0.0, 1.0, cfg.feat_dim)
                 for ch in DEFAULT_SYMBOLS}
    # unit perturbation direction per (accent, character): severity shifts
    # each character's frames along its accent-specific direction, so the
    # signature survives per-utterance mean normalization and degrades
    # template matching for the recognizer
    perturb = {}
    for accent in cfg.accents:
        per_char = {}
        for ch in DEFAULT_SYMBOLS:
            v = trng.normal(0.0, 1.0, cfg.feat_dim)
            per_char[ch] = v / np.linalg.norm(v)
        perturb[accent] = per_char

    means = _class_means(cfg)
    rng = np.random.default_rng(seed)
    manifest_path = os.path.join(out_dir, "manifest.jsonl")
    header = {"version": 1, "d_lid": cfg.d_lid, "d_sid": cfg.d_sid,
              "d_aid": cfg.d_aid, "feat_dim": cfg.feat_dim,
              "symbols": DEFAULT_SYMBOLS}

    speaker_rows = []
    with open(manifest_path, "w", encoding="utf-8") as mf:
        mf.write(json.dumps(header) + "\n")
        for accent in cfg.accents:
            tag = accent.lower().replace("-", "")
            for s in range(cfg.n_speakers):
                speaker_id = f"{tag}-s{s:03d}"
                if accent == cfg.native:
                    severity = 0.0
                else:
                    severity = float(rng.uniform(*cfg.severity_range))
                human = 9.0 - 8.0 * severity + float(
                    rng.uniform(-cfg.human_noise, cfg.human_noise))
                human = float(np.clip(human, 1.0, 9.0))
                speaker_rows.append((speaker_id, accent, severity, human))

                bucket_probs = cfg.bucket_probs
                if cfg.bucket_spread is not None:
                    # per-speaker verbosity: each speaker leans toward their
                    # own length mix around the corpus-wide one
                    bucket_probs = rng.dirichlet(
                        np.asarray(cfg.bucket_probs) * cfg.bucket_spread)
                for u in range(cfg.n_utterances):
                    utt_id = f"{speaker_id}-u{u:03d}"
                    bucket = int(rng.choice(len(cfg.word_buckets),
                                            p=bucket_probs))
                    lo, hi = cfg.word_buckets[bucket]
                    n_words = int(rng.integers(lo, hi + 1))
                    words = [lexicon[int(rng.integers(0, len(lexicon)))]
                             for _ in range(n_words)]
                    transcript = " ".join(words)

                    sigma = cfg.emb_noise_scale * (1.0 / n_words) ** cfg.length_exponent
                    rec = {"utt_id": utt_id, "speaker_id": speaker_id,
                           "accent": accent, "n_words": n_words,
                           "transcript": transcript}
                    for stream, d in (("lid", cfg.d_lid), ("sid", cfg.d_sid),
                                      ("aid", cfg.d_aid)):
                        native_mu = means[stream][cfg.native]
                        class_mu = means[stream][accent]
                        mu = native_mu + severity * (class_mu - native_mu)
                        vec = mu + rng.normal(0.0, sigma, d)
                        rel = os.path.join("emb", f"{utt_id}.{stream}.emb1")
                        write_embedding_matrix(os.path.join(out_dir, rel), vec)
                        rec[stream] = rel
                    if cfg.with_features:
                        chars = list(transcript)
                        feat_sigma = cfg.feat_noise_scale * (
                            1.0 / n_words) ** cfg.feat_length_exponent
                        frames = np.empty(
                            (cfg.frames_per_char * len(chars), cfg.feat_dim))
                        for ci, ch in enumerate(chars):
                            base = templates[ch] + (
                                severity * cfg.perturb_scale * perturb[accent][ch])
                            for k in range(cfg.frames_per_char):
                                frames[ci * cfg.frames_per_char + k] = (
                                    base + rng.normal(0.0, feat_sigma,
                                                      cfg.feat_dim))
                        rel = os.path.join("feat", f"{utt_id}.emb1")
                        write_embedding_matrix(os.path.join(out_dir, rel), frames)
                        rec["features"] = rel
                    rec["human_score"] = human
                    mf.write(json.dumps(rec) + "\n")

    with open(os.path.join(out_dir, "speakers.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["speaker_id", "accent", "severity", "human_score"])
        for row in speaker_rows:
            w.writerow([row[0], row[1], repr(row[2]), repr(row[3])])
    return manifest_path

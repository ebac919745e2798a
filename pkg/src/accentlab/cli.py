"""Command-line pipelines: synth, train, score, correlate, export.

One JSON config feeds every stage; command-line flags override the file,
and the fully resolved settings land in `<out>/config.resolved.json` so
any run can be replayed bit-exactly. The seed resolves as: --seed flag,
then the ACCENTLAB_SEED environment variable, then the config file, then
0. Logs go to standard error; every artifact stays under --out.

Exit codes: 0 success, 1 validation problem (bad flags, missing or
malformed inputs), 2 runtime failure.
"""

import argparse
import copy
import csv
import json
import os
import sys

import numpy as np

from . import aid, assess, ctc, modelio
from .corpus import (SynthConfig, generate_synthetic_corpus, load_manifest,
                     split_dataset)
from .curriculum import DEFAULT_BOUNDARIES

BINARY_OTHER = "accented"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports bad usage instead of exiting the process."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _log(*parts):
    print(*parts, file=sys.stderr)


def _build_parser():
    p = _Parser(prog="accentlab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        return sp

    sp = add("synth", "generate a synthetic corpus")
    sp.add_argument("--speakers", type=int, default=None,
                    help="speakers per accent")
    sp.add_argument("--utterances", type=int, default=None,
                    help="utterances per speaker")

    for name in ("train-fusion", "train-aid"):
        sp = add(name, "train an accent classifier")
        sp.add_argument("--manifest", required=True)
        sp.add_argument("--epochs", type=int, default=None)
        sp.add_argument("--ratios", default=None,
                        help="train,dev,test e.g. 0.7,0.15,0.15")
        sp.add_argument("--curriculum", choices=("none", "default"),
                        default=None)
        sp.add_argument("--binary", action="store_true", default=None,
                        help="collapse non-native accents into one class")
        if name == "train-fusion":
            sp.add_argument("--streams", default=None,
                            help="comma list from lid,sid,aid")

    sp = add("train-ctc", "train the native-speech recognizer")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--ratios", default=None)

    sp = add("eval-aid", "evaluate a classifier archive")
    sp.add_argument("--model", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--split", choices=("train", "dev", "test", "all"),
                    default=None)
    sp.add_argument("--ratios", default=None)
    sp.add_argument("--binary", action="store_true", default=None)

    sp = add("score-aid", "accentedness scores from a binary classifier")
    sp.add_argument("--model", required=True)
    sp.add_argument("--manifest", required=True)

    sp = add("score-asr", "character error rates from a CTC archive")
    sp.add_argument("--model", required=True)
    sp.add_argument("--manifest", required=True)

    sp = add("correlate", "correlate two score tables per speaker")
    sp.add_argument("--scores-a", required=True)
    sp.add_argument("--scores-b", required=True)
    sp.add_argument("--min-words", type=int, default=None)
    sp.add_argument("--manifest", default=None,
                    help="needed for the word-count filter")

    sp = add("export", "box/scatter/correlation bundle from a run directory")
    sp.add_argument("--run", required=True)
    sp.add_argument("--manifest", default=None,
                    help="adds human scores to the scatter table")
    return p


def _resolve(args, defaults):
    """defaults <- config-file section <- explicit flags; returns dict."""
    section = args.command.replace("-", "_")
    resolved = dict(defaults)
    file_cfg = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                file_cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config {args.config}: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise UsageError(f"--config {args.config}: not a JSON object")
        bad = set(file_cfg.get(section, {})) - set(defaults)
        if bad:
            raise UsageError(
                f"config section {section!r} has unknown keys {sorted(bad)}")
        resolved.update(file_cfg.get(section, {}))
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    seed = args.seed
    if seed is None and os.environ.get("ACCENTLAB_SEED"):
        try:
            seed = int(os.environ["ACCENTLAB_SEED"])
        except ValueError as exc:
            raise UsageError(f"ACCENTLAB_SEED: {exc}") from exc
    if seed is None:
        seed = file_cfg.get("seed")
    resolved["seed"] = int(seed) if seed is not None else 0
    return resolved


def _write_resolved(out_dir, command, resolved):
    os.makedirs(out_dir, exist_ok=True)
    payload = {"command": command, **resolved}
    path = os.path.join(out_dir, "config.resolved.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_ratios(text):
    parts = [float(x) for x in str(text).split(",")]
    if len(parts) != 3:
        raise UsageError(f"--ratios needs three numbers, got {text!r}")
    return tuple(parts)


def _binarize(utts):
    """Copies with every non-native accent relabeled to one class."""
    out = []
    for u in utts:
        if u.accent == assess.NATIVE_ACCENT:
            out.append(u)
        else:
            b = copy.copy(u)
            b.accent = BINARY_OTHER
            out.append(b)
    return out


def _load_split(manifest, ratios, seed, split="all"):
    utts, speakers = load_manifest(manifest)
    if not utts:
        raise UsageError(f"{manifest}: no utterances")
    if split == "all":
        return utts, speakers
    train, dev, test = split_dataset(utts, ratios, seed)
    return {"train": train, "dev": dev, "test": test}[split], speakers


# ------------------------------------------------------------- subcommands

def _cmd_synth(args):
    defaults = {"speakers": None, "utterances": None, "corpus": {}}
    resolved = _resolve(args, defaults)
    kwargs = dict(resolved["corpus"])
    if resolved["speakers"] is not None:
        kwargs["n_speakers"] = resolved["speakers"]
    if resolved["utterances"] is not None:
        kwargs["n_utterances"] = resolved["utterances"]
    try:
        cfg = SynthConfig(**kwargs)
    except TypeError as exc:
        raise UsageError(f"corpus config: {exc}") from exc
    resolved["corpus"] = cfg.to_dict()
    _write_resolved(args.out, args.command, resolved)
    manifest = generate_synthetic_corpus(
        cfg, seed=resolved["seed"], out_dir=os.path.join(args.out, "corpus"))
    _log(f"synth: wrote {manifest}")
    return 0


_TRAIN_DEFAULTS = {
    "epochs": None, "ratios": "0.7,0.15,0.15", "curriculum": None,
    "binary": False, "batch_size": None, "enc_hidden": None, "d_aid": None,
    "fusion_hidden": None, "streams": "lid,sid,aid",
}


def _hyper_from(resolved):
    kwargs = {}
    for key in ("epochs", "batch_size", "enc_hidden", "d_aid",
                "fusion_hidden"):
        if resolved.get(key) is not None:
            kwargs[key] = resolved[key]
    return aid.TrainConfig(seed=resolved["seed"], **kwargs)


def _cmd_train_classifier(args):
    resolved = _resolve(args, _TRAIN_DEFAULTS)
    ratios = _parse_ratios(resolved["ratios"])
    _write_resolved(args.out, args.command, resolved)
    utts, _ = load_manifest(args.manifest)
    if resolved["binary"]:
        utts = _binarize(utts)
    train, dev, test = split_dataset(utts, ratios, resolved["seed"])
    plan = DEFAULT_BOUNDARIES if resolved["curriculum"] == "default" else None
    hyper = _hyper_from(resolved)
    if args.command == "train-fusion":
        streams = tuple(s for s in resolved["streams"].split(",") if s)
        model = aid.train_fusion(train, dev, streams=streams, plan=plan,
                                 hyper=hyper)
    else:
        model = aid.train_e2e_aid(train, dev, plan=plan, hyper=hyper)
    modelio.save_model(model, os.path.join(args.out, "model"))
    report = aid.evaluate(model, test) if test else None
    metrics = {"history": model.history,
               "test": report.to_dict() if report else None}
    with open(os.path.join(args.out, "metrics.json"), "w",
              encoding="utf-8") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if report:
        _log(f"{args.command}: test accuracy {report.accuracy:.2f}%")
    return 0


def _cmd_train_ctc(args):
    defaults = {"epochs": None, "ratios": "0.7,0.15,0.15", "batch_size": None,
                "hidden": None, "patience": None, "lr": None}
    resolved = _resolve(args, defaults)
    ratios = _parse_ratios(resolved["ratios"])
    _write_resolved(args.out, args.command, resolved)
    utts, _ = load_manifest(args.manifest)
    native = [u for u in utts if u.accent == assess.NATIVE_ACCENT
              and u.transcript is not None and u.has_features()]
    if not native:
        raise UsageError(
            f"{args.manifest}: no transcribed {assess.NATIVE_ACCENT} "
            "utterances with features")
    train, dev, _test = split_dataset(native, ratios, resolved["seed"])
    kwargs = {k: resolved[k]
              for k in ("epochs", "batch_size", "hidden", "patience", "lr")
              if resolved[k] is not None}
    hyper = ctc.CtcTrainConfig(seed=resolved["seed"], **kwargs)
    model = ctc.train_ctc(train, dev, hyper=hyper)
    modelio.save_model(model, os.path.join(args.out, "model"))
    with open(os.path.join(args.out, "metrics.json"), "w",
              encoding="utf-8") as fh:
        json.dump({"history": model.history}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log(f"train-ctc: best dev loss "
         f"{min(model.history['dev_loss']):.4f}")
    return 0


def _cmd_eval_aid(args):
    defaults = {"split": "test", "ratios": "0.7,0.15,0.15", "binary": False}
    resolved = _resolve(args, defaults)
    ratios = _parse_ratios(resolved["ratios"])
    _write_resolved(args.out, args.command, resolved)
    model = modelio.load_model(args.model)
    utts, _ = _load_split(args.manifest, ratios, resolved["seed"],
                          resolved["split"])
    if resolved["binary"]:
        utts = _binarize(utts)
    report = aid.evaluate(model, utts)
    with open(os.path.join(args.out, "eval.json"), "w",
              encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log(f"eval-aid: accuracy {report.accuracy:.2f}% on "
         f"{resolved['split']}")
    return 0


def _cmd_score_aid(args):
    resolved = _resolve(args, {})
    _write_resolved(args.out, args.command, resolved)
    model = modelio.load_model(args.model)
    utts, _ = load_manifest(args.manifest)
    rows = [assess.ScoreRow(u.utt_id, u.speaker_id, "aid_log_softmax",
                            assess.aid_accentedness_score(model, u))
            for u in utts]
    path = os.path.join(args.out, "scores_aid.csv")
    assess.write_scores(path, assess.ScoreTable(rows))
    _log(f"score-aid: {len(rows)} utterances -> {path}")
    return 0


def _cmd_score_asr(args):
    resolved = _resolve(args, {})
    _write_resolved(args.out, args.command, resolved)
    model = modelio.load_model(args.model)
    utts, _ = load_manifest(args.manifest)
    scored = [u for u in utts if u.transcript is not None and u.has_features()]
    if not scored:
        raise UsageError(f"{args.manifest}: nothing to transcribe")
    rows = []
    with open(os.path.join(args.out, "hyps.txt"), "w",
              encoding="utf-8") as fh:
        for u in scored:
            hyp = ctc.transcribe(model, u.features)
            fh.write(f"{u.utt_id}\t{hyp}\n")
            rows.append(assess.ScoreRow(u.utt_id, u.speaker_id, "cer",
                                        assess.cer(hyp, u.transcript)))
    path = os.path.join(args.out, "scores_cer.csv")
    assess.write_scores(path, assess.ScoreTable(rows))
    _log(f"score-asr: {len(rows)} utterances -> {path}")
    return 0


def _cmd_correlate(args):
    defaults = {"min_words": None}
    resolved = _resolve(args, defaults)
    _write_resolved(args.out, args.command, resolved)
    table_a = assess.read_scores(args.scores_a)
    table_b = assess.read_scores(args.scores_b)
    n_words = None
    if resolved["min_words"] is not None:
        if not args.manifest:
            raise UsageError("--min-words needs --manifest for word counts")
        utts, _ = load_manifest(args.manifest)
        n_words = {u.utt_id: u.n_words for u in utts}
    result = assess.correlate_scores(table_a, table_b,
                                     min_words=resolved["min_words"],
                                     n_words=n_words)
    path = os.path.join(args.out, "correlation.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log(f"correlate: r={result.r:.4f} p={result.p_value:.3e} "
         f"n={result.n}")
    return 0


def _box_csv(path, summaries):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["speaker_id", "n", "median", "q1", "q3",
                    "whisker_lo", "whisker_hi", "outliers"]
                   + [f"d{k}" for k in range(1, 10)])
        for spk in sorted(summaries):
            s = summaries[spk]
            w.writerow([spk, s.n, repr(s.median), repr(s.q1), repr(s.q3),
                        repr(s.whisker_lo), repr(s.whisker_hi),
                        "|".join(repr(v) for v in s.outliers)]
                       + [repr(d) for d in s.deciles])


def _cmd_export(args):
    resolved = _resolve(args, {})
    _write_resolved(args.out, args.command, resolved)
    missing = []
    paths = {}
    for kind, name in (("aid_log_softmax", "scores_aid.csv"),
                       ("cer", "scores_cer.csv")):
        p = os.path.join(args.run, name)
        if os.path.exists(p):
            paths[kind] = p
        else:
            missing.append(p)
    if missing:
        raise UsageError("missing scoring outputs: " + ", ".join(missing))
    tables = {kind: assess.read_scores(p) for kind, p in paths.items()}
    boxes = {}
    for kind, table in tables.items():
        boxes[kind] = assess.speaker_aggregate(table)
        _box_csv(os.path.join(args.out, f"box_{kind}.csv"), boxes[kind])
    human = {}
    if args.manifest:
        _, speakers = load_manifest(args.manifest)
        human = {s.speaker_id: s.human_score for s in speakers
                 if s.human_score is not None}
    joined = sorted(set(boxes["aid_log_softmax"]) & set(boxes["cer"]))
    with open(os.path.join(args.out, "scatter.csv"), "w", newline="",
              encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["speaker_id", "aid_median", "cer_median", "human_score"])
        for spk in joined:
            hs = human.get(spk)
            w.writerow([spk, repr(boxes["aid_log_softmax"][spk].median),
                        repr(boxes["cer"][spk].median),
                        "" if hs is None else repr(hs)])
    result = assess.correlate_scores(tables["aid_log_softmax"],
                                     tables["cer"])
    with open(os.path.join(args.out, "correlation.json"), "w",
              encoding="utf-8") as fh:
        json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log(f"export: {len(joined)} speakers, r={result.r:.4f}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "train-fusion": _cmd_train_classifier,
    "train-aid": _cmd_train_classifier,
    "train-ctc": _cmd_train_ctc,
    "eval-aid": _cmd_eval_aid,
    "score-aid": _cmd_score_aid,
    "score-asr": _cmd_score_asr,
    "correlate": _cmd_correlate,
    "export": _cmd_export,
}


def run_command(argv):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_usage(sys.stderr)
            return 1
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        _log(f"error: {exc}")
        return 1
    except (ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except Exception as exc:  # noqa: BLE001 - last-resort runtime mapping
        _log(f"runtime failure: {type(exc).__name__}: {exc}")
        return 2


def main():
    sys.exit(run_command(sys.argv[1:]))

"""``emoguard`` command line.

Exit codes: 0 ok, 2 usage, 3 I/O, 4 format, 5 remote service.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .audio_io import downmix_mono, read_wav, write_wav
from .cnn import TrainConfig, load_model, save_model, train
from .datasets import DATASETS, Manifest, scan_dataset, split_manifest, write_skipped
from .dsp import TransformSpec, WsolaConfig, apply_transform, invert_spec
from .errors import AudioIOError, ConfigError, EmoguardError, FormatError, UsageError
from .experiments import (
    CnnAttacker,
    RemoteAttacker,
    SweepSpec,
    read_results,
    run_sweep,
    summarize_all,
    write_summary,
)
from .features import MfccConfig, mfcc
from .llm import HttpTransport, LlmAttacker, LlmAttackerConfig

log = logging.getLogger("emoguard")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT, EXIT_REMOTE = 0, 2, 3, 4, 5


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise AudioIOError(f"no such file: {path}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc


def _read_mono(path):
    clip, _ = read_wav(path)
    return downmix_mono(clip)


# ---------------------------------------------------------------- subcommands

def cmd_transform(args, inverse=False) -> int:
    spec = TransformSpec(args.pitch, args.tempo)
    if inverse:
        spec = invert_spec(spec)
    clip = _read_mono(args.input)
    out = apply_transform(clip, spec, WsolaConfig())
    write_wav(out, args.output, args.bits)
    log.info("wrote %s (%.3f s, pitch %+g st, tempo %g%%)", args.output, out.duration_s,
             spec.pitch_semitones, spec.tempo_percent)
    return EXIT_OK


def cmd_scan(args) -> int:
    m = scan_dataset(args.root, args.dataset, demographics=args.demographics)
    m.save(args.out)
    if args.skipped:
        write_skipped(m, args.skipped)
    print(json.dumps({"dataset": m.dataset, "entries": len(m), "skipped": len(m.skipped)}))
    return EXIT_OK


def cmd_split(args) -> int:
    m = Manifest.load(args.manifest)
    tr, te = split_manifest(m, args.test_fraction, args.seed)
    tr.save(args.out_train)
    te.save(args.out_test)
    print(json.dumps({"train": len(tr), "test": len(te)}))
    return EXIT_OK


def _featurize(manifest: Manifest, root, cfg: MfccConfig):
    root = Path(root or manifest.root)
    return [(mfcc(_read_mono(root / e.rel_path), cfg), e.emotion) for e in manifest.entries]


def load_train_config(path) -> tuple[TrainConfig, MfccConfig]:
    doc = dict(_read_json(path)) if path else {}
    mfcc_doc = doc.pop("mfcc", None) or {}
    try:
        return TrainConfig(**doc), MfccConfig(**mfcc_doc)
    except TypeError as exc:
        raise ConfigError(f"bad train config: {exc}") from exc


def cmd_train(args) -> int:
    cfg, mcfg = load_train_config(args.config)
    tr = Manifest.load(args.train_manifest)
    va = Manifest.load(args.val_manifest)
    log.info("featurising %d train / %d val clips", len(tr), len(va))
    train_set = _featurize(tr, args.root, mcfg)
    val_set = _featurize(va, args.root, mcfg)

    def progress(s):
        log.info("epoch %3d  loss %.4f  acc %.3f  val_loss %.4f  val_acc %.3f",
                 s.epoch, s.train_loss, s.train_accuracy, s.val_loss, s.val_accuracy)

    params, history = train(train_set, val_set, cfg, feature_fingerprint=mcfg.fingerprint(),
                            feature_config=mcfg.to_dict(), progress=progress)
    save_model(params, args.out_model)
    best = max(history, key=lambda s: s.val_accuracy)
    print(json.dumps({"best_epoch": best.epoch, "val_accuracy": best.val_accuracy,
                      "labels": list(params.label_list)}))
    return EXIT_OK


def _llm_attacker(args) -> RemoteAttacker | None:
    if not args.llm_config:
        return None
    if not args.live:
        raise UsageError("--llm-config contacts a remote service; pass --live to allow it")
    cfg = LlmAttackerConfig.load(args.llm_config)
    audit = Path(args.audit) if getattr(args, "audit", None) else None
    return RemoteAttacker(LlmAttacker(cfg, HttpTransport(cfg.endpoint_url), audit_path=audit))


def cmd_attack(args) -> int:
    clip = _read_mono(args.input)
    attackers = [CnnAttacker(load_model(args.model))]
    remote = _llm_attacker(args)
    if remote is not None:
        attackers.append(remote)
    out = {}
    for a in attackers:
        v = a(clip)
        out[a.name] = {"label": v.label, "confidence": v.confidence}
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    m = Manifest.load(args.manifest)
    if args.actors:
        m = m.filter_actors(args.actors)
    if args.mode == "structured":
        sweep = SweepSpec("structured", pitches=tuple(args.pitches), tempos=tuple(args.tempos))
    else:
        sweep = SweepSpec("randomized", random_count=args.n, seed=args.seed)
    attackers = [CnnAttacker(load_model(args.model))]
    remote = _llm_attacker(args)
    if remote is not None:
        attackers.append(remote)
    records = run_sweep(m, sweep.specs(), attackers, WsolaConfig(), args.out,
                        root=args.root or m.root, workers=args.workers)
    if args.summary:
        write_summary(summarize_all(records), args.summary)
    print(json.dumps({"records": len(records), "clips": len(m)}))
    return EXIT_OK


def cmd_report(args) -> int:
    write_summary(summarize_all(read_results(args.results)), args.out)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="emoguard", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, help_ in (("transform", "apply a pitch/tempo transform"),
                        ("reverse", "undo a transform given the forward pitch/tempo")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--in", dest="input", required=True)
        s.add_argument("--out", dest="output", required=True)
        s.add_argument("--pitch", type=float, required=True, help="semitones")
        s.add_argument("--tempo", type=float, required=True, help="percent of original speed")
        s.add_argument("--bits", type=int, choices=(16, 32), default=16)

    s = sub.add_parser("scan", help="index a corpus into a manifest")
    s.add_argument("--dataset", choices=DATASETS, required=True)
    s.add_argument("--root", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--skipped", help="JSON-lines file for unparseable names")
    s.add_argument("--demographics", help="CREMA-D VideoDemographics.csv")

    s = sub.add_parser("split", help="stratified train/test split of a manifest")
    s.add_argument("--manifest", required=True)
    s.add_argument("--test-fraction", type=float, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--out-train", required=True)
    s.add_argument("--out-test", required=True)

    s = sub.add_parser("train", help="train the CNN attacker")
    s.add_argument("--train-manifest", required=True)
    s.add_argument("--val-manifest", required=True)
    s.add_argument("--root")
    s.add_argument("--config")
    s.add_argument("--out-model", required=True)

    def remote_flags(s):
        s.add_argument("--llm-config")
        s.add_argument("--live", action="store_true", help="allow calls to the remote LLM endpoint")
        s.add_argument("--audit", help="JSON-lines transcript log for remote calls")

    s = sub.add_parser("attack", help="classify one file")
    s.add_argument("--model", required=True)
    s.add_argument("--in", dest="input", required=True)
    remote_flags(s)

    s = sub.add_parser("sweep", help="run an obfuscation sweep")
    s.add_argument("--manifest", required=True)
    s.add_argument("--root")
    s.add_argument("--model", required=True)
    s.add_argument("--mode", choices=("structured", "random"), required=True)
    s.add_argument("--pitches", type=float, nargs="+", default=[-8, -4, 0, 4, 8])
    s.add_argument("--tempos", type=float, nargs="+", default=[60, 80, 100, 120, 140])
    s.add_argument("--n", type=int, default=25)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--actors", nargs="+")
    s.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    s.add_argument("--summary", help="also write the JSON summary here")
    s.add_argument("--out", required=True)
    remote_flags(s)

    s = sub.add_parser("report", help="summarise a results CSV")
    s.add_argument("--results", required=True)
    s.add_argument("--out", required=True)
    return p


COMMANDS = {
    "transform": cmd_transform,
    "reverse": lambda a: cmd_transform(a, inverse=True),
    "scan": cmd_scan,
    "split": cmd_split,
    "train": cmd_train,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "report": cmd_report,
}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"emoguard: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except EmoguardError as exc:
        print(f"emoguard: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"emoguard: {exc}", file=sys.stderr)
        return EXIT_IO


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()

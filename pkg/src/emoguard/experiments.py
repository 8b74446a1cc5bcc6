"""Evaluation engine: transform sweeps, reversibility trials and summaries."""
from __future__ import annotations

import csv
import io
import itertools
import json
import logging
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterator, Sequence

import numpy as np

from .audio_io import AudioClip, downmix_mono, read_wav
from .cnn import LABELS, AttackVerdict, ModelParams, predict
from .datasets import ClipMetadata, Manifest
from .dsp import IDENTITY, TransformSpec, WsolaConfig, apply_transform, dominant_frequency, invert_spec
from .errors import ConfigError, RemoteError, ShapeMismatchError, SweepError
from .features import MfccConfig, mfcc
from .llm import LlmAttacker

log = logging.getLogger(__name__)

DEFAULT_PITCHES = (-8.0, -4.0, 0.0, 4.0, 8.0)
DEFAULT_TEMPOS = (60.0, 80.0, 100.0, 120.0, 140.0)
DEFAULT_PITCH_RANGE = (-11.0, 11.0)
DEFAULT_TEMPO_RANGE = (60.0, 145.0)
DEFAULT_ZERO_PITCH_FRACTION = 0.3

CSV_COLUMNS = ("dataset", "actor", "gender", "file", "original_emotion", "pitch", "tempo",
               "attacker", "predicted", "confidence", "flipped", "error")
CSV_HEADER = ",".join(CSV_COLUMNS)


@dataclass(frozen=True)
class SweepSpec:
    mode: str = "structured"
    pitches: tuple[float, ...] = DEFAULT_PITCHES
    tempos: tuple[float, ...] = DEFAULT_TEMPOS
    random_count: int = 25
    pitch_range: tuple[float, float] = DEFAULT_PITCH_RANGE
    tempo_range: tuple[float, float] = DEFAULT_TEMPO_RANGE
    seed: int = 0
    include_identity: bool = True
    zero_pitch_fraction: float = DEFAULT_ZERO_PITCH_FRACTION

    def specs(self) -> list[TransformSpec]:
        if self.mode == "structured":
            return structured_grid(self.pitches, self.tempos)
        if self.mode in ("randomized", "random"):
            return randomized_specs(self.random_count, self.seed, self.pitch_range, self.tempo_range,
                                    self.zero_pitch_fraction)
        raise ConfigError(f"unknown sweep mode {self.mode!r}")


def structured_grid(pitches: Sequence[float] = DEFAULT_PITCHES,
                    tempos: Sequence[float] = DEFAULT_TEMPOS) -> list[TransformSpec]:
    """Pitch-major Cartesian product."""
    if not pitches or not tempos:
        raise ConfigError("pitch and tempo lists must be non-empty")
    return [TransformSpec(p, t) for p, t in itertools.product(pitches, tempos)]


def randomized_specs(n: int, seed: int, pitch_range=DEFAULT_PITCH_RANGE, tempo_range=DEFAULT_TEMPO_RANGE,
                     zero_pitch_fraction: float = DEFAULT_ZERO_PITCH_FRACTION) -> list[TransformSpec]:
    """Seeded uniform draws, pitch to 0.1 semitone and tempo to whole percent.

    Exactly ``round(zero_pitch_fraction * n)`` rows get pitch 0; other rows
    redraw a pitch that rounds to 0. A draw that lands on the identity
    (0, 100) is redrawn since that is a baseline, not an attack.
    """
    if n < 1:
        raise ConfigError("n must be >= 1")
    (plo, phi), (tlo, thi) = pitch_range, tempo_range
    if not (plo <= phi and tlo <= thi and tlo > 0):
        raise ConfigError("invalid pitch/tempo ranges")
    if not 0 <= zero_pitch_fraction <= 1:
        raise ConfigError("zero_pitch_fraction must be in [0, 1]")
    if plo > 0 or phi < 0:
        zero_pitch_fraction = 0.0
    rng = np.random.default_rng(seed)
    n_zero = int(math.floor(zero_pitch_fraction * n + 0.5))
    zero_rows = set(rng.choice(n, size=n_zero, replace=False).tolist()) if n_zero else set()
    specs = []
    for i in range(n):
        for _ in range(1000):
            pitch = 0.0 if i in zero_rows else round(float(rng.uniform(plo, phi)), 1)
            tempo = float(round(float(rng.uniform(tlo, thi))))
            pitch = min(max(pitch, plo), phi) + 0.0
            tempo = min(max(tempo, math.ceil(tlo)), math.floor(thi))
            if pitch == 0.0 and i not in zero_rows and (plo, phi) != (0.0, 0.0):
                continue  # keep the pinned count exact
            if not (pitch == 0.0 and tempo == 100.0):
                break
        else:
            raise ConfigError("ranges only admit the identity spec")
        specs.append(TransformSpec(pitch, tempo))
    return specs


# ---------------------------------------------------------------- attackers

class CnnAttacker:
    name = "cnn"

    def __init__(self, params: ModelParams, mfcc_cfg: MfccConfig | None = None):
        if mfcc_cfg is None:
            mfcc_cfg = MfccConfig.from_dict(params.feature_config) if params.feature_config else MfccConfig()
        if params.feature_fingerprint and mfcc_cfg.fingerprint() != params.feature_fingerprint:
            raise ShapeMismatchError("feature config does not match the model's fingerprint")
        self.params, self.mfcc_cfg = params, mfcc_cfg

    @property
    def labels(self) -> tuple[str, ...]:
        return self.params.label_list

    def __call__(self, clip: AudioClip) -> AttackVerdict:
        return predict(self.params, mfcc(clip, self.mfcc_cfg))


class UnparseableResponse(RemoteError):
    pass


class RemoteAttacker:
    name = "llm"

    def __init__(self, client: LlmAttacker):
        self.client = client

    @property
    def labels(self):
        return tuple(self.client.labels)

    def __call__(self, clip: AudioClip) -> AttackVerdict:
        verdict, transcript = self.client.infer(clip)
        if verdict is None:
            raise UnparseableResponse(f"no emotion in response: {transcript.raw_response_text[:80]!r}")
        return verdict


def _reason(exc: BaseException) -> str:
    if isinstance(exc, UnparseableResponse):
        return "unparseable"
    return type(exc).__name__


# ---------------------------------------------------------------- records

@dataclass
class TrialRecord:
    clip: ClipMetadata
    spec: TransformSpec
    verdicts: dict[str, AttackVerdict | None] = field(default_factory=dict)
    errors: dict[str, str] = field(default_factory=dict)

    @property
    def original_emotion(self) -> str:
        return self.clip.emotion

    @property
    def is_identity(self) -> bool:
        return self.spec.is_identity

    @property
    def cnn_verdict(self) -> AttackVerdict | None:
        return self.verdicts.get("cnn")

    @property
    def llm_verdict(self) -> AttackVerdict | None:
        return self.verdicts.get("llm")

    def flipped(self, attacker: str) -> bool | None:
        v = self.verdicts.get(attacker)
        return None if v is None else v.label != self.clip.emotion

    @property
    def flipped_cnn(self) -> bool | None:
        return self.flipped("cnn")

    @property
    def flipped_llm(self) -> bool | None:
        return self.flipped("llm")


def _fmt_num(x: float) -> str:
    return f"{x:.2f}"


def record_rows(rec: TrialRecord, attackers: Sequence[str]) -> list[list[str]]:
    rows = []
    c = rec.clip
    for name in attackers:
        v = rec.verdicts.get(name)
        base = [c.dataset, c.actor_id, c.gender, c.rel_path, c.emotion,
                _fmt_num(rec.spec.pitch_semitones), _fmt_num(rec.spec.tempo_percent), name]
        if v is None:
            rows.append(base + ["", "", "", rec.errors.get(name, "no_verdict")])
        else:
            rows.append(base + [v.label, f"{v.confidence:.6f}", "1" if v.label != c.emotion else "0", ""])
    return rows


def _csv_line(row: Sequence[str]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow(row)
    return buf.getvalue()


def read_results(path) -> list[TrialRecord]:
    """Rebuild trial records from a results CSV (comment lines skipped)."""
    with open(path, newline="", encoding="utf-8") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader, None)
    if header is None or ",".join(header) != CSV_HEADER:
        raise SweepError(f"{path}: results header does not match the expected schema")
    records: dict[tuple, TrialRecord] = {}
    seen: dict[tuple, int] = defaultdict(int)
    for row in reader:
        d = dict(zip(CSV_COLUMNS, row))
        # the same (file, spec) can legitimately appear twice: baseline plus a grid identity cell
        trial = (d["dataset"], d["file"], d["pitch"], d["tempo"], d["attacker"])
        key = trial[:4] + (seen[trial],)
        seen[trial] += 1
        rec = records.get(key)
        if rec is None:
            meta = ClipMetadata(d["dataset"], d["actor"], d["gender"], d["original_emotion"], None, d["file"])
            rec = records[key] = TrialRecord(meta, TransformSpec(float(d["pitch"]), float(d["tempo"])))
        if d["error"]:
            rec.verdicts[d["attacker"]] = None
            rec.errors[d["attacker"]] = d["error"]
        else:
            rec.verdicts[d["attacker"]] = AttackVerdict(d["predicted"], float(d["confidence"]))
    return list(records.values())


# ---------------------------------------------------------------- sweeps

ClipLoader = Callable[[ClipMetadata], AudioClip]


def file_loader(root) -> ClipLoader:
    root = Path(root)

    def load(meta: ClipMetadata) -> AudioClip:
        clip, _ = read_wav(root / meta.rel_path)
        return downmix_mono(clip)

    return load


def _run_clip(meta: ClipMetadata, specs: Sequence[TransformSpec], attackers, wsola: WsolaConfig,
              load: ClipLoader) -> list[TrialRecord]:
    records = [TrialRecord(meta, s) for s in specs]
    try:
        clip = load(meta)
    except Exception as exc:  # every row of an unreadable clip becomes an error row
        for rec in records:
            for a in attackers:
                rec.verdicts[a.name] = None
                rec.errors[a.name] = _reason(exc)
        return records
    for rec in records:
        try:
            transformed = apply_transform(clip, rec.spec, wsola)
        except Exception as exc:
            for a in attackers:
                rec.verdicts[a.name] = None
                rec.errors[a.name] = _reason(exc)
            continue
        for a in attackers:
            try:
                rec.verdicts[a.name] = a(transformed)
            except Exception as exc:
                log.warning("%s on %s %s failed: %s", a.name, meta.rel_path, rec.spec, exc)
                rec.verdicts[a.name] = None
                rec.errors[a.name] = _reason(exc)
    return records


def iter_sweep(entries: Sequence[ClipMetadata], specs: Sequence[TransformSpec], attackers,
               wsola: WsolaConfig = WsolaConfig(), load: ClipLoader | None = None,
               include_identity: bool = True, workers: int = 1) -> Iterator[TrialRecord]:
    """Yield records in canonical (clip, spec) order.

    With ``include_identity`` each clip starts with a baseline record at
    (0, 100), in addition to any identity cell already in ``specs``.
    """
    if not attackers:
        raise ConfigError("need at least one attacker")
    if load is None:
        raise ConfigError("need a clip loader")
    specs = list(specs)
    if include_identity:
        specs = [IDENTITY] + specs

    def job(meta):
        return _run_clip(meta, specs, attackers, wsola, load)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for recs in pool.map(job, entries):
                yield from recs
    else:
        for meta in entries:
            yield from job(meta)


def run_sweep(manifest: Manifest | Sequence[ClipMetadata], specs: Sequence[TransformSpec], attackers,
              wsola: WsolaConfig = WsolaConfig(), out_path=None, *, root=None,
              load: ClipLoader | None = None, include_identity: bool = True, workers: int = 1,
              timestamp: str | None = None) -> list[TrialRecord]:
    """Run every (clip, spec, attacker) trial and stream rows to ``out_path``."""
    entries = manifest.entries if isinstance(manifest, Manifest) else list(manifest)
    if load is None:
        if root is None and isinstance(manifest, Manifest):
            root = manifest.root
        load = file_loader(root)
    names = [a.name for a in attackers]
    records: list[TrialRecord] = []
    fh = open(out_path, "w", encoding="utf-8", newline="") if out_path is not None else None
    try:
        if fh is not None:
            stamp = timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
            fh.write(f"# emoguard results generated {stamp}\n")
            fh.write(CSV_HEADER + "\n")
        for rec in iter_sweep(entries, specs, attackers, wsola, load, include_identity, workers):
            records.append(rec)
            if fh is not None:
                for row in record_rows(rec, names):
                    fh.write(_csv_line(row))
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    if not any(v is not None for r in records for v in r.verdicts.values()):
        raise SweepError("no trial produced a verdict")
    return records


# ---------------------------------------------------------------- summaries

@dataclass
class ReportSummary:
    attacker: str
    labels: list[str]
    clean_accuracy: float | None
    transformed_accuracy: float | None
    flip_rate: float | None
    confusion: list[list[int]]
    per_gender: dict[str, dict]
    per_spec: dict[str, float]
    n_identity: int
    n_transformed: int
    n_errors: int

    def to_dict(self) -> dict:
        return asdict(self)


def spec_key(spec: TransformSpec) -> str:
    return f"{_fmt_num(spec.pitch_semitones)}/{_fmt_num(spec.tempo_percent)}"


def summarize(records: Sequence[TrialRecord], attacker: str = "cnn") -> ReportSummary:
    if not records:
        raise SweepError("no records to summarise")
    scored = [r for r in records if r.verdicts.get(attacker) is not None]
    n_errors = sum(1 for r in records if attacker in r.errors)
    if not scored:
        raise SweepError(f"no successful {attacker} trials to summarise")
    clean = [r for r in scored if r.is_identity]
    attacked = [r for r in scored if not r.is_identity]

    def acc(rs):
        return None if not rs else sum(not r.flipped(attacker) for r in rs) / len(rs)

    present = {r.clip.emotion for r in attacked} | {r.verdicts[attacker].label for r in attacked}
    labels = [l for l in LABELS if l in present] + sorted(present - set(LABELS))
    index = {l: i for i, l in enumerate(labels)}
    confusion = [[0] * len(labels) for _ in labels]
    for r in attacked:
        confusion[index[r.clip.emotion]][index[r.verdicts[attacker].label]] += 1

    per_gender = {}
    for g in ("male", "female"):
        rs = [r for r in attacked if r.clip.gender == g]
        if rs:
            per_gender[g] = {"flip_rate": 1.0 - acc(rs), "count": len(rs)}
    by_spec = defaultdict(list)
    for r in attacked:
        by_spec[spec_key(r.spec)].append(r)
    per_spec = {k: 1.0 - acc(v) for k, v in by_spec.items()}
    t_acc = acc(attacked)
    return ReportSummary(attacker, labels, acc(clean), t_acc, None if t_acc is None else 1.0 - t_acc,
                         confusion, per_gender, per_spec, len(clean), len(attacked), n_errors)


def summarize_all(records: Sequence[TrialRecord]) -> dict:
    names = sorted({a for r in records for a in list(r.verdicts) + list(r.errors)})
    out = {}
    for name in names:
        try:
            out[name] = summarize(records, name).to_dict()
        except SweepError as exc:
            out[name] = {"error": str(exc)}
    return out


# ---------------------------------------------------------------- reversibility

@dataclass
class ReversibilityRecord:
    spec: TransformSpec
    verdict_original: AttackVerdict
    verdict_transformed: AttackVerdict
    verdict_recovered: AttackVerdict
    duration_error: float
    freq_error: float


def reversibility_trial(clip: AudioClip, spec: TransformSpec, attacker: Callable[[AudioClip], AttackVerdict],
                        wsola: WsolaConfig = WsolaConfig(),
                        original_verdict: AttackVerdict | None = None) -> ReversibilityRecord:
    """Obfuscate with ``spec``, then undo it with the inverse spec and re-attack."""
    if spec.is_identity:
        raise ConfigError("reversibility needs a non-identity spec")
    transformed = apply_transform(clip, spec, wsola)
    recovered = apply_transform(transformed, invert_spec(spec), wsola)
    dur_err = abs(recovered.n_frames - clip.n_frames) / clip.n_frames
    f0, f1 = dominant_frequency(clip), dominant_frequency(recovered)
    freq_err = abs(f1 - f0) / f0 if f0 > 0 else abs(f1 - f0)
    v0 = original_verdict if original_verdict is not None else attacker(clip)
    return ReversibilityRecord(spec, v0, attacker(transformed), attacker(recovered), dur_err, freq_err)


def write_summary(summary: dict, path) -> None:
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")

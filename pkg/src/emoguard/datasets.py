"""RAVDESS, CREMA-D and TESS filename parsers, manifests and stratified splits."""
from __future__ import annotations

import csv
import json
import os
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path, PurePath
from typing import Callable, Iterable

import numpy as np

from .errors import (
    AudioIOError,
    ConfigError,
    DatasetError,
    EmptyDatasetError,
    FilenameParseError,
    NotSpeechError,
    UnknownCodeError,
)

DATASETS = ("ravdess", "crema_d", "tess")

RAVDESS_EMOTIONS = {
    "01": "neutral", "02": "calm", "03": "happy", "04": "sad",
    "05": "angry", "06": "fear", "07": "disgust", "08": "surprise",
}
RAVDESS_INTENSITY = {"01": "normal", "02": "strong"}

CREMAD_EMOTIONS = {
    "ANG": "angry", "DIS": "disgust", "FEA": "fear",
    "HAP": "happy", "NEU": "neutral", "SAD": "sad",
}
CREMAD_LEVELS = {"LO": "low", "MD": "normal", "HI": "strong", "XX": "unspecified"}
# built-in genders for two reference actors; everyone else needs the demographics sidecar
CREMAD_DEFAULT_GENDER = {"1001": "male", "1002": "female"}

TESS_SPEAKERS = ("OAF", "YAF")
TESS_EMOTIONS = {
    "angry": "angry", "disgust": "disgust", "fear": "fear", "happy": "happy",
    "ps": "surprise", "sad": "sad", "neutral": "neutral",
}


@dataclass(frozen=True)
class ClipMetadata:
    dataset: str
    actor_id: str
    gender: str
    emotion: str
    intensity: str | None
    rel_path: str

    def to_entry(self) -> dict:
        return {"path": self.rel_path, "actor": self.actor_id, "gender": self.gender,
                "emotion": self.emotion, "intensity": self.intensity}

    @classmethod
    def from_entry(cls, dataset: str, d: dict) -> "ClipMetadata":
        return cls(dataset, str(d["actor"]), d["gender"], d["emotion"], d.get("intensity"), d["path"])


def _stem(name: str) -> str:
    base = PurePath(name).name
    if not base.lower().endswith(".wav"):
        raise FilenameParseError(f"{name!r}: not a .wav file")
    return base[:-4]


_RAVDESS_RE = re.compile(r"^\d{2}(-\d{2}){6}$")


def parse_ravdess_filename(name: str) -> ClipMetadata:
    """``MM-VV-EE-II-SS-RR-AA.wav``; odd actor numbers are male."""
    stem = _stem(name)
    if not _RAVDESS_RE.match(stem):
        raise FilenameParseError(f"{name!r}: expected 7 dash-separated two-digit fields")
    modality, channel, emo, inten, _stmt, _rep, actor = stem.split("-")
    if (modality, channel) != ("03", "01"):
        raise NotSpeechError(f"{name!r}: not speech audio (modality {modality}, channel {channel})")
    if emo not in RAVDESS_EMOTIONS:
        raise UnknownCodeError(f"{name!r}: unknown emotion code {emo}")
    if inten not in RAVDESS_INTENSITY:
        raise UnknownCodeError(f"{name!r}: unknown intensity code {inten}")
    actor_num = int(actor)
    if not 1 <= actor_num <= 24:
        raise UnknownCodeError(f"{name!r}: actor {actor} outside 01-24")
    gender = "male" if actor_num % 2 else "female"
    return ClipMetadata("ravdess", actor, gender, RAVDESS_EMOTIONS[emo], RAVDESS_INTENSITY[inten],
                        str(name))


_CREMAD_RE = re.compile(r"^(\d{4})_([A-Z]{3})_([A-Z]{3})_([A-Z]{2})$")


def parse_cremad_filename(name: str, genders: dict[str, str] | None = None) -> ClipMetadata:
    """``ACTOR_SENTENCE_EMO_LEVEL.wav``; gender comes from ``genders`` or the defaults."""
    stem = _stem(name)
    m = _CREMAD_RE.match(stem)
    if not m:
        raise FilenameParseError(f"{name!r}: expected ACTORID_SENTENCE_EMOTION_LEVEL")
    actor, _sentence, emo, level = m.groups()
    if emo not in CREMAD_EMOTIONS:
        raise UnknownCodeError(f"{name!r}: unknown emotion code {emo}")
    if level not in CREMAD_LEVELS:
        raise UnknownCodeError(f"{name!r}: unknown intensity level {level}")
    if genders is not None and actor in genders:
        gender = genders[actor]
    else:
        gender = CREMAD_DEFAULT_GENDER.get(actor, "unknown")
    return ClipMetadata("crema_d", actor, gender, CREMAD_EMOTIONS[emo], CREMAD_LEVELS[level],
                        str(name))


def parse_tess_path(path: str) -> ClipMetadata:
    """``SPEAKER_word_emotion.wav`` with SPEAKER in {OAF, YAF}; all speakers are female."""
    stem = _stem(path)
    parts = stem.split("_")
    if len(parts) < 3 or not all(parts):
        raise FilenameParseError(f"{path!r}: expected SPEAKER_word_emotion")
    speaker, emo = parts[0].upper(), parts[-1].lower()
    if speaker not in TESS_SPEAKERS:
        raise UnknownCodeError(f"{path!r}: unknown speaker {parts[0]}")
    if emo not in TESS_EMOTIONS:
        raise UnknownCodeError(f"{path!r}: unknown emotion token {parts[-1]}")
    return ClipMetadata("tess", speaker, "female", TESS_EMOTIONS[emo], "unspecified", str(path))


def load_cremad_demographics(path) -> dict[str, str]:
    """Read CREMA-D's ``VideoDemographics.csv`` (ActorID, ..., Sex)."""
    genders = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            sex = (row.get("Sex") or "").strip().lower()
            genders[row["ActorID"].strip()] = sex if sex in ("male", "female") else "unknown"
    return genders


# ---------------------------------------------------------------- manifests

@dataclass
class Manifest:
    dataset: str
    root: str
    entries: list[ClipMetadata]
    skipped: list[dict] = field(default_factory=list)

    def __post_init__(self):
        paths = [e.rel_path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise DatasetError("manifest has duplicate paths")

    @property
    def dataset_counts(self) -> dict[str, int]:
        return dict(Counter(e.dataset for e in self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    def with_entries(self, entries: Iterable[ClipMetadata]) -> "Manifest":
        return replace(self, entries=sorted(entries, key=lambda e: e.rel_path), skipped=[])

    def filter_actors(self, actors: Iterable[str]) -> "Manifest":
        wanted = {str(a) for a in actors}
        return self.with_entries(e for e in self.entries if e.actor_id in wanted)

    def to_json(self) -> str:
        doc = {"root": self.root, "dataset": self.dataset,
               "entries": [e.to_entry() for e in self.entries]}
        return json.dumps(doc, indent=1, sort_keys=False) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def from_json(cls, text: str) -> "Manifest":
        try:
            doc = json.loads(text)
            dataset = doc["dataset"]
            entries = [ClipMetadata.from_entry(dataset, d) for d in doc["entries"]]
            return cls(dataset, doc["root"], entries)
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DatasetError(f"malformed manifest: {exc}") from exc

    @classmethod
    def load(cls, path) -> "Manifest":
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise AudioIOError(f"no such manifest: {path}") from None


def parser_for(kind: str, demographics=None) -> Callable[[str], ClipMetadata]:
    if kind == "ravdess":
        return parse_ravdess_filename
    if kind == "crema_d":
        genders = load_cremad_demographics(demographics) if demographics else None
        return lambda name: parse_cremad_filename(name, genders)
    if kind == "tess":
        return parse_tess_path
    raise ConfigError(f"unknown dataset {kind!r}; expected one of {DATASETS}")


def scan_dataset(root, kind: str, demographics=None) -> Manifest:
    """Walk ``root`` and parse every .wav; unparseable names go to ``skipped``."""
    parse = parser_for(kind, demographics)
    root = Path(root)
    if not root.is_dir() or not os.access(root, os.R_OK | os.X_OK):
        raise AudioIOError(f"dataset root {root} is not a readable directory")
    entries, skipped = [], []

    def onerror(exc):
        raise AudioIOError(f"cannot walk {root}: {exc}")

    for dirpath, dirnames, filenames in os.walk(root, onerror=onerror):
        dirnames.sort()
        for fname in sorted(filenames):
            if not fname.lower().endswith(".wav"):
                continue
            rel = Path(dirpath, fname).relative_to(root).as_posix()
            try:
                meta = parse(fname)
            except FilenameParseError as exc:
                skipped.append({"path": rel, "reason": type(exc).__name__, "detail": str(exc)})
                continue
            entries.append(replace(meta, rel_path=rel))
    if not entries:
        raise EmptyDatasetError(f"no parseable {kind} files under {root}")
    entries.sort(key=lambda e: e.rel_path)
    return Manifest(kind, str(root), entries, skipped)


def write_skipped(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in manifest.skipped:
            fh.write(json.dumps(item, sort_keys=True) + "\n")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def split_manifest(m: Manifest, test_fraction: float, seed: int) -> tuple[Manifest, Manifest]:
    """Per-emotion seeded split; each class gives round(fraction * size) clips to test."""
    if not 0 < test_fraction < 1:
        raise ConfigError("test_fraction must be in (0, 1)")
    by_emotion: dict[str, list[ClipMetadata]] = defaultdict(list)
    for e in sorted(m.entries, key=lambda e: e.rel_path):
        by_emotion[e.emotion].append(e)
    rng = np.random.default_rng(seed)
    train, test = [], []
    for emotion in sorted(by_emotion):
        group = by_emotion[emotion]
        if len(group) < 2:
            raise DatasetError(f"class {emotion!r} has {len(group)} entry; need >= 2 to split")
        n_test = min(max(_round_half_up(test_fraction * len(group)), 1), len(group) - 1)
        order = rng.permutation(len(group))
        test.extend(group[i] for i in order[:n_test])
        train.extend(group[i] for i in order[n_test:])
    return m.with_entries(train), m.with_entries(test)

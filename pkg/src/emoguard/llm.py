"""Remote multimodal-LLM attacker: request building, retries, parsing, audit log.

The core speaks a generic JSON request (see :func:`build_request`); vendor
payload shapes live in adapter functions. ``MockTransport`` lets the whole
path run offline.
"""
from __future__ import annotations

import base64
import hashlib
import json
import os
import random
import re
import threading
import time
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

from .audio_io import AudioClip, downmix_mono, wav_bytes
from .cnn import LABELS, AttackVerdict
from .errors import (
    ConfigError,
    MissingCredentialsError,
    RemoteServiceError,
    RemoteTimeoutError,
    TransientRemoteError,
)

DEFAULT_PROMPT = "Listen to this audio clip and answer with exactly one word from: {labels}."
MAX_CLIP_S = 60.0

BACKOFF_BASE_S = 1.0
BACKOFF_FACTOR = 2.0
BACKOFF_JITTER = 0.2


@dataclass(frozen=True)
class LlmAttackerConfig:
    endpoint_url: str
    model_name: str
    prompt_template: str = DEFAULT_PROMPT
    timeout_s: float = 60.0
    max_retries: int = 3
    api_key_env_var: str = "EMOGUARD_LLM_API_KEY"
    adapter: str = "generic"
    requests_per_second: float = 1.0

    def __post_init__(self):
        if "{labels}" not in self.prompt_template:
            raise ConfigError("prompt_template must contain the {labels} placeholder")
        if self.max_retries < 0 or self.timeout_s <= 0:
            raise ConfigError("max_retries must be >= 0 and timeout_s > 0")
        if self.adapter not in ADAPTERS:
            raise ConfigError(f"unknown adapter {self.adapter!r}; have {sorted(ADAPTERS)}")

    @classmethod
    def from_dict(cls, d: dict) -> "LlmAttackerConfig":
        if any(k.lower() in ("api_key", "key", "token", "secret") for k in d):
            raise ConfigError("LLM config must name an env var (api_key_env_var), not hold a secret")
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown LLM config fields: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "LlmAttackerConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class LlmTranscript:
    request_digest: str
    raw_response_text: str
    parsed_label: str | None
    latency_ms: float
    attempts: int = 1
    outcome: str = "ok"  # ok | unparseable | timeout | http_error | missing_credentials
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# ---------------------------------------------------------------- parsing

_SYNONYMS = {
    "pleasant surprise": "surprise",
    "surprised": "surprise",
    "surprise": "surprise",
    "fearful": "fear",
    "fear": "fear",
    "anger": "angry",
    "angry": "angry",
    "happiness": "happy",
    "happy": "happy",
    "sadness": "sad",
    "sad": "sad",
    "calm": "calm",
    "disgusted": "disgust",
    "disgust": "disgust",
    "neutral": "neutral",
}
# longest alternatives first so "pleasant surprise" wins over "surprise"
_PATTERN = re.compile(
    r"\b(" + "|".join(re.escape(k) for k in sorted(_SYNONYMS, key=len, reverse=True)) + r")\b",
    re.IGNORECASE,
)


def parse_emotion_label(text: str, labels: Sequence[str] = LABELS) -> str | None:
    """First emotion word (or synonym) in reading order that maps into ``labels``."""
    allowed = set(labels)
    for m in _PATTERN.finditer(text or ""):
        label = _SYNONYMS[m.group(1).lower()]
        if label in allowed:
            return label
    return None


# ---------------------------------------------------------------- wire format

def build_request(clip: AudioClip, cfg: LlmAttackerConfig, labels: Sequence[str]) -> dict:
    audio = base64.b64encode(wav_bytes(downmix_mono(clip), 16)).decode("ascii")
    prompt = cfg.prompt_template.format(labels=", ".join(labels))
    return {
        "model": cfg.model_name,
        "prompt": prompt,
        "audio": {"format": "wav", "encoding": "base64", "data": audio},
    }


def _generic_payload(req: dict) -> dict:
    return req


def _generic_text(resp: dict) -> str:
    return str(resp.get("text", ""))


def _chat_payload(req: dict) -> dict:
    return {
        "model": req["model"],
        "messages": [{
            "role": "user",
            "content": [
                {"type": "text", "text": req["prompt"]},
                {"type": "input_audio",
                 "input_audio": {"data": req["audio"]["data"], "format": req["audio"]["format"]}},
            ],
        }],
    }


def _chat_text(resp: dict) -> str:
    try:
        return str(resp["choices"][0]["message"]["content"])
    except (KeyError, IndexError, TypeError):
        return ""


# adapter name -> (request -> payload, response json -> text)
ADAPTERS: dict[str, tuple[Callable[[dict], dict], Callable[[dict], str]]] = {
    "generic": (_generic_payload, _generic_text),
    "chat": (_chat_payload, _chat_text),
}


def request_digest(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------- transports

class Transport(Protocol):
    def send(self, payload: dict, api_key: str, timeout_s: float) -> dict: ...


class HttpTransport:
    """JSON POST over urllib. 429/5xx/timeouts are transient; other errors are not."""

    def __init__(self, endpoint_url: str):
        self.endpoint_url = endpoint_url

    def send(self, payload: dict, api_key: str, timeout_s: float) -> dict:
        req = urllib.request.Request(
            self.endpoint_url,
            data=json.dumps(payload).encode(),
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {api_key}"},
            method="POST",
        )
        try:
            with urllib.request.urlopen(req, timeout=timeout_s) as resp:
                body = resp.read()
        except urllib.error.HTTPError as exc:
            if exc.code == 429 or exc.code >= 500:
                raise TransientRemoteError(f"HTTP {exc.code}") from exc
            raise RemoteServiceError(f"HTTP {exc.code}: {exc.reason}", status=exc.code) from exc
        except (TimeoutError, urllib.error.URLError, ConnectionError) as exc:
            raise TransientRemoteError(f"transport failure: {exc}") from exc
        try:
            return json.loads(body)
        except json.JSONDecodeError as exc:
            raise RemoteServiceError(f"response is not JSON: {exc}") from exc


class MockTransport:
    """Scripted offline transport.

    ``script`` items are answered in order (the last one repeats): a string is
    returned as the response text, an exception instance is raised.
    """

    def __init__(self, script: Iterable[str | BaseException] | str, adapter: str = "generic"):
        self.script = [script] if isinstance(script, str) else list(script)
        self.adapter = adapter
        self.calls: list[dict] = []

    def send(self, payload: dict, api_key: str, timeout_s: float) -> dict:
        self.calls.append(payload)
        item = self.script[min(len(self.calls) - 1, len(self.script) - 1)]
        if isinstance(item, BaseException):
            raise item
        if self.adapter == "chat":
            return {"choices": [{"message": {"content": item}}]}
        return {"text": item}


class TokenBucket:
    """Thread-safe token bucket; ``acquire`` blocks until a token is free."""

    def __init__(self, rate_per_s: float, capacity: float = 1.0,
                 clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        if rate_per_s <= 0:
            raise ConfigError("rate must be positive")
        self.rate, self.capacity = rate_per_s, capacity
        self._clock, self._sleep = clock, sleep
        self._tokens = capacity
        self._last = clock()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                self._tokens = min(self.capacity, self._tokens + (now - self._last) * self.rate)
                self._last = now
                if self._tokens >= 1.0:
                    self._tokens -= 1.0
                    return
                wait = (1.0 - self._tokens) / self.rate
            self._sleep(wait)


def backoff_delays(max_retries: int, rng: random.Random) -> list[float]:
    """Exponential delays (1 s, 2 s, 4 s, ...) each jittered by up to 20%."""
    return [BACKOFF_BASE_S * BACKOFF_FACTOR ** i * (1.0 + rng.uniform(-BACKOFF_JITTER, BACKOFF_JITTER))
            for i in range(max_retries)]


@dataclass
class LlmAttacker:
    """Bundles config, transport, rate limiter and the JSON-lines audit log."""

    cfg: LlmAttackerConfig
    transport: Transport
    labels: Sequence[str] = LABELS
    audit_path: Path | None = None
    limiter: TokenBucket | None = None
    sleep: Callable[[float], None] = time.sleep
    rng: random.Random = field(default_factory=lambda: random.Random(0))
    environ: dict | None = None
    name: str = "llm"

    def __post_init__(self):
        if self.limiter is None:
            self.limiter = TokenBucket(self.cfg.requests_per_second, sleep=self.sleep)
        self._audit_lock = threading.Lock()

    def _audit(self, transcript: LlmTranscript) -> None:
        if self.audit_path is None:
            return
        with self._audit_lock, open(self.audit_path, "a", encoding="utf-8") as fh:
            fh.write(transcript.to_json() + "\n")

    def infer(self, clip: AudioClip) -> tuple[AttackVerdict | None, LlmTranscript]:
        verdict, transcript = infer_emotion_remote(clip, self.cfg, self.transport, labels=self.labels,
                                                   sleep=self.sleep, rng=self.rng,
                                                   limiter=self.limiter, environ=self.environ,
                                                   audit=self._audit)
        return verdict, transcript


def infer_emotion_remote(
    clip: AudioClip,
    cfg: LlmAttackerConfig,
    transport: Transport,
    *,
    labels: Sequence[str] = LABELS,
    sleep: Callable[[float], None] = time.sleep,
    rng: random.Random | None = None,
    limiter: TokenBucket | None = None,
    environ: dict | None = None,
    audit: Callable[[LlmTranscript], None] | None = None,
) -> tuple[AttackVerdict | None, LlmTranscript]:
    """Ask the remote model for one emotion word.

    Returns ``(None, transcript)`` with ``outcome == "unparseable"`` when the
    answer names no known emotion. Credential, timeout and HTTP failures raise
    after the transcript has been recorded.
    """
    rng = rng or random.Random(0)
    env = os.environ if environ is None else environ
    if clip.duration_s > MAX_CLIP_S:
        raise ConfigError(f"clip is {clip.duration_s:.1f} s; remote attacker accepts <= {MAX_CLIP_S:g} s")
    to_payload, to_text = ADAPTERS[cfg.adapter]
    payload = to_payload(build_request(clip, cfg, labels))
    digest = request_digest(payload)

    def record(t: LlmTranscript) -> LlmTranscript:
        if audit is not None:
            audit(t)
        return t

    api_key = env.get(cfg.api_key_env_var)
    if not api_key:
        record(LlmTranscript(digest, "", None, 0.0, 0, "missing_credentials",
                             f"environment variable {cfg.api_key_env_var} is not set"))
        raise MissingCredentialsError(f"environment variable {cfg.api_key_env_var} is not set")

    delays = backoff_delays(cfg.max_retries, rng)
    attempts = 0
    start = time.perf_counter()
    while True:
        attempts += 1
        if limiter is not None:
            limiter.acquire()
        try:
            response = transport.send(payload, api_key, cfg.timeout_s)
            break
        except TransientRemoteError as exc:
            last = exc
        except TimeoutError as exc:
            last = exc
        except RemoteServiceError as exc:
            latency = (time.perf_counter() - start) * 1e3
            record(LlmTranscript(digest, "", None, latency, attempts, "http_error", str(exc)))
            raise
        if attempts > cfg.max_retries:
            latency = (time.perf_counter() - start) * 1e3
            record(LlmTranscript(digest, "", None, latency, attempts, "timeout", str(last)))
            raise RemoteTimeoutError(f"gave up after {attempts} attempts: {last}") from last
        sleep(delays[attempts - 1])

    latency = (time.perf_counter() - start) * 1e3
    text = to_text(response)
    label = parse_emotion_label(text, labels)
    transcript = record(LlmTranscript(digest, text, label, latency, attempts,
                                      "ok" if label else "unparseable"))
    if label is None:
        return None, transcript
    probs = tuple(1.0 if l == label else 0.0 for l in labels)
    return AttackVerdict(label, 1.0, probs), transcript

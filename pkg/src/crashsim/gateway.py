"""Chat LLM gateway with live, record, and replay backends.

Replay mode makes the whole extraction pipeline a pure function of its
inputs: requests are fingerprinted (text plus image digests) and answered
from a newline-delimited cassette file. Record mode fills that cassette from
live traffic; repeated identical requests are served from the cassette so a
recording session never sends the same bundle twice.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .knowledge import PromptBundle

log = logging.getLogger(__name__)

DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
DEFAULT_API_KEY_ENV = "OPENAI_API_KEY"
RETRY_BASE_SECONDS = 1.0
RETRY_FACTOR = 2.0


class GatewayError(Exception):
    pass


class CassetteMiss(GatewayError):
    def __init__(self, fingerprint: str):
        self.fingerprint = fingerprint
        super().__init__(
            f"no cassette entry for request fingerprint {fingerprint}; "
            "re-record the cassette or run in live mode")


@dataclass(frozen=True)
class BackendConfig:
    mode: str = "replay"  # "live" | "record" | "replay"
    endpoint: str = DEFAULT_ENDPOINT
    model: str = "gpt-4o"
    temperature: float = 0.0
    max_retries: int = 3
    cassette_path: Path | None = None
    api_key_env: str = DEFAULT_API_KEY_ENV
    requests_per_minute: float | None = None

    def __post_init__(self):
        if self.mode not in ("live", "record", "replay"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError("temperature must be in [0, 2]")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.mode in ("record", "replay") and self.cassette_path is None:
            raise ValueError(f"{self.mode} mode requires a cassette path")


@dataclass
class LlmResponse:
    text: str
    usage: dict[str, int] = field(default_factory=dict)
    elapsed_ms: float = 0.0


def fingerprint_bundle(bundle: PromptBundle) -> str:
    """Stable hash of a bundle's canonical serialization, image bytes digested."""
    canonical = []
    for msg in bundle.messages:
        parts = []
        for part in msg.parts:
            if part.kind == "text":
                parts.append({"kind": "text", "text": part.text})
            else:
                parts.append({
                    "kind": "image",
                    "media_type": part.media_type,
                    "sha256": hashlib.sha256(part.data).hexdigest(),
                })
        canonical.append({"role": msg.role, "parts": parts})
    blob = json.dumps(canonical, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class Cassette:
    """Newline-delimited request/response records keyed by fingerprint."""

    def __init__(self, path: Path, create: bool = False):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._entries: dict[str, tuple[str, float]] = {}
        if self.path.exists():
            self._load()
        elif not create:
            raise GatewayError(f"cassette not found: {self.path}")

    def _load(self) -> None:
        for lineno, line in enumerate(self.path.read_text().splitlines(), start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise GatewayError(f"{self.path}:{lineno}: bad cassette record: {exc}") from None
            fp = record["fingerprint"]
            if fp in self._entries:
                raise GatewayError(f"{self.path}:{lineno}: duplicate fingerprint {fp}")
            self._entries[fp] = (record["response"], float(record.get("latency_ms", 0.0)))

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, fingerprint: str) -> tuple[str, float] | None:
        return self._entries.get(fingerprint)

    def append(self, fingerprint: str, response: str, latency_ms: float) -> None:
        with self._lock:
            if fingerprint in self._entries:
                return
            self._entries[fingerprint] = (response, latency_ms)
            record = {"fingerprint": fingerprint, "response": response,
                      "latency_ms": round(latency_ms, 3)}
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")

    def digest(self) -> str:
        return hashlib.sha256(self.path.read_bytes()).hexdigest()


class _TokenBucket:
    """Serializes live calls to at most ``rate`` requests per minute."""

    def __init__(self, rate_per_minute: float):
        self.interval = 60.0 / rate_per_minute
        self._lock = threading.Lock()
        self._next_free = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next_free - now
            self._next_free = max(now, self._next_free) + self.interval
        if wait > 0:
            time.sleep(wait)


def bundle_to_wire(bundle: PromptBundle, cfg: BackendConfig) -> dict:
    """Render a bundle in the chat wire format with mixed text/image content."""
    messages = []
    for msg in bundle.messages:
        if len(msg.parts) == 1 and msg.parts[0].kind == "text":
            content: object = msg.parts[0].text
        else:
            content = []
            for part in msg.parts:
                if part.kind == "text":
                    content.append({"type": "text", "text": part.text})
                else:
                    b64 = base64.b64encode(part.data).decode("ascii")
                    content.append({
                        "type": "image_url",
                        "image_url": {"url": f"data:{part.media_type};base64,{b64}"},
                    })
        messages.append({"role": msg.role, "content": content})
    return {"model": cfg.model, "temperature": cfg.temperature, "messages": messages}


def _post_chat(cfg: BackendConfig, payload: dict, api_key: str) -> tuple[str, dict]:
    """One live HTTP round trip; returns (assistant text, usage counters)."""
    response = requests.post(
        cfg.endpoint,
        json=payload,
        headers={"Authorization": f"Bearer {api_key}",
                 "Content-Type": "application/json"},
        timeout=120,
    )
    if response.status_code == 429 or response.status_code >= 500:
        raise _RetryableHttpError(response.status_code, response.text[:500])
    response.raise_for_status()
    body = response.json()
    text = body["choices"][0]["message"]["content"]
    usage = body.get("usage", {}) or {}
    return text, {k: v for k, v in usage.items() if isinstance(v, int)}


class _RetryableHttpError(GatewayError):
    def __init__(self, status: int, detail: str):
        self.status = status
        super().__init__(f"HTTP {status}: {detail}")


class LlmClient:
    """Executes prompt bundles against the configured backend."""

    def __init__(self, cfg: BackendConfig):
        self.cfg = cfg
        self.live_requests = 0
        self._bucket = (_TokenBucket(cfg.requests_per_minute)
                        if cfg.requests_per_minute else None)
        self._cassette: Cassette | None = None
        if cfg.mode == "replay":
            self._cassette = Cassette(cfg.cassette_path)
        elif cfg.mode == "record":
            self._cassette = Cassette(cfg.cassette_path, create=True)
        if cfg.mode in ("live", "record"):
            self._api_key = os.environ.get(cfg.api_key_env, "")
            if not self._api_key:
                raise GatewayError(
                    f"{cfg.mode} mode requires credentials in ${cfg.api_key_env}")

    def complete(self, bundle: PromptBundle) -> LlmResponse:
        bundle.check()
        fingerprint = fingerprint_bundle(bundle)

        if self._cassette is not None:
            hit = self._cassette.lookup(fingerprint)
            if hit is not None:
                text, latency = hit
                return LlmResponse(text=text, elapsed_ms=latency)
            if self.cfg.mode == "replay":
                raise CassetteMiss(fingerprint)

        text, usage, elapsed_ms = self._live_call(bundle)
        if self._cassette is not None:
            self._cassette.append(fingerprint, text, elapsed_ms)
        return LlmResponse(text=text, usage=usage, elapsed_ms=elapsed_ms)

    def _live_call(self, bundle: PromptBundle) -> tuple[str, dict, float]:
        payload = bundle_to_wire(bundle, self.cfg)
        attempt = 0
        while True:
            if self._bucket is not None:
                self._bucket.acquire()
            started = time.monotonic()
            try:
                self.live_requests += 1
                text, usage = _post_chat(self.cfg, payload, self._api_key)
                if not text or not text.strip():
                    raise GatewayError("empty assistant reply")
                return text, usage, (time.monotonic() - started) * 1000.0
            except (requests.RequestException, _RetryableHttpError) as exc:
                if attempt >= self.cfg.max_retries:
                    raise GatewayError(
                        f"LLM request failed after {attempt + 1} attempts: {exc}") from exc
                delay = RETRY_BASE_SECONDS * (RETRY_FACTOR ** attempt)
                log.warning("LLM request failed (%s); retrying in %.1fs", exc, delay)
                time.sleep(delay)
                attempt += 1

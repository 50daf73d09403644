"""Model-backend interfaces, wire clients, and deterministic mocks.

Four external model roles sit behind these interfaces: the chat model,
the text-to-image generator, the VQA scorer, and the teacher corrector
(which is just a chat backend with a different prompt). The wire protocol
is a minimal JSON-over-HTTP scheme owned by this repo:

    POST {base_url}/chat  {system?, messages[...]}            -> {content}
    POST {base_url}/t2i   {prompt, seed, width, height}       -> {image_b64, mime}
    POST {base_url}/vqa   {image_b64, question, answer}       -> {prob}

Mocks are keyed by a digest of the request content, never by call order,
so concurrent and replayed evaluations behave identically.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
import threading
import time
import uuid
import zlib
from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import httpx

from .model import VqaItem
from .store import ImageStore, ImageNotFound, content_address, sniff_mime


# --- errors -----------------------------------------------------------------

class BackendError(Exception):
    """Base class for backend failures."""

    kind = "backend_error"


class BackendUnavailable(BackendError):
    kind = "unavailable"


class BackendTimeout(BackendError):
    kind = "timeout"


class MalformedResponse(BackendError):
    kind = "malformed_response"


class ScriptMiss(BackendError):
    """The mock has no scripted entry for this request digest."""

    kind = "script_miss"


class SafetyRejection(BackendError):
    kind = "safety_rejection"


# --- request/response types --------------------------------------------------

@dataclass(frozen=True)
class Part:
    kind: str  # "text" | "image"
    value: str

    def __post_init__(self):
        if self.kind not in ("text", "image"):
            raise ValueError(f"unknown part kind {self.kind!r}")


@dataclass(frozen=True)
class Message:
    role: str  # "user" | "assistant"
    parts: tuple[Part, ...]

    def __post_init__(self):
        object.__setattr__(self, "parts", tuple(self.parts))
        if self.role not in ("user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class ChatRequest:
    """A chat completion request: optional system prompt plus alternating
    user/assistant messages, starting with user."""

    messages: tuple[Message, ...]
    system: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        for i, msg in enumerate(self.messages):
            expected = "user" if i % 2 == 0 else "assistant"
            if msg.role != expected:
                raise ValueError(
                    f"message {i} has role {msg.role!r}, expected {expected!r}"
                )

    def to_wire(self) -> dict:
        body: dict = {
            "messages": [
                {"role": m.role, "parts": [{"kind": p.kind, "value": p.value} for p in m.parts]}
                for m in self.messages
            ]
        }
        if self.system is not None:
            body["system"] = self.system
        return body

    def digest(self) -> str:
        canonical = json.dumps(self.to_wire(), sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def text_message(role: str, text: str) -> Message:
    return Message(role=role, parts=(Part("text", text),))


@dataclass(frozen=True)
class T2IRequest:
    prompt: str
    seed: int
    width: int = 512
    height: int = 512

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if not (0 <= self.seed < 2 ** 64):
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        for name, v in (("width", self.width), ("height", self.height)):
            if not (1 <= v <= 4096):
                raise ValueError(f"{name} must be in [1, 4096]")


@dataclass(frozen=True)
class GeneratedImage:
    content_address: str
    bytes_len: int
    mime: str


@dataclass(frozen=True)
class BackendConfig:
    kind: str = "mock"  # "mock" | "demo" | "http"
    base_url: str | None = None
    auth_token_env: str | None = None
    timeout_ms: int = 30_000
    max_retries: int = 2
    backoff_ms: int = 100
    max_in_flight: int = 8

    def __post_init__(self):
        if self.kind == "http" and not self.base_url:
            raise ValueError("http backends need a base_url")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")


# --- interfaces ---------------------------------------------------------------

class ChatBackend(ABC):
    @abstractmethod
    def complete(self, request: ChatRequest) -> str:
        """Return the raw completion text for a chat request."""


class T2IBackend(ABC):
    @abstractmethod
    def generate(self, request: T2IRequest) -> GeneratedImage:
        """Generate an image and persist it in the image store."""


class VqaBackend(ABC):
    @abstractmethod
    def probability(self, image_address: str, item: VqaItem) -> float:
        """P(answer == item.expected_answer | image, item.question), in [0, 1]."""


# --- mocks ---------------------------------------------------------------------

class MockChatBackend(ChatBackend):
    """Scripted chat backend keyed by request digest.

    An unscripted request raises ScriptMiss rather than fabricating output,
    so tests fail loudly when the orchestration builds an unexpected request.
    """

    def __init__(self, script: dict[str, str] | None = None):
        self._script = dict(script or {})
        self.calls: list[ChatRequest] = []

    def script(self, request: ChatRequest, response: str) -> None:
        self._script[request.digest()] = response

    def complete(self, request: ChatRequest) -> str:
        self.calls.append(request)
        digest = request.digest()
        if digest not in self._script:
            raise ScriptMiss(f"no scripted response for request digest {digest[:12]}…")
        return self._script[digest]


def _png_chunk(tag: bytes, data: bytes) -> bytes:
    return (
        struct.pack(">I", len(data))
        + tag
        + data
        + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)
    )


def synthesize_png(prompt: str, seed: int, side: int = 16) -> bytes:
    """Deterministic RGB PNG whose pixels are a pure function of (prompt, seed)."""
    key = f"{seed}:{prompt}".encode("utf-8")
    stream = b""
    counter = 0
    need = side * side * 3
    while len(stream) < need:
        stream += hashlib.sha256(key + counter.to_bytes(4, "big")).digest()
        counter += 1
    rows = []
    for y in range(side):
        offset = y * side * 3
        rows.append(b"\x00" + stream[offset : offset + side * 3])
    ihdr = struct.pack(">IIBBBBB", side, side, 8, 2, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", zlib.compress(b"".join(rows), 9))
        + _png_chunk(b"IEND", b"")
    )


class MockT2IBackend(T2IBackend):
    """Emits a deterministic synthetic PNG; records every request."""

    def __init__(self, store: ImageStore):
        self.store = store
        self.requests: list[T2IRequest] = []
        self._lock = threading.Lock()

    def generate(self, request: T2IRequest) -> GeneratedImage:
        with self._lock:
            self.requests.append(request)
        data = synthesize_png(request.prompt, request.seed)
        addr = self.store.put(data)
        return GeneratedImage(content_address=addr, bytes_len=len(data), mime="image/png")


class MockVqaBackend(VqaBackend):
    """Fixture-table VQA backend keyed by (content_address, question)."""

    def __init__(self, table: dict[tuple[str, str], float] | None = None,
                 store: ImageStore | None = None):
        self._table = dict(table or {})
        self.store = store
        self.calls: list[tuple[str, VqaItem]] = []

    def script(self, image_address: str, question: str, prob: float) -> None:
        self._table[(image_address, question)] = prob

    def probability(self, image_address: str, item: VqaItem) -> float:
        self.calls.append((image_address, item))
        if self.store is not None and not self.store.has(image_address):
            raise ImageNotFound(image_address)
        key = (image_address, item.question)
        if key not in self._table:
            raise ScriptMiss(f"no fixture probability for {key!r}")
        return self._table[key]


class DemoChatBackend(ChatBackend):
    """Offline heuristic chat backend for demo/serve use (not for metrics).

    Emits the draw token whenever the latest user text looks like a drawing
    request, with a deterministic drawing prompt derived from the text.
    """

    DRAW_CUES = ("draw", "paint", "sketch", "generate an image", "picture of", "画")

    def complete(self, request: ChatRequest) -> str:
        last_user = request.messages[-1]
        text = " ".join(p.value for p in last_user.parts if p.kind == "text")
        lowered = text.lower()
        if any(cue in lowered for cue in self.DRAW_CUES):
            subject = text.rstrip(".!?")
            return f"<draw>{subject}, detailed, high quality, soft lighting."
        return f"Here is what I can tell you: {text}"


class DemoVqaBackend(VqaBackend):
    """Deterministic pseudo-probabilities for offline demo runs."""

    def __init__(self, store: ImageStore | None = None):
        self.store = store

    def probability(self, image_address: str, item: VqaItem) -> float:
        if self.store is not None and not self.store.has(image_address):
            raise ImageNotFound(image_address)
        h = hashlib.sha256(f"{image_address}|{item.question}".encode()).digest()
        return int.from_bytes(h[:4], "big") / 0xFFFFFFFF


# --- HTTP clients ----------------------------------------------------------------

class _HttpClient:
    """Shared retrying JSON-over-HTTP POST machinery.

    Retries transport errors, 429 and 5xx with exponential backoff; the
    client-generated x-request-id header is stable across retries so a
    conformant server can de-duplicate.
    """

    def __init__(self, config: BackendConfig):
        if config.kind != "http":
            raise ValueError("HTTP client requires kind='http'")
        self.config = config
        headers = {}
        if config.auth_token_env:
            import os

            token = os.environ.get(config.auth_token_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            base_url=config.base_url, timeout=config.timeout_ms / 1000.0, headers=headers
        )
        self._semaphore = threading.Semaphore(config.max_in_flight)

    def post_json(self, path: str, body: dict) -> dict:
        request_id = str(uuid.uuid4())
        last_error: Exception | None = None
        with self._semaphore:
            for attempt in range(self.config.max_retries + 1):
                if attempt > 0:
                    time.sleep(self.config.backoff_ms / 1000.0 * (2 ** (attempt - 1)))
                try:
                    resp = self._client.post(path, json=body, headers={"x-request-id": request_id})
                except httpx.TimeoutException as exc:
                    last_error = BackendTimeout(str(exc))
                    continue
                except httpx.TransportError as exc:
                    last_error = BackendUnavailable(str(exc))
                    continue
                if resp.status_code == 200:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise MalformedResponse(f"non-JSON 200 body: {exc}") from exc
                if resp.status_code == 422:
                    raise SafetyRejection(resp.text[:200])
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = BackendUnavailable(f"HTTP {resp.status_code}")
                    continue
                raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
        raise last_error if last_error else BackendUnavailable("request failed")


class HttpChatBackend(ChatBackend):
    def __init__(self, config: BackendConfig):
        self._http = _HttpClient(config)

    def complete(self, request: ChatRequest) -> str:
        payload = self._http.post_json("/chat", request.to_wire())
        content = payload.get("content")
        if not isinstance(content, str):
            raise MalformedResponse(f"chat response missing string 'content': {payload!r}")
        return content


class HttpT2IBackend(T2IBackend):
    def __init__(self, config: BackendConfig, store: ImageStore):
        self._http = _HttpClient(config)
        self.store = store

    def generate(self, request: T2IRequest) -> GeneratedImage:
        payload = self._http.post_json(
            "/t2i",
            {"prompt": request.prompt, "seed": request.seed,
             "width": request.width, "height": request.height},
        )
        b64 = payload.get("image_b64")
        if not isinstance(b64, str):
            raise MalformedResponse(f"t2i response missing 'image_b64': {payload!r}")
        try:
            data = base64.b64decode(b64, validate=True)
        except Exception as exc:
            raise MalformedResponse(f"t2i image_b64 is not valid base64: {exc}") from exc
        mime = payload.get("mime") or sniff_mime(data)
        addr = self.store.put(data)
        return GeneratedImage(content_address=addr, bytes_len=len(data), mime=mime)


class HttpVqaBackend(VqaBackend):
    def __init__(self, config: BackendConfig, store: ImageStore):
        self._http = _HttpClient(config)
        self.store = store

    def probability(self, image_address: str, item: VqaItem) -> float:
        data = self.store.get(image_address)  # raises ImageNotFound
        payload = self._http.post_json(
            "/vqa",
            {"image_b64": base64.b64encode(data).decode("ascii"),
             "question": item.question, "answer": item.expected_answer},
        )
        prob = payload.get("prob")
        if not isinstance(prob, (int, float)) or isinstance(prob, bool):
            raise MalformedResponse(f"vqa response missing numeric 'prob': {payload!r}")
        if not (0.0 <= float(prob) <= 1.0):
            raise MalformedResponse(f"vqa probability out of range: {prob}")
        return float(prob)


# --- factories --------------------------------------------------------------------

def make_chat_backend(config: BackendConfig) -> ChatBackend:
    if config.kind == "http":
        return HttpChatBackend(config)
    if config.kind == "demo":
        return DemoChatBackend()
    return MockChatBackend()


def make_t2i_backend(config: BackendConfig, store: ImageStore) -> T2IBackend:
    if config.kind == "http":
        return HttpT2IBackend(config, store)
    return MockT2IBackend(store)


def make_vqa_backend(config: BackendConfig, store: ImageStore) -> VqaBackend:
    if config.kind == "http":
        return HttpVqaBackend(config, store)
    if config.kind == "demo":
        return DemoVqaBackend(store)
    return MockVqaBackend(store=store)

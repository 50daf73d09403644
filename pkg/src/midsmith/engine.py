"""Live session engine.

Maintains per-conversation state, assembles chat requests from history,
parses the draw-token protocol, drives the image generator with the
session-fixed seed (object consistency), and optionally runs the two-step
self-correction pass before committing a turn.

Turns within one session are strictly sequential; a concurrent step on the
same session is rejected with SessionBusy. Sessions live in memory only.
"""

from __future__ import annotations

import hashlib
import threading
import time
import uuid
from dataclasses import dataclass, field

from .backends import (
    BackendConfig,
    ChatBackend,
    GeneratedImage,
    Message,
    Part,
    T2IBackend,
    T2IRequest,
    make_chat_backend,
    make_t2i_backend,
)
from .model import Modality, UserTurnInput
from .protocol import (
    CorrectionVerdict,
    ParsedAssistantOutput,
    PromptTemplates,
    ProtocolError,
    build_correction_request,
    build_inference_request,
    parse_output,
    parse_teacher_verdict,
    render_output,
)
from .store import ImageStore


class SessionBusy(Exception):
    """A second turn was attempted while one is already in flight."""


@dataclass(frozen=True)
class EngineConfig:
    two_step: bool = False
    image_width: int = 512
    image_height: int = 512
    include_image_parts_in_history: bool = False
    templates: PromptTemplates = field(default_factory=PromptTemplates)
    chat: BackendConfig = field(default_factory=BackendConfig)
    t2i: BackendConfig = field(default_factory=BackendConfig)


@dataclass(frozen=True)
class Exchange:
    user: UserTurnInput
    assistant: ParsedAssistantOutput
    image: GeneratedImage | None = None


@dataclass(frozen=True)
class CorrectionTrace:
    first_response: str
    verdict: CorrectionVerdict | None
    fallback: bool = False


@dataclass(frozen=True)
class AssistantResult:
    modality: Modality
    text: str
    image: GeneratedImage | None = None
    warning: str | None = None
    correction_trace: CorrectionTrace | None = None


@dataclass
class Session:
    id: str
    seed: int
    history: list[Exchange] = field(default_factory=list)
    created_at: float = field(default_factory=time.time)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)


def derive_seed(key: str) -> int:
    """Deterministic 64-bit seed from a string key (session/conversation id)."""
    return int.from_bytes(hashlib.sha256(key.encode("utf-8")).digest()[:8], "big")


def render_user_query(user: UserTurnInput) -> str:
    """Single-string rendering of a user turn for correction/teacher prompts.

    Attached images appear as <img>{address}</img> markers, matching the
    convention the teacher prompt describes.
    """
    if user.image_ref is not None:
        return f"<img>{user.image_ref}</img>{user.text}"
    return user.text


def user_message(user: UserTurnInput) -> Message:
    parts: list[Part] = [Part("text", user.text)]
    if user.image_ref is not None:
        parts.append(Part("image", user.image_ref))
    return Message(role="user", parts=tuple(parts))


def build_history_messages(
    exchanges: list[tuple[UserTurnInput, ParsedAssistantOutput, GeneratedImage | None]],
    include_image_parts: bool = False,
) -> list[Message]:
    """Chat-message rendering of prior exchanges.

    Assistant image turns are fed back as their rendered draw-token text by
    default (cheap and deterministic); with include_image_parts the
    generated image's content address is attached as an image part too.
    """
    messages: list[Message] = []
    for user, assistant, image in exchanges:
        messages.append(user_message(user))
        parts: list[Part] = [Part("text", render_output(assistant))]
        if include_image_parts and image is not None:
            parts.append(Part("image", image.content_address))
        messages.append(Message(role="assistant", parts=tuple(parts)))
    return messages


class Engine:
    """Binds templates, backends, and the image store into the MIDS loop."""

    def __init__(self, config: EngineConfig, chat: ChatBackend, t2i: T2IBackend):
        self.config = config
        self.chat = chat
        self.t2i = t2i

    @classmethod
    def from_config(cls, config: EngineConfig, store: ImageStore) -> "Engine":
        return cls(
            config,
            chat=make_chat_backend(config.chat),
            t2i=make_t2i_backend(config.t2i, store),
        )

    def new_session(self, seed_override: int | None = None) -> Session:
        session_id = str(uuid.uuid4())
        seed = seed_override if seed_override is not None else derive_seed(session_id)
        return Session(id=session_id, seed=seed)

    def _history_messages(self, session: Session) -> list[Message]:
        return build_history_messages(
            [(e.user, e.assistant, e.image) for e in session.history],
            include_image_parts=self.config.include_image_parts_in_history,
        )

    def _first_pass(self, session: Session, user: UserTurnInput) -> str:
        request = build_inference_request(
            self.config.templates, self._history_messages(session), user
        )
        return self.chat.complete(request)

    def _finalize(
        self,
        session: Session,
        user: UserTurnInput,
        raw: str,
        trace: CorrectionTrace | None,
    ) -> AssistantResult:
        parsed = parse_output(raw)
        image: GeneratedImage | None = None
        if parsed.modality is Modality.IMAGE:
            image = self.t2i.generate(
                T2IRequest(
                    prompt=parsed.text,
                    seed=session.seed,
                    width=self.config.image_width,
                    height=self.config.image_height,
                )
            )
        session.history.append(Exchange(user=user, assistant=parsed, image=image))
        return AssistantResult(
            modality=parsed.modality,
            text=parsed.text,
            image=image,
            warning=parsed.warning,
            correction_trace=trace,
        )

    def step(self, session: Session, user: UserTurnInput) -> AssistantResult:
        """One-step inference: chat, parse, generate. A failed turn leaves
        history unchanged."""
        if not session._lock.acquire(blocking=False):
            raise SessionBusy(session.id)
        try:
            raw = self._first_pass(session, user)
            return self._finalize(session, user, raw, trace=None)
        finally:
            session._lock.release()

    def step_two_stage(self, session: Session, user: UserTurnInput) -> AssistantResult:
        """Two-step inference: get a first response, self-correct it with
        the correction prompt, and keep either the original or the
        corrected output. A malformed second completion degrades to the
        first response instead of failing the turn."""
        if not session._lock.acquire(blocking=False):
            raise SessionBusy(session.id)
        try:
            first = self._first_pass(session, user)
            correction_req = build_correction_request(
                self.config.templates, render_user_query(user), first
            )
            second = self.chat.complete(correction_req)
            try:
                verdict = parse_teacher_verdict(second)
            except ProtocolError:
                trace = CorrectionTrace(first_response=first, verdict=None, fallback=True)
                return self._finalize(session, user, first, trace)
            trace = CorrectionTrace(first_response=first, verdict=verdict)
            final = first if verdict.kind == "correct" else verdict.corrected_output
            return self._finalize(session, user, final, trace)
        finally:
            session._lock.release()

    def run_turn(self, session: Session, user: UserTurnInput) -> AssistantResult:
        if self.config.two_step:
            return self.step_two_stage(session, user)
        return self.step(session, user)


def history_snapshot(session: Session) -> list[dict]:
    """Immutable transcript copy; image turns include content addresses."""
    entries: list[dict] = []
    for exchange in session.history:
        entries.append(
            {
                "user": {"text": exchange.user.text, "image_ref": exchange.user.image_ref},
                "assistant": {
                    "modality": exchange.assistant.modality.value,
                    "text": exchange.assistant.text,
                    "image_ref": exchange.image.content_address if exchange.image else None,
                },
            }
        )
    return entries

"""Live consultation engine.

A session keeps a single English message history as the source of truth; the
user-facing language is handled by translating inbound text to English and
model replies back out.  The dialogue model ends the consultation by emitting
the literal ``[PREDICT]`` marker followed by a disease name and justification.
If the exchange budget runs out first, one forced-prediction turn is issued.
"""

from __future__ import annotations

import re
import uuid
from dataclasses import dataclass, field
from enum import Enum

from .clock import SystemClock
from .corpus import DiseaseCatalog, default_catalog
from .errors import MalformedPrediction, SessionStateError, ValidationError
from .langs import LanguageCode, language_name
from .llmgate import ChatMessage, ChatRequest
from .translate import Register, TranslationRequest, translate_text

PREDICT_MARKER = "[PREDICT]"
DEFAULT_MAX_EXCHANGES = 16
DIALOGUE_TEMPERATURE = 0.3
PREDICT_RETRIES = 1


@dataclass(frozen=True)
class PatientProfile:
    age_group: str | None = None
    gender: str | None = None
    height_cm: float | None = None
    weight_kg: float | None = None
    allergies: tuple[str, ...] | None = None
    location: str | None = None
    conditions: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.height_cm is not None and self.height_cm <= 0:
            raise ValidationError("height must be positive")
        if self.weight_kg is not None and self.weight_kg <= 0:
            raise ValidationError("weight must be positive")
        if self.allergies is not None:
            object.__setattr__(self, "allergies", tuple(self.allergies))
        if self.conditions is not None:
            object.__setattr__(self, "conditions", tuple(self.conditions))

    def is_empty(self) -> bool:
        return all(
            getattr(self, f) is None
            for f in ("age_group", "gender", "height_cm", "weight_kg", "allergies", "location", "conditions")
        )

    def to_dict(self) -> dict:
        return {
            "age_group": self.age_group,
            "gender": self.gender,
            "height_cm": self.height_cm,
            "weight_kg": self.weight_kg,
            "allergies": list(self.allergies) if self.allergies is not None else None,
            "location": self.location,
            "conditions": list(self.conditions) if self.conditions is not None else None,
        }

    @classmethod
    def from_dict(cls, raw: dict | None) -> "PatientProfile":
        raw = raw or {}
        return cls(
            age_group=raw.get("age_group"),
            gender=raw.get("gender"),
            height_cm=raw.get("height_cm"),
            weight_kg=raw.get("weight_kg"),
            allergies=tuple(raw["allergies"]) if raw.get("allergies") else None,
            location=raw.get("location"),
            conditions=tuple(raw["conditions"]) if raw.get("conditions") else None,
        )


def render_precontext(profile: PatientProfile) -> str:
    """Deterministic key-ordered profile block for the system message."""
    if profile.is_empty():
        return "Patient profile: not provided"
    parts: list[str] = []
    if profile.age_group is not None:
        parts.append(f"Age group: {profile.age_group}")
    if profile.gender is not None:
        parts.append(f"Gender: {profile.gender}")
    if profile.height_cm is not None:
        parts.append(f"Height: {profile.height_cm:g} cm")
    if profile.weight_kg is not None:
        parts.append(f"Weight: {profile.weight_kg:g} kg")
    if profile.allergies:
        parts.append(f"Allergies: {', '.join(profile.allergies)}")
    if profile.location is not None:
        parts.append(f"Location: {profile.location}")
    if profile.conditions:
        parts.append(f"Conditions: {', '.join(profile.conditions)}")
    return "Patient profile — " + "; ".join(parts)


class SessionState(str, Enum):
    AWAITING_USER = "awaiting_user"
    AWAITING_MODEL = "awaiting_model"
    DIAGNOSED = "diagnosed"
    CLOSED = "closed"
    FAILED = "failed"


_LEGAL_TRANSITIONS: dict[SessionState, set[SessionState]] = {
    SessionState.AWAITING_USER: {SessionState.AWAITING_MODEL, SessionState.CLOSED},
    SessionState.AWAITING_MODEL: {
        SessionState.AWAITING_USER,
        SessionState.DIAGNOSED,
        SessionState.FAILED,
        SessionState.CLOSED,
    },
    SessionState.DIAGNOSED: {SessionState.CLOSED},
    SessionState.FAILED: {SessionState.CLOSED},
    SessionState.CLOSED: {SessionState.CLOSED},
}


@dataclass
class DiagnosisResult:
    disease: str
    justification: str = ""
    forced: bool = False

    def to_dict(self) -> dict:
        return {"disease": self.disease, "justification": self.justification, "forced": self.forced}

    @classmethod
    def from_dict(cls, raw: dict) -> "DiagnosisResult":
        return cls(raw["disease"], raw.get("justification", ""), raw.get("forced", False))


@dataclass
class ConsultationSession:
    id: str
    language: LanguageCode
    profile: PatientProfile
    history_en: list[ChatMessage]
    display_history: list[dict] = field(default_factory=list)  # {"role", "text"}
    state: SessionState = SessionState.AWAITING_USER
    state_log: list[SessionState] = field(default_factory=lambda: [SessionState.AWAITING_USER])
    exchanges_used: int = 0
    max_exchanges: int = DEFAULT_MAX_EXCHANGES
    diagnosis: DiagnosisResult | None = None
    created_at: float = 0.0
    updated_at: float = 0.0

    def transition(self, new_state: SessionState) -> None:
        if new_state not in _LEGAL_TRANSITIONS[self.state]:
            raise SessionStateError(
                f"illegal transition {self.state.value} -> {new_state.value}"
            )
        self.state = new_state
        self.state_log.append(new_state)


CONSULT_SYSTEM_TEMPLATE = (
    "You are a careful medical assistant conducting a preliminary consultation. Ask the "
    "patient one focused follow-up question per turn to narrow down their condition. Do "
    "not give treatment plans. When you are confident in a diagnosis, end the "
    "consultation by replying with the marker {marker} followed by the disease name and "
    "a short justification, for example: \"{marker} Asthma — wheezing with breathlessness "
    "at night\". The diagnosis must be one of: {diseases}.\n\n{precontext}"
)

FORCED_PREDICTION_NUDGE = (
    f"The question budget for this consultation is exhausted. You must now reply with "
    f"{PREDICT_MARKER} followed by the single most likely diagnosis from the allowed "
    f"list and a brief justification. Do not ask anything else."
)

_RETRY_NUDGE = (
    f"Your previous reply contained an invalid prediction. Reply again with "
    f"{PREDICT_MARKER} followed by one disease name from the allowed list, then a "
    f"justification."
)


def new_session(
    profile: PatientProfile,
    language: LanguageCode,
    *,
    max_exchanges: int = DEFAULT_MAX_EXCHANGES,
    catalog: DiseaseCatalog | None = None,
    session_id: str | None = None,
    clock=None,
) -> ConsultationSession:
    """Fresh session in `awaiting_user`; the single system message carries the
    consultation instructions, the rendered pre-context, and the prediction
    protocol.  The system message is always English regardless of language."""
    try:
        language = LanguageCode(language)
    except ValueError as exc:
        raise ValidationError(f"unsupported language {language!r}") from exc
    clock = clock or SystemClock()
    catalog = catalog or default_catalog()
    system = CONSULT_SYSTEM_TEMPLATE.format(
        marker=PREDICT_MARKER,
        diseases=", ".join(catalog.labels()),
        precontext=render_precontext(profile),
    )
    now = clock.now()
    return ConsultationSession(
        id=session_id or uuid.uuid4().hex,
        language=language,
        profile=profile,
        history_en=[ChatMessage("system", system)],
        max_exchanges=max_exchanges,
        created_at=now,
        updated_at=now,
    )


_SEPARATOR_RE = re.compile(r"^[\s:\-\u2013\u2014]+")


def detect_predict(text: str, catalog: DiseaseCatalog | None = None) -> DiagnosisResult | None:
    """Parse a prediction out of a model reply.

    Returns None when the marker is absent.  Raises MalformedPrediction when
    the marker is present but no catalog disease follows it.
    """
    catalog = catalog or default_catalog()
    idx = text.find(PREDICT_MARKER)
    if idx == -1:
        return None
    payload = _SEPARATOR_RE.sub("", text[idx + len(PREDICT_MARKER) :])
    folded = payload.casefold()
    match: str | None = None
    for name in sorted(catalog.labels(), key=len, reverse=True):
        lowered = name.casefold()
        if folded.startswith(lowered):
            after = folded[len(lowered) :]
            if not after or not after[0].isalnum():
                match = name
                break
    if match is None:
        raise MalformedPrediction(
            f"prediction names no catalog disease: {payload[:80]!r}"
        )
    justification = _SEPARATOR_RE.sub("", payload[len(match) :]).strip()
    return DiagnosisResult(disease=match, justification=justification)


@dataclass
class StepOutcome:
    state: SessionState
    reply: str | None = None
    diagnosis: DiagnosisResult | None = None
    localized_justification: str | None = None


def step(
    session: ConsultationSession,
    user_text: str,
    dialogue_backend,
    translation_backend,
    catalog: DiseaseCatalog | None = None,
    *,
    dialogue_model: str = "medaidlm",
    translation_model: str = "translator",
    temperature: float = DIALOGUE_TEMPERATURE,
    predict_retries: int = PREDICT_RETRIES,
    clock=None,
) -> StepOutcome:
    """Advance the consultation by one user turn.

    Translation and transport failures leave the session untouched (the step
    is atomic); all staged changes are committed together at the end.
    """
    if session.state is not SessionState.AWAITING_USER:
        raise SessionStateError(f"cannot step a session in state {session.state.value}")
    user_text = user_text.strip()
    if not user_text:
        raise ValidationError("user text must be non-empty")
    catalog = catalog or default_catalog()
    clock = clock or SystemClock()
    lang = session.language
    english = lang == LanguageCode.EN

    def to_en(text: str) -> str:
        if english:
            return text
        return translate_text(
            TranslationRequest(text, lang, LanguageCode.EN, Register.CLINICAL),
            translation_backend,
            model=translation_model,
        )

    def to_local(text: str) -> str:
        if english or not text:
            return text
        return translate_text(
            TranslationRequest(text, LanguageCode.EN, lang, Register.PATIENT_FACING),
            translation_backend,
            model=translation_model,
        )

    def call_model(history: list[ChatMessage], extra: ChatMessage | None = None) -> str:
        messages = tuple(history if extra is None else [*history, extra])
        return dialogue_backend.complete(
            ChatRequest(model=dialogue_model, messages=messages, temperature=temperature)
        ).text

    def parse_with_retries(history: list[ChatMessage], reply: str) -> tuple[str, DiagnosisResult | None, bool]:
        """Returns (final_reply_text, prediction_or_None, malformed_flag).

        Retry calls carry an ephemeral correction message that is never
        committed to the session history."""
        attempt = 0
        while True:
            try:
                return reply, detect_predict(reply, catalog), False
            except MalformedPrediction:
                if attempt >= predict_retries:
                    return reply, None, True
                attempt += 1
                reply = call_model(history, ChatMessage("system", _RETRY_NUDGE))

    # Everything below stages changes; commit happens at the very end.
    staged_history = list(session.history_en)
    staged_display = list(session.display_history)
    staged_log: list[SessionState] = [SessionState.AWAITING_MODEL]
    staged_exchanges = session.exchanges_used

    user_en = to_en(user_text)
    staged_history.append(ChatMessage("user", user_en))
    staged_display.append({"role": "patient", "text": user_text})

    reply_en = call_model(staged_history)
    reply_en, prediction, malformed = parse_with_retries(staged_history, reply_en)

    outcome: StepOutcome
    forced = False
    if prediction is None and not malformed:
        if staged_exchanges + 1 > session.max_exchanges:
            # The budget is exhausted: drop this question, demand a prediction
            # instead.  The nudge keeps user/assistant alternation intact.
            forced = True
            staged_history.append(ChatMessage("system", FORCED_PREDICTION_NUDGE))
            reply_en = call_model(staged_history)
            reply_en, prediction, malformed = parse_with_retries(staged_history, reply_en)
            staged_history.append(ChatMessage("assistant", reply_en))
            staged_exchanges += 1
            if prediction is not None:
                prediction.forced = True
            else:
                malformed = True
        else:
            staged_history.append(ChatMessage("assistant", reply_en))
            staged_exchanges += 1
            localized_reply = to_local(reply_en)
            staged_display.append({"role": "doctor", "text": localized_reply})
            outcome = StepOutcome(state=SessionState.AWAITING_USER, reply=localized_reply)
            staged_log.append(SessionState.AWAITING_USER)
    else:
        staged_history.append(ChatMessage("assistant", reply_en))
        staged_exchanges += 1

    if prediction is not None:
        localized_justification = to_local(prediction.justification)
        if english:
            display_text = reply_en
        else:
            display_text = f"{PREDICT_MARKER} {prediction.disease}"
            if localized_justification:
                display_text += f" — {localized_justification}"
        staged_display.append({"role": "doctor", "text": display_text})
        staged_log.append(SessionState.DIAGNOSED)
        outcome = StepOutcome(
            state=SessionState.DIAGNOSED,
            diagnosis=prediction,
            localized_justification=localized_justification,
        )
    elif malformed:
        if not forced:
            staged_display.append({"role": "doctor", "text": to_local(reply_en)})
        staged_log.append(SessionState.FAILED)
        outcome = StepOutcome(state=SessionState.FAILED)

    # Commit.
    session.history_en = staged_history
    session.display_history = staged_display
    for state in staged_log:
        session.transition(state)
    session.exchanges_used = staged_exchanges
    if outcome.diagnosis is not None:
        session.diagnosis = outcome.diagnosis
    session.updated_at = clock.now()
    return outcome


def close_session(session: ConsultationSession, clock=None) -> ConsultationSession:
    """Idempotent: any state may close."""
    clock = clock or SystemClock()
    if session.state is not SessionState.CLOSED:
        session.state = SessionState.CLOSED
        session.state_log.append(SessionState.CLOSED)
        session.updated_at = clock.now()
    return session


def session_to_dict(session: ConsultationSession) -> dict:
    return {
        "id": session.id,
        "language": session.language.value,
        "profile": session.profile.to_dict(),
        "history_en": [m.to_dict() for m in session.history_en],
        "display_history": list(session.display_history),
        "state": session.state.value,
        "state_log": [s.value for s in session.state_log],
        "exchanges_used": session.exchanges_used,
        "max_exchanges": session.max_exchanges,
        "diagnosis": session.diagnosis.to_dict() if session.diagnosis else None,
        "created_at": session.created_at,
        "updated_at": session.updated_at,
    }


def offline_doctor_backend(catalog: DiseaseCatalog | None = None, questions: int = 2):
    """Deterministic stand-in for the dialogue model.

    Asks a fixed follow-up question for the first `questions` user turns, then
    predicts the catalog disease whose symptoms best match the user-side text.
    Honors the forced-prediction nudge immediately.  Useful for demos
    (`medaid serve --mock`) and end-to-end tests without a real endpoint.
    """
    from .llmgate import MockBackend
    from .quality import mentions

    catalog = catalog or default_catalog()

    _QUESTIONS = [
        "I understand. How long has this been going on?",
        "Thank you. Have you noticed any other symptoms along with that?",
        "Is there anything that makes it better or worse?",
        "Does anyone around you have similar complaints?",
    ]

    def best_match(text: str) -> str:
        scores = {
            name: sum(1 for s in catalog.symptoms(name) if mentions(text, s))
            for name in catalog.labels()
        }
        return max(sorted(scores), key=lambda name: scores[name])

    def respond(request: ChatRequest) -> str:
        user_turns = [m.content for m in request.messages if m.role == "user"]
        nudged = any(
            m.role == "system" and PREDICT_MARKER in m.content
            for m in request.messages[1:]
        )
        if not nudged and len(user_turns) <= questions:
            return _QUESTIONS[(len(user_turns) - 1) % len(_QUESTIONS)]
        disease = best_match(" ".join(user_turns))
        return f"{PREDICT_MARKER} {disease} — based on the symptoms you described."

    return MockBackend(fallback=respond)


def session_from_dict(raw: dict) -> ConsultationSession:
    return ConsultationSession(
        id=raw["id"],
        language=LanguageCode(raw["language"]),
        profile=PatientProfile.from_dict(raw.get("profile")),
        history_en=[ChatMessage(m["role"], m["content"]) for m in raw["history_en"]],
        display_history=list(raw.get("display_history", [])),
        state=SessionState(raw["state"]),
        state_log=[SessionState(s) for s in raw.get("state_log", [raw["state"]])],
        exchanges_used=raw.get("exchanges_used", 0),
        max_exchanges=raw.get("max_exchanges", DEFAULT_MAX_EXCHANGES),
        diagnosis=DiagnosisResult.from_dict(raw["diagnosis"]) if raw.get("diagnosis") else None,
        created_at=raw.get("created_at", 0.0),
        updated_at=raw.get("updated_at", 0.0),
    )

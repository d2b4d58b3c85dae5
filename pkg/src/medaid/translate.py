"""Bidirectional medical translation over a chat backend.

Used in two places: expanding the English corpus into aligned translations for
the six non-English languages, and the per-turn translation wrapper of the
live consultation loop.  The dialogue model itself stays English-centered;
diagnosis labels are never localized.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .clock import SystemClock
from .corpus import Dialogue, Exchange, Source, dialogue_from_dict, dialogue_to_dict
from .errors import (
    CredentialError,
    JobPaused,
    TransportError,
    TranslationError,
    ValidationError,
)
from .langs import LanguageCode, language_name
from .llmgate import ChatMessage, ChatRequest

logger = logging.getLogger(__name__)

TRANSLATION_TEMPERATURE = 0.2


class Register(str, Enum):
    PATIENT_FACING = "patient_facing"
    CLINICAL = "clinical"


@dataclass(frozen=True)
class TranslationRequest:
    text: str
    source: LanguageCode
    target: LanguageCode
    register: Register = Register.PATIENT_FACING

    def __post_init__(self):
        if self.source == self.target:
            raise ValidationError("translation source and target must differ")


@dataclass
class ParallelDialogue:
    id: str
    translations: dict[LanguageCode, Dialogue]

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "translations": {
                code.value: dialogue_to_dict(d) for code, d in self.translations.items()
            },
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "ParallelDialogue":
        return cls(
            id=raw["id"],
            translations={
                LanguageCode(code): dialogue_from_dict(d)
                for code, d in raw["translations"].items()
            },
        )


BRIDGE_PROMPT = (
    "You are acting as a specialized Medical Translation Bridge, a critical link between "
    "an English-speaking doctor and a patient who speaks {patient_language}. Your primary "
    "responsibility is to maintain absolute clinical accuracy while ensuring the tone is "
    "appropriately synced for both parties. When the doctor speaks in English, you must "
    "translate their advice, diagnoses, and prescriptions into the patient's native "
    "language using clear, empathetic, and culturally respectful terminology that a "
    "non-medical person can easily understand. Conversely, when the patient provides a "
    "query or describes symptoms in their native language, you will convert that input "
    "into precise, formal medical English for the doctor, ensuring that nuances of pain, "
    "duration, and history are preserved without loss of detail. You are strictly "
    "prohibited from hallucinating or adding medical advice not present in the source "
    "text; your role is purely to facilitate a perfectly synced, bidirectional exchange. "
    "Ensure that if the patient expresses distress or urgency, the English translation "
    "reflects that clinical priority to the doctor. Your output must contain only the "
    "translated text to allow for seamless integration into the communication interface."
)


def build_translation_prompt(request: TranslationRequest) -> list[ChatMessage]:
    source_name = language_name(request.source)
    target_name = language_name(request.target)
    patient_side = request.source if request.source != LanguageCode.EN else request.target
    system = BRIDGE_PROMPT.format(patient_language=language_name(patient_side))
    if request.register is Register.PATIENT_FACING:
        direction = (
            f"Current direction: translate the message below from {source_name} into "
            f"clear, empathetic {target_name} that the patient can easily understand."
        )
    else:
        direction = (
            f"Current direction: convert the message below from {source_name} into "
            f"precise, formal medical {target_name} for the doctor."
        )
    return [
        ChatMessage("system", system + "\n\n" + direction),
        ChatMessage("user", request.text),
    ]


_STRIP_LABELS = ("translation:", "translated text:", "output:")


def strip_translation_artifacts(text: str) -> str:
    """Remove wrapper noise the 'only the translated text' contract forbids."""
    cleaned = text.strip()
    lowered = cleaned.casefold()
    for label in _STRIP_LABELS:
        if lowered.startswith(label):
            cleaned = cleaned[len(label) :].strip()
            break
    while len(cleaned) >= 2 and cleaned[0] in "\"'«“‘" and cleaned[-1] in "\"'»”’":
        cleaned = cleaned[1:-1].strip()
    return cleaned


def translate_text(
    request: TranslationRequest, backend, *, model: str = "translator"
) -> str:
    """Translate one string; never returns empty text for non-empty input."""
    messages = build_translation_prompt(request)
    reply = backend.complete(
        ChatRequest(model=model, messages=tuple(messages), temperature=TRANSLATION_TEMPERATURE)
    )
    cleaned = strip_translation_artifacts(reply.text)
    if not cleaned:
        raise TranslationError(
            f"translator returned no text for {request.source.value}->{request.target.value}"
        )
    return cleaned


def validate_parallel(parallel: ParallelDialogue) -> list[str]:
    """Alignment violations; an empty list means fully aligned."""
    violations: list[str] = []
    english = parallel.translations.get(LanguageCode.EN)
    if english is None:
        violations.append("missing en entry")
        return violations
    for code, dialogue in parallel.translations.items():
        if dialogue.language != code:
            violations.append(
                f"{code.value}: dialogue language field is {dialogue.language.value}"
            )
        if dialogue.turns != english.turns:
            violations.append(
                f"{code.value}: exchange count {dialogue.turns} != en count {english.turns}"
            )
        if dialogue.diagnosis != english.diagnosis:
            violations.append(
                f"{code.value}: diagnosis {dialogue.diagnosis!r} != en {english.diagnosis!r}"
            )
    return violations


def _translate_dialogue(
    dialogue: Dialogue, target: LanguageCode, backend, model: str
) -> Dialogue:
    exchanges = []
    for exchange in dialogue.exchanges:
        patient = translate_text(
            TranslationRequest(
                exchange.patient.text, LanguageCode.EN, target, Register.PATIENT_FACING
            ),
            backend,
            model=model,
        )
        doctor = translate_text(
            TranslationRequest(
                exchange.doctor.text, LanguageCode.EN, target, Register.PATIENT_FACING
            ),
            backend,
            model=model,
        )
        exchanges.append(Exchange.of(patient, doctor))
    return Dialogue(
        id=dialogue.id,
        exchanges=exchanges,
        diagnosis=dialogue.diagnosis,  # labels stay canonical English
        source=Source.TRANSLATED,
        language=target,
    )


def expand_corpus(
    corpus: Sequence[Dialogue],
    targets: Iterable[LanguageCode],
    backend,
    *,
    model: str = "translator",
    output_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    clock=None,
) -> list[ParallelDialogue]:
    """Expand English dialogues into aligned parallel entries.

    Source dialogues are never mutated.  A dialogue with any failed utterance
    translation is excluded (logged, counted in the checkpoint as skipped).
    With an output path the expansion appends as it goes and resumes from its
    checkpoint after interruption.
    """
    targets = [LanguageCode(t) for t in targets]
    for d in corpus:
        if d.language != LanguageCode.EN:
            raise ValidationError(f"dialogue {d.id!r} is not English; expand from en only")
    clock = clock or SystemClock()
    checkpoint = None
    completed: set[str] = set()
    if checkpoint_path is not None:
        checkpoint = load_checkpoint(checkpoint_path) or Checkpoint()
        completed = set(checkpoint.completed_ids) | {
            entry["id"] for entry in checkpoint.skipped
        }
    out_fh = None
    if output_path is not None:
        Path(output_path).parent.mkdir(parents=True, exist_ok=True)
        out_fh = open(output_path, "a", encoding="utf-8")

    started = clock.monotonic()
    results: list[ParallelDialogue] = []
    try:
        for dialogue in corpus:
            if dialogue.id in completed:
                continue
            translations: dict[LanguageCode, Dialogue] = {LanguageCode.EN: dialogue}
            try:
                for target in targets:
                    if target == LanguageCode.EN:
                        continue
                    translations[target] = _translate_dialogue(
                        dialogue, target, backend, model
                    )
            except TranslationError as exc:
                logger.warning("dialogue %s excluded (partial translation): %s", dialogue.id, exc)
                if checkpoint is not None:
                    checkpoint.skipped.append({"id": dialogue.id, "reason": str(exc)})
                continue
            except (TransportError, CredentialError) as exc:
                if checkpoint is not None and checkpoint_path is not None:
                    checkpoint.elapsed_seconds += clock.monotonic() - started
                    save_checkpoint(checkpoint, checkpoint_path)
                raise JobPaused(f"translation paused after backend failure: {exc}") from exc
            parallel = ParallelDialogue(id=dialogue.id, translations=translations)
            results.append(parallel)
            if out_fh is not None:
                out_fh.write(json.dumps(parallel.to_dict(), ensure_ascii=False) + "\n")
                out_fh.flush()
            if checkpoint is not None and checkpoint_path is not None:
                checkpoint.completed_ids.add(dialogue.id)
                checkpoint.elapsed_seconds += clock.monotonic() - started
                started = clock.monotonic()
                save_checkpoint(checkpoint, checkpoint_path)
    finally:
        if out_fh is not None:
            out_fh.close()

    if output_path is not None:
        return read_parallel_jsonl(output_path)
    return results


def write_parallel_jsonl(entries: Iterable[ParallelDialogue], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for entry in entries:
            fh.write(json.dumps(entry.to_dict(), ensure_ascii=False) + "\n")


def read_parallel_jsonl(path: str | Path) -> list[ParallelDialogue]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(ParallelDialogue.from_dict(json.loads(line)))
    return out

"""Dialogue data model: MDDial ingestion, ShareGPT export, merging, statistics.

The source corpus format is a single JSON object whose keys are dialog names
("Dialog 1", "Dialog 2", ...) and whose values are arrays of
``{"patient": ..., "doctor": ...}`` pair objects.  Internally a dialogue is a
list of patient/doctor exchanges plus an optional gold disease label; one
exchange is the unit behind all turn statistics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, TextIO

from .errors import (
    CatalogError,
    CorpusParseError,
    CorpusStructureError,
    MedaidError,
    ValidationError,
)
from .langs import LanguageCode


class Role(str, Enum):
    PATIENT = "patient"
    DOCTOR = "doctor"
    SYSTEM = "system"


class Source(str, Enum):
    ORIGINAL = "original"
    SYNTHETIC = "synthetic"
    TRANSLATED = "translated"


@dataclass(frozen=True)
class Utterance:
    """A single trimmed, non-empty utterance."""

    role: Role
    text: str

    def __post_init__(self):
        trimmed = self.text.strip()
        if not trimmed:
            raise ValidationError(f"empty {self.role.value} utterance")
        object.__setattr__(self, "text", trimmed)


@dataclass(frozen=True)
class Exchange:
    """One patient utterance followed by one doctor utterance."""

    patient: Utterance
    doctor: Utterance

    def __post_init__(self):
        if self.patient.role is not Role.PATIENT or self.doctor.role is not Role.DOCTOR:
            raise ValidationError("exchange roles must be (patient, doctor)")

    @classmethod
    def of(cls, patient_text: str, doctor_text: str) -> "Exchange":
        return cls(
            patient=Utterance(Role.PATIENT, patient_text),
            doctor=Utterance(Role.DOCTOR, doctor_text),
        )


@dataclass
class Dialogue:
    id: str
    exchanges: list[Exchange]
    diagnosis: str | None = None
    source: Source = Source.ORIGINAL
    language: LanguageCode = LanguageCode.EN

    def __post_init__(self):
        if not self.exchanges:
            raise ValidationError(f"dialogue {self.id!r} has zero exchanges")

    @property
    def turns(self) -> int:
        return len(self.exchanges)

    def patient_text(self) -> str:
        return " ".join(e.patient.text for e in self.exchanges)

    def full_text(self) -> str:
        return " ".join(t for e in self.exchanges for t in (e.patient.text, e.doctor.text))


class DiseaseCatalog:
    """Closed disease set with per-disease symptom vocabularies."""

    def __init__(self, diseases: dict[str, list[str]], version: str = "custom"):
        if not diseases:
            raise CatalogError("catalog has no diseases")
        for name, symptoms in diseases.items():
            if not symptoms:
                raise CatalogError(f"disease {name!r} has an empty symptom list")
        self.diseases = {name: list(symptoms) for name, symptoms in diseases.items()}
        self.version = version
        self._by_folded = {name.casefold(): name for name in self.diseases}

    def labels(self) -> list[str]:
        return list(self.diseases)

    def symptoms(self, disease: str) -> list[str]:
        canonical = self.canonical(disease)
        if canonical is None:
            raise CatalogError(f"unknown disease {disease!r}")
        return list(self.diseases[canonical])

    def all_symptoms(self) -> set[str]:
        out: set[str] = set()
        for symptoms in self.diseases.values():
            out.update(symptoms)
        return out

    def canonical(self, name: str) -> str | None:
        """Case-insensitive lookup of the canonical disease string."""
        return self._by_folded.get(name.strip().casefold())

    def __contains__(self, name: str) -> bool:
        return self.canonical(name) is not None

    def __len__(self) -> int:
        return len(self.diseases)

    def extract_diagnosis(self, text: str) -> str | None:
        """Longest case-insensitive disease name mentioned in `text`, if any."""
        folded = text.casefold()
        best: str | None = None
        for name in self.diseases:
            if name.casefold() in folded:
                if best is None or len(name) > len(best):
                    best = name
        return best

    @classmethod
    def from_file(cls, path: str | Path) -> "DiseaseCatalog":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict) or "diseases" not in raw:
            raise CatalogError(f"catalog file {path} lacks a 'diseases' object")
        return cls(raw["diseases"], version=raw.get("version", "custom"))


_DEFAULT_CATALOG: DiseaseCatalog | None = None


def default_catalog() -> DiseaseCatalog:
    """The packaged 12-disease catalog (118 distinct symptoms)."""
    global _DEFAULT_CATALOG
    if _DEFAULT_CATALOG is None:
        raw = json.loads(
            resources.files("medaid.data").joinpath("default_catalog.json").read_text("utf-8")
        )
        _DEFAULT_CATALOG = DiseaseCatalog(raw["diseases"], version=raw["version"])
    return _DEFAULT_CATALOG


@dataclass(frozen=True)
class ShareGPTEntry:
    from_: str  # "system" | "human" | "gpt"
    value: str


@dataclass
class ShareGPTConversation:
    conversations: list[ShareGPTEntry]

    def to_dict(self) -> dict:
        return {"conversations": [{"from": e.from_, "value": e.value} for e in self.conversations]}

    @classmethod
    def from_dict(cls, raw: dict) -> "ShareGPTConversation":
        entries = [ShareGPTEntry(item["from"], item["value"]) for item in raw["conversations"]]
        return cls(entries)


@dataclass
class CorpusStats:
    total_dialogues: int
    avg_turns: float
    min_turns: int
    max_turns: int
    avg_words_per_dialogue: float
    avg_words_patient_utterance: float
    avg_words_doctor_utterance: float

    def to_dict(self) -> dict:
        return {
            "total_dialogues": self.total_dialogues,
            "avg_turns": self.avg_turns,
            "min_turns": self.min_turns,
            "max_turns": self.max_turns,
            "avg_words_per_dialogue": self.avg_words_per_dialogue,
            "avg_words_patient_utterance": self.avg_words_patient_utterance,
            "avg_words_doctor_utterance": self.avg_words_doctor_utterance,
        }


def word_count(text: str) -> int:
    """Tokenization rule used for all statistics: split on Unicode whitespace."""
    return len(text.split())


def parse_mddial(text: str, catalog: DiseaseCatalog | None = None) -> list[Dialogue]:
    """Parse a source-format corpus into dialogues.

    The gold diagnosis is taken from the final doctor utterance when it names
    a catalog disease (longest case-insensitive match); otherwise it is left
    unset.
    """
    catalog = catalog or default_catalog()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        byte_offset = len(text[: exc.pos].encode("utf-8"))
        raise CorpusParseError(
            f"malformed corpus JSON at byte {byte_offset}: {exc.msg}", offset=byte_offset
        ) from exc
    if not isinstance(raw, dict):
        raise CorpusStructureError("corpus root must be a JSON object keyed by dialog names")

    dialogues: list[Dialogue] = []
    for key, pairs in raw.items():
        if not isinstance(pairs, list):
            raise CorpusStructureError(f"value of {key!r} is not an array", dialog_key=key)
        exchanges: list[Exchange] = []
        for i, pair in enumerate(pairs):
            if not isinstance(pair, dict) or "patient" not in pair or "doctor" not in pair:
                raise CorpusStructureError(
                    f"{key!r} pair {i} must contain 'patient' and 'doctor'", dialog_key=key
                )
            try:
                exchanges.append(Exchange.of(str(pair["patient"]), str(pair["doctor"])))
            except ValidationError as exc:
                raise ValidationError(f"{key!r} pair {i}: {exc}") from exc
        if not exchanges:
            raise ValidationError(f"dialogue {key!r} has zero exchanges")
        diagnosis = catalog.extract_diagnosis(exchanges[-1].doctor.text)
        dialogues.append(
            Dialogue(id=key, exchanges=exchanges, diagnosis=diagnosis, source=Source.ORIGINAL)
        )
    return dialogues


def to_mddial(corpus: Iterable[Dialogue]) -> dict:
    """Serialize dialogues back to the source JSON shape."""
    return {
        d.id: [{"patient": e.patient.text, "doctor": e.doctor.text} for e in d.exchanges]
        for d in corpus
    }


def to_sharegpt(dialogue: Dialogue, system_message: str) -> ShareGPTConversation:
    """Map patient turns to `human` and doctor turns to `gpt`, system first."""
    entries = [ShareGPTEntry("system", system_message)]
    for exchange in dialogue.exchanges:
        entries.append(ShareGPTEntry("human", exchange.patient.text))
        entries.append(ShareGPTEntry("gpt", exchange.doctor.text))
    return ShareGPTConversation(entries)


def compute_stats(corpus: list[Dialogue]) -> CorpusStats:
    if not corpus:
        raise MedaidError("cannot compute statistics of an empty corpus")
    turn_counts = [d.turns for d in corpus]
    patient_counts: list[int] = []
    doctor_counts: list[int] = []
    dialogue_words: list[int] = []
    for d in corpus:
        total = 0
        for e in d.exchanges:
            pw = word_count(e.patient.text)
            dw = word_count(e.doctor.text)
            patient_counts.append(pw)
            doctor_counts.append(dw)
            total += pw + dw
        dialogue_words.append(total)
    return CorpusStats(
        total_dialogues=len(corpus),
        avg_turns=sum(turn_counts) / len(corpus),
        min_turns=min(turn_counts),
        max_turns=max(turn_counts),
        avg_words_per_dialogue=sum(dialogue_words) / len(corpus),
        avg_words_patient_utterance=sum(patient_counts) / len(patient_counts),
        avg_words_doctor_utterance=sum(doctor_counts) / len(doctor_counts),
    )


def merge_corpora(a: list[Dialogue], b: list[Dialogue]) -> list[Dialogue]:
    """Concatenate two corpora, renaming colliding ids with a '#n' suffix."""
    seen: set[str] = set()
    merged: list[Dialogue] = []
    for d in list(a) + list(b):
        new_id = d.id
        bump = 2
        while new_id in seen:
            new_id = f"{d.id}#{bump}"
            bump += 1
        seen.add(new_id)
        if new_id != d.id:
            d = Dialogue(
                id=new_id,
                exchanges=d.exchanges,
                diagnosis=d.diagnosis,
                source=d.source,
                language=d.language,
            )
        merged.append(d)
    return merged


def dialogue_to_dict(d: Dialogue) -> dict:
    return {
        "id": d.id,
        "language": d.language.value,
        "source": d.source.value,
        "diagnosis": d.diagnosis,
        "exchanges": [{"patient": e.patient.text, "doctor": e.doctor.text} for e in d.exchanges],
    }


def dialogue_from_dict(raw: dict) -> Dialogue:
    exchanges = [Exchange.of(pair["patient"], pair["doctor"]) for pair in raw["exchanges"]]
    return Dialogue(
        id=raw["id"],
        exchanges=exchanges,
        diagnosis=raw.get("diagnosis"),
        source=Source(raw.get("source", "original")),
        language=LanguageCode(raw.get("language", "en")),
    )


def write_jsonl(corpus: Iterable[Dialogue], target: str | Path | TextIO) -> None:
    if hasattr(target, "write"):
        _write_jsonl_stream(corpus, target)  # type: ignore[arg-type]
    else:
        with open(target, "w", encoding="utf-8") as fh:
            _write_jsonl_stream(corpus, fh)


def _write_jsonl_stream(corpus: Iterable[Dialogue], fh: TextIO) -> None:
    for d in corpus:
        fh.write(json.dumps(dialogue_to_dict(d), ensure_ascii=False) + "\n")


def read_jsonl(source: str | Path | TextIO) -> list[Dialogue]:
    if hasattr(source, "read"):
        return _read_jsonl_stream(source)  # type: ignore[arg-type]
    with open(source, encoding="utf-8") as fh:
        return _read_jsonl_stream(fh)


def _read_jsonl_stream(fh: TextIO) -> list[Dialogue]:
    out: list[Dialogue] = []
    for lineno, line in enumerate(fh, start=1):
        if not line.strip():
            continue
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(f"line {lineno}: invalid JSON: {exc.msg}") from exc
        try:
            out.append(dialogue_from_dict(raw))
        except (KeyError, ValueError, ValidationError) as exc:
            raise CorpusParseError(f"line {lineno}: invalid dialogue: {exc}") from exc
    return out

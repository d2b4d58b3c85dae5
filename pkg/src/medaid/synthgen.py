"""Resumable synthetic-consultation factory.

Each job slot asks the model for one consultation conditioned on a target
disease and a few seed symptoms; outputs that fail validation trigger
regeneration with freshly sampled symptoms.  Slot parameters are derived from
(seed, slot index) alone, so an interrupted job resumes to the same id set and
a repeated run reproduces the output byte for byte against a fixed backend.
"""

from __future__ import annotations

import ast
import json
import random
import re
import threading
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .clock import SystemClock
from .corpus import (
    Dialogue,
    DiseaseCatalog,
    Exchange,
    Source,
    dialogue_to_dict,
    default_catalog,
)
from .errors import (
    CatalogError,
    CredentialError,
    GenerationRejected,
    JobPaused,
    TransportError,
    ValidationError,
)
from .llmgate import ChatMessage, ChatRequest, MockBackend, last_user_content

GENERATION_TEMPERATURE = 0.9
REGENERATION_BUDGET = 3
DEFAULT_WORKERS = 4


@dataclass
class GenerationJob:
    target_count: int
    output_path: str | Path
    checkpoint_path: str | Path
    disease_mix: dict[str, float] | None = None  # None = uniform over catalog
    min_exchanges: int = 4
    max_exchanges: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.target_count < 1:
            raise ValidationError("target_count must be >= 1")
        if not 1 <= self.min_exchanges <= self.max_exchanges:
            raise ValidationError("need 1 <= min_exchanges <= max_exchanges")
        if self.disease_mix is not None:
            if any(w < 0 for w in self.disease_mix.values()):
                raise ValidationError("disease weights must be non-negative")
            if not any(w > 0 for w in self.disease_mix.values()):
                raise ValidationError("disease weights must not all be zero")


@dataclass
class ProgressReport:
    done: int
    total: int
    rate: float  # accepted dialogues per minute
    eta: float  # seconds remaining at the current rate (0 when rate is 0)


@dataclass
class RejectionRecord:
    slot: int
    attempt: int
    reason: str
    detail: str


@dataclass
class JobResult:
    dialogues: list[Dialogue]
    rejections: list[RejectionRecord] = field(default_factory=list)
    skipped_slots: list[int] = field(default_factory=list)


def slot_rng(seed: int, slot: int, attempt: int = 0) -> random.Random:
    return random.Random(f"synthgen:{seed}:{slot}:{attempt}")


def slot_id(slot: int) -> str:
    return f"syn-{slot + 1:05d}"


def pick_disease(catalog: DiseaseCatalog, mix: dict[str, float] | None, rng: random.Random) -> str:
    labels = catalog.labels()
    if mix is None:
        return labels[rng.randrange(len(labels))]
    weighted = []
    for name, weight in mix.items():
        canonical = catalog.canonical(name)
        if canonical is None:
            raise CatalogError(f"disease_mix names unknown disease {name!r}")
        if weight > 0:
            weighted.append((canonical, weight))
    total = sum(w for _, w in weighted)
    point = rng.random() * total
    acc = 0.0
    for name, weight in weighted:
        acc += weight
        if point < acc:
            return name
    return weighted[-1][0]


GENERATION_SYSTEM_PROMPT = (
    "You are a medical dialogue writer. Produce one synthetic consultation between a "
    "patient and a doctor as a single JSON object in exactly this shape: "
    '{"Dialog 1": [{"patient": "...", "doctor": "..."}, ...]}. '
    "Output the JSON object only, with no commentary before or after it."
)


def build_generation_prompt(
    disease: str,
    catalog: DiseaseCatalog,
    rng: random.Random,
    min_exchanges: int = 4,
    max_exchanges: int = 8,
) -> list[ChatMessage]:
    """System+user messages conditioning one consultation on a disease and
    2-4 randomly sampled seed symptoms; the first sample is the opening
    complaint."""
    canonical = catalog.canonical(disease)
    if canonical is None:
        raise CatalogError(f"unknown disease {disease!r}")
    symptoms = catalog.symptoms(canonical)
    count = rng.randint(2, min(4, len(symptoms)))
    sampled = rng.sample(symptoms, count)
    opening, rest = sampled[0], sampled[1:]
    mention = f" As the dialogue continues the patient also mentions: {', '.join(rest)}." if rest else ""
    user = (
        f"Write a consultation in which the patient turns out to have {canonical}. "
        f"The patient opens with a complaint about {opening}.{mention} "
        f"Use between {min_exchanges} and {max_exchanges} patient/doctor pairs. "
        "The doctor asks one focused follow-up question at a time; patient answers are "
        "informal and occasionally vague or incomplete. In the final pair the doctor "
        f"states the diagnosis, naming {canonical} explicitly."
    )
    return [
        ChatMessage("system", GENERATION_SYSTEM_PROMPT),
        ChatMessage("user", user),
    ]


def _extract_json_block(text: str) -> str | None:
    """First balanced {...} block, respecting quoted strings and escapes."""
    start = text.find("{")
    while start != -1:
        depth = 0
        quote: str | None = None
        escaped = False
        for i in range(start, len(text)):
            ch = text[i]
            if quote is not None:
                if escaped:
                    escaped = False
                elif ch == "\\":
                    escaped = True
                elif ch == quote:
                    quote = None
                continue
            if ch in "\"'":
                quote = ch
            elif ch == "{":
                depth += 1
            elif ch == "}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find("{", start + 1)
    return None


def _loads_tolerant(block: str):
    try:
        return json.loads(block)
    except json.JSONDecodeError:
        pass
    try:
        return ast.literal_eval(block)  # single-quoted pseudo-JSON
    except (ValueError, SyntaxError):
        return None


def parse_generation_output(
    text: str,
    min_exchanges: int = 4,
    max_exchanges: int = 8,
    catalog: DiseaseCatalog | None = None,
) -> Dialogue:
    """Validate one model output into a synthetic Dialogue.

    Raises GenerationRejected with reason "format", "length", or "coherence";
    the reason feeds regeneration accounting.
    """
    catalog = catalog or default_catalog()
    block = _extract_json_block(text)
    if block is None:
        raise GenerationRejected("no JSON object found in model output", GenerationRejected.FORMAT)
    obj = _loads_tolerant(block)
    if not isinstance(obj, dict) or not obj:
        raise GenerationRejected("output is not a non-empty JSON object", GenerationRejected.FORMAT)
    key, pairs = next(iter(obj.items()))
    if not isinstance(pairs, list) or not pairs:
        raise GenerationRejected(f"{key!r} does not hold a non-empty array", GenerationRejected.FORMAT)
    exchanges: list[Exchange] = []
    for i, pair in enumerate(pairs):
        if not isinstance(pair, dict) or "patient" not in pair or "doctor" not in pair:
            raise GenerationRejected(f"pair {i} lacks patient/doctor keys", GenerationRejected.FORMAT)
        try:
            exchanges.append(Exchange.of(str(pair["patient"]), str(pair["doctor"])))
        except ValidationError as exc:
            raise GenerationRejected(f"pair {i}: {exc}", GenerationRejected.FORMAT) from exc
    if not min_exchanges <= len(exchanges) <= max_exchanges:
        raise GenerationRejected(
            f"{len(exchanges)} exchanges outside [{min_exchanges}, {max_exchanges}]",
            GenerationRejected.LENGTH,
        )
    diagnosis = catalog.extract_diagnosis(exchanges[-1].doctor.text)
    if diagnosis is None:
        raise GenerationRejected(
            "final doctor utterance names no catalog disease", GenerationRejected.COHERENCE
        )
    return Dialogue(
        id=str(key), exchanges=exchanges, diagnosis=diagnosis, source=Source.SYNTHETIC
    )


def _read_output_ids(path: Path) -> tuple[set[str], list[str]]:
    """Ids of valid output lines, dropping a torn trailing line if present."""
    if not path.exists():
        return set(), []
    ids: set[str] = set()
    lines: list[str] = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        try:
            ids.add(json.loads(line)["id"])
            lines.append(line)
        except (json.JSONDecodeError, KeyError):
            break  # torn write; everything after it is regenerated
    return ids, lines


def run_job(
    job: GenerationJob,
    backend,
    catalog: DiseaseCatalog | None = None,
    *,
    workers: int = 1,
    regeneration_budget: int = REGENERATION_BUDGET,
    model: str = "generator",
    clock=None,
    progress: Callable[[ProgressReport], None] | None = None,
    progress_every: int = 1,
) -> JobResult:
    """Generate until every slot is accepted or skipped, checkpointing after
    each acceptance.  A transport/credential failure pauses the job with its
    checkpoint intact (JobPaused); restarting resumes without duplicate ids.
    """
    catalog = catalog or default_catalog()
    clock = clock or SystemClock()
    output_path = Path(job.output_path)
    checkpoint_path = Path(job.checkpoint_path)
    output_path.parent.mkdir(parents=True, exist_ok=True)

    checkpoint = load_checkpoint(checkpoint_path) or Checkpoint(
        rng_state={"seed": job.seed}
    )
    done_ids, good_lines = _read_output_ids(output_path)
    completed = set(checkpoint.completed_ids) | done_ids
    if done_ids != set(checkpoint.completed_ids):
        # reconcile after a kill between the output append and checkpoint write
        output_path.write_text(
            "".join(line + "\n" for line in good_lines), encoding="utf-8"
        )
        checkpoint.completed_ids = set(completed)
    skipped_slots = [entry["slot"] for entry in checkpoint.skipped]

    pending = [
        slot
        for slot in range(job.target_count)
        if slot_id(slot) not in completed and slot not in skipped_slots
    ]
    result = JobResult(dialogues=[], skipped_slots=list(skipped_slots))
    started = clock.monotonic()
    base_elapsed = checkpoint.elapsed_seconds
    lock = threading.Lock()
    out_fh = open(output_path, "a", encoding="utf-8")

    def elapsed() -> float:
        return base_elapsed + (clock.monotonic() - started)

    def emit_progress() -> None:
        if progress is None:
            return
        done = len(completed)
        minutes = elapsed() / 60.0
        rate = done / minutes if minutes > 0 else 0.0
        eta = (job.target_count - done) / rate * 60.0 if rate > 0 else 0.0
        progress(ProgressReport(done=done, total=job.target_count, rate=rate, eta=eta))

    def process_slot(slot: int) -> tuple[int, Dialogue | None, list[RejectionRecord]]:
        pick = slot_rng(job.seed, slot)
        disease = pick_disease(catalog, job.disease_mix, pick)
        rejections: list[RejectionRecord] = []
        for attempt in range(regeneration_budget + 1):
            rng = slot_rng(job.seed, slot, attempt)
            messages = build_generation_prompt(
                disease, catalog, rng, job.min_exchanges, job.max_exchanges
            )
            request = ChatRequest(
                model=model,
                messages=tuple(messages),
                temperature=GENERATION_TEMPERATURE,
                seed=job.seed + slot,
            )
            reply = backend.complete(request)
            try:
                dialogue = parse_generation_output(
                    reply.text, job.min_exchanges, job.max_exchanges, catalog
                )
            except GenerationRejected as exc:
                rejections.append(RejectionRecord(slot, attempt, exc.reason, str(exc)))
                continue
            if dialogue.diagnosis != disease:
                rejections.append(
                    RejectionRecord(
                        slot,
                        attempt,
                        GenerationRejected.COHERENCE,
                        f"asked for {disease}, model concluded {dialogue.diagnosis}",
                    )
                )
                continue
            dialogue.id = slot_id(slot)
            return slot, dialogue, rejections
        return slot, None, rejections

    def commit(slot: int, dialogue: Dialogue | None, rejections: list[RejectionRecord]) -> None:
        with lock:
            result.rejections.extend(rejections)
            if dialogue is None:
                result.skipped_slots.append(slot)
                checkpoint.skipped.append({"slot": slot, "id": slot_id(slot)})
            else:
                out_fh.write(json.dumps(dialogue_to_dict(dialogue), ensure_ascii=False) + "\n")
                out_fh.flush()
                result.dialogues.append(dialogue)
                completed.add(dialogue.id)
                checkpoint.completed_ids.add(dialogue.id)
            checkpoint.elapsed_seconds = elapsed()
            save_checkpoint(checkpoint, checkpoint_path)
            if dialogue is not None and len(completed) % progress_every == 0:
                emit_progress()

    try:
        if workers <= 1:
            for slot in pending:
                commit(*process_slot(slot))
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(process_slot, slot) for slot in pending]
                done, not_done = wait(futures, return_when=FIRST_EXCEPTION)
                failure = None
                for future in done:
                    exc = future.exception()
                    if exc is not None:
                        failure = exc
                        continue
                    commit(*future.result())
                for future in not_done:
                    future.cancel()
                if failure is not None:
                    raise failure
    except (TransportError, CredentialError) as exc:
        checkpoint.elapsed_seconds = elapsed()
        save_checkpoint(checkpoint, checkpoint_path)
        raise JobPaused(f"generation paused after backend failure: {exc}") from exc
    finally:
        out_fh.close()

    checkpoint.elapsed_seconds = elapsed()
    save_checkpoint(checkpoint, checkpoint_path)

    from .corpus import read_jsonl

    result.dialogues = read_jsonl(output_path)
    return result


_PATIENT_TEMPLATES = [
    "Doctor, I've been dealing with {symptom} for a few days now.",
    "Honestly the {symptom} is what worries me most.",
    "Yes, and I also noticed {symptom} recently.",
    "It's hard to describe, but there's definitely {symptom}.",
    "Now that you mention it, I do have {symptom} sometimes.",
]

_DOCTOR_TEMPLATES = [
    "I see. Have you noticed anything else, such as changes in sleep or appetite?",
    "How long has this been going on, and is it getting worse?",
    "Does anything make it better or worse?",
    "Thank you. Any other discomfort you can point to?",
    "Understood. Let me ask a couple more questions before we conclude.",
]


def offline_generation_backend(catalog: DiseaseCatalog | None = None, seed: int = 0) -> MockBackend:
    """Backend that fabricates valid consultations offline.

    It reads the target disease and exchange bounds back out of the prompt and
    composes a coherent dialogue from catalog symptoms, deterministically in
    (seed, prompt).  Used by `medaid generate --mock` and the test suite.
    """
    catalog = catalog or default_catalog()

    def fabricate(request: ChatRequest) -> str:
        prompt = last_user_content(request)
        lowered = prompt.casefold()
        disease = None
        for name in catalog.labels():
            if name.casefold() in lowered:
                if disease is None or len(name) > len(disease):
                    disease = name
        if disease is None:
            return "I could not determine the requested disease."
        bounds = re.search(r"between (\d+) and (\d+)", prompt)
        lo, hi = (int(bounds.group(1)), int(bounds.group(2))) if bounds else (4, 8)
        rng = random.Random(f"offline:{seed}:{prompt}")
        n = rng.randint(lo, hi)
        symptoms = catalog.symptoms(disease)
        order = rng.sample(symptoms, len(symptoms))
        pairs = []
        for i in range(n):
            symptom = order[i % len(order)]
            patient = _PATIENT_TEMPLATES[rng.randrange(len(_PATIENT_TEMPLATES))].format(
                symptom=symptom
            )
            if i == n - 1:
                doctor = (
                    f"Given the {order[0]} and {symptom}, this is most consistent with "
                    f"{disease}. I recommend a clinical visit to confirm."
                )
            else:
                doctor = _DOCTOR_TEMPLATES[rng.randrange(len(_DOCTOR_TEMPLATES))]
            pairs.append({"patient": patient, "doctor": doctor})
        return json.dumps({"Dialog 1": pairs}, ensure_ascii=False)

    return MockBackend(fallback=fabricate)

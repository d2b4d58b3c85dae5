"""Quality gates for generated dialogues.

Two independent filters: a symptom/diagnosis coherence check against the
disease catalog, and near-duplicate removal via MinHash over word shingles.
The component-match fraction of two MinHash signatures is an unbiased
estimator of the Jaccard similarity of the underlying shingle sets.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass

from .corpus import Dialogue, DiseaseCatalog
from .errors import SignatureMismatch, ValidationError

# Universal-hash arithmetic is done modulo a Mersenne prime; every shingle is
# first reduced into the field, so h_i(x) = (a_i*x + b_i) mod p stays 64-bit.
_PRIME = (1 << 61) - 1
_EMPTY_SENTINEL = (1 << 64) - 1

DEFAULT_SHINGLE_K = 3
DEFAULT_NUM_HASHES = 128
DEFAULT_DUP_THRESHOLD = 0.8
DEFAULT_REQUIRED_MATCHES = 2


@dataclass(frozen=True)
class ShingleSet:
    shingles: frozenset[int]
    k: int


@dataclass(frozen=True)
class MinHashSignature:
    values: tuple[int, ...]
    n: int
    seed: int


@dataclass
class CoherenceReport:
    dialogue_id: str
    diagnosis: str
    matched_symptoms: list[str]
    required: int
    passed: bool

    def to_dict(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "diagnosis": self.diagnosis,
            "matched_symptoms": self.matched_symptoms,
            "required": self.required,
            "passed": self.passed,
        }


@dataclass
class DedupReport:
    kept: list[str]
    removed: list[tuple[str, str, float]]  # (id, kept_duplicate_id, estimated_jaccard)
    threshold: float

    def to_dict(self) -> dict:
        return {
            "kept": self.kept,
            "removed": [
                {"id": rid, "duplicate_of": kid, "estimated_jaccard": est}
                for rid, kid, est in self.removed
            ],
            "threshold": self.threshold,
        }


_PUNCT_RE = re.compile(r"[^\w\s]", re.UNICODE)


def normalize_text(text: str) -> str:
    """Case-fold, strip punctuation, collapse whitespace."""
    return " ".join(_PUNCT_RE.sub(" ", text.casefold()).split())


def mentions(text: str, phrase: str) -> bool:
    """Token-boundary substring match of a normalized phrase in normalized text."""
    hay = f" {normalize_text(text)} "
    needle = f" {normalize_text(phrase)} "
    return needle in hay


def _hash64(tokens: tuple[str, ...]) -> int:
    digest = hashlib.blake2b(" ".join(tokens).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def shingles(text: str, k: int) -> ShingleSet:
    """All contiguous k-grams of the case-folded whitespace tokens, hashed."""
    if k < 1:
        raise ValidationError("shingle size k must be >= 1")
    tokens = text.casefold().split()
    grams = {
        _hash64(tuple(tokens[i : i + k])) for i in range(len(tokens) - k + 1)
    }
    return ShingleSet(shingles=frozenset(grams), k=k)


def _hash_params(n: int, seed: int) -> list[tuple[int, int]]:
    import random

    rng = random.Random(f"minhash:{seed}")
    return [(rng.randrange(1, _PRIME), rng.randrange(_PRIME)) for _ in range(n)]


def minhash(s: ShingleSet, n: int, seed: int = 0) -> MinHashSignature:
    """Component i is the minimum of the i-th seeded hash over all shingles."""
    if n < 1:
        raise ValidationError("signature length n must be >= 1")
    if not s.shingles:
        return MinHashSignature(values=(_EMPTY_SENTINEL,) * n, n=n, seed=seed)
    reduced = [x % _PRIME for x in s.shingles]
    values = []
    for a, b in _hash_params(n, seed):
        values.append(min((a * x + b) % _PRIME for x in reduced))
    return MinHashSignature(values=tuple(values), n=n, seed=seed)


def estimate_jaccard(a: MinHashSignature, b: MinHashSignature) -> float:
    """Fraction of equal signature components."""
    if (a.n, a.seed) != (b.n, b.seed):
        raise SignatureMismatch(
            f"signatures not comparable: (n={a.n}, seed={a.seed}) vs (n={b.n}, seed={b.seed})"
        )
    return sum(1 for x, y in zip(a.values, b.values) if x == y) / a.n


def dedup(
    corpus: list[Dialogue],
    threshold: float = DEFAULT_DUP_THRESHOLD,
    k: int = DEFAULT_SHINGLE_K,
    n: int = DEFAULT_NUM_HASHES,
    seed: int = 0,
) -> DedupReport:
    """Greedy first-kept scan in corpus order.

    A dialogue whose full concatenated text has estimated Jaccard >= threshold
    against any already-kept dialogue is removed and linked to the earliest
    such kept dialogue.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValidationError("dedup threshold must be in (0, 1]")
    kept: list[tuple[str, MinHashSignature]] = []
    removed: list[tuple[str, str, float]] = []
    for d in corpus:
        sig = minhash(shingles(d.full_text(), k), n, seed)
        duplicate_of: tuple[str, float] | None = None
        for kept_id, kept_sig in kept:
            est = estimate_jaccard(sig, kept_sig)
            if est >= threshold:
                duplicate_of = (kept_id, est)
                break
        if duplicate_of is None:
            kept.append((d.id, sig))
        else:
            removed.append((d.id, duplicate_of[0], duplicate_of[1]))
    return DedupReport(kept=[kid for kid, _ in kept], removed=removed, threshold=threshold)


def coherence_check(
    dialogue: Dialogue, catalog: DiseaseCatalog, required: int = DEFAULT_REQUIRED_MATCHES
) -> CoherenceReport:
    """Count catalog symptoms of the labeled disease in the patient-side text."""
    if dialogue.diagnosis is None or dialogue.diagnosis not in catalog:
        raise ValidationError(
            f"dialogue {dialogue.id!r} has no catalog diagnosis; cannot check coherence"
        )
    diagnosis = catalog.canonical(dialogue.diagnosis)
    assert diagnosis is not None
    patient_text = dialogue.patient_text()
    matched = [s for s in catalog.symptoms(diagnosis) if mentions(patient_text, s)]
    return CoherenceReport(
        dialogue_id=dialogue.id,
        diagnosis=diagnosis,
        matched_symptoms=matched,
        required=required,
        passed=len(matched) >= required,
    )

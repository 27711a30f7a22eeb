"""Skill knowledge base with deterministic retrieval.

Entries describe registered skills in natural language. Retrieval ranks them
by cosine similarity between hashed bag-of-token embeddings of the query and
of each entry's description plus tags, so results are reproducible without a
learned model. Any callable ``text -> vector`` can replace the embedder.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IFVFError
from .skills.base import SkillSpec

DIM = 256
KB_SCHEMA_VERSION = 1
DEFAULT_KB = Path(__file__).resolve().parent / "data" / "knowledge_base.jsonl"

_TOKEN = re.compile(r"[^a-z0-9]+")
# function words carry no skill information but dominate short queries
STOPWORDS = frozenset("""a an and are as at be by for from in into is it its me my of on or some the then this
to up with you your please can could would""".split())


class KnowledgeError(IFVFError):
    pass


class EmptyKnowledgeBase(KnowledgeError):
    pass


class DuplicateId(KnowledgeError):
    pass


class UnknownEntry(KnowledgeError):
    pass


def tokenize(text: str) -> list:
    return [t for t in _TOKEN.split(text.lower()) if t]


def _bucket(token: str, dim: int):
    """Bucket and sign from two independently keyed hashes of the token."""
    data = token.encode()
    index = int.from_bytes(hashlib.blake2b(data, digest_size=8, person=b"bucket").digest(), "little") % dim
    sign = 1.0 if hashlib.blake2b(data, digest_size=1, person=b"sign").digest()[0] & 1 else -1.0
    return index, sign


def content_tokens(text: str) -> list:
    """Tokens minus stopwords; a text made only of stopwords keeps them all."""
    toks = tokenize(text)
    kept = [t for t in toks if t not in STOPWORDS]
    return kept or toks


def embed_text(text: str, dim: int = DIM) -> np.ndarray:
    """Signed feature hashing of lowercase alphanumeric tokens, L2-normalised."""
    v = np.zeros(dim)
    for tok in content_tokens(text):
        i, s = _bucket(tok, dim)
        v[i] += s
    n = float(np.linalg.norm(v))
    return v / n if n > 0 else v


@dataclass
class SkillEntry:
    id: str
    description: str
    spec: SkillSpec
    tags: list = field(default_factory=list)
    known_uncertainties: list = field(default_factory=list)
    example_invocations: list = field(default_factory=list)

    def __post_init__(self):
        if not self.id:
            raise KnowledgeError("entry id must be non-empty")
        if not self.description.strip():
            raise KnowledgeError(f"entry {self.id} has an empty description")
        if isinstance(self.spec, dict):
            self.spec = SkillSpec.from_dict(self.spec)

    @property
    def text(self) -> str:
        return " ".join([self.description, *self.tags])

    def to_dict(self) -> dict:
        return {"id": self.id, "description": self.description, "tags": list(self.tags),
                "known_uncertainties": list(self.known_uncertainties), "spec": self.spec.to_dict(),
                "examples": list(self.example_invocations)}

    @classmethod
    def from_dict(cls, d: dict) -> "SkillEntry":
        return cls(d["id"], d["description"], SkillSpec.from_dict(d["spec"]), list(d.get("tags", [])),
                   list(d.get("known_uncertainties", [])), list(d.get("examples", [])))


@dataclass(frozen=True)
class RetrievalResult:
    entry_id: str
    score: float
    rank: int


class KnowledgeBase:
    """Ordered collection of entries; `path`, when set, is rewritten on every change.

    Reads are safe to share between threads once loaded; `add_entry` and
    `remove_entry` need external synchronisation.
    """

    def __init__(self, entries=(), path=None, embedder=embed_text):
        self.path = Path(path) if path is not None else None
        self.embedder = embedder
        self._entries: dict = {}
        self._ids: list = []
        self._vectors: list = []
        self._matrix = None
        for e in entries:
            self._insert(e)

    def __len__(self) -> int:
        return len(self._ids)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._entries

    def __iter__(self):
        return (self._entries[i] for i in self._ids)

    def get(self, entry_id: str) -> SkillEntry:
        if entry_id not in self._entries:
            raise UnknownEntry(entry_id)
        return self._entries[entry_id]

    def _insert(self, entry: SkillEntry) -> None:
        if entry.id in self._entries:
            raise DuplicateId(entry.id)
        self._entries[entry.id] = entry
        self._ids.append(entry.id)
        self._vectors.append(self.embedder(entry.text))
        self._matrix = None

    def add_entry(self, entry: SkillEntry) -> "KnowledgeBase":
        self._insert(entry)
        if self.path is not None:
            self.save(self.path)
        return self

    def remove_entry(self, entry_id: str) -> SkillEntry:
        if entry_id not in self._entries:
            raise UnknownEntry(entry_id)
        i = self._ids.index(entry_id)
        del self._ids[i]
        del self._vectors[i]
        self._matrix = None
        entry = self._entries.pop(entry_id)
        if self.path is not None:
            self.save(self.path)
        return entry

    def vectors(self) -> np.ndarray:
        if self._matrix is None:
            self._matrix = np.array(self._vectors) if self._vectors else np.zeros((0, DIM))
        return self._matrix

    def scores(self, query: str) -> np.ndarray:
        """Cosine similarity of the query against every entry, in entry order."""
        q = self.embedder(query)
        m = self.vectors()
        norms = np.linalg.norm(m, axis=1)
        qn = float(np.linalg.norm(q))
        if qn == 0:
            return np.zeros(len(self._ids))
        with np.errstate(invalid="ignore", divide="ignore"):
            s = (m @ q) / (norms * qn)
        return np.where(norms > 0, s, 0.0)

    def retrieve_top_k(self, query: str, k: int = 3) -> list:
        if k < 1:
            raise ValueError("k must be at least 1")
        if not self._ids:
            raise EmptyKnowledgeBase("knowledge base has no entries")
        s = self.scores(query)
        # descending score, ties by id
        order = sorted(range(len(self._ids)), key=lambda i: (-s[i], self._ids[i]))[:k]
        return [RetrievalResult(self._ids[i], float(s[i]), r + 1) for r, i in enumerate(order)]

    # ------------------------------------------------------------ storage
    def dumps(self) -> str:
        lines = [json.dumps({"kind": "knowledge_base", "schema_version": KB_SCHEMA_VERSION}, sort_keys=True)]
        lines += [json.dumps(self._entries[i].to_dict(), sort_keys=True) for i in self._ids]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str, path=None, embedder=embed_text) -> "KnowledgeBase":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise KnowledgeError("knowledge base file is empty")
        header = json.loads(lines[0])
        if header.get("kind") != "knowledge_base" or header.get("schema_version") != KB_SCHEMA_VERSION:
            raise KnowledgeError(f"unsupported knowledge base header {header}")
        return cls([SkillEntry.from_dict(json.loads(ln)) for ln in lines[1:]], path=path, embedder=embedder)

    @classmethod
    def load(cls, path=DEFAULT_KB, embedder=embed_text, bind: bool = False) -> "KnowledgeBase":
        """Read a knowledge-base file; with `bind` later changes are written back to it."""
        p = Path(path)
        kb = cls.loads(p.read_text(), embedder=embedder)
        kb.path = p if bind else None
        return kb


_DISTRACTOR_VERBS = ["calibrate", "inspect", "weld", "sand", "paint", "sort", "label", "stack", "align", "polish",
                     "measure", "drill", "fold", "tighten", "scan", "charge", "rinse", "mount", "trim", "sweep"]
_DISTRACTOR_NOUNS = ["lidar", "pallet", "bolt", "seam", "panel", "cable", "battery", "sensor", "bracket", "hinge",
                     "gear", "belt", "valve", "filter", "nozzle", "crate", "tire", "fence", "window", "shelf",
                     "pipe", "motor", "wheel", "rail", "frame", "spring", "lens", "switch", "wire", "clamp"]
_DISTRACTOR_MODS = ["carefully", "quickly", "precision", "industrial", "outdoor", "warehouse", "assembly", "line",
                    "station", "cell", "automated", "routine", "daily", "safety", "quality", "batch", "torque",
                    "tolerance", "alignment", "report", "operator", "conveyor", "fixture", "jig"]


def distractor_entries(n: int, seed: int = 0) -> list:
    """`n` plausible but irrelevant skill entries, e.g. for capacity tests.

    Descriptions are a sentence long, like the real entries, drawn from a
    workshop vocabulary that has nothing to do with kitchen manipulation.
    """
    rng = np.random.default_rng(seed)
    spec = SkillSpec("noop", {})
    out = []
    for i in range(n):
        verb = _DISTRACTOR_VERBS[rng.integers(len(_DISTRACTOR_VERBS))]
        nouns = [_DISTRACTOR_NOUNS[j] for j in rng.choice(len(_DISTRACTOR_NOUNS), 4, replace=False)]
        mods = [_DISTRACTOR_MODS[j] for j in rng.choice(len(_DISTRACTOR_MODS), 6, replace=False)]
        desc = (f"{verb} the {nouns[0]} and {nouns[1]} at the {mods[0]} {mods[1]}, checking the {nouns[2]} "
                f"{mods[2]} with {mods[3]} {nouns[3]} {mods[4]} before {mods[5]}.")
        out.append(SkillEntry(f"distractor_{i:05d}_{verb}", desc, spec, tags=[verb, nouns[0], nouns[1]]))
    return out

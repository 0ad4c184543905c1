"""Embedding store and cosine similarity search over named namespaces.

Namespaces hold at most a few thousand entries, so search is an exact
exhaustive scan (no approximate index): every query is ranked against the
full namespace matrix and ties break on ascending id.  Two embedders are
available: an HTTP client for a remote embedding service and a
self-contained character n-gram feature hasher that needs no network and
is fully deterministic.
"""

from __future__ import annotations

import base64
import json
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

import httpx

NAMESPACES = ("industry", "company", "account", "ratio", "fewshot")

DEFAULT_DIM = 256
_NGRAM_SIZES = (2, 3)


class VectorError(ValueError):
    pass


class EmbeddingProviderError(RuntimeError):
    """Remote embedding call failed; retryable. Carries the provider name."""

    def __init__(self, provider: str, message: str):
        super().__init__(f"{provider}: {message}")
        self.provider = provider


@dataclass
class EmbeddedEntry:
    namespace: str
    id: str
    surface_text: str
    vector: np.ndarray
    metadata: dict[str, str] = field(default_factory=dict)


@dataclass
class Candidate:
    id: str
    surface_text: str
    score: float
    metadata: dict[str, str] = field(default_factory=dict)


class HashingEmbedder:
    """Character n-gram feature hashing into a fixed number of buckets.

    Lowercases, pads with sentinels, hashes 2- and 3-grams with crc32 and
    L2-normalizes the bucket counts.  Same text, same vector, always.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim <= 0:
            raise VectorError("dimension must be positive")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise VectorError("cannot embed empty text")
        normalized = f"\x02{text.lower().strip()}\x03"
        vec = np.zeros(self.dim, dtype=np.float64)
        for n in _NGRAM_SIZES:
            for i in range(len(normalized) - n + 1):
                gram = normalized[i:i + n]
                bucket = zlib.crc32(gram.encode("utf-8")) % self.dim
                vec[bucket] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise VectorError(f"text produced a zero vector: {text!r}")
        return vec / norm


class RemoteEmbedder:
    """Client for an HTTP embedding service (POST {model, input} ->
    {data: [{embedding: [...]}]}).  See docs/embedding-provider.md."""

    def __init__(self, base_url: str, model: str, api_key: str = "",
                 timeout: float = 30.0, client: Optional[httpx.Client] = None):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key
        self._client = client or httpx.Client(timeout=timeout)

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise VectorError("cannot embed empty text")
        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(f"{self.base_url}/embeddings",
                                     json={"model": self.model, "input": text},
                                     headers=headers)
            resp.raise_for_status()
            payload = resp.json()
            return np.asarray(payload["data"][0]["embedding"], dtype=np.float64)
        except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
            raise EmbeddingProviderError(self.base_url, str(exc)) from exc


class VectorIndex:
    """In-memory exhaustive-scan index. Upserts replace by (namespace, id)."""

    def __init__(self):
        self._entries: dict[str, dict[str, EmbeddedEntry]] = {ns: {} for ns in NAMESPACES}

    def namespaces(self) -> list[str]:
        return list(self._entries)

    def size(self, namespace: str) -> int:
        self._check_namespace(namespace)
        return len(self._entries[namespace])

    def total_entries(self) -> int:
        return sum(len(v) for v in self._entries.values())

    def upsert(self, entry: EmbeddedEntry) -> None:
        self._check_namespace(entry.namespace)
        vector = np.asarray(entry.vector, dtype=np.float64)
        if vector.ndim != 1:
            raise VectorError("vector must be one-dimensional")
        if float(np.linalg.norm(vector)) == 0.0:
            raise VectorError("zero vectors are not allowed")
        bucket = self._entries[entry.namespace]
        if bucket:
            dim = next(iter(bucket.values())).vector.shape[0]
            if vector.shape[0] != dim:
                raise VectorError(
                    f"dimension mismatch in {entry.namespace!r}: expected {dim}, got {vector.shape[0]}")
        bucket[entry.id] = EmbeddedEntry(entry.namespace, entry.id, entry.surface_text,
                                         vector, dict(entry.metadata))

    def search(self, namespace: str, query_vector: np.ndarray, k: int) -> list[Candidate]:
        """Top-k by cosine similarity, exact, ties broken by ascending id."""
        self._check_namespace(namespace)
        if k < 1:
            raise VectorError("k must be >= 1")
        bucket = self._entries[namespace]
        if not bucket:
            return []
        ids = sorted(bucket)  # ascending id also fixes tie order
        matrix = np.stack([bucket[i].vector for i in ids])
        q = np.asarray(query_vector, dtype=np.float64)
        qnorm = float(np.linalg.norm(q))
        if qnorm == 0.0:
            raise VectorError("query vector is zero")
        norms = np.linalg.norm(matrix, axis=1)
        scores = (matrix @ q) / (norms * qnorm)
        order = np.argsort(-scores, kind="stable")[:k]
        out = []
        for idx in order:
            e = bucket[ids[int(idx)]]
            out.append(Candidate(e.id, e.surface_text, float(scores[int(idx)]), dict(e.metadata)))
        return out

    def _check_namespace(self, namespace: str) -> None:
        if namespace not in self._entries:
            raise VectorError(f"unknown namespace {namespace!r}; "
                              f"expected one of {sorted(self._entries)}")

    # -- persistence -------------------------------------------------------------

    def dump(self, path: str) -> None:
        """Persist as JSON lines: namespace, id, text, base64 vector, metadata."""
        with open(path, "w", encoding="utf-8") as fh:
            for ns in sorted(self._entries):
                for eid in sorted(self._entries[ns]):
                    e = self._entries[ns][eid]
                    record = {
                        "namespace": ns,
                        "id": eid,
                        "text": e.surface_text,
                        "vector_b64": base64.b64encode(
                            e.vector.astype("<f8").tobytes()).decode("ascii"),
                        "metadata": e.metadata,
                    }
                    fh.write(json.dumps(record, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str) -> "VectorIndex":
        index = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                record = json.loads(line)
                vector = np.frombuffer(
                    base64.b64decode(record["vector_b64"]), dtype="<f8").copy()
                index.upsert(EmbeddedEntry(record["namespace"], record["id"],
                                           record["text"], vector,
                                           record.get("metadata", {})))
        return index


class SearchService:
    """Embedder + index glued together for text queries."""

    def __init__(self, index: Optional[VectorIndex] = None, embedder=None):
        self.index = index or VectorIndex()
        self.embedder = embedder or HashingEmbedder()

    def add_text(self, namespace: str, id: str, surface_text: str,
                 metadata: Optional[dict[str, str]] = None) -> None:
        self.index.upsert(EmbeddedEntry(namespace, id, surface_text,
                                        self.embedder.embed(surface_text),
                                        metadata or {}))

    def search_text(self, namespace: str, query_text: str, k: int) -> list[Candidate]:
        return self.index.search(namespace, self.embedder.embed(query_text), k)


def build_index_from_warehouse(warehouse, fewshots=(), embedder=None) -> SearchService:
    """Populate the four entity namespaces from warehouse contents plus the
    few-shot questions namespace."""
    service = SearchService(embedder=embedder)
    for name in warehouse.list_industries():
        service.add_text("industry", name, name, {"industry": name})
    for stock_code, industry in warehouse.list_companies():
        service.add_text("company", stock_code, stock_code,
                         {"stock_code": stock_code, "industry": industry})
    for code, label in warehouse.catalog.category_codes.items():
        service.add_text("account", code, label, {"category_code": code})
    for code, label in warehouse.catalog.ratio_codes.items():
        service.add_text("ratio", code, label, {"ratio_code": code})
    for i, example in enumerate(fewshots):
        service.add_text("fewshot", f"fs{i:04d}", example.question,
                         {"sql": example.sql, "question": example.question,
                          "commentary": example.commentary or ""})
    return service

"""Provider handles: chat, search, page reading, embedding, judging.

Every handle is either a live network client or a fixture mock; a run uses
one suite uniformly. Fixture files live at
``fixtures/<run-name>/<provider>/<request-hash>.json`` containing
``{"request": ..., "response": ...}``; replay fails loudly on a missing
fixture, never falling back to the network.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import prompts

EMBED_DIM = 256


class ProviderError(RuntimeError):
    pass


class MissingFixtureError(ProviderError):
    def __init__(self, provider: str, request_hash: str):
        super().__init__(
            f"missing fixture for provider {provider!r}: {request_hash}.json "
            "(replay never falls back to live providers)"
        )
        self.provider = provider
        self.request_hash = request_hash


def canonical_request(provider: str, payload) -> tuple[str, str]:
    """Canonicalized request and its content hash (robust to key order)."""
    doc = json.dumps(
        {"provider": provider, "payload": payload},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=False,
    )
    digest = hashlib.sha256(doc.encode("utf-8")).hexdigest()[:24]
    return digest, doc


@dataclass
class ProviderSuite:
    chat: "object"
    search: "object"
    reader: "object"
    embedder: "object"
    judge: "object"


# ---------------------------------------------------------------------------
# Deterministic local providers (tests and replay)
# ---------------------------------------------------------------------------


class HashingEmbedder:
    """Deterministic bag-of-tokens embedding: 256 md5-hashed buckets,
    L2-normalized. Identical strings embed identically; token-disjoint
    strings are orthogonal."""

    dimension = EMBED_DIM

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(EMBED_DIM, dtype=np.float64)
        for token in re.findall(r"\w+", text.lower()):
            bucket = int.from_bytes(
                hashlib.md5(token.encode("utf-8")).digest()[:4], "big"
            )
            vec[bucket % EMBED_DIM] += 1.0
        norm = np.linalg.norm(vec)
        return vec / norm if norm > 0 else vec


class PairwiseConsensusJudge:
    """Deterministic mock judge: uncertainty = 1 - (agreeing pairs / total
    pairs) over normalized answer strings. A single result scores 0.0
    (self-consistent by construction)."""

    def assess(self, description: str, results: list[str]) -> str:
        normed = [" ".join(r.lower().split()) for r in results]
        n = len(normed)
        if n <= 1:
            value = 0.0
        else:
            pairs = n * (n - 1) // 2
            agree = sum(
                1
                for i in range(n)
                for j in range(i + 1, n)
                if normed[i] == normed[j]
            )
            value = 1.0 - agree / pairs
        return f"UNCERTAINTY: {value:.6f}"


# ---------------------------------------------------------------------------
# Fixture replay and recording
# ---------------------------------------------------------------------------


class _FixtureBase:
    provider_name = ""

    def __init__(self, fixture_dir: Path):
        self.dir = Path(fixture_dir) / self.provider_name

    def _lookup(self, payload):
        digest, _ = canonical_request(self.provider_name, payload)
        path = self.dir / f"{digest}.json"
        if not path.exists():
            raise MissingFixtureError(self.provider_name, digest)
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)["response"]


class FixtureChat(_FixtureBase):
    provider_name = "chat"

    def complete(self, messages, model: str) -> str:
        return self._lookup({"messages": messages, "model": model, "temperature": 0})


class FixtureSearch(_FixtureBase):
    provider_name = "search"

    def search(self, query: str) -> list[dict]:
        return self._lookup({"query": query})


class FixtureReader(_FixtureBase):
    provider_name = "reader"

    def read(self, url: str) -> dict:
        return self._lookup({"url": url})


class FixtureJudge(_FixtureBase):
    provider_name = "judge"

    def assess(self, description: str, results: list[str]) -> str:
        return self._lookup({"description": description, "results": results})


class _RecordingBase:
    provider_name = ""

    def __init__(self, inner, fixture_dir: Path):
        self.inner = inner
        self.dir = Path(fixture_dir) / self.provider_name
        self.dir.mkdir(parents=True, exist_ok=True)

    def _record(self, payload, response):
        digest, _ = canonical_request(self.provider_name, payload)
        path = self.dir / f"{digest}.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(
                {"request": payload, "response": response},
                fh,
                sort_keys=True,
                indent=1,
                ensure_ascii=False,
            )
        return response


class RecordingChat(_RecordingBase):
    provider_name = "chat"

    def complete(self, messages, model: str) -> str:
        payload = {"messages": messages, "model": model, "temperature": 0}
        return self._record(payload, self.inner.complete(messages, model))


class RecordingSearch(_RecordingBase):
    provider_name = "search"

    def search(self, query: str) -> list[dict]:
        return self._record({"query": query}, self.inner.search(query))


class RecordingReader(_RecordingBase):
    provider_name = "reader"

    def read(self, url: str) -> dict:
        return self._record({"url": url}, self.inner.read(url))


class RecordingJudge(_RecordingBase):
    provider_name = "judge"

    def assess(self, description: str, results: list[str]) -> str:
        payload = {"description": description, "results": results}
        return self._record(payload, self.inner.assess(description, results))


def build_fixture_suite(fixture_dir) -> ProviderSuite:
    """All providers mocked from fixtures; embeddings are computed locally by
    the deterministic hashing embedder (no fixture needed, fully hermetic)."""
    fixture_dir = Path(fixture_dir)
    return ProviderSuite(
        chat=FixtureChat(fixture_dir),
        search=FixtureSearch(fixture_dir),
        reader=FixtureReader(fixture_dir),
        embedder=HashingEmbedder(),
        judge=FixtureJudge(fixture_dir),
    )


def build_recording_suite(inner: ProviderSuite, fixture_dir) -> ProviderSuite:
    fixture_dir = Path(fixture_dir)
    return ProviderSuite(
        chat=RecordingChat(inner.chat, fixture_dir),
        search=RecordingSearch(inner.search, fixture_dir),
        reader=RecordingReader(inner.reader, fixture_dir),
        embedder=inner.embedder,
        judge=RecordingJudge(inner.judge, fixture_dir),
    )


# ---------------------------------------------------------------------------
# Live network clients
# ---------------------------------------------------------------------------


class LiveChat:
    """OpenAI-compatible chat-completions client (temperature 0)."""

    def __init__(self, base_url: str, api_key: str):
        import requests

        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.session = requests.Session()

    def complete(self, messages, model: str) -> str:
        resp = self.session.post(
            f"{self.base_url}/chat/completions",
            headers={"Authorization": f"Bearer {self.api_key}"},
            json={"model": model, "messages": messages, "temperature": 0},
            timeout=120,
        )
        resp.raise_for_status()
        return resp.json()["choices"][0]["message"]["content"]


class LiveSearch:
    """Serper-compatible search endpoint: query in, organic results out."""

    def __init__(self, base_url: str, api_key: str):
        import requests

        self.base_url = base_url
        self.api_key = api_key
        self.session = requests.Session()

    def search(self, query: str) -> list[dict]:
        resp = self.session.post(
            self.base_url,
            headers={"X-API-KEY": self.api_key},
            json={"q": query},
            timeout=60,
        )
        resp.raise_for_status()
        organic = resp.json().get("organic", [])
        return [
            {
                "title": r.get("title", ""),
                "url": r.get("link", ""),
                "snippet": r.get("snippet", ""),
            }
            for r in organic
        ]


class LiveReader:
    """Jina-Reader-compatible extraction endpoint with a local CSV fallback.

    Modality is routed on the url suffix: .pdf -> pdf, .csv/.xlsx -> tabular,
    known social hosts -> social (JS-rendered fallback path), else html.
    """

    SOCIAL_HOSTS = ("twitter.com", "x.com", "linkedin.com")

    def __init__(self, base_url: Optional[str]):
        import requests

        self.base_url = base_url.rstrip("/") if base_url else None
        self.session = requests.Session()

    def read(self, url: str) -> dict:
        modality = self._modality(url)
        if self.base_url:
            resp = self.session.get(f"{self.base_url}/{url}", timeout=120)
            resp.raise_for_status()
            return {"text": resp.text, "modality": modality}
        if modality == "tabular":
            return {"text": self._read_csv(url), "modality": modality}
        raise ProviderError(
            f"no reader endpoint configured and no local fallback for {url!r}"
        )

    def _modality(self, url: str) -> str:
        lower = url.lower().split("?")[0]
        if any(host in lower for host in self.SOCIAL_HOSTS):
            return "social"
        if lower.endswith(".pdf"):
            return "pdf"
        if lower.endswith((".csv", ".xlsx", ".tsv")):
            return "tabular"
        return "html"

    def _read_csv(self, url: str) -> str:
        import requests

        resp = requests.get(url, timeout=60)
        resp.raise_for_status()
        rows = list(csv.reader(io.StringIO(resp.text)))
        return "\n".join(", ".join(row) for row in rows)


class ChatBackedJudge:
    """Consensus judge implemented over the chat provider wire contract."""

    def __init__(self, chat, model: str):
        self.chat = chat
        self.model = model

    def assess(self, description: str, results: list[str]) -> str:
        numbered = "\n".join(f"{i + 1}. {r}" for i, r in enumerate(results))
        prompt = prompts.render(
            prompts.CONSENSUS_JUDGE, DESCRIPTION=description, RESULTS=numbered
        )
        return self.chat.complete([{"role": "user", "content": prompt}], self.model)


def build_live_suite(env=os.environ, judge_model: str = "") -> ProviderSuite:
    chat_url = env.get("HELICASE_CHAT_URL")
    chat_key = env.get("HELICASE_CHAT_KEY", "")
    search_url = env.get("HELICASE_SEARCH_URL")
    search_key = env.get("HELICASE_SEARCH_KEY", "")
    reader_url = env.get("HELICASE_READER_URL")
    if not chat_url or not search_url:
        raise ProviderError(
            "live mode needs HELICASE_CHAT_URL and HELICASE_SEARCH_URL"
        )
    chat = LiveChat(chat_url, chat_key)
    return ProviderSuite(
        chat=chat,
        search=LiveSearch(search_url, search_key),
        reader=LiveReader(reader_url),
        embedder=HashingEmbedder(),
        judge=ChatBackedJudge(chat, judge_model),
    )

"""Optional rewording of template conversations by an external LLM service.

The service receives a JSON body with an instruction preamble and the
conversation, and must answer with ``{"turns": [{"role", "text"}, ...]}``.
A reply is accepted only if every assistant turn keeps the same multiset
of numbers and box tuples, keeps the label and quality strings it had,
and the result still passes :func:`retinalkit.conversations.verify`.
Anything else (timeouts, HTTP errors, malformed JSON, altered facts)
keeps the template record and logs why.
"""

from __future__ import annotations

import json
import os
import urllib.error
import urllib.request
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

from .conversations import ConversationRecord, ConversationTurn, fact_tokens, verify
from .errors import ConfigError
from .records import ImageRecord

PREAMBLE = (
    "Rephrase each turn of this conversation about a retinal fundus photograph so it reads "
    "naturally, as if you could see the image. Keep every number, every box tuple, the "
    "disease label and the quality word exactly as written. Keep the number and order of "
    "turns. Reply with JSON: {\"turns\": [{\"role\": ..., \"text\": ...}, ...]}."
)


@dataclass(frozen=True)
class LLMClientConfig:
    endpoint: str
    model: str = "paraphraser"
    token_env: str = "RETINALKIT_LLM_TOKEN"
    timeout: float = 30.0
    max_in_flight: int = 4

    def __post_init__(self):
        if not self.endpoint:
            raise ConfigError("llm.endpoint is required when the LLM client is enabled")
        if self.timeout <= 0 or self.max_in_flight < 1:
            raise ConfigError("llm.timeout must be > 0 and llm.max_in_flight >= 1")


def urllib_transport(url: str, body: bytes, headers: dict, timeout: float) -> bytes:
    req = urllib.request.Request(url, data=body, headers=headers, method="POST")
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        return resp.read()


class ParaphraseRejected(Exception):
    pass


def _request(record: ConversationRecord, config: LLMClientConfig, transport) -> list:
    body = json.dumps({
        "model": config.model,
        "instruction": PREAMBLE,
        "conversation": [{"role": t.role, "text": t.text} for t in record.turns],
    }).encode()
    headers = {"Content-Type": "application/json"}
    token = os.environ.get(config.token_env)
    if token:
        headers["Authorization"] = f"Bearer {token}"
    try:
        raw = transport(config.endpoint, body, headers, config.timeout)
    except (urllib.error.URLError, OSError, TimeoutError) as exc:
        raise ParaphraseRejected(f"transport: {exc}") from exc
    try:
        turns = json.loads(raw)["turns"]
        return [(str(t["role"]), str(t["text"])) for t in turns]
    except (ValueError, KeyError, TypeError) as exc:
        raise ParaphraseRejected(f"malformed response: {exc}") from exc


def _check(original: ConversationRecord, turns: list, source: ImageRecord | None) -> ConversationRecord:
    if [r for r, _ in turns] != [t.role for t in original.turns]:
        raise ParaphraseRejected("turn count or roles changed")
    new = replace(original, turns=[
        ConversationTurn(t.role, text, t.question_kind, t.detail)
        for t, (_, text) in zip(original.turns, turns)
    ])
    for old_t, new_t in zip(original.turns, new.turns):
        if old_t.role != "assistant":
            continue
        a = fact_tokens(replace(original, turns=[old_t]))
        b = fact_tokens(replace(original, turns=[new_t]))
        if a != b:
            raise ParaphraseRejected(f"facts altered: {sorted((a - b) + (b - a))}")
        if source is not None:
            for s in (source.disease_label, source.modality, source.quality):
                if s and s in old_t.text and s not in new_t.text:
                    raise ParaphraseRejected(f"dropped {s!r}")
    if source is not None:
        problems = verify(new, source)
        if problems:
            raise ParaphraseRejected("; ".join(problems))
    return new


def paraphrase(record: ConversationRecord, config: LLMClientConfig | None,
               source: ImageRecord | None = None, transport=urllib_transport,
               log: list | None = None) -> ConversationRecord:
    """Reworded copy of ``record``, or ``record`` itself if the service is off or fails a check."""
    if config is None:
        return record
    try:
        new = _check(record, _request(record, config, transport), source)
    except ParaphraseRejected as exc:
        if log is not None:
            log.append({"record_id": record.record_id, "event": "paraphrase_fallback",
                        "reason": str(exc)})
        return record
    new.generator = f"llm:{config.model}"
    return new


def paraphrase_all(records, config: LLMClientConfig | None, sources: dict | None = None,
                   transport=urllib_transport, log: list | None = None) -> list:
    """Paraphrase with at most ``config.max_in_flight`` requests outstanding; output keeps input order."""
    if config is None:
        return list(records)
    sources = sources or {}
    logs: list[list] = [[] for _ in records]

    def one(i_rec):
        i, rec = i_rec
        return paraphrase(rec, config, sources.get(rec.image_id), transport, logs[i])

    with ThreadPoolExecutor(max_workers=config.max_in_flight) as pool:
        out = list(pool.map(one, enumerate(records)))
    if log is not None:
        for entries in logs:
            log.extend(entries)
    return out


def fact_diff(a: ConversationRecord, b: ConversationRecord) -> Counter:
    """Symmetric difference of the stated facts of two records (empty when preserved)."""
    x, y = fact_tokens(a), fact_tokens(b)
    return (x - y) + (y - x)

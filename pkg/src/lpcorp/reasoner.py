"""Stage 1: prompt a reasoning model and parse its reasoning and conclusion.

The oracle is either a chat-completions style HTTP endpoint or the built-in
:class:`SyntheticOracle`, a seeded stand-in whose accuracy is a knob and whose
reasoning text leaks correctness cues for the correction stage to learn from.
"""
from __future__ import annotations

import enum
import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import requests

from .corpus import Dataset, Sample
from .errors import DataError, ProtocolError, TransportError
from .seeding import rng_for

log = logging.getLogger(__name__)

API_KEY_ENV = "LPCORP_API_KEY"


class Conclusion(enum.Enum):
    CLASS0 = "class0"
    CLASS1 = "class1"
    NOT_SURE = "not_sure"

    @classmethod
    def from_label(cls, label: int) -> "Conclusion":
        return cls.CLASS1 if label == 1 else cls.CLASS0

    @property
    def label(self) -> Optional[int]:
        return {Conclusion.CLASS0: 0, Conclusion.CLASS1: 1}.get(self)

    def flipped(self) -> "Conclusion":
        if self is Conclusion.NOT_SURE:
            raise ValueError("cannot flip a not-sure conclusion")
        return Conclusion.CLASS0 if self is Conclusion.CLASS1 else Conclusion.CLASS1


DEFAULT_TASK = """\
Task:
Predict whether the following case will have the outcome "{class1}" or "{class0}" based on the text below.

Text:
{text}

Instructions:
1. Identify the key details in the text.
2. Reason step by step: for each relevant factor, explain whether it supports "{class0}" or "{class1}".
"""

DEFAULT_INSTRUCTIONS = """\
Final Answer:
Return exactly one line containing one of: {class0}, {class1}, or {not_sure}.
"""


@dataclass(frozen=True)
class PromptTemplate:
    task_statement: str = DEFAULT_TASK
    class0_name: str = "class0"
    class1_name: str = "class1"
    not_sure_name: str = "not sure"
    instruction_block: str = DEFAULT_INSTRUCTIONS

    def names(self) -> dict:
        return {
            Conclusion.CLASS0: self.class0_name,
            Conclusion.CLASS1: self.class1_name,
            Conclusion.NOT_SURE: self.not_sure_name,
        }

    @classmethod
    def for_dataset(cls, ds: Dataset, **kw) -> "PromptTemplate":
        return cls(class0_name=ds.class0_name, class1_name=ds.class1_name, **kw)


IHCA_TEMPLATE = PromptTemplate(
    task_statement=DEFAULT_TASK.replace(
        'Predict whether the following case will have the outcome "{class1}" or "{class0}"',
        "Predict whether the patient will experience a cardiac arrest (HCA) during hospitalization",
    ).replace("Text:", "Notes:"),
    class0_name="Will not have HCA",
    class1_name="Will have HCA",
)

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


def render_prompt(tpl: PromptTemplate, s: Sample) -> str:
    """Fill the template in a single pass so narrative text is never re-scanned."""
    if "{text}" not in tpl.task_statement:
        raise DataError("prompt template task_statement lacks a {text} placeholder")
    if "{text}" in tpl.instruction_block:
        raise DataError("the narrative must appear exactly once; remove {text} from instruction_block")
    values = {
        "text": s.text,
        "class0": tpl.class0_name,
        "class1": tpl.class1_name,
        "not_sure": tpl.not_sure_name,
    }

    def sub(m):
        key = m.group(1)
        if key not in values:
            raise DataError(f"unresolved placeholder {{{key}}} in prompt template")
        return values[key]

    body = _PLACEHOLDER.sub(sub, tpl.task_statement)
    tail = _PLACEHOLDER.sub(sub, tpl.instruction_block)
    prompt = body.rstrip("\n") + "\n\n" + tail
    for name in (tpl.class0_name, tpl.class1_name, tpl.not_sure_name):
        if name not in tail:
            raise DataError(f"instruction block must list answer {name!r}")
    return prompt


# --------------------------------------------------------------------------
# parsing

def _line_matches(line: str, names: dict) -> list:
    """Conclusions whose answer string occurs in ``line`` (case-insensitive).

    Longer names are matched first and masked, so an answer that is a substring
    of another (``have HCA`` inside ``not have HCA``) does not double count.
    """
    hay = line.casefold()
    found = []
    for concl, name in sorted(names.items(), key=lambda kv: -len(kv[1])):
        needle = name.casefold()
        if needle and needle in hay:
            found.append(concl)
            hay = hay.replace(needle, "\x00")
    return found


def parse_conclusion(raw: str, tpl: PromptTemplate, lookback: int = 5) -> tuple:
    """Split a raw response into ``(reasoning, conclusion)``.

    The answer is taken from the last nonempty line naming exactly one answer
    string; if it does not qualify, up to ``lookback`` nonempty lines are scanned
    upward. Anything unparseable is NOT_SURE.
    """
    lines = raw.splitlines(keepends=True)
    nonempty = [i for i, ln in enumerate(lines) if ln.strip()]
    names = tpl.names()
    for i in reversed(nonempty[-lookback:]):
        hits = _line_matches(lines[i], names)
        if len(hits) == 1:
            return "".join(lines[:i]).rstrip(), hits[0]
    return raw.strip(), Conclusion.NOT_SURE


# --------------------------------------------------------------------------
# endpoint client

@dataclass(frozen=True)
class OracleConfig:
    endpoint_url: str
    model_name: str
    timeout: float = 120.0
    max_retries: int = 3
    temperature: float = 0.0
    backoff_base: float = 1.0
    max_in_flight: int = 4

    def __post_init__(self):
        if self.timeout <= 0:
            raise DataError("timeout must be positive")
        if self.max_retries < 0:
            raise DataError("max_retries must be >= 0")
        if self.temperature < 0:
            raise DataError("temperature must be >= 0")
        if self.max_in_flight < 1:
            raise DataError("max_in_flight must be >= 1")


class _Retryable(Exception):
    pass


def _extract_content(resp: requests.Response) -> str:
    try:
        body = resp.json()
    except ValueError:
        raise ProtocolError(f"endpoint returned non-JSON body (HTTP {resp.status_code})") from None
    try:
        content = body["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError("response lacks choices[0].message.content") from None
    if not isinstance(content, str):
        raise ProtocolError("choices[0].message.content is not a string")
    return content


def query_oracle(cfg: OracleConfig, prompt: str, sample_id: str = "",
                 session: Optional[requests.Session] = None,
                 audit: Optional[Callable[[dict], None]] = None,
                 sleep: Callable[[float], None] = time.sleep) -> str:
    """POST one chat-completions request and return the assistant message text.

    Transport failures and 5xx responses are retried with exponential backoff,
    ``max_retries`` times after the first attempt.
    """
    payload = {
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": cfg.temperature,
    }
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(API_KEY_ENV)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    http = session or requests

    last = None
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            sleep(cfg.backoff_base * 2 ** (attempt - 1))
        try:
            try:
                resp = http.post(cfg.endpoint_url, json=payload, headers=headers, timeout=cfg.timeout)
            except requests.RequestException as exc:
                raise _Retryable(f"{type(exc).__name__}: {exc}") from None
            if resp.status_code >= 500:
                raise _Retryable(f"HTTP {resp.status_code}")
            if resp.status_code >= 400:
                raise ProtocolError(f"HTTP {resp.status_code}: {resp.text[:200]}")
            content = _extract_content(resp)
        except _Retryable as exc:
            last = str(exc)
            log.warning("sample %s attempt %d failed: %s", sample_id, attempt + 1, last)
            if audit:
                audit({"sample_id": sample_id, "attempt": attempt + 1, "error": last})
            continue
        log.debug("sample %s answered on attempt %d", sample_id, attempt + 1)
        if audit:
            audit({"sample_id": sample_id, "attempt": attempt + 1, "request": payload, "response": content})
        return content
    raise TransportError(f"sample {sample_id}: gave up after {cfg.max_retries + 1} attempts ({last})")


# --------------------------------------------------------------------------
# synthetic oracle

_NEUTRAL = (
    "considering the presented findings overall picture history trend vitals labs "
    "context course assessment review factor evidence suggests weighing"
).split()


@dataclass(frozen=True)
class SyntheticOracle:
    """Seeded stand-in for the reasoning model.

    The conclusion matches the true label with probability ``acc_with_signal``
    when ``signal_token`` occurs in the text and ``acc_without_signal``
    otherwise. The reasoning carries ``n_cues`` cue tokens, each of which is
    ``CUE_OK`` for a correct draw (``CUE_BAD`` for a wrong one) with probability
    ``cue_fidelity`` and the opposite cue otherwise.
    """

    signal_token: str = "sigmarker"
    acc_with_signal: float = 0.7
    acc_without_signal: float = 0.7
    seed: int = 0
    n_cues: int = 3
    cue_fidelity: float = 0.85
    filler_words: int = 12

    def __post_init__(self):
        for name in ("acc_with_signal", "acc_without_signal", "cue_fidelity"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise DataError(f"{name} must be a probability, got {v}")

    def respond(self, s: Sample, tpl: PromptTemplate) -> str:
        rng = rng_for(self.seed, "oracle", s.id)
        has_signal = self.signal_token in s.text
        acc = self.acc_with_signal if has_signal else self.acc_without_signal
        correct = rng.random() < acc
        concl = Conclusion.from_label(s.label if correct else 1 - s.label)

        words = list(rng.choice(_NEUTRAL, size=self.filler_words))
        for _ in range(self.n_cues):
            faithful = rng.random() < self.cue_fidelity
            cue = "CUE_OK" if faithful == correct else "CUE_BAD"
            words.insert(int(rng.integers(0, len(words) + 1)), cue)
        reasoning = "Reasoning: " + " ".join(words) + "."
        return reasoning + "\n" + tpl.names()[concl]


@dataclass
class ReasonedSample:
    sample_id: str
    reasoning: str
    conclusion: Conclusion
    raw_response: str
    error: Optional[str] = None

    @property
    def excluded(self) -> bool:
        return self.conclusion is Conclusion.NOT_SURE

    def to_record(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "reasoning": self.reasoning,
            "conclusion": self.conclusion.value,
            "raw_response": self.raw_response,
            "excluded": self.excluded,
            "error": self.error,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ReasonedSample":
        return cls(rec["sample_id"], rec["reasoning"], Conclusion(rec["conclusion"]),
                   rec["raw_response"], rec.get("error"))


def synthetic_oracle(s: Sample, oracle: SyntheticOracle, tpl: PromptTemplate) -> ReasonedSample:
    raw = oracle.respond(s, tpl)
    reasoning, concl = parse_conclusion(raw, tpl)
    return ReasonedSample(s.id, reasoning, concl, raw)


@dataclass
class Stage1Result:
    reasoned: list
    n_not_sure: int = 0
    n_failed: int = 0
    failures: dict = field(default_factory=dict)


def run_stage1(ds: Dataset, oracle, tpl: PromptTemplate,
               audit_path=None, session: Optional[requests.Session] = None,
               sleep: Callable[[float], None] = time.sleep,
               skip_ids: Sequence[str] = ()) -> Stage1Result:
    """Reason over every sample, keeping input order.

    ``oracle`` is an :class:`OracleConfig` (HTTP endpoint) or a
    :class:`SyntheticOracle`. A sample whose request fails permanently becomes a
    NOT_SURE record carrying the error. More than half failing aborts the run.
    """
    skip = set(skip_ids)
    todo = [s for s in ds.samples if s.id not in skip]

    if isinstance(oracle, SyntheticOracle):
        out = [synthetic_oracle(s, oracle, tpl) for s in todo]
    elif isinstance(oracle, OracleConfig):
        lock = threading.Lock()
        audit_fh = open(audit_path, "a", encoding="utf-8") if audit_path else None

        def audit(rec):
            if audit_fh:
                with lock:
                    audit_fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
                    audit_fh.flush()

        def one(s):
            try:
                raw = query_oracle(oracle, render_prompt(tpl, s), s.id, session, audit, sleep)
            except TransportError as exc:
                return ReasonedSample(s.id, "", Conclusion.NOT_SURE, "", error=str(exc))
            reasoning, concl = parse_conclusion(raw, tpl)
            return ReasonedSample(s.id, reasoning, concl, raw)

        try:
            with ThreadPoolExecutor(max_workers=oracle.max_in_flight) as pool:
                out = list(pool.map(one, todo))
        finally:
            if audit_fh:
                audit_fh.close()
    else:
        raise TypeError(f"unsupported oracle {type(oracle).__name__}")

    failures = {r.sample_id: r.error for r in out if r.error}
    if todo and len(failures) * 2 > len(todo):
        raise TransportError(
            f"stage 1 aborted: {len(failures)} of {len(todo)} oracle calls failed; "
            f"first error: {next(iter(failures.values()))}"
        )
    n_ns = sum(r.excluded for r in out)
    log.info("stage 1: %d reasoned, %d not sure (%d transport failures)", len(out), n_ns, len(failures))
    return Stage1Result(out, n_ns, len(failures), failures)


def read_reasoned(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [ReasonedSample.from_record(json.loads(ln)) for ln in fh if ln.strip()]


def write_reasoned(items, path, append: bool = False) -> None:
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for r in items:
            fh.write(json.dumps(r.to_record(), ensure_ascii=False) + "\n")

"""Evidence and judge backends: remote HTTP, recorded replay, built-in rules."""

from __future__ import annotations

import base64
import json
import logging
import socket
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Sequence

from .alignment import JudgeInput, builtin_judge
from .evidence import EvidenceError, EvidencePack, evidence_from_dict

log = logging.getLogger(__name__)


class ProviderError(RuntimeError):
    kind = "provider"


class ProviderTimeout(ProviderError):
    kind = "timeout"


class ProviderTransportError(ProviderError):
    kind = "transport"


class ProviderSchemaError(ProviderError):
    kind = "schema"


@dataclass(frozen=True)
class JudgeOutcome:
    confidence: float
    source: str
    degraded: bool = False
    error: str | None = None
    completion_tokens: int | None = None
    total_tokens: int | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"confidence": self.confidence, "source": self.source, "degraded": self.degraded}
        if self.error:
            d["error"] = self.error
        if self.completion_tokens is not None:
            d["completion_tokens"] = self.completion_tokens
        if self.total_tokens is not None:
            d["total_tokens"] = self.total_tokens
        return d


def judge_payload(inp: JudgeInput) -> dict[str, Any]:
    shot = None
    if inp.screenshot:
        try:
            shot = base64.b64encode(Path(inp.screenshot).read_bytes()).decode("ascii")
        except OSError:
            shot = None
    return {
        "kind": "judge",
        "step": inp.step,
        "screenshot_b64": shot,
        "i": list(inp.i),
        "b": list(inp.b.vector),
        "history": [{"i": list(i), "b": list(b.vector)} for i, b in inp.history],
        "indicators": inp.indicators.to_dict(),
    }


def _parse_confidence(doc: Any, source: str) -> JudgeOutcome:
    if not isinstance(doc, Mapping):
        raise ProviderSchemaError(f"{source}: response is not a JSON object")
    c = doc.get("confidence")
    if not isinstance(c, (int, float)) or isinstance(c, bool) or not 0.0 <= c <= 1.0:
        raise ProviderSchemaError(f"{source}: confidence must be a number in [0, 1], got {c!r}")
    usage = doc.get("usage") if isinstance(doc.get("usage"), Mapping) else doc
    ct, tt = usage.get("completion_tokens"), usage.get("total_tokens")
    return JudgeOutcome(
        float(c), source,
        completion_tokens=ct if isinstance(ct, int) else None,
        total_tokens=tt if isinstance(tt, int) else None,
    )


def _parse_evidence(doc: Any, source: str) -> EvidencePack:
    if isinstance(doc, Mapping) and "evidence" in doc:
        doc = doc["evidence"]
    try:
        return evidence_from_dict(doc)
    except EvidenceError as exc:
        raise ProviderSchemaError(f"{source}: {exc}") from None


class BuiltinJudge:
    name = "builtin"

    def __init__(self, history_n: int = 3):
        self.history_n = history_n

    def judge(self, inp: JudgeInput) -> JudgeOutcome:
        return JudgeOutcome(builtin_judge(inp, self.history_n), self.name)


class RemoteProvider:
    """JSON-over-HTTP POST backend with timeout and exponential-backoff retries."""

    name = "remote"

    def __init__(self, url: str, token: str = "", *, timeout: float = 30.0, retries: int = 2,
                 backoff: float = 0.5, sleep=time.sleep):
        if not url:
            raise ProviderError("remote provider needs a URL")
        self.url = url
        self.token = token
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff
        self._sleep = sleep

    def _post_once(self, body: bytes) -> Any:
        req = urllib.request.Request(self.url, data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        if self.token:
            req.add_header("Authorization", f"Bearer {self.token}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                raw = resp.read()
        except (socket.timeout, TimeoutError) as exc:
            raise ProviderTimeout(f"remote: timed out after {self.timeout}s") from exc
        except urllib.error.HTTPError as exc:
            raise ProviderTransportError(f"remote: HTTP {exc.code}") from exc
        except urllib.error.URLError as exc:
            if isinstance(exc.reason, (socket.timeout, TimeoutError)):
                raise ProviderTimeout(f"remote: timed out after {self.timeout}s") from exc
            raise ProviderTransportError(f"remote: {exc.reason}") from exc
        except OSError as exc:
            raise ProviderTransportError(f"remote: {exc}") from exc
        try:
            return json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ProviderSchemaError(f"remote: response is not JSON ({exc})") from None

    def post(self, payload: Mapping[str, Any]) -> Any:
        body = json.dumps(payload, sort_keys=True).encode("utf-8")
        last: ProviderError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                return self._post_once(body)
            except (ProviderTimeout, ProviderTransportError) as exc:
                last = exc
                log.warning("%s (attempt %d of %d)", exc, attempt + 1, self.retries + 1)
        assert last is not None
        raise last

    def judge(self, inp: JudgeInput) -> JudgeOutcome:
        return _parse_confidence(self.post(judge_payload(inp)), self.name)

    def evidence(self, screenshot: str | Path, context: Sequence = ()) -> EvidencePack:
        shot = base64.b64encode(Path(screenshot).read_bytes()).decode("ascii")
        payload = {
            "kind": "evidence",
            "screenshot_b64": shot,
            "context": [{"i": list(i), "goal": g} for i, g in context],
        }
        return _parse_evidence(self.post(payload), self.name)


class ReplayProvider:
    """Reads recorded responses from ``<session>/providers/<step>.json``."""

    name = "replay"

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def _load(self, step: int) -> Any:
        path = self.root / "providers" / f"{step:04d}.json"
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ProviderTransportError(f"replay: no recording for step {step}") from exc
        except json.JSONDecodeError as exc:
            raise ProviderSchemaError(f"replay: {path.name} is not JSON ({exc})") from None

    def judge(self, inp: JudgeInput) -> JudgeOutcome:
        doc = self._load(inp.step)
        if isinstance(doc, Mapping) and "judge" in doc:
            doc = doc["judge"]
        return _parse_confidence(doc, self.name)

    def evidence(self, step: int) -> EvidencePack:
        return _parse_evidence(self._load(step), self.name)


class JudgeChain:
    """Try providers in order; the built-in judge is the final fallback."""

    def __init__(self, providers: Sequence[Any], fallback: BuiltinJudge | None = None):
        self.providers = list(providers)
        self.fallback = fallback or BuiltinJudge()

    def judge(self, inp: JudgeInput) -> JudgeOutcome:
        errors = []
        for p in self.providers:
            try:
                return p.judge(inp)
            except ProviderError as exc:
                errors.append(f"{exc.kind}: {exc}")
        out = self.fallback.judge(inp)
        if not errors:
            return out
        log.warning("step %d judged by fallback: %s", inp.step, "; ".join(errors))
        return JudgeOutcome(out.confidence, out.source, True, "; ".join(errors))


def make_judge(settings: Mapping[str, Any], session_root: str | Path | None = None,
               history_n: int = 3) -> JudgeChain:
    builtin = BuiltinJudge(history_n)
    kind = settings.get("kind", "builtin")
    if kind == "builtin":
        return JudgeChain([], builtin)
    if kind == "remote":
        remote = RemoteProvider(settings.get("url", ""), settings.get("token", ""),
                                timeout=float(settings.get("timeout_s", 30.0)),
                                retries=int(settings.get("retries", 2)),
                                backoff=float(settings.get("backoff_s", 0.5)))
        return JudgeChain([remote], builtin)
    if kind == "replay":
        if session_root is None:
            raise ProviderError("replay provider needs a session directory")
        return JudgeChain([ReplayProvider(session_root)], builtin)
    raise ProviderError(f"unknown provider kind {kind!r}")

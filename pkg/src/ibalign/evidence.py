"""UI evidence packs: component ontology, state indicators and validation.

An evidence pack is the per-screen JSON a vision provider emits::

    {
      "components": [{"kind": "Map", "bbox": [0, 0, 1080, 600],
                      "visible_text": null, "confidence": 0.9}],
      "state_indicators": {"loading_spinner_visible": true,
                           "progress_determinate_ratio": 0.4,
                           "indicator_texts": ["Syncing..."],
                           "confidence": {"loading_spinner_visible": 0.8},
                           "evidence": {"loading_spinner_visible":
                                        {"bbox": [500, 900, 580, 980]}}},
      "screen_summary": {"description": "...", "primary_goal": "...",
                         "evidence_bullets": ["...", "..."],
                         "ui_class": "Settings"},
      "step": 3, "timestamp": 15000
    }

``type`` is accepted as an alias of ``kind``.
"""

from __future__ import annotations

import difflib
import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

log = logging.getLogger(__name__)

ONTOLOGY: tuple[str, ...] = (
    "BackgroundImage",
    "Bottom_Navigation",
    "Card",
    "CheckBox(box)",
    "CheckedTextView",
    "Drawer",
    "EditText",
    "Icon",
    "Image",
    "Map",
    "Modal",
    "Multi_Tab",
    "PageIndicator",
    "Remember",
    "Spinner",
    "Switch",
    "Text",
    "TextButton",
    "Toolbar",
    "UpperTaskBar",
)
ONTOLOGY_SET = frozenset(ONTOLOGY)

# Flags the shipped state parameters know about; any other boolean key is
# accepted as an extension flag.
KNOWN_FLAGS = (
    "loading_spinner_visible",
    "error_banner_visible",
    "empty_state_visible",
    "media_playing",
)
MEDIA_STATES = {"playing": 1.0, "paused": 0.5, "stopped": 0.0}

LOW_CONFIDENCE = 0.2

_TOP_LEVEL_KEYS = {"components", "state_indicators", "screen_summary", "step", "timestamp"}
_INDICATOR_RESERVED = {"progress_determinate_ratio", "indicator_texts", "confidence", "evidence"}


@dataclass(frozen=True)
class Violation:
    kind: str  # parse | class | geometry | type | range
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.kind} error at {self.path}: {self.message}"


class EvidenceError(ValueError):
    """Raised with the complete list of violations found in a pack."""

    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        lines = "; ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} evidence violation(s): {lines}")


@dataclass(frozen=True)
class UIComponent:
    kind: str
    bbox: tuple[int, int, int, int]
    confidence: float
    visible_text: str | None = None
    low_confidence: bool = False

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"kind": self.kind, "bbox": list(self.bbox), "confidence": self.confidence}
        if self.visible_text is not None:
            d["visible_text"] = self.visible_text
        return d


@dataclass(frozen=True)
class StateIndicators:
    flags: dict[str, bool] = field(default_factory=dict)
    media: str | None = None
    progress_determinate_ratio: float | None = None
    indicator_texts: tuple[str, ...] = ()
    confidence: dict[str, float] = field(default_factory=dict)
    evidence: dict[str, dict[str, Any]] = field(default_factory=dict)
    # set flags with neither evidence nor an explicit confidence
    unsupported: frozenset[str] = frozenset()

    def is_set(self, flag: str) -> bool:
        if flag == "media_playing":
            return self.media == "playing"
        return bool(self.flags.get(flag, False))

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = dict(sorted(self.flags.items()))
        if self.media is not None:
            d["media_playing"] = self.media
        if self.progress_determinate_ratio is not None:
            d["progress_determinate_ratio"] = self.progress_determinate_ratio
        d["indicator_texts"] = list(self.indicator_texts)
        if self.confidence:
            d["confidence"] = dict(sorted(self.confidence.items()))
        if self.evidence:
            d["evidence"] = {k: dict(v) for k, v in sorted(self.evidence.items())}
        return d


@dataclass(frozen=True)
class ScreenSummary:
    description: str
    primary_goal: str
    evidence_bullets: tuple[str, ...]
    ui_class: str | None = None

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "description": self.description,
            "primary_goal": self.primary_goal,
            "evidence_bullets": list(self.evidence_bullets),
        }
        if self.ui_class is not None:
            d["ui_class"] = self.ui_class
        return d


@dataclass(frozen=True)
class EvidencePack:
    components: tuple[UIComponent, ...]
    state_indicators: StateIndicators
    screen_summary: ScreenSummary | None
    step: int = 0
    timestamp: int = 0

    @property
    def ui_class(self) -> str | None:
        return self.screen_summary.ui_class if self.screen_summary else None

    @property
    def primary_goal(self) -> str:
        return self.screen_summary.primary_goal if self.screen_summary else ""

    def kinds(self) -> set[str]:
        return {c.kind for c in self.components}

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "components": [c.to_dict() for c in self.components],
            "state_indicators": self.state_indicators.to_dict(),
            "step": self.step,
            "timestamp": self.timestamp,
        }
        if self.screen_summary is not None:
            d["screen_summary"] = self.screen_summary.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


class IntentContext:
    """The last ``n`` (intent, goal) pairs, most recent first."""

    def __init__(self, n: int = 3):
        if n < 1:
            raise ValueError("context length must be positive")
        self.n = n
        self._items: deque = deque(maxlen=n)

    def push(self, intent, goal: str) -> None:
        self._items.appendleft((intent, goal))

    @property
    def history(self) -> list:
        return list(self._items)

    def __len__(self) -> int:
        return len(self._items)


def _is_number(x: Any) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _check_bbox(raw: Any, path: str, out: list[Violation]) -> tuple[int, int, int, int] | None:
    if not isinstance(raw, list) or len(raw) != 4:
        out.append(Violation("type", path, "bbox must be a list of four integers"))
        return None
    if not all(_is_int(v) for v in raw):
        out.append(Violation("type", path, f"bbox entries must be integers, got {raw!r}"))
        return None
    x0, y0, x1, y1 = raw
    ok = True
    if not x0 < x1:
        out.append(Violation("geometry", path, f"x_min ({x0}) must be < x_max ({x1})"))
        ok = False
    if not y0 < y1:
        out.append(Violation("geometry", path, f"y_min ({y0}) must be < y_max ({y1})"))
        ok = False
    return (x0, y0, x1, y1) if ok else None


def _clamp_confidence(value: float, path: str) -> float:
    if value < 0.0 or value > 1.0:
        clamped = min(max(value, 0.0), 1.0)
        log.warning("%s: confidence %r clamped to %r", path, value, clamped)
        return clamped
    return float(value)


def _components(raw: Any, low: float, out: list[Violation]) -> list[UIComponent]:
    if not isinstance(raw, list):
        out.append(Violation("type", "components", "must be a list"))
        return []
    comps = []
    for idx, item in enumerate(raw):
        path = f"components[{idx}]"
        if not isinstance(item, dict):
            out.append(Violation("type", path, "component must be an object"))
            continue
        before = len(out)
        kind = item.get("kind", item.get("type"))
        if not isinstance(kind, str):
            out.append(Violation("type", f"{path}.kind", "missing or non-string component kind"))
        elif kind not in ONTOLOGY_SET:
            near = difflib.get_close_matches(kind, ONTOLOGY, n=1, cutoff=0.5)
            hint = f"; nearest allowed is {near[0]!r}" if near else ""
            out.append(Violation("class", f"{path}.kind", f"{kind!r} is not in the component ontology{hint}"))
        bbox = _check_bbox(item.get("bbox"), f"{path}.bbox", out)
        conf = item.get("confidence")
        if not _is_number(conf):
            out.append(Violation("type", f"{path}.confidence", f"confidence must be a number, got {conf!r}"))
        text = item.get("visible_text")
        if text is not None and not isinstance(text, str):
            out.append(Violation("type", f"{path}.visible_text", "visible_text must be a string or null"))
        if len(out) > before:
            continue
        c = _clamp_confidence(conf, path)
        comps.append(UIComponent(kind, bbox, c, text, low_confidence=c < low))
    return comps


def _indicators(raw: Any, low: float, out: list[Violation]) -> StateIndicators:
    if raw is None:
        return StateIndicators()
    if not isinstance(raw, dict):
        out.append(Violation("type", "state_indicators", "must be an object"))
        return StateIndicators()
    flags: dict[str, bool] = {}
    media = None
    for key, value in raw.items():
        if key in _INDICATOR_RESERVED:
            continue
        path = f"state_indicators.{key}"
        if key == "media_playing":
            if isinstance(value, bool):
                media = "playing" if value else "stopped"
            elif isinstance(value, str) and value in MEDIA_STATES:
                media = value
            else:
                out.append(Violation("type", path, f"expected bool or one of {sorted(MEDIA_STATES)}"))
        elif isinstance(value, bool):
            flags[key] = value
        else:
            out.append(Violation("type", path, f"flag must be a JSON boolean, got {value!r}"))

    ratio = raw.get("progress_determinate_ratio")
    if ratio is not None:
        if not _is_number(ratio):
            out.append(Violation("type", "state_indicators.progress_determinate_ratio", "must be a number"))
            ratio = None
        elif not 0.0 <= ratio <= 1.0:
            out.append(Violation("range", "state_indicators.progress_determinate_ratio", f"{ratio!r} not in [0, 1]"))
            ratio = None
        else:
            ratio = float(ratio)

    texts = raw.get("indicator_texts", [])
    if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
        out.append(Violation("type", "state_indicators.indicator_texts", "must be a list of strings"))
        texts = []

    conf_raw = raw.get("confidence", {})
    confidence: dict[str, float] = {}
    if not isinstance(conf_raw, dict):
        out.append(Violation("type", "state_indicators.confidence", "must be an object"))
    else:
        for key, value in conf_raw.items():
            if not _is_number(value):
                out.append(Violation("type", f"state_indicators.confidence.{key}", "must be a number"))
                continue
            confidence[key] = _clamp_confidence(value, f"state_indicators.confidence.{key}")

    ev_raw = raw.get("evidence", {})
    evidence: dict[str, dict[str, Any]] = {}
    if not isinstance(ev_raw, dict):
        out.append(Violation("type", "state_indicators.evidence", "must be an object"))
    else:
        for key, value in ev_raw.items():
            path = f"state_indicators.evidence.{key}"
            if not isinstance(value, dict):
                out.append(Violation("type", path, "must be an object with bbox and/or text"))
                continue
            item: dict[str, Any] = {}
            if "bbox" in value:
                bbox = _check_bbox(value["bbox"], f"{path}.bbox", out)
                if bbox is not None:
                    item["bbox"] = list(bbox)
            if "text" in value:
                if isinstance(value["text"], str):
                    item["text"] = value["text"]
                else:
                    out.append(Violation("type", f"{path}.text", "must be a string"))
            evidence[key] = item

    set_flags = [k for k, v in flags.items() if v]
    if media in ("playing", "paused"):
        set_flags.append("media_playing")
    unsupported = set()
    for key in set_flags:
        if evidence.get(key):
            continue
        if confidence.get(key, 0.0) >= low and key in confidence:
            # explicitly scored by the provider but without a quoted box or text
            unsupported.add(key)
            continue
        # neither evidence nor a confidence: keep it, but mark low-confidence
        confidence[key] = min(confidence.get(key, low / 2), low / 2)
        unsupported.add(key)
    if unsupported:
        log.warning("state flags without visual evidence: %s", ", ".join(sorted(unsupported)))

    return StateIndicators(
        flags=flags,
        media=media,
        progress_determinate_ratio=ratio,
        indicator_texts=tuple(texts),
        confidence=confidence,
        evidence=evidence,
        unsupported=frozenset(unsupported),
    )


def _summary(raw: Any, out: list[Violation]) -> ScreenSummary | None:
    if raw is None:
        return None
    if not isinstance(raw, dict):
        out.append(Violation("type", "screen_summary", "must be an object"))
        return None
    before = len(out)
    for key in ("description", "primary_goal"):
        if not isinstance(raw.get(key), str):
            out.append(Violation("type", f"screen_summary.{key}", "must be a string"))
    bullets = raw.get("evidence_bullets")
    if not isinstance(bullets, list) or not all(isinstance(b, str) for b in bullets):
        out.append(Violation("type", "screen_summary.evidence_bullets", "must be a list of strings"))
    elif not 2 <= len(bullets) <= 5:
        out.append(Violation("range", "screen_summary.evidence_bullets", f"expected 2-5 bullets, got {len(bullets)}"))
    ui_class = raw.get("ui_class")
    if ui_class is not None and not isinstance(ui_class, str):
        out.append(Violation("type", "screen_summary.ui_class", "must be a string"))
    if len(out) > before:
        return None
    return ScreenSummary(raw["description"], raw["primary_goal"], tuple(bullets), ui_class)


def validate_evidence(raw: str | bytes, *, low_confidence: float = LOW_CONFIDENCE) -> EvidencePack:
    """Parse and validate one evidence pack.

    Raises :class:`EvidenceError` listing every violation found, never just
    the first. Out-of-range confidences are clamped (and logged) rather than
    rejected; unknown top-level keys are ignored with a warning.
    """
    if isinstance(raw, bytes):
        try:
            raw = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise EvidenceError([Violation("parse", "$", f"not UTF-8: {exc}")]) from None
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, RecursionError) as exc:
        raise EvidenceError([Violation("parse", "$", f"malformed JSON: {exc}")]) from None
    return evidence_from_dict(doc, low_confidence=low_confidence)


def evidence_from_dict(doc: Any, *, low_confidence: float = LOW_CONFIDENCE) -> EvidencePack:
    if not isinstance(doc, dict):
        raise EvidenceError([Violation("type", "$", "evidence must be a JSON object")])
    extra = set(doc) - _TOP_LEVEL_KEYS
    if extra:
        log.warning("ignoring unknown evidence keys: %s", ", ".join(sorted(extra)))

    out: list[Violation] = []
    if "components" not in doc:
        out.append(Violation("type", "components", "missing"))
    comps = _components(doc.get("components", []), low_confidence, out)
    indicators = _indicators(doc.get("state_indicators"), low_confidence, out)
    summary = _summary(doc.get("screen_summary"), out)

    step = doc.get("step", 0)
    if not _is_int(step) or step < 0:
        out.append(Violation("type", "step", "must be a non-negative integer"))
    ts = doc.get("timestamp", 0)
    if not _is_number(ts) or ts < 0:
        out.append(Violation("type", "timestamp", "must be non-negative milliseconds"))

    if out:
        raise EvidenceError(out)
    return EvidencePack(tuple(comps), indicators, summary, int(step), int(ts))


def load_evidence_file(path: str | Path, *, low_confidence: float = LOW_CONFIDENCE) -> EvidencePack:
    """Read and validate an evidence file; ``OSError`` propagates."""
    data = Path(path).read_bytes()
    return validate_evidence(data, low_confidence=low_confidence)


"""Behaviour fusion, intent/behaviour alignment, triage and verdicts."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

from .channels import ChannelEvidence
from .evidence import StateIndicators
from .intent import AXES, IntentVector

AUTHORISED = "Authorised"
ANOMALY = "Anomaly"
UNCERTAIN = "Uncertain"
VERDICTS = (AUTHORISED, ANOMALY, UNCERTAIN)

SAFE = "Safe/Authorised"
OVERT = "Overt Anomaly"
IDLE = "Idle/Safe"
STEALTH = "Uncertain/Stealth"
QUADRANTS = (SAFE, OVERT, IDLE, STEALTH)


@dataclass(frozen=True)
class FusionConfig:
    alpha_h: float = 0.4
    alpha_m: float = 0.3
    alpha_r: float = 0.3
    gamma: float = 2.0
    theta: float = 0.5
    b_hi: float = 0.4
    c_lo: float = 0.4

    def __post_init__(self):
        if min(self.alpha_h, self.alpha_m, self.alpha_r) < 0:
            raise ValueError("fusion weights must be non-negative")
        if not self.alpha_h + self.alpha_m + self.alpha_r > 0:
            raise ValueError("fusion weights must not all be zero")
        if not self.gamma > 0:
            raise ValueError("fusion.gamma must be positive")
        if not 0.0 < self.theta < 1.0:
            raise ValueError("fusion.theta must be in (0, 1)")
        if self.b_hi < 0 or not 0.0 <= self.c_lo <= 1.0:
            raise ValueError("fusion.b_hi must be >= 0 and fusion.c_lo in [0, 1]")

    @property
    def weights(self) -> dict[str, float]:
        return {"H": self.alpha_h, "M": self.alpha_m, "R": self.alpha_r}


class BehaviourVector(NamedTuple):
    net: float
    mem: float
    res: float
    scored: bool = True

    @property
    def vector(self) -> tuple[float, float, float]:
        return (self.net, self.mem, self.res)


@dataclass(frozen=True)
class AlignmentResult:
    step: int
    A: float
    M: float
    B: float
    quadrant: str
    C: float
    verdict: str
    dominant: str
    reason: str = ""


def fuse(channels: Sequence[ChannelEvidence | None], cfg: FusionConfig) -> BehaviourVector:
    """Mask-aware weighted mean of the channel vectors.

    ``None`` entries (skipped channels) count as masked.
    """
    weights = cfg.weights
    num = [0.0, 0.0, 0.0]
    den = 0.0
    for ev in channels:
        if ev is None or not ev.mask:
            continue
        a = weights[ev.channel]
        for j in range(3):
            num[j] += a * ev.s[j]
        den += a
    if den == 0.0:
        return BehaviourVector(0.0, 0.0, 0.0, False)
    return BehaviourVector(*(min(1.0, max(0.0, x / den)) for x in num), True)


def align(i: Sequence[float], b: Sequence[float], gamma: float) -> tuple[float, float]:
    """RBF similarity A = exp(-gamma * ||i - b||^2) and M = 1 - A."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    d2 = math.fsum((x - y) ** 2 for x, y in zip(i, b, strict=True))
    a = math.exp(-gamma * d2)
    return a, 1.0 - a


def magnitude(b: Sequence[float]) -> float:
    return math.sqrt(math.fsum(x * x for x in b[:3]))


def triage(a: float, b_mag: float, cfg: FusionConfig) -> str:
    high_a = a > 1.0 - cfg.theta
    high_b = b_mag >= cfg.b_hi
    if high_b:
        return SAFE if high_a else OVERT
    return IDLE if high_a else STEALTH


def dominant_channel(b: Sequence[float]) -> str:
    """argmax over (net, mem, res); ties resolve in that order."""
    best = 0
    for j in (1, 2):
        if b[j] > b[best]:
            best = j
    return AXES[best]


@dataclass(frozen=True)
class JudgeInput:
    i: IntentVector
    b: BehaviourVector
    indicators: StateIndicators
    components: tuple[str, ...] = ()
    history: tuple[tuple[IntentVector, BehaviourVector], ...] = ()
    screenshot: str | None = None
    step: int = 0


NET_COMPONENTS = frozenset({"Spinner"})
MEM_COMPONENTS = frozenset({"Image", "Map", "BackgroundImage"})
RES_COMPONENTS = frozenset({"EditText", "Map", "Multi_Tab"})
NET_WORDS = ("uploading", "downloading", "syncing", "loading")
TRAP_FLAGS = ("error_banner_visible", "empty_state_visible")


def visual_justifiers(indicators: StateIndicators, components: Sequence[str],
                      words: Sequence[str] = NET_WORDS) -> set[str]:
    """Axes whose activity the visible screen plausibly explains."""
    kinds = set(components)
    found = set()
    text = " ".join(indicators.indicator_texts).lower()
    if (indicators.is_set("loading_spinner_visible")
            or indicators.progress_determinate_ratio is not None
            or kinds & NET_COMPONENTS
            or any(re.search(r"\b" + re.escape(w) + r"\b", text) for w in words)):
        found.add("net")
    if kinds & MEM_COMPONENTS:
        found.add("mem")
    if kinds & RES_COMPONENTS or indicators.media == "playing":
        found.add("res")
    return found


def builtin_judge(inp: JudgeInput, history_n: int = 3) -> float:
    """Deterministic three-layer verification confidence in [0, 1].

    Base 0.5; +0.4 when the screen visibly justifies the dominant axis; +0.2
    when a recent intent already pointed at that axis (>= 0.6); -0.4 when an
    error or empty state coincides with strong (>= 0.8) activity on it.
    """
    dom = dominant_channel(inp.b.vector)
    j = AXES.index(dom)
    c = 0.5
    if dom in visual_justifiers(inp.indicators, inp.components):
        c += 0.4
    if any(i_prev[j] >= 0.6 for i_prev, _ in inp.history[:history_n]):
        c += 0.2
    if any(inp.indicators.is_set(f) for f in TRAP_FLAGS) and inp.b.vector[j] >= 0.8:
        c -= 0.4
    return min(1.0, max(0.0, c))


def verdict(a: float, m: float, b_mag: float, c: float, scored: bool, cfg: FusionConfig) -> tuple[str, str]:
    """Return (verdict, reason)."""
    if not scored:
        return UNCERTAIN, "no behaviour channel available"
    if m >= cfg.theta:
        return ANOMALY, "misaligned"
    if c >= cfg.c_lo:
        return AUTHORISED, "aligned and visually verified"
    if b_mag >= cfg.b_hi:
        return ANOMALY, "visually unverified"
    return UNCERTAIN, "low energy, unverified"


def score_step(step: int, i: Sequence[float], b: BehaviourVector, c: float, cfg: FusionConfig) -> AlignmentResult:
    a, m = align(i, b.vector, cfg.gamma)
    b_mag = magnitude(b.vector)
    label, reason = verdict(a, m, b_mag, c, b.scored, cfg)
    return AlignmentResult(step, a, m, b_mag, triage(a, b_mag, cfg), c, label, dominant_channel(b.vector), reason)


def fusion_from_mapping(raw: Mapping[str, float]) -> FusionConfig:
    return FusionConfig(**{k: float(v) for k, v in raw.items()})

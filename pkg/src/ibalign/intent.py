"""Deterministic evidence -> intent mapping and axis-constant estimation."""

from __future__ import annotations

import math
import re
from array import array
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from . import kernels
from .evidence import MEDIA_STATES, ONTOLOGY, EvidencePack

AXES = ("net", "mem", "res")


class IntentVector(NamedTuple):
    net: float
    mem: float
    res: float


@dataclass(frozen=True)
class PriorEntry:
    w: float
    e: tuple[float, float, float]


@dataclass(frozen=True)
class UIImpactPrior:
    entries: Mapping[str, PriorEntry]

    def __post_init__(self):
        for kind, entry in self.entries.items():
            if entry.w < 0:
                raise ValueError(f"prior.{kind}.w must be non-negative")
            if len(entry.e) != 3 or not all(0.0 <= x <= 1.0 for x in entry.e):
                raise ValueError(f"prior.{kind}.e must be three values in [0, 1]")

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Mapping]) -> "UIImpactPrior":
        return cls({k: PriorEntry(float(v["w"]), tuple(float(x) for x in v["e"])) for k, v in raw.items()})

    def to_mapping(self) -> dict[str, dict]:
        return {k: {"w": v.w, "e": list(v.e)} for k, v in self.entries.items()}

    def missing(self) -> list[str]:
        return [k for k in ONTOLOGY if k not in self.entries]


@dataclass(frozen=True)
class AxisConstants:
    kappa: tuple[float, float, float]
    tau: tuple[float, float, float]

    def __post_init__(self):
        for axis, k, t in zip(AXES, self.kappa, self.tau):
            if not (k > 0 and t > 0):
                raise ValueError(f"constants.{axis}: kappa and tau must be positive")

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Mapping]) -> "AxisConstants":
        return cls(
            tuple(float(raw[a]["kappa"]) for a in AXES),
            tuple(float(raw[a]["tau"]) for a in AXES),
        )

    def to_mapping(self) -> dict[str, dict]:
        return {a: {"kappa": k, "tau": t} for a, k, t in zip(AXES, self.kappa, self.tau)}


@dataclass(frozen=True)
class StateParams:
    """alpha_add[axis][indicator] >= 0, beta_mul[axis][indicator] in [0, 1].

    Indicator names are the evidence flag names with any ``_visible`` suffix
    dropped, plus ``media`` (media_playing), ``progress`` and ``text``.
    """

    alpha_add: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    beta_mul: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    keywords: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for axis, row in self.alpha_add.items():
            for k, v in row.items():
                if v < 0:
                    raise ValueError(f"state_params.alpha_add.{axis}.{k} must be >= 0")
        for axis, row in self.beta_mul.items():
            for k, v in row.items():
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"state_params.beta_mul.{axis}.{k} must be in [0, 1]")
        for k, v in self.keywords.items():
            if v < 0:
                raise ValueError(f"state_params.keywords.{k} must be >= 0")

    @classmethod
    def from_mapping(cls, raw: Mapping) -> "StateParams":
        return cls(
            {a: {k: float(v) for k, v in row.items()} for a, row in raw.get("alpha_add", {}).items()},
            {a: {k: float(v) for k, v in row.items()} for a, row in raw.get("beta_mul", {}).items()},
            {k: float(v) for k, v in raw.get("keywords", {}).items()},
        )

    def to_mapping(self) -> dict:
        return {
            "alpha_add": {a: dict(r) for a, r in self.alpha_add.items()},
            "beta_mul": {a: dict(r) for a, r in self.beta_mul.items()},
            "keywords": dict(self.keywords),
        }


@dataclass
class IntentTrace:
    vector: IntentVector
    presquash: tuple[float, float, float]
    capped: tuple[float, float, float]
    severities: dict[str, float]
    skipped: list[str]


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _clip01(x: float) -> float:
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


def indicator_name(flag: str) -> str:
    return flag[: -len("_visible")] if flag.endswith("_visible") else flag


def severities(pack: EvidencePack, keywords: Mapping[str, float]) -> dict[str, float]:
    si = pack.state_indicators
    m = {indicator_name(k): (1.0 if v else 0.0) for k, v in si.flags.items()}
    if si.media is not None:
        m["media"] = MEDIA_STATES[si.media]
    if si.progress_determinate_ratio is not None:
        m["progress"] = 1.0 - si.progress_determinate_ratio
    if si.indicator_texts and keywords:
        text = " ".join(si.indicator_texts).lower()
        total = 0.0
        for word, weight in keywords.items():
            if re.search(r"\b" + re.escape(word.lower()) + r"\b", text):
                total += weight
        m["text"] = _clip01(total)
    return m


def trace_intent(
    pack: EvidencePack, prior: UIImpactPrior, constants: AxisConstants, sp: StateParams
) -> IntentTrace:
    s = [0.0, 0.0, 0.0]
    skipped = []
    for c in pack.components:
        entry = prior.entries.get(c.kind)
        if entry is None:
            skipped.append(c.kind)
            continue
        p = _clip01(c.confidence)
        for a in range(3):
            s[a] += entry.w * p * entry.e[a]
    presquash = tuple(s)
    capped = tuple(min(s[a], constants.kappa[a]) for a in range(3))
    base = [sigmoid(capped[a] / constants.tau[a]) for a in range(3)]

    m = severities(pack, sp.keywords)
    out = []
    for a, axis in enumerate(AXES):
        add = 0.0
        mul = 1.0
        adds = sp.alpha_add.get(axis, {})
        muls = sp.beta_mul.get(axis, {})
        for k in sorted(m):
            add += adds.get(k, 0.0) * m[k]
            mul *= 1.0 - muls.get(k, 0.0) * m[k]
        out.append(_clip01(base[a] * mul + add))
    return IntentTrace(IntentVector(*out), presquash, capped, m, skipped)


def compute_intent(
    pack: EvidencePack, prior: UIImpactPrior, constants: AxisConstants, sp: StateParams
) -> IntentVector:
    """Map a validated pack to an intent vector in [0, 1]^3.

    Components whose class has no prior entry are skipped; use
    :func:`trace_intent` to see which.
    """
    return trace_intent(pack, prior, constants, sp).vector


def presquash_corpus(packs: Sequence[EvidencePack], prior: UIImpactPrior) -> list[tuple[float, float, float]]:
    """Pre-squash axis sums for many packs at once (compiled kernel when built)."""
    classes = sorted(prior.entries)
    index = {k: i for i, k in enumerate(classes)}
    weights = array("d", (prior.entries[k].w for k in classes))
    effects = array("d", (x for k in classes for x in prior.entries[k].e))
    kind_idx = array("l")
    conf = array("d")
    offsets = array("l", [0])
    for pack in packs:
        for c in pack.components:
            kind_idx.append(index.get(c.kind, -1))
            conf.append(c.confidence)
        offsets.append(len(kind_idx))
    flat = kernels.presquash_sums(kind_idx, conf, offsets, weights, effects)
    return [tuple(flat[3 * i: 3 * i + 3]) for i in range(len(packs))]


def nearest_rank(values: Iterable[float], pct: float) -> float:
    ordered = sorted(values)
    if not ordered:
        raise ValueError("percentile of an empty sample")
    rank = max(1, math.ceil(pct / 100.0 * len(ordered)))
    return ordered[rank - 1]


KAPPA_PCT = {"net": 99.0, "mem": 98.0, "res": 98.0}


def estimate_axis_constants(presquash_sums: Mapping[str, Sequence[float]]) -> AxisConstants:
    """Caps from the high tail, scales so the 75th percentile squashes to 0.8.

    Percentiles use the nearest-rank rule on the sorted sample.
    """
    kappa = []
    tau = []
    for axis in AXES:
        values = list(presquash_sums.get(axis, ()))
        if not values:
            raise ValueError(f"no pre-squash sums for axis {axis!r}")
        k = nearest_rank(values, KAPPA_PCT[axis])
        p75 = nearest_rank(values, 75.0)
        if k <= 0 or p75 <= 0:
            raise ValueError(f"axis {axis!r}: percentiles must be positive (p75={p75}, cap={k})")
        kappa.append(k)
        tau.append(p75 / math.log(4.0))
    return AxisConstants(tuple(kappa), tuple(tau))

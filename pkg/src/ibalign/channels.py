"""Per-step channel extractors: network (H), memory (M) and resource (R).

Each extractor projects one telemetry source onto the three behaviour axes
(net, mem, res). Streaming state (EWMA, rolling windows) lives in a
:class:`StreamStats` owned by the session, so replaying the same steps through
fresh stats reproduces the same outputs.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Sequence

from . import kernels
from .telemetry import FlowWindow, HttpRecord, MeminfoSnapshot, ProcSnapshot

CHANNELS = ("H", "M", "R")


@dataclass(frozen=True)
class ChannelEvidence:
    channel: str
    step: int
    s: tuple[float, float, float] = (0.0, 0.0, 0.0)
    mask: int = 1
    detail: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"unknown channel {self.channel!r}")
        if self.mask not in (0, 1):
            raise ValueError("mask must be 0 or 1")
        if self.mask == 0 and any(self.s):
            raise ValueError("a masked channel must carry a zero vector")

    @classmethod
    def masked(cls, channel: str, step: int, reason: str = "") -> "ChannelEvidence":
        return cls(channel, step, (0.0, 0.0, 0.0), 0, {"reason": reason} if reason else {})


class StreamStats:
    """Named EWMA / rolling-max / rolling-z streams sharing alpha, W and eps."""

    def __init__(self, alpha: float = 0.3, window: int = 12, eps: float = 1e-9):
        if not 0.0 < alpha <= 1.0:
            raise ValueError("stream alpha must be in (0, 1]")
        if window < 1:
            raise ValueError("stream window must be >= 1")
        if not eps > 0:
            raise ValueError("stream eps must be positive")
        self.alpha = alpha
        self.window = window
        self.eps = eps
        self._ewma: dict[str, kernels.Ewma] = {}
        self._max: dict[str, kernels.RollingMax] = {}
        self._z: dict[str, kernels.RollingZ] = {}
        self._recent: dict[str, deque] = {}

    def ewma(self, name: str, x: float) -> float:
        state = self._ewma.get(name)
        if state is None:
            state = self._ewma[name] = kernels.Ewma(self.alpha)
        return state.update(x)

    def norm(self, name: str, x: float) -> float:
        state = self._max.get(name)
        if state is None:
            state = self._max[name] = kernels.RollingMax(self.window, self.eps)
        return min(state.update(x), 1.0)

    def smooth_norm(self, name: str, x: float) -> float:
        return self.norm(name, self.ewma(name, x))

    def zscore(self, name: str, x: float) -> float:
        state = self._z.get(name)
        if state is None:
            state = self._z[name] = kernels.RollingZ(self.window, self.eps)
        return state.update(x)

    def recent_mean(self, name: str, x: float, k: int) -> float:
        """Mean of the last ``k`` values pushed under ``name`` (including x)."""
        buf = self._recent.get(name)
        if buf is None or buf.maxlen != k:
            buf = self._recent[name] = deque(buf or (), maxlen=k)
        buf.append(x)
        return math.fsum(buf) / len(buf)


def _pos(x: float) -> float:
    return x if x > 0.0 else 0.0


def _clip01(x: float) -> float:
    return 0.0 if x < 0.0 else 1.0 if x > 1.0 else x


# -- H: flows and HTTP ------------------------------------------------------

@dataclass(frozen=True)
class HChannelConfig:
    w_b: float = 0.25
    w_r: float = 0.15
    w_f: float = 0.10
    w_x: float = 0.10
    w_e: float = 0.15
    w_t: float = 0.10
    w_m: float = 0.15
    kappa_l: float = 0.15
    kappa_p: float = 0.15
    kappa_h: float = 0.20
    max_mem: float = 0.35
    max_res: float = 0.30
    min_samples: int = 1
    large_payload_bytes: int = 65536
    expiry_steps: float = 3.0
    msg_w_method: float = 0.4
    msg_w_headers: float = 0.3
    msg_w_status: float = 0.3

    def __post_init__(self):
        for name in ("w_b", "w_r", "w_f", "w_x", "w_e", "w_t", "w_m", "kappa_l", "kappa_p", "kappa_h",
                     "msg_w_method", "msg_w_headers", "msg_w_status"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"channels.h.{name} must be a finite non-negative number")
        for name in ("max_mem", "max_res"):
            if not 0.0 < getattr(self, name) <= 1.0:
                raise ValueError(f"channels.h.{name} must be in (0, 1]")
        if self.min_samples < 0 or self.expiry_steps <= 0 or self.large_payload_bytes < 0:
            raise ValueError("channels.h min_samples/expiry_steps/large_payload_bytes out of range")


def _read_table(name: str) -> list[list[str]]:
    text = resources.files("ibalign").joinpath("data", name).read_text(encoding="utf-8")
    return [line.split("\t") for line in text.splitlines() if line.strip() and not line.startswith("#")]


@lru_cache(maxsize=None)
def method_frequencies() -> dict[str, float]:
    return {m.upper(): float(f) for m, f in _read_table("http_method_freq.tsv")}


@lru_cache(maxsize=None)
def expected_headers() -> dict[str, frozenset[str]]:
    return {m.upper(): frozenset(h.strip().lower() for h in hs.split(",") if h.strip())
            for m, hs in _read_table("expected_headers.tsv")}


def method_rarity(method: str) -> float:
    freq = method_frequencies()
    top = max(freq.values())
    return 1.0 - freq.get(method.upper(), 0.0) / top


def header_atypicality(method: str, headers: frozenset[str]) -> float:
    expected = expected_headers().get(method.upper())
    if not expected:
        return 1.0 if not headers else 0.5
    return len(expected - headers) / len(expected)


def status_deviation(status: int | None) -> float:
    if status is None:
        return 0.0
    if 200 <= status < 300:
        return 0.0
    if 100 <= status < 200 or 300 <= status < 400:
        return 0.3
    if 400 <= status < 500:
        return 0.7
    return 1.0


def message_score(rec: HttpRecord, cfg: HChannelConfig) -> float:
    """Capped, weighted metadata risk of one message in [0, 1]."""
    s = (cfg.msg_w_method * method_rarity(rec.method)
         + cfg.msg_w_headers * header_atypicality(rec.method, rec.headers_present)
         + cfg.msg_w_status * status_deviation(rec.status))
    return min(1.0, s)


class Backlog:
    """Requests still waiting for a response; expired ones are counted once."""

    def __init__(self):
        self.pending: dict[str, int] = {}

    def update(self, http: Sequence[HttpRecord], now_ms: int, expiry_ms: float) -> float:
        anonymous = 0
        for rec in http:
            if rec.request_id is None:
                anonymous += rec.unmatched
            elif rec.unmatched:
                self.pending.setdefault(rec.request_id, rec.timestamp or now_ms)
            else:
                self.pending.pop(rec.request_id, None)
        expired = [rid for rid, ts in self.pending.items() if now_ms - ts > expiry_ms]
        for rid in expired:
            del self.pending[rid]
        return float(len(self.pending) + len(expired) + anonymous)


H_SERIES = ("B", "R", "F", "X", "E", "T", "H", "P", "L", "M")


def h_rates(window: FlowWindow | None, http: Sequence[HttpRecord], dt: float, cfg: HChannelConfig,
            backlog: float = 0.0) -> dict[str, float]:
    """Raw per-step precursors before smoothing; rates are per second."""
    n = len(http)
    third = sum(r.is_third_party for r in http)
    trackers = sum(r.tracker_match for r in http)
    large = sum(r.body_size >= cfg.large_payload_bytes for r in http)
    return {
        "B": sum(r.body_size for r in http) / dt,
        "R": n / dt,
        "F": sum(1 for r in http if r.status is not None and r.status >= 400) / dt,
        "X": third / n if n else 0.0,
        "E": math.fsum(max(r.reputation, message_score(r, cfg)) for r in http) / n if n else 0.0,
        "T": trackers / n if n else 0.0,
        "H": math.fsum(r.body_entropy / 8.0 * r.body_size for r in http if r.body_entropy is not None) / dt,
        "P": large / n if n else 0.0,
        "L": backlog,
        "M": (window.malicious_delta() if window is not None else 0) / dt,
    }


def h_channel(
    window: FlowWindow | None,
    http: Sequence[HttpRecord] | None,
    cfg: HChannelConfig,
    stats: StreamStats,
    *,
    dt: float = 1.0,
    step: int = 0,
    now_ms: int = 0,
    backlog: Backlog | None = None,
) -> ChannelEvidence:
    http = list(http or ())
    n_samples = (len(window) if window is not None else 0) + len(http)
    if n_samples == 0 or n_samples < cfg.min_samples:
        return ChannelEvidence.masked("H", step, "empty window" if n_samples == 0 else "too few samples")
    pending = backlog.update(http, now_ms, cfg.expiry_steps * dt * 1000.0) if backlog is not None else \
        float(sum(r.unmatched for r in http))
    raw = h_rates(window, http, dt, cfg, pending)
    t = {k: stats.smooth_norm("h." + k, _pos(v)) for k, v in raw.items()}
    s_net = min(cfg.w_b * t["B"] + cfg.w_r * t["R"] + cfg.w_f * t["F"] + cfg.w_x * t["X"]
                + cfg.w_e * t["E"] + cfg.w_t * t["T"] + cfg.w_m * t["M"], 1.0)
    s_mem = min(cfg.kappa_l * t["L"] + cfg.kappa_p * t["P"], cfg.max_mem)
    s_res = min(cfg.kappa_h * t["H"], cfg.max_res)
    return ChannelEvidence("H", step, (s_net, s_mem, s_res), 1, {"raw": raw, "norm": t})


# -- M: meminfo --------------------------------------------------------------

@dataclass(frozen=True)
class MChannelConfig:
    alpha: tuple[float, float, float, float] = (0.30, 0.30, 0.25, 0.15)
    beta_ipc: float = 0.15
    beta_wv: float = 0.10
    gamma_ui: float = 0.20
    tau_mem: float = 0.20
    k: int = 3
    eps: float = 1e-9

    def __post_init__(self):
        if len(self.alpha) != 4 or any(a < 0 for a in self.alpha):
            raise ValueError("channels.m.alpha must be four non-negative weights")
        if min(self.beta_ipc, self.beta_wv, self.gamma_ui) < 0:
            raise ValueError("channels.m budgets must be non-negative")
        if not 0.0 <= self.tau_mem <= 1.0:
            raise ValueError("channels.m.tau_mem must be in [0, 1]")
        if self.k < 1 or not self.eps > 0:
            raise ValueError("channels.m.k must be >= 1 and eps > 0")


def m_rates(prev: MeminfoSnapshot, curr: MeminfoSnapshot, dt: float, eps: float = 1e-9) -> dict[str, float]:
    return {
        "pss": (curr.pss_total - prev.pss_total) / dt,
        "heap": (curr.heap_alloc - prev.heap_alloc) / dt,
        "pressure": curr.heap_alloc / (curr.heap_size + eps),
        "swap": curr.swap_pss_dirty,
        "binder": ((curr.local_binders + curr.proxy_binders) - (prev.local_binders + prev.proxy_binders)) / dt
        + (curr.parcel_count - prev.parcel_count) / dt,
        "wv": (curr.webviews - prev.webviews) / dt,
        "ui": ((curr.views + curr.view_root_impl) - (prev.views + prev.view_root_impl)) / dt,
    }


def m_channel(
    prev: MeminfoSnapshot | None,
    curr: MeminfoSnapshot | None,
    dt: float,
    cfg: MChannelConfig,
    stats: StreamStats,
    *,
    step: int = 0,
) -> ChannelEvidence | None:
    """None when either snapshot is missing: the step is skipped for M."""
    if prev is None or curr is None:
        return None
    if not dt > 0:
        raise ValueError("dt must be positive")
    raw = m_rates(prev, curr, dt, cfg.eps)
    a1, a2, a3, a4 = cfg.alpha
    mem_raw = (a1 * stats.smooth_norm("m.pss", _pos(raw["pss"]))
               + a2 * stats.smooth_norm("m.heap", _pos(raw["heap"]))
               + a3 * stats.norm("m.pressure", raw["pressure"])
               + a4 * stats.smooth_norm("m.swap", raw["swap"]))
    u_bar = stats.recent_mean("m.gate", stats.ewma("m.raw", mem_raw), cfg.k)
    s_mem = _clip01(mem_raw) if u_bar >= cfg.tau_mem else 0.0
    s_net = min(1.0, cfg.beta_ipc * stats.smooth_norm("m.binder", _pos(raw["binder"]))
                + cfg.beta_wv * stats.smooth_norm("m.wv", _pos(raw["wv"])))
    s_res = min(1.0, cfg.gamma_ui * stats.smooth_norm("m.ui", _pos(raw["ui"])))
    return ChannelEvidence("M", step, (s_net, s_mem, s_res), 1,
                           {"raw": raw, "mem_raw": mem_raw, "gate": u_bar})


# -- R: scheduler --------------------------------------------------------------

@dataclass(frozen=True)
class RChannelConfig:
    gamma: tuple[float, float] = (0.8, 0.2)
    alpha: tuple[float, float, float, float] = (0.3, 0.3, 0.25, 0.15)
    tau_mem: float = 0.20
    k: int = 3
    z_cap: float = 3.0

    def __post_init__(self):
        if len(self.gamma) != 2 or any(g < 0 for g in self.gamma):
            raise ValueError("channels.r.gamma must be two non-negative weights")
        if len(self.alpha) != 4 or any(a < 0 for a in self.alpha):
            raise ValueError("channels.r.alpha must be four non-negative weights")
        if not 0.0 <= self.tau_mem <= 1.0:
            raise ValueError("channels.r.tau_mem must be in [0, 1]")
        if self.k < 1 or not self.z_cap > 0:
            raise ValueError("channels.r.k must be >= 1 and z_cap > 0")


def r_rates(prev: ProcSnapshot | None, curr: ProcSnapshot, dt: float) -> dict[str, float]:
    if prev is None:
        m_dot = r_dot = s_minus = 0.0
    else:
        m_dot = (curr.mem_pct - prev.mem_pct) / dt
        r_dot = (curr.res_kb - prev.res_kb) / dt
        s_minus = max(0.0, -(curr.shr_kb - prev.shr_kb) / dt)
    return {
        "cpu_cap": curr.cpu_pct / (100.0 * curr.cores),
        "m_dot": m_dot,
        "r_dot": r_dot,
        "mem_pct": curr.mem_pct,
        "s_minus": s_minus,
    }


def r_channel(
    prev: ProcSnapshot | None,
    curr: ProcSnapshot | None,
    dt: float,
    cfg: RChannelConfig,
    stats: StreamStats,
    *,
    step: int = 0,
) -> ChannelEvidence:
    if curr is None:
        return ChannelEvidence.masked("R", step, "no scheduler snapshot")
    if not dt > 0:
        raise ValueError("dt must be positive")
    raw = r_rates(prev, curr, dt)
    g1, g2 = cfg.gamma
    zabs = min(stats.zscore("r.cpu", curr.cpu_pct) / cfg.z_cap, 1.0)
    s_res = _clip01(g1 * stats.norm("r.cpu_cap", raw["cpu_cap"]) + g2 * zabs)
    a1, a2, a3, a4 = cfg.alpha
    mem_raw = (a1 * stats.smooth_norm("r.m_dot", _pos(raw["m_dot"]))
               + a2 * stats.smooth_norm("r.r_dot", _pos(raw["r_dot"]))
               + a3 * stats.smooth_norm("r.mem_pct", raw["mem_pct"])
               + a4 * stats.smooth_norm("r.s_minus", raw["s_minus"]))
    v_bar = stats.recent_mean("r.gate", stats.ewma("r.raw", mem_raw), cfg.k)
    s_mem = _clip01(mem_raw) if v_bar >= cfg.tau_mem else 0.0
    return ChannelEvidence("R", step, (0.0, s_mem, s_res), 1,
                           {"raw": raw, "zabs": zabs, "mem_raw": mem_raw, "gate": v_bar})


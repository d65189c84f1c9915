"""Synthetic session bundles for demos and end-to-end tests.

Scenarios:

benign-idle   empty-list screens, no traffic, flat memory and CPU
benign-heavy  media/map screens with heavy first-party traffic and load
exfil         a static form screen while a background uploader pushes data
              to a flagged third-party endpoint
crash-burst   ordinary browsing interrupted by crash dialogs with memory and
              CPU spikes and no traffic
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

KINDS = ("benign-idle", "benign-heavy", "exfil", "crash-burst")
PACKAGE = "com.example.app"
APP_ORIGIN = "example.com"
DELTA_T_S = 5.0


@dataclass
class Telemetry:
    """Mutable device state advanced one step at a time."""

    pss: float = 60000.0
    heap_size: float = 32000.0
    heap_alloc: float = 16000.0
    swap: float = 0.0
    views: int = 120
    view_root: int = 2
    local_binders: int = 30
    proxy_binders: int = 40
    parcels: int = 12
    webviews: int = 0
    cpu: float = 0.0
    mem_pct: float = 1.5
    res_kb: float = 150000.0
    virt_kb: float = 14.0 * 1024 * 1024
    shr_kb: float = 90000.0
    flows: dict = field(default_factory=dict)
    http: list = field(default_factory=list)
    have_net: bool = True


def _component(kind: str, bbox, conf: float, text: str | None = None) -> dict:
    d = {"kind": kind, "bbox": list(bbox), "confidence": conf}
    if text is not None:
        d["visible_text"] = text
    return d


def _evidence(step: int, ts: int, components: list, indicators: dict, ui_class: str,
              goal: str, description: str) -> dict:
    return {
        "step": step,
        "timestamp": ts,
        "components": components,
        "state_indicators": indicators,
        "screen_summary": {
            "description": description,
            "primary_goal": goal,
            "evidence_bullets": [f"{c['kind']} at {c['bbox']}" for c in components[:4]] or ["blank area", "no widgets"],
            "ui_class": ui_class,
        },
    }


def meminfo_text(t: Telemetry) -> str:
    free = max(t.heap_size - t.heap_alloc, 0)
    return f"""Applications Memory Usage (in Kilobytes):
Uptime: 8123456 Realtime: 8123456

** MEMINFO in pid 4242 [{PACKAGE}] **
                   Pss  Private  Private  SwapPss      Rss     Heap     Heap     Heap
                 Total    Dirty    Clean    Dirty    Total     Size    Alloc     Free
                ------   ------   ------   ------   ------   ------   ------   ------
  Native Heap    {int(t.pss * 0.3)}    {int(t.pss * 0.29)}        0       {int(t.swap * 0.5)}    {int(t.pss * 0.32)}    {int(t.heap_size * 0.6)}    {int(t.heap_alloc * 0.6)}    {int(free * 0.6)}
  Dalvik Heap    {int(t.pss * 0.2)}    {int(t.pss * 0.19)}        0       {int(t.swap * 0.5)}    {int(t.pss * 0.21)}    {int(t.heap_size * 0.4)}    {int(t.heap_alloc * 0.4)}    {int(free * 0.4)}
        Other    {int(t.pss * 0.5)}    {int(t.pss * 0.2)}     1200        0    {int(t.pss * 0.55)}
        TOTAL    {int(t.pss)}    {int(t.pss * 0.68)}     1200       {int(t.swap)}    {int(t.pss * 1.08)}    {int(t.heap_size)}    {int(t.heap_alloc)}    {int(free)}

 App Summary
                       Pss(KB)                        Rss(KB)
                        ------                         ------
           Java Heap:    {int(t.pss * 0.19)}                          {int(t.pss * 0.21)}
         Native Heap:    {int(t.pss * 0.29)}                          {int(t.pss * 0.32)}
               TOTAL:    {int(t.pss)}       TOTAL RSS:    {int(t.pss * 1.08)}       TOTAL SWAP PSS:    {int(t.swap)}

 Objects
               Views:      {t.views}         ViewRootImpl:        {t.view_root}
         AppContexts:        5           Activities:        1
              Assets:       20        AssetManagers:        0
       Local Binders:      {t.local_binders}        Proxy Binders:       {t.proxy_binders}
       Parcel memory:        5         Parcel count:       {t.parcels}
    Death Recipients:        1      OpenSSL Sockets:        0
            WebViews:        {t.webviews}
"""


def top_text(t: Telemetry, cores: int) -> str:
    def size(kb: float) -> str:
        if kb >= 1024 * 1024:
            return f"{kb / 1024 / 1024:.1f}G"
        if kb >= 1024:
            return f"{kb / 1024:.0f}M"
        return f"{kb:.0f}K"

    idle = max(cores * 100 - t.cpu, 0)
    return (
        "Tasks: 1 total,   1 running,   0 sleeping,   0 stopped,   0 zombie\n"
        "  Mem:   3.8G total,   3.5G used,   300M free,    20M buffers\n"
        " Swap:   2.0G total,   1.0G used,   1.0G free,   1.5G cached\n"
        f"{cores * 100}%cpu  {t.cpu:.0f}%user   0%nice   0%sys {idle:.0f}%idle   0%iow   0%irq   0%sirq   0%host\n"
        "  PID USER         PR  NI VIRT  RES  SHR S[%CPU] %MEM     TIME+ ARGS\n"
        f" 4242 u0_a123      10 -10 {size(t.virt_kb)} {size(t.res_kb)} {size(t.shr_kb)} S "
        f"{t.cpu:.1f} {t.mem_pct:.1f}   0:12.34 {PACKAGE}\n"
    )


def flows_csv(flows: dict) -> str:
    lines = ["src_ip,dst_ip,src_port,dst_port,cumulative_bytes,malicious"]
    for (src, dst, sp, dp), (total, bad) in sorted(flows.items()):
        lines.append(f"{src},{dst},{sp},{dp},{total},{int(bad)}")
    return "\n".join(lines) + "\n"


def _http(ts: int, method: str, host: str, status, size: int, *, third: bool, rep: float = 0.0,
          entropy: float | None = None, tracker: bool = False, rid: str | None = None,
          in_flight: bool = False) -> dict:
    headers = {
        "GET": ["host", "user-agent", "accept", "accept-encoding"],
        "POST": ["host", "user-agent", "content-type", "content-length"],
    }.get(method, ["host"])
    d = {
        "timestamp": ts, "method": method, "host": host, "status": status,
        "headers_present": headers, "body_size": size, "is_third_party": third,
        "tracker_match": tracker, "reputation": rep, "in_flight": in_flight,
    }
    if entropy is not None:
        d["body_entropy"] = entropy
    if rid is not None:
        d["request_id"] = rid
    return d


def _add_flow(t: Telemetry, key, nbytes: int, bad: bool = False) -> None:
    total, flag = t.flows.get(key, (0, bad))
    t.flows[key] = (total + nbytes, flag or bad)


# -- scenarios ---------------------------------------------------------------

INBOX_SCREEN = (
    [("Toolbar", (0, 0, 1080, 160), 0.95, "Inbox"), ("Icon", (480, 700, 600, 820), 0.9, None),
     ("Text", (200, 900, 880, 960), 0.9, "No messages")],
    "Inbox / empty", "read new messages",
)
EMPTY_SCREEN = (
    [("Toolbar", (0, 0, 1080, 160), 0.95, "Downloads"), ("Text", (200, 900, 880, 960), 0.9, "Nothing here yet")],
    "Downloads / empty list", "browse downloaded items",
)


def _idle(rng: random.Random, step: int, t: Telemetry):
    comps, ui_class, goal = INBOX_SCREEN if step % 3 else EMPTY_SCREEN
    ind = {"empty_state_visible": True,
           "evidence": {"empty_state_visible": {"bbox": [200, 900, 880, 960], "text": "Nothing here yet"}}}
    t.http = []
    t.cpu = 0.0
    return comps, ind, ui_class, goal


HEAVY_SCREENS = (
    ([("Toolbar", (0, 0, 1080, 160), 0.95, "Gallery"), ("Image", (0, 160, 1080, 900), 0.92, None),
      ("Text", (40, 920, 1040, 980), 0.9, "Sunset over the bay")],
     "Gallery / photo viewer", "view a full-size photo"),
    ([("Card", (40, 200, 1040, 600), 0.9, "Trending"), ("Card", (40, 620, 1040, 1020), 0.9, "For you"),
      ("Image", (40, 1040, 1040, 1500), 0.9, None)],
     "Feed / image stories", "scroll through picture stories"),
    ([("Image", (0, 160, 1080, 1500), 0.92, None), ("PageIndicator", (440, 1520, 640, 1560), 0.88, None)],
     "Gallery / swipe carousel", "swipe through the album"),
)


def _browse_load(rng: random.Random, step: int, t: Telemetry, ts: int) -> None:
    """Image-heavy first-party browsing with a little analytics traffic."""
    t.have_net = True
    t.http = []
    for k in range(rng.randint(8, 14)):
        size = rng.randint(120_000, 400_000)
        t.http.append(_http(max(0, ts - 4000 + 300 * k), "GET", "images.cdn-host.net", 200, size, third=True,
                            entropy=round(rng.uniform(7.0, 7.9), 3), rid=f"{step}-{k}"))
        _add_flow(t, ("10.0.2.15", "151.101.1.1", 40000 + k % 3, 443), size)
    for k in range(rng.randint(1, 2)):
        t.http.append(_http(max(0, ts - 2000 + 100 * k), "POST", "app-measurement.com", 204, 900, third=True,
                            tracker=True, rid=f"{step}-a{k}"))
        _add_flow(t, ("10.0.2.15", "142.250.1.1", 45000, 443), 900)
    t.cpu = rng.uniform(140, 220)
    t.mem_pct = 4.0 + rng.uniform(-0.2, 0.2)
    t.res_kb += rng.uniform(1000, 3000)
    _grow_heap(t, rng.uniform(1500, 3000), rng.uniform(400, 900))
    t.swap += rng.uniform(20, 60)
    t.views += rng.randint(0, 6)
    t.local_binders += rng.randint(0, 2)
    t.parcels += rng.randint(0, 3)


def _grow_heap(t: Telemetry, pss: float, heap: float) -> None:
    t.pss += pss
    t.heap_alloc += heap
    while t.heap_alloc > t.heap_size * 0.9:
        t.heap_size += 4000


def _heavy(rng: random.Random, step: int, t: Telemetry, ts: int):
    comps, ui_class, goal = HEAVY_SCREENS[(step // 4) % len(HEAVY_SCREENS)]
    _browse_load(rng, step, t, ts)
    return comps, {}, ui_class, goal


CONVERTER_SCREEN = (
    [("Toolbar", (0, 0, 1080, 160), 0.95, "Currency"), ("EditText", (40, 300, 1040, 400), 0.9, "100"),
     ("Spinner", (40, 420, 520, 500), 0.85, "USD"), ("Spinner", (560, 420, 1040, 500), 0.85, "EUR"),
     ("Text", (40, 540, 1040, 620), 0.9, "= 92.31 EUR"), ("TextButton", (40, 660, 1040, 760), 0.9, "Convert")],
    "Converter / main form", "convert an amount between currencies",
)


def _exfil(rng: random.Random, step: int, t: Telemetry, ts: int):
    comps, ui_class, goal = CONVERTER_SCREEN
    t.http = []
    t.cpu = 0.0
    if step >= 6:
        n = rng.randint(3, 5)
        for k in range(n):
            size = rng.randint(180_000, 260_000)
            status = 503 if k == 0 else 200
            t.http.append(_http(max(0, ts - 3000 + 400 * k), "POST", "upload.c2-drop.net", status, size, third=True,
                                rep=0.9, tracker=True, rid=f"{step}-{k}"))
            _add_flow(t, ("10.0.2.15", "185.220.101.7", 51000, 8443), size, bad=True)
    return comps, {}, ui_class, goal


NEWS_SCREEN = (
    [("Toolbar", (0, 0, 1080, 160), 0.95, "News"), ("Card", (40, 200, 1040, 600), 0.9, "Headline"),
     ("Card", (40, 620, 1040, 1020), 0.9, "Story"), ("Bottom_Navigation", (0, 1800, 1080, 1920), 0.9, None)],
    "News / feed", "read the latest stories",
)
CRASH_SCREEN = (
    [("Modal", (100, 700, 980, 1200), 0.93, "News keeps stopping"),
     ("TextButton", (600, 1080, 940, 1160), 0.9, "Close app")],
    "System / crash dialog", "dismiss the crash dialog",
)
CRASH_STEPS = frozenset({14, 15, 16, 33, 34, 47, 48, 49})


def _crash(rng: random.Random, step: int, t: Telemetry, ts: int):
    if step not in CRASH_STEPS:
        _browse_load(rng, step, t, ts)
        return NEWS_SCREEN[0], {}, NEWS_SCREEN[1], NEWS_SCREEN[2]
    comps, ui_class, goal = CRASH_SCREEN
    ind = {"error_banner_visible": True, "empty_state_visible": True,
           "indicator_texts": ["News keeps stopping"],
           "evidence": {"error_banner_visible": {"bbox": [100, 700, 980, 1200], "text": "News keeps stopping"},
                        "empty_state_visible": {"bbox": [100, 700, 980, 1200]}}}
    # the dying process stops talking to the network while memory runs away
    t.http = []
    t.have_net = False
    t.cpu = rng.uniform(330, 390)
    t.mem_pct += rng.uniform(0.3, 0.5)
    t.res_kb += rng.uniform(5_000, 8_000)
    t.shr_kb -= rng.uniform(2_000, 4_000)
    _grow_heap(t, rng.uniform(5_000, 7_000), rng.uniform(1_500, 2_500))
    t.swap += rng.uniform(100, 200)
    return comps, ind, ui_class, goal


# -- writer -------------------------------------------------------------------

def generate(kind: str, out: str | Path, *, seed: int = 0, steps: int = 60, cores: int = 4) -> Path:
    """Write a complete session bundle; identical (kind, seed, steps) give identical files."""
    if kind not in KINDS:
        raise ValueError(f"unknown fixture kind {kind!r}; choose from {', '.join(KINDS)}")
    if steps < 1:
        raise ValueError("steps must be >= 1")
    rng = random.Random(f"{kind}:{seed}")
    root = Path(out)
    (root / "steps").mkdir(parents=True, exist_ok=True)
    meta = {"format_version": 1, "package": PACKAGE, "cores": cores, "delta_t_s": DELTA_T_S,
            "app_origin": APP_ORIGIN, "scenario": kind, "seed": seed}
    (root / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    t = Telemetry()
    builders: dict[str, Callable] = {
        "benign-idle": lambda s, ts: _idle(rng, s, t),
        "benign-heavy": lambda s, ts: _heavy(rng, s, t, ts),
        "exfil": lambda s, ts: _exfil(rng, s, t, ts),
        "crash-burst": lambda s, ts: _crash(rng, s, t, ts),
    }
    for step in range(steps):
        ts = int(step * DELTA_T_S * 1000)
        comps, ind, ui_class, goal = builders[kind](step, ts)
        d = root / "steps" / f"{step:04d}"
        d.mkdir(exist_ok=True)
        components = [_component(k, bbox, c, text) for k, bbox, c, text in comps]
        pack = _evidence(step, ts, components, ind, ui_class, goal, f"{ui_class} screen")
        (d / "evidence.json").write_text(json.dumps(pack, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        (d / "meminfo.txt").write_text(meminfo_text(t), encoding="utf-8")
        (d / "top.txt").write_text(top_text(t, cores), encoding="utf-8")
        if t.flows and t.have_net:
            (d / "flows.csv").write_text(flows_csv(t.flows), encoding="utf-8")
        if t.http:
            (d / "http.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in t.http),
                                          encoding="utf-8")
    return root


def record_judgements(report, root: str | Path) -> None:
    """Store each step's judge outcome as a replayable provider recording."""
    pdir = Path(root) / "providers"
    pdir.mkdir(parents=True, exist_ok=True)
    for rec in report.steps:
        doc = {"confidence": rec.judge.confidence}
        (pdir / f"{rec.step:04d}.json").write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")

"""Per-step telemetry parsers and session bundle loading.

Session layout on disk::

    session/
      meta.json                  {"format_version": 1, "package": ..., "cores": 4,
                                  "delta_t_s": 5.0, "app_origin": ..., "trackers": "trackers.txt"}
      steps/0000/evidence.json   required
      steps/0000/screenshot.png  opaque, passed to providers by path
      steps/0000/meminfo.txt     dumpsys meminfo <package>
      steps/0000/top.txt         top -b -n 1 (filtered or not)
      steps/0000/flows.csv       src_ip,dst_ip,src_port,dst_port,cumulative_bytes,malicious
      steps/0000/http.jsonl      one HTTP record per line
      providers/0000.json        recorded provider responses (optional)
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .evidence import EvidenceError, EvidencePack, load_evidence_file

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
FLOW_COLUMNS = ("src_ip", "dst_ip", "src_port", "dst_port", "cumulative_bytes", "malicious")


class TelemetryParseError(ValueError):
    pass


class SessionLoadError(RuntimeError):
    pass


@dataclass(frozen=True)
class MeminfoSnapshot:
    pss_total: float
    heap_alloc: float
    heap_size: float
    swap_pss_dirty: float = 0.0
    local_binders: int = 0
    proxy_binders: int = 0
    parcel_count: int = 0
    webviews: int = 0
    views: int = 0
    view_root_impl: int = 0
    timestamp: int = 0
    diagnostics: tuple[str, ...] = ()

    @property
    def heap_pressure(self) -> float:
        return self.heap_alloc / (self.heap_size + 1e-9)


@dataclass(frozen=True)
class ProcSnapshot:
    cpu_pct: float
    mem_pct: float
    res_kb: float
    virt_kb: float
    shr_kb: float
    cores: int
    timestamp: int = 0
    diagnostics: tuple[str, ...] = ()


FlowKey = tuple[str, str, int, int]


@dataclass(frozen=True)
class FlowRecord:
    cumulative_bytes: int
    malicious: bool
    delta: int


@dataclass(frozen=True)
class FlowWindow:
    records: Mapping[FlowKey, FlowRecord]
    start_ms: int = 0
    end_ms: int = 0
    warnings: tuple[str, ...] = ()

    @property
    def cumulative(self) -> dict[FlowKey, int]:
        return {k: r.cumulative_bytes for k, r in self.records.items()}

    def total_delta(self) -> int:
        return sum(r.delta for r in self.records.values())

    def malicious_delta(self) -> int:
        return sum(r.delta for r in self.records.values() if r.malicious)

    def __len__(self) -> int:
        return len(self.records)


@dataclass(frozen=True)
class HttpRecord:
    method: str
    timestamp: int = 0
    status: int | None = None
    headers_present: frozenset[str] = frozenset()
    body_size: int = 0
    body_entropy: float | None = None
    registrable_origin: str = ""
    is_third_party: bool = False
    tracker_match: bool = False
    reputation: float = 0.0  # endpoint risk, 1 = known bad
    in_flight: bool = False
    request_id: str | None = None
    host: str | None = None

    @property
    def unmatched(self) -> bool:
        return self.in_flight or self.status is None


@dataclass
class Step:
    index: int
    timestamp: int
    evidence: EvidencePack
    screenshot: Path | None = None
    flows: FlowWindow | None = None
    http: list[HttpRecord] | None = None
    meminfo: MeminfoSnapshot | None = None
    proc: ProcSnapshot | None = None
    diagnostics: list[str] = field(default_factory=list)


@dataclass
class SessionBundle:
    steps: list[Step]
    delta_t: float
    meta: dict[str, Any] = field(default_factory=dict)
    root: Path | None = None

    @property
    def cores(self) -> int:
        return int(self.meta.get("cores", 1))


# -- meminfo ---------------------------------------------------------------

_KV_ALIASES = {
    "pss_total": ("TOTAL PSS", "PssTotal", "Pss Total", "TOTAL"),
    "heap_alloc": ("HeapAlloc", "Heap Alloc"),
    "heap_size": ("HeapSize", "Heap Size"),
    "swap_pss_dirty": ("SwapPssDirty", "SwapPss Dirty", "TOTAL SWAP PSS", "TOTAL SWAP PSS (KB)"),
}
_OBJECTS = {
    "views": "Views",
    "view_root_impl": "ViewRootImpl",
    "local_binders": "Local Binders",
    "proxy_binders": "Proxy Binders",
    "parcel_count": "Parcel count",
    "webviews": "WebViews",
}
_TABLE_COLUMNS = {
    "Pss Total": "pss_total",
    "Heap Size": "heap_size",
    "Heap Alloc": "heap_alloc",
    "SwapPss Dirty": "swap_pss_dirty",
}


def _meminfo_table(lines: list[str]) -> dict[str, float]:
    """Values from the TOTAL row of the per-category table, keyed by column."""
    for i in range(len(lines) - 1):
        top = lines[i].split()
        bottom = lines[i + 1].split()
        if top and "Pss" in top and "Heap" in top and len(top) == len(bottom):
            columns = [f"{a} {b}" for a, b in zip(top, bottom)]
            break
    else:
        return {}
    for line in lines[i + 2:]:
        parts = line.split()
        if parts and parts[0] == "TOTAL" and len(parts) > 1 and ":" not in line:
            nums = parts[1: 1 + len(columns)]
            found = {}
            for col, raw in zip(columns, nums):
                key = _TABLE_COLUMNS.get(col)
                if key is not None:
                    try:
                        found[key] = float(raw)
                    except ValueError:
                        raise TelemetryParseError(f"non-numeric {col!r} in TOTAL row: {raw!r}") from None
            return found
    return {}


def parse_meminfo(text: str, *, timestamp: int = 0, heap_slack_kb: float = 1024.0) -> MeminfoSnapshot:
    """Parse a ``dumpsys meminfo <package>`` dump (table or key: value style).

    PssTotal, HeapAlloc and HeapSize are required; the object counters and
    swap default to 0 with a diagnostic when absent.
    """
    if not isinstance(text, str):
        raise TelemetryParseError("meminfo text must be a string")
    lines = text.splitlines()
    values: dict[str, float] = {}
    try:
        values.update(_meminfo_table(lines))
    except TelemetryParseError:
        raise
    for key, aliases in _KV_ALIASES.items():
        for alias in aliases:
            m = re.search(r"(?m)^\s*" + re.escape(alias) + r"\s*:\s*([-+]?\d+(?:\.\d+)?)", text)
            if m:
                values.setdefault(key, float(m.group(1)))
                break
    for key, label in _OBJECTS.items():
        m = re.search(r"(?<![A-Za-z])" + re.escape(label) + r":\s+(\d+)", text)
        if m:
            values[key] = int(m.group(1))

    missing = [k for k in ("pss_total", "heap_alloc", "heap_size") if k not in values]
    if missing:
        raise TelemetryParseError(f"meminfo is missing required field(s): {', '.join(missing)}")
    diagnostics = []
    for key in ("swap_pss_dirty", *_OBJECTS):
        if key not in values:
            values[key] = 0
            diagnostics.append(f"meminfo: {key} absent, using 0")
    for key, value in values.items():
        if value < 0 or not math.isfinite(value):
            raise TelemetryParseError(f"meminfo {key} must be a non-negative number, got {value!r}")
    if values["heap_alloc"] > values["heap_size"] + heap_slack_kb:
        raise TelemetryParseError(
            f"HeapAlloc {values['heap_alloc']} exceeds HeapSize {values['heap_size']} beyond slack"
        )
    ints = {k: int(values[k]) for k in _OBJECTS}
    return MeminfoSnapshot(
        pss_total=float(values["pss_total"]),
        heap_alloc=float(values["heap_alloc"]),
        heap_size=float(values["heap_size"]),
        swap_pss_dirty=float(values["swap_pss_dirty"]),
        timestamp=timestamp,
        diagnostics=tuple(diagnostics),
        **ints,
    )


# -- top -------------------------------------------------------------------

_SIZE_UNITS = {"": 1.0, "K": 1.0, "M": 1024.0, "G": 1024.0 ** 2, "T": 1024.0 ** 3}
_COLUMN_ALIASES = {
    "%CPU": "cpu", "CPU%": "cpu", "%MEM": "mem", "MEM%": "mem",
    "RES": "res", "RSS": "res", "VIRT": "virt", "VSS": "virt", "SHR": "shr",
}


def _size_kb(raw: str) -> float:
    m = re.fullmatch(r"(\d+(?:\.\d+)?)([KMGT]?)B?", raw.strip(), re.I)
    if not m:
        raise TelemetryParseError(f"malformed size field {raw!r}")
    return float(m.group(1)) * _SIZE_UNITS[m.group(2).upper()]


def _percent(raw: str) -> float:
    try:
        v = float(raw.rstrip("%"))
    except ValueError:
        raise TelemetryParseError(f"malformed percentage {raw!r}") from None
    if v < 0 or not math.isfinite(v):
        raise TelemetryParseError(f"percentage must be non-negative, got {raw!r}")
    return v


def parse_proc(text: str, cores: int, *, package: str | None = None, timestamp: int = 0) -> ProcSnapshot:
    """Parse ``top`` output for one process.

    With ``package`` the first row whose command column contains it is used,
    otherwise the first data row.
    """
    if cores < 1:
        raise TelemetryParseError("core count must be >= 1")
    if not isinstance(text, str):
        raise TelemetryParseError("top output must be a string")
    lines = text.splitlines()
    header_at = None
    for i, line in enumerate(lines):
        if "PID" in line and ("CPU" in line):
            header_at = i
            break
    if header_at is None:
        raise TelemetryParseError("no top header row (PID ... %CPU) found")
    header = re.sub(r"[\[\]]", " ", lines[header_at]).split()
    cols = {}
    for idx, name in enumerate(header):
        alias = _COLUMN_ALIASES.get(name)
        if alias and alias not in cols:
            cols[alias] = idx
    if "cpu" not in cols:
        raise TelemetryParseError("top header lacks a CPU column")

    row = None
    for line in lines[header_at + 1:]:
        parts = line.split(None, len(header) - 1)
        if len(parts) < len(header) or not parts[0].isdigit():
            continue
        if package is None or package in parts[-1]:
            row = parts
            break
    if row is None:
        raise TelemetryParseError(f"no process row matching {package!r}" if package else "no process rows")

    diagnostics = []

    def size(name: str) -> float:
        if name not in cols:
            diagnostics.append(f"top: {name} column absent, using 0")
            return 0.0
        return _size_kb(row[cols[name]])

    mem = _percent(row[cols["mem"]]) if "mem" in cols else 0.0
    if "mem" not in cols:
        diagnostics.append("top: mem column absent, using 0")
    return ProcSnapshot(
        cpu_pct=_percent(row[cols["cpu"]]),
        mem_pct=mem,
        res_kb=size("res"),
        virt_kb=size("virt"),
        shr_kb=size("shr"),
        cores=int(cores),
        timestamp=timestamp,
        diagnostics=tuple(diagnostics),
    )


# -- flows -----------------------------------------------------------------

def _flag(raw: str) -> bool:
    v = raw.strip().lower()
    if v in ("1", "true", "yes"):
        return True
    if v in ("0", "false", "no", ""):
        return False
    raise TelemetryParseError(f"malformed malicious flag {raw!r}")


def parse_flow_snapshot(
    text: str,
    previous: FlowWindow | Mapping[FlowKey, int] | None = None,
    *,
    start_ms: int = 0,
    end_ms: int = 0,
) -> FlowWindow:
    """Per-flow byte deltas from one cumulative snapshot.

    ``previous`` holds the last known cumulative count per flow key; flows
    not seen before start from 0. Directions are distinct flows. A counter
    that went backwards yields a delta of 0 and a warning.
    """
    if isinstance(previous, FlowWindow):
        previous = previous.cumulative
    previous = previous or {}
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames][:6] != list(FLOW_COLUMNS):
        raise TelemetryParseError(f"flows.csv header must be {','.join(FLOW_COLUMNS)}")
    records: dict[FlowKey, FlowRecord] = {}
    warnings = []
    for lineno, row in enumerate(reader, start=2):
        try:
            key = (row["src_ip"].strip(), row["dst_ip"].strip(), int(row["src_port"]), int(row["dst_port"]))
            cum = int(row["cumulative_bytes"])
            bad = _flag(row["malicious"] or "")
        except (TypeError, ValueError, AttributeError) as exc:
            raise TelemetryParseError(f"flows.csv line {lineno}: {exc}") from None
        if cum < 0:
            raise TelemetryParseError(f"flows.csv line {lineno}: negative cumulative bytes")
        if key in records:
            warnings.append(f"duplicate flow row for {key}; keeping the larger count")
            cum = max(cum, records[key].cumulative_bytes)
            bad = bad or records[key].malicious
        delta = cum - previous.get(key, 0)
        if delta < 0:
            msg = f"cumulative bytes for {key} went backwards ({previous[key]} -> {cum}); delta clamped to 0"
            log.warning(msg)
            warnings.append(msg)
            delta = 0
        records[key] = FlowRecord(cum, bad, delta)
    return FlowWindow(records, start_ms, end_ms, tuple(warnings))


# -- http ------------------------------------------------------------------

_MULTI_PART_SLD = {"co", "com", "net", "org", "gov", "ac", "edu"}


def registrable_domain(host: str) -> str:
    labels = [x for x in host.lower().strip(".").split(".") if x]
    if len(labels) <= 2:
        return ".".join(labels)
    if len(labels[-1]) == 2 and labels[-2] in _MULTI_PART_SLD:
        return ".".join(labels[-3:])
    return ".".join(labels[-2:])


def load_tracker_list(path: str | Path) -> frozenset[str]:
    """Newline-delimited registrable domains; ``#`` starts a comment."""
    domains = set()
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip().lower()
        if line:
            domains.add(line)
    return frozenset(domains)


def http_record_from_dict(
    d: Mapping[str, Any], *, trackers: frozenset[str] = frozenset(), app_origin: str | None = None
) -> HttpRecord:
    if not isinstance(d, Mapping):
        raise TelemetryParseError("HTTP record must be an object")
    method = d.get("method")
    if not isinstance(method, str) or not method:
        raise TelemetryParseError("HTTP record needs a method")
    status = d.get("status")
    if status is not None and (not isinstance(status, int) or isinstance(status, bool)):
        raise TelemetryParseError(f"status must be an integer or null, got {status!r}")
    headers = d.get("headers_present", [])
    if not isinstance(headers, list) or not all(isinstance(h, str) for h in headers):
        raise TelemetryParseError("headers_present must be a list of header names")
    size = d.get("body_size", 0)
    if not isinstance(size, (int, float)) or isinstance(size, bool) or size < 0:
        raise TelemetryParseError(f"body_size must be a non-negative number, got {size!r}")
    entropy = d.get("body_entropy")
    if entropy is not None:
        if d.get("encrypted", False):
            log.warning("dropping body_entropy of an undecoded (encrypted) payload")
            entropy = None
        elif not isinstance(entropy, (int, float)) or not 0.0 <= entropy <= 8.0:
            raise TelemetryParseError(f"body_entropy must be in [0, 8], got {entropy!r}")
    reputation = d.get("reputation", 0.0)
    if not isinstance(reputation, (int, float)) or not 0.0 <= reputation <= 1.0:
        raise TelemetryParseError(f"reputation must be in [0, 1], got {reputation!r}")

    host = d.get("host")
    origin = d.get("registrable_origin") or (registrable_domain(host) if isinstance(host, str) else "")
    if "is_third_party" in d:
        third = bool(d["is_third_party"])
    else:
        third = bool(app_origin and origin and origin != app_origin)
    if "tracker_match" in d:
        tracker = bool(d["tracker_match"])
    else:
        tracker = bool(origin) and origin in trackers
    ts = d.get("timestamp", 0)
    if not isinstance(ts, (int, float)) or ts < 0:
        raise TelemetryParseError("timestamp must be non-negative milliseconds")
    rid = d.get("request_id")
    return HttpRecord(
        method=method.upper(),
        timestamp=int(ts),
        status=status,
        headers_present=frozenset(h.lower() for h in headers),
        body_size=int(size),
        body_entropy=None if entropy is None else float(entropy),
        registrable_origin=origin,
        is_third_party=third,
        tracker_match=tracker,
        reputation=float(reputation),
        in_flight=bool(d.get("in_flight", False)),
        request_id=None if rid is None else str(rid),
        host=host if isinstance(host, str) else None,
    )


def parse_http_jsonl(text: str, **kwargs) -> list[HttpRecord]:
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TelemetryParseError(f"http.jsonl line {lineno}: {exc}") from None
        try:
            out.append(http_record_from_dict(d, **kwargs))
        except TelemetryParseError as exc:
            raise TelemetryParseError(f"http.jsonl line {lineno}: {exc}") from None
    return out


# -- sessions --------------------------------------------------------------

def _read_optional(path: Path, parse, diagnostics: list[str]):
    if not path.exists():
        return None
    try:
        return parse(path.read_text(encoding="utf-8", errors="replace"))
    except (TelemetryParseError, OSError) as exc:
        diagnostics.append(f"{path.name}: {exc}")
        return None


def _load_step(step_dir: Path, meta: Mapping[str, Any], trackers: frozenset[str]) -> Step:
    ev_path = step_dir / "evidence.json"
    if not ev_path.exists():
        raise SessionLoadError(f"{step_dir}: missing evidence.json")
    try:
        pack = load_evidence_file(ev_path)
    except EvidenceError as exc:
        raise SessionLoadError(f"{ev_path}: {exc}") from None
    index = int(step_dir.name)
    diagnostics: list[str] = []
    shot = step_dir / "screenshot.png"
    step = Step(index=index, timestamp=pack.timestamp, evidence=pack,
                screenshot=shot if shot.exists() else None, diagnostics=diagnostics)
    step.meminfo = _read_optional(step_dir / "meminfo.txt", lambda t: parse_meminfo(t, timestamp=step.timestamp), diagnostics)
    step.proc = _read_optional(
        step_dir / "top.txt",
        lambda t: parse_proc(t, int(meta.get("cores", 1)), package=meta.get("package"), timestamp=step.timestamp),
        diagnostics,
    )
    step.http = _read_optional(
        step_dir / "http.jsonl",
        lambda t: parse_http_jsonl(t, trackers=trackers, app_origin=meta.get("app_origin")),
        diagnostics,
    )
    flows_path = step_dir / "flows.csv"
    step._flows_text = flows_path.read_text(encoding="utf-8", errors="replace") if flows_path.exists() else None
    return step


def load_session(path: str | Path, *, delta_t: float | None = None, jobs: int = 4) -> SessionBundle:
    """Load a session directory into an index-sorted bundle.

    Steps without evidence abort the load; missing or unparsable telemetry
    only leaves that piece empty (recorded in ``step.diagnostics``).
    """
    root = Path(path)
    if not root.is_dir():
        raise SessionLoadError(f"{root}: not a session directory")
    meta: dict[str, Any] = {}
    meta_path = root / "meta.json"
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SessionLoadError(f"{meta_path}: {exc}") from None
        version = meta.get("format_version", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise SessionLoadError(f"{meta_path}: unsupported format_version {version!r}")
    trackers: frozenset[str] = frozenset()
    if meta.get("trackers"):
        trackers = load_tracker_list(root / meta["trackers"])

    steps_root = root / "steps"
    dirs = sorted((d for d in steps_root.iterdir() if d.is_dir() and d.name.isdigit()),
                  key=lambda d: int(d.name)) if steps_root.is_dir() else []
    if not dirs:
        raise SessionLoadError(f"{root}: no steps found")
    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        steps = list(pool.map(lambda d: _load_step(d, meta, trackers), dirs))

    configured = delta_t if delta_t is not None else meta.get("delta_t_s")
    if all(s.timestamp == 0 for s in steps) and len(steps) > 1:
        if configured is None:
            raise SessionLoadError(f"{root}: steps carry no timestamps and no delta_t_s is configured")
        for s in steps:
            s.timestamp = int(round(s.index * float(configured) * 1000))
    for prev, cur in zip(steps, steps[1:]):
        if cur.timestamp <= prev.timestamp:
            raise SessionLoadError(f"{root}: timestamps not strictly increasing at step {cur.index}")
    if configured is not None:
        dt = float(configured)
    elif len(steps) > 1:
        dt = statistics.median((b.timestamp - a.timestamp) / 1000.0 for a, b in zip(steps, steps[1:]))
    else:
        dt = 1.0
    if not dt > 0:
        raise SessionLoadError(f"{root}: sampling interval must be positive")

    # flow deltas need the running per-flow totals, so they are computed in order
    seen: dict[FlowKey, int] = {}
    prev_ts = None
    for s in steps:
        text = s.__dict__.pop("_flows_text", None)
        if text is not None:
            start = s.timestamp - int(dt * 1000) if prev_ts is None else prev_ts
            try:
                s.flows = parse_flow_snapshot(text, seen, start_ms=start, end_ms=s.timestamp)
                seen.update(s.flows.cumulative)
                s.diagnostics.extend(s.flows.warnings)
            except TelemetryParseError as exc:
                s.diagnostics.append(f"flows.csv: {exc}")
        for piece in (s.meminfo, s.proc):
            if piece is not None:
                object.__setattr__(piece, "timestamp", s.timestamp)
        prev_ts = s.timestamp
    return SessionBundle(steps, dt, meta, root)

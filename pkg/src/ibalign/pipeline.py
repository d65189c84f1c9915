"""Session runner: evidence -> intent, telemetry -> behaviour, then scoring."""

from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from .alignment import (
    ANOMALY, OVERT, VERDICTS, AlignmentResult, BehaviourVector, JudgeInput, fuse, score_step,
)
from .channels import Backlog, ChannelEvidence, StreamStats, h_channel, m_channel, r_channel
from .config import Config
from .evidence import IntentContext
from .intent import IntentVector, trace_intent
from .providers import JudgeChain, JudgeOutcome, make_judge
from .telemetry import SessionBundle

UNLABELLED = "Unlabelled"
CSV_COLUMNS = ("step", "ui_class", "i_net", "i_mem", "i_res", "b_net", "b_mem", "b_res",
               "A", "M", "B", "C", "quadrant", "verdict")


@dataclass
class StepRecord:
    step: int
    timestamp: int
    ui_class: str | None
    intent: IntentVector
    behaviour: BehaviourVector
    result: AlignmentResult
    judge: JudgeOutcome
    channels: dict[str, ChannelEvidence | None]
    diagnostics: list[str] = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return self.result.verdict

    def to_dict(self) -> dict[str, Any]:
        r = self.result
        return {
            "step": self.step,
            "timestamp": self.timestamp,
            "ui_class": self.ui_class,
            "intent": list(self.intent),
            "behaviour": list(self.behaviour.vector),
            "scored": self.behaviour.scored,
            "A": r.A, "M": r.M, "B": r.B, "C": r.C,
            "quadrant": r.quadrant,
            "verdict": r.verdict,
            "reason": r.reason,
            "dominant": r.dominant,
            "judge": self.judge.to_dict(),
            "channels": {
                k: ({"skipped": True} if ev is None else {"s": list(ev.s), "mask": ev.mask})
                for k, ev in self.channels.items()
            },
            "diagnostics": list(self.diagnostics),
        }


@dataclass
class SessionReport:
    steps: list[StepRecord]
    classes: dict[str, dict[str, int]]
    totals: dict[str, int]
    config: dict[str, Any]
    session: str = ""

    @property
    def anomalies(self) -> int:
        return self.totals.get(ANOMALY, 0)

    @property
    def degraded_steps(self) -> list[int]:
        return [s.step for s in self.steps if s.judge.degraded]

    def to_dict(self) -> dict[str, Any]:
        return {
            "format_version": 1,
            "session": self.session,
            "totals": self.totals,
            "classes": self.classes,
            "overt_anomaly_steps": [s.step for s in self.steps if s.result.quadrant == OVERT],
            "degraded_steps": self.degraded_steps,
            "steps": [s.to_dict() for s in self.steps],
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def aggregate_by_class(records: Iterable[StepRecord]) -> dict[str, dict[str, int]]:
    """Verdict counts per UI class; steps without a class go under "Unlabelled"."""
    table: dict[str, Counter] = {}
    for rec in records:
        table.setdefault(rec.ui_class or UNLABELLED, Counter())[rec.verdict] += 1
    return {k: {v: table[k].get(v, 0) for v in VERDICTS} for k in sorted(table)}


def class_table_rows(classes: dict[str, dict[str, int]]) -> list[tuple]:
    """Rows (class, Authorised, Anomaly, Uncertain) followed by a Total row."""
    rows = [(k, *(counts[v] for v in VERDICTS)) for k, counts in classes.items()]
    rows.append(("Total", *(sum(r[i] for r in rows) for i in range(1, 4))))
    return rows


def run_session(bundle: SessionBundle, config: Config, judge: JudgeChain | None = None) -> SessionReport:
    """Score every step of a bundle in order; stream state is per call."""
    prior, constants, sp = config.prior, config.constants, config.state_params
    hcfg, mcfg, rcfg, fcfg = config.h, config.m, config.r, config.fusion
    history_n = int(config.data["judge"]["history"])
    if judge is None:
        judge = make_judge(config.provider, bundle.root, history_n)
    st = config.streams
    stats = StreamStats(st["alpha"], int(st["window"]), st["eps"])
    backlog = Backlog()
    context = IntentContext(int(config.data["evidence"]["context_n"]))
    history: list[tuple[IntentVector, BehaviourVector]] = []
    prev_mem = prev_proc = None
    records = []

    for step in bundle.steps:
        diag = list(step.diagnostics)
        trace = trace_intent(step.evidence, prior, constants, sp)
        if trace.skipped:
            diag.append(f"components without prior entry skipped: {sorted(set(trace.skipped))}")
        i = trace.vector

        h = h_channel(step.flows, step.http, hcfg, stats, dt=bundle.delta_t, step=step.index,
                      now_ms=step.timestamp, backlog=backlog)
        m = None
        if step.meminfo is not None and prev_mem is not None:
            m = m_channel(prev_mem, step.meminfo, (step.timestamp - prev_mem.timestamp) / 1000.0,
                          mcfg, stats, step=step.index)
        elif step.meminfo is None:
            diag.append("memory channel skipped: no meminfo")
        r_dt = (step.timestamp - prev_proc.timestamp) / 1000.0 if prev_proc is not None else bundle.delta_t
        r = r_channel(prev_proc, step.proc, r_dt, rcfg, stats, step=step.index)
        if step.meminfo is not None:
            prev_mem = step.meminfo
        if step.proc is not None:
            prev_proc = step.proc

        b = fuse((h, m, r), fcfg)
        outcome = judge.judge(JudgeInput(
            i=i, b=b, indicators=step.evidence.state_indicators,
            components=tuple(c.kind for c in step.evidence.components),
            history=tuple(history[:history_n]),
            screenshot=str(step.screenshot) if step.screenshot else None,
            step=step.index,
        ))
        if outcome.degraded:
            diag.append(f"judge degraded to {outcome.source}: {outcome.error}")
        result = score_step(step.index, i, b, outcome.confidence, fcfg)
        records.append(StepRecord(step.index, step.timestamp, step.evidence.ui_class, i, b, result,
                                  outcome, {"H": h, "M": m, "R": r}, diag))
        history.insert(0, (i, b))
        del history[history_n:]
        context.push(i, step.evidence.primary_goal)

    classes = aggregate_by_class(records)
    totals = {v: sum(1 for rec in records if rec.verdict == v) for v in VERDICTS}
    totals["steps"] = len(records)
    name = bundle.root.name if bundle.root is not None else ""
    return SessionReport(records, classes, totals, config.snapshot(), name)


def steps_csv(records: Sequence[StepRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for rec in records:
        r = rec.result
        w.writerow([rec.step, rec.ui_class or "", *(f"{x:.6f}" for x in rec.intent),
                    *(f"{x:.6f}" for x in rec.behaviour.vector),
                    f"{r.A:.6f}", f"{r.M:.6f}", f"{r.B:.6f}", f"{r.C:.6f}", r.quadrant, r.verdict])
    return buf.getvalue()


def series_dat(records: Sequence[StepRecord]) -> str:
    """Whitespace table of predicted (intent) vs observed (behaviour) per axis."""
    lines = ["# step p_net o_net p_mem o_mem p_res o_res"]
    for rec in records:
        vals = [v for pair in zip(rec.intent, rec.behaviour.vector) for v in pair]
        lines.append(" ".join([str(rec.step), *(f"{v:.6f}" for v in vals)]))
    return "\n".join(lines) + "\n"


def write_reports(report: SessionReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = {
        "report.json": report.to_json(),
        "steps.csv": steps_csv(report.steps),
        "series.dat": series_dat(report.steps),
    }
    paths = []
    for name, text in files.items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths

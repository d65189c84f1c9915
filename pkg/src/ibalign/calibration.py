"""Derive channel hyperparameters from a paired-delta table.

Every series is rank-normalised, scored against a physical target with a
blend of Spearman and Pearson correlation, filtered with Benjamini-Hochberg,
and the surviving strengths become mixture weights.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import tomli_w
from scipy import stats

from .intent import nearest_rank
from .kernels import bh_count

log = logging.getLogger(__name__)

SURROGATES = ("requests", "failures", "cross_domain", "reputation", "trackers", "malicious_bytes")
H_KEYS = dict(zip(SURROGATES, ("w_r", "w_f", "w_x", "w_e", "w_t", "w_m")))
MIXTURE = ("pss", "heap", "pressure", "swap")
RATES = ("pss", "heap")
LEVELS = ("pressure", "swap")
HANDSHAKE = ("binder", "webview")
R_DEFAULT = (0.3, 0.3, 0.25, 0.15)
P_METHODS = ("bonferroni", "stronger")


class CalibrationError(ValueError):
    pass


def rank_normalise(series: Sequence[float]) -> np.ndarray:
    """Percentile ranks (rank - 1)/(n - 1) with average ranks for ties."""
    x = np.asarray(series, dtype=float)
    if x.size == 0:
        raise CalibrationError("cannot rank an empty series")
    if x.size == 1:
        return np.array([0.5])
    return (stats.rankdata(x) - 1.0) / (x.size - 1.0)


def _t_pvalue(r: float, n: int) -> float:
    r = min(abs(r), 1.0)
    if r == 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * stats.t.sf(t, n - 2))


def blended_strength(x: Sequence[float], y: Sequence[float], p_method: str = "bonferroni") -> tuple[float, float]:
    """Mean of |Spearman| and |Pearson|, with a two-sided t-approximation p-value.

    ``p_method="stronger"`` tests only the larger coefficient; the default
    tests both and applies a Bonferroni correction for having looked twice.
    """
    a = np.asarray(x, dtype=float)
    b = np.asarray(y, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise CalibrationError("series must be one-dimensional and of equal length")
    n = a.size
    if n < 3:
        raise CalibrationError("need at least 3 paired observations")
    if np.ptp(a) == 0 or np.ptp(b) == 0:
        return 0.0, 1.0
    rp = float(np.corrcoef(a, b)[0, 1])
    rs = float(np.corrcoef(stats.rankdata(a), stats.rankdata(b))[0, 1])
    strength = min(1.0, (abs(rs) + abs(rp)) / 2.0)
    if p_method == "stronger":
        p = _t_pvalue(max(abs(rs), abs(rp)), n)
    elif p_method == "bonferroni":
        p = min(1.0, 2.0 * min(_t_pvalue(rs, n), _t_pvalue(rp, n)))
    else:
        raise CalibrationError(f"unknown p-value method {p_method!r}")
    return strength, p


def bh_select(p_values: Sequence[float], q: float = 0.05) -> set[int]:
    """Indices rejected by the Benjamini-Hochberg step-up rule."""
    if not 0.0 < q < 1.0:
        raise CalibrationError("q must be in (0, 1)")
    p = [float(v) for v in p_values]
    k = bh_count(p, q)
    if k == 0:
        return set()
    cut = sorted(p)[k - 1]
    return {j for j, v in enumerate(p) if v <= cut}


@dataclass
class PairedDeltaTable:
    columns: dict[str, np.ndarray]
    roles: dict[str, Any] = field(default_factory=dict)
    constant_ok: frozenset[str] = frozenset()

    def __post_init__(self):
        lengths = {len(v) for v in self.columns.values()}
        if len(lengths) > 1:
            raise CalibrationError(f"columns differ in length: {sorted(lengths)}")
        if lengths and lengths.pop() < 3:
            raise CalibrationError("need at least 3 rows")
        self.columns = {k: np.asarray(v, dtype=float) for k, v in self.columns.items()}
        for name in self.referenced():
            if name not in self.columns:
                raise CalibrationError(f"roles reference unknown column {name!r}")
            col = self.columns[name]
            if not np.all(np.isfinite(col)):
                raise CalibrationError(f"column {name!r} has missing or non-finite values")
            if np.ptp(col) == 0 and name not in self.constant_ok:
                raise CalibrationError(f"column {name!r} is constant")

    def referenced(self) -> list[str]:
        names = []
        for value in self.roles.values():
            for v in value.values() if isinstance(value, Mapping) else [value]:
                names.extend([v] if isinstance(v, str) else v or [])
        return names

    def group(self, role: str) -> dict[str, np.ndarray]:
        """Named columns for a role table, skipping entries set to null."""
        spec = self.roles.get(role) or {}
        return {k: self.columns[v] for k, v in spec.items() if isinstance(v, str)}

    def physical(self, kind: str) -> list[np.ndarray]:
        names = (self.roles.get("physical") or {}).get(kind) or []
        if isinstance(names, str):
            names = [names]
        return [self.columns[n] for n in names]

    @classmethod
    def from_csv(cls, table: str | Path, roles: str | Path) -> "PairedDeltaTable":
        with open(table, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise CalibrationError(f"{table}: empty table") from None
            rows = [r for r in reader if r]
        cols: dict[str, list[float]] = {h.strip(): [] for h in header}
        for lineno, row in enumerate(rows, start=2):
            if len(row) != len(header):
                raise CalibrationError(f"{table}:{lineno}: expected {len(header)} fields, got {len(row)}")
            for h, v in zip(header, row):
                try:
                    cols[h.strip()].append(float(v) if v.strip() else math.nan)
                except ValueError:
                    raise CalibrationError(f"{table}:{lineno}: {h.strip()} is not a number: {v!r}") from None
        doc = json.loads(Path(roles).read_text(encoding="utf-8"))
        flagged = frozenset(doc.pop("constant_ok", []))
        return cls({k: np.array(v) for k, v in cols.items()}, doc, flagged)


@dataclass
class CalibrationResult:
    weights: dict[str, float]
    strengths: dict[str, float]
    p_values: dict[str, float]
    shrunk: dict[str, bool]
    spillover: float = 0.0
    baseline: float | None = None
    warnings: list[str] = field(default_factory=list)
    fragment: dict[str, Any] = field(default_factory=dict)
    channel: str = ""


def _target(cols: Sequence[np.ndarray], what: str) -> np.ndarray:
    if not cols:
        raise CalibrationError(f"roles define no physical {what} columns")
    return np.mean([rank_normalise(c) for c in cols], axis=0)


def _score(series: Mapping[str, np.ndarray], target: np.ndarray, q: float, p_method: str):
    names = list(series)
    strengths, pvals = {}, {}
    for name in names:
        strengths[name], pvals[name] = blended_strength(rank_normalise(series[name]), target, p_method)
    keep = bh_select([pvals[n] for n in names], q) if names else set()
    shrunk = {n: j not in keep for j, n in enumerate(names)}
    return strengths, pvals, shrunk


def _normalise(strengths: Mapping[str, float], shrunk: Mapping[str, bool]) -> dict[str, float]:
    total = math.fsum(s for n, s in strengths.items() if not shrunk[n])
    if total <= 0:
        return {n: 0.0 for n in strengths}
    return {n: (0.0 if shrunk[n] else s / total) for n, s in strengths.items()}


def _composite(series: Mapping[str, np.ndarray], weights: Mapping[str, float]) -> np.ndarray:
    n = len(next(iter(series.values())))
    out = np.zeros(n)
    for name, col in series.items():
        out += weights.get(name, 0.0) * rank_normalise(col)
    return out


def calibrate_h(table: PairedDeltaTable, q: float = 0.05, spill_cap: float = 0.2, *,
                w_b: float = 0.25, p_method: str = "bonferroni") -> CalibrationResult:
    target = _target(table.physical("throughput"), "throughput")
    series = table.group("surrogate")
    unknown = set(series) - set(SURROGATES)
    if unknown:
        raise CalibrationError(f"unknown surrogate roles {sorted(unknown)}")
    if not series:
        raise CalibrationError("roles define no surrogate columns")
    strengths, pvals, shrunk = _score(series, target, q, p_method)
    warnings = []
    if all(shrunk.values()):
        msg = "no surrogate survived FDR control; falling back to uniform weights"
        log.warning(msg)
        warnings.append(msg)
        weights = {n: 1.0 / len(series) for n in series}
    else:
        weights = _normalise(strengths, shrunk)

    mem = table.physical("memory")
    thr = table.physical("throughput")
    cross = [abs(float(np.corrcoef(m, t)[0, 1])) for m in mem for t in thr if np.ptp(m) > 0 and np.ptp(t) > 0]
    spill = spill_cap * (float(np.mean(cross)) if cross else 0.0)

    base_name = table.roles.get("baseline")
    volume = table.columns[base_name] if isinstance(base_name, str) else thr[0]
    baseline = blended_strength(volume[1:], volume[:-1], p_method)[0]

    h = {H_KEYS[n]: round((1.0 - w_b) * w, 12) for n, w in weights.items()}
    h.update(kappa_l=spill, kappa_p=spill, kappa_h=spill)
    return CalibrationResult(weights, strengths, pvals, shrunk, spill, baseline, warnings,
                             {"channels": {"h": h}}, "h")


def rebalance(rates: Sequence[float], levels: Sequence[float]) -> tuple[list[float], list[float]]:
    """Scale level weights down so they never outweigh rate weights in total."""
    r, lv = math.fsum(rates), math.fsum(levels)
    if lv > r:
        factor = r / lv
        return list(rates), [x * factor for x in levels]
    return list(rates), list(levels)


def cap_budget(weights: Sequence[float], budget: float) -> list[float]:
    total = math.fsum(weights)
    if total > budget:
        return [w * budget / total for w in weights]
    return list(weights)


def calibrate_m(table: PairedDeltaTable, q: float = 0.05, *, handshake_budget: float = 0.25,
                gamma_ui_cap: float = 0.2, gate_quantile: float = 80.0,
                mixture_target: str = "throughput", p_method: str = "bonferroni") -> CalibrationResult:
    """Memory mixture, handshake budget, UI-churn weight and the composite gate.

    The mixture is scored against throughput by default; pass
    ``mixture_target="memory"`` to score it against memory-pressure deltas.
    """
    thr = _target(table.physical("throughput"), "throughput")
    mem_cols = table.physical("memory")
    if mixture_target == "throughput":
        mix_target = thr
    elif mixture_target == "memory":
        mix_target = _target(mem_cols, "memory")
    else:
        raise CalibrationError(f"unknown mixture target {mixture_target!r}")

    mix = table.group("m_mixture")
    strengths, pvals, shrunk = _score(mix, mix_target, q, p_method)
    weights = _normalise(strengths, shrunk)
    rates, levels = rebalance([weights.get(n, 0.0) for n in RATES], [weights.get(n, 0.0) for n in LEVELS])
    alpha = dict(zip(RATES + LEVELS, rates + levels))
    warnings = []
    if mix and all(shrunk.values()):
        warnings.append("no memory mixture component survived FDR control; gate disabled")

    hs = table.group("handshake")
    hs_s, hs_p, hs_shrunk = _score(hs, thr, q, p_method)
    hs_w = cap_budget([0.0 if hs_shrunk.get(n, True) else hs_s[n] for n in HANDSHAKE], handshake_budget)

    churn = table.group("churn")
    gamma_ui = 0.0
    if churn:
        c_s, c_p, c_shrunk = _score(churn, _target(mem_cols, "memory"), q, p_method)
        survivors = [c_s[n] for n in churn if not c_shrunk[n]]
        gamma_ui = min(max(survivors, default=0.0), gamma_ui_cap)
        strengths.update({f"churn.{n}": v for n, v in c_s.items()})
        pvals.update({f"churn.{n}": v for n, v in c_p.items()})
        shrunk.update({f"churn.{n}": v for n, v in c_shrunk.items()})

    if math.fsum(alpha.values()) > 0:
        tau = float(nearest_rank(_composite(mix, alpha), gate_quantile))
    else:
        tau = 1.0
    strengths.update({f"handshake.{n}": v for n, v in hs_s.items()})
    pvals.update({f"handshake.{n}": v for n, v in hs_p.items()})
    shrunk.update({f"handshake.{n}": v for n, v in hs_shrunk.items()})
    m = {
        "alpha": [alpha[n] for n in MIXTURE],
        "beta_ipc": hs_w[0],
        "beta_wv": hs_w[1],
        "gamma_ui": gamma_ui,
        "tau_mem": tau,
    }
    return CalibrationResult(alpha, strengths, pvals, shrunk, warnings=warnings,
                             fragment={"channels": {"m": m}}, channel="m")


def calibrate_r(table: PairedDeltaTable, q: float = 0.05, *, gate_quantile: float = 80.0,
                p_method: str = "bonferroni") -> CalibrationResult:
    series = table.group("r_corroborator")
    unknown = set(series) - set(MIXTURE)
    if unknown:
        raise CalibrationError(f"unknown corroborator roles {sorted(unknown)}")
    if not series:
        weights = dict(zip(MIXTURE, R_DEFAULT))
        return CalibrationResult(weights, {}, {}, {}, warnings=["no corroborator columns; using defaults"],
                                 fragment={"channels": {"r": {"alpha": list(R_DEFAULT)}}}, channel="r")
    target = _target(table.physical("memory"), "memory")
    strengths, pvals, shrunk = _score(series, target, q, p_method)
    weights = _normalise(strengths, shrunk)
    warnings = []
    r: dict[str, Any] = {"alpha": [weights.get(n, 0.0) for n in MIXTURE]}
    if all(shrunk.values()):
        warnings.append("no corroborator survived FDR control; channel contributes nothing")
        r["tau_mem"] = 1.0
    else:
        r["tau_mem"] = float(nearest_rank(_composite(series, weights), gate_quantile))
    return CalibrationResult({n: weights.get(n, 0.0) for n in MIXTURE}, strengths, pvals, shrunk,
                             warnings=warnings, fragment={"channels": {"r": r}}, channel="r")


def _merge_fragments(*parts: Mapping[str, Any]) -> dict[str, Any]:
    out: dict[str, Any] = {"channels": {}}
    for part in parts:
        out["channels"].update(part.get("channels", {}))
    return out


def calibrate_all(table: PairedDeltaTable, settings: Mapping[str, Any] | None = None,
                  w_b: float = 0.25) -> tuple[dict[str, Any], list[CalibrationResult]]:
    s = dict(settings or {})
    q = float(s.get("q", 0.05))
    results = []
    if table.roles.get("surrogate"):
        results.append(calibrate_h(table, q, float(s.get("spill_cap", 0.2)), w_b=w_b))
    if table.roles.get("m_mixture") or table.roles.get("handshake") or table.roles.get("churn"):
        results.append(calibrate_m(table, q, handshake_budget=float(s.get("handshake_budget", 0.25)),
                                   gamma_ui_cap=float(s.get("gamma_ui_cap", 0.2)),
                                   gate_quantile=float(s.get("gate_quantile", 80.0))))
    results.append(calibrate_r(table, q, gate_quantile=float(s.get("gate_quantile", 80.0))))
    return _merge_fragments(*(r.fragment for r in results)), results


def fragment_toml(fragment: Mapping[str, Any], results: Sequence[CalibrationResult] = ()) -> str:
    lines = ["# generated by `ibalign calibrate`; merge with --config"]
    for res in results:
        for name in sorted(res.p_values):
            flag = "shrunk" if res.shrunk.get(name) else "kept"
            lines.append(f"# {res.channel}.{name}: strength={res.strengths[name]:.4f} p={res.p_values[name]:.4g} {flag}")
        if res.baseline is not None:
            lines.append(f"# baseline traffic anchor: {res.baseline:.4f} (reported only)")
        lines.extend(f"# WARNING: {w}" for w in res.warnings)
    return "\n".join(lines) + "\n" + tomli_w.dumps(fragment)

"""Gain-only BSS-eval: SDR / SIR / SAR from orthogonal projections.

The estimate is split as ``s_target + e_interf + e_artif`` where ``s_target`` is
its projection on the target reference, ``s_target + e_interf`` its projection
on the span of all references, and ``e_artif`` the residual. No distortion
filters are fitted, so only a global gain on the target is forgiven.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import PARTS

CAP_DB = 200.0
CSV_FIELDS = ["mix_id", "model_id", "part", "sdr_db", "sir_db", "sar_db", "infinite_flags"]


class UndefinedMetricError(ValueError):
    pass


@dataclass
class MetricsRecord:
    part: str
    sdr: float
    sir: float
    sar: float
    mix_id: str = ""
    model_id: str = ""

    @property
    def infinite_flags(self) -> list[str]:
        return [k for k in ("sdr", "sir", "sar") if math.isinf(getattr(self, k))]

    def capped(self, metric: str) -> float:
        v = getattr(self, metric)
        return float(np.clip(v, -CAP_DB, CAP_DB))

    def csv_row(self) -> dict:
        return {
            "mix_id": self.mix_id,
            "model_id": self.model_id,
            "part": self.part,
            "sdr_db": f"{self.capped('sdr'):.6f}",
            "sir_db": f"{self.capped('sir'):.6f}",
            "sar_db": f"{self.capped('sar'):.6f}",
            "infinite_flags": "|".join(self.infinite_flags),
        }

    @classmethod
    def from_csv_row(cls, row: dict) -> "MetricsRecord":
        flags = set(filter(None, row.get("infinite_flags", "").split("|")))
        vals = {}
        for k in ("sdr", "sir", "sar"):
            v = float(row[f"{k}_db"])
            vals[k] = math.copysign(math.inf, v) if k in flags else v
        return cls(row["part"], vals["sdr"], vals["sir"], vals["sar"], row["mix_id"], row["model_id"])


def _as_array(x) -> np.ndarray:
    samples = getattr(x, "samples", x)
    return np.asarray(samples, dtype=np.float64)


def decompose(estimate, references: Sequence, target: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    est = _as_array(estimate)
    refs = np.stack([_as_array(r) for r in references])
    if refs.shape[1] != est.shape[0]:
        raise ValueError(f"estimate length {est.shape[0]} != reference length {refs.shape[1]}")
    s = refs[target]
    energy = s @ s
    if energy == 0:
        raise UndefinedMetricError(f"reference {target} has zero energy")
    s_target = (est @ s) / energy * s
    gram = refs @ refs.T
    try:
        coef = np.linalg.solve(gram, refs @ est)
    except np.linalg.LinAlgError:
        coef = np.linalg.lstsq(refs.T, est, rcond=None)[0]
    p_all = coef @ refs
    e_interf = p_all - s_target
    e_artif = est - p_all
    return s_target, e_interf, e_artif


def _ratio_db(num: float, den: float) -> float:
    if den <= num * 10 ** (-CAP_DB / 10):
        return math.inf
    if num == 0:
        return -math.inf
    return 10 * math.log10(num / den)


def sdr_sir_sar(
    estimate, references: Sequence, target: int, part: str | None = None,
    mix_id: str = "", model_id: str = "",
) -> MetricsRecord:
    s_target, e_interf, e_artif = decompose(estimate, references, target)
    e_total = e_interf + e_artif
    sig = s_target @ s_target
    sdr = _ratio_db(sig, e_total @ e_total)
    sir = _ratio_db(sig, e_interf @ e_interf)
    proj = s_target + e_interf
    sar = _ratio_db(proj @ proj, e_artif @ e_artif)
    if part is None:
        part = PARTS[target].label if len(references) == len(PARTS) else str(target)
    return MetricsRecord(part, sdr, sir, sar, mix_id, model_id)


# ---------------------------------------------------------------------------
# reporting

METRICS = ("sdr", "sir", "sar")


def batch_report(records: Sequence[MetricsRecord]) -> dict:
    """Per-part mean / population std of each metric with an ``Avg.`` column,
    and per-part SDR five-number summaries for box plots.

    Infinite values enter the statistics at the +/-200 dB cap.
    """
    if not records:
        raise ValueError("no metrics records to report")
    parts = [p.label for p in PARTS]
    extra = sorted({r.part for r in records} - set(parts))
    parts += extra
    table: dict[str, dict] = {}
    for metric in METRICS:
        row = {}
        means = []
        for part in parts:
            vals = np.array([r.capped(metric) for r in records if r.part == part])
            if vals.size == 0:
                continue
            row[part] = {"mean": float(vals.mean()), "std": float(vals.std()), "n": int(vals.size)}
            means.append(row[part]["mean"])
        row["Avg."] = float(np.mean(means))
        table[metric] = row
    boxplot = {}
    for part in parts:
        vals = np.array([r.capped("sdr") for r in records if r.part == part])
        if vals.size == 0:
            continue
        q = np.percentile(vals, [0, 25, 50, 75, 100])
        boxplot[part] = dict(zip(["min", "q1", "median", "q3", "max"], map(float, q)), n=int(vals.size))
    model_ids = sorted({r.model_id for r in records})
    return {"columns": [p for p in parts if p in table["sdr"]] + ["Avg."],
            "models": model_ids, "table": table, "sdr_boxplot": boxplot}


def write_metrics_csv(path: str | Path, records: Sequence[MetricsRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for r in records:
            writer.writerow(r.csv_row())


def read_metrics_csv(path: str | Path) -> list[MetricsRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected metrics columns {reader.fieldnames}")
        return [MetricsRecord.from_csv_row(row) for row in reader]


def write_report(out_dir: str | Path, report: dict, stem: str = "report") -> tuple[Path, Path]:
    """``<stem>.json`` mirrors the dict; ``<stem>.csv`` has one row per metric
    with ``mean±std`` cells under Soprano, Alto, Tenor, Bass, Avg."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{stem}.json"
    json_path.write_text(json.dumps(report, indent=2, sort_keys=True))
    csv_path = out_dir / f"{stem}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric"] + report["columns"])
        for metric in METRICS:
            row = report["table"][metric]
            cells = [f"{row[c]['mean']:.2f}±{row[c]['std']:.2f}" for c in report["columns"][:-1]]
            writer.writerow([metric.upper()] + cells + [f"{row['Avg.']:.2f}"])
    return json_path, csv_path

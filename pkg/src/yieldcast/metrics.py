"""Evaluation metrics, run reports and plot-ready exports.

"Correlation" throughout is Pearson's r. All metrics expect predictions
and actual yields in physical units (kg/ha).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError, UndefinedCorrelationError


def _pair(pred, actual):
    pred = np.asarray(pred, dtype=float).ravel()
    actual = np.asarray(actual, dtype=float).ravel()
    if pred.shape != actual.shape:
        raise DomainError(f"length mismatch: {pred.size} predictions vs {actual.size} actuals")
    return pred, actual


def pearson(pred, actual) -> float:
    pred, actual = _pair(pred, actual)
    if pred.size < 2:
        raise UndefinedCorrelationError("correlation needs at least two points")
    dp = pred - pred.mean()
    da = actual - actual.mean()
    sp = math.sqrt(float(dp @ dp))
    sa = math.sqrt(float(da @ da))
    if sa == 0:
        raise UndefinedCorrelationError("actual values are constant")
    if sp == 0:
        raise UndefinedCorrelationError("predictions are constant")
    r = float(dp @ da) / (sp * sa)
    return max(-1.0, min(1.0, r))


def mape(pred, actual) -> float:
    """Mean absolute percentage error, in percent."""
    pred, actual = _pair(pred, actual)
    if pred.size == 0:
        raise DomainError("mape of an empty set")
    if np.any(actual == 0):
        raise DomainError("mape undefined: an actual value is zero")
    return float(100.0 * np.mean(np.abs(pred - actual) / np.abs(actual)))


def rmse(pred, actual) -> float:
    pred, actual = _pair(pred, actual)
    if pred.size == 0:
        raise DomainError("rmse of an empty set")
    return float(np.sqrt(np.mean((pred - actual) ** 2)))


@dataclass(frozen=True)
class EvalResult:
    correlation: float
    mape: float
    rmse: float
    n: int

    @classmethod
    def compute(cls, pred, actual) -> "EvalResult":
        pred, actual = _pair(pred, actual)
        return cls(pearson(pred, actual), mape(pred, actual), rmse(pred, actual), int(pred.size))

    def to_dict(self) -> dict:
        return {"correlation": self.correlation, "mape": self.mape, "rmse": self.rmse, "n": self.n}


def config_fingerprint(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class RunReport:
    """Per-run results plus aggregates.

    ``runs`` holds one entry per seed; failed runs are ``None`` and are
    left out of every aggregate. Standard deviations are population
    (``ddof=0``) so a single run reports 0.
    """

    seeds: list
    runs: list
    fingerprint: str = ""
    label: str = ""
    errors: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def completed(self) -> list:
        return [r for r in self.runs if r is not None]

    def _values(self, attr):
        return np.array([getattr(r, attr) for r in self.completed], dtype=float)

    @property
    def mean_correlation(self):
        return float(np.mean(self._values("correlation"))) if self.completed else math.nan

    @property
    def std_correlation(self):
        return float(np.std(self._values("correlation"))) if self.completed else math.nan

    @property
    def mean_mape(self):
        return float(np.mean(self._values("mape"))) if self.completed else math.nan

    @property
    def std_mape(self):
        return float(np.std(self._values("mape"))) if self.completed else math.nan

    @property
    def max_correlation(self):
        return float(np.max(self._values("correlation"))) if self.completed else math.nan

    @property
    def min_mape(self):
        return float(np.min(self._values("mape"))) if self.completed else math.nan

    def aggregates(self) -> dict:
        return {
            "mean_correlation": self.mean_correlation,
            "std_correlation": self.std_correlation,
            "mean_mape": self.mean_mape,
            "std_mape": self.std_mape,
            "max_correlation": self.max_correlation,
            "min_mape": self.min_mape,
            "completed_runs": len(self.completed),
            "failed_runs": len(self.runs) - len(self.completed),
        }

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "fingerprint": self.fingerprint,
            "runs": [{"seed": s, **(r.to_dict() if r is not None else
                                    {"failed": True, "error": self.errors.get(s, "")})}
                     for s, r in zip(self.seeds, self.runs)],
            "aggregates": self.aggregates(),
            "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d) -> "RunReport":
        seeds, runs, errors = [], [], {}
        for item in d["runs"]:
            seeds.append(item["seed"])
            if item.get("failed"):
                runs.append(None)
                errors[item["seed"]] = item.get("error", "")
            else:
                runs.append(EvalResult(item["correlation"], item["mape"], item["rmse"], item["n"]))
        return cls(seeds, runs, d.get("fingerprint", ""), d.get("label", ""), errors,
                   d.get("extra", {}))

    @classmethod
    def load(cls, path) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path):
        Path(path).write_text(self.to_json(), encoding="utf-8")


def scatter_export(pred, actual, keys: Sequence, path):
    """Write ``municipality_id,actual_kg_ha,predicted_kg_ha`` rows."""
    pred, actual = _pair(pred, actual)
    if len(keys) != pred.size:
        raise DomainError("keys and predictions differ in length")
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["municipality_id", "actual_kg_ha", "predicted_kg_ha"])
        for key, a, p in zip(keys, actual, pred):
            mid = key[0] if isinstance(key, tuple) else key
            writer.writerow([mid, repr(float(a)), repr(float(p))])
    return path


def render_table(reports: dict, kind: str = "mean") -> str:
    """Text table of reports keyed by row label (usually the crop).

    ``kind="mean"`` gives mean/std columns, ``kind="best"`` max correlation
    and min MAPE.
    """
    if kind == "mean":
        head = ("Crop", "mu_Cor", "sigma_Cor", "mu_MAPE", "sigma_MAPE")
        rows = [(label, r.mean_correlation, r.std_correlation, r.mean_mape, r.std_mape)
                for label, r in reports.items()]
    elif kind == "best":
        head = ("Crop", "max_Cor", "min_MAPE")
        rows = [(label, r.max_correlation, r.min_mape) for label, r in reports.items()]
    else:
        raise ValueError(f"unknown table kind {kind!r}")
    width = max([len(head[0])] + [len(str(r[0])) for r in rows])
    lines = [f"{head[0]:<{width}}  " + "  ".join(f"{h:>10}" for h in head[1:])]
    for row in rows:
        lines.append(f"{str(row[0]):<{width}}  " + "  ".join(f"{v:>10.3f}" for v in row[1:]))
    return "\n".join(lines)


def compare_reports(with_noise: RunReport, without_noise: RunReport,
                    label: Optional[str] = None) -> str:
    rows = {f"{label or 'run'} (noise)": with_noise, f"{label or 'run'} (no noise)": without_noise}
    return render_table(rows, "mean")

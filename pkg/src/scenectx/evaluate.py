"""ROC/AUC and score densities. Lower scores mean "adversarial"."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import UsageError


@dataclass
class ScoredSet:
    benign: Sequence[float]
    adversarial: Sequence[float]
    meta: dict = field(default_factory=dict)

    def check(self):
        if len(self.benign) == 0 or len(self.adversarial) == 0:
            raise UsageError("both benign and adversarial scores are needed", module="eval")


def roc_curve(scored: ScoredSet) -> list[tuple[float, float, float]]:
    """(threshold, tpr, fpr) rows; an input is flagged when score < threshold.

    Thresholds are a sentinel below the smallest score, every distinct score
    ascending, and a sentinel above the largest.
    """
    scored.check()
    a = np.sort(np.asarray(scored.adversarial, dtype=np.float64))
    b = np.sort(np.asarray(scored.benign, dtype=np.float64))
    distinct = np.unique(np.concatenate([a, b]))
    taus = np.concatenate([[distinct[0] - 1.0], distinct, [distinct[-1] + 1.0]])
    tpr = np.searchsorted(a, taus, side="left") / len(a)
    fpr = np.searchsorted(b, taus, side="left") / len(b)
    return [(float(t), float(p), float(f)) for t, p, f in zip(taus, tpr, fpr)]


def trapezoid_area(curve) -> float:
    fpr = np.array([r[2] for r in curve])
    tpr = np.array([r[1] for r in curve])
    return float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))


def auc(scored: ScoredSet) -> float:
    """Mann-Whitney: P(adversarial score < benign score), ties count one half."""
    scored.check()
    a = np.asarray(scored.adversarial, dtype=np.float64)
    b = np.sort(np.asarray(scored.benign, dtype=np.float64))
    above = len(b) - np.searchsorted(b, a, side="right")
    ties = np.searchsorted(b, a, side="right") - np.searchsorted(b, a, side="left")
    # integer counts keep the numerator exact
    wins2 = 2 * int(above.sum()) + int(ties.sum())
    return wins2 / (2.0 * len(a) * len(b))


def score_density(scores: Sequence[float], n_bins: int = 50) -> list[tuple[float, float, int]]:
    """Equal-width histogram on [0, 1]; the last bin is closed on the right."""
    if len(scores) == 0:
        raise UsageError("no scores to bin", module="eval")
    counts, edges = np.histogram(np.asarray(scores, dtype=np.float64), bins=n_bins, range=(0.0, 1.0))
    return [(float(lo), float(hi), int(c)) for lo, hi, c in zip(edges[:-1], edges[1:], counts)]


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, float) else x for x in r])


def report(metadata: dict, results: Sequence[dict], out_dir, n_bins: int = 50) -> dict:
    """Write metrics.json, roc_<tag>.csv and density_<tag>.csv.

    Each result is {"attack": tag, "scorer": name, "benign": [...], "adversarial": [...]}.
    Density files are written per (scorer, set), benign included.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    densities = {}
    for r in results:
        scored = ScoredSet(r["benign"], r["adversarial"])
        tag = f"{r['scorer']}__{r['attack']}"
        curve = roc_curve(scored)
        _write_csv(out / f"roc_{tag}.csv", ["threshold", "fpr", "tpr"], [(t, f, p) for t, p, f in curve])
        entries.append({
            "attack": r["attack"],
            "scorer": r["scorer"],
            "auc": auc(scored),
            "n_benign": len(scored.benign),
            "n_adversarial": len(scored.adversarial),
        })
        densities[f"{r['scorer']}__{r['attack']}"] = r["adversarial"]
        densities[f"{r['scorer']}__benign"] = r["benign"]
    for tag, scores in sorted(densities.items()):
        _write_csv(out / f"density_{tag}.csv", ["bin_lo", "bin_hi", "count"], score_density(scores, n_bins))
    entries.sort(key=lambda e: (e["attack"], e["scorer"]))
    doc = {"run": metadata, "results": entries}
    (out / "metrics.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return doc

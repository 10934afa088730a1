"""Statistical screening of morphology features against disease labels.

Each feature gets a Kruskal-Wallis H test across label groups (nulls
skipped).  Features are then retained greedily in ascending-p order,
skipping any whose |Spearman rho| with an already retained feature exceeds
the redundancy threshold, until the cap is reached.  A manual allow/deny
list stands in for expert review.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import ConfigError

DEFAULT_CAP = 40
DEFAULT_RHO = 0.95
NULL_LIMIT = 0.30

REPORT_HEADER = (
    "Kruskal-Wallis H test per feature across disease-label groups (non-parametric,\n"
    "multi-group; chosen over ANOVA because morphology features are skewed).\n"
    "p-values are descriptive screening values without multiple-comparison correction."
)


@dataclass
class FeatureRelevance:
    name: str
    statistic: float | None
    p_value: float | None
    group_means: dict
    null_fraction: float
    retained: bool = False
    drop_reason: str = "none"


@dataclass
class FeatureRelevanceReport:
    features: list[FeatureRelevance]
    retained: list[str]
    cap: int
    redundancy_rho: float
    labels: list[str] = field(default_factory=list)
    dataset: str = ""

    def __getitem__(self, name) -> FeatureRelevance:
        for f in self.features:
            if f.name == name:
                return f
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "cap": self.cap,
            "redundancy_rho": self.redundancy_rho,
            "labels": self.labels,
            "retained": self.retained,
            "features": [vars(f) for f in self.features],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False)

    def to_table(self) -> str:
        lines = [REPORT_HEADER, ""]
        if self.dataset:
            lines.append(f"dataset: {self.dataset}")
        lines.append(f"cap: {self.cap}   redundancy |rho| > {self.redundancy_rho}   "
                     f"retained: {len(self.retained)}")
        lines.append("")
        head = f"{'feature':<44} {'H':>10} {'p':>11} {'nulls':>6}  {'kept':<4} reason"
        lines += [head, "-" * len(head)]
        for f in self.features:
            h = "-" if f.statistic is None else f"{f.statistic:10.4f}"
            p = "-" if f.p_value is None else f"{f.p_value:11.4g}"
            lines.append(f"{f.name:<44} {h:>10} {p:>11} {f.null_fraction:6.2f}  "
                         f"{'yes' if f.retained else 'no':<4} {f.drop_reason}")
        return "\n".join(lines) + "\n"


def _as_mapping(v) -> dict:
    return v.values if hasattr(v, "values") and isinstance(v.values, dict) else dict(v)


def _kruskal(groups) -> tuple[float, float]:
    groups = [g for g in groups if len(g)]
    if len(groups) < 2:
        return 0.0, 1.0
    try:
        h, p = stats.kruskal(*groups)
    except ValueError:  # every value identical
        return 0.0, 1.0
    if math.isnan(p):
        return 0.0, 1.0
    return float(h), float(p)


def _spearman(a: np.ndarray, b: np.ndarray) -> float:
    ok = ~(np.isnan(a) | np.isnan(b))
    if ok.sum() < 3:
        return 0.0
    x, y = a[ok], b[ok]
    if np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    rho = stats.spearmanr(x, y).statistic
    return 0.0 if math.isnan(rho) else float(rho)


def rank_features(vectors, labels, cap: int = DEFAULT_CAP, redundancy_rho: float = DEFAULT_RHO,
                  allow=(), deny=(), min_per_label: int = 10, null_limit: float = NULL_LIMIT,
                  dataset: str = "") -> FeatureRelevanceReport:
    """Screen features and pick at most ``cap`` of them.

    ``vectors`` are MorphFeatureVector objects or plain name -> value
    mappings sharing one key order; that order breaks p-value ties.
    Allow-listed features are kept first (still counted against the cap)
    and are exempt from the redundancy check; deny-listed ones are dropped.
    """
    if len(vectors) != len(labels):
        raise ConfigError("vectors and labels differ in length")
    labels = [str(x) for x in labels]
    counts = Counter(labels)
    if len(counts) < 2:
        raise ConfigError("feature selection needs at least two distinct labels")
    small = sorted(k for k, n in counts.items() if n < min_per_label)
    if small:
        raise ConfigError(f"labels with fewer than {min_per_label} samples: {small}")
    if cap < 1:
        raise ConfigError("cap must be positive")

    rows = [_as_mapping(v) for v in vectors]
    names = list(rows[0])
    data = np.array([[np.nan if r.get(n) is None else float(r[n]) for n in names] for r in rows],
                    dtype=float)
    lab = np.array(labels)
    label_order = sorted(counts)
    # first-appearance order keeps H bit-identical under relabeling
    group_order = list(dict.fromkeys(labels))

    entries = []
    for j, name in enumerate(names):
        col = data[:, j]
        nulls = float(np.isnan(col).mean())
        means = {}
        for g in label_order:
            vals = col[(lab == g) & ~np.isnan(col)]
            means[g] = float(vals.mean()) if len(vals) else None
        entry = FeatureRelevance(name, None, None, means, nulls)
        if nulls > null_limit:
            entry.drop_reason = "excessive_nulls"
        else:
            groups = [col[(lab == g) & ~np.isnan(col)] for g in group_order]
            entry.statistic, entry.p_value = _kruskal(groups)
            if name in deny:
                entry.drop_reason = "denied"
        entries.append(entry)

    index = {n: j for j, n in enumerate(names)}
    candidates = [e for e in entries if e.drop_reason == "none"]
    forced = [e for e in candidates if e.name in allow]
    ranked = sorted((e for e in candidates if e.name not in allow),
                    key=lambda e: (e.p_value, index[e.name]))

    retained: list[str] = []
    for e in forced + ranked:
        if len(retained) >= cap:
            e.drop_reason = "high_p"
            continue
        if e.name not in allow:
            col = data[:, index[e.name]]
            clash = next((r for r in retained
                          if abs(_spearman(col, data[:, index[r]])) > redundancy_rho), None)
            if clash is not None:
                e.drop_reason = f"redundant_with:{clash}"
                continue
        e.retained = True
        retained.append(e.name)

    return FeatureRelevanceReport(entries, retained, cap, redundancy_rho, label_order, dataset)


def select_per_dataset(vectors: dict, labels: dict, datasets: dict, **kwargs) -> dict:
    """Run :func:`rank_features` separately for each dataset tag.

    All three arguments are keyed by image id; the result maps dataset tag
    to its report.  Image ids are processed in sorted order.
    """
    by_dataset: dict[str, list[str]] = {}
    for image_id in sorted(vectors):
        by_dataset.setdefault(datasets[image_id], []).append(image_id)
    return {
        name: rank_features([vectors[i] for i in ids], [labels[i] for i in ids],
                            dataset=name, **kwargs)
        for name, ids in sorted(by_dataset.items())
    }

"""Edge-level and co-input comparisons between connectivity matrices."""
from __future__ import annotations

import csv
import io as _io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats

from .estimate import ConnectivityEstimate
from .lif import GroundTruthNetwork

VIEWS = ("true_conn", "co_input", "abs_mag")
METRICS = ("pearson_r2_signed", "spearman_r2_signed", "spectral_dist")


def co_input(a: np.ndarray) -> np.ndarray:
    """Shared-presynaptic-input graph ``A @ A.T`` (presynaptic index in columns)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("co_input expects a square matrix")
    b = a @ a.T
    # symmetrize away rounding from the matmul
    return 0.5 * (b + b.T)


def _offdiag(m: np.ndarray) -> np.ndarray:
    return m[~np.eye(m.shape[0], dtype=bool)]


def correlation(x, y, method: str = "pearson", exclude_diagonal: bool = True) -> float:
    """Plain correlation over (off-diagonal) entries; NaN if either side is constant."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if exclude_diagonal:
        x, y = _offdiag(x), _offdiag(y)
    else:
        x, y = x.ravel(), y.ravel()
    if x.size < 3:
        raise ValueError("need at least 3 entries to correlate")
    if method == "spearman":
        x, y = stats.rankdata(x), stats.rankdata(y)
    elif method != "pearson":
        raise ValueError(f"unknown method {method!r}")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return math.nan
    xc = x - x.mean()
    yc = y - y.mean()
    r = float(xc @ yc / math.sqrt((xc @ xc) * (yc @ yc)))
    return max(-1.0, min(1.0, r))


def signed_r2(x, y, method: str = "pearson", exclude_diagonal: bool = True) -> float:
    """``sign(r) * r**2``; NaN when undefined (zero variance)."""
    r = correlation(x, y, method, exclude_diagonal)
    return math.copysign(r * r, r) if math.isfinite(r) else math.nan


def _spectrum(m: np.ndarray) -> np.ndarray:
    s = np.sort(linalg.svdvals(m - m.mean()))[::-1]
    return s / (s[0] if s[0] > 0 else 1.0)


def spectral_divergence(a, b, k: int | None = None) -> float:
    """Distance between centered, leading-value-normalized singular spectra.

    Invariant to ``A -> alpha * A + c`` for ``alpha > 0``. ``k`` truncates to
    the top-k singular values.
    """
    sa = _spectrum(np.asarray(a, dtype=float))
    sb = _spectrum(np.asarray(b, dtype=float))
    n = min(len(sa), len(sb))
    if k is not None:
        n = min(n, k)
    return float(np.linalg.norm(sa[:n] - sb[:n]))


def build_views(gt, est) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """(truth, estimate) matrix pairs for the signed, co-input and |.| views."""
    a = gt.adjacency if isinstance(gt, GroundTruthNetwork) else getattr(gt, "matrix", gt)
    c = est.matrix if isinstance(est, ConnectivityEstimate) else est
    a = np.asarray(a, dtype=float)
    c = np.asarray(c, dtype=float)
    if a.shape != c.shape:
        raise ValueError(f"shape mismatch: truth {a.shape} vs estimate {c.shape}")
    return {
        "true_conn": (a, c),
        "co_input": (co_input(a), co_input(c)),
        "abs_mag": (np.abs(a), np.abs(c)),
    }


@dataclass
class MetricReport:
    """``scores[estimator][view][metric]``; NaN marks an undefined metric."""

    scores: dict
    meta: dict = field(default_factory=dict)

    def cell(self, estimator: str, view: str, metric: str) -> float:
        return self.scores[estimator][view][metric]

    def n_cells(self) -> int:
        return sum(len(m) for v in self.scores.values() for m in v.values())

    def to_json(self) -> dict:
        def clean(x):
            if isinstance(x, dict):
                return {k: clean(v) for k, v in x.items()}
            return None if isinstance(x, float) and not math.isfinite(x) else x
        return {"scores": clean(self.scores), "meta": self.meta}

    @classmethod
    def from_json(cls, obj: dict) -> "MetricReport":
        def unclean(x):
            if isinstance(x, dict):
                return {k: unclean(v) for k, v in x.items()}
            return math.nan if x is None else x
        return cls(unclean(obj["scores"]), obj.get("meta", {}))

    def to_csv(self) -> str:
        """One row per estimator, columns ``view:metric`` in table order."""
        buf = _io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = [f"{v}:{m}" for v in VIEWS for m in METRICS]
        w.writerow(["estimator"] + cols)
        for est, views in self.scores.items():
            row = [est]
            for v in VIEWS:
                for m in METRICS:
                    x = views.get(v, {}).get(m, math.nan)
                    row.append("" if not math.isfinite(x) else repr(float(x)))
            w.writerow(row)
        return buf.getvalue()

    def table(self) -> str:
        head = f"{'':12s}" + "".join(f"{v:>30s}" for v in VIEWS)
        sub = f"{'':12s}" + "".join(f"{'pearson':>10s}{'spearman':>10s}{'spectral':>10s}" for _ in VIEWS)
        lines = [head, sub]
        for est, views in self.scores.items():
            cells = "".join(f"{views[v][m]:>10.3f}" for v in VIEWS for m in METRICS)
            lines.append(f"{est:12s}{cells}")
        return "\n".join(lines)


def compare(gt, estimates, names: list[str] | None = None, k: int | None = None) -> MetricReport:
    """Score each estimate against ground truth in all three views."""
    if isinstance(estimates, ConnectivityEstimate):
        estimates = [estimates]
    if not estimates:
        raise ValueError("need at least one estimate")
    names = names or [e.source for e in estimates]
    scores, plain = {}, {}
    for name, est in zip(names, estimates):
        scores[name], plain[name] = {}, {}
        for view, (x, y) in build_views(gt, est).items():
            scores[name][view] = {
                "pearson_r2_signed": signed_r2(x, y, "pearson"),
                "spearman_r2_signed": signed_r2(x, y, "spearman"),
                "spectral_dist": spectral_divergence(x, y, k),
            }
            plain[name][view] = {"pearson_r": correlation(x, y, "pearson"),
                                 "spearman_r": correlation(x, y, "spearman")}
    n = build_views(gt, estimates[0])["true_conn"][0].shape[0]
    meta = {"n": n, "plain_r": plain,
            "estimates": {nm: e.meta for nm, e in zip(names, estimates)}}
    return MetricReport(scores, meta)

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io

SOURCES = ("glm", "transformer", "ground_truth")


@dataclass
class ConnectivityEstimate:
    """N x N directed estimate, row = postsynaptic, column = presynaptic."""

    matrix: np.ndarray
    source: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        if self.matrix.ndim != 2 or self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError(f"estimate must be square, got {self.matrix.shape}")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("estimate has non-finite entries")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def save(self, path) -> None:
        path = Path(path)
        io.save_matrix(path, self.matrix)
        io.write_json(path.with_suffix(".json"), {"source": self.source, "meta": self.meta})

    @classmethod
    def load(cls, path) -> "ConnectivityEstimate":
        path = Path(path)
        side = path.with_suffix(".json")
        info = io.read_json(side) if side.exists() else {"source": "ground_truth", "meta": {}}
        return cls(io.load_matrix(path), info["source"], info.get("meta", {}))


def ensemble_average(estimates: list[ConnectivityEstimate]) -> ConnectivityEstimate:
    """Entrywise mean of estimates from independently trained models."""
    if not estimates:
        raise ValueError("need at least one estimate")
    shape = estimates[0].matrix.shape
    source = estimates[0].source
    for e in estimates:
        if e.matrix.shape != shape:
            raise ValueError(f"shape mismatch: {e.matrix.shape} vs {shape}")
        if e.source != source:
            raise ValueError("cannot average estimates from different sources")
    # sum in a canonical order so the result does not depend on list order
    mats = sorted((e.matrix for e in estimates), key=lambda m: m.tobytes())
    mean = np.mean(np.stack(mats), axis=0)
    seeds = sorted(s for e in estimates for s in e.meta.get("seeds", [e.meta.get("seed")]) if s is not None)
    return ConnectivityEstimate(mean, source, {"seeds": seeds, "n_models": len(estimates)})

"""CSV and tensor file formats shared by all stages.

Matrices: plain CSV, row ``i`` = postsynaptic, column ``j`` = presynaptic,
full N x N including zeros, no header.
Spikes: header ``time_ms,neuron``, times with 4 decimals.
Tokens: header ``neuron,dt_ms``.
Tensors: ``.npz`` holding ``data`` plus a JSON ``header`` with shape and
free-form metadata; shape is checked on load.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .lif import SpikeTrain
from .spikes import BinnedSpikes, TokenSequence


def save_matrix(path, m: np.ndarray) -> None:
    np.savetxt(path, np.asarray(m, dtype=float), delimiter=",", fmt="%.17g")


def load_matrix(path) -> np.ndarray:
    m = np.loadtxt(path, delimiter=",", ndmin=2)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"{path}: expected a square matrix, got {m.shape}")
    return m


def save_spikes(path, train: SpikeTrain) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# n={train.n} duration_ms={train.duration_ms:.4f}\n")
        f.write("time_ms,neuron\n")
        for t, i in zip(train.times.tolist(), train.neurons.tolist()):
            f.write(f"{t:.4f},{i}\n")


def load_spikes(path, n: int | None = None, duration_ms: float | None = None) -> SpikeTrain:
    meta = {}
    rows = []
    with open(path) as f:
        for line in f:
            if line.startswith("#"):
                meta.update(kv.split("=") for kv in line[1:].split())
                continue
            rows.append(line)
    reader = csv.DictReader(rows)
    if reader.fieldnames != ["time_ms", "neuron"]:
        raise ValueError(f"{path}: header must be time_ms,neuron")
    data = [(float(r["time_ms"]), int(r["neuron"])) for r in reader]
    times = np.array([d[0] for d in data], dtype=float)
    neurons = np.array([d[1] for d in data], dtype=np.int64)
    n = n if n is not None else int(meta.get("n", neurons.max() + 1 if len(neurons) else 0))
    if duration_ms is None:
        duration_ms = float(meta["duration_ms"]) if "duration_ms" in meta else float(times.max(initial=0.0))
    return SpikeTrain(times, neurons, duration_ms=duration_ms, n=n)


def save_binned(path, b: BinnedSpikes) -> None:
    # entries are 0/1, so each row is a fixed-width byte pattern "d,d,...,d\n"
    y = np.asarray(b.y, dtype=np.uint8)
    if y.size and y.max() > 1:
        raise ValueError("binned matrix must be binary")
    t, n = y.shape
    buf = np.full((t, 2 * n), ord(","), dtype=np.uint8)
    buf[:, 0::2] = y + ord("0")
    buf[:, -1] = ord("\n")
    with open(path, "wb") as f:
        f.write(f"# bin_ms={b.bin_ms!r} n={n}\n".encode())
        f.write(buf.tobytes())


def load_binned(path) -> BinnedSpikes:
    raw = Path(path).read_bytes()
    head, _, body = raw.partition(b"\n")
    meta = dict(kv.split("=") for kv in head.decode().lstrip("# ").split())
    n = int(meta["n"])
    arr = np.frombuffer(body, dtype=np.uint8)
    if arr.size % (2 * n):
        raise ValueError(f"{path}: body is not a whole number of {n}-column rows")
    rows = arr.reshape(-1, 2 * n)
    y = rows[:, 0::2] - ord("0")
    if y.size and y.max() > 1:
        raise ValueError(f"{path}: entries must be 0 or 1")
    return BinnedSpikes(y=np.ascontiguousarray(y), bin_ms=float(meta["bin_ms"]), n=n)


def save_tokens(path, seq: TokenSequence) -> None:
    with open(path, "w") as f:
        f.write(f"# n={seq.n} start_ms={seq.start_ms!r}\n")
        f.write("neuron,dt_ms\n")
        for i, dt in zip(seq.neurons.tolist(), seq.dt_ms.tolist()):
            f.write(f"{i},{dt!r}\n")


def load_tokens(path) -> TokenSequence:
    with open(path) as f:
        meta = dict(kv.split("=") for kv in f.readline()[1:].split())
    arr = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    return TokenSequence(arr[:, 0].astype(np.int64), arr[:, 1], n=int(meta["n"]),
                         start_ms=float(meta["start_ms"]))


def save_tensor(path, data: np.ndarray, **meta) -> None:
    data = np.asarray(data)
    header = json.dumps({"shape": list(data.shape), "dtype": str(data.dtype), **meta})
    with open(path, "wb") as f:
        np.savez(f, data=data, header=np.array(header))


def load_tensor(path, shape: tuple | None = None):
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        data = z["data"]
    if list(data.shape) != header["shape"]:
        raise ValueError(f"{path}: stored shape {data.shape} disagrees with header {header['shape']}")
    if shape is not None and tuple(data.shape) != tuple(shape):
        raise ValueError(f"{path}: expected shape {tuple(shape)}, got {data.shape}")
    return data, header


def write_pgm(path, m: np.ndarray, symmetric: bool = True) -> None:
    """Grayscale heatmap (binary PGM). Zero maps to mid-gray when ``symmetric``."""
    m = np.asarray(m, dtype=float)
    if symmetric:
        s = np.abs(m).max() or 1.0
        img = (m / s + 1.0) * 127.5
    else:
        lo, hi = m.min(), m.max()
        img = (m - lo) / ((hi - lo) or 1.0) * 255.0
    img = np.clip(np.round(img), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
        f.write(img.tobytes())


def read_json(path):
    return json.loads(Path(path).read_text())


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")

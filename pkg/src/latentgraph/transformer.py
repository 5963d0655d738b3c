"""Small causal transformer over (neuron id, ISI) tokens and attention aggregation.

Token ``k`` is embedded as ``e[n_k] + u(dt_k)`` where ``u`` is a fixed bank of
sine/cosine features at geometrically spaced periods. Each block applies
strictly causal multi-head attention (position ``k`` sees keys ``j < k``),
then ``LayerNorm(x + attn)`` followed by ``x + MLP(x)``. Two softmax heads
predict the next token's neuron id and its quantized interval.

Position 0 has no admissible key; its attention row is defined as all zeros
and it is excluded from aggregation.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .estimate import ConnectivityEstimate

log = logging.getLogger(__name__)

# fixed-point resolution for accumulated attention mass; integer sums are
# exact, so aggregation is independent of sharding and summation order
FIXED_POINT = 2.0 ** 32


@dataclass
class TransformerConfig:
    vocab: int = 50
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    seq_len: int = 64
    dt_bins: int = 32
    dt_min_ms: float = 0.1
    dt_max_ms: float = 100.0
    period_min_ms: float = 1.0
    period_max_ms: float = 10_000.0
    mlp_ratio: int = 4
    dropout: float = 0.1
    lr: float = 1e-3
    batch: int = 64
    epochs: int = 10
    loss_weights: tuple = (1.0, 1.0)

    def __post_init__(self):
        self.loss_weights = tuple(self.loss_weights)
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.d_model % 2:
            raise ValueError("d_model must be even for the sin/cos embedding")
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        if self.dt_bins < 2:
            raise ValueError("dt_bins must be >= 2")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        d = asdict(self)
        d["loss_weights"] = list(self.loss_weights)
        return d


def interval_edges(cfg: TransformerConfig) -> np.ndarray:
    """``dt_bins - 1`` log-spaced edges; bin 0 also holds dt = 0."""
    return np.geomspace(cfg.dt_min_ms, cfg.dt_max_ms, cfg.dt_bins - 1)


def quantize_intervals(dt_ms, cfg: TransformerConfig) -> np.ndarray:
    return np.digitize(np.asarray(dt_ms), interval_edges(cfg)).astype(np.int64)


class FourierTime(nn.Module):
    """Fixed sin/cos features of an interval at ``d/2`` geometric periods."""

    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        periods = np.geomspace(cfg.period_min_ms, cfg.period_max_ms, cfg.d_model // 2)
        self.register_buffer("omega", torch.tensor(2 * np.pi / periods))

    def forward(self, dt):
        ang = dt[..., None].to(self.omega.dtype) * self.omega
        return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


def causal_mask(t: int, device=None) -> torch.Tensor:
    """Boolean (T, T), True where key ``j`` is admissible for query ``k`` (j < k)."""
    return torch.ones(t, t, dtype=torch.bool, device=device).tril(-1)


def masked_attention(q, k, v, allowed):
    """Softmax(QK^T / sqrt(d_h)) restricted to ``allowed``; empty rows are zero.

    Returns ``(weights, output)``; shapes ``(..., T, T)`` and ``(..., T, d_h)``.
    """
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1])
    scores = scores.masked_fill(~allowed, float("-inf"))
    has_key = allowed.any(dim=-1, keepdim=True)
    scores = torch.where(has_key, scores, torch.zeros_like(scores))
    a = torch.softmax(scores, dim=-1) * has_key
    return a, a @ v


class CausalSelfAttention(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        d = cfg.d_model
        self.n_heads = cfg.n_heads
        self.qkv = nn.Linear(d, 3 * d, bias=False)
        self.proj = nn.Linear(d, d)
        self.attn_drop = nn.Dropout(cfg.dropout)
        self.resid_drop = nn.Dropout(cfg.dropout)

    def forward(self, x):
        b, t, d = x.shape
        q, k, v = self.qkv(x).split(d, dim=-1)
        shape = (b, t, self.n_heads, d // self.n_heads)
        q, k, v = (z.view(shape).transpose(1, 2) for z in (q, k, v))
        allowed = causal_mask(t, x.device)
        a, _ = masked_attention(q, k, v, allowed)
        out = self.attn_drop(a) @ v
        out = out.transpose(1, 2).reshape(b, t, d)
        return self.resid_drop(self.proj(out)), a


class Block(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        d = cfg.d_model
        self.attn = CausalSelfAttention(cfg)
        self.ln = nn.LayerNorm(d)
        self.mlp = nn.Sequential(
            nn.Linear(d, cfg.mlp_ratio * d), nn.GELU(),
            nn.Linear(cfg.mlp_ratio * d, d), nn.Dropout(cfg.dropout))

    def forward(self, x):
        o, a = self.attn(x)
        x = self.ln(x + o)
        return x + self.mlp(x), a


class SpikeTransformer(nn.Module):
    def __init__(self, cfg: TransformerConfig):
        super().__init__()
        self.cfg = cfg
        self.tok = nn.Embedding(cfg.vocab, cfg.d_model)
        self.time = FourierTime(cfg)
        self.drop = nn.Dropout(cfg.dropout)
        self.blocks = nn.ModuleList(Block(cfg) for _ in range(cfg.n_layers))
        self.head_neuron = nn.Linear(cfg.d_model, cfg.vocab)
        self.head_interval = nn.Linear(cfg.d_model, cfg.dt_bins)
        nn.init.normal_(self.tok.weight, std=0.02)

    def embed(self, neurons, dt):
        if int(neurons.max()) >= self.cfg.vocab or int(neurons.min()) < 0:
            raise ValueError(f"neuron id outside vocabulary of {self.cfg.vocab}")
        return self.tok(neurons) + self.time(dt).to(self.tok.weight.dtype)

    def forward(self, neurons, dt, return_attention: bool = False):
        if neurons.shape[-1] > self.cfg.seq_len:
            raise ValueError(f"window of {neurons.shape[-1]} exceeds seq_len {self.cfg.seq_len}")
        x = self.drop(self.embed(neurons, dt))
        attn = []
        for blk in self.blocks:
            x, a = blk(x)
            attn.append(a)
        out = (self.head_neuron(x), self.head_interval(x))
        return (*out, attn) if return_attention else out

    def loss(self, neurons, dt, dt_class):
        """Weighted sum of next-id and next-interval cross-entropies (mean over positions)."""
        ln, lt = self(neurons, dt)
        wn, wt = self.cfg.loss_weights
        ce_n = F.cross_entropy(ln[:, :-1].reshape(-1, ln.shape[-1]), neurons[:, 1:].reshape(-1))
        ce_t = F.cross_entropy(lt[:, :-1].reshape(-1, lt.shape[-1]), dt_class[:, 1:].reshape(-1))
        return wn * ce_n + wt * ce_t, ce_n, ce_t


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    val_neuron_loss: list = field(default_factory=list)


@dataclass
class Checkpoint:
    cfg: TransformerConfig
    state: dict  # name -> np.ndarray
    seed: int
    history: TrainHistory

    def model(self, dtype=torch.float32) -> SpikeTransformer:
        m = SpikeTransformer(self.cfg).to(dtype)
        m.load_state_dict({k: torch.as_tensor(v).to(dtype) if v.dtype.kind == "f" else torch.as_tensor(v)
                           for k, v in self.state.items()})
        m.eval()
        return m

    def save(self, path) -> None:
        header = {"config": self.cfg.to_dict(), "seed": self.seed,
                  "shapes": {k: list(v.shape) for k, v in self.state.items()},
                  "history": asdict(self.history)}
        with open(path, "wb") as f:
            np.savez(f, __header__=np.array(json.dumps(header)), **self.state)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with np.load(path, allow_pickle=False) as z:
            header = json.loads(str(z["__header__"]))
            state = {k: z[k] for k in z.files if k != "__header__"}
        for k, shape in header["shapes"].items():
            if k not in state or list(state[k].shape) != shape:
                raise ValueError(f"{path}: tensor {k} missing or misshapen (expected {shape})")
        cfg = TransformerConfig(**header["config"])
        return cls(cfg, state, header["seed"], TrainHistory(**header["history"]))


def _as_tensors(neurons, dt, cfg):
    n = torch.as_tensor(np.asarray(neurons), dtype=torch.long)
    d = torch.as_tensor(np.asarray(dt), dtype=torch.float32)
    c = torch.as_tensor(quantize_intervals(dt, cfg))
    return n, d, c


@torch.no_grad()
def evaluate(model: SpikeTransformer, neurons, dt, batch: int = 256) -> tuple[float, float]:
    """Mean (total, neuron-only) loss over windows."""
    model.eval()
    n, d, c = _as_tensors(neurons, dt, model.cfg)
    tot = nrn = 0.0
    for s in range(0, len(n), batch):
        loss, ce_n, _ = model.loss(n[s:s + batch], d[s:s + batch].to(model.tok.weight.dtype), c[s:s + batch])
        w = len(n[s:s + batch])
        tot += loss.item() * w
        nrn += ce_n.item() * w
    return tot / max(len(n), 1), nrn / max(len(n), 1)


def train_transformer(train_windows, cfg: TransformerConfig, seed: int = 0,
                      val_windows=None) -> Checkpoint:
    """Adam at a fixed learning rate over shuffled mini-batches of windows.

    ``train_windows`` and ``val_windows`` are ``(neurons, dt_ms)`` array pairs
    of shape ``(n_windows, seq_len)``.
    """
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    model = SpikeTransformer(cfg)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    n, d, c = _as_tensors(*train_windows, cfg)
    if len(n) == 0:
        raise ValueError("no training windows")
    hist = TrainHistory()
    for epoch in range(cfg.epochs):
        model.train()
        order = torch.randperm(len(n), generator=gen)
        total = 0.0
        for s in range(0, len(n), cfg.batch):
            idx = order[s:s + cfg.batch]
            loss, _, _ = model.loss(n[idx], d[idx], c[idx])
            if not torch.isfinite(loss):
                raise FloatingPointError(f"transformer loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        hist.train_loss.append(total / len(n))
        if val_windows is not None and len(val_windows[0]):
            vl, vn = evaluate(model, *val_windows)
            hist.val_loss.append(vl)
            hist.val_neuron_loss.append(vn)
        log.info("seed %d epoch %d train %.4f val %s", seed, epoch, hist.train_loss[-1],
                 hist.val_loss[-1] if hist.val_loss else "-")
    state = {k: v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    return Checkpoint(cfg, state, seed, hist)


class AggregationState:
    """Running sums of attention mass ``N_a`` and causal pair counts ``N_z``.

    ``n_a`` is kept in integer fixed point (resolution 2**-32) so that adding
    shards in any grouping or order gives bit-identical totals.
    """

    def __init__(self, n: int):
        self.n = n
        self._n_a = np.zeros((n, n), dtype=np.int64)
        self.n_z = np.zeros((n, n), dtype=np.int64)

    @property
    def n_a(self) -> np.ndarray:
        return self._n_a / FIXED_POINT

    def add(self, neurons, attention) -> None:
        """Accumulate one or more sequences.

        ``neurons``: (S, T) ids. ``attention``: (S, K, T, T) row-stochastic
        maps, K = every (model, layer, head) combination being summed.
        """
        neurons = np.atleast_2d(np.asarray(neurons))
        attention = np.asarray(attention, dtype=np.float64)
        if attention.ndim == 3:
            attention = attention[:, None]
        s, t = neurons.shape
        if neurons.max() >= self.n:
            raise ValueError(f"neuron id {neurons.max()} outside vocabulary of {self.n}")
        r = np.zeros((s, t, self.n))
        r[np.arange(s)[:, None], np.arange(t)[None, :], neurons] = 1.0
        a_sum = attention.sum(axis=1)  # (S, T, T)
        mass = r.transpose(0, 2, 1) @ a_sum @ r
        # quantize per sequence, then sum integers
        self._n_a += np.rint(mass * FIXED_POINT).astype(np.int64).sum(axis=0)
        causal = np.tril(np.ones((t, t)), -1)
        pairs = (r.transpose(0, 2, 1) @ causal @ r).sum(axis=0)
        self.n_z += np.rint(pairs).astype(np.int64) * attention.shape[1]

    def merge(self, other: "AggregationState") -> "AggregationState":
        if other.n != self.n:
            raise ValueError("cannot merge states of different size")
        out = AggregationState(self.n)
        out._n_a = self._n_a + other._n_a
        out.n_z = self.n_z + other.n_z
        return out

    __add__ = merge

    def connectivity(self) -> np.ndarray:
        """``N_a / N_z`` entrywise, 0 where the pair never occurred."""
        n_a = self.n_a
        return np.divide(n_a, self.n_z, out=np.zeros_like(n_a), where=self.n_z > 0)

    def unobserved(self) -> np.ndarray:
        return self.n_z == 0


@torch.no_grad()
def record_attention(model: SpikeTransformer, neurons, dt, heads=None) -> np.ndarray:
    """(S, L*H', T, T) attention maps in eval mode for the given windows.

    Sequences are run one at a time so each map is independent of how the
    data are batched or sharded.
    """
    model.eval()
    out = []
    dtype = model.tok.weight.dtype
    for s in range(len(neurons)):
        n = torch.as_tensor(np.asarray(neurons[s:s + 1]), dtype=torch.long)
        d = torch.as_tensor(np.asarray(dt[s:s + 1]), dtype=dtype)
        _, _, attn = model(n, d, return_attention=True)
        a = torch.stack(attn, dim=1)[0]  # (L, H, T, T)
        if heads is not None:
            a = a[:, list(heads)]
        out.append(a.reshape(-1, *a.shape[-2:]).double().numpy())
    return np.stack(out) if out else np.empty((0, 0, 0, 0))


def aggregate_attention(models, windows, heads=None, state: AggregationState | None = None) -> AggregationState:
    """Accumulate ``N_a`` and ``N_z`` over every model, window, layer and head."""
    neurons, dt = windows
    if len(neurons) == 0:
        raise ValueError("no sequences to aggregate")
    if not models:
        raise ValueError("need at least one model")
    models = [m.model() if isinstance(m, Checkpoint) else m for m in models]
    n = models[0].cfg.vocab
    for m in models:
        if m.cfg.vocab != n:
            raise ValueError("models disagree on vocabulary size")
    if np.max(neurons) >= n:
        raise ValueError(f"data contain neuron ids >= model vocabulary {n}")
    state = state or AggregationState(n)
    for m in models:
        for s in range(0, len(neurons), 256):
            a = record_attention(m, neurons[s:s + 256], dt[s:s + 256], heads)
            state.add(neurons[s:s + 256], a)
    return state


def attention_connectivity(models, windows, heads=None, meta: dict | None = None) -> ConnectivityEstimate:
    state = aggregate_attention(models, windows, heads)
    seeds = [m.seed for m in models if isinstance(m, Checkpoint)]
    info = {"seeds": seeds, "n_models": len(models), "unobserved_pairs": int(state.unobserved().sum())}
    info.update(meta or {})
    return ConnectivityEstimate(state.connectivity(), "transformer", info)

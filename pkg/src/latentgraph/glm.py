"""Logistic point-process GLM with raised-cosine coupling filters.

For postsynaptic neuron ``i`` the spike probability in bin ``t`` is

    lam[t, i] = sigmoid(h[i] + sum_{j,b} W[i, j, b] * X[t, j, b])

with ``X[t, j, b] = sum_{s<t} Y[s, j] * phi_b(t - s)``. After fitting, the
filters ``k_ij(tau) = sum_b W[i, j, b] phi_b(tau)`` are reduced to one signed
scalar per pair (the value of largest magnitude, positive on ties).
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit

from .estimate import ConnectivityEstimate
from .spikes import BinnedSpikes

log = logging.getLogger(__name__)

EPS = 1e-12


@dataclass
class BasisSet:
    phi: np.ndarray  # (B, L); phi[b, tau - 1] for tau = 1..L
    centers: np.ndarray
    width: float
    stretch: float

    @property
    def b_count(self) -> int:
        return self.phi.shape[0]

    @property
    def window(self) -> int:
        return self.phi.shape[1]


@dataclass
class GlmWeights:
    w: np.ndarray  # (N, N, B)
    bias: np.ndarray  # (N,)

    @property
    def n(self) -> int:
        return self.bias.shape[0]

    def flat(self) -> np.ndarray:
        """(N, N*B) matrix acting on design-matrix columns."""
        return self.w.reshape(self.n, -1)

    def copy(self) -> "GlmWeights":
        return GlmWeights(self.w.copy(), self.bias.copy())


@dataclass
class TrainConfig:
    optimizer: str = "gd"  # "gd" or "adam"
    lr: float = 1e-3
    max_epochs: int = 20_000
    lr_patience: int = 20
    lr_factor: float = 0.1
    min_lr: float = 1e-5
    patience: int = 100
    min_delta: float = 1e-6
    loss: str = "bernoulli"  # or "hazard"
    standardize: bool = True
    val_fraction: float = 0.2

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    weights: GlmWeights
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    best_epoch: int = 0


class GlmDivergenceError(FloatingPointError):
    def __init__(self, epoch: int):
        super().__init__(f"GLM loss became non-finite at epoch {epoch}")
        self.epoch = epoch


def raised_cosine_basis(b_count: int = 5, window_bins: int = 50, stretch: float = 1.0) -> BasisSet:
    """Log-stretched raised-cosine bumps tiling lags ``1..window_bins``.

    Time is warped as ``g(tau) = log(tau + stretch)``; centers are evenly
    spaced in ``g`` from ``g(1)`` to ``g(L)`` and each bump has half-width
    twice the center spacing, so neighbouring bumps overlap and sum to a
    flat two away from the outermost centers.
    """
    if b_count < 1:
        raise ValueError("b_count must be >= 1")
    if window_bins < b_count:
        raise ValueError(f"window_bins ({window_bins}) must be >= b_count ({b_count})")
    if stretch <= 0:
        raise ValueError("stretch must be positive")
    tau = np.arange(1, window_bins + 1, dtype=float)
    g = np.log(tau + stretch)
    if b_count == 1:
        # sit on a grid lag so the single bump has exactly one maximum
        mid = 0.5 * (g[0] + g[-1])
        centers = g[[int(np.argmin(np.abs(g - mid)))]]
        width = max(g[-1] - centers[0], centers[0] - g[0], 1e-12) * 1.0001
    else:
        centers = np.linspace(g[0], g[-1], b_count)
        width = 2.0 * (centers[1] - centers[0])
    arg = (g[None, :] - centers[:, None]) / width
    phi = np.where(np.abs(arg) <= 1.0, 0.5 * (1.0 + np.cos(np.pi * arg)), 0.0)
    peaks = phi.argmax(axis=1)
    if np.any(np.diff(peaks) <= 0):
        raise ValueError(f"window of {window_bins} bins cannot separate {b_count} basis peaks")
    return BasisSet(phi=phi, centers=centers, width=width, stretch=stretch)


def build_design_matrix(y: BinnedSpikes | np.ndarray, basis: BasisSet, dtype=np.float64) -> np.ndarray:
    """(T, N*B) strictly causal history features, column ``j*B + b``."""
    y = y.y if isinstance(y, BinnedSpikes) else np.asarray(y)
    t_bins, n = y.shape
    yf = y.astype(np.float64)
    x = np.empty((t_bins, n, basis.b_count), dtype=dtype)
    for b in range(basis.b_count):
        # FIR taps: lag 0 gets zero weight so only s < t contributes
        taps = np.concatenate([[0.0], basis.phi[b]])
        x[:, :, b] = lfilter(taps, [1.0], yf, axis=0)
    return x.reshape(t_bins, n * basis.b_count)


def _probs(weights: GlmWeights, x: np.ndarray) -> np.ndarray:
    # matmul in the design matrix dtype (float32 designs halve the cost)
    eta = (x @ weights.flat().T.astype(x.dtype, copy=False)).astype(np.float64)
    return expit(eta + weights.bias[None, :])


def _loss_and_dldeta(lam, y, loss, bin_ms):
    clipped = np.clip(lam, EPS, 1 - EPS)
    live = (lam == clipped)
    if loss == "bernoulli":
        val = -np.sum(y * np.log(clipped) + (1 - y) * np.log1p(-clipped))
        grad = np.where(live, lam - y, 0.0)
    elif loss == "hazard":
        dt = bin_ms / 1000.0
        val = -np.sum(y * (np.log(clipped) - clipped * dt))
        # d/deta of y*(log lam - lam*dt), with dlam/deta = lam(1 - lam)
        grad = np.where(live, -y * ((1 - lam) - dt * lam * (1 - lam)), 0.0)
    else:
        raise ValueError(f"unknown loss {loss!r}")
    return val, grad


def glm_negative_log_likelihood(weights: GlmWeights, x: np.ndarray, y: BinnedSpikes | np.ndarray,
                                bin_ms: float = 1.0, loss: str = "bernoulli",
                                return_grad: bool = False):
    """Summed negative log-likelihood over bins and neurons.

    ``loss="bernoulli"`` is ``-sum[Y log lam + (1-Y) log(1-lam)]``;
    ``loss="hazard"`` is ``-sum Y [log lam - lam dt]`` with ``dt`` in seconds.
    With ``return_grad`` also returns a :class:`GlmWeights` holding the
    gradient. Probabilities are clamped to ``[1e-12, 1 - 1e-12]``.
    """
    yy = y.y if isinstance(y, BinnedSpikes) else np.asarray(y)
    yy = yy.astype(np.float64)
    lam = _probs(weights, x)
    val, g_eta = _loss_and_dldeta(lam, yy, loss, bin_ms)
    if not return_grad:
        return val
    gw = (g_eta.T.astype(x.dtype) @ x).astype(np.float64).reshape(weights.w.shape)
    return val, GlmWeights(gw, g_eta.sum(axis=0))


class _Adam:
    def __init__(self, b1=0.9, b2=0.999, eps=1e-7):
        self.b1, self.b2, self.eps = b1, b2, eps
        self.m = self.v = None
        self.t = 0

    def step(self, params, grads, lr):
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1 ** self.t)
            vhat = v / (1 - self.b2 ** self.t)
            p -= lr * mhat / (np.sqrt(vhat) + self.eps)


def fit_glm(x_train, y_train, x_val=None, y_val=None, cfg: TrainConfig | None = None,
            bin_ms: float = 1.0, b_count: int | None = None, init: GlmWeights | None = None) -> FitResult:
    """Full-batch descent on the per-bin mean loss with plateau LR decay.

    The learning rate drops by ``lr_factor`` after ``lr_patience`` epochs
    without validation improvement (never below ``min_lr``); training stops
    after ``patience`` such epochs and the best-validation weights are
    returned. Without validation data the training loss is monitored.

    With ``cfg.standardize`` the descent runs in coordinates where every
    design column has zero mean and unit variance over the training set
    (``W = W' / s``, ``h = h' - W mu``). The likelihood and its minimizers are
    unchanged; only the conditioning of the descent improves.
    """
    cfg = cfg or TrainConfig()
    y_train = np.asarray(y_train, dtype=np.float64)
    n = y_train.shape[1]
    nb = x_train.shape[1]
    if b_count is None:
        b_count = nb // n
    if nb != n * b_count:
        raise ValueError("design matrix width is not N*B")
    has_val = x_val is not None and y_val is not None and len(y_val) > 0
    if has_val:
        y_val = np.asarray(y_val, dtype=np.float64)
    t_train = len(y_train)

    if cfg.standardize:
        mu = x_train.mean(axis=0, dtype=np.float64)
        sd = x_train.std(axis=0, dtype=np.float64)
        sd[sd == 0] = 1.0
    else:
        mu, sd = np.zeros(nb), np.ones(nb)
    if init is None:
        u, c = np.zeros((n, nb)), np.zeros(n)
    else:
        u = init.flat() * sd[None, :]
        c = init.bias + init.flat() @ mu

    def effective():
        w = u / sd[None, :]
        return GlmWeights(w.reshape(n, n, b_count).copy(), c - w @ mu)

    if cfg.optimizer not in ("gd", "adam"):
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    opt = _Adam() if cfg.optimizer == "adam" else None
    lr = cfg.lr
    weights = effective()
    result = FitResult(weights=weights.copy())
    best = math.inf
    since_best = since_lr = 0

    for epoch in range(cfg.max_epochs):
        weights = effective()
        loss, grad = glm_negative_log_likelihood(weights, x_train, y_train, bin_ms, cfg.loss, True)
        loss /= t_train
        if has_val:
            monitor = glm_negative_log_likelihood(weights, x_val, y_val, bin_ms, cfg.loss) / len(y_val)
        else:
            monitor = loss
        if not (math.isfinite(loss) and math.isfinite(monitor)):
            raise GlmDivergenceError(epoch)
        result.train_loss.append(loss)
        result.val_loss.append(monitor)
        result.lr.append(lr)

        if monitor < best - cfg.min_delta:
            best = monitor
            result.weights = weights
            result.best_epoch = epoch
            since_best = since_lr = 0
        else:
            since_best += 1
            since_lr += 1
            if since_best >= cfg.patience:
                log.info("early stop at epoch %d (best %d)", epoch, result.best_epoch)
                break
            if since_lr >= cfg.lr_patience and lr > cfg.min_lr:
                lr = max(lr * cfg.lr_factor, cfg.min_lr)
                since_lr = 0

        gb = grad.bias / t_train
        gu = (grad.flat() / t_train - gb[:, None] * mu[None, :]) / sd[None, :]
        if opt is None:
            u -= lr * gu
            c -= lr * gb
        else:
            opt.step([u, c], [gu, gb], lr)
    return result


def train_glm(y: BinnedSpikes, basis: BasisSet, cfg: TrainConfig | None = None,
              val: BinnedSpikes | None = None) -> GlmWeights:
    """Fit on ``y`` monitoring ``val`` (already chronologically split)."""
    return fit_glm_binned(y, basis, cfg, val).weights


def fit_glm_binned(y: BinnedSpikes, basis: BasisSet, cfg: TrainConfig | None = None,
                   val: BinnedSpikes | None = None) -> FitResult:
    x = build_design_matrix(y, basis)
    xv = build_design_matrix(val, basis) if val is not None else None
    return fit_glm(x, y.y, xv, val.y if val is not None else None, cfg,
                   bin_ms=y.bin_ms, b_count=basis.b_count)


def reconstruct_filters(w: GlmWeights, basis: BasisSet) -> np.ndarray:
    """(N, N, L) coupling filters ``k_ij(tau) = sum_b W_ijb phi_b(tau)``."""
    return np.einsum("ijb,bl->ijl", w.w, basis.phi)


def signed_peak(k: np.ndarray) -> np.ndarray | float:
    """Value of largest magnitude along the last axis; ties go to the maximum."""
    k = np.asarray(k, dtype=float)
    hi = k.max(axis=-1)
    lo = k.min(axis=-1)
    out = np.where(np.abs(k).max(axis=-1) == hi, hi, lo)
    return float(out) if out.ndim == 0 else out


def extract_glm_connectivity(w: GlmWeights, basis: BasisSet, meta: dict | None = None) -> ConnectivityEstimate:
    j = signed_peak(reconstruct_filters(w, basis))
    return ConnectivityEstimate(j, "glm", dict(meta or {}))


def sample_glm(w: GlmWeights, basis: BasisSet, t_bins: int, seed: int = 0) -> np.ndarray:
    """Draw a binary (T, N) raster autoregressively from a known GLM."""
    rng = np.random.default_rng(seed)
    n, L = w.n, basis.window
    filt = reconstruct_filters(w, basis)  # (N, N, L)
    y = np.zeros((t_bins, n), dtype=np.uint8)
    u = rng.random((t_bins, n))
    for t in range(t_bins):
        lags = min(t, L)
        if lags:
            # history y[t-1], ..., y[t-lags] against filter taps tau = 1..lags
            hist = y[t - lags:t][::-1].astype(float)  # (lags, N)
            drive = np.einsum("ijl,lj->i", filt[:, :, :lags], hist)
        else:
            drive = 0.0
        y[t] = u[t] < expit(w.bias + drive)
    return y

"""Staged benchmark run: simulate, prepare, fit both estimators, extract, compare, report.

Every stage reads and writes plain files under one output directory. A stage
is skipped when its cache key (a hash of its config sections and of the
bytes of its input files) matches the key stored in ``manifest.json`` and
all of its outputs still exist.

Output layout::

    config.json                 resolved configuration
    manifest.json               config hash, artifacts, stage keys, timestamps
    network/adjacency.csv       ground truth A (row = postsynaptic)
    network/network.json        hub ids and Dale signs
    data/spikes.csv             simulated events
    data/binned.csv             0/1 bins for the whole run
    data/split.json             chronological cut (ms and bin index)
    data/tokens_train.csv, data/tokens_test.csv
    glm/weights.npz, glm/fit.json
    transformer/model_seed<k>.npz
    estimates/glm.csv, estimates/transformer.csv (+ .json provenance)
    attention/n_a.csv, attention/n_z.csv
    report/report.json, report/report.csv, report/table.txt
    heatmaps/<name>.csv, heatmaps/<name>.pgm
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__, io
from .estimate import ConnectivityEstimate, ensemble_average
from .glm import (GlmWeights, TrainConfig, build_design_matrix, extract_glm_connectivity, fit_glm,
                  raised_cosine_basis)
from .lif import GroundTruthNetwork, LifParams, LifSimulator, build_hub_adjacency
from .metrics import MetricReport, co_input, compare
from .spikes import bin_spikes, chronological_split, make_windows, tokenize
from .transformer import Checkpoint, TransformerConfig, aggregate_attention, train_transformer

log = logging.getLogger(__name__)

STAGES = ("simulate", "prepare", "train-glm", "train-transformer", "extract", "compare", "report")
EXIT_CODES = {"config": 2, **{s: 10 + i for i, s in enumerate(STAGES)}}

_NETWORK_KEYS = ("n", "n_hubs", "density", "hub_ratio", "dale_fraction", "w0", "inhibitory_gain",
                 "hub_density")

# Desk-scale profile. Sized for a single laptop core in well under half an hour.
DEFAULTS = {
    "seeds": {"network": 1, "simulation": 2, "transformer": [0, 1, 2, 3]},
    "network": {"n": 50, "n_hubs": 3, "density": 0.1, "hub_ratio": 5.0, "dale_fraction": 0.8,
                "w0": 0.05, "inhibitory_gain": 1.0, "hub_density": 0.5},
    "simulation": {"duration_ms": 200_000.0, **asdict(LifParams())},
    "data": {"bin_ms": 1.0, "split_fraction": 0.8},
    "glm": {"b_count": 5, "window_bins": 50, "stretch": 1.0, "float32": True,
            **{**asdict(TrainConfig()), "optimizer": "adam", "lr": 0.01, "max_epochs": 300}},
    "transformer": {**TransformerConfig(epochs=4).to_dict(), "ensemble": 4,
                    "aggregate_on": "train", "heads": None},
    "metrics": {"spectral_k": None},
    "pipeline": {"heatmaps_pgm": True},
    "output_dir": "runs/desk",
}

# A tiny profile for smoke tests and demos; seconds rather than minutes.
SMALL = {
    "network": {"n": 12, "n_hubs": 2, "density": 0.2},
    "simulation": {"duration_ms": 4_000.0},
    "glm": {"max_epochs": 30},
    "transformer": {"vocab": 12, "d_model": 16, "n_heads": 2, "seq_len": 16, "epochs": 1,
                    "ensemble": 2},
    "seeds": {"transformer": [0, 1]},
}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A stage failed; ``exit_code`` is distinct per stage."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.exit_code = EXIT_CODES[stage]


# -- configuration -------------------------------------------------------

def merge(base: dict, over: dict) -> dict:
    """Recursive dict merge; keys absent from ``base`` are rejected."""
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in out:
            raise ConfigError(f"unknown config key {k!r}")
        if isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(text: str) -> dict:
    """``"glm.lr=0.05"`` -> ``{"glm": {"lr": 0.05}}``; values parse as JSON, else as strings."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not section.key=value")
    path, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    out: dict = {}
    node = out
    keys = path.strip().split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return out


def _subset(d: dict, cls) -> dict:
    names = {f.name for f in fields(cls)}
    return {k: v for k, v in d.items() if k in names}


def validate(cfg: dict) -> None:
    """Instantiate every sub-config so that bad values fail before any work."""
    try:
        lif_params(cfg).validate()
        if cfg["simulation"]["duration_ms"] <= 0:
            raise ValueError("simulation.duration_ms must be positive")
        TrainConfig(**_subset(cfg["glm"], TrainConfig))
        raised_cosine_basis(cfg["glm"]["b_count"], cfg["glm"]["window_bins"], cfg["glm"]["stretch"])
        tcfg = transformer_config(cfg)
        if tcfg.vocab != cfg["network"]["n"]:
            raise ValueError("transformer.vocab must equal network.n")
        seeds = cfg["seeds"]["transformer"]
        if len(seeds) != cfg["transformer"]["ensemble"] or len(set(seeds)) != len(seeds):
            raise ValueError("seeds.transformer must list transformer.ensemble distinct seeds")
        if cfg["transformer"]["aggregate_on"] not in ("train", "test", "all"):
            raise ValueError("transformer.aggregate_on must be train, test or all")
        if not 0 < cfg["data"]["split_fraction"] < 1:
            raise ValueError("data.split_fraction must be in (0, 1)")
        for k in ("network", "simulation"):
            if not isinstance(cfg["seeds"][k], int):
                raise ValueError(f"seeds.{k} must be an explicit integer")
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def resolve_config(path=None, overrides=(), profile: str = "desk", output_dir=None) -> dict:
    """Defaults, then the profile, then a JSON file, then ``--set`` overrides.

    ``path`` may also point at a ``manifest.json`` from an earlier run, which
    reproduces that run's configuration exactly.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if profile == "small":
        cfg = merge(cfg, SMALL)
    elif profile != "desk":
        raise ConfigError(f"unknown profile {profile!r}")
    if path is not None:
        obj = io.read_json(path)
        cfg = merge(cfg, obj.get("config", obj) if "config_hash" in obj else obj)
    for text in overrides:
        cfg = merge(cfg, parse_override(text))
    if output_dir is not None:
        cfg["output_dir"] = str(output_dir)
    validate(cfg)
    return cfg


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def lif_params(cfg: dict) -> LifParams:
    return LifParams(**_subset(cfg["simulation"], LifParams))


def transformer_config(cfg: dict) -> TransformerConfig:
    return TransformerConfig(**_subset(cfg["transformer"], TransformerConfig))


# -- manifest ------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    config_hash: str
    version: str = __version__
    artifacts: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    created: str = ""
    updated: str = ""
    status: str = "incomplete"
    failed_stage: str | None = None

    @classmethod
    def open(cls, out: Path, cfg: dict) -> "RunManifest":
        path = out / "manifest.json"
        h = config_hash(cfg)
        if path.exists():
            old = io.read_json(path)
            man = cls(**{**old, "config": cfg, "config_hash": h})
        else:
            man = cls(cfg, h, created=_now())
        return man

    def save(self, out: Path) -> None:
        self.updated = _now()
        io.write_json(out / "manifest.json", asdict(self))

    def check(self, out: Path) -> None:
        """Raise if the stored config hash or any listed artifact is off."""
        if config_hash(self.config) != self.config_hash:
            raise ValueError("manifest config hash does not match its config")
        missing = [p for p in self.artifacts.values() if not (out / p).exists()]
        if missing:
            raise ValueError(f"manifest lists missing artifacts: {missing}")


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- stage plumbing ------------------------------------------------------

@dataclass
class Stage:
    name: str
    sections: tuple  # config sections the stage depends on
    inputs: tuple  # relative paths, or callables of cfg returning them
    outputs: tuple
    run: object


def _paths(entries, cfg) -> list[str]:
    out = []
    for p in entries:
        out.extend(p(cfg) if callable(p) else [p])
    return out


def _require(out: Path, rel: list[str], stage: str) -> None:
    missing = [str(out / p) for p in rel if not (out / p).exists()]
    if missing:
        raise StageError(stage, "missing upstream artifacts: " + ", ".join(missing)
                         + " (run the earlier stages first)")


def _stage_key(stage: Stage, cfg: dict, out: Path) -> str:
    parts = {"stage": stage.name, "version": __version__,
             "config": {s: cfg[s] for s in stage.sections},
             "inputs": {p: file_digest(out / p) for p in _paths(stage.inputs, cfg)}}
    return config_hash(parts)


def run_stage(name: str, cfg: dict, force: bool = False) -> bool:
    """Run one stage if its cache is stale. Returns True when work was done."""
    stage = _STAGES[name]
    out = Path(cfg["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    man = RunManifest.open(out, cfg)
    inputs = _paths(stage.inputs, cfg)
    _require(out, inputs, name)
    key = _stage_key(stage, cfg, out)
    outputs = _paths(stage.outputs, cfg)
    cached = man.stages.get(name, {}).get("key") == key and all((out / p).exists() for p in outputs)
    if cached and not force:
        log.info("%s: cached", name)
        return False
    io.write_json(out / "config.json", cfg)
    t0 = time.time()
    try:
        for p in outputs:
            (out / p).parent.mkdir(parents=True, exist_ok=True)
        stage.run(cfg, out)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - any failure is reported against the stage
        man.status, man.failed_stage = "failed", name
        man.save(out)
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
    man.stages[name] = {"key": key, "seconds": round(time.time() - t0, 3), "outputs": outputs}
    for p in outputs:
        man.artifacts[p] = p
    man.failed_stage = None
    man.save(out)
    log.info("%s: done in %.1f s", name, time.time() - t0)
    return True


def run_pipeline(cfg: dict, force: bool = False) -> RunManifest:
    """Execute every stage in order; cached stages are reused."""
    out = Path(cfg["output_dir"])
    for name in STAGES:
        run_stage(name, cfg, force=force)
    man = RunManifest.open(out, cfg)
    man.status = "complete"
    man.save(out)
    man.check(out)
    return man


# -- stages --------------------------------------------------------------

def load_network(out: Path) -> GroundTruthNetwork:
    a = io.load_matrix(out / "network/adjacency.csv")
    info = io.read_json(out / "network/network.json")
    return GroundTruthNetwork(n=a.shape[0], adjacency=a, hub_ids=info["hub_ids"],
                              sign=np.asarray(info["sign"]))


def _simulate(cfg, out):
    net = build_hub_adjacency(seed=cfg["seeds"]["network"],
                              **{k: cfg["network"][k] for k in _NETWORK_KEYS})
    io.save_matrix(out / "network/adjacency.csv", net.adjacency)
    io.write_json(out / "network/network.json",
                  {"n": net.n, "hub_ids": [int(h) for h in net.hub_ids], "sign": net.sign.tolist()})
    sim = LifSimulator(net, lif_params(cfg), seed=cfg["seeds"]["simulation"])
    train = sim.advance(cfg["simulation"]["duration_ms"])
    io.save_spikes(out / "data/spikes.csv", train)
    log.info("simulated %d spikes, mean rate %.1f Hz", len(train), train.rates_hz().mean())


def _prepare(cfg, out):
    train = io.load_spikes(out / "data/spikes.csv")
    d = cfg["data"]
    binned = bin_spikes(train, d["bin_ms"])
    io.save_binned(out / "data/binned.csv", binned)
    cut_ms = d["split_fraction"] * train.duration_ms
    io.write_json(out / "data/split.json", {"fraction": d["split_fraction"], "cut_ms": cut_ms,
                                            "cut_bin": int(round(cut_ms / d["bin_ms"]))})
    split = chronological_split(tokenize(train), d["split_fraction"])
    io.save_tokens(out / "data/tokens_train.csv", split.train)
    io.save_tokens(out / "data/tokens_test.csv", split.test)


def _train_glm(cfg, out):
    g = cfg["glm"]
    binned = io.load_binned(out / "data/binned.csv")
    cut = io.read_json(out / "data/split.json")["cut_bin"]
    basis = raised_cosine_basis(g["b_count"], g["window_bins"], g["stretch"])
    # history features are built on the whole record so the test rows see
    # the spikes just before the cut
    x = build_design_matrix(binned, basis, dtype=np.float32 if g["float32"] else np.float64)
    tcfg = TrainConfig(**_subset(g, TrainConfig))
    fit = fit_glm(x[:cut], binned.y[:cut], x[cut:], binned.y[cut:], tcfg,
                  bin_ms=binned.bin_ms, b_count=basis.b_count)
    w = fit.weights
    io.save_tensor(out / "glm/weights.npz", w.w, bias=w.bias.tolist(), b_count=basis.b_count,
                   window_bins=basis.window, stretch=basis.stretch)
    io.write_json(out / "glm/fit.json", {"best_epoch": fit.best_epoch, "epochs": len(fit.train_loss),
                                         "train_loss": fit.train_loss, "val_loss": fit.val_loss,
                                         "lr": fit.lr, "config": tcfg.to_dict()})


def _model_paths(cfg) -> list[str]:
    return [f"transformer/model_seed{s}.npz" for s in cfg["seeds"]["transformer"]]


def _windows(cfg, out, which):
    seq_len = cfg["transformer"]["seq_len"]
    parts = {"train": ["train"], "test": ["test"], "all": ["train", "test"]}[which]
    ids, dts = [], []
    for p in parts:
        w = make_windows(io.load_tokens(out / f"data/tokens_{p}.csv"), seq_len)
        ids.append(w[0])
        dts.append(w[1])
    return np.concatenate(ids), np.concatenate(dts)


def _train_transformer(cfg, out):
    tcfg = transformer_config(cfg)
    train_w = _windows(cfg, out, "train")
    val_w = _windows(cfg, out, "test")
    for seed, path in zip(cfg["seeds"]["transformer"], _model_paths(cfg)):
        ck = train_transformer(train_w, tcfg, seed=seed, val_windows=val_w)
        ck.save(out / path)


def _extract(cfg, out):
    w, head = io.load_tensor(out / "glm/weights.npz")
    basis = raised_cosine_basis(head["b_count"], head["window_bins"], head["stretch"])
    weights = GlmWeights(w, np.asarray(head["bias"]))
    fit = io.read_json(out / "glm/fit.json")
    glm_est = extract_glm_connectivity(weights, basis, {"best_epoch": fit["best_epoch"],
                                                        "epochs": fit["epochs"]})
    glm_est.save(out / "estimates/glm.csv")

    cks = [Checkpoint.load(out / p) for p in _model_paths(cfg)]
    t = cfg["transformer"]
    windows = _windows(cfg, out, t["aggregate_on"])
    # one graph per model, then the entrywise mean across the ensemble
    states = [aggregate_attention([ck], windows, t["heads"]) for ck in cks]
    pooled = states[0]
    for st in states[1:]:
        pooled = pooled + st
    io.save_matrix(out / "attention/n_a.csv", pooled.n_a)
    io.save_matrix(out / "attention/n_z.csv", pooled.n_z)
    per_model = [ConnectivityEstimate(st.connectivity(), "transformer", {"seed": ck.seed})
                 for st, ck in zip(states, cks)]
    est = ensemble_average(per_model)
    n_models = len(cks)
    est.meta.update({"aggregation": "single model" if n_models == 1 else f"mean of {n_models} models",
                     "aggregate_on": t["aggregate_on"], "heads": t["heads"],
                     "unobserved_pairs": int(pooled.unobserved().sum())})
    est.save(out / "estimates/transformer.csv")


def _compare(cfg, out):
    net = load_network(out)
    ests = [ConnectivityEstimate.load(out / f"estimates/{n}.csv") for n in ("glm", "transformer")]
    rep = compare(net, ests, ["glm", "transformer"], k=cfg["metrics"]["spectral_k"])
    rep.meta["aggregation"] = ests[1].meta.get("aggregation")
    io.write_json(out / "report/report.json", rep.to_json())
    (out / "report/report.csv").write_text(rep.to_csv())


def _report(cfg, out):
    rep = MetricReport.from_json(io.read_json(out / "report/report.json"))
    lines = [rep.table(), ""]
    if rep.meta.get("aggregation") == "single model":
        lines.append("note: transformer graph comes from a single model (no ensemble)")
    (out / "report/table.txt").write_text("\n".join(lines).rstrip() + "\n")
    a = load_network(out).adjacency
    mats = {"ground_truth": a, "ground_truth_co_input": co_input(a)}
    for n in ("glm", "transformer"):
        m = ConnectivityEstimate.load(out / f"estimates/{n}.csv").matrix
        mats[n] = m
        mats[f"{n}_co_input"] = co_input(m)
    for name, m in mats.items():
        io.save_matrix(out / f"heatmaps/{name}.csv", m)
        if cfg["pipeline"]["heatmaps_pgm"]:
            io.write_pgm(out / f"heatmaps/{name}.pgm", m, symmetric=bool(np.any(m < 0)))
    print(lines[0])


_HEATMAPS = ("ground_truth", "ground_truth_co_input", "glm", "glm_co_input", "transformer",
             "transformer_co_input")


def _heatmap_paths(cfg) -> list[str]:
    exts = ("csv", "pgm") if cfg["pipeline"]["heatmaps_pgm"] else ("csv",)
    return [f"heatmaps/{n}.{e}" for n in _HEATMAPS for e in exts]


_STAGES = {s.name: s for s in (
    Stage("simulate", ("network", "simulation", "seeds"), (),
          ("network/adjacency.csv", "network/network.json", "data/spikes.csv"), _simulate),
    Stage("prepare", ("data",), ("data/spikes.csv",),
          ("data/binned.csv", "data/split.json", "data/tokens_train.csv", "data/tokens_test.csv"),
          _prepare),
    Stage("train-glm", ("glm",), ("data/binned.csv", "data/split.json"),
          ("glm/weights.npz", "glm/fit.json"), _train_glm),
    Stage("train-transformer", ("transformer", "seeds"), ("data/tokens_train.csv", "data/tokens_test.csv"),
          (_model_paths,), _train_transformer),
    Stage("extract", ("transformer",),
          ("glm/weights.npz", "glm/fit.json", "data/tokens_train.csv", "data/tokens_test.csv", _model_paths),
          ("estimates/glm.csv", "estimates/glm.json", "estimates/transformer.csv", "estimates/transformer.json",
           "attention/n_a.csv", "attention/n_z.csv"), _extract),
    Stage("compare", ("metrics",),
          ("network/adjacency.csv", "network/network.json", "estimates/glm.csv", "estimates/glm.json",
           "estimates/transformer.csv", "estimates/transformer.json"),
          ("report/report.json", "report/report.csv"), _compare),
    Stage("report", ("pipeline",),
          ("report/report.json", "network/adjacency.csv", "network/network.json",
           "estimates/glm.csv", "estimates/transformer.csv"),
          ("report/table.txt", _heatmap_paths), _report),
)}

"""TOML run configuration.

Layout::

    task = "node-classification"        # or "link-prediction"
    out = "runs/nc"                     # optional, --out wins

    [data]
    bundle = "path/to/bundle"           # either a bundle ...
    ratios = [0.6, 0.1, 0.3]            # optional split ratios
    [data.synth]                        # ... or an inline SBM
    n = 2000

    [model]                             # d_s, tau, L, n_p_v, n_p_t, normalize
    [model.ablation]                    # use_visual_pseudo, ..., use_cross_modal
    [train]                             # epochs, lr, seed, eval_every, patience, num_negatives
    [diagnose]                          # depths, heatmap_nodes
    [bench]                             # sizes, dense_sizes, n_p, tau, d_s, L, repeats, avg_degree
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

try:
    import tomllib as tomli
except ImportError:  # Python 3.10
    import tomli

from .pathways import AblationFlags
from .synth import ConfigError, SynthConfig
from .train import TrainSettings

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config"]

_MODEL_KEYS = {"d_s", "tau", "L", "n_p_v", "n_p_t", "normalize", "d_out"}


@dataclass(frozen=True)
class DiagnoseSettings:
    depths: tuple[int, ...] = (1, 2, 4, 8)
    heatmap_nodes: int = 64


@dataclass(frozen=True)
class BenchSettings:
    sizes: tuple[int, ...] = (2000, 4000, 8000, 16000)
    dense_sizes: tuple[int, ...] = (500, 1000, 2000)
    n_p: int = 32
    tau: int = 8
    d_s: int = 64
    L: int = 2
    repeats: int = 5
    avg_degree: float = 10.0
    dense_budget_mb: float = 2048.0


@dataclass
class RunConfig:
    task: str = "node-classification"
    bundle: str | None = None
    synth: SynthConfig | None = None
    ratios: tuple[float, float, float] | None = None
    model: dict = field(default_factory=dict)
    flags: AblationFlags = field(default_factory=AblationFlags)
    train: TrainSettings = field(default_factory=TrainSettings)
    diagnose: DiagnoseSettings = field(default_factory=DiagnoseSettings)
    bench: BenchSettings = field(default_factory=BenchSettings)
    out: str | None = None
    source_text: str = ""

    def resolved(self) -> dict:
        return {
            "task": self.task, "bundle": self.bundle,
            "synth": self.synth.to_dict() if self.synth else None,
            "ratios": list(self.ratios) if self.ratios else None,
            "model": dict(sorted(self.model.items())), "flags": self.flags.to_dict(),
            "train": asdict(self.train), "diagnose": asdict(self.diagnose), "bench": asdict(self.bench),
        }

    @property
    def content_hash(self) -> str:
        blob = json.dumps(self.resolved(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def persist(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.toml").write_text(self.source_text)
        (out / "config.resolved.json").write_text(
            json.dumps({"sha256": self.content_hash, **self.resolved()}, indent=2, sort_keys=True) + "\n")


def _section(cls, raw: dict, name: str):
    known = {f.name for f in fields(cls)}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(extra)}")
    vals = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    try:
        return cls(**vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_config(text: str) -> RunConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML: {exc}") from exc
    allowed = {"task", "out", "data", "model", "train", "diagnose", "bench"}
    extra = set(raw) - allowed
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")

    task = raw.get("task", "node-classification")
    if task not in ("node-classification", "link-prediction"):
        raise ConfigError(f"unknown task {task!r}")

    data = dict(raw.get("data", {}))
    synth_raw = data.pop("synth", None)
    bundle = data.pop("bundle", None)
    ratios = data.pop("ratios", None)
    if data:
        raise ConfigError(f"unknown keys in [data]: {sorted(data)}")
    if synth_raw is not None and bundle is not None:
        raise ConfigError("[data] takes either bundle or synth, not both")
    try:
        synth = SynthConfig.from_dict(synth_raw) if synth_raw is not None else None
    except TypeError as exc:
        raise ConfigError(f"[data.synth]: {exc}") from exc
    if ratios is not None:
        if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
            raise ConfigError("ratios must be three non-negative numbers summing to 1")
        ratios = tuple(float(r) for r in ratios)

    model = dict(raw.get("model", {}))
    ablation = model.pop("ablation", {})
    extra = set(model) - _MODEL_KEYS
    if extra:
        raise ConfigError(f"unknown keys in [model]: {sorted(extra)}")
    try:
        flags = AblationFlags.from_dict(ablation)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    train_raw = dict(raw.get("train", {}))
    if task == "link-prediction":
        train_raw.setdefault("epochs", 100)
    cfg = RunConfig(
        task=task, bundle=bundle, synth=synth, ratios=ratios, model=model, flags=flags,
        train=_section(TrainSettings, train_raw, "train"),
        diagnose=_section(DiagnoseSettings, raw.get("diagnose", {}), "diagnose"),
        bench=_section(BenchSettings, raw.get("bench", {}), "bench"),
        out=raw.get("out"), source_text=text,
    )
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    t = cfg.train
    if t.epochs < 0 or t.eval_every < 1 or t.patience < 1 or t.num_negatives < 1 or t.lr < 0:
        raise ConfigError("[train] needs epochs >= 0, eval_every/patience/num_negatives >= 1, lr >= 0")
    if any(d < 0 for d in cfg.diagnose.depths) or cfg.diagnose.heatmap_nodes < 1:
        raise ConfigError("[diagnose] depths must be >= 0 and heatmap_nodes >= 1")
    b = cfg.bench
    if list(b.sizes) != sorted(b.sizes) or list(b.dense_sizes) != sorted(b.dense_sizes):
        raise ConfigError("[bench] sizes must be ascending")
    if b.repeats < 1:
        raise ConfigError("[bench] repeats must be >= 1")
    tau, d_s = cfg.model.get("tau", 8), cfg.model.get("d_s", 32)
    if tau < 1 or d_s % tau:
        raise ConfigError(f"[model] tau={tau} must divide d_s={d_s}")


def load_config(path) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return parse_config(p.read_text())

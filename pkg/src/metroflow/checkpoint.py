"""Checkpoint container (``.npz``) holding parameters, batch-norm stats and Adam state.

Layout, format version 1:

* ``meta`` -- UTF-8 JSON: ``format``, ``version``, ``kind``, ``spec``, ``seed``,
  ``init_scheme``, ``epoch``, ``val_mse``, ``scaler``, ``adam`` (lr, betas,
  eps, t), ``extra``.
* ``param/<name>`` -- trainable parameter arrays.
* ``bn_mean/<name>``, ``bn_var/<name>`` -- running batch-norm statistics.
* ``adam_m/<name>``, ``adam_v/<name>`` -- Adam moment buffers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .layers import INIT_SCHEME, Module
from .optim import AdamState

FORMAT = "metroflow-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    kind: str
    spec: dict
    params: dict[str, np.ndarray]
    bn_stats: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    adam: AdamState | None = None
    seed: int = 0
    epoch: int = 0
    val_mse: float = float("nan")
    scaler: dict | None = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def capture(cls, model: Module, kind: str, spec: dict, adam: AdamState | None = None, **kwargs) -> "Checkpoint":
        params = {k: p.data.copy() for k, p in model.parameters().items()}
        stats = {k: (s.mean.copy(), s.var.copy()) for k, s in model.buffers().items()}
        adam_copy = None
        if adam is not None:
            adam_copy = AdamState(adam.lr, adam.beta1, adam.beta2, adam.eps, adam.t,
                                  {k: v.copy() for k, v in adam.m.items()},
                                  {k: v.copy() for k, v in adam.v.items()})
        return cls(kind, spec, params, stats, adam_copy, **kwargs)

    def restore(self, model: Module) -> None:
        params = model.parameters()
        if set(params) != set(self.params):
            missing = sorted(set(params) ^ set(self.params))
            raise ConfigError(f"checkpoint does not match model parameters (differs at {missing[:5]})")
        for k, p in params.items():
            if p.shape != self.params[k].shape:
                raise ConfigError(f"checkpoint parameter {k} has shape {self.params[k].shape}, model has {p.shape}")
            p.data[...] = self.params[k]
        for k, s in model.buffers().items():
            if k in self.bn_stats:
                s.mean, s.var = self.bn_stats[k][0].copy(), self.bn_stats[k][1].copy()

    def save(self, path: Path) -> None:
        meta = {
            "format": FORMAT,
            "version": VERSION,
            "kind": self.kind,
            "spec": self.spec,
            "seed": self.seed,
            "init_scheme": INIT_SCHEME,
            "epoch": self.epoch,
            "val_mse": self.val_mse,
            "scaler": self.scaler,
            "extra": self.extra,
            "adam": None if self.adam is None else {
                "lr": self.adam.lr, "beta1": self.adam.beta1, "beta2": self.adam.beta2,
                "eps": self.adam.eps, "t": self.adam.t,
            },
        }
        arrays = {"meta": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
        arrays.update({f"param/{k}": v for k, v in self.params.items()})
        for k, (m, v) in self.bn_stats.items():
            arrays[f"bn_mean/{k}"], arrays[f"bn_var/{k}"] = m, v
        if self.adam is not None:
            arrays.update({f"adam_m/{k}": v for k, v in self.adam.m.items()})
            arrays.update({f"adam_v/{k}": v for k, v in self.adam.v.items()})
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path: Path) -> "Checkpoint":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"checkpoint not found: {path}")
        with np.load(path) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            if meta.get("format") != FORMAT or meta.get("version") != VERSION:
                raise ConfigError(f"{path}: unsupported checkpoint format {meta.get('format')} v{meta.get('version')}")

            def group(prefix: str) -> dict[str, np.ndarray]:
                return {k[len(prefix):]: z[k] for k in z.files if k.startswith(prefix)}

            params = group("param/")
            means, vars_ = group("bn_mean/"), group("bn_var/")
            adam = None
            if meta["adam"] is not None:
                a = meta["adam"]
                adam = AdamState(a["lr"], a["beta1"], a["beta2"], a["eps"], a["t"], group("adam_m/"), group("adam_v/"))
        return cls(
            meta["kind"], meta["spec"], params, {k: (means[k], vars_[k]) for k in means}, adam,
            meta["seed"], meta["epoch"], meta["val_mse"], meta["scaler"], meta.get("extra", {}),
        )

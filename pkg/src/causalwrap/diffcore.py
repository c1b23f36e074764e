"""Residual MLP correction map with hand-written reverse mode, plus Adam.

The map is ``f(x) = x + s * (tanh(tanh(x W1 + b1) W2 + b2) W_out + b_out)``.
The output layer starts at zero, so a fresh map is exactly the identity.
The fixed branch scale ``s`` keeps Adam's per-parameter steps (each of size
about ``lr``) from moving the output by O(1) per step through a wide layer.
Forward passes return a :class:`Tape` holding the activations needed by
:func:`backward`; a tape becomes stale as soon as the parameters change.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class NumericError(ArithmeticError):
    pass


class StaleTapeError(RuntimeError):
    pass


CHECKPOINT_VERSION = 1
DEFAULT_OUT_SCALE = 0.01


class CorrectionMap:
    def __init__(self, d: int, hidden: tuple[int, ...] = (64, 64), seed: int = 0,
                 out_scale: float = DEFAULT_OUT_SCALE):
        if not out_scale > 0:
            raise ValueError("out_scale must be > 0")
        self.d = d
        self.hidden = tuple(hidden)
        self.out_scale = float(out_scale)
        self.version = 0
        rng = np.random.default_rng(seed)
        self.params: list[np.ndarray] = []
        fan_in = d
        for width in self.hidden:
            bound = 1.0 / np.sqrt(fan_in)
            self.params.append(rng.uniform(-bound, bound, size=(fan_in, width)))
            self.params.append(np.zeros(width))
            fan_in = width
        self.params.append(np.zeros((fan_in, d)))
        self.params.append(np.zeros(d))

    @property
    def n_layers(self) -> int:
        return len(self.params) // 2

    def set_params(self, params: list[np.ndarray]) -> None:
        if [p.shape for p in params] != [p.shape for p in self.params]:
            raise ValueError("parameter shapes do not match the architecture")
        self.params = [np.array(p, dtype=float) for p in params]
        self.version += 1

    def copy(self) -> "CorrectionMap":
        out = CorrectionMap.__new__(CorrectionMap)
        out.d, out.hidden, out.version, out.out_scale = self.d, self.hidden, 0, self.out_scale
        out.params = [p.copy() for p in self.params]
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return forward(self, x)[0]

    def to_dict(self) -> dict:
        return {"d": self.d, "hidden": list(self.hidden), "out_scale": self.out_scale,
                "params": [p.tolist() for p in self.params]}

    @classmethod
    def from_dict(cls, doc: dict) -> "CorrectionMap":
        m = cls(doc["d"], tuple(doc["hidden"]), out_scale=doc.get("out_scale", DEFAULT_OUT_SCALE))
        m.set_params([np.asarray(p, dtype=float) for p in doc["params"]])
        m.version = 0
        return m


@dataclass
class Tape:
    owner: CorrectionMap
    version: int
    x: np.ndarray
    activations: list[np.ndarray]


def forward(cmap: CorrectionMap, batch: np.ndarray) -> tuple[np.ndarray, Tape]:
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != cmap.d:
        raise ValueError(f"batch width {x.shape[-1]} does not match map width {cmap.d}")
    acts = []
    h = x
    for k in range(cmap.n_layers - 1):
        h = np.tanh(h @ cmap.params[2 * k] + cmap.params[2 * k + 1])
        acts.append(h)
    out = x + cmap.out_scale * (h @ cmap.params[-2] + cmap.params[-1])
    return out, Tape(cmap, cmap.version, x, acts)


def backward(tape: Tape, output_grad: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    """Vector-Jacobian product: returns ``(param_grads, input_grad)``."""
    cmap = tape.owner
    if tape.version != cmap.version:
        raise StaleTapeError("tape was recorded before the last parameter update")
    g = np.asarray(output_grad, dtype=float)
    if g.shape != tape.x.shape:
        raise ValueError("output_grad shape does not match the recorded batch")
    grads: list[np.ndarray] = [None] * len(cmap.params)  # type: ignore[list-item]
    h_last = tape.activations[-1] if tape.activations else tape.x
    gb = cmap.out_scale * g
    grads[-2] = h_last.T @ gb
    grads[-1] = gb.sum(axis=0)
    gin = g.copy()  # residual path
    gh = gb @ cmap.params[-2].T
    for k in range(cmap.n_layers - 2, -1, -1):
        h = tape.activations[k]
        gz = gh * (1.0 - h * h)
        prev = tape.activations[k - 1] if k > 0 else tape.x
        grads[2 * k] = prev.T @ gz
        grads[2 * k + 1] = gz.sum(axis=0)
        gh = gz @ cmap.params[2 * k].T
    gin += gh
    return grads, gin


@dataclass
class AdamState:
    lr: float = 5e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "step": self.step, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    @classmethod
    def from_dict(cls, d: dict) -> "AdamState":
        return cls(d["lr"], d["beta1"], d["beta2"], d["eps"], d["step"],
                   [np.asarray(a, dtype=float) for a in d["m"]],
                   [np.asarray(a, dtype=float) for a in d["v"]])


def adam_step(state: AdamState, cmap: CorrectionMap, grads: list[np.ndarray]) -> None:
    """One bias-corrected Adam update, in place on ``cmap`` and ``state``."""
    if len(grads) != len(cmap.params) or any(g.shape != p.shape for g, p in zip(grads, cmap.params)):
        raise ValueError("gradient shapes do not match parameters")
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient at Adam step {state.step + 1}")
    if not state.m:
        state.m = [np.zeros_like(p) for p in cmap.params]
        state.v = [np.zeros_like(p) for p in cmap.params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    new = []
    for p, g, m, v in zip(cmap.params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        new.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
    cmap.params = new
    cmap.version += 1


def save_checkpoint(path: str | Path, cmap: CorrectionMap, schema_hash: str, **extra) -> None:
    doc = {"version": CHECKPOINT_VERSION, "schema_hash": schema_hash, "map": cmap.to_dict(), **extra}
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: str | Path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    doc["map"] = CorrectionMap.from_dict(doc["map"])
    return doc

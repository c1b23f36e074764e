"""Augmented-Lagrangian training of the correction map, and corrected sampling.

Per outer iteration ``k``: ``t_inner`` Adam steps on

    U + sum_c mu_c * Omega_c + lam / 2 * sum_c Omega_c**2

then ``mu_c += lam * Omega_c`` measured on a fresh batch four times the
training batch size, then ``lam *= rho`` (capped). Constraint components
``c`` are the individual forbidden pairs (scaled by ``alpha``) and monotone
constraints (scaled by ``beta``).

Real and base samples both live in the real-data standardized space.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .base_gen import Sampler
from .data import ColumnSchema, ColumnStats, Provenance, Table, schema_hash
from .diffcore import (DEFAULT_OUT_SCALE, AdamState, CorrectionMap, NumericError, adam_step, backward, forward,
                       load_checkpoint, save_checkpoint)
from .knowledge import CausalKnowledge
from .penalties import (EdgeModel, KernelConfig, ci_penalty, clamp_binary, mono_from_outputs,
                        residualize, twin_batch, utility_surrogate)

log = logging.getLogger(__name__)


@dataclass
class AlmConfig:
    lambda0: float = 1.0
    rho: float = 1.5
    lr: float = 5e-2
    k_outer: int = 20
    t_inner: int = 200
    batch_size: int = 256
    delta: float = 0.5
    id_weight: float = 0.1
    alpha: float = 1.0
    beta: float = 1.0
    seed: int = 0
    fixed_lambda: float | None = None
    pair_cap: int = 32
    eval_factor: int = 4
    lambda_cap: float = 1e4
    hidden: tuple[int, ...] = (64, 64)
    out_scale: float = DEFAULT_OUT_SCALE

    def __post_init__(self) -> None:
        self.hidden = tuple(self.hidden)
        if not self.lambda0 > 0:
            raise ValueError("lambda0 must be > 0")
        if self.rho < 1:
            raise ValueError("rho must be >= 1")
        if self.k_outer < 0 or self.t_inner < 0:
            raise ValueError("k_outer and t_inner must be >= 0")
        if self.batch_size < 4:
            raise ValueError("batch_size must be >= 4")
        if self.fixed_lambda is not None and not self.fixed_lambda > 0:
            raise ValueError("fixed_lambda must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AlmConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


@dataclass
class DualState:
    components: list[tuple]
    mu: np.ndarray
    lam: float
    last_omega: np.ndarray

    @classmethod
    def init(cls, components: list[tuple], cfg: AlmConfig) -> "DualState":
        n = len(components)
        lam = cfg.fixed_lambda if cfg.fixed_lambda is not None else cfg.lambda0
        return cls(components, np.zeros(n), float(lam), np.zeros(n))

    def update(self, omega: np.ndarray, cfg: AlmConfig) -> None:
        self.last_omega = np.array(omega, dtype=float)
        if cfg.fixed_lambda is not None:
            return
        self.mu = self.mu + self.lam * self.last_omega
        self.lam = min(self.lam * cfg.rho, cfg.lambda_cap)

    def to_dict(self) -> dict:
        return {"components": [list(c) for c in self.components], "mu": self.mu.tolist(),
                "lam": self.lam, "last_omega": self.last_omega.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DualState":
        comps = [(c[0], tuple(c[1]) if isinstance(c[1], list) else c[1]) for c in d["components"]]
        return cls(comps, np.asarray(d["mu"], float), d["lam"], np.asarray(d["last_omega"], float))


@dataclass
class TrainingLog:
    steps: list[dict] = field(default_factory=list)
    outer: list[dict] = field(default_factory=list)

    def omega_trace(self) -> np.ndarray:
        """Total constraint violation per outer record (index 0 = before training)."""
        return np.array([r["omega_total"] for r in self.outer])

    def write_jsonl(self, path: str | Path) -> None:
        with Path(path).open("w") as fh:
            for rec in self.steps:
                fh.write(json.dumps({"type": "step", **rec}) + "\n")
            for rec in self.outer:
                fh.write(json.dumps({"type": "outer", **rec}) + "\n")


@dataclass
class TrainState:
    cmap: CorrectionMap
    adam: AdamState
    dual: DualState
    k_done: int
    rng: np.random.Generator


def components_for(k: CausalKnowledge, cfg: AlmConfig) -> list[tuple]:
    comps: list[tuple] = []
    if cfg.alpha > 0:
        comps += [("ci", pair) for pair in k.forbidden_pairs]
    if cfg.beta > 0:
        comps += [("mono", i) for i in range(len(k.monotone))]
    return comps


class _Objective:
    """Evaluates the ALM loss and its gradient for one pair of minibatches."""

    def __init__(self, k: CausalKnowledge, models: Sequence[EdgeModel], cfg: AlmConfig,
                 binary: np.ndarray, components: list[tuple]):
        self.k, self.models, self.cfg, self.binary = k, models, cfg, binary
        self.components = components
        self.ci_index = {c[1]: i for i, c in enumerate(components) if c[0] == "ci"}
        self.mono_index = [i for i, c in enumerate(components) if c[0] == "mono"]

    def bandwidths(self, outputs: np.ndarray) -> KernelConfig:
        xb, _ = clamp_binary(outputs, self.binary)
        return KernelConfig.from_residuals(residualize(xb, self.models))

    def measure(self, cmap: CorrectionMap, base: np.ndarray, kcfg: KernelConfig,
                pairs: Sequence | None = None):
        """Forward passes plus every penalty piece; returns a dict of intermediates."""
        out, tape = forward(cmap, base)
        omega = np.full(len(self.components), np.nan)
        ci = mono = None
        twins = []
        if self.ci_index:
            use = list(self.ci_index) if pairs is None else list(pairs)
            ci = ci_penalty(out, self.models, self.k, kcfg, use, self.binary)
            for pair, v in zip(ci.pairs, ci.values):
                omega[self.ci_index[pair]] = self.cfg.alpha * v
        if self.mono_index:
            twins = [forward(cmap, twin_batch(base, c.cause, self.cfg.delta)) for c in self.k.monotone]
            mono = mono_from_outputs(out, [t[0] for t in twins], self.k, self.binary)
            omega[self.mono_index] = self.cfg.beta * mono.values
        return {"out": out, "tape": tape, "ci": ci, "mono": mono, "twins": twins, "omega": omega}

    def loss_and_grads(self, cmap, base, real, kcfg, dual: DualState, pairs):
        p = self.measure(cmap, base, kcfg, pairs)
        u, g_out = utility_surrogate(real, p["out"], base, self.cfg.id_weight)
        omega = p["omega"]
        live = ~np.isnan(omega)
        om = np.where(live, omega, 0.0)
        loss = u + float(np.sum(dual.mu[live] * om[live]) + 0.5 * dual.lam * np.sum(om[live] ** 2))
        coef = np.where(live, dual.mu + dual.lam * om, 0.0)
        if p["ci"] is not None:
            cc = np.array([coef[self.ci_index[pr]] for pr in p["ci"].pairs]) * self.cfg.alpha
            g_out = g_out + p["ci"].grad(cc)
        twin_grads = []
        if p["mono"] is not None:
            g0, twin_grads = p["mono"].grad(coef[self.mono_index] * self.cfg.beta)
            g_out = g_out + g0
        grads, _ = backward(p["tape"], g_out)
        for (_, tt), gt in zip(p["twins"], twin_grads):
            gp, _ = backward(tt, gt)
            grads = [a + b for a, b in zip(grads, gp)]
        return loss, u, omega, grads


def _check_finite(value: float, what: str, step: int) -> None:
    if not math.isfinite(value):
        raise NumericError(f"non-finite {what} at step {step}")


def train(
    real: Table,
    base_sampler: Sampler,
    k: CausalKnowledge,
    cfg: AlmConfig,
    stats: ColumnStats,
    models: Sequence[EdgeModel],
    state: TrainState | None = None,
    on_outer: Callable[[TrainState, dict], None] | None = None,
) -> tuple[CorrectionMap, TrainingLog, TrainState]:
    """Run the ALM schedule.

    ``real`` must already be standardized with ``stats``; base batches are
    mapped into the same space. Passing a previous ``state`` resumes after its
    last completed outer iteration.
    """
    binary = real.binary_mask
    components = components_for(k, cfg)
    if not components:
        log.warning("no forbidden pairs or monotone constraints: surrogate-only training")
    obj = _Objective(k, models, cfg, binary, components)
    if state is None:
        rng = np.random.default_rng(cfg.seed)
        cmap = CorrectionMap(real.d, cfg.hidden, seed=cfg.seed, out_scale=cfg.out_scale)
        state = TrainState(cmap, AdamState(lr=cfg.lr), DualState.init(components, cfg), 0, rng)
    rng, cmap, dual = state.rng, state.cmap, state.dual
    m = cfg.batch_size
    ci_pairs = [c[1] for c in components if c[0] == "ci"]
    tlog = TrainingLog()

    def draw_base(n: int) -> np.ndarray:
        return stats.transform(base_sampler.sample(n, rng))

    def evaluate(kcfg: KernelConfig) -> tuple[np.ndarray, float]:
        base = draw_base(cfg.eval_factor * m)
        real_b = real.rows[rng.integers(0, real.n, size=cfg.eval_factor * m)]
        p = obj.measure(cmap, base, kcfg)
        u, _ = utility_surrogate(real_b, p["out"], base, cfg.id_weight)
        return p["omega"], u

    if state.k_done == 0 and cfg.k_outer > 0:
        kcfg0 = obj.bandwidths(cmap(draw_base(m)))
        omega0, u0 = evaluate(kcfg0)
        tlog.outer.append(_outer_record(0, dual, omega0, u0))

    step = state.adam.step
    for kk in range(state.k_done + 1, cfg.k_outer + 1):
        kcfg = None
        for _ in range(cfg.t_inner):
            base = draw_base(m)
            real_b = real.rows[rng.integers(0, real.n, size=m)]
            if kcfg is None:
                kcfg = obj.bandwidths(cmap(base))
            pairs = ci_pairs
            if len(ci_pairs) > cfg.pair_cap:
                pick = np.sort(rng.choice(len(ci_pairs), size=cfg.pair_cap, replace=False))
                pairs = [ci_pairs[i] for i in pick]
            loss, u, omega, grads = obj.loss_and_grads(cmap, base, real_b, kcfg, dual, pairs)
            step += 1
            _check_finite(loss, "loss", step)
            adam_step(state.adam, cmap, grads)
            seen = ~np.isnan(omega)
            dual.last_omega[seen] = omega[seen]
            tlog.steps.append({
                "step": step, "k": kk, "lambda": dual.lam, "loss": loss, "utility": u,
                "omega": [None if np.isnan(v) else float(v) for v in omega],
            })
        if kcfg is None:
            kcfg = obj.bandwidths(cmap(draw_base(m)))
        omega_eval, u_eval = evaluate(kcfg)
        _check_finite(float(np.sum(omega_eval)) if omega_eval.size else 0.0, "constraint value", step)
        dual.update(omega_eval, cfg)
        state.k_done = kk
        rec = _outer_record(kk, dual, omega_eval, u_eval)
        tlog.outer.append(rec)
        log.info("outer %d: omega=%.5g utility=%.5g lambda=%.4g", kk, rec["omega_total"], u_eval, dual.lam)
        if on_outer is not None:
            on_outer(state, rec)
    return cmap, tlog, state


def _outer_record(kk: int, dual: DualState, omega: np.ndarray, u: float) -> dict:
    return {
        "k": kk, "lambda": dual.lam, "mu": dual.mu.tolist(), "omega": omega.tolist(),
        "omega_total": float(np.sum(omega)), "utility": float(u),
        "components": [[c[0], list(c[1]) if isinstance(c[1], tuple) else c[1]] for c in dual.components],
    }


# --- wrapped generator ------------------------------------------------------------

BINARY_PASS_TOL = 0.02


@dataclass
class CausalWrap:
    """A trained correction map plus everything needed to sample from it."""

    cmap: CorrectionMap
    schema: tuple[ColumnSchema, ...]
    stats: ColumnStats
    binary_means: np.ndarray
    models: list[EdgeModel] = field(default_factory=list)

    @property
    def schema_hash(self) -> str:
        return schema_hash(self.schema)

    def generate(self, base_sampler: Sampler, n: int, rng: np.random.Generator) -> Table:
        return generate(self, base_sampler, n, rng)

    def save(self, path: str | Path, state: TrainState | None = None, **extra) -> None:
        payload = {
            "schema": [c.to_dict() for c in self.schema], "stats": self.stats.to_dict(),
            "binary_means": self.binary_means.tolist(), "models": [m.to_dict() for m in self.models],
            **extra,
        }
        if state is not None:
            payload["train_state"] = {
                "adam": state.adam.to_dict(), "dual": state.dual.to_dict(), "k_done": state.k_done,
                "rng": state.rng.bit_generator.state,
            }
        save_checkpoint(path, self.cmap, self.schema_hash, **payload)

    @classmethod
    def load(cls, path: str | Path) -> tuple["CausalWrap", dict]:
        doc = load_checkpoint(path)
        wrap = cls(doc["map"], tuple(ColumnSchema.from_dict(c) for c in doc["schema"]),
                   ColumnStats.from_dict(doc["stats"]), np.asarray(doc["binary_means"], float),
                   [EdgeModel.from_dict(m) for m in doc["models"]])
        if doc["schema_hash"] != wrap.schema_hash:
            raise ValueError("checkpoint schema hash does not match its stored schema")
        return wrap, doc

    def restore_state(self, doc: dict) -> TrainState | None:
        ts = doc.get("train_state")
        if ts is None:
            return None
        rng = np.random.default_rng()
        rng.bit_generator.state = ts["rng"]
        return TrainState(self.cmap, AdamState.from_dict(ts["adam"]), DualState.from_dict(ts["dual"]),
                          ts["k_done"], rng)


class SchemaMismatch(ValueError):
    pass


def generate(wrap: CausalWrap, base_sampler: Sampler, n: int, rng: np.random.Generator) -> Table:
    """Draw ``n`` base rows, correct them and map back to raw units.

    Binary columns: clamp to [0, 1], shift to the real marginal mean, sample
    Bernoulli -- unless the base column is already binary and within 0.02 of
    the real mean, in which case it passes through untouched.
    """
    if schema_hash(base_sampler.schema) != wrap.schema_hash:
        raise SchemaMismatch("base sampler schema does not match the checkpoint")
    raw = base_sampler.sample(n, rng)
    out = wrap.stats.inverse(wrap.cmap(wrap.stats.transform(raw)))
    for j, col in enumerate(wrap.schema):
        if not col.is_binary:
            continue
        b = raw[:, j]
        target = wrap.binary_means[j]
        if np.all((b == 0.0) | (b == 1.0)) and abs(b.mean() - target) <= BINARY_PASS_TOL:
            out[:, j] = b
            continue
        p = np.clip(out[:, j], 0.0, 1.0)
        p = np.clip(p + (target - p.mean()), 0.0, 1.0)
        out[:, j] = (rng.random(n) < p).astype(float)
    return Table(tuple(ColumnSchema(c.name, c.kind) for c in wrap.schema), out, Provenance.CORRECTED)


def fit_wrap(
    real_raw: Table, base_sampler: Sampler, k: CausalKnowledge, cfg: AlmConfig,
    on_outer: Callable[[TrainState, dict], None] | None = None,
) -> tuple[CausalWrap, TrainingLog, TrainState]:
    """Standardize, fit frozen edge models on real data, and train."""
    from .data import standardize
    from .penalties import fit_edge_models

    real_std, stats = standardize(real_raw, passthrough_degenerate=True)
    models = fit_edge_models(real_std, k)
    cmap, tlog, state = train(real_std, base_sampler, k, cfg, stats, models, on_outer=on_outer)
    binary_means = np.where(real_raw.binary_mask, real_raw.rows.mean(axis=0), 0.0)
    schema = tuple(ColumnSchema(c.name, c.kind) for c in real_raw.schema)
    return CausalWrap(cmap, schema, stats, binary_means, models), tlog, state

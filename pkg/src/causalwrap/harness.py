"""Tier-1 benchmark and ablation runs over simulated SCMs.

A *cell* is one (SCM family, seed) pair. For each cell we draw an SCM and
real data, derive knowledge, fit the wrapper on the base generator, and
evaluate base, base+CW and (benchmark only) the oracle sampler. Every random
stage draws from its own child stream of ``SeedSequence([seed, family])``,
so changing one stage (e.g. the knowledge fraction) leaves the others
untouched. Cells are independent and run in a process pool when
``jobs > 1``; results are reduced in cell order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .alm import AlmConfig, fit_wrap
from .base_gen import make_sampler
from .data import Table
from .knowledge import CausalKnowledge, derive_knowledge_from_scm
from .metrics import GroundTruth, assemble_report
from .penalties import fit_edge_models
from .scm import (Family, ancestral_sample, ground_truth_ate, individual_effects, oracle_sampler,
                  random_scm_with_path)

log = logging.getLogger(__name__)

FAMILIES = ("LG", "NLA", "MT")
GENERATORS = ("base", "base+CW", "oracle")
METRICS = ("ate_error", "pehe", "mmd", "jsd", "tstr", "ci_pass", "final_omega")
HEADROOM_MIN = 0.05
ABLATIONS = ("constraint_type", "knowledge_fraction", "wrong_edges", "alm_vs_fixed", "e0")


@dataclass
class BenchConfig:
    families: tuple[str, ...] = FAMILIES
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    d: int = 10
    n: int = 5000
    n_syn: int = 5000
    test_fraction: float = 0.2
    base: str = "bootstrap"
    noise: float = 0.5
    reveal: float = 0.5
    corrupt: float = 0.0
    n_mono: int = 2
    use_e0: bool = True
    n_mc: int = 100_000
    n_ite: int = 2000
    oracle: bool = True
    alm: AlmConfig = field(default_factory=AlmConfig)

    def __post_init__(self) -> None:
        self.families = tuple(Family(f).value for f in self.families)
        self.seeds = tuple(int(s) for s in self.seeds)
        if isinstance(self.alm, dict):
            self.alm = AlmConfig.from_dict(self.alm)
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["families"], d["seeds"] = list(self.families), list(self.seeds)
        d["alm"] = self.alm.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BenchConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


def _streams(seed: int, family: str) -> dict[str, np.random.Generator]:
    ss = np.random.SeedSequence([seed, FAMILIES.index(family)])
    names = ("scm", "data", "split", "knowledge", "truth", "generate")
    return {nm: np.random.default_rng(s) for nm, s in zip(names, ss.spawn(len(names)))}


def covariates_for(scm, t: int, y: int) -> list[int]:
    """Adjustment set for the outcome regression: non-descendants of ``t``."""
    desc = scm.descendants(t)
    return [j for j in range(scm.d) if j not in desc and j not in (t, y)]


def run_cell(cfg: BenchConfig, family: str, seed: int) -> list[dict]:
    """Fit and evaluate one cell; returns one row per generator."""
    rs = _streams(seed, family)
    scm, t, y = random_scm_with_path(family, cfg.d, rs["scm"])
    data = ancestral_sample(scm, cfg.n, rs["data"])
    perm = rs["split"].permutation(cfg.n)
    n_test = int(round(cfg.test_fraction * cfg.n))
    test, train = data.take(np.sort(perm[:n_test])), data.take(np.sort(perm[n_test:]))
    k = derive_knowledge_from_scm(scm, cfg.reveal, cfg.n_mono, cfg.corrupt, rs["knowledge"])
    if not cfg.use_e0:
        k = CausalKnowledge(k.trusted, frozenset(), k.monotone)
    truth_rng = rs["truth"]
    ate = ground_truth_ate(scm, t, y, cfg.n_mc, truth_rng)
    ite_table, ite = individual_effects(scm, t, y, cfg.n_ite, truth_rng)
    truth = GroundTruth(ate, ite_table, ite)
    cov = covariates_for(scm, t, y)
    models = fit_edge_models(train, k)
    thr = float(np.median(train.rows[:, y]))

    base = make_sampler(cfg.base, train, noise=cfg.noise)
    alm_cfg = replace(cfg.alm, seed=seed)
    wrap, tlog, _ = fit_wrap(train, base, k, alm_cfg)
    gen = rs["generate"]
    tables: dict[str, Table] = {
        "base": base.sample_table(cfg.n_syn, gen),
        "base+CW": wrap.generate(base, cfg.n_syn, gen),
    }
    if cfg.oracle:
        tables["oracle"] = oracle_sampler(scm).sample_table(cfg.n_syn, gen)
    final_omega = float(tlog.omega_trace()[-1]) if tlog.outer else math.nan
    rows = []
    for name, syn in tables.items():
        rep = assemble_report(train, syn, k, models, t, y, cov, real_test=test, truth=truth,
                              seed=seed, label_threshold=thr)
        rows.append({
            "family": family, "seed": seed, "generator": name,
            "ate_error": rep.ate_error, "pehe": rep.pehe, "mmd": rep.mmd, "jsd": rep.jsd,
            "tstr": rep.tstr, "ci_pass": rep.ci_pass,
            "final_omega": final_omega if name == "base+CW" else None,
            "true_ate": ate, "flags": ";".join(rep.flags),
        })
    return rows


def _safe_cell(args: tuple[BenchConfig, str, int]) -> list[dict]:
    cfg, family, seed = args
    try:
        return run_cell(cfg, family, seed)
    except Exception as exc:  # a failing cell is flagged and the run continues
        log.error("cell %s/%d failed: %s", family, seed, exc)
        gens = GENERATORS if cfg.oracle else GENERATORS[:2]
        return [{"family": family, "seed": seed, "generator": g, "flags": f"cell_failed: {exc}"}
                for g in gens]


def run_cells(cells: Sequence[tuple[BenchConfig, str, int]], jobs: int = 1) -> list[dict]:
    if jobs <= 1 or len(cells) <= 1:
        out = [_safe_cell(c) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            out = list(pool.map(_safe_cell, cells))
    return [row for rows in out for row in rows]


# --- aggregation -----------------------------------------------------------------

def gap_closed(e_base: float, e_cw: float, e_oracle: float) -> float | None:
    """``(e_base - e_cw) / (e_base - e_oracle)``, or None (shown as "--") when
    the oracle is no better than the base or its relative headroom is < 5%."""
    if e_oracle >= e_base:
        return None
    if (e_base - e_oracle) / e_base < HEADROOM_MIN:
        return None
    return (e_base - e_cw) / (e_base - e_oracle)


def delta_pct(base: float, cw: float) -> float:
    return (cw - base) / base * 100.0


def _mean(rows: list[dict], key: str) -> float | None:
    vals = [r[key] for r in rows if r.get(key) is not None]
    return float(np.mean(vals)) if vals else None


def summarize(rows: list[dict], families: Sequence[str]) -> list[dict]:
    """Seed-averaged errors per family, Delta% and gap closed, plus an Overall row.

    Overall Delta% is the unweighted mean of the family Delta% values; Overall
    gap closed applies the formula to the unweighted family means of each error.
    """
    out = []
    per_family = []
    for fam in families:
        e = {g: _mean([r for r in rows if r["family"] == fam and r["generator"] == g], "ate_error")
             for g in GENERATORS}
        rec = {"family": fam, **{f"e_{g}": e[g] for g in GENERATORS}}
        if e["base"] is not None and e["base+CW"] is not None:
            rec["delta_pct"] = delta_pct(e["base"], e["base+CW"])
            rec["gap_closed"] = (gap_closed(e["base"], e["base+CW"], e["oracle"])
                                 if e["oracle"] is not None else None)
        else:
            rec["delta_pct"] = rec["gap_closed"] = None
        for metric in ("mmd", "jsd", "tstr", "ci_pass", "pehe"):
            for g in ("base", "base+CW"):
                rec[f"{metric}_{g}"] = _mean(
                    [r for r in rows if r["family"] == fam and r["generator"] == g], metric)
        per_family.append(rec)
        out.append(rec)
    deltas = [r["delta_pct"] for r in per_family if r["delta_pct"] is not None]
    overall = {"family": "Overall", "delta_pct": float(np.mean(deltas)) if deltas else None}
    means = {g: [r[f"e_{g}"] for r in per_family if r[f"e_{g}"] is not None] for g in GENERATORS}
    for g in GENERATORS:
        overall[f"e_{g}"] = float(np.mean(means[g])) if len(means[g]) == len(per_family) else None
    if None not in (overall["e_base"], overall["e_base+CW"], overall["e_oracle"]):
        overall["gap_closed"] = gap_closed(overall["e_base"], overall["e_base+CW"], overall["e_oracle"])
    else:
        overall["gap_closed"] = None
    out.append(overall)
    return out


def fmt(v) -> str:
    """CSV cell: exact float repr, "--" for a suppressed ratio, "" for missing."""
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def to_csv(rows: list[dict], columns: Sequence[str], dash: Sequence[str] = ()) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["--" if (c in dash and r.get(c) is None) else fmt(r.get(c)) for c in columns])
    return buf.getvalue()


CELL_COLUMNS = ("family", "seed", "generator", "ate_error", "pehe", "mmd", "jsd", "tstr",
                "ci_pass", "final_omega", "true_ate", "flags")
SUMMARY_COLUMNS = ("family", "e_base", "e_base+CW", "e_oracle", "delta_pct", "gap_closed",
                   "mmd_base", "mmd_base+CW", "jsd_base", "jsd_base+CW", "tstr_base", "tstr_base+CW",
                   "ci_pass_base", "ci_pass_base+CW", "pehe_base", "pehe_base+CW")


# --- manifests ---------------------------------------------------------------------

def write_manifest(path: Path, command: str, config: dict, seeds: Sequence[int], **extra) -> dict:
    doc = {
        "command": command, "config": config, "seeds": list(seeds), "tool_version": __version__,
        "python": platform.python_version(), "numpy": np.__version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"), **extra,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def benchmark(cfg: BenchConfig, out_dir: str | Path, jobs: int = 1,
              emit_plot_data: bool = False) -> list[dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out / "manifest.json", "benchmark", cfg.to_dict(), cfg.seeds)
    cells = [(cfg, fam, s) for fam in cfg.families for s in cfg.seeds]
    rows = run_cells(cells, jobs)
    summary = summarize(rows, cfg.families)
    (out / "cells.csv").write_text(to_csv(rows, CELL_COLUMNS))
    (out / "summary.csv").write_text(to_csv(summary, SUMMARY_COLUMNS, dash=("gap_closed",)))
    if emit_plot_data:
        (out / "plot_tier1.csv").write_text(
            to_csv(summary, ("family", "delta_pct", "gap_closed"), dash=("gap_closed",)))
    return summary


# --- ablations ----------------------------------------------------------------------

def ablation_variants(kind: str, cfg: BenchConfig) -> list[tuple[str, BenchConfig]]:
    """Settings swept by each ablation, as (label, config) pairs on the LG family."""
    base = replace(cfg, families=("LG",), oracle=False)
    if kind == "constraint_type":
        return [(f"alpha={a:g},beta={b:g}", replace(base, alm=replace(cfg.alm, alpha=a, beta=b)))
                for a, b in ((0, 0), (1, 0), (0, 1), (1, 1))]
    if kind == "knowledge_fraction":
        return [(f"reveal={f:g}", replace(base, reveal=f)) for f in (0.0, 0.25, 0.5, 0.75, 1.0)]
    if kind == "wrong_edges":
        return [(f"corrupt={c:g}", replace(base, corrupt=c)) for c in (0.0, 0.1, 0.3, 0.5)]
    if kind == "alm_vs_fixed":
        return [("ALM", base)] + [(f"fixed={lam:g}", replace(base, alm=replace(cfg.alm, fixed_lambda=lam)))
                                  for lam in (0.1, 1.0, 10.0)]
    if kind == "e0":
        return [("E0=full", base), ("E0=none", replace(base, use_e0=False))]
    raise ValueError(f"unknown ablation {kind!r}; choose from {', '.join(ABLATIONS)}")


ABLATION_COLUMNS = ("setting", "seed", "generator", "ate_error", "pehe", "mmd", "jsd", "tstr",
                    "ci_pass", "final_omega", "flags")
ABLATION_SUMMARY_COLUMNS = ("setting", "ate_error", "mmd", "jsd", "tstr", "ci_pass", "final_omega",
                            "base_ate_error", "delta_pct")


def summarize_ablation(rows: list[dict], labels: Sequence[str]) -> list[dict]:
    out = []
    for lab in labels:
        cw = [r for r in rows if r["setting"] == lab and r["generator"] == "base+CW"]
        bs = [r for r in rows if r["setting"] == lab and r["generator"] == "base"]
        rec = {"setting": lab, **{m: _mean(cw, m) for m in
                                  ("ate_error", "mmd", "jsd", "tstr", "ci_pass", "final_omega")}}
        rec["base_ate_error"] = _mean(bs, "ate_error")
        rec["delta_pct"] = (delta_pct(rec["base_ate_error"], rec["ate_error"])
                            if rec["base_ate_error"] and rec["ate_error"] is not None else None)
        out.append(rec)
    return out


def ablate(kind: str, cfg: BenchConfig, out_dir: str | Path, jobs: int = 1,
           emit_plot_data: bool = False) -> list[dict]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    variants = ablation_variants(kind, cfg)
    write_manifest(out / "manifest.json", f"ablate:{kind}", cfg.to_dict(), cfg.seeds,
                   settings=[lab for lab, _ in variants])
    cells = [(vc, "LG", s) for _, vc in variants for s in vc.seeds]
    labels = [lab for lab, vc in variants for _ in vc.seeds]
    flat = run_cells(cells, jobs)
    rows = []
    per_cell = len(GENERATORS) - 1
    for i, r in enumerate(flat):
        rows.append({"setting": labels[i // per_cell], **r})
    summary = summarize_ablation(rows, [lab for lab, _ in variants])
    (out / f"{kind}.csv").write_text(to_csv(rows, ABLATION_COLUMNS))
    (out / f"{kind}_summary.csv").write_text(to_csv(summary, ABLATION_SUMMARY_COLUMNS))
    if emit_plot_data:
        (out / f"plot_{kind}.csv").write_text(
            to_csv(summary, ("setting", "ate_error", "ci_pass", "mmd", "final_omega")))
    return summary

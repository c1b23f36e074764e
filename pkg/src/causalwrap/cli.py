"""Command-line entry point: ``causalwrap <subcommand> ...``.

Exit codes: 0 success, 2 validation error, 3 numeric failure, 4 IO error.
Log level comes from the ``CAUSALWRAP_LOG`` environment variable.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .alm import AlmConfig, CausalWrap, SchemaMismatch, fit_wrap
from .base_gen import make_sampler
from .data import ColumnSchema, Kind, Provenance, Table, read_csv, write_csv
from .harness import ABLATIONS, BenchConfig, ablate, benchmark, covariates_for, write_manifest
from .knowledge import CausalKnowledge, parse_knowledge
from .metrics import GroundTruth, assemble_report
from .penalties import fit_edge_models
from .scm import Scm, ancestral_sample, ground_truth_ate, individual_effects, random_scm_with_path

log = logging.getLogger("causalwrap")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _load_json(path: str | None) -> dict:
    if path is None:
        return {}
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, dict):
        raise ValueError(f"config {path} must hold a JSON object")
    return doc


def _load_knowledge(path: str | None, names: list[str]) -> CausalKnowledge:
    if path is None:
        return CausalKnowledge()
    if path.endswith(".json"):
        return CausalKnowledge.load_json(path)
    return parse_knowledge(path, names)


# --- subcommands ----------------------------------------------------------------

def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ss = np.random.SeedSequence(args.seed).spawn(3)
    rng_scm, rng_data, rng_truth = (np.random.default_rng(s) for s in ss)
    scm, t, y = random_scm_with_path(args.family, args.d, rng_scm)
    scm.save(out / "scm.json")
    write_csv(ancestral_sample(scm, args.n, rng_data), out / "train.csv")
    ate = ground_truth_ate(scm, t, y, args.n_mc, rng_truth)
    ite_table, ite = individual_effects(scm, t, y, args.n_ite, rng_truth)
    schema = ite_table.schema + (ColumnSchema("ite", Kind.CONTINUOUS),)
    write_csv(Table(schema, np.column_stack([ite_table.rows, ite]), Provenance.ORACLE), out / "ite.csv")
    truth = {"ate": ate, "treatment": t, "outcome": y, "names": [c.name for c in scm.schema()],
             "edges": [list(e) for e in scm.edges], "family": scm.family.value, "seed": args.seed,
             "ite_file": "ite.csv"}
    (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    write_manifest(out / "manifest.json", "simulate", vars_clean(args), [args.seed])
    return EXIT_OK


def _base_spec(args, stored: dict | None = None) -> dict:
    spec = dict(stored or {})
    for key in ("base", "noise", "base_path", "train"):
        v = getattr(args, key, None)
        if v is not None:
            spec[key] = v
    spec.setdefault("base", "bootstrap")
    spec.setdefault("noise", 0.5)
    return spec


def _make_base(spec: dict, real: Table):
    return make_sampler(spec["base"], real, noise=spec["noise"], path=spec.get("base_path"))


def cmd_wrap(args) -> int:
    real = read_csv(args.train)
    cfg_doc = _load_json(args.config)
    if args.seed is not None:
        cfg_doc["seed"] = args.seed
    if args.fixed_lambda is not None:
        cfg_doc["fixed_lambda"] = args.fixed_lambda
    cfg = AlmConfig.from_dict(cfg_doc)
    k = _load_knowledge(args.knowledge, real.names)
    if k.empty:
        log.warning("knowledge is empty: training with the utility surrogate only")
    spec = _base_spec(args)
    spec["train"] = str(Path(args.train).resolve())
    base = _make_base(spec, real)
    if args.resume:
        from .alm import train as alm_train
        from .data import standardize
        wrap, doc = CausalWrap.load(args.resume)
        state = wrap.restore_state(doc)
        if state is None:
            raise ValueError("checkpoint has no training state to resume from")
        real_std, _ = standardize(real, wrap.stats)
        _, tlog, state = alm_train(real_std, base, k, cfg, wrap.stats, wrap.models, state=state)
    else:
        wrap, tlog, state = fit_wrap(real, base, k, cfg)
    wrap.save(args.out, state, base_spec=spec, config=cfg.to_dict())
    if args.log:
        tlog.write_jsonl(args.log)
    return EXIT_OK


def cmd_generate(args) -> int:
    wrap, doc = CausalWrap.load(args.checkpoint)
    spec = _base_spec(args, doc.get("base_spec"))
    if "train" not in spec:
        raise ValueError("base spec has no training table; pass --train")
    real = read_csv(spec["train"])
    if [c.name for c in real.schema] != [c.name for c in wrap.schema]:
        raise SchemaMismatch("training table schema does not match the checkpoint")
    base = _make_base(spec, real)
    seed = args.seed if args.seed is not None else 0
    write_csv(wrap.generate(base, args.n, np.random.default_rng(seed)), args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    real = read_csv(args.real)
    syn = read_csv(args.syn, schema=real.schema, provenance=Provenance.CORRECTED)
    truth_doc = _load_json(args.truth) if args.truth else None
    k = _load_knowledge(args.knowledge, real.names)
    if truth_doc is not None:
        t, y = truth_doc["treatment"], truth_doc["outcome"]
    else:
        if args.treatment is None or args.outcome is None:
            raise ValueError("without --truth, pass --treatment and --outcome column names")
        t, y = real.index(args.treatment), real.index(args.outcome)
    truth = None
    if truth_doc is not None:
        ite_table = ite = None
        ite_path = Path(args.truth).parent / truth_doc.get("ite_file", "ite.csv")
        if ite_path.exists():
            full = read_csv(ite_path)
            ite_table = Table(full.schema[:-1], full.rows[:, :-1], Provenance.ORACLE)
            ite = full.rows[:, -1]
        truth = GroundTruth(truth_doc["ate"], ite_table, ite)
        scm_path = Path(args.truth).parent / "scm.json"
        cov = (covariates_for(Scm.load(scm_path), t, y) if scm_path.exists()
               else [j for j in range(real.d) if j not in (t, y)])
    else:
        cov = [j for j in range(real.d) if j not in (t, y)]
    test = read_csv(args.test) if args.test else None
    rep = assemble_report(real, syn, k, fit_edge_models(real, k), t, y, cov, real_test=test,
                          truth=truth, seed=args.seed or 0)
    doc = rep.to_dict()
    doc["covariates"] = [real.names[j] for j in cov]
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _bench_config(args) -> BenchConfig:
    if getattr(args, "manifest", None):
        doc = _load_json(args.manifest)
        return BenchConfig.from_dict(doc["config"])
    doc = _load_json(args.config)
    if args.seeds:
        doc["seeds"] = args.seeds
    elif args.seed is not None:
        doc["seeds"] = [args.seed]
    return BenchConfig.from_dict(doc)


def cmd_benchmark(args) -> int:
    summary = benchmark(_bench_config(args), args.out, jobs=args.jobs, emit_plot_data=args.emit_plot_data)
    for rec in summary:
        gc = rec.get("gap_closed")
        dp = rec.get("delta_pct")
        print(f"{rec['family']:8s} delta%={'' if dp is None else f'{dp:+.1f}':>7s} "
              f"gap_closed={'--' if gc is None else f'{100 * gc:+.1f}%'}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    summary = ablate(args.kind, _bench_config(args), args.out, jobs=args.jobs,
                     emit_plot_data=args.emit_plot_data)
    for rec in summary:
        print(f"{rec['setting']:22s} ate_error={rec['ate_error']} ci_pass={rec['ci_pass']} "
              f"final_omega={rec['final_omega']}")
    return EXIT_OK


def vars_clean(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="causalwrap",
                                description="Correct black-box tabular generators with partial causal knowledge.")
    p.add_argument("--version", action="version", version=f"causalwrap {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="draw an SCM, training data and ground truth")
    s.add_argument("--family", choices=("LG", "NLA", "MT"), default="LG")
    s.add_argument("--d", type=int, default=10)
    s.add_argument("--n", type=int, default=5000)
    s.add_argument("--n-mc", type=int, default=100_000)
    s.add_argument("--n-ite", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    def base_flags(q, defaults: bool) -> None:
        q.add_argument("--base", choices=("bootstrap", "copula", "file"),
                       default="bootstrap" if defaults else None)
        q.add_argument("--noise", type=float, default=0.5 if defaults else None)
        q.add_argument("--base-path", help="CSV of base samples for --base file")

    w = sub.add_parser("wrap", help="train a correction map")
    w.add_argument("--train", required=True)
    w.add_argument("--knowledge")
    base_flags(w, True)
    w.add_argument("--config", help="JSON file with training hyperparameters")
    w.add_argument("--fixed-lambda", type=float)
    w.add_argument("--resume", help="checkpoint to continue the outer loop from")
    w.add_argument("--seed", type=int)
    w.add_argument("--out", required=True)
    w.add_argument("--log", help="JSONL training log")
    w.set_defaults(func=cmd_wrap)

    g = sub.add_parser("generate", help="sample from a trained wrapper")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--train", help="override the training table recorded in the checkpoint")
    base_flags(g, False)
    g.add_argument("--n", type=int, default=5000)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    e = sub.add_parser("evaluate", help="compute an evaluation report")
    e.add_argument("--real", required=True)
    e.add_argument("--syn", required=True)
    e.add_argument("--test", help="held-out real rows for TSTR")
    e.add_argument("--truth", help="truth.json written by simulate")
    e.add_argument("--knowledge")
    e.add_argument("--treatment")
    e.add_argument("--outcome")
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    def run_flags(q) -> None:
        q.add_argument("--config", help="JSON benchmark config (nested 'alm' block)")
        q.add_argument("--manifest", help="re-run exactly the configuration of a manifest")
        q.add_argument("--seed", type=int)
        q.add_argument("--seeds", type=int, nargs="+")
        q.add_argument("--jobs", type=int, default=1)
        q.add_argument("--emit-plot-data", action="store_true")
        q.add_argument("--out", required=True)

    b = sub.add_parser("benchmark", help="Tier-1 matrix of generators x SCM families x seeds")
    run_flags(b)
    b.set_defaults(func=cmd_benchmark)

    a = sub.add_parser("ablate", help="one ablation sweep on the LG family")
    a.add_argument("kind", choices=ABLATIONS)
    run_flags(a)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("CAUSALWRAP_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except OSError as exc:
        log.error("%s: %s", args.command, exc)
        return EXIT_IO
    except ArithmeticError as exc:
        log.error("%s: numeric failure: %s", args.command, exc)
        return EXIT_NUMERIC
    except (ValueError, KeyError) as exc:
        log.error("%s: %s", args.command, exc)
        return EXIT_VALIDATION

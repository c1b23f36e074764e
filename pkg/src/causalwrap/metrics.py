"""Conventional and structural metrics for synthetic tables.

MMD and JSD compare distributions, TSTR measures downstream usefulness, and
the CI pass rate checks forbidden pairs through residual correlations. All
metrics return plain floats; degenerate situations are reported through
flags instead of NaN.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import jensenshannon

from ._fit import fit_logistic, sigmoid
from .data import Table
from .estimators import Agreement, ate_agreement, ate_or, cate_pehe
from .knowledge import CausalKnowledge
from .penalties import EdgeModel, residualize

MMD_MAX_ROWS = 2000
MMD_MEDIAN_ROWS = 500
JSD_BINS = 20
CI_THRESHOLD = 0.08
TSTR_RIDGE = 1e-3
REPORT_VERSION = 1


def _check_schema(a: Table, b: Table) -> None:
    if [c.name for c in a.schema] != [c.name for c in b.schema]:
        raise ValueError("tables do not share a schema")


def _subsample(x: np.ndarray, cap: int, seed: int) -> np.ndarray:
    if len(x) <= cap:
        return x
    idx = np.sort(np.random.default_rng(seed).choice(len(x), size=cap, replace=False))
    return x[idx]


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def mmd(real: Table, syn: Table, max_rows: int = MMD_MAX_ROWS, seed: int = 0) -> float:
    """Biased MMD^2 with a Gaussian kernel, floored at 0.

    Both tables are standardized with pooled column statistics and each is
    subsampled to ``max_rows`` with its own generator seeded by ``seed``, so
    the value is symmetric in its arguments. Bandwidth: median pairwise
    squared distance over the first rows of each table.
    """
    _check_schema(real, syn)
    x = _subsample(real.rows, max_rows, seed)
    y = _subsample(syn.rows, max_rows, seed)
    pooled = np.vstack([x, y])
    mu, sd = pooled.mean(0), pooled.std(0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    x, y = (x - mu) / sd, (y - mu) / sd
    head = np.vstack([x[:MMD_MEDIAN_ROWS], y[:MMD_MEDIAN_ROWS]])
    d = _sqdist(head, head)
    med = np.median(d[np.triu_indices(len(head), 1)]) if len(head) > 1 else 1.0
    sigma2 = max(float(med), 1e-6)
    kxx = np.exp(-_sqdist(x, x) / (2 * sigma2)).mean()
    kyy = np.exp(-_sqdist(y, y) / (2 * sigma2)).mean()
    kxy = np.exp(-_sqdist(x, y) / (2 * sigma2)).mean()
    return max(float(kxx + kyy - 2.0 * kxy), 0.0)


def column_jsd(a: np.ndarray, b: np.ndarray, binary: bool, bins: int = JSD_BINS) -> float:
    """Jensen-Shannon divergence (natural log) between two columns."""
    if binary:
        p, q = a.mean(), b.mean()
        pa, pb = np.array([1 - p, p]), np.array([1 - q, q])
    else:
        lo, hi = min(a.min(), b.min()), max(a.max(), b.max())
        if hi == lo:
            return 0.0
        edges = np.linspace(lo, hi, bins + 1)
        pa = np.histogram(a, edges)[0] + 1.0
        pb = np.histogram(b, edges)[0] + 1.0
        pa, pb = pa / pa.sum(), pb / pb.sum()
    return float(jensenshannon(pa, pb) ** 2)


def jsd(real: Table, syn: Table, bins: int = JSD_BINS) -> float:
    """Mean column-wise JSD; binary columns compare Bernoulli laws, continuous
    columns 20 equal-width bins over the pooled range with add-one smoothing."""
    _check_schema(real, syn)
    binary = real.binary_mask
    return float(np.mean([column_jsd(real.rows[:, j], syn.rows[:, j], bool(binary[j]), bins)
                          for j in range(real.d)]))


@dataclass
class TstrResult:
    accuracy: float
    single_class: bool = False


def tstr(real_test: Table, syn_train: Table, label_col: int | str,
         threshold: float | None = None) -> TstrResult:
    """Train a logistic classifier on synthetic rows, report accuracy on real rows.

    With ``threshold`` the label is ``column > threshold`` (binarizing a
    continuous column); otherwise the column must already be binary.
    Features are all other columns, standardized with synthetic statistics.
    """
    _check_schema(real_test, syn_train)
    j = real_test.index(label_col) if isinstance(label_col, str) else int(label_col)

    def split(t: Table) -> tuple[np.ndarray, np.ndarray]:
        lab = t.rows[:, j]
        lab = (lab > threshold).astype(float) if threshold is not None else lab
        if not np.all((lab == 0) | (lab == 1)):
            raise ValueError("label column is not binary; pass a threshold")
        return np.delete(t.rows, j, axis=1), lab

    xs, ys = split(syn_train)
    xr, yr = split(real_test)
    if ys.min() == ys.max():
        return TstrResult(float(np.mean(yr == ys[0])), single_class=True)
    mu, sd = xs.mean(0), xs.std(0, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    b, c, _ = fit_logistic((xs - mu) / sd, ys, ridge=TSTR_RIDGE)
    pred = sigmoid(b + ((xr - mu) / sd) @ c) > 0.5
    return TstrResult(float(np.mean(pred == (yr == 1))))


@dataclass
class CiPassResult:
    rate: float
    empty: bool = False
    correlations: dict = field(default_factory=dict)


def residual_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation; a constant column counts as uncorrelated."""
    a, b = a - a.mean(), b - b.mean()
    den = math.sqrt(float(a @ a) * float(b @ b))
    return float(a @ b) / den if den > 0 else 0.0


def ci_pass_rate(syn: Table, k: CausalKnowledge, edge_models: Sequence[EdgeModel]) -> CiPassResult:
    """Fraction of forbidden pairs whose residual correlation on ``syn`` has
    absolute value strictly below 0.08."""
    pairs = k.forbidden_pairs
    if not pairs:
        return CiPassResult(1.0, empty=True)
    res = residualize(syn.rows, edge_models)
    corr = {f"{a}->{b}": residual_correlation(res[:, a], res[:, b]) for a, b in pairs}
    rate = float(np.mean([abs(v) < CI_THRESHOLD for v in corr.values()]))
    return CiPassResult(rate, correlations=corr)


@dataclass
class GroundTruth:
    """Simulation ground truth: the true ATE and, optionally, rows with known ITEs."""

    ate: float
    ite_table: Table | None = None
    ite: np.ndarray | None = None


@dataclass
class EvalReport:
    mmd: float
    jsd: float
    tstr: float
    ci_pass: float
    seed: int
    provenance: dict
    ate_error: float | None = None
    ate_estimate: float | None = None
    pehe: float | None = None
    ate_agreement: float | None = None
    agreement: dict | None = None
    flags: list[str] = field(default_factory=list)
    version: int = REPORT_VERSION

    def __post_init__(self) -> None:
        for name in ("mmd", "jsd", "tstr", "ci_pass", "ate_error", "pehe", "ate_agreement"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise ValueError(f"metric {name} is not finite")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")


def assemble_report(
    real: Table,
    syn: Table,
    k: CausalKnowledge,
    edge_models: Sequence[EdgeModel],
    t: int,
    y: int,
    covariates: Sequence[int],
    real_test: Table | None = None,
    truth: GroundTruth | None = None,
    seed: int = 0,
    label_threshold: float | None = None,
) -> EvalReport:
    """Compute every metric for one (generator, seed, dataset) cell.

    With ``truth`` the report carries the outcome-regression ATE error (and
    PEHE when ITEs are supplied); without it, ensemble ATE agreement against
    ``real`` is reported instead. TSTR uses ``real_test`` when given, else
    ``real``; the label is the outcome column, binarized at
    ``label_threshold`` (default: real median) when continuous.
    """
    if real is None or syn is None:
        raise ValueError("missing required table")
    _check_schema(real, syn)
    flags: list[str] = []
    test = real_test if real_test is not None else real
    if real.binary_mask[y]:
        thr = None
    else:
        thr = float(np.median(real.rows[:, y])) if label_threshold is None else label_threshold
    tr = tstr(test, syn, y, thr)
    if tr.single_class:
        flags.append("tstr_single_class")
    ci = ci_pass_rate(syn, k, edge_models)
    if ci.empty:
        flags.append("ci_no_forbidden_pairs")
    rep = EvalReport(
        mmd=mmd(real, syn, seed=seed), jsd=jsd(real, syn), tstr=tr.accuracy, ci_pass=ci.rate,
        seed=seed, provenance={"real": real.provenance.value, "syn": syn.provenance.value},
        flags=flags,
    )
    if truth is not None:
        try:
            est = ate_or(syn, t, y, covariates)
            rep.ate_estimate = est
            rep.ate_error = abs(est - truth.ate)
        except Exception as exc:  # estimator failure is a flag, not a crash
            flags.append(f"ate_failed: {exc}")
        if truth.ite_table is not None and truth.ite is not None:
            try:
                rep.pehe = cate_pehe(syn, truth.ite_table, truth.ite, t, y, covariates)
            except Exception as exc:
                flags.append(f"pehe_failed: {exc}")
    else:
        ag: Agreement = ate_agreement(real, syn, t, y, covariates)
        rep.agreement = ag.to_dict()
        if ag.failed:
            flags.append(f"ate_agreement_failed: {ag.reason}")
        else:
            rep.ate_agreement = ag.value
    for name in ("ate_error", "pehe"):
        v = getattr(rep, name)
        if v is not None and not math.isfinite(v):
            setattr(rep, name, None)
            flags.append(f"{name}_non_finite")
    return rep

"""Simulated structural causal models with known interventional ground truth.

Three families:

* ``LG``  -- linear mechanisms, additive standard-normal noise.
* ``NLA`` -- ``s + q * s**2 + eps`` with ``s = sum_p c_p * tanh(x_p)``.
* ``MT``  -- half the nodes binary (logistic link, Bernoulli noise), the rest NLA.

Nodes are column indices ``0..d-1``; ``order`` is a random topological order.
All exogenous randomness is drawn up front (one normal and one uniform per
cell), so an intervened draw and an observational draw from the same seed
share noise and differ only on descendants of the intervened node.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._fit import sigmoid
from .base_gen import Sampler
from .data import ColumnSchema, Kind, Provenance, Table


class Family(str, enum.Enum):
    LG = "LG"
    NLA = "NLA"
    MT = "MT"


class MechKind(str, enum.Enum):
    LINEAR = "linear"
    NONLINEAR_ADDITIVE = "nonlinear_additive"
    LOGISTIC_BINARY = "logistic_binary"


class NoCausalPath(ValueError):
    pass


COEF_LOW, COEF_HIGH = 0.5, 1.5


@dataclass(frozen=True)
class Mechanism:
    kind: MechKind
    parents: tuple[int, ...] = ()
    coef: tuple[float, ...] = ()
    noise_sd: float = 1.0
    quad: float = 0.0
    intercept: float = 0.0

    def mean(self, x: np.ndarray) -> np.ndarray:
        """Noise-free part of the mechanism (a probability for binary nodes)."""
        n = x.shape[0]
        if not self.parents:
            base = np.full(n, self.intercept)
        else:
            pa = x[:, list(self.parents)]
            c = np.asarray(self.coef)
            if self.kind is MechKind.NONLINEAR_ADDITIVE:
                s = np.tanh(pa) @ c
                base = self.intercept + s + self.quad * s**2
            else:
                base = self.intercept + pa @ c
        if self.kind is MechKind.LOGISTIC_BINARY:
            return sigmoid(base)
        return base

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value, "parents": list(self.parents), "coef": list(self.coef),
            "noise_sd": self.noise_sd, "quad": self.quad, "intercept": self.intercept,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Mechanism":
        return cls(MechKind(d["kind"]), tuple(d["parents"]), tuple(d["coef"]),
                   d["noise_sd"], d["quad"], d["intercept"])


@dataclass(frozen=True)
class InterventionSpec:
    node: int
    value: float


@dataclass(frozen=True)
class Scm:
    family: Family
    order: tuple[int, ...]
    mechanisms: tuple[Mechanism, ...]
    names: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        d = len(self.mechanisms)
        if sorted(self.order) != list(range(d)):
            raise ValueError("order must be a permutation of the nodes")
        pos = {v: k for k, v in enumerate(self.order)}
        for j, m in enumerate(self.mechanisms):
            if any(pos[p] >= pos[j] for p in m.parents):
                raise ValueError(f"node {j}: parent violates topological order")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"x{j}" for j in range(d)))

    @property
    def d(self) -> int:
        return len(self.mechanisms)

    @property
    def edges(self) -> list[tuple[int, int]]:
        return sorted((p, j) for j, m in enumerate(self.mechanisms) for p in m.parents)

    @property
    def kinds(self) -> list[Kind]:
        return [Kind.BINARY if m.kind is MechKind.LOGISTIC_BINARY else Kind.CONTINUOUS
                for m in self.mechanisms]

    @property
    def roots(self) -> list[int]:
        return [j for j, m in enumerate(self.mechanisms) if not m.parents]

    def schema(self) -> tuple[ColumnSchema, ...]:
        return tuple(ColumnSchema(n, k) for n, k in zip(self.names, self.kinds))

    def children(self, i: int) -> list[int]:
        return [j for j, m in enumerate(self.mechanisms) if i in m.parents]

    def ancestors(self, j: int) -> set[int]:
        out: set[int] = set()
        stack = list(self.mechanisms[j].parents)
        while stack:
            p = stack.pop()
            if p not in out:
                out.add(p)
                stack.extend(self.mechanisms[p].parents)
        return out

    def descendants(self, i: int) -> set[int]:
        out: set[int] = set()
        stack = self.children(i)
        while stack:
            c = stack.pop()
            if c not in out:
                out.add(c)
                stack.extend(self.children(c))
        return out

    # -- serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {"family": self.family.value, "order": list(self.order), "names": list(self.names),
                "mechanisms": [m.to_dict() for m in self.mechanisms]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Scm":
        return cls(Family(d["family"]), tuple(d["order"]),
                   tuple(Mechanism.from_dict(m) for m in d["mechanisms"]), tuple(d["names"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "Scm":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _coef(rng: np.random.Generator, k: int) -> tuple[float, ...]:
    mag = rng.uniform(COEF_LOW, COEF_HIGH, size=k)
    sign = np.where(rng.random(k) < 0.5, -1.0, 1.0)
    return tuple(float(v) for v in mag * sign)


def random_scm(
    family: Family | str,
    d: int = 10,
    expected_degree: float = 2.0,
    rng: np.random.Generator | None = None,
    quad_weight: float = 0.1,
) -> Scm:
    """Random DAG over a uniformly random topological order.

    Every forward pair gets an edge independently with probability
    ``expected_degree / (d - 1)``, so the expected edge count is
    ``d * expected_degree / 2``.
    """
    family = Family(family)
    if d < 2:
        raise ValueError("need d >= 2")
    rng = rng if rng is not None else np.random.default_rng()
    order = [int(v) for v in rng.permutation(d)]
    p = min(1.0, expected_degree / (d - 1))
    parents: dict[int, list[int]] = {j: [] for j in range(d)}
    for a in range(d):
        for b in range(a + 1, d):
            if rng.random() < p:
                parents[order[b]].append(order[a])

    binary: set[int] = set()
    if family is Family.MT:
        binary = {int(v) for v in rng.choice(d, size=d // 2, replace=False)}

    mechs = []
    for j in range(d):
        pa = tuple(sorted(parents[j]))
        coef = _coef(rng, len(pa))
        if j in binary:
            mechs.append(Mechanism(MechKind.LOGISTIC_BINARY, pa, coef, noise_sd=0.0))
        elif family is Family.LG:
            mechs.append(Mechanism(MechKind.LINEAR, pa, coef))
        else:
            mechs.append(Mechanism(MechKind.NONLINEAR_ADDITIVE, pa, coef, quad=quad_weight))
    return Scm(family, tuple(order), tuple(mechs))


def _interventions(intervention) -> dict[int, float]:
    if intervention is None:
        return {}
    if isinstance(intervention, InterventionSpec):
        return {intervention.node: float(intervention.value)}
    if isinstance(intervention, Mapping):
        return {int(k): float(v) for k, v in intervention.items()}
    return {s.node: float(s.value) for s in intervention}


def _propagate(scm: Scm, eps: np.ndarray, u: np.ndarray, do: Mapping[int, float]) -> np.ndarray:
    n = eps.shape[0]
    x = np.zeros((n, scm.d))
    for j in scm.order:
        if j in do:
            x[:, j] = do[j]
            continue
        m = scm.mechanisms[j]
        mu = m.mean(x)
        if m.kind is MechKind.LOGISTIC_BINARY:
            x[:, j] = (u[:, j] < mu).astype(float)
        else:
            x[:, j] = mu + m.noise_sd * eps[:, j]
    return x


def _noise(scm: Scm, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    return rng.standard_normal((n, scm.d)), rng.random((n, scm.d))


def ancestral_sample(
    scm: Scm,
    n: int,
    rng: np.random.Generator,
    intervention: InterventionSpec | Mapping[int, float] | Sequence[InterventionSpec] | None = None,
    provenance: Provenance = Provenance.REAL,
) -> Table:
    do = _interventions(intervention)
    for t in do:
        if not 0 <= t < scm.d:
            raise ValueError(f"intervention node {t} out of range")
    eps, u = _noise(scm, n, rng)
    return Table(scm.schema(), _propagate(scm, eps, u, do), provenance)


def choose_treatment_outcome(scm: Scm) -> tuple[int, int]:
    """Outcome = sink of the topological order; treatment = its earliest ancestor."""
    y = scm.order[-1]
    anc = scm.ancestors(y)
    if not anc:
        raise NoCausalPath("no causal path: outcome node has no ancestors")
    pos = {v: k for k, v in enumerate(scm.order)}
    return min(anc, key=pos.__getitem__), y


def ate_monte_carlo(
    scm: Scm, t: int, y: int, rng: np.random.Generator, n_mc: int = 100_000,
    treated: float = 1.0, control: float = 0.0,
) -> tuple[float, float]:
    """Two independent interventional runs; returns ``(ate, standard_error)``."""
    y1 = ancestral_sample(scm, n_mc, rng, {t: treated}).rows[:, y]
    y0 = ancestral_sample(scm, n_mc, rng, {t: control}).rows[:, y]
    ate = float(y1.mean() - y0.mean())
    se = math.sqrt(y1.var(ddof=1) / n_mc + y0.var(ddof=1) / n_mc)
    return ate, se


def ground_truth_ate(scm: Scm, t: int, y: int, n_mc: int = 100_000,
                     rng: np.random.Generator | None = None) -> float:
    rng = rng if rng is not None else np.random.default_rng()
    return ate_monte_carlo(scm, t, y, rng, n_mc)[0]


def linear_path_effect(scm: Scm, t: int, y: int) -> float:
    """Total effect of ``t`` on ``y`` in a linear SCM: sum over directed paths of
    the product of edge coefficients (explicit path enumeration)."""
    if any(m.kind is not MechKind.LINEAR for m in scm.mechanisms):
        raise ValueError("closed-form path effect needs an all-linear SCM")
    weight = {(p, j): c for j, m in enumerate(scm.mechanisms) for p, c in zip(m.parents, m.coef)}

    def walk(node: int) -> float:
        if node == y:
            return 1.0
        return sum(weight[(node, c)] * walk(c) for c in scm.children(node))

    return walk(t) if t != y else 1.0


def individual_effects(
    scm: Scm, t: int, y: int, n: int, rng: np.random.Generator,
    treated: float = 1.0, control: float = 0.0,
) -> tuple[Table, np.ndarray]:
    """Observational draw plus per-row effects ``Y(treated) - Y(control)`` under shared noise."""
    eps, u = _noise(scm, n, rng)
    obs = _propagate(scm, eps, u, {})
    y1 = _propagate(scm, eps, u, {t: treated})[:, y]
    y0 = _propagate(scm, eps, u, {t: control})[:, y]
    return Table(scm.schema(), obs, Provenance.ORACLE), y1 - y0


def mechanism_effect(
    scm: Scm, i: int, j: int, rng: np.random.Generator, n: int = 10_000, delta: float = 0.5,
) -> float:
    """Average partial effect of parent ``i`` on the mechanism of ``j``.

    Linear mechanisms return the coefficient; otherwise the mean finite
    difference ``(f_j(x_i + delta) - f_j(x)) / delta`` over oracle samples.
    """
    m = scm.mechanisms[j]
    if i not in m.parents:
        raise ValueError(f"{i} is not a parent of {j}")
    if m.kind is MechKind.LINEAR:
        return float(m.coef[m.parents.index(i)])
    x = ancestral_sample(scm, n, rng).rows
    xp = x.copy()
    xp[:, i] += delta
    return float(np.mean(m.mean(xp) - m.mean(x)) / delta)


class OracleSampler(Sampler):
    """Draws straight from the true SCM (full-knowledge reference generator)."""

    kind = "oracle"

    def __init__(self, scm: Scm):
        self.scm = scm
        self.schema = scm.schema()

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return ancestral_sample(self.scm, n, rng).rows


def oracle_sampler(scm: Scm) -> OracleSampler:
    return OracleSampler(scm)


def random_scm_with_path(
    family: Family | str, d: int, rng: np.random.Generator, expected_degree: float = 2.0,
    max_tries: int = 1000, **kw,
) -> tuple[Scm, int, int]:
    """Redraw until the outcome node has at least one ancestor."""
    for _ in range(max_tries):
        scm = random_scm(family, d, expected_degree, rng, **kw)
        try:
            t, y = choose_treatment_outcome(scm)
        except NoCausalPath:
            continue
        return scm, t, y
    raise NoCausalPath(f"no SCM with a causal path after {max_tries} draws")

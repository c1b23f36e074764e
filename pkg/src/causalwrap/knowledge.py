"""Partial causal knowledge: trusted edges, forbidden edges, monotone constraints.

Knowledge file grammar (one statement per line, ``#`` starts a comment,
column names must not contain whitespace, ``->``, ``<`` or commas)::

    [trusted]
    severity -> treatment
    treatment -> outcome

    [forbidden]
    treatment -> age
    treatment -> sex   weight=2.0

    [monotone]
    severity -> outcome +
    dose -> pressure -   given age, sex

    [temporal]
    age, sex < treatment < outcome

A ``[temporal]`` line lists tiers separated by ``<``; every edge from a later
tier into an earlier one is added to the forbidden set.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .scm import MechKind, Scm, mechanism_effect


class KnowledgeError(ValueError):
    pass


Edge = tuple[int, int]


@dataclass(frozen=True)
class MonotoneConstraint:
    cause: int
    effect: int
    given: frozenset[int] = frozenset()
    sign: int = 1

    def __post_init__(self) -> None:
        if self.sign not in (1, -1):
            raise KnowledgeError("monotone sign must be +1 or -1")
        if self.cause == self.effect:
            raise KnowledgeError("monotone constraint needs distinct cause and effect")
        if self.cause in self.given or self.effect in self.given:
            raise KnowledgeError("conditioning set must exclude cause and effect")


@dataclass(frozen=True)
class CausalKnowledge:
    trusted: frozenset[Edge] = frozenset()
    forbidden: frozenset[Edge] = frozenset()
    monotone: tuple[MonotoneConstraint, ...] = ()
    weights: Mapping[Edge, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "trusted", frozenset(map(tuple, self.trusted)))
        object.__setattr__(self, "forbidden", frozenset(map(tuple, self.forbidden)))
        object.__setattr__(self, "monotone", tuple(self.monotone))
        object.__setattr__(self, "weights", dict(self.weights))
        validate_knowledge(self)

    @property
    def empty(self) -> bool:
        return not (self.forbidden or self.monotone)

    def weight(self, edge: Edge) -> float:
        return self.weights.get(edge, 1.0)

    def trusted_parents(self, d: int) -> dict[int, list[int]]:
        pa: dict[int, list[int]] = {j: [] for j in range(d)}
        for i, j in sorted(self.trusted):
            pa[j].append(i)
        return pa

    @property
    def forbidden_pairs(self) -> list[Edge]:
        return sorted(self.forbidden)

    def to_dict(self) -> dict:
        return {
            "trusted": [list(e) for e in sorted(self.trusted)],
            "forbidden": [list(e) for e in sorted(self.forbidden)],
            "monotone": [{"cause": m.cause, "effect": m.effect, "given": sorted(m.given),
                          "sign": m.sign} for m in self.monotone],
            "weights": [[a, b, w] for (a, b), w in sorted(self.weights.items())],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "CausalKnowledge":
        return cls(
            frozenset(tuple(e) for e in d.get("trusted", [])),
            frozenset(tuple(e) for e in d.get("forbidden", [])),
            tuple(MonotoneConstraint(m["cause"], m["effect"], frozenset(m.get("given", [])), m["sign"])
                  for m in d.get("monotone", [])),
            {(a, b): float(w) for a, b, w in d.get("weights", [])},
        )

    def save_json(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load_json(cls, path: str | Path) -> "CausalKnowledge":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _has_cycle(edges: Iterable[Edge]) -> bool:
    adj: dict[int, list[int]] = {}
    for a, b in edges:
        adj.setdefault(a, []).append(b)
    state: dict[int, int] = {}

    def visit(u: int) -> bool:
        state[u] = 1
        for v in adj.get(u, ()):
            s = state.get(v, 0)
            if s == 1 or (s == 0 and visit(v)):
                return True
        state[u] = 2
        return False

    return any(state.get(u, 0) == 0 and visit(u) for u in list(adj))


def validate_knowledge(k: CausalKnowledge) -> None:
    for a, b in k.trusted | k.forbidden:
        if a == b:
            raise KnowledgeError(f"self-loop on column {a}")
    overlap = k.trusted & k.forbidden
    if overlap:
        raise KnowledgeError(f"edges both trusted and forbidden: {sorted(overlap)}")
    if _has_cycle(k.trusted):
        raise KnowledgeError("trusted edges contain a cycle")
    keys = [(m.cause, m.effect, m.given) for m in k.monotone]
    if len(set(keys)) != len(keys):
        raise KnowledgeError("duplicate monotone constraints")
    for e, w in k.weights.items():
        if not w > 0:
            raise KnowledgeError(f"weight for {e} must be positive")
        if e not in k.forbidden:
            raise KnowledgeError(f"weight given for non-forbidden pair {e}")


# --- text format ------------------------------------------------------------

_SECTIONS = ("trusted", "forbidden", "monotone", "temporal")
_EDGE = re.compile(r"^(\S+)\s*->\s*(\S+)(.*)$")


def parse_knowledge_text(text: str, names: Sequence[str]) -> CausalKnowledge:
    index = {n: j for j, n in enumerate(names)}

    def col(name: str, lineno: int) -> int:
        try:
            return index[name]
        except KeyError:
            raise KnowledgeError(f"line {lineno}: unknown column {name!r}") from None

    section = None
    trusted: set[Edge] = set()
    forbidden: set[Edge] = set()
    temporal: set[Edge] = set()
    weights: dict[Edge, float] = {}
    monotone: list[MonotoneConstraint] = []

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            if section not in _SECTIONS:
                raise KnowledgeError(f"line {lineno}: unknown section [{section}]")
            continue
        if section is None:
            raise KnowledgeError(f"line {lineno}: statement outside a section")

        if section == "temporal":
            tiers = [[col(t.strip(), lineno) for t in tier.split(",") if t.strip()]
                     for tier in line.split("<")]
            if len(tiers) < 2 or any(not t for t in tiers):
                raise KnowledgeError(f"line {lineno}: temporal line needs >= 2 non-empty tiers")
            for lo, early in enumerate(tiers):
                for late in tiers[lo + 1:]:
                    temporal.update((b, a) for a in early for b in late)
            continue

        m = _EDGE.match(line)
        if not m:
            raise KnowledgeError(f"line {lineno}: expected 'a -> b', got {line!r}")
        a, b, rest = col(m.group(1), lineno), col(m.group(2), lineno), m.group(3).strip()

        if section == "trusted":
            if rest:
                raise KnowledgeError(f"line {lineno}: unexpected trailing text {rest!r}")
            trusted.add((a, b))
        elif section == "forbidden":
            forbidden.add((a, b))
            if rest:
                wm = re.fullmatch(r"weight\s*=\s*(\S+)", rest)
                if not wm:
                    raise KnowledgeError(f"line {lineno}: expected 'weight=<w>', got {rest!r}")
                weights[(a, b)] = float(wm.group(1))
        else:
            mm = re.fullmatch(r"([+-])(?:\s+given\s+(.+))?", rest)
            if not mm:
                raise KnowledgeError(f"line {lineno}: expected sign '+'/'-' [given ...]")
            given = frozenset(col(s.strip(), lineno) for s in (mm.group(2) or "").split(",") if s.strip())
            cons = MonotoneConstraint(a, b, given, 1 if mm.group(1) == "+" else -1)
            if any((c.cause, c.effect, c.given) == (a, b, given) for c in monotone):
                raise KnowledgeError(f"line {lineno}: duplicate monotone constraint")
            monotone.append(cons)

    clash = temporal & trusted
    if clash:
        raise KnowledgeError(f"temporal ordering forbids trusted edges {sorted(clash)}")
    return CausalKnowledge(frozenset(trusted), frozenset(forbidden | temporal), tuple(monotone), weights)


def parse_knowledge(path: str | Path, names: Sequence[str]) -> CausalKnowledge:
    return parse_knowledge_text(Path(path).read_text(), names)


def format_knowledge(k: CausalKnowledge, names: Sequence[str]) -> str:
    """Render ``k`` in the text grammar (temporal tiers are already expanded)."""
    out = ["[trusted]"]
    out += [f"{names[a]} -> {names[b]}" for a, b in sorted(k.trusted)]
    out += ["", "[forbidden]"]
    for e in sorted(k.forbidden):
        w = k.weights.get(e)
        out.append(f"{names[e[0]]} -> {names[e[1]]}" + (f"   weight={w!r}" if w is not None else ""))
    out += ["", "[monotone]"]
    for m in k.monotone:
        line = f"{names[m.cause]} -> {names[m.effect]} {'+' if m.sign > 0 else '-'}"
        if m.given:
            line += "   given " + ", ".join(names[s] for s in sorted(m.given))
        out.append(line)
    return "\n".join(out) + "\n"


# --- simulated knowledge ------------------------------------------------------

def forbidden_root_pairs(scm: Scm) -> set[Edge]:
    """Ordered pairs ``(a, b)`` of non-adjacent nodes where ``a`` or ``b`` is a root.

    Pairs joined by a true edge in either direction are excluded: the reverse
    of a true edge is not a non-edge, and a symmetric dependence penalty on it
    would fight the true mechanism.
    """
    adjacent = set(scm.edges) | {(b, a) for a, b in scm.edges}
    roots = set(scm.roots)
    return {(a, b) for a in range(scm.d) for b in range(scm.d)
            if a != b and (a, b) not in adjacent and (a in roots or b in roots)}


def derive_knowledge_from_scm(
    scm: Scm,
    reveal_fraction: float = 0.5,
    n_mono: int = 2,
    corrupt_fraction: float = 0.0,
    rng: np.random.Generator | None = None,
    mono_samples: int = 10_000,
    delta: float = 0.5,
) -> CausalKnowledge:
    """Reveal part of the true graph as expert knowledge.

    Trusted: ``ceil(reveal_fraction * |E|)`` true edges, of which
    ``round(corrupt_fraction * |trusted|)`` are swapped for random non-edges
    (kept acyclic). Forbidden: non-edges touching a root, minus anything
    trusted. Monotone: the ``n_mono`` true edges with the largest absolute
    average effect, signed by that effect, conditioning on the child's other
    true parents.
    """
    if not 0 <= reveal_fraction <= 1 or not 0 <= corrupt_fraction <= 1:
        raise KnowledgeError("fractions must lie in [0, 1]")
    rng = rng if rng is not None else np.random.default_rng()
    true_edges = scm.edges
    n_reveal = math.ceil(reveal_fraction * len(true_edges) - 1e-12)
    if n_reveal > len(true_edges):
        raise KnowledgeError("cannot reveal more edges than exist")
    picked = [true_edges[i] for i in sorted(rng.choice(len(true_edges), size=n_reveal, replace=False))] \
        if n_reveal else []

    n_wrong = int(math.floor(corrupt_fraction * len(picked) + 0.5))
    if n_wrong:
        drop = set(rng.choice(len(picked), size=n_wrong, replace=False).tolist())
        kept = [e for i, e in enumerate(picked) if i not in drop]
        true = set(true_edges)
        candidates = [(a, b) for a in range(scm.d) for b in range(scm.d)
                      if a != b and (a, b) not in true]
        for idx in rng.permutation(len(candidates)):
            if len(kept) == len(picked):
                break
            e = candidates[idx]
            if e in kept or (e[1], e[0]) in kept or _has_cycle(kept + [e]):
                continue
            kept.append(e)
        if len(kept) < len(picked):
            raise KnowledgeError("corruption target unsatisfiable")
        picked = kept
    trusted = frozenset(picked)

    forbidden = frozenset(forbidden_root_pairs(scm) - trusted)

    monotone: list[MonotoneConstraint] = []
    if n_mono:
        effects = []
        for a, b in true_edges:
            m = scm.mechanisms[b]
            if m.kind is MechKind.LINEAR:
                eff = mechanism_effect(scm, a, b, rng)
            else:
                eff = mechanism_effect(scm, a, b, rng, n=mono_samples, delta=delta)
            effects.append((abs(eff), (a, b), eff))
        effects.sort(key=lambda t: (-t[0], t[1]))
        for _, (a, b), eff in effects[:n_mono]:
            if eff == 0:
                continue
            given = frozenset(p for p in scm.mechanisms[b].parents if p != a)
            monotone.append(MonotoneConstraint(a, b, given, 1 if eff > 0 else -1))
    return CausalKnowledge(trusted, forbidden, tuple(monotone))

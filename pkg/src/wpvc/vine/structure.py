"""Regular-vine data model, structural checks and the text file format."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace
from itertools import combinations

from ..paircopula import CopulaFamily, PairCopula


class VineStructureError(ValueError):
    pass


@dataclass(frozen=True)
class VineEdge:
    """One vine edge: conditioned pair ``a < b`` given ``conditioning``.

    ``copula`` is ``None`` until copulas are assigned; a truncated edge acts
    as the independence copula whatever ``copula`` holds.
    """

    a: int
    b: int
    conditioning: frozenset = frozenset()
    partial_rho: float = 0.0
    copula: PairCopula | None = None
    truncated: bool = False

    def __post_init__(self):
        a, b = int(self.a), int(self.b)
        if a == b:
            raise VineStructureError("conditioned variables must differ")
        if a > b:
            a, b = b, a
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "conditioning", frozenset(int(x) for x in self.conditioning))
        if a in self.conditioning or b in self.conditioning:
            raise VineStructureError("conditioned variable inside its conditioning set")

    @property
    def conditioned(self) -> frozenset:
        return frozenset((self.a, self.b))

    @property
    def union(self) -> frozenset:
        """Complete union: conditioned plus conditioning variables."""
        return self.conditioning | {self.a, self.b}

    @property
    def key(self):
        return (self.a, self.b, tuple(sorted(self.conditioning)))

    @property
    def active(self) -> bool:
        return (not self.truncated) and self.copula is not None and self.copula.family is not CopulaFamily.INDEPENDENCE

    def label(self, labels=None) -> str:
        name = (lambda i: str(labels[i])) if labels else str
        cond = ",".join(name(i) for i in sorted(self.conditioning))
        return f"{name(self.a)},{name(self.b)}" + (f";{cond}" if cond else "")


@dataclass(frozen=True)
class VineStructure:
    """Regular vine ``T_1 .. T_{n-1}``; ``trees[j-1]`` holds the edges of ``T_j``."""

    n: int
    trees: tuple
    inverse_indicator: int = 0
    score: float = float("nan")
    truncation_threshold: float = 0.0
    labels: tuple = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(tuple(t) for t in self.trees))
        # labels are names; keep them as strings so the text format round-trips
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))

    @property
    def edges(self) -> list:
        return [e for tree in self.trees for e in tree]

    @property
    def n_edges(self) -> int:
        return sum(len(t) for t in self.trees)

    @property
    def n_nodes(self) -> int:
        """Nodes across all trees: ``n`` variables plus the edges of T_1..T_{n-2}."""
        return self.n + sum(len(t) for t in self.trees[:-1])

    @property
    def n_truncated(self) -> int:
        return sum(e.truncated for e in self.edges)

    @property
    def n_parameters(self) -> int:
        return sum(e.copula.n_params for e in self.edges if e.active)

    def replace_edges(self, fn) -> "VineStructure":
        """New structure with ``fn(edge)`` applied to every edge."""
        return replace(self, trees=tuple(tuple(fn(e) for e in t) for t in self.trees))

    def validate(self):
        """Raise :class:`VineStructureError` unless this is a regular vine."""
        validate_trees(self.n, self.trees)

    def m_children(self, edge: VineEdge):
        """The two edges of the previous tree that ``edge`` joins."""
        j = len(edge.conditioning) + 1
        if j == 1:
            return (edge.a,), (edge.b,)
        lower = {e.union: e for e in self.trees[j - 2]}
        return lower[edge.union - {edge.b}], lower[edge.union - {edge.a}]


def validate_trees(n: int, trees):
    if n < 2:
        raise VineStructureError("a vine needs at least two variables")
    if len(trees) != n - 1:
        raise VineStructureError(f"expected {n - 1} trees, got {len(trees)}")
    seen = set()
    prev_unions = [frozenset({i}) for i in range(n)]
    for j, tree in enumerate(trees, start=1):
        if len(tree) != n - j:
            raise VineStructureError(f"tree {j} has {len(tree)} edges, expected {n - j}")
        node_index = {u: i for i, u in enumerate(prev_unions)}
        parent = list(range(len(prev_unions)))

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        unions = []
        for e in tree:
            if len(e.conditioning) != j - 1:
                raise VineStructureError(f"edge {e.key} in tree {j} has conditioning size {len(e.conditioning)}")
            if not all(0 <= i < n for i in e.union):
                raise VineStructureError(f"edge {e.key} references unknown variables")
            left, right = e.union - {e.b}, e.union - {e.a}
            if left not in node_index or right not in node_index:
                raise VineStructureError(f"edge {e.key} in tree {j} does not join two nodes of tree {j - 1}")
            if j > 1 and len(left ^ right) != 2:
                raise VineStructureError(f"proximity condition fails for edge {e.key}")
            ra, rb = find(node_index[left]), find(node_index[right])
            if ra == rb:
                raise VineStructureError(f"tree {j} contains a cycle at edge {e.key}")
            parent[ra] = rb
            pair = e.conditioned
            if pair in seen:
                raise VineStructureError(f"pair {sorted(pair)} is a conditioned set twice")
            seen.add(pair)
            unions.append(e.union)
        prev_unions = unions
    if len(seen) != n * (n - 1) // 2:
        raise VineStructureError("not every variable pair is a conditioned set")


def all_pairs(n):
    return [frozenset(p) for p in combinations(range(n), 2)]


# -- text format ----------------------------------------------------------------

_HEADER = "# wpvc vine structure v1"
_EDGE_RE = re.compile(
    r"^conditioned \{(?P<a>\d+),(?P<b>\d+)\} \| conditioning \{(?P<cond>[\d,]*)\} : "
    r"(?P<fam>[a-z_]+)\((?P<params>[^)]*)\) : (?P<rho>\S+) : (?P<trunc>true|false)$"
)


def _fmt(x: float) -> str:
    return repr(float(x))


def dumps(v: VineStructure) -> str:
    """Serialize; floats use ``repr`` so write-then-read is exact."""
    lines = [
        _HEADER,
        f"n = {v.n}",
        f"l = {v.inverse_indicator}",
        f"R = {_fmt(v.score)}",
        f"rho_trun = {_fmt(v.truncation_threshold)}",
    ]
    if v.labels:
        lines.append("labels = " + ",".join(str(x) for x in v.labels))
    for j, tree in enumerate(v.trees, start=1):
        lines.append(f"tree {j}")
        for e in tree:
            cond = ",".join(str(i) for i in sorted(e.conditioning))
            if e.copula is None:
                fam = "none()"
            else:
                fam = f"{e.copula.family.value}({','.join(_fmt(p) for p in e.copula.params)})"
            lines.append(
                f"conditioned {{{e.a},{e.b}}} | conditioning {{{cond}}} : {fam} : "
                f"{_fmt(e.partial_rho)} : {'true' if e.truncated else 'false'}"
            )
    return "\n".join(lines) + "\n"


def loads(text: str) -> VineStructure:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != _HEADER:
        raise VineStructureError("missing vine structure header")
    meta, trees, current = {}, [], None
    for ln in lines[1:]:
        if ln.startswith("tree "):
            current = []
            trees.append(current)
            continue
        m = _EDGE_RE.match(ln)
        if m:
            if current is None:
                raise VineStructureError("edge line before any tree line")
            cond = frozenset(int(x) for x in m["cond"].split(",") if x)
            fam = m["fam"]
            cop = None
            if fam != "none":
                params = tuple(float(x) for x in m["params"].split(",") if x)
                cop = PairCopula(CopulaFamily(fam), params)
            current.append(VineEdge(int(m["a"]), int(m["b"]), cond, float(m["rho"]), cop, m["trunc"] == "true"))
            continue
        key, sep, val = ln.partition("=")
        if not sep:
            raise VineStructureError(f"unparseable line: {ln!r}")
        meta[key.strip()] = val.strip()
    labels = tuple(meta["labels"].split(",")) if "labels" in meta else ()
    v = VineStructure(
        n=int(meta["n"]),
        trees=trees,
        inverse_indicator=int(meta.get("l", 0)),
        score=float(meta.get("R", "nan")),
        truncation_threshold=float(meta.get("rho_trun", 0.0)),
        labels=labels,
    )
    v.validate()
    return v


def write(v: VineStructure, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(v))


def read(path) -> VineStructure:
    with open(path, encoding="utf-8") as fh:
        return loads(fh.read())



"""Marked tetrahedra, Gram signatures and tessellation enumeration.

A marked tetrahedron assigns an integer (or infinity) to each of its six
edges; faces are labeled 0..3 and the mark on the edge shared by faces i, j
is n_ij.  Edge tuples are always ordered (n01, n02, n03, n12, n13, n23).
The Gram matrix T has unit diagonal and T_ij = -cos(pi / n_ij); its
signature decides the space form carrying the reflection group generated by
the four face planes: positive definite -> S^3, one zero eigenvalue -> R^3,
signature (3,1) -> H^3.

Four two-parameter families cover all compact marked tetrahedra with a mark
exceeding 3 (faces are diagram nodes, unlisted marks are 2):

* ``A(a,b)``: opposite edges marked a and b (reducible group I2(a) x I2(b));
* ``B(a,b)``: linear diagram a-3-b;
* ``C(a)``:   star diagram with arms 3, 3, a;
* ``D(a,b)``: 4-cycle diagram with marks (a, 3, b, 3).

They satisfy the identifications A23=B22, A33=D22, B23=C2, B33=D23.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
import sympy

from .errors import DegenerateBeyondTolerance

__all__ = [
    "INF",
    "EDGE_ORDER",
    "family_a",
    "family_b",
    "family_c",
    "family_d",
    "canonical_edges",
    "classify_vertex_triple",
    "gram_matrix",
    "gram_signature",
    "classify",
    "enumerate_tetrahedra",
    "flow_targets",
    "Tetrahedron",
]

INF = math.inf
EDGE_ORDER = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
_EDGE_INDEX = {pair: k for k, pair in enumerate(EDGE_ORDER)}

# Vertex i of the tetrahedron is opposite face i; its link triangle is cut by
# the three edges shared by the remaining faces.
VERTEX_EDGES = (
    ((1, 2), (1, 3), (2, 3)),
    ((0, 2), (0, 3), (2, 3)),
    ((0, 1), (0, 3), (1, 3)),
    ((0, 1), (0, 2), (1, 2)),
)

COMPACT_TRIPLES = {(2, 3, 3), (2, 3, 4), (2, 3, 5)}
PARACOMPACT_TRIPLES = {(3, 3, 3), (2, 4, 4), (2, 3, 6)}


def _edges_from_pairs(marks: dict[tuple[int, int], float]) -> tuple:
    edges = [2] * 6
    for (i, j), n in marks.items():
        edges[_EDGE_INDEX[(min(i, j), max(i, j))]] = n
    return tuple(edges)


def family_a(a: int, b: int) -> tuple:
    """Opposite edges marked a and b."""
    return _edges_from_pairs({(0, 1): a, (2, 3): b})


def family_b(a: int, b: int) -> tuple:
    """Linear diagram a-3-b over the face path 0-1-2-3."""
    return _edges_from_pairs({(0, 1): a, (1, 2): 3, (2, 3): b})


def family_c(a: int) -> tuple:
    """Star diagram: face 0 joined to the others with marks 3, 3, a."""
    return _edges_from_pairs({(0, 1): 3, (0, 2): 3, (0, 3): a})


def family_d(a: int, b: int) -> tuple:
    """Cycle diagram with marks (a, 3, b, 3) around the face cycle 0-1-2-3."""
    return _edges_from_pairs({(0, 1): a, (1, 2): 3, (2, 3): b, (0, 3): 3})


_PERMS = list(itertools.permutations(range(4)))


def _permute_edges(edges, perm) -> tuple:
    out = [0] * 6
    for k, (i, j) in enumerate(EDGE_ORDER):
        a, b = perm[i], perm[j]
        out[_EDGE_INDEX[(min(a, b), max(a, b))]] = edges[k]
    return tuple(out)


def canonical_edges(edges) -> tuple:
    """Lexicographically minimal edge tuple over all face relabelings."""
    return min(_permute_edges(edges, p) for p in _PERMS)


def classify_vertex_triple(a, b, c) -> str | None:
    """Class of a vertex link (2,2,n)/(2,3,k) etc; None if inadmissible."""
    t = tuple(sorted((a, b, c), key=lambda v: (v is INF, v)))
    if t[0] == 2 and t[1] == 2 and t[2] != INF and t[2] >= 2:
        return "compact"
    if t in COMPACT_TRIPLES:
        return "compact"
    if t in PARACOMPACT_TRIPLES:
        return "paracompact"
    if t == (2, 2, INF):
        return "degenerate"
    if t[0] == 1 and t[1] == t[2]:
        return "degenerate"
    return None


def vertex_class(edges) -> str | None:
    """Weakest vertex-link class over the four vertices; None if invalid."""
    rank = {"compact": 0, "paracompact": 1, "degenerate": 2}
    worst = "compact"
    for triple in VERTEX_EDGES:
        cls = classify_vertex_triple(*(edges[_EDGE_INDEX[e]] for e in triple))
        if cls is None:
            return None
        if rank[cls] > rank[worst]:
            worst = cls
    return worst


def _gram_entry(n) -> float:
    if n is INF or n == INF:
        return -1.0
    return -math.cos(math.pi / n)


def gram_matrix(edges) -> np.ndarray:
    t = np.eye(4)
    for k, (i, j) in enumerate(EDGE_ORDER):
        t[i, j] = t[j, i] = _gram_entry(edges[k])
    return t


def _gram_entry_exact(n):
    if n is INF or n == INF:
        return sympy.Integer(-1)
    return -sympy.cos(sympy.pi / sympy.Integer(int(n)))


def _signature_exact(edges) -> tuple[int, int, int]:
    """Exact (positive, zero, negative) eigenvalue counts via Descartes."""
    t = sympy.eye(4)
    for k, (i, j) in enumerate(EDGE_ORDER):
        t[i, j] = t[j, i] = _gram_entry_exact(edges[k])
    x = sympy.Symbol("x")
    p = sympy.Poly(t.charpoly(x).as_expr(), x)
    coeffs = [sympy.simplify(sympy.radsimp(c)) for c in p.all_coeffs()]
    zeros = 0
    while coeffs and coeffs[-1].is_zero:
        zeros += 1
        coeffs = coeffs[:-1]
    signs = []
    for c in coeffs:
        if c.is_zero:
            continue
        val = c.evalf(50)
        signs.append(1 if val > 0 else -1)
    # charpoly of a real symmetric matrix has only real roots, so Descartes'
    # rule is exact: sign changes count the positive eigenvalues.
    pos = sum(1 for u, v in zip(signs, signs[1:]) if u * v < 0)
    return pos, zeros, 4 - zeros - pos


def gram_signature(edges, sig_tol: float = 1e-10) -> str:
    """Space form of the Gram matrix: 'S3', 'R3' or 'H3'.

    Decided numerically; eigenvalues within sig_tol of zero are resolved
    exactly (symbolic cosines), so Euclidean cases are never misclassified.
    """
    eig = np.linalg.eigvalsh(gram_matrix(edges))
    if np.any(np.abs(eig) < max(sig_tol, 1e-12) * 100):
        pos, zeros, neg = _signature_exact(edges)
    else:
        pos = int(np.sum(eig > 0))
        zeros = 0
        neg = 4 - pos
    if pos == 4:
        return "S3"
    if pos == 3 and zeros == 1:
        return "R3"
    if pos == 3 and neg == 1:
        return "H3"
    raise DegenerateBeyondTolerance(
        "gram signature (%d,%d,%d) is not a tessellation signature"
        % (pos, zeros, neg))


@dataclass
class Tetrahedron:
    edges: tuple
    family: str | None = None
    spaceform: str | None = None
    vertex_class: str | None = None
    surface_tag: str | None = None
    identifications: tuple = field(default_factory=tuple)

    def to_dict(self) -> dict:
        def enc(n):
            return "inf" if n is INF or n == INF else int(n)
        return {
            "edges": [enc(n) for n in self.edges],
            "family": self.family,
            "spaceform": self.spaceform,
            "vertex_class": self.vertex_class,
            "surface_tag": self.surface_tag,
            "identifications": list(self.identifications),
        }


def classify(edges) -> Tetrahedron:
    """Classify an explicit edge-mark tuple (n01,n02,n03,n12,n13,n23)."""
    vc = vertex_class(edges)
    if vc is None:
        raise DegenerateBeyondTolerance(
            "vertex links %r are not reflection-group admissible"
            % (edges,))
    sf = gram_signature(edges)
    fam = _match_family(edges)
    return Tetrahedron(edges=tuple(edges), family=fam, spaceform=sf,
                       vertex_class=vc, surface_tag=_surface_tag(fam, sf))


def _family_table(max_n: int = 5) -> dict[tuple, str]:
    """Canonical edges -> family label for all A/B/C/D instances."""
    table: dict[tuple, str] = {}
    for a in range(2, max(max_n, 5) + 1):
        for b in range(a, max(max_n, 5) + 1):
            table.setdefault(canonical_edges(family_a(a, b)), "A%d%d" % (a, b))
    for a in range(2, 6):
        for b in range(a, 6):
            table.setdefault(canonical_edges(family_b(a, b)), "B%d%d" % (a, b))
    for a in range(2, 6):
        table.setdefault(canonical_edges(family_c(a)), "C%d" % a)
    for a in range(2, 6):
        for b in range(a, 6):
            table.setdefault(canonical_edges(family_d(a, b)), "D%d%d" % (a, b))
    return table


def _identification_groups() -> dict[tuple, tuple]:
    groups: dict[tuple, list] = {}
    for name, edges in _all_family_instances(8):
        groups.setdefault(canonical_edges(edges), []).append(name)
    return {k: tuple(sorted(set(v))) for k, v in groups.items()}


def _all_family_instances(max_n):
    for a in range(2, max_n + 1):
        for b in range(a, max_n + 1):
            yield "A%d%d" % (a, b), family_a(a, b)
    for a in range(2, 6):
        for b in range(a, 6):
            yield "B%d%d" % (a, b), family_b(a, b)
    for a in range(2, 6):
        yield "C%d" % a, family_c(a)
    for a in range(2, 6):
        for b in range(a, 6):
            yield "D%d%d" % (a, b), family_d(a, b)


def _match_family(edges) -> str | None:
    return _family_table(12).get(canonical_edges(edges))


# Classified compact tessellations.  The Euclidean triple tessellates a cube
# (B44, C4) and the rhombic dodecahedron (D33); the spherical sporadics are
# the seven non-A entries; the hyperbolic list is the nine compact
# (Lanner) tetrahedra.
COMPACT_R3 = ("B44", "C4", "D33")
SPORADIC_S3 = ("B23", "B24", "B25", "B33", "B34", "B35", "D24")
COMPACT_H3 = ("B45", "B55", "C5", "D25", "D34", "D35",
              "D44", "D45", "D55")

_SURFACE_TAGS = {
    "B44": "cube tessellation [4,3,4]",
    "C4": "cube tessellation (demicube subgroup)",
    "D33": "rhombic dodecahedron tessellation",
    "B23": "5-cell prism symmetry [2,3,3]",
    "B24": "16-cell prism symmetry [2,3,4]",
    "B25": "600-cell prism symmetry [2,3,5]",
    "B33": "5-cell symmetry [3,3,3]",
    "B34": "16-cell symmetry [3,3,4]",
    "B35": "600-cell symmetry [3,3,5]",
    "D24": "24-cell symmetry [3,4,3]",
}


def _surface_tag(fam: str | None, spaceform: str) -> str | None:
    if fam is None:
        return None
    if fam.startswith("A") and len(fam) >= 3 and spaceform == "S3":
        return "lawson xi_{%s,%s}" % (str(int(fam[1]) - 1), str(int(fam[2:]) - 1))
    return _SURFACE_TAGS.get(fam)


def _instance(fam: str) -> tuple:
    kind = fam[0]
    if kind == "A":
        return family_a(int(fam[1]), int(fam[2:]))
    if kind == "B":
        return family_b(int(fam[1]), int(fam[2]))
    if kind == "C":
        return family_c(int(fam[1]))
    return family_d(int(fam[1]), int(fam[2]))


def enumerate_tetrahedra(max_n: int = 8, klass: str = "compact",
                         spaceform: str | None = None) -> list[Tetrahedron]:
    """Enumerate marked tetrahedra of the given class, deduplicated.

    klass='compact' follows the classification: Lawson A-family plus the
    seven spherical sporadics, the three Euclidean entries, and the nine
    compact hyperbolic entries.  'paracompact' and 'degenerate' are searched
    directly over admissible vertex links.
    """
    idents = _identification_groups()
    out: list[Tetrahedron] = []
    if klass == "compact":
        fams: list[str] = []
        for a in range(2, max_n + 1):
            for b in range(a, max_n + 1):
                fams.append("A%d%d" % (a, b))
        fams += list(SPORADIC_S3) + list(COMPACT_R3) + list(COMPACT_H3)
        seen: set[tuple] = set()
        for fam in fams:
            edges = _instance(fam)
            canon = canonical_edges(edges)
            if canon in seen:
                continue
            seen.add(canon)
            sf = gram_signature(edges)
            out.append(Tetrahedron(
                edges=edges, family=fam, spaceform=sf, vertex_class="compact",
                surface_tag=_surface_tag(fam, sf),
                identifications=idents.get(canon, (fam,))))
    elif klass in ("paracompact", "degenerate"):
        marks: list = list(range(2, max_n + 1))
        if klass == "degenerate":
            marks = [1] + marks + [INF]
        seen = set()
        for edges in itertools.product(marks, repeat=6):
            canon = canonical_edges(edges)
            if canon in seen:
                continue
            vc = vertex_class(edges)
            if vc != klass:
                seen.add(canon)
                continue
            seen.add(canon)
            try:
                sf = gram_signature(edges)
            except DegenerateBeyondTolerance:
                continue
            fam = _match_family(edges)
            out.append(Tetrahedron(edges=edges, family=fam, spaceform=sf,
                                   vertex_class=vc,
                                   surface_tag=_surface_tag(fam, sf),
                                   identifications=idents.get(canon, ())))
    else:
        raise ValueError("unknown class %r" % klass)
    if spaceform is not None:
        out = [t for t in out if t.spaceform == spaceform]
    return out


# The CMC quadrilateral sits inside a tetrahedron with its four vertices on
# a 4-cycle of edges (one per pair of adjacent boundary planes) and the two
# remaining opposite edges as diagonals.  Opposite quadrilateral vertices
# share a cone angle, so the 4-cycle must carry marks (n0, n1, n0, n1); each
# admissible pairing yields one candidate target set.  This mapping is an
# interpretation of the quadrilateral description, not a verbatim table.
_DIAGONAL_PAIRS = (
    (((0, 1), (2, 3)), ((0, 2), (1, 3), (0, 3), (1, 2))),
    (((0, 2), (1, 3)), ((0, 1), (2, 3), (0, 3), (1, 2))),
    (((0, 3), (1, 2)), ((0, 1), (2, 3), (0, 2), (1, 3))),
)


def flow_targets(edges) -> list[dict]:
    """Candidate (n0, n1, r, s) flow targets for a marked tetrahedron."""
    targets = []
    for (d1, d2), cyc in _DIAGONAL_PAIRS:
        m = [edges[_EDGE_INDEX[e]] for e in cyc]
        # cyc lists the 4-cycle as (v0-edge, v2-edge, v1-edge, v3-edge):
        # opposite pairs are (m[0], m[1]) and (m[2], m[3]).
        if m[0] == m[1] and m[2] == m[3]:
            targets.append({
                "n0": m[0], "n1": m[2],
                "r": edges[_EDGE_INDEX[d1]], "s": edges[_EDGE_INDEX[d2]],
            })
    return targets

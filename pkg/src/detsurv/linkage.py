"""Bipartite links between the intermediate and target populations.

Population A (size ``n_a``, units ``i``) is sampled directly; population
B (size ``n_b``, units ``k``) is reached through the 0/1 link relation
``(i, k)``.  All matrices that are indexed by unit pairs in the full
``n_a * n_b`` dimension are stored here on the reduced *link index*: the
``D`` actual links sorted column-major (``k`` outer, ``i`` inner), which
matches the stacking ``m = i + (k - 1) n_a`` restricted to links.

The module also owns the two design parameter holders: the weight matrix
``theta`` (GWSM, column sums one) and the second-stage first-order
probabilities (one unit drawn per selected intermediate unit, row sums
one).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .kernel import Kernel

H2_TOL = 1e-10
ROW_SUM_TOL = 1e-10


class LinkageError(ValueError):
    """Invalid link structure or design parameter."""


@dataclass(frozen=True, eq=False)
class LinkStructure:
    """Reduced index over the nonzero links of a bipartite incidence.

    ``link_i[d]``/``link_k[d]`` give the intermediate and target unit of
    dense link ``d``; links are sorted by ``(k, i)``.  Every target unit
    must carry at least one link (units of B without links are rejected
    at ingestion).
    """

    n_a: int
    n_b: int
    link_i: np.ndarray
    link_k: np.ndarray

    def __post_init__(self) -> None:
        li = np.asarray(self.link_i, dtype=int)
        lk = np.asarray(self.link_k, dtype=int)
        if li.shape != lk.shape or li.ndim != 1 or li.size == 0:
            raise LinkageError("link index arrays must be equal-length nonempty vectors")
        if li.min() < 0 or li.max() >= self.n_a:
            raise LinkageError(f"intermediate indices outside [0, {self.n_a})")
        if lk.min() < 0 or lk.max() >= self.n_b:
            raise LinkageError(f"target indices outside [0, {self.n_b})")
        order = np.lexsort((li, lk))  # column-major: k outer, i inner
        li, lk = li[order].copy(), lk[order].copy()
        pairs = set(zip(li.tolist(), lk.tolist()))
        if len(pairs) != li.size:
            raise LinkageError("duplicate links after ingestion")
        covered = np.zeros(self.n_b, dtype=bool)
        covered[lk] = True
        if not covered.all():
            missing = np.flatnonzero(~covered)[:5].tolist()
            raise LinkageError(f"target units without links: {missing} ...")
        li.setflags(write=False)
        lk.setflags(write=False)
        object.__setattr__(self, "link_i", li)
        object.__setattr__(self, "link_k", lk)

        links_of_b = tuple(
            np.flatnonzero(lk == col) for col in range(self.n_b)
        )
        links_of_a = tuple(
            np.flatnonzero(li == row) for row in range(self.n_a)
        )
        object.__setattr__(self, "_links_of_b", links_of_b)
        object.__setattr__(self, "_links_of_a", links_of_a)
        object.__setattr__(self, "_row_order", np.lexsort((lk, li)))
        object.__setattr__(
            self, "_dense", {(int(a), int(b)): d for d, (a, b) in enumerate(zip(li, lk))}
        )

    @property
    def n_links(self) -> int:
        return int(self.link_i.size)

    def links_of_target(self, k: int) -> np.ndarray:
        """Dense link indices of column ``k`` (in column-major order)."""
        return self._links_of_b[k]

    def links_of_intermediate(self, i: int) -> np.ndarray:
        """Dense link indices of row ``i`` (in column-major order)."""
        return self._links_of_a[i]

    def a_adjacency(self, k: int) -> np.ndarray:
        """``U^A_k``: intermediate units linked to target ``k``."""
        return self.link_i[self._links_of_b[k]]

    def b_adjacency(self, i: int) -> np.ndarray:
        """``U^B_i``: target units linked to intermediate ``i``."""
        return self.link_k[self._links_of_a[i]]

    def dense_index(self, i: int, k: int) -> int:
        try:
            return self._dense[(int(i), int(k))]
        except KeyError:
            raise LinkageError(f"({i}, {k}) is not a link") from None

    @property
    def row_grouped_order(self) -> np.ndarray:
        """Dense indices permuted to group links by intermediate unit."""
        return self._row_order.copy()

    def degrees_a(self) -> np.ndarray:
        return np.bincount(self.link_i, minlength=self.n_a)

    def degrees_b(self) -> np.ndarray:
        return np.bincount(self.link_k, minlength=self.n_b)


def build_link_structure(n_a: int, n_b: int, edges) -> LinkStructure:
    """Build the reduced link index from an edge list of ``(i, k)`` pairs.

    Duplicate edges are dropped with a warning; target units with no
    links are a hard error.
    """
    seen: set[tuple[int, int]] = set()
    li, lk = [], []
    dupes = 0
    for i, k in edges:
        pair = (int(i), int(k))
        if pair in seen:
            dupes += 1
            continue
        seen.add(pair)
        li.append(pair[0])
        lk.append(pair[1])
    if dupes:
        warnings.warn(f"dropped {dupes} duplicate links", stacklevel=2)
    if not li:
        raise LinkageError("edge list is empty")
    return LinkStructure(n_a=n_a, n_b=n_b, link_i=np.array(li), link_k=np.array(lk))


def constraint_matrix(ls: LinkStructure) -> np.ndarray:
    """Unbiasedness constraint matrix ``E`` of shape (n_b, D).

    Row ``k`` has ones exactly at the links of target ``k``, so the
    weight constraint reads ``E @ theta == 1``.
    """
    e = np.zeros((ls.n_b, ls.n_links))
    e[ls.link_k, np.arange(ls.n_links)] = 1.0
    return e


# ---------------------------------------------------------------------------
# design parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class WeightMatrix:
    """GWSM link weights on the dense index; each target column sums to 1.

    Entries may be negative: positivity is not needed for unbiasedness.
    """

    links: LinkStructure
    theta: np.ndarray

    def __post_init__(self) -> None:
        th = np.asarray(self.theta, dtype=float)
        if th.shape != (self.links.n_links,):
            raise LinkageError(
                f"theta has shape {th.shape}, expected ({self.links.n_links},)"
            )
        if not np.all(np.isfinite(th)):
            raise LinkageError("theta contains non-finite entries")
        sums = np.bincount(self.links.link_k, weights=th, minlength=self.links.n_b)
        worst = np.abs(sums - 1.0).max()
        if worst > H2_TOL:
            raise LinkageError(
                f"column-sum (unbiasedness) constraint violated by {worst:.3e}"
            )
        th = th.copy()
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @classmethod
    def uniform(cls, ls: LinkStructure) -> "WeightMatrix":
        """Equal sharing within each target column (the standard start)."""
        deg = ls.degrees_b()
        return cls(ls, 1.0 / deg[ls.link_k])

    def dense(self) -> np.ndarray:
        """The (n_a, n_b) matrix with weights at links and zeros elsewhere."""
        t = np.zeros((self.links.n_a, self.links.n_b))
        t[self.links.link_i, self.links.link_k] = self.theta
        return t


@dataclass(frozen=True, eq=False)
class SecondStageDesign:
    """Second-stage first-order probabilities on links.

    One target unit is drawn per selected intermediate unit, the draws
    being independent across intermediate units; hence every linked row
    sums to one and all entries are strictly positive.
    """

    links: LinkStructure
    pi1ab: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.pi1ab, dtype=float)
        if p.shape != (self.links.n_links,):
            raise LinkageError(
                f"pi1ab has shape {p.shape}, expected ({self.links.n_links},)"
            )
        if not np.all(np.isfinite(p)):
            raise LinkageError("pi1ab contains non-finite entries")
        if p.min() <= 0.0 or p.max() > 1.0:
            raise LinkageError("second-stage probabilities must lie in (0, 1]")
        sums = np.bincount(self.links.link_i, weights=p, minlength=self.links.n_a)
        linked = self.links.degrees_a() > 0
        worst = np.abs(sums[linked] - 1.0).max()
        if worst > ROW_SUM_TOL:
            raise LinkageError(f"row-sum (fixed size one) constraint violated by {worst:.3e}")
        p = p.copy()
        p.setflags(write=False)
        object.__setattr__(self, "pi1ab", p)

    @classmethod
    def uniform(cls, ls: LinkStructure) -> "SecondStageDesign":
        deg = ls.degrees_a()
        return cls(ls, 1.0 / deg[ls.link_i])


def second_stage_kernel(design: SecondStageDesign) -> Kernel:
    """Block-diagonal projection kernel realizing the second stage.

    Rows and columns follow ``ls.row_grouped_order`` (links grouped by
    intermediate unit).  Each block is the rank-one projection
    ``sqrt(pi) sqrt(pi).T`` of its row, so the whole matrix is a
    projection whose rank is the number of linked intermediate units.
    """
    ls = design.links
    order = ls.row_grouped_order
    m = np.zeros((ls.n_links, ls.n_links))
    pos = 0
    for i in range(ls.n_a):
        deg = ls.links_of_intermediate(i).size
        if deg == 0:
            continue
        root = np.sqrt(design.pi1ab[order[pos : pos + deg]])
        m[pos : pos + deg, pos : pos + deg] = np.outer(root, root)
        pos += deg
    return Kernel(m, is_projection=True)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str
    index: int
    magnitude: float

    def __str__(self) -> str:
        return f"{self.kind}[{self.index}]: off by {self.magnitude:.3e}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple[Violation, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self) -> str:
        if self.ok:
            return "all design constraints satisfied"
        return "\n".join(str(v) for v in self.violations)


def validate(ls: LinkStructure, theta, pi1ab) -> ValidationReport:
    """Report-only check of the weight and second-stage constraints.

    Accepts raw vectors so that *invalid* candidates can be diagnosed;
    pass ``None`` to skip either side.
    """
    found: list[Violation] = []
    if theta is not None:
        th = np.asarray(getattr(theta, "theta", theta), dtype=float)
        if th.shape != (ls.n_links,):
            raise LinkageError(f"theta has shape {th.shape}, expected ({ls.n_links},)")
        sums = np.bincount(ls.link_k, weights=th, minlength=ls.n_b)
        for k in np.flatnonzero(np.abs(sums - 1.0) > H2_TOL):
            found.append(Violation("column_sum", int(k), float(abs(sums[k] - 1.0))))
    if pi1ab is not None:
        p = np.asarray(getattr(pi1ab, "pi1ab", pi1ab), dtype=float)
        if p.shape != (ls.n_links,):
            raise LinkageError(f"pi1ab has shape {p.shape}, expected ({ls.n_links},)")
        sums = np.bincount(ls.link_i, weights=p, minlength=ls.n_a)
        linked = ls.degrees_a() > 0
        for i in np.flatnonzero(linked & (np.abs(sums - 1.0) > ROW_SUM_TOL)):
            found.append(Violation("row_sum", int(i), float(abs(sums[i] - 1.0))))
        for d in np.flatnonzero(p <= 0.0):
            found.append(Violation("nonpositive_prob", int(d), float(-p[d])))
    return ValidationReport(tuple(found))

"""Closed-form inclusion probabilities of the indirectly sampled target
population, and the Horvitz-Thompson estimator they enable.

A target unit ``k`` enters the one-stage sample when at least one of its
linked intermediate units is drawn; it enters the two-stage sample when,
additionally, one of those units draws it at the second stage.  Both
events reduce to "some unit of a small restricted determinantal sample
survives", which turns each probability into a determinant of the size
of the adjacency set:

    one stage:  1 - det(I - K_adj)
    two stage:  1 - det(I - K_adj @ diag(second-stage probs))

Joint probabilities follow by inclusion-exclusion on the union of the
two adjacencies, with the two second-stage diagonals added (a unit may
serve both targets, but never both in one draw).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .kernel import Kernel
from .linkage import LinkStructure, SecondStageDesign

ROW_SUM_GUARD = 1e-12
NEGATIVE_GUARD = 1e-9


class TargetProbabilityError(ValueError):
    """Design inconsistency while evaluating target probabilities."""


def _clip_probability(value: float) -> float:
    if value < -NEGATIVE_GUARD or value > 1.0 + NEGATIVE_GUARD:
        raise TargetProbabilityError(
            f"computed probability {value!r} outside [0, 1]"
        )
    return min(max(value, 0.0), 1.0)


def _adjacency_det(ka: Kernel, adj: np.ndarray, scale: np.ndarray | None) -> float:
    sub = ka.entries[np.ix_(adj, adj)]
    if scale is not None:
        sub = sub * scale[None, :]
    return float(np.linalg.det(np.eye(adj.size) - sub))


def _second_stage_diag(
    design: SecondStageDesign, adj: np.ndarray, k: int
) -> np.ndarray:
    """Second-stage probabilities of drawing ``k`` per unit of ``adj`` (0 if unlinked)."""
    ls = design.links
    out = np.zeros(adj.size)
    for pos, i in enumerate(adj):
        row = ls.links_of_intermediate(int(i))
        hit = row[ls.link_k[row] == k]
        if hit.size:
            out[pos] = design.pi1ab[hit[0]]
    return out


def pi1b_first(ka: Kernel, ls: LinkStructure, unit_k: int) -> float:
    """One-stage probability that target ``unit_k`` is reached."""
    adj = ls.a_adjacency(unit_k)
    return _clip_probability(1.0 - _adjacency_det(ka, adj, None))


def pi1b_joint(ka: Kernel, ls: LinkStructure, unit_k: int, unit_l: int) -> float:
    """One-stage probability that both targets are reached."""
    if unit_k == unit_l:
        return pi1b_first(ka, ls, unit_k)
    adj_k = ls.a_adjacency(unit_k)
    adj_l = ls.a_adjacency(unit_l)
    union = np.union1d(adj_k, adj_l)
    return _clip_probability(
        1.0
        + _adjacency_det(ka, union, None)
        - _adjacency_det(ka, adj_k, None)
        - _adjacency_det(ka, adj_l, None)
    )


def pi2b_first(ka: Kernel, design: SecondStageDesign, unit_k: int) -> float:
    """Two-stage probability that target ``unit_k`` is selected."""
    ls = design.links
    adj = ls.a_adjacency(unit_k)
    return _clip_probability(
        1.0 - _adjacency_det(ka, adj, _second_stage_diag(design, adj, unit_k))
    )


def pi2b_joint(
    ka: Kernel, design: SecondStageDesign, unit_k: int, unit_l: int
) -> float:
    """Two-stage probability that both targets are selected.

    On the union adjacency the two per-target second-stage diagonals are
    summed; a unit linked to both contributes ``pi_(i,k) + pi_(i,l)``,
    which the row-sum constraint keeps at or below one.  A larger sum is
    a design inconsistency and raises.
    """
    if unit_k == unit_l:
        return pi2b_first(ka, design, unit_k)
    ls = design.links
    adj_k = ls.a_adjacency(unit_k)
    adj_l = ls.a_adjacency(unit_l)
    union = np.union1d(adj_k, adj_l)
    summed = _second_stage_diag(design, union, unit_k) + _second_stage_diag(
        design, union, unit_l
    )
    if summed.max() > 1.0 + ROW_SUM_GUARD:
        raise TargetProbabilityError(
            f"summed second-stage probabilities exceed 1 by "
            f"{summed.max() - 1.0:.3e} on the union adjacency"
        )
    return _clip_probability(
        1.0
        + _adjacency_det(ka, union, np.minimum(summed, 1.0))
        - _adjacency_det(ka, adj_k, _second_stage_diag(design, adj_k, unit_k))
        - _adjacency_det(ka, adj_l, _second_stage_diag(design, adj_l, unit_l))
    )


# ---------------------------------------------------------------------------
# aggregated view + Horvitz-Thompson estimation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TargetProbabilities:
    """First-order target probabilities with joints computed on demand.

    ``first_order[k]`` is the selection probability of target ``k`` in
    the regime the object was built for (one or two stage).  Joint pairs
    are evaluated lazily and cached; materializing all pairs is only
    done when the full variance is requested.
    """

    first_order: np.ndarray
    _joint_fn: Callable[[int, int], float]
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        p = np.asarray(self.first_order, dtype=float)
        if p.min() < -1e-12 or p.max() > 1.0 + 1e-12:
            raise TargetProbabilityError("first-order probabilities outside [0, 1]")
        p = np.clip(p, 0.0, 1.0)
        p.setflags(write=False)
        object.__setattr__(self, "first_order", p)

    @property
    def n_b(self) -> int:
        return self.first_order.size

    def joint(self, k: int, l: int) -> float:
        if k == l:
            return float(self.first_order[k])
        key = (min(k, l), max(k, l))
        if key not in self._cache:
            value = self._joint_fn(*key)
            hi = min(self.first_order[k], self.first_order[l])
            self._cache[key] = float(np.clip(value, 0.0, hi))
        return self._cache[key]

    def joint_matrix(self) -> np.ndarray:
        """All pairwise joints (quadratic in ``n_b``; request explicitly)."""
        n = self.n_b
        out = np.diag(self.first_order).copy()
        for k in range(n):
            for l in range(k + 1, n):
                out[k, l] = out[l, k] = self.joint(k, l)
        return out


def one_stage_target_probs(ka: Kernel, ls: LinkStructure) -> TargetProbabilities:
    first = np.array([pi1b_first(ka, ls, k) for k in range(ls.n_b)])
    return TargetProbabilities(first, lambda k, l: pi1b_joint(ka, ls, k, l))


def two_stage_target_probs(
    ka: Kernel, design: SecondStageDesign
) -> TargetProbabilities:
    ls = design.links
    first = np.array([pi2b_first(ka, design, k) for k in range(ls.n_b)])
    return TargetProbabilities(first, lambda k, l: pi2b_joint(ka, design, k, l))


def ht_target_estimate(probs: TargetProbabilities, sample, y) -> float:
    """Horvitz-Thompson total over a realized target sample."""
    yv = np.asarray(y, dtype=float)
    members = sorted(set(int(i) for i in getattr(sample, "members", sample)))
    if members and (members[0] < 0 or members[-1] >= probs.n_b):
        raise TargetProbabilityError("sample contains out-of-range target units")
    p = probs.first_order
    if any(p[k] <= 0.0 for k in members):
        raise TargetProbabilityError("selected unit has zero inclusion probability")
    return float(sum(yv[k] / p[k] for k in members))


def ht_target_variance(probs: TargetProbabilities, y) -> float:
    """Exact Horvitz-Thompson variance from first-order and joint probabilities.

    ``sum_kl y_k y_l (pi_kl - pi_k pi_l) / (pi_k pi_l)``.  Materializes
    every pairwise joint, so cost is quadratic in the population size.
    """
    yv = np.asarray(y, dtype=float)
    p = probs.first_order
    if p.min() <= 0.0:
        raise TargetProbabilityError("variance needs strictly positive probabilities")
    joint = probs.joint_matrix()
    rel = joint / np.outer(p, p) - 1.0
    return max(float(yv @ rel @ yv), 0.0)

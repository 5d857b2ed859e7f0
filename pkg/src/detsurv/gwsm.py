"""Two-stage weight-share estimation: variance, optimal weights, optimal
second-stage probabilities.

The estimator for a target total is ``t_hat = sum_k w_k y_k`` with random
weights

    w_k = sum_{i linked to k} theta_ik 1{i selected} 1{k drawn from i}
          / (pi_i * pi_ik),

unbiased whenever each target column of ``theta`` sums to one.  Its
variance is the quadratic form ``theta.T Q theta`` where ``Q`` combines
the relative covariances of the intermediate design and of the second
stage on the reduced link index.  Both optimal parameter solves below
minimize that quadratic form exactly: the weight matrix through the KKT
system of the equality-constrained program, the second-stage
probabilities row by row through the Lagrange closed form.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .kernel import Kernel, KernelError, delta_matrix
from .linkage import (
    LinkStructure,
    SecondStageDesign,
    WeightMatrix,
    constraint_matrix,
)

SVD_CUTOFF = 1e-10
PI_FLOOR = 1e-6
PSD_SLACK = 1e-8


class GwsmError(ValueError):
    """Inconsistent inputs to an estimation or optimization routine."""


# ---------------------------------------------------------------------------
# variance building blocks
# ---------------------------------------------------------------------------

def tilde_delta_a(k: Kernel) -> np.ndarray:
    """Relative covariance of the intermediate design.

    Entry ``(i, j)`` is ``(pi_ij - pi_i pi_j) / (pi_i pi_j)``; requires
    strictly positive first-order probabilities.
    """
    d = np.diagonal(k.entries)
    if d.min() <= 0.0:
        raise GwsmError("relative covariance needs diag(K) > 0")
    inv = 1.0 / d
    return delta_matrix(k) * np.outer(inv, inv)


def tilde_delta_ab_h34(design: SecondStageDesign) -> np.ndarray:
    """Relative covariance of the second stage on the link index.

    Under one-draw-per-row independence this is the three-case matrix:
    ``(1 - pi) / pi`` on the diagonal, ``-1`` between two links of the
    same intermediate unit, ``0`` across units.
    """
    ls = design.links
    p = design.pi1ab
    out = np.zeros((ls.n_links, ls.n_links))
    for i in range(ls.n_a):
        d = ls.links_of_intermediate(i)
        if d.size == 0:
            continue
        out[np.ix_(d, d)] = -1.0
    diag = np.arange(ls.n_links)
    out[diag, diag] = (1.0 - p) / p
    return out


def one_stage_tilde_delta_ab(ls: LinkStructure) -> np.ndarray:
    """Second-stage relative covariance when every second stage is a census."""
    return np.zeros((ls.n_links, ls.n_links))


def moment_matrix(x: np.ndarray, alpha) -> np.ndarray:
    """Weighted moment matrix ``sum_q alpha_q x_q x_q.T`` of target variables.

    ``x`` is (n_b, Q); a single variable may be passed as a vector.
    """
    xv = np.asarray(x, dtype=float)
    if xv.ndim == 1:
        xv = xv[:, None]
    a = np.asarray(alpha, dtype=float).reshape(-1)
    if a.size != xv.shape[1]:
        raise GwsmError(f"got {a.size} weights for {xv.shape[1]} variables")
    if np.any(a < 0.0):
        raise GwsmError("moment weights must be nonnegative")
    return (xv * a[None, :]) @ xv.T


@dataclass(frozen=True, eq=False)
class VarianceModel:
    """The reduced variance quadratic form and the pieces it is built from.

    ``q`` is (D, D) symmetric PSD on the link index; ``theta.T q theta``
    is the estimator variance (or the weighted sum of variances encoded
    by the moment matrix ``m``).
    """

    tilde_a: np.ndarray
    tilde_ab: np.ndarray
    m: np.ndarray
    q: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.q, dtype=float)
        asym = np.abs(q - q.T).max()
        if asym > 1e-10:
            raise GwsmError(f"Q must be symmetric, max|Q - Q.T| = {asym:.3e}")
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(0)))
        scale = max(float(np.abs(q).max()), 1.0)
        v = rng.standard_normal((q.shape[0], 100))
        if float(np.einsum("di,di->i", v, q @ v).min()) < -PSD_SLACK * scale:
            raise GwsmError("Q fails the positive-semidefinite spot check")


def q_matrix(
    ls: LinkStructure, m: np.ndarray, tilde_a: np.ndarray, tilde_ab: np.ndarray
) -> VarianceModel:
    """Assemble the variance quadratic form on the link index.

    ``Q[d, d'] = M[k, k'] * (dA[i, i'] + dAB[d, d'] + dA[i, i'] dAB[d, d'])``
    for links ``d = (i, k)`` and ``d' = (i', k')``.
    """
    m = np.asarray(m, dtype=float)
    tilde_a = np.asarray(tilde_a, dtype=float)
    tilde_ab = np.asarray(tilde_ab, dtype=float)
    if m.shape != (ls.n_b, ls.n_b):
        raise GwsmError(f"moment matrix shape {m.shape} != ({ls.n_b}, {ls.n_b})")
    if tilde_a.shape != (ls.n_a, ls.n_a):
        raise GwsmError(f"intermediate covariance shape {tilde_a.shape} mismatch")
    if tilde_ab.shape != (ls.n_links, ls.n_links):
        raise GwsmError(f"second-stage covariance shape {tilde_ab.shape} mismatch")
    da = tilde_a[np.ix_(ls.link_i, ls.link_i)]
    mm = m[np.ix_(ls.link_k, ls.link_k)]
    q = mm * (da + tilde_ab + da * tilde_ab)
    q = 0.5 * (q + q.T)
    return VarianceModel(tilde_a=tilde_a, tilde_ab=tilde_ab, m=m, q=q)


def gwsm_variance(w: WeightMatrix, vm: VarianceModel) -> float:
    """Exact variance of the weight-share estimator, ``theta.T Q theta``."""
    if w.theta.size != vm.q.shape[0]:
        raise GwsmError("weight vector and Q disagree on the number of links")
    value = float(w.theta @ vm.q @ w.theta)
    if value < -PSD_SLACK * max(float(np.abs(vm.q).max()), 1.0):
        raise GwsmError(f"quadratic form returned {value!r} < 0")
    return max(value, 0.0)


# ---------------------------------------------------------------------------
# realized estimates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GwsmEstimate:
    """Realized total estimate and the random weights that produced it."""

    total: float
    weights: np.ndarray


def gwsm_estimate(
    w: WeightMatrix,
    design: SecondStageDesign | None,
    k: Kernel,
    sample,
    second_stage_choice,
    y,
) -> GwsmEstimate:
    """Evaluate the estimator on one realized two-stage draw.

    ``sample`` is the intermediate draw (a SampleSet or an index
    iterable); ``second_stage_choice`` maps each selected intermediate
    unit to the target it drew (array of length n_a, -1 where unused).
    With ``design=None`` the second stage is a census (one-stage mode)
    and the choice array is ignored.
    """
    ls = w.links
    yv = np.asarray(y, dtype=float)
    if yv.shape != (ls.n_b,):
        raise GwsmError(f"y has shape {yv.shape}, expected ({ls.n_b},)")
    pi_a = np.diagonal(k.entries)
    members = getattr(sample, "members", sample)
    sel = np.zeros(ls.n_a, dtype=bool)
    sel[list(members)] = True
    if np.any(pi_a[sel] <= 0.0):
        raise GwsmError("a selected intermediate unit has zero design probability")

    link_on = sel[ls.link_i]
    if design is not None:
        choice = np.asarray(second_stage_choice, dtype=int)
        if choice.shape != (ls.n_a,):
            raise GwsmError(f"choice has shape {choice.shape}, expected ({ls.n_a},)")
        bad = sel & (choice >= 0)
        for i in np.flatnonzero(bad):
            if choice[i] not in ls.b_adjacency(i):
                raise GwsmError(f"unit {i} drew non-linked target {choice[i]}")
        link_on = link_on & (choice[ls.link_i] == ls.link_k)
        denom = pi_a[ls.link_i] * design.pi1ab
    else:
        denom = pi_a[ls.link_i]

    contrib = np.where(link_on, w.theta / denom, 0.0)
    weights = np.bincount(ls.link_k, weights=contrib, minlength=ls.n_b)
    return GwsmEstimate(total=float(weights @ yv), weights=weights)


# ---------------------------------------------------------------------------
# optimal parameters
# ---------------------------------------------------------------------------

def optimal_theta(
    ls: LinkStructure, vm: VarianceModel, svd_cutoff: float = SVD_CUTOFF
) -> WeightMatrix:
    """Minimize ``theta.T Q theta`` under the unbiasedness constraint.

    Solves the KKT system ``[[Q, E.T], [E, 0]] [v; lam] = [0; 1]`` by
    Moore-Penrose pseudoinverse and returns the weight block.  The
    pseudoinverse picks the minimum-norm representative of the solution
    family; any offset in ``ker(Q) & ker(E)`` leaves the variance and
    feasibility unchanged.  A final exact projection onto the constraint
    removes the ~1e-12 feasibility residue of the solve.
    """
    d = ls.n_links
    if vm.q.shape != (d, d):
        raise GwsmError("variance model does not match the link structure")
    e = constraint_matrix(ls)
    kkt = np.block([[vm.q, e.T], [e, np.zeros((ls.n_b, ls.n_b))]])
    rhs = np.concatenate([np.zeros(d), np.ones(ls.n_b)])
    sol = np.linalg.pinv(kkt, rcond=svd_cutoff, hermitian=True) @ rhs
    theta = sol[:d]
    # exact feasibility restoration: E E.T = diag(column degrees)
    residual = 1.0 - np.bincount(ls.link_k, weights=theta, minlength=ls.n_b)
    theta = theta + (residual / ls.degrees_b())[ls.link_k]
    return WeightMatrix(ls, theta)


def optimal_second_stage_probs(
    w: WeightMatrix,
    x: np.ndarray,
    alpha,
    floor: float = PI_FLOOR,
) -> SecondStageDesign:
    """Row-wise optimal second-stage probabilities for given weights.

    For each intermediate unit the variance contribution is
    ``sum_k a_k / pi_k`` with ``a_k = theta_ik^2 sum_q alpha_q x_qk^2``,
    minimized over the row simplex at ``pi_k`` proportional to
    ``|theta_ik| s_k`` where ``s_k = sqrt(sum_q alpha_q x_qk^2)``.

    Zero scores would produce zero probabilities, which the two-stage
    law forbids; rows containing them are floored at ``floor`` and
    renormalized.  A row whose scores all vanish falls back to uniform
    with a warning.
    """
    ls = w.links
    xv = np.asarray(x, dtype=float)
    if xv.ndim == 1:
        xv = xv[:, None]
    if xv.shape[0] != ls.n_b:
        raise GwsmError(f"x has {xv.shape[0]} rows, expected {ls.n_b}")
    a = np.asarray(alpha, dtype=float).reshape(-1)
    if a.size != xv.shape[1] or np.any(a < 0.0) or not np.any(a > 0.0):
        raise GwsmError("alpha must be nonnegative with at least one positive entry")
    if not 0.0 < floor < 1.0:
        raise GwsmError("floor must lie in (0, 1)")

    s = np.sqrt(np.square(xv) @ a)
    score = np.abs(w.theta) * s[ls.link_k]
    pi = np.empty(ls.n_links)
    for i in range(ls.n_a):
        d = ls.links_of_intermediate(i)
        if d.size == 0:
            continue
        row = score[d]
        total = float(row.sum())
        if total <= 0.0:
            warnings.warn(
                f"intermediate unit {i} has all-zero scores; using uniform row",
                stacklevel=2,
            )
            pi[d] = 1.0 / d.size
            continue
        row = row / total
        if row.min() < floor:
            row = np.maximum(row, floor)
            row = row / row.sum()
        pi[d] = row
    return SecondStageDesign(ls, pi)

"""Real symmetric contracting kernels and their sampling-design algebra.

A determinantal sampling design on a population of size ``n`` is
parameterized by a real symmetric matrix ``K`` whose spectrum lies in
``[0, 1]``.  Every inclusion probability of the design is a principal
minor of ``K``; orthogonal projection kernels (``K @ K == K``) yield
fixed-size designs, with the sample size equal to the rank.

This module provides the constructions (Poisson, complement, domain
restriction, projection with prescribed diagonal), the first- and
second-order inclusion probabilities, the indicator covariance matrix,
the Horvitz-Thompson variance, and the diagonal-preserving Givens
rotation used by the design optimizer.

All functions are pure; kernels are immutable after construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Contract tolerances.  Named here and surfaced through RunConfig so that
# reports can state exactly which contract a matrix was held to.
SYMMETRY_TOL = 1e-12
IDEMPOTENCY_TOL = 1e-10
EIGENVALUE_SLACK = 1e-10
DIAGONAL_MATCH_TOL = 1e-10
INTEGER_SUM_TOL = 1e-9
DEGENERATE_TOL = 1e-12

# Guards for the Givens update: skip when the diagonal gap or the coupling
# is numerically indistinguishable from zero.
GIVENS_DIAG_GAP = 1e-12
GIVENS_MIN_COUPLING = 1e-14


class KernelError(ValueError):
    """A matrix violates the contracting-kernel contract."""


class InfeasibleDiagonalError(KernelError):
    """No projection kernel exists for the requested diagonal."""


def _as_float_vector(values, name: str = "values") -> np.ndarray:
    v = np.asarray(getattr(values, "values", values), dtype=float)
    if v.ndim != 1:
        raise KernelError(f"{name} must be one-dimensional, got shape {v.shape}")
    if v.size == 0:
        raise KernelError(f"{name} must be nonempty")
    if not np.all(np.isfinite(v)):
        raise KernelError(f"{name} contains non-finite entries")
    return v


@dataclass(frozen=True)
class ProbabilityVector:
    """First-order inclusion probabilities, entries in ``(0, 1]``.

    ``sample_size`` is the expected number of selected units; it must be
    integer-valued whenever a fixed-size design is requested.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        v = _as_float_vector(self.values, "probabilities")
        if np.any(v <= 0.0) or np.any(v > 1.0):
            raise KernelError("probabilities must lie in (0, 1]")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.size

    @property
    def sample_size(self) -> float:
        return float(self.values.sum())


@dataclass(frozen=True, eq=False)
class Kernel:
    """Parameter of a determinantal sampling design.

    ``entries`` is a real symmetric ``(n, n)`` matrix with eigenvalues in
    ``[0, 1]`` (validated on construction within the module tolerances).
    ``is_projection`` marks idempotent kernels, i.e. fixed-size designs;
    when set, ``max|K @ K - K|`` must not exceed ``IDEMPOTENCY_TOL``.
    """

    entries: np.ndarray
    is_projection: bool = False

    def __post_init__(self) -> None:
        m = np.asarray(self.entries, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise KernelError(f"kernel must be square, got shape {m.shape}")
        if not np.all(np.isfinite(m)):
            raise KernelError("kernel contains non-finite entries")
        asym = np.abs(m - m.T).max()
        if asym > SYMMETRY_TOL:
            raise KernelError(f"kernel is not symmetric: max|K - K.T| = {asym:.3e}")
        d = np.diagonal(m)
        if d.min() < -EIGENVALUE_SLACK or d.max() > 1.0 + EIGENVALUE_SLACK:
            raise KernelError("kernel diagonal entries must lie in [0, 1]")
        w = np.linalg.eigvalsh(m)
        if w[0] < -EIGENVALUE_SLACK or w[-1] > 1.0 + EIGENVALUE_SLACK:
            raise KernelError(
                f"kernel eigenvalues must lie in [0, 1], got range "
                f"[{w[0]:.3e}, {w[-1]:.3e}]"
            )
        if self.is_projection:
            err = np.abs(m @ m - m).max()
            if err > IDEMPOTENCY_TOL:
                raise KernelError(f"projection flag set but max|K@K - K| = {err:.3e}")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "entries", m)

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @property
    def first_order(self) -> np.ndarray:
        """Vector of first-order inclusion probabilities (the diagonal)."""
        return np.diagonal(self.entries).copy()

    def rank(self) -> int:
        """Rank for projection kernels (the fixed sample size)."""
        if not self.is_projection:
            raise KernelError("rank() is defined for projection kernels only")
        return int(round(float(np.trace(self.entries))))


# ---------------------------------------------------------------------------
# constructions
# ---------------------------------------------------------------------------

def poisson_kernel(pi) -> Kernel:
    """Diagonal kernel of a Poisson design with the given probabilities."""
    v = _as_float_vector(pi, "pi")
    if np.any(v <= 0.0) or np.any(v > 1.0):
        raise KernelError("Poisson probabilities must lie in (0, 1]")
    projection = bool(np.all((v == 0.0) | (v == 1.0)))
    return Kernel(np.diag(v), is_projection=projection)


def complement_kernel(k: Kernel) -> Kernel:
    """Kernel of the complementary sample, ``I - K``."""
    return Kernel(np.eye(k.n) - k.entries, is_projection=k.is_projection)


def restrict_kernel(k: Kernel, domain) -> Kernel:
    """Restriction of the design to a subpopulation (principal submatrix)."""
    idx = _index_set(domain, k.n, "domain")
    sub = k.entries[np.ix_(idx, idx)]
    projection = False
    if k.is_projection:
        projection = bool(np.abs(sub @ sub - sub).max() <= IDEMPOTENCY_TOL)
    return Kernel(sub, is_projection=projection)


def projection_kernel_with_diagonal(pi) -> Kernel:
    """Orthogonal projection kernel with a prescribed diagonal.

    The diagonal must sum to an integer ``n_s`` (the fixed sample size)
    within ``INTEGER_SUM_TOL``.  Entries equal to 0 or 1 are handled as a
    degenerate extension: such units are deterministically excluded or
    included, and the construction runs on the remaining block.

    The construction starts from ``diag(1, ..., 1, 0, ..., 0)`` and walks
    the diagonal to the target with a chain of two-plane rotations, each
    pinning one entry exactly (a constructive Schur-Horn argument).  The
    result is deterministic and uses at most ``2n`` rotations.
    """
    p = _as_float_vector(pi, "pi")
    if np.any(p < -DEGENERATE_TOL) or np.any(p > 1.0 + DEGENERATE_TOL):
        raise KernelError("prescribed diagonal entries must lie in [0, 1]")
    p = np.clip(p, 0.0, 1.0)
    total = float(p.sum())
    n_s = round(total)
    if abs(total - n_s) > INTEGER_SUM_TOL:
        raise InfeasibleDiagonalError(
            f"diagonal sums to {total!r}, not an integer within {INTEGER_SUM_TOL:g}"
        )
    n = p.size
    if n_s < 0 or n_s > n:
        raise InfeasibleDiagonalError(f"required rank {n_s} outside [0, {n}]")

    forced_in = p >= 1.0 - DEGENERATE_TOL
    forced_out = p <= DEGENERATE_TOL
    interior = ~(forced_in | forced_out)
    r_interior = n_s - int(forced_in.sum())
    if r_interior < 0 or r_interior > int(interior.sum()):
        raise InfeasibleDiagonalError(
            "degenerate entries force a rank incompatible with the diagonal sum"
        )

    K = np.zeros((n, n))
    K[forced_in, forced_in] = 1.0
    if interior.any():
        idx = np.flatnonzero(interior)
        K[np.ix_(idx, idx)] = _schur_horn_walk(p[idx], r_interior)
    K = 0.5 * (K + K.T)
    return Kernel(K, is_projection=True)


def _schur_horn_walk(targets: np.ndarray, rank: int) -> np.ndarray:
    """Projection with prescribed strict-interior diagonal.

    Processes targets in decreasing order; at each step rotates the pair
    of active diagonal entries straddling the target so that one entry
    lands exactly on it, then freezes that position.  The active
    principal submatrix stays diagonal throughout, so every rotation acts
    on a 2x2 diagonal block and feasibility reduces to majorization of
    the remaining values over the remaining targets.
    """
    m = targets.size
    order = np.argsort(-targets, kind="stable")
    K = np.zeros((m, m))
    K[order[:rank], order[:rank]] = 1.0

    active = list(order)
    for p in order:
        d = targets[p]
        active.remove(p)
        vals = np.array([K[q, q] for q in active] + [K[p, p]])
        pos = active + [p]

        # Exact-hit fast path (also absorbs round-off from earlier steps).
        best = int(np.argmin(np.abs(vals - d)))
        if abs(vals[best] - d) <= 1e-13:
            if pos[best] != p:
                _swap_rows_cols(K, p, pos[best])
            continue

        hi_candidates = [t for t in range(len(pos)) if vals[t] >= d]
        lo_candidates = [t for t in range(len(pos)) if vals[t] < d]
        if not hi_candidates or not lo_candidates:
            raise InfeasibleDiagonalError(
                "diagonal walk lost majorization; prescribed diagonal infeasible"
            )
        hi = min(hi_candidates, key=lambda t: (vals[t], pos[t]))
        lo = max(lo_candidates, key=lambda t: (vals[t], -pos[t]))
        hi_pos, lo_pos = pos[hi], pos[lo]
        if hi_pos != p:
            _swap_rows_cols(K, p, hi_pos)
            if lo_pos == p:
                lo_pos = hi_pos

        a, b = K[p, p], K[lo_pos, lo_pos]
        c2 = min(max((d - b) / (a - b), 0.0), 1.0)
        c, s = math.sqrt(c2), math.sqrt(1.0 - c2)
        _apply_rotation(K, p, lo_pos, c, s)
        K[p, p] = d  # pin exactly; rotation lands here up to one ulp
    return K


def _swap_rows_cols(K: np.ndarray, i: int, j: int) -> None:
    K[[i, j], :] = K[[j, i], :]
    K[:, [i, j]] = K[:, [j, i]]


def _apply_rotation(K: np.ndarray, i: int, j: int, c: float, s: float) -> None:
    """In-place two-sided rotation ``W K W.T`` in the (i, j) plane.

    ``W`` is the identity except ``W[i,i] = W[j,j] = c``, ``W[i,j] = s``,
    ``W[j,i] = -s``.  Symmetry of ``K`` is preserved exactly by writing
    the 2x2 corner from closed forms.
    """
    kii, kjj, kij = K[i, i], K[j, j], K[i, j]
    row_i = c * K[i, :] + s * K[j, :]
    row_j = -s * K[i, :] + c * K[j, :]
    new_ii = c * c * kii + 2.0 * c * s * kij + s * s * kjj
    new_jj = s * s * kii - 2.0 * c * s * kij + c * c * kjj
    new_ij = (c * c - s * s) * kij - c * s * (kii - kjj)
    row_i[i], row_i[j] = new_ii, new_ij
    row_j[i], row_j[j] = new_ij, new_jj
    K[i, :] = row_i
    K[j, :] = row_j
    K[:, i] = row_i
    K[:, j] = row_j


# ---------------------------------------------------------------------------
# probabilities and variance
# ---------------------------------------------------------------------------

def _index_set(s, n: int, name: str = "s") -> np.ndarray:
    idx = np.asarray(sorted(set(int(i) for i in s)), dtype=int)
    if idx.size == 0:
        raise KernelError(f"{name} must be nonempty")
    if idx[0] < 0 or idx[-1] >= n:
        raise KernelError(f"{name} contains indices outside [0, {n})")
    if idx.size != len(list(s)):
        raise KernelError(f"{name} contains duplicate indices")
    return idx


def inclusion_prob(k: Kernel, s) -> float:
    """Probability that every unit of ``s`` belongs to the sample.

    Closed forms for ``|s| <= 2``; larger sets go through the general
    principal-minor determinant.
    """
    idx = _index_set(s, k.n)
    K = k.entries
    if idx.size == 1:
        return float(K[idx[0], idx[0]])
    if idx.size == 2:
        i, j = idx
        return float(K[i, i] * K[j, j] - K[i, j] ** 2)
    return float(np.linalg.det(K[np.ix_(idx, idx)]))


def delta_matrix(k: Kernel) -> np.ndarray:
    """Covariance matrix of the sample indicators, ``K * (I - K)``.

    Entry ``(i, j)`` equals ``pi_ij - pi_i pi_j``; rows sum to zero for
    fixed-size (projection) kernels.
    """
    K = k.entries
    return K * (np.eye(k.n) - K)


def ht_variance(k: Kernel, y) -> float:
    """Variance of the Horvitz-Thompson total estimator under ``DSD(K)``.

    ``y.T (I*K)^-1 [K*(I - K)] (I*K)^-1 y``; requires strictly positive
    first-order probabilities.
    """
    yv = _as_float_vector(y, "y")
    if yv.size != k.n:
        raise KernelError(f"y has length {yv.size}, expected {k.n}")
    d = np.diagonal(k.entries)
    if d.min() <= 0.0:
        raise KernelError("Horvitz-Thompson variance needs diag(K) > 0")
    z = yv / d
    return max(float(z @ delta_matrix(k) @ z), 0.0)


# ---------------------------------------------------------------------------
# diagonal-preserving Givens rotation
# ---------------------------------------------------------------------------

def givens_parameters(kii: float, kjj: float, kij: float) -> tuple[float, float] | None:
    """Cosine/sine of the diagonal-preserving rotation, or None to skip.

    With ``t = 2 K_ij / (K_ii - K_jj)`` the returned pair satisfies
    ``c**2 kii + 2 c s kij + s**2 kjj == kii``, so the two-sided rotation
    of :func:`_apply_rotation` leaves the diagonal unchanged while acting
    as a similarity (spectrum preserved).
    """
    if abs(kii - kjj) <= GIVENS_DIAG_GAP or abs(kij) <= GIVENS_MIN_COUPLING:
        return None
    t = 2.0 * kij / (kii - kjj)
    c = 1.0 / math.sqrt(1.0 + t * t)
    return c, t * c


def givens_update(k: Kernel, i: int, j: int) -> Kernel | None:
    """Rotate ``K`` in the (i, j) plane preserving diagonal and spectrum.

    Returns ``None`` (a skip, not an error) when the guard
    ``K_ii != K_jj and K_ij != 0`` fails, mirroring the greedy sweep.
    """
    n = k.n
    if not (0 <= i < n and 0 <= j < n) or i == j:
        raise KernelError(f"invalid rotation plane ({i}, {j}) for n={n}")
    K = k.entries
    params = givens_parameters(K[i, i], K[j, j], K[i, j])
    if params is None:
        return None
    c, s = params
    out = K.copy()
    _apply_rotation(out, i, j, c, s)
    return Kernel(out, is_projection=k.is_projection)

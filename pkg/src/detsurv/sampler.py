"""Exact sampling from determinantal designs and the exhaustive set law.

Sampling follows the spectral algorithm: eigendecompose the kernel, keep
each eigenvector independently with probability equal to its eigenvalue,
then pick one unit per kept eigenvector through sequential conditionals
with Gram-Schmidt downdating of the active basis.  For projection
kernels the first phase is deterministic and every draw has size equal
to the rank.

Randomness is counter-based (Philox).  Replicate ``r`` of a run with
seed ``s`` consumes a fixed-width block of the stream starting at
counter offset ``r * width``, so sequential, batched, and parallel
execution produce identical draws for identical ``(seed, r)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import Kernel, KernelError

# Largest population for which the exhaustive set law may be enumerated.
ENUMERATION_LIMIT = 14

# Conditional selection probabilities are clamped into [0, 1] when
# round-off pushes them outside by less than this amount.
PROB_CLAMP = 1e-12

# Stream contexts keep independent uses of the same run seed apart.
CTX_DPP = 1
CTX_SECOND_STAGE = 2
CTX_SYNTH = 3

_PHILOX_ROUND = 4  # doubles produced per counter increment


class EnumerationLimitError(ValueError):
    """Population too large for exhaustive set-law enumeration."""


@dataclass(frozen=True)
class SampleSet:
    """One realized sample: sorted member indices plus a replicate label."""

    members: tuple[int, ...]
    draw_id: int = 0

    def __post_init__(self) -> None:
        ms = tuple(sorted(int(i) for i in self.members))
        if len(set(ms)) != len(ms):
            raise ValueError("sample members must be unique")
        object.__setattr__(self, "members", ms)

    def __len__(self) -> int:
        return len(self.members)

    def indicator(self, n: int) -> np.ndarray:
        z = np.zeros(n, dtype=bool)
        z[list(self.members)] = True
        return z


def stream_generator(seed: int, context: int) -> np.random.Generator:
    """Philox generator for one (seed, context) stream."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(context),))
    return np.random.Generator(np.random.Philox(ss))


def replicate_uniforms(
    seed: int, context: int, width: int, first: int, count: int
) -> np.ndarray:
    """Uniforms for replicates ``first .. first+count-1`` as a (count, width) block.

    Row ``r`` always holds the same numbers for the same ``(seed, context,
    first + r)``, independent of batching: the stream counter is advanced
    to the replicate's block before drawing.
    """
    if width % _PHILOX_ROUND:
        raise ValueError(f"width must be a multiple of {_PHILOX_ROUND}")
    if count <= 0:
        return np.empty((0, width))
    g = stream_generator(seed, context)
    g.bit_generator.advance(first * (width // _PHILOX_ROUND))
    return g.random((count, width))


def _block_width(n_uniforms: int) -> int:
    return -(-n_uniforms // _PHILOX_ROUND) * _PHILOX_ROUND


def _phase_eigensystem(k: Kernel) -> tuple[np.ndarray, np.ndarray]:
    lam, vec = np.linalg.eigh(k.entries)
    if k.is_projection:
        lam = (lam > 0.5).astype(float)
    else:
        lam = np.clip(lam, 0.0, 1.0)
    return lam, vec


def sample_dpp(k: Kernel, rng_seed: int, replicate: int = 0) -> SampleSet:
    """One exact draw from ``DSD(K)`` on stream ``(rng_seed, replicate)``."""
    picks = sample_dpp_batch(k, rng_seed, 1, first_replicate=replicate)
    return SampleSet(tuple(np.flatnonzero(picks[0])), draw_id=replicate)


def sample_dpp_batch(
    k: Kernel,
    rng_seed: int,
    n_draws: int,
    first_replicate: int = 0,
    context: int = CTX_DPP,
) -> np.ndarray:
    """Exact draws for replicates ``first_replicate ..`` as a boolean matrix.

    Row ``r`` is the indicator vector of replicate ``first_replicate + r``
    and depends only on ``(rng_seed, context, first_replicate + r)``.
    """
    if n_draws < 0:
        raise ValueError("n_draws must be nonnegative")
    n = k.n
    lam, vec = _phase_eigensystem(k)
    width = _block_width(2 * n)
    uniforms = replicate_uniforms(rng_seed, context, width, first_replicate, n_draws)

    selected = uniforms[:, :n] < lam[None, :]
    out = np.zeros((n_draws, n), dtype=bool)
    counts = selected.sum(axis=1)
    for size in np.unique(counts):
        size = int(size)
        if size == 0:
            continue
        rows = np.flatnonzero(counts == size)
        cols = np.nonzero(selected[rows])[1].reshape(len(rows), size)
        # (R, n, size): the kept eigenvectors per replicate
        basis = np.ascontiguousarray(vec.T[cols].transpose(0, 2, 1))
        _select_batch(basis, uniforms[rows, n : n + size], out, rows)
    return out


def _select_batch(
    basis: np.ndarray, uniforms: np.ndarray, out: np.ndarray, rows: np.ndarray
) -> None:
    """Sequential conditional selection for a same-size group of replicates.

    ``basis`` is (R, n, t) with orthonormal columns per replicate; after
    each pick the basis is downdated to the orthocomplement of the chosen
    coordinate axis within its span (Gram-Schmidt step, then QR to
    restore orthonormality).
    """
    r_count, n, t0 = basis.shape
    arange = np.arange(r_count)
    for step in range(t0):
        t = t0 - step
        p = np.square(basis).sum(axis=2)
        p = np.clip(p, 0.0, 1.0 + PROB_CLAMP)
        cum = np.cumsum(p, axis=1)
        u = uniforms[:, step] * cum[:, -1]
        item = np.minimum((cum < u[:, None]).sum(axis=1), n - 1)
        out[rows, item] = True
        if t == 1:
            break
        picked_rows = basis[arange, item, :]  # (R, t)
        pivot = np.abs(picked_rows).argmax(axis=1)
        pivot_val = picked_rows[arange, pivot]
        pivot_col = basis[arange, :, pivot]  # (R, n)
        basis = basis - pivot_col[:, :, None] * (
            picked_rows / pivot_val[:, None]
        )[:, None, :]
        keep = np.argsort(
            np.arange(t)[None, :] == pivot[:, None], axis=1, kind="stable"
        )[:, : t - 1]
        basis = np.take_along_axis(basis, keep[:, None, :], axis=2)
        basis, _ = np.linalg.qr(basis)


# ---------------------------------------------------------------------------
# exhaustive set law (the small-population oracle)
# ---------------------------------------------------------------------------

def exact_set_probability(k: Kernel, s) -> float:
    """Probability that the sample equals ``s`` exactly.

    Defined by inclusion-exclusion over supersets,
    ``P(S = s) = sum_{t >= s} (-1)^{|t|-|s|} det(K_|t)``; computed here
    through the equivalent single determinant
    ``(-1)^(n-|s|) det(K - I_sbar)`` with ``I_sbar`` the diagonal
    indicator of the complement (expand the determinant in the diagonal
    perturbation to recover the alternating sum).
    """
    n = k.n
    if n > ENUMERATION_LIMIT:
        raise EnumerationLimitError(
            f"population size {n} exceeds enumeration limit {ENUMERATION_LIMIT}"
        )
    members = set(int(i) for i in s)
    if any(i < 0 or i >= n for i in members):
        raise KernelError(f"set contains indices outside [0, {n})")
    m = k.entries.copy()
    comp = np.array([i for i in range(n) if i not in members], dtype=int)
    m[comp, comp] -= 1.0
    sign = 1.0 if (n - len(members)) % 2 == 0 else -1.0
    return max(sign * float(np.linalg.det(m)), 0.0)


def exact_law(k: Kernel) -> np.ndarray:
    """Probabilities of all ``2^n`` samples, indexed by member bitmask.

    Bit ``i`` of the index marks unit ``i`` as selected.  The law must
    sum to one within 1e-9; a larger defect indicates an invalid kernel.
    """
    n = k.n
    if n > ENUMERATION_LIMIT:
        raise EnumerationLimitError(
            f"population size {n} exceeds enumeration limit {ENUMERATION_LIMIT}"
        )
    masks = np.arange(2**n, dtype=np.uint32)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(float)
    mats = np.repeat(k.entries[None, :, :], 2**n, axis=0)
    diag = np.arange(n)
    mats[:, diag, diag] -= 1.0 - bits
    sizes = bits.sum(axis=1)
    signs = np.where((n - sizes) % 2 == 0, 1.0, -1.0)
    law = signs * np.linalg.det(mats)
    law = np.clip(law, 0.0, None)
    total = float(law.sum())
    if abs(total - 1.0) > 1e-9:
        raise KernelError(f"set law sums to {total!r}, not 1 within 1e-9")
    return law


def law_mean_indicators(law: np.ndarray, n: int) -> np.ndarray:
    """First-order inclusion probabilities implied by an exhaustive law."""
    masks = np.arange(law.size, dtype=np.uint32)
    bits = ((masks[:, None] >> np.arange(n)) & 1).astype(float)
    return bits.T @ law

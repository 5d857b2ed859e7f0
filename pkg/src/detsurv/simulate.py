"""Monte Carlo validation of a design triple against its closed forms.

Replicates are drawn in chunks: the intermediate sample through the
spectral sampler, the second stage as one categorical draw per selected
intermediate unit (identical in law to the block-diagonal determinantal
formulation, far cheaper; the block kernel stays available for oracle
cross-checks).  Every replicate owns a fixed counter block of the run
seed, so the report is byte-reproducible no matter how the chunks are
scheduled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gwsm import (
    gwsm_variance,
    moment_matrix,
    one_stage_tilde_delta_ab,
    q_matrix,
    tilde_delta_a,
    tilde_delta_ab_h34,
)
from .instance import Instance
from .kernel import Kernel
from .linkage import SecondStageDesign, WeightMatrix
from .sampler import (
    CTX_SECOND_STAGE,
    _block_width,
    replicate_uniforms,
    sample_dpp_batch,
)
from .target import (
    TargetProbabilities,
    ht_target_variance,
    one_stage_target_probs,
    two_stage_target_probs,
)


@dataclass(frozen=True, eq=False)
class Designs:
    """The design triple a simulation validates."""

    kernel: Kernel
    weights: WeightMatrix
    design: SecondStageDesign | None  # None = one-stage (census second stage)


@dataclass(frozen=True, eq=False)
class SimulationReport:
    replicates: int
    seed: int
    one_stage: bool
    size_histogram: dict[int, int]
    first_order: list[dict]
    joint_pairs: list[dict]
    weight_means: list[dict]
    estimators: list[dict]

    def to_dict(self) -> dict:
        return {
            "replicates": self.replicates,
            "seed": self.seed,
            "one_stage": self.one_stage,
            "size_histogram": {str(k): v for k, v in self.size_histogram.items()},
            "first_order": self.first_order,
            "joint_pairs": self.joint_pairs,
            "weight_means": self.weight_means,
            "estimators": self.estimators,
        }


def monte_carlo(
    instance: Instance,
    designs: Designs,
    replicates: int,
    seed: int,
    chunk: int = 4096,
    joint_pairs: int = 50,
    compute_ht_variance: bool = True,
) -> SimulationReport:
    """Replicate the two-stage experiment and compare with closed forms."""
    ls = instance.links
    fr = instance.frames
    kernel, w, design = designs.kernel, designs.weights, designs.design
    one_stage = design is None
    pi_a = np.diagonal(kernel.entries)

    if one_stage:
        probs = one_stage_target_probs(kernel, ls)
    else:
        probs = two_stage_target_probs(kernel, design)
    p_first = probs.first_order
    if p_first.min() <= 0.0:
        raise ValueError("a target unit has zero closed-form inclusion probability")

    # per-link estimator contributions
    if one_stage:
        contrib = w.theta / pi_a[ls.link_i]
    else:
        contrib = w.theta / (pi_a[ls.link_i] * design.pi1ab)
    w_incidence = np.zeros((ls.n_links, ls.n_b))
    w_incidence[np.arange(ls.n_links), ls.link_k] = contrib

    variables = [(f"x_{q + 1}", fr.x_b[:, q]) for q in range(fr.x_b.shape[1])]
    variables.append(("y", fr.y_b))
    ht_loadings = np.stack([v / p_first for _, v in variables], axis=1)

    # deterministic pair subsample for joint-probability checks
    pair_rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(9,)))
    )
    all_pairs = ls.n_b * (ls.n_b - 1) // 2
    n_pairs = min(joint_pairs, all_pairs)
    pairs: list[tuple[int, int]] = []
    seen = set()
    while len(pairs) < n_pairs:
        a, b = sorted(pair_rng.choice(ls.n_b, size=2, replace=False).tolist())
        if (a, b) not in seen:
            seen.add((a, b))
            pairs.append((a, b))

    # accumulators
    max_size = ls.n_b
    size_counts = np.zeros(max_size + 1, dtype=np.int64)
    hit_counts = np.zeros(ls.n_b, dtype=np.int64)
    pair_counts = np.zeros(len(pairs), dtype=np.int64)
    w_sum = np.zeros(ls.n_b)
    w_sumsq = np.zeros(ls.n_b)
    est_sum = np.zeros((2, len(variables)))
    est_sumsq = np.zeros((2, len(variables)))

    width = _block_width(ls.n_a)
    done = 0
    while done < replicates:
        count = min(chunk, replicates - done)
        draws = sample_dpp_batch(kernel, seed, count, first_replicate=done)
        if one_stage:
            link_on = draws[:, ls.link_i]
        else:
            uni = replicate_uniforms(seed, CTX_SECOND_STAGE, width, done, count)
            choice = np.full((count, ls.n_a), -1, dtype=np.int64)
            for i in range(ls.n_a):
                d = ls.links_of_intermediate(i)
                if d.size == 0:
                    continue
                cum = np.cumsum(design.pi1ab[d])
                idx = np.minimum(
                    np.searchsorted(cum, uni[:, i] * cum[-1], side="right"),
                    d.size - 1,
                )
                choice[:, i] = d[idx]
            link_on = draws[:, ls.link_i] & (
                choice[:, ls.link_i] == np.arange(ls.n_links)[None, :]
            )

        # a target is hit when any of its links fired
        sel = link_on.astype(np.float64)
        hits = (sel @ w_incidence_mask(ls)) > 0.0

        size_counts += np.bincount(hits.sum(axis=1), minlength=max_size + 1)
        hit_counts += hits.sum(axis=0)
        for idx, (a, b) in enumerate(pairs):
            pair_counts[idx] += int(np.count_nonzero(hits[:, a] & hits[:, b]))

        w_mat = sel @ w_incidence
        w_sum += w_mat.sum(axis=0)
        w_sumsq += np.square(w_mat).sum(axis=0)

        gwsm_tot = w_mat @ np.stack([v for _, v in variables], axis=1)
        ht_tot = hits.astype(np.float64) @ ht_loadings
        est_sum[0] += gwsm_tot.sum(axis=0)
        est_sumsq[0] += np.square(gwsm_tot).sum(axis=0)
        est_sum[1] += ht_tot.sum(axis=0)
        est_sumsq[1] += np.square(ht_tot).sum(axis=0)
        done += count

    return _build_report(
        instance, designs, probs, variables, pairs,
        replicates, seed, one_stage,
        size_counts, hit_counts, pair_counts,
        w_sum, w_sumsq, est_sum, est_sumsq,
        compute_ht_variance,
    )


_INCIDENCE_CACHE: dict[int, np.ndarray] = {}


def w_incidence_mask(ls) -> np.ndarray:
    """0/1 link-to-target incidence (cached per structure identity)."""
    key = id(ls)
    if key not in _INCIDENCE_CACHE:
        m = np.zeros((ls.n_links, ls.n_b))
        m[np.arange(ls.n_links), ls.link_k] = 1.0
        _INCIDENCE_CACHE[key] = m
    return _INCIDENCE_CACHE[key]


def _build_report(
    instance, designs, probs, variables, pairs,
    replicates, seed, one_stage,
    size_counts, hit_counts, pair_counts,
    w_sum, w_sumsq, est_sum, est_sumsq,
    compute_ht_variance,
) -> SimulationReport:
    ls = instance.links
    fr = instance.frames
    r = float(replicates)

    first_order = []
    for k in range(ls.n_b):
        closed = float(probs.first_order[k])
        emp = hit_counts[k] / r
        se = float(np.sqrt(max(closed * (1.0 - closed), 1e-300) / r))
        first_order.append(
            {
                "id_b": k + 1,
                "closed": closed,
                "empirical": float(emp),
                "se": se,
                "z": float((emp - closed) / se) if se > 0 else 0.0,
            }
        )

    joint_rows = []
    for idx, (a, b) in enumerate(pairs):
        closed = probs.joint(a, b)
        emp = pair_counts[idx] / r
        se = float(np.sqrt(max(closed * (1.0 - closed), 1e-300) / r))
        joint_rows.append(
            {
                "id_b_1": a + 1,
                "id_b_2": b + 1,
                "closed": float(closed),
                "empirical": float(emp),
                "se": se,
                "z": float((emp - closed) / se) if se > 0 else 0.0,
            }
        )

    weight_rows = []
    for k in range(ls.n_b):
        mean = w_sum[k] / r
        var = max(w_sumsq[k] / r - mean * mean, 0.0)
        se = float(np.sqrt(var / r))
        weight_rows.append(
            {
                "id_b": k + 1,
                "mean": float(mean),
                "se": se,
                "z": float((mean - 1.0) / se) if se > 0 else 0.0,
            }
        )

    # closed-form variances
    da = tilde_delta_a(designs.kernel)
    dab = (
        one_stage_tilde_delta_ab(ls)
        if one_stage
        else tilde_delta_ab_h34(designs.design)
    )
    est_rows = []
    for vi, (name, values) in enumerate(variables):
        truth = float(values.sum())
        vm = q_matrix(ls, moment_matrix(values, [1.0]), da, dab)
        var_gwsm = gwsm_variance(designs.weights, vm)
        var_ht = (
            ht_target_variance(probs, values) if compute_ht_variance else None
        )
        for ei, estimator in enumerate(("gwsm", "target_ht")):
            mean = est_sum[ei, vi] / r
            var_emp = max(est_sumsq[ei, vi] / r - mean * mean, 0.0)
            se_mean = float(np.sqrt(var_emp / r))
            var_closed = var_gwsm if estimator == "gwsm" else var_ht
            est_rows.append(
                {
                    "variable": name,
                    "estimator": estimator,
                    "true_total": truth,
                    "mean": float(mean),
                    "se_mean": se_mean,
                    "z_mean": float((mean - truth) / se_mean) if se_mean > 0 else 0.0,
                    "var_empirical": float(var_emp),
                    "var_closed": None if var_closed is None else float(var_closed),
                    "cv_empirical": float(np.sqrt(var_emp) / abs(truth)),
                    "cv_closed": (
                        None
                        if var_closed is None
                        else float(np.sqrt(var_closed) / abs(truth))
                    ),
                }
            )

    histogram = {
        int(size): int(count)
        for size, count in enumerate(size_counts)
        if count > 0
    }
    return SimulationReport(
        replicates=replicates,
        seed=seed,
        one_stage=one_stage,
        size_histogram=histogram,
        first_order=first_order,
        joint_pairs=joint_rows,
        weight_means=weight_rows,
        estimators=est_rows,
    )

"""Seeded synthetic instance generator.

Stands in for a real pair of sampling frames: both populations carry a
latent positive size, three auxiliary variables (one count, two
amounts) log-normally correlated with it, and a variable of interest
correlated with the auxiliaries.  Links give each intermediate unit a
small number of target partners while covering every target unit at
least once.  All randomness flows through one counter-based stream of
the run seed, so identical configs produce byte-identical instances.
"""

from __future__ import annotations

import numpy as np

from .config import RunConfig
from .instance import Frames, Instance
from .linkage import build_link_structure
from .sampler import CTX_SYNTH, stream_generator

AUX_SCALES = (40.0, 900.0, 1500.0)  # household count, pension total, income total


class SynthError(RuntimeError):
    pass


def synth_instance(cfg: RunConfig) -> Instance:
    g = stream_generator(cfg.seed, CTX_SYNTH)
    z_a = g.standard_normal(cfg.n_a)
    x_a = _aux_from_latent(g, z_a, cfg.aux_correlation)
    y_a = _interest_from_aux(g, x_a)
    z_b = g.standard_normal(cfg.n_b)
    x_b = _aux_from_latent(g, z_b, cfg.aux_correlation)
    y_b = _interest_from_aux(g, x_b)

    edges = _random_links(g, cfg)
    pi_a = scale_to_fixed_size(np.exp(z_a), cfg.n_sample_a, cfg.pi_cap)
    frames = Frames(pi_a=pi_a, x_a=x_a, y_a=y_a, x_b=x_b, y_b=y_b)
    return Instance(frames=frames, links=build_link_structure(cfg.n_a, cfg.n_b, edges))


def _aux_from_latent(
    g: np.random.Generator, latent: np.ndarray, corr: float
) -> np.ndarray:
    noise = g.standard_normal((latent.size, len(AUX_SCALES)))
    logs = corr * latent[:, None] + np.sqrt(1.0 - corr * corr) * noise
    x = np.exp(0.6 * logs) * np.array(AUX_SCALES)[None, :]
    x[:, 0] = np.maximum(1.0, np.round(x[:, 0]))  # first auxiliary is a count
    return x


def _interest_from_aux(g: np.random.Generator, x: np.ndarray) -> np.ndarray:
    signal = np.log(x).mean(axis=1)
    signal = signal - signal.mean()
    return np.exp(signal + 0.35 * g.standard_normal(x.shape[0])) * 300.0


def _random_links(g: np.random.Generator, cfg: RunConfig) -> list[tuple[int, int]]:
    degrees = g.integers(cfg.links_min, cfg.links_max + 1, size=cfg.n_a)
    target = cfg.target_links
    if target is not None:
        lo = max(cfg.n_b, cfg.n_a * cfg.links_min)
        hi = cfg.n_a * cfg.links_max
        target = min(max(target, lo), hi)
        while int(degrees.sum()) != target:
            if int(degrees.sum()) < target:
                room = np.flatnonzero(degrees < cfg.links_max)
                degrees[g.choice(room)] += 1
            else:
                room = np.flatnonzero(degrees > cfg.links_min)
                degrees[g.choice(room)] -= 1
    if int(degrees.sum()) < cfg.n_b:
        raise SynthError(
            f"total link capacity {int(degrees.sum())} cannot cover {cfg.n_b} targets"
        )

    capacity = degrees.copy()
    partners: list[set[int]] = [set() for _ in range(cfg.n_a)]
    for k in g.permutation(cfg.n_b):
        room = np.flatnonzero(capacity > 0)
        i = int(g.choice(room))
        partners[i].add(int(k))
        capacity[i] -= 1
    for i in range(cfg.n_a):
        if capacity[i] <= 0:
            continue
        missing = np.array(sorted(set(range(cfg.n_b)) - partners[i]))
        take = min(int(capacity[i]), missing.size)
        if take:
            chosen = g.choice(missing, size=take, replace=False)
            partners[i].update(int(k) for k in np.atleast_1d(chosen))
    return sorted((i, k) for i in range(cfg.n_a) for k in partners[i])


def scale_to_fixed_size(
    sizes: np.ndarray, n_target: int, cap: float
) -> np.ndarray:
    """Probabilities proportional to size, summing to ``n_target``.

    Entries exceeding ``cap`` are pinned there and the remaining mass is
    redistributed proportionally; the loop fails if the required mass
    concentrates on too few units.
    """
    sizes = np.asarray(sizes, dtype=float)
    if np.any(sizes <= 0.0):
        raise SynthError("sizes must be strictly positive")
    if not 0 < n_target < sizes.size:
        raise SynthError("fixed size must lie strictly between 0 and the population size")
    pi = sizes * (n_target / sizes.sum())
    for _ in range(100):
        over = pi > cap
        if not over.any():
            break
        pi[over] = cap
        rest = ~over
        need = n_target - cap * float(over.sum())
        if need <= 0.0 or not rest.any():
            raise SynthError("probability mass concentrates on too few units")
        pi[rest] *= need / pi[rest].sum()
    else:
        raise SynthError("probability scaling did not stabilize")
    if abs(float(pi.sum()) - n_target) > 1e-9:
        raise SynthError("probability mass concentrates on too few units")
    return pi

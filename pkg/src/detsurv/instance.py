"""Problem instance: sampling frames for both populations plus the links."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linkage import LinkStructure


class InstanceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Frames:
    """Sampling frames: prescribed probabilities, auxiliaries, interest variables.

    ``pi_a`` are the prescribed intermediate first-order probabilities
    (summing to the fixed intermediate sample size).  ``x_a``/``x_b`` are
    the auxiliary matrices ((n, P) and (n, Q)); ``y_a``/``y_b`` the
    variables of interest, observed only on samples in production but
    carried here for validation studies.
    """

    pi_a: np.ndarray
    x_a: np.ndarray
    y_a: np.ndarray
    x_b: np.ndarray
    y_b: np.ndarray

    def __post_init__(self) -> None:
        pi = np.asarray(self.pi_a, dtype=float)
        xa = np.atleast_2d(np.asarray(self.x_a, dtype=float))
        xb = np.atleast_2d(np.asarray(self.x_b, dtype=float))
        ya = np.asarray(self.y_a, dtype=float)
        yb = np.asarray(self.y_b, dtype=float)
        if xa.shape[0] != pi.size or ya.shape != (pi.size,):
            raise InstanceError("intermediate frame arrays disagree on n_a")
        if yb.shape != (xb.shape[0],):
            raise InstanceError("target frame arrays disagree on n_b")
        if pi.min() <= 0.0 or pi.max() >= 1.0:
            raise InstanceError("prescribed probabilities must lie in (0, 1)")
        for name, arr in (("pi_a", pi), ("x_a", xa), ("y_a", ya), ("x_b", xb), ("y_b", yb)):
            if not np.all(np.isfinite(arr)):
                raise InstanceError(f"{name} contains non-finite values")
            arr.setflags(write=False)
        object.__setattr__(self, "pi_a", pi)
        object.__setattr__(self, "x_a", xa)
        object.__setattr__(self, "y_a", ya)
        object.__setattr__(self, "x_b", xb)
        object.__setattr__(self, "y_b", yb)

    @property
    def n_a(self) -> int:
        return self.pi_a.size

    @property
    def n_b(self) -> int:
        return self.x_b.shape[0]


@dataclass(frozen=True, eq=False)
class Instance:
    frames: Frames
    links: LinkStructure

    def __post_init__(self) -> None:
        if self.links.n_a != self.frames.n_a or self.links.n_b != self.frames.n_b:
            raise InstanceError("link structure and frames disagree on population sizes")

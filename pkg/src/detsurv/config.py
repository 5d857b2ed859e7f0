"""Run configuration: a single JSON document with every knob named."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import kernel as _kernel

ENV_CONFIG = "DETSURV_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # reproducibility
    seed: int = 0
    # synthetic instance shape (defaults follow the reference scenario:
    # 250 x 337 populations, ~631 links, fixed intermediate size 15)
    n_a: int = 250
    n_b: int = 337
    links_min: int = 1
    links_max: int = 3
    target_links: int | None = 631
    n_sample_a: int = 15
    aux_correlation: float = 0.8
    pi_cap: float = 1.0 - 1e-6
    # optimization
    outer_iterations: int = 5
    inner_sweeps: int = 1
    min_decrease: float = 1e-12
    svd_cutoff: float = 1e-10
    pi_floor: float = 1e-6
    weak_weight: float = 0.0
    one_stage: bool = False
    # Monte Carlo
    replicates: int = 10000
    chunk: int = 4096
    joint_pairs: int = 50
    # ingestion (all three set -> ingest mode; all None -> synthesize)
    frame_a_path: str | None = None
    frame_b_path: str | None = None
    links_path: str | None = None
    # output
    out_dir: str = "run"
    # kernel-contract tolerances, surfaced read-only for reporting
    symmetry_tol: float = _kernel.SYMMETRY_TOL
    idempotency_tol: float = _kernel.IDEMPOTENCY_TOL
    eigenvalue_slack: float = _kernel.EIGENVALUE_SLACK

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1")
        if self.chunk < 1:
            raise ConfigError("chunk must be at least 1")
        if not (0 < self.n_sample_a < self.n_a):
            raise ConfigError("n_sample_a must lie strictly between 0 and n_a")
        if not (1 <= self.links_min <= self.links_max):
            raise ConfigError("need 1 <= links_min <= links_max")
        if self.links_max > self.n_b:
            raise ConfigError("links_max cannot exceed n_b")
        if not (0.0 < self.pi_cap < 1.0):
            raise ConfigError("pi_cap must lie in (0, 1)")
        if not (0.0 <= self.aux_correlation < 1.0):
            raise ConfigError("aux_correlation must lie in [0, 1)")
        if self.outer_iterations < 0:
            raise ConfigError("outer_iterations must be nonnegative")
        if self.joint_pairs < 0:
            raise ConfigError("joint_pairs must be nonnegative")
        paths = (self.frame_a_path, self.frame_b_path, self.links_path)
        given = [p for p in paths if p is not None]
        if given and len(given) != 3:
            raise ConfigError("ingest mode needs frame_a_path, frame_b_path and links_path")
        for p in given:
            if not Path(p).is_file():
                raise ConfigError(f"ingest file not found: {p}")

    @property
    def ingest_mode(self) -> bool:
        return self.frame_a_path is not None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, path: str | Path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

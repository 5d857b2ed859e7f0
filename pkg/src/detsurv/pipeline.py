"""End-to-end pipeline: instance, validation, optimization, target
probabilities, Monte Carlo, reports.

Each stage writes its artifacts atomically into the run directory; a
failure raises :class:`StageError` carrying the stage name so the CLI
can exit with a diagnosable status.  Identical configs produce
byte-identical artifacts.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import io as dio
from .config import RunConfig
from .instance import Instance
from .linkage import SecondStageDesign, WeightMatrix, validate
from .optimizer import OptimizerState, coordinate_descent, initial_state
from .simulate import Designs, SimulationReport, monte_carlo
from .synth import synth_instance
from .target import one_stage_target_probs, two_stage_target_probs

STAGES = (
    "instance",
    "validate",
    "optimize",
    "target_probs",
    "simulate",
    "report",
)


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def _stage(name: str):
    def wrap(fn):
        def run(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except Exception as exc:
                raise StageError(name, exc) from exc

        return run

    return wrap


@_stage("instance")
def stage_instance(cfg: RunConfig, out: Path) -> Instance:
    if cfg.ingest_mode:
        instance = dio.read_instance(
            cfg.frame_a_path, cfg.frame_b_path, cfg.links_path, mapping_dir=out
        )
    else:
        instance = synth_instance(cfg)
    dio.write_instance(out, instance)
    return instance


@_stage("validate")
def stage_validate(instance: Instance, out: Path) -> None:
    ls = instance.links
    report = validate(
        ls, WeightMatrix.uniform(ls).theta, SecondStageDesign.uniform(ls).pi1ab
    )
    dio.write_json_atomic(
        out / "validation.json",
        {
            "ok": report.ok,
            "violations": [
                {"kind": v.kind, "index": v.index, "magnitude": v.magnitude}
                for v in report.violations
            ],
        },
    )
    if not report.ok:
        raise ValueError(f"initial designs invalid:\n{report}")


@_stage("optimize")
def stage_optimize(cfg: RunConfig, instance: Instance, out: Path) -> OptimizerState:
    state = initial_state(
        instance.frames,
        instance.links,
        one_stage=cfg.one_stage,
        weak_weight=cfg.weak_weight,
    )
    state = coordinate_descent(
        state,
        instance.frames,
        cfg.outer_iterations,
        sweeps=cfg.inner_sweeps,
        weak_weight=cfg.weak_weight,
        min_decrease=cfg.min_decrease,
        svd_cutoff=cfg.svd_cutoff,
        pi_floor=cfg.pi_floor,
    )
    dio.write_trace(out / "trace.csv", state.trace)
    dio.write_kernel(out, state.kernel, prescribed_diagonal=instance.frames.pi_a)
    dio.write_link_values(out / "theta.csv", instance.links, state.weights.theta, "theta")
    if state.design is not None:
        dio.write_link_values(
            out / "pi1ab.csv", instance.links, state.design.pi1ab, "pi1ab"
        )
    return state


@_stage("target_probs")
def stage_target_probs(instance: Instance, state: OptimizerState, out: Path) -> None:
    ls = instance.links
    one = one_stage_target_probs(state.kernel, ls)
    two = (
        two_stage_target_probs(state.kernel, state.design)
        if state.design is not None
        else None
    )
    dio.write_target_probs(
        out / "target_probs.csv",
        one.first_order,
        None if two is None else two.first_order,
    )


@_stage("simulate")
def stage_simulate(
    cfg: RunConfig, instance: Instance, state: OptimizerState, out: Path
) -> SimulationReport:
    designs = Designs(kernel=state.kernel, weights=state.weights, design=state.design)
    report = monte_carlo(
        instance,
        designs,
        replicates=cfg.replicates,
        seed=cfg.seed,
        chunk=cfg.chunk,
        joint_pairs=cfg.joint_pairs,
    )
    dio.write_json_atomic(out / "simulation.json", report.to_dict())
    return report


@_stage("report")
def stage_report(out: Path) -> None:
    write_flat_reports(out)


def write_flat_reports(out: Path) -> None:
    """Flatten simulation.json into the CSV report files."""
    with open(out / "simulation.json", "r", encoding="utf-8") as fh:
        data = json.load(fh)

    rows = ["size,count"]
    for size in sorted(data["size_histogram"], key=int):
        rows.append(f"{size},{data['size_histogram'][size]}")
    dio.write_text_atomic(out / "sizes.csv", "\n".join(rows) + "\n")

    rows = ["id_b,closed,empirical,se,z"]
    for entry in data["first_order"]:
        rows.append(
            ",".join(
                [
                    str(entry["id_b"]),
                    repr(entry["closed"]),
                    repr(entry["empirical"]),
                    repr(entry["se"]),
                    repr(entry["z"]),
                ]
            )
        )
    dio.write_text_atomic(out / "inclusion.csv", "\n".join(rows) + "\n")

    rows = ["id_b,mean,se,z"]
    for entry in data["weight_means"]:
        rows.append(
            f"{entry['id_b']},{entry['mean']!r},{entry['se']!r},{entry['z']!r}"
        )
    dio.write_text_atomic(out / "weights.csv", "\n".join(rows) + "\n")

    cols = (
        "variable,estimator,true_total,mean,se_mean,z_mean,"
        "var_empirical,var_closed,cv_empirical,cv_closed"
    )
    rows = [cols]
    for entry in data["estimators"]:
        rows.append(
            ",".join(
                [
                    entry["variable"],
                    entry["estimator"],
                    repr(entry["true_total"]),
                    repr(entry["mean"]),
                    repr(entry["se_mean"]),
                    repr(entry["z_mean"]),
                    repr(entry["var_empirical"]),
                    "" if entry["var_closed"] is None else repr(entry["var_closed"]),
                    repr(entry["cv_empirical"]),
                    "" if entry["cv_closed"] is None else repr(entry["cv_closed"]),
                ]
            )
        )
    dio.write_text_atomic(out / "estimators.csv", "\n".join(rows) + "\n")


def run_pipeline(cfg: RunConfig) -> Path:
    """Run every stage into ``cfg.out_dir`` and return that directory."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dio.write_json_atomic(out / "config.json", cfg.to_dict())
    instance = stage_instance(cfg, out)
    stage_validate(instance, out)
    state = stage_optimize(cfg, instance, out)
    stage_target_probs(instance, state, out)
    stage_simulate(cfg, instance, state, out)
    stage_report(out)
    return out

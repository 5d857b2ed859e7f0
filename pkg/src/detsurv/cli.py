"""Command-line interface.

Subcommands mirror the pipeline stages; ``run`` chains them all.  The
configuration JSON is looked up at ``--config``, then the
``DETSURV_CONFIG`` environment variable, then built-in defaults.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from .config import ENV_CONFIG, ConfigError, RunConfig
from .linkage import SecondStageDesign, WeightMatrix, validate
from .pipeline import (
    StageError,
    run_pipeline,
    stage_instance,
    stage_optimize,
    stage_simulate,
    stage_target_probs,
    stage_validate,
    write_flat_reports,
)
from .target import pi2b_joint, two_stage_target_probs


def load_config(args: argparse.Namespace) -> RunConfig:
    path = args.config or os.environ.get(ENV_CONFIG)
    cfg = RunConfig.from_json(path) if path else RunConfig()
    overrides = {}
    for name in ("seed", "replicates", "out_dir", "outer_iterations"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if overrides:
        cfg = RunConfig.from_dict({**cfg.to_dict(), **overrides})
    return cfg


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to the run configuration JSON")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out-dir", dest="out_dir", help="override the output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detsurv",
        description=(
            "Determinantal sampling designs for two-stage indirect sampling: "
            "construct, optimize, and validate by simulation."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate the synthetic instance files")
    _add_common(p)

    p = sub.add_parser("validate", help="check design constraints on an instance")
    _add_common(p)

    p = sub.add_parser("kernel", help="construct the prescribed-diagonal kernel")
    _add_common(p)

    p = sub.add_parser("optimize", help="run the coordinate-descent optimization")
    _add_common(p)
    p.add_argument("--outer-iterations", dest="outer_iterations", type=int)
    p.add_argument(
        "--dump-q",
        action="store_true",
        help="also write the final variance quadratic form as a dense CSV",
    )

    p = sub.add_parser("probs", help="target inclusion probabilities of a run")
    _add_common(p)
    p.add_argument("--run", required=True, help="run directory holding the designs")
    p.add_argument(
        "--joint",
        nargs=2,
        type=int,
        metavar=("K", "L"),
        help="print one joint probability for the 1-based target pair",
    )
    p.add_argument(
        "--write-joint",
        action="store_true",
        help="materialize every pairwise joint into target_joint.csv (quadratic cost)",
    )

    p = sub.add_parser("sample", help="draw replicates from a run's intermediate kernel")
    _add_common(p)
    p.add_argument("--run", required=True, help="run directory holding the kernel")
    p.add_argument("--draws", type=int, default=100, help="number of replicates")
    p.add_argument(
        "--first-replicate",
        type=int,
        default=0,
        help="stream index of the first draw (draw_id of row one)",
    )

    p = sub.add_parser("simulate", help="Monte Carlo validation of a run's designs")
    _add_common(p)
    p.add_argument("--replicates", type=int)

    p = sub.add_parser("run", help="full pipeline into the output directory")
    _add_common(p)
    p.add_argument("--replicates", type=int)
    p.add_argument("--outer-iterations", dest="outer_iterations", type=int)

    p = sub.add_parser("report", help="flatten simulation.json into report CSVs")
    _add_common(p)
    p.add_argument("--run", required=True, help="run directory with simulation.json")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _dispatch(args, cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args: argparse.Namespace, cfg: RunConfig) -> int:
    out = Path(cfg.out_dir)
    command = args.command

    if command == "run":
        run_pipeline(cfg)
        print(f"run complete: {out}")
        return 0

    if command == "synth":
        out.mkdir(parents=True, exist_ok=True)
        stage_instance(cfg, out)
        print(f"instance written to {out}")
        return 0

    if command == "validate":
        out.mkdir(parents=True, exist_ok=True)
        instance = stage_instance(cfg, out)
        ls = instance.links
        theta = _load_or_none(out / "theta.csv", ls)
        pi1ab = _load_or_none(out / "pi1ab.csv", ls)
        report = validate(
            ls,
            theta if theta is not None else WeightMatrix.uniform(ls).theta,
            pi1ab if pi1ab is not None else SecondStageDesign.uniform(ls).pi1ab,
        )
        print(report)
        return 0 if report.ok else 1

    if command == "kernel":
        out.mkdir(parents=True, exist_ok=True)
        instance = stage_instance(cfg, out)
        from .kernel import projection_kernel_with_diagonal

        kernel = projection_kernel_with_diagonal(instance.frames.pi_a)
        dio.write_kernel(out, kernel, prescribed_diagonal=instance.frames.pi_a)
        print(f"kernel written to {out}")
        return 0

    if command == "optimize":
        out.mkdir(parents=True, exist_ok=True)
        instance = stage_instance(cfg, out)
        stage_validate(instance, out)
        state = stage_optimize(cfg, instance, out)
        if getattr(args, "dump_q", False):
            _dump_q(cfg, instance, state, out)
        print(
            f"optimization finished: {state.trace[0].total:.6g} -> "
            f"{state.trace[-1].total:.6g} over {len(state.trace) - 1} steps"
        )
        return 0

    if command == "probs":
        run_dir = Path(args.run)
        instance, designs = _load_run(cfg, run_dir)
        if designs.design is None:
            raise StageError("target_probs", ValueError("run has no second stage"))
        if args.joint:
            k, l = (v - 1 for v in args.joint)
            value = pi2b_joint(designs.kernel, designs.design, k, l)
            print(f"{args.joint[0]},{args.joint[1]},{value!r}")
            return 0
        probs = two_stage_target_probs(designs.kernel, designs.design)
        from .target import one_stage_target_probs

        one = one_stage_target_probs(designs.kernel, instance.links)
        dio.write_target_probs(
            run_dir / "target_probs.csv", one.first_order, probs.first_order
        )
        if args.write_joint:
            rows = ["id_b_1,id_b_2,pi2b_joint"]
            n_b = instance.links.n_b
            for a in range(n_b):
                for b in range(a + 1, n_b):
                    rows.append(f"{a + 1},{b + 1},{probs.joint(a, b)!r}")
            dio.write_text_atomic(run_dir / "target_joint.csv", "\n".join(rows) + "\n")
        print(f"target probabilities written to {run_dir / 'target_probs.csv'}")
        return 0

    if command == "sample":
        run_dir = Path(args.run)
        kernel = dio.read_kernel(run_dir)
        from .sampler import sample_dpp_batch

        draws = sample_dpp_batch(
            kernel, cfg.seed, args.draws, first_replicate=args.first_replicate
        )
        lines = []
        for r in range(draws.shape[0]):
            members = " ".join(str(u + 1) for u in np.flatnonzero(draws[r]))
            lines.append(f"{args.first_replicate + r},{members}")
        dio.write_text_atomic(run_dir / "draws.csv", "\n".join(lines) + "\n")
        print(f"{args.draws} draws written to {run_dir / 'draws.csv'}")
        return 0

    if command == "simulate":
        replicates = args.replicates or cfg.replicates
        cfg = RunConfig.from_dict({**cfg.to_dict(), "replicates": replicates})
        instance, designs = _load_run(cfg, out)
        from .simulate import monte_carlo

        report = monte_carlo(
            instance,
            designs,
            replicates=cfg.replicates,
            seed=cfg.seed,
            chunk=cfg.chunk,
            joint_pairs=cfg.joint_pairs,
        )
        dio.write_json_atomic(out / "simulation.json", report.to_dict())
        print(f"simulation written to {out / 'simulation.json'}")
        return 0

    if command == "report":
        run_dir = Path(args.run)
        write_flat_reports(run_dir)
        print(f"report CSVs written to {run_dir}")
        return 0

    raise AssertionError(f"unhandled command {command!r}")


def _dump_q(cfg: RunConfig, instance, state, out: Path) -> None:
    from .gwsm import q_matrix, tilde_delta_a, tilde_delta_ab_h34, one_stage_tilde_delta_ab
    from .optimizer import target_moment_matrix

    ls = instance.links
    dab = (
        one_stage_tilde_delta_ab(ls)
        if state.design is None
        else tilde_delta_ab_h34(state.design)
    )
    vm = q_matrix(
        ls,
        target_moment_matrix(instance.frames, cfg.weak_weight),
        tilde_delta_a(state.kernel),
        dab,
    )
    lines = [",".join(repr(float(v)) for v in row) for row in vm.q]
    dio.write_text_atomic(out / "q.csv", "\n".join(lines) + "\n")


def _load_or_none(path: Path, ls):
    if not path.is_file():
        return None
    return dio.read_link_values(path, ls)


def _load_run(cfg: RunConfig, run_dir: Path):
    """Rebuild the instance and read the design triple from a run directory."""
    from .simulate import Designs

    if not run_dir.is_dir():
        raise StageError("instance", FileNotFoundError(run_dir))
    instance = dio.read_instance(
        run_dir / "frame_a.csv", run_dir / "frame_b.csv", run_dir / "links.csv"
    )
    kernel = dio.read_kernel(run_dir)
    ls = instance.links
    theta = _load_or_none(run_dir / "theta.csv", ls)
    pi1ab = _load_or_none(run_dir / "pi1ab.csv", ls)
    weights = (
        WeightMatrix(ls, theta) if theta is not None else WeightMatrix.uniform(ls)
    )
    design = SecondStageDesign(ls, pi1ab) if pi1ab is not None else None
    if design is None and not cfg.one_stage:
        design = SecondStageDesign.uniform(ls)
    return instance, Designs(kernel=kernel, weights=weights, design=design)


if __name__ == "__main__":
    sys.exit(main())

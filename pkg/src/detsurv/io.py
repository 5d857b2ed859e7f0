"""File formats: CSV payloads, JSON sidecars, atomic writes.

All floats are written in shortest round-trip form (``repr``), kernels
in full-precision scientific notation, so identical inputs always
produce byte-identical files.  External unit ids are 1-based; the
in-memory index is 0-based.  Ingested frames may carry arbitrary ids:
they are remapped to contiguous 1-based integers in file order and the
mapping is emitted alongside.
"""

from __future__ import annotations

import csv
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .instance import Frames, Instance
from .kernel import Kernel
from .linkage import LinkStructure, build_link_structure


class IngestError(ValueError):
    pass


def write_text_atomic(path: str | Path, text: str) -> None:
    """Write via a sibling temp file and rename, so readers never see a
    partial file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _f(x: float) -> str:
    return repr(float(x))


def _fsci(x: float) -> str:
    return np.format_float_scientific(float(x), unique=True)


def write_json_atomic(path: str | Path, payload: dict) -> None:
    write_text_atomic(path, json.dumps(payload, sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

def write_kernel(
    directory: str | Path, kernel: Kernel, name: str = "kernel",
    prescribed_diagonal: np.ndarray | None = None,
) -> None:
    """Dense CSV (one row per line) plus a JSON sidecar with metadata."""
    directory = Path(directory)
    lines = [",".join(_fsci(v) for v in row) for row in kernel.entries]
    write_text_atomic(directory / f"{name}.csv", "\n".join(lines) + "\n")
    sidecar = {
        "n": kernel.n,
        "is_projection": kernel.is_projection,
        "prescribed_diagonal": (
            None
            if prescribed_diagonal is None
            else [float(v) for v in prescribed_diagonal]
        ),
    }
    write_json_atomic(directory / f"{name}.json", sidecar)


def read_kernel(directory: str | Path, name: str = "kernel") -> Kernel:
    directory = Path(directory)
    entries = np.loadtxt(directory / f"{name}.csv", delimiter=",", ndmin=2)
    with open(directory / f"{name}.json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    if entries.shape != (sidecar["n"], sidecar["n"]):
        raise IngestError(f"kernel payload shape {entries.shape} contradicts sidecar")
    return Kernel(entries, is_projection=bool(sidecar["is_projection"]))


# ---------------------------------------------------------------------------
# link-indexed vectors (theta, second-stage probabilities)
# ---------------------------------------------------------------------------

def write_link_values(
    path: str | Path, ls: LinkStructure, values: np.ndarray, column: str
) -> None:
    rows = [f"id_a,id_b,{column}"]
    for d in range(ls.n_links):
        rows.append(f"{ls.link_i[d] + 1},{ls.link_k[d] + 1},{_f(values[d])}")
    write_text_atomic(path, "\n".join(rows) + "\n")


def read_link_values(path: str | Path, ls: LinkStructure) -> np.ndarray:
    out = np.full(ls.n_links, np.nan)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            d = ls.dense_index(int(row["id_a"]) - 1, int(row["id_b"]) - 1)
            out[d] = float(row[list(row)[-1]])
    if np.isnan(out).any():
        raise IngestError(f"{path} does not cover every link")
    return out


# ---------------------------------------------------------------------------
# instances
# ---------------------------------------------------------------------------

def write_instance(directory: str | Path, instance: Instance) -> None:
    directory = Path(directory)
    fr = instance.frames
    p = fr.x_a.shape[1]
    q = fr.x_b.shape[1]
    rows = ["id,pi," + ",".join(f"x_{j + 1}" for j in range(p)) + ",y"]
    for i in range(fr.n_a):
        cells = [str(i + 1), _f(fr.pi_a[i])]
        cells += [_f(v) for v in fr.x_a[i]]
        cells.append(_f(fr.y_a[i]))
        rows.append(",".join(cells))
    write_text_atomic(directory / "frame_a.csv", "\n".join(rows) + "\n")

    rows = ["id," + ",".join(f"x_{j + 1}" for j in range(q)) + ",y"]
    for k in range(fr.n_b):
        cells = [str(k + 1)]
        cells += [_f(v) for v in fr.x_b[k]]
        cells.append(_f(fr.y_b[k]))
        rows.append(",".join(cells))
    write_text_atomic(directory / "frame_b.csv", "\n".join(rows) + "\n")

    ls = instance.links
    rows = ["id_a,id_b"]
    rows += [f"{i + 1},{k + 1}" for i, k in zip(ls.link_i, ls.link_k)]
    write_text_atomic(directory / "links.csv", "\n".join(rows) + "\n")


def _read_csv_rows(path: str | Path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def read_instance(
    frame_a_path: str | Path,
    frame_b_path: str | Path,
    links_path: str | Path,
    mapping_dir: str | Path | None = None,
) -> Instance:
    """Ingest external frames, remapping ids to contiguous 1-based integers.

    The external-to-internal mapping follows frame file order and is
    written to ``id_map_a.csv`` / ``id_map_b.csv`` when ``mapping_dir``
    is given.
    """
    rows_a = _read_csv_rows(frame_a_path)
    rows_b = _read_csv_rows(frame_b_path)
    if not rows_a or not rows_b:
        raise IngestError("empty frame file")
    map_a = _id_map([r["id"] for r in rows_a], "frame_a")
    map_b = _id_map([r["id"] for r in rows_b], "frame_b")

    p = _aux_count(rows_a[0], {"id", "pi", "y"})
    q = _aux_count(rows_b[0], {"id", "y"})
    pi_a = np.array([float(r["pi"]) for r in rows_a])
    x_a = np.array([[float(r[f"x_{j + 1}"]) for j in range(p)] for r in rows_a])
    y_a = np.array([float(r["y"]) for r in rows_a])
    x_b = np.array([[float(r[f"x_{j + 1}"]) for j in range(q)] for r in rows_b])
    y_b = np.array([float(r["y"]) for r in rows_b])

    edges = []
    for r in _read_csv_rows(links_path):
        try:
            edges.append((map_a[r["id_a"]], map_b[r["id_b"]]))
        except KeyError as exc:
            raise IngestError(f"links.csv references unknown id {exc}") from None
    links = build_link_structure(len(rows_a), len(rows_b), edges)

    if mapping_dir is not None:
        for name, mapping in (("id_map_a", map_a), ("id_map_b", map_b)):
            rows = ["external_id,internal_id"]
            rows += [f"{ext},{internal + 1}" for ext, internal in mapping.items()]
            write_text_atomic(Path(mapping_dir) / f"{name}.csv", "\n".join(rows) + "\n")

    frames = Frames(pi_a=pi_a, x_a=x_a, y_a=y_a, x_b=x_b, y_b=y_b)
    return Instance(frames=frames, links=links)


def _id_map(ids: list[str], what: str) -> dict[str, int]:
    mapping: dict[str, int] = {}
    for raw in ids:
        if raw in mapping:
            raise IngestError(f"duplicate id {raw!r} in {what}")
        mapping[raw] = len(mapping)
    return mapping


def _aux_count(row: dict, reserved: set[str]) -> int:
    names = [c for c in row if c not in reserved]
    count = len(names)
    expected = {f"x_{j + 1}" for j in range(count)}
    if set(names) != expected:
        raise IngestError(f"auxiliary columns {sorted(names)} are not x_1..x_{count}")
    return count


# ---------------------------------------------------------------------------
# optimizer outputs
# ---------------------------------------------------------------------------

def write_trace(path: str | Path, trace) -> None:
    rows = ["step,variable,part_a,part_b,total"]
    for step, row in enumerate(trace):
        rows.append(
            f"{step},{row.step_label},{_f(row.part_a)},{_f(row.part_b)},{_f(row.total)}"
        )
    write_text_atomic(path, "\n".join(rows) + "\n")


def write_target_probs(
    path: str | Path, pi1b: np.ndarray, pi2b: np.ndarray | None
) -> None:
    rows = ["id_b,pi1b,pi2b"]
    for k in range(pi1b.size):
        second = _f(pi2b[k]) if pi2b is not None else ""
        rows.append(f"{k + 1},{_f(pi1b[k])},{second}")
    write_text_atomic(path, "\n".join(rows) + "\n")

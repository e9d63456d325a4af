#!/usr/bin/env python3

"""
mpgmres.fileio
~~~~~~~~~~~~~~

Everything read from or written to disk.

Contains:
- Matrix Market: `load_matrix_market`, `write_matrix_market`, `load_vector`.
- Result CSVs: per-iteration convergence histories, Table-style summaries.
- Run configurations: ``key=value`` files, see `parse_run_config`.
"""

from __future__ import annotations

import csv
import logging
import pathlib
import shlex
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.io
import scipy.sparse

from mpgmres.core import CsrMatrix
from mpgmres.types import (
    HistoryEntry,
    PrecondSpec,
    Precision,
    RhsSpec,
    RunConfig,
    SolverKind,
    SolveReport,
    StencilSpec,
)
from mpgmres.util import (
    ConfigError,
    Kernel,
    MatrixMarketParseError,
    UnsupportedFormatError,
)

log = logging.getLogger(__name__)

PathLike = Union[str, pathlib.Path]

CONVERGENCE_COLUMNS = ("iteration", "implicit_relres", "explicit_relres", "phase")
SUMMARY_COLUMNS = (
    "name",
    "n",
    "nnz",
    "solver",
    "precond",
    "time_s",
    "iters",
    "converged",
    "loss_of_accuracy",
) + tuple(f"time_{k.value}" for k in Kernel)

# * Matrix Market


def _read_header(path: pathlib.Path) -> Tuple[int, int, int, str]:
    try:
        rows, cols, entries, fmt, field, symmetry = scipy.io.mminfo(str(path))
    except ValueError as exc:
        raise MatrixMarketParseError(f"Malformed header: {exc}", 1) from exc
    if fmt != "coordinate" or field not in ("real", "integer"):
        raise UnsupportedFormatError(
            f"{path.name}: only coordinate real/integer is supported, "
            f"got {fmt} {field}"
        )
    if symmetry not in ("general", "symmetric"):
        raise UnsupportedFormatError(f"{path.name}: unsupported symmetry {symmetry}")
    return rows, cols, entries, symmetry


def _data_lines(path: pathlib.Path) -> Tuple[List[str], List[int]]:
    """Non-comment lines after the header, with their 1-based numbers."""
    lines, numbers = [], []
    with open(path, encoding="ascii", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if stripped and not stripped.startswith("%"):
                lines.append(stripped)
                numbers.append(lineno)
    return lines, numbers


def _parse_entry(line: str, lineno: int) -> Tuple[int, int, float]:
    fields = line.split()
    if len(fields) != 3:
        raise MatrixMarketParseError(f"Expected 'row col value', got '{line}'", lineno)
    try:
        return int(fields[0]), int(fields[1]), float(fields[2])
    except ValueError as exc:
        raise MatrixMarketParseError(f"Invalid entry '{line}'", lineno) from exc


def load_matrix_market(path: PathLike) -> CsrMatrix:
    """Reads a coordinate real/integer, general or symmetric, `.mtx` file.

    Symmetric files are expanded by mirroring the off-diagonal entries.
    Duplicate entries are summed. Values are always read in fp64.

    Raises:
        UnsupportedFormatError: Pattern, complex, array or skew/hermitian files.
        MatrixMarketParseError: Malformed lines or out of range indices.
    """
    log.debug("Called with path=%s", path)
    path = pathlib.Path(path)
    n_rows, n_cols, n_entries, symmetry = _read_header(path)
    lines, numbers = _data_lines(path)
    entries, entry_lines = lines[1:], numbers[1:]
    if len(entries) != n_entries:
        lineno = numbers[-1] if numbers else 1
        raise MatrixMarketParseError(
            f"Header announces {n_entries} entries, found {len(entries)}", lineno
        )

    try:
        data = np.loadtxt(entries, ndmin=2) if entries else np.zeros((0, 3))
    except ValueError:
        data = None
    if data is None or data.shape[1] != 3:
        # Slow path, only to locate the offending line.
        for line, lineno in zip(entries, entry_lines):
            _parse_entry(line, lineno)
        raise MatrixMarketParseError("Malformed entries", entry_lines[0])
    rows, cols, values = data[:, 0], data[:, 1], data[:, 2]
    bad = (
        (rows != np.floor(rows))
        | (cols != np.floor(cols))
        | (rows < 1)
        | (rows > n_rows)
        | (cols < 1)
        | (cols > n_cols)
    )
    if bad.any():
        i = int(np.argmax(bad))
        raise MatrixMarketParseError(
            f"Index ({entries[i]}) out of range for {n_rows}x{n_cols}", entry_lines[i]
        )
    rows = rows.astype(np.int64) - 1
    cols = cols.astype(np.int64) - 1
    if symmetry == "symmetric":
        off = rows != cols
        rows, cols = (
            np.concatenate([rows, cols[off]]),
            np.concatenate([cols, rows[off]]),
        )
        values = np.concatenate([values, values[off]])
    S = scipy.sparse.coo_matrix((values, (rows, cols)), shape=(n_rows, n_cols))
    A = CsrMatrix.from_scipy(S.tocsr())
    log.info("Loaded %s: %dx%d, nnz=%d", path.name, n_rows, n_cols, A.nnz)
    return A


def write_matrix_market(A: CsrMatrix, path: PathLike) -> None:
    """Writes `A` as coordinate real general with round-trip exact values."""
    log.debug("Called with A=%dx%d, path=%s", A.n_rows, A.n_cols, path)
    scipy.io.mmwrite(
        str(path),
        scipy.sparse.coo_matrix(A.scipy.astype(np.float64)),
        symmetry="general",
        precision=17,
    )


def load_vector(path: PathLike) -> np.ndarray:
    """A fp64 vector from a Matrix Market file or whitespace separated text."""
    log.debug("Called with path=%s", path)
    path = pathlib.Path(path)
    with open(path, encoding="ascii", errors="replace") as fh:
        is_mtx = fh.readline().startswith("%%MatrixMarket")
    if not is_mtx:
        return np.loadtxt(path, ndmin=1, dtype=np.float64).ravel()
    data = scipy.io.mmread(str(path))
    if scipy.sparse.issparse(data):
        data = data.toarray()
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 2 and min(data.shape) != 1:
        raise UnsupportedFormatError(f"{path.name} holds a matrix, not a vector")
    return data.ravel()


# * Result CSVs


def _float(value: Optional[float]) -> str:
    return "" if value is None else repr(float(value))


def write_convergence_csv(report: SolveReport, path: PathLike) -> None:
    """One row per iteration, explicit residual blank where it wasn't computed."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CONVERGENCE_COLUMNS)
        for e in report.residual_history:
            writer.writerow(
                (
                    e.iteration,
                    _float(e.implicit_relres),
                    _float(e.explicit_relres),
                    e.phase.value,
                )
            )
    log.info("Wrote %d history rows to %s", len(report.residual_history), path)


def read_convergence_csv(path: PathLike) -> List[HistoryEntry]:
    """The history `write_convergence_csv` wrote."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        return [
            HistoryEntry(
                int(row["iteration"]),
                float(row["implicit_relres"]) if row["implicit_relres"] else None,
                float(row["explicit_relres"]) if row["explicit_relres"] else None,
                Precision(row["phase"]),
            )
            for row in reader
        ]


def summary_row(
    name: str, A: CsrMatrix, config: RunConfig, report: SolveReport
) -> Dict[str, Any]:
    """A summary CSV row with the kernel breakdown of `report`."""
    row: Dict[str, Any] = {
        "name": name,
        "n": A.n_rows,
        "nnz": A.nnz,
        "solver": config.solver.value,
        "precond": str(config.precond),
        "time_s": report.solve_time,
        "iters": report.total_iters,
        "converged": report.converged,
        "loss_of_accuracy": report.loss_of_accuracy,
    }
    for kernel in Kernel:
        row[f"time_{kernel.value}"] = report.kernel_times.get(kernel, 0.0)
    return row


def write_summary_csv(rows: Iterable[Mapping[str, Any]], path: PathLike) -> None:
    write_table_csv(rows, path, SUMMARY_COLUMNS)


def write_table_csv(
    rows: Iterable[Mapping[str, Any]],
    path: PathLike,
    columns: Optional[Sequence[str]] = None,
) -> None:
    """Writes dict rows, the columns default to the keys of the first row."""
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {k: repr(v) if isinstance(v, float) else v for k, v in row.items()}
            )
    log.info("Wrote %d rows to %s", len(rows), path)


# * Run configurations

CONFIG_KEYS = (
    "solver",
    "matrix",
    "gen",
    "m",
    "tol",
    "max_iters",
    "precond",
    "precond_precision",
    "rcm",
    "rhs",
    "switch_iter",
    "seed",
    "out",
    "override_fp32_floor",
)
"""Keys of a run configuration, in the order `format_run_config` writes them."""

_ALIASES = {"rtol": "tol", "max-iters": "max_iters", "switch-iter": "switch_iter"}


def _parse_bool(key: str, value: str) -> bool:
    if value.lower() in ("1", "true", "yes", "on"):
        return True
    if value.lower() in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key} must be true or false, got '{value}'")


def config_pairs(text: str) -> Dict[str, str]:
    """Raw ``key=value`` strings of a config text, aliases resolved."""
    pairs: Dict[str, str] = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0]
        for token in shlex.split(line):
            key, sep, value = token.partition("=")
            key = _ALIASES.get(key.strip(), key.strip())
            if not sep:
                raise ConfigError(f"Expected key=value, got '{token}'")
            if key not in CONFIG_KEYS:
                raise ConfigError(f"Unknown key '{key}'")
            if key in pairs:
                raise ConfigError(f"Duplicate key '{key}'")
            pairs[key] = value.strip()
    return pairs


def _parse_int(key: str, value: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"{key} must be an integer, got '{value}'") from exc


def config_kwargs(pairs: Mapping[str, str], default_seed: int = 0) -> Dict[str, Any]:
    """Typed `RunConfig` fields from raw ``key=value`` strings.

    ``rhs`` is seeded with ``seed`` from `pairs`, else with `default_seed`.
    """
    kwargs: Dict[str, Any] = {}
    seed = _parse_int("seed", pairs["seed"]) if "seed" in pairs else default_seed
    for key, value in pairs.items():
        if key == "solver":
            if value:
                try:
                    kwargs[key] = SolverKind(value.lower())
                except ValueError as exc:
                    raise ConfigError(f"Unknown solver '{value}'") from exc
        elif key in ("matrix", "out"):
            kwargs[key] = pathlib.Path(value) if value else None
        elif key == "gen":
            kwargs[key] = StencilSpec.parse(value) if value else None
        elif key in ("m", "max_iters", "switch_iter", "seed"):
            kwargs[key] = _parse_int(key, value)
        elif key == "tol":
            try:
                kwargs[key] = float(value)
            except ValueError as exc:
                raise ConfigError(f"tol must be a number, got '{value}'") from exc
        elif key == "precond":
            kwargs[key] = PrecondSpec.parse(value)
        elif key == "precond_precision":
            try:
                kwargs[key] = Precision(value.lower()) if value else None
            except ValueError as exc:
                raise ConfigError(f"Unknown precision '{value}'") from exc
        elif key == "rhs":
            kwargs[key] = RhsSpec.parse(value, seed)
        else:
            kwargs[key] = _parse_bool(key, value)
    return kwargs


def parse_run_config(text: str, **defaults: Any) -> RunConfig:
    """Reads whitespace or newline separated ``key=value`` pairs.

    ``#`` starts a comment. Keys are the `RunConfig` fields, values look like
    the CLI flags of the same name (``gen=laplace2d:50``, ``precond=jacobi:8``,
    ``rhs=file:b.mtx``). `defaults` fill in keys the text doesn't set.

    Raises:
        ConfigError: Unknown keys, bad values or violated `RunConfig` invariants.
    """
    pairs = config_pairs(text)
    kwargs = {**defaults, **config_kwargs(pairs, defaults.get("seed", 0))}
    if "solver" not in kwargs:
        raise ConfigError("solver required")
    return RunConfig(**kwargs)


def format_run_config(config: RunConfig) -> str:
    """One ``key=value`` per line in `CONFIG_KEYS` order, unset paths left out."""
    values = {
        "solver": config.solver.value,
        "matrix": config.matrix,
        "gen": config.gen,
        "m": config.m,
        "tol": repr(config.tol),
        "max_iters": config.max_iters,
        "precond": config.precond,
        "precond_precision": (
            config.precond_precision.value if config.precond_precision else None
        ),
        "rcm": str(config.rcm).lower(),
        "rhs": config.rhs,
        "switch_iter": config.switch_iter,
        "seed": config.seed,
        "out": config.out,
        "override_fp32_floor": str(config.override_fp32_floor).lower(),
    }
    lines = []
    for key in CONFIG_KEYS:
        if values[key] is not None:
            lines.append(f"{key}={shlex.quote(str(values[key]))}")
    return "\n".join(lines) + "\n"

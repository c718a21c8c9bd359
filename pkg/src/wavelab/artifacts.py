"""Run-directory output: CSV tables, raw field dumps and the manifest."""
from __future__ import annotations

import subprocess
from pathlib import Path

import numpy as np

from . import __version__


def fmt(value) -> str:
    """Text form used in every table: ints as-is, floats with 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path: Path, columns, rows) -> Path:
    """One header line, then one line per row in the fixed column order."""
    path = Path(path)
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(fmt(row[c]) for c in columns))
    path.write_text("\n".join(lines) + "\n")
    return path


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    """Header and float data of a table written by ``write_csv``."""
    text = Path(path).read_text().splitlines()
    header = text[0].split(",")
    data = np.array([[float(v) for v in line.split(",")] for line in text[1:] if line], dtype=float)
    return header, data.reshape(-1, len(header))


def write_series_csv(path: Path, coords: np.ndarray, values: np.ndarray, coord_name: str = "t") -> Path:
    """A trace or spatial array as ``index, coordinate, value`` rows."""
    rows = [{"index": i, coord_name: c, "value": v} for i, (c, v) in enumerate(zip(coords, values))]
    return write_csv(path, ("index", coord_name, "value"), rows)


def dump_field(path: Path, values: np.ndarray, bounds: dict) -> Path:
    """Raw little-endian float64, row-major with x fastest, plus a ``.meta`` sidecar."""
    path = Path(path)
    arr = np.ascontiguousarray(values, dtype="<f8")
    arr.tofile(path)
    meta = [f"shape = {' '.join(str(n) for n in arr.shape)}", "dtype = float64 little-endian",
            "order = row-major (time, x), x fastest"]
    meta += [f"{k} = {fmt(v) if not isinstance(v, str) else v}" for k, v in bounds.items()]
    path.with_name(path.name + ".meta").write_text("\n".join(meta) + "\n")
    return path


def load_field(path: Path) -> np.ndarray:
    path = Path(path)
    meta = {}
    for line in path.with_name(path.name + ".meta").read_text().splitlines():
        key, _, val = line.partition("=")
        meta[key.strip()] = val.strip()
    shape = tuple(int(n) for n in meta["shape"].split())
    return np.fromfile(path, dtype="<f8").reshape(shape)


def version_string() -> str:
    """``git describe`` of the source tree when available, else the package version."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True,
                             text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out_dir: Path, mode: str, config_lines: list[str], wall_time: float,
                   outputs: list[str], status: str) -> Path:
    """Manifest beside the outputs.  It is itself a loadable config file."""
    lines = [
        "# wavelab run manifest",
        f"# mode: {mode}",
        f"# version: {version_string()}",
        f"# wall_time_s: {wall_time:.3f}",
        f"# status: {status}",
        f"# outputs: {' '.join(outputs) if outputs else '-'}",
        *config_lines,
    ]
    path = Path(out_dir) / "manifest.txt"
    path.write_text("\n".join(lines) + "\n")
    return path

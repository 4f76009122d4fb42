"""File formats: binary cube/raster containers, endmember CSV, flat
key-value config files and CSV reports.

Binary containers carry a short ASCII header followed by raw
little-endian float64 payload, and round-trip bit-exactly:

Cube files (``*.hsic``)::

    HSICUBE1
    bands <L>
    height <H>
    width <W>
    pixels row-major
    <8*L*H*W payload bytes, band-major: band 0 for all pixels, band 1, ...>

Raster files (``*.raster``)::

    RASTER1
    height <H>
    width <W>
    <8*H*W payload bytes, row-major>

Config/manifest files are flat ``key = value`` lines ('#' starts a
comment); keys mirror CLI flag names. Floats everywhere are written with
``repr``, the shortest exact round-trip form.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .core import (
    EndmemberLibrary,
    FormatError,
    GridDims,
    SpectralCube,
    SurfaceModel,
)

CUBE_MAGIC = "HSICUBE1"
RASTER_MAGIC = "RASTER1"


def format_value(value) -> str:
    """Canonical text form used in config files and CSVs."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        value = float(value)  # numpy scalars repr as np.float64(...)
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _read_header_line(fh, expected_key: str, path) -> str:
    raw = fh.readline()
    if not raw.endswith(b"\n"):
        raise FormatError(f"{path}: truncated header")
    line = raw[:-1].decode("ascii", errors="replace")
    if expected_key:
        key, _, value = line.partition(" ")
        if key != expected_key:
            raise FormatError(f"{path}: expected header field {expected_key!r}, got {line!r}")
        return value
    return line


def _header_int(fh, key: str, path) -> int:
    value = _read_header_line(fh, key, path)
    try:
        parsed = int(value)
    except ValueError as exc:
        raise FormatError(f"{path}: invalid {key} {value!r}") from exc
    if parsed < 1:
        raise FormatError(f"{path}: {key} must be positive, got {parsed}")
    return parsed


def _read_payload(fh, count: int, path) -> np.ndarray:
    payload = fh.read(8 * count + 1)
    if len(payload) != 8 * count:
        raise FormatError(f"{path}: payload length mismatch "
                          f"(expected {8 * count} bytes, got {len(payload)})")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64)


def write_cube(path, cube: SpectralCube) -> None:
    path = Path(path)
    header = (f"{CUBE_MAGIC}\n"
              f"bands {cube.bands}\n"
              f"height {cube.dims.height}\n"
              f"width {cube.dims.width}\n"
              f"pixels row-major\n")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(cube.data, dtype="<f8").tobytes())


def read_cube(path) -> SpectralCube:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_header_line(fh, "", path)
        if magic != CUBE_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        bands = _header_int(fh, "bands", path)
        height = _header_int(fh, "height", path)
        width = _header_int(fh, "width", path)
        order = _read_header_line(fh, "pixels", path)
        if order != "row-major":
            raise FormatError(f"{path}: unsupported pixel order {order!r}")
        dims = GridDims(height, width)
        data = _read_payload(fh, bands * dims.n, path).reshape(bands, dims.n)
    return SpectralCube(dims=dims, data=data)


def write_raster(path, dims: GridDims, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size != dims.n:
        raise FormatError(f"raster payload has {values.size} values, grid expects {dims.n}")
    path = Path(path)
    header = f"{RASTER_MAGIC}\nheight {dims.height}\nwidth {dims.width}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(values, dtype="<f8").tobytes())


def read_raster(path) -> tuple[GridDims, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = _read_header_line(fh, "", path)
        if magic != RASTER_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        height = _header_int(fh, "height", path)
        width = _header_int(fh, "width", path)
        dims = GridDims(height, width)
        values = _read_payload(fh, dims.n, path)
    return dims, values


def read_surface_model(path) -> SurfaceModel:
    """Load a raster as heights, shifted so the minimum is zero."""
    dims, values = read_raster(path)
    return SurfaceModel.from_raw(dims, values)


def write_endmembers_csv(path, library: EndmemberLibrary, names=None) -> None:
    """Bands-by-count CSV with a header row of endmember names."""
    if names is None:
        names = [f"e{m + 1}" for m in range(library.count)]
    if len(names) != library.count:
        raise FormatError("one name per endmember required")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for row in library.data:
            writer.writerow([format_value(float(v)) for v in row])


def read_endmembers_csv(path) -> EndmemberLibrary:
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            names = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty endmember file") from None
        count = len(names)
        if count == 0:
            raise FormatError(f"{path}: header row has no endmember names")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != count:
                raise FormatError(
                    f"{path}:{lineno}: expected {count} values, got {len(row)}")
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric value") from exc
    if not rows:
        raise FormatError(f"{path}: no spectral rows")
    return EndmemberLibrary(data=np.asarray(rows, dtype=np.float64))


def write_config(path, values: dict) -> None:
    """Flat ``key = value`` file; also used for run manifests."""
    lines = [f"{key} = {format_value(value)}\n"
             for key, value in values.items() if value is not None]
    Path(path).write_text("".join(lines), encoding="ascii")


def read_config(path) -> dict:
    """Parse a flat config file into a string-to-string mapping."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="ascii").splitlines(),
                                 start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        values[key.strip()] = value.strip()
    return values


def write_table_csv(path, header, rows) -> None:
    """CSV with '.' decimals, LF line endings and a mandatory header row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) if v is not None else "" for v in row])

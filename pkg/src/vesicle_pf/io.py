"""Field snapshots (raw + JSON sidecar, VTK ImageData) and checkpoints."""
from __future__ import annotations

import base64
import json
import os
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np

from .spectral import GridSpec, ScalarField3D

FORMAT_VERSION = 1
FORMATS = ("raw", "vti")


class IoError(OSError):
    pass


def _meta(grid: GridSpec, step: int, time: float, extra: dict | None = None) -> dict:
    meta = {
        "format_version": FORMAT_VERSION,
        "dtype": "float64",
        "byte_order": "little",
        "order": "x-fastest",
        "dims": list(grid.shape),
        "lengths": list(grid.lengths),
        "step": int(step),
        "time": float(time),
    }
    if extra:
        meta.update(extra)
    return meta


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def write_raw(path, field: ScalarField3D, step: int = 0, time: float = 0.0, extra: dict | None = None) -> Path:
    """Write ``path`` (little-endian float64, x fastest) and ``path.json``."""
    path = Path(path)
    if not field.is_finite():
        raise IoError(f"refusing to write a non-finite field to {path}")
    _atomic_write(path, field.flat().astype("<f8").tobytes())
    meta = _meta(field.grid, step, time, extra)
    _atomic_write(path.with_name(path.name + ".json"), json.dumps(meta, indent=2).encode())
    return path


def read_raw(path) -> tuple[ScalarField3D, dict]:
    path = Path(path)
    try:
        meta = json.loads(path.with_name(path.name + ".json").read_text())
        data = np.fromfile(path, dtype="<f8")
    except (OSError, ValueError) as exc:
        raise IoError(f"cannot read snapshot {path}: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise IoError(f"{path}: unsupported format version {meta.get('format_version')!r}")
    nx, ny, nz = meta["dims"]
    lx, ly, lz = meta["lengths"]
    grid = GridSpec(nx, ny, nz, lx, ly, lz)
    if data.size != grid.size:
        raise IoError(f"{path}: expected {grid.size} values, found {data.size}")
    return ScalarField3D(grid, data.astype(np.float64)), meta


def write_vti(path, field: ScalarField3D, name: str = "phi", step: int = 0, time: float = 0.0) -> Path:
    """VTK XML ImageData with one base64-encoded Float64 point array."""
    path = Path(path)
    if not field.is_finite():
        raise IoError(f"refusing to write a non-finite field to {path}")
    g = field.grid
    payload = field.flat().astype("<f8").tobytes()
    blob = base64.b64encode(np.uint64(len(payload)).astype("<u8").tobytes() + payload).decode("ascii")
    extent = f"0 {g.nx - 1} 0 {g.ny - 1} 0 {g.nz - 1}"
    spacing = " ".join(repr(h) for h in g.spacing)
    lo, hi = float(field.values.min()), float(field.values.max())
    text = (
        '<?xml version="1.0"?>\n'
        '<VTKFile type="ImageData" version="1.0" byte_order="LittleEndian" header_type="UInt64">\n'
        f'  <ImageData WholeExtent="{extent}" Origin="0 0 0" Spacing="{spacing}">\n'
        '    <FieldData>\n'
        f'      <DataArray type="Int64" Name="step" NumberOfTuples="1" format="ascii">{int(step)}</DataArray>\n'
        f'      <DataArray type="Float64" Name="TIME" NumberOfTuples="1" format="ascii">{float(time)!r}</DataArray>\n'
        '    </FieldData>\n'
        f'    <Piece Extent="{extent}">\n'
        f'      <PointData Scalars="{name}">\n'
        f'        <DataArray type="Float64" Name="{name}" format="binary" '
        f'RangeMin="{lo!r}" RangeMax="{hi!r}">{blob}</DataArray>\n'
        '      </PointData>\n'
        '    </Piece>\n'
        '  </ImageData>\n'
        '</VTKFile>\n'
    )
    _atomic_write(path, text.encode("ascii"))
    return path


def read_vti(path) -> tuple[ScalarField3D, dict]:
    """Read back a file written by :func:`write_vti`."""
    path = Path(path)
    try:
        root = ET.parse(path).getroot()
    except (OSError, ET.ParseError) as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    image = root.find("ImageData")
    ext = [int(v) for v in image.get("WholeExtent").split()]
    dims = (ext[1] + 1, ext[3] + 1, ext[5] + 1)
    spacing = [float(v) for v in image.get("Spacing").split()]
    grid = GridSpec(*dims, *(n * h for n, h in zip(dims, spacing)))
    arr = image.find("Piece/PointData/DataArray")
    raw = base64.b64decode(arr.text.strip())
    nbytes = int(np.frombuffer(raw[:8], dtype="<u8")[0])
    data = np.frombuffer(raw[8:8 + nbytes], dtype="<f8")
    meta = {"name": arr.get("Name"), "range": (float(arr.get("RangeMin")), float(arr.get("RangeMax")))}
    for fd in image.findall("FieldData/DataArray"):
        meta[fd.get("Name")] = float(fd.text) if fd.get("type").startswith("Float") else int(fd.text)
    return ScalarField3D(grid, data.copy()), meta


def write_snapshot(directory, field: ScalarField3D, step: int, time: float, formats=("raw",)) -> list[Path]:
    """Write ``phi_<step>.raw`` and/or ``phi_<step>.vti`` into ``directory``."""
    unknown = set(formats) - set(FORMATS)
    if unknown:
        raise IoError(f"unknown snapshot formats {sorted(unknown)}")
    directory = Path(directory)
    stem = f"phi_{int(step):08d}"
    out = []
    if "raw" in formats:
        out.append(write_raw(directory / f"{stem}.raw", field, step, time))
    if "vti" in formats:
        out.append(write_vti(directory / f"{stem}.vti", field, step=step, time=time))
    return out


def write_checkpoint(directory, field: ScalarField3D, step: int, time: float, config: dict) -> Path:
    """Raw field plus the resolved run configuration, enough to resume bit-exactly."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return write_raw(directory / "checkpoint.raw", field, step, time, extra={"config": config})


def read_checkpoint(path) -> tuple[ScalarField3D, dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "checkpoint.raw"
    return read_raw(path)

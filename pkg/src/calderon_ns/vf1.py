"""Reader and writer for the VF1 binary field format.

Layout: a 64-byte little-endian header

    offset  size  meaning
    0       8     magic b"CALDVF1\\0"
    8       4     u32 n (points per axis)
    12      4     u32 components
    16      8     f64 box length
    24      4     u32 layout (0 physical values, 1 spectral coefficients)
    28      36    reserved, zero

followed by f64 payload, component-major with x varying fastest. The spectral
layout stores the full n^3 coefficient array as interleaved (re, im) pairs.
A JSON manifest with the same stem and a ``.json`` suffix sits next to the
binary file.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .spectral import Grid3, PhysicalField, SpectralField, to_physical, to_spectral

MAGIC = b"CALDVF1\0"
HEADER = struct.Struct("<8sIIdI36x")
PHYSICAL, SPECTRAL = 0, 1


class VF1Error(ValueError):
    """Malformed or inconsistent VF1 file."""


def manifest_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_vf1(path, field, layout: int = PHYSICAL, provenance: dict | None = None,
              parameters: dict | None = None) -> Path:
    """Write ``field`` (SpectralField or PhysicalField) and its manifest."""
    path = Path(path)
    if isinstance(field, SpectralField):
        grid, phys = field.grid, to_physical(field)
    elif isinstance(field, PhysicalField):
        grid, phys = field.grid, field
    else:
        raise TypeError("write_vf1 expects a SpectralField or PhysicalField")
    comps = phys.components
    if layout == PHYSICAL:
        payload = np.stack([phys.values[c].ravel(order="F") for c in range(comps)])
    elif layout == SPECTRAL:
        full = sfft.fftn(phys.values, axes=(1, 2, 3)) / grid.n ** 3
        flat = np.stack([full[c].ravel(order="F") for c in range(comps)])
        payload = np.empty(flat.shape + (2,))
        payload[..., 0] = flat.real
        payload[..., 1] = flat.imag
    else:
        raise VF1Error(f"unknown layout flag {layout}")
    header = HEADER.pack(MAGIC, grid.n, comps, grid.box_len, layout)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(payload, dtype="<f8").tobytes())
    manifest = {
        "format": "VF1",
        "grid": grid.describe(),
        "components": comps,
        "layout": "physical" if layout == PHYSICAL else "spectral",
        "provenance": provenance or {},
        "parameters": parameters or {},
    }
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def read_vf1(path, dealias_fraction: float | None = None) -> SpectralField:
    """Read a VF1 file into a SpectralField.

    The dealiasing fraction is not part of the binary header; it is taken from
    the manifest when present and otherwise from ``dealias_fraction`` (default
    2/3).
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < HEADER.size:
        raise VF1Error("file shorter than the VF1 header")
    magic, n, comps, box_len, layout = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise VF1Error("bad magic")
    if any(raw[28:64]):
        raise VF1Error("reserved header bytes are not zero")
    frac = dealias_fraction
    mpath = manifest_path(path)
    if frac is None and mpath.exists():
        frac = json.loads(mpath.read_text()).get("grid", {}).get("dealias_fraction")
    grid = Grid3(n, box_len, 2.0 / 3.0 if frac is None else frac)
    data = np.frombuffer(raw, dtype="<f8", offset=HEADER.size)
    per = n ** 3 * (2 if layout == SPECTRAL else 1)
    if data.size != per * comps:
        raise VF1Error(f"payload has {data.size} values, expected {per * comps}")
    if layout == PHYSICAL:
        vals = np.stack([data[c * per:(c + 1) * per].reshape((n, n, n), order="F")
                         for c in range(comps)])
        return to_spectral(PhysicalField(grid, vals))
    if layout == SPECTRAL:
        pairs = data.reshape(comps, n ** 3, 2)
        full = np.stack([(pairs[c, :, 0] + 1j * pairs[c, :, 1]).reshape((n, n, n), order="F")
                         for c in range(comps)])
        vals = sfft.ifftn(full * n ** 3, axes=(1, 2, 3)).real
        return to_spectral(PhysicalField(grid, vals))
    raise VF1Error(f"unknown layout flag {layout}")

"""SOFA (HDF5/netCDF) reading and coordinate translation.

Only what conversion needs is read: Data.IR, Data.SamplingRate,
SourcePosition (+ its Type/Units attributes) and the convention
attributes for the summary.  Files with other receiver counts than two
or with unrecognized position conventions fail loudly; guessing a
convention would silently corrupt every downstream direction label.

Azimuth convention mapping: SOFA spherical coordinates use degrees
counterclockwise from the front, usually in [0, 360) or [-180, 180];
HRD1 wants [-180, 180).  Elevation is degrees up from the horizon in
both.  Cartesian positions (x front, y left, z up, meters) convert via
azimuth = atan2(y, x), elevation = asin(z / r), distance = r.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import h5py
import numpy as np

from .hrd1 import write_hrd1

__all__ = ["SofaError", "SofaSummary", "inspect", "convert"]


class SofaError(Exception):
    pass


@dataclass
class SofaSummary:
    conventions: str
    conventions_version: str
    sofa_conventions: str
    position_type: str
    position_units: str
    n_measurements: int
    n_receivers: int
    n_samples: int
    sample_rate_hz: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)


def _attr(obj, name, default=""):
    value = obj.attrs.get(name, default)
    if isinstance(value, bytes):
        return value.decode("utf-8", "replace")
    return str(value)


def _require(f, name):
    if name not in f:
        raise SofaError(f"mandatory SOFA variable {name!r} missing")
    return f[name]


def _read_fields(path):
    try:
        f = h5py.File(path, "r")
    except OSError as exc:
        raise SofaError(f"{path}: not a readable HDF5/SOFA file: {exc}") from exc
    with f:
        ir = _require(f, "Data.IR")[...]
        rate = np.atleast_1d(_require(f, "Data.SamplingRate")[...])
        positions = _require(f, "SourcePosition")[...]
        pos_type = _attr(f["SourcePosition"], "Type", "spherical").lower()
        pos_units = _attr(f["SourcePosition"], "Units")
        summary = SofaSummary(
            conventions=_attr(f, "Conventions"),
            conventions_version=_attr(f, "Version"),
            sofa_conventions=_attr(f, "SOFAConventions"),
            position_type=pos_type,
            position_units=pos_units,
            n_measurements=int(ir.shape[0]),
            n_receivers=int(ir.shape[1]) if ir.ndim > 1 else 1,
            n_samples=int(ir.shape[2]) if ir.ndim > 2 else 0,
            sample_rate_hz=float(rate.ravel()[0]),
        )
    if ir.ndim != 3:
        raise SofaError(f"Data.IR has {ir.ndim} dimensions, expected [M, R, N]")
    if positions.ndim != 2 or positions.shape[1] != 3:
        raise SofaError("SourcePosition must be [M, 3]")
    if positions.shape[0] != ir.shape[0]:
        raise SofaError("SourcePosition and Data.IR disagree on M")
    return ir, positions, summary


def inspect(path) -> SofaSummary:
    """Read-only summary of a SOFA file."""
    _, _, summary = _read_fields(path)
    return summary


def _to_vertical_polar(positions, pos_type):
    if pos_type == "spherical":
        azimuth = (positions[:, 0] + 180.0) % 360.0 - 180.0
        elevation = positions[:, 1]
        distance = positions[:, 2]
        if (np.abs(elevation) > 90.0 + 1e-9).any():
            raise SofaError("spherical elevation outside [-90, 90]")
    elif pos_type == "cartesian":
        x, y, z = positions[:, 0], positions[:, 1], positions[:, 2]
        distance = np.sqrt(x * x + y * y + z * z)
        if (distance <= 0).any():
            raise SofaError("cartesian source position at the origin")
        azimuth = (np.degrees(np.arctan2(y, x)) + 180.0) % 360.0 - 180.0
        elevation = np.degrees(np.arcsin(np.clip(z / distance, -1.0, 1.0)))
    else:
        raise SofaError(f"unknown SourcePosition.Type {pos_type!r}")
    return np.stack([azimuth, elevation, distance], axis=1)


def convert(sofa_path, out_path, dataset_id, subject_id=None) -> SofaSummary:
    """Translate one SOFA file into one HRD1 file."""
    ir, positions, summary = _read_fields(sofa_path)
    if summary.n_receivers != 2:
        raise SofaError(
            f"need exactly 2 receivers for conversion, file has "
            f"{summary.n_receivers}"
        )
    directions = _to_vertical_polar(np.asarray(positions, dtype=float),
                                    summary.position_type)
    if subject_id is None:
        from pathlib import Path

        subject_id = Path(sofa_path).stem
    write_hrd1(out_path, subject_id, dataset_id, summary.sample_rate_hz,
               directions, np.asarray(ir))
    return summary

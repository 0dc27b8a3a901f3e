"""Coordinate conversions and elevation-sector labels.

Measurement files store directions in vertical-polar coordinates
(azimuth, elevation).  All analysis runs in the interaural-polar system:
a lateral angle about the interaural axis plus a polar angle that walks
the median sagittal circle from the front horizon (0), over the head
(90), to the rear horizon (180) and below (toward 270 == -90).

Conventions (frozen):
- azimuth in [-180, 180), counterclockwise seen from above, positive to
  the listener's left; elevation in [-90, 90], positive up.
- lateral in [-90, 90], negative to the listener's left, positive right.
- polar normalized to [-90, 270) so the medial sector bounds are
  contiguous; exactly -90 is treated as 270 when labelling.
- at the poles (|lateral| == 90) the polar angle is geometrically
  undefined and is canonicalized to 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

__all__ = [
    "ElevationClass",
    "VerticalPolar",
    "InterauralPolar",
    "Direction",
    "CLASS_SHORT_NAMES",
    "N_CLASSES",
    "vertical_to_interaural",
    "interaural_to_vertical",
    "classify",
    "classify_arrays",
    "vertical_to_interaural_arrays",
    "interaural_to_vertical_arrays",
    "ipsi_contra_swap",
    "normalize_azimuth",
    "normalize_polar",
]


class ElevationClass(IntEnum):
    """The nine elevation sectors partitioning the sphere."""

    FRONT_DOWN = 0
    FRONT_LEVEL = 1
    FRONT_UP = 2
    UP = 3
    BACK_UP = 4
    BACK_LEVEL = 5
    BACK_DOWN = 6
    LATERAL_UP = 7
    LATERAL_DOWN = 8


N_CLASSES = 9

CLASS_SHORT_NAMES = ("FD", "FL", "FU", "UP", "BU", "BL", "BD", "LU", "LD")

# Medial sector bounds on the polar angle; each interval is
# lower-exclusive / upper-inclusive.  |lateral| <= LATERAL_BOUND_DEG
# selects the medial sectors, strictly greater selects the lateral ones.
MEDIAL_POLAR_EDGES = (-90.0, -20.0, 20.0, 70.0, 110.0, 160.0, 200.0, 270.0)
LATERAL_BOUND_DEG = 60.0


def normalize_azimuth(azimuth_deg):
    """Wrap an azimuth into [-180, 180)."""
    return (azimuth_deg + 180.0) % 360.0 - 180.0


def normalize_polar(polar_deg):
    """Wrap a polar angle into [-90, 270)."""
    return (polar_deg + 90.0) % 360.0 - 90.0


@dataclass(frozen=True)
class VerticalPolar:
    """Direction as stored in measurement files."""

    azimuth_deg: float
    elevation_deg: float

    def __post_init__(self):
        if not -180.0 <= self.azimuth_deg < 180.0:
            raise ValueError(f"azimuth {self.azimuth_deg} outside [-180, 180)")
        if not -90.0 <= self.elevation_deg <= 90.0:
            raise ValueError(f"elevation {self.elevation_deg} outside [-90, 90]")

    @classmethod
    def wrapped(cls, azimuth_deg, elevation_deg):
        """Build after wrapping the azimuth into range."""
        return cls(float(normalize_azimuth(azimuth_deg)), float(elevation_deg))


@dataclass(frozen=True)
class InterauralPolar:
    """Direction in the interaural-polar (horizontal-polar) system."""

    lateral_deg: float
    polar_deg: float

    def __post_init__(self):
        if not -90.0 <= self.lateral_deg <= 90.0:
            raise ValueError(f"lateral {self.lateral_deg} outside [-90, 90]")
        if not -90.0 <= self.polar_deg < 270.0:
            raise ValueError(f"polar {self.polar_deg} outside [-90, 270)")

    @classmethod
    def wrapped(cls, lateral_deg, polar_deg):
        """Build after wrapping the polar angle into range."""
        return cls(float(lateral_deg), float(normalize_polar(polar_deg)))


@dataclass(frozen=True)
class Direction:
    """One measurement direction with both coordinate forms and its label."""

    interaural: InterauralPolar
    vertical: VerticalPolar
    class_label: ElevationClass
    source_distance_m: float | None = None

    @classmethod
    def from_vertical(cls, vertical: VerticalPolar, distance_m=None):
        interaural = vertical_to_interaural(vertical)
        return cls(interaural, vertical, classify(interaural), distance_m)


def vertical_to_interaural_arrays(azimuth_deg, elevation_deg):
    """Vectorized vertical-polar to interaural-polar conversion.

    Unit-sphere Cartesian intermediate: x front, y left, z up with
    x = cos(el)cos(az), y = cos(el)sin(az), z = sin(el).  The lateral
    angle is the angle toward the right ear, so lateral = asin(-y).
    """
    az = np.radians(np.asarray(azimuth_deg, dtype=float))
    el = np.radians(np.asarray(elevation_deg, dtype=float))
    x = np.cos(el) * np.cos(az)
    y = np.cos(el) * np.sin(az)
    z = np.sin(el)
    lateral = np.degrees(np.arcsin(np.clip(-y, -1.0, 1.0)))
    polar = np.degrees(np.arctan2(z, x))
    # At the poles x and z are both ~0 and atan2 is noise; pin polar to 0.
    degenerate = np.hypot(x, z) < 1e-12
    polar = np.where(degenerate, 0.0, normalize_polar(polar))
    return lateral, polar


def interaural_to_vertical_arrays(lateral_deg, polar_deg):
    """Vectorized inverse of :func:`vertical_to_interaural_arrays`."""
    lat = np.radians(np.asarray(lateral_deg, dtype=float))
    pol = np.radians(np.asarray(polar_deg, dtype=float))
    y = -np.sin(lat)  # positive lateral = right ear = -y
    r = np.cos(lat)
    x = r * np.cos(pol)
    z = r * np.sin(pol)
    azimuth = normalize_azimuth(np.degrees(np.arctan2(y, x)))
    elevation = np.degrees(np.arcsin(np.clip(z, -1.0, 1.0)))
    return azimuth, elevation


def vertical_to_interaural(v: VerticalPolar) -> InterauralPolar:
    lateral, polar = vertical_to_interaural_arrays(v.azimuth_deg, v.elevation_deg)
    return InterauralPolar(float(lateral), float(polar))


def interaural_to_vertical(i: InterauralPolar) -> VerticalPolar:
    azimuth, elevation = interaural_to_vertical_arrays(i.lateral_deg, i.polar_deg)
    return VerticalPolar(float(azimuth), float(elevation))


def classify_arrays(lateral_deg, polar_deg):
    """Vectorized sector labelling; returns int class ids."""
    lat = np.asarray(lateral_deg, dtype=float)
    pol = np.asarray(polar_deg, dtype=float)
    pol = normalize_polar(pol)
    # -90 and 270 are the same point below the head; the medial intervals
    # are lower-exclusive so it belongs to the (200, 270] sector.
    pol = np.where(pol == -90.0, 270.0, pol)

    edges = np.asarray(MEDIAL_POLAR_EDGES)
    medial_idx = np.searchsorted(edges, pol, side="left") - 1
    medial_idx = np.clip(medial_idx, 0, 6)

    is_lateral = np.abs(lat) > LATERAL_BOUND_DEG
    lateral_idx = np.where(
        (pol >= 0.0) & (pol < 180.0),
        int(ElevationClass.LATERAL_UP),
        int(ElevationClass.LATERAL_DOWN),
    )
    return np.where(is_lateral, lateral_idx, medial_idx).astype(np.int64)


def classify(i: InterauralPolar) -> ElevationClass:
    return ElevationClass(int(classify_arrays(i.lateral_deg, i.polar_deg)))


def ipsi_contra_swap(left_spectrum, right_spectrum, lateral_deg):
    """Order the two ear channels as (ipsilateral, contralateral).

    Negative lateral means the source is on the left, so the left ear is
    ipsilateral.  The lateral == 0 tie goes to the left ear.
    """
    left = np.asarray(left_spectrum)
    right = np.asarray(right_spectrum)
    if left.shape != right.shape:
        raise ValueError(
            f"channel shape mismatch: {left.shape} vs {right.shape}"
        )
    if lateral_deg > 0.0:
        return right, left
    return left, right

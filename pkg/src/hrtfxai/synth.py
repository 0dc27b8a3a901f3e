"""Synthetic HRIR generator with planted, elevation-dependent cues.

Every direction gets a flat magnitude template plus localized markers
decided by its elevation sector:

- medial sectors carry a notch-plus-peak composite whose center sweeps
  upward with the folded polar angle (rear angles mirror onto a
  parallel sweep offset downward, with a floor keeping deep-down
  centers resolvable);
- the flanking peak sits a third of an octave above the notch for
  front-hemisphere directions and below it for rear ones, and rear
  notches are half width, so all front/rear evidence stays within half
  an octave of the notch center;
- the frontal three sectors additionally carry a faint high peak;
- lateral sectors get a single wide low-frequency peak each, at
  different centers for up and down.

Every piece of class-separating evidence is therefore localized at one
center frequency per direction, which is what the ground truth records
(one cue per direction: the notch center for medial sectors, the marker
center for lateral ones).

Per-subject jitter rescales every cue center so subjects differ while
class structure survives.  All marker gains scale with the notch depth,
so a zero-depth spec produces flat, class-free spectra (the negative
control).  IRs are linear phase (a half-length circular shift of the
zero-phase response), so the FFT magnitude of a generated HRIR
reproduces its template exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .coords import (
    ElevationClass,
    classify_arrays,
    interaural_to_vertical_arrays,
)
from .data import SubjectRecord

__all__ = [
    "SynthSpec",
    "CueEntry",
    "ScoreResult",
    "direction_grid",
    "fold_polar",
    "notch_center_hz",
    "direction_template",
    "hrir_from_template",
    "generate",
    "saliency_localization_score",
    "uniform_baseline_score",
    "write_ground_truth",
    "read_ground_truth",
]

FRONT_CLASSES = (
    ElevationClass.FRONT_DOWN,
    ElevationClass.FRONT_LEVEL,
    ElevationClass.FRONT_UP,
)


@dataclass(frozen=True)
class SynthSpec:
    n_subjects: int = 40
    lateral_step_deg: float = 36.0
    polar_step_deg: float = 36.0
    # Notch center anchors on the folded polar angle, extrapolated linearly
    # and floored so deep-down centers stay resolvable on the fft grid.
    notch_track: tuple = ((-20.0, 5000.0), (70.0, 11000.0))
    notch_floor_hz: float = 2200.0
    notch_depth_db: float = 20.0
    notch_width_octaves: float = 1.0
    # Flanking peak of the notch-plus-peak composite; the sign of the
    # offset marks the hemisphere (above the notch in front, below it in
    # the rear) while staying inside the half-octave cue window.
    medial_peak_rel_gain: float = 0.9
    medial_peak_width_octaves: float = 0.3
    medial_peak_offset_octaves: float = 0.35
    rear_peak_rel_gain: float = 1.0  # rear marker gets extra contrast
    front_peak_hz: float = 13000.0
    front_peak_rel_gain: float = 0.1  # fraction of notch depth, in dB
    front_peak_width_octaves: float = 0.8
    rear_notch_width_factor: float = 0.6  # rear-hemisphere in-place marker
    rear_center_factor: float = 0.74  # rear sweep sits ~0.4 octave lower
    lateral_up_hz: float = 3200.0
    lateral_down_hz: float = 1900.0
    lateral_rel_gain: float = 1.2
    lateral_width_octaves: float = 0.9
    lateral_flank_rel_gain: float = 0.4  # dips framing the lateral peak
    subject_jitter: float = 0.05  # relative spread of cue-center scaling
    # Class-independent nuisance structure.  Distractor bumps everywhere
    # keep "flat here" from being class evidence, and the broadband level
    # jitter keeps overall loudness from being one, so saliency has to
    # sit on the planted cues.  Neither scales with the notch depth.
    distractors_per_sample: int = 2
    distractor_gain_db: tuple = (1.0, 2.5)
    distractor_width_octaves: tuple = (0.3, 0.8)
    distractor_band_hz: tuple = (400.0, 9000.0)
    level_jitter_db: float = 2.0
    noise_floor_db: float = -45.0
    ir_length: int = 512
    sample_rate_hz: float = 44100.0

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ValueError("need at least one subject")
        if not 0.0 <= self.subject_jitter < 0.5:
            raise ValueError("subject jitter must be in [0, 0.5)")
        nyquist = self.sample_rate_hz / 2
        for hz in (self.front_peak_hz, self.notch_floor_hz,
                   self.lateral_up_hz, self.lateral_down_hz):
            if not 0.0 < hz < nyquist:
                raise ValueError(f"cue center {hz} outside (0, Nyquist)")

    _KEYS = (
        "n_subjects", "lateral_step_deg", "polar_step_deg",
        "notch_floor_hz", "notch_depth_db", "notch_width_octaves",
        "medial_peak_rel_gain", "medial_peak_width_octaves",
        "medial_peak_offset_octaves", "rear_peak_rel_gain",
        "front_peak_hz", "front_peak_rel_gain", "front_peak_width_octaves",
        "rear_notch_width_factor", "rear_center_factor",
        "lateral_up_hz", "lateral_down_hz", "lateral_rel_gain",
        "lateral_width_octaves", "lateral_flank_rel_gain", "subject_jitter",
        "distractors_per_sample", "distractor_gain_db",
        "distractor_width_octaves", "distractor_band_hz",
        "level_jitter_db", "noise_floor_db", "ir_length", "sample_rate_hz",
    )

    def to_text(self) -> str:
        lines = [f"{k} = {getattr(self, k)!r}\n" for k in self._KEYS]
        (p0, f0), (p1, f1) = self.notch_track
        lines.append(f"notch_track = {(p0, f0, p1, f1)!r}\n")
        return "".join(lines)

    @classmethod
    def from_text(cls, text: str) -> "SynthSpec":
        import ast

        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            values[key.strip()] = ast.literal_eval(raw.strip())
        if "notch_track" in values:
            p0, f0, p1, f1 = values["notch_track"]
            values["notch_track"] = ((p0, f0), (p1, f1))
        return cls(**values)


class CueEntry(NamedTuple):
    """Primary planted cue of one generated sample."""

    subject_id: str
    direction_index: int
    cue_center_hz: float
    width_octaves: float


def fold_polar(polar_deg):
    """Map rear polar angles onto their front mirror: p -> 180 - p above 90."""
    p = np.asarray(polar_deg, dtype=float)
    return np.where(p > 90.0, 180.0 - p, p)


def notch_center_hz(spec: SynthSpec, polar_deg):
    """Notch center for a (possibly rear) polar angle.

    The front sweep is linear in the folded polar angle (extrapolated
    beyond the anchors, floored at notch_floor_hz); rear-hemisphere
    angles run a parallel sweep shifted up by rear_center_factor.
    """
    (p0, f0), (p1, f1) = spec.notch_track
    p = np.asarray(polar_deg, dtype=float)
    e = fold_polar(p)
    base = f0 + (e - p0) * (f1 - f0) / (p1 - p0)
    offset = np.where(e != p, base * spec.rear_center_factor, base)
    return np.maximum(offset, spec.notch_floor_hz)


def direction_grid(spec: SynthSpec):
    """(lateral, polar) pairs; lateral values are cell-centered to avoid poles."""
    laterals = np.arange(-90.0 + spec.lateral_step_deg / 2, 90.0,
                         spec.lateral_step_deg)
    polars = np.arange(-90.0, 270.0, spec.polar_step_deg)
    lat, pol = np.meshgrid(laterals, polars, indexing="ij")
    return lat.ravel(), pol.ravel()


def _bump(log2_f, log2_center, width_oct):
    """Raised-cosine bump with compact support of ``width_oct`` octaves."""
    u = (log2_f - log2_center) / (width_oct / 2)
    out = np.zeros_like(log2_f)
    inside = np.abs(u) < 1.0
    out[inside] = 0.5 * (1.0 + np.cos(np.pi * u[inside]))
    return out


def direction_template(spec: SynthSpec, lateral_deg, polar_deg, jitter_scale=1.0):
    """dB gain template on the rfft bin grid plus the primary cue.

    Returns (gains_db [n_bins], cue_center_hz, cue_width_oct).
    """
    n_bins = spec.ir_length // 2 + 1
    freqs = np.fft.rfftfreq(spec.ir_length, d=1.0 / spec.sample_rate_hz)
    log2_f = np.full(n_bins, -np.inf)
    log2_f[1:] = np.log2(freqs[1:])
    gains = np.zeros(n_bins)
    depth = spec.notch_depth_db

    cls = ElevationClass(int(classify_arrays(lateral_deg, polar_deg)))
    if cls is ElevationClass.LATERAL_UP or cls is ElevationClass.LATERAL_DOWN:
        base = (spec.lateral_up_hz if cls is ElevationClass.LATERAL_UP
                else spec.lateral_down_hz)
        center = base * jitter_scale
        log2_c = np.log2(center)
        width = spec.lateral_width_octaves
        gains += (spec.lateral_rel_gain * depth) * _bump(log2_f, log2_c, width)
        # Flanking dips sharpen the marker's edges without leaving the
        # half-octave window around the recorded center.
        flank = spec.lateral_flank_rel_gain * depth
        gains -= flank * _bump(log2_f, log2_c - 0.35 * width, 0.3 * width)
        gains -= flank * _bump(log2_f, log2_c + 0.35 * width, 0.3 * width)
        return gains, float(center), spec.lateral_width_octaves

    center = float(notch_center_hz(spec, polar_deg)) * jitter_scale
    width = spec.notch_width_octaves
    rear = float(fold_polar(polar_deg)) != float(polar_deg)
    if rear:
        width *= spec.rear_notch_width_factor
    gains -= depth * _bump(log2_f, np.log2(center), width)
    # Flanking peak above (front) or below (rear) the notch; both the
    # hemisphere marker and the notch live inside the cue window.
    side = -1.0 if rear else 1.0
    peak_gain = spec.rear_peak_rel_gain if rear else spec.medial_peak_rel_gain
    gains += (peak_gain * depth) * _bump(
        log2_f, np.log2(center) + side * spec.medial_peak_offset_octaves,
        spec.medial_peak_width_octaves,
    )
    if cls in FRONT_CLASSES:
        gains += (spec.front_peak_rel_gain * depth) * _bump(
            log2_f, np.log2(spec.front_peak_hz * jitter_scale),
            spec.front_peak_width_octaves,
        )
    return gains, float(center), width


def hrir_from_template(magnitude):
    """Linear-phase IR whose FFT magnitude equals ``magnitude`` exactly."""
    magnitude = np.asarray(magnitude, dtype=float)
    n = 2 * (magnitude.size - 1)
    signs = np.where(np.arange(magnitude.size) % 2 == 0, 1.0, -1.0)
    return np.fft.irfft(magnitude * signs, n=n)


def _log2_axis(spec: SynthSpec):
    freqs = np.fft.rfftfreq(spec.ir_length, d=1.0 / spec.sample_rate_hz)
    log2_f = np.full(freqs.size, -np.inf)
    log2_f[1:] = np.log2(freqs[1:])
    return log2_f


def distractor_gains(spec: SynthSpec, rng, log2_f):
    """Random class-independent bumps and dips for one direction."""
    gains = np.zeros(log2_f.size)
    lo, hi = spec.distractor_band_hz
    g_lo, g_hi = spec.distractor_gain_db
    w_lo, w_hi = spec.distractor_width_octaves
    for _ in range(int(spec.distractors_per_sample)):
        center = np.exp(rng.uniform(np.log(lo), np.log(hi)))
        width = rng.uniform(w_lo, w_hi)
        gain = rng.uniform(g_lo, g_hi) * rng.choice([-1.0, 1.0])
        gains += gain * _bump(log2_f, np.log2(center), width)
    return gains


def _smooth_ripple(rng, n_bins, amplitude_db, n_harmonics=5):
    t = np.linspace(0.0, 1.0, n_bins)
    ripple = np.zeros(n_bins)
    for h in range(1, n_harmonics + 1):
        ripple += rng.normal() / h * np.cos(
            2 * np.pi * h * t + rng.uniform(0, 2 * np.pi)
        )
    peak = np.abs(ripple).max()
    if peak > 0:
        ripple *= amplitude_db / peak
    return ripple


def generate(spec: SynthSpec, seed: int, dataset_id="synth"):
    """Build subject records plus the planted-cue ground truth.

    Deterministic for a given (spec, seed).  Raises when the grid leaves
    a class with no samples.
    """
    lat, pol = direction_grid(spec)
    labels = classify_arrays(lat, pol)
    counts = np.bincount(labels, minlength=9)
    if (counts == 0).any():
        missing = [ElevationClass(i).name for i in np.flatnonzero(counts == 0)]
        raise ValueError(f"grid too sparse: no samples for {missing}")

    az, el = interaural_to_vertical_arrays(lat, pol)
    directions = np.stack([az, el, np.full_like(az, 1.5)], axis=1)

    rng = np.random.default_rng(seed)
    n_bins = spec.ir_length // 2 + 1
    log2_f = _log2_axis(spec)
    ripple_amp = 10.0 ** (spec.noise_floor_db / 20.0)  # linear, relative to 1

    records, truth = [], []
    for s in range(spec.n_subjects):
        subject_id = f"synth{s:03d}"
        jitter = 1.0 + rng.uniform(-spec.subject_jitter, spec.subject_jitter)
        irs = np.empty((lat.size, 2, spec.ir_length), dtype=np.float32)
        for d in range(lat.size):
            gains_db, cue_hz, cue_w = direction_template(
                spec, lat[d], pol[d], jitter
            )
            gains_db = gains_db + distractor_gains(spec, rng, log2_f)
            gains_db = gains_db + rng.uniform(-spec.level_jitter_db,
                                              spec.level_jitter_db)
            base = 10.0 ** (gains_db / 20.0)
            for ear in range(2):
                mag = base * (
                    1.0 + ripple_amp * _smooth_ripple(rng, n_bins, 1.0)
                )
                irs[d, ear] = hrir_from_template(mag).astype(np.float32)
            truth.append(CueEntry(subject_id, d, cue_hz, cue_w))
        records.append(
            SubjectRecord(
                subject_id=subject_id,
                dataset_id=dataset_id,
                sample_rate_hz=spec.sample_rate_hz,
                directions=directions,
                irs=irs,
            )
        )
    return records, truth


# ---------------------------------------------------------------------------
# saliency scoring against the planted cues


class ScoreResult(NamedTuple):
    score: float
    zero_mass: bool


def saliency_localization_score(
    saliency, axis_hz, cue_centers_hz, half_width_octaves=0.5
) -> ScoreResult:
    """Fraction of saliency mass within the cue windows.

    A window is +-``half_width_octaves`` around each cue center on a log
    frequency axis.  Zero-mass saliency scores 0 and is flagged.
    """
    sal = np.asarray(saliency, dtype=float)
    axis = np.asarray(axis_hz, dtype=float)
    if sal.shape != axis.shape:
        raise ValueError("saliency and axis lengths differ")
    total = sal.sum()
    if total <= 0.0:
        return ScoreResult(0.0, True)
    centers = np.atleast_1d(np.asarray(cue_centers_hz, dtype=float))
    positive = axis > 0.0
    in_window = np.zeros(axis.size, dtype=bool)
    for c in centers:
        octaves = np.full(axis.size, np.inf)
        octaves[positive] = np.abs(np.log2(axis[positive] / c))
        in_window |= octaves <= half_width_octaves
    return ScoreResult(float(sal[in_window].sum() / total), False)


def uniform_baseline_score(axis_hz, cue_centers_hz, half_width_octaves=0.5):
    """Score a flat saliency: the fraction of axis bins inside cue windows."""
    axis = np.asarray(axis_hz, dtype=float)
    return saliency_localization_score(
        np.ones_like(axis), axis, cue_centers_hz, half_width_octaves
    ).score


# ---------------------------------------------------------------------------
# ground-truth CSV


def write_ground_truth(entries, path):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["subject", "direction_index", "cue_center_hz", "width_oct"])
        for e in entries:
            writer.writerow([
                e.subject_id, e.direction_index,
                format(e.cue_center_hz, ".17g"), format(e.width_octaves, ".17g"),
            ])


def read_ground_truth(path):
    entries = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            entries.append(CueEntry(
                row["subject"], int(row["direction_index"]),
                float(row["cue_center_hz"]), float(row["width_oct"]),
            ))
    return entries

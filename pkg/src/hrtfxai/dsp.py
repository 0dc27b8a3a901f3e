"""HRIR-to-HRTF preprocessing stages.

The pipeline turns raw impulse-response pairs into magnitude inputs for
the classifier.  Stage order is fixed:

    resample -> FFT magnitude -> ipsi/contra swap -> band cut
             -> equator-energy normalization -> frequency-axis transform
             -> amplitude scale

The three shipped presets differ only in the declarative config:

    raw         no normalization, linear amplitude, full band, linear axis
    optimized   AEE, linear amplitude, 50 Hz - 22 kHz, linear axis
    perceptual  AEE, linear amplitude, 50 Hz - 22 kHz, ERB filterbank

Band cutting zeroes bins instead of removing them so the input width the
model sees stays constant for a given preset.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .coords import Direction, VerticalPolar, ipsi_contra_swap

__all__ = [
    "AxisSpec",
    "PreprocConfig",
    "Hrir",
    "HrtfSample",
    "ErbFilterbank",
    "PRESETS",
    "preset",
    "resample_signal",
    "resample",
    "to_magnitude",
    "aee_normalize",
    "mel_warp",
    "band_cut",
    "amplitude_scale",
    "build_erb_filterbank",
    "apply_filterbank",
    "preprocess_subject",
    "hz_to_mel",
    "mel_to_hz",
    "hz_to_erb_rate",
    "erb_rate_to_hz",
    "linear_axis",
    "LOG_FLOOR",
]

# Added before log10 so band-cut zeros stay finite: 20*log10(1e-8) = -160 dB.
LOG_FLOOR = 1e-8

# Kaiser-windowed sinc interpolation used by the resampler.
RESAMPLE_HALF_TAPS = 64
RESAMPLE_KAISER_BETA = 8.6


# ---------------------------------------------------------------------------
# data containers


@dataclass
class Hrir:
    """A two-ear impulse response for one direction."""

    left: np.ndarray
    right: np.ndarray
    sample_rate_hz: float
    direction: Direction
    subject_id: str
    dataset_id: str

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=float)
        self.right = np.asarray(self.right, dtype=float)
        if self.left.size == 0 or self.left.shape != self.right.shape:
            raise ValueError("ear channels must be nonempty and equal length")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")


@dataclass(frozen=True)
class AxisSpec:
    """Frequency axis of a magnitude vector."""

    kind: str  # linear | mel | erb
    bin_center_hz: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "bin_center_hz", np.asarray(self.bin_center_hz, dtype=float)
        )
        if self.kind not in ("linear", "mel", "erb"):
            raise ValueError(f"unknown axis kind {self.kind!r}")

    @property
    def n_bins(self) -> int:
        return int(self.bin_center_hz.size)


def linear_axis(fft_size: int, sample_rate_hz: float) -> AxisSpec:
    return AxisSpec("linear", np.fft.rfftfreq(fft_size, d=1.0 / sample_rate_hz))


@dataclass
class HrtfSample:
    """Magnitude spectrum pair with provenance."""

    ipsi: np.ndarray
    contra: np.ndarray
    freq_axis: AxisSpec
    direction: Direction
    subject_id: str
    dataset_id: str
    preproc: str = ""  # config fingerprint

    def __post_init__(self):
        self.ipsi = np.asarray(self.ipsi, dtype=float)
        self.contra = np.asarray(self.contra, dtype=float)
        if self.ipsi.shape != self.contra.shape:
            raise ValueError("ipsi/contra length mismatch")
        if self.ipsi.size != self.freq_axis.n_bins:
            raise ValueError("magnitude length does not match axis")

    def stacked(self) -> np.ndarray:
        return np.stack([self.ipsi, self.contra])


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class PreprocConfig:
    """Declarative record of the preprocessing choices."""

    normalization: str = "none"  # none | aee
    amplitude_scale: str = "linear"  # linear | log10
    band_cut_hz: tuple[float, float] | None = None
    freq_axis: str = "linear"  # linear | mel | erb
    fft_size: int = 512
    target_rate_hz: float = 44100.0
    erb_filters: int = 255
    erb_low_hz: float = 50.0
    erb_high_hz: float = 22050.0

    def __post_init__(self):
        if self.normalization not in ("none", "aee"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        if self.amplitude_scale not in ("linear", "log10"):
            raise ValueError(f"unknown amplitude scale {self.amplitude_scale!r}")
        if self.freq_axis not in ("linear", "mel", "erb"):
            raise ValueError(f"unknown frequency axis {self.freq_axis!r}")
        if self.fft_size % 2 != 0 or self.fft_size <= 0:
            raise ValueError("fft_size must be even and positive")
        if self.target_rate_hz <= 0:
            raise ValueError("target rate must be positive")
        if self.band_cut_hz is not None:
            low, high = self.band_cut_hz
            if not (0 <= low < high <= self.target_rate_hz / 2):
                raise ValueError(
                    f"band cut ({low}, {high}) must satisfy "
                    f"0 <= low < high <= {self.target_rate_hz / 2}"
                )

    _KEYS = (
        "normalization",
        "amplitude_scale",
        "band_cut_low_hz",
        "band_cut_high_hz",
        "freq_axis",
        "fft_size",
        "target_rate_hz",
        "erb_filters",
        "erb_low_hz",
        "erb_high_hz",
    )

    def to_text(self) -> str:
        """Canonical flat key-value serialization (one ``key = value`` per line)."""
        low, high = self.band_cut_hz if self.band_cut_hz else ("none", "none")
        values = {
            "normalization": self.normalization,
            "amplitude_scale": self.amplitude_scale,
            "band_cut_low_hz": low,
            "band_cut_high_hz": high,
            "freq_axis": self.freq_axis,
            "fft_size": self.fft_size,
            "target_rate_hz": self.target_rate_hz,
            "erb_filters": self.erb_filters,
            "erb_low_hz": self.erb_low_hz,
            "erb_high_hz": self.erb_high_hz,
        }
        return "".join(f"{k} = {values[k]!r}\n" for k in self._KEYS)

    @classmethod
    def from_text(cls, text: str) -> "PreprocConfig":
        import ast

        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            values[key.strip()] = ast.literal_eval(raw.strip())
        low = values.pop("band_cut_low_hz")
        high = values.pop("band_cut_high_hz")
        band = None if low == "none" else (float(low), float(high))
        return cls(band_cut_hz=band, **values)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


PRESETS = {
    "raw": PreprocConfig(),
    "optimized": PreprocConfig(
        normalization="aee", band_cut_hz=(50.0, 22050.0), freq_axis="linear"
    ),
    "perceptual": PreprocConfig(
        normalization="aee", band_cut_hz=(50.0, 22050.0), freq_axis="erb"
    ),
}


def preset(name: str) -> PreprocConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}"
        ) from None


# ---------------------------------------------------------------------------
# resampling


def _kaiser(u, beta):
    # I0-based Kaiser window on |u| <= 1.
    return np.i0(beta * np.sqrt(np.clip(1.0 - u * u, 0.0, None))) / np.i0(beta)


def resample_signal(x, source_rate_hz, target_rate_hz):
    """Band-limited resampling with a Kaiser-windowed sinc kernel."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise ValueError("cannot resample an empty signal")
    if source_rate_hz == target_rate_hz:
        return x.copy()
    ratio = target_rate_hz / source_rate_hz
    n_out = int(np.ceil(x.size * ratio))
    # Kernel cutoff at the lower Nyquist; stretch the support when
    # downsampling so it still spans RESAMPLE_HALF_TAPS zero crossings.
    scale = min(1.0, ratio)
    half_width = RESAMPLE_HALF_TAPS / scale

    t = np.arange(n_out) / ratio  # output instants in input-sample units
    offsets = np.arange(-int(np.ceil(half_width)), int(np.ceil(half_width)) + 1)
    idx = np.floor(t)[:, None].astype(int) + offsets[None, :]
    delta = t[:, None] - idx  # distance in input samples
    kernel = scale * np.sinc(scale * delta) * _kaiser(delta / half_width, RESAMPLE_KAISER_BETA)
    kernel[np.abs(delta) > half_width] = 0.0
    valid = (idx >= 0) & (idx < x.size)
    gathered = np.where(valid, x[np.clip(idx, 0, x.size - 1)], 0.0)
    return np.sum(gathered * kernel, axis=1)


def resample(h: Hrir, target_rate_hz: float) -> Hrir:
    if target_rate_hz <= 0:
        raise ValueError("target rate must be positive")
    if h.sample_rate_hz == target_rate_hz:
        return Hrir(
            h.left.copy(), h.right.copy(), h.sample_rate_hz,
            h.direction, h.subject_id, h.dataset_id,
        )
    return Hrir(
        resample_signal(h.left, h.sample_rate_hz, target_rate_hz),
        resample_signal(h.right, h.sample_rate_hz, target_rate_hz),
        float(target_rate_hz),
        h.direction,
        h.subject_id,
        h.dataset_id,
    )


# ---------------------------------------------------------------------------
# spectrum stages


def _fit_length(x, n):
    # Zero-pad short IRs; drop the tail of long ones (late energy is room
    # reflection, not pinna response).
    if x.size >= n:
        return x[:n]
    return np.concatenate([x, np.zeros(n - x.size)])


def to_magnitude(h: Hrir, fft_size: int):
    """Magnitude spectra of both ears; returns (ipsi-ordered later, here L/R)."""
    if fft_size % 2 != 0 or fft_size <= 0:
        raise ValueError("fft_size must be even and positive")
    left = np.abs(np.fft.rfft(_fit_length(h.left, fft_size)))
    right = np.abs(np.fft.rfft(_fit_length(h.right, fft_size)))
    return left, right


def aee_normalize(samples, equator_tolerance_deg=5.0):
    """Scale one subject's samples so mean equator energy becomes 1.

    The equator is the ring of measurements with vertical elevation
    within ``equator_tolerance_deg`` of zero.  When a dataset has no such
    ring the tolerance widens to the nearest ring and a warning string is
    returned alongside the scaled samples.
    """
    if not samples:
        raise ValueError("subject has no measurements")
    elevations = np.array(
        [abs(s.direction.vertical.elevation_deg) for s in samples]
    )
    mask = elevations <= equator_tolerance_deg
    warning = None
    if not mask.any():
        nearest = elevations.min()
        mask = elevations <= nearest + 1e-9
        warning = (
            f"no measurements within {equator_tolerance_deg} deg of the "
            f"equator; widened to the |elevation| = {nearest:.3g} deg ring"
        )
    energies = [
        np.concatenate([s.ipsi, s.contra]) ** 2
        for s, m in zip(samples, mask)
        if m
    ]
    mean_energy = float(np.mean(np.concatenate(energies)))
    scale = 1.0 / np.sqrt(mean_energy)
    scaled = [
        replace(s, ipsi=s.ipsi * scale, contra=s.contra * scale)
        for s in samples
    ]
    return scaled, warning


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


def mel_warp(mag, axis: AxisSpec):
    """Re-sample the axis at mel-equidistant points, keeping the bin count.

    Each target point picks the nearest linear bin, so bins may repeat.
    """
    if axis.kind != "linear":
        raise ValueError("mel warp expects a linear input axis")
    mag = np.asarray(mag, dtype=float)
    centers = axis.bin_center_hz
    mel_points = np.linspace(
        hz_to_mel(centers[0]), hz_to_mel(centers[-1]), centers.size
    )
    targets_hz = mel_to_hz(mel_points)
    idx = np.searchsorted(centers, targets_hz)
    idx = np.clip(idx, 1, centers.size - 1)
    pick_lower = np.abs(targets_hz - centers[idx - 1]) <= np.abs(
        centers[idx] - targets_hz
    )
    idx = np.where(pick_lower, idx - 1, idx)
    return mag[idx], AxisSpec("mel", centers[idx])


def band_cut(mag, axis: AxisSpec, low_hz, high_hz):
    """Zero bins whose center lies outside [low_hz, high_hz]."""
    if low_hz >= high_hz:
        raise ValueError(f"inverted band bounds ({low_hz}, {high_hz})")
    mag = np.asarray(mag, dtype=float).copy()
    keep = (axis.bin_center_hz >= low_hz) & (axis.bin_center_hz <= high_hz)
    mag[~keep] = 0.0
    return mag


def amplitude_scale(mag, kind: str):
    mag = np.asarray(mag, dtype=float)
    if kind == "linear":
        return mag.copy()
    if kind == "log10":
        return 20.0 * np.log10(mag + LOG_FLOOR)
    raise ValueError(f"unknown amplitude scale {kind!r}")


# ---------------------------------------------------------------------------
# ERB filterbank


def hz_to_erb_rate(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=float))


def erb_rate_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=float) / 21.4) - 1.0) / 0.00437


@dataclass(frozen=True)
class ErbFilterbank:
    """Cosine filters equally spaced on the ERB-rate scale.

    Filter shapes are cos(pi/2 * u) of the normalized ERB-rate offset u,
    so the squared responses of neighbours sum to one where the grid
    resolves them.  Rows are not renormalized: the peak response is 1.
    Filters narrower than one frequency bin are widened to one bin so no
    row evaluates to all zeros on coarse linear grids.
    """

    center_hz: np.ndarray
    weights: np.ndarray  # [n_filters, n_bins]
    bin_center_hz: np.ndarray

    @property
    def n_filters(self) -> int:
        return int(self.center_hz.size)


def build_erb_filterbank(
    n_filters=255, low_hz=50.0, high_hz=22050.0, bin_center_hz=None
) -> ErbFilterbank:
    if n_filters < 2:
        raise ValueError("need at least 2 filters")
    if bin_center_hz is None:
        raise ValueError("bin_center_hz is required")
    bins = np.asarray(bin_center_hz, dtype=float)
    usable = np.count_nonzero((bins >= low_hz / 2) & (bins <= high_hz * 2))
    if usable < 8:
        raise ValueError(
            "frequency grid too coarse to resolve the filterbank "
            f"({usable} usable bins in [{low_hz}, {high_hz}] Hz)"
        )
    erb_lo = hz_to_erb_rate(low_hz)
    erb_hi = hz_to_erb_rate(high_hz)
    centers_erb = np.linspace(erb_lo, erb_hi, n_filters)
    centers_hz = erb_rate_to_hz(centers_erb)
    spacing = (erb_hi - erb_lo) / (n_filters - 1)

    bin_spacing = np.median(np.diff(bins))
    bins_erb = hz_to_erb_rate(np.clip(bins, 0.0, None))
    # Minimum half-width: one frequency bin, measured on the ERB axis at
    # the filter's own center.
    one_bin_erb = hz_to_erb_rate(centers_hz + bin_spacing) - centers_erb
    half_width = np.maximum(spacing, one_bin_erb)

    u = np.abs(bins_erb[None, :] - centers_erb[:, None]) / half_width[:, None]
    weights = np.where(u < 1.0, np.cos(0.5 * np.pi * np.clip(u, 0.0, 1.0)), 0.0)
    return ErbFilterbank(centers_hz, weights, bins)


def apply_filterbank(mag, fb: ErbFilterbank):
    mag = np.asarray(mag, dtype=float)
    if mag.shape[-1] != fb.weights.shape[1]:
        raise ValueError(
            f"magnitude length {mag.shape[-1]} does not match filterbank "
            f"grid {fb.weights.shape[1]}"
        )
    return mag @ fb.weights.T


# ---------------------------------------------------------------------------
# full pipeline


def preprocess_subject(record, cfg: PreprocConfig, _fb_cache={}):
    """Run the full pipeline on one subject record.

    Returns (samples, warnings).  ``record`` is a
    :class:`hrtfxai.data.SubjectRecord`; AEE normalization needs all of a
    subject's measurements at once, which is why the unit of work is the
    subject.
    """
    axis = linear_axis(cfg.fft_size, cfg.target_rate_hz)
    fingerprint = cfg.fingerprint()
    warnings = []

    fb = None
    if cfg.freq_axis == "erb":
        key = (cfg.erb_filters, cfg.erb_low_hz, cfg.erb_high_hz,
               cfg.fft_size, cfg.target_rate_hz)
        fb = _fb_cache.get(key)
        if fb is None:
            fb = build_erb_filterbank(
                cfg.erb_filters, cfg.erb_low_hz, cfg.erb_high_hz,
                axis.bin_center_hz,
            )
            _fb_cache[key] = fb

    samples = []
    for i in range(record.n_directions):
        az, el, dist = record.directions[i]
        direction = Direction.from_vertical(
            VerticalPolar.wrapped(az, el), dist if np.isfinite(dist) else None
        )
        hrir = Hrir(
            record.irs[i, 0].astype(float),
            record.irs[i, 1].astype(float),
            record.sample_rate_hz,
            direction,
            record.subject_id,
            record.dataset_id,
        )
        hrir = resample(hrir, cfg.target_rate_hz)
        left, right = to_magnitude(hrir, cfg.fft_size)
        ipsi, contra = ipsi_contra_swap(left, right, direction.interaural.lateral_deg)
        if cfg.band_cut_hz is not None:
            low, high = cfg.band_cut_hz
            ipsi = band_cut(ipsi, axis, low, high)
            contra = band_cut(contra, axis, low, high)
        samples.append(
            HrtfSample(ipsi, contra, axis, direction,
                       record.subject_id, record.dataset_id, fingerprint)
        )

    if cfg.normalization == "aee":
        samples, warning = aee_normalize(samples)
        if warning:
            warnings.append(f"{record.subject_id}: {warning}")

    out = []
    for s in samples:
        ipsi, contra, ax = s.ipsi, s.contra, s.freq_axis
        if cfg.freq_axis == "mel":
            ipsi, ax = mel_warp(ipsi, s.freq_axis)
            contra, _ = mel_warp(contra, s.freq_axis)
        elif cfg.freq_axis == "erb":
            ipsi = apply_filterbank(ipsi, fb)
            contra = apply_filterbank(contra, fb)
            ax = AxisSpec("erb", fb.center_hz)
        ipsi = amplitude_scale(ipsi, cfg.amplitude_scale)
        contra = amplitude_scale(contra, cfg.amplitude_scale)
        out.append(replace(s, ipsi=ipsi, contra=contra, freq_axis=ax))
    return out, warnings

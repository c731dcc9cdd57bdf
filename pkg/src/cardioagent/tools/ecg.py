"""
12-lead ECG tools: preprocessing, beat detection, interval measurement and
heartbeat extraction.

Preprocessing is a zero-phase Butterworth band-pass (forward-backward SOS
filtering) followed by a two-stage running-median baseline estimate that is
subtracted from the signal, and finally removal of any residual DC offset.

R peaks are found by thresholding the moving-window integral of the squared
first difference; detections closer than the refractory period are merged
into the larger one.  The threshold is relative to the signal's own energy,
so scaling the input by any positive factor leaves the detections unchanged.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage, signal

from ..errors import InvalidConfig, LeadMissing, NoBeatsDetected, NyquistViolation, TooShort
from ..svg import line_plot

STANDARD_LEADS = ("I", "II", "III", "aVR", "aVL", "aVF", "V1", "V2", "V3", "V4", "V5", "V6")
BEAT_LEADS = ("I", "II", "V5")

DEFAULT_BAND = (0.5, 40.0)
FILTER_ORDER = 2
MIN_SECONDS = 2.0
REFRACTORY_S = 0.200
INTEGRATION_S = 0.120
THRESHOLD_FRACTION = 0.3
THRESHOLD_PERCENTILE = 98.0
FLAT_PTP_MV = 1e-6
QUALITY_TOLERANCE = 0.20
PR_SEARCH_S = 0.300
QT_SEARCH_S = 0.500
BEAT_BEFORE_S = 0.250
BEAT_AFTER_S = 0.400


@dataclass
class EcgSignal:
    samples: np.ndarray  # (leads, N) in mV
    sampling_rate: float
    lead_names: Tuple[str, ...] = STANDARD_LEADS

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        self.lead_names = tuple(self.lead_names)
        if self.sampling_rate <= 0:
            raise InvalidConfig(f"sampling rate must be positive, got {self.sampling_rate}")
        if self.samples.shape[0] != len(self.lead_names):
            raise InvalidConfig(
                f"{self.samples.shape[0]} lead rows but {len(self.lead_names)} lead names"
            )
        if len(set(self.lead_names)) != len(self.lead_names):
            raise InvalidConfig("lead names must be unique")
        if not np.all(np.isfinite(self.samples)):
            raise InvalidConfig("ECG samples must be finite")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration_s(self) -> float:
        return self.n_samples / self.sampling_rate

    def lead(self, name: str) -> np.ndarray:
        try:
            return self.samples[self.lead_names.index(name)]
        except ValueError:
            raise LeadMissing(f"lead {name!r} not present (have {', '.join(self.lead_names)})") from None

    def with_samples(self, samples: np.ndarray) -> "EcgSignal":
        return EcgSignal(samples, self.sampling_rate, self.lead_names)


def read_ecg_csv(path: Union[str, Path]) -> EcgSignal:
    """Read ``#fs=<Hz>`` then a header row of lead names then one row per sample."""
    text = Path(path).read_text(encoding="utf-8")
    return parse_ecg_csv(text)


def parse_ecg_csv(text: str) -> EcgSignal:
    lines = text.splitlines()
    if not lines or not lines[0].lstrip("# ").lower().startswith("fs"):
        raise InvalidConfig("ECG CSV must start with a '#fs=<Hz>' line")
    fs = float(lines[0].lstrip("# ").split("=", 1)[1])
    reader = csv.reader(lines[1:])
    header = [h.strip() for h in next(reader)]
    rows = [[float(v) for v in row] for row in reader if row]
    data = np.asarray(rows, dtype=np.float64).reshape(-1, len(header)).T
    return EcgSignal(data, fs, tuple(header))


def write_ecg_csv(sig: EcgSignal, path: Union[str, Path], decimals: int = 4) -> Path:
    buf = io.StringIO()
    buf.write(f"#fs={sig.sampling_rate:g}\n")
    buf.write(",".join(sig.lead_names) + "\n")
    fmt = f"{{:.{decimals}f}}"
    for col in sig.samples.T:
        buf.write(",".join(fmt.format(v) for v in col) + "\n")
    path = Path(path)
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------


def _check_band(fs: float, band: Tuple[float, float], n: int) -> None:
    low, high = band
    if not (0 < low < high):
        raise InvalidConfig(f"invalid band {band}")
    if fs <= 2 * high:
        raise NyquistViolation(f"sampling rate {fs} Hz must exceed twice the upper cutoff {high} Hz")
    if n < MIN_SECONDS * fs:
        raise TooShort(f"{n} samples is shorter than {MIN_SECONDS:g} s at {fs:g} Hz")


def bandpass(samples: np.ndarray, fs: float, band: Tuple[float, float] = DEFAULT_BAND, order: int = FILTER_ORDER) -> np.ndarray:
    """Zero-phase Butterworth band-pass along the last axis (a linear operator)."""
    samples = np.asarray(samples, dtype=np.float64)
    _check_band(fs, band, samples.shape[-1])
    sos = signal.butter(order, band, btype="bandpass", fs=fs, output="sos")
    return signal.sosfiltfilt(sos, samples, axis=-1)


def _odd(n: int) -> int:
    n = max(int(round(n)), 1)
    return n if n % 2 else n + 1


def median_baseline(samples: np.ndarray, fs: float) -> np.ndarray:
    """Two-stage (200 ms, 600 ms) running median estimate of baseline wander."""
    samples = np.atleast_2d(samples)
    first = ndimage.median_filter(samples, size=(1, _odd(0.2 * fs)), mode="reflect")
    return ndimage.median_filter(first, size=(1, _odd(0.6 * fs)), mode="reflect")


@dataclass
class LeadStats:
    lead: str
    mean_mv: float
    std_mv: float
    mean_abs_mv: float
    peak_to_peak_mv: float


@dataclass
class EcgSummary:
    text: str
    stats: List[LeadStats]
    signal: EcgSignal
    band: Tuple[float, float] = DEFAULT_BAND

    def stat(self, lead: str) -> LeadStats:
        return next(s for s in self.stats if s.lead == lead)


def ecg_preprocess(sig: EcgSignal, band: Tuple[float, float] = DEFAULT_BAND) -> EcgSummary:
    filtered = bandpass(sig.samples, sig.sampling_rate, band)
    filtered = filtered - median_baseline(filtered, sig.sampling_rate)
    filtered = filtered - filtered.mean(axis=1, keepdims=True)
    out = sig.with_samples(filtered)
    stats = [
        LeadStats(
            lead=name,
            mean_mv=float(row.mean()),
            std_mv=float(row.std()),
            mean_abs_mv=float(np.abs(row).mean()),
            peak_to_peak_mv=float(np.ptp(row)),
        )
        for name, row in zip(out.lead_names, out.samples)
    ]
    lines = [
        f"{sig.n_samples / sig.sampling_rate:.1f} s of {len(sig.lead_names)}-lead ECG at "
        f"{sig.sampling_rate:g} Hz, band-pass {band[0]:g}-{band[1]:g} Hz with median baseline correction."
    ]
    for s in stats:
        lines.append(
            f"Lead {s.lead}: mean {s.mean_mv:.3f} mV, SD {s.std_mv:.3f} mV, "
            f"mean |amplitude| {s.mean_abs_mv:.3f} mV, peak-to-peak {s.peak_to_peak_mv:.3f} mV."
        )
    return EcgSummary(text="\n".join(lines), stats=stats, signal=out, band=tuple(band))


# ---------------------------------------------------------------------------
# Beat detection and measurements
# ---------------------------------------------------------------------------


def detect_r_peaks(x: np.ndarray, fs: float, refractory_s: float = REFRACTORY_S) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 3 or np.ptp(x) < FLAT_PTP_MV:
        return np.zeros(0, dtype=int)
    energy = np.diff(x, prepend=x[0]) ** 2
    win = max(int(round(INTEGRATION_S * fs)), 1)
    integrated = np.convolve(energy, np.ones(win) / win, mode="same")
    level = np.percentile(integrated, THRESHOLD_PERCENTILE)
    if level <= 0:
        return np.zeros(0, dtype=int)
    above = integrated > THRESHOLD_FRACTION * level
    edges = np.flatnonzero(np.diff(above.astype(np.int8)))
    starts = list(edges[~above[edges]] + 1)
    ends = list(edges[above[edges]] + 1)
    if above[0]:
        starts.insert(0, 0)
    if above[-1]:
        ends.append(len(x))
    centred = x - np.median(x)
    peaks = []
    for s, e in zip(starts, ends):
        seg = np.abs(centred[s:e])
        if seg.size:
            peaks.append(s + int(np.argmax(seg)))
    refractory = int(round(refractory_s * fs))
    merged: List[int] = []
    for p in peaks:
        if merged and p - merged[-1] < refractory:
            if abs(centred[p]) > abs(centred[merged[-1]]):
                merged[-1] = p
        else:
            merged.append(p)
    return np.asarray(merged, dtype=int)


@dataclass
class WaveMarkers:
    qrs_onsets: List[int] = field(default_factory=list)
    qrs_offsets: List[int] = field(default_factory=list)
    p_peaks: List[int] = field(default_factory=list)
    p_onsets: List[int] = field(default_factory=list)
    t_peaks: List[int] = field(default_factory=list)
    t_offsets: List[int] = field(default_factory=list)


@dataclass
class EcgMeasurements:
    sampling_rate: float
    reference_lead: str
    r_peaks: Dict[str, List[int]]
    signal_quality: Dict[str, float]
    heart_rate_bpm: float
    rr_ms: List[float]
    sdnn_ms: float
    rmssd_ms: float
    qrs_ms: Optional[float] = None
    pr_ms: Optional[float] = None
    qt_ms: Optional[float] = None
    markers: WaveMarkers = field(default_factory=WaveMarkers)

    def named(self) -> Dict[str, Optional[float]]:
        """Rhythm and interval measurements keyed by name."""
        return {
            "heart_rate_bpm": self.heart_rate_bpm,
            "sdnn_ms": self.sdnn_ms,
            "rmssd_ms": self.rmssd_ms,
            "qrs_ms": self.qrs_ms,
            "pr_ms": self.pr_ms,
            "qt_ms": self.qt_ms,
            "mean_signal_quality": float(np.mean(list(self.signal_quality.values()))),
        }

    def to_text(self) -> str:
        parts = [f"Reference lead {self.reference_lead}: heart rate {self.heart_rate_bpm:.1f} bpm"]
        parts.append(f"SDNN {self.sdnn_ms:.1f} ms, RMSSD {self.rmssd_ms:.1f} ms")
        for label, v in (("QRS", self.qrs_ms), ("PR", self.pr_ms), ("QT", self.qt_ms)):
            parts.append(f"{label} {v:.0f} ms" if v is not None else f"{label} not determined")
        q = ", ".join(f"{k} {v:.2f}" for k, v in self.signal_quality.items())
        return "; ".join(parts) + f". Signal quality per lead: {q}."


def _rr_quality(peaks: np.ndarray, fs: float) -> float:
    if len(peaks) < 3:
        return 0.0 if len(peaks) < 2 else 1.0
    rr = np.diff(peaks) / fs
    med = np.median(rr)
    return float(np.mean(np.abs(rr - med) <= QUALITY_TOLERANCE * med))


def _walk(d: np.ndarray, start: int, step: int, limit: int, thr: float) -> int:
    """Move from ``start`` in direction ``step`` until |slope| falls below ``thr``."""
    i = start
    while (i - limit) * step < 0 and abs(d[i]) >= thr:
        i += step
    return i


def _delineate(x: np.ndarray, peaks: np.ndarray, fs: float) -> WaveMarkers:
    d = np.gradient(x) * fs
    n = len(x)
    m = WaveMarkers()
    w60, w120 = int(0.06 * fs), int(0.12 * fs)
    for k, r in enumerate(peaks):
        lo, hi = max(r - w60, 1), min(r + w60, n - 2)
        if hi - lo < 4:
            continue
        steep_before = lo + int(np.argmax(np.abs(d[lo:r + 1])))
        steep_after = r + int(np.argmax(np.abs(d[r:hi + 1])))
        thr = 0.1 * np.max(np.abs(d[lo:hi + 1]))
        onset = _walk(d, steep_before, -1, max(r - w120, 0), thr)
        offset = _walk(d, steep_after, +1, min(r + w120, n - 1), thr)
        if not (onset < r < offset):
            continue
        m.qrs_onsets.append(int(onset))
        m.qrs_offsets.append(int(offset))

        prev_r = peaks[k - 1] if k > 0 else -n
        p_lo = max(r - int(PR_SEARCH_S * fs), prev_r + int(0.4 * fs), 1)
        p_hi = onset - int(0.02 * fs)
        if p_hi - p_lo > 4:
            p = p_lo + int(np.argmax(x[p_lo:p_hi]))
            up = p_lo + int(np.argmax(np.abs(d[p_lo:p + 1])))
            p_thr = 0.2 * np.max(np.abs(d[p_lo:p_hi]))
            p_on = _walk(d, up, -1, p_lo, p_thr)
            if p_on < p:
                m.p_peaks.append(int(p))
                m.p_onsets.append(int(p_on))

        next_r = peaks[k + 1] if k + 1 < len(peaks) else n + w120
        t_lo = offset + int(0.06 * fs)
        t_hi = min(r + int(QT_SEARCH_S * fs), next_r - w120, n - 2)
        if t_hi - t_lo > 4:
            seg = x[t_lo:t_hi] - np.median(x)
            t = t_lo + int(np.argmax(np.abs(seg)))
            down_hi = min(t + int(0.15 * fs), t_hi)
            if down_hi > t + 1:
                down = t + int(np.argmax(np.abs(d[t:down_hi + 1])))
                t_thr = 0.2 * abs(d[down])
                t_off = _walk(d, down, +1, min(t_hi + int(0.1 * fs), n - 1), t_thr)
                if t_off > t:
                    m.t_peaks.append(int(t))
                    m.t_offsets.append(int(t_off))
    return m


def _paired_ms(starts: List[int], ends: List[int], fs: float, max_ms: float) -> Optional[float]:
    vals = []
    for a in starts:
        later = [b for b in ends if b > a]
        if later:
            dur = (later[0] - a) / fs * 1000.0
            if 0 < dur <= max_ms:
                vals.append(dur)
    return float(np.median(vals)) if vals else None


def ecg_measure(sig: EcgSignal) -> EcgMeasurements:
    fs = sig.sampling_rate
    r_peaks: Dict[str, np.ndarray] = {}
    quality: Dict[str, float] = {}
    for name, row in zip(sig.lead_names, sig.samples):
        peaks = detect_r_peaks(row, fs)
        r_peaks[name] = peaks
        quality[name] = _rr_quality(peaks, fs)
    usable = [name for name in sig.lead_names if len(r_peaks[name]) >= 2]
    if not usable:
        raise NoBeatsDetected("fewer than 2 R peaks detected in every lead")
    if "II" in usable:
        ref = "II"
    else:
        ref = max(usable, key=lambda k: (quality[k], len(r_peaks[k]), -sig.lead_names.index(k)))
    peaks = r_peaks[ref]
    rr_ms = np.diff(peaks) / fs * 1000.0
    hr = 60000.0 / float(np.median(rr_ms))
    sdnn = float(np.std(rr_ms, ddof=1)) if len(rr_ms) >= 2 else 0.0
    rmssd = float(np.sqrt(np.mean(np.diff(rr_ms) ** 2))) if len(rr_ms) >= 2 else 0.0

    x = sig.lead(ref)
    markers = _delineate(x, peaks, fs)
    pairs_qrs = [(a, b) for a, b in zip(markers.qrs_onsets, markers.qrs_offsets)]
    qrs = float(np.median([(b - a) / fs * 1000.0 for a, b in pairs_qrs])) if pairs_qrs else None
    pr = _paired_ms(markers.p_onsets, markers.qrs_onsets, fs, PR_SEARCH_S * 1000.0)
    qt = _paired_ms(markers.qrs_onsets, markers.t_offsets, fs, QT_SEARCH_S * 1000.0 + 100.0)
    return EcgMeasurements(
        sampling_rate=fs,
        reference_lead=ref,
        r_peaks={k: [int(i) for i in v] for k, v in r_peaks.items()},
        signal_quality=quality,
        heart_rate_bpm=hr,
        rr_ms=[float(v) for v in rr_ms],
        sdnn_ms=sdnn,
        rmssd_ms=rmssd,
        qrs_ms=qrs,
        pr_ms=pr,
        qt_ms=qt,
        markers=markers,
    )


# ---------------------------------------------------------------------------
# Heartbeats
# ---------------------------------------------------------------------------


@dataclass
class Beat:
    lead: str
    r_index: int
    start: int
    stop: int
    clipped: bool
    samples: np.ndarray


@dataclass
class HeartbeatSet:
    sampling_rate: float
    beats: Dict[str, List[Beat]]
    plots: Dict[str, str]

    def windows(self, lead: str) -> List[Tuple[int, int]]:
        return [(b.start, b.stop) for b in self.beats[lead]]


def heartbeat_extract(
    sig: EcgSignal, meas: EcgMeasurements, leads: Sequence[str] = BEAT_LEADS
) -> HeartbeatSet:
    """Cut a [-250 ms, +400 ms] window around every R peak of the beat leads."""
    missing = [name for name in leads if name not in sig.lead_names]
    if missing:
        raise LeadMissing(f"heartbeat extraction needs lead(s) {', '.join(missing)}")
    fs = sig.sampling_rate
    before, after = int(round(BEAT_BEFORE_S * fs)), int(round(BEAT_AFTER_S * fs))
    beats: Dict[str, List[Beat]] = {}
    plots: Dict[str, str] = {}
    for name in leads:
        peaks = meas.r_peaks.get(name) or []
        if not peaks:
            raise LeadMissing(f"no R peaks available for lead {name}")
        x = sig.lead(name)
        lead_beats = []
        for r in peaks:
            start, stop = r - before, r + after
            clipped = start < 0 or stop > len(x)
            start, stop = max(start, 0), min(stop, len(x))
            lead_beats.append(Beat(name, int(r), int(start), int(stop), clipped, x[start:stop].copy()))
        beats[name] = lead_beats
        series = [((np.arange(b.start, b.stop) - b.r_index) / fs * 1000.0, b.samples) for b in lead_beats]
        plots[name] = line_plot(
            series, width=320, height=180, title=f"Lead {name}: {len(lead_beats)} beats",
            xlabel="ms from R", opacity=0.6,
        )
    return HeartbeatSet(fs, beats, plots)


# ---------------------------------------------------------------------------
# Synthetic signals (tests and the demo case)
# ---------------------------------------------------------------------------

LEAD_GAINS = {
    "I": 0.6, "II": 1.0, "III": 0.5, "aVR": -0.8, "aVL": 0.3, "aVF": 0.7,
    "V1": -0.6, "V2": 0.5, "V3": 0.8, "V4": 1.1, "V5": 1.0, "V6": 0.8,
}

# (offset from R in s, amplitude in mV, gaussian sigma in s)
_WAVES = (
    (-0.200, 0.15, 0.025),  # P
    (-0.035, -0.10, 0.008),  # Q
    (0.000, 1.00, 0.010),  # R
    (0.035, -0.20, 0.008),  # S
    (0.300, 0.30, 0.050),  # T
)


def synthetic_beat_times(duration_s: float, bpm: float, first_s: float = 0.5) -> np.ndarray:
    return np.arange(first_s, duration_s - 0.45, 60.0 / bpm)


def synthetic_ecg(
    duration_s: float = 10.0,
    fs: float = 500.0,
    bpm: float = 60.0,
    leads: Sequence[str] = STANDARD_LEADS,
    noise_mv: float = 0.0,
    drift_mv: float = 0.0,
    drift_hz: float = 0.1,
    offset_mv: float = 0.0,
    seed: int = 0,
    beat_times: Optional[Sequence[float]] = None,
) -> EcgSignal:
    """Sum-of-Gaussians P-QRS-T beat train with optional noise and drift."""
    t = np.arange(int(round(duration_s * fs))) / fs
    times = synthetic_beat_times(duration_s, bpm) if beat_times is None else np.asarray(beat_times)
    base = np.zeros_like(t)
    for tb in times:
        for off, amp, sd in _WAVES:
            base += amp * np.exp(-0.5 * ((t - tb - off) / sd) ** 2)
    rng = np.random.default_rng(seed)
    rows = []
    for name in leads:
        row = LEAD_GAINS.get(name, 1.0) * base + offset_mv
        if drift_mv:
            row = row + drift_mv * np.sin(2 * np.pi * drift_hz * t)
        if noise_mv:
            row = row + rng.normal(0.0, noise_mv, size=t.size)
        rows.append(row)
    return EcgSignal(np.vstack(rows), fs, tuple(leads))

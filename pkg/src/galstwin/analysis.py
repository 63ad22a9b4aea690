"""Fault monitoring: inspection timing, power-spectrum signatures,
residuals, threshold detection and causal localization."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "TimeSeries", "SpectrumResult", "FaultReport", "InterconnectGraph", "Diagnostics",
    "fft", "power_spectrum", "detect_fault_components", "residual", "threshold_detect",
    "measure_inspection_times", "inspection_episodes", "localize_causes", "classify_fault",
    "anomalous",
    "NonUniformSampling", "DisjointRanges", "MalformedEpisode", "UnknownNode",
    "HANN_SCALLOP_MAX", "ANOMALY_LIMIT_MS",
]

# Worst-case amplitude loss of a Hann window for a tone half-way between bins.
HANN_SCALLOP_MAX = 1.42  # dB
# Upper edge of the nominal inspection-duration band.
ANOMALY_LIMIT_MS = 1530.0


class NonUniformSampling(ValueError):
    pass


class DisjointRanges(ValueError):
    pass


class MalformedEpisode(ValueError):
    def __init__(self, first_tick: int, second_tick: int):
        self.ticks = (first_tick, second_tick)
        super().__init__(
            f"episode started at tick {first_tick} restarted at tick {second_tick} without an end")


class UnknownNode(KeyError):
    pass


# ---------------------------------------------------------------- series
@dataclass(frozen=True)
class TimeSeries:
    label: str
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if not self.label:
            raise ValueError("time series label must be non-empty")
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.shape != v.shape or t.ndim != 1:
            raise ValueError("times and values must be 1-D and of equal length")
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError(f"{self.label}: times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_rows(cls, label: str, rows: Iterable[Sequence[float]]) -> "TimeSeries":
        rows = list(rows)
        return cls(label, np.array([r[0] for r in rows], dtype=float),
                   np.array([r[1] for r in rows], dtype=float))

    def __len__(self) -> int:
        return int(self.times.size)

    def shifted(self, dt: float) -> "TimeSeries":
        return TimeSeries(self.label, self.times + dt, self.values)

    def to_csv(self) -> str:
        lines = ["time_s,value"]
        lines += [f"{t:.6f},{v!r}" for t, v in zip(self.times.tolist(), self.values.tolist())]
        return "\n".join(lines) + "\n"


# ------------------------------------------------------------------- FFT
def fft(x: Sequence[complex] | np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT (length must be a power of two)."""
    a = np.asarray(x, dtype=complex)
    n = a.size
    if n == 0 or n & (n - 1):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    a = a[rev].copy()
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(-1, size)
        even = blocks[:, :half].copy()
        odd = blocks[:, half:] * tw
        blocks[:, :half] = even + odd
        blocks[:, half:] = even - odd
        size *= 2
    return a


@dataclass(frozen=True)
class SpectrumResult:
    frequencies: np.ndarray
    magnitudes: np.ndarray
    sample_rate: float
    window: int

    @property
    def resolution(self) -> float:
        return self.sample_rate / self.window

    def bin_of(self, freq: float) -> int:
        return int(min(max(round(freq / self.resolution), 0), self.window // 2))

    def magnitude_near(self, freq: float, spread: int = 1) -> float:
        k = self.bin_of(freq)
        lo, hi = max(k - spread, 0), min(k + spread, self.window // 2)
        return float(self.magnitudes[lo:hi + 1].max())

    def dominant(self, skip_dc: bool = True) -> float:
        mags = self.magnitudes[1:] if skip_dc else self.magnitudes
        return float(self.frequencies[int(np.argmax(mags)) + (1 if skip_dc else 0)])

    def peaks(self, count: int = 5) -> list[tuple[float, float]]:
        """Largest local maxima as (frequency, magnitude), strongest first."""
        m = self.magnitudes
        local = [k for k in range(1, m.size - 1) if m[k] >= m[k - 1] and m[k] > m[k + 1]]
        local.sort(key=lambda k: -m[k])
        return [(float(self.frequencies[k]), float(m[k])) for k in local[:count]]

    def to_csv(self) -> str:
        lines = ["freq_hz,magnitude"]
        lines += [f"{f:.6f},{v!r}" for f, v in zip(self.frequencies.tolist(),
                                                  self.magnitudes.tolist())]
        return "\n".join(lines) + "\n"


def power_spectrum(series: TimeSeries, window: int = 1024) -> SpectrumResult:
    """Single-sided amplitude spectrum of the last ``window`` samples.

    The samples are mean-removed and Hann-windowed; magnitudes are scaled
    by 2/sum(w) so that a cosine of amplitude A centred on a bin reads A.
    Off-centre tones lose up to ``HANN_SCALLOP_MAX`` dB.
    """
    if window < 2 or window & (window - 1):
        raise ValueError(f"window must be a power of two, got {window}")
    if len(series) < window:
        raise ValueError(f"{series.label}: {len(series)} samples, window needs {window}")
    t = series.times[-window:]
    x = series.values[-window:]
    dts = np.diff(t)
    step = float(np.median(dts))
    if np.max(np.abs(dts - step)) > 1e-9:
        raise NonUniformSampling(f"{series.label}: sample spacing varies by more than 1 ns")
    rate = 1.0 / step
    w = np.hanning(window + 1)[:-1]  # periodic Hann
    y = (x - x.mean()) * w
    spec = fft(y)[: window // 2 + 1]
    mags = np.abs(spec) * (2.0 / w.sum())
    mags[0] /= 2.0
    mags[-1] /= 2.0
    freqs = np.arange(window // 2 + 1) * (rate / window)
    return SpectrumResult(freqs, mags, rate, window)


def detect_fault_components(s: SpectrumResult, fault_freqs: Sequence[float] = (30.0, 60.0, 90.0),
                            normal_freq: float = 120.0, threshold: float = 0.02
                            ) -> tuple[bool, dict[float, float]]:
    """Ratio of each fault-frequency magnitude to the normal component.

    Both magnitudes are the maximum over the nearest bin and its two
    neighbours.
    """
    if normal_freq > s.frequencies[-1]:
        raise ValueError(f"spectrum stops at {s.frequencies[-1]} Hz, below {normal_freq} Hz")
    ref = s.magnitude_near(normal_freq)
    ratios = {}
    for f in fault_freqs:
        m = s.magnitude_near(f)
        ratios[f] = m / ref if ref > 0 else math.inf
    return any(r > threshold for r in ratios.values()), ratios


# -------------------------------------------------------------- residuals
def residual(twin: TimeSeries, plant: TimeSeries, label: str | None = None) -> TimeSeries:
    """plant - twin at plant timestamps, twin linearly interpolated.

    Plant samples outside the twin's time span are dropped.
    """
    if len(twin) == 0 or len(plant) == 0:
        raise DisjointRanges("empty series")
    lo = max(twin.times[0], plant.times[0])
    hi = min(twin.times[-1], plant.times[-1])
    if lo > hi:
        raise DisjointRanges(f"{twin.label} and {plant.label} do not overlap in time")
    keep = (plant.times >= lo) & (plant.times <= hi)
    t = plant.times[keep]
    ref = np.interp(t, twin.times, twin.values)
    return TimeSeries(label or f"residual:{plant.label}", t, plant.values[keep] - ref)


def threshold_detect(r: TimeSeries, threshold: float, hold: int = 1) -> float | None:
    """First time at which |r| has exceeded ``threshold`` for ``hold``
    consecutive samples."""
    if hold < 1:
        raise ValueError("hold count must be >= 1")
    run = 0
    over = np.abs(r.values) > threshold
    for i, flag in enumerate(over.tolist()):
        run = run + 1 if flag else 0
        if run >= hold:
            return float(r.times[i])
    return None


# ------------------------------------------------------ inspection timing
def inspection_episodes(trace: Iterable[Any], start: str = "camera.capture",
                        end: str = "camera.done") -> list[tuple[int, int, float]]:
    """Paired (start tick, end tick, duration ms) occurrences.

    ``trace`` holds records with ``n``, ``r``, ``names`` and ``statuses``
    (kernel trace records); records lacking the signals are skipped.  A
    trailing unmatched start is ignored, as are ends with no open start.
    """
    episodes: list[tuple[int, int, float]] = []
    open_at: tuple[int, float] | None = None
    for rec in trace:
        names = rec.names
        if start not in names or end not in names:
            continue
        st = rec.statuses[names.index(start)] == 1
        en = rec.statuses[names.index(end)] == 1
        if en and open_at is not None:
            episodes.append((open_at[0], rec.n, round((rec.r - open_at[1]) * 1000.0, 6)))
            open_at = None
        if st:
            if open_at is not None:
                raise MalformedEpisode(open_at[0], rec.n)
            open_at = (rec.n, rec.r)
    return episodes


def measure_inspection_times(trace: Iterable[Any], start: str = "camera.capture",
                             end: str = "camera.done") -> list[float]:
    """Inspection durations in ms, in episode order."""
    return [ms for _, _, ms in inspection_episodes(trace, start, end)]


def anomalous(durations: Iterable[float], limit_ms: float = ANOMALY_LIMIT_MS) -> list[int]:
    """Indices of episodes longer than the nominal band."""
    return [i for i, d in enumerate(durations) if d > limit_ms]


# ---------------------------------------------------------- localization
@dataclass(frozen=True)
class InterconnectGraph:
    """Models (name -> type) and directed signal edges between them."""

    nodes: Mapping[str, str]
    edges: tuple[tuple[str, str], ...]


CONTROLLER_TYPES = frozenset({"controller"})


def _as_graph(graph: Any) -> InterconnectGraph:
    if isinstance(graph, InterconnectGraph):
        return graph
    return graph.graph()


def localize_causes(graph: Any, failure: str, include_controllers: bool = False) -> list[str]:
    """Upstream models of ``failure`` ordered by hop distance, then name.

    Traversal follows wires and channels backwards through every model;
    controllers are software mirrored exactly by the twin, so they are not
    reported as candidates unless ``include_controllers`` is set.
    """
    g = _as_graph(graph)
    if failure not in g.nodes:
        raise UnknownNode(failure)
    preds: dict[str, set[str]] = {}
    for src, dst in g.edges:
        preds.setdefault(dst, set()).add(src)
    dist = {failure: 0}
    frontier = deque([failure])
    while frontier:
        v = frontier.popleft()
        for u in sorted(preds.get(v, ())):
            if u not in dist:
                dist[u] = dist[v] + 1
                frontier.append(u)
    out = [n for n in dist if n != failure
           and (include_controllers or g.nodes.get(n) not in CONTROLLER_TYPES)]
    return sorted(out, key=lambda n: (dist[n], n))


# -------------------------------------------------------- classification
@dataclass
class FaultReport:
    failure_node: str
    candidates: list[str]
    confirmed: str | None
    evidence: list[dict]
    detection_tick: int | None

    def __post_init__(self):
        if self.confirmed is not None and self.confirmed not in self.candidates:
            raise ValueError("confirmed cause must be one of the candidates")

    def to_dict(self) -> dict:
        return {"failureNode": self.failure_node, "candidates": list(self.candidates),
                "confirmed": self.confirmed, "evidence": self.evidence,
                "detectionTick": self.detection_tick}


@dataclass
class Diagnostics:
    """Inputs for :func:`classify_fault`.

    ``power`` maps conveyor models to plant power samples; ``torque`` maps
    robot models to per-joint (twin reference, plant measurement) pairs.
    """

    graph: Any
    failure_node: str
    detection_tick: int | None = None
    power: Mapping[str, TimeSeries] = field(default_factory=dict)
    torque: Mapping[str, Sequence[tuple[TimeSeries, TimeSeries]]] = field(default_factory=dict)
    spectrum_window: int = 1024
    ratio_threshold: float = 0.02
    residual_threshold: float = 0.5
    residual_hold: int = 10


ROBOT_TYPES = frozenset({"robot-ode", "fsm"})


def _spectrum_test(name: str, series: TimeSeries, d: Diagnostics) -> dict:
    s = power_spectrum(series, d.spectrum_window)
    flag, ratios = detect_fault_components(s, threshold=d.ratio_threshold)
    return {"model": name, "test": "spectrum", "fired": flag,
            "ratios": {f"{f:g}": r for f, r in ratios.items()},
            "peaks": [{"freqHz": f, "magnitude": m} for f, m in s.peaks(6)]}


def _residual_test(name: str, pairs: Sequence[tuple[TimeSeries, TimeSeries]],
                   d: Diagnostics) -> dict:
    joints = []
    fired_at = None
    for j, (twin, plant) in enumerate(pairs, start=1):
        r = residual(twin, plant)
        t = threshold_detect(r, d.residual_threshold, d.residual_hold)
        joints.append({"joint": j, "detectionTime": t,
                       "maxAbs": float(np.max(np.abs(r.values))) if len(r) else 0.0,
                       "final": float(r.values[-1]) if len(r) else 0.0})
        if t is not None and (fired_at is None or t < fired_at):
            fired_at = t
    return {"model": name, "test": "residual", "fired": fired_at is not None,
            "detectionTime": fired_at, "joints": joints}


def classify_fault(d: Diagnostics,
                   log: Callable[[str], None] | None = None) -> FaultReport:
    """Localize candidates, then test each in order; first hit is confirmed.

    Recovery is out of scope: ``log`` receives a note naming the suggested
    action for a confirmed cause.
    """
    g = _as_graph(d.graph)
    candidates = localize_causes(g, d.failure_node)
    evidence: list[dict] = []
    confirmed = None
    for name in candidates:
        kind = g.nodes.get(name)
        if kind == "conveyor" and name in d.power and len(d.power[name]) >= d.spectrum_window:
            ev = _spectrum_test(name, d.power[name], d)
        elif kind in ROBOT_TYPES and d.torque.get(name):
            ev = _residual_test(name, d.torque[name], d)
        else:
            continue
        evidence.append(ev)
        if ev["fired"]:
            confirmed = name
            break
    if confirmed is not None and log is not None:
        log(f"recovery: schedule maintenance for {confirmed}")
    return FaultReport(d.failure_node, candidates, confirmed, evidence, d.detection_tick)

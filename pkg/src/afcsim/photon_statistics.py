"""Photon-counting Monte Carlo of the heralded source, the memory and the detectors.

Times are in ns, rates in MHz (pump) or Hz (dark counts).  Detectors are
threshold (click) detectors: any number of photons arriving in the same
pulse slot produces one click.  The pair source is pulsed; each pulse emits
a thermal or Poissonian number of pairs.  Only pulses with at least one pair
are ever touched, so runs of 10^8 pulses stay cheap.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InsufficientCountsError, InvalidInputError

MIN_PULSES = 10_000
BLOCK_PULSES = 1 << 20
DEFAULT_BIN_WIDTH = 0.1
DEFAULT_MAX_OFFSET = 150.0
DEFAULT_PEAK_WINDOW = 1.0
DEFAULT_ACCIDENTALS = (-6, -5, -4, -3, -2, 2, 3, 4, 5, 6)
#: Accidental peaks for the echo analysis, relative to the echo offset.  The
#: k = 4 window lands 2 ns from the directly transmitted peak and is skipped.
ECHO_ACCIDENTALS = (-5, -4, -3, -2, -1, 1, 2, 3, 5, 6)


@dataclass(frozen=True)
class SourceConfig:
    """Pulsed SPDC pair source plus the two detection arms."""

    rep_rate: float = 80.0                 # MHz
    mean_pairs: float = 0.05               # per pulse
    pair_distribution: str = "thermal"
    spurious_mode_fraction: float = 0.0    # satellite pulse intensity / main pulse
    spurious_mode_delay: float = 4.2       # ns after the main pulse
    signal_path_efficiency: float = 1.0
    idler_path_efficiency: float = 1.0
    dark_rate_signal: float = 0.0          # Hz
    dark_rate_idler: float = 0.0           # Hz
    jitter_fwhm: float = 70.0              # ps, per detector
    dead_time: float = 0.0                 # ns, 0 disables

    def __post_init__(self):
        problems = []
        if not self.rep_rate > 0:
            problems.append("rep_rate must be > 0")
        if not self.mean_pairs >= 0:
            problems.append("mean_pairs must be >= 0")
        if self.pair_distribution not in ("thermal", "poisson"):
            problems.append("pair_distribution must be 'thermal' or 'poisson'")
        if not 0.0 <= self.spurious_mode_fraction < 1.0:
            problems.append("spurious_mode_fraction must lie in [0, 1)")
        for name in ("signal_path_efficiency", "idler_path_efficiency"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append(f"{name} must lie in [0, 1]")
        for name in ("dark_rate_signal", "dark_rate_idler", "jitter_fwhm", "dead_time"):
            if not getattr(self, name) >= 0:
                problems.append(f"{name} must be >= 0")
        if problems:
            raise InvalidInputError("; ".join(problems))

    @property
    def period(self) -> float:
        """Pump period in ns."""
        return 1000.0 / self.rep_rate


@dataclass(frozen=True)
class MemoryChannel:
    """What the memory does to an idler photon: pass, echo at ``storage_time`` or lose."""

    transmit_prob: float = 1.0
    echo_prob: float = 0.0
    storage_time: float = 48.0   # ns

    def __post_init__(self):
        if self.transmit_prob < 0 or self.echo_prob < 0:
            raise InvalidInputError("channel probabilities must be >= 0")
        if self.transmit_prob + self.echo_prob > 1.0 + 1e-12:
            raise InvalidInputError("transmit_prob + echo_prob must not exceed 1")
        if not self.storage_time > 0:
            raise InvalidInputError("storage_time must be > 0")


@dataclass(frozen=True, eq=False)
class DetectionRecord:
    """Time-tagged clicks of the signal and idler detectors (ns, sorted)."""

    signal: np.ndarray
    idler: np.ndarray
    duration: float     # seconds
    seed: int | None = None
    pulses: int = 0

    def __post_init__(self):
        for name in ("signal", "idler"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise InvalidInputError(f"{name} times must be 1-D")
            if arr.size and (np.any(np.diff(arr) < 0) or arr[0] < 0 or arr[-1] > self.duration * 1e9):
                raise InvalidInputError(f"{name} times must be sorted and inside [0, duration]")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def events(self) -> list[tuple[str, float]]:
        ev = [("signal", float(t)) for t in self.signal] + [("idler", float(t)) for t in self.idler]
        return sorted(ev, key=lambda e: e[1])

    def to_csv(self, path, config: dict | None = None) -> None:
        """Write ``channel,time_ns`` rows plus a JSON sidecar with run metadata."""
        with open(path, "w") as fh:
            fh.write("channel,time_ns\n")
            for ch, t in self.events:
                fh.write(f"{ch},{t!r}\n")
        meta = {"duration_s": self.duration, "seed": self.seed, "pulses": self.pulses,
                "config": config or {}}
        with open(str(path) + ".json", "w") as fh:
            json.dump(meta, fh, indent=2, sort_keys=True)

    @classmethod
    def from_csv(cls, path) -> "DetectionRecord":
        with open(str(path) + ".json") as fh:
            meta = json.load(fh)
        sig, idl = [], []
        with open(path) as fh:
            next(fh)
            for line in fh:
                ch, t = line.strip().split(",")
                (sig if ch == "signal" else idl).append(float(t))
        return cls(np.array(sig), np.array(idl), meta["duration_s"], meta["seed"], meta["pulses"])


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

def _block_rng(seed, stream, block):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream, block))))


def _p_nonzero(mu, distribution):
    if distribution == "thermal":
        return mu / (1.0 + mu)
    return -math.expm1(-mu)


def _nonzero_pairs(rng, mu, distribution, size):
    """Pair numbers conditioned on at least one pair."""
    if distribution == "thermal":
        # geometric with P(n) ~ (mu/(1+mu))^n, shifted to start at 1
        return rng.geometric(1.0 / (1.0 + mu), size)
    u = rng.random(size)
    # inverse CDF of the zero-truncated Poisson
    out = np.ones(size, dtype=np.int64)
    p0 = math.exp(-mu)
    term = mu * p0
    cdf = term / (1.0 - p0)
    k = 1
    todo = u > cdf
    while np.any(todo) and k < 200:
        k += 1
        term *= mu / k
        cdf += term / (1.0 - p0)
        out[todo] = k
        todo &= u > cdf
    return out


def _active_pulses(rng, n_pulses, p):
    """Indices of pulses (out of ``n_pulses``) that emit, via geometric gaps."""
    if p <= 0 or n_pulses == 0:
        return np.empty(0, dtype=np.int64)
    if p >= 1:
        return np.arange(n_pulses, dtype=np.int64)
    expected = n_pulses * p
    size = int(expected + 6 * math.sqrt(expected) + 16)
    idx = np.cumsum(rng.geometric(p, size)) - 1
    while idx[-1] < n_pulses:
        more = np.cumsum(rng.geometric(p, size)) + idx[-1]
        idx = np.concatenate([idx, more])
    return idx[idx < n_pulses]


def _emission(rng, n_pulses, mu, src, ch):
    """Clicks (pulse index, kind) from one pump mode over a block of pulses."""
    p = _p_nonzero(mu, src.pair_distribution)
    pulses = _active_pulses(rng, n_pulses, p)
    n = _nonzero_pairs(rng, mu, src.pair_distribution, pulses.size)
    sig = rng.binomial(n, src.signal_path_efficiency) > 0
    ei = src.idler_path_efficiency
    probs = [ch.transmit_prob * ei, ch.echo_prob * ei]
    probs.append(max(0.0, 1.0 - sum(probs)))
    routed = rng.multinomial(n, probs) if pulses.size else np.zeros((0, 3), dtype=np.int64)
    return pulses[sig], pulses[routed[:, 0] > 0], pulses[routed[:, 1] > 0]


def _apply_dead_time(times, dead):
    if dead <= 0 or times.size < 2:
        return times
    keep = np.ones(times.size, dtype=bool)
    last = times[0]
    for i in range(1, times.size):
        if times[i] - last < dead:
            keep[i] = False
        else:
            last = times[i]
    return times[keep]


def simulate_run(src: SourceConfig, mem: MemoryChannel, duration: float, seed: int,
                 stream: int = 0) -> DetectionRecord:
    """Simulate ``duration`` seconds of pulsed pair generation and detection.

    Pulses are processed in blocks of ``BLOCK_PULSES``; block ``b`` of
    ``stream`` draws from a Philox generator keyed by ``(seed, stream, b)``,
    so results do not depend on how the run is split and independent runs
    (e.g. experiment cycles) use distinct streams.
    """
    if not duration > 0:
        raise InvalidInputError("duration must be > 0")
    if seed is None:
        raise InvalidInputError("a seed is required")
    period = src.period
    n_pulses = int(round(duration * 1e9 / period))
    if n_pulses < MIN_PULSES:
        raise InvalidInputError(
            f"run covers {n_pulses} pulses; at least {MIN_PULSES} are required")
    span = duration * 1e9
    sat_mu = src.mean_pairs * src.spurious_mode_fraction
    sig_parts, idl_parts = [], []
    n_blocks = -(-n_pulses // BLOCK_PULSES)
    for b in range(n_blocks):
        rng = _block_rng(seed, stream, b)
        first = b * BLOCK_PULSES
        count = min(BLOCK_PULSES, n_pulses - first)
        modes = [(0.0, src.mean_pairs)]
        if sat_mu > 0:
            modes.append((src.spurious_mode_delay, sat_mu))
        for delay, mu in modes:
            s, it, ie = _emission(rng, count, mu, src, mem)
            base = first * period + delay
            sig_parts.append(base + s * period)
            idl_parts.append(base + it * period)
            idl_parts.append(base + ie * period + mem.storage_time)
    rng = _block_rng(seed, stream, n_blocks)
    for parts, rate in ((sig_parts, src.dark_rate_signal), (idl_parts, src.dark_rate_idler)):
        n_dark = rng.poisson(rate * duration)
        parts.append(rng.random(n_dark) * span)
    sigma = src.jitter_fwhm / 1000.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    out = []
    for parts in (sig_parts, idl_parts):
        t = np.concatenate(parts) if parts else np.empty(0)
        if sigma > 0:
            t = t + rng.normal(0.0, sigma, t.size)
        t = np.sort(t[(t >= 0) & (t <= span)])
        out.append(_apply_dead_time(t, src.dead_time))
    return DetectionRecord(out[0], out[1], duration, seed, n_pulses)


# ---------------------------------------------------------------------------
# analysis
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class CoincidenceHistogram:
    """Signal-minus-idler delay histogram; bin ``k`` is centred on ``k * bin_width``."""

    bin_width: float
    offsets: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if np.any(counts < 0):
            raise InvalidInputError("counts must be >= 0")
        if counts.shape != np.shape(self.offsets):
            raise InvalidInputError("offsets and counts must have equal length")

    @property
    def total(self) -> int:
        return int(np.sum(self.counts))

    def __add__(self, other: "CoincidenceHistogram") -> "CoincidenceHistogram":
        if self.bin_width != other.bin_width or not np.array_equal(self.offsets, other.offsets):
            raise InvalidInputError("histograms have different binning")
        return CoincidenceHistogram(self.bin_width, self.offsets, self.counts + other.counts)

    def window_counts(self, center: float, width: float) -> int:
        mask = np.abs(self.offsets - center) <= width / 2 + 1e-9 * self.bin_width
        return int(self.counts[mask].sum())

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("offset_ns,counts\n")
            for o, c in zip(self.offsets, self.counts):
                fh.write(f"{o:.6f},{int(c)}\n")


def build_histogram(rec: DetectionRecord, bin_width: float = DEFAULT_BIN_WIDTH,
                    max_offset: float = DEFAULT_MAX_OFFSET) -> CoincidenceHistogram:
    """Histogram ``signal - idler`` over every pair with ``|offset| <= max_offset``."""
    if not bin_width > 0:
        raise InvalidInputError("bin_width must be > 0")
    if not max_offset >= 0:
        raise InvalidInputError("max_offset must be >= 0")
    k = int(math.floor(max_offset / bin_width + 0.5))
    offsets = bin_width * np.arange(-k, k + 1)
    counts = np.zeros(offsets.size, dtype=np.int64)
    sig, idl = rec.signal, rec.idler
    if sig.size and idl.size:
        lo = np.searchsorted(idl, sig - max_offset, side="left")
        hi = np.searchsorted(idl, sig + max_offset, side="right")
        n = hi - lo
        total = int(n.sum())
        if total:
            owner = np.repeat(np.arange(sig.size), n)
            start = np.repeat(lo - np.concatenate([[0], np.cumsum(n)[:-1]]), n)
            partner = start + np.arange(total)
            off = sig[owner] - idl[partner]
            off = off[np.abs(off) <= max_offset]
            idx = np.floor(off / bin_width + 0.5).astype(np.int64) + k
            counts = np.bincount(np.clip(idx, 0, offsets.size - 1), minlength=offsets.size)
    return CoincidenceHistogram(bin_width, offsets, counts)


@dataclass(frozen=True)
class G2Estimate:
    value: float
    std_error: float
    nonclassical: bool
    point_nonclassical: bool = False
    peak_counts: int = 0
    accidental_mean: float = 0.0

    def __post_init__(self):
        if self.value < 0 or self.std_error < 0:
            raise InvalidInputError("g2 value and std_error must be >= 0")
        if self.nonclassical != (self.value - 2 * self.std_error > 2):
            raise InvalidInputError("nonclassical flag inconsistent with value and std_error")

    @classmethod
    def from_value(cls, value, std_error, **extra) -> "G2Estimate":
        value, std_error = float(value), float(std_error)
        return cls(value, std_error, value - 2 * std_error > 2, value > 2, **extra)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def g2_from_histogram(hist: CoincidenceHistogram, peak_window: float = DEFAULT_PEAK_WINDOW,
                      accidental_peak_indices=DEFAULT_ACCIDENTALS, *, center: float = 0.0,
                      period: float = 12.5, exclude=(0.0,)) -> G2Estimate:
    """Cross-correlation from the peak at ``center`` over accidental peaks.

    Accidental peaks sit at ``center + k * period``.  ``exclude`` lists
    offsets of other correlated peaks (e.g. the directly transmitted one)
    that no accidental window may touch.  The standard error propagates
    Poisson noise of the peak count and of the pooled accidental count.
    """
    ks = list(accidental_peak_indices)
    if len(ks) < 5:
        raise InvalidInputError("need at least 5 accidental peaks")
    if 0 in ks:
        raise InvalidInputError("accidental peaks must exclude the correlated peak (k = 0)")
    lo, hi = hist.offsets[0], hist.offsets[-1]
    centers = [center + k * period for k in ks]
    for c in centers:
        if c - peak_window / 2 < lo - hist.bin_width / 2 or c + peak_window / 2 > hi + hist.bin_width / 2:
            raise InvalidInputError(f"accidental window at {c} ns outside histogram range")
        for other in (center, *exclude):
            if abs(c - other) < peak_window:
                raise InvalidInputError(f"accidental window at {c} ns overlaps the peak at {other} ns")
    n_peak = hist.window_counts(center, peak_window)
    acc = np.array([hist.window_counts(c, peak_window) for c in centers], dtype=float)
    mean_acc = acc.mean()
    if mean_acc <= 0:
        raise InsufficientCountsError(
            "no accidental coincidences; run longer or raise the detection rates")
    value = n_peak / mean_acc
    var = n_peak / mean_acc ** 2 + n_peak ** 2 / (len(ks) * mean_acc ** 3)
    return G2Estimate.from_value(value, math.sqrt(var), peak_counts=n_peak,
                                 accidental_mean=float(mean_acc))


def echo_g2(hist: CoincidenceHistogram, storage_time: float, period: float = 12.5,
            peak_window: float = DEFAULT_PEAK_WINDOW, accidental_peak_indices=ECHO_ACCIDENTALS
            ) -> G2Estimate:
    """g2 of the retrieved photons: the peak sits at ``-storage_time``."""
    return g2_from_histogram(hist, peak_window, accidental_peak_indices, center=-storage_time,
                             period=period, exclude=(0.0,))


def nonclassicality_test(est: G2Estimate) -> bool:
    """Conservative verdict: the 2-sigma lower bound exceeds the classical limit 2."""
    return est.value - 2 * est.std_error > 2


def thermal_g2(mu: float) -> float:
    """Cross-correlation of a lossless single-mode thermal pair source."""
    if mu <= 0:
        raise InvalidInputError("mu must be > 0")
    return 1.0 + 1.0 / mu

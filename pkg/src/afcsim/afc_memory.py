"""Atomic frequency comb: construction, linear propagation and echo read-out.

Frequencies are in MHz (detuning from the comb centre), times in ns, sample
rates in GHz, comb bandwidth in GHz.  The absorber acts on the field through
``H(f) = exp(-od(f)/2 + i*phase(f))`` where ``phase`` is the Kramers-Kronig
partner of ``-od/2``, so the impulse response is causal.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import signal, special

from .errors import InvalidInputError, ResolutionError
from .spectral_dynamics import (
    DEFAULT_HOLE_WIDTH,
    DEFAULT_SPIN_BROADENING,
    HoleDecayModel,
    LevelStructure,
    SpectralGrid,
    _burn,
    _check_resolution,
    _deposit_positions,
    _khz_per_g_to_mhz,
    lorentzian,
    relax,
)

#: Storage time used in the experiment and the matching tooth spacing.
PAPER_STORAGE_TIME_NS = 48.0
PAPER_DELTA_MHZ = 1000.0 / PAPER_STORAGE_TIME_NS
PAPER_BANDWIDTH_GHZ = 6.0
PAPER_FINESSE = 2.0
#: Unburned line OD; chosen so the comb reaches the ~1 % efficiency read off
#: the prepared trace.
PAPER_PEAK_OD = 2.0
#: Trough OD that puts the untapered F=2 square comb at exactly 1 % efficiency.
PAPER_BACKGROUND_OD = 1.2856866483
#: Edge loss of tooth contrast that brings the spectrum-weighted efficiency
#: down to 0.3 %.
PAPER_TAPER = 1.2270216825

MIN_SAMPLES_PER_TOOTH = 32
MIN_SAMPLES_PER_PERIOD = 256
DEFAULT_MAX_SAMPLES = 1 << 21
DEFAULT_PAD_FACTOR = 8
DEFAULT_ECHO_WINDOW_NS = 2.0
MAX_ECHO_ORDER = 3


@dataclass(frozen=True)
class CombSpec:
    """Parametric atomic frequency comb.

    ``peak_od`` is the total OD on a tooth, ``background_od`` the OD left in
    the troughs; the tooth contrast is their difference.  ``taper`` linearly
    reduces the contrast towards the band edges (``taper=1`` leaves no comb
    at the edges), modelling the drop of pump intensity at large detuning.
    """

    delta: float = PAPER_DELTA_MHZ
    finesse: float = PAPER_FINESSE
    bandwidth: float = PAPER_BANDWIDTH_GHZ
    peak_od: float = PAPER_PEAK_OD
    background_od: float = PAPER_BACKGROUND_OD
    tooth_shape: str = "square"
    taper: float = 0.0
    center: float = 0.0

    def __post_init__(self):
        problems = []
        if not self.delta > 0:
            problems.append("delta must be > 0")
        if not self.finesse > 1:
            problems.append("finesse must be > 1")
        if not self.bandwidth * 1000.0 >= self.delta:
            problems.append("bandwidth must be >= delta")
        if not self.peak_od >= self.background_od >= 0:
            problems.append("need peak_od >= background_od >= 0")
        if self.tooth_shape not in ("square", "gaussian"):
            problems.append("tooth_shape must be 'square' or 'gaussian'")
        if self.taper < 0:
            problems.append("taper must be >= 0")
        if problems:
            raise InvalidInputError("; ".join(problems))

    @property
    def gamma(self) -> float:
        """Tooth width (MHz)."""
        return self.delta / self.finesse

    @property
    def contrast(self) -> float:
        return self.peak_od - self.background_od

    @property
    def storage_time(self) -> float:
        """First-echo time 1/delta in ns."""
        return 1000.0 / self.delta

    @property
    def n_teeth(self) -> int:
        return int(math.floor(self.bandwidth * 1000.0 / self.delta + 1e-9))


def paper_comb(**overrides) -> CombSpec:
    params = dict(taper=PAPER_TAPER)
    params.update(overrides)
    return CombSpec(**params)


def _square_profile(x, gamma, sigma, step):
    if sigma > 0:
        s = math.sqrt(2.0) * sigma
        return 0.5 * (special.erf((x + gamma / 2) / s) - special.erf((x - gamma / 2) / s))
    lo = np.maximum(x - step / 2, -gamma / 2)
    hi = np.minimum(x + step / 2, gamma / 2)
    return np.clip(hi - lo, 0.0, None) / step


def build_comb(spec: CombSpec, samples_per_period: int | None = None,
               max_samples: int = DEFAULT_MAX_SAMPLES, edge_sigma: float | None = None
               ) -> SpectralGrid:
    """Sample the comb optical depth on a uniform grid.

    Teeth sit at ``(m + 1/2) * delta`` from the lower band edge, so the band
    holds ``spec.n_teeth`` whole periods.  Square teeth get Gaussian-rounded
    edges of width ``edge_sigma`` (default ``min(delta/140, gamma/8)``); the
    rounding costs < 0.2 % of echo efficiency but makes the comb's echo train
    decay fast enough for the transform window.  ``edge_sigma=0`` gives
    sharp, cell-averaged teeth.
    """
    gamma = spec.gamma
    if samples_per_period is None:
        samples_per_period = max(MIN_SAMPLES_PER_PERIOD,
                                 int(math.ceil(MIN_SAMPLES_PER_TOOTH * spec.finesse)))
    k = int(samples_per_period)
    n_teeth = spec.n_teeth
    n = n_teeth * k
    if n > max_samples:
        raise ResolutionError(
            f"comb needs {n} samples ({k} per period x {n_teeth} teeth) "
            f"but the budget is {max_samples}", required_samples=n)
    step = spec.delta / k
    band = n_teeth * spec.delta
    det = spec.center - band / 2 + (np.arange(n) + 0.5) * step
    x = np.mod(det - spec.center + band / 2, spec.delta) - spec.delta / 2
    if edge_sigma is None:
        edge_sigma = min(spec.delta / 140.0, gamma / 8.0)
    if spec.tooth_shape == "square":
        profile = sum(_square_profile(x + j * spec.delta, gamma, edge_sigma, step)
                      for j in (-1, 0, 1))
    else:
        profile = sum(np.exp(-4 * math.log(2) * ((x + j * spec.delta) / gamma) ** 2)
                      for j in (-2, -1, 0, 1, 2))
    edge_pos = np.abs(det - spec.center) / (band / 2)
    contrast = spec.contrast * np.clip(1.0 - spec.taper * edge_pos, 0.0, None)
    od = spec.peak_od - contrast * (1.0 - profile)
    return SpectralGrid(det, np.clip(od, 0.0, None))


# ---------------------------------------------------------------------------
# comb preparation by swept optical pumping
# ---------------------------------------------------------------------------

def square_modulation(period: float, finesse: float = PAPER_FINESSE, offset: float = 0.0
                      ) -> Callable:
    """Pump intensity pattern: dark over the teeth, full power in the troughs.

    Teeth of width ``period/finesse`` are centred at ``offset + (m+1/2)*period``.
    """
    tooth = period / finesse

    def pattern(nu):
        x = np.mod(np.asarray(nu) - offset, period) - period / 2
        return (np.abs(x) > tooth / 2).astype(float)

    return pattern


def uniform_modulation(level: float = 1.0) -> Callable:
    def pattern(nu):
        return np.full(np.shape(nu), float(level))

    return pattern


def comb_from_pumping(line: SpectralGrid, sweep_bandwidth: float, modulation: Callable,
                      levels: LevelStructure, decay: HoleDecayModel | None = None, *,
                      pump_strength: float = 5.0, pump_width: float = DEFAULT_HOLE_WIDTH,
                      branching: float = 1.0, spin_broadening: float = DEFAULT_SPIN_BROADENING,
                      elapsed: float = 0.0, center: float = 0.0) -> SpectralGrid:
    """Burn a comb by sweeping an intensity-modulated pump across the line.

    The swept pump deposits a dose equal to the modulation pattern convolved
    with the hole lineshape.  Each dose point burns exactly as in
    :func:`~afcsim.spectral_dynamics.burn_hole`, including side-hole
    cross-pumping through the superhyperfine structure, so comb periods that
    match a side-hole splitting deepen the troughs.  When ``decay`` is given
    the result relaxes for ``elapsed`` seconds towards ``line``.
    """
    half = sweep_bandwidth * 500.0
    if not (line.contains(center - half) and line.contains(center + half)):
        raise InvalidInputError(
            f"sweep window {center - half}..{center + half} MHz not inside the line support")
    if pump_strength < 0 or not 0.0 <= branching <= 1.0:
        raise InvalidInputError("pump_strength must be >= 0 and branching in [0, 1]")
    _check_resolution(line, pump_width, "pump_width")
    step = line.step
    shifts = [_khz_per_g_to_mhz(sp.slope_excited, levels.field) for sp in levels.species]
    margin = int(math.ceil((max(shifts, default=0.0) + 20 * pump_width) / step))
    ext = line.detuning[0] + step * np.arange(-margin, len(line) + margin)
    window = (np.abs(ext - center) <= half).astype(float)
    intensity = np.asarray(modulation(ext), dtype=float) * window
    if np.any(intensity < 0):
        raise InvalidInputError("modulation must be non-negative")
    half_k = min(len(ext), int(math.ceil(100 * pump_width / step)))
    kernel = lorentzian(step * np.arange(-half_k, half_k + 1), pump_width)
    dose_ext = signal.fftconvolve(intensity, kernel / kernel.sum(), mode="same")
    dose_ext = np.clip(dose_ext, 0.0, None)

    def dose(nu):
        return np.interp(nu, ext, dose_ext, left=0.0, right=0.0)

    total = dose(line.detuning)
    for sp, shift in zip(levels.species, shifts):
        total = total + 0.5 * sp.weight * (dose(line.detuning + shift) + dose(line.detuning - shift))
    r = pump_strength * total
    burned = branching * r / (1.0 + r)
    positions = [(p, w) for p, w in _deposit_positions(levels) if abs(p) < line.span / 2]
    out = _burn(line, burned, positions, spin_broadening)
    if decay is not None and elapsed > 0:
        out = relax(out, line, elapsed, decay)
    return out


# ---------------------------------------------------------------------------
# linear response
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Complex field response ``amplitude * exp(i*phase)`` on a uniform axis (MHz)."""

    freq_axis: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray

    @property
    def step(self) -> float:
        return (self.freq_axis[-1] - self.freq_axis[0]) / (self.freq_axis.size - 1)

    @property
    def response(self) -> np.ndarray:
        return self.amplitude * np.exp(1j * self.phase)

    def impulse_response(self) -> tuple[np.ndarray, np.ndarray]:
        """``(t_ns, h)`` with t running from -T/2 to T/2, T = 1/step."""
        n = self.freq_axis.size
        h = np.fft.ifft(self.response)
        t = np.fft.fftfreq(n, d=self.step) * 1000.0
        return np.fft.fftshift(t), np.fft.fftshift(h)


def _padded_od(od, pad_factor):
    """Embed ``od`` in a ``pad_factor``-times longer circular array.

    The padding holds the edge values and blends between them with a raised
    cosine across the wrap-around point, so the periodic extension is smooth
    and a flat absorber stays exactly flat.
    """
    n = od.size
    m = pad_factor * n
    start = (m - n) // 2
    full = np.empty(m)
    full[start:start + n] = od
    gap = m - n
    w = 0.5 * (1.0 - np.cos(np.pi * (np.arange(gap) + 0.5) / gap))
    fill = od[-1] * (1.0 - w) + od[0] * w
    tail = m - start - n
    full[start + n:] = fill[:tail]
    full[:start] = fill[tail:]
    return full, start


def transfer_function(grid: SpectralGrid, pad_factor: int = DEFAULT_PAD_FACTOR) -> TransferFunction:
    """Causal transfer function of the absorber described by ``grid``.

    ``log H = -od/2 + i*phase``; the phase comes from folding the cepstrum
    of ``-od/2`` onto non-negative times (discrete Hilbert transform) over a
    ``pad_factor``-times padded axis.
    """
    if pad_factor < 1:
        raise InvalidInputError("pad_factor must be >= 1")
    full, start = _padded_od(grid.od, pad_factor)
    m = full.size
    ceps = np.fft.ifft(-0.5 * full)
    ceps[1:(m + 1) // 2] *= 2.0
    ceps[m // 2 + 1:] = 0.0
    log_h = np.fft.fft(ceps)
    axis = grid.detuning[0] + grid.step * (np.arange(m) - start)
    return TransferFunction(axis, np.exp(-0.5 * full), log_h.imag)


@dataclass(frozen=True, eq=False)
class Pulse:
    """Complex field envelope sampled at ``sample_rate`` GHz.

    Sample ``k`` sits at ``t_start + k / sample_rate`` ns; the envelope is
    referenced to ``carrier_detuning`` MHz from the comb centre.
    """

    samples: np.ndarray
    sample_rate: float
    carrier_detuning: float = 0.0
    t_start: float = 0.0

    def __post_init__(self):
        x = np.array(self.samples, dtype=complex)
        if x.ndim != 1 or x.size < 2:
            raise InvalidInputError("pulse samples must be a 1-D array")
        if not self.sample_rate > 0:
            raise InvalidInputError("sample_rate must be > 0")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("pulse samples must be finite")
        x.flags.writeable = False
        object.__setattr__(self, "samples", x)

    @classmethod
    def gaussian(cls, fwhm: float, sample_rate: float, n: int, carrier_detuning: float = 0.0,
                 t_start: float | None = None, t_center: float = 0.0) -> "Pulse":
        """Transform-limited Gaussian with intensity FWHM ``fwhm`` ns."""
        if t_start is None:
            t_start = -n / sample_rate / 4
        t = t_start + np.arange(n) / sample_rate
        env = np.exp(-2 * math.log(2) * ((t - t_center) / fwhm) ** 2)
        return cls(env.astype(complex), sample_rate, carrier_detuning, t_start)

    @property
    def times(self) -> np.ndarray:
        return self.t_start + np.arange(self.samples.size) / self.sample_rate

    @property
    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2) / self.sample_rate)

    def frequencies(self) -> np.ndarray:
        """Absolute detuning (MHz) of each FFT bin."""
        return self.carrier_detuning + np.fft.fftfreq(self.samples.size, d=1.0 / self.sample_rate) * 1000.0

    def spectral_band(self, fraction: float = 0.999) -> tuple[float, float]:
        """Detuning interval (MHz) holding ``fraction`` of the pulse energy."""
        power = np.abs(np.fft.fft(self.samples)) ** 2
        if power.sum() == 0:
            return self.carrier_detuning, self.carrier_detuning
        freqs = self.frequencies()
        order = np.argsort(freqs)
        cum = np.cumsum(power[order])
        cum /= cum[-1]
        lo = freqs[order][np.searchsorted(cum, (1 - fraction) / 2)]
        hi = freqs[order][min(np.searchsorted(cum, (1 + fraction) / 2), cum.size - 1)]
        return float(lo), float(hi)

    def bandwidth(self, fraction: float = 0.999) -> float:
        lo, hi = self.spectral_band(fraction)
        return hi - lo

    def check_nyquist(self) -> None:
        lo, hi = self.spectral_band()
        half_width = max(abs(lo - self.carrier_detuning), abs(hi - self.carrier_detuning))
        if not self.sample_rate * 1000.0 > 2 * (half_width + abs(self.carrier_detuning)):
            raise InvalidInputError(
                f"sample rate {self.sample_rate} GHz below Nyquist margin for a pulse "
                f"extending {half_width:.1f} MHz around a {self.carrier_detuning} MHz carrier")

    def scaled(self, factor: complex) -> "Pulse":
        return Pulse(self.samples * factor, self.sample_rate, self.carrier_detuning, self.t_start)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time_ns,re,im\n")
            for t, x in zip(self.times, self.samples):
                fh.write(f"{float(t)!r},{float(x.real)!r},{float(x.imag)!r}\n")

    @classmethod
    def from_csv(cls, path, carrier_detuning: float = 0.0) -> "Pulse":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        dt = (t[-1] - t[0]) / (t.size - 1)
        return cls(data[:, 1] + 1j * data[:, 2], 1.0 / dt, carrier_detuning, float(t[0]))


def pulse_for(h: TransferFunction, fwhm: float, carrier_detuning: float = 0.0,
              t_center: float = 0.0) -> Pulse:
    """Gaussian pulse whose FFT bins coincide with the samples of ``h``.

    The carrier snaps to the nearest axis sample so no interpolation of the
    response is needed in :func:`propagate`.
    """
    n = h.freq_axis.size
    idx = int(round((carrier_detuning - h.freq_axis[0]) / h.step))
    idx = min(max(idx, 0), n - 1)
    sample_rate = n * h.step / 1000.0
    return Pulse.gaussian(fwhm, sample_rate, n, float(h.freq_axis[idx]), t_center=t_center)


def propagate(pulse: Pulse, h: TransferFunction) -> Pulse:
    """Filter ``pulse`` through ``h`` in the frequency domain."""
    pulse.check_nyquist()
    freqs = pulse.frequencies()
    pos = (freqs - h.freq_axis[0]) / h.step
    idx = np.rint(pos).astype(np.int64)
    aligned = (np.all(np.abs(pos - idx) < 1e-6) and idx.min() >= 0
               and idx.max() < h.freq_axis.size)
    spectrum = np.fft.fft(pulse.samples)
    if aligned:
        response = h.response[idx]
    else:
        power = np.abs(spectrum) ** 2
        outside = (freqs < h.freq_axis[0]) | (freqs > h.freq_axis[-1])
        if power[outside].sum() > 1e-9 * power.sum():
            raise InvalidInputError("pulse spectrum extends beyond the transfer-function axis")
        log_amp = np.interp(freqs, h.freq_axis, np.log(np.maximum(h.amplitude, 1e-300)))
        phase = np.interp(freqs, h.freq_axis, h.phase)
        response = np.exp(log_amp + 1j * phase)
    out = np.fft.ifft(spectrum * response)
    return Pulse(out, pulse.sample_rate, pulse.carrier_detuning, pulse.t_start)


# ---------------------------------------------------------------------------
# efficiencies
# ---------------------------------------------------------------------------

def analytic_efficiency(spec: CombSpec) -> float:
    """First-order forward-recall efficiency of a uniform comb.

    ``(d/F)^2 exp(-d/F) * dephasing * exp(-d0)`` with ``d`` the tooth
    contrast; the dephasing factor is ``sinc^2(pi/F)`` for square teeth and
    ``exp(-7/F^2)`` for Gaussian teeth.
    """
    dt = spec.contrast / spec.finesse
    if spec.tooth_shape == "square":
        dephasing = np.sinc(1.0 / spec.finesse) ** 2
    else:
        dephasing = math.exp(-7.0 / spec.finesse ** 2)
    return float(dt ** 2 * math.exp(-dt) * dephasing * math.exp(-spec.background_od))


def optimal_efficiency_limit() -> float:
    """Supremum of the first-order efficiency, ``4/e^2`` at ``d/F = 2``."""
    return 4.0 * math.exp(-2.0)


@dataclass(frozen=True, eq=False)
class PeriodAnalysis:
    centers: np.ndarray       # MHz, centre of each comb period
    mean_od: np.ndarray       # period-averaged OD
    harmonics: np.ndarray     # complex Fourier coefficients, shape (periods, orders)

    def efficiency(self, order: int = 1) -> np.ndarray:
        """Local echo efficiency of the given order for each period."""
        a = _echo_amplitudes(self.harmonics, order)
        return np.abs(a[:, order]) ** 2 * np.exp(-self.mean_od)

    @property
    def transmission(self) -> np.ndarray:
        """Zero-delay (directly transmitted) intensity fraction per period."""
        return np.exp(-self.mean_od)


def _echo_amplitudes(harmonics, order):
    """Power-series coefficients of ``exp(-sum_n c_n z^n)`` up to ``order``."""
    periods = harmonics.shape[0]
    g = np.zeros((periods, order + 1), dtype=complex)
    g[:, 1:] = -harmonics[:, :order]
    a = np.zeros_like(g)
    a[:, 0] = 1.0
    for m in range(1, order + 1):
        acc = np.zeros(periods, dtype=complex)
        for k in range(1, m + 1):
            acc += k * g[:, k] * a[:, m - k]
        a[:, m] = acc / m
    return a


def period_analysis(grid: SpectralGrid, delta: float, orders: int = MAX_ECHO_ORDER) -> PeriodAnalysis:
    """Split ``grid`` into whole comb periods and Fourier-analyse each one."""
    k = int(round(delta / grid.step))
    if k < 4 or abs(k * grid.step - delta) > 1e-6 * delta:
        raise InvalidInputError(
            f"grid step {grid.step} MHz does not divide the tooth spacing {delta} MHz")
    periods = len(grid) // k
    if periods < 1:
        raise InvalidInputError("grid shorter than one comb period")
    block = grid.od[:periods * k].reshape(periods, k)
    coeffs = np.fft.fft(block, axis=1) / k
    harmonics = coeffs[:, 1:orders + 1]
    centers = grid.detuning[:periods * k].reshape(periods, k).mean(axis=1)
    return PeriodAnalysis(centers, coeffs[:, 0].real, harmonics)


# ---------------------------------------------------------------------------
# dipole-sum oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DipoleEnsemble:
    """Collective single excitation: detunings (MHz), amplitudes and positions."""

    detunings: np.ndarray
    amplitudes: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        det = np.asarray(self.detunings, dtype=float)
        amp = np.asarray(self.amplitudes, dtype=complex)
        pos = np.asarray(self.positions, dtype=float)
        if not det.size == amp.size == pos.size:
            raise InvalidInputError("detunings, amplitudes and positions must have equal length")
        if det.size == 0:
            raise InvalidInputError("empty ensemble")
        norm = np.sum(np.abs(amp) ** 2)
        if abs(norm - 1.0) > 1e-9:
            raise InvalidInputError(f"amplitudes must be normalised (sum |c|^2 = {norm})")
        object.__setattr__(self, "detunings", det)
        object.__setattr__(self, "amplitudes", amp)
        object.__setattr__(self, "positions", pos)

    @property
    def count(self) -> int:
        return self.detunings.size

    @classmethod
    def uniform(cls, detunings, rng=None) -> "DipoleEnsemble":
        det = np.asarray(detunings, dtype=float)
        n = det.size
        if n == 0:
            raise InvalidInputError("empty ensemble")
        rng = np.random.default_rng(rng)
        return cls(det, np.full(n, 1.0 / math.sqrt(n)), rng.random(n))

    @classmethod
    def from_grid(cls, grid: SpectralGrid, n: int, rng=None, floor: float | None = None
                  ) -> "DipoleEnsemble":
        """Draw ``n`` detunings by inverse CDF from ``od - floor`` on ``grid``.

        ``floor`` defaults to the grid minimum, so a uniform background (which
        only absorbs) does not enter the rephasing ensemble.
        """
        rng = np.random.default_rng(rng)
        floor = grid.od.min() if floor is None else floor
        weight = np.clip(grid.od - floor, 0.0, None)
        if weight.sum() <= 0:
            raise InvalidInputError("grid has no absorption above the floor")
        cdf = np.concatenate([[0.0], np.cumsum(weight)])
        cdf /= cdf[-1]
        edges = np.concatenate([grid.detuning - grid.step / 2, [grid.detuning[-1] + grid.step / 2]])
        det = np.interp(rng.random(n), cdf, edges)
        return cls.uniform(det, rng)


def dipole_sum_oracle(ensemble: DipoleEnsemble, time_axis, chunk: int = 64) -> np.ndarray:
    """Normalised re-emission intensity ``|sum_j c_j exp(i 2 pi delta_j t)|^2``.

    Normalised to ``(sum_j |c_j|)^2`` so a fully rephased ensemble gives 1.
    ``time_axis`` is in ns.
    """
    t = np.atleast_1d(np.asarray(time_axis, dtype=float))
    c = ensemble.amplitudes
    omega = 2e-3 * math.pi * ensemble.detunings
    out = np.empty(t.size)
    for s in range(0, t.size, chunk):
        block = t[s:s + chunk]
        out[s:s + chunk] = np.abs(np.exp(1j * np.outer(block, omega)) @ c) ** 2
    return out / np.sum(np.abs(c)) ** 2


def oracle_rephasing(spec: CombSpec, n: int = 100_000, rng=None, grid: SpectralGrid | None = None
                     ) -> float:
    """Relative rephased intensity at ``t = 1/delta`` for an ensemble drawn from the comb."""
    grid = build_comb(spec) if grid is None else grid
    ens = DipoleEnsemble.from_grid(grid, n, rng, floor=spec.background_od)
    return float(dipole_sum_oracle(ens, [spec.storage_time])[0])


def oracle_efficiency(spec: CombSpec, n: int = 100_000, rng=None) -> float:
    """First-echo efficiency with the dephasing factor taken from the dipole sum."""
    dt = spec.contrast / spec.finesse
    return dt ** 2 * math.exp(-dt) * math.exp(-spec.background_od) * oracle_rephasing(spec, n, rng)


# ---------------------------------------------------------------------------
# echo read-out
# ---------------------------------------------------------------------------

@dataclass
class EchoResult:
    transmitted_fraction: float
    echo_efficiencies: list[tuple[int, float, float]] = field(default_factory=list)
    absorbed_lost: float = 0.0
    #: Measured intensity maxima inside each echo window (ns).  These lead the
    #: nominal ``m/delta`` slightly when the absorption band is finite, because
    #: of the anomalous dispersion at the band edges.
    peak_times: list[float] = field(default_factory=list)

    def efficiency(self, order: int = 1) -> float:
        for m, _, eta in self.echo_efficiencies:
            if m == order:
                return eta
        raise KeyError(order)

    def peak_time(self, order: int = 1) -> float:
        for (m, _, _), t in zip(self.echo_efficiencies, self.peak_times):
            if m == order:
                return t
        raise KeyError(order)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EchoResult":
        data = json.loads(text)
        data["echo_efficiencies"] = [tuple(e) for e in data["echo_efficiencies"]]
        return cls(**data)


def _peak_time(t, p):
    i = int(np.argmax(p))
    if 0 < i < p.size - 1:
        y0, y1, y2 = p[i - 1:i + 2]
        curv = y0 - 2 * y1 + y2
        if curv < 0:
            return float(t[i] + 0.5 * (y0 - y2) / curv * (t[1] - t[0]))
    return float(t[i])


def echo_analysis(out: Pulse, delta: float, window: float = DEFAULT_ECHO_WINDOW_NS, *,
                  input_energy: float, max_order: int = MAX_ECHO_ORDER) -> EchoResult:
    """Integrate the output intensity around ``t = 0`` and ``t = m/delta``.

    ``window`` is the half-width (ns) of every integration window.  The
    input pulse is assumed centred at ``t = 0``.  Reported echo times are the
    window centres ``m/delta``; the observed maxima go to ``peak_times``.
    """
    tau = 1000.0 / delta
    if window > tau / 2:
        raise InvalidInputError(
            f"window half-width {window} ns exceeds half the echo spacing {tau / 2:.3f} ns")
    if input_energy <= 0:
        raise InvalidInputError("input_energy must be > 0")
    t = out.times
    if t[-1] - max(t[0], -window) < 2 * tau:
        raise InvalidInputError("output record shorter than two echo periods")
    power = np.abs(out.samples) ** 2 / out.sample_rate

    def window_energy(center):
        mask = np.abs(t - center) <= window
        return float(power[mask].sum()), mask

    transmitted, _ = window_energy(0.0)
    echoes, peaks = [], []
    for m in range(1, max_order + 1):
        center = m * tau
        if center + window > t[-1]:
            break
        e, mask = window_energy(center)
        peaks.append(_peak_time(t[mask], power[mask]) if e > 0 else center)
        echoes.append((m, center, e / input_energy))
    trans = transmitted / input_energy
    lost = 1.0 - trans - sum(e for _, _, e in echoes)
    return EchoResult(trans, echoes, lost, peaks)


def numeric_efficiency(spec: CombSpec, pulse_fwhm: float | None = None,
                       window: float = DEFAULT_ECHO_WINDOW_NS) -> EchoResult:
    """Propagate a Gaussian pulse through ``build_comb(spec)`` and read the echoes.

    The default pulse fills about half the comb bandwidth so that nearly all
    of its spectrum sees the comb.
    """
    grid = build_comb(spec)
    h = transfer_function(grid)
    if pulse_fwhm is None:
        pulse_fwhm = 2.0 / spec.bandwidth
    pulse = pulse_for(h, pulse_fwhm, spec.center)
    return echo_analysis(propagate(pulse, h), spec.delta, window, input_energy=pulse.energy)


def efficiency_sweep(spec: CombSpec, peak_ods, pulse_fwhm: float | None = None
                     ) -> list[tuple[float, float, float]]:
    """``(peak_od, numeric, analytic)`` first-echo efficiency for each peak OD."""
    out = []
    for d in peak_ods:
        s = replace(spec, peak_od=float(d))
        eta = numeric_efficiency(s, pulse_fwhm).efficiency(1)
        out.append((float(d), eta, analytic_efficiency(s)))
    return out
